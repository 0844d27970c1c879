use std::fs;
use std::path::Path;

use spac_core::agent::Mode;
use spac_core::bench::commands::{list_checkpoints, CONFIG_ECHO, LOCK_FILE, METRICS_FILE, NAN_DUMP};
use spac_core::bench::{
    checkpoint, eval_cmd, gen_data, inspect_checkpoint, load_idx, read_metrics, train_cmd, DatasetSpec, EvalOptions,
    Resume, RunConfig, Split,
};
use spac_core::Error;

fn tiny(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run_id = "tiny".into();
    cfg.output_dir = Some(dir.to_path_buf());
    cfg.steps = 12;
    cfg.checkpoint_every = 5;
    cfg.keep_checkpoints = 10;
    cfg.data.image_size = 12;
    cfg.data.train_pairs = 3;
    cfg.data.eval_pairs = 3;
    cfg.data.atlases = 2;
    cfg.train.plan_dim = 6;
    cfg.train.batch_size = 4;
    cfg.train.pool_capacity = 32;
    cfg.train.horizon = 3;
    cfg.train.seed = 9;
    cfg
}

fn eval_opts(dir: &Path, horizon: usize) -> EvalOptions {
    EvalOptions {
        horizon,
        output_dir: dir.to_path_buf(),
        data: None,
        pgm_pairs: 1,
        deterministic: true,
    }
}

#[test]
fn zero_budget_writes_echo_and_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.steps = 0;
    let out = train_cmd(&cfg, &Resume::Fresh).unwrap();
    assert_eq!(out.global_step, 0);
    let mut names: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["checkpoints", CONFIG_ECHO]);
    assert_eq!(list_checkpoints(tmp.path()).unwrap(), vec![out.last_checkpoint.clone()]);
    let echo = fs::read_to_string(tmp.path().join(CONFIG_ECHO)).unwrap();
    assert_eq!(RunConfig::parse_text(&echo).unwrap(), cfg);
    assert!(echo.contains("lr_alpha = ") && echo.contains("max_step_disp = auto"));
}

#[test]
fn training_writes_rows_checkpoints_and_prunes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.keep_checkpoints = 2;
    cfg.eval_every = 6;
    let out = train_cmd(&cfg, &Resume::Fresh).unwrap();
    assert_eq!(out.global_step, 12);
    let ckpts = list_checkpoints(tmp.path()).unwrap();
    assert_eq!(ckpts.len(), 2);
    assert_eq!(ckpts[1], out.last_checkpoint);
    assert!(ckpts[0].ends_with("step-000000010.ckpt"));
    assert!(!tmp.path().join(LOCK_FILE).exists());

    let rows = read_metrics(&tmp.path().join(METRICS_FILE)).unwrap();
    let train: Vec<_> = rows.iter().filter(|r| r.kind == "train").collect();
    assert_eq!(train.len(), 12);
    for (i, r) in train.iter().enumerate() {
        assert_eq!(r.global_step, i as u64 + 1);
        assert!((1..=3).contains(&r.t));
        assert_eq!(r.wall_clock, 0.0);
        assert!(r.dice.is_finite() && r.ncc.is_finite() && r.alpha > 0.0);
    }
    // the pool reaches one batch after four steps
    assert!(train[..3].iter().all(|r| r.q_loss == 0.0 && r.reg_loss == 0.0));
    assert!(train[4..].iter().all(|r| r.q_loss != 0.0 && r.reg_loss != 0.0));
    let means = rows.iter().filter(|r| r.kind == "eval_mean").count();
    assert_eq!(means, 2 * 4);
}

#[test]
fn no_rl_rows_have_zero_rl_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.train.mode = Mode::NoRl;
    train_cmd(&cfg, &Resume::Fresh).unwrap();
    let rows = read_metrics(&tmp.path().join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert_eq!((r.q_loss, r.planner_loss, r.alpha_loss), (0.0, 0.0, 0.0));
    }
    assert!(rows.iter().any(|r| r.reg_loss != 0.0));
    let alpha0 = rows[0].alpha;
    assert!(rows.iter().all(|r| r.alpha == alpha0));
}

#[test]
fn runs_are_bitwise_repeatable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out_a = train_cmd(&tiny(a.path()), &Resume::Fresh).unwrap();
    let out_b = train_cmd(&tiny(b.path()), &Resume::Fresh).unwrap();
    let read = |p: &Path| fs::read(p).unwrap();
    assert_eq!(read(&a.path().join(METRICS_FILE)), read(&b.path().join(METRICS_FILE)));
    // the echo names the output directory, so compare checkpoints through a re-encode
    let mut ca = checkpoint::load(&out_a.last_checkpoint).unwrap();
    let cb = checkpoint::load(&out_b.last_checkpoint).unwrap();
    ca.config.output_dir = cb.config.output_dir.clone();
    assert_eq!(checkpoint::encode(&ca).unwrap(), checkpoint::encode(&cb).unwrap());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (full, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny(full.path());
    train_cmd(&cfg, &Resume::Fresh).unwrap();

    let mut first = tiny(split.path());
    first.steps = 7;
    train_cmd(&first, &Resume::Fresh).unwrap();
    // a partial metrics tail beyond the checkpoint is discarded on resume
    let ck5 = list_checkpoints(split.path()).unwrap()[1].clone();
    assert!(ck5.ends_with("step-000000005.ckpt"));
    let second = tiny(split.path());
    let out = train_cmd(&second, &Resume::From(ck5)).unwrap();
    assert_eq!(out.global_step, 12);
    assert_eq!(
        fs::read(full.path().join(METRICS_FILE)).unwrap(),
        fs::read(split.path().join(METRICS_FILE)).unwrap()
    );

    let latest = tiny(split.path());
    let mut more = latest.clone();
    more.steps = 14;
    train_cmd(&more, &Resume::Latest).unwrap();
    assert_eq!(read_metrics(&split.path().join(METRICS_FILE)).unwrap().len(), 14);
}

#[test]
fn resume_refuses_a_changed_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let out = train_cmd(&cfg, &Resume::Fresh).unwrap();
    let mut changed = cfg.clone();
    changed.train.gamma = 0.5;
    changed.steps = 20;
    let err = train_cmd(&changed, &Resume::From(out.last_checkpoint)).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("gamma: 0.99 != 0.5")), "{err}");
}

#[test]
fn locked_or_unwritable_output_is_a_startup_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    fs::write(tmp.path().join(LOCK_FILE), "1\n").unwrap();
    assert!(matches!(train_cmd(&cfg, &Resume::Fresh), Err(Error::Usage(m)) if m.contains("locked")));

    let file = tmp.path().join("plain-file");
    fs::write(&file, "").unwrap();
    let mut blocked = cfg.clone();
    blocked.output_dir = Some(file.join("run"));
    assert!(matches!(train_cmd(&blocked, &Resume::Fresh), Err(Error::Usage(_))));
}

#[test]
fn exploding_losses_abort_with_a_batch_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.steps = 40;
    cfg.train.lr_critic = 1e30;
    cfg.train.lr_planner = 1e30;
    cfg.train.lr_reg = 1e30;
    let err = train_cmd(&cfg, &Resume::Fresh).unwrap_err();
    assert!(matches!(&err, Error::NonFinite(m) if m.contains(NAN_DUMP)), "{err}");
    let dump = fs::read_to_string(tmp.path().join(NAN_DUMP)).unwrap();
    assert!(dump.contains("batch = [") && dump.contains("reward"), "{dump}");
    assert!(!tmp.path().join(LOCK_FILE).exists());
}

#[test]
fn eval_rows_and_summary_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_cmd(&tiny(tmp.path()), &Resume::Fresh).unwrap();
    let edir = tmp.path().join("eval");
    let s = eval_cmd(&out.last_checkpoint, &eval_opts(&edir, 20)).unwrap();
    assert_eq!(s.dice.len(), 3);
    assert!(s.dice.iter().all(|d| d.len() == 21));
    let rows = read_metrics(&s.csv).unwrap();
    let per_pair: Vec<_> = rows.iter().filter(|r| r.kind == "eval").collect();
    assert_eq!(per_pair.len(), 3 * 21);
    for t in 0..=20 {
        let col: Vec<f64> = per_pair.iter().filter(|r| r.t == t).map(|r| r.dice).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let row = rows.iter().find(|r| r.kind == "eval_mean" && r.t == t).unwrap();
        assert!((row.dice - mean).abs() < 1e-12);
        assert_eq!(row.dice, s.mean[t]);
    }
    let summary = fs::read_to_string(&s.summary).unwrap();
    for t in [1, 10, 20] {
        assert!(summary.contains(&format!("t={t} dice {:.4}", s.mean[t])), "{summary}");
    }
    assert!(edir.join("pair000_field.pgm").exists() && !edir.join("pair001_field.pgm").exists());

    let short = eval_cmd(&out.last_checkpoint, &eval_opts(&edir, 5)).unwrap();
    assert!(!fs::read_to_string(&short.summary).unwrap().contains("t=10"));
    assert!(matches!(eval_cmd(&out.last_checkpoint, &eval_opts(&edir, 0)), Err(Error::Usage(_))));
}

#[test]
fn identity_policy_keeps_step_zero_dice() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_cmd(&tiny(tmp.path()), &Resume::Fresh).unwrap();
    let mut ck = checkpoint::load(&out.last_checkpoint).unwrap();
    ck.agent.zero_actor_head();
    let still = tmp.path().join("still.ckpt");
    checkpoint::save(&ck, &still).unwrap();

    let moved = eval_cmd(&still, &eval_opts(&tmp.path().join("moved"), 3)).unwrap();
    for d in &moved.dice {
        assert_eq!(d[1], d[0]);
    }
    let mut opts = eval_opts(&tmp.path().join("same"), 3);
    opts.data = Some(DatasetSpec {
        rotation_deg: 0.0,
        scale_min: 1.0,
        scale_max: 1.0,
        elastic_amplitude: 0.0,
        ..tiny(tmp.path()).data
    });
    let same = eval_cmd(&still, &opts).unwrap();
    for d in &same.dice {
        assert!(d.iter().all(|&v| v == 1.0), "{d:?}");
    }
}

#[test]
fn eval_reproduces_after_reloading_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_cmd(&tiny(tmp.path()), &Resume::Fresh).unwrap();
    let a = eval_cmd(&out.last_checkpoint, &eval_opts(&tmp.path().join("a"), 6)).unwrap();
    let copy = tmp.path().join("copy.ckpt");
    let ck = checkpoint::load(&out.last_checkpoint).unwrap();
    checkpoint::save(&ck, &copy).unwrap();
    assert_eq!(fs::read(&copy).unwrap(), fs::read(&out.last_checkpoint).unwrap());
    let b = eval_cmd(&copy, &eval_opts(&tmp.path().join("b"), 6)).unwrap();
    let body = |p: &Path| fs::read(p).unwrap();
    assert_eq!(body(&a.csv), body(&b.csv));
}

#[test]
fn gen_data_round_trips_through_idx() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny(tmp.path()).data;
    let n = gen_data(&spec, Split::Eval, tmp.path(), 2).unwrap();
    assert_eq!(n, 3);
    let fixed = load_idx(&tmp.path().join("fixed.idx")).unwrap();
    let moving = load_idx(&tmp.path().join("moving.idx")).unwrap();
    assert_eq!((fixed.len(), moving.len()), (3, 3));
    let data = spac_core::bench::build_dataset(&spec, Split::Eval).unwrap();
    for (img, (_, m)) in moving.iter().zip(&data.pairs) {
        for (a, b) in img.data().iter().zip(m.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
    assert!(tmp.path().join("pair001_moving.pgm").exists());
}

#[test]
fn inspect_lists_state_and_tensors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_cmd(&tiny(tmp.path()), &Resume::Fresh).unwrap();
    let text = inspect_checkpoint(&out.last_checkpoint).unwrap();
    assert!(text.contains("global_step = 12") && text.contains("planner/enc0.w"), "{text}");
}
