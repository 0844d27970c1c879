use std::path::Path;
use std::process::{Command, Output};

fn spac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spac"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn spac")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--image-size", "12", "--train-pairs", "3", "--eval-pairs", "2", "--atlases", "2",
    "--plan-dim", "6", "--batch-size", "4", "--pool-capacity", "32", "--horizon", "3",
];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["train", "--run-id", "cli", "--output-dir", out];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    spac(&args)
}

#[test]
fn train_inspect_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&train(&run, &["--steps", "6", "--checkpoint-every", "3"]));
    let ckpt = run.join("checkpoints/step-000000006.ckpt");
    assert!(ckpt.exists());

    let desc = ok(&spac(&["inspect-checkpoint", ckpt.to_str().unwrap()]));
    assert!(desc.contains("global_step = 6"), "{desc}");

    let eval_dir = tmp.path().join("eval");
    let text = ok(&spac(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--horizon", "2",
        "--out", eval_dir.to_str().unwrap(), "--pgm-pairs", "1",
    ]));
    assert!(text.contains("t=0 dice"), "{text}");
    for f in ["eval.csv", "summary.txt", "pair000_field.pgm"] {
        assert!(eval_dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# tiny\nsteps = 50\nseed = 4\n").unwrap();
    ok(&train(&run, &["--config", cfg.to_str().unwrap(), "--steps", "2"]));
    let echo = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echo.contains("steps = 2\n"), "{echo}");
    assert!(echo.contains("seed = 4\n"), "{echo}");
}

#[test]
fn resume_latest_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    ok(&train(&run, &["--steps", "3"]));
    let msg = ok(&train(&run, &["--steps", "5", "--resume", "latest"]));
    assert!(msg.contains("to step 5"), "{msg}");
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(tmp.path(), &["--lr-reg", "abc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr_reg"));

    let out = spac(&["eval", "--checkpoint", "/nonexistent.ckpt", "--horizon", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = spac(&["inspect-checkpoint", "/nonexistent.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_data_writes_split() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    let msg = ok(&spac(&[
        "gen-data", "--image-size", "16", "--eval-pairs", "4", "--split", "eval",
        "--out", dir.to_str().unwrap(),
    ]));
    assert!(msg.contains("wrote 4 pairs"), "{msg}");
    let bytes = std::fs::read(dir.join("fixed.idx")).unwrap();
    assert_eq!(bytes.len(), 4 + 12 + 4 * 16 * 16);
}
