//! Library entry points behind the `train`, `eval`, `gen-data` and
//! `inspect-checkpoint` subcommands.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::Rng;

use crate::agent::{seeded_stream, Agent, STREAM_DATA};
use crate::env::{env_reset, EpisodeState, State};
use crate::error::{Error, Result};
use crate::image::write_pgm;
use crate::warp::{image_ncc, DisplacementField};

use super::checkpoint::{self, Checkpoint, EpisodeCursor};
use super::config::RunConfig;
use super::data::{build_dataset, encode_idx, Dataset, DatasetSpec, Split};
use super::metrics::{MetricsRow, MetricsWriter};

pub const CONFIG_ECHO: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOCK_FILE: &str = "lock";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const NAN_DUMP: &str = "nan_dump.txt";

/// Steps reported in the evaluation summary.
pub const SUMMARY_STEPS: [usize; 3] = [1, 10, 20];

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("step-{step:09}.ckpt"))
}

/// Checkpoints in `dir`, oldest first.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let cdir = dir.join(CHECKPOINT_DIR);
    if !cdir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(cdir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    out.sort();
    Ok(out)
}

/// Exclusive ownership of an output directory for the lifetime of the guard.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "{} is locked by another training process (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::Usage(format!("cannot write to {}: {e}", dir.display()))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Where a training run should start from.
#[derive(Clone, Debug, PartialEq)]
pub enum Resume {
    Fresh,
    Latest,
    From(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub output_dir: PathBuf,
    pub global_step: u64,
    pub last_checkpoint: PathBuf,
}

struct Live {
    pair: usize,
    ep: EpisodeState,
    state: State,
}

struct Clock {
    start: Instant,
    deterministic: bool,
}

impl Clock {
    fn seconds(&self) -> f64 {
        if self.deterministic {
            0.0
        } else {
            self.start.elapsed().as_secs_f64()
        }
    }
}

fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(CHECKPOINT_DIR))
        .map_err(|e| Error::Usage(format!("cannot create output directory {}: {e}", dir.display())))
}

/// Runs the training loop up to `config.steps` environment steps.
///
/// Each environment step is one rollout step followed by
/// `grad_steps_per_env_step` gradient steps, then one `train` metrics row.
/// Checkpoints are written every `checkpoint_every` steps and at the end; a
/// fresh run also writes one at step 0.
pub fn train_cmd(config: &RunConfig, resume: &Resume) -> Result<TrainOutcome> {
    config.validate()?;
    let dir = config.output_dir();
    prepare_output(&dir)?;
    let _lock = DirLock::acquire(&dir)?;
    let clock = Clock {
        start: Instant::now(),
        deterministic: config.deterministic,
    };

    let train = build_dataset(&config.data, Split::Train)?;
    let (h, w) = train.dims().ok_or_else(|| Error::Config("training set is empty".into()))?;
    let eval = if config.eval_every > 0 {
        Some(build_dataset(&config.data, Split::Eval)?)
    } else {
        None
    };

    let resume_path = match resume {
        Resume::Fresh => None,
        Resume::Latest => Some(
            list_checkpoints(&dir)?
                .pop()
                .ok_or_else(|| Error::Usage(format!("no checkpoint to resume in {}", dir.display())))?,
        ),
        Resume::From(p) => Some(p.clone()),
    };
    let metrics_path = dir.join(METRICS_FILE);
    let (mut agent, mut step, cursor, mut data_rng) = match &resume_path {
        Some(p) => {
            let ck = checkpoint::load(p)?;
            let diff = ck.config.diff_for_resume(config);
            if !diff.is_empty() {
                return Err(Error::Config(format!(
                    "checkpoint {} was written under a different configuration:\n  {}",
                    p.display(),
                    diff.join("\n  ")
                )));
            }
            super::metrics::truncate_after(&metrics_path, ck.global_step)?;
            info!("resuming {} at step {}", config.run_id, ck.global_step);
            (ck.agent, ck.global_step, ck.episode, ck.data_rng)
        }
        None => {
            if metrics_path.exists() {
                fs::remove_file(&metrics_path)?;
            }
            for old in list_checkpoints(&dir)? {
                fs::remove_file(old)?;
            }
            let agent = Agent::new(config.resolved_train(w)?, h, w)?;
            (agent, 0, None, seeded_stream(config.train.seed, STREAM_DATA))
        }
    };
    fs::write(dir.join(CONFIG_ECHO), config.to_text())?;

    let horizon = config.train.horizon;
    let seed = config.train.seed;
    let mut live = match cursor {
        Some(c) => {
            let (fixed, moving) = train
                .pairs
                .get(c.pair)
                .ok_or_else(|| Error::Checkpoint(format!("episode pair {} outside the training set", c.pair)))?;
            let ep = EpisodeState::resume(Arc::clone(fixed), Arc::clone(moving), horizon, seed, c.omega, c.t)?;
            Some(Live {
                pair: c.pair,
                ep,
                state: c.state,
            })
        }
        None => None,
    };

    let save = |agent: Agent, live: &Option<Live>, data_rng, step| -> Result<(Agent, PathBuf)> {
        let ck = Checkpoint {
            config: config.clone(),
            global_step: step,
            episode: live.as_ref().map(|l| EpisodeCursor {
                pair: l.pair,
                t: l.ep.t(),
                omega: l.ep.omega().clone(),
                state: l.state.clone(),
            }),
            data_rng,
            agent,
        };
        let path = checkpoint_path(&dir, step);
        checkpoint::save(&ck, &path)?;
        let all = list_checkpoints(&dir)?;
        for old in all.iter().take(all.len().saturating_sub(config.keep_checkpoints)) {
            fs::remove_file(old)?;
        }
        Ok((ck.agent, path))
    };

    let mut last_checkpoint = match &resume_path {
        Some(p) => p.clone(),
        None => {
            let (a, p) = save(agent, &live, data_rng.clone(), 0)?;
            agent = a;
            p
        }
    };
    if step >= config.steps {
        return Ok(TrainOutcome {
            output_dir: dir,
            global_step: step,
            last_checkpoint,
        });
    }

    let mut metrics = MetricsWriter::append(&metrics_path)?;
    while step < config.steps {
        let cur = match live.take() {
            Some(l) if !l.ep.is_done() => l,
            _ => {
                let pair = data_rng.random_range(0..train.len());
                let (fixed, moving) = &train.pairs[pair];
                let (ep, state) = env_reset(Arc::clone(fixed), Arc::clone(moving), horizon, seed)?;
                Live { pair, ep, state }
            }
        };
        let Live { pair, mut ep, state } = cur;
        let (_, out) = agent.rollout_step(&mut ep, &state)?;
        let mut report = None;
        for _ in 0..config.train.grad_steps_per_env_step {
            match agent.gradient_update_step(ep.original_moving()) {
                Ok(r) => report = r.or(report),
                Err(e @ Error::NonFinite(_)) => {
                    let dump = dir.join(NAN_DUMP);
                    fs::write(&dump, nan_dump(&agent, step + 1, &e))?;
                    warn!("non-finite loss at step {}; diagnostics in {}", step + 1, dump.display());
                    return Err(Error::NonFinite(format!(
                        "step {}: {e}; offending batch written to {}",
                        step + 1,
                        dump.display()
                    )));
                }
                Err(e) => return Err(e),
            }
        }
        step += 1;
        let r = report.unwrap_or_default();
        metrics.write(&MetricsRow {
            run_id: config.run_id.clone(),
            kind: "train".into(),
            global_step: step,
            pair: Some(pair),
            t: ep.t(),
            dice: out.dice,
            reward: out.reward,
            ncc: image_ncc(ep.fixed(), &out.state.moving)?,
            q_loss: r.q_loss,
            planner_loss: r.planner_loss,
            reg_loss: r.reg_loss,
            alpha_loss: r.alpha_loss,
            alpha: agent.alpha(),
            wall_clock: clock.seconds(),
        })?;
        live = Some(Live {
            pair,
            ep,
            state: out.state,
        });

        if let Some(eval) = &eval {
            if step % config.eval_every == 0 {
                let curves = evaluate_all(&agent, eval, horizon)?;
                for row in aggregate_rows(&config.run_id, step, &curves, agent.alpha(), clock.seconds()) {
                    metrics.write(&row)?;
                }
            }
        }
        if step % config.checkpoint_every == 0 || step == config.steps {
            let (a, p) = save(agent, &live, data_rng.clone(), step)?;
            agent = a;
            last_checkpoint = p;
            info!("step {step}: checkpoint {}", last_checkpoint.display());
        }
    }
    Ok(TrainOutcome {
        output_dir: dir,
        global_step: step,
        last_checkpoint,
    })
}

fn image_stats(v: &[f32]) -> String {
    let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64;
    let bad = v.iter().filter(|x| !x.is_finite()).count();
    format!("min {lo} max {hi} mean {mean:.6} non-finite {bad}")
}

fn nan_dump(agent: &Agent, step: u64, err: &Error) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "step = {step}\nerror = {err}\nalpha = {}", agent.alpha());
    let _ = writeln!(s, "updates = {}", agent.updates());
    for (name, set) in [("planner", agent.planner()), ("actor", agent.actor()), ("critic", agent.critic())] {
        let _ = writeln!(s, "{name}: all finite = {}", set.all_finite());
    }
    let _ = writeln!(s, "batch = {:?}", agent.last_batch());
    for &i in agent.last_batch() {
        let Some(t) = agent.pool().get(i) else { continue };
        let _ = writeln!(
            s,
            "[{i}] reward {} done {} plan {:?}\n    pre {:?}\n    fixed {}\n    moving {}\n    next moving {}\n    action max |.| {}",
            t.reward,
            t.done,
            t.plan.values,
            t.plan.pre,
            image_stats(t.state.fixed.data()),
            image_stats(t.state.moving.data()),
            image_stats(t.next_state.moving.data()),
            t.action.max_abs()
        );
    }
    s
}

/// Deterministic-policy Dice and NCC curves for every pair.
pub fn evaluate_all(agent: &Agent, data: &Dataset, horizon: usize) -> Result<Vec<crate::agent::EvalResult>> {
    data.pairs
        .iter()
        .map(|(f, m)| agent.evaluate_policy(Arc::clone(f), Arc::clone(m), horizon, None))
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-step mean and standard deviation over pairs.
pub fn step_stats(curves: &[crate::agent::EvalResult]) -> Vec<((f64, f64), (f64, f64))> {
    let steps = curves.first().map_or(0, |c| c.dice.len());
    (0..steps)
        .map(|t| {
            let d: Vec<f64> = curves.iter().map(|c| c.dice[t]).collect();
            let n: Vec<f64> = curves.iter().map(|c| c.ncc[t]).collect();
            (mean_std(&d), mean_std(&n))
        })
        .collect()
}

fn aggregate_rows(
    run_id: &str,
    step: u64,
    curves: &[crate::agent::EvalResult],
    alpha: f64,
    wall: f64,
) -> Vec<MetricsRow> {
    let stats = step_stats(curves);
    let mut rows = Vec::with_capacity(2 * stats.len());
    for (kind, pick) in [("eval_mean", 0usize), ("eval_std", 1)] {
        for (t, &((dm, ds), (nm, ns))) in stats.iter().enumerate() {
            let (dice, ncc) = if pick == 0 { (dm, nm) } else { (ds, ns) };
            let reward = match (pick, t) {
                (0, t) if t > 0 => dm - stats[t - 1].0 .0,
                _ => 0.0,
            };
            rows.push(MetricsRow {
                run_id: run_id.to_owned(),
                kind: kind.into(),
                global_step: step,
                pair: None,
                t,
                dice,
                reward,
                ncc,
                alpha,
                wall_clock: wall,
                ..Default::default()
            });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub horizon: usize,
    pub output_dir: PathBuf,
    /// Evaluation data; `None` uses the eval split of the checkpoint's dataset.
    pub data: Option<DatasetSpec>,
    /// Pairs for which fixed, moving, warped and field-magnitude PGMs are written.
    pub pgm_pairs: usize,
    pub deterministic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    /// Dice per pair per step, t = 0..=horizon.
    pub dice: Vec<Vec<f64>>,
    /// Mean and standard deviation of Dice per step.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub csv: PathBuf,
    pub summary: PathBuf,
}

/// Evaluates a checkpoint's deterministic policy over every evaluation pair.
///
/// Writes `eval.csv` (one `eval` row per pair and step, then `eval_mean` and
/// `eval_std` rows) and `summary.txt` into the output directory.
pub fn eval_cmd(ckpt: &Path, opts: &EvalOptions) -> Result<EvalSummary> {
    if opts.horizon < 1 {
        return Err(Error::Usage(format!("horizon must be at least 1, got {}", opts.horizon)));
    }
    let clock = Clock {
        start: Instant::now(),
        deterministic: opts.deterministic,
    };
    let ck = checkpoint::load(ckpt)?;
    let spec = opts.data.clone().unwrap_or_else(|| ck.config.data.clone());
    let data = build_dataset(&spec, Split::Eval)?;
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    if data.dims() != Some((ck.agent.shape().height, ck.agent.shape().width)) {
        return Err(Error::Config(format!(
            "evaluation images are {:?}, checkpoint networks expect {:?}",
            data.dims(),
            (ck.agent.shape().height, ck.agent.shape().width)
        )));
    }
    fs::create_dir_all(&opts.output_dir)
        .map_err(|e| Error::Usage(format!("cannot create {}: {e}", opts.output_dir.display())))?;

    let agent = &ck.agent;
    let curves = evaluate_all(agent, &data, opts.horizon)?;
    let run_id = ck.config.run_id.clone();
    let csv = opts.output_dir.join("eval.csv");
    let mut w = MetricsWriter::create(&csv)?;
    for (i, c) in curves.iter().enumerate() {
        for t in 0..c.dice.len() {
            w.write(&MetricsRow {
                run_id: run_id.clone(),
                kind: "eval".into(),
                global_step: ck.global_step,
                pair: Some(i),
                t,
                dice: c.dice[t],
                reward: if t == 0 { 0.0 } else { c.dice[t] - c.dice[t - 1] },
                ncc: c.ncc[t],
                alpha: agent.alpha(),
                wall_clock: clock.seconds(),
                ..Default::default()
            })?;
        }
    }
    for row in aggregate_rows(&run_id, ck.global_step, &curves, agent.alpha(), clock.seconds()) {
        w.write(&row)?;
    }

    let stats = step_stats(&curves);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "checkpoint {} (step {}), {} pairs, horizon {}",
        ckpt.display(),
        ck.global_step,
        curves.len(),
        opts.horizon
    );
    let _ = writeln!(text, "t=0 dice {:.4} ± {:.4}", stats[0].0 .0, stats[0].0 .1);
    for t in SUMMARY_STEPS.into_iter().filter(|&t| t <= opts.horizon) {
        let ((dm, ds), (nm, ns)) = stats[t];
        let _ = writeln!(text, "t={t} dice {dm:.4} ± {ds:.4} ncc {nm:.4} ± {ns:.4}");
    }
    let summary = opts.output_dir.join("summary.txt");
    fs::write(&summary, &text)?;

    let (h, wd) = (agent.shape().height, agent.shape().width);
    for (i, c) in curves.iter().enumerate().take(opts.pgm_pairs) {
        let (fixed, moving) = &data.pairs[i];
        let field = c.final_field().cloned().unwrap_or_else(|| DisplacementField::zeros(h, wd));
        let warped = Agent::warp(moving, &field)?;
        let mag = field.magnitude();
        let peak = mag.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
        let scaled: Vec<f32> = mag.iter().map(|m| m / peak).collect();
        let dir = &opts.output_dir;
        write_pgm(&dir.join(format!("pair{i:03}_fixed.pgm")), h, wd, fixed.data())?;
        write_pgm(&dir.join(format!("pair{i:03}_moving.pgm")), h, wd, moving.data())?;
        write_pgm(&dir.join(format!("pair{i:03}_warped.pgm")), h, wd, warped.data())?;
        write_pgm(&dir.join(format!("pair{i:03}_field.pgm")), h, wd, &scaled)?;
    }

    Ok(EvalSummary {
        dice: curves.iter().map(|c| c.dice.clone()).collect(),
        mean: stats.iter().map(|s| s.0 .0).collect(),
        std: stats.iter().map(|s| s.0 .1).collect(),
        csv,
        summary,
    })
}

/// Writes a split as `fixed.idx` / `moving.idx` plus optional PGM previews.
pub fn gen_data(spec: &DatasetSpec, split: Split, dir: &Path, pgm_pairs: usize) -> Result<usize> {
    let data = build_dataset(spec, split)?;
    fs::create_dir_all(dir).map_err(|e| Error::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let fixed: Vec<_> = data.pairs.iter().map(|(f, _)| (**f).clone()).collect();
    let moving: Vec<_> = data.pairs.iter().map(|(_, m)| (**m).clone()).collect();
    fs::write(dir.join("fixed.idx"), encode_idx(&fixed)?)?;
    fs::write(dir.join("moving.idx"), encode_idx(&moving)?)?;
    for (i, (f, m)) in data.pairs.iter().enumerate().take(pgm_pairs) {
        let (h, w) = f.dims();
        write_pgm(&dir.join(format!("pair{i:03}_fixed.pgm")), h, w, f.data())?;
        write_pgm(&dir.join(format!("pair{i:03}_moving.pgm")), h, w, m.data())?;
    }
    Ok(data.len())
}

pub fn inspect_checkpoint(path: &Path) -> Result<String> {
    checkpoint::describe(path)
}
