//! Experiment orchestration: parallel rollout collection, metrics emission,
//! checkpointing with exact resume, and the top-level `run_experiment` loop
//! shared by both optimization mechanisms.

pub mod config;

use std::collections::VecDeque;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Algorithm, ExperimentConfig};

use crate::env::{EnvState, Environment, Scenario, Terminal, OBS_DIM};
use crate::nn::GaussianPolicy;
use crate::offpom::{OffPomLearner, ReplayBuffer, Transition};
use crate::onpom::{OnPomLearner, RolloutBatch, RolloutSegment, StepEnd};
use crate::rewards::RewardStrategy;
use crate::rng::{RngState, SimRng};
use crate::{Error, Result};

/// How many completed episodes feed the windowed metrics.
const EPISODE_WINDOW: usize = 20;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

/// Trainable state of either mechanism.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerCheckpoint {
    OnPom(OnPomLearner),
    OffPom(OffPomLearner),
}

/// Snapshot of one environment worker for exact resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerResume {
    pub env: EnvState,
    pub episode_index: u64,
    pub rng: RngState,
    pub partial_return: f64,
}

/// Windowed-metrics continuation state.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsState {
    pub window: Vec<(f64, bool)>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub alpha: f64,
    pub q_loss: f64,
    pub episodes_completed: u64,
}

/// Everything beyond network weights needed to continue a run bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResumeState {
    pub workers: Vec<WorkerResume>,
    pub learner_rng: RngState,
    pub metrics: MetricsState,
    pub env_steps: u64,
    pub wall_minutes_before: f64,
    /// Replay sidecar filename next to the checkpoint (off-policy only).
    pub replay_sidecar: Option<String>,
}

/// On-disk checkpoint: versioned JSON with full-precision parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub reward: RewardStrategy,
    pub train_step: u64,
    pub learner: LearnerCheckpoint,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint schema_version {}",
                ckpt.schema_version
            )));
        }
        Ok(ckpt)
    }

    /// The policy head plus whether it drives a tanh-squashed actor.
    pub fn policy(&self) -> (&GaussianPolicy, bool) {
        match &self.learner {
            LearnerCheckpoint::OnPom(l) => (&l.policy, false),
            LearnerCheckpoint::OffPom(l) => (&l.policy, true),
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsTracker {
    stride: u64,
    extended: bool,
    window: VecDeque<(f64, bool)>,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    alpha: f64,
    q_loss: f64,
    episodes_completed: u64,
    file: BufWriter<fs::File>,
}

impl MetricsTracker {
    const HEADER: &'static str =
        "train_step,mean_episode_reward,policy_loss,value_loss,entropy,success_rate_window";
    const HEADER_EXT: &'static str = ",alpha,q_loss";

    fn create(path: &Path, stride: u64, extended: bool) -> Result<Self> {
        let mut file = BufWriter::new(fs::File::create(path)?);
        write!(file, "{}", Self::HEADER)?;
        if extended {
            write!(file, "{}", Self::HEADER_EXT)?;
        }
        writeln!(file)?;
        Ok(Self {
            stride,
            extended,
            window: VecDeque::with_capacity(EPISODE_WINDOW),
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            alpha: 0.0,
            q_loss: 0.0,
            episodes_completed: 0,
            file,
        })
    }

    /// Reopen an existing metrics file at a resume point, keeping exactly the
    /// rows up to `env_steps`.
    fn reopen(
        path: &Path,
        stride: u64,
        extended: bool,
        state: &MetricsState,
        env_steps: u64,
    ) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("metrics file missing on resume: {e}")))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let expected_header = if extended {
            format!("{}{}", Self::HEADER, Self::HEADER_EXT)
        } else {
            Self::HEADER.to_string()
        };
        if header != expected_header {
            return Err(Error::Checkpoint("metrics header mismatch on resume".into()));
        }
        let mut kept = vec![header.to_string()];
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let step: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint("bad metrics row on resume".into()))?;
            if step <= env_steps {
                kept.push(line.to_string());
            }
        }
        let expected_rows = (env_steps / stride) as usize;
        if kept.len() - 1 != expected_rows {
            return Err(Error::Checkpoint(format!(
                "metrics file has {} rows, checkpoint expects {expected_rows}",
                kept.len() - 1
            )));
        }
        let mut body = kept.join("\n");
        body.push('\n');
        fs::write(path, body)?;
        let file = BufWriter::new(fs::OpenOptions::new().append(true).open(path)?);
        Ok(Self {
            stride,
            extended,
            window: state.window.iter().copied().collect(),
            policy_loss: state.policy_loss,
            value_loss: state.value_loss,
            entropy: state.entropy,
            alpha: state.alpha,
            q_loss: state.q_loss,
            episodes_completed: state.episodes_completed,
            file,
        })
    }

    fn on_episode(&mut self, episode_return: f64, success: bool) {
        if self.window.len() == EPISODE_WINDOW {
            self.window.pop_front();
        }
        self.window.push_back((episode_return, success));
        self.episodes_completed += 1;
    }

    fn on_update(&mut self, policy_loss: f64, value_loss: f64, entropy: f64) {
        self.policy_loss = policy_loss;
        self.value_loss = value_loss;
        self.entropy = entropy;
    }

    fn on_update_ext(&mut self, alpha: f64, q_loss: f64) {
        self.alpha = alpha;
        self.q_loss = q_loss;
    }

    fn mean_return(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().map(|(r, _)| r).sum::<f64>() / self.window.len() as f64
    }

    fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|(_, s)| *s).count() as f64 / self.window.len() as f64
    }

    /// Called once per environment step with the post-step counter; emits a
    /// row at every stride multiple.
    fn step(&mut self, env_steps: u64) -> Result<()> {
        if env_steps % self.stride != 0 {
            return Ok(());
        }
        write!(
            self.file,
            "{},{},{},{},{},{}",
            env_steps,
            self.mean_return(),
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.success_rate()
        )?;
        if self.extended {
            write!(self.file, ",{},{}", self.alpha, self.q_loss)?;
        }
        writeln!(self.file)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }

    fn to_state(&self) -> MetricsState {
        MetricsState {
            window: self.window.iter().copied().collect(),
            policy_loss: self.policy_loss,
            value_loss: self.value_loss,
            entropy: self.entropy,
            alpha: self.alpha,
            q_loss: self.q_loss,
            episodes_completed: self.episodes_completed,
        }
    }
}

// ---------------------------------------------------------------------------
// Workers
// ---------------------------------------------------------------------------

/// One environment instance with its episode-scoped random stream.
pub struct Worker {
    pub instance: u64,
    env: Environment,
    rng: SimRng,
    episode_index: u64,
    partial_return: f64,
    obs_norm: [f64; OBS_DIM],
}

impl Worker {
    pub fn new(scenario: &Scenario, master_seed: u64, instance: u64) -> Self {
        let mut env = Environment::new(scenario.clone());
        let mut rng = SimRng::for_episode(master_seed, instance, 0);
        let obs = env.reset(&mut rng);
        let obs_norm = obs.normalized(scenario);
        Self {
            instance,
            env,
            rng,
            episode_index: 0,
            partial_return: 0.0,
            obs_norm,
        }
    }

    fn begin_next_episode(&mut self, master_seed: u64, scenario: &Scenario) {
        self.episode_index += 1;
        self.rng = SimRng::for_episode(master_seed, self.instance, self.episode_index);
        let obs = self.env.reset(&mut self.rng);
        self.obs_norm = obs.normalized(scenario);
        self.partial_return = 0.0;
    }

    fn to_resume(&self) -> WorkerResume {
        WorkerResume {
            env: self.env.snapshot(),
            episode_index: self.episode_index,
            rng: self.rng.state(),
            partial_return: self.partial_return,
        }
    }

    fn from_resume(scenario: &Scenario, instance: u64, r: &WorkerResume) -> Self {
        let mut env = Environment::new(scenario.clone());
        env.restore(&r.env);
        let obs_norm = env.observe().normalized(scenario);
        Self {
            instance,
            env,
            rng: SimRng::restore(&r.rng),
            episode_index: r.episode_index,
            partial_return: r.partial_return,
            obs_norm,
        }
    }
}

/// One worker's slice of an iteration: the experience segment plus episode
/// completions tagged with their local step.
pub struct CollectedSegment {
    pub segment: RolloutSegment,
    pub completions: Vec<(usize, f64, bool)>,
}

/// Step every worker `steps_per_env` times against a frozen policy/critic
/// snapshot. Workers run in parallel; the returned vector is ordered by
/// instance id, so downstream processing is deterministic regardless of
/// scheduling.
pub fn collect_parallel(
    workers: &mut [Worker],
    policy: &GaussianPolicy,
    critic: &crate::nn::Mlp,
    steps_per_env: usize,
    scenario: &Scenario,
    reward: RewardStrategy,
    master_seed: u64,
) -> Result<Vec<CollectedSegment>> {
    let results: Vec<Result<CollectedSegment>> = workers
        .par_iter_mut()
        .map(|w| {
            collect_one(w, policy, critic, steps_per_env, scenario, reward, master_seed).map_err(
                |e| Error::Worker {
                    instance: w.instance,
                    msg: e.to_string(),
                },
            )
        })
        .collect();
    results.into_iter().collect()
}

fn collect_one(
    w: &mut Worker,
    policy: &GaussianPolicy,
    critic: &crate::nn::Mlp,
    steps_per_env: usize,
    scenario: &Scenario,
    reward: RewardStrategy,
    master_seed: u64,
) -> Result<CollectedSegment> {
    let mut seg = RolloutSegment {
        obs_dim: OBS_DIM,
        ..Default::default()
    };
    let mut completions = Vec::new();
    let mut ended_on_last = false;
    for t in 0..steps_per_env {
        let obs = w.obs_norm;
        let head = policy.head(&obs)?;
        let noise = w.rng.standard_normal();
        let action_raw = head.mean + head.sigma * noise;
        let log_prob = crate::nn::gaussian_log_prob(action_raw, head.mean, head.sigma);
        let value = critic.forward_one(&obs)?[0];
        let out = w.env.step(action_raw.clamp(-1.0, 1.0), reward)?;

        seg.observations.extend_from_slice(&obs);
        seg.actions.push(action_raw);
        seg.log_probs_old.push(log_prob);
        seg.rewards.push(out.reward);
        seg.values.push(value);
        w.partial_return += out.reward;

        match out.terminal {
            Terminal::Goal | Terminal::Collision => {
                seg.ends.push(StepEnd::Terminal);
                completions.push((t, w.partial_return, out.terminal == Terminal::Goal));
                w.begin_next_episode(master_seed, scenario);
                ended_on_last = true;
            }
            Terminal::Truncated => {
                let next = out.observation.normalized(scenario);
                let boot = critic.forward_one(&next)?[0];
                seg.ends.push(StepEnd::TruncatedWith(boot));
                completions.push((t, w.partial_return, false));
                w.begin_next_episode(master_seed, scenario);
                ended_on_last = true;
            }
            Terminal::Running => {
                seg.ends.push(StepEnd::Continue);
                w.obs_norm = out.observation.normalized(scenario);
                ended_on_last = false;
            }
        }
    }
    seg.tail_bootstrap = if ended_on_last {
        0.0
    } else {
        critic.forward_one(&w.obs_norm)?[0]
    };
    Ok(CollectedSegment {
        segment: seg,
        completions,
    })
}

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

/// Paths and summary of one completed run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub periodic_checkpoints: Vec<PathBuf>,
    pub config_snapshot: PathBuf,
    pub report_path: PathBuf,
    pub wall_clock_minutes: f64,
    pub env_steps: u64,
    pub episodes_completed: u64,
}

#[derive(Serialize)]
struct Report<'a> {
    status: &'a str,
    algorithm: &'a str,
    reward: &'a str,
    master_seed: u64,
    env_steps: u64,
    episodes_completed: u64,
    wall_clock_minutes: f64,
    final_window_success_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn write_report(path: &Path, report: &Report) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Execute one experiment cell from scratch.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_inner(cfg, None)
}

/// Continue a checkpointed run to `cfg.total_steps`.
pub fn resume_experiment(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<RunArtifacts> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.resume.is_none() {
        return Err(Error::Checkpoint(
            "checkpoint carries no resume state".into(),
        ));
    }
    let expected = match (&ckpt.learner, cfg.algorithm) {
        (LearnerCheckpoint::OnPom(_), Algorithm::OnPom) => true,
        (LearnerCheckpoint::OffPom(_), Algorithm::OffPom) => true,
        _ => false,
    };
    if !expected {
        return Err(Error::Checkpoint(
            "checkpoint algorithm does not match the config".into(),
        ));
    }
    run_inner(cfg, Some((ckpt, checkpoint.to_path_buf())))
}

fn run_inner(
    cfg: &ExperimentConfig,
    resume: Option<(Checkpoint, PathBuf)>,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let scenario = cfg.load_scenario(None)?;
    let run_dir = Path::new(&cfg.out_dir).join(cfg.run_name());
    fs::create_dir_all(&run_dir)?;

    let config_snapshot = run_dir.join("config.json");
    let mut snap = serde_json::to_string_pretty(cfg)?;
    snap.push('\n');
    fs::write(&config_snapshot, snap)?;

    let report_path = run_dir.join("report.json");
    match run_body(cfg, &scenario, &run_dir, resume) {
        Ok(mut artifacts) => {
            artifacts.config_snapshot = config_snapshot;
            artifacts.report_path = report_path;
            Ok(artifacts)
        }
        Err(e) => {
            // Partial artifacts stay on disk with an explicit failure marker.
            let _ = write_report(
                &report_path,
                &Report {
                    status: "failed",
                    algorithm: cfg.algorithm.name(),
                    reward: cfg.reward.name(),
                    master_seed: cfg.master_seed,
                    env_steps: 0,
                    episodes_completed: 0,
                    wall_clock_minutes: 0.0,
                    final_window_success_rate: 0.0,
                    error: Some(e.to_string()),
                },
            );
            Err(e)
        }
    }
}

struct RunState {
    workers: Vec<Worker>,
    learner_rng: SimRng,
    env_steps: u64,
    wall_before: f64,
}

fn run_body(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    run_dir: &Path,
    resume: Option<(Checkpoint, PathBuf)>,
) -> Result<RunArtifacts> {
    let start = Instant::now();
    let metrics_path = run_dir.join("metrics.csv");
    let extended = cfg.algorithm == Algorithm::OffPom;

    // Learner + mutable run state, fresh or restored.
    let mut seed_rng = SimRng::from_seed(cfg.master_seed);
    let (mut learner, mut state, mut tracker, mut buffer) = match resume {
        None => {
            let learner = match cfg.algorithm {
                Algorithm::OnPom => LearnerCheckpoint::OnPom(OnPomLearner::new(
                    OBS_DIM,
                    &cfg.hidden,
                    cfg.optimizer,
                    cfg.learning_rate,
                    &mut seed_rng,
                )),
                Algorithm::OffPom => LearnerCheckpoint::OffPom(OffPomLearner::new(
                    OBS_DIM,
                    &cfg.hidden,
                    &cfg.offpom,
                    cfg.optimizer,
                    &mut seed_rng,
                )),
            };
            let workers: Vec<Worker> = (0..cfg.n_envs)
                .map(|i| Worker::new(scenario, cfg.master_seed, i as u64))
                .collect();
            let tracker = MetricsTracker::create(&metrics_path, cfg.metrics_stride, extended)?;
            let buffer = match cfg.algorithm {
                Algorithm::OffPom => Some(ReplayBuffer::new(cfg.offpom.replay_capacity, OBS_DIM)),
                Algorithm::OnPom => None,
            };
            (
                learner,
                RunState {
                    workers,
                    learner_rng: SimRng::for_learner(cfg.master_seed),
                    env_steps: 0,
                    wall_before: 0.0,
                },
                tracker,
                buffer,
            )
        }
        Some((ckpt, ckpt_path)) => {
            let r = ckpt.resume.as_ref().expect("checked by caller");
            if r.workers.len() != cfg.n_envs {
                return Err(Error::Checkpoint(format!(
                    "checkpoint has {} workers, config wants {}",
                    r.workers.len(),
                    cfg.n_envs
                )));
            }
            let workers: Vec<Worker> = r
                .workers
                .iter()
                .enumerate()
                .map(|(i, wr)| Worker::from_resume(scenario, i as u64, wr))
                .collect();
            let tracker = MetricsTracker::reopen(
                &metrics_path,
                cfg.metrics_stride,
                extended,
                &r.metrics,
                r.env_steps,
            )?;
            let buffer = match (&ckpt.learner, &r.replay_sidecar) {
                (LearnerCheckpoint::OffPom(_), Some(name)) => {
                    let sidecar = ckpt_path
                        .parent()
                        .unwrap_or_else(|| Path::new("."))
                        .join(name);
                    let bytes = fs::read(&sidecar).map_err(|e| {
                        Error::Checkpoint(format!(
                            "replay sidecar {} missing: {e}",
                            sidecar.display()
                        ))
                    })?;
                    Some(ReplayBuffer::from_bytes(&bytes)?)
                }
                (LearnerCheckpoint::OffPom(_), None) => {
                    return Err(Error::Checkpoint(
                        "off-policy checkpoint lacks a replay sidecar".into(),
                    ))
                }
                _ => None,
            };
            (
                ckpt.learner.clone(),
                RunState {
                    workers,
                    learner_rng: SimRng::restore(&r.learner_rng),
                    env_steps: r.env_steps,
                    wall_before: r.wall_minutes_before,
                },
                tracker,
                buffer,
            )
        }
    };

    let mut periodic = Vec::new();
    let mut next_ckpt = (state.env_steps / cfg.checkpoint_interval + 1) * cfg.checkpoint_interval;
    let mut last_sidecar: Option<PathBuf> = None;

    let save_ckpt = |learner: &LearnerCheckpoint,
                     state: &RunState,
                     tracker: &MetricsTracker,
                     buffer: &Option<ReplayBuffer>,
                     run_dir: &Path,
                     name: &str,
                     wall_minutes: f64,
                     last_sidecar: &mut Option<PathBuf>|
     -> Result<PathBuf> {
        let sidecar_name = buffer.as_ref().map(|_| format!("{name}.buffer.bin"));
        let ckpt = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            algorithm: cfg.algorithm,
            reward: cfg.reward,
            train_step: state.env_steps,
            learner: learner.clone(),
            resume: Some(ResumeState {
                workers: state.workers.iter().map(Worker::to_resume).collect(),
                learner_rng: state.learner_rng.state(),
                metrics: tracker.to_state(),
                env_steps: state.env_steps,
                wall_minutes_before: wall_minutes,
                replay_sidecar: sidecar_name.clone(),
            }),
        };
        let path = run_dir.join(format!("{name}.ckpt.json"));
        ckpt.save(&path)?;
        if let (Some(buf), Some(sname)) = (buffer.as_ref(), sidecar_name) {
            let spath = run_dir.join(sname);
            fs::write(&spath, buf.to_bytes())?;
            if let Some(old) = last_sidecar.take() {
                if old != spath {
                    let _ = fs::remove_file(old);
                }
            }
            *last_sidecar = Some(spath);
        }
        Ok(path)
    };

    match (&mut learner, cfg.algorithm) {
        (LearnerCheckpoint::OnPom(on), Algorithm::OnPom) => {
            while state.env_steps < cfg.total_steps {
                let remaining = cfg.total_steps - state.env_steps;
                let this_iter = remaining.min(cfg.onpom.rollout_horizon as u64) as usize;
                let steps_per_env = this_iter.div_ceil(cfg.n_envs);

                let collected = collect_parallel(
                    &mut state.workers,
                    &on.policy,
                    &on.critic,
                    steps_per_env,
                    scenario,
                    cfg.reward,
                    cfg.master_seed,
                )?;

                // Canonical stream: instance-major, then step. Metrics rows
                // fire at exact stride multiples of the global counter.
                for seg in &collected {
                    let mut comp = seg.completions.iter().peekable();
                    for t in 0..steps_per_env {
                        while let Some((ct, ret, success)) = comp.peek() {
                            if *ct == t {
                                tracker.on_episode(*ret, *success);
                                comp.next();
                            } else {
                                break;
                            }
                        }
                        state.env_steps += 1;
                        tracker.step(state.env_steps)?;
                    }
                }

                let segments: Vec<RolloutSegment> =
                    collected.into_iter().map(|c| c.segment).collect();
                let batch = RolloutBatch::from_segments(&segments, &cfg.onpom)?;
                let m = on.update(&batch, &cfg.onpom, &mut state.learner_rng)?;
                tracker.on_update(m.policy_loss, m.value_loss, m.entropy);

                while state.env_steps >= next_ckpt {
                    let wall = state.wall_before + start.elapsed().as_secs_f64() / 60.0;
                    let learner_snapshot = LearnerCheckpoint::OnPom(on.clone());
                    let p = save_ckpt(
                        &learner_snapshot,
                        &state,
                        &tracker,
                        &buffer,
                        run_dir,
                        &format!("ckpt_{:09}", state.env_steps),
                        wall,
                        &mut last_sidecar,
                    )?;
                    periodic.push(p);
                    next_ckpt += cfg.checkpoint_interval;
                }
            }
        }
        (LearnerCheckpoint::OffPom(off), Algorithm::OffPom) => {
            while state.env_steps < cfg.total_steps {
                let step = state.env_steps + 1;
                let i = (state.env_steps % cfg.n_envs as u64) as usize;
                let w = &mut state.workers[i];
                let obs = w.obs_norm;
                let action = if step <= cfg.offpom.warmup_steps {
                    w.rng.uniform(-1.0, 1.0)
                } else {
                    let noise = w.rng.standard_normal();
                    off.policy.squashed_sample(&obs, noise)?.0
                };
                let out = w.env.step(action, cfg.reward).map_err(|e| Error::Worker {
                    instance: w.instance,
                    msg: e.to_string(),
                })?;
                let next_norm = out.observation.normalized(scenario);
                buffer.as_mut().expect("off-policy run owns a buffer").push(&Transition {
                    obs: obs.to_vec(),
                    action,
                    reward: out.reward,
                    next_obs: next_norm.to_vec(),
                    terminal: matches!(out.terminal, Terminal::Goal | Terminal::Collision),
                });
                w.partial_return += out.reward;
                if out.terminal.is_terminal() {
                    let ret = w.partial_return;
                    let success = out.terminal == Terminal::Goal;
                    tracker.on_episode(ret, success);
                    w.begin_next_episode(cfg.master_seed, scenario);
                } else {
                    w.obs_norm = next_norm;
                }
                state.env_steps = step;

                let buf_len = buffer.as_ref().map_or(0, ReplayBuffer::len);
                if step > cfg.offpom.warmup_steps
                    && buf_len >= cfg.offpom.batch_size
                    && step % cfg.offpom.update_every == 0
                {
                    let batch = buffer
                        .as_ref()
                        .expect("off-policy run owns a buffer")
                        .sample(cfg.offpom.batch_size, &mut state.learner_rng);
                    let m = off.update(&batch, &cfg.offpom, &mut state.learner_rng)?;
                    tracker.on_update(m.policy_loss, 0.0, m.entropy);
                    tracker.on_update_ext(m.alpha, m.q_loss);
                }
                tracker.step(state.env_steps)?;

                while state.env_steps >= next_ckpt {
                    let wall = state.wall_before + start.elapsed().as_secs_f64() / 60.0;
                    let learner_snapshot = LearnerCheckpoint::OffPom(off.clone());
                    let p = save_ckpt(
                        &learner_snapshot,
                        &state,
                        &tracker,
                        &buffer,
                        run_dir,
                        &format!("ckpt_{:09}", state.env_steps),
                        wall,
                        &mut last_sidecar,
                    )?;
                    periodic.push(p);
                    next_ckpt += cfg.checkpoint_interval;
                }
            }
        }
        _ => {
            return Err(Error::Checkpoint(
                "learner/algorithm mismatch in run body".into(),
            ))
        }
    }

    tracker.flush()?;
    let wall_minutes = state.wall_before + start.elapsed().as_secs_f64() / 60.0;
    let final_path = save_ckpt(
        &learner,
        &state,
        &tracker,
        &buffer,
        run_dir,
        "final",
        wall_minutes,
        &mut last_sidecar,
    )?;

    let report_path = run_dir.join("report.json");
    write_report(
        &report_path,
        &Report {
            status: "ok",
            algorithm: cfg.algorithm.name(),
            reward: cfg.reward.name(),
            master_seed: cfg.master_seed,
            env_steps: state.env_steps,
            episodes_completed: tracker.episodes_completed,
            wall_clock_minutes: wall_minutes,
            final_window_success_rate: tracker.success_rate(),
            error: None,
        },
    )?;

    Ok(RunArtifacts {
        run_dir: run_dir.to_path_buf(),
        metrics_path,
        final_checkpoint: final_path,
        periodic_checkpoints: periodic,
        config_snapshot: run_dir.join("config.json"),
        report_path,
        wall_clock_minutes: wall_minutes,
        env_steps: state.env_steps,
        episodes_completed: tracker.episodes_completed,
    })
}
