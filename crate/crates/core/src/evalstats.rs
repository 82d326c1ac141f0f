//! Deployment metrics, Welch's t statistics with Cohen's d effect sizes, and
//! trajectory export for offline analysis.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, Scenario, Terminal, OBS_DIM};
use crate::geometry::{wrap_angle, Vec2};
use crate::nn::GaussianPolicy;
use crate::rewards::RewardStrategy;
use crate::rng::SimRng;
use crate::vehicle::{VehicleParams, VehicleState};
use crate::{Error, Result};

/// Stream tag separating evaluation episodes from training instances.
const EVAL_STREAM: u64 = 0x45564c;

/// Anything that can drive the vehicle: neural policies and scripted
/// test controllers.
pub trait Controller {
    /// Produce an action in [-1, 1] for the current step.
    fn act(&mut self, obs_norm: &[f64; OBS_DIM], state: &VehicleState, rng: &mut SimRng) -> f64;

    /// Called once at every episode start.
    fn begin_episode(&mut self) {}
}

/// Neural controller wrapping a Gaussian policy head.
pub struct PolicyController {
    policy: GaussianPolicy,
    /// Off-policy actors squash with tanh; on-policy actors clamp.
    squash: bool,
    /// Deterministic mode acts on the mean directly.
    deterministic: bool,
}

impl PolicyController {
    pub fn new(policy: GaussianPolicy, squash: bool, deterministic: bool) -> Result<Self> {
        if policy.net.input_dim() != OBS_DIM {
            return Err(Error::InvalidConfig(format!(
                "checkpoint expects {}-dimensional observations, environment provides {OBS_DIM}",
                policy.net.input_dim()
            )));
        }
        Ok(Self {
            policy,
            squash,
            deterministic,
        })
    }
}

impl Controller for PolicyController {
    fn act(&mut self, obs_norm: &[f64; OBS_DIM], _state: &VehicleState, rng: &mut SimRng) -> f64 {
        let head = self.policy.head(obs_norm.as_slice()).expect("obs dim checked");
        let pre = if self.deterministic {
            head.mean
        } else {
            head.mean + head.sigma * rng.standard_normal()
        };
        if self.squash {
            pre.tanh()
        } else {
            pre.clamp(-1.0, 1.0)
        }
    }
}

/// Scripted controllers used as constructed oracles around the goal and
/// collision triggers.
pub mod scripted {
    use super::*;

    /// Holds the wheel straight regardless of input.
    pub struct StraightController;

    impl Controller for StraightController {
        fn act(&mut self, _o: &[f64; OBS_DIM], _s: &VehicleState, _r: &mut SimRng) -> f64 {
            0.0
        }
    }

    /// Proportional waypoint chaser: steers the rear axle through a list of
    /// waypoints, advancing when close enough.
    pub struct WaypointController {
        waypoints: Vec<Vec2>,
        current: usize,
        arrive_radius: f64,
        gain: f64,
        params: VehicleParams,
    }

    impl WaypointController {
        pub fn new(waypoints: Vec<Vec2>, params: VehicleParams) -> Self {
            Self {
                waypoints,
                current: 0,
                arrive_radius: 2.0,
                gain: 2.0,
                params,
            }
        }

        /// Lane -> slot approach -> slot center route for a scenario shaped
        /// like the default layout (goal reached by one turn off the lane).
        pub fn for_scenario(scenario: &Scenario) -> Self {
            let goal = scenario.layout.target_point;
            let milestone = scenario.layout.milestone_center;
            let v = scenario.vehicle;
            // Start the turn one turning radius before the slot centerline
            // and aim for the tangent point of the connecting arc.
            let turn_radius = v.wheelbase / v.max_steer.tan();
            let down = (goal.z - milestone.z).signum();
            let turn_in = Vec2::new(goal.x - turn_radius, milestone.z);
            let tangent = Vec2::new(goal.x, milestone.z + down * turn_radius);
            Self::new(vec![turn_in, tangent, goal], scenario.vehicle)
        }
    }

    impl Controller for WaypointController {
        fn act(&mut self, _o: &[f64; OBS_DIM], state: &VehicleState, _r: &mut SimRng) -> f64 {
            let pos = state.position;
            while self.current + 1 < self.waypoints.len()
                && pos.distance(self.waypoints[self.current]) < self.arrive_radius
            {
                self.current += 1;
            }
            let target = self.waypoints[self.current];
            let bearing = (target.z - pos.z).atan2(target.x - pos.x);
            let err = wrap_angle(bearing - state.heading);
            let desired = (self.gain * err).clamp(-self.params.max_steer, self.params.max_steer);
            ((desired - state.steer_angle) / self.params.steer_rate).clamp(-1.0, 1.0)
        }

        fn begin_episode(&mut self) {
            self.current = 0;
        }
    }
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub terminal: Terminal,
    pub final_distance: f64,
    pub steps: u32,
    pub total_reward: f64,
}

/// Aggregated deployment metrics over a batch of evaluation episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: u64,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub truncation_rate: f64,
    pub avg_final_distance: f64,
    pub avg_steps: f64,
    pub records: Vec<EpisodeRecord>,
}

/// Run `n_episodes` with per-episode derived seeds and aggregate the
/// deployment metrics. Final distance is the goal distance at episode end,
/// whatever the terminal cause.
pub fn evaluate<C: Controller>(
    controller: &mut C,
    scenario: &Scenario,
    n_episodes: u64,
    seed: u64,
    reward: RewardStrategy,
) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(n_episodes as usize);
    let mut env = Environment::new(scenario.clone());
    for ep in 0..n_episodes {
        let mut rng = SimRng::for_episode(seed, EVAL_STREAM, ep);
        let mut obs = env.reset(&mut rng);
        controller.begin_episode();
        let mut total_reward = 0.0;
        let record = loop {
            let obs_norm = obs.normalized(scenario);
            let action = controller.act(&obs_norm, env.vehicle_state(), &mut rng);
            let out = env.step(action, reward)?;
            total_reward += out.reward;
            if out.terminal.is_terminal() {
                break EpisodeRecord {
                    episode: ep,
                    terminal: out.terminal,
                    final_distance: out.observation.goal_distance,
                    steps: env.step_index(),
                    total_reward,
                };
            }
            obs = out.observation;
        };
        records.push(record);
    }

    let n = n_episodes.max(1) as f64;
    let count = |t: Terminal| records.iter().filter(|r| r.terminal == t).count() as f64;
    Ok(EvalReport {
        episodes: n_episodes,
        success_rate: count(Terminal::Goal) / n,
        collision_rate: count(Terminal::Collision) / n,
        truncation_rate: count(Terminal::Truncated) / n,
        avg_final_distance: records.iter().map(|r| r.final_distance).sum::<f64>() / n,
        avg_steps: records.iter().map(|r| f64::from(r.steps)).sum::<f64>() / n,
        records,
    })
}

/// Welch's t-test result with the Cohen's d effect size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub cohens_d: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch's t-test (unequal variances) between independent series,
/// with Welch-Satterthwaite degrees of freedom and Cohen's d effect size.
pub fn welch_t(series_a: &[f64], series_b: &[f64]) -> Result<ComparisonResult> {
    if series_a.len() < 2 || series_b.len() < 2 {
        return Err(Error::DegenerateInput(
            "welch_t needs at least two samples per series".into(),
        ));
    }
    let (ma, va) = mean_var(series_a);
    let (mb, vb) = mean_var(series_b);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::DegenerateInput(
            "welch_t needs nonzero variance in at least one series".into(),
        ));
    }
    let na = series_a.len() as f64;
    let nb = series_b.len() as f64;
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p = two_sided_p(t, dof);
    let d = (ma - mb) / ((va + vb) / 2.0).sqrt();
    Ok(ComparisonResult {
        t_statistic: t,
        degrees_of_freedom: dof,
        p_value: p,
        cohens_d: d,
    })
}

/// Two-sided p-value from the t distribution via the regularized incomplete
/// beta function: p = I_{nu/(nu+t^2)}(nu/2, 1/2).
pub fn two_sided_p(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    incomplete_beta_reg(0.5 * dof, 0.5, x).clamp(0.0, 1.0)
}

/// ln Gamma via the Lanczos approximation (g = 7, n = 9), accurate to
/// ~1e-13 relative over the positive axis.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEF.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction.
pub fn incomplete_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - incomplete_beta_reg(b, a, 1.0 - x)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Read `mean_episode_reward` samples from a metrics CSV at the given step
/// stride (rows whose train_step is a positive multiple of `stride`).
pub fn reward_series(path: &Path, stride: u64) -> Result<Vec<f64>> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    let text = std::fs::read_to_string(path)?;
    let fname = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        file: fname.clone(),
        line: 1,
        msg: "empty metrics file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let step_col = cols
        .iter()
        .position(|c| *c == "train_step")
        .ok_or_else(|| Error::Parse {
            file: fname.clone(),
            line: 1,
            msg: "missing train_step column".into(),
        })?;
    let reward_col = cols
        .iter()
        .position(|c| *c == "mean_episode_reward")
        .ok_or_else(|| Error::Parse {
            file: fname.clone(),
            line: 1,
            msg: "missing mean_episode_reward column".into(),
        })?;

    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |col: usize| -> Result<f64> {
            fields
                .get(col)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    file: fname.clone(),
                    line: i + 1,
                    msg: format!("bad field in column {col}"),
                })
        };
        let step = parse(step_col)? as u64;
        if step > 0 && step % stride == 0 {
            out.push(parse(reward_col)?);
        }
    }
    Ok(out)
}

/// Write episode traces for `n_episodes` in the environment trace schema:
/// `episode,step,x,z,heading_deg,steer_deg,action,reward,terminal`, one block
/// per episode with a step-0 spawn row.
pub fn export_trajectories<C: Controller, W: Write>(
    controller: &mut C,
    scenario: &Scenario,
    n_episodes: u64,
    seed: u64,
    reward: RewardStrategy,
    out: &mut W,
) -> Result<()> {
    writeln!(out, "episode,step,x,z,heading_deg,steer_deg,action,reward,terminal")?;
    let mut env = Environment::new(scenario.clone());
    for ep in 0..n_episodes {
        let mut rng = SimRng::for_episode(seed, EVAL_STREAM, ep);
        let mut obs = env.reset(&mut rng);
        controller.begin_episode();
        let s = env.vehicle_state();
        writeln!(
            out,
            "{ep},0,{},{},{},{},0,0,{}",
            s.position.x,
            s.position.z,
            s.heading.to_degrees(),
            s.steer_angle.to_degrees(),
            Terminal::Running.name()
        )?;
        loop {
            let obs_norm = obs.normalized(scenario);
            let action = controller.act(&obs_norm, env.vehicle_state(), &mut rng);
            let outc = env.step(action, reward)?;
            let s = env.vehicle_state();
            writeln!(
                out,
                "{ep},{},{},{},{},{},{},{},{}",
                env.step_index(),
                s.position.x,
                s.position.z,
                s.heading.to_degrees(),
                s.steer_angle.to_degrees(),
                action,
                outc.reward,
                outc.terminal.name()
            )?;
            if outc.terminal.is_terminal() {
                break;
            }
            obs = outc.observation;
        }
    }
    Ok(())
}
