//! Outer loop: seed from demonstrations, then alternate plan-act episodes
//! with refits of every model.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    self, MetricsWriter, Phase, RunRecord, TrajectoryWriter, CONFIG_FILE, DEMOS_FILE, EVAL_METRICS_FILE,
    FAILED_FILE, METRICS_FILE, TRAJECTORIES_FILE,
};
use crate::config::{Mode, RefitBudget, RunConfig};
use crate::demos::generate_demos;
use crate::density::{fit_density, DensityModel};
use crate::dynamics::{fit_dynamics, EnsembleModel, Transition};
use crate::env::{EnvSpec, State, STATE_DIM};
use crate::error::{Error, Result};
use crate::planner::{plan, shift_warm_start, Models, PlannerConfig, TerminalValue};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;
use crate::value::{
    fit_lyapunov, fit_value_ensemble, LyapunovData, LyapunovFitStats, LyapunovLossConfig, LyapunovValue,
    ValueEnsemble, ValueSamples,
};
use crate::FitStats;

/// Independent random streams derived from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Demos = 1,
    Init = 2,
    Refit = 3,
    Episode = 4,
    Eval = 5,
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 40) | index);
    rng
}

/// Demonstrations plus every agent episode, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Buffer<T> {
    pub demos: Vec<Trajectory<T>>,
    pub episodes: Vec<Trajectory<T>>,
}

impl<T: Scalar> Buffer<T> {
    pub fn new(demos: Vec<Trajectory<T>>) -> Self {
        Buffer {
            demos,
            episodes: Vec::new(),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Trajectory<T>> {
        self.demos.iter().chain(&self.episodes)
    }

    pub fn transitions(&self) -> Vec<Transition<T>> {
        self.all().flat_map(|t| t.transitions()).collect()
    }

    pub fn n_transitions(&self) -> usize {
        self.all().map(|t| t.len()).sum()
    }

    /// Demonstrations and agent episodes that reached the goal without a
    /// violation.
    pub fn successful(&self) -> impl Iterator<Item = &Trajectory<T>> {
        self.all().filter(|t| t.is_success())
    }

    pub fn safe_states(&self) -> Vec<State<T>> {
        self.successful().flat_map(|t| t.states.iter().copied()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefitStats {
    pub dynamics: FitStats,
    pub value: Option<FitStats>,
    pub lyapunov: Option<LyapunovFitStats>,
    pub density_count: usize,
}

/// Untrained models; the terminal estimator matches `cfg.mode` and the other
/// one is never built.
pub fn build_models<T: Scalar, R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Models<T> {
    let hidden = cfg.networks.hidden();
    let dynamics = EnsembleModel::new(cfg.networks.ensemble_size, &hidden, rng);
    let terminal = match cfg.mode {
        Mode::Saved => TerminalValue::Saved(ValueEnsemble::new(cfg.networks.ensemble_size, &hidden, rng)),
        Mode::Salved => TerminalValue::Salved(LyapunovValue::new(STATE_DIM, &hidden, cfg.lyapunov, rng)),
    };
    Models {
        dynamics,
        terminal,
        density: DensityModel::empty(T::cst(cfg.density.alpha)),
    }
}

pub fn refit_all<T: Scalar, R: Rng + ?Sized>(
    models: &mut Models<T>,
    buffer: &Buffer<T>,
    env: &EnvSpec<T>,
    cfg: &RunConfig,
    budget: &RefitBudget,
    rng: &mut R,
) -> Result<RefitStats> {
    let transitions = buffer.transitions();
    if transitions.is_empty() {
        return Err(Error::EmptyData("refit needs at least one buffered transition".into()));
    }
    let mut stats = RefitStats {
        dynamics: fit_dynamics(&mut models.dynamics, &transitions, budget.dynamics_epochs, &cfg.train, rng)?,
        ..Default::default()
    };
    match &mut models.terminal {
        TerminalValue::Saved(ve) => {
            let samples: Vec<ValueSamples<T>> = buffer
                .successful()
                .map(|t| ValueSamples::from_trajectory(&t.states, &t.costs))
                .collect();
            stats.value = Some(fit_value_ensemble(ve, &samples, budget.value_epochs, &cfg.train, rng)?);
        }
        TerminalValue::Salved(lv) => {
            let data = LyapunovData::from_pairs(env, transitions.iter().map(|t| (&t.state, &t.next_state)));
            let loss_cfg = LyapunovLossConfig::from_config(&cfg.lyapunov);
            stats.lyapunov = Some(fit_lyapunov(lv, &loss_cfg, &data, budget.lyapunov_epochs, &cfg.train, rng)?);
        }
    }
    models.density = fit_density(&buffer.safe_states(), T::cst(cfg.density.alpha))?;
    stats.density_count = models.density.count();
    Ok(stats)
}

/// Builds fresh models and fits them on the buffer with the initial budget.
pub fn initial_fit<T: Scalar>(cfg: &RunConfig, env: &EnvSpec<T>, buffer: &Buffer<T>) -> Result<(Models<T>, RefitStats)> {
    let mut models = build_models(cfg, &mut stream_rng(cfg.seed, Stream::Init, 0));
    let stats = refit_all(
        &mut models,
        buffer,
        env,
        cfg,
        &cfg.schedule.initial,
        &mut stream_rng(cfg.seed, Stream::Refit, 0),
    )?;
    Ok((models, stats))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode<T> {
    pub trajectory: Trajectory<T>,
    /// Sum of sparse costs, or `T` when the episode ended in a violation.
    pub episode_cost: f64,
    pub planner_feasible_rate: f64,
}

/// Plans from the current state, executes the first action, and repeats
/// until the goal, a violation, or `T` steps.
pub fn run_episode<T: Scalar, R: Rng + ?Sized>(
    env: &EnvSpec<T>,
    models: &Models<T>,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<Episode<T>> {
    let start = env.start_state;
    let mut traj = Trajectory::start(start);
    if env.in_goal(&start) {
        traj.completed = !env.violates_constraints(&start);
        return Ok(Episode {
            trajectory: traj,
            episode_cost: 0.0,
            planner_feasible_rate: 1.0,
        });
    }
    let mut s = start;
    let mut warm: Option<Vec<T>> = None;
    for _ in 0..env.horizon_t {
        let p = plan(&s, env, models, cfg, warm.as_deref(), rng)?;
        let a = p.actions[0].clipped(env.u_max);
        let out = env.step(&s, &a, rng)?;
        traj.actions.push(a);
        traj.costs.push(out.cost);
        traj.states.push(out.next_state);
        traj.plan_feasible.push(p.feasible);
        warm = Some(shift_warm_start(&p.flat));
        s = out.next_state;
        if out.violated {
            traj.violated = true;
            break;
        }
        if out.done {
            traj.completed = true;
            break;
        }
    }
    let episode_cost = if traj.violated {
        env.horizon_t as f64
    } else {
        traj.total_cost().to_f64_lossy()
    };
    let n = traj.plan_feasible.len();
    let feasible = traj.plan_feasible.iter().filter(|&&f| f).count();
    Ok(Episode {
        trajectory: traj,
        episode_cost,
        planner_feasible_rate: if n == 0 { 1.0 } else { feasible as f64 / n as f64 },
    })
}

fn record<T>(cfg: &RunConfig, iteration: usize, ep: &Episode<T>, wall: f64) -> RunRecord {
    RunRecord {
        iteration,
        mode: cfg.mode,
        task: cfg.task,
        episode_cost: ep.episode_cost,
        completed: ep.trajectory.completed,
        violated: ep.trajectory.violated,
        planner_feasible_rate: ep.planner_feasible_rate,
        wall_time_s: if cfg.schedule.record_wall_time { wall } else { 0.0 },
    }
}

pub fn load_or_generate_demos<T: Scalar>(cfg: &RunConfig, env: &EnvSpec<T>) -> Result<Vec<Trajectory<T>>> {
    match &cfg.demos_file {
        Some(path) => {
            let demos: Vec<Trajectory<T>> = artifacts::read_json(path)?;
            if demos.is_empty() {
                return Err(Error::Demo(format!("{} holds no demonstrations", path.display())));
            }
            if let Some(i) = demos.iter().position(|d| !d.is_success()) {
                return Err(Error::Demo(format!("demonstration {i} in {} is not successful", path.display())));
            }
            Ok(demos)
        }
        None => generate_demos(env, &cfg.demos, &mut stream_rng(cfg.seed, Stream::Demos, 0)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingOutcome<T> {
    pub records: Vec<RunRecord>,
    pub models: Models<T>,
    pub buffer: Buffer<T>,
    pub initial_stats: RefitStats,
}

/// Runs a full training job, writing every artifact into `out_dir`.
///
/// A failed refit or episode writes a `FAILED` marker next to the artifacts
/// produced so far.
pub fn run_training<T: Scalar>(
    cfg: &RunConfig,
    out_dir: &Path,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<TrainingOutcome<T>> {
    let cfg = cfg.resolve()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let failed = out_dir.join(FAILED_FILE);
    if failed.exists() {
        std::fs::remove_file(&failed).map_err(|e| Error::io(&failed, e))?;
    }
    let cfg_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    let result = train_inner(&cfg, out_dir, &mut on_record);
    if let Err(e) = &result {
        let _ = std::fs::write(&failed, format!("{e}\n"));
    }
    result
}

fn train_inner<T: Scalar>(
    cfg: &RunConfig,
    out_dir: &Path,
    on_record: &mut impl FnMut(&RunRecord),
) -> Result<TrainingOutcome<T>> {
    let env: EnvSpec<T> = cfg.env_spec()?;
    let demos = load_or_generate_demos(cfg, &env)?;
    artifacts::write_json(&out_dir.join(DEMOS_FILE), &demos)?;
    let mut buffer = Buffer::new(demos);
    let (mut models, initial_stats) = initial_fit(cfg, &env, &buffer)?;
    artifacts::save_models(out_dir, &models)?;

    let mut metrics = MetricsWriter::create(&out_dir.join(METRICS_FILE))?;
    let mut trajs = TrajectoryWriter::create(&out_dir.join(TRAJECTORIES_FILE))?;
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let with_ctx = |e: Error| Error::Iteration {
            iteration: it,
            source: Box::new(e),
        };
        let t0 = Instant::now();
        let ep = run_episode(
            &env,
            &models,
            &cfg.planner,
            &mut stream_rng(cfg.seed, Stream::Episode, it as u64),
        )
        .map_err(with_ctx)?;
        let rec = record(cfg, it, &ep, t0.elapsed().as_secs_f64());
        metrics.write(&rec)?;
        trajs.write(Phase::Train, it, &ep.trajectory)?;
        on_record(&rec);
        records.push(rec);
        buffer.episodes.push(ep.trajectory);
        refit_all(
            &mut models,
            &buffer,
            &env,
            cfg,
            &cfg.schedule.per_iteration,
            &mut stream_rng(cfg.seed, Stream::Refit, it as u64 + 1),
        )
        .map_err(with_ctx)?;
        artifacts::save_models(out_dir, &models)?;
    }
    Ok(TrainingOutcome {
        records,
        models,
        buffer,
        initial_stats,
    })
}

/// Rolls out `episodes` evaluation episodes with the frozen checkpoints of a
/// finished run and appends them to the run's logs.
pub fn run_eval<T: Scalar>(run_dir: &Path, episodes: usize, seed: Option<u64>) -> Result<Vec<RunRecord>> {
    let mut cfg = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let env: EnvSpec<T> = cfg.env_spec()?;
    let models: Models<T> = artifacts::load_models(run_dir)?;
    let mut metrics = MetricsWriter::append(&run_dir.join(EVAL_METRICS_FILE))?;
    let mut trajs = TrajectoryWriter::append(&run_dir.join(TRAJECTORIES_FILE))?;
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let t0 = Instant::now();
        let ep = run_episode(&env, &models, &cfg.planner, &mut stream_rng(cfg.seed, Stream::Eval, i as u64)).map_err(
            |e| Error::Iteration {
                iteration: i,
                source: Box::new(e),
            },
        )?;
        let rec = record(&cfg, i, &ep, t0.elapsed().as_secs_f64());
        metrics.write(&rec)?;
        trajs.write(Phase::Eval, i, &ep.trajectory)?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskId;

    fn tiny(mode: Mode) -> RunConfig {
        let mut c = RunConfig::desk(TaskId::Pointbot1, mode, 5);
        c.iterations = 2;
        c.networks.hidden_width = 8;
        c.networks.ensemble_size = 2;
        c.demos.n_demos = 3;
        c.schedule.initial = RefitBudget {
            dynamics_epochs: 2,
            value_epochs: 2,
            lyapunov_epochs: 2,
        };
        c.schedule.per_iteration = c.schedule.initial;
        c.planner.population = 20;
        c.planner.elites = 4;
        c.planner.cem_iters = 2;
        c.planner.particles = 4;
        c.planner.horizon = 5;
        c
    }

    #[test]
    fn streams_are_distinct_and_stable() {
        let a: u64 = stream_rng(1, Stream::Episode, 0).random();
        let b: u64 = stream_rng(1, Stream::Episode, 1).random();
        let c: u64 = stream_rng(1, Stream::Eval, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stream_rng(1, Stream::Episode, 0).random::<u64>());
    }

    #[test]
    fn modes_build_only_their_terminal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m: Models<f64> = build_models(&tiny(Mode::Saved), &mut rng);
        assert!(matches!(m.terminal, TerminalValue::Saved(_)));
        let m: Models<f64> = build_models(&tiny(Mode::Salved), &mut rng);
        assert!(matches!(m.terminal, TerminalValue::Salved(_)));
    }

    #[test]
    fn smoke_run_writes_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Mode::Salved);
        let out = run_training::<f64>(&cfg, dir.path(), |_| {}).unwrap();
        assert_eq!(out.records.len(), 2);
        let demo_steps: usize = out.buffer.demos.iter().map(|d| d.len()).sum();
        let ep_steps: usize = out.buffer.episodes.iter().map(|d| d.len()).sum();
        assert_eq!(out.buffer.n_transitions(), demo_steps + ep_steps);
        for t in &out.buffer.episodes {
            assert!(t.states.len() <= 51);
        }
        for r in &out.records {
            assert!((0.0..=50.0).contains(&r.episode_cost));
        }
        assert_eq!(artifacts::read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), out.records);
        assert!(!dir.path().join(FAILED_FILE).exists());
    }

    #[test]
    fn demo_only_refit_equals_initial_fit() {
        let cfg = tiny(Mode::Saved).resolve().unwrap();
        let env: EnvSpec<f64> = cfg.env_spec().unwrap();
        let demos = load_or_generate_demos(&cfg, &env).unwrap();
        let buffer = Buffer::new(demos);
        let (m1, s1) = initial_fit(&cfg, &env, &buffer).unwrap();
        let mut m2 = build_models(&cfg, &mut stream_rng(cfg.seed, Stream::Init, 0));
        let s2 = refit_all(
            &mut m2,
            &buffer,
            &env,
            &cfg,
            &cfg.schedule.initial,
            &mut stream_rng(cfg.seed, Stream::Refit, 0),
        )
        .unwrap();
        assert_eq!(s1, s2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn episode_from_goal_is_empty() {
        let mut cfg = tiny(Mode::Salved);
        cfg.env.start_state = Some(State::new(0.0, 0.0, 0.0, 0.0));
        let cfg = cfg.resolve().unwrap();
        let env: EnvSpec<f64> = cfg.env_spec().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let models = build_models(&cfg, &mut rng);
        let ep = run_episode(&env, &models, &cfg.planner, &mut rng).unwrap();
        assert_eq!(ep.episode_cost, 0.0);
        assert!(ep.trajectory.completed);
        assert_eq!(ep.trajectory.len(), 0);
    }
}
