//! Receding-horizon planning by the cross-entropy method.
//!
//! A candidate is an `H × 2` block of accelerations, flattened row-major.
//! Each candidate is scored by propagating `P` particles through the dynamics
//! ensemble: the expected sum of sparse step costs plus the terminal value,
//! subject to two particle-fraction constraints (obstacle-free sequences and
//! terminal density above `δ`, each required for at least a `β` fraction).

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::dynamics::{group_rows, EnsembleModel, ParticleRollout, Propagation};
use crate::env::{Action, EnvSpec, State, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::value::{LyapunovValue, ValueEnsemble};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub cem_iters: usize,
    pub beta: f64,
    pub delta: f64,
    pub particles: usize,
    pub infeasible_penalty: f64,
    /// Initial sampling std as a fraction of `u_max`.
    pub init_std_frac: f64,
    pub propagation: Propagation,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 15,
            population: 200,
            elites: 20,
            cem_iters: 5,
            beta: 0.8,
            delta: 0.0,
            particles: 20,
            infeasible_penalty: 1e6,
            init_std_frac: 0.5,
            propagation: Propagation::Ts1,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("planner: {m}")));
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if self.population == 0 || self.elites == 0 {
            return bad("population and elites must be >= 1");
        }
        if self.elites > self.population {
            return bad("elites must not exceed population");
        }
        if self.cem_iters == 0 {
            return bad("cem_iters must be >= 1");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        if self.particles == 0 {
            return bad("particles must be >= 1");
        }
        if !(self.init_std_frac > 0.0) {
            return bad("init_std_frac must be > 0");
        }
        Ok(())
    }
}

/// Terminal cost used at the end of the horizon; exactly one per run mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "lowercase")]
pub enum TerminalValue<T> {
    Saved(ValueEnsemble<T>),
    Salved(LyapunovValue<T>),
}

impl<T: Scalar> TerminalValue<T> {
    /// Terminal term per row of raw states.
    pub fn evaluate_batch(&self, env: &EnvSpec<T>, states: ArrayView2<T>) -> Result<Array1<T>> {
        match self {
            TerminalValue::Saved(ve) => ve.value_estimate_batch(states),
            TerminalValue::Salved(lv) => {
                let mut centered = states.to_owned();
                for mut r in centered.rows_mut() {
                    let c = env.goal_centered(&State::from_slice(r.as_slice().expect("row"))).to_array();
                    r.iter_mut().zip(c).for_each(|(v, cv)| *v = cv);
                }
                Ok(lv.value_batch(centered.view()) * lv.s_v)
            }
        }
    }

    pub fn evaluate(&self, env: &EnvSpec<T>, state: &State<T>) -> Result<T> {
        let row = state.to_array();
        let v = ArrayView2::from_shape((1, STATE_DIM), &row).expect("row");
        Ok(self.evaluate_batch(env, v)?[0])
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            TerminalValue::Saved(_) => "saved",
            TerminalValue::Salved(_) => "salved",
        }
    }
}

/// Everything the planner reads; frozen during a plan call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Models<T> {
    pub dynamics: EnsembleModel<T>,
    pub terminal: TerminalValue<T>,
    pub density: DensityModel<T>,
}

/// Score of one candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score<T> {
    /// Expected cost plus the penalty when infeasible; CEM ranks by this.
    pub cost: T,
    pub expected_cost: T,
    pub feasible: bool,
    pub chance_fraction: T,
    pub density_fraction: T,
    /// Total shortfall of the two fractions below `β` (0 when feasible).
    pub violation: T,
}

impl<T: Scalar> Score<T> {
    /// A feasible score with the given cost; used by synthetic objectives.
    pub fn unconstrained(cost: T) -> Self {
        Score {
            cost,
            expected_cost: cost,
            feasible: true,
            chance_fraction: T::one(),
            density_fraction: T::one(),
            violation: T::zero(),
        }
    }
}

/// Anything CEM can minimise. `candidates` has one flattened sequence per row.
pub trait Objective<T: Scalar> {
    fn evaluate<R: Rng + ?Sized>(&self, candidates: ArrayView2<T>, rng: &mut R) -> Result<Vec<Score<T>>>;
}

/// Settings CEM needs beyond the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CemSettings<T> {
    pub dim: usize,
    pub population: usize,
    pub elites: usize,
    pub iters: usize,
    pub bound: T,
    pub init_std: T,
}

impl<T: Scalar> CemSettings<T> {
    pub fn from_planner(cfg: &PlannerConfig, u_max: T) -> Self {
        CemSettings {
            dim: cfg.horizon * ACTION_DIM,
            population: cfg.population,
            elites: cfg.elites.min(cfg.population),
            iters: cfg.cem_iters,
            bound: u_max,
            init_std: u_max * T::cst(cfg.init_std_frac),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemOutcome<T> {
    pub solution: Vec<T>,
    pub score: Score<T>,
    /// Mean elite cost after each iteration.
    pub elite_trace: Vec<T>,
    /// Final sampling mean (before the feasibility fallback).
    pub mean: Vec<T>,
}

fn sort_key<T: Scalar>(a: &Score<T>, b: &Score<T>) -> std::cmp::Ordering {
    a.cost.partial_cmp(&b.cost).unwrap_or(std::cmp::Ordering::Equal)
}

fn less_violating<T: Scalar>(a: &Score<T>, b: &Score<T>) -> bool {
    (a.violation, a.cost) < (b.violation, b.cost)
}

/// Cross-entropy minimisation over the box `[-bound, bound]^dim`.
///
/// Previous elites stay in the selection pool, so the mean elite cost never
/// increases for a deterministic objective. The returned solution is the
/// final elite mean when it scores feasible, otherwise the best feasible
/// sample seen, otherwise the least-violating sample.
pub fn cem_optimize<T: Scalar, O: Objective<T>, R: Rng + ?Sized>(
    objective: &O,
    settings: &CemSettings<T>,
    warm_start: Option<&[T]>,
    rng: &mut R,
) -> Result<CemOutcome<T>> {
    let dim = settings.dim;
    let mut mean = match warm_start {
        Some(w) if w.len() == dim => w.to_vec(),
        Some(w) => {
            return Err(Error::Shape {
                expected: dim,
                actual: w.len(),
            })
        }
        None => vec![T::zero(); dim],
    };
    let mut std = vec![settings.init_std; dim];
    let clip = |v: T| v.max(-settings.bound).min(settings.bound);
    let mut elites: Vec<(Vec<T>, Score<T>)> = Vec::new();
    let mut best_feasible: Option<(Vec<T>, Score<T>)> = None;
    let mut least_bad: Option<(Vec<T>, Score<T>)> = None;
    let mut trace = Vec::with_capacity(settings.iters);

    for _ in 0..settings.iters {
        let mut cands = Array2::zeros((settings.population, dim));
        for mut row in cands.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = clip(mean[j] + std[j] * T::standard_normal(rng));
            }
        }
        let scores = objective.evaluate(cands.view(), rng)?;
        let mut pool: Vec<(Vec<T>, Score<T>)> = cands
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .zip(scores)
            .collect();
        for (c, s) in &pool {
            if s.feasible && best_feasible.as_ref().is_none_or(|(_, b)| s.cost < b.cost) {
                best_feasible = Some((c.clone(), *s));
            }
            if least_bad.as_ref().is_none_or(|(_, b)| less_violating(s, b)) {
                least_bad = Some((c.clone(), *s));
            }
        }
        pool.append(&mut elites);
        pool.sort_by(|a, b| sort_key(&a.1, &b.1));
        pool.truncate(settings.elites);
        elites = pool;

        let k = T::cst(elites.len() as f64);
        for j in 0..dim {
            let m = elites.iter().map(|(c, _)| c[j]).sum::<T>() / k;
            let var = elites.iter().map(|(c, _)| (c[j] - m) * (c[j] - m)).sum::<T>() / k;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        trace.push(elites.iter().map(|(_, s)| s.cost).sum::<T>() / k);
    }

    let mean_clipped: Vec<T> = mean.iter().map(|&v| clip(v)).collect();
    let m = Array2::from_shape_vec((1, dim), mean_clipped.clone()).expect("row");
    let mean_score = objective.evaluate(m.view(), rng)?[0];
    let (solution, score) = if mean_score.feasible {
        (mean_clipped.clone(), mean_score)
    } else if let Some(bf) = best_feasible {
        bf
    } else {
        match least_bad {
            Some(lb) if less_violating(&lb.1, &mean_score) => lb,
            _ => (mean_clipped.clone(), mean_score),
        }
    };
    Ok(CemOutcome {
        solution,
        score,
        elite_trace: trace,
        mean: mean_clipped,
    })
}

/// Scores candidates by particle rollouts through the learned models.
pub struct ModelObjective<'a, T> {
    pub env: &'a EnvSpec<T>,
    pub models: &'a Models<T>,
    pub cfg: &'a PlannerConfig,
    pub state: State<T>,
}

impl<T: Scalar> Objective<T> for ModelObjective<'_, T> {
    fn evaluate<R: Rng + ?Sized>(&self, candidates: ArrayView2<T>, rng: &mut R) -> Result<Vec<Score<T>>> {
        let h = self.cfg.horizon;
        if candidates.ncols() != h * ACTION_DIM {
            return Err(Error::Shape {
                expected: h * ACTION_DIM,
                actual: candidates.ncols(),
            });
        }
        let n_c = candidates.nrows();
        let p = self.cfg.particles;
        let rows = n_c * p;
        let dynamics = &self.models.dynamics;
        let n_m = dynamics.n_members();
        let env = self.env;

        let mut members: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n_m)).collect();
        let mut groups = group_rows(&members, n_m);
        let s0 = self.state.to_array();
        let mut states = Array2::from_shape_fn((rows, STATE_DIM), |(_, j)| s0[j]);
        let start_done = env.in_goal(&self.state);
        let start_bad = env.violates_constraints(&self.state);
        let mut absorbed = vec![start_done; rows];
        let mut violated = vec![start_bad; rows];
        let mut step_cost = vec![T::zero(); rows];
        let mut acts = Array2::zeros((rows, ACTION_DIM));

        for t in 0..h {
            if t > 0 && self.cfg.propagation == Propagation::TsInf {
                members.iter_mut().for_each(|m| *m = rng.random_range(0..n_m));
                groups = group_rows(&members, n_m);
            }
            for r in 0..rows {
                let c = r / p;
                for j in 0..ACTION_DIM {
                    acts[[r, j]] = candidates[[c, t * ACTION_DIM + j]].max(-env.u_max).min(env.u_max);
                }
            }
            let noise = Array2::from_shape_simple_fn((rows, STATE_DIM), || T::standard_normal(rng));
            let next = dynamics.propagate_batch(&states, &acts, &groups, &noise);
            for r in 0..rows {
                if absorbed[r] {
                    continue;
                }
                let row = next.row(r);
                let row = row.as_slice().expect("row");
                states.row_mut(r).assign(&next.row(r));
                if !row.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric("non-finite particle state".into()));
                }
                if env.violates_position(row[0], row[2]) {
                    violated[r] = true;
                }
                if env.in_goal_slice(row) {
                    absorbed[r] = true;
                } else {
                    step_cost[r] += T::one();
                }
            }
        }

        let terminal = self.models.terminal.evaluate_batch(env, states.view())?;
        let delta = T::cst(self.cfg.delta);
        let beta = T::cst(self.cfg.beta);
        let penalty = T::cst(self.cfg.infeasible_penalty);
        let inv_p = T::one() / T::cst(p as f64);
        let mut out = Vec::with_capacity(n_c);
        for c in 0..n_c {
            let mut total = T::zero();
            let mut safe = 0usize;
            let mut dense = 0usize;
            for r in c * p..(c + 1) * p {
                let term = if absorbed[r] { T::zero() } else { terminal[r] };
                total += step_cost[r] + term;
                if !violated[r] {
                    safe += 1;
                }
                let s = states.row(r);
                if absorbed[r] || self.models.density.exceeds(s.as_slice().expect("row"), delta) {
                    dense += 1;
                }
            }
            let expected = total * inv_p;
            let chance = T::cst(safe as f64) * inv_p;
            let dens = T::cst(dense as f64) * inv_p;
            let feasible = chance >= beta && dens >= beta;
            let violation = (beta - chance).max(T::zero()) + (beta - dens).max(T::zero());
            out.push(Score {
                cost: if feasible { expected } else { expected + penalty },
                expected_cost: expected,
                feasible,
                chance_fraction: chance,
                density_fraction: dens,
                violation,
            });
        }
        Ok(out)
    }
}

/// Fraction of particles whose whole state sequence avoids every obstacle.
pub fn chance_feasible_fraction<T: Scalar>(rollout: &ParticleRollout<T>, env: &EnvSpec<T>) -> T {
    let n = rollout.particles.len();
    if n == 0 {
        return T::zero();
    }
    let safe = rollout
        .particles
        .iter()
        .filter(|seq| seq.iter().all(|s| !env.violates_constraints(s)))
        .count();
    T::cst(safe as f64) / T::cst(n as f64)
}

/// Scores a single action sequence; returns `(penalised cost, feasible)`.
pub fn score_candidate<T: Scalar, R: Rng + ?Sized>(
    candidate: &[Action<T>],
    state: &State<T>,
    env: &EnvSpec<T>,
    models: &Models<T>,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<Score<T>> {
    let flat: Vec<T> = candidate.iter().flat_map(|a| a.to_array()).collect();
    let row = Array2::from_shape_vec((1, flat.len()), flat).expect("row");
    let obj = ModelObjective {
        env,
        models,
        cfg,
        state: *state,
    };
    Ok(obj.evaluate(row.view(), rng)?[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult<T> {
    pub actions: Vec<Action<T>>,
    pub expected_cost: T,
    pub feasible: bool,
    pub chance_fraction: T,
    pub density_fraction: T,
    /// Flattened solution, reusable as the next warm start after shifting.
    pub flat: Vec<T>,
}

/// Drops the first action and pads with zeros.
pub fn shift_warm_start<T: Scalar>(prev: &[T]) -> Vec<T> {
    let mut out: Vec<T> = prev.iter().skip(ACTION_DIM).copied().collect();
    out.extend(std::iter::repeat_n(T::zero(), prev.len().min(ACTION_DIM)));
    out
}

pub fn plan<T: Scalar, R: Rng + ?Sized>(
    state: &State<T>,
    env: &EnvSpec<T>,
    models: &Models<T>,
    cfg: &PlannerConfig,
    warm_start: Option<&[T]>,
    rng: &mut R,
) -> Result<PlanResult<T>> {
    if !models.dynamics.is_fitted() {
        return Err(Error::Unfitted("dynamics model has not been fitted".into()));
    }
    let settings = CemSettings::from_planner(cfg, env.u_max);
    let warm = warm_start.filter(|w| w.len() == settings.dim);
    let obj = ModelObjective {
        env,
        models,
        cfg,
        state: *state,
    };
    let out = cem_optimize(&obj, &settings, warm, rng)?;
    let actions = out
        .solution
        .chunks(ACTION_DIM)
        .map(|c| Action::new(c[0], c[1]))
        .collect();
    Ok(PlanResult {
        actions,
        expected_cost: out.score.expected_cost,
        feasible: out.score.feasible,
        chance_fraction: out.score.chance_fraction,
        density_fraction: out.score.density_fraction,
        flat: out.solution,
    })
}
