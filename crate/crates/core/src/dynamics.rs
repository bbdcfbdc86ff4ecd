//! Probabilistic ensemble dynamics model.
//!
//! Each member maps a normalised `(state, action)` pair to a diagonal
//! Gaussian over the state delta. Members are fitted by Gaussian NLL on their
//! own bootstrap resample of the data. Multi-step prediction propagates
//! particles, each bound to one member for the whole horizon (TS1) unless
//! [`Propagation::TsInf`] is selected.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, State, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::{clamp_logvar, gaussian_nll, gaussian_nll_grad, AdamConfig, AdamState, Mlp};
use crate::scalar::Scalar;
use crate::FitStats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transition<T> {
    pub state: State<T>,
    pub action: Action<T>,
    pub next_state: State<T>,
}

impl<T: Scalar> Transition<T> {
    pub fn is_finite(&self) -> bool {
        self.state.is_finite()
            && self.next_state.is_finite()
            && self.action.ax.is_finite()
            && self.action.ay.is_finite()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    /// One member per particle for the whole horizon.
    #[default]
    Ts1,
    /// Member re-drawn at every step.
    TsInf,
}

/// Mini-batch training settings shared by all fitted networks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Each ensemble member trains on its own resample drawn with replacement.
    pub bootstrap: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            adam: AdamConfig::default(),
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EnsembleModel<T> {
    members: Vec<Mlp<T>>,
    in_mean: Vec<T>,
    in_std: Vec<T>,
    /// When set, sampling returns the predicted mean (variance forced to 0).
    pub deterministic: bool,
    fitted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleRollout<T> {
    /// `particles[p]` holds H+1 states starting at the query state.
    pub particles: Vec<Vec<State<T>>>,
    /// Member used by each particle at its first step.
    pub members: Vec<usize>,
}

pub const INPUT_DIM: usize = STATE_DIM + ACTION_DIM;

impl<T: Scalar> EnsembleModel<T> {
    /// `hidden` lists the hidden-layer widths of every member.
    pub fn new<R: Rng + ?Sized>(n_members: usize, hidden: &[usize], rng: &mut R) -> Self {
        assert!(n_members >= 1, "ensemble needs at least one member");
        let mut sizes = vec![INPUT_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * STATE_DIM);
        EnsembleModel {
            members: (0..n_members).map(|_| Mlp::new(&sizes, rng)).collect(),
            in_mean: vec![T::zero(); INPUT_DIM],
            in_std: vec![T::one(); INPUT_DIM],
            deterministic: false,
            fitted: false,
        }
    }

    /// Builds an ensemble from explicit members (used by tests and tooling).
    pub fn from_members(members: Vec<Mlp<T>>) -> Result<Self> {
        for m in &members {
            if m.input_dim() != INPUT_DIM || m.output_dim() != 2 * STATE_DIM {
                return Err(Error::Shape {
                    expected: INPUT_DIM,
                    actual: m.input_dim(),
                });
            }
        }
        Ok(EnsembleModel {
            members,
            in_mean: vec![T::zero(); INPUT_DIM],
            in_std: vec![T::one(); INPUT_DIM],
            deterministic: false,
            fitted: true,
        })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Mlp<T>] {
        &self.members
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn normalizer(&self) -> (&[T], &[T]) {
        (&self.in_mean, &self.in_std)
    }

    fn refresh_normalizer(&mut self, inputs: &Array2<T>) {
        let n = T::cst(inputs.nrows() as f64);
        for j in 0..INPUT_DIM {
            let col = inputs.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let std = var.sqrt();
            self.in_mean[j] = mean;
            self.in_std[j] = if std > T::cst(1e-8) { std } else { T::one() };
        }
    }

    /// Raw `[state | action]` rows normalised in place.
    fn normalize_rows(&self, rows: &mut Array2<T>) {
        for mut r in rows.rows_mut() {
            for j in 0..INPUT_DIM {
                r[j] = (r[j] - self.in_mean[j]) / self.in_std[j];
            }
        }
    }

    /// Mean delta and clamped log-variance for a batch of raw inputs.
    pub fn predict_batch(&self, member: usize, raw_inputs: ArrayView2<T>) -> (Array2<T>, Array2<T>) {
        let mut x = raw_inputs.to_owned();
        self.normalize_rows(&mut x);
        let out = self.members[member].forward_batch(x.view());
        let mean = out.slice(ndarray::s![.., ..STATE_DIM]).to_owned();
        let logvar = out.slice(ndarray::s![.., STATE_DIM..]).mapv(clamp_logvar);
        (mean, logvar)
    }

    pub fn predict(&self, member: usize, state: &State<T>, action: &Action<T>) -> (Vec<T>, Vec<T>) {
        let row = input_row(state, action);
        let x = ArrayView2::from_shape((1, INPUT_DIM), &row).expect("row");
        let (m, lv) = self.predict_batch(member, x);
        (m.into_raw_vec_and_offset().0, lv.into_raw_vec_and_offset().0)
    }

    pub fn sample_next<R: Rng + ?Sized>(
        &self,
        member: usize,
        state: &State<T>,
        action: &Action<T>,
        rng: &mut R,
    ) -> State<T> {
        let (mean, logvar) = self.predict(member, state, action);
        let s = state.to_array();
        let mut out = [T::zero(); STATE_DIM];
        for j in 0..STATE_DIM {
            let noise = if self.deterministic {
                T::zero()
            } else {
                (logvar[j] * T::cst(0.5)).exp() * T::standard_normal(rng)
            };
            out[j] = s[j] + mean[j] + noise;
        }
        State::from_array(out)
    }

    /// One propagation step for many rows at once.
    ///
    /// `groups[m]` lists the rows handled by member `m`; `noise` holds one
    /// standard-normal draw per row and state dimension.
    pub fn propagate_batch(
        &self,
        states: &Array2<T>,
        actions: &Array2<T>,
        groups: &[Vec<usize>],
        noise: &Array2<T>,
    ) -> Array2<T> {
        let n = states.nrows();
        let mut inputs = Array2::zeros((n, INPUT_DIM));
        inputs.slice_mut(ndarray::s![.., ..STATE_DIM]).assign(states);
        inputs.slice_mut(ndarray::s![.., STATE_DIM..]).assign(actions);
        self.normalize_rows(&mut inputs);
        let outputs: Vec<Array2<T>> = groups
            .par_iter()
            .enumerate()
            .map(|(m, rows)| {
                if rows.is_empty() {
                    return Array2::zeros((0, 2 * STATE_DIM));
                }
                let x = inputs.select(Axis(0), rows);
                self.members[m].forward_batch(x.view())
            })
            .collect();
        let half = T::cst(0.5);
        let mut next = states.clone();
        for (rows, out) in groups.iter().zip(outputs) {
            for (k, &i) in rows.iter().enumerate() {
                for j in 0..STATE_DIM {
                    let mut d = out[[k, j]];
                    if !self.deterministic {
                        d += (clamp_logvar(out[[k, STATE_DIM + j]]) * half).exp() * noise[[i, j]];
                    }
                    next[[i, j]] += d;
                }
            }
        }
        next
    }

    pub fn rollout_particles<R: Rng + ?Sized>(
        &self,
        state: &State<T>,
        actions: &[Action<T>],
        n_particles: usize,
        propagation: Propagation,
        rng: &mut R,
    ) -> ParticleRollout<T> {
        assert!(n_particles >= 1, "need at least one particle");
        let n_m = self.n_members();
        let mut members: Vec<usize> = (0..n_particles).map(|_| rng.random_range(0..n_m)).collect();
        let first_members = members.clone();
        let s0 = state.to_array();
        let mut cur = Array2::from_shape_fn((n_particles, STATE_DIM), |(_, j)| s0[j]);
        let mut particles: Vec<Vec<State<T>>> = vec![vec![*state]; n_particles];
        for (h, a) in actions.iter().enumerate() {
            if h > 0 && propagation == Propagation::TsInf {
                members.iter_mut().for_each(|m| *m = rng.random_range(0..n_m));
            }
            let acts = Array2::from_shape_fn((n_particles, ACTION_DIM), |(_, j)| a.to_array()[j]);
            let noise = Array2::from_shape_simple_fn((n_particles, STATE_DIM), || T::standard_normal(rng));
            let groups = group_rows(&members, n_m);
            cur = self.propagate_batch(&cur, &acts, &groups, &noise);
            for (p, traj) in particles.iter_mut().enumerate() {
                traj.push(State::from_slice(cur.row(p).as_slice().expect("row")));
            }
        }
        ParticleRollout {
            particles,
            members: first_members,
        }
    }
}

pub fn input_row<T: Scalar>(state: &State<T>, action: &Action<T>) -> [T; INPUT_DIM] {
    let s = state.to_array();
    let a = action.to_array();
    [s[0], s[1], s[2], s[3], a[0], a[1]]
}

/// Row indices per member for a member assignment.
pub fn group_rows(assignment: &[usize], n_members: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n_members];
    for (i, &m) in assignment.iter().enumerate() {
        groups[m].push(i);
    }
    groups
}

/// Draws `n` indices from `0..n` with replacement, or returns `0..n`.
pub fn bootstrap_indices<R: Rng + ?Sized>(n: usize, resample: bool, rng: &mut R) -> Vec<usize> {
    if resample {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

pub fn fit_dynamics<T: Scalar, R: Rng + ?Sized>(
    model: &mut EnsembleModel<T>,
    transitions: &[Transition<T>],
    epochs: usize,
    train: &TrainConfig,
    rng: &mut R,
) -> Result<FitStats> {
    if transitions.is_empty() {
        return Err(Error::EmptyData("dynamics fit needs at least one transition".into()));
    }
    if let Some(bad) = transitions.iter().find(|t| !t.is_finite()) {
        return Err(Error::Numeric(format!("non-finite transition {bad:?}")));
    }
    let n = transitions.len();
    let mut inputs = Array2::zeros((n, INPUT_DIM));
    let mut targets = Array2::zeros((n, STATE_DIM));
    for (i, t) in transitions.iter().enumerate() {
        let row = input_row(&t.state, &t.action);
        inputs.row_mut(i).assign(&Array1::from(row.to_vec()));
        let (s, s2) = (t.state.to_array(), t.next_state.to_array());
        for j in 0..STATE_DIM {
            targets[[i, j]] = s2[j] - s[j];
        }
    }
    model.refresh_normalizer(&inputs);
    model.normalize_rows(&mut inputs);

    let seeds: Vec<u64> = (0..model.n_members()).map(|_| rng.random()).collect();
    let batch = train.batch_size.max(1);
    let adam = train.adam;
    let resample = train.bootstrap;
    let per_member: Vec<Vec<f64>> = model
        .members
        .par_iter_mut()
        .zip(seeds)
        .map(|(net, seed)| {
            let mut mrng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = bootstrap_indices(n, resample, &mut mrng);
            let mut opt = AdamState::for_mlp(adam, net);
            let mut losses = Vec::with_capacity(epochs);
            for _ in 0..epochs {
                idx.shuffle(&mut mrng);
                let mut total = 0.0;
                for chunk in idx.chunks(batch) {
                    let x = inputs.select(Axis(0), chunk);
                    let y = targets.select(Axis(0), chunk);
                    let cache = net.forward_cached(x.view());
                    let out = cache.output();
                    let scale = T::one() / T::cst(chunk.len() as f64);
                    let mut up = Array2::zeros(out.raw_dim());
                    for r in 0..chunk.len() {
                        let o = out.row(r);
                        let o = o.as_slice().expect("row");
                        let t = y.row(r);
                        let t = t.as_slice().expect("row");
                        let (mean, lv) = o.split_at(STATE_DIM);
                        total += gaussian_nll(mean, lv, t).to_f64_lossy();
                        let (dm, dlv) = gaussian_nll_grad(mean, lv, t);
                        for j in 0..STATE_DIM {
                            up[[r, j]] = dm[j] * scale;
                            up[[r, STATE_DIM + j]] = dlv[j] * scale;
                        }
                    }
                    let (g, _) = net.backward_batch(&cache, up.view());
                    opt.apply(net.tensors_mut(), g.tensors());
                }
                losses.push(total / n as f64);
            }
            losses
        })
        .collect();
    if model.members.iter().any(|m| !m.is_finite()) {
        return Err(Error::Numeric("dynamics parameters diverged".into()));
    }
    model.fitted = true;
    Ok(FitStats::from_member_losses(&per_member))
}
