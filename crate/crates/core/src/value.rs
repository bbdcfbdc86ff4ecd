//! Terminal-cost estimators.
//!
//! * [`LyapunovValue`]: `V(x) = xᵀ(l_l·I + M(x)ᵀM(x))x` where `M(x)` is the
//!   `n_V × n_x` reshaped output of a network. `V(0) = 0` and
//!   `V(x) ≥ l_l‖x‖²` hold for any weights. Trained with the control-Lyapunov
//!   loss below, jointly with the level `l_s`.
//! * [`ValueEnsemble`]: the baseline's ensemble regressing sparse cost-to-go.
//!
//! Per transition `(x, x')`, with `V = V(x)`:
//!
//! ```text
//! I     = 0.5 (sign(l_s − V) + 1)
//! ΔV    = V(x') − λV + v·I
//! J_s   = ReLU(ΔV) / (V + ε)
//! J_vol = sign(ΔV) (l_s − V)
//! J     = (I / ρ) J_s + J_vol
//! ```
//!
//! `sign` and `I` are held constant when differentiating.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{bootstrap_indices, TrainConfig};
use crate::env::{EnvSpec, State, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Gradients, Mlp};
use crate::scalar::{sign0, Scalar};
use crate::FitStats;

pub const LEVEL_FLOOR: f64 = 1e-6;

/// Hyper-parameters of the Lyapunov value and its training loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    pub n_v: usize,
    pub l_l: f64,
    pub s_v: f64,
    pub l_s_init: f64,
    pub lambda: f64,
    pub v_margin: f64,
    pub rho: f64,
    pub eps: f64,
    /// Adam step size for `l_s`.
    pub level_lr: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            n_v: 8,
            l_l: 0.01,
            s_v: 0.001,
            l_s_init: 1.0,
            lambda: 0.9,
            v_margin: 0.1,
            rho: 0.1,
            eps: 1e-3,
            level_lr: 1e-2,
        }
    }
}

impl LyapunovConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("lyapunov: {m}")));
        if self.n_v == 0 {
            return bad("n_v must be >= 1");
        }
        if !(self.l_l > 0.0) {
            return bad("l_l must be > 0");
        }
        if !(self.s_v > 0.0) {
            return bad("s_v must be > 0");
        }
        if !(self.l_s_init > 0.0) {
            return bad("l_s_init must be > 0");
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.v_margin) {
            return bad("v_margin must lie in [0, 1]");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be > 0");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LyapunovValue<T> {
    v_net: Mlp<T>,
    n_x: usize,
    n_v: usize,
    pub l_l: T,
    pub s_v: T,
    pub l_s: T,
    /// Per-dimension divisor applied to `x` before it enters the network.
    /// Set from the data on the first fit.
    input_scale: Option<Vec<T>>,
    /// Hyper-parameters kept with the weights so checkpoints are resumable.
    pub config: LyapunovConfig,
}

impl<T: Scalar> LyapunovValue<T> {
    pub fn new<R: Rng + ?Sized>(n_x: usize, hidden: &[usize], config: LyapunovConfig, rng: &mut R) -> Self {
        let mut sizes = vec![n_x];
        sizes.extend_from_slice(hidden);
        sizes.push(config.n_v * n_x);
        Self::with_net(Mlp::new(&sizes, rng), n_x, config)
    }

    /// Wraps an existing network whose output width is `n_v · n_x`.
    pub fn with_net(v_net: Mlp<T>, n_x: usize, config: LyapunovConfig) -> Self {
        assert_eq!(v_net.input_dim(), n_x, "v_net input must be n_x wide");
        assert_eq!(v_net.output_dim(), config.n_v * n_x, "v_net output must be n_v*n_x wide");
        LyapunovValue {
            v_net,
            n_x,
            n_v: config.n_v,
            l_l: T::cst(config.l_l),
            s_v: T::cst(config.s_v),
            l_s: T::cst(config.l_s_init),
            input_scale: None,
            config,
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.v_net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.v_net
    }

    pub fn input_scale(&self) -> Option<&[T]> {
        self.input_scale.as_deref()
    }

    fn net_inputs(&self, xs: ArrayView2<T>) -> Array2<T> {
        let mut z = xs.to_owned();
        if let Some(scale) = &self.input_scale {
            for mut r in z.rows_mut() {
                r.iter_mut().zip(scale).for_each(|(v, &s)| *v = *v / s);
            }
        }
        z
    }

    /// `M(x)` as an `n_V × n_x` matrix.
    pub fn matrix(&self, x: &[T]) -> Array2<T> {
        let xs = ArrayView2::from_shape((1, self.n_x), x).expect("x must have n_x entries");
        let out = self.v_net.forward_batch(self.net_inputs(xs).view());
        Array2::from_shape_vec((self.n_v, self.n_x), out.into_raw_vec_and_offset().0).expect("reshape")
    }

    /// Unscaled `V(x)`; the planner multiplies by `s_v`.
    pub fn value(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.n_x, "x must have n_x entries");
        let xs = ArrayView2::from_shape((1, self.n_x), x).expect("row");
        self.value_batch(xs)[0]
    }

    pub fn value_batch(&self, xs: ArrayView2<T>) -> Array1<T> {
        let out = self.v_net.forward_batch(self.net_inputs(xs).view());
        self.quadratic_forms(xs, &out).0
    }

    /// `V` per row plus `M x` per row (`n_V` entries each).
    fn quadratic_forms(&self, xs: ArrayView2<T>, net_out: &Array2<T>) -> (Array1<T>, Array2<T>) {
        let n = xs.nrows();
        let mut vals = Array1::zeros(n);
        let mut mx = Array2::zeros((n, self.n_v));
        for r in 0..n {
            let x = xs.row(r);
            let o = net_out.row(r);
            let mut v = self.l_l * x.iter().map(|&a| a * a).sum::<T>();
            for i in 0..self.n_v {
                let mut acc = T::zero();
                for j in 0..self.n_x {
                    acc += o[i * self.n_x + j] * x[j];
                }
                mx[[r, i]] = acc;
                v += acc * acc;
            }
            vals[r] = v;
        }
        (vals, mx)
    }

    /// Planner terminal term `s_v · V(x)`.
    pub fn terminal_cost(&self, x: &[T]) -> T {
        self.s_v * self.value(x)
    }

    /// Empirical `max V(x) / ‖x‖²` over the given rows (reported, not used).
    pub fn growth_diagnostic(&self, xs: ArrayView2<T>) -> T {
        let v = self.value_batch(xs);
        xs.rows()
            .into_iter()
            .zip(v.iter())
            .filter_map(|(x, &vx)| {
                let n2 = x.iter().map(|&a| a * a).sum::<T>();
                (n2 > T::zero()).then(|| vx / n2)
            })
            .fold(T::zero(), |a, b| a.max(b))
    }

    fn set_input_scale_from(&mut self, xs: &Array2<T>) {
        let n = T::cst(xs.nrows() as f64);
        let scale = (0..self.n_x)
            .map(|j| {
                let col = xs.column(j);
                let mean = col.sum() / n;
                let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let s = var.sqrt();
                if s > T::cst(1e-8) {
                    s
                } else {
                    T::one()
                }
            })
            .collect();
        self.input_scale = Some(scale);
    }
}

/// The loss hyper-parameters in the scalar type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovLossConfig<T> {
    pub lambda: T,
    pub v_margin: T,
    pub rho: T,
    pub eps: T,
}

impl<T: Scalar> LyapunovLossConfig<T> {
    pub fn from_config(c: &LyapunovConfig) -> Self {
        LyapunovLossConfig {
            lambda: T::cst(c.lambda),
            v_margin: T::cst(c.v_margin),
            rho: T::cst(c.rho),
            eps: T::cst(c.eps),
        }
    }
}

/// Goal-centred `(x, x')` pairs, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovData<T> {
    pub xs: Array2<T>,
    pub xs_next: Array2<T>,
}

impl<T: Scalar> LyapunovData<T> {
    pub fn new(xs: Array2<T>, xs_next: Array2<T>) -> Result<Self> {
        if xs.raw_dim() != xs_next.raw_dim() {
            return Err(Error::Shape {
                expected: xs.nrows(),
                actual: xs_next.nrows(),
            });
        }
        Ok(LyapunovData { xs, xs_next })
    }

    pub fn from_pairs<'a, I>(env: &EnvSpec<T>, pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a State<T>, &'a State<T>)>,
    {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (s, s2) in pairs {
            a.extend(env.goal_centered(s).to_array());
            b.extend(env.goal_centered(s2).to_array());
        }
        let n = a.len() / STATE_DIM;
        LyapunovData {
            xs: Array2::from_shape_vec((n, STATE_DIM), a).expect("shape"),
            xs_next: Array2::from_shape_vec((n, STATE_DIM), b).expect("shape"),
        }
    }

    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.nrows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        LyapunovData {
            xs: self.xs.select(Axis(0), idx),
            xs_next: self.xs_next.select(Axis(0), idx),
        }
    }
}

/// Per-sample loss and its partials with respect to `V(x)`, `V(x')`, `l_s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms<T> {
    pub loss: T,
    pub d_v: T,
    pub d_v_next: T,
    pub d_level: T,
}

pub fn loss_terms<T: Scalar>(v: T, v_next: T, level: T, cfg: &LyapunovLossConfig<T>) -> LossTerms<T> {
    let half = T::cst(0.5);
    let ind = half * (sign0(level - v) + T::one());
    let dv = v_next - cfg.lambda * v + cfg.v_margin * ind;
    let s = sign0(dv);
    let denom = v + cfg.eps;
    let relu = dv.max(T::zero());
    let active = if dv > T::zero() { T::one() } else { T::zero() };
    let w = ind / cfg.rho;
    LossTerms {
        loss: w * relu / denom + s * (level - v),
        d_v_next: w * active / denom,
        d_v: w * (-cfg.lambda * active / denom - relu / (denom * denom)) - s,
        d_level: s,
    }
}

/// Mean loss over the batch.
pub fn lyapunov_loss<T: Scalar>(lv: &LyapunovValue<T>, cfg: &LyapunovLossConfig<T>, batch: &LyapunovData<T>) -> T {
    assert!(!batch.is_empty(), "lyapunov_loss needs a nonempty batch");
    let v = lv.value_batch(batch.xs.view());
    let vn = lv.value_batch(batch.xs_next.view());
    let n = T::cst(batch.len() as f64);
    v.iter()
        .zip(vn.iter())
        .map(|(&a, &b)| loss_terms(a, b, lv.l_s, cfg).loss)
        .sum::<T>()
        / n
}

/// Mean loss with gradients for the network and for `l_s`.
pub fn lyapunov_loss_grad<T: Scalar>(
    lv: &LyapunovValue<T>,
    cfg: &LyapunovLossConfig<T>,
    batch: &LyapunovData<T>,
) -> (T, Gradients<T>, T) {
    let b = batch.len();
    assert!(b > 0, "lyapunov_loss needs a nonempty batch");
    let mut both = Array2::zeros((2 * b, lv.n_x));
    both.slice_mut(ndarray::s![..b, ..]).assign(&batch.xs);
    both.slice_mut(ndarray::s![b.., ..]).assign(&batch.xs_next);
    let cache = lv.v_net.forward_cached(lv.net_inputs(both.view()).view());
    let out = cache.output();
    let (vals, mx) = lv.quadratic_forms(both.view(), &out);
    let inv_n = T::one() / T::cst(b as f64);
    let two = T::cst(2.0);
    let mut loss = T::zero();
    let mut d_level = T::zero();
    let mut dvals = vec![T::zero(); 2 * b];
    for r in 0..b {
        let t = loss_terms(vals[r], vals[b + r], lv.l_s, cfg);
        loss += t.loss * inv_n;
        d_level += t.d_level * inv_n;
        dvals[r] = t.d_v * inv_n;
        dvals[b + r] = t.d_v_next * inv_n;
    }
    // dV/dM_ij = 2 (Mx)_i x_j
    let mut up = Array2::zeros(out.raw_dim());
    for r in 0..2 * b {
        if dvals[r] == T::zero() {
            continue;
        }
        for i in 0..lv.n_v {
            let c = two * dvals[r] * mx[[r, i]];
            for j in 0..lv.n_x {
                up[[r, i * lv.n_x + j]] = c * both[[r, j]];
            }
        }
    }
    let (g, _) = lv.v_net.backward_batch(&cache, up.view());
    (loss, g, d_level)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LyapunovFitStats {
    pub fit: FitStats,
    /// `l_s` after each epoch.
    pub level_trace: Vec<f64>,
}

pub fn fit_lyapunov<T: Scalar, R: Rng + ?Sized>(
    lv: &mut LyapunovValue<T>,
    cfg: &LyapunovLossConfig<T>,
    data: &LyapunovData<T>,
    epochs: usize,
    train: &TrainConfig,
    rng: &mut R,
) -> Result<LyapunovFitStats> {
    if data.is_empty() {
        return Err(Error::EmptyData("lyapunov fit needs at least one transition".into()));
    }
    if lv.input_scale.is_none() {
        lv.set_input_scale_from(&data.xs);
    }
    let mut opt = AdamState::for_mlp(train.adam, &lv.v_net);
    let mut level_opt = AdamState::<T>::new(
        AdamConfig {
            lr: lv.config.level_lr,
            ..train.adam
        },
        &[1],
    );
    let floor = T::cst(LEVEL_FLOOR);
    let mut level = [lv.l_s.max(floor)];
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let batch = train.batch_size.max(1);
    let mut stats = LyapunovFitStats::default();
    for _ in 0..epochs {
        idx.shuffle(rng);
        let mut total = 0.0;
        for chunk in idx.chunks(batch) {
            let mb = data.select(chunk);
            let (loss, g, d_level) = lyapunov_loss_grad(lv, cfg, &mb);
            total += loss.to_f64_lossy() * chunk.len() as f64;
            opt.apply(lv.v_net.tensors_mut(), g.tensors());
            level_opt.apply(vec![&mut level[..]], vec![&[d_level][..]]);
            level[0] = level[0].max(floor);
            lv.l_s = level[0];
        }
        stats.fit.epoch_losses.push(total / data.len() as f64);
        stats.level_trace.push(lv.l_s.to_f64_lossy());
    }
    if !lv.v_net.is_finite() || !lv.l_s.is_finite() {
        return Err(Error::Numeric("lyapunov parameters diverged".into()));
    }
    stats.fit.final_loss = stats.fit.epoch_losses.last().copied().unwrap_or(f64::NAN);
    Ok(stats)
}

/// Fraction of rows with `V(x') ≤ λ V(x)`.
pub fn decrease_rate<T: Scalar>(lv: &LyapunovValue<T>, lambda: T, data: &LyapunovData<T>) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let v = lv.value_batch(data.xs.view());
    let vn = lv.value_batch(data.xs_next.view());
    let hits = v.iter().zip(vn.iter()).filter(|(&a, &b)| b <= lambda * a).count();
    hits as f64 / data.len() as f64
}

/// Undiscounted suffix sums.
pub fn cost_to_go_targets<T: Scalar>(costs: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); costs.len()];
    let mut acc = T::zero();
    for (i, &c) in costs.iter().enumerate().rev() {
        acc += c;
        out[i] = acc;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValueEnsemble<T> {
    members: Vec<Mlp<T>>,
    in_mean: Vec<T>,
    in_std: Vec<T>,
    fitted: bool,
}

/// States and their cost-to-go along one successful trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSamples<T> {
    pub states: Vec<State<T>>,
    pub targets: Vec<T>,
}

impl<T: Scalar> ValueSamples<T> {
    /// `states` has one more entry than `costs`; the last state gets target 0.
    pub fn from_trajectory(states: &[State<T>], costs: &[T]) -> Self {
        assert_eq!(states.len(), costs.len() + 1, "need one more state than costs");
        let mut targets = cost_to_go_targets(costs);
        targets.push(T::zero());
        ValueSamples {
            states: states.to_vec(),
            targets,
        }
    }
}

impl<T: Scalar> ValueEnsemble<T> {
    pub fn new<R: Rng + ?Sized>(n_members: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![STATE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::from_members(
            (0..n_members).map(|_| Mlp::new(&sizes, rng)).collect(),
            false,
        )
    }

    pub fn from_members(members: Vec<Mlp<T>>, fitted: bool) -> Self {
        assert!(!members.is_empty(), "value ensemble needs members");
        ValueEnsemble {
            members,
            in_mean: vec![T::zero(); STATE_DIM],
            in_std: vec![T::one(); STATE_DIM],
            fitted,
        }
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

    fn normalized(&self, xs: ArrayView2<T>) -> Array2<T> {
        let mut z = xs.to_owned();
        for mut r in z.rows_mut() {
            for j in 0..STATE_DIM {
                r[j] = (r[j] - self.in_mean[j]) / self.in_std[j];
            }
        }
        z
    }

    pub fn value_estimate(&self, x: &State<T>) -> Result<T> {
        let row = x.to_array();
        let xs = ArrayView2::from_shape((1, STATE_DIM), &row).expect("row");
        Ok(self.value_estimate_batch(xs)?[0])
    }

    /// Mean of member outputs per row.
    pub fn value_estimate_batch(&self, xs: ArrayView2<T>) -> Result<Array1<T>> {
        if !self.fitted {
            return Err(Error::Unfitted("value ensemble has not been fitted".into()));
        }
        let z = self.normalized(xs);
        let mut acc = Array1::zeros(xs.nrows());
        for m in &self.members {
            acc += &m.forward_batch(z.view()).column(0);
        }
        Ok(acc / T::cst(self.members.len() as f64))
    }
}

pub fn fit_value_ensemble<T: Scalar, R: Rng + ?Sized>(
    ve: &mut ValueEnsemble<T>,
    trajectories: &[ValueSamples<T>],
    epochs: usize,
    train: &TrainConfig,
    rng: &mut R,
) -> Result<FitStats> {
    let n: usize = trajectories.iter().map(|t| t.states.len()).sum();
    if trajectories.is_empty() || n == 0 {
        return Err(Error::EmptyData(
            "value ensemble needs at least one successful trajectory; seed the buffer with demonstrations".into(),
        ));
    }
    let mut xs = Array2::zeros((n, STATE_DIM));
    let mut ys = Array1::zeros(n);
    let mut r = 0;
    for t in trajectories {
        for (s, &y) in t.states.iter().zip(&t.targets) {
            xs.row_mut(r).assign(&Array1::from(s.to_array().to_vec()));
            ys[r] = y;
            r += 1;
        }
    }
    let nn = T::cst(n as f64);
    for j in 0..STATE_DIM {
        let col = xs.column(j);
        let mean = col.sum() / nn;
        let std = (col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn).sqrt();
        ve.in_mean[j] = mean;
        ve.in_std[j] = if std > T::cst(1e-8) { std } else { T::one() };
    }
    let z = ve.normalized(xs.view());
    let seeds: Vec<u64> = (0..ve.members.len()).map(|_| rng.random()).collect();
    let batch = train.batch_size.max(1);
    let adam = train.adam;
    let resample = train.bootstrap;
    let per_member: Vec<Vec<f64>> = ve
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
                    let x = z.select(Axis(0), chunk);
                    let cache = net.forward_cached(x.view());
                    let out = cache.output();
                    let scale = T::cst(2.0) / T::cst(chunk.len() as f64);
                    let mut up = Array2::zeros(out.raw_dim());
                    for (k, &i) in chunk.iter().enumerate() {
                        let e = out[[k, 0]] - ys[i];
                        total += (e * e).to_f64_lossy();
                        up[[k, 0]] = scale * e;
                    }
                    let (g, _) = net.backward_batch(&cache, up.view());
                    opt.apply(net.tensors_mut(), g.tensors());
                }
                losses.push(total / n as f64);
            }
            losses
        })
        .collect();
    if ve.members.iter().any(|m| !m.is_finite()) {
        return Err(Error::Numeric("value ensemble diverged".into()));
    }
    ve.fitted = true;
    Ok(FitStats::from_member_losses(&per_member))
}
