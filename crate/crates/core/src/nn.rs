//! Fully-connected networks with swish hidden activations, reverse-mode
//! gradients, Adam, and a diagonal Gaussian negative log-likelihood.
//!
//! Weights are stored as `(fan_in, fan_out)` matrices so a batch `X` with one
//! row per sample maps to `X · W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 0.5;

#[inline]
pub fn swish<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Mlp<T> {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
}

/// Parameter-shaped gradient buffers (sum over the batch).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> Array2<T> {
        // The output layer is linear so its pre-activation is the output.
        self.pre.last().cloned().unwrap_or_else(|| self.inputs[0].clone())
    }
}

impl<T: Scalar> Mlp<T> {
    /// He fan-in initialisation: `W ~ N(0, 2 / fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Self {
        assert!(layer_sizes.len() >= 2, "an Mlp needs at least input and output widths");
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let std = (T::cst(2.0) / T::cst(w[0] as f64)).sqrt();
            let mut m = Array2::zeros((w[0], w[1]));
            m.iter_mut().for_each(|v| *v = std * T::standard_normal(rng));
            weights.push(m);
            biases.push(Array1::zeros(w[1]));
        }
        Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros(layer_sizes: &[usize]) -> Self {
        assert!(layer_sizes.len() >= 2, "an Mlp needs at least input and output widths");
        Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes
                .windows(2)
                .map(|w| Array2::zeros((w[0], w[1])))
                .collect(),
            biases: layer_sizes.windows(2).map(|w| Array1::zeros(w[1])).collect(),
        }
    }

    pub fn from_parts(weights: Vec<Array2<T>>, biases: Vec<Array1<T>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape {
                expected: weights.len(),
                actual: biases.len(),
            });
        }
        let mut sizes = vec![weights[0].nrows()];
        for (w, b) in weights.iter().zip(&biases) {
            let last = *sizes.last().unwrap();
            if w.nrows() != last {
                return Err(Error::Shape {
                    expected: last,
                    actual: w.nrows(),
                });
            }
            if b.len() != w.ncols() {
                return Err(Error::Shape {
                    expected: w.ncols(),
                    actual: b.len(),
                });
            }
            sizes.push(w.ncols());
        }
        Ok(Mlp {
            layer_sizes: sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// Batched forward pass; one sample per row.
    pub fn forward_batch(&self, x: ArrayView2<T>) -> Array2<T> {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let last = self.weights.len() - 1;
        let mut h = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(swish);
            }
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<T>) -> ForwardCache<T> {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut h = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(w);
            z += b;
            inputs.push(h);
            h = if l < last { z.mapv(swish) } else { z.clone() };
            pre.push(z);
        }
        ForwardCache { inputs, pre }
    }

    /// Reverse-mode pass. `upstream` holds dL/d(output) per row; returned
    /// parameter gradients are summed over rows, the input gradient is per row.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache<T>,
        upstream: ArrayView2<T>,
    ) -> (Gradients<T>, Array2<T>) {
        let n_layers = self.weights.len();
        assert_eq!(upstream.ncols(), self.output_dim(), "upstream width mismatch");
        let mut gw = Vec::with_capacity(n_layers);
        let mut gb = Vec::with_capacity(n_layers);
        let mut delta = upstream.to_owned();
        for l in (0..n_layers).rev() {
            if l < n_layers - 1 {
                Zip::from(&mut delta)
                    .and(&cache.pre[l])
                    .for_each(|d, &z| *d *= swish_grad(z));
            }
            let g = cache.inputs[l].t().dot(&delta);
            gw.push(if g.is_standard_layout() { g } else { g.as_standard_layout().into_owned() });
            gb.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&self.weights[l].t());
        }
        gw.reverse();
        gb.reverse();
        (
            Gradients {
                weights: gw,
                biases: gb,
            },
            delta,
        )
    }

    /// Single-sample gradients of `upstream · forward(input)`.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let u = ArrayView2::from_shape((1, upstream.len()), upstream).expect("contiguous row");
        let cache = self.forward_cached(x);
        let (g, dx) = self.backward_batch(&cache, u);
        Ok((g, dx.into_raw_vec_and_offset().0))
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// Parameter tensors in a fixed order: w0, b0, w1, b1, ...
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.len(), b.len()])
            .collect()
    }

    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    pub fn scale(&mut self, s: T) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, tensor_lens: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            m: tensor_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_mlp(config: AdamConfig, net: &Mlp<T>) -> Self {
        Self::new(config, &net.tensor_lens())
    }

    pub fn apply(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        assert_eq!(params.len(), self.m.len(), "tensor count mismatch");
        assert_eq!(grads.len(), self.m.len(), "tensor count mismatch");
        self.step += 1;
        let b1 = T::cst(self.config.beta1);
        let b2 = T::cst(self.config.beta2);
        let lr = T::cst(self.config.lr);
        let eps = T::cst(self.config.eps);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            assert_eq!(p.len(), g.len(), "parameter/gradient length mismatch");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One Adam update of `net` along `grads`.
pub fn adam_step<T: Scalar>(opt: &mut AdamState<T>, net: &mut Mlp<T>, grads: &Gradients<T>) {
    opt.apply(net.tensors_mut(), grads.tensors());
}

#[inline]
pub fn clamp_logvar<T: Scalar>(lv: T) -> T {
    lv.max(T::cst(LOGVAR_MIN)).min(T::cst(LOGVAR_MAX))
}

/// `0.5 · Σ [(target − mean)² · e^(−logvar) + logvar]` with logvar clamped.
pub fn gaussian_nll<T: Scalar>(mean: &[T], logvar: &[T], target: &[T]) -> T {
    assert!(mean.len() == logvar.len() && mean.len() == target.len());
    let half = T::cst(0.5);
    mean.iter()
        .zip(logvar)
        .zip(target)
        .map(|((&m, &lv), &t)| {
            let lv = clamp_logvar(lv);
            let r = t - m;
            half * (r * r * (-lv).exp() + lv)
        })
        .sum()
}

/// Gradients of [`gaussian_nll`] with respect to `mean` and the raw
/// (unclamped) `logvar`; zero in the clamped region.
pub fn gaussian_nll_grad<T: Scalar>(mean: &[T], logvar: &[T], target: &[T]) -> (Vec<T>, Vec<T>) {
    assert!(mean.len() == logvar.len() && mean.len() == target.len());
    let half = T::cst(0.5);
    let lo = T::cst(LOGVAR_MIN);
    let hi = T::cst(LOGVAR_MAX);
    let mut dm = Vec::with_capacity(mean.len());
    let mut dlv = Vec::with_capacity(mean.len());
    for ((&m, &lv_raw), &t) in mean.iter().zip(logvar).zip(target) {
        let lv = clamp_logvar(lv_raw);
        let inv = (-lv).exp();
        let r = t - m;
        dm.push(-r * inv);
        let inside = lv_raw > lo && lv_raw < hi;
        dlv.push(if inside { half * (T::one() - r * r * inv) } else { T::zero() });
    }
    (dm, dlv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0f64), 0.0);
        assert!((swish(1.0f64) - 0.7310585786300049).abs() < 1e-12);
        assert!(swish(-30.0f64).abs() < 1e-11);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[3, 5, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let net = Mlp::from_parts(vec![Array2::eye(3)], vec![Array1::zeros(3)]).unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn hand_computed_two_two_one() {
        // h = swish(W0^T x + b0), y = W1^T h + b1
        let w0 = array![[1.0, -1.0], [0.5, 2.0]];
        let b0 = array![0.0, 0.5];
        let w1 = array![[2.0], [-1.0]];
        let b1 = array![0.25];
        let net = Mlp::from_parts(vec![w0, w1], vec![b0, b1]).unwrap();
        let x = [1.0, 0.5];
        let z0: f64 = 1.0 * 1.0 + 0.5 * 0.5;
        let z1: f64 = -1.0 * 1.0 + 2.0 * 0.5 + 0.5;
        let s = |z: f64| z / (1.0 + (-z).exp());
        let expected = 2.0 * s(z0) - s(z1) + 0.25;
        let y = net.forward(&x).unwrap();
        assert!((y[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::<f64>::zeros(&[3, 2]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(Mlp::<f64>::from_parts(vec![Array2::zeros((2, 3))], vec![Array1::zeros(2)]).is_err());
    }

    #[test]
    fn linear_gradient_is_input() {
        let net = Mlp::from_parts(vec![array![[3.0]]], vec![array![0.0]]).unwrap();
        let (g, dx) = net.backward(&[2.5], &[1.0]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 2.5);
        assert_eq!(g.biases[0][0], 1.0);
        assert_eq!(dx, vec![3.0]);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f64>::new(&[4, 16, 4], &mut rng);
        let (g, dx) = net.backward(&[0.1, 0.2, -0.3, 0.4], &[0.0; 4]).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_seeds_identical_weights() {
        let a = Mlp::<f64>::new(&[4, 8, 2], &mut ChaCha8Rng::seed_from_u64(9));
        let b = Mlp::<f64>::new(&[4, 8, 2], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let c = Mlp::<f64>::new(&[4, 8, 2], &mut ChaCha8Rng::seed_from_u64(10));
        assert_ne!(a, c);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0f64, -2.0];
        let mut opt = AdamState::<f64>::new(AdamConfig::default(), &[2]);
        opt.apply(vec![&mut p], vec![&[0.0, 0.0]]);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr_sign() {
        let mut p = vec![1.0f64, 1.0];
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut opt = AdamState::<f64>::new(cfg, &[2]);
        opt.apply(vec![&mut p], vec![&[3.0, -0.2]]);
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] - 1.01).abs() < 1e-7);
    }

    #[test]
    fn adam_two_step_trace() {
        // scalar re-derivation of two bias-corrected updates
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let g = [0.5f64, 0.5];
        let mut p_ref = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, gi) in g.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * gi;
            v = b2 * v + (1.0 - b2) * gi * gi;
            p_ref -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = vec![2.0f64];
        let mut opt = AdamState::<f64>::new(
            AdamConfig {
                lr,
                beta1: b1,
                beta2: b2,
                eps,
            },
            &[1],
        );
        opt.apply(vec![&mut p], vec![&[0.5]]);
        opt.apply(vec![&mut p], vec![&[0.5]]);
        assert_eq!(opt.step, 2);
        assert!((p[0] - p_ref).abs() < 1e-15);
    }

    #[test]
    fn nll_values() {
        assert_eq!(gaussian_nll(&[1.0f64, 2.0], &[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert_eq!(gaussian_nll(&[0.0f64], &[0.0], &[1.0]), 0.5);
        // clamp: logvar far below the floor behaves as the floor
        let a = gaussian_nll(&[0.0f64], &[-50.0], &[0.1]);
        let b = gaussian_nll(&[0.0f64], &[LOGVAR_MIN], &[0.1]);
        assert_eq!(a, b);
    }

    #[test]
    fn f32_forward_runs() {
        let net = Mlp::<f32>::new(&[2, 4, 1], &mut ChaCha8Rng::seed_from_u64(0));
        assert!(net.forward(&[0.5, -0.5]).unwrap()[0].is_finite());
    }
}
