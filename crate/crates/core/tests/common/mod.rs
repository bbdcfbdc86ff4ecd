//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use salved::nn::Mlp;

/// Plain-loop forward pass: swish on hidden layers, linear output.
pub fn mlp_forward(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let n = net.num_layers();
    let mut h = x.to_vec();
    for l in 0..n {
        let w = &net.weights()[l];
        let b = &net.biases()[l];
        let mut z = vec![0.0; w.ncols()];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = b[j];
            for (i, hi) in h.iter().enumerate() {
                acc += hi * w[[i, j]];
            }
            *zj = if l + 1 < n { acc / (1.0 + (-acc).exp()) } else { acc };
        }
        h = z;
    }
    h
}

/// `xᵀ (l_l I + MᵀM) x` with the matrix formed explicitly.
pub fn lyapunov_quadratic(m: &[Vec<f64>], l_l: f64, x: &[f64]) -> f64 {
    let n = x.len();
    let mut p = vec![vec![0.0; n]; n];
    for (i, row) in p.iter_mut().enumerate() {
        for (j, pij) in row.iter_mut().enumerate() {
            *pij = m.iter().map(|r| r[i] * r[j]).sum::<f64>() + if i == j { l_l } else { 0.0 };
        }
    }
    let mut v = 0.0;
    for i in 0..n {
        for j in 0..n {
            v += x[i] * p[i][j] * x[j];
        }
    }
    v
}

/// `M(x)` rebuilt from the raw network output, `n_v` rows of `n_x`.
pub fn lyapunov_matrix(net: &Mlp<f64>, scale: Option<&[f64]>, n_v: usize, x: &[f64]) -> Vec<Vec<f64>> {
    let z: Vec<f64> = match scale {
        Some(s) => x.iter().zip(s).map(|(a, b)| a / b).collect(),
        None => x.to_vec(),
    };
    let out = mlp_forward(net, &z);
    out.chunks(x.len()).take(n_v).map(|c| c.to_vec()).collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample loss written out term by term.
pub fn lyapunov_loss_scalar(v: f64, v_next: f64, l_s: f64, lambda: f64, margin: f64, rho: f64, eps: f64) -> f64 {
    let indicator = 0.5 * (sign(l_s - v) + 1.0);
    let delta = v_next - lambda * v + margin * indicator;
    let j_s = delta.max(0.0) / (v + eps);
    let j_vol = sign(delta) * (l_s - v);
    indicator / rho * j_s + j_vol
}

/// Exact `k`-step state of the noiseless double integrator, per axis
/// `[p, v]' = [[1, 1], [0, 1]] [p, v] + [1, 1] a`, by explicit matrix powers.
pub fn double_integrator(state: [f64; 4], actions: &[[f64; 2]]) -> [f64; 4] {
    let a = [[1.0, 1.0], [0.0, 1.0]];
    let b = [1.0, 1.0];
    let mul = |m: [[f64; 2]; 2], n: [[f64; 2]; 2]| {
        let mut r = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = m[i][0] * n[0][j] + m[i][1] * n[1][j];
            }
        }
        r
    };
    let pow = |k: usize| {
        let mut r = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..k {
            r = mul(r, a);
        }
        r
    };
    let k = actions.len();
    let mut out = [0.0; 4];
    for axis in 0..2 {
        let (p0, v0) = (state[2 * axis], state[2 * axis + 1]);
        let ak = pow(k);
        let mut p = ak[0][0] * p0 + ak[0][1] * v0;
        let mut v = ak[1][0] * p0 + ak[1][1] * v0;
        for (i, u) in actions.iter().enumerate() {
            let m = pow(k - 1 - i);
            p += (m[0][0] * b[0] + m[0][1] * b[1]) * u[axis];
            v += (m[1][0] * b[0] + m[1][1] * b[1]) * u[axis];
        }
        out[2 * axis] = p;
        out[2 * axis + 1] = v;
    }
    out
}

/// Central finite differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1e-3)`; the floor keeps exactly-zero
/// gradients from turning finite-difference round-off into a relative error.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = a.iter().chain(b).map(|v| v.abs()).fold(1e-3, f64::max);
    num / den
}
