//! Adam for vectors, Muon (orthogonalized momentum) for weight matrices.

use crate::policy::{ParamKind, ParamSpec};
use serde::{Deserialize, Serialize};

/// Quintic Newton–Schulz coefficients.
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);
pub const NS_ITERS: usize = 5;
pub const MUON_MOMENTUM: f64 = 0.95;
/// Update RMS matching factor, applied as `MUON_SCALE·sqrt(max(rows, cols))`.
pub const MUON_SCALE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Muon for 2-D weights, Adam for the rest
    #[default]
    Muon,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam step with decoupled weight decay; `t` is the
/// 1-based step count after increment.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, wd: f64, hp: &AdamParams) {
    let c1 = 1.0 - hp.beta1.powi(t as i32);
    let c2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p[i] -= lr * mh / (vh.sqrt() + hp.eps) + lr * wd * p[i];
    }
}

/// c[m×n] = a[m×k]·b[k×n] (row-major, optional transposes via strides).
fn gemm(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool, c: &mut [f64]) {
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Quintic Newton–Schulz orthogonalization of a row-major rows×cols matrix.
pub fn newton_schulz(g: &[f64], rows: usize, cols: usize, iters: usize) -> Vec<f64> {
    let (a, b, c) = NS_COEFFS;
    // work on the wide orientation so X·Xᵀ is the smaller Gram matrix
    let tall = rows > cols;
    let (r, k) = if tall { (cols, rows) } else { (rows, cols) };
    let mut x = if tall {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = g[i * cols + j];
            }
        }
        t
    } else {
        g.to_vec()
    };
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-7;
    x.iter_mut().for_each(|v| *v /= norm);
    let mut gram = vec![0.0; r * r];
    let mut gram2 = vec![0.0; r * r];
    let mut bx = vec![0.0; r * k];
    for _ in 0..iters {
        gemm(r, k, r, &x, false, &x, true, &mut gram);
        gemm(r, r, r, &gram, false, &gram, false, &mut gram2);
        // B = b·A + c·A²
        for (g1, g2) in gram.iter_mut().zip(&gram2) {
            *g1 = b * *g1 + c * g2;
        }
        gemm(r, r, k, &gram, false, &x, false, &mut bx);
        for (xv, bv) in x.iter_mut().zip(&bx) {
            *xv = a * *xv + bv;
        }
    }
    if tall {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[i * cols + j] = x[j * rows + i];
            }
        }
        t
    } else {
        x
    }
}

/// Momentum, NS direction, scaled step and decoupled decay for one matrix.
pub fn muon_step(w: &mut [f64], g: &[f64], buf: &mut [f64], rows: usize, cols: usize, lr: f64, wd: f64) {
    for (b, gv) in buf.iter_mut().zip(g) {
        *b = MUON_MOMENTUM * *b + gv;
    }
    let scale = MUON_SCALE * (rows.max(cols) as f64).sqrt();
    let dir = if buf.iter().all(|v| *v == 0.0) { vec![0.0; buf.len()] } else { newton_schulz(buf, rows, cols, NS_ITERS) };
    for (wv, d) in w.iter_mut().zip(&dir) {
        *wv -= lr * scale * d + lr * wd * *wv;
    }
}

/// Optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub adam: AdamParams,
    specs: Vec<ParamSpec>,
    m: Vec<f64>,
    v: Vec<f64>,
    buf: Vec<f64>,
    pub t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, specs: &[ParamSpec], n: usize) -> Self {
        Self { kind, adam: AdamParams::default(), specs: specs.to_vec(), m: vec![0.0; n], v: vec![0.0; n], buf: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        for s in &self.specs {
            let r = s.range();
            if self.kind == OptimizerKind::Muon && s.kind == ParamKind::Matrix {
                muon_step(&mut p[r.clone()], &g[r.clone()], &mut self.buf[r], s.rows, s.cols, lr, wd);
            } else {
                adam_step(&mut p[r.clone()], &g[r.clone()], &mut self.m[r.clone()], &mut self.v[r], self.t, lr, wd, &self.adam);
            }
        }
    }
}

/// Scales `g` so its global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > max_norm {
        let s = max_norm / (n + 1e-12);
        g.iter_mut().for_each(|v| *v *= s);
    }
    n
}
