//! Gated residual MLP with a hand-written backward pass.
//!
//! Consecutive pairs of hidden widths form a block
//! `act(skip(x) + σ(g)·LN(W1·act(LN(W0·x))))`; a trailing odd width is a
//! plain `act(LN(W·x))` layer; a linear head follows.

use rand::Rng;
use rand_distr::StandardNormal;

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;
/// Initial gate logit.
pub const GATE_INIT: f64 = -2.0;
/// Orthogonal gain of each block's second layer.
pub const W1_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// 2-D weight (rows = outputs, cols = inputs)
    Matrix,
    Vector,
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Collects tensor specs while a network is laid out.
#[derive(Debug, Default)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub len: usize,
}

impl ParamLayout {
    fn add(&mut self, name: String, rows: usize, cols: usize, kind: ParamKind) -> usize {
        let offset = self.len;
        self.specs.push(ParamSpec { name, offset, rows, cols, kind });
        self.len += rows * cols;
        offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
    pub out: usize,
    pub inp: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Block { w0: Linear, ln0: Norm, w1: Linear, ln1: Norm, skip: Option<Linear>, gate: usize },
    Dense { lin: Linear, ln: Norm },
}

fn linear(layout: &mut ParamLayout, name: &str, out: usize, inp: usize, gain: f64) -> Linear {
    let w = layout.add(format!("{name}.weight"), out, inp, ParamKind::Matrix);
    let b = layout.add(format!("{name}.bias"), 1, out, ParamKind::Vector);
    Linear { w, b, out, inp, gain }
}

fn norm(layout: &mut ParamLayout, name: &str, n: usize) -> Norm {
    let g = layout.add(format!("{name}.scale"), 1, n, ParamKind::Vector);
    let b = layout.add(format!("{name}.offset"), 1, n, ParamKind::Vector);
    Norm { g, b, n }
}

/// Network structure; parameters live in an external flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedResidualNet {
    pub in_dim: usize,
    pub out_dim: usize,
    pub widths: Vec<usize>,
    pub(crate) layers: Vec<Layer>,
    pub(crate) head: Linear,
}

impl GatedResidualNet {
    /// Lays the network out inside `layout` under `prefix`.
    pub fn new(layout: &mut ParamLayout, prefix: &str, in_dim: usize, widths: &[usize], out_dim: usize, head_gain: f64) -> Self {
        let mut layers = Vec::new();
        let mut d = in_dim;
        let mut i = 0;
        while i + 1 < widths.len() {
            let (a, b) = (widths[i], widths[i + 1]);
            let name = format!("{prefix}.block{}", layers.len());
            let w0 = linear(layout, &format!("{name}.w0"), a, d, 1.0);
            let ln0 = norm(layout, &format!("{name}.ln0"), a);
            let w1 = linear(layout, &format!("{name}.w1"), b, a, W1_GAIN);
            let ln1 = norm(layout, &format!("{name}.ln1"), b);
            let skip = (d != b).then(|| linear(layout, &format!("{name}.skip"), b, d, 1.0));
            let gate = layout.add(format!("{name}.gate"), 1, 1, ParamKind::Vector);
            layers.push(Layer::Block { w0, ln0, w1, ln1, skip, gate });
            d = b;
            i += 2;
        }
        if i < widths.len() {
            let name = format!("{prefix}.dense{}", layers.len());
            let lin = linear(layout, &name, widths[i], d, 1.0);
            let ln = norm(layout, &format!("{name}.ln"), widths[i]);
            layers.push(Layer::Dense { lin, ln });
            d = widths[i];
        }
        let head = linear(layout, &format!("{prefix}.head"), out_dim, d, head_gain);
        Self { in_dim, out_dim, widths: widths.to_vec(), layers, head }
    }

    fn linears(&self) -> Vec<Linear> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Block { w0, w1, skip, .. } => {
                    out.push(*w0);
                    out.push(*w1);
                    out.extend(skip);
                }
                Layer::Dense { lin, .. } => out.push(*lin),
            }
        }
        out.push(self.head);
        out
    }

    /// Orthogonal weights, zero biases, unit norms, gates at −2.
    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        for lin in self.linears() {
            orthogonal(&mut params[lin.w..lin.w + lin.out * lin.inp], lin.out, lin.inp, lin.gain, rng);
            params[lin.b..lin.b + lin.out].iter_mut().for_each(|v| *v = 0.0);
        }
        for l in &self.layers {
            let norms: Vec<Norm> = match l {
                Layer::Block { ln0, ln1, gate, .. } => {
                    params[*gate] = GATE_INIT;
                    vec![*ln0, *ln1]
                }
                Layer::Dense { ln, .. } => vec![*ln],
            };
            for n in norms {
                params[n.g..n.g + n.n].iter_mut().for_each(|v| *v = 1.0);
                params[n.b..n.b + n.n].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Fills a rows×cols block with a scaled (semi-)orthogonal matrix.
pub fn orthogonal<R: Rng>(w: &mut [f64], rows: usize, cols: usize, gain: f64, rng: &mut R) {
    let (r, c) = (rows.max(cols), rows.min(cols));
    let a = nalgebra::DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for j in 0..c {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            w[i * cols + j] = gain * v;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// y[b×out] = x[b×in]·Wᵀ + bias.
fn linear_forward(p: &[f64], lin: &Linear, x: &[f64], batch: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * lin.out];
    for row in y.chunks_exact_mut(lin.out) {
        row.copy_from_slice(&p[lin.b..lin.b + lin.out]);
    }
    let w = &p[lin.w..lin.w + lin.out * lin.inp];
    unsafe {
        matrixmultiply::dgemm(
            batch, lin.inp, lin.out, 1.0,
            x.as_ptr(), lin.inp as isize, 1,
            w.as_ptr(), 1, lin.inp as isize,
            1.0,
            y.as_mut_ptr(), lin.out as isize, 1,
        );
    }
    y
}

/// Accumulates dW, db into `g` and returns dx.
fn linear_backward(p: &[f64], g: &mut [f64], lin: &Linear, x: &[f64], dy: &[f64], batch: usize, need_dx: bool) -> Vec<f64> {
    {
        let dw = &mut g[lin.w..lin.w + lin.out * lin.inp];
        // dW[out×in] += dyᵀ[out×b]·x[b×in]
        unsafe {
            matrixmultiply::dgemm(
                lin.out, batch, lin.inp, 1.0,
                dy.as_ptr(), 1, lin.out as isize,
                x.as_ptr(), lin.inp as isize, 1,
                1.0,
                dw.as_mut_ptr(), lin.inp as isize, 1,
            );
        }
    }
    let db = &mut g[lin.b..lin.b + lin.out];
    for row in dy.chunks_exact(lin.out) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; batch * lin.inp];
    let w = &p[lin.w..lin.w + lin.out * lin.inp];
    unsafe {
        matrixmultiply::dgemm(
            batch, lin.out, lin.inp, 1.0,
            dy.as_ptr(), lin.out as isize, 1,
            w.as_ptr(), lin.inp as isize, 1,
            0.0,
            dx.as_mut_ptr(), lin.inp as isize, 1,
        );
    }
    dx
}

/// Row-wise layer norm; returns (y, x̂, 1/σ per row).
fn norm_forward(p: &[f64], n: &Norm, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv = Vec::with_capacity(x.len() / n.n);
    let (gam, bet) = (&p[n.g..n.g + n.n], &p[n.b..n.b + n.n]);
    for ((xr, yr), hr) in x.chunks_exact(n.n).zip(y.chunks_exact_mut(n.n)).zip(xhat.chunks_exact_mut(n.n)) {
        let mu = xr.iter().sum::<f64>() / n.n as f64;
        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n.n as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv.push(is);
        for i in 0..n.n {
            hr[i] = (xr[i] - mu) * is;
            yr[i] = gam[i] * hr[i] + bet[i];
        }
    }
    (y, xhat, inv)
}

fn norm_backward(p: &[f64], g: &mut [f64], n: &Norm, xhat: &[f64], inv: &[f64], dy: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let gam = &p[n.g..n.g + n.n];
    let mut dxh = vec![0.0; n.n];
    for (((dyr, hr), dxr), &is) in dy.chunks_exact(n.n).zip(xhat.chunks_exact(n.n)).zip(dx.chunks_exact_mut(n.n)).zip(inv) {
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..n.n {
            g[n.g + i] += dyr[i] * hr[i];
            g[n.b + i] += dyr[i];
            dxh[i] = dyr[i] * gam[i];
            m1 += dxh[i];
            m2 += dxh[i] * hr[i];
        }
        m1 /= n.n as f64;
        m2 /= n.n as f64;
        for i in 0..n.n {
            dxr[i] = is * (dxh[i] - m1 - hr[i] * m2);
        }
    }
    dx
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LayerTape {
    x: Vec<f64>,
    pub(crate) a0: Vec<f64>,
    h0: Vec<f64>,
    inv0: Vec<f64>,
    h: Vec<f64>,
    h1: Vec<f64>,
    inv1: Vec<f64>,
    pub(crate) r: Vec<f64>,
    pre: Vec<f64>,
}

/// Activations cached by [`GatedResidualNet::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub(crate) layers: Vec<LayerTape>,
    pub(crate) head_in: Vec<f64>,
    batch: usize,
}

impl GatedResidualNet {
    /// Batched forward pass; `x` is row-major `batch × in_dim`.
    pub fn forward(&self, p: &[f64], x: &[f64], batch: usize, mut tape: Option<&mut Tape>) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.in_dim);
        if let Some(t) = tape.as_deref_mut() {
            t.layers.clear();
            t.batch = batch;
        }
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut lt = LayerTape::default();
            let out = match layer {
                Layer::Block { w0, ln0, w1, ln1, skip, gate } => {
                    let z0 = linear_forward(p, w0, &cur, batch);
                    let (a0, h0, inv0) = norm_forward(p, ln0, &z0);
                    let h: Vec<f64> = a0.iter().map(|&v| silu(v)).collect();
                    let z1 = linear_forward(p, w1, &h, batch);
                    let (r, h1, inv1) = norm_forward(p, ln1, &z1);
                    let s = match skip {
                        Some(sk) => linear_forward(p, sk, &cur, batch),
                        None => cur.clone(),
                    };
                    let w = sigmoid(p[*gate]);
                    let pre: Vec<f64> = s.iter().zip(&r).map(|(a, b)| a + w * b).collect();
                    let out = pre.iter().map(|&v| silu(v)).collect();
                    lt = LayerTape { x: cur, a0, h0, inv0, h, h1, inv1, r, pre };
                    out
                }
                Layer::Dense { lin, ln } => {
                    let z = linear_forward(p, lin, &cur, batch);
                    let (a, h0, inv0) = norm_forward(p, ln, &z);
                    let out = a.iter().map(|&v| silu(v)).collect();
                    lt.x = cur;
                    lt.h0 = h0;
                    lt.inv0 = inv0;
                    lt.pre = a;
                    out
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                t.layers.push(lt);
            }
            cur = out;
        }
        let y = linear_forward(p, &self.head, &cur, batch);
        if let Some(t) = tape {
            t.head_in = cur;
        }
        y
    }

    /// Accumulates parameter gradients for output gradient `dy` into `g`.
    pub fn backward(&self, p: &[f64], g: &mut [f64], tape: &Tape, dy: &[f64]) {
        let batch = tape.batch;
        let mut d = linear_backward(p, g, &self.head, &tape.head_in, dy, batch, !self.layers.is_empty());
        for (layer, lt) in self.layers.iter().zip(&tape.layers).rev() {
            let first = std::ptr::eq(layer, &self.layers[0]);
            match layer {
                Layer::Block { w0, ln0, w1, ln1, skip, gate } => {
                    let dpre: Vec<f64> = d.iter().zip(&lt.pre).map(|(g, &x)| g * silu_grad(x)).collect();
                    let w = sigmoid(p[*gate]);
                    g[*gate] += w * (1.0 - w) * dpre.iter().zip(&lt.r).map(|(a, b)| a * b).sum::<f64>();
                    let dr: Vec<f64> = dpre.iter().map(|v| w * v).collect();
                    let dz1 = norm_backward(p, g, ln1, &lt.h1, &lt.inv1, &dr);
                    let dh = linear_backward(p, g, w1, &lt.h, &dz1, batch, true);
                    let da0: Vec<f64> = dh.iter().zip(&lt.a0).map(|(g, &x)| g * silu_grad(x)).collect();
                    let dz0 = norm_backward(p, g, ln0, &lt.h0, &lt.inv0, &da0);
                    let mut dx = linear_backward(p, g, w0, &lt.x, &dz0, batch, !first);
                    let ds = match skip {
                        Some(sk) => linear_backward(p, g, sk, &lt.x, &dpre, batch, !first),
                        None => dpre,
                    };
                    if !first {
                        dx.iter_mut().zip(&ds).for_each(|(a, b)| *a += b);
                    }
                    d = dx;
                }
                Layer::Dense { lin, ln } => {
                    let da: Vec<f64> = d.iter().zip(&lt.pre).map(|(g, &x)| g * silu_grad(x)).collect();
                    let dz = norm_backward(p, g, ln, &lt.h0, &lt.inv0, &da);
                    d = linear_backward(p, g, lin, &lt.x, &dz, batch, !first);
                }
            }
        }
    }
}
