//! Small differentiable models with hand-written backpropagation.
//!
//! Parameters live in one flat vector so that the gradient is exactly the
//! `Q`-vector the link aggregates.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Classifier trained with softmax cross-entropy.
pub trait Model: Send + Sync {
    fn num_params(&self) -> usize;

    /// Initial parameters; weights are Gaussian with fan-in scaling, biases zero.
    fn init(&self, seed: u64) -> Vec<f64>;

    /// Class scores for one sample.
    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64>;

    /// Add the gradient of one sample's loss to `grad` and return that loss.
    fn accumulate(&self, w: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64;

    fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        argmax(&self.logits(w, x))
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Softmax probabilities in place; returns `-ln p[label]`.
fn softmax_xent(z: &mut [f64], label: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
    -(z[label].max(f64::MIN_POSITIVE)).ln()
}

fn gaussian_block(seed: u64, block: u64, n: usize, std: f64, out: &mut Vec<f64>) {
    let mut r = rng::stream(seed, Domain::Init, &[block]);
    let d = Normal::new(0.0, std).expect("finite std");
    out.extend((0..n).map(|_| d.sample(&mut r)));
}

/// Which model to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Multinomial logistic regression.
    Softmax,
    /// One ReLU hidden layer.
    Mlp { hidden: usize },
    /// One convolution layer, ReLU, 2×2 max-pooling and a dense output layer
    /// on square single-channel images.
    Cnn { side: usize, kernel: usize, filters: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::Mlp { hidden: 32 }
    }
}

impl ModelSpec {
    pub fn build(&self, inputs: usize, classes: usize) -> Result<Box<dyn Model>> {
        match *self {
            Self::Softmax => Ok(Box::new(Mlp::new(inputs, 0, classes)?)),
            Self::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::config("MLP hidden width must be positive"));
                }
                Ok(Box::new(Mlp::new(inputs, hidden, classes)?))
            }
            Self::Cnn { side, kernel, filters } => {
                if side * side != inputs {
                    return Err(Error::config(format!(
                        "CNN expects {side}×{side} inputs but the data has {inputs} features"
                    )));
                }
                Ok(Box::new(Cnn::new(side, kernel, filters, classes)?))
            }
        }
    }
}

/// Dense network; `hidden == 0` means no hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    inputs: usize,
    hidden: usize,
    classes: usize,
}

impl Mlp {
    pub fn new(inputs: usize, hidden: usize, classes: usize) -> Result<Self> {
        if inputs == 0 || classes < 2 {
            return Err(Error::config("model needs inputs and at least two classes"));
        }
        Ok(Self { inputs, hidden, classes })
    }

    fn out_inputs(&self) -> usize {
        if self.hidden == 0 {
            self.inputs
        } else {
            self.hidden
        }
    }

    fn split<'a>(&self, w: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let h = self.hidden;
        let (w1, rest) = w.split_at(h * self.inputs);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(self.classes * self.out_inputs());
        (w1, b1, w2, b2)
    }

    fn hidden_act(&self, w1: &[f64], b1: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let a = b1[j] + dot(&w1[j * self.inputs..(j + 1) * self.inputs], x);
                a.max(0.0)
            })
            .collect()
    }

    fn output(&self, w2: &[f64], b2: &[f64], h: &[f64]) -> Vec<f64> {
        let n = h.len();
        (0..self.classes).map(|c| b2[c] + dot(&w2[c * n..(c + 1) * n], h)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Model for Mlp {
    fn num_params(&self) -> usize {
        self.hidden * (self.inputs + 1) + self.classes * (self.out_inputs() + 1)
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.num_params());
        if self.hidden > 0 {
            gaussian_block(seed, 0, self.hidden * self.inputs, (2.0 / self.inputs as f64).sqrt(), &mut w);
            w.extend(std::iter::repeat_n(0.0, self.hidden));
        }
        let n = self.out_inputs();
        gaussian_block(seed, 1, self.classes * n, (1.0 / n as f64).sqrt(), &mut w);
        w.extend(std::iter::repeat_n(0.0, self.classes));
        w
    }

    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let (w1, b1, w2, b2) = self.split(w);
        if self.hidden == 0 {
            self.output(w2, b2, x)
        } else {
            self.output(w2, b2, &self.hidden_act(w1, b1, x))
        }
    }

    fn accumulate(&self, w: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split(w);
        let h = if self.hidden == 0 { x.to_vec() } else { self.hidden_act(w1, b1, x) };
        let mut p = self.output(w2, b2, &h);
        let loss = softmax_xent(&mut p, label);
        p[label] -= 1.0;
        let n = h.len();
        let off2 = self.hidden * (self.inputs + 1);
        let (gw2, gb2) = grad[off2..].split_at_mut(self.classes * n);
        for (c, dz) in p.iter().enumerate() {
            for (g, hv) in gw2[c * n..(c + 1) * n].iter_mut().zip(&h) {
                *g += dz * hv;
            }
            gb2[c] += dz;
        }
        if self.hidden > 0 {
            let (gw1, rest) = grad[..off2].split_at_mut(self.hidden * self.inputs);
            for j in 0..self.hidden {
                if h[j] <= 0.0 {
                    continue;
                }
                let dh: f64 = p.iter().enumerate().map(|(c, dz)| dz * w2[c * n + j]).sum();
                for (g, xv) in gw1[j * self.inputs..(j + 1) * self.inputs].iter_mut().zip(x) {
                    *g += dh * xv;
                }
                rest[j] += dh;
            }
        }
        loss
    }
}

/// Single-channel convolution network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cnn {
    side: usize,
    kernel: usize,
    filters: usize,
    classes: usize,
}

impl Cnn {
    pub fn new(side: usize, kernel: usize, filters: usize, classes: usize) -> Result<Self> {
        if kernel == 0 || filters == 0 || kernel + 1 >= side || classes < 2 {
            return Err(Error::config(format!(
                "invalid CNN geometry: side {side}, kernel {kernel}, filters {filters}"
            )));
        }
        Ok(Self {
            side,
            kernel,
            filters,
            classes,
        })
    }

    fn conv_side(&self) -> usize {
        self.side - self.kernel + 1
    }

    fn pool_side(&self) -> usize {
        self.conv_side() / 2
    }

    fn features(&self) -> usize {
        self.filters * self.pool_side() * self.pool_side()
    }

    fn conv_params(&self) -> usize {
        self.filters * (self.kernel * self.kernel + 1)
    }

    /// Pooled features and, for each, the flat index of the winning conv
    /// activation (`usize::MAX` when the ReLU output is zero).
    fn forward_features(&self, w: &[f64], x: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let (k, cs, ps) = (self.kernel, self.conv_side(), self.pool_side());
        let kw = &w[..self.filters * k * k];
        let kb = &w[self.filters * k * k..self.conv_params()];
        let mut conv = vec![0.0; self.filters * cs * cs];
        for f in 0..self.filters {
            let ker = &kw[f * k * k..(f + 1) * k * k];
            for i in 0..cs {
                for j in 0..cs {
                    let mut a = kb[f];
                    for u in 0..k {
                        let row = &x[(i + u) * self.side + j..(i + u) * self.side + j + k];
                        a += dot(&ker[u * k..(u + 1) * k], row);
                    }
                    conv[(f * cs + i) * cs + j] = a;
                }
            }
        }
        let mut feats = Vec::with_capacity(self.features());
        let mut arg = Vec::with_capacity(self.features());
        for f in 0..self.filters {
            for i in 0..ps {
                for j in 0..ps {
                    let mut best = (0.0, usize::MAX);
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = (f * cs + 2 * i + di) * cs + 2 * j + dj;
                        if conv[idx] > best.0 {
                            best = (conv[idx], idx);
                        }
                    }
                    feats.push(best.0);
                    arg.push(best.1);
                }
            }
        }
        (feats, arg)
    }
}

impl Model for Cnn {
    fn num_params(&self) -> usize {
        self.conv_params() + self.classes * (self.features() + 1)
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        let kk = self.kernel * self.kernel;
        let mut w = Vec::with_capacity(self.num_params());
        gaussian_block(seed, 0, self.filters * kk, (2.0 / kk as f64).sqrt(), &mut w);
        w.extend(std::iter::repeat_n(0.0, self.filters));
        let n = self.features();
        gaussian_block(seed, 1, self.classes * n, (1.0 / n as f64).sqrt(), &mut w);
        w.extend(std::iter::repeat_n(0.0, self.classes));
        w
    }

    fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let (feats, _) = self.forward_features(w, x);
        let n = feats.len();
        let (dw, db) = w[self.conv_params()..].split_at(self.classes * n);
        (0..self.classes).map(|c| db[c] + dot(&dw[c * n..(c + 1) * n], &feats)).collect()
    }

    fn accumulate(&self, w: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let (feats, arg) = self.forward_features(w, x);
        let n = feats.len();
        let cp = self.conv_params();
        let (dw, db) = w[cp..].split_at(self.classes * n);
        let mut p: Vec<f64> = (0..self.classes).map(|c| db[c] + dot(&dw[c * n..(c + 1) * n], &feats)).collect();
        let loss = softmax_xent(&mut p, label);
        p[label] -= 1.0;

        let (gconv, gdense) = grad.split_at_mut(cp);
        let (gdw, gdb) = gdense.split_at_mut(self.classes * n);
        for (c, dz) in p.iter().enumerate() {
            for (g, f) in gdw[c * n..(c + 1) * n].iter_mut().zip(&feats) {
                *g += dz * f;
            }
            gdb[c] += dz;
        }

        let (k, cs) = (self.kernel, self.conv_side());
        let (gk, gkb) = gconv.split_at_mut(self.filters * k * k);
        for (m, &idx) in arg.iter().enumerate() {
            if idx == usize::MAX {
                continue;
            }
            let d: f64 = p.iter().enumerate().map(|(c, dz)| dz * dw[c * n + m]).sum();
            let f = idx / (cs * cs);
            let i = (idx / cs) % cs;
            let j = idx % cs;
            gkb[f] += d;
            for u in 0..k {
                let row = &x[(i + u) * self.side + j..(i + u) * self.side + j + k];
                for (g, xv) in gk[(f * k + u) * k..(f * k + u + 1) * k].iter_mut().zip(row) {
                    *g += d * xv;
                }
            }
        }
        loss
    }
}

/// Least-squares linear model `f(w; x, y) = (wᵀx - y)²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearRegression {
    pub dim: usize,
}

impl LinearRegression {
    pub fn loss(&self, w: &[f64], x: &[f64], y: f64) -> f64 {
        (dot(w, x) - y).powi(2)
    }

    /// `∇f = 2 (wᵀx - y) x`, added to `grad`.
    pub fn accumulate(&self, w: &[f64], x: &[f64], y: f64, grad: &mut [f64]) -> f64 {
        let r = dot(w, x) - y;
        for (g, xv) in grad.iter_mut().zip(x) {
            *g += 2.0 * r * xv;
        }
        r * r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(model: &dyn Model, x: &[f64], label: usize, seed: u64) {
        let mut w = model.init(seed);
        // move biases off zero so every path is exercised
        for (i, v) in w.iter_mut().enumerate() {
            *v += 0.01 * ((i * 37 % 11) as f64 - 5.0);
        }
        let mut g = vec![0.0; w.len()];
        model.accumulate(&w, x, label, &mut g);
        let loss = |w: &[f64]| {
            let mut scratch = vec![0.0; w.len()];
            model.accumulate(w, x, label, &mut scratch)
        };
        let h = 1e-6;
        for i in (0..w.len()).step_by((w.len() / 60).max(1)) {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (loss(&wp) - loss(&wm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                "param {i}: fd {fd} vs analytic {}",
                g[i]
            );
        }
    }

    fn input(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0 + 0.05 * i as f64).collect()
    }

    #[test]
    fn linear_regression_gradient_matches_finite_differences() {
        let m = LinearRegression { dim: 4 };
        let w = [0.3, -1.2, 0.5, 2.0];
        let x = [1.0, 0.5, -0.7, 0.25];
        let y = 0.9;
        let mut g = [0.0; 4];
        m.accumulate(&w, &x, y, &mut g);
        let r = dot(&w, &x) - y;
        for i in 0..4 {
            assert!((g[i] - 2.0 * r * x[i]).abs() < 1e-15);
            let mut wp = w;
            wp[i] += 1e-6;
            let mut wm = w;
            wm[i] -= 1e-6;
            let fd = (m.loss(&wp, &x, y) - m.loss(&wm, &x, y)) / 2e-6;
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3));
        }
    }

    #[test]
    fn softmax_and_mlp_gradients_match_finite_differences() {
        let x = input(7);
        fd_check(&Mlp::new(7, 0, 4).unwrap(), &x, 2, 1);
        fd_check(&Mlp::new(7, 5, 4).unwrap(), &x, 3, 2);
    }

    #[test]
    fn cnn_gradient_matches_finite_differences() {
        let x = input(64);
        let cnn = Cnn::new(8, 3, 2, 3).unwrap();
        assert_eq!(cnn.num_params(), 2 * 10 + 3 * (2 * 9 + 1));
        fd_check(&cnn, &x, 1, 3);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Mlp::new(20, 32, 10).unwrap().num_params(), 1002);
        assert_eq!(Mlp::new(784, 0, 10).unwrap().num_params(), 7850);
        let m = ModelSpec::Mlp { hidden: 32 }.build(20, 10).unwrap();
        assert_eq!(m.init(0).len(), 1002);
        assert!(ModelSpec::Cnn { side: 28, kernel: 5, filters: 8 }.build(20, 10).is_err());
    }
}
