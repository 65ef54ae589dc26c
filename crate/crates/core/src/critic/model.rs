use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, domain};
use crate::{Error, Result};

pub const UNK: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub d_e: usize,
    pub d_in: usize,
    pub d_h: usize,
    pub d_m: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    pub margin: f64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            d_e: 16,
            d_in: 32,
            d_h: 32,
            d_m: 32,
            lr: 0.05,
            momentum: 0.9,
            batch: 32,
            epochs: 30,
            margin: 1.0,
            init_scale: 0.1,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_e, self.d_in, self.d_h, self.d_m, self.batch];
        if dims.contains(&0) {
            return Err(Error::Config("critic dimensions and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.margin != 1.0 {
            return Err(Error::Config(format!("ranking margin is fixed at 1, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Token vocabulary; index 0 is the unknown token.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut words: Vec<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| t != UNK)
            .collect();
        words.sort();
        words.dedup();
        words.insert(0, UNK.to_string());
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { tokens: words, index }
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One grounded phrase as the critic sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    /// Vocabulary ids of the phrase's adjectives and head noun.
    pub tokens: Vec<usize>,
    /// Region features, geometry included.
    pub features: Vec<f64>,
    /// Raw grounding score.
    pub score: f64,
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub emb: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub w: Range<usize>,
    pub u: Range<usize>,
    pub b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

impl Layout {
    fn new(h: &Hyper, vocab: usize, d_x: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Self {
            emb: take(vocab * h.d_e),
            proj_w: take(h.d_in * d_x),
            proj_b: take(h.d_in),
            w: take(4 * h.d_h * h.d_in),
            u: take(4 * h.d_h * h.d_h),
            b: take(4 * h.d_h),
            w1: take(h.d_m * h.d_h),
            b1: take(h.d_m),
            w2: take(h.d_m),
            b2: take(1),
        }
    }

    pub fn total(&self) -> usize {
        self.b2.end
    }

    /// `(name, shape, range)` for every tensor, in storage order.
    pub fn tensors(&self, h: &Hyper, vocab: usize, d_x: usize) -> Vec<(&'static str, Vec<usize>, Range<usize>)> {
        vec![
            ("embedding", vec![vocab, h.d_e], self.emb.clone()),
            ("proj_w", vec![h.d_in, d_x], self.proj_w.clone()),
            ("proj_b", vec![h.d_in], self.proj_b.clone()),
            ("lstm_w", vec![4 * h.d_h, h.d_in], self.w.clone()),
            ("lstm_u", vec![4 * h.d_h, h.d_h], self.u.clone()),
            ("lstm_b", vec![4 * h.d_h], self.b.clone()),
            ("head_w1", vec![h.d_m, h.d_h], self.w1.clone()),
            ("head_b1", vec![h.d_m], self.b1.clone()),
            ("head_w2", vec![h.d_m], self.w2.clone()),
            ("head_b2", vec![1], self.b2.clone()),
        ]
    }
}

/// Recurrent phrase critic. Gate order in the stacked LSTM tensors is
/// input, forget, output, cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticModel {
    pub hyper: Hyper,
    pub vocab: Vocab,
    /// Length of `StepInput::features`.
    pub feature_dim: usize,
    pub params: Vec<f64>,
    pub(crate) layout: Layout,
}

#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    x: Vec<f64>,
    u: Vec<f64>,
    /// Activated gates `[i, f, o, g]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct Forward {
    steps: Vec<StepCache>,
    a: Vec<f64>,
    pub score: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y += W x` for row-major `W` with `x.len()` columns.
fn matvec_add(y: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *yi += s;
    }
}

/// `y += W^T d`.
fn matvec_t_add(y: &mut [f64], w: &[f64], d: &[f64]) {
    let cols = y.len();
    for (row, di) in w.chunks_exact(cols).zip(d) {
        if *di != 0.0 {
            for (yj, wij) in y.iter_mut().zip(row) {
                *yj += wij * di;
            }
        }
    }
}

/// `G += d x^T`.
fn outer_add(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, di) in g.chunks_exact_mut(cols).zip(d) {
        if *di != 0.0 {
            for (gij, xj) in row.iter_mut().zip(x) {
                *gij += di * xj;
            }
        }
    }
}

impl CriticModel {
    /// A model with every parameter zero.
    pub fn zeros(hyper: Hyper, vocab: Vocab, feature_dim: usize) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(&hyper, vocab.len(), hyper.d_e + feature_dim + 1);
        Ok(Self {
            params: vec![0.0; layout.total()],
            hyper,
            vocab,
            feature_dim,
            layout,
        })
    }

    /// Uniform weights in `±init_scale`, zero biases, forget-gate bias 1.
    pub fn init(hyper: Hyper, vocab: Vocab, feature_dim: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(hyper, vocab, feature_dim)?;
        let mut rng = rng::stream(seed, domain::INIT, 0);
        let s = hyper.init_scale;
        let l = m.layout.clone();
        for r in [l.emb, l.proj_w, l.w, l.u, l.w1, l.w2] {
            for p in &mut m.params[r] {
                *p = rng.random_range(-s..=s);
            }
        }
        let d_h = hyper.d_h;
        for p in &mut m.params[l.b.start + d_h..l.b.start + 2 * d_h] {
            *p = 1.0;
        }
        Ok(m)
    }

    /// Width of the raw step input: mean embedding, features, raw score.
    pub fn step_width(&self) -> usize {
        self.hyper.d_e + self.feature_dim + 1
    }

    /// Named tensor view; names are those stored in checkpoints.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let (_, _, r) = self.tensors().into_iter().find(|(n, _, _)| *n == name)?;
        Some(&self.params[r])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (_, _, r) = self.tensors().into_iter().find(|(n, _, _)| *n == name)?;
        Some(&mut self.params[r])
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, Vec<usize>, Range<usize>)> {
        self.layout.tensors(&self.hyper, self.vocab.len(), self.step_width())
    }

    fn raw_step(&self, step: &StepInput) -> Result<Vec<f64>> {
        if step.features.len() != self.feature_dim {
            return Err(Error::Config(format!(
                "step has {} features, model expects {}",
                step.features.len(),
                self.feature_dim
            )));
        }
        let d_e = self.hyper.d_e;
        let mut x = vec![0.0; self.step_width()];
        if !step.tokens.is_empty() {
            let emb = &self.params[self.layout.emb.clone()];
            let inv = 1.0 / step.tokens.len() as f64;
            for &t in &step.tokens {
                let t = if t < self.vocab.len() { t } else { 0 };
                for (xj, e) in x[..d_e].iter_mut().zip(&emb[t * d_e..(t + 1) * d_e]) {
                    *xj += e * inv;
                }
            }
        }
        x[d_e..d_e + self.feature_dim].copy_from_slice(&step.features);
        x[d_e + self.feature_dim] = step.score;
        Ok(x)
    }

    /// Projected step vector (width `d_in`).
    pub fn encode_step(&self, step: &StepInput) -> Result<Vec<f64>> {
        let x = self.raw_step(step)?;
        let mut u = self.params[self.layout.proj_b.clone()].to_vec();
        matvec_add(&mut u, &self.params[self.layout.proj_w.clone()], &x);
        Ok(u)
    }

    pub(crate) fn forward(&self, steps: &[StepInput]) -> Result<Forward> {
        if steps.is_empty() {
            return Err(Error::Empty("critic input has no phrases".into()));
        }
        let d_h = self.hyper.d_h;
        let p = &self.params;
        let l = &self.layout;
        let mut h = vec![0.0; d_h];
        let mut c = vec![0.0; d_h];
        let mut caches = Vec::with_capacity(steps.len());
        for step in steps {
            let x = self.raw_step(step)?;
            let mut u = p[l.proj_b.clone()].to_vec();
            matvec_add(&mut u, &p[l.proj_w.clone()], &x);
            let mut z = p[l.b.clone()].to_vec();
            matvec_add(&mut z, &p[l.w.clone()], &u);
            matvec_add(&mut z, &p[l.u.clone()], &h);
            let mut gates = z;
            for (k, v) in gates.iter_mut().enumerate() {
                *v = if k < 3 * d_h { sigmoid(*v) } else { v.tanh() };
            }
            let (ig, rest) = gates.split_at(d_h);
            let (fg, rest) = rest.split_at(d_h);
            let (og, gg) = rest.split_at(d_h);
            let mut c_new = vec![0.0; d_h];
            let mut tc = vec![0.0; d_h];
            let mut h_new = vec![0.0; d_h];
            for k in 0..d_h {
                c_new[k] = fg[k] * c[k] + ig[k] * gg[k];
                tc[k] = c_new[k].tanh();
                h_new[k] = og[k] * tc[k];
            }
            h.clone_from(&h_new);
            c.clone_from(&c_new);
            caches.push(StepCache {
                x,
                u,
                gates,
                c: c_new,
                tc,
                h: h_new,
            });
        }
        let mut a = p[l.b1.clone()].to_vec();
        matvec_add(&mut a, &p[l.w1.clone()], &h);
        for v in &mut a {
            *v = v.tanh();
        }
        let score = p[l.b2.start] + a.iter().zip(&p[l.w2.clone()]).map(|(x, w)| x * w).sum::<f64>();
        if !score.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic score is {score} for a {}-phrase input",
                steps.len()
            )));
        }
        Ok(Forward {
            steps: caches,
            a,
            score,
        })
    }

    /// Relevance score of an ordered phrase sequence.
    pub fn score(&self, steps: &[StepInput]) -> Result<f64> {
        Ok(self.forward(steps)?.score)
    }

    /// Adds `d_score * dS/dθ` into `grad`.
    pub(crate) fn backward(&self, steps: &[StepInput], fwd: &Forward, d_score: f64, grad: &mut [f64]) {
        if d_score == 0.0 {
            return;
        }
        let h_dim = self.hyper.d_h;
        let d_e = self.hyper.d_e;
        let p = &self.params;
        let l = &self.layout;

        grad[l.b2.start] += d_score;
        let w2 = &p[l.w2.clone()];
        let mut dpre = vec![0.0; self.hyper.d_m];
        for k in 0..self.hyper.d_m {
            grad[l.w2.start + k] += d_score * fwd.a[k];
            dpre[k] = d_score * w2[k] * (1.0 - fwd.a[k] * fwd.a[k]);
        }
        let last = fwd.steps.last().unwrap();
        outer_add(&mut grad[l.w1.clone()], &dpre, &last.h);
        for (g, d) in grad[l.b1.clone()].iter_mut().zip(&dpre) {
            *g += d;
        }
        let mut dh = vec![0.0; h_dim];
        matvec_t_add(&mut dh, &p[l.w1.clone()], &dpre);

        let zeros = vec![0.0; h_dim];
        let mut dc = vec![0.0; h_dim];
        let mut dz = vec![0.0; 4 * h_dim];
        for t in (0..fwd.steps.len()).rev() {
            let s = &fwd.steps[t];
            let (h_prev, c_prev) = if t > 0 {
                (&fwd.steps[t - 1].h, &fwd.steps[t - 1].c)
            } else {
                (&zeros, &zeros)
            };
            let (ig, rest) = s.gates.split_at(h_dim);
            let (fg, rest) = rest.split_at(h_dim);
            let (og, gg) = rest.split_at(h_dim);
            for k in 0..h_dim {
                dc[k] += dh[k] * og[k] * (1.0 - s.tc[k] * s.tc[k]);
                let d_o = dh[k] * s.tc[k];
                let d_i = dc[k] * gg[k];
                let d_g = dc[k] * ig[k];
                let d_f = dc[k] * c_prev[k];
                dz[k] = d_i * ig[k] * (1.0 - ig[k]);
                dz[h_dim + k] = d_f * fg[k] * (1.0 - fg[k]);
                dz[2 * h_dim + k] = d_o * og[k] * (1.0 - og[k]);
                dz[3 * h_dim + k] = d_g * (1.0 - gg[k] * gg[k]);
                dc[k] *= fg[k];
            }
            outer_add(&mut grad[l.w.clone()], &dz, &s.u);
            outer_add(&mut grad[l.u.clone()], &dz, h_prev);
            for (g, d) in grad[l.b.clone()].iter_mut().zip(&dz) {
                *g += d;
            }
            let mut du = vec![0.0; self.hyper.d_in];
            matvec_t_add(&mut du, &p[l.w.clone()], &dz);
            dh.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(&mut dh, &p[l.u.clone()], &dz);

            outer_add(&mut grad[l.proj_w.clone()], &du, &s.x);
            for (g, d) in grad[l.proj_b.clone()].iter_mut().zip(&du) {
                *g += d;
            }
            let tokens = &steps[t].tokens;
            if !tokens.is_empty() {
                let mut dx = vec![0.0; d_e];
                let pw = &p[l.proj_w.clone()];
                let width = self.step_width();
                for (row, di) in pw.chunks_exact(width).zip(&du) {
                    for j in 0..d_e {
                        dx[j] += row[j] * di;
                    }
                }
                let inv = 1.0 / tokens.len() as f64;
                for &tok in tokens {
                    let tok = if tok < self.vocab.len() { tok } else { 0 };
                    let base = l.emb.start + tok * d_e;
                    for j in 0..d_e {
                        grad[base + j] += dx[j] * inv;
                    }
                }
            }
        }
    }
}

/// `max(0, S_n - S_p + 1)`.
pub fn rank_loss(s_p: f64, s_n: f64) -> f64 {
    (s_n - s_p + 1.0).max(0.0)
}

/// Logistic cross-entropy of `sigmoid(s)` against `label`.
pub fn binary_loss(s: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
}

pub fn probability(s: f64) -> f64 {
    sigmoid(s)
}

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub enum Example {
    Pair {
        positive: Vec<StepInput>,
        negative: Vec<StepInput>,
    },
    Labeled {
        steps: Vec<StepInput>,
        label: bool,
    },
}

impl CriticModel {
    /// Loss of one example; adds its gradient into `grad`.
    pub(crate) fn accumulate(&self, example: &Example, grad: &mut [f64]) -> Result<f64> {
        match example {
            Example::Pair { positive, negative } => {
                let fp = self.forward(positive)?;
                let fneg = self.forward(negative)?;
                let loss = rank_loss(fp.score, fneg.score);
                if loss > 0.0 {
                    self.backward(positive, &fp, -1.0, grad);
                    self.backward(negative, &fneg, 1.0, grad);
                }
                Ok(loss)
            }
            Example::Labeled { steps, label } => {
                let f = self.forward(steps)?;
                let y = if *label { 1.0 } else { 0.0 };
                self.backward(steps, &f, sigmoid(f.score) - y, grad);
                Ok(binary_loss(f.score, *label))
            }
        }
    }

    /// Mean loss and mean gradient over `batch`.
    pub fn gradients(&self, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for ex in batch {
            loss += self.accumulate(ex, &mut grad)?;
        }
        let n = batch.len().max(1) as f64;
        for g in &mut grad {
            *g /= n;
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} is {}", grad[i])));
        }
        Ok((loss / n, grad))
    }
}
