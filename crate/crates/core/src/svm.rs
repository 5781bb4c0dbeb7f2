//! One-vs-rest linear SVM.
//!
//! Each binary problem minimizes the L1-hinge primal
//!
//! ```text
//! P(w, b) = 1/2 (|w|^2 + b^2) + C sum_i max(0, 1 - y_i (w.x_i + b))
//! ```
//!
//! through its dual `min_a 1/2 |sum_i a_i y_i [x_i; 1]|^2 - sum_i a_i`,
//! `0 <= a_i <= C`, by exact coordinate minimization over a seeded random
//! permutation each epoch. The bias is a separate model term updated with
//! every coordinate step (`b = sum_i a_i y_i`); it is never appended to the
//! feature vectors. The dual objective decreases monotonically; the
//! returned `(w, b)` is the iterate with the lowest primal objective seen at
//! an epoch boundary.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backend::argmax_lowest;
use crate::binio::{put_f64, put_str, put_u32, read_all, write_atomic, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"ADIRSVM";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once an epoch lowers the dual objective by less than
    /// `tolerance * max(1, |objective|)`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 0.02,
            max_epochs: 1000,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("svm C must be positive, got {}", self.c)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("svm max_epochs must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("svm tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-epoch record of one binary solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BinaryTrace {
    pub dual_objective: Vec<f64>,
    /// Primal objective of the best iterate so far.
    pub primal_objective: Vec<f64>,
    /// Smallest and largest dual variable observed after each epoch.
    pub alpha_range: Vec<(f64, f64)>,
    pub alphas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinarySolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epochs: usize,
    pub trace: BinaryTrace,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn primal(xs: &[&[f64]], ys: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    0.5 * (dot(w, w) + b * b) + c * hinge
}

/// Dual coordinate descent for one binary problem with labels `ys` in {-1, +1}.
pub fn train_binary(xs: &[&[f64]], ys: &[f64], cfg: &TrainConfig, seed: u64) -> Result<BinarySolution> {
    cfg.validate()?;
    let n = xs.len();
    if n == 0 || n != ys.len() {
        return Err(Error::EmptyInput("binary svm needs matching, non-empty data"));
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    let c = cfg.c;
    let qdiag: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best_w = w.clone();
    let mut best_b = b;
    let mut best_primal = primal(xs, ys, &w, b, c);
    let mut trace = BinaryTrace::default();
    let mut prev_dual = 0.0;
    let mut epochs = 0;

    for _ in 0..cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = (xs[i], ys[i]);
            let grad = y * (dot(&w, x) + b) - 1.0;
            let next = (alpha[i] - grad / qdiag[i]).clamp(0.0, c);
            let step = next - alpha[i];
            if step != 0.0 {
                alpha[i] = next;
                let dy = step * y;
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += dy * xj;
                }
                b += dy;
            }
        }

        let dual = 0.5 * (dot(&w, &w) + b * b) - alpha.iter().sum::<f64>();
        let p = primal(xs, ys, &w, b, c);
        if p < best_primal {
            best_primal = p;
            best_w.clone_from(&w);
            best_b = b;
        }
        let (lo, hi) = alpha
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
        trace.dual_objective.push(dual);
        trace.primal_objective.push(best_primal);
        trace.alpha_range.push((lo, hi));

        let decrease = prev_dual - dual;
        prev_dual = dual;
        if decrease <= cfg.tolerance * dual.abs().max(1.0) {
            break;
        }
    }
    trace.alphas = alpha;
    Ok(BinarySolution {
        weights: best_w,
        bias: best_b,
        epochs,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMeta {
    pub epochs: u32,
    pub final_objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub labels: Vec<String>,
    /// One row per class, each of length `dim`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub c: f64,
    pub meta: Vec<ClassMeta>,
}

/// Output of [`train_with_traces`].
pub struct TrainedSvm {
    pub model: SvmModel,
    pub traces: Vec<BinaryTrace>,
}

pub fn train(xs: &[Vec<f64>], labels: &[String], cfg: &TrainConfig) -> Result<SvmModel> {
    Ok(train_with_traces(xs, labels, cfg)?.model)
}

/// Train one binary problem per distinct label (sorted order); class `k`
/// uses seed `cfg.seed + k`.
pub fn train_with_traces(xs: &[Vec<f64>], labels: &[String], cfg: &TrainConfig) -> Result<TrainedSvm> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::EmptyInput("no training examples"));
    }
    if xs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: labels.len(),
        });
    }
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::SingleClass(classes[0].clone()));
    }
    let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let solutions = classes
        .par_iter()
        .enumerate()
        .map(|(k, class)| {
            let ys: Vec<f64> = labels.iter().map(|l| if l == class { 1.0 } else { -1.0 }).collect();
            train_binary(&rows, &ys, cfg, cfg.seed.wrapping_add(k as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    let model = SvmModel {
        labels: classes,
        weights: solutions.iter().map(|s| s.weights.clone()).collect(),
        bias: solutions.iter().map(|s| s.bias).collect(),
        c: cfg.c,
        meta: solutions
            .iter()
            .map(|s| ClassMeta {
                epochs: s.epochs as u32,
                final_objective: s.trace.primal_objective.last().copied().unwrap_or(f64::NAN),
            })
            .collect(),
    };
    Ok(TrainedSvm {
        model,
        traces: solutions.into_iter().map(|s| s.trace).collect(),
    })
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn scores(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, v) + b).collect())
    }

    /// Index of the highest-scoring class, lowest index on ties.
    pub fn predict(&self, v: &[f64]) -> Result<usize> {
        Ok(argmax_lowest(&self.scores(v)?))
    }

    pub fn predict_label(&self, v: &[f64]) -> Result<&str> {
        Ok(&self.labels[self.predict(v)?])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let put = |r: std::io::Result<()>| r.expect("vec write");
        put(put_u32(&mut out, VERSION));
        put(put_u32(&mut out, self.num_classes() as u32));
        put(put_u32(&mut out, self.dim() as u32));
        put(put_f64(&mut out, self.c));
        for label in &self.labels {
            put(put_str(&mut out, label));
        }
        for k in 0..self.num_classes() {
            put(put_u32(&mut out, self.meta[k].epochs));
            put(put_f64(&mut out, self.meta[k].final_objective));
            put(put_f64(&mut out, self.bias[k]));
            for w in &self.weights[k] {
                put(put_f64(&mut out, *w));
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = read_all(path)?;
        let mut r = Reader::new(&buf, path);
        if r.bytes(MAGIC.len())? != MAGIC {
            return Err(r.corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.corrupt(format!("unsupported version {version}")));
        }
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let c = r.f64()?;
        let labels = (0..k).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let mut weights = Vec::with_capacity(k);
        let mut bias = Vec::with_capacity(k);
        let mut meta = Vec::with_capacity(k);
        for _ in 0..k {
            meta.push(ClassMeta {
                epochs: r.u32()?,
                final_objective: r.f64()?,
            });
            bias.push(r.f64()?);
            weights.push((0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        if !r.is_at_end() {
            return Err(r.corrupt("trailing bytes"));
        }
        Ok(Self {
            labels,
            weights,
            bias,
            c,
            meta,
        })
    }
}

/// Percentage of positions where `predictions` equals `truths`.
pub fn accuracy<T: PartialEq>(predictions: &[T], truths: &[T]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to score"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}
