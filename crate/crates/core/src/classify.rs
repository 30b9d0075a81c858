//! L2-regularized logistic regression over sparse features: a multinomial
//! (softmax) model and a one-vs-rest variant, fitted by full-batch gradient
//! descent with backtracking line search.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, SparseVector};
use crate::scalar::{log_sum_exp, sigmoid, softmax_into, Scalar};

pub const MODEL_VERSION: &str = "teachertrace-attributor/1";

// Rows are split into this many fixed chunks for the parallel gradient, so
// the reduction order (and every bit of the result) is independent of the
// thread count.
const GRAD_CHUNKS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Multinomial,
    OneVsRest,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Multinomial => "multinomial",
            Mode::OneVsRest => "one_vs_rest",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Mode::Multinomial),
            "one_vs_rest" | "ovr" => Ok(Mode::OneVsRest),
            other => Err(Error::Config(format!("unknown classifier mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Recorded for provenance; the optimizer itself is deterministic.
    pub seed: u64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.01,
            max_iters: 1000,
            grad_tol: 1e-6,
            seed: 0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::Config("grad_tol must be >= 0".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("line-search shrink must lie in (0, 1)".into()));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::Config("sufficient-decrease constant must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Optimizer diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Objective after each accepted step, starting with the initial value.
    /// One-vs-rest traces hold the sum of the per-class objectives at the
    /// end of each class's run.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Trained attributor. `weights` is T rows of V+1 values, bias last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributorModel<F> {
    version: String,
    mode: Mode,
    class_order: Vec<String>,
    lambda: f64,
    feature_space_hash: String,
    dim: usize,
    weights: Vec<Vec<F>>,
}

impl<F: Scalar> AttributorModel<F> {
    /// Builds a model from explicit weight rows (each of length `dim + 1`).
    pub fn from_weights(
        weights: Vec<Vec<F>>,
        class_order: Vec<String>,
        mode: Mode,
        lambda: f64,
        feature_space_hash: impl Into<String>,
    ) -> Result<Self> {
        if class_order.len() < 2 || weights.len() != class_order.len() {
            return Err(Error::invalid("an attributor needs at least two classes, one weight row each"));
        }
        let mut seen = class_order.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != class_order.len() {
            return Err(Error::invalid("class order contains duplicates"));
        }
        let width = weights[0].len();
        if width == 0 || weights.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("weight rows must share a nonzero width"));
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        Ok(AttributorModel {
            version: MODEL_VERSION.to_string(),
            mode,
            class_order,
            lambda,
            feature_space_hash: feature_space_hash.into(),
            dim: width - 1,
            weights,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn class_order(&self) -> &[String] {
        &self.class_order
    }

    pub fn num_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn feature_space_hash(&self) -> &str {
        &self.feature_space_hash
    }

    pub fn weights(&self) -> &[Vec<F>] {
        &self.weights
    }

    /// Squared L2 norm of the non-bias weights.
    pub fn weight_norm_sq(&self) -> F {
        self.weights
            .iter()
            .flat_map(|r| r[..self.dim].iter())
            .map(|&w| w * w)
            .sum()
    }

    /// Raw class scores (logits).
    pub fn scores(&self, x: &SparseVector<F>) -> Result<Vec<F>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.dim(),
            });
        }
        Ok(self.weights.iter().map(|r| x.dot(r) + r[self.dim]).collect())
    }

    pub fn predict_proba(&self, x: &SparseVector<F>) -> Result<Vec<F>> {
        let s = self.scores(x)?;
        Ok(scores_to_proba(self.mode, &s))
    }

    /// Argmax of the raw scores, which is the argmax of `predict_proba`
    /// without saturation ties; remaining ties go to the earliest class.
    pub fn predict(&self, x: &SparseVector<F>) -> Result<&str> {
        let s = self.scores(x)?;
        Ok(&self.class_order[argmax(&s)])
    }

    /// Fails unless `hash` names the space this model was trained on. An
    /// empty hash on either side skips the check.
    pub fn check_space(&self, hash: &str) -> Result<()> {
        if !hash.is_empty() && !self.feature_space_hash.is_empty() && hash != self.feature_space_hash {
            return Err(Error::invalid(format!(
                "feature space {hash} does not match the model's space {}",
                self.feature_space_hash
            )));
        }
        Ok(())
    }

    pub fn predict_proba_matrix(&self, m: &FeatureMatrix<F>) -> Result<Vec<Vec<F>>> {
        self.check_space(m.space_hash())?;
        m.rows().par_iter().map(|r| self.predict_proba(r)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite weights serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: AttributorModel<F> = serde_json::from_str(s)?;
        if raw.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported attributor version {:?}", raw.version)));
        }
        let m = Self::from_weights(raw.weights, raw.class_order, raw.mode, raw.lambda, raw.feature_space_hash)?;
        if m.dim != raw.dim {
            return Err(Error::DimensionMismatch {
                expected: raw.dim,
                actual: m.dim,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn argmax<F: Scalar>(p: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// ln(sigmoid(x)) without underflow.
fn log_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn scores_to_proba<F: Scalar>(mode: Mode, s: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); s.len()];
    match mode {
        Mode::Multinomial => softmax_into(s, &mut out),
        // Normalizing sigmoids is a softmax over their logs.
        Mode::OneVsRest => {
            let logs: Vec<F> = s.iter().map(|&x| log_sigmoid(x)).collect();
            softmax_into(&logs, &mut out);
        }
    }
    out
}

fn check_shape<F: Scalar>(weights: &[Vec<F>], m: &FeatureMatrix<F>) -> Result<()> {
    let t = m.class_order().len();
    if weights.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            actual: weights.len(),
        });
    }
    if let Some(r) = weights.iter().find(|r| r.len() != m.dim() + 1) {
        return Err(Error::DimensionMismatch {
            expected: m.dim() + 1,
            actual: r.len(),
        });
    }
    Ok(())
}

fn chunk_bounds(n: usize) -> Vec<(usize, usize)> {
    let size = n.div_ceil(GRAD_CHUNKS).max(1);
    (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect()
}

/// Objective and gradient over a flat row-major weight buffer of T×(V+1).
fn multinomial_objective<F: Scalar>(
    w: &[F],
    t: usize,
    rows: &[SparseVector<F>],
    labels: &[usize],
    lambda: F,
) -> (F, Vec<F>) {
    let width = w.len() / t;
    let v = width - 1;
    let n = F::of_usize(rows.len());
    let partials: Vec<(F, Vec<F>)> = chunk_bounds(rows.len())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut loss = F::zero();
            let mut grad = vec![F::zero(); w.len()];
            let mut scores = vec![F::zero(); t];
            let mut p = vec![F::zero(); t];
            for (x, &y) in rows[lo..hi].iter().zip(&labels[lo..hi]) {
                for (c, s) in scores.iter_mut().enumerate() {
                    let row = &w[c * width..(c + 1) * width];
                    *s = x.dot(row) + row[v];
                }
                loss += log_sum_exp(&scores) - scores[y];
                softmax_into(&scores, &mut p);
                p[y] -= F::one();
                for (c, &r) in p.iter().enumerate() {
                    let g = &mut grad[c * width..(c + 1) * width];
                    for &(i, xi) in x.entries() {
                        g[i] += r * xi;
                    }
                    g[v] += r;
                }
            }
            (loss, grad)
        })
        .collect();
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); w.len()];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    let half = F::of(0.5);
    for c in 0..t {
        for i in 0..v {
            let wi = w[c * width + i];
            loss += half * lambda * wi * wi;
            grad[c * width + i] += lambda * wi;
        }
    }
    (loss, grad)
}

/// Binary logistic objective for one weight row of V+1 values.
fn binary_objective<F: Scalar>(w: &[F], rows: &[SparseVector<F>], positive: &[bool], lambda: F) -> (F, Vec<F>) {
    let v = w.len() - 1;
    let n = F::of_usize(rows.len());
    let partials: Vec<(F, Vec<F>)> = chunk_bounds(rows.len())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut loss = F::zero();
            let mut grad = vec![F::zero(); w.len()];
            for (x, &pos) in rows[lo..hi].iter().zip(&positive[lo..hi]) {
                let z = x.dot(w) + w[v];
                // -ln sigmoid(z) for positives, -ln sigmoid(-z) for negatives.
                let (l, r) = if pos {
                    (-log_sigmoid(z), sigmoid(z) - F::one())
                } else {
                    (-log_sigmoid(-z), sigmoid(z))
                };
                loss += l;
                for &(i, xi) in x.entries() {
                    grad[i] += r * xi;
                }
                grad[v] += r;
            }
            (loss, grad)
        })
        .collect();
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); w.len()];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    let half = F::of(0.5);
    for i in 0..v {
        loss += half * lambda * w[i] * w[i];
        grad[i] += lambda * w[i];
    }
    (loss, grad)
}

/// Exact objective and gradient at `weights` (T rows of V+1, bias last).
/// Multinomial: mean cross-entropy plus (lambda/2)·‖non-bias weights‖².
/// One-vs-rest: the sum of the T binary objectives.
pub fn loss_and_grad<F: Scalar>(
    weights: &[Vec<F>],
    matrix: &FeatureMatrix<F>,
    lambda: F,
    mode: Mode,
) -> Result<(F, Vec<Vec<F>>)> {
    check_shape(weights, matrix)?;
    if matrix.is_empty() {
        return Err(Error::invalid("objective over an empty matrix"));
    }
    let t = weights.len();
    let labels = matrix.label_indices();
    match mode {
        Mode::Multinomial => {
            let flat: Vec<F> = weights.concat();
            let (loss, g) = multinomial_objective(&flat, t, matrix.rows(), &labels, lambda);
            Ok((loss, g.chunks(matrix.dim() + 1).map(<[F]>::to_vec).collect()))
        }
        Mode::OneVsRest => {
            let mut total = F::zero();
            let mut grads = Vec::with_capacity(t);
            for (c, row) in weights.iter().enumerate() {
                let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                let (l, g) = binary_objective(row, matrix.rows(), &pos, lambda);
                total += l;
                grads.push(g);
            }
            Ok((total, grads))
        }
    }
}

/// Gradient descent with Armijo backtracking. Returns the final point and
/// the objective after each accepted step.
fn descend<F: Scalar>(
    mut x: Vec<F>,
    f: impl Fn(&[F]) -> (F, Vec<F>),
    config: &TrainConfig,
) -> (Vec<F>, Vec<f64>, usize, bool) {
    let shrink = F::of(config.shrink);
    let c1 = F::of(config.sufficient_decrease);
    let tol = F::of(config.grad_tol);
    let min_step = F::of(1e-30);
    let (mut fx, mut g) = f(&x);
    let mut trace = vec![fx.as_f64()];
    let mut step = F::one();
    let mut trial = vec![F::zero(); x.len()];
    for iter in 0..config.max_iters {
        let gg: F = g.iter().map(|&v| v * v).sum();
        if gg.sqrt() <= tol {
            return (x, trace, iter, true);
        }
        // Allow the step to grow again after a run of easy acceptances.
        step = (step / shrink).min(F::of(1e6));
        loop {
            for ((t, &xi), &gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xi - step * gi;
            }
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx - c1 * step * gg {
                std::mem::swap(&mut x, &mut trial);
                fx = ft;
                g = gt;
                break;
            }
            step *= shrink;
            if step < min_step {
                // No representable decrease left along the gradient.
                return (x, trace, iter, false);
            }
        }
        trace.push(fx.as_f64());
    }
    let gg: F = g.iter().map(|&v| v * v).sum();
    let converged = gg.sqrt() <= tol;
    (x, trace, config.max_iters, converged)
}

/// Fits an attributor. Weights start at zero, so training is a pure
/// function of the matrix and config.
pub fn train<F: Scalar>(matrix: &FeatureMatrix<F>, config: &TrainConfig, mode: Mode) -> Result<AttributorModel<F>> {
    train_with_trace(matrix, config, mode).map(|(m, _)| m)
}

pub fn train_with_trace<F: Scalar>(
    matrix: &FeatureMatrix<F>,
    config: &TrainConfig,
    mode: Mode,
) -> Result<(AttributorModel<F>, TrainTrace)> {
    config.validate()?;
    if matrix.is_empty() {
        return Err(Error::invalid("cannot train on an empty matrix"));
    }
    let t = matrix.class_order().len();
    let labels = matrix.label_indices();
    let mut present = vec![false; t];
    for &y in &labels {
        present[y] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::invalid("training needs at least two classes with examples"));
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::invalid(format!(
            "class {:?} has no training rows",
            matrix.class_order()[c]
        )));
    }
    let width = matrix.dim() + 1;
    let lambda = F::of(config.lambda);
    let (weights, trace) = match mode {
        Mode::Multinomial => {
            let f = |w: &[F]| multinomial_objective(w, t, matrix.rows(), &labels, lambda);
            let (w, obj, iters, conv) = descend(vec![F::zero(); t * width], f, config);
            let rows = w.chunks(width).map(<[F]>::to_vec).collect();
            (
                rows,
                TrainTrace {
                    objective: obj,
                    iterations: iters,
                    converged: conv,
                },
            )
        }
        Mode::OneVsRest => {
            let mut rows = Vec::with_capacity(t);
            let mut start = 0.0;
            let mut end = 0.0;
            let mut iterations = 0;
            let mut converged = true;
            for c in 0..t {
                let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                let f = |w: &[F]| binary_objective(w, matrix.rows(), &pos, lambda);
                let (w, obj, iters, conv) = descend(vec![F::zero(); width], f, config);
                start += obj[0];
                end += obj[obj.len() - 1];
                iterations = iterations.max(iters);
                converged &= conv;
                rows.push(w);
            }
            (
                rows,
                TrainTrace {
                    objective: vec![start, end],
                    iterations,
                    converged,
                },
            )
        }
    };
    if !trace.converged {
        log::debug!(
            "attributor stopped after {} iterations without reaching grad_tol {}",
            trace.iterations,
            config.grad_tol
        );
    }
    let model = AttributorModel::from_weights(
        weights,
        matrix.class_order().to_vec(),
        mode,
        config.lambda,
        matrix.space_hash(),
    )?;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sv(entries: &[(usize, f64)], dim: usize) -> SparseVector<f64> {
        SparseVector::new(entries.to_vec(), dim).unwrap()
    }

    fn line_problem() -> FeatureMatrix<f64> {
        // x = -1 encoded as feature 0, x = +1 as feature 1.
        FeatureMatrix::new(
            vec![sv(&[(0, 1.0)], 2), sv(&[(1, 1.0)], 2)],
            vec!["A".into(), "B".into()],
            2,
        )
        .unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, v: usize, t: usize) -> FeatureMatrix<f64> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let mut e = Vec::new();
            for j in 0..v {
                if rng.random_bool(0.4) {
                    e.push((j, rng.random_range(0.1..3.0)));
                }
            }
            rows.push(sv(&e, v));
            labels.push(format!("c{}", i % t));
        }
        FeatureMatrix::new(rows, labels, v).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, t: usize, width: usize, scale: f64) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..width).map(|_| rng.random_range(-scale..scale)).collect())
            .collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = AttributorModel::from_weights(vec![vec![0.0; 4]; 5], (0..5).map(|i| format!("t{i}")).collect(), Mode::Multinomial, 0.0, "").unwrap();
        let p = m.predict_proba(&sv(&[(0, 3.0), (2, 1.0)], 3)).unwrap();
        for x in p {
            assert_relative_eq!(x, 0.2, epsilon = 1e-15);
        }
        assert_eq!(m.predict(&sv(&[], 3)).unwrap(), "t0");
    }

    #[test]
    fn bias_only_model() {
        let m = AttributorModel::from_weights(
            vec![vec![0.0, 3f64.ln()], vec![0.0, 0.0]],
            vec!["a".into(), "b".into()],
            Mode::Multinomial,
            0.0,
            "",
        )
        .unwrap();
        let p = m.predict_proba(&sv(&[(0, 7.0)], 1)).unwrap();
        assert_relative_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.25, epsilon = 1e-12);
        assert_eq!(m.predict(&sv(&[], 1)).unwrap(), "a");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = AttributorModel::from_weights(vec![vec![0.0; 3]; 2], vec!["a".into(), "b".into()], Mode::Multinomial, 0.0, "").unwrap();
        assert!(matches!(m.predict_proba(&sv(&[], 5)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn separable_line() {
        let (m, trace) = train_with_trace(&line_problem(), &TrainConfig::default(), Mode::Multinomial).unwrap();
        assert_eq!(m.predict(&sv(&[(0, 1.0)], 2)).unwrap(), "A");
        assert_eq!(m.predict(&sv(&[(1, 1.0)], 2)).unwrap(), "B");
        // Weight of "x = +1" favors B over A.
        assert!(m.weights()[1][1] > m.weights()[0][1]);
        assert!(trace.converged);
    }

    #[test]
    fn uniform_loss_is_ln_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 20, 6, 4);
        let (l, _) = loss_and_grad(&vec![vec![0.0; 7]; 4], &m, 0.5, Mode::Multinomial).unwrap();
        assert_relative_eq!(l, 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn regularizer_difference_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_matrix(&mut rng, 15, 5, 3);
        let w = random_weights(&mut rng, 3, 6, 1.0);
        let lambda = 0.37;
        let (l0, _) = loss_and_grad(&w, &m, 0.0, Mode::Multinomial).unwrap();
        let (l1, _) = loss_and_grad(&w, &m, lambda, Mode::Multinomial).unwrap();
        let norm: f64 = w.iter().flat_map(|r| r[..5].iter()).map(|x| x * x).sum();
        assert_relative_eq!(l1 - l0, lambda / 2.0 * norm, epsilon = 1e-12);
    }

    fn finite_difference_check(mode: Mode, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(2..5);
        let v = rng.random_range(1..6);
        let n = rng.random_range(4..12);
        let m = random_matrix(&mut rng, n, v, t);
        let w = random_weights(&mut rng, m.class_order().len(), v + 1, 0.8);
        let lambda = rng.random_range(0.0..0.5);
        let (_, g) = loss_and_grad(&w, &m, lambda, mode).unwrap();
        let h = 1e-5;
        for c in 0..w.len() {
            for i in 0..=v {
                let mut wp = w.clone();
                wp[c][i] += h;
                let mut wm = w.clone();
                wm[c][i] -= h;
                let fd = (loss_and_grad(&wp, &m, lambda, mode).unwrap().0 - loss_and_grad(&wm, &m, lambda, mode).unwrap().0) / (2.0 * h);
                let err = (fd - g[c][i]).abs() / g[c][i].abs().max(1e-3);
                assert!(err <= 1e-5, "seed {seed} mode {mode} ({c},{i}): analytic {} vs fd {fd}", g[c][i]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..25 {
            finite_difference_check(Mode::Multinomial, seed);
            finite_difference_check(Mode::OneVsRest, 100 + seed);
        }
    }

    #[test]
    fn descent_is_monotone_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_matrix(&mut rng, 60, 8, 3);
        let cfg = TrainConfig {
            max_iters: 200,
            ..TrainConfig::default()
        };
        let (a, trace) = train_with_trace(&m, &cfg, Mode::Multinomial).unwrap();
        assert!(trace.objective.windows(2).all(|w| w[1] <= w[0]));
        let b = train(&m, &cfg, Mode::Multinomial).unwrap();
        let bits = |m: &AttributorModel<f64>| -> Vec<u64> { m.weights().iter().flatten().map(|x| x.to_bits()).collect() };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn stronger_regularization_shrinks_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = random_matrix(&mut rng, 40, 6, 3);
        let norms: Vec<f64> = [0.01, 0.1, 1.0, 10.0]
            .iter()
            .map(|&lambda| {
                let cfg = TrainConfig {
                    lambda,
                    ..TrainConfig::default()
                };
                train(&m, &cfg, Mode::Multinomial).unwrap().weight_norm_sq()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn one_vs_rest_fits_and_normalizes() {
        let (m, trace) = train_with_trace(&line_problem(), &TrainConfig::default(), Mode::OneVsRest).unwrap();
        assert!(trace.objective[1] < trace.objective[0]);
        let p = m.predict_proba(&sv(&[(1, 1.0)], 2)).unwrap();
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(m.predict(&sv(&[(1, 1.0)], 2)).unwrap(), "B");
        // Extreme scores must not underflow into NaN.
        let big = AttributorModel::from_weights(vec![vec![-2000.0, 0.0], vec![-3000.0, 0.0]], vec!["a".into(), "b".into()], Mode::OneVsRest, 0.0, "").unwrap();
        let p = big.predict_proba(&sv(&[(0, 1.0)], 1)).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_eq!(big.predict(&sv(&[(0, 1.0)], 1)).unwrap(), "a");
    }

    #[test]
    fn training_errors() {
        let single = FeatureMatrix::new(vec![sv(&[], 1)], vec!["a".into()], 1).unwrap();
        assert!(train(&single, &TrainConfig::default(), Mode::Multinomial).is_err());
        let missing = FeatureMatrix::with_classes(vec![sv(&[], 1), sv(&[], 1)], vec!["a".into(), "b".into()], vec!["a".into(), "b".into(), "c".into()], 1).unwrap();
        assert!(train(&missing, &TrainConfig::default(), Mode::Multinomial).is_err());
        let bad = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&line_problem(), &bad, Mode::Multinomial), Err(Error::Config(_))));
    }

    #[test]
    fn f32_training_agrees_on_labels() {
        let m32 = FeatureMatrix::<f32>::new(
            vec![SparseVector::new(vec![(0, 1.0)], 2).unwrap(), SparseVector::new(vec![(1, 1.0)], 2).unwrap()],
            vec!["A".into(), "B".into()],
            2,
        )
        .unwrap();
        let cfg = TrainConfig {
            grad_tol: 1e-4,
            ..TrainConfig::default()
        };
        let m = train(&m32, &cfg, Mode::Multinomial).unwrap();
        assert_eq!(m.predict(&m32.rows()[1]).unwrap(), "B");
    }

    #[test]
    fn json_round_trip_and_space_check() {
        let mut mat = line_problem();
        mat = mat.with_space_hash("abc");
        let m = train(&mat, &TrainConfig::default(), Mode::Multinomial).unwrap();
        let back = AttributorModel::<f64>::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.feature_space_hash(), "abc");
        assert!(m.predict_proba_matrix(&line_problem().with_space_hash("xyz")).is_err());
        assert!(m.predict_proba_matrix(&line_problem().with_space_hash("abc")).is_ok());
    }
}
