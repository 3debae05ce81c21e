//! Ridge-regularized logistic readouts on frozen feature maps.
//!
//! Objective: `Σ_μ log(1 + exp(-y_μ v_μ·w/√H)) + (λ/2)‖w‖²`, minimized by
//! damped Newton with Armijo backtracking.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::invalid;
use crate::generator::{normal_matrix, sample_dataset, sign, GenerativePair};
use crate::linalg::solve_spd;
use crate::rng::{StreamKey, StreamTag};
use crate::twolayer::{hidden_of, logistic_loss, sigmoid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Transferred,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `H × D`.
    pub w1: Array2<f64>,
    pub kind: FeatureKind,
}

impl FeatureMap {
    pub fn transferred(w1: Array2<f64>) -> Result<Self> {
        if w1.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite transferred feature weight"));
        }
        Ok(Self {
            w1,
            kind: FeatureKind::Transferred,
        })
    }

    /// i.i.d. standard normal first layer from the `RandomFeatures` stream of `seed`.
    pub fn random(hidden_dim: usize, input_dim: usize, seed: u64) -> Result<Self> {
        if hidden_dim == 0 || input_dim == 0 {
            return Err(invalid("feature map dimensions must be positive"));
        }
        let mut rng = StreamKey::new(seed, StreamTag::RandomFeatures, 0).rng();
        Ok(Self {
            w1: normal_matrix(&mut rng, hidden_dim, input_dim),
            kind: FeatureKind::Random,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }
}

/// Row `μ` is `ReLU(X_μ w1ᵀ / D)`.
pub fn activations(fm: &FeatureMap, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != fm.input_dim() {
        return Err(Error::Shape(format!(
            "inputs have D = {}, feature map expects {}",
            x.ncols(),
            fm.input_dim()
        )));
    }
    Ok(hidden_of(&fm.w1, x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutFit {
    pub w2: Array1<f64>,
    pub lambda: f64,
    pub tol: f64,
    /// Max-norm of the gradient at `w2`.
    pub final_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting at the initial point.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverSettings {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            tol: 1e-7,
            max_iter: 10_000,
        }
    }
}

impl ReadoutFit {
    pub fn save(&self, dir: &Path) -> Result<()> {
        container::save_vector(&dir.join("w2.bin"), &self.w2)?;
        container::write_json(
            &dir.join("readout.json"),
            &serde_json::json!({
                "lambda": self.lambda,
                "tol": self.tol,
                "iterations": self.iterations,
                "final_grad_norm": self.final_grad_norm,
                "converged": self.converged,
            }),
        )
    }
}

struct Problem<'a> {
    /// `V / √H`.
    x: Array2<f64>,
    y: ArrayView1<'a, f64>,
    lambda: f64,
}

impl Problem<'_> {
    fn value(&self, w: &Array1<f64>) -> f64 {
        let z = self.x.dot(w);
        let loss: f64 = z
            .iter()
            .zip(self.y.iter())
            .map(|(&zi, &yi)| logistic_loss(yi, zi))
            .sum();
        loss + 0.5 * self.lambda * w.dot(w)
    }

    /// Gradient and the per-sample curvature `σ(z)σ(-z)`.
    fn gradient(&self, w: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let z = self.x.dot(w);
        let mut r = Array1::zeros(z.len());
        let mut curv = Array1::zeros(z.len());
        for (i, (&zi, &yi)) in z.iter().zip(self.y.iter()).enumerate() {
            r[i] = -yi * sigmoid(-yi * zi);
            curv[i] = sigmoid(zi) * sigmoid(-zi);
        }
        (self.x.t().dot(&r) + self.lambda * w, curv)
    }

    fn hessian(&self, curv: &Array1<f64>) -> Array2<f64> {
        let mut scaled = self.x.clone();
        for (mut row, &c) in scaled.axis_iter_mut(Axis(0)).zip(curv.iter()) {
            row *= c.sqrt();
        }
        let mut hess = scaled.t().dot(&scaled);
        hess.diag_mut().mapv_inplace(|d| d + self.lambda);
        hess
    }
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

/// Newton direction, with a diagonal shift added only if the Cholesky
/// factorization breaks down.
fn newton_direction(hess: &Array2<f64>, grad: &Array1<f64>) -> Result<Array1<f64>> {
    if let Some(d) = solve_spd(hess.view(), grad.view()) {
        return Ok(d);
    }
    let scale = hess.diag().iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut shift = 1e-12 * scale;
    while shift < 1e6 * scale {
        let mut h = hess.clone();
        h.diag_mut().mapv_inplace(|v| v + shift);
        if let Some(d) = solve_spd(h.view(), grad.view()) {
            return Ok(d);
        }
        shift *= 10.0;
    }
    Err(Error::NonFinite("Newton system could not be factorized".into()))
}

/// Minimizes the regularized logistic objective on activations `v` (`M × H`).
///
/// Non-convergence within `max_iter` is reported through `converged = false`.
pub fn fit_ridge_logistic(
    v: ArrayView2<f64>,
    y: ArrayView1<f64>,
    settings: &SolverSettings,
    init: Option<ArrayView1<f64>>,
) -> Result<ReadoutFit> {
    let SolverSettings { lambda, tol, max_iter } = *settings;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if v.nrows() != y.len() || v.nrows() == 0 {
        return Err(Error::Shape(format!(
            "{} activation rows for {} labels",
            v.nrows(),
            y.len()
        )));
    }
    let h = v.ncols();
    let problem = Problem {
        x: v.to_owned() / (h as f64).sqrt(),
        y,
        lambda,
    };
    let mut w = match init {
        Some(w0) if w0.len() == h => w0.to_owned(),
        Some(w0) => return Err(Error::Shape(format!("init has {} entries for H = {h}", w0.len()))),
        None => Array1::zeros(h),
    };
    let mut f = problem.value(&w);
    let mut trace = vec![f];
    let (mut grad, mut curv) = problem.gradient(&w);
    let mut iterations = 0;
    while max_abs(&grad) > tol && iterations < max_iter {
        iterations += 1;
        let dir = newton_direction(&problem.hessian(&curv), &grad)?;
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-16 {
            let cand = &w - &(t * &dir);
            let fc = problem.value(&cand);
            if fc <= f - 1e-4 * t * slope {
                // Round-off can stall the Armijo test at the optimum; a
                // non-increasing step still counts.
                accepted = fc < f || max_abs(&problem.gradient(&cand).0) < max_abs(&grad);
                if accepted {
                    w = cand;
                    f = fc;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(f);
        (grad, curv) = problem.gradient(&w);
        if !f.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective diverged at iteration {iterations}"
            )));
        }
    }
    let final_grad_norm = max_abs(&grad);
    Ok(ReadoutFit {
        w2: w,
        lambda,
        tol,
        final_grad_norm,
        iterations,
        converged: final_grad_norm <= tol,
        objective_trace: trace,
    })
}

/// Readout logits `V w / √H`.
pub fn readout_logits(v: ArrayView2<f64>, w2: ArrayView1<f64>) -> Array1<f64> {
    v.dot(&w2) / (w2.len() as f64).sqrt()
}

/// Fraction of rows where `sign(v·w/√H) ≠ y`.
pub fn misclassification(v: ArrayView2<f64>, w2: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let z = readout_logits(v, w2);
    let wrong = z.iter().zip(y.iter()).filter(|(&zi, &yi)| sign(zi) != yi).count();
    wrong as f64 / y.len().max(1) as f64
}

/// Mean logistic loss of the readout, without the penalty.
pub fn mean_logistic_loss(v: ArrayView2<f64>, w2: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let z = readout_logits(v, w2);
    z.iter()
        .zip(y.iter())
        .map(|(&zi, &yi)| logistic_loss(yi, zi))
        .sum::<f64>()
        / y.len().max(1) as f64
}

const TEST_CHUNK: usize = 4096;

/// Misclassification rate on `n_test` fresh samples of `pair` from the `TestData` stream of `seed`.
pub fn empirical_test_error(
    w2: ArrayView1<f64>,
    fm: &FeatureMap,
    pair: &GenerativePair,
    n_test: usize,
    seed: u64,
) -> Result<f64> {
    if n_test == 0 {
        return Err(invalid("n_test must be positive"));
    }
    if w2.len() != fm.hidden_dim() {
        return Err(Error::Shape("readout and feature map widths differ".into()));
    }
    let test = sample_dataset(pair, n_test, StreamKey::new(seed, StreamTag::TestData, 0))?;
    let mut wrong = 0.0;
    let mut start = 0;
    while start < n_test {
        let end = (start + TEST_CHUNK).min(n_test);
        let v = activations(fm, test.inputs.slice(s![start..end, ..]))?;
        wrong += misclassification(v.view(), w2, test.labels.slice(s![start..end])) * (end - start) as f64;
        start = end;
    }
    Ok(wrong / n_test as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::sample_generative_pair;
    use ndarray::array;
    use rand::Rng;

    fn random_problem(m: usize, h: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = StreamKey::new(seed, StreamTag::TestData, 99).rng();
        let v = Array2::from_shape_fn((m, h), |_| rng.gen_range(-1.0..1.5));
        let y = Array1::from_shape_fn(m, |_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
        (v, y)
    }

    #[test]
    fn zero_inputs_give_zero_activations() {
        let fm = FeatureMap::random(4, 6, 1).unwrap();
        let a = activations(&fm, Array2::zeros((3, 6)).view()).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn activations_match_scalar_loops() {
        let (d, h, m) = (6, 4, 3);
        let fm = FeatureMap::random(h, d, 2).unwrap();
        let (x, _) = random_problem(m, d, 3);
        let a = activations(&fm, x.view()).unwrap();
        for mu in 0..m {
            for j in 0..h {
                let mut s = 0.0;
                for i in 0..d {
                    s += x[[mu, i]] * fm.w1[[j, i]];
                }
                assert!((a[[mu, j]] - (s / d as f64).max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_sided_labels_give_positive_logits() {
        let v = array![[1.0, 0.2], [0.5, -0.3], [2.0, 0.0]];
        let y = array![1.0, 1.0, 1.0];
        let fit = fit_ridge_logistic(v.view(), y.view(), &SolverSettings::new(0.1), None).unwrap();
        assert!(fit.converged);
        assert!(readout_logits(v.view(), fit.w2.view()).iter().all(|&z| z > 0.0));
    }

    fn objective(v: &Array2<f64>, y: &Array1<f64>, lam: f64, w: &Array1<f64>) -> f64 {
        let h = w.len() as f64;
        let z = v.dot(w) / h.sqrt();
        z.iter()
            .zip(y.iter())
            .map(|(&zi, &yi)| (1.0 + (-yi * zi).exp()).ln())
            .sum::<f64>()
            + 0.5 * lam * w.dot(w)
    }

    #[test]
    fn matches_brute_force_minimum() {
        let (v, y) = random_problem(8, 3, 4);
        let lam = 0.1;
        let fit = fit_ridge_logistic(v.view(), y.view(), &SolverSettings::new(lam), None).unwrap();
        // Dense grid, then coordinate-wise golden polishing with shrinking steps.
        let mut best = Array1::zeros(3);
        let mut best_f = f64::INFINITY;
        let grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.25).collect();
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    let w = array![a, b, c];
                    let f = objective(&v, &y, lam, &w);
                    if f < best_f {
                        best_f = f;
                        best = w;
                    }
                }
            }
        }
        let mut step = 0.25;
        while step > 1e-10 {
            let mut improved = false;
            for i in 0..3 {
                for dir in [-1.0, 1.0] {
                    let mut w = best.clone();
                    w[i] += dir * step;
                    let f = objective(&v, &y, lam, &w);
                    if f < best_f {
                        best_f = f;
                        best = w;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        let fitted = objective(&v, &y, lam, &fit.w2);
        assert!((fitted - best_f).abs() < 1e-6, "{fitted} vs {best_f}");
        assert!(fitted <= best_f + 1e-12);
    }

    #[test]
    fn objective_decreases_and_converges() {
        let (v, y) = random_problem(60, 10, 5);
        let fit = fit_ridge_logistic(v.view(), y.view(), &SolverSettings::new(1e-3), None).unwrap();
        assert!(fit.converged);
        assert!(fit.final_grad_norm <= 1e-7);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn unique_across_initializations() {
        let (v, y) = random_problem(40, 8, 6);
        let s = SolverSettings::new(0.05);
        let a = fit_ridge_logistic(v.view(), y.view(), &s, None).unwrap();
        let init = Array1::from_elem(8, 3.0);
        let b = fit_ridge_logistic(v.view(), y.view(), &s, Some(init.view())).unwrap();
        let diff = (&a.w2 - &b.w2).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let (v, y) = random_problem(5, 2, 7);
        assert!(fit_ridge_logistic(v.view(), y.view(), &SolverSettings::new(0.0), None).is_err());
    }

    #[test]
    fn norm_grows_as_lambda_shrinks_when_separable() {
        // Fewer samples than features: separable.
        let (v, y) = random_problem(10, 30, 8);
        let norms: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&lam| {
                let fit = fit_ridge_logistic(v.view(), y.view(), &SolverSettings::new(lam), None).unwrap();
                assert_eq!(misclassification(v.view(), fit.w2.view(), y.view()), 0.0);
                fit.w2.dot(&fit.w2).sqrt()
            })
            .collect();
        assert!(norms[0] < norms[1] && norms[1] < norms[2], "{norms:?}");
    }

    #[test]
    fn norm_bounded_when_not_separable() {
        // Contradictory duplicated rows make the data non-separable.
        let (v0, y0) = random_problem(30, 3, 9);
        let v = ndarray::concatenate(Axis(0), &[v0.view(), v0.view()]).unwrap();
        let y = ndarray::concatenate(Axis(0), &[y0.view(), (-&y0).view()]).unwrap();
        let n6 = fit_ridge_logistic(v.view(), y.view(), &SolverSettings::new(1e-6), None).unwrap();
        let n8 = fit_ridge_logistic(v.view(), y.view(), &SolverSettings::new(1e-8), None).unwrap();
        assert!(n6.w2.dot(&n6.w2) < 1e-6 && n8.w2.dot(&n8.w2) < 1e-6);
    }

    #[test]
    fn test_error_extremes() {
        let pair = sample_generative_pair(10, 40, 3).unwrap();
        let fm = FeatureMap::random(20, 40, 4).unwrap();
        let n = 20_000;
        let err = empirical_test_error(Array1::zeros(20).view(), &fm, &pair, n, 5).unwrap();
        assert!((err - 0.5).abs() < 4.0 / (n as f64).sqrt(), "{err}");
    }

    #[test]
    fn perfect_readout_on_separable_toy() {
        let v = array![[1.0, 0.0], [0.0, 1.0], [2.0, 0.5]];
        let y = array![1.0, -1.0, 1.0];
        let w = array![1.0, -1.0];
        assert_eq!(misclassification(v.view(), w.view(), y.view()), 0.0);
    }
}
