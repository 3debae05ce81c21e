//! Gaussian-equivalent model of a frozen feature map on a target task.
//!
//! The readout sees activations `v = ReLU(ReLU(c F / √L) w1ᵀ / D)`. The
//! equivalent model replaces `(c, v)` by a jointly Gaussian pair with the
//! same second moments: `E[c cᵀ] = I`, `E[c vᵀ] = Φ`, `E[v vᵀ] = Ω`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::convex::FeatureMap;
use crate::error::invalid;
use crate::generator::{normal_matrix, sign, GenerativePair};
use crate::linalg::symmetric_eigen;
use crate::rng::{StreamKey, StreamTag};
use crate::{Error, Result};

const MC_BATCH: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentModel {
    /// `H × H`, uncentered second moment of the activations.
    pub omega: Array2<f64>,
    /// `L × H`, cross moment of latent coefficients and activations.
    pub phi: Array2<f64>,
    /// Variance of the teacher field, `‖θ‖² / L`.
    pub rho_norm: f64,
    /// `L / H`.
    pub gamma: f64,
    pub n_mc: usize,
    /// Diagnostic `E[v]`.
    pub mean_activation: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    /// Eigenvalues of `Ω`, descending, clipped at zero.
    pub eigenvalues: Array1<f64>,
    /// Coordinates of `Φ θ / √L` in the eigenbasis of `Ω`.
    pub teacher_proj: Array1<f64>,
    pub rho_norm: f64,
    pub gamma: f64,
    pub latent_dim: usize,
}

impl SpectralModel {
    pub fn hidden_dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Hex SHA-256 of the feature-map weights, for provenance sidecars.
pub fn feature_map_hash(fm: &FeatureMap) -> String {
    let mut hasher = Sha256::new();
    hasher.update((fm.w1.nrows() as u64).to_le_bytes());
    hasher.update((fm.w1.ncols() as u64).to_le_bytes());
    for v in fm.w1.iter() {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Accumulates the moments over `n_mc` fresh latent draws.
///
/// Batches of fixed size draw from their own `MonteCarlo` sub-stream and are
/// reduced in batch order, so the estimate does not depend on thread count.
pub fn estimate_covariances(fm: &FeatureMap, pair: &GenerativePair, n_mc: usize, seed: u64) -> Result<EquivalentModel> {
    if n_mc == 0 {
        return Err(invalid("n_mc must be positive"));
    }
    if fm.input_dim() != pair.input_dim() {
        return Err(Error::Shape(format!(
            "feature map expects D = {}, task has D = {}",
            fm.input_dim(),
            pair.input_dim()
        )));
    }
    let h = fm.hidden_dim();
    let l = pair.latent_dim();
    if n_mc < h {
        log::warn!("n_mc = {n_mc} is below H = {h}; the covariance estimate is rank deficient");
    }
    let base = StreamKey::new(seed, StreamTag::MonteCarlo, n_mc as u64);
    let n_batches = n_mc.div_ceil(MC_BATCH);
    let scale = 1.0 / (l as f64).sqrt();
    let partials: Vec<(Array2<f64>, Array2<f64>, Array1<f64>)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let rows = MC_BATCH.min(n_mc - b * MC_BATCH);
            let mut rng = base.sub(b as u64).rng();
            let c = normal_matrix(&mut rng, rows, l);
            let mut x = c.dot(&pair.features);
            x.mapv_inplace(|v| (v * scale).max(0.0));
            let v = crate::twolayer::hidden_of(&fm.w1, x.view());
            (v.t().dot(&v), c.t().dot(&v), v.sum_axis(Axis(0)))
        })
        .collect();
    let mut omega = Array2::zeros((h, h));
    let mut phi = Array2::zeros((l, h));
    let mut mean = Array1::zeros(h);
    for (o, p, s) in &partials {
        omega += o;
        phi += p;
        mean += s;
    }
    let inv = 1.0 / n_mc as f64;
    omega *= inv;
    phi *= inv;
    mean *= inv;
    // Exact symmetry; the batch products are symmetric only to round-off.
    let sym = (&omega + &omega.t()) * 0.5;
    let rho_norm = pair.teacher.dot(&pair.teacher) / l as f64;
    if !(rho_norm > 0.0) {
        return Err(invalid("teacher has zero norm"));
    }
    Ok(EquivalentModel {
        omega: sym,
        phi,
        rho_norm,
        gamma: l as f64 / h as f64,
        n_mc,
        mean_activation: mean,
    })
}

impl EquivalentModel {
    pub fn hidden_dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.phi.nrows()
    }

    /// `Φᵀ θ / √L`, length `H`.
    pub fn teacher_field(&self, teacher: ArrayView1<f64>) -> Array1<f64> {
        self.phi.t().dot(&teacher) / (self.latent_dim() as f64).sqrt()
    }

    /// Measured overlaps of a readout: `q = wᵀΩw / H`, `m = θᵀΦw / √(L H)`.
    pub fn measured_overlaps(&self, w2: ArrayView1<f64>, teacher: ArrayView1<f64>) -> (f64, f64) {
        let h = self.hidden_dim() as f64;
        let q = w2.dot(&self.omega.dot(&w2)) / h;
        let m = self.teacher_field(teacher).dot(&w2) / h.sqrt();
        (q, m)
    }

    pub fn save(&self, dir: &Path, seed: u64, fm_hash: &str) -> Result<()> {
        container::save_matrix(&dir.join("omega.bin"), &self.omega)?;
        container::save_matrix(&dir.join("phi.bin"), &self.phi)?;
        container::save_vector(&dir.join("mean_activation.bin"), &self.mean_activation)?;
        container::write_json(
            &dir.join("equivalent.json"),
            &serde_json::json!({
                "n_mc": self.n_mc,
                "seed": seed,
                "fm_hash": fm_hash,
                "rho_norm": self.rho_norm,
                "gamma": self.gamma,
            }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value = container::read_json(&dir.join("equivalent.json"))?;
        let field = |k: &str| {
            meta.get(k)
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| invalid(format!("equivalent.json lacks {k}")))
        };
        Ok(Self {
            omega: container::load_matrix(&dir.join("omega.bin"))?,
            phi: container::load_matrix(&dir.join("phi.bin"))?,
            mean_activation: container::load_vector(&dir.join("mean_activation.bin"))?,
            rho_norm: field("rho_norm")?,
            gamma: field("gamma")?,
            n_mc: field("n_mc")? as usize,
        })
    }
}

/// Eigendecomposition of `Ω`, reusable across teachers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// Descending, clipped at zero.
    pub values: Array1<f64>,
    /// Columns are eigenvectors.
    pub vectors: Array2<f64>,
}

pub fn eigenbasis(eq: &EquivalentModel) -> Result<SpectralBasis> {
    let asym = (&eq.omega - &eq.omega.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if asym > 1e-10 {
        return Err(invalid(format!("omega is not symmetric (max asymmetry {asym:e})")));
    }
    let (mut values, vectors) = symmetric_eigen(eq.omega.view())?;
    let top = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(&low) = values.iter().last() {
        if low < -1e-8 * top {
            return Err(Error::Eigen(format!("omega has a negative eigenvalue {low:e}")));
        }
    }
    values.mapv_inplace(|v| v.max(0.0));
    Ok(SpectralBasis { values, vectors })
}

impl SpectralBasis {
    pub fn project(&self, eq: &EquivalentModel, teacher: ArrayView1<f64>) -> Result<SpectralModel> {
        if teacher.len() != eq.latent_dim() {
            return Err(Error::Shape(format!(
                "teacher has {} entries, model has L = {}",
                teacher.len(),
                eq.latent_dim()
            )));
        }
        Ok(SpectralModel {
            eigenvalues: self.values.clone(),
            teacher_proj: self.vectors.t().dot(&eq.teacher_field(teacher)),
            rho_norm: teacher.dot(&teacher) / teacher.len() as f64,
            gamma: eq.gamma,
            latent_dim: eq.latent_dim(),
        })
    }
}

/// Eigendecomposition of `Ω` and projection of the teacher field onto its eigenbasis.
pub fn spectralize(eq: &EquivalentModel, teacher: ArrayView1<f64>) -> Result<SpectralModel> {
    if teacher.len() != eq.latent_dim() {
        return Err(Error::Shape(format!(
            "teacher has {} entries, model has L = {}",
            teacher.len(),
            eq.latent_dim()
        )));
    }
    eigenbasis(eq)?.project(eq, teacher)
}

/// Draws exact samples `(v, y)` of the Gaussian-equivalent model.
pub struct GaussianCovariates {
    phi: Array2<f64>,
    /// Symmetric square root of the conditional covariance `Ω − Φᵀ Φ`.
    noise_root: Array2<f64>,
    teacher: Array1<f64>,
}

impl GaussianCovariates {
    pub fn new(eq: &EquivalentModel, teacher: ArrayView1<f64>) -> Result<Self> {
        if teacher.len() != eq.latent_dim() {
            return Err(Error::Shape("teacher length differs from L".into()));
        }
        let cond = &eq.omega - &eq.phi.t().dot(&eq.phi);
        let cond = (&cond + &cond.t()) * 0.5;
        let (vals, vecs) = symmetric_eigen(cond.view())?;
        let roots = vals.mapv(|v| v.max(0.0).sqrt());
        let noise_root = (&vecs * &roots).dot(&vecs.t());
        Ok(Self {
            phi: eq.phi.clone(),
            noise_root,
            teacher: teacher.to_owned(),
        })
    }

    /// `m` samples: activations `M × H` and `±1` labels.
    pub fn sample(&self, m: usize, key: StreamKey) -> (Array2<f64>, Array1<f64>) {
        let (l, h) = self.phi.dim();
        let mut rng = key.rng();
        let c = normal_matrix(&mut rng, m, l);
        let g = normal_matrix(&mut rng, m, h);
        let v = c.dot(&self.phi) + g.dot(&self.noise_root);
        let y = c.dot(&self.teacher).mapv(sign);
        (v, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::sample_generative_pair;
    use crate::quadrature::GaussHermite;

    #[test]
    fn zero_feature_map_gives_zero_moments() {
        let pair = sample_generative_pair(3, 5, 1).unwrap();
        let fm = FeatureMap::transferred(Array2::zeros((4, 5))).unwrap();
        let eq = estimate_covariances(&fm, &pair, 100, 2).unwrap();
        assert!(eq.omega.iter().all(|&v| v == 0.0));
        assert!(eq.phi.iter().all(|&v| v == 0.0));
    }

    /// `E[ReLU(a·c) ReLU(b·c)]` style oracle for activations `ReLU(u_j·x/D)` with
    /// `x = ReLU(c F/√L)`, over `c ∈ R²` by tensor Gauss-Hermite.
    fn quadrature_moments(pair: &GenerativePair, fm: &FeatureMap) -> (Array2<f64>, Array2<f64>) {
        let gh = GaussHermite::new(120);
        let h = fm.hidden_dim();
        let l = pair.latent_dim();
        assert_eq!(l, 2);
        let mut omega = Array2::zeros((h, h));
        let mut phi = Array2::zeros((l, h));
        for (z1, w1) in gh.pairs() {
            for (z2, w2) in gh.pairs() {
                let c = ndarray::array![z1, z2];
                let x = (c.dot(&pair.features) / (l as f64).sqrt()).mapv(|v| v.max(0.0));
                let v = fm.w1.dot(&x).mapv(|a| (a / fm.input_dim() as f64).max(0.0));
                let w = w1 * w2;
                for i in 0..h {
                    for j in 0..h {
                        omega[[i, j]] += w * v[i] * v[j];
                    }
                    for k in 0..l {
                        phi[[k, i]] += w * c[k] * v[i];
                    }
                }
            }
        }
        (omega, phi)
    }

    #[test]
    fn tiny_instance_matches_quadrature() {
        let pair = sample_generative_pair(2, 4, 3).unwrap();
        let fm = FeatureMap::random(3, 4, 4).unwrap();
        let eq = estimate_covariances(&fm, &pair, 1_000_000, 5).unwrap();
        let (omega, phi) = quadrature_moments(&pair, &fm);
        let scale = omega.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in eq.omega.iter().zip(omega.iter()) {
            assert!((a - b).abs() < 1e-2 * scale, "omega {a} vs {b}");
        }
        let pscale = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in eq.phi.iter().zip(phi.iter()) {
            assert!((a - b).abs() < 1e-2 * pscale, "phi {a} vs {b}");
        }
    }

    #[test]
    fn estimate_is_deterministic_and_symmetric() {
        let pair = sample_generative_pair(6, 20, 1).unwrap();
        let fm = FeatureMap::random(8, 20, 2).unwrap();
        let a = estimate_covariances(&fm, &pair, 3000, 7).unwrap();
        let b = estimate_covariances(&fm, &pair, 3000, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.omega, a.omega.t());
    }

    #[test]
    fn rho_norm_concentrates() {
        let l = 400;
        let pair = sample_generative_pair(l, 3, 11).unwrap();
        let fm = FeatureMap::random(2, 3, 1).unwrap();
        let eq = estimate_covariances(&fm, &pair, 10, 1).unwrap();
        assert!((eq.rho_norm - 1.0).abs() < 4.0 / (l as f64).sqrt());
    }

    #[test]
    fn monte_carlo_error_shrinks() {
        let pair = sample_generative_pair(5, 30, 2).unwrap();
        let fm = FeatureMap::random(6, 30, 3).unwrap();
        let reference = estimate_covariances(&fm, &pair, 400_000, 99).unwrap();
        let dist = |n: usize| {
            let e = estimate_covariances(&fm, &pair, n, 4).unwrap();
            (&e.omega - &reference.omega).mapv(|v| v * v).sum().sqrt()
        };
        let (d1, d4) = (dist(4_000), dist(64_000));
        // Sixteen times the samples: about a quarter of the error.
        assert!(d4 < 0.5 * d1, "{d1} -> {d4}");
    }

    #[test]
    fn relu_second_moment_on_diagonal() {
        // With orthogonal first-layer rows of squared norm D, each
        // pre-activation is a centered Gaussian of variance ‖x‖²/D.
        let (l, d) = (4, 8);
        let pair = sample_generative_pair(l, d, 5).unwrap();
        let mut w1 = Array2::zeros((d, d));
        for i in 0..d {
            w1[[i, i]] = (d as f64).sqrt();
        }
        let fm = FeatureMap::transferred(w1).unwrap();
        let eq = estimate_covariances(&fm, &pair, 200_000, 6).unwrap();
        let gh = GaussHermite::new(80);
        for j in 0..d {
            // v_j = ReLU(x_j/√D) with x_j = ReLU(g), g ~ N(0, ‖F_j‖²/L).
            let sigma2 = pair.features.column(j).dot(&pair.features.column(j)) / l as f64;
            let exact = gh.expect(|z| (sigma2.sqrt() * z).max(0.0).powi(2)) / d as f64;
            assert!((exact - sigma2 / 2.0 / d as f64).abs() < 1e-12);
            assert!((eq.omega[[j, j]] - exact).abs() < 0.02 * exact, "{j}");
        }
    }

    fn dense_trace(omega: &Array2<f64>, b: &Array1<f64>, l: usize, qh: f64, vh: f64, mh: f64, lam: f64) -> f64 {
        let h = omega.nrows();
        let mut a = omega * vh;
        a.diag_mut().mapv_inplace(|v| v + lam);
        let na = crate::linalg::to_na(a.view());
        let inv = na.try_inverse().unwrap();
        let inv = Array2::from_shape_fn((h, h), |(i, j)| inv[(i, j)]);
        // Φᵀθθᵀ Φ = L · b bᵀ with b = Φᵀθ/√L.
        let outer = Array2::from_shape_fn((h, h), |(i, j)| b[i] * b[j]) * (mh * mh * l as f64);
        let m = outer + omega * qh;
        m.dot(&inv).diag().sum()
    }

    #[test]
    fn spectral_trace_matches_dense_inverse() {
        let pair = sample_generative_pair(3, 10, 8).unwrap();
        let fm = FeatureMap::random(5, 10, 9).unwrap();
        let eq = estimate_covariances(&fm, &pair, 2000, 1).unwrap();
        let spec = spectralize(&eq, pair.teacher.view()).unwrap();
        let b = eq.teacher_field(pair.teacher.view());
        let (qh, vh, mh, lam) = (0.7, 3.0, 0.4, 1e-2);
        let dense = dense_trace(&eq.omega, &b, 3, qh, vh, mh, lam);
        let spectral: f64 = spec
            .eigenvalues
            .iter()
            .zip(spec.teacher_proj.iter())
            .map(|(&w, &s)| (mh * mh * 3.0 * s * s + qh * w) / (lam + vh * w))
            .sum();
        assert!(
            (dense - spectral).abs() < 1e-10 * dense.abs().max(1.0),
            "{dense} vs {spectral}"
        );
        assert!(spec.eigenvalues.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn isotropic_trace() {
        let h = 4;
        let eq = EquivalentModel {
            omega: Array2::eye(h),
            phi: Array2::zeros((2, h)),
            rho_norm: 1.0,
            gamma: 0.5,
            n_mc: 1,
            mean_activation: Array1::zeros(h),
        };
        let spec = spectralize(&eq, ndarray::array![1.0, -1.0].view()).unwrap();
        let (qh, vh, lam) = (0.3, 2.0, 0.1);
        let sum: f64 = spec.eigenvalues.iter().map(|&w| qh * w / (lam + vh * w)).sum();
        assert!((sum - h as f64 * qh / (lam + vh)).abs() < 1e-14);
        assert!(spec.teacher_proj.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn gaussian_covariates_reproduce_moments() {
        let pair = sample_generative_pair(3, 12, 2).unwrap();
        let fm = FeatureMap::random(4, 12, 3).unwrap();
        let eq = estimate_covariances(&fm, &pair, 50_000, 4).unwrap();
        let sampler = GaussianCovariates::new(&eq, pair.teacher.view()).unwrap();
        let (v, y) = sampler.sample(200_000, StreamKey::new(1, StreamTag::GaussianCovariates, 0));
        let omega = v.t().dot(&v) / 200_000.0;
        let scale = eq.omega.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in omega.iter().zip(eq.omega.iter()) {
            assert!((a - b).abs() < 0.02 * scale);
        }
        assert!(y.iter().all(|&v| v == 1.0 || v == -1.0));
    }
}
