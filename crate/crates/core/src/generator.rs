//! Hidden manifold tasks and their correlated targets.
//!
//! A task is a pair `(F, θ)`: `L` generative features in `R^D` and a linear
//! teacher on the latent coefficients. Samples are
//! `x = ReLU(c F / √L)`, `y = sign(c·θ / √L)` with `c ~ N(0, I_L)`.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::invalid;
use crate::rng::{StreamKey, StreamTag};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativePair {
    /// `L × D`, one generative feature per row.
    pub features: Array2<f64>,
    /// Length `L`.
    pub teacher: Array1<f64>,
}

impl GenerativePair {
    pub fn new(features: Array2<f64>, teacher: Array1<f64>) -> Result<Self> {
        let pair = Self { features, teacher };
        pair.validate()?;
        Ok(pair)
    }

    pub fn latent_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() == 0 || self.features.ncols() == 0 {
            return Err(Error::Shape("empty feature matrix".into()));
        }
        if self.teacher.len() != self.features.nrows() {
            return Err(Error::Shape(format!(
                "teacher has {} entries for {} features",
                self.teacher.len(),
                self.features.nrows()
            )));
        }
        if self.features.iter().chain(self.teacher.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite entry in generative pair"));
        }
        Ok(())
    }

    /// Writes `features.bin`, `teacher.bin` and `pair.json` into `dir`.
    pub fn save(&self, dir: &Path, meta: &PairMeta) -> Result<()> {
        container::save_matrix(&dir.join("features.bin"), &self.features)?;
        container::save_vector(&dir.join("teacher.bin"), &self.teacher)?;
        container::write_json(&dir.join("pair.json"), meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, PairMeta)> {
        let features = container::load_matrix(&dir.join("features.bin"))?;
        let teacher = container::load_vector(&dir.join("teacher.bin"))?;
        let meta = container::read_json(&dir.join("pair.json"))?;
        Ok((Self::new(features, teacher)?, meta))
    }
}

/// Sidecar for a persisted pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub seed: u64,
    pub latent_dim: usize,
    pub input_dim: usize,
    /// `None` for a source pair.
    pub transform: Option<TransformSpec>,
}

/// How a target task is derived from a source task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    /// Fraction of each retained feature kept: `η F_s + √(1-η²) F̃`.
    pub eta: f64,
    /// Fraction of source features replaced by fresh ones.
    pub rho_sub: f64,
    /// Teacher alignment: `q θ_s + √(1-q²) θ̃`.
    pub q_teacher: f64,
    pub target_latent_dim: usize,
}

impl TransformSpec {
    pub fn identity(latent_dim: usize) -> Self {
        Self {
            eta: 1.0,
            rho_sub: 0.0,
            q_teacher: 1.0,
            target_latent_dim: latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("rho_sub", self.rho_sub),
            ("q_teacher", self.q_teacher),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.target_latent_dim == 0 {
            return Err(invalid("target latent dimension must be positive"));
        }
        Ok(())
    }

    /// Number of substituted rows, `floor(rho_sub · L_s)`.
    pub fn substituted_rows(&self, source_latent_dim: usize) -> usize {
        // The epsilon keeps e.g. 0.3 · 150 from flooring to 44.
        ((self.rho_sub * source_latent_dim as f64) + 1e-9).floor() as usize
    }
}

/// A labeled sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `M × D`.
    pub inputs: Array2<f64>,
    /// `±1`, length `M`.
    pub labels: Array1<f64>,
    /// `M × L` latent coefficients; zero columns for real data.
    pub latent: Array2<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), idx),
            labels: self.labels.select(Axis(0), idx),
            latent: self.latent.select(Axis(0), idx),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        container::save_matrix(&dir.join("inputs.bin"), &self.inputs)?;
        container::save_labels(&dir.join("labels.bin"), &self.labels)?;
        container::save_matrix(&dir.join("latent.bin"), &self.latent)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            inputs: container::load_matrix(&dir.join("inputs.bin"))?,
            labels: container::load_labels(&dir.join("labels.bin"))?,
            latent: container::load_matrix(&dir.join("latent.bin"))?,
        })
    }
}

pub(crate) fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub(crate) fn normal_vector(rng: &mut impl Rng, len: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.sample(StandardNormal))
}

/// `sign` with the tie broken towards `+1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Draws `F` then `θ`, all entries standard normal, from the `SourcePair` stream of `seed`.
pub fn sample_generative_pair(latent_dim: usize, input_dim: usize, seed: u64) -> Result<GenerativePair> {
    if latent_dim == 0 || input_dim == 0 {
        return Err(invalid(format!(
            "dimensions must be positive (L = {latent_dim}, D = {input_dim})"
        )));
    }
    let mut rng = StreamKey::new(seed, StreamTag::SourcePair, 0).rng();
    let features = normal_matrix(&mut rng, latent_dim, input_dim);
    let teacher = normal_vector(&mut rng, latent_dim);
    GenerativePair::new(features, teacher)
}

// Sub-streams of the target noise, one per transform family, so that moving
// one parameter leaves the noise of the others untouched.
const NOISE_EXTRA: u64 = 0;
const NOISE_SUBSTITUTE: u64 = 1;
const NOISE_ETA: u64 = 2;
const NOISE_TEACHER: u64 = 3;

/// Derives the target pair. Transforms compose in a fixed order: latent
/// dimension change, substitution of the first `floor(ρ L_s)` rows, η-mixing
/// of the remaining shared rows, then teacher mixing of the shared components.
pub fn derive_target(source: &GenerativePair, spec: &TransformSpec, seed: u64) -> Result<GenerativePair> {
    spec.validate()?;
    source.validate()?;
    let ls = source.latent_dim();
    let lt = spec.target_latent_dim;
    let d = source.input_dim();
    let shared = ls.min(lt);
    let noise = |j: u64| StreamKey::new(seed, StreamTag::TargetNoise, j).rng();

    let mut features = Array2::zeros((lt, d));
    let mut teacher = Array1::zeros(lt);
    features
        .slice_mut(s![..shared, ..])
        .assign(&source.features.slice(s![..shared, ..]));
    teacher
        .slice_mut(s![..shared])
        .assign(&source.teacher.slice(s![..shared]));
    if lt > shared {
        let mut rng = noise(NOISE_EXTRA);
        features
            .slice_mut(s![shared.., ..])
            .assign(&normal_matrix(&mut rng, lt - shared, d));
        teacher
            .slice_mut(s![shared..])
            .assign(&normal_vector(&mut rng, lt - shared));
    }

    let n_sub = spec.substituted_rows(ls).min(shared);
    if n_sub > 0 {
        let mut rng = noise(NOISE_SUBSTITUTE);
        features
            .slice_mut(s![..n_sub, ..])
            .assign(&normal_matrix(&mut rng, n_sub, d));
    }

    if spec.eta < 1.0 && shared > n_sub {
        let mut rng = noise(NOISE_ETA);
        let fresh = normal_matrix(&mut rng, shared - n_sub, d);
        let keep = spec.eta;
        let mix = (1.0 - keep * keep).sqrt();
        let mut rows = features.slice_mut(s![n_sub..shared, ..]);
        rows.zip_mut_with(&fresh, |f, &n| *f = keep * *f + mix * n);
    }

    if spec.q_teacher < 1.0 && shared > 0 {
        let mut rng = noise(NOISE_TEACHER);
        let fresh = normal_vector(&mut rng, shared);
        let keep = spec.q_teacher;
        let mix = (1.0 - keep * keep).sqrt();
        let mut head = teacher.slice_mut(s![..shared]);
        head.zip_mut_with(&fresh, |t, &n| *t = keep * *t + mix * n);
    }

    GenerativePair::new(features, teacher)
}

/// Draws `M` samples from the task. The latent coefficients come from `key`.
pub fn sample_dataset(pair: &GenerativePair, m: usize, key: StreamKey) -> Result<Dataset> {
    if m == 0 {
        return Err(invalid("dataset needs at least one sample"));
    }
    let l = pair.latent_dim();
    let mut rng = key.rng();
    let latent = normal_matrix(&mut rng, m, l);
    let scale = 1.0 / (l as f64).sqrt();
    let mut inputs = latent.dot(&pair.features);
    inputs.mapv_inplace(|v| (v * scale).max(0.0));
    let labels = latent.dot(&pair.teacher).mapv(|v| sign(v * scale));
    Ok(Dataset { inputs, labels, latent })
}
