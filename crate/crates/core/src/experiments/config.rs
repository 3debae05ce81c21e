use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::invalid;
use crate::generator::TransformSpec;
use crate::replica::SolverOpts;
use crate::twolayer::TrainOpts;
use crate::{Error, Result};

/// Learning protocols on the target task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    /// Transferred first layer, readout fitted on the target.
    #[serde(rename = "TF")]
    Transferred,
    /// Random first layer, readout fitted on the target.
    #[serde(rename = "RF")]
    RandomFeatures,
    /// Two-layer network trained from scratch on the target.
    #[serde(rename = "2L")]
    Scratch,
    /// Transferred network refined end to end.
    #[serde(rename = "ftTF")]
    FineTuned,
    #[serde(rename = "theoryTF")]
    TheoryTransferred,
    #[serde(rename = "theoryRF")]
    TheoryRandom,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::Transferred,
        Protocol::RandomFeatures,
        Protocol::Scratch,
        Protocol::FineTuned,
        Protocol::TheoryTransferred,
        Protocol::TheoryRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Transferred => "TF",
            Protocol::RandomFeatures => "RF",
            Protocol::Scratch => "2L",
            Protocol::FineTuned => "ftTF",
            Protocol::TheoryTransferred => "theoryTF",
            Protocol::TheoryRandom => "theoryRF",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown protocol `{s}`")))
    }

    pub fn is_theory(self) -> bool {
        matches!(self, Protocol::TheoryTransferred | Protocol::TheoryRandom)
    }

    pub fn needs_source(self) -> bool {
        !matches!(
            self,
            Protocol::RandomFeatures | Protocol::Scratch | Protocol::TheoryRandom
        )
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters a grid axis can sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisName {
    /// Target samples per hidden unit, `M / H`.
    #[serde(rename = "M_target")]
    TargetSamples,
    #[serde(rename = "q_teacher")]
    TeacherAlignment,
    #[serde(rename = "eta")]
    Eta,
    #[serde(rename = "rho_sub")]
    Substitution,
    #[serde(rename = "L_t")]
    TargetLatent,
    #[serde(rename = "H")]
    Hidden,
    #[serde(rename = "M_source")]
    SourceSamples,
}

impl AxisName {
    pub const ALL: [AxisName; 7] = [
        AxisName::TargetSamples,
        AxisName::TeacherAlignment,
        AxisName::Eta,
        AxisName::Substitution,
        AxisName::TargetLatent,
        AxisName::Hidden,
        AxisName::SourceSamples,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AxisName::TargetSamples => "M_target",
            AxisName::TeacherAlignment => "q_teacher",
            AxisName::Eta => "eta",
            AxisName::Substitution => "rho_sub",
            AxisName::TargetLatent => "L_t",
            AxisName::Hidden => "H",
            AxisName::SourceSamples => "M_source",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown axis `{s}`")))
    }

    fn is_integer(self) -> bool {
        matches!(
            self,
            AxisName::TargetLatent | AxisName::Hidden | AxisName::SourceSamples
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: AxisName,
    pub values: Vec<f64>,
    /// Presentation hint for exports.
    pub log_scale: bool,
}

impl GridAxis {
    pub fn linear(name: AxisName, values: Vec<f64>) -> Self {
        Self {
            name,
            values,
            log_scale: false,
        }
    }

    /// `n` points evenly spaced in log between `lo` and `hi`.
    pub fn log_spaced(name: AxisName, lo: f64, hi: f64, n: usize) -> Self {
        let values = if n == 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
                .collect()
        };
        Self {
            name,
            values,
            log_scale: true,
        }
    }
}

/// Hyperparameters of one network training role; the seed is assigned per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSchedule {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` means `λ / M` (the readout penalty rescaled to a mean loss).
    pub l2_lambda: Option<f64>,
    pub early_stop: bool,
}

impl NetSchedule {
    fn from_opts(o: TrainOpts) -> Self {
        Self {
            learning_rate: o.learning_rate,
            batch_size: o.batch_size,
            max_epochs: o.max_epochs,
            l2_lambda: Some(o.l2_lambda),
            early_stop: o.early_stop,
        }
    }

    pub fn opts(&self, seed: u64, readout_lambda: f64, m: usize) -> TrainOpts {
        TrainOpts {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            l2_lambda: self.l2_lambda.unwrap_or(readout_lambda / m as f64),
            early_stop: self.early_stop,
            patience: 0,
            holdout_fraction: 0.1,
            seed,
        }
    }
}

/// Seeds per cell as a function of `M/H`: `counts[0]` below `thresholds[0]`,
/// `counts[1]` below `thresholds[1]`, `counts[2]` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSchedule {
    pub thresholds: [f64; 2],
    pub counts: [usize; 3],
}

impl Default for SeedSchedule {
    fn default() -> Self {
        Self {
            thresholds: [1.0, 10.0],
            counts: [50, 20, 10],
        }
    }
}

impl SeedSchedule {
    pub fn count(&self, alpha: f64) -> usize {
        if alpha < self.thresholds[0] {
            self.counts[0]
        } else if alpha < self.thresholds[1] {
            self.counts[1]
        } else {
            self.counts[2]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub source_latent: usize,
    pub target_latent: usize,
    /// When set, the source latent dimension follows `latent_sum − L_t`.
    pub latent_sum: Option<usize>,
    pub eta: f64,
    pub rho_sub: f64,
    pub q_teacher: f64,
    pub source_samples: usize,
    /// Target samples per hidden unit when `M_target` is not an axis.
    pub target_alpha: f64,
    pub axes: Vec<GridAxis>,
    pub protocols: Vec<Protocol>,
    /// Seed pool; cells use a prefix of it.
    pub seeds: Vec<u64>,
    /// `None` uses the whole pool in every cell.
    pub seed_schedule: Option<SeedSchedule>,
    pub lambda: f64,
    pub n_test: usize,
    /// Monte Carlo samples for covariances; `0` means `10 H`.
    pub n_mc: usize,
    pub source_training: NetSchedule,
    pub scratch_training: NetSchedule,
    pub fine_tuning: NetSchedule,
    pub readout_tol: f64,
    pub readout_max_iter: usize,
    pub solver: SolverOpts,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut fine = NetSchedule::from_opts(TrainOpts::fine_tune(0, 0.0));
        fine.l2_lambda = None;
        Self {
            input_dim: 1000,
            hidden_dim: 500,
            source_latent: 150,
            target_latent: 150,
            latent_sum: None,
            eta: 1.0,
            rho_sub: 0.3,
            q_teacher: 1.0,
            source_samples: 51_200,
            target_alpha: 1.0,
            axes: vec![GridAxis::log_spaced(AxisName::TargetSamples, 0.1, 100.0, 8)],
            protocols: vec![Protocol::Transferred, Protocol::RandomFeatures],
            seeds: (0..50).collect(),
            seed_schedule: Some(SeedSchedule::default()),
            lambda: 1e-7,
            n_test: 10_000,
            n_mc: 0,
            source_training: NetSchedule::from_opts(TrainOpts::source(0)),
            scratch_training: NetSchedule::from_opts(TrainOpts::scratch(0)),
            fine_tuning: fine,
            readout_tol: 1e-7,
            readout_max_iter: 10_000,
            solver: SolverOpts::default(),
        }
    }
}

/// Concrete parameters of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub source_latent: usize,
    pub target_latent: usize,
    pub eta: f64,
    pub rho_sub: f64,
    pub q_teacher: f64,
    pub source_samples: usize,
    pub target_samples: usize,
}

impl CellParams {
    pub fn alpha(&self) -> f64 {
        self.target_samples as f64 / self.hidden_dim as f64
    }

    pub fn transform(&self) -> TransformSpec {
        TransformSpec {
            eta: self.eta,
            rho_sub: self.rho_sub,
            q_teacher: self.q_teacher,
            target_latent_dim: self.target_latent,
        }
    }
}

impl ExperimentConfig {
    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        need(self.input_dim > 0, "D must be positive".into());
        need(self.hidden_dim > 0, "H must be positive".into());
        need(self.source_latent > 0, "L_s must be positive".into());
        need(self.target_latent > 0, "L_t must be positive".into());
        for (name, v) in [
            ("eta", self.eta),
            ("rho_sub", self.rho_sub),
            ("q_teacher", self.q_teacher),
        ] {
            need((0.0..=1.0).contains(&v), format!("{name} = {v} outside [0, 1]"));
        }
        need(self.source_samples >= 2, "M_source must be at least 2".into());
        need(self.target_alpha > 0.0, "target_alpha must be positive".into());
        need(!self.protocols.is_empty(), "protocol set is empty".into());
        need(!self.seeds.is_empty(), "seed list is empty".into());
        need(
            self.lambda > 0.0 && self.lambda.is_finite(),
            format!("lambda = {} must be positive", self.lambda),
        );
        need(self.n_test > 0, "n_test must be positive".into());
        need(self.readout_tol > 0.0, "readout_tol must be positive".into());
        need(self.readout_max_iter > 0, "readout_max_iter must be positive".into());
        if self.protocols.iter().any(|p| p.is_theory()) {
            need(
                self.lambda >= crate::replica::MIN_LAMBDA,
                format!(
                    "lambda = {:e} is below the theory minimum {:e}",
                    self.lambda,
                    crate::replica::MIN_LAMBDA
                ),
            );
        }
        if let Err(e) = self.solver.validate() {
            need(false, e.to_string());
        }
        for (role, s) in [
            ("source", &self.source_training),
            ("scratch", &self.scratch_training),
            ("fine-tune", &self.fine_tuning),
        ] {
            need(s.learning_rate >= 0.0, format!("{role} learning rate must be >= 0"));
            need(s.batch_size > 0, format!("{role} batch size must be positive"));
            if let Some(l2) = s.l2_lambda {
                need(l2 >= 0.0, format!("{role} l2 penalty must be >= 0"));
            }
        }
        let mut names = Vec::new();
        for axis in &self.axes {
            need(
                !axis.values.is_empty(),
                format!("axis {} has no values", axis.name.name()),
            );
            need(
                !names.contains(&axis.name),
                format!("axis {} listed twice", axis.name.name()),
            );
            names.push(axis.name);
            for &v in &axis.values {
                let ok = match axis.name {
                    AxisName::TargetSamples => v > 0.0 && v.is_finite(),
                    AxisName::TeacherAlignment | AxisName::Eta | AxisName::Substitution => (0.0..=1.0).contains(&v),
                    _ => v >= 1.0 && v.fract() == 0.0,
                };
                need(ok, format!("axis {} has invalid value {v}", axis.name.name()));
            }
        }
        if let Some(sum) = self.latent_sum {
            let max_lt = self
                .axes
                .iter()
                .find(|a| a.name == AxisName::TargetLatent)
                .map(|a| a.values.iter().fold(0.0f64, |m, &v| m.max(v)) as usize)
                .unwrap_or(self.target_latent);
            need(
                sum > max_lt,
                format!("latent_sum = {sum} must exceed every L_t (max {max_lt})"),
            );
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Flat list of cells in row-major axis order, each with its axis values.
    pub fn cells(&self) -> Vec<Vec<f64>> {
        let mut cells = vec![Vec::new()];
        for axis in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |&v| {
                        let mut c = prefix.clone();
                        c.push(v);
                        c
                    })
                })
                .collect();
        }
        cells
    }

    pub fn cell_params(&self, values: &[f64]) -> Result<CellParams> {
        if values.len() != self.axes.len() {
            return Err(invalid("cell has the wrong number of axis values"));
        }
        let mut p = CellParams {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            source_latent: self.source_latent,
            target_latent: self.target_latent,
            eta: self.eta,
            rho_sub: self.rho_sub,
            q_teacher: self.q_teacher,
            source_samples: self.source_samples,
            target_samples: 0,
        };
        let mut alpha = self.target_alpha;
        for (axis, &v) in self.axes.iter().zip(values) {
            let n = if axis.name.is_integer() { v.round() as usize } else { 0 };
            match axis.name {
                AxisName::TargetSamples => alpha = v,
                AxisName::TeacherAlignment => p.q_teacher = v,
                AxisName::Eta => p.eta = v,
                AxisName::Substitution => p.rho_sub = v,
                AxisName::TargetLatent => p.target_latent = n,
                AxisName::Hidden => p.hidden_dim = n,
                AxisName::SourceSamples => p.source_samples = n,
            }
        }
        if let Some(sum) = self.latent_sum {
            p.source_latent = sum - p.target_latent;
        }
        p.target_samples = ((alpha * p.hidden_dim as f64).round() as usize).max(1);
        Ok(p)
    }

    /// Seeds used by a cell with the given `M/H`.
    pub fn cell_seeds(&self, alpha: f64) -> &[u64] {
        let n = self
            .seed_schedule
            .map(|s| s.count(alpha))
            .unwrap_or(self.seeds.len())
            .clamp(1, self.seeds.len());
        &self.seeds[..n]
    }

    pub fn mc_samples(&self, hidden_dim: usize) -> usize {
        if self.n_mc == 0 {
            10 * hidden_dim
        } else {
            self.n_mc
        }
    }
}
