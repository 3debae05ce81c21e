//! Parameter sweeps: learning curves, phase diagrams and gain maps.
//!
//! A grid run evaluates every cell (one combination of axis values) for a
//! prefix of the seed pool. Everything a cell computes is a function of its
//! parameters and seed, so results do not depend on evaluation order.
//! Source networks and covariance estimates are shared between cells through
//! keyed caches; the manifest counts how many of each were computed.

mod config;
mod export;
mod real;
mod store;

use std::collections::HashMap;
use std::hash::Hash;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{AxisName, CellParams, ExperimentConfig, GridAxis, NetSchedule, Protocol, SeedSchedule};
pub use export::{export, read_csv, write_csv, ExportFormat};
pub use real::{real_curve, RealTask};
pub use store::{Manifest, RunStore};

use crate::convex::{
    activations, fit_ridge_logistic, mean_logistic_loss, misclassification, FeatureMap, SolverSettings,
};
use crate::equivalence::{eigenbasis, estimate_covariances, EquivalentModel, SpectralBasis};
use crate::error::invalid;
use crate::generator::{derive_target, sample_dataset, sample_generative_pair, Dataset, GenerativePair};
use crate::replica::predict;
use crate::rng::{derive_seed, StreamKey, StreamTag};
use crate::twolayer::{classification_error, init_network, train, TrainTrace, Trainable, TwoLayerNet};
use crate::{Error, Result};

const ROLE_SOURCE: u64 = 1;
const ROLE_SCRATCH: u64 = 2;
const ROLE_RANDOM: u64 = 3;
const ROLE_FINE: u64 = 4;
const ROLE_COVARIANCE: u64 = 5;

/// One protocol evaluated under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub protocol: Protocol,
    /// Test error; `None` when the run failed.
    pub error: Option<f64>,
    pub converged: bool,
    /// Training misclassification (simulated protocols only).
    pub train_error: Option<f64>,
    /// Mean training logistic loss without penalty (simulated protocols only).
    pub train_loss: Option<f64>,
    /// Theory: fixed-point `(q, m)`. TF/RF: measured `(q, m)` when the matching
    /// theory protocol runs in the same grid.
    pub overlaps: Option<(f64, f64)>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub index: usize,
    pub values: Vec<f64>,
    pub params: CellParams,
    pub outcomes: Vec<SeedOutcome>,
}

/// One row of the exported table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub values: Vec<f64>,
    pub protocol: Protocol,
    /// `NaN` when every seed failed.
    pub mean_error: f64,
    /// Standard error of the mean; `0` for a single seed.
    pub sem: f64,
    /// Successful seeds.
    pub n_seeds: usize,
    pub converged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub values: Vec<f64>,
    pub protocol: Protocol,
    pub failed: usize,
    pub mean_train_error: Option<f64>,
    pub mean_train_loss: Option<f64>,
    /// Fraction of seeds with zero training error.
    pub separable_fraction: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Counters {
    pub source_trainings: AtomicUsize,
    pub covariance_estimations: AtomicUsize,
    pub readout_fits: AtomicUsize,
    pub network_trainings: AtomicUsize,
    pub saddle_solves: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub source_trainings: usize,
    pub covariance_estimations: usize,
    pub readout_fits: usize,
    pub network_trainings: usize,
    pub saddle_solves: usize,
}

impl Counters {
    fn bump(c: &AtomicUsize) {
        c.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            source_trainings: self.source_trainings.load(Ordering::Relaxed),
            covariance_estimations: self.covariance_estimations.load(Ordering::Relaxed),
            readout_fits: self.readout_fits.load(Ordering::Relaxed),
            network_trainings: self.network_trainings.load(Ordering::Relaxed),
            saddle_solves: self.saddle_solves.load(Ordering::Relaxed),
        }
    }
}

impl std::ops::Add for CounterSnapshot {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            source_trainings: self.source_trainings + o.source_trainings,
            covariance_estimations: self.covariance_estimations + o.covariance_estimations,
            readout_fits: self.readout_fits + o.readout_fits,
            network_trainings: self.network_trainings + o.network_trainings,
            saddle_solves: self.saddle_solves + o.saddle_solves,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub config_hash: String,
    pub axis_names: Vec<String>,
    pub records: Vec<CellSummary>,
    pub diagnostics: Vec<CellDiagnostics>,
    pub cells: Vec<CellOutcome>,
    /// Work done by this invocation (excluding resumed cells).
    pub counters: CounterSnapshot,
}

impl GridResult {
    pub fn record(&self, values: &[f64], protocol: Protocol) -> Option<&CellSummary> {
        self.records
            .iter()
            .find(|r| r.protocol == protocol && r.values == values)
    }

    pub fn diagnostic(&self, values: &[f64], protocol: Protocol) -> Option<&CellDiagnostics> {
        self.diagnostics
            .iter()
            .find(|r| r.protocol == protocol && r.values == values)
    }
}

/// Where and how a grid runs.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Persist cells and the manifest here.
    pub dir: Option<PathBuf>,
    /// Continue a run whose manifest already exists in `dir`.
    pub resume: bool,
    /// Worker threads; `0` lets rayon decide.
    pub jobs: usize,
}

/// Samples the source task of `seed` and trains its network with the
/// `source_training` schedule. Grid runs share this exact computation.
pub fn train_source(
    cfg: &ExperimentConfig,
    p: &CellParams,
    seed: u64,
) -> Result<(GenerativePair, TwoLayerNet, TrainTrace)> {
    let pair = sample_generative_pair(p.source_latent, p.input_dim, seed)?;
    let data = sample_dataset(
        &pair,
        p.source_samples,
        StreamKey::new(seed, StreamTag::SourceData, p.source_samples as u64),
    )?;
    let role_seed = derive_seed(seed, ROLE_SOURCE);
    let init = init_network(
        p.input_dim,
        p.hidden_dim,
        StreamKey::new(role_seed, StreamTag::NetInit, 0),
    )?;
    let opts = cfg.source_training.opts(role_seed, cfg.lambda, p.source_samples);
    let (net, trace) = train(&init, &data, &opts, Trainable::FromGiven)?;
    Ok((pair, net, trace))
}

/// Positive when TF has the lower error.
pub fn gain(err_ref: f64, err_tf: f64) -> Result<f64> {
    for e in [err_ref, err_tf] {
        if !(0.0..=1.0).contains(&e) {
            return Err(invalid(format!("error {e} outside [0, 1]")));
        }
    }
    Ok(err_ref - err_tf)
}

/// A value computed once; a failure is kept as its message.
type Slot<V> = Arc<OnceLock<std::result::Result<Arc<V>, String>>>;

/// Computes each value at most once per key, even under concurrent access.
struct Memo<K, V> {
    map: Mutex<HashMap<K, Slot<V>>>,
}

impl<K: Eq + Hash + Clone, V> Memo<K, V> {
    fn new() -> Self {
        Self {
            map: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, key: &K, compute: impl FnOnce() -> Result<V>) -> Result<Arc<V>> {
        let slot = {
            let mut map = self.map.lock().expect("memo lock");
            map.entry(key.clone()).or_default().clone()
        };
        slot.get_or_init(|| compute().map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(Error::Upstream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct SourceKey {
    input_dim: usize,
    hidden_dim: usize,
    source_latent: usize,
    source_samples: usize,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum MapKey {
    Transferred(SourceKey),
    Random {
        hidden_dim: usize,
        input_dim: usize,
        seed: u64,
    },
}

/// Covariances depend on the target features, not on its teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CovKey {
    map: MapKey,
    source_latent: usize,
    target_latent: usize,
    eta_bits: u64,
    rho_bits: u64,
    n_mc: usize,
}

struct Covariance {
    model: EquivalentModel,
    basis: SpectralBasis,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    sources: Memo<SourceKey, TwoLayerNet>,
    covariances: Memo<CovKey, Covariance>,
    counters: Counters,
}

struct SeedContext {
    params: CellParams,
    seed: u64,
    target: GenerativePair,
    train: Option<Dataset>,
    test: Option<Dataset>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            sources: Memo::new(),
            covariances: Memo::new(),
            counters: Counters::default(),
        }
    }

    fn source_key(p: &CellParams, seed: u64) -> SourceKey {
        SourceKey {
            input_dim: p.input_dim,
            hidden_dim: p.hidden_dim,
            source_latent: p.source_latent,
            source_samples: p.source_samples,
            seed,
        }
    }

    fn source_pair(p: &CellParams, seed: u64) -> Result<GenerativePair> {
        sample_generative_pair(p.source_latent, p.input_dim, seed)
    }

    fn source_net(&self, p: &CellParams, seed: u64) -> Result<Arc<TwoLayerNet>> {
        self.sources.get(&Self::source_key(p, seed), || {
            Counters::bump(&self.counters.source_trainings);
            let (_, net, trace) = train_source(self.cfg, p, seed)?;
            log::info!(
                "source network (seed {seed}, H = {}): best epoch {} of {}",
                p.hidden_dim,
                trace.best_epoch,
                trace.stop_epoch
            );
            Ok(net)
        })
    }

    fn feature_map(&self, p: &CellParams, seed: u64, transferred: bool) -> Result<(FeatureMap, MapKey)> {
        if transferred {
            let net = self.source_net(p, seed)?;
            Ok((
                FeatureMap::transferred(net.w1.clone())?,
                MapKey::Transferred(Self::source_key(p, seed)),
            ))
        } else {
            let fm = FeatureMap::random(p.hidden_dim, p.input_dim, derive_seed(seed, ROLE_RANDOM))?;
            Ok((
                fm,
                MapKey::Random {
                    hidden_dim: p.hidden_dim,
                    input_dim: p.input_dim,
                    seed,
                },
            ))
        }
    }

    fn covariance(&self, ctx: &SeedContext, fm: &FeatureMap, map: MapKey) -> Result<Arc<Covariance>> {
        let p = &ctx.params;
        let n_mc = self.cfg.mc_samples(p.hidden_dim);
        let key = CovKey {
            map,
            source_latent: p.source_latent,
            target_latent: p.target_latent,
            eta_bits: p.eta.to_bits(),
            rho_bits: p.rho_sub.to_bits(),
            n_mc,
        };
        self.covariances.get(&key, || {
            Counters::bump(&self.counters.covariance_estimations);
            let model = estimate_covariances(fm, &ctx.target, n_mc, derive_seed(ctx.seed, ROLE_COVARIANCE))?;
            let basis = eigenbasis(&model)?;
            Ok(Covariance { model, basis })
        })
    }

    fn context(&self, p: &CellParams, seed: u64) -> Result<SeedContext> {
        let source = Self::source_pair(p, seed)?;
        let target = derive_target(&source, &p.transform(), seed)?;
        let simulate = self.cfg.protocols.iter().any(|p| !p.is_theory());
        let (train, test) = if simulate {
            let m = p.target_samples;
            (
                Some(sample_dataset(
                    &target,
                    m,
                    StreamKey::new(seed, StreamTag::TargetData, m as u64),
                )?),
                Some(sample_dataset(
                    &target,
                    self.cfg.n_test,
                    StreamKey::new(seed, StreamTag::TestData, 0),
                )?),
            )
        } else {
            (None, None)
        };
        Ok(SeedContext {
            params: *p,
            seed,
            target,
            train,
            test,
        })
    }

    fn readout(&self, ctx: &SeedContext, fm: &FeatureMap, init: Option<&Array1<f64>>) -> Result<ReadoutRun> {
        let train = ctx.train.as_ref().expect("simulation data");
        let test = ctx.test.as_ref().expect("simulation data");
        let v = activations(fm, train.inputs.view())?;
        let settings = SolverSettings {
            lambda: self.cfg.lambda,
            tol: self.cfg.readout_tol,
            max_iter: self.cfg.readout_max_iter,
        };
        Counters::bump(&self.counters.readout_fits);
        let fit = fit_ridge_logistic(v.view(), train.labels.view(), &settings, init.map(|w| w.view()))?;
        let vt = activations(fm, test.inputs.view())?;
        Ok(ReadoutRun {
            test_error: misclassification(vt.view(), fit.w2.view(), test.labels.view()),
            train_error: misclassification(v.view(), fit.w2.view(), train.labels.view()),
            train_loss: mean_logistic_loss(v.view(), fit.w2.view(), train.labels.view()),
            converged: fit.converged,
            w2: fit.w2,
        })
    }

    fn network_outcome(&self, ctx: &SeedContext, net: &TwoLayerNet) -> (f64, f64, f64) {
        let train = ctx.train.as_ref().expect("simulation data");
        let test = ctx.test.as_ref().expect("simulation data");
        let train_loss = crate::twolayer::objective(net, train.inputs.view(), train.labels.view(), 0.0);
        (
            classification_error(net, test.inputs.view(), test.labels.view()),
            classification_error(net, train.inputs.view(), train.labels.view()),
            train_loss,
        )
    }

    fn run_protocol(
        &self,
        ctx: &SeedContext,
        protocol: Protocol,
        tf_cache: &mut Option<ReadoutRun>,
    ) -> Result<SeedOutcome> {
        let p = &ctx.params;
        let seed = ctx.seed;
        let mut out = SeedOutcome {
            seed,
            protocol,
            error: None,
            converged: false,
            train_error: None,
            train_loss: None,
            overlaps: None,
            failure: None,
        };
        match protocol {
            Protocol::Transferred | Protocol::RandomFeatures => {
                let transferred = protocol == Protocol::Transferred;
                let (fm, key) = self.feature_map(p, seed, transferred)?;
                let run = self.readout(ctx, &fm, None)?;
                let theory = if transferred {
                    Protocol::TheoryTransferred
                } else {
                    Protocol::TheoryRandom
                };
                // The matching theory protocol pays for the covariances anyway.
                if self.cfg.protocols.contains(&theory) {
                    let cov = self.covariance(ctx, &fm, key)?;
                    out.overlaps = Some(cov.model.measured_overlaps(run.w2.view(), ctx.target.teacher.view()));
                }
                out.error = Some(run.test_error);
                out.train_error = Some(run.train_error);
                out.train_loss = Some(run.train_loss);
                out.converged = run.converged;
                if transferred {
                    *tf_cache = Some(run);
                }
            }
            Protocol::Scratch => {
                let role_seed = derive_seed(seed, ROLE_SCRATCH);
                let init = init_network(
                    p.input_dim,
                    p.hidden_dim,
                    StreamKey::new(role_seed, StreamTag::NetInit, 0),
                )?;
                let opts = self
                    .cfg
                    .scratch_training
                    .opts(role_seed, self.cfg.lambda, p.target_samples);
                Counters::bump(&self.counters.network_trainings);
                let (net, _) = train(
                    &init,
                    ctx.train.as_ref().expect("simulation data"),
                    &opts,
                    Trainable::FromGiven,
                )?;
                let (e, te, tl) = self.network_outcome(ctx, &net);
                (out.error, out.train_error, out.train_loss, out.converged) = (Some(e), Some(te), Some(tl), true);
            }
            Protocol::FineTuned => {
                if tf_cache.is_none() {
                    let (fm, _) = self.feature_map(p, seed, true)?;
                    *tf_cache = Some(self.readout(ctx, &fm, None)?);
                }
                let readout = tf_cache.as_ref().expect("filled above");
                let source = self.source_net(p, seed)?;
                let start = TwoLayerNet::new(source.w1.clone(), readout.w2.clone())?;
                let opts = self
                    .cfg
                    .fine_tuning
                    .opts(derive_seed(seed, ROLE_FINE), self.cfg.lambda, p.target_samples);
                Counters::bump(&self.counters.network_trainings);
                let (net, _) = train(
                    &start,
                    ctx.train.as_ref().expect("simulation data"),
                    &opts,
                    Trainable::FromGiven,
                )?;
                let (e, te, tl) = self.network_outcome(ctx, &net);
                (out.error, out.train_error, out.train_loss, out.converged) = (Some(e), Some(te), Some(tl), true);
            }
            Protocol::TheoryTransferred | Protocol::TheoryRandom => {
                let (fm, key) = self.feature_map(p, seed, protocol == Protocol::TheoryTransferred)?;
                let cov = self.covariance(ctx, &fm, key)?;
                let spec = cov.basis.project(&cov.model, ctx.target.teacher.view())?;
                Counters::bump(&self.counters.saddle_solves);
                let (state, err) = predict(&spec, p.alpha(), self.cfg.lambda, &self.cfg.solver)?;
                out.error = Some(err);
                out.converged = state.converged;
                out.overlaps = Some((state.q, state.m));
            }
        }
        Ok(out)
    }

    fn run_cell(&self, index: usize, values: &[f64]) -> Result<CellOutcome> {
        let params = self.cfg.cell_params(values)?;
        let mut outcomes = Vec::new();
        for &seed in self.cfg.cell_seeds(params.alpha()) {
            let ctx = self.context(&params, seed);
            let mut tf_cache = None;
            for &protocol in &self.cfg.protocols {
                let result = ctx
                    .as_ref()
                    .map_err(|e| Error::Upstream(e.to_string()))
                    .and_then(|ctx| self.run_protocol(ctx, protocol, &mut tf_cache));
                outcomes.push(result.unwrap_or_else(|e| {
                    log::warn!("cell {index} seed {seed} {protocol}: {e}");
                    SeedOutcome {
                        seed,
                        protocol,
                        error: None,
                        converged: false,
                        train_error: None,
                        train_loss: None,
                        overlaps: None,
                        failure: Some(e.to_string()),
                    }
                }));
            }
        }
        Ok(CellOutcome {
            index,
            values: values.to_vec(),
            params,
            outcomes,
        })
    }
}

struct ReadoutRun {
    test_error: f64,
    train_error: f64,
    train_loss: f64,
    converged: bool,
    w2: Array1<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn summarize(cfg: &ExperimentConfig, cells: &[CellOutcome]) -> (Vec<CellSummary>, Vec<CellDiagnostics>) {
    let mut records = Vec::new();
    let mut diags = Vec::new();
    for cell in cells {
        for &protocol in &cfg.protocols {
            let runs: Vec<&SeedOutcome> = cell.outcomes.iter().filter(|o| o.protocol == protocol).collect();
            let ok: Vec<&SeedOutcome> = runs.iter().copied().filter(|o| o.error.is_some()).collect();
            let errors: Vec<f64> = ok.iter().filter_map(|o| o.error).collect();
            let n = errors.len();
            let m = mean(&errors).unwrap_or(f64::NAN);
            let sem = if n > 1 {
                let var = errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else if n == 1 {
                0.0
            } else {
                f64::NAN
            };
            let converged = ok.iter().filter(|o| o.converged).count();
            records.push(CellSummary {
                values: cell.values.clone(),
                protocol,
                mean_error: m,
                sem,
                n_seeds: n,
                converged_fraction: if n > 0 { converged as f64 / n as f64 } else { 0.0 },
            });
            let train_errors: Vec<f64> = ok.iter().filter_map(|o| o.train_error).collect();
            let train_losses: Vec<f64> = ok.iter().filter_map(|o| o.train_loss).collect();
            diags.push(CellDiagnostics {
                values: cell.values.clone(),
                protocol,
                failed: runs.len() - n,
                mean_train_error: mean(&train_errors),
                mean_train_loss: mean(&train_losses),
                separable_fraction: (!train_errors.is_empty())
                    .then(|| train_errors.iter().filter(|&&e| e == 0.0).count() as f64 / train_errors.len() as f64),
            });
        }
    }
    (records, diags)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))
}

/// Evaluates every cell of the grid (any number of axes).
pub fn run_grid(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<GridResult> {
    cfg.validate()?;
    let cells = cfg.cells();
    let mut store = match &opts.dir {
        Some(dir) => Some(RunStore::open(dir, cfg, opts.resume)?),
        None => None,
    };
    let done: HashMap<usize, CellOutcome> = store
        .as_ref()
        .map(|s| s.completed())
        .transpose()?
        .unwrap_or_default()
        .into_iter()
        .map(|c| (c.index, c))
        .collect();
    let todo: Vec<usize> = (0..cells.len()).filter(|i| !done.contains_key(i)).collect();
    log::info!("{} of {} cells to compute", todo.len(), cells.len());

    let runner = Runner::new(cfg);
    let writer = store.as_ref().map(Mutex::new);
    let fresh: Vec<CellOutcome> = pool(opts.jobs)?.install(|| {
        todo.par_iter()
            .map(|&i| {
                let cell = runner.run_cell(i, &cells[i])?;
                if let Some(w) = &writer {
                    w.lock().expect("store lock").write_cell(&cell)?;
                }
                Ok(cell)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut all: Vec<CellOutcome> = done.into_values().chain(fresh).collect();
    all.sort_by_key(|c| c.index);
    let counters = runner.counters.snapshot();
    if let Some(s) = store.as_mut() {
        s.finish(all.len(), counters)?;
    }
    Ok(assemble(cfg, all, counters))
}

fn assemble(cfg: &ExperimentConfig, cells: Vec<CellOutcome>, counters: CounterSnapshot) -> GridResult {
    let (records, diagnostics) = summarize(cfg, &cells);
    GridResult {
        config_hash: cfg.hash(),
        axis_names: cfg.axes.iter().map(|a| a.name.name().to_string()).collect(),
        records,
        diagnostics,
        cells,
        counters,
    }
}

/// Summary of the cells stored in a run directory, which may be partial.
/// Counters are the manifest's cumulative totals.
pub fn load_result(dir: &Path) -> Result<GridResult> {
    let manifest = RunStore::load_manifest(dir)?;
    let store = RunStore::open(dir, &manifest.config, true)?;
    let cells = store.completed()?;
    Ok(assemble(&manifest.config, cells, manifest.counters))
}

/// Test error against `M/H`: the single axis must be `M_target`.
pub fn learning_curve(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<GridResult> {
    if cfg.axes.len() != 1 || cfg.axes[0].name != AxisName::TargetSamples {
        return Err(Error::Config(
            "a learning curve needs exactly one axis, M_target".into(),
        ));
    }
    run_grid(cfg, opts)
}

/// Two-axis sweep, one of them `M_target`. Source training and covariance
/// estimation happen once per distinct value of the other axis and seed
/// (once per seed when that axis does not influence them).
pub fn phase_diagram(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<GridResult> {
    if cfg.axes.len() != 2 || !cfg.axes.iter().any(|a| a.name == AxisName::TargetSamples) {
        return Err(Error::Config(
            "a phase diagram needs exactly two axes, one of them M_target".into(),
        ));
    }
    run_grid(cfg, opts)
}
