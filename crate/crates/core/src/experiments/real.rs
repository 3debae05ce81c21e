//! Learning curves on externally supplied labeled data.

use std::sync::Arc;

use rayon::prelude::*;

use super::{
    assemble, pool, AxisName, CellOutcome, Counters, ExperimentConfig, GridResult, Memo, Protocol, RunOptions,
    SeedOutcome, ROLE_FINE, ROLE_RANDOM, ROLE_SCRATCH, ROLE_SOURCE,
};
use crate::convex::{
    activations, fit_ridge_logistic, mean_logistic_loss, misclassification, FeatureMap, SolverSettings,
};
use crate::generator::Dataset;
use crate::realdata::subsample;
use crate::rng::{derive_seed, StreamKey, StreamTag};
use crate::twolayer::{classification_error, init_network, objective, train, Trainable, TwoLayerNet};
use crate::{Error, Result};

/// Source training set, target training pool and target test set.
#[derive(Debug, Clone)]
pub struct RealTask {
    pub source: Dataset,
    pub target: Dataset,
    pub test: Dataset,
}

impl RealTask {
    fn problems(&self, cfg: &ExperimentConfig) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.source.input_dim();
        if self.target.input_dim() != d || self.test.input_dim() != d {
            out.push(format!(
                "input dimensions differ: source {d}, target {}, test {}",
                self.target.input_dim(),
                self.test.input_dim()
            ));
        }
        if cfg.axes.len() != 1 || cfg.axes[0].name != AxisName::TargetSamples {
            out.push("a real-data curve needs exactly one axis, M_target".into());
        }
        if let Some(p) = cfg.protocols.iter().find(|p| p.is_theory()) {
            out.push(format!("{p} needs a generative model and is unavailable on real data"));
        }
        for cell in cfg.cells() {
            if let Ok(p) = cfg.cell_params(&cell) {
                if p.target_samples > self.target.len() {
                    out.push(format!(
                        "M/H = {} needs {} target samples, only {} available",
                        cell[0],
                        p.target_samples,
                        self.target.len()
                    ));
                }
            }
        }
        out
    }
}

/// TF, RF, 2L and ftTF against `M/H` on real data. The source network is
/// trained once per seed on the whole source set (`source_samples` caps it).
pub fn real_curve(cfg: &ExperimentConfig, task: &RealTask, opts: &RunOptions) -> Result<GridResult> {
    let mut cfg = cfg.clone();
    cfg.input_dim = task.source.input_dim();
    let mut problems = cfg.problems();
    problems.extend(task.problems(&cfg));
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let counters = Counters::default();
    let sources: Memo<u64, TwoLayerNet> = Memo::new();
    let cells = cfg.cells();
    let source_net = |seed: u64| -> Result<Arc<TwoLayerNet>> {
        sources.get(&seed, || {
            Counters::bump(&counters.source_trainings);
            let data = if cfg.source_samples < task.source.len() {
                subsample(&task.source, cfg.source_samples, seed)?
            } else {
                task.source.clone()
            };
            let role = derive_seed(seed, ROLE_SOURCE);
            let init = init_network(
                cfg.input_dim,
                cfg.hidden_dim,
                StreamKey::new(role, StreamTag::NetInit, 0),
            )?;
            let opts = cfg.source_training.opts(role, cfg.lambda, data.len());
            Ok(train(&init, &data, &opts, Trainable::FromGiven)?.0)
        })
    };

    let run_seed = |m: usize, seed: u64| -> Result<Vec<SeedOutcome>> {
        let data = subsample(&task.target, m, seed)?;
        let settings = SolverSettings {
            lambda: cfg.lambda,
            tol: cfg.readout_tol,
            max_iter: cfg.readout_max_iter,
        };
        let readout = |fm: &FeatureMap| -> Result<(SeedOutcome, TwoLayerNet)> {
            let v = activations(fm, data.inputs.view())?;
            Counters::bump(&counters.readout_fits);
            let fit = fit_ridge_logistic(v.view(), data.labels.view(), &settings, None)?;
            let vt = activations(fm, task.test.inputs.view())?;
            let outcome = SeedOutcome {
                seed,
                protocol: Protocol::Transferred,
                error: Some(misclassification(vt.view(), fit.w2.view(), task.test.labels.view())),
                converged: fit.converged,
                train_error: Some(misclassification(v.view(), fit.w2.view(), data.labels.view())),
                train_loss: Some(mean_logistic_loss(v.view(), fit.w2.view(), data.labels.view())),
                overlaps: None,
                failure: None,
            };
            Ok((outcome, TwoLayerNet::new(fm.w1.clone(), fit.w2)?))
        };
        let network = |net: &TwoLayerNet, protocol: Protocol| SeedOutcome {
            seed,
            protocol,
            error: Some(classification_error(
                net,
                task.test.inputs.view(),
                task.test.labels.view(),
            )),
            converged: true,
            train_error: Some(classification_error(net, data.inputs.view(), data.labels.view())),
            train_loss: Some(objective(net, data.inputs.view(), data.labels.view(), 0.0)),
            overlaps: None,
            failure: None,
        };
        let mut transferred: Option<(SeedOutcome, TwoLayerNet)> = None;
        let mut out = Vec::new();
        for &protocol in &cfg.protocols {
            let result: Result<SeedOutcome> = (|| match protocol {
                Protocol::Transferred | Protocol::FineTuned => {
                    if transferred.is_none() {
                        let fm = FeatureMap::transferred(source_net(seed)?.w1.clone())?;
                        transferred = Some(readout(&fm)?);
                    }
                    let (tf, start) = transferred.as_ref().expect("filled above");
                    if protocol == Protocol::Transferred {
                        return Ok(tf.clone());
                    }
                    let opts = cfg.fine_tuning.opts(derive_seed(seed, ROLE_FINE), cfg.lambda, m);
                    Counters::bump(&counters.network_trainings);
                    let (net, _) = train(start, &data, &opts, Trainable::FromGiven)?;
                    Ok(network(&net, protocol))
                }
                Protocol::RandomFeatures => {
                    let fm = FeatureMap::random(cfg.hidden_dim, cfg.input_dim, derive_seed(seed, ROLE_RANDOM))?;
                    let (mut o, _) = readout(&fm)?;
                    o.protocol = protocol;
                    Ok(o)
                }
                Protocol::Scratch => {
                    let role = derive_seed(seed, ROLE_SCRATCH);
                    let init = init_network(
                        cfg.input_dim,
                        cfg.hidden_dim,
                        StreamKey::new(role, StreamTag::NetInit, 0),
                    )?;
                    let opts = cfg.scratch_training.opts(role, cfg.lambda, m);
                    Counters::bump(&counters.network_trainings);
                    let (net, _) = train(&init, &data, &opts, Trainable::FromGiven)?;
                    Ok(network(&net, protocol))
                }
                Protocol::TheoryTransferred | Protocol::TheoryRandom => unreachable!("rejected by validation"),
            })();
            out.push(result.unwrap_or_else(|e| {
                log::warn!("M = {m}, seed {seed}, {protocol}: {e}");
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
        Ok(out)
    };

    let done: Vec<CellOutcome> = pool(opts.jobs)?.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(index, values)| {
                let params = cfg.cell_params(values)?;
                let mut outcomes = Vec::new();
                for &seed in cfg.cell_seeds(params.alpha()) {
                    outcomes.extend(run_seed(params.target_samples, seed)?);
                }
                Ok(CellOutcome {
                    index,
                    values: values.clone(),
                    params,
                    outcomes,
                })
            })
            .collect::<Result<_>>()
    })?;
    Ok(assemble(&cfg, done, counters.snapshot()))
}
