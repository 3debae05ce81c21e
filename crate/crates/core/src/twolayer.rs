//! Bias-free two-layer ReLU networks trained with mini-batch Adam.
//!
//! Forward pass: `h = ReLU(w1 x / D)`, `z = h·w2 / √H`, `p = σ(z)`.
//! Loss: mean binary cross-entropy on `(1+y)/2` plus `(λ/2)‖w2‖²`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::invalid;
use crate::generator::{normal_matrix, normal_vector, sign, Dataset};
use crate::rng::{StreamKey, StreamTag};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// `H × D`.
    pub w1: Array2<f64>,
    /// Length `H`.
    pub w2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub hidden: Array1<f64>,
    pub logit: f64,
    pub prob: f64,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic loss `log(1 + exp(-y z))`, equal to the cross-entropy on `(1+y)/2`.
#[inline]
pub fn logistic_loss(y: f64, z: f64) -> f64 {
    softplus(-y * z)
}

impl TwoLayerNet {
    pub fn new(w1: Array2<f64>, w2: Array1<f64>) -> Result<Self> {
        let net = Self { w1, w2 };
        net.validate()?;
        Ok(net)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w1.nrows() == 0 || self.w1.ncols() == 0 {
            return Err(Error::Shape("empty first layer".into()));
        }
        if self.w2.len() != self.w1.nrows() {
            return Err(Error::Shape(format!(
                "second layer has {} weights for {} hidden units",
                self.w2.len(),
                self.w1.nrows()
            )));
        }
        if self.w1.iter().chain(self.w2.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite network weight"));
        }
        Ok(())
    }

    /// Hidden activations for every row of `x` (`M × D` → `M × H`).
    pub fn hidden(&self, x: ArrayView2<f64>) -> Array2<f64> {
        hidden_of(&self.w1, x)
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.hidden(x).dot(&self.w2) / (self.hidden_dim() as f64).sqrt()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        container::save_matrix(&dir.join("w1.bin"), &self.w1)?;
        container::save_vector(&dir.join("w2.bin"), &self.w2)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::new(
            container::load_matrix(&dir.join("w1.bin"))?,
            container::load_vector(&dir.join("w2.bin"))?,
        )
    }
}

/// `ReLU(x w1ᵀ / D)`.
pub(crate) fn hidden_of(w1: &Array2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let d = w1.ncols() as f64;
    let mut a = x.dot(&w1.t());
    a.mapv_inplace(|v| (v / d).max(0.0));
    a
}

/// Both layers standard normal, drawn from `key`.
pub fn init_network(input_dim: usize, hidden_dim: usize, key: StreamKey) -> Result<TwoLayerNet> {
    if input_dim == 0 || hidden_dim == 0 {
        return Err(invalid(format!(
            "dimensions must be positive (D = {input_dim}, H = {hidden_dim})"
        )));
    }
    let mut rng = key.rng();
    let w1 = normal_matrix(&mut rng, hidden_dim, input_dim);
    let w2 = normal_vector(&mut rng, hidden_dim);
    TwoLayerNet::new(w1, w2)
}

pub fn forward(net: &TwoLayerNet, x: ArrayView1<f64>) -> Result<Forward> {
    if x.len() != net.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} entries, network expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    let d = net.input_dim() as f64;
    let hidden = net.w1.dot(&x).mapv(|v| (v / d).max(0.0));
    let logit = hidden.dot(&net.w2) / (net.hidden_dim() as f64).sqrt();
    Ok(Forward {
        hidden,
        logit,
        prob: sigmoid(logit),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOpts {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Penalty `(λ/2)‖w2‖²` added to the mean loss.
    pub l2_lambda: f64,
    pub early_stop: bool,
    pub patience: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl TrainOpts {
    /// Source training: small steps, early stopping on a 10% holdout.
    pub fn source(seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 50,
            max_epochs: 200,
            l2_lambda: 0.02,
            early_stop: true,
            patience: 0,
            holdout_fraction: 0.1,
            seed,
        }
    }

    /// Target network trained from scratch for a fixed budget.
    pub fn scratch(seed: u64) -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 1000,
            max_epochs: 200,
            early_stop: false,
            ..Self::source(seed)
        }
    }

    /// End-to-end refinement of a transferred network.
    pub fn fine_tune(seed: u64, l2_lambda: f64) -> Self {
        Self {
            learning_rate: 0.01,
            l2_lambda,
            ..Self::scratch(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(invalid(format!(
                "l2 penalty {} must be finite and >= 0",
                self.l2_lambda
            )));
        }
        if self.early_stop && !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(invalid(format!(
                "early stopping needs a holdout fraction in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// Which weights move during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trainable {
    /// Reinitialize both layers from `opts.seed`, then train both.
    BothLayers,
    /// Keep the given first layer frozen; train the readout.
    SecondOnly,
    /// Train both layers starting from the given weights.
    FromGiven,
}

/// Index 0 holds the losses before the first update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    pub holdout_loss: Vec<f64>,
    /// Last epoch that ran.
    pub stop_epoch: usize,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub early_stopped: bool,
}

impl TrainTrace {
    /// `epoch,train_loss,holdout_loss`; empty holdout cells when none was used.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,holdout_loss\n");
        for (e, tl) in self.train_loss.iter().enumerate() {
            let hl = self
                .holdout_loss
                .get(e)
                .map(|v| format!("{v:.17e}"))
                .unwrap_or_default();
            out.push_str(&format!("{e},{tl:.17e},{hl}\n"));
        }
        out
    }
}

/// Full objective and gradients on `(x, y)`: mean logistic loss plus `(λ/2)‖w2‖²`.
pub fn loss_and_grad(
    net: &TwoLayerNet,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    l2_lambda: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let m = x.nrows() as f64;
    let d = net.input_dim() as f64;
    let sqrt_h = (net.hidden_dim() as f64).sqrt();
    let h = net.hidden(x);
    let z = h.dot(&net.w2) / sqrt_h;
    let mut loss = 0.0;
    // dz = ∂(mean loss)/∂z
    let dz: Array1<f64> = z
        .iter()
        .zip(y.iter())
        .map(|(&zi, &yi)| {
            loss += logistic_loss(yi, zi);
            -yi * sigmoid(-yi * zi) / m
        })
        .collect();
    loss = loss / m + 0.5 * l2_lambda * net.w2.dot(&net.w2);
    let g2 = h.t().dot(&dz) / sqrt_h + l2_lambda * &net.w2;
    let mut da = Array2::from_shape_fn(h.raw_dim(), |(i, j)| {
        if h[[i, j]] > 0.0 {
            dz[i] * net.w2[j] / sqrt_h
        } else {
            0.0
        }
    });
    da /= d;
    let g1 = da.t().dot(&x);
    (loss, g1, g2)
}

pub fn objective(net: &TwoLayerNet, x: ArrayView2<f64>, y: ArrayView1<f64>, l2_lambda: f64) -> f64 {
    let z = net.logits(x);
    let mean = z
        .iter()
        .zip(y.iter())
        .map(|(&zi, &yi)| logistic_loss(yi, zi))
        .sum::<f64>()
        / x.nrows() as f64;
    mean + 0.5 * l2_lambda * net.w2.dot(&net.w2)
}

/// Fraction of rows where `sign(logit) ≠ y`.
pub fn classification_error(net: &TwoLayerNet, x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
    let z = net.logits(x);
    let wrong = z.iter().zip(y.iter()).filter(|(&zi, &yi)| sign(zi) != yi).count();
    wrong as f64 / y.len() as f64
}

struct Adam {
    m1: Array2<f64>,
    v1: Array2<f64>,
    m2: Array1<f64>,
    v2: Array1<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(net: &TwoLayerNet) -> Self {
        Self {
            m1: Array2::zeros(net.w1.raw_dim()),
            v1: Array2::zeros(net.w1.raw_dim()),
            m2: Array1::zeros(net.w2.raw_dim()),
            v2: Array1::zeros(net.w2.raw_dim()),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut TwoLayerNet, g1: Option<&Array2<f64>>, g2: &Array1<f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let update = |w: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        };
        if let Some(g1) = g1 {
            ndarray::Zip::from(&mut net.w1)
                .and(&mut self.m1)
                .and(&mut self.v1)
                .and(g1)
                .for_each(|w, m, v, &g| update(w, m, v, g));
        }
        ndarray::Zip::from(&mut net.w2)
            .and(&mut self.m2)
            .and(&mut self.v2)
            .and(g2)
            .for_each(|w, m, v, &g| update(w, m, v, g));
    }
}

/// Deterministic split of `0..n` into (train, holdout) indices.
fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut StreamKey::new(seed, StreamTag::Holdout, n as u64).rng());
    let n_hold = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let hold = idx.split_off(n - n_hold);
    (idx, hold)
}

/// Trains a copy of `net` and returns it with the trace.
///
/// With early stopping, the returned weights are those with the lowest
/// holdout loss seen before more than `patience` consecutive increases.
pub fn train(
    net: &TwoLayerNet,
    data: &Dataset,
    opts: &TrainOpts,
    trainable: Trainable,
) -> Result<(TwoLayerNet, TrainTrace)> {
    opts.validate()?;
    net.validate()?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if data.input_dim() != net.input_dim() {
        return Err(Error::Shape(format!(
            "data has D = {}, network expects {}",
            data.input_dim(),
            net.input_dim()
        )));
    }
    if opts.early_stop && data.len() < 2 {
        return Err(invalid("early stopping needs at least two samples"));
    }
    let mut net = match trainable {
        Trainable::BothLayers => init_network(
            net.input_dim(),
            net.hidden_dim(),
            StreamKey::new(opts.seed, StreamTag::NetInit, 0),
        )?,
        Trainable::SecondOnly | Trainable::FromGiven => net.clone(),
    };
    let train_first = trainable != Trainable::SecondOnly;

    let (train_idx, hold_idx) = if opts.early_stop {
        holdout_split(data.len(), opts.holdout_fraction, opts.seed)
    } else {
        ((0..data.len()).collect(), Vec::new())
    };
    let (xt, yt) = (
        data.inputs.select(Axis(0), &train_idx),
        data.labels.select(Axis(0), &train_idx),
    );
    let (xh, yh) = (
        data.inputs.select(Axis(0), &hold_idx),
        data.labels.select(Axis(0), &hold_idx),
    );

    let mut trace = TrainTrace::default();
    let eval = |net: &TwoLayerNet, trace: &mut TrainTrace, epoch: usize| -> Result<Option<f64>> {
        let tl = objective(net, xt.view(), yt.view(), opts.l2_lambda);
        if !tl.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        trace.train_loss.push(tl);
        if opts.early_stop {
            let hl = objective(net, xh.view(), yh.view(), opts.l2_lambda);
            if !hl.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            trace.holdout_loss.push(hl);
            return Ok(Some(hl));
        }
        Ok(None)
    };

    let mut best = net.clone();
    let mut best_loss = eval(&net, &mut trace, 0)?.unwrap_or(f64::INFINITY);
    let mut worse_streak = 0usize;
    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();

    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut StreamKey::new(opts.seed, StreamTag::Shuffle, epoch as u64).rng());
        for batch in order.chunks(opts.batch_size) {
            let xb = xt.select(Axis(0), batch);
            let yb = yt.select(Axis(0), batch);
            let (loss, g1, g2) = loss_and_grad(&net, xb.view(), yb.view(), opts.l2_lambda);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut net, train_first.then_some(&g1), &g2, opts.learning_rate);
        }
        trace.stop_epoch = epoch;
        match eval(&net, &mut trace, epoch)? {
            Some(hl) if hl <= best_loss => {
                best_loss = hl;
                best = net.clone();
                trace.best_epoch = epoch;
                worse_streak = 0;
            }
            Some(_) => {
                worse_streak += 1;
                if worse_streak > opts.patience {
                    trace.early_stopped = true;
                    break;
                }
            }
            None => {}
        }
    }
    if opts.early_stop {
        Ok((best, trace))
    } else {
        trace.best_epoch = trace.stop_epoch;
        Ok((net, trace))
    }
}

/// End-to-end training from the given weights.
pub fn fine_tune(net: &TwoLayerNet, data: &Dataset, opts: &TrainOpts) -> Result<(TwoLayerNet, TrainTrace)> {
    train(net, data, opts, Trainable::FromGiven)
}
