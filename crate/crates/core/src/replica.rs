//! Zero-temperature replica-symmetric saddle point for ridge logistic
//! regression on the Gaussian-equivalent model.
//!
//! Energetic potential, with `s = √(ρq − m²)`:
//! `g_E = Σ_y ∫Dz H(−y m z / s) M_E(y, √q z, V)`,
//! `M_E(y, ω, V) = max_u [−u²/2 − ℓ(y, √V u + ω)]`, `H(x) = ½ erfc(x/√2)`.
//!
//! Entropic potential, with `R_i = 1/(λ + V̂ ω_i)`:
//! `g_S = (1/2H) Σ_i (m̂² L s_i² + q̂ ω_i) R_i`.
//!
//! Stationarity: `q̂ = 2α ∂_V g_E`, `V̂ = −2α ∂_q g_E`, `m̂ = (α/√γ) ∂_m g_E`,
//! `q = −2 ∂_V̂ g_S`, `V = 2 ∂_q̂ g_S`, `m = (1/√γ) ∂_m̂ g_S`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::equivalence::SpectralModel;
use crate::error::invalid;
use crate::quadrature::GaussHermite;
use crate::twolayer::{logistic_loss, sigmoid};
use crate::{Error, Result};

/// Smallest admissible ridge strength.
pub const MIN_LAMBDA: f64 = 1e-8;
const BOUNDARY_GAP: f64 = 1e-12;

/// Gaussian tail `P(Z > x)`.
#[inline]
pub fn gaussian_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

#[inline]
fn gaussian_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prox {
    pub u_star: f64,
    pub value: f64,
}

/// Maximizer of `−u²/2 − ℓ(y, √V u + ω)` for the logistic loss.
///
/// Solved in `x = √V u + ω`: the root of `(x − ω)/V − y σ(−y x)` lies in
/// `[ω, ω+V]` for `y = +1` and `[ω−V, ω]` for `y = −1`.
pub fn proximal_logistic(y: f64, omega_field: f64, v: f64) -> Prox {
    debug_assert!(v >= 0.0);
    if v == 0.0 {
        return Prox {
            u_star: 0.0,
            value: -logistic_loss(y, omega_field),
        };
    }
    let (mut lo, mut hi) = if y > 0.0 {
        (omega_field, omega_field + v)
    } else {
        (omega_field - v, omega_field)
    };
    let mut x = omega_field;
    for _ in 0..200 {
        let g = (x - omega_field) / v - y * sigmoid(-y * x);
        if g == 0.0 {
            break;
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let gp = 1.0 / v + sigmoid(x) * sigmoid(-x);
        let newton = x - g / gp;
        if (newton - x).abs() <= 1e-15 * x.abs().max(1.0) {
            x = newton;
            break;
        }
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    let u = (x - omega_field) / v.sqrt();
    Prox {
        u_star: u,
        value: -0.5 * u * u - logistic_loss(y, x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energetic {
    pub value: f64,
    pub dq: f64,
    pub dv: f64,
    pub dm: f64,
}

/// Energetic potential and its partials, the inner max handled by the envelope theorem.
pub fn energetic(q: f64, v: f64, m: f64, rho_norm: f64, gh: &GaussHermite) -> Result<Energetic> {
    let s2 = rho_norm * q - m * m;
    if !(q > 0.0 && v > 0.0 && s2 > 0.0) {
        return Err(invalid(format!(
            "energetic potential needs q > 0, V > 0, m² < ρq (q = {q}, V = {v}, m = {m}, ρ = {rho_norm})"
        )));
    }
    let s = s2.sqrt();
    let a = m / s;
    let sq = q.sqrt();
    let sv = v.sqrt();
    let dq_weight = -m * rho_norm / (2.0 * s2 * s);
    let dm_weight = rho_norm * q / (s2 * s);
    let mut out = Energetic {
        value: 0.0,
        dq: 0.0,
        dv: 0.0,
        dm: 0.0,
    };
    for (z, w) in gh.pairs() {
        let dens = gaussian_density(a * z);
        for y in [1.0, -1.0] {
            let p = proximal_logistic(y, sq * z, v);
            let tail = gaussian_tail(-y * a * z);
            out.value += w * tail * p.value;
            out.dv += w * tail * p.u_star * p.u_star / (2.0 * v);
            out.dq += w * (y * z * dens * dq_weight * p.value + tail * (p.u_star / sv) * z / (2.0 * sq));
            out.dm += w * y * z * dens * dm_weight * p.value;
        }
    }
    if ![out.value, out.dq, out.dv, out.dm].iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "q = {q:e}, V = {v:e}, m = {m:e}, ρ = {rho_norm:e}, nodes = {}",
            gh.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entropic {
    pub value: f64,
    pub dq_hat: f64,
    pub dv_hat: f64,
    pub dm_hat: f64,
}

pub fn entropic(q_hat: f64, v_hat: f64, m_hat: f64, spec: &SpectralModel, lambda: f64) -> Result<Entropic> {
    if !(lambda > 0.0) || v_hat < 0.0 {
        return Err(invalid(format!(
            "entropic potential needs λ > 0 and V̂ ≥ 0 (λ = {lambda}, V̂ = {v_hat})"
        )));
    }
    let h = spec.hidden_dim() as f64;
    let l = spec.latent_dim as f64;
    let (mut value, mut dq, mut dv, mut dm) = (0.0, 0.0, 0.0, 0.0);
    for (&w, &s) in spec.eigenvalues.iter().zip(spec.teacher_proj.iter()) {
        let r = 1.0 / (lambda + v_hat * w);
        let numer = m_hat * m_hat * l * s * s + q_hat * w;
        value += numer * r;
        dq += w * r;
        dv -= numer * w * r * r;
        dm += 2.0 * m_hat * l * s * s * r;
    }
    let norm = 1.0 / (2.0 * h);
    Ok(Entropic {
        value: value * norm,
        dq_hat: dq * norm,
        dv_hat: dv * norm,
        dm_hat: dm * norm,
    })
}

/// `arccos(m / √(ρ q)) / π`; arguments within `1e-12` of `[−1, 1]` are clamped.
pub fn generalization_error(m: f64, q: f64, rho_norm: f64) -> Result<f64> {
    if !(q > 0.0 && rho_norm > 0.0) {
        return Err(invalid(format!(
            "generalization error needs q > 0 and ρ > 0 (q = {q}, ρ = {rho_norm})"
        )));
    }
    let arg = m / (rho_norm * q).sqrt();
    if !arg.is_finite() || arg.abs() > 1.0 + 1e-12 {
        return Err(Error::OutOfDomain(arg));
    }
    Ok(arg.clamp(-1.0, 1.0).acos() / std::f64::consts::PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOpts {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub quadrature_nodes: usize,
    /// Initial `(q, V, m)`.
    pub init: (f64, f64, f64),
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-7,
            max_iter: 10_000,
            quadrature_nodes: 199,
            init: (0.5, 0.5, 0.01),
        }
    }
}

impl SolverOpts {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(invalid(format!("damping {} outside [0, 1)", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("solver tolerance must be positive"));
        }
        if self.quadrature_nodes == 0 || self.max_iter == 0 {
            return Err(invalid("quadrature_nodes and max_iter must be positive"));
        }
        let (q, v, _) = self.init;
        if !(q > 0.0 && v > 0.0) {
            return Err(invalid("initial q and V must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapState {
    pub q: f64,
    pub v: f64,
    pub m: f64,
    pub q_hat: f64,
    pub v_hat: f64,
    pub m_hat: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Times `m` was pulled back inside `m² < ρ q`.
    pub clamped: usize,
}

impl OverlapState {
    pub fn generalization_error(&self, rho_norm: f64) -> Result<f64> {
        generalization_error(self.m, self.q, rho_norm)
    }
}

/// Conjugates from the energetic partials.
pub fn hat_update(
    q: f64,
    v: f64,
    m: f64,
    spec: &SpectralModel,
    alpha: f64,
    gh: &GaussHermite,
) -> Result<(f64, f64, f64)> {
    let e = energetic(q, v, m, spec.rho_norm, gh)?;
    Ok((
        2.0 * alpha * e.dv,
        -2.0 * alpha * e.dq,
        alpha / spec.gamma.sqrt() * e.dm,
    ))
}

/// Overlaps from the entropic partials.
pub fn overlap_update(
    q_hat: f64,
    v_hat: f64,
    m_hat: f64,
    spec: &SpectralModel,
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    let e = entropic(q_hat, v_hat, m_hat, spec, lambda)?;
    Ok((-2.0 * e.dv_hat, 2.0 * e.dq_hat, e.dm_hat / spec.gamma.sqrt()))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= MIN_LAMBDA) || !lambda.is_finite() {
        return Err(invalid(format!(
            "lambda = {lambda:e} is below the supported minimum {MIN_LAMBDA:e}; the saddle-point iteration is unstable there"
        )));
    }
    Ok(())
}

/// Damped fixed-point iteration of the stationarity conditions.
pub fn iterate_saddle(spec: &SpectralModel, alpha: f64, lambda: f64, opts: &SolverOpts) -> Result<OverlapState> {
    opts.validate()?;
    check_lambda(lambda)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    let gh = GaussHermite::new(opts.quadrature_nodes);
    let rho = spec.rho_norm;
    let feasible = |q: f64, m: f64, clamped: &mut usize| -> f64 {
        let bound = rho * q - BOUNDARY_GAP;
        if m * m >= bound {
            *clamped += 1;
            m.signum() * bound.max(0.0).sqrt()
        } else {
            m
        }
    };
    let mut clamped = 0;
    let (mut q, mut v, init_m) = opts.init;
    let mut m = feasible(q, init_m, &mut clamped);
    let (mut qh, mut vh, mut mh) = hat_update(q, v, m, spec, alpha, &gh)?;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let keep = opts.damping;
    while iterations < opts.max_iter {
        iterations += 1;
        let (qn, vn, mn) = overlap_update(qh, vh, mh, spec, lambda)?;
        residual = (qn - q).abs().max((vn - v).abs()).max((mn - m).abs());
        q = (1.0 - keep) * qn + keep * q;
        v = (1.0 - keep) * vn + keep * v;
        m = (1.0 - keep) * mn + keep * m;
        m = feasible(q, m, &mut clamped);
        if !(q > 0.0 && v > 0.0) {
            return Err(Error::NonFinite(format!(
                "overlaps left the domain at iteration {iterations}: q = {q:e}, V = {v:e}, m = {m:e}"
            )));
        }
        (qh, vh, mh) = hat_update(q, v, m, spec, alpha, &gh)?;
        if residual < opts.tol {
            break;
        }
    }
    if clamped > 0 {
        log::warn!("saddle point at α = {alpha}: m clamped {clamped} times");
    }
    Ok(OverlapState {
        q,
        v,
        m,
        q_hat: qh,
        v_hat: vh,
        m_hat: mh,
        residual,
        iterations,
        converged: residual < opts.tol,
        clamped,
    })
}

/// Saddle point and its generalization error.
pub fn predict(spec: &SpectralModel, alpha: f64, lambda: f64, opts: &SolverOpts) -> Result<(OverlapState, f64)> {
    let state = iterate_saddle(spec, alpha, lambda, opts)?;
    let err = state.generalization_error(spec.rho_norm)?;
    Ok((state, err))
}
