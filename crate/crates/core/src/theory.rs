//! Convergence and generalization bounds as numeric diagnostics, and the
//! empirical estimation of the constants they depend on.

use serde::{Deserialize, Serialize};

use crate::batch::l2_norm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub lipschitz: f64,
    /// Polyak-Łojasiewicz constant δ.
    pub delta: f64,
    pub mu_f: f64,
    pub mu_g: f64,
    /// `‖E g‖² ≤ m_e + m_e_slope ‖∇F‖²`
    pub m_e: f64,
    pub m_e_slope: f64,
    /// `V[g] ≤ m_v + m_v_slope ‖∇F‖²`
    pub m_v: f64,
    pub m_v_slope: f64,
    /// Sub-Gaussian parameter.
    pub sigma: f64,
    pub f_star: f64,
    /// Total per-device sample budget `B`.
    pub budget_b: f64,
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lipschitz", self.lipschitz),
            ("delta", self.delta),
            ("mu_f", self.mu_f),
            ("mu_g", self.mu_g),
            ("m_e", self.m_e),
            ("m_e_slope", self.m_e_slope),
            ("m_v", self.m_v),
            ("m_v_slope", self.m_v_slope),
            ("sigma", self.sigma),
            ("budget_b", self.budget_b),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.budget_b > 0.0) {
            return Err(Error::invalid("sample budget must be positive"));
        }
        Ok(())
    }

    /// Largest step size for which the descent bound is valid at batch `b`.
    pub fn eta_cap(&self, devices: usize, b: f64) -> f64 {
        let curvature = self.lipschitz * (self.m_e_slope + self.m_v_slope / (devices as f64 * b));
        if curvature > 0.0 {
            self.mu_f / curvature
        } else {
            f64::INFINITY
        }
    }
}

/// One snapshot of the model along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub weights: Vec<f64>,
    /// Population loss estimate.
    pub loss: f64,
    /// Population gradient estimate `∇F(w)`.
    pub grad: Vec<f64>,
    /// Squared norm of the mean per-sample gradient on training data.
    pub mean_grad_sq: f64,
    /// Per-sample gradient variance `E‖g − ḡ‖²` on training data.
    pub sample_variance: f64,
    /// `max − min` of per-sample losses.
    pub loss_range: f64,
}

/// Two models and their gradients, for a Lipschitz probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePair {
    pub w_a: Vec<f64>,
    pub g_a: Vec<f64>,
    pub w_b: Vec<f64>,
    pub g_b: Vec<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Running maximum of `‖g_a − g_b‖ / ‖w_a − w_b‖`, one entry per pair.
/// Pairs with coincident weights are skipped (the previous maximum repeats).
pub fn lipschitz_running_max(pairs: &[ProbePair]) -> Vec<f64> {
    let mut best = 0.0f64;
    pairs
        .iter()
        .map(|p| {
            let dw = distance(&p.w_a, &p.w_b);
            if dw > 0.0 {
                best = best.max(distance(&p.g_a, &p.g_b) / dw);
            }
            best
        })
        .collect()
}

/// Fit `y ≤ a + s·x` over the points: `s` is the least-squares slope clamped
/// at zero, `a` is the smallest intercept that covers every point.
pub fn upper_envelope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::InsufficientData("envelope fit needs matching nonempty series".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let intercept = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| y - slope * x)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    Ok((intercept, slope))
}

/// Estimate every constant from a trace and a set of Lipschitz probes.
///
/// `devices · batch` is the number of samples averaged per round, used for
/// `mu_g`. When `probes` is empty, consecutive trace points serve as pairs.
pub fn estimate_constants(
    trace: &[TracePoint],
    probes: &[ProbePair],
    f_star: f64,
    budget_b: f64,
    devices: usize,
    batch: f64,
) -> Result<TheoryConstants> {
    if trace.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "constant estimation needs at least 2 trace points, got {}",
            trace.len()
        )));
    }
    if devices == 0 || !(batch > 0.0) || !(budget_b > 0.0) {
        return Err(Error::invalid("devices, batch and budget must be positive"));
    }
    let fallback: Vec<ProbePair>;
    let pairs = if probes.is_empty() {
        fallback = trace
            .windows(2)
            .map(|w| ProbePair {
                w_a: w[0].weights.clone(),
                g_a: w[0].grad.clone(),
                w_b: w[1].weights.clone(),
                g_b: w[1].grad.clone(),
            })
            .collect();
        &fallback[..]
    } else {
        probes
    };
    let lipschitz = lipschitz_running_max(pairs).last().copied().unwrap_or(0.0);

    let grad_sq: Vec<f64> = trace.iter().map(|t| l2_norm(&t.grad).powi(2)).collect();
    let delta = trace
        .iter()
        .zip(&grad_sq)
        .filter_map(|(t, &g)| {
            let gamma = t.loss - f_star;
            (gamma > 0.0).then(|| g / (2.0 * gamma))
        })
        .fold(f64::INFINITY, f64::min);
    let delta = if delta.is_finite() { delta.max(0.0) } else { 0.0 };

    let kb = devices as f64 * batch;
    let mu_g = trace
        .iter()
        .zip(&grad_sq)
        .map(|(t, &g)| {
            let second = g + t.sample_variance / kb;
            if second > 0.0 {
                g / second
            } else {
                1.0
            }
        })
        .fold(1.0f64, f64::min);

    let means: Vec<f64> = trace.iter().map(|t| t.mean_grad_sq).collect();
    let vars: Vec<f64> = trace.iter().map(|t| t.sample_variance).collect();
    let (m_e, m_e_slope) = upper_envelope(&grad_sq, &means)?;
    let (m_v, m_v_slope) = upper_envelope(&grad_sq, &vars)?;
    let sigma = trace.iter().map(|t| t.loss_range / 2.0).fold(0.0, f64::max);

    let consts = TheoryConstants {
        lipschitz,
        delta,
        mu_f: 1.0,
        mu_g,
        m_e,
        m_e_slope,
        m_v,
        m_v_slope,
        sigma,
        f_star,
        budget_b,
    };
    consts.validate()?;
    Ok(consts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentBound {
    pub value: f64,
    /// Whether the step size satisfies the cap under which the bound holds.
    pub eta_ok: bool,
}

/// `−(η μ_F/2)‖∇F‖² + L τ η²/(2K) + (L η²/2)(M_e + M_v/(K b))`.
pub fn loss_descent_bound(
    grad_norm_sq: f64,
    tau: f64,
    b: f64,
    consts: &TheoryConstants,
    eta: f64,
    devices: usize,
) -> DescentBound {
    let k = devices as f64;
    let l = consts.lipschitz;
    let value = -eta * consts.mu_f / 2.0 * grad_norm_sq
        + l * tau * eta * eta / (2.0 * k)
        + l * eta * eta / 2.0 * (consts.m_e + consts.m_v / (k * b));
    DescentBound {
        value,
        eta_ok: eta <= consts.eta_cap(devices, b),
    }
}

/// `−(η μ_G/2) V + L τ η²/(2K)`.
pub fn var_descent_bound(grad_variance: f64, tau: f64, consts: &TheoryConstants, eta: f64, devices: usize) -> f64 {
    -eta * consts.mu_g / 2.0 * grad_variance + consts.lipschitz * tau * eta * eta / (2.0 * devices as f64)
}

/// One round's increment `(σ η/(K B)) · sqrt(V/(K τ b))`.
///
/// Infinite when `τ = 0` with nonzero variance: a noiseless update leaks
/// unbounded information about its batch.
pub fn gen_error_increment(
    variance: f64,
    tau: f64,
    b: f64,
    consts: &TheoryConstants,
    eta: f64,
    devices: usize,
) -> f64 {
    if variance <= 0.0 {
        return 0.0;
    }
    let k = devices as f64;
    let root = if tau > 0.0 {
        (variance / (k * tau * b)).sqrt()
    } else {
        f64::INFINITY
    };
    consts.sigma * eta / (k * consts.budget_b) * root
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenBound {
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
}

pub fn gen_error_bound(
    variances: &[f64],
    taus: &[f64],
    batches: &[f64],
    consts: &TheoryConstants,
    eta: f64,
    devices: usize,
) -> Result<GenBound> {
    if variances.len() != taus.len() || variances.len() != batches.len() {
        return Err(Error::invalid("variance, tau and batch histories must be aligned"));
    }
    let increments: Vec<f64> = variances
        .iter()
        .zip(taus)
        .zip(batches)
        .map(|((&v, &t), &b)| gen_error_increment(v, t, b, consts, eta, devices))
        .collect();
    let mut total = 0.0;
    let cumulative = increments
        .iter()
        .map(|i| {
            total += i;
            total
        })
        .collect();
    Ok(GenBound { increments, cumulative })
}

/// The one-round objective bound as a function of the denoising factor:
/// `−δημ_F γ + L p_n η²/(2K c) + L M_v η²/(2K b) + γ σ c/(B K p_n) + C`
/// with `C = L M_e η²/2 + σ η/(2 B K² μ_G) + L σ η²/(2 B K²)`.
#[allow(clippy::too_many_arguments)]
pub fn j_bar(
    c: f64,
    b: f64,
    gamma_prev: f64,
    consts: &TheoryConstants,
    eta: f64,
    devices: usize,
    p_n: f64,
) -> f64 {
    let k = devices as f64;
    let l = consts.lipschitz;
    let bb = consts.budget_b;
    let s = consts.sigma;
    let constant = l * consts.m_e * eta * eta / 2.0
        + s * eta / (2.0 * bb * k * k * consts.mu_g)
        + l * s * eta * eta / (2.0 * bb * k * k);
    -consts.delta * eta * consts.mu_f * gamma_prev
        + l * p_n * eta * eta / (2.0 * k * c)
        + l * consts.m_v * eta * eta / (2.0 * k * b)
        + gamma_prev * s * c / (bb * k * p_n)
        + constant
}
