//! f-divergences, their convex conjugates, and the variational dual.
//!
//! Each divergence is generated by a convex f with the conjugate pair
//! appearing in the dual representation
//!   D_f(Q, P) = sup_lambda E_Q[lambda(Y)] - E_P[f*(lambda(Y))].
//! The supremum is attained at lambda*(y) = f'(dQ/dP(y)), which gives the
//! closed-form adversary used for fast estimation paths.
//!
//! Normalization rescales f so that f(1) = 0, f'(1) = 0, f''(1) = 1,
//! putting all families on a common local scale without changing which
//! distributions they separate. Conjugates evaluated outside their domain
//! are hard errors, never sentinel values: an optimizer stepping out of
//! the domain must see the violation.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceFamily {
    TotalVariation,
    KullbackLeibler,
    ReverseKl,
    ChiSquared,
    SquaredHellinger,
    RescaledJs,
}

impl DivergenceFamily {
    pub const ALL: [DivergenceFamily; 6] = [
        DivergenceFamily::TotalVariation,
        DivergenceFamily::KullbackLeibler,
        DivergenceFamily::ReverseKl,
        DivergenceFamily::ChiSquared,
        DivergenceFamily::SquaredHellinger,
        DivergenceFamily::RescaledJs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DivergenceFamily::TotalVariation => "total_variation",
            DivergenceFamily::KullbackLeibler => "kl",
            DivergenceFamily::ReverseKl => "reverse_kl",
            DivergenceFamily::ChiSquared => "chi_squared",
            DivergenceFamily::SquaredHellinger => "squared_hellinger",
            DivergenceFamily::RescaledJs => "rescaled_js",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        DivergenceFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidDivergence(format!("unknown divergence '{s}'")))
    }
}

/// Domain of the conjugate argument, with open or closed endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateDomain {
    pub lo: f64,
    pub hi: f64,
    pub closed_lo: bool,
    pub closed_hi: bool,
}

impl ConjugateDomain {
    pub fn contains(&self, s: f64) -> bool {
        let above = if self.closed_lo { s >= self.lo } else { s > self.lo };
        let below = if self.closed_hi { s <= self.hi } else { s < self.hi };
        above && below && s.is_finite()
    }
}

/// An f-divergence generator, optionally renormalized to the common
/// local scale f(1) = 0, f'(1) = 0, f''(1) = 1.
///
/// Renormalization is the affine change f_n(t) = (f(t) - f(1) - a(t-1))/c
/// with a = f'(1), c = f''(1); its conjugate and derivative follow by the
/// conjugate calculus: f_n*(s) = (f*(cs + a) + f(1) - a)/c and
/// f_n*'(s) = f*'(cs + a).
#[derive(Debug, Clone, Copy)]
pub struct FDivergence {
    family: DivergenceFamily,
    normalized: bool,
    /// f'(1) of the raw generator.
    shift_a: f64,
    /// f''(1) of the raw generator.
    scale_c: f64,
    /// f(1) of the raw generator; zero for every family except the
    /// rescaled Jensen-Shannon generator, whose raw f(1) = -2 ln 2.
    offset_f1: f64,
}

impl FDivergence {
    /// The generator exactly as tabulated, with no renormalization.
    pub fn raw(family: DivergenceFamily) -> Self {
        let (a, c, f1) = raw_constants(family).unwrap_or((0.0, 1.0, 0.0));
        FDivergence {
            family,
            normalized: false,
            shift_a: a,
            scale_c: c,
            offset_f1: f1,
        }
    }

    /// Renormalized generator. Errors for total variation, which is not
    /// twice differentiable at 1.
    pub fn normalized(family: DivergenceFamily) -> Result<Self> {
        let (a, c, f1) = raw_constants(family).ok_or_else(|| {
            Error::InvalidDivergence(format!(
                "{} cannot be renormalized: generator not twice differentiable at 1",
                family.name()
            ))
        })?;
        if c <= 0.0 {
            return Err(Error::InvalidDivergence(format!(
                "{}: f''(1) = {c} is not positive",
                family.name()
            )));
        }
        Ok(FDivergence {
            family,
            normalized: true,
            shift_a: a,
            scale_c: c,
            offset_f1: f1,
        })
    }

    pub fn family(&self) -> DivergenceFamily {
        self.family
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn name(&self) -> &'static str {
        self.family.name()
    }

    /// Generator value f(t). `t` is a likelihood ratio, so t >= 0; the
    /// log-based families additionally need t > 0 (or t = 0 by limit
    /// where the limit is finite).
    pub fn f(&self, t: f64) -> Result<f64> {
        let raw = raw_f(self.family, t)?;
        if self.normalized {
            Ok((raw - self.offset_f1 - self.shift_a * (t - 1.0)) / self.scale_c)
        } else {
            Ok(raw)
        }
    }

    /// Generator derivative f'(t).
    pub fn f_prime(&self, t: f64) -> Result<f64> {
        let raw = raw_f_prime(self.family, t)?;
        if self.normalized {
            Ok((raw - self.shift_a) / self.scale_c)
        } else {
            Ok(raw)
        }
    }

    pub fn conjugate_domain(&self) -> ConjugateDomain {
        let d = raw_conjugate_domain(self.family);
        if self.normalized {
            // s maps through cs + a, monotone since c > 0.
            ConjugateDomain {
                lo: (d.lo - self.shift_a) / self.scale_c,
                hi: (d.hi - self.shift_a) / self.scale_c,
                closed_lo: d.closed_lo,
                closed_hi: d.closed_hi,
            }
        } else {
            d
        }
    }

    fn domain_check(&self, s: f64) -> Result<()> {
        let d = self.conjugate_domain();
        if !d.contains(s) {
            return Err(Error::DomainViolation {
                divergence: self.family.name().to_string(),
                t: s,
                lo: d.lo,
                hi: d.hi,
            });
        }
        Ok(())
    }

    /// Convex conjugate f*(s). Errors outside [`conjugate_domain`].
    pub fn conjugate(&self, s: f64) -> Result<f64> {
        self.domain_check(s)?;
        if self.normalized {
            let raw = raw_conjugate(self.family, self.scale_c * s + self.shift_a);
            Ok((raw + self.offset_f1 - self.shift_a) / self.scale_c)
        } else {
            Ok(raw_conjugate(self.family, s))
        }
    }

    /// Conjugate derivative f*'(s), the ratio at which slope s is attained.
    pub fn conjugate_prime(&self, s: f64) -> Result<f64> {
        self.domain_check(s)?;
        let arg = if self.normalized {
            self.scale_c * s + self.shift_a
        } else {
            s
        };
        Ok(raw_conjugate_prime(self.family, arg))
    }

    /// Optimal adversary value at likelihood ratio `ratio`: f'(ratio).
    pub fn analytic_adversary(&self, ratio: f64) -> Result<f64> {
        if ratio < 0.0 {
            return Err(Error::invalid("likelihood ratio must be nonnegative"));
        }
        self.f_prime(ratio)
    }

    /// Smooth monotone map from an unconstrained score onto the interior
    /// of the conjugate domain. Used to keep network adversaries feasible.
    pub fn squash(&self, raw: f64) -> f64 {
        let d = self.conjugate_domain();
        // Open bounds must not be reached even after rounding, so the
        // distance to them is floored where softplus underflows.
        let margin = |bound: f64, closed: bool| {
            if closed {
                0.0
            } else {
                1e-12 * (1.0 + bound.abs())
            }
        };
        match (d.lo.is_finite(), d.hi.is_finite()) {
            (false, false) => raw,
            (false, true) => d.hi - softplus(-raw).max(margin(d.hi, d.closed_hi)),
            (true, true) => {
                let mid = 0.5 * (d.lo + d.hi);
                let half = 0.5 * (d.hi - d.lo);
                mid + half * raw.tanh()
            }
            (true, false) => d.lo + softplus(raw).max(margin(d.lo, d.closed_lo)),
        }
    }

    /// Derivative of [`squash`] with respect to the unconstrained score.
    pub fn squash_deriv(&self, raw: f64) -> f64 {
        let d = self.conjugate_domain();
        match (d.lo.is_finite(), d.hi.is_finite()) {
            (false, false) => 1.0,
            (false, true) => sigmoid(-raw),
            (true, true) => {
                let half = 0.5 * (d.hi - d.lo);
                let t = raw.tanh();
                half * (1.0 - t * t)
            }
            (true, false) => sigmoid(raw),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// (f'(1), f''(1), f(1)) of the raw generator; `None` when f is not twice
/// differentiable at 1.
fn raw_constants(family: DivergenceFamily) -> Option<(f64, f64, f64)> {
    let ln2 = std::f64::consts::LN_2;
    match family {
        DivergenceFamily::TotalVariation => None,
        DivergenceFamily::KullbackLeibler => Some((1.0, 1.0, 0.0)),
        DivergenceFamily::ReverseKl => Some((-1.0, 1.0, 0.0)),
        DivergenceFamily::ChiSquared => Some((0.0, 2.0, 0.0)),
        DivergenceFamily::SquaredHellinger => Some((0.0, 0.5, 0.0)),
        DivergenceFamily::RescaledJs => Some((-ln2, 0.5, -2.0 * ln2)),
    }
}

fn raw_f(family: DivergenceFamily, t: f64) -> Result<f64> {
    let positive = |strict: bool| -> Result<()> {
        if t < 0.0 || (strict && t == 0.0) {
            Err(Error::invalid(format!(
                "{}: generator argument {t} outside domain",
                family.name()
            )))
        } else {
            Ok(())
        }
    };
    match family {
        DivergenceFamily::TotalVariation => Ok(0.5 * (t - 1.0).abs()),
        DivergenceFamily::KullbackLeibler => {
            positive(false)?;
            Ok(if t == 0.0 { 0.0 } else { t * t.ln() })
        }
        DivergenceFamily::ReverseKl => {
            positive(true)?;
            Ok(-t.ln())
        }
        DivergenceFamily::ChiSquared => Ok((t - 1.0).powi(2)),
        DivergenceFamily::SquaredHellinger => {
            positive(false)?;
            Ok((t.sqrt() - 1.0).powi(2))
        }
        DivergenceFamily::RescaledJs => {
            positive(true)?;
            Ok(t * t.ln() - (1.0 + t) * (1.0 + t).ln())
        }
    }
}

fn raw_f_prime(family: DivergenceFamily, t: f64) -> Result<f64> {
    let positive = || -> Result<()> {
        if t <= 0.0 {
            Err(Error::invalid(format!(
                "{}: derivative undefined at {t}",
                family.name()
            )))
        } else {
            Ok(())
        }
    };
    match family {
        DivergenceFamily::TotalVariation => {
            if t == 1.0 {
                Err(Error::invalid("total_variation: derivative undefined at 1"))
            } else {
                Ok(0.5 * (t - 1.0).signum())
            }
        }
        DivergenceFamily::KullbackLeibler => {
            positive()?;
            Ok(t.ln() + 1.0)
        }
        DivergenceFamily::ReverseKl => {
            positive()?;
            Ok(-1.0 / t)
        }
        DivergenceFamily::ChiSquared => Ok(2.0 * (t - 1.0)),
        DivergenceFamily::SquaredHellinger => {
            positive()?;
            Ok(1.0 - 1.0 / t.sqrt())
        }
        DivergenceFamily::RescaledJs => {
            positive()?;
            Ok((t / (1.0 + t)).ln())
        }
    }
}

fn raw_conjugate_domain(family: DivergenceFamily) -> ConjugateDomain {
    let inf = f64::INFINITY;
    match family {
        DivergenceFamily::TotalVariation => ConjugateDomain {
            lo: -0.5,
            hi: 0.5,
            closed_lo: true,
            closed_hi: true,
        },
        DivergenceFamily::KullbackLeibler | DivergenceFamily::ChiSquared => ConjugateDomain {
            lo: -inf,
            hi: inf,
            closed_lo: false,
            closed_hi: false,
        },
        DivergenceFamily::ReverseKl | DivergenceFamily::RescaledJs => ConjugateDomain {
            lo: -inf,
            hi: 0.0,
            closed_lo: false,
            closed_hi: false,
        },
        DivergenceFamily::SquaredHellinger => ConjugateDomain {
            lo: -inf,
            hi: 1.0,
            closed_lo: false,
            closed_hi: false,
        },
    }
}

/// Closed-form f*(s); caller has already checked the domain.
fn raw_conjugate(family: DivergenceFamily, s: f64) -> f64 {
    match family {
        DivergenceFamily::TotalVariation => s,
        DivergenceFamily::KullbackLeibler => (s - 1.0).exp(),
        DivergenceFamily::ReverseKl => -1.0 - (-s).ln(),
        DivergenceFamily::ChiSquared => s + s * s / 4.0,
        DivergenceFamily::SquaredHellinger => s / (1.0 - s),
        DivergenceFamily::RescaledJs => -(-s.exp()).ln_1p(),
    }
}

fn raw_conjugate_prime(family: DivergenceFamily, s: f64) -> f64 {
    match family {
        DivergenceFamily::TotalVariation => 1.0,
        DivergenceFamily::KullbackLeibler => (s - 1.0).exp(),
        DivergenceFamily::ReverseKl => -1.0 / s,
        DivergenceFamily::ChiSquared => 1.0 + s / 2.0,
        DivergenceFamily::SquaredHellinger => 1.0 / (1.0 - s).powi(2),
        DivergenceFamily::RescaledJs => {
            let e = s.exp();
            e / (1.0 - e)
        }
    }
}

/// Numeric conjugate sup_t { s t - f(t) } by grid search plus
/// golden-section refinement. When the maximizer sits on the upper grid
/// edge the bracket is regrown geometrically; a bracket failure is
/// returned only once that gives out, which happens when s is at or past
/// the conjugate domain boundary and the sup is infinite.
pub fn conjugate_oracle(div: &FDivergence, s: f64) -> Result<f64> {
    let mut limit = 60.0;
    loop {
        match conjugate_oracle_bracketed(div, s, limit) {
            Err(Error::BracketFailure { .. }) if limit < 1e9 => limit *= 8.0,
            other => return other,
        }
    }
}

fn conjugate_oracle_bracketed(div: &FDivergence, s: f64, limit: f64) -> Result<f64> {
    let needs_positive_t = matches!(
        div.family(),
        DivergenceFamily::KullbackLeibler
            | DivergenceFamily::ReverseKl
            | DivergenceFamily::SquaredHellinger
            | DivergenceFamily::RescaledJs
    );
    let step = 0.02 * limit / 60.0;
    let mut grid: Vec<f64> = Vec::with_capacity(4200);
    if needs_positive_t {
        // Log-spaced to resolve the boundary at 0, then linear outward.
        let mut t = 1e-12;
        while t < 1.0 {
            grid.push(t);
            t *= 1.05;
        }
        let mut t = 1.0;
        while t <= limit {
            grid.push(t);
            t += step;
        }
    } else {
        let mut t = -limit;
        while t <= limit {
            grid.push(t);
            t += step;
        }
    }
    let g = |t: f64| -> f64 {
        match raw_f_at_for_oracle(div, t) {
            Some(ft) => s * t - ft,
            None => f64::NEG_INFINITY,
        }
    };
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &t) in grid.iter().enumerate() {
        let v = g(t);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    if best_i + 1 >= grid.len() {
        return Err(Error::BracketFailure { t: grid[best_i] });
    }
    let lo = if best_i == 0 { grid[0] } else { grid[best_i - 1] };
    let hi = grid[best_i + 1];
    // Golden-section on the concave bracket.
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + phi * (b - a);
            gd = g(d);
        }
    }
    Ok(best_v.max(gc).max(gd))
}

fn raw_f_at_for_oracle(div: &FDivergence, t: f64) -> Option<f64> {
    div.f(t).ok().filter(|v| v.is_finite())
}

/// Plug-in dual value E_Q[lambda] - E_P[f*(lambda)] for a given adversary,
/// with Q approximated by `model_samples` and P by `data`.
pub fn dual_divergence_estimate<F: Fn(&[f64]) -> f64>(
    div: &FDivergence,
    lambda: F,
    model_samples: &Dataset,
    data: &Dataset,
) -> Result<f64> {
    let mut gain = 0.0;
    for row in model_samples.rows() {
        gain += lambda(row);
    }
    gain /= model_samples.n() as f64;
    let mut pay = 0.0;
    for row in data.rows() {
        pay += div.conjugate(lambda(row))?;
    }
    pay /= data.n() as f64;
    Ok(gain - pay)
}

/// A parametric family Q_theta absolutely continuous with respect to the
/// data distribution, with a noise pushforward for model sampling. The
/// pushforward lets the same base draws be reused across theta (common
/// random numbers), which keeps the fitted divergence smooth in theta.
pub trait RatioModel: Send + Sync {
    fn sample_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;
    /// Draw base noise for `n` model samples.
    fn draw_base(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>>;
    /// Push one base draw through theta.
    fn push(&self, theta: &[f64], base: &[f64], out: &mut [f64]);
    /// ln dQ_theta/dP at y, when known in closed form.
    fn log_ratio(&self, _theta: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }
}

/// Gaussian location family Q_theta = N(theta, sigma^2) against data
/// P = N(data_mean, sigma^2); the ratio is available in closed form.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLocation {
    pub data_mean: f64,
    pub sigma: f64,
}

impl RatioModel for GaussianLocation {
    fn sample_dim(&self) -> usize {
        1
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn draw_base(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect()
    }
    fn push(&self, theta: &[f64], base: &[f64], out: &mut [f64]) {
        out[0] = theta[0] + self.sigma * base[0];
    }
    fn log_ratio(&self, theta: &[f64], y: &[f64]) -> Option<f64> {
        let s2 = self.sigma * self.sigma;
        let a = (y[0] - self.data_mean).powi(2);
        let b = (y[0] - theta[0]).powi(2);
        Some((a - b) / (2.0 * s2))
    }
}
