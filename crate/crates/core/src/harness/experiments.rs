//! Monte Carlo drivers: rate fits, coverage, efficiency comparison,
//! divergence recovery, orthogonality decay, and Bellman recovery.
//!
//! Every driver is deterministic given (inputs, seed): replica streams are
//! tagged by index, replicas run on a worker pool, and results are merged
//! in replica order. Solves are certified against slack budgets that
//! shrink like c/sqrt(n) — against a frozen adversary the GEL-type losses
//! admit descent directions whose payoff is proportional to the
//! adversary's own magnitude, itself O(n^{-1/2}) at the saddle.

use std::sync::Arc;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, ParamPoint};
use crate::divergences::{DivergenceFamily, FDivergence, GaussianLocation};
use crate::error::{Error, Result};
use crate::estimators::cmr::{CmrLoss, ConditionalGelLoss};
use crate::estimators::fgan::{analytic_dual_estimate, FganLoss};
use crate::estimators::gel::{cue_objective, gmm_lambda_star, GelLoss};
use crate::estimators::moments::{LinearIvResidual, LocationScaleMoment, MeanMoment};
use crate::estimators::riesz::{
    orthogonalized_functional, FirstStage, RieszFunctional, RieszLoss, RieszProblem,
};
use crate::estimators::sbeed::{MdpBatch, SbeedLoss};
use crate::harness::dgp::{generate, DgpSpec, TabularMdp};
use crate::inference::{
    cmr_variance_formulas, concentrated_objective, neyman_orthogonality_check, variance_estimate,
    CmrVariances, Direction,
};
use crate::rng::{derive_seed, rng_from};
use crate::saddle::{
    certify_nash, local_optimize, minimax_consistency_check, BilinearLoss, NashSolution,
    Objective, SaddleLoss, ToleranceBudget,
};
use crate::sieves::{Activation, Basis, GrowthSchedule, Sieve, SieveKind};
use crate::solvers::{fit_first_stage, solve, SolverConfig, SolverMethod};

/// Gaps at or below this are indistinguishable from an exact fit and are
/// censored out of log-log rate fits.
const GAP_FLOOR: f64 = 1e-14;

/// Golden-section minimizer of a unimodal scalar function on [lo, hi].
pub fn golden_min<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    if !(hi > lo) || tol <= 0.0 {
        return Err(Error::invalid("golden_min needs lo < hi and tol > 0"));
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Certification tallies across the solves of one experiment.
#[derive(Debug, Clone, Copy, Default)]
pub struct CertSummary {
    pub certified: usize,
    pub slack_failures: usize,
    pub minimax_failures: usize,
}

impl CertSummary {
    pub fn all_pass(&self) -> bool {
        self.certified > 0 && self.slack_failures == 0 && self.minimax_failures == 0
    }

    pub fn merge(&mut self, other: &CertSummary) {
        self.certified += other.certified;
        self.slack_failures += other.slack_failures;
        self.minimax_failures += other.minimax_failures;
    }

    fn absorb(&mut self, slack_ok: bool, minimax_ok: bool) {
        self.certified += 1;
        if !slack_ok {
            self.slack_failures += 1;
        }
        if !minimax_ok {
            self.minimax_failures += 1;
        }
    }
}

/// Budget with both slack caps at `scale / sqrt(n)`.
pub fn slack_budget(n: usize, scale: f64, seed: u64) -> ToleranceBudget {
    let cap = scale / (n as f64).sqrt();
    ToleranceBudget {
        eta_tilde_max: cap,
        eta_max: cap,
        max_iters: 40,
        restarts: 1,
        seed,
    }
}

/// Attach the adversary's best response to a fitted outer parameter,
/// certify the pair, and run the minimax check.
fn certify_solution<L: SaddleLoss + ?Sized>(
    loss: &L,
    theta: Vec<f64>,
    data: &Dataset,
    theta_space: &Sieve,
    lambda_space: &Sieve,
    budget: &ToleranceBudget,
) -> Result<(NashSolution, bool, bool)> {
    let lambda = match loss.inner_argmax(&theta, data, lambda_space) {
        Some(res) => res?,
        None => {
            let start = vec![0.0; lambda_space.dim()];
            local_optimize(
                loss,
                data,
                lambda_space,
                &start,
                &theta,
                false,
                Objective::Maximize,
                200,
                0.05,
            )?
            .0
        }
    };
    let mut sol = NashSolution::new(
        ParamPoint::new(theta, theta_space.id()),
        ParamPoint::new(lambda, lambda_space.id()),
    );
    certify_nash(loss, &mut sol, data, theta_space, lambda_space, budget)?;
    let slack_ok = sol.eta_tilde <= budget.eta_tilde_max && sol.eta <= budget.eta_max;
    let minimax_ok = minimax_consistency_check(loss, &sol, data, theta_space, lambda_space, budget)?;
    Ok((sol, slack_ok, minimax_ok))
}

fn sample_variance(xs: &[f64]) -> f64 {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Least-squares slope and its standard error on (ln x, ln y).
fn loglog_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::invalid("rate fit needs at least two uncensored points"));
    }
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("rate fit needs distinct sample sizes"));
    }
    let slope = sxy / sxx;
    if points.len() == 2 {
        return Ok((slope, 0.0));
    }
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - ybar - slope * (x - xbar)).powi(2))
        .sum();
    let se = (sse / (k - 2.0) / sxx).sqrt();
    Ok((slope, se))
}

// --- binned scalar-IV closed forms ---

/// Interior quantile edges of a scalar column, for a bin-indicator
/// adversary sieve.
fn quantile_edges(data: &Dataset, col: usize, bins: usize) -> Vec<f64> {
    let mut z: Vec<f64> = data.rows().iter().map(|r| r[col]).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..bins).map(|k| z[k * z.len() / bins]).collect()
}

/// Per-bin first and second moments of (y, d) for m = y - theta d.
struct IvBins {
    w: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    yy: Vec<f64>,
    yd: Vec<f64>,
    dd: Vec<f64>,
}

fn iv_bins(data: &Dataset, edges: &[f64]) -> IvBins {
    let nb = edges.len() + 1;
    let mut c = vec![0usize; nb];
    let (mut y, mut d) = (vec![0.0; nb], vec![0.0; nb]);
    let (mut yy, mut yd, mut dd) = (vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]);
    for row in data.rows() {
        let b = edges.partition_point(|&e| row[2] >= e);
        c[b] += 1;
        y[b] += row[0];
        d[b] += row[1];
        yy[b] += row[0] * row[0];
        yd[b] += row[0] * row[1];
        dd[b] += row[1] * row[1];
    }
    let n = data.n() as f64;
    let w: Vec<f64> = c.iter().map(|&k| k as f64 / n).collect();
    for b in 0..nb {
        let k = (c[b] as f64).max(1.0);
        y[b] /= k;
        d[b] /= k;
        yy[b] /= k;
        yd[b] /= k;
        dd[b] /= k;
    }
    IvBins { w, y, d, yy, yd, dd }
}

/// Minimizer of sum_b w_b (y-bar_b - theta d-bar_b)^2, the profile of the
/// quadratic-penalty conditional-moment loss over a bin adversary.
fn cmr_theta_hat(bins: &IvBins) -> Result<f64> {
    let num: f64 = bins.w.iter().zip(&bins.y).zip(&bins.d).map(|((w, y), d)| w * y * d).sum();
    let den: f64 = bins.w.iter().zip(&bins.d).map(|(w, d)| w * d * d).sum();
    if den <= 1e-12 {
        return Err(Error::SingularDesign);
    }
    Ok(num / den)
}

/// Profile of the chi-squared conditional-GEL loss over a bin adversary:
/// each bin self-normalizes by its empirical second moment of m.
fn cgel_profile(bins: &IvBins, theta: f64) -> f64 {
    let mut q = 0.0;
    for b in 0..bins.w.len() {
        if bins.w[b] == 0.0 {
            continue;
        }
        let m1 = bins.y[b] - theta * bins.d[b];
        let m2 = bins.yy[b] - 2.0 * theta * bins.yd[b] + theta * theta * bins.dd[b];
        if m2 <= 1e-12 {
            continue;
        }
        q += bins.w[b] * m1 * m1 / m2;
    }
    q
}

fn cgel_theta_hat(bins: &IvBins) -> Result<f64> {
    golden_min(|t| Ok(cgel_profile(bins, t)), -1.0, 3.0, 1e-9)
}

// --- estimator families and single solves ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorFamily {
    Cue,
    Cmr,
    Cgel,
    Fgan,
    Sbeed,
    Riesz,
}

impl EstimatorFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cue" => Ok(EstimatorFamily::Cue),
            "cmr" => Ok(EstimatorFamily::Cmr),
            "cgel" => Ok(EstimatorFamily::Cgel),
            "fgan" => Ok(EstimatorFamily::Fgan),
            "sbeed" => Ok(EstimatorFamily::Sbeed),
            "riesz" => Ok(EstimatorFamily::Riesz),
            other => Err(Error::invalid(format!("unknown estimator family: {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorFamily::Cue => "cue",
            EstimatorFamily::Cmr => "cmr",
            EstimatorFamily::Cgel => "cgel",
            EstimatorFamily::Fgan => "fgan",
            EstimatorFamily::Sbeed => "sbeed",
            EstimatorFamily::Riesz => "riesz",
        }
    }
}

fn theta_box(id: &str) -> Result<Sieve> {
    Sieve::euclidean(id, vec![(-1.0, 3.0)])
}

/// One fitted solve: the loss, its spaces, and the outer parameter.
struct Fitted {
    theta: Vec<f64>,
    loss: Box<dyn SaddleLoss>,
    theta_space: Sieve,
    lambda_space: Sieve,
    budget_scale: f64,
}

fn fit_cue_location(data: &Dataset) -> Result<Fitted> {
    let moment = MeanMoment { dim: 1, y_start: 0 };
    let theta = golden_min(|t| cue_objective(&moment, &[t], data, None), -1.0, 3.0, 1e-10)?;
    Ok(Fitted {
        theta: vec![theta],
        loss: Box::new(GelLoss::new(
            FDivergence::raw(DivergenceFamily::ChiSquared),
            Arc::new(moment),
        )),
        theta_space: theta_box("cue_theta")?,
        lambda_space: Sieve::euclidean_cube("cue_adv", 1, 5.0)?,
        budget_scale: 40.0,
    })
}

fn fit_cue_location_scale(data: &Dataset) -> Result<Fitted> {
    let moment = LocationScaleMoment { y_col: 0 };
    let theta = golden_min(|t| cue_objective(&moment, &[t], data, None), -1.0, 3.0, 1e-10)?;
    Ok(Fitted {
        theta: vec![theta],
        loss: Box::new(GelLoss::new(
            FDivergence::raw(DivergenceFamily::ChiSquared),
            Arc::new(moment),
        )),
        theta_space: theta_box("cue_theta")?,
        lambda_space: Sieve::euclidean_cube("cue_adv", 2, 5.0)?,
        budget_scale: 40.0,
    })
}

const IV_BINS: usize = 32;

fn fit_cmr_iv(data: &Dataset, bins: usize) -> Result<Fitted> {
    let edges = quantile_edges(data, 2, bins);
    let theta = cmr_theta_hat(&iv_bins(data, &edges))?;
    let sieve = Sieve::binned("cmr_adv", edges, 1)?;
    Ok(Fitted {
        theta: vec![theta],
        loss: Box::new(CmrLoss::new(
            Arc::new(LinearIvResidual { y_col: 0, d_col: 1 }),
            sieve.clone(),
            2,
        )?),
        theta_space: theta_box("cmr_theta")?,
        lambda_space: sieve,
        budget_scale: 40.0,
    })
}

fn fit_cgel_iv(data: &Dataset, bins: usize) -> Result<Fitted> {
    let edges = quantile_edges(data, 2, bins);
    let theta = cgel_theta_hat(&iv_bins(data, &edges))?;
    let sieve = Sieve::binned("cgel_adv", edges, 1)?;
    Ok(Fitted {
        theta: vec![theta],
        loss: Box::new(ConditionalGelLoss::new(
            FDivergence::raw(DivergenceFamily::ChiSquared),
            Arc::new(LinearIvResidual { y_col: 0, d_col: 1 }),
            sieve.clone(),
            2,
        )?),
        theta_space: theta_box("cgel_theta")?,
        lambda_space: sieve,
        budget_scale: 40.0,
    })
}

fn riesz_sieves() -> Result<(Sieve, Sieve, Sieve)> {
    Ok((
        Sieve::linear("riesz_theta", Basis::Polynomial, 2, 1, 1)?,
        Sieve::linear("riesz_adv", Basis::Polynomial, 3, 1, 1)?,
        Sieve::linear("riesz_fs", Basis::Trig, 2, 1, 1)?,
    ))
}

fn fit_riesz_derivative(data: &Dataset) -> Result<(Fitted, f64, f64)> {
    let (theta_sieve, lambda_sieve, fs_sieve) = riesz_sieves()?;
    let coords = fit_first_stage(&fs_sieve, data, 0, 1)?;
    let problem = RieszProblem {
        functional: RieszFunctional::Derivative,
        x_col: 0,
        y_col: 1,
        first_stage: Some(FirstStage { sieve: fs_sieve, coords }),
    };
    let loss = RieszLoss::new(problem, theta_sieve.clone(), lambda_sieve.clone())?;
    let theta = loss.fit_representer(data)?;
    let (estimate, se) = orthogonalized_functional(&loss, &theta, data)?;
    Ok((
        Fitted {
            theta,
            loss: Box::new(loss),
            theta_space: theta_sieve,
            lambda_space: lambda_sieve,
            budget_scale: 40.0,
        },
        estimate,
        se,
    ))
}

// --- rate experiments ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateFamily {
    CueLocation,
    CmrIv,
}

impl RateFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cue" => Ok(RateFamily::CueLocation),
            "cmr" => Ok(RateFamily::CmrIv),
            other => Err(Error::invalid(format!("unknown rate family: {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RateFamily::CueLocation => "cue",
            RateFamily::CmrIv => "cmr",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateRow {
    pub n: usize,
    pub replica: usize,
    pub gap: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RateFitResult {
    pub n_grid: Vec<usize>,
    pub gap_means: Vec<f64>,
    pub slope: f64,
    pub slope_se: f64,
    pub replicas: usize,
    pub censored: usize,
    pub failures: usize,
    pub cert: CertSummary,
    pub rows: Vec<RateRow>,
}

fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.len() < 2 || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::invalid("n_grid must be strictly increasing with length >= 2"));
    }
    Ok(())
}

/// Oracle criterion gap per replica, averaged per n and fitted on
/// (log n, log mean gap). `certify_stride` certifies every k-th replica;
/// 0 disables certification.
pub fn run_rate_experiment(
    family: RateFamily,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
    certify_stride: usize,
) -> Result<RateFitResult> {
    check_grid(n_grid)?;
    if replicas == 0 {
        return Err(Error::invalid("replicas must be positive"));
    }
    let mut rows = Vec::new();
    let mut cert = CertSummary::default();
    let mut failures = 0usize;
    let mut censored = 0usize;
    let mut points = Vec::new();
    let mut gap_means = Vec::new();
    for &n in n_grid {
        let results: Vec<Result<(f64, u64, Option<(bool, bool)>)>> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let seed_r = derive_seed(seed, &[0xA1, n as u64, r as u64]);
                let certify = certify_stride > 0 && r % certify_stride == 0;
                rate_replica(family, n, seed_r, certify)
            })
            .collect();
        let mut kept = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res {
                Ok((gap, seed_r, certified)) => {
                    if let Some((slack_ok, minimax_ok)) = certified {
                        cert.absorb(slack_ok, minimax_ok);
                    }
                    rows.push(RateRow { n, replica: r, gap, seed: seed_r });
                    if gap > GAP_FLOOR {
                        kept.push(gap);
                    } else {
                        censored += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        if kept.is_empty() {
            gap_means.push(f64::NAN);
            continue;
        }
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        gap_means.push(mean);
        points.push((n as f64, mean));
    }
    let (slope, slope_se) = loglog_fit(&points)?;
    Ok(RateFitResult {
        n_grid: n_grid.to_vec(),
        gap_means,
        slope,
        slope_se,
        replicas,
        censored,
        failures,
        cert,
        rows,
    })
}

fn rate_replica(
    family: RateFamily,
    n: usize,
    seed_r: u64,
    certify: bool,
) -> Result<(f64, u64, Option<(bool, bool)>)> {
    let (fit, gap) = match family {
        RateFamily::CueLocation => {
            let dgp = DgpSpec::GaussianLocation { mu: 1.0, sigma: 1.0 };
            let data = generate(&dgp, n, seed_r)?;
            let fit = fit_cue_location(&data)?;
            // Population CUE objective of the location model at theta-hat.
            let e = fit.theta[0] - 1.0;
            let gap = e * e / (1.0 + e * e);
            (certify.then_some((fit, data)), gap)
        }
        RateFamily::CmrIv => {
            let dgp = DgpSpec::LinearIvHeteroskedastic { theta: 1.0, homoskedastic: false };
            let data = generate(&dgp, n, seed_r)?;
            let fit = fit_cmr_iv(&data, 16)?;
            // E[(E[m|Z])^2] = (theta - theta*)^2 E[z^2] with E[z^2] = 1.
            let gap = (fit.theta[0] - 1.0).powi(2);
            (certify.then_some((fit, data)), gap)
        }
    };
    let certified = match fit {
        None => None,
        Some((fit, data)) => {
            let budget = slack_budget(n, fit.budget_scale, derive_seed(seed_r, &[0xC9]));
            let (_, slack_ok, minimax_ok) = certify_solution(
                fit.loss.as_ref(),
                fit.theta,
                &data,
                &fit.theta_space,
                &fit.lambda_space,
                &budget,
            )?;
            Some((slack_ok, minimax_ok))
        }
    };
    Ok((gap, seed_r, certified))
}

/// Location fit under the analytic adversary for each n, with the
/// closed-form Gaussian divergence as the oracle gap.
pub fn run_divergence_recovery(
    family: DivergenceFamily,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<RateFitResult> {
    check_grid(n_grid)?;
    if replicas == 0 {
        return Err(Error::invalid("replicas must be positive"));
    }
    let div = FDivergence::raw(family);
    let mut rows = Vec::new();
    let mut failures = 0usize;
    let mut censored = 0usize;
    let mut points = Vec::new();
    let mut gap_means = Vec::new();
    for &n in n_grid {
        let results: Vec<Result<(f64, u64)>> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let seed_r = derive_seed(seed, &[0xA2, n as u64, r as u64]);
                let dgp = DgpSpec::GaussianLocation { mu: 1.0, sigma: 1.0 };
                let data = generate(&dgp, n, seed_r)?;
                let model = GaussianLocation { data_mean: 1.0, sigma: 1.0 };
                // Common random numbers across theta: one fixed stream.
                let mc_seed = derive_seed(seed_r, &[0xA3]);
                let theta = golden_min(
                    |t| analytic_dual_estimate(&div, &model, &[t], &data, n, mc_seed),
                    -1.0,
                    3.0,
                    1e-7,
                )?;
                let gap = DgpSpec::gaussian_divergence_oracle(family, theta - 1.0, 1.0)?;
                Ok((gap, seed_r))
            })
            .collect();
        let mut kept = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res {
                Ok((gap, seed_r)) => {
                    rows.push(RateRow { n, replica: r, gap, seed: seed_r });
                    if gap > GAP_FLOOR {
                        kept.push(gap);
                    } else {
                        censored += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        if kept.is_empty() {
            gap_means.push(f64::NAN);
            continue;
        }
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        gap_means.push(mean);
        points.push((n as f64, mean));
    }
    let (slope, slope_se) = loglog_fit(&points)?;
    Ok(RateFitResult {
        n_grid: n_grid.to_vec(),
        gap_means,
        slope,
        slope_se,
        replicas,
        censored,
        failures,
        cert: CertSummary::default(),
        rows,
    })
}

// --- coverage ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageFamily {
    CueMean,
    RieszDerivative,
}

impl CoverageFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cue" => Ok(CoverageFamily::CueMean),
            "riesz" => Ok(CoverageFamily::RieszDerivative),
            other => Err(Error::invalid(format!("unknown coverage family: {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoverageRow {
    pub replica: usize,
    pub estimate: f64,
    pub se: f64,
    pub hit: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub level: f64,
    pub n: usize,
    pub replicas: usize,
    pub truth: f64,
    pub hits: usize,
    pub coverage: f64,
    pub mean_ci_width: f64,
    /// Sample variance of sqrt(n) (estimate - truth) over replicas.
    pub empirical_var: f64,
    pub failures: usize,
    pub cert: CertSummary,
    pub rows: Vec<CoverageRow>,
}

fn normal_quantile(level: f64) -> Result<f64> {
    if !(0.0 < level) || level > 1.0 {
        return Err(Error::invalid("confidence level must lie in (0, 1]"));
    }
    if level >= 1.0 {
        return Ok(f64::INFINITY);
    }
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

pub fn run_coverage(
    family: CoverageFamily,
    level: f64,
    replicas: usize,
    n: usize,
    seed: u64,
    certify_stride: usize,
) -> Result<CoverageReport> {
    if replicas < 2 {
        return Err(Error::invalid("coverage needs at least two replicas"));
    }
    let z = normal_quantile(level)?;
    let truth = match family {
        CoverageFamily::CueMean => 1.0,
        CoverageFamily::RieszDerivative => (-0.5f64).exp(),
    };
    let results: Vec<Result<(f64, f64, u64, Option<(bool, bool)>)>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let seed_r = derive_seed(seed, &[0xB1, r as u64]);
            let certify = certify_stride > 0 && r % certify_stride == 0;
            coverage_replica(family, n, seed_r, certify)
        })
        .collect();
    let mut rows = Vec::new();
    let mut cert = CertSummary::default();
    let mut failures = 0usize;
    let mut hits = 0usize;
    let mut width_sum = 0.0;
    let mut scaled = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok((estimate, se, seed_r, certified)) => {
                if let Some((slack_ok, minimax_ok)) = certified {
                    cert.absorb(slack_ok, minimax_ok);
                }
                let hit = (estimate - truth).abs() <= z * se;
                if hit {
                    hits += 1;
                }
                width_sum += 2.0 * z * se;
                scaled.push((n as f64).sqrt() * (estimate - truth));
                rows.push(CoverageRow { replica: r, estimate, se, hit, seed: seed_r });
            }
            Err(_) => failures += 1,
        }
    }
    if rows.len() < 2 {
        return Err(Error::numerical("too few successful coverage replicas", rows.len()));
    }
    Ok(CoverageReport {
        level,
        n,
        replicas,
        truth,
        hits,
        coverage: hits as f64 / rows.len() as f64,
        mean_ci_width: width_sum / rows.len() as f64,
        empirical_var: sample_variance(&scaled),
        failures,
        cert,
        rows,
    })
}

fn coverage_replica(
    family: CoverageFamily,
    n: usize,
    seed_r: u64,
    certify: bool,
) -> Result<(f64, f64, u64, Option<(bool, bool)>)> {
    let (fit, data, estimate, se) = match family {
        CoverageFamily::CueMean => {
            let dgp = DgpSpec::GaussianLocation { mu: 1.0, sigma: 1.0 };
            let data = generate(&dgp, n, seed_r)?;
            let fit = fit_cue_location(&data)?;
            let lambda = gmm_lambda_star(
                &MeanMoment { dim: 1, y_start: 0 },
                &fit.theta,
                &data,
                None,
            )?;
            let rep = variance_estimate(
                fit.loss.as_ref(),
                &fit.theta,
                &lambda,
                &data,
                &fit.lambda_space,
                &Direction::Coordinate(0),
            )?;
            let (estimate, se) = (rep.estimate, rep.se);
            (fit, data, estimate, se)
        }
        CoverageFamily::RieszDerivative => {
            let data = generate(&DgpSpec::RieszDerivative, n, seed_r)?;
            let (fit, estimate, se) = fit_riesz_derivative(&data)?;
            (fit, data, estimate, se)
        }
    };
    let certified = if certify {
        let budget = slack_budget(n, fit.budget_scale, derive_seed(seed_r, &[0xC9]));
        let (_, slack_ok, minimax_ok) = certify_solution(
            fit.loss.as_ref(),
            fit.theta,
            &data,
            &fit.theta_space,
            &fit.lambda_space,
            &budget,
        )?;
        Some((slack_ok, minimax_ok))
    } else {
        None
    };
    Ok((estimate, se, seed_r, certified))
}

// --- efficiency comparison ---

#[derive(Debug, Clone)]
pub struct EfficiencyReport {
    pub replicas: usize,
    pub n: usize,
    pub homoskedastic: bool,
    /// Monte Carlo variance of sqrt(n) (theta-hat - theta*), both families.
    pub var_cmr: f64,
    pub var_cgel: f64,
    /// Mean and standard error of the paired per-replica difference of
    /// squared deviations.
    pub diff: f64,
    pub diff_se: f64,
    pub targets: CmrVariances,
    pub failures: usize,
    pub cert: CertSummary,
}

pub fn run_efficiency_compare(
    replicas: usize,
    n: usize,
    homoskedastic: bool,
    seed: u64,
    certify_stride: usize,
) -> Result<EfficiencyReport> {
    if replicas < 2 {
        return Err(Error::invalid(
            "variance comparison needs at least two replicas",
        ));
    }
    let dgp = DgpSpec::LinearIvHeteroskedastic { theta: 1.0, homoskedastic };
    let targets = cmr_variance_formulas(&dgp.design().expect("iv design oracles"))?;
    let results: Vec<Result<(f64, f64, Option<(bool, bool)>, Option<(bool, bool)>)>> = (0
        ..replicas)
        .into_par_iter()
        .map(|r| {
            let seed_r = derive_seed(seed, &[0xE1, r as u64]);
            let data = generate(&dgp, n, seed_r)?;
            let edges = quantile_edges(&data, 2, IV_BINS);
            let bins = iv_bins(&data, &edges);
            let t_cmr = cmr_theta_hat(&bins)?;
            let t_cgel = cgel_theta_hat(&bins)?;
            let certified = if certify_stride > 0 && r % certify_stride == 0 {
                let budget = slack_budget(n, 40.0, derive_seed(seed_r, &[0xC9]));
                let fit = fit_cmr_iv(&data, IV_BINS)?;
                let a = certify_solution(
                    fit.loss.as_ref(),
                    fit.theta,
                    &data,
                    &fit.theta_space,
                    &fit.lambda_space,
                    &budget,
                )?;
                let fit = fit_cgel_iv(&data, IV_BINS)?;
                let b = certify_solution(
                    fit.loss.as_ref(),
                    fit.theta,
                    &data,
                    &fit.theta_space,
                    &fit.lambda_space,
                    &budget,
                )?;
                (Some((a.1, a.2)), Some((b.1, b.2)))
            } else {
                (None, None)
            };
            Ok((t_cmr, t_cgel, certified.0, certified.1))
        })
        .collect();
    let mut cert = CertSummary::default();
    let mut failures = 0usize;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for res in results {
        match res {
            Ok((t_cmr, t_cgel, c1, c2)) => {
                for c in [c1, c2].into_iter().flatten() {
                    cert.absorb(c.0, c.1);
                }
                let root_n = (n as f64).sqrt();
                xs.push(root_n * (t_cmr - 1.0));
                ys.push(root_n * (t_cgel - 1.0));
            }
            Err(_) => failures += 1,
        }
    }
    if xs.len() < 2 {
        return Err(Error::numerical("too few successful efficiency replicas", xs.len()));
    }
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let diffs: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar).powi(2) - (y - ybar).powi(2))
        .collect();
    let diff = diffs.iter().sum::<f64>() / k;
    let diff_se = (sample_variance(&diffs) / k).sqrt();
    Ok(EfficiencyReport {
        replicas,
        n,
        homoskedastic,
        var_cmr: sample_variance(&xs),
        var_cgel: sample_variance(&ys),
        diff,
        diff_se,
        targets,
        failures,
        cert,
    })
}

// --- orthogonality decay ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShrinkFamily {
    CueLocationScale,
    CgelIv,
    Bilinear,
}

impl ShrinkFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cue" => Ok(ShrinkFamily::CueLocationScale),
            "cmr" => Ok(ShrinkFamily::CgelIv),
            "bilinear" => Ok(ShrinkFamily::Bilinear),
            other => Err(Error::invalid(format!("unknown shrink family: {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShrinkReport {
    pub seeds: usize,
    pub n_small: usize,
    pub n_large: usize,
    pub median_ratio: f64,
    pub median_small: f64,
    pub median_large: f64,
    pub ratios: Vec<f64>,
    pub failures: usize,
    pub cert: CertSummary,
}

/// Orthogonality decay: fit a saddle on one sample, evaluate the check on
/// an independent sample of the same size, and compare n against 4n.
///
/// In-sample the slope-corrected derivative cancels to finite-difference
/// precision by the envelope identity, so the decay is only visible
/// out-of-sample, where the fitted adversary misses the evaluation
/// sample's best response by O(n^{-1/2}).
pub fn run_orthogonality_shrink(
    family: ShrinkFamily,
    n_small: usize,
    seeds: usize,
    seed: u64,
    certify_stride: usize,
) -> Result<ShrinkReport> {
    if seeds == 0 {
        return Err(Error::invalid("seed count must be positive"));
    }
    let n_large = 4 * n_small;
    let results: Vec<Result<(f64, f64, Option<(bool, bool)>)>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let certify = certify_stride > 0 && s % certify_stride == 0;
            let small = shrink_check(family, n_small, derive_seed(seed, &[0xF1, s as u64]), certify)?;
            let large = shrink_check(family, n_large, derive_seed(seed, &[0xF2, s as u64]), false)?;
            Ok((small.0, large.0, small.1))
        })
        .collect();
    let mut cert = CertSummary::default();
    let mut failures = 0usize;
    let (mut smalls, mut larges, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
    for res in results {
        match res {
            Ok((small, large, certified)) => {
                if let Some((a, b)) = certified {
                    cert.absorb(a, b);
                }
                smalls.push(small);
                larges.push(large);
                ratios.push(small / large);
            }
            Err(_) => failures += 1,
        }
    }
    if ratios.is_empty() {
        return Err(Error::numerical("all shrink seeds failed", seeds));
    }
    Ok(ShrinkReport {
        seeds,
        n_small,
        n_large,
        median_ratio: median(ratios.clone()),
        median_small: median(smalls),
        median_large: median(larges),
        ratios,
        failures,
        cert,
    })
}

const SHRINK_H: f64 = 1e-3;

fn shrink_check(
    family: ShrinkFamily,
    n: usize,
    seed_s: u64,
    certify: bool,
) -> Result<(f64, Option<(bool, bool)>)> {
    let (fit, fit_data, eval_data) = match family {
        ShrinkFamily::CueLocationScale => {
            let dgp = DgpSpec::GaussianLocation { mu: 1.0, sigma: 1.0 };
            let fit_data = generate(&dgp, n, derive_seed(seed_s, &[1]))?;
            let eval_data = generate(&dgp, n, derive_seed(seed_s, &[2]))?;
            let fit = fit_cue_location_scale(&fit_data)?;
            (fit, fit_data, eval_data)
        }
        ShrinkFamily::CgelIv => {
            let dgp = DgpSpec::LinearIvHeteroskedastic { theta: 1.0, homoskedastic: false };
            let fit_data = generate(&dgp, n, derive_seed(seed_s, &[1]))?;
            let eval_data = generate(&dgp, n, derive_seed(seed_s, &[2]))?;
            let fit = fit_cgel_iv(&fit_data, 8)?;
            (fit, fit_data, eval_data)
        }
        ShrinkFamily::Bilinear => {
            let data = generate(
                &DgpSpec::GaussianLocation { mu: 0.0, sigma: 1.0 },
                n,
                derive_seed(seed_s, &[1]),
            )?;
            let check = neyman_orthogonality_check(
                &BilinearLoss,
                &[0.0],
                &[0.0],
                &data,
                &Sieve::euclidean_cube("bilinear_adv", 1, 5.0)?,
                &[Direction::Coordinate(0)],
                SHRINK_H,
            )?;
            return Ok((check, None));
        }
    };
    let lambda = fit
        .loss
        .inner_argmax(&fit.theta, &fit_data, &fit.lambda_space)
        .expect("closed-form adversary")?;
    let dirs: Vec<Direction> = (0..fit.lambda_space.dim()).map(Direction::Coordinate).collect();
    let check = neyman_orthogonality_check(
        fit.loss.as_ref(),
        &fit.theta,
        &lambda,
        &eval_data,
        &fit.lambda_space,
        &dirs,
        SHRINK_H,
    )?;
    let certified = if certify {
        let budget = slack_budget(n, fit.budget_scale, derive_seed(seed_s, &[0xC9]));
        let (_, a, b) = certify_solution(
            fit.loss.as_ref(),
            fit.theta,
            &fit_data,
            &fit.theta_space,
            &fit.lambda_space,
            &budget,
        )?;
        Some((a, b))
    } else {
        None
    };
    Ok((check, certified))
}

// --- divergence recovery at fixed n ---

#[derive(Debug, Clone)]
pub struct DivergenceReport {
    pub family: DivergenceFamily,
    pub estimate: f64,
    pub oracle: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub n: usize,
    pub m_samples: usize,
}

fn divergence_report(
    family: DivergenceFamily,
    estimate: f64,
    oracle: f64,
    n: usize,
    m_samples: usize,
) -> DivergenceReport {
    DivergenceReport {
        family,
        estimate,
        oracle,
        abs_err: (estimate - oracle).abs(),
        rel_err: (estimate - oracle).abs() / oracle.abs().max(1e-12),
        n,
        m_samples,
    }
}

/// Divergence between N(delta, sigma^2) data and the model at location 0,
/// estimated with the analytic adversary lambda* = f'(ratio).
pub fn run_divergence_analytic(
    family: DivergenceFamily,
    delta: f64,
    sigma: f64,
    n: usize,
    m_samples: usize,
    seed: u64,
) -> Result<DivergenceReport> {
    let div = FDivergence::raw(family);
    let oracle = DgpSpec::gaussian_divergence_oracle(family, delta, sigma)?;
    let data = generate(
        &DgpSpec::GaussianLocation { mu: delta, sigma },
        n,
        derive_seed(seed, &[0xD1]),
    )?;
    let model = GaussianLocation { data_mean: delta, sigma };
    let estimate =
        analytic_dual_estimate(&div, &model, &[0.0], &data, m_samples, derive_seed(seed, &[0xD2]))?;
    Ok(divergence_report(family, estimate, oracle, n, m_samples))
}

/// Same divergence estimated by ascending a tanh-network adversary; the
/// width follows the growth schedule at this n.
pub fn run_divergence_network(
    family: DivergenceFamily,
    delta: f64,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<DivergenceReport> {
    let div = FDivergence::raw(family);
    let oracle = DgpSpec::gaussian_divergence_oracle(family, delta, sigma)?;
    let width = GrowthSchedule::new(1.0, 1.0, 1.0, 0.5)?.width_for_n(n);
    let net = Sieve::new(
        "fgan_adv",
        SieveKind::Network {
            input_dim: 1,
            output_dim: 1,
            depth: 2,
            width,
            max_nonzero: 4096,
            weight_clip: 6.0,
            output_clip: 8.0,
            activation: Activation::Tanh,
        },
    )?;
    let data = generate(
        &DgpSpec::GaussianLocation { mu: delta, sigma },
        n,
        derive_seed(seed, &[0xD1]),
    )?;
    let model = Arc::new(GaussianLocation { data_mean: delta, sigma });
    let loss = FganLoss::new(div, model, n, net.clone(), derive_seed(seed, &[0xD3]))?;
    let mut best = f64::NEG_INFINITY;
    for k in 0..3u64 {
        let mut rng = rng_from(seed, &[0xD4, k]);
        let start = net.init(&mut rng);
        let (_, v) = local_optimize(
            &loss,
            &data,
            &net,
            &start,
            &[0.0],
            false,
            Objective::Maximize,
            600,
            0.05,
        )?;
        best = best.max(v);
    }
    Ok(divergence_report(family, best, oracle, n, n))
}

// --- representative network-adversary saddle solve ---

#[derive(Debug, Clone)]
pub struct FganSolveReport {
    pub theta_hat: f64,
    pub objective: f64,
    pub eta_tilde: f64,
    pub eta: f64,
    pub slack_ok: bool,
    pub minimax_ok: bool,
    pub n: usize,
}

/// Full min-max location fit (KL, network adversary) with certification:
/// the outer player should recover the data mean.
pub fn run_fgan_location_solve(n: usize, seed: u64) -> Result<FganSolveReport> {
    let div = FDivergence::raw(DivergenceFamily::KullbackLeibler);
    let data = generate(
        &DgpSpec::GaussianLocation { mu: 1.0, sigma: 1.0 },
        n,
        derive_seed(seed, &[0xF5]),
    )?;
    let net = Sieve::new(
        "fgan_adv",
        SieveKind::Network {
            input_dim: 1,
            output_dim: 1,
            depth: 2,
            width: 4,
            max_nonzero: 4096,
            weight_clip: 6.0,
            output_clip: 8.0,
            activation: Activation::Tanh,
        },
    )?;
    let model = Arc::new(GaussianLocation { data_mean: 1.0, sigma: 1.0 });
    let loss = FganLoss::new(div, model, n, net.clone(), derive_seed(seed, &[0xF6]))?;
    let theta_space = Sieve::euclidean("fgan_theta", vec![(-2.0, 4.0)])?;
    let config = SolverConfig {
        method: SolverMethod::AlternatingBestResponse,
        step_theta: 0.3,
        step_lambda: 0.05,
        step_decay: 0.995,
        max_iters: 60,
        stop_tol: 1e-8,
        seed: derive_seed(seed, &[0xF7]),
    };
    // Network ascent is approximate, so the caps are absolute rather
    // than c/sqrt(n).
    let budget = ToleranceBudget {
        eta_tilde_max: 0.05,
        eta_max: 0.05,
        max_iters: 60,
        restarts: 1,
        seed: derive_seed(seed, &[0xF8]),
    };
    let sol = solve(&loss, &data, &theta_space, &net, &config, &budget)?;
    let slack_ok = sol.eta_tilde <= budget.eta_tilde_max && sol.eta <= budget.eta_max;
    let minimax_ok = minimax_consistency_check(&loss, &sol, &data, &theta_space, &net, &budget)?;
    let objective = crate::saddle::empirical_objective(&loss, &sol.theta_hat, &sol.lambda_hat, &data)?;
    Ok(FganSolveReport {
        theta_hat: sol.theta_hat.coords[0],
        objective,
        eta_tilde: sol.eta_tilde,
        eta: sol.eta,
        slack_ok,
        minimax_ok,
        n,
    })
}

// --- Bellman recovery ---

#[derive(Debug, Clone)]
pub struct SbeedReport {
    pub n: usize,
    /// Concentrated objective at the fit (half the weighted mean squared
    /// cell residual).
    pub objective: f64,
    pub v_err_inf: f64,
    pub eta_tilde: f64,
    pub eta: f64,
    pub slack_ok: bool,
    pub minimax_ok: bool,
}

pub fn run_sbeed_recovery(n: usize, seed: u64) -> Result<SbeedReport> {
    let dgp = DgpSpec::TabularMdp { n_states: 5, n_actions: 3, beta: 0.5 };
    let mdp = dgp.mdp().expect("tabular design")?;
    let data = generate(&dgp, n, derive_seed(seed, &[0xB0]))?;
    let (v_hat, logits_am) = fit_sbeed_counts(&mdp, &data)?;
    let (v_star, _) = mdp.value_iteration();
    let v_err_inf = v_hat
        .iter()
        .zip(&v_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let edges: Vec<f64> = (1..mdp.n_states).map(|s| s as f64 - 0.5).collect();
    let v_sieve = Sieve::binned("sbeed_v", edges.clone(), 1)?;
    let logits_sieve = Sieve::binned("sbeed_logits", edges.clone(), mdp.n_actions)?;
    let lambda_sieve = Sieve::binned("sbeed_adv", edges, mdp.n_actions)?;
    let reward = mdp.reward.clone();
    let na = mdp.n_actions;
    let batch = MdpBatch::new(
        mdp.beta,
        mdp.n_states,
        mdp.n_actions,
        Arc::new(move |s, a| reward[s * na + a]),
        0,
        1,
        2,
    )?;
    let loss = SbeedLoss::new(batch, v_sieve, logits_sieve, lambda_sieve.clone())?;
    let theta: Vec<f64> = v_hat.iter().chain(logits_am.iter()).copied().collect();
    let hint = vec![0.0; lambda_sieve.dim()];
    let objective = concentrated_objective(&loss, &theta, &hint, &data, &lambda_sieve)?;
    let theta_space = Sieve::euclidean_cube("sbeed_theta", theta.len(), 10.0)?;
    let mut budget = slack_budget(n, 40.0, derive_seed(seed, &[0xB2]));
    budget.max_iters = 30;
    let (sol, slack_ok, minimax_ok) =
        certify_solution(&loss, theta, &data, &theta_space, &lambda_sieve, &budget)?;
    Ok(SbeedReport {
        n,
        objective,
        v_err_inf,
        eta_tilde: sol.eta_tilde,
        eta: sol.eta,
        slack_ok,
        minimax_ok,
    })
}

/// Gradient descent with backtracking on the profiled Bellman objective
/// expressed through transition counts:
///   F(V, logits) = 1/2 sum_{s,a} w_sa delta_sa^2,
///   delta_sa = r_sa + beta P-hat[V] - V(s) - log softmax(logits_s)[a].
/// Returns V and the logits in the sieve's action-major layout.
fn fit_sbeed_counts(mdp: &TabularMdp, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut cnt = vec![0usize; ns * na * ns];
    let mut n_sa = vec![0usize; ns * na];
    for row in data.rows() {
        let (s, a, sp) = (row[0] as usize, row[1] as usize, row[2] as usize);
        if s >= ns || a >= na || sp >= ns {
            return Err(Error::invalid("transition row outside the state/action space"));
        }
        cnt[(s * na + a) * ns + sp] += 1;
        n_sa[s * na + a] += 1;
    }
    let total = data.n() as f64;
    let deltas = |v: &[f64], logits: &[f64]| -> Vec<f64> {
        let mut d = vec![0.0; ns * na];
        for s in 0..ns {
            let row = &logits[s * na..(s + 1) * na];
            let hi = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = hi + row.iter().map(|&x| (x - hi).exp()).sum::<f64>().ln();
            for a in 0..na {
                let sa = s * na + a;
                if n_sa[sa] == 0 {
                    continue;
                }
                let mut cont = 0.0;
                for sp in 0..ns {
                    cont += cnt[sa * ns + sp] as f64 * v[sp];
                }
                cont /= n_sa[sa] as f64;
                d[sa] = mdp.reward[sa] + mdp.beta * cont - v[s] - (row[a] - lse);
            }
        }
        d
    };
    let objective = |d: &[f64]| -> f64 {
        d.iter()
            .enumerate()
            .map(|(sa, &x)| 0.5 * n_sa[sa] as f64 / total * x * x)
            .sum()
    };
    let mut v = vec![0.0; ns];
    let mut logits = vec![0.0; ns * na];
    let mut step = 1.0;
    let mut f_cur = objective(&deltas(&v, &logits));
    for _ in 0..20_000 {
        let d = deltas(&v, &logits);
        let mut gv = vec![0.0; ns];
        let mut gl = vec![0.0; ns * na];
        for s in 0..ns {
            let row = &logits[s * na..(s + 1) * na];
            let hi = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let z: f64 = row.iter().map(|&x| (x - hi).exp()).sum();
            let pi: Vec<f64> = row.iter().map(|&x| (x - hi).exp() / z).collect();
            for a in 0..na {
                let sa = s * na + a;
                if n_sa[sa] == 0 {
                    continue;
                }
                let w = n_sa[sa] as f64 / total;
                let wd = w * d[sa];
                gv[s] -= wd;
                for sp in 0..ns {
                    gv[sp] += wd * mdp.beta * cnt[sa * ns + sp] as f64 / n_sa[sa] as f64;
                }
                for ap in 0..na {
                    let ind = if ap == a { 1.0 } else { 0.0 };
                    gl[s * na + ap] += wd * (pi[ap] - ind);
                }
            }
        }
        let gmax = gv
            .iter()
            .chain(gl.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < 1e-12 {
            break;
        }
        loop {
            let v_try: Vec<f64> = v.iter().zip(&gv).map(|(x, g)| x - step * g).collect();
            let l_try: Vec<f64> = logits.iter().zip(&gl).map(|(x, g)| x - step * g).collect();
            let f_try = objective(&deltas(&v_try, &l_try));
            if f_try <= f_cur {
                v = v_try;
                logits = l_try;
                f_cur = f_try;
                step *= 1.2;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
        if step < 1e-14 {
            break;
        }
    }
    let mut logits_am = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            logits_am[a * ns + s] = logits[s * na + a];
        }
    }
    Ok((v, logits_am))
}

// --- single estimate with certification ---

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub family: &'static str,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    pub eta_tilde: f64,
    pub eta: f64,
    pub slack_ok: bool,
    pub minimax_ok: bool,
    pub seed: u64,
}

/// One dataset from the family's reference design, one fit, one
/// certificate.
pub fn run_estimate(family: EstimatorFamily, n: usize, seed: u64) -> Result<EstimateReport> {
    let seed_d = derive_seed(seed, &[0xE5]);
    let (fit, data) = match family {
        EstimatorFamily::Cue => {
            let data = generate(&DgpSpec::GaussianLocation { mu: 1.0, sigma: 1.0 }, n, seed_d)?;
            (fit_cue_location(&data)?, data)
        }
        EstimatorFamily::Cmr => {
            let data = generate(
                &DgpSpec::LinearIvHeteroskedastic { theta: 1.0, homoskedastic: false },
                n,
                seed_d,
            )?;
            (fit_cmr_iv(&data, 16)?, data)
        }
        EstimatorFamily::Cgel => {
            let data = generate(
                &DgpSpec::LinearIvHeteroskedastic { theta: 1.0, homoskedastic: false },
                n,
                seed_d,
            )?;
            (fit_cgel_iv(&data, 16)?, data)
        }
        EstimatorFamily::Riesz => {
            let data = generate(&DgpSpec::RieszDerivative, n, seed_d)?;
            let (fit, _, _) = fit_riesz_derivative(&data)?;
            (fit, data)
        }
        EstimatorFamily::Fgan => {
            let rep = run_fgan_location_solve(n, seed)?;
            return Ok(EstimateReport {
                family: family.name(),
                n,
                theta_hat: vec![rep.theta_hat],
                eta_tilde: rep.eta_tilde,
                eta: rep.eta,
                slack_ok: rep.slack_ok,
                minimax_ok: rep.minimax_ok,
                seed,
            });
        }
        EstimatorFamily::Sbeed => {
            let rep = run_sbeed_recovery(n, seed)?;
            return Ok(EstimateReport {
                family: family.name(),
                n,
                theta_hat: vec![rep.objective, rep.v_err_inf],
                eta_tilde: rep.eta_tilde,
                eta: rep.eta,
                slack_ok: rep.slack_ok,
                minimax_ok: rep.minimax_ok,
                seed,
            });
        }
    };
    let budget = slack_budget(n, fit.budget_scale, derive_seed(seed, &[0xC9]));
    let theta = fit.theta.clone();
    let (sol, slack_ok, minimax_ok) = certify_solution(
        fit.loss.as_ref(),
        fit.theta,
        &data,
        &fit.theta_space,
        &fit.lambda_space,
        &budget,
    )?;
    Ok(EstimateReport {
        family: family.name(),
        n,
        theta_hat: theta,
        eta_tilde: sol.eta_tilde,
        eta: sol.eta,
        slack_ok,
        minimax_ok,
        seed,
    })
}
