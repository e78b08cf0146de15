//! Saddle-point solvers producing certified Nash solutions.
//!
//! Three methods: simultaneous gradient descent-ascent, extragradient
//! (which converges on bilinear games where descent-ascent cycles), and
//! alternating best response, which exploits closed-form inner adversaries
//! when the loss provides one. Every solve ends with a certification pass
//! so the returned slacks are search-based bounds, not solver residuals.

use crate::data::{Dataset, ParamPoint};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::saddle::{
    certify_nash, local_optimize, mean_loss, NashSolution, Objective, SaddleLoss, ToleranceBudget,
};
use crate::sieves::Sieve;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Sgda,
    Extragradient,
    AlternatingBestResponse,
}

impl SolverMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgda" => Ok(SolverMethod::Sgda),
            "extragradient" => Ok(SolverMethod::Extragradient),
            "alt_best_response" => Ok(SolverMethod::AlternatingBestResponse),
            other => Err(Error::invalid(format!("unknown solver method: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverMethod::Sgda => "sgda",
            SolverMethod::Extragradient => "extragradient",
            SolverMethod::AlternatingBestResponse => "alt_best_response",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub step_theta: f64,
    pub step_lambda: f64,
    /// Multiplicative step decay per iteration; 1.0 disables it.
    pub step_decay: f64,
    pub max_iters: usize,
    /// Stop when the largest gradient coordinate falls below this.
    pub stop_tol: f64,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(method: SolverMethod, seed: u64) -> Self {
        SolverConfig {
            method,
            step_theta: 1e-2,
            step_lambda: 1e-2,
            step_decay: 0.999,
            max_iters: 500,
            stop_tol: 1e-9,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.step_theta <= 0.0 || self.step_lambda <= 0.0 {
            return Err(Error::invalid("step sizes must be positive"));
        }
        if !(0.0 < self.step_decay && self.step_decay <= 1.0) {
            return Err(Error::invalid("step decay must be in (0, 1]"));
        }
        Ok(())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Run the configured method from a seeded start, then certify the Nash
/// slacks of whatever it found. The returned slacks come from the
/// certification search, not from solver internals.
pub fn solve<L: SaddleLoss + ?Sized>(
    loss: &L,
    data: &Dataset,
    theta_space: &Sieve,
    lambda_space: &Sieve,
    config: &SolverConfig,
    budget: &ToleranceBudget,
) -> Result<NashSolution> {
    config.validate()?;
    if loss.theta_dim() != theta_space.dim() || loss.lambda_dim() != lambda_space.dim() {
        return Err(Error::invalid("loss dimensions do not match the sieves"));
    }
    let mut rng = rng_from(config.seed, &[0x50]);
    let mut theta = theta_space.init(&mut rng);
    let mut lambda = lambda_space.init(&mut rng);
    let mut trace = Vec::new();
    match config.method {
        SolverMethod::Sgda => run_sgda(
            loss, data, theta_space, lambda_space, config, &mut theta, &mut lambda, &mut trace,
            false,
        )?,
        SolverMethod::Extragradient => run_sgda(
            loss, data, theta_space, lambda_space, config, &mut theta, &mut lambda, &mut trace,
            true,
        )?,
        SolverMethod::AlternatingBestResponse => run_alternating(
            loss, data, theta_space, lambda_space, config, &mut theta, &mut lambda, &mut trace,
        )?,
    }
    let mut sol = NashSolution::new(
        ParamPoint::new(theta, theta_space.id()),
        ParamPoint::new(lambda, lambda_space.id()),
    );
    sol.trace = trace;
    certify_nash(loss, &mut sol, data, theta_space, lambda_space, budget)?;
    Ok(sol)
}

#[allow(clippy::too_many_arguments)]
fn run_sgda<L: SaddleLoss + ?Sized>(
    loss: &L,
    data: &Dataset,
    theta_space: &Sieve,
    lambda_space: &Sieve,
    config: &SolverConfig,
    theta: &mut Vec<f64>,
    lambda: &mut Vec<f64>,
    trace: &mut Vec<f64>,
    extragradient: bool,
) -> Result<()> {
    theta_space.clip(theta);
    lambda_space.clip(lambda);
    let (mut st, mut sl) = (config.step_theta, config.step_lambda);
    let mut halvings = 0;
    let mut last_good = (theta.clone(), lambda.clone());
    for it in 0..config.max_iters {
        let gt = loss.grad_theta_batch(theta, lambda, data)?;
        let gl = loss.grad_lambda_batch(theta, lambda, data)?;
        if max_abs(&gt).max(max_abs(&gl)) < config.stop_tol {
            break;
        }
        let (gt, gl) = if extragradient {
            // Midpoint lookahead; the update below uses midpoint gradients
            // from the original iterate.
            let mut tm = theta.clone();
            let mut lm = lambda.clone();
            for (c, g) in tm.iter_mut().zip(&gt) {
                *c -= st * g;
            }
            for (c, g) in lm.iter_mut().zip(&gl) {
                *c += sl * g;
            }
            theta_space.clip(&mut tm);
            lambda_space.clip(&mut lm);
            (
                loss.grad_theta_batch(&tm, &lm, data)?,
                loss.grad_lambda_batch(&tm, &lm, data)?,
            )
        } else {
            (gt, gl)
        };
        for (c, g) in theta.iter_mut().zip(&gt) {
            *c -= st * g;
        }
        for (c, g) in lambda.iter_mut().zip(&gl) {
            *c += sl * g;
        }
        theta_space.clip(theta);
        lambda_space.clip(lambda);
        if theta.iter().chain(lambda.iter()).any(|c| !c.is_finite()) {
            halvings += 1;
            if halvings > 5 {
                return Err(Error::numerical("solver diverged", it));
            }
            *theta = last_good.0.clone();
            *lambda = last_good.1.clone();
            st *= 0.5;
            sl *= 0.5;
            continue;
        }
        last_good = (theta.clone(), lambda.clone());
        trace.push(mean_loss(loss, theta, lambda, data)?);
        st *= config.step_decay;
        sl *= config.step_decay;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_alternating<L: SaddleLoss + ?Sized>(
    loss: &L,
    data: &Dataset,
    theta_space: &Sieve,
    lambda_space: &Sieve,
    config: &SolverConfig,
    theta: &mut Vec<f64>,
    lambda: &mut Vec<f64>,
    trace: &mut Vec<f64>,
) -> Result<()> {
    theta_space.clip(theta);
    lambda_space.clip(lambda);
    // Adversary best response each sweep, then one theta step along the
    // envelope gradient of the profiled objective. Full theta descent at
    // fixed lambda would be wrong: these losses are typically concave in
    // theta and only the profile has an interior minimum.
    let mut st = config.step_theta;
    for it in 0..config.max_iters {
        match loss.inner_argmax(theta, data, lambda_space) {
            Some(res) => *lambda = res?,
            None => {
                let (l, _) = local_optimize(
                    loss,
                    data,
                    lambda_space,
                    lambda,
                    theta,
                    false,
                    Objective::Maximize,
                    30,
                    config.step_lambda,
                )?;
                *lambda = l;
            }
        }
        lambda_space.clip(lambda);
        let grad = loss.grad_theta_batch(theta, lambda, data)?;
        if max_abs(&grad) < config.stop_tol {
            break;
        }
        for (c, g) in theta.iter_mut().zip(&grad) {
            *c -= st * g;
        }
        theta_space.clip(theta);
        if theta.iter().any(|c| !c.is_finite()) {
            return Err(Error::numerical("solver diverged", it));
        }
        trace.push(mean_loss(loss, theta, lambda, data)?);
        st *= config.step_decay;
    }
    Ok(())
}

/// Least-squares fit of y on the sieve's scalar-input basis features:
/// coordinates for a first-stage regression function.
pub fn fit_first_stage(sieve: &Sieve, data: &Dataset, x_col: usize, y_col: usize) -> Result<Vec<f64>> {
    use nalgebra::{DMatrix, DVector};
    let d = sieve.dim();
    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    let mut phi = Vec::new();
    for row in data.rows() {
        sieve.basis_features(&[row[x_col]], &mut phi)?;
        let y = row[y_col];
        for i in 0..d {
            xty[i] += phi[i] * y;
            for j in 0..d {
                xtx[(i, j)] += phi[i] * phi[j];
            }
        }
    }
    let ridge = 1e-10 * (1.0 + xtx.trace() / d as f64);
    for i in 0..d {
        xtx[(i, i)] += ridge;
    }
    let sol = xtx.cholesky().ok_or(Error::SingularDesign)?.solve(&xty);
    Ok(sol.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::{DivergenceFamily, FDivergence};
    use crate::estimators::moments::MeanMoment;
    use crate::estimators::GelLoss;
    use crate::saddle::{BilinearLoss, QuadraticSaddleLoss};
    use crate::sieves::Basis;
    use rand::Rng as _;
    use std::sync::Arc;

    fn unit_data(n: usize) -> Dataset {
        Dataset::from_scalars(vec![0.0; n]).unwrap()
    }

    fn box1(id: &str, r: f64) -> Sieve {
        Sieve::euclidean(id, vec![(-r, r)]).unwrap()
    }

    fn config(method: SolverMethod, seed: u64) -> SolverConfig {
        let mut c = SolverConfig::new(method, seed);
        c.step_theta = 0.1;
        c.step_lambda = 0.1;
        c.step_decay = 1.0;
        c.max_iters = 3000;
        c
    }

    #[test]
    fn extragradient_solves_bilinear_where_sgda_cycles() {
        let d = unit_data(3);
        let ts = box1("t", 1.0);
        let ls = box1("l", 1.0);
        let budget = ToleranceBudget::new(1.0, 1.0, 300, 2, 3).unwrap();
        let eg = solve(
            &BilinearLoss,
            &d,
            &ts,
            &ls,
            &config(SolverMethod::Extragradient, 4),
            &budget,
        )
        .unwrap();
        let r_eg = eg.theta_hat.coords[0].abs() + eg.lambda_hat.coords[0].abs();
        assert!(r_eg < 1e-3, "extragradient radius {r_eg}");
        let sg = solve(
            &BilinearLoss,
            &d,
            &ts,
            &ls,
            &config(SolverMethod::Sgda, 4),
            &budget,
        )
        .unwrap();
        let r_sg = sg.theta_hat.coords[0].abs() + sg.lambda_hat.coords[0].abs();
        assert!(r_sg > 0.1, "descent-ascent should spiral out, radius {r_sg}");
    }

    #[test]
    fn extragradient_finds_quadratic_saddle() {
        let d = unit_data(3);
        let ts = box1("t", 2.0);
        let ls = box1("l", 2.0);
        let budget = ToleranceBudget::new(1e-6, 1e-6, 1000, 2, 5).unwrap();
        let sol = solve(
            &QuadraticSaddleLoss,
            &d,
            &ts,
            &ls,
            &config(SolverMethod::Extragradient, 6),
            &budget,
        )
        .unwrap();
        let (t_star, l_star) = QuadraticSaddleLoss::SADDLE;
        assert!((sol.theta_hat.coords[0] - t_star).abs() < 1e-6);
        assert!((sol.lambda_hat.coords[0] - l_star).abs() < 1e-6);
        assert!(sol.eta_tilde < 1e-6 && sol.eta < 1e-6);
    }

    #[test]
    fn alternating_best_response_matches_direct_cue_minimum() {
        // Chi-squared GEL with a mean moment: the inner adversary is
        // closed form and the outer minimum sits at the sample mean.
        let mut rng = rng_from(17, &[]);
        let ys: Vec<f64> = (0..80).map(|_| rng.gen_range(-1.0..1.0) + 0.3).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let data = Dataset::from_scalars(ys).unwrap();
        let loss = GelLoss::new(
            FDivergence::raw(DivergenceFamily::ChiSquared),
            Arc::new(MeanMoment::scalar()),
        );
        let ts = box1("t", 2.0);
        let ls = box1("l", 4.0);
        let mut cfg = config(SolverMethod::AlternatingBestResponse, 9);
        cfg.max_iters = 600;
        cfg.stop_tol = 1e-14;
        let budget = ToleranceBudget::new(1e-6, 1e-6, 400, 2, 10).unwrap();
        let sol = solve(&loss, &data, &ts, &ls, &cfg, &budget).unwrap();
        assert!(
            (sol.theta_hat.coords[0] - mean).abs() < 1e-7,
            "{} vs {mean}",
            sol.theta_hat.coords[0]
        );
        assert!(sol.eta_tilde < 1e-6 && sol.eta < 1e-6);
    }

    #[test]
    fn solves_are_deterministic_in_the_seed() {
        let d = unit_data(3);
        let ts = box1("t", 2.0);
        let ls = box1("l", 2.0);
        let budget = ToleranceBudget::new(1.0, 1.0, 200, 2, 8).unwrap();
        let cfg = config(SolverMethod::Extragradient, 31);
        let a = solve(&QuadraticSaddleLoss, &d, &ts, &ls, &cfg, &budget).unwrap();
        let b = solve(&QuadraticSaddleLoss, &d, &ts, &ls, &cfg, &budget).unwrap();
        assert_eq!(a.theta_hat.coords, b.theta_hat.coords);
        assert_eq!(a.lambda_hat.coords, b.lambda_hat.coords);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn first_stage_recovers_polynomial_coefficients() {
        // y = 2 - x + 0.5 x^2 exactly; degree-2 fit must be exact.
        let sieve = Sieve::linear("g", Basis::Polynomial, 2, 1, 1).unwrap();
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 49.0;
                vec![x, 2.0 - x + 0.5 * x * x]
            })
            .collect();
        let data = Dataset::new(rows, vec![("x", 0..1), ("y", 1..2)]).unwrap();
        let c = fit_first_stage(&sieve, &data, 0, 1).unwrap();
        for (got, want) in c.iter().zip([2.0, -1.0, 0.5]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }
}
