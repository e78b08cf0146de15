//! The saddle-loss contract and Nash-certificate machinery.
//!
//! An estimator here is a pair (theta_hat, lambda_hat) approximately
//! solving the empirical Nash condition of a pointwise loss
//! l(theta, lambda, Y): theta_hat nearly minimizes against lambda_hat and
//! lambda_hat nearly maximizes against theta_hat. The certified slacks
//! (eta_tilde, eta) quantify "nearly" and are reported with every fit.

use crate::data::{Dataset, ParamPoint};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::sieves::Sieve;

/// Pointwise saddle loss with pathwise derivatives.
///
/// `theta` and `lambda` are coordinate vectors; function-valued players
/// are interpreted by the loss through the sieves it holds. Analytic
/// directional gradients may override the central-difference defaults.
pub trait SaddleLoss: Send + Sync {
    fn theta_dim(&self) -> usize;
    fn lambda_dim(&self) -> usize;

    /// Column roles the loss reads from each row.
    fn required_roles(&self) -> Vec<&'static str> {
        vec![]
    }

    fn eval(&self, theta: &[f64], lambda: &[f64], y: &[f64]) -> Result<f64>;

    /// Pathwise derivative of `eval` in direction `dir` of theta.
    fn grad_theta_dir(&self, theta: &[f64], lambda: &[f64], y: &[f64], dir: &[f64]) -> Result<f64> {
        central_dir(|t| self.eval(t, lambda, y), theta, dir)
    }

    /// Pathwise derivative of `eval` in direction `dir` of lambda.
    fn grad_lambda_dir(&self, theta: &[f64], lambda: &[f64], y: &[f64], dir: &[f64]) -> Result<f64> {
        central_dir(|l| self.eval(theta, l, y), lambda, dir)
    }

    /// Gradient of the empirical objective with respect to theta.
    fn grad_theta_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        fd_batch_gradient(|t| mean_loss(self, t, lambda, data), theta)
    }

    /// Gradient of the empirical objective with respect to lambda.
    fn grad_lambda_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        fd_batch_gradient(|l| mean_loss(self, theta, l, data), lambda)
    }

    /// Exact inner maximizer over `space` at fixed theta, for families
    /// with a closed-form adversary. `None` when unavailable.
    fn inner_argmax(&self, _theta: &[f64], _data: &Dataset, _space: &Sieve) -> Option<Result<Vec<f64>>> {
        None
    }
}

pub(crate) fn central_dir<F: Fn(&[f64]) -> Result<f64>>(f: F, at: &[f64], dir: &[f64]) -> Result<f64> {
    let h = 1e-5;
    let probe = |s: f64| -> Result<f64> {
        let p: Vec<f64> = at.iter().zip(dir).map(|(a, d)| a + s * d).collect();
        f(&p)
    };
    Ok((probe(h)? - probe(-h)?) / (2.0 * h))
}

fn fd_batch_gradient<F: Fn(&[f64]) -> Result<f64>>(f: F, at: &[f64]) -> Result<Vec<f64>> {
    let h = 1e-6 * (1.0 + at.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut grad = vec![0.0; at.len()];
    let mut p = at.to_vec();
    for i in 0..at.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p)?;
        p[i] = orig - h;
        let dn = f(&p)?;
        p[i] = orig;
        grad[i] = (up - dn) / (2.0 * h);
    }
    Ok(grad)
}

pub(crate) fn mean_loss<L: SaddleLoss + ?Sized>(
    loss: &L,
    theta: &[f64],
    lambda: &[f64],
    data: &Dataset,
) -> Result<f64> {
    let mut acc = 0.0;
    for (i, row) in data.rows().iter().enumerate() {
        let v = loss.eval(theta, lambda, row)?;
        if !v.is_finite() {
            return Err(Error::numerical("non-finite loss value", i));
        }
        acc += v;
    }
    Ok(acc / data.n() as f64)
}

/// Sample average of the loss over the dataset.
pub fn empirical_objective<L: SaddleLoss + ?Sized>(
    loss: &L,
    theta: &ParamPoint,
    lambda: &ParamPoint,
    data: &Dataset,
) -> Result<f64> {
    if theta.dim() != loss.theta_dim() || lambda.dim() != loss.lambda_dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: loss expects ({}, {}), got ({}, {})",
            loss.theta_dim(),
            loss.lambda_dim(),
            theta.dim(),
            lambda.dim()
        )));
    }
    mean_loss(loss, &theta.coords, &lambda.coords, data)
}

/// Fitted pair plus certified slack budgets for the Nash condition.
#[derive(Debug, Clone)]
pub struct NashSolution {
    pub theta_hat: ParamPoint,
    pub lambda_hat: ParamPoint,
    /// Outer slack: how far theta_hat is from minimizing against lambda_hat.
    pub eta_tilde: f64,
    /// Inner slack: how much the adversary could still gain at theta_hat.
    pub eta: f64,
    /// Per-iteration empirical objective values of the solve.
    pub trace: Vec<f64>,
}

impl NashSolution {
    pub fn new(theta_hat: ParamPoint, lambda_hat: ParamPoint) -> Self {
        NashSolution {
            theta_hat,
            lambda_hat,
            eta_tilde: f64::NAN,
            eta: f64::NAN,
            trace: vec![],
        }
    }
}

/// Concrete finite-sample budgets for the slack sequences, plus the
/// optimization effort spent certifying them.
#[derive(Debug, Clone, Copy)]
pub struct ToleranceBudget {
    pub eta_tilde_max: f64,
    pub eta_max: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl ToleranceBudget {
    pub fn new(eta_tilde_max: f64, eta_max: f64, max_iters: usize, restarts: usize, seed: u64) -> Result<Self> {
        if eta_tilde_max < 0.0 || eta_max < 0.0 {
            return Err(Error::invalid("slack budgets must be nonnegative"));
        }
        if restarts < 1 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        Ok(ToleranceBudget {
            eta_tilde_max,
            eta_max,
            max_iters,
            restarts,
            seed,
        })
    }

    pub fn loose(seed: u64) -> Self {
        ToleranceBudget {
            eta_tilde_max: 1e-2,
            eta_max: 1e-2,
            max_iters: 400,
            restarts: 3,
            seed,
        }
    }
}

/// Extra tolerance absorbed by finite-precision optimization in the
/// minimax consistency check.
pub const SLACK_TOL: f64 = 1e-6;

pub(crate) enum Objective {
    Minimize,
    Maximize,
}

/// Projected gradient descent/ascent for one player at a fixed opponent.
/// Returns the best (coords, value) seen along the path.
pub(crate) fn local_optimize<L: SaddleLoss + ?Sized>(
    loss: &L,
    data: &Dataset,
    space: &Sieve,
    start: &[f64],
    opponent: &[f64],
    player_is_theta: bool,
    objective: Objective,
    iters: usize,
    step0: f64,
) -> Result<(Vec<f64>, f64)> {
    let sign = match objective {
        Objective::Minimize => -1.0,
        Objective::Maximize => 1.0,
    };
    let value = |c: &[f64]| -> Result<f64> {
        if player_is_theta {
            mean_loss(loss, c, opponent, data)
        } else {
            mean_loss(loss, opponent, c, data)
        }
    };
    let mut cur = start.to_vec();
    space.clip(&mut cur);
    let mut best = cur.clone();
    let mut best_val = value(&cur)?;
    let mut step = step0;
    let mut halvings = 0;
    let mut last_finite = cur.clone();
    for it in 0..iters {
        let grad = if player_is_theta {
            loss.grad_theta_batch(&cur, opponent, data)?
        } else {
            loss.grad_lambda_batch(opponent, &cur, data)?
        };
        for (c, g) in cur.iter_mut().zip(&grad) {
            *c += sign * step * g;
        }
        space.clip(&mut cur);
        if cur.iter().any(|c| !c.is_finite()) {
            halvings += 1;
            if halvings > 5 {
                return Err(Error::numerical("optimizer diverged", it));
            }
            cur = last_finite.clone();
            step *= 0.5;
            continue;
        }
        last_finite = cur.clone();
        let v = value(&cur)?;
        let improved = match objective {
            Objective::Minimize => v < best_val,
            Objective::Maximize => v > best_val,
        };
        if improved {
            best_val = v;
            best = cur.clone();
        }
        step *= 0.999;
    }
    Ok((best, best_val))
}

/// Best empirical infimum over theta found from multi-restart local
/// optimization (including the given start).
fn multi_restart_extremum<L: SaddleLoss + ?Sized>(
    loss: &L,
    data: &Dataset,
    space: &Sieve,
    anchor: &[f64],
    opponent: &[f64],
    player_is_theta: bool,
    objective: Objective,
    budget: &ToleranceBudget,
    tag: u64,
) -> Result<f64> {
    let obj_sign = matches!(objective, Objective::Maximize);
    // Closed-form adversary dominates any local search when available.
    let mut best: Option<f64> = None;
    if !player_is_theta && obj_sign {
        if let Some(res) = loss.inner_argmax(opponent, data, space) {
            let coords = res?;
            let v = mean_loss(loss, opponent, &coords, data)?;
            best = Some(v);
        }
    }
    let mut consider = |v: f64| {
        best = Some(match best {
            None => v,
            Some(b) => {
                if obj_sign {
                    b.max(v)
                } else {
                    b.min(v)
                }
            }
        });
    };
    let (_, v0) = local_optimize(
        loss,
        data,
        space,
        anchor,
        opponent,
        player_is_theta,
        if obj_sign { Objective::Maximize } else { Objective::Minimize },
        budget.max_iters,
        0.1,
    )?;
    consider(v0);
    for k in 0..budget.restarts {
        let mut rng = rng_from(budget.seed, &[tag, k as u64]);
        let start = space.init(&mut rng);
        let (_, v) = local_optimize(
            loss,
            data,
            space,
            &start,
            opponent,
            player_is_theta,
            if obj_sign { Objective::Maximize } else { Objective::Minimize },
            budget.max_iters,
            0.1,
        )?;
        consider(v);
    }
    Ok(best.unwrap())
}

/// Certify the Nash slacks of a candidate solution by multi-restart local
/// optimization of each player against the other. The certificates are
/// one-sided: a sharper restart can only raise the reported slack.
pub fn certify_nash<L: SaddleLoss + ?Sized>(
    loss: &L,
    sol: &mut NashSolution,
    data: &Dataset,
    theta_space: &Sieve,
    lambda_space: &Sieve,
    budget: &ToleranceBudget,
) -> Result<(f64, f64)> {
    if sol.theta_hat.dim() != theta_space.dim() || sol.lambda_hat.dim() != lambda_space.dim() {
        return Err(Error::invalid("solution dimensions do not match the sieves"));
    }
    let center = mean_loss(loss, &sol.theta_hat.coords, &sol.lambda_hat.coords, data)?;
    let inf_theta = multi_restart_extremum(
        loss,
        data,
        theta_space,
        &sol.theta_hat.coords,
        &sol.lambda_hat.coords,
        true,
        Objective::Minimize,
        budget,
        0xC0,
    )?;
    let sup_lambda = multi_restart_extremum(
        loss,
        data,
        lambda_space,
        &sol.lambda_hat.coords,
        &sol.theta_hat.coords,
        false,
        Objective::Maximize,
        budget,
        0xC1,
    )?;
    let eta_tilde = (center - inf_theta).max(0.0);
    let eta = (sup_lambda - center).max(0.0);
    sol.eta_tilde = eta_tilde;
    sol.eta = eta;
    Ok((eta_tilde, eta))
}

/// Check that a certified Nash pair also satisfies the sequential minimax
/// condition with combined slack eta_tilde + eta, re-solving the inner
/// supremum for a coarse restart set of candidate thetas.
pub fn minimax_consistency_check<L: SaddleLoss + ?Sized>(
    loss: &L,
    sol: &NashSolution,
    data: &Dataset,
    theta_space: &Sieve,
    lambda_space: &Sieve,
    budget: &ToleranceBudget,
) -> Result<bool> {
    if !sol.eta_tilde.is_finite() || !sol.eta.is_finite() {
        return Err(Error::invalid("solution must be certified first"));
    }
    let center = mean_loss(loss, &sol.theta_hat.coords, &sol.lambda_hat.coords, data)?;
    // Candidate thetas: the solution itself plus restarts descended
    // against lambda_hat.
    let mut candidates = vec![sol.theta_hat.coords.clone()];
    for k in 0..budget.restarts {
        let mut rng = rng_from(budget.seed, &[0xC3, k as u64]);
        let start = theta_space.init(&mut rng);
        let (c, _) = local_optimize(
            loss,
            data,
            theta_space,
            &start,
            &sol.lambda_hat.coords,
            true,
            Objective::Minimize,
            budget.max_iters,
            0.1,
        )?;
        candidates.push(c);
    }
    let mut min_sup = f64::INFINITY;
    for cand in &candidates {
        let sup = multi_restart_extremum(
            loss,
            data,
            lambda_space,
            &sol.lambda_hat.coords,
            cand,
            false,
            Objective::Maximize,
            budget,
            0xC2,
        )?;
        min_sup = min_sup.min(sup);
    }
    Ok(center <= min_sup + sol.eta_tilde + sol.eta + SLACK_TOL)
}

// --- toy losses used across tests ---

/// l(theta, lambda, y) = 0.
pub struct ZeroLoss;

impl SaddleLoss for ZeroLoss {
    fn theta_dim(&self) -> usize {
        1
    }
    fn lambda_dim(&self) -> usize {
        1
    }
    fn eval(&self, _t: &[f64], _l: &[f64], _y: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

/// l(theta, lambda, y) = theta * lambda. The canonical bilinear game;
/// also a deliberately non-orthogonal loss (d2l/dtheta dlambda = 1).
pub struct BilinearLoss;

impl SaddleLoss for BilinearLoss {
    fn theta_dim(&self) -> usize {
        1
    }
    fn lambda_dim(&self) -> usize {
        1
    }
    fn eval(&self, t: &[f64], l: &[f64], _y: &[f64]) -> Result<f64> {
        Ok(t[0] * l[0])
    }
    fn grad_theta_dir(&self, _t: &[f64], l: &[f64], _y: &[f64], dir: &[f64]) -> Result<f64> {
        Ok(l[0] * dir[0])
    }
    fn grad_lambda_dir(&self, t: &[f64], _l: &[f64], _y: &[f64], dir: &[f64]) -> Result<f64> {
        Ok(t[0] * dir[0])
    }
}

/// l = (theta-1)^2 + theta*lambda - lambda^2, a strongly
/// convex-concave quadratic with analytic saddle (0.8, 0.4).
pub struct QuadraticSaddleLoss;

impl QuadraticSaddleLoss {
    pub const SADDLE: (f64, f64) = (0.8, 0.4);
}

impl SaddleLoss for QuadraticSaddleLoss {
    fn theta_dim(&self) -> usize {
        1
    }
    fn lambda_dim(&self) -> usize {
        1
    }
    fn eval(&self, t: &[f64], l: &[f64], _y: &[f64]) -> Result<f64> {
        Ok((t[0] - 1.0).powi(2) + t[0] * l[0] - l[0] * l[0])
    }
    fn grad_theta_dir(&self, t: &[f64], l: &[f64], _y: &[f64], dir: &[f64]) -> Result<f64> {
        Ok((2.0 * (t[0] - 1.0) + l[0]) * dir[0])
    }
    fn grad_lambda_dir(&self, t: &[f64], l: &[f64], _y: &[f64], dir: &[f64]) -> Result<f64> {
        Ok((t[0] - 2.0 * l[0]) * dir[0])
    }
}
