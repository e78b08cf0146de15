//! Riesz representer estimation and the orthogonalized functional.
//!
//! For a linear functional phi(g) = E[m(Y, g)] with representer theta*
//! (phi(g) = E[theta*(x) g(x)]), the loss
//!   l = m(Y, lambda) - theta(x) lambda(x) - lambda(x)^2 / 2
//! concentrates to (1/2) E[(theta*(x) - theta(x))^2], so its outer
//! minimizer estimates the representer. The fitted representer debiases
//! the plug-in functional of a first-stage regression.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{linear_in_coords, solve_quadratic_argmax};
use crate::saddle::SaddleLoss;
use crate::sieves::Sieve;

pub type CustomFunctional =
    Arc<dyn Fn(&[f64], &dyn Fn(f64) -> f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum RieszFunctional {
    /// phi(g) = E[g(x)], representer 1.
    Mean,
    /// phi(g) = E[g'(x)]; for standard normal x the representer is x.
    Derivative,
    /// User functional of (row, g); must be linear in g.
    Custom(CustomFunctional),
}

/// A fitted first-stage regression g-hat represented in a linear sieve.
#[derive(Clone)]
pub struct FirstStage {
    pub sieve: Sieve,
    pub coords: Vec<f64>,
}

#[derive(Clone)]
pub struct RieszProblem {
    pub functional: RieszFunctional,
    pub x_col: usize,
    pub y_col: usize,
    pub first_stage: Option<FirstStage>,
}

impl RieszProblem {
    /// Apply the functional to the sieve function with given coords at one row.
    fn m_apply(&self, row: &[f64], sieve: &Sieve, coords: &[f64]) -> Result<f64> {
        let x = row[self.x_col];
        match &self.functional {
            RieszFunctional::Mean => {
                let mut out = [0.0];
                sieve.eval(coords, &[x], &mut out)?;
                Ok(out[0])
            }
            RieszFunctional::Derivative => {
                let mut dphi = Vec::new();
                sieve.basis_features_deriv(x, &mut dphi)?;
                Ok(coords.iter().zip(&dphi).map(|(c, d)| c * d).sum())
            }
            RieszFunctional::Custom(f) => {
                let h = |xq: f64| {
                    let mut out = [0.0];
                    sieve
                        .eval(coords, &[xq], &mut out)
                        .map(|_| out[0])
                        .unwrap_or(f64::NAN)
                };
                Ok(f(row, &h))
            }
        }
    }

    /// Functional applied to each basis function of `sieve` at one row.
    fn m_basis(&self, row: &[f64], sieve: &Sieve, out: &mut Vec<f64>) -> Result<()> {
        let x = row[self.x_col];
        match &self.functional {
            RieszFunctional::Mean => sieve.basis_features(&[x], out),
            RieszFunctional::Derivative => sieve.basis_features_deriv(x, out),
            RieszFunctional::Custom(_) => {
                let k = sieve.feature_dim()?;
                let mut coords = vec![0.0; sieve.dim()];
                out.clear();
                for j in 0..k {
                    coords[j] = 1.0;
                    out.push(self.m_apply(row, sieve, &coords)?);
                    coords[j] = 0.0;
                }
                Ok(())
            }
        }
    }
}

pub struct RieszLoss {
    problem: RieszProblem,
    theta_sieve: Sieve,
    lambda_sieve: Sieve,
}

impl RieszLoss {
    pub fn new(problem: RieszProblem, theta_sieve: Sieve, lambda_sieve: Sieve) -> Result<Self> {
        if theta_sieve.output_dim() != 1 || lambda_sieve.output_dim() != 1 {
            return Err(Error::invalid("representer and adversary must be scalar-valued"));
        }
        if matches!(problem.functional, RieszFunctional::Derivative)
            && !linear_in_coords(&lambda_sieve)
        {
            return Err(Error::InvalidProblem(
                "derivative functional needs a linear-basis adversary".into(),
            ));
        }
        Ok(RieszLoss {
            problem,
            theta_sieve,
            lambda_sieve,
        })
    }

    pub fn problem(&self) -> &RieszProblem {
        &self.problem
    }

    pub fn theta_sieve(&self) -> &Sieve {
        &self.theta_sieve
    }

    pub fn lambda_sieve(&self) -> &Sieve {
        &self.lambda_sieve
    }

    /// Sample-based linearity check of the functional: additivity on the
    /// adversary sieve for random coordinate pairs.
    pub fn validate_linearity(&self, data: &Dataset, rng: &mut crate::rng::Rng) -> Result<()> {
        use rand::Rng as _;
        let d = self.lambda_sieve.dim();
        for _ in 0..8 {
            let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            for row in data.rows().iter().take(16) {
                let ma = self.problem.m_apply(row, &self.lambda_sieve, &a)?;
                let mb = self.problem.m_apply(row, &self.lambda_sieve, &b)?;
                let ms = self.problem.m_apply(row, &self.lambda_sieve, &sum)?;
                if (ma + mb - ms).abs() > 1e-8 * (1.0 + ma.abs() + mb.abs()) {
                    return Err(Error::InvalidProblem(
                        "functional is not linear in its function argument".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn theta_at(&self, theta: &[f64], x: f64) -> Result<f64> {
        let mut out = [0.0];
        self.theta_sieve.eval(theta, &[x], &mut out)?;
        Ok(out[0])
    }

    fn lambda_at(&self, lambda: &[f64], x: f64) -> Result<f64> {
        let mut out = [0.0];
        self.lambda_sieve.eval(lambda, &[x], &mut out)?;
        Ok(out[0])
    }
}

impl SaddleLoss for RieszLoss {
    fn theta_dim(&self) -> usize {
        self.theta_sieve.dim()
    }

    fn lambda_dim(&self) -> usize {
        self.lambda_sieve.dim()
    }

    fn eval(&self, theta: &[f64], lambda: &[f64], y: &[f64]) -> Result<f64> {
        let x = y[self.problem.x_col];
        let m = self.problem.m_apply(y, &self.lambda_sieve, lambda)?;
        let th = self.theta_at(theta, x)?;
        let lam = self.lambda_at(lambda, x)?;
        Ok(m - th * lam - 0.5 * lam * lam)
    }

    fn grad_theta_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.theta_sieve.dim()];
        for row in data.rows() {
            let x = row[self.problem.x_col];
            let lam = self.lambda_at(lambda, x)?;
            self.theta_sieve.grad_coords(theta, &[x], &[-lam], &mut grad)?;
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn grad_lambda_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let d = self.lambda_sieve.dim();
        let mut grad = vec![0.0; d];
        let mut mphi = Vec::new();
        for row in data.rows() {
            let x = row[self.problem.x_col];
            let th = self.theta_at(theta, x)?;
            let lam = self.lambda_at(lambda, x)?;
            self.problem.m_basis(row, &self.lambda_sieve, &mut mphi)?;
            for (g, mp) in grad.iter_mut().zip(&mphi) {
                *g += mp;
            }
            self.lambda_sieve
                .grad_coords(lambda, &[x], &[-(th + lam)], &mut grad)?;
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn inner_argmax(&self, theta: &[f64], data: &Dataset, _space: &Sieve) -> Option<Result<Vec<f64>>> {
        if !linear_in_coords(&self.lambda_sieve) {
            return None;
        }
        Some(self.solve_inner(theta, data))
    }
}

impl RieszLoss {
    fn solve_inner(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let d = self.lambda_sieve.dim();
        let mut rhs = DVector::zeros(d);
        let mut g = DMatrix::zeros(d, d);
        let mut mphi = Vec::new();
        let mut phi = Vec::new();
        for row in data.rows() {
            let x = row[self.problem.x_col];
            let th = self.theta_at(theta, x)?;
            self.problem.m_basis(row, &self.lambda_sieve, &mut mphi)?;
            self.lambda_sieve.basis_features(&[x], &mut phi)?;
            for i in 0..d {
                rhs[i] += mphi[i] - th * phi[i];
                for j in 0..d {
                    g[(i, j)] += phi[i] * phi[j];
                }
            }
        }
        let ridge = 1e-10 * (1.0 + g.trace() / d as f64);
        solve_quadratic_argmax(rhs, g, ridge)
    }

    /// Closed-form outer fit: with a linear representer sieve the
    /// concentrated objective is quadratic in the representer coords.
    pub fn fit_representer(&self, data: &Dataset) -> Result<Vec<f64>> {
        if !linear_in_coords(&self.theta_sieve) || !linear_in_coords(&self.lambda_sieve) {
            return Err(Error::invalid("closed-form fit needs linear sieves"));
        }
        let dt = self.theta_sieve.dim();
        let dl = self.lambda_sieve.dim();
        let mut c = DVector::zeros(dl);
        let mut g = DMatrix::zeros(dl, dl);
        let mut m_cross = DMatrix::zeros(dl, dt);
        let mut mphi = Vec::new();
        let mut phi_l = Vec::new();
        let mut phi_t = Vec::new();
        for row in data.rows() {
            let x = row[self.problem.x_col];
            self.problem.m_basis(row, &self.lambda_sieve, &mut mphi)?;
            self.lambda_sieve.basis_features(&[x], &mut phi_l)?;
            self.theta_sieve.basis_features(&[x], &mut phi_t)?;
            for i in 0..dl {
                c[i] += mphi[i];
                for j in 0..dl {
                    g[(i, j)] += phi_l[i] * phi_l[j];
                }
                for j in 0..dt {
                    m_cross[(i, j)] += phi_l[i] * phi_t[j];
                }
            }
        }
        // Minimize (c - M a)' G^{-1} (c - M a) over a.
        let ridge = 1e-10 * (1.0 + g.trace() / dl as f64);
        for i in 0..dl {
            g[(i, i)] += ridge;
        }
        let ginv_c = g
            .clone()
            .cholesky()
            .ok_or(Error::SingularDesign)?
            .solve(&c);
        let ginv_m = g.cholesky().ok_or(Error::SingularDesign)?.solve(&m_cross);
        let normal = m_cross.transpose() * &ginv_m;
        let rhs = m_cross.transpose() * ginv_c;
        let a: DVector<f64> = normal.lu().solve(&rhs).ok_or(Error::SingularDesign)?;
        Ok(a.as_slice().to_vec())
    }
}

/// Debiased functional estimate: the plug-in through the first stage plus
/// the representer-weighted residual correction,
///   E_n[m(Y, g-hat) + theta-hat(x) (y - g-hat(x))],
/// with its standard error.
pub fn orthogonalized_functional(
    loss: &RieszLoss,
    theta_hat: &[f64],
    data: &Dataset,
) -> Result<(f64, f64)> {
    let fs = loss
        .problem
        .first_stage
        .as_ref()
        .ok_or_else(|| Error::invalid("first stage not fitted"))?;
    let n = data.n();
    let mut scores = Vec::with_capacity(n);
    for row in data.rows() {
        let x = row[loss.problem.x_col];
        let y = row[loss.problem.y_col];
        let m = loss.problem.m_apply(row, &fs.sieve, &fs.coords)?;
        let mut ghat = [0.0];
        fs.sieve.eval(&fs.coords, &[x], &mut ghat)?;
        let th = loss.theta_at(theta_hat, x)?;
        scores.push(m + th * (y - ghat[0]));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok((mean, (var / n as f64).sqrt()))
}
