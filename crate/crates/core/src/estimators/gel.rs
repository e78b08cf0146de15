//! Generalized empirical likelihood losses and the continuous-updating
//! GMM closed forms.
//!
//! The loss is l(theta, lambda, Y) = -f*(lambda' m(Y, theta)) with a
//! Euclidean adversary of the moment dimension. The chi-squared member
//! has the analytic adversary lambda* = -2 E_n[mm']^{-1} E_n[m], whose
//! plug-in value reproduces the CUE quadratic form exactly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::divergences::{DivergenceFamily, FDivergence};
use crate::error::Result;
use crate::estimators::moments::MomentFunction;
use crate::estimators::{default_ridge, solve_quadratic_argmax};
use crate::saddle::SaddleLoss;
use crate::sieves::Sieve;

pub struct GelLoss {
    div: FDivergence,
    moment: Arc<dyn MomentFunction>,
}

impl GelLoss {
    pub fn new(div: FDivergence, moment: Arc<dyn MomentFunction>) -> Self {
        GelLoss { div, moment }
    }

    pub fn moment(&self) -> &Arc<dyn MomentFunction> {
        &self.moment
    }

    pub fn divergence(&self) -> &FDivergence {
        &self.div
    }
}

impl SaddleLoss for GelLoss {
    fn theta_dim(&self) -> usize {
        self.moment.theta_dim()
    }

    fn lambda_dim(&self) -> usize {
        self.moment.dim_m()
    }

    fn eval(&self, theta: &[f64], lambda: &[f64], y: &[f64]) -> Result<f64> {
        let mut m = vec![0.0; self.moment.dim_m()];
        self.moment.eval(theta, y, &mut m);
        let s: f64 = lambda.iter().zip(&m).map(|(l, mi)| l * mi).sum();
        Ok(-self.div.conjugate(s)?)
    }

    fn grad_theta_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let (dm, dt) = (self.moment.dim_m(), self.moment.theta_dim());
        let mut m = vec![0.0; dm];
        let mut jac = vec![0.0; dm * dt];
        let mut grad = vec![0.0; dt];
        for row in data.rows() {
            self.moment.eval(theta, row, &mut m);
            let s: f64 = lambda.iter().zip(&m).map(|(l, mi)| l * mi).sum();
            let w = -self.div.conjugate_prime(s)?;
            self.moment.jacobian_theta(theta, row, &mut jac);
            for j in 0..dt {
                let mut acc = 0.0;
                for i in 0..dm {
                    acc += lambda[i] * jac[i * dt + j];
                }
                grad[j] += w * acc;
            }
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn grad_lambda_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let dm = self.moment.dim_m();
        let mut m = vec![0.0; dm];
        let mut grad = vec![0.0; dm];
        for row in data.rows() {
            self.moment.eval(theta, row, &mut m);
            let s: f64 = lambda.iter().zip(&m).map(|(l, mi)| l * mi).sum();
            let w = -self.div.conjugate_prime(s)?;
            for i in 0..dm {
                grad[i] += w * m[i];
            }
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn inner_argmax(&self, theta: &[f64], data: &Dataset, _space: &Sieve) -> Option<Result<Vec<f64>>> {
        if self.div.family() == DivergenceFamily::ChiSquared && !self.div.is_normalized() {
            Some(gmm_lambda_star(self.moment.as_ref(), theta, data, None))
        } else {
            None
        }
    }
}

fn moment_stats(
    moment: &dyn MomentFunction,
    theta: &[f64],
    data: &Dataset,
) -> (DVector<f64>, DMatrix<f64>) {
    let dm = moment.dim_m();
    let mut a = DVector::zeros(dm);
    let mut b = DMatrix::zeros(dm, dm);
    let mut m = vec![0.0; dm];
    for row in data.rows() {
        moment.eval(theta, row, &mut m);
        for i in 0..dm {
            a[i] += m[i];
            for j in 0..dm {
                b[(i, j)] += m[i] * m[j];
            }
        }
    }
    let n = data.n() as f64;
    a /= n;
    b /= n;
    (a, b)
}

/// Continuous-updating GMM objective E_n[m]' (E_n[mm'] + ridge I)^{-1} E_n[m].
/// `ridge` defaults to a tiny trace-proportional stabilizer when `None`;
/// pass `Some(0.0)` for the exact quadratic form.
pub fn cue_objective(
    moment: &dyn MomentFunction,
    theta: &[f64],
    data: &Dataset,
    ridge: Option<f64>,
) -> Result<f64> {
    let (a, b) = moment_stats(moment, theta, data);
    let r = ridge.unwrap_or_else(|| default_ridge(&b));
    let sol = solve_quadratic_argmax(a.clone(), b, r)?;
    Ok(a.iter().zip(&sol).map(|(ai, si)| ai * si).sum())
}

/// Analytic chi-squared GEL adversary -2 (E_n[mm'] + ridge I)^{-1} E_n[m].
pub fn gmm_lambda_star(
    moment: &dyn MomentFunction,
    theta: &[f64],
    data: &Dataset,
    ridge: Option<f64>,
) -> Result<Vec<f64>> {
    let (a, b) = moment_stats(moment, theta, data);
    let r = ridge.unwrap_or_else(|| default_ridge(&b));
    let sol = solve_quadratic_argmax(a, b, r)?;
    Ok(sol.into_iter().map(|s| -2.0 * s).collect())
}
