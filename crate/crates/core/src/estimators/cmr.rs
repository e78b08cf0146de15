//! Conditional moment restriction losses: the quadratic-penalty form and
//! its conditional-GEL generalization.
//!
//! For E[m(X, theta) | Z] = 0, the adversary is a function of the
//! instrument. The quadratic loss l = m' lambda(z) - ||lambda(z)||^2 / 4
//! concentrates to E || E[m|Z] ||^2 at lambda*(z) = 2 E[m|Z]; swapping the
//! quadratic for a conjugate, l = -f*(m lambda(z)), self-normalizes by
//! the conditional second moment and changes the asymptotic variance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::divergences::{DivergenceFamily, FDivergence};
use crate::error::{Error, Result};
use crate::estimators::moments::MomentFunction;
use crate::estimators::{linear_in_coords, linear_lambda_matrix, solve_quadratic_argmax};
use crate::saddle::SaddleLoss;
use crate::sieves::Sieve;

pub struct CmrLoss {
    moment: Arc<dyn MomentFunction>,
    lambda_sieve: Sieve,
    z_col: usize,
}

impl CmrLoss {
    pub fn new(moment: Arc<dyn MomentFunction>, lambda_sieve: Sieve, z_col: usize) -> Result<Self> {
        if lambda_sieve.output_dim() != moment.dim_m() {
            return Err(Error::invalid(format!(
                "adversary output dim {} != moment dim {}",
                lambda_sieve.output_dim(),
                moment.dim_m()
            )));
        }
        Ok(CmrLoss {
            moment,
            lambda_sieve,
            z_col,
        })
    }

    pub fn lambda_sieve(&self) -> &Sieve {
        &self.lambda_sieve
    }

    fn lambda_at(&self, lambda: &[f64], row: &[f64], out: &mut [f64]) -> Result<()> {
        let z = [row[self.z_col]];
        self.lambda_sieve.eval(lambda, &z, out)
    }
}

impl SaddleLoss for CmrLoss {
    fn theta_dim(&self) -> usize {
        self.moment.theta_dim()
    }

    fn lambda_dim(&self) -> usize {
        self.lambda_sieve.dim()
    }

    fn eval(&self, theta: &[f64], lambda: &[f64], y: &[f64]) -> Result<f64> {
        let q = self.moment.dim_m();
        let mut m = vec![0.0; q];
        let mut lam = vec![0.0; q];
        self.moment.eval(theta, y, &mut m);
        self.lambda_at(lambda, y, &mut lam)?;
        let dot: f64 = m.iter().zip(&lam).map(|(a, b)| a * b).sum();
        let pen: f64 = lam.iter().map(|v| v * v).sum();
        Ok(dot - 0.25 * pen)
    }

    fn grad_theta_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let (q, dt) = (self.moment.dim_m(), self.moment.theta_dim());
        let mut lam = vec![0.0; q];
        let mut jac = vec![0.0; q * dt];
        let mut grad = vec![0.0; dt];
        for row in data.rows() {
            self.lambda_at(lambda, row, &mut lam)?;
            self.moment.jacobian_theta(theta, row, &mut jac);
            for j in 0..dt {
                for o in 0..q {
                    grad[j] += lam[o] * jac[o * dt + j];
                }
            }
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn grad_lambda_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let q = self.moment.dim_m();
        let mut m = vec![0.0; q];
        let mut lam = vec![0.0; q];
        let mut upstream = vec![0.0; q];
        let mut grad = vec![0.0; self.lambda_sieve.dim()];
        for row in data.rows() {
            self.moment.eval(theta, row, &mut m);
            self.lambda_at(lambda, row, &mut lam)?;
            for o in 0..q {
                upstream[o] = m[o] - 0.5 * lam[o];
            }
            let z = [row[self.z_col]];
            self.lambda_sieve.grad_coords(lambda, &z, &upstream, &mut grad)?;
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

impl CmrLoss {
    fn solve_inner(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let (q, d) = (self.moment.dim_m(), self.lambda_sieve.dim());
        let zeros = vec![0.0; d];
        let mut m = vec![0.0; q];
        let mut rhs = DVector::zeros(d);
        let mut g = DMatrix::zeros(d, d);
        for row in data.rows() {
            self.moment.eval(theta, row, &mut m);
            let z = [row[self.z_col]];
            let u = linear_lambda_matrix(&self.lambda_sieve, &zeros, &z)?;
            for o in 0..q {
                let uo = &u[o * d..(o + 1) * d];
                for i in 0..d {
                    if uo[i] == 0.0 {
                        continue;
                    }
                    rhs[i] += m[o] * uo[i];
                    // Penalty ||lambda||^2/4 contributes G = U'U / 2.
                    for j in 0..d {
                        g[(i, j)] += 0.5 * uo[i] * uo[j];
                    }
                }
            }
        }
        // Empty bins leave zero rows; a small ridge pins those coords at 0.
        let ridge = 1e-12 * (1.0 + g.trace() / d as f64);
        solve_quadratic_argmax(rhs, g, ridge)
    }
}

pub struct ConditionalGelLoss {
    div: FDivergence,
    moment: Arc<dyn MomentFunction>,
    lambda_sieve: Sieve,
    z_col: usize,
}

impl ConditionalGelLoss {
    pub fn new(
        div: FDivergence,
        moment: Arc<dyn MomentFunction>,
        lambda_sieve: Sieve,
        z_col: usize,
    ) -> Result<Self> {
        if moment.dim_m() != 1 || lambda_sieve.output_dim() != 1 {
            return Err(Error::invalid(
                "conditional GEL implemented for scalar moments and scalar adversaries",
            ));
        }
        Ok(ConditionalGelLoss {
            div,
            moment,
            lambda_sieve,
            z_col,
        })
    }

    fn lambda_at(&self, lambda: &[f64], row: &[f64]) -> Result<f64> {
        let z = [row[self.z_col]];
        let mut out = [0.0];
        self.lambda_sieve.eval(lambda, &z, &mut out)?;
        Ok(out[0])
    }
}

impl SaddleLoss for ConditionalGelLoss {
    fn theta_dim(&self) -> usize {
        self.moment.theta_dim()
    }

    fn lambda_dim(&self) -> usize {
        self.lambda_sieve.dim()
    }

    fn eval(&self, theta: &[f64], lambda: &[f64], y: &[f64]) -> Result<f64> {
        let mut m = [0.0];
        self.moment.eval(theta, y, &mut m);
        let lam = self.lambda_at(lambda, y)?;
        Ok(-self.div.conjugate(m[0] * lam)?)
    }

    fn grad_theta_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let dt = self.moment.theta_dim();
        let mut m = [0.0];
        let mut jac = vec![0.0; dt];
        let mut grad = vec![0.0; dt];
        for row in data.rows() {
            self.moment.eval(theta, row, &mut m);
            let lam = self.lambda_at(lambda, row)?;
            let w = -self.div.conjugate_prime(m[0] * lam)? * lam;
            self.moment.jacobian_theta(theta, row, &mut jac);
            for j in 0..dt {
                grad[j] += w * jac[j];
            }
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn grad_lambda_batch(&self, theta: &[f64], lambda: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let mut m = [0.0];
        let mut grad = vec![0.0; self.lambda_sieve.dim()];
        for row in data.rows() {
            self.moment.eval(theta, row, &mut m);
            let lam = self.lambda_at(lambda, row)?;
            let upstream = [-self.div.conjugate_prime(m[0] * lam)? * m[0]];
            let z = [row[self.z_col]];
            self.lambda_sieve.grad_coords(lambda, &z, &upstream, &mut grad)?;
        }
        let n = data.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    fn inner_argmax(&self, theta: &[f64], data: &Dataset, _space: &Sieve) -> Option<Result<Vec<f64>>> {
        if self.div.family() != DivergenceFamily::ChiSquared
            || self.div.is_normalized()
            || !linear_in_coords(&self.lambda_sieve)
        {
            return None;
        }
        Some(self.solve_inner_chi2(theta, data))
    }
}

impl ConditionalGelLoss {
    /// Chi-squared closed form: value -(m lam + (m lam)^2/4) with
    /// lam = u' beta gives beta = -2 E_n[m^2 uu']^{-1} E_n[m u].
    fn solve_inner_chi2(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        let d = self.lambda_sieve.dim();
        let zeros = vec![0.0; d];
        let mut m = [0.0];
        let mut rhs = DVector::zeros(d);
        let mut g = DMatrix::zeros(d, d);
        for row in data.rows() {
            self.moment.eval(theta, row, &mut m);
            let z = [row[self.z_col]];
            let u = linear_lambda_matrix(&self.lambda_sieve, &zeros, &z)?;
            for i in 0..d {
                if u[i] == 0.0 {
                    continue;
                }
                rhs[i] -= m[0] * u[i];
                for j in 0..d {
                    g[(i, j)] += 0.5 * m[0] * m[0] * u[i] * u[j];
                }
            }
        }
        let ridge = 1e-12 * (1.0 + g.trace() / d as f64);
        solve_quadratic_argmax(rhs, g, ridge)
    }
}
