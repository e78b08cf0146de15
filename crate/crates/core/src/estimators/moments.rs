//! Moment functions m(Y, theta) and conditional designs.

use std::sync::Arc;

use crate::error::{Error, Result};

/// A known, possibly vector-valued moment function of a parametric theta.
pub trait MomentFunction: Send + Sync {
    fn theta_dim(&self) -> usize;
    fn dim_m(&self) -> usize;
    fn eval(&self, theta: &[f64], row: &[f64], out: &mut [f64]);

    /// d m / d theta, row-major `dim_m x theta_dim`. The default is a
    /// central difference; analytic overrides must agree with it.
    fn jacobian_theta(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
        let h = 1e-6 * (1.0 + theta.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let (dm, dt) = (self.dim_m(), self.theta_dim());
        let mut probe = theta.to_vec();
        let mut up = vec![0.0; dm];
        let mut dn = vec![0.0; dm];
        for j in 0..dt {
            let orig = probe[j];
            probe[j] = orig + h;
            self.eval(&probe, row, &mut up);
            probe[j] = orig - h;
            self.eval(&probe, row, &mut dn);
            probe[j] = orig;
            for i in 0..dm {
                out[i * dt + j] = (up[i] - dn[i]) / (2.0 * h);
            }
        }
    }
}

/// m(y, theta) = y - theta, the vector mean model. Reads `dim` columns
/// starting at `y_start`.
#[derive(Debug, Clone, Copy)]
pub struct MeanMoment {
    pub dim: usize,
    pub y_start: usize,
}

impl MeanMoment {
    pub fn scalar() -> Self {
        MeanMoment { dim: 1, y_start: 0 }
    }
}

impl MomentFunction for MeanMoment {
    fn theta_dim(&self) -> usize {
        self.dim
    }
    fn dim_m(&self) -> usize {
        self.dim
    }
    fn eval(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = row[self.y_start + i] - theta[i];
        }
    }
    fn jacobian_theta(&self, _theta: &[f64], _row: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = -1.0;
        }
    }
}

/// Over-identified location moments m = (y - theta, (y - theta)^2 - 1)
/// for unit-variance data: two restrictions on one parameter.
#[derive(Debug, Clone, Copy)]
pub struct LocationScaleMoment {
    pub y_col: usize,
}

impl MomentFunction for LocationScaleMoment {
    fn theta_dim(&self) -> usize {
        1
    }
    fn dim_m(&self) -> usize {
        2
    }
    fn eval(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
        let r = row[self.y_col] - theta[0];
        out[0] = r;
        out[1] = r * r - 1.0;
    }
    fn jacobian_theta(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
        let r = row[self.y_col] - theta[0];
        out[0] = -1.0;
        out[1] = -2.0 * r;
    }
}

/// Scalar instrumental-variable residual m = y - theta * d.
#[derive(Debug, Clone, Copy)]
pub struct LinearIvResidual {
    pub y_col: usize,
    pub d_col: usize,
}

impl MomentFunction for LinearIvResidual {
    fn theta_dim(&self) -> usize {
        1
    }
    fn dim_m(&self) -> usize {
        1
    }
    fn eval(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
        out[0] = row[self.y_col] - theta[0] * row[self.d_col];
    }
    fn jacobian_theta(&self, _theta: &[f64], row: &[f64], out: &mut [f64]) {
        out[0] = -row[self.d_col];
    }
}

pub type ScalarOracle = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Conditioning structure for E[m(X, theta) | Z] = 0 restrictions, with
/// optional closed-form oracles for simulation designs. Oracles are
/// stated at the design's true theta.
#[derive(Clone)]
pub struct ConditionalDesign {
    /// Column of the scalar instrument z.
    pub z_col: usize,
    /// E[dm/dtheta | Z = z].
    pub d_mean: Option<ScalarOracle>,
    /// E[m^2 | Z = z] at the true theta.
    pub m_var: Option<ScalarOracle>,
    /// Marginal density of Z, for quadrature.
    pub z_pdf: Option<ScalarOracle>,
    /// Quadrature range covering essentially all Z mass.
    pub z_range: (f64, f64),
}

impl ConditionalDesign {
    pub fn bare(z_col: usize) -> Self {
        ConditionalDesign {
            z_col,
            d_mean: None,
            m_var: None,
            z_pdf: None,
            z_range: (-8.0, 8.0),
        }
    }

    pub fn oracle(
        &self,
        which: &str,
    ) -> Result<&ScalarOracle> {
        let o = match which {
            "d_mean" => &self.d_mean,
            "m_var" => &self.m_var,
            "z_pdf" => &self.z_pdf,
            _ => return Err(Error::invalid(format!("unknown oracle '{which}'"))),
        };
        o.as_ref()
            .ok_or_else(|| Error::invalid(format!("design lacks oracle '{which}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_moment_and_jacobian() {
        let m = MeanMoment { dim: 2, y_start: 0 };
        let mut out = [0.0; 2];
        m.eval(&[0.5, -0.5], &[1.0, 2.0], &mut out);
        assert_eq!(out, [0.5, 2.5]);
        let mut jac = [9.0; 4];
        m.jacobian_theta(&[0.5, -0.5], &[1.0, 2.0], &mut jac);
        assert_eq!(jac, [-1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn iv_residual_jacobian_matches_default_fd() {
        let m = LinearIvResidual { y_col: 0, d_col: 1 };
        let row = [1.3, -0.7];
        let theta = [0.4];
        let mut analytic = [0.0];
        m.jacobian_theta(&theta, &row, &mut analytic);

        struct FdOnly(LinearIvResidual);
        impl MomentFunction for FdOnly {
            fn theta_dim(&self) -> usize {
                1
            }
            fn dim_m(&self) -> usize {
                1
            }
            fn eval(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
                self.0.eval(theta, row, out)
            }
        }
        let mut fd = [0.0];
        FdOnly(m).jacobian_theta(&theta, &row, &mut fd);
        assert!((analytic[0] - fd[0]).abs() < 1e-7);
    }
}
