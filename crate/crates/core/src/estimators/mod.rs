//! The concrete saddle-loss families and their closed forms.

pub mod cmr;
pub mod fgan;
pub mod gel;
pub mod moments;
pub mod riesz;
pub mod sbeed;

pub use cmr::{CmrLoss, ConditionalGelLoss};
pub use fgan::{analytic_dual_estimate, FganLoss};
pub use gel::{cue_objective, gmm_lambda_star, GelLoss};
pub use moments::{
    ConditionalDesign, LinearIvResidual, LocationScaleMoment, MeanMoment, MomentFunction,
};
pub use riesz::{orthogonalized_functional, RieszFunctional, RieszLoss, RieszProblem};
pub use sbeed::{MdpBatch, SbeedLoss};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Maximize beta' rhs - 1/2 beta' G beta, the common shape of every
/// analytic inner adversary that is linear in its coordinates. Callers
/// accumulate rhs and G row by row; scaling by n cancels.
pub(crate) fn solve_quadratic_argmax(
    rhs: DVector<f64>,
    mut g: DMatrix<f64>,
    ridge: f64,
) -> Result<Vec<f64>> {
    let dim = rhs.len();
    if ridge > 0.0 {
        for i in 0..dim {
            g[(i, i)] += ridge;
        }
    }
    let chol = g.clone().cholesky();
    let sol = match chol {
        Some(c) => {
            // A pivot collapsing relative to the largest one means rank
            // deficiency that the factorization survived numerically.
            let diag = c.l_dirty();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..dim {
                lo = lo.min(diag[(i, i)].abs());
                hi = hi.max(diag[(i, i)].abs());
            }
            if lo <= 1e-7 * hi {
                return Err(Error::SingularWeighting);
            }
            c.solve(&rhs)
        }
        None => g
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularWeighting)?,
    };
    Ok(sol.iter().copied().collect())
}

/// Default ridge for weighting-matrix inversions: tiny and
/// trace-proportional so it is scale free.
pub(crate) fn default_ridge(g: &DMatrix<f64>) -> f64 {
    1e-10 * g.trace() / g.nrows() as f64
}

/// Whether `eval` is linear in the sieve coordinates, so the adversary
/// matrix below is coordinate-independent and closed-form inner maxima
/// apply.
pub(crate) fn linear_in_coords(sieve: &crate::sieves::Sieve) -> bool {
    !matches!(sieve.kind(), crate::sieves::SieveKind::Network { .. })
}

/// d(lambda values)/d(coords) at input `x`, row-major
/// `output_dim x dim`, for sieves linear in their coordinates.
pub(crate) fn linear_lambda_matrix(
    sieve: &crate::sieves::Sieve,
    zeros: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    let (q, d) = (sieve.output_dim(), sieve.dim());
    let mut u = vec![0.0; q * d];
    let mut upstream = vec![0.0; q];
    for o in 0..q {
        upstream[o] = 1.0;
        sieve.grad_coords(zeros, x, &upstream, &mut u[o * d..(o + 1) * d])?;
        upstream[o] = 0.0;
    }
    Ok(u)
}
