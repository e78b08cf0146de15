//! Plug-in asymptotic inference for certified saddle solutions.
//!
//! The concentrated objective Q(theta) = sup_lambda empirical loss drives
//! everything: its Hessian is the inner-product matrix, the representer
//! v* of a linear functional solves M v* = zeta, and the variance is the
//! sample variance of per-row pathwise derivatives along v* taken through
//! the adversary's best response.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::moments::ConditionalDesign;
use crate::saddle::{local_optimize, mean_loss, Objective, SaddleLoss};
use crate::sieves::Sieve;

/// A direction in a coordinate space, either a basis vector or explicit.
#[derive(Debug, Clone)]
pub enum Direction {
    Coordinate(usize),
    Vector(Vec<f64>),
}

impl Direction {
    pub fn resolve(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            Direction::Coordinate(i) => {
                if *i >= dim {
                    return Err(Error::invalid(format!(
                        "direction coordinate {i} out of range for dim {dim}"
                    )));
                }
                let mut v = vec![0.0; dim];
                v[*i] = 1.0;
                Ok(v)
            }
            Direction::Vector(v) => {
                if v.len() != dim {
                    return Err(Error::invalid(format!(
                        "direction has dim {}, expected {dim}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("direction must be finite"));
                }
                Ok(v.clone())
            }
        }
    }
}

fn scale_h(at: &[f64], base: f64) -> f64 {
    base * (1.0 + at.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Directional derivative of `f` at `at` by central differences, with an
/// optional Richardson extrapolation of the step.
pub fn pathwise_derivative<F: Fn(&[f64]) -> Result<f64>>(
    f: F,
    at: &[f64],
    dir: &[f64],
    richardson: bool,
) -> Result<f64> {
    let h = scale_h(at, 1e-4);
    let central = |h: f64| -> Result<f64> {
        let probe = |s: f64| -> Result<f64> {
            let p: Vec<f64> = at.iter().zip(dir).map(|(a, d)| a + s * d).collect();
            let v = f(&p)?;
            if !v.is_finite() {
                return Err(Error::numerical("non-finite probe in pathwise derivative", 0));
            }
            Ok(v)
        };
        Ok((probe(h)? - probe(-h)?) / (2.0 * h))
    };
    let d_h = central(h)?;
    if !richardson {
        return Ok(d_h);
    }
    let d_half = central(0.5 * h)?;
    // O(h^2) error cancellation: (4 D_{h/2} - D_h) / 3.
    Ok((4.0 * d_half - d_h) / 3.0)
}

/// The adversary's empirical best response at `theta`: closed form when
/// the loss registers one, local ascent from the hint otherwise.
fn best_response<L: SaddleLoss + ?Sized>(
    loss: &L,
    theta: &[f64],
    lambda_hint: &[f64],
    data: &Dataset,
    lambda_space: &Sieve,
) -> Result<Vec<f64>> {
    match loss.inner_argmax(theta, data, lambda_space) {
        Some(res) => res,
        None => Ok(local_optimize(
            loss,
            data,
            lambda_space,
            lambda_hint,
            theta,
            false,
            Objective::Maximize,
            300,
            0.05,
        )?
        .0),
    }
}

/// sup over the adversary space of the empirical objective at `theta`.
pub fn concentrated_objective<L: SaddleLoss + ?Sized>(
    loss: &L,
    theta: &[f64],
    lambda_hint: &[f64],
    data: &Dataset,
    lambda_space: &Sieve,
) -> Result<f64> {
    let lambda = best_response(loss, theta, lambda_hint, data, lambda_space)?;
    mean_loss(loss, theta, &lambda, data)
}

/// Matrix of second central differences of the concentrated empirical
/// objective along the given direction pairs, symmetrized. A diagonal
/// entry materially below zero is flagged: the point is not a minimum of
/// the concentrated objective along that direction.
pub fn inner_product_matrix<L: SaddleLoss + ?Sized>(
    loss: &L,
    theta: &[f64],
    lambda_hint: &[f64],
    data: &Dataset,
    lambda_space: &Sieve,
    dirs: &[Direction],
) -> Result<Vec<f64>> {
    let k = dirs.len();
    let basis: Vec<Vec<f64>> = dirs
        .iter()
        .map(|d| d.resolve(theta.len()))
        .collect::<Result<_>>()?;
    let h = scale_h(theta, 1e-4);
    let q = |steps: &[(usize, f64)]| -> Result<f64> {
        let mut p = theta.to_vec();
        for (idx, s) in steps {
            for (pi, di) in p.iter_mut().zip(&basis[*idx]) {
                *pi += s * h * di;
            }
        }
        concentrated_objective(loss, &p, lambda_hint, data, lambda_space)
    };
    let q0 = q(&[])?;
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        let v = (q(&[(i, 1.0)])? - 2.0 * q0 + q(&[(i, -1.0)])?) / (h * h);
        if v < -1e-4 * (1.0 + q0.abs()) {
            return Err(Error::numerical(
                "concentrated objective is concave along a direction",
                i,
            ));
        }
        m[i * k + i] = v;
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let v = (q(&[(i, 1.0), (j, 1.0)])? - q(&[(i, 1.0), (j, -1.0)])?
                - q(&[(i, -1.0), (j, 1.0)])?
                + q(&[(i, -1.0), (j, -1.0)])?)
                / (4.0 * h * h);
            m[i * k + j] = v;
            m[j * k + i] = v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct VarianceReport {
    /// Asymptotic variance of sqrt(n) times the functional estimate.
    pub v_hat: f64,
    /// Concentrated Hessian on the parametric block, row-major.
    pub inner_product_m: Vec<f64>,
    /// Per-row pathwise derivatives along the representer.
    pub score_samples: Vec<f64>,
    /// The functional estimate zeta' theta-hat.
    pub estimate: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub n: usize,
}

const Z_975: f64 = 1.959963984540054;

/// Variance of a linear functional zeta' theta via its representer:
/// v* solves M v* = zeta, and V-hat is the sample variance of the per-row
/// loss derivative along v*, evaluated through the adversary's best
/// response so the nuisance direction is included.
pub fn variance_estimate<L: SaddleLoss + ?Sized>(
    loss: &L,
    theta: &[f64],
    lambda: &[f64],
    data: &Dataset,
    lambda_space: &Sieve,
    functional_dir: &Direction,
) -> Result<VarianceReport> {
    let dt = theta.len();
    let zeta = functional_dir.resolve(dt)?;
    let n = data.n();
    let estimate: f64 = zeta.iter().zip(theta).map(|(z, t)| z * t).sum();
    let coord_dirs: Vec<Direction> = (0..dt).map(Direction::Coordinate).collect();
    let m = inner_product_matrix(loss, theta, lambda, data, lambda_space, &coord_dirs)?;
    if zeta.iter().all(|z| *z == 0.0) {
        return Ok(VarianceReport {
            v_hat: 0.0,
            inner_product_m: m,
            score_samples: vec![0.0; n],
            estimate,
            se: 0.0,
            ci: (estimate, estimate),
            n,
        });
    }
    let m_mat = DMatrix::from_row_slice(dt, dt, &m);
    let v_star: DVector<f64> = m_mat
        .lu()
        .solve(&DVector::from_column_slice(&zeta))
        .ok_or(Error::SingularInformation)?;

    // Per-row derivative along v*, through the best-response map.
    let h = scale_h(theta, 1e-4);
    let probe = |s: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let t: Vec<f64> = theta
            .iter()
            .zip(v_star.iter())
            .map(|(a, v)| a + s * h * v)
            .collect();
        let l = best_response(loss, &t, lambda, data, lambda_space)?;
        Ok((t, l))
    };
    let (t_up, l_up) = probe(1.0)?;
    let (t_dn, l_dn) = probe(-1.0)?;
    let mut scores = Vec::with_capacity(n);
    let mut mean = 0.0;
    for row in data.rows() {
        let s = (loss.eval(&t_up, &l_up, row)? - loss.eval(&t_dn, &l_dn, row)?) / (2.0 * h);
        mean += s;
        scores.push(s);
    }
    mean /= n as f64;
    let v_hat = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    if !v_hat.is_finite() {
        return Err(Error::numerical("variance estimate is not finite", 0));
    }
    let se = (v_hat / n as f64).sqrt();
    Ok(VarianceReport {
        v_hat,
        inner_product_m: m,
        score_samples: scores,
        estimate,
        se,
        ci: (estimate - Z_975 * se, estimate + Z_975 * se),
        n,
    })
}

/// Max absolute entry, over perturbations and theta coordinates, of the
/// epsilon-derivative of the total theta-gradient when the adversary is
/// perturbed by epsilon * delta around lambda-hat.
///
/// "Total" means the gradient of theta -> l(theta, nu(theta)) with the
/// best-response slope d nu / d theta held fixed while nu is perturbed;
/// for losses without a registered inner maximizer the slope is zero and
/// this reduces to the plain cross partial (the bilinear control gives 1).
pub fn neyman_orthogonality_check<L: SaddleLoss + ?Sized>(
    loss: &L,
    theta: &[f64],
    lambda: &[f64],
    data: &Dataset,
    lambda_space: &Sieve,
    perturbations: &[Direction],
    h: f64,
) -> Result<f64> {
    let (dt, dl) = (theta.len(), lambda.len());
    if h <= 0.0 {
        return Err(Error::invalid("step h must be positive"));
    }
    // Best-response slope S = d lambda* / d theta at theta-hat, or zero.
    let mut slope: Option<Vec<Vec<f64>>> = None;
    if loss.inner_argmax(theta, data, lambda_space).is_some() {
        let ht = scale_h(theta, 1e-5);
        let mut cols = Vec::with_capacity(dt);
        let mut p = theta.to_vec();
        for j in 0..dt {
            let orig = p[j];
            p[j] = orig + ht;
            let up = loss.inner_argmax(&p, data, lambda_space).unwrap()?;
            p[j] = orig - ht;
            let dn = loss.inner_argmax(&p, data, lambda_space).unwrap()?;
            p[j] = orig;
            cols.push(
                up.iter()
                    .zip(&dn)
                    .map(|(u, d)| (u - d) / (2.0 * ht))
                    .collect::<Vec<f64>>(),
            );
        }
        slope = Some(cols);
    }
    // phi(lambda): gradient of the profiled objective at fixed slope.
    let phi = |l: &[f64]| -> Result<Vec<f64>> {
        let gt = loss.grad_theta_batch(theta, l, data)?;
        let mut out = gt;
        if let Some(cols) = &slope {
            let gl = loss.grad_lambda_batch(theta, l, data)?;
            for (j, col) in cols.iter().enumerate() {
                out[j] += col.iter().zip(&gl).map(|(s, g)| s * g).sum::<f64>();
            }
        }
        Ok(out)
    };
    let mut worst = 0.0f64;
    for pert in perturbations {
        let delta = pert.resolve(dl)?;
        let shifted = |s: f64| -> Result<Vec<f64>> {
            let l: Vec<f64> = lambda.iter().zip(&delta).map(|(a, d)| a + s * d).collect();
            phi(&l)
        };
        let up = shifted(h)?;
        let dn = shifted(-h)?;
        for (u, d) in up.iter().zip(&dn) {
            worst = worst.max(((u - d) / (2.0 * h)).abs());
        }
    }
    Ok(worst)
}

/// Population variance formulas for a scalar conditional-moment design,
/// by Simpson quadrature over the design's oracles: the
/// unweighted-instrument sandwich, the formula as printed (inverse of the
/// unweighted second moment of the scaled score), and the efficiency
/// bound.
#[derive(Debug, Clone, Copy)]
pub struct CmrVariances {
    pub sandwich: f64,
    pub prop_literal: f64,
    pub efficient: f64,
}

pub fn cmr_variance_formulas(design: &ConditionalDesign) -> Result<CmrVariances> {
    let d_mean = design.oracle("d_mean")?;
    let m_var = design.oracle("m_var")?;
    let z_pdf = design.oracle("z_pdf")?;
    let (lo, hi) = design.z_range;
    if !(hi > lo) {
        return Err(Error::invalid("z_range must be a nonempty interval"));
    }
    let steps = 4000usize; // even
    let dz = (hi - lo) / steps as f64;
    let (mut i_ds, mut i_dd, mut i_dw) = (0.0, 0.0, 0.0);
    for k in 0..=steps {
        let z = lo + k as f64 * dz;
        let w = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = d_mean(z);
        let s = m_var(z);
        if s <= 0.0 {
            return Err(Error::invalid("conditional variance oracle must be positive"));
        }
        let p = z_pdf(z);
        i_ds += w * d * d * s * p;
        i_dd += w * d * d * p;
        i_dw += w * d * d / s * p;
    }
    let c = dz / 3.0;
    let (i_ds, i_dd, i_dw) = (c * i_ds, c * i_dd, c * i_dw);
    if i_dd < 1e-12 || i_dw < 1e-12 || i_ds < 1e-12 {
        return Err(Error::SingularDesign);
    }
    Ok(CmrVariances {
        sandwich: i_ds / (i_dd * i_dd),
        prop_literal: 1.0 / i_ds,
        efficient: 1.0 / i_dw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::{DivergenceFamily, FDivergence};
    use crate::estimators::moments::MeanMoment;
    use crate::estimators::{gmm_lambda_star, GelLoss};
    use crate::rng::rng_from;
    use crate::saddle::BilinearLoss;
    use rand::Rng as _;
    use std::sync::Arc;

    fn cue_mean_loss() -> GelLoss {
        GelLoss::new(
            FDivergence::raw(DivergenceFamily::ChiSquared),
            Arc::new(MeanMoment::scalar()),
        )
    }

    fn sample(n: usize, seed: u64) -> (Dataset, f64, f64) {
        let mut rng = rng_from(seed, &[]);
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) + 0.2).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        (Dataset::from_scalars(ys).unwrap(), mean, var)
    }

    fn lspace() -> Sieve {
        Sieve::euclidean("l", vec![(-5.0, 5.0)]).unwrap()
    }

    #[test]
    fn pathwise_derivative_on_quadratic_and_affine() {
        // f = theta' A theta with A = [[1, 2], [2, 5]]: gradient (2A theta).
        let f = |p: &[f64]| {
            Ok(p[0] * p[0] + 4.0 * p[0] * p[1] + 5.0 * p[1] * p[1])
        };
        let at = [0.3, -0.7];
        let d1 = pathwise_derivative(&f, &at, &[1.0, 0.0], false).unwrap();
        assert!((d1 - (2.0 * at[0] + 4.0 * at[1])).abs() < 1e-6);
        // Zero direction.
        assert_eq!(pathwise_derivative(&f, &at, &[0.0, 0.0], true).unwrap(), 0.0);
        // Affine map: central difference exact.
        let g = |p: &[f64]| Ok(3.0 * p[0] - 2.0);
        let d = pathwise_derivative(&g, &[10.0], &[1.0], false).unwrap();
        assert!((d - 3.0).abs() < 1e-9);
        // Richardson does not degrade a smooth derivative.
        let s = |p: &[f64]| Ok(p[0].sin());
        let plain = pathwise_derivative(&s, &[1.0], &[1.0], false).unwrap();
        let rich = pathwise_derivative(&s, &[1.0], &[1.0], true).unwrap();
        let exact = 1.0f64.cos();
        assert!((rich - exact).abs() <= (plain - exact).abs() + 1e-13);
    }

    #[test]
    fn concentrated_curvature_of_cue_mean_model() {
        let (data, mean, var) = sample(300, 3);
        let loss = cue_mean_loss();
        let dirs = [Direction::Coordinate(0)];
        let m = inner_product_matrix(&loss, &[mean], &[0.0], &data, &lspace(), &dirs).unwrap();
        let want = 2.0 / var;
        assert!((m[0] - want).abs() < 1e-3 * want, "{} vs {want}", m[0]);
    }

    #[test]
    fn indefinite_point_is_flagged() {
        // At a concentrated maximum the diagonal curvature is negative.
        struct Hump;
        impl SaddleLoss for Hump {
            fn theta_dim(&self) -> usize {
                1
            }
            fn lambda_dim(&self) -> usize {
                1
            }
            fn eval(&self, t: &[f64], _l: &[f64], _y: &[f64]) -> Result<f64> {
                Ok(-t[0] * t[0])
            }
            fn inner_argmax(&self, _t: &[f64], _d: &Dataset, _s: &Sieve) -> Option<Result<Vec<f64>>> {
                Some(Ok(vec![0.0]))
            }
        }
        let data = Dataset::from_scalars(vec![0.0; 3]).unwrap();
        let err = inner_product_matrix(
            &Hump,
            &[0.0],
            &[0.0],
            &data,
            &lspace(),
            &[Direction::Coordinate(0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NumericalFailure { .. }));
    }

    #[test]
    fn sandwich_variance_of_cue_mean_is_sample_variance() {
        let (data, mean, var) = sample(400, 5);
        let loss = cue_mean_loss();
        let lam = gmm_lambda_star(loss.moment().as_ref(), &[mean], &data, None).unwrap();
        let rep = variance_estimate(
            &loss,
            &[mean],
            &lam,
            &data,
            &lspace(),
            &Direction::Coordinate(0),
        )
        .unwrap();
        assert!((rep.v_hat - var).abs() < 1e-3 * var, "{} vs {var}", rep.v_hat);
        assert!((rep.se - (var / 400.0).sqrt()).abs() < 1e-6);
        assert!(rep.ci.0 <= rep.estimate && rep.estimate <= rep.ci.1);
    }

    #[test]
    fn zero_functional_direction_degenerates() {
        let (data, mean, _) = sample(50, 7);
        let loss = cue_mean_loss();
        let rep = variance_estimate(
            &loss,
            &[mean],
            &[0.0],
            &data,
            &lspace(),
            &Direction::Vector(vec![0.0]),
        )
        .unwrap();
        assert_eq!(rep.v_hat, 0.0);
        assert_eq!(rep.ci, (rep.estimate, rep.estimate));
    }

    #[test]
    fn variance_invariant_under_row_duplication() {
        let (data, mean, _) = sample(150, 9);
        let doubled = Dataset::new(
            data.rows().iter().chain(data.rows()).cloned().collect(),
            vec![("y", 0..1)],
        )
        .unwrap();
        let loss = cue_mean_loss();
        let lam = gmm_lambda_star(loss.moment().as_ref(), &[mean], &data, None).unwrap();
        let dir = Direction::Coordinate(0);
        let a = variance_estimate(&loss, &[mean], &lam, &data, &lspace(), &dir).unwrap();
        let b = variance_estimate(&loss, &[mean], &lam, &doubled, &lspace(), &dir).unwrap();
        assert!((a.v_hat - b.v_hat).abs() < 1e-8 * (1.0 + a.v_hat));
        // Twice the sample: the standard error shrinks by sqrt(2).
        assert!((a.se / b.se - 2.0f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn bilinear_loss_is_maximally_non_orthogonal() {
        let data = Dataset::from_scalars(vec![0.0; 4]).unwrap();
        let v = neyman_orthogonality_check(
            &BilinearLoss,
            &[0.0],
            &[0.0],
            &data,
            &lspace(),
            &[Direction::Coordinate(0)],
            1e-4,
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn cue_total_gradient_is_orthogonal_at_the_saddle() {
        let (data, mean, _) = sample(200, 11);
        let loss = cue_mean_loss();
        let lam = gmm_lambda_star(loss.moment().as_ref(), &[mean], &data, None).unwrap();
        let v = neyman_orthogonality_check(
            &loss,
            &[mean],
            &lam,
            &data,
            &lspace(),
            &[Direction::Coordinate(0)],
            1e-4,
        )
        .unwrap();
        assert!(v < 1e-4, "{v}");
    }

    #[test]
    fn kl_gel_far_adversary_breaks_orthogonality() {
        // KL registers no closed-form adversary, so the check is the plain
        // cross partial: 1 at the saddle (lambda = 0), and moved away from
        // 1 by the curvature of the conjugate when the adversary is off.
        let (data, mean, _) = sample(200, 13);
        let loss = GelLoss::new(
            FDivergence::normalized(DivergenceFamily::KullbackLeibler).unwrap(),
            Arc::new(MeanMoment::scalar()),
        );
        let near = neyman_orthogonality_check(
            &loss,
            &[mean],
            &[0.0],
            &data,
            &lspace(),
            &[Direction::Coordinate(0)],
            1e-4,
        )
        .unwrap();
        let far = neyman_orthogonality_check(
            &loss,
            &[mean],
            &[1.0],
            &data,
            &lspace(),
            &[Direction::Coordinate(0)],
            1e-4,
        )
        .unwrap();
        assert!((near - 1.0).abs() < 1e-6, "near = {near}");
        assert!((far - near).abs() > 0.3, "near = {near}, far = {far}");
    }

    fn hetero_design() -> ConditionalDesign {
        let norm_pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        ConditionalDesign {
            z_col: 0,
            d_mean: Some(Arc::new(|z| z)),
            m_var: Some(Arc::new(|z| 1.0 + z * z)),
            z_pdf: Some(Arc::new(norm_pdf)),
            z_range: (-8.0, 8.0),
        }
    }

    #[test]
    fn heteroskedastic_design_variance_targets() {
        let v = cmr_variance_formulas(&hetero_design()).unwrap();
        // E[z^2 (1+z^2)] = 4 with E[z^2] = 1.
        assert!((v.sandwich - 4.0).abs() < 1e-6, "{}", v.sandwich);
        assert!((v.prop_literal - 0.25).abs() < 1e-6, "{}", v.prop_literal);
        // 1 / E[z^2 / (1+z^2)] = 1 / (1 - sqrt(pi e / 2) erfc(1/sqrt 2)).
        assert!((v.efficient - 2.904264).abs() < 2e-3, "{}", v.efficient);
        assert!(v.efficient < v.sandwich);
    }

    #[test]
    fn homoskedastic_design_closes_the_gap() {
        let mut d = hetero_design();
        d.m_var = Some(Arc::new(|_| 1.0));
        let v = cmr_variance_formulas(&d).unwrap();
        assert!((v.sandwich - 1.0).abs() < 1e-6);
        assert!((v.efficient - 1.0).abs() < 1e-6);
        assert!((v.prop_literal - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_instrument_collapses_to_unconditional_variance() {
        // d = 1, sigma^2 = 1: all formulas give the unconditional 1.
        let mut d = hetero_design();
        d.d_mean = Some(Arc::new(|_| 1.0));
        d.m_var = Some(Arc::new(|_| 1.0));
        let v = cmr_variance_formulas(&d).unwrap();
        assert!((v.sandwich - 1.0).abs() < 1e-6);
        assert!((v.efficient - 1.0).abs() < 1e-6);
        assert!((v.prop_literal - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_design_rejected() {
        let mut d = hetero_design();
        d.d_mean = Some(Arc::new(|_| 0.0));
        assert!(cmr_variance_formulas(&d).is_err());
        let bare = ConditionalDesign::bare(0);
        assert!(cmr_variance_formulas(&bare).is_err());
    }
}
