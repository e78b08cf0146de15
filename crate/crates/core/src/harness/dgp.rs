//! Simulation designs with closed-form oracles.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::divergences::DivergenceFamily;
use crate::error::{Error, Result};
use crate::estimators::moments::ConditionalDesign;
use crate::rng::{derive_seed, rng_from, Rng};

/// A fixed small MDP with deterministic rewards and transitions derived
/// from an internal hash, plus the soft-Bellman oracle from value
/// iteration: V*(s) = logsumexp_a [R(s,a) + beta E[V*(s')|s,a]].
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub beta: f64,
    /// R(s,a), s-major, in [0, 1].
    pub reward: Vec<f64>,
    /// P(s'|s,a), indexed [(s*n_actions + a) * n_states + s'].
    pub trans: Vec<f64>,
}

impl TabularMdp {
    pub fn fixed(n_states: usize, n_actions: usize, beta: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("state and action counts must be positive"));
        }
        if !(0.0 < beta && beta < 1.0) {
            return Err(Error::invalid("discount must lie in (0, 1)"));
        }
        let unit = |tag: u64| -> f64 {
            // Deterministic pseudo-uniform in (0, 1).
            (derive_seed(MDP_BASE, &[tag]) >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut reward = Vec::with_capacity(n_states * n_actions);
        let mut trans = Vec::with_capacity(n_states * n_actions * n_states);
        for s in 0..n_states {
            for a in 0..n_actions {
                let cell = (s * n_actions + a) as u64;
                reward.push(unit(cell));
                let mut row: Vec<f64> = (0..n_states)
                    .map(|sp| 0.2 + unit(cell * 1024 + sp as u64 + 7))
                    .collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                trans.extend(row);
            }
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            beta,
            reward,
            trans,
        })
    }

    fn q_value(&self, v: &[f64], s: usize, a: usize) -> f64 {
        let base = (s * self.n_actions + a) * self.n_states;
        let cont: f64 = (0..self.n_states)
            .map(|sp| self.trans[base + sp] * v[sp])
            .sum();
        self.reward[s * self.n_actions + a] + self.beta * cont
    }

    /// Soft value iteration to the regularized Bellman fixed point.
    /// Returns (V*, log pi*) with log pi* stored s-major.
    pub fn value_iteration(&self) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; self.n_states];
        loop {
            let mut next = vec![0.0; self.n_states];
            let mut delta = 0.0f64;
            for s in 0..self.n_states {
                let qs: Vec<f64> = (0..self.n_actions).map(|a| self.q_value(&v, s, a)).collect();
                let hi = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = hi + qs.iter().map(|q| (q - hi).exp()).sum::<f64>().ln();
                next[s] = lse;
                delta = delta.max((lse - v[s]).abs());
            }
            v = next;
            if delta < 1e-13 {
                break;
            }
        }
        let mut log_pi = vec![0.0; self.n_states * self.n_actions];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                log_pi[s * self.n_actions + a] = self.q_value(&v, s, a) - v[s];
            }
        }
        (v, log_pi)
    }

    /// Max over (s, a) of |R + beta E[V|s,a] - V(s) - log pi(a|s)|.
    pub fn bellman_residual(&self, v: &[f64], log_pi: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let r = self.q_value(v, s, a) - v[s] - log_pi[s * self.n_actions + a];
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    fn sample_next(&self, s: usize, a: usize, rng: &mut Rng) -> usize {
        let base = (s * self.n_actions + a) * self.n_states;
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        for sp in 0..self.n_states {
            acc += self.trans[base + sp];
            if u < acc {
                return sp;
            }
        }
        self.n_states - 1
    }
}

const MDP_BASE: u64 = 0x5EED_0000_0000_0001;

#[derive(Clone)]
pub enum DgpSpec {
    /// y ~ N(mu, sigma^2).
    GaussianLocation { mu: f64, sigma: f64 },
    /// y ~ N(mu, I), one column per coordinate.
    UnconditionalMoment { mu: Vec<f64> },
    /// z ~ N(0,1), d = -z + 0.5 v, y = theta d + sigma(z) u with
    /// sigma^2(z) = 1 + z^2 (or 1 under the homoskedastic control).
    LinearIvHeteroskedastic { theta: f64, homoskedastic: bool },
    /// z ~ N(0,1), x = z + 0.3 v, y = sin(x) + u with E[u|z] = 0.
    NonparamIv,
    /// Uniform behavior draws (s, a) with s' from the fixed MDP.
    TabularMdp {
        n_states: usize,
        n_actions: usize,
        beta: f64,
    },
    /// x ~ N(0,1), y = 1 + 0.5 x + 0.3 u; functional E[g(x)].
    RieszMean,
    /// x ~ N(0,1), y = sin(x) + 0.3 u; functional E[g'(x)],
    /// representer theta*(x) = x, phi* = E[cos x] = e^{-1/2}.
    RieszDerivative,
}

impl DgpSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DgpSpec::GaussianLocation { .. } => "gaussian_location",
            DgpSpec::UnconditionalMoment { .. } => "unconditional_moment",
            DgpSpec::LinearIvHeteroskedastic { .. } => "linear_iv_heteroskedastic",
            DgpSpec::NonparamIv => "nonparam_iv",
            DgpSpec::TabularMdp { .. } => "tabular_mdp",
            DgpSpec::RieszMean => "riesz_mean",
            DgpSpec::RieszDerivative => "riesz_derivative",
        }
    }

    pub fn parse(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        match name {
            "gaussian_location" => Ok(DgpSpec::GaussianLocation {
                mu: get("mu", 1.0),
                sigma: get("sigma", 1.0),
            }),
            "unconditional_moment" => {
                let dim = get("dim", 1.0) as usize;
                let mu = get("mu", 0.3);
                Ok(DgpSpec::UnconditionalMoment {
                    mu: vec![mu; dim.max(1)],
                })
            }
            "linear_iv_heteroskedastic" => Ok(DgpSpec::LinearIvHeteroskedastic {
                theta: get("theta", 1.0),
                homoskedastic: get("homoskedastic", 0.0) != 0.0,
            }),
            "nonparam_iv" => Ok(DgpSpec::NonparamIv),
            "tabular_mdp" => Ok(DgpSpec::TabularMdp {
                n_states: get("n_states", 5.0) as usize,
                n_actions: get("n_actions", 3.0) as usize,
                beta: get("beta", 0.5),
            }),
            "riesz_mean" => Ok(DgpSpec::RieszMean),
            "riesz_derivative" => Ok(DgpSpec::RieszDerivative),
            other => Err(Error::invalid(format!("unknown design name: {other}"))),
        }
    }

    pub fn theta_star(&self) -> Option<Vec<f64>> {
        match self {
            DgpSpec::GaussianLocation { mu, .. } => Some(vec![*mu]),
            DgpSpec::UnconditionalMoment { mu } => Some(mu.clone()),
            DgpSpec::LinearIvHeteroskedastic { theta, .. } => Some(vec![*theta]),
            _ => None,
        }
    }

    /// Conditional design oracles for the IV family.
    pub fn design(&self) -> Option<ConditionalDesign> {
        match self {
            DgpSpec::LinearIvHeteroskedastic { homoskedastic, .. } => {
                let norm_pdf =
                    |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let homo = *homoskedastic;
                Some(ConditionalDesign {
                    z_col: 2,
                    // E[d m/d theta | z] = E[-d | z] = z.
                    d_mean: Some(Arc::new(|z| z)),
                    m_var: Some(Arc::new(move |z| if homo { 1.0 } else { 1.0 + z * z })),
                    z_pdf: Some(Arc::new(norm_pdf)),
                    z_range: (-8.0, 8.0),
                })
            }
            _ => None,
        }
    }

    pub fn mdp(&self) -> Option<Result<TabularMdp>> {
        match self {
            DgpSpec::TabularMdp {
                n_states,
                n_actions,
                beta,
            } => Some(TabularMdp::fixed(*n_states, *n_actions, *beta)),
            _ => None,
        }
    }

    /// Closed-form f-divergence between N(mu* + delta, s^2) and
    /// N(mu*, s^2) for the location design.
    pub fn gaussian_divergence_oracle(family: DivergenceFamily, delta: f64, sigma: f64) -> Result<f64> {
        let d2 = (delta / sigma).powi(2);
        match family {
            DivergenceFamily::KullbackLeibler | DivergenceFamily::ReverseKl => Ok(d2 / 2.0),
            DivergenceFamily::ChiSquared => Ok(d2.exp() - 1.0),
            DivergenceFamily::SquaredHellinger => Ok(2.0 * (1.0 - (-d2 / 8.0).exp())),
            _ => Err(Error::invalid(
                "no closed-form location divergence for this family",
            )),
        }
    }

    /// True value of the functional in the representer designs.
    pub fn functional_truth(&self) -> Option<f64> {
        match self {
            // E[1 + 0.5 x] under N(0,1).
            DgpSpec::RieszMean => Some(1.0),
            // E[cos x] under N(0,1).
            DgpSpec::RieszDerivative => Some((-0.5f64).exp()),
            _ => None,
        }
    }
}

pub fn generate(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let mut rng = rng_from(seed, &[0xD9]);
    let normal = |rng: &mut Rng| rng.sample::<f64, _>(StandardNormal);
    match dgp {
        DgpSpec::GaussianLocation { mu, sigma } => {
            if *sigma <= 0.0 {
                return Err(Error::invalid("sigma must be positive"));
            }
            Dataset::from_scalars((0..n).map(|_| mu + sigma * normal(&mut rng)).collect())
        }
        DgpSpec::UnconditionalMoment { mu } => {
            let d = mu.len();
            let rows = (0..n)
                .map(|_| mu.iter().map(|m| m + normal(&mut rng)).collect())
                .collect();
            Dataset::new(rows, vec![("y", 0..d)])
        }
        DgpSpec::LinearIvHeteroskedastic {
            theta,
            homoskedastic,
        } => {
            let rows = (0..n)
                .map(|_| {
                    let z = normal(&mut rng);
                    let d = -z + 0.5 * normal(&mut rng);
                    let sd = if *homoskedastic {
                        1.0
                    } else {
                        (1.0 + z * z).sqrt()
                    };
                    let y = theta * d + sd * normal(&mut rng);
                    vec![y, d, z]
                })
                .collect();
            Dataset::new(rows, vec![("y", 0..1), ("d", 1..2), ("z", 2..3)])
        }
        DgpSpec::NonparamIv => {
            let rows = (0..n)
                .map(|_| {
                    let z = normal(&mut rng);
                    let x = z + 0.3 * normal(&mut rng);
                    let y = x.sin() + 0.5 * normal(&mut rng);
                    vec![y, x, z]
                })
                .collect();
            Dataset::new(rows, vec![("y", 0..1), ("x", 1..2), ("z", 2..3)])
        }
        DgpSpec::TabularMdp { .. } => {
            let mdp = self_mdp(dgp)?;
            let rows = (0..n)
                .map(|_| {
                    let s = rng.gen_range(0..mdp.n_states);
                    let a = rng.gen_range(0..mdp.n_actions);
                    let sp = mdp.sample_next(s, a, &mut rng);
                    vec![s as f64, a as f64, sp as f64]
                })
                .collect();
            Dataset::new(rows, vec![("s", 0..1), ("a", 1..2), ("s_plus", 2..3)])
        }
        DgpSpec::RieszMean => {
            let rows = (0..n)
                .map(|_| {
                    let x = normal(&mut rng);
                    vec![x, 1.0 + 0.5 * x + 0.3 * normal(&mut rng)]
                })
                .collect();
            Dataset::new(rows, vec![("x", 0..1), ("y", 1..2)])
        }
        DgpSpec::RieszDerivative => {
            let rows = (0..n)
                .map(|_| {
                    let x = normal(&mut rng);
                    vec![x, x.sin() + 0.3 * normal(&mut rng)]
                })
                .collect();
            Dataset::new(rows, vec![("x", 0..1), ("y", 1..2)])
        }
    }
}

fn self_mdp(dgp: &DgpSpec) -> Result<TabularMdp> {
    dgp.mdp().expect("tabular design")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let dgp = DgpSpec::GaussianLocation { mu: 0.0, sigma: 1.0 };
        let a = generate(&dgp, 50, 7).unwrap();
        let b = generate(&dgp, 50, 7).unwrap();
        assert_eq!(a.rows(), b.rows());
        let c = generate(&dgp, 50, 8).unwrap();
        assert_ne!(a.rows(), c.rows());
    }

    #[test]
    fn iv_design_satisfies_conditional_restriction_in_bins() {
        let theta = 1.0;
        let dgp = DgpSpec::LinearIvHeteroskedastic {
            theta,
            homoskedastic: false,
        };
        let data = generate(&dgp, 60_000, 11).unwrap();
        // Bin z and check the binned residual mean is ~ 0.
        let edges = [-1.0, 0.0, 1.0];
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for row in data.rows() {
            let (y, d, z) = (row[0], row[1], row[2]);
            let b = edges.iter().filter(|e| z > **e).count();
            sums[b] += y - theta * d;
            counts[b] += 1;
        }
        for b in 0..4 {
            let m = sums[b] / counts[b] as f64;
            assert!(m.abs() < 0.05, "bin {b}: {m}");
        }
    }

    #[test]
    fn value_iteration_hits_the_regularized_fixed_point() {
        let mdp = TabularMdp::fixed(5, 3, 0.5).unwrap();
        let (v, log_pi) = mdp.value_iteration();
        assert!(mdp.bellman_residual(&v, &log_pi) < 1e-8);
        // log pi rows are normalized distributions.
        for s in 0..5 {
            let total: f64 = (0..3).map(|a| log_pi[s * 3 + a].exp()).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
        // Rewards live in [0, 1] by construction.
        assert!(mdp.reward.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn mdp_sampler_matches_transition_oracle() {
        let dgp = DgpSpec::TabularMdp {
            n_states: 5,
            n_actions: 3,
            beta: 0.5,
        };
        let mdp = dgp.mdp().unwrap().unwrap();
        let data = generate(&dgp, 120_000, 3).unwrap();
        let mut counts = vec![0usize; 5 * 3 * 5];
        let mut cell = vec![0usize; 5 * 3];
        for row in data.rows() {
            let (s, a, sp) = (row[0] as usize, row[1] as usize, row[2] as usize);
            counts[(s * 3 + a) * 5 + sp] += 1;
            cell[s * 3 + a] += 1;
        }
        for sa in 0..15 {
            for sp in 0..5 {
                let p_hat = counts[sa * 5 + sp] as f64 / cell[sa] as f64;
                assert!((p_hat - mdp.trans[sa * 5 + sp]).abs() < 0.02);
            }
        }
    }

    #[test]
    fn divergence_oracles_at_zero_distance_vanish() {
        for fam in [
            DivergenceFamily::KullbackLeibler,
            DivergenceFamily::ChiSquared,
            DivergenceFamily::SquaredHellinger,
        ] {
            assert_eq!(DgpSpec::gaussian_divergence_oracle(fam, 0.0, 1.0).unwrap(), 0.0);
        }
        let kl = DgpSpec::gaussian_divergence_oracle(
            DivergenceFamily::KullbackLeibler,
            1.0,
            1.0,
        )
        .unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unknown_design_rejected() {
        assert!(DgpSpec::parse("mystery", &BTreeMap::new()).is_err());
    }
}
