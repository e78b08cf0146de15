//! Config-to-experiment translation and CSV emission. Planning errors are
//! configuration mistakes (exit 1); execution errors are numerical (exit 2).

use std::fmt::Write as _;
use std::path::Path;

use aest_core::*;

use std::result::Result;

use crate::config::{Config, ConfigError};

pub enum RunError {
    Config(ConfigError),
    Numerical(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Numerical(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Clone, Copy)]
pub enum Driver {
    Estimate,
    Rates,
    Coverage,
    Efficiency,
    Divergence,
    NashCheck,
}

pub enum DivergenceMode {
    Analytic { n: usize, m_samples: usize },
    Network { n: usize },
    Recovery { n_grid: Vec<usize>, replicas: usize },
}

pub enum Plan {
    Estimate {
        family: EstimatorFamily,
        n: usize,
        seed: u64,
        check_only: bool,
    },
    Rates {
        family: RateFamily,
        n_grid: Vec<usize>,
        replicas: usize,
        seed: u64,
        stride: usize,
    },
    Coverage {
        family: CoverageFamily,
        level: f64,
        replicas: usize,
        n: usize,
        seed: u64,
        stride: usize,
    },
    Efficiency {
        replicas: usize,
        n: usize,
        homoskedastic: bool,
        seed: u64,
        stride: usize,
    },
    Divergence {
        family: DivergenceFamily,
        mode: DivergenceMode,
        delta: f64,
        sigma: f64,
        seed: u64,
    },
}

const DEFAULT_GRID: [usize; 5] = [500, 1000, 2000, 4000, 8000];

fn family_name(cfg: &Config) -> Result<&str, ConfigError> {
    cfg.get("family", "name")
}

fn bad_name(section: &str, key: &str, err: &Error) -> ConfigError {
    ConfigError(format!("{section}.{key}: {err}"))
}

pub fn plan(driver: Driver, cfg: &Config, seed: u64) -> Result<Plan, ConfigError> {
    let stride = cfg.usize_or("experiment", "certify_stride", 0)?;
    match driver {
        Driver::Estimate | Driver::NashCheck => {
            let name = family_name(cfg)?;
            let family =
                EstimatorFamily::parse(name).map_err(|e| bad_name("family", "name", &e))?;
            Ok(Plan::Estimate {
                family,
                n: cfg.usize("experiment", "n")?,
                seed,
                check_only: matches!(driver, Driver::NashCheck),
            })
        }
        Driver::Rates => {
            let name = family_name(cfg)?;
            let family = RateFamily::parse(name).map_err(|e| bad_name("family", "name", &e))?;
            Ok(Plan::Rates {
                family,
                n_grid: cfg.usize_list_or("experiment", "n_grid", &DEFAULT_GRID)?,
                replicas: cfg.usize_or("experiment", "replicas", 50)?,
                seed,
                stride,
            })
        }
        Driver::Coverage => {
            let name = family_name(cfg)?;
            let family =
                CoverageFamily::parse(name).map_err(|e| bad_name("family", "name", &e))?;
            let level = cfg.f64_or("experiment", "level", 0.95)?;
            if !(level > 0.0 && level <= 1.0) {
                return Err(ConfigError(format!(
                    "experiment.level: {level} is not in (0, 1]"
                )));
            }
            Ok(Plan::Coverage {
                family,
                level,
                replicas: cfg.usize_or("experiment", "replicas", 500)?,
                n: cfg.usize("experiment", "n")?,
                seed,
                stride,
            })
        }
        Driver::Efficiency => Ok(Plan::Efficiency {
            replicas: cfg.usize_or("experiment", "replicas", 400)?,
            n: cfg.usize("experiment", "n")?,
            homoskedastic: cfg.bool_or("dgp", "homoskedastic", false)?,
            seed,
            stride,
        }),
        Driver::Divergence => {
            let name = family_name(cfg)?;
            let family =
                DivergenceFamily::parse(name).map_err(|e| bad_name("family", "name", &e))?;
            let mode = match cfg.get_opt("experiment", "mode").unwrap_or("analytic") {
                "analytic" => {
                    let n = cfg.usize("experiment", "n")?;
                    DivergenceMode::Analytic {
                        n,
                        m_samples: cfg.usize_or("experiment", "m_samples", n)?,
                    }
                }
                "network" => DivergenceMode::Network {
                    n: cfg.usize("experiment", "n")?,
                },
                "recovery" => DivergenceMode::Recovery {
                    n_grid: cfg.usize_list_or("experiment", "n_grid", &DEFAULT_GRID)?,
                    replicas: cfg.usize_or("experiment", "replicas", 50)?,
                },
                other => {
                    return Err(ConfigError(format!(
                        "experiment.mode: `{other}` is not analytic, network, or recovery"
                    )))
                }
            };
            Ok(Plan::Divergence {
                family,
                mode,
                delta: cfg.f64_or("experiment", "delta", 1.0)?,
                sigma: cfg.f64_or("experiment", "sigma", 1.0)?,
                seed,
            })
        }
    }
}

fn numerical(e: Error) -> RunError {
    RunError::Numerical(e.to_string())
}

fn require_out(out: Option<&Path>) -> Result<&Path, RunError> {
    out.ok_or_else(|| RunError::Config(ConfigError("--out is required for this command".into())))
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), RunError> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| {
        RunError::Config(ConfigError(format!("cannot write {}: {e}", path.display())))
    })
}

fn sibling(path: &Path, name: &str) -> std::path::PathBuf {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(name),
        _ => std::path::PathBuf::from(name),
    }
}

fn rate_rows(rows: &[RateRow]) -> Vec<String> {
    rows.iter()
        .map(|r| format!("{},{},{},{}", r.n, r.replica, r.gap, r.seed))
        .collect()
}

fn emit_rate_fit(
    out: &Path,
    companion: &str,
    fit: &RateFitResult,
) -> Result<(), RunError> {
    write_csv(out, "n,replica,gap,seed", &rate_rows(&fit.rows))?;
    write_csv(
        &sibling(out, companion),
        "slope,slope_se",
        &[format!("{},{}", fit.slope, fit.slope_se)],
    )
}

pub fn execute(plan: Plan, out: Option<&Path>) -> Result<String, RunError> {
    match plan {
        Plan::Estimate { family, n, seed, check_only } => {
            let rep = run_estimate(family, n, seed).map_err(numerical)?;
            let theta: Vec<String> = rep.theta_hat.iter().map(f64::to_string).collect();
            let theta = theta.join(";");
            if !check_only {
                let out = require_out(out)?;
                write_csv(
                    out,
                    "family,n,theta,eta_tilde,eta,slack_ok,minimax_ok,seed",
                    &[format!(
                        "{},{},{},{},{},{},{},{}",
                        rep.family, rep.n, theta, rep.eta_tilde, rep.eta, rep.slack_ok,
                        rep.minimax_ok, rep.seed
                    )],
                )?;
            } else if !(rep.slack_ok && rep.minimax_ok) {
                return Err(RunError::Numerical(format!(
                    "certificate failed: eta_tilde={} eta={} slack_ok={} minimax_ok={}",
                    rep.eta_tilde, rep.eta, rep.slack_ok, rep.minimax_ok
                )));
            }
            let verb = if check_only { "nash-check" } else { "estimate" };
            Ok(format!(
                "{verb} family={} n={} theta={} eta_tilde={} eta={} slack_ok={} minimax_ok={}",
                rep.family, rep.n, theta, rep.eta_tilde, rep.eta, rep.slack_ok, rep.minimax_ok
            ))
        }
        Plan::Rates { family, n_grid, replicas, seed, stride } => {
            let fit =
                run_rate_experiment(family, &n_grid, replicas, seed, stride).map_err(numerical)?;
            emit_rate_fit(require_out(out)?, "rates_fit.csv", &fit)?;
            Ok(format!(
                "rates family={} slope={} slope_se={} censored={} failures={}",
                family.name(),
                fit.slope,
                fit.slope_se,
                fit.censored,
                fit.failures
            ))
        }
        Plan::Coverage { family, level, replicas, n, seed, stride } => {
            let rep = run_coverage(family, level, replicas, n, seed, stride).map_err(numerical)?;
            let rows: Vec<String> = rep
                .rows
                .iter()
                .map(|r| format!("{},{},{},{},{}", r.replica, r.estimate, r.se, r.hit, r.seed))
                .collect();
            write_csv(require_out(out)?, "replica,estimate,se,hit,seed", &rows)?;
            Ok(format!(
                "coverage level={} n={} coverage={} mean_ci_width={} failures={}",
                rep.level, rep.n, rep.coverage, rep.mean_ci_width, rep.failures
            ))
        }
        Plan::Efficiency { replicas, n, homoskedastic, seed, stride } => {
            let rep = run_efficiency_compare(replicas, n, homoskedastic, seed, stride)
                .map_err(numerical)?;
            write_csv(
                require_out(out)?,
                "replicas,n,homoskedastic,var_cmr,var_cgel,diff,diff_se,\
                 v_sandwich,v_prop_literal,v_star,failures",
                &[format!(
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    rep.replicas,
                    rep.n,
                    rep.homoskedastic,
                    rep.var_cmr,
                    rep.var_cgel,
                    rep.diff,
                    rep.diff_se,
                    rep.targets.sandwich,
                    rep.targets.prop_literal,
                    rep.targets.efficient,
                    rep.failures
                )],
            )?;
            Ok(format!(
                "efficiency n={n} homoskedastic={homoskedastic} var_cmr={} var_cgel={} \
                 diff={} diff_se={}",
                rep.var_cmr, rep.var_cgel, rep.diff, rep.diff_se
            ))
        }
        Plan::Divergence { family, mode, delta, sigma, seed } => match mode {
            DivergenceMode::Analytic { n, m_samples } => {
                let rep = run_divergence_analytic(family, delta, sigma, n, m_samples, seed)
                    .map_err(numerical)?;
                emit_divergence_point(require_out(out)?, "analytic", &rep)?;
                Ok(divergence_summary("analytic", &rep))
            }
            DivergenceMode::Network { n } => {
                let rep = run_divergence_network(family, delta, sigma, n, seed)
                    .map_err(numerical)?;
                emit_divergence_point(require_out(out)?, "network", &rep)?;
                Ok(divergence_summary("network", &rep))
            }
            DivergenceMode::Recovery { n_grid, replicas } => {
                let fit = run_divergence_recovery(family, &n_grid, replicas, seed)
                    .map_err(numerical)?;
                emit_rate_fit(require_out(out)?, "divergence_fit.csv", &fit)?;
                Ok(format!(
                    "divergence family={} mode=recovery slope={} slope_se={} censored={} \
                     failures={}",
                    family.name(),
                    fit.slope,
                    fit.slope_se,
                    fit.censored,
                    fit.failures
                ))
            }
        },
    }
}

fn emit_divergence_point(
    out: &Path,
    mode: &str,
    rep: &DivergenceReport,
) -> Result<(), RunError> {
    write_csv(
        out,
        "family,mode,n,m_samples,estimate,oracle,abs_err,rel_err",
        &[format!(
            "{},{},{},{},{},{},{},{}",
            rep.family.name(),
            mode,
            rep.n,
            rep.m_samples,
            rep.estimate,
            rep.oracle,
            rep.abs_err,
            rep.rel_err
        )],
    )
}

fn divergence_summary(mode: &str, rep: &DivergenceReport) -> String {
    format!(
        "divergence family={} mode={mode} estimate={} oracle={} rel_err={}",
        rep.family.name(),
        rep.estimate,
        rep.oracle,
        rep.rel_err
    )
}

/// Fast deterministic invariants touching every layer: dual identity,
/// conjugate oracle agreement, generator determinism, and one certified
/// fit.
pub fn selftest() -> Result<String, String> {
    let mut log = String::new();
    // Closed-form vs dual objective on fresh datasets.
    let mut worst = 0.0f64;
    for i in 0..10u64 {
        let data = generate(&DgpSpec::UnconditionalMoment { mu: vec![0.3, -0.1] }, 150, 90 + i)
            .map_err(|e| e.to_string())?;
        let moment = MeanMoment { dim: 2, y_start: 0 };
        let theta = [0.2, 0.1];
        let closed =
            cue_objective(&moment, &theta, &data, Some(0.0)).map_err(|e| e.to_string())?;
        let lambda =
            gmm_lambda_star(&moment, &theta, &data, Some(0.0)).map_err(|e| e.to_string())?;
        let loss = GelLoss::new(
            FDivergence::raw(DivergenceFamily::ChiSquared),
            std::sync::Arc::new(moment),
        );
        let dual = empirical_objective(
            &loss,
            &ParamPoint::new(theta.to_vec(), "t"),
            &ParamPoint::new(lambda, "l"),
            &data,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((closed - dual).abs());
    }
    if worst > 1e-10 {
        return Err(format!("duality identity violated by {worst:e}"));
    }
    let _ = writeln!(log, "duality identity: max gap {worst:e}");

    for family in [
        DivergenceFamily::TotalVariation,
        DivergenceFamily::KullbackLeibler,
        DivergenceFamily::ReverseKl,
        DivergenceFamily::ChiSquared,
        DivergenceFamily::SquaredHellinger,
        DivergenceFamily::RescaledJs,
    ] {
        let div = FDivergence::raw(family);
        let d = div.conjugate_domain();
        for u in [0.2, 0.5, 0.8] {
            let s = match (d.lo.is_finite(), d.hi.is_finite()) {
                (true, true) => d.lo + (d.hi - d.lo) * u,
                (true, false) => d.lo + 0.1 + u,
                (false, true) => d.hi - 0.1 - u,
                (false, false) => 2.0 * u - 1.0,
            };
            let exact = div.conjugate(s).map_err(|e| e.to_string())?;
            let brute = conjugate_oracle(&div, s).map_err(|e| e.to_string())?;
            if (exact - brute).abs() > 1e-5 {
                return Err(format!(
                    "{} conjugate mismatch at s={s}: {exact} vs {brute}",
                    family.name()
                ));
            }
        }
    }
    log.push_str("conjugates agree with the brute-force oracle\n");

    let dgp = DgpSpec::GaussianLocation { mu: 0.0, sigma: 1.0 };
    let a = generate(&dgp, 30, 5).map_err(|e| e.to_string())?;
    let b = generate(&dgp, 30, 5).map_err(|e| e.to_string())?;
    if a.rows() != b.rows() {
        return Err("generation is not deterministic".into());
    }
    log.push_str("generation is deterministic\n");

    let rep = run_estimate(EstimatorFamily::Cue, 400, 17).map_err(|e| e.to_string())?;
    if !(rep.slack_ok && rep.minimax_ok) {
        return Err(format!(
            "reference fit failed certification: eta_tilde={} eta={}",
            rep.eta_tilde, rep.eta
        ));
    }
    let _ = writeln!(
        log,
        "reference fit certified: eta_tilde={} eta={}",
        rep.eta_tilde, rep.eta
    );
    log.push_str("selftest ok");
    Ok(log)
}
