//! Oracle diagnostics bundled into pass/fail suites.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Theta};
use crate::model::BenchmarkModel;
use crate::observe::{gaussian_noise, ObservationMode};
use crate::oracle::{conditional_moments, estimate_limits, rg_limits, solve, trace_diagnostics, SpectralBound};
use crate::rng::{purpose, rademacher_rotated, RngStream};
use crate::stats::MomentAccumulator;
use crate::torus::TorusPoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Moments,
    Limits,
    Variances,
    Rg,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Moments, Suite::Limits, Suite::Variances, Suite::Rg];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Moments => "moments",
            Suite::Limits => "limits",
            Suite::Variances => "variances",
            Suite::Rg => "rg",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown check suite `{s}` (expected moments, limits, variances or rg)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub expected: String,
    pub observed: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub suite: String,
    pub lines: Vec<CheckLine>,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(suite: Suite) -> Self {
        CheckReport {
            suite: suite.to_string(),
            ..CheckReport::default()
        }
    }

    fn line(&mut self, name: impl Into<String>, expected: impl Into<String>, observed: impl Into<String>, pass: bool) {
        self.lines.push(CheckLine {
            name: name.into(),
            expected: expected.into(),
            observed: observed.into(),
            pass,
        });
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "check {}", self.suite)?;
        let w = self.lines.iter().map(|l| l.name.len()).max().unwrap_or(0);
        let we = self.lines.iter().map(|l| l.expected.len()).max().unwrap_or(0);
        for l in &self.lines {
            writeln!(
                f,
                "  [{}] {:<w$}  expected {:<we$}  observed {}",
                if l.pass { "PASS" } else { "FAIL" },
                l.name,
                l.expected,
                l.observed
            )?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        write!(f, "{}: {}", self.suite, if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn within(observed: f64, expected: f64, rel: f64) -> bool {
    (observed - expected).abs() <= rel * expected.abs()
}

/// Reference parameters: the exact value-function coordinates when the
/// features contain it, otherwise the oracle `theta*`.
fn value_parameters(config: &ExperimentConfig, model: &BenchmarkModel, phi: &dyn FeatureMap, stream: &RngStream) -> Result<Theta> {
    match model.value_theta(&config.features) {
        Some(t) => Ok(t),
        None => Ok(estimate_limits(model.spec(), config.sampler, phi, config.oracle_n, stream)?.theta_star),
    }
}

pub fn run_check(suite: Suite, config: &ExperimentConfig) -> Result<CheckReport> {
    config.validate()?;
    let model = BenchmarkModel::new(config.rho, config.sigma2)?;
    let phi = config.features.build()?;
    let stream = RngStream::new(config.seed).child(purpose::ORACLE).child(100 + suite as u64);
    match suite {
        Suite::Moments => moments(config, &model, &phi, &stream),
        Suite::Limits => limits(config, &model, &phi, &stream),
        Suite::Variances => variances(config, &stream),
        Suite::Rg => rg(config, &model, &phi, &stream),
    }
}

pub const MOMENT_STATE: f64 = 0.2;
pub const MOMENT_GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];

fn moments(config: &ExperimentConfig, model: &BenchmarkModel, phi: &dyn FeatureMap, stream: &RngStream) -> Result<CheckReport> {
    let mut rep = CheckReport::new(Suite::Moments);
    let theta = value_parameters(config, model, phi, &stream.child(0))?;
    let x = TorusPoint::scalar(MOMENT_STATE)?;
    let n = config.oracle_n.max(10_000);
    let m = conditional_moments(model.spec(), phi, &theta, &x, &MOMENT_GRID, n, ObservationMode::Simulator, &stream.child(1))?;
    let a = m.analytic;
    let errs: Vec<f64> = m
        .rows
        .iter()
        .map(|r| (r.dt * r.var_std / a.var_std_scaled - 1.0).abs())
        .collect();
    let last = m.rows.last().expect("non-empty grid");
    let scaled = last.dt * last.var_std;
    rep.line(
        format!("dt Var(delta|X) at dt={}", last.dt),
        format!("{:.6} +-5%", a.var_std_scaled),
        format!("{scaled:.6} ({:+.2}%)", 100.0 * (scaled / a.var_std_scaled - 1.0)),
        within(scaled, a.var_std_scaled, 0.05),
    );
    rep.line(
        "relative error shrinks with dt",
        "decreasing",
        errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(" > "),
        errs.windows(2).all(|w| w[1] < w[0]),
    );
    rep.line(
        format!("Var(delta~|X) at dt={}", last.dt),
        format!("{:.6} +-5%", a.var_stoch),
        format!("{:.6} ({:+.2}%)", last.var_stoch, 100.0 * (last.var_stoch / a.var_stoch - 1.0)),
        within(last.var_stoch, a.var_stoch, 0.05),
    );
    rep.line(
        "E[delta|X] - (Lv - r)",
        "0 +-3 se",
        format!("{:.3e} (se {:.3e})", last.mean_std - a.bellman, last.mean_std_se),
        (last.mean_std - a.bellman).abs() <= 3.0 * last.mean_std_se,
    );
    rep.line(
        "E[delta~|X] - (Lv - r)",
        "0 +-3 se",
        format!("{:.3e} (se {:.3e})", last.mean_stoch - a.bellman, last.mean_stoch_se),
        (last.mean_stoch - a.bellman).abs() <= 3.0 * last.mean_stoch_se,
    );
    rep.notes.push(format!(
        "2 tr((sigma sigma^T D^2 v)^2) = {:.6} is four times the observed Var(delta~|X); the limit is half the trace",
        a.var_stoch_quoted
    ));
    for r in &m.rows {
        rep.notes.push(format!(
            "dt={:e}: mean {:.4e} (se {:.1e}), dt*var {:.6}; mean~ {:.4e} (se {:.1e}), var~ {:.6}",
            r.dt,
            r.mean_std,
            r.mean_std_se,
            r.dt * r.var_std,
            r.mean_stoch,
            r.mean_stoch_se,
            r.var_stoch
        ));
    }
    Ok(rep)
}

pub const BIAS_MUS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

fn limits(config: &ExperimentConfig, model: &BenchmarkModel, phi: &dyn FeatureMap, stream: &RngStream) -> Result<CheckReport> {
    let mut rep = CheckReport::new(Suite::Limits);
    let lim = estimate_limits(model.spec(), config.sampler, phi, config.oracle_n, stream)?;
    if let Some(tv) = model.value_theta(&config.features) {
        for (i, (got, want)) in lim.theta_star.as_slice().iter().zip(tv.as_slice()).enumerate() {
            rep.line(
                format!("theta*[{i}]"),
                format!("{want} +-2e-2"),
                format!("{got:.5} (se {:.1e})", lim.se.theta_star[i]),
                (got - want).abs() <= 2e-2,
            );
        }
    }
    let min_s = lim.min_eigenvalue_s();
    rep.line("min eig S", ">= 0.45", format!("{min_s:.5}"), min_s >= 0.45);
    let ts = DVector::from_column_slice(lim.theta_star.as_slice());
    let resid = (&lim.h * &ts - &lim.b_vec).norm() / lim.b_vec.norm().max(f64::MIN_POSITIVE);
    rep.line("|H theta* - b| / |b|", "<= 1e-10", format!("{resid:.2e}"), resid <= 1e-10);

    let c0 = solve(&lim.h, &ts)?.norm();
    let mut ratios = Vec::new();
    for mu in BIAS_MUS {
        let t = lim.theta_star_mu(mu)?;
        ratios.push((mu, t.distance_squared(&lim.theta_star).sqrt() / mu));
    }
    let finite = ratios.iter().all(|r| r.1.is_finite() && r.1 <= c0 * (1.0 + 1e-9));
    let monotone = ratios.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-12);
    rep.line(
        "|theta* - theta*_mu| / mu",
        format!("finite, <= |H^-1 theta*| = {c0:.4}, nonincreasing in mu"),
        ratios.iter().map(|(m, r)| format!("{m}:{r:.4}")).collect::<Vec<_>>().join(" "),
        finite && monotone,
    );

    let bound = SpectralBound {
        rho: model.rho(),
        sigma2: model.sigma2(),
        drift_score_sup: model.score_drift_sup(),
    };
    let tr = trace_diagnostics(&lim.h, Some(bound))?;
    rep.line(
        "Re lambda(H) > 0",
        "all",
        tr.h_eigenvalues.iter().map(|l| format!("{:.4}{:+.4}i", l.re, l.im)).collect::<Vec<_>>().join(" "),
        tr.h_eigenvalues.iter().all(|l| l.re > 0.0),
    );
    rep.line(
        "|Im lambda| / Re lambda",
        format!("<= {:.4}", bound.factor()),
        format!("{:.4}", tr.max_imag_ratio),
        tr.bound_holds == Some(true),
    );
    rep.notes.push(format!("tr(H H^-T) = {:.6}, tr(S) = {:.6}", tr.trace_h_hinvt, tr.trace_s));
    rep.notes.push(format!(
        "spectrum of S: {}",
        tr.s_spectrum.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(", ")
    ));
    Ok(rep)
}

/// One random `(g, A)` pair checked against the Gaussian quadratic-form
/// identities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityTrial {
    pub g_norm2: f64,
    pub var_linear: f64,
    pub two_tr_a2: f64,
    pub var_quadratic: f64,
    /// Variance of `xi^T A xi - tr A` under rotated Rademacher noise.
    pub var_rademacher: f64,
}

/// `Var(xi . g) = |g|^2` and `Var(xi^T A xi - tr A) = 2 tr(A^2)` for standard
/// Gaussian `xi`, over `trials` random pairs in dimension `dim`.
pub fn gaussian_identity_trials(trials: usize, draws: usize, dim: usize, stream: &RngStream) -> Result<Vec<IdentityTrial>> {
    if dim == 0 || draws < 2 {
        return Err(Error::domain("need dim >= 1 and at least 2 draws"));
    }
    (0..trials)
        .map(|t| {
            let mut rng = stream.child(t as u64).rng();
            let g = DVector::from_iterator(dim, gaussian_noise(&mut rng, dim));
            let raw = DMatrix::from_fn(dim, dim, |_, _| crate::rng::standard_normal(&mut rng));
            let a = (&raw + raw.transpose()) * 0.5;
            let tr = a.trace();
            let mut lin = MomentAccumulator::new();
            let mut quad = MomentAccumulator::new();
            let mut rad = MomentAccumulator::new();
            for _ in 0..draws {
                let xi = DVector::from_iterator(dim, gaussian_noise(&mut rng, dim));
                lin.add(xi.dot(&g));
                quad.add(xi.dot(&(&a * &xi)) - tr);
            }
            for _ in 0..draws.min(10_000) {
                let xi = rademacher_rotated(&a, &mut rng)?;
                rad.add(xi.dot(&(&a * &xi)) - tr);
            }
            Ok(IdentityTrial {
                g_norm2: g.norm_squared(),
                var_linear: lin.variance(),
                two_tr_a2: 2.0 * (&a * &a).trace(),
                var_quadratic: quad.variance(),
                var_rademacher: rad.variance(),
            })
        })
        .collect()
}

fn variances(config: &ExperimentConfig, stream: &RngStream) -> Result<CheckReport> {
    let mut rep = CheckReport::new(Suite::Variances);
    let draws = config.oracle_n.max(10_000);
    for (i, t) in gaussian_identity_trials(10, draws, 3, stream)?.iter().enumerate() {
        rep.line(
            format!("trial {i}: Var(xi.g)"),
            format!("{:.5} +-2%", t.g_norm2),
            format!("{:.5}", t.var_linear),
            within(t.var_linear, t.g_norm2, 0.02),
        );
        rep.line(
            format!("trial {i}: Var(xi'A xi - tr A)"),
            format!("{:.5} +-2%", t.two_tr_a2),
            format!("{:.5}", t.var_quadratic),
            within(t.var_quadratic, t.two_tr_a2, 0.02),
        );
        rep.line(
            format!("trial {i}: rotated Rademacher"),
            "0 (rounding only)",
            format!("{:.2e}", t.var_rademacher),
            t.var_rademacher <= 1e-20 * (1.0 + t.two_tr_a2),
        );
    }
    Ok(rep)
}

fn rg(config: &ExperimentConfig, model: &BenchmarkModel, phi: &dyn FeatureMap, stream: &RngStream) -> Result<CheckReport> {
    let mut rep = CheckReport::new(Suite::Rg);
    let mu = config.learner.mu;
    let theta = value_parameters(config, model, phi, &stream.child(0))?;
    let lim = rg_limits(model.spec(), config.sampler, phi, mu, config.oracle_n, &stream.child(1))?;
    if mu == 0.0 {
        let worst = lim
            .theta_tilde
            .as_slice()
            .iter()
            .zip(theta.as_slice())
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() / lim.theta_tilde_se[i].max(f64::MIN_POSITIVE))
            .fold(0.0f64, f64::max);
        rep.line(
            "Hessian-free minimiser vs theta*",
            "within 5 se",
            format!("{:.5} (worst {worst:.2} se)", lim.theta_tilde),
            worst <= 5.0,
        );
    }
    let gap = lim
        .theta_rg
        .as_slice()
        .iter()
        .zip(theta.as_slice())
        .enumerate()
        .map(|(i, (a, b))| (a - b).abs() / lim.theta_rg_se[i].max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    rep.line(
        format!("RG minimiser (mu={mu}) vs theta*"),
        "differs by > 5 se",
        format!("{:.5} (largest gap {gap:.1} se)", lim.theta_rg),
        gap > 5.0,
    );
    rep.notes.push(format!("theta* = {theta}"));
    rep.notes.push(format!("Hessian-bias matrix diagonal: {:?}", lim.hessian_bias.diagonal().as_slice()));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            oracle_n: 100_000,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn suite_names() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn limits_and_rg_suites_pass() {
        for s in [Suite::Limits, Suite::Rg] {
            let r = run_check(s, &quick()).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn identities_hold_on_small_runs() {
        let trials = gaussian_identity_trials(3, 200_000, 3, &RngStream::new(1)).unwrap();
        for t in trials {
            assert!(within(t.var_linear, t.g_norm2, 0.03));
            assert!(within(t.var_quadratic, t.two_tr_a2, 0.05));
            assert!(t.var_rademacher < 1e-20 * (1.0 + t.two_tr_a2));
        }
    }

    #[test]
    fn report_renders_verdicts() {
        let mut r = CheckReport::new(Suite::Moments);
        r.line("a", "1", "1", true);
        r.line("b", "1", "2", false);
        let text = r.to_string();
        assert!(text.contains("[PASS] a") && text.contains("[FAIL] b"));
        assert!(text.ends_with("moments: FAIL"));
    }
}
