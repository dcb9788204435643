//! Multi-seed training sweeps on the benchmark model.

use log::{info, warn};
use rayon::prelude::*;

use super::config::{ExperimentConfig, MetricKind};
use super::fit::{Curve, CurveRow};
use crate::error::{Error, Result};
use crate::features::{Theta, TrigFeatures};
use crate::learn::{train_until_divergence, Algorithm, ErrorMetric, RgExtension, TrainOptions, TrainOutput};
use crate::model::BenchmarkModel;
use crate::oracle::{ell_matrix, estimate_limits, rg_limits};
use crate::rng::{purpose, RngStream};
use crate::stats::Welford;

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "CTPE_THREADS";

/// Benchmark model, features and error metric shared by every seed.
#[derive(Clone, Debug)]
pub struct Setup {
    pub model: BenchmarkModel,
    pub phi: TrigFeatures,
    pub metric: ErrorMetric,
    pub options: TrainOptions,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Setup> {
        config.validate()?;
        let model = BenchmarkModel::new(config.rho, config.sigma2)?;
        let phi = config.features.build()?;
        let reference = reference_theta(config, &model, &phi)?;
        let oracle = oracle_stream(config.seed);
        let metric = match config.metric {
            MetricKind::ParamMse => ErrorMetric::ParamMse { reference },
            MetricKind::EllLoss => ErrorMetric::EllLoss {
                reference,
                matrix: ell_matrix(model.spec(), config.sampler, &phi, config.oracle_n, &oracle.child(1))?.matrix,
            },
        };
        let options = TrainOptions {
            dt: config.dt,
            mode: config.mode,
            sampler: config.sampler,
            k_max: config.k_max,
            log_grid: config.log_every,
            trailing_from: None,
        };
        Ok(Setup {
            model,
            phi,
            metric,
            options,
        })
    }

    pub fn train_seed(&self, config: &ExperimentConfig, index: usize) -> Result<TrainOutput> {
        train_until_divergence(
            self.model.spec(),
            &self.phi,
            &config.learner,
            &self.options,
            &self.metric,
            &run_stream(config.seed, index),
        )
    }
}

pub fn run_stream(master: u64, index: usize) -> RngStream {
    RngStream::new(master).child(index as u64)
}

fn oracle_stream(master: u64) -> RngStream {
    RngStream::new(master).child(purpose::ORACLE)
}

/// The parameters the configured learner should converge to.
///
/// TD(0) targets `theta*_mu`, exact when `mu = 0` and the features contain
/// the value function; RG targets the minimiser of its mean-field objective,
/// with the Hessian-bias term unless an extension removes it.
pub fn reference_theta(config: &ExperimentConfig, model: &BenchmarkModel, phi: &TrigFeatures) -> Result<Theta> {
    let oracle = oracle_stream(config.seed);
    let mu = config.learner.mu;
    match config.learner.algorithm {
        Algorithm::Td0 => {
            if mu == 0.0 {
                if let Some(t) = model.value_theta(&config.features) {
                    return Ok(t);
                }
            }
            estimate_limits(model.spec(), config.sampler, phi, config.oracle_n, &oracle.child(0))?.theta_star_mu(mu)
        }
        Algorithm::Rg => {
            let lim = rg_limits(model.spec(), config.sampler, phi, mu, config.oracle_n, &oracle.child(2))?;
            Ok(match config.learner.rg_extension {
                RgExtension::None => lim.theta_rg,
                _ => lim.theta_tilde,
            })
        }
    }
}

/// Outcome of a sweep: the aggregated curve plus per-seed divergences.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub curve: Curve,
    pub reference: Theta,
    /// `(seed index, iteration)` of each diverged run.
    pub diverged: Vec<(usize, u64)>,
    pub outputs: Vec<TrainOutput>,
}

fn worker_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

/// Runs every seed on a pool of at most `CTPE_THREADS` workers and
/// aggregates the logged metric per `k` in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SweepResult> {
    let setup = Setup::new(config)?;
    info!(
        "sweep: {} seeds x {} iterations, reference {}",
        config.seeds,
        config.k_max,
        setup.metric.reference()
    );
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let outputs = pool.install(|| {
        (0..config.seeds)
            .into_par_iter()
            .map(|i| setup.train_seed(config, i))
            .collect::<Result<Vec<TrainOutput>>>()
    })?;
    aggregate(config, setup.metric.reference().clone(), outputs)
}

fn aggregate(config: &ExperimentConfig, reference: Theta, outputs: Vec<TrainOutput>) -> Result<SweepResult> {
    let diverged: Vec<(usize, u64)> = outputs
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.diverged_at.map(|k| (i, k)))
        .collect();
    for (i, k) in &diverged {
        warn!("seed {i} diverged at k = {k}");
    }
    if diverged.len() == outputs.len() {
        return Err(Error::AllDiverged { seeds: outputs.len() });
    }
    let grid = config.log_every.points(config.k_max);
    let mut rows = Vec::with_capacity(grid.len());
    let mut cursors = vec![0usize; outputs.len()];
    for &k in &grid {
        let mut w = Welford::new();
        for (o, c) in outputs.iter().zip(cursors.iter_mut()) {
            let log = &o.state.error_log;
            if *c < log.len() && log[*c].0 == k {
                w.add(log[*c].1);
                *c += 1;
            }
        }
        if w.count() > 0 {
            rows.push(CurveRow {
                k,
                metric_mean: w.mean(),
                metric_std: w.std_dev(),
                n_ok_seeds: w.count() as usize,
            });
        }
    }
    Ok(SweepResult {
        curve: Curve { rows },
        reference,
        diverged,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::LogGrid;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            k_max: 10,
            seeds: 1,
            log_every: LogGrid::Geometric,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn tiny_sweep_has_a_handful_of_rows() {
        let r = run_experiment(&small()).unwrap();
        assert!((4..=5).contains(&r.curve.rows.len()));
        assert!(r.curve.rows.iter().all(|row| row.n_ok_seeds == 1 && row.metric_std == 0.0));
        assert_eq!(r.curve.rows.last().unwrap().k, 10);
    }

    #[test]
    fn sweep_is_deterministic() {
        let c = ExperimentConfig {
            seeds: 4,
            k_max: 500,
            ..small()
        };
        let a = run_experiment(&c).unwrap().curve.to_csv_string();
        let b = run_experiment(&c).unwrap().curve.to_csv_string();
        assert_eq!(a, b);
        let other = run_experiment(&ExperimentConfig { seed: 1, ..c }).unwrap().curve.to_csv_string();
        assert_ne!(a, other);
    }

    #[test]
    fn all_diverged_is_an_error() {
        let mut c = ExperimentConfig {
            seeds: 2,
            k_max: 10_000,
            ..small()
        };
        c.learner.lr = crate::observe::Schedule::Constant { c: 100.0 };
        c.learner.variant = crate::learn::TdVariant::Standard;
        c.dt = crate::observe::Schedule::Constant { c: 1e-3 };
        let err = run_experiment(&c).unwrap_err();
        assert!(matches!(err, Error::AllDiverged { seeds: 2 }));
        assert!(err.is_divergence());
    }
}
