//! Monte Carlo runner.

use std::time::Instant;

use rayon::prelude::*;

use super::config::{Scenario, SweepPoint};
use super::metrics::{resolution_percentage, rmse};
use crate::crb::{crb_correlated, crb_uncorrelated, CrbResult};
use crate::estimators::{EstimatorKind, Pipeline};
use crate::rng::derive_seed;
use crate::signal::CovarianceSet;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "sweep,estimator,rmse_deg,resolution_pct,crb_deg,trials,failures";

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub sweep: f64,
    pub estimator: EstimatorKind,
    pub rmse_deg: f64,
    pub resolution_pct: f64,
    /// `None` when the scenario is not identifiable.
    pub crb_deg: Option<f64>,
    pub trials: usize,
    /// Trials in which the estimator did not converge. Non-converged MLE
    /// trials report the SPICE peaks and remain in the RMSE.
    pub failures: usize,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn csv_row(&self) -> String {
        let crb = self.crb_deg.map_or_else(|| "nan".to_string(), |c| format!("{c:.6}"));
        format!(
            "{},{},{:.6},{:.2},{},{},{}",
            self.sweep,
            self.estimator.name(),
            self.rmse_deg,
            self.resolution_pct,
            crb,
            self.trials,
            self.failures
        )
    }
}

pub fn to_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// CRB summary for a sweep point, `None` when not identifiable.
pub fn point_crb(scenario: &Scenario, point: &SweepPoint) -> Result<Option<CrbResult>> {
    let noise = point.noise_model()?.variance();
    let n = point.snapshots as f64;
    let res = if point.epsilon == 0.0 {
        crb_uncorrelated(&scenario.array, &point.doas, &vec![point.power; point.doas.len()], noise, n)
    } else {
        crb_correlated(&scenario.array, &point.source_model()?, noise, n)
    };
    match res {
        Ok(c) => Ok(Some(c)),
        Err(Error::NotIdentifiable { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

struct TrialOutcome {
    /// Per estimator: (sorted DOAs, converged).
    estimates: Vec<(Vec<f64>, bool)>,
}

fn run_point(scenario: &Scenario, pipeline: &Pipeline, index: usize, point: &SweepPoint) -> Result<Vec<RunRecord>> {
    let start = Instant::now();
    let model = point.source_model()?;
    let noise = point.noise_model()?;
    let outcomes: Vec<TrialOutcome> = (0..scenario.trials)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(scenario.seed, index as u64, t as u64);
            let covs = CovarianceSet::simulate(&scenario.array, &model, &noise, point.snapshots, seed, scenario.shared_sources)?;
            let est = pipeline.run(&scenario.array, &covs, point.snapshots as f64, point.doas.len(), &scenario.estimators)?;
            Ok(TrialOutcome {
                estimates: est.into_iter().map(|e| (e.doas, e.converged)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let crb = point_crb(scenario, point)?.map(|c| c.summary_deg());
    let elapsed = start.elapsed().as_secs_f64();
    Ok(scenario
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let doas: Vec<Vec<f64>> = outcomes.iter().map(|o| o.estimates[j].0.clone()).collect();
            let failures = outcomes.iter().filter(|o| !o.estimates[j].1).count();
            if failures > 0 {
                log::info!("sweep {}: {} failed to converge in {failures} trials", point.value, kind.name());
            }
            RunRecord {
                sweep: point.value,
                estimator: kind,
                rmse_deg: rmse(&doas, &point.doas),
                resolution_pct: resolution_percentage(&doas, &point.doas),
                crb_deg: crb,
                trials: scenario.trials,
                failures,
                wall_time_s: elapsed,
            }
        })
        .collect())
}

/// Runs every sweep point. Each trial draws from its own seed derived from
/// `(master seed, point index, trial index)`, so results do not depend on
/// the number of threads.
pub fn run_monte_carlo(scenario: &Scenario, opts: &RunOptions) -> Result<Vec<RunRecord>> {
    let body = || -> Result<Vec<RunRecord>> {
        let pipeline = Pipeline::new(&scenario.array, &scenario.grid);
        let mut out = Vec::new();
        for (i, p) in scenario.points.iter().enumerate() {
            out.extend(run_point(scenario, &pipeline, i, p)?);
        }
        Ok(out)
    };
    match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}
