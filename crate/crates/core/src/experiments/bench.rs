//! Matched-seed comparisons of regularizers against the vanilla baseline.

use serde::{Deserialize, Serialize};

use crate::dynsys::{generate_regime_shift, RegimeShiftSpec, Trajectory};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};

use super::ratio::{loss_ratio, summarize};
use super::train::{train_online, ExperimentResult, Regularizer, TrainConfig};

/// A regularizer with its hyperparameter (`alpha`, or `p` for dropout).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub regularizer: Regularizer,
    pub param: f64,
}

impl Variant {
    pub fn new(regularizer: Regularizer, param: f64) -> Self {
        Variant { regularizer, param }
    }

    /// The comparison rows reported alongside the Lyapunov regularizer.
    pub fn reference_set(alpha: f64) -> Vec<Variant> {
        vec![
            Variant::new(Regularizer::Lyapunov, alpha),
            Variant::new(Regularizer::L1, 1e-4),
            Variant::new(Regularizer::L2, 1e-3),
            Variant::new(Regularizer::Dropout, 0.2),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub regularizer: Regularizer,
    pub param: f64,
    pub mean_ratio: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Per-seed ratios in seed order.
    pub ratios: Vec<f64>,
}

/// Every run of a grid: `runs[v][s]` is variant `v` on seed `s`.
#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub vanilla: Vec<ExperimentResult>,
    pub runs: Vec<Vec<ExperimentResult>>,
}

impl GridOutcome {
    /// One row per variant, in variant order.
    pub fn rows(&self) -> Result<Vec<BenchRow>> {
        self.variants
            .iter()
            .zip(&self.runs)
            .map(|(v, runs)| {
                let ratios = self
                    .vanilla
                    .iter()
                    .zip(runs)
                    .map(|(a, b)| loss_ratio(a, b).map(|r| r.ratio))
                    .collect::<Result<Vec<_>>>()?;
                let s = summarize(&ratios);
                Ok(BenchRow {
                    regularizer: v.regularizer,
                    param: v.param,
                    mean_ratio: s.mean,
                    q1: s.q1,
                    median: s.median,
                    q3: s.q3,
                    ratios,
                })
            })
            .collect()
    }
}

/// Seed `i` of a grid uses `base.seed + i` for data, init and dropout.
fn seed_trajectories(data: &RegimeShiftSpec, seeds: &[u64]) -> Result<Vec<Trajectory>> {
    seeds
        .iter()
        .map(|&seed| {
            generate_regime_shift(&RegimeShiftSpec {
                seed,
                ..data.clone()
            })
        })
        .collect()
}

/// Trains the vanilla model and every variant on each seed's trajectory.
///
/// Independent runs are distributed over `mode`; results are gathered in
/// `(variant, seed)` order so output never depends on scheduling.
pub fn run_grid(
    base: &TrainConfig,
    data: &RegimeShiftSpec,
    variants: &[Variant],
    n_seeds: usize,
    mode: ExecMode,
) -> Result<GridOutcome> {
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("n_seeds must be at least 1".into()));
    }
    base.validate()?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| base.seed + i).collect();
    let trajectories = seed_trajectories(data, &seeds)?;

    let mut jobs: Vec<(usize, Option<usize>)> = Vec::new();
    for s in 0..seeds.len() {
        jobs.push((s, None));
    }
    for v in 0..variants.len() {
        for s in 0..seeds.len() {
            jobs.push((s, Some(v)));
        }
    }
    let results = exec::map_ordered(mode, jobs, |(s, v)| {
        let mut cfg = TrainConfig {
            seed: seeds[s],
            ..base.clone()
        };
        cfg = match v {
            None => cfg.with_regularizer(Regularizer::None, 0.0),
            Some(v) => cfg.with_regularizer(variants[v].regularizer, variants[v].param),
        };
        train_online(&cfg, &trajectories[s])
    });
    let mut results = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter();
    let vanilla: Vec<ExperimentResult> = results.by_ref().take(seeds.len()).collect();
    let runs = (0..variants.len())
        .map(|_| results.by_ref().take(seeds.len()).collect())
        .collect();
    Ok(GridOutcome {
        seeds,
        variants: variants.to_vec(),
        vanilla,
        runs,
    })
}

/// Rows sorted by mean ratio, best first.
pub fn run_benchmark(
    base: &TrainConfig,
    data: &RegimeShiftSpec,
    variants: &[Variant],
    n_seeds: usize,
    mode: ExecMode,
) -> Result<Vec<BenchRow>> {
    let mut rows = run_grid(base, data, variants, n_seeds, mode)?.rows()?;
    rows.sort_by(|a, b| b.mean_ratio.total_cmp(&a.mean_ratio));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub mean_ratio: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub const DEFAULT_ALPHA_GRID: [f64; 7] = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];

/// Lyapunov regularizer at each `alpha`, in the order given.
pub fn sweep_alpha(
    base: &TrainConfig,
    data: &RegimeShiftSpec,
    alphas: &[f64],
    n_seeds: usize,
    mode: ExecMode,
) -> Result<Vec<SweepPoint>> {
    if alphas.is_empty() || alphas.iter().any(|&a| !(a >= 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "alphas must be nonempty and >= 0, got {alphas:?}"
        )));
    }
    let variants: Vec<Variant> = alphas
        .iter()
        .map(|&a| Variant::new(Regularizer::Lyapunov, a))
        .collect();
    Ok(sweep_points(&run_grid(base, data, &variants, n_seeds, mode)?.rows()?))
}

pub fn sweep_points(rows: &[BenchRow]) -> Vec<SweepPoint> {
    rows.iter()
        .map(|r| SweepPoint {
            alpha: r.param,
            mean_ratio: r.mean_ratio,
            q1: r.q1,
            median: r.median,
            q3: r.q3,
        })
        .collect()
}

/// `regularizer,param,mean_ratio,q1,median,q3`.
pub fn rows_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("regularizer,param,mean_ratio,q1,median,q3\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.regularizer.tag(),
            r.param,
            r.mean_ratio,
            r.q1,
            r.median,
            r.q3
        ));
    }
    s
}
