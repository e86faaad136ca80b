//! The three structural-equation benchmarks with known DAGs, the Monte Carlo
//! driver that scores every importance estimator over fresh draws, and the
//! correct-first ranking metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{cart_vi, grow_tree, GrowParams};
use crate::condvi::cf_vi;
use crate::dataset::{standard_normal, Dataset, RngSeed};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, rf_vi_mda, ForestParams, ViMethod, ViReport};
use crate::gsa::rf_gs_vi;
use crate::projected::sobol_mda_vi;

/// The three benchmark data-generating processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// X1 background; X2..X4 = a*X1 + e; Y = b*(X2+X3+X4) + e.
    S1,
    /// X1 -> X2 -> {X3, X4, X5}; Y = b*(X3+X4) + e (X5 is a sibling decoy).
    S2,
    /// X2 = a*X1 + e; X3 independent; Y = b*(X2+X3) + e; X4 = c*X2 + c*Y + e
    /// (a descendant of the response offered as a predictor).
    S3,
}

impl Scenario {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Scenario::S1),
            2 => Ok(Scenario::S2),
            3 => Ok(Scenario::S3),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }

    pub fn id(&self) -> u32 {
        match self {
            Scenario::S1 => 1,
            Scenario::S2 => 2,
            Scenario::S3 => 3,
        }
    }

    pub fn feature_count(&self) -> usize {
        match self {
            Scenario::S1 | Scenario::S3 => 4,
            Scenario::S2 => 5,
        }
    }

    /// Direct parents of the response, 0-based.
    pub fn correct_set(&self) -> Vec<usize> {
        match self {
            Scenario::S1 => vec![1, 2, 3],
            Scenario::S2 => vec![2, 3],
            Scenario::S3 => vec![1, 2],
        }
    }
}

/// Specification of one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    /// Only used by scenario 3.
    pub c: f64,
    pub noise_sd: f64,
}

impl DgpSpec {
    pub fn new(scenario: Scenario, n: usize) -> Self {
        Self {
            scenario,
            n,
            a: 3.0,
            b: 3.0,
            c: 2.0,
            noise_sd: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("sample size must be positive".into()));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::InvalidParameter("noise_sd must be positive".into()));
        }
        Ok(())
    }
}

/// Draw one dataset from the structural equations. Noise terms are drawn per
/// row in structural order, so the response never consumes randomness meant
/// for its descendants (scenario 3 draws e_Y before e_4).
pub fn generate_dgp(spec: &DgpSpec, rng: RngSeed) -> Result<Dataset> {
    spec.validate()?;
    let mut gen = rng.rng();
    let mut eps = |sd: f64| sd * standard_normal(&mut gen);
    let n = spec.n;
    let (a, b, c, sd) = (spec.a, spec.b, spec.c, spec.noise_sd);

    let p = spec.scenario.feature_count();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); p];
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        match spec.scenario {
            Scenario::S1 => {
                let x1 = eps(sd);
                let x2 = a * x1 + eps(sd);
                let x3 = a * x1 + eps(sd);
                let x4 = a * x1 + eps(sd);
                y.push(b * x2 + b * x3 + b * x4 + eps(sd));
                for (col, v) in cols.iter_mut().zip([x1, x2, x3, x4]) {
                    col.push(v);
                }
            }
            Scenario::S2 => {
                let x1 = eps(sd);
                let x2 = a * x1 + eps(sd);
                let x3 = a * x2 + eps(sd);
                let x4 = a * x2 + eps(sd);
                let x5 = a * x2 + eps(sd);
                y.push(b * x3 + b * x4 + eps(sd));
                for (col, v) in cols.iter_mut().zip([x1, x2, x3, x4, x5]) {
                    col.push(v);
                }
            }
            Scenario::S3 => {
                let x1 = eps(sd);
                let x2 = a * x1 + eps(sd);
                let x3 = eps(sd);
                let yi = b * x2 + b * x3 + eps(sd);
                let x4 = c * x2 + c * yi + eps(sd);
                y.push(yi);
                for (col, v) in cols.iter_mut().zip([x1, x2, x3, x4]) {
                    col.push(v);
                }
            }
        }
    }
    let names = (0..p).map(|j| format!("X{}", j + 1)).collect();
    Dataset::from_columns(cols, y, names, "Y")
}

/// True when the top-ranked feature is a direct parent of the response.
pub fn rank_correct_first(report: &ViReport, correct_set: &[usize]) -> bool {
    correct_set.contains(&report.ranking[0])
}

/// Per-method hyperparameters for the Monte Carlo comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    /// Forest used by the permutation, conditional and projected estimators.
    pub forest: ForestParams,
    /// Subset draws (L) for the subset-space total-index method.
    pub gs_subsets: usize,
    /// Forest used inside each subset fit.
    pub gs_forest: ForestParams,
    pub cf_threshold: f64,
    pub cf_bins: usize,
    pub cart_min_node: usize,
    pub cart_max_surrogates: usize,
}

impl Default for McParams {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            gs_subsets: 30,
            gs_forest: ForestParams::default(),
            cf_threshold: 0.2,
            cf_bins: 4,
            cart_min_node: 5,
            cart_max_surrogates: 5,
        }
    }
}

/// Monte Carlo distribution summary for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub method: ViMethod,
    pub per_feature_mean: Vec<f64>,
    /// Sample standard deviation over replications (zero for one replication).
    pub per_feature_sd: Vec<f64>,
    pub correct_first_proportion: f64,
    pub replications: usize,
}

/// Summary plus the raw per-replication scores (row = replication).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub summary: McSummary,
    pub scores: Vec<Vec<f64>>,
}

/// Score one dataset with one method. Fixed stream labels per method keep
/// replications reproducible however the method set is composed.
pub fn score_method(
    data: &Dataset,
    method: ViMethod,
    params: &McParams,
    rng: RngSeed,
) -> Result<ViReport> {
    match method {
        ViMethod::Cart => {
            let grow = GrowParams {
                min_node: params.cart_min_node,
                max_surrogates: params.cart_max_surrogates,
                ..GrowParams::default()
            };
            Ok(cart_vi(&grow_tree(data, &grow, rng.derive(0))?))
        }
        ViMethod::RfMda => {
            let forest = fit_forest(data, &params.forest, rng.derive(0))?;
            rf_vi_mda(&forest, data, rng.derive(1))
        }
        ViMethod::Cf => {
            let forest = fit_forest(data, &params.forest, rng.derive(0))?;
            cf_vi(&forest, data, params.cf_threshold, params.cf_bins, rng.derive(1))
        }
        ViMethod::SobolMda => {
            let forest = fit_forest(data, &params.forest, rng.derive(0))?;
            sobol_mda_vi(&forest, data)
        }
        ViMethod::RfGs => rf_gs_vi(data, params.gs_subsets, &params.gs_forest, rng),
    }
}

fn method_stream_label(method: ViMethod) -> u64 {
    match method {
        ViMethod::Cart => 1,
        ViMethod::RfMda => 2,
        ViMethod::Cf => 3,
        ViMethod::SobolMda => 4,
        ViMethod::RfGs => 5,
    }
}

/// Run `replications` independent draws of the DGP and score each requested
/// method on each draw. Replications run in parallel on disjoint streams;
/// any method failure aborts the run with its diagnostic.
pub fn run_monte_carlo_full(
    spec: &DgpSpec,
    methods: &[ViMethod],
    replications: usize,
    params: &McParams,
    rng: RngSeed,
) -> Result<Vec<MethodRun>> {
    if replications == 0 {
        return Err(Error::InvalidParameter("replications must be positive".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidParameter("method set must not be empty".into()));
    }
    spec.validate()?;

    let per_rep: Result<Vec<Vec<ViReport>>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = rng.derive(r as u64);
            let data = generate_dgp(spec, rep_seed.derive(0))?;
            methods
                .iter()
                .map(|&m| score_method(&data, m, params, rep_seed.derive(method_stream_label(m))))
                .collect()
        })
        .collect();
    let per_rep = per_rep?;

    let correct = spec.scenario.correct_set();
    let p = spec.scenario.feature_count();
    let mut runs = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let scores: Vec<Vec<f64>> = per_rep.iter().map(|reps| reps[mi].scores.clone()).collect();
        let hits = per_rep
            .iter()
            .filter(|reps| rank_correct_first(&reps[mi], &correct))
            .count();
        let nrep = replications as f64;
        let mean: Vec<f64> = (0..p)
            .map(|j| scores.iter().map(|s| s[j]).sum::<f64>() / nrep)
            .collect();
        let sd: Vec<f64> = (0..p)
            .map(|j| {
                if replications < 2 {
                    0.0
                } else {
                    let var = scores
                        .iter()
                        .map(|s| (s[j] - mean[j]).powi(2))
                        .sum::<f64>()
                        / (nrep - 1.0);
                    var.sqrt()
                }
            })
            .collect();
        runs.push(MethodRun {
            summary: McSummary {
                method,
                per_feature_mean: mean,
                per_feature_sd: sd,
                correct_first_proportion: hits as f64 / nrep,
                replications,
            },
            scores,
        });
    }
    Ok(runs)
}

/// As [`run_monte_carlo_full`] but returning only the summaries.
pub fn run_monte_carlo(
    spec: &DgpSpec,
    methods: &[ViMethod],
    replications: usize,
    params: &McParams,
    rng: RngSeed,
) -> Result<Vec<McSummary>> {
    Ok(
        run_monte_carlo_full(spec, methods, replications, params, rng)?
            .into_iter()
            .map(|run| run.summary)
            .collect(),
    )
}
