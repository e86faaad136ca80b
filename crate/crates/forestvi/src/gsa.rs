//! Variance-based sensitivity machinery: Sobol' first-order and total-order
//! indices estimated with Jansen's squared-difference form over pick-and-
//! freeze sample matrices, and the subset-space variable importance that
//! applies the total index to forest fit quality: coordinate `k` of the
//! feature-inclusion mask is important when switching it moves the model's
//! out-of-bag RMSE.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{standard_normal, Dataset, RngSeed};
use crate::error::{Error, Result};
use crate::forest::{fit_forest_subset, oob_rmse, ForestParams, ViMethod, ViReport};

/// Feature-inclusion vector over the p columns of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsetMask {
    bits: Vec<bool>,
}

impl SubsetMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn empty(p: usize) -> Self {
        Self { bits: vec![false; p] }
    }

    pub fn full(p: usize) -> Self {
        Self { bits: vec![true; p] }
    }

    /// Mask drawn with independent fair-coin coordinates.
    pub fn random<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..p).map(|_| rng.gen_bool(0.5)).collect(),
        }
    }

    /// Integer-encoded mask: bit `k` of `code` selects coordinate `k`.
    pub fn from_code(code: u64, p: usize) -> Self {
        Self {
            bits: (0..p).map(|k| code >> k & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// The mask with coordinate `k` switched; an involution.
    pub fn flipped(&self, k: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[k] = !bits[k];
        Self { bits }
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(k, _)| k)
            .collect()
    }

    /// Bit string like `0110`, coordinate 0 first.
    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Fit quality of one subset model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitScore {
    /// Out-of-bag RMSE of the subset forest (in-sample RMSE of the constant
    /// mean model for the empty subset).
    pub q: f64,
    pub mask: SubsetMask,
}

/// Sobol' index estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub first_order: Option<Vec<f64>>,
    pub total: Vec<f64>,
    pub output_variance: f64,
    pub sample_count: usize,
}

/// Marginal input distribution for black-box sensitivity estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    Uniform01,
    StdNormal,
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Uniform01 => rng.gen::<f64>(),
            Marginal::StdNormal => standard_normal(rng),
            Marginal::Uniform { lo, hi } => rng.gen_range(lo..hi),
        }
    }
}

/// Independent input distribution, one marginal per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub marginals: Vec<Marginal>,
}

impl InputSpec {
    pub fn uniform01(k: usize) -> Self {
        Self {
            marginals: vec![Marginal::Uniform01; k],
        }
    }

    pub fn std_normal(k: usize) -> Self {
        Self {
            marginals: vec![Marginal::StdNormal; k],
        }
    }

    pub fn uniform(k: usize, lo: f64, hi: f64) -> Self {
        Self {
            marginals: vec![Marginal::Uniform { lo, hi }; k],
        }
    }

    pub fn dims(&self) -> usize {
        self.marginals.len()
    }
}

/// First-order indices by the squared-difference estimator:
/// `S_i = [V - (1/2N) sum (f(B) - f(A_B^i))^2] / V`.
pub fn jansen_first_order<F>(
    f: F,
    inputs: &InputSpec,
    n: usize,
    rng: RngSeed,
) -> Result<SensitivityEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    jansen_indices(f, inputs, n, rng)
}

/// Total-order indices: `T_i = (1/2N) sum (f(A) - f(A_B^i))^2 / V`.
pub fn jansen_total<F>(
    f: F,
    inputs: &InputSpec,
    n: usize,
    rng: RngSeed,
) -> Result<SensitivityEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    jansen_indices(f, inputs, n, rng)
}

/// Shared pick-and-freeze pass computing both index families from one design:
/// base matrices A and B plus the hybrids A_B^(i) (A with column i taken
/// from B). The output variance is the sample variance over the combined
/// A and B evaluations.
pub fn jansen_indices<F>(
    f: F,
    inputs: &InputSpec,
    n: usize,
    rng: RngSeed,
) -> Result<SensitivityEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    if n < 2 {
        return Err(Error::InvalidParameter("sample count must be at least 2".into()));
    }
    let k = inputs.dims();
    if k == 0 {
        return Err(Error::InvalidParameter("input dimension must be positive".into()));
    }
    let sample_matrix = |seed: RngSeed| -> Vec<f64> {
        let mut rng = seed.rng();
        let mut m = Vec::with_capacity(n * k);
        for _ in 0..n {
            for marginal in &inputs.marginals {
                m.push(marginal.sample(&mut rng));
            }
        }
        m
    };
    let a = sample_matrix(rng.derive(0));
    let b = sample_matrix(rng.derive(1));

    let f_a: Vec<f64> = (0..n).map(|v| f(&a[v * k..(v + 1) * k])).collect();
    let f_b: Vec<f64> = (0..n).map(|v| f(&b[v * k..(v + 1) * k])).collect();

    let m2 = (2 * n) as f64;
    let mean = (f_a.iter().sum::<f64>() + f_b.iter().sum::<f64>()) / m2;
    let var = (f_a.iter().map(|y| (y - mean).powi(2)).sum::<f64>()
        + f_b.iter().map(|y| (y - mean).powi(2)).sum::<f64>())
        / (m2 - 1.0);
    if var == 0.0 {
        return Err(Error::ZeroOutputVariance);
    }

    let mut first = Vec::with_capacity(k);
    let mut total = Vec::with_capacity(k);
    let mut hybrid_row = vec![0.0f64; k];
    for i in 0..k {
        let mut sum_b = 0.0;
        let mut sum_a = 0.0;
        for v in 0..n {
            hybrid_row.copy_from_slice(&a[v * k..(v + 1) * k]);
            hybrid_row[i] = b[v * k + i];
            let f_h = f(&hybrid_row);
            sum_b += (f_b[v] - f_h).powi(2);
            sum_a += (f_a[v] - f_h).powi(2);
        }
        first.push((var - sum_b / (2.0 * n as f64)) / var);
        total.push(sum_a / (2.0 * n as f64) / var);
    }

    Ok(SensitivityEstimate {
        first_order: Some(first),
        total,
        output_variance: var,
        sample_count: n,
    })
}

/// Columns selected by the mask minus columns that are constant in the
/// training data. A constant column can never host a split, so dropping it
/// makes the fit (and its seed) invariant to that coordinate — which is what
/// grants constant coordinates an exactly-zero total index.
pub fn canonical_columns(data: &Dataset, mask: &SubsetMask) -> Vec<usize> {
    mask.active_indices()
        .into_iter()
        .filter(|&j| {
            let first = data.feature(0, j);
            (1..data.n()).any(|i| data.feature(i, j) != first)
        })
        .collect()
}

/// Forest fit seed for a canonical column set: a derivation chain over the
/// sorted indices, so equal signatures always reuse the same stream.
fn signature_seed(base: RngSeed, signature: &[usize]) -> RngSeed {
    let mut seed = base;
    for &j in signature {
        seed = seed.derive(j as u64 + 1);
    }
    seed
}

/// Fit quality `q` of the model on the signature's columns: out-of-bag RMSE
/// of a forest fit, or the in-sample RMSE of the constant mean predictor for
/// the empty signature. `mtry` is clamped to the active column count.
fn signature_fit_q(
    data: &Dataset,
    signature: &[usize],
    params: &ForestParams,
    fit_base: RngSeed,
) -> Result<f64> {
    if signature.is_empty() {
        let n = data.n() as f64;
        let mean = data.response().iter().sum::<f64>() / n;
        let mse = data
            .response()
            .iter()
            .map(|&y| (y - mean).powi(2))
            .sum::<f64>()
            / n;
        return Ok(mse.sqrt());
    }
    let params = ForestParams {
        mtry: params.mtry.map(|m| m.min(signature.len()).max(1)),
        ..params.clone()
    };
    let forest = fit_forest_subset(
        data,
        &params,
        Some(signature),
        signature_seed(fit_base, signature),
    )?;
    oob_rmse(&forest, data)
}

/// Evaluate `q` for one mask. `fit_base` must be shared across calls for the
/// scores to be comparable; [`rf_gs_vi`] uses `rng.derive(1)`.
pub fn subset_fit_score(
    data: &Dataset,
    mask: &SubsetMask,
    params: &ForestParams,
    fit_base: RngSeed,
) -> Result<FitScore> {
    if mask.len() != data.p() {
        return Err(Error::LengthMismatch {
            got: mask.len(),
            expected: data.p(),
        });
    }
    let signature = canonical_columns(data, mask);
    Ok(FitScore {
        q: signature_fit_q(data, &signature, params, fit_base)?,
        mask: mask.clone(),
    })
}

/// Evaluate `q` once per distinct signature, in parallel, with
/// signature-derived fit seeds (so results are independent of scheduling and
/// of how often a signature recurs).
fn memoized_q(
    data: &Dataset,
    needed: &[Vec<usize>],
    params: &ForestParams,
    fit_base: RngSeed,
) -> Result<HashMap<Vec<usize>, f64>> {
    let mut unique: Vec<Vec<usize>> = needed.to_vec();
    unique.sort();
    unique.dedup();
    let scores: Result<Vec<(Vec<usize>, f64)>> = unique
        .into_par_iter()
        .map(|sig| {
            let q = signature_fit_q(data, &sig, params, fit_base)?;
            Ok((sig, q))
        })
        .collect();
    Ok(scores?.into_iter().collect())
}

/// Subset-space total-index importance, estimated by coordinate switching:
///
/// for each of `subsets` sampled masks, evaluate the fit measure `q` at the
/// mask and at its p single-coordinate switches, then report
/// `T_k = [(1/4L) sum_l (q_kl - q_l)^2] / [(1/(L-1)) sum_l (q_l - q_bar)^2]`.
///
/// Mask sampling draws from `rng.derive(0)`; every forest fit draws from
/// `rng.derive(1)` refined by the fitted column signature, so a mask is
/// always refit with the same stream (matching [`rf_gs_vi_exhaustive`]).
pub fn rf_gs_vi(
    data: &Dataset,
    subsets: usize,
    params: &ForestParams,
    rng: RngSeed,
) -> Result<ViReport> {
    Ok(rf_gs_vi_traced(data, subsets, params, rng)?.0)
}

/// As [`rf_gs_vi`], additionally returning the distinct evaluated masks with
/// their `q` values (sorted by bit string) for audit output.
pub fn rf_gs_vi_traced(
    data: &Dataset,
    subsets: usize,
    params: &ForestParams,
    rng: RngSeed,
) -> Result<(ViReport, Vec<FitScore>)> {
    let l = subsets;
    if l < 2 {
        return Err(Error::InvalidParameter("subset count must be at least 2".into()));
    }
    let p = data.p();
    let mut mask_rng = rng.derive(0).rng();
    let masks: Vec<SubsetMask> = (0..l).map(|_| SubsetMask::random(p, &mut mask_rng)).collect();

    let mut evaluated: Vec<SubsetMask> = Vec::with_capacity(l * (p + 1));
    for mask in &masks {
        evaluated.push(mask.clone());
        for k in 0..p {
            evaluated.push(mask.flipped(k));
        }
    }
    let signatures: Vec<Vec<usize>> = evaluated
        .iter()
        .map(|m| canonical_columns(data, m))
        .collect();
    let q_of = memoized_q(data, &signatures, params, rng.derive(1))?;
    let q = |mask: &SubsetMask| -> f64 { q_of[&canonical_columns(data, mask)] };

    let q_base: Vec<f64> = masks.iter().map(&q).collect();
    let q_bar = q_base.iter().sum::<f64>() / l as f64;
    let v_hat = q_base.iter().map(|&v| (v - q_bar).powi(2)).sum::<f64>() / (l - 1) as f64;
    if v_hat == 0.0 {
        return Err(Error::DegenerateSubsetVariance);
    }

    let mut scores = Vec::with_capacity(p);
    for k in 0..p {
        let sigma2 = masks
            .iter()
            .zip(&q_base)
            .map(|(mask, &ql)| (q(&mask.flipped(k)) - ql).powi(2))
            .sum::<f64>()
            / (4.0 * l as f64);
        scores.push(sigma2 / v_hat);
    }

    let mut trace: Vec<FitScore> = {
        let mut seen = evaluated;
        seen.sort_by_key(SubsetMask::bit_string);
        seen.dedup();
        seen.into_iter()
            .map(|mask| FitScore { q: q(&mask), mask })
            .collect()
    };
    trace.sort_by_key(|fs| fs.mask.bit_string());

    Ok((ViReport::new(ViMethod::RfGs, scores, None), trace))
}

/// Exact total index of each mask coordinate under the uniform measure on
/// the 2^p masks: `T_k = E[(q(mask) - q(mask^k))^2] / (4 Var(q))`, evaluated
/// by enumerating every mask once with signature-matched fit seeds. Serves
/// as the convergence oracle for [`rf_gs_vi`].
pub fn rf_gs_vi_exhaustive(
    data: &Dataset,
    params: &ForestParams,
    rng: RngSeed,
) -> Result<ViReport> {
    let p = data.p();
    if p > 15 {
        return Err(Error::InvalidParameter(format!(
            "exhaustive enumeration needs p <= 15, got {p}"
        )));
    }
    let count = 1usize << p;
    let masks: Vec<SubsetMask> = (0..count)
        .map(|code| SubsetMask::from_code(code as u64, p))
        .collect();
    let signatures: Vec<Vec<usize>> = masks.iter().map(|m| canonical_columns(data, m)).collect();
    let q_of = memoized_q(data, &signatures, params, rng.derive(1))?;
    let q: Vec<f64> = signatures.iter().map(|sig| q_of[sig]).collect();

    let q_bar = q.iter().sum::<f64>() / count as f64;
    let var = q.iter().map(|&v| (v - q_bar).powi(2)).sum::<f64>() / count as f64;
    if var == 0.0 {
        return Err(Error::DegenerateSubsetVariance);
    }

    let mut scores = Vec::with_capacity(p);
    for k in 0..p {
        let full: f64 = (0..count)
            .map(|code| (q[code] - q[code ^ (1 << k)]).powi(2))
            .sum();
        // every unordered pair {mask, mask^k} appears exactly twice above
        let paired: f64 = (0..count)
            .filter(|code| code >> k & 1 == 0)
            .map(|code| 2.0 * (q[code] - q[code ^ (1 << k)]).powi(2))
            .sum();
        assert!(
            (full - paired).abs() <= 1e-9 * full.abs().max(1e-300),
            "switch involution pairing violated"
        );
        scores.push(full / count as f64 / 4.0 / var);
    }
    Ok(ViReport::new(ViMethod::RfGs, scores, None))
}
