//! Evaluation quantities: unfairness, approximation error, pairwise distances,
//! the multi-class demographic-parity gap and the per-coordinate
//! quantile-matching baseline.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{
    approximate_barycenter, barycenter_objective, exact_barycenter, tuple_count, weights_from_sizes,
};
use crate::discrete_ot::{w2_squared, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::postprocess::{FittedPostprocessor, GroupedDataset};

/// Which barycenter anchored an unfairness value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarycenterReference {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unfairness {
    pub value: f64,
    pub reference: BarycenterReference,
}

/// `sum_s p_s W2^2(group_s, barycenter)`, measured against the exact
/// barycenter when the number of support tuples is at most `oracle_cap` and
/// against the approximate barycenter otherwise.
pub fn unfairness(
    groups: &[DiscreteDistribution],
    weights: &[f64],
    oracle_cap: u128,
) -> Result<Unfairness> {
    if groups.is_empty() {
        return Err(Error::NoGroups);
    }
    if tuple_count(groups) <= oracle_cap {
        let exact = exact_barycenter(groups, weights, oracle_cap)?;
        return Ok(Unfairness {
            value: exact.objective.max(0.0),
            reference: BarycenterReference::Exact,
        });
    }
    let approx = approximate_barycenter(groups, weights)?;
    Ok(Unfairness {
        value: barycenter_objective(&approx.barycenter, groups, weights)?,
        reference: BarycenterReference::Approximate,
    })
}

/// Mean squared Euclidean deviation between paired outputs.
pub fn approximation_error(original: &[Vec<f64>], processed: &[Vec<f64>]) -> Result<f64> {
    if original.len() != processed.len() {
        return Err(Error::Shape(format!(
            "{} original outputs but {} processed outputs",
            original.len(),
            processed.len()
        )));
    }
    if original.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut total = 0.0;
    for (a, b) in original.iter().zip(processed) {
        crate::discrete_ot::check_dim(a.len(), b.len())?;
        total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total / original.len() as f64)
}

/// Symmetric matrix of `W2^2` between every pair of groups.
pub fn pairwise_w2(groups: &[DiscreteDistribution]) -> Result<Array2<f64>> {
    let m = groups.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|s| (s + 1..m).map(move |t| (s, t)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(s, t)| w2_squared(&groups[s], &groups[t]))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((m, m));
    for (&(s, t), v) in pairs.iter().zip(values) {
        out[[s, t]] = v;
        out[[t, s]] = v;
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(output: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in output.iter().enumerate().skip(1) {
        if v > output[best] {
            best = i;
        }
    }
    best
}

/// Largest difference, over classes and pairs of groups, between the
/// frequencies with which each group's argmax prediction equals the class.
pub fn multiclass_dp_gap(outputs: &[Vec<f64>], groups: &[&str]) -> Result<f64> {
    if outputs.len() != groups.len() {
        return Err(Error::Shape(format!(
            "{} outputs but {} group labels",
            outputs.len(),
            groups.len()
        )));
    }
    let k = outputs.first().ok_or(Error::EmptyDistribution)?.len();
    if k < 2 {
        return Err(Error::Invalid(format!(
            "demographic parity gap needs at least 2 classes, got {k}"
        )));
    }
    let mut counts: BTreeMap<&str, (Vec<usize>, usize)> = BTreeMap::new();
    for (o, &g) in outputs.iter().zip(groups) {
        crate::discrete_ot::check_dim(k, o.len())?;
        let entry = counts.entry(g).or_insert_with(|| (vec![0; k], 0));
        entry.0[argmax(o)] += 1;
        entry.1 += 1;
    }
    let mut gap: f64 = 0.0;
    for y in 0..k {
        let freqs = counts.values().map(|(c, n)| c[y] as f64 / *n as f64);
        let (lo, hi) = freqs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
            (lo.min(f), hi.max(f))
        });
        gap = gap.max(hi - lo);
    }
    Ok(gap)
}

/// Match every coordinate independently across groups: a value of group `s`
/// at empirical CDF level `t` within its group becomes `sum_s' p_s' Q_s'(t)`.
///
/// `F(v)` counts values `<= v`, so tied values share the rank of the last of
/// them, and `Q(t) = inf { y : F(y) >= t }`. Outputs follow record order.
pub fn per_coordinate_baseline(data: &GroupedDataset) -> Result<Vec<Vec<f64>>> {
    let parts: Vec<Vec<usize>> = data.partition().into_values().collect();
    let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
    let weights = weights_from_sizes(&sizes);
    let records = data.records();

    let columns: Vec<Vec<f64>> = (0..data.dim())
        .map(|j| {
            let sorted: Vec<Vec<f64>> = parts
                .iter()
                .map(|idx| {
                    let mut v: Vec<f64> = idx.iter().map(|&i| records[i].output[j]).collect();
                    v.sort_by(f64::total_cmp);
                    v
                })
                .collect();
            let mut column = vec![0.0; records.len()];
            for (own, idx) in sorted.iter().zip(&parts) {
                for &i in idx {
                    let v = records[i].output[j];
                    let rank = own.partition_point(|&x| x <= v);
                    column[i] = sorted
                        .iter()
                        .zip(&weights)
                        .map(|(other, p)| {
                            // ceil(rank * n' / n_s) - 1 without going through floats.
                            let q = (rank * other.len()).div_ceil(own.len()) - 1;
                            p * other[q]
                        })
                        .sum();
                }
            }
            column
        })
        .collect();
    Ok((0..records.len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect())
}

fn require_artifacts(fitted: &FittedPostprocessor) -> Result<Vec<DiscreteDistribution>> {
    fitted.plan_pushforwards().ok_or_else(|| {
        Error::Invalid("model carries no transport plans; refit to evaluate couplings".into())
    })?
}

/// `W2^2` between each group's plan pushforward and the approximate
/// barycenter, in group order.
pub fn pushforward_to_barycenter_w2(fitted: &FittedPostprocessor) -> Result<Vec<f64>> {
    let pushed = require_artifacts(fitted)?;
    let bary = &fitted.artifacts().expect("checked above").barycenter;
    pushed.par_iter().map(|p| w2_squared(p, bary)).collect()
}

/// Pairwise `W2^2` between the groups' plan pushforwards.
pub fn pushforward_pairwise_w2(fitted: &FittedPostprocessor) -> Result<Array2<f64>> {
    pairwise_w2(&require_artifacts(fitted)?)
}

/// Group distributions and weights of a dataset, in group order.
pub fn dataset_groups(
    data: &GroupedDataset,
) -> Result<(Vec<String>, Vec<DiscreteDistribution>, Vec<f64>)> {
    let parts = data.partition();
    let sizes: Vec<usize> = parts.values().map(Vec::len).collect();
    Ok((
        parts.into_keys().collect(),
        data.group_distributions()?,
        weights_from_sizes(&sizes),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(rename = "U")]
    pub unfairness_u: f64,
    #[serde(rename = "R")]
    pub error_r: f64,
    pub barycenter: BarycenterReference,
    pub groups: Vec<String>,
    pub pairwise_w2: Vec<Vec<f64>>,
    pub dp_gap: Option<f64>,
}

/// Full report for `processed` against `original`. Records are paired by
/// position and must agree on their groups.
pub fn evaluate(
    original: &GroupedDataset,
    processed: &GroupedDataset,
    alpha: Option<f64>,
    oracle_cap: u128,
) -> Result<FairnessReport> {
    if original.len() != processed.len() {
        return Err(Error::Input(format!(
            "original has {} rows but processed has {}",
            original.len(),
            processed.len()
        )));
    }
    for (row, (a, b)) in original
        .records()
        .iter()
        .zip(processed.records())
        .enumerate()
    {
        if a.group != b.group {
            return Err(Error::Input(format!(
                "row {}: group {:?} in original but {:?} in processed",
                row + 1,
                a.group,
                b.group
            )));
        }
    }
    let (ids, groups, weights) = dataset_groups(processed)?;
    let u = unfairness(&groups, &weights, oracle_cap)?;
    let pairwise = pairwise_w2(&groups)?;
    let outputs = processed.outputs();
    let dp_gap = if processed.dim() >= 2 {
        Some(multiclass_dp_gap(&outputs, &processed.group_labels())?)
    } else {
        None
    };
    Ok(FairnessReport {
        alpha,
        unfairness_u: u.value,
        error_r: approximation_error(&original.outputs(), &outputs)?,
        barycenter: u.reference,
        groups: ids,
        pairwise_w2: pairwise.rows().into_iter().map(|r| r.to_vec()).collect(),
        dp_gap,
    })
}
