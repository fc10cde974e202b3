//! Fitting and applying the barycenter post-processor.
//!
//! Fitting partitions the records by group, builds the approximate barycenter
//! of the group output distributions, and solves one transport plan from each
//! group to it. Each training output gets a stored target: the conditional
//! mean of the plan's random mapping (barycentric mode) or one seeded draw
//! from it (stochastic mode).
//!
//! At transform time a record whose output is a stored training support of
//! its group uses its stored target; any other record uses a kernel
//! regression over the group's training supports. Either way the result is
//! `sqrt(alpha) * output + (1 - sqrt(alpha)) * target`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{approximate_barycenter, weights_from_sizes};
use crate::discrete_ot::{
    barycentric_map, check_dim, plan_pushforward, points_to_array, sample_map, solve_transport,
    DiscreteDistribution, TransportPlan,
};
use crate::error::{Error, Result};
use crate::kernel::{default_bandwidth, validate_bandwidth, KernelRegressor};
use crate::seed::derive_seed;

/// One model output with its group and optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub output: Vec<f64>,
    pub group: String,
    pub label: Option<usize>,
}

/// Records sharing one output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    records: Vec<Record>,
    dim: usize,
}

impl GroupedDataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Input("dataset has no records".into()))?;
        let dim = first.output.len();
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        for (row, r) in records.iter().enumerate() {
            check_dim(dim, r.output.len())?;
            if let Some(&v) = r.output.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("record {row}"),
                    value: v,
                });
            }
        }
        Ok(Self { records, dim })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outputs(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.output.clone()).collect()
    }

    pub fn group_labels(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.group.as_str()).collect()
    }

    /// Record indices per group, groups in lexicographic order and records in
    /// data order.
    pub fn partition(&self) -> BTreeMap<String, Vec<usize>> {
        let mut parts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            parts.entry(r.group.clone()).or_default().push(i);
        }
        parts
    }

    pub fn group_ids(&self) -> Vec<String> {
        self.partition().into_keys().collect()
    }

    /// Empirical output distribution of every group, in [`Self::partition`]
    /// order.
    pub fn group_distributions(&self) -> Result<Vec<DiscreteDistribution>> {
        self.partition()
            .values()
            .map(|idx| {
                let pts: Vec<Vec<f64>> = idx
                    .iter()
                    .map(|&i| self.records[i].output.clone())
                    .collect();
                DiscreteDistribution::uniform_from_points(&pts)
            })
            .collect()
    }

    fn labels(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| r.label.ok_or(Error::MissingLabels))
            .collect()
    }

    fn with_label(&self, label: usize) -> Option<GroupedDataset> {
        let records: Vec<Record> = self
            .records
            .iter()
            .filter(|r| r.label == Some(label))
            .cloned()
            .collect();
        (!records.is_empty()).then_some(GroupedDataset {
            records,
            dim: self.dim,
        })
    }
}

/// How the transport plan to the barycenter becomes one target per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Conditional mean of the random mapping.
    #[default]
    Barycentric,
    /// One seeded draw of the random mapping per point.
    Stochastic,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Barycentric => "barycentric",
            Mode::Stochastic => "stochastic",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "barycentric" => Ok(Mode::Barycentric),
            "stochastic" => Ok(Mode::Stochastic),
            other => Err(Error::Input(format!("unknown mode {other:?}"))),
        }
    }
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(())
}

/// `sqrt(alpha) * original + (1 - sqrt(alpha)) * target`.
pub fn interpolate(original: &[f64], target: &[f64], alpha: f64) -> Vec<f64> {
    let a = alpha.sqrt();
    original
        .iter()
        .zip(target)
        .map(|(x, t)| a * x + (1.0 - a) * t)
        .collect()
}

/// Bit pattern used for the in-sample test; `-0.0` is folded into `0.0`.
fn key(output: &[f64]) -> Vec<u64> {
    output
        .iter()
        .map(|&v| if v == 0.0 { 0 } else { v.to_bits() })
        .collect()
}

/// Training supports and targets of one group.
#[derive(Debug, Clone)]
pub struct GroupModel {
    id: String,
    weight: f64,
    regressor: KernelRegressor,
    lookup: HashMap<Vec<u64>, usize>,
}

impl GroupModel {
    fn new(
        id: String,
        weight: f64,
        supports: Array2<f64>,
        targets: Array2<f64>,
        bandwidth: f64,
    ) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(supports.nrows());
        for (i, row) in supports.rows().into_iter().enumerate() {
            lookup
                .entry(key(row.as_slice().expect("row-major")))
                .or_insert(i);
        }
        Ok(Self {
            id,
            weight,
            regressor: KernelRegressor::new(supports, targets, bandwidth)?,
            lookup,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn supports(&self) -> ArrayView2<'_, f64> {
        self.regressor.train_points()
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.regressor.targets()
    }

    /// Lowest index of a training support equal to `output`.
    pub fn find(&self, output: &[f64]) -> Option<usize> {
        self.lookup.get(&key(output)).copied()
    }
}

/// `(id, weight, supports, targets)` of one stored group.
pub type GroupParts = (String, f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Intermediate products of a fit, absent on models loaded from disk.
#[derive(Debug, Clone)]
pub struct FitArtifacts {
    pub barycenter: DiscreteDistribution,
    /// Plan from each group (in group order) to the barycenter.
    pub plans: Vec<TransportPlan>,
}

/// Result of applying the post-processor to one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub output: Vec<f64>,
    pub in_sample: bool,
}

#[derive(Debug, Clone)]
pub struct FittedPostprocessor {
    dim: usize,
    groups: Vec<GroupModel>,
    mode: Mode,
    seed: u64,
    bandwidth: f64,
    artifacts: Option<FitArtifacts>,
}

impl FittedPostprocessor {
    pub fn fit(data: &GroupedDataset, mode: Mode, seed: u64) -> Result<Self> {
        let parts = data.partition();
        let ids: Vec<String> = parts.keys().cloned().collect();
        let dists = data.group_distributions()?;
        let sizes: Vec<usize> = parts.values().map(Vec::len).collect();
        let weights = weights_from_sizes(&sizes);

        let bary = approximate_barycenter(&dists, &weights)?.barycenter;
        let plans: Vec<TransportPlan> = dists
            .par_iter()
            .map(|d| solve_transport(d, &bary))
            .collect::<Result<_>>()?;

        let bandwidth = default_bandwidth(data.dim());
        let mut groups = Vec::with_capacity(ids.len());
        for (s, ((id, dist), plan)) in ids.into_iter().zip(&dists).zip(&plans).enumerate() {
            let targets = match mode {
                Mode::Barycentric => barycentric_map(plan, &bary)?,
                Mode::Stochastic => sample_map(plan, &bary, derive_seed(seed, &[s as u64]))?,
            };
            groups.push(GroupModel::new(
                id,
                weights[s],
                dist.supports().to_owned(),
                targets,
                bandwidth,
            )?);
        }
        Ok(Self {
            dim: data.dim(),
            groups,
            mode,
            seed,
            bandwidth,
            artifacts: Some(FitArtifacts {
                barycenter: bary,
                plans,
            }),
        })
    }

    /// Rebuild a fitted model from stored supports and targets.
    pub fn from_parts(
        dim: usize,
        groups: Vec<GroupParts>,
        mode: Mode,
        seed: u64,
        bandwidth: f64,
    ) -> Result<Self> {
        validate_bandwidth(bandwidth)?;
        if groups.is_empty() {
            return Err(Error::NoGroups);
        }
        let mut models = Vec::with_capacity(groups.len());
        for (id, weight, supports, targets) in groups {
            if supports.is_empty() {
                return Err(Error::EmptyGroup(id));
            }
            let supports = points_to_array(&supports)?;
            let targets = points_to_array(&targets)?;
            check_dim(dim, supports.ncols())?;
            check_dim(dim, targets.ncols())?;
            models.push(GroupModel::new(id, weight, supports, targets, bandwidth)?);
        }
        Ok(Self {
            dim,
            groups: models,
            mode,
            seed,
            bandwidth,
            artifacts: None,
        })
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Result<Self> {
        validate_bandwidth(bandwidth)?;
        self.bandwidth = bandwidth;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn groups(&self) -> &[GroupModel] {
        &self.groups
    }

    pub fn artifacts(&self) -> Option<&FitArtifacts> {
        self.artifacts.as_ref()
    }

    pub fn group(&self, id: &str) -> Result<&GroupModel> {
        self.groups
            .iter()
            .find(|g| g.id == id)
            .ok_or_else(|| Error::UnknownGroup(id.to_string()))
    }

    /// `sum_s p_s W2^2(group_s, barycenter)`, available right after fitting.
    pub fn barycenter_objective(&self) -> Option<f64> {
        self.artifacts.as_ref().map(|a| {
            a.plans
                .iter()
                .zip(&self.groups)
                .map(|(p, g)| g.weight * p.cost())
                .sum()
        })
    }

    /// Image measure of each group's coupling: the barycenter supports
    /// weighted by the plan's column sums.
    pub fn plan_pushforwards(&self) -> Option<Result<Vec<DiscreteDistribution>>> {
        self.artifacts.as_ref().map(|a| {
            a.plans
                .iter()
                .map(|p| plan_pushforward(p, &a.barycenter))
                .collect()
        })
    }

    fn check_output(&self, output: &[f64]) -> Result<()> {
        check_dim(self.dim, output.len())?;
        if let Some(&v) = output.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "record output".into(),
                value: v,
            });
        }
        Ok(())
    }

    /// Stored-target transform for a training record.
    pub fn transform_in_sample(&self, output: &[f64], group: &str, alpha: f64) -> Result<Vec<f64>> {
        validate_alpha(alpha)?;
        self.check_output(output)?;
        let g = self.group(group)?;
        let i = g
            .find(output)
            .ok_or_else(|| Error::NotInSample(group.to_string()))?;
        Ok(interpolate(
            output,
            g.targets().row(i).as_slice().expect("row-major"),
            alpha,
        ))
    }

    /// Same as [`Self::transform_in_sample`] addressed by training index.
    pub fn transform_in_sample_index(
        &self,
        group: &str,
        index: usize,
        alpha: f64,
    ) -> Result<Vec<f64>> {
        validate_alpha(alpha)?;
        let g = self.group(group)?;
        if index >= g.supports().nrows() {
            return Err(Error::NotInSample(group.to_string()));
        }
        let x = g.supports().row(index).to_vec();
        Ok(interpolate(
            &x,
            g.targets().row(index).as_slice().expect("row-major"),
            alpha,
        ))
    }

    /// Kernel-regressed transform for an arbitrary output.
    pub fn transform_out_of_sample(
        &self,
        output: &[f64],
        group: &str,
        alpha: f64,
        bandwidth: f64,
    ) -> Result<Vec<f64>> {
        validate_alpha(alpha)?;
        self.check_output(output)?;
        let g = self.group(group)?;
        let target = g.regressor.regress_with(output, bandwidth)?;
        Ok(interpolate(
            output,
            target.as_slice().expect("contiguous"),
            alpha,
        ))
    }

    /// In-sample transform when `output` is a stored support of `group`,
    /// out-of-sample otherwise.
    pub fn transform(
        &self,
        output: &[f64],
        group: &str,
        alpha: f64,
        bandwidth: f64,
    ) -> Result<Transformed> {
        validate_alpha(alpha)?;
        validate_bandwidth(bandwidth)?;
        self.check_output(output)?;
        let g = self.group(group)?;
        match g.find(output) {
            Some(_) => Ok(Transformed {
                output: self.transform_in_sample(output, group, alpha)?,
                in_sample: true,
            }),
            None => Ok(Transformed {
                output: self.transform_out_of_sample(output, group, alpha, bandwidth)?,
                in_sample: false,
            }),
        }
    }
}

/// Which conditional parity the equalized post-processor targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Notion {
    Plain,
    /// One post-processor per class label.
    Odds,
    /// Only records of this class are post-processed.
    Opportunity(usize),
}

impl fmt::Display for Notion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Notion::Plain => f.write_str("plain"),
            Notion::Odds => f.write_str("odds"),
            Notion::Opportunity(y) => write!(f, "opportunity:{y}"),
        }
    }
}

impl FromStr for Notion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Notion::Plain),
            "odds" => Ok(Notion::Odds),
            _ => s
                .strip_prefix("opportunity:")
                .and_then(|y| y.parse().ok())
                .map(Notion::Opportunity)
                .ok_or_else(|| Error::Input(format!("unknown fairness notion {s:?}"))),
        }
    }
}

/// Per-label post-processors for distributionally equal odds or opportunity.
#[derive(Debug, Clone)]
pub struct EqualizedPostprocessor {
    notion: Notion,
    per_label: BTreeMap<usize, FittedPostprocessor>,
}

impl EqualizedPostprocessor {
    pub fn fit(data: &GroupedDataset, notion: Notion, mode: Mode, seed: u64) -> Result<Self> {
        let labels = data.labels()?;
        let groups = data.group_ids();
        let wanted: Vec<usize> = match notion {
            Notion::Plain => {
                return Err(Error::Invalid(
                    "plain notion does not partition by label; fit a FittedPostprocessor".into(),
                ))
            }
            Notion::Odds => {
                let mut ls = labels.clone();
                ls.sort_unstable();
                ls.dedup();
                ls
            }
            Notion::Opportunity(y) => vec![y],
        };
        let mut per_label = BTreeMap::new();
        for y in wanted {
            let subset = data.with_label(y);
            for g in &groups {
                let present = subset
                    .as_ref()
                    .is_some_and(|d| d.records.iter().any(|r| &r.group == g));
                if !present {
                    return Err(Error::EmptyCell {
                        group: g.clone(),
                        label: y,
                    });
                }
            }
            let subset = subset.expect("checked above");
            per_label.insert(y, FittedPostprocessor::fit(&subset, mode, seed)?);
        }
        Ok(Self { notion, per_label })
    }

    pub fn from_parts(
        notion: Notion,
        per_label: BTreeMap<usize, FittedPostprocessor>,
    ) -> Result<Self> {
        if let Notion::Opportunity(y) = notion {
            if per_label.len() != 1 || !per_label.contains_key(&y) {
                return Err(Error::Invalid(format!(
                    "opportunity:{y} needs exactly one post-processor, for label {y}"
                )));
            }
        }
        if per_label.is_empty() {
            return Err(Error::Invalid("no per-label post-processors".into()));
        }
        Ok(Self { notion, per_label })
    }

    pub fn notion(&self) -> Notion {
        self.notion
    }

    pub fn per_label(&self) -> &BTreeMap<usize, FittedPostprocessor> {
        &self.per_label
    }

    pub fn for_label(&self, label: usize) -> Option<&FittedPostprocessor> {
        self.per_label.get(&label)
    }

    /// Route by `predicted_label` and apply that label's post-processor.
    /// Under equal opportunity, records predicted outside the target class
    /// pass through unchanged.
    pub fn transform(
        &self,
        output: &[f64],
        group: &str,
        predicted_label: usize,
        alpha: f64,
        bandwidth: f64,
    ) -> Result<Transformed> {
        validate_alpha(alpha)?;
        match (self.notion, self.per_label.get(&predicted_label)) {
            (_, Some(fitted)) => fitted.transform(output, group, alpha, bandwidth),
            (Notion::Opportunity(_), None) => Ok(Transformed {
                output: output.to_vec(),
                in_sample: false,
            }),
            (_, None) => Err(Error::UnknownLabel(predicted_label)),
        }
    }
}
