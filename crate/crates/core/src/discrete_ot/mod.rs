//! Exact discrete optimal transport under the squared Euclidean cost.
//!
//! A [`DiscreteDistribution`] is a weighted point cloud in `R^k`. Solving the
//! transportation LP between two of them yields a [`TransportPlan`]; the plan
//! induces a random mapping (row `i` sends source point `i` to target point
//! `j` with probability `gamma[i][j] / p_i`), exposed both in expectation
//! ([`barycentric_map`]) and as seeded draws ([`sample_map`]).

mod network_simplex;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Smallest admissible support weight.
pub const MIN_WEIGHT: f64 = 1e-15;
/// Weight sums within this distance of one are renormalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Weighted point cloud: `n` support points in `R^k` with positive weights
/// summing to one. Duplicate support points are kept as separate atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    supports: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteDistribution {
    pub fn new(supports: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        let (n, k) = supports.dim();
        if n == 0 {
            return Err(Error::EmptyDistribution);
        }
        if k == 0 {
            return Err(Error::ZeroDimension);
        }
        if weights.len() != n {
            return Err(Error::Shape(format!(
                "{n} support points but {} weights",
                weights.len()
            )));
        }
        if let Some(((i, j), &v)) = supports.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("support point {i}, coordinate {j}"),
                value: v,
            });
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < MIN_WEIGHT {
                return Err(Error::InvalidWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::WeightsNotNormalized(total));
        }
        let weights = Array1::from(weights) / total;
        Ok(Self { supports, weights })
    }

    /// Empirical measure putting mass `1/n` on each row.
    pub fn uniform(supports: Array2<f64>) -> Result<Self> {
        let n = supports.nrows();
        if n == 0 {
            return Err(Error::EmptyDistribution);
        }
        Self::new(supports, vec![1.0 / n as f64; n])
    }

    /// Build from a list of equally long vectors.
    pub fn from_points(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        Self::new(points_to_array(points)?, weights)
    }

    pub fn uniform_from_points(points: &[Vec<f64>]) -> Result<Self> {
        Self::uniform(points_to_array(points)?)
    }

    pub fn len(&self) -> usize {
        self.supports.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.supports.ncols()
    }

    pub fn supports(&self) -> ArrayView2<'_, f64> {
        self.supports.view()
    }

    pub fn weights(&self) -> &[f64] {
        self.weights.as_slice().expect("weights are contiguous")
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.supports.row(i)
    }

    /// Weighted mean of the support points.
    pub fn mean(&self) -> Array1<f64> {
        self.weights.dot(&self.supports)
    }

    /// Same weights, every support shifted by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        check_dim(self.dim(), shift.len())?;
        let mut supports = self.supports.clone();
        for mut row in supports.rows_mut() {
            for (x, t) in row.iter_mut().zip(shift) {
                *x += t;
            }
        }
        Ok(Self {
            supports,
            weights: self.weights.clone(),
        })
    }

    /// Same weights, every support multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            supports: &self.supports * factor,
            weights: self.weights.clone(),
        }
    }
}

pub(crate) fn points_to_array(points: &[Vec<f64>]) -> Result<Array2<f64>> {
    let k = points.first().map(Vec::len).unwrap_or(0);
    let mut flat = Vec::with_capacity(points.len() * k);
    for p in points {
        check_dim(k, p.len())?;
        flat.extend_from_slice(p);
    }
    Array2::from_shape_vec((points.len(), k), flat).map_err(|e| Error::Shape(e.to_string()))
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Squared Euclidean distances between the supports of two distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

pub fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn build_cost_matrix(
    src: &DiscreteDistribution,
    dst: &DiscreteDistribution,
) -> Result<CostMatrix> {
    check_dim(src.dim(), dst.dim())?;
    let mut c = Array2::zeros((src.len(), dst.len()));
    for (i, a) in src.supports.rows().into_iter().enumerate() {
        for (j, b) in dst.supports.rows().into_iter().enumerate() {
            let d = squared_distance(a, b);
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("cost entry ({i}, {j})"),
                    value: d,
                });
            }
            c[[i, j]] = d;
        }
    }
    Ok(CostMatrix(c))
}

/// Optimal coupling between two discrete distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    gamma: Array2<f64>,
    source_weights: Vec<f64>,
    target_weights: Vec<f64>,
    cost: f64,
}

impl TransportPlan {
    pub fn gamma(&self) -> ArrayView2<'_, f64> {
        self.gamma.view()
    }

    pub fn source_weights(&self) -> &[f64] {
        &self.source_weights
    }

    pub fn target_weights(&self) -> &[f64] {
        &self.target_weights
    }

    /// Objective value `sum_ij c_ij gamma_ij`, in squared output units.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.gamma.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.gamma.sum_axis(Axis(0)).to_vec()
    }

    /// Largest absolute deviation of a row or column sum from its marginal.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self
            .row_sums()
            .iter()
            .zip(&self.source_weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let cols = self
            .col_sums()
            .iter()
            .zip(&self.target_weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rows.max(cols)
    }

    /// The same coupling read in the opposite direction.
    pub fn transposed(&self) -> Self {
        Self {
            gamma: self.gamma.t().to_owned(),
            source_weights: self.target_weights.clone(),
            target_weights: self.source_weights.clone(),
            cost: self.cost,
        }
    }

    fn check_target(&self, dst: &DiscreteDistribution) -> Result<()> {
        if dst.len() != self.gamma.ncols() {
            return Err(Error::Shape(format!(
                "plan has {} target columns but distribution has {} supports",
                self.gamma.ncols(),
                dst.len()
            )));
        }
        Ok(())
    }
}

/// Solve the transportation LP exactly and return an optimal vertex coupling.
pub fn solve_transport(
    src: &DiscreteDistribution,
    dst: &DiscreteDistribution,
) -> Result<TransportPlan> {
    let cost = build_cost_matrix(src, dst)?.into_inner();
    let gamma = network_simplex::solve(&cost, src.weights(), dst.weights())?;
    let total = (&cost * &gamma).sum();
    Ok(TransportPlan {
        gamma,
        source_weights: src.weights().to_vec(),
        target_weights: dst.weights().to_vec(),
        cost: total.max(0.0),
    })
}

/// Squared Wasserstein-2 distance.
pub fn w2_squared(src: &DiscreteDistribution, dst: &DiscreteDistribution) -> Result<f64> {
    Ok(solve_transport(src, dst)?.cost())
}

/// Conditional mean of the plan's random mapping for every source point.
///
/// Row `i` is `sum_j gamma_ij * y_j / sum_j gamma_ij`, a convex combination of
/// the target supports.
pub fn barycentric_map(plan: &TransportPlan, dst: &DiscreteDistribution) -> Result<Array2<f64>> {
    plan.check_target(dst)?;
    let mut out = plan.gamma.dot(&dst.supports);
    for (mut row, mass) in out.rows_mut().into_iter().zip(plan.row_sums()) {
        row /= mass;
    }
    Ok(out)
}

/// One seeded realization of the plan's random mapping.
///
/// Source point `i` draws target `j` with probability `gamma_ij / p_i` from a
/// stream seeded by `(seed, i)`, so rows are independent of evaluation order.
pub fn sample_map(
    plan: &TransportPlan,
    dst: &DiscreteDistribution,
    seed: u64,
) -> Result<Array2<f64>> {
    plan.check_target(dst)?;
    let mut out = Array2::zeros((plan.gamma.nrows(), dst.dim()));
    for (i, row) in plan.gamma.rows().into_iter().enumerate() {
        let j = draw_index(row, derive_seed(seed, &[i as u64]));
        out.row_mut(i).assign(&dst.point(j));
    }
    Ok(out)
}

fn draw_index(row: ArrayView1<'_, f64>, seed: u64) -> usize {
    let mass: f64 = row.sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &g) in row.iter().enumerate() {
        if g <= 0.0 {
            continue;
        }
        acc += g;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

/// Distribution of the plan's image: target supports weighted by the column
/// sums of the coupling.
pub fn plan_pushforward(
    plan: &TransportPlan,
    dst: &DiscreteDistribution,
) -> Result<DiscreteDistribution> {
    plan.check_target(dst)?;
    DiscreteDistribution::new(dst.supports.clone(), plan.col_sums())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dist(points: Array2<f64>) -> DiscreteDistribution {
        DiscreteDistribution::uniform(points).unwrap()
    }

    #[test]
    fn rejects_tiny_weights() {
        let err = DiscreteDistribution::new(array![[0.0], [1.0]], vec![1.0, 1e-16]).unwrap_err();
        assert!(matches!(err, Error::InvalidWeight { index: 1, .. }));
    }

    #[test]
    fn renormalizes_near_unit_sums_only() {
        let d = DiscreteDistribution::new(array![[0.0], [1.0]], vec![0.5, 0.5 + 5e-10]).unwrap();
        assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let err = DiscreteDistribution::new(array![[0.0], [1.0]], vec![0.5, 0.6]).unwrap_err();
        assert!(matches!(err, Error::WeightsNotNormalized(_)));
    }

    #[test]
    fn rejects_empty_and_zero_dimension() {
        assert!(matches!(
            DiscreteDistribution::uniform(Array2::zeros((0, 2))),
            Err(Error::EmptyDistribution)
        ));
        assert!(matches!(
            DiscreteDistribution::uniform(Array2::zeros((2, 0))),
            Err(Error::ZeroDimension)
        ));
    }

    #[test]
    fn cost_matrix_small_cases() {
        let a = dist(array![[0.0, 0.0]]);
        assert_eq!(
            build_cost_matrix(&a, &a).unwrap().into_inner(),
            array![[0.0]]
        );
        let src = dist(array![[0.0, 0.0], [1.0, 0.0]]);
        let dst = dist(array![[0.0, 1.0]]);
        assert_eq!(
            build_cost_matrix(&src, &dst).unwrap().into_inner(),
            array![[1.0], [2.0]]
        );
    }

    #[test]
    fn cost_matrix_dimension_error() {
        let a = dist(array![[0.0, 0.0]]);
        let b = dist(array![[0.0]]);
        assert!(matches!(
            build_cost_matrix(&a, &b),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert!(solve_transport(&a, &b).is_err());
    }

    #[test]
    fn monotone_matching_in_one_dimension() {
        let src = dist(array![[0.0], [1.0]]);
        let dst = dist(array![[2.0], [3.0]]);
        let plan = solve_transport(&src, &dst).unwrap();
        assert!((plan.cost() - 4.0).abs() < 1e-12);
        assert_eq!(plan.gamma(), array![[0.5, 0.0], [0.0, 0.5]]);
        let mapped = barycentric_map(&plan, &dst).unwrap();
        assert_eq!(mapped, array![[2.0], [3.0]]);
    }

    #[test]
    fn identical_distributions_have_zero_cost() {
        let a = dist(array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]);
        let plan = solve_transport(&a, &a).unwrap();
        assert_eq!(plan.cost(), 0.0);
        let c = build_cost_matrix(&a, &a).unwrap().into_inner();
        for ((i, j), g) in plan.gamma().indexed_iter() {
            if *g > 0.0 {
                assert_eq!(c[[i, j]], 0.0);
            }
        }
        assert_eq!(barycentric_map(&plan, &a).unwrap(), a.supports());
    }

    #[test]
    fn point_masses() {
        let a = dist(array![[1.0, 2.0]]);
        let b = dist(array![[4.0, 6.0]]);
        assert_eq!(w2_squared(&a, &b).unwrap(), 25.0);
    }

    #[test]
    fn point_mass_source_maps_to_target_mean() {
        let src = dist(array![[5.0, 5.0]]);
        let dst = DiscreteDistribution::new(
            array![[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]],
            vec![0.5, 0.25, 0.25],
        )
        .unwrap();
        let plan = solve_transport(&src, &dst).unwrap();
        let mapped = barycentric_map(&plan, &dst).unwrap();
        let mean = dst.mean();
        for (a, b) in mapped.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_a_deterministic_plan_matches_expectation() {
        let src = dist(array![[0.0], [1.0]]);
        let dst = dist(array![[2.0], [3.0]]);
        let plan = solve_transport(&src, &dst).unwrap();
        let expected = barycentric_map(&plan, &dst).unwrap();
        for seed in [0, 1, 99, u64::MAX] {
            assert_eq!(sample_map(&plan, &dst, seed).unwrap(), expected);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let src = dist(array![[0.0]]);
        let dst = dist(array![[1.0], [2.0], [3.0], [4.0]]);
        let plan = solve_transport(&src, &dst).unwrap();
        assert_eq!(
            sample_map(&plan, &dst, 42).unwrap(),
            sample_map(&plan, &dst, 42).unwrap()
        );
    }

    #[test]
    fn sampling_frequencies_follow_plan_rows() {
        // One source point spread over three targets with probabilities
        // (0.5, 0.3, 0.2); each seed yields one multinomial draw.
        let src = dist(array![[0.0]]);
        let dst =
            DiscreteDistribution::new(array![[1.0], [2.0], [3.0]], vec![0.5, 0.3, 0.2]).unwrap();
        let plan = solve_transport(&src, &dst).unwrap();
        let draws = 100_000u64;
        let mut counts = [0u64; 3];
        for seed in 0..draws {
            let y = sample_map(&plan, &dst, seed).unwrap()[[0, 0]];
            counts[y as usize - 1] += 1;
        }
        for (c, p) in counts.iter().zip([0.5, 0.3, 0.2]) {
            let freq = *c as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn transposed_plan_maps_back() {
        let src = dist(array![[0.0], [1.0]]);
        let dst = dist(array![[2.0], [3.0]]);
        let plan = solve_transport(&src, &dst).unwrap();
        let back = barycentric_map(&plan.transposed(), &src).unwrap();
        assert_eq!(back, array![[0.0], [1.0]]);
    }

    #[test]
    fn pushforward_recovers_target() {
        let src = dist(array![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]);
        let dst = dist(array![[0.0, 1.0], [3.0, 3.0]]);
        let plan = solve_transport(&src, &dst).unwrap();
        let push = plan_pushforward(&plan, &dst).unwrap();
        assert!(w2_squared(&push, &dst).unwrap() < 1e-12);
    }
}
