//! Wasserstein-2 barycenters of group output distributions.
//!
//! [`approximate_barycenter`] builds the pairwise approximation: every group
//! point `x` of group `s` is sent to
//!
//! ```text
//! M(x) = sum_{s'} p_{s'} E[T_{s,s'}(x)]
//! ```
//!
//! where `T_{s,s'}` is the optimal random mapping between groups `s` and `s'`
//! and `T_{s,s}` is the identity. The resulting measure puts mass
//! `p_s * w_{s,i}` on `M(x_{s,i})` and is within a factor two of the optimal
//! barycenter objective.
//!
//! [`exact_barycenter`] solves the multi-marginal LP and is meant for small
//! instances (tests, evaluation of tiny datasets).

mod multi_marginal;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::discrete_ot::{
    barycentric_map, check_dim, solve_transport, w2_squared, DiscreteDistribution, TransportPlan,
    NORMALIZATION_TOL,
};
use crate::error::{Error, Result};

/// Default limit on the number of support tuples the exact solver accepts.
pub const DEFAULT_ORACLE_CAP: u128 = 100_000;

/// Basic solutions with less mass than this are treated as numerical zeros.
const EXACT_MASS_FLOOR: f64 = 1e-14;

/// Output of [`approximate_barycenter`].
#[derive(Debug, Clone)]
pub struct BarycenterResult {
    /// Supports are the mapped points of every group, in group order.
    pub barycenter: DiscreteDistribution,
    /// `per_group_targets[s]` row `i` is `M` applied to point `i` of group `s`.
    pub per_group_targets: Vec<Array2<f64>>,
    pub group_weights: Vec<f64>,
}

/// `p_s = n_s / sum n`.
pub fn weights_from_sizes(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    sizes.iter().map(|&n| n as f64 / total as f64).collect()
}

fn validate(groups: &[DiscreteDistribution], weights: &[f64]) -> Result<Vec<f64>> {
    let first = groups.first().ok_or(Error::NoGroups)?;
    for g in &groups[1..] {
        check_dim(first.dim(), g.dim())?;
    }
    if weights.len() != groups.len() {
        return Err(Error::Shape(format!(
            "{} groups but {} group weights",
            groups.len(),
            weights.len()
        )));
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::InvalidWeight { index, value });
        }
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::WeightsNotNormalized(total));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Optimal plans for every pair `s < s'`, solved in parallel and returned in
/// lexicographic pair order.
fn pairwise_plans(groups: &[DiscreteDistribution]) -> Result<Vec<((usize, usize), TransportPlan)>> {
    let m = groups.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|s| (s + 1..m).map(move |t| (s, t)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(s, t)| solve_transport(&groups[s], &groups[t]).map(|plan| ((s, t), plan)))
        .collect()
}

pub fn approximate_barycenter(
    groups: &[DiscreteDistribution],
    weights: &[f64],
) -> Result<BarycenterResult> {
    let weights = validate(groups, weights)?;
    let m = groups.len();
    let plans = pairwise_plans(groups)?;
    let plan_for =
        |s: usize, t: usize| &plans[plans.iter().position(|(p, _)| *p == (s, t)).unwrap()].1;

    let mut per_group_targets = Vec::with_capacity(m);
    for s in 0..m {
        let mut mapped = &groups[s].supports() * weights[s];
        for t in 0..m {
            if t == s {
                continue;
            }
            let expected = if s < t {
                barycentric_map(plan_for(s, t), &groups[t])?
            } else {
                barycentric_map(&plan_for(t, s).transposed(), &groups[t])?
            };
            mapped.scaled_add(weights[t], &expected);
        }
        per_group_targets.push(mapped);
    }

    let views: Vec<_> = per_group_targets.iter().map(|a| a.view()).collect();
    let supports =
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let masses: Vec<f64> = groups
        .iter()
        .zip(&weights)
        .flat_map(|(g, &p)| g.weights().iter().map(move |w| p * w))
        .collect();
    Ok(BarycenterResult {
        barycenter: DiscreteDistribution::new(supports, masses)?,
        per_group_targets,
        group_weights: weights,
    })
}

/// `Psi(candidate) = sum_s p_s W2^2(group_s, candidate)`.
pub fn barycenter_objective(
    candidate: &DiscreteDistribution,
    groups: &[DiscreteDistribution],
    weights: &[f64],
) -> Result<f64> {
    let weights = validate(groups, weights)?;
    check_dim(groups[0].dim(), candidate.dim())?;
    let distances: Vec<f64> = groups
        .par_iter()
        .map(|g| w2_squared(g, candidate))
        .collect::<Result<_>>()?;
    Ok(distances.iter().zip(&weights).map(|(d, p)| p * d).sum())
}

/// Exact barycenter together with the optimal LP objective, which equals
/// `Psi` at the barycenter.
#[derive(Debug, Clone)]
pub struct ExactBarycenter {
    pub barycenter: DiscreteDistribution,
    pub objective: f64,
}

/// Number of support tuples of the multi-marginal problem.
pub fn tuple_count(groups: &[DiscreteDistribution]) -> u128 {
    groups.iter().map(|g| g.len() as u128).product()
}

fn check_cap(groups: &[DiscreteDistribution], cap: u128) -> Result<usize> {
    let tuples = tuple_count(groups);
    if tuples > cap {
        return Err(Error::OracleCapExceeded { tuples, cap });
    }
    usize::try_from(tuples).map_err(|_| Error::OracleCapExceeded { tuples, cap })
}

/// Exact barycenter. One group is its own barycenter; for two groups the
/// multi-marginal problem is the ordinary transport problem with cost
/// `p_1 p_2 |x - y|^2`, solved by the network simplex; three or more groups go
/// through [`exact_barycenter_lp`].
pub fn exact_barycenter(
    groups: &[DiscreteDistribution],
    weights: &[f64],
    cap: u128,
) -> Result<ExactBarycenter> {
    let weights = validate(groups, weights)?;
    check_cap(groups, cap)?;
    match groups.len() {
        1 => Ok(ExactBarycenter {
            barycenter: groups[0].clone(),
            objective: 0.0,
        }),
        2 => {
            let plan = solve_transport(&groups[0], &groups[1])?;
            let (p, q) = (weights[0], weights[1]);
            let mut points = Vec::new();
            let mut masses = Vec::new();
            for ((i, j), &g) in plan.gamma().indexed_iter() {
                if g > EXACT_MASS_FLOOR {
                    let x = groups[0].point(i);
                    let y = groups[1].point(j);
                    points.push(x.iter().zip(y.iter()).map(|(a, b)| p * a + q * b).collect());
                    masses.push(g);
                }
            }
            Ok(ExactBarycenter {
                barycenter: renormalized(&points, masses)?,
                objective: p * q * plan.cost(),
            })
        }
        _ => exact_barycenter_lp(groups, &weights, cap),
    }
}

/// Exact barycenter through the tuple-indexed multi-marginal LP, for any
/// number of groups `>= 2`.
pub fn exact_barycenter_lp(
    groups: &[DiscreteDistribution],
    weights: &[f64],
    cap: u128,
) -> Result<ExactBarycenter> {
    let weights = validate(groups, weights)?;
    let tuples = check_cap(groups, cap)?;
    if groups.len() == 1 {
        return exact_barycenter(groups, &weights, cap);
    }
    let sol = multi_marginal::solve(groups, &weights, tuples)?;
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for (idx, x) in &sol.basis {
        if *x > EXACT_MASS_FLOOR {
            points.push(multi_marginal::tuple_mean(groups, &weights, idx));
            masses.push(*x);
        }
    }
    Ok(ExactBarycenter {
        barycenter: renormalized(&points, masses)?,
        objective: sol.objective,
    })
}

/// The exact barycenter measure alone.
pub fn exact_barycenter_oracle(
    groups: &[DiscreteDistribution],
    weights: &[f64],
    cap: u128,
) -> Result<DiscreteDistribution> {
    exact_barycenter(groups, weights, cap).map(|e| e.barycenter)
}

fn renormalized(points: &[Vec<f64>], masses: Vec<f64>) -> Result<DiscreteDistribution> {
    let total: f64 = masses.iter().sum();
    DiscreteDistribution::from_points(points, masses.iter().map(|m| m / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn uniform(points: Array2<f64>) -> DiscreteDistribution {
        DiscreteDistribution::uniform(points).unwrap()
    }

    #[test]
    fn single_group_is_its_own_barycenter() {
        let g = uniform(array![[0.0, 1.0], [2.0, 3.0], [-1.0, 0.5]]);
        let res = approximate_barycenter(std::slice::from_ref(&g), &[1.0]).unwrap();
        assert_eq!(res.barycenter, g);
        assert_eq!(res.per_group_targets[0], g.supports());
        assert_eq!(
            barycenter_objective(&g, std::slice::from_ref(&g), &[1.0]).unwrap(),
            0.0
        );
        assert_eq!(
            exact_barycenter_oracle(std::slice::from_ref(&g), &[1.0], DEFAULT_ORACLE_CAP).unwrap(),
            g
        );
    }

    #[test]
    fn two_point_masses_meet_in_the_middle() {
        let a = uniform(array![[0.0, 0.0]]);
        let b = uniform(array![[2.0, 4.0]]);
        let res = approximate_barycenter(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
        for row in res.barycenter.supports().rows() {
            assert_eq!(row.to_vec(), vec![1.0, 2.0]);
        }
        assert!((res.barycenter.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let exact = exact_barycenter_oracle(&[a, b], &[0.5, 0.5], DEFAULT_ORACLE_CAP).unwrap();
        assert_eq!(exact.len(), 1);
        assert_eq!(exact.point(0).to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn objective_of_point_masses() {
        let a = uniform(array![[0.0]]);
        let b = uniform(array![[2.0]]);
        let mid = uniform(array![[1.0]]);
        assert_eq!(
            barycenter_objective(&mid, &[a, b], &[0.5, 0.5]).unwrap(),
            1.0
        );
    }

    #[test]
    fn barycenter_weights_follow_group_weights() {
        let a = uniform(array![[0.0], [1.0]]);
        let b = uniform(array![[5.0], [6.0], [7.0]]);
        let p = weights_from_sizes(&[2, 3]);
        let res = approximate_barycenter(&[a, b], &p).unwrap();
        assert_eq!(res.barycenter.len(), 5);
        for w in res.barycenter.weights() {
            assert!((w - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            approximate_barycenter(&[], &[]),
            Err(Error::NoGroups)
        ));
        let a = uniform(array![[0.0]]);
        let b = uniform(array![[0.0, 1.0]]);
        assert!(matches!(
            approximate_barycenter(&[a.clone(), b], &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            approximate_barycenter(&[a.clone(), a.clone()], &[0.5, 0.6]),
            Err(Error::WeightsNotNormalized(_))
        ));
        let big = uniform(Array2::zeros((50, 1)));
        assert!(matches!(
            exact_barycenter_oracle(&[big.clone(), big.clone(), big], &[0.3, 0.3, 0.4], 100_000),
            Err(Error::OracleCapExceeded {
                tuples: 125_000,
                ..
            })
        ));
    }
}
