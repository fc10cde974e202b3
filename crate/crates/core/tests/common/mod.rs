//! Test-only oracles, independent of the library's solvers.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use baryfair::discrete_ot::DiscreteDistribution;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random distribution with `n` points in `R^k` and random positive weights.
pub fn random_distribution(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    uniform: bool,
) -> DiscreteDistribution {
    let supports = Array2::from_shape_fn((n, k), |_| rng.random_range(-2.0..2.0));
    if uniform {
        return DiscreteDistribution::uniform(supports).unwrap();
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteDistribution::new(supports, raw.iter().map(|w| w / total).collect()).unwrap()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Minimum transport cost by enumerating every basic feasible solution of the
/// transportation polytope: each basis is a spanning tree of the complete
/// bipartite graph, whose flows follow from peeling leaves.
pub fn brute_force_transport_cost(
    src_points: &[Vec<f64>],
    src_w: &[f64],
    dst_points: &[Vec<f64>],
    dst_w: &[f64],
) -> f64 {
    let (m, n) = (src_points.len(), dst_points.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let size = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(size);
    combinations(cells.len(), size, 0, &mut chosen, &mut |subset| {
        let edges: Vec<(usize, usize)> = subset.iter().map(|&c| cells[c]).collect();
        if !is_spanning_tree(m, n, &edges) {
            return;
        }
        if let Some(flows) = peel(m, n, &edges, src_w, dst_w) {
            let cost: f64 = edges
                .iter()
                .zip(&flows)
                .map(|(&(i, j), f)| f * sq_dist(&src_points[i], &dst_points[j]))
                .sum();
            best = best.min(cost);
        }
    });
    best
}

fn combinations(
    total: usize,
    k: usize,
    start: usize,
    acc: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if acc.len() == k {
        f(acc);
        return;
    }
    for c in start..total {
        if total - c < k - acc.len() {
            break;
        }
        acc.push(c);
        combinations(total, k, c + 1, acc, f);
        acc.pop();
    }
}

fn is_spanning_tree(m: usize, n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        r
    }
    for &(i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, m + j));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

fn peel(
    m: usize,
    n: usize,
    edges: &[(usize, usize)],
    src_w: &[f64],
    dst_w: &[f64],
) -> Option<Vec<f64>> {
    let mut remaining: Vec<f64> = src_w.iter().chain(dst_w).cloned().collect();
    let mut flows = vec![f64::NAN; edges.len()];
    let mut alive = vec![true; edges.len()];
    for _ in 0..edges.len() {
        let mut degree = vec![0usize; m + n];
        for (e, &(i, j)) in edges.iter().enumerate() {
            if alive[e] {
                degree[i] += 1;
                degree[m + j] += 1;
            }
        }
        let (e, leaf) = edges
            .iter()
            .enumerate()
            .filter(|(e, _)| alive[*e])
            .find_map(|(e, &(i, j))| {
                if degree[i] == 1 {
                    Some((e, i))
                } else if degree[m + j] == 1 {
                    Some((e, m + j))
                } else {
                    None
                }
            })?;
        let (i, j) = edges[e];
        let other = if leaf == i { m + j } else { i };
        let f = remaining[leaf];
        flows[e] = f;
        remaining[leaf] = 0.0;
        remaining[other] -= f;
        alive[e] = false;
    }
    if flows.iter().any(|&f| f < -1e-12) {
        return None;
    }
    Some(flows)
}

pub fn rows(d: &DiscreteDistribution) -> Vec<Vec<f64>> {
    d.supports()
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect()
}

/// Solve a square linear system by Gaussian elimination; `None` if singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for j in c..n {
                a[r][j] -= f * a[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| a[r][j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Exact barycenter objective of tiny instances by enumerating every basis of
/// the multi-marginal LP (one marginal row dropped per group after the first).
pub fn brute_force_multi_marginal(groups: &[DiscreteDistribution], weights: &[f64]) -> f64 {
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let tuples: Vec<Vec<usize>> = sizes.iter().fold(vec![vec![]], |acc, &n| {
        acc.into_iter()
            .flat_map(|t| {
                (0..n).map(move |i| {
                    let mut t = t.clone();
                    t.push(i);
                    t
                })
            })
            .collect()
    });
    let mut rows: Vec<(usize, usize)> = Vec::new();
    let mut rhs = Vec::new();
    for (s, g) in groups.iter().enumerate() {
        for i in 0..g.len() {
            if s == 0 || i + 1 < g.len() {
                rows.push((s, i));
                rhs.push(g.weights()[i]);
            }
        }
    }
    let cost = |t: &[usize]| -> f64 {
        let k = groups[0].dim();
        let mean: Vec<f64> = (0..k)
            .map(|d| {
                t.iter()
                    .enumerate()
                    .map(|(s, &i)| weights[s] * groups[s].point(i)[d])
                    .sum()
            })
            .collect();
        t.iter()
            .enumerate()
            .map(|(s, &i)| weights[s] * sq_dist(&groups[s].point(i).to_vec(), &mean))
            .sum()
    };
    let r = rows.len();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    combinations(tuples.len(), r, 0, &mut chosen, &mut |subset| {
        let a: Vec<Vec<f64>> = rows
            .iter()
            .map(|&(s, i)| {
                subset
                    .iter()
                    .map(|&c| if tuples[c][s] == i { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        if let Some(x) = solve_square(a, rhs.clone()) {
            if x.iter().all(|&v| v >= -1e-12) {
                let c: f64 = subset
                    .iter()
                    .zip(&x)
                    .map(|(&t, v)| v * cost(&tuples[t]))
                    .sum();
                best = best.min(c);
            }
        }
    });
    best
}

/// Dataset with `sizes[g]` records in group `g{g}`, outputs uniform in
/// `[-2, 2)^k`, records of different groups interleaved.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    sizes: &[usize],
    k: usize,
) -> baryfair::postprocess::GroupedDataset {
    let mut records = Vec::new();
    let longest = sizes.iter().copied().max().unwrap_or(0);
    for i in 0..longest {
        for (g, &n) in sizes.iter().enumerate() {
            if i < n {
                records.push(baryfair::postprocess::Record {
                    output: (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    group: format!("g{g}"),
                    label: None,
                });
            }
        }
    }
    baryfair::postprocess::GroupedDataset::new(records).unwrap()
}

/// Points of `d` grouped by group id, in lexicographic group order.
pub fn points_by_group(
    d: &baryfair::postprocess::GroupedDataset,
    outputs: &[Vec<f64>],
) -> Vec<Vec<Vec<f64>>> {
    d.partition()
        .values()
        .map(|idx| idx.iter().map(|&i| outputs[i].clone()).collect())
        .collect()
}

pub fn uniform_groups(points: &[Vec<Vec<f64>>]) -> Vec<DiscreteDistribution> {
    points
        .iter()
        .map(|p| DiscreteDistribution::uniform_from_points(p).unwrap())
        .collect()
}
