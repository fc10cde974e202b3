//! Multi-marginal transport LP for the exact barycenter of `m >= 3` groups.
//!
//! Variables are indexed by support tuples `(i_1, ..., i_m)`, one point per
//! group. The constraints fix every group marginal. One constraint per group
//! beyond the first is redundant; we drop the row of point 0 for groups
//! `1..m`, which leaves a full-rank system. The columns are generated on the
//! fly during pricing, so memory is linear in the number of tuples.
//!
//! The solver is a revised simplex with an explicit basis inverse, started
//! from a staircase (north-west corner) basis and refactored periodically.
//! Dantzig pricing switches to Bland's rule after a run of degenerate pivots.

use crate::discrete_ot::DiscreteDistribution;
use crate::error::{Error, Result};

const REFACTOR_EVERY: usize = 50;
const DEGENERATE_RUN: usize = 30;
const PIVOT_TOL: f64 = 1e-11;

pub(crate) struct MultiMarginalSolution {
    /// `(tuple, mass)` for every basic tuple.
    pub basis: Vec<(Vec<usize>, f64)>,
    pub objective: f64,
}

struct Problem<'a> {
    groups: &'a [DiscreteDistribution],
    weights: &'a [f64],
    sizes: Vec<usize>,
    /// Row index of `(group, point)`, `None` for the dropped rows.
    row_of: Vec<Vec<Option<usize>>>,
    rhs: Vec<f64>,
    costs: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(groups: &'a [DiscreteDistribution], weights: &'a [f64], tuples: usize) -> Self {
        let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        let mut row_of = Vec::with_capacity(groups.len());
        let mut rhs = Vec::new();
        for (s, g) in groups.iter().enumerate() {
            let mut rows = Vec::with_capacity(g.len());
            for (i, &w) in g.weights().iter().enumerate() {
                if s > 0 && i == 0 {
                    rows.push(None);
                } else {
                    rows.push(Some(rhs.len()));
                    rhs.push(w);
                }
            }
            row_of.push(rows);
        }
        let mut p = Problem {
            groups,
            weights,
            sizes,
            row_of,
            rhs,
            costs: Vec::with_capacity(tuples),
        };
        let mut idx = vec![0; groups.len()];
        for t in 0..tuples {
            p.decode(t, &mut idx);
            let c = p.tuple_cost(&idx);
            p.costs.push(c);
        }
        p
    }

    fn decode(&self, mut t: usize, idx: &mut [usize]) {
        for (s, &n) in self.sizes.iter().enumerate().rev() {
            idx[s] = t % n;
            t /= n;
        }
    }

    fn encode(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.sizes)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    fn tuple_mean(&self, idx: &[usize]) -> Vec<f64> {
        tuple_mean(self.groups, self.weights, idx)
    }

    /// `sum_s p_s |x_s - mean|^2` for the tuple's points.
    fn tuple_cost(&self, idx: &[usize]) -> f64 {
        let mean = self.tuple_mean(idx);
        idx.iter()
            .enumerate()
            .map(|(s, &i)| {
                let d: f64 = self.groups[s]
                    .point(i)
                    .iter()
                    .zip(&mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum();
                self.weights[s] * d
            })
            .sum()
    }

    fn column_rows(&self, idx: &[usize], out: &mut Vec<usize>) {
        out.clear();
        for (s, &i) in idx.iter().enumerate() {
            if let Some(r) = self.row_of[s][i] {
                out.push(r);
            }
        }
    }

    /// Staircase basis: walk every group's points in order, always moving the
    /// group whose current point ran out of mass.
    fn initial_basis(&self) -> Vec<usize> {
        let m = self.sizes.len();
        let mut idx = vec![0usize; m];
        let mut rem: Vec<f64> = (0..m).map(|s| self.groups[s].weights()[0]).collect();
        let mut basis = Vec::with_capacity(self.rhs.len());
        loop {
            basis.push(self.encode(&idx));
            let x = rem.iter().cloned().fold(f64::INFINITY, f64::min);
            for r in rem.iter_mut() {
                *r -= x;
            }
            let movable = |s: &usize| idx[*s] + 1 < self.sizes[*s];
            let next = (0..m).filter(movable).find(|&s| rem[s] <= 0.0).or_else(|| {
                (0..m)
                    .filter(movable)
                    .min_by(|&a, &b| rem[a].total_cmp(&rem[b]))
            });
            match next {
                Some(s) => {
                    idx[s] += 1;
                    rem[s] = self.groups[s].weights()[idx[s]];
                }
                None => break,
            }
        }
        basis
    }
}

fn invert(mut a: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::NotConverged("singular simplex basis".into()));
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

struct Simplex<'p, 'a> {
    p: &'p Problem<'a>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: Vec<Vec<f64>>,
    xb: Vec<f64>,
}

impl<'p, 'a> Simplex<'p, 'a> {
    fn refactor(&mut self) -> Result<()> {
        let n = self.p.rhs.len();
        let mut b = vec![vec![0.0; n]; n];
        let mut idx = vec![0; self.p.sizes.len()];
        let mut rows = Vec::new();
        for (k, &t) in self.basis.iter().enumerate() {
            self.p.decode(t, &mut idx);
            self.p.column_rows(&idx, &mut rows);
            for &r in &rows {
                b[r][k] = 1.0;
            }
        }
        self.binv = invert(b)?;
        self.xb = self
            .binv
            .iter()
            .map(|row| {
                let v: f64 = row.iter().zip(&self.p.rhs).map(|(a, b)| a * b).sum();
                if v < 0.0 && v > -1e-12 {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        Ok(())
    }

    fn duals(&self) -> Vec<f64> {
        let n = self.basis.len();
        let mut y = vec![0.0; n];
        for (k, &t) in self.basis.iter().enumerate() {
            let c = self.p.costs[t];
            if c != 0.0 {
                for (yr, b) in y.iter_mut().zip(&self.binv[k]) {
                    *yr += c * b;
                }
            }
        }
        y
    }

    fn run(&mut self) -> Result<()> {
        let scale = self.p.costs.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let opt_tol = 1e-12 * scale;
        let tuples = self.p.costs.len();
        let nrows = self.basis.len();
        let max_iter = 200 * (nrows + 10) + 10 * tuples;
        let mut idx = vec![0; self.p.sizes.len()];
        let mut rows = Vec::new();
        let mut degenerate = 0usize;

        self.refactor()?;
        for iter in 0..max_iter {
            if iter > 0 && iter % REFACTOR_EVERY == 0 {
                self.refactor()?;
            }
            let y = self.duals();
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = -opt_tol;
            for t in 0..tuples {
                if self.in_basis[t] {
                    continue;
                }
                self.p.decode(t, &mut idx);
                self.p.column_rows(&idx, &mut rows);
                let d = self.p.costs[t] - rows.iter().map(|&r| y[r]).sum::<f64>();
                if d < best {
                    entering = Some(t);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(t_in) = entering else {
                return Ok(());
            };

            self.p.decode(t_in, &mut idx);
            self.p.column_rows(&idx, &mut rows);
            let u: Vec<f64> = self
                .binv
                .iter()
                .map(|row| rows.iter().map(|&r| row[r]).sum())
                .collect();

            let mut leave: Option<(usize, f64)> = None;
            for (k, &uk) in u.iter().enumerate() {
                if uk <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.xb[k].max(0.0) / uk;
                leave = match leave {
                    None => Some((k, ratio)),
                    Some((kb, rb)) => {
                        let better = if bland {
                            ratio < rb - 1e-15
                                || (ratio <= rb + 1e-15 && self.basis[k] < self.basis[kb])
                        } else {
                            ratio < rb - 1e-15 || (ratio <= rb + 1e-15 && uk > u[kb])
                        };
                        if better {
                            Some((k, ratio))
                        } else {
                            Some((kb, rb))
                        }
                    }
                };
            }
            let Some((r, theta)) = leave else {
                return Err(Error::NotConverged("unbounded multi-marginal LP".into()));
            };

            degenerate = if theta > 0.0 { 0 } else { degenerate + 1 };
            for (x, uk) in self.xb.iter_mut().zip(&u) {
                *x -= theta * uk;
            }
            self.xb[r] = theta;

            let pivot = u[r];
            let prow: Vec<f64> = self.binv[r].iter().map(|v| v / pivot).collect();
            for (k, row) in self.binv.iter_mut().enumerate() {
                if k == r {
                    row.copy_from_slice(&prow);
                } else if u[k] != 0.0 {
                    for (a, b) in row.iter_mut().zip(&prow) {
                        *a -= u[k] * b;
                    }
                }
            }
            self.in_basis[self.basis[r]] = false;
            self.in_basis[t_in] = true;
            self.basis[r] = t_in;
        }
        Err(Error::NotConverged(format!(
            "multi-marginal simplex exceeded {max_iter} iterations"
        )))
    }
}

pub(crate) fn solve(
    groups: &[DiscreteDistribution],
    weights: &[f64],
    tuples: usize,
) -> Result<MultiMarginalSolution> {
    let problem = Problem::new(groups, weights, tuples);
    let basis = problem.initial_basis();
    debug_assert_eq!(basis.len(), problem.rhs.len());
    let mut in_basis = vec![false; tuples];
    for &t in &basis {
        in_basis[t] = true;
    }
    let mut simplex = Simplex {
        p: &problem,
        basis,
        in_basis,
        binv: Vec::new(),
        xb: Vec::new(),
    };
    simplex.run()?;
    simplex.refactor()?;

    let mut idx = vec![0; problem.sizes.len()];
    let mut out = Vec::with_capacity(simplex.basis.len());
    let mut objective = 0.0;
    for (&t, &x) in simplex.basis.iter().zip(&simplex.xb) {
        let x = x.max(0.0);
        problem.decode(t, &mut idx);
        objective += problem.costs[t] * x;
        out.push((idx.clone(), x));
    }
    Ok(MultiMarginalSolution {
        basis: out,
        objective,
    })
}

pub(crate) fn tuple_mean(
    groups: &[DiscreteDistribution],
    weights: &[f64],
    idx: &[usize],
) -> Vec<f64> {
    let k = groups[0].dim();
    let mut mean = vec![0.0; k];
    for (s, &i) in idx.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(groups[s].point(i)) {
            *m += weights[s] * x;
        }
    }
    mean
}
