//! Primal network simplex for the dense transportation problem.
//!
//! The bipartite graph has one node per source and sink plus an artificial
//! root. Arc `i * n + j` carries mass from source `i` to sink `j`; arc
//! `m * n + u` is the artificial arc joining node `u` to the root. The initial
//! basis routes every supply through the root, which makes the starting tree
//! strongly feasible, and the leaving-arc rule below keeps it that way so
//! degenerate pivots cannot cycle.
//!
//! Pricing uses block search over the real arcs. Potentials of the subtree
//! that moves in a pivot are recomputed from its new parent, and the whole
//! tree is re-derived from the root periodically to bound drift.

use ndarray::Array2;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Total artificial flow above this at optimality means the marginals do not
/// balance.
const INFEASIBILITY_TOL: f64 = 1e-9;

struct Solver<'a> {
    m: usize,
    n: usize,
    arc_num: usize,
    root: usize,
    /// Real arc costs scaled into [0, 1].
    cost: Vec<f64>,
    art_cost: f64,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// `true` when the predecessor arc points from the node to its parent.
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    adj: Vec<Vec<usize>>,
    eps: f64,
    block_size: usize,
    next_arc: usize,
    supply: &'a [f64],
}

impl<'a> Solver<'a> {
    fn new(cost: &Array2<f64>, supply: &'a [f64], demand: &[f64]) -> Self {
        let (m, n) = cost.dim();
        let arc_num = m * n;
        let node_num = m + n;
        let root = node_num;

        let max_cost = cost.iter().cloned().fold(0.0_f64, f64::max);
        let scale = if max_cost > 0.0 { 1.0 / max_cost } else { 1.0 };
        let scaled: Vec<f64> = cost.iter().map(|c| c * scale).collect();
        let art_cost = 2.0 * (node_num as f64 + 1.0);

        let all = arc_num + node_num;
        let mut s = Solver {
            m,
            n,
            arc_num,
            root,
            cost: scaled,
            art_cost,
            flow: vec![0.0; all],
            in_tree: vec![false; all],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            up: vec![false; node_num + 1],
            depth: vec![0; node_num + 1],
            pi: vec![0.0; node_num + 1],
            adj: vec![Vec::new(); node_num + 1],
            eps: 1e-13 * art_cost,
            block_size: ((arc_num as f64).sqrt() as usize).max(10),
            next_arc: 0,
            supply,
        };

        for u in 0..node_num {
            let e = arc_num + u;
            s.in_tree[e] = true;
            s.parent[u] = root;
            s.pred[u] = e;
            s.depth[u] = 1;
            s.adj[u].push(e);
            s.adj[root].push(e);
            if u < m {
                s.up[u] = true;
                s.flow[e] = supply[u];
                s.pi[u] = 0.0;
            } else {
                s.up[u] = false;
                s.flow[e] = demand[u - m];
                s.pi[u] = art_cost;
            }
        }
        s
    }

    #[inline]
    fn source(&self, a: usize) -> usize {
        if a < self.arc_num {
            a / self.n
        } else {
            let u = a - self.arc_num;
            if u < self.m {
                u
            } else {
                self.root
            }
        }
    }

    #[inline]
    fn target(&self, a: usize) -> usize {
        if a < self.arc_num {
            self.m + a % self.n
        } else {
            let u = a - self.arc_num;
            if u < self.m {
                self.root
            } else {
                u
            }
        }
    }

    #[inline]
    fn arc_cost(&self, a: usize) -> f64 {
        if a < self.arc_num {
            self.cost[a]
        } else if a - self.arc_num < self.m {
            0.0
        } else {
            self.art_cost
        }
    }

    #[inline]
    fn reduced_cost(&self, a: usize) -> f64 {
        let i = a / self.n;
        let j = self.m + a % self.n;
        self.cost[a] + self.pi[i] - self.pi[j]
    }

    /// Block search pricing. Returns the most negative arc of the first block
    /// containing an eligible arc.
    fn find_entering_arc(&mut self) -> Option<usize> {
        let mut best = -self.eps;
        let mut entering = NONE;
        let mut cnt = self.block_size;
        let total = self.arc_num;
        let mut e = self.next_arc;
        for _ in 0..total {
            if !self.in_tree[e] {
                let c = self.reduced_cost(e);
                if c < best {
                    best = c;
                    entering = e;
                }
            }
            e += 1;
            if e == total {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if entering != NONE {
                    break;
                }
                cnt = self.block_size;
            }
        }
        self.next_arc = e;
        (entering != NONE).then_some(entering)
    }

    fn find_join(&self, mut u: usize, mut v: usize) -> usize {
        while self.depth[u] > self.depth[v] {
            u = self.parent[u];
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v];
        }
        while u != v {
            u = self.parent[u];
            v = self.parent[v];
        }
        u
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let first = self.source(entering);
        let second = self.target(entering);
        let join = self.find_join(first, second);

        // Cycle orientation follows the entering arc. On the path from `first`
        // up to the join, mass moves parent -> child; on the path from `second`
        // it moves child -> parent. Ties go to the last blocking arc met when
        // walking the cycle from the join, which preserves strong feasibility.
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut from_first = true;
        let mut u = first;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    from_first = true;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    from_first = false;
                }
            }
            u = self.parent[u];
        }
        if u_out == NONE {
            return Err(Error::Infeasible("unbounded transport cycle".into()));
        }

        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] -= delta;
                } else {
                    self.flow[e] += delta;
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] += delta;
                } else {
                    self.flow[e] -= delta;
                }
                u = self.parent[u];
            }
        }

        let leaving = self.pred[u_out];
        self.flow[leaving] = 0.0;
        self.in_tree[leaving] = false;
        let p_out = self.parent[u_out];
        remove_arc(&mut self.adj[u_out], leaving);
        remove_arc(&mut self.adj[p_out], leaving);

        self.in_tree[entering] = true;
        self.adj[first].push(entering);
        self.adj[second].push(entering);

        let (u_in, v_in) = if from_first {
            (first, second)
        } else {
            (second, first)
        };
        self.rehang(u_in, v_in, entering);
        Ok(())
    }

    /// Re-derive parent, depth and potentials of the subtree hanging below
    /// `node`, which is attached to `par` through `arc`.
    fn rehang(&mut self, node: usize, par: usize, arc: usize) {
        let mut stack = vec![(node, par, arc)];
        while let Some((u, p, a)) = stack.pop() {
            self.parent[u] = p;
            self.pred[u] = a;
            self.depth[u] = self.depth[p] + 1;
            let c = self.arc_cost(a);
            if self.source(a) == u {
                self.up[u] = true;
                self.pi[u] = self.pi[p] - c;
            } else {
                self.up[u] = false;
                self.pi[u] = self.pi[p] + c;
            }
            for k in 0..self.adj[u].len() {
                let b = self.adj[u][k];
                if b == a {
                    continue;
                }
                let s = self.source(b);
                let w = if s == u { self.target(b) } else { s };
                stack.push((w, u, b));
            }
        }
    }

    fn refresh_potentials(&mut self) {
        let root = self.root;
        self.pi[root] = 0.0;
        self.depth[root] = 0;
        for k in 0..self.adj[root].len() {
            let b = self.adj[root][k];
            let s = self.source(b);
            let w = if s == root { self.target(b) } else { s };
            self.rehang(w, root, b);
        }
    }

    fn run(&mut self) -> Result<()> {
        let node_num = self.m + self.n;
        let max_pivots = 64 * (self.arc_num + node_num) + 10_000;
        let refresh_every = node_num.max(64);
        let mut pivots = 0usize;
        loop {
            match self.find_entering_arc() {
                Some(e) => {
                    self.pivot(e)?;
                    pivots += 1;
                    if pivots.is_multiple_of(refresh_every) {
                        self.refresh_potentials();
                    }
                    if pivots > max_pivots {
                        return Err(Error::NotConverged(format!(
                            "network simplex exceeded {max_pivots} pivots"
                        )));
                    }
                }
                None => {
                    // Confirm optimality against drift-free potentials.
                    self.refresh_potentials();
                    self.next_arc = 0;
                    match self.find_entering_arc() {
                        Some(e) => {
                            self.pivot(e)?;
                            pivots += 1;
                        }
                        None => break,
                    }
                }
            }
        }

        let artificial: f64 = self.flow[self.arc_num..].iter().sum();
        let total: f64 = self.supply.iter().sum();
        if artificial > INFEASIBILITY_TOL * total.max(1.0) {
            return Err(Error::Infeasible(format!(
                "{artificial:e} units of mass could not be routed"
            )));
        }
        Ok(())
    }
}

fn remove_arc(list: &mut Vec<usize>, arc: usize) {
    if let Some(pos) = list.iter().position(|&a| a == arc) {
        list.swap_remove(pos);
    }
}

/// Solve `min <cost, gamma>` over couplings with the given marginals.
///
/// `supply` and `demand` must be positive and have (numerically) equal
/// totals. Returns the optimal vertex coupling as an `m x n` matrix.
pub(crate) fn solve(cost: &Array2<f64>, supply: &[f64], demand: &[f64]) -> Result<Array2<f64>> {
    let (m, n) = cost.dim();
    if supply.len() != m || demand.len() != n {
        return Err(Error::Shape(format!(
            "cost matrix is {m}x{n} but marginals have lengths {} and {}",
            supply.len(),
            demand.len()
        )));
    }
    let mut solver = Solver::new(cost, supply, demand);
    solver.run()?;
    let gamma = Array2::from_shape_vec((m, n), solver.flow[..m * n].to_vec())
        .expect("flow vector has m * n entries");
    Ok(gamma)
}
