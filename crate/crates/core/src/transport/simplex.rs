//! Transportation simplex on integer-scaled flows.
//!
//! Rows supply `n1` units each and columns demand `n0` units each, so every
//! basic solution has integer flows and `gamma = flow / (n0 * n1)` has exact
//! marginals. The basis is a spanning tree over the `n0 + n1` row and column
//! nodes; potentials are kept on the tree and only the re-hung subtree is
//! recomputed after each pivot.

use super::{CostMatrix, Coupling};
use crate::error::{Error, Result};

const NONE: u32 = u32::MAX;

/// Entering-arc rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pricing {
    /// Most negative reduced cost within rotating blocks of about `sqrt(n0 n1)`
    /// arcs; switches to Bland's rule after a long run of degenerate pivots.
    BlockSearch,
    /// Lowest-index entering arc, lowest-index leaving arc.
    Bland,
}

#[derive(Debug, Clone)]
pub struct LpOptions {
    /// Reduced-cost tolerance, relative to `max(1, max cost)`.
    pub tol: f64,
    /// Pivot cap; `None` picks a size-dependent default.
    pub max_pivots: Option<usize>,
    pub pricing: Pricing,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_pivots: None,
            pricing: Pricing::BlockSearch,
        }
    }
}

/// A primal-feasible spanning-tree basis, reusable as a warm start for any
/// cost matrix of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LpBasis {
    n0: usize,
    n1: usize,
    arcs: Vec<(u32, u32, i64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub coupling: Coupling,
    pub objective: f64,
    pub pivots: usize,
    pub basis: LpBasis,
}

/// Exact optimal coupling for `cost`.
pub fn solve_lp(cost: &CostMatrix) -> Result<Coupling> {
    solve_lp_with(cost, &LpOptions::default(), None).map(|s| s.coupling)
}

pub fn solve_lp_with(
    cost: &CostMatrix,
    opts: &LpOptions,
    warm: Option<&LpBasis>,
) -> Result<LpSolution> {
    if !(opts.tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {}", opts.tol)));
    }
    let mut s = Simplex::new(cost, opts, warm);
    let v = s.n0 + s.n1;
    let cap = opts.max_pivots.unwrap_or(200 * v * v.max(64) + 10_000);
    let bland_after = 20 * v + 100;
    let mut bland = opts.pricing == Pricing::Bland;
    let mut degenerate = 0usize;
    let mut pivots = 0usize;
    loop {
        let entering = if bland {
            s.entering_bland()
        } else {
            s.entering_block()
        };
        let Some(e) = entering else { break };
        if pivots >= cap {
            let sol = s.finish(cost, pivots);
            return Err(Error::SolverIterationCap {
                pivots,
                best: Box::new(sol.coupling),
            });
        }
        let theta = s.pivot(e, bland);
        pivots += 1;
        if theta == 0 {
            degenerate += 1;
            if !bland && degenerate > bland_after {
                log::debug!("transport simplex: switching to Bland's rule after {pivots} pivots");
                bland = true;
            }
        } else {
            degenerate = 0;
        }
    }
    Ok(s.finish(cost, pivots))
}

struct Simplex<'a> {
    n0: usize,
    n1: usize,
    c: &'a [f64],
    tol: f64,
    arcs: Vec<(u32, u32, i64)>,
    adj: Vec<Vec<u32>>,
    basic: Vec<bool>,
    parent: Vec<u32>,
    parent_arc: Vec<u32>,
    depth: Vec<u32>,
    pot: Vec<f64>,
    next_arc: usize,
    block: usize,
    queue: Vec<u32>,
}

impl<'a> Simplex<'a> {
    fn new(cost: &'a CostMatrix, opts: &LpOptions, warm: Option<&LpBasis>) -> Self {
        let (n0, n1) = (cost.rows(), cost.cols());
        let v = n0 + n1;
        let arcs = match warm {
            Some(b) if b.n0 == n0 && b.n1 == n1 && b.arcs.len() == v - 1 => b.arcs.clone(),
            _ => north_west_corner(n0, n1),
        };
        let mut adj = vec![Vec::new(); v];
        let mut basic = vec![false; n0 * n1];
        for (k, &(i, j, _)) in arcs.iter().enumerate() {
            adj[i as usize].push(k as u32);
            adj[n0 + j as usize].push(k as u32);
            basic[i as usize * n1 + j as usize] = true;
        }
        let n = n0 * n1;
        let mut s = Self {
            n0,
            n1,
            c: cost.entries(),
            tol: opts.tol * cost.max_entry().max(1.0),
            arcs,
            adj,
            basic,
            parent: vec![NONE; v],
            parent_arc: vec![NONE; v],
            depth: vec![0; v],
            pot: vec![0.0; v],
            next_arc: 0,
            block: ((n as f64).sqrt() as usize).max(10).min(n),
            queue: Vec::with_capacity(v),
        };
        s.hang(0, NONE, NONE, 0.0, 0);
        s
    }

    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n1 + j]
    }

    #[inline]
    fn reduced(&self, i: usize, j: usize) -> f64 {
        self.cost(i, j) - self.pot[i] - self.pot[self.n0 + j]
    }

    /// Breadth-first (re)labelling of the subtree reachable from `start`
    /// without crossing to `up`, which becomes its parent.
    fn hang(&mut self, start: usize, up: u32, up_arc: u32, start_pot: f64, start_depth: u32) {
        let n0 = self.n0;
        self.parent[start] = up;
        self.parent_arc[start] = up_arc;
        self.depth[start] = start_depth;
        self.pot[start] = start_pot;
        self.queue.clear();
        self.queue.push(start as u32);
        let mut head = 0;
        while head < self.queue.len() {
            let x = self.queue[head] as usize;
            head += 1;
            for t in 0..self.adj[x].len() {
                let k = self.adj[x][t];
                if k == self.parent_arc[x] {
                    continue;
                }
                let (i, j, _) = self.arcs[k as usize];
                let (i, j) = (i as usize, j as usize);
                let y = if x < n0 { n0 + j } else { i };
                self.parent[y] = x as u32;
                self.parent_arc[y] = k;
                self.depth[y] = self.depth[x] + 1;
                self.pot[y] = self.cost(i, j) - self.pot[x];
                self.queue.push(y as u32);
            }
        }
    }

    fn entering_bland(&self) -> Option<usize> {
        for i in 0..self.n0 {
            for j in 0..self.n1 {
                let e = i * self.n1 + j;
                if !self.basic[e] && self.reduced(i, j) < -self.tol {
                    return Some(e);
                }
            }
        }
        None
    }

    fn entering_block(&mut self) -> Option<usize> {
        let n = self.n0 * self.n1;
        let (mut i, mut j) = (self.next_arc / self.n1, self.next_arc % self.n1);
        let mut best = -self.tol;
        let mut best_arc = None;
        let mut in_block = 0;
        for _ in 0..n {
            let e = i * self.n1 + j;
            if !self.basic[e] {
                let rc = self.reduced(i, j);
                if rc < best {
                    best = rc;
                    best_arc = Some(e);
                }
            }
            j += 1;
            if j == self.n1 {
                j = 0;
                i += 1;
                if i == self.n0 {
                    i = 0;
                }
            }
            in_block += 1;
            if in_block == self.block {
                if best_arc.is_some() {
                    break;
                }
                in_block = 0;
            }
        }
        self.next_arc = i * self.n1 + j;
        best_arc
    }

    /// Pushes flow around the cycle closed by arc `e`; returns the step size.
    fn pivot(&mut self, e: usize, bland: bool) -> i64 {
        let n0 = self.n0;
        let (p, q) = (e / self.n1, e % self.n1);
        let (a, b) = (p, n0 + q);

        // Tree paths from both endpoints up to their common ancestor. The
        // cycle runs p -> q, q up to the apex, then the apex down to p.
        let mut a_side: Vec<(u32, bool)> = Vec::new();
        let mut b_side: Vec<(u32, bool)> = Vec::new();
        let (mut x, mut y) = (a, b);
        while x != y {
            if self.depth[x] >= self.depth[y] {
                // Traversed parent -> x: decreasing when x is a row.
                a_side.push((self.parent_arc[x], x < n0));
                x = self.parent[x] as usize;
            } else {
                // Traversed y -> parent: decreasing when y is a column.
                b_side.push((self.parent_arc[y], y >= n0));
                y = self.parent[y] as usize;
            }
        }

        // Walk in cycle order from the apex; without Bland keep the last
        // blocking arc, with Bland the lowest-index one.
        let mut theta = i64::MAX;
        let mut leave = NONE;
        let mut leave_on_a = false;
        let mut leave_key = usize::MAX;
        let order = a_side
            .iter()
            .rev()
            .map(|&(k, minus)| (k, minus, true))
            .chain(b_side.iter().map(|&(k, minus)| (k, minus, false)));
        for (k, minus, on_a) in order {
            if !minus {
                continue;
            }
            let (i, j, f) = self.arcs[k as usize];
            let key = i as usize * self.n1 + j as usize;
            let better = if bland {
                f < theta || (f == theta && key < leave_key)
            } else {
                f <= theta
            };
            if better {
                theta = f;
                leave = k;
                leave_on_a = on_a;
                leave_key = key;
            }
        }
        debug_assert!(leave != NONE);

        for &(k, minus) in a_side.iter().chain(&b_side) {
            let f = &mut self.arcs[k as usize].2;
            if minus {
                *f -= theta;
            } else {
                *f += theta;
            }
        }

        // Swap the leaving arc's slot for the entering arc.
        let (li, lj, _) = self.arcs[leave as usize];
        let (li, lj) = (li as usize, lj as usize);
        remove_slot(&mut self.adj[li], leave);
        remove_slot(&mut self.adj[n0 + lj], leave);
        self.basic[li * self.n1 + lj] = false;
        self.arcs[leave as usize] = (p as u32, q as u32, theta);
        self.adj[p].push(leave);
        self.adj[n0 + q].push(leave);
        self.basic[e] = true;

        // The endpoint of the entering arc below the leaving arc is re-hung
        // from the other endpoint.
        let (start, up) = if leave_on_a { (a, b) } else { (b, a) };
        let pq = self.cost(p, q);
        let start_pot = pq - self.pot[up];
        let start_depth = self.depth[up] + 1;
        self.hang(start, up as u32, leave, start_pot, start_depth);
        theta
    }

    fn finish(&self, cost: &CostMatrix, pivots: usize) -> LpSolution {
        let scale = 1.0 / (self.n0 as f64 * self.n1 as f64);
        let mut objective = 0.0;
        let mut entries = Vec::with_capacity(self.n0 + self.n1);
        for &(i, j, f) in &self.arcs {
            if f > 0 {
                let g = f as f64 * scale;
                objective += g * self.cost(i as usize, j as usize);
                entries.push((i as usize, j as usize, g));
            }
        }
        let coupling = Coupling::new(
            cost.row_ids().to_vec(),
            cost.col_ids().to_vec(),
            vec![1.0 / self.n0 as f64; self.n0],
            vec![1.0 / self.n1 as f64; self.n1],
            entries,
        )
        .expect("simplex flows are valid");
        LpSolution {
            coupling,
            objective,
            pivots,
            basis: LpBasis {
                n0: self.n0,
                n1: self.n1,
                arcs: self.arcs.clone(),
            },
        }
    }
}

fn remove_slot(list: &mut Vec<u32>, k: u32) {
    if let Some(pos) = list.iter().position(|&x| x == k) {
        list.swap_remove(pos);
    }
}

fn north_west_corner(n0: usize, n1: usize) -> Vec<(u32, u32, i64)> {
    let mut supply = vec![n1 as i64; n0];
    let mut demand = vec![n0 as i64; n1];
    let mut arcs = Vec::with_capacity(n0 + n1 - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let f = supply[i].min(demand[j]);
        arcs.push((i as u32, j as u32, f));
        supply[i] -= f;
        demand[j] -= f;
        if i == n0 - 1 && j == n1 - 1 {
            break;
        }
        if (supply[i] == 0 && i < n0 - 1) || j == n1 - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    arcs
}
