//! Primal network simplex on the complete bipartite transportation graph.
//!
//! The spanning-tree bookkeeping (parent, thread, subtree sizes and last
//! successors) follows the classical strongly-feasible-tree implementation;
//! entering arcs are chosen by block search pricing.

use super::{validate_problem, DualPotentials, TransportResult};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const UP: i8 = 1;
const DOWN: i8 = -1;
const TREE: i8 = 0;
const LOWER: i8 = 1;

struct Network<'a> {
    cost: &'a Matrix,
    m: usize,
    n: usize,
    real_arcs: usize,
    art_cost: f64,
    // Arc data; arcs `>= real_arcs` are artificial arcs to the root.
    flow: Vec<f64>,
    state: Vec<i8>,
    art_source: Vec<usize>,
    art_target: Vec<usize>,
    // Node data; node `m + n` is the artificial root.
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,
    // Pivot state.
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    next_arc: usize,
    block_size: usize,
    pricing_tol: f64,
}

const NONE: usize = usize::MAX;

impl<'a> Network<'a> {
    fn new(cost: &'a Matrix, w0: &[f64], w1: &[f64]) -> Self {
        let (m, n) = (cost.rows(), cost.cols());
        let node_num = m + n;
        let real_arcs = m * n;
        let cmax = cost.as_slice().iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let art_cost = (cmax + 1.0) * node_num as f64;
        let total_arcs = real_arcs + node_num;
        let root = node_num;
        let mut net = Network {
            cost,
            m,
            n,
            real_arcs,
            art_cost,
            flow: vec![0.0; total_arcs],
            state: vec![LOWER; total_arcs],
            art_source: vec![0; node_num],
            art_target: vec![0; node_num],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            pred_dir: vec![UP; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
            next_arc: 0,
            block_size: ((real_arcs as f64).sqrt().ceil() as usize).max(10),
            pricing_tol: 1e-12 * (cmax + 1.0),
        };
        net.thread[root] = 0;
        net.rev_thread[0] = root;
        net.succ_num[root] = node_num + 1;
        net.last_succ[root] = root - 1;
        for u in 0..node_num {
            let e = real_arcs + u;
            net.parent[u] = root;
            net.pred[u] = e;
            net.thread[u] = u + 1;
            net.rev_thread[u + 1] = u;
            net.succ_num[u] = 1;
            net.last_succ[u] = u;
            net.state[e] = TREE;
            if u < m {
                net.pred_dir[u] = UP;
                net.pi[u] = 0.0;
                net.art_source[u] = u;
                net.art_target[u] = root;
                net.flow[e] = w0[u];
            } else {
                net.pred_dir[u] = DOWN;
                net.pi[u] = art_cost;
                net.art_source[u] = root;
                net.art_target[u] = u;
                net.flow[e] = w1[u - m];
            }
        }
        net
    }

    #[inline]
    fn source(&self, e: usize) -> usize {
        if e < self.real_arcs {
            e / self.n
        } else {
            self.art_source[e - self.real_arcs]
        }
    }

    #[inline]
    fn target(&self, e: usize) -> usize {
        if e < self.real_arcs {
            self.m + e % self.n
        } else {
            self.art_target[e - self.real_arcs]
        }
    }

    #[inline]
    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.real_arcs {
            self.cost.as_slice()[e]
        } else if self.art_source[e - self.real_arcs] == self.m + self.n {
            self.art_cost
        } else {
            0.0
        }
    }

    /// Block search over the real arcs only; artificial arcs never re-enter.
    fn find_entering_arc(&mut self) -> bool {
        let costs = self.cost.as_slice();
        let n = self.n;
        let m = self.m;
        let mut best = -self.pricing_tol;
        let mut found = NONE;
        let mut cnt = self.block_size;
        let total = self.real_arcs;
        let mut e = self.next_arc;
        for _ in 0..total {
            if self.state[e] == LOWER {
                let rc = costs[e] + self.pi[e / n] - self.pi[m + e % n];
                if rc < best {
                    best = rc;
                    found = e;
                }
            }
            e += 1;
            if e == total {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found != NONE {
                    break;
                }
                cnt = self.block_size;
            }
        }
        if found == NONE {
            return false;
        }
        self.in_arc = found;
        self.next_arc = e;
        true
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Returns false if the cycle is unbounded (cannot happen for valid input).
    fn find_leaving_arc(&mut self) -> bool {
        // Entering arcs are always at their lower bound.
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
        result != 0
    }

    fn change_flow(&mut self) {
        let delta = self.delta;
        if delta > 0.0 {
            self.flow[self.in_arc] += delta;
            let mut u = self.source(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * delta;
                u = self.parent[u];
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * delta;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = TREE;
        let out = self.pred[self.u_out];
        self.flow[out] = 0.0;
        self.state[out] = LOWER;
    }

    fn update_tree_structure(&mut self) {
        let (u_in, v_in, u_out, in_arc, join) = (self.u_in, self.v_in, self.u_out, self.in_arc, self.join);
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];
        let in_dir = if u_in == self.source(in_arc) { UP } else { DOWN };

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue =
                if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;
            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0isize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] as isize - self.succ_num[p] as isize;
                self.succ_num[u] = tmp_sc as usize;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in] - self.pi[u_in] - self.pred_dir[u_in] as f64 * self.arc_cost(self.in_arc);
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self, max_pivots: usize) -> Result<()> {
        let mut pivots = 0;
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::Numerical("unbounded transport problem".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::Numerical(format!("network simplex exceeded {max_pivots} pivots")));
            }
        }
        Ok(())
    }
}

/// Exact optimal transport for a general nonnegative cost matrix.
///
/// Zero-weight rows and columns are kept and receive no mass. The returned
/// potentials satisfy `f_i + g_j ≤ c_ij` (up to rounding) with equality on
/// the support of the plan, normalized so that `f` vanishes on the first
/// row with positive weight.
pub fn solve_exact(cost: &Matrix, w0: &[f64], w1: &[f64]) -> Result<TransportResult> {
    validate_problem(cost, w0, w1)?;
    let (m, n) = (cost.rows(), cost.cols());
    let mut net = Network::new(cost, w0, w1);
    let max_pivots = 1000 * (m + n) * (m + n).max(16);
    net.run(max_pivots)?;

    let mut plan = Matrix::zeros(m, n);
    let mut total = 0.0;
    {
        let out = plan.as_mut_slice();
        for e in 0..m * n {
            let f = net.flow[e];
            if f > 0.0 {
                out[e] = f;
                total += f * cost.as_slice()[e];
            }
        }
    }
    // Reduced cost c_ij + pi_i - pi_j >= 0 translates to f = -pi, g = pi.
    let mut f: Vec<f64> = (0..m).map(|i| -net.pi[i]).collect();
    let mut g: Vec<f64> = (0..n).map(|j| net.pi[m + j]).collect();
    tighten_unattached(cost, &mut f, &mut g, &plan, w0, w1);
    if let Some(anchor) = w0.iter().position(|&w| w > 0.0) {
        let shift = f[anchor];
        f.iter_mut().for_each(|x| *x -= shift);
        g.iter_mut().for_each(|x| *x += shift);
    }
    Ok(TransportResult { cost: total, plan, potentials: DualPotentials { f, g }, approximate: false, converged: true })
}

/// Potentials of nodes that carry no mass are only pinned through
/// artificial arcs and can sit far below their feasible maximum. Raising
/// them to the largest feasible value keeps every constraint satisfied and
/// leaves the dual objective unchanged (their weight is zero).
fn tighten_unattached(cost: &Matrix, f: &mut [f64], g: &mut [f64], plan: &Matrix, w0: &[f64], w1: &[f64]) {
    let (m, n) = (cost.rows(), cost.cols());
    for j in 0..n {
        if w1[j] == 0.0 && (0..m).all(|i| plan.get(i, j) == 0.0) {
            g[j] = (0..m).map(|i| cost.get(i, j) - f[i]).fold(f64::INFINITY, f64::min);
        }
    }
    for i in 0..m {
        if w0[i] == 0.0 && (0..n).all(|j| plan.get(i, j) == 0.0) {
            f[i] = (0..n).map(|j| cost.get(i, j) - g[j]).fold(f64::INFINITY, f64::min);
        }
    }
}
