use super::{DualPotentials, TransportResult};
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::mixture::PointMeasure1d;

/// Remaining masses closer than this are treated as exhausted together.
const TIE_MASS: f64 = 1e-14;

/// How the staircase reached the current cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingStep {
    Start,
    /// Moved to the next atom of the first measure.
    NextFirst,
    /// Moved to the next atom of the second measure.
    NextSecond,
    /// Both atoms were exhausted at the same time.
    NextBoth,
}

/// The monotone (north-west corner) coupling between two sorted measures.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCoupling {
    /// Cells `(i, j, mass)` in original indices, in staircase order.
    pub cells: Vec<(usize, usize, f64)>,
    pub steps: Vec<CouplingStep>,
}

/// Stable ascending order of `xs`; equal values keep their input order.
pub(crate) fn sort_order(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    idx
}

/// Walks the staircase coupling, calling `visit(i, j, mass, step)` per cell.
#[inline]
pub(crate) fn walk_coupling<F: FnMut(usize, usize, f64, CouplingStep)>(
    order_a: &[usize],
    wa: &[f64],
    order_b: &[usize],
    wb: &[f64],
    mut visit: F,
) {
    let (na, nb) = (order_a.len(), order_b.len());
    if na == 0 || nb == 0 {
        return;
    }
    let (mut ia, mut ib) = (0, 0);
    let mut ra = wa[order_a[0]];
    let mut rb = wb[order_b[0]];
    let mut step = CouplingStep::Start;
    // Every atom is visited, zero-weight ones included, so that potentials
    // are defined everywhere; once one side has no atoms left the other side
    // keeps pairing its remaining atoms with that side's last atom.
    loop {
        let diff = ra - rb;
        let tie = diff.abs() <= TIE_MASS;
        let mass = if tie { ra.min(rb) } else if diff < 0.0 { ra } else { rb };
        visit(order_a[ia], order_b[ib], mass.max(0.0), step);
        ra -= mass;
        rb -= mass;
        let more_a = ia + 1 < na;
        let more_b = ib + 1 < nb;
        let (adv_a, adv_b) = if tie {
            (more_a, more_b || !more_a)
        } else if diff < 0.0 {
            (more_a, !more_a)
        } else {
            (!more_b, more_b)
        };
        let adv_a = adv_a && more_a;
        let adv_b = adv_b && more_b;
        if adv_a {
            ia += 1;
            ra = wa[order_a[ia]];
        }
        if adv_b {
            ib += 1;
            rb = wb[order_b[ib]];
        }
        step = match (adv_a, adv_b) {
            (true, true) => CouplingStep::NextBoth,
            (true, false) => CouplingStep::NextFirst,
            (false, true) => CouplingStep::NextSecond,
            (false, false) => return,
        };
    }
}

/// `Σ mass·(x_i − y_j)²` along the monotone coupling.
#[inline]
pub(crate) fn coupling_cost(xs: &[f64], wa: &[f64], order_a: &[usize], ys: &[f64], wb: &[f64], order_b: &[usize]) -> f64 {
    let mut cost = 0.0;
    walk_coupling(order_a, wa, order_b, wb, |i, j, m, _| {
        let d = xs[i] - ys[j];
        cost += m * d * d;
    });
    cost
}

impl MonotoneCoupling {
    pub fn new(a: &PointMeasure1d, b: &PointMeasure1d) -> Self {
        let oa = sort_order(a.supports());
        let ob = sort_order(b.supports());
        Self::from_orders(&oa, a.weights(), &ob, b.weights())
    }

    pub(crate) fn from_orders(oa: &[usize], wa: &[f64], ob: &[usize], wb: &[f64]) -> Self {
        let mut cells = Vec::with_capacity(oa.len() + ob.len());
        let mut steps = Vec::with_capacity(oa.len() + ob.len());
        walk_coupling(oa, wa, ob, wb, |i, j, m, s| {
            cells.push((i, j, m));
            steps.push(s);
        });
        MonotoneCoupling { cells, steps }
    }

    /// Potentials for the ground cost `cost(i, j)` by recursion along the
    /// staircase, with `f = 0` on the first cell's row.
    ///
    /// Where both atoms run out together the recursion can continue through
    /// either neighbouring cell; the two choices give two valid dual
    /// solutions and the average of both is returned. Away from such
    /// simultaneous exhaustions the two coincide.
    pub fn potentials<C: Fn(usize, usize) -> f64>(&self, na: usize, nb: usize, cost: C) -> DualPotentials {
        let mut fa = vec![0.0; na];
        let mut ga = vec![0.0; nb];
        let mut fb = vec![0.0; na];
        let mut gb = vec![0.0; nb];
        let (mut pi, mut pj) = (0, 0);
        for (&(i, j, _), &step) in self.cells.iter().zip(&self.steps) {
            let c = cost(i, j);
            match step {
                CouplingStep::Start => {
                    ga[j] = c;
                    gb[j] = c;
                }
                CouplingStep::NextFirst => {
                    fa[i] = c - ga[j];
                    fb[i] = c - gb[j];
                }
                CouplingStep::NextSecond => {
                    ga[j] = c - fa[i];
                    gb[j] = c - fb[i];
                }
                CouplingStep::NextBoth => {
                    fa[i] = cost(i, pj) - ga[pj];
                    ga[j] = c - fa[i];
                    gb[j] = cost(pi, j) - fb[pi];
                    fb[i] = c - gb[j];
                }
            }
            pi = i;
            pj = j;
        }
        let f = fa.iter().zip(&fb).map(|(x, y)| 0.5 * (x + y)).collect();
        let g = ga.iter().zip(&gb).map(|(x, y)| 0.5 * (x + y)).collect();
        DualPotentials { f, g }
    }
}

/// Squared-distance transport between two weighted point sets on the line.
///
/// Supports are sorted stably and coupled monotonically; the returned
/// `cost` is `W₂²`.
pub fn w2_point_1d(a: &PointMeasure1d, b: &PointMeasure1d) -> TransportResult {
    let coupling = MonotoneCoupling::new(a, b);
    let (xs, ys) = (a.supports(), b.supports());
    let mut plan = Matrix::zeros(xs.len(), ys.len());
    let mut cost = 0.0;
    for &(i, j, m) in &coupling.cells {
        let d = xs[i] - ys[j];
        cost += m * d * d;
        plan.set(i, j, plan.get(i, j) + m);
    }
    let potentials = coupling.potentials(xs.len(), ys.len(), |i, j| {
        let d = xs[i] - ys[j];
        d * d
    });
    TransportResult { cost, plan, potentials, approximate: false, converged: true }
}

/// Generalized inverse `inf{x : F(x) > t}` of the distribution function.
pub fn quantile(a: &PointMeasure1d, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(invalid(format!("quantile level {t} is outside (0, 1)")));
    }
    let order = sort_order(a.supports());
    let mut acc = 0.0;
    for &i in &order {
        acc += a.weights()[i];
        if acc > t {
            return Ok(a.supports()[i]);
        }
    }
    let last = order.iter().rev().find(|&&i| a.weights()[i] > 0.0).unwrap_or(&order[order.len() - 1]);
    Ok(a.supports()[*last])
}
