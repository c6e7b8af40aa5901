//! Eigenfunction pairs and Laplace transforms of hitting times.
//!
//! On natural scale the increasing/decreasing positive solutions `g1`, `g2`
//! of the generalized eigenvalue problem
//!
//! ```text
//! (1 / 2 alpha) d/dm (d+ g / dx) = g
//! ```
//!
//! encode every hitting-time Laplace transform through ratios:
//! `E_x[exp(-alpha tau_y)] = g1(x)/g1(y)` for `x <= y` and `g2(x)/g2(y)` for
//! `x >= y`.
//!
//! The operator is discretized in conservative form on a grid accumulating
//! toward the boundaries, with exact cell masses:
//!
//! ```text
//! (D g)_i = [ (g_{i+1}-g_i)/h_i - (g_i-g_{i-1})/h_{i-1} ] / m_i ,
//! m_i = m(( (x_{i-1}+x_i)/2 , (x_i+x_{i+1})/2 ])
//! ```
//!
//! `g1` solves the Dirichlet problem `g = 0` at a left truncation point and
//! `g = 1` at the anchor. The truncation marches toward the boundary; the
//! killed problem is monotone in the truncation, so stabilizing probe values
//! certify convergence (shooting would be unstable for growing solutions).
//! `g2` mirrors this from the right. Each solution is then continued past the
//! anchor by the explicit three-term recurrence - the growing direction,
//! where forward recurrence is stable - so both satisfy the discrete
//! equation at every interior node, which forces the discrete Wronskian
//! `g2 g1+ - g1 g2+` to be constant along the grid.
//!
//! Dirichlet truncation means closed boundaries are treated as absorbing
//! (the stopped process); reflecting behavior at regular boundaries is not
//! modeled here.

use serde::Serialize;
use thiserror::Error;

use crate::classify;
use crate::model::{BoundaryKind, Side};
use crate::quad::{self, QuadError};
use crate::scale_speed::{ScaleError, ScaleSpeed};

#[derive(Debug, Error)]
pub enum LaplaceError {
    #[error("solver requires a natural-scale spec (scale = identity); transform first")]
    NotNaturalScale,
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("anchor y = {0} is not interior to the state space")]
    AnchorOutsideDomain(f64),
    #[error("truncation marching did not converge on the {side} side (last probe change {last_change})")]
    NoConvergence { side: Side, last_change: f64 },
    #[error("tridiagonal solve failed: {0}")]
    Solver(String),
    #[error("x = {0} is outside the solved grid hull")]
    OutOfGrid(f64),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("tail integral diverges: {0}")]
    DivergentTail(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
}

/// Grid and convergence policy for the eigenfunction solver.
#[derive(Debug, Clone, Copy)]
pub struct GridPolicy {
    /// Node budget per side of the anchor.
    pub nodes_per_side: usize,
    /// Truncation marching levels per side.
    pub max_levels: usize,
    /// Cauchy criterion on probe values between consecutive levels.
    pub probe_tol: f64,
    /// Grid refinements (node doubling) to try when marching stalls.
    pub max_doublings: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy { nodes_per_side: 2048, max_levels: 26, probe_tol: 1e-6, max_doublings: 2 }
    }
}

/// Discrete eigenfunction pair on a shared grid, normalized to
/// `g1(anchor) = g2(anchor) = 1`.
///
/// Each solution is exact (Dirichlet) on its own side of the anchor and a
/// recurrence continuation on the other; continuations of growing solutions
/// can saturate to infinity near the far truncations. `healthy` marks the
/// index range on which both solutions are representable - derivative and
/// Wronskian data live there. The transform itself only ever reads the
/// Dirichlet branches, which are finite on the whole grid.
#[derive(Debug, Clone)]
pub struct GFunctionPair {
    pub alpha: f64,
    pub anchor: f64,
    pub anchor_index: usize,
    pub grid: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    /// Right differences; entry `i` covers `[grid[i], grid[i+1])`.
    pub g1_plus: Vec<f64>,
    pub g2_plus: Vec<f64>,
    /// Inclusive index range where both solutions are finite.
    pub healthy: (usize, usize),
}

impl GFunctionPair {
    /// `E_x[exp(-alpha tau_anchor)]` by monotone (linear) interpolation of
    /// the appropriate ratio; always in `(0, 1]`.
    pub fn laplace_hitting(&self, x: f64) -> Result<f64, LaplaceError> {
        let first = *self.grid.first().expect("grid non-empty");
        let last = *self.grid.last().expect("grid non-empty");
        if x < first || x > last {
            return Err(LaplaceError::OutOfGrid(x));
        }
        let side = if x <= self.anchor { &self.g1 } else { &self.g2 };
        let v = interp_linear(&self.grid, side, x);
        Ok(v.min(1.0))
    }

    /// Discrete Wronskian `g2 g1+ - g1 g2+` per grid cell, over the healthy
    /// range where both solutions are representable.
    pub fn wronskian(&self) -> Vec<f64> {
        let (lo, hi) = self.healthy;
        (lo..hi.min(self.grid.len() - 1))
            .map(|i| self.g2[i] * self.g1_plus[i] - self.g1[i] * self.g2_plus[i])
            .collect()
    }

    /// Relative spread `(max - min) / |mid|` of the Wronskian across the grid.
    pub fn wronskian_spread(&self) -> f64 {
        let w = self.wronskian();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in &w {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let mid = 0.5 * (lo + hi);
        if mid == 0.0 {
            return f64::INFINITY;
        }
        (hi - lo) / mid.abs()
    }

    /// Structural invariants on the healthy range: monotonicity, positivity,
    /// discrete convexity. Returns human-readable violations (empty when
    /// all hold).
    pub fn check_invariants(&self) -> Vec<String> {
        let (lo, hi) = self.healthy;
        let g1 = &self.g1[lo..=hi];
        let g2 = &self.g2[lo..=hi];
        let mut out = Vec::new();
        if g1.windows(2).any(|w| w[1] <= w[0]) {
            out.push("g1 is not strictly increasing".into());
        }
        if g2.windows(2).any(|w| w[1] >= w[0]) {
            out.push("g2 is not strictly decreasing".into());
        }
        if g1.iter().chain(g2.iter()).any(|v| !(*v > 0.0) || !v.is_finite()) {
            out.push("g values must be positive and finite".into());
        }
        let dhi = hi.min(self.g1_plus.len());
        for (name, d) in [("g1", &self.g1_plus[lo..dhi]), ("g2", &self.g2_plus[lo..dhi])] {
            let tol = 1e-9 * d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if d.windows(2).any(|w| w[1] < w[0] - tol) {
                out.push(format!("{name} slopes are not non-decreasing (convexity breach)"));
            }
        }
        out
    }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let idx = xs.partition_point(|v| *v <= x);
    if idx == 0 {
        return ys[0];
    }
    if idx >= xs.len() {
        return *ys.last().expect("non-empty");
    }
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let t = (x - x0) / (x1 - x0);
    ys[idx - 1] * (1.0 - t) + ys[idx] * t
}

/// Nodes on one side of the anchor out to a truncation distance `span`:
/// uniform within the eigenfunction's variation scale, geometric beyond.
fn side_distances(span: f64, variation: f64, n: usize) -> Vec<f64> {
    let n = n.max(32);
    let near = variation.min(span);
    let n_near = n / 2;
    let mut d = Vec::with_capacity(n + 1);
    for j in 1..=n_near {
        d.push(near * j as f64 / n_near as f64);
    }
    if span > near {
        let n_far = n - n_near;
        let ratio = (span / near).powf(1.0 / n_far as f64);
        let mut pos = near;
        for _ in 0..n_far {
            pos *= ratio;
            d.push(pos.min(span));
        }
    }
    d.dedup();
    while d.last().is_some_and(|v| *v >= span) {
        d.pop();
    }
    d.push(span);
    d
}

/// Interior cell masses for a grid: `m_i` integrates the speed measure over
/// the half-cell neighborhood of node `i` (endpoints get no cell).
fn cell_masses(ss: &ScaleSpeed, grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        let lo = 0.5 * (grid[i - 1] + grid[i]);
        let hi = 0.5 * (grid[i] + grid[i + 1]);
        m[i] = ss.measure_of(lo, hi);
    }
    m
}

/// Solve the Dirichlet problem on `grid` with `g = 0` at one end and `g = 1`
/// at the other (`zero_at_left` picks which): the killed Laplace transform.
fn dirichlet_solve(grid: &[f64], masses: &[f64], alpha: f64, zero_at_left: bool) -> Result<Vec<f64>, LaplaceError> {
    let n = grid.len();
    if n < 3 {
        return Err(LaplaceError::Solver("grid too small".into()));
    }
    let unknowns = n - 2;
    let mut sub = vec![0.0; unknowns];
    let mut diag = vec![0.0; unknowns];
    let mut sup = vec![0.0; unknowns];
    let mut rhs = vec![0.0; unknowns];
    for k in 0..unknowns {
        let i = k + 1;
        let h_left = grid[i] - grid[i - 1];
        let h_right = grid[i + 1] - grid[i];
        let a = 1.0 / h_left;
        let c = 1.0 / h_right;
        let b = -(a + c + 2.0 * alpha * masses[i]);
        sub[k] = a;
        diag[k] = b;
        sup[k] = c;
        // Boundary contributions: one end is 0, the other is 1.
        if k == 0 && !zero_at_left {
            rhs[k] -= a; // g[0] = 1
        }
        if k == unknowns - 1 && zero_at_left {
            rhs[k] -= c; // g[n-1] = 1
        }
    }
    // Thomas algorithm; the matrix is strictly diagonally dominant.
    let mut c_star = vec![0.0; unknowns];
    let mut d_star = vec![0.0; unknowns];
    let mut beta = diag[0];
    if beta >= 0.0 || !beta.is_finite() {
        return Err(LaplaceError::Solver(format!("non-negative pivot {beta} at row 0")));
    }
    c_star[0] = sup[0] / beta;
    d_star[0] = rhs[0] / beta;
    for k in 1..unknowns {
        beta = diag[k] - sub[k] * c_star[k - 1];
        if beta >= 0.0 || !beta.is_finite() {
            return Err(LaplaceError::Solver(format!("non-negative pivot {beta} at row {k}")));
        }
        c_star[k] = sup[k] / beta;
        d_star[k] = (rhs[k] - sub[k] * d_star[k - 1]) / beta;
    }
    let mut g = vec![0.0; n];
    g[if zero_at_left { n - 1 } else { 0 }] = 1.0;
    let mut prev = d_star[unknowns - 1];
    g[unknowns] = prev;
    for k in (0..unknowns - 1).rev() {
        prev = d_star[k] - c_star[k] * prev;
        g[k + 1] = prev;
    }
    Ok(g)
}

struct SideSolution {
    /// Grid from the truncation point to the anchor (ascending), anchor last
    /// for the left side / first for the right side.
    grid: Vec<f64>,
    values: Vec<f64>,
}

/// One side of the truncation marching: Dirichlet solves on grids whose far
/// end walks toward the boundary until probe values stabilize.
fn march_side(
    ss: &ScaleSpeed,
    alpha: f64,
    anchor: f64,
    side: Side,
    policy: &GridPolicy,
    min_span: f64,
) -> Result<SideSolution, LaplaceError> {
    let endpoint = ss.domain.endpoint(side);
    let variation = 1.0 / (2.0 * alpha).sqrt();
    let gap = (endpoint - anchor).abs();
    let span0 = if endpoint.is_finite() {
        (gap * 0.5).max(min_span).min(gap * (1.0 - 1e-12))
    } else {
        (2.0 * variation).max(1.0).max(min_span)
    };

    let mut nodes = policy.nodes_per_side;
    for _refine in 0..=policy.max_doublings {
        let mut previous: Option<(Vec<f64>, SideSolution)> = None;
        let mut last_change = f64::INFINITY;
        let mut span = span0;
        for _level in 0..policy.max_levels {
            let distances = side_distances(span, variation, nodes);
            let sign = if side == Side::Left { -1.0 } else { 1.0 };
            let mut grid: Vec<f64> = std::iter::once(anchor)
                .chain(distances.iter().map(|d| anchor + sign * d))
                .collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let masses = cell_masses(ss, &grid);
            let values = dirichlet_solve(&grid, &masses, alpha, side == Side::Left)?;

            // Probe points inside the smallest truncation span.
            let probe_ds = [0.25 * span0.min(variation), 0.5 * span0.min(variation), 0.75 * span0];
            let probes: Vec<f64> = probe_ds
                .iter()
                .map(|d| interp_linear(&grid, &values, anchor + sign * d))
                .collect();
            let solution = SideSolution { grid, values };
            if let Some((prev_probes, _)) = &previous {
                last_change = probes
                    .iter()
                    .zip(prev_probes.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                if last_change <= policy.probe_tol {
                    return Ok(solution);
                }
            }
            previous = Some((probes, solution));
            // March: double the distance toward an infinite endpoint, halve
            // the gap toward a finite one.
            if endpoint.is_finite() {
                let remaining = gap - span;
                if remaining <= 4.0 * f64::EPSILON * gap {
                    // As close to the closed/finite boundary as f64 allows.
                    return Ok(previous.expect("at least one level ran").1);
                }
                span = gap - remaining * 0.5;
            } else {
                span *= 2.0;
            }
        }
        if policy.max_doublings == 0 || nodes >= policy.nodes_per_side << policy.max_doublings {
            return Err(LaplaceError::NoConvergence { side, last_change });
        }
        nodes *= 2;
    }
    unreachable!("marching loop returns or errors")
}

/// Continue a solved side past the anchor with the explicit recurrence, so
/// the discrete equation holds at every interior node. `grid` is the global
/// grid; `values` holds the solved side (left portion for g1) and the
/// remaining entries are filled in place. `start` is the anchor index.
/// Values saturate once they leave `(1e-280, 1e280)`; the caller records
/// the healthy range.
fn extend_by_recurrence(grid: &[f64], masses: &[f64], alpha: f64, values: &mut [f64], start: usize, rightward: bool) {
    let n = grid.len();
    if rightward {
        for i in start..n - 1 {
            let h_left = grid[i] - grid[i - 1];
            let h_right = grid[i + 1] - grid[i];
            let slope_left = (values[i] - values[i - 1]) / h_left;
            let next = values[i] + h_right * (slope_left + 2.0 * alpha * masses[i] * values[i]);
            values[i + 1] = next;
            if !next.is_finite() || next.abs() > 1e280 {
                for v in values.iter_mut().skip(i + 2) {
                    *v = f64::INFINITY;
                }
                break;
            }
        }
    } else {
        for i in (1..=start).rev() {
            let h_left = grid[i] - grid[i - 1];
            let h_right = grid[i + 1] - grid[i];
            let slope_right = (values[i + 1] - values[i]) / h_right;
            let prev = values[i] - h_left * (slope_right - 2.0 * alpha * masses[i] * values[i]);
            values[i - 1] = prev;
            if !prev.is_finite() || prev.abs() > 1e280 {
                for v in values.iter_mut().take(i.saturating_sub(1)) {
                    *v = f64::INFINITY;
                }
                break;
            }
        }
    }
}

/// Solve for the eigenfunction pair of a natural-scale spec at `alpha`,
/// anchored at `y`.
pub fn solve_laplace(
    nat: &ScaleSpeed,
    alpha: f64,
    y: f64,
    policy: &GridPolicy,
) -> Result<GFunctionPair, LaplaceError> {
    solve_with_min_spans(nat, alpha, y, policy, 0.0, 0.0)
}

/// As [`solve_laplace`] but forcing the truncations at least `min_span_*`
/// away from the anchor (the limit checks need probes deep in the grid).
fn solve_with_min_spans(
    nat: &ScaleSpeed,
    alpha: f64,
    y: f64,
    policy: &GridPolicy,
    min_span_left: f64,
    min_span_right: f64,
) -> Result<GFunctionPair, LaplaceError> {
    if !(alpha > 0.0) {
        return Err(LaplaceError::BadAlpha(alpha));
    }
    if !nat.domain.interior_contains(y) {
        return Err(LaplaceError::AnchorOutsideDomain(y));
    }
    if !nat.is_natural() {
        return Err(LaplaceError::NotNaturalScale);
    }

    let left = march_side(nat, alpha, y, Side::Left, policy, min_span_left)?;
    let right = march_side(nat, alpha, y, Side::Right, policy, min_span_right)?;

    // Combined grid; the anchor is shared.
    let mut grid = left.grid.clone();
    grid.extend_from_slice(&right.grid[1..]);
    let anchor_index = left.grid.len() - 1;
    let masses = cell_masses(nat, &grid);

    // g1: Dirichlet solution on the left portion, continued rightward.
    let mut g1 = vec![0.0; grid.len()];
    g1[..=anchor_index].copy_from_slice(&left.values);
    extend_by_recurrence(&grid, &masses, alpha, &mut g1, anchor_index, true);

    // g2: Dirichlet solution on the right portion, continued leftward.
    let mut g2 = vec![0.0; grid.len()];
    g2[anchor_index..].copy_from_slice(&right.values);
    extend_by_recurrence(&grid, &masses, alpha, &mut g2, anchor_index, false);

    // Mark the range where both solutions (including the recurrence
    // continuations) stayed representable; derivative data lives there.
    let ok = |v: f64| v.is_finite() && v.abs() < 1e280 && v > 0.0;
    let mut lo = 0usize;
    let mut hi = grid.len() - 1;
    while lo < anchor_index && (!ok(g2[lo]) || !ok(g1[lo])) {
        lo += 1;
    }
    while hi > anchor_index && (!ok(g1[hi]) || !ok(g2[hi])) {
        hi -= 1;
    }

    let diffs = |g: &[f64]| -> Vec<f64> {
        (0..grid.len() - 1).map(|i| (g[i + 1] - g[i]) / (grid[i + 1] - grid[i])).collect()
    };
    let g1_plus = diffs(&g1);
    let g2_plus = diffs(&g2);

    Ok(GFunctionPair { alpha, anchor: y, anchor_index, grid, g1, g2, g1_plus, g2_plus, healthy: (lo, hi) })
}

/// Verdict of a boundary limit check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitVerdict {
    Vanishes,
    Positive,
    Inconclusive,
}

/// Probe table along a sequence approaching one boundary, with the
/// extrapolated verdict.
#[derive(Debug, Clone, Serialize)]
pub struct DecayProfile {
    pub boundary: Side,
    pub alpha: f64,
    /// `(probe location, value)` pairs, ordered toward the boundary.
    pub probes: Vec<(f64, f64)>,
    pub verdict: LimitVerdict,
}

/// Ratio-based extrapolation: three consecutive ratios below 0.5 mean the
/// values die out, three above 0.9 mean they stabilize at a positive level;
/// anything else stays inconclusive.
fn verdict_from_probes(values: &[f64]) -> LimitVerdict {
    let mut vanish_run = 0usize;
    let mut positive_run = 0usize;
    for w in values.windows(2) {
        if !(w[0] > 0.0) || !w[0].is_finite() || !w[1].is_finite() {
            break;
        }
        let r = w[1] / w[0];
        if r < 0.5 {
            vanish_run += 1;
            positive_run = 0;
        } else if r > 0.9 {
            positive_run += 1;
            vanish_run = 0;
        } else {
            vanish_run = 0;
            positive_run = 0;
        }
        if vanish_run >= 3 {
            return LimitVerdict::Vanishes;
        }
        if positive_run >= 3 && w[1] > 1e-12 {
            return LimitVerdict::Positive;
        }
    }
    // A sequence that has already collapsed to zero vanishes trivially.
    if values.iter().rev().take(3).all(|v| *v == 0.0) && values.len() >= 3 {
        return LimitVerdict::Vanishes;
    }
    LimitVerdict::Inconclusive
}

/// Tabulate `E_x[exp(-alpha tau_y)]` along probes approaching the boundary
/// on `side`: dyadic fractions of the gap for a finite endpoint, doubling
/// distances for an infinite one.
pub fn fd_limit_check(
    nat: &ScaleSpeed,
    alpha: f64,
    y: f64,
    side: Side,
    policy: &GridPolicy,
    n_probes: usize,
) -> Result<DecayProfile, LaplaceError> {
    let endpoint = nat.domain.endpoint(side);
    let sign = if side == Side::Left { -1.0 } else { 1.0 };
    let n_probes = n_probes.max(5);
    let probes_x: Vec<f64> = if endpoint.is_finite() {
        let gap = (endpoint - y).abs();
        (1..=n_probes).map(|j| endpoint - sign * gap * 0.5f64.powi(j as i32)).collect()
    } else {
        let d0 = y.abs().max(1.0) * 0.5;
        (0..n_probes).map(|j| y + sign * d0 * 2f64.powi(j as i32)).collect()
    };
    let min_span = if endpoint.is_finite() {
        // Truncation strictly between the innermost probe and the boundary.
        let gap = (endpoint - y).abs();
        gap * (1.0 - 0.25 * 0.5f64.powi(n_probes as i32))
    } else {
        2.0 * probes_x.iter().map(|x| (x - y).abs()).fold(0.0f64, f64::max)
    };
    let (min_left, min_right) = match side {
        Side::Left => (min_span, 0.0),
        Side::Right => (0.0, min_span),
    };
    let pair = solve_with_min_spans(nat, alpha, y, policy, min_left, min_right)?;
    let mut probes = Vec::with_capacity(probes_x.len());
    for x in probes_x {
        match pair.laplace_hitting(x) {
            Ok(v) => probes.push((x, v)),
            Err(_) => break, // past the solved hull: stop probing honestly
        }
    }
    let values: Vec<f64> = probes.iter().map(|p| p.1).collect();
    let verdict = verdict_from_probes(&values);
    Ok(DecayProfile { boundary: side, alpha, probes, verdict })
}

/// Tabulate `|y| E_x[exp(-alpha tau_y)]` for targets `y` marching toward an
/// infinite boundary; the vanishing of this product characterizes the true
/// martingale property of the stopped natural-scale diffusion.
pub fn mart_limit_check(
    nat: &ScaleSpeed,
    alpha: f64,
    x: f64,
    side: Side,
    policy: &GridPolicy,
    n_probes: usize,
) -> Result<DecayProfile, LaplaceError> {
    let endpoint = nat.domain.endpoint(side);
    if endpoint.is_finite() {
        return Err(LaplaceError::Hypothesis(format!(
            "martingale limit check applies to infinite boundaries; {side} endpoint is {endpoint}"
        )));
    }
    let sign = if side == Side::Left { -1.0 } else { 1.0 };
    let n_probes = n_probes.max(5);
    let d0 = x.abs().max(1.0) * 0.5;
    let targets: Vec<f64> = (0..n_probes).map(|j| x + sign * d0 * 2f64.powi(j as i32)).collect();
    let max_dist = targets.iter().map(|t| (t - x).abs()).fold(0.0f64, f64::max);
    let (min_left, min_right) = match side {
        Side::Left => (2.0 * max_dist, 0.0),
        Side::Right => (0.0, 2.0 * max_dist),
    };
    // Anchor the pair at x: then E_x[e^{-alpha tau_t}] = 1/g1(t) for t > x
    // (and 1/g2(t) toward the left), with any normalization.
    let pair = solve_with_min_spans(nat, alpha, x, policy, min_left, min_right)?;
    let g = match side {
        Side::Right => &pair.g1,
        Side::Left => &pair.g2,
    };
    let mut probes = Vec::with_capacity(targets.len());
    for t in targets {
        if t < pair.grid[0] || t > *pair.grid.last().expect("non-empty") {
            break; // extension trimmed at overflow; stop probing
        }
        let gt = interp_linear(&pair.grid, g, t);
        if !(gt > 0.0) || !gt.is_finite() {
            break;
        }
        probes.push((t, t.abs() / gt));
    }
    let values: Vec<f64> = probes.iter().map(|p| p.1).collect();
    let verdict = verdict_from_probes(&values);
    Ok(DecayProfile { boundary: side, alpha, probes, verdict })
}

/// Picard iteration data for a non-natural boundary.
#[derive(Debug, Clone)]
pub struct PicardSeries {
    pub alpha: f64,
    pub side: Side,
    pub grid: Vec<f64>,
    /// `terms[n][j] = u_n(grid[j])`; `terms[0]` is identically one.
    pub terms: Vec<Vec<f64>>,
    /// `g = sum_n (2 alpha)^n u_n`, decreasing toward 1 at the boundary.
    pub g: Vec<f64>,
}

impl PicardSeries {
    pub fn u1(&self) -> &[f64] {
        &self.terms[1]
    }
}

/// Build the iterated tail-integral series
/// `u_0 = 1`, `u_n(x) = int (z - x) u_{n-1}(z) m(dz)` over `(x, boundary)`
/// and sum `g = sum (2 alpha)^n u_n`. Requires the chosen boundary to be
/// non-natural (otherwise even `u_1` is infinite). The hypothesis is checked
/// by classification before any integration.
pub fn picard_series(
    nat: &ScaleSpeed,
    alpha: f64,
    side: Side,
    n_max: usize,
    anchor: f64,
    truncation_distance: f64,
    grid_nodes: usize,
) -> Result<PicardSeries, LaplaceError> {
    if !(alpha >= 0.0) {
        return Err(LaplaceError::BadAlpha(alpha));
    }
    if !nat.is_natural() {
        return Err(LaplaceError::NotNaturalScale);
    }
    let opts = classify::ClassifyOptions::default();
    let c = classify::default_reference_point(nat)?;
    let class = classify::classify_side(nat, side, c, &opts).map_err(LaplaceError::Quadrature)?;
    match class.kind {
        Some(BoundaryKind::Natural) => {
            return Err(LaplaceError::Hypothesis(format!(
                "{side} boundary is natural; the tail integrals diverge"
            )))
        }
        None => {
            return Err(LaplaceError::Hypothesis(format!(
                "{side} boundary classification is inconclusive"
            )))
        }
        Some(_) => {}
    }

    let endpoint = nat.domain.endpoint(side);
    let sign = if side == Side::Right { 1.0 } else { -1.0 };
    // Truncate the tail integrals at distance `truncation_distance` from the
    // anchor (or at the finite endpoint).
    let cut = if endpoint.is_finite() {
        endpoint - sign * (endpoint - anchor).abs() * 1e-9
    } else {
        anchor + sign * truncation_distance
    };

    // Grid from the anchor toward the cut, geometric beyond a unit scale.
    let n = grid_nodes.max(64);
    let distances = side_distances((cut - anchor).abs(), 1.0, n);
    let mut grid: Vec<f64> = std::iter::once(anchor).chain(distances.iter().map(|d| anchor + sign * d)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if side == Side::Left {
        grid.reverse(); // order by increasing distance from the boundaryward cut
        grid.reverse();
    }

    // Orient by distance to the boundary: w[j] increases toward the boundary.
    let ordered: Vec<f64> = if side == Side::Right { grid.clone() } else { grid.iter().rev().cloned().collect() };
    let k = ordered.len();

    // Cell masses between consecutive ordered nodes, plus the mass beyond the
    // cut (finite because the boundary is not natural).
    let mut seg_mass = vec![0.0; k - 1];
    for j in 0..k - 1 {
        let (a, b) = if side == Side::Right { (ordered[j], ordered[j + 1]) } else { (ordered[j + 1], ordered[j]) };
        seg_mass[j] = nat.measure_of(a, b);
    }
    let tail_mass = {
        let toward = if endpoint.is_finite() {
            quad::Endpoint::Finite(endpoint)
        } else if side == Side::Right {
            quad::Endpoint::PosInf
        } else {
            quad::Endpoint::NegInf
        };
        let dens = |z: f64| nat.density(z);
        match quad::integrate_improper(&dens, *ordered.last().expect("non-empty"), toward, &quad::ImproperOpts::default())? {
            quad::DivergenceVerdict::Finite { value, .. } => value,
            other => {
                return Err(LaplaceError::DivergentTail(format!(
                    "speed mass beyond the truncation does not converge: {other:?}"
                )))
            }
        }
    };

    // u_{n+1}(x) = int_x^B T_n(w) dw with T_n(w) = int_(w,B) u_n dm.
    // Both integrals are accumulated backward over the ordered grid
    // (trapezoid in dw, midpoint in dm), with tail corrections
    // T_n(B) ~ u_n(B) m((B, boundary)) and the dw-tail bounded by the same.
    let mut terms: Vec<Vec<f64>> = vec![vec![1.0; k]];
    for _n in 0..n_max {
        let prev = terms.last().expect("at least u_0");
        // T(w_j): measure integral of prev from w_j outward.
        let mut t = vec![0.0; k];
        t[k - 1] = prev[k - 1] * tail_mass;
        for j in (0..k - 1).rev() {
            let mid = 0.5 * (prev[j] + prev[j + 1]);
            t[j] = t[j + 1] + mid * seg_mass[j];
        }
        if !t[0].is_finite() {
            return Err(LaplaceError::DivergentTail("tail moment overflowed".into()));
        }
        // u(w_j): dw integral of T from w_j outward; beyond the cut the
        // integrand is below T(B) which already reflects only tail mass, and
        // the remaining dw-tail is the non-natural boundary's v-tail. Use
        // the last cell's own scale as the correction.
        let mut u = vec![0.0; k];
        let dw_tail = if endpoint.is_finite() {
            0.0
        } else {
            // int_B^inf m((w, inf)) dw approximated by extrapolating the
            // measured decay of T across the final cells.
            let wb = (ordered[k - 1] - ordered[k - 2]).abs();
            if t[k - 2] > 0.0 && t[k - 1] > 0.0 && t[k - 1] < t[k - 2] {
                let rho = (t[k - 1] / t[k - 2]).powf(1.0 / wb);
                if rho < 1.0 {
                    t[k - 1] / -rho.ln()
                } else {
                    0.0
                }
            } else {
                0.0
            }
        };
        u[k - 1] = dw_tail;
        for j in (0..k - 1).rev() {
            let dw = (ordered[j + 1] - ordered[j]).abs();
            u[j] = u[j + 1] + 0.5 * (t[j] + t[j + 1]) * dw;
        }
        terms.push(u);
    }

    // g = sum (2 alpha)^n u_n on the ordered grid, then restored to grid order.
    let mut g_ordered = vec![0.0; k];
    let mut factor = 1.0;
    for term in terms.iter() {
        for j in 0..k {
            g_ordered[j] += factor * term[j];
        }
        factor *= 2.0 * alpha;
    }
    let (grid_out, terms_out, g_out) = if side == Side::Right {
        (ordered, terms, g_ordered)
    } else {
        let rev = |v: &Vec<f64>| v.iter().rev().cloned().collect::<Vec<f64>>();
        (
            ordered.iter().rev().cloned().collect(),
            terms.iter().map(rev).collect(),
            g_ordered.iter().rev().cloned().collect(),
        )
    };
    Ok(PicardSeries { alpha, side, grid: grid_out, terms: terms_out, g: g_out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lookup;
    use crate::scale_speed::{to_natural_scale, ScaleSpeed};

    fn natural(name: &str) -> ScaleSpeed {
        let spec = lookup(name, None).unwrap();
        ScaleSpeed::from_direct(&to_natural_scale(&spec).unwrap())
    }

    #[test]
    fn bm_laplace_matches_exponential() {
        // E_x[e^{-alpha tau_y}] = exp(-sqrt(2 alpha) |x - y|) for BM.
        let bm = natural("bm");
        let policy = GridPolicy::default();
        let pair = solve_laplace(&bm, 0.5, 0.0, &policy).unwrap();
        for x in [-2.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.5] {
            let got = pair.laplace_hitting(x).unwrap();
            let expect = (-(2.0f64 * 0.5).sqrt() * x.abs()).exp();
            assert!((got - expect).abs() < 1e-4, "x = {x}: {got} vs {expect}");
        }
        assert_eq!(pair.laplace_hitting(0.0).unwrap(), 1.0);
    }

    #[test]
    fn pair_invariants_hold_for_bm() {
        let bm = natural("bm");
        let pair = solve_laplace(&bm, 1.0, 0.0, &GridPolicy::default()).unwrap();
        assert!(pair.check_invariants().is_empty(), "{:?}", pair.check_invariants());
        assert!(pair.wronskian_spread() < 1e-3, "spread = {}", pair.wronskian_spread());
    }

    #[test]
    fn discrete_residual_is_tiny() {
        let bm = natural("bm");
        let pair = solve_laplace(&bm, 1.0, 0.0, &GridPolicy::default()).unwrap();
        // Verify (1/2alpha) (D g)_i = g_i on interior nodes of the grid for
        // both solutions, using the same cell masses as the solver.
        let masses = cell_masses(&bm, &pair.grid);
        let gmax = pair.g1.iter().chain(pair.g2.iter()).fold(0.0f64, |m, v| m.max(*v));
        for g in [&pair.g1, &pair.g2] {
            for i in 1..pair.grid.len() - 1 {
                if !g[i - 1].is_finite() || !g[i + 1].is_finite() {
                    continue;
                }
                let h_left = pair.grid[i] - pair.grid[i - 1];
                let h_right = pair.grid[i + 1] - pair.grid[i];
                let flux = (g[i + 1] - g[i]) / h_right - (g[i] - g[i - 1]) / h_left;
                let residual = flux / masses[i] / (2.0 * pair.alpha) - g[i];
                assert!(
                    residual.abs() <= 1e-6 * gmax.max(1.0),
                    "residual {residual} at node {i}"
                );
            }
        }
    }

    #[test]
    fn bes3_laplace_matches_closed_form() {
        // Bes3 has g1(x) = sinh(k x)/x and g2(x) = exp(-k x)/x with
        // k = sqrt(2 alpha); check the transform through the natural-scale
        // solver at a few (x, y) pairs (values are transform-invariant).
        let spec = lookup("bes3", None).unwrap();
        let ss = ScaleSpeed::from_spec(&spec, Some(1.0)).unwrap();
        let nat = ss.to_natural().unwrap();
        let alpha = 0.5f64;
        let k = (2.0 * alpha).sqrt();
        let s = |x: f64| 1.0 - 1.0 / x;

        // anchor y = 2 in original coordinates.
        let pair = solve_laplace(&nat, alpha, s(2.0), &GridPolicy::default()).unwrap();
        // upward hit from x = 1: y sinh(kx) / (x sinh(ky))
        let expect_up = 2.0 * (k * 1.0f64).sinh() / (1.0 * (k * 2.0f64).sinh());
        let got_up = pair.laplace_hitting(s(1.0)).unwrap();
        assert!((got_up - expect_up).abs() < 2e-3, "up: {got_up} vs {expect_up}");
        // downward hit from x = 3: (y/x) exp(-k (x - y))
        let expect_down = (2.0f64 / 3.0) * (-k * 1.0).exp();
        let got_down = pair.laplace_hitting(s(3.0)).unwrap();
        assert!((got_down - expect_down).abs() < 2e-3, "down: {got_down} vs {expect_down}");
    }

    #[test]
    fn fd_limit_checks_on_bm_vanish() {
        let bm = natural("bm");
        for side in [Side::Left, Side::Right] {
            let profile = fd_limit_check(&bm, 0.5, 0.0, side, &GridPolicy::default(), 8).unwrap();
            assert_eq!(profile.verdict, LimitVerdict::Vanishes, "{side}: {:?}", profile.probes);
        }
    }

    #[test]
    fn mart_limit_check_separates_bm_from_cev() {
        let bm = natural("bm");
        let profile = mart_limit_check(&bm, 0.5, 0.0, Side::Right, &GridPolicy::default(), 8).unwrap();
        assert_eq!(profile.verdict, LimitVerdict::Vanishes, "{:?}", profile.probes);

        // Strict local martingale: y E_x[e^{-alpha tau_y}] has a positive limit.
        let cev = natural("cev");
        let profile = mart_limit_check(&cev, 1.0, 1.0, Side::Right, &GridPolicy::default(), 10).unwrap();
        assert_eq!(profile.verdict, LimitVerdict::Positive, "{:?}", profile.probes);
    }

    #[test]
    fn fd_limit_check_positive_at_entrance() {
        // CEV entrance at infinity: E_x[e^{-alpha tau_y}] -> positive limit.
        let cev = natural("cev");
        let profile = fd_limit_check(&cev, 1.0, 1.0, Side::Right, &GridPolicy::default(), 8).unwrap();
        assert_eq!(profile.verdict, LimitVerdict::Positive, "{:?}", profile.probes);
    }

    #[test]
    fn picard_series_for_cev() {
        let cev = natural("cev");
        let alpha = 1.0;
        let series = picard_series(&cev, alpha, Side::Right, 8, 1.0, 1000.0, 2048).unwrap();
        // u_1(1) = int_1^inf (z - 1) z^-4 dz = 1/6.
        let u1_at_1 = series.u1()[0];
        assert!((u1_at_1 - 1.0 / 6.0).abs() < 1e-4, "u1(1) = {u1_at_1}");
        // Factorial bound u_n <= u_1^n / n! pointwise.
        let mut factorial = 1.0;
        for n in 1..series.terms.len() {
            factorial *= n as f64;
            for (j, un) in series.terms[n].iter().enumerate() {
                let bound = series.u1()[j].powi(n as i32) / factorial;
                assert!(*un <= bound * (1.0 + 1e-6) + 1e-15, "u_{n}[{j}] = {un} > {bound}");
            }
        }
        // Sandwich 1 + 2 alpha u1 <= g <= exp(2 alpha u1).
        for j in 0..series.grid.len() {
            let low = 1.0 + 2.0 * alpha * series.u1()[j];
            let high = (2.0 * alpha * series.u1()[j]).exp();
            assert!(series.g[j] >= low - 1e-9 && series.g[j] <= high + 1e-9, "sandwich at {j}");
        }
        // alpha -> 0: only u_0 survives.
        let vanish = picard_series(&cev, 1e-12, Side::Right, 8, 1.0, 1000.0, 512).unwrap();
        assert!(vanish.g.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn picard_rejects_natural_boundaries() {
        let bm = natural("bm");
        let err = picard_series(&bm, 1.0, Side::Right, 4, 0.0, 100.0, 256).unwrap_err();
        assert!(matches!(err, LaplaceError::Hypothesis(_)));
    }

    #[test]
    fn picard_matches_solver_up_to_constant() {
        // Uniqueness of the decreasing solution: the Picard g and the solver
        // g2 agree up to a positive scalar.
        let cev = natural("cev");
        let alpha = 1.0;
        let series = picard_series(&cev, alpha, Side::Right, 10, 1.0, 4000.0, 4096).unwrap();
        let pair = solve_laplace(&cev, alpha, 1.0, &GridPolicy::default()).unwrap();
        let mut ratios = Vec::new();
        for x in [1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 13.0] {
            let g_picard = interp_linear(&series.grid, &series.g, x);
            let g2 = pair.laplace_hitting(x).unwrap();
            ratios.push(g_picard / g2);
        }
        let max = ratios.iter().fold(f64::MIN, |m, v| m.max(*v));
        let min = ratios.iter().fold(f64::MAX, |m, v| m.min(*v));
        assert!(max / min - 1.0 < 1e-3, "ratio spread {} ({ratios:?})", max / min - 1.0);
    }

    #[test]
    fn solver_rejects_bad_inputs() {
        let bm = natural("bm");
        assert!(matches!(
            solve_laplace(&bm, -1.0, 0.0, &GridPolicy::default()),
            Err(LaplaceError::BadAlpha(_))
        ));
        let spec = lookup("bes3", None).unwrap();
        let not_natural = ScaleSpeed::from_spec(&spec, Some(1.0)).unwrap();
        assert!(matches!(
            solve_laplace(&not_natural, 1.0, 1.0, &GridPolicy::default()),
            Err(LaplaceError::NotNaturalScale)
        ));
    }
}
