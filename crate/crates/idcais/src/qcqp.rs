//! Minimum-norm quadratically constrained solver.
//!
//! Solves
//!
//! ```text
//! min ||x||^2   s.t.   a_i' x <= b_i          (half-planes)
//!                      ||c_k + x_k||^2 <= R_k^2   (per-block balls)
//! ```
//!
//! where `x` is a stack of 2-vector blocks and each ball constrains one
//! block. This is the projection of the origin onto an intersection of
//! convex sets, which is exactly the shape of a control-correction filter:
//! `x` is the stacked deviation from nominal controls, the half-planes come
//! from safety conditions, and the balls keep each corrected control inside
//! its actuator bound.
//!
//! The primary method is a primal log-barrier interior-point path: damped
//! Newton centering with backtracking, barrier parameter scaled by 10 until
//! the duality-gap bound drops below `gap_tolerance`. A phase-I pass finds a
//! strictly feasible start when the origin is not one; if no strictly
//! feasible point exists the half-planes are relaxed with heavily penalized
//! slacks (`relaxed` is flagged and the reported violation tells the caller
//! how bad things are). Results are checked against stationarity and
//! complementarity residuals; on failure the solver falls back to Dykstra's
//! alternating-projection scheme, which converges to the same projection
//! independently of the Newton machinery and doubles as a test oracle.

use crate::vec2::Vec2;
use crate::{Error, Result};

/// One half-plane `a' x <= b`.
#[derive(Clone, Debug)]
pub struct LinearRow {
    pub a: Vec<f64>,
    pub b: f64,
}

/// One ball `||center + x_block||^2 <= radius^2` on block `block`
/// (coordinates `2*block` and `2*block + 1`).
#[derive(Clone, Copy, Debug)]
pub struct Ball {
    pub block: usize,
    pub center: Vec2,
    pub radius: f64,
}

/// Problem data. `dim` must be even; blocks are consecutive coordinate
/// pairs.
#[derive(Clone, Debug, Default)]
pub struct Qcqp {
    pub dim: usize,
    pub rows: Vec<LinearRow>,
    pub balls: Vec<Ball>,
}

impl Qcqp {
    /// Signed violation of the worst constraint at `x` (negative means
    /// strictly feasible everywhere).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for row in &self.rows {
            worst = worst.max(dot(&row.a, x) - row.b);
        }
        for ball in &self.balls {
            worst = worst.max(ball_value(ball, x));
        }
        if worst == f64::NEG_INFINITY {
            -f64::INFINITY
        } else {
            worst
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "solver dimension must be a positive even number (got {})",
                self.dim
            )));
        }
        for row in &self.rows {
            if row.a.len() != self.dim {
                return Err(Error::InvalidParams(
                    "constraint row length does not match dimension".into(),
                ));
            }
            if row.a.iter().any(|v| !v.is_finite()) || !row.b.is_finite() {
                return Err(Error::InvalidParams("non-finite constraint row".into()));
            }
        }
        let mut seen = vec![false; self.dim / 2];
        for ball in &self.balls {
            if ball.block >= self.dim / 2 {
                return Err(Error::InvalidParams("ball block out of range".into()));
            }
            if seen[ball.block] {
                return Err(Error::InvalidParams(
                    "at most one ball per block is supported".into(),
                ));
            }
            seen[ball.block] = true;
            if !(ball.radius > 0.0) || !ball.center.is_finite() {
                return Err(Error::InvalidParams(
                    "ball needs a positive radius and finite center".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Tuning knobs. Defaults are tight enough for the safety filter and cheap
/// at the sizes that arise there (a handful of blocks).
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Barrier parameter growth per outer step.
    pub barrier_growth: f64,
    /// Stop when `m / t` (duality-gap bound) falls below this.
    pub gap_tolerance: f64,
    /// Acceptable KKT residual before the fallback engages.
    pub kkt_tolerance: f64,
    /// Penalty weight on relaxation slacks.
    pub relax_penalty: f64,
    /// Newton iteration cap per centering step.
    pub max_newton: usize,
}

impl Default for SolverOptions {
    fn default() -> SolverOptions {
        SolverOptions {
            barrier_growth: 10.0,
            gap_tolerance: 1e-9,
            kkt_tolerance: 1e-8,
            relax_penalty: 1e6,
            max_newton: 200,
        }
    }
}

/// Solver outcome.
#[derive(Clone, Debug)]
pub struct QcqpSolution {
    pub x: Vec<f64>,
    /// `||x||^2`.
    pub objective: f64,
    /// Max of stationarity, complementarity, and primal-violation residuals.
    pub kkt_residual: f64,
    /// Worst signed constraint violation at `x`.
    pub max_violation: f64,
    /// True when no strictly feasible point was found and the half-planes
    /// were enforced through penalized slacks.
    pub relaxed: bool,
    /// True when the interior-point result failed its checks and the
    /// projection fallback supplied the answer.
    pub fallback_used: bool,
    /// Total Newton iterations across all centering steps.
    pub newton_iterations: usize,
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(p, q)| p * q).sum()
}

fn ball_vec(ball: &Ball, x: &[f64]) -> Vec2 {
    Vec2::new(
        ball.center.x + x[2 * ball.block],
        ball.center.y + x[2 * ball.block + 1],
    )
}

/// `||c + x_block||^2 - R^2` (feasible when <= 0).
fn ball_value(ball: &Ball, x: &[f64]) -> f64 {
    ball_vec(ball, x).norm_sq() - ball.radius * ball.radius
}

/// Internal barrier subproblem: minimize `sum q_diag x^2 + q_lin' x` over
/// the rows and balls. Phase I and the relaxed pass reuse it with extra
/// coordinates.
struct BarrierProblem {
    n: usize,
    q_diag: Vec<f64>,
    q_lin: Vec<f64>,
    rows: Vec<LinearRow>,
    balls: Vec<Ball>,
}

impl BarrierProblem {
    fn min_slack(&self, x: &[f64]) -> f64 {
        let mut s = f64::INFINITY;
        for row in &self.rows {
            s = s.min(row.b - dot(&row.a, x));
        }
        for ball in &self.balls {
            s = s.min(-ball_value(ball, x));
        }
        s
    }

    fn constraint_count(&self) -> usize {
        self.rows.len() + self.balls.len()
    }

    /// Change of the barrier potential `t f0 + phi` from `x` to
    /// `x + step d`, computed in difference form: the raw potential grows
    /// like `t |f0|`, so at large `t` the decreases the line search needs
    /// (1e-12 and below) drown in cancellation if the two potentials are
    /// evaluated separately and subtracted. The objective delta expands
    /// exactly for a quadratic, and each barrier term becomes
    /// `-ln(1 + ds/s)`. Returns `None` when the trial point is infeasible.
    fn delta_potential(&self, t: f64, x: &[f64], d: &[f64], step: f64) -> Option<f64> {
        let mut delta = 0.0;
        for (k, dk) in d.iter().enumerate() {
            delta += t * (self.q_diag[k] * (2.0 * x[k] + step * dk) + self.q_lin[k]) * step * dk;
        }
        for row in &self.rows {
            let s = row.b - dot(&row.a, x);
            let ds = -step * dot(&row.a, d);
            if s + ds <= 0.0 {
                return None;
            }
            delta -= (ds / s).ln_1p();
        }
        for ball in &self.balls {
            let s = -ball_value(ball, x);
            let w = ball_vec(ball, x);
            let dv = Vec2::new(step * d[2 * ball.block], step * d[2 * ball.block + 1]);
            let ds = -(2.0 * w.dot(dv) + dv.norm_sq());
            if s + ds <= 0.0 {
                return None;
            }
            delta -= (ds / s).ln_1p();
        }
        Some(delta)
    }

    /// Gradient and Hessian of the potential at a strictly feasible `x`.
    fn derivatives(&self, t: f64, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        for k in 0..n {
            g[k] = t * (2.0 * self.q_diag[k] * x[k] + self.q_lin[k]);
            h[k * n + k] = t * 2.0 * self.q_diag[k];
        }
        for row in &self.rows {
            let s = row.b - dot(&row.a, x);
            let inv = 1.0 / s;
            for k in 0..n {
                if row.a[k] != 0.0 {
                    g[k] += row.a[k] * inv;
                    for l in 0..n {
                        if row.a[l] != 0.0 {
                            h[k * n + l] += row.a[k] * row.a[l] * inv * inv;
                        }
                    }
                }
            }
        }
        for ball in &self.balls {
            let w = ball_vec(ball, x);
            let s = -ball_value(ball, x);
            let inv = 1.0 / s;
            let (kx, ky) = (2 * ball.block, 2 * ball.block + 1);
            // grad of f = 2(c + x_block); -log(-f) adds grad f / s and
            // hessian (2I s + grad f grad f') / s^2.
            g[kx] += 2.0 * w.x * inv;
            g[ky] += 2.0 * w.y * inv;
            h[kx * n + kx] += 2.0 * inv + 4.0 * w.x * w.x * inv * inv;
            h[ky * n + ky] += 2.0 * inv + 4.0 * w.y * w.y * inv * inv;
            h[kx * n + ky] += 4.0 * w.x * w.y * inv * inv;
            h[ky * n + kx] += 4.0 * w.x * w.y * inv * inv;
        }
        (g, h)
    }
}

/// In-place Cholesky solve of `H d = -g`, with a scale-relative ridge retry
/// when `H` is not numerically positive definite (near-active constraints
/// blow the barrier Hessian up to where cancellation flips pivots).
fn solve_newton_step(h: &[f64], g: &[f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n)
        .map(|k| h[k * n + k].abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut l = h.to_vec();
        if ridge > 0.0 {
            for k in 0..n {
                l[k * n + k] += ridge;
            }
        }
        if let Some(d) = cholesky_solve_neg(&mut l, g, n) {
            return Some(d);
        }
        ridge = if ridge == 0.0 {
            1e-14 * scale
        } else {
            ridge * 100.0
        };
    }
    None
}

fn cholesky_solve_neg(a: &mut [f64], g: &[f64], n: usize) -> Option<Vec<f64>> {
    // Factor a = L L' in the lower triangle.
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        a[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / dj;
        }
    }
    // Forward/back substitution for L L' d = -g.
    let mut d = vec![0.0; n];
    for i in 0..n {
        let mut v = -g[i];
        for k in 0..i {
            v -= a[i * n + k] * d[k];
        }
        d[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = d[i];
        for k in (i + 1)..n {
            v -= a[k * n + i] * d[k];
        }
        d[i] = v / a[i * n + i];
    }
    Some(d)
}

/// Callback polled after each centering step; returning true ends the path.
type EarlyStop<'a> = &'a mut dyn FnMut(&[f64]) -> bool;

/// Follow the central path from a strictly feasible `x0`. Optionally stops
/// early once `early_stop` returns true after a centering step (used by
/// phase I, which only needs the objective sign).
fn barrier_path(
    prob: &BarrierProblem,
    mut x: Vec<f64>,
    opts: &SolverOptions,
    mut early_stop: Option<EarlyStop<'_>>,
) -> Result<(Vec<f64>, f64, usize)> {
    debug_assert!(prob.min_slack(&x) > 0.0, "barrier start must be interior");
    let m = prob.constraint_count() as f64;
    let mut t = 1.0;
    let mut newton_total = 0;
    loop {
        // Center at the current t.
        for _ in 0..opts.max_newton {
            newton_total += 1;
            let (g, h) = prob.derivatives(t, &x);
            // A system the ridge cannot repair means the iterate is pinned
            // against active constraints at machine precision; it is as
            // centered as it will get (the caller's KKT check arbitrates).
            let Some(d) = solve_newton_step(&h, &g, prob.n) else {
                break;
            };
            let decrement_sq = -dot(&g, &d);
            // The difference-form line search below stays meaningful down
            // to this scale, so centering can be driven well past the point
            // where raw potential comparisons would drown in rounding.
            if !(decrement_sq > 1e-16) {
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                if let Some(dp) = prob.delta_potential(t, &x, &d, step) {
                    if dp <= -0.25 * step * decrement_sq {
                        for (v, dv) in x.iter_mut().zip(&d) {
                            *v += step * dv;
                        }
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if let Some(stop) = early_stop.as_deref_mut() {
            if stop(&x) {
                return Ok((x, t, newton_total));
            }
        }
        if m / t <= opts.gap_tolerance {
            return Ok((x, t, newton_total));
        }
        t *= opts.barrier_growth;
    }
}

/// KKT residual of the original min-norm problem: the best certificate the
/// computed point admits. Multipliers on the near-active constraints are
/// fitted by nonnegative least squares (Lawson–Hanson style dropping of
/// negative fits); the residual is the max of stationarity under those
/// multipliers, their complementarity products, and the primal violation.
/// The naive barrier estimate `1/(t s)` is avoided on purpose: near an
/// active constraint the Hessian condition number is ~1/s^2, so the final
/// iterate's slacks carry a relative error far above machine epsilon and a
/// residual built from them misjudges an otherwise excellent point.
fn kkt_residual(prob: &Qcqp, x: &[f64]) -> f64 {
    let n = prob.dim;

    // Candidate active set: gradient and slack per near-active constraint,
    // with the threshold scaled to each constraint's own magnitudes.
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut grads: Vec<Vec<f64>> = Vec::new();
    let mut slacks: Vec<f64> = Vec::new();
    let mut violation = 0.0f64;
    for row in &prob.rows {
        let s = row.b - dot(&row.a, x);
        violation = violation.max(-s);
        let scale = 1.0 + row.b.abs() + dot(&row.a, &row.a).sqrt() * x_norm;
        if s <= 1e-6 * scale {
            grads.push(row.a.clone());
            slacks.push(s);
        }
    }
    for ball in &prob.balls {
        let s = -ball_value(ball, x);
        violation = violation.max(-s);
        if s <= 1e-6 * (1.0 + ball.radius * ball.radius) {
            let w = ball_vec(ball, x);
            let mut g = vec![0.0; n];
            g[2 * ball.block] = 2.0 * w.x;
            g[2 * ball.block + 1] = 2.0 * w.y;
            grads.push(g);
            slacks.push(s);
        }
    }

    // Fit multipliers minimizing ||2x + sum lambda_i g_i||, dropping any
    // that come out negative and refitting.
    let mut active: Vec<usize> = (0..grads.len()).collect();
    let mut lambda = vec![0.0; grads.len()];
    while !active.is_empty() {
        let m = active.len();
        let mut gram = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for (p, &i) in active.iter().enumerate() {
            for (q, &j) in active.iter().enumerate() {
                gram[p * m + q] = dot(&grads[i], &grads[j]);
            }
            gram[p * m + p] += 1e-12 * (1.0 + gram[p * m + p]);
            // cholesky_solve_neg solves G l = -rhs.
            rhs[p] = 2.0 * dot(&grads[i], x);
        }
        let Some(fit) = cholesky_solve_neg(&mut gram, &rhs, m) else {
            break;
        };
        let worst = (0..m).min_by(|&p, &q| fit[p].total_cmp(&fit[q])).unwrap();
        if fit[worst] < -1e-12 {
            active.remove(worst);
            continue;
        }
        for (p, &i) in active.iter().enumerate() {
            lambda[i] = fit[p].max(0.0);
        }
        break;
    }

    let mut grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let mut comp = 0.0f64;
    for (i, g) in grads.iter().enumerate() {
        for k in 0..n {
            grad[k] += lambda[i] * g[k];
        }
        comp = comp.max(lambda[i] * slacks[i].abs());
    }
    let stationarity = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    stationarity.max(comp).max(violation)
}

/// Strictly feasible start: centers of the balls (`x_block = -c`), zero on
/// block coordinates without a ball. Always strictly inside every ball.
fn ball_centers_start(prob: &Qcqp) -> Vec<f64> {
    let mut x = vec![0.0; prob.dim];
    for ball in &prob.balls {
        x[2 * ball.block] = -ball.center.x;
        x[2 * ball.block + 1] = -ball.center.y;
    }
    x
}

const INTERIOR_MARGIN: f64 = 1e-9;

/// Phase I: minimize a shared bound `s` on the half-plane values from a
/// point already strictly inside the balls. Returns a strictly feasible
/// point, or `None` when the optimum cannot push `s` below zero.
fn phase_one(prob: &Qcqp, opts: &SolverOptions) -> Result<Option<(Vec<f64>, usize)>> {
    let n = prob.dim;
    let x0 = ball_centers_start(prob);
    let worst = prob
        .rows
        .iter()
        .map(|r| dot(&r.a, &x0) - r.b)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z0 = x0;
    z0.push(worst + 1.0);
    let aug = BarrierProblem {
        n: n + 1,
        q_diag: vec![0.0; n + 1],
        q_lin: {
            let mut q = vec![0.0; n + 1];
            q[n] = 1.0;
            q
        },
        rows: prob
            .rows
            .iter()
            .map(|r| {
                let mut a = r.a.clone();
                a.push(-1.0);
                LinearRow { a, b: r.b }
            })
            .collect(),
        balls: prob.balls.clone(),
    };
    let mut done = |z: &[f64]| z[n] < -1e-6;
    // Phase I only needs the sign of the optimum; a tighter gap would push
    // `t * f0` past f64 resolution for nothing.
    let mut relaxed_opts = *opts;
    relaxed_opts.gap_tolerance = opts.gap_tolerance.max(1e-8);
    let (z, _, iters) = barrier_path(&aug, z0, &relaxed_opts, Some(&mut done))?;
    let x: Vec<f64> = z[..n].to_vec();
    if prob.max_violation(&x) < -INTERIOR_MARGIN {
        Ok(Some((x, iters)))
    } else {
        Ok(None)
    }
}

/// Relaxed pass: per-row slacks on the half-planes with a large penalty,
/// balls kept hard. Always strictly feasible.
fn solve_relaxed(prob: &Qcqp, opts: &SolverOptions) -> Result<(Vec<f64>, usize)> {
    let n = prob.dim;
    let m = prob.rows.len();
    let x0 = ball_centers_start(prob);
    let mut z0 = x0.clone();
    for row in &prob.rows {
        z0.push((dot(&row.a, &x0) - row.b).max(0.0) + 1.0);
    }
    let mut rows = Vec::with_capacity(2 * m);
    for (i, row) in prob.rows.iter().enumerate() {
        let mut a = row.a.clone();
        a.resize(n + m, 0.0);
        a[n + i] = -1.0;
        rows.push(LinearRow { a, b: row.b });
        let mut nonneg = vec![0.0; n + m];
        nonneg[n + i] = -1.0;
        rows.push(LinearRow { a: nonneg, b: 0.0 });
    }
    let mut q_diag = vec![0.0; n + m];
    let mut q_lin = vec![0.0; n + m];
    q_diag[..n].fill(1.0);
    for k in 0..m {
        q_lin[n + k] = opts.relax_penalty;
    }
    let aug = BarrierProblem {
        n: n + m,
        q_diag,
        q_lin,
        rows,
        balls: prob.balls.clone(),
    };
    // With the large penalty in the objective, the default gap would scale
    // `t` past what the potential can resolve in f64.
    let mut relaxed_opts = *opts;
    relaxed_opts.gap_tolerance = opts.gap_tolerance.max(1e-7);
    let (z, _, iters) = barrier_path(&aug, z0, &relaxed_opts, None)?;
    Ok((z[..n].to_vec(), iters))
}

/// Projection of `y` onto one half-plane.
fn project_row(row: &LinearRow, y: &mut [f64]) {
    let v = dot(&row.a, y) - row.b;
    if v > 0.0 {
        let nn = row.a.iter().map(|v| v * v).sum::<f64>();
        if nn > 0.0 {
            let scale = v / nn;
            for (yk, ak) in y.iter_mut().zip(&row.a) {
                *yk -= scale * ak;
            }
        }
    }
}

/// Projection of `y` onto one ball.
fn project_ball(ball: &Ball, y: &mut [f64]) {
    let w = Vec2::new(
        ball.center.x + y[2 * ball.block],
        ball.center.y + y[2 * ball.block + 1],
    );
    let norm = w.norm();
    if norm > ball.radius {
        let w2 = w * (ball.radius / norm);
        y[2 * ball.block] = w2.x - ball.center.x;
        y[2 * ball.block + 1] = w2.y - ball.center.y;
    }
}

/// Dykstra's alternating projections: converges to the projection of the
/// origin onto the intersection (the same minimum-norm point the barrier
/// method computes) whenever the intersection is nonempty. Returns `None`
/// when the iteration fails to reach feasibility within the sweep budget
/// (empty intersection, or pathologically slow geometry).
pub fn dykstra_min_norm(prob: &Qcqp, max_sweeps: usize, tol: f64) -> Option<Vec<f64>> {
    prob.validate().ok()?;
    let n = prob.dim;
    let sets = prob.rows.len() + prob.balls.len();
    if sets == 0 {
        return Some(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut increments = vec![vec![0.0; n]; sets];
    for _ in 0..max_sweeps {
        let mut sweep_change = 0.0f64;
        for (k, inc) in increments.iter_mut().enumerate() {
            let mut y: Vec<f64> = x.iter().zip(inc.iter()).map(|(a, b)| a + b).collect();
            if k < prob.rows.len() {
                project_row(&prob.rows[k], &mut y);
            } else {
                project_ball(&prob.balls[k - prob.rows.len()], &mut y);
            }
            for i in 0..n {
                let new_inc = x[i] + inc[i] - y[i];
                sweep_change = sweep_change.max((y[i] - x[i]).abs());
                inc[i] = new_inc;
                x[i] = y[i];
            }
        }
        if sweep_change < tol && prob.max_violation(&x) <= tol {
            return Some(x);
        }
    }
    if prob.max_violation(&x) <= tol.max(1e-7) {
        Some(x)
    } else {
        None
    }
}

/// Solve the minimum-norm problem. See the module docs for the algorithm.
pub fn solve_min_norm(prob: &Qcqp, opts: &SolverOptions) -> Result<QcqpSolution> {
    prob.validate()?;
    let n = prob.dim;

    // The zero correction is optimal whenever it is feasible.
    let zero = vec![0.0; n];
    if prob.max_violation(&zero) <= 0.0 {
        return Ok(QcqpSolution {
            x: zero,
            objective: 0.0,
            kkt_residual: 0.0,
            max_violation: prob.max_violation(&vec![0.0; n]),
            relaxed: false,
            fallback_used: false,
            newton_iterations: 0,
        });
    }

    // Find a strictly feasible start (ball centers directly, else phase I).
    let mut newton_total = 0;
    let candidates = ball_centers_start(prob);
    let start = if prob.max_violation(&candidates) < -INTERIOR_MARGIN {
        Some(candidates)
    } else {
        match phase_one(prob, opts).map_err(|e| Error::Solver(format!("phase I: {e}")))? {
            Some((x, iters)) => {
                newton_total += iters;
                Some(x)
            }
            None => None,
        }
    };

    let (x, relaxed) = match start {
        Some(x0) => {
            let main = BarrierProblem {
                n,
                q_diag: vec![1.0; n],
                q_lin: vec![0.0; n],
                rows: prob.rows.clone(),
                balls: prob.balls.clone(),
            };
            let (x, _, iters) = barrier_path(&main, x0, opts, None)
                .map_err(|e| Error::Solver(format!("main path: {e}")))?;
            newton_total += iters;
            (x, false)
        }
        None => {
            let (x, iters) = solve_relaxed(prob, opts)
                .map_err(|e| Error::Solver(format!("relaxed path: {e}")))?;
            newton_total += iters;
            (x, true)
        }
    };

    let mut solution = QcqpSolution {
        objective: x.iter().map(|v| v * v).sum(),
        max_violation: prob.max_violation(&x),
        kkt_residual: if relaxed {
            // The relaxed optimum does not satisfy the original KKT system;
            // report the (possibly positive) violation instead.
            prob.max_violation(&x).max(0.0)
        } else {
            kkt_residual(prob, &x)
        },
        x,
        relaxed,
        fallback_used: false,
        newton_iterations: newton_total,
    };

    // Sanity gate: a non-relaxed solution must be feasible and pass the KKT
    // check. Otherwise let the projection method have a go.
    if !relaxed
        && (solution.kkt_residual > opts.kkt_tolerance
            || solution.max_violation > opts.kkt_tolerance)
    {
        if let Some(x) = dykstra_min_norm(prob, 200_000, 1e-12) {
            let objective = x.iter().map(|v| v * v).sum();
            let max_violation = prob.max_violation(&x);
            solution = QcqpSolution {
                objective,
                max_violation,
                kkt_residual: max_violation.max(0.0),
                x,
                relaxed: false,
                fallback_used: true,
                newton_iterations: newton_total,
            };
        }
    }
    Ok(solution)
}
