//! Defender-defender collision forecasting along interception courses.
//!
//! Each defender's course is a constant-control trajectory. For a pair of
//! courses the forecast asks: does their separation dip below the collision
//! radius within the pair's search horizon (the later of the two interception
//! times, controls held to the end)?
//!
//! Solving that for every pair is the expensive part of assignment cost
//! construction, so a cheap rejection test runs first: each trajectory is
//! bounded by a triangle, and only pairs whose triangles come within the
//! collision radius get the dense separation search. The triangle is exact
//! geometry, not a heuristic: under a held control the velocity traces a
//! straight segment in velocity space (from `v0` toward the terminal
//! velocity `u/c`), so the tangent direction rotates monotonically through
//! less than a half turn and the position curve is convex. It is therefore
//! contained in the triangle spanned by the chord and the two end tangent
//! rays. Two special cases: a velocity-space segment through the origin
//! means the path is a straight line with a possible turnaround (handled as
//! a degenerate segment including the overshoot extreme), and a near-half
//! turn makes the tangent rays close to antiparallel (handled by a sampled
//! bounding hull).

use std::collections::BTreeMap;

use crate::dynamics::{AgentState, ConstantControlTrajectory};
use crate::engagement::EngagementSolution;
use crate::vec2::Vec2;
use crate::{Error, Result};

/// Grid step for the dense separation scan (s).
const SCAN_STEP: f64 = 1e-2;
/// Refinement tolerance on reported collision times (s).
const REFINE_TOL: f64 = 1e-9;
/// Heading change (radians) beyond which the tangent-ray construction is
/// abandoned for the sampled hull: 99.5% of a half turn.
const HEADING_FALLBACK: f64 = std::f64::consts::PI * 0.995;
/// Samples used by the fallback hull.
const HULL_SAMPLES: usize = 32;

/// Convex bound on one constant-control trajectory over `[0, t_f]`.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryTriangle {
    pub vertices: [Vec2; 3],
    /// Straight-line motion: the "triangle" is a segment (two vertices
    /// coincide).
    pub degenerate: bool,
    /// Built from a sampled bounding box because the tangent rays were
    /// unusable (near-half-turn heading change).
    pub fallback: bool,
}

impl TrajectoryTriangle {
    /// Signed containment with slack: true if `p` is within `slack` of the
    /// triangle (or segment).
    pub fn contains(&self, p: Vec2, slack: f64) -> bool {
        let [a, b, c] = self.vertices;
        let area2 = (b - a).cross(c - a);
        if area2.abs() < 1e-12 {
            return dist_point_segment(p, a, b).min(dist_point_segment(p, b, c)) <= slack;
        }
        let sign = area2.signum();
        for (u, v) in [(a, b), (b, c), (c, a)] {
            let edge = v - u;
            let out = sign * edge.cross(p - u);
            // Negative `out` means outside this edge; normalize by edge
            // length to make the slack a distance.
            if out < -slack * edge.norm() {
                return false;
            }
        }
        true
    }
}

/// One defender's interception course: the trajectory it follows and the
/// time at which it nominally reaches its target's course.
#[derive(Clone, Copy, Debug)]
pub struct DefenderCourse {
    pub trajectory: ConstantControlTrajectory,
    pub intercept_time: f64,
}

impl DefenderCourse {
    pub fn from_engagement(
        x_d: &AgentState,
        sol: &EngagementSolution,
        drag: f64,
    ) -> DefenderCourse {
        DefenderCourse {
            trajectory: ConstantControlTrajectory::new(*x_d, sol.defender_control, drag),
            intercept_time: sol.defender_time,
        }
    }
}

/// Triangle (or segment, or sampled hull) containing the trajectory of
/// `start` under the constant control `accel * (cos heading, sin heading)`
/// over `[0, t_f]`.
pub fn bounding_triangle(
    start: &AgentState,
    heading: f64,
    t_f: f64,
    accel: f64,
    drag: f64,
) -> Result<TrajectoryTriangle> {
    if !start.is_finite() || !heading.is_finite() || !t_f.is_finite() {
        return Err(Error::InvalidParams(
            "non-finite input to bounding_triangle".into(),
        ));
    }
    if t_f < 0.0 {
        return Err(Error::NegativeTime {
            what: "bounding_triangle horizon",
            value: t_f,
        });
    }
    if drag <= 0.0 || accel < 0.0 {
        return Err(Error::InvalidParams(format!(
            "bad accel/drag in bounding_triangle ({accel}, {drag})"
        )));
    }
    let u = Vec2::from_angle(heading) * accel;
    let traj = ConstantControlTrajectory::new(*start, u, drag);
    Ok(triangle_for(&traj, t_f))
}

pub(crate) fn triangle_for(traj: &ConstantControlTrajectory, t_f: f64) -> TrajectoryTriangle {
    let a = traj.position(0.0);
    let b = traj.position(t_f);
    if t_f == 0.0 {
        return TrajectoryTriangle {
            vertices: [a, a, a],
            degenerate: true,
            fallback: false,
        };
    }
    let v0 = traj.start.vel;
    let u = traj.control;

    // Straight-line motion: v0 and u collinear (or either zero). Includes
    // the overshoot case where the velocity reverses along the line.
    let scale = v0.norm() * u.norm();
    if v0.norm() == 0.0 || u.norm() == 0.0 || v0.cross(u).abs() <= 1e-9 * scale.max(1e-9) {
        return collinear_segment(traj, t_f, a, b);
    }

    let d0 = v0;
    let d1 = traj.velocity(t_f);
    if d1.norm() < 1e-12 {
        return hull_triangle(traj, t_f);
    }
    let turn = d1.cross(d0).abs().atan2(d0.dot(d1));
    if turn >= HEADING_FALLBACK {
        return hull_triangle(traj, t_f);
    }
    // Intersect the forward tangent ray at the start with the backward
    // tangent ray at the end: a + s d0 = b - w d1, s, w >= 0.
    let denom = d0.cross(d1);
    if denom.abs() < 1e-12 * d0.norm() * d1.norm() {
        return hull_triangle(traj, t_f);
    }
    let rhs = b - a;
    let s = rhs.cross(d1) / denom;
    let w = rhs.cross(d0) / denom;
    if !(s.is_finite() && w.is_finite()) || s <= 0.0 || w <= 0.0 {
        return hull_triangle(traj, t_f);
    }
    let apex = a + d0 * s;
    TrajectoryTriangle {
        vertices: [a, b, apex],
        degenerate: false,
        fallback: false,
    }
}

/// Segment bound for straight-line motion, including the turnaround extreme
/// when the initial velocity opposes the control.
fn collinear_segment(
    traj: &ConstantControlTrajectory,
    t_f: f64,
    a: Vec2,
    b: Vec2,
) -> TrajectoryTriangle {
    let dir = match traj
        .control
        .try_unit()
        .or_else(|| traj.start.vel.try_unit())
    {
        Some(d) => d,
        None => {
            // No control and no velocity: the point never moves.
            return TrajectoryTriangle {
                vertices: [a, a, a],
                degenerate: true,
                fallback: false,
            };
        }
    };
    let mut lo = a.dot(dir).min(b.dot(dir));
    let mut hi = a.dot(dir).max(b.dot(dir));
    // Turnaround where velocity crosses zero: e^{-ct} (v - u/c) = -u/c.
    let c = traj.drag;
    let u_par = traj.control.dot(dir);
    let v_par = traj.start.vel.dot(dir);
    if u_par != 0.0 {
        let ratio = u_par / (u_par - c * v_par);
        if ratio > 0.0 && ratio < 1.0 {
            let t_star = -ratio.ln() / c;
            if t_star > 0.0 && t_star < t_f {
                let ext = traj.position(t_star).dot(dir);
                lo = lo.min(ext);
                hi = hi.max(ext);
            }
        }
    }
    // Anchor the segment on the line through `a`.
    let origin = a - dir * a.dot(dir);
    let p_lo = origin + dir * lo;
    let p_hi = origin + dir * hi;
    TrajectoryTriangle {
        vertices: [p_lo, p_hi, p_hi],
        degenerate: true,
        fallback: false,
    }
}

/// Sampled bounding-box triangle for trajectories the tangent construction
/// cannot bound (heading change close to a half turn).
fn hull_triangle(traj: &ConstantControlTrajectory, t_f: f64) -> TrajectoryTriangle {
    let dt = t_f / (HULL_SAMPLES - 1) as f64;
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    let mut v_max: f64 = 0.0;
    for k in 0..HULL_SAMPLES {
        let t = dt * k as f64;
        let p = traj.position(t);
        xs = (xs.0.min(p.x), xs.1.max(p.x));
        ys = (ys.0.min(p.y), ys.1.max(p.y));
        v_max = v_max.max(traj.velocity(t).norm());
    }
    // Between samples the point strays at most (v_max + |u| dt) dt from the
    // nearest sample; inflate the box by that margin.
    let m = (v_max + traj.control.norm() * dt) * dt + 1e-9;
    let (bx0, bx1) = (xs.0 - m, xs.1 + m);
    let (by0, by1) = (ys.0 - m, ys.1 + m);
    let w = bx1 - bx0;
    let h = by1 - by0;
    let pad = 1e-9 + 1e-12 * (w + h);
    TrajectoryTriangle {
        vertices: [
            Vec2::new(bx0 - w / 2.0 - pad, by0 - pad),
            Vec2::new(bx1 + w / 2.0 + pad, by0 - pad),
            Vec2::new((bx0 + bx1) / 2.0, by1 + h + 2.0 * pad),
        ],
        degenerate: false,
        fallback: true,
    }
}

fn dist_point_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Minimum distance between two segments (handles zero-length segments).
fn dist_segment_segment(p1: Vec2, q1: Vec2, p2: Vec2, q2: Vec2) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_sq();
    let e = d2.norm_sq();
    let f = d2.dot(r);
    let (s, t);
    if a == 0.0 && e == 0.0 {
        return p1.dist(p2);
    }
    if a == 0.0 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(r);
        if e == 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let mut s_ = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let t_ = (b * s_ + f) / e;
            let t_clamped = t_.clamp(0.0, 1.0);
            if t_ != t_clamped {
                s_ = ((t_clamped * b - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_clamped;
        }
    }
    (p1 + d1 * s).dist(p2 + d2 * t)
}

/// Minimum distance between the two convex bounds (0 when they overlap).
pub(crate) fn triangle_distance(a: &TrajectoryTriangle, b: &TrajectoryTriangle) -> f64 {
    let ea = triangle_edges(a);
    let eb = triangle_edges(b);
    let mut best = f64::INFINITY;
    for (p1, q1) in &ea {
        for (p2, q2) in &eb {
            best = best.min(dist_segment_segment(*p1, *q1, *p2, *q2));
            if best == 0.0 {
                return 0.0;
            }
        }
    }
    // Edges never met: one shape may still contain the other entirely.
    if !a.degenerate && a.contains(b.vertices[0], 0.0) {
        return 0.0;
    }
    if !b.degenerate && b.contains(a.vertices[0], 0.0) {
        return 0.0;
    }
    best
}

fn triangle_edges(t: &TrajectoryTriangle) -> [(Vec2, Vec2); 3] {
    let [a, b, c] = t.vertices;
    [(a, b), (b, c), (c, a)]
}

/// Rejection test: can the two bounded trajectories possibly come within
/// `margin` of each other? `false` definitively rules a collision out;
/// `true` only flags the pair for the dense search.
pub fn triangles_conflict(a: &TrajectoryTriangle, b: &TrajectoryTriangle, margin: f64) -> bool {
    triangle_distance(a, b) < margin
}

/// Earliest time in `[0, max(intercept times)]` at which the two courses'
/// separation reaches `collision_radius`, if any.
///
/// Dense scan at 10 ms resolution with bisection refinement of the crossing;
/// grid local minima within the sub-grid dip bound of the radius are refined
/// by ternary search so a dip between grid points is not missed.
pub fn collision_time(
    a: &DefenderCourse,
    b: &DefenderCourse,
    collision_radius: f64,
) -> Option<f64> {
    let horizon = a.intercept_time.max(b.intercept_time);
    let sep = |t: f64| a.trajectory.position(t).dist(b.trajectory.position(t));
    if sep(0.0) <= collision_radius {
        return Some(0.0);
    }
    // Largest separation change per half grid step: relative speed is
    // bounded by the endpoint speeds of each velocity-space segment.
    let speed_bound =
        |tr: &ConstantControlTrajectory| tr.start.vel.norm().max(tr.control.norm() / tr.drag);
    let dip_guard =
        (speed_bound(&a.trajectory) + speed_bound(&b.trajectory)) * SCAN_STEP * 0.5 + 1e-9;

    let steps = (horizon / SCAN_STEP).ceil() as usize;
    let mut prev_t = 0.0;
    let mut prev_sep = sep(0.0);
    for k in 1..=steps {
        let t = (k as f64 * SCAN_STEP).min(horizon);
        let s = sep(t);
        if s <= collision_radius {
            return Some(refine_crossing(&sep, prev_t, t, collision_radius));
        }
        // Possible sub-grid dip: separation low and locally decreasing then
        // increasing around prev_t.
        if prev_sep <= collision_radius + dip_guard && s >= prev_sep && k >= 2 {
            let left = prev_t - SCAN_STEP;
            if let Some(hit) = refine_dip(&sep, left.max(0.0), t, collision_radius) {
                return Some(hit);
            }
        }
        prev_t = t;
        prev_sep = s;
        if t >= horizon {
            break;
        }
    }
    // Horizon endpoint may sit in a final half-cell dip.
    if prev_sep <= collision_radius + dip_guard {
        let left = (prev_t - SCAN_STEP).max(0.0);
        if let Some(hit) = refine_dip(&sep, left, horizon, collision_radius) {
            return Some(hit);
        }
    }
    None
}

/// Bisect `sep(t) = radius` on `[lo, hi]` with `sep(lo) > radius >= sep(hi)`.
fn refine_crossing(sep: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, radius: f64) -> f64 {
    while hi - lo > REFINE_TOL {
        let mid = 0.5 * (lo + hi);
        if sep(mid) <= radius {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Ternary-search the separation minimum on `[lo, hi]`; if it dips to the
/// radius, return the crossing.
fn refine_dip(sep: &dyn Fn(f64) -> f64, lo0: f64, hi0: f64, radius: f64) -> Option<f64> {
    let (mut lo, mut hi) = (lo0, hi0);
    while hi - lo > REFINE_TOL {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if sep(m1) <= sep(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t_min = 0.5 * (lo + hi);
    if sep(t_min) > radius {
        return None;
    }
    Some(refine_crossing(sep, lo0, t_min, radius))
}

/// Forecast for one pair of courses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionForecast {
    /// Earliest separation crossing, clamped from below at the table's
    /// `t_eps`.
    pub time: f64,
    /// True when the raw crossing was below `t_eps`.
    pub clamped: bool,
}

/// Workload counters for the rejection test's effectiveness.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForecastStats {
    /// Pairs eligible for forecasting (j < j', i != i').
    pub pairs_total: usize,
    /// Pairs that survived the triangle rejection and ran the dense search.
    pub dense_searches: usize,
}

/// All-pairs collision table over per-(defender, attacker) courses.
///
/// Keys are `(j, i, j', i')` with `j < j'`; lookups symmetrize. Pairs with
/// `j = j'` (one body) or `i = i'` (the same attacker cannot be assigned
/// twice) are skipped.
#[derive(Clone, Debug, Default)]
pub struct CollisionTable {
    entries: BTreeMap<(usize, usize, usize, usize), CollisionForecast>,
    pub stats: ForecastStats,
    pub t_eps: f64,
}

impl CollisionTable {
    pub fn get(&self, j: usize, i: usize, jp: usize, ip: usize) -> Option<CollisionForecast> {
        if j == jp || i == ip {
            return None;
        }
        let key = if j < jp {
            (j, i, jp, ip)
        } else {
            (jp, ip, j, i)
        };
        self.entries.get(&key).copied()
    }

    /// Insert an entry, canonicalizing the key. Rejects self-pairs and
    /// non-positive times. Used when reconstructing a table from serialized
    /// records.
    pub fn insert(
        &mut self,
        j: usize,
        i: usize,
        jp: usize,
        ip: usize,
        time: f64,
        clamped: bool,
    ) -> Result<(), &'static str> {
        if j == jp {
            return Err("collision entry pairs a defender with itself");
        }
        if i == ip {
            return Err("collision entry pairs an attacker with itself");
        }
        if !time.is_finite() || time <= 0.0 {
            return Err("collision time must be finite and positive");
        }
        let key = if j < jp {
            (j, i, jp, ip)
        } else {
            (jp, ip, j, i)
        };
        self.entries
            .insert(key, CollisionForecast { time, clamped });
        Ok(())
    }

    pub fn iter(
        &self,
    ) -> impl Iterator<Item = (&(usize, usize, usize, usize), &CollisionForecast)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Build the collision table with triangle rejection. `courses[j][i]` is
/// defender `j`'s course against attacker `i`.
pub fn all_pairs_collision_times(
    courses: &[Vec<DefenderCourse>],
    collision_radius: f64,
    t_eps: f64,
) -> CollisionTable {
    build_table(courses, collision_radius, t_eps, true)
}

/// Same table without the rejection test (every eligible pair gets the dense
/// search). Used to validate pruning soundness and measure its payoff.
pub fn all_pairs_collision_times_brute(
    courses: &[Vec<DefenderCourse>],
    collision_radius: f64,
    t_eps: f64,
) -> CollisionTable {
    build_table(courses, collision_radius, t_eps, false)
}

fn build_table(
    courses: &[Vec<DefenderCourse>],
    collision_radius: f64,
    t_eps: f64,
    prune: bool,
) -> CollisionTable {
    let n_d = courses.len();
    let mut table = CollisionTable {
        t_eps,
        ..CollisionTable::default()
    };
    for j in 0..n_d {
        for jp in (j + 1)..n_d {
            for (i, course_a) in courses[j].iter().enumerate() {
                for (ip, course_b) in courses[jp].iter().enumerate() {
                    if i == ip {
                        continue;
                    }
                    table.stats.pairs_total += 1;
                    let horizon = course_a.intercept_time.max(course_b.intercept_time);
                    if prune {
                        // Both triangles must cover the full pair horizon:
                        // the dense search extends past each course's own
                        // interception time with the control held.
                        let tri_a = triangle_for(&course_a.trajectory, horizon);
                        let tri_b = triangle_for(&course_b.trajectory, horizon);
                        if !triangles_conflict(&tri_a, &tri_b, collision_radius) {
                            continue;
                        }
                    }
                    table.stats.dense_searches += 1;
                    if let Some(raw) = collision_time(course_a, course_b, collision_radius) {
                        table.entries.insert(
                            (j, i, jp, ip),
                            CollisionForecast {
                                time: raw.max(t_eps),
                                clamped: raw < t_eps,
                            },
                        );
                    }
                }
            }
        }
    }
    table
}
