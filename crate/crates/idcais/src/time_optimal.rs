//! Minimum-time capture of a fixed point under the damped double integrator.
//!
//! With the dynamics' closed-form state map, the time-optimal control to
//! reach a point is constant at maximum magnitude, `u* = u_max (cos th*,
//! sin th*)`. Substituting the map into the capture condition collapses the
//! problem to one scalar equation: with the control-free miss vector
//!
//! ```text
//! p(t) = (r0 - target) + E1(t) v0
//! ```
//!
//! the final time is the smallest root of
//!
//! ```text
//! g(t) = E2(t) u_max - |p(t)| = 0
//! ```
//!
//! and the heading points opposite the residual miss, `th* = atan2(-p_y(t_f),
//! -p_x(t_f))`. A root always exists: `E2` grows without bound while `|p|`
//! stays bounded. `g` need not be monotone (a fast initial velocity can
//! overshoot), hence the scan-then-bisect root isolation below.

use crate::dynamics::{growth_factors_unchecked, AgentParams, AgentState};
use crate::vec2::Vec2;
use crate::{ensure_finite, Error, Result};

/// Tolerances for the scalar root search.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Final bisection interval width (s).
    pub time_tolerance: f64,
    /// Scan step for first-sign-change isolation, as a fraction of the
    /// bracketing horizon.
    pub scan_fraction: f64,
    /// Give up doubling the bracket past this horizon (s).
    pub max_horizon: f64,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            time_tolerance: 1e-12,
            scan_fraction: 1e-2,
            max_horizon: 1e6,
        }
    }
}

/// Time-optimal point-capture solution.
#[derive(Clone, Copy, Debug)]
pub struct MinTimeSolution {
    /// Smallest capture time (s).
    pub time: f64,
    /// Control heading (radians).
    pub heading: f64,
    /// The constant optimal control, always of magnitude `u_max`.
    pub control: Vec2,
    /// `|g(time)|` at the accepted root.
    pub residual: f64,
}

/// Smallest root of `E2(t) accel = |p(t)|` for a caller-supplied miss vector.
///
/// Shared by point capture (`p` fixed at the target offset) and moving-target
/// interception (`p` folds in the evader's course). Returns the root and the
/// miss vector there; the optimal heading is the direction of `-p(t_f)`.
pub(crate) fn solve_reach<P: Fn(f64) -> Vec2>(
    p: P,
    accel: f64,
    drag: f64,
    cfg: &SolverConfig,
    context: &'static str,
) -> Result<(f64, Vec2)> {
    let g = |t: f64| {
        let (_, e2) = growth_factors_unchecked(t, drag);
        e2 * accel - p(t).norm()
    };

    if p(0.0).norm() == 0.0 {
        return Ok((0.0, Vec2::ZERO));
    }

    // Bracket: double until g turns positive.
    let mut hi = 1.0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
        if hi > cfg.max_horizon {
            return Err(Error::NoRoot {
                context,
                horizon: cfg.max_horizon,
            });
        }
    }

    // Scan for the first sign change so an early root is not skipped when g
    // dips back down after an overshoot.
    let step = cfg.scan_fraction * hi;
    let mut lo = 0.0;
    let mut t = step;
    while t < hi {
        if g(t) > 0.0 {
            hi = t;
            break;
        }
        lo = t;
        t += step;
    }

    // Bisect [lo, hi] with g(lo) <= 0 < g(hi).
    let mut iterations = 0;
    while hi - lo > cfg.time_tolerance && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok((hi, p(hi)))
}

/// Minimum-time transfer of `state` onto `target`, using the agent's full
/// acceleration bound.
pub fn solve_min_time(
    state: &AgentState,
    target: Vec2,
    params: &AgentParams,
) -> Result<MinTimeSolution> {
    solve_min_time_with(
        state,
        target,
        params.accel_bound,
        params.drag,
        &SolverConfig::default(),
    )
}

/// As [`solve_min_time`] with an explicit acceleration budget and tolerances.
pub fn solve_min_time_with(
    state: &AgentState,
    target: Vec2,
    accel: f64,
    drag: f64,
    cfg: &SolverConfig,
) -> Result<MinTimeSolution> {
    if !state.is_finite() || !target.is_finite() {
        return Err(Error::InvalidParams(
            "non-finite state or target in solve_min_time".into(),
        ));
    }
    ensure_finite("accel", accel)?;
    if accel <= 0.0 || drag <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "accel and drag must be positive (got {accel}, {drag})"
        )));
    }
    let offset = state.pos - target;
    let vel = state.vel;
    let p = move |t: f64| {
        let (e1, _) = growth_factors_unchecked(t, drag);
        offset + vel * e1
    };
    let (time, miss) = solve_reach(p, accel, drag, &SolverConfig { ..*cfg }, "point capture")?;
    let heading = (-miss).angle();
    let control = Vec2::from_angle(heading) * accel;
    let (_, e2) = growth_factors_unchecked(time, drag);
    let residual = (e2 * accel - miss.norm()).abs();
    Ok(MinTimeSolution {
        time,
        heading,
        control,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::propagate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_attacker_instance() -> (AgentState, AgentParams) {
        (
            AgentState::at_rest(Vec2::new(10.0, 0.0)),
            AgentParams::default_attacker(),
        )
    }

    /// Independent bisection on the closed-form scalar equation for the
    /// from-rest dash, written out without reusing library code.
    fn rest_dash_oracle(dist: f64, accel: f64, drag: f64) -> f64 {
        let travelled = |t: f64| {
            let e1 = (1.0 - (-drag * t).exp()) / drag;
            accel * (t - e1) / drag
        };
        let (mut lo, mut hi) = (0.0, 1000.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if travelled(mid) > dist {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    #[test]
    fn from_rest_dash_matches_scalar_oracle() {
        let (state, params) = default_attacker_instance();
        let sol = solve_min_time(&state, Vec2::ZERO, &params).unwrap();
        let oracle = rest_dash_oracle(10.0, 3.0, 0.5);
        assert!(
            (sol.time - oracle).abs() < 1e-9,
            "t_f = {}, oracle = {oracle}",
            sol.time
        );
        // Frozen from the oracle: 10 m from rest at u_max 3, drag 1/2.
        assert!((sol.time - 3.2783951478651).abs() < 1e-9);
        // Control points straight at the target.
        assert!(sol.control.dist(Vec2::new(-3.0, 0.0)) < 1e-9);
        assert!((sol.control.norm() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solution_reaches_target_under_forward_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = AgentParams::default_defender();
        for _ in 0..50 {
            let pos = Vec2::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0));
            let speed = rng.gen_range(0.0..0.9 * params.speed_cap());
            let vel = Vec2::from_angle(rng.gen_range(0.0..std::f64::consts::TAU)) * speed;
            let target = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let state = AgentState::new(pos, vel);
            let sol = solve_min_time(&state, target, &params).unwrap();
            let end = propagate(&state, sol.control, &params, sol.time).unwrap();
            assert!(
                end.pos.dist(target) < 1e-6,
                "missed by {}",
                end.pos.dist(target)
            );
            assert!(sol.residual < 1e-9);
        }
    }

    #[test]
    fn scalar_reduction_crosses_zero_once_for_worked_instance() {
        let (state, params) = default_attacker_instance();
        let sol = solve_min_time(&state, Vec2::ZERO, &params).unwrap();
        let g = |t: f64| {
            let (e1, e2) = crate::dynamics::growth_factors(t, params.drag).unwrap();
            let p = (state.pos - Vec2::ZERO) + state.vel * e1;
            e2 * params.accel_bound - p.norm()
        };
        let mut crossings = 0;
        let mut prev = g(0.0);
        let n = 20_000;
        for k in 1..=n {
            let t = 2.0 * sol.time * k as f64 / n as f64;
            let cur = g(t);
            if prev <= 0.0 && cur > 0.0 {
                crossings += 1;
            }
            prev = cur;
        }
        assert_eq!(crossings, 1);
    }

    #[test]
    fn already_at_target_solves_in_zero_time() {
        let params = AgentParams::default_attacker();
        let state = AgentState::at_rest(Vec2::new(2.0, -3.0));
        let sol = solve_min_time(&state, Vec2::new(2.0, -3.0), &params).unwrap();
        assert_eq!(sol.time, 0.0);
        assert!((sol.control.norm() - params.accel_bound).abs() < 1e-12);
    }

    #[test]
    fn euclidean_equivariance() {
        // Rotating and translating the whole instance rotates the heading
        // and leaves the capture time unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params = AgentParams::default_attacker();
        for _ in 0..30 {
            let pos = Vec2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
            let vel = Vec2::from_angle(rng.gen_range(0.0..std::f64::consts::TAU))
                * rng.gen_range(0.0..0.8 * params.speed_cap());
            let target = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            if (pos - target).norm() < 1.0 {
                continue;
            }
            let base = solve_min_time(&AgentState::new(pos, vel), target, &params).unwrap();

            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let shift = Vec2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let rot = |v: Vec2| {
                Vec2::new(
                    v.x * phi.cos() - v.y * phi.sin(),
                    v.x * phi.sin() + v.y * phi.cos(),
                )
            };
            let moved = solve_min_time(
                &AgentState::new(rot(pos) + shift, rot(vel)),
                rot(target) + shift,
                &params,
            )
            .unwrap();
            assert!((moved.time - base.time).abs() < 1e-9);
            let dh = (moved.heading - base.heading - phi).rem_euclid(std::f64::consts::TAU);
            let dh = dh.min(std::f64::consts::TAU - dh);
            assert!(dh < 1e-7, "heading mismatch {dh}");
        }
    }

    #[test]
    fn farther_targets_take_longer_from_rest() {
        let params = AgentParams::default_attacker();
        let mut prev = 0.0;
        for k in 1..20 {
            let d = 2.0 * k as f64;
            let sol = solve_min_time(&AgentState::at_rest(Vec2::ZERO), Vec2::new(d, 0.0), &params)
                .unwrap();
            assert!(sol.time > prev);
            prev = sol.time;
        }
    }

    #[test]
    fn no_heading_on_coarse_grid_beats_optimum() {
        // Small-scale version of the acceptance oracle: no constant control
        // on a 180-heading grid reaches the target ball earlier.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let params = AgentParams::default_attacker();
        for _ in 0..20 {
            let pos = Vec2::from_angle(rng.gen_range(0.0..std::f64::consts::TAU))
                * rng.gen_range(10.0..30.0);
            let vel = Vec2::from_angle(rng.gen_range(0.0..std::f64::consts::TAU))
                * rng.gen_range(0.0..0.6 * params.speed_cap());
            let state = AgentState::new(pos, vel);
            let sol = solve_min_time(&state, Vec2::ZERO, &params).unwrap();
            for h in 0..180 {
                let theta = std::f64::consts::TAU * h as f64 / 180.0;
                let u = Vec2::from_angle(theta) * params.accel_bound;
                let traj = crate::dynamics::ConstantControlTrajectory::new(state, u, params.drag);
                let mut t = 0.0;
                while t < sol.time - 1e-3 {
                    assert!(
                        traj.position(t).norm() > 1e-3,
                        "heading {h} reached the target at t={t} < t_f={}",
                        sol.time
                    );
                    t += sol.time / 400.0;
                }
            }
        }
    }
}
