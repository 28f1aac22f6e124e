//! Inter-defender collision avoidance filter.
//!
//! Defenders chasing assigned attackers can be driven through each other.
//! This module corrects the nominal pursuit controls with the smallest
//! (stacked) deviation that enforces, for every defender pair, the
//! second-order exponential barrier condition on
//!
//! ```text
//! h = rho_col^2 - ||dr||^2        (h <= 0 means separated)
//! psi = h_dot + k h
//! (d/dt + k)^2 h = h_ddot + 2 k h_dot + k^2 h <= 0
//! ```
//!
//! Along the damped double-integrator dynamics `h_ddot` is affine in the
//! control deviations, so the condition is one linear row per pair, and the
//! per-defender actuator bound is one ball per block: exactly the
//! minimum-norm problem in [`crate::qcqp`]. Enforcing the row keeps `psi`
//! non-increasing, so pairs that start separated with `psi <= 0` keep
//! `h <= 0` — they never close inside `rho_col`.
//!
//! The filter is myopic by design; the guarantee needs a gain large enough
//! that braking can always win before contact. [`GainBound`] computes that
//! threshold from the actuator bound and drag: a defender at top speed
//! stops within `rho_b = u_max (1 - ln 2) / c^2`, so pairs further apart
//! than `rho_0 = 2 rho_b + rho_col` can always be saved, and the worst
//! still-saveable approach (head-on at top speed at `rho_0`) fixes the gain
//! `k_min = 4 v_max rho_0 / (rho_0^2 - rho_col^2)`.

use serde::Serialize;

use crate::dynamics::{AgentParams, AgentState};
use crate::qcqp::{solve_min_norm, Ball, LinearRow, Qcqp, QcqpSolution, SolverOptions};
use crate::vec2::Vec2;
use crate::{Error, Result};

/// Barrier bookkeeping for one defender pair.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BarrierState {
    /// Pair indices `(j, j')` with `j < j'`.
    pub pair: (usize, usize),
    /// `rho_col^2 - ||dr||^2`; non-positive when separated.
    pub h: f64,
    /// `-2 dr . dv`.
    pub h_dot: f64,
    /// `h_dot + k h`.
    pub psi: f64,
}

impl BarrierState {
    pub fn new(
        pair: (usize, usize),
        a: &AgentState,
        b: &AgentState,
        collision_radius: f64,
        gain: f64,
    ) -> BarrierState {
        let dr = a.pos - b.pos;
        let dv = a.vel - b.vel;
        let h = collision_radius * collision_radius - dr.norm_sq();
        let h_dot = -2.0 * dr.dot(dv);
        BarrierState {
            pair,
            h,
            h_dot,
            psi: h_dot + gain * h,
        }
    }

    /// True when this pair satisfies the invariant the filter preserves.
    pub fn initially_valid(&self) -> bool {
        self.h <= 0.0 && self.psi <= 0.0
    }
}

/// Barrier states for every defender pair.
pub fn pairwise_barrier_states(
    states: &[AgentState],
    collision_radius: f64,
    gain: f64,
) -> Vec<BarrierState> {
    let mut out = Vec::new();
    for j in 0..states.len() {
        for jp in (j + 1)..states.len() {
            out.push(BarrierState::new(
                (j, jp),
                &states[j],
                &states[jp],
                collision_radius,
                gain,
            ));
        }
    }
    out
}

/// True when all pairs start separated with `psi <= 0` — the precondition
/// under which the filter's forward-invariance argument applies.
pub fn initial_condition_holds(states: &[AgentState], collision_radius: f64, gain: f64) -> bool {
    pairwise_barrier_states(states, collision_radius, gain)
        .iter()
        .all(BarrierState::initially_valid)
}

/// Gain threshold derived from the defenders' braking capability.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GainBound {
    /// Distance covered from top speed to half speed under full reverse
    /// thrust: `u_max (1 - ln 2) / c^2`.
    pub braking_radius: f64,
    /// `2 braking_radius + rho_col`: beyond this separation any approach
    /// is recoverable.
    pub activation_radius: f64,
    /// Smallest gain that keeps `psi <= 0` for the worst recoverable
    /// approach (head-on, both at top speed, at the activation radius).
    pub min_gain: f64,
}

impl GainBound {
    pub fn new(accel_bound: f64, drag: f64, collision_radius: f64) -> Result<GainBound> {
        if !(accel_bound > 0.0) || !(drag > 0.0) || !(collision_radius > 0.0) {
            return Err(Error::InvalidParams(
                "gain bound needs positive acceleration, drag, and radius".into(),
            ));
        }
        let braking_radius = accel_bound * (1.0 - std::f64::consts::LN_2) / (drag * drag);
        let activation_radius = 2.0 * braking_radius + collision_radius;
        let speed_cap = accel_bound / drag;
        let min_gain = 4.0 * speed_cap * activation_radius
            / (activation_radius * activation_radius - collision_radius * collision_radius);
        Ok(GainBound {
            braking_radius,
            activation_radius,
            min_gain,
        })
    }

    /// Conservative bound for a (possibly heterogeneous) team: the largest
    /// per-defender threshold.
    pub fn for_team(params: &[AgentParams], collision_radius: f64) -> Result<GainBound> {
        let mut worst: Option<GainBound> = None;
        for p in params {
            let b = GainBound::new(p.accel_bound, p.drag, collision_radius)?;
            worst = Some(match worst {
                None => b,
                Some(w) if b.min_gain > w.min_gain => b,
                Some(w) => w,
            });
        }
        worst.ok_or_else(|| Error::InvalidParams("empty defender team".into()))
    }
}

/// Filter output.
#[derive(Clone, Debug)]
pub struct FilterResult {
    /// Deviations from the nominal controls, one per defender.
    pub corrections: Vec<Vec2>,
    /// `nominal + correction`, ready to apply.
    pub controls: Vec<Vec2>,
    /// Barrier state of every pair at the input state.
    pub barrier: Vec<BarrierState>,
    /// Pairs whose row was tight or violated with zero correction
    /// (`b <= 0`): the filter actually had to act on these.
    pub active_pairs: Vec<(usize, usize)>,
    /// Largest number of simultaneously active rows touching one defender.
    /// More than one means the single-threat assumption behind the gain
    /// bound is strained; the guarantee may degrade.
    pub max_active_per_defender: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub relaxed: bool,
    pub fallback_used: bool,
}

/// The program the filter solves over the stacked corrections
/// `x = (du_0, ..., du_{n-1})`: one ball per defender keeping
/// `nominal + du` inside the actuator bound, one linear row per defender
/// pair enforcing the barrier inequality. Inputs are assumed validated
/// (see [`filter_controls`]).
pub fn build_filter_qcqp(
    states: &[AgentState],
    nominal: &[Vec2],
    params: &[AgentParams],
    gain: f64,
    collision_radius: f64,
) -> (Qcqp, Vec<BarrierState>) {
    let n = states.len();
    let barrier = pairwise_barrier_states(states, collision_radius, gain);
    let mut prob = Qcqp {
        dim: 2 * n,
        rows: Vec::with_capacity(barrier.len()),
        balls: (0..n)
            .map(|j| Ball {
                block: j,
                center: nominal[j],
                radius: params[j].accel_bound,
            })
            .collect(),
    };
    for bs in &barrier {
        let (j, jp) = bs.pair;
        let dr = states[j].pos - states[jp].pos;
        let dv = states[j].vel - states[jp].vel;
        let coupling = nominal[j]
            - states[j].vel * params[j].drag
            - (nominal[jp] - states[jp].vel * params[jp].drag);
        let mut a = vec![0.0; 2 * n];
        a[2 * j] = -2.0 * dr.x;
        a[2 * j + 1] = -2.0 * dr.y;
        a[2 * jp] = 2.0 * dr.x;
        a[2 * jp + 1] = 2.0 * dr.y;
        let b =
            -2.0 * gain * bs.h_dot - gain * gain * bs.h + 2.0 * (dv.norm_sq() + dr.dot(coupling));
        prob.rows.push(LinearRow { a, b });
    }
    (prob, barrier)
}

/// Correct the nominal defender controls so every pair satisfies the
/// barrier condition, moving as little as possible in stacked-control
/// space.
///
/// `nominal[j]` must respect defender `j`'s pursuit bound (the actuator
/// bound minus the margin); the filter gets the margin as its working room,
/// so a nominal deeper than half the margin past the pursuit bound is
/// rejected.
pub fn filter_controls(
    states: &[AgentState],
    nominal: &[Vec2],
    params: &[AgentParams],
    gain: f64,
    collision_radius: f64,
    opts: &SolverOptions,
) -> Result<FilterResult> {
    let n = states.len();
    if nominal.len() != n || params.len() != n {
        return Err(Error::InvalidParams(
            "states, nominal controls, and parameters must have equal lengths".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidParams("no defenders to filter".into()));
    }
    if !(gain > 0.0) || !(collision_radius > 0.0) {
        return Err(Error::InvalidParams(
            "filter needs a positive gain and collision radius".into(),
        ));
    }
    for (j, (u, p)) in nominal.iter().zip(params).enumerate() {
        if !u.is_finite() {
            return Err(Error::NonFinite {
                what: "nominal control",
                value: f64::NAN,
            });
        }
        let limit = p.pursuit_accel() + 0.5 * p.margin();
        if u.norm() > limit {
            return Err(Error::NominalControlTooLarge {
                index: j,
                norm: u.norm(),
                limit,
            });
        }
    }

    let (prob, barrier) = build_filter_qcqp(states, nominal, params, gain, collision_radius);
    let mut active_pairs = Vec::new();
    let mut active_count = vec![0usize; n];
    for (bs, row) in barrier.iter().zip(&prob.rows) {
        if row.b <= 0.0 {
            active_pairs.push(bs.pair);
            active_count[bs.pair.0] += 1;
            active_count[bs.pair.1] += 1;
        }
    }

    let QcqpSolution {
        x,
        kkt_residual,
        max_violation,
        relaxed,
        fallback_used,
        ..
    } = solve_min_norm(&prob, opts)?;

    let corrections: Vec<Vec2> = (0..n).map(|j| Vec2::new(x[2 * j], x[2 * j + 1])).collect();
    let controls = nominal
        .iter()
        .zip(&corrections)
        .map(|(u, du)| *u + *du)
        .collect();
    Ok(FilterResult {
        corrections,
        controls,
        barrier,
        active_pairs,
        max_active_per_defender: active_count.into_iter().max().unwrap_or(0),
        kkt_residual,
        max_violation,
        relaxed,
        fallback_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{propagate, WorldParams, DEFAULT_DEFENDER_ACCEL, DEFAULT_DRAG};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_gain_bound() -> GainBound {
        GainBound::new(
            DEFAULT_DEFENDER_ACCEL,
            DEFAULT_DRAG,
            WorldParams::default().collision_radius,
        )
        .unwrap()
    }

    #[test]
    fn gain_bound_matches_hand_computed_values() {
        let b = default_gain_bound();
        assert!((b.braking_radius - 4.173198344384744).abs() < 1e-12);
        assert!((b.activation_radius - 10.346396688769488).abs() < 1e-12);
        assert!((b.min_gain - 2.7309816423776647).abs() < 1e-12);
    }

    #[test]
    fn worst_case_approach_at_activation_radius_is_marginal() {
        // Head-on at top speed exactly at the activation radius: psi = 0 at
        // the minimum gain, positive for any smaller gain.
        let b = default_gain_bound();
        let cap = DEFAULT_DEFENDER_ACCEL / DEFAULT_DRAG;
        let left = AgentState::new(Vec2::ZERO, Vec2::new(cap, 0.0));
        let right = AgentState::new(Vec2::new(b.activation_radius, 0.0), Vec2::new(-cap, 0.0));
        let rho = WorldParams::default().collision_radius;
        let marginal = BarrierState::new((0, 1), &left, &right, rho, b.min_gain);
        assert!(marginal.psi.abs() < 1e-9, "psi = {}", marginal.psi);
        let under = BarrierState::new((0, 1), &left, &right, rho, b.min_gain * 0.99);
        assert!(under.psi > 0.0);
        // Any slower approach or larger separation at the same gain is fine.
        let mut rng = ChaCha8Rng::seed_from_u64(139);
        for _ in 0..200 {
            let sep = b.activation_radius + rng.gen_range(0.0..20.0);
            let speed = rng.gen_range(0.0..cap);
            let l = AgentState::new(Vec2::ZERO, Vec2::new(speed, 0.0));
            let r = AgentState::new(
                Vec2::new(sep, 0.0),
                Vec2::new(-rng.gen_range(0.0..cap), 0.0),
            );
            let s = BarrierState::new((0, 1), &l, &r, rho, b.min_gain);
            assert!(s.psi <= 1e-9, "sep {sep} speed {speed}: psi {}", s.psi);
        }
    }

    #[test]
    fn row_algebra_matches_taylor_expansion() {
        // Propagate a pair under constant controls and compare h(dt)
        // against h + h_dot dt + h_ddot dt^2 / 2 with h_ddot taken from the
        // same expressions the filter rows use.
        let mut rng = ChaCha8Rng::seed_from_u64(149);
        let p = AgentParams::default_defender();
        for _ in 0..50 {
            let mut sample_state = || {
                AgentState::new(
                    Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                    Vec2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)),
                )
            };
            let (sa, sb) = (sample_state(), sample_state());
            let mut sample_u = || {
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                Vec2::from_angle(dir) * rng.gen_range(0.0..p.accel_bound)
            };
            let (ua, ub) = (sample_u(), sample_u());
            let rho = 2.0;
            let gain = 1.0;
            let s0 = BarrierState::new((0, 1), &sa, &sb, rho, gain);
            let dr = sa.pos - sb.pos;
            let dv = sa.vel - sb.vel;
            let coupling = ua - sa.vel * p.drag - (ub - sb.vel * p.drag);
            let h_ddot = -2.0 * (dv.norm_sq() + dr.dot(coupling));
            let dt = 1e-4;
            let sa1 = propagate(&sa, ua, &p, dt).unwrap();
            let sb1 = propagate(&sb, ub, &p, dt).unwrap();
            let s1 = BarrierState::new((0, 1), &sa1, &sb1, rho, gain);
            let predicted = s0.h + s0.h_dot * dt + 0.5 * h_ddot * dt * dt;
            assert!(
                (s1.h - predicted).abs() < 1e-8,
                "h(dt) = {}, Taylor = {}",
                s1.h,
                predicted
            );
        }
    }

    #[test]
    fn distant_defenders_pass_through_untouched() {
        let p = AgentParams::default_defender();
        let states = [
            AgentState::at_rest(Vec2::new(0.0, 0.0)),
            AgentState::at_rest(Vec2::new(50.0, 0.0)),
        ];
        let nominal = [Vec2::new(2.0, 1.0), Vec2::new(-1.0, 2.0)];
        let b = default_gain_bound();
        let r = filter_controls(
            &states,
            &nominal,
            &[p, p],
            b.min_gain,
            2.0,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(r.controls[0], nominal[0]);
        assert_eq!(r.controls[1], nominal[1]);
        assert!(r.active_pairs.is_empty());
        assert!(!r.relaxed && !r.fallback_used);
    }

    #[test]
    fn converging_pair_gets_corrected_and_satisfies_the_row() {
        // Two defenders aimed at each other with nominal thrust that keeps
        // them closing. The filter must modify the controls and the result
        // must satisfy h_ddot + 2k h_dot + k^2 h <= 0.
        let p = AgentParams::default_defender();
        let states = [
            AgentState::new(Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)),
            AgentState::new(Vec2::new(6.0, 0.0), Vec2::new(-3.0, 0.0)),
        ];
        let nominal = [Vec2::new(3.0, 0.0), Vec2::new(-3.0, 0.0)];
        let b = default_gain_bound();
        let rho = 2.0;
        let r = filter_controls(
            &states,
            &nominal,
            &[p, p],
            b.min_gain,
            rho,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(
            r.corrections.iter().any(|c| c.norm() > 1e-6),
            "no correction applied"
        );
        assert_eq!(r.active_pairs, vec![(0, 1)]);
        let dr = states[0].pos - states[1].pos;
        let dv = states[0].vel - states[1].vel;
        let coupling =
            r.controls[0] - states[0].vel * p.drag - (r.controls[1] - states[1].vel * p.drag);
        let h_ddot = -2.0 * (dv.norm_sq() + dr.dot(coupling));
        let s = BarrierState::new((0, 1), &states[0], &states[1], rho, b.min_gain);
        let condition = h_ddot + 2.0 * b.min_gain * s.h_dot + b.min_gain * b.min_gain * s.h;
        assert!(condition <= 1e-6, "condition value {condition}");
        for (c, prm) in r.controls.iter().zip([p, p].iter()) {
            assert!(c.norm() <= prm.accel_bound + 1e-9);
        }
    }

    #[test]
    fn closed_loop_pair_never_breaches_collision_radius() {
        // Integrate the filtered closed loop for a pair started outside the
        // activation radius on a collision course; separation must stay
        // above rho_col the whole way.
        let p = AgentParams::default_defender();
        let b = default_gain_bound();
        let rho = WorldParams::default().collision_radius;
        let cap = p.speed_cap();
        let mut states = [
            AgentState::new(Vec2::new(-7.0, 0.05), Vec2::new(cap * 0.9, 0.0)),
            AgentState::new(Vec2::new(7.0, -0.05), Vec2::new(-cap * 0.9, 0.0)),
        ];
        assert!(initial_condition_holds(&states, rho, b.min_gain));
        let nominal = [Vec2::new(3.0, 0.0), Vec2::new(-3.0, 0.0)];
        let dt = 0.005;
        let mut min_sep = f64::INFINITY;
        for _ in 0..4000 {
            let r = filter_controls(
                &states,
                &nominal,
                &[p, p],
                b.min_gain,
                rho,
                &SolverOptions::default(),
            )
            .unwrap();
            states = [
                propagate(&states[0], r.controls[0], &p, dt).unwrap(),
                propagate(&states[1], r.controls[1], &p, dt).unwrap(),
            ];
            min_sep = min_sep.min(states[0].pos.dist(states[1].pos));
        }
        assert!(
            min_sep >= rho - 1e-3,
            "pair closed to {min_sep} (radius {rho})"
        );
    }

    #[test]
    fn rejects_oversized_nominal_control() {
        let p = AgentParams::default_defender();
        let states = [AgentState::at_rest(Vec2::ZERO)];
        let nominal = [Vec2::new(p.accel_bound + 0.1, 0.0)];
        let err = filter_controls(&states, &nominal, &[p], 1.0, 2.0, &SolverOptions::default())
            .unwrap_err();
        assert!(matches!(
            err,
            Error::NominalControlTooLarge { index: 0, .. }
        ));
    }

    #[test]
    fn three_body_pinch_keeps_all_pairs_separated() {
        // Three defenders converging on the origin from 120-degree spokes.
        // Every pair is in conflict simultaneously.
        let p = AgentParams::default_defender();
        let b = default_gain_bound();
        let rho = 2.0;
        let mut states: Vec<AgentState> = (0..3)
            .map(|k| {
                let ang = std::f64::consts::TAU * k as f64 / 3.0;
                let dir = Vec2::from_angle(ang);
                AgentState::new(dir * 12.0, -dir * 4.0)
            })
            .collect();
        let nominal: Vec<Vec2> = states
            .iter()
            .map(|s| {
                let toward = -s.pos;
                toward * (3.0 / toward.norm())
            })
            .collect();
        assert!(initial_condition_holds(&states, rho, b.min_gain));
        let params = vec![p; 3];
        let dt = 0.005;
        let mut min_sep = f64::INFINITY;
        for _ in 0..3000 {
            let r = filter_controls(
                &states,
                &nominal,
                &params,
                b.min_gain,
                rho,
                &SolverOptions::default(),
            )
            .unwrap();
            for (s, u) in states.iter_mut().zip(&r.controls) {
                *s = propagate(s, *u, &p, dt).unwrap();
            }
            for j in 0..3 {
                for jp in (j + 1)..3 {
                    min_sep = min_sep.min(states[j].pos.dist(states[jp].pos));
                }
            }
        }
        assert!(min_sep >= rho - 1e-3, "min separation {min_sep}");
    }

    #[test]
    fn corrections_are_deterministic() {
        let p = AgentParams::default_defender();
        let states = [
            AgentState::new(Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.2)),
            AgentState::new(Vec2::new(5.0, 0.3), Vec2::new(-3.0, 0.0)),
        ];
        let nominal = [Vec2::new(3.0, 0.0), Vec2::new(-3.0, 0.1)];
        let b = default_gain_bound();
        let run = || {
            filter_controls(
                &states,
                &nominal,
                &[p, p],
                b.min_gain,
                2.0,
                &SolverOptions::default(),
            )
            .unwrap()
            .controls
        };
        assert_eq!(run(), run());
    }
}
