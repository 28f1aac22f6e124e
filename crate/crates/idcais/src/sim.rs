//! Closed-loop multi-agent simulation.
//!
//! One step of the loop, in order:
//!
//! 1. status sweep at the current states — breach (`||r_a - r_p|| <= rho_p`)
//!    checked before capture (`||r_d - r_a|| < rho_int`, any defender), so
//!    the two can never both fire for one attacker;
//! 2. controls — each defender with a live target re-solves its pursuit
//!    against the attacker's current state; attackers run their policy;
//!    defenders without a task coast (zero nominal);
//! 3. if enabled, the safety filter corrects the stacked defender controls
//!    (coasting defenders stay inside the filter — an inert body must still
//!    not be collided with);
//! 4. one log row per agent at time `t` carrying the control applied over
//!    `[t, t + dt)`;
//! 5. exact zero-order-hold propagation by `dt` for everything not frozen.
//!
//! The defender-to-attacker assignment is solved once at `t = 0` (and again
//! after captures when `reassign_on_capture` is set). Captured and breached
//! attackers freeze in place and never reactivate. The loop ends when no
//! attacker is active or the horizon runs out; a final row at the end time
//! closes every trajectory with zero controls.
//!
//! Filter trouble is reported, not fatal: steps where the filter had to
//! relax its constraints or where one defender faced several simultaneous
//! threats (straining the gain bound's single-threat assumption) become
//! events in the log.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::assignment::{
    build_cost_tables, solve_cadaa, solve_cudaa, Assignment, CostTables, DEFAULT_LARGE_COST,
    DEFAULT_T_EPS,
};
use crate::dynamics::{propagate, AgentParams, AgentState, Role};
use crate::engagement::{solve_attacker, solve_defender};
use crate::qcqp::SolverOptions;
use crate::safety_filter::{filter_controls, GainBound};
use crate::scenario::{AssignmentMode, AttackerPolicy, Scenario};
use crate::vec2::Vec2;
use crate::{Error, Result};

/// Per-agent status in the log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentStatus {
    Active,
    Captured,
    Breached,
    /// A defender with no assigned target (spare, or its target is gone).
    Idle,
}

impl fmt::Display for AgentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentStatus::Active => "active",
            AgentStatus::Captured => "captured",
            AgentStatus::Breached => "breached",
            AgentStatus::Idle => "idle",
        })
    }
}

/// One CSV row.
#[derive(Clone, Debug)]
pub struct LogRecord {
    pub t: f64,
    pub agent_id: String,
    pub role: Role,
    pub state: AgentState,
    pub control: Vec2,
    pub status: AgentStatus,
}

/// Notable happenings, written as a JSON sidecar next to the CSV.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Assigned {
        t: f64,
        mode: AssignmentMode,
        defender_to_attacker: Vec<Option<usize>>,
        objective: f64,
    },
    Capture {
        t: f64,
        attacker: usize,
        defender: usize,
        distance: f64,
    },
    Breach {
        t: f64,
        attacker: usize,
        distance: f64,
    },
    /// Closest approach of one defender pair over the whole run.
    MinSeparation {
        t: f64,
        first: usize,
        second: usize,
        distance: f64,
    },
    /// The filter could not satisfy all barrier rows and fell back to
    /// penalized slacks at this step.
    RelaxedFilter { t: f64, max_violation: f64 },
    /// One defender had several simultaneously active barrier rows; the
    /// gain bound's single-threat reasoning is strained here.
    CrowdedFilter {
        t: f64,
        max_active_per_defender: usize,
    },
}

/// The full time-stamped record of a run.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryLog {
    pub records: Vec<LogRecord>,
    pub events: Vec<Event>,
}

impl TrajectoryLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,agent_id,role,x,y,vx,vy,ux,uy,status\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.agent_id,
                r.role,
                r.state.pos.x,
                r.state.pos.y,
                r.state.vel.x,
                r.state.vel.y,
                r.control.x,
                r.control.y,
                r.status
            ));
        }
        out
    }

    pub fn events_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.events).expect("event serialization");
        s.push('\n');
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_events(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.events_json()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Aggregate results of one run.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub captures: usize,
    pub breaches: usize,
    pub active_remaining: usize,
    /// Capture time per attacker (`null` if never captured).
    pub capture_times: Vec<Option<f64>>,
    /// Breach time per attacker.
    pub breach_times: Vec<Option<f64>>,
    /// Smallest defender pair separation seen at any logged state
    /// (infinite for a single defender).
    pub min_defender_separation: f64,
    /// The assignment solved at t = 0.
    pub assignment: Assignment,
    /// The t = 0 objective recomputed from the assignment map — must match
    /// `assignment.objective`.
    pub objective_replayed: f64,
    /// Steps on which the filter ran in relaxed mode.
    pub relaxed_steps: usize,
    /// Largest correction the filter applied on a step where no barrier row
    /// was active — a minimum-deviation filter must leave those steps
    /// untouched, so anything above 0 is a defect.
    pub max_idle_correction: f64,
    /// Simulation end time.
    pub end_time: f64,
}

/// Deterministic evasive law: full thrust along the half-and-half blend of
/// "away from the nearest active defender" and "toward the protected
/// center". Degenerate blends (exactly opposed unit vectors, or the
/// attacker sitting on the protected center) fall back to the protected-
/// center bearing, then to the flee direction.
pub fn attacker_policy_evasive(
    x_a: &AgentState,
    defenders: &[AgentState],
    accel_bound: f64,
    protected_center: Vec2,
) -> Vec2 {
    let toward = (protected_center - x_a.pos).try_unit();
    let flee = defenders
        .iter()
        .min_by(|a, b| {
            let da = a.pos.dist(x_a.pos);
            let db = b.pos.dist(x_a.pos);
            da.partial_cmp(&db).expect("finite distances")
        })
        .and_then(|nearest| (x_a.pos - nearest.pos).try_unit());
    let dir = match (flee, toward) {
        (Some(f), Some(t)) => (f + t).try_unit().or(toward).or(flee),
        (None, Some(t)) => Some(t),
        (Some(f), None) => Some(f),
        (None, None) => None,
    };
    dir.map_or(Vec2::ZERO, |d| d * accel_bound)
}

struct Team {
    states: Vec<AgentState>,
    params: Vec<AgentParams>,
}

fn split_setup(setup: Vec<(AgentState, AgentParams)>) -> Team {
    let (states, params) = setup.into_iter().unzip();
    Team { states, params }
}

fn solve_assignment(tables: &CostTables, mode: AssignmentMode) -> Result<Assignment> {
    match mode {
        AssignmentMode::Cadaa => solve_cadaa(tables),
        AssignmentMode::Cudaa => solve_cudaa(tables),
    }
}

/// Run one scenario to completion. See the module docs for the loop.
pub fn run_simulation(scenario: &Scenario) -> Result<(TrajectoryLog, Outcome)> {
    scenario.validate()?;
    let mut defenders = split_setup(scenario.defender_setup());
    let mut attackers = split_setup(scenario.attacker_setup());
    let n_d = defenders.states.len();
    let n_a = attackers.states.len();
    let world = &scenario.world;
    let gain = match scenario.gain {
        Some(g) => g,
        None => GainBound::for_team(&defenders.params, world.collision_radius)?.min_gain,
    };
    let filter_opts = SolverOptions::default();

    let mut log = TrajectoryLog::default();
    let mut attacker_status = vec![AgentStatus::Active; n_a];
    let mut capture_times: Vec<Option<f64>> = vec![None; n_a];
    let mut breach_times: Vec<Option<f64>> = vec![None; n_a];
    // Closest approach per defender pair: (distance, time).
    let mut pair_minima: Vec<((usize, usize), (f64, f64))> = (0..n_d)
        .flat_map(|j| ((j + 1)..n_d).map(move |jp| ((j, jp), (f64::INFINITY, 0.0))))
        .collect();
    let mut relaxed_steps = 0usize;
    let mut max_idle_correction = 0.0f64;

    // Initial assignment from the full cost pipeline.
    let pair_setup = |d: &Team, a: &Team, live: &[usize]| -> (Vec<_>, Vec<_>) {
        (
            d.states
                .iter()
                .zip(&d.params)
                .map(|(s, p)| (*s, *p))
                .collect(),
            live.iter().map(|&i| (a.states[i], a.params[i])).collect(),
        )
    };
    let all_attackers: Vec<usize> = (0..n_a).collect();
    let (d_setup, a_setup) = pair_setup(&defenders, &attackers, &all_attackers);
    let (tables, _) = build_cost_tables(
        &d_setup,
        &a_setup,
        world,
        scenario.weight,
        DEFAULT_LARGE_COST,
        DEFAULT_T_EPS,
    )?;
    let initial_assignment = solve_assignment(&tables, scenario.assignment_mode)?;
    let objective_replayed = tables.objective_of(
        &initial_assignment.attacker_to_defender(),
        initial_assignment.weight,
    );
    log.events.push(Event::Assigned {
        t: 0.0,
        mode: scenario.assignment_mode,
        defender_to_attacker: initial_assignment.defender_to_attacker.clone(),
        objective: initial_assignment.objective,
    });
    // target[j] is defender j's live attacker, if any.
    let mut target: Vec<Option<usize>> = initial_assignment.defender_to_attacker.clone();

    let mut step = 0usize;
    let mut t;
    loop {
        t = step as f64 * scenario.dt;

        // Track pair separations at every visited state.
        for ((j, jp), best) in pair_minima.iter_mut() {
            let d = defenders.states[*j].pos.dist(defenders.states[*jp].pos);
            if d < best.0 {
                *best = (d, t);
            }
        }

        // Status sweep: breaches strictly before captures.
        let mut captured_now = false;
        for i in 0..n_a {
            if attacker_status[i] != AgentStatus::Active {
                continue;
            }
            let to_center = attackers.states[i].pos.dist(world.protected_center);
            if to_center <= world.protected_radius {
                attacker_status[i] = AgentStatus::Breached;
                breach_times[i] = Some(t);
                log.events.push(Event::Breach {
                    t,
                    attacker: i,
                    distance: to_center,
                });
                continue;
            }
            let nearest = (0..n_d)
                .map(|j| (defenders.states[j].pos.dist(attackers.states[i].pos), j))
                .min_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            if let Some((dist, j)) = nearest {
                if dist < world.capture_radius {
                    attacker_status[i] = AgentStatus::Captured;
                    capture_times[i] = Some(t);
                    captured_now = true;
                    log.events.push(Event::Capture {
                        t,
                        attacker: i,
                        defender: j,
                        distance: dist,
                    });
                }
            }
        }
        // Release defenders whose target is gone.
        for slot in target.iter_mut() {
            if let Some(i) = *slot {
                if attacker_status[i] != AgentStatus::Active {
                    *slot = None;
                }
            }
        }
        if captured_now && scenario.reassign_on_capture {
            let live: Vec<usize> = (0..n_a)
                .filter(|&i| attacker_status[i] == AgentStatus::Active)
                .collect();
            if !live.is_empty() {
                let (d_setup, a_setup) = pair_setup(&defenders, &attackers, &live);
                let (tables, _) = build_cost_tables(
                    &d_setup,
                    &a_setup,
                    world,
                    scenario.weight,
                    DEFAULT_LARGE_COST,
                    DEFAULT_T_EPS,
                )?;
                let assignment = solve_assignment(&tables, scenario.assignment_mode)?;
                target = assignment
                    .defender_to_attacker
                    .iter()
                    .map(|slot| slot.map(|k| live[k]))
                    .collect();
                log.events.push(Event::Assigned {
                    t,
                    mode: scenario.assignment_mode,
                    defender_to_attacker: target.clone(),
                    objective: assignment.objective,
                });
            }
        }

        let done = attacker_status.iter().all(|s| *s != AgentStatus::Active)
            || t >= scenario.t_max - 1e-12;

        // Controls for this step (zero on the final/closing row).
        let mut defender_controls = vec![Vec2::ZERO; n_d];
        let mut attacker_controls = vec![Vec2::ZERO; n_a];
        if !done {
            for j in 0..n_d {
                if let Some(i) = target[j] {
                    let sol = solve_defender(
                        &defenders.states[j],
                        &attackers.states[i],
                        world,
                        &defenders.params[j],
                        &attackers.params[i],
                    )?;
                    defender_controls[j] = sol.defender_control;
                }
            }
            for i in 0..n_a {
                if attacker_status[i] != AgentStatus::Active {
                    continue;
                }
                attacker_controls[i] = match scenario.attacker_policy {
                    AttackerPolicy::Optimal => {
                        solve_attacker(&attackers.states[i], world, &attackers.params[i])?.control
                    }
                    AttackerPolicy::Evasive => attacker_policy_evasive(
                        &attackers.states[i],
                        &defenders.states,
                        attackers.params[i].accel_bound,
                        world.protected_center,
                    ),
                };
            }
            if scenario.cbf_enabled && n_d > 1 {
                let filtered = filter_controls(
                    &defenders.states,
                    &defender_controls,
                    &defenders.params,
                    gain,
                    world.collision_radius,
                    &filter_opts,
                )?;
                if filtered.relaxed {
                    relaxed_steps += 1;
                    log.events.push(Event::RelaxedFilter {
                        t,
                        max_violation: filtered.max_violation,
                    });
                }
                if filtered.max_active_per_defender > 1 {
                    log.events.push(Event::CrowdedFilter {
                        t,
                        max_active_per_defender: filtered.max_active_per_defender,
                    });
                }
                if filtered.active_pairs.is_empty() {
                    for du in &filtered.corrections {
                        max_idle_correction = max_idle_correction.max(du.norm());
                    }
                }
                defender_controls = filtered.controls;
            }
        }

        // Log every agent at t with the control held over [t, t + dt).
        for j in 0..n_d {
            log.records.push(LogRecord {
                t,
                agent_id: format!("d{j}"),
                role: Role::Defender,
                state: defenders.states[j],
                control: defender_controls[j],
                status: if target[j].is_some() {
                    AgentStatus::Active
                } else {
                    AgentStatus::Idle
                },
            });
        }
        for i in 0..n_a {
            log.records.push(LogRecord {
                t,
                agent_id: format!("a{i}"),
                role: Role::Attacker,
                state: attackers.states[i],
                control: attacker_controls[i],
                status: attacker_status[i],
            });
        }
        if done {
            break;
        }

        // Exact propagation; frozen attackers stay put.
        for (j, &control) in defender_controls.iter().enumerate() {
            defenders.states[j] = propagate(
                &defenders.states[j],
                control,
                &defenders.params[j],
                scenario.dt,
            )?;
        }
        for i in 0..n_a {
            if attacker_status[i] == AgentStatus::Active {
                attackers.states[i] = propagate(
                    &attackers.states[i],
                    attacker_controls[i],
                    &attackers.params[i],
                    scenario.dt,
                )?;
            }
        }
        step += 1;
    }

    let mut min_defender_separation = f64::INFINITY;
    for ((j, jp), (distance, at)) in &pair_minima {
        min_defender_separation = min_defender_separation.min(*distance);
        log.events.push(Event::MinSeparation {
            t: *at,
            first: *j,
            second: *jp,
            distance: *distance,
        });
    }

    let captures = attacker_status
        .iter()
        .filter(|s| **s == AgentStatus::Captured)
        .count();
    let breaches = attacker_status
        .iter()
        .filter(|s| **s == AgentStatus::Breached)
        .count();
    let outcome = Outcome {
        captures,
        breaches,
        active_remaining: n_a - captures - breaches,
        capture_times,
        breach_times,
        min_defender_separation,
        assignment: initial_assignment,
        objective_replayed,
        relaxed_steps,
        max_idle_correction,
        end_time: t,
    };
    Ok((log, outcome))
}

/// Side-by-side result of one assignment mode in [`compare_assignments`].
#[derive(Clone, Debug, Serialize)]
pub struct ModeReport {
    pub mode: AssignmentMode,
    pub defender_to_attacker: Vec<Option<usize>>,
    /// The mode's own objective value.
    pub objective: f64,
    /// The map's cost under the scenario's collision-aware objective, for
    /// apples-to-apples comparison across modes.
    pub objective_at_scenario_weight: f64,
    pub min_defender_separation: f64,
    /// First time any defender pair closed inside the collision radius
    /// (from the logged states), if it happened.
    pub defender_collision_time: Option<f64>,
    pub capture_times: Vec<Option<f64>>,
    pub captures: usize,
    pub breaches: usize,
}

/// Both assignment modes on the same initial conditions, filter off, so the
/// assignment alone decides whether the defenders cross.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub weight: f64,
    pub cadaa: ModeReport,
    pub cudaa: ModeReport,
}

fn first_pair_breach_time(log: &TrajectoryLog, n_d: usize, radius: f64) -> Option<f64> {
    // Records are grouped per step: defenders first, in index order.
    let stride = log
        .records
        .iter()
        .position(|r| r.t > log.records[0].t)
        .unwrap_or(log.records.len());
    let mut k = 0;
    while k < log.records.len() {
        let step = &log.records[k..(k + stride).min(log.records.len())];
        for j in 0..n_d {
            for jp in (j + 1)..n_d {
                if step[j].state.pos.dist(step[jp].state.pos) < radius {
                    return Some(step[j].t);
                }
            }
        }
        k += stride;
    }
    None
}

/// Run the scenario once per assignment mode with the filter disabled and
/// report the collision-relevant numbers for both.
pub fn compare_assignments(scenario: &Scenario) -> Result<ComparisonReport> {
    scenario.validate()?;
    let (tables, _) = build_cost_tables(
        &scenario.defender_setup(),
        &scenario.attacker_setup(),
        &scenario.world,
        scenario.weight,
        DEFAULT_LARGE_COST,
        DEFAULT_T_EPS,
    )?;
    let run_mode = |mode: AssignmentMode| -> Result<ModeReport> {
        let mut variant = scenario.clone();
        variant.assignment_mode = mode;
        variant.cbf_enabled = false;
        let (log, outcome) = run_simulation(&variant)?;
        let map = outcome.assignment.attacker_to_defender();
        Ok(ModeReport {
            mode,
            defender_to_attacker: outcome.assignment.defender_to_attacker.clone(),
            objective: outcome.assignment.objective,
            objective_at_scenario_weight: tables.objective_of(&map, scenario.weight),
            min_defender_separation: outcome.min_defender_separation,
            defender_collision_time: first_pair_breach_time(
                &log,
                scenario.defenders.len(),
                scenario.world.collision_radius,
            ),
            capture_times: outcome.capture_times,
            captures: outcome.captures,
            breaches: outcome.breaches,
        })
    };
    Ok(ComparisonReport {
        weight: scenario.weight,
        cadaa: run_mode(AssignmentMode::Cadaa)?,
        cudaa: run_mode(AssignmentMode::Cudaa)?,
    })
}
