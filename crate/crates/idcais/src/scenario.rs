//! Scenario configuration and JSON I/O.
//!
//! A scenario fixes the world geometry, both teams' initial states and
//! parameters, and the closed-loop knobs (assignment mode, attacker policy,
//! filter gain, step size, horizon). Files are JSON with exactly these
//! fields; unknown keys are rejected with line/column positions, and the
//! semantic invariants are checked after parsing:
//!
//! - at least as many defenders as attackers (every attacker gets one),
//! - every attacker starts outside the protected disc,
//! - every defender pair starts separated by more than the collision
//!   radius.
//!
//! Serialization is canonical (fixed field order, pretty-printed, trailing
//! newline), so `serialize(parse(serialize(s)))` is byte-identical.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AgentParams, AgentState, Role, WorldParams};
use crate::vec2::Vec2;
use crate::{Error, Result};

/// Validation failures, each naming the offending part of the document.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario needs at least one defender and one attacker")]
    EmptyTeam,
    #[error("{defenders} defenders cannot cover {attackers} attackers")]
    Undermanned { defenders: usize, attackers: usize },
    #[error(
        "attacker {index} starts inside the protected disc \
         (distance {distance:.6}, radius {radius})"
    )]
    AttackerInsideProtectedArea {
        index: usize,
        distance: f64,
        radius: f64,
    },
    #[error(
        "defenders {first} and {second} start {distance:.6} apart, \
         within the collision radius {radius}"
    )]
    DefendersTooClose {
        first: usize,
        second: usize,
        distance: f64,
        radius: f64,
    },
    #[error("{role} {index}: {message}")]
    BadAgent {
        role: Role,
        index: usize,
        message: String,
    },
    #[error("field `{field}`: {message}")]
    BadField {
        field: &'static str,
        message: String,
    },
}

/// How attackers behave each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerPolicy {
    /// Re-solve the time-optimal dash to the protected center every step.
    #[default]
    Optimal,
    /// Flee the nearest defender, blended half-and-half with the bearing to
    /// the protected center, at full thrust.
    Evasive,
}

impl fmt::Display for AttackerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackerPolicy::Optimal => "optimal",
            AttackerPolicy::Evasive => "evasive",
        })
    }
}

impl FromStr for AttackerPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<AttackerPolicy, String> {
        match s {
            "optimal" => Ok(AttackerPolicy::Optimal),
            "evasive" => Ok(AttackerPolicy::Evasive),
            other => Err(format!(
                "unknown attacker policy `{other}` (expected `optimal` or `evasive`)"
            )),
        }
    }
}

/// Which assignment objective the defenders solve at t = 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentMode {
    /// Collision-aware: interception time plus weighted pairwise collision
    /// costs.
    #[default]
    Cadaa,
    /// Time-only baseline.
    Cudaa,
}

impl fmt::Display for AssignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssignmentMode::Cadaa => "cadaa",
            AssignmentMode::Cudaa => "cudaa",
        })
    }
}

impl FromStr for AssignmentMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<AssignmentMode, String> {
        match s {
            "cadaa" => Ok(AssignmentMode::Cadaa),
            "cudaa" => Ok(AssignmentMode::Cudaa),
            other => Err(format!(
                "unknown assignment mode `{other}` (expected `cadaa` or `cudaa`)"
            )),
        }
    }
}

/// One agent's initial state and (optional) parameter overrides. Omitted
/// parameters take the role defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub position: Vec2,
    #[serde(default)]
    pub velocity: Vec2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drag: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_margin: Option<f64>,
}

impl AgentSpec {
    pub fn at(position: Vec2) -> AgentSpec {
        AgentSpec {
            position,
            velocity: Vec2::ZERO,
            accel_bound: None,
            drag: None,
            body_radius: None,
            accel_margin: None,
        }
    }

    pub fn with_velocity(mut self, velocity: Vec2) -> AgentSpec {
        self.velocity = velocity;
        self
    }

    fn state(&self) -> AgentState {
        AgentState::new(self.position, self.velocity)
    }

    fn params(&self, role: Role) -> AgentParams {
        let mut p = match role {
            Role::Attacker => AgentParams::default_attacker(),
            Role::Defender => AgentParams::default_defender(),
        };
        if let Some(a) = self.accel_bound {
            p.accel_bound = a;
        }
        if let Some(c) = self.drag {
            p.drag = c;
        }
        if let Some(r) = self.body_radius {
            p.body_radius = r;
        }
        if let Some(m) = self.accel_margin {
            p.accel_margin = Some(m);
        }
        p
    }
}

fn default_weight() -> f64 {
    crate::assignment::DEFAULT_COLLISION_WEIGHT
}

fn default_dt() -> f64 {
    0.01
}

fn default_t_max() -> f64 {
    60.0
}

fn default_true() -> bool {
    true
}

/// A full experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub world: WorldParams,
    pub defenders: Vec<AgentSpec>,
    pub attackers: Vec<AgentSpec>,
    /// Collision weight in the assignment objective.
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Barrier gain; `null`/absent means the team's computed minimum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub attacker_policy: AttackerPolicy,
    #[serde(default)]
    pub assignment_mode: AssignmentMode,
    #[serde(default = "default_true")]
    pub cbf_enabled: bool,
    #[serde(default)]
    pub reassign_on_capture: bool,
}

impl Scenario {
    /// A minimal scenario with default knobs.
    pub fn new(defenders: Vec<AgentSpec>, attackers: Vec<AgentSpec>) -> Scenario {
        Scenario {
            world: WorldParams::default(),
            defenders,
            attackers,
            weight: default_weight(),
            gain: None,
            dt: default_dt(),
            t_max: default_t_max(),
            attacker_policy: AttackerPolicy::default(),
            assignment_mode: AssignmentMode::default(),
            cbf_enabled: true,
            reassign_on_capture: false,
        }
    }

    pub fn defender_setup(&self) -> Vec<(AgentState, AgentParams)> {
        self.defenders
            .iter()
            .map(|s| (s.state(), s.params(Role::Defender)))
            .collect()
    }

    pub fn attacker_setup(&self) -> Vec<(AgentState, AgentParams)> {
        self.attackers
            .iter()
            .map(|s| (s.state(), s.params(Role::Attacker)))
            .collect()
    }

    pub fn validate(&self) -> std::result::Result<(), ScenarioError> {
        if self.defenders.is_empty() || self.attackers.is_empty() {
            return Err(ScenarioError::EmptyTeam);
        }
        if self.defenders.len() < self.attackers.len() {
            return Err(ScenarioError::Undermanned {
                defenders: self.defenders.len(),
                attackers: self.attackers.len(),
            });
        }
        self.world.validate().map_err(|e| ScenarioError::BadField {
            field: "world",
            message: e.to_string(),
        })?;
        for (role, specs) in [
            (Role::Defender, &self.defenders),
            (Role::Attacker, &self.attackers),
        ] {
            for (index, spec) in specs.iter().enumerate() {
                if !spec.position.is_finite() || !spec.velocity.is_finite() {
                    return Err(ScenarioError::BadAgent {
                        role,
                        index,
                        message: "position and velocity must be finite".into(),
                    });
                }
                spec.params(role)
                    .validate()
                    .map_err(|e| ScenarioError::BadAgent {
                        role,
                        index,
                        message: e.to_string(),
                    })?;
            }
        }
        for (index, spec) in self.attackers.iter().enumerate() {
            let distance = spec.position.dist(self.world.protected_center);
            if distance <= self.world.protected_radius {
                return Err(ScenarioError::AttackerInsideProtectedArea {
                    index,
                    distance,
                    radius: self.world.protected_radius,
                });
            }
        }
        for first in 0..self.defenders.len() {
            for second in (first + 1)..self.defenders.len() {
                let distance = self.defenders[first]
                    .position
                    .dist(self.defenders[second].position);
                if distance <= self.world.collision_radius {
                    return Err(ScenarioError::DefendersTooClose {
                        first,
                        second,
                        distance,
                        radius: self.world.collision_radius,
                    });
                }
            }
        }
        if !(self.weight.is_finite() && (0.0..=1.0).contains(&self.weight)) {
            return Err(ScenarioError::BadField {
                field: "weight",
                message: format!("must lie in [0, 1] (got {})", self.weight),
            });
        }
        if let Some(gain) = self.gain {
            if !(gain.is_finite() && gain > 0.0) {
                return Err(ScenarioError::BadField {
                    field: "gain",
                    message: format!("must be positive (got {gain})"),
                });
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ScenarioError::BadField {
                field: "dt",
                message: format!("must be positive (got {})", self.dt),
            });
        }
        if !(self.t_max.is_finite() && self.t_max >= self.dt) {
            return Err(ScenarioError::BadField {
                field: "t_max",
                message: format!("must be at least dt (got {})", self.t_max),
            });
        }
        Ok(())
    }

    /// Parse and validate a JSON document.
    pub fn from_json_str(text: &str) -> Result<Scenario> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Canonical serialized form: fixed field order, two-space indentation,
    /// trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serialization");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Scenario::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical_json()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
