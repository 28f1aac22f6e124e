//! Defender-to-attacker assignment.
//!
//! Costs come from the 1v1 engagements: assigning defender `j` to attacker
//! `i` costs its interception time when the engagement is winnable and a
//! large constant `c_l` otherwise, so unwinnable pairings are used only when
//! feasibility forces them. A second, pairwise cost penalizes assignments
//! whose interception courses are forecast to collide: `1 / t_col`, sharper
//! for earlier collisions.
//!
//! The collision-aware assignment minimizes
//!
//! ```text
//! (1 - w) sum_ji C_int[j][i] d_ji  +  w sum_(ji) sum_(j'i') C_col d_ji d_j'i'
//! ```
//!
//! over binary indicators `d` with every attacker covered exactly once and
//! every defender used at most once (the "at most" relaxes the equality when
//! there are more defenders than attackers). The quadratic double sum runs
//! over ordered pairs, so each unordered conflict counts twice. The search
//! is exact: depth-first branch and bound over attackers in index order,
//! with an admissible bound from the remaining attackers' cheapest available
//! interception costs (the quadratic part is non-negative). Ties resolve to
//! the lexicographically smallest attacker-to-defender vector. The
//! time-only baseline is the same search with the collision weight forced
//! to zero.

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentParams, AgentState, WorldParams};
use crate::engagement::{solve_defender, EngagementSolution};
use crate::forecast::{all_pairs_collision_times, CollisionTable, DefenderCourse, ForecastStats};
use crate::{Error, Result};

/// Default large cost `c_l` for unwinnable pairings (s).
pub const DEFAULT_LARGE_COST: f64 = 1e6;
/// Default collision weight `w`.
pub const DEFAULT_COLLISION_WEIGHT: f64 = 0.5;
/// Default clamp floor for forecast collision times (s), bounding `1/t`.
pub const DEFAULT_T_EPS: f64 = 1e-3;

/// Interception and collision costs for one team state.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "CostTablesRepr", into = "CostTablesRepr")]
pub struct CostTables {
    /// `intercept_cost[j][i]`: interception time, or `large_cost` when the
    /// engagement is not winnable.
    pub intercept_cost: Vec<Vec<f64>>,
    /// Winning-region membership per `(j, i)`.
    pub in_region: Vec<Vec<bool>>,
    /// Forecast collision times per assignment pair.
    pub collision: CollisionTable,
    /// `c_l`.
    pub large_cost: f64,
    /// `w`.
    pub weight: f64,
    /// Clamp floor for collision times.
    pub t_eps: f64,
}

impl CostTables {
    pub fn num_defenders(&self) -> usize {
        self.intercept_cost.len()
    }

    pub fn num_attackers(&self) -> usize {
        self.intercept_cost.first().map_or(0, Vec::len)
    }

    /// Pairwise collision cost `C_col`: `1/t_col` if a collision is
    /// forecast, else 0.
    pub fn collision_cost(&self, j: usize, i: usize, jp: usize, ip: usize) -> f64 {
        self.collision
            .get(j, i, jp, ip)
            .map_or(0.0, |f| 1.0 / f.time)
    }

    /// Objective of an attacker-to-defender map under collision weight `w`.
    pub fn objective_of(&self, attacker_to_defender: &[usize], w: f64) -> f64 {
        let linear: f64 = attacker_to_defender
            .iter()
            .enumerate()
            .map(|(i, &j)| self.intercept_cost[j][i])
            .sum();
        let mut quad = 0.0;
        for (i, &j) in attacker_to_defender.iter().enumerate() {
            for (ip, &jp) in attacker_to_defender.iter().enumerate() {
                if i != ip {
                    quad += self.collision_cost(j, i, jp, ip);
                }
            }
        }
        (1.0 - w) * linear + w * quad
    }

    fn validate(&self) -> Result<()> {
        let n_d = self.num_defenders();
        let n_a = self.num_attackers();
        if n_d == 0 || n_a == 0 {
            return Err(Error::InvalidParams("empty cost tables".into()));
        }
        if self.intercept_cost.iter().any(|row| row.len() != n_a)
            || self.in_region.len() != n_d
            || self.in_region.iter().any(|row| row.len() != n_a)
        {
            return Err(Error::InvalidParams("ragged cost tables".into()));
        }
        if self
            .intercept_cost
            .iter()
            .flatten()
            .any(|c| !c.is_finite() || *c < 0.0)
        {
            return Err(Error::InvalidParams(
                "interception costs must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::InvalidParams(format!(
                "collision weight must lie in [0, 1] (got {})",
                self.weight
            )));
        }
        if !(self.large_cost > 0.0) || !(self.t_eps > 0.0) {
            return Err(Error::InvalidParams(
                "large_cost and t_eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CollisionRecord {
    defender_a: usize,
    attacker_a: usize,
    defender_b: usize,
    attacker_b: usize,
    time: f64,
    clamped: bool,
}

#[derive(Serialize, Deserialize)]
struct CostTablesRepr {
    intercept_cost: Vec<Vec<f64>>,
    in_region: Vec<Vec<bool>>,
    collisions: Vec<CollisionRecord>,
    large_cost: f64,
    weight: f64,
    t_eps: f64,
}

impl From<CostTables> for CostTablesRepr {
    fn from(t: CostTables) -> CostTablesRepr {
        CostTablesRepr {
            intercept_cost: t.intercept_cost,
            in_region: t.in_region,
            collisions: t
                .collision
                .iter()
                .map(|(&(j, i, jp, ip), f)| CollisionRecord {
                    defender_a: j,
                    attacker_a: i,
                    defender_b: jp,
                    attacker_b: ip,
                    time: f.time,
                    clamped: f.clamped,
                })
                .collect(),
            large_cost: t.large_cost,
            weight: t.weight,
            t_eps: t.t_eps,
        }
    }
}

impl TryFrom<CostTablesRepr> for CostTables {
    type Error = Error;
    fn try_from(r: CostTablesRepr) -> Result<CostTables> {
        let mut collision = CollisionTable::default();
        collision.t_eps = r.t_eps;
        let n_d = r.intercept_cost.len();
        let n_a = r.intercept_cost.first().map_or(0, Vec::len);
        for rec in r.collisions {
            if rec.defender_a >= n_d
                || rec.defender_b >= n_d
                || rec.attacker_a >= n_a
                || rec.attacker_b >= n_a
            {
                return Err(Error::InvalidParams(
                    "collision record indexes out of range".into(),
                ));
            }
            if !rec.time.is_finite() || rec.time < r.t_eps {
                return Err(Error::InvalidParams(format!(
                    "collision time {} below clamp floor {}",
                    rec.time, r.t_eps
                )));
            }
            collision
                .insert(
                    rec.defender_a,
                    rec.attacker_a,
                    rec.defender_b,
                    rec.attacker_b,
                    rec.time,
                    rec.clamped,
                )
                .map_err(|m| Error::InvalidParams(m.into()))?;
        }
        let tables = CostTables {
            intercept_cost: r.intercept_cost,
            in_region: r.in_region,
            collision,
            large_cost: r.large_cost,
            weight: r.weight,
            t_eps: r.t_eps,
        };
        tables.validate()?;
        Ok(tables)
    }
}

/// A solved assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `defender_to_attacker[j]` is the attacker assigned to defender `j`,
    /// `None` for idle defenders.
    pub defender_to_attacker: Vec<Option<usize>>,
    /// Objective value at the solver's weight.
    pub objective: f64,
    /// Collision weight the objective was evaluated at (0 for the baseline).
    pub weight: f64,
}

impl Assignment {
    /// Inverse view: attacker index -> defender index.
    pub fn attacker_to_defender(&self) -> Vec<usize> {
        let n_a = self
            .defender_to_attacker
            .iter()
            .flatten()
            .max()
            .map_or(0, |m| m + 1);
        let mut out = vec![usize::MAX; n_a];
        for (j, slot) in self.defender_to_attacker.iter().enumerate() {
            if let Some(i) = slot {
                out[*i] = j;
            }
        }
        out
    }
}

/// Per-team engagement solutions, indexed `[defender][attacker]`.
pub type EngagementGrid = Vec<Vec<EngagementSolution>>;

/// Solve every 1v1 engagement and assemble the cost tables.
///
/// Requires at least as many defenders as attackers (the assignment
/// constraints cover every attacker exactly once).
pub fn build_cost_tables(
    defenders: &[(AgentState, AgentParams)],
    attackers: &[(AgentState, AgentParams)],
    world: &WorldParams,
    weight: f64,
    large_cost: f64,
    t_eps: f64,
) -> Result<(CostTables, EngagementGrid)> {
    if defenders.is_empty() || attackers.is_empty() {
        return Err(Error::InvalidParams(
            "assignment needs at least one defender and one attacker".into(),
        ));
    }
    if defenders.len() < attackers.len() {
        return Err(Error::InvalidParams(format!(
            "cannot cover {} attackers with {} defenders",
            attackers.len(),
            defenders.len()
        )));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidParams(format!(
            "collision weight must lie in [0, 1] (got {weight})"
        )));
    }
    if !(large_cost > 0.0) || !(t_eps > 0.0) {
        return Err(Error::InvalidParams(
            "large_cost and t_eps must be positive".into(),
        ));
    }

    let mut grid: EngagementGrid = Vec::with_capacity(defenders.len());
    let mut intercept_cost = Vec::with_capacity(defenders.len());
    let mut in_region = Vec::with_capacity(defenders.len());
    let mut courses: Vec<Vec<DefenderCourse>> = Vec::with_capacity(defenders.len());
    for (x_d, p_d) in defenders {
        let mut row = Vec::with_capacity(attackers.len());
        let mut costs = Vec::with_capacity(attackers.len());
        let mut membership = Vec::with_capacity(attackers.len());
        let mut course_row = Vec::with_capacity(attackers.len());
        for (x_a, p_a) in attackers {
            let sol = solve_defender(x_d, x_a, world, p_d, p_a)?;
            costs.push(if sol.in_winning_region() {
                sol.defender_time
            } else {
                large_cost
            });
            membership.push(sol.in_winning_region());
            course_row.push(DefenderCourse::from_engagement(x_d, &sol, p_d.drag));
            row.push(sol);
        }
        grid.push(row);
        intercept_cost.push(costs);
        in_region.push(membership);
        courses.push(course_row);
    }
    let collision = all_pairs_collision_times(&courses, world.collision_radius, t_eps);
    let tables = CostTables {
        intercept_cost,
        in_region,
        collision,
        large_cost,
        weight,
        t_eps,
    };
    tables.validate()?;
    Ok((tables, grid))
}

/// Forecast workload counters from the table build.
pub fn forecast_stats(tables: &CostTables) -> ForecastStats {
    tables.collision.stats
}

/// Earliest forecast collision among the pairs an assignment actually
/// selects, if any.
pub fn earliest_assigned_collision(tables: &CostTables, assignment: &Assignment) -> Option<f64> {
    let mut earliest: Option<f64> = None;
    let assigned: Vec<(usize, usize)> = assignment
        .defender_to_attacker
        .iter()
        .enumerate()
        .filter_map(|(j, slot)| slot.map(|i| (j, i)))
        .collect();
    for (a, &(j, i)) in assigned.iter().enumerate() {
        for &(jp, ip) in &assigned[(a + 1)..] {
            if let Some(f) = tables.collision.get(j, i, jp, ip) {
                earliest = Some(earliest.map_or(f.time, |e: f64| e.min(f.time)));
            }
        }
    }
    earliest
}

/// Collision-aware assignment (exact minimum of the weighted objective).
pub fn solve_cadaa(tables: &CostTables) -> Result<Assignment> {
    solve_weighted(tables, tables.weight)
}

/// Time-only baseline: the same exact search with the collision terms
/// removed.
pub fn solve_cudaa(tables: &CostTables) -> Result<Assignment> {
    solve_weighted(tables, 0.0)
}

fn solve_weighted(tables: &CostTables, w: f64) -> Result<Assignment> {
    tables.validate()?;
    let n_d = tables.num_defenders();
    let n_a = tables.num_attackers();
    if n_d < n_a {
        return Err(Error::InvalidParams(format!(
            "cannot cover {n_a} attackers with {n_d} defenders"
        )));
    }

    struct Search<'a> {
        tables: &'a CostTables,
        w: f64,
        used: Vec<bool>,
        map: Vec<usize>,
        best_cost: f64,
        best_map: Vec<usize>,
    }

    impl Search<'_> {
        fn admissible_bound(&self, next: usize, partial: f64) -> f64 {
            // Remaining attackers each cost at least their cheapest available
            // interception; collision terms only add.
            let mut bound = partial;
            for i in next..self.tables.num_attackers() {
                let mut cheapest = f64::INFINITY;
                for j in 0..self.tables.num_defenders() {
                    if !self.used[j] {
                        cheapest = cheapest.min(self.tables.intercept_cost[j][i]);
                    }
                }
                bound += (1.0 - self.w) * cheapest;
            }
            bound
        }

        fn dfs(&mut self, i: usize, partial: f64) {
            if i == self.map.len() {
                // Strict improvement only: the first optimum found in this
                // lexicographic search order is kept on ties.
                if partial < self.best_cost {
                    self.best_cost = partial;
                    self.best_map = self.map.clone();
                }
                return;
            }
            if self.admissible_bound(i, partial) > self.best_cost {
                return;
            }
            for j in 0..self.tables.num_defenders() {
                if self.used[j] {
                    continue;
                }
                let mut delta = (1.0 - self.w) * self.tables.intercept_cost[j][i];
                if self.w > 0.0 {
                    for (ip, &jp) in self.map[..i].iter().enumerate() {
                        // Ordered double sum: each unordered pair twice.
                        delta += self.w * 2.0 * self.tables.collision_cost(j, i, jp, ip);
                    }
                }
                self.used[j] = true;
                self.map[i] = j;
                self.dfs(i + 1, partial + delta);
                self.used[j] = false;
            }
        }
    }

    let mut search = Search {
        tables,
        w,
        used: vec![false; n_d],
        map: vec![usize::MAX; n_a],
        best_cost: f64::INFINITY,
        best_map: Vec::new(),
    };
    search.dfs(0, 0.0);
    debug_assert!(!search.best_map.is_empty());

    let mut defender_to_attacker = vec![None; n_d];
    for (i, &j) in search.best_map.iter().enumerate() {
        defender_to_attacker[j] = Some(i);
    }
    Ok(Assignment {
        defender_to_attacker,
        objective: tables.objective_of(&search.best_map, w),
        weight: w,
    })
}

/// Reference solver: plain enumeration of every injective attacker-to-
/// defender map, in the same lexicographic order as the search. Exponential;
/// intended for validation at small sizes.
pub fn solve_exhaustive(tables: &CostTables, w: f64) -> Result<Assignment> {
    tables.validate()?;
    let n_d = tables.num_defenders();
    let n_a = tables.num_attackers();
    if n_d < n_a {
        return Err(Error::InvalidParams(format!(
            "cannot cover {n_a} attackers with {n_d} defenders"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut map = vec![usize::MAX; n_a];
    let mut used = vec![false; n_d];
    fn rec(
        i: usize,
        tables: &CostTables,
        w: f64,
        map: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if i == map.len() {
            let cost = tables.objective_of(map, w);
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                *best = Some((cost, map.clone()));
            }
            return;
        }
        for j in 0..tables.num_defenders() {
            if used[j] {
                continue;
            }
            used[j] = true;
            map[i] = j;
            rec(i + 1, tables, w, map, used, best);
            used[j] = false;
        }
    }
    rec(0, tables, w, &mut map, &mut used, &mut best);
    let (_, best_map) = best.expect("n_d >= n_a guarantees a feasible map");
    let mut defender_to_attacker = vec![None; n_d];
    for (i, &j) in best_map.iter().enumerate() {
        defender_to_attacker[j] = Some(i);
    }
    Ok(Assignment {
        defender_to_attacker,
        objective: tables.objective_of(&best_map, w),
        weight: w,
    })
}
