//! Quality-level allocation under a mean-bpp budget.
//!
//! Pick exactly one option per image so that the total distortion is
//! minimal while the unweighted mean of the chosen per-image bpp stays at or
//! below the target. This is a multiple-choice knapsack; three solvers share
//! one result contract:
//!
//! * [`solve_brute_force`] enumerates every assignment (small instances only).
//! * [`solve_lagrangian`] bisects a rate multiplier and returns a feasible
//!   assignment together with a certified duality gap.
//! * [`solve_exact`] runs best-first branch-and-bound with LP/Lagrangian node
//!   bounds and certifies optimality.
//!
//! Feasibility is checked in [`FixedRate`] arithmetic, so all solvers agree
//! on which assignments fit. Among equally good assignments the solvers
//! prefer the lower total rate, then the lexicographically smallest vector
//! of option positions (table order).

mod brute;
mod exact;
mod lagrangian;

pub use brute::{solve_brute_force, solve_brute_force_with, DEFAULT_ENUMERATION_CAP};
pub use exact::{solve_exact, solve_exact_with, ExactOptions};
pub use lagrangian::{dual_value, solve_lagrangian};

use crate::rd_model::{
    pareto_positions, validate_table, Assignment, FixedRate, RdTable, Violation,
};
use std::cmp::Ordering;
use thiserror::Error;

/// The rate budget: mean bpp over all images must not exceed
/// `target_mean_bpp + feasibility_tolerance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetSpec {
    pub target_mean_bpp: f64,
    pub feasibility_tolerance: f64,
}

impl BudgetSpec {
    pub fn new(target_mean_bpp: f64) -> Self {
        Self {
            target_mean_bpp,
            feasibility_tolerance: 0.0,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.feasibility_tolerance = tolerance;
        self
    }

    /// Effective mean-bpp ceiling.
    pub fn limit(&self) -> f64 {
        self.target_mean_bpp + self.feasibility_tolerance
    }

    fn check(&self) -> Result<(), AllocError> {
        let t = self.target_mean_bpp;
        let tol = self.feasibility_tolerance;
        if !(t.is_finite() && t > 0.0) {
            return Err(AllocError::InvalidBudget(format!(
                "target_mean_bpp must be finite and > 0, got {t}"
            )));
        }
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(AllocError::InvalidBudget(format!(
                "feasibility_tolerance must be finite and >= 0, got {tol}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub assignment: Assignment,
    /// Branch-and-bound nodes expanded (exact solver only).
    pub nodes_explored: u64,
    /// Multiplier bisection steps (Lagrangian solver, and the exact solver's warm start).
    pub bisection_iterations: u32,
    /// Optimality is certified; implies `gap_bound == Some(0.0)`.
    pub optimal: bool,
}

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("invalid table: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidTable(Vec<Violation>),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error(
        "infeasible: the lowest achievable mean bpp is {min_mean_bpp}, above the target {target}"
    )]
    Infeasible { min_mean_bpp: f64, target: f64 },
    #[error("enumeration cap exceeded: {count} assignments > cap {cap}")]
    CapExceeded { count: u128, cap: u128 },
    #[error("timeout after {} nodes; incumbent has gap bound {:?}", .0.nodes_explored, .0.assignment.gap_bound)]
    Timeout(Box<SolverReport>),
}

/// Solves every target independently with [`solve_exact`]; one result per target.
pub fn sweep_targets(table: &RdTable, targets: &[f64]) -> Vec<Result<SolverReport, AllocError>> {
    sweep_targets_with(table, targets, &ExactOptions::default())
}

pub fn sweep_targets_with(
    table: &RdTable,
    targets: &[f64],
    options: &ExactOptions,
) -> Vec<Result<SolverReport, AllocError>> {
    targets
        .iter()
        .map(|&t| solve_exact_with(table, &BudgetSpec::new(t), options))
        .collect()
}

/// Returns true when `positions` satisfies the budget under the shared
/// fixed-point feasibility rule.
pub fn is_feasible(table: &RdTable, positions: &[usize], budget: &BudgetSpec) -> bool {
    let cap = budget_capacity(table.len(), budget);
    let used = table
        .images
        .iter()
        .zip(positions)
        .fold(FixedRate::ZERO, |acc, (rec, &p)| {
            acc.saturating_add(rec.options[p].fixed_rate().unwrap_or(FixedRate::MAX))
        });
    used <= cap
}

/// Total fixed-point rate allowed, with the limit read as its shortest
/// round-trip decimal.
///
/// Option rates are rounded up, so `N` extra units are added to
/// `floor(N * (T + tol))`: every truly feasible assignment is admitted, and
/// the largest over-admission is below `N * 2^-64` bpp in total.
pub(crate) fn budget_capacity(n: usize, budget: &BudgetSpec) -> FixedRate {
    FixedRate::from_decimal_times_floor(budget.limit(), n as u64)
        .saturating_add(FixedRate(n as u128))
}

/// Per-option data the solvers share, indexed `[image][candidate]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    /// Position of the option in the source record.
    pub pos: usize,
    pub rate: FixedRate,
    pub bpp: f64,
    pub distortion: f64,
}

pub(crate) struct Problem<'a> {
    pub table: &'a RdTable,
    pub capacity: FixedRate,
    /// Pareto-efficient candidates per image, ascending rate.
    pub candidates: Vec<Vec<Candidate>>,
}

impl<'a> Problem<'a> {
    pub fn new(table: &'a RdTable, budget: &BudgetSpec) -> Result<Self, AllocError> {
        budget.check()?;
        let violations = validate_table(table);
        if !violations.is_empty() {
            return Err(AllocError::InvalidTable(violations));
        }
        let candidates = table
            .images
            .iter()
            .map(|rec| {
                pareto_positions(rec)
                    .into_iter()
                    .map(|pos| {
                        let o = &rec.options[pos];
                        Candidate {
                            pos,
                            rate: o.fixed_rate().expect("validated"),
                            bpp: o.bpp(),
                            distortion: o.distortion,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            table,
            capacity: budget_capacity(table.len(), budget),
            candidates,
        })
    }

    /// Fails with `Infeasible` unless the all-minimum-rate assignment fits.
    pub fn check_feasible(&self, budget: &BudgetSpec) -> Result<(), AllocError> {
        let min_rate = self
            .candidates
            .iter()
            .fold(FixedRate::ZERO, |acc, c| acc.saturating_add(c[0].rate));
        if min_rate > self.capacity {
            let min_mean_bpp =
                self.candidates.iter().map(|c| c[0].bpp).sum::<f64>() / self.table.len() as f64;
            return Err(AllocError::Infeasible {
                min_mean_bpp,
                target: budget.target_mean_bpp,
            });
        }
        Ok(())
    }
}

/// Ranking key of a complete assignment. Smaller is better.
#[derive(Debug, Clone)]
pub(crate) struct AssignmentKey {
    pub distortion: f64,
    pub rate: FixedRate,
    pub positions: Vec<usize>,
}

impl AssignmentKey {
    pub fn new(table: &RdTable, positions: Vec<usize>) -> Self {
        let rate = table
            .images
            .iter()
            .zip(&positions)
            .fold(FixedRate::ZERO, |acc, (rec, &p)| {
                acc.saturating_add(rec.options[p].fixed_rate().unwrap_or(FixedRate::MAX))
            });
        Self {
            distortion: crate::rd_model::total_distortion(table, &positions),
            rate,
            positions,
        }
    }

    pub fn cmp(&self, other: &Self) -> Ordering {
        self.distortion
            .total_cmp(&other.distortion)
            .then(self.rate.cmp(&other.rate))
            .then_with(|| self.positions.cmp(&other.positions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rd_model::{ImageRecord, QualityOption};

    #[test]
    fn budget_validation() {
        let t = RdTable::new(vec![ImageRecord::new(
            "a",
            vec![QualityOption::new("q", 1, 8, 0.1)],
        )]);
        for b in [
            BudgetSpec::new(0.0),
            BudgetSpec::new(f64::NAN),
            BudgetSpec::new(1.0).with_tolerance(-1.0),
        ] {
            assert!(matches!(
                solve_exact(&t, &b),
                Err(AllocError::InvalidBudget(_))
            ));
        }
    }

    #[test]
    fn invalid_table_is_rejected() {
        let t = RdTable::new(vec![ImageRecord::new(
            "a",
            vec![QualityOption::new("q", 1, 0, 0.1)],
        )]);
        assert!(matches!(
            solve_lagrangian(&t, &BudgetSpec::new(1.0)),
            Err(AllocError::InvalidTable(_))
        ));
    }

    #[test]
    fn tolerance_widens_the_budget() {
        // 1 byte over 8 pixels = 1 bpp
        let t = RdTable::new(vec![ImageRecord::new(
            "a",
            vec![QualityOption::new("q", 1, 8, 0.1)],
        )]);
        assert!(!is_feasible(&t, &[0], &BudgetSpec::new(0.99)));
        assert!(is_feasible(
            &t,
            &[0],
            &BudgetSpec::new(0.99).with_tolerance(0.01)
        ));
        assert!(is_feasible(&t, &[0], &BudgetSpec::new(1.0)));
    }

    #[test]
    fn sweep_keeps_going_past_infeasible_targets() {
        let t = RdTable::new(vec![ImageRecord::new(
            "a",
            vec![
                QualityOption::new("lo", 1, 8, 0.5),
                QualityOption::new("hi", 2, 8, 0.1),
            ],
        )]);
        let out = sweep_targets(&t, &[0.5, 1.0, 2.0]);
        assert!(matches!(out[0], Err(AllocError::Infeasible { .. })));
        assert_eq!(out[1].as_ref().unwrap().assignment.choices["a"], "lo");
        assert_eq!(out[2].as_ref().unwrap().assignment.choices["a"], "hi");
    }
}
