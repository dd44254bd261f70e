use super::{AllocError, BudgetSpec, Problem, SolverReport};
use crate::rd_model::{Assignment, FixedRate, RdTable, SolverKind};

/// Default limit on the number of assignments [`solve_brute_force`] enumerates.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

pub fn solve_brute_force(table: &RdTable, budget: &BudgetSpec) -> Result<SolverReport, AllocError> {
    solve_brute_force_with(table, budget, DEFAULT_ENUMERATION_CAP)
}

/// Exhaustive enumeration over every option of every image.
pub fn solve_brute_force_with(
    table: &RdTable,
    budget: &BudgetSpec,
    cap: u128,
) -> Result<SolverReport, AllocError> {
    let problem = Problem::new(table, budget)?;
    let count = table.assignment_count();
    if count > cap {
        return Err(AllocError::CapExceeded { count, cap });
    }
    problem.check_feasible(budget)?;

    let options: Vec<Vec<(FixedRate, f64)>> = table
        .images
        .iter()
        .map(|r| {
            r.options
                .iter()
                .map(|o| (o.fixed_rate().expect("validated"), o.distortion))
                .collect()
        })
        .collect();
    let mut search = Search {
        options: &options,
        capacity: problem.capacity,
        current: vec![0; table.len()],
        best: None,
    };
    search.descend(0, 0.0, FixedRate::ZERO);
    let (_, _, positions) = search.best.expect("min-rate assignment is feasible");

    Ok(SolverReport {
        assignment: Assignment::from_positions(
            table,
            &positions,
            SolverKind::Brute,
            None,
            Some(0.0),
        ),
        nodes_explored: 0,
        bisection_iterations: 0,
        optimal: true,
    })
}

struct Search<'a> {
    options: &'a [Vec<(FixedRate, f64)>],
    capacity: FixedRate,
    current: Vec<usize>,
    best: Option<(f64, FixedRate, Vec<usize>)>,
}

impl Search<'_> {
    // Prefix sums run in table order so leaf totals match `total_distortion`.
    fn descend(&mut self, image: usize, distortion: f64, rate: FixedRate) {
        if image == self.options.len() {
            if rate > self.capacity {
                return;
            }
            // Leaves arrive in lexicographic position order, so only a strict
            // improvement replaces the incumbent.
            let better = match &self.best {
                None => true,
                Some((d, r, _)) => distortion.total_cmp(d).then(rate.cmp(r)).is_lt(),
            };
            if better {
                self.best = Some((distortion, rate, self.current.clone()));
            }
            return;
        }
        for (j, &(r, d)) in self.options[image].iter().enumerate() {
            self.current[image] = j;
            self.descend(image + 1, distortion + d, rate.saturating_add(r));
        }
    }
}
