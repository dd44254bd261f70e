use super::{AllocError, BudgetSpec, Candidate, Problem, SolverReport};
use crate::rd_model::{Assignment, FixedRate, RdTable, SolverKind};

const MAX_BISECTIONS: u32 = 200;
const LAMBDA_RESOLUTION: f64 = 1e-12;
const OPTIMALITY_GAP: f64 = 1e-12;

/// Lagrangian dual function at `lambda`:
/// `sum_i min_j (d_ij + lambda * bpp_ij) - lambda * N * (T + tol)`.
///
/// For every `lambda >= 0` this is a lower bound on the optimal total distortion.
pub fn dual_value(table: &RdTable, budget: &BudgetSpec, lambda: f64) -> f64 {
    let inner: f64 = table
        .images
        .iter()
        .map(|r| {
            r.options
                .iter()
                .map(|o| o.distortion + lambda * o.bpp())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    inner - lambda * table.len() as f64 * budget.limit()
}

/// Relaxes the budget into the objective and bisects the multiplier so the
/// induced assignment uses as much of the budget as possible while staying
/// feasible. The returned gap bound is primal minus the best dual value seen.
pub fn solve_lagrangian(table: &RdTable, budget: &BudgetSpec) -> Result<SolverReport, AllocError> {
    let problem = Problem::new(table, budget)?;
    problem.check_feasible(budget)?;
    Ok(lagrangian_on(&problem, budget))
}

/// Outcome of one multiplier probe.
struct Probe {
    picks: Vec<usize>,
    rate: FixedRate,
    relaxed: f64,
}

fn argmin(cands: &[Candidate], lambda: f64) -> (usize, f64) {
    // Candidates ascend in rate, so strict `<` breaks ties toward lower bpp.
    let mut best = 0;
    let mut best_v = cands[0].distortion + lambda * cands[0].bpp;
    for (j, c) in cands.iter().enumerate().skip(1) {
        let v = c.distortion + lambda * c.bpp;
        if v < best_v {
            best = j;
            best_v = v;
        }
    }
    (best, best_v)
}

fn probe(problem: &Problem<'_>, lambda: f64) -> Probe {
    let mut picks = Vec::with_capacity(problem.candidates.len());
    let mut rate = FixedRate::ZERO;
    let mut relaxed = 0.0;
    for cands in &problem.candidates {
        let (j, v) = argmin(cands, lambda);
        picks.push(j);
        rate = rate.saturating_add(cands[j].rate);
        relaxed += v;
    }
    Probe {
        picks,
        rate,
        relaxed,
    }
}

/// Largest distortion spread over smallest nonzero bpp step, over all images.
/// Above this multiplier every image picks its minimum-rate option.
fn lambda_ceiling(problem: &Problem<'_>) -> f64 {
    problem
        .candidates
        .iter()
        .filter(|c| c.len() > 1)
        .map(|c| {
            let spread = c[0].distortion - c[c.len() - 1].distortion;
            let step = c
                .windows(2)
                .map(|w| w[1].bpp - w[0].bpp)
                .filter(|s| *s > 0.0)
                .fold(f64::INFINITY, f64::min);
            spread / step
        })
        .fold(0.0, f64::max)
}

pub(super) fn lagrangian_on(problem: &Problem<'_>, budget: &BudgetSpec) -> SolverReport {
    let n = problem.candidates.len();
    let scaled_budget = n as f64 * budget.limit();
    let dual = |p: &Probe, lambda: f64| p.relaxed - lambda * scaled_budget;

    let at_zero = probe(problem, 0.0);
    let mut best_dual = dual(&at_zero, 0.0);
    let (mut feasible, lambda_hi, iterations) = if at_zero.rate <= problem.capacity {
        (at_zero, 0.0, 0)
    } else {
        let mut lo = 0.0;
        let mut hi = lambda_ceiling(problem).max(f64::MIN_POSITIVE);
        let mut top = probe(problem, hi);
        let mut widen = 0;
        while top.rate > problem.capacity && widen < 64 {
            hi *= 2.0;
            top = probe(problem, hi);
            widen += 1;
        }
        if top.rate > problem.capacity {
            // Rounding kept some image off its minimum rate; force it.
            top.picks.iter_mut().for_each(|p| *p = 0);
            top.rate = problem
                .candidates
                .iter()
                .fold(FixedRate::ZERO, |a, c| a.saturating_add(c[0].rate));
        } else {
            best_dual = best_dual.max(dual(&top, hi));
        }
        let mut iterations = 0;
        while iterations < MAX_BISECTIONS && hi - lo >= LAMBDA_RESOLUTION {
            let mid = lo + 0.5 * (hi - lo);
            if mid <= lo || mid >= hi {
                break;
            }
            iterations += 1;
            let p = probe(problem, mid);
            best_dual = best_dual.max(dual(&p, mid));
            if p.rate <= problem.capacity {
                hi = mid;
                top = p;
            } else {
                lo = mid;
            }
        }
        (top, hi, iterations)
    };

    let positions: Vec<usize> = feasible
        .picks
        .drain(..)
        .zip(&problem.candidates)
        .map(|(j, c)| c[j].pos)
        .collect();
    let primal = crate::rd_model::total_distortion(problem.table, &positions);
    let raw_gap = (primal - best_dual).max(0.0);
    let optimal = raw_gap <= OPTIMALITY_GAP;
    let gap = if optimal { 0.0 } else { raw_gap };
    SolverReport {
        assignment: Assignment::from_positions(
            problem.table,
            &positions,
            SolverKind::Lagrangian,
            Some(lambda_hi),
            Some(gap),
        ),
        nodes_explored: 0,
        bisection_iterations: iterations,
        optimal,
    }
}
