use super::lagrangian::lagrangian_on;
use super::{AllocError, AssignmentKey, BudgetSpec, Candidate, Problem, SolverReport};
use crate::rd_model::{Assignment, FixedRate, RdTable, SolverKind};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Default)]
pub struct ExactOptions {
    /// Wall-clock budget; on expiry the incumbent is returned inside
    /// [`AllocError::Timeout`].
    pub timeout: Option<Duration>,
}

pub fn solve_exact(table: &RdTable, budget: &BudgetSpec) -> Result<SolverReport, AllocError> {
    solve_exact_with(table, budget, &ExactOptions::default())
}

/// Best-first branch-and-bound. Each node fixes the choices of a prefix of
/// images (highest distortion spread first) and is bounded by the LP
/// relaxation of the rest, which equals the best Lagrangian dual value of
/// the remaining subproblem.
pub fn solve_exact_with(
    table: &RdTable,
    budget: &BudgetSpec,
    options: &ExactOptions,
) -> Result<SolverReport, AllocError> {
    let problem = Problem::new(table, budget)?;
    problem.check_feasible(budget)?;
    let started = Instant::now();

    let warm = lagrangian_on(&problem, budget);
    let warm_positions = warm
        .assignment
        .positions(table)
        .expect("solver output covers table");
    let search = Search::new(&problem);
    let mut incumbent = AssignmentKey::new(table, warm_positions);
    // Even a zero-gap warm start is searched: an equal-distortion assignment
    // may still win the tie-break.

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let root_bound = search.lower_bound(0, 0.0, problem.capacity);
    if let Some(lb) = root_bound {
        heap.push(Node {
            bound: lb,
            depth: 0,
            rate: FixedRate::ZERO,
            distortion: 0.0,
            choices: Vec::new(),
            seq,
        });
    }

    let mut nodes = 0u64;
    let mut timed_out = None;
    while let Some(node) = heap.pop() {
        if node.bound > incumbent.distortion + margin(incumbent.distortion) {
            break;
        }
        if let Some(limit) = options.timeout {
            if nodes.is_multiple_of(256) && started.elapsed() > limit {
                timed_out = Some(node.bound);
                break;
            }
        }
        nodes += 1;
        let depth = node.depth;
        let cands = search.at(depth);
        for (j, c) in cands.iter().enumerate() {
            let rate = node.rate.saturating_add(c.rate);
            if rate.saturating_add(search.suffix_min_rate[depth + 1]) > problem.capacity {
                // Candidates ascend in rate.
                break;
            }
            let distortion = node.distortion + c.distortion;
            let mut choices = Vec::with_capacity(depth + 1);
            choices.extend_from_slice(&node.choices);
            choices.push(j as u16);
            if depth + 1 == search.order.len() {
                let key = AssignmentKey::new(table, search.positions(&choices));
                if key.cmp(&incumbent).is_lt() {
                    incumbent = key;
                }
                continue;
            }
            let Some(lb) =
                search.lower_bound(depth + 1, distortion, problem.capacity.saturating_sub(rate))
            else {
                continue;
            };
            if lb > incumbent.distortion + margin(incumbent.distortion) {
                continue;
            }
            seq += 1;
            heap.push(Node {
                bound: lb,
                depth: depth + 1,
                rate,
                distortion,
                choices,
                seq,
            });
        }
    }

    let assignment_with = |gap: f64| {
        Assignment::from_positions(
            table,
            &incumbent.positions,
            SolverKind::Exact,
            None,
            Some(gap),
        )
    };
    if let Some(popped) = timed_out {
        let open = heap.peek().map_or(popped, |n| n.bound.min(popped));
        let gap = (incumbent.distortion - open).max(0.0);
        return Err(AllocError::Timeout(Box::new(SolverReport {
            assignment: assignment_with(gap),
            nodes_explored: nodes,
            bisection_iterations: warm.bisection_iterations,
            optimal: false,
        })));
    }
    Ok(SolverReport {
        assignment: assignment_with(0.0),
        nodes_explored: nodes,
        bisection_iterations: warm.bisection_iterations,
        optimal: true,
    })
}

/// Slack on bound comparisons so float error in the LP bound never prunes an
/// assignment that ties the incumbent.
fn margin(incumbent: f64) -> f64 {
    1e-9 * incumbent.abs().max(1.0)
}

struct Node {
    bound: f64,
    depth: usize,
    rate: FixedRate,
    /// Distortion of the fixed prefix, summed in branching order.
    distortion: f64,
    /// Candidate index per fixed depth.
    choices: Vec<u16>,
    seq: u64,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: smallest bound first, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Upper-hull segment of one image's RD curve.
struct Segment {
    depth: usize,
    rate: f64,
    gain: f64,
}

struct Search<'p, 'a> {
    problem: &'p Problem<'a>,
    /// Image index per branching depth.
    order: Vec<usize>,
    /// Sum over depths >= k of the minimum candidate rate.
    suffix_min_rate: Vec<FixedRate>,
    /// Sum over depths >= k of the minimum-rate candidate's distortion.
    suffix_base_distortion: Vec<f64>,
    /// All convex-hull segments, steepest distortion decrease per bit first.
    segments: Vec<Segment>,
}

impl<'p, 'a> Search<'p, 'a> {
    fn new(problem: &'p Problem<'a>) -> Self {
        let n = problem.candidates.len();
        let spread = |c: &[Candidate]| c[0].distortion - c[c.len() - 1].distortion;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            spread(&problem.candidates[b])
                .total_cmp(&spread(&problem.candidates[a]))
                .then(a.cmp(&b))
        });

        let mut suffix_min_rate = vec![FixedRate::ZERO; n + 1];
        let mut suffix_base_distortion = vec![0.0; n + 1];
        for k in (0..n).rev() {
            let c0 = &problem.candidates[order[k]][0];
            suffix_min_rate[k] = suffix_min_rate[k + 1].saturating_add(c0.rate);
            suffix_base_distortion[k] = suffix_base_distortion[k + 1] + c0.distortion;
        }

        let mut segments = Vec::new();
        for (depth, &img) in order.iter().enumerate() {
            let hull = lower_hull(&problem.candidates[img]);
            for w in hull.windows(2) {
                let (a, b) = (
                    &problem.candidates[img][w[0]],
                    &problem.candidates[img][w[1]],
                );
                segments.push(Segment {
                    depth,
                    rate: b.rate.saturating_sub(a.rate).to_f64(),
                    gain: a.distortion - b.distortion,
                });
            }
        }
        // Steepest first: compare gain_a / rate_a > gain_b / rate_b without division.
        segments.sort_by(|a, b| {
            (b.gain * a.rate)
                .total_cmp(&(a.gain * b.rate))
                .then(a.depth.cmp(&b.depth))
        });

        Self {
            problem,
            order,
            suffix_min_rate,
            suffix_base_distortion,
            segments,
        }
    }

    fn at(&self, depth: usize) -> &'p [Candidate] {
        &self.problem.candidates[self.order[depth]]
    }

    /// Lower bound on the total distortion of any completion of a prefix that
    /// fixes depths `< depth` with distortion `fixed` and leaves `remaining`
    /// rate. `None` when no completion fits.
    fn lower_bound(&self, depth: usize, fixed: f64, remaining: FixedRate) -> Option<f64> {
        let base_rate = self.suffix_min_rate[depth];
        if base_rate > remaining {
            return None;
        }
        let mut slack = remaining.saturating_sub(base_rate).to_f64();
        let mut bound = fixed + self.suffix_base_distortion[depth];
        for s in self.segments.iter().filter(|s| s.depth >= depth) {
            if s.rate <= slack {
                slack -= s.rate;
                bound -= s.gain;
            } else {
                bound -= s.gain * (slack / s.rate);
                break;
            }
        }
        Some(bound)
    }

    /// Maps per-depth candidate choices to option positions in table order.
    fn positions(&self, choices: &[u16]) -> Vec<usize> {
        let mut out = vec![0; self.order.len()];
        for (depth, &j) in choices.iter().enumerate() {
            let img = self.order[depth];
            out[img] = self.problem.candidates[img][j as usize].pos;
        }
        out
    }
}

/// Indices of the lower convex hull of Pareto candidates (ascending rate,
/// strictly descending distortion).
fn lower_hull(cands: &[Candidate]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(cands.len());
    let point = |i: usize| (cands[i].rate.to_f64(), cands[i].distortion);
    for i in 0..cands.len() {
        while hull.len() >= 2 {
            let (x0, y0) = point(hull[hull.len() - 2]);
            let (x1, y1) = point(hull[hull.len() - 1]);
            let (x2, y2) = point(i);
            // Drop the middle point unless the turn is strictly convex.
            let cross = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}
