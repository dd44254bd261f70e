use proptest::prelude::*;
use rdalloc::loss_kernel::{d_pat, gan_losses, GanMode, PatchScores};
use rdalloc::rate_controller::{multiplex_lambda, total_loss, ControllerConfig};
use rdalloc::rd_model::{dominance_filter, pareto_positions, ImageRecord, QualityOption};

fn record(points: &[(u64, f64)]) -> ImageRecord {
    ImageRecord::new(
        "img",
        points
            .iter()
            .enumerate()
            .map(|(j, &(bytes, d))| QualityOption::new(format!("q{j}"), bytes, 4096, d))
            .collect(),
    )
}

/// O(M^2) pairwise dominance: j is dropped if some k is no worse on both
/// axes and strictly better on one, or is an exact duplicate at an earlier
/// position.
fn survivors_pairwise(points: &[(u64, f64)]) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&j| {
            !(0..points.len()).any(|k| {
                let (bk, dk) = points[k];
                let (bj, dj) = points[j];
                let dominates = bk <= bj && dk <= dj && (bk < bj || dk < dj);
                let earlier_duplicate = bk == bj && dk == dj && k < j;
                k != j && (dominates || earlier_duplicate)
            })
        })
        .collect();
    keep.sort_by_key(|&j| points[j].0);
    keep
}

fn scores(max_len: usize) -> impl Strategy<Value = PatchScores> {
    (
        prop::collection::vec(-20.0f64..20.0, 1..max_len),
        prop::collection::vec(-20.0f64..20.0, 1..max_len),
    )
        .prop_map(|(r, f)| PatchScores::new(r, f).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn dominance_filter_matches_pairwise_check(
        points in prop::collection::vec((0u64..6, (0u32..6).prop_map(|k| k as f64 / 8.0)), 6)
    ) {
        let rec = record(&points);
        prop_assert_eq!(pareto_positions(&rec), survivors_pairwise(&points));
        let filtered = dominance_filter(&rec);
        prop_assert!(filtered.options.windows(2).all(|w| w[0].bpp() < w[1].bpp()));
    }

    #[test]
    fn bpp_is_exact_over_integers(bytes in 0u64..1u64 << 40, pixels in 1u64..1u64 << 26) {
        let o = QualityOption::new("q", bytes, pixels, 0.0);
        let bits = o.bpp() * pixels as f64;
        prop_assert!(close(bits, 8.0 * bytes as f64, 1e-15));
        prop_assert!(o.bpp().is_finite() && o.bpp() >= 0.0);
    }

    #[test]
    // Beyond a difference of ~36.7 the sigmoid rounds to 1.0 in f64.
    fn d_pat_stays_inside_unit_interval(b in -30.0f64..30.0, diff in -36.0f64..36.0) {
        let a = b + diff;
        let v = d_pat(a, b);
        prop_assert!(v > 0.0 && v < 1.0);
        let next = d_pat(a + 0.5, b);
        let increasing = if diff.abs() < 30.0 { next > v } else { next >= v };
        prop_assert!(increasing);
    }

    #[test]
    fn losses_ignore_patch_order(s in scores(12), seed in any::<u64>()) {
        let mut shuffled = s.clone();
        let n = shuffled.real_scores.len();
        shuffled.real_scores.rotate_left(seed as usize % n);
        shuffled.fake_scores.reverse();
        for mode in [GanMode::Paper, GanMode::Conventional] {
            let (a, b) = (gan_losses(&s, mode), gan_losses(&shuffled, mode));
            prop_assert!(close(a.loss_d, b.loss_d, 1e-12));
            prop_assert!(close(a.loss_g, b.loss_g, 1e-12));
        }
    }

    #[test]
    fn losses_ignore_a_common_shift(s in scores(12), c in -50.0f64..50.0) {
        let shifted = PatchScores::new(
            s.real_scores.iter().map(|x| x + c).collect(),
            s.fake_scores.iter().map(|x| x + c).collect(),
        ).unwrap();
        for mode in [GanMode::Paper, GanMode::Conventional] {
            let (a, b) = (gan_losses(&s, mode), gan_losses(&shifted, mode));
            prop_assert!(close(a.loss_d, b.loss_d, 1e-9), "{} vs {}", a.loss_d, b.loss_d);
            prop_assert!(close(a.loss_g, b.loss_g, 1e-9), "{} vs {}", a.loss_g, b.loss_g);
        }
    }

    #[test]
    fn discriminator_loss_is_nonnegative_and_shared(s in scores(12)) {
        let p = gan_losses(&s, GanMode::Paper);
        let c = gan_losses(&s, GanMode::Conventional);
        prop_assert!(p.loss_d >= 0.0);
        prop_assert_eq!(p.loss_d, c.loss_d);
    }

    #[test]
    fn multiplexer_returns_one_of_two(rate in 0.0f64..2.0, alpha in 0.0f64..10.0, beta in 0.0f64..10.0, target in 1e-3f64..2.0) {
        let cfg = ControllerConfig::new(alpha, beta, target).unwrap();
        let l = multiplex_lambda(rate, &cfg);
        prop_assert!(l == alpha || l == beta);
        prop_assert_eq!(l, if rate >= target { alpha } else { beta });
    }

    #[test]
    fn branch_collapse(rate in 0.0f64..2.0, lambda in 0.0f64..10.0, target in 1e-3f64..2.0, d in -5.0f64..5.0) {
        let cfg = ControllerConfig::new(lambda, lambda, target).unwrap();
        prop_assert_eq!(total_loss(d, rate, &cfg), d + lambda * rate);
    }

    #[test]
    fn loss_is_monotone_within_a_branch(r1 in 0.0f64..2.0, r2 in 0.0f64..2.0, alpha in 0.0f64..10.0, beta in 0.0f64..10.0, target in 1e-3f64..2.0) {
        let cfg = ControllerConfig::new(alpha, beta, target).unwrap();
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        if (lo >= target) == (hi >= target) {
            prop_assert!(total_loss(0.3, lo, &cfg) <= total_loss(0.3, hi, &cfg));
        }
    }
}
