#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rdalloc::{ImageRecord, QualityOption, RdTable};
use std::cmp::Ordering;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random ragged table: `1..=max_n` images, `1..=max_m` options each, pixel
/// counts in [1e4, 1e7], bpp roughly in [0.01, 1], distortions in (0, 1).
pub fn random_table(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> RdTable {
    let n = rng.gen_range(1..=max_n);
    let images = (0..n)
        .map(|i| {
            let px: u64 = rng.gen_range(10_000..=10_000_000);
            let m = rng.gen_range(1..=max_m);
            let options = (0..m)
                .map(|j| {
                    let bpp: f64 = rng.gen_range(0.01..1.0);
                    let bytes = (bpp * px as f64 / 8.0).round() as u64;
                    let d: f64 = rng.gen_range(f64::EPSILON..1.0);
                    QualityOption::new(format!("q{j}"), bytes, px, d)
                })
                .collect();
            ImageRecord::new(format!("img{i:03}"), options)
        })
        .collect();
    RdTable::new(images)
}

/// Table where every image's options sit on a strictly convex decreasing
/// RD curve, so every option is on the lower-left hull.
pub fn hull_only_table(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> RdTable {
    let n = rng.gen_range(1..=max_n);
    let images = (0..n)
        .map(|i| {
            let px: u64 = rng.gen_range(10_000..=10_000_000);
            let m = rng.gen_range(1..=max_m);
            // Increasing rate steps, strictly decreasing slopes in magnitude.
            let mut bytes: u64 = rng.gen_range(100..2_000);
            let mut d: f64 = rng.gen_range(0.6..1.0);
            let mut slope: f64 = rng.gen_range(0.5..2.0); // distortion per bpp
            let mut options = Vec::with_capacity(m);
            for j in 0..m {
                options.push(QualityOption::new(format!("q{j}"), bytes, px, d));
                let step_bytes = rng.gen_range(px / 400..px / 40).max(1);
                let step_bpp = 8.0 * step_bytes as f64 / px as f64;
                slope *= rng.gen_range(0.3..0.8);
                d -= slope * step_bpp;
                bytes += step_bytes;
                if d <= 1e-6 {
                    break;
                }
            }
            ImageRecord::new(format!("img{i:03}"), options)
        })
        .collect();
    RdTable::new(images)
}

/// Smooth, mostly convex RD curves with measurement noise, like a codec
/// evaluated at `m` quality levels.
pub fn codec_like_table(rng: &mut ChaCha8Rng, n: usize, m: usize) -> RdTable {
    let images = (0..n)
        .map(|i| {
            let px: u64 = rng.gen_range(500_000..=4_000_000);
            let complexity: f64 = rng.gen_range(0.5..2.0);
            let options = (0..m)
                .map(|j| {
                    let bpp = 0.03 * complexity * 1.6f64.powi(j as i32) * rng.gen_range(0.95..1.05);
                    let bytes = (bpp * px as f64 / 8.0).round() as u64;
                    let d = 0.4 * (-(bpp / complexity) * 4.0).exp() + rng.gen_range(0.0..0.01);
                    QualityOption::new(format!("q{j}"), bytes, px, d)
                })
                .collect();
            ImageRecord::new(format!("img{i:05}"), options)
        })
        .collect();
    RdTable::new(images)
}

/// Mean bpp range `[min, max]` over assignments of `table`.
pub fn mean_bpp_range(table: &RdTable) -> (f64, f64) {
    let n = table.len() as f64;
    let (lo, hi) = table.images.iter().fold((0.0, 0.0), |(lo, hi), r| {
        let b = r.options.iter().map(|o| o.bpp());
        (
            lo + b.clone().fold(f64::INFINITY, f64::min),
            hi + b.fold(0.0, f64::max),
        )
    });
    (lo / n, hi / n)
}

fn exact_bpp(o: &QualityOption) -> BigRational {
    BigRational::new(
        BigInt::from(8u64) * BigInt::from(o.rate_bytes),
        BigInt::from(o.pixel_count),
    )
}

/// Decimal value of `x` as printed by `{}` (shortest round-trip).
pub fn decimal(x: f64) -> BigRational {
    let s = format!("{x}");
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let num: BigInt = format!("{int}{frac}").parse().unwrap();
    BigRational::new(num, BigInt::from(10u32).pow(frac.len() as u32))
}

/// Exact rational check of the mean-bpp constraint.
pub fn exactly_feasible(table: &RdTable, positions: &[usize], target: f64) -> bool {
    let mut sum = BigRational::zero();
    for (r, &p) in table.images.iter().zip(positions) {
        sum += exact_bpp(&r.options[p]);
    }
    sum <= decimal(target) * BigInt::from(table.len())
}

pub struct OracleResult {
    pub distortion: f64,
    pub positions: Vec<usize>,
}

/// Independent exhaustive enumerator: mixed-radix counter over option
/// positions, exact rational feasibility, ties broken by exact total rate
/// then lexicographic position vector.
pub fn oracle_optimum(table: &RdTable, target: f64) -> Option<OracleResult> {
    let radix: Vec<usize> = table.images.iter().map(|r| r.options.len()).collect();
    let mut counter = vec![0usize; radix.len()];
    let mut best: Option<(f64, BigRational, Vec<usize>)> = None;
    let limit = decimal(target) * BigInt::from(table.len());
    loop {
        let mut rate = BigRational::zero();
        let mut d = 0.0;
        for (r, &p) in table.images.iter().zip(&counter) {
            rate += exact_bpp(&r.options[p]);
            d += r.options[p].distortion;
        }
        if rate <= limit {
            let better = match &best {
                None => true,
                Some((bd, br, bp)) => match d.total_cmp(bd) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => match rate.cmp(br) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => &counter < bp,
                    },
                },
            };
            if better {
                best = Some((d, rate, counter.clone()));
            }
        }
        // increment
        let mut k = 0;
        loop {
            if k == counter.len() {
                return best.map(|(distortion, _, positions)| OracleResult {
                    distortion,
                    positions,
                });
            }
            counter[k] += 1;
            if counter[k] < radix[k] {
                break;
            }
            counter[k] = 0;
            k += 1;
        }
    }
}

/// Feasible target drawn uniformly over the table's achievable mean-bpp range.
pub fn feasible_target(rng: &mut ChaCha8Rng, table: &RdTable) -> f64 {
    use rand::Rng;
    let (lo, hi) = mean_bpp_range(table);
    // lo is an f64 mean; nudge above it so rounding never makes it infeasible
    lo * (1.0 + 1e-9) + rng.gen_range(0.0..=1.0) * (hi - lo)
}
