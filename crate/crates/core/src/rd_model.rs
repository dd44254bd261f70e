//! Per-image rate-distortion measurements.
//!
//! Rates are kept as integer bytes together with the source pixel count, so
//! bits-per-pixel is always derived rather than stored. For budget checks the
//! solvers work on [`FixedRate`], an unsigned 64.64 fixed-point bpp rounded
//! up, which makes sums exact and independent of summation order.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;

/// Fractional bits of [`FixedRate`].
pub const RATE_FRAC_BITS: u32 = 64;

/// One encoded operating point of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityOption {
    pub quality_id: String,
    pub rate_bytes: u64,
    pub pixel_count: u64,
    /// Additive per-image cost; LPIPS unless the caller substitutes another metric.
    #[serde(rename = "lpips")]
    pub distortion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msssim: Option<f64>,
}

impl QualityOption {
    pub fn new(
        quality_id: impl Into<String>,
        rate_bytes: u64,
        pixel_count: u64,
        distortion: f64,
    ) -> Self {
        Self {
            quality_id: quality_id.into(),
            rate_bytes,
            pixel_count,
            distortion,
            psnr: None,
            msssim: None,
        }
    }

    pub fn with_metrics(mut self, psnr: Option<f64>, msssim: Option<f64>) -> Self {
        self.psnr = psnr;
        self.msssim = msssim;
        self
    }

    /// Bits per pixel, `8 * rate_bytes / pixel_count`.
    pub fn bpp(&self) -> f64 {
        (8.0 * self.rate_bytes as f64) / self.pixel_count as f64
    }

    /// Fixed-point bpp rounded toward +inf. `None` for a zero pixel count or
    /// a rate too large to represent.
    pub fn fixed_rate(&self) -> Option<FixedRate> {
        FixedRate::from_bytes_ceil(self.rate_bytes, self.pixel_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub options: Vec<QualityOption>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, options: Vec<QualityOption>) -> Self {
        Self {
            image_id: image_id.into(),
            options,
        }
    }

    pub fn option(&self, quality_id: &str) -> Option<&QualityOption> {
        self.options.iter().find(|o| o.quality_id == quality_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdTable {
    pub images: Vec<ImageRecord>,
}

impl RdTable {
    pub fn new(images: Vec<ImageRecord>) -> Self {
        Self { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.image_id == image_id)
    }

    /// Number of complete assignments, saturating at `u128::MAX`.
    pub fn assignment_count(&self) -> u128 {
        self.images
            .iter()
            .fold(1u128, |acc, r| acc.saturating_mul(r.options.len() as u128))
    }
}

/// Which solver produced an [`Assignment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Brute,
    Lagrangian,
    Exact,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Brute => "brute",
            SolverKind::Lagrangian => "lagrangian",
            SolverKind::Exact => "exact",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One quality choice per image, with the figures it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub choices: BTreeMap<String, String>,
    pub achieved_mean_bpp: f64,
    pub total_distortion: f64,
    pub solver: SolverKind,
    pub dual_lambda: Option<f64>,
    pub gap_bound: Option<f64>,
}

impl Assignment {
    /// Builds an assignment from per-image option positions (table order),
    /// computing the achieved figures in table order.
    pub fn from_positions(
        table: &RdTable,
        positions: &[usize],
        solver: SolverKind,
        dual_lambda: Option<f64>,
        gap_bound: Option<f64>,
    ) -> Self {
        debug_assert_eq!(positions.len(), table.len());
        let mut choices = BTreeMap::new();
        for (rec, &p) in table.images.iter().zip(positions) {
            choices.insert(rec.image_id.clone(), rec.options[p].quality_id.clone());
        }
        Self {
            choices,
            achieved_mean_bpp: mean_bpp(table, positions),
            total_distortion: total_distortion(table, positions),
            solver,
            dual_lambda,
            gap_bound,
        }
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    /// Option positions in table order, or the first image that has no
    /// valid choice.
    pub fn positions(&self, table: &RdTable) -> Result<Vec<usize>, String> {
        table
            .images
            .iter()
            .map(|rec| {
                let q = self
                    .choices
                    .get(&rec.image_id)
                    .ok_or_else(|| rec.image_id.clone())?;
                rec.options
                    .iter()
                    .position(|o| &o.quality_id == q)
                    .ok_or_else(|| rec.image_id.clone())
            })
            .collect()
    }
}

/// Sum of chosen distortions, accumulated in table order.
pub fn total_distortion(table: &RdTable, positions: &[usize]) -> f64 {
    table
        .images
        .iter()
        .zip(positions)
        .fold(0.0, |acc, (rec, &p)| acc + rec.options[p].distortion)
}

/// Unweighted mean of chosen per-image bpp, accumulated in table order.
pub fn mean_bpp(table: &RdTable, positions: &[usize]) -> f64 {
    let sum = table
        .images
        .iter()
        .zip(positions)
        .fold(0.0, |acc, (rec, &p)| acc + rec.options[p].bpp());
    sum / table.len() as f64
}

/// Unsigned fixed-point bits-per-pixel with [`RATE_FRAC_BITS`] fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FixedRate(pub u128);

impl FixedRate {
    pub const ZERO: FixedRate = FixedRate(0);
    pub const MAX: FixedRate = FixedRate(u128::MAX);

    /// `ceil(8 * bytes / pixels)` in fixed point.
    pub fn from_bytes_ceil(rate_bytes: u64, pixel_count: u64) -> Option<Self> {
        if pixel_count == 0 {
            return None;
        }
        let num = (rate_bytes as u128)
            .checked_mul(8)?
            .checked_mul(1u128 << RATE_FRAC_BITS)?;
        let den = pixel_count as u128;
        Some(FixedRate(num.div_ceil(den)))
    }

    /// `floor(x * count)` in fixed point for a finite nonnegative `x`.
    /// Saturates on overflow.
    pub fn from_f64_times_floor(x: f64, count: u64) -> Self {
        if x.is_nan() || x <= 0.0 || count == 0 {
            return FixedRate::ZERO;
        }
        if x.is_infinite() {
            return FixedRate::MAX;
        }
        // x = mantissa * 2^exp exactly.
        let bits = x.to_bits();
        let raw_exp = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, exp) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        let Some(m) = (mantissa as u128).checked_mul(count as u128) else {
            return FixedRate::MAX;
        };
        let shift = exp + RATE_FRAC_BITS as i32;
        if shift >= 0 {
            if shift >= 128 || m.leading_zeros() < shift as u32 {
                return FixedRate::MAX;
            }
            FixedRate(m << shift)
        } else if -shift >= 128 {
            FixedRate::ZERO
        } else {
            FixedRate(m >> (-shift))
        }
    }

    /// `floor(d * count)` in fixed point, where `d` is the shortest decimal
    /// that round-trips to `x` (so `0.075` means exactly 3/40). Falls back to
    /// [`FixedRate::from_f64_times_floor`] when the decimal has too many
    /// fractional digits to divide exactly.
    pub fn from_decimal_times_floor(x: f64, count: u64) -> Self {
        if !x.is_finite() || x <= 0.0 || count == 0 {
            return Self::from_f64_times_floor(x, count);
        }
        let sci = format!("{x:e}");
        let (mant, exp) = sci.split_once('e').expect("{:e} always has an exponent");
        let mut exp: i32 = exp.parse().expect("integer exponent");
        let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
        exp -= frac.len() as i32;
        let digits: u128 = format!("{int}{frac}").parse().expect("decimal digits");
        let Some(num) = digits.checked_mul(count as u128) else {
            return Self::from_f64_times_floor(x, count);
        };
        if exp >= 0 {
            return 10u128
                .checked_pow(exp as u32)
                .and_then(|p| num.checked_mul(p))
                .and_then(|v| v.checked_mul(1u128 << RATE_FRAC_BITS))
                .map_or(FixedRate::MAX, FixedRate);
        }
        let Some(den) = 10u128.checked_pow((-exp) as u32) else {
            return Self::from_f64_times_floor(x, count);
        };
        // floor(num * 2^64 / den) by long division on the remainder.
        let whole = num / den;
        let mut rem = num % den;
        let Some(high) = whole.checked_mul(1u128 << RATE_FRAC_BITS) else {
            return FixedRate::MAX;
        };
        let mut low = 0u128;
        for _ in 0..RATE_FRAC_BITS {
            // rem < den <= 10^38 < 2^127, so doubling cannot overflow.
            rem <<= 1;
            low <<= 1;
            if rem >= den {
                rem -= den;
                low |= 1;
            }
        }
        FixedRate(high.saturating_add(low))
    }

    pub fn saturating_add(self, other: Self) -> Self {
        FixedRate(self.0.saturating_add(other.0))
    }

    pub fn saturating_sub(self, other: Self) -> Self {
        FixedRate(self.0.saturating_sub(other.0))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / (1u128 << RATE_FRAC_BITS) as f64
    }
}

/// One broken invariant, located by image and field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub image_id: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.image_id, self.field, self.message)
    }
}

/// Every invariant violation in `table`; empty iff the table is valid.
pub fn validate_table(table: &RdTable) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |image_id: &str, field: String, message: String| {
        out.push(Violation {
            image_id: image_id.to_string(),
            field,
            message,
        })
    };
    if table.images.is_empty() {
        push("", "images".into(), "table has no images".into());
    }
    let mut seen_ids = HashSet::new();
    for (i, rec) in table.images.iter().enumerate() {
        let id = rec.image_id.as_str();
        if id.is_empty() {
            push(id, format!("images[{i}].image_id"), "empty image_id".into());
        }
        if !seen_ids.insert(id) {
            push(
                id,
                format!("images[{i}].image_id"),
                format!("duplicate image_id {id:?}"),
            );
        }
        if rec.options.is_empty() {
            push(
                id,
                format!("images[{i}].options"),
                "image has no quality options".into(),
            );
        }
        let mut seen_q = HashSet::new();
        let first_pixels = rec.options.first().map(|o| o.pixel_count);
        for (j, opt) in rec.options.iter().enumerate() {
            let path = format!("images[{i}].options[{j}]");
            if !seen_q.insert(opt.quality_id.as_str()) {
                push(
                    id,
                    format!("{path}.quality_id"),
                    format!("duplicate quality_id {:?}", opt.quality_id),
                );
            }
            if opt.pixel_count == 0 {
                push(
                    id,
                    format!("{path}.pixel_count"),
                    "pixel_count must be positive".into(),
                );
            } else if opt.fixed_rate().is_none() {
                push(
                    id,
                    format!("{path}.rate_bytes"),
                    "rate_bytes too large".into(),
                );
            }
            if Some(opt.pixel_count) != first_pixels {
                push(
                    id,
                    format!("{path}.pixel_count"),
                    "pixel_count differs between options of one image".into(),
                );
            }
            if !opt.distortion.is_finite() || opt.distortion < 0.0 {
                push(
                    id,
                    format!("{path}.lpips"),
                    format!("distortion must be finite and >= 0, got {}", opt.distortion),
                );
            }
            if let Some(p) = opt.psnr {
                if !p.is_finite() {
                    push(
                        id,
                        format!("{path}.psnr"),
                        format!("psnr must be finite, got {p}"),
                    );
                }
            }
            if let Some(m) = opt.msssim {
                if !(0.0..=1.0).contains(&m) {
                    push(
                        id,
                        format!("{path}.msssim"),
                        format!("msssim must lie in [0,1], got {m}"),
                    );
                }
            }
        }
    }
    out
}

/// Positions of the Pareto-efficient options of `record`, sorted by bpp.
///
/// An option is dropped when another has bpp and distortion both no larger,
/// at least one strictly smaller. Of exact duplicates the earlier position
/// survives.
pub fn pareto_positions(record: &ImageRecord) -> Vec<usize> {
    let mut order: Vec<usize> = (0..record.options.len()).collect();
    // Same image => same pixel count, so bytes order bpp exactly.
    order.sort_by(|&a, &b| {
        let (oa, ob) = (&record.options[a], &record.options[b]);
        oa.rate_bytes
            .cmp(&ob.rate_bytes)
            .then(oa.distortion.total_cmp(&ob.distortion))
            .then(a.cmp(&b))
    });
    let mut kept = Vec::with_capacity(order.len());
    let mut best_d = f64::INFINITY;
    for p in order {
        let d = record.options[p].distortion;
        if d < best_d {
            kept.push(p);
            best_d = d;
        }
    }
    kept
}

/// Copy of `record` keeping only non-dominated options, in ascending-bpp order.
pub fn dominance_filter(record: &ImageRecord) -> ImageRecord {
    ImageRecord {
        image_id: record.image_id.clone(),
        options: pareto_positions(record)
            .into_iter()
            .map(|p| record.options[p].clone())
            .collect(),
    }
}
