//! Patch-wise relativistic average discriminator and its GAN losses.
//!
//! Inputs are raw (pre-sigmoid) patch scores of the discriminator for real
//! and reconstructed images. With `D(a, B) = sigmoid(a - mean(B))`:
//!
//! ```text
//! loss_d            = -E_r[log D(r, F)] - E_f[log(1 - D(f, R))]
//! loss_g (paper)    = -E_r[1 - log D(r, F)] - E_f[log D(f, R)]
//! loss_g (conventional) = -E_r[log(1 - D(r, F))] - E_f[log D(f, R)]
//! ```
//!
//! Every log-sigmoid is evaluated through softplus, so nothing overflows for
//! scores of any finite magnitude.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{0} must hold at least one score")]
    Empty(&'static str),
    #[error("{field}[{index}] is not finite: {value}")]
    NonFinite {
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("loss weight {name} must be finite and >= 0, got {value}")]
    BadWeight { name: &'static str, value: f64 },
}

/// Raw patch outputs of the discriminator for real and fake images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchScores {
    pub real_scores: Vec<f64>,
    pub fake_scores: Vec<f64>,
}

impl PatchScores {
    pub fn new(real_scores: Vec<f64>, fake_scores: Vec<f64>) -> Result<Self, LossError> {
        let s = Self {
            real_scores,
            fake_scores,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        for (field, v) in [
            ("real_scores", &self.real_scores),
            ("fake_scores", &self.fake_scores),
        ] {
            if v.is_empty() {
                return Err(LossError::Empty(field));
            }
            if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(LossError::NonFinite {
                    field,
                    index,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Weights of the reconstruction, LPIPS and adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_lpips: f64,
    pub w_gan: f64,
}

impl LossWeights {
    pub fn new(w_rec: f64, w_lpips: f64, w_gan: f64) -> Result<Self, LossError> {
        for (name, value) in [("w_rec", w_rec), ("w_lpips", w_lpips), ("w_gan", w_gan)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LossError::BadWeight { name, value });
            }
        }
        Ok(Self {
            w_rec,
            w_lpips,
            w_gan,
        })
    }
}

/// Generator objective variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    /// `-E_r[1 - log D(r, F)] - E_f[log D(f, R)]`, as published.
    #[default]
    Paper,
    /// `-E_r[log(1 - D(r, F))] - E_f[log D(f, R)]`, the usual relativistic form.
    Conventional,
}

impl GanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GanMode::Paper => "paper",
            GanMode::Conventional => "conventional",
        }
    }
}

impl fmt::Display for GanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GanMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(GanMode::Paper),
            "conventional" => Ok(GanMode::Conventional),
            other => Err(format!(
                "unknown gan mode {other:?} (expected paper|conventional)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    pub loss_d: f64,
    pub loss_g: f64,
    pub mode: GanMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanGradients {
    pub d_real: Vec<f64>,
    pub d_fake: Vec<f64>,
    pub g_real: Vec<f64>,
    pub g_fake: Vec<f64>,
    pub mode: GanMode,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(sigmoid(x)) = -softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Relativistic average patch discriminator: `sigmoid(score - mean_opposing)`.
pub fn d_pat(score: f64, mean_opposing: f64) -> f64 {
    sigmoid(score - mean_opposing)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-side loss terms: `E_r[phi(u)] + E_f[psi(v)]` with `u = r - mean(F)`
/// and `v = f - mean(R)`. Each variant supplies the value and derivative of
/// `phi` and `psi`.
#[derive(Clone, Copy)]
enum Term {
    /// -log D(r, F) and -log(1 - D(f, R))
    Discriminator,
    /// -(1 - log D(r, F)) and -log D(f, R); the constant -1 is added separately
    GeneratorPaper,
    /// -log(1 - D(r, F)) and -log D(f, R)
    GeneratorConventional,
}

impl Term {
    fn phi(self, u: f64) -> (f64, f64) {
        match self {
            Term::Discriminator => (softplus(-u), -sigmoid(-u)),
            Term::GeneratorPaper => (-softplus(-u), sigmoid(-u)),
            Term::GeneratorConventional => (softplus(u), sigmoid(u)),
        }
    }

    fn psi(self, v: f64) -> (f64, f64) {
        match self {
            Term::Discriminator => (softplus(v), sigmoid(v)),
            Term::GeneratorPaper | Term::GeneratorConventional => (softplus(-v), -sigmoid(-v)),
        }
    }

    fn offset(self) -> f64 {
        match self {
            Term::GeneratorPaper => -1.0,
            _ => 0.0,
        }
    }

    fn generator(mode: GanMode) -> Self {
        match mode {
            GanMode::Paper => Term::GeneratorPaper,
            GanMode::Conventional => Term::GeneratorConventional,
        }
    }
}

fn evaluate(term: Term, scores: &PatchScores) -> f64 {
    let (mr, mf) = (mean(&scores.real_scores), mean(&scores.fake_scores));
    let real: f64 = scores
        .real_scores
        .iter()
        .map(|&r| term.phi(r - mf).0)
        .sum::<f64>();
    let fake: f64 = scores
        .fake_scores
        .iter()
        .map(|&f| term.psi(f - mr).0)
        .sum::<f64>();
    term.offset() + real / scores.real_scores.len() as f64 + fake / scores.fake_scores.len() as f64
}

fn gradient(term: Term, scores: &PatchScores) -> (Vec<f64>, Vec<f64>) {
    let (pr, pf) = (
        scores.real_scores.len() as f64,
        scores.fake_scores.len() as f64,
    );
    let (mr, mf) = (mean(&scores.real_scores), mean(&scores.fake_scores));
    let dphi: Vec<f64> = scores
        .real_scores
        .iter()
        .map(|&r| term.phi(r - mf).1)
        .collect();
    let dpsi: Vec<f64> = scores
        .fake_scores
        .iter()
        .map(|&f| term.psi(f - mr).1)
        .collect();
    // Each real score also moves mean(R), which every v depends on, and
    // likewise for fake scores and u.
    let mean_dphi = mean(&dphi);
    let mean_dpsi = mean(&dpsi);
    let real = dphi.iter().map(|g| (g - mean_dpsi) / pr).collect();
    let fake = dpsi.iter().map(|g| (g - mean_dphi) / pf).collect();
    (real, fake)
}

/// Discriminator and generator losses for `scores`.
pub fn gan_losses(scores: &PatchScores, mode: GanMode) -> GanLosses {
    GanLosses {
        loss_d: evaluate(Term::Discriminator, scores),
        loss_g: evaluate(Term::generator(mode), scores),
        mode,
    }
}

/// Analytic gradients of both losses with respect to every score.
pub fn gan_losses_grad(scores: &PatchScores, mode: GanMode) -> GanGradients {
    let (d_real, d_fake) = gradient(Term::Discriminator, scores);
    let (g_real, g_fake) = gradient(Term::generator(mode), scores);
    GanGradients {
        d_real,
        d_fake,
        g_real,
        g_fake,
        mode,
    }
}

/// Weighted distortion `w_rec * l_rec + w_lpips * l_lpips + w_gan * l_gan`.
pub fn composite_distortion(l_rec: f64, l_lpips: f64, l_gan: f64, w: &LossWeights) -> f64 {
    w.w_rec * l_rec + w.w_lpips * l_lpips + w.w_gan * l_gan
}

/// Relative error used by gradient checks: `|a - b| / max(|a| + |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(floor)
}

/// Largest elementwise relative error between the analytic gradients and
/// central finite differences with step `h`.
pub fn max_gradient_error(scores: &PatchScores, mode: GanMode, h: f64, floor: f64) -> f64 {
    let g = gan_losses_grad(scores, mode);
    let mut worst: f64 = 0.0;
    let sides = [(true, &g.d_real, &g.g_real), (false, &g.d_fake, &g.g_fake)];
    for (is_real, grad_d, grad_g) in sides {
        let len = if is_real {
            scores.real_scores.len()
        } else {
            scores.fake_scores.len()
        };
        for k in 0..len {
            let shifted = |delta: f64| {
                let mut s = scores.clone();
                if is_real {
                    s.real_scores[k] += delta;
                } else {
                    s.fake_scores[k] += delta;
                }
                gan_losses(&s, mode)
            };
            let (plus, minus) = (shifted(h), shifted(-h));
            let fd_d = (plus.loss_d - minus.loss_d) / (2.0 * h);
            let fd_g = (plus.loss_g - minus.loss_g) / (2.0 * h);
            worst = worst
                .max(relative_error(grad_d[k], fd_d, floor))
                .max(relative_error(grad_g[k], fd_g, floor));
        }
    }
    worst
}
