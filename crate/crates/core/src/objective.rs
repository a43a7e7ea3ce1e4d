//! Training objectives: the time-weighted frame loss, the video-level
//! prediction loss, and their uncertainty-weighted combination.
//!
//! Every loss returns its value together with its gradient with respect to
//! the model outputs, so the trainer can seed the reverse pass directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores are clamped to `[CLAMP, 1 - CLAMP]` before taking logarithms.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Decay of the positive-video urgency weight (frames).
    pub f1: f64,
    /// Ramp length of the negative-video weight (frames).
    pub f2: f64,
    /// Relative weight of the video-level loss.
    pub gamma: f64,
    /// Learn `σ₁, σ₂`; otherwise `L = L_S + γ·L_p`.
    pub adaptive: bool,
    /// Replace the positive weight by 1.
    pub unit_positive_weight: bool,
    /// Replace the negative weight by 1.
    pub unit_negative_weight: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            f1: 20.0,
            f2: 150.0,
            gamma: 1e-3,
            adaptive: true,
            unit_positive_weight: false,
            unit_negative_weight: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f1 > 0.0 && self.f2 > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "f1, f2 and gamma must be positive (got {}, {}, {})",
                self.f1, self.f2, self.gamma
            )));
        }
        Ok(())
    }

    /// Weight of frame `t` (1-based) in a positive video with accident frame `tau`.
    pub fn positive_weight(&self, t: usize, tau: usize) -> f64 {
        if self.unit_positive_weight {
            1.0
        } else {
            positive_weight(t, tau, self.f1)
        }
    }

    /// Weight of frame `t` (1-based) in a negative video.
    pub fn negative_weight(&self, t: usize) -> f64 {
        if self.unit_negative_weight {
            1.0
        } else {
            negative_weight(t, self.f2)
        }
    }
}

/// `exp(-max((τ - t)/f1, 0))`
pub fn positive_weight(t: usize, tau: usize, f1: f64) -> f64 {
    let lead = (tau as f64 - t as f64) / f1;
    (-lead.max(0.0)).exp()
}

/// `t / f2`, unclipped.
pub fn negative_weight(t: usize, f2: f64) -> f64 {
    t as f64 / f2
}

/// Learnable uncertainties, stored as `log σ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyParams {
    pub log_sigma1: f64,
    pub log_sigma2: f64,
}

impl UncertaintyParams {
    pub fn sigma1(&self) -> f64 {
        self.log_sigma1.exp()
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLoss {
    pub value: f64,
    /// `∂L_S/∂s_t` per video and frame.
    pub grad: Vec<Vec<f64>>,
    /// Weight applied to each frame (positive or negative coefficient).
    pub coefficients: Vec<Vec<f64>>,
}

fn clamp(s: f64) -> (f64, bool) {
    if s < CLAMP {
        (CLAMP, false)
    } else if s > 1.0 - CLAMP {
        (1.0 - CLAMP, false)
    } else {
        (s, true)
    }
}

/// Time-weighted binary cross-entropy over per-frame scores, averaged over
/// videos. `taus[v]` is the 1-based accident frame for positives.
pub fn ba_lea_loss(
    scores: &[&[f64]],
    labels: &[bool],
    taus: &[usize],
    cfg: &LossConfig,
) -> Result<FrameLoss> {
    if scores.len() != labels.len() || labels.len() != taus.len() || scores.is_empty() {
        return Err(Error::Invalid(
            "ba_lea_loss needs matching, non-empty batches".into(),
        ));
    }
    let v = scores.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    let mut coefficients = Vec::with_capacity(scores.len());
    for ((s, &label), &tau) in scores.iter().zip(labels).zip(taus) {
        let t_len = s.len();
        if label && !(1..=t_len).contains(&tau) {
            return Err(Error::Invalid(format!(
                "accident frame {tau} outside 1..={t_len}"
            )));
        }
        let mut g = Vec::with_capacity(t_len);
        let mut c = Vec::with_capacity(t_len);
        for (i, &raw) in s.iter().enumerate() {
            let t = i + 1;
            let (sc, live) = clamp(raw);
            if label {
                let w = cfg.positive_weight(t, tau);
                value -= w * sc.ln();
                g.push(if live { -w / sc / v } else { 0.0 });
                c.push(w);
            } else {
                let w = cfg.negative_weight(t);
                value -= w * (1.0 - sc).ln();
                g.push(if live { w / (1.0 - sc) / v } else { 0.0 });
                c.push(w);
            }
        }
        grad.push(g);
        coefficients.push(c);
    }
    Ok(FrameLoss {
        value: value / v,
        grad,
        coefficients,
    })
}

/// Binary cross-entropy of video-level predictions; returns `(L_p, ∂L_p/∂l_p)`.
pub fn prediction_loss(preds: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Invalid(
            "prediction_loss needs matching, non-empty batches".into(),
        ));
    }
    let v = preds.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(preds.len());
    for (&p, &label) in preds.iter().zip(labels) {
        let (pc, live) = clamp(p);
        if label {
            value -= pc.ln();
            grad.push(if live { -1.0 / pc / v } else { 0.0 });
        } else {
            value -= (1.0 - pc).ln();
            grad.push(if live { 1.0 / (1.0 - pc) / v } else { 0.0 });
        }
    }
    Ok((value / v, grad))
}

/// Combined loss and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined {
    pub total: f64,
    pub d_frame: f64,
    pub d_video: f64,
    pub d_log_sigma1: f64,
    pub d_log_sigma2: f64,
}

/// `L_S/(2σ₁²) + γ·L_p/(2σ₂²) + log(σ₁σ₂)` when adaptive, else `L_S + γ·L_p`.
pub fn multitask_combine(
    frame: f64,
    video: f64,
    params: &UncertaintyParams,
    cfg: &LossConfig,
) -> Combined {
    if !cfg.adaptive {
        return Combined {
            total: frame + cfg.gamma * video,
            d_frame: 1.0,
            d_video: cfg.gamma,
            d_log_sigma1: 0.0,
            d_log_sigma2: 0.0,
        };
    }
    let inv1 = (-2.0 * params.log_sigma1).exp();
    let inv2 = (-2.0 * params.log_sigma2).exp();
    let a = 0.5 * inv1;
    let b = 0.5 * cfg.gamma * inv2;
    Combined {
        total: a * frame + b * video + params.log_sigma1 + params.log_sigma2,
        d_frame: a,
        d_video: b,
        // ∂/∂ log σ of exp(-2 log σ)/2 · L is -exp(-2 log σ) · L
        d_log_sigma1: -inv1 * frame + 1.0,
        d_log_sigma2: -cfg.gamma * inv2 * video + 1.0,
    }
}

/// One step's loss record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub frame_loss: f64,
    pub video_loss: f64,
    pub total: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coefficient_spot_values() {
        assert_eq!(positive_weight(40, 40, 20.0), 1.0);
        assert!((positive_weight(20, 40, 20.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(positive_weight(50, 40, 20.0), 1.0);
        assert_eq!(negative_weight(150, 150.0), 1.0);
        assert_eq!(negative_weight(75, 150.0), 0.5);
        assert_eq!(negative_weight(300, 150.0), 2.0);
    }

    #[test]
    fn unit_overrides_reduce_to_cross_entropy() {
        let cfg = LossConfig {
            unit_positive_weight: true,
            unit_negative_weight: true,
            ..LossConfig::default()
        };
        let pos = [0.2, 0.7, 0.9];
        let neg = [0.1, 0.4, 0.05];
        let l = ba_lea_loss(&[&pos, &neg], &[true, false], &[2, 0], &cfg).unwrap();
        let ce: f64 = pos.iter().map(|s: &f64| -s.ln()).sum::<f64>()
            + neg.iter().map(|s: &f64| -(1.0 - s).ln()).sum::<f64>();
        assert!((l.value - ce / 2.0).abs() < 1e-12);
    }

    #[test]
    fn tau_out_of_range_is_rejected() {
        let s = [0.5; 4];
        assert!(ba_lea_loss(&[&s], &[true], &[5], &LossConfig::default()).is_err());
        assert!(ba_lea_loss(&[&s], &[true], &[0], &LossConfig::default()).is_err());
    }

    #[test]
    fn prediction_loss_values() {
        let (l, _) = prediction_loss(&[1.0, 0.0], &[true, false]).unwrap();
        assert!(l < 2e-7);
        let (l, _) = prediction_loss(&[0.5, 0.5, 0.5], &[true, false, true]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = prediction_loss(&[(-1.0f64).exp()], &[true]).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combine_values() {
        let cfg = LossConfig::default();
        let c = multitask_combine(3.0, 2.0, &UncertaintyParams::default(), &cfg);
        assert!((c.total - (1.5 + 1e-3)).abs() < 1e-15);
        let fixed = LossConfig {
            adaptive: false,
            ..cfg
        };
        let c = multitask_combine(2.0, 1.0, &UncertaintyParams::default(), &fixed);
        assert!((c.total - 2.001).abs() < 1e-12);
    }

    #[test]
    fn sigma_stationary_point() {
        // ∂L/∂σ₁ = −L_S/σ₁³ + 1/σ₁ vanishes at σ₁ = √L_S.
        let cfg = LossConfig::default();
        let ls = 4.0;
        let at = |s1: f64| {
            multitask_combine(
                ls,
                1.0,
                &UncertaintyParams {
                    log_sigma1: s1.ln(),
                    log_sigma2: 0.0,
                },
                &cfg,
            )
        };
        let c = at(ls.sqrt());
        assert!(c.d_log_sigma1.abs() < 1e-12);
        for s1 in [0.5, 1.3, 3.0] {
            let h = 1e-6;
            let fd = (at(s1 + h).total - at(s1 - h).total) / (2.0 * h);
            let analytic = -ls / s1.powi(3) + 1.0 / s1;
            assert!((fd - analytic).abs() < 1e-6, "{fd} vs {analytic}");
            // chain rule through log σ
            assert!((at(s1).d_log_sigma1 - analytic * s1).abs() < 1e-9);
        }
        assert!(at(1e-3).total > c.total && at(1e3).total > c.total);
    }

    proptest! {
        #[test]
        fn urgency_and_ramp_shapes(tau in 1usize..100, f1 in 1.0..60.0f64, f2 in 10.0..200.0f64) {
            let mut prev = 0.0;
            for t in 1..=120usize {
                let w = positive_weight(t, tau, f1);
                prop_assert!(w >= prev);
                if t >= tau { prop_assert_eq!(w, 1.0); }
                prev = w;
                let r = negative_weight(t, f2);
                prop_assert!(r > negative_weight(t - 1, f2));
                prop_assert!((negative_weight(t + 1, f2) - 2.0 * r + negative_weight(t - 1, f2)).abs() < 1e-12);
            }
        }

        #[test]
        fn gradient_signs(s in prop::collection::vec(0.01..0.99f64, 2..30), tau_frac in 0.0..1.0f64) {
            let tau = 1 + ((s.len() - 1) as f64 * tau_frac) as usize;
            let cfg = LossConfig::default();
            let l = ba_lea_loss(&[&s, &s], &[true, false], &[tau, 0], &cfg).unwrap();
            prop_assert!(l.grad[0].iter().all(|&g| g < 0.0));
            prop_assert!(l.grad[1].iter().all(|&g| g > 0.0));
        }
    }
}
