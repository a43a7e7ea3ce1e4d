//! Video-level detection metrics and time-to-accident statistics.
//!
//! A video's score is the maximum of its per-frame scores. A positive's
//! time-to-accident at threshold θ is `(τ − t_θ)/fps`, where `t_θ` is the
//! first frame with score ≥ θ; missed positives count as zero lead time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame scores `s_t ∈ [0,1]` and the video-level probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub scores: Vec<f64>,
    pub video_prob: f64,
}

impl RiskCurve {
    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_score: f64,
    pub curve: RiskCurve,
    pub label: bool,
    pub accident_frame: usize,
}

impl VideoScore {
    pub fn new(curve: RiskCurve, label: bool, accident_frame: usize) -> Self {
        VideoScore {
            video_score: curve.max_score(),
            curve,
            label,
            accident_frame,
        }
    }
}

/// Grid `0.01, 0.02, …, 0.99`.
pub fn threshold_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// First 1-based frame whose score reaches `threshold`.
pub fn detect_time(scores: &[f64], threshold: f64) -> Option<usize> {
    scores.iter().position(|&s| s >= threshold).map(|i| i + 1)
}

/// Lead time in seconds for a positive video.
pub fn tta(scores: &[f64], accident_frame: usize, threshold: f64, frame_rate: f64) -> Result<f64> {
    if accident_frame == 0 {
        return Err(Error::Metric(
            "time-to-accident is only defined for positive videos".into(),
        ));
    }
    Ok(match detect_time(scores, threshold) {
        Some(t) if t < accident_frame => (accident_frame - t) as f64 / frame_rate,
        _ => 0.0,
    })
}

fn positives(videos: &[VideoScore]) -> Vec<&VideoScore> {
    videos.iter().filter(|v| v.label).collect()
}

/// Mean over positives of TTA at one threshold. With `exclude_missed`, only
/// positives detected at that threshold are averaged (`None` if none are).
pub fn mean_tta_at(
    videos: &[VideoScore],
    threshold: f64,
    frame_rate: f64,
    exclude_missed: bool,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in videos.iter().filter(|v| v.label) {
        let detected = detect_time(&v.curve.scores, threshold).is_some();
        if exclude_missed && !detected {
            continue;
        }
        sum += tta(&v.curve.scores, v.accident_frame, threshold, frame_rate).unwrap_or(0.0);
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean over the threshold grid of the per-threshold mean TTA.
pub fn mtta(videos: &[VideoScore], frame_rate: f64) -> Result<f64> {
    if positives(videos).is_empty() {
        return Err(Error::Metric(
            "mTTA needs at least one positive video".into(),
        ));
    }
    let grid = threshold_grid();
    let total: f64 = grid
        .iter()
        .map(|&th| mean_tta_at(videos, th, frame_rate, false).unwrap_or(0.0))
        .sum();
    Ok(total / grid.len() as f64)
}

/// mTTA variant averaging only over detected positives; thresholds with no
/// detection are skipped. `None` when nothing is ever detected.
pub fn mtta_detected_only(videos: &[VideoScore], frame_rate: f64) -> Option<f64> {
    let vals: Vec<f64> = threshold_grid()
        .iter()
        .filter_map(|&th| mean_tta_at(videos, th, frame_rate, true))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    /// No negatives were present, so AP is trivially 1.
    pub degenerate: bool,
}

/// Step-integrated area under the precision–recall curve. Tied scores form
/// one rank group.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<ApResult> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::Metric(
            "average precision is undefined without positives".into(),
        ));
    }
    if n_pos == labels.len() {
        return Ok(ApResult {
            ap: 1.0,
            degenerate: true,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ApResult {
        ap,
        degenerate: false,
    })
}

/// Area under the ROC curve via the Mann–Whitney statistic (average ranks).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(
            "AUC needs both positive and negative videos".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] {
                rank_sum_pos += avg;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Video-level recall at `threshold` (fraction of positives whose maximum
/// score reaches it).
pub fn recall_at(videos: &[VideoScore], threshold: f64) -> f64 {
    let pos = positives(videos);
    if pos.is_empty() {
        return 0.0;
    }
    pos.iter().filter(|v| v.video_score >= threshold).count() as f64 / pos.len() as f64
}

pub fn precision_at(videos: &[VideoScore], threshold: f64) -> f64 {
    let flagged: Vec<_> = videos
        .iter()
        .filter(|v| v.video_score >= threshold)
        .collect();
    if flagged.is_empty() {
        return 0.0;
    }
    flagged.iter().filter(|v| v.label).count() as f64 / flagged.len() as f64
}

/// Mean TTA at the largest grid threshold whose recall reaches `target`;
/// `None` when no grid threshold does.
pub fn tta_at_recall(videos: &[VideoScore], target: f64, frame_rate: f64) -> Result<Option<f64>> {
    if positives(videos).is_empty() {
        return Err(Error::Metric(
            "TTA at recall needs at least one positive video".into(),
        ));
    }
    let chosen = threshold_grid()
        .into_iter()
        .rev()
        .find(|&th| recall_at(videos, th) >= target);
    Ok(chosen.map(|th| mean_tta_at(videos, th, frame_rate, false).unwrap_or(0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub mean_tta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    /// True when the split had no negatives and AP defaulted to 1.
    pub ap_degenerate: bool,
    pub auc: Option<f64>,
    pub mtta: f64,
    /// Same statistic averaging only detected positives.
    pub mtta_detected_only: Option<f64>,
    /// `None` marks an unreachable recall target.
    pub tta_r80: Option<f64>,
    pub tta_r50: Option<f64>,
    pub frame_rate: f64,
    pub num_videos: usize,
    pub num_positive: usize,
    pub thresholds: Vec<ThresholdRow>,
}

impl EvalReport {
    pub fn threshold_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,mean_tta\n");
        for r in &self.thresholds {
            out.push_str(&format!(
                "{:.2},{},{},{}\n",
                r.threshold, r.precision, r.recall, r.mean_tta
            ));
        }
        out
    }
}

pub fn evaluate_scores(videos: &[VideoScore], frame_rate: f64) -> Result<EvalReport> {
    let scores: Vec<f64> = videos.iter().map(|v| v.video_score).collect();
    let labels: Vec<bool> = videos.iter().map(|v| v.label).collect();
    let ap = average_precision(&scores, &labels)?;
    let auc = auc(&scores, &labels).ok();
    let thresholds = threshold_grid()
        .into_iter()
        .map(|th| ThresholdRow {
            threshold: th,
            precision: precision_at(videos, th),
            recall: recall_at(videos, th),
            mean_tta: mean_tta_at(videos, th, frame_rate, false).unwrap_or(0.0),
        })
        .collect();
    Ok(EvalReport {
        ap: ap.ap,
        ap_degenerate: ap.degenerate,
        auc,
        mtta: mtta(videos, frame_rate)?,
        mtta_detected_only: mtta_detected_only(videos, frame_rate),
        tta_r80: tta_at_recall(videos, 0.8, frame_rate)?,
        tta_r50: tta_at_recall(videos, 0.5, frame_rate)?,
        frame_rate,
        num_videos: videos.len(),
        num_positive: labels.iter().filter(|&&l| l).count(),
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_curve(len: usize, at: usize) -> Vec<f64> {
        (1..=len).map(|t| if t >= at { 1.0 } else { 0.0 }).collect()
    }

    fn vs(scores: Vec<f64>, label: bool, tau: usize) -> VideoScore {
        VideoScore::new(
            RiskCurve {
                scores,
                video_prob: 0.0,
            },
            label,
            tau,
        )
    }

    #[test]
    fn detection_times() {
        assert_eq!(detect_time(&[0.1, 0.6, 0.4], 0.5), Some(2));
        assert_eq!(detect_time(&[0.1, 0.2], 0.5), None);
        assert_eq!(detect_time(&[0.5, 0.5], 0.5), Some(1));
    }

    #[test]
    fn lead_times() {
        let s = step_curve(100, 50);
        assert_eq!(tta(&s, 90, 0.5, 20.0).unwrap(), 2.0);
        assert_eq!(tta(&[0.0; 100], 90, 0.5, 20.0).unwrap(), 0.0);
        assert_eq!(tta(&step_curve(100, 90), 90, 0.5, 20.0).unwrap(), 0.0);
        assert_eq!(tta(&step_curve(100, 95), 90, 0.5, 20.0).unwrap(), 0.0);
        assert!(tta(&s, 0, 0.5, 20.0).is_err());
    }

    #[test]
    fn mtta_cases() {
        let videos = vec![vs(step_curve(100, 50), true, 90)];
        assert!((mtta(&videos, 20.0).unwrap() - 2.0).abs() < 1e-12);
        let zero = vec![vs(vec![0.0; 100], true, 90)];
        assert_eq!(mtta(&zero, 20.0).unwrap(), 0.0);
        assert_eq!(mtta_detected_only(&zero, 20.0), None);
        assert!(mtta(&[vs(vec![0.3; 5], false, 0)], 20.0).is_err());
    }

    #[test]
    fn ap_cases() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap();
        assert_eq!(ap.ap, 1.0);
        assert_eq!(
            average_precision(&[0.9, 0.8], &[false, true]).unwrap().ap,
            0.5
        );
        assert!(average_precision(&[0.2], &[false]).is_err());
        let all_pos = average_precision(&[0.2, 0.4], &[true, true]).unwrap();
        assert!(all_pos.degenerate && all_pos.ap == 1.0);
        // a tie between a positive and a negative is one group
        assert_eq!(
            average_precision(&[0.5, 0.5], &[true, false]).unwrap().ap,
            0.5
        );
    }

    #[test]
    fn auc_cases() {
        assert_eq!(
            auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(auc(&[0.3, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn recall_targets() {
        let videos = vec![
            vs(step_curve(100, 50), true, 90),
            vs(step_curve(100, 50), true, 90),
            vs(vec![0.2; 100], false, 0),
        ];
        assert_eq!(tta_at_recall(&videos, 0.8, 20.0).unwrap(), Some(2.0));
        let missed = vec![vs(vec![0.0; 100], true, 90), vs(vec![0.1; 100], false, 0)];
        assert_eq!(tta_at_recall(&missed, 0.8, 20.0).unwrap(), None);
    }

    #[test]
    fn report_csv_has_one_row_per_threshold() {
        let videos = vec![
            vs(step_curve(40, 10), true, 30),
            vs(vec![0.2; 40], false, 0),
        ];
        let r = evaluate_scores(&videos, 20.0).unwrap();
        assert_eq!(r.threshold_csv().lines().count(), 100);
        assert_eq!(r.ap, 1.0);
        assert_eq!(r.auc, Some(1.0));
    }
}
