//! Detection and saliency evaluation: box IoU, CorLoc, GT/Top-1 localization,
//! and the maxFβ / IoU / accuracy triple for masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IoU a prediction must strictly exceed to count as a correct localization.
pub const LOCALIZATION_IOU: f64 = 0.5;
/// Binarization threshold for mask IoU and accuracy.
pub const MASK_THRESHOLD: f64 = 0.5;
/// Number of uniformly spaced binarization thresholds (`k / 255`, `k = 1..=255`).
pub const THRESHOLD_COUNT: usize = 255;
pub const DEFAULT_BETA_SQUARED: f64 = 0.3;

/// Half-open pixel box `[xmin, xmax) × [ymin, ymax)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct PixelBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl PixelBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        PixelBox {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn checked(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = PixelBox::new(xmin, ymin, xmax, ymax);
        if !(b.xmin < b.xmax && b.ymin < b.ymax) || b.as_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "invalid box [{xmin}, {ymin}, {xmax}, {ymax}]"
            )));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

impl From<PixelBox> for [f64; 4] {
    fn from(b: PixelBox) -> Self {
        b.as_array()
    }
}

impl TryFrom<[f64; 4]> for PixelBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        PixelBox::checked(v[0], v[1], v[2], v[3])
    }
}

pub fn box_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One image's prediction paired with its ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalRecord {
    pub image: String,
    pub predicted_box: Option<PixelBox>,
    pub gt_boxes: Vec<PixelBox>,
    pub predicted_class: Option<String>,
    pub true_class: Option<String>,
}

impl EvalRecord {
    /// Best IoU of the prediction against any ground-truth box.
    pub fn best_iou(&self) -> Result<f64> {
        let pred = self
            .predicted_box
            .as_ref()
            .ok_or_else(|| Error::Input(format!("{}: no predicted box", self.image)))?;
        if self.gt_boxes.is_empty() {
            return Err(Error::Input(format!("{}: no ground-truth boxes", self.image)));
        }
        Ok(self
            .gt_boxes
            .iter()
            .map(|gt| box_iou(pred, gt))
            .fold(0.0, f64::max))
    }

    pub fn is_localized(&self) -> Result<bool> {
        Ok(self.best_iou()? > LOCALIZATION_IOU)
    }
}

/// Fraction of images whose prediction overlaps some ground-truth box with IoU > 0.5.
pub fn corloc(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("CorLoc over an empty record set".into()));
    }
    let mut hits = 0usize;
    for r in records {
        hits += usize::from(r.is_localized()?);
    }
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScores {
    pub gt_loc: f64,
    pub top1_loc: f64,
    pub top1_cls: f64,
}

/// GT-known localization, Top-1 localization, and Top-1 classification accuracy.
pub fn topk_loc(records: &[EvalRecord]) -> Result<LocalizationScores> {
    if records.is_empty() {
        return Err(Error::Domain("localization over an empty record set".into()));
    }
    let (mut loc, mut both, mut cls) = (0usize, 0usize, 0usize);
    for r in records {
        let (Some(pred), Some(truth)) = (&r.predicted_class, &r.true_class) else {
            return Err(Error::Input(format!(
                "{}: Top-1 metrics need predicted and true classes",
                r.image
            )));
        };
        let localized = r.is_localized()?;
        let correct = pred == truth;
        loc += usize::from(localized);
        cls += usize::from(correct);
        both += usize::from(localized && correct);
    }
    let n = records.len() as f64;
    Ok(LocalizationScores {
        gt_loc: loc as f64 / n,
        top1_loc: both as f64 / n,
        top1_cls: cls as f64 / n,
    })
}

pub fn f_beta(precision: f64, recall: f64, beta_squared: f64) -> f64 {
    let den = beta_squared * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta_squared) * precision * recall / den
    }
}

/// Threshold `k` of the maxFβ sweep, `k` in `1..=255`.
pub fn sweep_threshold(k: usize) -> f64 {
    k as f64 / THRESHOLD_COUNT as f64
}

/// Pixel counts at one binarization threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `0/0` is taken as 0.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `0/0` is taken as 0.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `0/0` is taken as 0.
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn error_rate(&self) -> f64 {
        ratio(self.fp + self.fn_, self.total())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScores {
    pub max_f_beta: f64,
    pub iou: f64,
    pub accuracy: f64,
    /// Precision at each sweep threshold (index `k - 1`).
    pub precision: Vec<f64>,
    /// Recall at each sweep threshold (index `k - 1`).
    pub recall: Vec<f64>,
    /// Ground truth has no foreground pixel; recall and IoU fall back to the 0/0 = 0 rule.
    pub empty_gt: bool,
}

/// Scores a confidence mask in `[0, 1]` against a binary ground-truth mask.
///
/// The sweep binarizes with `confidence >= k/255`; IoU and accuracy use `confidence > 0.5`.
pub fn saliency_scores(pred: &[f64], gt: &[bool], beta_squared: f64) -> Result<SaliencyScores> {
    if pred.len() != gt.len() {
        return Err(Error::Input(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("empty masks".into()));
    }
    if let Some(v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("confidence {v} outside [0, 1]")));
    }

    // hist[k] counts pixels whose highest passed threshold is k (0 = none passed).
    let mut fg_hist = [0u64; THRESHOLD_COUNT + 1];
    let mut bg_hist = [0u64; THRESHOLD_COUNT + 1];
    let mut at_half = Confusion::default();
    for (&c, &g) in pred.iter().zip(gt) {
        let k = passed_thresholds(c);
        if g {
            fg_hist[k] += 1;
        } else {
            bg_hist[k] += 1;
        }
        match (c > MASK_THRESHOLD, g) {
            (true, true) => at_half.tp += 1,
            (true, false) => at_half.fp += 1,
            (false, true) => at_half.fn_ += 1,
            (false, false) => at_half.tn += 1,
        }
    }

    let gt_fg: u64 = fg_hist.iter().sum();
    let gt_bg: u64 = bg_hist.iter().sum();
    let mut precision = vec![0.0; THRESHOLD_COUNT];
    let mut recall = vec![0.0; THRESHOLD_COUNT];
    // Pixels predicted positive at threshold k are those with passed count >= k.
    let (mut tp, mut fp) = (0u64, 0u64);
    for k in (1..=THRESHOLD_COUNT).rev() {
        tp += fg_hist[k];
        fp += bg_hist[k];
        let c = Confusion {
            tp,
            fp,
            fn_: gt_fg - tp,
            tn: gt_bg - fp,
        };
        precision[k - 1] = c.precision();
        recall[k - 1] = c.recall();
    }
    let max_f_beta = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| f_beta(p, r, beta_squared))
        .fold(0.0, f64::max);

    Ok(SaliencyScores {
        max_f_beta,
        iou: at_half.iou(),
        accuracy: at_half.accuracy(),
        precision,
        recall,
        empty_gt: gt_fg == 0,
    })
}

/// Number of sweep thresholds `k/255` that `c` reaches.
fn passed_thresholds(c: f64) -> usize {
    let mut k = ((c * THRESHOLD_COUNT as f64).floor() as usize).min(THRESHOLD_COUNT);
    while k < THRESHOLD_COUNT && sweep_threshold(k + 1) <= c {
        k += 1;
    }
    while k > 0 && sweep_threshold(k) > c {
        k -= 1;
    }
    k
}

/// Dataset-level saliency aggregate.
///
/// maxFβ is taken over the mean precision and mean recall curves; IoU and
/// accuracy are per-image means. Merging is associative.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyAccumulator {
    pub count: usize,
    pub precision_sum: Vec<f64>,
    pub recall_sum: Vec<f64>,
    pub iou_sum: f64,
    pub accuracy_sum: f64,
    pub empty_gt: usize,
}

impl Default for SaliencyAccumulator {
    fn default() -> Self {
        SaliencyAccumulator {
            count: 0,
            precision_sum: vec![0.0; THRESHOLD_COUNT],
            recall_sum: vec![0.0; THRESHOLD_COUNT],
            iou_sum: 0.0,
            accuracy_sum: 0.0,
            empty_gt: 0,
        }
    }
}

impl SaliencyAccumulator {
    pub fn push(&mut self, s: &SaliencyScores) {
        self.count += 1;
        for (acc, v) in self.precision_sum.iter_mut().zip(&s.precision) {
            *acc += v;
        }
        for (acc, v) in self.recall_sum.iter_mut().zip(&s.recall) {
            *acc += v;
        }
        self.iou_sum += s.iou;
        self.accuracy_sum += s.accuracy;
        self.empty_gt += usize::from(s.empty_gt);
    }

    pub fn merge(mut self, other: &SaliencyAccumulator) -> Self {
        self.count += other.count;
        for (a, b) in self.precision_sum.iter_mut().zip(&other.precision_sum) {
            *a += b;
        }
        for (a, b) in self.recall_sum.iter_mut().zip(&other.recall_sum) {
            *a += b;
        }
        self.iou_sum += other.iou_sum;
        self.accuracy_sum += other.accuracy_sum;
        self.empty_gt += other.empty_gt;
        self
    }

    pub fn max_f_beta(&self, beta_squared: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        self.precision_sum
            .iter()
            .zip(&self.recall_sum)
            .map(|(p, r)| f_beta(p / n, r / n, beta_squared))
            .fold(0.0, f64::max)
    }

    pub fn mean_iou(&self) -> f64 {
        if self.count == 0 { 0.0 } else { self.iou_sum / self.count as f64 }
    }

    pub fn mean_accuracy(&self) -> f64 {
        if self.count == 0 { 0.0 } else { self.accuracy_sum / self.count as f64 }
    }
}
