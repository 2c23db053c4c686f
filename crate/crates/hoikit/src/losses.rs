//! Training objectives.
//!
//! Two families, each with a plain evaluator and a tape builder whose value
//! agrees exactly with it:
//!
//! - the contrastive ITM distillation loss
//!   `sum_i max(0, margin - pos_i) + sum_j neg_j` and its weighted form,
//!   where every sentence is scaled by the selection weight
//!   `w = p_obj(predicted object) * p_verb(predicted verb)` of the
//!   prediction it came from. ITM scores are constants (the VLM is
//!   frozen); the weights carry the gradient back into the classifiers.
//! - the detection loss: box L1 + GIoU over matched pairs, softmax
//!   cross-entropy over objects (with the trailing no-object class
//!   down-weighted), element-wise sigmoid BCE over verbs. Every term is a
//!   mean over its contributing elements, the weighted total is
//!   `w_l1 L1 + w_giou GIoU + w_obj OC + w_verb IC`, and the training
//!   objective is the unweighted sum of detection and ITM losses.

use crate::autodiff::{Tape, Var};
use crate::geometry::{box_giou, BBox};
use crate::grounding::Polarity;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("target index {index} out of range (limit {limit})")]
    TargetOutOfRange { index: usize, limit: usize },
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// Weights of the four detection loss terms; defaults (2.5, 1, 1, 1) for
/// (L1, GIoU, object classification, interaction classification).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub giou: f64,
    pub obj_class: f64,
    pub verb_class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 2.5,
            giou: 1.0,
            obj_class: 1.0,
            verb_class: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("l1", self.l1),
            ("giou", self.giou),
            ("obj_class", self.obj_class),
            ("verb_class", self.verb_class),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::Invalid(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Hinge anchor of the contrastive ITM loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin(pub f64);

impl Default for Margin {
    fn default() -> Self {
        Margin(1.0)
    }
}

impl Margin {
    pub fn new(alpha: f64) -> Result<Self, LossError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(LossError::Invalid(format!(
                "margin must be finite and >= 0, got {alpha}"
            )));
        }
        Ok(Margin(alpha))
    }
}

/// Contrastive ITM loss: positives are hinged at the margin, negatives
/// contribute their raw score. Empty lists contribute 0.
pub fn itm_contrastive_loss(pos_scores: &[f64], neg_scores: &[f64], margin: Margin) -> f64 {
    let pos: f64 = pos_scores.iter().map(|&s| (margin.0 - s).max(0.0)).sum();
    let neg: f64 = neg_scores.iter().sum();
    pos + neg
}

/// Weighted ITM loss value: `sum_i w_i c_i` with per-sentence coefficient
/// `c = max(0, margin - score)` for positives and `c = score` for
/// negatives. With all weights 1 this reduces to [`itm_contrastive_loss`].
pub fn weighted_itm_loss(
    weights: &[f64],
    scores: &[f64],
    polarities: &[Polarity],
    margin: Margin,
) -> Result<f64, LossError> {
    let coeffs = itm_coefficients(scores, polarities, margin)?;
    if weights.len() != coeffs.len() {
        return Err(LossError::Misaligned(format!(
            "{} weights vs {} scores",
            weights.len(),
            coeffs.len()
        )));
    }
    Ok(weights.iter().zip(coeffs.iter()).map(|(w, c)| w * c).sum())
}

/// Per-sentence constant coefficients of the weighted ITM loss.
pub fn itm_coefficients(
    scores: &[f64],
    polarities: &[Polarity],
    margin: Margin,
) -> Result<Vec<f64>, LossError> {
    if scores.len() != polarities.len() {
        return Err(LossError::Misaligned(format!(
            "{} scores vs {} polarities",
            scores.len(),
            polarities.len()
        )));
    }
    Ok(scores
        .iter()
        .zip(polarities.iter())
        .map(|(&s, p)| match p {
            Polarity::Positive => (margin.0 - s).max(0.0),
            Polarity::Negative => s,
        })
        .collect())
}

/// Tape form of [`weighted_itm_loss`]: `weights` is a 1 x n node, scores
/// and polarities fold into a constant coefficient row. Returns a scalar
/// node; an empty sentence set yields a constant 0.
pub fn weighted_itm_loss_tape(
    tape: &mut Tape,
    weights: Var,
    scores: &[f64],
    polarities: &[Polarity],
    margin: Margin,
) -> Result<Var, LossError> {
    let coeffs = itm_coefficients(scores, polarities, margin)?;
    let n = tape.value(weights).len();
    if n != coeffs.len() {
        return Err(LossError::Misaligned(format!(
            "{n} weights vs {} scores",
            coeffs.len()
        )));
    }
    if coeffs.is_empty() {
        return Ok(tape.leaf_scalar(0.0));
    }
    let c = tape.leaf(Array2::from_shape_vec((1, coeffs.len()), coeffs).expect("row"));
    let prod = tape.mul(weights, c);
    Ok(tape.sum_all(prod))
}

/// Mean absolute difference over the 4 center-size coordinates of the
/// human and object boxes, averaged over matched pairs (8 P coordinates).
/// Empty match -> 0.
pub fn l1_box_loss(pred: &[(BBox, BBox)], gt: &[(BBox, BBox)]) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::Misaligned(format!(
            "{} predicted pairs vs {} ground-truth pairs",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ((ph, po), (gh, go)) in pred.iter().zip(gt.iter()) {
        for (p, g) in [(ph, gh), (po, go)] {
            sum += (p.cx - g.cx).abs()
                + (p.cy - g.cy).abs()
                + (p.w - g.w).abs()
                + (p.h - g.h).abs();
        }
    }
    Ok(sum / (8.0 * pred.len() as f64))
}

/// Mean of `1 - GIoU` over the human and object boxes of matched pairs
/// (2 P values). Empty match -> 0.
pub fn giou_loss(pred: &[(BBox, BBox)], gt: &[(BBox, BBox)]) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::Misaligned(format!(
            "{} predicted pairs vs {} ground-truth pairs",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ((ph, po), (gh, go)) in pred.iter().zip(gt.iter()) {
        sum += (1.0 - box_giou(ph, gh)) + (1.0 - box_giou(po, go));
    }
    Ok(sum / (2.0 * pred.len() as f64))
}

/// Softmax cross-entropy over K real classes + trailing no-object class.
/// The no-object target's contribution is scaled by `no_object_weight`
/// (weighted mean, normalized by the sum of weights), the standard guard
/// against unmatched queries dominating the loss.
pub fn obj_cls_loss(
    logits: &Array2<f64>,
    targets: &[usize],
    no_object_weight: f64,
) -> Result<f64, LossError> {
    if logits.nrows() != targets.len() {
        return Err(LossError::Misaligned(format!(
            "{} logit rows vs {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let classes = logits.ncols();
    let no_object = classes - 1;
    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    for (row, &t) in logits.rows().into_iter().zip(targets.iter()) {
        if t >= classes {
            return Err(LossError::TargetOutOfRange {
                index: t,
                limit: classes,
            });
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
        let nll = log_sum - row[t];
        let w = if t == no_object { no_object_weight } else { 1.0 };
        weighted_sum += w * nll;
        weight_total += w;
    }
    Ok(weighted_sum / weight_total)
}

/// Element-wise sigmoid binary cross-entropy against multi-hot targets,
/// mean over all N x V entries. Unmatched queries take all-zero targets.
pub fn verb_cls_loss(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<f64, LossError> {
    if logits.dim() != targets.dim() {
        return Err(LossError::Misaligned(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (&x, &t) in logits.iter().zip(targets.iter()) {
        // stable: max(x,0) - x t + ln(1 + exp(-|x|))
        sum += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
    }
    Ok(sum / logits.len() as f64)
}

/// The four detection loss terms of one image or batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HoiLossTerms {
    pub l1: f64,
    pub giou: f64,
    pub obj_class: f64,
    pub verb_class: f64,
}

impl HoiLossTerms {
    pub fn compute(
        matched_pred: &[(BBox, BBox)],
        matched_gt: &[(BBox, BBox)],
        obj_logits: &Array2<f64>,
        obj_targets: &[usize],
        verb_logits: &Array2<f64>,
        verb_targets: &Array2<f64>,
        no_object_weight: f64,
    ) -> Result<Self, LossError> {
        Ok(Self {
            l1: l1_box_loss(matched_pred, matched_gt)?,
            giou: giou_loss(matched_pred, matched_gt)?,
            obj_class: obj_cls_loss(obj_logits, obj_targets, no_object_weight)?,
            verb_class: verb_cls_loss(verb_logits, verb_targets)?,
        })
    }

    /// Weighted combination, linear in the weights.
    pub fn combine(&self, w: &LossWeights) -> f64 {
        w.l1 * self.l1
            + w.giou * self.giou
            + w.obj_class * self.obj_class
            + w.verb_class * self.verb_class
    }
}

/// Training objective: plain sum, no extra coefficient.
pub fn total_loss(hoi: f64, itm: f64) -> f64 {
    hoi + itm
}

// ---------------------------------------------------------------------------
// Tape builders. Box arguments are P x 4 center-size matrices.
// ---------------------------------------------------------------------------

/// `1 - GIoU` per row between two P x 4 center-size box matrices,
/// averaged together with a second pair downstream; returns the P x 1
/// column of GIoU values.
pub fn giou_column_tape(tape: &mut Tape, pred: Var, gt: Var) -> Var {
    let half = 0.5;
    let col = |tape: &mut Tape, m: Var, i: usize| tape.slice_cols(m, i, 1);

    let pcx = col(tape, pred, 0);
    let pcy = col(tape, pred, 1);
    let pw = col(tape, pred, 2);
    let ph = col(tape, pred, 3);
    let gcx = col(tape, gt, 0);
    let gcy = col(tape, gt, 1);
    let gw = col(tape, gt, 2);
    let gh = col(tape, gt, 3);

    let corner = |tape: &mut Tape, c: Var, s: Var, sign: f64| {
        let offset = tape.scale(s, half * sign);
        tape.add(c, offset)
    };
    let px1 = corner(tape, pcx, pw, -1.0);
    let px2 = corner(tape, pcx, pw, 1.0);
    let py1 = corner(tape, pcy, ph, -1.0);
    let py2 = corner(tape, pcy, ph, 1.0);
    let gx1 = corner(tape, gcx, gw, -1.0);
    let gx2 = corner(tape, gcx, gw, 1.0);
    let gy1 = corner(tape, gcy, gh, -1.0);
    let gy2 = corner(tape, gcy, gh, 1.0);

    let ix1 = tape.max(px1, gx1);
    let ix2 = tape.min(px2, gx2);
    let iy1 = tape.max(py1, gy1);
    let iy2 = tape.min(py2, gy2);
    let iw_raw = tape.sub(ix2, ix1);
    let iw = tape.max_const(iw_raw, 0.0);
    let ih_raw = tape.sub(iy2, iy1);
    let ih = tape.max_const(ih_raw, 0.0);
    let inter = tape.mul(iw, ih);

    let pa = tape.mul(pw, ph);
    let ga = tape.mul(gw, gh);
    let areas = tape.add(pa, ga);
    let union = tape.sub(areas, inter);
    let iou = tape.div(inter, union);

    let hx1 = tape.min(px1, gx1);
    let hx2 = tape.max(px2, gx2);
    let hy1 = tape.min(py1, gy1);
    let hy2 = tape.max(py2, gy2);
    let hw = tape.sub(hx2, hx1);
    let hh = tape.sub(hy2, hy1);
    let hull = tape.mul(hw, hh);
    let empty = tape.sub(hull, union);
    let penalty = tape.div(empty, hull);
    tape.sub(iou, penalty)
}

/// Mean `1 - GIoU` over human and object boxes of matched pairs.
pub fn giou_loss_tape(
    tape: &mut Tape,
    pred_human: Var,
    pred_object: Var,
    gt_human: Var,
    gt_object: Var,
) -> Var {
    let gh = giou_column_tape(tape, pred_human, gt_human);
    let go = giou_column_tape(tape, pred_object, gt_object);
    let both = tape.concat_cols(&[gh, go]);
    let neg = tape.neg(both);
    let one_minus = tape.add_const(neg, 1.0);
    tape.mean_all(one_minus)
}

/// Mean absolute coordinate difference over matched pairs (8 P coords).
pub fn l1_box_loss_tape(
    tape: &mut Tape,
    pred_human: Var,
    pred_object: Var,
    gt_human: Var,
    gt_object: Var,
) -> Var {
    let dh = tape.sub(pred_human, gt_human);
    let do_ = tape.sub(pred_object, gt_object);
    let all = tape.concat_cols(&[dh, do_]);
    let abs = tape.abs(all);
    tape.mean_all(abs)
}

/// Weighted-mean softmax cross-entropy (see [`obj_cls_loss`]).
pub fn obj_cls_loss_tape(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    no_object_weight: f64,
) -> Result<Var, LossError> {
    let (rows, classes) = tape.value(logits).dim();
    if rows != targets.len() {
        return Err(LossError::Misaligned(format!(
            "{rows} logit rows vs {} targets",
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Ok(tape.leaf_scalar(0.0));
    }
    let no_object = classes - 1;
    let coords: Vec<(usize, usize)> = targets.iter().enumerate().map(|(i, &t)| (i, t)).collect();
    for &(_, t) in &coords {
        if t >= classes {
            return Err(LossError::TargetOutOfRange {
                index: t,
                limit: classes,
            });
        }
    }
    let weights: Vec<f64> = targets
        .iter()
        .map(|&t| if t == no_object { no_object_weight } else { 1.0 })
        .collect();
    let weight_total: f64 = weights.iter().sum();

    let log_probs = tape.log_softmax_rows(logits);
    let picked = tape.gather_elems(log_probs, &coords);
    let wrow = tape.leaf(Array2::from_shape_vec((1, weights.len()), weights).expect("row"));
    let weighted = tape.mul(picked, wrow);
    let sum = tape.sum_all(weighted);
    Ok(tape.scale(sum, -1.0 / weight_total))
}

/// Element-wise stable BCE-with-logits, mean reduction (see
/// [`verb_cls_loss`]).
pub fn verb_cls_loss_tape(
    tape: &mut Tape,
    logits: Var,
    targets: &Array2<f64>,
) -> Result<Var, LossError> {
    if tape.value(logits).dim() != targets.dim() {
        return Err(LossError::Misaligned(format!(
            "logits {:?} vs targets {:?}",
            tape.value(logits).dim(),
            targets.dim()
        )));
    }
    if targets.is_empty() {
        return Ok(tape.leaf_scalar(0.0));
    }
    let t = tape.leaf(targets.clone());
    let relu_x = tape.max_const(logits, 0.0);
    let xt = tape.mul(logits, t);
    let linear = tape.sub(relu_x, xt);
    let abs_x = tape.abs(logits);
    let neg_abs = tape.neg(abs_x);
    let exp = tape.exp(neg_abs);
    let one_plus = tape.add_const(exp, 1.0);
    let softplus = tape.ln(one_plus);
    let per_elem = tape.add(linear, softplus);
    Ok(tape.mean_all(per_elem))
}
