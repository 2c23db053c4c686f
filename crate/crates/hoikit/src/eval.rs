//! Benchmark-protocol mAP evaluation.
//!
//! HICO-DET style: AP per (verb, object) HOI category pooled over images,
//! with the Default setting pooling every image and Known-Object
//! restricting each category's pool to images whose ground truth contains
//! that object class; aggregates over Full / Rare / Non-Rare splits.
//! V-COCO style: role AP per action, Scenario 1 keeping the body-motion
//! actions (object box ignored by default) and Scenario 2 dropping them.
//!
//! A prediction is a true positive when both boxes reach the IoU threshold
//! (min of human and object IoU) against a not-yet-claimed ground truth;
//! IoU exactly at the threshold counts. Average precision uses all-point
//! interpolation (the precision envelope). Matching is greedy in score
//! order, equal scores in input order, the claimed ground truth maximizes
//! the min-IoU with ties broken by lower index.

use crate::geometry::box_iou;
use crate::types::{HOITriplet, ImageAnnotation};
use crate::vocab::{Benchmark, Vocabulary};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    #[default]
    Default,
    KnownObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
}

/// How a prediction's object box is treated against no-object ground truth
/// (the two published V-COCO conventions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoObjectRule {
    /// The predicted object box is ignored.
    #[default]
    IgnoreBox,
    /// The predicted object box must be exactly empty (all-zero corners).
    RequireEmptyBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub setting: EvalSetting,
    pub iou_threshold: f64,
    pub no_object_rule: NoObjectRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            setting: EvalSetting::Default,
            iou_threshold: 0.5,
            no_object_rule: NoObjectRule::IgnoreBox,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(EvalError::InvalidConfig(format!(
                "iou threshold must lie in (0, 1), got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("prediction on image `{image_id}` references unknown category (object {object_id}, verb {verb_id})")]
    UnknownCategory {
        image_id: String,
        object_id: usize,
        verb_id: usize,
    },
    #[error("scenario evaluation requires a vcoco vocabulary, got {0:?}")]
    ScenarioMisuse(Benchmark),
}

/// All predictions of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub image_id: String,
    pub triplets: Vec<HOITriplet>,
}

/// Per-category AP plus the aggregate means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APResult {
    pub benchmark: Benchmark,
    pub setting: EvalSetting,
    pub scenario: Option<Scenario>,
    pub per_category: Vec<CategoryAp>,
    /// Mean AP over categories with ground truth.
    pub full_map: Option<f64>,
    pub rare_map: Option<f64>,
    pub nonrare_map: Option<f64>,
    /// V-COCO aggregate (same value as `full_map`, role-AP naming).
    pub role_ap: Option<f64>,
    /// Predictions whose (verb, object) pair is not a listed category.
    pub skipped_predictions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub verb: usize,
    pub object: Option<usize>,
    pub rare: bool,
    pub n_gt: usize,
    /// `None` when the category has no ground truth (excluded from means).
    pub ap: Option<f64>,
}

/// Greedy TP/FP flags for predictions of one image and one category,
/// already sorted by descending score.
pub fn match_for_eval(
    preds: &[HOITriplet],
    gts: &[HOITriplet],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut claimed = vec![false; gts.len()];
    preds
        .iter()
        .map(|p| claim_best(p, gts, &mut claimed, iou_threshold, PairIoU::Both))
        .collect()
}

/// How the pair IoU against a ground truth is computed.
#[derive(Clone, Copy)]
enum PairIoU {
    /// min(IoU human, IoU object)
    Both,
    /// IoU human only (no-object ground truth, ignore rule)
    HumanOnly,
    /// IoU human only, and the prediction's object box must be empty
    HumanOnlyEmptyObject,
}

fn pair_iou(pred: &HOITriplet, gt: &HOITriplet, mode: PairIoU) -> f64 {
    let human = box_iou(&pred.human_box, &gt.human_box);
    match mode {
        PairIoU::Both => human.min(box_iou(&pred.object_box, &gt.object_box)),
        PairIoU::HumanOnly => human,
        PairIoU::HumanOnlyEmptyObject => {
            let c = pred.object_box.corners();
            if c.iter().all(|&x| x == 0.0) {
                human
            } else {
                0.0
            }
        }
    }
}

fn claim_best(
    pred: &HOITriplet,
    gts: &[HOITriplet],
    claimed: &mut [bool],
    iou_threshold: f64,
    mode: PairIoU,
) -> bool {
    let mut best: Option<(f64, usize)> = None;
    for (i, gt) in gts.iter().enumerate() {
        if claimed[i] {
            continue;
        }
        let v = pair_iou(pred, gt, mode);
        if v >= iou_threshold {
            let better = match best {
                None => true,
                Some((bv, _)) => v > bv, // ties keep the lower index
            };
            if better {
                best = Some((v, i));
            }
        }
    }
    match best {
        Some((_, i)) => {
            claimed[i] = true;
            true
        }
        None => false,
    }
}

/// Area under the precision-recall curve with all-point interpolation.
/// `None` when the category has no ground truth.
pub fn average_precision(tp_flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    if tp_flags.is_empty() {
        return Some(0.0);
    }
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &flag) in tp_flags.iter().enumerate() {
        if flag {
            tp += 1;
        }
        precisions.push(tp as f64 / (k + 1) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // precision envelope from the right, integrated over recall steps
    let mut ap = 0.0;
    let mut max_prec = 0.0f64;
    for k in (0..tp_flags.len()).rev() {
        max_prec = max_prec.max(precisions[k]);
        let prev_recall = if k == 0 { 0.0 } else { recalls[k - 1] };
        if recalls[k] > prev_recall {
            ap += (recalls[k] - prev_recall) * max_prec;
        }
    }
    Some(ap)
}

struct RankedPrediction {
    image_index: usize,
    triplet: HOITriplet,
    input_order: usize,
}

/// Shared per-category evaluation: rank the category's predictions by
/// score (stable on input order), greedily claim ground truth per image in
/// that global order, then integrate the PR curve.
fn category_ap(
    ranked: &mut Vec<RankedPrediction>,
    gt_per_image: &BTreeMap<usize, Vec<HOITriplet>>,
    iou_threshold: f64,
    mode: PairIoU,
) -> (usize, Option<f64>) {
    let n_gt: usize = gt_per_image.values().map(Vec::len).sum();
    ranked.sort_by(|a, b| {
        b.triplet
            .score
            .partial_cmp(&a.triplet.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.input_order.cmp(&b.input_order))
    });
    let mut claimed: BTreeMap<usize, Vec<bool>> = gt_per_image
        .iter()
        .map(|(&img, gts)| (img, vec![false; gts.len()]))
        .collect();
    let flags: Vec<bool> = ranked
        .iter()
        .map(|r| match gt_per_image.get(&r.image_index) {
            Some(gts) => claim_best(
                &r.triplet,
                gts,
                claimed.get_mut(&r.image_index).expect("claim set"),
                iou_threshold,
                mode,
            ),
            None => false,
        })
        .collect();
    (n_gt, average_precision(&flags, n_gt))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// HICO-DET-style mAP over (verb, object) categories; also used for the
/// synthetic benchmark. See the module docs for the protocol.
pub fn hico_map(
    predictions: &[ImagePredictions],
    annotations: &[ImageAnnotation],
    vocab: &Vocabulary,
    cfg: &EvalConfig,
) -> Result<APResult, EvalError> {
    cfg.validate()?;
    let ann_index: BTreeMap<&str, usize> = annotations
        .iter()
        .enumerate()
        .map(|(i, a)| (a.image_id.as_str(), i))
        .collect();

    let category_of: BTreeMap<(usize, usize), usize> = vocab
        .hoi_categories()
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.object.map(|o| ((c.verb, o), i)))
        .collect();

    // ground truth per category per image
    let mut gt: Vec<BTreeMap<usize, Vec<HOITriplet>>> =
        vec![BTreeMap::new(); vocab.hoi_categories().len()];
    // images whose ground truth contains each object class (known-object pools)
    let mut images_with_object: Vec<Vec<bool>> =
        vec![vec![false; annotations.len()]; vocab.num_objects()];
    for (img_idx, ann) in annotations.iter().enumerate() {
        for t in &ann.gt_triplets {
            if let Some(&cat) = category_of.get(&(t.verb_id, t.object_id)) {
                gt[cat].entry(img_idx).or_default().push(*t);
            }
            if t.object_id < vocab.num_objects() {
                images_with_object[t.object_id][img_idx] = true;
            }
        }
    }

    // predictions per category
    let mut preds: Vec<Vec<RankedPrediction>> = (0..vocab.hoi_categories().len())
        .map(|_| Vec::new())
        .collect();
    let mut skipped = 0usize;
    let mut order = 0usize;
    for image in predictions {
        let img_idx = match ann_index.get(image.image_id.as_str()) {
            Some(&i) => i,
            // predictions on images outside the annotation set can never
            // match; they still count as FPs nowhere, so skip them
            None => {
                skipped += image.triplets.len();
                continue;
            }
        };
        for t in &image.triplets {
            if t.object_id >= vocab.num_objects() || t.verb_id >= vocab.num_verbs() {
                return Err(EvalError::UnknownCategory {
                    image_id: image.image_id.clone(),
                    object_id: t.object_id,
                    verb_id: t.verb_id,
                });
            }
            match category_of.get(&(t.verb_id, t.object_id)) {
                Some(&cat) => {
                    preds[cat].push(RankedPrediction {
                        image_index: img_idx,
                        triplet: *t,
                        input_order: order,
                    });
                    order += 1;
                }
                None => skipped += 1,
            }
        }
    }

    let mut per_category = Vec::with_capacity(vocab.hoi_categories().len());
    for (cat_idx, cat) in vocab.hoi_categories().iter().enumerate() {
        let object = cat.object.expect("hico-style category");
        let mut ranked: Vec<RankedPrediction> = Vec::new();
        let mut gt_pool: BTreeMap<usize, Vec<HOITriplet>> = BTreeMap::new();
        let in_pool = |img_idx: usize| match cfg.setting {
            EvalSetting::Default => true,
            EvalSetting::KnownObject => images_with_object[object][img_idx],
        };
        for (&img_idx, gts) in &gt[cat_idx] {
            if in_pool(img_idx) {
                gt_pool.insert(img_idx, gts.clone());
            }
        }
        for r in preds[cat_idx].drain(..) {
            if in_pool(r.image_index) {
                ranked.push(r);
            }
        }
        let (n_gt, ap) = category_ap(&mut ranked, &gt_pool, cfg.iou_threshold, PairIoU::Both);
        per_category.push(CategoryAp {
            verb: cat.verb,
            object: Some(object),
            rare: cat.rare,
            n_gt,
            ap,
        });
    }

    let with_gt = |rare: Option<bool>| {
        per_category
            .iter()
            .filter(move |c| rare.is_none_or(|r| c.rare == r))
            .filter_map(|c| c.ap)
    };
    Ok(APResult {
        benchmark: vocab.benchmark(),
        setting: cfg.setting,
        scenario: None,
        full_map: mean(with_gt(None)),
        rare_map: mean(with_gt(Some(true))),
        nonrare_map: mean(with_gt(Some(false))),
        role_ap: None,
        skipped_predictions: skipped,
        per_category,
    })
}

/// V-COCO role AP per action. Scenario 1 keeps the body-motion actions
/// (object boxes handled by `cfg.no_object_rule`); Scenario 2 drops them.
pub fn vcoco_role_ap(
    predictions: &[ImagePredictions],
    annotations: &[ImageAnnotation],
    vocab: &Vocabulary,
    scenario: Scenario,
    cfg: &EvalConfig,
) -> Result<APResult, EvalError> {
    cfg.validate()?;
    if vocab.benchmark() != Benchmark::Vcoco {
        return Err(EvalError::ScenarioMisuse(vocab.benchmark()));
    }
    let ann_index: BTreeMap<&str, usize> = annotations
        .iter()
        .enumerate()
        .map(|(i, a)| (a.image_id.as_str(), i))
        .collect();

    let actions: Vec<usize> = (0..vocab.num_verbs())
        .filter(|&v| scenario == Scenario::S1 || !vocab.is_no_object_verb(v))
        .collect();

    let mut gt: BTreeMap<usize, BTreeMap<usize, Vec<HOITriplet>>> = BTreeMap::new();
    for (img_idx, ann) in annotations.iter().enumerate() {
        for t in &ann.gt_triplets {
            gt.entry(t.verb_id)
                .or_default()
                .entry(img_idx)
                .or_default()
                .push(*t);
        }
    }

    let mut preds: BTreeMap<usize, Vec<RankedPrediction>> = BTreeMap::new();
    let mut skipped = 0usize;
    let mut order = 0usize;
    for image in predictions {
        let img_idx = match ann_index.get(image.image_id.as_str()) {
            Some(&i) => i,
            None => {
                skipped += image.triplets.len();
                continue;
            }
        };
        for t in &image.triplets {
            if t.verb_id >= vocab.num_verbs() {
                return Err(EvalError::UnknownCategory {
                    image_id: image.image_id.clone(),
                    object_id: t.object_id,
                    verb_id: t.verb_id,
                });
            }
            if scenario == Scenario::S2 && vocab.is_no_object_verb(t.verb_id) {
                skipped += 1;
                continue;
            }
            preds.entry(t.verb_id).or_default().push(RankedPrediction {
                image_index: img_idx,
                triplet: *t,
                input_order: order,
            });
            order += 1;
        }
    }

    let mut per_category = Vec::with_capacity(actions.len());
    for &action in &actions {
        let mode = if vocab.is_no_object_verb(action) {
            match cfg.no_object_rule {
                NoObjectRule::IgnoreBox => PairIoU::HumanOnly,
                NoObjectRule::RequireEmptyBox => PairIoU::HumanOnlyEmptyObject,
            }
        } else {
            PairIoU::Both
        };
        let gt_pool = gt.get(&action).cloned().unwrap_or_default();
        let mut ranked = preds.remove(&action).unwrap_or_default();
        let (n_gt, ap) = category_ap(&mut ranked, &gt_pool, cfg.iou_threshold, mode);
        per_category.push(CategoryAp {
            verb: action,
            object: None,
            rare: false,
            n_gt,
            ap,
        });
    }

    let role = mean(per_category.iter().filter_map(|c| c.ap));
    Ok(APResult {
        benchmark: vocab.benchmark(),
        setting: cfg.setting,
        scenario: Some(scenario),
        full_map: role,
        rare_map: None,
        nonrare_map: None,
        role_ap: role,
        skipped_predictions: skipped,
        per_category,
    })
}
