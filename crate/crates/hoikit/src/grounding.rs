//! Rendering predicted triplets into natural-language sentences.
//!
//! Every predicted human class is rendered as "A person"; verb and object
//! names come verbatim from the vocabulary (no inflection, no article
//! correction), so sentences are deterministic even when unidiomatic.
//! Predictions matched to a ground-truth triplet become positive sentences,
//! the remaining non-sentinel predictions become negative sentences.

use crate::matching::MatchResult;
use crate::types::HOITriplet;
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Prompt structure used when rendering a triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    /// "A person <verb> a <object>"
    #[default]
    Full,
    /// "<verb>"
    Verb,
    /// "A person <object>"
    Object,
}

impl std::str::FromStr for PromptVariant {
    type Err = GroundingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(PromptVariant::Full),
            "verb" => Ok(PromptVariant::Verb),
            "object" => Ok(PromptVariant::Object),
            other => Err(GroundingError::UnknownVariant(other.to_string())),
        }
    }
}

/// A rendered sentence plus where it came from.
///
/// `weight` is the selection weight of the originating prediction
/// (its decoded confidence, `p_obj * p_verb`); the loss module uses it
/// as the differentiable path from ITM scores back to the classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedSentence {
    pub text: String,
    pub polarity: Polarity,
    pub source_index: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroundingError {
    #[error("triplet carries a sentinel label (object {object_id}, verb {verb_id}); exclude it before grounding")]
    SentinelLabel { object_id: usize, verb_id: usize },
    #[error("label out of vocabulary range (object {object_id}, verb {verb_id})")]
    LabelOutOfRange { object_id: usize, verb_id: usize },
    #[error("match result covers {match_len} predictions but {pred_len} were given")]
    InconsistentMatch { match_len: usize, pred_len: usize },
    #[error("unknown prompt variant `{0}` (expected full|verb|object)")]
    UnknownVariant(String),
}

/// Render one triplet. Sentinel labels are rejected; callers partition
/// predictions first so sentinels never reach the template.
pub fn ground_triplet(
    triplet: &HOITriplet,
    vocab: &Vocabulary,
    variant: PromptVariant,
) -> Result<String, GroundingError> {
    if triplet.object_id == vocab.no_object_index()
        || triplet.verb_id == vocab.no_interaction_index()
    {
        return Err(GroundingError::SentinelLabel {
            object_id: triplet.object_id,
            verb_id: triplet.verb_id,
        });
    }
    let object = vocab
        .object_name(triplet.object_id)
        .ok_or(GroundingError::LabelOutOfRange {
            object_id: triplet.object_id,
            verb_id: triplet.verb_id,
        })?;
    let verb = vocab
        .verb_name(triplet.verb_id)
        .ok_or(GroundingError::LabelOutOfRange {
            object_id: triplet.object_id,
            verb_id: triplet.verb_id,
        })?;
    Ok(match variant {
        PromptVariant::Full => format!("A person {verb} a {object}"),
        PromptVariant::Verb => verb.to_string(),
        PromptVariant::Object => format!("A person {object}"),
    })
}

/// Split predictions into positive and negative sentence sets.
///
/// Predictions whose object or verb label is the sentinel are dropped
/// entirely. Among the rest, membership is decided purely by the match:
/// assigned to any ground truth -> positive, unassigned -> negative.
/// Sentences always use the predicted class names, in prediction-index
/// order within each set.
pub fn partition_and_ground(
    predictions: &[HOITriplet],
    matches: &MatchResult,
    vocab: &Vocabulary,
    variant: PromptVariant,
) -> Result<(Vec<GroundedSentence>, Vec<GroundedSentence>), GroundingError> {
    let covered = matches.pairs.len() + matches.unmatched_predictions.len();
    if covered != predictions.len() {
        return Err(GroundingError::InconsistentMatch {
            match_len: covered,
            pred_len: predictions.len(),
        });
    }

    let mut matched = vec![false; predictions.len()];
    for &(pred, _gt) in &matches.pairs {
        if pred >= predictions.len() {
            return Err(GroundingError::InconsistentMatch {
                match_len: covered,
                pred_len: predictions.len(),
            });
        }
        matched[pred] = true;
    }

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (idx, pred) in predictions.iter().enumerate() {
        if pred.object_id == vocab.no_object_index()
            || pred.verb_id == vocab.no_interaction_index()
        {
            continue;
        }
        let text = ground_triplet(pred, vocab, variant)?;
        let sentence = GroundedSentence {
            text,
            polarity: if matched[idx] {
                Polarity::Positive
            } else {
                Polarity::Negative
            },
            source_index: idx,
            weight: pred.score.clamp(0.0, 1.0),
        };
        if matched[idx] {
            positives.push(sentence);
        } else {
            negatives.push(sentence);
        }
    }
    Ok((positives, negatives))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::matching::MatchResult;

    fn vocab() -> Vocabulary {
        Vocabulary::hico()
    }

    fn triplet(vocab: &Vocabulary, verb: &str, object: &str) -> HOITriplet {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        HOITriplet::new(
            b,
            b,
            vocab.object_id(object).unwrap(),
            vocab.verb_id(verb).unwrap(),
            0.9,
        )
    }

    #[test]
    fn full_variant_reference_sentence() {
        let v = vocab();
        let t = triplet(&v, "hold", "tennis racket");
        assert_eq!(
            ground_triplet(&t, &v, PromptVariant::Full).unwrap(),
            "A person hold a tennis racket"
        );
    }

    #[test]
    fn object_variant_reference_sentence() {
        let v = vocab();
        let t = triplet(&v, "hold", "tennis racket");
        assert_eq!(
            ground_triplet(&t, &v, PromptVariant::Object).unwrap(),
            "A person tennis racket"
        );
    }

    #[test]
    fn verb_variant_is_verb_alone() {
        let v = vocab();
        let t = triplet(&v, "ride", "bicycle");
        assert_eq!(ground_triplet(&t, &v, PromptVariant::Verb).unwrap(), "ride");
    }

    #[test]
    fn full_variant_template_application() {
        let v = Vocabulary::synthetic(&["bike"], &["ride"], &[]).unwrap();
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let t = HOITriplet::new(b, b, 0, 0, 1.0);
        assert_eq!(
            ground_triplet(&t, &v, PromptVariant::Full).unwrap(),
            "A person ride a bike"
        );
    }

    #[test]
    fn sentinel_labels_rejected() {
        let v = vocab();
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let t = HOITriplet::new(b, b, v.no_object_index(), 0, 0.5);
        assert!(matches!(
            ground_triplet(&t, &v, PromptVariant::Full),
            Err(GroundingError::SentinelLabel { .. })
        ));
    }

    #[test]
    fn partition_drops_sentinels_and_splits_by_match() {
        let v = vocab();
        let mut p1 = triplet(&v, "hold", "tennis racket");
        p1.score = 0.8;
        let mut p_sentinel = triplet(&v, "ride", "bicycle");
        p_sentinel.verb_id = v.no_interaction_index();
        let p2 = triplet(&v, "ride", "horse");

        let m = MatchResult {
            pairs: vec![(0, 0), (2, 1)],
            unmatched_predictions: vec![1],
        };
        let (pos, neg) =
            partition_and_ground(&[p1, p_sentinel, p2], &m, &v, PromptVariant::Full).unwrap();
        assert_eq!(pos.len(), 2);
        assert!(neg.is_empty());
        assert_eq!(pos[0].source_index, 0);
        assert_eq!(pos[0].text, "A person hold a tennis racket");
        assert!((pos[0].weight - 0.8).abs() < 1e-15);
        assert_eq!(pos[1].source_index, 2);
        assert_eq!(pos[1].text, "A person ride a horse");
    }

    #[test]
    fn empty_input_yields_empty_sets() {
        let v = vocab();
        let m = MatchResult::default();
        let (pos, neg) = partition_and_ground(&[], &m, &v, PromptVariant::Full).unwrap();
        assert!(pos.is_empty());
        assert!(neg.is_empty());
    }

    #[test]
    fn unmatched_predictions_become_negatives() {
        let v = vocab();
        let preds = [triplet(&v, "hold", "cup"), triplet(&v, "ride", "horse")];
        let m = MatchResult {
            pairs: vec![],
            unmatched_predictions: vec![0, 1],
        };
        let (pos, neg) = partition_and_ground(&preds, &m, &v, PromptVariant::Full).unwrap();
        assert!(pos.is_empty());
        assert_eq!(neg.len(), 2);
        assert!(neg.iter().all(|s| s.polarity == Polarity::Negative));
    }

    #[test]
    fn inconsistent_match_is_rejected() {
        let v = vocab();
        let preds = [triplet(&v, "hold", "cup")];
        let m = MatchResult {
            pairs: vec![],
            unmatched_predictions: vec![],
        };
        assert!(matches!(
            partition_and_ground(&preds, &m, &v, PromptVariant::Full),
            Err(GroundingError::InconsistentMatch { .. })
        ));
    }
}
