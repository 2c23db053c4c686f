//! Core HOI detection types: triplets and per-image annotations.

use crate::geometry::BBox;
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};

/// One detected or annotated human-object interaction.
///
/// `object_id` / `verb_id` index into a [`Vocabulary`] and may equal the
/// vocabulary's sentinel indices on predictions; ground truth never carries
/// sentinels except the object slot of vcoco body-motion actions, where the
/// object box is a copy of the human box and ignored by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HOITriplet {
    pub human_box: BBox,
    pub object_box: BBox,
    pub object_id: usize,
    pub verb_id: usize,
    pub score: f64,
}

impl HOITriplet {
    pub fn new(
        human_box: BBox,
        object_box: BBox,
        object_id: usize,
        verb_id: usize,
        score: f64,
    ) -> Self {
        Self {
            human_box,
            object_box,
            object_id,
            verb_id,
            score,
        }
    }

    /// Ground-truth constructor: score pinned to 1.
    pub fn gt(human_box: BBox, object_box: BBox, object_id: usize, verb_id: usize) -> Self {
        Self::new(human_box, object_box, object_id, verb_id, 1.0)
    }

    pub fn has_sentinel(&self, vocab: &Vocabulary) -> bool {
        self.object_id >= vocab.num_objects() || self.verb_id >= vocab.num_verbs()
    }
}

/// Ground-truth annotation for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_id: String,
    /// Path (or opaque handle) to the rendered image, when one exists.
    pub image_ref: Option<String>,
    pub width: u32,
    pub height: u32,
    pub gt_triplets: Vec<HOITriplet>,
}

impl ImageAnnotation {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            image_ref: None,
            width,
            height,
            gt_triplets: Vec::new(),
        }
    }
}
