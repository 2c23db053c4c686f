//! Category vocabularies: object/verb name tables, HOI category lists with
//! rare flags, and the reserved no-object / no-interaction sentinel indices.
//!
//! The sentinels are represented as one extra trailing class index per name
//! table (`no_object_index == objects.len()`, `no_interaction_index ==
//! verbs.len()`), so classifiers can emit them directly as a logit.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Hico,
    Vcoco,
    Synthetic,
}

/// One HOI category: a (verb, object) pair plus its rare flag.
///
/// For vcoco-style vocabularies the category is the action alone and
/// `object` is `None` (role AP is computed per action).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoiCategory {
    pub verb: usize,
    pub object: Option<usize>,
    pub rare: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    benchmark: Benchmark,
    object_names: Vec<String>,
    verb_names: Vec<String>,
    hoi_categories: Vec<HoiCategory>,
    /// Verb indices that carry no object (vcoco body motions).
    no_object_verbs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("duplicate or empty name `{0}`")]
    BadName(String),
    #[error("unknown object name `{0}`")]
    UnknownObject(String),
    #[error("unknown verb name `{0}`")]
    UnknownVerb(String),
    #[error("category index {index} out of range for {kind} (len {len})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },
}

impl Vocabulary {
    pub fn new(
        benchmark: Benchmark,
        object_names: Vec<String>,
        verb_names: Vec<String>,
        hoi_categories: Vec<HoiCategory>,
        no_object_verbs: Vec<usize>,
    ) -> Result<Self, VocabError> {
        check_names(&object_names)?;
        check_names(&verb_names)?;
        for cat in &hoi_categories {
            if cat.verb >= verb_names.len() {
                return Err(VocabError::IndexOutOfRange {
                    kind: "verbs",
                    index: cat.verb,
                    len: verb_names.len(),
                });
            }
            if let Some(o) = cat.object {
                if o >= object_names.len() {
                    return Err(VocabError::IndexOutOfRange {
                        kind: "objects",
                        index: o,
                        len: object_names.len(),
                    });
                }
            }
        }
        Ok(Self {
            benchmark,
            object_names,
            verb_names,
            hoi_categories,
            no_object_verbs,
        })
    }

    pub fn benchmark(&self) -> Benchmark {
        self.benchmark
    }

    pub fn num_objects(&self) -> usize {
        self.object_names.len()
    }

    pub fn num_verbs(&self) -> usize {
        self.verb_names.len()
    }

    /// Sentinel object label: one past the real object range.
    pub fn no_object_index(&self) -> usize {
        self.object_names.len()
    }

    /// Sentinel verb label: one past the real verb range.
    pub fn no_interaction_index(&self) -> usize {
        self.verb_names.len()
    }

    pub fn object_name(&self, id: usize) -> Option<&str> {
        self.object_names.get(id).map(String::as_str)
    }

    pub fn verb_name(&self, id: usize) -> Option<&str> {
        self.verb_names.get(id).map(String::as_str)
    }

    pub fn object_names(&self) -> &[String] {
        &self.object_names
    }

    pub fn verb_names(&self) -> &[String] {
        &self.verb_names
    }

    /// Index lookup; `_` and space are treated as the same separator.
    pub fn object_id(&self, name: &str) -> Option<usize> {
        let needle = normalize(name);
        self.object_names.iter().position(|n| normalize(n) == needle)
    }

    pub fn verb_id(&self, name: &str) -> Option<usize> {
        let needle = normalize(name);
        self.verb_names.iter().position(|n| normalize(n) == needle)
    }

    pub fn hoi_categories(&self) -> &[HoiCategory] {
        &self.hoi_categories
    }

    /// Replace the HOI category table (e.g. with one derived from data).
    pub fn with_hoi_categories(mut self, categories: Vec<HoiCategory>) -> Result<Self, VocabError> {
        Self::new(
            self.benchmark,
            std::mem::take(&mut self.object_names),
            std::mem::take(&mut self.verb_names),
            categories,
            std::mem::take(&mut self.no_object_verbs),
        )
    }

    /// Whether a verb carries no object (vcoco body motions).
    pub fn is_no_object_verb(&self, verb: usize) -> bool {
        self.no_object_verbs.contains(&verb)
    }

    pub fn no_object_verbs(&self) -> &[usize] {
        &self.no_object_verbs
    }

    /// The HICO-DET preset: the benchmark's 80 object and 117 verb names.
    ///
    /// The 600-entry HOI category table shipped here is a deterministic
    /// structural stand-in with the documented counts (600 categories, 138
    /// rare): the official pairing is distributed with the dataset, not
    /// with this crate. For real HICO-DET evaluation derive the table from
    /// the training annotations via [`derive_hoi_categories`] or install
    /// the official list with [`Vocabulary::with_hoi_categories`].
    pub fn hico() -> Self {
        let objects: Vec<String> = HICO_OBJECTS.iter().map(|s| s.to_string()).collect();
        let verbs: Vec<String> = HICO_VERBS.iter().map(|s| s.to_string()).collect();
        let no_interaction = HICO_VERBS
            .iter()
            .position(|v| *v == "no interaction")
            .expect("preset verb table");

        let mut categories = Vec::with_capacity(600);
        for obj in 0..objects.len() {
            categories.push(HoiCategory {
                verb: no_interaction,
                object: Some(obj),
                rare: false,
            });
        }
        // 520 more pairs, 6 or 7 verbs per object, stride coprime to 116
        // so verbs within one object never repeat.
        let real_verbs: Vec<usize> = (0..verbs.len()).filter(|v| *v != no_interaction).collect();
        for obj in 0..objects.len() {
            let per_object = if obj < 40 { 7 } else { 6 };
            for j in 0..per_object {
                let verb = real_verbs[(obj * 17 + j * 33) % real_verbs.len()];
                categories.push(HoiCategory {
                    verb,
                    object: Some(obj),
                    rare: false,
                });
            }
        }
        debug_assert_eq!(categories.len(), 600);
        let n = categories.len();
        for cat in categories[n - 138..].iter_mut() {
            cat.rare = true;
        }

        Self {
            benchmark: Benchmark::Hico,
            object_names: objects,
            verb_names: verbs,
            hoi_categories: categories,
            no_object_verbs: Vec::new(),
        }
    }

    /// The V-COCO preset: 29 actions (4 body motions without objects) over
    /// the same 80 object classes as HICO-DET. Categories are per-action;
    /// there is no rare split.
    pub fn vcoco() -> Self {
        let objects: Vec<String> = HICO_OBJECTS.iter().map(|s| s.to_string()).collect();
        let verbs: Vec<String> = VCOCO_ACTIONS.iter().map(|s| s.to_string()).collect();
        let no_object_verbs: Vec<usize> = VCOCO_BODY_MOTIONS
            .iter()
            .map(|m| verbs.iter().position(|v| v == m).expect("preset action"))
            .collect();
        let categories = (0..verbs.len())
            .map(|verb| HoiCategory {
                verb,
                object: None,
                rare: false,
            })
            .collect();
        Self {
            benchmark: Benchmark::Vcoco,
            object_names: objects,
            verb_names: verbs,
            hoi_categories: categories,
            no_object_verbs,
        }
    }

    /// Small vocabulary for synthetic shape-world datasets: every
    /// (verb, object) combination is a category; `rare_pairs` marks the
    /// low-frequency ones.
    pub fn synthetic(
        object_names: &[&str],
        verb_names: &[&str],
        rare_pairs: &[(usize, usize)],
    ) -> Result<Self, VocabError> {
        let objects: Vec<String> = object_names.iter().map(|s| s.to_string()).collect();
        let verbs: Vec<String> = verb_names.iter().map(|s| s.to_string()).collect();
        let mut categories = Vec::new();
        for verb in 0..verbs.len() {
            for object in 0..objects.len() {
                categories.push(HoiCategory {
                    verb,
                    object: Some(object),
                    rare: rare_pairs.contains(&(verb, object)),
                });
            }
        }
        Self::new(Benchmark::Synthetic, objects, verbs, categories, Vec::new())
    }
}

fn normalize(name: &str) -> String {
    name.trim().replace('_', " ").to_ascii_lowercase()
}

fn check_names(names: &[String]) -> Result<(), VocabError> {
    let mut seen = BTreeMap::new();
    for n in names {
        if n.trim().is_empty() {
            return Err(VocabError::BadName(n.clone()));
        }
        if seen.insert(normalize(n), ()).is_some() {
            return Err(VocabError::BadName(n.clone()));
        }
    }
    Ok(())
}

/// Count (verb, object) instances in annotations and flag categories with
/// fewer than `rare_threshold` training instances as rare. This mirrors how
/// benchmark rare splits are defined (HICO-DET uses threshold 10).
pub fn derive_hoi_categories(
    annotations: &[crate::types::ImageAnnotation],
    vocab: &Vocabulary,
    rare_threshold: usize,
) -> Vec<HoiCategory> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for ann in annotations {
        for t in &ann.gt_triplets {
            if t.verb_id < vocab.num_verbs() && t.object_id < vocab.num_objects() {
                *counts.entry((t.verb_id, t.object_id)).or_insert(0) += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|((verb, object), n)| HoiCategory {
            verb,
            object: Some(object),
            rare: n < rare_threshold,
        })
        .collect()
}

/// HICO-DET object classes (the COCO 80, benchmark naming).
pub const HICO_OBJECTS: [&str; 80] = [
    "airplane",
    "apple",
    "backpack",
    "banana",
    "baseball bat",
    "baseball glove",
    "bear",
    "bed",
    "bench",
    "bicycle",
    "bird",
    "boat",
    "book",
    "bottle",
    "bowl",
    "broccoli",
    "bus",
    "cake",
    "car",
    "carrot",
    "cat",
    "cell phone",
    "chair",
    "clock",
    "couch",
    "cow",
    "cup",
    "dining table",
    "dog",
    "donut",
    "elephant",
    "fire hydrant",
    "fork",
    "frisbee",
    "giraffe",
    "hair drier",
    "handbag",
    "horse",
    "hot dog",
    "keyboard",
    "kite",
    "knife",
    "laptop",
    "microwave",
    "motorcycle",
    "mouse",
    "orange",
    "oven",
    "parking meter",
    "person",
    "pizza",
    "potted plant",
    "refrigerator",
    "remote",
    "sandwich",
    "scissors",
    "sheep",
    "sink",
    "skateboard",
    "skis",
    "snowboard",
    "spoon",
    "sports ball",
    "stop sign",
    "suitcase",
    "surfboard",
    "teddy bear",
    "tennis racket",
    "tie",
    "toaster",
    "toilet",
    "toothbrush",
    "traffic light",
    "train",
    "truck",
    "tv",
    "umbrella",
    "vase",
    "wine glass",
    "zebra",
];

/// HICO-DET verb classes (117, including the annotated `no interaction`).
pub const HICO_VERBS: [&str; 117] = [
    "adjust",
    "assemble",
    "block",
    "blow",
    "board",
    "break",
    "brush with",
    "buy",
    "carry",
    "catch",
    "chase",
    "check",
    "clean",
    "control",
    "cook",
    "cut",
    "cut with",
    "direct",
    "drag",
    "dribble",
    "drink with",
    "drive",
    "dry",
    "eat",
    "eat at",
    "exit",
    "feed",
    "fill",
    "flip",
    "flush",
    "fly",
    "greet",
    "grind",
    "groom",
    "herd",
    "hit",
    "hold",
    "hop on",
    "hose",
    "hug",
    "hunt",
    "inspect",
    "install",
    "jump",
    "kick",
    "kiss",
    "lasso",
    "launch",
    "lick",
    "lie on",
    "lift",
    "light",
    "load",
    "lose",
    "make",
    "milk",
    "move",
    "no interaction",
    "open",
    "operate",
    "pack",
    "paint",
    "park",
    "pay",
    "peel",
    "pet",
    "pick",
    "pick up",
    "point",
    "pour",
    "pull",
    "push",
    "race",
    "read",
    "release",
    "repair",
    "ride",
    "row",
    "run",
    "sail",
    "scratch",
    "serve",
    "set",
    "shear",
    "sign",
    "sip",
    "sit at",
    "sit on",
    "slide",
    "smell",
    "spin",
    "squeeze",
    "stab",
    "stand on",
    "stand under",
    "stick",
    "stir",
    "stop at",
    "straddle",
    "swing",
    "tag",
    "talk on",
    "teach",
    "text on",
    "throw",
    "tie",
    "toast",
    "train",
    "turn",
    "type on",
    "walk",
    "wash",
    "watch",
    "wave",
    "wear",
    "wield",
    "zip",
];

/// V-COCO action classes in Scenario-1 form (29, role-suffixed).
pub const VCOCO_ACTIONS: [&str; 29] = [
    "carry obj",
    "catch obj",
    "cut instr",
    "cut obj",
    "drink instr",
    "eat instr",
    "eat obj",
    "hit instr",
    "hit obj",
    "hold obj",
    "jump instr",
    "kick obj",
    "lay instr",
    "look obj",
    "point instr",
    "read obj",
    "ride instr",
    "run",
    "sit instr",
    "skateboard instr",
    "ski instr",
    "smile",
    "snowboard instr",
    "stand",
    "surf instr",
    "talk on phone instr",
    "throw obj",
    "walk",
    "work on computer instr",
];

/// The 4 V-COCO body motions (actions with no object role).
pub const VCOCO_BODY_MOTIONS: [&str; 4] = ["run", "smile", "stand", "walk"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hico_preset_counts() {
        let v = Vocabulary::hico();
        assert_eq!(v.num_objects(), 80);
        assert_eq!(v.num_verbs(), 117);
        assert_eq!(v.hoi_categories().len(), 600);
        assert_eq!(v.hoi_categories().iter().filter(|c| c.rare).count(), 138);
        assert_eq!(v.no_object_index(), 80);
        assert_eq!(v.no_interaction_index(), 117);
    }

    #[test]
    fn hico_pairs_are_unique() {
        let v = Vocabulary::hico();
        let mut seen = std::collections::BTreeSet::new();
        for c in v.hoi_categories() {
            assert!(seen.insert((c.verb, c.object)), "duplicate pair {c:?}");
        }
    }

    #[test]
    fn vcoco_preset_counts() {
        let v = Vocabulary::vcoco();
        assert_eq!(v.num_verbs(), 29);
        assert_eq!(v.no_object_verbs().len(), 4);
        assert_eq!(v.num_objects(), 80);
        assert_eq!(v.hoi_categories().len(), 29);
        let body: Vec<&str> = v
            .no_object_verbs()
            .iter()
            .map(|&i| v.verb_name(i).unwrap())
            .collect();
        assert_eq!(body, ["run", "smile", "stand", "walk"]);
    }

    #[test]
    fn name_lookup_normalizes_separators() {
        let v = Vocabulary::hico();
        assert_eq!(v.object_id("tennis_racket"), v.object_id("tennis racket"));
        assert!(v.object_id("tennis racket").is_some());
        assert_eq!(v.verb_id("talk_on"), v.verb_id("talk on"));
        assert!(v.object_id("unicycle").is_none());
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = Vocabulary::synthetic(&["ball", "Ball"], &["hold"], &[]);
        assert!(matches!(err, Err(VocabError::BadName(_))));
    }

    #[test]
    fn synthetic_vocab_categories() {
        let v = Vocabulary::synthetic(&["ball", "cup"], &["hold", "ride"], &[(1, 0)]).unwrap();
        assert_eq!(v.hoi_categories().len(), 4);
        let rare: Vec<_> = v.hoi_categories().iter().filter(|c| c.rare).collect();
        assert_eq!(rare.len(), 1);
        assert_eq!(rare[0].verb, 1);
        assert_eq!(rare[0].object, Some(0));
    }
}
