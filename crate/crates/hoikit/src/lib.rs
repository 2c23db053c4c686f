//! hoikit — a desk-scale human-object-interaction (HOI) detection toolkit.
//!
//! The pipeline: a query-based toy detector predicts HOI triplets
//! (human box, object box, object class, verb class), Hungarian matching
//! associates predictions with ground truth, matched/unmatched predictions
//! are rendered into positive/negative sentences, an image-text-matching
//! (ITM) scorer rates every sentence against the image, and a margin-based
//! contrastive loss distills those scores into the detector jointly with
//! the standard detection losses. Evaluation follows the HICO-DET and
//! V-COCO mAP protocols.
//!
//! Modules map onto pipeline stages:
//!
//! - [`geometry`]: box types, IoU / GIoU, format conversion
//! - [`vocab`]: category vocabularies with benchmark presets
//! - [`types`]: HOI triplets and image annotations
//! - [`grounding`]: triplet-to-sentence templates and pos/neg partitioning
//! - [`itm`]: scorer contract, deterministic mock oracle, remote adapter
//! - [`matching`]: Hungarian assignment with the HOI matching cost
//! - [`autodiff`]: small reverse-mode tape over 2-d f64 arrays
//! - [`losses`]: contrastive ITM loss, detection losses, totals
//! - [`detector`]: toy encoder/three-branch-decoder model + checkpoints
//! - [`eval`]: benchmark-protocol mAP (Default/Known-Object, role AP S1/S2)
//! - [`data`]: annotation ingestion (native/hico/vcoco JSON) and manifests
//! - [`synth`]: deterministic shape-world dataset generator
//! - [`train`]: training loop, ablation runners, score histograms

pub mod autodiff;
pub mod data;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod grounding;
pub mod itm;
pub mod losses;
pub mod matching;
pub mod synth;
pub mod train;
pub mod types;
pub mod vocab;

pub use geometry::{box_convert, box_giou, box_iou, BBox, BoxForm};
pub use grounding::{GroundedSentence, Polarity, PromptVariant};

pub use matching::{hungarian, match_predictions, CostMatrix, MatchResult, MatchWeights};
pub use types::{HOITriplet, ImageAnnotation};
pub use vocab::{Benchmark, HoiCategory, Vocabulary};
