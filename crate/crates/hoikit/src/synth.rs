//! Deterministic shape-world dataset generator.
//!
//! Each image shows one person glyph (head + torso in a fixed color) and
//! one or two colored shapes. Verbs are spatial relations: boxes that
//! overlap read as "hold", a person directly above a touching-distance
//! object reads as "ride", horizontally aligned disjoint boxes read as
//! "look at". Ground truth comes from the same relation classifier the
//! placer satisfies, so annotations are consistent with the rendering by
//! construction.
//!
//! Box corners snap to the pixel grid and the image size is a power of
//! two, so normalized coordinates are exact dyadics and every save/load
//! round trip is bit-exact. One (verb, object) combination is rare: it
//! appears in exactly `floor(rare_rate * train_count)` training images
//! (under 5% at the defaults); test images draw all combinations
//! uniformly so the rare category stays measurable.

use crate::data::{DatasetManifest, Provenance};
use crate::geometry::BBox;
use crate::types::{HOITriplet, ImageAnnotation};
use crate::vocab::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeObject {
    pub name: String,
    pub shape: Shape,
    pub color: [u8; 3],
}

/// Spatial relation a verb renders as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Person and object boxes overlap.
    Overlap,
    /// Person directly above the object, touching distance.
    Above,
    /// Horizontally aligned, clearly separated.
    AlignedDisjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationVerb {
    pub name: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub image_size: u32,
    pub objects: Vec<ShapeObject>,
    pub verbs: Vec<RelationVerb>,
    /// (verb index, object index) of the rare combination.
    pub rare_pair: (usize, usize),
    pub rare_rate: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub triplets_per_image: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            objects: vec![
                ShapeObject {
                    name: "ball".into(),
                    shape: Shape::Circle,
                    color: [40, 120, 220],
                },
                ShapeObject {
                    name: "crate".into(),
                    shape: Shape::Square,
                    color: [60, 180, 90],
                },
                ShapeObject {
                    name: "cone".into(),
                    shape: Shape::Triangle,
                    color: [240, 190, 40],
                },
            ],
            verbs: vec![
                RelationVerb {
                    name: "hold".into(),
                    relation: Relation::Overlap,
                },
                RelationVerb {
                    name: "ride".into(),
                    relation: Relation::Above,
                },
                RelationVerb {
                    name: "look at".into(),
                    relation: Relation::AlignedDisjoint,
                },
            ],
            rare_pair: (2, 2),
            rare_rate: 0.04,
            train_count: 200,
            test_count: 50,
            triplets_per_image: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("unsatisfiable placement after {0} attempts")]
    Unsatisfiable(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("png encode: {0}")]
    Png(#[from] image::ImageError),
    #[error(transparent)]
    Vocab(#[from] crate::vocab::VocabError),
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.objects.is_empty() || self.verbs.is_empty() {
            return Err(SynthError::InvalidSpec(
                "need at least one object shape and one verb".into(),
            ));
        }
        if self.rare_pair.0 >= self.verbs.len() || self.rare_pair.1 >= self.objects.len() {
            return Err(SynthError::InvalidSpec(format!(
                "rare pair {:?} out of range",
                self.rare_pair
            )));
        }
        if !(0.0..0.5).contains(&self.rare_rate) {
            return Err(SynthError::InvalidSpec(format!(
                "rare rate must lie in [0, 0.5), got {}",
                self.rare_rate
            )));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(SynthError::InvalidSpec("split counts must be positive".into()));
        }
        if !(1..=2).contains(&self.triplets_per_image) {
            return Err(SynthError::InvalidSpec(
                "triplets per image must be 1 or 2".into(),
            ));
        }
        if self.image_size < 32 || !self.image_size.is_power_of_two() {
            return Err(SynthError::InvalidSpec(
                "image size must be a power of two >= 32".into(),
            ));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, SynthError> {
        let objects: Vec<&str> = self.objects.iter().map(|o| o.name.as_str()).collect();
        let verbs: Vec<&str> = self.verbs.iter().map(|v| v.name.as_str()).collect();
        Ok(Vocabulary::synthetic(
            &objects,
            &verbs,
            &[self.rare_pair],
        )?)
    }
}

/// Relation classifier shared by the placer and the annotation check.
/// Exactly one relation (or none) holds for a pair of boxes.
pub fn classify_relation(person: &BBox, object: &BBox) -> Option<Relation> {
    let [px1, py1, px2, py2] = person.corners();
    let [ox1, oy1, ox2, oy2] = object.corners();
    let iw = (px2.min(ox2) - px1.max(ox1)).max(0.0);
    let ih = (py2.min(oy2) - py1.max(oy1)).max(0.0);
    if iw > 0.0 && ih > 0.0 {
        return Some(Relation::Overlap);
    }
    let vertical_gap = oy1 - py2;
    if (person.cx - object.cx).abs() <= 0.08 && (0.0..=0.06).contains(&vertical_gap) {
        return Some(Relation::Above);
    }
    let horizontal_gap = if ox1 >= px2 { ox1 - px2 } else { px1 - ox2 };
    if (person.cy - object.cy).abs() <= 0.08 && horizontal_gap >= 0.06 {
        return Some(Relation::AlignedDisjoint);
    }
    None
}

/// One rendered image: interleaved 8-bit RGB rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub image_id: String,
    pub size: u32,
    pub rgb: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<RenderedImage>,
}

impl SyntheticDataset {
    pub fn image(&self, image_id: &str) -> Option<&RenderedImage> {
        self.images.iter().find(|i| i.image_id == image_id)
    }
}

const PERSON_COLOR: [u8; 3] = [200, 40, 70];
const BACKGROUND: [u8; 3] = [235, 235, 235];

/// Generate the dataset deterministically from the spec seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let vocab = spec.vocabulary()?;

    let n_combos = spec.verbs.len() * spec.objects.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // rare images are a fixed-size deterministic subset of the train split
    let n_rare = (spec.rare_rate * spec.train_count as f64).floor() as usize;
    let mut rare_flags = vec![false; spec.train_count];
    {
        let mut idx: Vec<usize> = (0..spec.train_count).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        for &i in idx.iter().take(n_rare) {
            rare_flags[i] = true;
        }
    }

    let mut images = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();

    for split in ["train", "test"] {
        let count = if split == "train" {
            spec.train_count
        } else {
            spec.test_count
        };
        for i in 0..count {
            let image_id = format!("{split}_{i:04}");
            let mut combos: Vec<(usize, usize)> = Vec::with_capacity(spec.triplets_per_image);
            for t in 0..spec.triplets_per_image {
                let combo = if split == "train" && t == 0 && rare_flags[i] {
                    spec.rare_pair
                } else {
                    // uniform over non-rare combos in train, all combos in
                    // test; multi-triplet images need distinct relations or
                    // the placement is unsatisfiable
                    loop {
                        let c = rng.gen_range(0..n_combos);
                        let pair = (c / spec.objects.len(), c % spec.objects.len());
                        if split == "train" && pair == spec.rare_pair {
                            continue;
                        }
                        if combos.iter().any(|&(v, _)| v == pair.0) {
                            continue;
                        }
                        break pair;
                    }
                };
                combos.push(combo);
            }
            let (ann, rendered) = place_and_render(spec, &vocab, &image_id, &combos, &mut rng)?;
            images.push(rendered);
            if split == "train" {
                train.push(ann);
            } else {
                test.push(ann);
            }
        }
    }

    Ok(SyntheticDataset {
        manifest: DatasetManifest {
            name: "shape-world".into(),
            vocabulary: vocab,
            train,
            test,
            provenance: Provenance::Synthetic,
            seed: Some(spec.seed),
        },
        images,
    })
}

fn snap(v: f64, size: u32) -> f64 {
    (v * size as f64).round().clamp(0.0, size as f64) / size as f64
}

fn snapped_box(x1: f64, y1: f64, x2: f64, y2: f64, size: u32) -> BBox {
    BBox::from_corners(snap(x1, size), snap(y1, size), snap(x2, size), snap(y2, size))
}

fn place_and_render(
    spec: &SyntheticSpec,
    vocab: &Vocabulary,
    image_id: &str,
    combos: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Result<(ImageAnnotation, RenderedImage), SynthError> {
    const MAX_ATTEMPTS: usize = 5000;
    let size = spec.image_size;

    'attempt: for _ in 0..MAX_ATTEMPTS {
        // person in the middle band
        let pw = rng.gen_range(0.24..0.32);
        let ph = rng.gen_range(0.36..0.46);
        let pcx = rng.gen_range(0.28..0.72);
        let pcy = rng.gen_range(0.32..0.52);
        let person = snapped_box(
            pcx - pw / 2.0,
            pcy - ph / 2.0,
            pcx + pw / 2.0,
            pcy + ph / 2.0,
            size,
        );
        let [px1, py1, px2, py2] = person.corners();
        if px1 < 0.02 || py1 < 0.02 || px2 > 0.98 || py2 > 0.98 {
            continue;
        }

        let mut objects: Vec<(BBox, usize, usize)> = Vec::new();
        for &(verb_idx, object_idx) in combos {
            let relation = spec.verbs[verb_idx].relation;
            let mut placed = None;
            for _ in 0..200 {
                let ow = rng.gen_range(0.20..0.28);
                let oh = rng.gen_range(0.20..0.28);
                let (ocx, ocy) = match relation {
                    Relation::Overlap => (
                        person.cx + rng.gen_range(-0.6..0.6) * pw / 2.0,
                        person.cy + rng.gen_range(-0.6..0.6) * ph / 2.0,
                    ),
                    Relation::Above => {
                        let gap = rng.gen_range(0.01..0.05);
                        (
                            person.cx + rng.gen_range(-0.05..0.05),
                            py2 + gap + oh / 2.0,
                        )
                    }
                    Relation::AlignedDisjoint => {
                        let gap = rng.gen_range(0.08..0.25);
                        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        let x = if side > 0.0 {
                            px2 + gap + ow / 2.0
                        } else {
                            px1 - gap - ow / 2.0
                        };
                        (x, person.cy + rng.gen_range(-0.05..0.05))
                    }
                };
                let candidate = snapped_box(
                    ocx - ow / 2.0,
                    ocy - oh / 2.0,
                    ocx + ow / 2.0,
                    ocy + oh / 2.0,
                    size,
                );
                let [cx1, cy1, cx2, cy2] = candidate.corners();
                if cx1 < 0.02 || cy1 < 0.02 || cx2 > 0.98 || cy2 > 0.98 {
                    continue;
                }
                if candidate.w <= 0.0 || candidate.h <= 0.0 {
                    continue;
                }
                if classify_relation(&person, &candidate) != Some(relation) {
                    continue;
                }
                // objects must not touch each other
                let clear = objects.iter().all(|(other, _, _)| {
                    crate::geometry::box_iou(other, &candidate) == 0.0
                });
                if !clear {
                    continue;
                }
                placed = Some(candidate);
                break;
            }
            match placed {
                Some(b) => objects.push((b, verb_idx, object_idx)),
                None => continue 'attempt,
            }
        }

        // final consistency check across all placed objects
        for (b, verb_idx, _) in &objects {
            if classify_relation(&person, b) != Some(spec.verbs[*verb_idx].relation) {
                continue 'attempt;
            }
        }

        let mut ann = ImageAnnotation::new(image_id, size, size);
        for &(b, verb_idx, object_idx) in &objects {
            ann.gt_triplets
                .push(HOITriplet::gt(person, b, object_idx, verb_idx));
        }
        debug_assert!(ann.gt_triplets.iter().all(|t| !t.has_sentinel(vocab)));

        let rgb = render_scene(
            size,
            &person,
            &objects
                .iter()
                .map(|&(b, _, o)| (b, spec.objects[o].shape, spec.objects[o].color))
                .collect::<Vec<_>>(),
        );
        return Ok((
            ann,
            RenderedImage {
                image_id: image_id.to_string(),
                size,
                rgb,
            },
        ));
    }
    Err(SynthError::Unsatisfiable(MAX_ATTEMPTS))
}

/// Rasterize one scene: person glyph plus colored shapes, hard edges.
pub fn render_scene(size: u32, person: &BBox, objects: &[(BBox, Shape, [u8; 3])]) -> Vec<u8> {
    let n = size as usize;
    let mut rgb = vec![0u8; n * n * 3];
    for px in rgb.chunks_exact_mut(3) {
        px.copy_from_slice(&BACKGROUND);
    }

    for (b, shape, color) in objects {
        fill_shape(&mut rgb, n, b, *shape, *color);
    }
    // person glyph: head circle over a torso rectangle
    let [x1, y1, x2, y2] = person.corners();
    let w = x2 - x1;
    let h = y2 - y1;
    let head_r = 0.5 * w.min(0.45 * h) * 0.55;
    let head_c = (0.5 * (x1 + x2), y1 + head_r);
    fill_circle(&mut rgb, n, head_c, head_r, PERSON_COLOR);
    let torso = BBox::from_corners(
        x1 + 0.22 * w,
        y1 + 2.0 * head_r,
        x2 - 0.22 * w,
        y2,
    );
    fill_shape(&mut rgb, n, &torso, Shape::Square, PERSON_COLOR);
    rgb
}

fn fill_shape(rgb: &mut [u8], n: usize, b: &BBox, shape: Shape, color: [u8; 3]) {
    match shape {
        Shape::Square => fill_rect(rgb, n, b, color),
        Shape::Circle => {
            let r = 0.5 * b.w.min(b.h);
            fill_circle(rgb, n, (b.cx, b.cy), r, color);
        }
        Shape::Triangle => fill_triangle(rgb, n, b, color),
    }
}

fn put(rgb: &mut [u8], n: usize, x: usize, y: usize, color: [u8; 3]) {
    let idx = (y * n + x) * 3;
    rgb[idx..idx + 3].copy_from_slice(&color);
}

fn pixel_range(a: f64, b: f64, n: usize) -> (usize, usize) {
    let lo = (a * n as f64).floor().max(0.0) as usize;
    let hi = (b * n as f64).ceil().min(n as f64) as usize;
    (lo, hi)
}

fn fill_rect(rgb: &mut [u8], n: usize, b: &BBox, color: [u8; 3]) {
    let [x1, y1, x2, y2] = b.corners();
    let (xl, xh) = pixel_range(x1, x2, n);
    let (yl, yh) = pixel_range(y1, y2, n);
    for y in yl..yh {
        for x in xl..xh {
            let cx = (x as f64 + 0.5) / n as f64;
            let cy = (y as f64 + 0.5) / n as f64;
            if cx >= x1 && cx <= x2 && cy >= y1 && cy <= y2 {
                put(rgb, n, x, y, color);
            }
        }
    }
}

fn fill_circle(rgb: &mut [u8], n: usize, center: (f64, f64), r: f64, color: [u8; 3]) {
    let (xl, xh) = pixel_range(center.0 - r, center.0 + r, n);
    let (yl, yh) = pixel_range(center.1 - r, center.1 + r, n);
    for y in yl..yh {
        for x in xl..xh {
            let cx = (x as f64 + 0.5) / n as f64 - center.0;
            let cy = (y as f64 + 0.5) / n as f64 - center.1;
            if cx * cx + cy * cy <= r * r {
                put(rgb, n, x, y, color);
            }
        }
    }
}

fn fill_triangle(rgb: &mut [u8], n: usize, b: &BBox, color: [u8; 3]) {
    // upward triangle inscribed in the box
    let [x1, y1, x2, y2] = b.corners();
    let (xl, xh) = pixel_range(x1, x2, n);
    let (yl, yh) = pixel_range(y1, y2, n);
    let h = y2 - y1;
    if h <= 0.0 {
        return;
    }
    for y in yl..yh {
        for x in xl..xh {
            let cx = (x as f64 + 0.5) / n as f64;
            let cy = (y as f64 + 0.5) / n as f64;
            if cy < y1 || cy > y2 {
                continue;
            }
            // width grows linearly from apex (top) to base (bottom)
            let frac = (cy - y1) / h;
            let half = 0.5 * (x2 - x1) * frac;
            let mid = 0.5 * (x1 + x2);
            if cx >= mid - half && cx <= mid + half {
                put(rgb, n, x, y, color);
            }
        }
    }
}

/// Write PNGs plus a native-format manifest into `dir`; returns the
/// manifest path. Image refs resolve to the written files.
pub fn write_dataset(dataset: &mut SyntheticDataset, dir: &Path) -> Result<PathBuf, SynthError> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|source| SynthError::Io {
        path: images_dir.clone(),
        source,
    })?;
    for img in &dataset.images {
        let path = images_dir.join(format!("{}.png", img.image_id));
        let buffer =
            image::RgbImage::from_raw(img.size, img.size, img.rgb.clone()).expect("pixel buffer");
        buffer.save(&path)?;
    }
    for ann in dataset
        .manifest
        .train
        .iter_mut()
        .chain(dataset.manifest.test.iter_mut())
    {
        ann.image_ref = Some(
            images_dir
                .join(format!("{}.png", ann.image_id))
                .display()
                .to_string(),
        );
    }
    let manifest_path = dir.join("manifest.json");
    crate::data::save_native(&dataset.manifest, &manifest_path).map_err(|e| {
        SynthError::InvalidSpec(format!("manifest write failed: {e}"))
    })?;
    Ok(manifest_path)
}

/// Decode a PNG written by [`write_dataset`] back into raw RGB.
pub fn load_image_rgb(path: &str) -> Result<(u32, Vec<u8>), SynthError> {
    let img = image::open(path)?.to_rgb8();
    Ok((img.width(), img.into_raw()))
}
