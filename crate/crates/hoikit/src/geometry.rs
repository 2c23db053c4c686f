//! Axis-aligned box geometry shared by matching, losses, and evaluation.
//!
//! The canonical internal form is normalized center-size `(cx, cy, w, h)`;
//! corner form `(x1, y1, x2, y2)` is a view. Degenerate (zero-area) boxes
//! are legal inputs everywhere here and yield IoU 0; they are rejected at
//! annotation-ingestion time instead.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Axis-aligned bounding box in normalized center-size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Build from corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    /// Corner view `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Finite coordinates with nonnegative extent.
    pub fn is_valid(&self) -> bool {
        self.cx.is_finite()
            && self.cy.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w >= 0.0
            && self.h >= 0.0
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

/// Coordinate layout tags accepted by [`box_convert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxForm {
    CenterSize,
    Corners,
}

impl FromStr for BoxForm {
    type Err = UnknownBoxForm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "center-size" | "center_size" | "cxcywh" => Ok(BoxForm::CenterSize),
            "corners" | "xyxy" => Ok(BoxForm::Corners),
            other => Err(UnknownBoxForm(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown box form tag `{0}` (expected `center-size` or `corners`)")]
pub struct UnknownBoxForm(pub String);

/// Exact algebraic conversion between the two coordinate layouts.
pub fn box_convert(coords: [f64; 4], from: BoxForm, to: BoxForm) -> [f64; 4] {
    let b = match from {
        BoxForm::CenterSize => BBox::new(coords[0], coords[1], coords[2], coords[3]),
        BoxForm::Corners => BBox::from_corners(coords[0], coords[1], coords[2], coords[3]),
    };
    match to {
        BoxForm::CenterSize => b.as_array(),
        BoxForm::Corners => b.corners(),
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    iw * ih
}

/// Intersection over union; 0 when the union has zero area.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: IoU minus the empty fraction of the smallest enclosing
/// box. Range `(-1, 1]`; equals IoU when one box contains the other.
pub fn box_giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };

    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let hull_w = ax2.max(bx2) - ax1.min(bx1);
    let hull_h = ay2.max(by2) - ay1.min(by1);
    let hull = hull_w * hull_h;
    if hull <= 0.0 {
        return iou;
    }
    iou - (hull - union) / hull
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:.4}, {:.4}, {:.4}, {:.4})",
            self.cx, self.cy, self.w, self.h
        )
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rasterized Monte-Carlo estimate of IoU over the unit square.
    /// Independent of the analytic path; used as the geometry oracle.
    pub(crate) fn mc_iou(a: &BBox, b: &BBox, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [ax1, ay1, ax2, ay2] = a.corners();
        let [bx1, by1, bx2, by2] = b.corners();
        let inside = |x: f64, y: f64, x1: f64, y1: f64, x2: f64, y2: f64| {
            x >= x1 && x <= x2 && y >= y1 && y <= y2
        };
        let mut n_inter = 0usize;
        let mut n_union = 0usize;
        for _ in 0..samples {
            let x: f64 = rng.gen();
            let y: f64 = rng.gen();
            let in_a = inside(x, y, ax1, ay1, ax2, ay2);
            let in_b = inside(x, y, bx1, by1, bx2, by2);
            if in_a && in_b {
                n_inter += 1;
            }
            if in_a || in_b {
                n_union += 1;
            }
        }
        if n_union == 0 {
            0.0
        } else {
            n_inter as f64 / n_union as f64
        }
    }

    fn corners(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::from_corners(x1, y1, x2, y2)
    }

    #[test]
    fn iou_identical_boxes() {
        let a = corners(0.0, 0.0, 1.0, 1.0);
        assert_eq!(box_iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_boxes() {
        let a = corners(0.0, 0.0, 0.1, 0.1);
        let b = corners(0.5, 0.5, 0.6, 0.6);
        assert_eq!(box_iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_partial_overlap_exact() {
        // inter = 0.1*0.1 = 0.01, union = 0.04 + 0.04 - 0.01 = 0.07
        let a = corners(0.0, 0.0, 0.2, 0.2);
        let b = corners(0.1, 0.1, 0.3, 0.3);
        assert!((box_iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn iou_partial_overlap_matches_mc_oracle() {
        let a = corners(0.0, 0.0, 0.2, 0.2);
        let b = corners(0.1, 0.1, 0.3, 0.3);
        let est = mc_iou(&a, &b, 1_000_000, 42);
        assert!((box_iou(&a, &b) - est).abs() < 2e-3);
    }

    #[test]
    fn giou_identical_boxes() {
        let a = corners(0.2, 0.2, 0.7, 0.9);
        assert!((box_giou(&a, &a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn giou_disjoint_fixture() {
        // IoU = 0, union = 0.02, hull = 0.09 -> GIoU = -7/9
        let a = corners(0.0, 0.0, 0.1, 0.1);
        let b = corners(0.2, 0.2, 0.3, 0.3);
        assert!((box_giou(&a, &b) + 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn giou_never_exceeds_iou() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            assert!(box_giou(&a, &b) <= box_iou(&a, &b) + 1e-12);
        }
    }

    #[test]
    fn giou_equals_iou_under_containment() {
        let outer = corners(0.1, 0.1, 0.9, 0.9);
        let inner = corners(0.3, 0.3, 0.5, 0.6);
        assert!((box_giou(&outer, &inner) - box_iou(&outer, &inner)).abs() < 1e-12);
    }

    #[test]
    fn symmetry_and_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            assert_eq!(box_iou(&a, &b), box_iou(&b, &a));
            assert_eq!(box_giou(&a, &b), box_giou(&b, &a));
            let dx: f64 = rng.gen_range(-0.05..0.05);
            let dy: f64 = rng.gen_range(-0.05..0.05);
            let shift = |c: &BBox| BBox::new(c.cx + dx, c.cy + dy, c.w, c.h);
            assert!((box_iou(&shift(&a), &shift(&b)) - box_iou(&a, &b)).abs() < 1e-12);
            assert!((box_giou(&shift(&a), &shift(&b)) - box_giou(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_boxes_yield_zero_iou() {
        let point = BBox::new(0.5, 0.5, 0.0, 0.0);
        let other = corners(0.0, 0.0, 1.0, 1.0);
        assert_eq!(box_iou(&point, &other), 0.0);
        assert_eq!(box_iou(&point, &point), 0.0);
    }

    #[test]
    fn convert_full_image_box() {
        let out = box_convert([0.5, 0.5, 1.0, 1.0], BoxForm::CenterSize, BoxForm::Corners);
        assert_eq!(out, [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn convert_round_trip_identity() {
        let orig = [0.0, 0.0, 1.0, 1.0];
        let center = box_convert(orig, BoxForm::Corners, BoxForm::CenterSize);
        let back = box_convert(center, BoxForm::CenterSize, BoxForm::Corners);
        for (x, y) in orig.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn convert_direct_algebra_fixture() {
        let out = box_convert([0.3, 0.4, 0.2, 0.2], BoxForm::CenterSize, BoxForm::Corners);
        let expect = [0.2, 0.3, 0.4, 0.5];
        for (x, y) in out.iter().zip(expect.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_form_tag_is_rejected() {
        assert!("spherical".parse::<BoxForm>().is_err());
        assert_eq!("cxcywh".parse::<BoxForm>().unwrap(), BoxForm::CenterSize);
    }

    pub(crate) fn random_box(rng: &mut impl Rng) -> BBox {
        let w: f64 = rng.gen_range(0.01..0.5);
        let h: f64 = rng.gen_range(0.01..0.5);
        let cx: f64 = rng.gen_range(w / 2.0..1.0 - w / 2.0);
        let cy: f64 = rng.gen_range(h / 2.0..1.0 - h / 2.0);
        BBox::new(cx, cy, w, h)
    }
}
