//! Optimal bipartite assignment of predicted triplets to ground truth.
//!
//! The solver is the O(n^2 m) shortest-augmenting-path Hungarian algorithm
//! wrapped in a deterministic refinement pass that returns, among all
//! minimum-cost assignments, the lexicographically smallest pair list
//! (sorted by prediction index, then ground-truth index). Ties are detected
//! at float precision; with exact (e.g. dyadic) inputs the refinement is
//! exact.

use crate::geometry::{box_giou, BBox};
use crate::types::HOITriplet;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Rectangular cost matrix: rows are predictions, columns ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    inner: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("cost matrix entry ({row}, {col}) is not finite: {value}")]
    NonFiniteCost { row: usize, col: usize, value: f64 },
    #[error("ground truth {index} carries a sentinel label")]
    SentinelGroundTruth { index: usize },
    #[error("prediction probability vectors are shorter than the label (object {object_id}, verb {verb_id})")]
    LabelOutOfRange { object_id: usize, verb_id: usize },
}

impl CostMatrix {
    pub fn new(inner: Array2<f64>) -> Result<Self, MatchError> {
        for ((row, col), &value) in inner.indexed_iter() {
            if !value.is_finite() {
                return Err(MatchError::NonFiniteCost { row, col, value });
            }
        }
        Ok(Self { inner })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatchError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut a = Array2::zeros((n, m));
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                a[(i, j)] = v;
            }
        }
        Self::new(a)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.inner.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.inner[(row, col)]
    }
}

/// Injective partial assignment: every prediction appears exactly once in
/// `pairs` or `unmatched_predictions`; unmatched predictions carry the
/// no-object / no-interaction label downstream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predictions: Vec<usize>,
}

impl MatchResult {
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(p, g)| cost.get(p, g)).sum()
    }

    pub fn gt_for_prediction(&self, pred: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|(p, _)| *p == pred)
            .map(|&(_, g)| g)
    }
}

/// Minimum-cost assignment of the smaller side into the larger.
///
/// Returns the lexicographically smallest optimal pair list; an empty
/// matrix yields an empty result.
pub fn hungarian(cost: &CostMatrix) -> MatchResult {
    let (n_preds, n_gts) = cost.shape();
    let k = n_preds.min(n_gts);
    if k == 0 {
        return MatchResult {
            pairs: Vec::new(),
            unmatched_predictions: (0..n_preds).collect(),
        };
    }

    // Near-ties within eps are broken lexicographically; exact inputs make
    // this exact, generic float inputs essentially never tie.
    let eps = 1e-9;

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(k);
    let mut gt_available: Vec<bool> = vec![true; n_gts];
    let mut pred_start = 0usize;

    while pairs.len() < k {
        let remaining = k - pairs.len() - 1;
        let mut best = f64::INFINITY;
        // Pass 1: exact minimum over all feasible candidate heads.
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for p in pred_start..n_preds {
            if n_preds - p - 1 < remaining {
                break;
            }
            for g in 0..n_gts {
                if !gt_available[g] {
                    continue;
                }
                let completion =
                    solve_completion(cost, p + 1, &gt_available, g, remaining);
                let total = cost.get(p, g) + completion;
                if total < best {
                    best = total;
                }
                candidates.push((p, g, total));
            }
        }
        // Pass 2: first candidate within eps of the minimum is the
        // lexicographic choice (candidates were generated in order).
        let &(p, g, _) = candidates
            .iter()
            .find(|&&(_, _, t)| t <= best + eps)
            .expect("feasible candidate exists");
        pairs.push((p, g));
        gt_available[g] = false;
        pred_start = p + 1;
    }

    let matched: std::collections::BTreeSet<usize> = pairs.iter().map(|&(p, _)| p).collect();
    MatchResult {
        unmatched_predictions: (0..n_preds).filter(|p| !matched.contains(p)).collect(),
        pairs,
    }
}

/// Optimal total of assigning `remaining` pairs among predictions
/// `from_pred..` and the still-available ground truths minus `skip_gt`.
fn solve_completion(
    cost: &CostMatrix,
    from_pred: usize,
    gt_available: &[bool],
    skip_gt: usize,
    remaining: usize,
) -> f64 {
    if remaining == 0 {
        return 0.0;
    }
    let (n_preds, _) = cost.shape();
    let rows: Vec<usize> = (from_pred..n_preds).collect();
    let cols: Vec<usize> = gt_available
        .iter()
        .enumerate()
        .filter(|&(g, &a)| a && g != skip_gt)
        .map(|(g, _)| g)
        .collect();
    let sub = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| {
        cost.get(rows[i], cols[j])
    });
    solve_rectangular(&sub).0
}

/// Plain shortest-augmenting-path Hungarian on a rectangular matrix;
/// returns (total, row -> col assignment for the smaller side).
fn solve_rectangular(cost: &Array2<f64>) -> (f64, Vec<(usize, usize)>) {
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return (0.0, Vec::new());
    }
    if rows > cols {
        let t = cost.t().to_owned();
        let (total, pairs) = solve_rectangular(&t);
        let mut swapped: Vec<(usize, usize)> = pairs.into_iter().map(|(r, c)| (c, r)).collect();
        swapped.sort_unstable();
        return (total, swapped);
    }

    // 1-based potentials over rows (u) and columns (v); way[j] backtracks
    // the augmenting path. Column 0 is the virtual start.
    let n = rows;
    let m = cols;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut assignment = vec![0usize; m + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        assignment[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assignment[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[assignment[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assignment[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assignment[j0] = assignment[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n);
    for j in 1..=m {
        if assignment[j] != 0 {
            pairs.push((assignment[j] - 1, j - 1));
        }
    }
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[(r, c)]).sum();
    (total, pairs)
}

/// One decoded detector query in probability space, the unit the matcher
/// and the classification losses consume.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPrediction {
    pub human_box: BBox,
    pub object_box: BBox,
    /// Softmax probabilities over K real objects + trailing no-object.
    pub obj_probs: Vec<f64>,
    /// Per-verb sigmoid probabilities (length V, no sentinel entry).
    pub verb_probs: Vec<f64>,
}

/// Weights of the matching cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub class_obj: f64,
    pub class_verb: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            class_obj: 1.0,
            class_verb: 1.0,
            l1: 2.5,
            giou: 1.0,
        }
    }
}

fn l1_distance(a: &BBox, b: &BBox) -> f64 {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()
}

/// Matching cost between one prediction and one ground-truth triplet:
///
/// `w_obj (1 - p_obj[gt]) + w_verb (1 - p_verb[gt])
///  + w_l1 (L1(human) + L1(object)) + w_giou (2 - GIoU(human) - GIoU(object))`
///
/// Box L1 is the sum of absolute center-size coordinate differences.
/// Probabilities are bounded so the cost stays bounded, which keeps the
/// brute-force oracle and fixtures simple.
pub fn hoi_match_cost(
    pred: &QueryPrediction,
    gt: &HOITriplet,
    weights: &MatchWeights,
) -> Result<f64, MatchError> {
    let num_objects = pred.obj_probs.len().saturating_sub(1);
    if gt.object_id >= num_objects || gt.verb_id >= pred.verb_probs.len() {
        return Err(MatchError::SentinelGroundTruth { index: gt.object_id });
    }
    let class_term = weights.class_obj * (1.0 - pred.obj_probs[gt.object_id])
        + weights.class_verb * (1.0 - pred.verb_probs[gt.verb_id]);
    let l1_term = weights.l1
        * (l1_distance(&pred.human_box, &gt.human_box)
            + l1_distance(&pred.object_box, &gt.object_box));
    let giou_term = weights.giou
        * (2.0
            - box_giou(&pred.human_box, &gt.human_box)
            - box_giou(&pred.object_box, &gt.object_box));
    Ok(class_term + l1_term + giou_term)
}

/// Build the cost matrix with [`hoi_match_cost`] and run [`hungarian`].
/// With no ground truths every prediction is unmatched.
pub fn match_predictions(
    preds: &[QueryPrediction],
    gts: &[HOITriplet],
    weights: &MatchWeights,
) -> Result<MatchResult, MatchError> {
    if gts.is_empty() {
        return Ok(MatchResult {
            pairs: Vec::new(),
            unmatched_predictions: (0..preds.len()).collect(),
        });
    }
    let mut cost = Array2::zeros((preds.len(), gts.len()));
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            cost[(i, j)] = hoi_match_cost(p, g, weights)?;
        }
    }
    Ok(hungarian(&CostMatrix::new(cost)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all injective assignments of size
    /// min(rows, cols); returns (total, lexicographically smallest optimal
    /// pair list). Independent oracle for the solver.
    pub(crate) fn brute_force(cost: &CostMatrix) -> (f64, Vec<(usize, usize)>) {
        let (n, m) = cost.shape();
        let k = n.min(m);
        let mut best = (f64::INFINITY, Vec::new());
        let mut current: Vec<(usize, usize)> = Vec::new();
        let mut used = vec![false; m];
        fn recurse(
            cost: &CostMatrix,
            next_pred: usize,
            k: usize,
            current: &mut Vec<(usize, usize)>,
            used: &mut Vec<bool>,
            best: &mut (f64, Vec<(usize, usize)>),
        ) {
            let (n, m) = cost.shape();
            if current.len() == k {
                let total: f64 = current.iter().map(|&(p, g)| cost.get(p, g)).sum();
                if total < best.0 || (total == best.0 && current[..] < best.1[..]) {
                    *best = (total, current.clone());
                }
                return;
            }
            if next_pred >= n || n - next_pred < k - current.len() {
                return;
            }
            // skip this prediction (only legal when enough preds remain)
            if n - next_pred - 1 >= k - current.len() {
                recurse(cost, next_pred + 1, k, current, used, best);
            }
            for g in 0..m {
                if used[g] {
                    continue;
                }
                used[g] = true;
                current.push((next_pred, g));
                recurse(cost, next_pred + 1, k, current, used, best);
                current.pop();
                used[g] = false;
            }
        }
        recurse(cost, 0, k, &mut current, &mut used, &mut best);
        if k == 0 {
            return (0.0, Vec::new());
        }
        best
    }

    fn matrix(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_entry() {
        let m = matrix(&[&[0.5]]);
        let r = hungarian(&m);
        assert_eq!(r.pairs, vec![(0, 0)]);
        assert_eq!(r.total_cost(&m), 0.5);
    }

    #[test]
    fn two_by_two_diagonal() {
        let m = matrix(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let r = hungarian(&m);
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost(&m), 2.0);
    }

    #[test]
    fn three_by_three_fixture() {
        let m = matrix(&[&[4.0, 1.0, 3.0], &[2.0, 0.0, 5.0], &[3.0, 2.0, 2.0]]);
        let r = hungarian(&m);
        assert_eq!(r.pairs, vec![(0, 1), (1, 0), (2, 2)]);
        assert_eq!(r.total_cost(&m), 5.0);
    }

    #[test]
    fn empty_matrix() {
        let m = CostMatrix::new(Array2::zeros((0, 0))).unwrap();
        let r = hungarian(&m);
        assert!(r.pairs.is_empty());
        assert!(r.unmatched_predictions.is_empty());
    }

    #[test]
    fn no_ground_truth_leaves_all_unmatched() {
        let m = CostMatrix::new(Array2::zeros((3, 0))).unwrap();
        let r = hungarian(&m);
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_predictions, vec![0, 1, 2]);
    }

    #[test]
    fn non_finite_cost_rejected() {
        let mut a = Array2::zeros((2, 2));
        a[(0, 1)] = f64::NAN;
        assert!(matches!(
            CostMatrix::new(a),
            Err(MatchError::NonFiniteCost { row: 0, col: 1, .. })
        ));
    }

    /// Dyadic costs keep every sum exact in f64, so optimal totals compare
    /// exactly against the oracle.
    fn random_dyadic_matrix(rng: &mut impl Rng, max_dim: usize) -> CostMatrix {
        let n = rng.gen_range(1..=max_dim);
        let m = rng.gen_range(1..=max_dim);
        let a = Array2::from_shape_fn((n, m), |_| rng.gen_range(0..2048) as f64 / 256.0);
        CostMatrix::new(a).unwrap()
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..300 {
            let m = random_dyadic_matrix(&mut rng, 6);
            let fast = hungarian(&m);
            let (oracle_total, oracle_pairs) = brute_force(&m);
            assert_eq!(fast.total_cost(&m), oracle_total, "matrix {m:?}");
            assert_eq!(fast.pairs, oracle_pairs, "lexicographic tie-break");
        }
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // every assignment costs 2; smallest pair list is (0,0),(1,1)
        let m = matrix(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let r = hungarian(&m);
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn constant_shift_preserves_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let m = random_dyadic_matrix(&mut rng, 5);
            let (n, mm) = m.shape();
            let shifted = CostMatrix::new(Array2::from_shape_fn((n, mm), |(i, j)| {
                m.get(i, j) + 3.25
            }))
            .unwrap();
            assert_eq!(hungarian(&m).pairs, hungarian(&shifted).pairs);
        }
    }

    #[test]
    fn positive_scaling_preserves_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        for _ in 0..50 {
            let m = random_dyadic_matrix(&mut rng, 5);
            let (n, mm) = m.shape();
            let scaled = CostMatrix::new(Array2::from_shape_fn((n, mm), |(i, j)| {
                m.get(i, j) * 4.0
            }))
            .unwrap();
            assert_eq!(hungarian(&m).pairs, hungarian(&scaled).pairs);
        }
    }

    #[test]
    fn permuting_rows_permutes_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        for _ in 0..50 {
            // power-of-two costs: subset sums are distinct, so the optimal
            // assignment is unique and permutation-stable
            let n = rng.gen_range(2..=5);
            let mut vals: Vec<f64> = (0..n * n).map(|i| (1u64 << i) as f64 / 33554432.0).collect();
            for i in (1..vals.len()).rev() {
                vals.swap(i, rng.gen_range(0..=i));
            }
            let m = CostMatrix::new(
                Array2::from_shape_vec((n, n), vals.clone()).unwrap(),
            )
            .unwrap();
            let base = hungarian(&m);

            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let permuted = CostMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| {
                m.get(perm[i], j)
            }))
            .unwrap();
            let r = hungarian(&permuted);
            let mut expect: Vec<(usize, usize)> = base
                .pairs
                .iter()
                .map(|&(p, g)| (perm.iter().position(|&x| x == p).unwrap(), g))
                .collect();
            expect.sort_unstable();
            assert_eq!(r.pairs, expect);
            assert_eq!(r.total_cost(&permuted), base.total_cost(&m));
        }
    }

    fn uniform_prediction(num_objects: usize, num_verbs: usize, b: BBox) -> QueryPrediction {
        QueryPrediction {
            human_box: b,
            object_box: b,
            obj_probs: vec![1.0 / (num_objects + 1) as f64; num_objects + 1],
            verb_probs: vec![1.0 / num_verbs as f64; num_verbs],
        }
    }

    #[test]
    fn perfect_prediction_has_zero_cost() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.3);
        let gt = HOITriplet::gt(b, b, 1, 2);
        let mut pred = uniform_prediction(3, 3, b);
        pred.obj_probs = vec![0.0, 1.0, 0.0, 0.0];
        pred.verb_probs = vec![0.0, 0.0, 1.0];
        let c = hoi_match_cost(&pred, &gt, &MatchWeights::default()).unwrap();
        assert!(c.abs() < 1e-12, "cost {c}");
    }

    #[test]
    fn disjoint_object_boxes_cost_fixture() {
        // human boxes identical; object boxes disjoint with GIoU -7/9
        let hb = BBox::new(0.5, 0.5, 0.2, 0.2);
        let ob_pred = BBox::from_corners(0.0, 0.0, 0.1, 0.1);
        let ob_gt = BBox::from_corners(0.2, 0.2, 0.3, 0.3);
        let gt = HOITriplet::gt(hb, ob_gt, 0, 0);
        let pred = QueryPrediction {
            human_box: hb,
            object_box: ob_pred,
            obj_probs: vec![1.0, 0.0],
            verb_probs: vec![1.0],
        };
        let w = MatchWeights::default();
        let c = hoi_match_cost(&pred, &gt, &w).unwrap();
        let l1 = 0.2 + 0.2; // |dcx| + |dcy|, sizes equal
        let expect = 2.5 * l1 + 1.0 * (1.0 + 7.0 / 9.0);
        assert!((c - expect).abs() < 1e-12, "cost {c} expect {expect}");
    }

    #[test]
    fn uniform_probability_class_terms() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let gt = HOITriplet::gt(b, b, 0, 0);
        let pred = uniform_prediction(3, 4, b);
        let c = hoi_match_cost(&pred, &gt, &MatchWeights::default()).unwrap();
        let expect = (1.0 - 0.25) + (1.0 - 0.25);
        assert!((c - expect).abs() < 1e-12);
    }

    #[test]
    fn sentinel_ground_truth_rejected() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let gt = HOITriplet::gt(b, b, 3, 0); // object 3 == sentinel for K=3
        let pred = uniform_prediction(3, 3, b);
        assert!(hoi_match_cost(&pred, &gt, &MatchWeights::default()).is_err());
    }

    #[test]
    fn match_predictions_empty_gt() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let preds = vec![uniform_prediction(3, 3, b), uniform_prediction(3, 3, b)];
        let r = match_predictions(&preds, &[], &MatchWeights::default()).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_predictions, vec![0, 1]);
    }

    #[test]
    fn match_predictions_agrees_with_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..50 {
            let n_preds = 4;
            let n_gts = 2;
            let preds: Vec<QueryPrediction> = (0..n_preds)
                .map(|_| {
                    let b = crate::geometry::tests::random_box(&mut rng);
                    let mut p = uniform_prediction(3, 3, b);
                    let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    p.obj_probs = raw.iter().map(|x| x / s).collect();
                    p.verb_probs = (0..3).map(|_| rng.gen_range(0.05..0.95)).collect();
                    p.object_box = crate::geometry::tests::random_box(&mut rng);
                    p
                })
                .collect();
            let gts: Vec<HOITriplet> = (0..n_gts)
                .map(|_| {
                    HOITriplet::gt(
                        crate::geometry::tests::random_box(&mut rng),
                        crate::geometry::tests::random_box(&mut rng),
                        rng.gen_range(0..3),
                        rng.gen_range(0..3),
                    )
                })
                .collect();
            let w = MatchWeights::default();
            let result = match_predictions(&preds, &gts, &w).unwrap();

            let mut cost = Array2::zeros((n_preds, n_gts));
            for (i, p) in preds.iter().enumerate() {
                for (j, g) in gts.iter().enumerate() {
                    cost[(i, j)] = hoi_match_cost(p, g, &w).unwrap();
                }
            }
            let cm = CostMatrix::new(cost).unwrap();
            let (oracle_total, _) = brute_force(&cm);
            assert!((result.total_cost(&cm) - oracle_total).abs() < 1e-9);
        }
    }
}
