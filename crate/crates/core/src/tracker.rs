//! Online per-video instance association.
//!
//! Frames are processed strictly in order. Each step matches every query of
//! the incoming frame against the previous frame's slot-aligned queries with
//! a full N×N Hungarian assignment, so birth and death need no thresholds: a
//! live slot dies when its best match is a null query (empty mask or
//! no-object class) and a null slot is born when a real query lands on it.
//!
//! One caveat of matching on embeddings alone: when an instance leaves the
//! scene, nothing prevents its slot from latching onto a lookalike embedding
//! whose mask is non-empty, so the death goes unnoticed. The adversarial
//! fixtures in the test suite reproduce this deliberately; overlap heuristics
//! are intentionally not used to patch it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{
    combined_score_matrix, cosine_score_matrix, hungarian, mask_iou_matrix, CostMatrix,
};
use crate::par::{self, Execution};
use crate::types::{BinaryMask, FramePrediction, QuerySet};

/// Score source for frame-to-frame association.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Cosine similarity between query embeddings.
    Query,
    /// Mask-overlap heuristic: IoU between consecutive thresholded masks.
    Heuristic,
    /// Equal-weight blend of embedding and overlap scores.
    Combined,
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(Scorer::Query),
            "heuristic" => Ok(Scorer::Heuristic),
            "combined" => Ok(Scorer::Combined),
            other => Err(Error::input(format!(
                "unknown scorer `{other}`; expected query, heuristic, or combined"
            ))),
        }
    }
}

impl std::fmt::Display for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scorer::Query => "query",
            Scorer::Heuristic => "heuristic",
            Scorer::Combined => "combined",
        })
    }
}

/// Default number of instances emitted per video.
pub const DEFAULT_TOP_K: usize = 10;
/// Default confidence floor for emitted instances.
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.05;

/// Match one incoming frame against slot-aligned previous state. Returns the
/// permutation `perm[slot] = query index of the next frame`.
fn compute_perm(
    prev_queries: &QuerySet,
    prev_masks: &[BinaryMask],
    next: &FramePrediction,
    scorer: Scorer,
) -> Result<Vec<usize>> {
    let n = prev_queries.len();
    if next.num_queries() != n {
        return Err(Error::input(format!(
            "query count changed between frames: {} vs {}",
            n,
            next.num_queries()
        )));
    }
    let scores = match scorer {
        Scorer::Query => cosine_score_matrix(prev_queries, next.queries())?,
        Scorer::Heuristic => mask_iou_matrix(prev_masks, &next.binary_masks())?,
        Scorer::Combined => {
            let cos = cosine_score_matrix(prev_queries, next.queries())?;
            let iou = mask_iou_matrix(prev_masks, &next.binary_masks())?;
            combined_score_matrix(&cos, &iou)?
        }
    };
    let assignment = hungarian(&CostMatrix::from_scores(&scores)?);
    let mut perm = vec![0usize; n];
    for &(slot, query) in assignment.pairs() {
        perm[slot] = query;
    }
    Ok(perm)
}

fn aligned_dists(next: &FramePrediction, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((perm.len(), next.num_classes() + 1));
    for (slot, &q) in perm.iter().enumerate() {
        out.row_mut(slot).assign(&next.class_dists().row(q));
    }
    out
}

/// Recorded tracking history for one video: per-frame slot permutations and
/// the slot-aligned binary masks and class distributions they induce.
#[derive(Debug, Clone)]
pub struct TrackSet {
    num_slots: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    perms: Vec<Vec<usize>>,
    masks: Vec<Vec<BinaryMask>>,
    class_dists: Vec<Array2<f64>>,
}

impl TrackSet {
    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn num_frames(&self) -> usize {
        self.perms.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of real classes K.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Permutation for frame `t`: slot index to that frame's raw query index.
    pub fn perm(&self, t: usize) -> &[usize] {
        &self.perms[t]
    }

    pub fn mask_at(&self, t: usize, slot: usize) -> &BinaryMask {
        &self.masks[t][slot]
    }

    pub fn class_dists_at(&self, t: usize) -> &Array2<f64> {
        &self.class_dists[t]
    }

    /// Per-frame masks of one slot across the whole video.
    pub fn slot_track(&self, slot: usize) -> Vec<BinaryMask> {
        self.masks.iter().map(|frame| frame[slot].clone()).collect()
    }

    /// Mean class distribution per slot over all frames.
    pub fn mean_class_dists(&self) -> Array2<f64> {
        let mut sums = Array2::zeros((self.num_slots, self.num_classes + 1));
        for dists in &self.class_dists {
            sums += dists;
        }
        sums / self.num_frames() as f64
    }
}

/// Start a track set from the first frame: identity permutation, slot i is
/// query i.
pub fn init_tracks(first: &FramePrediction) -> TrackSet {
    let n = first.num_queries();
    let perm: Vec<usize> = (0..n).collect();
    TrackSet {
        num_slots: n,
        height: first.height(),
        width: first.width(),
        num_classes: first.num_classes(),
        masks: vec![first.binary_masks()],
        class_dists: vec![aligned_dists(first, &perm)],
        perms: vec![perm],
    }
}

impl TrackSet {
    /// Ingest the next frame. `aligned_prev_queries` is the previous frame's
    /// query set reordered into slot order; the slot-aligned queries for the
    /// new frame are returned for the caller to thread into the next step.
    pub fn step(
        &mut self,
        aligned_prev_queries: &QuerySet,
        next: &FramePrediction,
        scorer: Scorer,
    ) -> Result<QuerySet> {
        if aligned_prev_queries.len() != self.num_slots {
            return Err(Error::input(format!(
                "aligned query count {} does not match slot count {}",
                aligned_prev_queries.len(),
                self.num_slots
            )));
        }
        if next.height() != self.height || next.width() != self.width {
            return Err(Error::input("mask dimensions changed between frames"));
        }
        if next.num_classes() != self.num_classes {
            return Err(Error::input("class count changed between frames"));
        }
        let prev_masks = self.masks.last().expect("track set has at least one frame");
        let perm = compute_perm(aligned_prev_queries, prev_masks, next, scorer)?;
        let aligned_queries = next.queries().permuted(&perm)?;
        let masks: Vec<BinaryMask> = perm.iter().map(|&q| next.binary_mask(q)).collect();
        self.class_dists.push(aligned_dists(next, &perm));
        self.masks.push(masks);
        self.perms.push(perm);
        Ok(aligned_queries)
    }
}

/// Fold a whole video through the tracker, strictly online: the result for
/// frame t never depends on later frames.
pub fn run_video(frames: &[FramePrediction], scorer: Scorer) -> Result<TrackSet> {
    let first = frames
        .first()
        .ok_or_else(|| Error::input("cannot track an empty frame sequence"))?;
    let mut tracks = init_tracks(first);
    let mut aligned = first.queries().clone();
    for next in &frames[1..] {
        aligned = tracks.step(&aligned, next, scorer)?;
    }
    Ok(tracks)
}

/// Track many videos, one tracker per video.
pub fn track_videos(
    videos: &[Vec<FramePrediction>],
    scorer: Scorer,
    exec: Execution,
) -> Result<Vec<TrackSet>> {
    par::try_map(exec, videos, |frames| run_video(frames, scorer))
}

/// Incremental tracker holding only constant-size state: the previous
/// frame's slot-aligned queries and masks plus running class sums. Use this
/// for streaming pipelines; [`run_video`] records the full history instead.
#[derive(Debug, Clone)]
pub struct Tracker {
    num_slots: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    frames_seen: usize,
    aligned_queries: QuerySet,
    aligned_masks: Vec<BinaryMask>,
    current_perm: Vec<usize>,
    class_sums: Array2<f64>,
}

impl Tracker {
    pub fn new(first: &FramePrediction) -> Tracker {
        let n = first.num_queries();
        let perm: Vec<usize> = (0..n).collect();
        Tracker {
            num_slots: n,
            height: first.height(),
            width: first.width(),
            num_classes: first.num_classes(),
            frames_seen: 1,
            aligned_queries: first.queries().clone(),
            aligned_masks: first.binary_masks(),
            class_sums: aligned_dists(first, &perm),
            current_perm: perm,
        }
    }

    pub fn step(&mut self, next: &FramePrediction, scorer: Scorer) -> Result<()> {
        if next.height() != self.height || next.width() != self.width {
            return Err(Error::input("mask dimensions changed between frames"));
        }
        if next.num_classes() != self.num_classes {
            return Err(Error::input("class count changed between frames"));
        }
        let perm = compute_perm(&self.aligned_queries, &self.aligned_masks, next, scorer)?;
        self.aligned_queries = next.queries().permuted(&perm)?;
        self.aligned_masks = perm.iter().map(|&q| next.binary_mask(q)).collect();
        self.class_sums += &aligned_dists(next, &perm);
        self.current_perm = perm;
        self.frames_seen += 1;
        Ok(())
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Permutation applied to the most recent frame.
    pub fn current_perm(&self) -> &[usize] {
        &self.current_perm
    }

    /// Slot-aligned thresholded masks of the most recent frame.
    pub fn aligned_masks(&self) -> &[BinaryMask] {
        &self.aligned_masks
    }

    pub fn mean_class_dists(&self) -> Array2<f64> {
        &self.class_sums / self.frames_seen as f64
    }

    /// Rank slots for emission exactly like [`finalize`] does on a recorded
    /// track set.
    pub fn slot_scores(&self, top_k: usize, conf_threshold: f64) -> Vec<SlotScore> {
        rank_slots(&self.mean_class_dists(), top_k, conf_threshold)
    }
}

/// A slot selected for emission: its best real class and the mean probability
/// of that class over the video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotScore {
    pub slot: usize,
    pub class_id: usize,
    pub confidence: f64,
}

fn rank_slots(mean_dists: &Array2<f64>, top_k: usize, conf_threshold: f64) -> Vec<SlotScore> {
    let num_real = mean_dists.ncols() - 1;
    let mut scores: Vec<SlotScore> = Vec::new();
    for (slot, row) in mean_dists.rows().into_iter().enumerate() {
        let mut best_class = 0usize;
        for c in 1..num_real {
            if row[c] > row[best_class] {
                best_class = c;
            }
        }
        let confidence = row[best_class];
        if confidence >= conf_threshold {
            scores.push(SlotScore {
                slot,
                class_id: best_class,
                confidence,
            });
        }
    }
    scores.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.slot.cmp(&b.slot))
    });
    scores.truncate(top_k);
    scores
}

/// One emitted instance: class, confidence, and its mask in every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackInstance {
    pub class_id: usize,
    pub confidence: f64,
    pub masks: Vec<BinaryMask>,
}

/// Per-video tracking output in submission form, instances sorted by
/// descending confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoResult {
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    pub instances: Vec<TrackInstance>,
}

/// Aggregate a completed track set into emitted instances: per slot the mean
/// class distribution over frames, confidence = best real-class mean, slots
/// below `conf_threshold` dropped and the rest capped at `top_k`.
pub fn finalize(tracks: &TrackSet, top_k: usize, conf_threshold: f64) -> VideoResult {
    let scores = rank_slots(&tracks.mean_class_dists(), top_k, conf_threshold);
    let instances = scores
        .iter()
        .map(|s| TrackInstance {
            class_id: s.class_id,
            confidence: s.confidence,
            masks: tracks.slot_track(s.slot),
        })
        .collect();
    VideoResult {
        height: tracks.height(),
        width: tracks.width(),
        num_frames: tracks.num_frames(),
        instances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    /// Build a prediction from query rows, per-query "on" pixels, and class
    /// ids (`None` means no-object).
    fn pred(
        queries: Vec<Vec<f64>>,
        h: usize,
        w: usize,
        fg: Vec<Vec<(usize, usize)>>,
        classes: Vec<Option<usize>>,
        k: usize,
    ) -> FramePrediction {
        let n = queries.len();
        let c = queries[0].len();
        let q = QuerySet::new(
            Array2::from_shape_vec((n, c), queries.into_iter().flatten().collect()).unwrap(),
        )
        .unwrap();
        let mut masks = Array3::from_elem((n, h, w), 0.1);
        for (i, pixels) in fg.iter().enumerate() {
            for &(y, x) in pixels {
                masks[(i, y, x)] = 0.9;
            }
        }
        let mut dists = Array2::zeros((n, k + 1));
        for (i, class) in classes.iter().enumerate() {
            match class {
                Some(cl) => {
                    for j in 0..=k {
                        dists[(i, j)] = if j == *cl { 0.9 } else { 0.1 / k as f64 };
                    }
                }
                None => {
                    for j in 0..k {
                        dists[(i, j)] = 0.1 / k as f64;
                    }
                    dists[(i, k)] = 0.9;
                }
            }
        }
        FramePrediction::new(q, masks, dists).unwrap()
    }

    fn random_pred(
        rng: &mut ChaCha12Rng,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        k: usize,
    ) -> FramePrediction {
        let q =
            QuerySet::new(Array2::from_shape_fn((n, c), |_| rng.random::<f64>() - 0.5)).unwrap();
        let masks = Array3::from_shape_fn((n, h, w), |_| rng.random_range(0.05..0.95));
        let mut dists = Array2::zeros((n, k + 1));
        for i in 0..n {
            let mut row: Vec<f64> = (0..=k).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            for (j, v) in row.into_iter().enumerate() {
                dists[(i, j)] = v;
            }
        }
        FramePrediction::new(q, masks, dists).unwrap()
    }

    #[test]
    fn init_is_identity() {
        for n in [2usize, 100] {
            let queries = (0..n).map(|i| vec![i as f64 + 1.0, 1.0]).collect();
            let fg = vec![vec![]; n];
            let classes = vec![Some(0); n];
            let p = pred(queries, 2, 2, fg, classes, 2);
            let tracks = init_tracks(&p);
            assert_eq!(tracks.num_slots(), n);
            assert_eq!(tracks.perm(0), (0..n).collect::<Vec<_>>().as_slice());
        }
    }

    #[test]
    fn self_match_is_identity() {
        let p = pred(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            2,
            2,
            vec![vec![(0, 0)], vec![(1, 1)]],
            vec![Some(0), Some(1)],
            2,
        );
        let tracks = run_video(&[p.clone(), p], Scorer::Query).unwrap();
        assert_eq!(tracks.perm(1), &[0, 1]);
    }

    #[test]
    fn swapped_rows_recovered() {
        let a = pred(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            2,
            2,
            vec![vec![(0, 0)], vec![(1, 1)]],
            vec![Some(0), Some(1)],
            2,
        );
        let b = pred(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            2,
            2,
            vec![vec![(1, 1)], vec![(0, 0)]],
            vec![Some(1), Some(0)],
            2,
        );
        let tracks = run_video(&[a, b], Scorer::Query).unwrap();
        assert_eq!(tracks.perm(1), &[1, 0]);
    }

    #[test]
    fn static_video_stays_identity() {
        let p = pred(
            vec![vec![1.0, 0.2], vec![-0.3, 1.0], vec![0.5, -0.8]],
            3,
            3,
            vec![vec![(0, 0)], vec![(1, 1)], vec![(2, 2)]],
            vec![Some(0), Some(1), None],
            2,
        );
        let frames = vec![p; 6];
        for scorer in [Scorer::Query, Scorer::Combined] {
            let tracks = run_video(&frames, scorer).unwrap();
            for t in 0..6 {
                assert_eq!(tracks.perm(t), &[0, 1, 2], "scorer {scorer} frame {t}");
            }
        }
    }

    #[test]
    fn single_frame_video_is_init() {
        let p = pred(
            vec![vec![1.0, 0.0]],
            2,
            2,
            vec![vec![(0, 0)]],
            vec![Some(0)],
            1,
        );
        let tracks = run_video(std::slice::from_ref(&p), Scorer::Heuristic).unwrap();
        assert_eq!(tracks.num_frames(), 1);
        assert_eq!(tracks.perm(0), &[0]);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        assert!(run_video(&[], Scorer::Query).is_err());
    }

    #[test]
    fn query_count_mismatch_is_an_error() {
        let a = pred(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            2,
            2,
            vec![vec![], vec![]],
            vec![Some(0), Some(0)],
            1,
        );
        let b = pred(vec![vec![1.0, 0.0]], 2, 2, vec![vec![]], vec![Some(0)], 1);
        assert!(run_video(&[a, b], Scorer::Query).is_err());
    }

    #[test]
    fn prefix_consistency() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..20 {
            let t = rng.random_range(2..7);
            let frames: Vec<FramePrediction> = (0..t)
                .map(|_| random_pred(&mut rng, 4, 6, 3, 3, 2))
                .collect();
            for scorer in [Scorer::Query, Scorer::Heuristic, Scorer::Combined] {
                let full = run_video(&frames, scorer).unwrap();
                for cut in 1..=t {
                    let prefix = run_video(&frames[..cut], scorer).unwrap();
                    for f in 0..cut {
                        assert_eq!(prefix.perm(f), full.perm(f));
                    }
                }
            }
        }
    }

    #[test]
    fn streaming_tracker_matches_run_video() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for scorer in [Scorer::Query, Scorer::Heuristic, Scorer::Combined] {
            let frames: Vec<FramePrediction> = (0..5)
                .map(|_| random_pred(&mut rng, 5, 4, 4, 4, 3))
                .collect();
            let tracks = run_video(&frames, scorer).unwrap();
            let mut tracker = Tracker::new(&frames[0]);
            for next in &frames[1..] {
                tracker.step(next, scorer).unwrap();
            }
            assert_eq!(tracker.current_perm(), tracks.perm(frames.len() - 1));
            assert_eq!(tracker.mean_class_dists(), tracks.mean_class_dists());
            let a = tracker.slot_scores(DEFAULT_TOP_K, DEFAULT_CONF_THRESHOLD);
            let fin = finalize(&tracks, DEFAULT_TOP_K, DEFAULT_CONF_THRESHOLD);
            assert_eq!(a.len(), fin.instances.len());
            for (s, inst) in a.iter().zip(fin.instances.iter()) {
                assert_eq!(s.class_id, inst.class_id);
                assert_eq!(s.confidence, inst.confidence);
            }
        }
    }

    #[test]
    fn query_scorer_invariant_to_positive_rescaling() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let frames: Vec<FramePrediction> = (0..4)
            .map(|_| random_pred(&mut rng, 4, 5, 3, 3, 2))
            .collect();
        let base = run_video(&frames, Scorer::Query).unwrap();
        let scaled: Vec<FramePrediction> = frames
            .iter()
            .map(|f| {
                let mut q = f.queries().as_array().clone();
                for mut row in q.rows_mut() {
                    let factor = rng.random_range(0.1..50.0);
                    row.mapv_inplace(|v| v * factor);
                }
                FramePrediction::new(
                    QuerySet::new(q).unwrap(),
                    f.soft_masks().clone(),
                    f.class_dists().clone(),
                )
                .unwrap()
            })
            .collect();
        let rescaled = run_video(&scaled, Scorer::Query).unwrap();
        for t in 0..frames.len() {
            assert_eq!(base.perm(t), rescaled.perm(t));
        }
    }

    #[test]
    fn finalize_excludes_null_dominated_slots() {
        let p = pred(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            2,
            2,
            vec![vec![(0, 0)], vec![]],
            vec![Some(1), None],
            2,
        );
        let tracks = run_video(&[p.clone(), p], Scorer::Query).unwrap();
        let result = finalize(&tracks, 10, 0.5);
        assert_eq!(result.instances.len(), 1);
        assert_eq!(result.instances[0].class_id, 1);
        assert!((result.instances[0].confidence - 0.9).abs() < 1e-12);
    }

    #[test]
    fn finalize_averages_class_distributions() {
        // Two frames with probabilities 0.8 and 0.6 on the single real class.
        let mk = |p_real: f64| {
            let q =
                QuerySet::new(Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap()).unwrap();
            let masks = Array3::from_elem((1, 2, 2), 0.9);
            let dists = Array2::from_shape_vec((1, 2), vec![p_real, 1.0 - p_real]).unwrap();
            FramePrediction::new(q, masks, dists).unwrap()
        };
        let tracks = run_video(&[mk(0.8), mk(0.6)], Scorer::Query).unwrap();
        let result = finalize(&tracks, 10, 0.05);
        assert_eq!(result.instances.len(), 1);
        assert!((result.instances[0].confidence - 0.7).abs() < 1e-12);
    }

    #[test]
    fn finalize_caps_and_sorts() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let frames: Vec<FramePrediction> = (0..3)
            .map(|_| random_pred(&mut rng, 12, 4, 3, 3, 4))
            .collect();
        let tracks = run_video(&frames, Scorer::Query).unwrap();
        let result = finalize(&tracks, 5, 0.0);
        assert!(result.instances.len() <= 5);
        for pair in result.instances.windows(2) {
            assert!(pair[0].confidence >= pair[1].confidence);
        }
    }
}
