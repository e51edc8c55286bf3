//! Shared domain types: query embeddings, masks, per-frame predictions, and
//! ground-truth video annotations.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Binary instance mask over an H×W pixel grid.
pub type BinaryMask = Array2<bool>;

/// Multi-channel input image, stored channel-major as `(channels, H, W)`.
pub type Image = Array3<f64>;

/// An N×C matrix of query embeddings, one row per query slot.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    embeddings: Array2<f64>,
}

impl QuerySet {
    pub fn new(embeddings: Array2<f64>) -> Result<Self> {
        if embeddings.nrows() == 0 || embeddings.ncols() == 0 {
            return Err(Error::input("query set must be non-empty"));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("query set contains a non-finite value"));
        }
        Ok(QuerySet { embeddings })
    }

    /// Number of query slots (rows).
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    /// Embedding dimension (columns).
    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.embeddings
    }

    /// Reorder rows so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::input(format!(
                "permutation length {} does not match query count {}",
                perm.len(),
                self.len()
            )));
        }
        let mut out = Array2::zeros((self.len(), self.dim()));
        for (i, &src) in perm.iter().enumerate() {
            out.row_mut(i).assign(&self.embeddings.row(src));
        }
        Ok(QuerySet { embeddings: out })
    }
}

/// Per-frame model output: query embeddings, soft masks, and per-query class
/// distributions over K real classes plus a trailing "no object" column.
#[derive(Debug, Clone)]
pub struct FramePrediction {
    queries: QuerySet,
    soft_masks: Array3<f64>,
    class_dists: Array2<f64>,
}

/// Tolerance on each class distribution row summing to one.
pub const CLASS_DIST_SUM_TOL: f64 = 1e-6;

impl FramePrediction {
    pub fn new(
        queries: QuerySet,
        soft_masks: Array3<f64>,
        class_dists: Array2<f64>,
    ) -> Result<Self> {
        let n = queries.len();
        if soft_masks.shape()[0] != n {
            return Err(Error::input(format!(
                "soft mask count {} does not match query count {}",
                soft_masks.shape()[0],
                n
            )));
        }
        if class_dists.nrows() != n {
            return Err(Error::input(format!(
                "class distribution count {} does not match query count {}",
                class_dists.nrows(),
                n
            )));
        }
        if class_dists.ncols() < 2 {
            return Err(Error::input(
                "class distributions need at least one real class plus the no-object column",
            ));
        }
        if soft_masks.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::input("soft mask values must lie strictly in (0, 1)"));
        }
        for (i, row) in class_dists.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::input(format!(
                    "class distribution {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > CLASS_DIST_SUM_TOL {
                return Err(Error::input(format!(
                    "class distribution {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(FramePrediction {
            queries,
            soft_masks,
            class_dists,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// Number of real classes K (excludes the no-object column).
    pub fn num_classes(&self) -> usize {
        self.class_dists.ncols() - 1
    }

    pub fn height(&self) -> usize {
        self.soft_masks.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.soft_masks.shape()[2]
    }

    pub fn queries(&self) -> &QuerySet {
        &self.queries
    }

    pub fn soft_masks(&self) -> &Array3<f64> {
        &self.soft_masks
    }

    pub fn soft_mask(&self, i: usize) -> ArrayView2<'_, f64> {
        self.soft_masks.index_axis(ndarray::Axis(0), i)
    }

    pub fn class_dists(&self) -> &Array2<f64> {
        &self.class_dists
    }

    /// Threshold query `i`'s soft mask at 0.5.
    pub fn binary_mask(&self, i: usize) -> BinaryMask {
        self.soft_mask(i).mapv(|p| p > 0.5)
    }

    pub fn binary_masks(&self) -> Vec<BinaryMask> {
        (0..self.num_queries()).map(|i| self.binary_mask(i)).collect()
    }

    /// Index of the most likely class for query `i`, where index K means
    /// "no object".
    pub fn argmax_class(&self, i: usize) -> usize {
        let row = self.class_dists.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        let _ = row[best];
        best
    }
}

/// One ground-truth instance visible in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub instance_id: u32,
    pub class_id: usize,
    pub mask: BinaryMask,
}

/// Ground truth for a single frame. An unannotated frame keeps its image but
/// carries no instances and is skipped by training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameAnnotation {
    pub annotated: bool,
    pub instances: Vec<GtInstance>,
}

/// Ground-truth instances for one video, with ids consistent across frames.
/// An instance missing from a frame's list is absent (not visible) there.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotation {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<FrameAnnotation>,
}

impl VideoAnnotation {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Distinct instance ids appearing anywhere in the video, ascending.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = Vec::new();
        for frame in &self.frames {
            for inst in &frame.instances {
                if !ids.contains(&inst.instance_id) {
                    ids.push(inst.instance_id);
                }
            }
        }
        ids.sort_unstable();
        ids
    }

    /// Class of an instance id, taken from its first appearance.
    pub fn class_of(&self, instance_id: u32) -> Option<usize> {
        for frame in &self.frames {
            for inst in &frame.instances {
                if inst.instance_id == instance_id {
                    return Some(inst.class_id);
                }
            }
        }
        None
    }

    /// Per-frame masks for one instance; absent frames become empty masks.
    pub fn track_masks(&self, instance_id: u32) -> Vec<BinaryMask> {
        self.frames
            .iter()
            .map(|frame| {
                frame
                    .instances
                    .iter()
                    .find(|inst| inst.instance_id == instance_id)
                    .map(|inst| inst.mask.clone())
                    .unwrap_or_else(|| BinaryMask::from_elem((self.height, self.width), false))
            })
            .collect()
    }
}

/// A video with its images and ground truth, the unit datasets are made of.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub annotation: VideoAnnotation,
    pub images: Vec<Image>,
}

/// A collection of videos used for training and evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub videos: Vec<VideoSample>,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }
}
