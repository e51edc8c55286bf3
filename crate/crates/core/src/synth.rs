//! Synthetic occlusion videos with a controllable oracle prediction source.
//!
//! Objects are depth-ordered disks and rectangles on a small grid; a nearer
//! object erases the pixels of anything behind it, which is what produces
//! ground-truth masks that are disjoint per frame and heavy partial
//! occlusion during crossings. Images encode each instance's appearance as a
//! per-channel prototype drawn from a fixed global palette, so a model
//! trained on one set of videos transfers to freshly generated ones.
//!
//! The oracle emits one query row per slot and frame: live instances carry
//! their fixed latent embedding plus Gaussian drift, everything else carries
//! a low-norm null embedding with an empty mask. Null embeddings persist
//! across frames, mirroring how a trained model's no-object queries stay
//! similar between consecutive frames. Slot order is reshuffled every frame,
//! so recovering identities genuinely requires matching. All randomness is derived from the scenario seed with
//! per-stream sub-seeds, which makes every frame a pure function of
//! `(spec, t)` — videos can be generated front to back or streamed one
//! frame at a time with identical results.

use ndarray::{Array1, Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::types::{
    BinaryMask, Dataset, FrameAnnotation, FramePrediction, GtInstance, Image, QuerySet,
    VideoAnnotation, VideoSample,
};

/// Number of appearance prototypes shared by all generated videos.
pub const PALETTE_SIZE: usize = 8;
/// Image channels produced by the generator.
pub const IN_CHANNELS: usize = 4;

const LATENT_NORM: f64 = 3.0;
const NULL_EMBED_STD: f64 = 0.2;
const IMAGE_NOISE_STD: f64 = 0.03;
const FG_SOFT: f64 = 0.9;
const BG_SOFT: f64 = 0.1;
const ORACLE_CLASS_CONF: f64 = 0.9;
const PLACEMENT_RETRIES: usize = 60;

/// How instances move over the video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    /// Constant velocity with reflection off the grid borders.
    Linear,
    /// Pairs of instances swap sides, passing through each other near the
    /// middle of the video.
    Crossing,
    /// Linear motion with instances entering after the first frame or
    /// leaving before the last one.
    EnterExit,
}

/// Everything that defines one synthetic video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub height: usize,
    pub width: usize,
    pub num_instances: usize,
    pub num_queries: usize,
    pub frames: usize,
    pub motion: MotionModel,
    /// Target mean pairwise bbox IoU among co-visible instances; drives the
    /// crossing geometry and is ignored by the other motion models.
    pub occlusion_rate: f64,
    pub embedding_dim: usize,
    /// Per-dimension stddev of the oracle embedding drift.
    pub embedding_drift: f64,
    /// Fraction of boundary pixels flipped in the oracle's predicted masks.
    pub mask_corruption: f64,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            height: 24,
            width: 32,
            num_instances: 3,
            num_queries: 8,
            frames: 12,
            motion: MotionModel::Linear,
            occlusion_rate: 0.15,
            embedding_dim: 16,
            embedding_drift: 0.02,
            mask_corruption: 0.0,
            num_classes: 3,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::input("grid must be at least 8x8"));
        }
        if self.num_instances == 0 {
            return Err(Error::input("at least one instance is required"));
        }
        if self.num_instances > self.num_queries {
            return Err(Error::input("num_instances must not exceed num_queries"));
        }
        if self.num_instances > PALETTE_SIZE {
            return Err(Error::input(format!(
                "num_instances must not exceed the palette size {PALETTE_SIZE}"
            )));
        }
        if self.frames == 0 {
            return Err(Error::input("a video needs at least one frame"));
        }
        if self.motion == MotionModel::Crossing && (self.frames < 4 || self.num_instances < 2) {
            return Err(Error::input(
                "crossing scenarios need at least 4 frames and 2 instances",
            ));
        }
        if self.motion == MotionModel::EnterExit && self.frames < 3 {
            return Err(Error::input("enter-exit scenarios need at least 3 frames"));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return Err(Error::input("occlusion_rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.mask_corruption) {
            return Err(Error::input("mask_corruption must lie in [0, 1]"));
        }
        if self.embedding_drift < 0.0 || !self.embedding_drift.is_finite() {
            return Err(Error::input("embedding_drift must be finite and nonnegative"));
        }
        if self.embedding_dim < 2 {
            return Err(Error::input("embedding_dim must be at least 2"));
        }
        if self.num_classes == 0 || self.num_classes > PALETTE_SIZE {
            return Err(Error::input(format!(
                "num_classes must lie in 1..={PALETTE_SIZE}"
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn subseed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag).rotate_left(24) ^ splitmix64(index).rotate_left(48))
}

const TAG_SETUP: u64 = 1;
const TAG_SLOTS: u64 = 2;
const TAG_EMBED: u64 = 3;
const TAG_NULL: u64 = 4;
const TAG_CORRUPT: u64 = 5;
const TAG_IMAGE: u64 = 6;
const TAG_PALETTE: u64 = 0xBEEF;

fn frame_instance_index(t: usize, k: usize) -> u64 {
    (t as u64) << 16 | k as u64
}

/// Fixed appearance prototypes; row [`PALETTE_SIZE`] is the background.
fn palette() -> &'static Array2<f64> {
    use std::sync::OnceLock;
    static PALETTE: OnceLock<Array2<f64>> = OnceLock::new();
    PALETTE.get_or_init(|| {
        let mut rng = ChaCha12Rng::seed_from_u64(subseed(0, TAG_PALETTE, 0));
        let normal = Normal::new(0.0, 1.0).expect("valid stddev");
        let mut rows: Vec<Array1<f64>> = Vec::new();
        while rows.len() < PALETTE_SIZE + 1 {
            let mut v: Array1<f64> = Array1::from_shape_fn(IN_CHANNELS, |_| normal.sample(&mut rng));
            let norm = v.dot(&v).sqrt();
            if norm < 1e-6 {
                continue;
            }
            v *= 2.0 / norm;
            // Keep the prototypes mutually distinguishable.
            let ok = rows.iter().all(|r| (r.dot(&v) / (2.0 * 2.0)).abs() < 0.8);
            if ok {
                rows.push(v);
            }
        }
        let mut out = Array2::zeros((PALETTE_SIZE + 1, IN_CHANNELS));
        for (i, row) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&row);
        }
        out
    })
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk { radius: f64 },
    Rect { half_h: f64, half_w: f64 },
}

impl Shape {
    fn rasterize(&self, cy: f64, cx: f64, h: usize, w: usize) -> BinaryMask {
        match *self {
            Shape::Disk { radius } => BinaryMask::from_shape_fn((h, w), |(y, x)| {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                dy * dy + dx * dx <= radius * radius
            }),
            Shape::Rect { half_h, half_w } => BinaryMask::from_shape_fn((h, w), |(y, x)| {
                (y as f64 - cy).abs() <= half_h && (x as f64 - cx).abs() <= half_w
            }),
        }
    }

    fn extent(&self) -> f64 {
        match *self {
            Shape::Disk { radius } => radius,
            Shape::Rect { half_h, half_w } => half_h.max(half_w),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum MotionPath {
    /// Constant velocity, reflected off `[lo, hi]` per axis.
    Bounce {
        y0: f64,
        x0: f64,
        vy: f64,
        vx: f64,
        y_lo: f64,
        y_hi: f64,
        x_lo: f64,
        x_hi: f64,
    },
    /// One member of a crossing pair. The pair co-travels horizontally at a
    /// calibrated vertical gap; the back member lunges to a dead-center pass
    /// at `t_lunge` (maximal occlusion, only a ring of it stays visible) and
    /// the two swap rows at `t_swap`, each landing where the other was.
    PairedCross {
        y_center: f64,
        x0: f64,
        vx: f64,
        x_lo: f64,
        x_hi: f64,
        gap: f64,
        t_lunge: usize,
        t_swap: usize,
        /// Front member starts on top; the back member does the lunge.
        is_front: bool,
    },
}

fn fold(value: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let period = 2.0 * (hi - lo);
    let mut y = (value - lo) % period;
    if y < 0.0 {
        y += period;
    }
    lo + y.min(period - y)
}

impl MotionPath {
    fn position(&self, t: usize) -> (f64, f64) {
        match *self {
            MotionPath::Bounce {
                y0,
                x0,
                vy,
                vx,
                y_lo,
                y_hi,
                x_lo,
                x_hi,
            } => (
                fold(y0 + vy * t as f64, y_lo, y_hi),
                fold(x0 + vx * t as f64, x_lo, x_hi),
            ),
            MotionPath::PairedCross {
                y_center,
                x0,
                vx,
                x_lo,
                x_hi,
                gap,
                t_lunge,
                t_swap,
                is_front,
            } => {
                let sign = if is_front { -1.0 } else { 1.0 };
                let side = if t < t_swap { sign } else { -sign };
                let mut y = y_center + side * gap / 2.0;
                if !is_front && t == t_lunge {
                    // Dead-center pass behind the front member.
                    y = y_center - gap / 2.0;
                }
                (y, fold(x0 + vx * t as f64, x_lo, x_hi))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct InstancePlan {
    class_id: usize,
    palette_idx: usize,
    latent: Array1<f64>,
    shape: Shape,
    path: MotionPath,
    /// Frames `[start, end)` during which the instance exists.
    active: (usize, usize),
}

impl InstancePlan {
    fn active_at(&self, t: usize) -> bool {
        t >= self.active.0 && t < self.active.1
    }
}

/// One fully generated frame.
#[derive(Debug, Clone)]
pub struct GeneratedFrame {
    pub instances: Vec<GtInstance>,
    pub image: Image,
    pub prediction: FramePrediction,
    /// Ground-truth instance id carried by each raw oracle slot.
    pub gt_slots: Vec<Option<u32>>,
}

/// Deterministic per-frame generator; every frame is a pure function of the
/// plan and the frame index, so videos can be streamed without holding more
/// than one frame.
#[derive(Debug, Clone)]
pub struct VideoPlan {
    spec: ScenarioSpec,
    instances: Vec<InstancePlan>,
    null_latents: Vec<Array1<f64>>,
}

impl VideoPlan {
    pub fn new(spec: &ScenarioSpec) -> Result<VideoPlan> {
        spec.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(subseed(spec.seed, TAG_SETUP, 0));
        let normal = Normal::new(0.0, 1.0).expect("valid stddev");

        // Distinct appearance prototypes per instance; class follows the
        // prototype so appearance carries class information.
        let mut palette_indices: Vec<usize> = (0..PALETTE_SIZE).collect();
        palette_indices.shuffle(&mut rng);
        palette_indices.truncate(spec.num_instances);

        // Mutually separated latents keep noiseless cosine matching exact.
        let mut latents: Vec<Array1<f64>> = Vec::new();
        while latents.len() < spec.num_instances {
            let mut v: Array1<f64> =
                Array1::from_shape_fn(spec.embedding_dim, |_| normal.sample(&mut rng));
            let norm = v.dot(&v).sqrt();
            if norm < 1e-6 {
                continue;
            }
            v *= LATENT_NORM / norm;
            let ok = latents
                .iter()
                .all(|l| (l.dot(&v) / (LATENT_NORM * LATENT_NORM)) < 0.7);
            if ok {
                latents.push(v);
            }
        }

        // Null slots carry fixed low-norm latents of their own, so between
        // frames a null matches itself instead of perturbing real matches.
        let mut null_rng = ChaCha12Rng::seed_from_u64(subseed(spec.seed, TAG_NULL, 0));
        let null_latents: Vec<Array1<f64>> = (0..spec.num_queries)
            .map(|_| {
                let mut v: Array1<f64> =
                    Array1::from_shape_fn(spec.embedding_dim, |_| normal.sample(&mut null_rng));
                let norm = v.dot(&v).sqrt().max(1e-9);
                v *= NULL_EMBED_STD / norm;
                v
            })
            .collect();

        let instances = match spec.motion {
            MotionModel::Crossing => build_crossing(spec, &mut rng, &palette_indices, &latents)?,
            MotionModel::Linear | MotionModel::EnterExit => {
                build_bouncing(spec, &mut rng, &palette_indices, &latents)?
            }
        };
        Ok(VideoPlan {
            spec: *spec,
            instances,
            null_latents,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn num_frames(&self) -> usize {
        self.spec.frames
    }

    /// Post-occlusion ground-truth masks for frame `t`, one entry per
    /// instance that exists there (possibly empty when fully occluded).
    fn raw_masks(&self, t: usize) -> Vec<(u32, usize, BinaryMask)> {
        let h = self.spec.height;
        let w = self.spec.width;
        let mut rendered: Vec<(u32, usize, BinaryMask)> = Vec::new();
        for (k, inst) in self.instances.iter().enumerate() {
            if !inst.active_at(t) {
                continue;
            }
            let (cy, cx) = inst.path.position(t);
            let mut mask = inst.shape.rasterize(cy, cx, h, w);
            // Lower index means nearer: erase pixels hidden by anything in
            // front of this instance.
            for (_, _, nearer) in &rendered {
                mask.zip_mut_with(nearer, |m, &n| *m = *m && !n);
            }
            rendered.push((k as u32, inst.class_id, mask));
        }
        rendered
    }

    /// Ground truth only for frame `t` (visible instances).
    pub fn annotation_frame(&self, t: usize) -> FrameAnnotation {
        let instances = self
            .raw_masks(t)
            .into_iter()
            .filter(|(_, _, mask)| mask.iter().any(|&b| b))
            .map(|(id, class_id, mask)| GtInstance {
                instance_id: id,
                class_id,
                mask,
            })
            .collect();
        FrameAnnotation {
            annotated: true,
            instances,
        }
    }

    /// Generate the full frame bundle for index `t`.
    pub fn frame(&self, t: usize) -> GeneratedFrame {
        let spec = &self.spec;
        let h = spec.height;
        let w = spec.width;
        let n = spec.num_queries;
        let k_classes = spec.num_classes;
        let annotation = self.annotation_frame(t);

        // Image: background prototype everywhere, instance prototypes on
        // their visible pixels, then pixel noise.
        let pal = palette();
        let mut image = Image::zeros((IN_CHANNELS, h, w));
        for ch in 0..IN_CHANNELS {
            let value = pal[(PALETTE_SIZE, ch)];
            image.index_axis_mut(ndarray::Axis(0), ch).fill(value);
        }
        for inst in &annotation.instances {
            let p_idx = self.instances[inst.instance_id as usize].palette_idx;
            for y in 0..h {
                for x in 0..w {
                    if inst.mask[(y, x)] {
                        for ch in 0..IN_CHANNELS {
                            image[(ch, y, x)] = pal[(p_idx, ch)];
                        }
                    }
                }
            }
        }
        let mut img_rng = ChaCha12Rng::seed_from_u64(subseed(spec.seed, TAG_IMAGE, t as u64));
        let noise = Normal::new(0.0, IMAGE_NOISE_STD).expect("valid stddev");
        image.mapv_inplace(|v| v + noise.sample(&mut img_rng));

        // Oracle slots: shuffle the slot order every frame, fill live
        // instances in id order, nulls everywhere else.
        let mut slot_rng = ChaCha12Rng::seed_from_u64(subseed(spec.seed, TAG_SLOTS, t as u64));
        let mut slot_order: Vec<usize> = (0..n).collect();
        slot_order.shuffle(&mut slot_rng);

        let mut gt_slots: Vec<Option<u32>> = vec![None; n];
        let mut queries = Array2::<f64>::zeros((n, spec.embedding_dim));
        let mut soft_masks = Array3::<f64>::from_elem((n, h, w), BG_SOFT);
        let mut dists = Array2::<f64>::zeros((n, k_classes + 1));
        for row in 0..n {
            for col in 0..k_classes {
                dists[(row, col)] = (1.0 - ORACLE_CLASS_CONF) / k_classes as f64;
            }
            dists[(row, k_classes)] = ORACLE_CLASS_CONF;
        }

        for (order, inst) in annotation.instances.iter().enumerate() {
            let slot = slot_order[order];
            let k = inst.instance_id as usize;
            gt_slots[slot] = Some(inst.instance_id);

            let mut emb = self.instances[k].latent.clone();
            if spec.embedding_drift > 0.0 {
                let mut emb_rng = ChaCha12Rng::seed_from_u64(subseed(
                    spec.seed,
                    TAG_EMBED,
                    frame_instance_index(t, k),
                ));
                let drift = Normal::new(0.0, spec.embedding_drift).expect("valid stddev");
                emb.mapv_inplace(|v| v + drift.sample(&mut emb_rng));
            }
            queries.row_mut(slot).assign(&emb);

            let predicted = corrupt_mask(
                &inst.mask,
                spec.mask_corruption,
                subseed(spec.seed, TAG_CORRUPT, frame_instance_index(t, k)),
            );
            for y in 0..h {
                for x in 0..w {
                    if predicted[(y, x)] {
                        soft_masks[(slot, y, x)] = FG_SOFT;
                    }
                }
            }

            let class = inst.class_id;
            for col in 0..=k_classes {
                dists[(slot, col)] = if col == class {
                    ORACLE_CLASS_CONF
                } else {
                    (1.0 - ORACLE_CLASS_CONF) / k_classes as f64
                };
            }
        }

        // Remaining slots take the persistent null latents in a stable
        // order, so nulls match themselves between frames.
        let mut next_null = 0usize;
        for slot in 0..n {
            if gt_slots[slot].is_none() {
                queries.row_mut(slot).assign(&self.null_latents[next_null]);
                next_null += 1;
            }
        }

        let prediction = FramePrediction::new(
            QuerySet::new(queries).expect("oracle embeddings are finite"),
            soft_masks,
            dists,
        )
        .expect("oracle prediction is valid by construction");

        GeneratedFrame {
            instances: annotation.instances,
            image,
            prediction,
            gt_slots,
        }
    }
}

/// Flip `fraction` of the mask's boundary pixels (both sides of the edge).
fn corrupt_mask(mask: &BinaryMask, fraction: f64, seed: u64) -> BinaryMask {
    if fraction <= 0.0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let mut boundary: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = mask[(y, x)];
            let edge = (y > 0 && mask[(y - 1, x)] != v)
                || (y + 1 < h && mask[(y + 1, x)] != v)
                || (x > 0 && mask[(y, x - 1)] != v)
                || (x + 1 < w && mask[(y, x + 1)] != v);
            if edge {
                boundary.push((y, x));
            }
        }
    }
    let flips = (fraction * boundary.len() as f64).round() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    boundary.shuffle(&mut rng);
    let mut out = mask.clone();
    for &(y, x) in boundary.iter().take(flips) {
        out[(y, x)] = !out[(y, x)];
    }
    out
}

fn build_bouncing(
    spec: &ScenarioSpec,
    rng: &mut ChaCha12Rng,
    palette_indices: &[usize],
    latents: &[Array1<f64>],
) -> Result<Vec<InstancePlan>> {
    let h = spec.height as f64;
    let w = spec.width as f64;
    let min_side = spec.height.min(spec.width) as f64;
    let t = spec.frames;

    for _attempt in 0..PLACEMENT_RETRIES {
        let mut instances = Vec::with_capacity(spec.num_instances);
        for k in 0..spec.num_instances {
            let shape = if k % 2 == 0 {
                Shape::Disk {
                    radius: rng.random_range(min_side / 8.0..=min_side / 5.0),
                }
            } else {
                Shape::Rect {
                    half_h: rng.random_range(min_side / 9.0..=min_side / 5.5),
                    half_w: rng.random_range(min_side / 9.0..=min_side / 5.5),
                }
            };
            let margin = shape.extent().max(1.0);
            let y_lo = margin;
            let y_hi = (h - 1.0 - margin).max(y_lo);
            let x_lo = margin;
            let x_hi = (w - 1.0 - margin).max(x_lo);
            let path = MotionPath::Bounce {
                y0: rng.random_range(y_lo..=y_hi),
                x0: rng.random_range(x_lo..=x_hi),
                vy: rng.random_range(-1.2..=1.2),
                vx: rng.random_range(-1.2..=1.2),
                y_lo,
                y_hi,
                x_lo,
                x_hi,
            };
            let active = if spec.motion == MotionModel::EnterExit {
                enter_exit_window(k, spec.num_instances, t)
            } else {
                (0, t)
            };
            instances.push(InstancePlan {
                class_id: palette_indices[k] % spec.num_classes,
                palette_idx: palette_indices[k],
                latent: latents[k].clone(),
                shape,
                path,
                active,
            });
        }
        let candidate = VideoPlan {
            spec: *spec,
            instances,
            null_latents: Vec::new(),
        };
        if placement_is_visible(&candidate) {
            return Ok(candidate.instances);
        }
    }
    Err(Error::generation(format!(
        "could not place {} instances with adequate visibility after {PLACEMENT_RETRIES} attempts",
        spec.num_instances
    )))
}

/// Enter/exit windows: instance 0 enters late, instance 1 leaves early, the
/// rest span the whole video. A single instance does both.
fn enter_exit_window(k: usize, num_instances: usize, t: usize) -> (usize, usize) {
    if num_instances == 1 {
        (t / 4 + 1, (3 * t) / 4)
    } else if k == 0 {
        (t / 3 + 1, t)
    } else if k == 1 {
        (0, t - t / 3 - 1)
    } else {
        (0, t)
    }
}

/// Every instance must be visible in at least half of its active frames.
fn placement_is_visible(plan: &VideoPlan) -> bool {
    let t = plan.spec.frames;
    let mut visible = vec![0usize; plan.instances.len()];
    for frame in 0..t {
        for (id, _, mask) in plan.raw_masks(frame) {
            if mask.iter().any(|&b| b) {
                visible[id as usize] += 1;
            }
        }
    }
    plan.instances.iter().enumerate().all(|(k, inst)| {
        let active = inst.active.1.saturating_sub(inst.active.0);
        active > 0 && visible[k] * 2 >= active
    })
}

fn build_crossing(
    spec: &ScenarioSpec,
    rng: &mut ChaCha12Rng,
    palette_indices: &[usize],
    latents: &[Array1<f64>],
) -> Result<Vec<InstancePlan>> {
    let h = spec.height as f64;
    let w = spec.width as f64;
    let min_side = spec.height.min(spec.width) as f64;
    let t = spec.frames;
    let num_pairs = spec.num_instances / 2;
    let t_lunge = t / 3;
    let t_swap = (2 * t) / 3;

    struct PairSeed {
        y_center: f64,
        r_front: f64,
        r_back: f64,
        x0: f64,
        vx: f64,
    }
    let mut seeds = Vec::with_capacity(num_pairs);
    for pair in 0..num_pairs {
        let r_front = rng.random_range(min_side / 7.0..=min_side / 5.5);
        // The back member is larger: at the dead-center pass a ring of it
        // stays visible, so its oracle embedding never disappears.
        let r_back = r_front * 1.25;
        let band = h / num_pairs as f64;
        let pad = r_back + 1.0;
        let y_min = band * pair as f64 + pad;
        let y_max = (band * (pair + 1) as f64 - pad).max(y_min);
        let margin = r_back + 1.0;
        seeds.push(PairSeed {
            y_center: rng.random_range(y_min..=y_max).clamp(pad, h - 1.0 - pad),
            r_front,
            r_back,
            x0: rng.random_range(margin..=(w - 1.0 - margin).max(margin)),
            vx: rng.random_range(0.3..=0.9) * if rng.random::<bool>() { 1.0 } else { -1.0 },
        });
    }
    // Leftover odd instance bounces linearly.
    let leftover = spec.num_instances % 2 == 1;
    let leftover_shape = Shape::Disk {
        radius: min_side / 7.0,
    };
    let leftover_path = if leftover {
        let margin = leftover_shape.extent().max(1.0);
        Some(MotionPath::Bounce {
            y0: rng.random_range(margin..=(h - 1.0 - margin)),
            x0: rng.random_range(margin..=(w - 1.0 - margin)),
            vy: rng.random_range(-1.0..=1.0),
            vx: rng.random_range(-1.0..=1.0),
            y_lo: margin,
            y_hi: h - 1.0 - margin,
            x_lo: margin,
            x_hi: w - 1.0 - margin,
        })
    } else {
        None
    };

    let build = |gap: f64| -> Vec<InstancePlan> {
        let mut instances = Vec::with_capacity(spec.num_instances);
        for (pair, seed) in seeds.iter().enumerate() {
            let margin = seed.r_back + 1.0;
            let x_lo = margin;
            let x_hi = (w - 1.0 - margin).max(margin);
            let band = h / num_pairs as f64;
            // Keep a sliver of the back member visible even at the smallest
            // gap, and keep the pair inside its band at the largest.
            let gap_floor = 0.6 * seed.r_front;
            let gap_cap = (band - seed.r_front - seed.r_back - 2.0).max(gap_floor);
            for member in 0..2 {
                let k = 2 * pair + member;
                let radius = if member == 0 { seed.r_front } else { seed.r_back };
                instances.push(InstancePlan {
                    class_id: palette_indices[k] % spec.num_classes,
                    palette_idx: palette_indices[k],
                    latent: latents[k].clone(),
                    shape: Shape::Disk { radius },
                    path: MotionPath::PairedCross {
                        y_center: seed.y_center,
                        x0: seed.x0,
                        vx: seed.vx,
                        x_lo,
                        x_hi,
                        gap: gap.clamp(gap_floor, gap_cap),
                        t_lunge,
                        t_swap,
                        is_front: member == 0,
                    },
                    active: (0, t),
                });
            }
        }
        if let Some(path) = leftover_path {
            let k = spec.num_instances - 1;
            instances.push(InstancePlan {
                class_id: palette_indices[k] % spec.num_classes,
                palette_idx: palette_indices[k],
                latent: latents[k].clone(),
                shape: leftover_shape,
                path,
                active: (0, t),
            });
        }
        instances
    };

    let measure = |gap: f64| -> f64 {
        let plan = VideoPlan {
            spec: *spec,
            instances: build(gap),
            null_latents: Vec::new(),
        };
        measured_occlusion_rate(&plan)
    };

    // The co-travel overlap falls off as the gap grows; bisect the gap
    // against the requested occlusion rate.
    let gap_min = 0.0;
    let gap_max = h;
    let rate_hi = measure(gap_min);
    let rate_lo = measure(gap_max);
    if spec.occlusion_rate > rate_hi + 0.05 || spec.occlusion_rate < rate_lo - 0.05 {
        return Err(Error::generation(format!(
            "occlusion rate {} is unreachable for this geometry; achievable range is \
             roughly [{rate_lo:.3}, {rate_hi:.3}]",
            spec.occlusion_rate
        )));
    }
    let mut lo = gap_min;
    let mut hi = gap_max;
    let mut best_gap = gap_min;
    let mut best_err = (rate_hi - spec.occlusion_rate).abs();
    for _ in 0..28 {
        let mid = 0.5 * (lo + hi);
        let rate = measure(mid);
        let err = (rate - spec.occlusion_rate).abs();
        if err < best_err {
            best_err = err;
            best_gap = mid;
        }
        if rate > spec.occlusion_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best_err > 0.05 {
        return Err(Error::generation(format!(
            "calibration missed the occlusion target {} by {best_err:.3}",
            spec.occlusion_rate
        )));
    }
    let instances = build(best_gap);
    let plan = VideoPlan {
        spec: *spec,
        instances,
        null_latents: Vec::new(),
    };
    // The dead-center lunge must register as a heavy-overlap frame.
    if peak_pair_overlap(&plan) < 0.5 {
        return Err(Error::generation(
            "calibrated crossing never reaches 50% bounding-box overlap",
        ));
    }
    Ok(plan.instances)
}

fn bbox_of(mask: &BinaryMask) -> Option<(usize, usize, usize, usize)> {
    let mut y0 = usize::MAX;
    let mut x0 = usize::MAX;
    let mut y1 = 0usize;
    let mut x1 = 0usize;
    let mut any = false;
    for ((y, x), &v) in mask.indexed_iter() {
        if v {
            any = true;
            y0 = y0.min(y);
            x0 = x0.min(x);
            y1 = y1.max(y);
            x1 = x1.max(x);
        }
    }
    any.then_some((y0, x0, y1, x1))
}

fn bbox_iou(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let iy0 = a.0.max(b.0);
    let ix0 = a.1.max(b.1);
    let iy1 = a.2.min(b.2);
    let ix1 = a.3.min(b.3);
    let inter = if iy1 >= iy0 && ix1 >= ix0 {
        ((iy1 - iy0 + 1) * (ix1 - ix0 + 1)) as f64
    } else {
        0.0
    };
    let area = |r: (usize, usize, usize, usize)| ((r.2 - r.0 + 1) * (r.3 - r.1 + 1)) as f64;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn frame_pair_ious(frames: impl Iterator<Item = Vec<(u32, usize, BinaryMask)>>) -> Vec<f64> {
    let mut samples = Vec::new();
    for rendered in frames {
        let boxes: Vec<_> = rendered
            .iter()
            .filter_map(|(_, _, mask)| bbox_of(mask))
            .collect();
        for i in 0..boxes.len() {
            for j in (i + 1)..boxes.len() {
                samples.push(bbox_iou(boxes[i], boxes[j]));
            }
        }
    }
    samples
}

fn measured_occlusion_rate(plan: &VideoPlan) -> f64 {
    let samples = frame_pair_ious((0..plan.spec.frames).map(|t| plan.raw_masks(t)));
    if samples.is_empty() {
        0.0
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    }
}

fn peak_pair_overlap(plan: &VideoPlan) -> f64 {
    frame_pair_ious((0..plan.spec.frames).map(|t| plan.raw_masks(t)))
        .into_iter()
        .fold(0.0, f64::max)
}

/// Mean pairwise bounding-box IoU among co-visible instances, pooled over
/// frames. This is a proxy statistic: boxes come from the visible
/// (post-occlusion) masks, and videos without a co-visible pair score 0.
pub fn bbox_occlusion_rate(annotation: &VideoAnnotation) -> f64 {
    let samples = frame_pair_ious(annotation.frames.iter().map(|f| {
        f.instances
            .iter()
            .map(|i| (i.instance_id, i.class_id, i.mask.clone()))
            .collect()
    }));
    if samples.is_empty() {
        0.0
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    }
}

/// A generated video bundle: ground truth, rendered images, oracle
/// predictions, and the per-frame slot-to-instance key.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub annotation: VideoAnnotation,
    pub images: Vec<Image>,
    pub oracle: Vec<FramePrediction>,
    pub gt_slots: Vec<Vec<Option<u32>>>,
}

impl SyntheticVideo {
    pub fn sample(&self) -> VideoSample {
        VideoSample {
            annotation: self.annotation.clone(),
            images: self.images.clone(),
        }
    }
}

/// Generate one video. Deterministic: the same spec and id produce the same
/// bundle byte for byte.
pub fn generate(spec: &ScenarioSpec, video_id: impl Into<String>) -> Result<SyntheticVideo> {
    let plan = VideoPlan::new(spec)?;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut images = Vec::with_capacity(spec.frames);
    let mut oracle = Vec::with_capacity(spec.frames);
    let mut gt_slots = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let frame = plan.frame(t);
        frames.push(FrameAnnotation {
            annotated: true,
            instances: frame.instances,
        });
        images.push(frame.image);
        oracle.push(frame.prediction);
        gt_slots.push(frame.gt_slots);
    }
    Ok(SyntheticVideo {
        annotation: VideoAnnotation {
            id: video_id.into(),
            height: spec.height,
            width: spec.width,
            frames,
        },
        images,
        oracle,
        gt_slots,
    })
}

/// Generate a batch of videos, ids taken from the paired strings.
pub fn generate_set(
    specs: &[(String, ScenarioSpec)],
    exec: Execution,
) -> Result<Vec<SyntheticVideo>> {
    par::try_map(exec, specs, |(id, spec)| generate(spec, id.clone()))
}

/// Uniformly sub-sample annotated frames per video, keeping
/// `max(1, round(fraction * T))` of them; images and frame count are
/// untouched, dropped frames are only marked unannotated.
pub fn subsample_annotations(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::input("cannot sub-sample an empty dataset"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::input(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for video in &mut out.videos {
        let t = video.annotation.frames.len();
        if t == 0 {
            continue;
        }
        let keep = ((fraction * t as f64).round() as usize).clamp(1, t);
        // Uniform spacing with a random phase: consecutive gaps differ by at
        // most one frame.
        let phase: f64 = rng.random();
        let mut kept = vec![false; t];
        for j in 0..keep {
            let idx = (((j as f64 + phase) * t as f64) / keep as f64).floor() as usize;
            kept[idx.min(t - 1)] = true;
        }
        for (idx, frame) in video.annotation.frames.iter_mut().enumerate() {
            if !kept[idx] {
                frame.annotated = false;
                frame.instances.clear();
            }
        }
    }
    Ok(out)
}
