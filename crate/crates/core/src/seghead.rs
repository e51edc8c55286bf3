//! Toy differentiable query-based segmentation head.
//!
//! The head keeps the architectural constraint under test — masks are
//! produced by convolving query embeddings with the final feature map — and
//! replaces everything around it with the smallest thing that trains: a
//! frozen random-projection encoder and a two-layer MLP applied to the
//! learnable initial queries. Per query i the outputs are
//!
//! ```text
//! F[y][x]   = P · image[:, y, x]          (frozen encoder)
//! Q_i       = W2 tanh(W1 q̂_i + b1) + b2   (processed query)
//! mask_iyx  = sigmoid(<Q_i, F[y][x]>)
//! class_i   = softmax(Wc Q_i + bc)         (K classes plus no-object)
//! ```
//!
//! Training matches predictions to ground-truth instances with the Hungarian
//! assignment on the pairwise loss, then descends the matched mask losses
//! plus classification cross-entropy; unmatched predictions are pushed
//! toward the no-object class. Gradients are analytic and exclude the
//! discrete assignment (match first, then differentiate).

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matching::{hungarian, Assignment, CostMatrix};
use crate::types::{BinaryMask, Dataset, FramePrediction, Image, QuerySet};

/// Weight on the mask loss (binary cross entropy plus dice).
pub const MASK_LOSS_WEIGHT: f64 = 5.0;
/// Weight on the classification cross entropy.
pub const CLASS_LOSS_WEIGHT: f64 = 2.0;
/// Default margin for the supervised-matching hinge loss.
pub const DEFAULT_HINGE_MARGIN: f64 = 0.5;

/// Sigmoid outputs are clamped into [CLAMP, 1-CLAMP] so mask probabilities
/// stay strictly inside (0, 1) and the BCE logs stay finite.
const PROB_CLAMP: f64 = 1e-7;

/// Two fully-connected layers with a tanh in between, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Frozen linear map from image channels to feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub projection: Array2<f64>,
}

/// All parameter blocks of the head. The encoder is fixed at initialization
/// and excluded from gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub initial_queries: Array2<f64>,
    pub mlp: Mlp,
    pub class_weights: Array2<f64>,
    pub class_bias: Array1<f64>,
    pub encoder: Encoder,
}

impl HeadParams {
    /// Seeded random initialization.
    pub fn init(
        num_queries: usize,
        embed_dim: usize,
        num_classes: usize,
        in_channels: usize,
        seed: u64,
    ) -> HeadParams {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let dist = |scale: f64, rng: &mut ChaCha12Rng| {
            Normal::new(0.0, scale).expect("valid stddev").sample(rng)
        };
        let qs = 1.0 / (embed_dim as f64).sqrt();
        let es = 1.0 / (in_channels as f64).sqrt();
        let initial_queries = Array2::from_shape_fn((num_queries, embed_dim), |_| dist(qs, &mut rng));
        let w1 = Array2::from_shape_fn((embed_dim, embed_dim), |_| dist(qs, &mut rng));
        let w2 = Array2::from_shape_fn((embed_dim, embed_dim), |_| dist(qs, &mut rng));
        let class_weights = Array2::from_shape_fn((num_classes + 1, embed_dim), |_| dist(qs, &mut rng));
        let projection = Array2::from_shape_fn((embed_dim, in_channels), |_| dist(es, &mut rng));
        HeadParams {
            initial_queries,
            mlp: Mlp {
                w1,
                b1: Array1::zeros(embed_dim),
                w2,
                b2: Array1::zeros(embed_dim),
            },
            class_weights,
            class_bias: Array1::zeros(num_classes + 1),
            encoder: Encoder { projection },
        }
    }

    pub fn num_queries(&self) -> usize {
        self.initial_queries.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.initial_queries.ncols()
    }

    /// Number of real classes K (class head has K+1 rows).
    pub fn num_classes(&self) -> usize {
        self.class_weights.nrows() - 1
    }

    pub fn in_channels(&self) -> usize {
        self.encoder.projection.ncols()
    }

    /// Shape and finiteness checks, used when loading checkpoints.
    pub fn validate(&self) -> Result<()> {
        let c = self.embed_dim();
        if self.mlp.w1.dim() != (c, c)
            || self.mlp.w2.dim() != (c, c)
            || self.mlp.b1.len() != c
            || self.mlp.b2.len() != c
        {
            return Err(Error::input("MLP shapes do not match the embedding dimension"));
        }
        if self.class_weights.ncols() != c {
            return Err(Error::input("class head width does not match the embedding dimension"));
        }
        if self.class_bias.len() != self.class_weights.nrows() {
            return Err(Error::input("class bias length does not match the class head"));
        }
        if self.class_weights.nrows() < 2 {
            return Err(Error::input("class head needs at least one real class"));
        }
        if self.encoder.projection.nrows() != c {
            return Err(Error::input("encoder output does not match the embedding dimension"));
        }
        let finite = self.initial_queries.iter().all(|v| v.is_finite())
            && self.mlp.w1.iter().all(|v| v.is_finite())
            && self.mlp.b1.iter().all(|v| v.is_finite())
            && self.mlp.w2.iter().all(|v| v.is_finite())
            && self.mlp.b2.iter().all(|v| v.is_finite())
            && self.class_weights.iter().all(|v| v.is_finite())
            && self.class_bias.iter().all(|v| v.is_finite())
            && self.encoder.projection.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::input("head parameters contain a non-finite value"));
        }
        Ok(())
    }

    /// Mutable views of the learnable blocks, in a fixed order. The frozen
    /// encoder is not included.
    pub fn learnable_blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        let HeadParams {
            initial_queries,
            mlp,
            class_weights,
            class_bias,
            encoder: _,
        } = self;
        [
            ("initial_queries", initial_queries.as_slice_mut().expect("contiguous")),
            ("mlp_w1", mlp.w1.as_slice_mut().expect("contiguous")),
            ("mlp_b1", mlp.b1.as_slice_mut().expect("contiguous")),
            ("mlp_w2", mlp.w2.as_slice_mut().expect("contiguous")),
            ("mlp_b2", mlp.b2.as_slice_mut().expect("contiguous")),
            ("class_weights", class_weights.as_slice_mut().expect("contiguous")),
            ("class_bias", class_bias.as_slice_mut().expect("contiguous")),
        ]
    }

    /// One gradient-descent step: `theta -= lr * grad`.
    pub fn apply_gradients(&mut self, grads: &ParamGrads, learning_rate: f64) {
        self.initial_queries
            .zip_mut_with(&grads.initial_queries, |p, g| *p -= learning_rate * g);
        self.mlp.w1.zip_mut_with(&grads.w1, |p, g| *p -= learning_rate * g);
        self.mlp.b1.zip_mut_with(&grads.b1, |p, g| *p -= learning_rate * g);
        self.mlp.w2.zip_mut_with(&grads.w2, |p, g| *p -= learning_rate * g);
        self.mlp.b2.zip_mut_with(&grads.b2, |p, g| *p -= learning_rate * g);
        self.class_weights
            .zip_mut_with(&grads.class_weights, |p, g| *p -= learning_rate * g);
        self.class_bias
            .zip_mut_with(&grads.class_bias, |p, g| *p -= learning_rate * g);
    }
}

/// Gradients for every learnable block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub initial_queries: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub class_weights: Array2<f64>,
    pub class_bias: Array1<f64>,
}

impl ParamGrads {
    fn zeros(params: &HeadParams) -> ParamGrads {
        let c = params.embed_dim();
        ParamGrads {
            initial_queries: Array2::zeros(params.initial_queries.dim()),
            w1: Array2::zeros((c, c)),
            b1: Array1::zeros(c),
            w2: Array2::zeros((c, c)),
            b2: Array1::zeros(c),
            class_weights: Array2::zeros(params.class_weights.dim()),
            class_bias: Array1::zeros(params.class_bias.len()),
        }
    }

    /// Read-only views of the blocks, in the same order as
    /// [`HeadParams::learnable_blocks_mut`].
    pub fn blocks(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("initial_queries", self.initial_queries.as_slice().expect("contiguous")),
            ("mlp_w1", self.w1.as_slice().expect("contiguous")),
            ("mlp_b1", self.b1.as_slice().expect("contiguous")),
            ("mlp_w2", self.w2.as_slice().expect("contiguous")),
            ("mlp_b2", self.b2.as_slice().expect("contiguous")),
            ("class_weights", self.class_weights.as_slice().expect("contiguous")),
            ("class_bias", self.class_bias.as_slice().expect("contiguous")),
        ]
    }
}

/// Ground truth for one frame: L disjoint binary masks and their class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    masks: Vec<BinaryMask>,
    classes: Vec<usize>,
}

impl GroundTruthFrame {
    pub fn new(masks: Vec<BinaryMask>, classes: Vec<usize>) -> Result<Self> {
        if masks.len() != classes.len() {
            return Err(Error::input("mask and class counts differ"));
        }
        if let Some(first) = masks.first() {
            if masks.iter().any(|m| m.dim() != first.dim()) {
                return Err(Error::input("ground-truth masks have mixed dimensions"));
            }
        }
        // Instance masks must partition their pixels: no two may overlap.
        for i in 0..masks.len() {
            for j in (i + 1)..masks.len() {
                let overlap = masks[i]
                    .iter()
                    .zip(masks[j].iter())
                    .any(|(&a, &b)| a && b);
                if overlap {
                    return Err(Error::input(format!(
                        "ground-truth masks {i} and {j} overlap"
                    )));
                }
            }
        }
        Ok(GroundTruthFrame { masks, classes })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }
}

/// Cached intermediates of one forward pass, reused by the backward pass.
struct ForwardCache {
    /// (H*W, C) encoded features.
    features: Array2<f64>,
    /// (N, C) tanh activations.
    hidden: Array2<f64>,
    /// (N, C) processed queries.
    queries: Array2<f64>,
    /// (N, H*W) clamped mask probabilities.
    probs: Array2<f64>,
    /// (N, K+1) class probabilities.
    class_probs: Array2<f64>,
    height: usize,
    width: usize,
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn forward_cache(params: &HeadParams, image: &Image) -> Result<ForwardCache> {
    let (c_in, h, w) = image.dim();
    if c_in != params.in_channels() {
        return Err(Error::input(format!(
            "image has {c_in} channels, encoder expects {}",
            params.in_channels()
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::input("image has an empty spatial extent"));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("image contains a non-finite value"));
    }
    let hw = h * w;
    let c = params.embed_dim();
    let n = params.num_queries();

    // Features: F[yx] = P * image[:, y, x].
    let flat = image
        .to_shape((c_in, hw))
        .map_err(|e| Error::input(format!("image reshape failed: {e}")))?;
    let features = flat.t().dot(&params.encoder.projection.t());

    // Queries: two-layer MLP on the initial queries.
    let mut hidden = params.initial_queries.dot(&params.mlp.w1.t());
    hidden += &params.mlp.b1;
    hidden.mapv_inplace(f64::tanh);
    let mut queries = hidden.dot(&params.mlp.w2.t());
    queries += &params.mlp.b2;

    // Masks: sigmoid of query/feature inner products.
    let logits = queries.dot(&features.t());
    let probs = logits.mapv(|z| stable_sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP));

    // Classes: softmax over K+1 logits, stabilized by the row max.
    let mut class_logits = queries.dot(&params.class_weights.t());
    class_logits += &params.class_bias;
    let mut class_probs = Array2::zeros((n, params.num_classes() + 1));
    for (i, row) in class_logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (k, e) in exps.into_iter().enumerate() {
            class_probs[(i, k)] = e / sum;
        }
    }

    for value in queries.iter().chain(probs.iter()).chain(class_probs.iter()) {
        if !value.is_finite() {
            return Err(Error::numeric("forward pass produced a non-finite value"));
        }
    }

    Ok(ForwardCache {
        features,
        hidden,
        queries,
        probs,
        class_probs,
        height: h,
        width: w,
    })
}

fn cache_to_prediction(cache: &ForwardCache) -> Result<FramePrediction> {
    let n = cache.queries.nrows();
    let masks = Array3::from_shape_fn((n, cache.height, cache.width), |(i, y, x)| {
        cache.probs[(i, y * cache.width + x)]
    });
    FramePrediction::new(
        QuerySet::new(cache.queries.clone())?,
        masks,
        cache.class_probs.clone(),
    )
}

/// Run the head on one image.
pub fn forward(params: &HeadParams, image: &Image) -> Result<FramePrediction> {
    cache_to_prediction(&forward_cache(params, image)?)
}

/// Dice loss between a soft mask and a binary target, in [0, 1]. Smoothing
/// constant 1 in numerator and denominator keeps empty-vs-empty at zero.
pub fn dice_loss(pred: ArrayView2<'_, f64>, gt: &BinaryMask) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::input(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if pred.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::input("soft mask values must lie in [0, 1]"));
    }
    let mut inter = 0.0;
    let mut p_sum = 0.0;
    let mut g_sum = 0.0;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        if g {
            inter += p;
            g_sum += 1.0;
        }
        p_sum += p;
    }
    Ok(1.0 - (2.0 * inter + 1.0) / (p_sum + g_sum + 1.0))
}

/// Mean binary cross entropy over pixels; probabilities are clamped away
/// from 0 and 1 before the logs.
pub fn bce_loss(pred: ArrayView2<'_, f64>, gt: &BinaryMask) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::input(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut total = 0.0;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= if g { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / pred.len() as f64)
}

fn class_nll(class_probs: ArrayView1<'_, f64>, target: usize) -> f64 {
    -class_probs[target].max(1e-300).ln()
}

/// Loss components; `total = 5(bce + dice) + 2 cls`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub bce: f64,
    pub dice: f64,
}

fn pairwise_cost(pred: &FramePrediction, gt: &GroundTruthFrame) -> Result<Array2<f64>> {
    let n = pred.num_queries();
    let l = gt.len();
    let mut cost = Array2::zeros((n, l));
    for i in 0..n {
        let mask = pred.soft_mask(i);
        for j in 0..l {
            let bce = bce_loss(mask, &gt.masks()[j])?;
            let dice = dice_loss(mask, &gt.masks()[j])?;
            let cls = class_nll(pred.class_dists().row(i), gt.classes()[j]);
            cost[(i, j)] = MASK_LOSS_WEIGHT * (bce + dice) + CLASS_LOSS_WEIGHT * cls;
        }
    }
    Ok(cost)
}

fn validate_frame_inputs(pred: &FramePrediction, gt: &GroundTruthFrame) -> Result<()> {
    if gt.len() > pred.num_queries() {
        return Err(Error::input(format!(
            "{} ground-truth instances exceed {} prediction slots",
            gt.len(),
            pred.num_queries()
        )));
    }
    if let Some(mask) = gt.masks().first() {
        if mask.dim() != (pred.height(), pred.width()) {
            return Err(Error::input("ground-truth mask dimensions do not match predictions"));
        }
    }
    if gt.classes().iter().any(|&c| c >= pred.num_classes()) {
        return Err(Error::input("ground-truth class id out of range"));
    }
    Ok(())
}

fn breakdown_for_assignment(
    pred: &FramePrediction,
    gt: &GroundTruthFrame,
    assignment: &Assignment,
) -> Result<LossBreakdown> {
    let n = pred.num_queries();
    let l = gt.len();
    let mut matched_gt_of = vec![None; n];
    for &(i, j) in assignment.pairs() {
        matched_gt_of[i] = Some(j);
    }
    let mut bce_sum = 0.0;
    let mut dice_sum = 0.0;
    let mut cls_sum = 0.0;
    for i in 0..n {
        match matched_gt_of[i] {
            Some(j) => {
                let mask = pred.soft_mask(i);
                bce_sum += bce_loss(mask, &gt.masks()[j])?;
                dice_sum += dice_loss(mask, &gt.masks()[j])?;
                cls_sum += class_nll(pred.class_dists().row(i), gt.classes()[j]);
            }
            None => {
                cls_sum += class_nll(pred.class_dists().row(i), pred.num_classes());
            }
        }
    }
    let bce = if l == 0 { 0.0 } else { bce_sum / l as f64 };
    let dice = if l == 0 { 0.0 } else { dice_sum / l as f64 };
    let cls = cls_sum / n as f64;
    Ok(LossBreakdown {
        total: MASK_LOSS_WEIGHT * (bce + dice) + CLASS_LOSS_WEIGHT * cls,
        cls,
        bce,
        dice,
    })
}

/// Assign predictions to ground-truth instances by minimizing the summed
/// pairwise loss, then aggregate: mask terms averaged over instances, class
/// terms averaged over all N queries with unmatched queries trained toward
/// no-object.
pub fn frame_loss(
    pred: &FramePrediction,
    gt: &GroundTruthFrame,
) -> Result<(Assignment, LossBreakdown)> {
    validate_frame_inputs(pred, gt)?;
    let assignment = if gt.is_empty() {
        Assignment::empty()
    } else {
        hungarian(&CostMatrix::new(pairwise_cost(pred, gt)?)?)
    };
    let breakdown = breakdown_for_assignment(pred, gt, &assignment)?;
    Ok((assignment, breakdown))
}

/// Loss at a caller-supplied assignment. Used to probe the loss surface with
/// the matching held fixed, e.g. for finite-difference checks.
pub fn frame_loss_with_assignment(
    pred: &FramePrediction,
    gt: &GroundTruthFrame,
    assignment: &Assignment,
) -> Result<LossBreakdown> {
    validate_frame_inputs(pred, gt)?;
    if assignment.len() != gt.len().min(pred.num_queries()) {
        return Err(Error::input("assignment size does not match the instance count"));
    }
    for &(i, j) in assignment.pairs() {
        if i >= pred.num_queries() || j >= gt.len() {
            return Err(Error::input("assignment pair out of range"));
        }
    }
    breakdown_for_assignment(pred, gt, assignment)
}

/// Forward, match, and backpropagate one frame. Returns the assignment, the
/// loss, and exact gradients of the total loss with the assignment fixed.
pub fn gradient(
    params: &HeadParams,
    image: &Image,
    gt: &GroundTruthFrame,
) -> Result<(Assignment, LossBreakdown, ParamGrads)> {
    let cache = forward_cache(params, image)?;
    let pred = cache_to_prediction(&cache)?;
    let (assignment, breakdown) = frame_loss(&pred, gt)?;

    let n = params.num_queries();
    let l = gt.len();
    let hw = cache.height * cache.width;
    let k_total = params.num_classes() + 1;

    let mut matched_gt_of = vec![None; n];
    for &(i, j) in assignment.pairs() {
        matched_gt_of[i] = Some(j);
    }

    // d loss / d mask logits.
    let mut d_logits = Array2::<f64>::zeros((n, hw));
    let mask_scale = if l == 0 { 0.0 } else { MASK_LOSS_WEIGHT / l as f64 };
    for i in 0..n {
        let Some(j) = matched_gt_of[i] else { continue };
        let gt_mask = &gt.masks()[j];
        let gt_flat: Vec<f64> = gt_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let probs_row = cache.probs.row(i);
        // Dice numerator/denominator at the current prediction.
        let mut inter = 0.0;
        let mut p_sum = 0.0;
        let g_sum: f64 = gt_flat.iter().sum();
        for (idx, &g) in gt_flat.iter().enumerate() {
            inter += probs_row[idx] * g;
            p_sum += probs_row[idx];
        }
        let a = 2.0 * inter + 1.0;
        let b = p_sum + g_sum + 1.0;
        for idx in 0..hw {
            let p = probs_row[idx];
            let g = gt_flat[idx];
            if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                continue; // clamp active: the loss is locally flat in z
            }
            let d_bce = (p - g) / hw as f64;
            let d_dice = (a - 2.0 * g * b) / (b * b) * p * (1.0 - p);
            d_logits[(i, idx)] = mask_scale * (d_bce + d_dice);
        }
    }

    // d loss / d class logits: softmax cross entropy toward the matched
    // class, or toward no-object for unmatched queries.
    let cls_scale = CLASS_LOSS_WEIGHT / n as f64;
    let mut d_class = cache.class_probs.clone();
    for i in 0..n {
        let target = matched_gt_of[i].map_or(params.num_classes(), |j| gt.classes()[j]);
        d_class[(i, target)] -= 1.0;
    }
    d_class *= cls_scale;

    // Chain back through the head.
    let mut d_queries = d_logits.dot(&cache.features);
    d_queries += &d_class.dot(&params.class_weights);

    let d_class_weights = d_class.t().dot(&cache.queries);
    let mut d_class_bias = Array1::zeros(k_total);
    for k in 0..k_total {
        d_class_bias[k] = d_class.column(k).sum();
    }

    let d_hidden = d_queries.dot(&params.mlp.w2);
    let d_w2 = d_queries.t().dot(&cache.hidden);
    let mut d_b2 = Array1::zeros(params.embed_dim());
    for c in 0..params.embed_dim() {
        d_b2[c] = d_queries.column(c).sum();
    }

    let d_pre1 = &d_hidden * &cache.hidden.mapv(|h| 1.0 - h * h);
    let d_w1 = d_pre1.t().dot(&params.initial_queries);
    let mut d_b1 = Array1::zeros(params.embed_dim());
    for c in 0..params.embed_dim() {
        d_b1[c] = d_pre1.column(c).sum();
    }
    let d_initial = d_pre1.dot(&params.mlp.w1);

    let mut grads = ParamGrads::zeros(params);
    grads.initial_queries = d_initial;
    grads.w1 = d_w1;
    grads.b1 = d_b1;
    grads.w2 = d_w2;
    grads.b2 = d_b2;
    grads.class_weights = d_class_weights;
    grads.class_bias = d_class_bias;

    for (_, block) in grads.blocks() {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("gradient contains a non-finite value"));
        }
    }
    Ok((assignment, breakdown, grads))
}

/// Training configuration for plain stochastic gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            iterations: 2000,
            seed: 0,
        }
    }
}

/// One training example: an image and its annotated instances.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Image,
    pub gt: GroundTruthFrame,
}

/// Flatten a dataset into independent annotated frames.
pub fn training_samples(dataset: &Dataset) -> Result<Vec<TrainSample>> {
    let mut samples = Vec::new();
    for video in &dataset.videos {
        for (t, frame) in video.annotation.frames.iter().enumerate() {
            if !frame.annotated {
                continue;
            }
            let masks: Vec<BinaryMask> = frame.instances.iter().map(|i| i.mask.clone()).collect();
            let classes: Vec<usize> = frame.instances.iter().map(|i| i.class_id).collect();
            samples.push(TrainSample {
                image: video.images[t].clone(),
                gt: GroundTruthFrame::new(masks, classes)?,
            });
        }
    }
    Ok(samples)
}

/// Result of a training run: final parameters and the per-iteration loss on
/// the sampled frame (measured before the update).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: HeadParams,
    pub losses: Vec<LossBreakdown>,
}

/// Stochastic gradient descent over independently sampled annotated frames.
/// Deterministic for a fixed seed; diverging losses abort with the failing
/// iteration index.
pub fn train(params: HeadParams, samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::input("training requires at least one annotated frame"));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(Error::input("learning rate must be finite and nonnegative"));
    }
    let mut params = params;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let sample = &samples[rng.random_range(0..samples.len())];
        let (_, loss, grads) =
            gradient(&params, &sample.image, &sample.gt).map_err(|e| Error::Training {
                iteration,
                message: e.to_string(),
            })?;
        if !loss.total.is_finite() {
            return Err(Error::Training {
                iteration,
                message: format!("loss became {}", loss.total),
            });
        }
        params.apply_gradients(&grads, cfg.learning_rate);
        losses.push(loss);
    }
    Ok(TrainReport { params, losses })
}

/// Mean loss over a full sample set with the current parameters.
pub fn dataset_loss(params: &HeadParams, samples: &[TrainSample]) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(Error::input("cannot evaluate the loss of an empty sample set"));
    }
    let mut sums = LossBreakdown {
        total: 0.0,
        cls: 0.0,
        bce: 0.0,
        dice: 0.0,
    };
    for sample in samples {
        let pred = forward(params, &sample.image)?;
        let (_, loss) = frame_loss(&pred, &sample.gt)?;
        sums.total += loss.total;
        sums.cls += loss.cls;
        sums.bce += loss.bce;
        sums.dice += loss.dice;
    }
    let n = samples.len() as f64;
    Ok(LossBreakdown {
        total: sums.total / n,
        cls: sums.cls / n,
        bce: sums.bce / n,
        dice: sums.dice / n,
    })
}

/// Supervised-matching hinge loss: for each ground-truth pair (i, j) the
/// inner product `<a_i, b_j>` must beat every distractor `<a_i, b_j'>` by at
/// least `margin`; violations are summed and averaged over pairs.
pub fn hinge_matching_loss(
    queries_a: &QuerySet,
    queries_b: &QuerySet,
    gt_pairs: &[(usize, usize)],
    margin: f64,
) -> Result<f64> {
    if queries_a.dim() != queries_b.dim() {
        return Err(Error::input("query sets have different embedding dimensions"));
    }
    let mut seen_a = vec![false; queries_a.len()];
    let mut seen_b = vec![false; queries_b.len()];
    for &(i, j) in gt_pairs {
        if i >= queries_a.len() || j >= queries_b.len() {
            return Err(Error::input("ground-truth pair index out of range"));
        }
        if seen_a[i] || seen_b[j] {
            return Err(Error::input("ground-truth pairs must be injective both ways"));
        }
        seen_a[i] = true;
        seen_b[j] = true;
    }
    if gt_pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(i, j) in gt_pairs {
        let correct = queries_a.row(i).dot(&queries_b.row(j));
        for jp in 0..queries_b.len() {
            if jp == j {
                continue;
            }
            let distractor = queries_a.row(i).dot(&queries_b.row(jp));
            total += (margin - correct + distractor).max(0.0);
        }
    }
    Ok(total / gt_pairs.len() as f64)
}

/// Candidate frame pairs for supervised matching, over the video's annotated
/// frame indices. With `limited_range` only neighbours in the annotated
/// sequence pair up; otherwise any two annotated frames at most `max_gap`
/// apart do.
pub fn matching_frame_pairs(
    annotated_frames: &[usize],
    limited_range: bool,
    max_gap: usize,
) -> Vec<(usize, usize)> {
    let mut frames = annotated_frames.to_vec();
    frames.sort_unstable();
    frames.dedup();
    let mut pairs = Vec::new();
    if limited_range {
        for window in frames.windows(2) {
            pairs.push((window[0], window[1]));
        }
    } else {
        for (idx, &a) in frames.iter().enumerate() {
            for &b in &frames[idx + 1..] {
                if b - a <= max_gap {
                    pairs.push((a, b));
                }
            }
        }
    }
    pairs
}
