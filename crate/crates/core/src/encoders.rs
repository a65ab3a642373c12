//! Dual-branch joint embeddings.
//!
//! Language side: a learned token-embedding table, average (or class-token)
//! aggregation, LayerNorm, then two independent affine projections into the
//! joint space. Video side: a linear dimension reduction on clip rows,
//! max-pool moment aggregation onto the grid, a masked 2D conv stack, and
//! two independent 1x1 projection heads. Both sides end l2-normalized, so
//! the inner product of a pair is its cosine score.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Needed for f64 math under no_std; shadowed by inherent methods otherwise.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::params::{bind, Binding, ParamStore};
use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};
use crate::momentmap::{ClipFeatures, ValidMask};
use crate::real::Real;
use crate::rng::{substream, STREAM_PARAM_INIT};

/// Reserved token id playing the class-token role.
pub const CLASS_TOKEN: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggMode {
    Avg,
    Cls,
}

/// Which projection head produced an embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Mutual-matching head.
    Mm,
    /// IoU-regression head.
    Iou,
}

impl Branch {
    fn tag(self) -> &'static str {
        match self {
            Branch::Mm => "mm",
            Branch::Iou => "iou",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Token embedding dimension (the desk-scale stand-in for a pretrained
    /// language encoder's hidden size).
    pub d_sentence: usize,
    /// Raw clip feature dimension coming from the data.
    pub d_input: usize,
    /// Conv channel width after dimension reduction.
    pub d_video: usize,
    /// Joint embedding dimension d^H.
    pub d_joint: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    pub aggregation: AggMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 64,
            d_sentence: 64,
            d_input: 32,
            d_video: 32,
            d_joint: 64,
            conv_layers: 2,
            kernel: 3,
            aggregation: AggMode::Avg,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.conv_layers == 0 || self.d_joint == 0 || self.d_sentence == 0 || self.d_video == 0 {
            return Err(Error::InvalidArgument(
                "conv_layers, d_sentence, d_video, and d_joint must all be >= 1".into(),
            ));
        }
        if self.vocab_size <= CLASS_TOKEN as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {} leaves no room beyond the class token",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Sentence vector in the joint space, unit-norm, tagged by branch.
#[derive(Clone, Copy, Debug)]
pub struct SentenceEmbedding {
    pub id: TensorId,
    pub branch: Branch,
}

/// Per-cell moment vectors `[d_joint, n, n]`, unit-norm on valid cells and
/// exactly zero elsewhere.
#[derive(Clone, Copy, Debug)]
pub struct MomentEmbeddings {
    pub id: TensorId,
    pub branch: Branch,
    pub n: usize,
}

/// Seeded parameter initialization. Weights are scaled by 1/sqrt(fan_in)
/// (conv layers by sqrt(2/fan_in) for ReLU), biases and LayerNorm offsets
/// start at zero, LayerNorm gains at one.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = substream(seed, STREAM_PARAM_INIT, 0);
    let mut store = ParamStore::new();

    let normal = |rng: &mut ChaCha8Rng, count: usize, std: f64| -> Vec<f64> {
        (0..count)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect()
    };

    let (v, ds, din, dv, dh) = (
        cfg.vocab_size,
        cfg.d_sentence,
        cfg.d_input,
        cfg.d_video,
        cfg.d_joint,
    );

    store.insert("lang.token_table", normal(&mut rng, v * ds, 1.0), vec![v, ds])?;
    store.insert("lang.norm.gamma", vec![1.0; ds], vec![1, ds])?;
    store.insert("lang.norm.beta", vec![0.0; ds], vec![1, ds])?;
    for branch in ["mm", "iou"] {
        let std = 1.0 / (ds as f64).sqrt();
        store.insert(
            &format!("lang.proj_{branch}.weight"),
            normal(&mut rng, ds * dh, std),
            vec![ds, dh],
        )?;
        store.insert(&format!("lang.proj_{branch}.bias"), vec![0.0; dh], vec![1, dh])?;
    }

    // Reduction weight carries the bias as its last row; inputs are
    // augmented with a constant ones column.
    let mut reduce = normal(&mut rng, din * dv, 1.0 / (din as f64).sqrt());
    reduce.extend(vec![0.0; dv]);
    store.insert("video.reduce.weight", reduce, vec![din + 1, dv])?;

    // Video-side biases start small but nonzero: a cell whose features die
    // under relu then projects to the bias instead of the exact zero
    // vector, keeping per-cell normalization meaningful.
    for layer in 0..cfg.conv_layers {
        let fan_in = dv * cfg.kernel * cfg.kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        store.insert(
            &format!("video.conv{layer}.weight"),
            normal(&mut rng, dv * dv * cfg.kernel * cfg.kernel, std),
            vec![dv, dv, cfg.kernel, cfg.kernel],
        )?;
        store.insert(&format!("video.conv{layer}.bias"), normal(&mut rng, dv, 0.01), vec![dv])?;
    }
    for branch in ["mm", "iou"] {
        let std = 1.0 / (dv as f64).sqrt();
        store.insert(
            &format!("video.head_{branch}.weight"),
            normal(&mut rng, dh * dv, std),
            vec![dh, dv, 1, 1],
        )?;
        store.insert(&format!("video.head_{branch}.bias"), normal(&mut rng, dh, 0.01), vec![dh])?;
    }
    Ok(store)
}

/// Parameter names that belong to the language encoder backbone and run at
/// the reduced learning rate.
pub fn is_language_backbone(name: &str) -> bool {
    name.starts_with("lang.token_table")
}

/// Parameters exclusive to one branch's heads.
pub fn is_branch_head(name: &str, branch: Branch) -> bool {
    name.contains(&format!("proj_{}", branch.tag())) || name.contains(&format!("head_{}", branch.tag()))
}

/// Model parameters registered in one graph.
pub struct BoundModel {
    pub cfg: EncoderConfig,
    binding: Binding,
}

impl BoundModel {
    pub fn bind<R: Real>(
        graph: &mut Graph<R>,
        store: &ParamStore,
        cfg: &EncoderConfig,
        trainable: bool,
    ) -> Result<BoundModel> {
        cfg.validate()?;
        let binding = bind(graph, store, trainable)?;
        Ok(BoundModel { cfg: cfg.clone(), binding })
    }

    pub fn binding(&self) -> &Binding {
        &self.binding
    }

    fn p(&self, name: &str) -> TensorId {
        self.binding.id(name)
    }

    /// Token ids -> aggregated, LayerNorm'd sentence feature `[1, d_sentence]`.
    pub fn encode_sentence<R: Real>(
        &self,
        g: &mut Graph<R>,
        tokens: &[u32],
        mode: AggMode,
    ) -> Result<TensorId> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token list".into()));
        }
        let v = self.cfg.vocab_size;
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= v) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside vocabulary of {v}"
            )));
        }
        let l = tokens.len();
        // One-hot rows turn the embedding lookup into a matmul.
        let mut onehot = vec![R::zero(); l * v];
        for (row, &t) in tokens.iter().enumerate() {
            onehot[row * v + t as usize] = R::one();
        }
        let onehot = g.input(onehot, &[l, v])?;
        let embedded = g.matmul(onehot, self.p("lang.token_table"))?;

        let mut selector = vec![R::zero(); l];
        match mode {
            AggMode::Avg => {
                let content: Vec<usize> = (0..l).filter(|&i| tokens[i] != CLASS_TOKEN).collect();
                if content.is_empty() {
                    return Err(Error::InvalidArgument(
                        "avg aggregation requires at least one non-class token".into(),
                    ));
                }
                let w = R::from_f64(1.0 / content.len() as f64);
                for i in content {
                    selector[i] = w;
                }
            }
            AggMode::Cls => {
                if tokens[0] != CLASS_TOKEN {
                    return Err(Error::InvalidArgument(format!(
                        "cls aggregation requires the leading class token, got id {}",
                        tokens[0]
                    )));
                }
                selector[0] = R::one();
            }
        }
        let selector = g.input(selector, &[1, l])?;
        let pooled = g.matmul(selector, embedded)?;
        g.layer_norm(pooled, self.p("lang.norm.gamma"), self.p("lang.norm.beta"))
    }

    /// Affine projection of a sentence feature into one branch of the joint
    /// space, l2-normalized.
    pub fn project_sentence<R: Real>(
        &self,
        g: &mut Graph<R>,
        feature: TensorId,
        branch: Branch,
    ) -> Result<SentenceEmbedding> {
        let tag = branch.tag();
        let w = self.p(&format!("lang.proj_{tag}.weight"));
        let b = self.p(&format!("lang.proj_{tag}.bias"));
        let projected = g.matmul(feature, w)?;
        let biased = g.add(projected, b)?;
        let id = g.l2_normalize(biased, 1)?;
        Ok(SentenceEmbedding { id, branch })
    }

    /// Full language path: both branch embeddings for one query.
    pub fn sentence_embeddings<R: Real>(
        &self,
        g: &mut Graph<R>,
        tokens: &[u32],
    ) -> Result<(SentenceEmbedding, SentenceEmbedding)> {
        let f = self.encode_sentence(g, tokens, self.cfg.aggregation)?;
        Ok((
            self.project_sentence(g, f, Branch::Mm)?,
            self.project_sentence(g, f, Branch::Iou)?,
        ))
    }

    /// Clip rows augmented with a ones column, times the reduction weight:
    /// `[n, d_video]`.
    pub fn reduce_clips<R: Real>(&self, g: &mut Graph<R>, clips: &ClipFeatures) -> Result<TensorId> {
        if clips.dim != self.cfg.d_input {
            return Err(Error::ShapeMismatch {
                op: "reduce_clips",
                detail: format!(
                    "clip dim {} vs configured d_input {}",
                    clips.dim, self.cfg.d_input
                ),
            });
        }
        let (n, d) = (clips.n, clips.dim);
        let mut aug = Vec::with_capacity(n * (d + 1));
        for row in 0..n {
            aug.extend(clips.row(row).iter().map(|&v| R::from_f64(v)));
            aug.push(R::one());
        }
        let aug = g.input(aug, &[n, d + 1])?;
        g.matmul(aug, self.p("video.reduce.weight"))
    }

    /// The masked conv stack over an aggregated moment grid `[d_video, n, n]`.
    /// Invalid cells are re-zeroed after every layer.
    pub fn encode_video<R: Real>(
        &self,
        g: &mut Graph<R>,
        grid: TensorId,
        mask: &ValidMask,
    ) -> Result<TensorId> {
        let mut x = grid;
        for layer in 0..self.cfg.conv_layers {
            let w = self.p(&format!("video.conv{layer}.weight"));
            let b = self.p(&format!("video.conv{layer}.bias"));
            let conv = g.conv2d_same_masked(x, w, Some(b), self.cfg.kernel, mask.cells())?;
            let act = g.relu(conv)?;
            x = g.masked_fill(act, mask.cells(), R::zero())?;
        }
        Ok(x)
    }

    /// 1x1 projection head for one branch, per-cell l2 normalization on the
    /// channel axis, invalid cells zeroed.
    pub fn project_moments<R: Real>(
        &self,
        g: &mut Graph<R>,
        features: TensorId,
        mask: &ValidMask,
        branch: Branch,
    ) -> Result<MomentEmbeddings> {
        let tag = branch.tag();
        let w = self.p(&format!("video.head_{tag}.weight"));
        let b = self.p(&format!("video.head_{tag}.bias"));
        let projected = g.conv2d_same_masked(features, w, Some(b), 1, mask.cells())?;
        let normalized = g.l2_normalize(projected, 0)?;
        let id = g.masked_fill(normalized, mask.cells(), R::zero())?;
        Ok(MomentEmbeddings { id, branch, n: mask.n })
    }

    /// Full video path: reduction, moment aggregation, conv stack, and both
    /// branch heads.
    pub fn video_embeddings<R: Real>(
        &self,
        g: &mut Graph<R>,
        clips: &ClipFeatures,
        mask: &ValidMask,
    ) -> Result<(MomentEmbeddings, MomentEmbeddings)> {
        let reduced = self.reduce_clips(g, clips)?;
        let grid = g.maxpool_interval(reduced, clips.n, mask.cells())?;
        let encoded = self.encode_video(g, grid, mask)?;
        Ok((
            self.project_moments(g, encoded, mask, Branch::Mm)?,
            self.project_moments(g, encoded, mask, Branch::Iou)?,
        ))
    }
}

/// Cosine score map `[n, n]`: the inner product of every valid cell's
/// moment vector with the sentence vector. Invalid cells read zero here and
/// are excluded from ranking and losses by masks downstream.
pub fn score_map<R: Real>(
    g: &mut Graph<R>,
    moments: &MomentEmbeddings,
    sentence: &SentenceEmbedding,
) -> Result<TensorId> {
    if moments.branch != sentence.branch {
        return Err(Error::BranchMismatch);
    }
    let n = moments.n;
    let d = g.shape(moments.id)[0];
    let flat = g.reshape(moments.id, &[d, n * n])?;
    let scores = g.matmul(sentence.id, flat)?;
    g.reshape(scores, &[n, n])
}

/// Helper naming scheme for conv layer parameters, used by tests and tools.
pub fn conv_weight_name(layer: usize) -> String {
    format!("video.conv{layer}.weight")
}
