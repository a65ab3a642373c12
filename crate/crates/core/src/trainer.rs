//! Deterministic training loop: epochs of shuffled whole-video batches,
//! AdamW with a reduced learning rate for the token table, optional early
//! stop of the matching loss, per-epoch validation, and best-checkpoint
//! selection on validation R@1(IoU=0.5).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Needed for f64 math under no_std; shadowed by inherent methods otherwise.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::autodiff::adamw::{adamw_step, AdamWParams, AdamWState};
use crate::autodiff::params::{collect_grads, ParamStore};
use crate::autodiff::{Graph, TensorId};
use crate::corpus::Corpus;
use crate::encoders::{score_map, BoundModel, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, GridConfig, MetricsReport};
use crate::losses::{bce_iou_loss, mutual_matching_loss, total_loss, AnchorScores, LossConfig};
use crate::momentmap::{index_to_time, scale_iou, temporal_iou, ValidMask};
use crate::negatives::{assemble_epoch, audit_negative_sets, build_negative_sets, Batch, NegativeConfig};

/// Model geometry shared by training and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: GridConfig,
    pub encoder: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { grid: GridConfig::default(), encoder: EncoderConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_videos: usize,
    pub lr: f64,
    /// Learning-rate multiplier for the token-embedding table.
    pub lang_lr_ratio: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub seed: u64,
    /// After this epoch the matching loss is still evaluated and logged but
    /// contributes zero gradient.
    pub mm_stop_epoch: Option<usize>,
    /// With false, training uses only the matching objective (scaled by
    /// lambda); requires enabled negatives and lambda > 0.
    pub use_bce: bool,
    pub loss: LossConfig,
    pub negatives: NegativeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_videos: 4,
            lr: 1e-3,
            lang_lr_ratio: 0.1,
            weight_decay: 1e-4,
            grad_clip: 10.0,
            seed: 0,
            mm_stop_epoch: None,
            use_bce: true,
            loss: LossConfig::default(),
            negatives: NegativeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0 < self.lang_lr_ratio && self.lang_lr_ratio <= 1.0) {
            return Err(Error::InvalidArgument("lang_lr_ratio must be in (0, 1]".into()));
        }
        if self.weight_decay < 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::InvalidArgument(
                "weight_decay must be >= 0 and grad_clip > 0".into(),
            ));
        }
        if self.batch_videos == 0 {
            return Err(Error::InvalidArgument("batch_videos must be >= 1".into()));
        }
        self.loss.validate()?;
        if self.matching_enabled() {
            self.negatives.validate()?;
        }
        if !self.use_bce {
            if !self.negatives.any_enabled() {
                return Err(Error::InvalidArgument(
                    "matching-only training needs at least one negative family".into(),
                ));
            }
            if self.loss.lambda <= 0.0 {
                return Err(Error::InvalidArgument(
                    "matching-only training needs lambda > 0".into(),
                ));
            }
            if self.mm_stop_epoch.is_some() {
                return Err(Error::InvalidArgument(
                    "matching-only training cannot early-stop the matching loss".into(),
                ));
            }
        }
        Ok(())
    }

    /// Whether any matching loss is computed at all.
    pub fn matching_enabled(&self) -> bool {
        self.negatives.any_enabled() && self.loss.lambda > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_bce: f64,
    pub l_mm: f64,
    pub l_total: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val: BTreeMap<String, f64>,
    pub best: bool,
}

/// Per-step and per-epoch records. Wall-clock is measured by callers that
/// have a clock and is deliberately not part of the serialized log, so two
/// identical runs produce identical bytes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub audited_anchors: usize,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub checkpoint: ParamStore,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_r1: f64,
}

/// Runs the full loop and returns the validation-selected checkpoint with
/// the log. Fully deterministic given (corpora, cfg).
pub fn train(
    corpus_train: &Corpus,
    corpus_val: &Corpus,
    model: &ModelConfig,
    cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.encoder.validate()?;
    eval_cfg.validate()?;
    let needed_vocab = model.encoder.vocab_size;
    for corpus in [corpus_train, corpus_val] {
        if corpus.vocab_size > needed_vocab {
            return Err(Error::Data(format!(
                "corpus vocabulary {} exceeds model vocabulary {needed_vocab}",
                corpus.vocab_size
            )));
        }
    }
    let mask = model.grid.mask()?;

    let mut store = crate::encoders::init_params(&model.encoder, cfg.seed)?;
    store.set_lr_scale("lang.token_table", cfg.lang_lr_ratio)?;
    let mut opt = AdamWState::new(AdamWParams {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWParams::default()
    });

    let mut log = TrainLog::default();
    let mut step: u64 = 0;
    let mut audit = AuditCounter::default();
    let mut best: Option<(ParamStore, usize, f64)> = None;

    for epoch in 0..cfg.epochs {
        let epoch_seed = cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5eed;
        let batches = assemble_epoch(corpus_train, cfg.batch_videos.min(corpus_train.videos.len()), epoch_seed, &mask)?;
        let mm_active = cfg.matching_enabled()
            && cfg.mm_stop_epoch.map_or(true, |stop| epoch < stop);

        for batch in &batches {
            step += 1;
            let outcome = batch_loss(
                corpus_train,
                batch,
                &mask,
                &store,
                model,
                cfg,
                mm_active,
                epoch_seed,
                Some(&mut audit),
            )?;
            if !outcome.l_total.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {step}")));
            }
            let mut grads = outcome.grads;
            let (grad_norm, clipped) = clip_global_norm(&mut grads, cfg.grad_clip);
            adamw_step(&mut store, &grads, &mut opt)?;
            log.steps.push(StepRecord {
                step,
                epoch,
                l_bce: outcome.l_bce,
                l_mm: outcome.l_mm,
                l_total: outcome.l_total,
                grad_norm,
                clipped,
            });
        }

        let metrics = evaluate(&store, &model.encoder, &model.grid, corpus_val, eval_cfg)?;
        metrics.check_invariants(eval_cfg)?;
        let r1 = metrics.r1_at_05();
        let is_best = best.as_ref().map_or(true, |(_, _, b)| r1 > *b);
        if is_best {
            best = Some((store.clone(), epoch, r1));
        }
        log.epochs.push(EpochRecord { epoch, val: metrics.table, best: is_best });
    }

    log.audited_anchors = audit.audited;
    let (checkpoint, best_epoch, best_r1) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { checkpoint, log, best_epoch, best_r1 })
}

/// Delegates to the evaluation module without touching parameters.
pub fn validate(
    store: &ParamStore,
    model: &ModelConfig,
    corpus: &Corpus,
    eval_cfg: &EvalConfig,
) -> Result<MetricsReport> {
    evaluate(store, &model.encoder, &model.grid, corpus, eval_cfg)
}

const AUDIT_EVERY: usize = 100;

/// Counts anchors and audits 1% of them (every 100th).
#[derive(Clone, Copy, Debug, Default)]
pub struct AuditCounter {
    pub seen: usize,
    pub audited: usize,
}

/// Losses and parameter gradients for one batch at the current parameters.
pub struct BatchLossOutcome {
    pub l_bce: f64,
    pub l_mm: f64,
    /// The optimized objective (BCE + lambda * matching while the matching
    /// loss is active).
    pub l_total: f64,
    pub grads: BTreeMap<String, Vec<f64>>,
}

/// Builds the full loss graph for one batch, runs backward, and returns
/// losses plus gradients. This is the single step the trainer repeats; it
/// is exposed so gradient checks can drive the exact training path.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    corpus: &Corpus,
    batch: &Batch,
    mask: &ValidMask,
    store: &ParamStore,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mm_active: bool,
    seed: u64,
    audit: Option<&mut AuditCounter>,
) -> Result<BatchLossOutcome> {
    let mut local = AuditCounter::default();
    let audit = audit.unwrap_or(&mut local);
    let n = mask.n;
    let mut g = Graph::<f64>::new();
    let bound = BoundModel::bind(&mut g, store, &model.encoder, true)?;

    // Shared video encodings for the batch.
    let mut videos_mm = Vec::with_capacity(batch.video_ids.len());
    let mut videos_iou = Vec::with_capacity(batch.video_ids.len());
    for &vid in &batch.video_ids {
        let video = &corpus.videos[vid];
        let (mm, iou) = bound.video_embeddings(&mut g, &video.clips, mask)?;
        videos_mm.push(mm);
        videos_iou.push(iou);
    }
    // One sentence encoding per anchor (anchors enumerate every query).
    let mut sent_mm = Vec::with_capacity(batch.anchors.len());
    let mut sent_iou = Vec::with_capacity(batch.anchors.len());
    for anchor in &batch.anchors {
        let video = &corpus.videos[batch.video_ids[anchor.video_pos]];
        let tokens = &video.queries[anchor.query_idx].tokens;
        let (mm, iou) = bound.sentence_embeddings(&mut g, tokens)?;
        sent_mm.push(mm);
        sent_iou.push(iou);
    }
    // Anchor lookup by (video position, query index).
    let mut anchor_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (idx, anchor) in batch.anchors.iter().enumerate() {
        anchor_of.insert((anchor.video_pos, anchor.query_idx), idx);
    }

    // Matching-branch score maps are shared across loss terms.
    let mut mm_maps: BTreeMap<(usize, usize), TensorId> = BTreeMap::new();
    let mut mm_map = |g: &mut Graph<f64>, anchor_idx: usize, video_pos: usize| -> Result<TensorId> {
        if let Some(&id) = mm_maps.get(&(anchor_idx, video_pos)) {
            return Ok(id);
        }
        let id = score_map(g, &videos_mm[video_pos], &sent_mm[anchor_idx])?;
        mm_maps.insert((anchor_idx, video_pos), id);
        Ok(id)
    };

    // BCE branch: per-anchor regression onto scaled IoU targets.
    let mut l_bce_id: Option<TensorId> = None;
    if cfg.use_bce {
        let mut acc: Option<TensorId> = None;
        for (idx, anchor) in batch.anchors.iter().enumerate() {
            let video = &corpus.videos[batch.video_ids[anchor.video_pos]];
            let map = score_map(&mut g, &videos_iou[anchor.video_pos], &sent_iou[idx])?;
            let mut targets = alloc::vec![0.0f64; n * n];
            for cell in mask.iter_valid() {
                let span = index_to_time(cell, n, video.duration)?;
                let iou = temporal_iou(span, anchor.gt);
                targets[cell.start * n + cell.end] =
                    scale_iou(iou, cfg.loss.t_min, cfg.loss.t_max)?;
            }
            let term = bce_iou_loss(&mut g, map, &targets, mask, cfg.loss.amplify)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => g.add(prev, term)?,
            });
        }
        let total = acc.expect("batch has anchors");
        l_bce_id = Some(g.scale(total, 1.0 / batch.anchors.len() as f64)?);
    }

    // Matching branch.
    let mut l_mm_id: Option<TensorId> = None;
    if cfg.matching_enabled() {
        let mut anchor_terms = Vec::with_capacity(batch.anchors.len());
        for (idx, anchor) in batch.anchors.iter().enumerate() {
            let sets = build_negative_sets(corpus, batch, idx, &cfg.negatives, mask, seed)?;
            audit.seen += 1;
            if audit.seen % AUDIT_EVERY == 1 {
                audit.audited += 1;
                audit_negative_sets(corpus, batch, idx, &cfg.negatives, mask, &sets)
                    .map_err(|msg| Error::Data(format!("negative-set audit failed: {msg}")))?;
            }

            // Group negative moments per source video into keep masks.
            let mut keeps: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
            for m in &sets.moments {
                keeps
                    .entry(m.video_pos)
                    .or_insert_with(|| alloc::vec![false; n * n])
                    [m.cell.start * n + m.cell.end] = true;
            }
            let mut moment_negs = Vec::with_capacity(keeps.len());
            for (video_pos, keep) in keeps {
                let map = mm_map(&mut g, idx, video_pos)?;
                moment_negs.push((map, keep));
            }
            let mut sentence_negs = Vec::with_capacity(sets.sentences.len());
            for s in &sets.sentences {
                let neg_anchor = anchor_of[&(s.video_pos, s.query_idx)];
                sentence_negs.push(mm_map(&mut g, neg_anchor, anchor.video_pos)?);
            }
            let own_map = mm_map(&mut g, idx, anchor.video_pos)?;
            anchor_terms.push(AnchorScores {
                own_map,
                pos_cell: anchor.cell,
                moment_negs,
                sentence_negs,
                n,
            });
        }
        let (id, _report) = mutual_matching_loss(&mut g, &anchor_terms, &cfg.loss)?;
        l_mm_id = Some(id);
    }

    // Combine. The matching term is dropped from the optimized objective
    // (but still logged) once mm_active is false.
    let optimized = match (l_bce_id, l_mm_id, mm_active) {
        (Some(bce), Some(mm), true) => total_loss(&mut g, bce, mm, cfg.loss.lambda)?,
        (Some(bce), _, _) => bce,
        (None, Some(mm), _) => {
            // Matching-only training keeps the configured weight; with
            // mm stopped there is nothing left to optimize.
            if !mm_active {
                return Err(Error::InvalidArgument(
                    "matching-only training with the matching loss stopped".into(),
                ));
            }
            g.scale(mm, cfg.loss.lambda)?
        }
        (None, None, _) => {
            return Err(Error::InvalidArgument(
                "nothing to optimize: BCE disabled and matching disabled".into(),
            ))
        }
    };

    g.backward(optimized)?;
    let grads = collect_grads(&g, bound.binding())?;

    let l_bce = l_bce_id.map_or(0.0, |id| g.scalar(id));
    let l_mm = l_mm_id.map_or(0.0, |id| g.scalar(id));
    Ok(BatchLossOutcome { l_bce, l_mm, l_total: g.scalar(optimized), grads })
}

/// Scales gradients so the global norm stays at or below `max_norm`.
/// Returns (pre-clip norm, whether clipping fired).
fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> (f64, bool) {
    let mut sq = 0.0f64;
    for g in grads.values() {
        for &v in g {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
        (norm, true)
    } else {
        (norm, false)
    }
}
