//! Batch assembly over whole videos and construction of the four
//! negative-sample families: intra/inter-video negative moments and
//! intra/inter-video negative sentences, with IoU-threshold filtering of
//! in-video moment negatives and false-negative filtering of in-video
//! sentence negatives.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::momentmap::{index_to_time, snap_to_grid, temporal_iou, Interval, TimeSpan, ValidMask};
use crate::rng::{substream, STREAM_EPOCH_SHUFFLE, STREAM_NEG_SUBSAMPLE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleMode {
    /// Use every qualifying negative.
    None,
    /// Downsample each family's union to the size its intra part alone
    /// would have (the number-vs-type experiment).
    MatchIntraCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegativeConfig {
    pub moment_intra: bool,
    pub moment_inter: bool,
    pub sent_intra: bool,
    pub sent_inter: bool,
    /// In-video moment negatives must have IoU with the anchor GT below this.
    pub theta_neg: f64,
    /// In-video sentence negatives whose own GT overlaps the anchor GT at or
    /// above this are removed as likely false negatives.
    pub theta_fn: f64,
    /// Optional per-family cap, applied by seeded subsampling.
    pub cap: Option<usize>,
    pub subsample: SubsampleMode,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        NegativeConfig {
            moment_intra: true,
            moment_inter: true,
            sent_intra: true,
            sent_inter: true,
            theta_neg: 0.5,
            theta_fn: 0.5,
            cap: None,
            subsample: SubsampleMode::None,
        }
    }
}

impl NegativeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta_neg", self.theta_neg), ("theta_fn", self.theta_fn)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if !self.any_enabled() {
            return Err(Error::EmptyNegatives("all negative families disabled".into()));
        }
        Ok(())
    }

    pub fn any_enabled(&self) -> bool {
        self.moment_intra || self.moment_inter || self.sent_intra || self.sent_inter
    }

    /// BCE-only training still assembles batches but never negatives.
    pub fn all_disabled() -> Self {
        NegativeConfig {
            moment_intra: false,
            moment_inter: false,
            sent_intra: false,
            sent_inter: false,
            ..NegativeConfig::default()
        }
    }
}

/// One training anchor: a (video, query) pair with its ground truth and the
/// valid grid cell it snaps to.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    /// Position of the video inside the batch.
    pub video_pos: usize,
    /// Index into that video's query list.
    pub query_idx: usize,
    pub gt: TimeSpan,
    pub cell: Interval,
}

/// A batch of whole videos with the flattened anchor list.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Corpus indices of the batch videos.
    pub video_ids: Vec<usize>,
    pub anchors: Vec<Anchor>,
}

/// All batches of one epoch: a seeded shuffle of the corpus split into
/// chunks of `b` videos (the last chunk may be smaller). Every video
/// appears exactly once per epoch.
pub fn assemble_epoch(corpus: &Corpus, b: usize, seed: u64, mask: &ValidMask) -> Result<Vec<Batch>> {
    if corpus.videos.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    if b == 0 || b > corpus.videos.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {b} videos from a corpus of {}",
            corpus.videos.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.videos.len()).collect();
    let mut rng = substream(seed, STREAM_EPOCH_SHUFFLE, 0);
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    for chunk in order.chunks(b) {
        batches.push(build_batch(corpus, chunk, mask)?);
    }
    Ok(batches)
}

/// The first batch of the epoch the seed defines.
pub fn assemble_batch(corpus: &Corpus, b: usize, seed: u64, mask: &ValidMask) -> Result<Batch> {
    let mut epoch = assemble_epoch(corpus, b, seed, mask)?;
    Ok(epoch.remove(0))
}

fn build_batch(corpus: &Corpus, video_ids: &[usize], mask: &ValidMask) -> Result<Batch> {
    let mut anchors = Vec::new();
    for (pos, &vid) in video_ids.iter().enumerate() {
        let video = &corpus.videos[vid];
        for (qi, q) in video.queries.iter().enumerate() {
            let cell = snap_to_grid(q.gt, mask, video.duration)?;
            anchors.push(Anchor { video_pos: pos, query_idx: qi, gt: q.gt, cell });
        }
    }
    Ok(Batch { video_ids: video_ids.to_vec(), anchors })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MomentNeg {
    /// Position of the source video inside the batch.
    pub video_pos: usize,
    pub cell: Interval,
    /// True when drawn from a different video than the anchor.
    pub inter: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SentenceNeg {
    pub video_pos: usize,
    pub query_idx: usize,
    pub inter: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativeSets {
    pub moments: Vec<MomentNeg>,
    pub sentences: Vec<SentenceNeg>,
}

impl NegativeSets {
    pub fn intra_moment_count(&self) -> usize {
        self.moments.iter().filter(|m| !m.inter).count()
    }

    pub fn intra_sentence_count(&self) -> usize {
        self.sentences.iter().filter(|s| !s.inter).count()
    }
}

/// Builds the negative families for one anchor. `seed` drives cap
/// subsampling; pass the training seed so runs stay reproducible.
pub fn build_negative_sets(
    corpus: &Corpus,
    batch: &Batch,
    anchor_idx: usize,
    cfg: &NegativeConfig,
    mask: &ValidMask,
    seed: u64,
) -> Result<NegativeSets> {
    cfg.validate()?;
    let anchor = batch
        .anchors
        .get(anchor_idx)
        .ok_or_else(|| Error::InvalidArgument(format!("anchor {anchor_idx} outside batch")))?;
    let anchor_video = &corpus.videos[batch.video_ids[anchor.video_pos]];

    let mut sets = NegativeSets::default();

    if cfg.moment_intra {
        for cell in mask.iter_valid() {
            if cell == anchor.cell {
                continue;
            }
            let span = index_to_time(cell, mask.n, anchor_video.duration)?;
            if temporal_iou(span, anchor.gt) < cfg.theta_neg {
                sets.moments.push(MomentNeg { video_pos: anchor.video_pos, cell, inter: false });
            }
        }
    }
    if cfg.moment_inter {
        for pos in 0..batch.video_ids.len() {
            if pos == anchor.video_pos {
                continue;
            }
            for cell in mask.iter_valid() {
                sets.moments.push(MomentNeg { video_pos: pos, cell, inter: true });
            }
        }
    }
    if cfg.sent_intra {
        for (qi, q) in anchor_video.queries.iter().enumerate() {
            if qi == anchor.query_idx {
                continue;
            }
            if temporal_iou(q.gt, anchor.gt) < cfg.theta_fn {
                sets.sentences.push(SentenceNeg {
                    video_pos: anchor.video_pos,
                    query_idx: qi,
                    inter: false,
                });
            }
        }
    }
    if cfg.sent_inter {
        for pos in 0..batch.video_ids.len() {
            if pos == anchor.video_pos {
                continue;
            }
            let video = &corpus.videos[batch.video_ids[pos]];
            for qi in 0..video.queries.len() {
                sets.sentences.push(SentenceNeg { video_pos: pos, query_idx: qi, inter: true });
            }
        }
    }

    if let Some(cap) = cfg.cap {
        let mut rng = substream(seed, STREAM_NEG_SUBSAMPLE, anchor_idx as u64);
        subsample_in_place(&mut sets.moments, cap, &mut rng);
        subsample_in_place(&mut sets.sentences, cap, &mut rng);
    }
    if cfg.subsample == SubsampleMode::MatchIntraCount {
        sets = subsample_to_intra_count(&sets, seed.wrapping_add(anchor_idx as u64));
    }

    if sets.moments.is_empty() && sets.sentences.is_empty() {
        return Err(Error::EmptyNegatives(format!(
            "anchor {anchor_idx}: every enabled family came out empty"
        )));
    }
    Ok(sets)
}

/// Uniformly samples each family's union down to the size its intra part
/// would have on its own. When the union is not larger than the target it
/// is returned unchanged.
pub fn subsample_to_intra_count(sets: &NegativeSets, seed: u64) -> NegativeSets {
    let mut rng = substream(seed, STREAM_NEG_SUBSAMPLE, u64::MAX);
    let mut out = sets.clone();
    let m_target = sets.intra_moment_count();
    let s_target = sets.intra_sentence_count();
    subsample_in_place(&mut out.moments, m_target, &mut rng);
    subsample_in_place(&mut out.sentences, s_target, &mut rng);
    out
}

/// Keeps `target` elements chosen uniformly without replacement, preserving
/// the original relative order.
fn subsample_in_place<T: Copy>(items: &mut Vec<T>, target: usize, rng: &mut rand_chacha::ChaCha8Rng) {
    if items.len() <= target {
        return;
    }
    let mut idxs: Vec<usize> = (0..items.len()).collect();
    idxs.shuffle(rng);
    idxs.truncate(target);
    idxs.sort_unstable();
    let picked: Vec<T> = idxs.into_iter().map(|i| items[i]).collect();
    *items = picked;
}

/// Independent recheck of the emitted sets against the threshold and
/// exclusion invariants; used by the in-run auditor.
pub fn audit_negative_sets(
    corpus: &Corpus,
    batch: &Batch,
    anchor_idx: usize,
    cfg: &NegativeConfig,
    mask: &ValidMask,
    sets: &NegativeSets,
) -> core::result::Result<(), String> {
    let anchor = &batch.anchors[anchor_idx];
    let anchor_video = &corpus.videos[batch.video_ids[anchor.video_pos]];
    for m in &sets.moments {
        if m.inter {
            if !cfg.moment_inter {
                return Err(format!("inter moment emitted with flag off: {m:?}"));
            }
            if m.video_pos == anchor.video_pos {
                return Err(format!("inter moment from the anchor video: {m:?}"));
            }
        } else {
            if !cfg.moment_intra {
                return Err(format!("intra moment emitted with flag off: {m:?}"));
            }
            if m.video_pos != anchor.video_pos {
                return Err(format!("intra moment from another video: {m:?}"));
            }
            if m.cell == anchor.cell {
                return Err("anchor cell emitted as its own negative".into());
            }
            let span = index_to_time(m.cell, mask.n, anchor_video.duration)
                .map_err(|e| format!("{e}"))?;
            let iou = temporal_iou(span, anchor.gt);
            if iou >= cfg.theta_neg {
                return Err(format!(
                    "intra moment {:?} has IoU {iou:.4} >= theta_neg {}",
                    m.cell, cfg.theta_neg
                ));
            }
        }
        if !mask.is_valid(m.cell.start, m.cell.end) {
            return Err(format!("negative moment at invalid cell {:?}", m.cell));
        }
    }
    for s in &sets.sentences {
        if s.inter {
            if !cfg.sent_inter {
                return Err(format!("inter sentence emitted with flag off: {s:?}"));
            }
            if s.video_pos == anchor.video_pos {
                return Err(format!("inter sentence from the anchor video: {s:?}"));
            }
        } else {
            if !cfg.sent_intra {
                return Err(format!("intra sentence emitted with flag off: {s:?}"));
            }
            if s.video_pos != anchor.video_pos {
                return Err(format!("intra sentence from another video: {s:?}"));
            }
            if s.query_idx == anchor.query_idx {
                return Err("anchor query emitted as its own negative".into());
            }
            let gt = anchor_video.queries[s.query_idx].gt;
            let iou = temporal_iou(gt, anchor.gt);
            if iou >= cfg.theta_fn {
                return Err(format!(
                    "intra sentence {} has GT IoU {iou:.4} >= theta_fn {}",
                    s.query_idx, cfg.theta_fn
                ));
            }
        }
    }
    Ok(())
}
