//! Ranking metrics (Rank n@m), temporal NMS, moment-length decomposition,
//! the shuffled-clip sanity check, and score-map/embedding export bundles.
//!
//! Per-query prediction shares each video's forward pass across its
//! queries; everything here is pure given frozen parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Needed for f64 math under no_std; shadowed by inherent methods otherwise.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;
use crate::autodiff::{sigmoid, Graph};
use crate::corpus::{Corpus, VideoRecord};
use crate::encoders::{score_map, BoundModel, EncoderConfig};
use crate::error::{Error, Result};
use crate::losses::{fuse_scores, FusionMode};
use crate::momentmap::{
    index_to_time, iou_cells, temporal_iou, valid_mask, Interval, TimeSpan, ValidMask,
};
use crate::real::Real;
use crate::rng::{substream, STREAM_RANDOM_RANKING, STREAM_SANITY_PERM};

/// Grid geometry: fixed clip count and the dense-duration threshold of the
/// sparse sampling rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub dense_threshold: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 16, dense_threshold: 4 }
    }
}

impl GridConfig {
    pub fn mask(&self) -> Result<ValidMask> {
        valid_mask(self.n, self.dense_threshold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Fused,
    Iou,
    Mm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub nms_threshold: f64,
    pub iou_thresholds: Vec<f64>,
    pub topk: Vec<usize>,
    pub score_source: ScoreSource,
    pub fusion: FusionMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            nms_threshold: 0.5,
            iou_thresholds: vec![0.3, 0.5, 0.7],
            topk: vec![1, 5],
            score_source: ScoreSource::Fused,
            fusion: FusionMode::SigmoidProduct,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.nms_threshold && self.nms_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "nms threshold must be in (0, 1], got {}",
                self.nms_threshold
            )));
        }
        if self.iou_thresholds.is_empty() || self.topk.is_empty() {
            return Err(Error::InvalidArgument("empty metric axes".into()));
        }
        Ok(())
    }
}

/// Ranked candidate list for one query after NMS, in grid-cell form plus
/// the geometry needed to read cells as time spans.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub n: usize,
    pub duration: f64,
    /// Scores non-increasing.
    pub ranked: Vec<(Interval, f64)>,
}

impl Prediction {
    pub fn span(&self, rank: usize) -> Result<TimeSpan> {
        index_to_time(self.ranked[rank].0, self.n, self.duration)
    }
}

/// Greedy temporal NMS: repeatedly keep the best remaining candidate and
/// discard the rest with IoU strictly above the threshold. Ties break by
/// earlier start, then shorter length.
pub fn nms(candidates: &[(Interval, f64)], threshold: f64) -> Result<Vec<(Interval, f64)>> {
    if !(0.0 < threshold && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "nms threshold must be in (0, 1], got {threshold}"
        )));
    }
    let mut order: Vec<(Interval, f64)> = candidates.to_vec();
    order.sort_by(|(ca, sa), (cb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(ca.start.cmp(&cb.start))
            .then(ca.duration().cmp(&cb.duration()))
    });
    let mut kept: Vec<(Interval, f64)> = Vec::new();
    for (cell, score) in order {
        if kept.iter().all(|(k, _)| iou_cells(*k, cell) <= threshold) {
            kept.push((cell, score));
        }
    }
    Ok(kept)
}

pub fn metric_name(n: usize, m: f64) -> String {
    format!("R@{n},IoU={m}")
}

/// Percentage of queries whose top-n list contains a prediction with IoU at
/// least `m` against the ground truth.
pub fn rank_n_at_m(predictions: &[Prediction], gts: &[TimeSpan], n: usize, m: f64) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("rank_n_at_m over an empty query set".into()));
    }
    if predictions.len() != gts.len() {
        return Err(Error::ShapeMismatch {
            op: "rank_n_at_m",
            detail: format!("{} predictions vs {} ground truths", predictions.len(), gts.len()),
        });
    }
    let mut hits = 0usize;
    for (pred, gt) in predictions.iter().zip(gts) {
        let top = pred.ranked.len().min(n);
        for rank in 0..top {
            if temporal_iou(pred.span(rank)?, *gt) >= m {
                hits += 1;
                break;
            }
        }
    }
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// R@1(IoU=0.5) inside the bin; absent for empty bins.
    pub recall: Option<f64>,
}

/// Buckets queries by GT length over video length and reports per-bin
/// R@1(IoU=0.5) with counts.
pub fn length_decomposition(
    predictions: &[Prediction],
    gts: &[TimeSpan],
    bin_width: f64,
) -> Result<Vec<LengthBin>> {
    if !(0.0 < bin_width && bin_width <= 1.0) {
        return Err(Error::InvalidArgument(format!("bad bin width {bin_width}")));
    }
    let nbins = (1.0 / bin_width).ceil() as usize;
    let mut hit = vec![0usize; nbins];
    let mut count = vec![0usize; nbins];
    for (pred, gt) in predictions.iter().zip(gts) {
        let ratio = gt.length() / pred.duration;
        let bin = ((ratio / bin_width) as usize).min(nbins - 1);
        count[bin] += 1;
        if !pred.ranked.is_empty() && temporal_iou(pred.span(0)?, *gt) >= 0.5 {
            hit[bin] += 1;
        }
    }
    Ok((0..nbins)
        .map(|b| LengthBin {
            lo: b as f64 * bin_width,
            hi: ((b + 1) as f64 * bin_width).min(1.0),
            count: count[b],
            recall: (count[b] > 0).then(|| 100.0 * hit[b] as f64 / count[b] as f64),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `R@{n},IoU={m}` -> percentage.
    pub table: BTreeMap<String, f64>,
    pub length_bins: Vec<LengthBin>,
    pub query_count: usize,
}

impl MetricsReport {
    pub fn get(&self, n: usize, m: f64) -> Option<f64> {
        self.table.get(&metric_name(n, m)).copied()
    }

    pub fn r1_at_05(&self) -> f64 {
        self.get(1, 0.5).unwrap_or(0.0)
    }

    /// The structural sanity properties every report must satisfy:
    /// values in [0,100], R@5 >= R@1 at equal m, non-increasing in m.
    pub fn check_invariants(&self, cfg: &EvalConfig) -> Result<()> {
        for (name, &v) in &self.table {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} outside [0,100]")));
            }
        }
        let mut ks = cfg.topk.clone();
        ks.sort_unstable();
        for &m in &cfg.iou_thresholds {
            for w in ks.windows(2) {
                let lo = self.get(w[0], m).unwrap_or(0.0);
                let hi = self.get(w[1], m).unwrap_or(0.0);
                if hi < lo - 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "R@{} < R@{} at IoU={m}",
                        w[1], w[0]
                    )));
                }
            }
        }
        let mut ms = cfg.iou_thresholds.clone();
        ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &k in &cfg.topk {
            for w in ms.windows(2) {
                let easy = self.get(k, w[0]).unwrap_or(0.0);
                let hard = self.get(k, w[1]).unwrap_or(0.0);
                if hard > easy + 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "R@{k} increases from IoU={} to IoU={}",
                        w[0], w[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Computes metrics from ranked predictions.
pub fn score_predictions(
    predictions: &[Prediction],
    gts: &[TimeSpan],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut table = BTreeMap::new();
    for &k in &cfg.topk {
        for &m in &cfg.iou_thresholds {
            table.insert(metric_name(k, m), rank_n_at_m(predictions, gts, k, m)?);
        }
    }
    Ok(MetricsReport {
        table,
        length_bins: length_decomposition(predictions, gts, 0.1)?,
        query_count: predictions.len(),
    })
}

/// Raw branch score maps for one (video, query) pair, flattened `n*n`
/// row-major; invalid cells carry zeros and must be excluded via `valid`.
pub struct QueryScores {
    pub n: usize,
    pub valid: Vec<bool>,
    pub iou: Vec<f64>,
    pub mm: Vec<f64>,
}

impl QueryScores {
    /// Scores for ranking under the configured source. Only valid cells are
    /// returned, so the invalid sentinel never enters comparisons.
    pub fn ranked_candidates(&self, cfg: &EvalConfig) -> Result<Vec<(Interval, f64)>> {
        let fused;
        let source: &[f64] = match cfg.score_source {
            ScoreSource::Iou => &self.iou,
            ScoreSource::Mm => &self.mm,
            ScoreSource::Fused => {
                fused = fuse_scores(&self.iou, &self.mm, 10.0, cfg.fusion)?;
                &fused
            }
        };
        let n = self.n;
        Ok(self
            .valid
            .iter()
            .enumerate()
            .filter_map(|(idx, &keep)| {
                keep.then(|| (Interval::new(idx / n, idx % n), source[idx]))
            })
            .collect())
    }
}

/// Forward pass for every query of one video, sharing the video encoding.
pub fn video_query_scores<R: Real>(
    store: &ParamStore,
    enc: &EncoderConfig,
    mask: &ValidMask,
    video: &VideoRecord,
) -> Result<Vec<QueryScores>> {
    let mut g = Graph::<R>::new();
    let model = BoundModel::bind(&mut g, store, enc, false)?;
    let (mm_emb, iou_emb) = model.video_embeddings(&mut g, &video.clips, mask)?;
    let mut out = Vec::with_capacity(video.queries.len());
    for q in &video.queries {
        let (s_mm, s_iou) = model.sentence_embeddings(&mut g, &q.tokens)?;
        let mm_map = score_map(&mut g, &mm_emb, &s_mm)?;
        let iou_map = score_map(&mut g, &iou_emb, &s_iou)?;
        out.push(QueryScores {
            n: mask.n,
            valid: mask.cells().to_vec(),
            iou: g.value(iou_map).iter().map(|v| v.into_f64()).collect(),
            mm: g.value(mm_map).iter().map(|v| v.into_f64()).collect(),
        });
    }
    Ok(out)
}

/// Ranked post-NMS predictions plus ground truths for a whole corpus, in
/// deterministic (video, query) order.
pub fn predict_corpus<R: Real>(
    store: &ParamStore,
    enc: &EncoderConfig,
    grid: &GridConfig,
    corpus: &Corpus,
    cfg: &EvalConfig,
) -> Result<(Vec<Prediction>, Vec<TimeSpan>)> {
    cfg.validate()?;
    let mask = grid.mask()?;
    let mut predictions = Vec::new();
    let mut gts = Vec::new();
    for video in &corpus.videos {
        let scores = video_query_scores::<R>(store, enc, &mask, video)?;
        for (q, qs) in video.queries.iter().zip(scores) {
            let candidates = qs.ranked_candidates(cfg)?;
            let ranked = nms(&candidates, cfg.nms_threshold)?;
            predictions.push(Prediction { n: grid.n, duration: video.duration, ranked });
            gts.push(q.gt);
        }
    }
    Ok((predictions, gts))
}

/// Full evaluation of frozen parameters on a corpus.
pub fn evaluate(
    store: &ParamStore,
    enc: &EncoderConfig,
    grid: &GridConfig,
    corpus: &Corpus,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let (predictions, gts) = predict_corpus::<f64>(store, enc, grid, corpus, cfg)?;
    score_predictions(&predictions, &gts, cfg)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SanityReport {
    pub ordered: MetricsReport,
    pub shuffled: MetricsReport,
    /// ordered - shuffled per metric; positive means the model uses the
    /// visual input.
    pub gap: BTreeMap<String, f64>,
}

/// One independent seeded permutation per video.
pub fn sanity_permutations(corpus: &Corpus, seed: u64) -> Vec<Vec<usize>> {
    corpus
        .videos
        .iter()
        .enumerate()
        .map(|(vid, video)| {
            let mut rng = substream(seed, STREAM_SANITY_PERM, vid as u64);
            let mut order: Vec<usize> = (0..video.clips.n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Evaluates twice: once as-is and once with every video's sampled clip
/// rows permuted by a seeded permutation, then reports the per-metric gap.
pub fn sanity_check(
    store: &ParamStore,
    enc: &EncoderConfig,
    grid: &GridConfig,
    corpus: &Corpus,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<SanityReport> {
    let ordered = evaluate(store, enc, grid, corpus, cfg)?;
    let shuffled_corpus = corpus.permute_clips(&sanity_permutations(corpus, seed))?;
    let shuffled = evaluate(store, enc, grid, &shuffled_corpus, cfg)?;
    let gap = ordered
        .table
        .iter()
        .map(|(k, v)| (k.clone(), v - shuffled.table.get(k).copied().unwrap_or(0.0)))
        .collect();
    Ok(SanityReport { ordered, shuffled, gap })
}

/// Metrics for uniformly random scores over the valid cells, the baseline
/// oracle untrained models are compared against.
pub fn random_ranking_baseline(
    grid: &GridConfig,
    corpus: &Corpus,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let mask = grid.mask()?;
    let mut rng = substream(seed, STREAM_RANDOM_RANKING, 0);
    let mut predictions = Vec::new();
    let mut gts = Vec::new();
    for video in &corpus.videos {
        for q in &video.queries {
            let candidates: Vec<(Interval, f64)> = mask
                .iter_valid()
                .map(|cell| (cell, rng.random::<f64>()))
                .collect();
            let ranked = nms(&candidates, cfg.nms_threshold)?;
            predictions.push(Prediction { n: grid.n, duration: video.duration, ranked });
            gts.push(q.gt);
        }
    }
    score_predictions(&predictions, &gts, cfg)
}

/// Everything the map/embedding export needs, computed in one forward pass.
#[derive(Clone, Debug)]
pub struct MapExport {
    pub n: usize,
    pub valid: Vec<bool>,
    /// sigmoid(10 * s_iou) per cell.
    pub iou: Vec<f64>,
    /// sigmoid(10 * s_mm) per cell.
    pub mm: Vec<f64>,
    /// Product of the two sigmoid maps.
    pub fused: Vec<f64>,
    pub d_joint: usize,
    /// Valid cells in row-major order.
    pub cells: Vec<Interval>,
    /// Matching-branch moment vectors, one `d_joint` row per valid cell.
    pub moment_vectors: Vec<f32>,
    /// Matching-branch sentence vector.
    pub sentence_vector: Vec<f32>,
}

/// Score maps and raw matching-branch embeddings for one (video, query).
pub fn export_maps(
    store: &ParamStore,
    enc: &EncoderConfig,
    grid: &GridConfig,
    video: &VideoRecord,
    query_idx: usize,
    amplify: f64,
) -> Result<MapExport> {
    if query_idx >= video.queries.len() {
        return Err(Error::InvalidArgument(format!(
            "video {} has {} queries, asked for {query_idx}",
            video.id,
            video.queries.len()
        )));
    }
    let mask = grid.mask()?;
    let mut g = Graph::<f64>::new();
    let model = BoundModel::bind(&mut g, store, enc, false)?;
    let (mm_emb, iou_emb) = model.video_embeddings(&mut g, &video.clips, &mask)?;
    let q = &video.queries[query_idx];
    let (s_mm, s_iou) = model.sentence_embeddings(&mut g, &q.tokens)?;
    let mm_map = score_map(&mut g, &mm_emb, &s_mm)?;
    let iou_map = score_map(&mut g, &iou_emb, &s_iou)?;

    let n = mask.n;
    let iou: Vec<f64> = g.value(iou_map).iter().map(|&v| sigmoid(amplify * v)).collect();
    let mm: Vec<f64> = g.value(mm_map).iter().map(|&v| sigmoid(amplify * v)).collect();
    let fused: Vec<f64> = iou.iter().zip(&mm).map(|(a, b)| a * b).collect();

    let emb = g.value(mm_emb.id);
    let d = enc.d_joint;
    let cells: Vec<Interval> = mask.iter_valid().collect();
    let mut moment_vectors = Vec::with_capacity(cells.len() * d);
    for cell in &cells {
        for c in 0..d {
            moment_vectors.push(emb[(c * n + cell.start) * n + cell.end] as f32);
        }
    }
    let sentence_vector: Vec<f32> = g.value(s_mm.id).iter().map(|&v| v as f32).collect();
    Ok(MapExport {
        n,
        valid: mask.cells().to_vec(),
        iou,
        mm,
        fused,
        d_joint: d,
        cells,
        moment_vectors,
        sentence_vector,
    })
}
