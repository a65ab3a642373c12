//! Seeded synthetic corpora with planted cross-modal correspondences.
//!
//! Each video is Gaussian background noise with a few contiguous event
//! spans where a concept prototype is added; each event yields one query
//! whose tokens name the concept amid distractor tokens from a disjoint
//! vocabulary range. Everything is derived from (params, seed).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Needed for f64 math under no_std; shadowed by inherent methods otherwise.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{RawCorpus, RawQuery, RawVideo};
use crate::encoders::CLASS_TOKEN;
use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_GEN_GLOBAL, STREAM_GEN_VIDEO};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthRatioDist {
    /// Event length over video length drawn uniformly from [lo, hi].
    Uniform { lo: f64, hi: f64 },
    /// Weighted mixture of uniform components.
    Mixture { components: Vec<MixComponent> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixComponent {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

impl LengthRatioDist {
    fn validate(&self) -> Result<()> {
        let check = |lo: f64, hi: f64| -> Result<()> {
            if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "length-ratio bounds must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"
                )));
            }
            Ok(())
        };
        match self {
            LengthRatioDist::Uniform { lo, hi } => check(*lo, *hi),
            LengthRatioDist::Mixture { components } => {
                if components.is_empty() || components.iter().all(|c| c.weight <= 0.0) {
                    return Err(Error::InvalidArgument("empty length-ratio mixture".into()));
                }
                for c in components {
                    check(c.lo, c.hi)?;
                    if c.weight < 0.0 {
                        return Err(Error::InvalidArgument("negative mixture weight".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn max_ratio(&self) -> f64 {
        match self {
            LengthRatioDist::Uniform { hi, .. } => *hi,
            LengthRatioDist::Mixture { components } => {
                components.iter().map(|c| c.hi).fold(0.0, f64::max)
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            LengthRatioDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            LengthRatioDist::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut pick = rng.random::<f64>() * total;
                for c in components {
                    pick -= c.weight;
                    if pick <= 0.0 {
                        return c.lo + (c.hi - c.lo) * rng.random::<f64>();
                    }
                }
                let last = components.last().unwrap();
                last.lo + (last.hi - last.lo) * rng.random::<f64>()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    pub videos: usize,
    /// Raw rows per video (l).
    pub raw_clips: usize,
    /// The fixed clip count the model will sample to; events are planted at
    /// least ceil(raw_clips / sampled_clips) rows long so they stay visible
    /// after sampling.
    pub sampled_clips: usize,
    pub feature_dim: usize,
    pub concepts: usize,
    pub events_per_video: usize,
    pub noise_sigma: f64,
    pub vocab_size: usize,
    /// Non-class tokens per query.
    pub query_tokens: usize,
    /// Probability that a non-forced query slot holds a distractor token.
    pub distractor_rate: f64,
    pub length_ratio: LengthRatioDist,
    pub seconds_per_clip: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            videos: 200,
            raw_clips: 64,
            sampled_clips: 16,
            feature_dim: 32,
            concepts: 8,
            events_per_video: 2,
            noise_sigma: 0.5,
            vocab_size: 64,
            query_tokens: 6,
            distractor_rate: 0.5,
            length_ratio: LengthRatioDist::Uniform { lo: 0.12, hi: 0.25 },
            seconds_per_clip: 1.0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.videos == 0 || self.raw_clips == 0 || self.feature_dim == 0 || self.sampled_clips == 0 {
            return Err(Error::InvalidArgument(
                "videos, raw_clips, sampled_clips, and feature_dim must be positive".into(),
            ));
        }
        if self.events_per_video == 0 {
            return Err(Error::InvalidArgument("need at least one event per video".into()));
        }
        if self.concepts < self.events_per_video {
            return Err(Error::InvalidArgument(format!(
                "need distinct concepts per video: {} concepts for {} events",
                self.concepts, self.events_per_video
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("noise sigma must be nonnegative".into()));
        }
        if self.vocab_size <= self.concepts + 1 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {} leaves no distractor range beyond class + {} concept tokens",
                self.vocab_size, self.concepts
            )));
        }
        if self.query_tokens == 0 || !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::InvalidArgument(
                "query_tokens must be >= 1 and distractor_rate in [0,1]".into(),
            ));
        }
        if self.seconds_per_clip <= 0.0 {
            return Err(Error::InvalidArgument("seconds_per_clip must be positive".into()));
        }
        self.length_ratio.validate()?;
        if self.events_per_video as f64 * self.length_ratio.max_ratio() > 0.9 {
            return Err(Error::InvalidArgument(
                "events cannot cover more than 90% of a video; shrink lengths or event count".into(),
            ));
        }
        Ok(())
    }

    /// First token id of the distractor range.
    pub fn distractor_base(&self) -> u32 {
        self.concepts as u32 + 1
    }

    pub fn concept_token(&self, concept: u32) -> u32 {
        concept + 1
    }
}

/// Unit-norm concept prototypes shared by the whole corpus. Like ReLU CNN
/// activations, prototypes are nonnegative and sparse (a quarter of the
/// dimensions, at least two), so coordinatewise max-pooling over a window
/// keeps the concept separable from accumulated background maxima.
pub fn concept_prototypes(params: &GenParams, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, STREAM_GEN_GLOBAL, 0);
    let d = params.feature_dim;
    let support = (d / 4).max(2).min(d);
    (0..params.concepts)
        .map(|_| {
            let mut dims: Vec<usize> = (0..d).collect();
            dims.shuffle(&mut rng);
            dims.truncate(support);
            let mut v = vec![0.0f64; d];
            for &c in &dims {
                let z: f64 = rng.sample(StandardNormal);
                v[c] = z.abs() + 0.25;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in v.iter_mut() {
                *x /= norm;
            }
            v
        })
        .collect()
}

/// Generates the full corpus in memory. (params, seed) determine every
/// byte; videos use independent derived streams.
pub fn generate(params: &GenParams, seed: u64) -> Result<RawCorpus> {
    params.validate()?;
    let prototypes = concept_prototypes(params, seed);
    let mut videos = Vec::with_capacity(params.videos);
    for v in 0..params.videos {
        videos.push(generate_video(params, &prototypes, seed, v)?);
    }
    Ok(RawCorpus { vocab_size: params.vocab_size, videos })
}

fn generate_video(
    params: &GenParams,
    prototypes: &[Vec<f64>],
    seed: u64,
    index: usize,
) -> Result<RawVideo> {
    let mut rng = substream(seed, STREAM_GEN_VIDEO, index as u64);
    let l = params.raw_clips;
    let d = params.feature_dim;
    let e = params.events_per_video;

    // Distinct concepts for this video.
    let mut ids: Vec<u32> = (0..params.concepts as u32).collect();
    ids.shuffle(&mut rng);
    ids.truncate(e);

    // Event lengths in raw rows, at least one sampled clip wide.
    let min_len = (2 * l.div_ceil(params.sampled_clips)).max(1).min(l);
    let mut lengths: Vec<usize> = (0..e)
        .map(|_| {
            let ratio = params.length_ratio.sample(&mut rng);
            ((ratio * l as f64).round() as usize).clamp(min_len, l)
        })
        .collect();
    // The feasibility check makes overflow rare; trim deterministically if
    // rounding still pushed past the video length.
    while lengths.iter().sum::<usize>() > l {
        let longest = lengths
            .iter()
            .enumerate()
            .max_by_key(|(_, &len)| len)
            .map(|(i, _)| i)
            .unwrap();
        lengths[longest] -= 1;
    }

    // Place events in order with random gaps splitting the slack.
    let slack = l - lengths.iter().sum::<usize>();
    let weights: Vec<f64> = (0..=e).map(|_| rng.random::<f64>()).collect();
    let wsum: f64 = weights.iter().sum();
    let mut gaps: Vec<usize> = weights
        .iter()
        .map(|w| ((w / wsum) * slack as f64).floor() as usize)
        .collect();
    let mut leftover = slack - gaps.iter().sum::<usize>();
    let gap_count = gaps.len();
    let mut gi = 0;
    while leftover > 0 {
        gaps[gi % gap_count] += 1;
        leftover -= 1;
        gi += 1;
    }
    let mut spans = Vec::with_capacity(e);
    let mut pos = 0usize;
    for (k, &len) in lengths.iter().enumerate() {
        pos += gaps[k];
        spans.push((pos, pos + len));
        pos += len;
    }

    // Sigma-noise everywhere, prototype added on event rows.
    let mut features = vec![0.0f32; l * d];
    for row in 0..l {
        for c in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            features[row * d + c] = (z * params.noise_sigma) as f32;
        }
    }
    for (k, &(s, t)) in spans.iter().enumerate() {
        let proto = &prototypes[ids[k] as usize];
        for row in s..t {
            for c in 0..d {
                features[row * d + c] += proto[c] as f32;
            }
        }
    }

    // One query per event: class token, one forced concept token, the rest
    // distractors with probability distractor_rate.
    let mut queries = Vec::with_capacity(e);
    for (k, &(s, t)) in spans.iter().enumerate() {
        let concept = ids[k];
        let mut tokens = Vec::with_capacity(params.query_tokens + 1);
        tokens.push(CLASS_TOKEN);
        let forced = rng.random_range(0..params.query_tokens);
        for slot in 0..params.query_tokens {
            let tok = if slot == forced || rng.random::<f64>() >= params.distractor_rate {
                params.concept_token(concept)
            } else {
                rng.random_range(params.distractor_base()..params.vocab_size as u32)
            };
            tokens.push(tok);
        }
        queries.push(RawQuery { tokens, span: (s, t), concept });
    }

    Ok(RawVideo {
        id: format!("video-{index:05}"),
        duration: l as f64 * params.seconds_per_clip,
        raw_clips: l,
        dim: d,
        features,
        queries,
    })
}
