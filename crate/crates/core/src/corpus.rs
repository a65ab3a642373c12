//! In-memory corpus model. Raw corpora carry full-length feature matrices
//! as generated (or loaded from disk by the companion crate); prepared
//! corpora hold the fixed-length sampled clips the model consumes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::momentmap::{sample_clips, ClipFeatures, TimeSpan};

/// A query over a raw video: token ids, the ground-truth span as half-open
/// raw clip indices [start, end), and the planted concept id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawQuery {
    pub tokens: Vec<u32>,
    pub span: (usize, usize),
    pub concept: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub id: String,
    pub duration: f64,
    /// Number of raw rows (l).
    pub raw_clips: usize,
    pub dim: usize,
    /// Row-major `raw_clips x dim`, stored as f32 to match the file format.
    pub features: Vec<f32>,
    pub queries: Vec<RawQuery>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawCorpus {
    pub vocab_size: usize,
    pub videos: Vec<RawVideo>,
}

/// A query with its ground truth in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub tokens: Vec<u32>,
    pub gt: TimeSpan,
    pub concept: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub duration: f64,
    /// Sampled to the model's fixed length N.
    pub clips: ClipFeatures,
    pub queries: Vec<QueryRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub videos: Vec<VideoRecord>,
}

impl Corpus {
    pub fn total_queries(&self) -> usize {
        self.videos.iter().map(|v| v.queries.len()).sum()
    }

    /// A copy with each video's sampled clip rows reordered: new row k is
    /// old row `perms[video][k]`. Each permutation must cover 0..n once.
    pub fn permute_clips(&self, perms: &[Vec<usize>]) -> Result<Corpus> {
        if perms.len() != self.videos.len() {
            return Err(Error::InvalidArgument(format!(
                "{} permutations for {} videos",
                perms.len(),
                self.videos.len()
            )));
        }
        let mut out = self.clone();
        for (video, perm) in out.videos.iter_mut().zip(perms) {
            let n = video.clips.n;
            let dim = video.clips.dim;
            let mut seen = alloc::vec![false; n];
            if perm.len() != n || perm.iter().any(|&r| r >= n || core::mem::replace(&mut seen[r], true)) {
                return Err(Error::InvalidArgument(format!(
                    "bad permutation for video {}: {perm:?}",
                    video.id
                )));
            }
            let mut rows = Vec::with_capacity(n * dim);
            for &r in perm {
                rows.extend_from_slice(video.clips.row(r));
            }
            video.clips.rows = rows;
        }
        Ok(out)
    }
}

/// Samples each raw video down to `n` clips and converts ground-truth
/// spans to seconds.
pub fn prepare(raw: &RawCorpus, n: usize) -> Result<Corpus> {
    let mut videos = Vec::with_capacity(raw.videos.len());
    for rv in &raw.videos {
        let rows: Vec<f64> = rv.features.iter().map(|&v| v as f64).collect();
        let clips = sample_clips(&rows, rv.raw_clips, rv.dim, n, rv.duration)?;
        let mut queries = Vec::with_capacity(rv.queries.len());
        for q in &rv.queries {
            if q.span.0 >= q.span.1 || q.span.1 > rv.raw_clips {
                return Err(Error::Data(format!(
                    "video {}: query span [{}, {}) outside [0, {})",
                    rv.id, q.span.0, q.span.1, rv.raw_clips
                )));
            }
            let sec_per_raw = rv.duration / rv.raw_clips as f64;
            queries.push(QueryRecord {
                tokens: q.tokens.clone(),
                gt: TimeSpan::new(q.span.0 as f64 * sec_per_raw, q.span.1 as f64 * sec_per_raw),
                concept: q.concept,
            });
        }
        if queries.is_empty() {
            return Err(Error::Data(format!("video {} has no queries", rv.id)));
        }
        videos.push(VideoRecord { id: rv.id.clone(), duration: rv.duration, clips, queries });
    }
    if videos.is_empty() {
        return Err(Error::Data("corpus has no videos".into()));
    }
    Ok(Corpus { vocab_size: raw.vocab_size, videos })
}
