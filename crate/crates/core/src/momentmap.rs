//! 2D candidate-moment grid: fixed-length clip sampling, the sparse
//! validity mask, max-pool moment aggregation, temporal IoU, and the
//! index/time correspondence.
//!
//! Cells are upper-triangular pairs (i, j) with i <= j, both inclusive
//! clip indices; as time spans they denote the half-open interval
//! [i, j+1) in clip units.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Needed for f64 math under no_std; shadowed by inherent methods otherwise.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Inclusive clip-index interval, 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Interval { start, end }
    }

    /// Number of clips covered.
    pub fn duration(&self) -> usize {
        self.end - self.start + 1
    }

    /// The half-open span [start, end+1) in clip units.
    pub fn as_span(&self) -> TimeSpan {
        TimeSpan { start: self.start as f64, end: (self.end + 1) as f64 }
    }
}

/// Half-open time span in seconds (or clip units).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeSpan {
    pub start: f64,
    pub end: f64,
}

impl TimeSpan {
    pub fn new(start: f64, end: f64) -> Self {
        TimeSpan { start, end }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Fixed-length clip features: `n` rows of dimension `dim`, plus the video
/// duration in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub n: usize,
    pub dim: usize,
    /// Row-major `n x dim`.
    pub rows: Vec<f64>,
    pub duration: f64,
}

impl ClipFeatures {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

/// Upper-triangular validity mask over an `n x n` grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidMask {
    pub n: usize,
    keep: Vec<bool>,
}

impl ValidMask {
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.n + j]
    }

    pub fn cells(&self) -> &[bool] {
        &self.keep
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Valid cells in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = Interval> + '_ {
        let n = self.n;
        self.keep.iter().enumerate().filter_map(move |(idx, &k)| {
            k.then(|| Interval::new(idx / n, idx % n))
        })
    }

    /// A single-cell mask over the same grid, used to extract one score.
    pub fn single_cell(n: usize, cell: Interval) -> Vec<bool> {
        let mut keep = vec![false; n * n];
        keep[cell.start * n + cell.end] = true;
        keep
    }
}

/// Sparse candidate sampling: short moments are dense, longer duration
/// bands are strided geometrically. Cell (i, j) with duration
/// d = j - i + 1 is valid iff i <= j and either d <= g, or
/// d % s == 0 && i % s == 0 with s = 2^ceil(log2(d / g)).
pub fn valid_mask(n: usize, g: usize) -> Result<ValidMask> {
    if n == 0 || g == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid size and dense threshold must be positive, got n={n}, g={g}"
        )));
    }
    if g > n {
        return Err(Error::InvalidArgument(format!(
            "dense threshold g={g} exceeds grid size n={n}"
        )));
    }
    let mut keep = vec![false; n * n];
    for i in 0..n {
        for j in i..n {
            let d = j - i + 1;
            let ok = if d <= g {
                true
            } else {
                let s = stride_for(d, g);
                d % s == 0 && i % s == 0
            };
            keep[i * n + j] = ok;
        }
    }
    Ok(ValidMask { n, keep })
}

/// s = 2^ceil(log2(d / g)) computed in integers.
fn stride_for(d: usize, g: usize) -> usize {
    let mut s = 1usize;
    // Smallest power of two with s * g >= d.
    while s * g < d {
        s *= 2;
    }
    s
}

/// Mean-pools `raw` (l x dim, row-major) into `n` fixed segments. Segment k
/// covers raw rows [floor(k*l/n), floor((k+1)*l/n)); an empty segment
/// (only possible when l < n) repeats the row at its left boundary.
pub fn sample_clips(raw: &[f64], l: usize, dim: usize, n: usize, duration: f64) -> Result<ClipFeatures> {
    if l == 0 {
        return Err(Error::InvalidArgument("cannot sample from zero raw rows".into()));
    }
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "sample_clips requires n >= 1 and dim >= 1, got n={n}, dim={dim}"
        )));
    }
    if raw.len() != l * dim {
        return Err(Error::ShapeMismatch {
            op: "sample_clips",
            detail: format!("{} values for {l} rows of dim {dim}", raw.len()),
        });
    }
    let mut rows = vec![0.0f64; n * dim];
    for k in 0..n {
        let lo = k * l / n;
        let hi = (k + 1) * l / n;
        let out = &mut rows[k * dim..(k + 1) * dim];
        if hi > lo {
            for r in lo..hi {
                let src = &raw[r * dim..(r + 1) * dim];
                for (o, &v) in out.iter_mut().zip(src) {
                    *o += v;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            for o in out.iter_mut() {
                *o *= inv;
            }
        } else {
            let r = lo.min(l - 1);
            out.copy_from_slice(&raw[r * dim..(r + 1) * dim]);
        }
    }
    Ok(ClipFeatures { n, dim, rows, duration })
}

/// Moment grid with aggregated features: valid cell (i, j) holds the
/// coordinatewise max of clip rows i..=j, invalid cells are exactly zero.
/// Features are laid out `[dim, n, n]` to match the conv stack.
#[derive(Clone, Debug)]
pub struct MomentGrid {
    pub n: usize,
    pub dim: usize,
    pub mask: ValidMask,
    /// `[dim, n, n]` row-major.
    pub features: Vec<f64>,
}

impl MomentGrid {
    pub fn feature(&self, cell: Interval) -> Vec<f64> {
        (0..self.dim)
            .map(|c| self.features[(c * self.n + cell.start) * self.n + cell.end])
            .collect()
    }
}

pub fn build_moment_map(clips: &ClipFeatures, mask: &ValidMask) -> Result<MomentGrid> {
    if mask.n != clips.n {
        return Err(Error::ShapeMismatch {
            op: "build_moment_map",
            detail: format!("mask for n={}, clips have n={}", mask.n, clips.n),
        });
    }
    let (n, d) = (clips.n, clips.dim);
    let mut features = vec![0.0f64; d * n * n];
    for c in 0..d {
        for i in 0..n {
            let mut cur = clips.rows[i * d + c];
            if mask.is_valid(i, i) {
                features[(c * n + i) * n + i] = cur;
            }
            for j in (i + 1)..n {
                cur = cur.max(clips.rows[j * d + c]);
                if mask.is_valid(i, j) {
                    features[(c * n + i) * n + j] = cur;
                }
            }
        }
    }
    Ok(MomentGrid { n, dim: d, mask: mask.clone(), features })
}

/// Intersection over union of two half-open spans; 0 when disjoint.
pub fn temporal_iou(a: TimeSpan, b: TimeSpan) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = (a.end.max(b.end) - a.start.min(b.start)).max(f64::EPSILON);
    inter / union
}

/// IoU of two grid cells interpreted as spans [i, j+1).
pub fn iou_cells(a: Interval, b: Interval) -> f64 {
    temporal_iou(a.as_span(), b.as_span())
}

/// Linearly rescales `iou` from (t_min, t_max) to (0, 1), truncating.
pub fn scale_iou(iou: f64, t_min: f64, t_max: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&t_min) || t_max > 1.0 || t_min >= t_max {
        return Err(Error::InvalidArgument(format!(
            "require 0 <= t_min < t_max <= 1, got ({t_min}, {t_max})"
        )));
    }
    Ok(((iou - t_min) / (t_max - t_min)).clamp(0.0, 1.0))
}

/// Converts a grid cell to a time span in seconds.
pub fn index_to_time(cell: Interval, n: usize, duration: f64) -> Result<TimeSpan> {
    if duration <= 0.0 {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    Ok(TimeSpan {
        start: cell.start as f64 * duration / n as f64,
        end: (cell.end + 1) as f64 * duration / n as f64,
    })
}

/// Maps a time span in seconds onto the clip grid it covers (inverse of
/// `index_to_time` for grid-aligned spans). Boundaries are snapped to the
/// nearest clip edge and clamped to the grid.
pub fn time_to_index(span: TimeSpan, n: usize, duration: f64) -> Result<Interval> {
    if duration <= 0.0 || span.end <= span.start {
        return Err(Error::InvalidArgument(format!(
            "degenerate span [{}, {}) or duration {duration}",
            span.start, span.end
        )));
    }
    let scale = n as f64 / duration;
    let start = (span.start * scale).round().max(0.0) as usize;
    let end_edge = (span.end * scale).round() as usize;
    let start = start.min(n - 1);
    let end = end_edge.max(start + 1).min(n) - 1;
    Ok(Interval::new(start, end))
}

/// The valid cell with maximal IoU against a time span; ties go to the
/// earlier start (then shorter length via row-major scan order).
pub fn snap_to_grid(span: TimeSpan, mask: &ValidMask, duration: f64) -> Result<Interval> {
    let mut best: Option<(Interval, f64)> = None;
    for cell in mask.iter_valid() {
        let cell_span = index_to_time(cell, mask.n, duration)?;
        let iou = temporal_iou(cell_span, span);
        let better = match best {
            None => true,
            Some((_, b)) => iou > b,
        };
        if better {
            best = Some((cell, iou));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::InvalidArgument("mask has no valid cells".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_clips_identity_when_l_equals_n() {
        let raw: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let clips = sample_clips(&raw, 4, 3, 4, 4.0).unwrap();
        assert_eq!(clips.rows, raw);
    }

    #[test]
    fn sample_clips_symmetric_halves() {
        let raw = vec![1.0, 3.0, 5.0, 7.0];
        let clips = sample_clips(&raw, 4, 1, 2, 4.0).unwrap();
        assert_eq!(clips.rows, vec![2.0, 6.0]);
    }

    #[test]
    fn sample_clips_uneven_segments() {
        // l = 5, n = 2: segments [0,2) and [2,5).
        let raw = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let clips = sample_clips(&raw, 5, 1, 2, 5.0).unwrap();
        assert!((clips.rows[0] - 1.5).abs() < 1e-15);
        assert!((clips.rows[1] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn sample_clips_repeats_rows_when_upsampling() {
        let raw = vec![10.0, 20.0];
        let clips = sample_clips(&raw, 2, 1, 4, 2.0).unwrap();
        assert_eq!(clips.rows, vec![10.0, 10.0, 20.0, 20.0]);
    }

    #[test]
    fn sample_clips_rejects_empty() {
        assert!(sample_clips(&[], 0, 4, 2, 1.0).is_err());
    }

    #[test]
    fn valid_mask_dense_when_g_equals_n() {
        let mask = valid_mask(4, 4).unwrap();
        assert_eq!(mask.count(), 10);
    }

    #[test]
    fn valid_mask_matches_spot_count() {
        // n=8, g=2: 8 of d=1, 7 of d=2, 3 of d=4, 1 of d=8.
        let mask = valid_mask(8, 2).unwrap();
        assert_eq!(mask.count(), 19);
        assert!(mask.is_valid(0, 7));
        assert!(!mask.is_valid(0, 2));
        assert!(mask.is_valid(2, 5)); // d=4, i=2, s=2
    }

    #[test]
    fn valid_mask_rejects_g_above_n() {
        assert!(valid_mask(4, 5).is_err());
    }

    #[test]
    fn moment_map_diagonal_and_pairwise_max() {
        let clips = ClipFeatures { n: 2, dim: 2, rows: vec![1.0, 0.0, 0.0, 2.0], duration: 2.0 };
        let mask = valid_mask(2, 2).unwrap();
        let grid = build_moment_map(&clips, &mask).unwrap();
        assert_eq!(grid.feature(Interval::new(0, 0)), vec![1.0, 0.0]);
        assert_eq!(grid.feature(Interval::new(1, 1)), vec![0.0, 2.0]);
        assert_eq!(grid.feature(Interval::new(0, 1)), vec![1.0, 2.0]);
    }

    #[test]
    fn iou_examples() {
        let a = Interval::new(0, 3); // [0,4)
        let b = Interval::new(2, 5); // [2,6)
        assert!((iou_cells(a, b) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(iou_cells(a, a), 1.0);
        assert_eq!(iou_cells(Interval::new(0, 0), Interval::new(2, 3)), 0.0);
    }

    #[test]
    fn scale_iou_examples() {
        assert_eq!(scale_iou(1.0, 0.5, 1.0).unwrap(), 1.0);
        assert_eq!(scale_iou(0.3, 0.5, 1.0).unwrap(), 0.0);
        assert!((scale_iou(0.75, 0.5, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(scale_iou(0.5, 0.7, 0.7).is_err());
    }

    #[test]
    fn index_time_round_trip() {
        let span = index_to_time(Interval::new(0, 3), 4, 8.0).unwrap();
        assert_eq!(span, TimeSpan::new(0.0, 8.0));
        let span = index_to_time(Interval::new(0, 0), 4, 8.0).unwrap();
        assert_eq!(span, TimeSpan::new(0.0, 2.0));
        for (i, j) in [(0, 0), (1, 3), (2, 2), (0, 3)] {
            let cell = Interval::new(i, j);
            let span = index_to_time(cell, 4, 10.0).unwrap();
            assert_eq!(time_to_index(span, 4, 10.0).unwrap(), cell);
        }
    }

    #[test]
    fn snap_prefers_max_iou_and_earlier_start() {
        let mask = valid_mask(4, 4).unwrap();
        let cell = snap_to_grid(TimeSpan::new(1.9, 4.1), &mask, 8.0).unwrap();
        // Closest grid span is [2, 4) = cell (1, 1).
        assert_eq!(cell, Interval::new(1, 1));
    }
}
