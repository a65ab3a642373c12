//! Training objectives: BCE regression onto scaled IoU targets over the
//! valid grid (with cosine scores amplified before the sigmoid), the
//! bidirectional pair-discrimination ("mutual matching") loss with margin
//! and temperature, their weighted combination, and score fusion.
//!
//! Softmax-form terms subtract a max shift before exponentiation. The
//! shift is read from forward values and entered as a constant; softmax is
//! shift-invariant, so both the value and the gradient are unchanged.

use alloc::vec;
use alloc::vec::Vec;

// Needed for f64 math under no_std; shadowed by inherent methods otherwise.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, TensorId};
use crate::error::{Error, Result};
use crate::momentmap::{Interval, ValidMask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Margin subtracted from the positive similarity.
    pub margin: f64,
    /// Temperature for the moment direction p(i_v|s).
    pub tau_s: f64,
    /// Temperature for the sentence direction p(i_s|v).
    pub tau_v: f64,
    /// Weight of the matching loss in the total.
    pub lambda: f64,
    /// Cosine amplification before the sigmoid (both in the BCE loss and
    /// in score fusion).
    pub amplify: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.3,
            tau_s: 0.1,
            tau_v: 0.1,
            lambda: 0.05,
            amplify: 10.0,
            t_min: 0.5,
            t_max: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_s <= 0.0 || self.tau_v <= 0.0 {
            return Err(Error::InvalidArgument("temperatures must be positive".into()));
        }
        if self.lambda < 0.0 || self.margin < 0.0 || self.amplify <= 0.0 {
            return Err(Error::InvalidArgument(
                "require lambda >= 0, margin >= 0, amplify > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.t_min) || self.t_max > 1.0 || self.t_min >= self.t_max {
            return Err(Error::InvalidArgument("require 0 <= t_min < t_max <= 1".into()));
        }
        Ok(())
    }
}

/// BCE over the valid cells of one score map against scaled-IoU targets.
///
/// Computed in logit form, `mean_valid(softplus(a*s) - y * a*s)`, which is
/// the same function as `-mean(y log p + (1-y) log(1-p))` with
/// `p = sigmoid(a*s)` but avoids `log(0)`.
pub fn bce_iou_loss(
    g: &mut Graph<f64>,
    score_map: TensorId,
    targets: &[f64],
    mask: &ValidMask,
    amplify: f64,
) -> Result<TensorId> {
    let n = mask.n;
    if g.shape(score_map) != [n, n] {
        return Err(Error::ShapeMismatch {
            op: "bce_iou_loss",
            detail: alloc::format!("score map {:?}, mask n={n}", g.shape(score_map)),
        });
    }
    if targets.len() != n * n {
        return Err(Error::ShapeMismatch {
            op: "bce_iou_loss",
            detail: alloc::format!("{} targets for an {n}x{n} map", targets.len()),
        });
    }
    let count = mask.count();
    if count == 0 {
        return Err(Error::InvalidArgument("no valid cells to regress".into()));
    }
    let mut y = vec![0.0f64; n * n];
    for (idx, keep) in mask.cells().iter().enumerate() {
        if *keep {
            let t = targets[idx];
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "target {t} at cell {idx} outside [0,1]"
                )));
            }
            y[idx] = t;
        }
    }

    let z = g.scale(score_map, amplify)?;
    let ez = g.exp(z)?;
    let ez1 = g.offset(ez, 1.0)?;
    let softplus = g.log(ez1)?;
    let softplus = g.masked_fill(softplus, mask.cells(), 0.0)?;
    let sum_softplus = g.sum(softplus)?;

    let z_flat = g.reshape(z, &[1, n * n])?;
    let y_col = g.input(y, &[n * n, 1])?;
    let yz = g.matmul(z_flat, y_col)?;
    let yz = g.reshape(yz, &[1])?;
    let neg_yz = g.scale(yz, -1.0)?;

    let total = g.add(sum_softplus, neg_yz)?;
    g.scale(total, 1.0 / count as f64)
}

/// Probability that the positive pair wins against the sampled negatives in
/// a non-parametric softmax with margin `m` and temperature `tau`.
pub fn pair_positive_prob(pos: f64, negs: &[f64], margin: f64, tau: f64) -> Result<f64> {
    if negs.is_empty() {
        return Err(Error::EmptyNegatives("pair_positive_prob needs at least one negative".into()));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    const SLACK: f64 = 1e-9;
    for &s in core::iter::once(&pos).chain(negs) {
        if !(-1.0 - SLACK..=1.0 + SLACK).contains(&s) {
            return Err(Error::InvalidArgument(alloc::format!(
                "similarity {s} outside [-1, 1]"
            )));
        }
    }
    let u = (pos - margin) / tau;
    let shift = negs.iter().fold(u, |acc, &s| acc.max(s / tau));
    let e_pos = (u - shift).exp();
    let denom = negs.iter().fold(e_pos, |acc, &s| acc + (s / tau - shift).exp());
    Ok(e_pos / denom)
}

/// Graph-side inputs for one anchor's matching terms. All score maps are
/// from the matching branch; masks select which cells of each map act as
/// negatives.
pub struct AnchorScores {
    /// Score map of (anchor sentence, anchor video).
    pub own_map: TensorId,
    /// The anchor's snapped positive cell on `own_map`.
    pub pos_cell: Interval,
    /// Per-video negative moments: (score map of anchor sentence vs that
    /// video, keep-mask of its negative cells).
    pub moment_negs: Vec<(TensorId, Vec<bool>)>,
    /// Negative sentences: score maps of (other sentence, anchor video);
    /// the score is read at `pos_cell`.
    pub sentence_negs: Vec<TensorId>,
    pub n: usize,
}

/// Forward probabilities per anchor, for logging and tests.
#[derive(Clone, Debug, Default)]
pub struct MatchingReport {
    /// (p(i_v|s), p(i_s|v)) per anchor; `None` where a direction had no
    /// negatives and contributed zero.
    pub per_anchor: Vec<(Option<f64>, Option<f64>)>,
}

/// Sum over anchors of `-log p(i_v|s) - log p(i_s|v)` (Eq.-7-style, no
/// normalization). Directions without negatives contribute zero; if every
/// direction of every anchor is empty the loss is undefined and rejected.
pub fn mutual_matching_loss(
    g: &mut Graph<f64>,
    anchors: &[AnchorScores],
    cfg: &LossConfig,
) -> Result<(TensorId, MatchingReport)> {
    cfg.validate()?;
    let mut report = MatchingReport::default();
    let mut terms: Vec<TensorId> = Vec::new();

    for anchor in anchors {
        let n = anchor.n;
        let pos_keep = ValidMask::single_cell(n, anchor.pos_cell);
        let pos_only = g.masked_fill(anchor.own_map, &pos_keep, 0.0)?;
        let pos_flat = g.reshape(pos_only, &[1, n * n])?;
        let ones = g.full(1.0, &[n * n, 1]);
        let pos_scalar = g.matmul(pos_flat, ones)?;
        let pos_scalar = g.reshape(pos_scalar, &[1])?;
        let pos_val = g.scalar(pos_scalar);

        // Moment direction: contrast the positive cell against negative
        // moments across the batch, temperature tau_s.
        let has_moment_negs = anchor.moment_negs.iter().any(|(_, keep)| keep.iter().any(|&k| k));
        let p_moment = if has_moment_negs {
            let u_val = (pos_val - cfg.margin) / cfg.tau_s;
            let mut shift = u_val;
            for (map, keep) in &anchor.moment_negs {
                let vals = g.value(*map);
                for (idx, &k) in keep.iter().enumerate() {
                    if k {
                        shift = shift.max(vals[idx] / cfg.tau_s);
                    }
                }
            }
            let u = g.offset(pos_scalar, -cfg.margin)?;
            let u = g.scale(u, 1.0 / cfg.tau_s)?;
            let u_shifted = g.offset(u, -shift)?;
            let e_pos = g.exp(u_shifted)?;
            let mut denom = e_pos;
            for (map, keep) in &anchor.moment_negs {
                if !keep.iter().any(|&k| k) {
                    continue;
                }
                let scaled = g.scale(*map, 1.0 / cfg.tau_s)?;
                let shifted = g.offset(scaled, -shift)?;
                let exps = g.exp(shifted)?;
                let masked = g.masked_fill(exps, keep, 0.0)?;
                let part = g.sum(masked)?;
                denom = g.add(denom, part)?;
            }
            let log_denom = g.log(denom)?;
            let neg_log_denom = g.scale(log_denom, -1.0)?;
            let log_p = g.add(u_shifted, neg_log_denom)?;
            let neg_log_p = g.scale(log_p, -1.0)?;
            terms.push(neg_log_p);
            Some(g.scalar(log_p).exp())
        } else {
            None
        };

        // Sentence direction: contrast against other sentences scored at
        // the anchor's positive cell, temperature tau_v.
        let p_sentence = if !anchor.sentence_negs.is_empty() {
            let mut neg_scalars = Vec::with_capacity(anchor.sentence_negs.len());
            let mut shift = (pos_val - cfg.margin) / cfg.tau_v;
            for &map in &anchor.sentence_negs {
                let cell_val = g.value(map)[anchor.pos_cell.start * n + anchor.pos_cell.end];
                shift = shift.max(cell_val / cfg.tau_v);
                let only = g.masked_fill(map, &pos_keep, 0.0)?;
                let flat = g.reshape(only, &[1, n * n])?;
                let ones = g.full(1.0, &[n * n, 1]);
                let s = g.matmul(flat, ones)?;
                neg_scalars.push(g.reshape(s, &[1])?);
            }
            let u = g.offset(pos_scalar, -cfg.margin)?;
            let u = g.scale(u, 1.0 / cfg.tau_v)?;
            let u_shifted = g.offset(u, -shift)?;
            let e_pos = g.exp(u_shifted)?;
            let mut denom = e_pos;
            for s in neg_scalars {
                let scaled = g.scale(s, 1.0 / cfg.tau_v)?;
                let shifted = g.offset(scaled, -shift)?;
                let e = g.exp(shifted)?;
                denom = g.add(denom, e)?;
            }
            let log_denom = g.log(denom)?;
            let neg_log_denom = g.scale(log_denom, -1.0)?;
            let log_p = g.add(u_shifted, neg_log_denom)?;
            let neg_log_p = g.scale(log_p, -1.0)?;
            terms.push(neg_log_p);
            Some(g.scalar(log_p).exp())
        } else {
            None
        };

        report.per_anchor.push((p_moment, p_sentence));
    }

    if terms.is_empty() {
        return Err(Error::EmptyNegatives(
            "both matching directions empty for every anchor".into(),
        ));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok((total, report))
}

/// `L = L_bce + lambda * L_mm`.
pub fn total_loss(
    g: &mut Graph<f64>,
    l_bce: TensorId,
    l_mm: TensorId,
    lambda: f64,
) -> Result<TensorId> {
    let weighted = g.scale(l_mm, lambda)?;
    g.add(l_bce, weighted)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `sigmoid(a*s_iou) * sigmoid(a*s_mm)`: positive, monotone per branch.
    SigmoidProduct,
    /// The literal product `s_iou * s_mm` of raw cosines.
    RawProduct,
}

/// Fuses the two branch score maps cell by cell. Inputs and output share
/// one layout; validity handling stays with the caller.
pub fn fuse_scores(s_iou: &[f64], s_mm: &[f64], amplify: f64, mode: FusionMode) -> Result<Vec<f64>> {
    if s_iou.len() != s_mm.len() {
        return Err(Error::ShapeMismatch {
            op: "fuse_scores",
            detail: alloc::format!("{} vs {} scores", s_iou.len(), s_mm.len()),
        });
    }
    Ok(s_iou
        .iter()
        .zip(s_mm)
        .map(|(&a, &b)| match mode {
            FusionMode::SigmoidProduct => sigmoid(amplify * a) * sigmoid(amplify * b),
            FusionMode::RawProduct => a * b,
        })
        .collect())
}
