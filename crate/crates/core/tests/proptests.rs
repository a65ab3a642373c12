//! Property tests for the grid machinery, metrics, and negative sampling,
//! each checked against an independent brute-force reference.

use proptest::prelude::*;

use grounding_core::eval::{nms, rank_n_at_m, Prediction};
use grounding_core::losses::{fuse_scores, pair_positive_prob, FusionMode};
use grounding_core::momentmap::{
    build_moment_map, iou_cells, sample_clips, scale_iou, valid_mask, ClipFeatures, Interval,
    TimeSpan,
};
use grounding_core::negatives::{subsample_to_intra_count, MomentNeg, NegativeSets, SentenceNeg};

/// Independent restatement of the sparse-sampling rule: the stride is the
/// smallest power of two s with d <= s * g.
fn mask_oracle(g: usize, i: usize, j: usize) -> bool {
    if i > j {
        return false;
    }
    let d = j - i + 1;
    if d <= g {
        return true;
    }
    let mut s = 1;
    while s * g < d {
        s *= 2;
    }
    d % s == 0 && i % s == 0
}

/// Reference greedy NMS written with an explicit suppression array.
fn nms_oracle(cands: &[(Interval, f64)], thr: f64) -> Vec<(Interval, f64)> {
    let mut suppressed = vec![false; cands.len()];
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .1
            .partial_cmp(&cands[a].1)
            .unwrap()
            .then(cands[a].0.start.cmp(&cands[b].0.start))
            .then(cands[a].0.duration().cmp(&cands[b].0.duration()))
    });
    let mut kept = Vec::new();
    for &idx in &order {
        if suppressed[idx] {
            continue;
        }
        kept.push(cands[idx]);
        for &other in &order {
            if !suppressed[other] && other != idx && iou_cells(cands[idx].0, cands[other].0) > thr {
                suppressed[other] = true;
            }
        }
        suppressed[idx] = true;
    }
    kept
}

fn cell_strategy(n: usize) -> impl Strategy<Value = Interval> {
    (0..n).prop_flat_map(move |i| (Just(i), i..n)).prop_map(|(i, j)| Interval::new(i, j))
}

proptest! {
    #[test]
    fn iou_symmetric_bounded_identity(n in 2usize..20, seed in 0u64..1000) {
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(2862933555777941757).wrapping_add(3037000493); (s >> 33) as usize };
        let (i1, d1) = (next() % n, next() % n);
        let a = Interval::new(i1.min(n - 1), (i1 + d1).min(n - 1));
        let (i2, d2) = (next() % n, next() % n);
        let b = Interval::new(i2.min(n - 1), (i2 + d2).min(n - 1));
        let ab = iou_cells(a, b);
        let ba = iou_cells(b, a);
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
        if a == b {
            prop_assert_eq!(ab, 1.0);
        } else {
            prop_assert!(ab < 1.0);
        }
    }

    #[test]
    fn scale_iou_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, t in 0.05f64..0.8) {
        let (lo, hi) = (a.min(b), a.max(b));
        let sa = scale_iou(lo, t, 1.0).unwrap();
        let sb = scale_iou(hi, t, 1.0).unwrap();
        prop_assert!(sa <= sb);
        prop_assert!((0.0..=1.0).contains(&sa));
    }

    #[test]
    fn valid_mask_matches_enumeration_oracle(n in 1usize..33, g_frac in 0.0f64..1.0) {
        let g = ((n as f64 * g_frac) as usize).clamp(1, n);
        let mask = valid_mask(n, g).unwrap();
        let mut count = 0usize;
        for i in 0..n {
            for j in 0..n {
                let expect = mask_oracle(g, i, j);
                prop_assert_eq!(mask.is_valid(i, j), expect, "cell ({}, {})", i, j);
                count += usize::from(expect);
            }
        }
        prop_assert_eq!(mask.count(), count);
        // Diagonal fully valid; upper-triangular by construction.
        for i in 0..n {
            prop_assert!(mask.is_valid(i, i));
        }
        // Whole-video cell valid whenever n/g is a power of two.
        if n % g == 0 && (n / g).is_power_of_two() {
            prop_assert!(mask.is_valid(0, n - 1));
        }
    }

    #[test]
    fn moment_map_matches_per_cell_max_and_inclusion(seed in 0u64..500) {
        let n = 8usize;
        let d = 4usize;
        let mut s = seed.wrapping_add(1);
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0 };
        let rows: Vec<f64> = (0..n * d).map(|_| next()).collect();
        let clips = ClipFeatures { n, dim: d, rows: rows.clone(), duration: n as f64 };
        let mask = valid_mask(n, 2).unwrap();
        let grid = build_moment_map(&clips, &mask).unwrap();
        for cell in mask.iter_valid() {
            let got = grid.feature(cell);
            for c in 0..d {
                let expect = (cell.start..=cell.end)
                    .map(|r| rows[r * d + c])
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((got[c] - expect).abs() < 1e-15);
            }
        }
        // Coordinatewise monotone under inclusion.
        for outer in mask.iter_valid() {
            for inner in mask.iter_valid() {
                if outer.start <= inner.start && inner.end <= outer.end {
                    let fo = grid.feature(outer);
                    let fi = grid.feature(inner);
                    for c in 0..d {
                        prop_assert!(fo[c] >= fi[c] - 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn nms_matches_brute_force(cands in proptest::collection::vec((cell_strategy(12), 0.0f64..1.0), 1..50), thr in 0.1f64..1.0) {
        let got = nms(&cands, thr).unwrap();
        let expect = nms_oracle(&cands, thr);
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn pair_prob_bounds_and_margin_monotonicity(
        pos in -1.0f64..1.0,
        negs in proptest::collection::vec(-1.0f64..1.0, 1..12),
        m1 in 0.0f64..0.5,
        m2 in 0.0f64..0.5,
    ) {
        let p1 = pair_positive_prob(pos, &negs, m1.min(m2), 0.1).unwrap();
        let p2 = pair_positive_prob(pos, &negs, m1.max(m2), 0.1).unwrap();
        prop_assert!(p1 > 0.0 && p1 < 1.0);
        prop_assert!(p2 <= p1 + 1e-15);
    }

    #[test]
    fn sample_clips_preserves_segment_means(l_mult in 1usize..5, n in 1usize..9, seed in 0u64..200) {
        let l = l_mult * n;
        let dim = 3usize;
        let mut s = seed.wrapping_add(7);
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(11); ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0 };
        let raw: Vec<f64> = (0..l * dim).map(|_| next()).collect();
        let clips = sample_clips(&raw, l, dim, n, l as f64).unwrap();
        for k in 0..n {
            for c in 0..dim {
                let mean: f64 = (k * l_mult..(k + 1) * l_mult)
                    .map(|r| raw[r * dim + c])
                    .sum::<f64>() / l_mult as f64;
                prop_assert!((clips.row(k)[c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fusion_preserves_agreeing_order(a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, b1 in -1.0f64..1.0, b2 in -1.0f64..1.0) {
        // Where both branches agree in order, the fused score agrees too.
        let fused = fuse_scores(&[a1, a2], &[b1, b2], 10.0, FusionMode::SigmoidProduct).unwrap();
        if a1 < a2 && b1 < b2 {
            prop_assert!(fused[0] < fused[1]);
        }
        if a1 > a2 && b1 > b2 {
            prop_assert!(fused[0] > fused[1]);
        }
    }

    #[test]
    fn subsample_matches_intra_count(
        n_intra_m in 0usize..10, n_inter_m in 0usize..10,
        n_intra_s in 0usize..10, n_inter_s in 0usize..10,
        seed in 0u64..100,
    ) {
        let mut sets = NegativeSets::default();
        for k in 0..n_intra_m {
            sets.moments.push(MomentNeg { video_pos: 0, cell: Interval::new(k, k), inter: false });
        }
        for k in 0..n_inter_m {
            sets.moments.push(MomentNeg { video_pos: 1, cell: Interval::new(k, k), inter: true });
        }
        for k in 0..n_intra_s {
            sets.sentences.push(SentenceNeg { video_pos: 0, query_idx: k + 1, inter: false });
        }
        for k in 0..n_inter_s {
            sets.sentences.push(SentenceNeg { video_pos: 1, query_idx: k, inter: true });
        }
        let out = subsample_to_intra_count(&sets, seed);
        prop_assert_eq!(out.moments.len(), n_intra_m.min(sets.moments.len()));
        prop_assert_eq!(out.sentences.len(), n_intra_s.min(sets.sentences.len()));
        // Members come from the union.
        for m in &out.moments {
            prop_assert!(sets.moments.contains(m));
        }
        // Inter disabled means identity.
        if n_inter_m == 0 && n_inter_s == 0 {
            prop_assert_eq!(out, sets);
        }
    }

    #[test]
    fn rank_metrics_sane_on_random_predictions(seed in 0u64..300) {
        let n = 8usize;
        let mask = valid_mask(n, 2).unwrap();
        let mut s = seed.wrapping_add(3);
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(5); (s >> 33) as f64 / (1u64 << 31) as f64 };
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..6 {
            let cands: Vec<(Interval, f64)> = mask.iter_valid().map(|c| (c, next())).collect();
            let ranked = nms(&cands, 0.5).unwrap();
            preds.push(Prediction { n, duration: 8.0, ranked });
            let start = (next() * 6.0).floor();
            gts.push(TimeSpan::new(start, start + 1.0 + (next() * 2.0).floor()));
        }
        for &m in &[0.3, 0.5, 0.7] {
            let r1 = rank_n_at_m(&preds, &gts, 1, m).unwrap();
            let r5 = rank_n_at_m(&preds, &gts, 5, m).unwrap();
            prop_assert!((0.0..=100.0).contains(&r1));
            prop_assert!(r5 >= r1);
        }
        let easy = rank_n_at_m(&preds, &gts, 1, 0.3).unwrap();
        let mid = rank_n_at_m(&preds, &gts, 1, 0.5).unwrap();
        let hard = rank_n_at_m(&preds, &gts, 1, 0.7).unwrap();
        prop_assert!(easy >= mid && mid >= hard);
    }
}
