use mitosis_core::evaluation::{
    aggregate, evaluate_frame, f_measure, precision, recall, MatchOptions, ScoredPoint,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

fn check_identities(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n = 20_000;
    for k in 0..n {
        let cap = [3, 50, 5000][k % 3];
        let (tp, fp, fn_) = (rng.random_range(0..cap), rng.random_range(0..cap), rng.random_range(0..cap));
        let p = precision(tp, fp);
        let r = recall(tp, fn_);
        let f = f_measure(p, r);
        let p_ref = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r_ref = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f_ref = if p_ref + r_ref == 0.0 { 0.0 } else { 2.0 * p_ref * r_ref / (p_ref + r_ref) };
        ensure(p == p_ref && r == r_ref && f == f_ref, || {
            format!("counts ({tp}, {fp}, {fn_}): P {p} R {r} F {f}, expected {p_ref} {r_ref} {f_ref}")
        })?;
        if tp > 0 {
            // the same F written in counts
            let f_counts = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            ensure((f - f_counts).abs() <= 4.0 * f64::EPSILON * f_counts, || {
                format!("counts ({tp}, {fp}, {fn_}): F {f} vs 2TP/(2TP+FP+FN) {f_counts}")
            })?;
        }
    }
    Ok(n)
}

/// Maximum bipartite matching by augmenting paths.
fn augmenting_max_matching(adj: &[Vec<bool>], n_gt: usize) -> usize {
    fn try_assign(d: usize, adj: &[Vec<bool>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for g in 0..owner.len() {
            if adj[d][g] && !seen[g] {
                seen[g] = true;
                if owner[g].is_none_or(|o| try_assign(o, adj, seen, owner)) {
                    owner[g] = Some(d);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; n_gt];
    (0..adj.len())
        .filter(|&d| try_assign(d, adj, &mut vec![false; n_gt], &mut owner))
        .count()
}

fn check_matching(rng: &mut ChaCha8Rng) -> Result<(usize, usize), String> {
    let opts = MatchOptions {
        radius: 32.0,
        inclusive: true,
    };
    let mut below = 0;
    let mut frames = Vec::new();
    let n = 3000;
    for k in 0..n {
        let nd = rng.random_range(0..=10);
        let ng = rng.random_range(0..=10);
        let span = [60.0, 120.0, 300.0][k % 3];
        let dets: Vec<ScoredPoint> = (0..nd)
            .map(|_| ScoredPoint {
                x: rng.random_range(0.0..span),
                y: rng.random_range(0.0..span),
                score: rng.random_range(0.0..1.0),
            })
            .collect();
        let gts: Vec<(f64, f64)> = (0..ng).map(|_| (rng.random_range(0.0..span), rng.random_range(0.0..span))).collect();
        let report = evaluate_frame(&format!("f{k}"), &dets, &gts, opts);
        let adj: Vec<Vec<bool>> = dets
            .iter()
            .map(|d| gts.iter().map(|g| (d.x - g.0).powi(2) + (d.y - g.1).powi(2) <= 1024.0).collect())
            .collect();
        let optimum = augmenting_max_matching(&adj, ng);
        ensure(report.optimal_tp == Some(optimum), || {
            format!("instance {k}: exhaustive {:?}, augmenting paths {optimum}", report.optimal_tp)
        })?;
        ensure(report.tp <= optimum && report.tp + report.fp == nd && report.tp + report.fn_ == ng, || {
            format!("instance {k}: inconsistent counts {report:?}")
        })?;
        for m in &report.matches {
            ensure(adj[m.detection][m.ground_truth], || format!("instance {k}: pair outside the radius"))?;
        }
        below += (report.tp < optimum) as usize;
        frames.push(report);
    }
    let agg = aggregate(frames);
    ensure(agg.greedy_below_optimal.len() == below, || {
        format!("report lists {} frames below optimal, counted {below}", agg.greedy_below_optimal.len())
    })?;
    let p = precision(agg.tp, agg.fp);
    let r = recall(agg.tp, agg.fn_);
    ensure(agg.precision == p && agg.recall == r && agg.f_measure == f_measure(p, r), || {
        "pooled metrics differ from the pooled counts".into()
    })?;
    Ok((n, below))
}

fn check_boundary() -> Result<(), String> {
    let gt = [(100.0, 100.0)];
    let on = [ScoredPoint { x: 132.0, y: 100.0, score: 0.9 }];
    let beyond = [ScoredPoint { x: 100.0, y: 132.0 + 1e-9, score: 0.9 }];
    let inclusive = MatchOptions { radius: 32.0, inclusive: true };
    let strict = MatchOptions { radius: 32.0, inclusive: false };
    let a = evaluate_frame("b", &on, &gt, inclusive);
    ensure((a.tp, a.fp, a.fn_) == (1, 0, 0), || format!("32 px inclusive: {a:?}"))?;
    let b = evaluate_frame("b", &on, &gt, strict);
    ensure((b.tp, b.fp, b.fn_) == (0, 1, 1), || format!("32 px strict: {b:?}"))?;
    let c = evaluate_frame("b", &beyond, &gt, inclusive);
    ensure(c.tp == 0, || format!("just past 32 px: {c:?}"))?;
    Ok(())
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ids = check_identities(&mut rng)?;
    let (n, below) = check_matching(&mut rng)?;
    check_boundary()?;
    Ok(format!(
        "metric identities exact on {ids} fuzzed counts; greedy vs maximum matching reported on {n} instances (greedy below optimum on {below}); 32 px inclusive boundary holds"
    ))
}
