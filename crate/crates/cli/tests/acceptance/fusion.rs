use mitosis_core::detector::{bilinear_full, BackboneKind, DetectorConfig, RoiConfig, TwoStreamDetector};
use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

/// Sum over positions of the outer product of the two channel vectors.
fn outer_product_sum(r: &Array3<f64>, s: &Array3<f64>) -> Vec<f64> {
    let (c, h, w) = r.dim();
    let mut out = vec![0.0; c * c];
    for y in 0..h {
        for x in 0..w {
            let u: Vec<f64> = (0..c).map(|i| r[[i, y, x]]).collect();
            let v: Vec<f64> = (0..c).map(|j| s[[j, y, x]]).collect();
            for (i, ui) in u.iter().enumerate() {
                for (j, vj) in v.iter().enumerate() {
                    out[i * c + j] += ui * vj;
                }
            }
        }
    }
    out
}

fn check_bilinear(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let r = Array3::from_shape_vec((2, 1, 1), vec![1.0, 2.0]).expect("shape");
    let s = Array3::from_shape_vec((2, 1, 1), vec![3.0, 4.0]).expect("shape");
    let hand = bilinear_full(&r, &s).map_err(|e| e.to_string())?;
    ensure(hand == Array1::from(vec![3.0, 4.0, 6.0, 8.0]), || format!("hand example gave {hand}"))?;
    let n = 500;
    for k in 0..n {
        let (c, p) = (rng.random_range(1..=8), rng.random_range(1..=5));
        let r = Array3::from_shape_fn((c, p, p), |_| rng.random_range(-2.0..2.0));
        let s = Array3::from_shape_fn((c, p, p), |_| rng.random_range(-2.0..2.0));
        let got = bilinear_full(&r, &s).map_err(|e| e.to_string())?;
        let want = outer_product_sum(&r, &s);
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(got.len() == c * c && err <= 1e-6, || format!("instance {k}: C={c} p={p} error {err:e}"))?;
    }
    Ok(n)
}

fn check_isolation(rng: &mut ChaCha8Rng) -> Result<(usize, usize), String> {
    let cfg = DetectorConfig {
        backbone: BackboneKind::TinyRandom,
        tiny_channels: 4,
        roi: RoiConfig {
            pool_size: 3,
            ..RoiConfig::default()
        },
        seed: 9,
        ..DetectorConfig::default()
    };
    let model = TwoStreamDetector::new(&cfg).map_err(|e| e.to_string())?;
    let (h, w) = (64, 64);
    let rgb = Array3::from_shape_fn((3, h, w), |_| rng.random_range(-0.5..0.5));
    let seg = Array3::from_shape_fn((3, h, w), |_| rng.random_range(-0.5..0.5));
    let base = model.features(&rgb, &seg).map_err(|e| e.to_string())?;
    let props = model
        .proposals(&base.rgb_features, w as f64, h as f64)
        .map_err(|e| e.to_string())?;
    ensure(!props.is_empty(), || "no proposals".into())?;
    let base_heads: Vec<_> = props
        .iter()
        .map(|p| model.heads(&base, &p.bbox))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut cls_changed = 0;
    let trials = 10;
    for t in 0..trials {
        let perturbed = seg.mapv(|v| v + rng.random_range(-1.0..1.0) * (t + 1) as f64);
        let f = model.features(&rgb, &perturbed).map_err(|e| e.to_string())?;
        ensure(f.rgb_features == base.rgb_features, || format!("trial {t}: RGB features changed"))?;
        let p = model.proposals(&f.rgb_features, w as f64, h as f64).map_err(|e| e.to_string())?;
        ensure(p == props, || format!("trial {t}: proposals changed"))?;
        for (prop, b) in props.iter().zip(&base_heads) {
            let out = model.heads(&f, &prop.bbox).map_err(|e| e.to_string())?;
            ensure(out.deltas.map(f64::to_bits) == b.deltas.map(f64::to_bits), || {
                format!("trial {t}: bbox_head output changed")
            })?;
            cls_changed += (out.probs != b.probs) as usize;
        }
    }
    ensure(cls_changed > 0, || "segmentation stream never reached the classifier".into())?;
    Ok((trials, props.len()))
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = check_bilinear(&mut rng)?;
    let (trials, props) = check_isolation(&mut rng)?;
    Ok(format!(
        "full bilinear matches the outer-product sum on {n} random blocks; {trials} seg perturbations leave {props} proposals and their bbox deltas bit-identical"
    ))
}
