use mitosis_core::detector::{
    rpn_loss, AnchorConfig, BackboneKind, DetectorConfig, RoiConfig, RpnConfig, TwoStreamDetector,
};
use mitosis_core::geometry::BBox;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensure;

fn tiny() -> DetectorConfig {
    DetectorConfig {
        backbone: BackboneKind::TinyRandom,
        tiny_channels: 4,
        rpn: RpnConfig {
            hidden_channels: 4,
            batch_size: 32,
            ..RpnConfig::default()
        },
        roi: RoiConfig {
            pool_size: 3,
            samples_per_image: 8,
            ..RoiConfig::default()
        },
        anchors: AnchorConfig {
            scales: vec![16.0, 32.0],
            ratios: vec![0.5, 1.0, 2.0],
        },
        ..DetectorConfig::default()
    }
}

pub fn run() -> Result<String, String> {
    // single foreground anchor at probability 0.5, delta error 0.5 on one coordinate
    let hand = 2f64.ln() + 0.5 * 0.5 * 0.5;
    let l = rpn_loss(&[0.5], &[1.0], &[[0.5, 0.0, 0.0, 0.0]], &[[0.0; 4]], 1.0, 1, 1).map_err(|e| e.to_string())?;
    ensure((l.total() - 0.8181).abs() < 1e-4 && (l.total() - hand).abs() < 1e-12, || {
        format!("rpn_loss example gave {}", l.total())
    })?;
    ensure(rpn_loss(&[0.5], &[1.0], &[[0.0; 4]], &[[0.0; 4]], 1.0, 0, 1).is_err(), || {
        "N_cls = 0 accepted".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let n = rng.random_range(1..20);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let f: Vec<[f64; 4]> = (0..n).map(|_| [(); 4].map(|_| rng.random_range(-3.0..3.0))).collect();
        let t: Vec<[f64; 4]> = (0..n).map(|_| [(); 4].map(|_| rng.random_range(-3.0..3.0))).collect();
        let l = rpn_loss(&g, &vec![0.0; n], &f, &t, 1.0, n, 7).map_err(|e| e.to_string())?;
        ensure(l.reg == 0.0, || format!("zero-foreground RPN regression term {}", l.reg))?;
    }

    let mut batches = 0;
    for seed in 0..6u64 {
        let model = TwoStreamDetector::new(&DetectorConfig { seed, ..tiny() }).map_err(|e| e.to_string())?;
        let rgb = Array3::from_shape_fn((3, 48, 48), |_| rng.random_range(-0.5..0.5));
        let seg = Array3::from_shape_fn((3, 48, 48), |_| rng.random_range(-0.5..0.5));
        let gt = vec![BBox::new(10.0, 12.0, 30.0, 31.0), BBox::new(26.0, 4.0, 44.0, 20.0)];
        for boxes in [&gt[..], &gt[..1], &[]] {
            let batch = model
                .make_batch("t", rgb.clone(), seg.clone(), boxes, &mut rng)
                .map_err(|e| e.to_string())?;
            let l = model.loss(&batch).map_err(|e| e.to_string())?;
            ensure(l.total == l.rpn + l.mitosis + l.bbox && l.rpn == l.rpn_cls + l.rpn_reg, || {
                format!("total {} is not the sum of its components {l:?}", l.total)
            })?;
            if boxes.is_empty() {
                ensure(!batch.rois.iter().any(|r| r.is_foreground()), || "foreground RoI without ground truth".into())?;
                ensure(l.rpn_reg == 0.0 && l.bbox == 0.0, || format!("zero-foreground batch has regression loss {l:?}"))?;
            }
            batches += 1;
        }
    }
    Ok(format!(
        "rpn_loss example = {:.4}; total = sum of components on {batches} detector batches; zero-foreground regression terms are 0",
        l.total()
    ))
}
