use mitosis_core::detector::{AnchorConfig, BackboneKind, DetectorConfig, RoiConfig, RpnConfig, TwoStreamDetector};
use mitosis_core::geometry::BBox;
use mitosis_core::nn::gradcheck::{check, GroupCheck};
use mitosis_core::nn::HasParams;
use mitosis_core::unet::{build_unet, UnetConfig, UnetSample};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-3;
const PER_GROUP: usize = 200;

fn verdict(what: &str, report: &[GroupCheck]) -> Result<f64, String> {
    let worst = report
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .ok_or_else(|| format!("{what}: no parameter groups"))?;
    if worst.max_rel_error < TOL {
        Ok(worst.max_rel_error)
    } else {
        Err(format!(
            "{what}: group {} entry {} analytic {:.6e} numeric {:.6e} (relative {:.2e})",
            worst.name, worst.worst_index, worst.worst_analytic, worst.worst_numeric, worst.max_rel_error
        ))
    }
}

fn unet() -> Result<(usize, f64), String> {
    let cfg = UnetConfig {
        depth: 1,
        base_channels: 3,
        seed: 2,
        ..UnetConfig::default()
    };
    let mut net = build_unet(&cfg).map_err(|e| e.to_string())?;
    let input = Array3::from_shape_fn((3, 10, 12), |(c, i, j)| ((c * 5 + i * 3 + j * 7) % 11) as f64 / 11.0 - 0.5);
    let target = Array2::from_shape_fn((10, 12), |(i, j)| ((i as f64 - 5.0).hypot(j as f64 - 6.0) < 3.5) as u8 as f64);
    let sample = UnetSample {
        tile_id: "g".into(),
        input,
        target,
    };
    net.zero_grad();
    net.accumulate(&sample, 1.0).map_err(|e| e.to_string())?;
    let report = check(&mut net, |m| m.loss(&sample).expect("loss"), STEP, PER_GROUP);
    Ok((report.len(), verdict("U-net", &report)?))
}

fn detector() -> Result<(usize, f64), String> {
    let cfg = DetectorConfig {
        backbone: BackboneKind::TinyRandom,
        tiny_channels: 4,
        rpn: RpnConfig {
            hidden_channels: 4,
            batch_size: 16,
            ..RpnConfig::default()
        },
        roi: RoiConfig {
            pool_size: 3,
            samples_per_image: 6,
            fg_fraction: 0.5,
            ..RoiConfig::default()
        },
        anchors: AnchorConfig {
            scales: vec![16.0, 32.0],
            ratios: vec![1.0],
        },
        seed: 3,
        ..DetectorConfig::default()
    };
    let mut model = TwoStreamDetector::new(&cfg).map_err(|e| e.to_string())?;
    let rgb = Array3::from_shape_fn((3, 48, 48), |(c, y, x)| (((c * 31 + y * 7 + x * 13) % 17) as f64) / 17.0 - 0.5);
    let seg = Array3::from_shape_fn((3, 48, 48), |(_, y, x)| {
        if (y as f64 - 20.0).hypot(x as f64 - 20.0) < 6.0 {
            0.5
        } else {
            -0.5
        }
    });
    let gt = [BBox::new(10.0, 10.0, 30.0, 30.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = model.make_batch("g", rgb, seg, &gt, &mut rng).map_err(|e| e.to_string())?;
    if !batch.rois.iter().any(|r| r.is_foreground()) || !batch.anchor_samples.iter().any(|a| a.label == 1.0) {
        return Err("detector batch lacks foreground samples".into());
    }
    model.zero_grad();
    model.loss_and_grad(&batch).map_err(|e| e.to_string())?;
    let report = check(&mut model, |m| m.loss(&batch).expect("loss").total, STEP, PER_GROUP);
    Ok((report.len(), verdict("detector", &report)?))
}

pub fn run() -> Result<String, String> {
    let (ug, ue) = unet()?;
    let (dg, de) = detector()?;
    Ok(format!(
        "U-net depth 1: {ug} groups, worst relative error {ue:.1e}; tiny detector (C=4, pool 3): {dg} groups, worst {de:.1e}"
    ))
}
