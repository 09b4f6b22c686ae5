use std::fs;
use std::path::Path;

use mitosis_core::dataset::{format_annotations, generate_synthetic_dataset, SyntheticConfig};

use crate::error::{CliError, Result};

/// Writes a synthetic dataset in the native layout: `frames/<id>.tiff` and
/// `annotations/<id>.csv` under `out`. Returns the frame ids.
pub fn run(out: &Path, config: &SyntheticConfig) -> Result<Vec<String>> {
    let frames = generate_synthetic_dataset(config)?;
    let (fdir, adir) = (out.join("frames"), out.join("annotations"));
    for d in [&fdir, &adir] {
        fs::create_dir_all(d).map_err(CliError::io(d))?;
    }
    let mut ids = Vec::with_capacity(frames.len());
    for f in &frames {
        let img_path = fdir.join(format!("{}.tiff", f.frame_id));
        f.image.save(&img_path).map_err(|source| CliError::ImageWrite {
            path: img_path.clone(),
            source,
        })?;
        let ann_path = adir.join(format!("{}.csv", f.frame_id));
        fs::write(&ann_path, format_annotations(&f.annotations)).map_err(CliError::io(&ann_path))?;
        ids.push(f.frame_id.clone());
    }
    Ok(ids)
}
