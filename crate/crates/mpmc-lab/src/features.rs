//! Raw penultimate-feature export for offline embedding tools: one binary
//! dump of little-endian f64 tensors plus a CSV index describing each
//! record's offset and shape.

use std::io::Write as _;
use std::path::Path;

use anyhow::Result;
use mpmc_core::grid::{ImageGrid, LabelGrid};
use mpmc_core::segmodel::Segmentor;

/// Export the tap-layer feature map of every example to
/// `features.bin` + `features_index.csv` inside `dir`.
pub fn export_features(
    segmentor: &Segmentor,
    params: &[f64],
    examples: &[(ImageGrid, LabelGrid)],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut bin = std::fs::File::create(dir.join("features.bin"))?;
    let mut index = csv::Writer::from_path(dir.join("features_index.csv"))?;
    index.write_record(["example", "byte_offset", "channels", "height", "width"])?;

    let mut offset: u64 = 0;
    for (n, (image, _)) in examples.iter().enumerate() {
        let (_, feature, _) = segmentor.forward_image(params, image)?;
        let t = &feature.values;
        for &v in &t.data {
            bin.write_all(&v.to_le_bytes())?;
        }
        index.write_record([
            n.to_string(),
            offset.to_string(),
            t.channels.to_string(),
            t.height.to_string(),
            t.width.to_string(),
        ])?;
        offset += (t.data.len() * 8) as u64;
    }
    index.flush()?;
    Ok(())
}
