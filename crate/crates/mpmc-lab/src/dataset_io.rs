//! Dataset persistence: `images/{id}.png` (RGB, 8 bits per channel),
//! `masks/{id}.png` (single-channel class indices, 255 = ignore) and a
//! TOML manifest listing ids, splits and the class count.
//!
//! Scenes are quantized to 8-bit levels at generation time, so the PNG
//! round trip is lossless bit-for-bit.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{GrayImage, RgbImage};
use mpmc_core::grid::{ImageGrid, LabelGrid, IGNORE};
use mpmc_core::synth::{generate_scene, DatasetSpec};
use serde::{Deserialize, Serialize};

use crate::config::DatasetConfig;

/// An in-memory corpus: train pool first, then validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub train: Vec<(ImageGrid, LabelGrid)>,
    pub val: Vec<(ImageGrid, LabelGrid)>,
}

/// On-disk index. Scene ids double as generation seeds, so a saved corpus
/// and a regenerated one agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub image_size: (usize, usize),
    pub train_ids: Vec<u32>,
    pub val_ids: Vec<u32>,
}

/// Generate the full corpus from the config; train scenes use seeds
/// `0..num_train`, validation scenes continue from `num_train`.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let spec: DatasetSpec = cfg.spec();
    spec.validate()?;
    let mut train = Vec::with_capacity(cfg.num_train);
    for n in 0..cfg.num_train {
        train.push(generate_scene(&spec, n as u64)?);
    }
    let mut val = Vec::with_capacity(cfg.num_val);
    for n in 0..cfg.num_val {
        val.push(generate_scene(&spec, (cfg.num_train + n) as u64)?);
    }
    Ok(Dataset {
        num_classes: cfg.num_classes,
        train,
        val,
    })
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;

    let save_pair = |id: u32, image: &ImageGrid, label: &LabelGrid| -> Result<()> {
        image_to_png(image)
            .save(images.join(format!("{id}.png")))
            .with_context(|| format!("writing image {id}"))?;
        label_to_png(label)
            .save(masks.join(format!("{id}.png")))
            .with_context(|| format!("writing mask {id}"))?;
        Ok(())
    };

    let mut train_ids = Vec::new();
    for (n, (image, label)) in dataset.train.iter().enumerate() {
        let id = n as u32;
        save_pair(id, image, label)?;
        train_ids.push(id);
    }
    let mut val_ids = Vec::new();
    for (n, (image, label)) in dataset.val.iter().enumerate() {
        let id = (dataset.train.len() + n) as u32;
        save_pair(id, image, label)?;
        val_ids.push(id);
    }

    let (h, w) = dataset
        .train
        .first()
        .map(|(i, _)| (i.height, i.width))
        .or_else(|| dataset.val.first().map(|(i, _)| (i.height, i.width)))
        .context("dataset has no scenes")?;
    let manifest = DatasetManifest {
        num_classes: dataset.num_classes,
        image_size: (h, w),
        train_ids,
        val_ids,
    };
    let header = "\
# Dataset manifest.
# images/{id}.png: RGB scene, 8 bits per channel, values are level/255.
# masks/{id}.png:  single-channel class indices in 0..num_classes-1; 255 = ignore.
";
    let body = toml::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.toml"), format!("{header}{body}"))?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest_path = dir.join("manifest.toml");
    let text = std::fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: DatasetManifest =
        toml::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;

    let load_pair = |id: u32| -> Result<(ImageGrid, LabelGrid)> {
        let image_path = dir.join("images").join(format!("{id}.png"));
        let mask_path = dir.join("masks").join(format!("{id}.png"));
        let image = png_to_image(&image_path)?;
        let label = png_to_label(&mask_path)?;
        if !label.matches_shape(&image) {
            bail!(
                "{} and {} have different shapes",
                image_path.display(),
                mask_path.display()
            );
        }
        label.validate(manifest.num_classes).with_context(|| {
            format!("mask {} contains out-of-range classes", mask_path.display())
        })?;
        Ok((image, label))
    };

    let mut train = Vec::with_capacity(manifest.train_ids.len());
    for &id in &manifest.train_ids {
        train.push(load_pair(id)?);
    }
    let mut val = Vec::with_capacity(manifest.val_ids.len());
    for &id in &manifest.val_ids {
        val.push(load_pair(id)?);
    }
    Ok((
        Dataset {
            num_classes: manifest.num_classes,
            train,
            val,
        },
        manifest,
    ))
}

fn image_to_png(image: &ImageGrid) -> RgbImage {
    let mut out = RgbImage::new(image.width as u32, image.height as u32);
    for i in 0..image.height {
        for j in 0..image.width {
            let px = [0, 1, 2].map(|c| {
                (image.get(c, i, j).clamp(0.0, 1.0) * 255.0).round() as u8
            });
            out.put_pixel(j as u32, i as u32, image::Rgb(px));
        }
    }
    out
}

fn png_to_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageGrid::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let px = img.get_pixel(j as u32, i as u32);
            for c in 0..3 {
                out.set(c, i, j, px.0[c] as f64 / 255.0);
            }
        }
    }
    Ok(out)
}

fn label_to_png(label: &LabelGrid) -> GrayImage {
    let mut out = GrayImage::new(label.width as u32, label.height as u32);
    for i in 0..label.height {
        for j in 0..label.width {
            out.put_pixel(j as u32, i as u32, image::Luma([label.get(i, j)]));
        }
    }
    out
}

fn png_to_label(path: &Path) -> Result<LabelGrid> {
    let img = image::open(path)
        .with_context(|| format!("reading mask {}", path.display()))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = LabelGrid::filled(h, w, IGNORE);
    for i in 0..h {
        for j in 0..w {
            out.set(i, j, img.get_pixel(j as u32, i as u32).0[0]);
        }
    }
    Ok(out)
}
