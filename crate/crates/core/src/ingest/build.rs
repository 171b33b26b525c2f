//! Dataset build: manifest in, record store out.
//!
//! Pass 1 loads every slide, validates instances, and computes the train-split
//! channel statistics from raw crops. Pass 2 normalizes crops, extracts masked
//! environment patches, and streams rows to the store in (slide_id, cell_id)
//! order. Degenerate cells are logged with reason codes, never silently
//! dropped.

use super::extract::{
    extract_environment_patch, extract_raw_crop, resolve_fill, ChannelStats,
};
use super::ihc::derive_label_from_ihc;
use super::manifest::{DatasetManifest, ManifestRecord, Split};
use super::mask::{load_image_rgb, load_instances, load_labels};
use super::store::{CellEntry, RecordStore, SlideEntry, StoreIndex, StoreWriter, STORE_FORMAT_VERSION};
use super::{CellInstance, SlideImage};
use crate::config::RunConfig;
use crate::error::{data_err, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell_id: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct BuildReport {
    pub store: RecordStore,
    pub n_cells: usize,
    pub n_skipped: usize,
}

struct LoadedSlide {
    image: SlideImage,
    ihc: Option<SlideImage>,
    split: Split,
    instances: Vec<CellInstance>,
}

/// Optional hook applied to each slide image before ingestion (the stain
/// normalization extension point). Invoked as `hook <input> <output>`.
pub type PreprocessHook<'a> = Option<&'a Path>;

pub fn build_dataset(
    manifest: &DatasetManifest,
    config: &RunConfig,
    out_dir: &Path,
    preprocess_hook: PreprocessHook,
) -> Result<BuildReport> {
    manifest.validate()?;
    let ing = &config.ingest;

    // Load slides up front; instance extraction is cheap relative to training
    // and datasets at this granularity fit in memory.
    let mut slides: Vec<LoadedSlide> = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        slides.push(load_slide(record, preprocess_hook)?);
    }

    // Deterministic global cell order: (slide_id, cell_id).
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (si, slide) in slides.iter().enumerate() {
        for ii in 0..slide.instances.len() {
            order.push((si, ii));
        }
    }
    order.sort_by(|a, b| {
        let ka = (&slides[a.0].image.slide_id, &slides[a.0].instances[a.1].cell_id);
        let kb = (&slides[b.0].image.slide_id, &slides[b.0].instances[b.1].cell_id);
        ka.cmp(&kb)
    });

    // Validate instances; collect skips with reason codes.
    let mut skipped: Vec<SkippedCell> = Vec::new();
    let mut accepted: Vec<(usize, usize)> = Vec::new();
    for &(si, ii) in &order {
        let slide = &slides[si];
        let inst = &slide.instances[ii];
        match inst.validate(slide.image.pixels.height, slide.image.pixels.width) {
            Ok(()) => accepted.push((si, ii)),
            Err(reason) => {
                log::warn!("skipping cell {}: {}", inst.cell_id, reason);
                skipped.push(SkippedCell { cell_id: inst.cell_id.clone(), reason });
            }
        }
    }

    // Pass 1: raw crops for everything (parallel), then train-split statistics.
    let raw_crops: Vec<crate::imgproc::ImageBuf> = accepted
        .par_iter()
        .map(|&(si, ii)| {
            let slide = &slides[si];
            extract_raw_crop(&slide.image, &slide.instances[ii], ing.window_scale, ing.crop_size)
        })
        .collect::<Result<Vec<_>>>()?;

    let train_mask: Vec<bool> = accepted
        .iter()
        .map(|&(si, _)| slides[si].split == Split::Train)
        .collect();
    let (stats, stats_undefined) = train_statistics(&raw_crops, &train_mask);
    let fill_raw = resolve_fill(ing.mask_fill, &stats);

    // IHC labels where configured; explicit label files take precedence.
    let ihc_scale = ing.window_scale * ing.ihc_window_scale;
    let mut labels: Vec<Option<String>> = Vec::with_capacity(accepted.len());
    for &(si, ii) in &accepted {
        let slide = &slides[si];
        let inst = &slide.instances[ii];
        let label = match (&inst.label, &slide.ihc) {
            (Some(l), _) => Some(l.clone()),
            (None, Some(ihc)) if !ing.biomarkers.is_empty() => derive_label_from_ihc(
                inst,
                ihc,
                (slide.image.pixels.height, slide.image.pixels.width),
                ihc_scale,
                ing.ihc_dominance_threshold,
                &ing.biomarkers,
            )?,
            _ => None,
        };
        labels.push(label);
    }
    let mut label_names: Vec<String> = labels.iter().flatten().cloned().collect();
    label_names.sort();
    label_names.dedup();

    // Pass 2: normalized crops + masked environment patches, stream to disk.
    let rows: Vec<(crate::imgproc::ImageBuf, crate::imgproc::ImageBuf)> = accepted
        .par_iter()
        .zip(raw_crops.into_par_iter())
        .map(|(&(si, ii), mut crop)| {
            let slide = &slides[si];
            let inst = &slide.instances[ii];
            stats.normalize(&mut crop);
            let env_size = ing.env_size.max(super::extract::crop_window_side(inst, ing.window_scale) as usize);
            let env = extract_environment_patch(
                &slide.image,
                inst,
                &slide.instances,
                env_size,
                ing.env_input_size,
                ing.mask_policy,
                fill_raw,
                &stats,
            )?;
            Ok((crop, env.pixels))
        })
        .collect::<Result<Vec<_>>>()?;

    let env_fill = [
        (fill_raw[0] - stats.mean[0]) / stats.std[0],
        (fill_raw[1] - stats.mean[1]) / stats.std[1],
        (fill_raw[2] - stats.mean[2]) / stats.std[2],
    ];

    let mut writer = StoreWriter::create(out_dir)?;
    let mut cells: Vec<CellEntry> = Vec::with_capacity(accepted.len());
    for (k, &(si, ii)) in accepted.iter().enumerate() {
        let slide = &slides[si];
        let inst = &slide.instances[ii];
        let (crop, env) = &rows[k];
        writer.append(crop, env)?;
        cells.push(CellEntry {
            cell_id: inst.cell_id.clone(),
            slide_id: inst.slide_id.clone(),
            split: slide.split,
            centroid: inst.centroid,
            bbox: inst.bbox,
            area: inst.mask_area(),
            label: labels[k]
                .as_ref()
                .map(|l| label_names.binary_search(l).expect("label interned")),
        });
    }

    let slide_entries: Vec<SlideEntry> = slides
        .iter()
        .map(|s| SlideEntry {
            slide_id: s.image.slide_id.clone(),
            height: s.image.pixels.height,
            width: s.image.pixels.width,
            magnification: s.image.magnification.clone(),
        })
        .collect();

    let index = StoreIndex {
        format_version: STORE_FORMAT_VERSION,
        crop_size: ing.crop_size,
        env_size: ing.env_input_size,
        n: 0, // filled by finish()
        normalization: stats,
        env_fill,
        stats_undefined,
        label_names,
        cells,
        slides: slide_entries,
        skipped,
    };
    let store = writer.finish(out_dir, index)?;
    let n_cells = store.index.n;
    let n_skipped = store.index.skipped.len();
    Ok(BuildReport { store, n_cells, n_skipped })
}

fn load_slide(record: &ManifestRecord, hook: PreprocessHook) -> Result<LoadedSlide> {
    let slide_id = DatasetManifest::slide_id(record);
    let image_path = match hook {
        Some(exe) => run_preprocess_hook(exe, &record.image)?,
        None => record.image.clone(),
    };
    let pixels = load_image_rgb(&image_path)?;

    let labels: Option<BTreeMap<String, String>> = match &record.labels {
        Some(path) => Some(load_labels(path)?),
        None => None,
    };
    let instances = load_instances(&record.mask, &slide_id, labels.as_ref())?;

    // Mask/image size mismatch is a hard failure with the path in the message.
    for inst in &instances {
        let (top, left, h, w) = inst.bbox;
        if top + h > pixels.height || left + w > pixels.width {
            return Err(data_err(format!(
                "{}: instance {} bbox exceeds image {}x{}",
                record.mask.display(),
                inst.cell_id,
                pixels.height,
                pixels.width
            )));
        }
    }

    let ihc = match &record.ihc {
        Some(path) => Some(SlideImage {
            slide_id: format!("{slide_id}:ihc"),
            magnification: String::new(),
            pixels: load_image_rgb(path)?,
        }),
        None => None,
    };

    Ok(LoadedSlide {
        image: SlideImage { slide_id, magnification: String::new(), pixels },
        ihc,
        split: record.split,
        instances,
    })
}

fn run_preprocess_hook(exe: &Path, input: &Path) -> Result<std::path::PathBuf> {
    let out = input.with_extension("preprocessed.png");
    let status = std::process::Command::new(exe)
        .arg(input)
        .arg(&out)
        .status()
        .map_err(|e| data_err(format!("preprocess hook {}: {e}", exe.display())))?;
    if !status.success() {
        return Err(data_err(format!(
            "preprocess hook {} failed on {} (status {status})",
            exe.display(),
            input.display()
        )));
    }
    Ok(out)
}

/// Per-channel mean and population std over the train-split raw crops.
fn train_statistics(crops: &[crate::imgproc::ImageBuf], train: &[bool]) -> (ChannelStats, bool) {
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    let mut count = 0usize;
    for (crop, &is_train) in crops.iter().zip(train) {
        if !is_train {
            continue;
        }
        for px in crop.data.chunks_exact(3) {
            for ch in 0..3 {
                sum[ch] += px[ch] as f64;
                sum_sq[ch] += (px[ch] as f64) * (px[ch] as f64);
            }
        }
        count += crop.data.len() / 3;
    }
    if count == 0 {
        return (ChannelStats::identity(), true);
    }
    let mut mean = [0.0f32; 3];
    let mut std = [0.0f32; 3];
    for ch in 0..3 {
        let m = sum[ch] / count as f64;
        let var = (sum_sq[ch] / count as f64 - m * m).max(0.0);
        mean[ch] = m as f32;
        // Constant channels keep std 1 so normalization stays defined.
        std[ch] = if var.sqrt() > 1e-8 { var.sqrt() as f32 } else { 1.0 };
    }
    (ChannelStats { mean, std }, false)
}
