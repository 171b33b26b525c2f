//! Dataset ingestion: slide images plus instance segmentation masks (and
//! optional co-registered IHC images) become normalized cell crops, masked
//! environment patches, and optional ground-truth labels.

mod build;
mod extract;
mod ihc;
mod manifest;
mod mask;
mod store;

pub use build::{build_dataset, BuildReport, SkippedCell};
pub use extract::{
    extract_cell_crop, extract_environment_patch, ChannelStats, CellCrop, EnvironmentPatch,
};
pub use ihc::derive_label_from_ihc;
pub use manifest::{DatasetManifest, ManifestRecord, Split, MANIFEST_FORMAT_VERSION};
pub use mask::{load_instances, load_labels};
pub use store::{RecordStore, StoreIndex, STORE_FORMAT_VERSION};

use crate::imgproc::ImageBuf;

/// A source image (tile, TMA core, or whole-slide region) with provenance.
#[derive(Debug, Clone)]
pub struct SlideImage {
    pub slide_id: String,
    /// Free-form magnification tag, e.g. "40x".
    pub magnification: String,
    pub pixels: ImageBuf,
}

/// One segmented cell instance. The mask bitmap is aligned to the bbox,
/// row-major `height x width`.
#[derive(Debug, Clone)]
pub struct CellInstance {
    pub cell_id: String,
    pub slide_id: String,
    /// (row, col) in image pixels.
    pub centroid: (f64, f64),
    /// (top, left, height, width) in image pixels.
    pub bbox: (usize, usize, usize, usize),
    pub mask: Vec<bool>,
    pub label: Option<String>,
}

impl CellInstance {
    pub fn mask_area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// max(bbox height, bbox width): the "cell size" the adaptive window scales.
    pub fn size(&self) -> usize {
        self.bbox.2.max(self.bbox.3)
    }

    pub fn mask_at(&self, row: i64, col: i64) -> bool {
        let (top, left, h, w) = self.bbox;
        if row < top as i64 || col < left as i64 {
            return false;
        }
        let r = (row - top as i64) as usize;
        let c = (col - left as i64) as usize;
        if r >= h || c >= w {
            return false;
        }
        self.mask[r * w + c]
    }

    /// Validation used at ingest time; degenerate instances are skipped.
    pub fn validate(&self, img_h: usize, img_w: usize) -> std::result::Result<(), String> {
        let (top, left, h, w) = self.bbox;
        if h == 0 || w == 0 {
            return Err("empty bbox".into());
        }
        if self.mask.len() != h * w {
            return Err(format!("mask length {} != bbox {}x{}", self.mask.len(), h, w));
        }
        if self.mask_area() == 0 {
            return Err("empty mask".into());
        }
        if top + h > img_h || left + w > img_w {
            return Err(format!(
                "bbox ({top},{left},{h},{w}) exceeds image {img_h}x{img_w}"
            ));
        }
        let (cr, cc) = self.centroid;
        if cr < top as f64 || cr > (top + h) as f64 || cc < left as f64 || cc > (left + w) as f64 {
            return Err("centroid outside bbox".into());
        }
        Ok(())
    }
}
