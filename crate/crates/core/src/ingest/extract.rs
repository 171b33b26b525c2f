//! Cell crop and environment patch extraction.
//!
//! The adaptive crop window has side `window_scale * max(bbox_h, bbox_w)`,
//! centered on the centroid and clipped to the image before resizing, so a
//! cell at a border still yields a full-size output. Environment patches mask
//! cell pixels *after* the resize, against footprints resampled by nearest
//! source pixel; masked pixels are therefore exactly the fill value in the
//! stored patch.

use super::{CellInstance, SlideImage};
use crate::config::{MaskFill, MaskPolicy};
use crate::error::{contract_err, Result};
use crate::imgproc::{ImageBuf, Window};

/// Per-channel normalization statistics of the training crops.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ChannelStats {
    pub fn identity() -> Self {
        ChannelStats { mean: [0.0; 3], std: [1.0; 3] }
    }

    pub fn normalize(&self, img: &mut ImageBuf) {
        for px in img.data.chunks_exact_mut(3) {
            for ch in 0..3 {
                px[ch] = (px[ch] - self.mean[ch]) / self.std[ch];
            }
        }
    }

    pub fn denormalize(&self, img: &mut ImageBuf) {
        for px in img.data.chunks_exact_mut(3) {
            for ch in 0..3 {
                px[ch] = px[ch] * self.std[ch] + self.mean[ch];
            }
        }
    }
}

/// Normalized cell crop, `crop_size x crop_size x 3`.
#[derive(Debug, Clone)]
pub struct CellCrop {
    pub cell_id: String,
    pub pixels: ImageBuf,
    pub normalization: ChannelStats,
}

/// Masked, normalized environment patch at the encoder input size.
#[derive(Debug, Clone)]
pub struct EnvironmentPatch {
    pub cell_id: String,
    pub pixels: ImageBuf,
    pub mask_policy: MaskPolicy,
    /// Pixels replaced by the fill value, in patch coordinates.
    pub masked: Vec<bool>,
    /// Fill value after normalization (constant across masked pixels).
    pub fill: [f32; 3],
}

pub(crate) fn crop_window_side(inst: &CellInstance, window_scale: f64) -> i64 {
    ((window_scale * inst.size() as f64).round() as i64).max(1)
}

/// Extract the adaptive square window around a cell and resize it to
/// `crop_size`, normalizing with the dataset statistics.
pub fn extract_cell_crop(
    image: &SlideImage,
    inst: &CellInstance,
    window_scale: f64,
    crop_size: usize,
    stats: &ChannelStats,
) -> Result<CellCrop> {
    if window_scale <= 0.0 {
        return Err(contract_err(format!("window_scale must be > 0, got {window_scale}")));
    }
    let raw = extract_raw_crop(image, inst, window_scale, crop_size)?;
    let mut pixels = raw;
    stats.normalize(&mut pixels);
    Ok(CellCrop { cell_id: inst.cell_id.clone(), pixels, normalization: *stats })
}

/// The unnormalized resized crop; used by the statistics pass.
pub(crate) fn extract_raw_crop(
    image: &SlideImage,
    inst: &CellInstance,
    window_scale: f64,
    crop_size: usize,
) -> Result<ImageBuf> {
    if inst.mask_area() == 0 {
        return Err(contract_err(format!("cell {} has an empty mask", inst.cell_id)));
    }
    let side = crop_window_side(inst, window_scale);
    let win = Window::centered(inst.centroid.0, inst.centroid.1, side)
        .clipped(image.pixels.height, image.pixels.width);
    if win.is_empty() {
        return Err(contract_err(format!(
            "cell {} window falls outside image {}",
            inst.cell_id, inst.slide_id
        )));
    }
    Ok(image.pixels.resize_window(win, crop_size, crop_size))
}

/// Extract the environment window, resize to the encoder input size, and
/// replace cell pixels per the masking policy.
///
/// `fill_raw` is the replacement color in raw [0,1] space; normalization is
/// applied afterwards so masked pixels stay exactly constant.
#[allow(clippy::too_many_arguments)]
pub fn extract_environment_patch(
    image: &SlideImage,
    inst: &CellInstance,
    all_insts: &[CellInstance],
    env_size: usize,
    env_input_size: usize,
    mask_policy: MaskPolicy,
    fill_raw: [f32; 3],
    stats: &ChannelStats,
) -> Result<EnvironmentPatch> {
    // The environment must contain at least the crop window.
    let side = (env_size as i64).max(1);
    let win = Window::centered(inst.centroid.0, inst.centroid.1, side)
        .clipped(image.pixels.height, image.pixels.width);
    if win.is_empty() {
        return Err(contract_err(format!(
            "cell {} environment window falls outside image {}",
            inst.cell_id, inst.slide_id
        )));
    }

    let mut pixels = image.pixels.resize_window(win, env_input_size, env_input_size);

    // Footprints are resampled by mapping each output pixel to its nearest
    // source pixel; with no resize this is the identity.
    let sh = win.height as f64 / env_input_size as f64;
    let sw = win.width as f64 / env_input_size as f64;
    let mut masked = vec![false; env_input_size * env_input_size];
    if mask_policy != MaskPolicy::None {
        let candidates: Vec<&CellInstance> = match mask_policy {
            MaskPolicy::TargetOnly => vec![inst],
            MaskPolicy::AllCells => all_insts
                .iter()
                .filter(|other| bbox_intersects_window(other, win))
                .collect(),
            MaskPolicy::None => unreachable!(),
        };
        for i in 0..env_input_size {
            let src_r = (win.top as f64 + (i as f64 + 0.5) * sh - 0.5)
                .clamp(win.top as f64, (win.top + win.height - 1) as f64)
                .round() as i64;
            for j in 0..env_input_size {
                let src_c = (win.left as f64 + (j as f64 + 0.5) * sw - 0.5)
                    .clamp(win.left as f64, (win.left + win.width - 1) as f64)
                    .round() as i64;
                if candidates.iter().any(|c| c.mask_at(src_r, src_c)) {
                    masked[i * env_input_size + j] = true;
                }
            }
        }
        for (px, m) in pixels.data.chunks_exact_mut(3).zip(&masked) {
            if *m {
                px.copy_from_slice(&fill_raw);
            }
        }
    }

    stats.normalize(&mut pixels);
    let fill = [
        (fill_raw[0] - stats.mean[0]) / stats.std[0],
        (fill_raw[1] - stats.mean[1]) / stats.std[1],
        (fill_raw[2] - stats.mean[2]) / stats.std[2],
    ];
    Ok(EnvironmentPatch {
        cell_id: inst.cell_id.clone(),
        pixels,
        mask_policy,
        masked,
        fill,
    })
}

fn bbox_intersects_window(inst: &CellInstance, win: Window) -> bool {
    let (top, left, h, w) = inst.bbox;
    (top as i64) < win.top + win.height
        && (top + h) as i64 > win.top
        && (left as i64) < win.left + win.width
        && (left + w) as i64 > win.left
}

/// Resolve the configured fill to a raw [0,1] color.
pub fn resolve_fill(fill: MaskFill, stats: &ChannelStats) -> [f32; 3] {
    match fill {
        MaskFill::DatasetMean => stats.mean,
        MaskFill::Zero => [0.0; 3],
        MaskFill::Value(rgb) => rgb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_slide(h: usize, w: usize) -> SlideImage {
        let mut pixels = ImageBuf::new(h, w);
        for r in 0..h {
            for c in 0..w {
                pixels.set(r, c, [r as f32, c as f32, 0.0]);
            }
        }
        SlideImage { slide_id: "s".into(), magnification: "40x".into(), pixels }
    }

    fn disk_instance(id: &str, row: usize, col: usize, half: usize) -> CellInstance {
        let side = 2 * half;
        CellInstance {
            cell_id: id.into(),
            slide_id: "s".into(),
            centroid: (row as f64, col as f64),
            bbox: (row - half, col - half, side, side),
            mask: vec![true; side * side],
            label: None,
        }
    }

    #[test]
    fn scale_two_on_20px_cell_gives_40px_window() {
        let inst = disk_instance("c", 40, 40, 10);
        assert_eq!(crop_window_side(&inst, 2.0), 40);
    }

    #[test]
    fn exact_window_is_identity() {
        // window_scale=1 on a 32x32 cell, constant image: resize is identity.
        let img = SlideImage {
            slide_id: "s".into(),
            magnification: "40x".into(),
            pixels: ImageBuf::filled(64, 64, [0.25, 0.5, 0.75]),
        };
        let inst = disk_instance("c", 32, 32, 16);
        let crop =
            extract_cell_crop(&img, &inst, 1.0, 32, &ChannelStats::identity()).unwrap();
        for px in crop.pixels.data.chunks_exact(3) {
            assert!((px[0] - 0.25).abs() < 1e-6);
            assert!((px[1] - 0.5).abs() < 1e-6);
            assert!((px[2] - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn corner_centroid_is_clipped_but_full_size() {
        // Oracle: on a 5x5 gradient image, a side-4 window centered at (0,0)
        // clips to rows/cols [0,2). The resized 32x32 output samples only
        // inside that rectangle, so channel0 (row index) stays within [0,1].
        let img = gradient_slide(5, 5);
        let inst = CellInstance {
            cell_id: "c".into(),
            slide_id: "s".into(),
            centroid: (0.0, 0.0),
            bbox: (0, 0, 2, 2),
            mask: vec![true; 4],
            label: None,
        };
        let crop = extract_cell_crop(&img, &inst, 2.0, 32, &ChannelStats::identity()).unwrap();
        assert_eq!(crop.pixels.height, 32);
        assert_eq!(crop.pixels.width, 32);
        for px in crop.pixels.data.chunks_exact(3) {
            assert!(px[0] >= 0.0 && px[0] <= 1.0, "row channel {}", px[0]);
            assert!(px[1] >= 0.0 && px[1] <= 1.0, "col channel {}", px[1]);
        }
        // The window truly spans both source rows.
        let top_left = crop.pixels.get(0, 0);
        let bottom_right = crop.pixels.get(31, 31);
        assert!(bottom_right[0] > top_left[0]);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let img = gradient_slide(16, 16);
        let inst = CellInstance {
            cell_id: "c".into(),
            slide_id: "s".into(),
            centroid: (8.0, 8.0),
            bbox: (6, 6, 4, 4),
            mask: vec![false; 16],
            label: None,
        };
        assert!(extract_cell_crop(&img, &inst, 2.0, 32, &ChannelStats::identity()).is_err());
    }

    #[test]
    fn all_cells_masking_covers_union_of_footprints() {
        // Oracle: set union of mask bitmaps on a synthetic 64x64 image with
        // env window equal to the patch size (no resize).
        let img = SlideImage {
            slide_id: "s".into(),
            magnification: "40x".into(),
            pixels: ImageBuf::filled(64, 64, [0.5, 0.5, 0.5]),
        };
        let cells = vec![
            disk_instance("a", 32, 32, 3),
            disk_instance("b", 20, 40, 2),
            disk_instance("c", 44, 24, 2),
        ];
        let fill = [0.0, 0.0, 0.0];
        let patch = extract_environment_patch(
            &img,
            &cells[0],
            &cells,
            64,
            64,
            MaskPolicy::AllCells,
            fill,
            &ChannelStats::identity(),
        )
        .unwrap();
        // Window is the whole image here.
        let mut expected = vec![false; 64 * 64];
        for inst in &cells {
            for r in 0..64i64 {
                for c in 0..64i64 {
                    if inst.mask_at(r, c) {
                        expected[(r * 64 + c) as usize] = true;
                    }
                }
            }
        }
        assert_eq!(patch.masked, expected);
        for (px, m) in patch.pixels.data.chunks_exact(3).zip(&expected) {
            if *m {
                assert_eq!(px, fill);
            } else {
                assert_eq!(px, [0.5, 0.5, 0.5]);
            }
        }
    }

    #[test]
    fn target_only_equals_all_cells_when_alone() {
        let img = gradient_slide(64, 64);
        let inst = disk_instance("a", 32, 32, 4);
        let all = vec![inst.clone()];
        let a = extract_environment_patch(
            &img, &inst, &all, 48, 32, MaskPolicy::AllCells, [0.0; 3],
            &ChannelStats::identity(),
        )
        .unwrap();
        let b = extract_environment_patch(
            &img, &inst, &all, 48, 32, MaskPolicy::TargetOnly, [0.0; 3],
            &ChannelStats::identity(),
        )
        .unwrap();
        assert_eq!(a.pixels.data, b.pixels.data);
        assert_eq!(a.masked, b.masked);
    }

    #[test]
    fn mask_policy_none_is_raw_window() {
        let img = gradient_slide(64, 64);
        let inst = disk_instance("a", 32, 32, 4);
        let all = vec![inst.clone()];
        let patch = extract_environment_patch(
            &img, &inst, &all, 32, 32, MaskPolicy::None, [0.0; 3], &ChannelStats::identity(),
        )
        .unwrap();
        assert!(patch.masked.iter().all(|&m| !m));
        // env window == input size: raw pixels pass through.
        let raw = img.pixels.resize_window(
            Window::centered(32.0, 32.0, 32).clipped(64, 64),
            32,
            32,
        );
        assert_eq!(patch.pixels.data, raw.data);
    }
}
