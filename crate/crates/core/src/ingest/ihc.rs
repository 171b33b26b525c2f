//! Ground-truth labels from co-registered IHC images: the most expressed
//! biomarker in a scaled window around the cell, accepted only when its share
//! of total expression reaches the dominance threshold.

use super::{CellInstance, SlideImage};
use crate::config::BiomarkerChannel;
use crate::error::{config_err, contract_err, Result};
use crate::imgproc::Window;

/// Expression score per biomarker: channel intensity summed over pixels at or
/// above the biomarker's positivity threshold (intensity and quantity in one
/// summation).
pub fn biomarker_scores(
    ihc: &SlideImage,
    win: Window,
    biomarkers: &[BiomarkerChannel],
) -> Vec<f64> {
    let mut scores = vec![0.0f64; biomarkers.len()];
    for r in win.top..win.top + win.height {
        for c in win.left..win.left + win.width {
            let px = ihc.pixels.get(r as usize, c as usize);
            for (i, b) in biomarkers.iter().enumerate() {
                let v = px[b.channel];
                if v >= b.min_intensity {
                    scores[i] += v as f64;
                }
            }
        }
    }
    scores
}

/// Returns the dominant biomarker name, or `None` when no biomarker holds at
/// least `dominance_threshold` of the window's total expression.
///
/// `window_scale` multiplies the cell size (max bbox side), so the caller
/// passes the H&E crop scale times the IHC window multiplier.
pub fn derive_label_from_ihc(
    inst: &CellInstance,
    ihc: &SlideImage,
    he_dims: (usize, usize),
    window_scale: f64,
    dominance_threshold: f64,
    biomarkers: &[BiomarkerChannel],
) -> Result<Option<String>> {
    if biomarkers.is_empty() {
        return Err(config_err("IHC labeling requires at least one configured biomarker"));
    }
    if (ihc.pixels.height, ihc.pixels.width) != he_dims {
        return Err(config_err(format!(
            "IHC image {} is {}x{} but the H&E image is {}x{}; images must be co-registered",
            ihc.slide_id, ihc.pixels.height, ihc.pixels.width, he_dims.0, he_dims.1
        )));
    }
    if window_scale <= 0.0 {
        return Err(contract_err(format!("window_scale must be > 0, got {window_scale}")));
    }

    let side = ((window_scale * inst.size() as f64).round() as i64).max(1);
    let win = Window::centered(inst.centroid.0, inst.centroid.1, side)
        .clipped(ihc.pixels.height, ihc.pixels.width);
    if win.is_empty() {
        return Ok(None);
    }
    let scores = biomarker_scores(ihc, win, biomarkers);
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Ok(None);
    }
    let (best, &best_score) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("non-empty biomarker list");
    if best_score / total >= dominance_threshold {
        Ok(Some(biomarkers[best].name.clone()))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::ImageBuf;

    fn markers() -> Vec<BiomarkerChannel> {
        vec![
            BiomarkerChannel { name: "CD3".into(), channel: 0, min_intensity: 0.05 },
            BiomarkerChannel { name: "PanCK".into(), channel: 1, min_intensity: 0.05 },
        ]
    }

    fn cell_at(r: usize, c: usize) -> CellInstance {
        CellInstance {
            cell_id: "c".into(),
            slide_id: "s".into(),
            centroid: (r as f64, c as f64),
            bbox: (r - 2, c - 2, 4, 4),
            mask: vec![true; 16],
            label: None,
        }
    }

    /// Build an IHC image whose window around (16,16) carries the requested
    /// per-channel shares; the oracle is the explicit share arithmetic.
    fn ihc_with_shares(red_px: usize, green_px: usize) -> SlideImage {
        let mut img = ImageBuf::new(32, 32);
        let mut placed = 0;
        'outer: for r in 8..24 {
            for c in 8..24 {
                if placed < red_px {
                    img.set(r, c, [1.0, 0.0, 0.0]);
                } else if placed < red_px + green_px {
                    img.set(r, c, [0.0, 1.0, 0.0]);
                } else {
                    break 'outer;
                }
                placed += 1;
            }
        }
        SlideImage { slide_id: "ihc".into(), magnification: "40x".into(), pixels: img }
    }

    #[test]
    fn single_biomarker_wins_at_any_threshold() {
        let ihc = ihc_with_shares(20, 0);
        let label =
            derive_label_from_ihc(&cell_at(16, 16), &ihc, (32, 32), 4.0, 1.0, &markers()).unwrap();
        assert_eq!(label.as_deref(), Some("CD3"));
    }

    #[test]
    fn shares_below_threshold_yield_no_label() {
        // shares (0.65, 0.35) against threshold 0.7.
        let ihc = ihc_with_shares(65, 35);
        let label =
            derive_label_from_ihc(&cell_at(16, 16), &ihc, (32, 32), 4.0, 0.7, &markers()).unwrap();
        assert_eq!(label, None);
    }

    #[test]
    fn shares_above_threshold_pick_argmax() {
        // shares (0.72, 0.28): oracle = 72 / (72 + 28) = 0.72 >= 0.7.
        let ihc = ihc_with_shares(72, 28);
        let label =
            derive_label_from_ihc(&cell_at(16, 16), &ihc, (32, 32), 4.0, 0.7, &markers()).unwrap();
        assert_eq!(label.as_deref(), Some("CD3"));
    }

    #[test]
    fn unregistered_ihc_is_a_config_error() {
        let ihc = SlideImage {
            slide_id: "ihc".into(),
            magnification: "40x".into(),
            pixels: ImageBuf::new(16, 16),
        };
        let err = derive_label_from_ihc(&cell_at(8, 8), &ihc, (32, 32), 4.0, 0.7, &markers())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
