//! Instance loading: 16-bit instance-ID label images (0 = background) or
//! per-instance polygon JSON, plus the optional cell-label side file.

use super::CellInstance;
use crate::error::{data_err, Result, VoltaError};
use crate::imgproc::ImageBuf;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

/// Side file mapping instance id (or polygon cell id) to a class label.
#[derive(Debug, Deserialize)]
struct LabelFile {
    labels: BTreeMap<String, String>,
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| VoltaError::File {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let file: LabelFile =
        serde_json::from_str(&text).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(file.labels)
}

/// Load the image as float RGB in [0,1].
pub fn load_image_rgb(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path).map_err(|e| VoltaError::File {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut out = ImageBuf::new(h as usize, w as usize);
    for (i, px) in rgb.pixels().enumerate() {
        out.data[i * 3] = px.0[0] as f32 / 255.0;
        out.data[i * 3 + 1] = px.0[1] as f32 / 255.0;
        out.data[i * 3 + 2] = px.0[2] as f32 / 255.0;
    }
    Ok(out)
}

/// Load instances for a slide from either mask format. Labels, when present,
/// are keyed by the instance id (label images) or the polygon `id`.
pub fn load_instances(
    mask_path: &Path,
    slide_id: &str,
    labels: Option<&BTreeMap<String, String>>,
) -> Result<Vec<CellInstance>> {
    let is_json = mask_path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    if is_json {
        load_polygon_instances(mask_path, slide_id, labels)
    } else {
        load_id_image_instances(mask_path, slide_id, labels)
    }
}

fn load_id_image_instances(
    path: &Path,
    slide_id: &str,
    labels: Option<&BTreeMap<String, String>>,
) -> Result<Vec<CellInstance>> {
    let img = image::open(path).map_err(|e| VoltaError::File {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let ids = img.to_luma16();
    let (w, h) = ids.dimensions();
    let (w, h) = (w as usize, h as usize);

    // First pass: bbox and pixel sums per instance id.
    #[derive(Default)]
    struct Acc {
        min_r: usize,
        max_r: usize,
        min_c: usize,
        max_c: usize,
        sum_r: f64,
        sum_c: f64,
        count: usize,
    }
    let mut accs: BTreeMap<u16, Acc> = BTreeMap::new();
    for r in 0..h {
        for c in 0..w {
            let id = ids.get_pixel(c as u32, r as u32).0[0];
            if id == 0 {
                continue;
            }
            let acc = accs.entry(id).or_insert(Acc {
                min_r: r,
                max_r: r,
                min_c: c,
                max_c: c,
                ..Default::default()
            });
            acc.min_r = acc.min_r.min(r);
            acc.max_r = acc.max_r.max(r);
            acc.min_c = acc.min_c.min(c);
            acc.max_c = acc.max_c.max(c);
            acc.sum_r += r as f64;
            acc.sum_c += c as f64;
            acc.count += 1;
        }
    }

    let mut out = Vec::with_capacity(accs.len());
    for (id, acc) in accs {
        let (top, left) = (acc.min_r, acc.min_c);
        let bh = acc.max_r - acc.min_r + 1;
        let bw = acc.max_c - acc.min_c + 1;
        let mut mask = vec![false; bh * bw];
        for r in 0..bh {
            for c in 0..bw {
                if ids.get_pixel((left + c) as u32, (top + r) as u32).0[0] == id {
                    mask[r * bw + c] = true;
                }
            }
        }
        let key = id.to_string();
        out.push(CellInstance {
            cell_id: format!("{slide_id}:{id:05}"),
            slide_id: slide_id.to_string(),
            centroid: (acc.sum_r / acc.count as f64 + 0.5, acc.sum_c / acc.count as f64 + 0.5),
            bbox: (top, left, bh, bw),
            mask,
            label: labels.and_then(|m| m.get(&key).cloned()),
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct PolygonFile {
    cells: Vec<PolygonCell>,
}

#[derive(Debug, Deserialize)]
struct PolygonCell {
    id: String,
    /// Vertices as (row, col) pairs; the polygon is closed implicitly.
    polygon: Vec<(f64, f64)>,
    #[serde(default)]
    label: Option<String>,
}

fn load_polygon_instances(
    path: &Path,
    slide_id: &str,
    labels: Option<&BTreeMap<String, String>>,
) -> Result<Vec<CellInstance>> {
    let text = std::fs::read_to_string(path).map_err(|e| VoltaError::File {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let file: PolygonFile =
        serde_json::from_str(&text).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let mut out = Vec::with_capacity(file.cells.len());
    for cell in file.cells {
        if cell.polygon.len() < 3 {
            return Err(data_err(format!(
                "{}: polygon {} has fewer than 3 vertices",
                path.display(),
                cell.id
            )));
        }
        let min_r = cell.polygon.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_r = cell.polygon.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_c = cell.polygon.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_c = cell.polygon.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let top = min_r.floor().max(0.0) as usize;
        let left = min_c.floor().max(0.0) as usize;
        let bh = (max_r.ceil() as usize).saturating_sub(top) + 1;
        let bw = (max_c.ceil() as usize).saturating_sub(left) + 1;

        // Even-odd scanline rasterization against pixel centers.
        let mut mask = vec![false; bh * bw];
        let mut sum_r = 0.0;
        let mut sum_c = 0.0;
        let mut count = 0usize;
        let n = cell.polygon.len();
        for r in 0..bh {
            let py = (top + r) as f64 + 0.5;
            for c in 0..bw {
                let px = (left + c) as f64 + 0.5;
                let mut inside = false;
                for i in 0..n {
                    let (y1, x1) = cell.polygon[i];
                    let (y2, x2) = cell.polygon[(i + 1) % n];
                    if (y1 > py) != (y2 > py) {
                        let x_at = x1 + (py - y1) / (y2 - y1) * (x2 - x1);
                        if px < x_at {
                            inside = !inside;
                        }
                    }
                }
                if inside {
                    mask[r * bw + c] = true;
                    sum_r += (top + r) as f64;
                    sum_c += (left + c) as f64;
                    count += 1;
                }
            }
        }
        if count == 0 {
            // Degenerate polygons surface downstream as skipped records.
            continue;
        }
        let label = cell
            .label
            .or_else(|| labels.and_then(|m| m.get(&cell.id).cloned()));
        out.push(CellInstance {
            cell_id: format!("{slide_id}:{}", cell.id),
            slide_id: slide_id.to_string(),
            centroid: (sum_r / count as f64 + 0.5, sum_c / count as f64 + 0.5),
            bbox: (top, left, bh, bw),
            mask,
            label,
        });
    }
    out.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma};

    #[test]
    fn id_image_instances_have_exact_masks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(10, 10);
        // Instance 1: 2x2 block at (2,3); instance 7: single pixel at (8,1).
        for (r, c) in [(2u32, 3u32), (2, 4), (3, 3), (3, 4)] {
            img.put_pixel(c, r, Luma([1u16]));
        }
        img.put_pixel(1, 8, Luma([7u16]));
        img.save(&path).unwrap();

        let insts = load_instances(&path, "s1", None).unwrap();
        assert_eq!(insts.len(), 2);
        assert_eq!(insts[0].cell_id, "s1:00001");
        assert_eq!(insts[0].bbox, (2, 3, 2, 2));
        assert_eq!(insts[0].mask_area(), 4);
        assert_eq!(insts[0].centroid, (3.0, 4.0));
        assert_eq!(insts[1].cell_id, "s1:00007");
        assert_eq!(insts[1].mask_area(), 1);
    }

    #[test]
    fn polygon_square_rasterizes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.json");
        std::fs::write(
            &path,
            r#"{"cells":[{"id":"a","polygon":[[2,2],[2,6],[6,6],[6,2]],"label":"tumor"}]}"#,
        )
        .unwrap();
        let insts = load_instances(&path, "s", None).unwrap();
        assert_eq!(insts.len(), 1);
        // Pixel centers strictly inside [2,6]^2: rows/cols 2..6 -> 4x4 = 16.
        assert_eq!(insts[0].mask_area(), 16);
        assert_eq!(insts[0].label.as_deref(), Some("tumor"));
        let (cr, cc) = insts[0].centroid;
        assert!((cr - 4.0).abs() < 1e-9 && (cc - 4.0).abs() < 1e-9);
    }
}
