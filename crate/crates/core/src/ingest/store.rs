//! Persisted record store: one binary array file per field plus a JSON index.
//!
//! `crops.bin` and `envs.bin` hold little-endian float32, row-major
//! `n x side x side x 3`. `index.json` carries cell ids, provenance, labels,
//! and the normalization statistics actually applied.

use super::extract::ChannelStats;
use super::manifest::Split;
use crate::error::{data_err, Result, VoltaError};
use crate::imgproc::ImageBuf;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellEntry {
    pub cell_id: String,
    pub slide_id: String,
    pub split: Split,
    /// (row, col) centroid in slide pixels.
    pub centroid: (f64, f64),
    /// (top, left, height, width) in slide pixels.
    pub bbox: (usize, usize, usize, usize),
    /// Mask pixel count.
    pub area: usize,
    /// Index into `label_names`, when labeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideEntry {
    pub slide_id: String,
    pub height: usize,
    pub width: usize,
    pub magnification: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreIndex {
    pub format_version: u32,
    pub crop_size: usize,
    pub env_size: usize,
    pub n: usize,
    pub normalization: ChannelStats,
    /// Fill value of masked environment pixels after normalization.
    pub env_fill: [f32; 3],
    /// True when the train split was empty and statistics defaulted.
    pub stats_undefined: bool,
    pub label_names: Vec<String>,
    pub cells: Vec<CellEntry>,
    pub slides: Vec<SlideEntry>,
    pub skipped: Vec<super::build::SkippedCell>,
}

/// On-disk dataset of cell crops and environment patches.
#[derive(Debug)]
pub struct RecordStore {
    pub dir: PathBuf,
    pub index: StoreIndex,
}

impl RecordStore {
    pub fn crops_path(dir: &Path) -> PathBuf {
        dir.join("crops.bin")
    }

    pub fn envs_path(dir: &Path) -> PathBuf {
        dir.join("envs.bin")
    }

    pub fn index_path(dir: &Path) -> PathBuf {
        dir.join("index.json")
    }

    pub fn open(dir: &Path) -> Result<RecordStore> {
        let index_path = Self::index_path(dir);
        let text = std::fs::read_to_string(&index_path).map_err(|e| VoltaError::File {
            path: index_path.clone(),
            reason: e.to_string(),
        })?;
        let index: StoreIndex = serde_json::from_str(&text)
            .map_err(|e| data_err(format!("{}: {e}", index_path.display())))?;
        if index.format_version != STORE_FORMAT_VERSION {
            return Err(data_err(format!(
                "{}: unsupported store version {}",
                index_path.display(),
                index.format_version
            )));
        }
        let store = RecordStore { dir: dir.to_path_buf(), index };
        store.check_sizes()?;
        Ok(store)
    }

    fn check_sizes(&self) -> Result<()> {
        let crop_bytes = self.index.n * self.index.crop_size * self.index.crop_size * 3 * 4;
        let env_bytes = self.index.n * self.index.env_size * self.index.env_size * 3 * 4;
        for (path, expected) in [
            (Self::crops_path(&self.dir), crop_bytes as u64),
            (Self::envs_path(&self.dir), env_bytes as u64),
        ] {
            let len = std::fs::metadata(&path)
                .map_err(|e| VoltaError::File { path: path.clone(), reason: e.to_string() })?
                .len();
            if len != expected {
                return Err(data_err(format!(
                    "{}: expected {expected} bytes, found {len}",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Read one crop (row-major side x side x 3 float32).
    pub fn read_crop(&self, row: usize) -> Result<ImageBuf> {
        self.read_image(&Self::crops_path(&self.dir), row, self.index.crop_size)
    }

    pub fn read_env(&self, row: usize) -> Result<ImageBuf> {
        self.read_image(&Self::envs_path(&self.dir), row, self.index.env_size)
    }

    fn read_image(&self, path: &Path, row: usize, side: usize) -> Result<ImageBuf> {
        use std::io::{Seek, SeekFrom};
        if row >= self.index.n {
            return Err(data_err(format!("row {row} out of range ({} records)", self.index.n)));
        }
        let floats = side * side * 3;
        let mut file = std::fs::File::open(path)
            .map_err(|e| VoltaError::File { path: path.to_path_buf(), reason: e.to_string() })?;
        file.seek(SeekFrom::Start((row * floats * 4) as u64))?;
        let mut bytes = vec![0u8; floats * 4];
        file.read_exact(&mut bytes)?;
        let mut img = ImageBuf::new(side, side);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            img.data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(img)
    }

    /// Read every crop row into memory (training-scale datasets are small).
    pub fn read_all_crops(&self) -> Result<Vec<ImageBuf>> {
        self.read_all(&Self::crops_path(&self.dir), self.index.crop_size)
    }

    pub fn read_all_envs(&self) -> Result<Vec<ImageBuf>> {
        self.read_all(&Self::envs_path(&self.dir), self.index.env_size)
    }

    fn read_all(&self, path: &Path, side: usize) -> Result<Vec<ImageBuf>> {
        let bytes = std::fs::read(path)
            .map_err(|e| VoltaError::File { path: path.to_path_buf(), reason: e.to_string() })?;
        let floats = side * side * 3;
        let mut out = Vec::with_capacity(self.index.n);
        for row in 0..self.index.n {
            let mut img = ImageBuf::new(side, side);
            let start = row * floats * 4;
            for i in 0..floats {
                let o = start + i * 4;
                img.data[i] = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
            }
            out.push(img);
        }
        Ok(out)
    }

    /// Rows belonging to a split, in store order.
    pub fn split_rows(&self, split: Split) -> Vec<usize> {
        self.index
            .cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn label_of(&self, row: usize) -> Option<&str> {
        self.index.cells[row]
            .label
            .map(|ix| self.index.label_names[ix].as_str())
    }
}

/// Streaming writer used by `build_dataset`; owns the binary files
/// exclusively while extraction feeds it rows in store order.
pub struct StoreWriter {
    crops: BufWriter<std::fs::File>,
    envs: BufWriter<std::fs::File>,
    n: usize,
}

impl StoreWriter {
    pub fn create(dir: &Path) -> Result<StoreWriter> {
        std::fs::create_dir_all(dir)?;
        let crops = BufWriter::new(std::fs::File::create(RecordStore::crops_path(dir))?);
        let envs = BufWriter::new(std::fs::File::create(RecordStore::envs_path(dir))?);
        Ok(StoreWriter { crops, envs, n: 0 })
    }

    pub fn append(&mut self, crop: &ImageBuf, env: &ImageBuf) -> Result<()> {
        write_f32s(&mut self.crops, &crop.data)?;
        write_f32s(&mut self.envs, &env.data)?;
        self.n += 1;
        Ok(())
    }

    pub fn finish(mut self, dir: &Path, mut index: StoreIndex) -> Result<RecordStore> {
        self.crops.flush()?;
        self.envs.flush()?;
        index.n = self.n;
        let text = serde_json::to_string_pretty(&index)?;
        std::fs::write(RecordStore::index_path(dir), text)?;
        Ok(RecordStore { dir: dir.to_path_buf(), index })
    }
}

fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
