//! Declarative dataset manifest: a JSON list of image/mask(/labels/IHC)
//! tuples with train/test split tags. Paths are resolved relative to the
//! manifest file's directory.

use crate::error::{data_err, Result, VoltaError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: PathBuf,
    /// 16-bit instance-ID label image (0 = background) or polygon JSON.
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ihc: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| VoltaError::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| data_err(format!("manifest {}: {e}", path.display())))?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(data_err(format!(
                "manifest {}: unsupported format_version {} (expected {})",
                path.display(),
                manifest.format_version,
                MANIFEST_FORMAT_VERSION
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for record in &mut manifest.records {
            record.image = resolve(base, &record.image);
            record.mask = resolve(base, &record.mask);
            record.labels = record.labels.take().map(|p| resolve(base, &p));
            record.ihc = record.ihc.take().map(|p| resolve(base, &p));
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Every referenced file must exist.
    pub fn validate(&self) -> Result<()> {
        for record in &self.records {
            for path in [Some(&record.image), Some(&record.mask), record.labels.as_ref(), record.ihc.as_ref()]
                .into_iter()
                .flatten()
            {
                if !path.exists() {
                    return Err(VoltaError::File {
                        path: path.clone(),
                        reason: "referenced by manifest but missing".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Slide id: the image file stem.
    pub fn slide_id(record: &ManifestRecord) -> String {
        record
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| record.image.display().to_string())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file_fails_with_path_in_message() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = dir.path().join("manifest.json");
        std::fs::write(
            &manifest_path,
            r#"{"format_version":1,"records":[{"image":"nope.png","mask":"nope_mask.png","split":"train"}]}"#,
        )
        .unwrap();
        let err = DatasetManifest::load(&manifest_path).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = dir.path().join("manifest.json");
        std::fs::write(&manifest_path, r#"{"format_version":9,"records":[]}"#).unwrap();
        assert!(DatasetManifest::load(&manifest_path).is_err());
    }
}
