//! Scanner-paired dataset manifest.
//!
//! ```json
//! {"scanners": ["AT2", "GT450"], "patch_size": 1024, "micron_extent": 800.0,
//!  "samples": [{"sample_id": "s0", "region_origin": [0, 0],
//!               "patches": {"AT2": "s0/AT2.png", "GT450": "s0/GT450.png"}}]}
//! ```
//!
//! Patch paths are stored as written and resolved relative to the manifest file.
//! A sample may also name a ground-truth mask (`"label": "s0/label.png"`), in
//! which case the manifest's optional `num_classes` gives its class count.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fileio::write_string;
use crate::image::{image_dimensions, load_image, load_label_mask, RasterImage};

/// Canonical scanners of the released dataset, reference first.
pub const CANONICAL_SCANNERS: [&str; 5] = ["AT2", "GT450", "DP200", "P1000", "B300"];

/// Background, stroma, tumor.
pub const DEFAULT_NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScannerId(String);

impl ScannerId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::schema("scanners", "empty scanner id"));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ScannerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for ScannerId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub sample_id: String,
    pub region_origin: [u64; 2],
    pub patches: BTreeMap<ScannerId, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scanners: Vec<ScannerId>,
    pub patch_size: usize,
    pub micron_extent: f64,
    pub samples: Vec<PairedSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Structural equality over the data model; the resolution directory is not part of it.
impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.scanners == other.scanners
            && self.patch_size == other.patch_size
            && self.micron_extent == other.micron_extent
            && self.samples == other.samples
            && self.num_classes == other.num_classes
    }
}

impl DatasetManifest {
    pub fn new(scanners: Vec<ScannerId>, patch_size: usize, micron_extent: f64, samples: Vec<PairedSample>) -> Result<Self> {
        let m = Self { scanners, patch_size, micron_extent, samples, num_classes: None, base_dir: PathBuf::new() };
        m.validate_schema()?;
        Ok(m)
    }

    /// Parses and validates everything that does not require touching image files.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(json).map_err(|e| Error::schema(json_field_hint(&e), e.to_string()))?;
        m.validate_schema()?;
        Ok(m)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, patch_path: &str) -> PathBuf {
        self.base_dir.join(patch_path)
    }

    pub fn patch_path(&self, sample: &PairedSample, scanner: &ScannerId) -> Result<PathBuf> {
        sample
            .patches
            .get(scanner)
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::MissingPatch { sample: sample.sample_id.clone(), scanner: scanner.to_string() })
    }

    /// Loads every patch of one sample, in manifest scanner order.
    pub fn load_sample(&self, sample: &PairedSample) -> Result<PairedImages> {
        let mut patches = BTreeMap::new();
        for scanner in self.scanners.iter().filter(|s| sample.patches.contains_key(*s)) {
            patches.insert(scanner.clone(), load_image(self.patch_path(sample, scanner)?)?);
        }
        let label = match &sample.label {
            Some(rel) => Some(load_label_mask(self.resolve(rel), self.num_classes.unwrap_or(DEFAULT_NUM_CLASSES))?),
            None => None,
        };
        Ok(PairedImages { sample_id: sample.sample_id.clone(), region_origin: sample.region_origin, patches, label })
    }

    pub fn validate_schema(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, s) in self.scanners.iter().enumerate() {
            if s.as_str().trim().is_empty() {
                return Err(Error::schema(format!("scanners[{i}]"), "empty scanner id"));
            }
            if !seen.insert(s) {
                return Err(Error::schema(format!("scanners[{i}]"), format!("duplicate scanner id {s}")));
            }
        }
        if self.patch_size == 0 {
            return Err(Error::schema("patch_size", "must be positive"));
        }
        if !self.micron_extent.is_finite() || self.micron_extent < 0.0 {
            return Err(Error::schema("micron_extent", "must be a finite non-negative number"));
        }
        let mut ids = HashSet::new();
        for (i, sample) in self.samples.iter().enumerate() {
            if !ids.insert(sample.sample_id.as_str()) {
                return Err(Error::schema(
                    format!("samples[{i}].sample_id"),
                    format!("duplicate sample id {}", sample.sample_id),
                ));
            }
            if sample.patches.len() < 2 {
                return Err(Error::schema(format!("samples[{i}].patches"), "need at least 2 scanners"));
            }
            if let Some(unknown) = sample.patches.keys().find(|k| !seen.contains(k)) {
                return Err(Error::schema(
                    format!("samples[{i}].patches.{unknown}"),
                    format!("scanner {unknown} is not listed in `scanners`"),
                ));
            }
        }
        Ok(())
    }

    /// Checks that every sample's patches exist and share dimensions (headers only).
    pub fn validate_files(&self) -> Result<()> {
        for sample in &self.samples {
            let mut dims: Option<(ScannerId, (usize, usize))> = None;
            for (scanner, rel) in &sample.patches {
                let d = image_dimensions(self.resolve(rel))?;
                match &dims {
                    None => dims = Some((scanner.clone(), d)),
                    Some((first, d0)) if *d0 != d => {
                        return Err(Error::DimensionMismatch(format!(
                            "sample {}: {first} is {}x{} but {scanner} is {}x{}",
                            sample.sample_id, d0.0, d0.1, d.0, d.1
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Samples that carry a patch for every listed scanner.
    pub fn is_complete(&self) -> bool {
        self.samples.iter().all(|s| self.scanners.iter().all(|k| s.patches.contains_key(k)))
    }
}

fn json_field_hint(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports "missing field `x`" / "unknown field `x`"
    msg.split('`').nth(1).map(str::to_string).unwrap_or_else(|| format!("line {}", e.line()))
}

/// Reads, validates and checks patch dimensions.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = DatasetManifest::from_json_str(&text)?.with_base_dir(base);
    m.validate_files()?;
    Ok(m)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    m.validate_schema()?;
    let mut text = m.to_json_string();
    text.push('\n');
    write_string(path, &text)
}

/// One tissue region held in memory: a patch per scanner, plus an optional
/// ground-truth mask shared by all of them.
#[derive(Debug, Clone)]
pub struct PairedImages {
    pub sample_id: String,
    pub region_origin: [u64; 2],
    pub patches: BTreeMap<ScannerId, RasterImage>,
    pub label: Option<crate::image::LabelMask>,
}

impl PairedImages {
    pub fn patch(&self, scanner: &ScannerId) -> Result<&RasterImage> {
        self.patches
            .get(scanner)
            .ok_or_else(|| Error::MissingPatch { sample: self.sample_id.clone(), scanner: scanner.to_string() })
    }
}

pub fn scanner_ids<S: AsRef<str>>(names: &[S]) -> Result<Vec<ScannerId>> {
    names.iter().map(|n| ScannerId::new(n.as_ref())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::save_image;

    fn sample(id: &str, scanners: &[&str]) -> PairedSample {
        PairedSample {
            sample_id: id.into(),
            region_origin: [0, 0],
            patches: scanners.iter().map(|s| (ScannerId::new(*s).unwrap(), format!("{id}/{s}.ppm"))).collect(),
            label: None,
        }
    }

    #[test]
    fn unknown_scanner_is_a_schema_error_naming_the_field() {
        let json = r#"{"scanners":["AT2","GT450"],"patch_size":8,"micron_extent":800,
            "samples":[{"sample_id":"a","region_origin":[0,0],"patches":{"AT2":"a.png","X":"b.png"}}]}"#;
        match DatasetManifest::from_json_str(json) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "samples[0].patches.X"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_sample_list_is_valid() {
        let json = r#"{"scanners":["AT2","GT450"],"patch_size":8,"micron_extent":800,"samples":[]}"#;
        assert!(DatasetManifest::from_json_str(json).unwrap().samples.is_empty());
    }

    #[test]
    fn missing_field_is_named() {
        let json = r#"{"scanners":["AT2"],"micron_extent":800,"samples":[]}"#;
        match DatasetManifest::from_json_str(json) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "patch_size"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicates_are_rejected() {
        let ids = scanner_ids(&["AT2", "AT2"]).unwrap();
        assert!(DatasetManifest::new(ids, 8, 800.0, vec![]).is_err());
        let ids = scanner_ids(&["AT2", "GT450"]).unwrap();
        let s = sample("a", &["AT2", "GT450"]);
        assert!(DatasetManifest::new(ids, 8, 800.0, vec![s.clone(), s]).is_err());
        assert!(ScannerId::new("  ").is_err());
    }

    #[test]
    fn single_scanner_sample_is_rejected() {
        let ids = scanner_ids(&["AT2", "GT450"]).unwrap();
        assert!(DatasetManifest::new(ids, 8, 800.0, vec![sample("a", &["AT2"])]).is_err());
    }

    #[test]
    fn dimension_mismatch_detected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("a")).unwrap();
        save_image(&RasterImage::filled(4, 4, [0.5; 3]), dir.path().join("a/AT2.ppm")).unwrap();
        save_image(&RasterImage::filled(4, 5, [0.5; 3]), dir.path().join("a/GT450.ppm")).unwrap();
        let m = DatasetManifest::new(scanner_ids(&["AT2", "GT450"]).unwrap(), 4, 800.0, vec![sample("a", &["AT2", "GT450"])])
            .unwrap();
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn save_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("a")).unwrap();
        for s in ["AT2", "GT450", "DP200"] {
            save_image(&RasterImage::filled(4, 4, [0.5; 3]), dir.path().join(format!("a/{s}.ppm"))).unwrap();
        }
        let m = DatasetManifest::new(
            scanner_ids(&["AT2", "GT450", "DP200"]).unwrap(),
            4,
            800.0,
            vec![sample("a", &["AT2", "GT450", "DP200"])],
        )
        .unwrap();
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
        let loaded = back.load_sample(&back.samples[0]).unwrap();
        assert_eq!(loaded.patches.len(), 3);
    }
}
