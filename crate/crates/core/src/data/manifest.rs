//! Dataset manifests: everything needed to reproduce an evaluation's inputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fixations::{load_fixations_with_sizes, write_subject_fixations, FixationLoad, MethodScanpath};
use super::images::{load_images, save_png};
use super::synthetic::{make_synthetic_dataset, oracle_scanpaths, OracleViewerConfig, SyntheticConfig};
use crate::error::{NevaError, Result};
use crate::metrics::GridSpec;
use crate::nn::resize_bilinear;
use crate::types::Stimulus;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    /// Resize every image to `[height, width]` (bilinear) after decoding.
    pub resize: Option<[usize; 2]>,
}

/// How a synthetic dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProvenance {
    pub n: usize,
    pub seed: u64,
    pub generator: SyntheticConfig,
    pub oracle: Option<OracleViewerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    /// Relative paths are resolved against the manifest's directory.
    pub image_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixation_file: Option<PathBuf>,
    /// CSV `image_id,label` for classification datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scanpath_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticProvenance>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NevaError::io(path, e))?;
        let mut m: DatasetManifest =
            toml::from_str(&text).map_err(|e| NevaError::data(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.image_dir);
        m.fixation_file.as_mut().map(resolve);
        m.labels_file.as_mut().map(resolve);
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| NevaError::invalid(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| NevaError::io(path, e))
    }
}

/// A dataset resolved from its manifest.
#[derive(Debug, Default)]
pub struct Dataset {
    pub images: BTreeMap<String, Stimulus>,
    pub labels: Option<BTreeMap<String, usize>>,
    pub fixations: Option<FixationLoad>,
    /// Unreadable image files, skipped.
    pub image_failures: Vec<(PathBuf, String)>,
}

impl Dataset {
    pub fn image_sizes(&self) -> BTreeMap<String, (usize, usize)> {
        self.images
            .iter()
            .map(|(k, s)| (k.clone(), (s.height(), s.width())))
            .collect()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct LabelRow {
    image_id: String,
    label: usize,
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let file = File::open(path).map_err(|e| NevaError::io(path, e))?;
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(file).deserialize::<LabelRow>() {
        let row = row?;
        out.insert(row.image_id, row.label);
    }
    Ok(out)
}

/// Loads images, labels and fixations named by `manifest`.
///
/// Fails with a data error if a fixation record or label refers to an image
/// that is not present in the image directory.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    if !manifest.image_dir.is_dir() {
        return Err(NevaError::data(format!(
            "image directory {} does not exist",
            manifest.image_dir.display()
        )));
    }
    let load = load_images(&manifest.image_dir)?;
    let mut images = load.images;
    // Fixation pixels refer to the decoded images, before any resize.
    let original_sizes: BTreeMap<String, (usize, usize)> = images
        .iter()
        .map(|(k, s)| (k.clone(), (s.height(), s.width())))
        .collect();
    if let Some([h, w]) = manifest.preprocessing.resize {
        for s in images.values_mut() {
            let resized = resize_bilinear(&s.to_chw(), h, w).mapv(|v| v.clamp(0.0, 1.0));
            *s = Stimulus::from_chw(&resized)?;
        }
    }
    let mut dataset = Dataset {
        images,
        image_failures: load.failures,
        ..Default::default()
    };
    if let Some(path) = &manifest.labels_file {
        let labels = load_labels(path)?;
        if let Some(id) = labels.keys().find(|id| !dataset.images.contains_key(*id)) {
            return Err(NevaError::data(format!("label for unknown image {id}")));
        }
        dataset.labels = Some(labels);
    }
    if let Some(path) = &manifest.fixation_file {
        let fix = load_fixations_with_sizes(path, &original_sizes)?;
        if let Some(r) = fix.records.iter().find(|r| !dataset.images.contains_key(&r.image_id)) {
            return Err(NevaError::data(format!(
                "fixation record for unknown image {}",
                r.image_id
            )));
        }
        dataset.fixations = Some(fix);
    }
    Ok(dataset)
}

/// Writes a synthetic split to `dir`: PNG images, labels, oracle fixations and a manifest.
pub fn export_synthetic(
    dir: &Path,
    name: &str,
    n: usize,
    seed: u64,
    generator: &SyntheticConfig,
    oracle: Option<(&OracleViewerConfig, usize)>,
    grid: Option<GridSpec>,
) -> Result<PathBuf> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| NevaError::io(&images_dir, e))?;
    let samples = make_synthetic_dataset(n, generator, seed)?;

    let labels_path = dir.join("labels.csv");
    let mut labels = csv::Writer::from_path(&labels_path)?;
    let mut viewers = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        save_png(&s.item.stimulus, &images_dir.join(format!("{}.png", s.id)))?;
        labels.serialize(LabelRow {
            image_id: s.id.clone(),
            label: s.label(),
        })?;
        if let Some((cfg, length)) = oracle {
            let size = (s.item.stimulus.height(), s.item.stimulus.width());
            for (subject, scanpath) in oracle_scanpaths(s, length, cfg, seed.wrapping_add(1 + k as u64))? {
                viewers.push(MethodScanpath {
                    method: subject,
                    scanpath,
                    image_size: size,
                });
            }
        }
    }
    labels.flush().map_err(|e| NevaError::io(&labels_path, e))?;

    let fixation_file = if oracle.is_some() {
        write_subject_fixations(&dir.join("fixations.csv"), &viewers)?;
        Some(PathBuf::from("fixations.csv"))
    } else {
        None
    };

    let manifest = DatasetManifest {
        name: name.to_string(),
        image_dir: PathBuf::from("images"),
        fixation_file,
        labels_file: Some(PathBuf::from("labels.csv")),
        scanpath_length: oracle.map(|(_, t)| t),
        grid,
        preprocessing: Preprocessing::default(),
        synthetic: Some(SyntheticProvenance {
            n,
            seed,
            generator: generator.clone(),
            oracle: oracle.map(|(c, _)| *c),
        }),
    };
    let path = dir.join("manifest.toml");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exported_split_reloads_from_its_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let gen = SyntheticConfig::default();
        let oracle = OracleViewerConfig::default();
        let path = export_synthetic(dir.path(), "toy", 6, 9, &gen, Some((&oracle, 10)), Some(GridSpec::default())).unwrap();
        let manifest = DatasetManifest::load(&path).unwrap();
        let data = load_dataset(&manifest).unwrap();
        assert_eq!(data.images.len(), 6);
        assert_eq!(data.labels.as_ref().unwrap().len(), 6);
        let fix = data.fixations.unwrap();
        assert_eq!(fix.records.len(), 6 * oracle.subjects);
        assert!(fix.records.iter().all(|r| r.fixations.len() == 10));
        let header = std::fs::read_to_string(dir.path().join("fixations.csv")).unwrap();
        assert!(header.starts_with("image_id,subject_id,fixation_index,x_px,y_px"));

        // Same inputs, same files.
        let again = tempfile::tempdir().unwrap();
        export_synthetic(again.path(), "toy", 6, 9, &gen, Some((&oracle, 10)), Some(GridSpec::default())).unwrap();
        for f in ["labels.csv", "fixations.csv", "images/syn_00003.png"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(again.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn unknown_image_in_fixations_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = export_synthetic(dir.path(), "toy", 2, 1, &SyntheticConfig::default(), None, None).unwrap();
        std::fs::write(
            dir.path().join("fix.csv"),
            "image_id,subject_id,fixation_index,x_px,y_px,image_width,image_height\nghost,s,0,1,1,32,32\n",
        )
        .unwrap();
        let mut manifest = DatasetManifest::load(&path).unwrap();
        manifest.fixation_file = Some(dir.path().join("fix.csv"));
        assert!(matches!(load_dataset(&manifest), Err(NevaError::Data(_))));
        manifest.image_dir = dir.path().join("missing");
        assert!(load_dataset(&manifest).is_err());
    }
}
