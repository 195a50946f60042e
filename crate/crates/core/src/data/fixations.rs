//! Canonical fixation / scanpath files.
//!
//! One row per fixation, UTF-8 with a header:
//! `image_id,subject_id,fixation_index,x_px,y_px[,image_width,image_height]`.
//! Scanpath files written by this crate use the same layout with the column
//! `method` in place of `subject_id` and always carry the image size columns.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use serde::Deserialize;

use crate::error::{NevaError, Result};
use crate::types::{Fixation, Scanpath};

/// Loading fails once more than this fraction of rows is malformed.
pub const MAX_INVALID_ROW_FRACTION: f64 = 0.10;

/// Human (or method) fixations on one image, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeTrackingRecord {
    pub image_id: String,
    pub subject_id: String,
    /// `(x, y)` pixel positions in viewing order.
    pub fixations: Vec<(f64, f64)>,
    /// `(height, width)`.
    pub image_size: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixationLoad {
    pub records: Vec<EyeTrackingRecord>,
    pub row_errors: Vec<RowError>,
    pub dropped_out_of_bounds: usize,
    /// Records left without any in-bounds fixation.
    pub dropped_records: Vec<(String, String)>,
}

#[derive(Debug, Deserialize)]
struct Row {
    image_id: String,
    #[serde(alias = "method")]
    subject_id: String,
    fixation_index: i64,
    x_px: f64,
    y_px: f64,
    #[serde(default)]
    image_width: Option<usize>,
    #[serde(default)]
    image_height: Option<usize>,
}

/// Reads a fixation file whose rows carry the image size columns.
pub fn load_fixations(path: &Path) -> Result<FixationLoad> {
    load_fixations_with_sizes(path, &BTreeMap::new())
}

/// Reads a fixation file, taking image sizes `(height, width)` from `sizes`
/// for rows that do not carry them.
pub fn load_fixations_with_sizes(path: &Path, sizes: &BTreeMap<String, (usize, usize)>) -> Result<FixationLoad> {
    let file = File::open(path).map_err(|e| NevaError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);

    let mut load = FixationLoad::default();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut total_rows = 0usize;

    for (i, result) in reader.deserialize::<Row>().enumerate() {
        total_rows += 1;
        let line = i as u64 + 2;
        let row = match result {
            Ok(row) => row,
            Err(e) => {
                load.row_errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let size = match (row.image_height, row.image_width) {
            (Some(h), Some(w)) => Some((h, w)),
            _ => sizes.get(&row.image_id).copied(),
        };
        let message = if row.image_id.is_empty() || row.subject_id.is_empty() {
            Some("empty image_id or subject_id".to_string())
        } else if row.fixation_index < 0 {
            Some(format!("negative fixation_index {}", row.fixation_index))
        } else if !(row.x_px.is_finite() && row.y_px.is_finite()) {
            Some("non-finite coordinate".to_string())
        } else if size.is_none() {
            Some(format!("unknown size for image {}", row.image_id))
        } else if matches!(size, Some((h, w)) if h == 0 || w == 0) {
            Some("zero image size".to_string())
        } else {
            None
        };
        if let Some(message) = message {
            load.row_errors.push(RowError { line, message });
            continue;
        }
        let (h, w) = size.expect("checked above");
        let key = (row.image_id.clone(), row.subject_id.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            load.records.push(EyeTrackingRecord {
                image_id: row.image_id.clone(),
                subject_id: row.subject_id.clone(),
                fixations: Vec::new(),
                image_size: (h, w),
            });
            load.records.len() - 1
        });
        if load.records[slot].image_size != (h, w) {
            load.row_errors.push(RowError {
                line,
                message: format!("inconsistent image size for {}", row.image_id),
            });
            continue;
        }
        let in_bounds = row.x_px >= 0.0 && row.x_px < w as f64 && row.y_px >= 0.0 && row.y_px < h as f64;
        if in_bounds {
            load.records[slot].fixations.push((row.x_px, row.y_px));
        } else {
            load.dropped_out_of_bounds += 1;
        }
    }

    if total_rows > 0 && load.row_errors.len() as f64 > MAX_INVALID_ROW_FRACTION * total_rows as f64 {
        let first = &load.row_errors[0];
        return Err(NevaError::data(format!(
            "{}: {} of {} rows invalid (first at line {}: {})",
            path.display(),
            load.row_errors.len(),
            total_rows,
            first.line,
            first.message
        )));
    }
    let (kept, empty): (Vec<_>, Vec<_>) = load.records.drain(..).partition(|r| !r.fixations.is_empty());
    load.records = kept;
    load.dropped_records = empty.into_iter().map(|r| (r.image_id, r.subject_id)).collect();
    for (image, subject) in &load.dropped_records {
        log::warn!("{}: record ({image}, {subject}) has no in-bounds fixation", path.display());
    }
    if load.dropped_out_of_bounds > 0 {
        log::warn!(
            "{}: dropped {} out-of-bounds fixations",
            path.display(),
            load.dropped_out_of_bounds
        );
    }
    Ok(load)
}

/// Pixel coordinates to the unit square: `(x / W, y / H)`.
pub fn normalize_record(r: &EyeTrackingRecord) -> Result<Scanpath> {
    let (h, w) = r.image_size;
    let fixations = r
        .fixations
        .iter()
        .map(|&(x, y)| Fixation::new(x / w as f64, y / h as f64))
        .collect::<Result<Vec<_>>>()?;
    Scanpath::new(r.image_id.clone(), fixations)
}

/// Unit-square coordinates to pixels, kept strictly inside `[0, W) x [0, H)`.
pub fn denormalize(f: Fixation, image_size: (usize, usize)) -> (f64, f64) {
    let (h, w) = (image_size.0 as f64, image_size.1 as f64);
    ((f.x * w).min(w.next_down()), (f.y * h).min(h.next_down()))
}

/// A scanpath ready to be written, tagged with the method that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScanpath {
    pub method: String,
    pub scanpath: Scanpath,
    /// `(height, width)` of the stimulus.
    pub image_size: (usize, usize),
}

/// Writes scanpaths in the shared format; rows follow the given order.
pub fn write_scanpaths(path: &Path, scanpaths: &[MethodScanpath]) -> Result<()> {
    write_rows(path, "method", scanpaths)
}

/// Same layout as [`write_scanpaths`] but with a `subject_id` column, for viewer data.
pub fn write_subject_fixations(path: &Path, scanpaths: &[MethodScanpath]) -> Result<()> {
    write_rows(path, "subject_id", scanpaths)
}

fn write_rows(path: &Path, id_column: &str, scanpaths: &[MethodScanpath]) -> Result<()> {
    let file = File::create(path).map_err(|e| NevaError::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record([
        "image_id",
        id_column,
        "fixation_index",
        "x_px",
        "y_px",
        "image_width",
        "image_height",
    ])?;
    for sp in scanpaths {
        let (h, w) = sp.image_size;
        for (k, f) in sp.scanpath.fixations.iter().enumerate() {
            let (x_px, y_px) = denormalize(*f, sp.image_size);
            writer.write_record([
                sp.scanpath.stimulus_id.clone(),
                sp.method.clone(),
                k.to_string(),
                x_px.to_string(),
                y_px.to_string(),
                w.to_string(),
                h.to_string(),
            ])?;
        }
    }
    writer.flush().map_err(|e| NevaError::io(path, e))?;
    Ok(())
}

/// Reads a scanpath file as `method -> image_id -> scanpath`.
pub fn load_scanpaths(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, Scanpath>>> {
    let load = load_fixations(path)?;
    let mut out: BTreeMap<String, BTreeMap<String, Scanpath>> = BTreeMap::new();
    for r in &load.records {
        out.entry(r.subject_id.clone())
            .or_default()
            .insert(r.image_id.clone(), normalize_record(r)?);
    }
    Ok(out)
}

/// Groups records as `image_id -> [(subject or method, scanpath)]`, subjects sorted.
pub fn group_by_image(records: &[EyeTrackingRecord]) -> Result<BTreeMap<String, Vec<(String, Scanpath)>>> {
    let mut out: BTreeMap<String, Vec<(String, Scanpath)>> = BTreeMap::new();
    for r in records {
        out.entry(r.image_id.clone())
            .or_default()
            .push((r.subject_id.clone(), normalize_record(r)?));
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.0.cmp(&b.0));
    }
    Ok(out)
}
