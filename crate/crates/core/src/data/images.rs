//! Raster image loading and saving.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use ndarray::Array3;

use crate::error::{NevaError, Result};
use crate::types::Stimulus;

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Default)]
pub struct ImageLoad {
    pub images: BTreeMap<String, Stimulus>,
    /// Files that looked like images but could not be decoded.
    pub failures: Vec<(PathBuf, String)>,
}

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decodes an 8-bit grayscale or colour image to `[0, 1]`.
pub fn image_to_stimulus(img: &DynamicImage) -> Result<Stimulus> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        Stimulus::new(Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
            f64::from(rgb.get_pixel(j as u32, i as u32)[c]) / 255.0
        }))
    } else {
        let gray = img.to_luma8();
        Stimulus::new(Array3::from_shape_fn((h, w, 1), |(i, j, _)| {
            f64::from(gray.get_pixel(j as u32, i as u32)[0]) / 255.0
        }))
    }
}

pub fn load_image(path: &Path) -> Result<Stimulus> {
    image_to_stimulus(&image::open(path)?)
}

/// Loads every raster image in `dir`; the id is the file stem.
pub fn load_images(dir: &Path) -> Result<ImageLoad> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| NevaError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    entries.sort();
    let mut load = ImageLoad::default();
    for path in entries {
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            load.failures.push((path, "non UTF-8 file name".into()));
            continue;
        };
        match load_image(&path) {
            Ok(s) => {
                load.images.insert(id, s);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                load.failures.push((path, e.to_string()));
            }
        }
    }
    Ok(load)
}

pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn stimulus_to_image(s: &Stimulus) -> DynamicImage {
    let (h, w, c) = s.shape();
    let px = s.pixels();
    if c == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([quantize_u8(px[[y as usize, x as usize, 0]])])
        }))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (i, j) = (y as usize, x as usize);
            image::Rgb([
                quantize_u8(px[[i, j, 0]]),
                quantize_u8(px[[i, j, 1]]),
                quantize_u8(px[[i, j, 2]]),
            ])
        }))
    }
}

pub fn save_png(s: &Stimulus, path: &Path) -> Result<()> {
    stimulus_to_image(s).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_gives_empty_map() {
        let dir = tempfile::tempdir().unwrap();
        let load = load_images(dir.path()).unwrap();
        assert!(load.images.is_empty());
        assert!(load.failures.is_empty());
    }

    #[test]
    fn grayscale_png_is_single_channel_and_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(9, 8, |x, _| image::Luma([if x == 0 { 128 } else { 255 }]));
        img.save(dir.path().join("gray.png")).unwrap();
        std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let load = load_images(dir.path()).unwrap();
        let s = &load.images["gray"];
        assert_eq!(s.shape(), (8, 9, 1));
        assert!((s.pixels()[[0, 0, 0]] - 0.50196).abs() < 1e-5);
        assert_eq!(s.pixels()[[0, 0, 0]], 128.0 / 255.0);
        assert_eq!(load.failures.len(), 1);
    }

    #[test]
    fn png_round_trip_is_exact_for_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let s = Stimulus::from_fn(8, 10, 3, |(i, j, c)| ((i * 31 + j * 7 + c * 3) % 256) as f64 / 255.0).unwrap();
        let path = dir.path().join("rgb.png");
        save_png(&s, &path).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in s.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
