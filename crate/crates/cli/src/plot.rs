//! Figure panels: the stimulus, the memory heatmap with numbered fixations,
//! and the perceived image after the last fixation.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use neva_core::data::images::quantize_u8;
use neva_core::{init_state, update_state, FoveationConfig, PerceptualState, Result, Scanpath, Stimulus};

/// 3x5 glyphs for the digits 0-9, one row per `u8`, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

pub const PANELS: [&str; 3] = ["stimulus", "heatmap", "perceived"];

/// Memory after applying every fixation of `sp` to a fresh state.
pub fn final_state(s: &Stimulus, sp: &Scanpath, cfg: &FoveationConfig) -> Result<PerceptualState> {
    let mut state = init_state(s, cfg)?;
    for &f in &sp.fixations {
        state = update_state(&state, f);
    }
    Ok(state)
}

fn rgb_at(s: &Stimulus, i: usize, j: usize) -> [u8; 3] {
    let p = s.pixels();
    if s.channels() == 1 {
        let v = quantize_u8(p[[i, j, 0]]);
        [v, v, v]
    } else {
        [quantize_u8(p[[i, j, 0]]), quantize_u8(p[[i, j, 1]]), quantize_u8(p[[i, j, 2]])]
    }
}

/// Nearest-neighbour upscaled rendering of a stimulus.
pub fn upscaled(s: &Stimulus, scale: usize) -> RgbImage {
    let (h, w, _) = s.shape();
    RgbImage::from_fn((w * scale) as u32, (h * scale) as u32, |x, y| {
        Rgb(rgb_at(s, y as usize / scale, x as usize / scale))
    })
}

/// Black-red-yellow-white ramp.
fn hot(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [(3.0 * v).min(1.0), (3.0 * v - 1.0).clamp(0.0, 1.0), (3.0 * v - 2.0).clamp(0.0, 1.0)]
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn disk(img: &mut RgbImage, (cx, cy): (i64, i64), r: i64, c: [u8; 3]) {
    for y in -r..=r {
        for x in -r..=r {
            if x * x + y * y <= r * r {
                put(img, cx + x, cy + y, c);
            }
        }
    }
}

fn number(img: &mut RgbImage, (x0, y0): (i64, i64), n: usize, px: i64) {
    for (k, ch) in n.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let left = x0 + k as i64 * 4 * px;
        // Dark backing box keeps digits readable on bright areas.
        for y in -1..=5 * px {
            for x in -1..=3 * px {
                put(img, left + x, y0 + y, [0, 0, 0]);
            }
        }
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    for dy in 0..px {
                        for dx in 0..px {
                            put(img, left + col as i64 * px + dx, y0 + row as i64 * px + dy, [255, 255, 255]);
                        }
                    }
                }
            }
        }
    }
}

/// Heatmap of `mask` blended over the stimulus luminance, with the scanpath drawn on top.
pub fn heatmap_panel(s: &Stimulus, mask: &Array2<f64>, sp: &Scanpath, scale: usize) -> RgbImage {
    let (h, w, _) = s.shape();
    let lum = s.luminance();
    let mut img = RgbImage::from_fn((w * scale) as u32, (h * scale) as u32, |x, y| {
        let (i, j) = (y as usize / scale, x as usize / scale);
        let m = mask[[i, j]];
        let heat = hot(m);
        let g = lum[[i, j]];
        let alpha = 0.35 + 0.5 * m;
        Rgb(heat.map(|c| quantize_u8(alpha * c + (1.0 - alpha) * g)))
    });
    let to_px = |f: &neva_core::Fixation| ((f.x * (w * scale) as f64) as i64, (f.y * (h * scale) as f64) as i64);
    let points: Vec<(i64, i64)> = sp.fixations.iter().map(to_px).collect();
    for pair in points.windows(2) {
        line(&mut img, pair[0], pair[1], [0, 200, 255]);
    }
    let px = (scale as i64 / 4).max(1);
    for (k, &p) in points.iter().enumerate() {
        disk(&mut img, p, 2 * px, [0, 0, 0]);
        disk(&mut img, p, px, [0, 255, 0]);
        number(&mut img, (p.0 + 2 * px, p.1 - 6 * px), k + 1, px);
    }
    img
}

/// The three panels for one stimulus and scanpath, in [`PANELS`] order.
pub fn render_panels(s: &Stimulus, sp: &Scanpath, cfg: &FoveationConfig, scale: usize) -> Result<[RgbImage; 3]> {
    let state = final_state(s, sp, cfg)?;
    Ok([
        upscaled(s, scale),
        heatmap_panel(s, state.mask(), sp, scale),
        upscaled(state.perceived(), scale),
    ])
}
