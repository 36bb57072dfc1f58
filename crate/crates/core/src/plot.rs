//! Minimal PNG rendering for analysis outputs: spectrogram rasters and
//! scatter plots with a fitted curve. No text; axis ranges live in the
//! accompanying CSVs.

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::evalkit::Spectrogram;
use crate::util::atomic_write;

fn heat_color(t: f64) -> Rgb<u8> {
    // Dark blue -> cyan -> yellow ramp.
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * t - 0.5).clamp(0.0, 1.0)) as u8;
    let g = (255.0 * (1.5 * t).clamp(0.0, 1.0).powf(1.2)) as u8;
    let b = (255.0 * (1.0 - t) * 0.8 + 30.0) as u8;
    Rgb([r, g, b])
}

/// Log-magnitude raster: time on x, frequency on y (low frequencies at the
/// bottom row), upsampled to at least `min_side` pixels.
pub fn spectrogram_image(spec: &Spectrogram, min_side: u32) -> RgbImage {
    let (nt, nf) = spec.magnitude.dim();
    let logs: Vec<f64> = spec.magnitude.iter().map(|&m| (1.0 + m).ln()).collect();
    let max = logs.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    let sx = (min_side as usize).div_ceil(nt).max(1);
    let sy = (min_side as usize).div_ceil(nf).max(1);
    let (w, h) = ((nt * sx) as u32, (nf * sy) as u32);
    let mut img = RgbImage::new(w, h);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let t = x as usize / sx;
        let f = nf - 1 - (y as usize / sy);
        let v = (1.0 + spec.magnitude[(t, f)]).ln() / max;
        *px = heat_color(v);
    }
    img
}

/// Scatter of (x, y) samples with an optional `y = c0 * x^e` fit curve.
pub fn scatter_image(
    points: &[(f64, f64)],
    fit: Option<(f64, f64)>,
    side: u32,
) -> RgbImage {
    let mut img = RgbImage::from_pixel(side, side, Rgb([250, 250, 250]));
    if points.is_empty() {
        return img;
    }
    let (mut x_max, mut y_max) = (f64::MIN, f64::MIN);
    for &(x, y) in points {
        x_max = x_max.max(x);
        y_max = y_max.max(y);
    }
    x_max = x_max.max(1e-12) * 1.05;
    y_max = y_max.max(1e-12) * 1.05;
    let margin = 12.0;
    let scale = f64::from(side) - 2.0 * margin;
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        (
            (margin + x / x_max * scale).round() as i64,
            (f64::from(side) - margin - y / y_max * scale).round() as i64,
        )
    };
    let mut put = |x: i64, y: i64, c: Rgb<u8>, img: &mut RgbImage| {
        if x >= 0 && y >= 0 && (x as u32) < side && (y as u32) < side {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    // Axes.
    for i in 0..side as i64 {
        put(margin as i64, i, Rgb([120, 120, 120]), &mut img);
        put(i, (f64::from(side) - margin) as i64, Rgb([120, 120, 120]), &mut img);
    }
    // Fit curve.
    if let Some((c0, e)) = fit {
        for i in 0..(side * 2) {
            let x = x_max * f64::from(i) / f64::from(side * 2);
            let y = c0 * x.powf(e);
            let (px, py) = to_px(x, y);
            put(px, py, Rgb([20, 20, 20]), &mut img);
        }
    }
    // Points as small crosses.
    for &(x, y) in points {
        let (px, py) = to_px(x, y);
        for d in -2i64..=2 {
            put(px + d, py, Rgb([200, 40, 40]), &mut img);
            put(px, py + d, Rgb([200, 40, 40]), &mut img);
        }
    }
    img
}

/// Encode to PNG bytes and write atomically.
pub fn save_png(img: &RgbImage, path: &std::path::Path) -> Result<()> {
    use image::ImageEncoder;
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .map_err(image::ImageError::from)?;
    atomic_write(path, &bytes)
}
