//! Frame ingestion, pair sampling, and motion-based cropping.

pub mod synth;

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// A single video frame, H x W x 3 with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Array3<f32>,
    index: usize,
    timestamp: Option<f64>,
}

impl Frame {
    pub fn new(pixels: Array3<f32>, index: usize) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("frame has zero dimension".into()));
        }
        if c != 3 {
            return Err(Error::InvalidArgument(format!(
                "frame must have 3 channels, got {c}"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument(
                "frame values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            pixels,
            index,
            timestamp: None,
        })
    }

    pub fn with_timestamp(mut self, seconds: f64) -> Self {
        self.timestamp = Some(seconds);
        self
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn timestamp(&self) -> Option<f64> {
        self.timestamp
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// Bilinear resize to a square `resolution`.
    pub fn resize(&self, resolution: usize) -> Result<Frame> {
        if resolution == 0 {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        let (h, w, _) = self.pixels.dim();
        if h == resolution && w == resolution {
            return Ok(self.clone());
        }
        let out = bilinear_resize(&self.pixels, resolution, resolution);
        Ok(Frame {
            pixels: out,
            index: self.index,
            timestamp: self.timestamp,
        })
    }

    /// Crop to `rect`, preserving index and timestamp.
    pub fn crop(&self, rect: CropRect) -> Result<Frame> {
        let (h, w, _) = self.pixels.dim();
        if rect.y + rect.size > h || rect.x + rect.size > w {
            return Err(Error::InvalidArgument(format!(
                "crop {rect:?} exceeds frame {h}x{w}"
            )));
        }
        let view = self
            .pixels
            .slice(ndarray::s![rect.y..rect.y + rect.size, rect.x..rect.x + rect.size, ..]);
        Ok(Frame {
            pixels: view.to_owned(),
            index: self.index,
            timestamp: self.timestamp,
        })
    }

    pub fn from_rgb8(data: &[u8], height: usize, width: usize, index: usize) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "rgb8 buffer of {} bytes does not match {height}x{width}x3",
                data.len()
            )));
        }
        let pixels = Array3::from_shape_fn((height, width, 3), |(i, j, c)| {
            f32::from(data[(i * width + j) * 3 + c]) / 255.0
        });
        Frame::new(pixels, index)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

fn bilinear_resize(src: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, c) = src.dim();
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    Array3::from_shape_fn((out_h, out_w, c), |(i, j, ch)| {
        // Pixel-center sampling: output center maps into source coordinates.
        let fy = ((i as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let fx = ((j as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let dy = fy - y0 as f32;
        let dx = fx - x0 as f32;
        let top = src[(y0, x0, ch)] * (1.0 - dx) + src[(y0, x1, ch)] * dx;
        let bot = src[(y1, x0, ch)] * (1.0 - dx) + src[(y1, x1, ch)] * dx;
        top * (1.0 - dy) + bot * dy
    })
}

/// A reference frame and a future frame `gap` frames later.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub reference: Frame,
    pub future: Frame,
    pub gap: usize,
}

impl FramePair {
    pub fn new(reference: Frame, future: Frame, gap: usize) -> Result<Self> {
        if gap < 1 {
            return Err(Error::InvalidArgument("pair gap must be at least 1".into()));
        }
        if reference.pixels.dim() != future.pixels.dim() {
            return Err(Error::ShapeMismatch(format!(
                "pair frames differ in shape: {:?} vs {:?}",
                reference.pixels.dim(),
                future.pixels.dim()
            )));
        }
        if future.index != reference.index + gap {
            return Err(Error::InvalidArgument(format!(
                "future index {} must equal reference index {} + gap {}",
                future.index, reference.index, gap
            )));
        }
        Ok(Self {
            reference,
            future,
            gap,
        })
    }
}

/// Reference/future index pairs `(i, i + gap)` for `i = 0, stride, 2*stride, ...`.
pub fn pair_indices(len: usize, gap: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if gap < 1 || stride < 1 {
        return Err(Error::InvalidArgument(
            "gap and stride must be at least 1".into(),
        ));
    }
    if len <= gap {
        return Err(Error::VideoTooShort { len, min: gap + 1 });
    }
    Ok((0..)
        .map(|n| n * stride)
        .take_while(|i| i + gap < len)
        .map(|i| (i, i + gap))
        .collect())
}

/// Materialize sampled pairs from a frame sequence.
pub fn sample_pairs(frames: &[Frame], gap: usize, stride: usize) -> Result<Vec<FramePair>> {
    pair_indices(frames.len(), gap, stride)?
        .into_iter()
        .map(|(i, j)| FramePair::new(frames[i].clone(), frames[j].clone(), gap))
        .collect()
}

/// A square crop region, in (column, row) = (x, y) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl CropRect {
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.size as f64 / 2.0,
            self.y as f64 + self.size as f64 / 2.0,
        )
    }
}

/// Locate a `box_size` square around the mass centroid of above-threshold
/// pixels in a motion map, clamped to the frame bounds.
pub fn motion_roi(diff_map: &Array2<f32>, threshold: f32, box_size: usize) -> Result<CropRect> {
    let (h, w) = diff_map.dim();
    if box_size > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "box size {box_size} exceeds map {h}x{w}"
        )));
    }
    if box_size == 0 {
        return Err(Error::InvalidArgument("box size must be positive".into()));
    }
    let mut mass = 0.0f64;
    let mut cx = 0.0f64;
    let mut cy = 0.0f64;
    for ((i, j), &v) in diff_map.indexed_iter() {
        if v > threshold {
            let m = f64::from(v);
            mass += m;
            cx += m * j as f64;
            cy += m * i as f64;
        }
    }
    if mass <= 0.0 {
        return Err(Error::NoMotion);
    }
    cx /= mass;
    cy /= mass;
    let half = box_size as f64 / 2.0;
    let x = (cx - half).round().clamp(0.0, (w - box_size) as f64) as usize;
    let y = (cy - half).round().clamp(0.0, (h - box_size) as f64) as usize;
    Ok(CropRect { x, y, size: box_size })
}

/// Collapse an H x W x 3 map to a single channel by averaging.
pub fn channel_mean(map: &Array3<f32>) -> Array2<f32> {
    let (h, w, c) = map.dim();
    let mut out = Array2::zeros((h, w));
    for ((i, j, _), v) in map.indexed_iter() {
        out[(i, j)] += v / c as f32;
    }
    out
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// Load a frame sequence from a directory of images (sorted by file name) or
/// an animated GIF. Frames are normalized to [0, 1] and bilinearly resized
/// when `resolution` is given.
pub fn load_frames(path: &Path, resolution: Option<usize>) -> Result<Vec<Frame>> {
    let frames = if path.is_dir() {
        load_image_dir(path)?
    } else if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gif"))
    {
        load_gif(path)?
    } else {
        return Err(Error::UnsupportedInput {
            path: path.to_path_buf(),
            reason: "expected a directory of images or an animated .gif".into(),
        });
    };
    match resolution {
        Some(r) => frames.iter().map(|f| f.resize(r)).collect(),
        None => Ok(frames),
    }
}

fn load_image_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::UnsupportedInput {
            path: dir.to_path_buf(),
            reason: "directory contains no image files".into(),
        });
    }
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let img = image::open(p)?.to_rgb8();
            Frame::from_rgb8(img.as_raw(), img.height() as usize, img.width() as usize, i)
        })
        .collect()
}

fn load_gif(path: &Path) -> Result<Vec<Frame>> {
    use image::AnimationDecoder;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = image::codecs::gif::GifDecoder::new(std::io::BufReader::new(file))?;
    let mut frames = Vec::new();
    for (i, frame) in decoder.into_frames().enumerate() {
        let frame = frame?;
        let rgba = frame.buffer();
        let (w, h) = (rgba.width() as usize, rgba.height() as usize);
        let mut rgb = vec![0u8; h * w * 3];
        for (px, chunk) in rgba.pixels().zip(rgb.chunks_exact_mut(3)) {
            chunk.copy_from_slice(&px.0[..3]);
        }
        frames.push(Frame::from_rgb8(&rgb, h, w, i)?);
    }
    if frames.is_empty() {
        return Err(Error::UnsupportedInput {
            path: path.to_path_buf(),
            reason: "gif contains no frames".into(),
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn gray_frame(h: usize, w: usize, value: f32, index: usize) -> Frame {
        Frame::new(Array3::from_elem((h, w, 3), value), index).unwrap()
    }

    #[test]
    fn pair_sampling_matches_documented_examples() {
        let pairs = pair_indices(100, 6, 13).unwrap();
        assert_eq!(pairs[0], (0, 6));
        assert_eq!(pairs[1], (13, 19));
        assert_eq!(pairs.len(), (100 - 6 - 1) / 13 + 1);

        let pairs = pair_indices(2, 1, 1).unwrap();
        assert_eq!(pairs, vec![(0, 1)]);

        assert!(matches!(
            pair_indices(10, 20, 1),
            Err(Error::VideoTooShort { .. })
        ));
    }

    #[test]
    fn sample_pairs_builds_valid_pairs() {
        let frames: Vec<_> = (0..10).map(|i| gray_frame(4, 4, 0.5, i)).collect();
        let pairs = sample_pairs(&frames, 3, 4).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].reference.index(), 0);
        assert_eq!(pairs[0].future.index(), 3);
        assert_eq!(pairs[1].reference.index(), 4);
    }

    proptest! {
        #[test]
        fn pair_count_formula(len in 2usize..500, gap in 1usize..20, stride in 1usize..20) {
            prop_assume!(len > gap);
            let pairs = pair_indices(len, gap, stride).unwrap();
            prop_assert_eq!(pairs.len(), (len - gap - 1) / stride + 1);
            for (i, j) in pairs {
                prop_assert!(j < len);
                prop_assert_eq!(j - i, gap);
            }
        }
    }

    fn blob_map(h: usize, w: usize, cy: usize, cx: usize, r: usize) -> Array2<f32> {
        Array2::from_shape_fn((h, w), |(i, j)| {
            let d2 = (i as f64 - cy as f64).powi(2) + (j as f64 - cx as f64).powi(2);
            if d2 <= (r as f64).powi(2) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn motion_roi_centers_on_blob() {
        let map = blob_map(800, 1000, 400, 500, 5);
        let rect = motion_roi(&map, 0.5, 150).unwrap();
        let (cx, cy) = rect.center();
        assert!((cx - 500.0).abs() <= 1.0);
        assert!((cy - 400.0).abs() <= 1.0);
    }

    #[test]
    fn motion_roi_rejects_empty_map() {
        let map = Array2::zeros((64, 64));
        assert!(matches!(motion_roi(&map, 0.1, 16), Err(Error::NoMotion)));
    }

    #[test]
    fn motion_roi_clamps_at_corner() {
        // Brute-force reference: centroid of above-threshold mass, then clamp.
        let map = blob_map(400, 400, 0, 0, 4);
        let (mut mass, mut cx, mut cy) = (0.0f64, 0.0f64, 0.0f64);
        for ((i, j), &v) in map.indexed_iter() {
            if v > 0.5 {
                mass += f64::from(v);
                cx += f64::from(v) * j as f64;
                cy += f64::from(v) * i as f64;
            }
        }
        cx /= mass;
        cy /= mass;
        let ex = (cx - 75.0).round().clamp(0.0, 250.0) as usize;
        let ey = (cy - 75.0).round().clamp(0.0, 250.0) as usize;
        let rect = motion_roi(&map, 0.5, 150).unwrap();
        assert_eq!((rect.x, rect.y), (ex, ey));
        assert_eq!((rect.x, rect.y), (0, 0));
    }

    proptest! {
        #[test]
        fn motion_roi_translation_covariant(
            cy in 60usize..140, cx in 60usize..140, dy in 0usize..40, dx in 0usize..40,
        ) {
            let map = blob_map(256, 256, cy, cx, 6);
            let shifted = blob_map(256, 256, cy + dy, cx + dx, 6);
            let a = motion_roi(&map, 0.5, 64).unwrap();
            let b = motion_roi(&shifted, 0.5, 64).unwrap();
            // Away from borders, the center shifts exactly with the blob.
            let (ax, ay) = (a.x as isize, a.y as isize);
            let (bx, by) = (b.x as isize, b.y as isize);
            prop_assert_eq!(bx - ax, dx as isize);
            prop_assert_eq!(by - ay, dy as isize);
        }
    }

    #[test]
    fn frame_validation() {
        assert!(Frame::new(Array3::from_elem((0, 4, 3), 0.0), 0).is_err());
        assert!(Frame::new(Array3::from_elem((4, 4, 3), 1.5), 0).is_err());
        assert!(Frame::new(Array3::from_elem((4, 4, 2), 0.5), 0).is_err());
        assert!(Frame::new(Array3::from_elem((4, 4, 3), 1.0), 0).is_ok());
    }

    #[test]
    fn frame_pair_validation() {
        let a = gray_frame(4, 4, 0.2, 0);
        let b = gray_frame(4, 4, 0.4, 6);
        assert!(FramePair::new(a.clone(), b.clone(), 6).is_ok());
        assert!(FramePair::new(a.clone(), b.clone(), 5).is_err());
        let c = gray_frame(8, 8, 0.4, 6);
        assert!(FramePair::new(a, c, 6).is_err());
    }

    #[test]
    fn resize_preserves_constant_frames() {
        let f = gray_frame(64, 64, 0.37, 0);
        let r = f.resize(32).unwrap();
        assert_eq!(r.height(), 32);
        for v in r.pixels().iter() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn crop_commutes_with_identity() {
        let f = Frame::new(
            Array3::from_shape_fn((16, 16, 3), |(i, j, c)| {
                ((i * 31 + j * 17 + c * 7) % 100) as f32 / 100.0
            }),
            0,
        )
        .unwrap();
        let rect = CropRect { x: 4, y: 2, size: 8 };
        let c = f.crop(rect).unwrap();
        assert_eq!(c.pixels()[(0, 0, 0)], f.pixels()[(2, 4, 0)]);
        assert_eq!(c.height(), 8);
    }
}
