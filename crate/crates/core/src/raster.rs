//! RGB rasters, PNG IO, and the resize/pad normalization applied to every
//! rendered image before comparison.

use std::fmt;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("grid dimensions must be at least 1x1 (got {height}x{width})")]
    EmptyGrid { height: usize, width: usize },
    #[error("pixel buffer holds {actual} pixels, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Pixel {
    pub const WHITE: Pixel = Pixel::new(255, 255, 255);
    pub const BLACK: Pixel = Pixel::new(0, 0, 0);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Pixel { r, g, b }
    }

    #[inline]
    pub fn is_white(self) -> bool {
        self == Pixel::WHITE
    }
}

impl fmt::Debug for Pixel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.r, self.g, self.b)
    }
}

/// Row-major RGB raster. Always at least 1x1.
#[derive(Clone, PartialEq, Eq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    pixels: Vec<Pixel>,
}

impl fmt::Debug for PixelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PixelGrid")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl PixelGrid {
    pub fn new(height: usize, width: usize, pixels: Vec<Pixel>) -> Result<Self, RasterError> {
        if height == 0 || width == 0 {
            return Err(RasterError::EmptyGrid { height, width });
        }
        if pixels.len() != height * width {
            return Err(RasterError::BufferSize {
                expected: height * width,
                actual: pixels.len(),
            });
        }
        Ok(PixelGrid {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, pixel: Pixel) -> Result<Self, RasterError> {
        Self::new(height, width, vec![pixel; height * width])
    }

    pub fn white(height: usize, width: usize) -> Result<Self, RasterError> {
        Self::filled(height, width, Pixel::WHITE)
    }

    /// Builds a grid from `width` columns of equal height.
    pub fn from_columns(columns: &[Vec<Pixel>]) -> Result<Self, RasterError> {
        let width = columns.len();
        let height = columns.first().map_or(0, Vec::len);
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyGrid { height, width });
        }
        let mut pixels = vec![Pixel::WHITE; height * width];
        for (x, col) in columns.iter().enumerate() {
            if col.len() != height {
                return Err(RasterError::BufferSize {
                    expected: height,
                    actual: col.len(),
                });
            }
            for (y, &p) in col.iter().enumerate() {
                pixels[y * width + x] = p;
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Pixel {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, pixel: Pixel) {
        self.pixels[row * self.width + col] = pixel;
    }

    pub fn row(&self, row: usize) -> &[Pixel] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    pub fn column(&self, col: usize) -> Vec<Pixel> {
        (0..self.height).map(|y| self.get(y, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, values: &[Pixel]) {
        debug_assert_eq!(values.len(), self.height);
        for (y, &p) in values.iter().enumerate() {
            self.set(y, col, p);
        }
    }

    /// All columns as contiguous vectors (column-major copy).
    pub fn columns(&self) -> Vec<Vec<Pixel>> {
        let mut cols = vec![Vec::with_capacity(self.height); self.width];
        for row in self.pixels.chunks_exact(self.width) {
            for (col, &p) in cols.iter_mut().zip(row) {
                col.push(p);
            }
        }
        cols
    }

    pub fn transpose(&self) -> PixelGrid {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::with_capacity(h * w);
        for x in 0..w {
            for y in 0..h {
                out.push(self.pixels[y * w + x]);
            }
        }
        PixelGrid {
            height: w,
            width: h,
            pixels: out,
        }
    }

    /// Copies out a `height` x `width` window whose top-left corner is (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<PixelGrid, RasterError> {
        if top + height > self.height || left + width > self.width {
            return Err(RasterError::BufferSize {
                expected: self.height * self.width,
                actual: (top + height) * (left + width),
            });
        }
        let mut out = Vec::with_capacity(height * width);
        for y in top..top + height {
            out.extend_from_slice(&self.row(y)[left..left + width]);
        }
        PixelGrid::new(height, width, out)
    }

    /// Pastes `other` with its top-left corner at (`top`, `left`); out-of-bounds parts are clipped.
    pub fn blit(&mut self, other: &PixelGrid, top: usize, left: usize) {
        for y in 0..other.height.min(self.height.saturating_sub(top)) {
            for x in 0..other.width.min(self.width.saturating_sub(left)) {
                self.set(top + y, left + x, other.get(y, x));
            }
        }
    }

    pub fn has_ink(&self) -> bool {
        self.pixels.iter().any(|p| !p.is_white())
    }

    /// SHA-256 over the dimensions (two little-endian u32: height, width) followed by
    /// the raw row-major RGB bytes, hex encoded. Independent of any file encoding.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.height as u32).to_le_bytes());
        hasher.update((self.width as u32).to_le_bytes());
        for p in &self.pixels {
            hasher.update([p.r, p.g, p.b]);
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        let mut buf = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            buf.extend_from_slice(&[p.r, p.g, p.b]);
        }
        RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer sized from grid dimensions")
    }

    /// Decodes any image the codec understands; alpha is composited onto white.
    pub fn from_dynamic(img: &image::DynamicImage) -> Result<PixelGrid, RasterError> {
        let rgba = img.to_rgba8();
        let (w, h) = rgba.dimensions();
        let pixels = rgba
            .pixels()
            .map(|px| {
                let [r, g, b, a] = px.0;
                Pixel::new(over_white(r, a), over_white(g, a), over_white(b, a))
            })
            .collect();
        PixelGrid::new(h as usize, w as usize, pixels)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb_image().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<PixelGrid, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Self::from_dynamic(&img)
    }
}

fn over_white(c: u8, a: u8) -> u8 {
    let (c, a) = (u32::from(c), u32::from(a));
    ((c * a + 255 * (255 - a) + 127) / 255) as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<PixelGrid, RasterError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let img = image::load_from_memory(&bytes)?;
    PixelGrid::from_dynamic(&img)
}

/// Writes a lossless 8-bit RGB PNG.
pub fn save_image(grid: &PixelGrid, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let bytes = grid.encode_png()?;
    std::fs::write(path, bytes).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Target canvas and rasterization density for one kind of source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub target_width: usize,
    pub target_height: usize,
    pub dpi: u32,
}

impl NormalizationSpec {
    pub const FORMULA: NormalizationSpec = NormalizationSpec {
        target_width: 1344,
        target_height: 224,
        dpi: 240,
    };
    pub const TABLE: NormalizationSpec = NormalizationSpec {
        target_width: 1344,
        target_height: 672,
        dpi: 160,
    };

    pub fn matches(&self, grid: &PixelGrid) -> bool {
        grid.width() == self.target_width && grid.height() == self.target_height
    }
}

/// Fits `grid` onto the spec's canvas. Inputs that fit are anchored top-left and
/// padded with white; larger inputs are first shrunk with nearest-neighbour sampling,
/// keeping the aspect ratio.
pub fn normalize(grid: &PixelGrid, spec: &NormalizationSpec) -> PixelGrid {
    let (tw, th) = (spec.target_width, spec.target_height);
    if grid.width() == tw && grid.height() == th {
        return grid.clone();
    }
    let scaled;
    let content = if grid.width() <= tw && grid.height() <= th {
        grid
    } else {
        let (w, h) = fit_within(grid.width(), grid.height(), tw, th);
        scaled = resize_nearest(grid, w, h);
        &scaled
    };
    let mut canvas = PixelGrid::white(th, tw).expect("normalization targets are non-empty");
    canvas.blit(content, 0, 0);
    canvas
}

/// Largest (w, h) with the source aspect ratio that fits inside (max_w, max_h).
fn fit_within(w: usize, h: usize, max_w: usize, max_h: usize) -> (usize, usize) {
    // Compare max_w / w against max_h / h without floating point.
    if max_w * h <= max_h * w {
        (max_w, ((h * max_w) / w).max(1))
    } else {
        (((w * max_h) / h).max(1), max_h)
    }
}

pub fn resize_nearest(grid: &PixelGrid, new_width: usize, new_height: usize) -> PixelGrid {
    let (w, h) = (grid.width(), grid.height());
    let xs: Vec<usize> = (0..new_width).map(|x| x * w / new_width).collect();
    let mut out = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let row = grid.row(y * h / new_height);
        out.extend(xs.iter().map(|&sx| row[sx]));
    }
    PixelGrid::new(new_height, new_width, out).expect("resize target is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(h: usize, w: usize) -> PixelGrid {
        let px = (0..h * w)
            .map(|i| Pixel::new(i as u8, (i / 7) as u8, 3))
            .collect();
        PixelGrid::new(h, w, px).unwrap()
    }

    #[test]
    fn zero_width_grid_is_rejected() {
        assert!(matches!(
            PixelGrid::white(3, 0),
            Err(RasterError::EmptyGrid { .. })
        ));
        assert!(PixelGrid::new(2, 2, vec![Pixel::WHITE; 3]).is_err());
    }

    #[test]
    fn white_means_all_channels_255() {
        assert!(Pixel::new(255, 255, 255).is_white());
        assert!(!Pixel::new(255, 255, 254).is_white());
        assert!(!Pixel::new(254, 255, 255).is_white());
    }

    #[test]
    fn transpose_swaps_indices() {
        let g = numbered(2, 3);
        let t = g.transpose();
        assert_eq!(t.dimensions(), (3, 2));
        for y in 0..2 {
            for x in 0..3 {
                assert_eq!(t.get(x, y), g.get(y, x));
            }
        }
        let one = numbered(1, 1);
        assert_eq!(one.transpose(), one);
    }

    #[test]
    fn columns_round_trip() {
        let g = numbered(4, 5);
        let cols = g.columns();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[2], g.column(2));
        assert_eq!(PixelGrid::from_columns(&cols).unwrap(), g);
    }

    #[test]
    fn normalize_identity_on_exact_size() {
        let g = PixelGrid::filled(224, 1344, Pixel::BLACK).unwrap();
        assert_eq!(normalize(&g, &NormalizationSpec::FORMULA), g);
    }

    #[test]
    fn normalize_pads_top_left_with_white() {
        let g = numbered(100, 100);
        let n = normalize(&g, &NormalizationSpec::FORMULA);
        assert_eq!(n.dimensions(), (224, 1344));
        assert_eq!(n.crop(0, 0, 100, 100).unwrap(), g);
        for y in 0..224 {
            for x in 0..1344 {
                if y >= 100 || x >= 100 {
                    assert!(n.get(y, x).is_white());
                }
            }
        }
    }

    #[test]
    fn normalize_downscales_tall_input_by_height() {
        let g = PixelGrid::filled(448, 100, Pixel::BLACK).unwrap();
        let n = normalize(&g, &NormalizationSpec::FORMULA);
        // 448 -> 224 halves the width as well.
        assert!(!n.get(223, 49).is_white());
        assert!(n.get(0, 50).is_white());
    }

    #[test]
    fn alpha_composites_onto_white() {
        assert_eq!(over_white(0, 0), 255);
        assert_eq!(over_white(0, 255), 0);
        assert_eq!(over_white(100, 255), 100);
        assert_eq!(over_white(0, 128), 127);
    }

    #[test]
    fn content_hash_depends_on_shape() {
        let a = PixelGrid::white(2, 3).unwrap();
        let b = PixelGrid::white(3, 2).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
