//! Patch feature grids and the `.tkcf` container format.
//!
//! A `.tkcf` file is a fixed 32-byte header followed by a row-major
//! `(row, col, dim)` payload of little-endian `f32` values:
//!
//! | offset | size | field        |
//! |--------|------|--------------|
//! | 0      | 4    | magic `TKCF` |
//! | 4      | 4    | version (1)  |
//! | 8      | 4    | rows         |
//! | 12     | 4    | cols         |
//! | 16     | 4    | dim          |
//! | 20     | 4    | patch_size   |
//! | 24     | 4    | image_height |
//! | 28     | 4    | image_width  |
//!
//! All header integers are little-endian `u32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::PixelBox;

pub const MAGIC: [u8; 4] = *b"TKCF";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const FILE_EXTENSION: &str = "tkcf";

/// Feature vectors for an `rows × cols` grid of `patch_size × patch_size` image patches.
///
/// Values are kept as `f32`, the on-disk dtype; all downstream numerics widen to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub patch_size: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// `rows * cols * dim` values, row-major over `(row, col, dim)`.
    pub data: Vec<f32>,
}

/// Position of a token on the patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridIndex {
    pub row: usize,
    pub col: usize,
}

impl FeatureGrid {
    /// Builds a grid and checks every invariant.
    pub fn new(
        rows: usize,
        cols: usize,
        dim: usize,
        patch_size: usize,
        image_height: usize,
        image_width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let grid = FeatureGrid {
            rows,
            cols,
            dim,
            patch_size,
            image_height,
            image_width,
            data,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid covering an image of exactly `rows * patch_size × cols * patch_size` pixels.
    pub fn with_exact_image(
        rows: usize,
        cols: usize,
        dim: usize,
        patch_size: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::new(
            rows,
            cols,
            dim,
            patch_size,
            rows * patch_size,
            cols * patch_size,
            data,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.dim == 0 || self.patch_size == 0 {
            return Err(Error::Precondition(format!(
                "rows, cols, dim and patch_size must be >= 1 (got {}x{}x{}, K={})",
                self.rows, self.cols, self.dim, self.patch_size
            )));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::Precondition("image dimensions must be >= 1".into()));
        }
        if self.len() < 2 {
            return Err(Error::Precondition(format!(
                "grid needs at least 2 tokens, got {}",
                self.len()
            )));
        }
        let max_rows = self.image_height.div_ceil(self.patch_size);
        let max_cols = self.image_width.div_ceil(self.patch_size);
        if self.rows > max_rows || self.cols > max_cols {
            return Err(Error::Precondition(format!(
                "grid {}x{} does not fit image {}x{} with patch size {}",
                self.rows, self.cols, self.image_height, self.image_width, self.patch_size
            )));
        }
        let expected = self.len() * self.dim;
        if self.data.len() != expected {
            return Err(Error::Precondition(format!(
                "data holds {} values, expected {}",
                self.data.len(),
                expected
            )));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let any_nonzero = self
            .data
            .chunks_exact(self.dim)
            .any(|v| v.iter().any(|&x| x != 0.0));
        if !any_nonzero {
            return Err(Error::Precondition(
                "all feature vectors have zero norm".into(),
            ));
        }
        Ok(())
    }

    /// Token count `N = rows * cols`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Feature vector of the token at linear index `i`.
    pub fn token(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn index_of(&self, at: GridIndex) -> usize {
        at.row * self.cols + at.col
    }

    pub fn grid_index_of(&self, i: usize) -> GridIndex {
        GridIndex {
            row: i / self.cols,
            col: i % self.cols,
        }
    }

    /// Size in bytes of the serialized grid.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.data.len() * 4
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for field in [
            self.rows,
            self.cols,
            self.dim,
            self.patch_size,
            self.image_height,
            self.image_width,
        ] {
            let field = u32::try_from(field)
                .map_err(|_| Error::Precondition(format!("header field {field} exceeds u32")))?;
            out.extend_from_slice(&field.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, expected \"TKCF\"".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let version = word(4) as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let (rows, cols, dim) = (word(8), word(12), word(16));
        let (patch_size, image_height, image_width) = (word(20), word(24), word(28));

        let count = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::Corrupt("header dimensions overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if Some(payload.len()) != count.checked_mul(4) {
            return Err(Error::Corrupt(format!(
                "header declares {rows}x{cols}x{dim} = {count} floats, payload holds {} bytes",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        FeatureGrid::new(rows, cols, dim, patch_size, image_height, image_width, data)
    }
}

pub fn read_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureGrid::from_bytes(&bytes)
}

pub fn write_feature_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = grid.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Inclusive patch extent of a region on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchExtent {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

/// Maps an inclusive patch extent to a half-open pixel box, clipped to the image.
pub fn patch_to_pixel_box(extent: PatchExtent, grid: &FeatureGrid) -> Result<PixelBox> {
    let PatchExtent {
        row_min,
        row_max,
        col_min,
        col_max,
    } = extent;
    if row_min > row_max || col_min > col_max || row_max >= grid.rows || col_max >= grid.cols {
        return Err(Error::Logic(format!(
            "extent rows {row_min}..={row_max} cols {col_min}..={col_max} outside {}x{} grid",
            grid.rows, grid.cols
        )));
    }
    let k = grid.patch_size;
    Ok(PixelBox::new(
        (col_min * k) as f64,
        (row_min * k) as f64,
        ((col_max + 1) * k).min(grid.image_width) as f64,
        ((row_max + 1) * k).min(grid.image_height) as f64,
    ))
}
