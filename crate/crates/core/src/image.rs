use crate::error::{ensure, MarsError, Result};

/// A 2D image on a square-pixel grid, values row-major in modified HU.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    /// Pixel size in mm (isotropic).
    pub pixel_size: f64,
    pub values: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, pixel_size: f64) -> Self {
        Self::filled(height, width, pixel_size, 0.0)
    }

    pub fn filled(height: usize, width: usize, pixel_size: f64, value: f64) -> Self {
        Self { height, width, pixel_size, values: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, pixel_size: f64, values: Vec<f64>) -> Result<Self> {
        ensure!(height >= 1 && width >= 1, "image dimensions must be positive, got {height}x{width}");
        ensure!(
            values.len() == height * width,
            "expected {} pixel values, got {}",
            height * width,
            values.len()
        );
        ensure!(pixel_size > 0.0 && pixel_size.is_finite(), "pixel size must be positive, got {pixel_size}");
        Ok(Self { height, width, pixel_size, values })
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_vec(self.height, self.width, self.pixel_size, values)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(MarsError::Numeric(format!(
                "non-finite pixel at ({}, {})",
                i / self.width,
                i % self.width
            ))),
            None => Ok(()),
        }
    }

    /// Sum of squared pixel values.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}
