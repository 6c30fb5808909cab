//! Overlapping patch extraction and its adjoint.
//!
//! Column `j` of a patch matrix is the `j`-th patch in raster order of its
//! top-left corner, vectorized row-major. Only patches lying entirely inside
//! the image are used (no wrap-around, no padding).

use nalgebra::DMatrix;

use crate::error::{ensure, Result};
use crate::image::ImageGrid;
use crate::model::{CodeResidualState, TransformStack};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_y: usize,
    pub stride_x: usize,
}

impl PatchGeometry {
    pub fn new(
        image_h: usize,
        image_w: usize,
        patch_h: usize,
        patch_w: usize,
        stride_y: usize,
        stride_x: usize,
    ) -> Result<Self> {
        ensure!(patch_h >= 1 && patch_w >= 1, "patch dimensions must be positive");
        ensure!(
            patch_h <= image_h && patch_w <= image_w,
            "patch {patch_h}x{patch_w} does not fit in image {image_h}x{image_w}"
        );
        ensure!(stride_y >= 1 && stride_x >= 1, "strides must be at least 1");
        Ok(Self { image_h, image_w, patch_h, patch_w, stride_y, stride_x })
    }

    /// Unit-stride geometry.
    pub fn dense(image_h: usize, image_w: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        Self::new(image_h, image_w, patch_h, patch_w, 1, 1)
    }

    pub fn for_image(image: &ImageGrid, patch_h: usize, patch_w: usize, stride: usize) -> Result<Self> {
        Self::new(image.height, image.width, patch_h, patch_w, stride, stride)
    }

    /// Patch dimension `p`.
    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn corners_y(&self) -> usize {
        (self.image_h - self.patch_h) / self.stride_y + 1
    }

    pub fn corners_x(&self) -> usize {
        (self.image_w - self.patch_w) / self.stride_x + 1
    }

    /// Patch count `N`.
    pub fn patch_count(&self) -> usize {
        self.corners_y() * self.corners_x()
    }

    fn check_image(&self, x: &ImageGrid) -> Result<()> {
        ensure!(
            x.height == self.image_h && x.width == self.image_w,
            "image is {}x{} but patch geometry expects {}x{}",
            x.height,
            x.width,
            self.image_h,
            self.image_w
        );
        Ok(())
    }

    fn check_cols(&self, cols: &DMatrix<f64>) -> Result<()> {
        ensure!(
            cols.nrows() == self.patch_len() && cols.ncols() == self.patch_count(),
            "patch matrix is {}x{} but geometry expects {}x{}",
            cols.nrows(),
            cols.ncols(),
            self.patch_len(),
            self.patch_count()
        );
        Ok(())
    }

    /// Top-left corners in column order.
    fn corners(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.corners_y()).flat_map(move |cy| {
            (0..self.corners_x()).map(move |cx| (cy * self.stride_y, cx * self.stride_x))
        })
    }
}

/// Stacks every patch of `x` as a column of a `p x N` matrix.
pub fn extract_patches(x: &ImageGrid, geom: &PatchGeometry) -> Result<DMatrix<f64>> {
    geom.check_image(x)?;
    Ok(extract_values(&x.values, geom))
}

pub(crate) fn extract_values(values: &[f64], geom: &PatchGeometry) -> DMatrix<f64> {
    let p = geom.patch_len();
    let mut out = DMatrix::zeros(p, geom.patch_count());
    let data = out.as_mut_slice();
    for (j, (y0, x0)) in geom.corners().enumerate() {
        let col = &mut data[j * p..(j + 1) * p];
        for dy in 0..geom.patch_h {
            let src = (y0 + dy) * geom.image_w + x0;
            col[dy * geom.patch_w..(dy + 1) * geom.patch_w]
                .copy_from_slice(&values[src..src + geom.patch_w]);
        }
    }
    out
}

/// Adjoint of [`extract_patches`]: scatters every column back to its patch
/// location and sums overlaps. Accumulation order is fixed (column order).
pub fn aggregate_patches(cols: &DMatrix<f64>, geom: &PatchGeometry, pixel_size: f64) -> Result<ImageGrid> {
    geom.check_cols(cols)?;
    let values = aggregate_values(cols, geom);
    ImageGrid::from_vec(geom.image_h, geom.image_w, pixel_size, values)
}

pub(crate) fn aggregate_values(cols: &DMatrix<f64>, geom: &PatchGeometry) -> Vec<f64> {
    let p = geom.patch_len();
    let mut out = vec![0.0; geom.image_h * geom.image_w];
    let data = cols.as_slice();
    for (j, (y0, x0)) in geom.corners().enumerate() {
        let col = &data[j * p..(j + 1) * p];
        for dy in 0..geom.patch_h {
            let dst = (y0 + dy) * geom.image_w + x0;
            for (o, v) in out[dst..dst + geom.patch_w]
                .iter_mut()
                .zip(&col[dy * geom.patch_w..(dy + 1) * geom.patch_w])
            {
                *o += v;
            }
        }
    }
    out
}

/// Number of patches covering each pixel, i.e. the diagonal of
/// `sum_j P_j^T P_j`.
pub fn patch_cover_counts(geom: &PatchGeometry, pixel_size: f64) -> ImageGrid {
    let mut out = ImageGrid::zeros(geom.image_h, geom.image_w, pixel_size);
    for (y0, x0) in geom.corners() {
        for dy in 0..geom.patch_h {
            let row = (y0 + dy) * geom.image_w + x0;
            for v in &mut out.values[row..row + geom.patch_w] {
                *v += 1.0;
            }
        }
    }
    out
}

/// Per-layer residual images `sum_j P_j^T R_l^j`.
///
/// With `normalize` set, every pixel is divided by its cover count, which
/// turns the sum into a per-pixel average.
pub fn residual_images(
    model: &TransformStack,
    state: &CodeResidualState,
    geom: &PatchGeometry,
    pixel_size: f64,
    normalize: bool,
) -> Result<Vec<ImageGrid>> {
    ensure!(
        state.layers() == model.layers(),
        "state has {} layers, model has {}",
        state.layers(),
        model.layers()
    );
    let counts = normalize.then(|| patch_cover_counts(geom, pixel_size));
    state
        .r
        .iter()
        .map(|r| {
            let mut img = aggregate_patches(r, geom, pixel_size)?;
            if let Some(c) = &counts {
                for (v, n) in img.values.iter_mut().zip(&c.values) {
                    *v /= n.max(1.0);
                }
            }
            Ok(img)
        })
        .collect()
}
