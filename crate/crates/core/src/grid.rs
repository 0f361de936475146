use thiserror::Error;

use crate::autodiff::Region;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("image {image_width}x{image_height} is not tiled by {patch_width}x{patch_height} patches")]
    NotTiled {
        image_width: usize,
        image_height: usize,
        patch_width: usize,
        patch_height: usize,
    },
    #[error("patch {0}x{1} must have both sides positive and divisible by 4")]
    PatchSize(usize, usize),
    #[error("patch {patch} maps to an empty feature rectangle at stride {stride}")]
    EmptyFeatureRect { patch: usize, stride: usize },
}

/// Pixel rectangle of one patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRect {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

/// Regular tiling of an image into equal patches, indexed row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    image_width: usize,
    image_height: usize,
    patch_width: usize,
    patch_height: usize,
}

impl PatchGrid {
    pub fn new(
        image_width: usize,
        image_height: usize,
        patch_width: usize,
        patch_height: usize,
    ) -> Result<Self, GridError> {
        if patch_width == 0 || patch_height == 0 || patch_width % 4 != 0 || patch_height % 4 != 0 {
            return Err(GridError::PatchSize(patch_width, patch_height));
        }
        if image_width % patch_width != 0 || image_height % patch_height != 0 {
            return Err(GridError::NotTiled {
                image_width,
                image_height,
                patch_width,
                patch_height,
            });
        }
        Ok(Self {
            image_width,
            image_height,
            patch_width,
            patch_height,
        })
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.image_width, self.image_height)
    }

    pub fn patch_size(&self) -> (usize, usize) {
        (self.patch_width, self.patch_height)
    }

    pub fn cols(&self) -> usize {
        self.image_width / self.patch_width
    }

    pub fn rows(&self) -> usize {
        self.image_height / self.patch_height
    }

    pub fn num_patches(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn rect(&self, patch: usize) -> PatchRect {
        let (row, col) = (patch / self.cols(), patch % self.cols());
        PatchRect {
            left: col * self.patch_width,
            top: row * self.patch_height,
            width: self.patch_width,
            height: self.patch_height,
        }
    }

    /// Patch rectangle on a feature map downsampled by `stride`.
    pub fn feature_region(&self, patch: usize, stride: usize) -> Result<Region, GridError> {
        let r = self.rect(patch);
        let region = Region {
            top: r.top / stride,
            left: r.left / stride,
            height: r.height / stride,
            width: r.width / stride,
        };
        if region.height == 0 || region.width == 0 {
            return Err(GridError::EmptyFeatureRect { patch, stride });
        }
        Ok(region)
    }

    pub fn feature_regions(&self, stride: usize) -> Result<Vec<Region>, GridError> {
        (0..self.num_patches())
            .map(|p| self.feature_region(p, stride))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_toy_grid() {
        let g = PatchGrid::new(128, 64, 32, 16).unwrap();
        assert_eq!((g.cols(), g.rows(), g.num_patches()), (4, 4, 16));
        assert_eq!(
            g.rect(5),
            PatchRect {
                left: 32,
                top: 16,
                width: 32,
                height: 16
            }
        );
        let r = g.feature_region(5, 8).unwrap();
        assert_eq!((r.left, r.top, r.width, r.height), (4, 2, 4, 2));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(PatchGrid::new(128, 64, 30, 16), Err(GridError::PatchSize(..))));
        assert!(matches!(PatchGrid::new(120, 64, 32, 16), Err(GridError::NotTiled { .. })));
        let g = PatchGrid::new(64, 32, 8, 4).unwrap();
        assert!(g.feature_region(0, 8).is_err());
    }
}
