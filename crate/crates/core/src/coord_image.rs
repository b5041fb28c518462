use crate::error::{Error, Result};

/// Channel order of a coordinate image.
pub const CH_DU: usize = 0;
pub const CH_DV: usize = 1;
pub const CH_DEPTH: usize = 2;
pub const CH_MASK: usize = 3;
pub const COORD_CHANNELS: usize = 4;

/// Per-pixel `(Δu, Δv, depth, mask)` for one fixed viewpoint.
///
/// `Δu, Δv` are sub-pixel offsets from the pixel centre in pixel units (the
/// pixel at column `c` sits at `u = c`), `depth` is camera-frame z and `mask`
/// is an occupancy probability. Stored channel-major: `[4][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordImage {
    pub size: usize,
    pub view_index: usize,
    pub grid: Vec<f64>,
}

impl CoordImage {
    pub fn new(size: usize, view_index: usize, grid: Vec<f64>) -> Result<Self> {
        if grid.len() != COORD_CHANNELS * size * size {
            return Err(Error::Dimension(format!(
                "coordinate image of size {size} needs {} values, got {}",
                COORD_CHANNELS * size * size,
                grid.len()
            )));
        }
        Ok(CoordImage {
            size,
            view_index,
            grid,
        })
    }

    pub fn zeros(size: usize, view_index: usize) -> Self {
        CoordImage {
            size,
            view_index,
            grid: vec![0.0; COORD_CHANNELS * size * size],
        }
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.grid[(channel * self.size + row) * self.size + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.grid[(channel * self.size + row) * self.size + col] = value;
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let plane = self.size * self.size;
        &self.grid[channel * plane..(channel + 1) * plane]
    }

    /// Builds the regression target for a rendered depth/mask pair: zero
    /// offsets, the rendered depth on the foreground and the binary mask.
    pub fn from_render(size: usize, view_index: usize, depth: &[f64], mask: &[f64]) -> Result<Self> {
        let plane = size * size;
        if depth.len() != plane || mask.len() != plane {
            return Err(Error::Dimension(format!(
                "render of size {size} needs {plane} pixels per channel"
            )));
        }
        let mut img = Self::zeros(size, view_index);
        for i in 0..plane {
            if mask[i] > 0.5 {
                img.grid[CH_DEPTH * plane + i] = depth[i];
                img.grid[CH_MASK * plane + i] = 1.0;
            }
        }
        Ok(img)
    }
}
