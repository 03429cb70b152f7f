use crate::{Result, StatsError};
use tensor_core::Tensor;

/// Square grid of continuous latent tokens: N = g² rows of d channels,
/// stored row-major in raster-scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    grid_side: usize,
    dim: usize,
    data: Vec<f32>,
}

impl LatentGrid {
    pub fn new(grid_side: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let n = grid_side * grid_side;
        if grid_side == 0 || dim == 0 {
            return Err(StatsError::contract("grid_side and dim must be positive"));
        }
        if data.len() != n * dim {
            return Err(StatsError::Geometry(format!(
                "expected {} values for a {grid_side}x{grid_side} grid of dim {dim}, got {}",
                n * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite("latent grid"));
        }
        Ok(LatentGrid {
            grid_side,
            dim,
            data,
        })
    }

    pub fn zeros(grid_side: usize, dim: usize) -> Self {
        LatentGrid {
            grid_side,
            dim,
            data: vec![0.0; grid_side * grid_side * dim],
        }
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_tokens(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn token_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// View as an [N, d] tensor (copies).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n_tokens(), self.dim], self.data.clone())
            .expect("grid data is finite and sized")
    }

    pub fn from_tensor(grid_side: usize, t: &Tensor) -> Result<Self> {
        let (n, d) = t
            .dims2()
            .map_err(|e| StatsError::Geometry(e.to_string()))?;
        if n != grid_side * grid_side {
            return Err(StatsError::Geometry(format!(
                "{n} rows is not {grid_side}²"
            )));
        }
        LatentGrid::new(grid_side, d, t.data().to_vec())
    }
}
