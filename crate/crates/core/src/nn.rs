//! Fully connected layers and initialisation shared by the models.

use rand::Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x·W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if !weight.is_matrix() || bias.shape() != [1, weight.cols()] {
            return Err(Error::Shape(format!(
                "weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `u32 rows, u32 cols`, then weights row-major, then biases.
    pub fn write(&self, w: &mut ByteWriter) -> Result<()> {
        w.len_u32(self.in_dim())?.len_u32(self.out_dim())?;
        w.f64s(self.weight.data()).f64s(self.bias.data());
        Ok(())
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let at = r.offset();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::format(at, "zero-sized layer"));
        }
        let weight = Tensor::matrix(rows, cols, r.f64s(rows * cols)?)?;
        let bias = Tensor::matrix(1, cols, r.f64s(cols)?)?;
        Self::new(weight, bias)
    }
}

/// Uniform on `±√(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive dims")
}
