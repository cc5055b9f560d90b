//! Dense tensors and the CGTN binary dump format.
//!
//! Canonical image layout is batch x channels x height x width, row-major.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F64 = 0,
    F32 = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::ShapeMismatch(format!("zero extent in {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {numel} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], grad: None, requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel], grad: None, requires_grad: false }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value], grad: None, requires_grad: false }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) -> &mut Self {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
        self
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Accumulate into the gradient buffer (allocated on first use).
    pub fn add_to_grad(&mut self, delta: &[f64]) -> Result<()> {
        if !self.requires_grad {
            return Ok(()); // non-trainable tensors never accumulate
        }
        if delta.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "grad length {} vs data length {}",
                delta.len(),
                self.data.len()
            )));
        }
        let g = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    /// Interpret as a 4-D image batch.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!("expected rank 4, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    /// Write the CGTN record: magic "CGTN", u8 dtype, u8 rank, rank x u32
    /// little-endian extents, then the payload row-major with no padding.
    pub fn write_cgtn<W: Write>(&self, w: &mut W, dtype: Dtype) -> Result<()> {
        w.write_all(b"CGTN")?;
        w.write_all(&[dtype as u8, self.shape.len() as u8])?;
        for &e in &self.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        match dtype {
            Dtype::F64 => {
                for &v in &self.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Dtype::F32 => {
                for &v in &self.data {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_cgtn<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"CGTN" {
            return Err(Error::Checkpoint(format!("bad tensor magic {magic:?}")));
        }
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr)?;
        let dtype = match hdr[0] {
            0 => Dtype::F64,
            1 => Dtype::F32,
            d => return Err(Error::Checkpoint(format!("unknown dtype {d}"))),
        };
        let rank = hdr[1] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            shape.push(u32::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        match dtype {
            Dtype::F64 => {
                let mut b = [0u8; 8];
                for _ in 0..numel {
                    r.read_exact(&mut b)?;
                    data.push(f64::from_le_bytes(b));
                }
            }
            Dtype::F32 => {
                let mut b = [0u8; 4];
                for _ in 0..numel {
                    r.read_exact(&mut b)?;
                    data.push(f32::from_le_bytes(b) as f64);
                }
            }
        }
        Tensor::new(shape, data)
    }
}
