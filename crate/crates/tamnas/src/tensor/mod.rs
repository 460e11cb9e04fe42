//! Dense tensor substrate: row-major `f32` storage plus a reverse-mode tape.
//!
//! The engine is CPU-only and deliberately small: exactly the operations the
//! block zoo needs, each with an analytic backward rule that is checked
//! against central finite differences in the test suite. Reductions and
//! inner products accumulate in `f64` and store `f32`.

mod kernels;
pub mod tape;

pub mod gradcheck;

pub use tape::{Mode, NodeId, Tape};

use crate::error::{Error, Result};
use rand::Rng;

/// Dense n-dimensional array of 32-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::InvalidArgument {
                op: "Tensor::new",
                msg: format!("shape {:?} wants {} values, got {}", shape, expect, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    /// Kaiming-uniform fan-in initialization: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
    pub fn kaiming_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| (rng.gen_range(-bound..bound)) as f32)
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn uniform<R: Rng>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::InvalidArgument {
                op: "reshape",
                msg: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Prefix-slice along every axis where `target` is smaller than the
    /// current shape. This is the weight-sharing slice rule: keep the first
    /// `target[d]` entries of each narrowed axis.
    pub fn prefix_slice(&self, target: &[usize]) -> Result<Tensor> {
        if target.len() != self.shape.len() {
            return Err(Error::InvalidArgument {
                op: "prefix_slice",
                msg: format!("rank mismatch {:?} -> {:?}", self.shape, target),
            });
        }
        for (d, (&have, &want)) in self.shape.iter().zip(target).enumerate() {
            if want > have {
                return Err(Error::InvalidArgument {
                    op: "prefix_slice",
                    msg: format!("axis {d}: cannot grow {have} -> {want}"),
                });
            }
        }
        if target == self.shape.as_slice() {
            return Ok(self.clone());
        }
        let mut out = Tensor::zeros(target);
        copy_prefix(&self.shape, self.data(), target, out.data_mut());
        Ok(out)
    }

    /// Write `src` (shaped `sub`) back into the prefix block of this tensor.
    pub fn prefix_write(&mut self, sub: &[usize], src: &[f32]) -> Result<()> {
        if sub.len() != self.shape.len() {
            return Err(Error::InvalidArgument {
                op: "prefix_write",
                msg: format!("rank mismatch {:?} <- {:?}", self.shape, sub),
            });
        }
        let shape = self.shape.clone();
        write_prefix(&shape, self.data_mut(), sub, src);
        Ok(())
    }
}

fn copy_prefix(full: &[usize], src: &[f32], sub: &[usize], dst: &mut [f32]) {
    // Recursive row-major walk; tensors here are small (at most conv kernels).
    fn rec(
        full: &[usize],
        sub: &[usize],
        src: &[f32],
        dst: &mut [f32],
        dim: usize,
        src_off: usize,
        dst_off: usize,
    ) {
        if dim == full.len() {
            dst[dst_off] = src[src_off];
            return;
        }
        let src_stride: usize = full[dim + 1..].iter().product();
        let dst_stride: usize = sub[dim + 1..].iter().product();
        for i in 0..sub[dim] {
            rec(full, sub, src, dst, dim + 1, src_off + i * src_stride, dst_off + i * dst_stride);
        }
    }
    rec(full, sub, src, dst, 0, 0, 0);
}

fn write_prefix(full: &[usize], dst: &mut [f32], sub: &[usize], src: &[f32]) {
    fn rec(
        full: &[usize],
        sub: &[usize],
        dst: &mut [f32],
        src: &[f32],
        dim: usize,
        dst_off: usize,
        src_off: usize,
    ) {
        if dim == full.len() {
            dst[dst_off] = src[src_off];
            return;
        }
        let dst_stride: usize = full[dim + 1..].iter().product();
        let src_stride: usize = sub[dim + 1..].iter().product();
        for i in 0..sub[dim] {
            rec(full, sub, dst, src, dim + 1, dst_off + i * dst_stride, src_off + i * src_stride);
        }
    }
    rec(full, sub, dst, src, 0, 0, 0);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn prefix_slice_takes_leading_entries() {
        // 2x3 -> 2x2 keeps columns 0..2 of each row
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = t.prefix_slice(&[2, 2]).unwrap();
        assert_eq!(s.data(), &[1., 2., 4., 5.]);
    }

    #[test]
    fn prefix_write_roundtrip() {
        let mut t = Tensor::zeros(&[2, 3]);
        t.prefix_write(&[2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(t.data(), &[1., 2., 0., 3., 4., 0.]);
        let back = t.prefix_slice(&[2, 2]).unwrap();
        assert_eq!(back.data(), &[1., 2., 3., 4.]);
    }
}

#[cfg(test)]
#[path = "tests.rs"]
mod op_tests;
