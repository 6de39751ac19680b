//! Dense row-major tensor of order <= 5.
//!
//! This is deliberately a flat `Vec` plus a shape: every consumer in the crate
//! walks it with explicit loops, so there is no view/stride machinery, no
//! broadcasting, and no aliasing. Axis 0 is the channel axis wherever a
//! function documents one.

use crate::error::Error;
use crate::{Real, Result};

pub const MAX_ORDER: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_ORDER {
        return Err(Error::Order { got: shape.len(), max: MAX_ORDER });
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(Error::bad("tensor", "zero-length axis"));
        }
        n = n.checked_mul(d).ok_or_else(|| Error::bad("tensor", "shape overflows usize"))?;
    }
    Ok(n)
}

impl<S: Real> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![S::zero(); n] })
    }

    pub fn full(shape: &[usize], v: S) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![v; n] })
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n = check_shape(shape)?;
        if data.len() != n {
            return Err(Error::DataLength { shape: shape.to_vec(), expected: n, got: data.len() });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Fills from a generator called in row-major index order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> S) -> Result<Self> {
        let n = check_shape(shape)?;
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for ax in (0..self.shape.len().saturating_sub(1)).rev() {
            s[ax] = s[ax + 1] * self.shape[ax + 1];
        }
        s
    }

    #[inline]
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0usize;
        for (ax, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[ax], "index {i} out of range on axis {ax}");
            off = off * self.shape[ax] + i;
        }
        off
    }

    #[inline]
    pub fn at(&self, idx: &[usize]) -> S {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: &[usize], v: S) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::DataLength { shape: shape.to_vec(), expected: n, got: self.data.len() });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "tensor_add",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "tensor_sub",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        let d = self.sub(other)?;
        Ok(d.data.iter().fold(S::zero(), |m, &v| m.max(v.abs())))
    }

    /// Copies channels `range` (axis 0) into a new tensor. Axis-0 slices of a
    /// row-major tensor are contiguous, so this is a single memcpy.
    pub fn slice_axis0(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape[0] || count == 0 {
            return Err(Error::bad(
                "slice_axis0",
                format!("range {start}..{} out of {} channels", start + count, self.shape[0]),
            ));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = count;
        let data = self.data[start * inner..(start + count) * inner].to_vec();
        Ok(Tensor { shape, data })
    }

    /// Concatenates along axis 0; trailing axes must match.
    pub fn concat_axis0(parts: &[&Self]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::bad("concat_axis0", "no tensors given"));
        }
        let tail = &parts[0].shape[1..];
        let mut c0 = 0usize;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::ShapeMismatch {
                    op: "concat_axis0",
                    expected: parts[0].shape.clone(),
                    got: p.shape.clone(),
                });
            }
            c0 += p.shape[0];
        }
        let mut shape = parts[0].shape.clone();
        shape[0] = c0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }
}

/// Iterates all multi-indices of `shape` in row-major order.
pub fn indices(shape: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut first = true;
    (0..total).map(move |_| {
        if first {
            first = false;
        } else {
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        idx.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_offsets() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |idx| (idx[0] * 100 + idx[1] * 10 + idx[2]) as f64)
            .unwrap();
        assert_eq!(t.at(&[1, 2, 3]), 123.0);
        assert_eq!(t.at(&[0, 0, 0]), 0.0);
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let r = Tensor::<f64>::from_vec(&[2, 2], vec![1.0; 5]);
        assert!(matches!(r, Err(Error::DataLength { expected: 4, got: 5, .. })));
    }

    #[test]
    fn order_cap_is_five() {
        assert!(Tensor::<f64>::zeros(&[1, 1, 1, 1, 1]).is_ok());
        assert!(matches!(
            Tensor::<f64>::zeros(&[1, 1, 1, 1, 1, 1]),
            Err(Error::Order { got: 6, max: 5 })
        ));
    }

    #[test]
    fn zero_axis_rejected() {
        assert!(Tensor::<f64>::zeros(&[3, 0, 2]).is_err());
    }

    #[test]
    fn slice_and_concat_axis0_roundtrip() {
        let t = Tensor::<f64>::from_fn(&[4, 2, 2], |idx| idx[0] as f64).unwrap();
        let a = t.slice_axis0(0, 1).unwrap();
        let b = t.slice_axis0(1, 3).unwrap();
        let back = Tensor::concat_axis0(&[&a, &b]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn indices_cover_all_cells_in_row_major_order() {
        let got: Vec<Vec<usize>> = indices(&[2, 2]).collect();
        assert_eq!(got, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }
}
