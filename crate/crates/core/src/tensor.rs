//! Dense row-major `f64` tensors and the handful of kernels the network needs.
//!
//! Images and feature maps are channels-last (`[H, W, C]`); convolution
//! kernels are `[k, k, C_in, C_out]`. Convolutions are "same"-padded
//! cross-correlations lowered onto a single GEMM through an im2col buffer, so
//! the accumulation order is fixed for a given shape and results are
//! bit-reproducible.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"CLT1";

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major flat offset of a multi-index. Panics on a bad index.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {i} out of bounds for extent {n}");
            acc * n + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "elementwise_mul", |a, b| a * b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "elementwise_add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "elementwise_sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates `[.., Ca]` and `[.., Cb]` along the last axis.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Self> {
        let (Some((&ca, lead_a)), Some((&cb, lead_b))) = (self.shape.split_last(), other.shape.split_last()) else {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        };
        if lead_a != lead_b {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for (a, b) in self
            .data
            .chunks_exact(ca.max(1))
            .zip(other.data.chunks_exact(cb.max(1)))
        {
            data.extend_from_slice(&a[..ca]);
            data.extend_from_slice(&b[..cb]);
        }
        let mut shape = lead_a.to_vec();
        shape.push(ca + cb);
        Tensor::new(shape, data)
    }

    /// Copies channels `[start, end)` of a channels-last tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let Some((&c, lead)) = self.shape.split_last() else {
            return Err(Error::Rank {
                op: "slice_channels",
                expected: 1,
                shape: self.shape.clone(),
            });
        };
        if start > end || end > c {
            return Err(Error::OutOfRange {
                what: "channel",
                index: end,
                limit: c,
            });
        }
        let data = self
            .data
            .chunks_exact(c.max(1))
            .flat_map(|px| px[start..end].iter().copied())
            .collect();
        let mut shape = lead.to_vec();
        shape.push(end - start);
        Tensor::new(shape, data)
    }

    /// "Same"-padded 2-D cross-correlation: `[H,W,Cin] ⋆ [k,k,Cin,Cout] → [H,W,Cout]`.
    pub fn conv2d_same(&self, kernel: &Tensor) -> Result<Self> {
        let geom = ConvGeometry::check(self, kernel)?;
        let mut out = vec![0.0; geom.height * geom.width * geom.cout];
        let mut cols = Vec::new();
        conv2d_same_into(&self.data, &kernel.data, geom, &mut cols, &mut out);
        Tensor::new(vec![geom.height, geom.width, geom.cout], out)
    }

    /// Vector-Jacobian products of [`Tensor::conv2d_same`]: given the
    /// gradient with respect to the output, returns the gradients with
    /// respect to the input and the kernel.
    pub fn conv2d_same_backward(&self, kernel: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        let geom = ConvGeometry::check(self, kernel)?;
        let expected = [geom.height, geom.width, geom.cout];
        if grad_out.shape != expected {
            return Err(Error::ShapeMismatch {
                op: "conv2d_same_backward",
                lhs: expected.to_vec(),
                rhs: grad_out.shape.clone(),
            });
        }
        let mut cols = Vec::new();
        im2col(&self.data, geom, &mut cols);
        let mut grad_kernel = vec![0.0; kernel.len()];
        kernel_grad_accumulate(&cols, &grad_out.data, geom, &mut grad_kernel);
        let mut grad_input = vec![0.0; self.len()];
        let mut dcols = Vec::new();
        input_grad_accumulate(&grad_out.data, &kernel.data, geom, &mut dcols, &mut grad_input);
        Ok((
            Tensor::new(self.shape.clone(), grad_input)?,
            Tensor::new(kernel.shape.clone(), grad_kernel)?,
        ))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        let rank = u32::try_from(self.shape.len()).map_err(io::Error::other)?;
        w.write_all(&rank.to_le_bytes())?;
        for &n in &self.shape {
            let n = u32::try_from(n).map_err(io::Error::other)?;
            w.write_all(&n.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad tensor magic"));
        }
        let rank = read_u32(r)? as usize;
        if rank > 16 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("implausible tensor rank {rank}"),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "tensor size overflows"))?;
        let mut bytes = Vec::new();
        let byte_len = n
            .checked_mul(8)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "tensor size overflows"))?;
        r.take(byte_len as u64).read_to_end(&mut bytes)?;
        if bytes.len() != byte_len {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!(
                    "truncated tensor data: expected {byte_len} bytes, found {}",
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let t = Self::read_from(&mut r).map_err(|e| Error::format(path, e.to_string()))?;
        let mut probe = [0u8; 1];
        match r.read(&mut probe) {
            Ok(0) => Ok(t),
            Ok(_) => Err(Error::format(path, "trailing bytes after tensor data")),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Numerically stable logistic function.
///
/// Mathematically the result lies in (0, 1); in `f64` it rounds to exactly
/// 0 or 1 once `|x|` exceeds roughly 37 (upper) or 745 (lower).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shape bookkeeping for one same-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeometry {
    pub fn new(height: usize, width: usize, cin: usize, cout: usize, k: usize) -> Self {
        debug_assert!(k % 2 == 1);
        Self {
            height,
            width,
            cin,
            cout,
            k,
        }
    }

    fn check(input: &Tensor, kernel: &Tensor) -> Result<Self> {
        let &[height, width, cin] = input.shape() else {
            return Err(Error::Rank {
                op: "conv2d_same input",
                expected: 3,
                shape: input.shape.clone(),
            });
        };
        let &[k, k2, kcin, cout] = kernel.shape() else {
            return Err(Error::Rank {
                op: "conv2d_same kernel",
                expected: 4,
                shape: kernel.shape.clone(),
            });
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "conv2d_same kernel must be square",
                lhs: vec![k],
                rhs: vec![k2],
            });
        }
        if k % 2 == 0 {
            return Err(Error::EvenKernel(k));
        }
        if kcin != cin {
            return Err(Error::ChannelMismatch {
                op: "conv2d_same",
                expected: cin,
                got: kcin,
            });
        }
        Ok(Self::new(height, width, cin, cout, k))
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Row length of the im2col matrix, `k·k·Cin`.
    pub fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }
}

/// Fills `cols` (`[H·W, k·k·Cin]`, row-major) with zero-padded patches.
pub(crate) fn im2col(input: &[f64], g: ConvGeometry, cols: &mut Vec<f64>) {
    let patch = g.patch();
    cols.clear();
    cols.resize(g.pixels() * patch, 0.0);
    let pad = (g.k / 2) as isize;
    for y in 0..g.height {
        for x in 0..g.width {
            let row = &mut cols[(y * g.width + x) * patch..][..patch];
            for ky in 0..g.k {
                let sy = y as isize + ky as isize - pad;
                if sy < 0 || sy >= g.height as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let sx = x as isize + kx as isize - pad;
                    if sx < 0 || sx >= g.width as isize {
                        continue;
                    }
                    let src = (sy as usize * g.width + sx as usize) * g.cin;
                    let dst = (ky * g.k + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&input[src..src + g.cin]);
                }
            }
        }
    }
}

/// Scatter-adds an im2col-shaped gradient back onto the input grid.
pub(crate) fn col2im_accumulate(dcols: &[f64], g: ConvGeometry, grad_input: &mut [f64]) {
    let patch = g.patch();
    let pad = (g.k / 2) as isize;
    for y in 0..g.height {
        for x in 0..g.width {
            let row = &dcols[(y * g.width + x) * patch..][..patch];
            for ky in 0..g.k {
                let sy = y as isize + ky as isize - pad;
                if sy < 0 || sy >= g.height as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let sx = x as isize + kx as isize - pad;
                    if sx < 0 || sx >= g.width as isize {
                        continue;
                    }
                    let dst = (sy as usize * g.width + sx as usize) * g.cin;
                    let src = (ky * g.k + kx) * g.cin;
                    for (d, s) in grad_input[dst..dst + g.cin].iter_mut().zip(&row[src..src + g.cin]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `c (m×n) = beta·c + a (m×k) · b (k×n)`, all row-major, with optional
/// transposition of `a` or `b` expressed through strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward convolution on raw slices; `out` is overwritten.
pub(crate) fn conv2d_same_into(input: &[f64], kernel: &[f64], g: ConvGeometry, cols: &mut Vec<f64>, out: &mut [f64]) {
    im2col(input, g, cols);
    gemm(g.pixels(), g.patch(), g.cout, cols, false, kernel, false, 0.0, out);
}

/// `grad_kernel += colsᵀ · grad_out`.
pub(crate) fn kernel_grad_accumulate(cols: &[f64], grad_out: &[f64], g: ConvGeometry, grad_kernel: &mut [f64]) {
    gemm(
        g.patch(),
        g.pixels(),
        g.cout,
        cols,
        true,
        grad_out,
        false,
        1.0,
        grad_kernel,
    );
}

/// `grad_input += col2im(grad_out · kernelᵀ)`.
pub(crate) fn input_grad_accumulate(
    grad_out: &[f64],
    kernel: &[f64],
    g: ConvGeometry,
    dcols: &mut Vec<f64>,
    grad_input: &mut [f64],
) {
    dcols.clear();
    dcols.resize(g.pixels() * g.patch(), 0.0);
    gemm(g.pixels(), g.cout, g.patch(), grad_out, false, kernel, true, 0.0, dcols);
    col2im_accumulate(dcols, g, grad_input);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Six nested loops, no im2col, no GEMM.
    fn conv_reference(input: &Tensor, kernel: &Tensor) -> Tensor {
        let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(&[h, w, cout]);
        for y in 0..h {
            for x in 0..w {
                for co in 0..cout {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            for ci in 0..cin {
                                let sy = y as isize + ky as isize - pad;
                                let sx = x as isize + kx as isize - pad;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += input.get(&[sy as usize, sx as usize, ci]) * kernel.get(&[ky, kx, ci, co]);
                                }
                            }
                        }
                    }
                    out.set(&[y, x, co], acc);
                }
            }
        }
        out
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::new(vec![2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::new(vec![2], vec![4.0, 5.0]).unwrap();
        assert_eq!(a.mul(&b).unwrap().data(), &[8.0, 15.0]);
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);

        let r = random(&[3, 4], 1);
        assert_eq!(r.mul(&Tensor::ones(&[3, 4])).unwrap(), r);
        assert_eq!(r.mul(&Tensor::zeros(&[3, 4])).unwrap().max_abs(), 0.0);
        assert_eq!(r.add(&Tensor::zeros(&[3, 4])).unwrap(), r);
        assert_eq!(r.add(&r.scale(-1.0)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let err = a.mul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn constructor_checks_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        let s = Tensor::new(vec![], vec![4.0]).unwrap();
        assert_eq!(s, Tensor::scalar(4.0));
        assert_eq!(Tensor::zeros(&[0, 5]).len(), 0);
    }

    #[test]
    fn activation_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.7310585786300049).abs() < 1e-12);
        for x in [-30.0, -3.3, -0.2, 0.7, 5.0, 25.0] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
            assert_eq!((-x).tanh(), -x.tanh());
        }
        assert_eq!(Tensor::scalar(0.0).tanh().data()[0], 0.0);
        assert!((1.0 - 40.0f64.tanh()).abs() < 1e-12);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
        assert!(!sigmoid(f64::MAX).is_nan() && !sigmoid(f64::MIN).is_nan());
    }

    #[test]
    fn conv_rejects_bad_kernels() {
        let x = Tensor::zeros(&[4, 4, 2]);
        assert!(matches!(
            x.conv2d_same(&Tensor::zeros(&[2, 2, 2, 1])),
            Err(Error::EvenKernel(2))
        ));
        assert!(matches!(
            x.conv2d_same(&Tensor::zeros(&[3, 3, 3, 1])),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn conv_zero_kernel_and_identity() {
        let x = random(&[5, 6, 3], 2);
        assert_eq!(x.conv2d_same(&Tensor::zeros(&[3, 3, 3, 4])).unwrap().max_abs(), 0.0);
        let mut id = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            id.set(&[0, 0, c, c], 1.0);
        }
        assert_eq!(x.conv2d_same(&id).unwrap(), x);
    }

    #[test]
    fn conv_matches_loop_reference() {
        let x = random(&[5, 5, 2], 3);
        let k = random(&[3, 3, 2, 3], 4);
        let fast = x.conv2d_same(&k).unwrap();
        let slow = conv_reference(&x, &k);
        assert_eq!(fast.shape(), &[5, 5, 3]);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let k5 = random(&[5, 5, 2, 2], 5);
        let fast = x.conv2d_same(&k5).unwrap();
        let slow = conv_reference(&x, &k5);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = random(&[4, 3, 2], 6);
        let k = random(&[3, 3, 2, 2], 7);
        let weights = random(&[4, 3, 2], 8);
        // loss = Σ weights ⊙ conv(x, k)
        let loss = |x: &Tensor, k: &Tensor| -> f64 {
            let y = x.conv2d_same(k).unwrap();
            y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
        };
        let (gx, gk) = x.conv2d_same_backward(&k, &weights).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            let fd = (loss(&p, &k) - loss(&m, &k)) / (2.0 * eps);
            assert!((fd - gx.data()[i]).abs() < 1e-8);
        }
        for i in 0..k.len() {
            let (mut p, mut m) = (k.clone(), k.clone());
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            let fd = (loss(&x, &p) - loss(&x, &m)) / (2.0 * eps);
            assert!((fd - gk.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn channel_concat_and_slice() {
        let a = random(&[2, 2, 3], 9);
        let b = random(&[2, 2, 1], 10);
        let ab = a.concat_channels(&b).unwrap();
        assert_eq!(ab.shape(), &[2, 2, 4]);
        assert_eq!(ab.slice_channels(0, 3).unwrap(), a);
        assert_eq!(ab.slice_channels(3, 4).unwrap(), b);
        assert!(ab.slice_channels(2, 5).is_err());
    }

    #[test]
    fn file_round_trip_and_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CLT1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 32);
        assert_eq!(Tensor::read_from(&mut buf.as_slice()).unwrap(), t);
        assert!(Tensor::read_from(&mut &buf[..30]).is_err());
    }

    #[test]
    fn load_names_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.clt");
        let mut buf = Vec::new();
        random(&[3, 3], 11).write_to(&mut buf).unwrap();
        std::fs::write(&path, &buf[..buf.len() - 5]).unwrap();
        let err = Tensor::load(&path).unwrap_err().to_string();
        assert!(err.contains("cut.clt"), "{err}");
    }

    proptest! {
        #[test]
        fn conv_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = random(&[4, 5, 2], seed);
            let y = random(&[4, 5, 2], seed + 10_000);
            let k = random(&[3, 3, 2, 3], seed + 20_000);
            let lhs = x.scale(a).add(&y.scale(b)).unwrap().conv2d_same(&k).unwrap();
            let rhs = x.conv2d_same(&k).unwrap().scale(a).add(&y.conv2d_same(&k).unwrap().scale(b)).unwrap();
            for (p, q) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((p - q).abs() < 1e-10);
            }
        }

        #[test]
        fn activations_stay_in_range(x in -30.0f64..30.0) {
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
            let t = x.tanh();
            prop_assert!(t.is_finite() && (-1.0..=1.0).contains(&t));
            if x.abs() < 18.0 {
                prop_assert!(t > -1.0 && t < 1.0);
            }
        }

        #[test]
        fn file_round_trip(shape in proptest::collection::vec(0usize..4, 0..4), seed in 0u64..100) {
            let t = random(&shape, seed);
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = Tensor::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn conv_is_deterministic() {
        let x = random(&[8, 8, 5], 12);
        let k = random(&[3, 3, 5, 7], 13);
        let a = x.conv2d_same(&k).unwrap();
        let b = x.conv2d_same(&k).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
