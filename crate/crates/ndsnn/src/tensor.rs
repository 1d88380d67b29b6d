//! Dense tensor kernels: matmul, 2-D convolution, k-selection, elementwise ops.
//!
//! Everything is f32, row-major, and deterministic. Performance is secondary
//! to correctness at the scales this crate runs at.

use crate::error::{Error, Result};

/// Shape-tagged dense array of f32 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Flat index into a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.shape[1] + j]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f32) -> Tensor {
        self.map(|x| c * x)
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "transpose2 needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }
}

/// Set of unique flat (row-major) positions into a tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    /// Builds a set from positions, sorting and rejecting duplicates.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Count("duplicate index in IndexSet".into()));
        }
        Ok(IndexSet { indices })
    }

    pub fn all(len: usize) -> Self {
        IndexSet {
            indices: (0..len).collect(),
        }
    }

    pub fn empty() -> Self {
        IndexSet { indices: vec![] }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Standard matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dims disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Cross-correlation of a [C,H,W] input with an [F,C,K,K] kernel bank,
/// zero-padded, written as direct loops.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if input.shape().len() != 3 || kernel.shape().len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d needs [C,H,W] input and [F,C,K,K] kernel, got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (f, kc, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kc != c_in {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input {c_in} vs kernel {kc}"
        )));
    }
    if kh != kw {
        return Err(Error::Dimension("conv2d kernel must be square".into()));
    }
    let k = kh;
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be positive".into()));
    }
    if k > h + 2 * padding || k > w + 2 * padding {
        return Err(Error::Config(format!(
            "kernel {k} exceeds padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    if (h + 2 * padding - k) % stride != 0 || (w + 2 * padding - k) % stride != 0 {
        return Err(Error::Config(format!(
            "conv2d output size not exact: input {h}x{w}, k={k}, stride={stride}, pad={padding}"
        )));
    }
    let h_out = (h + 2 * padding - k) / stride + 1;
    let w_out = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0f32; f * h_out * w_out];
    for fi in 0..f {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = 0.0f32;
                for ci in 0..c_in {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += input.data[(ci * h + iy as usize) * w + ix as usize]
                                * kernel.data[((fi * c_in + ci) * k + ky) * k + kx];
                        }
                    }
                }
                out[(fi * h_out + oy) * w_out + ox] = acc;
            }
        }
    }
    Ok(Tensor {
        shape: vec![f, h_out, w_out],
        data: out,
    })
}

fn k_select(
    t: &Tensor,
    k: usize,
    among: Option<&IndexSet>,
    largest: bool,
) -> Result<IndexSet> {
    let mut candidates: Vec<usize> = match among {
        Some(s) => {
            if let Some(&bad) = s.indices().iter().find(|&&i| i >= t.len()) {
                return Err(Error::Count(format!(
                    "candidate index {bad} out of range for tensor of {} elements",
                    t.len()
                )));
            }
            s.indices().to_vec()
        }
        None => (0..t.len()).collect(),
    };
    if k > candidates.len() {
        return Err(Error::Count(format!(
            "k={k} exceeds candidate count {}",
            candidates.len()
        )));
    }
    // Ties break toward the smaller flat index; candidates are already sorted
    // ascending, so a stable sort on magnitude alone preserves that.
    if largest {
        candidates.sort_by(|&a, &b| t.data[b].abs().partial_cmp(&t.data[a].abs()).unwrap());
    } else {
        candidates.sort_by(|&a, &b| t.data[a].abs().partial_cmp(&t.data[b].abs()).unwrap());
    }
    candidates.truncate(k);
    IndexSet::new(candidates)
}

/// Positions of the k largest-magnitude entries, ties to the lowest flat index.
pub fn top_k_abs(t: &Tensor, k: usize, among: Option<&IndexSet>) -> Result<IndexSet> {
    k_select(t, k, among, true)
}

/// Positions of the k smallest-magnitude entries, ties to the lowest flat index.
pub fn bottom_k_abs(t: &Tensor, k: usize, among: Option<&IndexSet>) -> Result<IndexSet> {
    k_select(t, k, among, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::zeros(vec![2, 3]);
        let b = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let c = matmul(&z, &b).unwrap();
        assert!(c.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn conv2d_scaling_kernel() {
        let input = Tensor::full(vec![1, 3, 3], 1.0);
        let kernel = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let out = conv2d(&input, &kernel, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn conv2d_hand_case() {
        let input = Tensor::new(vec![1, 3, 3], (1..=9).map(|x| x as f32).collect()).unwrap();
        let kernel = Tensor::full(vec![1, 1, 2, 2], 1.0);
        let out = conv2d(&input, &kernel, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv2d_zero_kernel_annihilates() {
        let input = Tensor::new(vec![1, 3, 3], (1..=9).map(|x| x as f32).collect()).unwrap();
        let kernel = Tensor::zeros(vec![2, 1, 2, 2]);
        let out = conv2d(&input, &kernel, 1, 0).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn conv2d_inexact_output_is_error() {
        let input = Tensor::zeros(vec![1, 5, 5]);
        let kernel = Tensor::zeros(vec![1, 1, 2, 2]);
        assert!(matches!(
            conv2d(&input, &kernel, 2, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn top_k_abs_examples() {
        let t = Tensor::new(vec![3], vec![3.0, -5.0, 1.0]).unwrap();
        assert_eq!(top_k_abs(&t, 1, None).unwrap().indices(), &[1]);

        let ties = Tensor::new(vec![3], vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!(top_k_abs(&ties, 2, None).unwrap().indices(), &[0, 1]);

        assert!(top_k_abs(&t, 0, None).unwrap().is_empty());
        assert!(top_k_abs(&t, 4, None).is_err());
    }

    #[test]
    fn bottom_k_abs_examples() {
        let t = Tensor::new(vec![3], vec![3.0, -0.1, 1.0]).unwrap();
        assert_eq!(bottom_k_abs(&t, 1, None).unwrap().indices(), &[1]);

        let among = IndexSet::new(vec![0, 2]).unwrap();
        assert_eq!(
            bottom_k_abs(&t, 2, Some(&among)).unwrap().indices(),
            &[0, 2]
        );

        let ties = Tensor::new(vec![2], vec![-1.0, 1.0]).unwrap();
        assert_eq!(bottom_k_abs(&ties, 1, None).unwrap().indices(), &[0]);
    }

    proptest! {
        #[test]
        fn topk_bottomk_partition(values in prop::collection::vec(-10.0f32..10.0, 1..40), k in 0usize..40) {
            let n = values.len();
            let k = k % (n + 1);
            let t = Tensor::new(vec![n], values).unwrap();
            let top = top_k_abs(&t, k, None).unwrap();
            let bottom = bottom_k_abs(&t, n - k, None).unwrap();
            let mut all: Vec<usize> = top.indices().iter().chain(bottom.indices()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn matmul_linearity(
            a in prop::collection::vec(-2.0f32..2.0, 6),
            b in prop::collection::vec(-2.0f32..2.0, 6),
            x in prop::collection::vec(-2.0f32..2.0, 6),
        ) {
            let a = Tensor::new(vec![2, 3], a).unwrap();
            let b = Tensor::new(vec![2, 3], b).unwrap();
            let x = Tensor::new(vec![3, 2], x).unwrap();
            let lhs = matmul(&a.add(&b).unwrap(), &x).unwrap();
            let rhs = matmul(&a, &x).unwrap().add(&matmul(&b, &x).unwrap()).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((l - r).abs() <= 1e-5);
            }
        }
    }
}
