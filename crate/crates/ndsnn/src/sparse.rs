//! Mask lifecycle: ERK layer-wise density allocation, masked weight storage,
//! CSR export (in memory and on disk), and the memory-footprint estimator.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Round half up; the convention for all count arithmetic in this crate.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Linear { n_in: usize, n_out: usize },
    Conv { filters: usize, channels: usize, kernel: usize },
}

impl LayerKind {
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerKind::Linear { n_in, n_out } => n_in * n_out,
            LayerKind::Conv {
                filters,
                channels,
                kernel,
            } => filters * channels * kernel * kernel,
        }
    }

    /// Dense tensor shape: [n_out, n_in] for linear, [F, C, K, K] for conv.
    pub fn tensor_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Linear { n_in, n_out } => vec![n_out, n_in],
            LayerKind::Conv {
                filters,
                channels,
                kernel,
            } => vec![filters, channels, kernel, kernel],
        }
    }

    /// 2-D matrix view used for CSR: linear as-is, conv as [F, C*K*K].
    pub fn matrix_dims(&self) -> (usize, usize) {
        match *self {
            LayerKind::Linear { n_in, n_out } => (n_out, n_in),
            LayerKind::Conv {
                filters,
                channels,
                kernel,
            } => (filters, channels * kernel * kernel),
        }
    }

    /// ERK proportionality factor for this layer's density.
    pub fn erk_scale(&self) -> f64 {
        match *self {
            LayerKind::Linear { n_in, n_out } => {
                1.0 - (n_in + n_out) as f64 / (n_in * n_out) as f64
            }
            LayerKind::Conv {
                filters,
                channels,
                kernel,
            } => {
                let num = (channels + filters + kernel + kernel) as f64;
                let den = (channels * filters * kernel * kernel) as f64;
                1.0 - num / den
            }
        }
    }
}

/// A layer's dense weights plus a same-shape {0,1} mask.
#[derive(Debug, Clone)]
pub struct MaskedLayer {
    weights: Tensor,
    mask: Tensor,
    kind: LayerKind,
}

impl MaskedLayer {
    pub fn new(kind: LayerKind, weights: Tensor, mask: Tensor) -> Result<Self> {
        let shape = kind.tensor_shape();
        if weights.shape() != shape.as_slice() || mask.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "layer {:?} expects shape {:?}, got weights {:?} mask {:?}",
                kind,
                shape,
                weights.shape(),
                mask.shape()
            )));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Config("mask values must be 0 or 1".into()));
        }
        let mut layer = MaskedLayer {
            weights,
            mask,
            kind,
        };
        layer.reapply_mask();
        Ok(layer)
    }

    /// Dense layer with uniform Glorot-style init.
    pub fn init_dense(kind: LayerKind, rng: &mut impl Rng) -> Self {
        let shape = kind.tensor_shape();
        let (rows, cols) = kind.matrix_dims();
        let bound = (6.0 / (rows + cols) as f64).sqrt() as f32;
        let n = kind.weight_count();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        MaskedLayer {
            weights: Tensor::new(shape.clone(), data).unwrap(),
            mask: Tensor::full(shape, 1.0),
            kind,
        }
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn weight_count(&self) -> usize {
        self.kind.weight_count()
    }

    pub fn active_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m == 1.0).count()
    }

    pub fn density(&self) -> f64 {
        self.active_count() as f64 / self.weight_count() as f64
    }

    /// W ⊙ M; identical to `weights` because the mask is enforced on mutation.
    pub fn effective_weights(&self) -> Tensor {
        self.weights.hadamard(&self.mask).unwrap()
    }

    pub fn set_mask(&mut self, mask: Tensor) -> Result<()> {
        if mask.shape() != self.mask.shape() {
            return Err(Error::Dimension("mask shape mismatch".into()));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Config("mask values must be 0 or 1".into()));
        }
        self.mask = mask;
        self.reapply_mask();
        Ok(())
    }

    /// Deactivate a position: mask bit 0 and weight zeroed.
    pub fn deactivate(&mut self, flat: usize) {
        self.mask.data_mut()[flat] = 0.0;
        self.weights.data_mut()[flat] = 0.0;
    }

    /// Activate a position with the given initial value.
    pub fn activate(&mut self, flat: usize, value: f32) {
        self.mask.data_mut()[flat] = 1.0;
        self.weights.data_mut()[flat] = value;
    }

    /// Overwrite active weights; inactive positions stay pinned at zero.
    pub fn update_weights(&mut self, new_weights: Tensor) -> Result<()> {
        if new_weights.shape() != self.weights.shape() {
            return Err(Error::Dimension("weight shape mismatch".into()));
        }
        self.weights = new_weights;
        self.reapply_mask();
        Ok(())
    }

    pub fn weights_mut_masked(&mut self) -> &mut [f32] {
        self.weights.data_mut()
    }

    pub fn reapply_mask(&mut self) {
        let mask = self.mask.data();
        for (w, &m) in self.weights.data_mut().iter_mut().zip(mask) {
            if m == 0.0 {
                *w = 0.0;
            }
        }
    }
}

/// Per-layer densities solving the ERK proportionality for a global sparsity.
#[derive(Debug, Clone)]
pub struct ErkAllocation {
    pub per_layer_density: Vec<f64>,
    pub global_sparsity: f64,
}

impl ErkAllocation {
    pub fn per_layer_sparsity(&self) -> Vec<f64> {
        self.per_layer_density.iter().map(|d| 1.0 - d).collect()
    }
}

/// Distributes a global sparsity across layers proportionally to the ERK
/// scale factors, capping any layer whose implied density exceeds 1 and
/// re-solving the multiplier over the rest until a fixed point.
pub fn erk_allocate(layers: &[LayerKind], global_sparsity: f64) -> Result<ErkAllocation> {
    if layers.is_empty() {
        return Err(Error::Config("erk_allocate needs at least one layer".into()));
    }
    if !(0.0..1.0).contains(&global_sparsity) {
        return Err(Error::Config(format!(
            "global_sparsity must be in [0,1), got {global_sparsity}"
        )));
    }
    let counts: Vec<f64> = layers.iter().map(|k| k.weight_count() as f64).collect();
    let scales: Vec<f64> = layers.iter().map(|k| k.erk_scale()).collect();
    let total: f64 = counts.iter().sum();
    let target_active = (1.0 - global_sparsity) * total;

    let mut capped = vec![false; layers.len()];
    loop {
        let capped_active: f64 = counts
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| c)
            .map(|(n, _)| n)
            .sum();
        let free_weight: f64 = counts
            .iter()
            .zip(&scales)
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|((n, s), _)| n * s)
            .sum();
        if free_weight <= 0.0 {
            if capped_active >= target_active {
                break;
            }
            return Err(Error::Config(
                "ERK allocation infeasible: all layers capped below target".into(),
            ));
        }
        let multiplier = (target_active - capped_active) / free_weight;
        let mut newly_capped = false;
        for l in 0..layers.len() {
            if !capped[l] && multiplier * scales[l] > 1.0 {
                capped[l] = true;
                newly_capped = true;
            }
        }
        if !newly_capped {
            let densities: Vec<f64> = (0..layers.len())
                .map(|l| if capped[l] { 1.0 } else { multiplier * scales[l] })
                .collect();
            return Ok(ErkAllocation {
                per_layer_density: densities,
                global_sparsity,
            });
        }
    }
    Ok(ErkAllocation {
        per_layer_density: vec![1.0; layers.len()],
        global_sparsity,
    })
}

/// One mask per layer with exactly round(density * N_l) ones, positions
/// sampled uniformly without replacement. Deterministic per RNG state.
pub fn random_masks(
    alloc: &ErkAllocation,
    layers: &[LayerKind],
    rng: &mut impl Rng,
) -> Result<Vec<Tensor>> {
    if alloc.per_layer_density.len() != layers.len() {
        return Err(Error::Config("allocation/layer count mismatch".into()));
    }
    let mut masks = Vec::with_capacity(layers.len());
    for (kind, &density) in layers.iter().zip(&alloc.per_layer_density) {
        let n = kind.weight_count();
        let k = round_half_up(density * n as f64).min(n);
        let mut mask = Tensor::zeros(kind.tensor_shape());
        for idx in rand::seq::index::sample(rng, n, k) {
            mask.data_mut()[idx] = 1.0;
        }
        masks.push(mask);
    }
    Ok(masks)
}

/// Compressed sparse row form of a masked layer's 2-D matrix view.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<u64>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f32>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Format { message: m, offset: 0 };
        if self.row_ptr.len() != self.rows + 1 {
            return Err(bad(format!(
                "row_ptr length {} != rows+1 {}",
                self.row_ptr.len(),
                self.rows + 1
            )));
        }
        if self.row_ptr.first() != Some(&0) {
            return Err(bad("row_ptr[0] must be 0".into()));
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(bad("row_ptr not nondecreasing".into()));
        }
        let nnz = *self.row_ptr.last().unwrap() as usize;
        if nnz != self.col_idx.len() || nnz != self.values.len() {
            return Err(bad(format!(
                "row_ptr[rows]={} disagrees with col_idx {} / values {}",
                nnz,
                self.col_idx.len(),
                self.values.len()
            )));
        }
        for r in 0..self.rows {
            let (s, e) = (self.row_ptr[r] as usize, self.row_ptr[r + 1] as usize);
            let row = &self.col_idx[s..e];
            if row.iter().any(|&c| c as usize >= self.cols) {
                return Err(bad(format!("column index out of range in row {r}")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Converts a masked layer to CSR. Entries follow the mask's support, so
/// active weights that happen to be zero are kept.
pub fn to_csr(layer: &MaskedLayer) -> CsrMatrix {
    let (rows, cols) = layer.kind().matrix_dims();
    let w = layer.weights().data();
    let m = layer.mask().data();
    let mut row_ptr = Vec::with_capacity(rows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0u64);
    for r in 0..rows {
        for c in 0..cols {
            let flat = r * cols + c;
            if m[flat] == 1.0 {
                col_idx.push(c as u32);
                values.push(w[flat]);
            }
        }
        row_ptr.push(col_idx.len() as u64);
    }
    CsrMatrix {
        rows,
        cols,
        row_ptr,
        col_idx,
        values,
    }
}

/// Rebuilds a masked layer from CSR; the mask is the CSR support.
pub fn from_csr(m: &CsrMatrix, kind: LayerKind) -> Result<MaskedLayer> {
    m.validate()?;
    let (rows, cols) = kind.matrix_dims();
    if m.rows != rows || m.cols != cols {
        return Err(Error::Format {
            message: format!(
                "CSR is {}x{} but layer {:?} expects {}x{}",
                m.rows, m.cols, kind, rows, cols
            ),
            offset: 0,
        });
    }
    let mut weights = Tensor::zeros(kind.tensor_shape());
    let mut mask = Tensor::zeros(kind.tensor_shape());
    for r in 0..rows {
        let (s, e) = (m.row_ptr[r] as usize, m.row_ptr[r + 1] as usize);
        for i in s..e {
            let flat = r * cols + m.col_idx[i] as usize;
            weights.data_mut()[flat] = m.values[i];
            mask.data_mut()[flat] = 1.0;
        }
    }
    MaskedLayer::new(kind, weights, mask)
}

const CSR_MAGIC: &[u8; 4] = b"NDSN";

/// Writes the binary CSR format: magic "NDSN", then little-endian
/// u32 rows, u32 cols, u64 nnz, row_ptr (u64), col_idx (u32), values (f32).
pub fn write_csr(m: &CsrMatrix, w: &mut impl Write) -> Result<()> {
    m.validate()?;
    w.write_all(CSR_MAGIC)?;
    w.write_u32::<LittleEndian>(m.rows as u32)?;
    w.write_u32::<LittleEndian>(m.cols as u32)?;
    w.write_u64::<LittleEndian>(m.nnz() as u64)?;
    for &p in &m.row_ptr {
        w.write_u64::<LittleEndian>(p)?;
    }
    for &c in &m.col_idx {
        w.write_u32::<LittleEndian>(c)?;
    }
    for &v in &m.values {
        w.write_u32::<LittleEndian>(v.to_bits())?;
    }
    Ok(())
}

pub fn read_csr(r: &mut impl Read) -> Result<CsrMatrix> {
    let mut offset = 0u64;
    let fail = |message: String, offset: u64| Error::Format { message, offset };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fail("truncated magic".into(), offset))?;
    if &magic != CSR_MAGIC {
        return Err(fail(format!("bad magic {magic:?}, expected \"NDSN\""), 0));
    }
    offset += 4;
    let rows = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fail("truncated rows".into(), offset))? as usize;
    offset += 4;
    let cols = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fail("truncated cols".into(), offset))? as usize;
    offset += 4;
    let nnz = r
        .read_u64::<LittleEndian>()
        .map_err(|_| fail("truncated nnz".into(), offset))? as usize;
    offset += 8;

    let mut row_ptr = Vec::with_capacity(rows + 1);
    for _ in 0..=rows {
        row_ptr.push(
            r.read_u64::<LittleEndian>()
                .map_err(|_| fail("truncated row_ptr".into(), offset))?,
        );
        offset += 8;
    }
    let mut col_idx = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        col_idx.push(
            r.read_u32::<LittleEndian>()
                .map_err(|_| fail("truncated col_idx".into(), offset))?,
        );
        offset += 4;
    }
    let mut values = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        values.push(f32::from_bits(
            r.read_u32::<LittleEndian>()
                .map_err(|_| fail("truncated values".into(), offset))?,
        ));
        offset += 4;
    }
    let m = CsrMatrix {
        rows,
        cols,
        row_ptr,
        col_idx,
        values,
    };
    m.validate()?;
    Ok(m)
}

/// Inputs to the memory-footprint estimator.
#[derive(Debug, Clone, Copy)]
pub struct FootprintParams {
    pub bits_per_weight: f64,
    pub bits_per_index: f64,
    pub timesteps: f64,
    pub total_weights: f64,
    pub sparsity: f64,
}

/// Approximate training memory footprint in bits:
/// (1-θ) * ((1+t) * N * b_w + N * b_idx).
pub fn memory_footprint_bits(p: &FootprintParams) -> f64 {
    // Computed as total - θ·total rather than (1-θ)·total so that round
    // sparsities like 0.95 yield exact results for exact inputs.
    let total = (1.0 + p.timesteps) * p.total_weights * p.bits_per_weight
        + p.total_weights * p.bits_per_index;
    total - p.sparsity * total
}

/// Exact variant: adds the per-layer row-pointer overhead
/// sum_l (F_l + 1) * b_idx on top of the approximate form.
pub fn memory_footprint_bits_exact(p: &FootprintParams, layers: &[LayerKind]) -> f64 {
    let row_ptr_bits: f64 = layers
        .iter()
        .map(|k| (k.matrix_dims().0 + 1) as f64 * p.bits_per_index)
        .sum();
    memory_footprint_bits(p) + row_ptr_bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn erk_scale_conv_example() {
        let k = LayerKind::Conv {
            filters: 16,
            channels: 3,
            kernel: 3,
        };
        assert!((k.erk_scale() - (1.0 - 25.0 / 432.0)).abs() < 1e-12);
    }

    #[test]
    fn erk_scale_linear_example() {
        let k = LayerKind::Linear {
            n_in: 100,
            n_out: 10,
        };
        assert!((k.erk_scale() - 0.89).abs() < 1e-12);
    }

    #[test]
    fn erk_zero_sparsity_is_all_dense() {
        let layers = [
            LayerKind::Linear { n_in: 10, n_out: 20 },
            LayerKind::Conv { filters: 4, channels: 2, kernel: 3 },
        ];
        let alloc = erk_allocate(&layers, 0.0).unwrap();
        for d in &alloc.per_layer_density {
            assert!((d - 1.0).abs() < 1e-9, "density {d}");
        }
    }

    #[test]
    fn erk_totals_within_rounding() {
        let layers = [
            LayerKind::Conv { filters: 16, channels: 3, kernel: 3 },
            LayerKind::Conv { filters: 32, channels: 16, kernel: 3 },
            LayerKind::Linear { n_in: 32, n_out: 10 },
        ];
        for &theta in &[0.5, 0.8, 0.9, 0.95] {
            let alloc = erk_allocate(&layers, theta).unwrap();
            let total: f64 = layers.iter().map(|k| k.weight_count() as f64).sum();
            let active: f64 = layers
                .iter()
                .zip(&alloc.per_layer_density)
                .map(|(k, d)| d * k.weight_count() as f64)
                .sum();
            assert!(
                (active - (1.0 - theta) * total).abs() <= layers.len() as f64,
                "theta={theta}: active={active} target={}",
                (1.0 - theta) * total
            );
            for d in &alloc.per_layer_density {
                assert!(*d > 0.0 && *d <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn erk_monotone_in_sparsity() {
        let layers = [
            LayerKind::Conv { filters: 8, channels: 1, kernel: 3 },
            LayerKind::Linear { n_in: 72, n_out: 10 },
        ];
        let lo = erk_allocate(&layers, 0.5).unwrap();
        let hi = erk_allocate(&layers, 0.9).unwrap();
        for (a, b) in lo.per_layer_density.iter().zip(&hi.per_layer_density) {
            assert!(a + 1e-12 >= *b);
        }
    }

    #[test]
    fn random_masks_counts_and_determinism() {
        let layers = [LayerKind::Linear { n_in: 5, n_out: 2 }];
        let alloc = ErkAllocation {
            per_layer_density: vec![0.5],
            global_sparsity: 0.5,
        };
        let m1 = random_masks(&alloc, &layers, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let m2 = random_masks(&alloc, &layers, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(m1[0].data().iter().filter(|&&x| x == 1.0).count(), 5);
        assert_eq!(m1, m2);

        let dense = ErkAllocation {
            per_layer_density: vec![1.0],
            global_sparsity: 0.0,
        };
        let m = random_masks(&dense, &layers, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert!(m[0].data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn csr_hand_example() {
        let kind = LayerKind::Linear { n_in: 3, n_out: 2 };
        let weights = Tensor::new(vec![2, 3], vec![1.0, 0.0, 2.0, 0.0, 0.0, 3.0]).unwrap();
        let mask = Tensor::new(vec![2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let layer = MaskedLayer::new(kind, weights, mask).unwrap();
        let csr = to_csr(&layer);
        assert_eq!(csr.row_ptr, vec![0, 2, 3]);
        assert_eq!(csr.col_idx, vec![0, 2, 2]);
        assert_eq!(csr.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn csr_all_zero_and_one_by_one() {
        let kind = LayerKind::Linear { n_in: 3, n_out: 2 };
        let layer = MaskedLayer::new(kind, Tensor::zeros(vec![2, 3]), Tensor::zeros(vec![2, 3]))
            .unwrap();
        let csr = to_csr(&layer);
        assert_eq!(csr.row_ptr, vec![0, 0, 0]);
        assert!(csr.col_idx.is_empty() && csr.values.is_empty());

        let kind1 = LayerKind::Linear { n_in: 1, n_out: 1 };
        let layer1 = MaskedLayer::new(
            kind1,
            Tensor::new(vec![1, 1], vec![7.0]).unwrap(),
            Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
        )
        .unwrap();
        let csr1 = to_csr(&layer1);
        assert_eq!(csr1.row_ptr, vec![0, 1]);
        assert_eq!(csr1.col_idx, vec![0]);
        assert_eq!(csr1.values, vec![7.0]);
    }

    #[test]
    fn csr_malformed_is_rejected() {
        let m = CsrMatrix {
            rows: 2,
            cols: 3,
            row_ptr: vec![0, 2, 1], // decreasing
            col_idx: vec![0],
            values: vec![1.0],
        };
        assert!(matches!(m.validate(), Err(Error::Format { .. })));
    }

    #[test]
    fn csr_file_bad_magic() {
        let bytes = b"XXXX\0\0\0\0";
        let err = read_csr(&mut &bytes[..]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn footprint_examples() {
        let p = FootprintParams {
            bits_per_weight: 32.0,
            bits_per_index: 32.0,
            timesteps: 5.0,
            total_weights: 1e6,
            sparsity: 0.95,
        };
        assert_eq!(memory_footprint_bits(&p), 0.05 * (6e6 * 32.0 + 1e6 * 32.0));
        assert_eq!(memory_footprint_bits(&p), 1.12e7);

        let dense = FootprintParams { sparsity: 0.0, ..p };
        assert_eq!(memory_footprint_bits(&dense), 2.24e8);
        assert_eq!(
            memory_footprint_bits(&dense) / memory_footprint_bits(&p),
            20.0
        );

        let full = FootprintParams { sparsity: 1.0, ..p };
        assert_eq!(memory_footprint_bits(&full), 0.0);
    }

    #[test]
    fn footprint_exact_adds_row_pointers() {
        let p = FootprintParams {
            bits_per_weight: 32.0,
            bits_per_index: 32.0,
            timesteps: 5.0,
            total_weights: 100.0,
            sparsity: 0.5,
        };
        let layers = [LayerKind::Conv { filters: 4, channels: 5, kernel: 1 },
                      LayerKind::Linear { n_in: 16, n_out: 5 }];
        let extra = ((4 + 1) + (5 + 1)) as f64 * 32.0;
        assert_eq!(
            memory_footprint_bits_exact(&p, &layers),
            memory_footprint_bits(&p) + extra
        );
    }

    proptest! {
        #[test]
        fn csr_roundtrip_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in 0u64..1000,
        ) {
            let kind = LayerKind::Linear { n_in: cols, n_out: rows };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rows * cols;
            let weights: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mask: Vec<f32> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let layer = MaskedLayer::new(
                kind,
                Tensor::new(vec![rows, cols], weights).unwrap(),
                Tensor::new(vec![rows, cols], mask).unwrap(),
            ).unwrap();

            let csr = to_csr(&layer);
            let mut buf = Vec::new();
            write_csr(&csr, &mut buf).unwrap();
            let back = read_csr(&mut &buf[..]).unwrap();
            prop_assert_eq!(&back, &csr);

            let layer2 = from_csr(&back, kind).unwrap();
            let effective = layer.effective_weights();
            prop_assert_eq!(layer2.weights().data(), effective.data());
            prop_assert_eq!(layer2.mask().data(), layer.mask().data());
            prop_assert_eq!(layer2.active_count(), layer.active_count());
        }

        #[test]
        fn footprint_decreasing_in_sparsity(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            let base = FootprintParams {
                bits_per_weight: 32.0, bits_per_index: 16.0,
                timesteps: 5.0, total_weights: 1e4, sparsity: lo,
            };
            let more = FootprintParams { sparsity: hi, ..base };
            prop_assert!(memory_footprint_bits(&more) < memory_footprint_bits(&base));
        }
    }
}
