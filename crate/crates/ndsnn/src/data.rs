//! Dataset ingestion and spike encoding: IDX binary loading, a synthetic
//! block-pattern generator, rate/direct input encoding, shuffled batching.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled image set; values in [0,1], shape [n, C, H, W].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// Flattened feature vector of sample i.
    pub fn sample(&self, i: usize) -> &[f32] {
        let f = self.features();
        &self.images.data()[i * f..(i + 1) * f]
    }

    /// Splits off the last `fraction` of samples by index (pre-shuffle).
    pub fn split_tail(&self, fraction: f64) -> (Dataset, Dataset) {
        let n = self.len();
        let tail = ((n as f64 * fraction).round() as usize).min(n);
        let head = n - tail;
        let f = self.features();
        let mut shape_head = self.images.shape().to_vec();
        shape_head[0] = head;
        let mut shape_tail = self.images.shape().to_vec();
        shape_tail[0] = tail;
        let train = Dataset {
            images: Tensor::new(shape_head, self.images.data()[..head * f].to_vec()).unwrap(),
            labels: self.labels[..head].to_vec(),
            class_count: self.class_count,
        };
        let val = Dataset {
            images: Tensor::new(shape_tail, self.images.data()[head * f..].to_vec()).unwrap(),
            labels: self.labels[head..].to_vec(),
            class_count: self.class_count,
        };
        (train, val)
    }
}

fn read_u32_at(r: &mut impl Read, what: &str, offset: u64) -> Result<u32> {
    r.read_u32::<BigEndian>().map_err(|_| Error::Format {
        message: format!("truncated {what}"),
        offset,
    })
}

/// Loads an IDX image/label file pair. Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = BufReader::new(File::open(images_path)?);
    let magic = read_u32_at(&mut img, "image magic", 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
            offset: 0,
        });
    }
    let n = read_u32_at(&mut img, "image count", 4)? as usize;
    let h = read_u32_at(&mut img, "image rows", 8)? as usize;
    let w = read_u32_at(&mut img, "image cols", 12)? as usize;
    let mut pixels = vec![0u8; n * h * w];
    img.read_exact(&mut pixels).map_err(|_| Error::Format {
        message: format!("truncated pixel data, expected {} bytes", n * h * w),
        offset: 16,
    })?;

    let mut lab = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_at(&mut lab, "label magic", 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
            offset: 0,
        });
    }
    let n_labels = read_u32_at(&mut lab, "label count", 4)? as usize;
    if n_labels != n {
        return Err(Error::Format {
            message: format!("count mismatch: {n} images vs {n_labels} labels"),
            offset: 4,
        });
    }
    let mut label_bytes = vec![0u8; n];
    lab.read_exact(&mut label_bytes).map_err(|_| Error::Format {
        message: format!("truncated label data, expected {n} bytes"),
        offset: 8,
    })?;

    let images = Tensor::new(
        vec![n, 1, h, w],
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
    )?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().copied().max().map_or(1, |m| m + 1);
    Ok(Dataset {
        images,
        labels,
        class_count,
    })
}

/// Deterministic synthetic corpus: class c's prototype lights up its own
/// feature block at intensity 1; each sample flips each feature with
/// probability `noise`.
pub fn synth_patterns(
    classes: usize,
    features: usize,
    samples_per_class: usize,
    noise: f64,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if classes == 0 || classes > features {
        return Err(Error::Config(format!(
            "need 1 <= classes <= features, got {classes} classes, {features} features"
        )));
    }
    let block = features / classes;
    let n = classes * samples_per_class;
    let mut data = Vec::with_capacity(n * features);
    let mut labels = Vec::with_capacity(n);
    // Classes are interleaved so any contiguous split stays stratified.
    for _ in 0..samples_per_class {
        for c in 0..classes {
            let lo = c * block;
            let hi = if c == classes - 1 { features } else { lo + block };
            for f in 0..features {
                let proto = if f >= lo && f < hi { 1.0 } else { 0.0 };
                let v = if rng.gen_bool(noise) { 1.0 - proto } else { proto };
                data.push(v);
            }
            labels.push(c);
        }
    }
    Ok(Dataset {
        images: Tensor::new(vec![n, 1, 1, features], data)?,
        labels,
        class_count: classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Bernoulli(pixel) spikes per timestep.
    Rate,
    /// Pixel repeated as constant input current each timestep.
    Direct,
}

/// A batch encoded over T timesteps: [T, batch, features].
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub spikes_or_currents: Tensor,
    pub labels: Vec<usize>,
}

/// Encodes flattened images (rows of `features` values) over T timesteps.
pub fn encode(
    images: &[&[f32]],
    labels: &[usize],
    mode: Encoding,
    timesteps: usize,
    rng: &mut impl Rng,
) -> Result<EncodedBatch> {
    if timesteps == 0 {
        return Err(Error::Config("timesteps must be at least 1".into()));
    }
    let batch = images.len();
    let features = images.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(timesteps * batch * features);
    for _t in 0..timesteps {
        for img in images {
            match mode {
                Encoding::Direct => data.extend_from_slice(img),
                Encoding::Rate => {
                    for &p in *img {
                        data.push(if rng.gen_bool(p.clamp(0.0, 1.0) as f64) {
                            1.0
                        } else {
                            0.0
                        });
                    }
                }
            }
        }
    }
    Ok(EncodedBatch {
        spikes_or_currents: Tensor::new(vec![timesteps, batch, features], data)?,
        labels: labels.to_vec(),
    })
}

/// Shuffled sample-index batches, deterministic per RNG state.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}
