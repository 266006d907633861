//! Per-device sample streams and the optional IDX loader.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Sample;
use crate::rng::{purpose, StreamId, StreamRng};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Gaussian class clusters with optional label flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub class_count: usize,
    pub feature_dim: usize,
    pub class_means: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub label_noise_prob: f64,
}

impl SyntheticTaskSpec {
    /// Unit-norm class means drawn from the task stream, rejected until every
    /// pair is at least `min_separation` apart.
    pub fn generate(
        seed: u64,
        class_count: usize,
        feature_dim: usize,
        noise_std: f64,
        label_noise_prob: f64,
        min_separation: f64,
    ) -> Result<Self> {
        if class_count < 2 || feature_dim == 0 {
            return Err(Error::invalid("need at least 2 classes and 1 feature"));
        }
        let mut rng = StreamId::new(seed, purpose::TASK).rng();
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(class_count);
        let mut attempts = 0usize;
        while means.len() < class_count {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::invalid(format!(
                    "cannot place {class_count} unit means {min_separation} apart in {feature_dim} dimensions"
                )));
            }
            let mut v: Vec<f64> = (0..feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = crate::batch::l2_norm(&v);
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            if means.iter().all(|m| distance(m, &v) >= min_separation) {
                means.push(v);
            }
        }
        let spec = Self {
            class_count,
            feature_dim,
            class_means: means,
            noise_std,
            label_noise_prob,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::invalid("class_count must be at least 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if self.class_means.len() != self.class_count
            || self.class_means.iter().any(|m| m.len() != self.feature_dim)
        {
            return Err(Error::invalid("class_means must be class_count x feature_dim"));
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid("noise_std must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_noise_prob) {
            return Err(Error::invalid("label_noise_prob must lie in [0, 1)"));
        }
        for i in 0..self.class_count {
            for j in i + 1..self.class_count {
                if self.class_means[i] == self.class_means[j] {
                    return Err(Error::invalid(format!("class means {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn draw_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let class = rng.random_range(0..self.class_count);
        let features = self.class_means[class]
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.noise_std * z
            })
            .collect();
        // The flip is decided after the features so the feature draws do not
        // depend on the label-noise setting.
        let mut label = class;
        if self.label_noise_prob > 0.0 && rng.random::<f64>() < self.label_noise_prob {
            let other = rng.random_range(0..self.class_count - 1);
            label = if other >= class { other + 1 } else { other };
        }
        Sample::new(features, label)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Where a device's samples come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fresh i.i.d. draws from the generative task.
    Synthetic(Arc<SyntheticTaskSpec>),
    /// Uniform draws with replacement from a fixed finite set.
    Pool(Arc<Vec<Sample>>),
    /// Samples handed out in file order; running past the end is an error.
    Sequential(Arc<Vec<Sample>>),
}

/// One device's acquisitions for one round.
#[derive(Debug)]
pub struct SampleStream {
    source: DataSource,
    id: StreamId,
    rng: StreamRng,
    cursor: usize,
}

impl SampleStream {
    pub fn new(source: DataSource, id: StreamId) -> Self {
        Self {
            rng: id.rng(),
            source,
            id,
            cursor: 0,
        }
    }

    /// The training stream of `device` in `round` of `repeat`.
    pub fn training(source: DataSource, seed: u64, repeat: u64, device: u64, round: u64) -> Self {
        Self::new(
            source,
            StreamId::new(seed, purpose::DATA)
                .repeat(repeat)
                .device(device)
                .round(round),
        )
    }

    /// Continue a sequential source from `cursor`.
    pub fn with_cursor(mut self, cursor: usize) -> Self {
        self.cursor = cursor;
        self
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn draw(&mut self, n: usize) -> Result<Vec<Sample>> {
        if n == 0 {
            return Err(Error::invalid("draw size must be at least 1"));
        }
        (0..n).map(|_| self.draw_one()).collect()
    }

    pub fn draw_one(&mut self) -> Result<Sample> {
        let sample = match &self.source {
            DataSource::Synthetic(spec) => spec.draw_one(&mut self.rng),
            DataSource::Pool(pool) => {
                if pool.is_empty() {
                    return Err(Error::Exhausted { drawn: self.cursor });
                }
                pool[self.rng.random_range(0..pool.len())].clone()
            }
            DataSource::Sequential(items) => match items.get(self.cursor) {
                Some(s) => s.clone(),
                None => return Err(Error::Exhausted { drawn: self.cursor }),
            },
        };
        self.cursor += 1;
        Ok(sample)
    }
}

/// A fixed evaluation set from the reserved holdout stream.
pub fn holdout(spec: &SyntheticTaskSpec, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = StreamId::new(seed, purpose::HOLDOUT).rng();
    (0..n).map(|_| spec.draw_one(&mut rng)).collect()
}

/// A finite per-device training pool drawn from its own stream.
pub fn device_pool(spec: &SyntheticTaskSpec, n: usize, seed: u64, repeat: u64, device: u64) -> Vec<Sample> {
    let mut rng = StreamId::new(seed, purpose::POOL).repeat(repeat).device(device).rng();
    (0..n).map(|_| spec.draw_one(&mut rng)).collect()
}

/// Read an IDX image file (`0x00000803`) and label file (`0x00000801`).
/// Pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels).map_err(|(which, reason)| Error::Idx {
        path: if which == IdxPart::Images {
            images_path.to_path_buf()
        } else {
            labels_path.to_path_buf()
        },
        reason,
    })
}

#[derive(Debug, PartialEq, Eq)]
enum IdxPart {
    Images,
    Labels,
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn parse_idx(images: &[u8], labels: &[u8]) -> std::result::Result<Vec<Sample>, (IdxPart, String)> {
    use IdxPart::*;
    let truncated = |part| (part, "truncated header".to_string());
    let magic = be_u32(images, 0).ok_or_else(|| truncated(Images))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err((Images, format!("bad magic {magic:#010x}")));
    }
    let count = be_u32(images, 4).ok_or_else(|| truncated(Images))? as usize;
    let rows = be_u32(images, 8).ok_or_else(|| truncated(Images))? as usize;
    let cols = be_u32(images, 12).ok_or_else(|| truncated(Images))? as usize;
    let pixels = rows * cols;
    let payload = &images[16..];
    if payload.len() != count * pixels {
        return Err((
            Images,
            format!("header declares {count} images of {pixels} pixels but payload has {} bytes", payload.len()),
        ));
    }

    let magic = be_u32(labels, 0).ok_or_else(|| truncated(Labels))?;
    if magic != IDX_LABELS_MAGIC {
        return Err((Labels, format!("bad magic {magic:#010x}")));
    }
    let label_count = be_u32(labels, 4).ok_or_else(|| truncated(Labels))? as usize;
    let label_payload = &labels[8..];
    if label_payload.len() != label_count {
        return Err((
            Labels,
            format!("header declares {label_count} labels but payload has {} bytes", label_payload.len()),
        ));
    }
    if label_count != count {
        return Err((Labels, format!("{label_count} labels for {count} images")));
    }

    Ok(payload
        .chunks_exact(pixels.max(1))
        .take(count)
        .zip(label_payload)
        .map(|(px, &label)| Sample::new(px.iter().map(|&p| p as f64 / 255.0).collect(), label as usize))
        .collect())
}
