use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `[T, H, W, D]` reflectance stack with normalized acquisition times.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    frames: Tensor,
    timestamps: Vec<f64>,
}

impl ImageSequence {
    pub fn new(frames: Tensor, timestamps: Vec<f64>) -> Result<Self> {
        let &[t, _, _, _] = frames.shape() else {
            return Err(Error::Rank {
                op: "ImageSequence",
                expected: 4,
                shape: frames.shape().to_vec(),
            });
        };
        if timestamps.len() != t {
            return Err(Error::ShapeMismatch {
                op: "ImageSequence timestamps",
                lhs: vec![t],
                rhs: vec![timestamps.len()],
            });
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite {
                what: "reflectances",
                step: None,
            });
        }
        Ok(Self { frames, timestamps })
    }

    /// Evenly spaced timestamps `t / T` in `[0, 1)`.
    pub fn even_timestamps(t: usize) -> Vec<f64> {
        (0..t).map(|i| i as f64 / t as f64).collect()
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn bands(&self) -> usize {
        self.frames.shape()[3]
    }

    fn frame_len(&self) -> usize {
        self.height() * self.width() * self.bands()
    }

    /// Raw `[H, W, D]` data of frame `t` (0-based).
    pub fn frame_data(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.frames.data()[t * n..(t + 1) * n]
    }

    pub fn frame(&self, t: usize) -> Tensor {
        Tensor::new(
            vec![self.height(), self.width(), self.bands()],
            self.frame_data(t).to_vec(),
        )
        .expect("frame extents")
    }

    /// Keeps the listed frames, in the order given.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.frame_len());
        let mut stamps = Vec::with_capacity(indices.len());
        for &t in indices {
            if t >= self.len() {
                return Err(Error::OutOfRange {
                    what: "frame",
                    index: t,
                    limit: self.len(),
                });
            }
            data.extend_from_slice(self.frame_data(t));
            stamps.push(self.timestamps[t]);
        }
        let frames = Tensor::new(vec![indices.len(), self.height(), self.width(), self.bands()], data)?;
        Ok(Self {
            frames,
            timestamps: stamps,
        })
    }

    pub fn reversed(&self) -> Self {
        let idx: Vec<usize> = (0..self.len()).rev().collect();
        self.select_frames(&idx).expect("indices in range")
    }
}

/// Per-frame boolean cloud mask (`[T, H, W]`, 0.0/1.0) with coverage ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudMask {
    mask: Tensor,
    coverage: Vec<f64>,
}

impl CloudMask {
    pub fn from_tensor(mask: Tensor) -> Result<Self> {
        let &[t, h, w] = mask.shape() else {
            return Err(Error::Rank {
                op: "CloudMask",
                expected: 3,
                shape: mask.shape().to_vec(),
            });
        };
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::config("cloud mask", "values must be 0.0 or 1.0"));
        }
        let px = h * w;
        let coverage = (0..t)
            .map(|f| {
                let cloudy = mask.data()[f * px..(f + 1) * px].iter().filter(|&&v| v == 1.0).count();
                if px == 0 {
                    0.0
                } else {
                    cloudy as f64 / px as f64
                }
            })
            .collect();
        Ok(Self { mask, coverage })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.mask
    }

    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    pub fn frames(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[2]
    }

    pub fn is_cloudy(&self, t: usize, y: usize, x: usize) -> bool {
        self.mask.get(&[t, y, x]) == 1.0
    }

    pub fn frame_data(&self, t: usize) -> &[f64] {
        let px = self.height() * self.width();
        &self.mask.data()[t * px..(t + 1) * px]
    }

    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let px = self.height() * self.width();
        let mut data = Vec::with_capacity(indices.len() * px);
        for &t in indices {
            if t >= self.frames() {
                return Err(Error::OutOfRange {
                    what: "frame",
                    index: t,
                    limit: self.frames(),
                });
            }
            data.extend_from_slice(self.frame_data(t));
        }
        Self::from_tensor(Tensor::new(vec![indices.len(), self.height(), self.width()], data)?)
    }

    /// Swaps cloudy and clear pixels.
    pub fn inverted(&self) -> Self {
        Self::from_tensor(self.mask.map(|v| 1.0 - v)).expect("inverted mask is boolean")
    }
}

/// Class index per pixel, `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    labels: Tensor,
    classes: usize,
}

impl LabelMap {
    pub fn new(labels: Tensor, classes: usize) -> Result<Self> {
        if labels.rank() != 2 {
            return Err(Error::Rank {
                op: "LabelMap",
                expected: 2,
                shape: labels.shape().to_vec(),
            });
        }
        for (i, &v) in labels.data().iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 || v as usize >= classes {
                return Err(Error::OutOfRange {
                    what: "class label",
                    index: i,
                    limit: classes,
                });
            }
        }
        Ok(Self { labels, classes })
    }

    pub fn from_indices(height: usize, width: usize, classes: usize, indices: &[usize]) -> Result<Self> {
        let data = indices.iter().map(|&c| c as f64).collect();
        Self::new(Tensor::new(vec![height, width], data)?, classes)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.labels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.labels.shape()[1]
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.data().iter().map(|&v| v as usize)
    }

    /// `[H, W, C]` one-hot encoding.
    pub fn one_hot(&self) -> Tensor {
        let c = self.classes;
        let mut out = Tensor::zeros(&[self.height(), self.width(), c]);
        for (p, k) in self.indices().enumerate() {
            out.data_mut()[p * c + k] = 1.0;
        }
        out
    }
}
