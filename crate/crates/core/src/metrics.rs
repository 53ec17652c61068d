//! Classification metrics and the input-gate cloud-sensitivity statistic.

use std::fmt::Write as _;

use crate::convlstm::GateTrace;
use crate::error::{Error, Result};
use crate::synthdata::{CloudMask, LabelMap};
use crate::tensor::Tensor;

/// Per-pixel argmax over the class axis of `[H, W, C]` probabilities; ties
/// go to the lowest class index.
pub fn argmax_labels(probs: &Tensor) -> Result<LabelMap> {
    let &[h, w, c] = probs.shape() else {
        return Err(Error::Rank {
            op: "argmax_labels",
            expected: 3,
            shape: probs.shape().to_vec(),
        });
    };
    let idx: Vec<usize> = probs
        .data()
        .chunks_exact(c.max(1))
        .map(|px| {
            px.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                )
                .0
        })
        .collect();
    LabelMap::from_indices(h, w, c, &idx)
}

fn check_extents(pred: &LabelMap, reference: &LabelMap) -> Result<()> {
    if pred.tensor().shape() != reference.tensor().shape() {
        return Err(Error::ShapeMismatch {
            op: "label maps",
            lhs: pred.tensor().shape().to_vec(),
            rhs: reference.tensor().shape().to_vec(),
        });
    }
    Ok(())
}

/// (correct pixels, total pixels).
pub fn overall_accuracy_counts(pred: &LabelMap, reference: &LabelMap) -> Result<(usize, usize)> {
    check_extents(pred, reference)?;
    let correct = pred.indices().zip(reference.indices()).filter(|(a, b)| a == b).count();
    Ok((correct, reference.height() * reference.width()))
}

pub fn overall_accuracy(pred: &LabelMap, reference: &LabelMap) -> Result<f64> {
    let (correct, total) = overall_accuracy_counts(pred, reference)?;
    Ok(correct as f64 / total as f64)
}

/// `counts[reference][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn overall_accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Adds the pixels of one label-map pair.
    pub fn accumulate(&mut self, pred: &LabelMap, reference: &LabelMap) -> Result<()> {
        check_extents(pred, reference)?;
        for (p, r) in pred.indices().zip(reference.indices()) {
            let limit = self.classes;
            if p >= limit || r >= limit {
                return Err(Error::OutOfRange {
                    what: "class",
                    index: p.max(r),
                    limit,
                });
            }
            self.counts[r * limit + p] += 1;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.classes {
            let row: Vec<String> = (0..self.classes).map(|p| self.get(r, p).to_string()).collect();
            let _ = writeln!(out, "{}", row.join("\t"));
        }
        out
    }
}

pub fn confusion(pred: &LabelMap, reference: &LabelMap) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(reference.classes().max(pred.classes()));
    m.accumulate(pred, reference)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSensitivity {
    pub channel: usize,
    pub cloudy_mean: f64,
    pub clear_mean: f64,
    /// `clear_mean / cloudy_mean`.
    pub ratio: f64,
}

/// Channels ordered by descending clear/cloudy input-gate ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudSensitivityReport {
    pub channels: Vec<ChannelSensitivity>,
}

impl CloudSensitivityReport {
    pub fn top(&self) -> Option<&ChannelSensitivity> {
        self.channels.first()
    }

    pub fn channel(&self, channel: usize) -> Option<&ChannelSensitivity> {
        self.channels.iter().find(|c| c.channel == channel)
    }

    pub fn max_ratio(&self) -> f64 {
        self.top().map_or(f64::NAN, |c| c.ratio)
    }

    /// `channel \t cloudy_mean \t clear_mean \t ratio`, one line per channel.
    pub fn to_tsv(&self) -> String {
        self.channels
            .iter()
            .map(|c| {
                format!(
                    "{}\t{:.6}\t{:.6}\t{:.6}\n",
                    c.channel, c.cloudy_mean, c.clear_mean, c.ratio
                )
            })
            .collect()
    }
}

/// Mean input-gate activation per hidden channel over cloudy and over clear
/// (step, pixel) pairs.
pub fn cloud_sensitivity(trace: &GateTrace, mask: &CloudMask) -> Result<CloudSensitivityReport> {
    cloud_sensitivity_pooled([(trace, mask)])
}

/// Like [`cloud_sensitivity`], with the means taken over the (step, pixel)
/// pairs of several traces together.
pub fn cloud_sensitivity_pooled<'a>(
    pairs: impl IntoIterator<Item = (&'a GateTrace, &'a CloudMask)>,
) -> Result<CloudSensitivityReport> {
    let mut r = None;
    let mut cloudy_sum = Vec::new();
    let mut clear_sum = Vec::new();
    let (mut n_cloudy, mut n_clear) = (0usize, 0usize);
    for (trace, mask) in pairs {
        if trace.len() != mask.frames() {
            return Err(Error::ShapeMismatch {
                op: "cloud_sensitivity frames",
                lhs: vec![trace.len()],
                rhs: vec![mask.frames()],
            });
        }
        let ch = trace.hidden_channels();
        match r {
            None => {
                r = Some(ch);
                cloudy_sum = vec![0.0; ch];
                clear_sum = vec![0.0; ch];
            }
            Some(prev) if prev != ch => {
                return Err(Error::ChannelMismatch {
                    op: "cloud_sensitivity",
                    expected: prev,
                    got: ch,
                })
            }
            Some(_) => {}
        }
        for (t, step) in trace.steps.iter().enumerate() {
            let want = [mask.height(), mask.width(), ch];
            if step.i.shape() != want {
                return Err(Error::ShapeMismatch {
                    op: "cloud_sensitivity extents",
                    lhs: want.to_vec(),
                    rhs: step.i.shape().to_vec(),
                });
            }
            for (px, &m) in step.i.data().chunks_exact(ch).zip(mask.frame_data(t)) {
                let (sum, n) = if m == 1.0 {
                    (&mut cloudy_sum, &mut n_cloudy)
                } else {
                    (&mut clear_sum, &mut n_clear)
                };
                *n += 1;
                for (s, v) in sum.iter_mut().zip(px) {
                    *s += v;
                }
            }
        }
    }
    if n_cloudy == 0 {
        return Err(Error::DegenerateMask("no cloudy pixels"));
    }
    if n_clear == 0 {
        return Err(Error::DegenerateMask("no clear pixels"));
    }
    let mut channels: Vec<ChannelSensitivity> = (0..r.unwrap_or(0))
        .map(|ch| {
            let cloudy_mean = cloudy_sum[ch] / n_cloudy as f64;
            let clear_mean = clear_sum[ch] / n_clear as f64;
            ChannelSensitivity {
                channel: ch,
                cloudy_mean,
                clear_mean,
                ratio: clear_mean / cloudy_mean,
            }
        })
        .collect();
    channels.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then(a.channel.cmp(&b.channel)));
    Ok(CloudSensitivityReport { channels })
}
