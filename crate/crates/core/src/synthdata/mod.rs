//! Synthetic crop-phenology scenes with ground-truth cloud masks.
//!
//! A scene is a grid of rectangular parcels, each carrying one class. Every
//! class has, per band, a Gaussian bump in time on top of a constant
//! baseline. Clouds are thresholded smooth random fields that overwrite the
//! ground signal with a bright, flat reflectance; the mask records exactly
//! which pixels were overwritten.

mod io;
mod partition;
mod types;

pub use io::{read_dataset, write_dataset, Dataset, Manifest, Tile};
pub use partition::{partition_blocks, Partition, PartitionAssignment, PartitionConfig, TilePlacement};
pub use types::{CloudMask, ImageSequence, LabelMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_REFLECTANCE: f64 = 1.2;
/// Darkening applied to shadowed pixels when shadows are enabled.
pub const SHADOW_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub tile_size: usize,
    pub frames: usize,
    pub bands: usize,
    pub classes: usize,
    /// Mean parcel side length in pixels.
    pub parcel_size: usize,
    /// Probability that a frame receives a cloud event.
    pub cloud_probability: f64,
    /// Reflectance of cloudy pixels in every band.
    pub cloud_opacity: f64,
    pub noise_std: f64,
    pub shadows: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 192,
            width: 192,
            tile_size: 24,
            frames: 30,
            bands: 4,
            classes: 6,
            parcel_size: 12,
            cloud_probability: 0.85,
            cloud_opacity: 1.0,
            noise_std: 0.02,
            shadows: false,
            seed: 7,
        }
    }
}

impl SceneConfig {
    /// Geometry of the original crop-type setting: 48 px tiles, 46 frames,
    /// 13 bands.
    pub fn full_scale() -> Self {
        Self {
            height: 384,
            width: 384,
            tile_size: 48,
            frames: 46,
            bands: 13,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("height", self.height),
            ("width", self.width),
            ("tile_size", self.tile_size),
            ("frames", self.frames),
            ("bands", self.bands),
            ("classes", self.classes),
            ("parcel_size", self.parcel_size),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if !self.height.is_multiple_of(self.tile_size) || !self.width.is_multiple_of(self.tile_size) {
            return Err(Error::config(
                "tile_size",
                format!(
                    "scene {}x{} is not divisible into {} px tiles",
                    self.height, self.width, self.tile_size
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.cloud_probability) {
            return Err(Error::config("cloud_probability", "must lie in [0, 1]"));
        }
        if !(0.0..=MAX_REFLECTANCE).contains(&self.cloud_opacity) {
            return Err(Error::config("cloud_opacity", "must lie in [0, 1.2]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Temporal reflectance profile of one class: per band, a baseline plus a
/// Gaussian bump `amplitude · exp(-(t - center)² / (2 width²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub baseline: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub center: Vec<f64>,
    pub width: Vec<f64>,
}

impl ClassProfile {
    pub fn reflectance(&self, band: usize, t: f64) -> f64 {
        let z = (t - self.center[band]) / self.width[band];
        self.baseline[band] + self.amplitude[band] * (-0.5 * z * z).exp()
    }

    fn draw(bands: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self {
            baseline: Vec::with_capacity(bands),
            amplitude: Vec::with_capacity(bands),
            center: Vec::with_capacity(bands),
            width: Vec::with_capacity(bands),
        };
        for _ in 0..bands {
            p.baseline.push(rng.random_range(0.05..0.25));
            p.amplitude.push(rng.random_range(0.05..0.45));
            p.center.push(rng.random_range(0.15..0.85));
            p.width.push(rng.random_range(0.05..0.2));
        }
        p
    }
}

/// Full generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sequence: ImageSequence,
    pub labels: LabelMap,
    pub mask: CloudMask,
    pub profiles: Vec<ClassProfile>,
}

// Independent random streams derived from one seed.
const STREAM_PROFILES: u64 = 1;
const STREAM_PARCELS: u64 = 2;
const STREAM_FRAME: u64 = 3;
pub(crate) const STREAM_PARTITION: u64 = 4;

/// SplitMix64 finalizer over (seed, stream, index).
pub(crate) fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, stream, index))
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let (h, w, t_len, d) = (cfg.height, cfg.width, cfg.frames, cfg.bands);

    let mut rng = rng_for(cfg.seed, STREAM_PROFILES, 0);
    let profiles: Vec<ClassProfile> = (0..cfg.classes).map(|_| ClassProfile::draw(d, &mut rng)).collect();

    let mut rng = rng_for(cfg.seed, STREAM_PARCELS, 0);
    let labels = parcel_labels(h, w, cfg.parcel_size, cfg.classes, &mut rng);

    let timestamps = ImageSequence::even_timestamps(t_len);
    // ground[class][t][band]
    let ground: Vec<Vec<Vec<f64>>> = profiles
        .iter()
        .map(|p| {
            timestamps
                .iter()
                .map(|&t| (0..d).map(|b| p.reflectance(b, t)).collect())
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::config("noise_std", e.to_string()))?;
    let px = h * w;
    let mut frames = vec![0.0; t_len * px * d];
    let mut mask = vec![0.0; t_len * px];
    for t in 0..t_len {
        let mut rng = rng_for(cfg.seed, STREAM_FRAME, t as u64);
        let frame = &mut frames[t * px * d..(t + 1) * px * d];
        for (p, &class) in labels.iter().enumerate() {
            for b in 0..d {
                frame[p * d + b] = ground[class][t][b] + noise.sample(&mut rng);
            }
        }
        if rng.random_bool(cfg.cloud_probability) {
            let target = rng.random_range(0.005..=1.0);
            let cloudy = cloud_blob(h, w, target, &mut rng);
            if cfg.shadows {
                let (dy, dx) = (rng.random_range(2..=8usize), rng.random_range(2..=8usize));
                for y in dy..h {
                    for x in dx..w {
                        let src = (y - dy) * w + (x - dx);
                        if cloudy[src] && !cloudy[y * w + x] {
                            for v in &mut frame[(y * w + x) * d..][..d] {
                                *v *= SHADOW_FACTOR;
                            }
                        }
                    }
                }
            }
            let m = &mut mask[t * px..(t + 1) * px];
            for p in 0..px {
                if cloudy[p] {
                    m[p] = 1.0;
                    for b in 0..d {
                        frame[p * d + b] = cfg.cloud_opacity + noise.sample(&mut rng);
                    }
                }
            }
        }
        for v in frame.iter_mut() {
            *v = v.clamp(0.0, MAX_REFLECTANCE);
        }
    }

    let sequence = ImageSequence::new(Tensor::new(vec![t_len, h, w, d], frames)?, timestamps)?;
    let labels = LabelMap::from_indices(h, w, cfg.classes, &labels)?;
    let mask = CloudMask::from_tensor(Tensor::new(vec![t_len, h, w], mask)?)?;
    Ok(Scene {
        sequence,
        labels,
        mask,
        profiles,
    })
}

/// Recursive guillotine splits until parcels are near `mean` on both sides.
fn parcel_labels(h: usize, w: usize, mean: usize, classes: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = vec![0; h * w];
    let mut stack = vec![(0usize, 0usize, h, w)];
    let limit = (mean * 3).div_ceil(2).max(2);
    while let Some((y0, x0, ph, pw)) = stack.pop() {
        if ph <= limit && pw <= limit {
            let class = rng.random_range(0..classes);
            for y in y0..y0 + ph {
                out[y * w + x0..y * w + x0 + pw].fill(class);
            }
            continue;
        }
        let split_rows = ph > limit && (ph >= pw || pw <= limit);
        let len = if split_rows { ph } else { pw };
        let lo = (len * 3 / 10).max(1);
        let hi = (len * 7 / 10).max(lo + 1).min(len - 1);
        let cut = rng.random_range(lo..=hi);
        if split_rows {
            stack.push((y0, x0, cut, pw));
            stack.push((y0 + cut, x0, ph - cut, pw));
        } else {
            stack.push((y0, x0, ph, cut));
            stack.push((y0, x0 + cut, ph, pw - cut));
        }
    }
    out
}

/// Two-octave value noise thresholded so that `round(target · H·W)` pixels
/// (at least one) are cloudy.
fn cloud_blob(h: usize, w: usize, target: f64, rng: &mut impl Rng) -> Vec<bool> {
    let mut field = vec![0.0; h * w];
    for (cell, weight) in [(32.0, 1.0), (12.0, 0.45)] {
        add_value_noise(&mut field, h, w, cell, weight, rng);
    }
    let n = ((target * (h * w) as f64).round() as usize).clamp(1, h * w);
    let mut order: Vec<usize> = (0..h * w).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut cloudy = vec![false; h * w];
    for &p in &order[..n] {
        cloudy[p] = true;
    }
    cloudy
}

fn add_value_noise(field: &mut [f64], h: usize, w: usize, cell: f64, weight: f64, rng: &mut impl Rng) {
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(0.0..1.0)).collect();
    let (oy, ox) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    for y in 0..h {
        let fy = y as f64 / cell + oy;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / cell + ox;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(iy, ix) * (1.0 - tx) + g(iy, ix + 1) * tx;
            let bottom = g(iy + 1, ix) * (1.0 - tx) + g(iy + 1, ix + 1) * tx;
            field[y * w + x] += weight * (top * (1.0 - ty) + bottom * ty);
        }
    }
}

/// Indices of frames whose cloud coverage is strictly below `threshold`;
/// a threshold of exactly 0 keeps only completely cloud-free frames.
pub fn kept_frames(coverage: &[f64], threshold: f64) -> Result<Vec<usize>> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::config("threshold", format!("must be >= 0, got {threshold}")));
    }
    let keep: Vec<usize> = coverage
        .iter()
        .enumerate()
        .filter(|&(_, &c)| if threshold == 0.0 { c == 0.0 } else { c < threshold })
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyAfterFiltering { threshold });
    }
    Ok(keep)
}

/// Drops frames whose coverage is not below `threshold`, preserving order.
pub fn coverage_filter(seq: &ImageSequence, mask: &CloudMask, threshold: f64) -> Result<(ImageSequence, Vec<usize>)> {
    if mask.frames() != seq.len() {
        return Err(Error::ShapeMismatch {
            op: "coverage_filter",
            lhs: vec![seq.len()],
            rhs: vec![mask.frames()],
        });
    }
    let keep = kept_frames(mask.coverage(), threshold)?;
    Ok((seq.select_frames(&keep)?, keep))
}

/// Cuts a `[size, size]` window at `(y0, x0)` out of a scene.
pub fn crop_tile(scene: &Scene, y0: usize, x0: usize, size: usize) -> Result<(ImageSequence, LabelMap, CloudMask)> {
    let seq = &scene.sequence;
    let (t_len, h, w, d) = (seq.len(), seq.height(), seq.width(), seq.bands());
    if y0 + size > h || x0 + size > w {
        return Err(Error::OutOfRange {
            what: "tile origin",
            index: (y0 + size).max(x0 + size),
            limit: h.min(w),
        });
    }
    let mut frames = Vec::with_capacity(t_len * size * size * d);
    let mut mask = Vec::with_capacity(t_len * size * size);
    for t in 0..t_len {
        let f = seq.frame_data(t);
        let m = scene.mask.frame_data(t);
        for y in y0..y0 + size {
            frames.extend_from_slice(&f[(y * w + x0) * d..(y * w + x0 + size) * d]);
            mask.extend_from_slice(&m[y * w + x0..y * w + x0 + size]);
        }
    }
    let labels: Vec<f64> = (y0..y0 + size)
        .flat_map(|y| {
            scene.labels.tensor().data()[y * w + x0..y * w + x0 + size]
                .iter()
                .copied()
        })
        .collect();
    Ok((
        ImageSequence::new(
            Tensor::new(vec![t_len, size, size, d], frames)?,
            seq.timestamps().to_vec(),
        )?,
        LabelMap::new(Tensor::new(vec![size, size], labels)?, scene.labels.classes())?,
        CloudMask::from_tensor(Tensor::new(vec![t_len, size, size], mask)?)?,
    ))
}

/// Generates a scene, partitions it into blocks and cuts out every tile that
/// is not discarded as margin.
pub fn generate_dataset(scene_cfg: &SceneConfig, part_cfg: &PartitionConfig) -> Result<Dataset> {
    let scene = generate_scene(scene_cfg)?;
    let assignment = partition_blocks(scene_cfg.height, scene_cfg.width, scene_cfg.tile_size, part_cfg)?;
    let mut tiles = Vec::new();
    for placement in assignment.tiles.iter().filter(|t| t.partition != Partition::Margin) {
        let (sequence, labels, mask) = crop_tile(&scene, placement.y, placement.x, scene_cfg.tile_size)?;
        tiles.push(Tile {
            id: tiles.len(),
            y: placement.y,
            x: placement.x,
            partition: placement.partition,
            sequence,
            labels,
            mask,
        });
    }
    Ok(Dataset {
        manifest: Manifest {
            scene: scene_cfg.clone(),
            partition: part_cfg.clone(),
            coverage: scene.mask.coverage().to_vec(),
            timestamps: scene.sequence.timestamps().to_vec(),
            profiles: scene.profiles,
        },
        tiles,
    })
}
