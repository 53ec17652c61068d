//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.txt       key=value lines
//! <dir>/tiles/<id>.clt     [T, S, S, D] reflectances
//! <dir>/labels/<id>.clt    [S, S] class indices
//! <dir>/masks/<id>.clt     [T, S, S] cloud mask, 0.0 / 1.0
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{ClassProfile, CloudMask, ImageSequence, LabelMap, Partition, PartitionConfig, SceneConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FORMAT_TAG: &str = "cloudlstm-dataset-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub id: usize,
    /// Top-left pixel in the scene.
    pub y: usize,
    pub x: usize,
    pub partition: Partition,
    pub sequence: ImageSequence,
    pub labels: LabelMap,
    pub mask: CloudMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub scene: SceneConfig,
    pub partition: PartitionConfig,
    /// Scene-wide cloud coverage per frame.
    pub coverage: Vec<f64>,
    pub timestamps: Vec<f64>,
    pub profiles: Vec<ClassProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub tiles: Vec<Tile>,
}

impl Dataset {
    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &Tile> {
        self.tiles.iter().filter(move |t| t.partition == p)
    }

    pub fn tile(&self, id: usize) -> Result<&Tile> {
        self.tiles.iter().find(|t| t.id == id).ok_or(Error::OutOfRange {
            what: "tile id",
            index: id,
            limit: self.tiles.len(),
        })
    }

    /// Restricts every tile to the given frames.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let tiles = self
            .tiles
            .iter()
            .map(|t| {
                Ok(Tile {
                    sequence: t.sequence.select_frames(indices)?,
                    mask: t.mask.select_frames(indices)?,
                    ..t.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = self.manifest.clone();
        manifest.coverage = indices.iter().map(|&i| self.manifest.coverage[i]).collect();
        manifest.timestamps = indices.iter().map(|&i| self.manifest.timestamps[i]).collect();
        manifest.scene.frames = indices.len();
        Ok(Self { manifest, tiles })
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Manifest {
    fn render(&self, tiles: &[Tile]) -> String {
        let s = &self.scene;
        let p = &self.partition;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("format", FORMAT_TAG.into());
        kv("height", s.height.to_string());
        kv("width", s.width.to_string());
        kv("tile_size", s.tile_size.to_string());
        kv("frames", s.frames.to_string());
        kv("bands", s.bands.to_string());
        kv("classes", s.classes.to_string());
        kv("parcel_size", s.parcel_size.to_string());
        kv("cloud_probability", s.cloud_probability.to_string());
        kv("cloud_opacity", s.cloud_opacity.to_string());
        kv("noise_std", s.noise_std.to_string());
        kv("shadows", s.shadows.to_string());
        kv("seed", s.seed.to_string());
        kv("block_size", p.block_size.to_string());
        kv("margin", p.margin.to_string());
        kv("ratios", join(&p.ratios));
        kv("partition_seed", p.seed.to_string());
        kv("coverage", join(&self.coverage));
        kv("timestamps", join(&self.timestamps));
        for (c, prof) in self.profiles.iter().enumerate() {
            kv(&format!("profile.{c}.baseline"), join(&prof.baseline));
            kv(&format!("profile.{c}.amplitude"), join(&prof.amplitude));
            kv(&format!("profile.{c}.center"), join(&prof.center));
            kv(&format!("profile.{c}.width"), join(&prof.width));
        }
        kv("tiles", tiles.len().to_string());
        for t in tiles {
            kv(&format!("tile.{}", t.id), format!("{},{},{}", t.y, t.x, t.partition));
        }
        out
    }
}

struct Fields<'a> {
    path: &'a Path,
    map: BTreeMap<String, String>,
}

impl<'a> Fields<'a> {
    fn parse(path: &'a Path, text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {}: expected key=value", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { path, map })
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(self.path, format!("missing key {key}")))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::format(self.path, format!("bad value for {key}: {v:?}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::format(self.path, format!("bad list entry for {key}: {s:?}")))
            })
            .collect()
    }
}

fn tile_file(dir: &Path, kind: &str, id: usize) -> PathBuf {
    dir.join(kind).join(format!("{id:04}.clt"))
}

pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["tiles", "labels", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for t in &ds.tiles {
        t.sequence.frames().save(tile_file(dir, "tiles", t.id))?;
        t.labels.tensor().save(tile_file(dir, "labels", t.id))?;
        t.mask.tensor().save(tile_file(dir, "masks", t.id))?;
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, ds.manifest.render(&ds.tiles)).map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let f = Fields::parse(&path, &text)?;
    let tag: String = f.get("format")?;
    if tag != FORMAT_TAG {
        return Err(Error::format(&path, format!("unsupported format {tag:?}")));
    }
    let ratios: Vec<u32> = f.list("ratios")?;
    let ratios: [u32; 3] = ratios
        .try_into()
        .map_err(|_| Error::format(&path, "ratios must have three entries"))?;
    let scene = SceneConfig {
        height: f.get("height")?,
        width: f.get("width")?,
        tile_size: f.get("tile_size")?,
        frames: f.get("frames")?,
        bands: f.get("bands")?,
        classes: f.get("classes")?,
        parcel_size: f.get("parcel_size")?,
        cloud_probability: f.get("cloud_probability")?,
        cloud_opacity: f.get("cloud_opacity")?,
        noise_std: f.get("noise_std")?,
        shadows: f.get("shadows")?,
        seed: f.get("seed")?,
    };
    let partition = PartitionConfig {
        block_size: f.get("block_size")?,
        margin: f.get("margin")?,
        ratios,
        seed: f.get("partition_seed")?,
    };
    let coverage: Vec<f64> = f.list("coverage")?;
    let timestamps: Vec<f64> = f.list("timestamps")?;
    if coverage.len() != scene.frames || timestamps.len() != scene.frames {
        return Err(Error::format(&path, "coverage/timestamps length differs from frames"));
    }
    let profiles = (0..scene.classes)
        .map(|c| {
            let prof = ClassProfile {
                baseline: f.list(&format!("profile.{c}.baseline"))?,
                amplitude: f.list(&format!("profile.{c}.amplitude"))?,
                center: f.list(&format!("profile.{c}.center"))?,
                width: f.list(&format!("profile.{c}.width"))?,
            };
            Ok(prof)
        })
        .collect::<Result<Vec<_>>>()?;

    let count: usize = f.get("tiles")?;
    let (t_len, s, d) = (scene.frames, scene.tile_size, scene.bands);
    let mut tiles = Vec::with_capacity(count);
    let ids: Vec<usize> = f
        .map
        .keys()
        .filter_map(|k| k.strip_prefix("tile.").and_then(|id| id.parse().ok()))
        .collect();
    if ids.len() != count {
        return Err(Error::format(
            &path,
            format!("tiles={count} but {} tile entries", ids.len()),
        ));
    }
    let mut ids = ids;
    ids.sort_unstable();
    for id in ids {
        let entry = f.raw(&format!("tile.{id}"))?;
        let parts: Vec<&str> = entry.split(',').collect();
        let [y, x, part] = parts[..] else {
            return Err(Error::format(&path, format!("bad tile entry {entry:?}")));
        };
        let bad = |_| Error::format(&path, format!("bad tile entry {entry:?}"));
        let (y, x): (usize, usize) = (y.parse().map_err(bad)?, x.parse().map_err(bad)?);
        let partition: Partition = part.parse()?;

        let load = |kind: &str, shape: &[usize]| -> Result<Tensor> {
            let p = tile_file(dir, kind, id);
            let t = Tensor::load(&p)?;
            if t.shape() != shape {
                return Err(Error::format(
                    &p,
                    format!("expected shape {shape:?}, found {:?}", t.shape()),
                ));
            }
            Ok(t)
        };
        let frames = load("tiles", &[t_len, s, s, d])?;
        let labels = load("labels", &[s, s])?;
        let mask = load("masks", &[t_len, s, s])?;
        let with_path = |kind: &str, e: Error| Error::format(tile_file(dir, kind, id), e.to_string());
        tiles.push(Tile {
            id,
            y,
            x,
            partition,
            sequence: ImageSequence::new(frames, timestamps.clone()).map_err(|e| with_path("tiles", e))?,
            labels: LabelMap::new(labels, scene.classes).map_err(|e| with_path("labels", e))?,
            mask: CloudMask::from_tensor(mask).map_err(|e| with_path("masks", e))?,
        });
    }
    Ok(Dataset {
        manifest: Manifest {
            scene,
            partition,
            coverage,
            timestamps,
            profiles,
        },
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate_dataset;

    fn small_dataset() -> Dataset {
        let scene = SceneConfig {
            height: 96,
            width: 96,
            tile_size: 24,
            frames: 5,
            ..SceneConfig::default()
        };
        let part = PartitionConfig {
            block_size: 48,
            margin: 0,
            ..Default::default()
        };
        generate_dataset(&scene, &part).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.tiles.iter().zip(&ds.tiles) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.sequence.frames()), bits(b.sequence.frames()));
        }
    }

    #[test]
    fn manifest_count_matches_files() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        for kind in ["tiles", "labels", "masks"] {
            assert_eq!(fs::read_dir(dir.path().join(kind)).unwrap().count(), ds.tiles.len());
        }
        let text = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(text.contains(&format!("tiles={}", ds.tiles.len())));
    }

    #[test]
    fn truncated_tile_names_file() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let victim = tile_file(dir.path(), "tiles", 1);
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("0001.clt"), "{err}");
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        Tensor::zeros(&[3, 3]).save(tile_file(dir.path(), "labels", 0)).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("labels") && err.contains("0000.clt"), "{err}");
    }
}
