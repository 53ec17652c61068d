//! Grayscale panels of inputs and gate activations over time, written as
//! binary PGM.

use std::fs;
use std::path::Path;

use crate::convlstm::{GateTrace, TraceSource};
use crate::error::{Error, Result};
use crate::synthdata::{ImageSequence, MAX_REFLECTANCE};

/// Gray level of the separators between panel cells.
pub const GAP_GRAY: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelSource {
    /// Mean of the first three input bands.
    Input,
    Gate(TraceSource),
}

impl PanelSource {
    pub const LABELS: [(&'static str, PanelSource); 7] = [
        ("input", PanelSource::Input),
        ("i", PanelSource::Gate(TraceSource::Input)),
        ("j", PanelSource::Gate(TraceSource::Modulation)),
        ("f", PanelSource::Gate(TraceSource::Forget)),
        ("o", PanelSource::Gate(TraceSource::Output)),
        ("c", PanelSource::Gate(TraceSource::Cell)),
        ("h", PanelSource::Gate(TraceSource::Hidden)),
    ];

    pub fn label(self) -> &'static str {
        Self::LABELS
            .iter()
            .find(|(_, s)| *s == self)
            .map(|(l, _)| *l)
            .expect("listed")
    }
}

/// Normalisation range of a row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowRange {
    Fixed(f64, f64),
    /// `[-m, m]` with `m` the largest magnitude over the selected steps.
    SymmetricMaxAbs,
}

impl RowRange {
    pub fn default_for(source: PanelSource) -> Self {
        match source {
            PanelSource::Input => RowRange::Fixed(0.0, MAX_REFLECTANCE),
            PanelSource::Gate(TraceSource::Input | TraceSource::Forget) => RowRange::Fixed(0.0, 1.0),
            PanelSource::Gate(TraceSource::Modulation | TraceSource::Output) => RowRange::Fixed(-1.0, 1.0),
            PanelSource::Gate(TraceSource::Cell | TraceSource::Hidden) => RowRange::SymmetricMaxAbs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub source: PanelSource,
    /// Hidden channel; ignored for the input row.
    pub channel: usize,
    pub range: RowRange,
}

impl PanelRow {
    pub fn new(source: PanelSource, channel: usize) -> Self {
        Self {
            source,
            channel,
            range: RowRange::default_for(source),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    pub rows: Vec<PanelRow>,
    /// 1-based time steps, one column each.
    pub timesteps: Vec<usize>,
    /// Output pixels per tile pixel.
    pub scale: usize,
    pub gap: usize,
}

impl PanelSpec {
    /// Input, i, j, f, o and c rows of one hidden channel.
    pub fn for_channel(channel: usize, timesteps: Vec<usize>) -> Self {
        let rows = PanelSource::LABELS[..6]
            .iter()
            .map(|&(_, s)| PanelRow::new(s, channel))
            .collect();
        Self {
            rows,
            timesteps,
            scale: 4,
            gap: 2,
        }
    }

    pub fn validate(&self, steps: usize, hidden: usize) -> Result<()> {
        if self.rows.is_empty() || self.timesteps.is_empty() {
            return Err(Error::config("panel", "needs at least one row and one time step"));
        }
        if self.scale == 0 {
            return Err(Error::config("scale", "must be >= 1"));
        }
        for &t in &self.timesteps {
            if t == 0 || t > steps {
                return Err(Error::OutOfRange {
                    what: "time step",
                    index: t,
                    limit: steps,
                });
            }
        }
        for row in &self.rows {
            if row.source != PanelSource::Input && row.channel >= hidden {
                return Err(Error::OutOfRange {
                    what: "hidden channel",
                    index: row.channel,
                    limit: hidden,
                });
            }
            if let RowRange::Fixed(lo, hi) = row.range {
                if lo.is_nan() || hi.is_nan() || lo >= hi {
                    return Err(Error::config("range", format!("empty range [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Linear map of `[lo, hi]` onto `[0, 255]`, rounded and clamped. A
/// degenerate range maps everything to mid-gray.
pub fn to_gray(v: f64, lo: f64, hi: f64) -> u8 {
    if lo.is_nan() || hi.is_nan() || hi <= lo {
        return 128;
    }
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

fn row_values(row: &PanelRow, t: usize, trace: &GateTrace, seq: &ImageSequence) -> Vec<f64> {
    match row.source {
        PanelSource::Input => {
            let d = seq.bands();
            let n = d.min(3);
            seq.frame_data(t)
                .chunks_exact(d)
                .map(|px| px[..n].iter().sum::<f64>() / n as f64)
                .collect()
        }
        PanelSource::Gate(src) => {
            let r = trace.hidden_channels();
            trace.steps[t]
                .get(src)
                .data()
                .chunks_exact(r)
                .map(|px| px[row.channel])
                .collect()
        }
    }
}

pub fn render_panel(trace: &GateTrace, seq: &ImageSequence, spec: &PanelSpec) -> Result<GrayImage> {
    spec.validate(trace.len(), trace.hidden_channels())?;
    let (h, w) = (seq.height(), seq.width());
    if let Some(step) = trace.steps.first() {
        if step.i.shape()[..2] != [h, w] {
            return Err(Error::ShapeMismatch {
                op: "render_panel",
                lhs: step.i.shape()[..2].to_vec(),
                rhs: vec![h, w],
            });
        }
    }
    let needs_input = spec.rows.iter().any(|r| r.source == PanelSource::Input);
    if needs_input && seq.len() < trace.len() {
        return Err(Error::ShapeMismatch {
            op: "render_panel frames",
            lhs: vec![trace.len()],
            rhs: vec![seq.len()],
        });
    }
    let (cw, ch) = (w * spec.scale, h * spec.scale);
    let cols = spec.timesteps.len();
    let width = cols * cw + (cols - 1) * spec.gap;
    let height = spec.rows.len() * ch + (spec.rows.len() - 1) * spec.gap;
    let mut img = GrayImage::filled(width, height, GAP_GRAY);

    for (ri, row) in spec.rows.iter().enumerate() {
        let values: Vec<Vec<f64>> = spec
            .timesteps
            .iter()
            .map(|&t| row_values(row, t - 1, trace, seq))
            .collect();
        let (lo, hi) = match row.range {
            RowRange::Fixed(lo, hi) => (lo, hi),
            RowRange::SymmetricMaxAbs => {
                let m = values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
                (-m, m)
            }
        };
        for (ci, vals) in values.iter().enumerate() {
            let (x0, y0) = (ci * (cw + spec.gap), ri * (ch + spec.gap));
            for py in 0..ch {
                for px in 0..cw {
                    let v = vals[(py / spec.scale) * w + px / spec.scale];
                    img.pixels[(y0 + py) * width + x0 + px] = to_gray(v, lo, hi);
                }
            }
        }
    }
    Ok(img)
}

pub fn write_image(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if image.pixels.len() != image.width * image.height {
        return Err(Error::DataLength {
            shape: vec![image.height, image.width],
            len: image.pixels.len(),
        });
    }
    fs::write(path, image.to_pgm()).map_err(|e| Error::io(path, e))
}

/// `<prefix>_cell<channel>_t<first>-<last>.pgm`
pub fn panel_file_name(prefix: &str, channel: usize, timesteps: &[usize]) -> String {
    let first = timesteps.first().copied().unwrap_or(0);
    let last = timesteps.last().copied().unwrap_or(0);
    format!("{prefix}_cell{channel}_t{first}-{last}.pgm")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convlstm::GateRecord;
    use crate::tensor::Tensor;

    /// Independent P5 parser: header tokens split on whitespace.
    fn read_p5(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
        }
        assert_eq!(fields[0], "P5");
        assert_eq!(fields[3], "255");
        (
            fields[1].parse().unwrap(),
            fields[2].parse().unwrap(),
            bytes[pos + 1..].to_vec(),
        )
    }

    fn flat_trace(steps: usize, h: usize, w: usize, r: usize, value: f64) -> GateTrace {
        let t = Tensor::full(&[h, w, r], value);
        GateTrace {
            steps: vec![
                GateRecord {
                    i: t.clone(),
                    j: t.clone(),
                    f: t.clone(),
                    o: t.clone(),
                    c: t.clone(),
                    h: t,
                };
                steps
            ],
        }
    }

    fn seq(steps: usize, h: usize, w: usize) -> ImageSequence {
        ImageSequence::new(Tensor::zeros(&[steps, h, w, 4]), ImageSequence::even_timestamps(steps)).unwrap()
    }

    #[test]
    fn gray_endpoints() {
        assert_eq!(to_gray(0.0, -1.0, 1.0), 128);
        assert_eq!(to_gray(0.0, 0.0, 1.0), 0);
        assert_eq!(to_gray(1.0, 0.0, 1.0), 255);
        assert_eq!(to_gray(7.0, 0.0, 1.0), 255);
        assert_eq!(to_gray(-7.0, 0.0, 1.0), 0);
    }

    #[test]
    fn zero_rows_render_at_range_floor_or_middle() {
        let trace = flat_trace(2, 2, 3, 2, 0.0);
        let spec = PanelSpec {
            rows: vec![
                PanelRow::new(PanelSource::Gate(TraceSource::Input), 1),
                PanelRow::new(PanelSource::Gate(TraceSource::Modulation), 1),
            ],
            timesteps: vec![1, 2],
            scale: 1,
            gap: 1,
        };
        let img = render_panel(&trace, &seq(2, 2, 3), &spec).unwrap();
        assert_eq!((img.width, img.height), (7, 5));
        for x in [0, 1, 2, 4, 5, 6] {
            assert_eq!(img.get(x, 0), 0);
            assert_eq!(img.get(x, 4), 128);
        }
        assert_eq!(img.get(3, 0), GAP_GRAY);
        assert_eq!(img.get(0, 2), GAP_GRAY);

        let ones = render_panel(&flat_trace(2, 2, 3, 2, 1.0), &seq(2, 2, 3), &spec).unwrap();
        assert_eq!(ones.get(0, 0), 255);
    }

    #[test]
    fn cell_row_uses_symmetric_range() {
        let mut trace = flat_trace(2, 1, 2, 1, 0.0);
        trace.steps[0].c = Tensor::new(vec![1, 2, 1], vec![-2.0, 1.0]).unwrap();
        trace.steps[1].c = Tensor::new(vec![1, 2, 1], vec![0.0, 2.0]).unwrap();
        let spec = PanelSpec {
            rows: vec![PanelRow::new(PanelSource::Gate(TraceSource::Cell), 0)],
            timesteps: vec![1, 2],
            scale: 1,
            gap: 0,
        };
        let img = render_panel(&trace, &seq(2, 1, 2), &spec).unwrap();
        assert_eq!(img.pixels, vec![0, 191, 128, 255]);
    }

    #[test]
    fn rejects_out_of_range_requests() {
        let trace = flat_trace(3, 2, 2, 2, 0.5);
        let s = seq(3, 2, 2);
        assert!(render_panel(&trace, &s, &PanelSpec::for_channel(2, vec![1])).is_err());
        assert!(render_panel(&trace, &s, &PanelSpec::for_channel(0, vec![0])).is_err());
        assert!(render_panel(&trace, &s, &PanelSpec::for_channel(0, vec![4])).is_err());
        assert!(render_panel(&trace, &s, &PanelSpec::for_channel(1, vec![1, 3])).is_ok());
    }

    #[test]
    fn single_black_pixel_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pgm");
        write_image(&GrayImage::filled(1, 1, 0), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes, b"P5\n1 1\n255\n\0");
        assert_eq!(bytes.len(), 12);
    }

    #[test]
    fn independent_reader_round_trip() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 10, 20, 200, 255, 9],
        };
        let (w, h, px) = read_p5(&img.to_pgm());
        assert_eq!((w, h), (3, 2));
        assert_eq!(px, img.pixels);
    }

    #[test]
    fn file_name_pattern() {
        assert_eq!(panel_file_name("tile3", 5, &[13, 14, 15]), "tile3_cell5_t13-15.pgm");
    }

    #[test]
    fn unwritable_path_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("x.pgm");
        assert!(write_image(&GrayImage::filled(1, 1, 0), path).is_err());
    }
}
