//! Command-line front end: configuration resolution and the `generate`,
//! `train`, `ablate`, `evaluate` and `visualize` subcommands.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::convlstm::{encode, CellConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::metrics::{argmax_labels, cloud_sensitivity, ConfusionMatrix};
use crate::synthdata::{
    generate_dataset, kept_frames, read_dataset, write_dataset, Dataset, Partition, PartitionConfig, SceneConfig,
};
use crate::train::{init_params, metrics_tsv, train_loop, EpochMetrics, Sample, TrainConfig, WallClock};
use crate::viz::{panel_file_name, render_panel, write_image, PanelSpec};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const FINAL_CHECKPOINT: &str = "final.clck";

/// Every setting a subcommand may read, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Base seed for the scene, the block assignment and training.
    pub seed: u64,
    pub scene: SceneConfig,
    pub partition: PartitionConfig,
    pub hidden: usize,
    pub kernel: usize,
    pub head_kernel: usize,
    pub standard_variant: bool,
    pub train: TrainConfig,
    /// Save a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub record_wall_time: bool,
    pub thresholds: Vec<f64>,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub eval_partition: Partition,
    pub tile: usize,
    pub channels: Vec<usize>,
    pub top: usize,
    /// Inclusive 1-based range; `None` means every step.
    pub steps: Option<(usize, usize)>,
    pub panel_scale: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 7;
        Self {
            seed,
            scene: SceneConfig::default(),
            partition: PartitionConfig::default(),
            hidden: 32,
            kernel: 3,
            head_kernel: 3,
            standard_variant: false,
            train: TrainConfig::default(),
            checkpoint_every: 0,
            record_wall_time: false,
            thresholds: vec![1.01, 0.5, 0.25, 0.1, 0.0],
            out: PathBuf::from("out"),
            data: None,
            checkpoint: None,
            eval_partition: Partition::Eval,
            tile: 0,
            channels: Vec::new(),
            top: 1,
            steps: None,
            panel_scale: 4,
        }
        .with_seed(seed)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key.to_string(), format!("cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.seed = seed;
        self.partition.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => *self = self.clone().with_seed(parse(key, v)?),
            "height" => self.scene.height = parse(key, v)?,
            "width" => self.scene.width = parse(key, v)?,
            "tile_size" => self.scene.tile_size = parse(key, v)?,
            "frames" => self.scene.frames = parse(key, v)?,
            "bands" => self.scene.bands = parse(key, v)?,
            "classes" => self.scene.classes = parse(key, v)?,
            "parcel_size" => self.scene.parcel_size = parse(key, v)?,
            "cloud_probability" => self.scene.cloud_probability = parse(key, v)?,
            "cloud_opacity" => self.scene.cloud_opacity = parse(key, v)?,
            "noise_std" => self.scene.noise_std = parse(key, v)?,
            "shadows" => self.scene.shadows = parse(key, v)?,
            "block_size" => self.partition.block_size = parse(key, v)?,
            "margin" => self.partition.margin = parse(key, v)?,
            "ratios" => {
                let r: Vec<u32> = parse_list(key, v)?;
                self.partition.ratios = r
                    .try_into()
                    .map_err(|_| Error::config("ratios", "expected three comma-separated weights"))?;
            }
            "hidden" => self.hidden = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "head_kernel" => self.head_kernel = parse(key, v)?,
            "standard_variant" => self.standard_variant = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "beta1" => self.train.beta1 = parse(key, v)?,
            "beta2" => self.train.beta2 = parse(key, v)?,
            "epsilon" => self.train.epsilon = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "record_wall_time" => self.record_wall_time = parse(key, v)?,
            "thresholds" => self.thresholds = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "partition" => self.eval_partition = v.parse()?,
            "tile" => self.tile = parse(key, v)?,
            "channels" => self.channels = parse_list(key, v)?,
            "top" => self.top = parse(key, v)?,
            "steps" => {
                self.steps = if v.is_empty() {
                    None
                } else {
                    let (a, b) = v
                        .split_once('-')
                        .ok_or_else(|| Error::config("steps", "expected <first>-<last>"))?;
                    Some((parse(key, a)?, parse(key, b)?))
                }
            }
            "panel_scale" => self.panel_scale = parse(key, v)?,
            other => return Err(Error::config(other.to_string(), "unknown configuration key")),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected key=value, got {line:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let t = &self.train;
        let p = &self.partition;
        let steps = self.steps.map(|(a, b)| format!("{a}-{b}")).unwrap_or_default();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("height", s.height.to_string()),
            ("width", s.width.to_string()),
            ("tile_size", s.tile_size.to_string()),
            ("frames", s.frames.to_string()),
            ("bands", s.bands.to_string()),
            ("classes", s.classes.to_string()),
            ("parcel_size", s.parcel_size.to_string()),
            ("cloud_probability", s.cloud_probability.to_string()),
            ("cloud_opacity", s.cloud_opacity.to_string()),
            ("noise_std", s.noise_std.to_string()),
            ("shadows", s.shadows.to_string()),
            ("block_size", p.block_size.to_string()),
            ("margin", p.margin.to_string()),
            ("ratios", join(&p.ratios)),
            ("hidden", self.hidden.to_string()),
            ("kernel", self.kernel.to_string()),
            ("head_kernel", self.head_kernel.to_string()),
            ("standard_variant", self.standard_variant.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("epsilon", t.epsilon.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("record_wall_time", self.record_wall_time.to_string()),
            ("thresholds", join(&self.thresholds)),
            ("out", self.out.display().to_string()),
            ("data", opt_path(&self.data)),
            ("checkpoint", opt_path(&self.checkpoint)),
            ("partition", self.eval_partition.to_string()),
            ("tile", self.tile.to_string()),
            ("channels", join(&self.channels)),
            ("top", self.top.to_string()),
            ("steps", steps),
            ("panel_scale", self.panel_scale.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn cell_config(&self, ds: &Dataset) -> CellConfig {
        let s = &ds.manifest.scene;
        CellConfig::new(self.kernel, s.bands, self.hidden, s.tile_size, s.tile_size)
            .with_standard_variant(self.standard_variant)
    }

    fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::config("data", "a dataset directory is required"))
    }

    fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::config("checkpoint", "a checkpoint file is required"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cloudlstm",
    version,
    about = "Convolutional LSTM encoder for cloudy image time series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on the train partition.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one model per cloud-coverage threshold.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated thresholds.
        #[arg(long)]
        thresholds: Option<String>,
    },
    /// Overall accuracy and confusion matrix of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        partition: Option<String>,
    },
    /// Cloud-sensitivity report and gate panels for one tile.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        tile: Option<usize>,
        /// Comma-separated hidden channels; defaults to the top-ranked ones.
        #[arg(long)]
        channels: Option<String>,
        #[arg(long)]
        top: Option<usize>,
        /// `<first>-<last>`, 1-based.
        #[arg(long)]
        steps: Option<String>,
    },
}

/// Config file, then `--set` overrides, then dedicated flags.
pub fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::config("--set", format!("expected KEY=VALUE, got {o:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join(CONFIG_FILE);
    fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn cmd_generate(cfg: &RunConfig, log: &mut dyn Write) -> Result<Dataset> {
    cfg.scene.validate()?;
    let ds = generate_dataset(&cfg.scene, &cfg.partition)?;
    prepare_out(cfg)?;
    write_dataset(&cfg.out, &ds)?;
    let pixels = (cfg.scene.height * cfg.scene.width) as f64;
    let mut table = String::from("frame\ttimestamp\tcoverage\tcloudy_pixels\n");
    for (t, (c, ts)) in ds.manifest.coverage.iter().zip(&ds.manifest.timestamps).enumerate() {
        let _ = writeln!(table, "{}\t{ts:.4}\t{c:.4}\t{}", t + 1, (c * pixels).round() as u64);
    }
    let counts = ds.tiles.iter().fold([0usize; 3], |mut n, t| {
        match t.partition {
            Partition::Train => n[0] += 1,
            Partition::Valid => n[1] += 1,
            Partition::Eval => n[2] += 1,
            Partition::Margin => {}
        }
        n
    });
    let w = io_err(&cfg.out);
    write!(log, "{table}").map_err(w)?;
    writeln!(
        log,
        "tiles: {} train, {} valid, {} eval -> {}",
        counts[0],
        counts[1],
        counts[2],
        cfg.out.display()
    )
    .map_err(io_err(&cfg.out))?;
    Ok(ds)
}

fn samples(ds: &Dataset, p: Partition) -> Vec<Sample<'_>> {
    ds.partition(p)
        .map(|t| Sample {
            sequence: &t.sequence,
            labels: &t.labels,
        })
        .collect()
}

/// Trains a fresh model on `ds` and writes metrics and checkpoints into `dir`.
fn train_into(
    cfg: &RunConfig,
    ds: &Dataset,
    seed: u64,
    dir: &Path,
    log: &mut dyn Write,
) -> Result<(EncoderParams, Vec<EpochMetrics>)> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cell = cfg.cell_config(ds);
    let mut params = init_params(cell, cfg.head_kernel, ds.manifest.scene.classes, seed)?;
    let train = samples(ds, Partition::Train);
    let valid = samples(ds, Partition::Valid);
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let clock = if cfg.record_wall_time {
        WallClock::Measure
    } else {
        WallClock::Omit
    };
    let metrics_path = dir.join(METRICS_FILE);
    let mut lines = String::new();
    let history = train_loop(&train, &valid, &mut params, &tcfg, clock, |m, p| {
        lines.push_str(&m.tsv_line());
        lines.push('\n');
        fs::write(&metrics_path, &lines).map_err(io_err(&metrics_path))?;
        writeln!(log, "{}", m.tsv_line()).map_err(io_err(dir))?;
        if cfg.checkpoint_every > 0 && m.epoch % cfg.checkpoint_every == 0 {
            let ck = dir.join("checkpoints");
            fs::create_dir_all(&ck).map_err(io_err(&ck))?;
            p.save(ck.join(format!("epoch_{:04}.clck", m.epoch)))?;
        }
        Ok(())
    })?;
    fs::write(&metrics_path, metrics_tsv(&history)).map_err(io_err(&metrics_path))?;
    params.save(dir.join(FINAL_CHECKPOINT))?;
    Ok((params, history))
}

pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<EpochMetrics>> {
    let ds = read_dataset(cfg.require_data()?)?;
    prepare_out(cfg)?;
    Ok(train_into(cfg, &ds, cfg.train.seed, &cfg.out, log)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub threshold: f64,
    pub frames: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub history: Vec<EpochMetrics>,
}

impl AblationRun {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().and_then(|m| m.val_accuracy)
    }
}

pub fn ablation_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("threshold_{index}"))
}

/// One independently seeded model per threshold (seed = base + index).
pub fn cmd_ablate(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<AblationRun>> {
    if cfg.thresholds.is_empty() {
        return Err(Error::config("thresholds", "at least one threshold is required"));
    }
    let ds = read_dataset(cfg.require_data()?)?;
    prepare_out(cfg)?;
    let mut runs = Vec::new();
    for (i, &threshold) in cfg.thresholds.iter().enumerate() {
        let kept = kept_frames(&ds.manifest.coverage, threshold)?;
        let filtered = ds.select_frames(&kept)?;
        let seed = cfg.train.seed.wrapping_add(i as u64);
        let dir = ablation_dir(&cfg.out, i);
        writeln!(log, "# threshold {threshold}: {} frames, seed {seed}", kept.len()).map_err(io_err(&cfg.out))?;
        let (_, history) = train_into(cfg, &filtered, seed, &dir, log)?;
        runs.push(AblationRun {
            threshold,
            frames: kept.len(),
            seed,
            dir,
            history,
        });
    }
    let mut summary = String::from("index\tthreshold\tframes\tseed\tfinal_val_accuracy\n");
    for (i, r) in runs.iter().enumerate() {
        let acc = r.final_accuracy().map_or("nan".to_string(), |a| format!("{a:.6}"));
        let _ = writeln!(summary, "{i}\t{}\t{}\t{}\t{acc}", r.threshold, r.frames, r.seed);
    }
    let path = cfg.out.join("ablation.tsv");
    fs::write(&path, &summary).map_err(io_err(&path))?;
    write!(log, "{summary}").map_err(io_err(&cfg.out))?;
    Ok(runs)
}

pub fn cmd_evaluate(cfg: &RunConfig, log: &mut dyn Write) -> Result<ConfusionMatrix> {
    let params = EncoderParams::load(cfg.require_checkpoint()?)?;
    let ds = read_dataset(cfg.require_data()?)?;
    prepare_out(cfg)?;
    let mut m = ConfusionMatrix::new(params.classes());
    let mut any = false;
    for tile in ds.partition(cfg.eval_partition) {
        let probs = crate::convlstm::predict(&tile.sequence, &params)?;
        m.accumulate(&argmax_labels(&probs)?, &tile.labels)?;
        any = true;
    }
    if !any {
        return Err(Error::EmptyDataset("no tiles in the requested partition"));
    }
    let report = format!(
        "partition\t{}\npixels\t{}\noverall_accuracy\t{:.6}\n",
        cfg.eval_partition,
        m.total(),
        m.overall_accuracy()
    );
    let path = cfg.out.join("evaluation.txt");
    fs::write(&path, &report).map_err(io_err(&path))?;
    let path = cfg.out.join("confusion.tsv");
    fs::write(&path, m.to_tsv()).map_err(io_err(&path))?;
    write!(log, "{report}{}", m.to_tsv()).map_err(io_err(&cfg.out))?;
    Ok(m)
}

/// Writes `sensitivity.tsv` and one panel per channel; returns the panel paths.
pub fn cmd_visualize(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let params = EncoderParams::load(cfg.require_checkpoint()?)?;
    let ds = read_dataset(cfg.require_data()?)?;
    let r = params.config.hidden_channels;
    if let Some(&bad) = cfg.channels.iter().find(|&&c| c >= r) {
        return Err(Error::OutOfRange {
            what: "channel",
            index: bad,
            limit: r,
        });
    }
    let tile = ds.tile(cfg.tile)?;
    let (_, trace) = encode(&tile.sequence, &params.forward, &params.config, true)?;
    let trace = trace.expect("trace requested");
    let report = cloud_sensitivity(&trace, &tile.mask);
    let channels = match (&report, cfg.channels.is_empty()) {
        (_, false) => cfg.channels.clone(),
        (Ok(rep), true) => rep.channels.iter().take(cfg.top).map(|c| c.channel).collect(),
        (Err(e), true) => {
            return Err(Error::config(
                "channels",
                format!("no ranking available ({e}); name channels explicitly"),
            ))
        }
    };
    let (first, last) = cfg.steps.unwrap_or((1, trace.len()));
    if first == 0 || first > last || last > trace.len() {
        return Err(Error::config(
            "steps",
            format!("{first}-{last} outside 1-{}", trace.len()),
        ));
    }
    prepare_out(cfg)?;
    match &report {
        Ok(rep) => {
            let path = cfg.out.join("sensitivity.tsv");
            fs::write(&path, rep.to_tsv()).map_err(io_err(&path))?;
            writeln!(
                log,
                "top channel {} ratio {:.4}",
                rep.channels[0].channel, rep.channels[0].ratio
            )
            .map_err(io_err(&cfg.out))?;
        }
        Err(e) => writeln!(log, "no sensitivity report: {e}").map_err(io_err(&cfg.out))?,
    }
    let steps: Vec<usize> = (first..=last).collect();
    let mut written = Vec::new();
    for &ch in &channels {
        let spec = PanelSpec {
            scale: cfg.panel_scale,
            ..PanelSpec::for_channel(ch, steps.clone())
        };
        let img = render_panel(&trace, &tile.sequence, &spec)?;
        let path = cfg.out.join(panel_file_name(&format!("tile{}", tile.id), ch, &steps));
        write_image(&img, &path)?;
        writeln!(log, "{}", path.display()).map_err(io_err(&cfg.out))?;
        written.push(path);
    }
    Ok(written)
}

/// Parses arguments and runs the selected subcommand, logging to `log`.
pub fn run<I, T>(args: I, log: &mut dyn Write) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let owned = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
    match &cli.command {
        Command::Generate { common } => {
            let cfg = resolve(common, &[])?;
            cmd_generate(&cfg, log).context("generate")?;
        }
        Command::Train { common, data } => {
            let cfg = resolve(common, &[("data", owned(data))])?;
            cmd_train(&cfg, log).context("train")?;
        }
        Command::Ablate {
            common,
            data,
            thresholds,
        } => {
            let cfg = resolve(common, &[("data", owned(data)), ("thresholds", thresholds.clone())])?;
            cmd_ablate(&cfg, log).context("ablate")?;
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
            partition,
        } => {
            let cfg = resolve(
                common,
                &[
                    ("checkpoint", owned(checkpoint)),
                    ("data", owned(data)),
                    ("partition", partition.clone()),
                ],
            )?;
            cmd_evaluate(&cfg, log).context("evaluate")?;
        }
        Command::Visualize {
            common,
            checkpoint,
            data,
            tile,
            channels,
            top,
            steps,
        } => {
            let cfg = resolve(
                common,
                &[
                    ("checkpoint", owned(checkpoint)),
                    ("data", owned(data)),
                    ("tile", tile.map(|t| t.to_string())),
                    ("channels", channels.clone()),
                    ("top", top.map(|t| t.to_string())),
                    ("steps", steps.clone()),
                ],
            )?;
            let panels = cmd_visualize(&cfg, log).context("visualize")?;
            if panels.is_empty() {
                bail!("visualize: no panels written");
            }
        }
    }
    Ok(())
}
