#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cloudlstm::cli::RunConfig;

pub const TINY: &str = "\
height=48
width=48
tile_size=12
frames=8
bands=3
classes=3
parcel_size=6
cloud_probability=0.6
block_size=24
margin=6
hidden=4
epochs=2
batch_size=2
thresholds=1.01,0.5,0
top=2
panel_scale=2
";

pub fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_text(TINY).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

/// Every regular file below `root`, keyed by its relative path.
pub fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Runs generate, train, ablate and visualize on the tiny configuration
/// below `root`.
pub fn tiny_pipeline(root: &Path) {
    use cloudlstm::cli::{cmd_ablate, cmd_generate, cmd_train, cmd_visualize, FINAL_CHECKPOINT};
    let mut sink = std::io::sink();
    let data = root.join("data");
    let ds = cmd_generate(&tiny_config(&data), &mut sink).unwrap();
    let mut cfg = tiny_config(&root.join("train"));
    cfg.data = Some(data.clone());
    cfg.checkpoint_every = 1;
    cmd_train(&cfg, &mut sink).unwrap();
    let mut cfg = tiny_config(&root.join("ablate"));
    cfg.data = Some(data.clone());
    cmd_ablate(&cfg, &mut sink).unwrap();
    let mut cfg = tiny_config(&root.join("viz"));
    cfg.data = Some(data);
    cfg.checkpoint = Some(root.join("train").join(FINAL_CHECKPOINT));
    cfg.tile = ds.tiles[0].id;
    cmd_visualize(&cfg, &mut sink).unwrap();
}
