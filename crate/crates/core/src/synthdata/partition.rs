//! Block-wise spatial partitioning into train/valid/eval.
//!
//! The scene is covered by a regular grid of square blocks. Each block loses
//! a `margin`-wide strip along its bottom and right edges, so neighbouring
//! blocks are always separated by at least `margin` pixels. Tiles lying fully
//! inside a block's remaining area inherit the block's partition; all other
//! tiles are discarded.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::{rng_for, STREAM_PARTITION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Valid,
    Eval,
    Margin,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Valid => "valid",
            Partition::Eval => "eval",
            Partition::Margin => "margin",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "valid" => Ok(Partition::Valid),
            "eval" => Ok(Partition::Eval),
            "margin" => Ok(Partition::Margin),
            other => Err(Error::config("partition", format!("unknown partition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionConfig {
    pub block_size: usize,
    pub margin: usize,
    /// Relative weights of train, valid and eval.
    pub ratios: [u32; 3],
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            block_size: 96,
            margin: 12,
            ratios: [4, 1, 1],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilePlacement {
    /// Top-left pixel.
    pub y: usize,
    pub x: usize,
    /// Enclosing block (row-major index into the block grid).
    pub block: usize,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionAssignment {
    pub blocks_y: usize,
    pub blocks_x: usize,
    pub block_size: usize,
    pub margin: usize,
    pub tile_size: usize,
    pub blocks: Vec<Partition>,
    pub tiles: Vec<TilePlacement>,
}

impl PartitionAssignment {
    pub fn block_counts(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for b in &self.blocks {
            match b {
                Partition::Train => n[0] += 1,
                Partition::Valid => n[1] += 1,
                Partition::Eval => n[2] += 1,
                Partition::Margin => {}
            }
        }
        n
    }
}

/// Largest-remainder quota of `n` blocks over `ratios`; when there are at
/// least three blocks every partition with non-zero weight gets one.
fn quotas(n: usize, ratios: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let exact: Vec<f64> = ratios.iter().map(|&r| n as f64 * r as f64 / total as f64).collect();
    let mut q = [0usize; 3];
    for i in 0..3 {
        q[i] = exact[i].floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        (exact[b] - q[b] as f64)
            .total_cmp(&(exact[a] - q[a] as f64))
            .then(a.cmp(&b))
    });
    let mut left = n - q.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        q[i] += 1;
        left -= 1;
    }
    if n >= 3 {
        for i in 1..3 {
            if q[i] == 0 && ratios[i] > 0 {
                let donor = (0..3)
                    .max_by_key(|&j| (q[j], std::cmp::Reverse(j)))
                    .expect("three slots");
                q[donor] -= 1;
                q[i] += 1;
            }
        }
    }
    q
}

pub fn partition_blocks(
    height: usize,
    width: usize,
    tile_size: usize,
    cfg: &PartitionConfig,
) -> Result<PartitionAssignment> {
    if tile_size == 0 {
        return Err(Error::config("tile_size", "must be >= 1"));
    }
    if cfg.block_size == 0 || !cfg.block_size.is_multiple_of(tile_size) {
        return Err(Error::config(
            "block_size",
            format!("{} is not a multiple of the tile size {tile_size}", cfg.block_size),
        ));
    }
    if cfg.margin >= cfg.block_size {
        return Err(Error::config("margin", "must be smaller than the block size"));
    }
    if cfg.ratios.iter().all(|&r| r == 0) {
        return Err(Error::config("ratios", "at least one ratio must be positive"));
    }
    let blocks_y = height.div_ceil(cfg.block_size);
    let blocks_x = width.div_ceil(cfg.block_size);
    let n = blocks_y * blocks_x;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(cfg.seed, STREAM_PARTITION, 0));
    let q = quotas(n, cfg.ratios);
    let mut blocks = vec![Partition::Train; n];
    for (rank, &b) in order.iter().enumerate() {
        blocks[b] = if rank < q[0] {
            Partition::Train
        } else if rank < q[0] + q[1] {
            Partition::Valid
        } else {
            Partition::Eval
        };
    }

    let mut tiles = Vec::new();
    for ty in 0..height / tile_size {
        for tx in 0..width / tile_size {
            let (y, x) = (ty * tile_size, tx * tile_size);
            let (by, bx) = (y / cfg.block_size, x / cfg.block_size);
            let block = by * blocks_x + bx;
            let usable_y = by * cfg.block_size + cfg.block_size - cfg.margin;
            let usable_x = bx * cfg.block_size + cfg.block_size - cfg.margin;
            let inside = y + tile_size <= usable_y && x + tile_size <= usable_x;
            tiles.push(TilePlacement {
                y,
                x,
                block,
                partition: if inside { blocks[block] } else { Partition::Margin },
            });
        }
    }
    Ok(PartitionAssignment {
        blocks_y,
        blocks_x,
        block_size: cfg.block_size,
        margin: cfg.margin,
        tile_size,
        blocks,
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gap(a: &TilePlacement, b: &TilePlacement, size: usize) -> usize {
        let axis = |p: usize, q: usize| {
            if p + size <= q {
                q - (p + size)
            } else {
                p.saturating_sub(q + size)
            }
        };
        axis(a.y, b.y).max(axis(a.x, b.x))
    }

    #[test]
    fn single_block_without_margin() {
        let cfg = PartitionConfig {
            block_size: 96,
            margin: 0,
            ..Default::default()
        };
        let a = partition_blocks(96, 96, 24, &cfg).unwrap();
        assert_eq!(a.blocks.len(), 1);
        assert_eq!(a.tiles.len(), 16);
        let first = a.tiles[0].partition;
        assert_ne!(first, Partition::Margin);
        assert!(a.tiles.iter().all(|t| t.partition == first));
    }

    #[test]
    fn rejects_block_not_multiple_of_tile() {
        let cfg = PartitionConfig {
            block_size: 100,
            ..Default::default()
        };
        assert!(partition_blocks(200, 200, 24, &cfg).is_err());
    }

    #[test]
    fn tiles_stay_inside_blocks_and_apart() {
        let cfg = PartitionConfig::default();
        let a = partition_blocks(288, 192, 24, &cfg).unwrap();
        let kept: Vec<_> = a.tiles.iter().filter(|t| t.partition != Partition::Margin).collect();
        assert!(!kept.is_empty());
        for t in &kept {
            let by = t.block / a.blocks_x;
            let bx = t.block % a.blocks_x;
            assert!(t.y >= by * 96 && t.y + 24 <= by * 96 + 96 - 12);
            assert!(t.x >= bx * 96 && t.x + 24 <= bx * 96 + 96 - 12);
            assert_eq!(t.partition, a.blocks[t.block]);
        }
        for (i, s) in kept.iter().enumerate() {
            for t in &kept[i + 1..] {
                if s.partition != t.partition {
                    assert!(gap(s, t, 24) >= 12);
                }
            }
        }
    }

    #[test]
    fn ratio_over_many_blocks() {
        let cfg = PartitionConfig {
            block_size: 24,
            margin: 0,
            seed: 3,
            ..Default::default()
        };
        let a = partition_blocks(24 * 30, 24 * 20, 24, &cfg).unwrap();
        let [tr, va, ev] = a.block_counts();
        assert_eq!(tr + va + ev, 600);
        assert_eq!([tr, va, ev], [400, 100, 100]);
    }

    #[test]
    fn small_grids_fill_every_partition() {
        assert_eq!(quotas(4, [4, 1, 1]), [2, 1, 1]);
        assert_eq!(quotas(1, [4, 1, 1]), [1, 0, 0]);
        assert_eq!(quotas(6, [4, 1, 1]), [4, 1, 1]);
        assert_eq!(quotas(3, [1, 0, 1]), [2, 0, 1]);
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = PartitionConfig::default();
        let a = partition_blocks(960, 960, 24, &cfg).unwrap();
        let b = partition_blocks(960, 960, 24, &cfg).unwrap();
        assert_eq!(a, b);
        let c = partition_blocks(960, 960, 24, &PartitionConfig { seed: 99, ..cfg }).unwrap();
        assert_ne!(a.blocks, c.blocks);
    }
}
