#![allow(dead_code)]

use std::path::Path;

use lstc::cli::{DataSource, RunConfig};
use lstc::data::SynthConfig;
use lstc::training::TrainingConfig;

pub fn tiny_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        train_videos: 6,
        test_videos: 4,
        clips: [10, 14],
        d: 8,
        long_duration: [4, 6],
        shift_magnitude: 3.0,
        seed,
        ..SynthConfig::default()
    }
}

pub fn tiny_training(rounds: usize) -> TrainingConfig {
    TrainingConfig {
        rounds,
        epochs: 1,
        subsets: 4,
        layers: 1,
        heads: 2,
        batch_size: 4,
        ..TrainingConfig::default()
    }
}

pub fn tiny_run(out: &Path, rounds: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        output_dir: out.to_path_buf(),
        data: DataSource::Synthetic(tiny_synth(seed)),
        training: tiny_training(rounds),
        ..RunConfig::default()
    };
    cfg.apply_seed(seed);
    cfg
}
