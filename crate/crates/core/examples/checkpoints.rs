//! Binary feature files and checkpoints: write, read back, and score a
//! feature file with a stored model.
//!
//! ```text
//! cargo run --release --example checkpoints
//! ```

use lstc::cli::cmd_score;
use lstc::data::{generate_dataset, load_feature_file, write_feature_file, SynthConfig};
use lstc::model::{checkpoint_sidecar_path, read_checkpoint, write_checkpoint, CheckpointMeta};
use lstc::training::{init_networks, TrainingConfig};

fn main() -> lstc::Result<()> {
    let dir = std::env::temp_dir().join("lstc-checkpoints");
    let synth = SynthConfig {
        train_videos: 4,
        test_videos: 0,
        ..Default::default()
    };
    let (videos, _) = generate_dataset(&synth)?;

    let features = dir.join("video.feat");
    write_feature_file(&videos[0].features, &features)?;
    let volume = load_feature_file(&features)?;
    println!(
        "feature file {}: {} clips x {} tubelets x d={}, identical after reload: {}",
        features.display(),
        volume.num_clips(),
        volume.grid().tubelets(),
        volume.d(),
        volume == videos[0].features
    );

    let cfg = TrainingConfig::default();
    let (stn, _) = init_networks(&videos, &cfg)?;
    let c = &stn.model.config;
    let meta = CheckpointMeta {
        d: c.d,
        clips: c.clips,
        grid: c.grid,
        layers: c.layers,
        heads: c.heads,
        seed: cfg.seed,
        network: stn.kind.to_string(),
        subset_clips: stn.subset_clips,
        frames_per_clip: synth.frames_per_clip,
    };
    let ckpt = dir.join("stn.ckpt");
    write_checkpoint(&ckpt, &stn.model, &meta)?;
    let (model, back) = read_checkpoint(&ckpt)?;
    println!(
        "checkpoint {} ({} tensors, sidecar {}): largest parameter change {:.1e} (stored as f32), metadata identical: {}",
        ckpt.display(),
        model.params.len(),
        checkpoint_sidecar_path(&ckpt).display(),
        model
            .params
            .iter()
            .map(|(name, t)| t.max_abs_diff(stn.model.params.get(name).expect("same names")))
            .fold(0.0, f64::max),
        back == meta
    );

    let curve = cmd_score(&ckpt, &features, &dir.join("video.csv"))?;
    println!(
        "scored {} frames of {}; first clip {:.4}",
        curve.scores.len(),
        curve.video_id,
        curve.scores[0]
    );
    Ok(())
}
