//! Trains a long-term network briefly on an easy synthetic set and prints
//! attention-rollout relevance of the highest-scoring window of a few
//! abnormal test videos next to the planted anomaly block.
//!
//! ```text
//! cargo run --release --example attention_rollout -- [epochs]
//! ```

use lstc::data::{generate_dataset, SynthConfig};
use lstc::evaluation::{attention_rollout, encode_attention_map};
use lstc::model::tokenize;
use lstc::training::{init_networks, train_pass, TrainingConfig};

fn main() -> lstc::Result<()> {
    let synth = SynthConfig {
        shift_magnitude: 6.0,
        scene_scale: 0.25,
        spatial_extent: [1, 2],
        ..Default::default()
    };
    let cfg = TrainingConfig {
        epochs: std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3),
        batch_size: 4,
        lr_transformer: 3e-3,
        ..Default::default()
    };
    let (train, test) = generate_dataset(&synth)?;
    let (_, mut ltn) = init_networks(&train, &cfg)?;
    train_pass(&mut ltn, &train, None, &cfg, 1)?;

    let c = ltn.window_clips();
    for video in test.iter().filter(|v| v.is_abnormal()).take(3) {
        let scores = ltn.window_scores(video)?;
        let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        let (_, record) = ltn.model.score_window(&tokenize(&video.features, best, c)?)?;
        let map = attention_rollout(&record, c, video.features.grid())?;
        println!("{}: window {best}..{} scores {:.3}", video.id, best + c, scores[best]);
        for s in &video.anomaly_spans {
            println!("  planted: clips {}..{} rows {:?} cols {:?}", s.clip_start, s.clip_end, s.rows, s.cols);
        }
        println!("  relevance (rows of the grid, one block per clip; CLS keeps {:.3}):", map.cls);
        for line in encode_attention_map(&map).lines() {
            println!("    {line}");
        }
    }
    Ok(())
}
