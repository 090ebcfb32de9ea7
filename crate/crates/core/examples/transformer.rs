//! Scores one short-term (1-clip) and one long-term (3-clip) window with
//! freshly initialized tubelet transformers and prints the per-layer
//! attention that CLS pays to each tubelet.
//!
//! ```text
//! cargo run --release --example transformer
//! ```

use lstc::data::{generate_dataset, GridShape, SynthConfig};
use lstc::model::{init_params, tokenize, ModelConfig, PositionTag};

fn main() -> lstc::Result<()> {
    let synth = SynthConfig {
        train_videos: 2,
        test_videos: 0,
        ..Default::default()
    };
    let (videos, _) = generate_dataset(&synth)?;
    let video = &videos[0];
    println!("video {}: {} clips, label {}", video.id, video.num_clips(), video.label);

    for clips in [1, 3] {
        let config = ModelConfig {
            d: synth.d,
            clips,
            grid: GridShape::new(2, 2),
            layers: 3,
            heads: 8,
        };
        let model = init_params(7, config)?;
        println!("\n{clips}-clip model: {} tokens, {} parameters", config.tokens(), model.params.num_values());
        let tokens = tokenize(&video.features, 0, clips)?;
        let (score, record) = model.score_window(&tokens)?;
        println!("score of window starting at clip 0: {score:.4}");
        for (l, layer) in record.layers.iter().enumerate() {
            let n = tokens.len();
            let heads = layer.dims()[0];
            // CLS row averaged over heads
            let row: Vec<f64> = (0..n)
                .map(|j| (0..heads).map(|h| layer.data()[h * n * n + j]).sum::<f64>() / heads as f64)
                .collect();
            let cells: Vec<String> = tokens
                .tags
                .iter()
                .zip(&row)
                .map(|(tag, a)| match tag {
                    PositionTag::Cls => format!("cls {a:.3}"),
                    PositionTag::Tubelet { clip, row, col } => format!("({clip},{row},{col}) {a:.3}"),
                })
                .collect();
            println!("layer {l}: {}", cells.join("  "));
        }
    }
    Ok(())
}
