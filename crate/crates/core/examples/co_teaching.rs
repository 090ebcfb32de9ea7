//! Co-teaching on a synthetic benchmark, compared with MIL-only training.
//!
//! ```text
//! cargo run --release --example co_teaching -- [rounds] [epochs] [shift] [seed]
//! ```

use std::time::Instant;

use lstc::data::{generate_dataset, SynthConfig};
use lstc::training::{co_teach, frame_auc, select_inference_model, train_standalone, TrainingConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn main() -> lstc::Result<()> {
    let synth = SynthConfig {
        shift_magnitude: arg(3, 6.0),
        scene_scale: 0.25,
        spatial_extent: [1, 2],
        seed: arg(4, 0),
        ..Default::default()
    };
    let cfg = TrainingConfig {
        rounds: arg(1, 4),
        epochs: arg(2, 3),
        batch_size: 4,
        lr_transformer: 3e-3,
        seed: synth.seed,
        ..Default::default()
    };
    let (train, test) = generate_dataset(&synth)?;
    println!("{} train / {} test videos, shift {}", train.len(), test.len(), synth.shift_magnitude);

    let start = Instant::now();
    let co = co_teach(&train, Some(&test), &cfg, |_, r| {
        println!(
            "round {} pass {} {}: final loss {:.4} (mil {:.4}, ce {:.4}), train video AUC {:.3}, test frame AUC {:.3}{}",
            r.round,
            r.pass,
            r.network,
            r.epoch_losses.last().map_or(f64::NAN, |e| e.total),
            r.epoch_losses.last().map_or(f64::NAN, |e| e.mil),
            r.epoch_losses.last().map_or(f64::NAN, |e| e.ce),
            r.train_video_auc,
            r.test_frame_auc.unwrap_or(f64::NAN),
            if r.degenerate { " (degenerate labels)" } else { "" },
        );
        Ok(())
    })?;
    let (chosen, sel) = select_inference_model(&co.stn, &co.ltn, &train)?;
    let co_auc = frame_auc(chosen, &test)?.unwrap_or(f64::NAN);
    println!("co-teaching picked {} ({:.1}s): test frame AUC {co_auc:.4}", sel.chosen, start.elapsed().as_secs_f64());

    let start = Instant::now();
    let alone = train_standalone(&train, Some(&test), &cfg, |_, _| Ok(()))?;
    let (chosen, sel) = select_inference_model(&alone.stn, &alone.ltn, &train)?;
    let alone_auc = frame_auc(chosen, &test)?.unwrap_or(f64::NAN);
    println!("MIL-only picked {} ({:.1}s): test frame AUC {alone_auc:.4}", sel.chosen, start.elapsed().as_secs_f64());
    Ok(())
}
