//! Generates a synthetic benchmark with planted short and long anomalies,
//! writes it as feature files plus manifests, reads it back and summarizes.
//!
//! ```text
//! cargo run --release --example synthetic_data -- [out_dir] [shift]
//! ```

use std::path::PathBuf;

use lstc::data::{generate_dataset, load_manifest, write_dataset, SynthConfig, VideoRecord};

fn summarize(name: &str, videos: &[VideoRecord]) {
    let abnormal: Vec<&VideoRecord> = videos.iter().filter(|v| v.is_abnormal()).collect();
    let clips: usize = videos.iter().map(VideoRecord::num_clips).sum();
    let anomalous: usize = abnormal
        .iter()
        .flat_map(|v| &v.anomaly_spans)
        .map(|s| s.clip_end - s.clip_start)
        .sum();
    println!(
        "{name}: {} videos ({} abnormal), {clips} clips, {anomalous} anomalous clips",
        videos.len(),
        abnormal.len()
    );
    for v in abnormal.iter().take(3) {
        let spans: Vec<String> = v
            .anomaly_spans
            .iter()
            .map(|s| format!("clips {}..{} rows {:?} cols {:?}", s.clip_start, s.clip_end, s.rows, s.cols))
            .collect();
        println!("  {} ({} clips): {}", v.id, v.num_clips(), spans.join("; "));
    }
}

/// Mean L2 norm of tubelets inside anomaly blocks and of all other tubelets.
fn mean_norms(videos: &[VideoRecord]) -> (f64, f64) {
    let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
    for v in videos {
        let grid = v.features.grid();
        for clip in 0..v.num_clips() {
            for row in 0..grid.rows {
                for col in 0..grid.cols {
                    let norm = v.features.tubelet(clip, row, col).iter().map(|x| x * x).sum::<f64>().sqrt();
                    let acc = if v.anomaly_spans.iter().any(|s| s.contains(clip, row, col)) {
                        &mut inside
                    } else {
                        &mut outside
                    };
                    acc.0 += norm;
                    acc.1 += 1;
                }
            }
        }
    }
    (inside.0 / inside.1.max(1) as f64, outside.0 / outside.1.max(1) as f64)
}

fn main() -> lstc::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("lstc-synthetic"), PathBuf::from);
    let cfg = SynthConfig {
        shift_magnitude: std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1.5),
        ..Default::default()
    };
    let (train, test) = generate_dataset(&cfg)?;
    summarize("train", &train);
    summarize("test", &test);
    let (inside, outside) = mean_norms(&train);
    println!("mean tubelet norm: {inside:.3} inside anomalies, {outside:.3} elsewhere");

    let manifest = write_dataset(&train, &out, "train.json")?;
    write_dataset(&test, &out, "test.json")?;
    let (m, reloaded) = load_manifest(&manifest)?;
    println!(
        "wrote {} (d={}, grid {}, {} frames per clip); reload identical: {}",
        manifest.display(),
        m.d,
        m.grid,
        m.frames_per_clip,
        reloaded.iter().zip(&train).all(|(a, b)| a.features == b.features && a.frame_gt == b.frame_gt)
    );
    Ok(())
}
