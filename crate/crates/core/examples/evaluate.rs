//! Frame-level ROC AUC with tied scores, and a score-curve CSV round trip.
//!
//! ```text
//! cargo run --release --example evaluate
//! ```

use lstc::evaluation::{encode_curve, export_curve, frame_scores, read_curve, roc_auc, ScoreCurve};

fn main() -> lstc::Result<()> {
    // one video, 6 clips of 4 frames, anomaly over clips 2..4
    let clip_scores = [0.1, 0.2, 0.8, 0.7, 0.2, 0.1];
    let frames = frame_scores(&clip_scores, 4);
    let gt: Vec<u8> = (0..frames.len()).map(|f| u8::from((8..16).contains(&f))).collect();
    let roc = roc_auc(&frames, &gt)?;
    println!(
        "AUC {:.4} over {} positive / {} negative frames ({} ROC points, trapezoid area {:.4})",
        roc.auc,
        roc.positives,
        roc.negatives,
        roc.points.len(),
        roc.trapezoid_area()
    );

    // ties between classes count one half
    let tied = roc_auc(&[0.5, 0.5, 0.5, 0.9], &[1, 0, 0, 1])?;
    println!("AUC with a cross-class tie: {}", tied.auc);
    if let Err(e) = roc_auc(&[0.3, 0.4], &[0, 0]) {
        println!("single-class input is rejected: {e}");
    }

    let curve = ScoreCurve {
        video_id: "demo".into(),
        scores: frames,
        gt: Some(gt),
    };
    let path = std::env::temp_dir().join("lstc-evaluate").join("demo.csv");
    export_curve(&curve, &path)?;
    let back = read_curve(&path)?;
    println!(
        "wrote {}; re-encoding is byte-identical: {}",
        path.display(),
        encode_curve(&back)? == encode_curve(&curve)?
    );
    println!("{}", encode_curve(&curve)?.lines().take(4).collect::<Vec<_>>().join("\n"));
    Ok(())
}
