//! The MIL ranking loss, the clip cross-entropy and pseudo labels on
//! hand-written scores.
//!
//! ```text
//! cargo run --release --example losses
//! ```

use lstc::training::{
    combined_loss, generate_pseudo_labels, mil_ranking_loss, pseudo_label, BagPair, MilBatch,
};

fn main() -> lstc::Result<()> {
    let batch = MilBatch {
        pairs: vec![
            BagPair {
                abnormal: vec![0.2, 0.9, 0.5, 0.1],
                normal: vec![0.3, 0.4, 0.1, 0.2],
            },
            BagPair {
                abnormal: vec![0.6, 0.7, 0.95, 0.3],
                normal: vec![0.05, 0.1, 0.2, 0.15],
            },
        ],
    };
    let (tau, alpha, beta, mu) = (1.0, 0.01, 0.8, 0.85);
    println!("MIL ranking loss: {:.5}", mil_ranking_loss(&batch, tau, alpha)?);

    // clip scores of one abnormal and one normal video from the other network
    let abnormal = [0.1, 0.3, 0.86, 0.97, 0.85, 0.2];
    let normal = [0.9, 0.95, 0.1, 0.2, 0.3, 0.4];
    let labels = generate_pseudo_labels([("a", 1, &abnormal[..]), ("n", 0, &normal[..])], mu)?;
    for (id, l) in labels.iter() {
        println!("pseudo labels of {id}: {l:?}");
    }
    println!(
        "threshold is strict: label(0.85) = {}, label(0.8500001) = {}",
        pseudo_label(0.85, 1, mu),
        pseudo_label(0.8500001, 1, mu)
    );

    // the current network's clip scores against those labels
    let current = [0.2, 0.4, 0.7, 0.9, 0.6, 0.1];
    let terms: Vec<(f64, f64)> = current
        .iter()
        .zip(labels.get("a").unwrap_or_default())
        .map(|(&s, &y)| (s, y))
        .collect();
    let with_ce = combined_loss(&batch, &terms, tau, alpha, beta)?;
    let mil_only = combined_loss(&batch, &terms, tau, alpha, 0.0)?;
    println!("combined: mil {:.5} + {beta} x ce {:.5} = {:.5}", with_ce.mil, with_ce.ce, with_ce.total);
    println!("with beta = 0 the total is the MIL loss: {}", mil_only.total == mil_only.mil);
    Ok(())
}
