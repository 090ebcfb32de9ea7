//! Attention rollout: which tubelets the CLS token ends up drawing from.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::GridShape;
use crate::io::write_file;
use crate::model::AttentionRecord;
use crate::{Error, Result};

const STOCHASTIC_TOLERANCE: f64 = 1e-6;

/// CLS relevance over the tubelets of one window, `(clips, rows, cols)`
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap {
    pub clips: usize,
    pub grid: GridShape,
    pub values: Vec<f64>,
    /// Relevance the CLS token keeps on itself.
    pub cls: f64,
}

impl RelevanceMap {
    pub fn get(&self, clip: usize, row: usize, col: usize) -> f64 {
        self.values[(clip * self.grid.rows + row) * self.grid.cols + col]
    }
}

fn check_stochastic(m: &[f64], n: usize, what: &str) -> Result<()> {
    for (r, row) in m.chunks(n).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v.is_nan() || v < 0.0) || (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::Data(format!("{what}: row {r} is not stochastic (sum {sum})")));
        }
    }
    Ok(())
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Rolled-out `N × N` relevance matrix, row-major.
///
/// Heads are averaged, each layer becomes `Â = ½(A + I)` with rows
/// renormalized, and layers are composed as `Â_L ⋯ Â_1`.
pub fn rollout_matrix(record: &AttentionRecord) -> Result<(usize, Vec<f64>)> {
    let Some(first) = record.layers.first() else {
        return Err(Error::Data("attention record has no layers".into()));
    };
    let n = match first.dims() {
        [_, r, c] if r == c => *r,
        dims => return Err(Error::Data(format!("attention must be [heads, N, N], got {dims:?}"))),
    };
    let mut joint: Option<Vec<f64>> = None;
    for (l, layer) in record.layers.iter().enumerate() {
        let dims = layer.dims();
        if dims.len() != 3 || dims[1] != n || dims[2] != n {
            return Err(Error::Data(format!("layer {l}: attention {dims:?} is not [heads, {n}, {n}]")));
        }
        let heads = dims[0];
        let mut avg = vec![0.0; n * n];
        for h in layer.data().chunks(n * n) {
            for (a, v) in avg.iter_mut().zip(h) {
                *a += v / heads as f64;
            }
        }
        check_stochastic(&avg, n, &format!("layer {l}"))?;
        for i in 0..n {
            avg[i * n + i] += 1.0;
            let row = &mut avg[i * n..(i + 1) * n];
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        joint = Some(match joint {
            None => avg,
            Some(prev) => matmul(&avg, &prev, n),
        });
    }
    Ok((n, joint.expect("at least one layer")))
}

/// CLS row of the rolled-out attention over tubelet tokens, reshaped to
/// `(clips, rows, cols)`.
pub fn attention_rollout(record: &AttentionRecord, clips: usize, grid: GridShape) -> Result<RelevanceMap> {
    let (n, joint) = rollout_matrix(record)?;
    if n != 1 + clips * grid.tubelets() {
        return Err(Error::incompatible(
            "rollout tokens",
            n,
            format!("1 + {clips}·{}", grid.tubelets()),
        ));
    }
    Ok(RelevanceMap {
        clips,
        grid,
        values: joint[1..n].to_vec(),
        cls: joint[0],
    })
}

/// Max-normalized CSV: one block of `rows` lines per clip, blocks separated
/// by a blank line. An all-zero map is written as zeros.
pub fn encode_attention_map(map: &RelevanceMap) -> String {
    let max = map.values.iter().cloned().fold(0.0, f64::max);
    let mut out = String::new();
    for clip in 0..map.clips {
        if clip > 0 {
            out.push('\n');
        }
        for row in 0..map.grid.rows {
            let line: Vec<String> = (0..map.grid.cols)
                .map(|col| {
                    let v = map.get(clip, row, col);
                    let v = if max > 0.0 { v / max } else { 0.0 };
                    format!("{}", v as f32)
                })
                .collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
    }
    out
}

pub fn export_attention_map(map: &RelevanceMap, path: &Path) -> Result<()> {
    write_file(path, encode_attention_map(map).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn record(layers: Vec<Vec<f64>>, n: usize) -> AttentionRecord {
        AttentionRecord {
            layers: layers.into_iter().map(|d| Tensor::new(vec![1, n, n], d).unwrap()).collect(),
        }
    }

    #[test]
    fn uniform_attention_spreads_evenly_over_tubelets() {
        let n = 5;
        let map = attention_rollout(&record(vec![vec![0.2; 25]], n), 1, GridShape::new(2, 2)).unwrap();
        for &v in &map.values {
            assert!((v - 0.1).abs() < 1e-15);
        }
        assert!((map.cls - 0.6).abs() < 1e-15);
    }

    #[test]
    fn identity_attention_keeps_everything_on_cls() {
        let n = 5;
        let eye: Vec<f64> = (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let map = attention_rollout(&record(vec![eye.clone(), eye.clone(), eye], n), 1, GridShape::new(2, 2)).unwrap();
        assert_eq!(map.cls, 1.0);
        assert!(map.values.iter().all(|&v| v == 0.0));
        assert_eq!(encode_attention_map(&map), "0,0\n0,0\n");
    }

    #[test]
    fn non_stochastic_input_is_rejected() {
        assert!(rollout_matrix(&record(vec![vec![0.5; 4]], 2)).is_ok());
        assert!(rollout_matrix(&record(vec![vec![0.7; 4]], 2)).is_err());
        let bad = AttentionRecord {
            layers: vec![Tensor::zeros(vec![1, 2, 3])],
        };
        assert!(rollout_matrix(&bad).is_err());
    }

    #[test]
    fn export_layout_and_normalization() {
        let map = RelevanceMap {
            clips: 2,
            grid: GridShape::new(2, 2),
            values: vec![0.1, 0.2, 0.05, 0.05, 0.4, 0.1, 0.05, 0.05],
            cls: 0.0,
        };
        let text = encode_attention_map(&map);
        assert_eq!(text, "0.25,0.5\n0.125,0.125\n\n1,0.25\n0.125,0.125\n");
        let constant = RelevanceMap {
            values: vec![0.3; 8],
            ..map
        };
        assert!(encode_attention_map(&constant).lines().filter(|l| !l.is_empty()).all(|l| l == "1,1"));
    }
}
