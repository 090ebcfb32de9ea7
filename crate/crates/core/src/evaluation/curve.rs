//! Per-frame score curves as CSV: `frame_index,score[,gt]`.
//!
//! Scores are printed as the shortest decimal that round-trips the value
//! at 32-bit precision, so a curve that was read back writes out
//! byte-identically.

use std::fmt::Write as _;
use std::path::Path;

use crate::io::{read_file, write_file};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCurve {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub gt: Option<Vec<u8>>,
}

impl ScoreCurve {
    pub fn validate(&self) -> Result<()> {
        if let Some(gt) = &self.gt {
            if gt.len() != self.scores.len() {
                return Err(Error::Data(format!(
                    "{}: {} scores but {} ground-truth frames",
                    self.video_id,
                    self.scores.len(),
                    gt.len()
                )));
            }
        }
        if let Some(i) = self.scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Data(format!(
                "{}: frame {i} score {} outside [0, 1]",
                self.video_id, self.scores[i]
            )));
        }
        Ok(())
    }
}

pub fn encode_curve(curve: &ScoreCurve) -> Result<String> {
    curve.validate()?;
    let mut out = String::from(if curve.gt.is_some() { "frame_index,score,gt\n" } else { "frame_index,score\n" });
    for (i, &s) in curve.scores.iter().enumerate() {
        let _ = write!(out, "{i},{}", s as f32);
        if let Some(gt) = &curve.gt {
            let _ = write!(out, ",{}", gt[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_curve(text: &str, video_id: &str, path: &Path) -> Result<ScoreCurve> {
    let bad = |line: usize, reason: String| Error::Data(format!("{}:{}: {reason}", path.display(), line + 1));
    let mut lines = text.lines();
    let with_gt = match lines.next() {
        Some("frame_index,score") => false,
        Some("frame_index,score,gt") => true,
        other => return Err(bad(0, format!("unexpected header {other:?}"))),
    };
    let mut scores = Vec::new();
    let mut gt = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + with_gt as usize {
            return Err(bad(i + 1, format!("expected {} fields", 2 + with_gt as usize)));
        }
        if fields[0].parse::<usize>().ok() != Some(i) {
            return Err(bad(i + 1, format!("frame index {:?}, expected {i}", fields[0])));
        }
        let s: f32 = fields[1].parse().map_err(|_| bad(i + 1, format!("bad score {:?}", fields[1])))?;
        scores.push(s as f64);
        if with_gt {
            match fields[2] {
                "0" => gt.push(0),
                "1" => gt.push(1),
                other => return Err(bad(i + 1, format!("bad gt {other:?}"))),
            }
        }
    }
    let curve = ScoreCurve {
        video_id: video_id.to_string(),
        scores,
        gt: with_gt.then_some(gt),
    };
    curve.validate()?;
    Ok(curve)
}

pub fn export_curve(curve: &ScoreCurve, path: &Path) -> Result<()> {
    write_file(path, encode_curve(curve)?.as_bytes())
}

/// Reads a curve CSV; the video id is taken from the file stem.
pub fn read_curve(path: &Path) -> Result<ScoreCurve> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_curve(&text, &id, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_frames_four_lines() {
        let c = ScoreCurve {
            video_id: "v".into(),
            scores: vec![0.25, 0.5, 0.125],
            gt: Some(vec![0, 1, 1]),
        };
        let text = encode_curve(&c).unwrap();
        assert_eq!(text, "frame_index,score,gt\n0,0.25,0\n1,0.5,1\n2,0.125,1\n");
        assert_eq!(decode_curve(&text, "v", Path::new("v.csv")).unwrap(), c);
    }

    #[test]
    fn gt_column_omitted_when_absent() {
        let c = ScoreCurve {
            video_id: "v".into(),
            scores: vec![0.1],
            gt: None,
        };
        assert_eq!(encode_curve(&c).unwrap(), "frame_index,score\n0,0.1\n");
    }

    #[test]
    fn reread_is_within_nine_digits() {
        let c = ScoreCurve {
            video_id: "v".into(),
            scores: vec![0.123456789123, 0.999999999],
            gt: None,
        };
        let back = decode_curve(&encode_curve(&c).unwrap(), "v", Path::new("v")).unwrap();
        for (a, b) in back.scores.iter().zip(&c.scores) {
            assert!((a - b).abs() <= 1e-9_f64.max(b.abs() * 1e-7));
        }
        assert_eq!(encode_curve(&back).unwrap(), encode_curve(&c).unwrap());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let c = ScoreCurve {
            video_id: "v".into(),
            scores: vec![0.1, 0.2],
            gt: Some(vec![0]),
        };
        assert!(encode_curve(&c).is_err());
    }
}
