use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{DataSource, EvaluationToggles, RunConfig};
use crate::data::{generate_dataset, load_feature_file, load_manifest, write_dataset, VideoRecord};
use crate::evaluation::{attention_rollout, export_attention_map, export_curve, frame_scores, ScoreCurve};
use crate::io::{write_file, write_json};
use crate::model::{read_checkpoint, tokenize, write_checkpoint, CheckpointMeta};
use crate::training::{
    co_teach, coverage_average, frame_auc, select_inference_model, Network, NetworkKind, RoundReport, Selection,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOutput {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Wall-clock timings; the only nondeterministic part of a run report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub pass_seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub rounds: Vec<RoundReport>,
    pub selection: Selection,
    /// Checkpoint of the selected network, relative to the output directory.
    pub selected_checkpoint: PathBuf,
    pub test_frame_auc: Option<f64>,
    pub timings: Timings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub network: NetworkKind,
    pub videos: usize,
    /// `None` when some video has no frame ground truth.
    pub frame_auc: Option<f64>,
}

/// Writes `data/train.json` and `data/test.json` with their feature and
/// ground-truth files under the output directory.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateOutput> {
    cfg.validate()?;
    let DataSource::Synthetic(synth) = &cfg.data else {
        return Err(Error::config("data", "generate needs a `synthetic` data section"));
    };
    if synth.train_videos == 0 || synth.test_videos == 0 {
        return Err(Error::config("train_videos", "generate writes both splits; both counts must be positive"));
    }
    let (train, test) = generate_dataset(synth)?;
    let dir = cfg.output_dir.join("data");
    Ok(GenerateOutput {
        train_manifest: write_dataset(&train, &dir, "train.json")?,
        test_manifest: write_dataset(&test, &dir, "test.json")?,
    })
}

fn load_data(cfg: &RunConfig) -> Result<(Vec<VideoRecord>, Option<Vec<VideoRecord>>)> {
    match &cfg.data {
        DataSource::Synthetic(s) => {
            let (train, test) = generate_dataset(s)?;
            Ok((train, (!test.is_empty()).then_some(test)))
        }
        DataSource::Manifests { train, test } => {
            let (m, train_videos) = load_manifest(train)?;
            let test_videos = match test {
                Some(p) => {
                    let (tm, v) = load_manifest(p)?;
                    if tm.d != m.d || tm.grid != m.grid {
                        return Err(Error::incompatible(
                            "test manifest shape",
                            format!("d={} grid={}", tm.d, tm.grid),
                            format!("d={} grid={}", m.d, m.grid),
                        ));
                    }
                    Some(v)
                }
                None => None,
            };
            Ok((train_videos, test_videos))
        }
    }
}

fn checkpoint_name(kind: NetworkKind, round: usize) -> PathBuf {
    PathBuf::from("checkpoints").join(format!("{kind}_round{round}.ckpt"))
}

fn meta_for(net: &Network, seed: u64, frames_per_clip: usize) -> CheckpointMeta {
    let c = &net.model.config;
    CheckpointMeta {
        d: c.d,
        clips: c.clips,
        grid: c.grid,
        layers: c.layers,
        heads: c.heads,
        seed,
        network: net.kind.name().to_string(),
        subset_clips: net.subset_clips,
        frames_per_clip,
    }
}

/// Score curves and attention maps for `videos`, as toggled.
fn export_videos(net: &Network, videos: &[VideoRecord], out: &Path, toggles: &EvaluationToggles) -> Result<()> {
    if !toggles.export_curves && !toggles.export_attention {
        return Ok(());
    }
    for v in videos {
        let windows = net.window_scores(v)?;
        if toggles.export_curves {
            let clips = coverage_average(&windows, net.window_clips());
            let curve = ScoreCurve {
                video_id: v.id.clone(),
                scores: frame_scores(&clips, v.frames_per_clip),
                gt: v.frame_gt.clone(),
            };
            export_curve(&curve, &out.join("curves").join(format!("{}.csv", v.id)))?;
        }
        if toggles.export_attention {
            let best = (0..windows.len()).fold(0, |b, i| if windows[i] > windows[b] { i } else { b });
            let tokens = tokenize(&v.features, best, net.window_clips())?;
            let (_, record) = net.model.score_window(&tokens)?;
            let map = attention_rollout(&record, net.window_clips(), net.model.config.grid)?;
            export_attention_map(&map, &out.join("attention").join(format!("{}.csv", v.id)))?;
        }
    }
    Ok(())
}

/// Co-teaches STN and LTN and writes, under the output directory,
/// `checkpoints/{net}_round{r}.ckpt` after every pass, `rounds.jsonl`,
/// `report.json`, and the toggled test-set exports of the selected network.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunReport> {
    let started = Instant::now();
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let frames_per_clip = train.first().map_or(1, |v| v.frames_per_clip);
    let out = &cfg.output_dir;
    let mut lines = String::new();
    let mut pass_seconds = Vec::new();
    let mut pass_start = Instant::now();
    let outcome = co_teach(&train, test.as_deref(), &cfg.training, |net, report| {
        write_checkpoint(
            &out.join(checkpoint_name(net.kind, report.round)),
            &net.model,
            &meta_for(net, cfg.seed, frames_per_clip),
        )?;
        let line = serde_json::to_string(report).map_err(|source| Error::Json {
            path: out.join("rounds.jsonl"),
            source,
        })?;
        lines.push_str(&line);
        lines.push('\n');
        write_file(&out.join("rounds.jsonl"), lines.as_bytes())?;
        pass_seconds.push(pass_start.elapsed().as_secs_f64());
        pass_start = Instant::now();
        Ok(())
    })?;
    let (chosen, selection) = select_inference_model(&outcome.stn, &outcome.ltn, &train)?;
    let test_frame_auc = match &test {
        Some(t) => {
            export_videos(chosen, t, out, &cfg.evaluation)?;
            frame_auc(chosen, t)?
        }
        None => None,
    };
    let report = RunReport {
        config: cfg.clone(),
        rounds: outcome.reports,
        selection,
        selected_checkpoint: checkpoint_name(chosen.kind, cfg.training.rounds),
        test_frame_auc,
        timings: Timings {
            total_seconds: started.elapsed().as_secs_f64(),
            pass_seconds,
        },
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn network_from_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let (model, meta) = read_checkpoint(path)?;
    let kind = NetworkKind::parse(&meta.network)?;
    Ok((
        Network {
            kind,
            model,
            subset_clips: meta.subset_clips,
        },
        meta,
    ))
}

/// Frame-level AUC of a checkpoint on a manifest's videos; writes
/// `eval.json` and the toggled exports under `out`.
pub fn cmd_eval(checkpoint: &Path, manifest: &Path, out: &Path, toggles: &EvaluationToggles) -> Result<EvalReport> {
    let (net, meta) = network_from_checkpoint(checkpoint)?;
    let (m, videos) = load_manifest(manifest)?;
    if m.d != meta.d {
        return Err(Error::incompatible("d", format!("{} (manifest)", m.d), format!("{} (checkpoint)", meta.d)));
    }
    if m.grid != meta.grid {
        return Err(Error::incompatible("grid", format!("{} (manifest)", m.grid), format!("{} (checkpoint)", meta.grid)));
    }
    export_videos(&net, &videos, out, toggles)?;
    let report = EvalReport {
        network: net.kind,
        videos: videos.len(),
        frame_auc: frame_auc(&net, &videos)?,
    };
    write_json(&out.join("eval.json"), &report)?;
    Ok(report)
}

/// Scores every clip of one feature file (stride-1 windows, coverage
/// averaged), replicates clip scores over frames and writes the curve.
pub fn cmd_score(checkpoint: &Path, features: &Path, out: &Path) -> Result<ScoreCurve> {
    let (net, meta) = network_from_checkpoint(checkpoint)?;
    let volume = load_feature_file(features)?;
    let video = VideoRecord {
        id: features
            .file_stem()
            .map_or_else(|| "video".to_string(), |s| s.to_string_lossy().into_owned()),
        features: volume,
        label: 0,
        frames_per_clip: meta.frames_per_clip,
        frame_gt: None,
        anomaly_spans: Vec::new(),
    };
    let clips = net.clip_scores(&video)?;
    let curve = ScoreCurve {
        video_id: video.id.clone(),
        scores: frame_scores(&clips, meta.frames_per_clip),
        gt: None,
    };
    export_curve(&curve, out)?;
    Ok(curve)
}
