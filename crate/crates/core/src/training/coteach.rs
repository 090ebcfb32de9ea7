use serde::{Deserialize, Serialize};

use super::network::{frame_auc, video_auc, Network, NetworkKind};
use super::pseudo::{label_videos, PseudoLabelStore};
use super::trainer::{train_pass, RoundReport};
use super::TrainingConfig;
use crate::data::{ensure_both_classes, VideoRecord};
use crate::seed::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct CoTeachOutcome {
    pub stn: Network,
    pub ltn: Network,
    pub reports: Vec<RoundReport>,
}

/// Initial STN and LTN for a training set; the same seed always yields the
/// same initialization, so co-taught and standalone runs start alike.
pub fn init_networks(videos: &[VideoRecord], cfg: &TrainingConfig) -> Result<(Network, Network)> {
    let Some(first) = videos.first() else {
        return Err(Error::Data("training set is empty".into()));
    };
    let (d, grid) = (first.features.d(), first.features.grid());
    let stn = Network::new(NetworkKind::Stn, d, grid, cfg, derive_seed(cfg.seed, &[1]))?;
    let ltn = Network::new(NetworkKind::Ltn, d, grid, cfg, derive_seed(cfg.seed, &[2]))?;
    Ok((stn, ltn))
}

fn run_schedule<F>(
    train: &[VideoRecord],
    test: Option<&[VideoRecord]>,
    cfg: &TrainingConfig,
    exchange_labels: bool,
    mut after_pass: F,
) -> Result<CoTeachOutcome>
where
    F: FnMut(&Network, &RoundReport) -> Result<()>,
{
    cfg.validate()?;
    ensure_both_classes(train)?;
    let (mut stn, mut ltn) = init_networks(train, cfg)?;
    let mut labels: Option<PseudoLabelStore> = None;
    let mut reports = Vec::with_capacity(2 * cfg.rounds);
    for round in 1..=cfg.rounds {
        for kind in [NetworkKind::Stn, NetworkKind::Ltn] {
            let pass = reports.len() + 1;
            let net = match kind {
                NetworkKind::Stn => &mut stn,
                NetworkKind::Ltn => &mut ltn,
            };
            let seed = derive_seed(cfg.seed, &[100, pass as u64]);
            let mut report = train_pass(net, train, labels.as_ref(), cfg, seed)?;
            report.round = round;
            report.pass = pass;
            if let Some(test) = test {
                report.test_frame_auc = frame_auc(net, test)?;
            }
            after_pass(net, &report)?;
            if exchange_labels {
                labels = Some(label_videos(net, train, cfg.mu)?);
            }
            reports.push(report);
        }
    }
    Ok(CoTeachOutcome { stn, ltn, reports })
}

/// Long/short temporal co-teaching.
///
/// Pass 1 trains the STN with the MIL loss alone. After every pass the
/// just-trained network labels the training clips and the other network
/// trains on MIL + CE against those labels. A round is one STN pass
/// followed by one LTN pass; `cfg.rounds` rounds make `2R` passes.
/// `after_pass` sees each network right after its pass.
pub fn co_teach<F>(train: &[VideoRecord], test: Option<&[VideoRecord]>, cfg: &TrainingConfig, after_pass: F) -> Result<CoTeachOutcome>
where
    F: FnMut(&Network, &RoundReport) -> Result<()>,
{
    run_schedule(train, test, cfg, true, after_pass)
}

/// The same schedule, initialization and seeds as [`co_teach`] with the
/// label exchange switched off: both networks train on MIL only.
pub fn train_standalone<F>(
    train: &[VideoRecord],
    test: Option<&[VideoRecord]>,
    cfg: &TrainingConfig,
    after_pass: F,
) -> Result<CoTeachOutcome>
where
    F: FnMut(&Network, &RoundReport) -> Result<()>,
{
    run_schedule(train, test, cfg, false, after_pass)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: NetworkKind,
    pub stn_video_auc: f64,
    pub ltn_video_auc: f64,
}

/// Higher training video-level AUC wins; ties go to the LTN.
pub fn choose_network(stn_video_auc: f64, ltn_video_auc: f64) -> NetworkKind {
    if stn_video_auc > ltn_video_auc {
        NetworkKind::Stn
    } else {
        NetworkKind::Ltn
    }
}

/// Picks the network that ranks training videos better by their maximum
/// clip score. Only video labels are used.
pub fn select_inference_model<'a>(
    stn: &'a Network,
    ltn: &'a Network,
    train: &[VideoRecord],
) -> Result<(&'a Network, Selection)> {
    let stn_video_auc = video_auc(stn, train)?;
    let ltn_video_auc = video_auc(ltn, train)?;
    let chosen = choose_network(stn_video_auc, ltn_video_auc);
    let net = match chosen {
        NetworkKind::Stn => stn,
        NetworkKind::Ltn => ltn,
    };
    Ok((
        net,
        Selection {
            chosen,
            stn_video_auc,
            ltn_video_auc,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_rule() {
        assert_eq!(choose_network(0.95, 0.98), NetworkKind::Ltn);
        assert_eq!(choose_network(0.9, 0.9), NetworkKind::Ltn);
        assert_eq!(choose_network(0.91, 0.9), NetworkKind::Stn);
    }
}
