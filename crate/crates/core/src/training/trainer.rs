use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{cross_entropy_sum_node, mil_pair_node, BagPair, LossBreakdown, MilBatch};
use super::network::{video_auc, Network, NetworkKind};
use super::pseudo::PseudoLabelStore;
use super::TrainingConfig;
use crate::data::{ensure_both_classes, sample_subsets, SubsetSample, VideoRecord};
use crate::model::REGRESSOR_PREFIX;
use crate::seed::derive_seed;
use crate::tensor::{AdaGrad, GradStore, Graph, LearningRates, NodeId};
use crate::{parallel, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mil: f64,
    pub ce: f64,
    pub total: f64,
}

/// Subset scores and recorded losses of one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchTrace {
    pub epoch: usize,
    pub step: usize,
    pub batch: MilBatch,
    pub losses: LossBreakdown,
}

/// Outcome of one training pass of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// Co-teaching round, starting at 1.
    pub round: usize,
    /// Training pass, starting at 1; round `r` holds passes `2r − 1` (STN) and `2r` (LTN).
    pub pass: usize,
    pub network: NetworkKind,
    /// Whether the pass trained on pseudo labels (MIL + CE) or MIL only.
    pub pseudo_labels: bool,
    /// Clips with a nonzero pseudo label in the labels used by this pass.
    pub pseudo_positives: usize,
    /// Pseudo labels were present but all zero.
    pub degenerate: bool,
    pub epoch_losses: Vec<EpochLoss>,
    pub train_video_auc: f64,
    pub test_frame_auc: Option<f64>,
    #[serde(skip)]
    pub traces: Vec<BatchTrace>,
}

struct PairOutput {
    grads: GradStore,
    mil: f64,
    ce_sum: f64,
    pair: BagPair,
}

fn bag_ce(
    g: &mut Graph,
    network: &Network,
    window_scores: NodeId,
    samples: &[SubsetSample],
    labels: &[f64],
) -> Result<NodeId> {
    let c = network.window_clips();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in samples {
        for w in s.start..s.start + network.windows_per_subset() {
            let p: f64 = labels[w..w + c].iter().sum();
            pos.push(p);
            neg.push(c as f64 - p);
        }
    }
    cross_entropy_sum_node(g, window_scores, &pos, &neg)
}

#[allow(clippy::too_many_arguments)]
fn pair_step(
    network: &Network,
    abnormal: &VideoRecord,
    normal: &VideoRecord,
    subsets: (&[SubsetSample], &[SubsetSample]),
    labels: Option<&PseudoLabelStore>,
    cfg: &TrainingConfig,
    pairs: usize,
    ce_terms: usize,
) -> Result<PairOutput> {
    let mut g = Graph::new();
    let (sa, wa) = network.subset_scores_node(&mut g, abnormal, subsets.0)?;
    let (sn, wn) = network.subset_scores_node(&mut g, normal, subsets.1)?;
    let mil = mil_pair_node(&mut g, sa, sn, cfg.tau, cfg.alpha)?;
    let mut loss = g.scale(mil, 1.0 / pairs as f64)?;
    let mut ce_sum = 0.0;
    if let Some(store) = labels {
        let la = store.get(&abnormal.id).unwrap_or_default();
        let ln = store.get(&normal.id).unwrap_or_default();
        let ca = bag_ce(&mut g, network, wa, subsets.0, la)?;
        let cn = bag_ce(&mut g, network, wn, subsets.1, ln)?;
        let ce = g.add(ca, cn)?;
        ce_sum = g.value(ce).data()[0];
        let weighted = g.scale(ce, cfg.beta / ce_terms as f64)?;
        loss = g.add(loss, weighted)?;
    }
    let grads = g.backward(loss)?;
    Ok(PairOutput {
        grads,
        mil: g.value(mil).data()[0],
        ce_sum,
        pair: BagPair {
            abnormal: g.value(sa).data().to_vec(),
            normal: g.value(sn).data().to_vec(),
        },
    })
}

fn check_labels(store: &PseudoLabelStore, videos: &[VideoRecord]) -> Result<()> {
    for v in videos {
        match store.get(&v.id) {
            Some(l) if l.len() == v.num_clips() => {}
            Some(l) => {
                return Err(Error::Data(format!(
                    "{}: {} pseudo labels for {} clips",
                    v.id,
                    l.len(),
                    v.num_clips()
                )))
            }
            None => return Err(Error::Data(format!("{}: no pseudo labels", v.id))),
        }
    }
    Ok(())
}

/// Trains `network` for `cfg.epochs` epochs with a fresh AdaGrad state.
///
/// Each epoch shuffles the abnormal and normal videos (seeded), pairs them
/// up, cycling the smaller class so every video is used, resamples `K`
/// subsets per video, and takes one AdaGrad step per `batch_size / 2`
/// pairs. The loss is the MIL ranking loss, plus `β` times the mean
/// cross-entropy against `labels` when they are given. For CE every window
/// is scored against the label of each clip it covers.
///
/// The returned report has `round`, `pass` and `test_frame_auc` unset.
pub fn train_pass(
    network: &mut Network,
    videos: &[VideoRecord],
    labels: Option<&PseudoLabelStore>,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<RoundReport> {
    cfg.validate()?;
    ensure_both_classes(videos)?;
    for v in videos {
        network.check_compatible(v)?;
    }
    if let Some(store) = labels {
        check_labels(store, videos)?;
    }
    let rates = LearningRates::new(cfg.lr_transformer)?.with_group(REGRESSOR_PREFIX, cfg.lr_regressor)?;
    let mut opt = AdaGrad::new(rates);

    let abnormal: Vec<usize> = (0..videos.len()).filter(|&i| videos[i].is_abnormal()).collect();
    let normal: Vec<usize> = (0..videos.len()).filter(|&i| !videos[i].is_abnormal()).collect();
    let per_bag_terms = cfg.subsets * network.windows_per_subset() * network.window_clips();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut traces = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64, 0]));
        let (mut a, mut n) = (abnormal.clone(), normal.clone());
        a.shuffle(&mut rng);
        n.shuffle(&mut rng);
        let pairs: Vec<(usize, usize)> = (0..a.len().max(n.len()))
            .map(|i| (a[i % a.len()], n[i % n.len()]))
            .collect();
        let subsets = videos
            .iter()
            .enumerate()
            .map(|(i, v)| {
                sample_subsets(v, cfg.subsets, network.subset_clips, derive_seed(seed, &[epoch as u64, 1, i as u64]))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        for (step, chunk) in pairs.chunks(cfg.pairs_per_batch()).enumerate() {
            let ce_terms = if labels.is_some() { 2 * chunk.len() * per_bag_terms } else { 0 };
            let net = &*network;
            let outputs = parallel::map(chunk, |&(ai, ni)| {
                pair_step(
                    net,
                    &videos[ai],
                    &videos[ni],
                    (&subsets[ai], &subsets[ni]),
                    labels,
                    cfg,
                    chunk.len(),
                    ce_terms,
                )
            });
            let mut grads = GradStore::new();
            let mut batch = MilBatch::default();
            let (mut mil, mut ce_sum) = (0.0, 0.0);
            for out in outputs {
                let out = out?;
                grads.merge(&out.grads)?;
                mil += out.mil;
                ce_sum += out.ce_sum;
                batch.pairs.push(out.pair);
            }
            opt.step(&mut network.model.params, &grads)?;
            let mil = mil / chunk.len() as f64;
            let losses = match labels {
                Some(_) => {
                    let ce = ce_sum / ce_terms as f64;
                    LossBreakdown {
                        mil,
                        ce,
                        total: mil + cfg.beta * ce,
                    }
                }
                None => LossBreakdown {
                    mil,
                    ce: 0.0,
                    total: mil,
                },
            };
            sum.mil += losses.mil;
            sum.ce += losses.ce;
            sum.total += losses.total;
            steps += 1;
            traces.push(BatchTrace {
                epoch,
                step,
                batch,
                losses,
            });
        }
        let k = steps as f64;
        epoch_losses.push(EpochLoss {
            epoch,
            mil: sum.mil / k,
            ce: sum.ce / k,
            total: sum.total / k,
        });
    }

    Ok(RoundReport {
        round: 0,
        pass: 0,
        network: network.kind,
        pseudo_labels: labels.is_some(),
        pseudo_positives: labels.map_or(0, PseudoLabelStore::positives),
        degenerate: labels.is_some_and(PseudoLabelStore::is_degenerate),
        epoch_losses,
        train_video_auc: video_auc(network, videos)?,
        test_frame_auc: None,
        traces,
    })
}
