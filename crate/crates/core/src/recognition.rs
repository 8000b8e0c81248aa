//! Cross-validated recognition scores for a channel subset.
//!
//! Each fold z-scores the chosen channels with training-fold statistics,
//! trains one HMM per class and labels held-out sequences by maximum
//! likelihood. Scores are macro-averaged F1 over classes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};
use crate::hmm::{classify_obs, train_hmm_on, HmmModel, Obs};
use crate::motion::MovementDataset;
use crate::topology::{Axis, SkeletonTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub macro_f1: f64,
    pub classes: Vec<ClassScore>,
    /// `confusion[true][predicted]`, classes in sorted label order.
    pub confusion: Vec<Vec<usize>>,
    pub channels: Vec<String>,
    pub states: usize,
    pub folds: usize,
    pub leave_one_out: bool,
}

/// Per-class scores and their macro average. Undefined precision or recall
/// counts as 0.
pub fn macro_f1(confusion: &[Vec<usize>], labels: &[String]) -> (f64, Vec<ClassScore>) {
    let k = confusion.len();
    let scores: Vec<ClassScore> = (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScore {
                label: labels[c].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let avg = scores.iter().map(|s| s.f1).sum::<f64>() / k.max(1) as f64;
    (avg, scores)
}

/// All three channels of each named joint, in the given joint order.
pub fn channels_for_joints(topology: &SkeletonTopology, joints: &[String]) -> Result<Vec<usize>> {
    joints
        .iter()
        .map(|j| {
            let i = topology
                .joint_index(j)
                .ok_or_else(|| GomError::UnknownChannel(j.clone()))?;
            Ok(Axis::ALL.map(|a| topology.channel_index(i, a)))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.concat())
}

/// Fold id per sequence: stratified round-robin over a seeded shuffle, or
/// one fold per sequence when some class has fewer than `folds` members.
fn assign_folds(labels: &[usize], classes: usize, folds: usize, seed: u64) -> (Vec<usize>, usize, bool) {
    let mut members = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    if members.iter().any(|m| m.len() < folds) {
        return ((0..labels.len()).collect(), labels.len(), true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for m in &mut members {
        m.shuffle(&mut rng);
        for (k, &i) in m.iter().enumerate() {
            fold[i] = k % folds;
        }
    }
    (fold, folds, false)
}

fn zscore_stats(data: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut count = 0.0;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for d in data {
        for frame in d.chunks(dim) {
            count += 1.0;
            for c in 0..dim {
                sum[c] += frame[c];
                sq[c] += frame[c] * frame[c];
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let sd = (s / count - m * m).max(0.0).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn normalize(d: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    let dim = mean.len();
    d.iter()
        .enumerate()
        .map(|(i, v)| (v - mean[i % dim]) / std[i % dim])
        .collect()
}

/// Stratified k-fold (or leave-one-out) macro-F1 of HMM recognition on the
/// given channels.
pub fn evaluate_f1(
    dataset: &MovementDataset,
    channels: &[usize],
    states: usize,
    folds: usize,
    seed: u64,
) -> Result<RecognitionReport> {
    let labels = dataset.classes();
    if labels.len() < 2 {
        return Err(GomError::InvalidParameter(
            "recognition needs at least two classes".into(),
        ));
    }
    if folds < 2 {
        return Err(GomError::InvalidParameter("at least two folds are needed".into()));
    }
    if channels.is_empty() {
        return Err(GomError::InvalidParameter("no channels selected".into()));
    }
    let names = dataset.topology.channel_names();
    if let Some(&c) = channels.iter().find(|&&c| c >= names.len()) {
        return Err(GomError::Shape(format!("channel index {c} out of range")));
    }
    let dim = channels.len();
    let data: Vec<Vec<f64>> = dataset
        .sequences
        .iter()
        .map(|s| s.select_channels(channels).map(|s| s.as_slice().to_vec()))
        .collect::<Result<_>>()?;
    let truth: Vec<usize> = dataset
        .sequences
        .iter()
        .map(|s| {
            labels
                .iter()
                .position(|l| *l == s.class_label)
                .expect("label listed by classes()")
        })
        .collect();
    let (fold_of, fold_count, loo) = assign_folds(&truth, labels.len(), folds, seed);
    let channel_names: Vec<String> = channels.iter().map(|&c| names[c].clone()).collect();

    let per_fold = (0..fold_count)
        .into_par_iter()
        .map(|f| -> Result<Vec<(usize, usize)>> {
            let train: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] == f).collect();
            let train_refs: Vec<&[f64]> = train.iter().map(|&i| data[i].as_slice()).collect();
            let (mean, std) = zscore_stats(&train_refs, dim);
            let normed: Vec<(usize, Vec<f64>)> = train
                .iter()
                .map(|&i| (truth[i], normalize(&data[i], &mean, &std)))
                .collect();
            let models: Vec<HmmModel> = (0..labels.len())
                .filter_map(|c| {
                    let obs: Vec<Obs> = normed
                        .iter()
                        .filter(|(l, _)| *l == c)
                        .map(|(_, d)| Obs { data: d, dim })
                        .collect();
                    (!obs.is_empty()).then(|| train_hmm_on(&obs, &labels[c], channel_names.clone(), states))
                })
                .collect::<Result<_>>()?;
            test.iter()
                .map(|&i| {
                    let x = normalize(&data[i], &mean, &std);
                    let k = classify_obs(Obs::new(&x, dim)?, &models)?;
                    let predicted = labels
                        .iter()
                        .position(|l| *l == models[k].class_label)
                        .expect("model label is a class");
                    Ok((truth[i], predicted))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut confusion = vec![vec![0; labels.len()]; labels.len()];
    for (t, p) in per_fold.into_iter().flatten() {
        confusion[t][p] += 1;
    }
    let (avg, classes) = macro_f1(&confusion, &labels);
    Ok(RecognitionReport {
        macro_f1: avg,
        classes,
        confusion,
        channels: channel_names,
        states,
        folds: fold_count,
        leave_one_out: loo,
    })
}
