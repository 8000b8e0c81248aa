//! Closed-loop movement generation and forecast-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};
use crate::exchange::CoefficientModel;
use crate::gom::{eval_system_matrix, SystemTensor};
use crate::motion::{PostureSequence, MIN_FRAMES};

/// Any generated angle beyond this magnitude (degrees) aborts the rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

/// Rolls the system forward from two seed frames. Frame `t >= 2` uses
/// `tensors[t - 2]`, or the last tensor once they run out. Returns
/// `len × n` values, row-major.
pub fn rollout(
    tensors: &[SystemTensor],
    seed_frames: [&[f64]; 2],
    len: usize,
    channel_names: &[String],
) -> Result<Vec<f64>> {
    let last = tensors
        .last()
        .ok_or_else(|| GomError::Empty("no coefficient rows".into()))?;
    let n = last.n();
    if channel_names.len() != n || seed_frames.iter().any(|f| f.len() != n) {
        return Err(GomError::ChannelMismatch);
    }
    if len < MIN_FRAMES {
        return Err(GomError::TooShort { len, min: MIN_FRAMES });
    }
    let mut data = Vec::with_capacity(len * n);
    data.extend_from_slice(seed_frames[0]);
    data.extend_from_slice(seed_frames[1]);
    for t in 2..len {
        let a = tensors.get(t - 2).unwrap_or(last);
        let next = eval_system_matrix(a, [&data[(t - 1) * n..t * n], &data[(t - 2) * n..(t - 1) * n]])?;
        if let Some((c, &v)) = next
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(GomError::Diverged {
                frame: t,
                channel: channel_names[c].clone(),
                value: v,
            });
        }
        data.extend(next);
    }
    Ok(data)
}

/// Generates `len` frames from a full-system coefficient model.
pub fn generate(model: &CoefficientModel, seed_frames: [&[f64]; 2], len: usize) -> Result<PostureSequence> {
    let system = model.system()?;
    let used = model.len().min(len.saturating_sub(2)).max(1);
    let tensors = (0..used)
        .map(|t| model.tensor(&system, t))
        .collect::<Result<Vec<_>>>()?;
    let names = model.topology.channel_names();
    let data = rollout(&tensors, seed_frames, len, names)?;
    let seq = PostureSequence::new(names.to_vec(), data, model.frame_rate_hz)?;
    Ok(match &model.class_label {
        Some(label) => seq.with_labels(label.clone(), "generated"),
        None => seq,
    })
}

/// Generates a sequence as long as `reference`, seeded from its first two frames.
pub fn regenerate(model: &CoefficientModel, reference: &PostureSequence) -> Result<PostureSequence> {
    if reference.channel_names() != model.topology.channel_names() {
        return Err(GomError::ChannelMismatch);
    }
    generate(model, [reference.frame(0), reference.frame(1)], reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// `RMSE / (RMS(truth) + RMS(generated))`; 0 when both are all zero.
    pub u1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    #[serde(flatten)]
    pub metrics: ErrorMetrics,
}

/// Per-channel metrics and their averages over channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub average: ErrorMetrics,
    pub channels: Vec<ChannelMetrics>,
}

fn rms(values: impl Iterator<Item = f64>, len: usize) -> f64 {
    (values.map(|v| v * v).sum::<f64>() / len as f64).sqrt()
}

pub fn error_metrics(generated: &[f64], truth: &[f64]) -> Result<ErrorMetrics> {
    if generated.len() != truth.len() {
        return Err(GomError::Shape(format!(
            "{} generated values, {} true",
            generated.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(GomError::Empty("no values to compare".into()));
    }
    let len = truth.len();
    let mae = generated.iter().zip(truth).map(|(g, y)| (g - y).abs()).sum::<f64>() / len as f64;
    let rmse = rms(generated.iter().zip(truth).map(|(g, y)| g - y), len);
    let denom = rms(truth.iter().copied(), len) + rms(generated.iter().copied(), len);
    let u1 = if denom == 0.0 { 0.0 } else { (rmse / denom).min(1.0) };
    Ok(ErrorMetrics { mae, rmse, u1 })
}

/// Metrics over `frames × channels` row-major arrays.
pub fn metrics_from_slices(generated: &[f64], truth: &[f64], channel_names: &[String]) -> Result<GenerationMetrics> {
    let n = channel_names.len();
    if n == 0 || generated.len() != truth.len() || !truth.len().is_multiple_of(n) {
        return Err(GomError::Shape("generated and true series differ in shape".into()));
    }
    let column = |data: &[f64], c: usize| -> Vec<f64> { data.iter().skip(c).step_by(n).copied().collect() };
    let channels = channel_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            Ok(ChannelMetrics {
                channel: name.clone(),
                metrics: error_metrics(&column(generated, c), &column(truth, c))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&ErrorMetrics) -> f64| channels.iter().map(|c| f(&c.metrics)).sum::<f64>() / n as f64;
    Ok(GenerationMetrics {
        average: ErrorMetrics {
            mae: mean(|m| m.mae),
            rmse: mean(|m| m.rmse),
            u1: mean(|m| m.u1),
        },
        channels,
    })
}

pub fn metrics(generated: &PostureSequence, truth: &PostureSequence) -> Result<GenerationMetrics> {
    if !generated.same_channels(truth) {
        return Err(GomError::ChannelMismatch);
    }
    if generated.len() != truth.len() {
        return Err(GomError::Shape(format!(
            "{} generated frames, {} true",
            generated.len(),
            truth.len()
        )));
    }
    metrics_from_slices(generated.as_slice(), truth.as_slice(), truth.channel_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|c| format!("J{c}.x")).collect()
    }

    fn identity(n: usize) -> SystemTensor {
        let mut a = SystemTensor::zeros(n);
        for i in 0..n {
            a.set(i, 0, i, 1.0);
        }
        a
    }

    #[test]
    fn identity_from_constant_seed() {
        let seed = [3.0, -1.0, 7.5];
        let out = rollout(&[identity(3)], [&seed, &seed], 50, &names(3)).unwrap();
        assert!(out.chunks(3).all(|f| f == seed));
    }

    #[test]
    fn sinusoid_continuation() {
        let w = 0.17_f64;
        let mut a = SystemTensor::zeros(1);
        a.set(0, 0, 0, 2.0 * w.cos());
        a.set(0, 1, 0, 1.0);
        let x = |t: usize| 20.0 * (w * t as f64 + 0.4).sin();
        let out = rollout(&[a], [&[x(0)], &[x(1)]], 102, &names(1)).unwrap();
        for (t, v) in out.iter().enumerate() {
            assert!((v - x(t)).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut a = SystemTensor::zeros(1);
        a.set(0, 0, 0, 2.0);
        let err = rollout(&[a], [&[1.0], &[1.0]], 100, &names(1)).unwrap_err();
        assert!(matches!(err, GomError::Diverged { frame: 15, .. }), "{err}");
    }

    #[test]
    fn hand_metrics() {
        let m = error_metrics(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!((m.mae, m.rmse), (1.0, 1.0));
        assert_eq!(m.u1, 1.0);
        let m = error_metrics(&[-2.0; 5], &[2.0; 5]).unwrap();
        assert_eq!(m.u1, 1.0);
        let m = error_metrics(&[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!((m.mae, m.rmse, m.u1), (0.0, 0.0, 0.0));
        assert!(error_metrics(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn identical_sequences() {
        let data = [0.5, 1.0, -2.0, 3.0, 4.0, -1.0];
        let m = metrics_from_slices(&data, &data, &names(2)).unwrap();
        assert_eq!(
            m.average,
            ErrorMetrics {
                mae: 0.0,
                rmse: 0.0,
                u1: 0.0
            }
        );
    }
}
