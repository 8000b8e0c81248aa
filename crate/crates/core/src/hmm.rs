//! Left-to-right hidden Markov models with diagonal Gaussian emissions.
//!
//! States start at the first one and may only stay or advance by one; the
//! last state is absorbing. Training is Baum-Welch with scaled
//! forward-backward passes, initialized by cutting every sequence into
//! equal-length blocks.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};
use crate::motion::MovementDataset;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const EM_TOLERANCE: f64 = 1e-4;
pub const EM_MAX_ITERS: usize = 200;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModel {
    pub class_label: String,
    pub channels: Vec<String>,
    pub initial: Vec<f64>,
    /// Row-stochastic; only the diagonal and first superdiagonal are nonzero.
    pub transitions: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Training log-likelihood of the parameters entering each iteration.
    pub loglik_history: Vec<f64>,
    pub converged: bool,
}

/// Observations of one sequence: `frames × dim`, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Obs<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> Obs<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(GomError::Shape(format!(
                "{} values do not split into frames of {dim}",
                data.len()
            )));
        }
        Ok(Obs { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn frame(&self, t: usize) -> &'a [f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

impl HmmModel {
    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    fn log_emission(&self, s: usize, x: &[f64]) -> f64 {
        self.means[s]
            .iter()
            .zip(&self.variances[s])
            .zip(x)
            .map(|((m, v), x)| -0.5 * (LN_2PI + v.ln() + (x - m) * (x - m) / v))
            .sum()
    }

    /// Emission probabilities scaled per frame by the frame's maximum,
    /// together with the log of that maximum.
    fn emissions(&self, obs: Obs) -> (Vec<Vec<f64>>, Vec<f64>) {
        (0..obs.len())
            .map(|t| {
                let logs: Vec<f64> = (0..self.states()).map(|s| self.log_emission(s, obs.frame(t))).collect();
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (logs.iter().map(|l| (l - top).exp()).collect(), top)
            })
            .unzip()
    }

    /// Scaled forward pass: normalized alphas, scale factors and the log-likelihood.
    fn forward(&self, b: &[Vec<f64>], offsets: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
        let s_count = self.states();
        let mut alphas = Vec::with_capacity(b.len());
        let mut scales = Vec::with_capacity(b.len());
        let mut loglik = 0.0;
        for (t, bt) in b.iter().enumerate() {
            let mut a: Vec<f64> = if t == 0 {
                (0..s_count).map(|s| self.initial[s] * bt[s]).collect()
            } else {
                let prev: &Vec<f64> = &alphas[t - 1];
                (0..s_count)
                    .map(|j| {
                        let stay = prev[j] * self.transitions[j][j];
                        let enter = if j > 0 {
                            prev[j - 1] * self.transitions[j - 1][j]
                        } else {
                            0.0
                        };
                        (stay + enter) * bt[j]
                    })
                    .collect()
            };
            let c: f64 = a.iter().sum();
            if c > 0.0 {
                a.iter_mut().for_each(|v| *v /= c);
            }
            loglik += c.ln() + offsets[t];
            scales.push(c);
            alphas.push(a);
        }
        (alphas, scales, loglik)
    }

    /// Forward-algorithm log-likelihood of one observation sequence.
    pub fn log_likelihood(&self, obs: Obs) -> Result<f64> {
        if obs.dim != self.dim() {
            return Err(GomError::Shape(format!(
                "{}-channel observations for a {}-channel model",
                obs.dim,
                self.dim()
            )));
        }
        if obs.is_empty() {
            return Ok(0.0);
        }
        let (b, offsets) = self.emissions(obs);
        Ok(self.forward(&b, &offsets).2)
    }

    /// Draws a `len`-frame observation sequence from the model.
    pub fn sample<R: Rng>(&self, rng: &mut R, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len * self.dim());
        let mut s = 0;
        for t in 0..len {
            if t > 0 && s + 1 < self.states() && rng.random::<f64>() >= self.transitions[s][s] {
                s += 1;
            }
            for (m, v) in self.means[s].iter().zip(&self.variances[s]) {
                out.push(m + v.sqrt() * rng.sample::<f64, _>(StandardNormal));
            }
        }
        out
    }
}

struct Accumulator {
    gamma: Vec<f64>,
    sum: Vec<Vec<f64>>,
    sum_sq: Vec<Vec<f64>>,
    stay: Vec<f64>,
    leave: Vec<f64>,
}

impl Accumulator {
    fn new(states: usize, dim: usize) -> Self {
        Accumulator {
            gamma: vec![0.0; states],
            sum: vec![vec![0.0; dim]; states],
            sum_sq: vec![vec![0.0; dim]; states],
            stay: vec![0.0; states],
            leave: vec![0.0; states],
        }
    }

    fn add_frame(&mut self, s: usize, weight: f64, x: &[f64]) {
        self.gamma[s] += weight;
        for ((acc, acc2), v) in self.sum[s].iter_mut().zip(&mut self.sum_sq[s]).zip(x) {
            *acc += weight * v;
            *acc2 += weight * v * v;
        }
    }

    /// Means and floored variances; returns how many variances hit the floor.
    fn emissions(&self, fallback: &HmmModel) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, usize) {
        let mut floored = 0;
        let (means, vars) = (0..self.gamma.len())
            .map(|s| {
                let g = self.gamma[s];
                if g <= 0.0 {
                    return (fallback.means[s].clone(), fallback.variances[s].clone());
                }
                let mean: Vec<f64> = self.sum[s].iter().map(|v| v / g).collect();
                let var = self.sum_sq[s]
                    .iter()
                    .zip(&mean)
                    .map(|(sq, m)| {
                        let v = sq / g - m * m;
                        if v < VARIANCE_FLOOR {
                            floored += 1;
                            VARIANCE_FLOOR
                        } else {
                            v
                        }
                    })
                    .collect();
                (mean, var)
            })
            .unzip();
        (means, vars, floored)
    }
}

fn left_to_right(states: usize, stay: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; states]; states];
    for s in 0..states {
        if s + 1 == states {
            a[s][s] = 1.0;
        } else {
            let p = stay(s).clamp(0.0, 1.0);
            a[s][s] = p;
            a[s][s + 1] = 1.0 - p;
        }
    }
    a
}

/// Baum-Welch on raw observation sequences.
pub fn train_hmm_on(sequences: &[Obs], class_label: &str, channels: Vec<String>, states: usize) -> Result<HmmModel> {
    let dim = channels.len();
    if states == 0 {
        return Err(GomError::InvalidParameter("an HMM needs at least one state".into()));
    }
    if sequences.is_empty() {
        return Err(GomError::Empty(format!(
            "no training sequences for class {class_label}"
        )));
    }
    for obs in sequences {
        if obs.dim != dim {
            return Err(GomError::Shape(format!(
                "{}-channel sequence for {dim} channels",
                obs.dim
            )));
        }
        if obs.len() < states {
            return Err(GomError::TooShort {
                len: obs.len(),
                min: states,
            });
        }
    }

    // uniform segmentation
    let mut init = Accumulator::new(states, dim);
    for obs in sequences {
        let t_len = obs.len();
        for t in 0..t_len {
            init.add_frame(t * states / t_len, 1.0, obs.frame(t));
        }
    }
    let block = sequences.iter().map(|o| o.len() as f64).sum::<f64>() / (sequences.len() * states) as f64;
    let placeholder = HmmModel {
        class_label: class_label.into(),
        channels: channels.clone(),
        initial: vec![0.0; states],
        transitions: Vec::new(),
        means: vec![vec![0.0; dim]; states],
        variances: vec![vec![1.0; dim]; states],
        loglik_history: Vec::new(),
        converged: false,
    };
    let (means, variances, floored) = init.emissions(&placeholder);
    let mut initial = vec![0.0; states];
    initial[0] = 1.0;
    let mut model = HmmModel {
        initial,
        transitions: left_to_right(states, |_| 1.0 - 1.0 / block.max(2.0)),
        means,
        variances,
        ..placeholder
    };
    let mut any_floored = floored > 0;

    for _ in 0..EM_MAX_ITERS {
        let mut acc = Accumulator::new(states, dim);
        let mut loglik = 0.0;
        for obs in sequences {
            let (b, offsets) = model.emissions(*obs);
            let (alphas, scales, ll) = model.forward(&b, &offsets);
            loglik += ll;
            let t_len = obs.len();
            let mut beta = vec![1.0; states];
            for t in (0..t_len).rev() {
                let norm: f64 = alphas[t].iter().zip(&beta).map(|(a, b)| a * b).sum();
                for s in 0..states {
                    acc.add_frame(s, alphas[t][s] * beta[s] / norm, obs.frame(t));
                }
                if t == 0 {
                    break;
                }
                // expected transitions between t-1 and t
                for s in 0..states {
                    let base = alphas[t - 1][s] / scales[t];
                    acc.stay[s] += base * model.transitions[s][s] * b[t][s] * beta[s];
                    if s + 1 < states {
                        acc.leave[s] += base * model.transitions[s][s + 1] * b[t][s + 1] * beta[s + 1];
                    }
                }
                beta = (0..states)
                    .map(|s| {
                        let stay = model.transitions[s][s] * b[t][s] * beta[s];
                        let go = if s + 1 < states {
                            model.transitions[s][s + 1] * b[t][s + 1] * beta[s + 1]
                        } else {
                            0.0
                        };
                        (stay + go) / scales[t]
                    })
                    .collect();
            }
        }
        let prev = model.loglik_history.last().copied();
        model.loglik_history.push(loglik);
        if prev.is_some_and(|p| loglik - p < EM_TOLERANCE) {
            model.converged = true;
            break;
        }
        let (means, variances, floored) = acc.emissions(&model);
        any_floored |= floored > 0;
        let old = model.transitions.clone();
        model.transitions = left_to_right(states, |s| {
            let total = acc.stay[s] + acc.leave[s];
            if total > 0.0 {
                acc.stay[s] / total
            } else {
                old[s][s]
            }
        });
        model.means = means;
        model.variances = variances;
    }
    if any_floored {
        warn!("class {class_label}: emission variances floored at {VARIANCE_FLOOR}");
    }
    Ok(model)
}

/// Trains one class's model on the given channels of its sequences.
pub fn train_hmm(dataset: &MovementDataset, class_label: &str, channels: &[usize], states: usize) -> Result<HmmModel> {
    let names = dataset.topology.channel_names();
    if let Some(&c) = channels.iter().find(|&&c| c >= names.len()) {
        return Err(GomError::Shape(format!("channel index {c} out of range")));
    }
    let selected = dataset
        .of_class(class_label)
        .map(|s| s.select_channels(channels).map(|s| s.as_slice().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    if selected.is_empty() {
        return Err(GomError::UnknownClass(class_label.into()));
    }
    let obs = selected
        .iter()
        .map(|d| Obs::new(d, channels.len()))
        .collect::<Result<Vec<_>>>()?;
    let channel_names = channels.iter().map(|&c| names[c].clone()).collect();
    train_hmm_on(&obs, class_label, channel_names, states)
}

/// Index of the model with the highest log-likelihood; the first wins ties.
pub fn classify_obs(obs: Obs, models: &[HmmModel]) -> Result<usize> {
    if models.is_empty() {
        return Err(GomError::Empty("no models to classify with".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, m) in models.iter().enumerate() {
        let ll = m.log_likelihood(obs)?;
        if ll > best.1 {
            best = (i, ll);
        }
    }
    Ok(best.0)
}

/// Label of the best-scoring model for the given channels of `seq`.
pub fn classify<'m>(
    seq: &crate::motion::PostureSequence,
    models: &'m [HmmModel],
    channels: &[usize],
) -> Result<&'m str> {
    if let Some(&c) = channels.iter().find(|&&c| c >= seq.channel_count()) {
        return Err(GomError::MissingChannel(format!("channel index {c}")));
    }
    let data = seq.select_channels(channels)?;
    let i = classify_obs(Obs::new(data.as_slice(), channels.len())?, models)?;
    Ok(&models[i].class_label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chan(n: usize) -> Vec<String> {
        (0..n).map(|c| format!("C{c}")).collect()
    }

    #[test]
    fn single_state_is_a_gaussian() {
        let data = [1.0, 10.0, 2.0, 12.0, 4.0, 11.0, 5.0, 15.0];
        let m = train_hmm_on(&[Obs::new(&data, 2).unwrap()], "a", chan(2), 1).unwrap();
        assert!((m.means[0][0] - 3.0).abs() < 1e-12);
        assert!((m.means[0][1] - 12.0).abs() < 1e-12);
        assert!((m.variances[0][0] - 2.5).abs() < 1e-12);
        assert_eq!(m.transitions, vec![vec![1.0]]);
    }

    #[test]
    fn regime_switch_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seqs: Vec<Vec<f64>> = (0..4)
            .map(|k| {
                let switch = 30 + 5 * k;
                (0..80)
                    .map(|t| if t < switch { -2.0 } else { 3.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let obs: Vec<Obs> = seqs.iter().map(|s| Obs::new(s, 1).unwrap()).collect();
        let m = train_hmm_on(&obs, "a", chan(1), 2).unwrap();
        assert!((m.means[0][0] + 2.0).abs() < 0.1, "{:?}", m.means);
        assert!((m.means[1][0] - 3.0).abs() < 0.1, "{:?}", m.means);
        assert!(m.loglik_history.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        assert_eq!(m.transitions[1][0], 0.0);
    }

    #[test]
    fn constant_data_is_floored() {
        let data = vec![1.0; 12];
        let m = train_hmm_on(&[Obs::new(&data, 1).unwrap()], "flat", chan(1), 3).unwrap();
        assert!(m.variances.iter().flatten().all(|&v| v >= VARIANCE_FLOOR));
        assert!(m.log_likelihood(Obs::new(&data, 1).unwrap()).unwrap().is_finite());
    }

    #[test]
    fn too_short_for_states() {
        let data = [0.0, 1.0];
        assert!(matches!(
            train_hmm_on(&[Obs::new(&data, 1).unwrap()], "a", chan(1), 3),
            Err(GomError::TooShort { .. })
        ));
    }

    #[test]
    fn ties_and_single_model() {
        let data: Vec<f64> = (0..20).map(|t| (t as f64 * 0.3).sin()).collect();
        let obs = Obs::new(&data, 1).unwrap();
        let m = train_hmm_on(&[obs], "a", chan(1), 2).unwrap();
        let mut twin = m.clone();
        twin.class_label = "b".into();
        assert_eq!(classify_obs(obs, std::slice::from_ref(&m)).unwrap(), 0);
        assert_eq!(classify_obs(obs, &[m, twin]).unwrap(), 0);
        assert!(classify_obs(obs, &[]).is_err());
    }
}
