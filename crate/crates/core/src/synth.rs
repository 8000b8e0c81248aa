//! Synthetic movement datasets with known coefficients.
//!
//! Every channel follows its own equation with ground-truth coefficients
//! taken from a `SynthSpec`: lag coefficients per channel (given directly or as
//! a damped oscillator) and sparse cross-channel couplings, each either
//! constant or a linear ramp over the sequence. Process noise is Gaussian.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};
use crate::gom::{build_system, eval_equation, CoefficientTrajectory, GomSystem};
use crate::motion::{MovementDataset, PostureSequence, DEFAULT_FRAME_RATE_HZ, MIN_FRAMES};
use crate::seed::derive_seed;
use crate::topology::{SkeletonTopology, TopologyDoc};

const STABILITY_SLACK: f64 = 1e-6;

/// A coefficient value over time: constant, or linear from `start` at the
/// first predicted frame to `end` at the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    Ramp { start: f64, end: f64 },
}

impl Schedule {
    pub fn at(&self, row: usize, rows: usize) -> f64 {
        match *self {
            Schedule::Constant(v) => v,
            Schedule::Ramp { start, end } => {
                if rows <= 1 {
                    start
                } else {
                    start + (end - start) * row as f64 / (rows - 1) as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelDynamics {
    /// `x[t] = alpha1 x[t-1] - alpha2 x[t-2] + ...` from the two start values.
    Explicit { alpha: [Schedule; 2], start: [f64; 2] },
    /// `amplitude * damping^t * cos(2 pi freq t / fps + phase)` before coupling.
    Oscillator {
        freq_hz: f64,
        amplitude: f64,
        #[serde(default = "one")]
        damping: f64,
        #[serde(default)]
        phase: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for ChannelDynamics {
    fn default() -> Self {
        ChannelDynamics::Explicit {
            alpha: [Schedule::Constant(1.0), Schedule::Constant(0.0)],
            start: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub target: String,
    pub source: String,
    pub beta: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    pub reps: usize,
    /// Dynamics for channels not listed in `channels`.
    #[serde(default)]
    pub default: Option<ChannelDynamics>,
    #[serde(default)]
    pub channels: BTreeMap<String, ChannelDynamics>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
    /// Relative per-repetition amplitude variation (uniform, +/-).
    #[serde(default)]
    pub amplitude_jitter: f64,
    /// Per-repetition phase variation in radians (uniform, +/-).
    #[serde(default)]
    pub phase_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Default 19-joint skeleton when absent.
    #[serde(default)]
    pub topology: Option<TopologyDoc>,
    #[serde(default = "default_fps")]
    pub frame_rate_hz: f64,
    pub length: usize,
    pub noise_sigma: f64,
    pub classes: Vec<ClassSpec>,
}

fn default_fps() -> f64 {
    DEFAULT_FRAME_RATE_HZ
}

impl SynthSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn topology(&self) -> Result<SkeletonTopology> {
        match &self.topology {
            Some(doc) => SkeletonTopology::from_doc(doc.clone()),
            None => Ok(SkeletonTopology::default()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: MovementDataset,
    /// Ground-truth coefficient trajectories per class, in equation order.
    pub truth: BTreeMap<String, Vec<CoefficientTrajectory>>,
}

struct ChannelPlan {
    alpha: [Schedule; 2],
    start: [f64; 2],
    oscillator: Option<(f64, f64, f64, f64)>,
}

fn channel_plan(dyn_: &ChannelDynamics, fps: f64) -> Result<ChannelPlan> {
    Ok(match *dyn_ {
        ChannelDynamics::Explicit { alpha, start } => ChannelPlan {
            alpha,
            start,
            oscillator: None,
        },
        ChannelDynamics::Oscillator {
            freq_hz,
            amplitude,
            damping,
            phase,
        } => {
            if !(freq_hz.is_finite() && amplitude.is_finite() && damping > 0.0 && phase.is_finite()) {
                return Err(GomError::SynthSpec("invalid oscillator parameters".into()));
            }
            let w = 2.0 * std::f64::consts::PI * freq_hz / fps;
            ChannelPlan {
                alpha: [
                    Schedule::Constant(2.0 * damping * w.cos()),
                    Schedule::Constant(damping * damping),
                ],
                start: [amplitude * phase.cos(), amplitude * damping * (w + phase).cos()],
                oscillator: Some((w, amplitude, damping, phase)),
            }
        }
    })
}

/// Coefficient rows of every equation for one class.
fn class_truth(
    system: &GomSystem,
    class: &ClassSpec,
    plans: &[ChannelPlan],
    rows: usize,
) -> Result<Vec<CoefficientTrajectory>> {
    let topo = &system.topology;
    let mut betas: Vec<BTreeMap<usize, Schedule>> = vec![BTreeMap::new(); system.channel_count()];
    for c in &class.couplings {
        let target = topo.channel_by_name(&c.target)?;
        let source = topo.channel_by_name(&c.source)?;
        let eq = &system.equations[target];
        if !eq.regressor_channels().any(|r| r == source) {
            return Err(GomError::SynthSpec(format!(
                "{} is not a regressor of {} under the assumption sets",
                c.source, c.target
            )));
        }
        if betas[target].insert(source, c.beta).is_some() {
            return Err(GomError::SynthSpec(format!(
                "duplicate coupling {} -> {}",
                c.source, c.target
            )));
        }
    }
    system
        .equations
        .iter()
        .map(|eq| {
            let plan = &plans[eq.target];
            let mut coefficients = Vec::with_capacity(rows * eq.width());
            for row in 0..rows {
                coefficients.push(plan.alpha[0].at(row, rows));
                coefficients.push(plan.alpha[1].at(row, rows));
                for r in eq.regressor_channels() {
                    coefficients.push(betas[eq.target].get(&r).map_or(0.0, |s| s.at(row, rows)));
                }
            }
            let variances = vec![0.0; coefficients.len()];
            CoefficientTrajectory::new(eq.target_name.clone(), eq.width(), coefficients, variances)
        })
        .collect()
}

/// Largest root modulus of `z^2 - a1 z + a2`.
fn ar2_radius(a1: f64, a2: f64) -> f64 {
    let disc = a1 * a1 - 4.0 * a2;
    if disc < 0.0 {
        a2.sqrt()
    } else {
        let r = disc.sqrt();
        ((a1 + r) / 2.0).abs().max(((a1 - r) / 2.0).abs())
    }
}

/// Largest eigenvalue modulus of the system's state-transition matrix at
/// one row.
///
/// The matrix is block triangular over the strongly connected components
/// of the coupling graph, so each component is solved on its own. Lone
/// channels have a closed form; only cyclic coupling groups need a general
/// eigensolver, which can fail to converge on highly repeated spectra.
pub fn spectral_radius(system: &GomSystem, truth: &[CoefficientTrajectory], row: usize) -> Result<f64> {
    let n = system.channel_count();
    let mut graph = DiGraph::<usize, ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|c| graph.add_node(c)).collect();
    let mut rows = vec![None; n];
    for (eq, tr) in system.equations.iter().zip(truth) {
        let c = tr.row(row);
        for (b, r) in c[2..].iter().zip(eq.regressor_channels()) {
            if *b != 0.0 {
                graph.add_edge(nodes[r], nodes[eq.target], ());
            }
        }
        rows[eq.target] = Some((eq, c));
    }
    let mut radius = 0.0f64;
    for component in tarjan_scc(&graph) {
        let members: Vec<usize> = component.iter().map(|&v| graph[v]).collect();
        let k = members.len();
        if k == 1 {
            if let Some((_, c)) = rows[members[0]] {
                radius = radius.max(ar2_radius(c[0], c[1]));
            }
            continue;
        }
        let local = |ch: usize| members.iter().position(|&m| m == ch);
        let mut comp = DMatrix::<f64>::zeros(2 * k, 2 * k);
        for (i, &ch) in members.iter().enumerate() {
            if let Some((eq, c)) = rows[ch] {
                comp[(i, i)] += c[0];
                comp[(i, k + i)] -= c[1];
                for (b, r) in c[2..].iter().zip(eq.regressor_channels()) {
                    if let Some(j) = local(r) {
                        comp[(i, j)] += b;
                    }
                }
            }
            comp[(k + i, i)] = 1.0;
        }
        let schur = Schur::try_new(comp, f64::EPSILON, 10_000 * k).ok_or_else(|| {
            GomError::SynthSpec(format!(
                "could not determine stability of the coupling cycle through {}",
                system.equations[members[0]].target_name
            ))
        })?;
        radius = schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(radius, f64::max);
    }
    Ok(radius)
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    let topology = spec.topology()?;
    let system = build_system(&topology)?;
    let n = topology.channel_count();
    if spec.length < MIN_FRAMES {
        return Err(GomError::TooShort {
            len: spec.length,
            min: MIN_FRAMES,
        });
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(GomError::SynthSpec("noise_sigma must be non-negative".into()));
    }
    if !(spec.frame_rate_hz.is_finite() && spec.frame_rate_hz > 0.0) {
        return Err(GomError::SynthSpec("frame rate must be positive".into()));
    }
    if spec.classes.is_empty() {
        return Err(GomError::SynthSpec("no classes".into()));
    }
    let labels: BTreeSet<&str> = spec.classes.iter().map(|c| c.label.as_str()).collect();
    if labels.len() != spec.classes.len() {
        return Err(GomError::SynthSpec("duplicate class labels".into()));
    }
    let rows = spec.length - 2;

    let mut truth = BTreeMap::new();
    let mut sequences = Vec::new();
    for (ci, class) in spec.classes.iter().enumerate() {
        if class.reps == 0 {
            return Err(GomError::SynthSpec(format!("class {} has no repetitions", class.label)));
        }
        for name in class.channels.keys() {
            topology.channel_by_name(name)?;
        }
        let fallback = class.default.clone().unwrap_or_default();
        let plans: Vec<ChannelPlan> = topology
            .channel_names()
            .iter()
            .map(|name| channel_plan(class.channels.get(name).unwrap_or(&fallback), spec.frame_rate_hz))
            .collect::<Result<_>>()?;
        let coeffs = class_truth(&system, class, &plans, rows)?;

        let mut probe_rows = vec![0, rows / 2, rows - 1];
        probe_rows.dedup();
        for row in probe_rows {
            let radius = spectral_radius(&system, &coeffs, row)?;
            if radius >= 1.0 + STABILITY_SLACK {
                return Err(GomError::Unstable {
                    class: class.label.clone(),
                    radius,
                });
            }
        }

        for rep in 0..class.reps {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ((ci as u64) << 32) | rep as u64));
            let mut data = vec![0.0; spec.length * n];
            for (c, plan) in plans.iter().enumerate() {
                let gain = 1.0 + class.amplitude_jitter * rng.random_range(-1.0..=1.0);
                let shift = class.phase_jitter * rng.random_range(-1.0..=1.0);
                let start = match plan.oscillator {
                    Some((w, amplitude, damping, phase)) if shift != 0.0 || gain != 1.0 => {
                        let a = amplitude * gain;
                        [a * (phase + shift).cos(), a * damping * (w + phase + shift).cos()]
                    }
                    _ => [plan.start[0] * gain, plan.start[1] * gain],
                };
                data[c] = start[0];
                data[n + c] = start[1];
            }
            for t in 2..spec.length {
                let (before, rest) = data.split_at_mut(t * n);
                let prev2 = &before[(t - 2) * n..(t - 1) * n];
                let prev1 = &before[(t - 1) * n..t * n];
                for (eq, tr) in system.equations.iter().zip(&coeffs) {
                    let mut v = eval_equation(eq, tr.row(t - 2), prev1, prev2)?;
                    if spec.noise_sigma > 0.0 {
                        v += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                    rest[eq.target] = v;
                }
            }
            let seq = PostureSequence::new(topology.channel_names().to_vec(), data, spec.frame_rate_hz)?
                .with_labels(class.label.clone(), format!("rep{rep}"));
            sequences.push(seq);
        }
        truth.insert(class.label.clone(), coeffs);
    }
    Ok(SynthOutput {
        dataset: MovementDataset::new(topology, sequences)?,
        truth,
    })
}
