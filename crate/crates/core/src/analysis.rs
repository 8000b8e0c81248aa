//! Coefficient significance, sensor selection and tolerance bands.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{GomError, Result};
use crate::gom::{CoefficientTrajectory, GomEquation};
use crate::topology::SkeletonTopology;
use crate::trainer::TrainedEquation;

/// Test level for a single timestep.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// A slot counts as significant when more than this fraction of its
/// timesteps reject the null.
pub const SIGNIFICANT_FRACTION: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 12;

/// Two-sided p-value of `mean / sqrt(var)` under a standard normal.
///
/// Zero variance gives 1 for a zero mean and 0 otherwise.
pub fn normal_p_value(mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return if mean == 0.0 { 1.0 } else { 0.0 };
    }
    let z = mean.abs() / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSignificance {
    /// `alpha1`, `alpha2` or `beta:<channel>`.
    pub name: String,
    /// Regressor channel for beta slots.
    pub channel: Option<String>,
    pub tag: Option<String>,
    pub p_values: Vec<f64>,
    /// Fraction of timesteps with `p < SIGNIFICANCE_LEVEL`.
    pub fraction: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSignificance {
    pub target: String,
    pub slots: Vec<SlotSignificance>,
    /// Timesteps where a nonzero mean had zero variance.
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub level: f64,
    pub fraction_threshold: f64,
    pub equations: Vec<EquationSignificance>,
}

/// Per-timestep tests of every coefficient of one trajectory.
pub fn trajectory_ttest(eq: &GomEquation, traj: &CoefficientTrajectory) -> Result<EquationSignificance> {
    if traj.width() != eq.width() {
        return Err(GomError::Shape(format!(
            "trajectory of width {} for equation {} of width {}",
            traj.width(),
            eq.target_name,
            eq.width()
        )));
    }
    let names = eq.slot_names();
    let mut degenerate = 0;
    let slots = (0..eq.width())
        .map(|k| {
            let p_values: Vec<f64> = traj
                .slot(k)
                .iter()
                .zip(traj.slot_variance(k))
                .map(|(&m, v)| {
                    if v <= 0.0 && m != 0.0 {
                        degenerate += 1;
                    }
                    normal_p_value(m, v)
                })
                .collect();
            let hits = p_values.iter().filter(|&&p| p < SIGNIFICANCE_LEVEL).count();
            let fraction = if p_values.is_empty() {
                0.0
            } else {
                hits as f64 / p_values.len() as f64
            };
            let reg = k.checked_sub(2).map(|i| &eq.regressors[i]);
            SlotSignificance {
                name: names[k].clone(),
                channel: reg.map(|r| r.name.clone()),
                tag: reg.map(|r| r.tag.tag().to_string()),
                p_values,
                fraction,
                significant: fraction > SIGNIFICANT_FRACTION,
            }
        })
        .collect();
    if degenerate > 0 {
        warn!(
            "{}: {degenerate} coefficient values with zero variance and nonzero mean",
            eq.target_name
        );
    }
    Ok(EquationSignificance {
        target: eq.target_name.clone(),
        slots,
        degenerate,
    })
}

pub fn coefficient_ttest(trained: &TrainedEquation) -> Result<EquationSignificance> {
    trajectory_ttest(&trained.equation, &trained.trajectory)
}

pub fn significance_report(trained: &[TrainedEquation]) -> Result<SignificanceReport> {
    let equations = trained.par_iter().map(coefficient_ttest).collect::<Result<_>>()?;
    Ok(SignificanceReport {
        level: SIGNIFICANCE_LEVEL,
        fraction_threshold: SIGNIFICANT_FRACTION,
        equations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRanking {
    /// Significant beta slots per regressor channel, over all equations.
    pub counts: BTreeMap<String, usize>,
    /// Channels with a nonzero count, most significant first; ties in
    /// topology order.
    pub ranked: Vec<(String, usize)>,
    pub top_k_channels: usize,
    /// Count of the k-th ranked channel; every channel at or above it is kept.
    pub threshold: usize,
    pub selected_channels: Vec<String>,
    /// Joints owning at least one selected channel, in topology order.
    pub selected_sensors: Vec<String>,
}

/// Counts significant regressor slots per channel and keeps the `top_k`
/// channels, including every channel tied with the k-th, then expands them
/// to whole joints.
pub fn rank_and_select(
    report: &SignificanceReport,
    topology: &SkeletonTopology,
    top_k: usize,
) -> Result<SensorRanking> {
    if report.equations.is_empty() {
        return Err(GomError::Empty("significance report has no equations".into()));
    }
    if top_k == 0 {
        return Err(GomError::InvalidParameter("top_k must be at least 1".into()));
    }
    let mut counts = vec![0usize; topology.channel_count()];
    for eq in &report.equations {
        for slot in &eq.slots {
            if let (Some(channel), true) = (&slot.channel, slot.significant) {
                counts[topology.channel_by_name(channel)?] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let Some(&kth) = order.get(top_k.min(order.len()).wrapping_sub(1)) else {
        return Err(GomError::NothingSelected);
    };
    let threshold = counts[kth];
    let chosen: Vec<usize> = order.iter().copied().filter(|&c| counts[c] >= threshold).collect();

    let mut joints = vec![false; topology.joint_count()];
    for &c in &chosen {
        joints[topology.channel_of(c).0] = true;
    }
    let name = |c: usize| topology.channel_name(c).to_string();
    Ok(SensorRanking {
        counts: (0..counts.len()).map(|c| (name(c), counts[c])).collect(),
        ranked: order.iter().map(|&c| (name(c), counts[c])).collect(),
        top_k_channels: top_k,
        threshold,
        selected_channels: chosen.iter().map(|&c| name(c)).collect(),
        selected_sensors: topology
            .joints()
            .iter()
            .zip(joints)
            .filter(|(_, on)| *on)
            .map(|(j, _)| j.clone())
            .collect(),
    })
}

/// Per-timestep spread of one equation's coefficients over aligned
/// repetitions. Matrices are `T × width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBand {
    pub target: String,
    pub slot_names: Vec<String>,
    pub k_sigma: f64,
    pub repetitions: usize,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl ToleranceBand {
    /// Long-format CSV: `t,slot,mean,std,lower,upper`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,slot,mean,std,lower,upper\n");
        for t in 0..self.mean.len() {
            for (k, slot) in self.slot_names.iter().enumerate() {
                out.push_str(&format!(
                    "{t},{slot},{},{},{},{}\n",
                    self.mean[t][k], self.std[t][k], self.lower[t][k], self.upper[t][k]
                ));
            }
        }
        out
    }
}

/// Mean and population standard deviation (divisor R) per coefficient and
/// timestep, with bands `mean ± k_sigma * std`.
pub fn tolerance_intervals(
    eq: &GomEquation,
    trajectories: &[&CoefficientTrajectory],
    k_sigma: f64,
) -> Result<ToleranceBand> {
    let first = trajectories
        .first()
        .ok_or_else(|| GomError::Empty("no repetitions for tolerance intervals".into()))?;
    if !(k_sigma.is_finite() && k_sigma >= 0.0) {
        return Err(GomError::InvalidParameter("k_sigma must be non-negative".into()));
    }
    let (len, width) = (first.len(), eq.width());
    if let Some(bad) = trajectories.iter().find(|tr| tr.len() != len || tr.width() != width) {
        return Err(GomError::Shape(format!(
            "repetition of {}x{} coefficients, expected {len}x{width}",
            bad.len(),
            bad.width()
        )));
    }
    let r = trajectories.len() as f64;
    let mut band = ToleranceBand {
        target: eq.target_name.clone(),
        slot_names: eq.slot_names(),
        k_sigma,
        repetitions: trajectories.len(),
        mean: Vec::with_capacity(len),
        std: Vec::with_capacity(len),
        lower: Vec::with_capacity(len),
        upper: Vec::with_capacity(len),
    };
    for t in 0..len {
        // Welford updates keep identical repetitions at exactly zero spread.
        let mut mean = vec![0.0; width];
        let mut ss = vec![0.0; width];
        for (i, tr) in trajectories.iter().enumerate() {
            for (k, &x) in tr.row(t).iter().enumerate() {
                let delta = x - mean[k];
                mean[k] += delta / (i + 1) as f64;
                ss[k] += delta * (x - mean[k]);
            }
        }
        let std: Vec<f64> = ss.iter().map(|s| (s.max(0.0) / r).sqrt()).collect();
        band.lower
            .push(mean.iter().zip(&std).map(|(m, s)| m - k_sigma * s).collect());
        band.upper
            .push(mean.iter().zip(&std).map(|(m, s)| m + k_sigma * s).collect());
        band.mean.push(mean);
        band.std.push(std);
    }
    Ok(band)
}

/// Bands for every equation from one fitted model per repetition. Each
/// inner vector holds the equations of one repetition in the same order.
pub fn tolerance_bands(repetitions: &[Vec<TrainedEquation>], k_sigma: f64) -> Result<Vec<ToleranceBand>> {
    let first = repetitions
        .first()
        .ok_or_else(|| GomError::Empty("no repetitions for tolerance intervals".into()))?;
    first
        .iter()
        .enumerate()
        .map(|(i, base)| {
            let trajs = repetitions
                .iter()
                .map(|rep| match rep.get(i) {
                    Some(te) if te.equation == base.equation => Ok(&te.trajectory),
                    _ => Err(GomError::Shape(format!(
                        "repetitions disagree on equation {}",
                        base.equation.target_name
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            tolerance_intervals(&base.equation, &trajs, k_sigma)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gom::build_equation_by_name;

    #[test]
    fn p_values() {
        assert_eq!(normal_p_value(0.0, 1.0), 1.0);
        assert!((normal_p_value(1.96, 1.0) - 0.05).abs() < 1e-3);
        assert!((normal_p_value(-1.96, 1.0) - 0.05).abs() < 1e-3);
        assert_eq!(normal_p_value(0.3, 0.0), 0.0);
        assert_eq!(normal_p_value(0.0, 0.0), 1.0);
    }

    /// Report where only the named beta slots of `target` are significant.
    fn report(target: &str, significant: &[&str]) -> SignificanceReport {
        let topo = SkeletonTopology::default();
        let eq = build_equation_by_name(&topo, target).unwrap();
        let slots = eq
            .slot_names()
            .into_iter()
            .enumerate()
            .map(|(k, name)| {
                let reg = k.checked_sub(2).map(|i| &eq.regressors[i]);
                let on = reg.is_some_and(|r| significant.contains(&r.name.as_str()));
                SlotSignificance {
                    name,
                    channel: reg.map(|r| r.name.clone()),
                    tag: reg.map(|r| r.tag.tag().to_string()),
                    p_values: vec![if on { 0.0 } else { 1.0 }],
                    fraction: if on { 1.0 } else { 0.0 },
                    significant: on,
                }
            })
            .collect();
        SignificanceReport {
            level: SIGNIFICANCE_LEVEL,
            fraction_threshold: SIGNIFICANT_FRACTION,
            equations: vec![EquationSignificance {
                target: target.into(),
                slots,
                degenerate: 0,
            }],
        }
    }

    #[test]
    fn single_winner_selects_its_joint() {
        let topo = SkeletonTopology::default();
        let r = rank_and_select(&report("H.z", &["SP3.z"]), &topo, DEFAULT_TOP_K).unwrap();
        assert_eq!(r.selected_sensors, vec!["SP3".to_string()]);
        assert_eq!(r.counts["SP3.z"], 1);
    }

    #[test]
    fn ties_at_rank_k_are_kept() {
        let topo = SkeletonTopology::default();
        let r = rank_and_select(&report("H.z", &["SP3.z", "SP.z"]), &topo, 1).unwrap();
        assert_eq!(r.selected_sensors, vec!["SP".to_string(), "SP3".to_string()]);
    }

    #[test]
    fn nothing_significant_is_an_error() {
        let topo = SkeletonTopology::default();
        assert!(matches!(
            rank_and_select(&report("H.z", &[]), &topo, 3),
            Err(GomError::NothingSelected)
        ));
        let empty = SignificanceReport {
            level: 0.05,
            fraction_threshold: 0.5,
            equations: vec![],
        };
        assert!(rank_and_select(&empty, &topo, 3).is_err());
    }

    fn traj(values: &[f64]) -> CoefficientTrajectory {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v, 0.0]).collect();
        let vars = vec![vec![0.0, 0.0]; values.len()];
        CoefficientTrajectory::from_rows("J.x", &rows, &vars).unwrap()
    }

    #[test]
    fn two_repetition_band() {
        let eq = GomEquation::autoregressive(0, "J.x");
        let (a, b) = (traj(&[0.0, 1.0]), traj(&[2.0, 1.0]));
        let band = tolerance_intervals(&eq, &[&a, &b], 1.5).unwrap();
        assert_eq!(band.mean[0][0], 1.0);
        assert_eq!(band.std[0][0], 1.0);
        assert_eq!((band.lower[0][0], band.upper[0][0]), (-0.5, 2.5));
        assert_eq!(band.std[1][0], 0.0);
    }

    #[test]
    fn single_repetition_has_zero_width() {
        let eq = GomEquation::autoregressive(0, "J.x");
        let a = traj(&[0.4, -1.0, 2.0]);
        let band = tolerance_intervals(&eq, &[&a], 2.0).unwrap();
        assert_eq!(band.lower, band.upper);
        assert!(band.std.iter().flatten().all(|&s| s == 0.0));
    }

    #[test]
    fn mismatched_lengths() {
        let eq = GomEquation::autoregressive(0, "J.x");
        let (a, b) = (traj(&[0.0, 1.0]), traj(&[0.0, 1.0, 2.0]));
        assert!(matches!(
            tolerance_intervals(&eq, &[&a, &b], 1.0),
            Err(GomError::Shape(_))
        ));
        assert!(tolerance_intervals(&eq, &[], 1.0).is_err());
    }
}
