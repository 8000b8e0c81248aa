//! The equation system: one second-order model per channel.
//!
//! Each channel is predicted from its own two previous values and from the
//! lag-1 values of channels picked by the topology:
//!
//! ```text
//! x[t] = a1[t] * x[t-1] - a2[t] * x[t-2] + sum_i b_i[t] * r_i[t-1]
//! ```
//!
//! Coefficients are stored unsigned; the minus on the second lag is applied
//! at evaluation. Coefficient rows are laid out `[a1, a2, b_1 .. b_n]` with
//! the `b` slots in regressor (channel index) order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};
use crate::topology::{Axis, SkeletonTopology};

/// Which assumption family a regressor belongs to. The lag terms of the
/// target channel (the transitioning assumption) are implicit in every
/// equation and have no tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Assumption {
    /// Other two axes of the same joint.
    #[serde(rename = "H2")]
    IntraJoint,
    /// Same axis of the homologous joint on the paired limb.
    #[serde(rename = "H3")]
    InterLimb,
    /// Same axis of the parent and children.
    #[serde(rename = "H4.1")]
    Serial,
    /// Same axis of two-hop chain neighbours and configured partners.
    #[serde(rename = "H4.2")]
    NonSerial,
}

impl Assumption {
    pub fn tag(self) -> &'static str {
        match self {
            Assumption::IntraJoint => "H2",
            Assumption::InterLimb => "H3",
            Assumption::Serial => "H4.1",
            Assumption::NonSerial => "H4.2",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Regressor channels of one equation grouped by assumption. The sets are
/// pairwise disjoint and never contain the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssumptionSet {
    pub target: usize,
    pub intra_joint: Vec<usize>,
    pub inter_limb: Vec<usize>,
    pub serial: Vec<usize>,
    pub nonserial: Vec<usize>,
}

impl AssumptionSet {
    pub fn from_topology(topology: &SkeletonTopology, target: usize) -> Result<Self> {
        if target >= topology.channel_count() {
            return Err(GomError::UnknownChannel(format!("#{target}")));
        }
        let (joint, axis) = topology.channel_of(target);
        let same_axis = |j: usize| topology.channel_index(j, axis);

        let mut taken = vec![target];
        let mut claim = |candidates: Vec<usize>| -> Vec<usize> {
            let mut out = Vec::new();
            for c in candidates {
                if !taken.contains(&c) {
                    taken.push(c);
                    out.push(c);
                }
            }
            out.sort_unstable();
            out
        };

        let intra_joint = claim(
            Axis::ALL
                .iter()
                .filter(|&&a| a != axis)
                .map(|&a| topology.channel_index(joint, a))
                .collect(),
        );
        let inter_limb = claim(topology.mirror(joint).map(same_axis).into_iter().collect());
        let serial = claim(topology.serial_neighbours(joint).into_iter().map(same_axis).collect());
        let nonserial = claim(
            topology
                .nonserial_neighbours(joint)
                .into_iter()
                .map(same_axis)
                .collect(),
        );
        Ok(AssumptionSet {
            target,
            intra_joint,
            inter_limb,
            serial,
            nonserial,
        })
    }

    fn tagged(&self) -> impl Iterator<Item = (usize, Assumption)> + '_ {
        fn tag(v: &[usize], a: Assumption) -> impl Iterator<Item = (usize, Assumption)> + '_ {
            v.iter().map(move |&c| (c, a))
        }
        tag(&self.intra_joint, Assumption::IntraJoint)
            .chain(tag(&self.inter_limb, Assumption::InterLimb))
            .chain(tag(&self.serial, Assumption::Serial))
            .chain(tag(&self.nonserial, Assumption::NonSerial))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regressor {
    pub channel: usize,
    pub name: String,
    pub tag: Assumption,
}

/// One channel's model: the target plus its lag-1 regressors in channel order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GomEquation {
    pub target: usize,
    pub target_name: String,
    pub regressors: Vec<Regressor>,
}

impl GomEquation {
    /// Equation with only the two lag terms of the target.
    pub fn autoregressive(target: usize, target_name: impl Into<String>) -> Self {
        GomEquation {
            target,
            target_name: target_name.into(),
            regressors: Vec::new(),
        }
    }

    /// Coefficient row width: two lag slots plus one per regressor.
    pub fn width(&self) -> usize {
        2 + self.regressors.len()
    }

    /// Names for each coefficient slot, e.g. `alpha1`, `alpha2`, `beta:H.x`.
    pub fn slot_names(&self) -> Vec<String> {
        let mut out = vec!["alpha1".to_string(), "alpha2".to_string()];
        out.extend(self.regressors.iter().map(|r| format!("beta:{}", r.name)));
        out
    }

    pub fn regressor_channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.regressors.iter().map(|r| r.channel)
    }

    /// Regression row `[x[t-1], -x[t-2], r_1[t-1], ..]` so that the
    /// prediction is the dot product with the unsigned coefficient row.
    pub fn design_row(&self, prev1: &[f64], prev2: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(prev1[self.target]);
        out.push(-prev2[self.target]);
        out.extend(self.regressors.iter().map(|r| prev1[r.channel]));
    }
}

/// Builds the equation for one channel of the topology.
pub fn build_equation(topology: &SkeletonTopology, channel: usize) -> Result<GomEquation> {
    let set = AssumptionSet::from_topology(topology, channel)?;
    let mut regressors: Vec<Regressor> = set
        .tagged()
        .map(|(c, tag)| Regressor {
            channel: c,
            name: topology.channel_name(c).to_string(),
            tag,
        })
        .collect();
    regressors.sort_by_key(|r| r.channel);
    Ok(GomEquation {
        target: channel,
        target_name: topology.channel_name(channel).to_string(),
        regressors,
    })
}

pub fn build_equation_by_name(topology: &SkeletonTopology, channel: &str) -> Result<GomEquation> {
    build_equation(topology, topology.channel_by_name(channel)?)
}

/// Predicts `x[t]` from one coefficient row and the two previous frames.
pub fn eval_equation(eq: &GomEquation, coeffs: &[f64], prev1: &[f64], prev2: &[f64]) -> Result<f64> {
    if coeffs.len() != eq.width() {
        return Err(GomError::Shape(format!(
            "equation {} takes {} coefficients, got {}",
            eq.target_name,
            eq.width(),
            coeffs.len()
        )));
    }
    let max_channel = eq.regressor_channels().chain([eq.target]).max().unwrap_or(0);
    if prev1.len() <= max_channel || prev2.len() <= eq.target {
        return Err(GomError::Shape("history frames do not cover the regressors".into()));
    }
    let mut y = coeffs[0] * prev1[eq.target] - coeffs[1] * prev2[eq.target];
    for (b, r) in coeffs[2..].iter().zip(&eq.regressors) {
        y += b * prev1[r.channel];
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GomSystem {
    pub topology: SkeletonTopology,
    pub equations: Vec<GomEquation>,
}

impl GomSystem {
    pub fn channel_count(&self) -> usize {
        self.equations.len()
    }

    /// Support mask of the system tensor: `true` where an equation has a slot.
    pub fn support(&self) -> Vec<bool> {
        let n = self.channel_count();
        let mut mask = vec![false; n * 2 * n];
        for (i, eq) in self.equations.iter().enumerate() {
            mask[SystemTensor::offset(n, i, 0, eq.target)] = true;
            mask[SystemTensor::offset(n, i, 1, eq.target)] = true;
            for c in eq.regressor_channels() {
                mask[SystemTensor::offset(n, i, 0, c)] = true;
            }
        }
        mask
    }

    /// Scatters one coefficient row per equation into a system tensor.
    pub fn tensor_from_rows<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<SystemTensor> {
        let n = self.channel_count();
        if rows.len() != n {
            return Err(GomError::Shape(format!(
                "{} coefficient rows for {n} equations",
                rows.len()
            )));
        }
        let mut a = SystemTensor::zeros(n);
        for (i, (eq, row)) in self.equations.iter().zip(rows).enumerate() {
            let row = row.as_ref();
            if row.len() != eq.width() {
                return Err(GomError::Shape(format!(
                    "equation {} takes {} coefficients, got {}",
                    eq.target_name,
                    eq.width(),
                    row.len()
                )));
            }
            a.set(i, 0, eq.target, row[0]);
            a.set(i, 1, eq.target, row[1]);
            for (b, c) in row[2..].iter().zip(eq.regressor_channels()) {
                a.set(i, 0, c, *b);
            }
        }
        Ok(a)
    }

    /// Gathers each equation's coefficient row back out of a tensor. Fails
    /// if any entry outside the support is nonzero.
    pub fn rows_from_tensor(&self, a: &SystemTensor) -> Result<Vec<Vec<f64>>> {
        let n = self.channel_count();
        if a.n != n {
            return Err(GomError::Shape(format!("tensor for {} channels, system has {n}", a.n)));
        }
        let mask = self.support();
        if let Some(pos) = a.data.iter().zip(&mask).position(|(v, &m)| !m && *v != 0.0) {
            let (i, w, k) = (pos / (2 * n), (pos / n) % 2, pos % n);
            return Err(GomError::Exchange(format!(
                "nonzero coefficient outside support at ({i}, {w}, {k})"
            )));
        }
        Ok(self
            .equations
            .iter()
            .enumerate()
            .map(|(i, eq)| {
                let mut row = vec![a.get(i, 0, eq.target), a.get(i, 1, eq.target)];
                row.extend(eq.regressor_channels().map(|c| a.get(i, 0, c)));
                row
            })
            .collect())
    }
}

pub fn build_system(topology: &SkeletonTopology) -> Result<GomSystem> {
    let equations = (0..topology.channel_count())
        .map(|c| build_equation(topology, c))
        .collect::<Result<_>>()?;
    Ok(GomSystem {
        topology: topology.clone(),
        equations,
    })
}

/// Dense N×2×N coefficient tensor. Slab `w = 0` multiplies the lag-1 frame,
/// `w = 1` the (negated) lag-2 frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemTensor {
    n: usize,
    data: Vec<f64>,
}

impl SystemTensor {
    pub fn zeros(n: usize) -> Self {
        SystemTensor {
            n,
            data: vec![0.0; 2 * n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * n * n {
            return Err(GomError::Shape(format!(
                "{} values do not form a {n}x2x{n} tensor",
                data.len()
            )));
        }
        Ok(SystemTensor { n, data })
    }

    #[inline]
    fn offset(n: usize, i: usize, w: usize, k: usize) -> usize {
        (i * 2 + w) * n + k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, w: usize, k: usize) -> f64 {
        self.data[Self::offset(self.n, i, w, k)]
    }

    pub fn set(&mut self, i: usize, w: usize, k: usize, v: f64) {
        self.data[Self::offset(self.n, i, w, k)] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Evaluates the whole system in matrix form. `lags` holds the rows
/// `(P[t-1], P[t-2])`. Each output is the sum over the element-wise product
/// of the equation's 2×N coefficient slab with `diag(1, -1) * lags`.
pub fn eval_system_matrix(a: &SystemTensor, lags: [&[f64]; 2]) -> Result<Vec<f64>> {
    let n = a.n;
    if lags[0].len() != n || lags[1].len() != n {
        return Err(GomError::Shape(format!(
            "lag rows of length {} and {}, tensor expects {n}",
            lags[0].len(),
            lags[1].len()
        )));
    }
    let sign = [1.0, -1.0];
    let out = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for w in 0..2 {
                let start = SystemTensor::offset(n, i, w, 0);
                let slab = &a.data[start..start + n];
                for (coef, x) in slab.iter().zip(lags[w]) {
                    acc += coef * (sign[w] * x);
                }
            }
            acc
        })
        .collect();
    Ok(out)
}

/// Time-varying coefficients of one equation with posterior variances.
/// Row `t` holds the coefficients used to predict frame `t + 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTrajectory {
    pub target: String,
    width: usize,
    coefficients: Vec<f64>,
    variances: Vec<f64>,
}

impl CoefficientTrajectory {
    pub fn new(target: impl Into<String>, width: usize, coefficients: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if width < 2 {
            return Err(GomError::Shape(
                "coefficient rows need at least the two lag slots".into(),
            ));
        }
        if !coefficients.len().is_multiple_of(width) || coefficients.len() != variances.len() {
            return Err(GomError::Shape(format!(
                "{} coefficients and {} variances for rows of width {width}",
                coefficients.len(),
                variances.len()
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(GomError::InvalidParameter("non-finite coefficient".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GomError::InvalidParameter("negative or non-finite variance".into()));
        }
        Ok(CoefficientTrajectory {
            target: target.into(),
            width,
            coefficients,
            variances,
        })
    }

    pub fn from_rows(target: impl Into<String>, rows: &[Vec<f64>], var_rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(2, Vec::len);
        if rows.iter().chain(var_rows).any(|r| r.len() != width) || rows.len() != var_rows.len() {
            return Err(GomError::Shape("ragged coefficient rows".into()));
        }
        Self::new(target, width, rows.concat(), var_rows.concat())
    }

    pub fn len(&self) -> usize {
        self.coefficients.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.coefficients[t * self.width..(t + 1) * self.width]
    }

    pub fn var_row(&self, t: usize) -> &[f64] {
        &self.variances[t * self.width..(t + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coefficients.chunks_exact(self.width)
    }

    pub fn var_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.variances.chunks_exact(self.width)
    }

    pub fn alpha(&self, t: usize) -> [f64; 2] {
        let r = self.row(t);
        [r[0], r[1]]
    }

    pub fn beta(&self, t: usize) -> &[f64] {
        &self.row(t)[2..]
    }

    /// Series of one coefficient slot over time.
    pub fn slot(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn slot_variance(&self, k: usize) -> Vec<f64> {
        self.var_rows().map(|r| r[k]).collect()
    }

    /// Time average of every slot.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.width];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let len = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= len);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(eq: &GomEquation, tag: Assumption) -> Vec<&str> {
        eq.regressors
            .iter()
            .filter(|r| r.tag == tag)
            .map(|r| r.name.as_str())
            .collect()
    }

    #[test]
    fn hips_z_equation() {
        let t = SkeletonTopology::default();
        let eq = build_equation_by_name(&t, "H.z").unwrap();
        assert_eq!(names(&eq, Assumption::IntraJoint), ["H.x", "H.y"]);
        assert!(names(&eq, Assumption::InterLimb).is_empty());
        let serial = names(&eq, Assumption::Serial);
        for c in ["SP.z", "RUL.z", "LUL.z"] {
            assert!(serial.contains(&c), "{c} missing from {serial:?}");
        }
        assert!(names(&eq, Assumption::NonSerial).contains(&"SP3.z"));
    }

    #[test]
    fn left_shoulder_x_equation() {
        let t = SkeletonTopology::default();
        let eq = build_equation_by_name(&t, "LSH2.x").unwrap();
        assert_eq!(names(&eq, Assumption::InterLimb), ["RSH2.x"]);
        assert_eq!(names(&eq, Assumption::Serial), ["LSH1.x", "LA.x"]);
        assert_eq!(names(&eq, Assumption::NonSerial), ["SP3.x", "LFA.x"]);
    }

    #[test]
    fn single_joint_topology() {
        let t = SkeletonTopology::from_json_str(r#"{"joints":["J"],"limbs":{"spine":["J"]}}"#).unwrap();
        let eq = build_equation_by_name(&t, "J.y").unwrap();
        assert_eq!(names(&eq, Assumption::IntraJoint), ["J.x", "J.z"]);
        assert_eq!(eq.regressors.len(), 2);
    }

    #[test]
    fn system_sizes() {
        let full = build_system(&SkeletonTopology::default()).unwrap();
        assert_eq!(full.equations.len(), 57);
        let two =
            SkeletonTopology::from_json_str(r#"{"joints":["A","B"],"parent":{"B":"A"},"limbs":{"spine":["A","B"]}}"#)
                .unwrap();
        let sys = build_system(&two).unwrap();
        assert_eq!(sys.equations.len(), 6);
        assert_eq!(sys, build_system(&two).unwrap());
    }

    #[test]
    fn sets_are_disjoint_and_exclude_target() {
        let t = SkeletonTopology::default();
        for c in 0..t.channel_count() {
            let set = AssumptionSet::from_topology(&t, c).unwrap();
            let all: Vec<usize> = set.tagged().map(|(c, _)| c).collect();
            let mut dedup = all.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(all.len(), dedup.len());
            assert!(!all.contains(&c));
        }
    }

    #[test]
    fn identity_coefficients_repeat_last_frame() {
        let t = SkeletonTopology::default();
        let eq = build_equation_by_name(&t, "RA.y").unwrap();
        let prev1: Vec<f64> = (0..57).map(|i| i as f64).collect();
        let prev2 = vec![100.0; 57];
        let mut coeffs = vec![0.0; eq.width()];
        coeffs[0] = 1.0;
        assert_eq!(eval_equation(&eq, &coeffs, &prev1, &prev2).unwrap(), prev1[eq.target]);
    }

    #[test]
    fn second_lag_enters_with_minus_sign() {
        let eq = GomEquation::autoregressive(0, "J.x");
        let base = eval_equation(&eq, &[0.5, 0.0], &[2.0], &[3.0]).unwrap();
        let with_lag2 = eval_equation(&eq, &[0.5, 0.4], &[2.0], &[3.0]).unwrap();
        assert!(with_lag2 < base);
    }

    #[test]
    fn coefficient_length_mismatch() {
        let eq = GomEquation::autoregressive(0, "J.x");
        assert!(eval_equation(&eq, &[1.0, 0.0, 0.3], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn tensor_rows_round_trip_and_support_check() {
        let sys = build_system(&SkeletonTopology::default()).unwrap();
        let rows: Vec<Vec<f64>> = sys
            .equations
            .iter()
            .map(|e| (0..e.width()).map(|k| k as f64 + 0.5).collect())
            .collect();
        let mut a = sys.tensor_from_rows(&rows).unwrap();
        assert_eq!(sys.rows_from_tensor(&a).unwrap(), rows);
        let mask = sys.support();
        let outside = mask.iter().position(|m| !m).unwrap();
        a.data[outside] = 1.0;
        assert!(sys.rows_from_tensor(&a).is_err());
    }

    #[test]
    fn zero_and_identity_tensors() {
        let n = 6;
        let p1: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let p2: Vec<f64> = (0..n).map(|i| 3.0 * i as f64).collect();
        let zero = SystemTensor::zeros(n);
        assert_eq!(eval_system_matrix(&zero, [&p1, &p2]).unwrap(), vec![0.0; n]);
        let mut id = SystemTensor::zeros(n);
        for i in 0..n {
            id.set(i, 0, i, 1.0);
        }
        assert_eq!(eval_system_matrix(&id, [&p1, &p2]).unwrap(), p1);
        assert!(eval_system_matrix(&id, [&p1[..3], &p2]).is_err());
    }

    #[test]
    fn trajectory_validation() {
        assert!(CoefficientTrajectory::new("x", 2, vec![1.0, 0.0], vec![0.1, -0.1]).is_err());
        assert!(CoefficientTrajectory::new("x", 2, vec![f64::NAN, 0.0], vec![0.1, 0.1]).is_err());
        let tr = CoefficientTrajectory::new("x", 3, vec![1.0, 0.0, 2.0, 3.0, 0.5, 4.0], vec![0.0; 6]).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.beta(1), &[4.0]);
        assert_eq!(tr.mean_row(), vec![2.0, 0.25, 3.0]);
    }
}
