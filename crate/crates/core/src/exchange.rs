//! Versioned JSON file of fitted coefficient trajectories.
//!
//! The file carries the skeleton, the regressor list of every equation with
//! its assumption tag, and the `T × (2 + n)` coefficient and variance
//! matrices. Any trainer can produce it; import checks every equation
//! against the one the topology implies.
//!
//! ```json
//! {
//!   "format": "gomkit-coefficients",
//!   "version": 1,
//!   "topology": { "joints": [..], "parent": {..}, "limbs": {..} },
//!   "frame_rate_hz": 90.0,
//!   "class_label": "wave",
//!   "source": "kf",
//!   "equations": [
//!     {
//!       "target": "H.x",
//!       "regressors": [{ "channel": "H.y", "tag": "H2" }, ..],
//!       "theta": { "q": [0.0001], "r": 0.01 },
//!       "loglik": 123.4,
//!       "coefficients": [[1.0, 0.0, ..], ..],
//!       "variances": [[0.1, 0.1, ..], ..]
//!     }
//!   ]
//! }
//! ```

use std::collections::HashSet;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};
use crate::gom::{build_equation_by_name, Assumption, CoefficientTrajectory, GomEquation, GomSystem, SystemTensor};
use crate::topology::{SkeletonTopology, TopologyDoc};
use crate::trainer::{Theta, TrainedEquation};

pub const FORMAT_NAME: &str = "gomkit-coefficients";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorEntry {
    pub channel: String,
    pub tag: Assumption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationEntry {
    pub target: String,
    pub regressors: Vec<RegressorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Theta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<Vec<Vec<f64>>>,
}

/// On-disk layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFile {
    pub format: String,
    pub version: u32,
    pub topology: TopologyDoc,
    pub frame_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub equations: Vec<EquationEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEquation {
    pub equation: GomEquation,
    pub trajectory: CoefficientTrajectory,
    pub theta: Option<Theta>,
    pub loglik: Option<f64>,
}

/// Validated coefficient trajectories for some or all equations of a
/// topology, sorted by target channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientModel {
    pub topology: SkeletonTopology,
    pub frame_rate_hz: f64,
    pub class_label: Option<String>,
    pub source: Option<String>,
    pub equations: Vec<ModelEquation>,
}

impl CoefficientModel {
    pub fn new(
        topology: SkeletonTopology,
        frame_rate_hz: f64,
        class_label: Option<String>,
        source: Option<String>,
        mut equations: Vec<ModelEquation>,
    ) -> Result<Self> {
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(GomError::Exchange("frame rate must be positive".into()));
        }
        if equations.is_empty() {
            return Err(GomError::Exchange("no equations".into()));
        }
        equations.sort_by_key(|e| e.equation.target);
        let mut seen = HashSet::new();
        for e in &equations {
            if !seen.insert(e.equation.target) {
                return Err(GomError::Exchange(format!(
                    "duplicate equation for {}",
                    e.equation.target_name
                )));
            }
            if e.trajectory.width() != e.equation.width() {
                return Err(GomError::Exchange(format!(
                    "{}: {} coefficients per row, equation has {}",
                    e.equation.target_name,
                    e.trajectory.width(),
                    e.equation.width()
                )));
            }
        }
        let len = equations[0].trajectory.len();
        if equations.iter().any(|e| e.trajectory.len() != len) {
            return Err(GomError::Exchange("trajectories differ in length".into()));
        }
        Ok(CoefficientModel {
            topology,
            frame_rate_hz,
            class_label,
            source,
            equations,
        })
    }

    pub fn from_trained(
        topology: &SkeletonTopology,
        trained: &[TrainedEquation],
        frame_rate_hz: f64,
        class_label: Option<String>,
    ) -> Result<Self> {
        let equations = trained
            .iter()
            .map(|t| ModelEquation {
                equation: t.equation.clone(),
                trajectory: t.trajectory.clone(),
                theta: Some(t.theta.clone()),
                loglik: Some(t.loglik),
            })
            .collect();
        Self::new(
            topology.clone(),
            frame_rate_hz,
            class_label,
            Some("kf".into()),
            equations,
        )
    }

    /// Number of coefficient rows; rows cover frames `2..len + 2`.
    pub fn len(&self) -> usize {
        self.equations[0].trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The full equation system, if every channel has an equation.
    pub fn system(&self) -> Result<GomSystem> {
        let n = self.topology.channel_count();
        if self.equations.len() != n {
            return Err(GomError::Exchange(format!(
                "model has {} of {n} equations; generation needs all of them",
                self.equations.len()
            )));
        }
        Ok(GomSystem {
            topology: self.topology.clone(),
            equations: self.equations.iter().map(|e| e.equation.clone()).collect(),
        })
    }

    /// System tensor at coefficient row `t`.
    pub fn tensor(&self, system: &GomSystem, t: usize) -> Result<SystemTensor> {
        let rows: Vec<&[f64]> = self.equations.iter().map(|e| e.trajectory.row(t)).collect();
        system.tensor_from_rows(&rows)
    }

    pub fn to_file(&self) -> CoefficientFile {
        CoefficientFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            topology: self.topology.doc().clone(),
            frame_rate_hz: self.frame_rate_hz,
            class_label: self.class_label.clone(),
            source: self.source.clone(),
            equations: self
                .equations
                .iter()
                .map(|e| EquationEntry {
                    target: e.equation.target_name.clone(),
                    regressors: e
                        .equation
                        .regressors
                        .iter()
                        .map(|r| RegressorEntry {
                            channel: r.name.clone(),
                            tag: r.tag,
                        })
                        .collect(),
                    theta: e.theta.clone(),
                    loglik: e.loglik,
                    coefficients: e.trajectory.rows().map(<[f64]>::to_vec).collect(),
                    variances: Some(e.trajectory.var_rows().map(<[f64]>::to_vec).collect()),
                })
                .collect(),
        }
    }

    pub fn from_file(file: CoefficientFile) -> Result<Self> {
        if file.format != FORMAT_NAME {
            return Err(GomError::Exchange(format!("unknown format {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(GomError::Version {
                found: file.version,
                expected: FORMAT_VERSION,
            });
        }
        let topology = SkeletonTopology::from_doc(file.topology)?;
        let equations = file
            .equations
            .into_iter()
            .map(|entry| {
                let equation = build_equation_by_name(&topology, &entry.target)?;
                let listed: Vec<(&str, Assumption)> =
                    entry.regressors.iter().map(|r| (r.channel.as_str(), r.tag)).collect();
                let expected: Vec<(&str, Assumption)> =
                    equation.regressors.iter().map(|r| (r.name.as_str(), r.tag)).collect();
                if listed != expected {
                    return Err(GomError::Exchange(format!(
                        "regressors of {} do not match the topology",
                        entry.target
                    )));
                }
                let variances = match entry.variances {
                    Some(v) => v,
                    None => {
                        warn!("{}: no variances in exchange file, using zeros", entry.target);
                        entry.coefficients.iter().map(|r| vec![0.0; r.len()]).collect()
                    }
                };
                let trajectory =
                    CoefficientTrajectory::from_rows(entry.target.clone(), &entry.coefficients, &variances)
                        .map_err(|e| GomError::Exchange(format!("{}: {e}", entry.target)))?;
                Ok(ModelEquation {
                    equation,
                    trajectory,
                    theta: entry.theta,
                    loglik: entry.loglik,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(topology, file.frame_rate_hz, file.class_label, file.source, equations)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("coefficient file serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GomError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| GomError::io(path, e))
    }
}
