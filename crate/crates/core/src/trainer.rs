//! One-shot estimation of time-varying coefficients.
//!
//! Each equation is treated as a regression whose coefficients follow a
//! random walk. For given noise parameters the Kalman filter yields the
//! predictive log-likelihood of the target channel; Nelder-Mead maximizes
//! it over the log noise variances, and an RTS pass over the winning filter
//! gives the reported coefficient trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtw::select_reference;
use crate::error::{GomError, Result};
use crate::gom::{CoefficientTrajectory, GomEquation, GomSystem};
use crate::kalman::{self, Design, TvpModel};
use crate::motion::{MovementDataset, PostureSequence};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::seed::derive_seed;

const LN_VAR_MIN: f64 = -27.631_021_115_928_547; // ln 1e-12
const LN_Q_MAX: f64 = 4.605_170_185_988_091; // ln 100
const LN_R_MAX: f64 = 13.815_510_557_964_274; // ln 1e6
const RESTART_SPREAD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub tolerance: f64,
    /// Extra starts after the first one.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 400,
            tolerance: 1e-9,
            restarts: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfConfig {
    /// Starting random-walk variance for the optimizer.
    pub process_noise_q: f64,
    /// Starting observation variance; derived from the data when unset.
    pub obs_noise_r: Option<f64>,
    /// Prior coefficient mean; defaults to `a1 = 1`, everything else 0.
    pub init_coeff_mean: Option<Vec<f64>>,
    pub init_coeff_var: f64,
    /// Fit one random-walk variance per coefficient instead of a shared one.
    pub per_coefficient_q: bool,
    /// Report RTS-smoothed trajectories; filtered ones otherwise.
    pub smooth: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for KfConfig {
    fn default() -> Self {
        KfConfig {
            process_noise_q: 1e-4,
            obs_noise_r: None,
            init_coeff_mean: None,
            init_coeff_var: 10.0,
            per_coefficient_q: false,
            smooth: true,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl KfConfig {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.process_noise_q) || !self.obs_noise_r.is_none_or(positive) || !positive(self.init_coeff_var) {
            return Err(GomError::InvalidParameter("variances must be positive".into()));
        }
        if !positive(self.optimizer.tolerance) {
            return Err(GomError::InvalidParameter(
                "optimizer tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    fn prior_mean(&self, width: usize) -> Result<Vec<f64>> {
        match &self.init_coeff_mean {
            Some(m) if m.len() == width => Ok(m.clone()),
            Some(m) => Err(GomError::Shape(format!(
                "prior mean of length {}, equation has {width} slots",
                m.len()
            ))),
            None => {
                let mut m = vec![0.0; width];
                m[0] = 1.0;
                Ok(m)
            }
        }
    }
}

/// Noise parameters of the filter. `q` holds either one shared random-walk
/// variance or one per coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub q: Vec<f64>,
    pub r: f64,
}

impl Theta {
    pub fn shared(q: f64, r: f64) -> Self {
        Theta { q: vec![q], r }
    }

    fn model(&self, width: usize, config: &KfConfig) -> Result<TvpModel> {
        let q = match self.q.len() {
            1 => vec![self.q[0]; width],
            n if n == width => self.q.clone(),
            n => {
                return Err(GomError::Shape(format!(
                    "{n} process variances for {width} coefficients"
                )))
            }
        };
        Ok(TvpModel {
            q,
            r: self.r,
            prior_mean: config.prior_mean(width)?,
            prior_var: config.init_coeff_var,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEquation {
    pub equation: GomEquation,
    pub trajectory: CoefficientTrajectory,
    pub theta: Theta,
    pub loglik: f64,
    /// One-step prediction residuals of the filter, one per trajectory row.
    pub innovations: Vec<f64>,
    /// Best log-likelihood after each optimizer iteration, across restarts.
    pub loglik_history: Vec<f64>,
}

impl TrainedEquation {
    /// One-step predictions from the reported trajectory on the training
    /// sequence, aligned with frames `2..T`.
    pub fn one_step_predictions(&self, seq: &PostureSequence) -> Result<Vec<f64>> {
        if seq.len() != self.trajectory.len() + 2 {
            return Err(GomError::Shape("trajectory does not match sequence length".into()));
        }
        (2..seq.len())
            .map(|t| {
                crate::gom::eval_equation(
                    &self.equation,
                    self.trajectory.row(t - 2),
                    seq.frame(t - 1),
                    seq.frame(t - 2),
                )
            })
            .collect()
    }
}

/// Regression problem of one equation on one sequence: rows for frames `2..T`.
pub fn design_for(eq: &GomEquation, seq: &PostureSequence) -> Result<Design> {
    let n = seq.channel_count();
    if eq.target >= n || eq.regressor_channels().any(|c| c >= n) {
        return Err(GomError::Shape(format!(
            "sequence lacks channels of equation {}",
            eq.target_name
        )));
    }
    if seq.len() < crate::motion::MIN_FRAMES {
        return Err(GomError::TooShort {
            len: seq.len(),
            min: crate::motion::MIN_FRAMES,
        });
    }
    let mut rows = Vec::with_capacity(seq.len() - 2);
    let mut y = Vec::with_capacity(seq.len() - 2);
    for t in 2..seq.len() {
        let mut row = Vec::with_capacity(eq.width());
        eq.design_row(seq.frame(t - 1), seq.frame(t - 2), &mut row);
        rows.push(row);
        y.push(seq.value(t, eq.target));
    }
    Ok(Design { rows, y })
}

fn trajectory_from(
    target: &str,
    width: usize,
    means: &[nalgebra::DVector<f64>],
    covs: &[nalgebra::DMatrix<f64>],
) -> Result<CoefficientTrajectory> {
    let coefficients = means.iter().flat_map(|m| m.iter().copied()).collect();
    let variances = covs
        .iter()
        .flat_map(|p| (0..width).map(move |i| p[(i, i)].max(0.0)))
        .collect();
    CoefficientTrajectory::new(target, width, coefficients, variances)
}

fn filter_design(
    eq: &GomEquation,
    design: &Design,
    theta: &Theta,
    config: &KfConfig,
) -> Result<(kalman::FilterOutput, CoefficientTrajectory)> {
    let model = theta.model(eq.width(), config)?;
    let filtered = kalman::filter(design, &model)?;
    let trajectory = if config.smooth {
        let s = kalman::smooth(&filtered, &model)?;
        trajectory_from(&eq.target_name, eq.width(), &s.means, &s.covs)?
    } else {
        trajectory_from(&eq.target_name, eq.width(), &filtered.means, &filtered.covs)?
    };
    Ok((filtered, trajectory))
}

/// Runs the filter for fixed noise parameters. Returns the predictive
/// log-likelihood and the coefficient trajectory (smoothed unless the
/// config asks for filtered output).
pub fn kf_filter(
    eq: &GomEquation,
    seq: &PostureSequence,
    theta: &Theta,
    config: &KfConfig,
) -> Result<(f64, CoefficientTrajectory)> {
    config.validate()?;
    let design = design_for(eq, seq)?;
    let (filtered, trajectory) = filter_design(eq, &design, theta, config)?;
    Ok((filtered.loglik, trajectory))
}

fn initial_r(design: &Design) -> f64 {
    let diffs: Vec<f64> = design.y.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.is_empty() {
        return 1.0;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
    (0.1 * var).clamp(1e-8, 1e4)
}

/// Maximum-likelihood fit of the noise parameters, then one filter and
/// smoother pass at the optimum.
pub fn mle_fit(eq: &GomEquation, seq: &PostureSequence, config: &KfConfig) -> Result<TrainedEquation> {
    config.validate()?;
    let design = design_for(eq, seq)?;
    let width = eq.width();
    let q_dims = if config.per_coefficient_q { width } else { 1 };
    let prior_mean = config.prior_mean(width)?;

    let in_box = |x: &[f64]| {
        let (q, r) = x.split_at(q_dims);
        q.iter().all(|v| (LN_VAR_MIN..=LN_Q_MAX).contains(v)) && (LN_VAR_MIN..=LN_R_MAX).contains(&r[0])
    };
    let objective = |x: &[f64]| -> f64 {
        if !in_box(x) {
            return f64::INFINITY;
        }
        let q: Vec<f64> = if q_dims == 1 {
            vec![x[0].exp(); width]
        } else {
            x[..q_dims].iter().map(|v| v.exp()).collect()
        };
        let model = TvpModel {
            q,
            r: x[q_dims].exp(),
            prior_mean: prior_mean.clone(),
            prior_var: config.init_coeff_var,
        };
        kalman::loglik(&design, &model).map_or(f64::INFINITY, |ll| -ll)
    };

    let mut x0 = vec![config.process_noise_q.ln(); q_dims];
    x0.push(config.obs_noise_r.unwrap_or_else(|| initial_r(&design)).ln());
    let clamp = |x: &mut Vec<f64>| {
        for (i, v) in x.iter_mut().enumerate() {
            let hi = if i < q_dims { LN_Q_MAX } else { LN_R_MAX };
            *v = v.clamp(LN_VAR_MIN, hi);
        }
    };
    clamp(&mut x0);

    let opts = NelderMeadOptions {
        max_iters: config.optimizer.max_iters,
        tolerance: config.optimizer.tolerance,
        step: vec![1.0; q_dims + 1],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.optimizer.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history: Vec<f64> = Vec::new();
    for attempt in 0..=config.optimizer.restarts {
        let mut start = x0.clone();
        if attempt > 0 {
            for v in &mut start {
                *v += RESTART_SPREAD * rng.sample::<f64, _>(StandardNormal);
            }
            clamp(&mut start);
        }
        let res = nelder_mead(objective, &start, &opts);
        let floor = history.last().copied().unwrap_or(f64::NEG_INFINITY);
        history.extend(res.history.iter().map(|&f| (-f).max(floor)));
        if res.fmin.is_finite() && best.as_ref().is_none_or(|b| res.fmin < b.1) {
            best = Some((res.x, res.fmin));
        }
        // keep the running maximum across restarts
        let mut running = f64::NEG_INFINITY;
        for v in &mut history {
            running = running.max(*v);
            *v = running;
        }
    }
    let (x, _) = best.ok_or(GomError::OptimizerFailed(config.optimizer.restarts + 1))?;
    let theta = Theta {
        q: x[..q_dims].iter().map(|v| v.exp()).collect(),
        r: x[q_dims].exp(),
    };
    let (filtered, trajectory) = filter_design(eq, &design, &theta, config)?;
    Ok(TrainedEquation {
        equation: eq.clone(),
        trajectory,
        theta,
        loglik: filtered.loglik,
        innovations: filtered.innovations,
        loglik_history: history,
    })
}

/// Fits every equation of the system on the class's DTW-medoid sample.
pub fn fit_reference(
    system: &GomSystem,
    dataset: &MovementDataset,
    class_label: &str,
    config: &KfConfig,
) -> Result<Vec<TrainedEquation>> {
    let reference = select_reference(dataset, class_label)?;
    fit_sequence(system, reference, config)
}

/// Fits every equation of the system on one sequence. Equation `i` uses an
/// optimizer seed derived from the config seed and `i`, so results do not
/// depend on scheduling.
pub fn fit_sequence(system: &GomSystem, seq: &PostureSequence, config: &KfConfig) -> Result<Vec<TrainedEquation>> {
    seq.check_topology(&system.topology)?;
    system
        .equations
        .par_iter()
        .enumerate()
        .map(|(i, eq)| {
            let mut cfg = config.clone();
            cfg.optimizer.seed = derive_seed(config.optimizer.seed, i as u64);
            mle_fit(eq, seq, &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinusoid_seq(freq_hz: f64, len: usize) -> (PostureSequence, f64) {
        let w = 2.0 * std::f64::consts::PI * freq_hz / 90.0;
        let data: Vec<f64> = (0..len).map(|t| 20.0 * (w * t as f64 + 0.3).sin()).collect();
        (PostureSequence::new(vec!["J.x".into()], data, 90.0).unwrap(), w)
    }

    #[test]
    fn trajectory_length_is_len_minus_two() {
        let (seq, _) = sinusoid_seq(1.0, 50);
        let eq = GomEquation::autoregressive(0, "J.x");
        let (ll, tr) = kf_filter(&eq, &seq, &Theta::shared(1e-6, 1e-3), &KfConfig::default()).unwrap();
        assert!(ll.is_finite());
        assert_eq!(tr.len(), 48);
        assert_eq!(tr.width(), 2);
    }

    #[test]
    fn rejects_bad_theta() {
        let (seq, _) = sinusoid_seq(1.0, 20);
        let eq = GomEquation::autoregressive(0, "J.x");
        let cfg = KfConfig::default();
        assert!(kf_filter(&eq, &seq, &Theta::shared(0.0, 1.0), &cfg).is_err());
        assert!(kf_filter(&eq, &seq, &Theta::shared(1.0, -2.0), &cfg).is_err());
    }

    #[test]
    fn refit_with_fitted_theta_reproduces_loglik() {
        let (seq, _) = sinusoid_seq(1.5, 120);
        let eq = GomEquation::autoregressive(0, "J.x");
        let cfg = KfConfig::default();
        let fit = mle_fit(&eq, &seq, &cfg).unwrap();
        let (ll, tr) = kf_filter(&eq, &seq, &fit.theta, &cfg).unwrap();
        assert!((ll - fit.loglik).abs() < 1e-9);
        assert_eq!(tr, fit.trajectory);
        assert!(fit.loglik_history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(fit.innovations.len(), fit.trajectory.len());
    }

    #[test]
    fn sinusoid_recovers_closed_form_ar2() {
        let (seq, w) = sinusoid_seq(1.0, 180);
        let eq = GomEquation::autoregressive(0, "J.x");
        let fit = mle_fit(&eq, &seq, &KfConfig::default()).unwrap();
        let mean = fit.trajectory.mean_row();
        assert!((mean[0] - 2.0 * w.cos()).abs() < 1e-2, "{mean:?}");
        assert!((mean[1] - 1.0).abs() < 1e-2, "{mean:?}");
    }

    #[test]
    fn per_coefficient_q_fits() {
        let (seq, _) = sinusoid_seq(2.0, 80);
        let eq = GomEquation::autoregressive(0, "J.x");
        let cfg = KfConfig {
            per_coefficient_q: true,
            ..KfConfig::default()
        };
        let fit = mle_fit(&eq, &seq, &cfg).unwrap();
        assert_eq!(fit.theta.q.len(), 2);
    }
}
