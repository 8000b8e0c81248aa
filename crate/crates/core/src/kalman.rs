//! Kalman filter and RTS smoother for regressions with random-walk
//! coefficients.
//!
//! The latent state is the coefficient vector `b[t]`, evolving as
//! `b[t] = b[t-1] + w[t]` with `w ~ N(0, diag(q))`. Each observation is
//! `y[t] = h[t] . b[t] + v[t]` with `v ~ N(0, r)`, where `h[t]` is the
//! regression row. The first step uses the prior directly; the random-walk
//! variance is added between consecutive steps.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{GomError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct TvpModel {
    /// Random-walk variance per coefficient.
    pub q: Vec<f64>,
    pub r: f64,
    pub prior_mean: Vec<f64>,
    pub prior_var: f64,
}

impl TvpModel {
    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn validate(&self) -> Result<()> {
        if self.q.len() != self.dim() {
            return Err(GomError::Shape(format!(
                "{} process variances for {} coefficients",
                self.q.len(),
                self.dim()
            )));
        }
        if !self.q.iter().all(|q| q.is_finite() && *q > 0.0) {
            return Err(GomError::InvalidParameter("process variance must be positive".into()));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(GomError::InvalidParameter(
                "observation variance must be positive".into(),
            ));
        }
        if !(self.prior_var.is_finite() && self.prior_var > 0.0) {
            return Err(GomError::InvalidParameter("prior variance must be positive".into()));
        }
        Ok(())
    }
}

/// Regression rows and targets, one per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub loglik: f64,
    pub innovations: Vec<f64>,
    pub innovation_vars: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

fn run(design: &Design, model: &TvpModel, keep: bool) -> Result<FilterOutput> {
    model.validate()?;
    let d = model.dim();
    if design.rows.len() != design.len() {
        return Err(GomError::Shape("design rows and targets differ in length".into()));
    }
    if let Some(row) = design.rows.iter().find(|r| r.len() != d) {
        return Err(GomError::Shape(format!(
            "regression row of width {}, model has {d}",
            row.len()
        )));
    }

    let q = DVector::from_column_slice(&model.q);
    let mut m = DVector::from_column_slice(&model.prior_mean);
    let mut p = DMatrix::from_diagonal_element(d, d, model.prior_var);
    let identity = DMatrix::<f64>::identity(d, d);

    let mut out = FilterOutput {
        loglik: 0.0,
        innovations: Vec::with_capacity(design.len()),
        innovation_vars: Vec::with_capacity(design.len()),
        means: Vec::new(),
        covs: Vec::new(),
    };
    for (t, (row, &y)) in design.rows.iter().zip(&design.y).enumerate() {
        if t > 0 {
            for i in 0..d {
                p[(i, i)] += q[i];
            }
        }
        let h = DVector::from_column_slice(row);
        let ph = &p * &h;
        let f = h.dot(&ph) + model.r;
        if !(f.is_finite() && f > 0.0) {
            return Err(GomError::SingularInnovation(t));
        }
        let v = y - h.dot(&m);
        out.loglik += -0.5 * (LN_2PI + f.ln() + v * v / f);

        let k = &ph / f;
        m += &k * v;
        // Joseph form keeps the covariance positive semi-definite when r is tiny.
        let a = &identity - &k * h.transpose();
        p = &a * &p * a.transpose() + (&k * k.transpose()) * model.r;
        symmetrize(&mut p);

        out.innovations.push(v);
        out.innovation_vars.push(f);
        if keep {
            out.means.push(m.clone());
            out.covs.push(p.clone());
        }
    }
    if !out.loglik.is_finite() {
        return Err(GomError::InvalidParameter("non-finite log-likelihood".into()));
    }
    Ok(out)
}

/// Predictive log-likelihood `sum_t log p(y[t] | y[..t])` without storing
/// the state path.
pub fn loglik(design: &Design, model: &TvpModel) -> Result<f64> {
    run(design, model, false).map(|o| o.loglik)
}

/// Full forward pass keeping filtered means and covariances.
pub fn filter(design: &Design, model: &TvpModel) -> Result<FilterOutput> {
    run(design, model, true)
}

/// Rauch-Tung-Striebel backward pass over a filter output.
pub fn smooth(filtered: &FilterOutput, model: &TvpModel) -> Result<SmootherOutput> {
    let n = filtered.means.len();
    let mut means = filtered.means.clone();
    let mut covs = filtered.covs.clone();
    if n < 2 {
        return Ok(SmootherOutput { means, covs });
    }
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&model.q));
    for t in (0..n - 1).rev() {
        let pf = &filtered.covs[t];
        let p_pred = pf + &q;
        // gain = pf * p_pred^-1, computed as (p_pred^-1 * pf)^T since both are symmetric
        let solved = match p_pred.clone().cholesky() {
            Some(ch) => ch.solve(pf),
            None => p_pred
                .clone()
                .lu()
                .solve(pf)
                .ok_or_else(|| GomError::InvalidParameter(format!("singular predicted covariance at step {t}")))?,
        };
        let gain = solved.transpose();
        let m_next = means[t + 1].clone();
        let p_next = covs[t + 1].clone();
        means[t] = &filtered.means[t] + &gain * (m_next - &filtered.means[t]);
        let mut p = pf + &gain * (p_next - p_pred) * gain.transpose();
        symmetrize(&mut p);
        covs[t] = p;
    }
    Ok(SmootherOutput { means, covs })
}

/// `log N(x; 0, var)`.
pub fn gaussian_logpdf(x: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + x * x / var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d: usize, q: f64, r: f64) -> TvpModel {
        TvpModel {
            q: vec![q; d],
            r,
            prior_mean: vec![0.0; d],
            prior_var: 10.0,
        }
    }

    #[test]
    fn zero_regressors_keep_prior() {
        let design = Design {
            rows: vec![vec![0.0, 0.0]; 20],
            y: vec![0.0; 20],
        };
        let m = model(2, 1e-3, 0.5);
        let out = filter(&design, &m).unwrap();
        let expected: f64 = (0..20).map(|_| gaussian_logpdf(0.0, 0.5)).sum();
        assert!((out.loglik - expected).abs() < 1e-12);
        assert!(out.means.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    /// Hand-rolled scalar recursion for a one-coefficient regression.
    #[test]
    fn scalar_case_matches_hand_recursion() {
        let xs = [1.0, -0.5, 2.0, 0.3, 1.2, -1.1, 0.8];
        let ys = [0.9, -0.4, 2.3, 0.1, 1.0, -1.3, 0.9];
        let (q, r, p0) = (0.05_f64, 0.2_f64, 10.0_f64);
        let (mut m, mut p, mut ll) = (0.0, p0, 0.0);
        for (t, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
            if t > 0 {
                p += q;
            }
            let f = x * x * p + r;
            let v = y - x * m;
            ll += -0.5 * ((2.0 * PI).ln() + f.ln() + v * v / f);
            let k = p * x / f;
            m += k * v;
            p *= 1.0 - k * x;
        }
        let design = Design {
            rows: xs.iter().map(|&x| vec![x]).collect(),
            y: ys.to_vec(),
        };
        let out = filter(&design, &model(1, q, r)).unwrap();
        assert!((out.loglik - ll).abs() < 1e-12);
        assert!((out.means.last().unwrap()[0] - m).abs() < 1e-12);
        assert!((out.covs.last().unwrap()[(0, 0)] - p).abs() < 1e-12);
    }

    #[test]
    fn smoother_end_matches_filter_and_reduces_variance() {
        let design = Design {
            rows: (0..30).map(|t| vec![1.0, (t as f64 * 0.3).sin()]).collect(),
            y: (0..30).map(|t| 0.5 + 0.2 * (t as f64 * 0.3).sin()).collect(),
        };
        let m = model(2, 1e-3, 0.01);
        let f = filter(&design, &m).unwrap();
        let s = smooth(&f, &m).unwrap();
        assert_eq!(s.means.last(), f.means.last());
        for t in 0..30 {
            for i in 0..2 {
                assert!(s.covs[t][(i, i)] <= f.covs[t][(i, i)] + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_positive_variances() {
        let design = Design {
            rows: vec![vec![1.0]; 3],
            y: vec![1.0; 3],
        };
        assert!(loglik(&design, &model(1, 0.0, 1.0)).is_err());
        assert!(loglik(&design, &model(1, 1.0, -1.0)).is_err());
    }
}
