//! Nelder-Mead simplex minimization.

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Stop once the spread of simplex values drops below
    /// `tolerance * (1 + |best|)`.
    pub tolerance: f64,
    /// Initial simplex edge per coordinate.
    pub step: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub iters: usize,
    pub evals: usize,
    pub converged: bool,
    /// Best value after each iteration; never increases.
    pub history: Vec<f64>,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` from `x0`. Non-finite values are treated as `+inf`, so a
/// box constraint can be expressed by returning infinity outside it.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let fx0 = eval(x0);
    simplex.push((x0.to_vec(), fx0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.step.get(i).copied().unwrap_or(1.0);
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    let mut history = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    while iters < opts.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && worst - best <= opts.tolerance * (1.0 + best.abs()) {
            converged = true;
            break;
        }
        iters += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let towards = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, w)| c + coef * (c - w)).collect()
        };

        let xr = towards(REFLECT, &simplex[n].0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = towards(EXPAND, &simplex[n].0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = towards(CONTRACT, &simplex[n].0);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = towards(-CONTRACT, &simplex[n].0);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x_best.iter().zip(&v.0).map(|(b, x)| b + SHRINK * (x - b)).collect();
                    let fx = eval(&x);
                    *v = (x, fx);
                }
            }
        }
        let current = simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        history.push(current.min(history.last().copied().unwrap_or(f64::INFINITY)));
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fmin) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        fmin,
        iters,
        evals,
        converged,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_iters: 5000,
            tolerance: 1e-14,
            step: vec![0.5, 0.5],
        };
        let res = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!(res.converged);
        assert!((res.x[0] - 1.0).abs() < 1e-4 && (res.x[1] - 1.0).abs() < 1e-4);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_infinite_barrier() {
        // minimum of (x-3)^2 restricted to x <= 1
        let f = |x: &[f64]| {
            if x[0] > 1.0 {
                f64::INFINITY
            } else {
                (x[0] - 3.0).powi(2)
            }
        };
        let opts = NelderMeadOptions {
            max_iters: 500,
            tolerance: 1e-12,
            step: vec![0.3],
        };
        let res = nelder_mead(f, &[0.0], &opts);
        assert!(res.x[0] <= 1.0 && res.x[0] > 0.999);
    }
}
