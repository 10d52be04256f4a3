//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.

use nalgebra::{DMatrix, DVector};

pub(crate) trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// `out[i] = model_i(p) − data_i`
    fn residuals(&self, p: &[f64], out: &mut [f64]);
    /// Row `i`, column `k` holds ∂r_i/∂p_k.
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>);
    /// Clamp `p` back into the feasible set.
    fn project(&self, _p: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub jtj_diagonal: Vec<f64>,
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn normal_equations(jac: &DMatrix<f64>, r: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let rv = DVector::from_column_slice(r);
    (jac.transpose() * jac, jac.transpose() * rv)
}

pub(crate) fn minimize(problem: &impl LeastSquares, start: &[f64], settings: LmSettings) -> LmOutcome {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let tol = settings.tolerance;

    let mut p = start.to_vec();
    problem.project(&mut p);
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r);
    let mut cost = cost_of(&r);
    let initial_cost = cost;

    let mut jac = DMatrix::zeros(m, n);
    problem.jacobian(&p, &mut jac);
    let (mut a, mut g) = normal_equations(&jac, &r);

    let max_diag = |a: &DMatrix<f64>| (0..n).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    let mut lambda = 1e-3 * max_diag(&a).max(f64::MIN_POSITIVE.sqrt());
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = cost == 0.0 || g.norm() < tol;

    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    while !converged && iterations < settings.max_iterations {
        iterations += 1;
        let floor = 1e-12 * max_diag(&a).max(1e-300);
        let mut damped = a.clone();
        for i in 0..n {
            damped[(i, i)] += lambda * a[(i, i)].max(floor);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
            lambda *= nu;
            nu *= 2.0;
            continue;
        };

        for k in 0..n {
            trial[k] = p[k] + step[k];
        }
        problem.project(&mut trial);
        let delta = DVector::from_iterator(n, (0..n).map(|k| trial[k] - p[k]));
        let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step_small = delta.norm() <= tol * (p_norm + tol);

        problem.residuals(&trial, &mut r_trial);
        let trial_cost = cost_of(&r_trial);
        if trial_cost.is_finite() && trial_cost < cost {
            let predicted = -(2.0 * g.dot(&delta) + (delta.transpose() * &a * &delta)[(0, 0)]);
            let rho = if predicted > 0.0 {
                (cost - trial_cost) / predicted
            } else {
                0.5
            };
            let relative_change = (cost - trial_cost) / cost;
            std::mem::swap(&mut p, &mut trial);
            std::mem::swap(&mut r, &mut r_trial);
            cost = trial_cost;
            problem.jacobian(&p, &mut jac);
            (a, g) = normal_equations(&jac, &r);
            lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            converged = cost == 0.0 || relative_change < tol || g.norm() < tol || step_small;
        } else {
            lambda *= nu;
            nu *= 2.0;
            // no representable improvement left along this direction
            if step_small || !lambda.is_finite() {
                converged = g.norm() < tol.sqrt() || step_small;
                break;
            }
        }
    }

    LmOutcome {
        params: p,
        cost,
        initial_cost,
        iterations,
        converged,
        jtj_diagonal: (0..n).map(|i| a[(i, i)]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fit y = a·exp(b·x).
    struct Exp {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Exp {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for (i, (&x, &y)) in self.x.iter().zip(&self.y).enumerate() {
                out[i] = p[0] * (p[1] * x).exp() - y;
            }
        }
        fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
            for (i, &x) in self.x.iter().enumerate() {
                let e = (p[1] * x).exp();
                jac[(i, 0)] = e;
                jac[(i, 1)] = p[0] * x * e;
            }
        }
    }

    #[test]
    fn recovers_exponential() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y = x.iter().map(|x| 2.5 * (-1.3 * x).exp()).collect();
        let out = minimize(
            &Exp { x, y },
            &[1.0, -0.5],
            LmSettings {
                max_iterations: 500,
                tolerance: 1e-9,
            },
        );
        assert!(out.converged);
        assert!((out.params[0] - 2.5).abs() < 1e-8);
        assert!((out.params[1] + 1.3).abs() < 1e-8);
        assert!(out.cost <= out.initial_cost);
    }
}
