//! Independent exact solvers used to cross-check the production regression
//! fit: a self-contained partial-pivot elimination for the ridge normal
//! equations and a naive gradient-descent minimizer of the regularized
//! mean-squared-error objective. Deliberately shares no linear algebra with
//! the inference module.

use crate::error::{CoreError, Result};

/// Solves (X^T X + lambda * M) w = X^T y by Gaussian elimination with
/// partial pivoting, where M is the identity with a zero at the intercept
/// column when one is given.
pub fn solve_normal_equations(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    intercept: Option<usize>,
) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.is_empty() {
        return Err(CoreError::Regression("design matrix and target lengths differ".into()));
    }
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &target) in x.iter().zip(y.iter()) {
        if row.len() != p {
            return Err(CoreError::Regression("ragged design matrix".into()));
        }
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * target;
        }
    }
    for i in 0..p {
        if intercept != Some(i) {
            a[i][i] += lambda;
        }
    }

    // Forward elimination with partial pivoting on the augmented system.
    for col in 0..p {
        let pivot_row = (col..p)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 {
            return Err(CoreError::Regression(
                "singular normal equations (lambda = 0 and rank-deficient features)".into(),
            ));
        }
        a.swap(col, pivot_row);
        for row in col + 1..p {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..=p {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    let mut w = vec![0.0; p];
    for row in (0..p).rev() {
        let mut acc = a[row][p];
        for col in row + 1..p {
            acc -= a[row][col] * w[col];
        }
        w[row] = acc / a[row][row];
    }
    Ok(w)
}

/// The regularized mean-squared-error objective:
/// (1/N) sum (y - Xw)^2 + mu * |w|^2, intercept column unpenalized.
pub struct RidgeProblem<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
    pub mu: f64,
    pub intercept: Option<usize>,
}

impl RidgeProblem<'_> {
    pub fn objective(&self, w: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let mut sse = 0.0;
        for (row, &target) in self.x.iter().zip(self.y.iter()) {
            let pred: f64 = row.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            sse += (target - pred) * (target - pred);
        }
        let penalty: f64 = w
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.intercept != Some(i))
            .map(|(_, v)| v * v)
            .sum();
        sse / n + self.mu * penalty
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n = self.x.len() as f64;
        let p = w.len();
        let mut grad = vec![0.0; p];
        for (row, &target) in self.x.iter().zip(self.y.iter()) {
            let pred: f64 = row.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let residual = pred - target;
            for i in 0..p {
                grad[i] += 2.0 * residual * row[i] / n;
            }
        }
        for i in 0..p {
            if self.intercept != Some(i) {
                grad[i] += 2.0 * self.mu * w[i];
            }
        }
        grad
    }
}

/// Fixed-step gradient descent from zero. Aborts when the objective rises
/// for ten consecutive steps.
pub fn gd_minimize(problem: &RidgeProblem, steps: usize, learning_rate: f64) -> Result<Vec<f64>> {
    let p = problem.x[0].len();
    let mut w = vec![0.0; p];
    let mut prev_objective = problem.objective(&w);
    let mut rising = 0;
    for step in 0..steps {
        let grad = problem.gradient(&w);
        for (wi, gi) in w.iter_mut().zip(grad.iter()) {
            *wi -= learning_rate * gi;
        }
        let objective = problem.objective(&w);
        if objective > prev_objective {
            rising += 1;
            if rising >= 10 {
                return Err(CoreError::Regression(format!(
                    "gradient descent diverged at step {step}: objective {objective:.6e} after {prev_objective:.6e}; lower the learning rate"
                )));
            }
        } else {
            rising = 0;
        }
        prev_objective = objective;
    }
    Ok(w)
}
