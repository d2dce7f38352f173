//! Small dense linear programs: two-phase tableau simplex with Bland's rule.
//!
//! Used by price selection, where problems have at most a few dozen
//! variables. Bland's rule keeps the pivot sequence (and so the returned
//! vertex) fully deterministic.

const PIVOT_EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

/// minimize `c·x` subject to `A x <= b` and `0 <= x <= upper`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(objective.len(), upper.len());
        Self {
            objective,
            upper,
            rows: Vec::new(),
        }
    }

    pub fn var_count(&self) -> usize {
        self.objective.len()
    }

    /// Adds `coeffs · x <= rhs`.
    pub fn add_le(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.var_count());
        self.rows.push((coeffs, rhs));
    }

    pub fn solve(&self) -> LpOutcome {
        let n = self.var_count();
        // All constraints as rows; upper bounds become rows too.
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(self.rows.len() + n);
        for (a, b) in &self.rows {
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                if *b < -1e-9 * (1.0 + b.abs()) {
                    return LpOutcome::Infeasible;
                }
                continue;
            }
            rows.push((a.iter().map(|v| v / scale).collect(), b / scale));
        }
        for (j, u) in self.upper.iter().enumerate() {
            if *u < 0.0 {
                return LpOutcome::Infeasible;
            }
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            rows.push((a, *u));
        }
        let m = rows.len();
        let artificial: Vec<usize> = (0..m).filter(|i| rows[*i].1 < 0.0).collect();
        let ncols = n + m + artificial.len();
        let rhs = ncols;
        let mut t = vec![vec![0.0; ncols + 1]; m];
        let mut basis = vec![0usize; m];
        let mut art_col = n + m;
        for (i, (a, b)) in rows.iter().enumerate() {
            let flip = if *b < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i][j] = flip * a[j];
            }
            t[i][n + i] = flip;
            t[i][rhs] = flip * b;
            if *b < 0.0 {
                t[i][art_col] = 1.0;
                basis[i] = art_col;
                art_col += 1;
            } else {
                basis[i] = n + i;
            }
        }
        let feas_tol = 1e-9 * (1.0 + rows.iter().fold(0.0f64, |acc, r| acc.max(r.1.abs())));

        // Phase 1: minimize the sum of artificials.
        if !artificial.is_empty() {
            let mut obj = vec![0.0; ncols + 1];
            for &i in &artificial {
                for j in 0..=ncols {
                    obj[j] -= t[i][j];
                }
            }
            for j in n + m..ncols {
                obj[j] = 0.0;
            }
            if !run(&mut t, &mut obj, &mut basis, ncols) {
                return LpOutcome::Infeasible;
            }
            if -obj[rhs] > feas_tol {
                return LpOutcome::Infeasible;
            }
            // Drive artificials out of the basis where possible.
            for i in 0..m {
                if basis[i] >= n + m {
                    if let Some(j) = (0..n + m).find(|j| t[i][*j].abs() > 1e-9) {
                        pivot(&mut t, &mut obj, &mut basis, i, j);
                    }
                }
            }
        }

        // Phase 2 with artificial columns frozen.
        let mut obj = vec![0.0; ncols + 1];
        obj[..n].copy_from_slice(&self.objective);
        for i in 0..m {
            let cb = if basis[i] < n { self.objective[basis[i]] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..=ncols {
                    obj[j] -= cb * t[i][j];
                }
            }
        }
        for row in t.iter_mut() {
            for v in row[n + m..ncols].iter_mut() {
                *v = 0.0;
            }
        }
        if !run(&mut t, &mut obj, &mut basis, n + m) {
            return LpOutcome::Infeasible;
        }
        let mut x = vec![0.0; n];
        for i in 0..m {
            if basis[i] < n {
                x[basis[i]] = t[i][rhs].clamp(0.0, self.upper[basis[i]]);
            }
        }
        let value = x.iter().zip(&self.objective).map(|(a, c)| a * c).sum();
        LpOutcome::Optimal { x, value }
    }
}

/// Runs simplex pivots over columns `0..active`. Returns false if the pivot
/// budget ran out or the program is unbounded.
fn run(t: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize], active: usize) -> bool {
    let rhs = obj.len() - 1;
    for _ in 0..MAX_PIVOTS {
        let Some(enter) = (0..active).find(|j| obj[*j] < -PIVOT_EPS) else {
            return true;
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            let a = row[enter];
            if a > PIVOT_EPS {
                let ratio = row[rhs].max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, r)) => {
                        if ratio < r - 1e-12 * (1.0 + r.abs()) || (ratio <= r + 1e-12 * (1.0 + r.abs()) && basis[i] < basis[k]) {
                            Some((i, ratio))
                        } else {
                            Some((k, r))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leave else {
            return false;
        };
        pivot(t, obj, basis, row, enter);
    }
    log::warn!("simplex pivot budget exhausted");
    false
}

fn pivot(t: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[row].clone();
    for (i, r) in t.iter_mut().enumerate() {
        if i != row {
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    let f = obj[col];
    if f != 0.0 {
        for (v, pv) in obj.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
    }
    basis[row] = col;
}
