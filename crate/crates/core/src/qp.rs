//! Dense convex quadratic programs
//!
//! ```text
//! minimize   ½ xᵀ H x + fᵀ x
//! subject to E x = e,  A x ≥ b
//! ```
//!
//! Two solvers are provided. [`solve_primal`] is a primal active-set method
//! started from a feasible point; it tolerates a singular `H` and its objective
//! never increases. [`solve_dual`] is the Goldfarb–Idnani dual method; it needs
//! no starting point, requires `H` positive definite, and reports infeasible
//! constraint sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Quadratic program data.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub eq_rows: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_rows: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem `½ xᵀHx + fᵀx`.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n || f.len() != n {
            return Err(Error::invalid("quadratic form dimensions are inconsistent"));
        }
        Ok(Self {
            h,
            f,
            eq_rows: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_rows: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        })
    }

    pub fn with_equalities(mut self, rows: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if rows.ncols() != self.dim() || rows.nrows() != rhs.len() {
            return Err(Error::invalid("equality constraint dimensions are inconsistent"));
        }
        self.eq_rows = rows;
        self.eq_rhs = rhs;
        Ok(self)
    }

    pub fn with_inequalities(mut self, rows: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if rows.ncols() != self.dim() || rows.nrows() != rhs.len() {
            return Err(Error::invalid("inequality constraint dimensions are inconsistent"));
        }
        self.ineq_rows = rows;
        self.ineq_rhs = rhs;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.eq_rows * x - &self.eq_rhs).amax();
        let ineq = (&self.ineq_rhs - &self.ineq_rows * x).max().max(0.0);
        if self.ineq_rows.nrows() == 0 {
            eq
        } else {
            eq.max(ineq)
        }
    }

    /// Symmetry defect `max |H - Hᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.h - self.h.transpose()).amax()
    }
}

/// Outcome of a QP solve.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective value after every iteration (primal method only).
    pub history: Vec<f64>,
    /// Stationarity residual `‖Hx + f - Eᵀμ - Aᵀλ‖∞` over the final working set.
    pub kkt_residual: f64,
    pub converged: bool,
    pub active: Vec<usize>,
}

/// Orthonormal basis of the null space of `rows` (columns of the result).
fn null_space(rows: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if rows.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // eigenvectors of RᵀR with zero eigenvalue span the null space
    let gram = rows.transpose() * rows;
    let eig = gram.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let cols: Vec<_> = (0..n)
        .filter(|&i| eig.eigenvalues[i] <= 1e-12 * scale)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn rank_increases(base: &DMatrix<f64>, row: &DMatrix<f64>) -> bool {
    if base.nrows() == 0 {
        return row.norm() > 0.0;
    }
    let z = null_space(base, base.ncols());
    (row * &z).norm() > 1e-9 * row.norm()
}

/// Primal active-set method from a feasible starting point.
pub fn solve_primal(problem: &QpProblem, x0: &DVector<f64>, max_iter: usize, tol: f64) -> Result<QpSolution> {
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::invalid("starting point has the wrong dimension"));
    }
    let feas_tol = 1e-9 * (1.0 + problem.ineq_rhs.amax().max(problem.eq_rhs.amax()));
    if problem.max_violation(x0) > feas_tol.max(1e-8) {
        return Err(Error::invalid("starting point is not feasible"));
    }
    let a = &problem.ineq_rows;
    let b = &problem.ineq_rhs;
    let neq = problem.eq_rows.nrows();
    let mut x = x0.clone();

    // working set: all equalities plus an independent subset of active inequalities
    let mut working: Vec<usize> = Vec::new();
    let working_rows = |working: &[usize]| {
        let mut rows = DMatrix::zeros(neq + working.len(), n);
        rows.rows_mut(0, neq).copy_from(&problem.eq_rows);
        for (r, &i) in working.iter().enumerate() {
            rows.row_mut(neq + r).copy_from(&a.row(i));
        }
        rows
    };
    for i in 0..a.nrows() {
        let slack = a.row(i).dot(&x.transpose()) - b[i];
        if slack.abs() <= feas_tol && rank_increases(&working_rows(&working), &a.rows(i, 1).into_owned()) {
            working.push(i);
        }
    }

    let mut history = vec![problem.objective(&x)];
    let mut kkt = f64::INFINITY;
    // set once x minimizes the objective on the current working set
    let mut settled = false;
    for iter in 0..max_iter {
        let g = &problem.h * &x + &problem.f;
        let w = working_rows(&working);
        let mut step = DVector::zeros(n);
        let mut curvature_free = false;
        let z = if settled { DMatrix::zeros(n, 0) } else { null_space(&w, n) };
        if z.ncols() > 0 {
            let hz = z.transpose() * &problem.h * &z;
            let gz = z.transpose() * &g;
            let eig = hz.clone().symmetric_eigen();
            let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
            let mut wz = DVector::zeros(z.ncols());
            let mut flat = DVector::zeros(z.ncols());
            for k in 0..z.ncols() {
                let v = eig.eigenvectors.column(k);
                let proj = v.dot(&gz);
                if eig.eigenvalues[k] > 1e-13 * scale {
                    wz -= v * (proj / eig.eigenvalues[k]);
                } else {
                    flat -= v * proj;
                }
            }
            if flat.norm() > tol * (1.0 + gz.norm()) {
                // zero-curvature descent direction: follow it until a constraint blocks
                step = &z * flat;
                curvature_free = true;
            } else {
                step = &z * wz;
            }
        }

        if settled || step.norm() <= 1e-14 * (1.0 + x.norm()) {
            settled = false;
            // multipliers from Wᵀ λ = g
            let lambda = if w.nrows() > 0 {
                w.transpose().svd(true, true).solve(&g, 1e-14).map_err(|e| Error::Numerical(e.to_string()))?
            } else {
                DVector::zeros(0)
            };
            kkt = (&g - w.transpose() * &lambda).amax();
            let worst = (0..working.len()).map(|r| (r, lambda[neq + r])).min_by(|p, q| p.1.partial_cmp(&q.1).unwrap());
            match worst {
                Some((r, l)) if l < -tol * (1.0 + g.amax()) => {
                    working.remove(r);
                    history.push(problem.objective(&x));
                    continue;
                }
                _ => {
                    return Ok(QpSolution {
                        objective: problem.objective(&x),
                        x,
                        iterations: iter + 1,
                        history,
                        kkt_residual: kkt,
                        converged: true,
                        active: working,
                    });
                }
            }
        }

        // ratio test against inactive inequalities
        let mut alpha = if curvature_free { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        for i in 0..a.nrows() {
            if working.contains(&i) {
                continue;
            }
            let ap = a.row(i).dot(&step.transpose());
            if ap < -1e-14 * a.row(i).norm() * step.norm() {
                let ratio = ((b[i] - a.row(i).dot(&x.transpose())) / ap).max(0.0);
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
        }
        if alpha.is_infinite() {
            return Err(Error::Numerical("quadratic program is unbounded below".into()));
        }
        let candidate = &x + &step * alpha;
        // guard against round-off making the objective creep upward
        let accepted = problem.objective(&candidate) <= problem.objective(&x) + 1e-15 * problem.objective(&x).abs();
        if accepted {
            x = candidate;
        }
        match blocking {
            Some(i) => working.push(i),
            None => settled = !curvature_free || !accepted,
        }
        if !accepted && blocking.is_none() {
            settled = true;
        }
        history.push(problem.objective(&x));
    }
    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        iterations: max_iter,
        history,
        kkt_residual: kkt,
        converged: false,
        active: working,
    })
}

/// Goldfarb–Idnani dual active-set method. `H` must be positive definite.
pub fn solve_dual(problem: &QpProblem, max_iter: usize) -> Result<QpSolution> {
    let chol = problem
        .h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("quadratic form is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;

    // constraints as (normal, rhs, is_equality); equalities first
    let neq = problem.eq_rows.nrows();
    let nin = problem.ineq_rows.nrows();
    let normal = |c: usize| -> DVector<f64> {
        if c < neq {
            problem.eq_rows.row(c).transpose()
        } else {
            problem.ineq_rows.row(c - neq).transpose()
        }
    };
    let rhs = |c: usize| if c < neq { problem.eq_rhs[c] } else { problem.ineq_rhs[c - neq] };

    let mut x = -chol.solve(&problem.f);
    // active set: (constraint index, sign, multiplier); sign flips equalities approached from above
    let mut active: Vec<(usize, f64, f64)> = Vec::new();
    let scale = 1.0 + problem.f.amax() + problem.h.amax();
    let mut iterations = 0;

    let directions = |active: &[(usize, f64, f64)], np: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let nt = &l_inv * np;
        if active.is_empty() {
            return (l_inv.transpose() * nt, DVector::zeros(0));
        }
        let cols: Vec<DVector<f64>> = active.iter().map(|&(c, s, _)| &l_inv * normal(c) * s).collect();
        let nmat = DMatrix::from_columns(&cols);
        let r = nmat.clone().svd(true, true).solve(&nt, 1e-14).unwrap_or_else(|_| DVector::zeros(cols.len()));
        let z = l_inv.transpose() * (nt - nmat * &r);
        (z, r)
    };

    loop {
        // pick the constraint to add: pending equalities first, then the most violated inequality
        let mut pick: Option<(usize, f64, f64)> = None;
        for c in 0..neq {
            if active.iter().any(|a| a.0 == c) {
                continue;
            }
            let s = normal(c).dot(&x) - rhs(c);
            if s.abs() > 1e-12 * scale || pick.is_none() {
                let sign = if s > 0.0 { -1.0 } else { 1.0 };
                pick = Some((c, sign, -s.abs()));
                break;
            }
        }
        if pick.is_none() {
            for c in neq..neq + nin {
                let nc = normal(c);
                let s = (nc.dot(&x) - rhs(c)) / nc.norm().max(f64::MIN_POSITIVE);
                if s < -1e-10 * scale && pick.is_none_or(|p| s < p.2) && !active.iter().any(|a| a.0 == c) {
                    pick = Some((c, 1.0, s));
                }
            }
        }
        let Some((p, sign, _)) = pick else {
            let g = &problem.h * &x + &problem.f;
            let mut resid = g.clone();
            for &(c, s, u) in &active {
                resid -= normal(c) * (s * u);
            }
            return Ok(QpSolution {
                objective: problem.objective(&x),
                x,
                iterations,
                history: Vec::new(),
                kkt_residual: resid.amax(),
                converged: true,
                active: active.iter().map(|a| a.0).collect(),
            });
        };
        let np = normal(p) * sign;
        let bp = rhs(p) * sign;
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Numerical("dual active-set method did not converge".into()));
            }
            let (z, r) = directions(&active, &np);
            let slack = np.dot(&x) - bp;
            // partial step keeps inequality multipliers nonnegative
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &(c, _, u)) in active.iter().enumerate() {
                if c >= neq && r[j] > 1e-14 {
                    let t = u / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.norm() > 1e-12 * (1.0 + x.norm()) && zn > 0.0 {
                -slack / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if t.is_infinite() {
                return Err(Error::Infeasible);
            }
            if t2.is_finite() {
                x += &z * t;
            }
            u_plus += t;
            for (j, a) in active.iter_mut().enumerate() {
                a.2 -= t * r[j];
            }
            if t2 <= t1 {
                active.push((p, sign, u_plus));
                break;
            }
            let j = drop.expect("partial step has a blocking multiplier");
            active.remove(j);
        }
    }
}
