//! Operator-splitting QP solver.
//!
//! Ruiz-equilibrated ADMM on the split `z = Ax`, with per-row penalties
//! (stiffer on equality rows), over-relaxation and periodic residual
//! balancing of the penalty. Whenever the multipliers suggest an active set
//! the solver tries a polish step: the equality-constrained KKT system for
//! that set is solved directly and accepted only if the result passes a full
//! KKT test. Small force QPs usually finish on the first or second polish.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{QpError, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    /// Absolute tolerance on both primal and dual residuals.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Residuals, polishing and infeasibility are checked every this many
    /// iterations.
    pub check_interval: usize,
    /// Penalty rebalancing period (iterations).
    pub rescale_interval: usize,
    pub polish: bool,
    pub infeasibility_tolerance: f64,
    pub ruiz_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            check_interval: 5,
            rescale_interval: 50,
            polish: true,
            infeasibility_tolerance: 1e-7,
            ruiz_iterations: 10,
        }
    }
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const INF_BOUND: f64 = 1e20;

/// Starting point for a solve, in unscaled problem coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl From<&QpSolution> for WarmStart {
    fn from(sol: &QpSolution) -> Self {
        Self {
            x: sol.x.clone(),
            y: sol.y.clone(),
        }
    }
}

/// Holds settings plus scratch space; one instance per thread of control.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn equilibrate(problem: &QpProblem, iterations: usize) -> Scaled {
    let n = problem.num_vars();
    let m = problem.num_constraints();
    let mut p = problem.p.clone();
    let mut q = problem.q.clone();
    let mut a = problem.a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;

    let clip = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iterations {
        // Column norms of [P; A] and row norms of A.
        let mut dd = DVector::zeros(n);
        for j in 0..n {
            let mut norm = 0.0_f64;
            for i in 0..n {
                norm = norm.max(p[(i, j)].abs());
            }
            for i in 0..m {
                norm = norm.max(a[(i, j)].abs());
            }
            dd[j] = 1.0 / clip(norm).sqrt();
        }
        let mut ee = DVector::zeros(m);
        for i in 0..m {
            let norm = a.row(i).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            ee[i] = 1.0 / clip(norm).sqrt();
        }
        for i in 0..n {
            for j in 0..n {
                p[(i, j)] *= dd[i] * dd[j];
            }
            q[i] *= dd[i];
        }
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] *= ee[i] * dd[j];
            }
        }
        d.component_mul_assign(&dd);
        e.component_mul_assign(&ee);

        // Cost scaling keeps P and q near unit size.
        let mean_col = (0..n)
            .map(|j| (0..n).fold(0.0_f64, |acc, i| acc.max(p[(i, j)].abs())))
            .sum::<f64>()
            / n.max(1) as f64;
        let gamma = 1.0 / clip(mean_col.max(inf_norm(&q)));
        p *= gamma;
        q *= gamma;
        c *= gamma;
    }

    let scale_bound = |b: f64, ei: f64| {
        if b.is_infinite() || b.abs() >= INF_BOUND {
            b.signum() * f64::INFINITY
        } else {
            b * ei
        }
    };
    let l = DVector::from_fn(m, |i, _| scale_bound(problem.lower[i], e[i]));
    let u = DVector::from_fn(m, |i, _| scale_bound(problem.upper[i], e[i]));
    Scaled { p, q, a, l, u, d, e, c }
}

/// Unscaled residuals of a candidate `(x, y)`.
fn residuals(problem: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let ax = &problem.a * x;
    let mut prim = 0.0_f64;
    for i in 0..ax.len() {
        let v = ax[i];
        prim = prim.max(problem.lower[i] - v).max(v - problem.upper[i]);
    }
    let stat = &problem.p * x + &problem.q + problem.a.transpose() * y;
    (prim.max(0.0), inf_norm(&stat))
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        self.solve_warm(problem, None)
    }

    pub fn solve_warm(&mut self, problem: &QpProblem, warm: Option<&WarmStart>) -> Result<QpSolution, QpError> {
        problem.validate()?;
        let s = &self.settings;
        let n = problem.num_vars();
        let m = problem.num_constraints();
        // Consecutive control ticks rarely change the active set, so the warm
        // start's set is tried directly before any iteration.
        if let Some(w) = warm.filter(|w| s.polish && w.x.len() == n && w.y.len() == m && m > 0) {
            let guess = QpSolution {
                x: w.x.clone(),
                y: w.y.clone(),
                status: QpStatus::MaxIterations,
                iterations: 0,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                polished: false,
            };
            if let Some(p) = polish(problem, &guess, s.tolerance) {
                return Ok(p);
            }
        }
        let sc = equilibrate(problem, s.ruiz_iterations);

        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(m);
        if let Some(w) = warm.filter(|w| w.x.len() == n && w.y.len() == m) {
            x = w.x.component_div(&sc.d);
            y = w.y.component_div(&sc.e) * sc.c;
        }
        let mut z = &sc.a * &x;
        for i in 0..m {
            z[i] = z[i].clamp(sc.l[i], sc.u[i]);
        }

        let row_kind = |i: usize| {
            if sc.l[i].is_infinite() && sc.u[i].is_infinite() {
                RHO_MIN
            } else if (sc.u[i] - sc.l[i]).abs() < 1e-12 * (1.0 + sc.u[i].abs()) {
                RHO_EQ_SCALE
            } else {
                1.0
            }
        };
        let mut rho_scalar = s.rho;
        let rho_vec = |rho: f64| DVector::from_fn(m, |i, _| {
            let k = row_kind(i);
            if k == RHO_MIN { RHO_MIN } else { (rho * k).clamp(RHO_MIN, RHO_MAX) }
        });
        let mut rho = rho_vec(rho_scalar);
        let factor = |rho: &DVector<f64>| -> Result<Cholesky<f64, Dyn>, QpError> {
            let mut k = sc.p.clone();
            for i in 0..n {
                k[(i, i)] += s.sigma;
            }
            let weighted = DMatrix::from_fn(m, n, |i, j| sc.a[(i, j)] * rho[i]);
            k += sc.a.transpose() * weighted;
            Cholesky::new(k).ok_or(QpError::Factorization)
        };
        let mut chol = factor(&rho)?;

        let mut best = None;
        let mut last_active: Option<Vec<i8>> = None;
        let mut y_prev = y.clone();
        let mut rhs = DVector::zeros(n);
        let mut z_tilde = DVector::zeros(m);
        let mut iterations = 0;

        let unscale = |x: &DVector<f64>, y: &DVector<f64>| (x.component_mul(&sc.d), y.component_mul(&sc.e) / sc.c);

        for k in 1..=s.max_iterations.max(1) {
            iterations = k;
            // rhs = σx − q + Aᵀ(ρ∘z − y)
            let w = rho.component_mul(&z) - &y;
            rhs.copy_from(&x);
            rhs *= s.sigma;
            rhs -= &sc.q;
            rhs.gemv_tr(1.0, &sc.a, &w, 1.0);
            chol.solve_mut(&mut rhs);
            z_tilde.gemv(1.0, &sc.a, &rhs, 0.0);

            x = &rhs * s.alpha + &x * (1.0 - s.alpha);
            let z_relax = &z_tilde * s.alpha + &z * (1.0 - s.alpha);
            for i in 0..m {
                let zn = (z_relax[i] + y[i] / rho[i]).clamp(sc.l[i], sc.u[i]);
                y[i] += rho[i] * (z_relax[i] - zn);
                z[i] = zn;
            }

            if k % s.check_interval.max(1) != 0 && k != s.max_iterations {
                continue;
            }

            // Scaled residual pieces, also used for penalty balancing.
            let ax = &sc.a * &x;
            let px = &sc.p * &x;
            let aty = sc.a.transpose() * &y;
            let (xu, yu) = unscale(&x, &y);
            let prim_u = inf_norm(&(&ax - &z).component_div(&sc.e));
            let dual_u = inf_norm(&(&px + &sc.q + &aty).component_div(&sc.d)) / sc.c;

            if prim_u <= s.tolerance && dual_u <= s.tolerance {
                let mut sol = QpSolution {
                    x: xu,
                    y: yu,
                    status: QpStatus::Solved,
                    iterations,
                    primal_residual: prim_u,
                    dual_residual: dual_u,
                    polished: false,
                };
                if s.polish {
                    if let Some(p) = polish(problem, &sol, s.tolerance) {
                        sol = QpSolution { iterations, ..p };
                    }
                }
                return Ok(sol);
            }

            if s.polish && m > 0 {
                let active = active_set(problem, &xu, &yu);
                if last_active.as_ref() != Some(&active) {
                    let candidate = QpSolution {
                        x: xu.clone(),
                        y: yu.clone(),
                        status: QpStatus::MaxIterations,
                        iterations,
                        primal_residual: prim_u,
                        dual_residual: dual_u,
                        polished: false,
                    };
                    if let Some(p) = polish_with(problem, &candidate, &active, s.tolerance) {
                        return Ok(QpSolution { iterations, ..p });
                    }
                    last_active = Some(active);
                }
            }

            // Primal infeasibility certificate on the multiplier increments.
            let dy = &y - &y_prev;
            let dy_norm = inf_norm(&dy.component_mul(&sc.e));
            if m > 0 && dy_norm > s.infeasibility_tolerance {
                let atdy = inf_norm(&(sc.a.transpose() * &dy).component_div(&sc.d));
                let mut support = 0.0;
                let mut bounded = true;
                for i in 0..m {
                    if dy[i] > 0.0 {
                        if sc.u[i].is_infinite() {
                            bounded = false;
                            break;
                        }
                        support += sc.u[i] * dy[i];
                    } else if dy[i] < 0.0 {
                        if sc.l[i].is_infinite() {
                            bounded = false;
                            break;
                        }
                        support += sc.l[i] * dy[i];
                    }
                }
                let tol = s.infeasibility_tolerance * dy_norm;
                if bounded && atdy <= tol && support < -tol {
                    return Ok(QpSolution {
                        x: xu,
                        y: yu,
                        status: QpStatus::Infeasible,
                        iterations,
                        primal_residual: prim_u,
                        dual_residual: dual_u,
                        polished: false,
                    });
                }
            }
            y_prev.copy_from(&y);

            best = Some((xu, yu, prim_u, dual_u));

            if k % s.rescale_interval.max(1) == 0 {
                let prim_scaled = inf_norm(&(&ax - &z));
                let dual_scaled = inf_norm(&(&px + &sc.q + &aty));
                let prim_den = inf_norm(&ax).max(inf_norm(&z)).max(1e-10);
                let dual_den = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&sc.q)).max(1e-10);
                let ratio = ((prim_scaled / prim_den) / (dual_scaled / dual_den).max(1e-20)).sqrt();
                let candidate = (rho_scalar * ratio).clamp(RHO_MIN, RHO_MAX);
                if candidate > 5.0 * rho_scalar || candidate < 0.2 * rho_scalar {
                    rho_scalar = candidate;
                    rho = rho_vec(rho_scalar);
                    chol = factor(&rho)?;
                }
            }
        }

        let (x_out, y_out, prim, dual) = best.unwrap_or_else(|| {
            let (xu, yu) = unscale(&x, &y);
            let (p, d) = residuals(problem, &xu, &yu);
            (xu, yu, p, d)
        });
        Ok(QpSolution {
            x: x_out,
            y: y_out,
            status: QpStatus::MaxIterations,
            iterations,
            primal_residual: prim,
            dual_residual: dual,
            polished: false,
        })
    }
}

/// −1 lower bound active, +1 upper active, 2 equality, 0 inactive.
fn active_set(problem: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> Vec<i8> {
    let ax = &problem.a * x;
    (0..problem.num_constraints())
        .map(|i| {
            let (l, u) = (problem.lower[i], problem.upper[i]);
            if l == u {
                2
            } else if l.is_finite() && ax[i] - l < -y[i] {
                -1
            } else if u.is_finite() && u - ax[i] < y[i] {
                1
            } else {
                0
            }
        })
        .collect()
}

fn polish(problem: &QpProblem, sol: &QpSolution, tol: f64) -> Option<QpSolution> {
    let active = active_set(problem, &sol.x, &sol.y);
    polish_with(problem, sol, &active, tol)
}

/// Unit row direction and the scale used, or `None` for an all-zero row.
fn unit_row(problem: &QpProblem, row: usize) -> Option<(DVector<f64>, f64)> {
    let r = problem.a.row(row).transpose();
    let norm = r.norm();
    (norm > 0.0).then(|| (r / norm, norm))
}

/// Value the active side of `row` pins `A x` to.
fn active_rhs(problem: &QpProblem, row: usize, side: i8) -> f64 {
    match side {
        -1 | 2 => problem.lower[row],
        _ => problem.upper[row],
    }
}

/// Groups active rows that describe the same hyperplane (`a_i x = b_i` equal
/// up to positive scale), which happens e.g. with a zero friction
/// coefficient. Each group is solved as one row; its multiplier is handed to
/// a member whose side admits the sign. Inactive rows lying on the same
/// hyperplane are folded in so both signs are available.
fn hyperplane_groups(problem: &QpProblem, active: &[i8]) -> Vec<Vec<(usize, i8)>> {
    const PARALLEL_TOL: f64 = 1e-12;
    let m = active.len();
    let units: Vec<Option<(DVector<f64>, f64)>> = (0..m).map(|i| unit_row(problem, i)).collect();
    let mut groups: Vec<Vec<(usize, i8)>> = Vec::new();
    let mut keys: Vec<(DVector<f64>, f64)> = Vec::new();
    for row in 0..m {
        if active[row] == 0 {
            continue;
        }
        let Some((dir, scale)) = &units[row] else {
            groups.push(vec![(row, active[row])]);
            keys.push((DVector::zeros(problem.num_vars()), f64::NAN));
            continue;
        };
        let b = active_rhs(problem, row, active[row]) / scale;
        let found = keys.iter().position(|(d, kb)| {
            (d - dir).amax() <= PARALLEL_TOL && (kb - b).abs() <= PARALLEL_TOL * (1.0 + b.abs())
        });
        match found {
            Some(g) => groups[g].push((row, active[row])),
            None => {
                groups.push(vec![(row, active[row])]);
                keys.push((dir.clone(), b));
            }
        }
    }
    for row in 0..m {
        if active[row] != 0 {
            continue;
        }
        let Some((dir, scale)) = &units[row] else { continue };
        for (g, (d, kb)) in keys.iter().enumerate() {
            if kb.is_nan() || (d - dir).amax() > PARALLEL_TOL {
                continue;
            }
            let tight = |v: f64| v.is_finite() && (v / scale - kb).abs() <= PARALLEL_TOL * (1.0 + kb.abs());
            if tight(problem.lower[row]) {
                groups[g].push((row, -1));
            } else if tight(problem.upper[row]) {
                groups[g].push((row, 1));
            }
        }
    }
    groups
}

/// Solves the KKT system restricted to `active` with a small regularization
/// plus iterative refinement, then accepts the point only if it satisfies
/// primal feasibility, stationarity and multiplier signs.
fn polish_with(problem: &QpProblem, sol: &QpSolution, active: &[i8], tol: f64) -> Option<QpSolution> {
    let n = problem.num_vars();
    let groups = hyperplane_groups(problem, active);
    let k = groups.len();
    let dim = n + k;
    const DELTA: f64 = 1e-10;

    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.p);
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -problem.q[i];
    }
    for (r, group) in groups.iter().enumerate() {
        let (row, side) = group[0];
        for j in 0..n {
            kkt[(n + r, j)] = problem.a[(row, j)];
            kkt[(j, n + r)] = problem.a[(row, j)];
        }
        rhs[n + r] = active_rhs(problem, row, side);
    }
    let mut reg = kkt.clone();
    for i in 0..n {
        reg[(i, i)] += DELTA;
    }
    for i in n..dim {
        reg[(i, i)] -= DELTA;
    }
    let lu = reg.lu();
    let mut sol_vec = lu.solve(&rhs)?;
    for _ in 0..8 {
        let err = &rhs - &kkt * &sol_vec;
        if inf_norm(&err) < 1e-14 * (1.0 + inf_norm(&rhs)) {
            break;
        }
        sol_vec += lu.solve(&err)?;
    }
    if !sol_vec.iter().all(|v| v.is_finite()) {
        return None;
    }

    let x = sol_vec.rows(0, n).into_owned();
    let mut y = DVector::zeros(problem.num_constraints());
    for (r, group) in groups.iter().enumerate() {
        let (lead, _) = group[0];
        let lead_norm = problem.a.row(lead).norm();
        // Multiplier per unit row normal, rescaled for the chosen member.
        let lambda = sol_vec[n + r] * if lead_norm > 0.0 { lead_norm } else { 1.0 };
        let admits = |side: i8| match side {
            2 => true,
            -1 => lambda <= tol,
            _ => lambda >= -tol,
        };
        let (row, side) = *group.iter().find(|(_, side)| admits(*side))?;
        let norm = problem.a.row(row).norm();
        let value = if norm > 0.0 { lambda / norm } else { sol_vec[n + r] };
        y[row] = match side {
            -1 => value.min(0.0),
            1 => value.max(0.0),
            _ => value,
        };
    }
    let (prim, dual) = residuals(problem, &x, &y);
    if prim > tol || dual > tol {
        return None;
    }
    Some(QpSolution {
        x,
        y,
        status: QpStatus::Solved,
        iterations: sol.iterations,
        primal_residual: prim,
        dual_residual: dual,
        polished: true,
    })
}
