//! Independent references for `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`.
//!
//! Shares nothing with the solver under test beyond the problem struct.

use hiergait::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Worst violation of the KKT conditions at `(x, y)`, using the convention
/// `Px + q + Aᵀy = 0` with `y > 0` only on active upper bounds.
pub fn kkt_violation(prob: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let stationarity = (&prob.p * x + &prob.q + prob.a.transpose() * y).amax();
    let ax = &prob.a * x;
    let mut worst = stationarity;
    for i in 0..ax.len() {
        let (l, u, v) = (prob.lower[i], prob.upper[i], ax[i]);
        worst = worst.max(l - v).max(v - u);
        let (pos, neg) = (y[i].max(0.0), (-y[i]).max(0.0));
        // An infinite bound may never carry a multiplier.
        if u.is_infinite() {
            worst = worst.max(pos);
        } else {
            worst = worst.max(pos * (u - v).abs());
        }
        if l.is_infinite() {
            worst = worst.max(neg);
        } else {
            worst = worst.max(neg * (v - l).abs());
        }
    }
    worst
}

/// Accelerated projected gradient ascent on the dual. The dual of a strictly
/// convex QP is a smooth concave problem over a nonnegative orthant, so the
/// projection is a clamp; the primal iterate is recovered through `P⁻¹`.
pub fn projected_gradient(prob: &QpProblem, max_iter: usize) -> (DVector<f64>, DVector<f64>) {
    let m = prob.lower.len();
    let chol = prob.p.clone().cholesky().expect("oracle needs a positive definite P");
    let p_inv = chol.inverse();
    let primal = |y: &DVector<f64>| -(&p_inv * (&prob.q + prob.a.transpose() * y));
    if m == 0 {
        return (primal(&DVector::zeros(0)), DVector::zeros(0));
    }
    let h = &prob.a * &p_inv * prob.a.transpose();
    let lipschitz = 2.0 * h.symmetric_eigenvalues().amax().max(1e-12);
    let step = 1.0 / lipschitz;
    let has_upper: Vec<bool> = prob.upper.iter().map(|u| u.is_finite()).collect();
    let has_lower: Vec<bool> = prob.lower.iter().map(|l| l.is_finite()).collect();

    // y = y⁺ − y⁻ with y⁺, y⁻ ≥ 0.
    let (mut yp, mut yn) = (DVector::zeros(m), DVector::zeros(m));
    let (mut zp, mut zn) = (yp.clone(), yn.clone());
    let mut t = 1.0f64;
    for _ in 0..max_iter {
        let x = primal(&(&zp - &zn));
        let ax = &prob.a * &x;
        let mut np = DVector::zeros(m);
        let mut nn = DVector::zeros(m);
        for i in 0..m {
            if has_upper[i] {
                np[i] = (zp[i] + step * (ax[i] - prob.upper[i])).max(0.0);
            }
            if has_lower[i] {
                nn[i] = (zn[i] + step * (prob.lower[i] - ax[i])).max(0.0);
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        // Restart momentum whenever it points against the gradient step.
        let restart = (&np - &zp).dot(&(&np - &yp)) + (&nn - &zn).dot(&(&nn - &yn)) < 0.0;
        if restart {
            zp = yp.clone();
            zn = yn.clone();
            t = 1.0;
            continue;
        }
        zp = &np + (&np - &yp) * beta;
        zn = &nn + (&nn - &yn) * beta;
        zp.iter_mut().for_each(|v| *v = v.max(0.0));
        zn.iter_mut().for_each(|v| *v = v.max(0.0));
        let moved = (&np - &yp).amax().max((&nn - &yn).amax());
        yp = np;
        yn = nn;
        t = t_next;
        if moved < 1e-15 {
            break;
        }
    }
    let y = &yp - &yn;
    (primal(&y), y)
}

/// Strictly convex, feasible by construction around a random interior point.
pub fn random_qp(rng: &mut impl Rng) -> QpProblem {
    let n = rng.random_range(1..=12usize);
    let m = rng.random_range(0..=24usize);
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) / (n as f64).sqrt());
    let p = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
    let p = (&p + p.transpose()) * 0.5;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let ax0 = &a * &x0;
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    let mut equalities = 0;
    for i in 0..m {
        let kind = rng.random_range(0..10);
        let (lo, hi) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        match kind {
            0 if equalities < n / 2 => {
                equalities += 1;
                lower[i] = ax0[i];
                upper[i] = ax0[i];
            }
            1 | 2 => {
                lower[i] = f64::NEG_INFINITY;
                upper[i] = ax0[i] + hi;
            }
            3 | 4 => {
                lower[i] = ax0[i] - lo;
                upper[i] = f64::INFINITY;
            }
            _ => {
                lower[i] = ax0[i] - lo;
                upper[i] = ax0[i] + hi;
            }
        }
    }
    QpProblem::new(p, q, a, lower, upper).expect("generated problem is well formed")
}
