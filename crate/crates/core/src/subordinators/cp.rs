//! Completely positive factorization: search for an entrywise nonnegative
//! `B` with `B B^T = C`. Double nonnegativity (PSD plus nonnegative
//! entries) is a hard precondition; for d <= 4 it is also sufficient for a
//! factorization to exist, so a search failure there indicates a search
//! limit, never a counterexample certificate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng;
use crate::symcore::{psd_check, SymMat, PSD_TOL};

/// Default inner dimension of the factor search.
pub fn default_cp_rank(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Outcome of the factor search. `NotFound` is a status, not a proof that
/// `C` fails to be completely positive.
#[derive(Clone, Debug)]
pub enum CpFactorization {
    Found { b: DMatrix<f64>, residual: f64 },
    NotFound { best_residual: f64 },
}

/// Checks the doubly-nonnegative precondition: PSD and entrywise >= 0
/// (within rounding slack proportional to the matrix scale).
pub fn check_doubly_nonnegative(c: &SymMat) -> Result<()> {
    if !c.is_finite() {
        return Err(Error::NonFinite("factorization target"));
    }
    let scale = 1.0 + c.max_abs();
    for i in 0..c.dim() {
        for j in 0..=i {
            if c.entry(i, j) < -1e-12 * scale {
                return Err(Error::NotDoublyNonnegative(format!(
                    "entry ({i},{j}) = {} is negative",
                    c.entry(i, j)
                )));
            }
        }
    }
    psd_check(c, PSD_TOL * (1.0 + c.frobenius_norm())).map_err(|e| {
        Error::NotDoublyNonnegative(format!("not positive semidefinite: {e}"))
    })?;
    Ok(())
}

fn residual_norm(b: &DMatrix<f64>, c: &SymMat) -> f64 {
    (b * b.transpose() - c.as_matrix()).norm()
}

fn pad_columns(b: DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = b.nrows();
    let mut out = DMatrix::zeros(d, k);
    for j in 0..b.ncols().min(k) {
        for i in 0..d {
            out[(i, j)] = b[(i, j)];
        }
    }
    out
}

/// Attempts to write `C = B B^T` with `B` a nonnegative d×k matrix.
///
/// Accepts when `||B B^T - C||_F <= tol * (1 + ||C||_F)`. Strategy: exact
/// shortcuts (diagonal, nonnegative Cholesky factor), then multiplicative
/// updates warm-starting a projected Barzilai-Borwein gradient descent,
/// restarted up to 50 times from internally seeded random initials so the
/// search itself is deterministic.
pub fn cp_factorize(c: &SymMat, k: usize, tol: f64) -> Result<CpFactorization> {
    check_doubly_nonnegative(c)?;
    if k == 0 {
        return Err(Error::InvalidParam("factor rank k must be >= 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidParam("tolerance must be nonnegative".into()));
    }
    let d = c.dim();
    let accept = tol * (1.0 + c.frobenius_norm());

    // diagonal shortcut (covers C = 0): one column per positive diagonal
    // entry, exact whenever k admits that many
    let off_diag_mass: f64 = (0..d)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| c.entry(i, j).abs())
        .sum();
    let positive_diag: Vec<usize> = (0..d).filter(|&i| c.entry(i, i) > 0.0).collect();
    if off_diag_mass == 0.0 && k >= positive_diag.len() {
        let mut b = DMatrix::zeros(d, k);
        for (col, &i) in positive_diag.iter().enumerate() {
            b[(i, col)] = c.entry(i, i).sqrt();
        }
        let residual = residual_norm(&b, c);
        if residual <= accept {
            return Ok(CpFactorization::Found { b, residual });
        }
    }

    // Cholesky shortcut when the factor happens to be nonnegative
    if k >= d {
        if let Some(chol) = nalgebra::Cholesky::new(c.as_matrix().clone()) {
            let mut l = chol.l();
            let min_entry = l.iter().fold(0.0f64, |m, v| m.min(*v));
            if min_entry >= -1e-12 * (1.0 + c.max_abs()) {
                l.iter_mut().for_each(|v| *v = v.max(0.0));
                let b = pad_columns(l, k);
                let residual = residual_norm(&b, c);
                if residual <= accept {
                    return Ok(CpFactorization::Found { b, residual });
                }
            }
        }
    }

    let trace_c = c.trace().max(1e-300);
    let mut best_residual = f64::INFINITY;
    for restart in 0..50u64 {
        let mut stream = rng::stream(0xC0FAC70, restart);
        let b = factorize_once(c, k, accept, trace_c, &mut stream);
        let residual = residual_norm(&b, c);
        if residual < best_residual {
            best_residual = residual;
        }
        if residual <= accept {
            return Ok(CpFactorization::Found { b, residual });
        }
    }
    Ok(CpFactorization::NotFound { best_residual })
}

fn factorize_once(
    c: &SymMat,
    k: usize,
    accept: f64,
    trace_c: f64,
    stream: &mut rng::ProjectRng,
) -> DMatrix<f64> {
    use rand::Rng;
    let d = c.dim();
    let cm = c.as_matrix();

    let mut b = DMatrix::from_fn(d, k, |_, _| stream.random_range(0.01..1.0f64));
    let norm = (b.transpose() * &b).trace().max(1e-300);
    b *= (trace_c / norm).sqrt();

    // multiplicative updates pull toward a good basin
    for _ in 0..300 {
        let cb = cm * &b;
        let bbt_b = &b * (b.transpose() * &b);
        for i in 0..d {
            for j in 0..k {
                let denom = bbt_b[(i, j)].max(1e-300);
                let factor = 0.5 + 0.5 * cb[(i, j)] / denom;
                b[(i, j)] *= factor.max(0.0);
            }
        }
        if residual_norm(&b, c) <= accept {
            return b;
        }
    }

    // projected Barzilai-Borwein descent polishes to the target residual
    let grad = |b: &DMatrix<f64>| -> DMatrix<f64> { 2.0 * (b * b.transpose() - cm) * b };
    let objective = |b: &DMatrix<f64>| -> f64 {
        let r = b * b.transpose() - cm;
        0.5 * r.norm_squared()
    };
    let mut g = grad(&b);
    let mut eta = 1.0 / (4.0 * c.frobenius_norm() + 1.0);
    let mut recent: Vec<f64> = vec![objective(&b)];
    for _ in 0..1500 {
        let mut step = eta;
        let mut candidate;
        let worst = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut tries = 0;
        loop {
            candidate = &b - step * &g;
            candidate.iter_mut().for_each(|v| *v = v.max(0.0));
            let f_new = objective(&candidate);
            if f_new <= 2.0 * worst + 1e-300 || tries >= 30 {
                break;
            }
            step *= 0.5;
            tries += 1;
        }
        let g_new = grad(&candidate);
        let s = &candidate - &b;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 0.0 && sy.is_finite() {
            eta = (s.norm_squared() / sy).clamp(1e-14, 1e10);
        }
        b = candidate;
        g = g_new;
        let f_cur = objective(&b);
        recent.push(f_cur);
        if recent.len() > 8 {
            recent.remove(0);
        }
        let residual = (2.0 * f_cur).sqrt();
        if residual <= accept * 0.5 || s.norm() < 1e-16 * (1.0 + b.norm()) {
            break;
        }
    }
    polish_levenberg_marquardt(b, c, accept)
}

/// Active-set Levenberg-Marquardt refinement of `B B^T = C`. The descent
/// phases stall around 1e-4 residuals when the solution pins entries to the
/// boundary of the orthant; freezing those entries (zero value, gradient
/// pushing negative) restores an unconstrained least-squares problem in the
/// free entries (at most dk <= 40 at the supported sizes), where damped
/// Gauss-Newton contracts to roundoff in a handful of steps.
fn polish_levenberg_marquardt(mut b: DMatrix<f64>, c: &SymMat, accept: f64) -> DMatrix<f64> {
    let d = b.nrows();
    let k = b.ncols();
    let cm = c.as_matrix();
    let objective = |b: &DMatrix<f64>| -> f64 {
        let r = b * b.transpose() - cm;
        0.5 * r.norm_squared()
    };
    let floor = 1e-13 * (1.0 + c.max_abs().sqrt());
    let mut f_cur = objective(&b);
    let mut mu = 1e-6 * (1.0 + c.frobenius_norm());
    for _ in 0..80 {
        if (2.0 * f_cur).sqrt() <= accept * 0.25 {
            break;
        }
        let res = &b * b.transpose() - cm;
        // gradient of the objective is 2 (BB^T - C) B
        let grad = 2.0 * &res * &b;
        let free: Vec<(usize, usize)> = (0..d)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|&(i, j)| b[(i, j)] > floor || grad[(i, j)] < 0.0)
            .collect();
        if free.is_empty() {
            break;
        }
        // J[(p,q), f] = d(BB^T)_{pq} / dB_f over the free entries only
        let mut jac = DMatrix::zeros(d * d, free.len());
        for (col, &(i, j)) in free.iter().enumerate() {
            for q in 0..d {
                jac[(i * d + q, col)] += b[(q, j)];
                jac[(q * d + i, col)] += b[(q, j)];
            }
        }
        let rvec = DVector::from_fn(d * d, |idx, _| res[(idx / d, idx % d)]);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rvec;
        let mut improved = false;
        for _ in 0..16 {
            let lhs = &jtj + DMatrix::identity(free.len(), free.len()) * mu;
            let Some(delta) = lhs.cholesky().map(|ch| ch.solve(&jtr)) else {
                mu *= 4.0;
                continue;
            };
            let mut candidate = b.clone();
            for (col, &(i, j)) in free.iter().enumerate() {
                candidate[(i, j)] = (candidate[(i, j)] - delta[col]).max(0.0);
            }
            let f_new = objective(&candidate);
            if f_new < f_cur {
                b = candidate;
                f_cur = f_new;
                mu = (mu / 3.0).max(1e-14);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    // snap pinned entries that drifted into the floor band to exact zero
    b.iter_mut().for_each(|v| {
        if *v <= floor {
            *v = 0.0;
        }
    });
    b
}
