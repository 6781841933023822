//! Inverse problems: recovering the driver's characteristic exponent from
//! a target stationary law, checking whether a target drift part is
//! attainable by a matrix subordinator, and fitting the drift matrix plus
//! driver moments from empirical stationary moments.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::driftop::DriftOperator;
use crate::error::{Error, Result};
use crate::oup::{MomentProvenance, MomentReport, MomentStdErrors};
use crate::symcore::{matrix_exponential, matrix_logarithm, scaled_tol, SymMat, PSD_TOL};

/// Condition ceiling on the (compressed) empirical covariance before it is
/// inverted.
pub const VAR_COND_LIMIT: f64 = 1e10;

/// How directional derivatives of the target cumulant are obtained.
pub enum GradientMode<'a> {
    /// Central differences along the orthonormal basis of symmetric
    /// matrices, step `1e-5 (1 + ‖Z‖_F)`.
    Numerical,
    /// A caller-supplied Riesz representative: `grad(Z)` is the complex
    /// symmetric matrix with `Dpsi(Z)X = tr(grad(Z) X)`.
    Riesz(&'a dyn Fn(&SymMat) -> Result<DMatrix<Complex64>>),
}

/// The cumulant transform `psi(Z) = log E exp(i tr(S Z))` of a target
/// stationary law, with a derivative strategy and optionally the target's
/// drift part.
pub struct CumulantTransform<'a> {
    psi: &'a dyn Fn(&SymMat) -> Result<Complex64>,
    grad: GradientMode<'a>,
    gamma_mu: Option<SymMat>,
}

impl<'a> CumulantTransform<'a> {
    pub fn numerical(psi: &'a dyn Fn(&SymMat) -> Result<Complex64>) -> Self {
        CumulantTransform {
            psi,
            grad: GradientMode::Numerical,
            gamma_mu: None,
        }
    }

    pub fn with_riesz(
        psi: &'a dyn Fn(&SymMat) -> Result<Complex64>,
        grad: &'a dyn Fn(&SymMat) -> Result<DMatrix<Complex64>>,
    ) -> Self {
        CumulantTransform {
            psi,
            grad: GradientMode::Riesz(grad),
            gamma_mu: None,
        }
    }

    pub fn with_gamma(mut self, gamma_mu: SymMat) -> Self {
        self.gamma_mu = Some(gamma_mu);
        self
    }

    pub fn gamma_mu(&self) -> Option<&SymMat> {
        self.gamma_mu.as_ref()
    }

    pub fn psi(&self, z: &SymMat) -> Result<Complex64> {
        let v = (self.psi)(z)?;
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::NonFinite("cumulant transform value"));
        }
        Ok(v)
    }

    /// The Riesz representative of `Dpsi(Z)`: the complex symmetric matrix
    /// `R` with `Dpsi(Z)X = tr(RX)`. Numerical mode assembles it from
    /// central differences along the orthonormal basis `E^(ii)` and
    /// `(E^(ij)+E^(ji))/sqrt(2)`.
    pub fn riesz_gradient(&self, z: &SymMat) -> Result<DMatrix<Complex64>> {
        let d = z.dim();
        match &self.grad {
            GradientMode::Riesz(f) => {
                let g = f(z)?;
                if g.nrows() != d || g.ncols() != d {
                    return Err(Error::DimensionMismatch(
                        "analytic gradient has the wrong shape".into(),
                    ));
                }
                Ok(g)
            }
            GradientMode::Numerical => {
                let h = 1e-5 * (1.0 + z.frobenius_norm());
                let mut grad = DMatrix::from_element(d, d, Complex64::new(0.0, 0.0));
                let probe = |b: &SymMat| -> Result<Complex64> {
                    let plus = self.psi(&(z + &b.scale(h)))?;
                    let minus = self.psi(&(z - &b.scale(h)))?;
                    Ok((plus - minus) / (2.0 * h))
                };
                for i in 0..d {
                    let b = SymMat::basis_diag(d, i);
                    let di = probe(&b)?;
                    grad[(i, i)] += di;
                }
                let w = std::f64::consts::FRAC_1_SQRT_2;
                for i in 0..d {
                    for j in (i + 1)..d {
                        let b = SymMat::basis_offdiag(d, i, j).scale(w);
                        let dij = probe(&b)?;
                        grad[(i, j)] += dij * w;
                        grad[(j, i)] += dij * w;
                    }
                }
                Ok(grad)
            }
        }
    }

    /// Directional derivative `Dpsi(Z)X = tr(riesz_gradient(Z) X)`.
    pub fn directional(&self, z: &SymMat, x: &SymMat) -> Result<Complex64> {
        let g = self.riesz_gradient(z)?;
        let d = z.dim();
        if x.dim() != d {
            return Err(Error::DimensionMismatch(
                "direction dimension does not match the argument".into(),
            ));
        }
        let mut tr = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                tr += g[(i, j)] * x.entry(j, i);
            }
        }
        Ok(tr)
    }
}

/// The derived driver characteristic exponent
/// `psi_L(Z) = -Dpsi(Z)(A^T Z + Z A)`, with `psi_L(0) = 0` by definition.
pub struct DriverCharFn<'a> {
    target: &'a CumulantTransform<'a>,
    drift: &'a DriftOperator,
}

/// Builds the driver exponent for a stable drift. When the target law is
/// stationary for the process with this drift, `exp(psi_L)` is the
/// characteristic function of the driver at time one.
pub fn derive_driver_charfn<'a>(
    target: &'a CumulantTransform<'a>,
    drift: &'a DriftOperator,
) -> Result<DriverCharFn<'a>> {
    drift.require_stable()?;
    Ok(DriverCharFn { target, drift })
}

impl DriverCharFn<'_> {
    pub fn eval(&self, z: &SymMat) -> Result<Complex64> {
        let d = self.drift.dim();
        if z.dim() != d {
            return Err(Error::DimensionMismatch(
                "argument dimension does not match the drift".into(),
            ));
        }
        if z.max_abs() == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        // A^T Z + Z A is symmetric: the second term transposes the first
        let m = self.drift.a().transpose() * z.as_matrix();
        let direction = SymMat::symmetrize(&m + m.transpose());
        let v = -self.target.directional(z, &direction)?;
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::NonFinite("derived driver exponent"));
        }
        Ok(v)
    }

    /// Probes `|psi_L|` along the ray `Z/2^k`, `k = 0..=6`; true when the
    /// values head to zero (the continuity the construction promises at 0).
    pub fn ray_continuity(&self, z: &SymMat) -> Result<bool> {
        let base = self.eval(z)?.norm();
        let tail = self.eval(&z.scale(1.0 / 64.0))?.norm();
        Ok(tail <= 0.1 * base + 1e-10)
    }
}

/// The attainability check for a target drift part: a matrix subordinator
/// driver requires `-A gamma_mu - gamma_mu A^T` to be PSD.
#[derive(Clone, Debug)]
pub struct DriftConditionReport {
    /// `-A gamma_mu - gamma_mu A^T`, the drift the driver would need.
    pub candidate: SymMat,
    /// Eigenvalues of the candidate, ascending.
    pub spectrum: Vec<f64>,
    /// PSD verdict at the scaled tolerance.
    pub is_psd: bool,
}

pub fn drift_condition_check(
    drift: &DriftOperator,
    gamma_mu: &SymMat,
) -> Result<DriftConditionReport> {
    if gamma_mu.dim() != drift.dim() {
        return Err(Error::DimensionMismatch(
            "target drift dimension does not match the drift operator".into(),
        ));
    }
    let candidate = drift.apply(gamma_mu).scale(-1.0);
    let spectrum = candidate.eigenvalues()?;
    let is_psd = spectrum[0] >= -scaled_tol(PSD_TOL, &candidate);
    Ok(DriftConditionReport {
        candidate,
        spectrum,
        is_psd,
    })
}

/// Fit diagnostics: all residuals are relative
/// (`‖x − x_input‖ / (1 + ‖x_input‖)`).
#[derive(Clone, Debug)]
pub struct MoMResiduals {
    /// Distance from the log-estimate to the compressed Kronecker-sum
    /// subspace.
    pub projection: f64,
    /// Reconstructed stationary mean vs the input mean.
    pub mean_reconstruction: f64,
    /// Reconstructed stationary covariance vs the sanitized input.
    pub var_reconstruction: f64,
    /// Per lag: reconstructed autocovariance vs the input.
    pub autocov_reconstruction: Vec<(f64, f64)>,
    /// Frobenius distance moved by sanitizing the empirical covariance
    /// (symmetrization, restriction to the symmetric subspace, and
    /// PSD clipping) before inversion.
    pub var_clip: f64,
}

/// Method-of-moments estimate of the drift matrix and the driver's first
/// two moments.
#[derive(Clone, Debug)]
pub struct MoMEstimate {
    pub a_hat: DriftOperator,
    pub mean_l: SymMat,
    pub var_vec_l: DMatrix<f64>,
    pub residuals: MoMResiduals,
    /// Whether the fitted drift is stable; an unstable fit is reported,
    /// not rejected.
    pub stable: bool,
    /// The lag whose autocovariance produced the accepted log-estimate.
    pub used_lag: f64,
    /// Lags tried before the accepted one, with the failure reason.
    pub skipped_lags: Vec<(f64, String)>,
    /// Attainability of the implied driver mean (its PSD verdict); the
    /// candidate matrix equals `mean_l`.
    pub condition: DriftConditionReport,
}

/// Fits `(A, E L_1, var vec L_1)` from an empirical moment report.
///
/// Because `vec` of a symmetric matrix duplicates off-diagonal entries,
/// `var_vec` is structurally singular on the full d²-space; the
/// log-estimator therefore works on the symmetric subspace: with `Q` an
/// orthonormal basis of that subspace,
/// `H = log(QᵀCQ · (QᵀVQ)⁻¹)/h` is the compressed generator, and the
/// least-squares projection of `QHQᵀ` onto the compressed Kronecker sums
/// solves `T = (d+2)A + tr(A) I` for the block-trace functional `T`.
/// Driver moments then follow from the negated drift maps:
/// `mean_L = -(A_hat mean + mean A_hatᵀ)`, `var_vec_L = -(G V + V Gᵀ)`.
pub fn mom_fit(empirical: &MomentReport) -> Result<MoMEstimate> {
    let d = empirical.mean.dim();
    let m = d * d;
    if empirical.var_vec.nrows() != m || empirical.var_vec.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "covariance of vec must be {m}x{m}"
        )));
    }
    let q = sym_basis_matrix(d);
    // sanitize the covariance: symmetrize, compress to the symmetric
    // subspace, clip into the cone, and lift back
    let sym = 0.5 * (&empirical.var_vec + empirical.var_vec.transpose());
    let v_s = q.transpose() * &sym * &q;
    let eig = v_s.symmetric_eigen();
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let lo = clipped.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = clipped.iter().cloned().fold(0.0, f64::max);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !cond.is_finite() || cond > VAR_COND_LIMIT {
        return Err(Error::SingularOperator { cond });
    }
    let v_s_clip = &eig.eigenvectors
        * DMatrix::from_diagonal(&DVector::from_vec(clipped.clone()))
        * eig.eigenvectors.transpose();
    let v_s_inv = &eig.eigenvectors
        * DMatrix::from_diagonal(&DVector::from_vec(
            clipped.iter().map(|l| 1.0 / l).collect(),
        ))
        * eig.eigenvectors.transpose();
    let var_used = &q * &v_s_clip * q.transpose();
    let var_clip = (&var_used - &empirical.var_vec).norm();

    let mut skipped_lags = Vec::new();
    let mut accepted: Option<(f64, DMatrix<f64>)> = None;
    for (h, acov) in &empirical.autocov {
        if !(*h > 0.0) {
            continue;
        }
        if acov.nrows() != m || acov.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "autocovariance at lag {h} must be {m}x{m}"
            )));
        }
        let c_s = q.transpose() * acov * &q;
        match matrix_logarithm(&(&c_s * &v_s_inv)) {
            Ok(logm) => {
                accepted = Some((*h, logm / *h));
                break;
            }
            Err(e) => skipped_lags.push((*h, e.to_string())),
        }
    }
    let (used_lag, h_s) = accepted.ok_or_else(|| {
        if skipped_lags.is_empty() {
            Error::InvalidParam("moment report carries no positive lag".into())
        } else {
            Error::LogBranchCut {
                eigenvalue: Complex64::new(f64::NAN, f64::NAN),
            }
        }
    })?;

    let compressed_generator = &q * &h_s * q.transpose();
    let a_mat = project_compressed_generator(&compressed_generator, d);
    let a_hat = DriftOperator::new(a_mat)?;
    let stable = a_hat.stability().is_stable();
    let g_proj = a_hat.generator_matrix();
    let g_compressed = &q * (q.transpose() * g_proj * &q) * q.transpose();
    let projection =
        (&compressed_generator - &g_compressed).norm() / (1.0 + compressed_generator.norm());

    let mean_l = a_hat.apply(&empirical.mean).scale(-1.0);
    let var_vec_l = -(g_proj * &var_used + &var_used * g_proj.transpose());

    // reconstruction residuals: push the estimate back through the
    // forward formulas and compare to the (sanitized) inputs
    let mean_reconstruction = match a_hat.solve_small(&mean_l.scale(-1.0)) {
        Ok(rec) => {
            (&rec - &empirical.mean).frobenius_norm() / (1.0 + empirical.mean.frobenius_norm())
        }
        Err(_) => f64::INFINITY,
    };
    let (var_reconstruction, autocov_reconstruction) = match a_hat.solve_big(&(-&var_vec_l)) {
        Ok(rec) => {
            let var_res = (&rec - &var_used).norm() / (1.0 + var_used.norm());
            let mut per_lag = Vec::new();
            for (h, acov) in &empirical.autocov {
                if !(*h >= 0.0) || !h.is_finite() {
                    continue;
                }
                let acov_used = &q * (q.transpose() * acov * &q) * q.transpose();
                let res = match matrix_exponential(g_proj, *h) {
                    Ok(decay) => (decay * &rec - &acov_used).norm() / (1.0 + acov_used.norm()),
                    Err(_) => f64::INFINITY,
                };
                per_lag.push((*h, res));
            }
            (var_res, per_lag)
        }
        Err(_) => (f64::INFINITY, Vec::new()),
    };

    let condition = drift_condition_check(&a_hat, &empirical.mean)?;
    Ok(MoMEstimate {
        a_hat,
        mean_l,
        var_vec_l,
        residuals: MoMResiduals {
            projection,
            mean_reconstruction,
            var_reconstruction,
            autocov_reconstruction,
            var_clip,
        },
        stable,
        used_lag,
        skipped_lags,
        condition,
    })
}

/// Orthonormal basis of the symmetric subspace of vec-space, as the
/// columns of a d² × d(d+1)/2 matrix: `vec(E^(ii))`, then
/// `vec(E^(ij)+E^(ji))/sqrt(2)` for i > j.
fn sym_basis_matrix(d: usize) -> DMatrix<f64> {
    let s = d * (d + 1) / 2;
    let mut q = DMatrix::zeros(d * d, s);
    let mut col = 0;
    for i in 0..d {
        q[(i * d + i, col)] = 1.0;
        col += 1;
    }
    let w = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..d {
        for i in (j + 1)..d {
            q[(j * d + i, col)] = w;
            q[(i * d + j, col)] = w;
            col += 1;
        }
    }
    q
}

/// Least-squares recovery of `A` from the symmetric-subspace compression
/// `P (A ⊗ I + I ⊗ A) P` (P the orthogonal projector onto the subspace).
/// With `T(M) = B1 + B2`, `B1_pq = tr(block_pq M)`, `B2 = sum_p block_pp M`,
/// the normal equations reduce to `T = (d+2) A + tr(A) I`, so
/// `tr A = tr(T)/(2d+2)` and `A = (T - tr(A) I)/(d+2)`.
fn project_compressed_generator(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(d, d);
    for p in 0..d {
        for q in 0..d {
            let block = m.view((p * d, q * d), (d, d));
            t[(p, q)] += block.trace();
            if p == q {
                for i in 0..d {
                    for j in 0..d {
                        t[(i, j)] += block[(i, j)];
                    }
                }
            }
        }
    }
    let tr_a = t.trace() / (2.0 * d as f64 + 2.0);
    let mut a = t / (d as f64 + 2.0);
    for i in 0..d {
        a[(i, i)] -= tr_a / (d as f64 + 2.0);
    }
    a
}

/// Empirical stationary moments of a uniformly spaced stationary sequence:
/// sample mean, covariance of vec, and autocovariances at the requested
/// multiples of the spacing, with naive per-entry standard errors.
pub fn empirical_moments(
    states: &[SymMat],
    step: f64,
    lag_steps: &[usize],
) -> Result<MomentReport> {
    let n = states.len();
    let max_lag = lag_steps.iter().copied().max().unwrap_or(0);
    if n < max_lag + 2 {
        return Err(Error::InvalidParam(format!(
            "{n} states cannot support a lag of {max_lag} steps"
        )));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParam(format!(
            "state spacing must be positive, got {step}"
        )));
    }
    let d = states[0].dim();
    let m = d * d;
    if states.iter().any(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch(
            "states must share one dimension".into(),
        ));
    }
    let vecs: Vec<DVector<f64>> = states.iter().map(|s| s.to_vec()).collect();
    let mut mean_vec = DVector::zeros(m);
    for v in &vecs {
        mean_vec += v;
    }
    mean_vec /= n as f64;
    let centered: Vec<DVector<f64>> = vecs.iter().map(|v| v - &mean_vec).collect();
    let (var_vec, var_se) = lagged_cross(&centered, 0);
    let mut autocov = Vec::with_capacity(lag_steps.len());
    let mut autocov_se = Vec::with_capacity(lag_steps.len());
    for &k in lag_steps {
        let (c, se) = lagged_cross(&centered, k);
        autocov.push((k as f64 * step, c));
        autocov_se.push((k as f64 * step, se));
    }
    let mean = SymMat::symmetrize(DMatrix::from_fn(d, d, |i, j| mean_vec[j * d + i]));
    let se_mean = DMatrix::from_fn(d, d, |i, j| {
        (var_vec[(j * d + i, j * d + i)] / n as f64).sqrt()
    });
    Ok(MomentReport {
        mean,
        var_vec,
        autocov,
        gamma: SymMat::zeros(d),
        provenance: MomentProvenance::MonteCarlo { n },
        std_errors: Some(MomentStdErrors {
            mean: se_mean,
            var_vec: var_se,
            autocov: autocov_se,
        }),
    })
}

// E[x_{t+lag} x_t^T] over the overlapping pairs: the (p,q) ordering matches
// the model convention autocov(h) = e^{Gh} V (later state on the left)
fn lagged_cross(centered: &[DVector<f64>], lag: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = centered.len() - lag;
    let m = centered[0].len();
    let mut c = DMatrix::zeros(m, m);
    let mut fourth = DMatrix::zeros(m, m);
    for i in 0..n {
        let x = &centered[i];
        let y = &centered[i + lag];
        for p in 0..m {
            for q in 0..m {
                let prod = y[p] * x[q];
                c[(p, q)] += prod;
                fourth[(p, q)] += prod * prod;
            }
        }
    }
    c /= n as f64;
    fourth /= n as f64;
    let se = DMatrix::from_fn(m, m, |p, q| {
        ((fourth[(p, q)] - c[(p, q)] * c[(p, q)]).max(0.0) / n as f64).sqrt()
    });
    (c, se)
}
