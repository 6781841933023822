//! Matrix subordinators: Lévy processes in symmetric matrices whose
//! increments are positive semidefinite. Four families are provided:
//! deterministic drift, diagonal compound Poisson built from a completely
//! positive factorization, compound Poisson with Gaussian-mixture rank-one
//! jumps, and the discrete quadratic variation of a type-Gbar process.

mod bessel;
mod cp;
mod mixing;

pub use bessel::{bessel_k, bessel_k_scaled, ln_bessel_k, ln_bessel_k_scaled};
pub use cp::{check_doubly_nonnegative, cp_factorize, default_cp_rank, CpFactorization};
pub use mixing::{gig_mixing_moments, sample_ig_increment, MixingLaw, MixingMoments};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::integrate_adaptive_c64;
use crate::rng::ProjectRng;
use crate::symcore::{psd_check, scaled_tol, CommutationMatrix, PsdMat, SymMat, PSD_TOL};

/// Substeps per sampled increment in the type-Gbar discrete-QV scheme.
pub const TYPE_GBAR_SUBSTEPS: usize = 16;

/// One recorded jump: the offset of the jump time inside the sampled
/// window, and the (PSD) jump matrix.
#[derive(Clone, Debug)]
pub struct JumpRecord {
    pub time: f64,
    pub jump: SymMat,
}

/// A sampled increment over a window of length `dt`, with its jump log.
#[derive(Clone, Debug)]
pub struct SampledIncrement {
    pub increment: SymMat,
    pub jumps: Vec<JumpRecord>,
}

/// First and second moments of the driver at unit time, plus its drift part.
#[derive(Clone, Debug)]
pub struct DriverMoments {
    pub mean: SymMat,
    pub var_vec: DMatrix<f64>,
    pub gamma: SymMat,
}

/// Deterministic drift `L_t = gamma t`. A true subordinator requires PSD
/// `gamma`; general symmetric drifts are accepted but flagged, which is the
/// construction behind OU processes driven from outside the subordinator
/// class.
#[derive(Clone, Debug)]
pub struct DriftOnly {
    gamma: SymMat,
    non_subordinator: bool,
}

impl DriftOnly {
    pub fn new(gamma: SymMat) -> Self {
        let non_subordinator = psd_check(&gamma, scaled_tol(PSD_TOL, &gamma)).is_err();
        DriftOnly {
            gamma,
            non_subordinator,
        }
    }

    pub fn gamma(&self) -> &SymMat {
        &self.gamma
    }

    pub fn non_subordinator(&self) -> bool {
        self.non_subordinator
    }
}

/// Diagonal compound Poisson driver `L_t = diag(B L'_t + gamma t)` where
/// the coordinates of `L'` are independent compound Poisson processes with
/// exponential jumps of rate `lambda` and Poisson rate `lambda²/2`, so each
/// coordinate has unit-time mean `lambda/2` and unit variance.
#[derive(Clone, Debug)]
pub struct DiagonalCp {
    b: DMatrix<f64>,
    lambda: f64,
    rate: f64,
    gamma: DVector<f64>,
}

impl DiagonalCp {
    pub fn new(b: DMatrix<f64>, lambda: f64, gamma: DVector<f64>) -> Result<Self> {
        if b.nrows() != gamma.len() || b.ncols() == 0 || b.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "factor is {}x{} but drift has length {}",
                b.nrows(),
                b.ncols(),
                gamma.len()
            )));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParam(format!(
                "jump rate parameter must be positive, got {lambda}"
            )));
        }
        if b.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParam(
                "factor B must be entrywise nonnegative and finite".into(),
            ));
        }
        if gamma.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParam(
                "diagonal drift must be entrywise nonnegative and finite".into(),
            ));
        }
        let rate = 0.5 * lambda * lambda;
        Ok(DiagonalCp {
            b,
            lambda,
            rate,
            gamma,
        })
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn gamma_vector(&self) -> &DVector<f64> {
        &self.gamma
    }

    /// Unit-time mean of the diagonal vector: `gamma + (lambda/2) B e`.
    pub fn mean_vector(&self) -> DVector<f64> {
        let ones = DVector::from_element(self.b.ncols(), 1.0);
        &self.gamma + (&self.b * ones) * (self.lambda / 2.0)
    }

    /// Unit-time covariance of the diagonal vector: `B B^T`.
    pub fn covariance(&self) -> SymMat {
        SymMat::symmetrize(&self.b * self.b.transpose())
    }
}

/// Compound Poisson with rank-one Gaussian-mixture jumps `x x^T`,
/// `x = sqrt(eps) C^{1/2} z` with `z` standard normal.
#[derive(Clone, Debug)]
pub struct GaussMixtureCp {
    rate: f64,
    c: PsdMat,
    c_sqrt: DMatrix<f64>,
    mixing: MixingLaw,
}

impl GaussMixtureCp {
    pub fn new(rate: f64, c: PsdMat, mixing: MixingLaw) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParam(format!(
                "jump rate must be positive, got {rate}"
            )));
        }
        mixing.validate()?;
        let c_sqrt = c.sqrt().into_matrix();
        Ok(GaussMixtureCp {
            rate,
            c,
            c_sqrt,
            mixing,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn c(&self) -> &PsdMat {
        &self.c
    }

    pub fn mixing(&self) -> &MixingLaw {
        &self.mixing
    }
}

/// Discrete quadratic variation of a type-Gbar Lévy process with GIG
/// mixing: unit-time increments distribute like the sum of jump outer
/// products of `B_tau` for an independent subordinator `tau`. Exact
/// sampling and the characteristic exponent are provided for the inverse
/// Gaussian member (nu = -1/2); moments hold for all GIG orders.
#[derive(Clone, Debug)]
pub struct TypeGbar {
    c: PsdMat,
    c_sqrt: DMatrix<f64>,
    mixing: MixingLaw,
}

impl TypeGbar {
    pub fn new(c: PsdMat, mixing: MixingLaw) -> Result<Self> {
        match mixing {
            MixingLaw::Gig { .. } => {}
            MixingLaw::Constant { .. } => {
                return Err(Error::InvalidParam(
                    "type-Gbar drivers need an infinitely divisible mixing law on (0, inf); \
                     a point mass yields a continuous process with zero discrete quadratic variation"
                        .into(),
                ));
            }
        }
        mixing.validate()?;
        let c_sqrt = c.sqrt().into_matrix();
        Ok(TypeGbar { c, c_sqrt, mixing })
    }

    pub fn c(&self) -> &PsdMat {
        &self.c
    }

    pub fn mixing(&self) -> &MixingLaw {
        &self.mixing
    }

    fn gig_params(&self) -> (f64, f64, f64) {
        match self.mixing {
            MixingLaw::Gig { nu, delta, alpha } => (nu, delta, alpha),
            MixingLaw::Constant { .. } => unreachable!("rejected at construction"),
        }
    }
}

/// Tagged union of the supported driver families.
#[derive(Clone, Debug)]
pub enum SubordinatorModel {
    DriftOnly(DriftOnly),
    DiagonalCp(DiagonalCp),
    GaussMixtureCp(GaussMixtureCp),
    TypeGbar(TypeGbar),
}

impl SubordinatorModel {
    pub fn drift_only(gamma: SymMat) -> Self {
        SubordinatorModel::DriftOnly(DriftOnly::new(gamma))
    }

    pub fn dim(&self) -> usize {
        match self {
            SubordinatorModel::DriftOnly(m) => m.gamma.dim(),
            SubordinatorModel::DiagonalCp(m) => m.b.nrows(),
            SubordinatorModel::GaussMixtureCp(m) => m.c.dim(),
            SubordinatorModel::TypeGbar(m) => m.c.dim(),
        }
    }

    /// False only for a drift-only model whose drift leaves the PSD cone.
    pub fn is_subordinator(&self) -> bool {
        match self {
            SubordinatorModel::DriftOnly(m) => !m.non_subordinator,
            _ => true,
        }
    }

    /// The drift part of the Lévy triplet (jump families are pure jump).
    pub fn gamma_drift(&self) -> SymMat {
        match self {
            SubordinatorModel::DriftOnly(m) => m.gamma.clone(),
            SubordinatorModel::DiagonalCp(m) => {
                SymMat::from_fn(m.b.nrows(), |i, j| if i == j { m.gamma[i] } else { 0.0 })
            }
            SubordinatorModel::GaussMixtureCp(m) => SymMat::zeros(m.c.dim()),
            SubordinatorModel::TypeGbar(m) => SymMat::zeros(m.c.dim()),
        }
    }

    /// True when `sample_increment` draws from the exact increment law
    /// (everything except the type-Gbar subgrid scheme).
    pub fn exact_increments(&self) -> bool {
        !matches!(self, SubordinatorModel::TypeGbar(_))
    }

    /// Unit-time mean, covariance of the vectorized increment, and drift.
    pub fn moments(&self) -> Result<DriverMoments> {
        match self {
            SubordinatorModel::DriftOnly(m) => {
                let d = m.gamma.dim();
                Ok(DriverMoments {
                    mean: m.gamma.clone(),
                    var_vec: DMatrix::zeros(d * d, d * d),
                    gamma: m.gamma.clone(),
                })
            }
            SubordinatorModel::DiagonalCp(m) => {
                let d = m.b.nrows();
                let mu = m.mean_vector();
                let cov = m.covariance();
                let mean = SymMat::from_fn(d, |i, j| if i == j { mu[i] } else { 0.0 });
                let mut var_vec = DMatrix::zeros(d * d, d * d);
                for i in 0..d {
                    for j in 0..d {
                        var_vec[(i * d + i, j * d + j)] = cov.entry(i, j);
                    }
                }
                Ok(DriverMoments {
                    mean,
                    var_vec,
                    gamma: self.gamma_drift(),
                })
            }
            SubordinatorModel::GaussMixtureCp(m) => {
                let mix = m.mixing.moments()?;
                let qv = mixture_qv_moments(
                    QvDriverKind::CompoundPoisson { rate: m.rate },
                    &mix,
                    &m.c,
                )?;
                Ok(DriverMoments {
                    mean: qv.mean,
                    var_vec: qv.var_vec,
                    gamma: SymMat::zeros(m.c.dim()),
                })
            }
            SubordinatorModel::TypeGbar(m) => {
                let mix = m.mixing.moments()?;
                let qv = mixture_qv_moments(QvDriverKind::TypeGbar, &mix, &m.c)?;
                Ok(DriverMoments {
                    mean: qv.mean,
                    var_vec: qv.var_vec,
                    gamma: SymMat::zeros(m.c.dim()),
                })
            }
        }
    }

    /// Characteristic exponent `psi_L(Z) = log E exp(i tr(L_1 Z))`.
    ///
    /// Exact closed or quadrature forms per family; type-Gbar requires the
    /// inverse Gaussian mixing order.
    pub fn char_exponent(&self, z: &SymMat) -> Result<Complex64> {
        if z.dim() != self.dim() {
            return Err(Error::DimensionMismatch(
                "argument dimension does not match driver".into(),
            ));
        }
        match self {
            SubordinatorModel::DriftOnly(m) => {
                let tr = (m.gamma.as_matrix() * z.as_matrix()).trace();
                Ok(Complex64::new(0.0, tr))
            }
            SubordinatorModel::DiagonalCp(m) => {
                let d = m.b.nrows();
                let mut psi = Complex64::new(0.0, 0.0);
                for i in 0..d {
                    psi += Complex64::new(0.0, m.gamma[i] * z.entry(i, i));
                }
                for j in 0..m.b.ncols() {
                    let w: f64 = (0..d).map(|i| m.b[(i, j)] * z.entry(i, i)).sum();
                    // E e^{i w xi} = lambda / (lambda - i w) for xi ~ Exp(lambda)
                    let cf = Complex64::new(m.lambda, 0.0) / Complex64::new(m.lambda, -w);
                    psi += m.rate * (cf - 1.0);
                }
                Ok(psi)
            }
            SubordinatorModel::GaussMixtureCp(m) => {
                let w = congruence_eigenvalues(&m.c_sqrt, z)?;
                let jump_cf = |eps: f64| gaussian_quadratic_cf(&w, eps);
                let expect = m.mixing.expectation(&jump_cf, 1e-10)?;
                Ok(m.rate * (expect - 1.0))
            }
            SubordinatorModel::TypeGbar(m) => {
                let (nu, delta, alpha) = m.gig_params();
                if (nu + 0.5).abs() > 1e-13 {
                    return Err(Error::Unsupported(format!(
                        "type-Gbar characteristic exponent is implemented for the inverse \
                         Gaussian mixing order nu = -1/2 only, got nu={nu}"
                    )));
                }
                type_gbar_exponent(&m.c_sqrt, z, delta, alpha)
            }
        }
    }

    /// Monte Carlo estimate of the characteristic exponent with a standard
    /// error, for any model with a sampler. The estimate is
    /// `log(mean of e^{i tr(L_1 Z)})`; the reported error is the standard
    /// error of the inner mean divided by its modulus (the delta method).
    pub fn char_exponent_mc(
        &self,
        z: &SymMat,
        n: usize,
        rng: &mut ProjectRng,
    ) -> Result<(Complex64, f64)> {
        if n == 0 {
            return Err(Error::InvalidParam("sample count must be positive".into()));
        }
        let mut sum = Complex64::new(0.0, 0.0);
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let inc = self.sample_increment(1.0, rng)?;
            let tr = (inc.increment.as_matrix() * z.as_matrix()).trace();
            let v = Complex64::new(0.0, tr).exp();
            sum += v;
            sum_sq += v.norm_sqr();
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean.norm_sqr()).max(0.0);
        let se = (var / n as f64).sqrt();
        if mean.norm() <= 2.0 * se {
            return Err(Error::InvalidParam(
                "characteristic function estimate indistinguishable from zero; increase n".into(),
            ));
        }
        Ok((mean.ln(), se / mean.norm()))
    }

    /// Draws `L_{t+dt} - L_t` together with the jump log (times are offsets
    /// in `[0, dt)`). For type-Gbar the increment is the discrete quadratic
    /// variation on a [`TYPE_GBAR_SUBSTEPS`]-point subgrid and the recorded
    /// jumps are the per-substep aggregates at substep midpoints.
    pub fn sample_increment(&self, dt: f64, rng: &mut ProjectRng) -> Result<SampledIncrement> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParam(format!(
                "increment window must be positive, got {dt}"
            )));
        }
        match self {
            SubordinatorModel::DriftOnly(m) => Ok(SampledIncrement {
                increment: m.gamma.scale(dt),
                jumps: Vec::new(),
            }),
            SubordinatorModel::DiagonalCp(m) => {
                let d = m.b.nrows();
                let mut jumps: Vec<JumpRecord> = Vec::new();
                for j in 0..m.b.ncols() {
                    let n = sample_poisson(m.rate * dt, rng)?;
                    for _ in 0..n {
                        let time = rng.random_range(0.0..dt);
                        let xi: f64 = sample_exponential(m.lambda, rng)?;
                        let jump =
                            SymMat::from_fn(d, |p, q| if p == q { m.b[(p, j)] * xi } else { 0.0 });
                        jumps.push(JumpRecord { time, jump });
                    }
                }
                sort_jumps(&mut jumps);
                let drift = SymMat::from_fn(d, |p, q| if p == q { m.gamma[p] * dt } else { 0.0 });
                Ok(assemble_increment(drift, jumps))
            }
            SubordinatorModel::GaussMixtureCp(m) => {
                let d = m.c.dim();
                let n = sample_poisson(m.rate * dt, rng)?;
                let mut jumps = Vec::with_capacity(n);
                for _ in 0..n {
                    let time = rng.random_range(0.0..dt);
                    let eps = m.mixing.sample(rng)?;
                    let x = gaussian_factor_draw(&m.c_sqrt, eps, rng);
                    jumps.push(JumpRecord {
                        time,
                        jump: SymMat::outer(&x),
                    });
                }
                sort_jumps(&mut jumps);
                Ok(assemble_increment(SymMat::zeros(d), jumps))
            }
            SubordinatorModel::TypeGbar(m) => {
                let (nu, delta, alpha) = m.gig_params();
                if (nu + 0.5).abs() > 1e-13 {
                    return Err(Error::Unsupported(format!(
                        "type-Gbar sampling is implemented for the inverse Gaussian mixing \
                         order nu = -1/2 only, got nu={nu}"
                    )));
                }
                let d = m.c.dim();
                let sub_dt = dt / TYPE_GBAR_SUBSTEPS as f64;
                let mut jumps = Vec::with_capacity(TYPE_GBAR_SUBSTEPS);
                for i in 0..TYPE_GBAR_SUBSTEPS {
                    let tau = sample_ig_increment(delta, alpha, sub_dt, rng)?;
                    let x = gaussian_factor_draw(&m.c_sqrt, tau, rng);
                    jumps.push(JumpRecord {
                        time: (i as f64 + 0.5) * sub_dt,
                        jump: SymMat::outer(&x),
                    });
                }
                Ok(assemble_increment(SymMat::zeros(d), jumps))
            }
        }
    }
}

fn sort_jumps(jumps: &mut [JumpRecord]) {
    jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
}

fn assemble_increment(drift: SymMat, jumps: Vec<JumpRecord>) -> SampledIncrement {
    let mut total = drift;
    for rec in &jumps {
        total = &total + &rec.jump;
    }
    SampledIncrement {
        increment: total,
        jumps,
    }
}

fn sample_poisson(mean: f64, rng: &mut ProjectRng) -> Result<usize> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean)
        .map_err(|e| Error::InvalidParam(format!("Poisson setup for mean {mean}: {e}")))?;
    let n: f64 = dist.sample(rng);
    Ok(n as usize)
}

fn sample_exponential(lambda: f64, rng: &mut ProjectRng) -> Result<f64> {
    let dist = rand_distr::Exp::new(lambda)
        .map_err(|e| Error::InvalidParam(format!("exponential setup for rate {lambda}: {e}")))?;
    Ok(dist.sample(rng))
}

/// `sqrt(eps) * C^{1/2} z` with `z` standard normal.
fn gaussian_factor_draw(c_sqrt: &DMatrix<f64>, eps: f64, rng: &mut ProjectRng) -> DVector<f64> {
    let d = c_sqrt.nrows();
    let z = DVector::from_fn(d, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    c_sqrt * z * eps.max(0.0).sqrt()
}

/// Eigenvalues of `C^{1/2} Z C^{1/2}`.
fn congruence_eigenvalues(c_sqrt: &DMatrix<f64>, z: &SymMat) -> Result<Vec<f64>> {
    let w = SymMat::symmetrize(c_sqrt * z.as_matrix() * c_sqrt);
    w.eigenvalues()
}

/// `E exp(i eps z^T W z)` for standard normal `z` and symmetric `W` with
/// eigenvalues `w`: the product `prod_k (1 - 2 i eps w_k)^{-1/2}` with
/// principal square roots (well defined: every factor has real part 1).
fn gaussian_quadratic_cf(w: &[f64], eps: f64) -> Complex64 {
    let mut prod = Complex64::new(1.0, 0.0);
    for &wk in w {
        prod /= Complex64::new(1.0, -2.0 * eps * wk).sqrt();
    }
    prod
}

/// Characteristic exponent of the discrete quadratic variation of an NIG
/// process: the jump-size integral of the Gaussian quadratic-form
/// characteristic function against the inverse Gaussian Lévy density
/// `delta/sqrt(2 pi) s^{-3/2} e^{-alpha^2 s / 2} ds`, evaluated after the
/// substitution `s = u^2`.
fn type_gbar_exponent(
    c_sqrt: &DMatrix<f64>,
    z: &SymMat,
    delta: f64,
    alpha: f64,
) -> Result<Complex64> {
    let w = congruence_eigenvalues(c_sqrt, z)?;
    let sum_w: f64 = w.iter().sum();
    let scale = delta * (2.0 / std::f64::consts::PI).sqrt();
    let integrand = move |u: f64| -> Complex64 {
        let damp = (-0.5 * alpha * alpha * u * u).exp();
        if u.abs() < 1e-8 {
            // limit of (g(u^2) - 1)/u^2 as u -> 0
            return Complex64::new(0.0, sum_w) * damp;
        }
        let s = u * u;
        (gaussian_quadratic_cf(&w, s) - 1.0) / s * damp
    };
    let upper = (90.0f64).sqrt() / alpha;
    let tol = 1e-10 * (1.0 + sum_w.abs());
    let integral = integrate_adaptive_c64(&integrand, 0.0, upper, tol)?;
    Ok(integral * scale)
}

/// Sum of outer products of a jump sequence: the discrete quadratic
/// variation of a vector-valued path.
pub fn discrete_qv(jumps: &[DVector<f64>]) -> SymMat {
    let d = jumps.first().map_or(0, |x| x.len());
    let mut acc = SymMat::zeros(d.max(1));
    for x in jumps {
        acc = &acc + &SymMat::outer(x);
    }
    acc
}

/// The fourth-moment kernel `C ⊗ C + K_d (C ⊗ C) + vec(C) vec(C)^T`
/// common to every mixture quadratic-variation covariance formula.
pub fn qv_moment_kernel(c: &SymMat) -> DMatrix<f64> {
    let d = c.dim();
    let cc = c.as_matrix().kronecker(c.as_matrix());
    let k = CommutationMatrix::new(d);
    let v = c.to_vec();
    let m = &cc + k.matrix() * &cc + &v * v.transpose();
    // exactly symmetric in theory; enforce it against rounding
    let mut s = m.clone();
    for i in 0..d * d {
        for j in 0..d * d {
            s[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    s
}

/// Which quadratic-variation driver a moment request refers to.
#[derive(Clone, Copy, Debug)]
pub enum QvDriverKind {
    CompoundPoisson { rate: f64 },
    TypeGbar,
}

/// Unit-time mean and vec-covariance of a mixture QV driver.
#[derive(Clone, Debug)]
pub struct QvMoments {
    pub mean: SymMat,
    pub var_vec: DMatrix<f64>,
}

/// Closed-form unit-time moments:
/// compound Poisson: mean `r E(eps) C`, covariance `r E(eps²) kernel(C)`;
/// type-Gbar: mean `E(eps) C`, covariance `var(eps) kernel(C)`.
pub fn mixture_qv_moments(
    kind: QvDriverKind,
    mix: &MixingMoments,
    c: &PsdMat,
) -> Result<QvMoments> {
    let kernel = qv_moment_kernel(c.base());
    match kind {
        QvDriverKind::CompoundPoisson { rate } => {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "compound Poisson rate must be positive, got {rate}"
                )));
            }
            Ok(QvMoments {
                mean: c.base().scale(rate * mix.mean_eps),
                var_vec: kernel * (rate * mix.second_moment_eps),
            })
        }
        QvDriverKind::TypeGbar => Ok(QvMoments {
            mean: c.base().scale(mix.mean_eps),
            var_vec: kernel * mix.var_eps,
        }),
    }
}

/// Diagonal compound Poisson model with prescribed unit-time mean vector
/// `mu > 0` and diagonal covariance `B B^T`, from a nonnegative factor `B`:
/// `lambda = min_i mu_i / (B e)_i`, drift `mu - (lambda/2) B e`, jump rate
/// `lambda²/2`. A zero factor degenerates to the deterministic drift model
/// with mean `diag(mu)`.
pub fn build_multivariate_subordinator(
    mu: &DVector<f64>,
    b: &DMatrix<f64>,
) -> Result<SubordinatorModel> {
    let d = mu.len();
    if b.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "factor has {} rows but target mean has length {d}",
            b.nrows()
        )));
    }
    if mu.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParam(
            "target mean must be strictly positive".into(),
        ));
    }
    if b.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParam(
            "factor B must be entrywise nonnegative and finite".into(),
        ));
    }
    let ones = DVector::from_element(b.ncols().max(1), 1.0);
    let be = if b.ncols() == 0 {
        DVector::zeros(d)
    } else {
        b * ones
    };
    let mut lambda = f64::INFINITY;
    for i in 0..d {
        if be[i] > 0.0 {
            lambda = lambda.min(mu[i] / be[i]);
        }
    }
    if !lambda.is_finite() {
        // zero covariance target: deterministic drift with the exact mean
        let gamma = SymMat::from_fn(d, |i, j| if i == j { mu[i] } else { 0.0 });
        return Ok(SubordinatorModel::drift_only(gamma));
    }
    let gamma = mu - &be * (lambda / 2.0);
    let gamma = gamma.map(|v| v.max(0.0));
    let model = DiagonalCp::new(b.clone(), lambda, gamma)?;
    Ok(SubordinatorModel::DiagonalCp(model))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelRepr {
    DriftOnly {
        gamma: SymMat,
    },
    DiagonalCp {
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
        gamma: Vec<f64>,
    },
    GaussMixtureCp {
        rate: f64,
        #[serde(rename = "C")]
        c: PsdMat,
        mixing: MixingLaw,
    },
    TypeGbar {
        #[serde(rename = "C")]
        c: PsdMat,
        mixing: MixingLaw,
    },
}

impl From<&SubordinatorModel> for ModelRepr {
    fn from(m: &SubordinatorModel) -> Self {
        match m {
            SubordinatorModel::DriftOnly(v) => ModelRepr::DriftOnly {
                gamma: v.gamma.clone(),
            },
            SubordinatorModel::DiagonalCp(v) => ModelRepr::DiagonalCp {
                b: (0..v.b.nrows())
                    .map(|i| (0..v.b.ncols()).map(|j| v.b[(i, j)]).collect())
                    .collect(),
                lambda: v.lambda,
                rate: Some(v.rate),
                gamma: v.gamma.iter().copied().collect(),
            },
            SubordinatorModel::GaussMixtureCp(v) => ModelRepr::GaussMixtureCp {
                rate: v.rate,
                c: v.c.clone(),
                mixing: v.mixing.clone(),
            },
            SubordinatorModel::TypeGbar(v) => ModelRepr::TypeGbar {
                c: v.c.clone(),
                mixing: v.mixing.clone(),
            },
        }
    }
}

impl TryFrom<ModelRepr> for SubordinatorModel {
    type Error = Error;
    fn try_from(repr: ModelRepr) -> Result<Self> {
        match repr {
            ModelRepr::DriftOnly { gamma } => Ok(SubordinatorModel::drift_only(gamma)),
            ModelRepr::DiagonalCp {
                b,
                lambda,
                rate,
                gamma,
            } => {
                let rows = b.len();
                let cols = b.first().map_or(0, |r| r.len());
                if b.iter().any(|r| r.len() != cols) {
                    return Err(Error::DimensionMismatch(
                        "factor B rows have inconsistent lengths".into(),
                    ));
                }
                let bm = DMatrix::from_fn(rows, cols, |i, j| b[i][j]);
                let model = DiagonalCp::new(bm, lambda, DVector::from_vec(gamma))?;
                if let Some(r) = rate {
                    let expected = model.rate();
                    if (r - expected).abs() > 1e-9 * expected.max(1.0) {
                        return Err(Error::InvalidParam(format!(
                            "rate {r} conflicts with lambda²/2 = {expected}"
                        )));
                    }
                }
                Ok(SubordinatorModel::DiagonalCp(model))
            }
            ModelRepr::GaussMixtureCp { rate, c, mixing } => Ok(
                SubordinatorModel::GaussMixtureCp(GaussMixtureCp::new(rate, c, mixing)?),
            ),
            ModelRepr::TypeGbar { c, mixing } => {
                Ok(SubordinatorModel::TypeGbar(TypeGbar::new(c, mixing)?))
            }
        }
    }
}

impl Serialize for SubordinatorModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SubordinatorModel {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ModelRepr::deserialize(de)?;
        SubordinatorModel::try_from(repr).map_err(D::Error::custom)
    }
}
