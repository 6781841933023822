//! The linear drift map `X -> AX + XA^T` on symmetric matrices: application,
//! congruence semigroup, Kronecker-sum generators and their inverses,
//! stability, and two constructive recovery procedures (from basis images
//! and from a black-box semigroup).

use nalgebra::{DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symcore::{matrix_exponential, vec_mat, unvec, SymMat};

type Lu = nalgebra::linalg::LU<f64, Dyn, Dyn>;

/// Condition-estimate ceiling above which the vec-space solves refuse.
pub const SOLVE_COND_LIMIT: f64 = 1e12;

/// Relative residual bound guaranteed by the solves.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// The map `X -> AX + XA^T` together with its cached vec-space generator
/// `A ⊗ I + I ⊗ A`. The second-moment operator `V -> GV + VG^T` (with `G`
/// the generator) needs no extra state: it is the same construction one
/// level up.
#[derive(Clone, Debug)]
pub struct DriftOperator {
    a: DMatrix<f64>,
    gen_small: DMatrix<f64>,
}

/// Spectrum of `A` and the stationarity verdict.
#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub spectrum: Vec<Complex64>,
    /// Largest real part over the spectrum; stable iff negative.
    pub margin: f64,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.margin < 0.0
    }
}

#[derive(Serialize, Deserialize)]
struct DriftOperatorRepr {
    d: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
}

impl Serialize for DriftOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        DriftOperatorRepr {
            d,
            a: (0..d)
                .map(|i| (0..d).map(|j| self.a[(i, j)]).collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DriftOperator {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = DriftOperatorRepr::deserialize(de)?;
        if repr.a.len() != repr.d || repr.a.iter().any(|r| r.len() != repr.d) {
            return Err(D::Error::custom(format!(
                "matrix A must be {0}x{0} to match d={0}",
                repr.d
            )));
        }
        let a = DMatrix::from_fn(repr.d, repr.d, |i, j| repr.a[i][j]);
        DriftOperator::new(a).map_err(D::Error::custom)
    }
}

impl DriftOperator {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "drift matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.is_empty() {
            return Err(Error::InvalidParam("drift dimension must be >= 1".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("drift matrix entries"));
        }
        let d = a.nrows();
        let id = DMatrix::identity(d, d);
        let gen_small = a.kronecker(&id) + id.kronecker(&a);
        Ok(DriftOperator { a, gen_small })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "drift rows do not form a square matrix".into(),
            ));
        }
        DriftOperator::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `AX + XA^T`; exactly symmetric because the second term is the
    /// transpose of the first when `X` is symmetric.
    pub fn apply(&self, x: &SymMat) -> SymMat {
        assert_eq!(x.dim(), self.dim(), "dimension mismatch in drift apply");
        let ax = &self.a * x.as_matrix();
        let m = &ax + ax.transpose();
        SymMat::symmetrize(m)
    }

    /// Propagator `e^{At}`.
    pub fn propagator(&self, t: f64) -> Result<DMatrix<f64>> {
        matrix_exponential(&self.a, t)
    }

    /// Semigroup action `e^{At} X e^{A^T t}`; a congruence, so it maps the
    /// PSD cone onto itself for every real `t`.
    pub fn evolve(&self, t: f64, x: &SymMat) -> Result<SymMat> {
        assert_eq!(x.dim(), self.dim(), "dimension mismatch in drift evolve");
        let p = self.propagator(t)?;
        Ok(x.congruence(&p))
    }

    /// The d²×d² generator `A ⊗ I + I ⊗ A`, satisfying
    /// `vec(AX + XA^T) = G vec(X)` and `e^{Gt} = e^{At} ⊗ e^{At}`.
    pub fn generator_matrix(&self) -> &DMatrix<f64> {
        &self.gen_small
    }

    /// Solves `AX + XA^T = Y` for symmetric `X`.
    ///
    /// Requires no two eigenvalues of `A` to sum to zero; detected through a
    /// 1-norm condition estimate capped at [`SOLVE_COND_LIMIT`].
    pub fn solve_small(&self, y: &SymMat) -> Result<SymMat> {
        if y.dim() != self.dim() {
            return Err(Error::DimensionMismatch(
                "right-hand side dimension does not match drift".into(),
            ));
        }
        let x = solve_via_lu(&self.gen_small, &y.to_vec())?;
        let xm = unvec(&x, self.dim())?;
        let xs = SymMat::symmetrize(xm);
        let resid = (&self.apply(&xs) - y).frobenius_norm();
        let bound = SOLVE_RESIDUAL_TOL * (1.0 + y.frobenius_norm());
        if !resid.is_finite() || resid > bound {
            return Err(Error::SingularOperator {
                cond: f64::INFINITY,
            });
        }
        Ok(xs)
    }

    /// Solves `GV + VG^T = W` for the d²×d² second-moment operator, where
    /// `G` is the cached generator.
    pub fn solve_big(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim() * self.dim();
        if w.nrows() != n || w.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "second-moment right-hand side must be {n}x{n}"
            )));
        }
        let g = &self.gen_small;
        let id = DMatrix::identity(n, n);
        let big = g.kronecker(&id) + id.kronecker(g);
        let v = solve_via_lu(&big, &vec_mat(w))?;
        let vm = unvec(&v, n)?;
        // residual check against the defining equation
        let resid = (g * &vm + &vm * g.transpose() - w).norm();
        let bound = SOLVE_RESIDUAL_TOL * (1.0 + w.norm());
        if !resid.is_finite() || resid > bound {
            return Err(Error::SingularOperator {
                cond: f64::INFINITY,
            });
        }
        Ok(vm)
    }

    /// Spectrum of `A` and the largest real part.
    pub fn stability(&self) -> StabilityReport {
        let ev = self.a.clone().complex_eigenvalues();
        let spectrum: Vec<Complex64> = ev.iter().copied().collect();
        let margin = spectrum.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        StabilityReport { spectrum, margin }
    }

    /// Ok(margin) when every eigenvalue of `A` has negative real part.
    pub fn require_stable(&self) -> Result<f64> {
        let report = self.stability();
        if report.is_stable() {
            Ok(report.margin)
        } else {
            Err(Error::UnstableDrift {
                margin: report.margin,
            })
        }
    }

    /// `∫_0^h e^{As} Γ e^{A^T s} ds`.
    ///
    /// The block exponential mixes `e^{-Ah}` with `e^{Ah}`, so one
    /// evaluation loses `e^{spread·h}` digits to cancellation. The horizon
    /// per evaluation is therefore capped, and longer spans assemble by
    /// `I(2t) = I(t) + P_t I(t) P_t^T`, which only multiplies by the
    /// propagator itself.
    pub fn drift_integral(&self, gamma: &SymMat, h: f64) -> Result<SymMat> {
        if gamma.dim() != self.dim() {
            return Err(Error::DimensionMismatch(
                "integrand dimension does not match drift".into(),
            ));
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("drift integral horizon"));
        }
        let scale = self.a.norm();
        let mut doublings = 0u32;
        let mut base = h;
        while base * scale > 4.0 && doublings < 64 {
            base *= 0.5;
            doublings += 1;
        }
        let mut integral = self.block_integral(gamma, base)?;
        if doublings > 0 {
            let mut p = self.propagator(base)?;
            for _ in 0..doublings {
                let mapped = &p * integral.as_matrix() * p.transpose();
                integral = SymMat::symmetrize(integral.as_matrix() + mapped);
                p = &p * &p;
            }
        }
        Ok(integral)
    }

    /// One block-exponential evaluation: the (1,2) block of
    /// `exp([[-A, Γ],[0, A^T]] h)` equals `∫_0^h e^{-A(h-s)} Γ e^{A^T s} ds`,
    /// which left-multiplied by `e^{Ah}` gives the integral.
    fn block_integral(&self, gamma: &SymMat, h: f64) -> Result<SymMat> {
        let d = self.dim();
        let mut block = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                block[(i, j)] = -self.a[(i, j)];
                block[(i, d + j)] = gamma.entry(i, j);
                block[(d + i, d + j)] = self.a[(j, i)];
            }
        }
        let e = matrix_exponential(&block, h)?;
        let f12 = e.view((0, d), (d, d)).into_owned();
        let f22 = e.view((d, d), (d, d)).into_owned();
        // e^{Ah} = (block (2,2) exponential)^T
        let integral = f22.transpose() * f12;
        Ok(SymMat::symmetrize(integral))
    }
}

/// LU solve of `M x = rhs` guarded by a 1-norm condition estimate.
fn solve_via_lu(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = m.clone().lu();
    let lu_t = m.transpose().lu();
    let cond = condition_estimate(m, &lu, &lu_t);
    if !cond.is_finite() || cond > SOLVE_COND_LIMIT {
        return Err(Error::SingularOperator { cond });
    }
    let mut x = lu.solve(rhs).ok_or(Error::SingularOperator {
        cond: f64::INFINITY,
    })?;
    // one step of iterative refinement tightens the residual cheaply
    let r = rhs - m * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularOperator {
            cond: f64::INFINITY,
        });
    }
    Ok(x)
}

fn matrix_one_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        best = best.max(m.column(j).iter().map(|v| v.abs()).sum());
    }
    best
}

/// Hager-style 1-norm condition estimate `||M||_1 * est(||M^{-1}||_1)`
/// using repeated solves with `M` and `M^T`.
fn condition_estimate(m: &DMatrix<f64>, lu: &Lu, lu_t: &Lu) -> f64 {
    let n = m.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0f64;
    for _ in 0..5 {
        let y = match lu.solve(&x) {
            Some(y) => y,
            None => return f64::INFINITY,
        };
        est = est.max(y.iter().map(|v| v.abs()).sum());
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = match lu_t.solve(&xi) {
            Some(z) => z,
            None => return f64::INFINITY,
        };
        let mut jmax = 0;
        let mut zmax = 0.0f64;
        for (j, v) in z.iter().enumerate() {
            if v.abs() > zmax {
                zmax = v.abs();
                jmax = j;
            }
        }
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[jmax] = 1.0;
    }
    est * matrix_one_norm(m)
}

/// Rebuilds `A` from the images `M^(i) = A E^(ii) + E^(ii) A^T` of the
/// diagonal basis matrices: column `i` of `A` is column `i` of `M^(i)`,
/// except the diagonal entry which appears doubled.
pub fn recover_from_basis_action(images: &[SymMat]) -> Result<DriftOperator> {
    let d = images.len();
    if d == 0 {
        return Err(Error::InvalidParam("no basis images supplied".into()));
    }
    if images.iter().any(|m| m.dim() != d) {
        return Err(Error::DimensionMismatch(
            "each image must be d x d where d is the number of images".into(),
        ));
    }
    let mut a = DMatrix::zeros(d, d);
    for (i, m) in images.iter().enumerate() {
        for k in 0..d {
            a[(k, i)] = if k == i {
                0.5 * m.entry(i, i)
            } else {
                m.entry(k, i)
            };
        }
    }
    DriftOperator::new(a)
}

/// Reconstructs the congruence factor `D(t)` with positive (1,1) entry from
/// a black-box semigroup `f(t, X) = D(t) X D(t)^T`, reading one column and
/// one row at a time off images of basis matrices:
/// `D_11 = sqrt(P_11)`, `D_i1 = P_i1 / D_11` with `P = f(t, E^(11))`, and
/// for `Q = f(t, E^(1j) + E^(j1))`:
/// `D_1j = Q_11 / (2 D_11)`, `D_ij = Q_1i / D_11 - Q_11 P_i1 / (2 D_11^3)`.
pub fn propagator_from_semigroup<F>(semigroup: &F, t: f64, d: usize) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &SymMat) -> SymMat + ?Sized,
{
    if d == 0 {
        return Err(Error::InvalidParam("dimension must be >= 1".into()));
    }
    let p = semigroup(t, &SymMat::basis_diag(d, 0));
    let p11 = p.entry(0, 0);
    if !(p11 > 0.0) || !p11.is_finite() {
        return Err(Error::WindowShrinkFailure { step: t });
    }
    let d11 = p11.sqrt();
    let mut dm = DMatrix::zeros(d, d);
    dm[(0, 0)] = d11;
    for i in 1..d {
        dm[(i, 0)] = p.entry(i, 0) / d11;
    }
    for j in 1..d {
        let q = semigroup(t, &SymMat::basis_offdiag(d, 0, j));
        dm[(0, j)] = q.entry(0, 0) / (2.0 * d11);
        for i in 1..d {
            dm[(i, j)] =
                q.entry(0, i) / d11 - q.entry(0, 0) * p.entry(i, 0) / (2.0 * d11 * d11 * d11);
        }
    }
    Ok(dm)
}

/// Recovers `A` from a black-box congruence semigroup by differentiating
/// the reconstructed factor `D(t)` at zero: central differences at steps
/// `h` and `h/2` combined by one Richardson extrapolation level.
///
/// Fails with a window-shrink error if the (1,1) positivity precondition
/// cannot be met after 20 halvings of the step, and with a
/// non-representability error if `f(h, X)` disagrees with `D(h) X D(h)^T`
/// on probe matrices.
pub fn extract_generator<F>(semigroup: &F, d: usize) -> Result<DriftOperator>
where
    F: Fn(f64, &SymMat) -> SymMat + ?Sized,
{
    if d == 0 {
        return Err(Error::InvalidParam("dimension must be >= 1".into()));
    }
    let image_scale = semigroup(1e-3, &SymMat::identity(d)).frobenius_norm();
    if !image_scale.is_finite() {
        return Err(Error::NonFinite("semigroup probe image"));
    }
    let mut h = 1e-5 * (1.0 + image_scale);

    let window_ok = |h: f64| -> bool {
        [h, -h, 0.5 * h, -0.5 * h].iter().all(|&t| {
            let p11 = semigroup(t, &SymMat::basis_diag(d, 0)).entry(0, 0);
            p11.is_finite() && p11 > 0.0
        })
    };
    let mut found = false;
    for _ in 0..=20 {
        if window_ok(h) {
            found = true;
            break;
        }
        h *= 0.5;
    }
    if !found {
        return Err(Error::WindowShrinkFailure { step: h });
    }

    let d_ph = propagator_from_semigroup(semigroup, h, d)?;
    let d_mh = propagator_from_semigroup(semigroup, -h, d)?;
    let d_ph2 = propagator_from_semigroup(semigroup, 0.5 * h, d)?;
    let d_mh2 = propagator_from_semigroup(semigroup, -0.5 * h, d)?;
    let delta_h = (&d_ph - &d_mh) / (2.0 * h);
    let delta_h2 = (&d_ph2 - &d_mh2) / h;
    let a_hat = (4.0 * delta_h2 - delta_h) / 3.0;

    // representability probe: the reconstructed factor must reproduce the
    // black box on matrices outside the reconstruction basis
    let probes = [
        SymMat::identity(d),
        SymMat::from_fn(d, |_, _| 1.0),
        SymMat::from_fn(d, |i, j| if i == j { (i + 1) as f64 } else { 0.0 }),
    ];
    for x in &probes {
        let img = semigroup(h, x);
        let rec = x.congruence(&d_ph);
        let resid = (&img - &rec).frobenius_norm();
        let bound = 1e-8 * (1.0 + img.frobenius_norm());
        if !resid.is_finite() || resid > bound {
            return Err(Error::NonRepresentable { residual: resid, t: h });
        }
    }

    DriftOperator::new(a_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::{psd_check, PSD_TOL};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_drift(d: usize, rng: &mut impl Rng) -> DriftOperator {
        DriftOperator::new(DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0))).unwrap()
    }

    /// Random A with spectrum shifted into the left half plane.
    fn random_stable_drift(d: usize, rng: &mut impl Rng) -> DriftOperator {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0f64));
        let radius: f64 = m.iter().map(|v| v.abs()).sum();
        let a = m - DMatrix::identity(d, d) * (radius + 0.1);
        DriftOperator::new(a).unwrap()
    }

    fn random_sym(d: usize, rng: &mut impl Rng) -> SymMat {
        SymMat::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn counterexample_drift() -> DriftOperator {
        DriftOperator::from_rows(&[
            vec![-0.1, -1.0 / 3.0],
            vec![-1.0 / 3.0, -2.0],
        ])
        .unwrap()
    }

    #[test]
    fn apply_identity_doubles() {
        let op = DriftOperator::new(DMatrix::identity(3, 3)).unwrap();
        let x = SymMat::from_fn(3, |i, j| (i + j) as f64);
        let y = op.apply(&x);
        assert_eq!(y, &x + &x);
    }

    #[test]
    fn apply_zero_drift() {
        let op = DriftOperator::new(DMatrix::zeros(2, 2)).unwrap();
        let x = SymMat::identity(2);
        assert_eq!(op.apply(&x).max_abs(), 0.0);
    }

    #[test]
    fn apply_counterexample_drift_to_identity() {
        // A I + I A^T = A + A^T, written out entrywise
        let op = counterexample_drift();
        let y = op.apply(&SymMat::identity(2));
        let expected = SymMat::from_rows(&[
            vec![-0.2, -2.0 / 3.0],
            vec![-2.0 / 3.0, -4.0],
        ])
        .unwrap();
        assert!((&y - &expected).max_abs() < 1e-15);
    }

    #[test]
    fn evolve_at_zero_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let op = random_drift(3, &mut rng);
        let x = random_sym(3, &mut rng);
        let y = op.evolve(0.0, &x).unwrap();
        assert!((&y - &x).max_abs() < 1e-15);
    }

    #[test]
    fn evolve_diagonal_closed_form() {
        // for A = diag(a1, a2) the (i,j) entry scales by e^{(a_i + a_j) t}
        let a = [0.3f64, -1.2];
        let op =
            DriftOperator::new(DMatrix::from_diagonal(&DVector::from_vec(a.to_vec()))).unwrap();
        let x = SymMat::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let t = 0.37;
        let y = op.evolve(t, &x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = x.entry(i, j) * ((a[i] + a[j]) * t).exp();
                assert_relative_eq!(y.entry(i, j), expected, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn evolve_preserves_psd_both_time_directions() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..100 {
            let d = rng.random_range(1..=4);
            let op = random_drift(d, &mut rng);
            let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0f64));
            let x = SymMat::symmetrize(&b * b.transpose());
            let t = rng.random_range(-1.0..1.0);
            let y = op.evolve(t, &x).unwrap();
            assert!(psd_check(&y, PSD_TOL * (1.0 + y.frobenius_norm())).is_ok());
        }
    }

    #[test]
    fn generator_matrix_d1() {
        let op = DriftOperator::new(DMatrix::from_element(1, 1, -0.7)).unwrap();
        assert_relative_eq!(op.generator_matrix()[(0, 0)], -1.4, epsilon = 1e-15);
    }

    #[test]
    fn generator_matrix_identity_d2() {
        let op = DriftOperator::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(op.generator_matrix(), &(DMatrix::identity(4, 4) * 2.0));
    }

    #[test]
    fn generator_matrix_matches_apply() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..50 {
            let d = rng.random_range(1..=4);
            let op = random_drift(d, &mut rng);
            let x = random_sym(d, &mut rng);
            let lhs = op.generator_matrix() * x.to_vec();
            let rhs = op.apply(&x).to_vec();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn generator_exponential_matches_semigroup() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        for _ in 0..20 {
            let d = rng.random_range(1..=3);
            let op = random_drift(d, &mut rng);
            let x = random_sym(d, &mut rng);
            let t = rng.random_range(-0.5..0.5);
            let lhs = matrix_exponential(op.generator_matrix(), t).unwrap() * x.to_vec();
            let rhs = op.evolve(t, &x).unwrap().to_vec();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn solve_small_half_identity() {
        // A = -I/2 makes the drift map minus the identity
        let op = DriftOperator::new(DMatrix::identity(3, 3) * -0.5).unwrap();
        let y = SymMat::from_fn(3, |i, j| (i * 3 + j) as f64);
        let x = op.solve_small(&y).unwrap();
        assert!((&x - &y.scale(-1.0)).max_abs() < 1e-12);
    }

    #[test]
    fn solve_small_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        for _ in 0..50 {
            let d = rng.random_range(1..=4);
            let op = random_stable_drift(d, &mut rng);
            let y = random_sym(d, &mut rng);
            let x = op.solve_small(&y).unwrap();
            let back = op.apply(&x);
            assert!((&back - &y).frobenius_norm() < 1e-10 * (1.0 + y.frobenius_norm()));
        }
    }

    #[test]
    fn solve_small_detects_resonant_spectrum() {
        // eigenvalues 1 and -1 sum to zero across the pair
        let op =
            DriftOperator::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])))
                .unwrap();
        let y = SymMat::identity(2);
        assert!(matches!(
            op.solve_small(&y),
            Err(Error::SingularOperator { .. })
        ));
    }

    #[test]
    fn solve_big_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        for _ in 0..20 {
            let d = rng.random_range(1..=3);
            let op = random_stable_drift(d, &mut rng);
            let n = d * d;
            let w0 = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0f64));
            let w = &w0 + w0.transpose();
            let v = op.solve_big(&w).unwrap();
            let g = op.generator_matrix();
            let back = g * &v + &v * g.transpose();
            assert!((back - &w).norm() < 1e-10 * (1.0 + w.norm()));
        }
    }

    #[test]
    fn stability_of_counterexample_drift() {
        // closed-form eigenvalues -21/20 ± sqrt(3649)/60 from the trace and
        // determinant of the 2x2 matrix
        let op = counterexample_drift();
        let report = op.stability();
        let root = 3649.0f64.sqrt() / 60.0;
        let mut re: Vec<f64> = report.spectrum.iter().map(|l| l.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] - (-21.0 / 20.0 - root)).abs() < 1e-10);
        assert!((re[1] - (-21.0 / 20.0 + root)).abs() < 1e-10);
        assert!(report.spectrum.iter().all(|l| l.im.abs() < 1e-12));
        assert!(report.is_stable());
        assert_relative_eq!(report.margin, -21.0 / 20.0 + root, epsilon = 1e-10);
    }

    #[test]
    fn stability_identity_unstable() {
        let op = DriftOperator::new(DMatrix::identity(2, 2)).unwrap();
        let report = op.stability();
        assert_relative_eq!(report.margin, 1.0, epsilon = 1e-12);
        assert!(!report.is_stable());
        assert!(matches!(
            op.require_stable(),
            Err(Error::UnstableDrift { .. })
        ));
    }

    #[test]
    fn stability_rotation_marginal() {
        let op =
            DriftOperator::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        let report = op.stability();
        assert!(report.margin.abs() < 1e-12);
        assert!(!report.is_stable());
    }

    #[test]
    fn drift_integral_scalar_closed_form() {
        // d=1: ∫_0^h g e^{2as} ds = g (e^{2ah} - 1) / (2a)
        let a = -0.8f64;
        let g = 1.7f64;
        let h = 0.9f64;
        let op = DriftOperator::new(DMatrix::from_element(1, 1, a)).unwrap();
        let gamma = SymMat::from_rows(&[vec![g]]).unwrap();
        let integral = op.drift_integral(&gamma, h).unwrap();
        let expected = g * ((2.0 * a * h).exp() - 1.0) / (2.0 * a);
        assert_relative_eq!(integral.entry(0, 0), expected, max_relative = 1e-12);
    }

    #[test]
    fn drift_integral_matches_quadrature() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..10 {
            let d = rng.random_range(1..=3);
            let op = random_drift(d, &mut rng);
            let gamma = random_sym(d, &mut rng);
            let h = rng.random_range(0.1..1.0);
            let fast = op.drift_integral(&gamma, h).unwrap();
            // brute-force oracle: fine Riemann midpoint sum of the integrand
            let n = 4000;
            let mut acc = SymMat::zeros(d);
            for k in 0..n {
                let s = (k as f64 + 0.5) * h / n as f64;
                let term = op.evolve(s, &gamma).unwrap();
                acc = &acc + &term.scale(h / n as f64);
            }
            assert!(
                (&fast - &acc).frobenius_norm() < 1e-6 * (1.0 + acc.frobenius_norm()),
                "block-exponential integral disagrees with Riemann oracle"
            );
        }
    }

    #[test]
    fn drift_integral_survives_long_horizons() {
        // slow mixing with a wide spectral spread: a single block
        // evaluation at h=256 would lose ~e^{500} digits to cancellation.
        // With gamma = -(A X + X A^T) the integral equals
        // X - e^{Ah} X e^{A^T h} exactly, at every horizon.
        let op = counterexample_drift();
        let x = SymMat::from_rows(&[
            vec![2.0, -2.0 / 3.0],
            vec![-2.0 / 3.0, 2.0],
        ])
        .unwrap();
        let gamma = op.apply(&x).scale(-1.0);
        for h in [1.0, 16.0, 64.0, 256.0, 1024.0] {
            let integral = op.drift_integral(&gamma, h).unwrap();
            let expected = &x - &op.evolve(h, &x).unwrap();
            let err = (&integral - &expected).frobenius_norm();
            assert!(
                err <= 1e-9 * (1.0 + expected.frobenius_norm()),
                "h={h}: error {err:.3e}"
            );
        }
    }

    #[test]
    fn recover_identity_from_images() {
        let op = DriftOperator::new(DMatrix::identity(2, 2)).unwrap();
        let images: Vec<SymMat> = (0..2).map(|i| op.apply(&SymMat::basis_diag(2, i))).collect();
        assert_eq!(images[0], SymMat::basis_diag(2, 0).scale(2.0));
        let rec = recover_from_basis_action(&images).unwrap();
        assert!((rec.a() - op.a()).norm() == 0.0);
    }

    #[test]
    fn recover_random_round_trip_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        for _ in 0..100 {
            let d = rng.random_range(1..=5);
            let op = random_drift(d, &mut rng);
            let images: Vec<SymMat> =
                (0..d).map(|i| op.apply(&SymMat::basis_diag(d, i))).collect();
            let rec = recover_from_basis_action(&images).unwrap();
            // reading entries back off the images is exact arithmetic
            assert_eq!(rec.a(), op.a());
        }
    }

    #[test]
    fn recover_rejects_inconsistent_images() {
        let images = vec![SymMat::identity(3), SymMat::identity(3)];
        assert!(recover_from_basis_action(&images).is_err());
    }

    #[test]
    fn propagator_reconstruction_diagonal_case() {
        // for diagonal A the (1,1) entry of the image of E^(11) is e^{2 a_1 t}
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.4, -1.1]));
        let op = DriftOperator::new(a).unwrap();
        let f = |t: f64, x: &SymMat| op.evolve(t, x).unwrap();
        let t = 0.05;
        let dm = propagator_from_semigroup(&f, t, 2).unwrap();
        assert_relative_eq!(dm[(0, 0)], (0.4 * t).exp(), max_relative = 1e-12);
        assert_relative_eq!(dm[(1, 1)], (-1.1 * t).exp(), max_relative = 1e-12);
        assert!(dm[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn propagator_reconstruction_equals_exponential() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for _ in 0..20 {
            let d = rng.random_range(1..=4);
            let op = random_drift(d, &mut rng);
            let f = |t: f64, x: &SymMat| op.evolve(t, x).unwrap();
            let t = 0.02;
            let dm = propagator_from_semigroup(&f, t, d).unwrap();
            let truth = op.propagator(t).unwrap();
            assert!((dm - truth).norm() < 1e-11);
        }
    }

    #[test]
    fn extract_zero_generator() {
        let f = |_t: f64, x: &SymMat| x.clone();
        let rec = extract_generator(&f, 3).unwrap();
        assert!(rec.a().norm() < 1e-9);
    }

    #[test]
    fn extract_counterexample_drift() {
        let op = counterexample_drift();
        let f = |t: f64, x: &SymMat| op.evolve(t, x).unwrap();
        let rec = extract_generator(&f, 2).unwrap();
        let err = (rec.a() - op.a()).norm();
        assert!(err <= 1e-5 * (1.0 + op.a().norm()), "error {err}");
    }

    #[test]
    fn extract_random_drifts() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        for _ in 0..30 {
            let d = rng.random_range(1..=4);
            let op = random_drift(d, &mut rng);
            let f = |t: f64, x: &SymMat| op.evolve(t, x).unwrap();
            let rec = extract_generator(&f, d).unwrap();
            let err = (rec.a() - op.a()).norm();
            assert!(err <= 1e-5 * (1.0 + op.a().norm()), "error {err}");
        }
    }

    #[test]
    fn extract_rejects_noncongruence_semigroup() {
        // generator X -> tr(X) I is linear and positivity preserving but not
        // of the form AX + XA^T, so the factor reconstruction cannot
        // reproduce it
        let f = |t: f64, x: &SymMat| {
            let bump = SymMat::identity(2).scale(t * x.trace());
            &x.clone() + &bump
        };
        match extract_generator(&f, 2) {
            Err(Error::NonRepresentable { .. }) => {}
            other => panic!("expected non-representability detection, got {other:?}"),
        }
    }

    #[test]
    fn extract_window_shrink_failure() {
        // image (1,1) entry is forced negative for every t != 0
        let f = |t: f64, x: &SymMat| {
            if t == 0.0 {
                x.clone()
            } else {
                SymMat::from_fn(x.dim(), |i, j| if i == 0 && j == 0 { -1.0 } else { 0.0 })
            }
        };
        assert!(matches!(
            extract_generator(&f, 2),
            Err(Error::WindowShrinkFailure { .. })
        ));
    }

    #[test]
    fn semigroup_law() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..30 {
            let d = rng.random_range(1..=4);
            let op = random_drift(d, &mut rng);
            let x = random_sym(d, &mut rng);
            let s = rng.random_range(-0.5..0.5);
            let t = rng.random_range(-0.5..0.5);
            let two_step = op.evolve(s, &op.evolve(t, &x).unwrap()).unwrap();
            let one_step = op.evolve(s + t, &x).unwrap();
            assert!((&two_step - &one_step).frobenius_norm() < 1e-10);
        }
    }

    #[test]
    fn serde_round_trip() {
        let op = counterexample_drift();
        let s = serde_json::to_string(&op).unwrap();
        assert!(s.contains("\"d\":2"));
        assert!(s.contains("\"A\":"));
        let back: DriftOperator = serde_json::from_str(&s).unwrap();
        assert_eq!(back.a(), op.a());
    }

    #[test]
    fn serde_rejects_mismatched_dimension() {
        let s = r#"{"d":3,"A":[[1.0,0.0],[0.0,1.0]]}"#;
        assert!(serde_json::from_str::<DriftOperator>(s).is_err());
    }
}
