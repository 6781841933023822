//! Dense matrix exponential (Pade order 13 with scaling and squaring) and
//! principal matrix logarithm (inverse scaling and squaring with
//! Denman-Beavers square roots).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

/// 1-norm threshold below which the order-13 Pade approximant is full
/// double-precision accurate without scaling.
const PADE13_THETA: f64 = 5.371920351148152;

const PADE13_COEFF: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Matrix exponential `e^M` of a square matrix.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expm requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    let d = m.nrows();
    let norm = one_norm(m);
    let s = if norm > PADE13_THETA {
        ((norm / PADE13_THETA).log2().ceil() as i32).max(0)
    } else {
        0
    };
    let a = m / 2f64.powi(s);

    let b = &PADE13_COEFF;
    let id = DMatrix::identity(d, d);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &id;
    let u = &a * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &id;

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut result = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularOperator { cond: f64::INFINITY })?;
    for _ in 0..s {
        result = &result * &result;
    }
    Ok(result)
}

/// `e^{M t}` for a square matrix and a scalar time.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !t.is_finite() {
        return Err(Error::NonFinite("matrix exponential time"));
    }
    expm(&(m * t))
}

/// Principal matrix logarithm of a real square matrix.
///
/// Rejects matrices with an eigenvalue on the closed negative real axis
/// (including zero), where no real principal logarithm exists. Square roots
/// are taken until `||M - I||_1 <= 0.25`, then `log(I + X)` is evaluated by
/// the 10-node Gauss-Legendre rule applied to `∫_0^1 X (I + sX)^{-1} ds`,
/// which at that norm is accurate to well below double-precision roundoff.
pub fn matrix_logarithm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix logarithm requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix logarithm input"));
    }
    let d = m.nrows();
    for ev in m.clone().complex_eigenvalues().iter() {
        let on_axis = ev.re <= 0.0 && ev.im.abs() <= 1e-12 * (1.0 + ev.re.abs());
        if on_axis {
            return Err(Error::LogBranchCut { eigenvalue: *ev });
        }
    }

    let id = DMatrix::identity(d, d);
    let mut x = m.clone();
    let mut k = 0u32;
    while one_norm(&(&x - &id)) > 0.25 {
        x = sqrtm_denman_beavers(&x)?;
        k += 1;
        if k > 64 {
            return Err(Error::Unsupported(
                "matrix logarithm did not contract after 64 square roots".into(),
            ));
        }
    }

    let e = &x - &id;
    let (nodes, weights) = gauss_legendre(10);
    let mut log_small = DMatrix::zeros(d, d);
    for (node, w) in nodes.iter().zip(&weights) {
        let s = 0.5 * (node + 1.0);
        let lhs = &id + s * &e;
        let term = lhs
            .lu()
            .solve(&e)
            .ok_or(Error::SingularOperator { cond: f64::INFINITY })?;
        log_small += 0.5 * w * term;
    }
    Ok(log_small * 2f64.powi(k as i32))
}

/// Denman-Beavers iteration with determinant scaling for the principal
/// square root. Valid for matrices with no eigenvalue on the closed
/// negative real axis.
fn sqrtm_denman_beavers(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    let mut y = m.clone();
    let mut z: DMatrix<f64> = DMatrix::identity(d, d);
    for _ in 0..60 {
        let det_prod: f64 = (y.determinant() * z.determinant()).abs();
        let mu = if det_prod.is_finite() && det_prod > 0.0 {
            det_prod.powf(-1.0 / (2.0 * d as f64))
        } else {
            1.0
        };
        let y_s = &y * mu;
        let z_s = &z * mu;
        let y_inv = y_s
            .clone()
            .try_inverse()
            .ok_or(Error::SingularOperator { cond: f64::INFINITY })?;
        let z_inv = z_s
            .clone()
            .try_inverse()
            .ok_or(Error::SingularOperator { cond: f64::INFINITY })?;
        let y_next = 0.5 * (&y_s + z_inv);
        let z_next = 0.5 * (&z_s + y_inv);
        let step = one_norm(&(&y_next - &y_s));
        let scale = one_norm(&y_next).max(1e-300);
        y = y_next;
        z = z_next;
        if step <= 1e-14 * scale {
            return Ok(y);
        }
    }
    Err(Error::Unsupported(
        "Denman-Beavers square root failed to converge in 60 iterations".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn expm_zero_is_identity() {
        let z = DMatrix::zeros(3, 3);
        let e = expm(&z).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -3.0, 0.5]));
        let e = expm(&m).unwrap();
        for (i, lam) in [1.0f64, -3.0, 0.5].iter().enumerate() {
            assert_relative_eq!(e[(i, i)], lam.exp(), max_relative = 1e-12);
        }
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn expm_nilpotent() {
        // exp([[0,1],[0,0]]) = [[1,1],[0,1]] exactly (series terminates)
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&m).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(max_abs_diff(&e, &expected) < 1e-14);
    }

    #[test]
    fn expm_rotation_small_angle() {
        let th = 0.7f64;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -th, th, 0.0]);
        let e = expm(&m).unwrap();
        let expected =
            DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        assert!(max_abs_diff(&e, &expected) < 1e-13);
    }

    #[test]
    fn expm_rotation_forces_squaring() {
        // 1-norm 40 requires s = ceil(log2(40/theta13)) = 3 squarings
        let th = 40.0f64;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -th, th, 0.0]);
        let e = expm(&m).unwrap();
        let expected =
            DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        assert!(max_abs_diff(&e, &expected) < 1e-11);
    }

    #[test]
    fn expm_functional_equation() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = rng.random_range(1..=5);
            let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0f64));
            let e1 = expm(&m).unwrap();
            let e2 = expm(&(&m * 2.0)).unwrap();
            let prod = &e1 * &e1;
            assert!(
                max_abs_diff(&prod, &e2) < 1e-11 * (1.0 + one_norm(&e2)),
                "exp(M)^2 != exp(2M)"
            );
        }
    }

    #[test]
    fn expm_inverse_is_negated_argument() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..20 {
            let d = rng.random_range(1..=4);
            let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0f64));
            let e = expm(&m).unwrap();
            let einv = expm(&(-&m)).unwrap();
            let prod = &e * &einv;
            assert!(max_abs_diff(&prod, &DMatrix::identity(d, d)) < 1e-12);
        }
    }

    #[test]
    fn matrix_exponential_scales_time() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -0.5]);
        let a = matrix_exponential(&m, 0.75).unwrap();
        let b = expm(&(&m * 0.75)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expm_rejects_nonfinite() {
        let m = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(expm(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn logm_identity_is_zero() {
        let l = matrix_logarithm(&DMatrix::identity(4, 4)).unwrap();
        assert!(one_norm(&l) < 1e-14);
    }

    #[test]
    fn logm_roundtrip_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..30 {
            let d = rng.random_range(1..=5);
            let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.6..0.6f64));
            let e = expm(&m).unwrap();
            let back = matrix_logarithm(&e).unwrap();
            assert!(
                max_abs_diff(&back, &m) < 1e-8,
                "log(exp(M)) != M, diff {}",
                max_abs_diff(&back, &m)
            );
        }
    }

    #[test]
    fn logm_rotation_near_branch() {
        // eigenvalues e^{±3i} sit close to the negative real axis but off it
        let th = 3.0f64;
        let m = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let l = matrix_logarithm(&m).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -th, th, 0.0]);
        assert!(max_abs_diff(&l, &expected) < 1e-8);
    }

    #[test]
    fn logm_rejects_negative_real_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        assert!(matches!(
            matrix_logarithm(&m),
            Err(Error::LogBranchCut { .. })
        ));
    }

    #[test]
    fn logm_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            matrix_logarithm(&m),
            Err(Error::LogBranchCut { .. })
        ));
    }

    #[test]
    fn logm_large_positive_definite() {
        // spectrum spread over four decades exercises repeated square roots
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            1e-2, 1.0, 40.0, 300.0,
        ]));
        let l = matrix_logarithm(&m).unwrap();
        for (i, lam) in [1e-2f64, 1.0, 40.0, 300.0].iter().enumerate() {
            assert_relative_eq!(l[(i, i)], lam.ln(), max_relative = 1e-10, epsilon = 1e-12);
        }
    }
}
