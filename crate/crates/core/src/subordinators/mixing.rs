//! Mixing laws for mixture-driven subordinators: the degenerate point mass
//! and the generalized inverse Gaussian family GIG(nu, delta, alpha), whose
//! moments are Bessel-function ratios. The nu = -1/2 member is the inverse
//! Gaussian law underlying NIG processes and gets exact closed forms.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, InverseGaussian};
use serde::{Deserialize, Serialize};

use super::bessel::ln_bessel_k_scaled;
use crate::error::{Error, Result};
use crate::quad::integrate_adaptive_c64_pieces;
use crate::rng::ProjectRng;

/// First and second moments of the mixing variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingMoments {
    pub mean_eps: f64,
    pub var_eps: f64,
    pub second_moment_eps: f64,
}

impl MixingMoments {
    pub fn new(mean_eps: f64, var_eps: f64) -> Result<Self> {
        if !(mean_eps >= 0.0 && var_eps >= 0.0) || !mean_eps.is_finite() || !var_eps.is_finite() {
            return Err(Error::InvalidParam(format!(
                "mixing moments must be finite and nonnegative, got mean={mean_eps}, var={var_eps}"
            )));
        }
        Ok(MixingMoments {
            mean_eps,
            var_eps,
            second_moment_eps: var_eps + mean_eps * mean_eps,
        })
    }
}

/// Law of the positive mixing variable ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingLaw {
    /// ε ≡ value.
    Constant { value: f64 },
    /// Generalized inverse Gaussian with density proportional to
    /// `x^{nu-1} exp(-(delta²/x + alpha²x)/2)` on x > 0.
    Gig { nu: f64, delta: f64, alpha: f64 },
}

impl MixingLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MixingLaw::Constant { value } => {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(Error::InvalidParam(format!(
                        "constant mixing value must be positive, got {value}"
                    )));
                }
            }
            MixingLaw::Gig { nu, delta, alpha } => {
                if !nu.is_finite() || !(delta > 0.0) || !(alpha > 0.0) {
                    return Err(Error::InvalidParam(format!(
                        "GIG mixing requires finite nu and delta, alpha > 0, got nu={nu}, delta={delta}, alpha={alpha}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> Result<MixingMoments> {
        self.validate()?;
        match *self {
            MixingLaw::Constant { value } => MixingMoments::new(value, 0.0),
            MixingLaw::Gig { nu, delta, alpha } => gig_mixing_moments(nu, delta, alpha),
        }
    }

    /// Whether [`MixingLaw::sample`] is available.
    pub fn supports_sampling(&self) -> bool {
        match *self {
            MixingLaw::Constant { .. } => true,
            MixingLaw::Gig { nu, .. } => is_inverse_gaussian_order(nu),
        }
    }

    /// Draws ε. GIG sampling is provided for nu = -1/2 only, where the law
    /// is inverse Gaussian with mean delta/alpha and shape delta².
    pub fn sample(&self, rng: &mut ProjectRng) -> Result<f64> {
        match *self {
            MixingLaw::Constant { value } => Ok(value),
            MixingLaw::Gig { nu, delta, alpha } => {
                if !is_inverse_gaussian_order(nu) {
                    return Err(Error::Unsupported(format!(
                        "sampling GIG mixing is implemented only for nu = -1/2, got nu={nu}"
                    )));
                }
                let ig = InverseGaussian::new(delta / alpha, delta * delta)
                    .map_err(|e| Error::InvalidParam(format!("inverse Gaussian setup: {e}")))?;
                Ok(ig.sample(rng))
            }
        }
    }

    /// `E[g(ε)]` for bounded continuous `g`, exact for the point mass and by
    /// adaptive quadrature against the GIG density otherwise. The partition
    /// is anchored at the density mode so a spike narrow relative to the
    /// truncated support cannot hide between sample points.
    pub fn expectation(&self, g: &dyn Fn(f64) -> Complex64, tol: f64) -> Result<Complex64> {
        self.validate()?;
        match *self {
            MixingLaw::Constant { value } => Ok(g(value)),
            MixingLaw::Gig { nu, delta, alpha } => {
                let ln_norm = gig_ln_normalizer(nu, delta, alpha)?;
                let density = move |x: f64| {
                    gig_ln_kernel(nu, delta, alpha, x).map_or(0.0, |k| (k - ln_norm).exp())
                };
                let f = |x: f64| g(x) * density(x);
                let upper = gig_upper_cut(nu, delta, alpha);
                let mode = gig_mode(nu, delta, alpha);
                let mut points = vec![0.0];
                let mut x = mode / 8.0;
                while x < upper {
                    points.push(x);
                    x *= 2.0;
                }
                points.push(upper);
                integrate_adaptive_c64_pieces(&f, &points, tol)
            }
        }
    }
}

fn is_inverse_gaussian_order(nu: f64) -> bool {
    (nu + 0.5).abs() < 1e-13
}

/// Unnormalized log density `(nu-1) ln x - (delta²/x + alpha²x)/2`;
/// None below the support.
fn gig_ln_kernel(nu: f64, delta: f64, alpha: f64, x: f64) -> Option<f64> {
    if x <= 0.0 {
        return None;
    }
    Some((nu - 1.0) * x.ln() - 0.5 * (delta * delta / x + alpha * alpha * x))
}

/// Log of the normalizing constant `2 K_nu(delta alpha) (delta/alpha)^nu`.
fn gig_ln_normalizer(nu: f64, delta: f64, alpha: f64) -> Result<f64> {
    let z = delta * alpha;
    Ok(std::f64::consts::LN_2 + ln_bessel_k_scaled(nu, z)? - z + nu * (delta / alpha).ln())
}

/// Upper truncation point where the GIG tail mass is negligible.
fn gig_upper_cut(nu: f64, delta: f64, alpha: f64) -> f64 {
    let mode_scale = (delta / alpha).max(1.0);
    let mut upper = mode_scale;
    // require alpha²x/2 - (nu-1) ln x to clear a 90-nat margin
    for _ in 0..200 {
        let k = gig_ln_kernel(nu, delta, alpha, upper).unwrap_or(f64::NEG_INFINITY);
        let peak = gig_ln_kernel(nu, delta, alpha, gig_mode(nu, delta, alpha)).unwrap_or(0.0);
        if k <= peak - 90.0 {
            break;
        }
        upper *= 1.5;
    }
    upper
}

fn gig_mode(nu: f64, delta: f64, alpha: f64) -> f64 {
    // stationary point of the log kernel: (nu-1)/x + delta²/(2x²) - alpha²/2 = 0
    let b = nu - 1.0;
    ((b + (b * b + (delta * alpha) * (delta * alpha)).sqrt()) / (alpha * alpha)).max(delta / alpha * 1e-3)
}

/// Mean and variance of GIG(nu, delta, alpha):
/// `E(ε) = (delta/alpha) K_{nu+1}(delta alpha) / K_nu(delta alpha)` and
/// `E(ε²) = (delta/alpha)² K_{nu+2} / K_nu`, evaluated through scaled Bessel
/// logs so large `delta·alpha` cannot underflow. For nu = -1/2 the ratios
/// collapse to the exact inverse Gaussian values `delta/alpha` and
/// `delta/alpha³`.
pub fn gig_mixing_moments(nu: f64, delta: f64, alpha: f64) -> Result<MixingMoments> {
    if !nu.is_finite() || !(delta > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidParam(format!(
            "GIG moments need finite nu and positive delta, alpha; got nu={nu}, delta={delta}, alpha={alpha}"
        )));
    }
    if is_inverse_gaussian_order(nu) {
        return MixingMoments::new(delta / alpha, delta / (alpha * alpha * alpha));
    }
    let z = delta * alpha;
    let ln_k0 = ln_bessel_k_scaled(nu, z)?;
    let ln_k1 = ln_bessel_k_scaled(nu + 1.0, z)?;
    let ln_k2 = ln_bessel_k_scaled(nu + 2.0, z)?;
    let ratio = delta / alpha;
    let mean = ratio * (ln_k1 - ln_k0).exp();
    let second = ratio * ratio * (ln_k2 - ln_k0).exp();
    let var = second - mean * mean;
    if !mean.is_finite() || !var.is_finite() || var < 0.0 {
        return Err(Error::InvalidParam(format!(
            "GIG moment evaluation lost precision for nu={nu}, delta={delta}, alpha={alpha}"
        )));
    }
    MixingMoments::new(mean, var)
}

/// Draws from the inverse Gaussian subordinator increment over `dt`:
/// IG with mean `dt·delta/alpha` and shape `(dt·delta)²`, the additive
/// scaling of the nu = -1/2 GIG law.
pub fn sample_ig_increment(delta: f64, alpha: f64, dt: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    let ig = InverseGaussian::new(dt * delta / alpha, (dt * delta) * (dt * delta))
        .map_err(|e| Error::InvalidParam(format!("inverse Gaussian setup: {e}")))?;
    Ok(ig.sample(rng))
}
