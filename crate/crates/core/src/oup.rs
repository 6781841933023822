//! Ornstein-Uhlenbeck processes of positive semidefinite matrices:
//! `dS_t = (A S_{t-} + S_{t-} A^T) dt + dL_t` for a matrix subordinator `L`.
//! Provides exact jump-by-jump path simulation, closed-form stationary
//! moments, the stationary characteristic function, approximate stationary
//! sampling with an explicit mixing horizon, Monte Carlo moment estimates
//! with standard errors, and cone diagnostics for simulated states.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::driftop::DriftOperator;
use crate::error::{Error, Result};
use crate::quad::integrate_adaptive_c64;
use crate::rng::ProjectRng;
use crate::subordinators::{JumpRecord, SubordinatorModel};
use crate::symcore::{matrix_exponential, scaled_tol, PsdMat, SymMat, PSD_TOL};

/// Numerical knobs for simulation and quadrature.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Largest window the path simulation uses between recorded states.
    pub grid_step: f64,
    /// Squared-propagator-norm threshold defining the burn-in horizon.
    pub burn_in_tol: f64,
    /// Absolute tolerance of the stationary characteristic function
    /// quadrature.
    pub charfn_tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            grid_step: 0.01,
            burn_in_tol: 1e-8,
            charfn_tol: 1e-8,
        }
    }
}

impl SimOptions {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("grid_step", self.grid_step),
            ("burn_in_tol", self.burn_in_tol),
            ("charfn_tol", self.charfn_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A fully specified process: drift, driver, start state, and options.
#[derive(Clone, Debug)]
pub struct OuProcessSpec {
    pub drift: DriftOperator,
    pub driver: SubordinatorModel,
    pub sigma0: PsdMat,
    pub options: SimOptions,
}

impl OuProcessSpec {
    pub fn new(drift: DriftOperator, driver: SubordinatorModel, sigma0: PsdMat) -> Result<Self> {
        Self::with_options(drift, driver, sigma0, SimOptions::default())
    }

    pub fn with_options(
        drift: DriftOperator,
        driver: SubordinatorModel,
        sigma0: PsdMat,
        options: SimOptions,
    ) -> Result<Self> {
        if drift.dim() != driver.dim() || drift.dim() != sigma0.dim() {
            return Err(Error::DimensionMismatch(format!(
                "drift is {}x{}, driver is {}x{}, start state is {}x{}",
                drift.dim(),
                drift.dim(),
                driver.dim(),
                driver.dim(),
                sigma0.dim(),
                sigma0.dim()
            )));
        }
        options.validate()?;
        Ok(OuProcessSpec {
            drift,
            driver,
            sigma0,
            options,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OuSpecRepr {
    drift: DriftOperator,
    driver: SubordinatorModel,
    sigma0: PsdMat,
    #[serde(default)]
    options: SimOptions,
}

impl Serialize for OuProcessSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OuSpecRepr {
            drift: self.drift.clone(),
            driver: self.driver.clone(),
            sigma0: self.sigma0.clone(),
            options: self.options.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OuProcessSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = OuSpecRepr::deserialize(de)?;
        OuProcessSpec::with_options(repr.drift, repr.driver, repr.sigma0, repr.options)
            .map_err(D::Error::custom)
    }
}

/// A simulated trajectory with the complete jump log (absolute jump
/// times). `times` holds the regular grid and, for exact drivers, one
/// additional entry per jump carrying the post-jump state; the sequence is
/// nondecreasing.
#[derive(Clone, Debug)]
pub struct OuPath {
    pub times: Vec<f64>,
    pub states: Vec<SymMat>,
    pub jumps: Vec<JumpRecord>,
    /// Positions of the regular grid rows within `times`/`states`.
    pub grid_indices: Vec<usize>,
    /// True when the increments were drawn from the exact increment law;
    /// false for the type-Gbar subgrid scheme.
    pub exact: bool,
}

impl OuPath {
    /// The uniformly spaced subsequence of states (grid rows only), which
    /// is what lag-based moment estimation expects.
    pub fn grid_states(&self) -> Vec<SymMat> {
        self.grid_indices
            .iter()
            .map(|&i| self.states[i].clone())
            .collect()
    }
}

/// Where a moment report came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MomentProvenance {
    ClosedForm,
    MonteCarlo { n: usize },
}

/// Per-entry standard errors of a Monte Carlo moment report.
#[derive(Clone, Debug)]
pub struct MomentStdErrors {
    pub mean: DMatrix<f64>,
    pub var_vec: DMatrix<f64>,
    pub autocov: Vec<(f64, DMatrix<f64>)>,
}

/// First and second stationary moments: mean of `S`, covariance of
/// `vec(S)`, lagged autocovariances of `vec(S)`, and the image of the
/// driver drift under the inverse drift map.
#[derive(Clone, Debug)]
pub struct MomentReport {
    pub mean: SymMat,
    pub var_vec: DMatrix<f64>,
    pub autocov: Vec<(f64, DMatrix<f64>)>,
    pub gamma: SymMat,
    pub provenance: MomentProvenance,
    pub std_errors: Option<MomentStdErrors>,
}

/// Stationary draws plus, per requested lag, the state reached by running
/// the same trajectory that much further: `lagged[k][i]` sits `lags[k]`
/// after `draws[i]`.
#[derive(Clone, Debug)]
pub struct StationarySample {
    pub draws: Vec<SymMat>,
    pub lags: Vec<f64>,
    pub lagged: Vec<Vec<SymMat>>,
    pub burn_in: f64,
    pub spacing: f64,
}

/// Cone diagnostics over a collection of states.
#[derive(Clone, Debug)]
pub struct PsdDiagnostics {
    pub count: usize,
    /// Smallest eigenvalue seen anywhere.
    pub min_eigenvalue: f64,
    /// Share of states whose smallest eigenvalue clears the scaled
    /// positivity tolerance (strictly positive definite states).
    pub strict_fraction: f64,
    /// `rank_histogram[r]` counts states of numerical rank `r`.
    pub rank_histogram: Vec<usize>,
    /// States whose smallest eigenvalue falls below minus the scaled
    /// tolerance: actual departures from the cone.
    pub cone_violations: usize,
}

/// Deterministic evolution over `[0, t]` from `start`, applying the given
/// jumps (sorted offsets in `[0, t)`) at their times and the continuous
/// drift `gamma dt` throughout:
/// `S_t = e^{At} S_0 e^{A^T t} + sum_j e^{A(t-s_j)} J_j e^{A^T(t-s_j)}
///        + int_0^t e^{As} gamma e^{A^T s} ds`.
pub fn propagate_with_jumps(
    drift: &DriftOperator,
    gamma: &SymMat,
    start: &SymMat,
    jumps: &[JumpRecord],
    t: f64,
) -> Result<SymMat> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParam(format!(
            "propagation horizon must be nonnegative, got {t}"
        )));
    }
    let has_drift = gamma.max_abs() > 0.0;
    let mut state = start.clone();
    let mut prev = 0.0;
    for rec in jumps {
        if rec.time < prev || rec.time >= t {
            return Err(Error::InvalidParam(format!(
                "jump at {} outside the sorted window [0, {t})",
                rec.time
            )));
        }
        state = evolve_segment(drift, gamma, has_drift, state, rec.time - prev)?;
        state = &state + &rec.jump;
        prev = rec.time;
    }
    evolve_segment(drift, gamma, has_drift, state, t - prev)
}

fn evolve_segment(
    drift: &DriftOperator,
    gamma: &SymMat,
    has_drift: bool,
    state: SymMat,
    dt: f64,
) -> Result<SymMat> {
    if dt == 0.0 {
        return Ok(state);
    }
    let mut next = drift.evolve(dt, &state)?;
    if has_drift {
        next = &next + &drift.drift_integral(gamma, dt)?;
    }
    Ok(next)
}

/// Simulates a trajectory over `[0, horizon]`.
///
/// Drivers with exact increment laws evolve jump by jump, and the path is
/// recorded at every jump time (post-jump state) in addition to the regular
/// grid, so `times` interleaves both. The subgrid-approximated family
/// instead uses the grid scheme `S_{t+h} = e^{Ah} S_t e^{A^T h} + ΔL`,
/// applying each window's whole increment at the window end and recording
/// grid points only (the jump log still carries the subgrid aggregates).
/// The final grid point lands exactly on the horizon.
pub fn simulate_path(spec: &OuProcessSpec, horizon: f64, rng: &mut ProjectRng) -> Result<OuPath> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParam(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    let n = ((horizon / spec.options.grid_step) - 1e-9).ceil().max(1.0) as usize;
    let dt = horizon / n as f64;
    let gamma = spec.driver.gamma_drift();
    let has_drift = gamma.max_abs() > 0.0;
    let exact = spec.driver.exact_increments();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut jumps = Vec::new();
    let mut grid_indices = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(spec.sigma0.base().clone());
    grid_indices.push(0);
    let mut state = spec.sigma0.base().clone();
    for k in 0..n {
        let window_start = k as f64 * dt;
        let window_end = if k + 1 == n {
            horizon
        } else {
            (k + 1) as f64 * dt
        };
        let inc = spec.driver.sample_increment(dt, rng)?;
        if exact {
            let mut prev = 0.0;
            for rec in &inc.jumps {
                state = evolve_segment(&spec.drift, &gamma, has_drift, state, rec.time - prev)?;
                state = &state + &rec.jump;
                prev = rec.time;
                if !state.is_finite() {
                    return Err(Error::NonFinite("simulated state"));
                }
                times.push((window_start + rec.time).min(window_end));
                states.push(state.clone());
            }
            state = evolve_segment(&spec.drift, &gamma, has_drift, state, dt - prev)?;
        } else {
            state = evolve_segment(&spec.drift, &gamma, has_drift, state, dt)?;
            state = &state + &inc.increment;
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("simulated state"));
        }
        grid_indices.push(times.len());
        times.push(window_end);
        states.push(state.clone());
        jumps.extend(inc.jumps.into_iter().map(|r| JumpRecord {
            time: (window_start + r.time).min(window_end),
            jump: r.jump,
        }));
    }
    Ok(OuPath {
        times,
        states,
        jumps,
        grid_indices,
        exact,
    })
}

/// Smallest power-of-two horizon `T` with `‖e^{AT}‖_F² ≤ tol`; the decay
/// scale used for burn-in and for truncating the stationary
/// characteristic-function integral. Requires a stable drift.
pub fn mixing_horizon(drift: &DriftOperator, tol: f64) -> Result<f64> {
    if !(tol > 0.0) || tol >= 1.0 {
        return Err(Error::InvalidParam(format!(
            "decay tolerance must lie in (0, 1), got {tol}"
        )));
    }
    let margin = drift.require_stable()?;
    let mut t = 1.0;
    for _ in 0..64 {
        let p = drift.propagator(t)?;
        let n2 = p.norm();
        if n2 * n2 <= tol {
            return Ok(t);
        }
        t *= 2.0;
    }
    Err(Error::UnstableDrift { margin })
}

/// Closed-form stationary moments: the mean solves `A S + S A^T = -E L_1`,
/// the vec-covariance solves the same equation one level up with the
/// Kronecker-sum generator, the lag-`h` autocovariance is `e^{Gh}` applied
/// to the covariance, and `gamma` is the stationary image of the driver
/// drift.
pub fn stationary_moments(
    drift: &DriftOperator,
    driver: &SubordinatorModel,
    lags: &[f64],
) -> Result<MomentReport> {
    if drift.dim() != driver.dim() {
        return Err(Error::DimensionMismatch(
            "drift and driver dimensions differ".into(),
        ));
    }
    drift.require_stable()?;
    let mom = driver.moments()?;
    let mean = drift.solve_small(&mom.mean.scale(-1.0))?;
    let var_raw = drift.solve_big(&(-&mom.var_vec))?;
    let var_vec = 0.5 * (&var_raw + var_raw.transpose());
    let gamma = drift.solve_small(&mom.gamma.scale(-1.0))?;
    let g = drift.generator_matrix();
    let mut autocov = Vec::with_capacity(lags.len());
    for &h in lags {
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::InvalidParam(format!(
                "autocovariance lag must be nonnegative, got {h}"
            )));
        }
        let decay = matrix_exponential(g, h)?;
        autocov.push((h, decay * &var_vec));
    }
    Ok(MomentReport {
        mean,
        var_vec,
        autocov,
        gamma,
        provenance: MomentProvenance::ClosedForm,
        std_errors: None,
    })
}

/// Stationary characteristic function
/// `E exp(i tr(S_inf Z)) = exp( int_0^{T*} psi_L(e^{A^T s} Z e^{As}) ds )`,
/// truncated at the horizon where `‖e^{AT*}‖_F² ≤ 1e-10`; the discarded
/// tail is dominated by the integrand's decay at that scale.
pub fn stationary_charfn(
    drift: &DriftOperator,
    driver: &SubordinatorModel,
    z: &SymMat,
    tol: f64,
) -> Result<Complex64> {
    if drift.dim() != driver.dim() || z.dim() != drift.dim() {
        return Err(Error::DimensionMismatch(
            "drift, driver, and argument dimensions must agree".into(),
        ));
    }
    // surface unsupported drivers before spending quadrature effort
    driver.char_exponent(z)?;
    let t_star = mixing_horizon(drift, 1e-10)?;
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let integrand = |s: f64| -> Complex64 {
        if failure.borrow().is_some() {
            return Complex64::new(0.0, 0.0);
        }
        let step = drift
            .propagator(s)
            .map(|p| z.congruence(&p.transpose()))
            .and_then(|arg| driver.char_exponent(&arg));
        match step {
            Ok(v) => v,
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                Complex64::new(0.0, 0.0)
            }
        }
    };
    let integral = integrate_adaptive_c64(&integrand, 0.0, t_star, tol)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(integral.exp())
}

/// Advances `state` by `total` time units of the process dynamics,
/// sampling driver increments over windows of at most `window`. Exact
/// drivers evolve jump by jump; the subgrid-approximated family applies
/// each window's increment at the window end, matching the
/// [`simulate_path`] scheme.
fn advance_state(
    drift: &DriftOperator,
    driver: &SubordinatorModel,
    gamma: &SymMat,
    mut state: SymMat,
    total: f64,
    window: f64,
    rng: &mut ProjectRng,
) -> Result<SymMat> {
    let exact = driver.exact_increments();
    let has_drift = gamma.max_abs() > 0.0;
    let mut remaining = total;
    while remaining > 1e-12 * total {
        let dt = remaining.min(window);
        let inc = driver.sample_increment(dt, rng)?;
        if exact {
            state = propagate_with_jumps(drift, gamma, &state, &inc.jumps, dt)?;
        } else {
            state = evolve_segment(drift, gamma, has_drift, state, dt)?;
            state = &state + &inc.increment;
        }
        remaining -= dt;
    }
    Ok(state)
}

/// Draws `n` states whose law is within the burn-in tolerance of
/// stationarity, together with lagged companions along the same
/// trajectory. The chain starts at zero, burns in over the mixing horizon
/// of `options.burn_in_tol`, and separates consecutive base draws by at
/// least that horizon again.
pub fn sample_stationary_with_lags(
    spec: &OuProcessSpec,
    n: usize,
    lags: &[f64],
    rng: &mut ProjectRng,
) -> Result<StationarySample> {
    if n == 0 {
        return Err(Error::InvalidParam("draw count must be positive".into()));
    }
    for pair in lags.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidParam(
                "lags must be strictly increasing".into(),
            ));
        }
    }
    if let Some(&first) = lags.first() {
        if !(first > 0.0) || !lags.iter().all(|h| h.is_finite()) {
            return Err(Error::InvalidParam(
                "lags must be positive and finite".into(),
            ));
        }
    }
    let t_burn = mixing_horizon(&spec.drift, spec.options.burn_in_tol)?;
    let window = if spec.driver.exact_increments() {
        f64::INFINITY
    } else {
        spec.options.grid_step
    };
    let gamma = spec.driver.gamma_drift();
    let mut state = SymMat::zeros(spec.dim());
    state = advance_state(&spec.drift, &spec.driver, &gamma, state, t_burn, window, rng)?;
    let mut draws = Vec::with_capacity(n);
    let mut lagged: Vec<Vec<SymMat>> = vec![Vec::with_capacity(n); lags.len()];
    for _ in 0..n {
        draws.push(state.clone());
        let mut prev = 0.0;
        for (k, &h) in lags.iter().enumerate() {
            state = advance_state(
                &spec.drift,
                &spec.driver,
                &gamma,
                state,
                h - prev,
                window,
                rng,
            )?;
            lagged[k].push(state.clone());
            prev = h;
        }
        state = advance_state(&spec.drift, &spec.driver, &gamma, state, t_burn, window, rng)?;
    }
    Ok(StationarySample {
        draws,
        lags: lags.to_vec(),
        lagged,
        burn_in: t_burn,
        spacing: t_burn,
    })
}

/// [`sample_stationary_with_lags`] without lagged companions.
pub fn sample_stationary(
    spec: &OuProcessSpec,
    n: usize,
    rng: &mut ProjectRng,
) -> Result<Vec<SymMat>> {
    Ok(sample_stationary_with_lags(spec, n, &[], rng)?.draws)
}

/// Monte Carlo stationary moments from near-independent stationary draws,
/// with per-entry standard errors: `sd/sqrt(n)` for the mean, and the
/// usual fourth-moment formula `sqrt((E[(x_p y_q)²] - c_pq²)/n)` for
/// covariance entries.
pub fn monte_carlo_moments(
    spec: &OuProcessSpec,
    n: usize,
    lags: &[f64],
    rng: &mut ProjectRng,
) -> Result<MomentReport> {
    if n < 2 {
        return Err(Error::InvalidParam(
            "moment estimation needs at least two draws".into(),
        ));
    }
    let sample = sample_stationary_with_lags(spec, n, lags, rng)?;
    let d = spec.dim();
    let m = d * d;
    let base: Vec<DVector<f64>> = sample.draws.iter().map(|s| s.to_vec()).collect();
    let mut mean_vec = DVector::zeros(m);
    for x in &base {
        mean_vec += x;
    }
    mean_vec /= n as f64;
    let centered: Vec<DVector<f64>> = base.iter().map(|x| x - &mean_vec).collect();
    let (cov, cov_se) = cross_moments(&centered, &centered);
    let se_mean = DMatrix::from_fn(d, d, |i, j| (cov[(j * d + i, j * d + i)] / n as f64).sqrt());
    let mut autocov = Vec::with_capacity(lags.len());
    let mut autocov_se = Vec::with_capacity(lags.len());
    for (k, &h) in sample.lags.iter().enumerate() {
        let shifted: Vec<DVector<f64>> = sample.lagged[k]
            .iter()
            .map(|s| s.to_vec() - &mean_vec)
            .collect();
        // lagged draw on the rows: E[(x_{t+h} - m)(x_t - m)^T], matching
        // the closed-form orientation e^{Gh} var
        let (c, se) = cross_moments(&shifted, &centered);
        autocov.push((h, c));
        autocov_se.push((h, se));
    }
    let gamma_l = spec.driver.moments()?.gamma;
    let gamma = spec.drift.solve_small(&gamma_l.scale(-1.0))?;
    Ok(MomentReport {
        mean: SymMat::symmetrize(DMatrix::from_fn(d, d, |i, j| mean_vec[j * d + i])),
        var_vec: cov,
        autocov,
        gamma,
        provenance: MomentProvenance::MonteCarlo { n },
        std_errors: Some(MomentStdErrors {
            mean: se_mean,
            var_vec: cov_se,
            autocov: autocov_se,
        }),
    })
}

/// Sample second moments `E[x y^T]` of centered rows plus the standard
/// error of each entry.
fn cross_moments(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = xs.len();
    let m = xs.first().map_or(0, |x| x.len());
    let mut c = DMatrix::zeros(m, m);
    let mut fourth = DMatrix::zeros(m, m);
    for (x, y) in xs.iter().zip(ys) {
        for p in 0..m {
            for q in 0..m {
                let prod = x[p] * y[q];
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

/// Eigenvalue diagnostics over simulated states: global minimum
/// eigenvalue, fraction of strictly positive definite states, a histogram
/// of numerical ranks, and the count of genuine cone violations. All
/// comparisons use the scaled positivity tolerance.
pub fn psd_diagnostics(states: &[SymMat]) -> Result<PsdDiagnostics> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidParam("diagnostics need at least one state".into()))?;
    let d = first.dim();
    let mut min_eigenvalue = f64::INFINITY;
    let mut strict = 0usize;
    let mut rank_histogram = vec![0usize; d + 1];
    let mut cone_violations = 0usize;
    for s in states {
        if s.dim() != d {
            return Err(Error::DimensionMismatch(
                "diagnostic states must share one dimension".into(),
            ));
        }
        let tol = scaled_tol(PSD_TOL, s);
        let ev = s.eigenvalues()?;
        let low = ev[0];
        min_eigenvalue = min_eigenvalue.min(low);
        if low > tol {
            strict += 1;
        }
        if low < -tol {
            cone_violations += 1;
        }
        let rank = ev.iter().filter(|l| **l > tol).count();
        rank_histogram[rank] += 1;
    }
    Ok(PsdDiagnostics {
        count: states.len(),
        min_eigenvalue,
        strict_fraction: strict as f64 / states.len() as f64,
        rank_histogram,
        cone_violations,
    })
}
