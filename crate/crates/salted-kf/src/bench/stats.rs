//! Statistics for the Monte-Carlo comparison: trajectory MSE, the exact
//! two-sided binomial sign test, the mass-transition metric at a guard, and
//! ordinary least squares for the runtime- and order-of-accuracy fits.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hybrid::{symmetric_part, GaussianBelief, HybridSystem, Transition, TRANSVERSALITY_EPS};

/// 99.5% standard-normal quantile `z` with `P(|X| ≤ z) = 0.99`: the central
/// 99% of a Gaussian lies within `±z·σ` of its mean.
pub const Z_995: f64 = 2.575829303548901;

/// Mean squared error between two equally long state sequences:
/// `(1/K)·Σₖ ‖truth[k] − est[k]‖²`. Both sequences must live in the same
/// (common) chart; multi-chart systems map their states first.
pub fn mse(truth: &[DVector<f64>], est: &[DVector<f64>]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::DimensionMismatch {
            context: "mse sequence length",
            expected: truth.len(),
            actual: est.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Config("mse of empty sequences".to_owned()));
    }
    let mut total = 0.0;
    for (x, e) in truth.iter().zip(est) {
        if x.len() != e.len() {
            return Err(Error::DimensionMismatch {
                context: "mse state dimension",
                expected: x.len(),
                actual: e.len(),
            });
        }
        total += (x - e).norm_squared();
    }
    Ok(total / truth.len() as f64)
}

/// Two-sided exact binomial sign test on paired differences.
///
/// Zero differences are dropped; with `k` positives among `n` nonzero
/// differences the p-value is `2·min(P(X ≤ min(k, n−k)), 1/2)` for
/// `X ~ Binomial(n, 1/2)`, clamped to `[0, 1]`. All differences zero gives
/// `p = 1` by convention (no evidence against the null median).
///
/// The binomial tail is accumulated in log space so the test stays defined
/// for batch sizes far beyond what `C(n, k)` fits in a float.
pub fn sign_test(diffs: &[f64]) -> Result<f64> {
    if diffs.is_empty() {
        return Err(Error::Config(
            "sign test requires at least one paired difference".to_owned(),
        ));
    }
    let mut n = 0usize;
    let mut positives = 0usize;
    for &d in diffs {
        if !d.is_finite() {
            return Err(Error::Config(format!(
                "sign test received a non-finite difference: {d}"
            )));
        }
        if d != 0.0 {
            n += 1;
            if d > 0.0 {
                positives += 1;
            }
        }
    }
    if n == 0 {
        return Ok(1.0);
    }
    let m = positives.min(n - positives);
    // ln k! for k = 0..=n, by cumulative summation (exact enough for tail
    // sums: the relative error is a few ulps per term).
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let ln_half_pow = n as f64 * std::f64::consts::LN_2;
    let mut tail = 0.0;
    for i in 0..=m {
        tail += (ln_fact[n] - ln_fact[i] - ln_fact[n - i] - ln_half_pow).exp();
    }
    Ok((2.0 * tail.min(0.5)).clamp(0.0, 1.0))
}

/// Size of a belief about to transition, reported as
/// `(‖Σ‖, Δ_T/Δ)`: the spectral norm of the covariance, and the time for the
/// central 99% of the belief's marginal along the unit guard normal
/// `n = D_xgᵀ/‖D_xg‖` to be carried across the guard, in units of the
/// timestep:
///
/// `Δ_T = 2·z₀.₉₉₅·σₙ / |D_xg·F_I / ‖D_xg‖|`, with `σₙ = √(nᵀΣn)`.
///
/// The belief mean is assumed to sit on the guard (this is where filter
/// prediction hands out the pre-reset belief). A non-transverse or stationary
/// approach is an error — the transit time is undefined there.
pub fn mass_transition_ratio(
    sys: &dyn HybridSystem,
    tr: Transition,
    t: f64,
    belief: &GaussianBelief,
    dt: f64,
) -> Result<(f64, f64)> {
    if belief.mode != tr.from {
        return Err(Error::Config(format!(
            "mass transition for {tr} evaluated on a belief in {}",
            belief.mode
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "timestep must be positive, got {dt}"
        )));
    }
    let (dxg, dtg) = sys.guard_gradient(tr, t, &belief.mean);
    let flow = sys.vector_field(tr.from, t, &belief.mean);
    let rate = dtg + (&dxg * &flow)[(0, 0)];
    if !(rate < -TRANSVERSALITY_EPS) {
        return Err(Error::NonTransverseCrossing {
            derivative: rate,
            t,
            eps: TRANSVERSALITY_EPS,
        });
    }
    let grad_norm = dxg.norm();
    if !(grad_norm > 0.0) {
        return Err(Error::Config(
            "guard gradient vanishes; the guard normal is undefined".to_owned(),
        ));
    }
    let normal: DVector<f64> = dxg.transpose() / grad_norm;
    let sigma_n = (normal.transpose() * &belief.cov * &normal)[(0, 0)]
        .max(0.0)
        .sqrt();
    let normal_speed = ((&dxg * &flow)[(0, 0)] / grad_norm).abs();
    let transit = 2.0 * Z_995 * sigma_n / normal_speed;
    Ok((spectral_norm(belief), transit / dt))
}

/// Spectral norm of the belief covariance (largest absolute eigenvalue of
/// its symmetric part).
fn spectral_norm(belief: &GaussianBelief) -> f64 {
    let eigs = symmetric_part(&belief.cov).symmetric_eigenvalues();
    eigs.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()))
}

/// Ordinary least-squares line through `(x, y)` points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 for an exact fit.
    pub r_squared: f64,
}

/// Fits `y ≈ slope·x + intercept` by least squares. Needs at least two
/// points and at least two distinct x values.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "fit_line point count",
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Config(
            "line fit requires at least two points".to_owned(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "line fit received a non-finite coordinate".to_owned(),
        ));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if !(sxx > 0.0) {
        return Err(Error::Config(
            "line fit requires at least two distinct x values".to_owned(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        ss_res += (y - slope * x - intercept).powi(2);
        ss_tot += (y - mean_y).powi(2);
    }
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Median of a sample (mean of the middle two for even counts). Returns
/// `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median of non-finite values"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some(0.5 * (sorted[mid - 1] + sorted[mid]))
    }
}
