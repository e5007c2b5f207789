//! Fitting a [`MotionModel1D`] to a window of position samples.
//!
//! The breathing period comes from an autocorrelation peak, refined by
//! Gauss-Newton on the full harmonic model. Base, drift and the harmonic
//! coefficients are then the joint least-squares solution at that period,
//! expressed relative to the window's origin (the model creation time).

use thiserror::Error;

use crate::linalg::Design;
use crate::motion::{MotionModel1D, HARMONICS};
use crate::scalar::Scalar;

/// Fit window used by the online pipeline, in ms.
pub const DEFAULT_WINDOW_MS: f64 = 20_000.0;

/// Fewer samples per period than this is rejected as degenerate.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("sample timestamps must be finite and strictly increasing (index {0})")]
    Unordered(usize),
    #[error("sample value at index {0} is not finite")]
    NonFinite(usize),
    #[error("window spans {span} ms, at least {needed} ms required")]
    WindowTooShort { span: f64, needed: f64 },
    #[error("only {0:.1} samples per period, at least 8 required")]
    Degenerate(f64),
    #[error("signal is flat (detrended spread {0:.3e} mm)")]
    Flat(f64),
    #[error("no oscillation found in the period band")]
    NoPeriod,
    #[error("least-squares system is singular")]
    Singular,
    #[error("period must be positive and finite")]
    BadPeriod,
}

/// Timestamped positions of one axis. Fitted models put `t = 0` at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow<T> {
    samples: Vec<(T, T)>,
    origin: T,
}

impl<T: Scalar> SampleWindow<T> {
    /// Window whose origin is its first timestamp.
    pub fn new(samples: Vec<(T, T)>) -> Result<Self, FitError> {
        for (i, &(t, x)) in samples.iter().enumerate() {
            if !t.is_finite() {
                return Err(FitError::Unordered(i));
            }
            if !x.is_finite() {
                return Err(FitError::NonFinite(i));
            }
            if i > 0 && t <= samples[i - 1].0 {
                return Err(FitError::Unordered(i));
            }
        }
        let origin = samples.first().map(|s| s.0).unwrap_or_else(T::zero);
        Ok(Self { samples, origin })
    }

    pub fn with_origin(mut self, origin: T) -> Self {
        self.origin = origin;
        self
    }

    pub fn samples(&self) -> &[(T, T)] {
        &self.samples
    }

    pub fn origin(&self) -> T {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time between first and last sample.
    pub fn span(&self) -> T {
        match (self.samples.first(), self.samples.last()) {
            (Some(f), Some(l)) => l.0 - f.0,
            _ => T::zero(),
        }
    }
}

/// Tuning of the period search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodSearch<T> {
    pub min_period: T,
    pub max_period: T,
    /// Minimum normalised autocorrelation at the accepted peak.
    pub min_correlation: T,
    /// Detrended standard deviation (mm) below which the signal counts as flat.
    pub flat_tolerance: T,
}

impl<T: Scalar> Default for PeriodSearch<T> {
    fn default() -> Self {
        Self {
            min_period: T::lit(1500.0),
            max_period: T::lit(10_000.0),
            min_correlation: T::lit(0.3),
            flat_tolerance: T::lit(1e-6),
        }
    }
}

/// Fitted model with the RMS of its reconstruction residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit<T> {
    pub model: MotionModel1D<T>,
    pub residual_rms: T,
}

/// Dominant breathing period with the default search band.
pub fn estimate_period<T: Scalar>(window: &SampleWindow<T>) -> Result<T, FitError> {
    estimate_period_with(window, &PeriodSearch::default())
}

pub fn estimate_period_with<T: Scalar>(
    window: &SampleWindow<T>,
    search: &PeriodSearch<T>,
) -> Result<T, FitError> {
    let span = window.span();
    let needed = search.min_period + search.min_period;
    if window.len() < 16 || span < needed {
        return Err(FitError::WindowTooShort {
            span: span.as_f64(),
            needed: needed.as_f64(),
        });
    }
    let coarse = autocorrelation_peak(window, search)?;
    Ok(refine_period(window, coarse))
}

/// Linearly resampled, detrended signal on a uniform grid.
fn uniform_detrended<T: Scalar>(window: &SampleWindow<T>) -> (T, Vec<T>) {
    let s = window.samples();
    let n = s.len();
    let step = window.span() / T::lit((n - 1) as f64);
    let t0 = s[0].0;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let t = t0 + T::lit(i as f64) * step;
        while j + 2 < n && s[j + 1].0 < t {
            j += 1;
        }
        let (ta, xa) = s[j];
        let (tb, xb) = s[(j + 1).min(n - 1)];
        let x = if tb > ta {
            let w = ((t - ta) / (tb - ta)).max(T::zero()).min(T::one());
            xa + (xb - xa) * w
        } else {
            xa
        };
        out.push(x);
    }
    // remove the least-squares line
    let nf = T::lit(n as f64);
    let mean_i = T::lit((n - 1) as f64 / 2.0);
    let mean_x = out.iter().copied().sum::<T>() / nf;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (i, &x) in out.iter().enumerate() {
        let di = T::lit(i as f64) - mean_i;
        sxy = sxy + di * (x - mean_x);
        sxx = sxx + di * di;
    }
    let slope = sxy / sxx;
    for (i, x) in out.iter_mut().enumerate() {
        *x = *x - mean_x - slope * (T::lit(i as f64) - mean_i);
    }
    (step, out)
}

fn autocorrelation_peak<T: Scalar>(
    window: &SampleWindow<T>,
    search: &PeriodSearch<T>,
) -> Result<T, FitError> {
    let (step, x) = uniform_detrended(window);
    let n = x.len();
    let energy: T = x.iter().map(|v| *v * *v).sum();
    let spread = (energy / T::lit(n as f64)).sqrt();
    if spread <= search.flat_tolerance {
        return Err(FitError::Flat(spread.as_f64()));
    }
    let lag_lo = (search.min_period / step).floor().to_usize().unwrap_or(1).max(1);
    let lag_hi = (search.max_period / step)
        .ceil()
        .to_usize()
        .unwrap_or(usize::MAX)
        .min(n - 2);
    if lag_lo + 2 > lag_hi {
        return Err(FitError::NoPeriod);
    }
    let acf = |lag: usize| -> T {
        x[..n - lag]
            .iter()
            .zip(&x[lag..])
            .map(|(a, b)| *a * *b)
            .sum::<T>()
            / energy
    };
    // one lag of context on each side for local-maximum detection
    let first = lag_lo.saturating_sub(1).max(1);
    let values: Vec<T> = (first..=lag_hi + 1).map(acf).collect();
    let mut best: Option<(usize, T)> = None;
    for i in 1..values.len() - 1 {
        let lag = first + i;
        if lag < lag_lo || lag > lag_hi {
            continue;
        }
        let (prev, cur, next) = (values[i - 1], values[i], values[i + 1]);
        if cur >= prev && cur > next && best.is_none_or(|(_, v)| cur > v) {
            best = Some((i, cur));
        }
    }
    let Some((i, peak)) = best else {
        return Err(FitError::NoPeriod);
    };
    if peak < search.min_correlation {
        return Err(FitError::NoPeriod);
    }
    // parabolic interpolation of the peak
    let (ym, y0, yp) = (values[i - 1], values[i], values[i + 1]);
    let denom = ym - y0 - y0 + yp;
    let shift = if denom < T::zero() {
        (T::lit(0.5) * (ym - yp) / denom).max(T::lit(-0.5)).min(T::lit(0.5))
    } else {
        T::zero()
    };
    Ok((T::lit((first + i) as f64) + shift) * step)
}

/// Residual sum of squares of the linear fit at angular frequency `omega`.
fn rss_at<T: Scalar>(window: &SampleWindow<T>, omega: T) -> Option<T> {
    let coef = solve_linear(window, omega)?;
    Some(
        window
            .samples()
            .iter()
            .map(|&(t, x)| {
                let r = x - predict(&coef, omega, t - window.origin());
                r * r
            })
            .sum(),
    )
}

/// Scan around the coarse estimate, then Gauss-Newton on all parameters.
fn refine_period<T: Scalar>(window: &SampleWindow<T>, coarse: T) -> T {
    let tau = T::TAU();
    let mut best = (coarse, rss_at(window, tau / coarse));
    for i in -30i32..=30 {
        let p = coarse * (T::one() + T::lit(i as f64 * 0.002));
        if let Some(r) = rss_at(window, tau / p) {
            if best.1.is_none_or(|b| r < b) {
                best = (p, Some(r));
            }
        }
    }
    let (start, Some(start_rss)) = best else {
        return coarse;
    };
    match gauss_newton(window, tau / start, start_rss) {
        Some(omega) if omega > T::zero() => tau / omega,
        _ => start,
    }
}

// parameter layout: [base, drift, a1..a4, b1..b4]
const LINEAR_PARAMS: usize = 2 + 2 * HARMONICS;

fn predict<T: Scalar>(coef: &[T], omega: T, t: T) -> T {
    let mut x = coef[0] + coef[1] * t;
    for k in 0..HARMONICS {
        let ph = T::lit((k + 1) as f64) * omega * t;
        x = x + coef[2 + k] * ph.cos() + coef[2 + HARMONICS + k] * ph.sin();
    }
    x
}

fn solve_linear<T: Scalar>(window: &SampleWindow<T>, omega: T) -> Option<Vec<T>> {
    let s = window.samples();
    let mut a = Design::zeros(s.len(), LINEAR_PARAMS);
    let mut y = Vec::with_capacity(s.len());
    for (r, &(t, x)) in s.iter().enumerate() {
        let t = t - window.origin();
        a.set(r, 0, T::one());
        a.set(r, 1, t);
        for k in 0..HARMONICS {
            let ph = T::lit((k + 1) as f64) * omega * t;
            a.set(r, 2 + k, ph.cos());
            a.set(r, 2 + HARMONICS + k, ph.sin());
        }
        y.push(x);
    }
    a.solve(&y)
}

fn gauss_newton<T: Scalar>(window: &SampleWindow<T>, omega0: T, rss0: T) -> Option<T> {
    let s = window.samples();
    let mut omega = omega0;
    let mut coef = solve_linear(window, omega)?;
    let mut rss = rss0;
    for _ in 0..60 {
        let mut jac = Design::zeros(s.len(), LINEAR_PARAMS + 1);
        let mut resid = Vec::with_capacity(s.len());
        for (r, &(t, x)) in s.iter().enumerate() {
            let t = t - window.origin();
            jac.set(r, 0, T::one());
            jac.set(r, 1, t);
            let mut d_omega = T::zero();
            for k in 0..HARMONICS {
                let kk = T::lit((k + 1) as f64);
                let (sn, cs) = (kk * omega * t).sin_cos();
                jac.set(r, 2 + k, cs);
                jac.set(r, 2 + HARMONICS + k, sn);
                d_omega = d_omega + kk * t * (coef[2 + HARMONICS + k] * cs - coef[2 + k] * sn);
            }
            jac.set(r, LINEAR_PARAMS, d_omega);
            resid.push(x - predict(&coef, omega, t));
        }
        let delta = jac.solve(&resid)?;
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..12 {
            let cand_omega = omega + scale * delta[LINEAR_PARAMS];
            let cand: Vec<T> = coef
                .iter()
                .zip(&delta)
                .map(|(c, d)| *c + scale * *d)
                .collect();
            let cand_rss: T = s
                .iter()
                .map(|&(t, x)| {
                    let r = x - predict(&cand, cand_omega, t - window.origin());
                    r * r
                })
                .sum();
            if cand_rss <= rss {
                let converged =
                    (cand_omega - omega).abs() <= T::epsilon() * T::lit(4.0) * omega.abs();
                omega = cand_omega;
                coef = cand;
                rss = cand_rss;
                accepted = true;
                if converged {
                    return Some(omega);
                }
                break;
            }
            scale = scale * T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    Some(omega)
}

/// Joint least-squares fit of base, drift and four harmonics at `period`.
///
/// The model's `t = 0` is the window origin.
pub fn fit<T: Scalar>(window: &SampleWindow<T>, period: T) -> Result<Fit<T>, FitError> {
    if !(period.is_finite() && period > T::zero()) {
        return Err(FitError::BadPeriod);
    }
    let span = window.span();
    let needed = period + period;
    if span < needed {
        return Err(FitError::WindowTooShort {
            span: span.as_f64(),
            needed: needed.as_f64(),
        });
    }
    let per_period = T::lit((window.len() - 1) as f64) * period / span;
    if per_period < T::lit(MIN_SAMPLES_PER_PERIOD) {
        return Err(FitError::Degenerate(per_period.as_f64()));
    }
    let omega = T::TAU() / period;
    let coef = solve_linear(window, omega).ok_or(FitError::Singular)?;
    let mut a = [T::zero(); HARMONICS];
    let mut b = [T::zero(); HARMONICS];
    a.copy_from_slice(&coef[2..2 + HARMONICS]);
    b.copy_from_slice(&coef[2 + HARMONICS..]);
    let model = MotionModel1D::new(period, coef[1], coef[0], a, b).map_err(|_| FitError::Singular)?;
    let ss: T = window
        .samples()
        .iter()
        .map(|&(t, x)| {
            let r = x - model.evaluate(t - window.origin());
            r * r
        })
        .sum();
    Ok(Fit {
        model,
        residual_rms: (ss / T::lit(window.len() as f64)).sqrt(),
    })
}

/// Period estimation followed by [`fit`].
pub fn fit_window<T: Scalar>(window: &SampleWindow<T>) -> Result<Fit<T>, FitError> {
    let period = estimate_period(window)?;
    fit(window, period)
}
