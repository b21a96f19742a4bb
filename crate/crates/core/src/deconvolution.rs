//! Distribution of the noiseless signal from noisy samples, by dividing the
//! empirical characteristic function by the noise characteristic function.
//!
//! The samples are binned onto a uniform grid (each sample goes to the first
//! grid point at or above it, so that cumulating the bins reproduces the
//! empirical CDF at every grid point). The binned characteristic function is
//! computed with an FFT over a zero-padded buffer, coefficients whose modulus
//! is below `tau` are zeroed, the survivors are divided by the noise
//! characteristic function, and the inverse FFT gives a signed density. Its
//! running integral is projected onto non-decreasing sequences (isotonic least
//! squares) and rescaled to end at one, which lets ringing cancel instead of
//! turning clipped negative lobes into spurious mass.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::distributions::{CdfKind, NoiseSpec, StepCdf};
use crate::error::{Error, Result};
use crate::isotonic::pava;

/// Noise characteristic-function values below this are treated as zero.
pub const NOISE_CF_FLOOR: f64 = 1e-12;

/// A uniform grid `lo, lo + dx, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl UniformGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "grid range [{lo}, {hi}] is not a finite increasing interval"
            )));
        }
        if points < 2 {
            return Err(Error::InvalidParameter(
                "grid needs at least 2 points".into(),
            ));
        }
        Ok(Self { lo, hi, points })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn at(&self, j: usize) -> f64 {
        if j + 1 == self.points {
            self.hi
        } else {
            self.lo + j as f64 * self.step()
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.at(j)).collect()
    }
}

/// User-facing deconvolution options; unset fields are derived from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeconvSettings {
    /// Truncation threshold on the empirical characteristic function.
    /// Defaults to `n^{-1/2}`, or to 0 for noise-free data where the
    /// estimate is the empirical CDF itself.
    pub tau: Option<f64>,
    /// Spectral cutoff. Defaults to the Nyquist frequency of the x grid.
    pub freq_max: Option<f64>,
    /// FFT length. Defaults to twice the number of grid points.
    pub n_freq: Option<usize>,
    pub x_points: usize,
    /// Explicit grid range. Defaults to the sample range widened by three
    /// noise spreads on each side.
    pub x_range: Option<(f64, f64)>,
}

impl Default for DeconvSettings {
    fn default() -> Self {
        Self {
            tau: None,
            freq_max: None,
            n_freq: None,
            x_points: 512,
            x_range: None,
        }
    }
}

impl DeconvSettings {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    /// Resolves the defaults against a sample and noise law.
    pub fn resolve(&self, samples: &[f64], noise: &NoiseSpec) -> Result<DeconvConfig> {
        check_samples(samples)?;
        let (lo, hi) = match self.x_range {
            Some(r) => r,
            None => {
                let (mn, mx) = min_max(samples);
                let pad = 3.0 * noise.spread();
                let (mut lo, mut hi) = (mn - pad, mx + pad);
                if hi - lo <= 1e-12 * lo.abs().max(1.0) {
                    lo -= 0.5;
                    hi += 0.5;
                }
                (lo, hi)
            }
        };
        let x_grid = UniformGrid::new(lo, hi, self.x_points)?;
        let tau = self.tau.unwrap_or_else(|| {
            if noise.is_dirac() {
                0.0
            } else {
                1.0 / (samples.len() as f64).sqrt()
            }
        });
        let n_freq = self.n_freq.unwrap_or(2 * self.x_points);
        let freq_max = self
            .freq_max
            .unwrap_or(std::f64::consts::PI / x_grid.step());
        DeconvConfig::new(tau, freq_max, n_freq, x_grid)
    }
}

/// Fully resolved deconvolution parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeconvConfig {
    pub tau: f64,
    pub freq_max: f64,
    pub n_freq: usize,
    pub x_grid: UniformGrid,
}

impl DeconvConfig {
    pub fn new(tau: f64, freq_max: f64, n_freq: usize, x_grid: UniformGrid) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tau must be >= 0, got {tau}"
            )));
        }
        if !(freq_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "freq_max must be > 0, got {freq_max}"
            )));
        }
        if n_freq < 8 || !n_freq.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "n_freq must be even and >= 8, got {n_freq}"
            )));
        }
        if n_freq < x_grid.points {
            return Err(Error::InvalidParameter(format!(
                "n_freq ({n_freq}) must be at least the number of grid points ({})",
                x_grid.points
            )));
        }
        Ok(Self {
            tau,
            freq_max,
            n_freq,
            x_grid,
        })
    }

    /// Angular frequency of FFT bin `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        let n = self.n_freq as isize;
        let k = k as isize;
        let signed = if k <= n / 2 { k } else { k - n };
        2.0 * std::f64::consts::PI * signed as f64 / (self.n_freq as f64 * self.x_grid.step())
    }
}

/// Counts of spectral coefficients removed during a deconvolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralStats {
    /// Below `tau` in modulus.
    pub truncated: usize,
    /// Beyond `freq_max`.
    pub band_limited: usize,
    /// Noise characteristic function below [`NOISE_CF_FLOOR`].
    pub zero_noise: usize,
    /// Ratio with modulus above one, which no characteristic function can have.
    pub ratio_rejected: usize,
    /// Signed mass inside the grid before correction.
    pub raw_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvolvedCdf {
    pub cdf: StepCdf,
    /// Signed density on the x grid, before correction.
    pub raw_density: Vec<f64>,
    pub config: DeconvConfig,
    pub n_used: usize,
    pub stats: SpectralStats,
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteSample);
    }
    Ok(())
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        })
}

/// `t -> (1/n) sum_j exp(i t y_j)` at each requested frequency.
pub fn empirical_char_fn(samples: &[f64], t_grid: &[f64]) -> Result<Vec<Complex64>> {
    check_samples(samples)?;
    let n = samples.len() as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            samples
                .iter()
                .map(|&y| Complex64::from_polar(1.0, t * y))
                .sum::<Complex64>()
                / n
        })
        .collect())
}

/// Grid index of each sample: the first grid point at or above it.
fn bin_counts(samples: &[f64], grid: &UniformGrid) -> Result<Vec<u64>> {
    let (mn, mx) = min_max(samples);
    let slack = 1e-9 * grid.step();
    if mn < grid.lo - slack || mx > grid.hi + slack {
        return Err(Error::GridDoesNotCover {
            lo: mn,
            hi: mx,
            grid_lo: grid.lo,
            grid_hi: grid.hi,
        });
    }
    let dx = grid.step();
    let last = grid.points - 1;
    let mut counts = vec![0u64; grid.points];
    for &y in samples {
        let pos = ((y - grid.lo) / dx - 1e-9).ceil();
        let mut j = if pos <= 0.0 {
            0
        } else {
            (pos as usize).min(last)
        };
        // guard the index against rounding in `lo + j dx`
        while j < last && grid.at(j) < y {
            j += 1;
        }
        while j > 0 && grid.at(j - 1) >= y {
            j -= 1;
        }
        counts[j] += 1;
    }
    Ok(counts)
}

/// Estimates the distribution of the noiseless signal from `samples_y`.
pub fn deconvolve(
    samples_y: &[f64],
    noise: &NoiseSpec,
    config: &DeconvConfig,
) -> Result<DeconvolvedCdf> {
    check_samples(samples_y)?;
    noise.validate()?;
    let grid = config.x_grid;
    let counts = bin_counts(samples_y, &grid)?;
    let n = samples_y.len() as f64;
    let nf = config.n_freq;

    let mut spectrum = vec![Complex64::new(0.0, 0.0); nf];
    for (slot, &c) in spectrum.iter_mut().zip(&counts) {
        slot.re = c as f64 / n;
    }
    let mut planner = FftPlanner::<f64>::new();
    // sum_j m_j exp(+i 2 pi j k / N): the binned characteristic function up to
    // the phase of the grid origin, which cancels on the way back
    planner.plan_fft_inverse(nf).process(&mut spectrum);

    let mut stats = SpectralStats::default();
    let mut noise_cf = vec![f64::NAN; nf / 2 + 1];
    for (k, coef) in spectrum.iter_mut().enumerate() {
        if k == 0 {
            // total mass; never truncated
            continue;
        }
        let t = config.frequency(k);
        if t.abs() > config.freq_max * (1.0 + 1e-12) {
            *coef = Complex64::new(0.0, 0.0);
            stats.band_limited += 1;
            continue;
        }
        if coef.norm() < config.tau {
            *coef = Complex64::new(0.0, 0.0);
            stats.truncated += 1;
            continue;
        }
        let mirror = if k <= nf / 2 { k } else { nf - k };
        if noise_cf[mirror].is_nan() {
            noise_cf[mirror] = noise.char_fn(t.abs())?.re;
        }
        let denom = noise_cf[mirror];
        if denom.abs() < NOISE_CF_FLOOR {
            *coef = Complex64::new(0.0, 0.0);
            stats.zero_noise += 1;
            continue;
        }
        let ratio = *coef / denom;
        if ratio.norm() > 1.0 {
            *coef = Complex64::new(0.0, 0.0);
            stats.ratio_rejected += 1;
        } else {
            *coef = ratio;
        }
    }

    planner.plan_fft_forward(nf).process(&mut spectrum);
    let dx = grid.step();
    let mass: Vec<f64> = spectrum[..grid.points]
        .iter()
        .map(|c| c.re / nf as f64)
        .collect();
    let raw_density: Vec<f64> = mass.iter().map(|m| m / dx).collect();

    // signed CDF, projected onto monotone sequences, then rescaled to end at 1
    let mut acc = 0.0;
    let signed: Vec<f64> = mass
        .iter()
        .map(|&m| {
            acc += m;
            acc
        })
        .collect();
    stats.raw_mass = acc;
    let mut cumulative = pava(&signed);
    let top = *cumulative.last().unwrap();
    if !(top > 0.0 && top.is_finite()) {
        return Err(Error::Numeric(format!(
            "deconvolved distribution has no positive mass (total {top})"
        )));
    }
    for v in cumulative.iter_mut() {
        *v = (*v / top).clamp(0.0, 1.0);
    }
    *cumulative.last_mut().unwrap() = 1.0;

    let cdf = StepCdf::new(grid.values(), cumulative, CdfKind::Deconvolved)?;
    Ok(DeconvolvedCdf {
        cdf,
        raw_density,
        config: *config,
        n_used: samples_y.len(),
        stats,
    })
}

/// Resolves default settings and deconvolves in one step.
pub fn deconvolve_with(
    samples_y: &[f64],
    noise: &NoiseSpec,
    settings: &DeconvSettings,
) -> Result<DeconvolvedCdf> {
    let config = settings.resolve(samples_y, noise)?;
    deconvolve(samples_y, noise, &config)
}

/// Per-frequency comparison of deconvolving with `candidate` against plain
/// quantile matching, when the true noise is `truth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAdvantage {
    pub frequencies: Vec<f64>,
    /// `None` where either characteristic function vanishes.
    pub holds: Vec<Option<bool>>,
    pub fraction: f64,
    pub skipped: usize,
}

/// Evaluates `|1 - 1/f*| >= |1/f - 1/f*|` with `f` the candidate and `f*`
/// the true noise characteristic function.
pub fn noise_advantage(
    candidate: &NoiseSpec,
    truth: &NoiseSpec,
    t_grid: &[f64],
) -> Result<NoiseAdvantage> {
    let mut holds = Vec::with_capacity(t_grid.len());
    let mut skipped = 0;
    let mut satisfied = 0;
    for &t in t_grid {
        let f = candidate.char_fn(t)?;
        let f_star = truth.char_fn(t)?;
        if f.norm() < NOISE_CF_FLOOR || f_star.norm() < NOISE_CF_FLOOR {
            holds.push(None);
            skipped += 1;
            continue;
        }
        let one = Complex64::new(1.0, 0.0);
        let inv_star = one / f_star;
        let lhs = (one - inv_star).norm();
        let rhs = (one / f - inv_star).norm();
        let ok = lhs >= rhs;
        satisfied += ok as usize;
        holds.push(Some(ok));
    }
    let evaluated = t_grid.len() - skipped;
    Ok(NoiseAdvantage {
        frequencies: t_grid.to_vec(),
        holds,
        fraction: if evaluated == 0 {
            0.0
        } else {
            satisfied as f64 / evaluated as f64
        },
        skipped,
    })
}

/// Indicative deconvolution error rate with unit constant.
///
/// Gaussian noise: `(log(n/delta))^{-s}`. Uniform and Student noise are
/// ordinary smooth with Fourier decay exponent `b` (1 and `nu`):
/// `(n/log(1/delta))^{-s/(2s+2b+1)}`.
pub fn psi_rate(noise: &NoiseSpec, n: usize, delta: f64, smoothness: f64) -> Result<f64> {
    noise.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(smoothness > 0.0 && smoothness.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "smoothness must be > 0, got {smoothness}"
        )));
    }
    if noise.is_dirac() {
        return Ok(0.0);
    }
    let n = n as f64;
    let decay = match *noise {
        NoiseSpec::Gaussian { .. } => return Ok((n / delta).ln().powf(-smoothness)),
        NoiseSpec::Uniform { .. } => 1.0,
        NoiseSpec::ScaledStudent { nu, .. } => nu,
        NoiseSpec::Dirac => unreachable!(),
    };
    let eps = smoothness / (2.0 * smoothness + 2.0 * decay + 1.0);
    Ok((n / (1.0 / delta).ln()).powf(-eps))
}
