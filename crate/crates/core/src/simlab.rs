//! Synthetic data generators, experiment runners and the MSE metrics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::NoiseSpec;
use crate::error::{Error, Result};
use crate::linkfit::{fit_group, interpolate, FitOptions, LinkEstimate};
use crate::matching::{Dataset, GroupKey};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Points in the grid-MSE evaluation grid.
pub const MSE_GRID_POINTS: usize = 201;
/// Fraction of the support covered by the grid-MSE evaluation grid.
pub const MSE_GRID_COVERAGE: f64 = 0.9;
/// Points in the dense truth table.
pub const TRUTH_POINTS: usize = 1001;

/// Link function used to generate data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HFamily {
    /// `x |x| / 4`
    PowerAbs,
    /// `x` below 0, flat at 0.5 on `[0, 2)`, `x + 1` from 2 on.
    DiscFlat,
    Identity,
    /// `a x + b`
    Affine {
        a: f64,
        b: f64,
    },
    /// Piecewise-linear through sorted `(x, h)` knots, constant outside.
    Table {
        points: Vec<(f64, f64)>,
    },
}

impl HFamily {
    pub fn validate(&self) -> Result<()> {
        match self {
            HFamily::Affine { a, b } if !(a.is_finite() && b.is_finite()) => Err(
                Error::InvalidParameter("affine coefficients must be finite".into()),
            ),
            HFamily::Table { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidParameter(
                        "table needs at least 2 knots".into(),
                    ));
                }
                if points.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::InvalidParameter(
                        "table knots must be strictly increasing in x".into(),
                    ));
                }
                if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
                    return Err(Error::InvalidParameter("table knots must be finite".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            HFamily::PowerAbs => x * x.abs() / 4.0,
            HFamily::DiscFlat => {
                if x < 0.0 {
                    x
                } else if x < 2.0 {
                    0.5
                } else {
                    x + 1.0
                }
            }
            HFamily::Identity => x,
            HFamily::Affine { a, b } => a * x + b,
            HFamily::Table { points } => {
                let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
                interpolate(&xs, &ys, x)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XLaw {
    Uniform { lo: f64, hi: f64 },
}

impl XLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            XLaw::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => Ok(()),
            XLaw::Uniform { lo, hi } => Err(Error::InvalidParameter(format!(
                "uniform law needs lo < hi, got [{lo}, {hi}]"
            ))),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            XLaw::Uniform { lo, hi } => (lo, hi),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.support();
        rng.random_range(lo..hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    pub n: usize,
    pub h_family: HFamily,
    pub x_law: XLaw,
    pub noise_true: NoiseSpec,
    pub noise_deconv: NoiseSpec,
    pub seed: u64,
}

impl SimConfig {
    /// The power-law link on `U([-5, 5])` with the same noise for data and fit.
    pub fn power_abs(m: usize, n: usize, noise: NoiseSpec, seed: u64) -> Self {
        Self {
            m,
            n,
            h_family: HFamily::PowerAbs,
            x_law: XLaw::Uniform { lo: -5.0, hi: 5.0 },
            noise_true: noise,
            noise_deconv: noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "m and n must be >= 2, got {} and {}",
                self.m, self.n
            )));
        }
        self.h_family.validate()?;
        self.x_law.validate()?;
        self.noise_true.validate()?;
        self.noise_deconv.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub dx: Dataset,
    pub dy: Dataset,
    /// `(x, h(x))` on a dense grid over the support.
    pub truth: Vec<(f64, f64)>,
}

/// Draws `m` explanatory values and `n` independent responses `h(X') + e`,
/// each response with its own fresh `X'`. X, X' and the noise come from
/// separate random streams.
pub fn simulate(config: &SimConfig) -> Result<SimData> {
    config.validate()?;
    let mut rx = stream_rng(config.seed, Stream::X);
    let mut ry = stream_rng(config.seed, Stream::Y);
    let mut re = stream_rng(config.seed, Stream::Noise);
    let x: Vec<f64> = (0..config.m).map(|_| config.x_law.draw(&mut rx)).collect();
    let y: Vec<f64> = (0..config.n)
        .map(|_| {
            let x_prime = config.x_law.draw(&mut ry);
            config.h_family.eval(x_prime) + config.noise_true.draw(&mut re)
        })
        .collect();
    let (lo, hi) = config.x_law.support();
    let step = (hi - lo) / (TRUTH_POINTS - 1) as f64;
    let truth = (0..TRUTH_POINTS)
        .map(|i| {
            let x = lo + i as f64 * step;
            (x, config.h_family.eval(x))
        })
        .collect();
    Ok(SimData {
        dx: Dataset::plain(x)?,
        dy: Dataset::plain(y)?,
        truth,
    })
}

/// Uniform grid over the central part of the support.
pub fn mse_grid(x_law: &XLaw) -> Vec<f64> {
    let (lo, hi) = x_law.support();
    let margin = 0.5 * (1.0 - MSE_GRID_COVERAGE) * (hi - lo);
    let (a, b) = (lo + margin, hi - margin);
    (0..MSE_GRID_POINTS)
        .map(|i| a + (b - a) * i as f64 / (MSE_GRID_POINTS - 1) as f64)
        .collect()
}

/// Mean squared deviation between the estimate and the true link on [`mse_grid`].
pub fn grid_mse(estimate: &LinkEstimate, h: &HFamily, x_law: &XLaw) -> f64 {
    let grid = mse_grid(x_law);
    grid.iter()
        .map(|&x| (estimate.eval(x) - h.eval(x)).powi(2))
        .sum::<f64>()
        / grid.len() as f64
}

/// Simulates and fits with the configured deconvolution noise.
pub fn fit_simulated(config: &SimConfig, options: &FitOptions) -> Result<(SimData, LinkEstimate)> {
    let data = simulate(config)?;
    let est = fit_group(
        GroupKey::default(),
        data.dx.values(),
        data.dy.values(),
        &config.noise_deconv,
        options,
    )?;
    Ok((data, est))
}

/// Median and interquartile range of a set of per-repetition values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub iqr: f64,
    pub values: Vec<f64>,
    pub failures: Vec<String>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl Summary {
    pub fn from_results(results: Vec<std::result::Result<f64, String>>) -> Self {
        let mut values = Vec::new();
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(v) => values.push(v),
                Err(e) => failures.push(e),
            }
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let (median, iqr) = if sorted.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                quantile_sorted(&sorted, 0.5),
                quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
            )
        };
        Self {
            median,
            iqr,
            values,
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub m: usize,
    pub n: usize,
    pub noise: NoiseSpec,
    pub repetitions: usize,
    pub summary: Summary,
}

/// Grid-MSE over every `(size, noise)` cell, `repetitions` seeded runs each.
///
/// Cell `c`, repetition `r` uses seed `derive_seed(seed, [c, r])`; output
/// order follows `sizes` then `noises`.
pub fn run_grid_experiment(
    sizes: &[(usize, usize)],
    noises: &[NoiseSpec],
    h_family: &HFamily,
    x_law: &XLaw,
    repetitions: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<Vec<CellSummary>> {
    if repetitions == 0 {
        return Err(Error::InvalidParameter("repetitions must be >= 1".into()));
    }
    let cells: Vec<(usize, (usize, usize), NoiseSpec)> = sizes
        .iter()
        .flat_map(|&s| noises.iter().map(move |&n| (s, n)))
        .enumerate()
        .map(|(i, (s, n))| (i, s, n))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..repetitions).map(move |r| (c, r)))
        .collect();
    let results: Vec<std::result::Result<f64, String>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (_, (m, n), noise) = cells[c];
            let config = SimConfig {
                m,
                n,
                h_family: h_family.clone(),
                x_law: *x_law,
                noise_true: noise,
                noise_deconv: noise,
                seed: derive_seed(seed, &[c as u64, r as u64]),
            };
            fit_simulated(&config, options)
                .map(|(_, e)| grid_mse(&e, h_family, x_law))
                .map_err(|e| format!("repetition {r}: {e}"))
        })
        .collect();
    let mut chunks = results.into_iter();
    Ok(cells
        .into_iter()
        .map(|(_, (m, n), noise)| CellSummary {
            m,
            n,
            noise,
            repetitions,
            summary: Summary::from_results(chunks.by_ref().take(repetitions).collect()),
        })
        .collect())
}

/// Correct versus assumed-noise deconvolution on identical data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecReport {
    pub noise_true: NoiseSpec,
    pub noise_deconv: NoiseSpec,
    pub correct: Summary,
    pub wrong: Summary,
    /// Whether every fit in the wrong-noise column was monotone and finite.
    pub wrong_fits_valid: bool,
}

pub fn run_misspecified(
    config: &SimConfig,
    repetitions: usize,
    options: &FitOptions,
) -> Result<MisspecReport> {
    config.validate()?;
    if repetitions == 0 {
        return Err(Error::InvalidParameter("repetitions must be >= 1".into()));
    }
    type Run = (
        std::result::Result<f64, String>,
        std::result::Result<f64, String>,
        bool,
    );
    let runs: Vec<Run> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(config.seed, &[r as u64]);
            let mut correct_cfg = config.clone();
            correct_cfg.seed = seed;
            correct_cfg.noise_deconv = config.noise_true;
            let mut wrong_cfg = correct_cfg.clone();
            wrong_cfg.noise_deconv = config.noise_deconv;
            let score = |cfg: &SimConfig| {
                fit_simulated(cfg, options)
                    .map(|(_, e)| e)
                    .map_err(|e| format!("repetition {r}: {e}"))
            };
            let c = score(&correct_cfg);
            let w = score(&wrong_cfg);
            let valid = match &w {
                Ok(e) => {
                    e.h_hat.iter().all(|v| v.is_finite())
                        && e.h_hat.windows(2).all(|p| p[0] <= p[1])
                }
                Err(_) => false,
            };
            let mse = |r: std::result::Result<LinkEstimate, String>| {
                r.map(|e| grid_mse(&e, &config.h_family, &config.x_law))
            };
            (mse(c), mse(w), valid)
        })
        .collect();
    let wrong_fits_valid = runs.iter().all(|r| r.2);
    let (correct, wrong): (Vec<_>, Vec<_>) = runs.into_iter().map(|(c, w, _)| (c, w)).unzip();
    Ok(MisspecReport {
        noise_true: config.noise_true,
        noise_deconv: config.noise_deconv,
        correct: Summary::from_results(correct),
        wrong: Summary::from_results(wrong),
        wrong_fits_valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    /// Square root of `mse`.
    pub risk: f64,
    pub n_holdout: usize,
}

/// Mean squared vertical deviation of held-out points from the estimate.
pub fn evaluate(estimate: &LinkEstimate, holdout: &[(f64, f64)]) -> Result<EvalReport> {
    evaluate_curve(&estimate.u_grid, &estimate.h_hat, holdout)
}

/// [`evaluate`] for a curve given as abscissae and values.
pub fn evaluate_curve(u: &[f64], h: &[f64], holdout: &[(f64, f64)]) -> Result<EvalReport> {
    if holdout.is_empty() {
        return Err(Error::EmptySample);
    }
    if u.is_empty() || u.len() != h.len() {
        return Err(Error::InvalidParameter(
            "curve must be non-empty and aligned".into(),
        ));
    }
    let mse = holdout
        .iter()
        .map(|&(x, y)| (y - interpolate(u, h, x)).powi(2))
        .sum::<f64>()
        / holdout.len() as f64;
    Ok(EvalReport {
        mse,
        risk: mse.sqrt(),
        n_holdout: holdout.len(),
    })
}
