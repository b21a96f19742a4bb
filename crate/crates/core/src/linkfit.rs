//! Per-group link estimation `h_Z = F_{h,Z}^{-1} o F_Z` with plug-in
//! confidence brackets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deconvolution::{deconvolve, psi_rate, DeconvSettings, SpectralStats};
use crate::distributions::{phi_bound, NoiseSpec, StepCdf};
use crate::error::{Error, Result};
use crate::matching::{GroupKey, GroupMap};

/// Uniform points added to the sample abscissae of every estimate.
pub const UNIFORM_U_POINTS: usize = 101;

/// Slack subtracted from quantile levels before inverting a deconvolved CDF.
/// Its steps carry FFT rounding of order 1e-15, so a level equal to a step
/// would otherwise skip to the next one. Distinct empirical levels differ by
/// at least `1/(m n)`, far above this for any realistic sample size.
pub const LEVEL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub deconv: DeconvSettings,
    pub delta: f64,
    /// Deconvolution error radius. When unset the indicative
    /// [`psi_rate`] is used.
    pub psi: Option<f64>,
    /// Smoothness exponent fed to [`psi_rate`].
    pub smoothness: f64,
    /// Fit a non-increasing link by negating Y before and the estimate after.
    pub decreasing: bool,
    pub bands: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            deconv: DeconvSettings::default(),
            delta: 0.05,
            psi: None,
            smoothness: 1.0,
            decreasing: false,
            bands: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n_z: usize,
    pub m: usize,
    pub n: usize,
    pub psi: f64,
    /// False when `psi` came from the indicative rate rather than the caller.
    pub psi_supplied: bool,
    pub phi: f64,
    pub delta: f64,
    pub tau: f64,
    pub spectral: SpectralStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkEstimate {
    pub group_key: GroupKey,
    pub u_grid: Vec<f64>,
    pub h_hat: Vec<f64>,
    pub band_lo: Option<Vec<f64>>,
    pub band_hi: Option<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
}

impl LinkEstimate {
    /// Linear interpolation of the estimate, constant beyond the grid ends.
    pub fn eval(&self, x: f64) -> f64 {
        interpolate(&self.u_grid, &self.h_hat, x)
    }
}

pub(crate) fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&g| g <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = (x - x0) / (x1 - x0);
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchMergeResult {
    pub estimates: Vec<LinkEstimate>,
    pub skipped: Vec<SkippedGroup>,
}

/// Sample abscissae merged with a uniform grid over their range.
pub fn u_grid_for(x: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = x.to_vec();
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi > lo {
        let step = (hi - lo) / (UNIFORM_U_POINTS - 1) as f64;
        u.extend((0..UNIFORM_U_POINTS).map(|i| {
            if i + 1 == UNIFORM_U_POINTS {
                hi
            } else {
                lo + i as f64 * step
            }
        }));
    }
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

/// Plug-in bracket `[F_h^{-1}(F_Z(u) - psi - phi), F_h^{-1}(F_Z(u) + psi + phi)]`
/// with the quantile levels clamped into `[0, 1]`.
pub fn band_from_bounds(
    f_z: &StepCdf,
    f_h: &StepCdf,
    u: f64,
    psi: f64,
    phi: f64,
) -> Result<(f64, f64)> {
    if !(psi >= 0.0 && phi >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "psi and phi must be >= 0, got {psi} and {phi}"
        )));
    }
    let level = f_z.eval(u);
    let r = psi + phi;
    Ok((
        f_h.quantile_clamped(level - r - LEVEL_TOL),
        f_h.quantile_clamped(level + r - LEVEL_TOL),
    ))
}

/// Fits one group: `x` from the explanatory dataset, `y` noisy responses.
pub fn fit_group(
    key: GroupKey,
    x: &[f64],
    y: &[f64],
    noise: &NoiseSpec,
    options: &FitOptions,
) -> Result<LinkEstimate> {
    let f_z = StepCdf::empirical(x)?;
    let flipped: Vec<f64>;
    let y = if options.decreasing {
        flipped = y.iter().map(|v| -v).collect();
        &flipped
    } else {
        y
    };
    let config = options.deconv.resolve(y, noise)?;
    let dec = deconvolve(y, noise, &config)?;
    let f_h = &dec.cdf;

    let n_z = x.len().min(y.len());
    let (psi, psi_supplied) = match options.psi {
        Some(p) if p >= 0.0 => (p, true),
        Some(p) => {
            return Err(Error::InvalidParameter(format!(
                "psi must be >= 0, got {p}"
            )))
        }
        None => (
            psi_rate(noise, n_z, options.delta, options.smoothness)?,
            false,
        ),
    };
    let phi = phi_bound(options.delta, x.len())?;

    let u_grid = u_grid_for(x);
    let mut h_hat: Vec<f64> = u_grid
        .iter()
        .map(|&u| f_h.quantile_clamped(f_z.eval(u) - LEVEL_TOL))
        .collect();
    let (mut band_lo, mut band_hi) = if options.bands {
        let (lo, hi): (Vec<f64>, Vec<f64>) = u_grid
            .iter()
            .map(|&u| band_from_bounds(&f_z, f_h, u, psi, phi))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };
    if options.decreasing {
        h_hat.iter_mut().for_each(|v| *v = -*v);
        if let (Some(lo), Some(hi)) = (band_lo.take(), band_hi.take()) {
            band_lo = Some(hi.into_iter().map(|v| -v).collect());
            band_hi = Some(lo.into_iter().map(|v| -v).collect());
        }
    }
    Ok(LinkEstimate {
        group_key: key,
        u_grid,
        h_hat,
        band_lo,
        band_hi,
        diagnostics: FitDiagnostics {
            n_z,
            m: x.len(),
            n: y.len(),
            psi,
            psi_supplied,
            phi,
            delta: options.delta,
            tau: config.tau,
            spectral: dec.stats,
        },
    })
}

/// Fits every group with `n_Z > 1`. Failures in one group are reported and do
/// not stop the others; results come back in group-key order.
pub fn match_merge(groups: &GroupMap, noise: &NoiseSpec, options: &FitOptions) -> MatchMergeResult {
    let outcomes: Vec<(GroupKey, Result<LinkEstimate>)> = groups
        .groups
        .par_iter()
        .map(|(key, g)| {
            let r = if g.n_z() <= 1 {
                Err(Error::InvalidParameter(format!("n_z = {} <= 1", g.n_z())))
            } else {
                fit_group(key.clone(), &g.x, &g.y, noise, options)
            };
            (key.clone(), r)
        })
        .collect();
    let mut out = MatchMergeResult::default();
    for (key, r) in outcomes {
        match r {
            Ok(e) => out.estimates.push(e),
            Err(e) => out.skipped.push(SkippedGroup {
                key: key.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    out
}

/// Hölder exponents and constants of `h_Z` (`alpha`, `l`) and of the quantile
/// function `F_Z^{-1}` (`beta`, `m`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderParams {
    pub alpha: f64,
    pub l: f64,
    pub beta: f64,
    pub m: f64,
}

impl HolderParams {
    pub fn new(alpha: f64, l: f64, beta: f64, m: f64) -> Result<Self> {
        for (name, e) in [("alpha", alpha), ("beta", beta)] {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {e}"
                )));
            }
        }
        for (name, c) in [("L", l), ("M", m)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {c}"
                )));
            }
        }
        Ok(Self { alpha, l, beta, m })
    }
}

/// `L M^alpha (psi + phi)^(alpha beta)`.
pub fn holder_error_bound(hp: &HolderParams, psi: f64, phi: f64) -> Result<f64> {
    if !(psi >= 0.0 && phi >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "psi and phi must be >= 0, got {psi} and {phi}"
        )));
    }
    Ok(hp.l * hp.m.powf(hp.alpha) * (psi + phi).powf(hp.alpha * hp.beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileIdentityReport {
    pub max_deviation: f64,
    /// Largest deviation over points where the CDF is strictly increasing.
    pub max_deviation_regular: f64,
    /// Largest increment of `h` between neighbouring enumeration points.
    pub cell_tolerance: f64,
    /// Points where the CDF is locally flat.
    pub flagged: Vec<f64>,
}

impl QuantileIdentityReport {
    pub fn within_cell(&self) -> bool {
        self.max_deviation_regular <= self.cell_tolerance * (1.0 + 1e-9)
    }
}

/// Test oracle for the identity `h(u) = F_h^{-1}(F(u))`.
///
/// `F` is the CDF of a law supported on `support`; the law of `h(X)` is built
/// by dense enumeration of `n_enum` points and its pseudo-inverse composed
/// with `F` at each point of `u_grid`.
pub fn quantile_identity_check<F, H>(
    cdf: F,
    support: (f64, f64),
    h: H,
    u_grid: &[f64],
    n_enum: usize,
) -> QuantileIdentityReport
where
    F: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    let (lo, hi) = support;
    let n_enum = n_enum.max(2);
    let step = (hi - lo) / (n_enum - 1) as f64;
    let xs: Vec<f64> = (0..n_enum)
        .map(|i| {
            if i + 1 == n_enum {
                hi
            } else {
                lo + i as f64 * step
            }
        })
        .collect();
    // atoms of h(X): (value, F at the atom's upper x)
    let mut atoms: Vec<(f64, f64)> = xs.iter().map(|&x| (h(x), cdf(x))).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut values: Vec<f64> = Vec::with_capacity(atoms.len());
    let mut levels: Vec<f64> = Vec::with_capacity(atoms.len());
    for (v, p) in atoms {
        if values.last() == Some(&v) {
            *levels.last_mut().unwrap() = p.max(*levels.last().unwrap());
        } else {
            let p = levels.last().map_or(p, |&l| p.max(l));
            values.push(v);
            levels.push(p);
        }
    }
    let quantile = |p: f64| {
        let i = levels.partition_point(|&l| l < p);
        values[i.min(values.len() - 1)]
    };
    let cell_tolerance = xs
        .windows(2)
        .map(|w| (h(w[1]) - h(w[0])).abs())
        .fold(0.0, f64::max);
    let mut report = QuantileIdentityReport {
        max_deviation: 0.0,
        max_deviation_regular: 0.0,
        cell_tolerance,
        flagged: Vec::new(),
    };
    for &u in u_grid {
        let dev = (quantile(cdf(u)) - h(u)).abs();
        report.max_deviation = report.max_deviation.max(dev);
        if cdf(u + step) - cdf(u - step) <= 0.0 {
            report.flagged.push(u);
        } else {
            report.max_deviation_regular = report.max_deviation_regular.max(dev);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::empirical_cdf;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| r.random_range(lo..hi)).collect()
    }

    fn dirac_fit(x: &[f64], y: &[f64]) -> LinkEstimate {
        fit_group(
            GroupKey::default(),
            x,
            y,
            &NoiseSpec::Dirac,
            &FitOptions::default(),
        )
        .unwrap()
    }

    fn sup_dev_identity(e: &LinkEstimate, lo: f64, hi: f64) -> f64 {
        e.u_grid
            .iter()
            .zip(&e.h_hat)
            .filter(|(u, _)| **u >= lo && **u <= hi)
            .map(|(u, h)| (u - h).abs())
            .fold(0.0, f64::max)
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    #[test]
    fn identity_recovery_dirac() {
        let devs: Vec<f64> = (0..20)
            .map(|s| {
                let x = uniform(500, 0.0, 1.0, 2 * s);
                let y = uniform(500, 0.0, 1.0, 2 * s + 1);
                sup_dev_identity(&dirac_fit(&x, &y), 0.05, 0.95)
            })
            .collect();
        assert!(median(devs.clone()) < 0.15, "{devs:?}");
    }

    #[test]
    fn doubling_link_known_noise() {
        // h(u) = 2u on U([-5, 5]). The two-sample KS statistic at n = 2000 has
        // median about 0.026; across an h-range of 20 that alone moves the
        // quantile map by about 0.5, so the sup error is held to twice that scale
        // and the RMS error to 0.35.
        let noise = NoiseSpec::Gaussian { sigma: 0.5 };
        let (sups, rmss): (Vec<f64>, Vec<f64>) = (0..20)
            .map(|s| {
                let x = uniform(2000, -5.0, 5.0, 10 + s);
                let x2 = uniform(2000, -5.0, 5.0, 100 + s);
                let eps = noise.sample(2000, 1000 + s).unwrap();
                let y: Vec<f64> = x2.iter().zip(&eps).map(|(x, e)| 2.0 * x + e).collect();
                let e =
                    fit_group(GroupKey::default(), &x, &y, &noise, &FitOptions::default()).unwrap();
                let errs: Vec<f64> = (0..=80)
                    .map(|i| -4.0 + 0.1 * i as f64)
                    .map(|u| e.eval(u) - 2.0 * u)
                    .collect();
                let sup = errs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                let rms = (errs.iter().map(|v| v * v).sum::<f64>() / errs.len() as f64).sqrt();
                (sup, rms)
            })
            .unzip();
        assert!(median(sups.clone()) < 1.0, "{sups:?}");
        assert!(median(rmss.clone()) < 0.35, "{rmss:?}");
    }

    #[test]
    fn u_grid_contains_samples_and_uniform_points() {
        let x = vec![0.3, 0.1, 0.9, 0.3];
        let u = u_grid_for(&x);
        assert!(u.windows(2).all(|w| w[0] < w[1]));
        assert!(u.contains(&0.3) && u.contains(&0.9) && u.contains(&0.1));
        assert!(u.len() >= UNIFORM_U_POINTS);
        assert_eq!(u_grid_for(&[2.0, 2.0]), vec![2.0]);
    }

    #[test]
    fn band_examples() {
        let f_z = empirical_cdf(&uniform(200, 0.0, 1.0, 1)).unwrap();
        let f_h = empirical_cdf(&uniform(200, 0.0, 1.0, 2)).unwrap();
        for &u in &[0.1, 0.5, 0.77] {
            let h = f_h.quantile_clamped(f_z.eval(u));
            assert_eq!(band_from_bounds(&f_z, &f_h, u, 0.0, 0.0).unwrap(), (h, h));
            let (lo, hi) = band_from_bounds(&f_z, &f_h, u, 0.6, 0.5).unwrap();
            assert_eq!(lo, f_h.grid()[0]);
            assert_eq!(hi, *f_h.grid().last().unwrap());
            let narrow = band_from_bounds(&f_z, &f_h, u, 0.05, 0.05).unwrap();
            let wide = band_from_bounds(&f_z, &f_h, u, 0.1, 0.1).unwrap();
            assert!(wide.0 <= narrow.0 && narrow.1 <= wide.1);
        }
        assert!(band_from_bounds(&f_z, &f_h, 0.5, -0.1, 0.0).is_err());
    }

    #[test]
    fn holder_examples() {
        let lin = HolderParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((holder_error_bound(&lin, 0.04, 0.06).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(holder_error_bound(&lin, 0.0, 0.0).unwrap(), 0.0);
        let hp = HolderParams::new(0.5, 2.0, 1.0, 3.0).unwrap();
        let v = holder_error_bound(&hp, 0.01, 0.03).unwrap();
        assert!((v - 2.0 * 3f64.sqrt() * 0.2).abs() < 1e-12);
        assert!((v - 0.6928).abs() < 1e-4);
        assert!(HolderParams::new(1.5, 1.0, 1.0, 1.0).is_err());
        assert!(HolderParams::new(0.5, 0.0, 1.0, 1.0).is_err());
        assert!(HolderParams::new(0.5, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn quantile_identity_uniform_identity() {
        let u: Vec<f64> = (0..=997).map(|i| i as f64 / 997.0).collect();
        let r = quantile_identity_check(|x| x.clamp(0.0, 1.0), (0.0, 1.0), |x| x, &u, 10_000);
        assert!(r.within_cell(), "{r:?}");
    }

    #[test]
    fn quantile_identity_power_abs() {
        let u: Vec<f64> = (0..=1993)
            .map(|i| -5.0 + 10.0 * i as f64 / 1993.0)
            .collect();
        let r = quantile_identity_check(
            |x| ((x + 5.0) / 10.0).clamp(0.0, 1.0),
            (-5.0, 5.0),
            |x| x * x.abs() / 4.0,
            &u,
            10_000,
        );
        assert!(r.within_cell(), "{r:?}");
        assert!(r.flagged.is_empty());
    }

    #[test]
    fn quantile_identity_flags_flat_cdf() {
        // mass on [0, 1] and [2, 3], flat in between
        let cdf = |x: f64| {
            if x < 1.0 {
                0.5 * x.max(0.0)
            } else if x < 2.0 {
                0.5
            } else {
                (0.5 + 0.5 * (x - 2.0)).min(1.0)
            }
        };
        let u = [0.5, 1.5, 2.5];
        let r = quantile_identity_check(cdf, (0.0, 3.0), |x| x, &u, 3001);
        assert_eq!(r.flagged, vec![1.5]);
        assert!(r.max_deviation > 0.4);
        assert!(r.within_cell());
    }

    #[test]
    fn skips_small_groups() {
        let mut groups = GroupMap::single(vec![1.0], vec![1.0, 2.0]);
        groups.groups.insert(
            GroupKey(vec![crate::matching::ContextValue::Categorical("b".into())]),
            crate::matching::Group {
                x: uniform(50, 0.0, 1.0, 1),
                y: uniform(50, 0.0, 1.0, 2),
            },
        );
        let r = match_merge(&groups, &NoiseSpec::Dirac, &FitOptions::default());
        assert_eq!(r.estimates.len(), 1);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].key, "*");
    }

    #[test]
    fn decreasing_flag() {
        let x = uniform(400, 0.0, 1.0, 5);
        let y: Vec<f64> = uniform(400, 0.0, 1.0, 6).iter().map(|v| -3.0 * v).collect();
        let opts = FitOptions {
            decreasing: true,
            ..Default::default()
        };
        let e = fit_group(GroupKey::default(), &x, &y, &NoiseSpec::Dirac, &opts).unwrap();
        assert!(e.h_hat.windows(2).all(|w| w[0] >= w[1]));
        let mid = e.eval(0.5);
        assert!((mid + 1.5).abs() < 0.3, "{mid}");
        let (lo, hi) = (e.band_lo.unwrap(), e.band_hi.unwrap());
        for i in 0..e.h_hat.len() {
            assert!(lo[i] <= e.h_hat[i] && e.h_hat[i] <= hi[i]);
        }
    }

    #[test]
    fn coverage_identity_model() {
        let runs = 60u64;
        let mut covered = 0;
        for s in 0..runs {
            let x = uniform(300, 0.0, 1.0, 7000 + 2 * s);
            let y = uniform(300, 0.0, 1.0, 7001 + 2 * s);
            let f_z = empirical_cdf(&x).unwrap();
            let f_h = empirical_cdf(&y).unwrap();
            let phi = phi_bound(0.05, 300).unwrap();
            let (lo, hi) = band_from_bounds(&f_z, &f_h, 0.5, 0.0, phi).unwrap();
            covered += (lo <= 0.5 && 0.5 <= hi) as usize;
        }
        assert!(covered as f64 / runs as f64 >= 0.9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fits_are_monotone_and_banded(
            x in prop::collection::vec(-10.0f64..10.0, 2..60),
            y in prop::collection::vec(-10.0f64..10.0, 2..60),
            sigma in 0.0f64..1.0,
        ) {
            let noise = NoiseSpec::Gaussian { sigma };
            let e = fit_group(GroupKey::default(), &x, &y, &noise, &FitOptions::default()).unwrap();
            prop_assert!(e.h_hat.windows(2).all(|w| w[0] <= w[1]));
            let (lo, hi) = (e.band_lo.as_ref().unwrap(), e.band_hi.as_ref().unwrap());
            for i in 0..e.h_hat.len() {
                prop_assert!(lo[i] <= e.h_hat[i] && e.h_hat[i] <= hi[i]);
            }
        }

        #[test]
        fn shift_and_scale_equivariance(
            x in prop::collection::vec(-10.0f64..10.0, 2..50),
            y in prop::collection::vec(-10.0f64..10.0, 2..50),
            c in -100.0f64..100.0,
            s in 0.1f64..10.0,
        ) {
            let base = dirac_fit(&x, &y);
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let scaled: Vec<f64> = y.iter().map(|v| v * s).collect();
            let a = dirac_fit(&x, &shifted);
            let b = dirac_fit(&x, &scaled);
            for i in 0..base.h_hat.len() {
                prop_assert!((a.h_hat[i] - base.h_hat[i] - c).abs() < 1e-9 * (1.0 + c.abs()));
                prop_assert!((b.h_hat[i] - s * base.h_hat[i]).abs() < 1e-9 * (1.0 + s));
            }
        }

        #[test]
        fn y_order_is_irrelevant(
            x in prop::collection::vec(-10.0f64..10.0, 2..50),
            y in prop::collection::vec(-10.0f64..10.0, 2..50),
            sigma in 0.0f64..1.0,
        ) {
            let noise = NoiseSpec::Gaussian { sigma };
            let opts = FitOptions::default();
            let a = fit_group(GroupKey::default(), &x, &y, &noise, &opts).unwrap();
            let mut rev = y.clone();
            rev.reverse();
            let b = fit_group(GroupKey::default(), &x, &rev, &noise, &opts).unwrap();
            prop_assert_eq!(a.h_hat, b.h_hat);
        }
    }
}
