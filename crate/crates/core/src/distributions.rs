//! Step CDFs, their pseudo-inverses, and the parametric noise families.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::rng;

/// Where a [`StepCdf`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfKind {
    Empirical,
    Deconvolved,
}

/// A right-continuous, non-decreasing step function supported on a finite grid.
///
/// The value at `x` is the value at the last grid point `<= x`, and zero left of
/// the first grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCdf {
    grid: Vec<f64>,
    values: Vec<f64>,
    kind: CdfKind,
}

impl StepCdf {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, kind: CdfKind) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidCdf("empty grid".into()));
        }
        if grid.len() != values.len() {
            return Err(Error::InvalidCdf(format!(
                "{} grid points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidCdf("non-finite grid point".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCdf("grid not strictly increasing".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidCdf("value outside [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidCdf("values decrease".into()));
        }
        if kind == CdfKind::Empirical && *values.last().unwrap() != 1.0 {
            return Err(Error::InvalidCdf("empirical cdf must end at 1".into()));
        }
        Ok(Self { grid, values, kind })
    }

    /// The classic estimator `x -> #{i : X_i <= x} / m`. Ties collapse into a
    /// single grid point carrying a jump of `k/m`.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len() as f64;
        let mut grid = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for (i, &x) in sorted.iter().enumerate() {
            let level = (i + 1) as f64 / m;
            if grid.last() == Some(&x) {
                *values.last_mut().unwrap() = level;
            } else {
                grid.push(x);
                values.push(level);
            }
        }
        Ok(Self {
            grid,
            values,
            kind: CdfKind::Empirical,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> CdfKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.grid.partition_point(|&g| g <= x);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1]
        }
    }

    /// Generalized inverse `inf{x on grid : F(x) >= p}`, clamped to the grid
    /// endpoints.
    pub fn pseudo_inverse(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::QuantileOutOfRange(p));
        }
        Ok(self.quantile_clamped(p))
    }

    /// As [`pseudo_inverse`](Self::pseudo_inverse) with `p` clamped into `[0, 1]` first.
    pub fn quantile_clamped(&self, p: f64) -> f64 {
        let p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        let idx = self.values.partition_point(|&v| v < p);
        self.grid[idx.min(self.grid.len() - 1)]
    }

    /// Sup-norm distance to another CDF, evaluated on the union of both grids.
    pub fn kolmogorov_distance(&self, other: &StepCdf) -> f64 {
        self.grid
            .iter()
            .chain(other.grid.iter())
            .map(|&x| (self.eval(x) - other.eval(x)).abs())
            .fold(0.0, f64::max)
    }
}

pub fn empirical_cdf(samples: &[f64]) -> Result<StepCdf> {
    StepCdf::empirical(samples)
}

pub fn pseudo_inverse(cdf: &StepCdf, p: f64) -> Result<f64> {
    cdf.pseudo_inverse(p)
}

/// Pointwise ECDF error bound holding with probability `1 - delta`:
/// `sqrt(log(2/delta)/m) + 16 log(2/delta)/m`.
pub fn phi_bound(delta: f64, m: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    let l = (2.0 / delta).ln();
    let m = m as f64;
    Ok((l / m).sqrt() + 16.0 * l / m)
}

/// Confidence level, sample count and the two error radii of a confidence bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub delta: f64,
    pub m: usize,
    pub psi: f64,
    pub phi: f64,
}

impl BoundParams {
    pub fn new(delta: f64, m: usize, psi: f64) -> Result<Self> {
        if !(psi >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "psi must be >= 0, got {psi}"
            )));
        }
        let phi = phi_bound(delta, m)?;
        Ok(Self { delta, m, psi, phi })
    }

    pub fn radius(&self) -> f64 {
        self.psi + self.phi
    }
}

/// Additive, zero-mean noise law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseSpec {
    Dirac,
    Gaussian {
        sigma: f64,
    },
    /// Uniform on `[-half_range, half_range]`.
    Uniform {
        half_range: f64,
    },
    /// `scale * T` with `T` Student-t distributed with `nu` degrees of freedom.
    ScaledStudent {
        scale: f64,
        nu: f64,
    },
}

const STUDENT_CF_TOL: f64 = 1e-8;

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParameter(format!(
                "{what} = {v} out of range"
            )))
        };
        match *self {
            NoiseSpec::Dirac => Ok(()),
            NoiseSpec::Gaussian { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                bad("sigma", sigma)
            }
            NoiseSpec::Uniform { half_range } if !(half_range.is_finite() && half_range >= 0.0) => {
                bad("half_range", half_range)
            }
            NoiseSpec::ScaledStudent { scale, .. } if !(scale.is_finite() && scale >= 0.0) => {
                bad("scale", scale)
            }
            NoiseSpec::ScaledStudent { nu, .. } if !(nu.is_finite() && nu > 0.0) => bad("nu", nu),
            _ => Ok(()),
        }
    }

    pub fn is_dirac(&self) -> bool {
        match *self {
            NoiseSpec::Dirac => true,
            NoiseSpec::Gaussian { sigma } => sigma == 0.0,
            NoiseSpec::Uniform { half_range } => half_range == 0.0,
            NoiseSpec::ScaledStudent { scale, .. } => scale == 0.0,
        }
    }

    /// A length scale for the noise: the standard deviation where finite,
    /// otherwise three scale units.
    pub fn spread(&self) -> f64 {
        match *self {
            NoiseSpec::Dirac => 0.0,
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::Uniform { half_range } => half_range / 3f64.sqrt(),
            NoiseSpec::ScaledStudent { scale, nu } if nu > 2.0 => scale * (nu / (nu - 2.0)).sqrt(),
            NoiseSpec::ScaledStudent { scale, .. } => 3.0 * scale,
        }
    }

    /// Characteristic function `E[exp(i t e)]`. All families are symmetric so
    /// the imaginary part is zero.
    pub fn char_fn(&self, t: f64) -> Result<Complex64> {
        self.validate()?;
        let re = match *self {
            NoiseSpec::Dirac => 1.0,
            NoiseSpec::Gaussian { sigma } => (-0.5 * sigma * sigma * t * t).exp(),
            NoiseSpec::Uniform { half_range } => {
                let x = half_range * t;
                if x == 0.0 {
                    1.0
                } else {
                    x.sin() / x
                }
            }
            NoiseSpec::ScaledStudent { scale, nu } => student_char_fn(scale * t, nu)?,
        };
        Ok(Complex64::new(re, 0.0))
    }

    /// Draws one value.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Dirac => 0.0,
            NoiseSpec::Gaussian { sigma } => {
                sigma * Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
            }
            NoiseSpec::Uniform { half_range } => {
                if half_range == 0.0 {
                    0.0
                } else {
                    rng.random_range(-half_range..=half_range)
                }
            }
            NoiseSpec::ScaledStudent { scale, nu } => {
                scale * StudentT::new(nu).expect("validated nu").sample(rng)
            }
        }
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = rng::stream_rng(seed, rng::Stream::Noise);
        Ok((0..n).map(|_| self.draw(&mut rng)).collect())
    }
}

pub fn char_fn(noise: &NoiseSpec, t: f64) -> Result<Complex64> {
    noise.char_fn(t)
}

pub fn sample_noise(noise: &NoiseSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    noise.sample(n, seed)
}

/// Characteristic function of a standard Student-t with `nu` degrees of freedom.
///
/// Uses the Gaussian scale-mixture form `T = Z sqrt(nu / V)`, `V ~ chi2(nu)`:
/// `phi(t) = E[exp(-nu t^2 / (2V))]`. With `V = 2W`, `W ~ Gamma(nu/2)`, and
/// `W = exp(y)` the integrand becomes smooth and non-oscillatory on the real
/// line. Numerator and normalizer are integrated the same way so `phi(0) = 1`
/// holds exactly.
fn student_char_fn(t: f64, nu: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(1.0);
    }
    let k = 0.5 * nu;
    let c = 0.25 * nu * t * t;
    let log_peak = k * k.ln() - k;
    let lo = k.ln().min(0.0) - 10.0 - 40.0 / k;
    let hi = (2.0 * k + 60.0).ln();
    let weight = |y: f64| (k * y - y.exp() - log_peak).exp();
    let norm = quad::integrate(weight, lo, hi, STUDENT_CF_TOL * 1e-2)?;
    let num = quad::integrate(
        |y| weight(y) * (-c * (-y).exp()).exp(),
        lo,
        hi,
        STUDENT_CF_TOL * 1e-2,
    )
    .map_err(|e| Error::Quadrature(format!("student cf at t={t}, nu={nu}: {e}")))?;
    Ok((num / norm).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const ALL: [NoiseSpec; 4] = [
        NoiseSpec::Dirac,
        NoiseSpec::Gaussian { sigma: 0.7 },
        NoiseSpec::Uniform { half_range: 0.5 },
        NoiseSpec::ScaledStudent {
            scale: 0.1,
            nu: 4.0,
        },
    ];

    #[test]
    fn ecdf_counting() {
        let f = empirical_cdf(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(f.eval(1.0), 1.0 / 3.0);
        assert_eq!(f.eval(2.5), 2.0 / 3.0);
        assert_eq!(f.eval(3.0), 1.0);
        assert_eq!(f.eval(0.999), 0.0);
    }

    #[test]
    fn ecdf_single_point() {
        let f = empirical_cdf(&[5.0]).unwrap();
        assert_eq!(f.eval(4.999), 0.0);
        assert_eq!(f.eval(5.0), 1.0);
        assert_eq!(f.eval(1e9), 1.0);
    }

    #[test]
    fn ecdf_ties_collapse() {
        let f = empirical_cdf(&[1.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!(f.grid(), &[1.0, 2.0]);
        assert_eq!(f.values(), &[0.25, 1.0]);
    }

    #[test]
    fn ecdf_errors() {
        assert_eq!(empirical_cdf(&[]), Err(Error::EmptySample));
        assert_eq!(empirical_cdf(&[1.0, f64::NAN]), Err(Error::NonFiniteSample));
        assert_eq!(empirical_cdf(&[f64::INFINITY]), Err(Error::NonFiniteSample));
    }

    #[test]
    fn ecdf_close_to_uniform_law() {
        for seed in 0..10u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..1000).map(|_| rng.random_range(-5.0..5.0)).collect();
            let f = empirical_cdf(&xs).unwrap();
            // sup is attained at a jump: check both one-sided limits
            let mut sup: f64 = 0.0;
            let mut prev = 0.0;
            for (&x, &v) in f.grid().iter().zip(f.values()) {
                let truth = (x + 5.0) / 10.0;
                sup = sup.max((v - truth).abs()).max((prev - truth).abs());
                prev = v;
            }
            assert!(sup < 0.1, "seed {seed}: {sup}");
        }
    }

    #[test]
    fn pseudo_inverse_examples() {
        let f = empirical_cdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(pseudo_inverse(&f, 0.5).unwrap(), 2.0);
        assert_eq!(pseudo_inverse(&f, 1.0).unwrap(), 3.0);
        assert_eq!(pseudo_inverse(&f, 0.0).unwrap(), 1.0);
        assert_eq!(pseudo_inverse(&f, 1.0 / 3.0).unwrap(), 1.0);
        assert!(matches!(
            pseudo_inverse(&f, 1.5),
            Err(Error::QuantileOutOfRange(_))
        ));
        assert!(pseudo_inverse(&f, -0.1).is_err());
        assert!(pseudo_inverse(&f, f64::NAN).is_err());
    }

    #[test]
    fn pseudo_inverse_clamps_above_max() {
        let f = StepCdf::new(vec![0.0, 1.0], vec![0.2, 0.8], CdfKind::Deconvolved).unwrap();
        assert_eq!(f.pseudo_inverse(0.9).unwrap(), 1.0);
        assert_eq!(f.pseudo_inverse(0.1).unwrap(), 0.0);
    }

    #[test]
    fn step_cdf_validation() {
        assert!(StepCdf::new(vec![0.0, 0.0], vec![0.5, 1.0], CdfKind::Deconvolved).is_err());
        assert!(StepCdf::new(vec![0.0, 1.0], vec![0.6, 0.5], CdfKind::Deconvolved).is_err());
        assert!(StepCdf::new(vec![0.0, 1.0], vec![0.5, 1.2], CdfKind::Deconvolved).is_err());
        assert!(StepCdf::new(vec![0.0, 1.0], vec![0.5, 0.9], CdfKind::Empirical).is_err());
        assert!(StepCdf::new(vec![0.0, f64::NAN], vec![0.5, 1.0], CdfKind::Deconvolved).is_err());
        assert!(StepCdf::new(vec![0.0, 1.0], vec![0.5, 0.9], CdfKind::Deconvolved).is_ok());
    }

    #[test]
    fn phi_bound_values() {
        let delta = 2.0 / std::f64::consts::E;
        assert!((phi_bound(delta, 100).unwrap() - 0.26).abs() < 1e-12);
        let seq: Vec<f64> = [1, 4, 10, 100, 1000, 100_000]
            .iter()
            .map(|&m| phi_bound(delta, m).unwrap())
            .collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
        assert!(phi_bound(0.05, 4).unwrap() < phi_bound(0.05, 1).unwrap());
        assert!(phi_bound(0.0, 10).is_err());
        assert!(phi_bound(1.0, 10).is_err());
        assert!(phi_bound(0.1, 0).is_err());
    }

    #[test]
    fn char_fn_examples() {
        for n in ALL {
            assert_eq!(n.char_fn(0.0).unwrap(), Complex64::new(1.0, 0.0));
        }
        let u = NoiseSpec::Uniform { half_range: 1.0 };
        assert!(u.char_fn(std::f64::consts::PI).unwrap().norm() < 1e-15);
        let g = NoiseSpec::Gaussian { sigma: 1.0 };
        assert!((g.char_fn(1.0).unwrap().re - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.char_fn(1.0).unwrap().re - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn student_cf_matches_closed_forms() {
        // nu = 1 is Cauchy; nu = 3 has the elementary form exp(-√3|t|)(1 + √3|t|)
        for &t in &[0.1, 0.5, 1.0, 2.5, 7.0] {
            let cauchy = student_char_fn(t, 1.0).unwrap();
            assert!((cauchy - (-t).exp()).abs() < 1e-8, "t={t}: {cauchy}");
            let s = 3f64.sqrt() * t;
            let nu3 = student_char_fn(t, 3.0).unwrap();
            assert!((nu3 - (-s).exp() * (1.0 + s)).abs() < 1e-8, "t={t}: {nu3}");
        }
    }

    #[test]
    fn student_cf_matches_cosine_quadrature() {
        // nu = 4 density: (3/8)(1 + x^2/4)^(-5/2)
        let density = |x: f64| 0.375 * (1.0 + 0.25 * x * x).powf(-2.5);
        for &t in &[0.3, 1.0, 2.0, 4.0] {
            let direct =
                2.0 * quad::integrate(|x| density(x) * (t * x).cos(), 0.0, 400.0, 1e-11).unwrap();
            let mixed = student_char_fn(t, 4.0).unwrap();
            assert!((direct - mixed).abs() < 1e-8, "t={t}: {direct} vs {mixed}");
        }
        let scaled = NoiseSpec::ScaledStudent {
            scale: 0.1,
            nu: 4.0,
        };
        assert!(
            (scaled.char_fn(10.0).unwrap().re - student_char_fn(1.0, 4.0).unwrap()).abs() < 1e-15
        );
    }

    #[test]
    fn sample_noise_examples() {
        assert_eq!(sample_noise(&NoiseSpec::Dirac, 5, 1).unwrap(), vec![0.0; 5]);
        let g = NoiseSpec::Gaussian { sigma: 1.0 };
        let xs = sample_noise(&g, 100_000, 42).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert_eq!(xs, sample_noise(&g, 100_000, 42).unwrap());
        assert!(sample_noise(&NoiseSpec::Gaussian { sigma: -1.0 }, 3, 1).is_err());
    }

    #[test]
    fn noise_means_are_zero() {
        for n in ALL {
            let xs = n.sample(200_000, 9).unwrap();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 5.0 * n.spread() / (xs.len() as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn uniform_draws_in_range() {
        let u = NoiseSpec::Uniform { half_range: 0.5 };
        assert!(u.sample(10_000, 3).unwrap().iter().all(|x| x.abs() <= 0.5));
    }

    fn confidence_set_holds(n: usize, seed: u64) {
        // uniform G on [0, 1]: G^{-1}(p) = clamp(p)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let g_hat = empirical_cdf(&xs).unwrap();
        let mut lambda: f64 = 0.0;
        let mut prev = 0.0;
        for (&x, &v) in g_hat.grid().iter().zip(g_hat.values()) {
            lambda = lambda.max((v - x).abs()).max((prev - x).abs());
            prev = v;
        }
        for i in 1..100 {
            let eps = i as f64 / 100.0;
            let q = g_hat.pseudo_inverse(eps).unwrap();
            assert!((eps - lambda).clamp(0.0, 1.0) <= q + 1e-12);
            assert!(q <= (eps + lambda).clamp(0.0, 1.0) + 1e-12);
        }
    }

    #[test]
    fn quantile_confidence_set() {
        for seed in 0..50 {
            confidence_set_holds(20 + seed as usize * 7, seed);
        }
    }

    proptest! {
        #[test]
        fn pseudo_inverse_galois(xs in prop::collection::vec(-100.0f64..100.0, 1..60)) {
            let f = empirical_cdf(&xs).unwrap();
            for &x in f.grid() {
                prop_assert!(f.pseudo_inverse(f.eval(x)).unwrap() <= x);
            }
        }

        #[test]
        fn pseudo_inverse_monotone(
            xs in prop::collection::vec(-100.0f64..100.0, 1..60),
            p in 0.0f64..=1.0,
            q in 0.0f64..=1.0,
        ) {
            let f = empirical_cdf(&xs).unwrap();
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(f.pseudo_inverse(lo).unwrap() <= f.pseudo_inverse(hi).unwrap());
        }

        #[test]
        fn char_fn_bounded_and_hermitian(t in -50.0f64..50.0, idx in 0usize..4) {
            let n = ALL[idx];
            let a = n.char_fn(t).unwrap();
            let b = n.char_fn(-t).unwrap();
            prop_assert!(a.norm() <= 1.0 + 1e-12);
            prop_assert!((a - b.conj()).norm() < 1e-12);
        }
    }
}
