use std::path::{Path, PathBuf};

use linkmerge::simlab::{HFamily, XLaw};
use linkmerge::{DeconvSettings, FitOptions, NoiseSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Prefix of the provenance line written at the top of every CSV output.
pub const CONFIG_LINE_PREFIX: &str = "# config: ";

/// Cross-noise robustness run of the `experiment` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisspecSpec {
    pub m: usize,
    pub n: usize,
    pub noise_true: NoiseSpec,
    pub noise_deconv: NoiseSpec,
}

impl Default for MisspecSpec {
    fn default() -> Self {
        Self {
            m: 1000,
            n: 1000,
            noise_true: NoiseSpec::Gaussian { sigma: 0.1 },
            noise_deconv: NoiseSpec::Uniform { half_range: 0.5 },
        }
    }
}

/// Every parameter of a run. Loaded from a file, then overridden by flags,
/// then echoed into each output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub tau: Option<f64>,
    pub delta: f64,
    pub psi: Option<f64>,
    pub smoothness: f64,
    pub x_points: usize,
    pub n_freq: Option<usize>,
    pub freq_max: Option<f64>,
    pub x_range: Option<(f64, f64)>,
    pub decreasing: bool,
    pub bands: bool,
    /// Numeric matching radius. Exact matching when unset.
    pub upsilon: Option<f64>,

    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub link: Option<PathBuf>,
    pub holdout: Option<PathBuf>,
    /// Group of the link file to evaluate when it holds several.
    pub group: Option<String>,

    pub m: usize,
    pub n: usize,
    pub n_holdout: usize,
    pub h_family: HFamily,
    pub x_law: XLaw,
    /// Noise assumed by the fit in `simulate`; defaults to `noise`.
    pub noise_deconv: Option<NoiseSpec>,

    pub sizes: Vec<(usize, usize)>,
    pub noises: Vec<NoiseSpec>,
    pub repetitions: usize,
    pub misspecified: Option<MisspecSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            command: String::new(),
            seed: 0,
            noise: NoiseSpec::Dirac,
            tau: None,
            delta: fit.delta,
            psi: None,
            smoothness: fit.smoothness,
            x_points: fit.deconv.x_points,
            n_freq: None,
            freq_max: None,
            x_range: None,
            decreasing: false,
            bands: true,
            upsilon: None,
            x: None,
            y: None,
            link: None,
            holdout: None,
            group: None,
            m: 1000,
            n: 1000,
            n_holdout: 1000,
            h_family: HFamily::PowerAbs,
            x_law: XLaw::Uniform { lo: -5.0, hi: 5.0 },
            noise_deconv: None,
            sizes: vec![(100, 100), (1000, 1000)],
            noises: vec![
                NoiseSpec::Gaussian { sigma: 0.1 },
                NoiseSpec::Gaussian { sigma: 1.0 },
                NoiseSpec::Uniform { half_range: 0.5 },
                NoiseSpec::ScaledStudent {
                    scale: 0.1,
                    nu: 4.0,
                },
            ],
            repetitions: 20,
            misspecified: None,
        }
    }
}

impl RunConfig {
    /// Reads a TOML or JSON config, or the provenance line of a previous output.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let bad = |e: &dyn std::fmt::Display| CliError::Input(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "toml") {
            return toml::from_str(&text).map_err(|e| bad(&e));
        }
        if let Some(line) = text
            .lines()
            .find_map(|l| l.strip_prefix(CONFIG_LINE_PREFIX))
        {
            return serde_json::from_str(line).map_err(|e| bad(&e));
        }
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
        if let Some(inner) = value.get_mut("config").filter(|c| c.is_object()) {
            value = inner.take();
        }
        serde_json::from_value(value).map_err(|e| bad(&e))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            deconv: DeconvSettings {
                tau: self.tau,
                freq_max: self.freq_max,
                n_freq: self.n_freq,
                x_points: self.x_points,
                x_range: self.x_range,
            },
            delta: self.delta,
            psi: self.psi,
            smoothness: self.smoothness,
            decreasing: self.decreasing,
            bands: self.bands,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.noise.validate()?;
        if let Some(n) = &self.noise_deconv {
            n.validate()?;
        }
        for n in &self.noises {
            n.validate()?;
        }
        self.h_family.validate()?;
        self.x_law.validate()?;
        let bad = |what: String| Err(CliError::Input(what));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must be in (0, 1), got {}", self.delta));
        }
        if self.tau.is_some_and(|t| !(t >= 0.0)) {
            return bad(format!("tau must be >= 0, got {:?}", self.tau));
        }
        if self.psi.is_some_and(|p| !(p >= 0.0)) {
            return bad(format!("psi must be >= 0, got {:?}", self.psi));
        }
        if self.upsilon.is_some_and(|u| !(u > 0.0)) {
            return bad(format!("upsilon must be > 0, got {:?}", self.upsilon));
        }
        if self.x_points < 2 {
            return bad(format!("x_points must be >= 2, got {}", self.x_points));
        }
        if self
            .n_freq
            .is_some_and(|n| n % 2 == 1 || n < 8 || n < self.x_points)
        {
            return bad(format!(
                "n_freq must be even, >= 8 and >= x_points, got {:?}",
                self.n_freq
            ));
        }
        if self.freq_max.is_some_and(|f| !(f > 0.0)) {
            return bad(format!("freq_max must be > 0, got {:?}", self.freq_max));
        }
        if let Some((lo, hi)) = self.x_range {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return bad(format!("x_range needs lo < hi, got ({lo}, {hi})"));
            }
        }
        if !(self.smoothness > 0.0) {
            return bad(format!("smoothness must be > 0, got {}", self.smoothness));
        }
        Ok(())
    }

    /// Single-line JSON used as the provenance echo.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Compact text form of a noise law for table cells.
pub fn noise_label(noise: &NoiseSpec) -> String {
    match *noise {
        NoiseSpec::Dirac => "dirac".into(),
        NoiseSpec::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
        NoiseSpec::Uniform { half_range } => format!("uniform(half_range={half_range})"),
        NoiseSpec::ScaledStudent { scale, nu } => format!("student(scale={scale};nu={nu})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_the_echo_line() {
        let c = RunConfig {
            command: "fit".into(),
            noise: NoiseSpec::ScaledStudent {
                scale: 0.1,
                nu: 4.0,
            },
            tau: Some(0.0),
            x_range: Some((-1.0, 2.5)),
            ..RunConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        std::fs::write(
            &p,
            format!("{CONFIG_LINE_PREFIX}{}\nvalue\n1\n", c.to_line()),
        )
        .unwrap();
        assert_eq!(RunConfig::load(&p).unwrap(), c);
    }

    #[test]
    fn toml_and_nested_json() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(
            &t,
            "seed = 7\ntau = 0.05\nnoise = { family = \"gaussian\", sigma = 0.3 }\n",
        )
        .unwrap();
        let c = RunConfig::load(&t).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.noise, NoiseSpec::Gaussian { sigma: 0.3 });
        assert_eq!(c.x_points, 512);

        let j = dir.path().join("summary.json");
        std::fs::write(&j, r#"{"config": {"seed": 3}, "fitted": []}"#).unwrap();
        assert_eq!(RunConfig::load(&j).unwrap().seed, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"sede": 3}"#).unwrap();
        assert!(RunConfig::load(&j).is_err());
    }
}
