//! Separable model: remove the context effect from both datasets by
//! regression, then fit the link on the residuals with no context.
//!
//! The Y residuals use the Y dataset's own context, `Y - h2(Z(2))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::NoiseSpec;
use crate::error::{Error, Result};
use crate::linkfit::{fit_group, FitOptions, LinkEstimate};
use crate::matching::{Dataset, GroupKey};

/// Something that maps a numeric context row to a fitted value.
pub trait Predictor {
    fn predict(&self, row: &[f64]) -> f64;
}

/// A regression method for the context effect.
pub trait Regressor: Sync {
    type Model: Predictor + Send;
    fn fit(&self, values: &[f64], context: &[Vec<f64>]) -> Result<Self::Model>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl Predictor for LinearModel {
    fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, z)| b * z)
                .sum::<f64>()
    }
}

/// Ordinary least squares with intercept.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ols;

impl Regressor for Ols {
    type Model = LinearModel;

    fn fit(&self, values: &[f64], context: &[Vec<f64>]) -> Result<LinearModel> {
        fit_linear(values, context)
    }
}

const RANK_TOL: f64 = 1e-10;

pub fn fit_linear(values: &[f64], context: &[Vec<f64>]) -> Result<LinearModel> {
    let rows = values.len();
    if rows == 0 {
        return Err(Error::EmptySample);
    }
    if context.len() != rows {
        return Err(Error::SchemaMismatch(format!(
            "{rows} values but {} context rows",
            context.len()
        )));
    }
    let d = context[0].len();
    if context.iter().any(|r| r.len() != d) {
        return Err(Error::SchemaMismatch("ragged context rows".into()));
    }
    if rows < d + 1 {
        return Err(Error::InvalidParameter(format!(
            "{rows} rows cannot identify {} parameters",
            d + 1
        )));
    }
    // center the columns so the conditioning check is scale-aware
    let mean_y = values.iter().sum::<f64>() / rows as f64;
    let means: Vec<f64> = (0..d)
        .map(|j| context.iter().map(|r| r[j]).sum::<f64>() / rows as f64)
        .collect();
    if d == 0 {
        return Ok(LinearModel {
            intercept: mean_y,
            coefficients: Vec::new(),
        });
    }
    let scales: Vec<f64> = (0..d)
        .map(|j| {
            context
                .iter()
                .map(|r| (r[j] - means[j]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::CollinearContext);
    }
    let design = DMatrix::from_fn(rows, d, |i, j| (context[i][j] - means[j]) / scales[j]);
    let target = DVector::from_iterator(rows, values.iter().map(|v| v - mean_y));
    let svd = design.svd(true, true);
    let (smin, smax) = svd
        .singular_values
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
    if smin <= RANK_TOL * smax {
        return Err(Error::CollinearContext);
    }
    let beta = svd
        .solve(&target, RANK_TOL * smax)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let coefficients: Vec<f64> = beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let intercept = mean_y
        - coefficients
            .iter()
            .zip(&means)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    Ok(LinearModel {
        intercept,
        coefficients,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPair {
    pub x_resid: Vec<f64>,
    pub y_resid: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SepFit<M> {
    pub estimate: LinkEstimate,
    pub model_x: M,
    pub model_y: M,
    pub residuals: ResidualPair,
}

fn residuals<M: Predictor>(values: &[f64], context: &[Vec<f64>], model: &M) -> Vec<f64> {
    values
        .iter()
        .zip(context)
        .map(|(v, z)| v - model.predict(z))
        .collect()
}

/// Residualizes with `regressor` and fits the context-free link on the residuals.
pub fn match_merge_sep_with<R: Regressor>(
    dx: &Dataset,
    dy: &Dataset,
    noise: &NoiseSpec,
    options: &FitOptions,
    regressor: &R,
) -> Result<SepFit<R::Model>> {
    if dx.dim() != dy.dim() {
        return Err(Error::SchemaMismatch(format!(
            "context dimensions differ: {} vs {}",
            dx.dim(),
            dy.dim()
        )));
    }
    let zx = dx.numeric_context()?;
    let zy = dy.numeric_context()?;
    let (model_x, model_y) = rayon::join(
        || regressor.fit(dx.values(), &zx),
        || regressor.fit(dy.values(), &zy),
    );
    let (model_x, model_y) = (model_x?, model_y?);
    let x_resid = residuals(dx.values(), &zx, &model_x);
    let y_resid = residuals(dy.values(), &zy, &model_y);
    let estimate = fit_group(GroupKey::default(), &x_resid, &y_resid, noise, options)?;
    Ok(SepFit {
        estimate,
        model_x,
        model_y,
        residuals: ResidualPair { x_resid, y_resid },
    })
}

pub fn match_merge_sep(
    dx: &Dataset,
    dy: &Dataset,
    noise: &NoiseSpec,
    options: &FitOptions,
) -> Result<SepFit<LinearModel>> {
    match_merge_sep_with(dx, dy, noise, options, &Ols)
}
