use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use linkmerge::linkfit::{FitDiagnostics, SkippedGroup};
use linkmerge::matching::DropReport;
use linkmerge::rng::{stream_rng, Stream};
use linkmerge::simlab::{evaluate_curve, Summary};
use linkmerge::{
    group_exact, group_near, match_merge, match_merge_sep, run_grid_experiment, run_misspecified,
    simulate, ColumnKind, EvalReport, GroupKey, LinearModel, LinkEstimate, SimConfig,
};
use serde::Serialize;

use crate::config::{noise_label, RunConfig};
use crate::error::CliError;
use crate::io::{
    csv_text, fmt, json_text, read_dataset, read_link, read_pairs, write_atomic, Table,
};

const LINK_HEADER: [&str; 5] = ["group_key", "u", "h_hat", "band_lo", "band_hi"];

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Input(format!("missing input: {flag}")))
}

fn read_pair(cfg: &RunConfig) -> Result<(Table, Table), CliError> {
    let tx = read_dataset(required(&cfg.x, "--x")?)?;
    let ty = read_dataset(required(&cfg.y, "--y")?)?;
    if tx.context_names != ty.context_names {
        return Err(CliError::Input(format!(
            "context columns differ: {:?} vs {:?}",
            tx.context_names, ty.context_names
        )));
    }
    Ok((tx, ty))
}

fn link_rows(estimates: &[LinkEstimate]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for e in estimates {
        let key = e.group_key.to_string();
        for (i, (&u, &h)) in e.u_grid.iter().zip(&e.h_hat).enumerate() {
            let band = |b: &Option<Vec<f64>>| b.as_ref().map_or(String::new(), |b| fmt(b[i]));
            rows.push(vec![
                key.clone(),
                fmt(u),
                fmt(h),
                band(&e.band_lo),
                band(&e.band_hi),
            ]);
        }
    }
    rows
}

#[derive(Serialize)]
struct GroupDiagnostics<'a> {
    group_key: String,
    #[serde(flatten)]
    diagnostics: &'a FitDiagnostics,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    config: &'a RunConfig,
    fitted: Vec<GroupDiagnostics<'a>>,
    skipped: &'a [SkippedGroup],
    failed: &'a [SkippedGroup],
    dropped: &'a DropReport,
}

pub fn fit(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (tx, ty) = read_pair(cfg)?;
    let groups = match cfg.upsilon {
        None => group_exact(&tx.dataset, &ty.dataset)?,
        Some(upsilon) => {
            let centers: BTreeSet<GroupKey> = tx
                .dataset
                .context()
                .iter()
                .map(|c| GroupKey(c.clone()))
                .collect();
            let centers: Vec<_> = centers.into_iter().map(|k| k.0).collect();
            group_near(&tx.dataset, &ty.dataset, &centers, upsilon)?
        }
    };
    if groups.is_empty() {
        return Err(CliError::NoCommonContext(format!(
            "x-only keys {:?}, y-only keys {:?}",
            groups.dropped.x_only_keys, groups.dropped.y_only_keys
        )));
    }
    let result = match_merge(&groups, &cfg.noise, &cfg.fit_options());
    let too_small: BTreeSet<String> = groups
        .groups
        .iter()
        .filter(|(_, g)| g.n_z() <= 1)
        .map(|(k, _)| k.to_string())
        .collect();
    let (skipped, failed): (Vec<_>, Vec<_>) = result
        .skipped
        .iter()
        .cloned()
        .partition(|s| too_small.contains(&s.key));

    let line = cfg.to_line();
    let link_path = out_dir.join("link.csv");
    write_atomic(
        &link_path,
        &csv_text(&line, &LINK_HEADER, link_rows(&result.estimates))?,
    )?;
    let summary = FitSummary {
        config: cfg,
        fitted: result
            .estimates
            .iter()
            .map(|e| GroupDiagnostics {
                group_key: e.group_key.to_string(),
                diagnostics: &e.diagnostics,
            })
            .collect(),
        skipped: &skipped,
        failed: &failed,
        dropped: &groups.dropped,
    };
    let summary_path = out_dir.join("summary.json");
    write_atomic(&summary_path, &json_text(&summary))?;
    if !failed.is_empty() {
        return Err(CliError::Numeric {
            group: failed
                .iter()
                .map(|f| f.key.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            reason: failed
                .iter()
                .map(|f| f.reason.as_str())
                .collect::<Vec<_>>()
                .join("; "),
        });
    }
    Ok(vec![link_path, summary_path])
}

#[derive(Serialize)]
struct SepSummary<'a> {
    config: &'a RunConfig,
    context_columns: &'a [String],
    model_x: &'a LinearModel,
    model_y: &'a LinearModel,
    diagnostics: &'a FitDiagnostics,
}

pub fn fit_sep(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (tx, ty) = read_pair(cfg)?;
    if tx.dataset.schema().contains(&ColumnKind::Categorical) {
        return Err(CliError::Input(
            "fit-sep needs numeric context columns only".into(),
        ));
    }
    let fit = match_merge_sep(&tx.dataset, &ty.dataset, &cfg.noise, &cfg.fit_options())?;
    let line = cfg.to_line();
    let link_path = out_dir.join("link.csv");
    write_atomic(
        &link_path,
        &csv_text(
            &line,
            &LINK_HEADER,
            link_rows(std::slice::from_ref(&fit.estimate)),
        )?,
    )?;
    let summary = SepSummary {
        config: cfg,
        context_columns: &tx.context_names,
        model_x: &fit.model_x,
        model_y: &fit.model_y,
        diagnostics: &fit.estimate.diagnostics,
    };
    let summary_path = out_dir.join("summary.json");
    write_atomic(&summary_path, &json_text(&summary))?;
    Ok(vec![link_path, summary_path])
}

fn sim_config(cfg: &RunConfig) -> SimConfig {
    SimConfig {
        m: cfg.m,
        n: cfg.n,
        h_family: cfg.h_family.clone(),
        x_law: cfg.x_law,
        noise_true: cfg.noise,
        noise_deconv: cfg.noise_deconv.unwrap_or(cfg.noise),
        seed: cfg.seed,
    }
}

pub fn simulate_cmd(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sc = sim_config(cfg);
    let data = simulate(&sc)?;
    let line = cfg.to_line();
    let values = |v: &[f64]| v.iter().map(|&x| vec![fmt(x)]).collect::<Vec<_>>();
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), CliError> {
        let p = out_dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    put(
        "x.csv",
        csv_text(&line, &["value"], values(data.dx.values()))?,
    )?;
    put(
        "y.csv",
        csv_text(&line, &["value"], values(data.dy.values()))?,
    )?;
    put(
        "truth.csv",
        csv_text(
            &line,
            &["x", "h"],
            data.truth.iter().map(|&(x, h)| vec![fmt(x), fmt(h)]),
        )?,
    )?;
    if cfg.n_holdout > 0 {
        let mut rng = stream_rng(cfg.seed, Stream::Holdout);
        let pairs: Vec<Vec<String>> = (0..cfg.n_holdout)
            .map(|_| {
                let x = sc.x_law.draw(&mut rng);
                let y = sc.h_family.eval(x) + sc.noise_true.draw(&mut rng);
                vec![fmt(x), fmt(y)]
            })
            .collect();
        put("holdout.csv", csv_text(&line, &["x", "y"], pairs)?)?;
    }
    Ok(written)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    config: &'a RunConfig,
    group_key: String,
    #[serde(flatten)]
    report: EvalReport,
}

pub fn eval(cfg: &RunConfig, out_dir: &Path) -> Result<(Vec<PathBuf>, String), CliError> {
    let (key, u, h) = read_link(required(&cfg.link, "--link")?, cfg.group.as_deref())?;
    let pairs = read_pairs(required(&cfg.holdout, "--holdout")?)?;
    let report = evaluate_curve(&u, &h, &pairs)?;
    let text = json_text(&EvalOutput {
        config: cfg,
        group_key: key,
        report,
    });
    let path = out_dir.join("eval.json");
    write_atomic(&path, &text)?;
    Ok((vec![path], String::from_utf8(text).expect("utf-8 json")))
}

fn risk_median(s: &Summary) -> f64 {
    Summary::from_results(s.values.iter().map(|v| Ok(v.sqrt())).collect()).median
}

pub fn experiment(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let options = cfg.fit_options();
    let cells = run_grid_experiment(
        &cfg.sizes,
        &cfg.noises,
        &cfg.h_family,
        &cfg.x_law,
        cfg.repetitions,
        cfg.seed,
        &options,
    )?;
    let line = cfg.to_line();
    let rows = cells.iter().map(|c| {
        vec![
            c.m.to_string(),
            c.n.to_string(),
            noise_label(&c.noise),
            fmt(c.summary.median),
            fmt(c.summary.iqr),
            fmt(risk_median(&c.summary)),
            c.repetitions.to_string(),
            c.summary.failures.len().to_string(),
        ]
    });
    let header = [
        "m",
        "n",
        "noise",
        "median_mse",
        "iqr_mse",
        "median_risk",
        "repetitions",
        "failures",
    ];
    let grid_path = out_dir.join("experiment.csv");
    write_atomic(&grid_path, &csv_text(&line, &header, rows)?)?;
    let mut written = vec![grid_path];

    if let Some(ms) = cfg.misspecified {
        let sc = SimConfig {
            m: ms.m,
            n: ms.n,
            h_family: cfg.h_family.clone(),
            x_law: cfg.x_law,
            noise_true: ms.noise_true,
            noise_deconv: ms.noise_deconv,
            seed: cfg.seed,
        };
        let r = run_misspecified(&sc, cfg.repetitions, &options)?;
        let row = |fit: &str, deconv: &linkmerge::NoiseSpec, s: &Summary, valid: String| {
            vec![
                fit.to_string(),
                noise_label(&r.noise_true),
                noise_label(deconv),
                ms.m.to_string(),
                ms.n.to_string(),
                fmt(s.median),
                fmt(s.iqr),
                fmt(risk_median(s)),
                cfg.repetitions.to_string(),
                s.failures.len().to_string(),
                valid,
            ]
        };
        let rows = vec![
            row("correct", &r.noise_true, &r.correct, String::new()),
            row(
                "assumed",
                &r.noise_deconv,
                &r.wrong,
                r.wrong_fits_valid.to_string(),
            ),
        ];
        let header = [
            "fit",
            "noise_true",
            "noise_deconv",
            "m",
            "n",
            "median_mse",
            "iqr_mse",
            "median_risk",
            "repetitions",
            "failures",
            "monotone_finite",
        ];
        let p = out_dir.join("misspecified.csv");
        write_atomic(&p, &csv_text(&line, &header, rows)?)?;
        written.push(p);
    }
    Ok(written)
}
