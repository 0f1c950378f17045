use std::fs;
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, Normal};

use metagam_core::sim::{
    run_estimation, run_power, write_reports, EstimationConfig, PowerConfig, SimConfig,
};
use metagam_core::strip::FILE_EXTENSION;
use metagam_core::svg::{dominance_plot, heterogeneity_plot, meta_plot, Band, Figure, Line};
use metagam_core::{
    cochran_q, combine_pvalues, confidence_band, dominance, fit_gam, pool_pointwise,
    predict_term_with, strip_rawdata, CombineMethod, DataTable, FitOptions, FittedGam,
    ModelFormula, PoolMethod, PredictOptions, StrippedModel, TermPrediction,
};

use crate::args::{FitArgs, GridArgs, MetaArgs, PlotArgs, SimulateArgs, StripArgs};
use crate::error::{io_error, CliError, EXIT_FAILURE};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn file_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("cohort");
    name.split('.').next().unwrap_or(name).to_string()
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let formula = ModelFormula::parse(&args.formula).map_err(|e| CliError::input(e.to_string()))?;
    if !args.data.is_file() {
        return Err(CliError::input(format!(
            "{}: no such file",
            args.data.display()
        )));
    }
    let data = DataTable::from_csv_path(&args.data)
        .map_err(|e| CliError::input(format!("{}: {e}", args.data.display())))?;
    let label = args.label.clone().unwrap_or_else(|| file_stem(&args.data));
    let model = fit_gam(&data, &formula, &FitOptions::labelled(label))?;
    let json = serde_json::to_vec_pretty(&model)
        .map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))?;
    write_file(&args.out, json)?;
    print!("{}", summary(&model));
    Ok(())
}

fn summary(model: &FittedGam) -> String {
    let mut out = format!(
        "cohort {}\nn {}\nscale {:.6}\nedf total {:.3}\ngcv {:.6}\n",
        model.label, model.n, model.scale, model.edf_total, model.gcv_score
    );
    out.push_str("term\tedf\tlambda\tp_value\n");
    for (term, edf) in &model.edf {
        let lambda = model
            .lambdas
            .get(term)
            .map_or_else(|| "-".to_string(), |l| format!("{l:.4e}"));
        let p = model
            .term_pvalues
            .get(term)
            .map_or_else(|| "-".to_string(), |p| format!("{p:.4e}"));
        out.push_str(&format!("{term}\t{edf:.3}\t{lambda}\t{p}\n"));
    }
    out
}

pub fn strip(args: &StripArgs) -> Result<(), CliError> {
    let bytes = fs::read(&args.model).map_err(|e| io_error(&args.model, e))?;
    let model: FittedGam = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::input(format!(
            "{}: not a fitted model file: {e}",
            args.model.display()
        ))
    })?;
    let stripped = strip_rawdata(&model);
    stripped
        .privacy_audit()
        .map_err(|e| CliError::model_file(&args.model, e))?;
    let out = args.out.clone().unwrap_or_else(|| {
        let dir = args.model.parent().unwrap_or(Path::new(""));
        dir.join(format!("{}.{FILE_EXTENSION}", file_stem(&args.model)))
    });
    stripped
        .write_file(&out)
        .map_err(|e| CliError::model_file(&out, e))?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn read_models(paths: &[PathBuf]) -> Result<Vec<StrippedModel>, CliError> {
    paths
        .iter()
        .map(|p| StrippedModel::read_file(p).map_err(|e| CliError::model_file(p, e)))
        .collect()
}

fn options(grid: &GridArgs) -> PredictOptions {
    if grid.intercept {
        PredictOptions::with_intercept()
    } else {
        PredictOptions::with_mean_uncertainty()
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "--alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

fn predictions(
    models: &[StrippedModel],
    paths: &[PathBuf],
    args: &GridArgs,
) -> Result<(DataTable, Vec<TermPrediction>), CliError> {
    check_alpha(args.alpha)?;
    let grid = DataTable::parse_grid(&args.grid)?;
    let preds = models
        .iter()
        .zip(paths)
        .map(|(m, p)| {
            predict_term_with(m, &args.term, &grid, options(args))
                .map_err(|e| CliError::input(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((grid, preds))
}

/// The grid column that varies, used as the x axis of figures.
fn x_axis(grid: &DataTable) -> (String, Vec<f64>) {
    for name in grid.names() {
        if let Ok(values) = grid.numeric(name) {
            if values.iter().any(|v| *v != values[0]) {
                return (name.clone(), values.to_vec());
            }
        }
    }
    let name = grid.names()[0].clone();
    let values = grid
        .numeric(&name)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|_| (0..grid.n_rows()).map(|i| i as f64).collect());
    (name, values)
}

fn sanitize(term: &str) -> String {
    term.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn meta(args: &MetaArgs) -> Result<(), CliError> {
    let models = read_models(&args.models)?;
    let (grid, preds) = predictions(&models, &args.models, &args.grid)?;
    let method = PoolMethod::from(args.method);
    let fit = pool_pointwise(&preds, method, args.range_restrict)?;
    let (low, high) = confidence_band(&fit, args.grid.alpha)?;
    let het = cochran_q(&preds, args.range_restrict)?;
    let dom = dominance(&fit);

    create_dir(&args.out_dir)?;
    let stem = sanitize(&args.grid.term);
    let mut header: Vec<String> = grid.names().to_vec();
    header.extend(["fit", "se", "lower", "upper", "tau2", "q", "q_df"].map(String::from));
    header.extend(fit.per_cohort.iter().map(|c| format!("weight_{}", c.label)));
    let mut csv = header
        .iter()
        .map(|h| csv_field(h))
        .collect::<Vec<_>>()
        .join(",");
    csv.push('\n');
    for i in 0..fit.len() {
        let mut row: Vec<String> = grid
            .names()
            .iter()
            .map(|n| csv_field(&grid.column(n).expect("grid column").label(i)))
            .collect();
        row.extend(
            [
                fit.pooled_fit[i],
                fit.pooled_se[i],
                low[i],
                high[i],
                fit.tau2[i],
                het.q[i],
            ]
            .iter()
            .map(f64::to_string),
        );
        row.push(het.df[i].to_string());
        row.extend(fit.per_cohort.iter().map(|c| c.weight[i].to_string()));
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&args.out_dir.join(format!("meta_{stem}.csv")), csv)?;

    let (x_name, x) = x_axis(&grid);
    write_file(
        &args.out_dir.join(format!("meta_{stem}.svg")),
        meta_plot(&fit, &x, &x_name, args.grid.alpha)?,
    )?;
    write_file(
        &args.out_dir.join(format!("dominance_{stem}.svg")),
        dominance_plot(&dom, &x, &x_name),
    )?;
    write_file(
        &args.out_dir.join(format!("heterogeneity_{stem}.svg")),
        heterogeneity_plot(&het, &x, &x_name),
    )?;

    let mut pvals = Vec::new();
    for (m, path) in models.iter().zip(&args.models) {
        match m.term_pvalues.get(&args.grid.term) {
            Some(&p) => pvals.push((p, (m.n as f64).sqrt())),
            None => {
                log::warn!(
                    "{}: no p-value for {}; skipping combined p-values",
                    path.display(),
                    args.grid.term
                );
                pvals.clear();
                break;
            }
        }
    }
    if !pvals.is_empty() {
        let p: Vec<f64> = pvals.iter().map(|v| v.0).collect();
        let w: Vec<f64> = pvals.iter().map(|v| v.1).collect();
        let mut out = String::from("method,p_value\n");
        for method in CombineMethod::ALL {
            let weights = (method == CombineMethod::Stouffer).then_some(w.as_slice());
            let combined = combine_pvalues(&p, weights, method)?;
            out.push_str(&format!("{},{combined}\n", method.name()));
        }
        write_file(&args.out_dir.join(format!("pvalues_{stem}.csv")), out)?;
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::input(format!("{}: no such file", path.display())));
            }
            SimConfig::from_path(path)?
        }
        None => SimConfig {
            estimation: Some(EstimationConfig::default()),
            power: Some(PowerConfig::default()),
        },
    };
    if let Some(seed) = args.seed {
        if let Some(e) = config.estimation.as_mut() {
            e.seed = seed;
        }
        if let Some(p) = config.power.as_mut() {
            p.seed = seed;
        }
    }
    config.validate()?;
    let estimation = config.estimation.as_ref().map(run_estimation).transpose()?;
    let power = config.power.as_ref().map(run_power).transpose()?;
    let written = write_reports(&args.out_dir, estimation.as_ref(), power.as_ref())?;
    for path in written {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

pub fn plot(args: &PlotArgs) -> Result<(), CliError> {
    let models = read_models(&args.models)?;
    let (grid, preds) = predictions(&models, &args.models, &args.grid)?;
    let (x_name, x) = x_axis(&grid);
    let z = Normal::standard().inverse_cdf(1.0 - args.grid.alpha / 2.0);
    let mut figure = Figure {
        title: args.grid.term.clone(),
        x_label: x_name,
        y_label: if args.grid.intercept {
            format!("intercept + {}", args.grid.term)
        } else {
            args.grid.term.clone()
        },
        ..Figure::default()
    };
    for p in &preds {
        let keep = |v: f64, i: usize| if p.in_range[i] { v } else { f64::NAN };
        figure.lines.push(Line {
            label: p.label.clone(),
            x: x.clone(),
            y: p.fit.iter().enumerate().map(|(i, &v)| keep(v, i)).collect(),
            dashed: false,
        });
        figure.bands.push(Band {
            x: x.clone(),
            low: (0..p.fit.len())
                .map(|i| keep(p.fit[i] - z * p.se[i], i))
                .collect(),
            high: (0..p.fit.len())
                .map(|i| keep(p.fit[i] + z * p.se[i], i))
                .collect(),
        });
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(&args.out, figure.render())
}
