use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use vpgmm::compare::compare_params;
use vpgmm::gmm::io::{read_params, write_params};
use vpgmm::gmm::{conditional_params, fit_centralized, ConditionalGmm, FitConfig, GmmParams};
use vpgmm::partition::{assemble, load_dataset, synth_generate, write_dataset, FullDataset};
use vpgmm::private_em::{fit_distributed, DistributedConfig, Federation};
use vpgmm::private_forecast::{
    forecast_csv, forecast_targets, quantiles_csv, ForecastConfig, ForecastContext,
};
use vpgmm::smc::{TrafficMeter, TranscriptMode};
use vpgmm::traffic::{centralized_traffic, TrafficReport};
use vpgmm::Dims;

use crate::config::{ExperimentConfig, Manifest};
use crate::{Cli, Command, Common, CompareArgs, FitArgs, ForecastArgs, GenDataArgs, Usage};

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(cli.common.config.as_deref())?;
    apply_common(&mut cfg, &cli.common);
    match cli.command {
        Command::GenData(args) => gen_data(cfg, &cli.common, args),
        Command::Fit(args) => fit(&cfg, &cli.common, args),
        Command::Compare(args) => compare(args),
        Command::Forecast(args) => forecast(&cfg, &cli.common, args),
    }
}

fn apply_common(cfg: &mut ExperimentConfig, common: &Common) {
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.components {
        cfg.components = v;
    }
    if let Some(v) = common.tol {
        cfg.tol = v;
    }
    if let Some(v) = common.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = &common.mean_mode {
        cfg.mean_mode = v.clone();
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn output_dir(out: Option<PathBuf>, data_dir: &Path) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| data_dir.to_path_buf());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn gen_data(mut cfg: ExperimentConfig, common: &Common, args: GenDataArgs) -> Result<ExitCode> {
    if let Some(v) = args.farms {
        cfg.farms = v;
    }
    if let Some(v) = args.periods {
        cfg.periods = v;
    }
    if let Some(v) = args.obs {
        cfg.obs = v;
    }
    if let Some(v) = args.capacities {
        cfg.capacities = v;
    }
    if let Some(v) = args.rho_t {
        cfg.rho_t = v;
    }
    if let Some(v) = args.rho_s {
        cfg.rho_s = v;
    }
    let dims = Dims::new(cfg.farms, cfg.periods, cfg.obs, cfg.components)?;
    let capacities = cfg.capacities();
    let dataset = synth_generate(&dims, &capacities, cfg.rho_t, cfg.rho_s, cfg.seed)?;
    let dir = cfg.data_dir(common.data_dir.clone());
    let files = write_dataset(&dir, &dataset)?;
    Manifest {
        dims,
        seed: cfg.seed,
        capacities,
        rho_t: cfg.rho_t,
        rho_s: cfg.rho_s,
    }
    .write(&dir)?;
    println!("wrote {} farm files and manifest to {}", files.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn load(cfg: &ExperimentConfig, common: &Common) -> Result<(PathBuf, Manifest, FullDataset)> {
    let dir = cfg.data_dir(common.data_dir.clone());
    let manifest = Manifest::read(&dir)?;
    let dataset = load_dataset(&dir, &manifest.capacities)
        .with_context(|| format!("loading data from {}", dir.display()))?;
    let layout = dataset.layout();
    if (layout.num_farms(), layout.num_periods(), dataset.num_obs())
        != (manifest.dims.num_farms, manifest.dims.num_periods, manifest.dims.num_obs)
    {
        bail!(Usage(format!(
            "data in {} does not match its manifest",
            dir.display()
        )));
    }
    Ok((dir, manifest, dataset))
}

fn fit_config(cfg: &ExperimentConfig, args: &FitArgs) -> FitConfig {
    let mut fit = FitConfig {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..FitConfig::default()
    };
    fit.em.use_updated_mean = args.use_updated_mean;
    fit
}

fn fit(cfg: &ExperimentConfig, common: &Common, args: FitArgs) -> Result<ExitCode> {
    let (data_dir, manifest, dataset) = load(cfg, common)?;
    let out = output_dir(args.out.clone(), &data_dir)?;
    let dims = Dims::new(
        manifest.dims.num_farms,
        manifest.dims.num_periods,
        manifest.dims.num_obs,
        cfg.components,
    )?;
    let reporting_farm = dims.num_farms;
    let fit = fit_config(cfg, &args);

    let (params, iters, proposed) = if args.centralized {
        let init = GmmParams::initial(dataset.layout(), &dataset.capacities(), cfg.components, cfg.seed)?;
        let report = fit_centralized(&assemble(&dataset)?, init, &fit)?;
        let mut iters = String::from("iter,loglik,up_bytes,down_bytes\n");
        for (k, ll) in report.loglik_trace.iter().enumerate() {
            iters.push_str(&format!("{k},{ll:.17e},0,0\n"));
        }
        (report.params, iters, None)
    } else {
        let keep = args.record.is_some() || args.replay.is_some();
        let dcfg = DistributedConfig {
            fit,
            seed: cfg.seed,
            transcript: if keep { TranscriptMode::Full } else { TranscriptMode::MeterOnly },
            ..DistributedConfig::default()
        };
        let report = fit_distributed(dataset.clone(), cfg.components, &dcfg)?;
        let mut iters = String::from("iter,loglik,up_bytes,down_bytes\n");
        for s in &report.summaries {
            iters.push_str(&s.csv_line(reporting_farm));
            iters.push('\n');
        }
        let transcript = report.federation.transcript();
        for w in transcript.warnings() {
            eprintln!("warning: {w}");
        }
        if let Some(path) = &args.record {
            write_file(path, &transcript.dump_string())?;
        }
        if let Some(path) = &args.replay {
            replay(path, &transcript.dump_string())?;
        }
        (report.fit.params, iters, Some(transcript.traffic().clone()))
    };

    write_params(out.join("params.txt"), &dims, &params)?;
    write_file(&out.join("iters.csv"), &iters)?;
    let centralized = centralized_traffic(&dataset, &params)?;
    match proposed {
        Some(proposed) => {
            let report = TrafficReport::new(reporting_farm, centralized, proposed);
            write_file(&out.join("traffic.csv"), &report.parties_csv())?;
            write_file(&out.join("traffic_table.csv"), &report.table_csv())?;
            print!("{}", report.render());
        }
        None => {
            let report = TrafficReport::new(reporting_farm, centralized, TrafficMeter::new(dims.num_farms + 1));
            let csv: String = report
                .parties_csv()
                .lines()
                .filter(|l| !l.starts_with("proposed,"))
                .map(|l| format!("{l}\n"))
                .collect();
            write_file(&out.join("traffic.csv"), &csv)?;
        }
    }
    println!("wrote params.txt, iters.csv and traffic.csv to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn replay(path: &Path, dump: &str) -> Result<()> {
    let recorded = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if recorded == dump {
        println!("transcript matches {}", path.display());
        return Ok(());
    }
    let line = recorded
        .lines()
        .zip(dump.lines())
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| recorded.lines().count().min(dump.lines().count()));
    bail!(Usage(format!(
        "transcript differs from {} at line {}",
        path.display(),
        line + 1
    )))
}

fn compare(args: CompareArgs) -> Result<ExitCode> {
    let (dims_a, a) = read_params(&args.a).with_context(|| format!("reading {}", args.a.display()))?;
    let (dims_b, b) = read_params(&args.b).with_context(|| format!("reading {}", args.b.display()))?;
    if dims_a.layout() != dims_b.layout() || dims_a.num_components != dims_b.num_components {
        bail!(Usage(format!(
            "dimension mismatch: {} is M={} T={} J={}, {} is M={} T={} J={}",
            args.a.display(),
            dims_a.num_farms,
            dims_a.num_periods,
            dims_a.num_components,
            args.b.display(),
            dims_b.num_farms,
            dims_b.num_periods,
            dims_b.num_components
        )));
    }
    let cmp = compare_params(dims_a.layout(), &a, &b)?;
    println!("{cmp}");
    if cmp.within(args.rtol) {
        Ok(ExitCode::SUCCESS)
    } else {
        println!("outside rtol {:e}: {}", args.rtol, cmp.worst_field);
        Ok(ExitCode::from(1))
    }
}

fn parse_targets(specs: &[String], v0: usize, farms: usize, periods: usize) -> Result<Vec<(usize, usize)>> {
    let next = || {
        if v0 < periods {
            Ok(v0 + 1)
        } else {
            Err(Usage(format!("v0 = {v0} is the last period; give targets as m:t")))
        }
    };
    if specs.is_empty() {
        let t = next()?;
        return Ok((1..=farms).map(|m| (m, t)).collect());
    }
    specs
        .iter()
        .map(|s| {
            let bad = || Usage(format!("target {s:?} is not m or m:t"));
            match s.split_once(':') {
                Some((m, t)) => Ok((m.trim().parse().map_err(|_| bad())?, t.trim().parse().map_err(|_| bad())?)),
                None => Ok((s.trim().parse().map_err(|_| bad())?, next()?)),
            }
        })
        .collect()
}

fn forecast(cfg: &ExperimentConfig, common: &Common, args: ForecastArgs) -> Result<ExitCode> {
    let (data_dir, _, dataset) = load(cfg, common)?;
    let out = output_dir(args.out.clone(), &data_dir)?;
    let params_path = args.params.clone().unwrap_or_else(|| data_dir.join("params.txt"));
    let (dims, params) =
        read_params(&params_path).with_context(|| format!("reading {}", params_path.display()))?;
    let layout = dataset.layout();
    if dims.layout() != layout {
        bail!(Usage(format!(
            "{} is for M={} T={}, data is M={} T={}",
            params_path.display(),
            dims.num_farms,
            dims.num_periods,
            layout.num_farms(),
            layout.num_periods()
        )));
    }
    let targets = parse_targets(&args.targets, args.v0, layout.num_farms(), layout.num_periods())?;
    let fcfg = ForecastConfig {
        mean_mode: cfg.mean_mode()?,
        ..ForecastConfig::default()
    };

    let num_obs = dataset.num_obs();
    let mut fed = Federation::new(dataset, cfg.seed, TranscriptMode::MeterOnly);
    fed.install(&params);
    let ctx = match (&args.current, args.row) {
        (Some(current), _) => ForecastContext::new(layout, args.v0, current.clone())?,
        (None, Some(0)) => bail!(Usage("--row is 1-based".into())),
        (None, row) => ForecastContext::from_row(&fed, row.unwrap_or(num_obs) - 1, args.v0)?,
    };
    let forecasts = forecast_targets(&mut fed, &ctx, &targets, &fcfg)?;
    for w in fed.transcript().warnings() {
        eprintln!("warning: {w}");
    }
    write_file(&out.join("forecast.csv"), &forecast_csv(&forecasts))?;
    write_file(&out.join("quantiles.csv"), &quantiles_csv(&forecasts))?;

    if args.oracle {
        let current: Vec<f64> = (1..=layout.num_farms()).map(|m| ctx.own(m)).collect();
        let oracle = targets
            .iter()
            .map(|&(m, t)| conditional_params(&params, layout, &current, args.v0, m, t))
            .collect::<vpgmm::Result<Vec<_>>>()?;
        write_file(&out.join("forecast_oracle.csv"), &forecast_csv(&oracle))?;
        println!("max difference to plaintext conditional: {:.3e}", max_diff(&forecasts, &oracle));
    }
    println!(
        "wrote forecast.csv and quantiles.csv for {} targets to {}",
        forecasts.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn max_diff(a: &[ConditionalGmm], b: &[ConditionalGmm]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            let w = x.weights.iter().zip(&y.weights);
            let m = x.means.iter().zip(&y.means);
            let v = x.variances.iter().zip(&y.variances);
            w.chain(m).chain(v).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
