//! `qclf`: fit, tune and evaluate quantile forests from the command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use qcl_forest::harness::{self, ExperimentConfig, Method};
use qcl_forest::intervals::{
    default_qrf_interval, qcl_one_sided_interval, res_oob_interval, res_sc_interval, IntervalMethod, IntervalSpec,
    Sided,
};
use qcl_forest::io::{fmt_opt, read_dataset, write_dataset, ResponseMode, Schema};
use qcl_forest::quantile::quantile_from_cdf;
use qcl_forest::simgen::{builtin_flc_table, flc, generate_with, FlcConfig, FlcId, TruthSidecar, TEST_SIZE};
use qcl_forest::tuning::{default_grid, fit_grid, grid, tune_fitted, LossKind, LossSpec};
use qcl_forest::{fit_forest, Dataset, Forest, ForestParams};

#[derive(Parser)]
#[command(name = "qclf", version, about = "Quantile forests tuned by quantile coverage loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one forest and save it as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        mtry: Option<usize>,
        #[arg(long)]
        nodesize: Option<usize>,
        #[arg(long, default_value_t = 500)]
        trees: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict conditional quantiles with a saved forest.
    Quantile {
        #[arg(long)]
        forest: PathBuf,
        /// Covariate table; response columns are ignored if present.
        #[arg(long)]
        data: PathBuf,
        /// One or more levels, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        tau: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every grid point under a loss and report the chosen one.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        loss: LossKind,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long = "grid-nodesize", value_delimiter = ',')]
        grid_nodesize: Option<Vec<usize>>,
        #[arg(long, default_value_t = 500)]
        trees: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an interval model and emit intervals for test rows.
    Interval {
        #[arg(long)]
        method: IntervalMethod,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long, default_value = "two")]
        sided: Sided,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        /// Coverage estimator for censored data (qcl-c or qcl-ipcw).
        #[arg(long)]
        loss: Option<LossKind>,
        #[arg(long = "grid-nodesize", value_delimiter = ',')]
        grid_nodesize: Option<Vec<usize>>,
        #[arg(long, default_value_t = 500)]
        trees: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw training and test sets for a built-in or custom setting.
    Simulate {
        /// Setting id (1..108 or c1..c96) or a JSON setting file.
        #[arg(long)]
        flc: String,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = TEST_SIZE)]
        test_n: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the simulation study and write its result tables.
    Experiment {
        /// Comma-separated ids or ranges (e.g. 1,19,37-40,c1), or one of
        /// `uncensored`, `censored`, `all`.
        #[arg(long = "flc-list")]
        flc_list: String,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9")]
        taus: Vec<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        trees: usize,
        #[arg(long, default_value_t = TEST_SIZE)]
        test_n: usize,
        #[arg(long = "grid-nodesize", value_delimiter = ',')]
        grid_nodesize: Option<Vec<usize>>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Derive per-figure CSV tables from an experiment directory.
    Plotdata {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load_schema(path: Option<&Path>) -> Result<Option<Schema>> {
    path.map(|p| Schema::load(p).with_context(|| format!("reading schema {}", p.display()))).transpose()
}

fn load_data(path: &Path, schema: Option<&Schema>, mode: ResponseMode) -> Result<Dataset> {
    read_dataset(path, schema, mode).with_context(|| format!("reading {}", path.display()))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn thetas(data: &Dataset, nodesizes: Option<&[usize]>) -> Vec<qcl_forest::tuning::Theta> {
    match nodesizes {
        Some(ns) => grid(data.p(), ns),
        None => default_grid(data),
    }
}

fn default_params(data: &Dataset) -> ForestParams {
    if data.is_survival() {
        ForestParams::survival_default(data.p())
    } else {
        ForestParams::regression_default(data.p())
    }
}

/// Parses `1,19,37-40,c1-c4` style lists.
fn parse_flc_list(s: &str) -> Result<Vec<FlcConfig>> {
    let table = builtin_flc_table();
    match s {
        "all" => return Ok(table),
        "uncensored" => return Ok(table.into_iter().filter(|c| !c.id.censored).collect()),
        "censored" => return Ok(table.into_iter().filter(|c| c.id.censored).collect()),
        _ => {}
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (FlcId, FlcId) = (a.parse()?, b.parse()?);
            if a.censored != b.censored || a.number > b.number {
                bail!("bad range '{part}'");
            }
            for k in a.number..=b.number {
                out.push(flc(FlcId { censored: a.censored, number: k })?);
            }
        } else {
            out.push(flc(part.parse()?)?);
        }
    }
    if out.is_empty() {
        bail!("empty setting list");
    }
    Ok(out)
}

fn resolve_setting(s: &str) -> Result<FlcConfig> {
    if let Ok(id) = s.parse::<FlcId>() {
        return Ok(flc(id)?);
    }
    let text = fs::read_to_string(s).with_context(|| format!("'{s}' is neither a setting id nor a readable file"))?;
    let cfg: FlcConfig = serde_json::from_str(&text).context("parsing setting file")?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { data, schema, mtry, nodesize, trees, seed, out } => {
            let schema = load_schema(schema.as_deref())?;
            let data = load_data(&data, schema.as_ref(), ResponseMode::Required)?;
            let d = default_params(&data);
            let params = ForestParams::new(mtry.unwrap_or(d.mtry), nodesize.unwrap_or(d.nodesize))
                .with_trees(trees)
                .with_seed(seed);
            fit_forest(data, &params)?.save(&out)?;
        }
        Command::Quantile { forest, data, tau, out } => {
            let forest = Forest::load(&forest).with_context(|| format!("loading {}", forest.display()))?;
            let schema = Schema::of(forest.training());
            let test = load_data(&data, Some(&schema), ResponseMode::Optional)?;
            let cdfs = forest.predict_cdfs(&test)?;
            let mut w = csv::Writer::from_writer(sink(out.as_deref())?);
            w.write_record(["row", "tau", "value", "tau_star"])?;
            for (i, c) in cdfs.iter().enumerate() {
                for &t in &tau {
                    let q = quantile_from_cdf(c, t)?;
                    w.write_record([i.to_string(), t.to_string(), fmt_opt(q.value), q.tau_star.to_string()])?;
                }
            }
            w.flush()?;
        }
        Command::Tune { data, schema, loss, tau, grid_nodesize, trees, seed, out } => {
            let schema = load_schema(schema.as_deref())?;
            let data = load_data(&data, schema.as_ref(), ResponseMode::Required)?;
            let spec = LossSpec::new(loss, tau)?;
            let th = thetas(&data, grid_nodesize.as_deref());
            let fitted = fit_grid(data, &th, trees, seed)?;
            let r = tune_fitted(&fitted, spec)?;
            let mut w = csv::Writer::from_writer(sink(out.as_deref())?);
            w.write_record(["mtry", "nodesize", "loss", "chosen", "error"])?;
            for c in &r.candidates {
                w.write_record([
                    c.theta.mtry.to_string(),
                    c.theta.nodesize.to_string(),
                    fmt_opt(c.loss),
                    (c.theta == r.chosen).to_string(),
                    c.error.clone().unwrap_or_default(),
                ])?;
            }
            w.flush()?;
        }
        Command::Interval { method, alpha, sided, data, schema, test, loss, grid_nodesize, trees, seed, out } => {
            let schema = load_schema(schema.as_deref())?;
            let data = Arc::new(load_data(&data, schema.as_ref(), ResponseMode::Required)?);
            let test = load_data(&test, Some(&Schema::of(&data)), ResponseMode::Optional)?;
            let spec = IntervalSpec::new(alpha, sided)?;
            let model = match method {
                IntervalMethod::Qcl => {
                    let kind = loss.unwrap_or(if data.is_survival() { LossKind::QclC } else { LossKind::Qcl });
                    let fitted = fit_grid(data.clone(), &thetas(&data, grid_nodesize.as_deref()), trees, seed)?;
                    qcl_one_sided_interval(&fitted, kind, spec)?
                }
                IntervalMethod::QrfDefault => default_qrf_interval(data, spec, trees, seed)?,
                IntervalMethod::ResOob => {
                    let fitted = fit_grid(data.clone(), &thetas(&data, grid_nodesize.as_deref()), trees, seed)?;
                    let r = tune_fitted(&fitted, LossSpec::new(LossKind::Mspe, None)?)?;
                    let forest = fitted.get(r.chosen).expect("chosen point was fitted").forest.clone();
                    res_oob_interval(forest, spec, true)?
                }
                IntervalMethod::ResSc => {
                    let params = default_params(&data).with_trees(trees).with_seed(seed);
                    res_sc_interval(&data, &params, spec, seed)?
                }
            };
            if let Some(c) = model.calibration {
                if c.fallback {
                    eprintln!("warning: no candidate met the coverage target; using the closest");
                }
            }
            let mut w = csv::Writer::from_writer(sink(out.as_deref())?);
            w.write_record(["row", "lower", "upper", "width"])?;
            for (i, iv) in model.predict(&test)?.iter().enumerate() {
                w.write_record([i.to_string(), fmt_opt(iv.lower), fmt_opt(iv.upper), fmt_opt(iv.width())])?;
            }
            w.flush()?;
        }
        Command::Simulate { flc, replicates, seed, test_n, out_dir } => {
            let setting = resolve_setting(&flc)?;
            fs::create_dir_all(&out_dir)?;
            for r in 0..replicates {
                let s = harness::cell_seed(seed, setting.id, r);
                let sim = generate_with(&setting, s, test_n)?;
                let stem = format!("{}-r{r}", setting.id);
                write_dataset(&sim.train, out_dir.join(format!("{stem}-train.csv")))?;
                write_dataset(&sim.test, out_dir.join(format!("{stem}-test.csv")))?;
                if r == 0 {
                    fs::write(out_dir.join(format!("{}-schema.json", setting.id)), serde_json::to_string_pretty(&Schema::of(&sim.train))?)?;
                }
                let truth = TruthSidecar {
                    setting: setting.clone(),
                    seed: s,
                    censoring_rate: sim.censoring_rate,
                    train: sim.train_truth,
                    test: sim.test_truth,
                };
                fs::write(out_dir.join(format!("{stem}-truth.json")), serde_json::to_string(&truth)?)?;
            }
        }
        Command::Experiment {
            flc_list,
            replicates,
            methods,
            taus,
            alpha,
            threads,
            seed,
            trees,
            test_n,
            grid_nodesize,
            out_dir,
        } => {
            if let Some(t) = threads {
                rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring threads")?;
            }
            let mut cfg = ExperimentConfig::new(parse_flc_list(&flc_list)?, replicates, taus, seed);
            if let Some(m) = methods {
                cfg.methods = m;
            }
            cfg.alpha = alpha;
            cfg.n_trees = trees;
            cfg.test_n = test_n;
            cfg.nodesizes = grid_nodesize;
            let report = harness::run_experiment(&cfg, Some(&out_dir))?;
            eprintln!(
                "{} metric rows, {} interval rows, {} failed cells; tables in {}",
                report.metrics.len(),
                report.intervals.len(),
                report.failures.len(),
                out_dir.display()
            );
        }
        Command::Plotdata { dir } => {
            for p in harness::plotdata(&dir)? {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
