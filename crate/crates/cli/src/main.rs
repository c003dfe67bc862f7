mod config;
mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::{parse_dims, ConfigFile, Overrides, SamplerChoice, Settings};
use report::{RuntimeRow, RUNTIME_HEADER};
use treepgm::datagen::{gen_model, sample_dataset, Dataset, GenSpec};
use treepgm::dnn::{Mlp, OutputKind};
use treepgm::error::Error;
use treepgm::experiment::{
    finetune, predict, run_comparison, score, seed_purpose, train, ComparisonConfig, FinetuneConfig, Method, TrainConfig,
};
use treepgm::math::fmt17;
use treepgm::metrics::{load_report, report_from_csv, report_to_csv, ReportRow};
use treepgm::rng;
use treepgm::unroll::verify::{check_net, default_grid, oracle_suite, random_net, suite_nets, Breach, Tolerances};

const EXIT_USAGE: u8 = 1;
const EXIT_BREACH: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "treepgm", version, about = "Sigmoid networks as tree-structured PGMs: data, training, fine-tuning, checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Tunables shared by the experiment commands. Any of them may also come
/// from `--config`.
#[derive(Args, Debug, Default)]
struct Knobs {
    /// Flat key=value file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// Examples per update, or `full`
    #[arg(long = "batch-size")]
    batch_size: Option<String>,
    /// adam or sgd
    #[arg(long)]
    optimizer: Option<String>,
    /// dnn, sgd, gibbs or hmc
    #[arg(long)]
    sampler: Option<String>,
    /// Copies per hidden unit for HMC
    #[arg(long = "L")]
    l: Option<String>,
    /// HMC step size
    #[arg(long)]
    dt: Option<String>,
    /// HMC leapfrog steps per trajectory
    #[arg(long)]
    leapfrog: Option<String>,
    /// Sampling steps between weight updates
    #[arg(long)]
    k: Option<String>,
    #[arg(long = "burn-in")]
    burn_in: Option<String>,
    /// on or off
    #[arg(long)]
    jacobian: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    /// Stochastic forward passes averaged per prediction
    #[arg(long = "n-samples")]
    n_samples: Option<String>,
    /// bn or mn
    #[arg(long)]
    kind: Option<String>,
    /// Generating weight scale; also the report label
    #[arg(long)]
    weight: Option<String>,
    /// Layer widths, input first, e.g. 4,4,4,1
    #[arg(long)]
    dims: Option<String>,
    #[arg(long = "n-points")]
    n_points: Option<String>,
    /// Min-max scale features to [0, 1] (on/off)
    #[arg(long = "scale-features")]
    scale_features: Option<String>,
}

impl Knobs {
    fn settings(&self, epochs_default: usize) -> Result<Settings, Error> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let flags = Overrides(vec![
            ("seed", self.seed.clone()),
            ("epochs", self.epochs.clone()),
            ("lr", self.lr.clone()),
            ("batch_size", self.batch_size.clone()),
            ("optimizer", self.optimizer.clone()),
            ("sampler", self.sampler.clone()),
            ("L", self.l.clone()),
            ("dt", self.dt.clone()),
            ("leapfrog", self.leapfrog.clone()),
            ("k", self.k.clone()),
            ("burn_in", self.burn_in.clone()),
            ("jacobian", self.jacobian.clone()),
            ("bins", self.bins.clone()),
            ("n_samples", self.n_samples.clone()),
            ("kind", self.kind.clone()),
            ("weight", self.weight.clone()),
            ("dims", self.dims.clone()),
            ("n_points", self.n_points.clone()),
            ("scale_features", self.scale_features.clone()),
        ]);
        Settings::resolve(&flags, &file, epochs_default)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic dataset from a random BN or MN
    GenData {
        #[command(flatten)]
        knobs: Knobs,
        /// Dataset CSV
        #[arg(long)]
        out: PathBuf,
        /// Factor-network file; defaults to the dataset path with extension `net`
        #[arg(long = "model-out")]
        model_out: Option<PathBuf>,
    },
    /// Train a network on the cross-entropy with Adam
    Train {
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long)]
        data: PathBuf,
        /// Start from this network instead of a random initialization
        #[arg(long)]
        init: Option<PathBuf>,
        /// Trained network; per-epoch losses go to `<out>.loss.csv`
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a trained network and append test metrics to a report
    Finetune {
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report CSV; created if missing, rows for the same run are replaced
        #[arg(long)]
        report: PathBuf,
        /// Fine-tuned network
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset label in the report; defaults to the data file stem
        #[arg(long = "dataset-name")]
        dataset_name: Option<String>,
        /// Training epochs label in the report
        #[arg(long = "train-epochs", default_value_t = 100)]
        train_epochs: usize,
    },
    /// Check finite-L probabilities and gradients against the network
    VerifyTheorems {
        /// Number of nets (at most 20 unless --dims is given)
        #[arg(long, default_value_t = 20)]
        nets: usize,
        /// Use this architecture for every net
        #[arg(long)]
        dims: Option<String>,
        /// Comma-separated L values; default 2^0..2^14 and 10^2..10^5
        #[arg(long)]
        grid: Option<String>,
        /// Parameters are drawn from U(-weight, weight)
        #[arg(long, default_value_t = 3.0)]
        weight: f64,
        /// Gap table; explicit-tree oracle rows go to `<out>.oracle.csv`
        #[arg(long)]
        out: PathBuf,
    },
    /// Full synthetic comparison over many seeds in parallel: generate,
    /// train, fine-tune with every method, score
    Compare {
        #[command(flatten)]
        knobs: Knobs,
        /// Seeds `seed .. seed + seeds`
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Comma-separated methods: dnn, sgd, gibbs, hmc-<L>
        #[arg(long, default_value = "dnn,sgd,gibbs,hmc-10,hmc-100,hmc-1000")]
        methods: String,
        #[arg(long = "finetune-epochs", default_value_t = 20)]
        finetune_epochs: usize,
        /// Generate one dataset (from `--seed`) and reuse it for every seed
        #[arg(long = "fix-data")]
        fix_data: bool,
        /// Report CSV (overwritten); runtimes go to `<report>.runtime.csv`
        #[arg(long)]
        report: PathBuf,
    },
    /// Aggregate reports into mean metrics with paired p-values against dnn
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Table CSV; runtime means go to `<out>.runtime.csv`
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Error(Error),
    Breach(Vec<Breach>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = Result<(), Failure>;

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_data(path: &Path, s: &Settings) -> Result<Dataset, Error> {
    let mut d = Dataset::load(path)?;
    if s.scale_features {
        d.min_max_scale();
    }
    Ok(d)
}

fn split(data: &Dataset, seed: u64) -> (Dataset, Dataset) {
    data.split_80_20(rng::derive_seed(seed, seed_purpose::SPLIT))
}

fn gen_data(knobs: &Knobs, out: &Path, model_out: Option<&Path>) -> CmdResult {
    let s = knobs.settings(100)?;
    let spec = GenSpec {
        kind: s.kind,
        dims: s.dims.clone(),
        weight_scale: s.weight,
        n_points: s.n_points,
        seed: s.seed,
    };
    let model = gen_model(&spec)?;
    let data = sample_dataset(&model, s.n_points, s.seed)?;
    data.save(out)?;
    let net_path = model_out.map_or_else(|| out.with_extension("net"), Path::to_path_buf);
    model.net.save(&net_path)?;
    model.mlp.save(&with_suffix(&net_path, ".mlp"))?;
    println!("seed {}", s.seed);
    Ok(())
}

fn train_cmd(knobs: &Knobs, data: &Path, init: Option<&Path>, out: &Path) -> CmdResult {
    let s = knobs.settings(100)?;
    let data = load_data(data, &s)?;
    let mlp = match init {
        Some(p) => Mlp::load(p)?,
        None => {
            if s.dims[0] != data.n_features() {
                return Err(Error::Usage(format!(
                    "dims start with {} inputs but the dataset has {} features",
                    s.dims[0],
                    data.n_features()
                ))
                .into());
            }
            Mlp::init_random(&s.dims, OutputKind::Bernoulli, &mut rng::master(rng::derive_seed(s.seed, seed_purpose::INIT)))?
        }
    };
    let (tr, te) = split(&data, s.seed);
    let cfg = TrainConfig {
        epochs: s.epochs,
        lr: s.lr,
        batch_size: s.batch_size,
        seed: rng::derive_seed(s.seed, seed_purpose::TRAIN),
    };
    let rep = train(&mlp, &tr, &te, &cfg).inspect_err(|e| echo_on_divergence(e, &s))?;
    rep.mlp.save(out)?;
    let mut csv = String::from("epoch,train_loss,test_loss\n");
    for (i, (a, b)) in rep.train_loss.iter().zip(&rep.test_loss).enumerate() {
        csv.push_str(&format!("{},{},{}\n", i + 1, fmt17(*a), fmt17(*b)));
    }
    write(&with_suffix(out, ".loss.csv"), &csv)?;
    if let (Some(a), Some(b)) = (rep.train_loss.last(), rep.test_loss.last()) {
        println!("final train_loss {a:.6} test_loss {b:.6}");
    }
    Ok(())
}

fn echo_on_divergence(e: &Error, s: &Settings) {
    if matches!(e, Error::Divergence { .. }) {
        eprintln!("run configuration:\n{}", s.echo());
    }
}

fn method_of(s: &Settings) -> Method {
    match s.sampler {
        SamplerChoice::Dnn => Method::Dnn,
        SamplerChoice::Sgd => Method::Sgd,
        SamplerChoice::Gibbs => Method::Gibbs,
        SamplerChoice::Hmc => Method::Hmc { l: s.l },
    }
}

fn same_run(a: &ReportRow, b: &ReportRow) -> bool {
    a.method == b.method
        && a.dataset == b.dataset
        && a.weight_scale == b.weight_scale
        && a.epochs == b.epochs
        && a.metric == b.metric
        && a.seed == b.seed
}

#[allow(clippy::too_many_arguments)]
fn finetune_cmd(
    knobs: &Knobs,
    model: &Path,
    data_path: &Path,
    report_path: &Path,
    out: Option<&Path>,
    dataset_name: Option<&str>,
    train_epochs: usize,
) -> CmdResult {
    let s = knobs.settings(20)?;
    let data = load_data(data_path, &s)?;
    let mlp = Mlp::load(model)?;
    let (tr, te) = split(&data, s.seed);
    let method = method_of(&s);
    let cfg = FinetuneConfig {
        epochs: s.epochs,
        lr: s.lr,
        batch_size: s.batch_size,
        k: s.k,
        burn_in: s.burn_in,
        hmc: s.hmc,
        jacobian: s.jacobian,
        optimizer: s.optimizer,
        n_samples: s.n_samples,
    };
    let t0 = Instant::now();
    let tuned = finetune(&mlp, &tr, method, &cfg, s.seed).inspect_err(|e| echo_on_divergence(e, &s))?;
    let seconds_per_epoch = t0.elapsed().as_secs_f64() / s.epochs.max(1) as f64;
    if let Some(out) = out {
        tuned.mlp.save(out)?;
    }
    let pred = predict(&tuned.mlp, &te, method, s.n_samples, s.seed)?;
    let scores = score(&pred, &te, s.bins)?;

    let dataset = dataset_name.map(str::to_string).unwrap_or_else(|| {
        data_path.file_stem().map_or("data".into(), |x| x.to_string_lossy().into_owned())
    });
    let row = |metric: &str, value: f64| ReportRow {
        method: method.name(),
        dataset: dataset.clone(),
        weight_scale: s.weight,
        epochs: train_epochs,
        metric: metric.into(),
        value,
        seed: s.seed,
    };
    let mut fresh = Vec::new();
    if let Some(m) = scores.mae {
        fresh.push(row("mae", m));
    }
    fresh.push(row("ece", scores.ece));

    let mut rows = if report_path.exists() { load_report(report_path)? } else { Vec::new() };
    rows.retain(|r| !fresh.iter().any(|f| same_run(r, f)));
    rows.extend(fresh.iter().cloned());
    write(report_path, &report_to_csv(&rows))?;

    let rt_path = with_suffix(report_path, ".runtime.csv");
    let mut rt = if rt_path.exists() {
        let text = fs::read_to_string(&rt_path).map_err(|e| Error::io(&rt_path, e))?;
        report::runtime_from_csv(&text)?
    } else {
        Vec::new()
    };
    let this = RuntimeRow {
        method: method.name(),
        dataset,
        weight_scale: s.weight,
        epochs: train_epochs,
        seed: s.seed,
        seconds_per_epoch,
    };
    rt.retain(|r| {
        !(r.method == this.method
            && r.dataset == this.dataset
            && r.weight_scale == this.weight_scale
            && r.epochs == this.epochs
            && r.seed == this.seed)
    });
    rt.push(this);
    write_runtime(&rt_path, &rt)?;

    for r in &fresh {
        println!("{} {} {:.6}", r.method, r.metric, r.value);
    }
    if let Some(a) = tuned.acceptance {
        println!("hmc acceptance {a:.4}");
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<u64>, Error> {
    let mut g = Vec::new();
    for p in s.split(',') {
        let v: f64 = p.trim().parse().map_err(|_| Error::Usage(format!("bad L value `{p}`")))?;
        if !(v >= 1.0) || v.fract() != 0.0 || v > 1e15 {
            return Err(Error::Usage(format!("L values must be positive integers, got `{p}`")));
        }
        g.push(v as u64);
    }
    if !g.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Usage("L grid must be strictly increasing".into()));
    }
    Ok(g)
}

fn verify_cmd(nets: usize, dims: Option<&str>, grid: Option<&str>, weight: f64, out: &Path) -> CmdResult {
    let tol = Tolerances::default();
    let grid = match grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(),
    };
    let list: Vec<(u64, Vec<usize>)> = match dims {
        Some(d) => {
            let d = parse_dims(d).ok_or_else(|| Error::Usage(format!("bad dims `{d}`")))?;
            (0..nets as u64).map(|s| (s, d.clone())).collect()
        }
        None => {
            let all = suite_nets();
            if nets > all.len() {
                return Err(Error::Usage(format!("at most {} nets without --dims", all.len())).into());
            }
            all.into_iter().take(nets).collect()
        }
    };
    let results: Vec<_> = list
        .par_iter()
        .map(|(seed, dims)| check_net(*seed, dims, &random_net(*seed, dims, weight), &grid, &tol))
        .collect::<Result<_, _>>()?;
    let dims_str = |d: &[usize]| d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-");
    let mut csv = String::from("seed,dims,L,max_prob_gap,max_grad_gap\n");
    let mut breaches = Vec::new();
    for (rows, b) in results {
        for r in rows {
            csv.push_str(&format!("{},{},{},{},{}\n", r.seed, dims_str(&r.dims), r.l, fmt17(r.prob_gap), fmt17(r.grad_gap)));
        }
        breaches.extend(b);
    }
    write(out, &csv)?;
    let mut ocsv = String::from("seed,dims,L,max_gap\n");
    for (seed, l, gap) in oracle_suite(10, weight)? {
        ocsv.push_str(&format!("{seed},2-2-1,{l},{}\n", fmt17(gap)));
        if !(gap <= tol.oracle) {
            breaches.push(Breach {
                seed,
                l,
                what: format!("explicit tree differs from closed form by {gap:.3e}"),
            });
        }
    }
    write(&with_suffix(out, ".oracle.csv"), &ocsv)?;
    if breaches.is_empty() {
        println!("ok: {} nets, {} L values, no breaches", list.len(), grid.len());
        Ok(())
    } else {
        Err(Failure::Breach(breaches))
    }
}

fn parse_methods(s: &str) -> Result<Vec<Method>, Error> {
    s.split(',')
        .map(|m| match m.trim() {
            "dnn" => Ok(Method::Dnn),
            "sgd" => Ok(Method::Sgd),
            "gibbs" => Ok(Method::Gibbs),
            other => other
                .strip_prefix("hmc-")
                .and_then(|l| l.parse::<f64>().ok())
                .filter(|l| *l > 0.0)
                .map(|l| Method::Hmc { l })
                .ok_or_else(|| Error::Usage(format!("unknown method `{other}`"))),
        })
        .collect()
}

fn write_runtime(path: &Path, rows: &[RuntimeRow]) -> Result<(), Error> {
    let mut text = format!("{RUNTIME_HEADER}\n");
    for r in rows {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    write(path, &text)
}

fn compare_cmd(knobs: &Knobs, seeds: u64, methods: &str, finetune_epochs: usize, fix_data: bool, report: &Path) -> CmdResult {
    let s = knobs.settings(100)?;
    let cfg = ComparisonConfig {
        kind: s.kind,
        weight_scale: s.weight,
        dims: s.dims.clone(),
        n_points: s.n_points,
        train: TrainConfig {
            epochs: s.epochs,
            lr: s.lr,
            batch_size: s.batch_size,
            seed: 0,
        },
        finetune: FinetuneConfig {
            epochs: finetune_epochs,
            lr: s.lr,
            batch_size: s.batch_size,
            k: s.k,
            burn_in: s.burn_in,
            hmc: s.hmc,
            jacobian: s.jacobian,
            optimizer: s.optimizer,
            n_samples: s.n_samples,
        },
        methods: parse_methods(methods)?,
        fix_data,
        data_seed: s.seed,
        bins: s.bins,
    };
    let results: Vec<_> = (s.seed..s.seed + seeds)
        .into_par_iter()
        .map(|seed| run_comparison(&cfg, seed).map(|r| (seed, r)))
        .collect::<Result<_, _>>()
        .inspect_err(|e| echo_on_divergence(e, &s))?;
    let mut rows = Vec::new();
    let mut runtime = Vec::new();
    for (seed, (r, times)) in results {
        rows.extend(r);
        runtime.extend(times.into_iter().map(|(method, seconds_per_epoch)| RuntimeRow {
            method,
            dataset: s.kind.as_str().into(),
            weight_scale: s.weight,
            epochs: s.epochs,
            seed,
            seconds_per_epoch,
        }));
    }
    write(report, &report_to_csv(&rows))?;
    write_runtime(&with_suffix(report, ".runtime.csv"), &runtime)?;
    print!("{}", report::table_to_csv(&report::aggregate(&rows)?));
    Ok(())
}

fn report_cmd(files: &[PathBuf], out: Option<&Path>) -> CmdResult {
    let mut rows = Vec::new();
    let mut runtime = Vec::new();
    for f in files {
        let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        rows.extend(report_from_csv(&text)?);
        let rt = with_suffix(f, ".runtime.csv");
        if rt.exists() {
            let text = fs::read_to_string(&rt).map_err(|e| Error::io(&rt, e))?;
            runtime.extend(report::runtime_from_csv(&text)?);
        }
    }
    let table = report::table_to_csv(&report::aggregate(&rows)?);
    let rt_table = (!runtime.is_empty()).then(|| report::aggregate_runtime(&runtime));
    match out {
        Some(p) => {
            write(p, &table)?;
            if let Some(t) = &rt_table {
                write(&with_suffix(p, ".runtime.csv"), t)?;
            }
        }
        None => {
            print!("{table}");
            if let Some(t) = &rt_table {
                print!("\n{t}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.cmd {
        Cmd::GenData { knobs, out, model_out } => gen_data(knobs, out, model_out.as_deref()),
        Cmd::Train { knobs, data, init, out } => train_cmd(knobs, data, init.as_deref(), out),
        Cmd::Finetune {
            knobs,
            model,
            data,
            report,
            out,
            dataset_name,
            train_epochs,
        } => finetune_cmd(knobs, model, data, report, out.as_deref(), dataset_name.as_deref(), *train_epochs),
        Cmd::VerifyTheorems {
            nets,
            dims,
            grid,
            weight,
            out,
        } => verify_cmd(*nets, dims.as_deref(), grid.as_deref(), *weight, out),
        Cmd::Compare {
            knobs,
            seeds,
            methods,
            finetune_epochs,
            fix_data,
            report,
        } => compare_cmd(knobs, *seeds, methods, *finetune_epochs, *fix_data, report),
        Cmd::Report { files, out } => report_cmd(files, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Breach(b)) => {
            for x in &b {
                eprintln!("breach seed={} L={}: {}", x.seed, x.l, x.what);
            }
            ExitCode::from(EXIT_BREACH)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Divergence { .. } => EXIT_DIVERGED,
                _ => EXIT_USAGE,
            })
        }
    }
}
