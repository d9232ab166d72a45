//! Command-line driver: train, predict, evaluate, weights, ml-compare and
//! fixture generation.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nalgebra::DMatrix;

use crate::active_set::{
    fit, fit_on_indices, inactive_indices, write_history, ActiveSetModel, PassConfig, SelectionMode,
};
use crate::config::{RunConfig, TargetClass};
use crate::data::{
    self, augment_translations, one_vs_rest, scale_to_range, DataFormat, Dataset, LoadOptions,
};
use crate::ep::{ep_fit, EpState};
use crate::error::{Error, Result};
use crate::eval::{
    brier_score, density_histogram, error_rate, multiclass_combine, EvalReport, DEFAULT_BINS,
};
use crate::kernels::{gram, select_rows, KernelSpec};
use crate::ml_approx::decompose;
use crate::model_file::{self, SavedModel};
use crate::representer::weights;
use crate::synthetic;

/// Largest training set `ml-compare` accepts (it runs dense EP on all of it).
pub const ML_COMPARE_MAX_N: usize = 3000;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "passgp",
    version,
    about = "Sparse GP classification with predictive active set selection"
)]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select an active set, tune the kernel and save the model.
    Train(RunArgs),
    /// Predictive mean, variance, probability and label for each query.
    Predict(PredictArgs),
    /// Error rate, Brier score and probability histogram on labelled data.
    Evaluate(EvaluateArgs),
    /// Representer weights of a saved model.
    Weights(WeightsArgs),
    /// Compare marginal-likelihood approximations across inclusion thresholds.
    MlCompare(RunArgs),
    /// Write a synthetic dataset as CSV.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Data file (for idx, the image file).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// idx, svmlight or csv.
    #[arg(long)]
    pub format: Option<String>,
    /// Label file for idx images.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Feature count for svmlight files.
    #[arg(long)]
    pub dim: Option<String>,
    /// Text rows start with the label.
    #[arg(long)]
    pub label_first: bool,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Flat key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// se, se-linear or poly9.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Initial hyperparameters, comma-separated, natural scale.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    /// pass, fpass, random or full.
    #[arg(long)]
    pub mode: Option<String>,
    /// PASS: add a candidate whose predictive probability of its label is below this.
    #[arg(long)]
    pub p_inc: Option<String>,
    /// PASS: drop an active point whose cavity probability of its label is above this.
    #[arg(long)]
    pub p_del: Option<String>,
    /// fPASS: fraction of the budget swapped per subset.
    #[arg(long)]
    pub p_exc: Option<String>,
    /// Active set size for fpass and random.
    #[arg(long)]
    pub m_budget: Option<String>,
    /// Size of the random initial active set.
    #[arg(long)]
    pub n_init: Option<String>,
    /// Subsets the training data is split into per pass.
    #[arg(long)]
    pub n_sub: Option<String>,
    /// Passes over the training data.
    #[arg(long)]
    pub n_pass: Option<String>,
    /// Tune the kernel on every k-th subset.
    #[arg(long)]
    pub hyperopt_every: Option<String>,
    /// Never re-tune the kernel.
    #[arg(long)]
    pub fixed_theta: bool,
    /// EP fits per hyperparameter optimization.
    #[arg(long)]
    pub max_evals: Option<String>,
    /// Seed for the initial active set and subset splits.
    #[arg(long)]
    pub seed: Option<String>,
    /// Repetitions with seeds seed, seed+1, ...
    #[arg(long)]
    pub reps: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Positive class for one-vs-rest, or `all`.
    #[arg(long)]
    pub target_class: Option<String>,
    /// none, four or eight one-pixel translations of the final active set.
    #[arg(long)]
    pub augment: Option<String>,
    /// Image height for --augment.
    #[arg(long)]
    pub height: Option<String>,
    /// Image width for --augment.
    #[arg(long)]
    pub width: Option<String>,
    /// Scale features to `lo,hi` using the training data's range.
    #[arg(long, allow_hyphen_values = true)]
    pub scale: Option<String>,
    /// Inclusion thresholds for ml-compare, comma-separated.
    #[arg(long)]
    pub p_inc_list: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file or directory of model files; repeat for one-vs-rest sets.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Directory for the report and histogram.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// blobs, overlap, moons or three.
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let d = &self.data;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|v| v.display().to_string());
        let pairs: [(&str, Option<String>); 25] = [
            ("data", path(&d.data)),
            ("format", d.format.clone()),
            ("labels", path(&d.labels)),
            ("dim", d.dim.clone()),
            ("label_first", d.label_first.then(|| "true".into())),
            ("kernel", self.kernel.clone()),
            ("theta", self.theta.clone()),
            ("mode", self.mode.clone()),
            ("p_inc", self.p_inc.clone()),
            ("p_del", self.p_del.clone()),
            ("p_exc", self.p_exc.clone()),
            ("m_budget", self.m_budget.clone()),
            ("n_init", self.n_init.clone()),
            ("n_sub", self.n_sub.clone()),
            ("n_pass", self.n_pass.clone()),
            ("hyperopt_every", self.hyperopt_every.clone()),
            ("fixed_theta", self.fixed_theta.then(|| "true".into())),
            ("max_evals", self.max_evals.clone()),
            ("seed", self.seed.clone()),
            ("reps", self.reps.clone()),
            ("out", path(&self.out)),
            ("target_class", self.target_class.clone()),
            ("augment", self.augment.clone()),
            ("height", self.height.clone()),
            ("width", self.width.clone()),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if let Some(v) = &self.scale {
            cfg.set("scale", v)?;
        }
        if let Some(v) = &self.p_inc_list {
            cfg.set("p_inc_list", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let path = self
            .data
            .as_deref()
            .ok_or_else(|| Error::Config("--data is required".into()))?;
        let format: DataFormat = match &self.format {
            Some(f) => f.parse()?,
            None => DataFormat::Csv,
        };
        let dim = match &self.dim {
            Some(v) => Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("bad --dim `{v}`")))?,
            ),
            None => None,
        };
        data::load(
            path,
            format,
            &LoadOptions {
                labels: self.labels.clone(),
                dim,
                label_first: self.label_first,
            },
        )
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create_file(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn io_err(path: Option<&Path>) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::io(path.unwrap_or(Path::new("<stdout>")), e)
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::from_default_env()
        .filter_level(level)
        .try_init();
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        // A closed downstream pipe (`| head`) is not a failure.
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a.resolve()?).map(|_| ()),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Weights(a) => cmd_weights(a),
        Command::MlCompare(a) => cmd_ml_compare(&a.resolve()?, &mut io::stdout().lock()),
        Command::Fixture(a) => cmd_fixture(a),
    }
}

fn load_training(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("--data is required".into()))?;
    let ds = data::load(path, cfg.format, &cfg.load_options())?;
    match cfg.scale {
        Some((lo, hi)) => scale_to_range(&ds, lo, hi),
        None => Ok(ds),
    }
}

/// One binary task: `(target class, labelled data)`.
fn tasks(ds: &Dataset, target: Option<TargetClass>) -> Result<Vec<(Option<i64>, Dataset)>> {
    match target {
        None => {
            ds.binary_labels()?;
            Ok(vec![(None, ds.clone())])
        }
        Some(TargetClass::One(c)) => Ok(vec![(Some(c), one_vs_rest(ds, c)?)]),
        Some(TargetClass::All) => ds
            .classes()
            .into_iter()
            .map(|c| Ok((Some(c), one_vs_rest(ds, c)?)))
            .collect(),
    }
}

/// Translates the active set and refits EP on it with the kernel held fixed.
fn augment_model(model: &ActiveSetModel, cfg: &RunConfig) -> Result<ActiveSetModel> {
    let dirs = cfg.augment.expect("checked by caller");
    let (h, w) = (cfg.height.unwrap_or(0), cfg.width.unwrap_or(0));
    let active = Dataset::new(
        "active",
        model.x_active().clone(),
        model.y_active().iter().map(|&v| v as i64).collect(),
    )?;
    let big = augment_translations(&active, h, w, dirs)?;
    let y = big.binary_labels()?;
    let config = PassConfig {
        mode: SelectionMode::Full,
        fixed_theta: true,
        ..model.config().clone()
    };
    fit_on_indices(
        &big.features,
        &y,
        (0..big.n()).collect(),
        model.kernel(),
        &config,
    )
}

fn file_suffix(class: Option<i64>, seed: u64, reps: usize) -> String {
    let mut s = String::new();
    if let Some(c) = class {
        s.push_str(&format!("-class{c}"));
    }
    if reps > 1 {
        s.push_str(&format!("-seed{seed}"));
    }
    s
}

/// Trains every requested task and repetition; returns the written model paths.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ds = load_training(cfg)?;
    let jobs = tasks(&ds, cfg.target_class)?;
    create_dir(&cfg.out)?;
    let kernel0 = cfg.initial_kernel(ds.d())?;
    let results: Vec<Result<Vec<PathBuf>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(class, task)| {
                let kernel0 = &kernel0;
                scope.spawn(move || train_task(cfg, *class, task, kernel0))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut paths = Vec::new();
    for r in results {
        paths.extend(r?);
    }
    Ok(paths)
}

fn train_task(
    cfg: &RunConfig,
    class: Option<i64>,
    task: &Dataset,
    kernel0: &KernelSpec,
) -> Result<Vec<PathBuf>> {
    let y = task.binary_labels()?;
    let mut paths = Vec::new();
    for rep in 0..cfg.reps {
        let seed = cfg.pass.seed + rep as u64;
        let pass = PassConfig {
            seed,
            ..cfg.pass.clone()
        };
        let start = Instant::now();
        let mut model = fit(&task.features, &y, kernel0, &pass).map_err(|e| match class {
            Some(c) => e.with_context(format!("class {c}")),
            None => e,
        })?;
        let history = model.history().to_vec();
        let mut n_train = task.n();
        if cfg.augment.is_some() {
            model = augment_model(&model, cfg)?;
            n_train = model.active_idx().len();
        }
        let secs = start.elapsed().as_secs_f64();
        let suffix = file_suffix(class, seed, cfg.reps);
        let model_path = cfg.out.join(format!("model{suffix}.passgp"));
        let hist_path = cfg.out.join(format!("history{suffix}.tsv"));
        let saved = SavedModel {
            model,
            scaling: task.scaling,
            target_class: class,
            n_train,
        };
        model_file::save(&model_path, &saved)?;
        let mut h = create_file(&hist_path)?;
        write_history(&mut h, &history)
            .and_then(|_| h.flush())
            .map_err(|e| Error::io(&hist_path, e))?;
        println!(
            "{}active={}\ttrain_seconds={secs:.3}\tlog_z_ep_a={}\tmodel={}",
            class.map(|c| format!("class={c}\t")).unwrap_or_default(),
            saved.model.active_idx().len(),
            saved.model.log_z_ep_a(),
            model_path.display()
        );
        paths.push(model_path);
    }
    Ok(paths)
}

fn query_features(saved: &SavedModel, ds: &Dataset) -> Result<DMatrix<f64>> {
    let d = saved.model.x_active().ncols();
    if ds.n() > 0 && ds.d() != d {
        return Err(Error::Dimension(format!(
            "queries have {} features, model expects {d}",
            ds.d()
        )));
    }
    Ok(match &saved.scaling {
        Some(s) => s.apply(&ds.features),
        None => ds.features.clone(),
    })
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let saved = model_file::load(&a.model)?;
    let ds = a.data.load()?;
    let x = query_features(&saved, &ds)?;
    let out = a.out.as_deref();
    let mut w = output(out)?;
    write_predictions(&mut w, &saved.model, &x).map_err(io_err(out))?;
    Ok(())
}

/// `mean var prob label` rows; `prob` is the probability of `+1`.
pub fn write_predictions<W: Write>(
    w: &mut W,
    model: &ActiveSetModel,
    x: &DMatrix<f64>,
) -> io::Result<()> {
    writeln!(w, "mean\tvar\tprob\tlabel")?;
    if x.nrows() > 0 {
        let moments = model
            .predict_moments(x)
            .map_err(|e| io::Error::other(e.to_string()))?;
        for (m, v) in moments {
            let p = crate::probit::probit_predictive(1.0, m, v);
            writeln!(w, "{m}\t{v}\t{p}\t{}", if m >= 0.0 { 1 } else { -1 })?;
        }
    }
    w.flush()
}

fn collect_models(paths: &[PathBuf]) -> Result<Vec<SavedModel>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "passgp"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Config("no model files found".into()));
    }
    files.iter().map(|f| model_file::load(f)).collect()
}

/// Probability each query gets for `+1` under `saved`.
fn positive_probs(saved: &SavedModel, ds: &Dataset) -> Result<Vec<f64>> {
    let x = query_features(saved, ds)?;
    Ok(saved
        .model
        .predict_moments(&x)?
        .into_iter()
        .map(|(m, v)| crate::probit::probit_predictive(1.0, m, v))
        .collect())
}

pub fn evaluate_models(models: &[SavedModel], ds: &Dataset, bins: usize) -> Result<EvalReport> {
    if models.len() == 1 {
        let m = &models[0];
        let task = match m.target_class {
            Some(c) => one_vs_rest(ds, c)?,
            None => ds.clone(),
        };
        let truth = task.binary_labels()?;
        let p_pos = positive_probs(m, &task)?;
        let pred: Vec<f64> = p_pos
            .iter()
            .map(|&p| if p >= 0.5 { 1.0 } else { -1.0 })
            .collect();
        let p_true: Vec<f64> = p_pos
            .iter()
            .zip(&truth)
            .map(|(&p, &t)| if t > 0.0 { p } else { 1.0 - p })
            .collect();
        return EvalReport::binary(&pred, &truth, &p_true, bins);
    }
    let mut by_class: Vec<(i64, &SavedModel)> = Vec::new();
    for m in models {
        let c = m.target_class.ok_or_else(|| {
            Error::Config(
                "multiclass evaluation needs one-vs-rest models with a target class".into(),
            )
        })?;
        if by_class.iter().any(|(k, _)| *k == c) {
            return Err(Error::Config(format!("two models for class {c}")));
        }
        by_class.push((c, m));
    }
    by_class.sort_by_key(|(c, _)| *c);
    for c in ds.classes() {
        if !by_class.iter().any(|(k, _)| *k == c) {
            return Err(Error::Config(format!("no model for class {c}")));
        }
    }
    let n = ds.n();
    let mut probs = DMatrix::zeros(by_class.len(), n);
    let mut per_class = Vec::new();
    let mut sq_terms = Vec::new();
    for (row, (c, m)) in by_class.iter().enumerate() {
        let p = positive_probs(m, ds)?;
        let truth: Vec<bool> = ds.labels.iter().map(|l| l == c).collect();
        let pred: Vec<bool> = p.iter().map(|&v| v >= 0.5).collect();
        per_class.push((*c, error_rate(&pred, &truth)?));
        for (q, (&v, &t)) in p.iter().zip(&truth).enumerate() {
            probs[(row, q)] = v;
            sq_terms.push(if t { v } else { 1.0 - v });
        }
    }
    let winners = multiclass_combine(&probs)?;
    let predicted: Vec<i64> = winners.iter().map(|&r| by_class[r].0).collect();
    let correct: Vec<bool> = predicted
        .iter()
        .zip(&ds.labels)
        .map(|(p, t)| p == t)
        .collect();
    let p_true: Vec<f64> = (0..n)
        .map(|q| {
            let r = by_class
                .iter()
                .position(|(c, _)| *c == ds.labels[q])
                .expect("checked above");
            probs[(r, q)]
        })
        .collect();
    Ok(EvalReport {
        error_rate: error_rate(&predicted, &ds.labels)?,
        brier: brier_score(&sq_terms)?,
        n_test: n,
        per_class_errors: Some(per_class),
        density_histogram: density_histogram(&p_true, &correct, bins)?,
    })
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let models = collect_models(&a.model)?;
    let ds = a.data.load()?;
    let report = evaluate_models(&models, &ds, a.bins)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    report.write_key_values(&mut w).map_err(io_err(None))?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let kv = dir.join("report.txt");
        let mut f = create_file(&kv)?;
        report
            .write_key_values(&mut f)
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&kv, e))?;
        let hist = dir.join("histogram.tsv");
        let mut f = create_file(&hist)?;
        report
            .write_histogram_tsv(&mut f)
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&hist, e))?;
    }
    Ok(())
}

fn cmd_weights(a: &WeightsArgs) -> Result<()> {
    let saved = model_file::load(&a.model)?;
    let st = saved.model.ep_state();
    let wv = weights(st)?;
    let out = a.out.as_deref();
    let mut w = output(out)?;
    let write = |w: &mut Box<dyn Write>| -> io::Result<()> {
        writeln!(w, "index\tlabel\talpha\tz\tcavity_prob")?;
        for (n, &idx) in saved.model.active_idx().iter().enumerate() {
            let y = st.labels()[n];
            let p = st
                .cavity_predictive(n, y)
                .map_err(|e| io::Error::other(e.to_string()))?;
            writeln!(w, "{idx}\t{y}\t{}\t{}\t{p}", wv.alpha[n], wv.z[n])?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(out))
}

/// One row of the `ml-compare` table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub p_inc: f64,
    pub seed: u64,
    pub active: usize,
    pub log_z_ep_a: f64,
    pub log_z_app: f64,
    pub log_z_acc: f64,
    /// Full-data EP evidence at the row's hyperparameters.
    pub log_z_ep: f64,
    pub seconds_app: f64,
    pub seconds_acc: f64,
}

/// Runs PASS for every `p_inc` (ascending) and seed and decomposes the
/// evidence of the full training set. `p_inc = 1` fits the full GPC.
pub fn ml_compare_rows(
    x: &DMatrix<f64>,
    y: &[f64],
    kernel0: &KernelSpec,
    cfg: &RunConfig,
) -> Result<Vec<CompareRow>> {
    let n = y.len();
    if n > ML_COMPARE_MAX_N {
        return Err(Error::Config(format!(
            "ml-compare runs EP on all {n} points; refusing above {ML_COMPARE_MAX_N}"
        )));
    }
    let mut list = cfg.p_inc_list.clone();
    list.sort_by(f64::total_cmp);
    list.dedup();
    let mut rows = Vec::new();
    for &p_inc in &list {
        for rep in 0..cfg.reps {
            let seed = cfg.pass.seed + rep as u64;
            let full = p_inc >= 1.0;
            let pass = PassConfig {
                mode: if full {
                    SelectionMode::Full
                } else {
                    SelectionMode::Pass
                },
                p_inc,
                p_del: cfg.ml_p_del,
                seed,
                ..cfg.pass.clone()
            };
            let model =
                fit(x, y, kernel0, &pass).map_err(|e| e.with_context(format!("p_inc {p_inc}")))?;
            let inactive = inactive_indices(n, model.active_idx());
            let xi = select_rows(x, &inactive);
            let yi: Vec<f64> = inactive.iter().map(|&i| y[i]).collect();
            let d = decompose(&model, &xi, &yi, &pass.ep, true)?;
            let log_z_ep = if full {
                model.log_z_ep_a()
            } else {
                let k = gram(model.kernel(), x)?;
                ep_fit(&k, y, &pass.ep)?.log_z_ep()
            };
            info!(
                "p_inc {p_inc} seed {seed}: |A| {} Z_APP time {:.3e}s Z_ACC time {:.3e}s",
                d.active_size, d.timings.app_seconds, d.timings.acc_seconds
            );
            rows.push(CompareRow {
                p_inc,
                seed,
                active: d.active_size,
                log_z_ep_a: d.log_z_ep_a,
                log_z_app: d.log_z_app,
                log_z_acc: d.log_z_acc.expect("requested"),
                log_z_ep,
                seconds_app: d.timings.app_seconds,
                seconds_acc: d.timings.acc_seconds,
            });
        }
    }
    Ok(rows)
}

pub fn write_compare_rows<W: Write>(w: &mut W, rows: &[CompareRow]) -> io::Result<()> {
    writeln!(
        w,
        "p_inc\tseed\tactive\tlog_z_ep_a\tlog_z_app\tlog_z_acc\tlog_z_ep\tseconds_app\tseconds_acc"
    )?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.p_inc,
            r.seed,
            r.active,
            r.log_z_ep_a,
            r.log_z_app,
            r.log_z_acc,
            r.log_z_ep,
            r.seconds_app,
            r.seconds_acc
        )?;
    }
    w.flush()
}

pub fn cmd_ml_compare<W: Write>(cfg: &RunConfig, w: &mut W) -> Result<()> {
    let ds = load_training(cfg)?;
    let task = match cfg.target_class {
        None => ds,
        Some(TargetClass::One(c)) => one_vs_rest(&ds, c)?,
        Some(TargetClass::All) => {
            return Err(Error::Config("ml-compare works on one binary task".into()));
        }
    };
    let y = task.binary_labels()?;
    let kernel0 = cfg.initial_kernel(task.d())?;
    if let Some(bad) = cfg
        .p_inc_list
        .iter()
        .find(|&&p| p < 1.0 && p >= cfg.ml_p_del)
    {
        warn!(
            "p_inc {bad} is not below the ml-compare deletion threshold {}",
            cfg.ml_p_del
        );
    }
    let rows = ml_compare_rows(&task.features, &y, &kernel0, cfg)?;
    write_compare_rows(w, &rows).map_err(io_err(None))
}

fn cmd_fixture(a: &FixtureArgs) -> Result<()> {
    let ds = synthetic::by_name(&a.name, a.n, a.seed)
        .ok_or_else(|| Error::Config(format!("unknown fixture `{}`", a.name)))?;
    let mut f = create_file(&a.out)?;
    data::write_csv(&mut f, &ds)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(&a.out, e))
}

/// EP state of the full training set under a saved model's kernel.
pub fn full_state(saved: &SavedModel, x: &DMatrix<f64>, y: &[f64]) -> Result<EpState> {
    let k = gram(saved.model.kernel(), x)?;
    ep_fit(&k, y, &saved.model.config().ep)
}
