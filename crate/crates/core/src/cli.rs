//! The `gsae` command-line front end.
//!
//! Every subcommand prints a short table by default or a single JSON document
//! with `--json`. Errors are reported on stderr and mapped to exit codes by
//! [`Error::exit_code`]; argument errors exit with 1.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::benchgen::{
    generate_planted, oracle_model, PlantedGroundTruth, SyntheticConfig, DEFAULT_ORACLE_GAIN,
};
use crate::detection::{detect_concepts, DEFAULT_DETECTION_THRESHOLD};
use crate::error::{Error, Result};
use crate::fms::{measure_concepts, FmsConfig, FmsSummary, MeanMode};
use crate::gsae::{
    inspect_checkpoint, load_checkpoint, save_checkpoint, train, Architecture, TrainConfig,
    CHECKPOINT_MAGIC,
};
use crate::steering::{steer_dataset, GammaMode, SteeringConfig};
use crate::store::{
    inspect_dataset, load_dataset, oversample_minority, save_dataset, DATASET_MAGIC,
};
use crate::GsaeModel;

#[derive(Debug, Parser)]
#[command(
    name = "gsae",
    version,
    about = "Monosemanticity scoring and guided sparse autoencoders"
)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for scoring and encoding.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Print one JSON document instead of a table.
    #[arg(long, global = true)]
    pub json: bool,
    /// Suppress progress and warnings on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted concept directions.
    Gen(GenArgs),
    /// Train a guided (or vanilla) sparse autoencoder.
    Train(TrainArgs),
    /// Score monosemanticity of model latents per concept.
    Fms(FmsArgs),
    /// Detect concepts from the conditioned latents.
    Detect(DetectArgs),
    /// Steer activations along conditioned decoder columns.
    Steer(SteerArgs),
    /// Print the header of a .gsad or .gsam file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub concepts: usize,
    #[arg(long, default_value_t = 16)]
    pub nuisance: usize,
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.3)]
    pub concept_prob: f64,
    #[arg(long, default_value_t = 1.0)]
    pub signal_scale: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    /// Ground-truth sidecar; defaults to `<out>.truth.gsad`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Latent width as a multiple of the input width.
    #[arg(long)]
    pub latent_mult: Option<usize>,
    /// Latent width; overrides --latent-mult.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train without the conditioning loss and without conditioned latents.
    #[arg(long)]
    pub no_cond: bool,
    /// Continue from an existing checkpoint with a fresh optimiser.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Balance the classes of this concept index before training.
    #[arg(long)]
    pub oversample: Option<usize>,
    /// Large-scale preset: k 2048, latent multiple 6, lr 1e-5, batch 2048, 100 epochs.
    #[arg(long = "paper-hparams")]
    pub large_scale: bool,
}

#[derive(Debug, Args)]
pub struct FmsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "truth", conflicts_with = "truth")]
    pub model: Option<PathBuf>,
    /// Score the analytic oracle built from a ground-truth sidecar.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub p: Vec<usize>,
    #[arg(long, default_value_t = 0.02)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 12)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 50)]
    pub max_rounds: usize,
    #[arg(long, default_value = "arithmetic")]
    pub mean: MeanMode,
    #[arg(long, default_value_t = 0.2)]
    pub eval_fraction: f64,
    /// Keep the natural class ratio instead of oversampling to balance.
    #[arg(long)]
    pub no_balance: bool,
    /// Write accs and accs_cum curves as CSV.
    #[arg(long)]
    pub curves_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DETECTION_THRESHOLD)]
    pub threshold: f32,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Comma list of `+i[:alpha]` / `-i[:alpha]`.
    #[arg(long, allow_hyphen_values = true)]
    pub targets: String,
    /// `balanced` or `one`; defaults to balanced for several targets.
    #[arg(long)]
    pub gamma: Option<GammaMode>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run(&cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs an already parsed invocation; parallel work uses a pool of `--threads` workers.
pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::config("--threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start thread pool: {e}")))?;
    let mut ctx = Ctx {
        json: cli.json,
        quiet: cli.quiet,
        seed: cli.seed,
        pool,
        stdout,
        stderr,
    };
    match &cli.command {
        Command::Gen(a) => cmd_gen(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Fms(a) => cmd_fms(&mut ctx, a),
        Command::Detect(a) => cmd_detect(&mut ctx, a),
        Command::Steer(a) => cmd_steer(&mut ctx, a),
        Command::Inspect(a) => cmd_inspect(&mut ctx, a),
    }
}

struct Ctx<'a> {
    json: bool,
    quiet: bool,
    seed: u64,
    pool: rayon::ThreadPool,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn note(&mut self, msg: impl std::fmt::Display) {
        if !self.quiet {
            let _ = writeln!(self.stderr, "{msg}");
        }
    }

    fn emit_json(&mut self, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(self.stdout, "{text}")?;
        Ok(())
    }

    fn line(&mut self, text: impl std::fmt::Display) -> Result<()> {
        writeln!(self.stdout, "{text}")?;
        Ok(())
    }
}

fn require_file(path: &Path) -> Result<()> {
    match std::fs::metadata(path) {
        Ok(meta) if meta.is_file() => Ok(()),
        Ok(_) => Err(Error::path(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a regular file"),
        )),
        Err(e) => Err(Error::path(path, e)),
    }
}

fn require_writable_parent(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => return Ok(()),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Error::path(
            parent,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "output directory does not exist",
            ),
        ))
    }
}

fn default_truth_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".truth.gsad");
    PathBuf::from(s)
}

fn cmd_gen(ctx: &mut Ctx<'_>, a: &GenArgs) -> Result<()> {
    let truth_path = a
        .truth
        .clone()
        .unwrap_or_else(|| default_truth_path(&a.out));
    require_writable_parent(&a.out)?;
    require_writable_parent(&truth_path)?;
    let config = SyntheticConfig {
        concept_prob: a.concept_prob,
        signal_scale: a.signal_scale,
        noise_std: a.noise_std,
        ..SyntheticConfig::new(a.d, a.concepts, a.nuisance, a.n, ctx.seed)
    };
    let (dataset, truth) = generate_planted(&config)?;
    let bytes = save_dataset(&dataset, &a.out)?;
    let truth_bytes = save_dataset(&truth.to_dataset()?, &truth_path)?;
    let positives: Vec<usize> = (0..dataset.n_concepts())
        .map(|j| {
            dataset
                .binary_labels(j)
                .map(|l| l.iter().filter(|&&b| b).count())
        })
        .collect::<Result<_>>()?;
    if ctx.json {
        return ctx.emit_json(&json!({
            "dataset": a.out,
            "truth": truth_path,
            "config": config,
            "bytes": bytes,
            "truth_bytes": truth_bytes,
            "concept_names": dataset.concept_names,
            "positives": positives,
        }));
    }
    ctx.line(format!("dataset  {}  ({bytes} bytes)", a.out.display()))?;
    ctx.line(format!(
        "truth    {}  ({truth_bytes} bytes)",
        truth_path.display()
    ))?;
    ctx.line(format!(
        "rows {}  d {}  concepts {}",
        dataset.n_rows(),
        dataset.dim(),
        dataset.n_concepts()
    ))?;
    ctx.line(format!("{:<16} {:>9} {:>8}", "concept", "positive", "rate"))?;
    for (name, pos) in dataset.concept_names.iter().zip(&positives) {
        ctx.line(format!(
            "{name:<16} {pos:>9} {:>8.4}",
            *pos as f64 / dataset.n_rows() as f64
        ))?;
    }
    Ok(())
}

fn cmd_train(ctx: &mut Ctx<'_>, a: &TrainArgs) -> Result<()> {
    require_file(&a.data)?;
    if let Some(w) = &a.warm_start {
        require_file(w)?;
    }
    require_writable_parent(&a.out)?;

    let mut config = if a.large_scale {
        TrainConfig::large_scale()
    } else {
        TrainConfig::default()
    };
    let (default_mult, default_k) = if a.large_scale { (6, 2048) } else { (4, 16) };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    config.condition_weight = if a.no_cond { 0.0 } else { 1.0 };
    config.seed = ctx.seed;
    config.warm_start = a.warm_start.clone();
    config.validate()?;

    let mut dataset = load_dataset(&a.data)?;
    if let Some(j) = a.oversample {
        dataset = oversample_minority(&dataset, j, ctx.seed)?;
    }
    let d = dataset.dim();
    let m = match (a.m, a.latent_mult) {
        (Some(m), _) => m,
        (None, mult) => d * mult.unwrap_or(default_mult),
    };
    let arch = Architecture {
        d,
        m,
        k: a.k.unwrap_or(default_k),
        n_conditioned: if a.no_cond { 0 } else { dataset.n_concepts() },
    };
    ctx.note(format!(
        "training on {} rows: d {} m {} k {} conditioned {} epochs {}",
        dataset.n_rows(),
        arch.d,
        arch.m,
        arch.k,
        arch.n_conditioned,
        config.epochs
    ));
    let (model, losses) = train(&dataset, &config, arch)?;
    let bytes = save_checkpoint(&model, &a.out)?;
    if ctx.json {
        return ctx.emit_json(&json!({
            "model": a.out,
            "bytes": bytes,
            "architecture": arch,
            "config": config,
            "losses": losses,
        }));
    }
    ctx.line(format!("model {}  ({bytes} bytes)", a.out.display()))?;
    ctx.line(format!("{:>6} {:>12} {:>12}", "epoch", "L_r", "L_c"))?;
    for l in &losses {
        ctx.line(format!(
            "{:>6} {:>12.6} {:>12.6}",
            l.epoch, l.loss_reconstruction, l.loss_condition
        ))?;
    }
    Ok(())
}

fn cmd_fms(ctx: &mut Ctx<'_>, a: &FmsArgs) -> Result<()> {
    require_file(&a.data)?;
    if let Some(p) = a.model.as_ref().or(a.truth.as_ref()) {
        require_file(p)?;
    }
    if let Some(csv) = &a.curves_csv {
        require_writable_parent(csv)?;
    }
    let config = FmsConfig {
        p_values: a.p.clone(),
        epsilon: a.epsilon,
        max_depth: a.max_depth,
        max_ablation_rounds: a.max_rounds,
        mean_mode: a.mean,
        eval_fraction: a.eval_fraction,
        balance_classes: !a.no_balance,
        seed: ctx.seed,
        ..FmsConfig::default()
    };
    config.validate()?;

    let model: GsaeModel<f32> = match (&a.model, &a.truth) {
        (Some(path), _) => load_checkpoint(path)?,
        (None, Some(path)) => {
            let truth = PlantedGroundTruth::from_dataset(&load_dataset(path)?)?;
            oracle_model(
                &truth,
                truth.n_concepts() + truth.n_nuisance(),
                DEFAULT_ORACLE_GAIN,
            )?
        }
        (None, None) => return Err(Error::config("fms needs --model or --truth")),
    };
    let dataset = load_dataset(&a.data)?;
    if dataset.dim() != model.input_dim() {
        return Err(Error::validation(format!(
            "dataset width {} does not match model width {}",
            dataset.dim(),
            model.input_dim()
        )));
    }
    let latents = model.encode(dataset.activations.view())?.values;
    let concepts = (0..dataset.n_concepts())
        .map(|j| Ok((dataset.concept_names[j].clone(), dataset.binary_labels(j)?)))
        .collect::<Result<Vec<_>>>()?;
    let summary = ctx
        .pool
        .install(|| measure_concepts(latents.view(), &concepts, &config))?;

    if let Some(csv) = &a.curves_csv {
        write_curves_csv(csv, &summary)?;
    }
    if ctx.json {
        return ctx.emit_json(&summary);
    }
    let mut header = format!(
        "{:<16} {:>7} {:>7} {:>6}",
        "concept", "accs_0", "global", "n*"
    );
    for p in &config.p_values {
        header.push_str(&format!(
            " {:>9} {:>9}",
            format!("local@{p}"),
            format!("FMS@{p}")
        ));
    }
    ctx.line(header)?;
    for r in &summary.reports {
        let mut row = format!(
            "{:<16} {:>7.4} {:>7.4} {:>6}",
            r.concept,
            r.accs_0,
            r.fms_global,
            if r.n_star_reached {
                r.n_star.to_string()
            } else {
                format!(">{}", r.n_star)
            }
        );
        for p in &config.p_values {
            row.push_str(&format!(" {:>9.4} {:>9.4}", r.fms_local[p], r.fms_at[p]));
        }
        ctx.line(row)?;
    }
    for (p, v) in &summary.fms_at {
        ctx.line(format!("FMS@{p} ({:?} mean) = {v:.4}", summary.mean_mode).to_lowercase())?;
    }
    Ok(())
}

fn write_curves_csv(path: &Path, summary: &FmsSummary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::path(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("concept,curve,step,accuracy\n");
    for r in &summary.reports {
        for (p, acc) in r.accs.iter().enumerate() {
            body.push_str(&format!("{},accs,{p},{acc}\n", r.concept));
        }
        for (i, acc) in r.accs_cum.iter().enumerate() {
            body.push_str(&format!("{},accs_cum,{},{acc}\n", r.concept, i + 1));
        }
    }
    w.write_all(body.as_bytes())
        .map_err(|e| Error::path(path, e))?;
    w.flush().map_err(|e| Error::path(path, e))
}

fn cmd_detect(ctx: &mut Ctx<'_>, a: &DetectArgs) -> Result<()> {
    require_file(&a.data)?;
    require_file(&a.model)?;
    let model = load_checkpoint(&a.model)?;
    let dataset = load_dataset(&a.data)?;
    let report = detect_concepts(&model, &dataset, a.threshold)?;
    if ctx.json {
        return ctx.emit_json(&json!({
            "threshold": report.threshold,
            "concepts": report.concepts,
        }));
    }
    ctx.line(format!(
        "{:<16} {:>8} {:>8} {:>12} {:>10} {:>8} {:>8}",
        "concept", "present", "absent", "U", "p", "rbc", "acc"
    ))?;
    for c in &report.concepts {
        let (u, p, rbc) = match &c.separation {
            Some(s) => (
                format!("{:.1}", s.u),
                format!("{:.3e}", s.p_value),
                format!("{:.4}", s.rbc),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        ctx.line(format!(
            "{:<16} {:>8} {:>8} {:>12} {:>10} {:>8} {:>8.4}",
            c.concept, c.n_present, c.n_absent, u, p, rbc, c.accuracy
        ))?;
    }
    Ok(())
}

fn cmd_steer(ctx: &mut Ctx<'_>, a: &SteerArgs) -> Result<()> {
    require_file(&a.data)?;
    require_file(&a.model)?;
    require_writable_parent(&a.out)?;
    let targets = SteeringConfig::parse_targets(&a.targets)?;
    if targets.is_empty() {
        return Err(Error::config("no steering targets given"));
    }
    let mut config = SteeringConfig::new(targets);
    if let Some(g) = a.gamma {
        config.gamma_mode = g;
    }
    for t in &config.targets {
        if t.alpha.abs() > 1.0 {
            ctx.note(format!(
                "warning: |alpha| = {} for concept {} exceeds 1 and may leave the activation distribution",
                t.alpha.abs(),
                t.concept
            ));
        }
    }
    let model = load_checkpoint(&a.model)?;
    config.validate(model.n_conditioned)?;
    let dataset = load_dataset(&a.data)?;
    let steered = steer_dataset(&dataset, &model, &config)?;
    let bytes = save_dataset(&steered, &a.out)?;

    let before = model.encode(dataset.activations.view())?.values;
    let after = model.encode(steered.activations.view())?.values;
    let per_target: Vec<_> = config
        .targets
        .iter()
        .map(|t| {
            let mean = |f: &ndarray::Array2<f32>| {
                f.column(t.concept).iter().map(|&v| v as f64).sum::<f64>() / f.nrows().max(1) as f64
            };
            json!({
                "concept": t.concept,
                "direction": t.direction,
                "alpha": t.alpha,
                "mean_activation_before": mean(&before),
                "mean_activation_after": mean(&after),
            })
        })
        .collect();
    if ctx.json {
        return ctx.emit_json(&json!({
            "out": a.out,
            "bytes": bytes,
            "gamma_mode": config.gamma_mode,
            "targets": per_target,
        }));
    }
    ctx.line(format!(
        "steered {} rows -> {}  ({bytes} bytes, gamma {:?})",
        steered.n_rows(),
        a.out.display(),
        config.gamma_mode
    ))?;
    ctx.line(format!(
        "{:>8} {:>8} {:>12} {:>12}",
        "concept", "alpha", "f before", "f after"
    ))?;
    for t in &per_target {
        ctx.line(format!(
            "{:>8} {:>8.3} {:>12.4} {:>12.4}",
            t["concept"],
            t["alpha"].as_f64().unwrap_or(0.0),
            t["mean_activation_before"].as_f64().unwrap_or(0.0),
            t["mean_activation_after"].as_f64().unwrap_or(0.0)
        ))?;
    }
    Ok(())
}

fn cmd_inspect(ctx: &mut Ctx<'_>, a: &InspectArgs) -> Result<()> {
    require_file(&a.path)?;
    let mut magic = [0u8; 4];
    let mut file = File::open(&a.path).map_err(|e| Error::path(&a.path, e))?;
    let got = file.read(&mut magic).map_err(|e| Error::path(&a.path, e))?;
    drop(file);
    if got == 4 && magic == DATASET_MAGIC {
        let (header, names, len) = inspect_dataset(&a.path)?;
        if ctx.json {
            return ctx.emit_json(&json!({
                "kind": "dataset",
                "version": header.version,
                "n_rows": header.n_rows,
                "d": header.d,
                "n_concepts": header.n_concepts,
                "dtype": "f32",
                "concept_names": names,
                "file_bytes": len,
            }));
        }
        ctx.line(format!(
            "dataset {} (version {})",
            a.path.display(),
            header.version
        ))?;
        ctx.line(format!(
            "rows {}  d {}  concepts {}  dtype f32",
            header.n_rows, header.d, header.n_concepts
        ))?;
        ctx.line(format!("concepts: {}", names.join(", ")))?;
        ctx.line(format!("{len} bytes"))
    } else if got == 4 && magic == CHECKPOINT_MAGIC {
        let (header, len) = inspect_checkpoint(&a.path)?;
        if ctx.json {
            return ctx.emit_json(&json!({
                "kind": "model",
                "version": header.version,
                "d": header.d,
                "m": header.m,
                "k": header.k,
                "n_conditioned": header.n_conditioned,
                "file_bytes": len,
            }));
        }
        ctx.line(format!(
            "model {} (version {})",
            a.path.display(),
            header.version
        ))?;
        ctx.line(format!(
            "d {}  m {}  k {}  conditioned {}",
            header.d, header.m, header.k, header.n_conditioned
        ))?;
        ctx.line(format!("{len} bytes"))
    } else {
        Err(Error::Format(format!(
            "{}: neither a GSAD dataset nor a GSAM model",
            a.path.display()
        )))
    }
}
