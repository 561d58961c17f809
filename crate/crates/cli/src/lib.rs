//! Command-line workflows over the `mixrain` library.
//!
//! Each command validates its whole configuration and inputs before touching
//! the output directory. Failures map to exit code 1 (invalid input, nothing
//! written) or 2 (runtime failure, partial results kept).

pub mod config;
pub mod synth;

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context as _};
use clap::{Parser, Subcommand};

use mixrain::distill::{
    build_database, distill_corpus, load_records, read_manifest, write_audit, write_pyramid,
    FsImageStore, Tier,
};
use mixrain::imaging::{
    gen_corpus, load_corpus, psnr, read_corpus_manifest, ssim, ImageBuffer, SsimParams,
};
use mixrain::moe::{save_checkpoint, train_toy_logged, TrainingData, TrainingLog, LOG_HEADER};
use mixrain::reweight::trace::{replay, write_weight_log, LossTrace, WeightLogRow};
use mixrain::seed::{derive, mix};
use mixrain::vlm::{Endpoint, HttpEndpoint, MockEndpoint, MockRule};

pub use config::RunConfig;

pub const CONFIG_ECHO: &str = "config.echo";
pub const PYRAMID_FILE: &str = "manifest.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const LOG_FILE: &str = "log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";

#[derive(Debug, Parser)]
#[command(
    name = "mixrain",
    version,
    about = "Synthetic rain corpora, retrieval distillation and reweighted MoE training"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Offline assessment rule for all endpoints, or three comma-separated
    /// rules: accept, reject, ssim:<threshold>, random:<p>.
    #[arg(long, global = true)]
    pub mock_vlm: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a paired training corpus and, if configured, a retrieval corpus.
    Synth,
    /// Sort candidate queries into the quality pyramid.
    Distill {
        references: PathBuf,
        queries: PathBuf,
    },
    /// Train the toy MoE model; without a corpus manifest the `[synth]` corpus is generated in memory.
    Train { corpus: Option<PathBuf> },
    /// Run the loss scheduler over a recorded loss trace.
    Replay { trace: PathBuf },
    /// PSNR and SSIM of every prediction against the ground truth of the same name.
    Eval { pred_dir: PathBuf, gt_dir: PathBuf },
    /// Summarize training logs into tables and plot-ready curves.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "invalid input: {e:#}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

trait Classify<T> {
    fn invalid(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(e.into()))
    }

    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

/// Resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub mock: Option<Vec<MockRule>>,
    echo: String,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let (config, text) = match &cli.config {
            Some(path) => {
                let (c, t) = RunConfig::load(path).invalid()?;
                (c, Some(t))
            }
            None => (RunConfig::default(), None),
        };
        Self::new(config, text, cli.seed, &cli.out, cli.mock_vlm.as_deref())
    }

    /// `config_text` is echoed verbatim into the output directory.
    pub fn new(
        config: RunConfig,
        config_text: Option<String>,
        seed: Option<u64>,
        out: &Path,
        mock_vlm: Option<&str>,
    ) -> Result<Self, CliError> {
        let mock = mock_vlm.map(parse_mock_rules).transpose().invalid()?;
        let mut echo =
            config_text.unwrap_or_else(|| "# no config file; defaults in effect\n".into());
        if !echo.is_empty() && !echo.ends_with('\n') {
            echo.push('\n');
        }
        if let Some(s) = seed {
            echo.push_str(&format!("# --seed {s}\n"));
        }
        if let Some(m) = mock_vlm {
            echo.push_str(&format!("# --mock-vlm {m}\n"));
        }
        Ok(Self {
            seed: seed.unwrap_or(config.seed),
            config,
            out: out.to_path_buf(),
            mock,
            echo,
        })
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))
            .runtime()?;
        let path = self.out.join(CONFIG_ECHO);
        fs::write(&path, &self.echo)
            .with_context(|| format!("writing {}", path.display()))
            .runtime()
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>, CliError> {
        let path = self.out.join(name);
        let file = fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))
            .runtime()?;
        Ok(BufWriter::new(file))
    }

    fn endpoints(&self) -> Result<Vec<Arc<dyn Endpoint>>, CliError> {
        match &self.mock {
            Some(rules) => Ok(rules
                .iter()
                .enumerate()
                .map(|(i, &rule)| {
                    let seed = mix(derive(self.seed, "mock"), i as u64);
                    Arc::new(MockEndpoint::new(format!("mock-{i}"), rule, seed))
                        as Arc<dyn Endpoint>
                })
                .collect()),
            None => self
                .config
                .endpoints
                .iter()
                .enumerate()
                .map(|(i, cfg)| {
                    HttpEndpoint::new(format!("endpoint-{i}"), cfg.clone())
                        .map(|e| Arc::new(e) as Arc<dyn Endpoint>)
                })
                .collect::<Result<_, _>>()
                .invalid(),
        }
    }
}

/// One rule for all three endpoints, or one rule each.
pub fn parse_mock_rules(text: &str) -> anyhow::Result<Vec<MockRule>> {
    let rules = text
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<MockRule>, _>>()?;
    match rules.len() {
        1 => Ok(vec![rules[0]; 3]),
        3 => Ok(rules),
        n => Err(anyhow!("--mock-vlm takes one rule or three, got {n}")),
    }
}

/// Runs the parsed command and returns its summary line.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::Distill {
            references,
            queries,
        } => cmd_distill(&ctx, references, queries),
        Command::Train { corpus } => cmd_train(&ctx, corpus.as_deref()),
        Command::Replay { trace } => cmd_replay(&ctx, trace),
        Command::Eval { pred_dir, gt_dir } => cmd_eval(&ctx, pred_dir, gt_dir),
        Command::Report { logs } => cmd_report(&ctx, logs),
    }
}

/// Writes `clean/`, `degraded/` and `manifest.jsonl`, plus `retrieval/` when
/// `synth.references` is positive.
pub fn cmd_synth(ctx: &Context) -> Result<String, CliError> {
    ctx.config.validate_synth().invalid()?;
    ctx.prepare_out()?;
    let synth = &ctx.config.synth;
    let entries = gen_corpus(&synth.corpus(derive(ctx.seed, "corpus")), &ctx.out).runtime()?;
    let mut line = format!(
        "synth: {} pairs ({:?} per type)",
        entries.len(),
        synth.per_type
    );
    if synth.references > 0 {
        let r = synth::write_retrieval_corpus(synth, derive(ctx.seed, "retrieval"), &ctx.out)
            .runtime()?;
        line.push_str(&format!(
            ", {} references, {} queries ({} faithful)",
            r.references, r.queries, r.faithful
        ));
    }
    Ok(format!("{line} -> {}", ctx.out.display()))
}

/// Writes the pyramid manifest and the audit log. Fails with a runtime error,
/// after writing both, if any query could not be processed.
pub fn cmd_distill(ctx: &Context, references: &Path, queries: &Path) -> Result<String, CliError> {
    ctx.config.validate_distill(ctx.mock.is_some()).invalid()?;
    let db = build_database(references).invalid()?;
    let entries = read_manifest(queries).invalid()?;
    let root = queries.parent().unwrap_or(Path::new("."));
    let queries = load_records(root, &entries, Tier::Candidate).invalid()?;
    for q in &queries {
        db.check_query(q).invalid()?;
    }
    let endpoints = ctx.endpoints()?;

    ctx.prepare_out()?;
    let report = distill_corpus(
        &queries,
        &db,
        &FsImageStore::new("."),
        &endpoints,
        &ctx.config.distill,
    )
    .runtime()?;
    write_pyramid(&ctx.out.join(PYRAMID_FILE), &report.entries).runtime()?;
    write_audit(&ctx.out.join(AUDIT_FILE), &report.audit).runtime()?;
    let (top, middle, bottom) = report.counts();
    let line = format!(
        "distill: top={top} middle={middle} bottom={bottom} retention={:.1}% ({} queries, {} unprocessable)",
        report.retention_percent(),
        queries.len(),
        report.unprocessable.len()
    );
    if !report.unprocessable.is_empty() {
        let ids: Vec<&str> = report.unprocessable.iter().map(|u| u.id.as_str()).collect();
        return Err(CliError::Runtime(anyhow!(
            "{line}; unprocessable: {}",
            ids.join(", ")
        )));
    }
    Ok(line)
}

/// Writes `log.csv` and, on success, `checkpoint.bin`.
pub fn cmd_train(ctx: &Context, corpus: Option<&Path>) -> Result<String, CliError> {
    ctx.config.validate_train().invalid()?;
    let pairs = match corpus {
        Some(manifest) => {
            let entries = read_corpus_manifest(manifest).invalid()?;
            load_corpus(manifest.parent().unwrap_or(Path::new(".")), &entries).invalid()?
        }
        None => {
            ctx.config.validate_synth().invalid()?;
            let cfg = ctx.config.synth.corpus(derive(ctx.seed, "corpus"));
            mixrain::imaging::generate_corpus(&cfg).invalid()?
        }
    };
    let data = TrainingData::from_pairs(&pairs, ctx.config.data.eval_per_type).invalid()?;
    let train = mixrain::moe::TrainConfig {
        seed: ctx.seed,
        ..ctx.config.train.clone()
    };

    ctx.prepare_out()?;
    let mut log = TrainingLog::new(train.mode, &train.scheduler, data.num_types());
    let result = train_toy_logged(&train, &data, &mut log);
    let mut out = ctx.create(LOG_FILE)?;
    log.write_csv(&mut out)
        .context("writing log.csv")
        .runtime()?;
    let model = result.context("training").runtime()?;
    save_checkpoint(model.params(), &ctx.out.join(CHECKPOINT_FILE)).runtime()?;

    let last = log.final_eval();
    let (worst_type, worst) = last
        .iter()
        .map(|r| (r.type_id, r.loss))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let mean_psnr = last.iter().map(|r| r.psnr).sum::<f64>() / last.len().max(1) as f64;
    Ok(format!(
        "train: mode={} iterations={} worst final eval loss {worst:.5} (type {worst_type}), mean psnr {mean_psnr:.2} dB",
        train.mode, train.iterations
    ))
}

/// Writes the per-step weight log as `log.csv`.
pub fn cmd_replay(ctx: &Context, trace_path: &Path) -> Result<String, CliError> {
    ctx.config.validate_replay().invalid()?;
    let file = fs::File::open(trace_path)
        .with_context(|| format!("opening {}", trace_path.display()))
        .invalid()?;
    let trace = LossTrace::parse(BufReader::new(file)).invalid()?;
    if trace.steps.is_empty() {
        return Err(CliError::Validation(anyhow!(
            "{} holds no loss records",
            trace_path.display()
        )));
    }

    ctx.prepare_out()?;
    let steps = replay(&trace, &ctx.config.replay.scheduler(trace.num_types)).runtime()?;
    let rows: Vec<WeightLogRow> = steps.iter().map(WeightLogRow::from).collect();
    let mut out = ctx.create(LOG_FILE)?;
    write_weight_log(&rows, &mut out)
        .and_then(|_| out.flush())
        .context("writing log.csv")
        .runtime()?;
    let k = rows.first().map_or(0, |r| r.weights.len());
    Ok(format!("replay: {} steps, {k} types", rows.len()))
}

fn png_names(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Writes `metrics.csv`: one row per ground-truth image, then the means.
pub fn cmd_eval(ctx: &Context, pred_dir: &Path, gt_dir: &Path) -> Result<String, CliError> {
    let names = png_names(gt_dir).invalid()?;
    if names.is_empty() {
        return Err(CliError::Validation(anyhow!(
            "no PNG files in {}",
            gt_dir.display()
        )));
    }
    let missing: Vec<&str> = names
        .iter()
        .filter(|n| !pred_dir.join(n).is_file())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Validation(anyhow!(
            "{} has no prediction for: {}",
            pred_dir.display(),
            missing.join(", ")
        )));
    }

    ctx.prepare_out()?;
    let params = SsimParams::default();
    let mut out = ctx.create(METRICS_FILE)?;
    let mut write = |line: String| {
        writeln!(out, "{line}")
            .context("writing metrics.csv")
            .runtime()
    };
    write("image,psnr,ssim".into())?;
    let (mut sum_psnr, mut sum_ssim) = (0.0, 0.0);
    for name in &names {
        let pred = ImageBuffer::load_png(&pred_dir.join(name)).runtime()?;
        let gt = ImageBuffer::load_png(&gt_dir.join(name)).runtime()?;
        let p = psnr(&pred, &gt).with_context(|| name.clone()).runtime()?;
        let s = ssim(&pred, &gt, &params)
            .with_context(|| name.clone())
            .runtime()?;
        write(format!("{name},{},{}", fmt_metric(p), fmt_metric(s)))?;
        sum_psnr += p;
        sum_ssim += s;
    }
    let n = names.len() as f64;
    let (mp, ms) = (sum_psnr / n, sum_ssim / n);
    write(format!("mean,{},{}", fmt_metric(mp), fmt_metric(ms)))?;
    drop(write);
    out.flush().context("writing metrics.csv").runtime()?;
    Ok(format!(
        "eval: {} images, mean psnr {} dB, mean ssim {}",
        names.len(),
        fmt_metric(mp),
        fmt_metric(ms)
    ))
}

/// Writes `summary.csv` (final held-out metrics per log and type) and
/// `curves.csv` (every logged row, tagged with its log).
pub fn cmd_report(ctx: &Context, logs: &[PathBuf]) -> Result<String, CliError> {
    let mut parsed = Vec::with_capacity(logs.len());
    for path in logs {
        let file = fs::File::open(path)
            .with_context(|| format!("opening {}", path.display()))
            .invalid()?;
        let log = TrainingLog::read_csv(BufReader::new(file))
            .with_context(|| format!("reading {}", path.display()))
            .invalid()?;
        parsed.push((path.display().to_string(), log));
    }

    ctx.prepare_out()?;
    let mut summary = ctx.create(SUMMARY_FILE)?;
    let mut curves = ctx.create(CURVES_FILE)?;
    let io = |r: std::io::Result<()>| r.context("writing report").runtime();
    io(writeln!(
        summary,
        "log,mode,type_id,final_iter,final_eval_loss,final_psnr,mean_omega"
    ))?;
    io(writeln!(curves, "log,mode,{LOG_HEADER}"))?;
    let mut lines = Vec::new();
    for (name, log) in &parsed {
        for t in 0..log.num_types {
            let omegas: Vec<f64> = log
                .rows
                .iter()
                .filter(|r| r.type_id == t)
                .map(|r| r.omega)
                .collect();
            let mean_omega = omegas.iter().sum::<f64>() / omegas.len().max(1) as f64;
            let last = log.final_eval().iter().find(|e| e.type_id == t);
            let (iter, loss, db) =
                last.map_or((0, f64::NAN, f64::NAN), |e| (e.iter, e.loss, e.psnr));
            io(writeln!(
                summary,
                "{name},{},{t},{iter},{loss},{db},{mean_omega}",
                log.mode
            ))?;
        }
        for r in &log.rows {
            io(writeln!(
                curves,
                "{name},{},{},{},{},{},{},{},{}",
                log.mode, r.iter, r.type_id, r.loss, r.eval_loss, r.psnr, r.omega, r.af
            ))?;
        }
        lines.push(format!(
            "{name}: {} worst final eval loss {:.5}",
            log.mode,
            log.worst_final_loss()
        ));
    }
    io(summary.flush())?;
    io(curves.flush())?;
    Ok(format!(
        "report: {} logs\n{}",
        parsed.len(),
        lines.join("\n")
    ))
}
