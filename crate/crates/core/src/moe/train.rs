use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autodiff::Tape;
use super::model::{ModelConfig, ToyModel};
use super::{MoeError, Tensor};
use crate::imaging::{psnr, CorpusPair, DegradationKind, ImageBuffer};
use crate::reweight::{compute_weights, Scheduler, SchedulerConfig, StepOutcome};
use crate::seed::{derive, mix};

pub const LOG_HEADER: &str = "iter,type_id,loss,eval_loss,psnr,omega,af";

/// How per-type losses are weighted in the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum WeightingMode {
    #[serde(rename = "uniform")]
    Uniform,
    #[default]
    #[serde(rename = "reweighted")]
    Reweighted,
    #[serde(rename = "fixed-af-0.5")]
    FixedAfHalf,
    #[serde(rename = "no-tss")]
    NoTss,
    #[serde(rename = "no-tbs")]
    NoTbs,
}

impl WeightingMode {
    pub const ALL: [WeightingMode; 5] = [
        WeightingMode::Uniform,
        WeightingMode::Reweighted,
        WeightingMode::FixedAfHalf,
        WeightingMode::NoTss,
        WeightingMode::NoTbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightingMode::Uniform => "uniform",
            WeightingMode::Reweighted => "reweighted",
            WeightingMode::FixedAfHalf => "fixed-af-0.5",
            WeightingMode::NoTss => "no-tss",
            WeightingMode::NoTbs => "no-tbs",
        }
    }

    /// Weights and blending factor this mode applies for a scheduler outcome.
    pub fn weights(self, outcome: &StepOutcome) -> Result<(Vec<f64>, f64), MoeError> {
        let k = outcome.weights.len();
        if outcome.warming_up || self == WeightingMode::Uniform {
            let af = if self == WeightingMode::Uniform {
                1.0
            } else {
                outcome.af
            };
            return Ok((vec![1.0 / k as f64; k], af));
        }
        let af = match self {
            WeightingMode::Reweighted => return Ok((outcome.weights.weights.clone(), outcome.af)),
            WeightingMode::FixedAfHalf => 0.5,
            WeightingMode::NoTss => 1.0,
            WeightingMode::NoTbs => 0.0,
            WeightingMode::Uniform => unreachable!(),
        };
        Ok((compute_weights(&outcome.tbs, &outcome.tss, af)?, af))
    }
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightingMode {
    type Err = MoeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MoeError::Config(format!("unknown weighting mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Training samples drawn from each type per iteration.
    pub samples_per_type: usize,
    /// Side of the random square crop used for training; 0 trains on full images.
    pub patch_size: usize,
    /// Evaluate every this many iterations (0: only after the last one).
    pub eval_interval: usize,
    pub mode: WeightingMode,
    pub seed: u64,
    pub model: ModelConfig,
    pub scheduler: SchedulerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 0.05,
            samples_per_type: 2,
            patch_size: 8,
            eval_interval: 100,
            mode: WeightingMode::Reweighted,
            seed: 0,
            model: ModelConfig::default(),
            scheduler: SchedulerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MoeError> {
        self.model.validate()?;
        self.scheduler.validate()?;
        if self.iterations == 0 {
            return Err(MoeError::Config("iterations must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(MoeError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.samples_per_type == 0 {
            return Err(MoeError::Config("samples_per_type must be positive".into()));
        }
        Ok(())
    }

    /// Seed of the routing noise at iteration `iter`.
    pub fn router_seed(&self, iter: usize) -> u64 {
        mix(derive(self.seed, "router"), iter as u64)
    }
}

/// One training example: degraded input and clean target, both `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub type_id: usize,
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Debug, Clone)]
struct TypeSplit {
    train: Vec<(ImageBuffer, ImageBuffer)>,
    eval: Vec<(ImageBuffer, ImageBuffer)>,
}

/// Paired images grouped by degradation type, with a held-out split per type.
#[derive(Debug, Clone)]
pub struct TrainingData {
    types: Vec<TypeSplit>,
}

fn to_tensor(img: &ImageBuffer) -> Tensor {
    Tensor::new(
        vec![img.channels(), img.height(), img.width()],
        img.to_chw(),
    )
    .expect("image shape is valid")
}

fn crop(img: &ImageBuffer, y0: usize, x0: usize, size: usize) -> Tensor {
    let c = img.channels();
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                data.push(img.get(y, x, ch));
            }
        }
    }
    Tensor::new(vec![c, size, size], data).expect("crop shape is valid")
}

impl TrainingData {
    /// Groups of `(degraded, clean)` pairs, one group per type. The last
    /// `eval_per_type` pairs of each group are held out.
    pub fn from_groups(
        groups: Vec<Vec<(ImageBuffer, ImageBuffer)>>,
        eval_per_type: usize,
    ) -> Result<Self, MoeError> {
        if groups.is_empty() {
            return Err(MoeError::Data("no degradation types".into()));
        }
        let mut types = Vec::with_capacity(groups.len());
        for (t, mut pairs) in groups.into_iter().enumerate() {
            if pairs.len() <= eval_per_type {
                return Err(MoeError::Data(format!(
                    "type {t} has {} pairs, need more than the {eval_per_type} held out",
                    pairs.len()
                )));
            }
            for (d, c) in &pairs {
                d.ensure_same_shape(c)?;
            }
            let eval = pairs.split_off(pairs.len() - eval_per_type);
            types.push(TypeSplit { train: pairs, eval });
        }
        Ok(Self { types })
    }

    /// Corpus pairs grouped by kind in DRS, DRD, NRS, NRD order; kinds with no
    /// pairs are left out.
    pub fn from_pairs(pairs: &[CorpusPair], eval_per_type: usize) -> Result<Self, MoeError> {
        let groups: Vec<Vec<(ImageBuffer, ImageBuffer)>> = DegradationKind::ALL
            .iter()
            .map(|&k| {
                pairs
                    .iter()
                    .filter(|p| p.kind == k)
                    .map(|p| (p.degraded.clone(), p.clean.clone()))
                    .collect::<Vec<_>>()
            })
            .filter(|g| !g.is_empty())
            .collect();
        Self::from_groups(groups, eval_per_type)
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Training examples for iteration `iter`: `samples_per_type` per type, in
    /// type order, each cropped to `patch_size` when that is set.
    pub fn batch(&self, config: &TrainConfig, iter: usize) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(derive(config.seed, "batches"), iter as u64));
        let mut out = Vec::with_capacity(self.types.len() * config.samples_per_type);
        for (type_id, split) in self.types.iter().enumerate() {
            for _ in 0..config.samples_per_type {
                let (degraded, clean) = &split.train[rng.random_range(0..split.train.len())];
                let (h, w) = (degraded.height(), degraded.width());
                let (input, target) = if config.patch_size == 0 || config.patch_size >= h.min(w) {
                    (to_tensor(degraded), to_tensor(clean))
                } else {
                    let p = config.patch_size;
                    let y0 = rng.random_range(0..=h - p);
                    let x0 = rng.random_range(0..=w - p);
                    (crop(degraded, y0, x0, p), crop(clean, y0, x0, p))
                };
                out.push(Example {
                    type_id,
                    input,
                    target,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub type_id: usize,
    pub loss: f64,
    /// Held-out loss and PSNR; NaN on iterations without an evaluation.
    pub eval_loss: f64,
    pub psnr: f64,
    pub omega: f64,
    pub af: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub iter: usize,
    pub type_id: usize,
    pub loss: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub mode: WeightingMode,
    pub window_size: usize,
    pub tau: f64,
    pub num_types: usize,
    pub rows: Vec<LogRow>,
    pub evals: Vec<EvalRow>,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

impl TrainingLog {
    pub fn new(mode: WeightingMode, scheduler: &SchedulerConfig, num_types: usize) -> Self {
        Self {
            mode,
            window_size: scheduler.window_size,
            tau: scheduler.tau,
            num_types,
            rows: Vec::new(),
            evals: Vec::new(),
        }
    }

    /// Evaluation rows of the last evaluated iteration.
    pub fn final_eval(&self) -> &[EvalRow] {
        let n = self.evals.len();
        &self.evals[n.saturating_sub(self.num_types)..]
    }

    /// Largest held-out loss over types at the final evaluation.
    pub fn worst_final_loss(&self) -> f64 {
        self.final_eval()
            .iter()
            .map(|r| r.loss)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes `#`-prefixed run settings, the header, then one line per row.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "# mode={} window_size={} tau={} num_types={}",
            self.mode, self.window_size, self.tau, self.num_types
        )?;
        writeln!(out, "{LOG_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter,
                r.type_id,
                fmt_num(r.loss),
                fmt_num(r.eval_loss),
                fmt_num(r.psnr),
                fmt_num(r.omega),
                fmt_num(r.af)
            )?;
        }
        out.flush()
    }

    /// Parses the output of [`TrainingLog::write_csv`].
    pub fn read_csv(reader: impl BufRead) -> Result<Self, MoeError> {
        let mut lines = reader.lines().enumerate();
        let bad = |line: usize, m: String| MoeError::Data(format!("log line {line}: {m}"));
        let (_, first) = lines.next().ok_or_else(|| bad(1, "empty log".into()))?;
        let first = first.map_err(|e| bad(1, e.to_string()))?;
        let settings = first
            .strip_prefix("# ")
            .ok_or_else(|| bad(1, "missing settings line".into()))?;
        let (mut mode, mut window_size, mut tau, mut num_types) = (None, None, None, None);
        for kv in settings.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(1, format!("bad setting {kv:?}")))?;
            let e = || bad(1, format!("bad value for {k}"));
            match k {
                "mode" => mode = Some(v.parse::<WeightingMode>().map_err(|_| e())?),
                "window_size" => window_size = Some(v.parse::<usize>().map_err(|_| e())?),
                "tau" => tau = Some(v.parse::<f64>().map_err(|_| e())?),
                "num_types" => num_types = Some(v.parse::<usize>().map_err(|_| e())?),
                _ => return Err(bad(1, format!("unknown setting {k:?}"))),
            }
        }
        let missing = || bad(1, "incomplete settings line".into());
        let mut log = TrainingLog {
            mode: mode.ok_or_else(missing)?,
            window_size: window_size.ok_or_else(missing)?,
            tau: tau.ok_or_else(missing)?,
            num_types: num_types.ok_or_else(missing)?,
            rows: Vec::new(),
            evals: Vec::new(),
        };
        match lines.next() {
            Some((_, Ok(h))) if h == LOG_HEADER => {}
            _ => return Err(bad(2, format!("expected header {LOG_HEADER:?}"))),
        }
        for (i, line) in lines {
            let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(i + 1, format!("expected 7 fields, found {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(i + 1, e.to_string()));
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()));
            let row = LogRow {
                iter: int(f[0])?,
                type_id: int(f[1])?,
                loss: num(f[2])?,
                eval_loss: num(f[3])?,
                psnr: num(f[4])?,
                omega: num(f[5])?,
                af: num(f[6])?,
            };
            if !row.eval_loss.is_nan() {
                log.evals.push(EvalRow {
                    iter: row.iter,
                    type_id: row.type_id,
                    loss: row.eval_loss,
                    psnr: row.psnr,
                });
            }
            log.rows.push(row);
        }
        Ok(log)
    }
}

/// Mean held-out L1 loss and PSNR per type, without routing noise.
pub fn evaluate(
    model: &ToyModel,
    data: &TrainingData,
    iter: usize,
) -> Result<Vec<EvalRow>, MoeError> {
    let mut rows = Vec::with_capacity(data.num_types());
    for (type_id, split) in data.types.iter().enumerate() {
        let (mut loss, mut db) = (0.0, 0.0);
        for (degraded, clean) in &split.eval {
            let mut tape = Tape::new();
            let x = tape.constant(to_tensor(degraded));
            let y = model.record(&mut tape, x, false, (0, 0), None)?;
            let l = tape.l1_loss(y, &to_tensor(clean))?;
            loss += tape.value(l)?.item();
            let pred = ImageBuffer::from_chw(
                clean.height(),
                clean.width(),
                clean.channels(),
                tape.value(y)?.data(),
            )?;
            db += psnr(&pred, clean)?.min(100.0);
        }
        let n = split.eval.len().max(1) as f64;
        rows.push(EvalRow {
            iter,
            type_id,
            loss: loss / n,
            psnr: db / n,
        });
    }
    Ok(rows)
}

/// Trains a fresh [`ToyModel`] on `data` with SGD, balancing per-type losses
/// according to `config.mode`.
pub fn train_toy(
    config: &TrainConfig,
    data: &TrainingData,
) -> Result<(ToyModel, TrainingLog), MoeError> {
    let mut log = TrainingLog::new(config.mode, &config.scheduler, data.num_types());
    let model = train_toy_logged(config, data, &mut log)?;
    Ok((model, log))
}

/// Like [`train_toy`], but writes into `log` as it goes, so the rows up to a
/// failure survive it.
pub fn train_toy_logged(
    config: &TrainConfig,
    data: &TrainingData,
    log: &mut TrainingLog,
) -> Result<ToyModel, MoeError> {
    let k = data.num_types();
    *log = TrainingLog::new(config.mode, &config.scheduler, k);
    config.validate()?;
    let sched_config = SchedulerConfig {
        num_types: k,
        ..config.scheduler.clone()
    };
    let mut scheduler = Scheduler::new(sched_config)?;
    let mut model = ToyModel::new(config.model.clone(), derive(config.seed, "model"))?;
    log.rows.reserve(config.iterations * k);

    for iter in 1..=config.iterations {
        let batch = data.batch(config, iter);
        let mut tape = Tape::new();
        let router_seed = config.router_seed(iter);
        let mut nodes = Vec::with_capacity(batch.len());
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (i, ex) in batch.iter().enumerate() {
            let x = tape.constant(ex.input.clone());
            let y = model.record(&mut tape, x, true, (router_seed, i), None)?;
            let l = tape.l1_loss(y, &ex.target)?;
            sums[ex.type_id] += tape.value(l)?.item();
            counts[ex.type_id] += 1;
            nodes.push((ex.type_id, l));
        }
        let losses: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect();
        if let Some((type_id, &value)) = losses.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MoeError::NonFinite {
                iter,
                type_id,
                value,
            });
        }
        let observed: Vec<f64> = losses.iter().map(|&l| l.max(f64::MIN_POSITIVE)).collect();
        let outcome = scheduler.step(&observed)?;
        let (omega, af) = config.mode.weights(&outcome)?;

        let terms: Vec<_> = nodes
            .iter()
            .map(|&(t, node)| (node, k as f64 * omega[t] / counts[t] as f64))
            .collect();
        let total = tape.weighted_sum(&terms)?;
        let grads = tape.backward(total)?;
        model.sgd_step(&grads, config.learning_rate);

        let first_row = log.rows.len();
        for t in 0..k {
            log.rows.push(LogRow {
                iter,
                type_id: t,
                loss: losses[t],
                eval_loss: f64::NAN,
                psnr: f64::NAN,
                omega: omega[t],
                af,
            });
        }
        let due = config.eval_interval > 0 && iter % config.eval_interval == 0;
        if due || iter == config.iterations {
            let evals = evaluate(&model, data, iter)?;
            for (row, e) in log.rows[first_row..].iter_mut().zip(&evals) {
                row.eval_loss = e.loss;
                row.psnr = e.psnr;
            }
            log.evals.extend(evals);
        }
    }
    Ok(model)
}
