//! Offline loss traces and the weight log they produce.
//!
//! A trace is line-oriented text, one `step,type_id,raw_loss` record per line.
//! Blank lines, `#` comments and a leading header line are ignored. Records of
//! one step must be contiguous and steps must increase.

use std::io::{BufRead, Write};

use super::scheduler::{Scheduler, SchedulerConfig, StepOutcome};
use super::ReweightError;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: u64,
    /// Raw loss per type; `None` where the type was not observed this step.
    pub losses: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub num_types: usize,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("step {step}: {source}")]
    Scheduler {
        step: u64,
        #[source]
        source: ReweightError,
    },
}

impl LossTrace {
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, TraceError> {
        let mut records: Vec<(u64, usize, f64, usize)> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = text.split(',').map(str::trim).collect();
            if records.is_empty() && fields.first().is_some_and(|f| f.parse::<u64>().is_err()) {
                // header
                continue;
            }
            let err = |message: String| TraceError::Parse {
                line: line_no,
                message,
            };
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            }
            let step = fields[0]
                .parse::<u64>()
                .map_err(|e| err(format!("bad step {:?}: {e}", fields[0])))?;
            let type_id = fields[1]
                .parse::<usize>()
                .map_err(|e| err(format!("bad type_id {:?}: {e}", fields[1])))?;
            let loss = fields[2]
                .parse::<f64>()
                .map_err(|e| err(format!("bad raw_loss {:?}: {e}", fields[2])))?;
            if let Some(&(prev, ..)) = records.last() {
                if step < prev {
                    return Err(err(format!("step {step} after step {prev}")));
                }
            }
            records.push((step, type_id, loss, line_no));
        }

        let num_types = records.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let mut steps: Vec<TraceStep> = Vec::new();
        for (step, type_id, loss, line) in records {
            if steps.last().map(|s| s.step) != Some(step) {
                steps.push(TraceStep {
                    step,
                    losses: vec![None; num_types],
                });
            }
            let slot = &mut steps.last_mut().expect("just pushed").losses[type_id];
            if slot.is_some() {
                return Err(TraceError::Parse {
                    line,
                    message: format!("step {step} has type {type_id} twice"),
                });
            }
            *slot = Some(loss);
        }
        Ok(Self { num_types, steps })
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,type_id,raw_loss")?;
        for s in &self.steps {
            for (type_id, loss) in s.losses.iter().enumerate() {
                if let Some(v) = loss {
                    writeln!(out, "{},{},{}", s.step, type_id, v)?;
                }
            }
        }
        Ok(())
    }
}

/// One line of the weight log.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightLogRow {
    pub step: u64,
    pub weights: Vec<f64>,
    pub af: f64,
}

/// Drives a scheduler over a trace. `config.num_types` is raised to the number
/// of types present in the trace if it is smaller.
pub fn replay(
    trace: &LossTrace,
    config: &SchedulerConfig,
) -> Result<Vec<(u64, StepOutcome)>, TraceError> {
    let mut config = config.clone();
    config.num_types = config.num_types.max(trace.num_types);
    let mut scheduler =
        Scheduler::new(config).map_err(|source| TraceError::Scheduler { step: 0, source })?;
    let mut out = Vec::with_capacity(trace.steps.len());
    for s in &trace.steps {
        let mut losses = s.losses.clone();
        losses.resize(scheduler.num_types(), None);
        let outcome = scheduler
            .step_partial(&losses)
            .map_err(|source| TraceError::Scheduler {
                step: s.step,
                source,
            })?;
        out.push((s.step, outcome));
    }
    Ok(out)
}

pub fn write_weight_log<W: Write>(rows: &[WeightLogRow], mut out: W) -> std::io::Result<()> {
    let k = rows.first().map_or(0, |r| r.weights.len());
    let mut header = String::from("step");
    for i in 0..k {
        header.push_str(&format!(",omega_{i}"));
    }
    header.push_str(",af");
    writeln!(out, "{header}")?;
    for row in rows {
        write!(out, "{}", row.step)?;
        for w in &row.weights {
            write!(out, ",{w}")?;
        }
        writeln!(out, ",{}", row.af)?;
    }
    Ok(())
}

pub fn read_weight_log<R: BufRead>(reader: R) -> Result<Vec<WeightLogRow>, TraceError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with("step") || text.starts_with('#') {
            continue;
        }
        let err = |message: String| TraceError::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() < 3 {
            return Err(err(format!(
                "expected at least 3 fields, found {}",
                fields.len()
            )));
        }
        let step = fields[0]
            .parse()
            .map_err(|e| err(format!("bad step: {e}")))?;
        let nums = fields[1..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(format!("bad number: {e}")))?;
        let (af, weights) = nums.split_last().expect("at least two numbers");
        rows.push(WeightLogRow {
            step,
            weights: weights.to_vec(),
            af: *af,
        });
    }
    Ok(rows)
}

impl From<&(u64, StepOutcome)> for WeightLogRow {
    fn from((step, outcome): &(u64, StepOutcome)) -> Self {
        Self {
            step: *step,
            weights: outcome.weights.weights.clone(),
            af: outcome.af,
        }
    }
}
