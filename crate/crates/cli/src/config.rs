use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Deserializer, Serialize};

use mixrain::distill::DistillConfig;
use mixrain::imaging::CorpusConfig;
use mixrain::moe::TrainConfig;
use mixrain::reweight::SchedulerConfig;
use mixrain::vlm::EndpointConfig;

/// Everything a run can be configured with. Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of all randomness; `--seed` overrides it.
    pub seed: u64,
    pub synth: SynthConfig,
    pub data: DataConfig,
    #[serde(deserialize_with = "train_without_seed")]
    pub train: TrainConfig,
    pub replay: ReplayConfig,
    pub distill: DistillConfig,
    /// Exactly three, unless `--mock-vlm` replaces them.
    pub endpoints: Vec<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub size: usize,
    /// Training pairs per degradation type.
    pub per_type: [usize; 4],
    pub intensity_min: f64,
    pub intensity_max: f64,
    /// Reference scenes of the retrieval corpus; zero skips it.
    pub references: usize,
    pub queries: usize,
    pub embedding_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self {
            size: c.size,
            per_type: c.per_type,
            intensity_min: c.intensity_min,
            intensity_max: c.intensity_max,
            references: 0,
            queries: 0,
            embedding_dim: 16,
        }
    }
}

impl SynthConfig {
    pub fn corpus(&self, base_seed: u64) -> CorpusConfig {
        CorpusConfig {
            size: self.size,
            per_type: self.per_type,
            base_seed,
            intensity_min: self.intensity_min,
            intensity_max: self.intensity_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Held-out pairs per type, taken from the end of each type's list.
    pub eval_per_type: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { eval_per_type: 25 }
    }
}

/// Scheduler settings for `replay`; the number of types comes from the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub window_size: usize,
    pub tau: f64,
    pub warmup_min_points: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        let s = SchedulerConfig::default();
        Self {
            window_size: s.window_size,
            tau: s.tau,
            warmup_min_points: s.warmup_min_points,
        }
    }
}

impl ReplayConfig {
    pub fn scheduler(&self, num_types: usize) -> SchedulerConfig {
        SchedulerConfig {
            num_types,
            window_size: self.window_size,
            tau: self.tau,
            warmup_min_points: self.warmup_min_points,
        }
    }
}

fn train_without_seed<'de, D: Deserializer<'de>>(d: D) -> Result<TrainConfig, D::Error> {
    let table = toml::Table::deserialize(d)?;
    if table.contains_key("seed") {
        return Err(serde::de::Error::custom(
            "train.seed is not allowed; set the top-level seed",
        ));
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(serde::de::Error::custom)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config = Self::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok((config, text))
    }

    pub fn validate_synth(&self) -> Result<()> {
        self.synth.corpus(0).validate()?;
        if self.synth.references == 0 && self.synth.queries > 0 {
            bail!("synth.queries needs synth.references > 0");
        }
        if self.synth.references > 0 && self.synth.embedding_dim == 0 {
            bail!("synth.embedding_dim must be at least 1");
        }
        Ok(())
    }

    pub fn validate_train(&self) -> Result<()> {
        self.train.validate()?;
        Ok(())
    }

    pub fn validate_replay(&self) -> Result<()> {
        self.replay.scheduler(1).validate()?;
        Ok(())
    }

    /// Checks the distill section; endpoints only matter without a mock.
    pub fn validate_distill(&self, mocked: bool) -> Result<()> {
        self.distill.validate()?;
        if !mocked {
            if self.endpoints.len() != 3 {
                bail!(
                    "expected 3 [[endpoints]] entries, found {} (or pass --mock-vlm)",
                    self.endpoints.len()
                );
            }
            for (i, e) in self.endpoints.iter().enumerate() {
                e.validate().with_context(|| format!("endpoint {i}"))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::parse(
            "seed = 4\n[train]\niterations = 10\nmode = \"no-tss\"\n[train.model]\ntop_k = 1\n[distill]\nk1 = 3\n\
             [[endpoints]]\nurl = \"http://localhost:1/x\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.iterations, 10);
        assert_eq!(c.train.model.top_k, 1);
        assert_eq!(c.distill.k1, 3);
        assert_eq!(c.endpoints.len(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sead = 1").is_err());
        assert!(RunConfig::parse("[train]\niters = 1").is_err());
        assert!(RunConfig::parse("[train]\nseed = 1").is_err());
        assert!(RunConfig::parse("[distill]\nk4 = 1").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.distill.k2 = 0;
        assert!(c.validate_distill(true).is_err());
        let c = RunConfig::default();
        assert!(c.validate_distill(false).is_err());
        assert!(c.validate_distill(true).is_ok());
        let mut c = RunConfig::default();
        c.synth.queries = 3;
        assert!(c.validate_synth().is_err());
    }

    #[test]
    fn guide_config_is_valid() {
        let guide = include_str!("../../../book/src/cli.md");
        let text = guide
            .split("```toml\n")
            .nth(1)
            .unwrap()
            .split("```")
            .next()
            .unwrap();
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.endpoints.len(), 3);
        c.validate_synth().unwrap();
        c.validate_train().unwrap();
        c.validate_replay().unwrap();
        c.validate_distill(false).unwrap();
    }
}
