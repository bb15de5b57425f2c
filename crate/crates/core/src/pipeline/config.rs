use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::clustering::{LossWeights, Similarity};
use crate::encoder::EncoderConfig;
use crate::reasoning::{FallbackConfig, LlmConfig};
use crate::roles::EventThresholds;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonerMode {
    #[default]
    Deterministic,
    Llm,
    /// No reasoning at all: the consistency term is never added and final
    /// labels are the structural argmax.
    Off,
}

impl FromStr for ReasonerMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "llm" => Ok(Self::Llm),
            "off" => Ok(Self::Off),
            other => Err(PipelineError::Config(format!(
                "unknown reasoner `{other}` (expected deterministic, llm or off)"
            ))),
        }
    }
}

impl fmt::Display for ReasonerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Deterministic => "deterministic",
            Self::Llm => "llm",
            Self::Off => "off",
        })
    }
}

/// Weight of the consistency term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// `max(0, 1 - A)` from the latest agreement.
    #[default]
    Adaptive,
    Fixed(f64),
}

impl FromStr for LambdaMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "adaptive" {
            return Ok(Self::Adaptive);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(Self::Fixed)
            .ok_or_else(|| {
                PipelineError::Config(format!(
                    "lambda_llm must be `adaptive` or a number >= 0, got `{s}`"
                ))
            })
    }
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Adaptive => f.write_str("adaptive"),
            Self::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// Snapshot size above which `degree_sample` takes effect.
pub const DEGREE_SAMPLE_MIN_NODES: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    /// Upper bound on the per-snapshot community count `K_t`.
    pub k: usize,
    pub weights: LossWeights,
    pub lambda_llm: LambdaMode,
    pub tau_c: f64,
    pub tau_r: f64,
    /// Activation threshold for secondary-role mentions in descriptions.
    pub theta: f64,
    pub diversity_sign: f64,
    pub prototype_sigma: f64,
    pub similarity: Similarity,
    /// Divide the modularity term by `2|E|` during training.
    pub normalize_modularity: bool,
    /// Rows sampled for the degree-weighted sum of the modularity term on
    /// snapshots with more than [`DEGREE_SAMPLE_MIN_NODES`] nodes; `None`
    /// always uses every row.
    pub degree_sample: Option<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub steps_per_snapshot: usize,
    /// Epochs before centroids are re-seeded from the learned embeddings.
    pub warmup_epochs: usize,
    pub seed: u64,
    pub reasoner: ReasonerMode,
    pub reasoning_every: usize,
    /// Backpropagate through the carried recurrent state across a whole epoch.
    pub bptt: bool,
    pub fallback: FallbackConfig,
    pub llm: LlmConfig,
    pub events: EventThresholds,
    /// Claims sampled for the fidelity score; `None` checks all of them.
    pub efs_samples: Option<usize>,
    pub graph_path: Option<String>,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Small dimensions that train in seconds on a few hundred nodes.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            k: 8,
            weights: LossWeights::default(),
            lambda_llm: LambdaMode::Adaptive,
            tau_c: 0.5,
            tau_r: 0.5,
            theta: 0.15,
            diversity_sign: 1.0,
            prototype_sigma: 0.01,
            similarity: Similarity::Cosine,
            normalize_modularity: true,
            learning_rate: 3e-3,
            epochs: 50,
            steps_per_snapshot: 2,
            warmup_epochs: 10,
            seed: 0,
            reasoner: ReasonerMode::Deterministic,
            reasoning_every: 5,
            bptt: false,
            fallback: FallbackConfig::default(),
            llm: LlmConfig::default(),
            events: EventThresholds::default(),
            efs_samples: None,
            degree_sample: None,
            graph_path: None,
            out_dir: None,
        }
    }

    /// Full-size embedding widths.
    pub fn full() -> Self {
        Self {
            encoder: EncoderConfig::full_scale(EncoderConfig::default().d_in),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.encoder.validate()?;
        self.weights.validate()?;
        self.fallback.validate()?;
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.k < 2 {
            return fail(format!("k must be at least 2, got {}", self.k));
        }
        for (name, v) in [
            ("tau_c", self.tau_c),
            ("tau_r", self.tau_r),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return fail(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if !self.diversity_sign.is_finite()
            || !(self.prototype_sigma >= 0.0 && self.prototype_sigma.is_finite())
        {
            return fail("diversity_sign and prototype_sigma must be finite (sigma >= 0)".into());
        }
        if self.steps_per_snapshot == 0 || self.reasoning_every == 0 {
            return fail("steps and reasoning_every must be at least 1".into());
        }
        if self.degree_sample == Some(0) {
            return fail("degree_sample must be positive".into());
        }
        if self.efs_samples == Some(0) {
            return fail("efs_samples must be positive".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines (with `#` comments) on top of the
    /// preset named by an optional `preset = desk|full` line.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::ConfigLine {
                    line: idx + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                })?;
            entries.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let mut config = match entries.iter().find(|(_, k, _)| k == "preset") {
            Some((line, _, v)) => match v.as_str() {
                "desk" => Self::desk(),
                "full" => Self::full(),
                other => {
                    return Err(PipelineError::ConfigLine {
                        line: *line,
                        message: format!("unknown preset `{other}`"),
                    })
                }
            },
            None => Self::desk(),
        };
        for (line, key, value) in &entries {
            if key != "preset" {
                config
                    .set(key, value)
                    .map_err(|e| PipelineError::ConfigLine {
                        line: *line,
                        message: e.to_string(),
                    })?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
            value
                .parse()
                .map_err(|_| PipelineError::Config(format!("invalid value `{value}` for `{key}`")))
        }
        fn opt_path(value: &str) -> Option<String> {
            (!value.is_empty()).then(|| value.to_string())
        }
        match key {
            "layers" => self.encoder.layers = num(key, value)?,
            "d_in" => self.encoder.d_in = num(key, value)?,
            "d" => self.encoder.d = num(key, value)?,
            "d_r" => self.encoder.d_r = num(key, value)?,
            "d_c" => self.encoder.d_c = num(key, value)?,
            "slope" => self.encoder.slope = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "lambda1" => self.weights.lambda1 = num(key, value)?,
            "lambda2" => self.weights.lambda2 = num(key, value)?,
            "lambda_llm" => self.lambda_llm = value.parse()?,
            "alpha_sens" => self.weights.alpha_sens = num(key, value)?,
            "alpha_blend" => self.weights.alpha_blend = num(key, value)?,
            "tau_conf" => self.weights.tau_conf = num(key, value)?,
            "tau_c" => self.tau_c = num(key, value)?,
            "tau_r" => self.tau_r = num(key, value)?,
            "theta" => self.theta = num(key, value)?,
            "diversity_sign" => self.diversity_sign = num(key, value)?,
            "prototype_sigma" => self.prototype_sigma = num(key, value)?,
            "similarity" => {
                self.similarity = match value {
                    "dot" => Similarity::Dot,
                    "cosine" => Similarity::Cosine,
                    _ => {
                        return Err(PipelineError::Config(format!(
                            "similarity must be dot or cosine, got `{value}`"
                        )))
                    }
                }
            }
            "normalize_modularity" => self.normalize_modularity = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "steps" => self.steps_per_snapshot = num(key, value)?,
            "warmup_epochs" => self.warmup_epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "reasoner" => self.reasoner = value.parse()?,
            "reasoning_every" => self.reasoning_every = num(key, value)?,
            "bptt" => self.bptt = num(key, value)?,
            "fallback_weights" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| num(key, p.trim()))
                    .collect::<Result<_, _>>()?;
                self.fallback.weights = parts.try_into().map_err(|_| {
                    PipelineError::Config(
                        "fallback_weights needs five comma-separated values".into(),
                    )
                })?;
            }
            "fallback_temperature" => self.fallback.temperature = num(key, value)?,
            "llm_timeout_secs" => self.llm.timeout_secs = num(key, value)?,
            "llm_parallelism" => self.llm.parallelism = num(key, value)?,
            "llm_budget" => {
                self.llm.budget = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "tau_min" => self.events.tau_min = num(key, value)?,
            "shift_threshold" => self.events.shift = num(key, value)?,
            "leader_threshold" => self.events.leader = num(key, value)?,
            "split_threshold" => self.events.split = num(key, value)?,
            "degree_sample" => {
                self.degree_sample = if value == "all" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "efs_samples" => {
                self.efs_samples = if value == "all" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "graph" => self.graph_path = opt_path(value),
            "out" => self.out_dir = opt_path(value),
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown configuration key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse` reads it back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let e = &self.encoder;
        put("layers", e.layers.to_string());
        put("d_in", e.d_in.to_string());
        put("d", e.d.to_string());
        put("d_r", e.d_r.to_string());
        put("d_c", e.d_c.to_string());
        put("slope", format!("{:?}", e.slope));
        put("k", self.k.to_string());
        put("lambda1", format!("{:?}", self.weights.lambda1));
        put("lambda2", format!("{:?}", self.weights.lambda2));
        put("lambda_llm", self.lambda_llm.to_string());
        put("alpha_sens", format!("{:?}", self.weights.alpha_sens));
        put("alpha_blend", format!("{:?}", self.weights.alpha_blend));
        put("tau_conf", format!("{:?}", self.weights.tau_conf));
        put("tau_c", format!("{:?}", self.tau_c));
        put("tau_r", format!("{:?}", self.tau_r));
        put("theta", format!("{:?}", self.theta));
        put("diversity_sign", format!("{:?}", self.diversity_sign));
        put("prototype_sigma", format!("{:?}", self.prototype_sigma));
        put(
            "similarity",
            match self.similarity {
                Similarity::Dot => "dot",
                Similarity::Cosine => "cosine",
            }
            .into(),
        );
        put(
            "normalize_modularity",
            self.normalize_modularity.to_string(),
        );
        put("learning_rate", format!("{:?}", self.learning_rate));
        put("epochs", self.epochs.to_string());
        put("steps", self.steps_per_snapshot.to_string());
        put("warmup_epochs", self.warmup_epochs.to_string());
        put("seed", self.seed.to_string());
        put("reasoner", self.reasoner.to_string());
        put("reasoning_every", self.reasoning_every.to_string());
        put("bptt", self.bptt.to_string());
        put(
            "fallback_weights",
            self.fallback
                .weights
                .iter()
                .map(|w| format!("{w:?}"))
                .collect::<Vec<_>>()
                .join(", "),
        );
        put(
            "fallback_temperature",
            format!("{:?}", self.fallback.temperature),
        );
        put("llm_timeout_secs", self.llm.timeout_secs.to_string());
        put("llm_parallelism", self.llm.parallelism.to_string());
        put(
            "llm_budget",
            self.llm.budget.map_or("none".into(), |b| b.to_string()),
        );
        put("tau_min", self.events.tau_min.to_string());
        put("shift_threshold", format!("{:?}", self.events.shift));
        put("leader_threshold", format!("{:?}", self.events.leader));
        put("split_threshold", format!("{:?}", self.events.split));
        put(
            "degree_sample",
            self.degree_sample.map_or("all".into(), |n| n.to_string()),
        );
        put(
            "efs_samples",
            self.efs_samples.map_or("all".into(), |n| n.to_string()),
        );
        if let Some(p) = &self.graph_path {
            put("graph", p.clone());
        }
        if let Some(p) = &self.out_dir {
            put("out", p.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::full();
        c.seed = 42;
        c.lambda_llm = LambdaMode::Fixed(0.5);
        c.llm.budget = Some(10);
        c.graph_path = Some("g.txt".into());
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(
            RunConfig::parse(&RunConfig::desk().to_text()).unwrap(),
            RunConfig::desk()
        );
    }

    #[test]
    fn presets_and_overrides() {
        let c = RunConfig::parse("# comment\nk = 3\npreset = full\n").unwrap();
        assert_eq!(
            (c.encoder.d, c.encoder.d_r, c.encoder.d_c, c.k),
            (512, 128, 384, 3)
        );
        let d = RunConfig::desk();
        assert_eq!((d.encoder.d, d.encoder.d_r, d.encoder.d_c), (64, 16, 48));
        assert_eq!(
            (d.tau_c, d.tau_r, d.weights.tau_conf, d.weights.alpha_blend),
            (0.5, 0.5, 0.8, 0.7)
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        match RunConfig::parse("k = 3\nbogus = 1\n") {
            Err(PipelineError::ConfigLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("k = 1\n").is_err());
        assert!(RunConfig::parse("just text\n").is_err());
        assert!(RunConfig::parse("reasoner = oracle\n").is_err());
    }
}
