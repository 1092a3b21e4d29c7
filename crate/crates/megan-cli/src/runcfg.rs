//! The run configuration: one flat `key value` text file shared by every
//! subcommand.
//!
//! A run is reproducible only if every artifact can be traced back to the
//! exact settings that produced it, so the canonical text form (version line
//! plus sorted `key value` lines) is echoed into each output together with
//! its SHA-256 hash. Parsing is strict about *unknown* and *duplicate* keys
//! — both name the offending key — but missing keys fall back to defaults,
//! so a config file only needs the settings that differ.
//!
//! Model hyperparameters live under `model.*` and optimizer settings under
//! `train.*`; everything else is a top-level key. The file never stores the
//! command-line overrides (`--seed`, `--beam`, ...): those are applied after
//! loading and become part of the echoed text, so artifacts always reflect
//! the *effective* configuration.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use megan_chem::{Direction, FitOptions, OrderingPolicy, OrderingStrategy};
use megan_model::{BeamConfig, ModelConfig, TrainConfig};
use sha2::{Digest, Sha256};

const CONFIG_VERSION: &str = "megan-run-config v1";

/// Effective settings for one run. `Default` is the full-scale
/// retrosynthesis setup.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub direction: Direction,
    /// Linearization order for ground-truth edit sequences.
    pub ordering: OrderingStrategy,
    /// Global seed; per-reaction and per-epoch RNG streams derive from it.
    pub seed: u64,
    /// Hard cap on edit-sequence length during preprocessing, Stop included.
    /// Also the model's declared maximum.
    pub max_seq_steps: usize,
    /// Preprocess exits nonzero when the accepted fraction drops below this.
    pub min_acceptance: f64,
    /// Keep chirality and bond-stereo feature blocks.
    pub use_stereo: bool,
    /// Add the contributes-to-target atom feature and compute per-atom marks.
    pub mark_contribution: bool,
    /// Condition the model on the 1..10 reaction class.
    pub reaction_type_prior: bool,
    /// Beam width; `None` picks the per-direction default.
    pub beam_width: Option<usize>,
    /// Decode step cap; `None` picks the per-direction default.
    pub beam_max_steps: Option<usize>,
    pub beam_length_normalize: bool,
    /// Cutoffs for top-k accuracy reports.
    pub eval_ks: Vec<usize>,
    pub model_atom_embed_dim: usize,
    pub model_bond_embed_dim: usize,
    pub model_attention_heads: usize,
    pub model_attention_inner_dim: usize,
    pub model_head_hidden_dim: usize,
    pub model_encoder_layers: usize,
    pub model_decoder_layers: usize,
    pub model_reaction_type_classes: usize,
    pub model_literal_recurrence: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let model = ModelConfig::default();
        RunConfig {
            direction: Direction::Retro,
            ordering: OrderingStrategy::BfsRandAt,
            seed: 0,
            max_seq_steps: model.max_steps,
            min_acceptance: 0.5,
            use_stereo: true,
            mark_contribution: false,
            reaction_type_prior: false,
            beam_width: None,
            beam_max_steps: None,
            beam_length_normalize: false,
            eval_ks: megan_model::DEFAULT_KS.to_vec(),
            model_atom_embed_dim: model.atom_embed_dim,
            model_bond_embed_dim: model.bond_embed_dim,
            model_attention_heads: model.attention_heads,
            model_attention_inner_dim: model.attention_inner_dim,
            model_head_hidden_dim: model.head_hidden_dim,
            model_encoder_layers: model.encoder_layers,
            model_decoder_layers: model.decoder_layers,
            model_reaction_type_classes: model.reaction_type_classes,
            model_literal_recurrence: model.literal_recurrence,
            train: TrainConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the loaded file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub direction: Option<Direction>,
    pub ordering: Option<OrderingStrategy>,
    pub beam: Option<usize>,
    pub max_steps: Option<usize>,
    pub reaction_type_prior: bool,
}

impl RunConfig {
    /// Load from a file if given, otherwise start from defaults; then apply
    /// command-line overrides and validate.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                RunConfig::from_text(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(direction) = overrides.direction {
            cfg.direction = direction;
        }
        if let Some(ordering) = overrides.ordering {
            cfg.ordering = ordering;
        }
        if let Some(beam) = overrides.beam {
            cfg.beam_width = Some(beam);
        }
        if let Some(max_steps) = overrides.max_steps {
            cfg.beam_max_steps = Some(max_steps);
        }
        if overrides.reaction_type_prior {
            cfg.reaction_type_prior = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form: version line plus sorted `key value` lines.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| match v {
            Some(n) => n.to_string(),
            None => "auto".into(),
        };
        let opt64 = |v: Option<u64>| match v {
            Some(n) => n.to_string(),
            None => "none".into(),
        };
        let ks: Vec<String> = self.eval_ks.iter().map(|k| k.to_string()).collect();
        let mut out = String::new();
        let _ = writeln!(out, "{CONFIG_VERSION}");
        let _ = writeln!(out, "beam_length_normalize {}", self.beam_length_normalize);
        let _ = writeln!(out, "beam_max_steps {}", opt(self.beam_max_steps));
        let _ = writeln!(out, "beam_width {}", opt(self.beam_width));
        let _ = writeln!(out, "direction {}", self.direction.as_str());
        let _ = writeln!(out, "eval_ks {}", ks.join(","));
        let _ = writeln!(out, "mark_contribution {}", self.mark_contribution);
        let _ = writeln!(out, "max_seq_steps {}", self.max_seq_steps);
        let _ = writeln!(out, "min_acceptance {}", self.min_acceptance);
        let _ = writeln!(out, "model.atom_embed_dim {}", self.model_atom_embed_dim);
        let _ = writeln!(out, "model.attention_heads {}", self.model_attention_heads);
        let _ = writeln!(out, "model.attention_inner_dim {}", self.model_attention_inner_dim);
        let _ = writeln!(out, "model.bond_embed_dim {}", self.model_bond_embed_dim);
        let _ = writeln!(out, "model.decoder_layers {}", self.model_decoder_layers);
        let _ = writeln!(out, "model.encoder_layers {}", self.model_encoder_layers);
        let _ = writeln!(out, "model.head_hidden_dim {}", self.model_head_hidden_dim);
        let _ = writeln!(out, "model.literal_recurrence {}", self.model_literal_recurrence);
        let _ = writeln!(out, "model.reaction_type_classes {}", self.model_reaction_type_classes);
        let _ = writeln!(out, "ordering {}", self.ordering.as_str());
        let _ = writeln!(out, "reaction_type_prior {}", self.reaction_type_prior);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "train.batch_size {}", self.train.batch_size);
        let _ = writeln!(out, "train.decay_factor {}", self.train.decay_factor);
        let _ = writeln!(out, "train.decay_patience {}", self.train.decay_patience);
        let _ = writeln!(out, "train.eval_every_samples {}", self.train.eval_every_samples);
        let _ = writeln!(out, "train.eval_subset {}", self.train.eval_subset);
        let _ = writeln!(out, "train.lr0 {}", self.train.lr0);
        let _ = writeln!(out, "train.max_epochs {}", opt64(self.train.max_epochs));
        let _ = writeln!(out, "train.max_optimizer_steps {}", opt64(self.train.max_optimizer_steps));
        let _ = writeln!(out, "train.stop_patience {}", self.train.stop_patience);
        let _ = writeln!(out, "train.warmup_steps {}", self.train.warmup_steps);
        let _ = writeln!(out, "use_stereo {}", self.use_stereo);
        out
    }

    /// SHA-256 of the canonical text, as lowercase hex. This is the hash
    /// echoed into every artifact.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }

    /// Parse the text produced by [`RunConfig::to_text`]. Unknown and
    /// duplicate keys are errors naming the key; missing keys default.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some(CONFIG_VERSION) => {}
            other => bail!("unsupported config version line {other:?}"),
        }
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in lines.enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .with_context(|| format!("config line {}: missing value in {line:?}", idx + 2))?;
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                bail!("duplicate config key {key:?}");
            }
            seen.push(key.to_string());
            cfg.set_key(key, value)
                .with_context(|| format!("config key {key:?} (line {})", idx + 2))?;
        }
        Ok(cfg)
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| anyhow::anyhow!("invalid value {value:?}: {e}"))
        }
        fn flag(value: &str) -> Result<bool> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => bail!("invalid value {value:?}: expected true or false"),
            }
        }
        fn opt_num(value: &str) -> Result<Option<usize>> {
            if value == "auto" {
                Ok(None)
            } else {
                num(value).map(Some)
            }
        }
        fn opt_u64(value: &str) -> Result<Option<u64>> {
            if value == "none" {
                Ok(None)
            } else {
                num(value).map(Some)
            }
        }
        match key {
            "beam_length_normalize" => self.beam_length_normalize = flag(value)?,
            "beam_max_steps" => self.beam_max_steps = opt_num(value)?,
            "beam_width" => self.beam_width = opt_num(value)?,
            "direction" => {
                self.direction = Direction::parse(value)
                    .with_context(|| format!("invalid direction {value:?}"))?;
            }
            "eval_ks" => {
                let mut ks = Vec::new();
                for part in value.split(',') {
                    ks.push(num::<usize>(part.trim())?);
                }
                self.eval_ks = ks;
            }
            "mark_contribution" => self.mark_contribution = flag(value)?,
            "max_seq_steps" => self.max_seq_steps = num(value)?,
            "min_acceptance" => self.min_acceptance = num(value)?,
            "model.atom_embed_dim" => self.model_atom_embed_dim = num(value)?,
            "model.attention_heads" => self.model_attention_heads = num(value)?,
            "model.attention_inner_dim" => self.model_attention_inner_dim = num(value)?,
            "model.bond_embed_dim" => self.model_bond_embed_dim = num(value)?,
            "model.decoder_layers" => self.model_decoder_layers = num(value)?,
            "model.encoder_layers" => self.model_encoder_layers = num(value)?,
            "model.head_hidden_dim" => self.model_head_hidden_dim = num(value)?,
            "model.literal_recurrence" => self.model_literal_recurrence = flag(value)?,
            "model.reaction_type_classes" => self.model_reaction_type_classes = num(value)?,
            "ordering" => {
                self.ordering = OrderingStrategy::parse(value)
                    .with_context(|| format!("invalid ordering {value:?}"))?;
            }
            "reaction_type_prior" => self.reaction_type_prior = flag(value)?,
            "seed" => self.seed = num(value)?,
            "train.batch_size" => self.train.batch_size = num(value)?,
            "train.decay_factor" => self.train.decay_factor = num(value)?,
            "train.decay_patience" => self.train.decay_patience = num(value)?,
            "train.eval_every_samples" => self.train.eval_every_samples = num(value)?,
            "train.eval_subset" => self.train.eval_subset = num(value)?,
            "train.lr0" => self.train.lr0 = num(value)?,
            "train.max_epochs" => self.train.max_epochs = opt_u64(value)?,
            "train.max_optimizer_steps" => self.train.max_optimizer_steps = opt_u64(value)?,
            "train.stop_patience" => self.train.stop_patience = num(value)?,
            "train.warmup_steps" => self.train.warmup_steps = num(value)?,
            "use_stereo" => self.use_stereo = flag(value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_acceptance) {
            bail!("min_acceptance {} outside [0, 1]", self.min_acceptance);
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            bail!("eval_ks must be a non-empty list of positive cutoffs");
        }
        if self.beam_width == Some(0) {
            bail!("beam_width must be positive");
        }
        if self.beam_max_steps == Some(0) {
            bail!("beam_max_steps must be positive");
        }
        self.model_config().validate().map_err(anyhow::Error::from)?;
        self.train_config().validate().map_err(anyhow::Error::from)?;
        Ok(())
    }

    /// The network hyperparameters this run trains or decodes with.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            atom_embed_dim: self.model_atom_embed_dim,
            bond_embed_dim: self.model_bond_embed_dim,
            attention_heads: self.model_attention_heads,
            attention_inner_dim: self.model_attention_inner_dim,
            head_hidden_dim: self.model_head_hidden_dim,
            encoder_layers: self.model_encoder_layers,
            decoder_layers: self.model_decoder_layers,
            max_steps: self.max_seq_steps,
            direction: self.direction,
            use_reaction_type: self.reaction_type_prior,
            reaction_type_classes: self.model_reaction_type_classes,
            literal_recurrence: self.model_literal_recurrence,
        }
    }

    /// Optimizer settings with the global seed threaded in.
    pub fn train_config(&self) -> TrainConfig {
        let mut train = self.train.clone();
        train.seed = self.seed;
        train
    }

    /// Decoding settings for an explicitly given direction — prediction
    /// follows the checkpoint's direction, which may differ from the config
    /// file's. Unset width and step cap fall back to the per-direction
    /// defaults.
    pub fn beam_config_for(&self, direction: Direction) -> BeamConfig {
        let mut beam = BeamConfig::for_direction(direction);
        if let Some(width) = self.beam_width {
            beam.width = width;
        }
        if let Some(max_steps) = self.beam_max_steps {
            beam.max_steps = max_steps;
        }
        beam.length_normalize = self.beam_length_normalize;
        beam
    }

    /// Featurization choices for fitting a feature config.
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            use_stereo: self.use_stereo,
            reaction_type_classes: if self.reaction_type_prior {
                self.model_reaction_type_classes
            } else {
                0
            },
            mark_product_contribution: self.mark_contribution,
        }
    }

    /// Linearization policy for ground-truth sequence generation.
    pub fn ordering_policy(&self) -> OrderingPolicy {
        OrderingPolicy { strategy: self.ordering, rng_seed: self.seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips_and_hash_is_stable() {
        let mut cfg = RunConfig::default();
        cfg.seed = 17;
        cfg.direction = Direction::Forward;
        cfg.beam_width = Some(5);
        cfg.train.max_epochs = Some(3);
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).expect("round trip parses");
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let text = format!("{CONFIG_VERSION}\nbeam_widht 7\n");
        let err = format!("{:#}", RunConfig::from_text(&text).unwrap_err());
        assert!(err.contains("beam_widht"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected_by_name() {
        let text = format!("{CONFIG_VERSION}\nseed 1\nseed 2\n");
        let err = format!("{:#}", RunConfig::from_text(&text).unwrap_err());
        assert!(err.contains("\"seed\""), "{err}");
    }

    #[test]
    fn partial_file_fills_remaining_defaults() {
        let text = format!("{CONFIG_VERSION}\nseed 9\ndirection forward\n");
        let cfg = RunConfig::from_text(&text).expect("partial config parses");
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.direction, Direction::Forward);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.eval_ks, megan_model::DEFAULT_KS.to_vec());
    }

    #[test]
    fn overrides_apply_after_loading() {
        let overrides = Overrides {
            seed: Some(42),
            direction: Some(Direction::Forward),
            beam: Some(3),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(None, &overrides).expect("defaults resolve");
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.direction, Direction::Forward);
        assert_eq!(cfg.beam_width, Some(3));
        // The beam step cap stays on the per-direction default.
        let beam = cfg.beam_config();
        assert_eq!(beam.width, 3);
        assert_eq!(beam.max_steps, BeamConfig::for_direction(Direction::Forward).max_steps);
    }

    #[test]
    fn beam_defaults_differ_by_direction() {
        let retro = RunConfig::default().beam_config();
        let forward = RunConfig { direction: Direction::Forward, ..RunConfig::default() }
            .beam_config();
        assert!(retro.width > forward.width);
    }

    #[test]
    fn validation_rejects_inconsistent_model_dims() {
        let cfg = RunConfig { model_attention_heads: 7, ..RunConfig::default() };
        assert!(cfg.validate().is_err(), "128 is not divisible by 7 heads");
    }
}
