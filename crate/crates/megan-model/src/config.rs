//! Network hyperparameters and their byte-stable text form.
//!
//! The text form (one `key value` line per field, keys sorted) is stored
//! inside checkpoint bundles so a saved model can be reloaded without any
//! out-of-band knowledge. Parsing is strict: unknown keys, duplicate keys,
//! and missing keys are all errors, because a silently defaulted field would
//! change what a checkpoint computes.

use crate::ModelError;
use megan_chem::Direction;

const CONFIG_VERSION: &str = "megan-model-config v1";

/// Hyperparameters of the network. `Default` gives the full-scale
/// configuration; tests and the overfit harness shrink the dims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Width of embedded node features; also the output width of every
    /// attention layer, so layers stack without projections.
    pub atom_embed_dim: usize,
    /// Width of embedded bond features.
    pub bond_embed_dim: usize,
    /// Number of attention heads per layer.
    pub attention_heads: usize,
    /// Width of the per-node projection fed into attention scoring.
    pub attention_inner_dim: usize,
    /// Hidden width of the two-layer atom and bond action heads.
    pub head_hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Hard cap on edit-sequence length, Stop included.
    pub max_steps: usize,
    /// Which way sequences edit: product→substrates or substrates→product.
    pub direction: Direction,
    /// Add a learned per-class vector to the supernode row after embedding.
    pub use_reaction_type: bool,
    /// Size of the reaction-type embedding table (ignored unless
    /// `use_reaction_type`).
    pub reaction_type_classes: usize,
    /// Alternate step recurrence: at t > 1 run the encoder over the carried
    /// node state and max-combine with that state, instead of max-combining
    /// the carried state with the fresh embedding. Both variants share the
    /// same parameters; see `forward_step`.
    pub literal_recurrence: bool,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            atom_embed_dim: 128,
            bond_embed_dim: 128,
            attention_heads: 8,
            attention_inner_dim: 128,
            head_hidden_dim: 1024,
            encoder_layers: 6,
            decoder_layers: 2,
            max_steps: 16,
            direction: Direction::Retro,
            use_reaction_type: false,
            reaction_type_classes: 10,
            literal_recurrence: false,
        }
    }
}

impl ModelConfig {
    /// Width each attention head contributes to the layer output.
    pub fn per_head_dim(&self) -> usize {
        self.atom_embed_dim / self.attention_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive: [(&str, usize); 8] = [
            ("atom_embed_dim", self.atom_embed_dim),
            ("bond_embed_dim", self.bond_embed_dim),
            ("attention_heads", self.attention_heads),
            ("attention_inner_dim", self.attention_inner_dim),
            ("head_hidden_dim", self.head_hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("max_steps", self.max_steps),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.atom_embed_dim % self.attention_heads != 0 {
            return Err(ModelError::Config(format!(
                "atom_embed_dim {} must be divisible by attention_heads {}",
                self.atom_embed_dim, self.attention_heads
            )));
        }
        if self.use_reaction_type && self.reaction_type_classes == 0 {
            return Err(ModelError::Config(
                "use_reaction_type requires reaction_type_classes >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Serialize as a version line plus sorted `key value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::from(CONFIG_VERSION);
        out.push('\n');
        let lines = [
            format!("atom_embed_dim {}", self.atom_embed_dim),
            format!("attention_heads {}", self.attention_heads),
            format!("attention_inner_dim {}", self.attention_inner_dim),
            format!("bond_embed_dim {}", self.bond_embed_dim),
            format!("decoder_layers {}", self.decoder_layers),
            format!("direction {}", self.direction.as_str()),
            format!("encoder_layers {}", self.encoder_layers),
            format!("head_hidden_dim {}", self.head_hidden_dim),
            format!("literal_recurrence {}", self.literal_recurrence),
            format!("max_steps {}", self.max_steps),
            format!("reaction_type_classes {}", self.reaction_type_classes),
            format!("use_reaction_type {}", self.use_reaction_type),
        ];
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ModelConfig, ModelError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, v)) if v == CONFIG_VERSION => {}
            Some((_, v)) => return Err(ModelError::Version(v.to_string())),
            None => return Err(ModelError::Version(String::new())),
        }
        let mut cfg = ModelConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        let malformed = |line: usize, message: String| ModelError::Malformed { line, message };
        for (idx, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| malformed(lineno, format!("expected 'key value', got {line:?}")))?;
            if seen.contains(&key) {
                return Err(malformed(lineno, format!("duplicate key {key:?}")));
            }
            let parse_usize = |v: &str| {
                v.parse::<usize>().map_err(|_| malformed(lineno, format!("bad integer {v:?}")))
            };
            let parse_bool = |v: &str| match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(malformed(lineno, format!("bad boolean {v:?}"))),
            };
            match key {
                "atom_embed_dim" => cfg.atom_embed_dim = parse_usize(value)?,
                "attention_heads" => cfg.attention_heads = parse_usize(value)?,
                "attention_inner_dim" => cfg.attention_inner_dim = parse_usize(value)?,
                "bond_embed_dim" => cfg.bond_embed_dim = parse_usize(value)?,
                "decoder_layers" => cfg.decoder_layers = parse_usize(value)?,
                "direction" => {
                    cfg.direction = Direction::parse(value)
                        .ok_or_else(|| malformed(lineno, format!("bad direction {value:?}")))?
                }
                "encoder_layers" => cfg.encoder_layers = parse_usize(value)?,
                "head_hidden_dim" => cfg.head_hidden_dim = parse_usize(value)?,
                "literal_recurrence" => cfg.literal_recurrence = parse_bool(value)?,
                "max_steps" => cfg.max_steps = parse_usize(value)?,
                "reaction_type_classes" => cfg.reaction_type_classes = parse_usize(value)?,
                "use_reaction_type" => cfg.use_reaction_type = parse_bool(value)?,
                _ => return Err(malformed(lineno, format!("unknown key {key:?}"))),
            }
            seen.push(key);
        }
        let required = [
            "atom_embed_dim",
            "attention_heads",
            "attention_inner_dim",
            "bond_embed_dim",
            "decoder_layers",
            "direction",
            "encoder_layers",
            "head_hidden_dim",
            "literal_recurrence",
            "max_steps",
            "reaction_type_classes",
            "use_reaction_type",
        ];
        for key in required {
            if !seen.contains(&key) {
                return Err(malformed(0, format!("missing key {key:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_has_full_scale_dims() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.atom_embed_dim, 128);
        assert_eq!(cfg.bond_embed_dim, 128);
        assert_eq!(cfg.attention_heads, 8);
        assert_eq!(cfg.attention_inner_dim, 128);
        assert_eq!(cfg.head_hidden_dim, 1024);
        assert_eq!(cfg.encoder_layers, 6);
        assert_eq!(cfg.decoder_layers, 2);
        assert_eq!(cfg.per_head_dim(), 16);
        cfg.validate().unwrap();
    }

    #[test]
    fn head_divisibility_is_enforced() {
        let cfg = ModelConfig { attention_heads: 7, ..ModelConfig::default() };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn zero_dims_rejected() {
        let cfg = ModelConfig { decoder_layers: 0, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { head_hidden_dim: 0, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn text_round_trip_is_byte_stable() {
        let cfg = ModelConfig {
            atom_embed_dim: 16,
            attention_heads: 4,
            attention_inner_dim: 12,
            direction: Direction::Forward,
            use_reaction_type: true,
            literal_recurrence: true,
            ..ModelConfig::default()
        };
        let text = cfg.to_text();
        let back = ModelConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(matches!(
            ModelConfig::from_text("nonsense v9\n"),
            Err(ModelError::Version(_))
        ));
        let good = ModelConfig::default().to_text();
        // Duplicate key.
        let dup = format!("{good}atom_embed_dim 64\n");
        assert!(matches!(ModelConfig::from_text(&dup), Err(ModelError::Malformed { .. })));
        // Unknown key.
        let unknown = format!("{good}frobnication 3\n");
        assert!(matches!(ModelConfig::from_text(&unknown), Err(ModelError::Malformed { .. })));
        // Missing key.
        let missing: String = good.lines().filter(|l| !l.starts_with("direction")).fold(
            String::new(),
            |mut acc, l| {
                acc.push_str(l);
                acc.push('\n');
                acc
            },
        );
        let err = ModelConfig::from_text(&missing).unwrap_err();
        assert!(err.to_string().contains("direction"), "{err}");
        // Bad value.
        let bad = good.replace("direction retro", "direction sideways");
        assert!(ModelConfig::from_text(&bad).is_err());
        // Values that parse but violate invariants.
        let invalid = good.replace("attention_heads 8", "attention_heads 3");
        assert!(matches!(ModelConfig::from_text(&invalid), Err(ModelError::Config(_))));
    }
}
