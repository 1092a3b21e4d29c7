//! Parameter shapes, seeded initialization, and tape binding.
//!
//! Every parameter carries a stable dotted name (`enc.3.att.w`,
//! `head.bond.out.b`, ...). The full set of (name, shape) pairs is a pure
//! function of the config, the action vocabulary, and the feature widths, so
//! a checkpoint can be checked against the config it claims to match, and
//! initialization is reproducible: one seeded stream, drawn in a fixed
//! enumeration order.

use crate::{ModelConfig, ModelError};
use megan_chem::{ActionVocab, FeatureConfig};
use megan_tensor::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub(crate) struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Weights draw from a fan-in-scaled uniform; biases start at zero.
    pub is_weight: bool,
}

fn weight(name: String, rows: usize, cols: usize) -> ParamSpec {
    ParamSpec { name, rows, cols, is_weight: true }
}

fn bias(name: String, cols: usize) -> ParamSpec {
    ParamSpec { name, rows: 1, cols, is_weight: false }
}

/// All parameters of the architecture, in the canonical enumeration order
/// used for both initialization draws and parameter counting.
///
/// `atom_out_cols` counts the per-node action columns including the Stop
/// column (always last); `bond_out_cols` counts the per-pair action columns.
pub(crate) fn param_shapes(
    cfg: &ModelConfig,
    atom_width: usize,
    bond_width: usize,
    atom_out_cols: usize,
    bond_out_cols: usize,
) -> Vec<ParamSpec> {
    let n_a = cfg.atom_embed_dim;
    let n_b = cfg.bond_embed_dim;
    let d = cfg.attention_inner_dim;
    let n_h = cfg.head_hidden_dim;
    let per_head = cfg.per_head_dim();

    let mut specs = vec![
        weight("embed.atom.w".into(), atom_width, n_a),
        bias("embed.atom.b".into(), n_a),
        weight("embed.bond.w".into(), bond_width, n_b),
        bias("embed.bond.b".into(), n_b),
    ];
    if cfg.use_reaction_type {
        specs.push(weight("embed.rtype".into(), cfg.reaction_type_classes, n_a));
    }
    for (stack, depth) in [("enc", cfg.encoder_layers), ("dec", cfg.decoder_layers)] {
        for l in 0..depth {
            specs.push(weight(format!("{stack}.{l}.att.w"), n_a, d));
            specs.push(bias(format!("{stack}.{l}.att.b"), d));
            // Scores one attention logit per head from dst-proj ∥ src-proj ∥ bond.
            specs.push(weight(format!("{stack}.{l}.score.w"), 2 * d + n_b, cfg.attention_heads));
            specs.push(bias(format!("{stack}.{l}.score.b"), cfg.attention_heads));
            for k in 0..cfg.attention_heads {
                specs.push(weight(format!("{stack}.{l}.head{k}.w"), n_a, per_head));
                specs.push(bias(format!("{stack}.{l}.head{k}.b"), per_head));
            }
        }
    }
    specs.push(weight("head.atom.hidden.w".into(), n_a, n_h));
    specs.push(bias("head.atom.hidden.b".into(), n_h));
    specs.push(weight("head.atom.out.w".into(), n_h, atom_out_cols));
    specs.push(bias("head.atom.out.b".into(), atom_out_cols));
    specs.push(weight("head.bond.hidden.w".into(), n_a, n_h));
    specs.push(bias("head.bond.hidden.b".into(), n_h));
    specs.push(weight("head.bond.out.w".into(), n_h + n_b, bond_out_cols));
    specs.push(bias("head.bond.out.b".into(), bond_out_cols));
    specs
}

fn head_dims(vocab: &ActionVocab) -> (usize, usize) {
    // atom_action_indices ends with Stop, so its length is exactly the output
    // width of the per-node head with the Stop column last.
    (vocab.atom_action_indices().len(), vocab.bond_action_indices().len())
}

/// Total scalar parameter count for this (config, vocab, features) triple.
pub fn total_param_count(cfg: &ModelConfig, vocab: &ActionVocab, features: &FeatureConfig) -> usize {
    let (atom_out, bond_out) = head_dims(vocab);
    param_shapes(cfg, features.atom_width(), features.bond_width(), atom_out, bond_out)
        .iter()
        .map(|s| s.rows * s.cols)
        .sum()
}

/// Fresh parameter store: weights U(−1/√fan_in, 1/√fan_in) with fan_in = input
/// rows, biases zero. Deterministic given the seed.
pub fn init_params(
    cfg: &ModelConfig,
    vocab: &ActionVocab,
    features: &FeatureConfig,
    seed: u64,
) -> Result<ParamStore, ModelError> {
    cfg.validate()?;
    if vocab.atom_action_indices().is_empty() {
        return Err(ModelError::Config("vocabulary has no per-node actions".into()));
    }
    let (atom_out, bond_out) = head_dims(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in param_shapes(cfg, features.atom_width(), features.bond_width(), atom_out, bond_out)
    {
        let tensor = if spec.is_weight {
            let bound = 1.0 / (spec.rows as f64).sqrt();
            let data = (0..spec.rows * spec.cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect::<Vec<f64>>();
            Tensor::from_vec(spec.rows, spec.cols, data)?
        } else {
            Tensor::zeros(spec.rows, spec.cols)
        };
        store.insert(&spec.name, tensor);
    }
    Ok(store)
}

/// Parameters registered on one tape, looked up by name during the forward
/// pass.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }
}

/// Register every store entry on `tape`. Trainable binding creates named
/// gradient leaves (for `Tape::backward` + Adam); frozen binding creates
/// constants, which skips all gradient bookkeeping during decoding.
pub fn bind_params(tape: &Tape, store: &ParamStore, trainable: bool) -> BoundParams {
    let mut vars = BTreeMap::new();
    for (name, value) in store.iter() {
        let var = if trainable { tape.param(name, value) } else { tape.constant(value) };
        vars.insert(name.to_string(), var);
    }
    BoundParams { vars }
}

#[cfg(test)]
mod tests {
    use super::*;
    use megan_chem::{
        AddAtomParams, AtomEditParams, BondEditParams, BondStereo, BondType, Chirality, EditAction,
    };

    fn tiny_vocab() -> ActionVocab {
        ActionVocab::from_actions([
            EditAction::EditAtom(AtomEditParams {
                formal_charge: 0,
                chirality: Chirality::None,
                explicit_hs: 0,
                is_aromatic: false,
            }),
            EditAction::EditBond(BondEditParams::Delete),
            EditAction::EditBond(BondEditParams::Set {
                bond_type: BondType::Single,
                stereo: BondStereo::None,
            }),
            EditAction::AddAtom(AddAtomParams {
                atomic_number: 6,
                formal_charge: 0,
                chirality: Chirality::None,
                explicit_hs: 0,
                is_aromatic: false,
                bond_type: BondType::Single,
                bond_stereo: BondStereo::None,
            }),
        ])
    }

    fn tiny_features() -> FeatureConfig {
        FeatureConfig {
            atomic_numbers: vec![6, 8],
            formal_charges: vec![0],
            chiral_tags: vec![Chirality::None],
            explicit_hs: vec![0],
            bond_types: vec![BondType::Single],
            bond_stereos: vec![BondStereo::None],
            use_stereo: true,
            reaction_type_classes: 0,
            mark_product_contribution: false,
        }
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            atom_embed_dim: 8,
            bond_embed_dim: 6,
            attention_heads: 2,
            attention_inner_dim: 8,
            head_hidden_dim: 10,
            encoder_layers: 2,
            decoder_layers: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_stores() {
        let (cfg, vocab, feats) = (tiny_config(), tiny_vocab(), tiny_features());
        let a = init_params(&cfg, &vocab, &feats, 17).unwrap();
        let b = init_params(&cfg, &vocab, &feats, 17).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = init_params(&cfg, &vocab, &feats, 18).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn per_head_width_splits_atom_dim() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.per_head_dim(), 16);
        let (vocab, feats) = (tiny_vocab(), tiny_features());
        let store = init_params(&tiny_config(), &vocab, &feats, 0).unwrap();
        let head = store.get("enc.0.head1.w").unwrap();
        assert_eq!((head.rows(), head.cols()), (8, 4));
    }

    #[test]
    fn store_total_matches_enumerated_count() {
        let (cfg, vocab, feats) = (tiny_config(), tiny_vocab(), tiny_features());
        let store = init_params(&cfg, &vocab, &feats, 3).unwrap();
        assert_eq!(store.total_params(), total_param_count(&cfg, &vocab, &feats));
    }

    #[test]
    fn full_scale_dims_give_frozen_structural_count() {
        // At full-scale dims with the reference vocabulary sizes (47 per-node
        // action columns including Stop, 7 per-pair columns) and feature
        // widths 32/11, the architecture works out to 615,030 scalars. Frozen
        // here so any accidental change to the parameter set is caught.
        let cfg = ModelConfig::default();
        let total: usize =
            param_shapes(&cfg, 32, 11, 47, 7).iter().map(|s| s.rows * s.cols).sum();
        assert_eq!(total, 615_030);
    }

    #[test]
    fn reaction_type_table_adds_class_rows() {
        let (mut cfg, vocab, feats) = (tiny_config(), tiny_vocab(), tiny_features());
        let without = total_param_count(&cfg, &vocab, &feats);
        cfg.use_reaction_type = true;
        cfg.reaction_type_classes = 10;
        let with = total_param_count(&cfg, &vocab, &feats);
        assert_eq!(with, without + 10 * cfg.atom_embed_dim);
        let store = init_params(&cfg, &vocab, &feats, 0).unwrap();
        let table = store.get("embed.rtype").unwrap();
        assert_eq!((table.rows(), table.cols()), (10, 8));
    }

    #[test]
    fn biases_zero_and_weights_within_fan_in_bound() {
        let (cfg, vocab, feats) = (tiny_config(), tiny_vocab(), tiny_features());
        let store = init_params(&cfg, &vocab, &feats, 22).unwrap();
        for (name, tensor) in store.iter() {
            if name.ends_with(".b") {
                assert!(tensor.data().iter().all(|&x| x == 0.0), "bias {name} not zero");
            } else {
                let bound = 1.0 / (tensor.rows() as f64).sqrt();
                assert!(
                    tensor.data().iter().all(|&x| x.abs() < bound),
                    "weight {name} outside ±{bound}"
                );
                // A weight of all zeros would mean the RNG was never consulted.
                assert!(tensor.data().iter().any(|&x| x != 0.0), "weight {name} all zero");
            }
        }
    }

    #[test]
    fn binding_missing_parameter_is_reported() {
        let tape = Tape::new();
        let store = ParamStore::new();
        let bound = bind_params(&tape, &store, true);
        let err = bound.get("embed.atom.w").unwrap_err();
        assert!(matches!(err, ModelError::MissingParam(_)), "{err}");
    }
}
