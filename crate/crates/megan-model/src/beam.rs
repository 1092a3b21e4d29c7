//! Beam-search decoding over the flat action distribution, candidate
//! extraction from finished hypotheses, and sequence re-scoring.
//!
//! Each decode step runs every live hypothesis through a fresh forward pass
//! (parameters bound as constants — no gradients), ranks all slot expansions
//! together with already-finished hypotheses, and keeps the `width` best.
//! Finished hypotheses are frozen: they stop expanding but keep competing by
//! raw cumulative log-probability (optionally length-normalized). Ties break
//! deterministically, so decoding is bit-reproducible.

use crate::params::bind_params;
use crate::{action_probabilities, forward_step, slot_log_prob, ModelConfig, ModelError, StepState};
use megan_chem::{
    action_space_layout, apply_action, canonical_smiles, featurize, featurize_marked,
    ActionTarget, ActionVocab, Direction, EditAction, FeatureConfig, GraphTensors, MolGraph,
};
use megan_tensor::{ParamStore, Tape};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    pub max_steps: usize,
    /// Compete by log-prob divided by action count instead of the raw sum.
    /// Off by default.
    pub length_normalize: bool,
}

impl BeamConfig {
    /// Standard decode settings per direction: wide and long for retro
    /// (50 hypotheses, 16 steps), narrower and shorter for forward synthesis
    /// (20 hypotheses, 8 steps).
    pub fn for_direction(direction: Direction) -> BeamConfig {
        match direction {
            Direction::Retro => BeamConfig { width: 50, max_steps: 16, length_normalize: false },
            Direction::Forward => BeamConfig { width: 20, max_steps: 8, length_normalize: false },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.width == 0 || self.max_steps == 0 {
            return Err(ModelError::Config("beam width and max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// One partial or finished edit sequence under construction.
#[derive(Debug, Clone)]
pub struct BeamHypothesis {
    pub state: StepState,
    /// Contributes-to-target marks per real atom, carried only when the
    /// feature config uses the mark block; atoms added during decoding are
    /// marked true (the model proposed them for the target side).
    pub marks: Option<Vec<bool>>,
    pub actions: Vec<(EditAction, ActionTarget)>,
    /// Sum of chosen per-step log-probabilities.
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Ranking score: raw cumulative log-prob, or per-action mean when
    /// length normalization is on.
    pub fn score(&self, cfg: &BeamConfig) -> f64 {
        if cfg.length_normalize {
            self.log_prob / self.actions.len().max(1) as f64
        } else {
            self.log_prob
        }
    }
}

#[derive(Debug)]
pub struct BeamOutcome {
    /// Finished hypotheses, best score first; ties keep discovery order.
    pub hypotheses: Vec<BeamHypothesis>,
    /// Hypotheses discarded because their final graph failed valence checks.
    pub dropped_invalid: usize,
}

/// Featurize a graph, honoring the optional product-contribution mark
/// channel: the feature config and the presence of `marks` must agree.
pub fn featurize_state(
    g: &MolGraph,
    feats: &FeatureConfig,
    marks: Option<&Vec<bool>>,
) -> Result<GraphTensors, ModelError> {
    match (feats.mark_product_contribution, marks) {
        (true, Some(m)) => Ok(featurize_marked(g, feats, m)),
        (false, None) => Ok(featurize(g, feats)),
        (true, None) => {
            Err(ModelError::Config("feature config expects contribution marks but none given".into()))
        }
        (false, Some(_)) => {
            Err(ModelError::Config("contribution marks given but feature config has no mark block".into()))
        }
    }
}

/// Candidate expansion or retained finished hypothesis during one step's
/// global ranking. Ordering is score-descending with deterministic ties:
/// frozen entries first, then by source hypothesis, then slot.
enum PoolEntry {
    Frozen(usize),
    Expand { hyp: usize, slot: usize, log_prob: f64 },
}

/// Decode edit sequences for one input. `input` is the source-side molecule
/// set (no supernode; one is attached internally). `initial_marks`, when the
/// feature config uses the mark block, gives one contributes-to-target flag
/// per input atom. `reaction_type` conditions the model when it was trained
/// with reaction-type inputs.
#[allow(clippy::too_many_arguments)]
pub fn beam_search(
    store: &ParamStore,
    model_cfg: &ModelConfig,
    beam_cfg: &BeamConfig,
    vocab: &ActionVocab,
    feats: &FeatureConfig,
    input: &MolGraph,
    initial_marks: Option<Vec<bool>>,
    reaction_type: Option<usize>,
) -> Result<BeamOutcome, ModelError> {
    beam_cfg.validate()?;
    model_cfg.validate()?;
    if input.atom_count() == 0 {
        return Err(ModelError::Config("cannot decode from an empty graph".into()));
    }
    if let Some(m) = &initial_marks {
        if m.len() != input.atom_count() {
            return Err(ModelError::Config(format!(
                "got {} contribution marks for {} atoms",
                m.len(),
                input.atom_count()
            )));
        }
    }
    let mut start = input.clone();
    if !start.has_supernode() {
        start.add_supernode().map_err(|e| ModelError::Config(e.to_string()))?;
    }
    let tensors = featurize_state(&start, feats, initial_marks.as_ref())?;
    let mut live = vec![BeamHypothesis {
        state: StepState::new(start, tensors),
        marks: initial_marks,
        actions: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut frozen: Vec<BeamHypothesis> = Vec::new();
    let mut dropped_invalid = 0usize;
    let rt = if model_cfg.use_reaction_type { reaction_type } else { None };

    for _ in 0..beam_cfg.max_steps {
        if live.is_empty() {
            break;
        }
        // Forward pass per live hypothesis; collect per-slot expansions.
        let mut pool: Vec<PoolEntry> = (0..frozen.len()).map(PoolEntry::Frozen).collect();
        let mut new_h = Vec::with_capacity(live.len());
        for (hyp_idx, hyp) in live.iter().enumerate() {
            let tape = Tape::new();
            let params = bind_params(&tape, store, false);
            let layout = action_space_layout(vocab, hyp.state.graph.atom_count());
            let prev = hyp.state.prev_h.as_ref().map(|t| tape.constant(t));
            let out = forward_step(&tape, &params, model_cfg, &hyp.state.tensors, &layout, prev, rt)?;
            let probs = tape.value(action_probabilities(&tape, out.logits)?);
            new_h.push(tape.value(out.h));
            // Per-hypothesis shortlist: only its `width` best slots can
            // possibly survive the global cut.
            let mut slots: Vec<(usize, f64)> =
                probs.data().iter().copied().enumerate().collect();
            slots.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(slot, p) in slots.iter().take(beam_cfg.width) {
                pool.push(PoolEntry::Expand { hyp: hyp_idx, slot, log_prob: hyp.log_prob + p.ln() });
            }
        }

        // Global cut: frozen survivors and expansions compete on one score.
        let entry_score = |e: &PoolEntry| -> f64 {
            match *e {
                PoolEntry::Frozen(i) => frozen[i].score(beam_cfg),
                PoolEntry::Expand { hyp, slot: _, log_prob } => {
                    if beam_cfg.length_normalize {
                        log_prob / (live[hyp].actions.len() + 1) as f64
                    } else {
                        log_prob
                    }
                }
            }
        };
        let entry_key = |e: &PoolEntry| -> (usize, usize, usize) {
            match *e {
                PoolEntry::Frozen(i) => (0, i, 0),
                PoolEntry::Expand { hyp, slot, .. } => (1, hyp, slot),
            }
        };
        pool.sort_by(|a, b| {
            entry_score(b).total_cmp(&entry_score(a)).then(entry_key(a).cmp(&entry_key(b)))
        });
        pool.truncate(beam_cfg.width);

        let mut next_frozen = Vec::new();
        let mut next_live = Vec::new();
        for entry in pool {
            match entry {
                PoolEntry::Frozen(i) => next_frozen.push(frozen[i].clone()),
                PoolEntry::Expand { hyp, slot, log_prob } => {
                    let parent = &live[hyp];
                    let layout = action_space_layout(vocab, parent.state.graph.atom_count());
                    let (vocab_idx, target) = layout
                        .decode(slot)
                        .ok_or_else(|| ModelError::Config(format!("slot {slot} out of layout")))?;
                    let action = vocab.entries()[vocab_idx];
                    let mut child = BeamHypothesis {
                        state: StepState {
                            graph: parent.state.graph.clone(),
                            tensors: parent.state.tensors.clone(),
                            prev_h: Some(new_h[hyp].clone()),
                            terminated: false,
                        },
                        marks: parent.marks.clone(),
                        actions: parent.actions.clone(),
                        log_prob,
                        finished: false,
                    };
                    child.actions.push((action, target));
                    match apply_action(&parent.state.graph, &action, target) {
                        Ok(outcome) => {
                            if outcome.terminated {
                                child.state.graph = outcome.graph;
                                child.state.terminated = true;
                                child.finished = true;
                                if child.state.graph.without_supernode().check_valences().is_ok() {
                                    next_frozen.push(child);
                                } else {
                                    dropped_invalid += 1;
                                }
                            } else {
                                let grown =
                                    outcome.graph.atom_count() - parent.state.graph.atom_count();
                                if let Some(m) = &mut child.marks {
                                    m.extend(std::iter::repeat_n(true, grown));
                                }
                                child.state.tensors =
                                    featurize_state(&outcome.graph, feats, child.marks.as_ref())?;
                                child.state.graph = outcome.graph;
                                next_live.push(child);
                            }
                        }
                        // Unapplicable action: the step is spent (probability
                        // and history recorded) but the graph is unchanged.
                        Err(_) => next_live.push(child),
                    }
                }
            }
        }
        frozen = next_frozen;
        live = next_live;
    }

    // Step budget exhausted: force-finish whatever is still live.
    for mut hyp in live {
        hyp.finished = true;
        if hyp.state.graph.without_supernode().check_valences().is_ok() {
            frozen.push(hyp);
        } else {
            dropped_invalid += 1;
        }
    }
    frozen.sort_by(|a, b| b.score(beam_cfg).total_cmp(&a.score(beam_cfg)));
    Ok(BeamOutcome { hypotheses: frozen, dropped_invalid })
}

/// Re-evaluate the log-probability of a fixed action sequence by replaying
/// it through fresh forward passes. Used to audit beam scores: every
/// returned hypothesis must re-score to its reported log-prob.
#[allow(clippy::too_many_arguments)]
pub fn score_sequence(
    store: &ParamStore,
    model_cfg: &ModelConfig,
    vocab: &ActionVocab,
    feats: &FeatureConfig,
    input: &MolGraph,
    actions: &[(EditAction, ActionTarget)],
    initial_marks: Option<Vec<bool>>,
    reaction_type: Option<usize>,
) -> Result<f64, ModelError> {
    let mut graph = input.clone();
    if !graph.has_supernode() {
        graph.add_supernode().map_err(|e| ModelError::Config(e.to_string()))?;
    }
    let mut marks = initial_marks;
    let mut prev: Option<megan_tensor::Tensor> = None;
    let mut total = 0.0;
    let rt = if model_cfg.use_reaction_type { reaction_type } else { None };
    for (action, target) in actions {
        let tensors = featurize_state(&graph, feats, marks.as_ref())?;
        let layout = action_space_layout(vocab, graph.atom_count());
        let vocab_idx = vocab
            .index_of(action)
            .ok_or_else(|| ModelError::Config(format!("action {action:?} not in vocabulary")))?;
        let slot = layout
            .slot_of(vocab_idx, *target)
            .ok_or_else(|| ModelError::Config(format!("action {action:?} at {target:?} has no slot")))?;
        let tape = Tape::new();
        let params = bind_params(&tape, store, false);
        let prev_var = prev.as_ref().map(|t| tape.constant(t));
        let out = forward_step(&tape, &params, model_cfg, &tensors, &layout, prev_var, rt)?;
        total += tape.value(slot_log_prob(&tape, out.logits, slot)?).item();
        prev = Some(tape.value(out.h));
        if let Ok(outcome) = apply_action(&graph, action, *target) {
            if !outcome.terminated {
                let grown = outcome.graph.atom_count() - graph.atom_count();
                if let Some(m) = &mut marks {
                    m.extend(std::iter::repeat_n(true, grown));
                }
                graph = outcome.graph;
            }
        }
    }
    Ok(total)
}

/// One deduplicated decode result: a set of canonical map-free component
/// SMILES with the best score that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub components: BTreeSet<String>,
    pub score: f64,
}

/// Ranked candidate list for one input, after dropping the supernode,
/// stripping atom maps, splitting components, and merging canonical
/// duplicates (best score kept).
#[derive(Debug, Clone)]
pub struct Prediction {
    pub candidates: Vec<Candidate>,
    /// Finished hypotheses before deduplication.
    pub raw_count: usize,
    pub dropped_invalid: usize,
}

/// Turn ranked hypotheses into ranked molecule-set candidates. Retro keeps
/// every component (the predicted substrate set); forward keeps the main
/// product, chosen as the component with the longest SMILES string (ties:
/// lexicographically smallest).
pub fn extract_candidates(
    outcome: &BeamOutcome,
    beam_cfg: &BeamConfig,
    direction: Direction,
) -> Prediction {
    let mut seen: BTreeSet<BTreeSet<String>> = BTreeSet::new();
    let mut candidates = Vec::new();
    for hyp in &outcome.hypotheses {
        let bare = hyp.state.graph.without_supernode();
        let mut parts: Vec<String> = bare
            .components()
            .iter()
            .map(|idxs| canonical_smiles(&bare.subgraph(idxs), false))
            .collect();
        let components: BTreeSet<String> = match direction {
            Direction::Retro => parts.into_iter().collect(),
            Direction::Forward => {
                parts.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
                parts.into_iter().take(1).collect()
            }
        };
        if components.is_empty() {
            continue;
        }
        // Hypotheses arrive best-first, so the first sighting of a set
        // carries its best score.
        if seen.insert(components.clone()) {
            candidates.push(Candidate { components, score: hyp.score(beam_cfg) });
        }
    }
    Prediction {
        candidates,
        raw_count: outcome.hypotheses.len(),
        dropped_invalid: outcome.dropped_invalid,
    }
}
