//! Forward computation: embeddings, graph-attention stacks, step recurrence,
//! and the joint action heads.
//!
//! Node features live in an `n × atom_embed_dim` matrix (supernode row last,
//! matching the featurizer); bond features are flattened to an
//! `(n·n) × bond_embed_dim` matrix whose row `i·n + j` holds the embedded
//! features of the directed entry (i, j). Attention runs over an explicit
//! edge list derived from the adjacency structure, with the destination node
//! id doubling as the softmax segment — neighborhoods never interact.
//!
//! The flat logit row produced by `forward_step` matches
//! `action_space_layout` slot for slot: per-atom action columns for every
//! real atom, then per-pair bond columns for every `i < j` pair, then the
//! single Stop slot scored at the supernode. Slots that the layout does not
//! contain (Stop anywhere but the supernode, per-node actions at the
//! supernode) are simply never emitted, which is the masking: they get zero
//! probability without any −∞ arithmetic.

use crate::params::BoundParams;
use crate::{ModelConfig, ModelError};
use megan_chem::{ActionLayout, GraphTensors, MolGraph};
use megan_tensor::{Tape, Tensor, Var};

/// Edge list of one graph, in the shape the attention ops want: parallel
/// source/destination index vectors (destination-major, so destinations are
/// non-decreasing) plus the flattened bond-matrix row for each edge.
pub struct GraphWiring {
    /// Node count including the supernode.
    pub n: usize,
    /// Real atoms only; the supernode is row `n_atoms`.
    pub n_atoms: usize,
    edge_dst: Vec<usize>,
    edge_src: Vec<usize>,
    edge_cell: Vec<usize>,
}

impl GraphWiring {
    pub fn new(gt: &GraphTensors) -> GraphWiring {
        let n = gt.n;
        let mut edge_dst = Vec::new();
        let mut edge_src = Vec::new();
        let mut edge_cell = Vec::new();
        for (dst, neighbors) in gt.adjacency.iter().enumerate() {
            for &src in neighbors {
                edge_dst.push(dst);
                edge_src.push(src);
                edge_cell.push(dst * n + src);
            }
        }
        GraphWiring { n, n_atoms: n - 1, edge_dst, edge_src, edge_cell }
    }

    pub fn edge_count(&self) -> usize {
        self.edge_dst.len()
    }
}

/// Embed one-hot node and bond tensors with the two linear embedding layers.
///
/// Returns (`H0`: n × atom_embed_dim, `A`: (n·n) × bond_embed_dim). When the
/// config enables reaction-type conditioning and a class is given, the
/// class's learned vector is added to the supernode row of `H0`; decoding
/// without a known class just omits the addition.
pub fn embed(
    tape: &Tape,
    params: &BoundParams,
    cfg: &ModelConfig,
    gt: &GraphTensors,
    reaction_type: Option<usize>,
) -> Result<(Var, Var), ModelError> {
    let n = gt.n;
    let h_oh = tape.constant(&Tensor::from_vec(n, gt.atom_width, gt.h.clone())?);
    let a_oh = tape.constant(&Tensor::from_vec(n * n, gt.bond_width, gt.a.clone())?);
    let mut h0 =
        tape.add_bias(tape.matmul(h_oh, params.get("embed.atom.w")?)?, params.get("embed.atom.b")?)?;
    let a =
        tape.add_bias(tape.matmul(a_oh, params.get("embed.bond.w")?)?, params.get("embed.bond.b")?)?;
    if cfg.use_reaction_type {
        if let Some(class) = reaction_type {
            if class >= cfg.reaction_type_classes {
                return Err(ModelError::Config(format!(
                    "reaction type class {class} outside 0..{}",
                    cfg.reaction_type_classes
                )));
            }
            let table = params.get("embed.rtype")?;
            let class_row = tape.slice_rows(table, class, class + 1)?;
            // Outer product with a supernode indicator column adds the class
            // vector to exactly the supernode row.
            let mut indicator = Tensor::zeros(n, 1);
            indicator.set(n - 1, 0, 1.0);
            let sel = tape.constant(&indicator);
            h0 = tape.add(h0, tape.matmul(sel, class_row)?)?;
        }
    }
    Ok((h0, a))
}

/// One multi-head graph-attention layer.
///
/// Per node i with neighborhood N(i) (self-loop and supernode links
/// included): project every node to the attention space, score each edge
/// (i, j) from projected-dst ∥ projected-src ∥ embedded bond, softmax the
/// scores over N(i) independently per head, pool the *unprojected* neighbor
/// features with those weights, and pass each head's pooled vector through
/// its own relu-linear reducing to `atom_embed_dim / heads` columns; the
/// layer output concatenates the heads back to `atom_embed_dim`.
pub fn gcn_att_layer(
    tape: &Tape,
    params: &BoundParams,
    cfg: &ModelConfig,
    prefix: &str,
    h: Var,
    a_emb: Var,
    wiring: &GraphWiring,
) -> Result<Var, ModelError> {
    let proj = tape.relu(tape.add_bias(
        tape.matmul(h, params.get(&format!("{prefix}.att.w"))?)?,
        params.get(&format!("{prefix}.att.b"))?,
    )?)?;
    let proj_dst = tape.gather_rows(proj, &wiring.edge_dst)?;
    let proj_src = tape.gather_rows(proj, &wiring.edge_src)?;
    let bond = tape.gather_rows(a_emb, &wiring.edge_cell)?;
    let scores = tape.add_bias(
        tape.matmul(tape.concat_cols(&[proj_dst, proj_src, bond])?, params.get(&format!("{prefix}.score.w"))?)?,
        params.get(&format!("{prefix}.score.b"))?,
    )?;
    let alpha = tape.segment_softmax(scores, &wiring.edge_dst)?;
    let neighbor = tape.gather_rows(h, &wiring.edge_src)?;
    let mut heads = Vec::with_capacity(cfg.attention_heads);
    for k in 0..cfg.attention_heads {
        let alpha_k = tape.slice_cols(alpha, k, k + 1)?;
        let weighted = tape.scale_rows(neighbor, alpha_k)?;
        let pooled = tape.segment_sum(weighted, &wiring.edge_dst, wiring.n)?;
        heads.push(tape.relu(tape.add_bias(
            tape.matmul(pooled, params.get(&format!("{prefix}.head{k}.w"))?)?,
            params.get(&format!("{prefix}.head{k}.b"))?,
        )?)?);
    }
    Ok(tape.concat_cols(&heads)?)
}

fn run_stack(
    tape: &Tape,
    params: &BoundParams,
    cfg: &ModelConfig,
    stack: &str,
    depth: usize,
    mut h: Var,
    a_emb: Var,
    wiring: &GraphWiring,
) -> Result<Var, ModelError> {
    for l in 0..depth {
        h = gcn_att_layer(tape, params, cfg, &format!("{stack}.{l}"), h, a_emb, wiring)?;
    }
    Ok(h)
}

/// Align carried node features with the current node set. Rows for atoms
/// that already existed keep their values, rows for atoms added since the
/// previous step are zero, and the supernode row — always last in both
/// layouts — carries over.
pub(crate) fn pad_carried(tape: &Tape, prev: Var, n: usize) -> Result<Var, ModelError> {
    if prev.rows() > n {
        return Err(ModelError::Config(format!(
            "carried state has {} rows but the graph has only {} nodes",
            prev.rows(),
            n
        )));
    }
    if prev.rows() == n {
        return Ok(prev);
    }
    let old_atoms = prev.rows() - 1;
    let atoms = tape.slice_rows(prev, 0, old_atoms)?;
    let fresh = tape.zeros(n - prev.rows(), prev.cols());
    let supernode = tape.slice_rows(prev, old_atoms, old_atoms + 1)?;
    Ok(tape.concat_rows(&[atoms, fresh, supernode])?)
}

/// Output of one decoding step: the node state to carry forward and the flat
/// logit row over the action layout.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub h: Var,
    pub logits: Var,
}

/// Run one step of the edit sequence.
///
/// At the first step (`prev_h` = None) the embedded graph passes through the
/// encoder stack and then the decoder stack. At later steps only the decoder
/// runs, over the element-wise maximum of the freshly embedded graph and the
/// carried (padded) node state; with `literal_recurrence` the encoder output
/// of the carried state replaces the fresh embedding in that maximum. Either
/// way the bond tensor is re-embedded from the current graph, since edits
/// change bonds.
pub fn forward_step(
    tape: &Tape,
    params: &BoundParams,
    cfg: &ModelConfig,
    gt: &GraphTensors,
    layout: &ActionLayout,
    prev_h: Option<Var>,
    reaction_type: Option<usize>,
) -> Result<StepOutput, ModelError> {
    if layout.n_atoms + 1 != gt.n {
        return Err(ModelError::Config(format!(
            "layout covers {} atoms but the graph has {}",
            layout.n_atoms,
            gt.n - 1
        )));
    }
    let wiring = GraphWiring::new(gt);
    let (h0, a_emb) = embed(tape, params, cfg, gt, reaction_type)?;
    let decoder_in = match prev_h {
        None => run_stack(tape, params, cfg, "enc", cfg.encoder_layers, h0, a_emb, &wiring)?,
        Some(prev) => {
            let carried = pad_carried(tape, prev, gt.n)?;
            if cfg.literal_recurrence {
                let enc =
                    run_stack(tape, params, cfg, "enc", cfg.encoder_layers, carried, a_emb, &wiring)?;
                tape.max_elem(enc, carried)?
            } else {
                tape.max_elem(h0, carried)?
            }
        }
    };
    let h_t = run_stack(tape, params, cfg, "dec", cfg.decoder_layers, decoder_in, a_emb, &wiring)?;
    let logits = action_logits(tape, params, h_t, a_emb, layout, &wiring)?;
    Ok(StepOutput { h: h_t, logits })
}

/// Score every layout slot from the step's node state.
fn action_logits(
    tape: &Tape,
    params: &BoundParams,
    h: Var,
    a_emb: Var,
    layout: &ActionLayout,
    wiring: &GraphWiring,
) -> Result<Var, ModelError> {
    let n = wiring.n;
    let n_atoms = wiring.n_atoms;
    let atom_cols = layout.atom_slots.len();
    let bond_cols = layout.bond_slots.len();

    let hidden = tape.relu(tape.add_bias(
        tape.matmul(h, params.get("head.atom.hidden.w")?)?,
        params.get("head.atom.hidden.b")?,
    )?)?;
    let node_scores = tape.add_bias(
        tape.matmul(hidden, params.get("head.atom.out.w")?)?,
        params.get("head.atom.out.b")?,
    )?;
    if node_scores.cols() != atom_cols + 1 {
        return Err(ModelError::Config(format!(
            "per-node head emits {} columns but the layout expects {} (+1 for Stop)",
            node_scores.cols(),
            atom_cols
        )));
    }

    let mut parts: Vec<Var> = Vec::new();
    if n_atoms > 0 && atom_cols > 0 {
        let atom_rows = tape.slice_rows(node_scores, 0, n_atoms)?;
        let atom_block = tape.slice_cols(atom_rows, 0, atom_cols)?;
        parts.push(tape.reshape(atom_block, 1, n_atoms * atom_cols)?);
    }
    if !layout.pairs.is_empty() && bond_cols > 0 {
        let pair_hidden = tape.relu(tape.add_bias(
            tape.matmul(h, params.get("head.bond.hidden.w")?)?,
            params.get("head.bond.hidden.b")?,
        )?)?;
        let mut firsts = Vec::with_capacity(layout.pairs.len());
        let mut seconds = Vec::with_capacity(layout.pairs.len());
        let mut cells = Vec::with_capacity(layout.pairs.len());
        for &(i, j) in &layout.pairs {
            firsts.push(i);
            seconds.push(j);
            cells.push(i * n + j);
        }
        let sum = tape.add(
            tape.gather_rows(pair_hidden, &firsts)?,
            tape.gather_rows(pair_hidden, &seconds)?,
        )?;
        let bond = tape.gather_rows(a_emb, &cells)?;
        let pair_feats = tape.relu(tape.concat_cols(&[sum, bond])?)?;
        let pair_scores = tape.add_bias(
            tape.matmul(pair_feats, params.get("head.bond.out.w")?)?,
            params.get("head.bond.out.b")?,
        )?;
        if pair_scores.cols() != bond_cols {
            return Err(ModelError::Config(format!(
                "per-pair head emits {} columns but the layout expects {}",
                pair_scores.cols(),
                bond_cols
            )));
        }
        parts.push(tape.reshape(pair_scores, 1, layout.pairs.len() * bond_cols)?);
    }
    // Stop: the supernode row's last column. Other rows' Stop column and the
    // supernode's other columns have no layout slot and are dropped here.
    parts.push(tape.pick(node_scores, n_atoms, atom_cols)?);
    let logits = tape.concat_cols(&parts)?;
    debug_assert_eq!(logits.cols(), layout.total_slots());
    Ok(logits)
}

/// Softmax over the whole flat layout, as a 1 × slots probability row.
pub fn action_probabilities(tape: &Tape, logits: Var) -> Result<Var, ModelError> {
    let slots = logits.cols();
    let column = tape.reshape(logits, slots, 1)?;
    let probs = tape.segment_softmax(column, &vec![0; slots])?;
    Ok(tape.reshape(probs, 1, slots)?)
}

/// Natural log-probability of one slot under the layout softmax, as a 1 × 1
/// tape scalar — the per-step term of the sequence NLL.
pub fn slot_log_prob(tape: &Tape, logits: Var, slot: usize) -> Result<Var, ModelError> {
    if slot >= logits.cols() {
        return Err(ModelError::Config(format!(
            "slot {slot} outside layout of {} slots",
            logits.cols()
        )));
    }
    let probs = action_probabilities(tape, logits)?;
    Ok(tape.log(tape.pick(probs, 0, slot)?)?)
}

/// Decode-time state carried between steps: the evolving graph, its feature
/// tensors, and the node state from the previous step (absent before the
/// first). Kept as plain tensors so hypotheses can be cloned and stepped on
/// fresh tapes.
#[derive(Debug, Clone)]
pub struct StepState {
    pub graph: MolGraph,
    pub tensors: GraphTensors,
    pub prev_h: Option<Tensor>,
    pub terminated: bool,
}

impl StepState {
    pub fn new(graph: MolGraph, tensors: GraphTensors) -> StepState {
        StepState { graph, tensors, prev_h: None, terminated: false }
    }
}
