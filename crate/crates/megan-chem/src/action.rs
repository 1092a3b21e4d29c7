//! Graph edit actions: the atomic operations a model emits to turn one
//! molecule set into another, their discrete vocabulary, and the flat slot
//! layout that maps (action, target) pairs onto logit positions.

use crate::graph::{
    AtomNode, BondEdge, BondStereo, BondType, Chirality, MolGraph,
};
use std::fmt;

/// New values for the four mutable atom labels, set jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomEditParams {
    pub formal_charge: i8,
    pub chirality: Chirality,
    pub explicit_hs: u8,
    pub is_aromatic: bool,
}

impl AtomEditParams {
    pub fn of(atom: &AtomNode) -> Self {
        AtomEditParams {
            formal_charge: atom.formal_charge,
            chirality: atom.chirality,
            explicit_hs: atom.explicit_hs,
            is_aromatic: atom.is_aromatic,
        }
    }
}

/// Bond edits: delete, or set a (type, stereo) pair — the latter both creates
/// missing bonds and retypes existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondEditParams {
    Delete,
    Set { bond_type: BondType, stereo: BondStereo },
}

/// A new atom attached to the target atom by a new bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AddAtomParams {
    pub atomic_number: u8,
    pub formal_charge: i8,
    pub chirality: Chirality,
    pub explicit_hs: u8,
    pub is_aromatic: bool,
    pub bond_type: BondType,
    pub bond_stereo: BondStereo,
}

/// One edit step. The derived ordering (variant order, then parameters) is
/// the vocabulary ordering and is part of the on-disk vocab format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EditAction {
    EditAtom(AtomEditParams),
    EditBond(BondEditParams),
    AddAtom(AddAtomParams),
    /// Attach a benzene ring to the target atom via a single bond.
    AddBenzene,
    Stop,
}

impl EditAction {
    /// Does this action target a single atom (as opposed to an atom pair or
    /// the supernode)?
    pub fn targets_atom(&self) -> bool {
        matches!(self, EditAction::EditAtom(_) | EditAction::AddAtom(_) | EditAction::AddBenzene)
    }

    pub fn targets_pair(&self) -> bool {
        matches!(self, EditAction::EditBond(_))
    }
}

/// Where an action lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionTarget {
    Atom(usize),
    /// Unordered atom pair, stored `i < j`.
    Pair(usize, usize),
    Supernode,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ApplyError {
    #[error("invalid action target: {0}")]
    InvalidTarget(String),
}

/// Result of applying one action.
#[derive(Debug, Clone)]
pub struct ApplyOutcome {
    pub graph: MolGraph,
    /// True exactly for Stop.
    pub terminated: bool,
}

/// Apply one edit action. Redundant edits (deleting an absent bond, setting
/// labels to their current values) succeed as no-ops that return the input
/// unchanged; they are never errors. Valences are *not* checked here — a
/// sequence may pass through invalid intermediates.
pub fn apply_action(
    g: &MolGraph,
    action: &EditAction,
    target: ActionTarget,
) -> Result<ApplyOutcome, ApplyError> {
    let check_atom = |i: usize| -> Result<(), ApplyError> {
        if i >= g.atom_count() {
            return Err(ApplyError::InvalidTarget(format!(
                "atom {i} out of range ({} atoms)",
                g.atom_count()
            )));
        }
        Ok(())
    };
    match (action, target) {
        (EditAction::Stop, ActionTarget::Supernode) => {
            if !g.has_supernode() {
                return Err(ApplyError::InvalidTarget("Stop requires a supernode".into()));
            }
            Ok(ApplyOutcome { graph: g.clone(), terminated: true })
        }
        (EditAction::Stop, other) => {
            Err(ApplyError::InvalidTarget(format!("Stop must target the supernode, got {other:?}")))
        }
        (_, ActionTarget::Supernode) => {
            Err(ApplyError::InvalidTarget("only Stop may target the supernode".into()))
        }
        (EditAction::EditAtom(p), ActionTarget::Atom(i)) => {
            check_atom(i)?;
            let mut graph = g.clone();
            if AtomEditParams::of(graph.atom(i)) == *p {
                return Ok(ApplyOutcome { graph, terminated: false });
            }
            let a = graph.atom_mut(i);
            a.formal_charge = p.formal_charge;
            a.chirality = p.chirality;
            a.explicit_hs = p.explicit_hs;
            a.is_aromatic = p.is_aromatic;
            a.is_edited = true;
            Ok(ApplyOutcome { graph, terminated: false })
        }
        (EditAction::EditAtom(_), other) => Err(ApplyError::InvalidTarget(format!(
            "EditAtom needs an atom target, got {other:?}"
        ))),
        (EditAction::EditBond(p), ActionTarget::Pair(i, j)) => {
            check_atom(i)?;
            check_atom(j)?;
            if i == j {
                return Err(ApplyError::InvalidTarget("bond edit with identical endpoints".into()));
            }
            let mut graph = g.clone();
            match p {
                BondEditParams::Delete => {
                    if graph.bond(i, j).is_none() {
                        return Ok(ApplyOutcome { graph, terminated: false });
                    }
                    graph.remove_bond(i, j);
                }
                BondEditParams::Set { bond_type, stereo } => {
                    if let Some(b) = graph.bond(i, j) {
                        if b.bond_type == *bond_type && b.stereo == *stereo {
                            return Ok(ApplyOutcome { graph, terminated: false });
                        }
                    }
                    let bond =
                        BondEdge { bond_type: *bond_type, stereo: *stereo, is_edited: true };
                    graph.set_bond(i, j, bond).expect("endpoints checked above");
                }
            }
            graph.atom_mut(i).is_edited = true;
            graph.atom_mut(j).is_edited = true;
            Ok(ApplyOutcome { graph, terminated: false })
        }
        (EditAction::EditBond(_), other) => Err(ApplyError::InvalidTarget(format!(
            "EditBond needs a pair target, got {other:?}"
        ))),
        (EditAction::AddAtom(p), ActionTarget::Atom(i)) => {
            check_atom(i)?;
            let mut graph = g.clone();
            let mut atom = AtomNode::new(p.atomic_number);
            atom.formal_charge = p.formal_charge;
            atom.chirality = p.chirality;
            atom.explicit_hs = p.explicit_hs;
            atom.is_aromatic = p.is_aromatic;
            atom.is_edited = true;
            let new = graph.add_atom(atom);
            let bond = BondEdge { bond_type: p.bond_type, stereo: p.bond_stereo, is_edited: true };
            graph.set_bond(i, new, bond).expect("endpoints exist");
            graph.atom_mut(i).is_edited = true;
            Ok(ApplyOutcome { graph, terminated: false })
        }
        (EditAction::AddAtom(_), other) => Err(ApplyError::InvalidTarget(format!(
            "AddAtom needs an atom target, got {other:?}"
        ))),
        (EditAction::AddBenzene, ActionTarget::Atom(i)) => {
            check_atom(i)?;
            let mut graph = g.clone();
            let mut ring = [0usize; 6];
            for slot in &mut ring {
                let mut c = AtomNode::new(6);
                c.is_aromatic = true;
                c.is_edited = true;
                *slot = graph.add_atom(c);
            }
            for k in 0..6 {
                let bond = BondEdge {
                    bond_type: BondType::Aromatic,
                    stereo: BondStereo::None,
                    is_edited: true,
                };
                graph.set_bond(ring[k], ring[(k + 1) % 6], bond).expect("ring atoms exist");
            }
            let anchor =
                BondEdge { bond_type: BondType::Single, stereo: BondStereo::None, is_edited: true };
            graph.set_bond(i, ring[0], anchor).expect("anchor exists");
            graph.atom_mut(i).is_edited = true;
            Ok(ApplyOutcome { graph, terminated: false })
        }
        (EditAction::AddBenzene, other) => Err(ApplyError::InvalidTarget(format!(
            "AddBenzene needs an atom target, got {other:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Vocabulary

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocab line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported vocab version line: {0:?}")]
    Version(String),
}

/// Counts by action kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VocabCounts {
    pub edit_atom: usize,
    pub edit_bond: usize,
    pub add_atom: usize,
    pub add_benzene: usize,
    pub stop: usize,
}

impl VocabCounts {
    pub fn total(&self) -> usize {
        self.edit_atom + self.edit_bond + self.add_atom + self.add_benzene + self.stop
    }
}

impl fmt::Display for VocabCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} actions ({} EditAtom, {} EditBond, {} AddAtom, {} AddBenzene, {} Stop)",
            self.total(),
            self.edit_atom,
            self.edit_bond,
            self.add_atom,
            self.add_benzene,
            self.stop
        )
    }
}

const VOCAB_VERSION: &str = "megan-vocab v1";

/// The discrete action vocabulary: sorted, deduplicated, Stop always present.
/// Indices into `entries()` are the model's output classes, so the ordering
/// is part of every trained checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionVocab {
    entries: Vec<EditAction>,
}

impl ActionVocab {
    /// Build from an action stream; duplicates collapse, Stop is injected.
    pub fn from_actions<I: IntoIterator<Item = EditAction>>(actions: I) -> Self {
        let mut entries: Vec<EditAction> = actions.into_iter().collect();
        entries.push(EditAction::Stop);
        entries.sort();
        entries.dedup();
        ActionVocab { entries }
    }

    pub fn entries(&self) -> &[EditAction] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, action: &EditAction) -> Option<usize> {
        self.entries.binary_search(action).ok()
    }

    /// Vocabulary indices of actions that target a single atom, including
    /// Stop last (it targets the supernode but shares the per-node head).
    pub fn atom_action_indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.entries[i].targets_atom())
            .collect();
        if let Some(stop) = self.index_of(&EditAction::Stop) {
            out.push(stop);
        }
        out
    }

    pub fn bond_action_indices(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].targets_pair()).collect()
    }

    pub fn counts(&self) -> VocabCounts {
        let mut c = VocabCounts::default();
        for e in &self.entries {
            match e {
                EditAction::EditAtom(_) => c.edit_atom += 1,
                EditAction::EditBond(_) => c.edit_bond += 1,
                EditAction::AddAtom(_) => c.add_atom += 1,
                EditAction::AddBenzene => c.add_benzene += 1,
                EditAction::Stop => c.stop += 1,
            }
        }
        c
    }

    /// Byte-stable text form: a version line, then one sorted entry per line
    /// with alphabetically ordered key=value parameters.
    pub fn to_text(&self) -> String {
        let mut out = String::from(VOCAB_VERSION);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&action_line(e));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, v)) if v == VOCAB_VERSION => {}
            Some((_, v)) => return Err(VocabError::Version(v.to_string())),
            None => return Err(VocabError::Version(String::new())),
        }
        let mut entries = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            entries.push(parse_action_line(line).map_err(|message| VocabError::Malformed {
                line: idx + 1,
                message,
            })?);
        }
        let sorted = {
            let mut s = entries.clone();
            s.sort();
            s
        };
        if entries != sorted {
            return Err(VocabError::Malformed {
                line: 0,
                message: "entries are not in canonical order".into(),
            });
        }
        Ok(ActionVocab { entries })
    }
}

pub(crate) fn chirality_token(c: Chirality) -> &'static str {
    match c {
        Chirality::None => "none",
        Chirality::Ccw => "ccw",
        Chirality::Cw => "cw",
    }
}

pub(crate) fn bond_type_token(b: BondType) -> &'static str {
    match b {
        BondType::Single => "single",
        BondType::Double => "double",
        BondType::Triple => "triple",
        BondType::Aromatic => "aromatic",
    }
}

pub(crate) fn stereo_token(s: BondStereo) -> &'static str {
    match s {
        BondStereo::None => "none",
        BondStereo::Z => "z",
        BondStereo::E => "e",
    }
}

pub(crate) fn parse_chirality_token(v: &str) -> Result<Chirality, String> {
    match v {
        "none" => Ok(Chirality::None),
        "ccw" => Ok(Chirality::Ccw),
        "cw" => Ok(Chirality::Cw),
        other => Err(format!("bad chirality {other:?}")),
    }
}

pub(crate) fn parse_bond_type_token(v: &str) -> Result<BondType, String> {
    match v {
        "single" => Ok(BondType::Single),
        "double" => Ok(BondType::Double),
        "triple" => Ok(BondType::Triple),
        "aromatic" => Ok(BondType::Aromatic),
        other => Err(format!("bad bond type {other:?}")),
    }
}

pub(crate) fn parse_stereo_token(v: &str) -> Result<BondStereo, String> {
    match v {
        "none" => Ok(BondStereo::None),
        "z" => Ok(BondStereo::Z),
        "e" => Ok(BondStereo::E),
        other => Err(format!("bad stereo {other:?}")),
    }
}

fn action_line(e: &EditAction) -> String {
    match e {
        EditAction::EditAtom(p) => format!(
            "edit_atom aromatic={} charge={} chiral={} hs={}",
            p.is_aromatic,
            p.formal_charge,
            chirality_token(p.chirality),
            p.explicit_hs
        ),
        EditAction::EditBond(BondEditParams::Delete) => "edit_bond op=delete".into(),
        EditAction::EditBond(BondEditParams::Set { bond_type, stereo }) => format!(
            "edit_bond op=set stereo={} type={}",
            stereo_token(*stereo),
            bond_type_token(*bond_type)
        ),
        EditAction::AddAtom(p) => format!(
            "add_atom aromatic={} bond={} charge={} chiral={} element={} hs={} stereo={}",
            p.is_aromatic,
            bond_type_token(p.bond_type),
            p.formal_charge,
            chirality_token(p.chirality),
            p.atomic_number,
            p.explicit_hs,
            stereo_token(p.bond_stereo)
        ),
        EditAction::AddBenzene => "add_benzene".into(),
        EditAction::Stop => "stop".into(),
    }
}

fn parse_action_line(line: &str) -> Result<EditAction, String> {
    let mut parts = line.split_whitespace();
    let kind = parts.next().ok_or("empty line")?;
    let mut kv = std::collections::BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| format!("bad parameter {p:?}"))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| format!("missing {k}"));
    let chirality = parse_chirality_token;
    let bond_type = parse_bond_type_token;
    let stereo = parse_stereo_token;
    match kind {
        "edit_atom" => Ok(EditAction::EditAtom(AtomEditParams {
            formal_charge: get("charge")?.parse().map_err(|_| "bad charge")?,
            chirality: chirality(&get("chiral")?)?,
            explicit_hs: get("hs")?.parse().map_err(|_| "bad hs")?,
            is_aromatic: get("aromatic")?.parse().map_err(|_| "bad aromatic")?,
        })),
        "edit_bond" => match get("op")?.as_str() {
            "delete" => Ok(EditAction::EditBond(BondEditParams::Delete)),
            "set" => Ok(EditAction::EditBond(BondEditParams::Set {
                bond_type: bond_type(&get("type")?)?,
                stereo: stereo(&get("stereo")?)?,
            })),
            other => Err(format!("bad op {other:?}")),
        },
        "add_atom" => Ok(EditAction::AddAtom(AddAtomParams {
            atomic_number: get("element")?.parse().map_err(|_| "bad element")?,
            formal_charge: get("charge")?.parse().map_err(|_| "bad charge")?,
            chirality: chirality(&get("chiral")?)?,
            explicit_hs: get("hs")?.parse().map_err(|_| "bad hs")?,
            is_aromatic: get("aromatic")?.parse().map_err(|_| "bad aromatic")?,
            bond_type: bond_type(&get("bond")?)?,
            bond_stereo: stereo(&get("stereo")?)?,
        })),
        "add_benzene" => Ok(EditAction::AddBenzene),
        "stop" => Ok(EditAction::Stop),
        other => Err(format!("unknown action kind {other:?}")),
    }
}

// ---------------------------------------------------------------------------
// Flat slot layout

/// Bijection between flat logit slots and (action, target) pairs for a graph
/// with `n_atoms` real atoms plus a supernode. Slot order: for each atom all
/// atom-target actions (vocabulary order), then for each pair `i < j`
/// (lexicographic) all bond actions, then the single Stop slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionLayout {
    pub n_atoms: usize,
    /// Vocabulary indices of atom-target actions, without Stop.
    pub atom_slots: Vec<usize>,
    /// Vocabulary indices of bond (pair-target) actions.
    pub bond_slots: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    pub stop_vocab_index: usize,
}

pub fn action_space_layout(vocab: &ActionVocab, n_atoms: usize) -> ActionLayout {
    let mut atom_slots = vocab.atom_action_indices();
    // Stop rides last in atom_action_indices; the flat layout gives it its
    // own dedicated slot instead.
    let stop_vocab_index = atom_slots.pop().expect("vocab always contains Stop");
    let bond_slots = vocab.bond_action_indices();
    let mut pairs = Vec::with_capacity(n_atoms.saturating_mul(n_atoms.saturating_sub(1)) / 2);
    for i in 0..n_atoms {
        for j in (i + 1)..n_atoms {
            pairs.push((i, j));
        }
    }
    ActionLayout { n_atoms, atom_slots, bond_slots, pairs, stop_vocab_index }
}

impl ActionLayout {
    pub fn total_slots(&self) -> usize {
        self.n_atoms * self.atom_slots.len() + self.pairs.len() * self.bond_slots.len() + 1
    }

    /// Flat slot for a (vocabulary index, target) pair, if representable.
    pub fn slot_of(&self, vocab_index: usize, target: ActionTarget) -> Option<usize> {
        match target {
            ActionTarget::Atom(i) => {
                if i >= self.n_atoms {
                    return None;
                }
                let k = self.atom_slots.iter().position(|&v| v == vocab_index)?;
                Some(i * self.atom_slots.len() + k)
            }
            ActionTarget::Pair(i, j) => {
                let (i, j) = if i < j { (i, j) } else { (j, i) };
                let p = self.pairs.binary_search(&(i, j)).ok()?;
                let k = self.bond_slots.iter().position(|&v| v == vocab_index)?;
                Some(self.n_atoms * self.atom_slots.len() + p * self.bond_slots.len() + k)
            }
            ActionTarget::Supernode => {
                if vocab_index == self.stop_vocab_index {
                    Some(self.total_slots() - 1)
                } else {
                    None
                }
            }
        }
    }

    /// Inverse of [`slot_of`].
    pub fn decode(&self, slot: usize) -> Option<(usize, ActionTarget)> {
        let atom_block = self.n_atoms * self.atom_slots.len();
        let pair_block = self.pairs.len() * self.bond_slots.len();
        if slot < atom_block {
            let i = slot / self.atom_slots.len();
            let k = slot % self.atom_slots.len();
            Some((self.atom_slots[k], ActionTarget::Atom(i)))
        } else if slot < atom_block + pair_block {
            let rel = slot - atom_block;
            let p = rel / self.bond_slots.len();
            let k = rel % self.bond_slots.len();
            let (i, j) = self.pairs[p];
            Some((self.bond_slots[k], ActionTarget::Pair(i, j)))
        } else if slot == atom_block + pair_block {
            Some((self.stop_vocab_index, ActionTarget::Supernode))
        } else {
            None
        }
    }
}
