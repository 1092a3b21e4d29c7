//! Ground-truth edit sequences: diffs a mapped reaction into a pending edit
//! set, then linearizes it into an ordered action sequence under one of five
//! ordering policies.
//!
//! The linearization repeats three decisions until nothing is pending: pick
//! an eligible atom (recency preference plus canonical-rank or random
//! tie-break), pick the highest-priority action kind at that atom, and pick
//! the partner or child atom for bond/add actions. Bond deletion leads for
//! retrosynthesis and bond addition for forward synthesis, so the sequence
//! opens at the reaction center.

use crate::action::{
    apply_action, ActionTarget, ActionVocab, AddAtomParams, AtomEditParams, BondEditParams,
    EditAction,
};
use crate::graph::{BondStereo, BondType, MolGraph};
use crate::reaction::{Direction, Reaction};
use crate::smiles::canonical_ranks;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// The five ways to order ground-truth actions. BFS variants prefer atoms
/// not yet modified, DFS variants prefer already-modified atoms, Cano/Rand
/// break the remaining ties by target-side canonical rank or at random, and
/// `Random` picks uniformly with no recency preference at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OrderingStrategy {
    BfsRandAt,
    DfsRandAt,
    BfsCanoAt,
    DfsCanoAt,
    Random,
}

impl OrderingStrategy {
    pub const ALL: [OrderingStrategy; 5] = [
        OrderingStrategy::BfsRandAt,
        OrderingStrategy::DfsRandAt,
        OrderingStrategy::BfsCanoAt,
        OrderingStrategy::DfsCanoAt,
        OrderingStrategy::Random,
    ];

    pub fn parse(s: &str) -> Option<OrderingStrategy> {
        match s {
            "bfs-rand" => Some(OrderingStrategy::BfsRandAt),
            "dfs-rand" => Some(OrderingStrategy::DfsRandAt),
            "bfs-cano" => Some(OrderingStrategy::BfsCanoAt),
            "dfs-cano" => Some(OrderingStrategy::DfsCanoAt),
            "random" => Some(OrderingStrategy::Random),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OrderingStrategy::BfsRandAt => "bfs-rand",
            OrderingStrategy::DfsRandAt => "dfs-rand",
            OrderingStrategy::BfsCanoAt => "bfs-cano",
            OrderingStrategy::DfsCanoAt => "dfs-cano",
            OrderingStrategy::Random => "random",
        }
    }

    fn prefers_modified(self) -> Option<bool> {
        match self {
            OrderingStrategy::BfsRandAt | OrderingStrategy::BfsCanoAt => Some(false),
            OrderingStrategy::DfsRandAt | OrderingStrategy::DfsCanoAt => Some(true),
            OrderingStrategy::Random => None,
        }
    }

    fn uses_canonical_rank(self) -> bool {
        matches!(self, OrderingStrategy::BfsCanoAt | OrderingStrategy::DfsCanoAt)
    }
}

/// Strategy plus the global seed mixed into every per-reaction RNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderingPolicy {
    pub strategy: OrderingStrategy,
    pub rng_seed: u64,
}

/// 64-bit FNV-1a over the reaction id, combined with the global seed so each
/// reaction gets its own reproducible RNG stream.
fn reaction_seed(id: &str, global: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h.wrapping_add(global)
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("{count} target atom(s) unreachable from any mapped atom")]
    UnreachableAtoms { count: usize },
    #[error("internal inconsistency: {0}")]
    Inconsistent(String),
}

/// A benzene ring to be attached in one action: anchor plus the six ring
/// atoms (target indices) in ring-walk order starting at the anchor-bonded
/// atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenzeneItem {
    pub anchor_t: usize,
    pub ring_t: [usize; 6],
}

/// One target-only atom to add: its forest parent (target index) plus the
/// fully specified atom-and-bond parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdditionItem {
    pub parent_t: usize,
    pub params: AddAtomParams,
}

/// Everything that must happen to turn the source graph into the target,
/// before any ordering is chosen. Keys are target-side atom indices except
/// `source_deletes`, which cuts source bonds whose far endpoint never
/// reaches the target (forward-direction leftovers).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PendingEditSet {
    pub atom_edits: BTreeMap<usize, AtomEditParams>,
    pub bond_edits: BTreeMap<(usize, usize), BondEditParams>,
    pub source_deletes: BTreeSet<(usize, usize)>,
    pub additions: BTreeMap<usize, AdditionItem>,
    pub benzenes: BTreeMap<usize, BenzeneItem>,
}

impl PendingEditSet {
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of actions still to emit (excluding the final Stop).
    pub fn len(&self) -> usize {
        self.atom_edits.len()
            + self.bond_edits.len()
            + self.source_deletes.len()
            + self.additions.len()
            + self.benzenes.len()
    }
}

/// Compute the pending edit set for a reaction: atom edits for mapped atoms
/// whose properties differ, bond edits for mapped pairs that differ
/// (including deletions and additions), a spanning forest of target-only
/// atoms rooted at mapped atoms, and eligible six-carbon aromatic rings
/// collapsed into single benzene items.
pub fn diff_reaction(r: &Reaction) -> Result<PendingEditSet, OracleError> {
    let source = r.source();
    let target = r.target();
    let s_maps = source.map_index();
    // target index -> source index for atoms present on both sides.
    let mut t2s = BTreeMap::new();
    for (t, a) in target.atoms().iter().enumerate() {
        if a.map_number != 0 {
            if let Some(&s) = s_maps.get(&a.map_number) {
                t2s.insert(t, s);
            }
        }
    }
    let s2t: BTreeMap<usize, usize> = t2s.iter().map(|(&t, &s)| (s, t)).collect();

    let mut pending = PendingEditSet::default();

    for (&t, &s) in &t2s {
        let want = AtomEditParams::of(target.atom(t));
        if AtomEditParams::of(source.atom(s)) != want {
            pending.atom_edits.insert(t, want);
        }
    }

    // Mapped-pair bond differences. Target bonds missing or different in the
    // source become Set edits; source bonds missing from the target become
    // Delete edits; source bonds reaching an atom with no target counterpart
    // are cut as source-keyed deletes (both-leftover bonds stay untouched).
    for (ti, tj, tb) in target.bonds() {
        if let (Some(&_si), Some(&_sj)) = (t2s.get(&ti), t2s.get(&tj)) {
            let sb = source.bond(t2s[&ti], t2s[&tj]);
            let differs =
                sb.map_or(true, |b| b.bond_type != tb.bond_type || b.stereo != tb.stereo);
            if differs {
                pending.bond_edits.insert(
                    pair(ti, tj),
                    BondEditParams::Set { bond_type: tb.bond_type, stereo: tb.stereo },
                );
            }
        }
    }
    for (si, sj, _) in source.bonds() {
        match (s2t.get(&si), s2t.get(&sj)) {
            (Some(&ti), Some(&tj)) => {
                if target.bond(ti, tj).is_none() {
                    pending.bond_edits.insert(pair(ti, tj), BondEditParams::Delete);
                }
            }
            (None, None) => {}
            _ => {
                pending.source_deletes.insert(pair(si, sj));
            }
        }
    }

    // Target-only atoms: collapse eligible benzene rings first, then span
    // the rest as a forest rooted at mapped atoms. Non-forest bonds in the
    // target-only region become deferred Set edits (ring closures).
    let target_only: BTreeSet<usize> =
        (0..target.atom_count()).filter(|t| !t2s.contains_key(t)).collect();
    let mut consumed = BTreeSet::new();
    for (k, item) in find_benzene_items(target, &target_only).into_iter().enumerate() {
        consumed.extend(item.ring_t.iter().copied());
        pending.benzenes.insert(k, item);
    }

    let mut visited: BTreeSet<usize> = t2s.keys().copied().collect();
    visited.extend(consumed.iter().copied());
    let mut queue: Vec<usize> = visited.iter().copied().collect();
    let mut head = 0;
    while head < queue.len() {
        let cur = queue[head];
        head += 1;
        for nb in target.neighbors(cur) {
            if !target_only.contains(&nb) || visited.contains(&nb) || consumed.contains(&cur) {
                continue;
            }
            visited.insert(nb);
            queue.push(nb);
            let a = target.atom(nb);
            let b = target.bond(cur, nb).expect("neighbor implies bond");
            pending.additions.insert(
                nb,
                AdditionItem {
                    parent_t: cur,
                    params: AddAtomParams {
                        atomic_number: a.atomic_number,
                        formal_charge: a.formal_charge,
                        chirality: a.chirality,
                        explicit_hs: a.explicit_hs,
                        is_aromatic: a.is_aromatic,
                        bond_type: b.bond_type,
                        bond_stereo: b.stereo,
                    },
                },
            );
        }
    }

    let unreached = target_only.iter().filter(|t| !visited.contains(t)).count();
    if unreached > 0 {
        return Err(OracleError::UnreachableAtoms { count: unreached });
    }

    // Ring closures: target-only-region bonds not realized by the forest or
    // a benzene item.
    for (ti, tj, tb) in target.bonds() {
        if !target_only.contains(&ti) && !target_only.contains(&tj) {
            continue;
        }
        if consumed.contains(&ti) || consumed.contains(&tj) {
            continue; // benzene items carry their own bonds
        }
        let forest_edge = pending.additions.get(&ti).is_some_and(|it| it.parent_t == tj)
            || pending.additions.get(&tj).is_some_and(|it| it.parent_t == ti);
        if !forest_edge {
            pending.bond_edits.insert(
                pair(ti, tj),
                BondEditParams::Set { bond_type: tb.bond_type, stereo: tb.stereo },
            );
        }
    }

    Ok(pending)
}

fn pair(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Benzene eligibility: six target-only aromatic carbons with default
/// properties forming one aromatic cycle, five of degree two, one of degree
/// three whose extra bond is a plain single bond to a carbon anchor.
fn find_benzene_items(target: &MolGraph, target_only: &BTreeSet<usize>) -> Vec<BenzeneItem> {
    let plain_ring_atom = |t: usize| {
        let a = target.atom(t);
        target_only.contains(&t)
            && a.atomic_number == 6
            && a.is_aromatic
            && a.formal_charge == 0
            && a.explicit_hs == 0
            && a.chirality == crate::graph::Chirality::None
    };
    let mut items = Vec::new();
    let mut used = BTreeSet::new();
    for &start in target_only {
        if used.contains(&start) || !plain_ring_atom(start) {
            continue;
        }
        // Collect the aromatic-bond cluster around `start`.
        let mut cluster = vec![start];
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for nb in target.neighbors(v) {
                let aromatic_link =
                    target.bond(v, nb).map(|b| b.bond_type == BondType::Aromatic).unwrap_or(false);
                if aromatic_link && plain_ring_atom(nb) && seen.insert(nb) {
                    cluster.push(nb);
                    stack.push(nb);
                }
            }
        }
        if cluster.len() != 6 {
            continue;
        }
        cluster.sort_unstable();
        // Degree pattern: exactly one atom with a single external bond.
        let mut anchor = None;
        let mut ok = true;
        for &t in &cluster {
            let nbs = target.neighbors(t);
            let ring_nbs: Vec<usize> =
                nbs.iter().copied().filter(|n| cluster.binary_search(n).is_ok()).collect();
            let ext: Vec<usize> =
                nbs.iter().copied().filter(|n| cluster.binary_search(n).is_err()).collect();
            let ring_bonds_aromatic = ring_nbs.iter().all(|&n| {
                let b = target.bond(t, n).unwrap();
                b.bond_type == BondType::Aromatic && b.stereo == BondStereo::None
            });
            if ring_nbs.len() != 2 || !ring_bonds_aromatic {
                ok = false;
                break;
            }
            match ext.len() {
                0 => {}
                1 => {
                    let e = ext[0];
                    let b = target.bond(t, e).unwrap();
                    let carbon_anchor = target.atom(e).atomic_number == 6;
                    if anchor.is_some()
                        || b.bond_type != BondType::Single
                        || b.stereo != BondStereo::None
                        || !carbon_anchor
                    {
                        ok = false;
                        break;
                    }
                    anchor = Some((e, t));
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        let Some((anchor_t, r0)) = anchor else { continue };
        if !ok {
            continue;
        }
        // Walk the ring from the anchored atom, taking the smaller-index
        // neighbor first for determinism.
        let mut ring = [0usize; 6];
        ring[0] = r0;
        let mut prev = r0;
        let mut cur = *target
            .neighbors(r0)
            .iter()
            .filter(|n| cluster.binary_search(n).is_ok())
            .min()
            .expect("ring atom has ring neighbors");
        for slot in ring.iter_mut().skip(1) {
            *slot = cur;
            let next = target
                .neighbors(cur)
                .into_iter()
                .find(|&n| n != prev && cluster.binary_search(&n).is_ok())
                .expect("ring walk continues");
            prev = cur;
            cur = next;
        }
        used.extend(cluster.iter().copied());
        items.push(BenzeneItem { anchor_t, ring_t: ring });
    }
    items
}

// ---------------------------------------------------------------------------
// Linearization

/// Which pending entry a candidate action came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ItemRef {
    AtomEdit(usize),
    BondEdit(usize, usize),
    SourceDelete(usize, usize),
    Addition(usize),
    Benzene(usize),
}

/// Action-kind priority classes, in retrosynthesis rank order. Whether a
/// bond Set counts as an addition or a retype depends on the current graph,
/// so classes are computed per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PriorityClass {
    BondDelete,
    BondAdd,
    BondRetype,
    AtomEdit,
    Benzene,
    AtomAdd,
}

fn priority_rank(class: PriorityClass, direction: Direction) -> u8 {
    use PriorityClass::*;
    match (direction, class) {
        (Direction::Retro, BondDelete) | (Direction::Forward, BondAdd) => 0,
        (Direction::Retro, BondAdd) | (Direction::Forward, BondDelete) => 1,
        (_, BondRetype) => 2,
        (_, AtomEdit) => 3,
        (_, Benzene) => 4,
        (_, AtomAdd) => 5,
    }
}

/// The evolving state of one linearization: the current graph (with
/// supernode), what is still pending, and the bookkeeping that maps
/// target-side indices to live graph indices.
pub struct GenState {
    pub graph: MolGraph,
    direction: Direction,
    pending: PendingEditSet,
    /// target index -> current graph index, grown as atoms are added.
    t2i: BTreeMap<usize, usize>,
    /// current graph index -> canonical rank of its target counterpart.
    rank: BTreeMap<usize, usize>,
    cano_t: Vec<usize>,
}

/// One selected action; `item` is None exactly for Stop.
#[derive(Debug, Clone)]
pub struct NextAction {
    pub action: EditAction,
    pub target: ActionTarget,
    item: Option<ItemRef>,
}

impl GenState {
    pub fn new(r: &Reaction) -> Result<GenState, OracleError> {
        let pending = diff_reaction(r)?;
        let mut graph = r.source().clone();
        graph.add_supernode().map_err(|e| OracleError::Inconsistent(e.to_string()))?;
        let cano_t = canonical_ranks(r.target());
        let s_maps = r.source().map_index();
        let mut t2i = BTreeMap::new();
        let mut rank = BTreeMap::new();
        for (t, a) in r.target().atoms().iter().enumerate() {
            if a.map_number != 0 {
                if let Some(&s) = s_maps.get(&a.map_number) {
                    t2i.insert(t, s);
                    rank.insert(s, cano_t[t]);
                }
            }
        }
        Ok(GenState { graph, direction: r.direction, pending, t2i, rank, cano_t })
    }

    pub fn pending(&self) -> &PendingEditSet {
        &self.pending
    }

    /// Applicable pending items with the graph atoms they make eligible.
    fn applicable(&self) -> Vec<(ItemRef, Vec<usize>)> {
        let mut out = Vec::new();
        for (&t, _) in &self.pending.atom_edits {
            if let Some(&i) = self.t2i.get(&t) {
                out.push((ItemRef::AtomEdit(t), vec![i]));
            }
        }
        for (&(ti, tj), _) in &self.pending.bond_edits {
            if let (Some(&i), Some(&j)) = (self.t2i.get(&ti), self.t2i.get(&tj)) {
                out.push((ItemRef::BondEdit(ti, tj), vec![i, j]));
            }
        }
        for &(i, j) in &self.pending.source_deletes {
            out.push((ItemRef::SourceDelete(i, j), vec![i, j]));
        }
        for (&t, item) in &self.pending.additions {
            if let Some(&i) = self.t2i.get(&item.parent_t) {
                out.push((ItemRef::Addition(t), vec![i]));
            }
        }
        for (&k, item) in &self.pending.benzenes {
            if let Some(&i) = self.t2i.get(&item.anchor_t) {
                out.push((ItemRef::Benzene(k), vec![i]));
            }
        }
        out
    }

    fn class_of(&self, item: ItemRef) -> PriorityClass {
        match item {
            ItemRef::AtomEdit(_) => PriorityClass::AtomEdit,
            ItemRef::SourceDelete(..) => PriorityClass::BondDelete,
            ItemRef::Addition(_) => PriorityClass::AtomAdd,
            ItemRef::Benzene(_) => PriorityClass::Benzene,
            ItemRef::BondEdit(ti, tj) => match self.pending.bond_edits[&(ti, tj)] {
                BondEditParams::Delete => PriorityClass::BondDelete,
                BondEditParams::Set { .. } => {
                    let (i, j) = (self.t2i[&ti], self.t2i[&tj]);
                    if self.graph.bond(i, j).is_some() {
                        PriorityClass::BondRetype
                    } else {
                        PriorityClass::BondAdd
                    }
                }
            },
        }
    }

    fn rank_key(&self, i: usize) -> (usize, usize) {
        (self.rank.get(&i).copied().unwrap_or(usize::MAX), i)
    }

    /// Decide the next action per the ordering policy; Stop once nothing is
    /// pending.
    pub fn next_action(
        &self,
        strategy: OrderingStrategy,
        rng: &mut ChaCha8Rng,
    ) -> Result<NextAction, OracleError> {
        let apps = self.applicable();
        if apps.is_empty() {
            if !self.pending.is_empty() {
                return Err(OracleError::Inconsistent(format!(
                    "{} pending edits are unreachable",
                    self.pending.len()
                )));
            }
            return Ok(NextAction {
                action: EditAction::Stop,
                target: ActionTarget::Supernode,
                item: None,
            });
        }

        let eligible: Vec<usize> = {
            let set: BTreeSet<usize> =
                apps.iter().flat_map(|(_, atoms)| atoms.iter().copied()).collect();
            set.into_iter().collect()
        };
        let pool: Vec<usize> = match strategy.prefers_modified() {
            None => eligible.clone(),
            Some(want_modified) => {
                let preferred: Vec<usize> = eligible
                    .iter()
                    .copied()
                    .filter(|&i| self.graph.atom(i).is_edited == want_modified)
                    .collect();
                if preferred.is_empty() {
                    eligible.clone()
                } else {
                    preferred
                }
            }
        };
        let atom = if strategy.uses_canonical_rank() {
            *pool.iter().min_by_key(|&&i| self.rank_key(i)).expect("pool is non-empty")
        } else {
            pool[rng.gen_range(0..pool.len())]
        };

        let at_atom: Vec<&(ItemRef, Vec<usize>)> =
            apps.iter().filter(|(_, atoms)| atoms.contains(&atom)).collect();
        let best = at_atom
            .iter()
            .map(|(item, _)| priority_rank(self.class_of(*item), self.direction))
            .min()
            .expect("atom came from an applicable item");
        let act: Vec<ItemRef> = at_atom
            .iter()
            .filter(|(item, _)| priority_rank(self.class_of(*item), self.direction) == best)
            .map(|(item, _)| *item)
            .collect();

        // Partner / child selection within the winning class.
        let chosen = if act.len() == 1 {
            act[0]
        } else if strategy.uses_canonical_rank() {
            *act.iter()
                .min_by_key(|item| match **item {
                    ItemRef::BondEdit(ti, tj) => {
                        let (i, j) = (self.t2i[&ti], self.t2i[&tj]);
                        self.rank_key(if i == atom { j } else { i })
                    }
                    ItemRef::SourceDelete(i, j) => self.rank_key(if i == atom { j } else { i }),
                    ItemRef::Addition(t) => (self.cano_t[t], t),
                    ItemRef::Benzene(k) => {
                        let ring = &self.pending.benzenes[&k].ring_t;
                        (ring.iter().map(|&t| self.cano_t[t]).min().unwrap(), k)
                    }
                    ItemRef::AtomEdit(t) => (self.cano_t[t], t),
                })
                .expect("non-empty action set")
        } else {
            act[rng.gen_range(0..act.len())]
        };

        let (action, target) = self.materialize(chosen);
        Ok(NextAction { action, target, item: Some(chosen) })
    }

    fn materialize(&self, item: ItemRef) -> (EditAction, ActionTarget) {
        match item {
            ItemRef::AtomEdit(t) => (
                EditAction::EditAtom(self.pending.atom_edits[&t]),
                ActionTarget::Atom(self.t2i[&t]),
            ),
            ItemRef::BondEdit(ti, tj) => {
                let (i, j) = pair(self.t2i[&ti], self.t2i[&tj]);
                (EditAction::EditBond(self.pending.bond_edits[&(ti, tj)]), ActionTarget::Pair(i, j))
            }
            ItemRef::SourceDelete(i, j) => {
                (EditAction::EditBond(BondEditParams::Delete), ActionTarget::Pair(i, j))
            }
            ItemRef::Addition(t) => (
                EditAction::AddAtom(self.pending.additions[&t].params),
                ActionTarget::Atom(self.t2i[&self.pending.additions[&t].parent_t]),
            ),
            ItemRef::Benzene(k) => (
                EditAction::AddBenzene,
                ActionTarget::Atom(self.t2i[&self.pending.benzenes[&k].anchor_t]),
            ),
        }
    }

    /// Apply a selected action and retire its pending item.
    pub fn advance(&mut self, next: &NextAction) -> Result<(), OracleError> {
        let Some(item) = next.item else { return Ok(()) };
        let before = self.graph.atom_count();
        let outcome = apply_action(&self.graph, &next.action, next.target)
            .map_err(|e| OracleError::Inconsistent(e.to_string()))?;
        self.graph = outcome.graph;
        match item {
            ItemRef::AtomEdit(t) => {
                self.pending.atom_edits.remove(&t);
            }
            ItemRef::BondEdit(ti, tj) => {
                self.pending.bond_edits.remove(&(ti, tj));
            }
            ItemRef::SourceDelete(i, j) => {
                self.pending.source_deletes.remove(&(i, j));
            }
            ItemRef::Addition(t) => {
                self.t2i.insert(t, before);
                self.rank.insert(before, self.cano_t[t]);
                self.pending.additions.remove(&t);
            }
            ItemRef::Benzene(k) => {
                let ring = self.pending.benzenes.remove(&k).expect("selected item pending");
                for (offset, &t) in ring.ring_t.iter().enumerate() {
                    self.t2i.insert(t, before + offset);
                    self.rank.insert(before + offset, self.cano_t[t]);
                }
            }
        }
        Ok(())
    }
}

/// One teacher-forcing step: the graph the model sees and the action it must
/// choose.
#[derive(Debug, Clone)]
pub struct Step {
    pub graph_before: MolGraph,
    pub action: EditAction,
    pub target: ActionTarget,
}

/// A complete linearized sequence, ending in Stop.
#[derive(Debug, Clone)]
pub struct GeneratedSequence {
    pub steps: Vec<Step>,
    pub final_graph: MolGraph,
}

impl GeneratedSequence {
    pub fn actions(&self) -> impl Iterator<Item = &EditAction> {
        self.steps.iter().map(|s| &s.action)
    }
}

/// Linearize one reaction. Returns Ok(None) when the sequence (including
/// Stop) would exceed `max_steps`; callers count such drops.
pub fn generate_sequence(
    r: &Reaction,
    policy: &OrderingPolicy,
    max_steps: usize,
) -> Result<Option<GeneratedSequence>, OracleError> {
    use rand::SeedableRng;
    let mut state = GenState::new(r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(reaction_seed(&r.id, policy.rng_seed));
    let mut steps = Vec::new();
    loop {
        let next = state.next_action(policy.strategy, &mut rng)?;
        steps.push(Step {
            graph_before: state.graph.clone(),
            action: next.action,
            target: next.target,
        });
        if steps.len() > max_steps {
            return Ok(None);
        }
        if matches!(next.action, EditAction::Stop) {
            break;
        }
        state.advance(&next)?;
    }
    Ok(Some(GeneratedSequence { steps, final_graph: state.graph }))
}

/// Union of all action parameterizations emitted over a set of sequences.
pub fn build_vocab<'a, I>(sequences: I) -> ActionVocab
where
    I: IntoIterator<Item = &'a GeneratedSequence>,
{
    ActionVocab::from_actions(
        sequences.into_iter().flat_map(|s| s.steps.iter().map(|st| st.action)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::canonical_smiles;

    fn retro(rxn: &str) -> Reaction {
        Reaction::from_reaction_smiles("t", rxn, None, Direction::Retro).unwrap()
    }

    fn forward(rxn: &str) -> Reaction {
        Reaction::from_reaction_smiles("t", rxn, None, Direction::Forward).unwrap()
    }

    fn policy(strategy: OrderingStrategy) -> OrderingPolicy {
        OrderingPolicy { strategy, rng_seed: 7 }
    }

    fn run(r: &Reaction, strategy: OrderingStrategy) -> GeneratedSequence {
        generate_sequence(r, &policy(strategy), 64).unwrap().expect("within step budget")
    }

    /// Replay target check: the final graph, minus supernode and maps, must
    /// canonicalize exactly like the reaction's expected outcome.
    fn assert_reconstructs(r: &Reaction, seq: &GeneratedSequence) {
        let got = canonical_smiles(&seq.final_graph.without_supernode(), false);
        let want = canonical_smiles(&expected_final(r), false);
        assert_eq!(got, want);
        seq.final_graph.without_supernode().check_valences().unwrap();
    }

    /// Retro ends at the substrates; forward ends at the product plus any
    /// unmatched substrate leftovers with their internal bonds.
    fn expected_final(r: &Reaction) -> MolGraph {
        match r.direction {
            Direction::Retro => r.target().clone(),
            Direction::Forward => {
                let prod_maps = r.product.map_index();
                let leftovers: Vec<usize> = (0..r.substrates.atom_count())
                    .filter(|&i| {
                        let m = r.substrates.atom(i).map_number;
                        m == 0 || !prod_maps.contains_key(&m)
                    })
                    .collect();
                r.product.disjoint_union(&r.substrates.subgraph(&leftovers))
            }
        }
    }

    #[test]
    fn identical_sides_yield_a_lone_stop() {
        let r = forward("[CH3:1][OH:2]>>[CH3:1][OH:2]");
        assert!(diff_reaction(&r).unwrap().is_empty());
        for strategy in OrderingStrategy::ALL {
            let seq = run(&r, strategy);
            assert_eq!(seq.steps.len(), 1);
            assert!(matches!(seq.steps[0].action, EditAction::Stop));
            assert_eq!(seq.steps[0].target, ActionTarget::Supernode);
        }
    }

    #[test]
    fn ester_retro_is_one_delete_one_oxygen_addition() {
        // Esterification run backwards: break the C–O ester bond, then give
        // the acyl carbon its hydroxyl back.
        let r = retro(
            "[CH3:1][C:2](=[O:3])[OH:4].[CH3:5][OH:6]>>[CH3:1][C:2](=[O:3])[O:6][CH3:5]",
        );
        let pending = diff_reaction(&r).unwrap();
        assert_eq!(pending.len(), 2);
        assert_eq!(pending.bond_edits.len(), 1);
        assert!(pending.bond_edits.values().all(|p| *p == BondEditParams::Delete));
        assert_eq!(pending.additions.len(), 1);
        let added = pending.additions.values().next().unwrap();
        assert_eq!(added.params.atomic_number, 8);
        assert_eq!(added.params.bond_type, BondType::Single);

        for strategy in OrderingStrategy::ALL {
            let seq = run(&r, strategy);
            assert_eq!(seq.steps.len(), 3);
            // The deletion opens the sequence under every policy: both its
            // endpoints rank as candidates and deletion outranks addition.
            assert!(
                matches!(seq.steps[0].action, EditAction::EditBond(BondEditParams::Delete)),
                "{strategy:?} must start with the bond deletion"
            );
            assert_reconstructs(&r, &seq);
        }
    }

    #[test]
    fn benzene_leaving_group_collapses_to_one_action() {
        let r = retro("[CH3:1]c1ccccc1>>[CH4:1]");
        let pending = diff_reaction(&r).unwrap();
        assert_eq!(pending.benzenes.len(), 1);
        assert_eq!(pending.len(), 1);
        let seq = run(&r, OrderingStrategy::BfsCanoAt);
        assert_eq!(seq.steps.len(), 2);
        assert!(matches!(seq.steps[0].action, EditAction::AddBenzene));
        assert_reconstructs(&r, &seq);
        let counts = build_vocab([&seq]).counts();
        assert_eq!(counts.add_benzene, 1);
        assert_eq!(counts.stop, 1);
    }

    #[test]
    fn substituted_ring_falls_back_to_atom_additions() {
        // A para-methyl on the incoming ring breaks benzene eligibility, so
        // the ring is built atom by atom with one closing bond edit.
        let r = retro("[CH3:1]c1ccc(C)cc1>>[CH4:1]");
        let pending = diff_reaction(&r).unwrap();
        assert!(pending.benzenes.is_empty());
        assert_eq!(pending.additions.len(), 7);
        assert_eq!(pending.bond_edits.len(), 1); // the ring closure
        for strategy in OrderingStrategy::ALL {
            let seq = run(&r, strategy);
            assert!(seq.actions().all(|a| !matches!(a, EditAction::AddBenzene)));
            assert_reconstructs(&r, &seq);
        }
    }

    #[test]
    fn bfs_interleaves_sides_and_dfs_completes_them() {
        // Breaking butane's central bond leaves two chains to grow, each two
        // atoms long, anchored off the never-edited terminal carbons.
        let r = retro(
            "[CH3:1][CH2:3][O:5][CH3:6].[CH3:2][CH2:4][NH:7][CH3:8]>>[CH3:3][CH2:1][CH2:2][CH3:4]",
        );
        let add_sides = |seq: &GeneratedSequence| -> Vec<char> {
            // Recover each added atom's side from the map number of the
            // target atom its parameters came from (O→A-chain, N→B-chain,
            // then the terminal methyls).
            let mut sides = Vec::new();
            for step in &seq.steps {
                if let EditAction::AddAtom(p) = step.action {
                    let side = match p.atomic_number {
                        8 => 'A',
                        7 => 'B',
                        6 => {
                            // Methyl child: side of the anchor it grows from.
                            let ActionTarget::Atom(anchor) = step.target else { unreachable!() };
                            let anchor_z = step.graph_before.atom(anchor).atomic_number;
                            if anchor_z == 8 {
                                'A'
                            } else {
                                'B'
                            }
                        }
                        _ => unreachable!("unexpected addition"),
                    };
                    sides.push(side);
                }
            }
            sides
        };

        let bfs = run(&r, OrderingStrategy::BfsCanoAt);
        let dfs = run(&r, OrderingStrategy::DfsCanoAt);
        assert_reconstructs(&r, &bfs);
        assert_reconstructs(&r, &dfs);

        let bfs_sides = add_sides(&bfs);
        let dfs_sides = add_sides(&dfs);
        assert_eq!(bfs_sides.len(), 4);
        // DFS grows one chain to completion before touching the other.
        assert!(
            dfs_sides == ['A', 'A', 'B', 'B'] || dfs_sides == ['B', 'B', 'A', 'A'],
            "dfs sides grouped, got {dfs_sides:?}"
        );
        // BFS switches sides before the first chain is done.
        assert_ne!(bfs_sides[0], bfs_sides[1], "bfs must alternate first, got {bfs_sides:?}");
    }

    #[test]
    fn aromatic_reduction_edits_atoms_and_bonds_in_priority_order() {
        let r = forward(
            "[cH:1]1[cH:2][cH:3][cH:4][cH:5][cH:6]1>>[CH2:1]1[CH2:2][CH2:3][CH2:4][CH2:5][CH2:6]1",
        );
        let pending = diff_reaction(&r).unwrap();
        assert_eq!(pending.atom_edits.len(), 6);
        assert_eq!(pending.bond_edits.len(), 6);
        let seq = run(&r, OrderingStrategy::BfsCanoAt);
        assert_eq!(seq.steps.len(), 13);
        assert_reconstructs(&r, &seq);
        // Whenever an atom still has a pending bond retype, that retype must
        // come before the atom's own property edit.
        let counts = build_vocab([&seq]).counts();
        assert_eq!(counts.edit_atom, 1); // six applications, one parameterization
        assert_eq!(counts.edit_bond, 1);
    }

    #[test]
    fn forward_leftovers_are_cut_loose_and_survive() {
        // Methanol attacks the acid; the acid's hydroxyl oxygen stays behind
        // as a detached leftover (no atom-deletion action exists).
        let r = forward(
            "[CH3:1][C:2](=[O:3])[OH:4].[CH3:5][OH:6]>>[CH3:1][C:2](=[O:3])[O:6][CH3:5]",
        );
        let pending = diff_reaction(&r).unwrap();
        assert_eq!(pending.source_deletes.len(), 1);
        assert!(pending.bond_edits.values().any(|p| matches!(p, BondEditParams::Set { .. })));
        for strategy in OrderingStrategy::ALL {
            let seq = run(&r, strategy);
            assert_reconstructs(&r, &seq);
        }
        // Under canonical tie-break the leaving oxygen (absent from the
        // target) ranks last, so the new C-O bond opens the sequence: bond
        // addition outranks deletion in the forward direction.
        for strategy in [OrderingStrategy::BfsCanoAt, OrderingStrategy::DfsCanoAt] {
            let seq = run(&r, strategy);
            assert!(
                matches!(seq.steps[0].action, EditAction::EditBond(BondEditParams::Set { .. })),
                "{strategy:?} must start with the new C-O bond"
            );
        }
    }

    #[test]
    fn unreachable_target_atoms_are_rejected() {
        let r = forward("[CH3:1][OH:2]>>[CH3:1][OH:2].C");
        assert_eq!(diff_reaction(&r), Err(OracleError::UnreachableAtoms { count: 1 }));
    }

    #[test]
    fn sequences_are_reproducible_and_cano_is_seed_free() {
        let r = retro(
            "[CH3:1][C:2](=[O:3])[OH:4].[CH3:5][OH:6]>>[CH3:1][C:2](=[O:3])[O:6][CH3:5]",
        );
        for strategy in OrderingStrategy::ALL {
            let a = generate_sequence(&r, &policy(strategy), 64).unwrap().unwrap();
            let b = generate_sequence(&r, &policy(strategy), 64).unwrap().unwrap();
            let acts_a: Vec<_> = a.actions().collect();
            let acts_b: Vec<_> = b.actions().collect();
            assert_eq!(acts_a, acts_b, "{strategy:?} must be reproducible");
        }
        for strategy in [OrderingStrategy::BfsCanoAt, OrderingStrategy::DfsCanoAt] {
            let a = generate_sequence(&r, &OrderingPolicy { strategy, rng_seed: 1 }, 64)
                .unwrap()
                .unwrap();
            let b = generate_sequence(&r, &OrderingPolicy { strategy, rng_seed: 999 }, 64)
                .unwrap()
                .unwrap();
            let acts_a: Vec<_> = a.actions().collect();
            let acts_b: Vec<_> = b.actions().collect();
            assert_eq!(acts_a, acts_b, "{strategy:?} must ignore the seed");
        }
    }

    #[test]
    fn overlong_sequences_are_dropped_not_truncated() {
        let r = retro("[CH3:1]c1ccc(C)cc1>>[CH4:1]");
        // 7 additions + 1 ring closure + Stop = 9 steps; a budget of 4 drops it.
        let seq = generate_sequence(&r, &policy(OrderingStrategy::BfsCanoAt), 4).unwrap();
        assert!(seq.is_none());
    }

    #[test]
    fn vocab_accumulates_across_reactions() {
        let ester = retro(
            "[CH3:1][C:2](=[O:3])[OH:4].[CH3:5][OH:6]>>[CH3:1][C:2](=[O:3])[O:6][CH3:5]",
        );
        let toluene = retro("[CH3:1]c1ccccc1>>[CH4:1]");
        let seqs = [
            run(&ester, OrderingStrategy::BfsCanoAt),
            run(&toluene, OrderingStrategy::BfsCanoAt),
        ];
        let counts = build_vocab(seqs.iter()).counts();
        assert_eq!(counts.edit_bond, 1);
        assert_eq!(counts.add_atom, 1);
        assert_eq!(counts.add_benzene, 1);
        assert_eq!(counts.stop, 1);
        assert_eq!(counts.total(), 4);
    }
}
