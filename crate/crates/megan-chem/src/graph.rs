//! Molecular graphs: heavy atoms as nodes, bonds as undirected edges, plus an
//! optional supernode that is connected to every atom.
//!
//! Hydrogens never appear as nodes; each atom carries an explicit hydrogen
//! count and the remainder is implied by valence. The supernode is virtual:
//! it always has index `atom_count()` (i.e. node n-1 of n), its bonds to every
//! atom are derived rather than stored, so appending atoms can never displace
//! it from the last position.

use crate::element;
use std::collections::BTreeMap;
use std::fmt;

/// Tetrahedral chirality tag, stored as an opaque label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Chirality {
    #[default]
    None,
    /// `@` — counter-clockwise.
    Ccw,
    /// `@@` — clockwise.
    Cw,
}

impl Chirality {
    pub fn code(self) -> u8 {
        match self {
            Chirality::None => 0,
            Chirality::Ccw => 1,
            Chirality::Cw => 2,
        }
    }
}

/// Chemical bond orders stored on edges. Featurization additionally knows
/// about supernode and self-loop "bond types", but those are materialized only
/// inside the tensors and never stored here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub fn order(self) -> u8 {
        match self {
            BondType::Single => 1,
            BondType::Double => 2,
            BondType::Triple => 3,
            // Aromatic bonds count one towards the ring valence; the extra
            // aromatic valence unit is handled by the hydrogen completion rule.
            BondType::Aromatic => 1,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondType::Single => 0,
            BondType::Double => 1,
            BondType::Triple => 2,
            BondType::Aromatic => 3,
        }
    }
}

/// Double-bond stereochemistry, stored as an opaque label on the double bond
/// itself (directional single-bond decorations exist only in SMILES text).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum BondStereo {
    #[default]
    None,
    /// cis, written with opposing slashes.
    Z,
    /// trans, written with matching slashes.
    E,
}

impl BondStereo {
    pub fn code(self) -> u8 {
        match self {
            BondStereo::None => 0,
            BondStereo::Z => 1,
            BondStereo::E => 2,
        }
    }
}

/// A heavy atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtomNode {
    pub atomic_number: u8,
    pub formal_charge: i8,
    pub chirality: Chirality,
    /// Hydrogens written explicitly (bracket counts); implicit hydrogens are
    /// derived on demand and never stored.
    pub explicit_hs: u8,
    pub is_aromatic: bool,
    /// Atom-atom mapping number; 0 means unmapped.
    pub map_number: u32,
    /// Set once an edit touches this atom; feeds the "is edited" feature.
    pub is_edited: bool,
}

impl AtomNode {
    pub fn new(atomic_number: u8) -> Self {
        AtomNode {
            atomic_number,
            formal_charge: 0,
            chirality: Chirality::None,
            explicit_hs: 0,
            is_aromatic: false,
            map_number: 0,
            is_edited: false,
        }
    }

    /// The label tuple that matters for chemical identity (mapping and edit
    /// state excluded).
    pub fn identity(&self) -> (u8, i8, u8, u8, bool) {
        (
            self.atomic_number,
            self.formal_charge,
            self.chirality.code(),
            self.explicit_hs,
            self.is_aromatic,
        )
    }
}

/// A chemical bond between atoms `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BondEdge {
    pub bond_type: BondType,
    pub stereo: BondStereo,
    pub is_edited: bool,
}

impl BondEdge {
    pub fn new(bond_type: BondType) -> Self {
        BondEdge { bond_type, stereo: BondStereo::None, is_edited: false }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("atom index {0} out of bounds")]
    AtomOutOfBounds(usize),
    #[error("self-bond on atom {0}")]
    SelfBond(usize),
    #[error("graph already has a supernode")]
    SupernodeExists,
    #[error("atom {index} ({symbol}{charge:+}) exceeds maximum valence: {valence} > {max}")]
    ValenceExceeded { index: usize, symbol: String, charge: i8, valence: u8, max: u8 },
}

/// Undirected molecular graph. Bonds are keyed by `(min, max)` atom index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MolGraph {
    atoms: Vec<AtomNode>,
    bonds: BTreeMap<(usize, usize), BondEdge>,
    has_supernode: bool,
}

impl MolGraph {
    pub fn new() -> Self {
        MolGraph::default()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Total node count including the supernode if present.
    pub fn node_count(&self) -> usize {
        self.atoms.len() + usize::from(self.has_supernode)
    }

    pub fn has_supernode(&self) -> bool {
        self.has_supernode
    }

    /// Index of the supernode; always the last node.
    pub fn supernode_index(&self) -> Option<usize> {
        self.has_supernode.then_some(self.atoms.len())
    }

    pub fn is_supernode(&self, idx: usize) -> bool {
        self.has_supernode && idx == self.atoms.len()
    }

    pub fn atom(&self, idx: usize) -> &AtomNode {
        &self.atoms[idx]
    }

    pub fn atom_mut(&mut self, idx: usize) -> &mut AtomNode {
        &mut self.atoms[idx]
    }

    pub fn atoms(&self) -> &[AtomNode] {
        &self.atoms
    }

    pub fn add_atom(&mut self, atom: AtomNode) -> usize {
        self.atoms.push(atom);
        self.atoms.len() - 1
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Chemical bonds only (no supernode edges), keyed `(i, j)` with `i < j`.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize, &BondEdge)> {
        self.bonds.iter().map(|(&(i, j), b)| (i, j, b))
    }

    pub fn bond(&self, i: usize, j: usize) -> Option<&BondEdge> {
        self.bonds.get(&Self::key(i, j))
    }

    pub fn bond_mut(&mut self, i: usize, j: usize) -> Option<&mut BondEdge> {
        self.bonds.get_mut(&Self::key(i, j))
    }

    fn key(i: usize, j: usize) -> (usize, usize) {
        if i < j {
            (i, j)
        } else {
            (j, i)
        }
    }

    pub fn set_bond(&mut self, i: usize, j: usize, bond: BondEdge) -> Result<(), GraphError> {
        let n = self.atoms.len();
        if i >= n {
            return Err(GraphError::AtomOutOfBounds(i));
        }
        if j >= n {
            return Err(GraphError::AtomOutOfBounds(j));
        }
        if i == j {
            return Err(GraphError::SelfBond(i));
        }
        self.bonds.insert(Self::key(i, j), bond);
        Ok(())
    }

    pub fn remove_bond(&mut self, i: usize, j: usize) -> Option<BondEdge> {
        self.bonds.remove(&Self::key(i, j))
    }

    /// Attach the supernode. It is virtual: no storage changes besides the
    /// flag, and it is automatically connected to every atom, present and
    /// future.
    pub fn add_supernode(&mut self) -> Result<(), GraphError> {
        if self.has_supernode {
            return Err(GraphError::SupernodeExists);
        }
        self.has_supernode = true;
        Ok(())
    }

    /// Neighbor atom indices via chemical bonds, ascending.
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for (&(i, j), _) in &self.bonds {
            if i == idx {
                out.push(j);
            } else if j == idx {
                out.push(i);
            }
        }
        out.sort_unstable();
        out
    }

    /// Sum of bond orders at an atom (aromatic counts 1; the aromatic system
    /// itself reserves one extra unit, handled by the hydrogen rules).
    pub fn bond_order_sum(&self, idx: usize) -> u8 {
        let mut sum = 0u8;
        for (&(i, j), b) in &self.bonds {
            if i == idx || j == idx {
                sum = sum.saturating_add(b.bond_type.order());
            }
        }
        sum
    }

    /// Implicit hydrogen count for an atom under the completion rules:
    /// organic-subset atoms are topped up to the smallest charge-adjusted
    /// allowed valence; aromatic atoms reserve one valence unit for the ring;
    /// everything else carries exactly its explicit hydrogens.
    pub fn implicit_hs(&self, idx: usize) -> u8 {
        // A written hydrogen count is a complete specification: [NH3+] means
        // exactly three hydrogens and is never topped up.
        if self.atoms[idx].explicit_hs > 0 {
            return 0;
        }
        self.hydrogens_if_implicit(idx)
    }

    /// Hydrogen count the completion rules would assign if the atom carried
    /// no written count: top up to the smallest charge-adjusted allowed
    /// valence. Also answers "can this atom be emitted bare?" — it can when
    /// this equals its current total.
    pub fn hydrogens_if_implicit(&self, idx: usize) -> u8 {
        let a = &self.atoms[idx];
        if !element::in_organic_subset(a.atomic_number) {
            return 0;
        }
        let used = self.bond_order_sum(idx) as i16 + i16::from(a.is_aromatic);
        let allowed = element::allowed_valences(a.atomic_number, a.formal_charge);
        // Aromatic atoms never ladder to a higher valence state (a thiophene
        // sulfur stays divalent); aliphatic ones take the smallest that fits.
        let candidates: &[u8] = if a.is_aromatic { &allowed[..1] } else { &allowed };
        for &v in candidates {
            if v as i16 >= used {
                return (v as i16 - used) as u8;
            }
        }
        0
    }

    pub fn total_hs(&self, idx: usize) -> u8 {
        self.atoms[idx].explicit_hs + self.implicit_hs(idx)
    }

    /// Validate every atom against its charge-adjusted maximum valence.
    pub fn check_valences(&self) -> Result<(), GraphError> {
        for idx in 0..self.atoms.len() {
            let a = &self.atoms[idx];
            let valence = self.bond_order_sum(idx)
                + a.explicit_hs
                + self.implicit_hs(idx)
                + u8::from(a.is_aromatic);
            let max = element::effective_max_valence(a.atomic_number, a.formal_charge)
                + u8::from(a.is_aromatic);
            // The aromatic unit appears on both sides: it is part of the used
            // valence and of the allowance, so plain rings neither gain nor
            // lose headroom from aromaticity.
            if valence > max {
                return Err(GraphError::ValenceExceeded {
                    index: idx,
                    symbol: element::symbol(a.atomic_number).to_string(),
                    charge: a.formal_charge,
                    valence,
                    max,
                });
            }
        }
        Ok(())
    }

    /// Connected components over chemical bonds, each sorted ascending;
    /// components ordered by their smallest atom index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut queue = vec![start];
            while let Some(v) = queue.pop() {
                for w in self.neighbors(v) {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        queue.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Copy of the graph with atoms re-ordered so that new index `i` holds
    /// old atom `perm[i]`. The supernode flag carries over. Used by
    /// permutation-invariance tests and the canonical writer.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut inverse = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut g = MolGraph {
            atoms: perm.iter().map(|&old| self.atoms[old]).collect(),
            bonds: BTreeMap::new(),
            has_supernode: self.has_supernode,
        };
        for (&(i, j), b) in &self.bonds {
            let (ni, nj) = (inverse[i], inverse[j]);
            g.bonds.insert(Self::key(ni, nj), *b);
        }
        g
    }

    /// Copy with the supernode flag cleared; atoms and chemical bonds are
    /// unchanged.
    pub fn without_supernode(&self) -> MolGraph {
        let mut g = self.clone();
        g.has_supernode = false;
        g
    }

    /// New graph holding this graph's atoms followed by `other`'s, with no
    /// bonds between the two parts and no supernode.
    pub fn disjoint_union(&self, other: &MolGraph) -> MolGraph {
        let offset = self.atoms.len();
        let mut g = MolGraph {
            atoms: self.atoms.iter().chain(other.atoms.iter()).copied().collect(),
            bonds: self.bonds.clone(),
            has_supernode: false,
        };
        for (&(i, j), b) in &other.bonds {
            g.bonds.insert((i + offset, j + offset), *b);
        }
        g
    }

    /// Induced subgraph on `keep` (sorted ascending, no duplicates): the kept
    /// atoms re-indexed densely plus every bond among them. The supernode, if
    /// any, does not carry over.
    pub fn subgraph(&self, keep: &[usize]) -> MolGraph {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut remap = BTreeMap::new();
        for (new, &old) in keep.iter().enumerate() {
            remap.insert(old, new);
        }
        let mut g = MolGraph::new();
        for &old in keep {
            g.add_atom(self.atoms[old]);
        }
        for (&(i, j), b) in &self.bonds {
            if let (Some(&ni), Some(&nj)) = (remap.get(&i), remap.get(&j)) {
                g.bonds.insert(Self::key(ni, nj), *b);
            }
        }
        g
    }

    /// Copy with all atom map numbers cleared.
    pub fn without_maps(&self) -> MolGraph {
        let mut g = self.clone();
        for a in &mut g.atoms {
            a.map_number = 0;
        }
        g
    }

    /// Copy with all edit flags cleared.
    pub fn without_edit_flags(&self) -> MolGraph {
        let mut g = self.clone();
        for a in &mut g.atoms {
            a.is_edited = false;
        }
        for b in g.bonds.values_mut() {
            b.is_edited = false;
        }
        g
    }

    /// Map number → atom index for mapped atoms.
    pub fn map_index(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for (idx, a) in self.atoms.iter().enumerate() {
            if a.map_number != 0 {
                out.insert(a.map_number, idx);
            }
        }
        out
    }

    /// Structural equality up to atom order: both graphs canonicalized by the
    /// caller beforehand; here simply label-wise equality of atoms and bonds.
    pub fn same_labeled_graph(&self, other: &MolGraph) -> bool {
        self.atoms.len() == other.atoms.len()
            && self
                .atoms
                .iter()
                .zip(&other.atoms)
                .all(|(a, b)| a.identity() == b.identity())
            && self.bonds.len() == other.bonds.len()
            && self.bonds.iter().zip(&other.bonds).all(|((ka, a), (kb, b))| {
                ka == kb && a.bond_type == b.bond_type && a.stereo == b.stereo
            })
    }
}

impl fmt::Display for MolGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MolGraph({} atoms, {} bonds{})",
            self.atoms.len(),
            self.bonds.len(),
            if self.has_supernode { ", supernode" } else { "" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn methane() -> MolGraph {
        let mut g = MolGraph::new();
        g.add_atom(AtomNode::new(6));
        g
    }

    #[test]
    fn implicit_hydrogens_methane() {
        let g = methane();
        assert_eq!(g.implicit_hs(0), 4);
        assert_eq!(g.total_hs(0), 4);
    }

    #[test]
    fn supernode_is_last_node() {
        let mut g = methane();
        g.add_supernode().unwrap();
        assert_eq!(g.supernode_index(), Some(1));
        // Appending an atom keeps the supernode at the end.
        g.add_atom(AtomNode::new(8));
        assert_eq!(g.supernode_index(), Some(2));
        assert!(g.is_supernode(2));
        assert!(!g.is_supernode(1));
        assert!(g.add_supernode().is_err());
    }

    #[test]
    fn valence_check_rejects_pentavalent_carbon() {
        let mut g = MolGraph::new();
        let c = g.add_atom(AtomNode::new(6));
        for _ in 0..5 {
            let o = g.add_atom(AtomNode::new(8));
            g.set_bond(c, o, BondEdge::new(BondType::Single)).unwrap();
        }
        let err = g.check_valences().unwrap_err();
        assert!(matches!(err, GraphError::ValenceExceeded { index: 0, .. }));
    }

    #[test]
    fn charged_nitrogen_valence() {
        // N+ with four single bonds is fine, neutral N with four is not.
        let mut g = MolGraph::new();
        let n = g.add_atom(AtomNode::new(7));
        for _ in 0..4 {
            let c = g.add_atom(AtomNode::new(6));
            g.set_bond(n, c, BondEdge::new(BondType::Single)).unwrap();
        }
        assert!(g.check_valences().is_err());
        g.atom_mut(n).formal_charge = 1;
        assert!(g.check_valences().is_ok());
    }

    #[test]
    fn permutation_round_trip() {
        let mut g = MolGraph::new();
        let c = g.add_atom(AtomNode::new(6));
        let o = g.add_atom(AtomNode::new(8));
        let n = g.add_atom(AtomNode::new(7));
        g.set_bond(c, o, BondEdge::new(BondType::Single)).unwrap();
        g.set_bond(o, n, BondEdge::new(BondType::Double)).unwrap();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.atom(0).atomic_number, 7);
        assert_eq!(p.atom(1).atomic_number, 6);
        assert!(p.bond(1, 2).is_some()); // old (c, o)
        assert_eq!(p.bond(0, 2).unwrap().bond_type, BondType::Double);
        // Applying the inverse permutation restores the original.
        let back = p.permuted(&[1, 2, 0]);
        assert_eq!(back, g);
    }

    #[test]
    fn components_split() {
        let mut g = MolGraph::new();
        let a = g.add_atom(AtomNode::new(6));
        let b = g.add_atom(AtomNode::new(6));
        g.add_atom(AtomNode::new(8));
        g.set_bond(a, b, BondEdge::new(BondType::Single)).unwrap();
        assert_eq!(g.components(), vec![vec![0, 1], vec![2]]);
    }
}
