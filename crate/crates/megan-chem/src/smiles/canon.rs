//! Canonical atom ordering.
//!
//! Iterative partition refinement over atom invariants, with a branch-and-
//! minimize search whenever refinement leaves symmetric atoms: every member of
//! the first tied class is tried as the next fixed atom and the lexicographically
//! smallest emitted string wins. This is exact (permutation invariant) and fast
//! on molecule-sized graphs, where ties are rare and shallow.
//!
//! Atom map numbers, edit flags and stereo labels are excluded from the
//! invariants, so canonical order is stable under mapping/editing and stereo
//! reference neighbors can be chosen *from* the canonical order without
//! circularity.

use super::write;
use crate::graph::MolGraph;
use std::collections::BTreeMap;

/// Hard cap on tie-break leaves per component; molecule-sized inputs stay far
/// below it. Beyond the cap the best string found so far wins (still
/// deterministic for a given input).
const MAX_LEAVES: usize = 20_000;

/// Rank of every atom in the canonical output order: rank 0 is emitted first.
/// Ranks are global across components (components are ordered by their
/// canonical strings).
pub fn canonical_ranks(g: &MolGraph) -> Vec<usize> {
    ordered_components(g).ranks
}

/// Canonical SMILES. Components are individually canonicalized, sorted by
/// their (map-free) canonical strings and dot-joined.
pub fn canonical_smiles(g: &MolGraph, keep_maps: bool) -> String {
    let oc = ordered_components(g);
    if !keep_maps {
        return oc.strings.join(".");
    }
    let parts: Vec<String> = oc
        .components
        .iter()
        .map(|comp| write::emit_component(g, comp, &oc.ranks, &oc.ranks, true).0)
        .collect();
    parts.join(".")
}

struct OrderedComponents {
    /// Components in canonical order; atoms within each sorted ascending.
    components: Vec<Vec<usize>>,
    /// Map-free canonical string per component, same order.
    strings: Vec<String>,
    /// Global emission rank per atom.
    ranks: Vec<usize>,
}

fn ordered_components(g: &MolGraph) -> OrderedComponents {
    let mut pieces: Vec<(String, Vec<usize>, Vec<usize>)> = g
        .components()
        .into_iter()
        .map(|comp| {
            let (string, preorder) = component_canonical(g, &comp);
            (string, comp, preorder)
        })
        .collect();
    // Ties on equal strings (duplicate components) are broken by the smallest
    // original atom index, purely for determinism.
    pieces.sort_by(|a, b| (&a.0, a.1.first()).cmp(&(&b.0, b.1.first())));

    let mut ranks = vec![0usize; g.atom_count()];
    let mut next = 0usize;
    for (_, _, preorder) in &pieces {
        for &atom in preorder {
            ranks[atom] = next;
            next += 1;
        }
    }
    OrderedComponents {
        components: pieces.iter().map(|p| p.1.clone()).collect(),
        strings: pieces.iter().map(|p| p.0.clone()).collect(),
        ranks,
    }
}

/// Canonical string and emission (preorder) atom list for one component.
fn component_canonical(g: &MolGraph, comp: &[usize]) -> (String, Vec<usize>) {
    let init = initial_classes(g, comp);
    let mut best: Option<(String, Vec<usize>)> = None;
    let mut leaves = 0usize;
    search(g, comp, init, &mut best, &mut leaves);
    best.expect("component search yields at least one candidate")
}

fn search(
    g: &MolGraph,
    comp: &[usize],
    classes: BTreeMap<usize, usize>,
    best: &mut Option<(String, Vec<usize>)>,
    leaves: &mut usize,
) {
    if *leaves >= MAX_LEAVES {
        return;
    }
    let classes = refine(g, comp, classes);
    let n_classes = distinct(&classes);
    if n_classes == comp.len() {
        *leaves += 1;
        // Fully discriminated: classes define the visit priority.
        let mut rank = vec![usize::MAX; g.atom_count()];
        for (&atom, &class) in &classes {
            rank[atom] = class;
        }
        let (string, preorder) = write::emit_component(g, comp, &rank, &rank, false);
        let candidate = (string, preorder);
        if best.as_ref().map_or(true, |b| candidate.0 < b.0) {
            *best = Some(candidate);
        }
        return;
    }
    // Branch over the first tied class.
    let tied = first_tied_class(&classes);
    for &member in &tied {
        let mut split = BTreeMap::new();
        for (&atom, &class) in &classes {
            // Stable split: the chosen member drops just below its class.
            split.insert(atom, if atom == member { class * 2 } else { class * 2 + 1 });
        }
        search(g, comp, split, best, leaves);
    }
}

/// Atoms of the lowest class id that still holds more than one atom,
/// ascending by atom index.
fn first_tied_class(classes: &BTreeMap<usize, usize>) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&atom, &class) in classes {
        by_class.entry(class).or_default().push(atom);
    }
    by_class
        .into_values()
        .find(|members| members.len() > 1)
        .expect("caller checked a tie exists")
}

fn distinct(classes: &BTreeMap<usize, usize>) -> usize {
    let mut values: Vec<usize> = classes.values().copied().collect();
    values.sort_unstable();
    values.dedup();
    values.len()
}

/// Starting invariants. Degree first so terminal atoms come first, then the
/// chemical identity labels; this is what puts the methyl carbon ahead of the
/// oxygen in methanol and makes the canonical string read "CO".
fn initial_classes(g: &MolGraph, comp: &[usize]) -> BTreeMap<usize, usize> {
    let invariant = |a: usize| {
        let atom = g.atom(a);
        (
            g.neighbors(a).len(),
            atom.atomic_number,
            (atom.formal_charge as i16) + 16,
            atom.chirality.code(),
            atom.explicit_hs,
            atom.is_aromatic,
        )
    };
    let mut keys: Vec<_> = comp.iter().map(|&a| invariant(a)).collect();
    keys.sort_unstable();
    keys.dedup();
    comp.iter()
        .map(|&a| (a, keys.binary_search(&invariant(a)).unwrap()))
        .collect()
}

/// Refine until the partition stops splitting. Standard neighborhood
/// signature: own class plus the sorted multiset of (bond code, neighbor
/// class).
fn refine(
    g: &MolGraph,
    comp: &[usize],
    mut classes: BTreeMap<usize, usize>,
) -> BTreeMap<usize, usize> {
    loop {
        let signature = |a: usize| {
            let mut nb: Vec<(u8, usize)> = g
                .neighbors(a)
                .into_iter()
                .map(|b| (g.bond(a, b).unwrap().bond_type.code(), classes[&b]))
                .collect();
            nb.sort_unstable();
            (classes[&a], nb)
        };
        let mut keys: Vec<_> = comp.iter().map(|&a| signature(a)).collect();
        keys.sort();
        keys.dedup();
        let before = distinct(&classes);
        let next: BTreeMap<usize, usize> = comp
            .iter()
            .map(|&a| (a, keys.binary_search(&signature(a)).unwrap()))
            .collect();
        classes = next;
        if keys.len() == before {
            return classes;
        }
    }
}
