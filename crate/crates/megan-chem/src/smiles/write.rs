//! SMILES writer: [`MolGraph`] → text.
//!
//! Emission is a DFS guided by a per-atom priority (canonical ranks or plain
//! input order). Ring closures are numbered in emission order with digit
//! reuse; double-bond stereo labels are re-synthesized into `/` and `\`
//! decorations relative to the lowest-ranked heavy neighbor on each side,
//! mirroring exactly how the parser assigned the labels.

use super::canon;
use crate::element;
use crate::graph::{BondStereo, BondType, Chirality, MolGraph};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    /// Canonicalize atom and component order. When false, atoms are emitted
    /// in index order (useful for debugging), but stereo decorations still
    /// use canonical reference neighbors so the labels keep their meaning.
    pub canonical: bool,
    /// Emit atom map numbers.
    pub keep_maps: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions { canonical: true, keep_maps: false }
    }
}

pub fn write_smiles(g: &MolGraph, opts: &WriteOptions) -> String {
    if g.atom_count() == 0 {
        return String::new();
    }
    if opts.canonical {
        return canon::canonical_smiles(g, opts.keep_maps);
    }
    let stereo_rank = canon::canonical_ranks(g);
    let identity: Vec<usize> = (0..g.atom_count()).collect();
    let parts: Vec<String> = g
        .components()
        .iter()
        .map(|comp| emit_component(g, comp, &identity, &stereo_rank, opts.keep_maps).0)
        .collect();
    parts.join(".")
}

/// Emit one connected component. `order_rank` drives the DFS (start atom and
/// neighbor visit order), `stereo_rank` picks stereo reference neighbors.
/// Returns the string and the atoms in emission (preorder) order.
pub(super) fn emit_component(
    g: &MolGraph,
    comp: &[usize],
    order_rank: &[usize],
    stereo_rank: &[usize],
    keep_maps: bool,
) -> (String, Vec<usize>) {
    let start = comp
        .iter()
        .copied()
        .min_by_key(|&a| order_rank[a])
        .expect("component is never empty");

    // Pass 1: spanning tree and ring-closure bonds, in visit order.
    let mut walk = Walk {
        g,
        order_rank,
        visited: vec![false; g.atom_count()],
        used: BTreeMap::new(),
        preorder: Vec::new(),
        children: BTreeMap::new(),
        closures: Vec::new(),
    };
    walk.dfs(start, usize::MAX);
    let Walk { preorder, children, closures, .. } = walk;

    let dirs = assign_directions(g, comp, stereo_rank);

    // Pass 2: emission.
    let mut em = Emitter {
        g,
        keep_maps,
        children: &children,
        closures: &closures,
        dirs: &dirs,
        active: BTreeMap::new(),
        digits_in_use: Vec::new(),
        out: String::new(),
    };
    em.emit(start, usize::MAX);
    (em.out, preorder)
}

struct Walk<'a> {
    g: &'a MolGraph,
    order_rank: &'a [usize],
    visited: Vec<bool>,
    used: BTreeMap<(usize, usize), ()>,
    preorder: Vec<usize>,
    children: BTreeMap<usize, Vec<usize>>,
    /// (open atom, close atom): open end is emitted first.
    closures: Vec<(usize, usize)>,
}

impl Walk<'_> {
    fn dfs(&mut self, u: usize, parent: usize) {
        self.visited[u] = true;
        self.preorder.push(u);
        let mut nbrs = self.g.neighbors(u);
        nbrs.sort_by_key(|&v| self.order_rank[v]);
        for v in nbrs {
            if v == parent {
                continue;
            }
            let key = ordered(u, v);
            if self.used.contains_key(&key) {
                continue;
            }
            self.used.insert(key, ());
            if self.visited[v] {
                self.closures.push((v, u));
            } else {
                self.children.entry(u).or_default().push(v);
                self.dfs(v, u);
            }
        }
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

struct Emitter<'a> {
    g: &'a MolGraph,
    keep_maps: bool,
    children: &'a BTreeMap<usize, Vec<usize>>,
    closures: &'a [(usize, usize)],
    dirs: &'a BTreeMap<(usize, usize), bool>,
    /// Ring bond → digit, while open.
    active: BTreeMap<(usize, usize), u16>,
    digits_in_use: Vec<u16>,
    out: String,
}

impl Emitter<'_> {
    fn emit(&mut self, u: usize, parent: usize) {
        self.out.push_str(&atom_token(self.g, u, self.keep_maps));

        // Close digits first (sorted for determinism), then open new ones.
        let mut closing: Vec<(usize, u16)> = self
            .closures
            .iter()
            .filter(|&&(_, close)| close == u)
            .map(|&(open, _)| {
                let digit = self.active[&ordered(open, u)];
                (open, digit)
            })
            .collect();
        closing.sort_by_key(|&(_, d)| d);
        for (open, digit) in closing {
            self.active.remove(&ordered(open, u));
            self.digits_in_use.retain(|&d| d != digit);
            push_digit(&mut self.out, digit);
        }
        let opening: Vec<usize> = self
            .closures
            .iter()
            .filter(|&&(open, _)| open == u)
            .map(|&(_, close)| close)
            .collect();
        for close in opening {
            let digit = (1u16..)
                .find(|d| !self.digits_in_use.contains(d))
                .expect("digit pool is unbounded");
            self.digits_in_use.push(digit);
            self.active.insert(ordered(u, close), digit);
            // The closure bond symbol goes on the opening end only.
            let sym = self.bond_symbol(u, close);
            self.out.push_str(&sym);
            push_digit(&mut self.out, digit);
        }

        let kids = self.children.get(&u).cloned().unwrap_or_default();
        let n = kids.len();
        for (idx, v) in kids.into_iter().enumerate() {
            let last = idx + 1 == n;
            if !last {
                self.out.push('(');
            }
            let sym = self.bond_symbol(u, v);
            self.out.push_str(&sym);
            self.emit(v, u);
            if !last {
                self.out.push(')');
            }
        }
        let _ = parent;
    }

    /// Bond symbol for the traversal u→v, honoring directional assignments.
    fn bond_symbol(&self, u: usize, v: usize) -> String {
        let bond = self.g.bond(u, v).expect("emitting an existing bond");
        let both_aromatic = self.g.atom(u).is_aromatic && self.g.atom(v).is_aromatic;
        match bond.bond_type {
            BondType::Single => {
                let dir = self
                    .dirs
                    .get(&(u, v))
                    .copied()
                    .or_else(|| self.dirs.get(&(v, u)).map(|&up| !up));
                match dir {
                    Some(true) => "/".into(),
                    Some(false) => "\\".into(),
                    None if both_aromatic => "-".into(),
                    None => "".into(),
                }
            }
            BondType::Double => "=".into(),
            BondType::Triple => "#".into(),
            BondType::Aromatic => {
                if both_aromatic {
                    "".into()
                } else {
                    ":".into()
                }
            }
        }
    }
}

fn push_digit(out: &mut String, digit: u16) {
    if digit < 10 {
        out.push_str(&digit.to_string());
    } else {
        out.push('%');
        out.push_str(&format!("{digit:02}"));
    }
}

/// Decide `/` and `\` assignments expressing every stereo-labeled double bond
/// in the component. Keyed by ordered traversal (a, b): true means `/` when
/// the bond is written from a to b.
fn assign_directions(
    g: &MolGraph,
    comp: &[usize],
    stereo_rank: &[usize],
) -> BTreeMap<(usize, usize), bool> {
    let mut dirs: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    let in_comp = |a: usize| comp.binary_search(&a).is_ok();
    for (i, j, bond) in g.bonds() {
        if bond.bond_type != BondType::Double || bond.stereo == BondStereo::None {
            continue;
        }
        if !in_comp(i) {
            continue;
        }
        let reference = |atom: usize, other: usize| -> Option<usize> {
            g.neighbors(atom)
                .into_iter()
                .filter(|&x| x != other)
                .min_by_key(|&x| stereo_rank[x])
        };
        let (Some(ri), Some(rj)) = (reference(i, j), reference(j, i)) else {
            // No heavy neighbor to hang the slash on; the label cannot be
            // expressed in text and is dropped from the output.
            continue;
        };
        let lookup = |dirs: &BTreeMap<(usize, usize), bool>, a: usize, b: usize| {
            dirs.get(&(a, b)).copied().or_else(|| dirs.get(&(b, a)).map(|&up| !up))
        };
        // Slash into atom i, traversed ri→i.
        let s_in = match lookup(&dirs, ri, i) {
            Some(up) => up,
            None => {
                dirs.insert((ri, i), true);
                true
            }
        };
        // Matching normalized slashes mean the references sit on opposite
        // sides (E); Z flips the outgoing slash.
        let required = if bond.stereo == BondStereo::E { s_in } else { !s_in };
        match lookup(&dirs, j, rj) {
            Some(up) if up == required => {}
            Some(_) => {
                // Conflicting constraint from an adjacent stereo bond
                // (conjugated systems); this bond's label goes unexpressed.
            }
            None => {
                dirs.insert((j, rj), required);
            }
        }
    }
    dirs
}

fn atom_token(g: &MolGraph, idx: usize, keep_maps: bool) -> String {
    let a = g.atom(idx);
    let z = a.atomic_number;
    let bare_symbol_ok = if a.is_aromatic {
        matches!(z, 5 | 6 | 7 | 8 | 15 | 16)
    } else {
        element::in_organic_subset(z)
    };
    // An explicit H count may be dropped exactly when implicit completion
    // would reproduce the same total, so "[CH3][OH]" flattens to "CO" while
    // the pyrrole "[nH]" keeps its hydrogen.
    let h_split_redundant = g.hydrogens_if_implicit(idx) == g.total_hs(idx);
    let needs_bracket = !bare_symbol_ok
        || !h_split_redundant
        || a.formal_charge != 0
        || a.chirality != Chirality::None
        || (keep_maps && a.map_number != 0);
    let mut sym = element::symbol(z).to_string();
    if a.is_aromatic {
        sym = sym.to_ascii_lowercase();
    }
    if !needs_bracket {
        return sym;
    }
    let mut out = String::from("[");
    out.push_str(&sym);
    match a.chirality {
        Chirality::None => {}
        Chirality::Ccw => out.push('@'),
        Chirality::Cw => out.push_str("@@"),
    }
    match a.explicit_hs {
        0 => {}
        1 => out.push('H'),
        n => out.push_str(&format!("H{n}")),
    }
    match a.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("{c}")),
    }
    if keep_maps && a.map_number != 0 {
        out.push_str(&format!(":{}", a.map_number));
    }
    out.push(']');
    out
}
