//! SMILES parser: text → [`MolGraph`].
//!
//! Single pass over the bytes building atoms and bonds, then three fix-up
//! passes: double-bond stereo labels are derived from directional bonds,
//! explicit hydrogen nodes are folded into their heavy neighbor, and valences
//! are validated.

use super::{canon, SmilesError};
use crate::element;
use crate::graph::{AtomNode, BondEdge, BondStereo, BondType, Chirality, MolGraph};
use std::collections::BTreeMap;

/// Non-fatal oddity met while parsing (isotopes, dropped ring-bond stereo).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub index: usize,
    pub message: String,
}

pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    parse_smiles_full(text).map(|(g, _)| g)
}

pub fn parse_smiles_full(text: &str) -> Result<(MolGraph, Vec<ParseWarning>), SmilesError> {
    let mut p = Parser::new(text.as_bytes());
    p.run()?;
    p.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondSym {
    Single,
    Double,
    Triple,
    Aromatic,
    Up,
    Down,
}

impl BondSym {
    fn bond_type(self) -> BondType {
        match self {
            BondSym::Single | BondSym::Up | BondSym::Down => BondType::Single,
            BondSym::Double => BondType::Double,
            BondSym::Triple => BondType::Triple,
            BondSym::Aromatic => BondType::Aromatic,
        }
    }

    fn is_directional(self) -> bool {
        matches!(self, BondSym::Up | BondSym::Down)
    }
}

/// A `/` or `\` single bond, recorded in writing order.
#[derive(Debug, Clone, Copy)]
struct DirBond {
    from: usize,
    to: usize,
    /// true for `/` as written from `from` to `to`.
    up: bool,
}

struct RingEntry {
    atom: usize,
    sym: Option<BondSym>,
    pos: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    graph: MolGraph,
    prev: Option<usize>,
    branch_stack: Vec<Option<usize>>,
    pending: Option<(BondSym, usize)>,
    rings: BTreeMap<u16, RingEntry>,
    directional: Vec<DirBond>,
    warnings: Vec<ParseWarning>,
}

impl<'a> Parser<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Parser {
            bytes,
            pos: 0,
            graph: MolGraph::new(),
            prev: None,
            branch_stack: Vec::new(),
            pending: None,
            rings: BTreeMap::new(),
            directional: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn warn(&mut self, index: usize, message: impl Into<String>) {
        self.warnings.push(ParseWarning { index, message: message.into() });
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'[' => self.bracket_atom()?,
                b'A'..=b'Z' | b'b' | b'c' | b'n' | b'o' | b'p' | b's' => self.bare_atom()?,
                b'-' => self.set_pending(BondSym::Single)?,
                b'=' => self.set_pending(BondSym::Double)?,
                b'#' => self.set_pending(BondSym::Triple)?,
                b':' => self.set_pending(BondSym::Aromatic)?,
                b'/' => self.set_pending(BondSym::Up)?,
                b'\\' => self.set_pending(BondSym::Down)?,
                b'(' => {
                    if self.prev.is_none() {
                        return Err(SmilesError::syntax(self.pos, "branch before any atom"));
                    }
                    if self.pending.is_some() {
                        return Err(SmilesError::syntax(self.pos, "bond symbol before branch open"));
                    }
                    self.branch_stack.push(self.prev);
                    self.pos += 1;
                }
                b')' => {
                    if self.pending.is_some() {
                        return Err(SmilesError::syntax(self.pos, "dangling bond before branch close"));
                    }
                    match self.branch_stack.pop() {
                        Some(saved) => self.prev = saved,
                        None => return Err(SmilesError::syntax(self.pos, "unmatched ')'")),
                    }
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending.is_some() {
                        return Err(SmilesError::syntax(self.pos, "bond symbol before '.'"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    let d = (c - b'0') as u16;
                    self.pos += 1;
                    self.ring_closure(d)?;
                }
                b'%' => {
                    let start = self.pos;
                    self.pos += 1;
                    let mut digits = 0u16;
                    let mut count = 0;
                    while let Some(d @ b'0'..=b'9') = self.peek() {
                        digits = digits * 10 + (d - b'0') as u16;
                        self.pos += 1;
                        count += 1;
                        if count == 2 {
                            break;
                        }
                    }
                    if count != 2 {
                        return Err(SmilesError::syntax(start, "'%' needs two digits"));
                    }
                    self.ring_closure(digits)?;
                }
                b'*' => {
                    return Err(SmilesError::unsupported(self.pos, "wildcard atom"));
                }
                _ => {
                    return Err(SmilesError::syntax(
                        self.pos,
                        format!("unexpected character '{}'", c as char),
                    ));
                }
            }
        }
        Ok(())
    }

    fn set_pending(&mut self, sym: BondSym) -> Result<(), SmilesError> {
        if self.pending.is_some() {
            return Err(SmilesError::syntax(self.pos, "two bond symbols in a row"));
        }
        if self.prev.is_none() {
            return Err(SmilesError::syntax(self.pos, "bond symbol before any atom"));
        }
        self.pending = Some((sym, self.pos));
        self.pos += 1;
        Ok(())
    }

    /// Register a freshly parsed atom: bond it to the previous atom and make
    /// it the new chain head.
    fn attach(&mut self, atom: AtomNode) -> Result<(), SmilesError> {
        let idx = self.graph.add_atom(atom);
        if let Some(prev) = self.prev {
            let (sym, sym_pos) = match self.pending.take() {
                Some((s, p)) => (Some(s), p),
                None => (None, self.pos),
            };
            self.make_bond(prev, idx, sym, sym_pos)?;
        } else if let Some((_, p)) = self.pending.take() {
            return Err(SmilesError::syntax(p, "bond with no preceding atom"));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn make_bond(
        &mut self,
        a: usize,
        b: usize,
        sym: Option<BondSym>,
        pos: usize,
    ) -> Result<(), SmilesError> {
        if self.graph.bond(a, b).is_some() {
            return Err(SmilesError::syntax(pos, "duplicate bond between two atoms"));
        }
        let bond_type = match sym {
            Some(s) => s.bond_type(),
            None => {
                if self.graph.atom(a).is_aromatic && self.graph.atom(b).is_aromatic {
                    BondType::Aromatic
                } else {
                    BondType::Single
                }
            }
        };
        self.graph
            .set_bond(a, b, BondEdge::new(bond_type))
            .map_err(|e| SmilesError::syntax(pos, e.to_string()))?;
        if let Some(s) = sym {
            if s.is_directional() {
                self.directional.push(DirBond { from: a, to: b, up: s == BondSym::Up });
            }
        }
        Ok(())
    }

    fn ring_closure(&mut self, digit: u16) -> Result<(), SmilesError> {
        let cur = match self.prev {
            Some(i) => i,
            None => return Err(SmilesError::syntax(self.pos, "ring closure before any atom")),
        };
        let sym = self.pending.take().map(|(s, _)| s);
        match self.rings.remove(&digit) {
            None => {
                self.rings.insert(digit, RingEntry { atom: cur, sym, pos: self.pos });
            }
            Some(open) => {
                if open.atom == cur {
                    return Err(SmilesError::syntax(self.pos, "ring closure to the same atom"));
                }
                let resolved = match (open.sym, sym) {
                    (None, None) => None,
                    (Some(s), None) | (None, Some(s)) => Some(s),
                    (Some(a), Some(b)) => {
                        if a.bond_type() != b.bond_type() {
                            return Err(SmilesError::syntax(
                                self.pos,
                                format!("ring closure {digit} bond symbols disagree"),
                            ));
                        }
                        Some(a)
                    }
                };
                let resolved = match resolved {
                    Some(s) if s.is_directional() => {
                        // Ring cis/trans is out of scope; keep the single bond.
                        self.warn(open.pos, "directional bond on ring closure ignored");
                        Some(BondSym::Single)
                    }
                    other => other,
                };
                self.make_bond(open.atom, cur, resolved, self.pos)?;
            }
        }
        Ok(())
    }

    fn bare_atom(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let c = self.bytes[self.pos];
        // Two-letter organic-subset symbols first.
        let (z, aromatic, len) = if self.bytes[self.pos..].starts_with(b"Cl") {
            (17, false, 2)
        } else if self.bytes[self.pos..].starts_with(b"Br") {
            (35, false, 2)
        } else {
            let z = match c {
                b'B' => 5,
                b'C' => 6,
                b'N' => 7,
                b'O' => 8,
                b'P' => 15,
                b'S' => 16,
                b'F' => 9,
                b'I' => 53,
                b'b' => 5,
                b'c' => 6,
                b'n' => 7,
                b'o' => 8,
                b'p' => 15,
                b's' => 16,
                _ => {
                    return Err(SmilesError::syntax(
                        start,
                        format!("'{}' is not an organic-subset atom", c as char),
                    ))
                }
            };
            (z, c.is_ascii_lowercase(), 1)
        };
        self.pos += len;
        let mut atom = AtomNode::new(z);
        atom.is_aromatic = aromatic;
        self.attach(atom)
    }

    fn bracket_atom(&mut self) -> Result<(), SmilesError> {
        let open = self.pos;
        self.pos += 1; // '['

        // Isotope: accepted and dropped.
        let mut isotope = 0u16;
        let mut saw_isotope = false;
        while let Some(d @ b'0'..=b'9') = self.peek() {
            isotope = isotope * 10 + (d - b'0') as u16;
            saw_isotope = true;
            self.pos += 1;
        }
        if saw_isotope {
            self.warn(open, format!("isotope {isotope} ignored"));
        }

        if self.peek() == Some(b'*') {
            return Err(SmilesError::unsupported(self.pos, "wildcard atom"));
        }

        // Element symbol, longest match first; lowercase means aromatic.
        let sym_start = self.pos;
        let first = self
            .peek()
            .ok_or_else(|| SmilesError::syntax(sym_start, "unterminated bracket atom"))?;
        if !first.is_ascii_alphabetic() {
            return Err(SmilesError::syntax(sym_start, "expected element symbol"));
        }
        let second = self.bytes.get(self.pos + 1).copied();
        let aromatic = first.is_ascii_lowercase();
        let mut symbol = String::new();
        if aromatic {
            // Aromatic bracket atoms: se / as / one-letter.
            let two: Option<String> = second
                .filter(|s| s.is_ascii_lowercase())
                .map(|s| format!("{}{}", first as char, s as char));
            let one_up = (first as char).to_ascii_uppercase().to_string();
            if let Some(t) = two {
                let cap = format!("{}{}", t.as_bytes()[0].to_ascii_uppercase() as char, t.as_bytes()[1] as char);
                if matches!(t.as_str(), "se" | "as" | "te") && element::atomic_number(&cap).is_some() {
                    symbol = cap;
                    self.pos += 2;
                }
            }
            if symbol.is_empty() {
                symbol = one_up;
                self.pos += 1;
            }
        } else {
            let two: Option<String> = second
                .filter(|s| s.is_ascii_lowercase())
                .map(|s| format!("{}{}", first as char, s as char));
            if let Some(t) = two.filter(|t| element::atomic_number(t).is_some()) {
                symbol = t;
                self.pos += 2;
            } else {
                symbol = (first as char).to_string();
                self.pos += 1;
            }
        }
        let z = element::atomic_number(&symbol)
            .ok_or_else(|| SmilesError::syntax(sym_start, format!("unknown element '{symbol}'")))?;
        if aromatic && !element::can_be_aromatic(z) {
            return Err(SmilesError::syntax(sym_start, format!("'{symbol}' cannot be aromatic")));
        }

        let mut atom = AtomNode::new(z);
        atom.is_aromatic = aromatic;

        // Chirality.
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                atom.chirality = Chirality::Cw;
                self.pos += 1;
            } else if matches!(self.peek(), Some(b'T') | Some(b'A') | Some(b'S') | Some(b'O'))
                && self.bytes.get(self.pos + 1).is_some_and(|c| c.is_ascii_alphanumeric())
            {
                return Err(SmilesError::unsupported(self.pos, "extended chirality class"));
            } else {
                atom.chirality = Chirality::Ccw;
            }
        }

        // Explicit hydrogen count.
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let mut n = 0u8;
            let mut saw = false;
            while let Some(d @ b'0'..=b'9') = self.peek() {
                n = n.saturating_mul(10).saturating_add(d - b'0');
                saw = true;
                self.pos += 1;
            }
            atom.explicit_hs = if saw { n } else { 1 };
        }

        // Formal charge.
        match self.peek() {
            Some(sign @ (b'+' | b'-')) => {
                self.pos += 1;
                let unit: i8 = if sign == b'+' { 1 } else { -1 };
                let mut magnitude = 1i8;
                if let Some(d @ b'0'..=b'9') = self.peek() {
                    magnitude = (d - b'0') as i8;
                    self.pos += 1;
                } else {
                    while self.peek() == Some(sign) {
                        magnitude += 1;
                        self.pos += 1;
                    }
                }
                atom.formal_charge = unit * magnitude;
            }
            _ => {}
        }

        // Atom map.
        if self.peek() == Some(b':') {
            self.pos += 1;
            let mut n = 0u32;
            let mut saw = false;
            while let Some(d @ b'0'..=b'9') = self.peek() {
                n = n * 10 + (d - b'0') as u32;
                saw = true;
                self.pos += 1;
            }
            if !saw {
                return Err(SmilesError::syntax(self.pos, "':' without map number"));
            }
            atom.map_number = n;
        }

        if self.peek() != Some(b']') {
            return Err(SmilesError::syntax(self.pos, "expected ']'"));
        }
        self.pos += 1;
        self.attach(atom)
    }

    fn finish(mut self) -> Result<(MolGraph, Vec<ParseWarning>), SmilesError> {
        if let Some((digit, entry)) = self.rings.iter().next() {
            return Err(SmilesError::syntax(entry.pos, format!("unclosed ring closure {digit}")));
        }
        if !self.branch_stack.is_empty() {
            return Err(SmilesError::syntax(self.pos, "unclosed branch"));
        }
        if let Some((_, p)) = self.pending {
            return Err(SmilesError::syntax(p, "dangling bond at end of input"));
        }

        let stereo_specs = self.derive_stereo_relations()?;
        let (mut graph, remap) = self.fold_hydrogens()?;
        apply_stereo(&mut graph, &remap, &stereo_specs, &mut self.warnings);
        graph.check_valences().map_err(SmilesError::Valence)?;
        Ok((graph, self.warnings))
    }

    /// For every double bond flanked by directional bonds, work out whether
    /// the two directional partner atoms sit on the same side.
    fn derive_stereo_relations(&self) -> Result<Vec<StereoSpec>, SmilesError> {
        let mut out = Vec::new();
        for (i, j, bond) in self.graph.bonds() {
            if bond.bond_type != BondType::Double {
                continue;
            }
            let side = |atom: usize| -> Result<Option<(usize, bool)>, SmilesError> {
                // Directional bonds incident to `atom`, slash normalized to
                // the traversal partner→atom.
                let mut found: Option<(usize, bool)> = None;
                for d in &self.directional {
                    let (partner, slash_in) = if d.to == atom {
                        (d.from, d.up)
                    } else if d.from == atom {
                        (d.to, !d.up)
                    } else {
                        continue;
                    };
                    if partner == i || partner == j {
                        continue;
                    }
                    if found.is_some() {
                        return Err(SmilesError::unsupported(
                            0,
                            "more than one directional bond on a double-bond end",
                        ));
                    }
                    found = Some((partner, slash_in));
                }
                Ok(found)
            };
            if let (Some((pi, si)), Some((pj, sj))) = (side(i)?, side(j)?) {
                // With both slashes normalized into their double-bond atom,
                // F/C=C/F (trans) gives opposite values: equal values mean the
                // partners share a side.
                let partners_same_side = si == sj;
                out.push(StereoSpec { i, j, partner_i: pi, partner_j: pj, partners_same_side });
            }
        }
        Ok(out)
    }

    /// Remove explicit hydrogen nodes, crediting their heavy neighbor.
    /// Returns the rebuilt graph and old→new index mapping (None for folded H).
    fn fold_hydrogens(&self) -> Result<(MolGraph, Vec<Option<usize>>), SmilesError> {
        let n = self.graph.atom_count();
        let h_nodes: Vec<usize> =
            (0..n).filter(|&i| self.graph.atom(i).atomic_number == 1).collect();
        if h_nodes.is_empty() {
            let identity = (0..n).map(Some).collect();
            return Ok((self.graph.clone(), identity));
        }

        let mut extra_h = vec![0u8; n];
        for &h in &h_nodes {
            let a = self.graph.atom(h);
            if a.formal_charge != 0 || a.chirality != Chirality::None || a.explicit_hs != 0 {
                return Err(SmilesError::unsupported(
                    0,
                    "charged, chiral or H-bearing explicit hydrogen",
                ));
            }
            let nbrs = self.graph.neighbors(h);
            let heavy: Vec<usize> =
                nbrs.iter().copied().filter(|&x| self.graph.atom(x).atomic_number != 1).collect();
            if nbrs.len() != 1 || heavy.len() != 1 {
                return Err(SmilesError::unsupported(
                    0,
                    "explicit hydrogen must have exactly one heavy neighbor",
                ));
            }
            let bond = self.graph.bond(h, heavy[0]).unwrap();
            if bond.bond_type != BondType::Single {
                return Err(SmilesError::unsupported(0, "non-single bond to explicit hydrogen"));
            }
            extra_h[heavy[0]] += 1;
        }

        let mut remap: Vec<Option<usize>> = vec![None; n];
        let mut graph = MolGraph::new();
        for i in 0..n {
            if self.graph.atom(i).atomic_number == 1 {
                continue;
            }
            let mut atom = *self.graph.atom(i);
            if extra_h[i] > 0 {
                // Folding keeps standard semantics: an unbracketed atom wrote
                // its H nodes as bonds, so the remaining implicit top-up
                // (computed while those bonds still count) joins the explicit
                // tally. "C([H])([H])O" therefore stays a CH3 group.
                atom.explicit_hs += extra_h[i] + self.graph.implicit_hs(i);
            }
            remap[i] = Some(graph.add_atom(atom));
        }
        for (i, j, bond) in self.graph.bonds() {
            if let (Some(a), Some(b)) = (remap[i], remap[j]) {
                graph.set_bond(a, b, *bond).map_err(|e| SmilesError::Valence(e))?;
            }
        }
        Ok((graph, remap))
    }
}

struct StereoSpec {
    i: usize,
    j: usize,
    partner_i: usize,
    partner_j: usize,
    partners_same_side: bool,
}

/// Translate partner-relative side information into Z/E labels relative to
/// the lowest-canonical-rank heavy neighbor on each side, and store them.
fn apply_stereo(
    graph: &mut MolGraph,
    remap: &[Option<usize>],
    specs: &[StereoSpec],
    warnings: &mut Vec<ParseWarning>,
) {
    if specs.is_empty() {
        return;
    }
    let ranks = canon::canonical_ranks(graph);
    for spec in specs {
        let (Some(i), Some(j)) = (remap[spec.i], remap[spec.j]) else {
            warnings.push(ParseWarning {
                index: 0,
                message: "stereo double bond lost to hydrogen folding".into(),
            });
            continue;
        };
        let reference = |atom: usize, partner_old: usize| -> Option<(usize, bool)> {
            // Returns (reference neighbor, partner_is_reference).
            let other = if atom == i { j } else { i };
            let heavy: Vec<usize> =
                graph.neighbors(atom).into_iter().filter(|&x| x != other).collect();
            let reference = heavy.iter().copied().min_by_key(|&x| ranks[x])?;
            let partner_is_reference = remap[partner_old] == Some(reference);
            Some((reference, partner_is_reference))
        };
        let (Some((_, pi_is_ref)), Some((_, pj_is_ref))) =
            (reference(i, spec.partner_i), reference(j, spec.partner_j))
        else {
            warnings.push(ParseWarning {
                index: 0,
                message: "stereo bond without heavy reference neighbor dropped".into(),
            });
            continue;
        };
        // Two substituents on the same alkene carbon always sit on opposite
        // sides, so each non-reference partner flips the relation once.
        let mut refs_same_side = spec.partners_same_side;
        if !pi_is_ref {
            refs_same_side = !refs_same_side;
        }
        if !pj_is_ref {
            refs_same_side = !refs_same_side;
        }
        let bond = graph.bond_mut(i, j).expect("stereo spec names a real bond");
        bond.stereo = if refs_same_side { BondStereo::Z } else { BondStereo::E };
    }
}

