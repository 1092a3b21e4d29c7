//! One-hot featurization of molecular graphs into dense node and bond
//! tensors.
//!
//! Every categorical property (atomic number, formal charge, chiral tag,
//! explicit-hydrogen count, bond type, bond stereo) is encoded as a one-hot
//! block over the ordered list of values observed while fitting the
//! [`FeatureConfig`] on a development set. Binary properties (is-supernode,
//! is-aromatic, is-edited) use fixed two-wide blocks in `[false, true]`
//! order. Values never seen during fitting encode as an all-zero block, so
//! featurization itself cannot fail.
//!
//! Node rows cover the supernode as well: its row is all zeros except the
//! is-supernode block. The bond tensor places a special `Self` type on the
//! diagonal and a special `Supernode` type on every atom–supernode entry;
//! for those two synthetic bond kinds every other block (stereo, edited)
//! stays zero. Entries for non-adjacent atom pairs are entirely zero.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::action::{bond_type_token, parse_bond_type_token, parse_stereo_token, stereo_token};
use crate::graph::{BondStereo, BondType, Chirality, MolGraph};

/// Ordered value lists and switches that fix the one-hot layout.
///
/// The lists are discovered from data by [`fit_config`] and must stay
/// byte-stable once a model has been trained against them, which is why the
/// config carries a versioned text serialization ([`FeatureConfig::to_text`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureConfig {
    /// Sorted atomic numbers observed on the fitting set.
    pub atomic_numbers: Vec<u8>,
    /// Sorted formal charges observed on the fitting set.
    pub formal_charges: Vec<i8>,
    /// Chiral tags observed, in `Chirality` declaration order. Unused when
    /// `use_stereo` is false.
    pub chiral_tags: Vec<Chirality>,
    /// Sorted explicit-hydrogen counts observed on the fitting set.
    pub explicit_hs: Vec<u8>,
    /// Chemical bond types observed, in `BondType` declaration order. The
    /// synthetic `Supernode` and `Self` kinds always precede these in the
    /// bond-type block and are not listed here.
    pub bond_types: Vec<BondType>,
    /// Bond stereo labels observed, in `BondStereo` declaration order.
    /// Unused when `use_stereo` is false.
    pub bond_stereos: Vec<BondStereo>,
    /// When false the chiral-tag block is dropped from atom rows and the
    /// stereo block from bond rows (datasets without stereochemistry).
    pub use_stereo: bool,
    /// Number of reaction-type classes for the optional class-conditional
    /// prior; 0 disables it. The class is consumed by the model embedding,
    /// not by the one-hot rows, so this does not affect `atom_width`.
    pub reaction_type_classes: usize,
    /// When true, atom rows gain a two-wide binary block marking atoms that
    /// carry through to the product (used by the forward-prediction variant
    /// where contributing substrates are distinguished from spectators).
    pub mark_product_contribution: bool,
}

impl FeatureConfig {
    /// Width of one node feature row.
    pub fn atom_width(&self) -> usize {
        let chiral = if self.use_stereo { self.chiral_tags.len() } else { 0 };
        let marks = if self.mark_product_contribution { 2 } else { 0 };
        2 + self.atomic_numbers.len()
            + self.formal_charges.len()
            + chiral
            + self.explicit_hs.len()
            + 2
            + 2
            + marks
    }

    /// Width of one bond feature row. The bond-type block always reserves
    /// two leading slots for the synthetic `Supernode` and `Self` kinds.
    pub fn bond_width(&self) -> usize {
        let stereo = if self.use_stereo { self.bond_stereos.len() } else { 0 };
        2 + self.bond_types.len() + stereo + 2
    }

    /// Versioned text serialization, stable across runs.
    pub fn to_text(&self) -> String {
        let mut out = String::from("megan-features v1\n");
        let join =
            |xs: &[String]| if xs.is_empty() { String::new() } else { format!(" {}", xs.join(" ")) };
        let _ = writeln!(
            out,
            "atomic_numbers{}",
            join(&self.atomic_numbers.iter().map(|v| v.to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(
            out,
            "formal_charges{}",
            join(&self.formal_charges.iter().map(|v| v.to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(
            out,
            "chiral_tags{}",
            join(
                &self
                    .chiral_tags
                    .iter()
                    .map(|c| crate::action::chirality_token(*c).to_string())
                    .collect::<Vec<_>>()
            )
        );
        let _ = writeln!(
            out,
            "explicit_hs{}",
            join(&self.explicit_hs.iter().map(|v| v.to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(
            out,
            "bond_types{}",
            join(&self.bond_types.iter().map(|b| bond_type_token(*b).to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(
            out,
            "bond_stereos{}",
            join(&self.bond_stereos.iter().map(|s| stereo_token(*s).to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(out, "use_stereo {}", self.use_stereo);
        let _ = writeln!(out, "reaction_type_classes {}", self.reaction_type_classes);
        let _ = writeln!(out, "mark_product_contribution {}", self.mark_product_contribution);
        out
    }

    /// Parse the text produced by [`FeatureConfig::to_text`].
    pub fn from_text(text: &str) -> Result<FeatureConfig, FeatureConfigError> {
        let mut lines = text.lines().enumerate();
        let (_, header) =
            lines.next().ok_or_else(|| FeatureConfigError::Version("empty input".into()))?;
        if header.trim() != "megan-features v1" {
            return Err(FeatureConfigError::Version(header.trim().to_string()));
        }
        let mut cfg = FeatureConfig {
            atomic_numbers: Vec::new(),
            formal_charges: Vec::new(),
            chiral_tags: Vec::new(),
            explicit_hs: Vec::new(),
            bond_types: Vec::new(),
            bond_stereos: Vec::new(),
            use_stereo: true,
            reaction_type_classes: 0,
            mark_product_contribution: false,
        };
        let mut seen = BTreeSet::new();
        for (idx, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let bad = |message: String| FeatureConfigError::Malformed { line: lineno, message };
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line has a first token");
            if !seen.insert(key.to_string()) {
                return Err(bad(format!("duplicate key {key:?}")));
            }
            let values: Vec<&str> = parts.collect();
            let single = || -> Result<&str, FeatureConfigError> {
                if values.len() == 1 {
                    Ok(values[0])
                } else {
                    Err(bad(format!("key {key:?} expects exactly one value")))
                }
            };
            match key {
                "atomic_numbers" => {
                    cfg.atomic_numbers = parse_list(&values, lineno, "atomic number")?
                }
                "formal_charges" => {
                    cfg.formal_charges = parse_list(&values, lineno, "formal charge")?
                }
                "explicit_hs" => cfg.explicit_hs = parse_list(&values, lineno, "explicit-H count")?,
                "chiral_tags" => {
                    cfg.chiral_tags = values
                        .iter()
                        .map(|v| crate::action::parse_chirality_token(v))
                        .collect::<Result<_, _>>()
                        .map_err(bad)?
                }
                "bond_types" => {
                    cfg.bond_types = values
                        .iter()
                        .map(|v| parse_bond_type_token(v))
                        .collect::<Result<_, _>>()
                        .map_err(bad)?
                }
                "bond_stereos" => {
                    cfg.bond_stereos = values
                        .iter()
                        .map(|v| parse_stereo_token(v))
                        .collect::<Result<_, _>>()
                        .map_err(bad)?
                }
                "use_stereo" => {
                    cfg.use_stereo =
                        single()?.parse().map_err(|_| bad("expected true/false".into()))?
                }
                "reaction_type_classes" => {
                    cfg.reaction_type_classes =
                        single()?.parse().map_err(|_| bad("expected a count".into()))?
                }
                "mark_product_contribution" => {
                    cfg.mark_product_contribution =
                        single()?.parse().map_err(|_| bad("expected true/false".into()))?
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let required = [
            "atomic_numbers",
            "formal_charges",
            "chiral_tags",
            "explicit_hs",
            "bond_types",
            "bond_stereos",
            "use_stereo",
            "reaction_type_classes",
            "mark_product_contribution",
        ];
        for key in required {
            if !seen.contains(key) {
                return Err(FeatureConfigError::Malformed {
                    line: 0,
                    message: format!("missing key {key:?}"),
                });
            }
        }
        Ok(cfg)
    }
}

fn parse_list<T: std::str::FromStr>(
    values: &[&str],
    line: usize,
    what: &str,
) -> Result<Vec<T>, FeatureConfigError> {
    values
        .iter()
        .map(|v| {
            v.parse().map_err(|_| FeatureConfigError::Malformed {
                line,
                message: format!("bad {what} {v:?}"),
            })
        })
        .collect()
}

/// Failures while parsing a serialized [`FeatureConfig`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeatureConfigError {
    #[error("unsupported feature config version: {0:?}")]
    Version(String),
    #[error("malformed feature config at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Switches for [`fit_config`] that cannot be discovered from the graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    /// Keep chiral-tag and bond-stereo blocks.
    pub use_stereo: bool,
    /// Number of reaction classes for the optional prior; 0 disables.
    pub reaction_type_classes: usize,
    /// Add the contributes-to-product atom block.
    pub mark_product_contribution: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { use_stereo: true, reaction_type_classes: 0, mark_product_contribution: false }
    }
}

/// Discover the ordered value lists from a set of graphs (typically every
/// source and target graph of the development split).
///
/// Supernodes contribute nothing: only real atoms and chemical bonds are
/// scanned, since the synthetic supernode/self bond kinds and the binary
/// flags have fixed slots regardless of data.
pub fn fit_config<'a, I>(graphs: I, opts: FitOptions) -> FeatureConfig
where
    I: IntoIterator<Item = &'a MolGraph>,
{
    let mut atomic_numbers = BTreeSet::new();
    let mut formal_charges = BTreeSet::new();
    let mut chiral_tags = BTreeSet::new();
    let mut explicit_hs = BTreeSet::new();
    let mut bond_types = BTreeSet::new();
    let mut bond_stereos = BTreeSet::new();
    for g in graphs {
        for atom in g.atoms() {
            atomic_numbers.insert(atom.atomic_number);
            formal_charges.insert(atom.formal_charge);
            chiral_tags.insert(atom.chirality);
            explicit_hs.insert(atom.explicit_hs);
        }
        for (_, _, bond) in g.bonds() {
            bond_types.insert(bond.bond_type);
            bond_stereos.insert(bond.stereo);
        }
    }
    FeatureConfig {
        atomic_numbers: atomic_numbers.into_iter().collect(),
        formal_charges: formal_charges.into_iter().collect(),
        chiral_tags: chiral_tags.into_iter().collect(),
        explicit_hs: explicit_hs.into_iter().collect(),
        bond_types: bond_types.into_iter().collect(),
        bond_stereos: bond_stereos.into_iter().collect(),
        use_stereo: opts.use_stereo,
        reaction_type_classes: opts.reaction_type_classes,
        mark_product_contribution: opts.mark_product_contribution,
    }
}

/// Dense one-hot tensors for one graph state.
///
/// `h` is a row-major `n × atom_width` matrix and `a` a row-major
/// `n × n × bond_width` tensor, where `n` counts the supernode. All entries
/// are 0.0 or 1.0; they are stored as `f64` so the model can consume them
/// without a conversion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTensors {
    /// Node count including the supernode.
    pub n: usize,
    pub atom_width: usize,
    pub bond_width: usize,
    /// Node features, `n * atom_width` values.
    pub h: Vec<f64>,
    /// Bond features, `n * n * bond_width` values.
    pub a: Vec<f64>,
    /// Sorted neighbor lists per node, including the node itself and the
    /// supernode links in both directions.
    pub adjacency: Vec<Vec<usize>>,
}

impl GraphTensors {
    pub fn h_row(&self, i: usize) -> &[f64] {
        &self.h[i * self.atom_width..(i + 1) * self.atom_width]
    }

    pub fn a_entry(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.n + j) * self.bond_width;
        &self.a[base..base + self.bond_width]
    }
}

/// Featurize a graph that carries a supernode. Unseen categorical values
/// encode as an all-zero block, so this never fails.
///
/// Panics if the config asks for the contributes-to-product block; use
/// [`featurize_marked`] to supply the per-atom marks in that case.
pub fn featurize(g: &MolGraph, cfg: &FeatureConfig) -> GraphTensors {
    assert!(
        !cfg.mark_product_contribution,
        "config marks product contribution; call featurize_marked with per-atom marks"
    );
    featurize_impl(g, cfg, None)
}

/// Featurize with explicit per-atom contributes-to-product marks (one per
/// real atom, in atom order). Requires a config with the mark block enabled.
pub fn featurize_marked(g: &MolGraph, cfg: &FeatureConfig, marks: &[bool]) -> GraphTensors {
    assert!(
        cfg.mark_product_contribution,
        "config has no product-contribution block; call featurize instead"
    );
    assert_eq!(marks.len(), g.atom_count(), "one mark per real atom");
    featurize_impl(g, cfg, Some(marks))
}

fn featurize_impl(g: &MolGraph, cfg: &FeatureConfig, marks: Option<&[bool]>) -> GraphTensors {
    assert!(g.has_supernode(), "featurization requires the supernode to be attached");
    let n = g.node_count();
    let super_idx = g.supernode_index().expect("supernode present");
    let atom_width = cfg.atom_width();
    let bond_width = cfg.bond_width();
    let mut h = vec![0.0; n * atom_width];
    let mut a = vec![0.0; n * n * bond_width];

    // Node rows. Layout: is-supernode, atomic number, formal charge,
    // [chiral tag], explicit Hs, is-aromatic, is-edited, [contributes].
    for i in 0..n {
        let row = &mut h[i * atom_width..(i + 1) * atom_width];
        let mut pos = 0;
        let is_super = i == super_idx;
        row[pos + usize::from(is_super)] = 1.0;
        pos += 2;
        if is_super {
            continue; // every other block stays zero for the supernode
        }
        let atom = g.atom(i);
        hot(row, &mut pos, &cfg.atomic_numbers, &atom.atomic_number);
        hot(row, &mut pos, &cfg.formal_charges, &atom.formal_charge);
        if cfg.use_stereo {
            hot(row, &mut pos, &cfg.chiral_tags, &atom.chirality);
        }
        hot(row, &mut pos, &cfg.explicit_hs, &atom.explicit_hs);
        row[pos + usize::from(atom.is_aromatic)] = 1.0;
        pos += 2;
        row[pos + usize::from(atom.is_edited)] = 1.0;
        pos += 2;
        if let Some(marks) = marks {
            row[pos + usize::from(marks[i])] = 1.0;
        }
    }

    // Bond entries. Bond-type block layout: supernode, self, then the
    // observed chemical types. The synthetic kinds carry no stereo or
    // edited information, so those blocks stay zero for them.
    let set_entry = |a: &mut Vec<f64>, i: usize, j: usize, write: &dyn Fn(&mut [f64])| {
        let base = (i * n + j) * bond_width;
        write(&mut a[base..base + bond_width]);
    };
    for i in 0..n {
        // Self-loop on the diagonal, supernode links on row/column ends.
        set_entry(&mut a, i, i, &|row| row[1] = 1.0);
        if i != super_idx {
            set_entry(&mut a, i, super_idx, &|row| row[0] = 1.0);
            set_entry(&mut a, super_idx, i, &|row| row[0] = 1.0);
        }
    }
    for (i, j, bond) in g.bonds() {
        let write = |row: &mut [f64]| {
            let mut pos = 2;
            hot(row, &mut pos, &cfg.bond_types, &bond.bond_type);
            if cfg.use_stereo {
                hot(row, &mut pos, &cfg.bond_stereos, &bond.stereo);
            }
            row[pos + usize::from(bond.is_edited)] = 1.0;
        };
        set_entry(&mut a, i, j, &write);
        set_entry(&mut a, j, i, &write);
    }

    // Neighbor lists: self-loop, chemical neighbors, supernode links.
    let mut adjacency = Vec::with_capacity(n);
    for i in 0..n {
        let mut nbrs: BTreeSet<usize> = BTreeSet::new();
        nbrs.insert(i);
        if i == super_idx {
            nbrs.extend(0..n);
        } else {
            nbrs.insert(super_idx);
            nbrs.extend(g.neighbors(i));
        }
        adjacency.push(nbrs.into_iter().collect());
    }

    GraphTensors { n, atom_width, bond_width, h, a, adjacency }
}

/// Write a one-hot block for `value` over the ordered list `values`,
/// leaving the block zero when the value is absent, and advance the cursor.
fn hot<T: Ord>(row: &mut [f64], pos: &mut usize, values: &[T], value: &T) {
    if let Ok(k) = values.binary_search(value) {
        row[*pos + k] = 1.0;
    }
    *pos += values.len();
}
