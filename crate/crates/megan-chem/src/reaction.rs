//! Atom-mapped reactions: ingestion from `reactants>reagents>product`
//! strings plus the mapping invariants that make edit-sequence generation
//! well-defined.
//!
//! Reagents are folded into the substrate side. For retrosynthesis every
//! product atom must carry a map number matched by a substrate atom, and
//! substrate molecules with no mapped atom at all are dropped (no edit path
//! can reach them); the number of dropped molecules is recorded.
//!
//! Ingestion also normalizes hydrogen bookkeeping: a written-out hydrogen
//! count that equals what implicit completion would produce anyway is reset
//! to zero, so `[CH3:1]` and `C` featurize identically and spurious
//! hydrogen-only atom edits disappear from ground-truth sequences.

use crate::graph::MolGraph;
use crate::smiles::{parse_smiles, SmilesError};
use std::collections::BTreeMap;

/// Which way the model edits: from product to substrates or the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Retro,
    Forward,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Direction> {
        match s {
            "retro" => Some(Direction::Retro),
            "forward" => Some(Direction::Forward),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Retro => "retro",
            Direction::Forward => "forward",
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ReactionError {
    #[error("{side} side: {source}")]
    Parse { side: &'static str, source: SmilesError },
    #[error("reaction SMILES must have exactly two '>' separators, got {0}")]
    Shape(usize),
    #[error("atom mapping: {0}")]
    Mapping(String),
}

/// One ingested reaction, substrates and product aligned by map numbers.
#[derive(Debug, Clone)]
pub struct Reaction {
    pub id: String,
    pub reaction_class: Option<u8>,
    pub direction: Direction,
    pub substrates: MolGraph,
    pub product: MolGraph,
    /// Substrate molecules dropped for having no mapped atom (retro only).
    pub dropped_substrate_components: usize,
}

impl Reaction {
    /// Parse a `reactants>reagents>product` string and validate its mapping
    /// for `direction`.
    pub fn from_reaction_smiles(
        id: &str,
        rxn: &str,
        reaction_class: Option<u8>,
        direction: Direction,
    ) -> Result<Reaction, ReactionError> {
        let fields: Vec<&str> = rxn.split('>').collect();
        if fields.len() != 3 {
            return Err(ReactionError::Shape(fields.len().saturating_sub(1)));
        }
        let substrate_text = if fields[1].is_empty() {
            fields[0].to_string()
        } else if fields[0].is_empty() {
            fields[1].to_string()
        } else {
            format!("{}.{}", fields[0], fields[1])
        };
        let mut substrates = parse_smiles(&substrate_text)
            .map_err(|source| ReactionError::Parse { side: "substrate", source })?;
        let mut product = parse_smiles(fields[2])
            .map_err(|source| ReactionError::Parse { side: "product", source })?;
        normalize_explicit_hydrogens(&mut substrates);
        normalize_explicit_hydrogens(&mut product);

        let sub_maps = unique_map_index(&substrates, "substrate")?;
        let prod_maps = unique_map_index(&product, "product")?;
        for (m, &pi) in &prod_maps {
            if let Some(&si) = sub_maps.get(m) {
                let (zp, zs) =
                    (product.atom(pi).atomic_number, substrates.atom(si).atomic_number);
                if zp != zs {
                    return Err(ReactionError::Mapping(format!(
                        "map {m} pairs different elements ({zs} vs {zp})"
                    )));
                }
            }
        }

        let mut dropped = 0usize;
        match direction {
            Direction::Retro => {
                for (idx, a) in product.atoms().iter().enumerate() {
                    if a.map_number == 0 {
                        return Err(ReactionError::Mapping(format!(
                            "product atom {idx} has no map number"
                        )));
                    }
                    if !sub_maps.contains_key(&a.map_number) {
                        return Err(ReactionError::Mapping(format!(
                            "product map {} has no substrate counterpart",
                            a.map_number
                        )));
                    }
                }
                let keep: Vec<usize> = substrates
                    .components()
                    .into_iter()
                    .filter(|comp| {
                        let mapped = comp.iter().any(|&i| substrates.atom(i).map_number != 0);
                        if !mapped {
                            dropped += 1;
                        }
                        mapped
                    })
                    .flatten()
                    .collect();
                let mut keep = keep;
                keep.sort_unstable();
                if keep.len() != substrates.atom_count() {
                    substrates = substrates.subgraph(&keep);
                }
                if substrates.atom_count() == 0 {
                    return Err(ReactionError::Mapping("no mapped substrate atoms".into()));
                }
            }
            Direction::Forward => {
                // The product may contain unmapped atoms (they become atom
                // additions); substrates keep unmapped molecules as inert
                // leftovers. Nothing further to validate.
            }
        }

        Ok(Reaction {
            id: id.to_string(),
            reaction_class,
            direction,
            substrates,
            product,
            dropped_substrate_components: dropped,
        })
    }

    /// The graph the edit sequence starts from.
    pub fn source(&self) -> &MolGraph {
        match self.direction {
            Direction::Retro => &self.product,
            Direction::Forward => &self.substrates,
        }
    }

    /// The graph the edit sequence must reach.
    pub fn target(&self) -> &MolGraph {
        match self.direction {
            Direction::Retro => &self.substrates,
            Direction::Forward => &self.product,
        }
    }
}

fn unique_map_index(
    g: &MolGraph,
    side: &'static str,
) -> Result<BTreeMap<u32, usize>, ReactionError> {
    let mut out = BTreeMap::new();
    for (idx, a) in g.atoms().iter().enumerate() {
        if a.map_number == 0 {
            continue;
        }
        if out.insert(a.map_number, idx).is_some() {
            return Err(ReactionError::Mapping(format!(
                "duplicate map number {} on the {side} side",
                a.map_number
            )));
        }
    }
    Ok(out)
}

/// Reset explicit hydrogen counts that implicit completion reproduces
/// anyway, so equivalent bracketed and bare spellings yield one graph.
fn normalize_explicit_hydrogens(g: &mut MolGraph) {
    for i in 0..g.atom_count() {
        let written = g.atom(i).explicit_hs;
        if written == 0 {
            continue;
        }
        g.atom_mut(i).explicit_hs = 0;
        if g.hydrogens_if_implicit(i) != written {
            g.atom_mut(i).explicit_hs = written;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::canonical_smiles;

    #[test]
    fn ester_hydrolysis_ingests_with_folded_reagents() {
        let r = Reaction::from_reaction_smiles(
            "r1",
            "[CH3:1][C:2](=[O:3])[O:4][CH3:5]>O>[CH3:1][C:2](=[O:3])[OH:6].[CH3:5][OH:7]",
            Some(1),
            Direction::Forward,
        )
        .unwrap();
        // The unmapped water reagent folds into the substrate side.
        assert_eq!(r.substrates.components().len(), 2);
        assert_eq!(r.product.components().len(), 2);
        assert_eq!(r.source().atom_count(), r.substrates.atom_count());
    }

    #[test]
    fn retro_drops_unmapped_substrate_molecules() {
        let r = Reaction::from_reaction_smiles(
            "r2",
            "[CH3:1][OH:2].CCN(CC)CC>>[CH3:1][OH:2]",
            None,
            Direction::Retro,
        )
        .unwrap();
        assert_eq!(r.dropped_substrate_components, 1);
        assert_eq!(canonical_smiles(&r.substrates, false), "CO");
        assert_eq!(r.source().atom_count(), 2);
    }

    #[test]
    fn retro_requires_fully_mapped_product() {
        let unmapped = Reaction::from_reaction_smiles(
            "r3",
            "[CH3:1][OH:2]>>[CH3:1]O",
            None,
            Direction::Retro,
        );
        assert!(matches!(unmapped, Err(ReactionError::Mapping(_))));
        let orphan = Reaction::from_reaction_smiles(
            "r4",
            "[CH3:1][OH:2]>>[CH3:1][OH:9]",
            None,
            Direction::Retro,
        );
        assert!(matches!(orphan, Err(ReactionError::Mapping(_))));
    }

    #[test]
    fn duplicate_and_mismatched_maps_are_rejected() {
        let dup = Reaction::from_reaction_smiles(
            "r5",
            "[CH3:1][CH3:1]>>[CH3:1][CH3:2]",
            None,
            Direction::Forward,
        );
        assert!(matches!(dup, Err(ReactionError::Mapping(_))));
        let elem = Reaction::from_reaction_smiles(
            "r6",
            "[CH3:1][OH:2]>>[CH3:2][OH:1]",
            None,
            Direction::Forward,
        );
        assert!(matches!(elem, Err(ReactionError::Mapping(_))));
    }

    #[test]
    fn malformed_shapes_and_smiles_report_context() {
        assert!(matches!(
            Reaction::from_reaction_smiles("r7", "CC>CC", None, Direction::Forward),
            Err(ReactionError::Shape(1))
        ));
        let parse = Reaction::from_reaction_smiles("r8", "C(C>>CC", None, Direction::Forward);
        match parse {
            Err(ReactionError::Parse { side, .. }) => assert_eq!(side, "substrate"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn redundant_written_hydrogens_normalize_away() {
        let r = Reaction::from_reaction_smiles(
            "r9",
            "[CH3:1][NH2:2]>>[CH3:1][NH3+:2]",
            None,
            Direction::Forward,
        )
        .unwrap();
        // CH3 and NH2 counts match implicit completion and reset to zero …
        assert_eq!(r.substrates.atom(0).explicit_hs, 0);
        assert_eq!(r.substrates.atom(1).explicit_hs, 0);
        assert_eq!(r.product.atom(1).explicit_hs, 0);
        // … while a count completion cannot reproduce stays written out.
        let pyrrole = Reaction::from_reaction_smiles(
            "r10",
            "c1cc[nH:1]c1>>c1cc[nH:1]c1",
            None,
            Direction::Forward,
        )
        .unwrap();
        let n = pyrrole
            .substrates
            .atoms()
            .iter()
            .position(|a| a.atomic_number == 7)
            .unwrap();
        assert_eq!(pyrrole.substrates.atom(n).explicit_hs, 1);
    }
}
