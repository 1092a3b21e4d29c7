//! Frozen expectations for SMILES parsing, writing and canonicalization.
//!
//! The exact strings asserted here (e.g. methanol canonicalizing to "CO") are
//! part of the crate's contract: downstream code compares molecule sets by
//! canonical string equality, so these must never drift.

use megan_chem::{
    canonical_smiles, parse_smiles, parse_smiles_full, write_smiles, BondStereo, BondType,
    Chirality, SmilesError, WriteOptions,
};

fn canon(s: &str) -> String {
    canonical_smiles(&parse_smiles(s).unwrap(), false)
}

#[test]
fn methane_parses_to_single_heavy_atom() {
    let g = parse_smiles("C").unwrap();
    assert_eq!(g.atom_count(), 1);
    assert_eq!(g.bond_count(), 0);
    assert_eq!(g.atom(0).atomic_number, 6);
    assert_eq!(g.atom(0).explicit_hs, 0);
    assert_eq!(g.implicit_hs(0), 4);
    assert_eq!(g.total_hs(0), 4);
}

#[test]
fn mapped_methanol_keeps_explicit_hydrogens_and_maps() {
    let g = parse_smiles("[CH3:1][OH:2]").unwrap();
    assert_eq!(g.atom_count(), 2);
    assert_eq!(g.bond_count(), 1);
    let c = g.atoms().iter().position(|a| a.atomic_number == 6).unwrap();
    let o = g.atoms().iter().position(|a| a.atomic_number == 8).unwrap();
    assert_eq!(g.atom(c).explicit_hs, 3);
    assert_eq!(g.atom(o).explicit_hs, 1);
    assert_eq!(g.atom(c).map_number, 1);
    assert_eq!(g.atom(o).map_number, 2);
    assert_eq!(g.bond(c, o).unwrap().bond_type, BondType::Single);
    // Explicit counts are complete specifications: nothing implicit on top.
    assert_eq!(g.implicit_hs(c), 0);
    assert_eq!(g.implicit_hs(o), 0);
}

#[test]
fn mapped_methanol_canonicalizes_to_co_when_stripped() {
    let g = parse_smiles("[CH3:1][OH:2]").unwrap();
    assert_eq!(canonical_smiles(&g, false), "CO");
    // Map-preserving canonical output keeps the explicit hydrogen split.
    assert_eq!(canonical_smiles(&g, true), "[CH3:1][OH:2]");
}

#[test]
fn benzene_is_six_aromatic_atoms_and_bonds() {
    let g = parse_smiles("c1ccccc1").unwrap();
    assert_eq!(g.atom_count(), 6);
    assert_eq!(g.bond_count(), 6);
    for i in 0..6 {
        assert!(g.atom(i).is_aromatic);
        assert_eq!(g.total_hs(i), 1);
    }
    assert!(g.bonds().all(|(_, _, b)| b.bond_type == BondType::Aromatic));
    assert_eq!(canonical_smiles(&g, false), "c1ccccc1");
}

#[test]
fn atom_order_does_not_change_canonical_output() {
    assert_eq!(canon("OCC"), canon("CCO"));
    assert_eq!(canon("CCO"), "CCO");
    assert_eq!(canon("C(F)(F)F"), canon("FC(F)F"));
    assert_eq!(canon("c1ccccc1C"), canon("Cc1ccccc1"));
    assert_eq!(canon("Cc1ccccc1"), "Cc1ccccc1");
}

#[test]
fn components_sort_in_canonical_output() {
    assert_eq!(canon("C.C"), "C.C");
    assert_eq!(canon("CCO.C"), "C.CCO");
    assert_eq!(canon("C.CCO"), "C.CCO");
}

#[test]
fn map_stripping_commutes_with_canonicalization() {
    for s in ["[CH3:1][OH:2]", "[cH:1]1[cH:2][cH:3][cH:4][cH:5][c:6]1[CH3:7]", "[NH2:1][CH2:2][CH3:3]"] {
        let g = parse_smiles(s).unwrap();
        let stripped_then_canon = canonical_smiles(&g.without_maps(), false);
        let canon_ignoring_maps = canonical_smiles(&g, false);
        assert_eq!(stripped_then_canon, canon_ignoring_maps, "for {s}");
    }
}

#[test]
fn round_trip_is_idempotent() {
    for s in [
        "CCO",
        "CC(=O)OC",
        "c1ccccc1",
        "Cc1ccc(N)cc1",
        "C[C@H](N)C(=O)O",
        "F/C=C/F",
        "F/C=C\\F",
        "[O-]C(=O)C",
        "C[N+](C)(C)C",
        "O=[N+]([O-])c1ccccc1",
        "C#N",
        "ClCCl.BrBr",
        "[SiH4]",
        "C[Si](C)(C)C",
        "c1ccc2ccccc2c1",
        "C1CC1.C1CCC1",
        "[nH]1cccc1",
        "CC(C)(C)OC(=O)N",
        "N#Cc1ccccc1",
        "C/C=C/C=O",
    ] {
        let first = canon(s);
        let second = canon(&first);
        assert_eq!(first, second, "canonical output must be a fixed point for {s}");
    }
}

#[test]
fn stereo_labels_survive_round_trips() {
    let trans = parse_smiles("F/C=C/F").unwrap();
    let (i, j, bond) = trans.bonds().find(|(_, _, b)| b.bond_type == BondType::Double).unwrap();
    assert_eq!(bond.stereo, BondStereo::E, "matching slashes are trans");
    assert!(trans.atom(i).atomic_number == 6 && trans.atom(j).atomic_number == 6);

    let cis = parse_smiles("F/C=C\\F").unwrap();
    let (_, _, bond) = cis.bonds().find(|(_, _, b)| b.bond_type == BondType::Double).unwrap();
    assert_eq!(bond.stereo, BondStereo::Z, "opposing slashes are cis");

    // The two isomers stay distinct through canonicalization ...
    let t = canon("F/C=C/F");
    let c = canon("F/C=C\\F");
    assert_ne!(t, c);
    // ... and each canonical form re-parses to the same label.
    let t2 = parse_smiles(&t).unwrap();
    assert_eq!(
        t2.bonds().find(|(_, _, b)| b.bond_type == BondType::Double).unwrap().2.stereo,
        BondStereo::E
    );
    let c2 = parse_smiles(&c).unwrap();
    assert_eq!(
        c2.bonds().find(|(_, _, b)| b.bond_type == BondType::Double).unwrap().2.stereo,
        BondStereo::Z
    );
}

#[test]
fn chirality_tags_round_trip() {
    let g = parse_smiles("C[C@H](N)C(=O)O").unwrap();
    let chiral: Vec<_> =
        g.atoms().iter().filter(|a| a.chirality != Chirality::None).collect();
    assert_eq!(chiral.len(), 1);
    assert_eq!(chiral[0].chirality, Chirality::Ccw);
    assert_eq!(chiral[0].explicit_hs, 1);
    let s = canonical_smiles(&g, false);
    let g2 = parse_smiles(&s).unwrap();
    assert_eq!(
        g2.atoms().iter().filter(|a| a.chirality == Chirality::Ccw).count(),
        1,
        "@ label survives: {s}"
    );
}

#[test]
fn charges_parse_and_round_trip() {
    let g = parse_smiles("[NH4+].[Cl-]").unwrap();
    let n = g.atoms().iter().find(|a| a.atomic_number == 7).unwrap();
    let cl = g.atoms().iter().find(|a| a.atomic_number == 17).unwrap();
    assert_eq!(n.formal_charge, 1);
    assert_eq!(n.explicit_hs, 4);
    assert_eq!(cl.formal_charge, -1);
    let fixed = canon("[NH4+].[Cl-]");
    assert_eq!(fixed, canon(&fixed));
}

#[test]
fn isotopes_warn_and_drop() {
    let (g, warnings) = parse_smiles_full("[13CH4]").unwrap();
    assert_eq!(g.atom_count(), 1);
    assert_eq!(g.atom(0).atomic_number, 6);
    assert!(warnings.iter().any(|w| w.message.contains("isotope")));
}

#[test]
fn explicit_hydrogen_nodes_fold_into_neighbors() {
    let g = parse_smiles("C([H])([H])O[H]").unwrap();
    assert_eq!(g.atom_count(), 2);
    let c = g.atoms().iter().position(|a| a.atomic_number == 6).unwrap();
    let o = g.atoms().iter().position(|a| a.atomic_number == 8).unwrap();
    assert_eq!(g.total_hs(c), 3, "two folded plus the standard implicit top-up");
    assert_eq!(g.total_hs(o), 1);
    assert_eq!(canonical_smiles(&g, false), "CO");
}

#[test]
fn errors_are_typed_and_positioned() {
    match parse_smiles("CC(C") {
        Err(SmilesError::Syntax { .. }) => {}
        other => panic!("expected syntax error, got {other:?}"),
    }
    match parse_smiles("C1CC") {
        Err(SmilesError::Syntax { message, .. }) => assert!(message.contains("ring")),
        other => panic!("expected ring error, got {other:?}"),
    }
    match parse_smiles("C*C") {
        Err(SmilesError::Unsupported { .. }) => {}
        other => panic!("expected unsupported-feature error, got {other:?}"),
    }
    match parse_smiles("C(C)(C)(C)(C)C") {
        Err(SmilesError::Valence(_)) => {}
        other => panic!("expected valence error, got {other:?}"),
    }
    match parse_smiles("CC)") {
        Err(SmilesError::Syntax { index, .. }) => assert_eq!(index, 2),
        other => panic!("expected positioned syntax error, got {other:?}"),
    }
}

#[test]
fn unusual_but_valid_inputs() {
    // Pyrrole nitrogen keeps its written hydrogen.
    let g = parse_smiles("c1cc[nH]c1").unwrap();
    let n = g.atoms().iter().position(|a| a.atomic_number == 7).unwrap();
    assert_eq!(g.atom(n).explicit_hs, 1);
    assert_eq!(g.implicit_hs(n), 0);
    // Pyridine nitrogen has none.
    let g = parse_smiles("c1ccncc1").unwrap();
    let n = g.atoms().iter().position(|a| a.atomic_number == 7).unwrap();
    assert_eq!(g.total_hs(n), 0);
    // Silane hydrogens are explicit only.
    let g = parse_smiles("[SiH4]").unwrap();
    assert_eq!(g.atom(0).explicit_hs, 4);
    assert_eq!(g.implicit_hs(0), 0);
    // An organometallic stays parseable.
    let g = parse_smiles("C[Mg]Br").unwrap();
    assert_eq!(g.atom_count(), 3);
}

#[test]
fn write_options_default_is_canonical_without_maps() {
    let g = parse_smiles("[OH:2][CH3:1]").unwrap();
    assert_eq!(write_smiles(&g, &WriteOptions::default()), "CO");
    let keep = WriteOptions { canonical: true, keep_maps: true };
    assert_eq!(write_smiles(&g, &keep), "[CH3:1][OH:2]");
}

/// Permutation invariance: shuffling atom indices must never change the
/// canonical string. This is the property the whole evaluation pipeline
/// leans on.
mod permutation_invariance {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    const MOLECULES: &[&str] = &[
        "CCO",
        "CC(=O)OC",
        "Cc1ccc(cc1)S(=O)(=O)O",
        "C[C@H](N)C(=O)O",
        "F/C=C/F",
        "c1ccc2ccccc2c1",
        "O=C(O)c1ccccc1O",
        "C1CCNCC1",
        "N#Cc1ccc(Br)cc1",
        "CON=C(C(=O)O)c1csc(N)n1",
    ];

    #[test]
    fn holds_for_one_hundred_permutations_each() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for s in MOLECULES {
            let g = parse_smiles(s).unwrap();
            let reference = canonical_smiles(&g, false);
            let mut perm: Vec<usize> = (0..g.atom_count()).collect();
            for _ in 0..100 {
                perm.shuffle(&mut rng);
                let shuffled = g.permuted(&perm);
                assert_eq!(
                    canonical_smiles(&shuffled, false),
                    reference,
                    "canonical string changed under permutation of {s}"
                );
            }
        }
    }
}

/// Valence accounting: total hydrogen counts are conserved by canonical
/// round trips.
#[test]
fn hydrogen_totals_conserved_by_round_trip() {
    for s in ["CCO", "CC(=O)O", "c1ccccc1", "c1cc[nH]c1", "[NH4+]", "CC(N)=O", "CS(=O)(=O)C"] {
        let g = parse_smiles(s).unwrap();
        let total: u32 = (0..g.atom_count()).map(|i| g.total_hs(i) as u32).sum();
        let rt = parse_smiles(&canonical_smiles(&g, false)).unwrap();
        let total_rt: u32 = (0..rt.atom_count()).map(|i| rt.total_hs(i) as u32).sum();
        assert_eq!(total, total_rt, "hydrogen total drifted for {s}");
    }
}
