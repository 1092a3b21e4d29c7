//! Element symbols and valence rules.
//!
//! Valence handling is deliberately table-driven and small: the pipeline only
//! needs enough chemistry to sanity-check graphs and to complete implicit
//! hydrogens on the organic subset. Exotic oxidation states are out of scope.

/// Symbol table for the elements the pipeline is expected to meet in practice.
/// Ordered by atomic number; two-letter symbols must be matched before
/// one-letter prefixes when parsing.
const SYMBOLS: &[(u8, &str)] = &[
    (1, "H"),
    (2, "He"),
    (3, "Li"),
    (4, "Be"),
    (5, "B"),
    (6, "C"),
    (7, "N"),
    (8, "O"),
    (9, "F"),
    (10, "Ne"),
    (11, "Na"),
    (12, "Mg"),
    (13, "Al"),
    (14, "Si"),
    (15, "P"),
    (16, "S"),
    (17, "Cl"),
    (18, "Ar"),
    (19, "K"),
    (20, "Ca"),
    (22, "Ti"),
    (24, "Cr"),
    (25, "Mn"),
    (26, "Fe"),
    (27, "Co"),
    (28, "Ni"),
    (29, "Cu"),
    (30, "Zn"),
    (31, "Ga"),
    (32, "Ge"),
    (33, "As"),
    (34, "Se"),
    (35, "Br"),
    (42, "Mo"),
    (44, "Ru"),
    (45, "Rh"),
    (46, "Pd"),
    (47, "Ag"),
    (48, "Cd"),
    (50, "Sn"),
    (51, "Sb"),
    (52, "Te"),
    (53, "I"),
    (55, "Cs"),
    (56, "Ba"),
    (74, "W"),
    (77, "Ir"),
    (78, "Pt"),
    (79, "Au"),
    (80, "Hg"),
    (82, "Pb"),
    (83, "Bi"),
];

/// Atomic number for an element symbol (case-sensitive), if known.
pub fn atomic_number(symbol: &str) -> Option<u8> {
    SYMBOLS.iter().find(|(_, s)| *s == symbol).map(|(z, _)| *z)
}

/// Element symbol for an atomic number. Panics on numbers outside the table;
/// graphs are validated at construction so this is an internal invariant.
pub fn symbol(z: u8) -> &'static str {
    SYMBOLS
        .iter()
        .find(|(n, _)| *n == z)
        .map(|(_, s)| *s)
        .unwrap_or_else(|| panic!("atomic number {z} outside the supported element table"))
}

pub fn is_known(z: u8) -> bool {
    SYMBOLS.iter().any(|(n, _)| *n == z)
}

/// Elements that may be written bare (no brackets) in SMILES and that take
/// implicit hydrogens. Everything else carries exactly the hydrogens written.
pub fn in_organic_subset(z: u8) -> bool {
    matches!(z, 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53)
}

/// Elements that may appear as lowercase aromatic atoms.
pub fn can_be_aromatic(z: u8) -> bool {
    matches!(z, 5 | 6 | 7 | 8 | 15 | 16 | 34)
}

/// Maximum total valence (bond order sum + hydrogens) accepted by the
/// graph validator, before charge adjustment.
pub fn max_valence(z: u8) -> u8 {
    match z {
        1 => 1,
        5 => 3,
        6 => 4,
        7 => 3,
        8 => 2,
        9 | 17 | 35 | 53 => 1,
        12 | 20 | 30 => 2, // Mg, Ca, Zn
        14 | 32 | 50 => 4, // Si, Ge, Sn
        15 | 33 => 5,      // P, As
        16 | 34 | 52 => 6, // S, Se, Te
        29 => 2,           // Cu
        3 | 11 | 19 | 55 => 1, // alkali metals
        // Transition metals and anything else uncommon: be permissive, the
        // edit model never invents these and input data is trusted after parse.
        _ => 8,
    }
}

/// Charge-adjusted maximum valence used by the validator.
pub fn effective_max_valence(z: u8, charge: i8) -> u8 {
    let base = max_valence(z) as i16;
    let adjusted = match z {
        6 => base - charge.unsigned_abs() as i16, // C+ and C- are both trivalent
        7 | 15 | 33 => base + charge as i16,      // N+ tetravalent, N- divalent
        8 | 16 | 34 => base + charge as i16,
        5 => base - charge as i16,                // B- tetravalent
        9 | 17 | 35 | 53 => base + charge as i16,
        _ => base,
    };
    adjusted.clamp(0, 8) as u8
}

/// Allowed total-valence targets for implicit hydrogen completion, smallest
/// first. Only meaningful for the organic subset.
pub fn allowed_valences(z: u8, charge: i8) -> Vec<u8> {
    let shift = |vs: &[i16]| -> Vec<u8> {
        vs.iter()
            .map(|v| (v + charge as i16).clamp(0, 8) as u8)
            .collect()
    };
    match z {
        5 if charge == -1 => vec![4], // borate
        5 => shift(&[3]),
        6 => vec![(4 - charge.unsigned_abs() as i16).clamp(0, 8) as u8],
        7 => shift(&[3]),
        8 => shift(&[2]),
        15 => shift(&[3, 5]),
        16 => shift(&[2, 4, 6]),
        9 | 17 | 35 | 53 => shift(&[1]),
        _ => vec![0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_round_trip() {
        for &(z, s) in SYMBOLS {
            assert_eq!(atomic_number(s), Some(z));
            assert_eq!(symbol(z), s);
        }
    }

    #[test]
    fn charge_adjustment() {
        assert_eq!(effective_max_valence(7, 1), 4); // ammonium N
        assert_eq!(effective_max_valence(7, -1), 2); // amide anion
        assert_eq!(effective_max_valence(8, -1), 1); // alkoxide
        assert_eq!(effective_max_valence(6, 1), 3); // carbocation
        assert_eq!(effective_max_valence(6, -1), 3); // carbanion
    }

    #[test]
    fn hydrogen_targets() {
        assert_eq!(allowed_valences(6, 0), vec![4]);
        assert_eq!(allowed_valences(16, 0), vec![2, 4, 6]);
        assert_eq!(allowed_valences(7, 1), vec![4]);
        assert_eq!(allowed_valences(8, -1), vec![1]);
    }
}
