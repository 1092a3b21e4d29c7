//! Reaction-table ingestion.
//!
//! Input follows the public USPTO-50k CSV layout: a header row naming an id
//! column, an optional reaction-class column (values 1..10), the
//! atom-mapped reaction SMILES column, and a split column. Header names
//! vary between published copies of the data, so each role is matched
//! against the spellings seen in the wild. Datasets shipped as three files
//! (one per split) are read with a caller-supplied default split instead of
//! a split column.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Which partition a reaction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Some(Split::Train),
            "valid" | "validation" | "val" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Split> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Valid),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// One row of the input table, not yet parsed chemically.
#[derive(Debug, Clone)]
pub struct ReactionRecord {
    pub id: String,
    /// Reaction class 1..10 when present and well-formed.
    pub reaction_class: Option<u8>,
    /// Atom-mapped `reactants>reagents>product` SMILES.
    pub rxn: String,
    pub split: Split,
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.contains(&h.trim().to_ascii_lowercase().as_str()))
}

/// Read one CSV file. `default_split` stands in for a missing split column;
/// if the file has neither, that is an error. Rows themselves are *not*
/// chemically validated here — downstream stages classify per-record
/// failures without aborting the run.
pub fn read_reaction_csv(path: &Path, default_split: Option<Split>) -> Result<Vec<ReactionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers().context("reading CSV header")?.clone();

    let id_col = find_column(&headers, &["id"]);
    let class_col = find_column(&headers, &["class", "reaction_class"]);
    let rxn_col = find_column(
        &headers,
        &[
            "rxn",
            "rxn_smiles",
            "reaction",
            "reaction_smiles",
            "reactants>reagents>production",
            "reactants>reagents>products",
        ],
    )
    .with_context(|| format!("{}: no reaction SMILES column in header {headers:?}", path.display()))?;
    let split_col = find_column(&headers, &["split", "set"]);
    if split_col.is_none() && default_split.is_none() {
        bail!("{}: no split column and no default split given", path.display());
    }

    let mut out = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), row_idx + 2))?;
        let field = |col: Option<usize>| col.and_then(|c| row.get(c)).unwrap_or("").trim();
        let id = match field(id_col) {
            "" => format!("row{}", row_idx + 1),
            v => v.to_string(),
        };
        let reaction_class = match field(class_col) {
            "" => None,
            v => v.parse::<u8>().ok().filter(|c| (1..=10).contains(c)),
        };
        let rxn = field(Some(rxn_col)).to_string();
        let split = match split_col {
            Some(c) => {
                let raw = row.get(c).unwrap_or("");
                Split::parse(raw).with_context(|| {
                    format!("{}: row {} has unknown split {raw:?}", path.display(), row_idx + 2)
                })?
            }
            None => default_split.expect("checked above"),
        };
        out.push(ReactionRecord { id, reaction_class, rxn, split });
    }
    Ok(out)
}

/// Read a dataset given either one combined file (split column required) or
/// up to three per-split files.
pub fn read_dataset(
    combined: Option<&Path>,
    train: Option<&Path>,
    valid: Option<&Path>,
    test: Option<&Path>,
) -> Result<Vec<ReactionRecord>> {
    match (combined, train.or(valid).or(test)) {
        (Some(_), Some(_)) => {
            bail!("give either --input or per-split files, not both")
        }
        (None, None) => bail!("no input given: use --input or per-split files"),
        (Some(path), None) => read_reaction_csv(path, None),
        (None, Some(_)) => {
            let mut out = Vec::new();
            for (path, split) in
                [(train, Split::Train), (valid, Split::Valid), (test, Split::Test)]
            {
                if let Some(p) = path {
                    out.extend(read_reaction_csv(p, Some(split))?);
                }
            }
            Ok(out)
        }
    }
}
