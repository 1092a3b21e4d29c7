//! The preprocess command: turn a reaction table into everything training
//! needs — an action vocabulary, a feature config, and an archive of
//! ground-truth edit sequences.
//!
//! Records are processed in parallel and every per-record failure is
//! classified and counted instead of aborting the run; a real dataset
//! always contains a few unparsable or unmappable rows. The command exits
//! nonzero only when the accepted fraction falls below the configured
//! threshold (or the input is empty), and even then the artifacts for the
//! accepted remainder are written first, so a partial dataset can still be
//! inspected.
//!
//! Train and valid records ("dev") contribute sequences, the vocabulary
//! and the feature fit; test records only need to parse and are written to
//! `inputs_test.tsv` as map-free SMILES, keeping the prediction stage free
//! of any ground-truth leakage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use megan_chem::{
    build_vocab, canonical_smiles, fit_config, generate_sequence, EditAction, GeneratedSequence,
    OracleError, Reaction, ReactionError,
};
use rayon::prelude::*;

use crate::archive::{Archive, ArchiveRecord};
use crate::fail::{Classify, Failure};
use crate::records::{ReactionRecord, Split};
use crate::runcfg::RunConfig;

/// Processed form of one input row.
enum Processed {
    /// Train or valid: reaction plus its generated edit sequence.
    Dev { record: usize, reaction: Reaction, seq: GeneratedSequence, marks: Option<Vec<bool>> },
    /// Test: just the model's input, map-free.
    Test { record: usize, smiles: String },
    Dropped { record: usize, reason: &'static str, detail: String },
}

fn action_kind(a: &EditAction) -> &'static str {
    match a {
        EditAction::EditAtom(_) => "edit_atom",
        EditAction::EditBond(_) => "edit_bond",
        EditAction::AddAtom(_) => "add_atom",
        EditAction::AddBenzene => "add_benzene",
        EditAction::Stop => "stop",
    }
}

/// Which source atoms survive into the target, by map number. Drives the
/// optional contributes-to-target feature channel.
fn contribution_marks(r: &Reaction) -> Vec<bool> {
    let target_maps: BTreeSet<u32> =
        r.target().atoms().iter().map(|a| a.map_number).filter(|&m| m != 0).collect();
    r.source()
        .atoms()
        .iter()
        .map(|a| a.map_number != 0 && target_maps.contains(&a.map_number))
        .collect()
}

fn process_one(cfg: &RunConfig, idx: usize, rec: &ReactionRecord) -> Processed {
    let reaction =
        match Reaction::from_reaction_smiles(&rec.id, &rec.rxn, rec.reaction_class, cfg.direction)
        {
            Ok(r) => r,
            Err(e) => {
                let reason = match &e {
                    ReactionError::Parse { .. } | ReactionError::Shape(_) => "syntax",
                    ReactionError::Mapping(_) => "mapping",
                };
                return Processed::Dropped { record: idx, reason, detail: e.to_string() };
            }
        };
    if rec.split == Split::Test {
        // Strip maps: prediction must work from plain laboratory input.
        return Processed::Test { record: idx, smiles: canonical_smiles(reaction.source(), false) };
    }
    let marks = cfg.mark_contribution.then(|| contribution_marks(&reaction));
    match generate_sequence(&reaction, &cfg.ordering_policy(), cfg.max_seq_steps) {
        Ok(Some(seq)) => Processed::Dev { record: idx, reaction, seq, marks },
        Ok(None) => Processed::Dropped {
            record: idx,
            reason: "over_length",
            detail: format!("needs more than {} steps", cfg.max_seq_steps),
        },
        Err(e) => {
            let reason = match &e {
                OracleError::UnreachableAtoms { .. } => "unreachable",
                OracleError::Inconsistent(_) => "inconsistent",
            };
            Processed::Dropped { record: idx, reason, detail: e.to_string() }
        }
    }
}

fn sanitize(detail: &str) -> String {
    detail.replace(['\t', '\n'], " ")
}

pub fn run(cfg: &RunConfig, records: &[ReactionRecord], out_dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .or_usage()?;
    let hash = cfg.hash();

    let processed: Vec<Processed> =
        records.par_iter().enumerate().map(|(idx, rec)| process_one(cfg, idx, rec)).collect();

    let mut dev: Vec<(usize, Reaction, GeneratedSequence, Option<Vec<bool>>)> = Vec::new();
    let mut test_inputs: Vec<(usize, String)> = Vec::new();
    let mut drops: Vec<(usize, &'static str, String)> = Vec::new();
    for p in processed {
        match p {
            Processed::Dev { record, reaction, seq, marks } => {
                dev.push((record, reaction, seq, marks))
            }
            Processed::Test { record, smiles } => test_inputs.push((record, smiles)),
            Processed::Dropped { record, reason, detail } => drops.push((record, reason, detail)),
        }
    }

    let vocab = build_vocab(dev.iter().map(|(_, _, seq, _)| seq));
    let feats = fit_config(
        dev.iter().flat_map(|(_, _, seq, _)| {
            seq.steps.iter().map(|s| &s.graph_before).chain(std::iter::once(&seq.final_graph))
        }),
        cfg.fit_options(),
    );

    let mut archive_records = Vec::with_capacity(dev.len());
    for (record, reaction, seq, marks) in &dev {
        let mut steps = Vec::with_capacity(seq.steps.len());
        for step in &seq.steps {
            let vocab_idx = vocab
                .index_of(&step.action)
                .ok_or_else(|| anyhow!("action missing from the vocabulary built over it"))
                .or_data()?;
            steps.push((vocab_idx as u32, step.target));
        }
        archive_records.push(ArchiveRecord {
            id: records[*record].id.clone(),
            split: records[*record].split,
            reaction_class: reaction.reaction_class,
            marks: marks.clone(),
            source: reaction.source().clone(),
            steps,
        });
    }
    let archive =
        Archive { config_hash: hash.clone(), direction: cfg.direction, records: archive_records };

    // ---- artifacts ----
    let write = |name: &str, content: &str| -> Result<(), Failure> {
        std::fs::write(out_dir.join(name), content)
            .with_context(|| format!("writing {name}"))
            .or_data()
    };
    write("run_config.txt", &cfg.to_text())?;
    write("vocab.txt", &vocab.to_text())?;
    write("features.txt", &feats.to_text())?;
    archive.write_file(&out_dir.join("samples.bin")).or_data()?;

    let mut test_file = format!("# megan-test-inputs v1\n# config {hash}\n");
    for (record, smiles) in &test_inputs {
        let rec = &records[*record];
        match rec.reaction_class {
            Some(c) => {
                let _ = writeln!(test_file, "{}\t{}\t{}", rec.id, smiles, c);
            }
            None => {
                let _ = writeln!(test_file, "{}\t{}", rec.id, smiles);
            }
        }
    }
    write("inputs_test.tsv", &test_file)?;

    let mut rejects = format!("# megan-rejects v1\n# config {hash}\n");
    for (record, reason, detail) in &drops {
        let rec = &records[*record];
        let _ = writeln!(
            rejects,
            "{}\t{}\t{}\t{}",
            rec.id,
            rec.split.as_str(),
            reason,
            sanitize(detail)
        );
    }
    write("rejects.tsv", &rejects)?;

    // ---- report ----
    let mut pairs: Vec<(String, String)> = Vec::new();
    let accepted = dev.len() + test_inputs.len();
    let acceptance =
        if records.is_empty() { 0.0 } else { accepted as f64 / records.len() as f64 };
    pairs.push(("records".into(), records.len().to_string()));
    pairs.push(("accepted.dev".into(), dev.len().to_string()));
    pairs.push(("accepted.test".into(), test_inputs.len().to_string()));
    pairs.push(("acceptance".into(), format!("{acceptance:.4}")));
    pairs.push(("direction".into(), cfg.direction.as_str().into()));
    pairs.push(("ordering".into(), cfg.ordering.as_str().into()));
    pairs.push(("seed".into(), cfg.seed.to_string()));
    for reason in ["syntax", "mapping", "unreachable", "inconsistent", "over_length"] {
        let count = drops.iter().filter(|(_, r, _)| *r == reason).count();
        pairs.push((format!("rejected.{reason}"), count.to_string()));
    }
    for split in [Split::Train, Split::Valid, Split::Test] {
        let count = records.iter().filter(|r| r.split == split).count();
        pairs.push((format!("splits.{}", split.as_str()), count.to_string()));
    }
    let counts = vocab.counts();
    pairs.push(("vocab.total".into(), counts.total().to_string()));
    pairs.push(("vocab.edit_atom".into(), counts.edit_atom.to_string()));
    pairs.push(("vocab.edit_bond".into(), counts.edit_bond.to_string()));
    pairs.push(("vocab.add_atom".into(), counts.add_atom.to_string()));
    pairs.push(("vocab.add_benzene".into(), counts.add_benzene.to_string()));
    pairs.push(("vocab.stop".into(), counts.stop.to_string()));
    pairs.push(("features.atom_width".into(), feats.atom_width().to_string()));
    pairs.push(("features.bond_width".into(), feats.bond_width().to_string()));
    let mut first_counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for kind in ["edit_atom", "edit_bond", "add_atom", "add_benzene", "stop"] {
        first_counts.insert(kind, 0);
    }
    for (_, _, seq, _) in &dev {
        if let Some(step) = seq.steps.first() {
            *first_counts.entry(action_kind(&step.action)).or_default() += 1;
        }
    }
    for (kind, count) in &first_counts {
        pairs.push((format!("first_action.{kind}"), count.to_string()));
    }
    if dev.is_empty() {
        pairs.push(("steps.max".into(), "0".into()));
        pairs.push(("steps.mean".into(), "0".into()));
    } else {
        let lens: Vec<usize> = dev.iter().map(|(_, _, seq, _)| seq.steps.len()).collect();
        let max = lens.iter().max().expect("non-empty");
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        pairs.push(("steps.max".into(), max.to_string()));
        pairs.push(("steps.mean".into(), format!("{mean:.4}")));
    }
    pairs.sort();
    let mut report = format!("# megan-preprocess-report v1\n# config {hash}\n");
    for (key, value) in &pairs {
        let _ = writeln!(report, "{key} {value}");
    }
    write("report.txt", &report)?;

    println!(
        "preprocess: {} records, {} dev sequences, {} test inputs, {} rejected \
         (acceptance {:.4})",
        records.len(),
        dev.len(),
        test_inputs.len(),
        drops.len(),
        acceptance
    );
    println!(
        "vocabulary: {} actions ({} edit-atom, {} edit-bond, {} add-atom, {} add-benzene, \
         {} stop); features {}x{}",
        counts.total(),
        counts.edit_atom,
        counts.edit_bond,
        counts.add_atom,
        counts.add_benzene,
        counts.stop,
        feats.atom_width(),
        feats.bond_width()
    );

    if records.is_empty() {
        return Err(Failure::Data(anyhow!("no input records")));
    }
    if acceptance < cfg.min_acceptance {
        return Err(Failure::Data(anyhow!(
            "acceptance {acceptance:.4} below the configured minimum {}",
            cfg.min_acceptance
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use megan_chem::ActionVocab;

    fn record(id: &str, rxn: &str, split: Split) -> ReactionRecord {
        ReactionRecord { id: id.into(), reaction_class: None, rxn: rxn.into(), split }
    }

    #[test]
    fn writes_all_artifacts_and_counts_rejects() {
        let dir = tempfile::tempdir().expect("temp dir");
        let cfg = RunConfig::default();
        let records = vec![
            record("ok1", "[CH3:1][OH:2]>>[CH3:1][O:2][CH3:3]", Split::Train),
            record("ok2", "[CH3:1][CH2:2][OH:3]>>[CH3:1][CH2:2][O:3][CH3:4]", Split::Valid),
            record("bad", "not-a-reaction", Split::Train),
            record("t1", "[CH3:1][OH:2]>>[CH3:1][O:2][CH3:3]", Split::Test),
        ];
        run(&cfg, &records, dir.path()).expect("acceptance 0.75 >= 0.5");
        for name in
            ["run_config.txt", "vocab.txt", "features.txt", "samples.bin", "inputs_test.tsv", "rejects.tsv", "report.txt"]
        {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(report.contains("rejected.syntax 1"), "{report}");
        assert!(report.contains("accepted.dev 2"), "{report}");
        assert!(report.contains("accepted.test 1"), "{report}");
        let rejects = std::fs::read_to_string(dir.path().join("rejects.tsv")).unwrap();
        assert!(rejects.contains("bad\ttrain\tsyntax"), "{rejects}");
        let tests = std::fs::read_to_string(dir.path().join("inputs_test.tsv")).unwrap();
        // Retro: the model input is the product, written map-free.
        assert!(tests.contains("t1\tCOC"), "{tests}");
        let archive = Archive::read_file(&dir.path().join("samples.bin")).unwrap();
        assert_eq!(archive.records.len(), 2);
        assert_eq!(archive.config_hash, cfg.hash());
    }

    #[test]
    fn empty_input_still_writes_a_stop_only_vocabulary() {
        let dir = tempfile::tempdir().expect("temp dir");
        let cfg = RunConfig::default();
        let err = run(&cfg, &[], dir.path()).unwrap_err();
        assert_eq!(err.code(), 2);
        let vocab_text = std::fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
        let vocab = ActionVocab::from_text(&vocab_text).expect("parses");
        assert_eq!(vocab.len(), 1, "only Stop");
    }

    #[test]
    fn acceptance_threshold_fails_the_run_but_artifacts_remain() {
        let dir = tempfile::tempdir().expect("temp dir");
        let cfg = RunConfig { min_acceptance: 0.9, ..RunConfig::default() };
        let records = vec![
            record("ok1", "[CH3:1][OH:2]>>[CH3:1][O:2][CH3:3]", Split::Train),
            record("bad", "][", Split::Train),
        ];
        let err = run(&cfg, &records, dir.path()).unwrap_err();
        assert_eq!(err.code(), 2);
        assert!(dir.path().join("samples.bin").exists());
    }

    #[test]
    fn contribution_marks_follow_map_numbers() {
        let r = Reaction::from_reaction_smiles(
            "m",
            "[CH3:1][OH:2]>>[CH3:1][O:2][CH3:3]",
            None,
            megan_chem::Direction::Retro,
        )
        .expect("parses");
        // Retro source = product: all three atoms mapped, atoms 1 and 2
        // survive into the substrates, atom 3 does not.
        let marks = contribution_marks(&r);
        assert_eq!(marks.len(), 3);
        assert_eq!(marks.iter().filter(|&&m| m).count(), 2);
    }
}
