//! The evaluate command: top-k accuracy of a predictions file against the
//! ground-truth reaction table.
//!
//! The join is by record id, never by line order — a shuffled predictions
//! file scores identically. Truth rows without a prediction count as
//! misses (a decoder that silently skips hard inputs must not look
//! better), predictions without a truth row are counted and reported but
//! ignored, and truth rows that fail to parse are skipped with a count.
//!
//! A candidate matches when its molecule set equals the truth set built
//! from the same canonicalization: every target-side component for
//! retrosynthesis, the longest-SMILES component (ties: lexicographically
//! smallest) for forward prediction — exactly the rule candidate
//! extraction uses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use megan_chem::{canonical_smiles, Direction, MolGraph, Reaction};
use megan_model::{top_k_accuracy, Candidate, Prediction};

use crate::fail::{Classify, Failure};
use crate::records::{read_reaction_csv, Split};
use crate::runcfg::RunConfig;

/// The molecule set a prediction must equal. Truth graphs never carry a
/// supernode, but the recipe stays literally the one used on decoded
/// graphs.
fn truth_set(g: &MolGraph, direction: Direction) -> BTreeSet<String> {
    let bare = g.without_supernode();
    let mut parts: Vec<String> = bare
        .components()
        .iter()
        .map(|idxs| canonical_smiles(&bare.subgraph(idxs), false))
        .collect();
    match direction {
        Direction::Retro => parts.into_iter().collect(),
        Direction::Forward => {
            parts.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
            parts.into_iter().take(1).collect()
        }
    }
}

/// Parse one predictions file into id -> ranked candidates. `ERROR` tokens
/// and empty candidate columns become empty candidate lists.
fn parse_predictions(text: &str) -> Result<BTreeMap<String, Prediction>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\n');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or("").trim();
        let _input = fields
            .next()
            .with_context(|| format!("predictions line {}: missing input column", idx + 1))?;
        let cand_col = fields.next().unwrap_or("").trim();
        if id.is_empty() {
            bail!("predictions line {}: empty id", idx + 1);
        }
        let mut candidates = Vec::new();
        if !cand_col.is_empty() && !cand_col.starts_with("ERROR ") {
            for pair in cand_col.split(';') {
                let (set_text, score_text) = pair.trim().rsplit_once(' ').with_context(|| {
                    format!("predictions line {}: malformed candidate {pair:?}", idx + 1)
                })?;
                let score: f64 = score_text.parse().with_context(|| {
                    format!("predictions line {}: bad score {score_text:?}", idx + 1)
                })?;
                let components: BTreeSet<String> =
                    set_text.split('.').map(str::to_string).collect();
                candidates.push(Candidate { components, score });
            }
        }
        let raw_count = candidates.len();
        let prediction = Prediction { candidates, raw_count, dropped_invalid: 0 };
        if out.insert(id.to_string(), prediction).is_some() {
            bail!("duplicate prediction id {id:?}");
        }
    }
    Ok(out)
}

pub struct EvalSummary {
    pub evaluated: usize,
    pub missing_predictions: usize,
    pub extra_predictions: usize,
    pub skipped_truth: usize,
    pub report: megan_model::EvalReport,
}

pub fn evaluate(
    cfg: &RunConfig,
    predictions_text: &str,
    truth_records: &[crate::records::ReactionRecord],
    split: Split,
) -> Result<EvalSummary> {
    let mut predictions = parse_predictions(predictions_text)?;
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut missing_predictions = 0usize;
    let mut skipped_truth = 0usize;
    for rec in truth_records.iter().filter(|r| r.split == split) {
        let reaction = match Reaction::from_reaction_smiles(
            &rec.id,
            &rec.rxn,
            rec.reaction_class,
            cfg.direction,
        ) {
            Ok(r) => r,
            Err(_) => {
                skipped_truth += 1;
                continue;
            }
        };
        let truth = truth_set(reaction.target(), cfg.direction);
        let prediction = match predictions.remove(&rec.id) {
            Some(p) => p,
            None => {
                missing_predictions += 1;
                Prediction { candidates: Vec::new(), raw_count: 0, dropped_invalid: 0 }
            }
        };
        preds.push(prediction);
        truths.push(truth);
    }
    let extra_predictions = predictions.len();
    let report = top_k_accuracy(&preds, &truths, &cfg.eval_ks);
    Ok(EvalSummary {
        evaluated: preds.len(),
        missing_predictions,
        extra_predictions,
        skipped_truth,
        report,
    })
}

pub fn run(
    cfg: &RunConfig,
    predictions: &Path,
    truth: &Path,
    split: Split,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let predictions_text = std::fs::read_to_string(predictions)
        .with_context(|| format!("reading {}", predictions.display()))
        .or_usage()?;
    // A truth file without a split column is taken to be all one split.
    let truth_records = read_reaction_csv(truth, Some(split)).or_data()?;
    let summary = evaluate(cfg, &predictions_text, &truth_records, split).or_data()?;
    if summary.evaluated == 0 {
        return Err(Failure::Data(anyhow!(
            "no {} truth records to evaluate in {}",
            split.as_str(),
            truth.display()
        )));
    }

    println!(
        "evaluate: {} reactions ({} without predictions, {} predictions unmatched, \
         {} truth rows skipped)",
        summary.evaluated,
        summary.missing_predictions,
        summary.extra_predictions,
        summary.skipped_truth
    );
    print!("{}", render_table(&summary));

    if let Some(path) = out {
        let mut metrics = format!("# megan-metrics v1\n# config {}\n", cfg.hash());
        let _ = writeln!(metrics, "evaluated {}", summary.evaluated);
        let _ = writeln!(metrics, "missing_predictions {}", summary.missing_predictions);
        let _ = writeln!(metrics, "extra_predictions {}", summary.extra_predictions);
        let _ = writeln!(metrics, "skipped_truth {}", summary.skipped_truth);
        metrics.push_str(&summary.report.to_text());
        std::fs::write(path, metrics)
            .with_context(|| format!("writing {}", path.display()))
            .or_data()?;
    }
    Ok(())
}

fn render_table(summary: &EvalSummary) -> String {
    let mut out = String::from("k\thits\taccuracy\n");
    let mut ks: Vec<usize> = summary.report.hits.keys().copied().collect();
    ks.sort_unstable();
    for k in ks {
        let hits = summary.report.hits[&k];
        let acc = summary.report.accuracy(k).unwrap_or(0.0);
        let _ = writeln!(out, "{k}\t{hits}\t{acc:.4}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::ReactionRecord;

    fn cfg() -> RunConfig {
        RunConfig { eval_ks: vec![1, 2], ..RunConfig::default() }
    }

    fn truth_row(id: &str) -> ReactionRecord {
        ReactionRecord {
            id: id.into(),
            reaction_class: None,
            // Retro target = substrates CO; truth set {CO}.
            rxn: "[CH3:1][OH:2]>>[CH3:1][O:2][CH3:3]".into(),
            split: Split::Test,
        }
    }

    #[test]
    fn join_is_by_id_not_order() {
        let records = vec![truth_row("a"), truth_row("b")];
        // Predictions listed in reverse order; 'b' correct at rank 1, 'a'
        // correct at rank 2.
        let text = "b\tCOC\tCO -0.1\na\tCOC\tCC -0.1;CO -0.2\n";
        let s = evaluate(&cfg(), text, &records, Split::Test).expect("evaluates");
        assert_eq!(s.evaluated, 2);
        assert_eq!(s.report.hits[&1], 1);
        assert_eq!(s.report.hits[&2], 2);
    }

    #[test]
    fn missing_prediction_counts_as_a_miss() {
        let records = vec![truth_row("a"), truth_row("ghost")];
        let text = "a\tCOC\tCO -0.1\n";
        let s = evaluate(&cfg(), text, &records, Split::Test).expect("evaluates");
        assert_eq!(s.evaluated, 2);
        assert_eq!(s.missing_predictions, 1);
        assert_eq!(s.report.hits[&1], 1, "only the predicted row hits");
    }

    #[test]
    fn error_tokens_and_extras_are_tolerated() {
        let records = vec![truth_row("a")];
        let text = "a\tCOC\tERROR syntax: nope\nzz\tC\tC -0.5\n";
        let s = evaluate(&cfg(), text, &records, Split::Test).expect("evaluates");
        assert_eq!(s.evaluated, 1);
        assert_eq!(s.extra_predictions, 1);
        assert_eq!(s.report.hits[&1], 0);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let records = vec![truth_row("a")];
        let text = "a\tCOC\tCO -0.1\na\tCOC\tCO -0.2\n";
        assert!(evaluate(&cfg(), text, &records, Split::Test).is_err());
    }

    #[test]
    fn unparsable_truth_is_skipped_with_a_count() {
        let mut bad = truth_row("bad");
        bad.rxn = "][".into();
        let records = vec![truth_row("a"), bad];
        let text = "a\tCOC\tCO -0.1\n";
        let s = evaluate(&cfg(), text, &records, Split::Test).expect("evaluates");
        assert_eq!(s.evaluated, 1);
        assert_eq!(s.skipped_truth, 1);
    }

    #[test]
    fn forward_truth_keeps_only_the_main_product() {
        let g = megan_chem::parse_smiles("CCO.O.[Na+]").expect("parses");
        let set = truth_set(&g, Direction::Forward);
        assert_eq!(set, BTreeSet::from(["CCO".to_string()]));
        let set = truth_set(&g, Direction::Retro);
        assert_eq!(set.len(), 3);
    }
}
