//! The predict command: beam-search decoding from a checkpoint bundle.
//!
//! Input is a molecule list — `id<TAB>smiles[<TAB>class]` per line, or bare
//! SMILES with ids synthesized from line numbers. Output is one line per
//! input in input order: id, the input text, and the ranked candidates as
//! `smiles score` pairs joined by `;` (multi-molecule candidates join their
//! components with `.`). A line that cannot be decoded gets an `ERROR`
//! token in the candidate column and the run continues — one bad molecule
//! must not sink a batch job.
//!
//! Decoding follows the *checkpoint's* model config and direction; the run
//! config contributes the beam settings. Inputs decode in parallel, and
//! because the beam itself is deterministic and results are reassembled in
//! input order, the output file is byte-identical across runs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use megan_chem::{parse_smiles, ActionVocab, FeatureConfig};
use megan_model::{beam_search, extract_candidates, ModelConfig, Prediction};
use megan_tensor::ParamStore;
use rayon::prelude::*;

use crate::fail::{Classify, Failure};
use crate::runcfg::RunConfig;

/// Everything predict needs from a checkpoint bundle.
pub struct Bundle {
    pub model_cfg: ModelConfig,
    pub vocab: ActionVocab,
    pub feats: FeatureConfig,
    pub store: ParamStore,
}

/// Load a bundle directory, preferring the best-validation parameters over
/// the final ones.
pub fn load_bundle(dir: &Path) -> Result<Bundle, Failure> {
    let read = |name: &str| -> Result<String, Failure> {
        std::fs::read_to_string(dir.join(name))
            .with_context(|| format!("reading {} from {}", name, dir.display()))
            .or_data()
    };
    let model_cfg = ModelConfig::from_text(&read("model_config.txt")?).or_data()?;
    let vocab = ActionVocab::from_text(&read("vocab.txt")?).or_data()?;
    let feats = FeatureConfig::from_text(&read("features.txt")?).or_data()?;
    let params_path = if dir.join("best.bin").exists() { "best.bin" } else { "params.bin" };
    let bytes = std::fs::read(dir.join(params_path))
        .with_context(|| format!("reading {} from {}", params_path, dir.display()))
        .or_data()?;
    let store = ParamStore::from_bytes(&bytes).or_data()?;
    Ok(Bundle { model_cfg, vocab, feats, store })
}

/// One parsed input line.
struct InputLine {
    id: String,
    smiles: String,
    reaction_class: Option<u8>,
}

fn parse_input_lines(text: &str) -> Vec<InputLine> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let first = fields.next().expect("non-empty line").trim();
        match fields.next() {
            Some(smiles) => {
                let reaction_class = fields
                    .next()
                    .and_then(|c| c.trim().parse::<u8>().ok())
                    .filter(|c| (1..=10).contains(c));
                out.push(InputLine {
                    id: first.to_string(),
                    smiles: smiles.trim().to_string(),
                    reaction_class,
                });
            }
            None => out.push(InputLine {
                id: format!("line{}", idx + 1),
                smiles: first.to_string(),
                reaction_class: None,
            }),
        }
    }
    out
}

fn sanitize(msg: &str) -> String {
    msg.replace(['\t', '\n'], " ")
}

/// Candidate column: `smiles score` pairs joined by `;`.
fn format_candidates(prediction: &Prediction) -> String {
    let mut out = String::new();
    for (i, cand) in prediction.candidates.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        let joined: Vec<&str> = cand.components.iter().map(String::as_str).collect();
        let _ = write!(out, "{} {:.6}", joined.join("."), cand.score);
    }
    out
}

pub fn run(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: &Path) -> Result<(), Failure> {
    let bundle = load_bundle(checkpoint)?;
    let direction = bundle.model_cfg.direction;
    if direction != cfg.direction {
        eprintln!(
            "warning: run config says {} but the checkpoint was trained for {}; \
             following the checkpoint",
            cfg.direction.as_str(),
            direction.as_str()
        );
    }
    let beam_cfg = cfg.beam_config_for(direction);
    beam_cfg.validate().map_err(|e| Failure::Usage(e.into()))?;

    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))
        .or_usage()?;
    let inputs = parse_input_lines(&text);

    let lines: Vec<String> = inputs
        .par_iter()
        .map(|line| {
            let graph = match parse_smiles(&line.smiles) {
                Ok(g) => g,
                Err(e) => {
                    return format!("{}\t{}\tERROR syntax: {}", line.id, line.smiles, sanitize(&e.to_string()));
                }
            };
            let marks = bundle
                .feats
                .mark_product_contribution
                .then(|| vec![true; graph.atom_count()]);
            let reaction_type = line.reaction_class.map(|c| usize::from(c) - 1);
            let outcome = match beam_search(
                &bundle.store,
                &bundle.model_cfg,
                &beam_cfg,
                &bundle.vocab,
                &bundle.feats,
                &graph,
                marks,
                reaction_type,
            ) {
                Ok(o) => o,
                Err(e) => {
                    return format!("{}\t{}\tERROR decode: {}", line.id, line.smiles, sanitize(&e.to_string()));
                }
            };
            let prediction = extract_candidates(&outcome, &beam_cfg, direction);
            format!("{}\t{}\t{}", line.id, line.smiles, format_candidates(&prediction))
        })
        .collect();

    let mut file = format!("# megan-predictions v1\n# config {}\n", cfg.hash());
    for line in &lines {
        file.push_str(line);
        file.push('\n');
    }
    std::fs::write(out, &file).with_context(|| format!("writing {}", out.display())).or_data()?;

    let errors = lines.iter().filter(|l| l.contains("\tERROR ")).count();
    println!(
        "predict: {} inputs decoded with beam width {} ({} errors) -> {}",
        inputs.len(),
        beam_cfg.width,
        errors,
        out.display()
    );
    Ok(())
}
