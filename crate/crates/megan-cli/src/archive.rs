//! The preprocessed-sample archive: source graphs plus their ground-truth
//! edit sequences, in a compact binary form.
//!
//! Two designs were rejected. Storing SMILES would lose atom order across a
//! re-parse, silently invalidating the index-based action targets. Storing
//! the featurized tensors would freeze the feature config into the archive
//! and cost ~100× the space. Instead each record keeps the source graph in
//! a direct field-by-field codec plus the action list as (vocabulary index,
//! target) pairs; training samples are rebuilt at load time by replaying
//! the actions and featurizing every intermediate graph, which is
//! deterministic given the vocab and feature config stored beside the
//! archive.
//!
//! All integers are little-endian. Strings are a u32 length plus UTF-8
//! bytes. The file starts with the magic `MGSA`, a format version byte and
//! the run-config hash, so a stale archive is rejected instead of decoded
//! into garbage.

use std::path::Path;

use anyhow::{bail, Context, Result};
use megan_chem::{
    action_space_layout, apply_action, ActionTarget, ActionVocab, AtomNode, BondEdge, BondStereo,
    BondType, Chirality, Direction, FeatureConfig, MolGraph,
};
use megan_model::{featurize_state, TrainingSample};

use crate::records::Split;

const MAGIC: &[u8; 4] = b"MGSA";
const VERSION: u8 = 1;

/// One preprocessed reaction: enough to rebuild its teacher-forced
/// training sample exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRecord {
    pub id: String,
    pub split: Split,
    pub reaction_class: Option<u8>,
    /// Per-source-atom contributes-to-target marks, when the run computes
    /// them. Atoms added during replay are marked true.
    pub marks: Option<Vec<bool>>,
    /// The model's input graph, *without* the supernode.
    pub source: MolGraph,
    /// Ground-truth actions as (vocabulary index, target).
    pub steps: Vec<(u32, ActionTarget)>,
}

/// A whole archive file.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    /// Hash of the run config that produced the archive.
    pub config_hash: String,
    pub direction: Direction,
    pub records: Vec<ArchiveRecord>,
}

fn direction_code(d: Direction) -> u8 {
    match d {
        Direction::Retro => 0,
        Direction::Forward => 1,
    }
}

fn direction_from_code(code: u8) -> Option<Direction> {
    match code {
        0 => Some(Direction::Retro),
        1 => Some(Direction::Forward),
        _ => None,
    }
}

fn chirality_from_code(code: u8) -> Option<Chirality> {
    match code {
        0 => Some(Chirality::None),
        1 => Some(Chirality::Ccw),
        2 => Some(Chirality::Cw),
        _ => None,
    }
}

fn bond_type_from_code(code: u8) -> Option<BondType> {
    match code {
        0 => Some(BondType::Single),
        1 => Some(BondType::Double),
        2 => Some(BondType::Triple),
        3 => Some(BondType::Aromatic),
        _ => None,
    }
}

fn bond_stereo_from_code(code: u8) -> Option<BondStereo> {
    match code {
        0 => Some(BondStereo::None),
        1 => Some(BondStereo::Z),
        2 => Some(BondStereo::E),
        _ => None,
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn graph(&mut self, g: &MolGraph) {
        self.u32(g.atom_count() as u32);
        for atom in g.atoms() {
            self.u8(atom.atomic_number);
            self.u8(atom.formal_charge as u8);
            self.u8(atom.chirality.code());
            self.u8(atom.explicit_hs);
            self.u8(u8::from(atom.is_aromatic));
            self.u8(u8::from(atom.is_edited));
            self.u32(atom.map_number);
        }
        self.u32(g.bond_count() as u32);
        for (i, j, bond) in g.bonds() {
            self.u32(i as u32);
            self.u32(j as u32);
            self.u8(bond.bond_type.code());
            self.u8(bond.stereo.code());
            self.u8(u8::from(bond.is_edited));
        }
    }

    fn target(&mut self, t: ActionTarget) {
        match t {
            ActionTarget::Atom(a) => {
                self.u8(0);
                self.u32(a as u32);
                self.u32(0);
            }
            ActionTarget::Pair(i, j) => {
                self.u8(1);
                self.u32(i as u32);
                self.u32(j as u32);
            }
            ActionTarget::Supernode => {
                self.u8(2);
                self.u32(0);
                self.u32(0);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            bail!("archive truncated at byte {} (wanted {n} more)", self.pos);
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).context("archive string is not UTF-8")
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => bail!("invalid boolean byte {other}"),
        }
    }

    fn graph(&mut self) -> Result<MolGraph> {
        let mut g = MolGraph::new();
        let n_atoms = self.u32()?;
        for _ in 0..n_atoms {
            let mut atom = AtomNode::new(self.u8()?);
            atom.formal_charge = self.u8()? as i8;
            atom.chirality =
                chirality_from_code(self.u8()?).context("invalid chirality code")?;
            atom.explicit_hs = self.u8()?;
            atom.is_aromatic = self.flag()?;
            atom.is_edited = self.flag()?;
            atom.map_number = self.u32()?;
            g.add_atom(atom);
        }
        let n_bonds = self.u32()?;
        for _ in 0..n_bonds {
            let i = self.u32()? as usize;
            let j = self.u32()? as usize;
            let mut bond =
                BondEdge::new(bond_type_from_code(self.u8()?).context("invalid bond type code")?);
            bond.stereo = bond_stereo_from_code(self.u8()?).context("invalid stereo code")?;
            bond.is_edited = self.flag()?;
            g.set_bond(i, j, bond).context("archive bond endpoints out of range")?;
        }
        Ok(g)
    }

    fn target(&mut self) -> Result<ActionTarget> {
        let tag = self.u8()?;
        let a = self.u32()? as usize;
        let b = self.u32()? as usize;
        match tag {
            0 => Ok(ActionTarget::Atom(a)),
            1 => Ok(ActionTarget::Pair(a, b)),
            2 => Ok(ActionTarget::Supernode),
            other => bail!("invalid action target tag {other}"),
        }
    }
}

impl Archive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u8(VERSION);
        w.str(&self.config_hash);
        w.u8(direction_code(self.direction));
        w.u32(self.records.len() as u32);
        for rec in &self.records {
            w.str(&rec.id);
            w.u8(rec.split.code());
            w.u8(rec.reaction_class.unwrap_or(0));
            match &rec.marks {
                None => w.u8(0),
                Some(marks) => {
                    w.u8(1);
                    w.u32(marks.len() as u32);
                    for &m in marks {
                        w.u8(u8::from(m));
                    }
                }
            }
            w.graph(&rec.source);
            w.u32(rec.steps.len() as u32);
            for &(vocab_idx, target) in &rec.steps {
                w.u32(vocab_idx);
                w.target(target);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Archive> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            bail!("not a sample archive (bad magic)");
        }
        match r.u8()? {
            VERSION => {}
            v => bail!("unsupported archive version {v}"),
        }
        let config_hash = r.str()?;
        let direction = direction_from_code(r.u8()?).context("invalid direction code")?;
        let n_records = r.u32()?;
        let mut records = Vec::with_capacity(n_records as usize);
        for _ in 0..n_records {
            let id = r.str()?;
            let split = Split::from_code(r.u8()?).context("invalid split code")?;
            let reaction_class = match r.u8()? {
                0 => None,
                c => Some(c),
            };
            let marks = if r.flag()? {
                let n = r.u32()? as usize;
                let mut marks = Vec::with_capacity(n);
                for _ in 0..n {
                    marks.push(r.flag()?);
                }
                Some(marks)
            } else {
                None
            };
            let source = r.graph()?;
            let n_steps = r.u32()?;
            let mut steps = Vec::with_capacity(n_steps as usize);
            for _ in 0..n_steps {
                let vocab_idx = r.u32()?;
                let target = r.target()?;
                steps.push((vocab_idx, target));
            }
            records.push(ArchiveRecord { id, split, reaction_class, marks, source, steps });
        }
        if r.pos != bytes.len() {
            bail!("{} trailing bytes after archive payload", bytes.len() - r.pos);
        }
        Ok(Archive { config_hash, direction, records })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read_file(path: &Path) -> Result<Archive> {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Archive::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
    }
}

/// Rebuild teacher-forced training samples for one split by replaying each
/// record's actions: featurize the current graph, look up the target slot,
/// apply the action, repeat. Atoms grown mid-sequence inherit a positive
/// contribution mark, mirroring decoding.
pub fn to_training_samples(
    archive: &Archive,
    vocab: &ActionVocab,
    feats: &FeatureConfig,
    split: Split,
) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for rec in archive.records.iter().filter(|r| r.split == split) {
        let mut g = rec.source.clone();
        g.add_supernode().ok();
        let mut marks = rec.marks.clone();
        let mut steps = Vec::with_capacity(rec.steps.len());
        for &(vocab_idx, target) in &rec.steps {
            let action = vocab
                .entries()
                .get(vocab_idx as usize)
                .with_context(|| format!("{}: action {vocab_idx} not in vocabulary", rec.id))?;
            let tensors = featurize_state(&g, feats, marks.as_ref())
                .with_context(|| format!("{}: featurizing", rec.id))?;
            let layout = action_space_layout(vocab, g.atom_count());
            let slot = layout
                .slot_of(vocab_idx as usize, target)
                .with_context(|| format!("{}: no slot for action {vocab_idx} at {target:?}", rec.id))?;
            steps.push((tensors, slot));
            let applied = apply_action(&g, action, target)
                .with_context(|| format!("{}: replaying action {vocab_idx}", rec.id))?;
            let grown = applied.graph.atom_count() - g.atom_count();
            if let Some(m) = marks.as_mut() {
                m.extend(std::iter::repeat_n(true, grown));
            }
            g = applied.graph;
        }
        out.push(TrainingSample {
            id: rec.id.clone(),
            reaction_type: rec.reaction_class.map(|c| usize::from(c) - 1),
            steps,
        });
    }
    Ok(out)
}
