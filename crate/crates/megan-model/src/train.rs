//! Teacher-forced training: per-sample sequence NLL, gradient accumulation
//! over small batches, linear warmup into a plateau-decay learning-rate
//! schedule, and periodic validation on a fixed subset.
//!
//! Determinism contract: given the same config (seed included), the same
//! samples, and the same starting parameters, training is bit-reproducible —
//! epoch shuffles and the validation subset derive from the seed, and
//! gradient accumulation follows a fixed order. `TrainState` captures the
//! loop position (epoch, cursor, schedule), so a run resumed from a saved
//! (params, state) pair continues exactly as the uninterrupted run would.

use crate::params::bind_params;
use crate::{forward_step, slot_log_prob, ModelConfig, ModelError};
use megan_chem::{action_space_layout, ActionVocab, GraphTensors};
use megan_tensor::{ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// One preprocessed reaction: the featurized graph before each step plus the
/// flat layout slot of the ground-truth action at that step.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub id: String,
    pub reaction_type: Option<usize>,
    pub steps: Vec<(GraphTensors, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    /// Optimizer steps over which the LR ramps linearly from 0 to `lr0`.
    pub warmup_steps: u64,
    /// Run a validation pass every this many training samples.
    pub eval_every_samples: u64,
    /// Fixed validation subset size (seed-chosen once per run).
    pub eval_subset: usize,
    pub decay_factor: f64,
    /// Consecutive non-improving evals before one LR decay.
    pub decay_patience: u32,
    /// Consecutive non-improving evals before training stops.
    pub stop_patience: u32,
    pub seed: u64,
    /// Optional hard caps, mainly for tests and the overfit harness.
    pub max_epochs: Option<u64>,
    pub max_optimizer_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            lr0: 1e-4,
            warmup_steps: 20_000,
            eval_every_samples: 20_000,
            eval_subset: 2_500,
            decay_factor: 0.1,
            decay_patience: 4,
            stop_patience: 8,
            seed: 0,
            max_epochs: None,
            max_optimizer_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.lr0 <= 0.0 || self.lr0.is_nan() {
            return Err(TrainError::Config("lr0 must be positive".into()));
        }
        if self.warmup_steps == 0 || self.eval_every_samples == 0 || self.eval_subset == 0 {
            return Err(TrainError::Config(
                "warmup_steps, eval_every_samples and eval_subset must be positive".into(),
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(TrainError::Config("decay_factor must be in (0, 1)".into()));
        }
        if self.decay_patience == 0 || self.stop_patience == 0 {
            return Err(TrainError::Config("patience values must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("corrupt training data: {0}")]
    Data(String),
    /// Loss or a gradient went non-finite; training aborts with context.
    #[error("non-finite loss at sample {sample_id:?} (optimizer step {step})")]
    NonFiniteLoss { sample_id: String, step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] megan_tensor::TensorError),
}

/// Warmup + plateau-decay schedule, separated from the loop so trigger logic
/// is testable against a scripted loss series.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr0: f64,
    pub warmup_steps: u64,
    pub decay_factor: f64,
    pub decay_patience: u32,
    pub stop_patience: u32,
    pub best: Option<f64>,
    pub stagnant: u32,
    pub decays: u32,
    pub stopped: bool,
}

/// What one validation observation triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleEvent {
    Improved,
    Stagnant,
    Decayed,
    Stopped,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> PlateauSchedule {
        PlateauSchedule {
            lr0: cfg.lr0,
            warmup_steps: cfg.warmup_steps,
            decay_factor: cfg.decay_factor,
            decay_patience: cfg.decay_patience,
            stop_patience: cfg.stop_patience,
            best: None,
            stagnant: 0,
            decays: 0,
            stopped: false,
        }
    }

    /// Learning rate for the 1-based optimizer step `step`: linear from 0 to
    /// `lr0` across the warmup, then flat, times any plateau decays.
    pub fn lr_for_step(&self, step: u64) -> f64 {
        let warm = if step >= self.warmup_steps {
            1.0
        } else {
            step as f64 / self.warmup_steps as f64
        };
        self.lr0 * warm * self.decay_factor.powi(self.decays as i32)
    }

    /// Feed one validation loss; fires decay at exactly `decay_patience`
    /// consecutive non-improvements and stop at `stop_patience`.
    pub fn observe(&mut self, val_loss: f64) -> ScheduleEvent {
        let improved = match self.best {
            None => true,
            Some(best) => val_loss < best,
        };
        if improved {
            self.best = Some(val_loss);
            self.stagnant = 0;
            return ScheduleEvent::Improved;
        }
        self.stagnant += 1;
        if self.stagnant >= self.stop_patience {
            self.stopped = true;
            ScheduleEvent::Stopped
        } else if self.stagnant == self.decay_patience {
            self.decays += 1;
            ScheduleEvent::Decayed
        } else {
            ScheduleEvent::Stagnant
        }
    }
}

/// Resumable loop position. Serialized (with the schedule) into checkpoint
/// bundles as a strict key-value text block.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: u64,
    /// Samples already consumed from the current epoch's permutation.
    pub cursor: usize,
    pub samples_seen: u64,
    pub schedule: PlateauSchedule,
}

const STATE_VERSION: &str = "megan-train-state v1";

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> TrainState {
        TrainState {
            epoch: 0,
            cursor: 0,
            samples_seen: 0,
            schedule: PlateauSchedule::new(cfg),
        }
    }

    pub fn to_text(&self) -> String {
        let s = &self.schedule;
        let best = match s.best {
            // Exact round-trip: losses are finite f64s, hex bits preserve them.
            Some(b) => format!("{:016x}", b.to_bits()),
            None => "none".to_string(),
        };
        format!(
            "{STATE_VERSION}\nbest {best}\ncursor {}\ndecay_factor {:016x}\ndecay_patience {}\ndecays {}\nepoch {}\nlr0 {:016x}\nsamples_seen {}\nstagnant {}\nstop_patience {}\nstopped {}\nwarmup_steps {}\n",
            self.cursor,
            s.decay_factor.to_bits(),
            s.decay_patience,
            s.decays,
            self.epoch,
            s.lr0.to_bits(),
            self.samples_seen,
            s.stagnant,
            s.stop_patience,
            s.stopped,
            s.warmup_steps,
        )
    }

    pub fn from_text(text: &str) -> Result<TrainState, TrainError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(v) if v == STATE_VERSION => {}
            other => {
                return Err(TrainError::Data(format!(
                    "unsupported train state version {:?}",
                    other.unwrap_or_default()
                )))
            }
        }
        let mut map = BTreeMap::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| TrainError::Data(format!("bad state line {line:?}")))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(TrainError::Data(format!("duplicate state key {k:?}")));
            }
        }
        let get = |k: &str| {
            map.get(k).cloned().ok_or_else(|| TrainError::Data(format!("missing state key {k:?}")))
        };
        let parse_u64 = |k: &str| {
            get(k)?.parse::<u64>().map_err(|_| TrainError::Data(format!("bad integer for {k:?}")))
        };
        let parse_u32 = |k: &str| {
            get(k)?.parse::<u32>().map_err(|_| TrainError::Data(format!("bad integer for {k:?}")))
        };
        let parse_f64_bits = |k: &str| -> Result<f64, TrainError> {
            let raw = get(k)?;
            u64::from_str_radix(&raw, 16)
                .map(f64::from_bits)
                .map_err(|_| TrainError::Data(format!("bad float bits for {k:?}")))
        };
        let best = match get("best")?.as_str() {
            "none" => None,
            raw => Some(
                u64::from_str_radix(raw, 16)
                    .map(f64::from_bits)
                    .map_err(|_| TrainError::Data("bad float bits for \"best\"".into()))?,
            ),
        };
        let stopped = match get("stopped")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(TrainError::Data(format!("bad boolean {other:?}"))),
        };
        Ok(TrainState {
            epoch: parse_u64("epoch")?,
            cursor: parse_u64("cursor")? as usize,
            samples_seen: parse_u64("samples_seen")?,
            schedule: PlateauSchedule {
                lr0: parse_f64_bits("lr0")?,
                warmup_steps: parse_u64("warmup_steps")?,
                decay_factor: parse_f64_bits("decay_factor")?,
                decay_patience: parse_u32("decay_patience")?,
                stop_patience: parse_u32("stop_patience")?,
                best,
                stagnant: parse_u32("stagnant")?,
                decays: parse_u32("decays")?,
                stopped,
            },
        })
    }
}

/// Sum of per-step action NLLs for one sample, built on `tape` so gradients
/// flow through the carried node state across the whole sequence.
pub fn sequence_nll(
    tape: &Tape,
    params: &crate::BoundParams,
    cfg: &ModelConfig,
    vocab: &ActionVocab,
    sample: &TrainingSample,
) -> Result<megan_tensor::Var, ModelError> {
    let mut prev = None;
    let mut total = tape.scalar(0.0);
    for (gt, slot) in &sample.steps {
        let layout = action_space_layout(vocab, gt.n - 1);
        let rt = if cfg.use_reaction_type { sample.reaction_type } else { None };
        let out = forward_step(tape, params, cfg, gt, &layout, prev, rt)?;
        let nll = tape.scale(slot_log_prob(tape, out.logits, *slot)?, -1.0)?;
        total = tape.add(total, nll)?;
        prev = Some(out.h);
    }
    Ok(total)
}

/// One logged validation point.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub optimizer_steps: u64,
    pub samples_seen: u64,
    pub lr: f64,
    /// Mean training NLL per action since the previous eval.
    pub train_nll_per_step: f64,
    /// Mean validation NLL per action over the fixed subset.
    pub val_nll_per_step: f64,
    pub event: ScheduleEvent,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation loss seen (initial params if no
    /// eval ever ran).
    pub best_params: ParamStore,
    pub history: Vec<EvalPoint>,
    /// Why the loop ended.
    pub stopped_by_schedule: bool,
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    // Distinct stream per epoch, stable across resumes.
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch))
}

/// Indices of the fixed validation subset: the whole set if it is small
/// enough, otherwise a seed-chosen draw, sorted for a deterministic pass.
fn eval_subset_indices(cfg: &TrainConfig, n_val: usize) -> Vec<usize> {
    if n_val <= cfg.eval_subset {
        return (0..n_val).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED_5EED_5EED);
    let mut all: Vec<usize> = (0..n_val).collect();
    all.shuffle(&mut rng);
    let mut subset = all[..cfg.eval_subset].to_vec();
    subset.sort_unstable();
    subset
}

/// Mean NLL per action over `samples` with frozen parameters.
pub fn evaluate_nll(
    store: &ParamStore,
    cfg: &ModelConfig,
    vocab: &ActionVocab,
    samples: &[&TrainingSample],
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut steps = 0usize;
    for sample in samples {
        let tape = Tape::new();
        let params = bind_params(&tape, store, false);
        let nll = sequence_nll(&tape, &params, cfg, vocab, sample)?;
        total += tape.value(nll).item();
        steps += sample.steps.len();
    }
    if steps == 0 {
        return Err(TrainError::Data("validation set has no steps".into()));
    }
    Ok(total / steps as f64)
}

/// Run (or resume) training. `store` and `state` are advanced in place; the
/// best-validation parameters are returned separately. `on_eval` fires after
/// every validation pass, in order.
#[allow(clippy::too_many_arguments)]
pub fn train(
    store: &mut ParamStore,
    state: &mut TrainState,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &ActionVocab,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    mut on_eval: impl FnMut(&EvalPoint),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Data("empty training set".into()));
    }
    if train_set.iter().chain(val_set).any(|s| s.steps.is_empty()) {
        return Err(TrainError::Data("sample with no steps".into()));
    }
    let subset_idx = eval_subset_indices(cfg, val_set.len());
    let subset: Vec<&TrainingSample> = subset_idx.iter().map(|&i| &val_set[i]).collect();

    let mut best_params = store.clone();
    let mut best_seen = state.schedule.best;
    let mut history = Vec::new();
    let mut window_nll = 0.0;
    let mut window_steps = 0usize;

    'epochs: loop {
        if state.schedule.stopped {
            break;
        }
        if let Some(cap) = cfg.max_epochs {
            if state.epoch >= cap {
                break;
            }
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, state.epoch));

        while state.cursor < order.len() {
            if let Some(cap) = cfg.max_optimizer_steps {
                if store.adam_steps() >= cap {
                    break 'epochs;
                }
            }
            let end = (state.cursor + cfg.batch_size).min(order.len());
            let batch = &order[state.cursor..end];

            // Accumulate per-sample gradients; the batch gradient is their
            // mean, so batch size only changes update cadence, not scale.
            let mut accum: BTreeMap<String, Tensor> = BTreeMap::new();
            for &sample_idx in batch {
                let sample = &train_set[sample_idx];
                let tape = Tape::new();
                let params = bind_params(&tape, store, true);
                let nll = sequence_nll(&tape, &params, model_cfg, vocab, sample)?;
                let value = tape.value(nll).item();
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        sample_id: sample.id.clone(),
                        step: store.adam_steps() + 1,
                    });
                }
                window_nll += value;
                window_steps += sample.steps.len();
                let grads = tape.backward(nll)?;
                for (name, grad) in grads.named() {
                    match accum.get_mut(name) {
                        Some(acc) => acc.add_scaled(grad, 1.0)?,
                        None => {
                            accum.insert(name.clone(), grad.clone());
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut mean: BTreeMap<String, Tensor> = BTreeMap::new();
            for (name, sum) in accum {
                let mut m = Tensor::zeros(sum.rows(), sum.cols());
                m.add_scaled(&sum, scale)?;
                mean.insert(name, m);
            }
            let lr = state.schedule.lr_for_step(store.adam_steps() + 1);
            store.adam_step(&mean, lr)?;
            state.cursor = end;
            state.samples_seen += batch.len() as u64;

            if state.samples_seen / cfg.eval_every_samples
                > (state.samples_seen - batch.len() as u64) / cfg.eval_every_samples
            {
                let val = evaluate_nll(store, model_cfg, vocab, &subset)?;
                let event = state.schedule.observe(val);
                if best_seen.is_none_or(|b| val < b) {
                    best_seen = Some(val);
                    best_params = store.clone();
                }
                let point = EvalPoint {
                    optimizer_steps: store.adam_steps(),
                    samples_seen: state.samples_seen,
                    lr,
                    train_nll_per_step: if window_steps == 0 {
                        f64::NAN
                    } else {
                        window_nll / window_steps as f64
                    },
                    val_nll_per_step: val,
                    event,
                };
                window_nll = 0.0;
                window_steps = 0;
                on_eval(&point);
                history.push(point);
                if state.schedule.stopped {
                    break 'epochs;
                }
            }
        }
        state.cursor = 0;
        state.epoch += 1;
    }
    let stopped_by_schedule = state.schedule.stopped;
    Ok(TrainOutcome { best_params, history, stopped_by_schedule })
}
