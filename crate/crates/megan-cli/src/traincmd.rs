//! The train command: teacher-forced optimization from a preprocessed
//! archive into a checkpoint bundle.
//!
//! The bundle directory is self-describing — parameters, optimizer state,
//! model config, vocabulary, feature config and the run config all live
//! beside each other — so `predict` needs nothing but the directory. A
//! create-new lock file keeps two trainers from interleaving writes into
//! one bundle; it is removed on exit, including on failure.
//!
//! Resuming is automatic: when the bundle already holds parameters and a
//! training state, the run continues from them instead of reinitializing.
//! Checkpoints are written when the command finishes (schedule stop or an
//! epoch/step cap), so long runs are driven as repeated capped invocations,
//! each extending the same bundle.

use std::io::ErrorKind;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use megan_chem::{ActionVocab, FeatureConfig};
use megan_model::{
    train, ModelError, ScheduleEvent, TrainError, TrainOutcome, TrainState, TrainingSample,
};
use megan_tensor::{ParamStore, TensorError};

use crate::archive::{to_training_samples, Archive};
use crate::fail::{Classify, Failure};
use crate::records::Split;
use crate::runcfg::RunConfig;

/// Removes the lock file when training ends, however it ends.
struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn acquire_lock(out_dir: &Path) -> Result<LockGuard, Failure> {
    let path = out_dir.join("lock");
    match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
        Ok(_) => Ok(LockGuard { path }),
        Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Failure::Data(anyhow!(
            "lock file {} exists: another process is writing this checkpoint \
             (delete the file if that process is gone)",
            path.display()
        ))),
        Err(e) => Err(Failure::Data(
            anyhow::Error::from(e).context(format!("creating lock in {}", out_dir.display())),
        )),
    }
}

fn event_str(event: ScheduleEvent) -> &'static str {
    match event {
        ScheduleEvent::Improved => "improved",
        ScheduleEvent::Stagnant => "stagnant",
        ScheduleEvent::Decayed => "decayed",
        ScheduleEvent::Stopped => "stopped",
    }
}

/// Non-finite numerics get exit code 3; broken inputs get 2; impossible
/// configurations get 1.
fn classify_train_error(e: TrainError) -> Failure {
    match &e {
        TrainError::Config(_) => Failure::Usage(e.into()),
        TrainError::NonFiniteLoss { .. } => Failure::Numeric(e.into()),
        TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
        | TrainError::Tensor(TensorError::NonFinite { .. }) => Failure::Numeric(e.into()),
        _ => Failure::Data(e.into()),
    }
}

pub fn run(cfg: &RunConfig, archive_dir: &Path, out_dir: &Path) -> Result<(), Failure> {
    let hash = cfg.hash();
    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config();

    // ---- inputs from the preprocess stage ----
    let read = |name: &str| -> Result<String, Failure> {
        std::fs::read_to_string(archive_dir.join(name))
            .with_context(|| format!("reading {} from {}", name, archive_dir.display()))
            .or_data()
    };
    let vocab = ActionVocab::from_text(&read("vocab.txt")?).or_data()?;
    let feats = FeatureConfig::from_text(&read("features.txt")?).or_data()?;
    let archive = Archive::read_file(&archive_dir.join("samples.bin")).or_data()?;
    if archive.config_hash != hash {
        eprintln!(
            "warning: archive was built under config {} but this run uses {}; \
             preprocessing settings may not match",
            &archive.config_hash[..12.min(archive.config_hash.len())],
            &hash[..12]
        );
    }
    if archive.direction != cfg.direction {
        return Err(Failure::Data(anyhow!(
            "archive was preprocessed for {} but this run is {}",
            archive.direction.as_str(),
            cfg.direction.as_str()
        )));
    }
    let train_set: Vec<TrainingSample> =
        to_training_samples(&archive, &vocab, &feats, Split::Train).or_data()?;
    let val_set: Vec<TrainingSample> =
        to_training_samples(&archive, &vocab, &feats, Split::Valid).or_data()?;

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .or_usage()?;
    let _lock = acquire_lock(out_dir)?;

    // ---- fresh start or resume ----
    let params_path = out_dir.join("params.bin");
    let state_path = out_dir.join("train_state.txt");
    let resuming = params_path.exists() && state_path.exists();
    let (mut store, mut state) = if resuming {
        let bytes = std::fs::read(&params_path).context("reading params.bin").or_data()?;
        let store = ParamStore::from_bytes(&bytes).or_data()?;
        let text = std::fs::read_to_string(&state_path).context("reading train_state.txt").or_data()?;
        let state = TrainState::from_text(&text).or_data()?;
        println!(
            "train: resuming at optimizer step {}, epoch {}, {} samples seen",
            store.adam_steps(),
            state.epoch,
            state.samples_seen
        );
        (store, state)
    } else {
        let store = megan_model::init_params(&model_cfg, &vocab, &feats, cfg.seed)
            .map_err(|e| Failure::Usage(e.into()))?;
        println!(
            "train: initialized {} parameters ({} train / {} valid samples)",
            store.total_params(),
            train_set.len(),
            val_set.len()
        );
        (store, TrainState::new(&train_cfg))
    };

    // ---- the loop ----
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("train_log.txt"))
        .context("opening train_log.txt")
        .or_data()?;
    if !resuming {
        let _ = writeln!(log, "# megan-train-log v1");
        let _ = writeln!(log, "# config {hash}");
    }
    let on_eval = |point: &megan_model::EvalPoint| {
        let line = format!(
            "eval step={} samples={} lr={:.8} train_nll={:.6} val_nll={:.6} event={}",
            point.optimizer_steps,
            point.samples_seen,
            point.lr,
            point.train_nll_per_step,
            point.val_nll_per_step,
            event_str(point.event)
        );
        println!("{line}");
        let _ = writeln!(log, "{line}");
    };
    let outcome: TrainOutcome =
        train(&mut store, &mut state, &model_cfg, &train_cfg, &vocab, &train_set, &val_set, on_eval)
            .map_err(classify_train_error)?;

    // ---- the bundle ----
    let write = |name: &str, content: &str| -> Result<(), Failure> {
        std::fs::write(out_dir.join(name), content)
            .with_context(|| format!("writing {name}"))
            .or_data()
    };
    std::fs::write(&params_path, store.to_bytes()).context("writing params.bin").or_data()?;
    std::fs::write(out_dir.join("best.bin"), outcome.best_params.to_bytes())
        .context("writing best.bin")
        .or_data()?;
    write("train_state.txt", &state.to_text())?;
    write("model_config.txt", &model_cfg.to_text())?;
    write("vocab.txt", &vocab.to_text())?;
    write("features.txt", &feats.to_text())?;
    write("run_config.txt", &cfg.to_text())?;
    let manifest = format!(
        "# megan-checkpoint v1\n# config {hash}\nfiles best.bin features.txt model_config.txt \
         params.bin run_config.txt train_log.txt train_state.txt vocab.txt\noptimizer_steps {}\n\
         stopped_by_schedule {}\n",
        store.adam_steps(),
        outcome.stopped_by_schedule
    );
    write("manifest.txt", &manifest)?;

    let best = outcome.history.iter().map(|p| p.val_nll_per_step).fold(f64::INFINITY, f64::min);
    println!(
        "train: finished at optimizer step {} ({}); best val NLL {}",
        store.adam_steps(),
        if outcome.stopped_by_schedule { "schedule stop" } else { "cap reached" },
        if best.is_finite() { format!("{best:.6}") } else { "never evaluated".into() }
    );
    Ok(())
}
