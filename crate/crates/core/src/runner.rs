//! Resumable batch execution of one model configuration over a question set.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use tracing::info;

use crate::dataset::{PredictionRecord, VideoQuestion};
use crate::ensemble::ModelConfig;
use crate::qa::{run_pipeline, PipelineDeps};
use crate::store::{ResultsStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("worker limit must be at least 1")]
    Workers,
}

/// Worker count and cancellation for a batch run.
#[derive(Debug, Clone)]
pub struct RunControl {
    pub workers: usize,
    cancel: Arc<AtomicBool>,
    /// Cancel after this many newly computed records (a simulated interruption).
    pub stop_after: Option<usize>,
    /// Recompute persisted records whose status is unanswered.
    pub redo_unanswered: bool,
}

impl Default for RunControl {
    fn default() -> Self {
        RunControl::new(1)
    }
}

impl RunControl {
    pub fn new(workers: usize) -> Self {
        RunControl { workers, cancel: Arc::new(AtomicBool::new(false)), stop_after: None, redo_unanswered: false }
    }

    pub fn stop_after(mut self, n: usize) -> Self {
        self.stop_after = Some(n);
        self
    }

    /// Shared flag; setting it stops new questions from starting.
    pub fn cancel_flag(&self) -> Arc<AtomicBool> {
        self.cancel.clone()
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    /// Records available after the run, in question order. Questions not
    /// reached before cancellation are absent.
    pub records: Vec<PredictionRecord>,
    pub computed: usize,
    pub reused: usize,
    pub cancelled: bool,
}

/// Runs `config` over `questions`, reusing persisted records and persisting
/// each new one as soon as it completes.
pub fn run_model(
    questions: &[VideoQuestion],
    config: &ModelConfig,
    deps: &PipelineDeps,
    store: &ResultsStore,
    control: &RunControl,
) -> Result<RunSummary, RunError> {
    config.validate().map_err(RunError::Config)?;
    if control.workers == 0 {
        return Err(RunError::Workers);
    }
    let next = AtomicUsize::new(0);
    let computed = AtomicUsize::new(0);
    let reused = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<PredictionRecord>>> = questions.iter().map(|_| Mutex::new(None)).collect();
    let first_error: Mutex<Option<RunError>> = Mutex::new(None);

    let worker = || loop {
        if control.is_cancelled() || first_error.lock().unwrap().is_some() {
            return;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(q) = questions.get(i) else { return };
        let existing = match store.load(&config.model_id, &q.question_id) {
            Ok(r) => r,
            Err(e) => {
                first_error.lock().unwrap().get_or_insert(e.into());
                return;
            }
        };
        let existing = existing.filter(|r| !(control.redo_unanswered && !r.is_answered()));
        let record = match existing {
            Some(mut r) => {
                r.score(q.ground_truth);
                reused.fetch_add(1, Ordering::SeqCst);
                r
            }
            None => {
                let r = run_pipeline(q, config, deps);
                if let Err(e) = store.save(&r) {
                    first_error.lock().unwrap().get_or_insert(e.into());
                    return;
                }
                let done = computed.fetch_add(1, Ordering::SeqCst) + 1;
                info!(model = %config.model_id, question = %q.question_id, choice = ?r.choice, done, "prediction stored");
                if control.stop_after.is_some_and(|k| done >= k) {
                    control.cancel();
                }
                r
            }
        };
        *slots[i].lock().unwrap() = Some(record);
    };

    let workers = control.workers.min(questions.len().max(1));
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });
    }
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let records: Vec<PredictionRecord> = slots.into_iter().filter_map(|m| m.into_inner().unwrap()).collect();
    Ok(RunSummary {
        cancelled: records.len() < questions.len(),
        records,
        computed: computed.into_inner(),
        reused: reused.into_inner(),
    })
}
