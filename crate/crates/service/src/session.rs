//! A training run that pauses at every feedback phase for a human.

use std::collections::BTreeMap;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use fbmarl::config::RunConfig;
use fbmarl::feedback::{FeedbackProvider, Utterance};
use fbmarl::orchestrate::{config_document, feedback_components, DirObserver};
use fbmarl::pool::RewardPool;
use fbmarl::rollout::{serialize_replay, ReplayMeta, Trajectory};
use fbmarl::run::{run_feedback_loop, FeedbackStack, PhaseRecord, RunObserver, RunReport};
use fbmarl::train::IterationMetrics;
use serde::Serialize;
use tokio::sync::oneshot;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionState {
    Training { generation: u32 },
    AwaitingFeedback { generation: u32, replays: usize },
    Done,
    Failed { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Submit,
    Skip,
}

pub(crate) enum Command {
    Feedback { generation: u32, text: Option<String>, reply: oneshot::Sender<PhaseRecord> },
}

#[derive(Debug)]
pub(crate) struct Shared {
    pub state: SessionState,
    pub latest: Option<IterationMetrics>,
    pub weights: Vec<Vec<f64>>,
    pub phases: Vec<PhaseRecord>,
    pub replays: BTreeMap<u32, String>,
    pub report: Option<RunReport>,
    /// Phase whose answer is in flight.
    pub answered: Option<u32>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Refusal {
    WrongState,
    WrongGeneration,
    Duplicate,
}

pub struct Session {
    pub id: String,
    pub seed: u64,
    shared: Arc<Mutex<Shared>>,
    tx: Mutex<mpsc::Sender<Command>>,
}

fn lock(m: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Session {
    /// Start training in the background. Artifacts go to
    /// `<output_dir>/sessions/<id>/`.
    pub fn start(id: String, cfg: Arc<RunConfig>, source: Option<Arc<str>>, seed: u64) -> Arc<Session> {
        let shared = Arc::new(Mutex::new(Shared {
            state: SessionState::Training { generation: 0 },
            latest: None,
            weights: Vec::new(),
            phases: Vec::new(),
            replays: BTreeMap::new(),
            report: None,
            answered: None,
        }));
        let (tx, rx) = mpsc::channel();
        let session = Arc::new(Session { id: id.clone(), seed, shared: Arc::clone(&shared), tx: Mutex::new(tx) });
        let timeout = Duration::from_secs(cfg.feedback.phase_timeout_secs);
        thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || {
                let result = train(&id, &cfg, source.as_deref(), seed, Arc::clone(&shared), rx, timeout);
                let mut s = lock(&shared);
                match result {
                    Ok(report) => {
                        s.report = Some(report);
                        s.state = SessionState::Done;
                    }
                    Err(message) => {
                        log::error!("session {id} failed: {message}");
                        s.state = SessionState::Failed { message };
                    }
                }
            })
            .expect("spawn session thread");
        session
    }

    pub fn state(&self) -> SessionState {
        lock(&self.shared).state.clone()
    }

    pub(crate) fn with<R>(&self, f: impl FnOnce(&Shared) -> R) -> R {
        f(&lock(&self.shared))
    }

    pub fn replay(&self, generation: u32) -> Option<String> {
        lock(&self.shared).replays.get(&generation).cloned()
    }

    /// Queue the answer to phase `generation`. The receiver yields the
    /// phase record once the pools are updated.
    pub fn answer(
        &self,
        generation: u32,
        answer: Answer,
        text: String,
    ) -> Result<oneshot::Receiver<PhaseRecord>, Refusal> {
        let mut s = lock(&self.shared);
        let SessionState::AwaitingFeedback { generation: k, .. } = s.state else {
            return Err(Refusal::WrongState);
        };
        if k != generation {
            return Err(Refusal::WrongGeneration);
        }
        if s.answered == Some(k) {
            return Err(Refusal::Duplicate);
        }
        s.answered = Some(k);
        let (reply, rx) = oneshot::channel();
        let text = (answer == Answer::Submit).then_some(text);
        let tx = self.tx.lock().unwrap_or_else(|p| p.into_inner());
        if tx.send(Command::Feedback { generation, text, reply }).is_err() {
            s.answered = None;
            return Err(Refusal::WrongState);
        }
        Ok(rx)
    }
}

fn train(
    id: &str,
    cfg: &RunConfig,
    source: Option<&str>,
    seed: u64,
    shared: Arc<Mutex<Shared>>,
    rx: mpsc::Receiver<Command>,
    timeout: Duration,
) -> Result<RunReport, String> {
    let env = cfg.env_spec();
    let (parser, generator) = feedback_components(cfg).map_err(|e| e.to_string())?;
    let dir = cfg.output_dir.join("sessions").join(id);
    let disk = DirObserver::create(&dir, &env).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut observer = SessionObserver { shared: Arc::clone(&shared), disk: Some(disk), meta: (Arc::clone(&env.layout), env.recipe) };
    let mut provider = HumanProvider { shared, rx, timeout, reply: None };
    let mut out = run_feedback_loop(
        &cfg.learner,
        &env,
        &cfg.settings,
        FeedbackStack { provider: &mut provider, parser: parser.as_ref(), generator: &generator },
        seed,
        &mut observer,
    );
    out.report.config = config_document(cfg, source);
    if let Some(disk) = observer.disk.take() {
        disk.finish(&out.report).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    Ok(out.report)
}

struct SessionObserver {
    shared: Arc<Mutex<Shared>>,
    disk: Option<DirObserver>,
    meta: (Arc<fbmarl::env::Layout>, fbmarl::env::Recipe),
}

impl RunObserver for SessionObserver {
    fn iteration(&mut self, m: &IterationMetrics) {
        if let Some(d) = self.disk.as_mut() {
            d.iteration(m);
        }
        let mut s = lock(&self.shared);
        s.state = SessionState::Training { generation: m.generation };
        s.latest = Some(m.clone());
        s.weights = m.weights.clone();
    }

    fn rollouts(&mut self, generation: u32, trajs: &[Trajectory]) {
        if let Some(d) = self.disk.as_mut() {
            d.rollouts(generation, trajs);
        }
        let doc = serialize_replay(&ReplayMeta::new(generation, &self.meta.0, self.meta.1), trajs);
        lock(&self.shared).replays.insert(generation, doc);
    }

    fn phase(&mut self, record: &PhaseRecord, pools: &[RewardPool]) {
        if let Some(d) = self.disk.as_mut() {
            d.phase(record, pools);
        }
    }
}

/// Blocks the training thread at each phase until an answer or the timeout.
struct HumanProvider {
    shared: Arc<Mutex<Shared>>,
    rx: mpsc::Receiver<Command>,
    timeout: Duration,
    reply: Option<oneshot::Sender<PhaseRecord>>,
}

impl HumanProvider {
    fn take(&mut self, cmd: Command, generation: u32) -> Option<Utterance> {
        let Command::Feedback { generation: k, text, reply } = cmd;
        debug_assert_eq!(k, generation);
        self.reply = Some(reply);
        text.map(|t| Utterance::human(t, generation))
    }
}

impl FeedbackProvider for HumanProvider {
    fn provide(&mut self, rollouts: &[Trajectory], generation: u32) -> Option<Utterance> {
        lock(&self.shared).state = SessionState::AwaitingFeedback { generation, replays: rollouts.len() };
        let got = match self.rx.recv_timeout(self.timeout) {
            Ok(cmd) => Some(cmd),
            Err(RecvTimeoutError::Disconnected) => None,
            Err(RecvTimeoutError::Timeout) => {
                let mut s = lock(&self.shared);
                if s.answered == Some(generation) {
                    // An answer was accepted just as the timer fired.
                    drop(s);
                    self.rx.recv().ok()
                } else {
                    log::warn!("phase {generation} timed out after {:?}; skipping", self.timeout);
                    s.answered = Some(generation);
                    None
                }
            }
        };
        let u = got.and_then(|cmd| self.take(cmd, generation));
        lock(&self.shared).state = SessionState::Training { generation: generation + 1 };
        u
    }

    fn phase_complete(&mut self, record: &PhaseRecord, _pools: &[RewardPool]) {
        {
            let mut s = lock(&self.shared);
            s.phases.push(record.clone());
            s.weights = record.weights.clone();
        }
        if let Some(tx) = self.reply.take() {
            let _ = tx.send(record.clone());
        }
    }
}
