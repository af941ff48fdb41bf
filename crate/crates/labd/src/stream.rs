//! Per-run progress streams. Every message is kept, so a subscriber that
//! arrives late replays from `seq = 0` and never sees a gap.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde_json::Value;
use tokio::sync::watch;

use crate::api::{StreamEvent, StreamMessage};

const RETAINED_RUNS: usize = 256;

#[derive(Default)]
struct RunStream {
    messages: Vec<StreamMessage>,
    done: bool,
}

#[derive(Default)]
struct Inner {
    runs: BTreeMap<u64, RunStream>,
    order: VecDeque<u64>,
}

#[derive(Clone)]
pub struct StreamHub {
    inner: Arc<Mutex<Inner>>,
    version: Arc<watch::Sender<u64>>,
}

impl Default for StreamHub {
    fn default() -> Self {
        Self::new()
    }
}

impl StreamHub {
    pub fn new() -> Self {
        Self { inner: Arc::default(), version: Arc::new(watch::channel(0).0) }
    }

    pub fn open(&self, run_id: u64) {
        let mut g = self.inner.lock().expect("stream hub poisoned");
        g.runs.insert(run_id, RunStream::default());
        g.order.push_back(run_id);
        while g.order.len() > RETAINED_RUNS {
            if let Some(old) = g.order.pop_front() {
                g.runs.remove(&old);
            }
        }
    }

    /// Appends a message; `Done` and `Error` close the stream.
    pub fn push(&self, run_id: u64, event: StreamEvent, data: Value) {
        {
            let mut g = self.inner.lock().expect("stream hub poisoned");
            let Some(s) = g.runs.get_mut(&run_id) else { return };
            if s.done {
                return;
            }
            let seq = s.messages.len() as u64;
            s.messages.push(StreamMessage { run_id, seq, event, data });
            s.done = event != StreamEvent::Point;
        }
        self.version.send_modify(|v| *v += 1);
    }

    pub fn contains(&self, run_id: u64) -> bool {
        self.inner.lock().expect("stream hub poisoned").runs.contains_key(&run_id)
    }

    /// Messages from `from` onward and whether the stream is closed.
    pub fn read(&self, run_id: u64, from: usize) -> Option<(Vec<StreamMessage>, bool)> {
        let g = self.inner.lock().expect("stream hub poisoned");
        let s = g.runs.get(&run_id)?;
        Some((s.messages.get(from..).unwrap_or_default().to_vec(), s.done))
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.version.subscribe()
    }

    /// Collects the whole stream, waiting for it to close.
    pub async fn collect(&self, run_id: u64) -> Option<Vec<StreamMessage>> {
        let mut rx = self.subscribe();
        let mut out = Vec::new();
        loop {
            rx.borrow_and_update();
            let (msgs, done) = self.read(run_id, out.len())?;
            out.extend(msgs);
            if done {
                return Some(out);
            }
            if rx.changed().await.is_err() {
                return Some(out);
            }
        }
    }
}
