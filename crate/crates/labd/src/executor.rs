//! Single-threaded FIFO executor that owns the lab.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use serde_json::Value;
use tokio::sync::oneshot;

use crate::api::{ApiError, ApiRequest, ApiResponse};
use crate::lab::Lab;
use crate::stream::StreamHub;

struct Job {
    ticket: u64,
    req: ApiRequest,
    reply: oneshot::Sender<ApiResponse>,
}

struct Queue {
    next_ticket: u64,
    tx: Option<mpsc::Sender<Job>>,
}

/// Requests run one at a time in ticket order. State reads use the snapshot
/// published after each job and never wait on the queue.
pub struct Executor {
    queue: Mutex<Queue>,
    snapshot: Arc<RwLock<Value>>,
    hub: StreamHub,
    output_dir: PathBuf,
    thread: Mutex<Option<JoinHandle<Lab>>>,
}

impl Executor {
    pub fn start(mut lab: Lab) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let snapshot = Arc::new(RwLock::new(lab.snapshot()));
        let hub = lab.hub().clone();
        let output_dir = lab.output_dir().to_path_buf();
        let published = snapshot.clone();
        let thread = std::thread::Builder::new()
            .name("lab-executor".into())
            .spawn(move || {
                for job in rx {
                    let Job { ticket, req, reply } = job;
                    let mut reply = Some(reply);
                    let mut ack = |mut r: ApiResponse| {
                        r.ticket = Some(ticket);
                        if let Some(tx) = reply.take() {
                            let _ = tx.send(r);
                        }
                    };
                    let outcome = catch_unwind(AssertUnwindSafe(|| lab.handle(&req, &mut ack)));
                    let mut resp = outcome
                        .unwrap_or_else(|_| ApiResponse::err(req.id, ApiError::internal("request handler panicked")));
                    resp.ticket = Some(ticket);
                    // publish before replying so a client reads its own write
                    let mut snap = lab.snapshot();
                    snap["last_ticket"] = Value::from(ticket);
                    *published.write().expect("snapshot lock poisoned") = snap;
                    if let Some(tx) = reply.take() {
                        let _ = tx.send(resp);
                    }
                }
                lab
            })
            .expect("spawn executor thread");
        Self {
            queue: Mutex::new(Queue { next_ticket: 0, tx: Some(tx) }),
            snapshot,
            hub,
            output_dir,
            thread: Mutex::new(Some(thread)),
        }
    }

    /// Enqueues a request; returns its ticket and the reply channel.
    pub fn submit(&self, req: ApiRequest) -> (u64, oneshot::Receiver<ApiResponse>) {
        let (tx, rx) = oneshot::channel();
        let mut q = self.queue.lock().expect("queue lock poisoned");
        let ticket = q.next_ticket;
        q.next_ticket += 1;
        let id = req.id;
        let job = Job { ticket, req, reply: tx };
        match q.tx.as_ref() {
            Some(sender) => {
                if let Err(mpsc::SendError(job)) = sender.send(job) {
                    let mut r = ApiResponse::err(id, ApiError::internal("executor stopped"));
                    r.ticket = Some(ticket);
                    let _ = job.reply.send(r);
                }
            }
            None => {
                let mut r = ApiResponse::err(id, ApiError::internal("executor stopped"));
                r.ticket = Some(ticket);
                let _ = job.reply.send(r);
            }
        }
        (ticket, rx)
    }

    pub async fn call(&self, req: ApiRequest) -> ApiResponse {
        let id = req.id;
        let (_, rx) = self.submit(req);
        rx.await.unwrap_or_else(|_| ApiResponse::err(id, ApiError::internal("executor dropped the request")))
    }

    /// Blocking variant for callers outside an async runtime.
    pub fn call_blocking(&self, req: ApiRequest) -> ApiResponse {
        let id = req.id;
        let (_, rx) = self.submit(req);
        rx.blocking_recv().unwrap_or_else(|_| ApiResponse::err(id, ApiError::internal("executor dropped the request")))
    }

    pub fn snapshot(&self) -> Value {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    pub fn hub(&self) -> &StreamHub {
        &self.hub
    }

    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    /// Drains the queue and returns the lab.
    pub fn shutdown(&self) -> Option<Lab> {
        self.queue.lock().expect("queue lock poisoned").tx = None;
        let handle = self.thread.lock().expect("thread lock poisoned").take()?;
        handle.join().ok()
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        self.shutdown();
    }
}
