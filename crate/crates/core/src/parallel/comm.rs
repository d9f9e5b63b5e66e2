//! Message fabric between workers with exact per-sender counters.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};
use std::sync::Mutex;

use serde::Serialize;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::skeletonization::BlockKey;

/// Data moved between workers.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload<T> {
    /// Active index list of one box.
    Active {
        level: u32,
        box_index: usize,
        list: Vec<usize>,
    },
    /// One interaction block keyed by row-major box indices.
    Block {
        level: u32,
        key: BlockKey,
        block: Matrix<T>,
    },
}

impl<T: Scalar> Payload<T> {
    /// Real scalars carried; an index counts as one word.
    pub fn words(&self) -> usize {
        match self {
            Payload::Active { list, .. } => list.len(),
            Payload::Block { block, .. } => block.len() * T::WORDS,
        }
    }

    pub fn level(&self) -> u32 {
        match self {
            Payload::Active { level, .. } | Payload::Block { level, .. } => *level,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope<T> {
    pub from: usize,
    pub payload: Payload<T>,
}

/// Point-to-point delivery. `drain` returns everything delivered to
/// `worker` so far, in arrival order.
pub trait Transport<T>: Send + Sync {
    fn workers(&self) -> usize;
    fn deliver(&self, to: usize, env: Envelope<T>) -> Result<()>;
    fn drain(&self, worker: usize) -> Result<Vec<Envelope<T>>>;
}

/// In-process transport over one mpsc channel per worker.
pub struct ChannelTransport<T> {
    senders: Vec<Mutex<Sender<Envelope<T>>>>,
    receivers: Vec<Mutex<Receiver<Envelope<T>>>>,
}

impl<T> ChannelTransport<T> {
    pub fn new(workers: usize) -> Self {
        let (senders, receivers) = (0..workers)
            .map(|_| {
                let (s, r) = channel();
                (Mutex::new(s), Mutex::new(r))
            })
            .unzip();
        Self { senders, receivers }
    }
}

fn failure(worker: usize, reason: impl Into<String>) -> Error {
    Error::Transport {
        worker,
        reason: reason.into(),
    }
}

impl<T: Send> Transport<T> for ChannelTransport<T> {
    fn workers(&self) -> usize {
        self.senders.len()
    }

    fn deliver(&self, to: usize, env: Envelope<T>) -> Result<()> {
        let from = env.from;
        let s = self
            .senders
            .get(to)
            .ok_or_else(|| failure(from, format!("no worker {to}")))?;
        s.lock()
            .map_err(|_| failure(from, "sender lock poisoned"))?
            .send(env)
            .map_err(|_| failure(from, format!("channel to worker {to} closed")))
    }

    fn drain(&self, worker: usize) -> Result<Vec<Envelope<T>>> {
        let r = self
            .receivers
            .get(worker)
            .ok_or_else(|| failure(worker, "no such worker"))?
            .lock()
            .map_err(|_| failure(worker, "receiver lock poisoned"))?;
        let mut out = Vec::new();
        loop {
            match r.try_recv() {
                Ok(env) => out.push(env),
                Err(TryRecvError::Empty) => return Ok(out),
                Err(TryRecvError::Disconnected) => return Err(failure(worker, "channel disconnected")),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WorkerCounters {
    pub messages: usize,
    pub words: usize,
}

/// Transport plus per-worker send counters.
pub struct Communicator<T> {
    transport: Box<dyn Transport<T>>,
    messages: Vec<AtomicUsize>,
    words: Vec<AtomicUsize>,
}

impl<T: Scalar> Communicator<T> {
    /// Channel fabric for `workers` workers.
    pub fn channels(workers: usize) -> Self {
        Self::with_transport(Box::new(ChannelTransport::new(workers)))
    }

    pub fn with_transport(transport: Box<dyn Transport<T>>) -> Self {
        let n = transport.workers();
        Self {
            transport,
            messages: (0..n).map(|_| AtomicUsize::new(0)).collect(),
            words: (0..n).map(|_| AtomicUsize::new(0)).collect(),
        }
    }

    pub fn workers(&self) -> usize {
        self.messages.len()
    }

    /// Sends one payload and charges it to `from`.
    pub fn send(&self, from: usize, to: usize, payload: Payload<T>) -> Result<()> {
        if from >= self.workers() {
            return Err(failure(from, "sender outside the fabric"));
        }
        let words = payload.words();
        self.transport.deliver(to, Envelope { from, payload })?;
        self.messages[from].fetch_add(1, Ordering::Relaxed);
        self.words[from].fetch_add(words, Ordering::Relaxed);
        Ok(())
    }

    pub fn drain(&self, worker: usize) -> Result<Vec<Envelope<T>>> {
        self.transport.drain(worker)
    }

    pub fn counters(&self) -> BTreeMap<usize, WorkerCounters> {
        (0..self.workers())
            .map(|w| {
                (
                    w,
                    WorkerCounters {
                        messages: self.messages[w].load(Ordering::Relaxed),
                        words: self.words[w].load(Ordering::Relaxed),
                    },
                )
            })
            .collect()
    }

    pub fn total(&self) -> WorkerCounters {
        self.counters()
            .values()
            .fold(WorkerCounters::default(), |a, c| WorkerCounters {
                messages: a.messages + c.messages,
                words: a.words + c.words,
            })
    }

    /// `{worker_id: {messages, words}}`.
    pub fn counters_json(&self) -> String {
        serde_json::to_string_pretty(&self.counters()).expect("counters serialize")
    }

    pub fn reset(&self) {
        for c in self.messages.iter().chain(&self.words) {
            c.store(0, Ordering::Relaxed);
        }
    }
}
