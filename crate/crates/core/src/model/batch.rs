//! Lockstep batching of single-sample predictions across threads.
//!
//! Each worker thread holds a [`BatchClient`]. A request waits until every
//! live client has a request pending; the last one to arrive runs the whole
//! batch. Predictions do not depend on batch composition, so results are the
//! same as unbatched calls.

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use super::net::{ModelNet, Stack};
use crate::error::{Error, Result};
use crate::gridworld::{Action, Frame, NUM_ACTIONS};

type Prediction = (Frame, [f32; NUM_ACTIONS]);

/// Single-sample access to a transition network.
pub trait Predictor {
    fn predict(&self, stack: &Stack, action: Action) -> Result<Prediction>;
}

impl Predictor for ModelNet {
    fn predict(&self, stack: &Stack, action: Action) -> Result<Prediction> {
        ModelNet::predict(self, stack, action)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, stack: &Stack, action: Action) -> Result<Prediction> {
        (**self).predict(stack, action)
    }
}

impl<P: Predictor + ?Sized> Predictor for Arc<P> {
    fn predict(&self, stack: &Stack, action: Action) -> Result<Prediction> {
        (**self).predict(stack, action)
    }
}

#[derive(Default)]
struct Pending {
    clients: usize,
    requests: Vec<(u64, Stack, Action)>,
    done: HashMap<u64, std::result::Result<Prediction, String>>,
    next_id: u64,
    batches: u64,
}

pub struct BatchQueue {
    net: Arc<ModelNet>,
    pending: Mutex<Pending>,
    answered: Condvar,
}

impl BatchQueue {
    pub fn new(net: Arc<ModelNet>) -> Arc<BatchQueue> {
        Arc::new(BatchQueue { net, pending: Mutex::default(), answered: Condvar::new() })
    }

    pub fn client(self: &Arc<Self>) -> BatchClient {
        self.lock().clients += 1;
        BatchClient { queue: Arc::clone(self) }
    }

    /// Batches run so far.
    pub fn batches(&self) -> u64 {
        self.lock().batches
    }

    fn lock(&self) -> MutexGuard<'_, Pending> {
        self.pending.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn flush_if_full(&self, p: &mut Pending) {
        if p.requests.is_empty() || p.requests.len() < p.clients {
            return;
        }
        let requests = std::mem::take(&mut p.requests);
        let inputs: Vec<_> = requests.iter().map(|(_, s, a)| (s, *a)).collect();
        match self.net.predict_batch(&inputs) {
            Ok(out) => {
                for ((id, ..), r) in requests.iter().zip(out) {
                    p.done.insert(*id, Ok(r));
                }
            }
            Err(e) => {
                for (id, ..) in &requests {
                    p.done.insert(*id, Err(e.to_string()));
                }
            }
        }
        p.batches += 1;
        self.answered.notify_all();
    }
}

/// A worker's handle; dropping it stops the queue from waiting on it.
pub struct BatchClient {
    queue: Arc<BatchQueue>,
}

impl Predictor for BatchClient {
    fn predict(&self, stack: &Stack, action: Action) -> Result<Prediction> {
        let q = &self.queue;
        let mut p = q.lock();
        let id = p.next_id;
        p.next_id += 1;
        p.requests.push((id, stack.clone(), action));
        q.flush_if_full(&mut p);
        loop {
            if let Some(r) = p.done.remove(&id) {
                return r.map_err(Error::Model);
            }
            p = q.answered.wait(p).unwrap_or_else(|e| e.into_inner());
        }
    }
}

impl Drop for BatchClient {
    fn drop(&mut self) {
        let q = &self.queue;
        let mut p = q.lock();
        p.clients -= 1;
        q.flush_if_full(&mut p);
    }
}
