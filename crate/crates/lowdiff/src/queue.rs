//! Bounded FIFO handing gradients from the training thread to the
//! checkpointing thread.
//!
//! Enqueue transfers ownership of the payload (no copy) and blocks while the
//! queue is at capacity; dequeue blocks while it is empty and returns `None`
//! once the queue is closed and drained. The capacity bound is what models a
//! bounded accelerator-memory footprint for gradients awaiting persistence,
//! so the queue tracks residency high-water marks.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

use crate::compress::SparseGradient;
use crate::error::{Error, Result};
use crate::model::LayerGradient;

/// Payload that can ride the queue.
pub trait QueueItem {
    /// Iteration the item belongs to; enqueue order must be non-decreasing.
    fn iteration(&self) -> u64;
    /// Nominal resident bytes while queued.
    fn payload_bytes(&self) -> usize;
}

impl QueueItem for SparseGradient {
    fn iteration(&self) -> u64 {
        self.iteration
    }
    fn payload_bytes(&self) -> usize {
        SparseGradient::payload_bytes(self)
    }
}

impl QueueItem for LayerGradient {
    fn iteration(&self) -> u64 {
        self.iteration
    }
    fn payload_bytes(&self) -> usize {
        self.values.len() * 8
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    /// Most items resident at once.
    pub max_resident: usize,
    /// Largest total payload bytes resident at once.
    pub max_resident_bytes: usize,
    /// Largest single item seen.
    pub max_item_bytes: usize,
    pub total_enqueued: u64,
}

struct Inner<T> {
    items: VecDeque<T>,
    resident_bytes: usize,
    closed: bool,
    last_iteration: Option<u64>,
    stats: QueueStats,
}

/// Bounded single-producer single-consumer FIFO with close semantics.
pub struct ReuseQueue<T: QueueItem> {
    inner: Mutex<Inner<T>>,
    not_full: Condvar,
    not_empty: Condvar,
    capacity: usize,
}

impl<T: QueueItem> ReuseQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "queue capacity must be at least 1");
        Self {
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                resident_bytes: 0,
                closed: false,
                last_iteration: None,
                stats: QueueStats::default(),
            }),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hand an item to the consumer; blocks while the queue is full.
    /// Fails once the queue has been closed.
    pub fn enqueue(&self, item: T) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        while inner.items.len() >= self.capacity && !inner.closed {
            inner = self.not_full.wait(inner).unwrap();
        }
        if inner.closed {
            return Err(Error::Pipeline("enqueue on closed queue".into()));
        }
        if let Some(last) = inner.last_iteration {
            if item.iteration() < last {
                return Err(Error::Pipeline(format!(
                    "out-of-order enqueue: iteration {} after {}",
                    item.iteration(),
                    last
                )));
            }
        }
        inner.last_iteration = Some(item.iteration());
        let bytes = item.payload_bytes();
        inner.resident_bytes += bytes;
        inner.items.push_back(item);
        inner.stats.total_enqueued += 1;
        inner.stats.max_resident = inner.stats.max_resident.max(inner.items.len());
        inner.stats.max_resident_bytes = inner.stats.max_resident_bytes.max(inner.resident_bytes);
        inner.stats.max_item_bytes = inner.stats.max_item_bytes.max(bytes);
        drop(inner);
        self.not_empty.notify_one();
        Ok(())
    }

    /// Take the oldest item; blocks while empty. `None` means closed and
    /// fully drained.
    pub fn dequeue(&self) -> Option<T> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if let Some(item) = inner.items.pop_front() {
                inner.resident_bytes -= item.payload_bytes();
                drop(inner);
                self.not_full.notify_one();
                return Some(item);
            }
            if inner.closed {
                return None;
            }
            inner = self.not_empty.wait(inner).unwrap();
        }
    }

    /// Signal shutdown: pending items stay dequeuable, further enqueues fail,
    /// and blocked threads wake.
    pub fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.not_full.notify_all();
        self.not_empty.notify_all();
    }

    pub fn stats(&self) -> QueueStats {
        self.inner.lock().unwrap().stats
    }
}
