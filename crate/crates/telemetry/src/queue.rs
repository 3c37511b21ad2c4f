use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Bounded multi-producer queue that evicts the oldest entry when full, so a
/// slow consumer never blocks the producer.
#[derive(Debug)]
pub struct DropOldestQueue<T> {
    capacity: usize,
    items: Mutex<VecDeque<T>>,
    ready: Condvar,
    dropped: AtomicU64,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self { capacity, items: Mutex::new(VecDeque::with_capacity(capacity)), ready: Condvar::new(), dropped: AtomicU64::new(0) }
    }

    pub fn push(&self, item: T) {
        let mut q = self.items.lock().expect("queue lock poisoned");
        if q.len() == self.capacity {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(item);
        self.ready.notify_one();
    }

    pub fn try_pop(&self) -> Option<T> {
        self.items.lock().expect("queue lock poisoned").pop_front()
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let q = self.items.lock().expect("queue lock poisoned");
        let (mut q, _) = self.ready.wait_timeout_while(q, timeout, |q| q.is_empty()).expect("queue lock poisoned");
        q.pop_front()
    }

    pub fn drain(&self) -> Vec<T> {
        self.items.lock().expect("queue lock poisoned").drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.items.lock().expect("queue lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}
