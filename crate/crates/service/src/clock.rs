use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use emtree_core::time::{Duration, Timestamp};

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;

    /// Called with the timestamp of every accepted record.
    fn observe(&self, _at: Timestamp) {}
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0);
        Timestamp::from_secs(secs)
    }
}

/// Time that only moves when told to, or when a newer record is seen.
#[derive(Clone, Debug, Default)]
pub struct VirtualClock(Arc<AtomicI64>);

impl VirtualClock {
    pub fn new(start: Timestamp) -> Self {
        VirtualClock(Arc::new(AtomicI64::new(start.secs())))
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t.secs(), Ordering::SeqCst);
    }

    pub fn advance(&self, d: Duration) {
        self.0.fetch_add(d.secs(), Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_secs(self.0.load(Ordering::SeqCst))
    }

    fn observe(&self, at: Timestamp) {
        self.0.fetch_max(at.secs(), Ordering::SeqCst);
    }
}
