//! Single-slot, latest-wins handoff between an I/O thread and a tick loop.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

#[derive(Debug)]
pub struct Mailbox<T> {
    slot: Mutex<Option<T>>,
    superseded: AtomicU64,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self {
            slot: Mutex::new(None),
            superseded: AtomicU64::new(0),
        }
    }
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `value`, dropping any unread one.
    pub fn put(&self, value: T) {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        if slot.replace(value).is_some() {
            self.superseded.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Stores `value` only if `keep` says the unread one may be replaced.
    /// Used for commands, where a pending grasp request must not be lost.
    pub fn put_unless(&self, value: T, keep: impl Fn(&T) -> bool) {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        match slot.as_ref() {
            Some(old) if keep(old) => {}
            _ => {
                if slot.replace(value).is_some() {
                    self.superseded.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }

    pub fn take(&self) -> Option<T> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).take()
    }

    /// Values overwritten before anyone read them.
    pub fn superseded(&self) -> u64 {
        self.superseded.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latest_wins() {
        let m = Mailbox::new();
        assert_eq!(m.take(), None::<u32>);
        m.put(1);
        m.put(2);
        m.put(3);
        assert_eq!(m.take(), Some(3));
        assert_eq!(m.take(), None);
        assert_eq!(m.superseded(), 2);
    }

    #[test]
    fn sticky_values_survive() {
        let m = Mailbox::new();
        m.put((1, true));
        m.put_unless((2, false), |v| v.1);
        assert_eq!(m.take(), Some((1, true)));
        m.put((3, false));
        m.put_unless((4, false), |v| v.1);
        assert_eq!(m.take(), Some((4, false)));
    }

    #[test]
    fn across_threads() {
        let m = std::sync::Arc::new(Mailbox::new());
        let w = {
            let m = m.clone();
            std::thread::spawn(move || {
                for i in 0..1000u32 {
                    m.put(i);
                }
            })
        };
        w.join().unwrap();
        assert_eq!(m.take(), Some(999));
        assert_eq!(m.superseded(), 999);
    }
}
