//! Fixed-rate tick pacing and latency bookkeeping.

use std::collections::VecDeque;
use std::thread;
use std::time::{Duration, Instant};

pub const LOOP_HZ: u32 = 60;

/// Paces a loop at a fixed rate against absolute deadlines. A tick that
/// starts after its deadline has passed counts as an overrun; the schedule
/// then restarts from the current time instead of bursting to catch up.
#[derive(Debug)]
pub struct Ticker {
    period: Duration,
    next: Instant,
    ticks: u64,
    overruns: u64,
}

impl Ticker {
    pub fn new(hz: u32) -> Self {
        assert!(hz > 0, "tick rate must be positive");
        let period = Duration::from_secs_f64(1.0 / f64::from(hz));
        Self {
            period,
            next: Instant::now() + period,
            ticks: 0,
            overruns: 0,
        }
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    /// Sleeps until the next deadline.
    pub fn wait(&mut self) {
        let now = Instant::now();
        if now > self.next + self.period / 4 {
            self.overruns += 1;
            self.next = now + self.period;
        } else {
            if self.next > now {
                thread::sleep(self.next - now);
            }
            self.next += self.period;
        }
        self.ticks += 1;
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn overruns(&self) -> u64 {
        self.overruns
    }
}

/// Rolling window of latency samples in nanoseconds.
#[derive(Debug, Clone)]
pub struct LatencyWindow {
    samples: VecDeque<u64>,
    cap: usize,
}

impl Default for LatencyWindow {
    fn default() -> Self {
        Self::with_capacity(8192)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Percentiles {
    pub count: usize,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencyWindow {
    pub fn with_capacity(cap: usize) -> Self {
        Self {
            samples: VecDeque::with_capacity(cap.min(8192)),
            cap: cap.max(1),
        }
    }

    pub fn record(&mut self, d: Duration) {
        if self.samples.len() == self.cap {
            self.samples.pop_front();
        }
        self.samples.push_back(d.as_nanos().min(u128::from(u64::MAX)) as u64);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Nearest-rank percentiles; all zero when empty.
    pub fn percentiles(&self) -> Percentiles {
        let mut v: Vec<u64> = self.samples.iter().copied().collect();
        v.sort_unstable();
        let at = |q: f64| -> f64 {
            if v.is_empty() {
                return 0.0;
            }
            let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
            v[rank - 1] as f64 / 1000.0
        };
        Percentiles {
            count: v.len(),
            p50_us: at(0.50),
            p90_us: at(0.90),
            p99_us: at(0.99),
            max_us: at(1.0),
        }
    }
}
