use std::collections::BTreeSet;
use std::time::{Duration, Instant};

/// Time source for cycle compute budgets.
pub trait Clock: Send {
    fn now(&mut self) -> Duration;
}

#[derive(Debug, Clone)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> Duration {
        self.origin.elapsed()
    }
}

/// Scripted clock: every reading advances by `step`; the closing reading of
/// the listed control cycles additionally jumps by `stall`. The harness reads
/// the clock twice per cycle, at its start and at its end.
#[derive(Debug, Clone)]
pub struct FakeClock {
    now: Duration,
    step: Duration,
    stall: Duration,
    stalled_cycles: BTreeSet<usize>,
    calls: usize,
}

impl FakeClock {
    pub fn new(step: Duration) -> Self {
        Self { now: Duration::ZERO, step, stall: Duration::ZERO, stalled_cycles: BTreeSet::new(), calls: 0 }
    }

    pub fn stalling(mut self, cycles: impl IntoIterator<Item = usize>, stall: Duration) -> Self {
        self.stalled_cycles = cycles.into_iter().collect();
        self.stall = stall;
        self
    }
}

impl Clock for FakeClock {
    fn now(&mut self) -> Duration {
        let call = self.calls;
        self.calls += 1;
        self.now += self.step;
        if call % 2 == 1 && self.stalled_cycles.contains(&(call / 2)) {
            self.now += self.stall;
        }
        self.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stalls_only_listed_cycles() {
        let mut c = FakeClock::new(Duration::from_millis(1)).stalling([1], Duration::from_secs(60));
        let d0 = {
            let a = c.now();
            c.now() - a
        };
        let d1 = {
            let a = c.now();
            c.now() - a
        };
        assert_eq!(d0, Duration::from_millis(1));
        assert_eq!(d1, Duration::from_millis(1) + Duration::from_secs(60));
    }
}
