//! Event-timeline oracle for the expected counts.
//!
//! Builds the explicit list of producer arrivals and consumer callback
//! instants, sorts it, and counts. It shares the quantized inputs with the
//! closed-form functions but none of their floor arithmetic.

use super::{ChannelTiming, ProtocolError, Quantized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    // Arrivals sort before marks at equal times: a message landing exactly on
    // a callback instant counts toward that callback.
    Arrival { real: bool },
    Mark { slot: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: i128,
    kind: Kind,
}

/// Simulated time multiplied by `R_i * R_n * T`, which makes both arrival
/// and callback instants exact integers.
struct Clock {
    q: Quantized,
}

impl Clock {
    /// Instant at which producer message `m` becomes consumable.
    fn arrival(&self, m: i128) -> i128 {
        let q = self.q;
        m * q.rate_scale * q.consumer * q.time_scale + q.delay * q.producer * q.consumer
    }

    /// Instant of consumer callback `x`.
    fn callback(&self, x: i128) -> i128 {
        let q = self.q;
        x * q.rate_scale * q.producer * q.time_scale
    }

    /// Producer period on this clock.
    fn producer_period(&self) -> i128 {
        self.arrival(1) - self.arrival(0)
    }
}

/// Per-callback expected counts for `k = 0..=k_max`, derived by enumerating
/// the event timeline.
///
/// Acyclic channels: callback `k` may have consumed every message that became
/// consumable at or before its instant, and the first callback always takes
/// one message. Cyclic channels: callback `k` takes the arrivals that fall in
/// the window of callback `k + o` (with `o` the number of consumer callbacks
/// strictly inside one producer period when the consumer is faster, `-1`
/// otherwise), capped by the real arrivals at its own instant; the first
/// callback takes nothing.
pub fn oracle_expected_schedule(
    timing: &ChannelTiming,
    k_max: u64,
) -> Result<Vec<u64>, ProtocolError> {
    if k_max == 0 {
        return Err(ProtocolError::EmptySchedule);
    }
    let clock = Clock {
        q: timing.quantized(),
    };
    if timing.is_cyclic() {
        Ok(cyclic_schedule(&clock, k_max as i128))
    } else {
        Ok(acyclic_schedule(&clock, k_max as i128))
    }
}

fn acyclic_schedule(clock: &Clock, k_max: i128) -> Vec<u64> {
    let last = clock.callback(k_max);
    let mut events: Vec<Event> = (0..=k_max)
        .map(|x| Event {
            time: clock.callback(x),
            kind: Kind::Mark { slot: x as usize },
        })
        .collect();
    let mut m = 0;
    while clock.arrival(m) <= last {
        events.push(Event {
            time: clock.arrival(m),
            kind: Kind::Arrival { real: true },
        });
        m += 1;
    }
    events.sort();

    let mut arrived = 0u64;
    let mut cumulative = vec![0u64; k_max as usize + 1];
    for event in events {
        match event.kind {
            Kind::Arrival { .. } => arrived += 1,
            Kind::Mark { slot } => cumulative[slot] = arrived.max(1),
        }
    }
    let mut schedule = Vec::with_capacity(cumulative.len());
    schedule.push(1);
    for pair in cumulative.windows(2) {
        schedule.push(pair[1] - pair[0]);
    }
    schedule
}

fn cyclic_schedule(clock: &Clock, k_max: i128) -> Vec<u64> {
    let period = clock.producer_period();
    let shift = if clock.q.consumer > clock.q.producer {
        let mut inside = 0;
        while clock.callback(inside + 1) < period {
            inside += 1;
        }
        inside
    } else {
        -1
    };

    // Slots 1..=k_max+1 are window bounds at callback(b - 1 + shift); the
    // window of callback x is (bound x, bound x+1]. Slots past that are the
    // cap instants at callback(x).
    let bounds = k_max as usize + 2;
    let mut events = Vec::new();
    for b in 1..=k_max + 1 {
        events.push(Event {
            time: clock.callback(b - 1 + shift),
            kind: Kind::Mark { slot: b as usize },
        });
    }
    for x in 1..=k_max {
        events.push(Event {
            time: clock.callback(x),
            kind: Kind::Mark {
                slot: bounds + x as usize,
            },
        });
    }
    let earliest = events.iter().map(|e| e.time).min().unwrap_or(0);
    let latest = events.iter().map(|e| e.time).max().unwrap_or(0);
    // Pre-episode (virtual) emissions keep the shifted windows well defined
    // before the first real message.
    let mut m = 0;
    while clock.arrival(m) > earliest {
        m -= 1;
    }
    while clock.arrival(m) <= latest {
        events.push(Event {
            time: clock.arrival(m),
            kind: Kind::Arrival { real: m >= 0 },
        });
        m += 1;
    }
    events.sort();

    let mut all = 0i64;
    let mut real = 0i64;
    let mut bound = vec![0i64; bounds];
    let mut cap = vec![0i64; bounds];
    for event in events {
        match event.kind {
            Kind::Arrival { real: is_real } => {
                all += 1;
                if is_real {
                    real += 1;
                }
            }
            Kind::Mark { slot } if slot < bounds => bound[slot] = all,
            Kind::Mark { slot } => cap[slot - bounds] = real,
        }
    }

    let mut schedule = vec![0u64];
    for x in 1..=k_max as usize {
        let in_window = bound[x + 1] - bound[x];
        schedule.push(in_window.min(cap[x]).max(0) as u64);
    }
    schedule
}
