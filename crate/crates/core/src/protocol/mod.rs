//! Expected-message-count arithmetic.
//!
//! A node firing at rate `f_n` that reads a channel produced at rate `f_i`
//! with a transport delay `tau` must know, before its `k`-th callback, how
//! many new messages that channel owes it. The two count functions here
//! answer that question for ordinary channels and for channels that close a
//! dependency cycle. Both are pure.
//!
//! Rates and delays are mapped onto an integer grid ([`TickGrid`]) before any
//! floor division, so boundary cases such as a message landing exactly on a
//! callback instant are decided by exact integer comparisons rather than by
//! floating-point rounding.

mod cycle;
mod oracle;

pub use cycle::{check_two_node_cycle, CycleReport};
pub use oracle::oracle_expected_schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default fudge factor for the cyclic shift computation, in hertz.
pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("rate must be finite and strictly positive, got {0}")]
    InvalidRate(f64),
    #[error("rate {hz} Hz is below the grid resolution of 1/{ticks_per_hz} Hz")]
    RateBelowResolution { hz: f64, ticks_per_hz: u64 },
    #[error("delay must be finite and non-negative, got {0}")]
    InvalidDelay(f64),
    #[error("epsilon must be finite, positive and smaller than both rates, got {0}")]
    InvalidEpsilon(f64),
    #[error("channel is {actual}, but the {expected} count was requested")]
    WrongChannelKind {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("integer overflow while evaluating callback index {0}")]
    Overflow(u64),
    #[error("k_max must be at least 1")]
    EmptySchedule,
}

/// A strictly positive, finite frequency in hertz of simulated time.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Rate(f64);

impl Rate {
    pub fn new(hz: f64) -> Result<Self, ProtocolError> {
        if hz.is_finite() && hz > 0.0 {
            Ok(Rate(hz))
        } else {
            Err(ProtocolError::InvalidRate(hz))
        }
    }

    pub fn hz(self) -> f64 {
        self.0
    }

    /// Period in seconds of simulated time.
    pub fn period(self) -> f64 {
        1.0 / self.0
    }
}

impl TryFrom<f64> for Rate {
    type Error = ProtocolError;

    fn try_from(hz: f64) -> Result<Self, Self::Error> {
        Rate::new(hz)
    }
}

impl From<Rate> for f64 {
    fn from(rate: Rate) -> f64 {
        rate.0
    }
}

/// Integer resolution used to make every floor division exact.
///
/// Rates are rounded to multiples of `1 / rate_ticks_per_hz` Hz and delays to
/// multiples of `1 / time_ticks_per_second` s. The default is 1 µHz and 1 µs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickGrid {
    pub rate_ticks_per_hz: u64,
    pub time_ticks_per_second: u64,
}

impl Default for TickGrid {
    fn default() -> Self {
        TickGrid {
            rate_ticks_per_hz: 1_000_000,
            time_ticks_per_second: 1_000_000,
        }
    }
}

impl TickGrid {
    pub fn rate_ticks(&self, rate: Rate) -> Result<i128, ProtocolError> {
        let ticks = (rate.hz() * self.rate_ticks_per_hz as f64).round();
        if ticks < 1.0 {
            return Err(ProtocolError::RateBelowResolution {
                hz: rate.hz(),
                ticks_per_hz: self.rate_ticks_per_hz,
            });
        }
        Ok(ticks as i128)
    }

    pub fn time_ticks(&self, seconds: f64) -> i128 {
        (seconds * self.time_ticks_per_second as f64).round() as i128
    }
}

/// Quantized view of a channel: rates in rate ticks, delay in time ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Quantized {
    pub consumer: i128,
    pub producer: i128,
    pub delay: i128,
    pub rate_scale: i128,
    pub time_scale: i128,
}

/// Timing contract of one input channel as seen by its consumer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTiming {
    consumer_rate: Rate,
    producer_rate: Rate,
    delay: f64,
    cyclic: bool,
    grid: TickGrid,
    q: Quantized,
}

impl ChannelTiming {
    pub fn new(
        consumer_rate: Rate,
        producer_rate: Rate,
        delay: f64,
        cyclic: bool,
    ) -> Result<Self, ProtocolError> {
        Self::with_grid(consumer_rate, producer_rate, delay, cyclic, TickGrid::default())
    }

    pub fn with_grid(
        consumer_rate: Rate,
        producer_rate: Rate,
        delay: f64,
        cyclic: bool,
        grid: TickGrid,
    ) -> Result<Self, ProtocolError> {
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(ProtocolError::InvalidDelay(delay));
        }
        let q = Quantized {
            consumer: grid.rate_ticks(consumer_rate)?,
            producer: grid.rate_ticks(producer_rate)?,
            delay: grid.time_ticks(delay),
            rate_scale: grid.rate_ticks_per_hz as i128,
            time_scale: grid.time_ticks_per_second as i128,
        };
        Ok(ChannelTiming {
            consumer_rate,
            producer_rate,
            delay,
            cyclic,
            grid,
            q,
        })
    }

    /// Same channel with a different delay (used when delays are re-sampled
    /// between episodes).
    pub fn with_delay(&self, delay: f64) -> Result<Self, ProtocolError> {
        Self::with_grid(
            self.consumer_rate,
            self.producer_rate,
            delay,
            self.cyclic,
            self.grid,
        )
    }

    pub fn consumer_rate(&self) -> Rate {
        self.consumer_rate
    }

    pub fn producer_rate(&self) -> Rate {
        self.producer_rate
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn grid(&self) -> TickGrid {
        self.grid
    }

    pub(crate) fn quantized(&self) -> Quantized {
        self.q
    }

    fn kind(&self) -> &'static str {
        if self.cyclic {
            "cyclic"
        } else {
            "acyclic"
        }
    }
}

/// Number of messages a channel must deliver between callback `k-1` and `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExpectedCount(pub u64);

impl ExpectedCount {
    pub fn get(self) -> u64 {
        self.0
    }
}

/// Floor division toward negative infinity for a positive divisor.
fn floor_div(numerator: i128, denominator: i128) -> i128 {
    debug_assert!(denominator > 0);
    numerator.div_euclid(denominator)
}

/// Checked integer evaluation of the rate-form expressions.
///
/// With `f = R / rho` and `tau = D / T`, multiplying numerator and
/// denominator of `(f_i x - f_n m - f_n f_i tau) / f_n` by `rho^2 T` gives
/// `(R_i x rho T - R_n m rho T - R_n R_i D) / (R_n rho T)`.
struct RateForm {
    q: Quantized,
    k: u64,
}

impl RateForm {
    fn scale(&self) -> Option<i128> {
        self.q.rate_scale.checked_mul(self.q.time_scale)
    }

    fn delay_term(&self) -> Option<i128> {
        self.q
            .consumer
            .checked_mul(self.q.producer)?
            .checked_mul(self.q.delay)
    }

    fn denominator(&self) -> Option<i128> {
        self.q.consumer.checked_mul(self.scale()?)
    }

    /// `floor((f_i x - f_n m - f_n f_i tau) / f_n)`.
    fn floor(&self, x: i128, m: i128) -> Result<i128, ProtocolError> {
        let overflow = ProtocolError::Overflow(self.k);
        let s = self.scale().ok_or(overflow.clone())?;
        let produced = self
            .q
            .producer
            .checked_mul(x)
            .and_then(|v| v.checked_mul(s))
            .ok_or(overflow.clone())?;
        let consumed = self
            .q
            .consumer
            .checked_mul(m)
            .and_then(|v| v.checked_mul(s))
            .ok_or(overflow.clone())?;
        let numerator = produced
            .checked_sub(consumed)
            .and_then(|v| v.checked_sub(self.delay_term()?))
            .ok_or(overflow.clone())?;
        Ok(floor_div(numerator, self.denominator().ok_or(overflow)?))
    }
}

fn finish(delta: i128, correction: i128, k: u64) -> Result<ExpectedCount, ProtocolError> {
    let delta = delta - delta.min(0.max(-correction));
    u64::try_from(delta)
        .map(ExpectedCount)
        .map_err(|_| ProtocolError::Overflow(k))
}

/// Expected count for an ordinary (acyclic) input channel.
///
/// The first callback always waits for exactly one message regardless of
/// delay. Afterwards the count is the number of arrivals that fall in
/// `((k-1)/f_n, k/f_n]` once the channel delay is applied, corrected so that
/// messages still in flight at the start of the episode are not expected.
pub fn expected_count_acyclic(
    k: u64,
    timing: &ChannelTiming,
) -> Result<ExpectedCount, ProtocolError> {
    if timing.cyclic {
        return Err(ProtocolError::WrongChannelKind {
            expected: "acyclic",
            actual: timing.kind(),
        });
    }
    if k == 0 {
        return Ok(ExpectedCount(1));
    }
    let form = RateForm {
        q: timing.quantized(),
        k,
    };
    let kk = k as i128;
    let previous = form.floor(kk - 1, 0)?;
    let current = form.floor(kk, 0)?;
    let delta = current - previous;
    let correction = form.floor(kk, delta)?;
    finish(delta, correction, k)
}

/// Expected count for an input channel flagged as closing a dependency cycle.
///
/// The first callback expects nothing, so one node in every cycle can fire
/// first. Later counts are evaluated as if the callback index were shifted,
/// which postpones the dependency by one callback.
pub fn expected_count_cyclic(
    k: u64,
    timing: &ChannelTiming,
    epsilon: f64,
) -> Result<ExpectedCount, ProtocolError> {
    if !timing.cyclic {
        return Err(ProtocolError::WrongChannelKind {
            expected: "cyclic",
            actual: timing.kind(),
        });
    }
    let min_rate = timing.consumer_rate.hz().min(timing.producer_rate.hz());
    if !(epsilon.is_finite() && epsilon > 0.0 && epsilon < min_rate) {
        return Err(ProtocolError::InvalidEpsilon(epsilon));
    }
    if k == 0 {
        return Ok(ExpectedCount(0));
    }
    let q = timing.quantized();
    let form = RateForm { q, k };
    let shift = cyclic_shift(q, epsilon);
    let kk = k as i128;
    let previous = form.floor(kk - 1 + shift, 0)?;
    let current = form.floor(kk + shift, 0)?;
    let delta = current - previous;
    let correction = form.floor(kk, delta - 1)?;
    finish(delta, correction, k)
}

/// `floor((f_n - eps) / f_i)` when the consumer is faster, else `-1`.
///
/// Epsilon is placed on a grid 10^6 times finer than the rate grid and
/// rounded up, so any positive epsilon keeps the floor strictly below an
/// integral rate ratio.
fn cyclic_shift(q: Quantized, epsilon: f64) -> i128 {
    if q.consumer <= q.producer {
        return -1;
    }
    const FINE: i128 = 1_000_000;
    let eps_ticks = ((epsilon * q.rate_scale as f64 * FINE as f64).ceil() as i128).max(1);
    floor_div(q.consumer * FINE - eps_ticks, q.producer * FINE)
}

/// Dispatches on the channel's cyclic flag with the default epsilon.
pub fn expected_count(k: u64, timing: &ChannelTiming) -> Result<ExpectedCount, ProtocolError> {
    if timing.cyclic {
        expected_count_cyclic(k, timing, DEFAULT_EPSILON)
    } else {
        expected_count_acyclic(k, timing)
    }
}
