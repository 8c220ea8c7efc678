use super::{expected_count, ChannelTiming, ProtocolError, Rate};

/// Outcome of driving a two-node cycle with the count functions alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleReport {
    /// Callbacks completed by the node holding the cyclic input.
    pub head_callbacks: u64,
    /// Callbacks completed by the other node.
    pub tail_callbacks: u64,
    pub deadlocked: bool,
}

/// Runs the counting protocol on a two-node cycle until both nodes have
/// reached a common simulated horizon or neither can proceed. The horizon is
/// the instant of callback `k_max` of the faster node.
///
/// `head` reads `tail` over a cyclic channel, `tail` reads `head` over an
/// ordinary one. Each callback emits exactly one message.
pub fn check_two_node_cycle(
    head_rate: Rate,
    tail_rate: Rate,
    head_delay: f64,
    tail_delay: f64,
    k_max: u64,
) -> Result<CycleReport, ProtocolError> {
    let head_in = ChannelTiming::new(head_rate, tail_rate, head_delay, true)?;
    let tail_in = ChannelTiming::new(tail_rate, head_rate, tail_delay, false)?;

    let horizon = k_max as f64 / head_rate.hz().max(tail_rate.hz());
    // Callbacks 0..=floor(horizon * f); the tolerance absorbs rounding of
    // instants that land exactly on the horizon.
    let head_max = (horizon * head_rate.hz() + 1e-9).floor() as u64 + 1;
    let tail_max = (horizon * tail_rate.hz() + 1e-9).floor() as u64 + 1;
    let (mut head_k, mut tail_k) = (0u64, 0u64);
    // Messages owed by each side so far (cumulative expected counts).
    let (mut head_needs, mut tail_needs) = (0u64, 0u64);
    let mut head_pending = None;
    let mut tail_pending = None;

    loop {
        let mut progressed = false;
        if head_k < head_max {
            let need = match head_pending {
                Some(n) => n,
                None => head_needs + expected_count(head_k, &head_in)?.get(),
            };
            head_pending = Some(need);
            // Messages available from tail = callbacks tail has completed.
            if need <= tail_k {
                head_needs = need;
                head_pending = None;
                head_k += 1;
                progressed = true;
            }
        }
        if tail_k < tail_max {
            let need = match tail_pending {
                Some(n) => n,
                None => tail_needs + expected_count(tail_k, &tail_in)?.get(),
            };
            tail_pending = Some(need);
            if need <= head_k {
                tail_needs = need;
                tail_pending = None;
                tail_k += 1;
                progressed = true;
            }
        }
        if head_k >= head_max && tail_k >= tail_max {
            break;
        }
        if !progressed {
            return Ok(CycleReport {
                head_callbacks: head_k,
                tail_callbacks: tail_k,
                deadlocked: true,
            });
        }
    }
    Ok(CycleReport {
        head_callbacks: head_k,
        tail_callbacks: tail_k,
        deadlocked: false,
    })
}
