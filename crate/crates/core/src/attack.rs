//! Victim-side bandwidth simulation: replay every probe at one instant and
//! aggregate what the responses would add up to.
//!
//! Time shifting: a probe sent at offset T into its rescan has all its
//! response packets moved T earlier, as if every probe fired at attack
//! start. A packet received at recv_time for a probe sent at send_time
//! therefore lands in the bin of (recv_time - send_time), the latency of
//! the packet relative to its own probe; the rescan's absolute timing
//! cancels out. Protocols aggregate by summation, which bakes in the
//! assumption that concurrent probing over different protocols triggers
//! cumulative blowback.

use std::collections::BTreeSet;

use crate::classifier::ProbeTotals;
use crate::error::{Error, Result};
use crate::model::{MatchedResponse, ProbeProtocol, MICROS_PER_SEC};

#[derive(Debug, Clone)]
pub struct AttackConfig {
    /// Replay the whole probe set this many times...
    pub repeat: u32,
    /// ...spaced this far apart. Whole seconds, so repeated timelines align
    /// on bin boundaries. Ignored for a single pass.
    pub period_us: i64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            repeat: 1,
            period_us: MICROS_PER_SEC,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeat == 0 {
            return Err(Error::validation("repeat must be at least 1"));
        }
        if self.repeat > 1 {
            if self.period_us <= 0 {
                return Err(Error::validation("repeat period must be positive"));
            }
            if self.period_us % MICROS_PER_SEC != 0 {
                return Err(Error::validation(
                    "repeat period must be a whole number of seconds",
                ));
            }
        }
        Ok(())
    }
}

/// One second of aggregated arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinRate {
    pub packets: u64,
    pub bytes: u64,
}

/// Per-second arrival series from attack start, plus totals and the
/// attacker's own probe cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackTimeline {
    /// bins[s] covers [s, s+1) seconds after attack start; trailing zero
    /// bins are trimmed.
    pub bins: Vec<BinRate>,
    pub protocols: BTreeSet<ProbeProtocol>,
    pub total_packets: u64,
    pub total_bytes: u64,
    /// Packets whose receive time preceded their probe (clock skew in the
    /// capture); they are clamped into bin 0 rather than dropped.
    pub skewed_packets: u64,
    /// What the attacker transmits: the ledger totals when given, otherwise
    /// the responding probes alone, times the repeat count.
    pub probe_packets: u64,
    pub probe_bytes: u64,
}

impl AttackTimeline {
    pub fn duration_s(&self) -> usize {
        self.bins.len()
    }

    /// Packet amplification of the first second: bin-0 packets over the
    /// probe packets all sent in that second.
    pub fn first_second_packet_amplification(&self) -> Option<f64> {
        let first = self.bins.first()?.packets;
        (self.probe_packets > 0).then(|| first as f64 / self.probe_packets as f64)
    }

    pub fn first_second_volume_amplification(&self) -> Option<f64> {
        let first = self.bins.first()?.bytes;
        (self.probe_bytes > 0).then(|| first as f64 / self.probe_bytes as f64)
    }
}

/// Build the aggregated timeline. `probes` supplies the attacker-cost
/// accounting from the input ledgers; without it the cost covers only
/// probes that drew a response.
pub fn simulate_attack(
    responses: &[MatchedResponse],
    probes: Option<ProbeTotals>,
    config: &AttackConfig,
) -> Result<AttackTimeline> {
    config.validate()?;

    let mut base: Vec<BinRate> = Vec::new();
    let mut skewed = 0u64;
    let mut protocols = BTreeSet::new();
    for response in responses {
        protocols.insert(response.probe.protocol);
        let send = response.probe.send_time_us;
        for (packet, _) in &response.packets {
            let offset = packet.recv_time_us - send;
            let offset = if offset < 0 {
                skewed += 1;
                0
            } else {
                offset
            };
            let bin = (offset / MICROS_PER_SEC) as usize;
            if bin >= base.len() {
                base.resize(bin + 1, BinRate::default());
            }
            base[bin].packets += 1;
            base[bin].bytes += packet.size as u64;
        }
    }

    let cost = probes.unwrap_or_else(|| ProbeTotals {
        packets: responses.len() as u64,
        bytes: responses.iter().map(|r| r.probe.probe_size as u64).sum(),
    });

    // Sustained mode: the same timeline re-fired every period, summed.
    let repeat = config.repeat as usize;
    let stride = (config.period_us / MICROS_PER_SEC) as usize;
    let mut bins = if repeat == 1 {
        base
    } else {
        let mut bins = vec![BinRate::default(); base.len() + stride * (repeat - 1)];
        for k in 0..repeat {
            for (i, rate) in base.iter().enumerate() {
                let at = &mut bins[i + stride * k];
                at.packets += rate.packets;
                at.bytes += rate.bytes;
            }
        }
        bins
    };
    while bins.last().is_some_and(|b| b.packets == 0 && b.bytes == 0) {
        bins.pop();
    }

    Ok(AttackTimeline {
        total_packets: bins.iter().map(|b| b.packets).sum(),
        total_bytes: bins.iter().map(|b| b.bytes).sum(),
        skewed_packets: skewed * repeat as u64,
        probe_packets: cost.packets * repeat as u64,
        probe_bytes: cost.bytes * repeat as u64,
        bins,
        protocols,
    })
}
