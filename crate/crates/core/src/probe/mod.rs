//! Scan planning: probe ledgers for full scans and rescans.
//!
//! A plan turns an ordered target source into a deterministic stream of
//! probe records. Tokens come from a seeded generator, so a ledger can be
//! regenerated bit for bit from (plan, seed). Send times respect the plan
//! rate. Nothing here touches the network; see [`emit`] for the opt-in
//! lab-sink emission path.

pub mod emit;

use std::net::Ipv4Addr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::model::{Cidr, MatchToken, ProbeProtocol, ProbeRecord, MICROS_PER_DAY};

/// Default campaign start (2020-09-13T12:26:40Z). A fixed default keeps
/// ledger generation reproducible without a wall-clock dependency.
pub const DEFAULT_START_US: i64 = 1_600_000_000_000_000;

/// DNS label length: 9 seeded-random characters plus a 7-character base-36
/// sequence number. The suffix guarantees distinct qnames within a ledger
/// even across a full sweep (36^7 > 2^32).
pub const QNAME_LABEL_LEN: usize = 16;
const LABEL_RANDOM_LEN: usize = 9;
const LABEL_INDEX_LEN: usize = 7;

pub const DEFAULT_ZONE: &str = "zone.example";

const SWEEP_FIRST: u32 = 0x0100_0000; // 1.0.0.0
const SWEEP_LAST: u32 = 0xdfff_ffff; // 223.255.255.255, below multicast

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    Full,
    Rescan,
}

#[derive(Debug, Clone)]
pub enum TargetSource {
    /// Every routable unicast IPv4 address, reserved blocks skipped.
    Sweep,
    List(Vec<Ipv4Addr>),
}

/// Special-purpose blocks excluded from a sweep (private, loopback,
/// link-local, CGN, documentation, benchmarking; multicast and above fall
/// outside the sweep bounds already).
fn reserved_blocks() -> &'static [Cidr] {
    static BLOCKS: OnceLock<Vec<Cidr>> = OnceLock::new();
    BLOCKS.get_or_init(|| {
        [
            "10.0.0.0/8",
            "100.64.0.0/10",
            "127.0.0.0/8",
            "169.254.0.0/16",
            "172.16.0.0/12",
            "192.0.0.0/24",
            "192.0.2.0/24",
            "192.88.99.0/24",
            "192.168.0.0/16",
            "198.18.0.0/15",
            "198.51.100.0/24",
            "203.0.113.0/24",
        ]
        .iter()
        .map(|s| s.parse().expect("static CIDR literal"))
        .collect()
    })
}

#[derive(Debug, Clone)]
pub struct ScanPlan {
    pub protocol: ProbeProtocol,
    pub targets: TargetSource,
    pub kind: ScanKind,
    pub rate_pps: u32,
    pub seed: u64,
    pub start_time_us: i64,
    /// Zone suffix for DNS qnames.
    pub zone: String,
    /// Override for the protocol-typical probe size.
    pub probe_size: Option<u32>,
}

/// Full scans run at 40K pps (100K for ICMP); rescans at 100 pps.
pub fn default_rate(kind: ScanKind, protocol: ProbeProtocol) -> u32 {
    match kind {
        ScanKind::Full if protocol == ProbeProtocol::Icmp => 100_000,
        ScanKind::Full => 40_000,
        ScanKind::Rescan => 100,
    }
}

impl ScanPlan {
    pub fn new(protocol: ProbeProtocol, targets: TargetSource, kind: ScanKind, seed: u64) -> Self {
        ScanPlan {
            protocol,
            targets,
            kind,
            rate_pps: default_rate(kind, protocol),
            seed,
            start_time_us: DEFAULT_START_US,
            zone: DEFAULT_ZONE.to_string(),
            probe_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate_pps == 0 {
            return Err(Error::validation("scan rate must be at least 1 pps"));
        }
        if self.kind == ScanKind::Rescan && matches!(self.targets, TargetSource::Sweep) {
            return Err(Error::validation(
                "a rescan needs an explicit target list, not a full sweep",
            ));
        }
        if self.probe_size == Some(0) {
            return Err(Error::validation("probe size must be positive"));
        }
        if self.protocol == ProbeProtocol::Dns {
            if self.zone.is_empty() {
                return Err(Error::validation("DNS scans need a non-empty zone"));
            }
            let ok = self
                .zone
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'.' || b == b'-');
            if !ok {
                return Err(Error::validation(format!(
                    "zone {:?} must be lowercase DNS name characters",
                    self.zone
                )));
            }
        }
        Ok(())
    }
}

struct SweepIter {
    /// u64 so one-past-last is representable.
    next: u64,
}

impl SweepIter {
    fn new() -> Self {
        SweepIter {
            next: SWEEP_FIRST as u64,
        }
    }

    #[cfg(test)]
    fn starting_at(ip: Ipv4Addr) -> Self {
        SweepIter {
            next: u32::from(ip) as u64,
        }
    }
}

impl Iterator for SweepIter {
    type Item = Ipv4Addr;

    fn next(&mut self) -> Option<Ipv4Addr> {
        loop {
            if self.next > SWEEP_LAST as u64 {
                return None;
            }
            let cur = Ipv4Addr::from(self.next as u32);
            if let Some(block) = reserved_blocks().iter().find(|b| b.contains(cur)) {
                self.next = u32::from(block.last()) as u64 + 1;
                continue;
            }
            self.next += 1;
            return Some(cur);
        }
    }
}

enum TargetIter {
    Sweep(SweepIter),
    List(std::vec::IntoIter<Ipv4Addr>),
}

impl Iterator for TargetIter {
    type Item = Ipv4Addr;

    fn next(&mut self) -> Option<Ipv4Addr> {
        match self {
            TargetIter::Sweep(it) => it.next(),
            TargetIter::List(it) => it.next(),
        }
    }
}

/// Lazy probe stream for one plan.
pub struct LedgerIter {
    targets: TargetIter,
    rng: ChaCha20Rng,
    protocol: ProbeProtocol,
    start_time_us: i64,
    rate_pps: u64,
    zone: String,
    probe_size: u32,
    index: u64,
}

impl LedgerIter {
    fn qname(&mut self) -> String {
        const CHARSET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
        debug_assert!(self.index < 36u64.pow(LABEL_INDEX_LEN as u32));
        let mut label = String::with_capacity(QNAME_LABEL_LEN + 1 + self.zone.len());
        for _ in 0..LABEL_RANDOM_LEN {
            label.push(CHARSET[self.rng.gen_range(0..CHARSET.len())] as char);
        }
        let mut digits = [0u8; LABEL_INDEX_LEN];
        let mut v = self.index;
        for d in digits.iter_mut().rev() {
            *d = CHARSET[(v % 36) as usize];
            v /= 36;
        }
        label.extend(digits.iter().map(|&b| b as char));
        label.push('.');
        label.push_str(&self.zone);
        label
    }
}

impl Iterator for LedgerIter {
    type Item = ProbeRecord;

    fn next(&mut self) -> Option<ProbeRecord> {
        let target_ip = self.targets.next()?;
        let send_time_us = self.start_time_us + ((self.index * 1_000_000) / self.rate_pps) as i64;
        let token = match self.protocol {
            ProbeProtocol::Dns => MatchToken::DnsQname(self.qname()),
            ProbeProtocol::Icmp => MatchToken::IcmpEchoId(self.rng.gen()),
            ProbeProtocol::Ntp => MatchToken::None,
            ProbeProtocol::Tcp25 | ProbeProtocol::Tcp80 | ProbeProtocol::Tcp443 => {
                MatchToken::TcpSeq(self.rng.gen())
            }
        };
        self.index += 1;
        Some(ProbeRecord {
            send_time_us,
            target_ip,
            protocol: self.protocol,
            token,
            probe_size: self.probe_size,
        })
    }
}

/// Produce the plan's probe stream. Deterministic for a fixed plan and seed.
pub fn generate_ledger(plan: &ScanPlan) -> Result<LedgerIter> {
    plan.validate()?;
    let targets = match &plan.targets {
        TargetSource::Sweep => TargetIter::Sweep(SweepIter::new()),
        TargetSource::List(list) => TargetIter::List(list.clone().into_iter()),
    };
    Ok(LedgerIter {
        targets,
        rng: ChaCha20Rng::seed_from_u64(plan.seed),
        protocol: plan.protocol,
        start_time_us: plan.start_time_us,
        rate_pps: plan.rate_pps as u64,
        zone: plan.zone.to_lowercase(),
        probe_size: plan.probe_size.unwrap_or_else(|| plan.protocol.default_probe_size()),
        index: 0,
    })
}

/// Rescan cadence: the first round starts 6 to 9 days after the full scan
/// ends, later rounds every 3 days, for 6 rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RescanSchedule {
    pub first_offset_days: u32,
    pub inter_rescan_days: u32,
    pub rounds: u32,
}

impl Default for RescanSchedule {
    fn default() -> Self {
        RescanSchedule {
            first_offset_days: 6,
            inter_rescan_days: 3,
            rounds: 6,
        }
    }
}

/// Start timestamps for every rescan round.
pub fn schedule_rescans(full_scan_end_us: i64, schedule: &RescanSchedule) -> Result<Vec<i64>> {
    if !(6..=9).contains(&schedule.first_offset_days) {
        return Err(Error::validation(format!(
            "first rescan offset must be 6 to 9 days, got {}",
            schedule.first_offset_days
        )));
    }
    if schedule.inter_rescan_days == 0 {
        return Err(Error::validation("inter-rescan gap must be at least one day"));
    }
    if schedule.rounds == 0 {
        return Err(Error::validation("rescan schedule needs at least one round"));
    }
    let mut out = Vec::with_capacity(schedule.rounds as usize);
    let mut t = full_scan_end_us + schedule.first_offset_days as i64 * MICROS_PER_DAY;
    for _ in 0..schedule.rounds {
        out.push(t);
        t += schedule.inter_rescan_days as i64 * MICROS_PER_DAY;
    }
    Ok(out)
}
