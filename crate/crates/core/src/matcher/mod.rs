//! Response-to-probe matching.
//!
//! The engine merges a probe ledger and a packet trace, both chronological,
//! while holding a sliding window of live probes. Rules are tried per
//! packet shape: token rules first (qname substring, SYN/ACK ack number,
//! echo id), then quotation and probed-address rules. A match extends the
//! owning probe's expiry; probes silent for the whole window retire, which
//! bounds memory instead of growing with ledger size.
//!
//! Determinism contract: for sorted inputs the result is a pure function of
//! (ledger, trace, config). When several live probes pass the same rule,
//! the latest-sent wins, ties broken by ascending target address, then by
//! ledger position. The brute-force reference in the test suite encodes
//! the same contract independently.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{
    MatchRule, MatchToken, MatchedResponse, PacketRecord, ProbeRecord, TcpFlags, Transport,
    MICROS_PER_SEC,
};

/// Timestamp regressions up to this much are tolerated (capture jitter);
/// anything larger aborts with advice to sort the input.
pub const SORT_TOLERANCE_US: i64 = MICROS_PER_SEC;

/// How a SYN/ACK acknowledgment number is compared against the probe's
/// sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TcpAckMode {
    /// ack == seq + 1, the RFC-correct handshake form.
    SeqPlusOne,
    /// ack == seq, the literal reading.
    SeqExact,
    /// Accept both, preferring the handshake form; the report counts each.
    #[default]
    Either,
}

impl TcpAckMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TcpAckMode::SeqPlusOne => "seq-plus-one",
            TcpAckMode::SeqExact => "seq-exact",
            TcpAckMode::Either => "either",
        }
    }
}

impl FromStr for TcpAckMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq-plus-one" => Ok(TcpAckMode::SeqPlusOne),
            "seq-exact" => Ok(TcpAckMode::SeqExact),
            "either" => Ok(TcpAckMode::Either),
            other => Err(Error::validation(format!(
                "unknown ack mode {other:?}; expected seq-plus-one, seq-exact, or either"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatchConfig {
    pub expiry_window_us: i64,
    pub tcp_ack_mode: TcpAckMode,
    /// Source port of our TCP/UDP probes; the probed-address rule requires
    /// incoming packets to target it.
    pub ephemeral_port: u16,
    /// Live-probe ceiling. Reaching it retires the earliest-expiring probe,
    /// which keeps results conservative rather than unbounded.
    pub ledger_capacity: usize,
    /// Keep matched packets' payload bytes. Off by default: downstream
    /// stages only need counts, sizes, and addresses.
    pub retain_payloads: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            expiry_window_us: 600 * MICROS_PER_SEC,
            tcp_ack_mode: TcpAckMode::default(),
            ephemeral_port: 55000,
            ledger_capacity: 10_000_000,
            retain_payloads: false,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.expiry_window_us <= 0 {
            return Err(Error::validation("expiry window must be positive"));
        }
        if self.ledger_capacity == 0 {
            return Err(Error::validation("ledger capacity must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MatchReport {
    /// One entry per probe that attracted at least one packet, sorted by
    /// (send_time, target, protocol, token).
    pub responses: Vec<MatchedResponse>,
    pub probes_total: u64,
    pub matched_packets: u64,
    pub unmatched_packets: u64,
    pub matched_bytes: u64,
    pub unmatched_bytes: u64,
    /// Indexed by [`MatchRule::index`].
    pub rule_counts: [u64; 5],
    /// Under EITHER, how many acknowledgment matches used each form.
    pub ack_plus_one_matches: u64,
    pub ack_exact_matches: u64,
    /// Probes retired early because the ledger hit capacity.
    pub evicted_probes: u64,
}

impl MatchReport {
    /// Share of incoming packets attributed to a probe. An empty trace is
    /// vacuously fully matched.
    pub fn matched_fraction(&self) -> f64 {
        let total = self.matched_packets + self.unmatched_packets;
        if total == 0 {
            1.0
        } else {
            self.matched_packets as f64 / total as f64
        }
    }
}

/// Choose among candidates that passed the same rule: latest send_time
/// wins; ties go to the ascending target address; remaining ties to the
/// earliest list position. Returns the winner's index.
pub fn resolve_ambiguity(candidates: &[(i64, Ipv4Addr)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(send, target)) in candidates.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                let (bs, bt) = candidates[b];
                if send > bs || (send == bs && target < bt) {
                    best = Some(i);
                }
            }
        }
    }
    best
}

const HASH_BASE: u64 = 1_000_003;

fn qname_hash(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0u64, |h, &b| h.wrapping_mul(HASH_BASE).wrapping_add(b as u64))
}

struct LenIndex {
    /// HASH_BASE^(len-1), for removing the outgoing byte while rolling.
    pow: u64,
    buckets: HashMap<u64, Vec<(u32, Box<[u8]>)>>,
}

/// Substring index over live DNS qnames: one rolling scan per distinct
/// qname length, bucket hits verified byte for byte.
#[derive(Default)]
struct QnameIndex {
    by_len: HashMap<usize, LenIndex>,
}

impl QnameIndex {
    fn insert(&mut self, id: u32, qname: &str) {
        let bytes = qname.as_bytes();
        let len = bytes.len();
        let index = self.by_len.entry(len).or_insert_with(|| LenIndex {
            pow: (0..len - 1).fold(1u64, |p, _| p.wrapping_mul(HASH_BASE)),
            buckets: HashMap::new(),
        });
        index
            .buckets
            .entry(qname_hash(bytes))
            .or_default()
            .push((id, bytes.to_vec().into_boxed_slice()));
    }

    fn remove(&mut self, id: u32, qname: &str) {
        let bytes = qname.as_bytes();
        if let Some(index) = self.by_len.get_mut(&bytes.len()) {
            if let Some(bucket) = index.buckets.get_mut(&qname_hash(bytes)) {
                bucket.retain(|(other, _)| *other != id);
                if bucket.is_empty() {
                    index.buckets.remove(&qname_hash(bytes));
                }
            }
            if index.buckets.is_empty() {
                self.by_len.remove(&bytes.len());
            }
        }
    }

    /// Collect ids whose qname occurs in `haystack` (already lowercased)
    /// and passes `live`. Candidates keep first-seen order, deduplicated.
    fn find(&self, haystack: &[u8], mut live: impl FnMut(u32) -> bool, out: &mut Vec<u32>) {
        for (&len, index) in &self.by_len {
            if len == 0 || len > haystack.len() {
                continue;
            }
            let mut h = qname_hash(&haystack[..len]);
            let mut start = 0;
            loop {
                if let Some(bucket) = index.buckets.get(&h) {
                    let window = &haystack[start..start + len];
                    for (id, qname) in bucket {
                        if qname.as_ref() == window && !out.contains(id) && live(*id) {
                            out.push(*id);
                        }
                    }
                }
                if start + len >= haystack.len() {
                    break;
                }
                h = h
                    .wrapping_sub((haystack[start] as u64).wrapping_mul(index.pow))
                    .wrapping_mul(HASH_BASE)
                    .wrapping_add(haystack[start + len] as u64);
                start += 1;
            }
        }
    }
}

struct Entry {
    probe: ProbeRecord,
    expiry: i64,
    packets: Vec<(PacketRecord, MatchRule)>,
    alive: bool,
}

/// A probe can own a packet iff it is still in the ledger and the packet
/// falls inside [send_time, expiry).
fn live(entries: &[Entry], id: u32, recv: i64) -> bool {
    let entry = &entries[id as usize];
    entry.alive && entry.probe.send_time_us <= recv && recv < entry.expiry
}

struct Engine {
    config: MatchConfig,
    entries: Vec<Entry>,
    live_count: usize,
    by_target: HashMap<Ipv4Addr, Vec<u32>>,
    by_echo: HashMap<u16, Vec<u32>>,
    by_seq: HashMap<u32, Vec<u32>>,
    qnames: QnameIndex,
    /// (expiry, id) min-heap with lazy deletion: stale pairs are skipped
    /// when popped.
    expiries: BinaryHeap<Reverse<(i64, u32)>>,
    report: MatchReport,
    /// Reusable scratch buffers.
    lower: Vec<u8>,
    candidates: Vec<u32>,
}

impl Engine {
    fn new(config: MatchConfig) -> Self {
        Engine {
            config,
            entries: Vec::new(),
            live_count: 0,
            by_target: HashMap::new(),
            by_echo: HashMap::new(),
            by_seq: HashMap::new(),
            qnames: QnameIndex::default(),
            expiries: BinaryHeap::new(),
            report: MatchReport::default(),
            lower: Vec::new(),
            candidates: Vec::new(),
        }
    }

    fn insert_probe(&mut self, probe: ProbeRecord) {
        if self.live_count >= self.config.ledger_capacity {
            self.evict_earliest();
        }
        let id = self.entries.len() as u32;
        let expiry = probe.send_time_us + self.config.expiry_window_us;
        self.by_target.entry(probe.target_ip).or_default().push(id);
        match &probe.token {
            MatchToken::DnsQname(q) => self.qnames.insert(id, q),
            MatchToken::IcmpEchoId(echo) => self.by_echo.entry(*echo).or_default().push(id),
            MatchToken::TcpSeq(seq) => self.by_seq.entry(*seq).or_default().push(id),
            MatchToken::None => {}
        }
        self.entries.push(Entry {
            probe,
            expiry,
            packets: Vec::new(),
            alive: true,
        });
        self.live_count += 1;
        self.expiries.push(Reverse((expiry, id)));
        self.report.probes_total += 1;
    }

    fn evict_earliest(&mut self) {
        while let Some(Reverse((expiry, id))) = self.expiries.pop() {
            let entry = &self.entries[id as usize];
            if entry.alive && entry.expiry == expiry {
                self.finalize(id);
                self.report.evicted_probes += 1;
                return;
            }
        }
    }

    /// Retire probes that can no longer match anything. The threshold stays
    /// a sort-tolerance behind the newest packet so slightly regressed
    /// timestamps still see their probes.
    fn finalize_expired(&mut self, max_recv: i64) {
        let threshold = max_recv.saturating_sub(SORT_TOLERANCE_US);
        while let Some(&Reverse((expiry, id))) = self.expiries.peek() {
            if expiry > threshold {
                break;
            }
            self.expiries.pop();
            let entry = &self.entries[id as usize];
            if entry.alive && entry.expiry == expiry {
                self.finalize(id);
            }
        }
    }

    fn finalize(&mut self, id: u32) {
        let entry = &mut self.entries[id as usize];
        if !entry.alive {
            return;
        }
        entry.alive = false;
        self.live_count -= 1;
        let probe = entry.probe.clone();
        let packets = std::mem::take(&mut entry.packets);

        if let Some(ids) = self.by_target.get_mut(&probe.target_ip) {
            ids.retain(|&other| other != id);
            if ids.is_empty() {
                self.by_target.remove(&probe.target_ip);
            }
        }
        match &probe.token {
            MatchToken::DnsQname(q) => self.qnames.remove(id, q),
            MatchToken::IcmpEchoId(echo) => {
                if let Some(ids) = self.by_echo.get_mut(echo) {
                    ids.retain(|&other| other != id);
                    if ids.is_empty() {
                        self.by_echo.remove(echo);
                    }
                }
            }
            MatchToken::TcpSeq(seq) => {
                if let Some(ids) = self.by_seq.get_mut(seq) {
                    ids.retain(|&other| other != id);
                    if ids.is_empty() {
                        self.by_seq.remove(seq);
                    }
                }
            }
            MatchToken::None => {}
        }

        if !packets.is_empty() {
            let mut packets = packets;
            packets.sort_by_key(|(p, _)| p.recv_time_us);
            self.report.responses.push(MatchedResponse { probe, packets });
        }
    }

    /// Winner among `self.candidates` per the ambiguity contract.
    fn pick_candidate(&self) -> u32 {
        let mut best = self.candidates[0];
        for &id in &self.candidates[1..] {
            let b = &self.entries[best as usize].probe;
            let c = &self.entries[id as usize].probe;
            let better = c.send_time_us > b.send_time_us
                || (c.send_time_us == b.send_time_us && c.target_ip < b.target_ip)
                || (c.send_time_us == b.send_time_us && c.target_ip == b.target_ip && id < best);
            if better {
                best = id;
            }
        }
        best
    }

    /// Candidates matching a SYN/ACK under one ack interpretation.
    fn seq_candidates(&mut self, ack: u32, plus_one: bool, recv: i64) {
        self.candidates.clear();
        let seq = if plus_one { ack.wrapping_sub(1) } else { ack };
        if let Some(ids) = self.by_seq.get(&seq) {
            let entries = &self.entries;
            self.candidates
                .extend(ids.iter().copied().filter(|&id| live(entries, id, recv)));
        }
    }

    fn find_rule(&mut self, packet: &PacketRecord) -> Option<MatchRule> {
        let recv = packet.recv_time_us;

        // Token rules first. PS.1 applies to any packet shape with payload.
        if let Some(payload) = &packet.payload {
            if !self.qnames.by_len.is_empty() {
                self.lower.clear();
                self.lower.extend(payload.iter().map(u8::to_ascii_lowercase));
                self.candidates.clear();
                let entries = &self.entries;
                self.qnames.find(
                    &self.lower,
                    |id| live(entries, id, recv),
                    &mut self.candidates,
                );
                if !self.candidates.is_empty() {
                    return Some(MatchRule::Ps1);
                }
            }
        }

        match packet.transport {
            Transport::Tcp => {
                let is_syn_ack = packet
                    .tcp_flags
                    .map(|f| f.0 & TcpFlags::SYN_ACK.0 == TcpFlags::SYN_ACK.0)
                    .unwrap_or(false);
                if is_syn_ack {
                    if let Some(ack) = packet.tcp_ack {
                        match self.config.tcp_ack_mode {
                            TcpAckMode::SeqPlusOne => {
                                self.seq_candidates(ack, true, recv);
                                if !self.candidates.is_empty() {
                                    self.report.ack_plus_one_matches += 1;
                                    return Some(MatchRule::Ps2);
                                }
                            }
                            TcpAckMode::SeqExact => {
                                self.seq_candidates(ack, false, recv);
                                if !self.candidates.is_empty() {
                                    self.report.ack_exact_matches += 1;
                                    return Some(MatchRule::Ps2);
                                }
                            }
                            TcpAckMode::Either => {
                                self.seq_candidates(ack, true, recv);
                                if !self.candidates.is_empty() {
                                    self.report.ack_plus_one_matches += 1;
                                    return Some(MatchRule::Ps2);
                                }
                                self.seq_candidates(ack, false, recv);
                                if !self.candidates.is_empty() {
                                    self.report.ack_exact_matches += 1;
                                    return Some(MatchRule::Ps2);
                                }
                            }
                        }
                    }
                }
            }
            Transport::Icmp => {
                if packet.icmp_type == Some(0) {
                    if let Some(echo) = packet.icmp_echo_id {
                        self.candidates.clear();
                        if let Some(ids) = self.by_echo.get(&echo) {
                            let entries = &self.entries;
                            self.candidates
                                .extend(ids.iter().copied().filter(|&id| live(entries, id, recv)));
                        }
                        if !self.candidates.is_empty() {
                            return Some(MatchRule::Ps3);
                        }
                    }
                }
                if let Some(quoted) = packet.quoted_dst_ip {
                    self.candidates.clear();
                    if let Some(ids) = self.by_target.get(&quoted) {
                        let entries = &self.entries;
                        self.candidates
                            .extend(ids.iter().copied().filter(|&id| live(entries, id, recv)));
                    }
                    if !self.candidates.is_empty() {
                        return Some(MatchRule::Pa1);
                    }
                }
                return None;
            }
            Transport::Udp => {}
            // Unmodeled transports are never attributed.
            Transport::Other => return None,
        }

        // Probed-address rule for TCP and UDP: from a probed target back to
        // our ephemeral port.
        if packet.dst_port == Some(self.config.ephemeral_port) {
            self.candidates.clear();
            if let Some(ids) = self.by_target.get(&packet.src_ip) {
                let entries = &self.entries;
                self.candidates
                    .extend(ids.iter().copied().filter(|&id| live(entries, id, recv)));
            }
            if !self.candidates.is_empty() {
                return Some(MatchRule::Pa2);
            }
        }
        None
    }

    fn process_packet(&mut self, mut packet: PacketRecord) {
        match self.find_rule(&packet) {
            Some(rule) => {
                let id = self.pick_candidate();
                self.report.matched_packets += 1;
                self.report.matched_bytes += packet.size as u64;
                self.report.rule_counts[rule.index()] += 1;
                if !self.config.retain_payloads {
                    packet.payload = None;
                }
                let new_expiry = packet.recv_time_us + self.config.expiry_window_us;
                let entry = &mut self.entries[id as usize];
                entry.packets.push((packet, rule));
                if new_expiry > entry.expiry {
                    entry.expiry = new_expiry;
                    self.expiries.push(Reverse((new_expiry, id)));
                }
            }
            None => {
                self.report.unmatched_packets += 1;
                self.report.unmatched_bytes += packet.size as u64;
            }
        }
    }
}

/// Run the merge. Both streams must be sorted by their timestamps; a
/// regression beyond [`SORT_TOLERANCE_US`] is fatal.
pub fn match_stream<P, K>(probes: P, packets: K, config: &MatchConfig) -> Result<MatchReport>
where
    P: IntoIterator<Item = Result<ProbeRecord>>,
    K: IntoIterator<Item = Result<PacketRecord>>,
{
    config.validate()?;
    let mut engine = Engine::new(config.clone());
    let mut probes = probes.into_iter().peekable();
    let mut max_send = i64::MIN;
    let mut max_recv = i64::MIN;

    // Reorder buffer for the sort tolerance: a ledger line may regress up to
    // a second below its predecessors, so the stream is pulled a tolerance
    // ahead of each packet and entries enter the engine strictly by
    // (send_time, ledger position). That keeps engine state a function of
    // the sorted ledger alone, not of interleaving jitter.
    let mut pending: BTreeMap<(i64, u64), ProbeRecord> = BTreeMap::new();
    let mut ledger_seq = 0u64;

    let mut pull_probe = |pending: &mut BTreeMap<(i64, u64), ProbeRecord>,
                          probes: &mut std::iter::Peekable<P::IntoIter>,
                          up_to: Option<i64>|
     -> Result<bool> {
        match probes.peek() {
            None => Ok(false),
            Some(Err(_)) => {
                // Propagate the stream error.
                Err(probes.next().unwrap().unwrap_err())
            }
            Some(Ok(probe)) => {
                if let Some(limit) = up_to {
                    if probe.send_time_us > limit {
                        return Ok(false);
                    }
                }
                let probe = probes.next().unwrap()?;
                if probe.send_time_us < max_send.saturating_sub(SORT_TOLERANCE_US) {
                    return Err(Error::data(format!(
                        "probe ledger unsorted at send_time {} (seen {}); sort by send_time first",
                        probe.send_time_us, max_send
                    )));
                }
                max_send = max_send.max(probe.send_time_us);
                pending.insert((probe.send_time_us, ledger_seq), probe);
                ledger_seq += 1;
                Ok(true)
            }
        }
    };

    for packet in packets {
        let packet = packet?;
        if packet.recv_time_us < max_recv.saturating_sub(SORT_TOLERANCE_US) {
            return Err(Error::data(format!(
                "packet trace unsorted at recv_time {} (seen {}); sort by recv_time first",
                packet.recv_time_us, max_recv
            )));
        }
        max_recv = max_recv.max(packet.recv_time_us);
        let horizon = packet.recv_time_us.saturating_add(SORT_TOLERANCE_US);
        while pull_probe(&mut pending, &mut probes, Some(horizon))? {}
        while let Some(entry) = pending.first_entry() {
            if entry.key().0 > packet.recv_time_us {
                break;
            }
            engine.insert_probe(entry.remove());
        }
        engine.finalize_expired(max_recv);
        engine.process_packet(packet);
    }
    while pull_probe(&mut pending, &mut probes, None)? {}
    for (_, probe) in std::mem::take(&mut pending) {
        engine.insert_probe(probe);
    }

    for id in 0..engine.entries.len() as u32 {
        engine.finalize(id);
    }
    let mut report = engine.report;
    report.responses.sort_by(|a, b| {
        (
            a.probe.send_time_us,
            a.probe.target_ip,
            a.probe.protocol.index(),
            &a.probe.token,
        )
            .cmp(&(
                b.probe.send_time_us,
                b.probe.target_ip,
                b.probe.protocol.index(),
                &b.probe.token,
            ))
    });
    Ok(report)
}
