//! Synthetic campaign generation: fabricates probe ledgers and packet
//! traces from declared generator populations, together with the exact
//! per-round ground truth the pipeline is expected to recover.
//!
//! Every fabricated response packet carries the token or quotation its
//! probe's matching rule keys on, so a noiseless campaign round-trips
//! through match and classify without loss. Injected background noise is
//! built to fail every rule: sources come from 240.0.0.0/4 (never probed
//! here), payloads contain no letters or digits (so no query name can be a
//! substring), TCP noise never sets SYN+ACK, ICMP noise is either an echo
//! request or an error quoting an unprobed address, and no noise packet
//! arrives on the probes' return port.

pub mod scenario;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::classifier::{
    classify_count, GeneratorProfile, PacketKind, RoundRecord, DEFAULT_BLOWBACK_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::matcher::MatchConfig;
use crate::model::{
    MatchToken, PacketRecord, ProbeProtocol, ProbeRecord, TcpFlags, Transport, MICROS_PER_DAY,
    MICROS_PER_SEC,
};
use crate::probe::DEFAULT_START_US;

/// Where fabricated responses are aimed: the prober's capture address.
pub const SCANNER_IP: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 1);

/// Port the responses come back to; mirrors the matcher's default
/// ephemeral probe source port.
const RESPONSE_PORT: u16 = 55_000;

/// Named preset reproducing the introductory single-probe observation:
/// one TCP/80 target answering with 32K packets, 1.6 MB, over 2.3 s,
/// from three source addresses.
pub const ANECDOTE_PRESET: &str = "anecdote-103-40-65-97";

/// Noise sources are drawn from 240.0.0.0/4, which generator specs are
/// forbidden to use, making "is noise" decidable from the address alone.
pub fn is_noise_source(ip: Ipv4Addr) -> bool {
    ip.octets()[0] >= 240
}

/// When a generator emits packets, relative to its probe's send time.
///
/// All second-based profiles place the packets for second `s` inside
/// `[s, s+1)` so per-second histograms reproduce the profile's closed
/// form exactly. Gaps are capped below the matcher's expiry window, which
/// keeps the probe's liveness chain unbroken for the whole response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimingProfile {
    /// Rate grows by `rate_step` pps each second: second s emits
    /// rate_step*(s+1) packets.
    Ramp { rate_step: u32, duration_s: u32 },
    /// `on_s` seconds at `rate` pps, `off_s` seconds of silence, repeated
    /// until `duration_s`.
    Pulse {
        on_s: u32,
        off_s: u32,
        rate: u32,
        duration_s: u32,
    },
    /// Instantaneous packet bursts separated by the given gaps;
    /// `gap_us[i]` sits between bursts i and i+1.
    Burst {
        burst_sizes: Vec<u32>,
        gap_us: Vec<i64>,
    },
    /// Flat `rate` pps for `duration_s` seconds.
    Constant { rate: u32, duration_s: u32 },
    /// Exactly one packet, at the probe instant.
    Single,
    /// No packets at all.
    Silent,
}

/// Cap on the packets a single spec may emit per round; a guard against
/// accidentally materializing an unbounded trace.
const MAX_PACKETS_PER_SPEC: u64 = 10_000_000;

impl TimingProfile {
    /// Packets emitted per active round, in closed form.
    pub fn packet_count(&self) -> u64 {
        match self {
            TimingProfile::Ramp { rate_step, duration_s } => {
                let d = *duration_s as u64;
                *rate_step as u64 * d * (d + 1) / 2
            }
            TimingProfile::Pulse { on_s, off_s, rate, duration_s } => {
                let cycle = (*on_s + *off_s) as u64;
                let on: u64 = (0..*duration_s as u64).filter(|s| s % cycle < *on_s as u64).count()
                    as u64;
                *rate as u64 * on
            }
            TimingProfile::Burst { burst_sizes, .. } => {
                burst_sizes.iter().map(|&b| b as u64).sum()
            }
            TimingProfile::Constant { rate, duration_s } => *rate as u64 * *duration_s as u64,
            TimingProfile::Single => 1,
            TimingProfile::Silent => 0,
        }
    }

    /// Offset of the last packet relative to the probe, zero when none.
    pub fn duration_us(&self) -> i64 {
        match self {
            TimingProfile::Ramp { duration_s, .. }
            | TimingProfile::Pulse { duration_s, .. }
            | TimingProfile::Constant { duration_s, .. } => *duration_s as i64 * MICROS_PER_SEC,
            TimingProfile::Burst { gap_us, .. } => gap_us.iter().sum(),
            TimingProfile::Single | TimingProfile::Silent => 0,
        }
    }

    /// Packet offsets in microseconds after the probe send, ascending.
    /// Second `s` of a rate-based profile emits at s*1s + j*(1s/rate),
    /// all strictly inside that second.
    pub fn offsets_us(&self) -> Vec<i64> {
        fn seconds_at_rates(rates: impl Iterator<Item = (u32, u32)>) -> Vec<i64> {
            let mut out = Vec::new();
            for (s, rate) in rates {
                let spacing = MICROS_PER_SEC / rate as i64;
                for j in 0..rate as i64 {
                    out.push(s as i64 * MICROS_PER_SEC + j * spacing);
                }
            }
            out
        }
        match self {
            TimingProfile::Ramp { rate_step, duration_s } => {
                seconds_at_rates((0..*duration_s).map(|s| (s, rate_step * (s + 1))))
            }
            TimingProfile::Pulse { on_s, off_s, rate, duration_s } => {
                let cycle = on_s + off_s;
                seconds_at_rates(
                    (0..*duration_s).filter(|s| s % cycle < *on_s).map(|s| (s, *rate)),
                )
            }
            TimingProfile::Burst { burst_sizes, gap_us } => {
                let mut out = Vec::new();
                let mut at = 0i64;
                for (i, &size) in burst_sizes.iter().enumerate() {
                    out.extend(std::iter::repeat(at).take(size as usize));
                    if let Some(gap) = gap_us.get(i) {
                        at += gap;
                    }
                }
                out
            }
            TimingProfile::Constant { rate, duration_s } => {
                seconds_at_rates((0..*duration_s).map(|s| (s, *rate)))
            }
            TimingProfile::Single => vec![0],
            TimingProfile::Silent => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let expiry = MatchConfig::default().expiry_window_us;
        match self {
            TimingProfile::Ramp { rate_step, .. } => {
                if *rate_step == 0 {
                    return Err(Error::validation("ramp rate_step must be positive"));
                }
            }
            TimingProfile::Pulse { on_s, off_s, rate, .. } => {
                if *on_s == 0 || *rate == 0 {
                    return Err(Error::validation("pulse on_s and rate must be positive"));
                }
                if (*off_s as i64) * MICROS_PER_SEC >= expiry {
                    return Err(Error::validation(format!(
                        "pulse off interval {off_s}s reaches the {}s probe expiry; \
                         the response tail would go unmatched",
                        expiry / MICROS_PER_SEC
                    )));
                }
            }
            TimingProfile::Burst { burst_sizes, gap_us } => {
                if gap_us.len() + 1 != burst_sizes.len() && !(burst_sizes.is_empty() && gap_us.is_empty()) {
                    return Err(Error::validation(format!(
                        "burst profile needs one gap between consecutive bursts: \
                         {} bursts but {} gaps",
                        burst_sizes.len(),
                        gap_us.len()
                    )));
                }
                if burst_sizes.iter().any(|&b| b == 0) {
                    return Err(Error::validation("burst sizes must be positive"));
                }
                if gap_us.iter().any(|&g| g < 0 || g >= expiry) {
                    return Err(Error::validation(format!(
                        "burst gaps must lie in [0, {}s)",
                        expiry / MICROS_PER_SEC
                    )));
                }
            }
            TimingProfile::Constant { rate, .. } => {
                if *rate == 0 {
                    return Err(Error::validation("constant rate must be positive"));
                }
            }
            TimingProfile::Single | TimingProfile::Silent => {}
        }
        if let TimingProfile::Ramp { rate_step, duration_s } = self {
            // Peak per-second rate; sub-second spacing needs rate <= 1M pps.
            if *rate_step as u64 * *duration_s as u64 > MICROS_PER_SEC as u64 {
                return Err(Error::validation("ramp peak rate exceeds 1M pps"));
            }
        }
        if let TimingProfile::Pulse { rate, .. } | TimingProfile::Constant { rate, .. } = self {
            if *rate as i64 > MICROS_PER_SEC {
                return Err(Error::validation("rates above 1M pps are not representable"));
            }
        }
        if self.packet_count() > MAX_PACKETS_PER_SPEC {
            return Err(Error::validation(format!(
                "timing profile would emit {} packets per round (cap {})",
                self.packet_count(),
                MAX_PACKETS_PER_SPEC
            )));
        }
        Ok(())
    }
}

/// Response-kind shares, indexed like [`PacketKind::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct PacketMix {
    shares: [f64; 5],
}

impl PacketMix {
    pub fn new(shares: [f64; 5]) -> Result<Self> {
        if shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::validation("packet mix shares must be non-negative"));
        }
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!(
                "packet mix shares must sum to 1 (got {sum})"
            )));
        }
        Ok(PacketMix { shares })
    }

    /// Everything in-protocol; the default for scenario entries.
    pub fn in_protocol_only() -> Self {
        PacketMix { shares: [1.0, 0.0, 0.0, 0.0, 0.0] }
    }

    pub fn shares(&self) -> &[f64; 5] {
        &self.shares
    }

    /// Split n packets across kinds by largest remainder, so each count
    /// is within one packet of n*share and the total is exactly n.
    pub fn apportion(&self, n: u64) -> [u64; 5] {
        let mut counts = [0u64; 5];
        let mut rema: Vec<(usize, f64)> = Vec::with_capacity(5);
        let mut assigned = 0u64;
        for (i, share) in self.shares.iter().enumerate() {
            let exact = n as f64 * share;
            counts[i] = exact.floor() as u64;
            assigned += counts[i];
            rema.push((i, exact - exact.floor()));
        }
        rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (i, _) in rema.into_iter().take((n - assigned) as usize) {
            counts[i] += 1;
        }
        counts
    }
}

/// One declared generator: the probed address, how it answers, and from
/// which source addresses.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub ip: Ipv4Addr,
    pub protocol: ProbeProtocol,
    pub timing: TimingProfile,
    /// Source addresses the response rotates over; the set of sources
    /// actually used becomes the ground-truth responder group.
    pub rg_members: Vec<Ipv4Addr>,
    pub packet_mix: PacketMix,
    /// Per-round presence; rounds past the end of the bitmap default to
    /// present, and an empty bitmap means present every round.
    pub churn: Vec<bool>,
    /// Overrides the per-kind default packet sizes when set.
    pub packet_size: Option<u32>,
}

impl GeneratorSpec {
    pub fn present_in(&self, round: u32) -> bool {
        self.churn.get(round as usize).copied().unwrap_or(true)
    }

    fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        let responds = !matches!(self.timing, TimingProfile::Silent);
        if responds && self.rg_members.is_empty() {
            return Err(Error::validation(format!(
                "spec {} responds but lists no rg_members",
                self.ip
            )));
        }
        let mut seen = HashSet::new();
        for member in &self.rg_members {
            if !seen.insert(*member) {
                return Err(Error::validation(format!(
                    "spec {} lists rg member {member} twice",
                    self.ip
                )));
            }
        }
        for addr in std::iter::once(&self.ip).chain(&self.rg_members) {
            if is_noise_source(*addr) {
                return Err(Error::validation(format!(
                    "address {addr} lies in 240.0.0.0/4, which is reserved for noise"
                )));
            }
        }
        if self.packet_size == Some(0) {
            return Err(Error::validation("packet_size override must be positive"));
        }
        Ok(())
    }
}

/// Campaign-wide knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub rounds: u32,
    /// Background radiation rate; zero disables noise.
    pub noise_pps: u32,
    pub seed: u64,
    /// Send time of the first probe of round 0.
    pub start_us: i64,
    /// Start-to-start spacing between rounds; must clear the longest
    /// response window so rounds cannot bleed into each other.
    pub round_gap_us: i64,
    /// Gap between consecutive probes within a round.
    pub probe_spacing_us: i64,
    /// DNS zone suffix for fabricated query names.
    pub zone: String,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            rounds: 1,
            noise_pps: 0,
            seed: 0,
            start_us: DEFAULT_START_US,
            round_gap_us: MICROS_PER_DAY,
            probe_spacing_us: 1_000,
            zone: "synth.example".into(),
        }
    }
}

impl CampaignConfig {
    fn validate(&self, specs: &[GeneratorSpec]) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::validation("campaign needs at least one round"));
        }
        if self.probe_spacing_us < 0 {
            return Err(Error::validation("probe spacing must be non-negative"));
        }
        if self.noise_pps as i64 > MICROS_PER_SEC {
            return Err(Error::validation("noise above 1M pps is not representable"));
        }
        if self.zone.is_empty()
            || !self.zone.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'.' || b == b'-')
        {
            return Err(Error::validation(
                "zone must be non-empty lowercase ascii (letters, digits, dots, hyphens)",
            ));
        }
        if self.rounds > 1 {
            let span = self.round_span_us(specs) + MatchConfig::default().expiry_window_us;
            if self.round_gap_us < span {
                return Err(Error::validation(format!(
                    "round gap {}s cannot contain a {}s response window; rounds would overlap",
                    self.round_gap_us / MICROS_PER_SEC,
                    span / MICROS_PER_SEC
                )));
            }
        }
        Ok(())
    }

    /// Probing span plus the longest response tail, from round start.
    fn round_span_us(&self, specs: &[GeneratorSpec]) -> i64 {
        let probing = specs.len() as i64 * self.probe_spacing_us;
        let longest = specs.iter().map(|s| s.timing.duration_us()).max().unwrap_or(0);
        probing + longest + MICROS_PER_SEC
    }
}

/// One generated round: its ledger, its merged trace (responses plus
/// noise, sorted by receive time), and how much of the trace is noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRound {
    pub round_id: u32,
    pub ledger: Vec<ProbeRecord>,
    pub trace: Vec<PacketRecord>,
    pub noise_packets: u64,
}

/// Full campaign: per-round artifacts plus the ground truth the pipeline
/// should recover, one profile per spec sorted by (ip, protocol).
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub rounds: Vec<CampaignRound>,
    pub truth: Vec<GeneratorProfile>,
}

/// Kinds whose matching rule pins the source to the probed address
/// (the probed-address port rule); everything else rotates over members.
fn pins_generator_src(protocol: ProbeProtocol, kind: PacketKind) -> bool {
    protocol == ProbeProtocol::Ntp && kind == PacketKind::InProtocol
}

/// Wire size when the spec does not override it.
fn default_size(protocol: ProbeProtocol, kind: PacketKind) -> u32 {
    match kind {
        PacketKind::InProtocol => match protocol {
            ProbeProtocol::Dns => 120,
            ProbeProtocol::Icmp => 74,
            ProbeProtocol::Ntp => 90,
            _ => 54,
        },
        PacketKind::Other => match protocol {
            ProbeProtocol::Dns => 120,
            p if p.is_tcp() => 54,
            _ => 70,
        },
        // ICMP error quotations: outer header plus the quoted excerpt.
        _ => 70,
    }
}

fn build_packet(
    spec: &GeneratorSpec,
    probe: &ProbeRecord,
    kind: PacketKind,
    recv: i64,
    src: Ipv4Addr,
    size: u32,
) -> PacketRecord {
    let base = |transport| PacketRecord::new(recv, src, SCANNER_IP, transport, size);
    let syn_ack = |src_port: u16| {
        let ack = match probe.token {
            MatchToken::TcpSeq(seq) => seq.wrapping_add(1),
            _ => 0,
        };
        base(Transport::Tcp)
            .with_ports(src_port, RESPONSE_PORT)
            .with_tcp(TcpFlags::SYN_ACK, ack)
    };
    match kind {
        PacketKind::InProtocol => match spec.protocol {
            ProbeProtocol::Dns => {
                let qname = match &probe.token {
                    MatchToken::DnsQname(q) => q.as_bytes(),
                    _ => &[],
                };
                base(Transport::Udp)
                    .with_ports(53, RESPONSE_PORT)
                    .with_payload(qname)
            }
            ProbeProtocol::Icmp => {
                let id = match probe.token {
                    MatchToken::IcmpEchoId(id) => id,
                    _ => 0,
                };
                base(Transport::Icmp).with_icmp(0, 0).with_echo_id(id)
            }
            ProbeProtocol::Ntp => base(Transport::Udp).with_ports(123, RESPONSE_PORT),
            p => syn_ack(p.tcp_port().unwrap_or(0)),
        },
        PacketKind::TtlExpired => base(Transport::Icmp).with_icmp(11, 0).with_quoted_dst(spec.ip),
        PacketKind::Redirect => base(Transport::Icmp).with_icmp(5, 1).with_quoted_dst(spec.ip),
        PacketKind::Unreachable => base(Transport::Icmp).with_icmp(3, 3).with_quoted_dst(spec.ip),
        PacketKind::Other => match spec.protocol {
            // Off-port answers still carrying the query name.
            ProbeProtocol::Dns => {
                let qname = match &probe.token {
                    MatchToken::DnsQname(q) => q.as_bytes(),
                    _ => &[],
                };
                base(Transport::Udp)
                    .with_ports(5353, RESPONSE_PORT)
                    .with_payload(qname)
            }
            p if p.is_tcp() => syn_ack(8080),
            // An ICMP type outside the tracked set, still quoting us.
            _ => base(Transport::Icmp).with_icmp(12, 0).with_quoted_dst(spec.ip),
        },
    }
}

fn noise_packet(rng: &mut ChaCha20Rng, recv: i64, shape: u64) -> PacketRecord {
    let src = Ipv4Addr::from(0xF000_0000 | (rng.gen::<u32>() & 0x0FFF_FFFF));
    let mut dst_port = rng.gen_range(1024..u16::MAX);
    if dst_port == RESPONSE_PORT {
        dst_port += 1;
    }
    let payload: Vec<u8> = (0..rng.gen_range(8..32)).map(|_| rng.gen_range(0u8..0x2D)).collect();
    match shape % 4 {
        0 => PacketRecord::new(recv, src, SCANNER_IP, Transport::Udp, 60)
            .with_ports(rng.gen_range(1024..u16::MAX), dst_port)
            .with_payload(payload),
        1 => PacketRecord::new(recv, src, SCANNER_IP, Transport::Tcp, 40)
            .with_ports(rng.gen_range(1024..u16::MAX), dst_port)
            .with_tcp(TcpFlags(TcpFlags::RST.0 | TcpFlags::ACK.0), rng.gen()),
        2 => PacketRecord::new(recv, src, SCANNER_IP, Transport::Icmp, 64)
            .with_icmp(8, 0)
            .with_echo_id(rng.gen())
            .with_payload(payload),
        _ => {
            let quoted = Ipv4Addr::from(0xF000_0000 | (rng.gen::<u32>() & 0x0FFF_FFFF));
            PacketRecord::new(recv, src, SCANNER_IP, Transport::Icmp, 70)
                .with_icmp(3, 1)
                .with_quoted_dst(quoted)
        }
    }
}

/// Generate a full campaign: `rounds` probe rounds over all specs, the
/// merged response traces, and the exact ground truth. Deterministic for
/// a fixed config.
pub fn generate_campaign(specs: &[GeneratorSpec], config: &CampaignConfig) -> Result<Campaign> {
    if specs.is_empty() {
        return Err(Error::validation("campaign has no generator specs"));
    }
    config.validate(specs)?;
    let mut ips = HashSet::new();
    for spec in specs {
        spec.validate()?;
        if !ips.insert(spec.ip) {
            return Err(Error::validation(format!("duplicate generator ip {}", spec.ip)));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut truth: BTreeMap<(Ipv4Addr, ProbeProtocol), GeneratorProfile> = BTreeMap::new();
    let mut rounds = Vec::with_capacity(config.rounds as usize);

    for round_id in 0..config.rounds {
        let round_start = config.start_us + round_id as i64 * config.round_gap_us;

        // Ledger first: tokens are sequential per protocol family, unique
        // within the round, so no two live probes can contend for a packet.
        let mut ledger = Vec::with_capacity(specs.len());
        let mut icmp_ids: u32 = 0;
        let mut tcp_seqs: u32 = 0;
        for (i, spec) in specs.iter().enumerate() {
            let token = match spec.protocol {
                ProbeProtocol::Dns => MatchToken::DnsQname(format!("g{i:05}.{}", config.zone)),
                ProbeProtocol::Icmp => {
                    if icmp_ids > u16::MAX as u32 {
                        return Err(Error::validation(
                            "more ICMP specs than distinct echo identifiers",
                        ));
                    }
                    let id = icmp_ids as u16;
                    icmp_ids += 1;
                    MatchToken::IcmpEchoId(id)
                }
                ProbeProtocol::Ntp => MatchToken::None,
                _ => {
                    // Stride 2 keeps seq and seq+1 disjoint across specs,
                    // so both acknowledgment forms stay unambiguous.
                    let seq = 0x2000_0000u32.wrapping_add(tcp_seqs.wrapping_mul(2));
                    tcp_seqs += 1;
                    MatchToken::TcpSeq(seq)
                }
            };
            ledger.push(ProbeRecord {
                send_time_us: round_start + i as i64 * config.probe_spacing_us,
                target_ip: spec.ip,
                protocol: spec.protocol,
                token,
                probe_size: spec.protocol.default_probe_size(),
            });
        }

        let mut trace: Vec<PacketRecord> = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            let probe = &ledger[i];
            let offsets = if spec.present_in(round_id) {
                spec.timing.offsets_us()
            } else {
                Vec::new()
            };
            let counts = spec.packet_mix.apportion(offsets.len() as u64);
            let mut kinds: Vec<PacketKind> = PacketKind::ALL
                .iter()
                .flat_map(|&k| std::iter::repeat(k).take(counts[k.index()] as usize))
                .collect();
            kinds.shuffle(&mut rng);

            let mut members = BTreeSet::new();
            let mut bytes = 0u64;
            for (j, (&offset, &kind)) in offsets.iter().zip(&kinds).enumerate() {
                let src = if pins_generator_src(spec.protocol, kind) {
                    spec.ip
                } else {
                    spec.rg_members[j % spec.rg_members.len()]
                };
                let size = spec.packet_size.unwrap_or_else(|| default_size(spec.protocol, kind));
                trace.push(build_packet(
                    spec,
                    probe,
                    kind,
                    probe.send_time_us + offset,
                    src,
                    size,
                ));
                members.insert(src);
                bytes += size as u64;
            }

            let profile = truth.entry((spec.ip, spec.protocol)).or_insert_with(|| {
                GeneratorProfile {
                    generator_ip: spec.ip,
                    protocol: spec.protocol,
                    rounds: Vec::new(),
                }
            });
            profile.rounds.push(RoundRecord {
                round_id,
                packet_count: offsets.len() as u64,
                byte_count: bytes,
                member_ips: members.into_iter().collect(),
                class: classify_count(offsets.len() as u64, DEFAULT_BLOWBACK_THRESHOLD),
            });
        }

        let mut noise_packets = 0u64;
        if config.noise_pps > 0 {
            let span = config.round_span_us(specs);
            let period = MICROS_PER_SEC / config.noise_pps as i64;
            let mut at = round_start;
            while at < round_start + span {
                trace.push(noise_packet(&mut rng, at, noise_packets));
                noise_packets += 1;
                at += period;
            }
        }
        trace.sort_by_key(|p| p.recv_time_us);

        rounds.push(CampaignRound { round_id, ledger, trace, noise_packets });
    }

    Ok(Campaign { rounds, truth: truth.into_values().collect() })
}

/// Look up a named generator preset.
pub fn preset(name: &str) -> Option<GeneratorSpec> {
    if name != ANECDOTE_PRESET {
        return None;
    }
    // Single TCP/80 probe drawing 32,768 packets (1,638,400 bytes at 50 B
    // each) across 2.3 seconds from three addresses: SYN/ACKs, stray TCP,
    // redirects, and TTL-exceeded errors.
    let mut burst_sizes = vec![3_000u32; 10];
    burst_sizes.push(2_768);
    Some(GeneratorSpec {
        ip: Ipv4Addr::new(103, 40, 65, 97),
        protocol: ProbeProtocol::Tcp80,
        timing: TimingProfile::Burst { burst_sizes, gap_us: vec![230_000; 10] },
        rg_members: vec![
            Ipv4Addr::new(103, 40, 65, 97),
            Ipv4Addr::new(103, 57, 177, 61),
            Ipv4Addr::new(43, 225, 214, 58),
        ],
        packet_mix: PacketMix::new([0.55, 0.15, 0.15, 0.0, 0.15])
            .expect("preset shares sum to 1"),
        churn: Vec::new(),
        packet_size: Some(50),
    })
}
