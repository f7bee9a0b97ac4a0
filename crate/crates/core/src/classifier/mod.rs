//! Responder-group classification and scan-level aggregates.
//!
//! A probed target that returns at least one attributable packet is a
//! responder group generator (RGG). Its response class follows from the
//! packet count alone: one packet is SINGLE, two or three MULTIPACKET, and
//! four or more BLOWBACK. Targets probed but never heard from are SILENT.
//! On top of the per-target profiles this module computes scan summaries
//! (counts, amplification ratios) and the packet-type breakdown of
//! multipacket response traffic.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{
    MatchRule, MatchedResponse, PacketRecord, ProbeProtocol, ProbeRecord, Transport,
};

/// Minimum packets for a response to count as blowback.
pub const DEFAULT_BLOWBACK_THRESHOLD: u64 = 4;

/// Response class of one probed target in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResponseClass {
    Silent,
    Single,
    Multipacket,
    Blowback,
}

impl ResponseClass {
    pub const ALL: [ResponseClass; 4] = [
        ResponseClass::Silent,
        ResponseClass::Single,
        ResponseClass::Multipacket,
        ResponseClass::Blowback,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ResponseClass::Silent => "SILENT",
            ResponseClass::Single => "SINGLE",
            ResponseClass::Multipacket => "MULTIPACKET",
            ResponseClass::Blowback => "BLOWBACK",
        }
    }
}

impl fmt::Display for ResponseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResponseClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SILENT" => Ok(ResponseClass::Silent),
            "SINGLE" => Ok(ResponseClass::Single),
            "MULTIPACKET" => Ok(ResponseClass::Multipacket),
            "BLOWBACK" => Ok(ResponseClass::Blowback),
            other => Err(Error::data(format!("unknown response class {other:?}"))),
        }
    }
}

/// Class as a pure function of the packet count. The threshold is the
/// blowback floor; the multipacket band is everything from two packets up
/// to it.
pub fn classify_count(packet_count: u64, blowback_threshold: u64) -> ResponseClass {
    debug_assert!(blowback_threshold >= 2);
    match packet_count {
        0 => ResponseClass::Silent,
        1 => ResponseClass::Single,
        n if n < blowback_threshold => ResponseClass::Multipacket,
        _ => ResponseClass::Blowback,
    }
}

/// One round's worth of response traffic for a single generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundRecord {
    pub round_id: u32,
    pub packet_count: u64,
    pub byte_count: u64,
    /// Distinct source addresses seen in the response, ascending.
    pub member_ips: Vec<Ipv4Addr>,
    pub class: ResponseClass,
}

/// Per-target classification across one or more rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorProfile {
    pub generator_ip: Ipv4Addr,
    pub protocol: ProbeProtocol,
    /// Ascending by round id; at most one record per round.
    pub rounds: Vec<RoundRecord>,
}

impl GeneratorProfile {
    pub fn round(&self, round_id: u32) -> Option<&RoundRecord> {
        self.rounds.iter().find(|r| r.round_id == round_id)
    }
}

fn round_from_response(
    response: &MatchedResponse,
    round_id: u32,
    blowback_threshold: u64,
) -> RoundRecord {
    let mut member_ips: Vec<Ipv4Addr> = response.packets.iter().map(|(p, _)| p.src_ip).collect();
    member_ips.sort_unstable();
    member_ips.dedup();
    let packet_count = response.packets.len() as u64;
    let byte_count = response.packets.iter().map(|(p, _)| p.size as u64).sum();
    RoundRecord {
        round_id,
        packet_count,
        byte_count,
        member_ips,
        class: classify_count(packet_count, blowback_threshold),
    }
}

/// Profiles for every target that responded in one round. A target probed
/// twice in the same round has no well-defined response attribution, so a
/// duplicate (target, protocol) is a fatal input error.
pub fn build_profiles(
    responses: &[MatchedResponse],
    round_id: u32,
    blowback_threshold: u64,
) -> Result<Vec<GeneratorProfile>> {
    if blowback_threshold < 2 {
        return Err(Error::validation(
            "blowback threshold must be at least 2 packets",
        ));
    }
    let mut profiles: BTreeMap<(Ipv4Addr, ProbeProtocol), GeneratorProfile> = BTreeMap::new();
    for response in responses {
        let key = (response.probe.target_ip, response.probe.protocol);
        if profiles.contains_key(&key) {
            return Err(Error::data(format!(
                "duplicate probe to {} over {} in round {round_id}",
                key.0, key.1
            )));
        }
        profiles.insert(
            key,
            GeneratorProfile {
                generator_ip: key.0,
                protocol: key.1,
                rounds: vec![round_from_response(response, round_id, blowback_threshold)],
            },
        );
    }
    Ok(profiles.into_values().collect())
}

/// Like [`build_profiles`], but seeded from the probe ledger so targets
/// that never answered appear as SILENT entries. Every response must trace
/// back to a ledger line.
pub fn build_profiles_with_ledger(
    probes: &[ProbeRecord],
    responses: &[MatchedResponse],
    round_id: u32,
    blowback_threshold: u64,
) -> Result<Vec<GeneratorProfile>> {
    if blowback_threshold < 2 {
        return Err(Error::validation(
            "blowback threshold must be at least 2 packets",
        ));
    }
    let mut profiles: BTreeMap<(Ipv4Addr, ProbeProtocol), GeneratorProfile> = BTreeMap::new();
    for probe in probes {
        let key = (probe.target_ip, probe.protocol);
        if profiles.contains_key(&key) {
            return Err(Error::data(format!(
                "duplicate probe to {} over {} in round {round_id}",
                key.0, key.1
            )));
        }
        profiles.insert(
            key,
            GeneratorProfile {
                generator_ip: key.0,
                protocol: key.1,
                rounds: vec![RoundRecord {
                    round_id,
                    packet_count: 0,
                    byte_count: 0,
                    member_ips: Vec::new(),
                    class: ResponseClass::Silent,
                }],
            },
        );
    }
    for response in responses {
        let key = (response.probe.target_ip, response.probe.protocol);
        let profile = profiles.get_mut(&key).ok_or_else(|| {
            Error::data(format!(
                "response for {} over {} has no ledger entry in round {round_id}",
                key.0, key.1
            ))
        })?;
        let record = &mut profile.rounds[0];
        if record.class != ResponseClass::Silent {
            return Err(Error::data(format!(
                "two responses attributed to {} over {} in round {round_id}",
                key.0, key.1
            )));
        }
        *record = round_from_response(response, round_id, blowback_threshold);
    }
    Ok(profiles.into_values().collect())
}

/// Merge per-round profile sets (one `build_profiles*` output per round)
/// into a single profile per generator spanning every round seen.
pub fn merge_profiles<I>(sets: I) -> Result<Vec<GeneratorProfile>>
where
    I: IntoIterator<Item = Vec<GeneratorProfile>>,
{
    let mut merged: BTreeMap<(Ipv4Addr, ProbeProtocol), GeneratorProfile> = BTreeMap::new();
    for set in sets {
        for profile in set {
            let key = (profile.generator_ip, profile.protocol);
            let entry = merged.entry(key).or_insert_with(|| GeneratorProfile {
                generator_ip: key.0,
                protocol: key.1,
                rounds: Vec::new(),
            });
            for round in profile.rounds {
                if entry.rounds.iter().any(|r| r.round_id == round.round_id) {
                    return Err(Error::data(format!(
                        "duplicate round {} for {} over {}",
                        round.round_id, key.0, key.1
                    )));
                }
                entry.rounds.push(round);
            }
        }
    }
    let mut out: Vec<GeneratorProfile> = merged.into_values().collect();
    for profile in &mut out {
        profile.rounds.sort_by_key(|r| r.round_id);
    }
    Ok(out)
}

/// Probe-side totals of one round's ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProbeTotals {
    pub packets: u64,
    pub bytes: u64,
}

pub fn probe_totals(probes: &[ProbeRecord]) -> ProbeTotals {
    ProbeTotals {
        packets: probes.len() as u64,
        bytes: probes.iter().map(|p| p.probe_size as u64).sum(),
    }
}

/// Scan-level aggregates over one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSummary {
    pub total_rggs: u64,
    pub multipacket_rggs: u64,
    pub blowback_rggs: u64,
    /// Packets from BLOWBACK generators over packets from all multipacket
    /// generators (MULTIPACKET and BLOWBACK); undefined without multipacket
    /// traffic.
    pub blowback_share_of_multipacket_traffic: Option<f64>,
    pub probe_packets: u64,
    pub probe_bytes: u64,
    pub response_packets: u64,
    pub response_bytes: u64,
    /// response_packets / probe_packets; undefined when nothing was probed.
    pub packet_amplification: Option<f64>,
    /// response_bytes / probe_bytes; undefined for an empty probe volume.
    pub volume_amplification: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Aggregate one round's records into a summary. Callers select the round:
/// pass each profile's record for it.
pub fn summarize_scan<'a, I>(records: I, totals: ProbeTotals) -> ScanSummary
where
    I: IntoIterator<Item = &'a RoundRecord>,
{
    let mut total_rggs = 0u64;
    let mut multipacket_rggs = 0u64;
    let mut blowback_rggs = 0u64;
    let mut response_packets = 0u64;
    let mut response_bytes = 0u64;
    let mut multipacket_traffic = 0u64;
    let mut blowback_traffic = 0u64;
    for record in records {
        response_packets += record.packet_count;
        response_bytes += record.byte_count;
        match record.class {
            ResponseClass::Silent => continue,
            ResponseClass::Single => {}
            ResponseClass::Multipacket => {
                multipacket_rggs += 1;
                multipacket_traffic += record.packet_count;
            }
            ResponseClass::Blowback => {
                multipacket_rggs += 1;
                blowback_rggs += 1;
                multipacket_traffic += record.packet_count;
                blowback_traffic += record.packet_count;
            }
        }
        total_rggs += 1;
    }
    ScanSummary {
        total_rggs,
        multipacket_rggs,
        blowback_rggs,
        blowback_share_of_multipacket_traffic: ratio(blowback_traffic, multipacket_traffic),
        probe_packets: totals.packets,
        probe_bytes: totals.bytes,
        response_packets,
        response_bytes,
        packet_amplification: ratio(response_packets, totals.packets),
        volume_amplification: ratio(response_bytes, totals.bytes),
    }
}

/// Buckets for the packet-type breakdown of multipacket response traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    /// The answer the probed service would legitimately send.
    InProtocol,
    /// ICMP time exceeded in transit (type 11, code 0).
    TtlExpired,
    /// ICMP redirect (type 5, any code).
    Redirect,
    /// ICMP destination unreachable (type 3, any code).
    Unreachable,
    Other,
}

impl PacketKind {
    pub const ALL: [PacketKind; 5] = [
        PacketKind::InProtocol,
        PacketKind::TtlExpired,
        PacketKind::Redirect,
        PacketKind::Unreachable,
        PacketKind::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PacketKind::InProtocol => "in_protocol",
            PacketKind::TtlExpired => "ttl_expired",
            PacketKind::Redirect => "redirect",
            PacketKind::Unreachable => "unreachable",
            PacketKind::Other => "other",
        }
    }

    pub fn index(&self) -> usize {
        PacketKind::ALL
            .iter()
            .position(|k| k == self)
            .expect("kind present in ALL")
    }
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PacketKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PacketKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown packet kind {s:?}")))
    }
}

fn is_in_protocol(protocol: ProbeProtocol, packet: &PacketRecord, rule: MatchRule) -> bool {
    match protocol {
        ProbeProtocol::Dns => {
            packet.transport == Transport::Udp
                && packet.src_port == Some(53)
                && rule == MatchRule::Ps1
        }
        ProbeProtocol::Icmp => packet.transport == Transport::Icmp && packet.icmp_type == Some(0),
        ProbeProtocol::Ntp => packet.transport == Transport::Udp && packet.src_port == Some(123),
        ProbeProtocol::Tcp443 | ProbeProtocol::Tcp25 | ProbeProtocol::Tcp80 => {
            packet.transport == Transport::Tcp
                && packet.src_port == protocol.tcp_port()
        }
    }
}

/// Bucket one attributed packet, given the protocol of the probe it
/// answered.
pub fn packet_kind(protocol: ProbeProtocol, packet: &PacketRecord, rule: MatchRule) -> PacketKind {
    if is_in_protocol(protocol, packet, rule) {
        return PacketKind::InProtocol;
    }
    if packet.transport == Transport::Icmp {
        match (packet.icmp_type, packet.icmp_code) {
            (Some(11), Some(0)) => return PacketKind::TtlExpired,
            (Some(5), _) => return PacketKind::Redirect,
            (Some(3), _) => return PacketKind::Unreachable,
            _ => {}
        }
    }
    PacketKind::Other
}

/// Packet counts per kind, in [`PacketKind::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TypeBreakdown {
    pub counts: [u64; 5],
}

impl TypeBreakdown {
    pub fn from_counts(counts: [u64; 5]) -> Self {
        TypeBreakdown { counts }
    }

    pub fn add(&mut self, kind: PacketKind) {
        self.counts[kind.index()] += 1;
    }

    pub fn merge(&mut self, other: &TypeBreakdown) {
        for (mine, theirs) in self.counts.iter_mut().zip(other.counts) {
            *mine += theirs;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of one bucket in percent; zero on an empty breakdown.
    pub fn share_percent(&self, kind: PacketKind) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        100.0 * self.counts[kind.index()] as f64 / total as f64
    }
}

/// Bucket every packet of the given responses. Callers wanting the
/// multipacket-traffic view restrict the input to responses with at least
/// two packets first.
pub fn response_type_breakdown(responses: &[MatchedResponse]) -> TypeBreakdown {
    let mut breakdown = TypeBreakdown::default();
    for response in responses {
        for (packet, rule) in &response.packets {
            breakdown.add(packet_kind(response.probe.protocol, packet, *rule));
        }
    }
    breakdown
}

/// One profile round per line:
/// `generator_ip,protocol,round_id,class,packet_count,byte_count,members`
/// with members `;`-joined or `-` when empty.
pub fn format_profile_line(ip: Ipv4Addr, protocol: ProbeProtocol, r: &RoundRecord) -> String {
    let members = if r.member_ips.is_empty() {
        "-".to_string()
    } else {
        r.member_ips
            .iter()
            .map(|ip| ip.to_string())
            .collect::<Vec<_>>()
            .join(";")
    };
    format!(
        "{},{},{},{},{},{},{}",
        ip, protocol, r.round_id, r.class, r.packet_count, r.byte_count, members
    )
}

pub fn parse_profile_line(line: &str) -> Result<(Ipv4Addr, ProbeProtocol, RoundRecord)> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 7 {
        return Err(Error::data(format!(
            "expected 7 profile fields, got {}: {line:?}",
            fields.len()
        )));
    }
    let ip = crate::model::parse_ipv4(fields[0])?;
    let protocol: ProbeProtocol = fields[1].parse()?;
    let round_id: u32 = fields[2]
        .parse()
        .map_err(|_| Error::data(format!("bad round id {:?}", fields[2])))?;
    let class: ResponseClass = fields[3].parse()?;
    let packet_count: u64 = fields[4]
        .parse()
        .map_err(|_| Error::data(format!("bad packet count {:?}", fields[4])))?;
    let byte_count: u64 = fields[5]
        .parse()
        .map_err(|_| Error::data(format!("bad byte count {:?}", fields[5])))?;
    let member_ips = if fields[6] == "-" {
        Vec::new()
    } else {
        fields[6]
            .split(';')
            .map(crate::model::parse_ipv4)
            .collect::<Result<Vec<_>>>()?
    };
    Ok((
        ip,
        protocol,
        RoundRecord {
            round_id,
            packet_count,
            byte_count,
            member_ips,
            class,
        },
    ))
}

pub fn write_profiles<W: Write>(out: &mut W, profiles: &[GeneratorProfile]) -> Result<()> {
    for profile in profiles {
        for round in &profile.rounds {
            writeln!(
                out,
                "{}",
                format_profile_line(profile.generator_ip, profile.protocol, round)
            )?;
        }
    }
    Ok(())
}

/// Read profile lines back, grouping rounds per (generator, protocol). A
/// repeated (generator, protocol, round) is a fatal duplicate.
pub fn read_profiles<R: BufRead>(input: R) -> Result<Vec<GeneratorProfile>> {
    let mut profiles: BTreeMap<(Ipv4Addr, ProbeProtocol), GeneratorProfile> = BTreeMap::new();
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (ip, protocol, record) = parse_profile_line(trimmed)?;
        let profile = profiles
            .entry((ip, protocol))
            .or_insert_with(|| GeneratorProfile {
                generator_ip: ip,
                protocol,
                rounds: Vec::new(),
            });
        if profile.rounds.iter().any(|r| r.round_id == record.round_id) {
            return Err(Error::data(format!(
                "duplicate profile for {ip} over {protocol} in round {}",
                record.round_id
            )));
        }
        profile.rounds.push(record);
    }
    let mut out: Vec<GeneratorProfile> = profiles.into_values().collect();
    for profile in &mut out {
        profile.rounds.sort_by_key(|r| r.round_id);
    }
    Ok(out)
}
