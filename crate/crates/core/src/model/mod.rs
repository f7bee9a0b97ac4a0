//! Shared domain types and the interchange record formats used by every
//! other module.
//!
//! All types here are immutable value objects after construction and are
//! safe to share across threads. Timestamps are integer microseconds since
//! the epoch throughout the toolkit. Addressing is IPv4 only; IPv6 input is
//! rejected at parse time.

pub mod ledger;
pub mod pcap;
pub mod trace;

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Microseconds in one second.
pub const MICROS_PER_SEC: i64 = 1_000_000;
/// Microseconds in one day.
pub const MICROS_PER_DAY: i64 = 86_400 * MICROS_PER_SEC;
/// Upper bound on the searchable payload excerpt kept per packet.
pub const PAYLOAD_CAP: usize = 512;

/// The six probe types used by the scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeProtocol {
    Dns,
    Icmp,
    Ntp,
    Tcp25,
    Tcp80,
    Tcp443,
}

impl ProbeProtocol {
    /// All protocols in canonical order.
    pub const ALL: [ProbeProtocol; 6] = [
        ProbeProtocol::Dns,
        ProbeProtocol::Icmp,
        ProbeProtocol::Ntp,
        ProbeProtocol::Tcp25,
        ProbeProtocol::Tcp80,
        ProbeProtocol::Tcp443,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeProtocol::Dns => "DNS",
            ProbeProtocol::Icmp => "ICMP",
            ProbeProtocol::Ntp => "NTP",
            ProbeProtocol::Tcp25 => "TCP25",
            ProbeProtocol::Tcp80 => "TCP80",
            ProbeProtocol::Tcp443 => "TCP443",
        }
    }

    pub fn is_tcp(&self) -> bool {
        matches!(
            self,
            ProbeProtocol::Tcp25 | ProbeProtocol::Tcp80 | ProbeProtocol::Tcp443
        )
    }

    /// Destination port probed for TCP scans.
    pub fn tcp_port(&self) -> Option<u16> {
        match self {
            ProbeProtocol::Tcp25 => Some(25),
            ProbeProtocol::Tcp80 => Some(80),
            ProbeProtocol::Tcp443 => Some(443),
            _ => None,
        }
    }

    /// Service port an in-protocol response is expected to come from.
    pub fn service_port(&self) -> Option<u16> {
        match self {
            ProbeProtocol::Dns => Some(53),
            ProbeProtocol::Ntp => Some(123),
            other => other.tcp_port(),
        }
    }

    /// Typical on-the-wire probe size in bytes for this protocol.
    pub fn default_probe_size(&self) -> u32 {
        match self {
            ProbeProtocol::Dns => 70,
            ProbeProtocol::Icmp => 74,
            ProbeProtocol::Ntp => 90,
            ProbeProtocol::Tcp25 | ProbeProtocol::Tcp80 | ProbeProtocol::Tcp443 => 60,
        }
    }

    /// Position in [`ProbeProtocol::ALL`]; stable sort/report ordering.
    pub fn index(&self) -> usize {
        ProbeProtocol::ALL
            .iter()
            .position(|p| p == self)
            .expect("protocol present in ALL")
    }
}

impl fmt::Display for ProbeProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DNS" => Ok(ProbeProtocol::Dns),
            "ICMP" => Ok(ProbeProtocol::Icmp),
            "NTP" => Ok(ProbeProtocol::Ntp),
            "TCP25" => Ok(ProbeProtocol::Tcp25),
            "TCP80" => Ok(ProbeProtocol::Tcp80),
            "TCP443" => Ok(ProbeProtocol::Tcp443),
            other => Err(Error::data(format!("unknown probe protocol {other:?}"))),
        }
    }
}

/// Probe-embedded token the matcher keys on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatchToken {
    /// DNS query name, stored case-normalized (lowercase).
    DnsQname(String),
    /// ICMP echo identifier.
    IcmpEchoId(u16),
    /// TCP sequence number of the SYN.
    TcpSeq(u32),
    /// NTP probes carry nothing distinguishing.
    None,
}

impl MatchToken {
    /// Whether the token variant is the one required for `protocol`.
    pub fn fits(&self, protocol: ProbeProtocol) -> bool {
        match (self, protocol) {
            (MatchToken::DnsQname(_), ProbeProtocol::Dns) => true,
            (MatchToken::IcmpEchoId(_), ProbeProtocol::Icmp) => true,
            (MatchToken::None, ProbeProtocol::Ntp) => true,
            (MatchToken::TcpSeq(_), p) if p.is_tcp() => true,
            _ => false,
        }
    }

    /// Variant name for diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            MatchToken::DnsQname(_) => "qname",
            MatchToken::IcmpEchoId(_) => "icmp id",
            MatchToken::TcpSeq(_) => "tcp seq",
            MatchToken::None => "empty",
        }
    }
}

/// One sent probe as recorded in the ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeRecord {
    pub send_time_us: i64,
    pub target_ip: Ipv4Addr,
    pub protocol: ProbeProtocol,
    pub token: MatchToken,
    pub probe_size: u32,
}

impl ProbeRecord {
    pub fn validate(&self) -> Result<()> {
        if self.probe_size == 0 {
            return Err(Error::data("probe_size must be > 0"));
        }
        if !self.token.fits(self.protocol) {
            return Err(Error::data(format!(
                "token {:?} inconsistent with protocol {}",
                self.token, self.protocol
            )));
        }
        if let MatchToken::DnsQname(q) = &self.token {
            if q.is_empty() {
                return Err(Error::data("DNS qname must be non-empty"));
            }
            if q.chars().any(|c| c.is_ascii_uppercase()) {
                return Err(Error::data("DNS qname must be stored lowercase"));
            }
        }
        Ok(())
    }
}

/// Transport of an incoming packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transport {
    Icmp,
    Tcp,
    Udp,
    /// Anything else (for example GRE); always left unmatched.
    Other,
}

impl Transport {
    pub fn as_str(&self) -> &'static str {
        match self {
            Transport::Icmp => "ICMP",
            Transport::Tcp => "TCP",
            Transport::Udp => "UDP",
            Transport::Other => "OTHER",
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ICMP" => Ok(Transport::Icmp),
            "TCP" => Ok(Transport::Tcp),
            "UDP" => Ok(Transport::Udp),
            "OTHER" => Ok(Transport::Other),
            other => Err(Error::data(format!("unknown transport {other:?}"))),
        }
    }
}

/// TCP flag set, rendered as tcpdump-style letters ("SA" for SYN/ACK).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);
    pub const SYN_ACK: TcpFlags = TcpFlags(0x12);

    pub fn contains(&self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_syn_ack(&self) -> bool {
        self.contains(TcpFlags::SYN_ACK)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return f.write_str(".");
        }
        for (bit, ch) in [
            (TcpFlags::FIN, 'F'),
            (TcpFlags::SYN, 'S'),
            (TcpFlags::RST, 'R'),
            (TcpFlags::PSH, 'P'),
            (TcpFlags::ACK, 'A'),
            (TcpFlags::URG, 'U'),
        ] {
            if self.contains(bit) {
                write!(f, "{ch}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for TcpFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "." {
            return Ok(TcpFlags(0));
        }
        let mut flags = 0u8;
        for ch in s.chars() {
            flags |= match ch {
                'F' => TcpFlags::FIN.0,
                'S' => TcpFlags::SYN.0,
                'R' => TcpFlags::RST.0,
                'P' => TcpFlags::PSH.0,
                'A' => TcpFlags::ACK.0,
                'U' => TcpFlags::URG.0,
                other => return Err(Error::data(format!("unknown TCP flag {other:?}"))),
            };
        }
        Ok(TcpFlags(flags))
    }
}

/// ICMP types that carry a quotation of the offending packet.
pub fn icmp_type_quotes(icmp_type: u8) -> bool {
    matches!(icmp_type, 3 | 4 | 5 | 11 | 12)
}

/// One received packet in normalized form.
///
/// Optional fields follow the transport: ports are present exactly for
/// TCP/UDP, the icmp_* fields only for ICMP, and `quoted_dst_ip` only for
/// ICMP error messages whose quotation was long enough to decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub recv_time_us: i64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub transport: Transport,
    /// On-the-wire frame size in bytes, taken verbatim from the capture.
    pub size: u32,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub tcp_flags: Option<TcpFlags>,
    pub tcp_ack: Option<u32>,
    pub icmp_type: Option<u8>,
    pub icmp_code: Option<u8>,
    pub icmp_echo_id: Option<u16>,
    /// Destination address quoted inside an ICMP error message.
    pub quoted_dst_ip: Option<Ipv4Addr>,
    /// Searchable payload excerpt (UDP/TCP payload, echo payload, or the
    /// quoted payload of an ICMP error), capped at [`PAYLOAD_CAP`] bytes.
    pub payload: Option<Box<[u8]>>,
}

impl PacketRecord {
    /// Bare record with the given addressing; optional fields unset.
    pub fn new(
        recv_time_us: i64,
        src_ip: Ipv4Addr,
        dst_ip: Ipv4Addr,
        transport: Transport,
        size: u32,
    ) -> Self {
        PacketRecord {
            recv_time_us,
            src_ip,
            dst_ip,
            transport,
            size,
            src_port: None,
            dst_port: None,
            tcp_flags: None,
            tcp_ack: None,
            icmp_type: None,
            icmp_code: None,
            icmp_echo_id: None,
            quoted_dst_ip: None,
            payload: None,
        }
    }

    pub fn with_ports(mut self, src_port: u16, dst_port: u16) -> Self {
        self.src_port = Some(src_port);
        self.dst_port = Some(dst_port);
        self
    }

    pub fn with_tcp(mut self, flags: TcpFlags, ack: u32) -> Self {
        self.tcp_flags = Some(flags);
        self.tcp_ack = Some(ack);
        self
    }

    pub fn with_icmp(mut self, icmp_type: u8, icmp_code: u8) -> Self {
        self.icmp_type = Some(icmp_type);
        self.icmp_code = Some(icmp_code);
        self
    }

    pub fn with_echo_id(mut self, id: u16) -> Self {
        self.icmp_echo_id = Some(id);
        self
    }

    pub fn with_quoted_dst(mut self, dst: Ipv4Addr) -> Self {
        self.quoted_dst_ip = Some(dst);
        self
    }

    pub fn with_payload(mut self, payload: impl AsRef<[u8]>) -> Self {
        let bytes = payload.as_ref();
        let cap = bytes.len().min(PAYLOAD_CAP);
        self.payload = Some(bytes[..cap].to_vec().into_boxed_slice());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::data("packet size must be > 0"));
        }
        let has_ports = self.src_port.is_some() || self.dst_port.is_some();
        match self.transport {
            Transport::Tcp | Transport::Udp => {
                if self.src_port.is_none() || self.dst_port.is_none() {
                    return Err(Error::data("TCP/UDP packet missing ports"));
                }
                if self.icmp_type.is_some() || self.icmp_code.is_some() {
                    return Err(Error::data("TCP/UDP packet with ICMP fields"));
                }
            }
            Transport::Icmp => {
                if has_ports {
                    return Err(Error::data("ICMP packet with ports set"));
                }
            }
            Transport::Other => {
                if has_ports || self.icmp_type.is_some() {
                    return Err(Error::data("OTHER packet with transport fields set"));
                }
            }
        }
        if let Some(q) = self.quoted_dst_ip {
            let quoting = self.transport == Transport::Icmp
                && self.icmp_type.map(icmp_type_quotes).unwrap_or(false);
            if !quoting {
                return Err(Error::data(format!(
                    "quoted_dst_ip {q} on a packet that is not a quoting ICMP error"
                )));
            }
        }
        if let Some(p) = &self.payload {
            if p.len() > PAYLOAD_CAP {
                return Err(Error::data("payload excerpt exceeds cap"));
            }
        }
        Ok(())
    }
}

/// Matching rule that attributed a packet to a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatchRule {
    /// DNS query string found in the packet payload.
    Ps1,
    /// TCP SYN/ACK acknowledgment matching a probe sequence number.
    Ps2,
    /// ICMP echo reply matching a probe echo identifier.
    Ps3,
    /// ICMP quotation naming a probed destination.
    Pa1,
    /// Source address is a probed target and the packet hits our static
    /// ephemeral port.
    Pa2,
}

impl MatchRule {
    pub const ALL: [MatchRule; 5] = [
        MatchRule::Ps1,
        MatchRule::Ps2,
        MatchRule::Ps3,
        MatchRule::Pa1,
        MatchRule::Pa2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MatchRule::Ps1 => "PS1",
            MatchRule::Ps2 => "PS2",
            MatchRule::Ps3 => "PS3",
            MatchRule::Pa1 => "PA1",
            MatchRule::Pa2 => "PA2",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            MatchRule::Ps1 => 0,
            MatchRule::Ps2 => 1,
            MatchRule::Ps3 => 2,
            MatchRule::Pa1 => 3,
            MatchRule::Pa2 => 4,
        }
    }
}

impl fmt::Display for MatchRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PS1" => Ok(MatchRule::Ps1),
            "PS2" => Ok(MatchRule::Ps2),
            "PS3" => Ok(MatchRule::Ps3),
            "PA1" => Ok(MatchRule::Pa1),
            "PA2" => Ok(MatchRule::Pa2),
            other => Err(Error::data(format!("unknown match rule {other:?}"))),
        }
    }
}

/// A probe together with all packets attributed to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedResponse {
    pub probe: ProbeRecord,
    /// Attributed packets ordered by receive time.
    pub packets: Vec<(PacketRecord, MatchRule)>,
}

impl MatchedResponse {
    pub fn packet_count(&self) -> u64 {
        self.packets.len() as u64
    }

    pub fn byte_count(&self) -> u64 {
        self.packets.iter().map(|(p, _)| p.size as u64).sum()
    }

    /// Distinct source addresses over the attributed packets.
    pub fn member_ips(&self) -> BTreeSet<Ipv4Addr> {
        self.packets.iter().map(|(p, _)| p.src_ip).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = i64::MIN;
        for (p, _) in &self.packets {
            if p.recv_time_us < self.probe.send_time_us {
                return Err(Error::data("response packet precedes its probe"));
            }
            if p.recv_time_us < last {
                return Err(Error::data("response packets out of order"));
            }
            last = p.recv_time_us;
        }
        Ok(())
    }
}

/// The set of addresses whose traffic one probe triggered.
///
/// The generator (the probed target) may or may not appear among the
/// members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponderGroup {
    pub generator_ip: Ipv4Addr,
    pub member_ips: BTreeSet<Ipv4Addr>,
    pub packet_count: u64,
    pub byte_count: u64,
}

impl ResponderGroup {
    pub fn from_response(response: &MatchedResponse) -> Self {
        ResponderGroup {
            generator_ip: response.probe.target_ip,
            member_ips: response.member_ips(),
            packet_count: response.packet_count(),
            byte_count: response.byte_count(),
        }
    }
}

/// Parse an IPv4 address, rejecting IPv6 with a distinct message.
pub fn parse_ipv4(s: &str) -> Result<Ipv4Addr> {
    if s.contains(':') {
        return Err(Error::data(format!(
            "IPv6 address {s:?} not supported; the toolkit is IPv4 only"
        )));
    }
    s.parse::<Ipv4Addr>()
        .map_err(|_| Error::data(format!("invalid IPv4 address {s:?}")))
}

/// An IPv4 prefix in CIDR notation. Host bits below the prefix length are
/// masked off on construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cidr {
    base: u32,
    len: u8,
}

impl Cidr {
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self> {
        if len > 32 {
            return Err(Error::data(format!("prefix length {len} exceeds 32")));
        }
        let raw = u32::from(addr);
        let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
        Ok(Cidr { base: raw & mask, len })
    }

    pub fn prefix_len(&self) -> u8 {
        self.len
    }

    pub fn base(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.base)
    }

    /// Last address covered by the prefix.
    pub fn last(&self) -> Ipv4Addr {
        let span = if self.len == 0 { u32::MAX } else { (1u64 << (32 - self.len)) as u32 - 1 };
        Ipv4Addr::from(self.base | span)
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        let mask = if self.len == 0 { 0 } else { u32::MAX << (32 - self.len) };
        u32::from(ip) & mask == self.base
    }

    /// Number of addresses the prefix covers.
    pub fn address_count(&self) -> u64 {
        1u64 << (32 - self.len)
    }

    /// The `len`-bit prefix value, used as a trie key.
    pub fn bits(&self) -> u32 {
        self.base
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.base), self.len)
    }
}

impl FromStr for Cidr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| Error::data(format!("CIDR {s:?} missing '/'")))?;
        let addr = parse_ipv4(addr)?;
        let len: u8 = len
            .parse()
            .map_err(|_| Error::data(format!("bad prefix length in {s:?}")))?;
        Cidr::new(addr, len)
    }
}

/// RFC 1071 ones-complement checksum over `bytes`, used for IPv4, ICMP, and
/// (with a pseudo-header prepended) TCP.
pub(crate) fn inet_checksum(bytes: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in bytes.chunks(2) {
        let word = if chunk.len() == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            u16::from_be_bytes([chunk[0], 0])
        };
        sum += word as u32;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_names_round_trip() {
        for p in ProbeProtocol::ALL {
            assert_eq!(p.as_str().parse::<ProbeProtocol>().unwrap(), p);
        }
    }

    #[test]
    fn token_protocol_consistency() {
        assert!(MatchToken::DnsQname("a.example".into()).fits(ProbeProtocol::Dns));
        assert!(MatchToken::TcpSeq(1).fits(ProbeProtocol::Tcp443));
        assert!(MatchToken::None.fits(ProbeProtocol::Ntp));
        assert!(!MatchToken::None.fits(ProbeProtocol::Dns));
        assert!(!MatchToken::IcmpEchoId(7).fits(ProbeProtocol::Tcp25));
    }

    #[test]
    fn tcp_flags_format_and_parse() {
        assert_eq!(TcpFlags::SYN_ACK.to_string(), "SA");
        assert_eq!("SA".parse::<TcpFlags>().unwrap(), TcpFlags::SYN_ACK);
        assert_eq!(".".parse::<TcpFlags>().unwrap(), TcpFlags(0));
        assert!("Z".parse::<TcpFlags>().is_err());
    }

    #[test]
    fn packet_validation_catches_port_transport_mismatch() {
        let ip = Ipv4Addr::new(1, 2, 3, 4);
        let udp_no_ports = PacketRecord::new(0, ip, ip, Transport::Udp, 60);
        assert!(udp_no_ports.validate().is_err());

        let icmp_with_ports =
            PacketRecord::new(0, ip, ip, Transport::Icmp, 60).with_ports(1, 2);
        assert!(icmp_with_ports.validate().is_err());

        let quoted_on_echo = PacketRecord::new(0, ip, ip, Transport::Icmp, 60)
            .with_icmp(0, 0)
            .with_quoted_dst(ip);
        assert!(quoted_on_echo.validate().is_err());

        let quoted_on_error = PacketRecord::new(0, ip, ip, Transport::Icmp, 60)
            .with_icmp(11, 0)
            .with_quoted_dst(ip);
        assert!(quoted_on_error.validate().is_ok());
    }

    #[test]
    fn ipv6_rejected_with_clear_error() {
        let err = parse_ipv4("2001:db8::1").unwrap_err();
        assert!(err.to_string().contains("IPv6"));
    }

    #[test]
    fn payload_is_capped() {
        let ip = Ipv4Addr::new(1, 2, 3, 4);
        let p = PacketRecord::new(0, ip, ip, Transport::Udp, 1500)
            .with_ports(53, 55000)
            .with_payload(vec![0u8; 2000]);
        assert_eq!(p.payload.as_ref().unwrap().len(), PAYLOAD_CAP);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn cidr_masks_host_bits_and_tests_containment() {
        let c: Cidr = "10.1.2.3/8".parse().unwrap();
        assert_eq!(c.to_string(), "10.0.0.0/8");
        assert!(c.contains(Ipv4Addr::new(10, 255, 0, 1)));
        assert!(!c.contains(Ipv4Addr::new(11, 0, 0, 1)));
        assert_eq!(c.address_count(), 1 << 24);
        assert_eq!(c.last(), Ipv4Addr::new(10, 255, 255, 255));

        let host: Cidr = "192.0.2.7/32".parse().unwrap();
        assert!(host.contains(Ipv4Addr::new(192, 0, 2, 7)));
        assert_eq!(host.address_count(), 1);

        let all: Cidr = "0.0.0.0/0".parse().unwrap();
        assert!(all.contains(Ipv4Addr::new(203, 0, 113, 9)));

        assert!("1.2.3.4/33".parse::<Cidr>().is_err());
        assert!("1.2.3.4".parse::<Cidr>().is_err());
    }

    #[test]
    fn checksum_matches_known_header() {
        // Worked example from RFC 1071 folklore: a 20-byte header whose
        // checksum field is zeroed must verify to the inserted value.
        let mut header = [
            0x45u8, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0,
            0xa8, 0x00, 0x01, 0xc0, 0xa8, 0x00, 0xc7,
        ];
        let csum = inet_checksum(&header);
        assert_eq!(csum, 0xb861);
        header[10..12].copy_from_slice(&csum.to_be_bytes());
        assert_eq!(inet_checksum(&header), 0);
    }
}
