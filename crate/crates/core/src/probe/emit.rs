//! Opt-in probe emission toward lab sinks.
//!
//! Emission refuses to run unless every target sits inside an explicitly
//! allowed prefix; the default workflow is ledger-only. DNS and NTP probes
//! go out through a plain UDP socket. ICMP echo and TCP SYN probes need a
//! raw socket, so those paths require CAP_NET_RAW and report a clear error
//! without it.

use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::time::Duration;

use socket2::{Domain, Protocol, Socket, Type};

use crate::error::{Error, Result};
use crate::model::{inet_checksum, Cidr, MatchToken, ProbeProtocol, ProbeRecord};

/// Fixed source port for TCP/UDP probes; the matcher's probed-address rule
/// keys on it.
pub const PROBE_SOURCE_PORT: u16 = 55000;

#[derive(Debug, Clone)]
pub struct EmitConfig {
    /// Prefixes targets must fall into. Emission with an empty list fails.
    pub allow: Vec<Cidr>,
    /// Send to this port instead of the protocol service port (lab sinks
    /// usually listen on unprivileged ports).
    pub port_override: Option<u16>,
    pub source_port: u16,
    /// Sleep between sends so wire pacing follows ledger send times.
    pub pace: bool,
}

impl Default for EmitConfig {
    fn default() -> Self {
        EmitConfig {
            allow: Vec::new(),
            port_override: None,
            source_port: PROBE_SOURCE_PORT,
            pace: false,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct EmitReport {
    pub sent: u64,
}

fn dns_query(qname: &str) -> Vec<u8> {
    let mut buf = vec![0u8; 12];
    buf[2] = 0x01; // recursion desired
    buf[5] = 0x01; // one question
    for label in qname.split('.').filter(|l| !l.is_empty()) {
        buf.push(label.len() as u8);
        buf.extend_from_slice(label.as_bytes());
    }
    buf.push(0);
    buf.extend_from_slice(&[0x00, 0x01, 0x00, 0x01]); // QTYPE A, QCLASS IN
    buf
}

fn ntp_client() -> Vec<u8> {
    let mut buf = vec![0u8; 48];
    buf[0] = 0x23; // LI 0, version 4, mode 3 (client)
    buf
}

fn icmp_echo(id: u16, probe_size: u32) -> Vec<u8> {
    // probe_size counts the IP header; the ICMP part is the rest.
    let len = (probe_size.saturating_sub(20)).max(8) as usize;
    let mut buf = vec![0u8; len];
    buf[0] = 8; // echo request
    buf[4..6].copy_from_slice(&id.to_be_bytes());
    let csum = inet_checksum(&buf);
    buf[2..4].copy_from_slice(&csum.to_be_bytes());
    buf
}

fn tcp_syn(src_ip: Ipv4Addr, dst_ip: Ipv4Addr, src_port: u16, dst_port: u16, seq: u32) -> [u8; 20] {
    let mut h = [0u8; 20];
    h[0..2].copy_from_slice(&src_port.to_be_bytes());
    h[2..4].copy_from_slice(&dst_port.to_be_bytes());
    h[4..8].copy_from_slice(&seq.to_be_bytes());
    h[12] = 5 << 4;
    h[13] = 0x02; // SYN
    h[14..16].copy_from_slice(&0xffffu16.to_be_bytes());

    let mut pseudo = Vec::with_capacity(12 + 20);
    pseudo.extend_from_slice(&src_ip.octets());
    pseudo.extend_from_slice(&dst_ip.octets());
    pseudo.extend_from_slice(&[0, 6]);
    pseudo.extend_from_slice(&(20u16).to_be_bytes());
    pseudo.extend_from_slice(&h);
    let csum = inet_checksum(&pseudo);
    h[16..18].copy_from_slice(&csum.to_be_bytes());
    h
}

/// Source address the kernel would pick for this destination; needed for
/// the TCP pseudo-header checksum.
fn local_ip_for(target: Ipv4Addr) -> Result<Ipv4Addr> {
    let sock = UdpSocket::bind((Ipv4Addr::UNSPECIFIED, 0))?;
    sock.connect((target, 9))?;
    match sock.local_addr()? {
        SocketAddr::V4(addr) => Ok(*addr.ip()),
        SocketAddr::V6(_) => Err(Error::internal("IPv4 socket returned an IPv6 local address")),
    }
}

fn raw_socket(protocol: Protocol, label: &str) -> Result<Socket> {
    Socket::new(Domain::IPV4, Type::RAW, Some(protocol)).map_err(|err| {
        if err.kind() == std::io::ErrorKind::PermissionDenied {
            Error::validation(format!(
                "emitting {label} probes needs a raw socket (CAP_NET_RAW); \
                 run privileged or restrict --emit to DNS/NTP"
            ))
        } else {
            Error::Io(err)
        }
    })
}

struct Sockets {
    udp: Option<UdpSocket>,
    icmp: Option<Socket>,
    tcp: Option<Socket>,
    source_port: u16,
}

impl Sockets {
    fn udp(&mut self) -> Result<&UdpSocket> {
        if self.udp.is_none() {
            self.udp = Some(UdpSocket::bind((Ipv4Addr::UNSPECIFIED, self.source_port))?);
        }
        Ok(self.udp.as_ref().unwrap())
    }

    fn icmp(&mut self) -> Result<&Socket> {
        if self.icmp.is_none() {
            self.icmp = Some(raw_socket(Protocol::ICMPV4, "ICMP")?);
        }
        Ok(self.icmp.as_ref().unwrap())
    }

    fn tcp(&mut self) -> Result<&Socket> {
        if self.tcp.is_none() {
            self.tcp = Some(raw_socket(Protocol::TCP, "TCP")?);
        }
        Ok(self.tcp.as_ref().unwrap())
    }
}

/// Send the given probes on the wire.
///
/// Every target must be inside one of `config.allow`; the first violation
/// aborts before anything is sent.
pub fn emit_probes(probes: &[ProbeRecord], config: &EmitConfig) -> Result<EmitReport> {
    if config.allow.is_empty() {
        return Err(Error::validation(
            "emission needs at least one allowed lab prefix",
        ));
    }
    for probe in probes {
        if !config.allow.iter().any(|c| c.contains(probe.target_ip)) {
            return Err(Error::validation(format!(
                "target {} is outside every allowed prefix; refusing to emit",
                probe.target_ip
            )));
        }
    }

    let mut sockets = Sockets {
        udp: None,
        icmp: None,
        tcp: None,
        source_port: config.source_port,
    };
    let mut report = EmitReport::default();
    let mut prev_send: Option<i64> = None;

    for probe in probes {
        if config.pace {
            if let Some(prev) = prev_send {
                let gap = probe.send_time_us.saturating_sub(prev);
                if gap > 0 {
                    std::thread::sleep(Duration::from_micros(gap as u64));
                }
            }
            prev_send = Some(probe.send_time_us);
        }
        let port = config.port_override.or(probe.protocol.service_port());
        match (&probe.protocol, &probe.token) {
            (ProbeProtocol::Dns, MatchToken::DnsQname(qname)) => {
                let port = port.expect("DNS has a service port");
                sockets.udp()?.send_to(&dns_query(qname), (probe.target_ip, port))?;
            }
            (ProbeProtocol::Ntp, MatchToken::None) => {
                let port = port.expect("NTP has a service port");
                sockets.udp()?.send_to(&ntp_client(), (probe.target_ip, port))?;
            }
            (ProbeProtocol::Icmp, MatchToken::IcmpEchoId(id)) => {
                let packet = icmp_echo(*id, probe.probe_size);
                let dst = SocketAddrV4::new(probe.target_ip, 0);
                sockets.icmp()?.send_to(&packet, &dst.into())?;
            }
            (p, MatchToken::TcpSeq(seq)) if p.is_tcp() => {
                let port = port.expect("TCP probes have a service port");
                let src_ip = local_ip_for(probe.target_ip)?;
                let header = tcp_syn(src_ip, probe.target_ip, config.source_port, port, *seq);
                let dst = SocketAddrV4::new(probe.target_ip, 0);
                sockets.tcp()?.send_to(&header, &dst.into())?;
            }
            (p, t) => {
                return Err(Error::validation(format!(
                    "probe for {} carries a {} token; ledger is inconsistent",
                    p,
                    t.kind_name()
                )));
            }
        }
        report.sent += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{generate_ledger, ScanKind, ScanPlan, TargetSource};

    fn loopback_plan(protocol: ProbeProtocol) -> ScanPlan {
        ScanPlan::new(
            protocol,
            TargetSource::List(vec![Ipv4Addr::LOCALHOST]),
            ScanKind::Rescan,
            42,
        )
    }

    #[test]
    fn refuses_targets_outside_allowed_prefixes() {
        let probes: Vec<_> = generate_ledger(&loopback_plan(ProbeProtocol::Dns))
            .unwrap()
            .collect();
        let empty = EmitConfig::default();
        assert!(emit_probes(&probes, &empty).is_err());

        let wrong_prefix = EmitConfig {
            allow: vec!["198.18.0.0/15".parse().unwrap()],
            ..EmitConfig::default()
        };
        let err = emit_probes(&probes, &wrong_prefix).unwrap_err();
        assert!(err.to_string().contains("127.0.0.1"));
    }

    #[test]
    fn dns_and_ntp_probes_reach_a_loopback_sink() {
        let sink = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0)).unwrap();
        sink.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        let sink_port = sink.local_addr().unwrap().port();

        let config = EmitConfig {
            allow: vec!["127.0.0.0/8".parse().unwrap()],
            port_override: Some(sink_port),
            source_port: 0, // ephemeral; the fixed port may be taken by parallel tests
            pace: false,
        };

        let dns: Vec<_> = generate_ledger(&loopback_plan(ProbeProtocol::Dns))
            .unwrap()
            .collect();
        let report = emit_probes(&dns, &config).unwrap();
        assert_eq!(report.sent, 1);
        let mut buf = [0u8; 512];
        let (n, _) = sink.recv_from(&mut buf).unwrap();
        let MatchToken::DnsQname(qname) = &dns[0].token else {
            unreachable!()
        };
        let label = qname.split('.').next().unwrap();
        let haystack = &buf[..n];
        assert!(haystack
            .windows(label.len())
            .any(|w| w == label.as_bytes()));

        let ntp: Vec<_> = generate_ledger(&loopback_plan(ProbeProtocol::Ntp))
            .unwrap()
            .collect();
        emit_probes(&ntp, &config).unwrap();
        let (n, _) = sink.recv_from(&mut buf).unwrap();
        assert_eq!(n, 48);
        assert_eq!(buf[0], 0x23);
    }

    #[test]
    fn raw_protocols_emit_or_explain_missing_privilege() {
        let config = EmitConfig {
            allow: vec!["127.0.0.0/8".parse().unwrap()],
            source_port: 0,
            ..EmitConfig::default()
        };
        for protocol in [ProbeProtocol::Icmp, ProbeProtocol::Tcp80] {
            let probes: Vec<_> = generate_ledger(&loopback_plan(protocol)).unwrap().collect();
            match emit_probes(&probes, &config) {
                Ok(report) => assert_eq!(report.sent, 1),
                Err(err) => {
                    assert!(
                        err.to_string().contains("CAP_NET_RAW"),
                        "unexpected failure: {err}"
                    );
                }
            }
        }
    }
}
