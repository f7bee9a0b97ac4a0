//! Shared test support: a quadratic reference matcher written straight from
//! the matching contract, and a randomized campaign generator that injects
//! token collisions, timestamp jitter, and unmatchable noise.

#![allow(dead_code)]

use std::collections::HashMap;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use bbkit::matcher::{MatchConfig, MatchReport, TcpAckMode};
use bbkit::model::{
    MatchRule, MatchToken, MatchedResponse, PacketRecord, ProbeProtocol, ProbeRecord, TcpFlags,
    Transport, MICROS_PER_SEC,
};

pub const SCANNER: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 1);

fn contains_sub(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Reference matcher: same contract as the streaming engine, implemented as
/// a per-packet scan over the whole ledger with no indexes, no heap, and no
/// merge bookkeeping.
pub fn oracle_match(
    probes: &[ProbeRecord],
    packets: &[PacketRecord],
    config: &MatchConfig,
) -> MatchReport {
    struct Slot {
        expiry: i64,
        packets: Vec<(PacketRecord, MatchRule)>,
    }
    let mut slots: Vec<Slot> = probes
        .iter()
        .map(|p| Slot {
            expiry: p.send_time_us + config.expiry_window_us,
            packets: Vec::new(),
        })
        .collect();

    // Distinct-qname grouping; candidate selection below is order-blind, so
    // the map's iteration order cannot leak into results.
    let mut by_qname: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, p) in probes.iter().enumerate() {
        if let MatchToken::DnsQname(q) = &p.token {
            by_qname.entry(q.as_str()).or_default().push(i);
        }
    }

    let mut report = MatchReport {
        probes_total: probes.len() as u64,
        ..MatchReport::default()
    };

    for packet in packets {
        let recv = packet.recv_time_us;
        let live = |slots: &[Slot], i: usize| {
            probes[i].send_time_us <= recv && recv < slots[i].expiry
        };

        let mut rule = None;
        let mut cands: Vec<usize> = Vec::new();

        if let Some(payload) = &packet.payload {
            let hay: Vec<u8> = payload.iter().map(u8::to_ascii_lowercase).collect();
            for (qname, idxs) in &by_qname {
                if contains_sub(&hay, qname.as_bytes()) {
                    cands.extend(idxs.iter().copied().filter(|&i| live(&slots, i)));
                }
            }
            if !cands.is_empty() {
                rule = Some(MatchRule::Ps1);
            }
        }

        if rule.is_none() {
            match packet.transport {
                Transport::Tcp => {
                    let syn_ack = packet
                        .tcp_flags
                        .map(|f| f.0 & TcpFlags::SYN_ACK.0 == TcpFlags::SYN_ACK.0)
                        .unwrap_or(false);
                    if syn_ack {
                        if let Some(ack) = packet.tcp_ack {
                            let forms: &[bool] = match config.tcp_ack_mode {
                                TcpAckMode::SeqPlusOne => &[true],
                                TcpAckMode::SeqExact => &[false],
                                TcpAckMode::Either => &[true, false],
                            };
                            for &plus_one in forms {
                                let want = if plus_one { ack.wrapping_sub(1) } else { ack };
                                for (i, p) in probes.iter().enumerate() {
                                    if p.token == MatchToken::TcpSeq(want) && live(&slots, i) {
                                        cands.push(i);
                                    }
                                }
                                if !cands.is_empty() {
                                    rule = Some(MatchRule::Ps2);
                                    if plus_one {
                                        report.ack_plus_one_matches += 1;
                                    } else {
                                        report.ack_exact_matches += 1;
                                    }
                                    break;
                                }
                            }
                        }
                    }
                }
                Transport::Icmp => {
                    if packet.icmp_type == Some(0) {
                        if let Some(echo) = packet.icmp_echo_id {
                            for (i, p) in probes.iter().enumerate() {
                                if p.token == MatchToken::IcmpEchoId(echo) && live(&slots, i) {
                                    cands.push(i);
                                }
                            }
                            if !cands.is_empty() {
                                rule = Some(MatchRule::Ps3);
                            }
                        }
                    }
                    if rule.is_none() {
                        if let Some(quoted) = packet.quoted_dst_ip {
                            for (i, p) in probes.iter().enumerate() {
                                if p.target_ip == quoted && live(&slots, i) {
                                    cands.push(i);
                                }
                            }
                            if !cands.is_empty() {
                                rule = Some(MatchRule::Pa1);
                            }
                        }
                    }
                }
                Transport::Udp => {}
                Transport::Other => {}
            }
        }

        if rule.is_none()
            && matches!(packet.transport, Transport::Tcp | Transport::Udp)
            && packet.dst_port == Some(config.ephemeral_port)
        {
            for (i, p) in probes.iter().enumerate() {
                if p.target_ip == packet.src_ip && live(&slots, i) {
                    cands.push(i);
                }
            }
            if !cands.is_empty() {
                rule = Some(MatchRule::Pa2);
            }
        }

        match rule {
            Some(rule) => {
                let mut winner = cands[0];
                for &i in &cands[1..] {
                    let (w, c) = (&probes[winner], &probes[i]);
                    let better = c.send_time_us > w.send_time_us
                        || (c.send_time_us == w.send_time_us && c.target_ip < w.target_ip)
                        || (c.send_time_us == w.send_time_us
                            && c.target_ip == w.target_ip
                            && i < winner);
                    if better {
                        winner = i;
                    }
                }
                report.matched_packets += 1;
                report.matched_bytes += packet.size as u64;
                report.rule_counts[rule.index()] += 1;
                let mut stored = packet.clone();
                if !config.retain_payloads {
                    stored.payload = None;
                }
                let slot = &mut slots[winner];
                slot.packets.push((stored, rule));
                slot.expiry = slot.expiry.max(recv + config.expiry_window_us);
            }
            None => {
                report.unmatched_packets += 1;
                report.unmatched_bytes += packet.size as u64;
            }
        }
    }

    for (i, slot) in slots.into_iter().enumerate() {
        if !slot.packets.is_empty() {
            let mut packets = slot.packets;
            packets.sort_by_key(|(p, _)| p.recv_time_us);
            report.responses.push(MatchedResponse {
                probe: probes[i].clone(),
                packets,
            });
        }
    }
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
    report
}

pub fn assert_reports_equal(streaming: &MatchReport, oracle: &MatchReport, label: &str) {
    assert_eq!(
        streaming.matched_packets, oracle.matched_packets,
        "{label}: matched_packets"
    );
    assert_eq!(
        streaming.unmatched_packets, oracle.unmatched_packets,
        "{label}: unmatched_packets"
    );
    assert_eq!(streaming.matched_bytes, oracle.matched_bytes, "{label}: matched_bytes");
    assert_eq!(
        streaming.unmatched_bytes, oracle.unmatched_bytes,
        "{label}: unmatched_bytes"
    );
    assert_eq!(streaming.rule_counts, oracle.rule_counts, "{label}: rule_counts");
    assert_eq!(
        streaming.ack_plus_one_matches, oracle.ack_plus_one_matches,
        "{label}: ack_plus_one_matches"
    );
    assert_eq!(
        streaming.ack_exact_matches, oracle.ack_exact_matches,
        "{label}: ack_exact_matches"
    );
    assert_eq!(streaming.probes_total, oracle.probes_total, "{label}: probes_total");
    assert_eq!(
        streaming.responses.len(),
        oracle.responses.len(),
        "{label}: response count"
    );
    for (i, (s, o)) in streaming.responses.iter().zip(&oracle.responses).enumerate() {
        assert_eq!(s, o, "{label}: response #{i} diverges");
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CampaignSpec {
    pub probes: usize,
    pub packets: usize,
    pub seed: u64,
}

/// Build a randomized campaign with injected ambiguity: reused targets,
/// colliding qnames/echo ids/sequence numbers, adjacent sequence numbers
/// (so +1 and exact ack forms compete), sub-tolerance timestamp jitter,
/// expiry-spanning gaps, and a share of unmatchable noise.
pub fn random_campaign(spec: CampaignSpec) -> (Vec<ProbeRecord>, Vec<PacketRecord>) {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let target_pool: Vec<Ipv4Addr> = (0..(spec.probes / 3).max(4))
        .map(|_| Ipv4Addr::from(rng.gen_range(0x0100_0000u32..0x0200_0000)))
        .collect();
    let qname_pool: Vec<String> = (0..(spec.probes / 8).max(3))
        .map(|i| format!("c{:04}x{}.zone.example", i, rng.gen_range(0..10)))
        .collect();

    let mut probes = Vec::with_capacity(spec.probes);
    let mut send = 1_000_000_000_000i64;
    let mut high = send;
    let mut prev_seq = 1u32;
    for _ in 0..spec.probes {
        // Mostly forward steps, occasional regression bounded against the
        // high-water mark so it stays inside the sort tolerance, and a rare
        // long gap that lets ledger entries expire mid-campaign.
        send = if rng.gen_bool(0.02) {
            high + rng.gen_range(300..900) * MICROS_PER_SEC
        } else {
            high + rng.gen_range(-900_000..2_000_000)
        };
        high = high.max(send);
        let protocol = ProbeProtocol::ALL[rng.gen_range(0..6)];
        let token = match protocol {
            ProbeProtocol::Dns => {
                MatchToken::DnsQname(qname_pool[rng.gen_range(0..qname_pool.len())].clone())
            }
            ProbeProtocol::Icmp => MatchToken::IcmpEchoId(rng.gen_range(0..24)),
            ProbeProtocol::Ntp => MatchToken::None,
            _ => {
                let seq = if rng.gen_bool(0.3) {
                    prev_seq.wrapping_add(1)
                } else {
                    rng.gen_range(0..192)
                };
                prev_seq = seq;
                MatchToken::TcpSeq(seq)
            }
        };
        probes.push(ProbeRecord {
            send_time_us: send,
            target_ip: target_pool[rng.gen_range(0..target_pool.len())],
            protocol,
            token,
            probe_size: protocol.default_probe_size(),
        });
    }

    let mut packets = Vec::with_capacity(spec.packets);
    for _ in 0..spec.packets {
        let anchor = &probes[rng.gen_range(0..probes.len())];
        let recv = anchor.send_time_us
            + if rng.gen_bool(0.1) {
                rng.gen_range(-5..620) * MICROS_PER_SEC
            } else {
                rng.gen_range(0..30 * MICROS_PER_SEC)
            };
        let src = if rng.gen_bool(0.75) {
            anchor.target_ip
        } else {
            Ipv4Addr::from(rng.gen_range(0x0300_0000u32..0x0300_2000))
        };
        let size = rng.gen_range(40..1200);
        let dst_port = if rng.gen_bool(0.6) { 55000 } else { 44000 };
        let qname_payload = |rng: &mut ChaCha20Rng| {
            let q = &qname_pool[rng.gen_range(0..qname_pool.len())];
            let mut text = if rng.gen_bool(0.5) {
                q.to_uppercase()
            } else {
                q.clone()
            };
            if rng.gen_bool(0.2) {
                // Near miss: corrupt one character so it must not match.
                let at = rng.gen_range(0..text.len());
                text.replace_range(at..at + 1, "~");
            }
            format!("{}{}{}", "x".repeat(rng.gen_range(0..12)), text, "y".repeat(rng.gen_range(0..8)))
                .into_bytes()
        };

        let packet = match rng.gen_range(0..10) {
            0 | 1 => {
                let mut p = PacketRecord::new(recv, src, SCANNER, Transport::Udp, size)
                    .with_ports(rng.gen_range(1..1024), dst_port);
                if rng.gen_bool(0.7) {
                    p = p.with_payload(qname_payload(&mut rng));
                }
                p
            }
            2 | 3 => PacketRecord::new(recv, src, SCANNER, Transport::Tcp, size)
                .with_ports(rng.gen_range(1..1024), dst_port)
                .with_tcp(
                    if rng.gen_bool(0.7) {
                        TcpFlags::SYN_ACK
                    } else {
                        TcpFlags(TcpFlags::RST.0 | TcpFlags::ACK.0)
                    },
                    if rng.gen_bool(0.7) {
                        match &anchor.token {
                            MatchToken::TcpSeq(s) => {
                                if rng.gen_bool(0.5) {
                                    s.wrapping_add(1)
                                } else {
                                    *s
                                }
                            }
                            _ => rng.gen_range(0..192),
                        }
                    } else {
                        rng.gen_range(0..192)
                    },
                ),
            4 => PacketRecord::new(recv, src, SCANNER, Transport::Icmp, size)
                .with_icmp(0, 0)
                .with_echo_id(rng.gen_range(0..24)),
            5 | 6 => {
                let quoted = if rng.gen_bool(0.7) {
                    anchor.target_ip
                } else {
                    Ipv4Addr::new(198, 18, 99, 1)
                };
                let mut p = PacketRecord::new(recv, src, SCANNER, Transport::Icmp, size)
                    .with_icmp(if rng.gen_bool(0.5) { 11 } else { 3 }, rng.gen_range(0..4))
                    .with_quoted_dst(quoted);
                if rng.gen_bool(0.3) {
                    // A quotation can carry DNS query bytes, exercising the
                    // qname rule on ICMP shapes.
                    p = p.with_payload(qname_payload(&mut rng));
                }
                p
            }
            7 => PacketRecord::new(recv, src, SCANNER, Transport::Other, size),
            _ => {
                // Background noise aimed at nothing in particular.
                PacketRecord::new(recv, src, SCANNER, Transport::Udp, size)
                    .with_ports(rng.gen_range(1..1024), 44000)
                    .with_payload(b"\x00\x01\x02background\x03".as_ref())
            }
        };
        packets.push(packet);
    }

    packets.sort_by_key(|p| p.recv_time_us);
    // Sub-tolerance jitter: adjacent gaps shrink by at most 0.8 s, inside
    // the 1 s sort tolerance.
    for packet in &mut packets {
        packet.recv_time_us += rng.gen_range(-400_000..400_000);
    }
    (probes, packets)
}

/// Streaming match of in-memory campaigns (plumbing for tests).
pub fn run_streaming(
    probes: &[ProbeRecord],
    packets: &[PacketRecord],
    config: &MatchConfig,
) -> MatchReport {
    bbkit::matcher::match_stream(
        probes.iter().cloned().map(Ok),
        packets.iter().cloned().map(Ok),
        config,
    )
    .expect("campaign streams are sorted within tolerance")
}
