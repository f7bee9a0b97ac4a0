//! Native packet-record interchange format.
//!
//! One record per line:
//! `recv_time_us,src_ip,dst_ip,transport,size,src_port,dst_port,tcp_flags,
//! tcp_ack,icmp_type,icmp_code,icmp_echo_id,quoted_dst_ip,payload_b64`.
//! Absent fields are `-`; extra trailing fields are ignored.

use std::io::{BufRead, Write};
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;

use crate::error::{Error, Result};
use crate::model::{parse_ipv4, PacketRecord, PAYLOAD_CAP};

/// Outcome of parsing a packet trace.
#[derive(Debug, Default)]
pub struct TraceParse {
    pub records: Vec<PacketRecord>,
    /// Count of malformed lines or frames that were skipped.
    pub rejected: u64,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

/// Render one packet record as a trace line (no trailing newline).
pub fn format_packet(p: &PacketRecord) -> String {
    let payload = p
        .payload
        .as_ref()
        .map(|b| BASE64.encode(b))
        .unwrap_or_else(|| "-".into());
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        p.recv_time_us,
        p.src_ip,
        p.dst_ip,
        p.transport,
        p.size,
        opt(&p.src_port),
        opt(&p.dst_port),
        opt(&p.tcp_flags),
        opt(&p.tcp_ack),
        opt(&p.icmp_type),
        opt(&p.icmp_code),
        opt(&p.icmp_echo_id),
        opt(&p.quoted_dst_ip),
        payload,
    )
}

fn parse_opt<T: FromStr>(field: &str, name: &str) -> Result<Option<T>> {
    if field == "-" {
        return Ok(None);
    }
    field
        .parse::<T>()
        .map(Some)
        .map_err(|_| Error::data(format!("invalid {name} field {field:?}")))
}

/// Parse one trace line into a packet record.
pub fn parse_packet_line(line: &str) -> Result<PacketRecord> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() < 14 {
        return Err(Error::data(format!(
            "expected 14 fields, found {}",
            fields.len()
        )));
    }
    let recv_time_us = fields[0]
        .parse::<i64>()
        .map_err(|_| Error::data("invalid recv_time_us"))?;
    let src_ip = parse_ipv4(fields[1])?;
    let dst_ip = parse_ipv4(fields[2])?;
    let transport = fields[3].parse()?;
    let size = fields[4]
        .parse::<u32>()
        .map_err(|_| Error::data("invalid size"))?;

    let payload = if fields[13] == "-" {
        None
    } else {
        let bytes = BASE64
            .decode(fields[13])
            .map_err(|_| Error::data("invalid payload_b64"))?;
        if bytes.len() > PAYLOAD_CAP {
            return Err(Error::data("payload exceeds cap"));
        }
        Some(bytes.into_boxed_slice())
    };

    let record = PacketRecord {
        recv_time_us,
        src_ip,
        dst_ip,
        transport,
        size,
        src_port: parse_opt(fields[5], "src_port")?,
        dst_port: parse_opt(fields[6], "dst_port")?,
        tcp_flags: parse_opt(fields[7], "tcp_flags")?,
        tcp_ack: parse_opt(fields[8], "tcp_ack")?,
        icmp_type: parse_opt(fields[9], "icmp_type")?,
        icmp_code: parse_opt(fields[10], "icmp_code")?,
        icmp_echo_id: parse_opt(fields[11], "icmp_echo_id")?,
        quoted_dst_ip: if fields[12] == "-" {
            None
        } else {
            Some(parse_ipv4(fields[12])?)
        },
        payload,
    };
    record.validate()?;
    Ok(record)
}

/// Parse a native trace stream. Malformed lines are skipped and counted.
pub fn parse_packet_trace<R: BufRead>(reader: R) -> Result<TraceParse> {
    let mut out = TraceParse::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_packet_line(trimmed) {
            Ok(record) => out.records.push(record),
            Err(err) => {
                log::warn!("trace line {}: {err}", lineno + 1);
                out.rejected += 1;
            }
        }
    }
    Ok(out)
}

/// Write records as native trace lines.
pub fn write_packet_trace<W: Write>(mut writer: W, records: &[PacketRecord]) -> Result<()> {
    for record in records {
        writeln!(writer, "{}", format_packet(record))?;
    }
    Ok(())
}

/// Streaming trace reader; the matcher consumes traces through this so a
/// multi-gigabyte trace never sits in memory. Malformed lines are skipped
/// and counted; only I/O failures surface as errors.
pub struct PacketStream<R: BufRead> {
    reader: R,
    line: String,
    lineno: u64,
    rejected: u64,
}

impl<R: BufRead> PacketStream<R> {
    pub fn new(reader: R) -> Self {
        PacketStream {
            reader,
            line: String::new(),
            lineno: 0,
            rejected: 0,
        }
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }
}

impl<R: BufRead> Iterator for PacketStream<R> {
    type Item = Result<PacketRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(err) => return Some(Err(err.into())),
            }
            self.lineno += 1;
            let trimmed = self.line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            match parse_packet_line(trimmed) {
                Ok(record) => return Some(Ok(record)),
                Err(err) => {
                    log::warn!("trace line {}: {err}", self.lineno);
                    self.rejected += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TcpFlags, Transport};
    use std::net::Ipv4Addr;

    #[test]
    fn round_trips_a_tcp_packet() {
        let p = PacketRecord::new(
            1_000_000,
            Ipv4Addr::new(9, 9, 9, 9),
            Ipv4Addr::new(192, 0, 2, 1),
            Transport::Tcp,
            60,
        )
        .with_ports(443, 55000)
        .with_tcp(TcpFlags::SYN_ACK, 12346);
        let line = format_packet(&p);
        assert_eq!(parse_packet_line(&line).unwrap(), p);
    }

    #[test]
    fn round_trips_an_icmp_error_with_payload() {
        let p = PacketRecord::new(
            2_000_000,
            Ipv4Addr::new(8, 8, 8, 8),
            Ipv4Addr::new(192, 0, 2, 1),
            Transport::Icmp,
            96,
        )
        .with_icmp(11, 0)
        .with_quoted_dst(Ipv4Addr::new(5, 6, 7, 8))
        .with_payload(b"x9y.zone.example");
        let line = format_packet(&p);
        assert_eq!(parse_packet_line(&line).unwrap(), p);
    }

    #[test]
    fn rejects_udp_without_ports() {
        let line = "0,1.2.3.4,5.6.7.8,UDP,60,-,-,-,-,-,-,-,-,-";
        assert!(parse_packet_line(line).is_err());
    }

    #[test]
    fn skips_and_counts_bad_lines() {
        let input = b"0,1.2.3.4,5.6.7.8,UDP,60,53,55000,-,-,-,-,-,-,-\nnot a record\n";
        let parsed = parse_packet_trace(&input[..]).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejected, 1);
    }

    #[test]
    fn other_transport_line_round_trips() {
        let p = PacketRecord::new(
            5,
            Ipv4Addr::new(1, 1, 1, 1),
            Ipv4Addr::new(2, 2, 2, 2),
            Transport::Other,
            40,
        );
        let line = format_packet(&p);
        assert_eq!(parse_packet_line(&line).unwrap(), p);
    }
}
