//! Probe ledger interchange format.
//!
//! One record per line, comma-separated:
//! `send_time_us,target_ip,protocol,token,probe_size` where token is
//! `qname=<string>` | `icmpid=<u16>` | `seq=<u32>` | `-`. Extra fields are
//! ignored for forward compatibility.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{parse_ipv4, MatchToken, ProbeRecord};

/// Outcome of parsing a ledger stream.
#[derive(Debug, Default)]
pub struct LedgerParse {
    pub records: Vec<ProbeRecord>,
    /// Count of malformed lines that were skipped.
    pub rejected: u64,
}

/// Render one probe record as a ledger line (no trailing newline).
pub fn format_probe(record: &ProbeRecord) -> String {
    let token = match &record.token {
        MatchToken::DnsQname(q) => format!("qname={q}"),
        MatchToken::IcmpEchoId(id) => format!("icmpid={id}"),
        MatchToken::TcpSeq(seq) => format!("seq={seq}"),
        MatchToken::None => "-".to_string(),
    };
    format!(
        "{},{},{},{},{}",
        record.send_time_us, record.target_ip, record.protocol, token, record.probe_size
    )
}

/// Parse one ledger line into a probe record.
pub fn parse_probe_line(line: &str) -> Result<ProbeRecord> {
    let mut fields = line.split(',');
    let mut next = |name: &str| {
        fields
            .next()
            .ok_or_else(|| Error::data(format!("missing field {name}")))
    };

    let send_time_us = next("send_time_us")?
        .parse::<i64>()
        .map_err(|_| Error::data("invalid send_time_us"))?;
    let target_ip = parse_ipv4(next("target_ip")?)?;
    let protocol = next("protocol")?.parse()?;
    let token_field = next("token")?;
    let token = if token_field == "-" {
        MatchToken::None
    } else if let Some(q) = token_field.strip_prefix("qname=") {
        if q.is_empty() {
            return Err(Error::data("empty qname token"));
        }
        MatchToken::DnsQname(q.to_ascii_lowercase())
    } else if let Some(id) = token_field.strip_prefix("icmpid=") {
        MatchToken::IcmpEchoId(id.parse().map_err(|_| Error::data("invalid icmpid"))?)
    } else if let Some(seq) = token_field.strip_prefix("seq=") {
        MatchToken::TcpSeq(seq.parse().map_err(|_| Error::data("invalid seq"))?)
    } else {
        return Err(Error::data(format!("unknown token form {token_field:?}")));
    };
    let probe_size = next("probe_size")?
        .parse::<u32>()
        .map_err(|_| Error::data("invalid probe_size"))?;

    let record = ProbeRecord {
        send_time_us,
        target_ip,
        protocol,
        token,
        probe_size,
    };
    record.validate()?;
    Ok(record)
}

/// Parse a ledger stream. Malformed lines are skipped and counted; only an
/// unreadable stream is fatal.
pub fn parse_probe_ledger<R: BufRead>(reader: R) -> Result<LedgerParse> {
    let mut out = LedgerParse::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_probe_line(trimmed) {
            Ok(record) => out.records.push(record),
            Err(err) => {
                log::warn!("ledger line {}: {err}", lineno + 1);
                out.rejected += 1;
            }
        }
    }
    Ok(out)
}

/// Write records as ledger lines.
pub fn write_probe_ledger<W: Write>(mut writer: W, records: &[ProbeRecord]) -> Result<()> {
    for record in records {
        writeln!(writer, "{}", format_probe(record))?;
    }
    Ok(())
}

/// Streaming ledger reader: yields records one at a time so arbitrarily
/// large ledgers never sit in memory. Malformed lines are skipped and
/// counted; only I/O failures surface as errors.
pub struct ProbeStream<R: BufRead> {
    reader: R,
    line: String,
    lineno: u64,
    rejected: u64,
}

impl<R: BufRead> ProbeStream<R> {
    pub fn new(reader: R) -> Self {
        ProbeStream {
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

impl<R: BufRead> Iterator for ProbeStream<R> {
    type Item = Result<ProbeRecord>;

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
            match parse_probe_line(trimmed) {
                Ok(record) => return Some(Ok(record)),
                Err(err) => {
                    log::warn!("ledger line {}: {err}", self.lineno);
                    self.rejected += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProbeProtocol;
    use std::net::Ipv4Addr;

    #[test]
    fn parses_tcp80_anecdote_line() {
        let rec = parse_probe_line("1608000000000000,103.40.65.97,TCP80,seq=12345,60").unwrap();
        assert_eq!(rec.send_time_us, 1_608_000_000_000_000);
        assert_eq!(rec.target_ip, Ipv4Addr::new(103, 40, 65, 97));
        assert_eq!(rec.protocol, ProbeProtocol::Tcp80);
        assert_eq!(rec.token, MatchToken::TcpSeq(12345));
        assert_eq!(rec.probe_size, 60);
    }

    #[test]
    fn empty_stream_gives_empty_list() {
        let parsed = parse_probe_ledger(&b""[..]).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.rejected, 0);
    }

    #[test]
    fn malformed_lines_are_counted_not_fatal() {
        let input = b"garbage\n0,1.2.3.4,NTP,-,90\n1,2.3.4.5,DNS,seq=9,70\n";
        let parsed = parse_probe_ledger(&input[..]).unwrap();
        assert_eq!(parsed.records.len(), 1);
        // the DNS line carries a TCP token, which fails validation
        assert_eq!(parsed.rejected, 2);
    }

    #[test]
    fn ipv6_target_is_rejected() {
        assert!(parse_probe_line("0,2001:db8::1,NTP,-,90").is_err());
    }

    #[test]
    fn extra_fields_are_ignored() {
        let rec = parse_probe_line("0,1.2.3.4,NTP,-,90,future,fields").unwrap();
        assert_eq!(rec.probe_size, 90);
    }

    #[test]
    fn qname_tokens_are_case_normalized() {
        let rec = parse_probe_line("0,1.2.3.4,DNS,qname=AbC.Zone.Example,70").unwrap();
        assert_eq!(rec.token, MatchToken::DnsQname("abc.zone.example".into()));
    }
}
