//! Output serialization: content digests, TSV tables with a provenance
//! footer, and the matched-responses file format.
//!
//! Every table this module writes ends with a comment line carrying the
//! tool version and the digests of the inputs it was derived from, so a
//! result can be audited back to its exact inputs. Data files (ledgers,
//! traces, responses, profiles) keep their own line formats; the readers
//! all skip `#` comments, so footers pass through every stage untouched.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::classifier::{packet_kind, PacketKind};
use crate::error::{Error, Result};
use crate::matcher::MatchReport;
use crate::model::{
    MatchRule, MatchToken, MatchedResponse, PacketRecord, ProbeProtocol, ProbeRecord, Transport,
};

/// SHA-256 of a file's contents, as lowercase hex.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = File::open(path)
        .map_err(|e| Error::data(format!("cannot digest {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// The provenance footer: tool version plus labeled input digests.
pub fn footer_line(inputs: &[(String, String)]) -> String {
    let mut line = format!("# bbkit {}", crate::VERSION);
    for (label, digest) in inputs {
        line.push_str(&format!("\t{label}={digest}"));
    }
    line
}

/// TSV table writer: one header row, data rows, provenance footer.
pub struct Table<W: Write> {
    out: W,
    columns: usize,
    inputs: Vec<(String, String)>,
}

impl<W: Write> Table<W> {
    pub fn new(mut out: W, columns: &[&str]) -> Result<Self> {
        writeln!(out, "{}", columns.join("\t"))?;
        Ok(Table { out, columns: columns.len(), inputs: Vec::new() })
    }

    /// Register an input for the footer; call before `finish`.
    pub fn input(&mut self, label: &str, digest: impl Into<String>) {
        self.inputs.push((label.to_string(), digest.into()));
    }

    pub fn row(&mut self, cells: &[String]) -> Result<()> {
        debug_assert_eq!(cells.len(), self.columns, "row width vs header");
        writeln!(self.out, "{}", cells.join("\t"))?;
        Ok(())
    }

    /// Extra context lines for the footer, before the version line.
    pub fn comment(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "# {text}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        writeln!(self.out, "{}", footer_line(&self.inputs))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Format a cell that may be undefined.
pub fn opt_cell<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

/// One matched packet as serialized in a responses file: the six
/// attribution columns, the probe's send time, and the packet's kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseRow {
    pub probe_target: Ipv4Addr,
    pub protocol: ProbeProtocol,
    pub rule: MatchRule,
    pub recv_time_us: i64,
    pub src_ip: Ipv4Addr,
    pub size: u32,
    pub send_time_us: i64,
    pub kind: PacketKind,
}

/// Write a match report as a responses file: one line per matched packet
/// plus a summary footer (per-rule counts and matched fraction) and the
/// provenance line.
pub fn write_responses<W: Write>(
    mut out: W,
    report: &MatchReport,
    inputs: &[(String, String)],
) -> Result<()> {
    for response in &report.responses {
        for (packet, rule) in &response.packets {
            let kind = packet_kind(response.probe.protocol, packet, *rule);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                response.probe.target_ip,
                response.probe.protocol,
                rule,
                packet.recv_time_us,
                packet.src_ip,
                packet.size,
                response.probe.send_time_us,
                kind
            )?;
        }
    }
    let total = report.matched_packets + report.unmatched_packets;
    let fraction = if total > 0 {
        report.matched_packets as f64 / total as f64
    } else {
        0.0
    };
    writeln!(
        out,
        "# probes={} matched={} unmatched={} matched_fraction={:.6} \
         matched_bytes={} unmatched_bytes={} evicted={}",
        report.probes_total,
        report.matched_packets,
        report.unmatched_packets,
        fraction,
        report.matched_bytes,
        report.unmatched_bytes,
        report.evicted_probes
    )?;
    writeln!(
        out,
        "# rules ps1={} ps2={} ps3={} pa1={} pa2={} ack_plus_one={} ack_exact={}",
        report.rule_counts[0],
        report.rule_counts[1],
        report.rule_counts[2],
        report.rule_counts[3],
        report.rule_counts[4],
        report.ack_plus_one_matches,
        report.ack_exact_matches
    )?;
    writeln!(out, "{}", footer_line(inputs))?;
    out.flush()?;
    Ok(())
}

pub fn parse_response_line(line: &str) -> Result<ResponseRow> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 8 {
        return Err(Error::data(format!(
            "response line has {} fields, expected 8",
            fields.len()
        )));
    }
    let bad = |what: &str, v: &str| Error::data(format!("response line: bad {what} {v:?}"));
    Ok(ResponseRow {
        probe_target: fields[0].parse().map_err(|_| bad("target", fields[0]))?,
        protocol: fields[1].parse()?,
        rule: fields[2].parse()?,
        recv_time_us: fields[3].parse().map_err(|_| bad("recv_time", fields[3]))?,
        src_ip: fields[4].parse().map_err(|_| bad("src_ip", fields[4]))?,
        size: fields[5].parse().map_err(|_| bad("size", fields[5]))?,
        send_time_us: fields[6].parse().map_err(|_| bad("send_time", fields[6]))?,
        kind: fields[7].parse()?,
    })
}

/// Read a responses file; comments and blank lines are skipped, malformed
/// lines are fatal (responses are tool output, not field data).
pub fn read_response_rows<R: BufRead>(reader: R) -> Result<Vec<ResponseRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        rows.push(
            parse_response_line(trimmed)
                .map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?,
        );
    }
    Ok(rows)
}

/// Stitch rows back into per-probe responses for replay-style analyses.
///
/// The reconstructed probes are attribution stubs: target, protocol, and
/// send time are real; the token is empty and the probe size zero because
/// the responses file does not carry them. Packet records keep the fields
/// the file preserves (receive time, source, size); transport-level detail
/// lives only in the `kind` column, which analyses must use instead of
/// re-deriving kinds from the stub packets.
pub fn rows_to_responses(rows: &[ResponseRow]) -> Vec<MatchedResponse> {
    let mut out: Vec<MatchedResponse> = Vec::new();
    for row in rows {
        let fresh = match out.last() {
            Some(last) => {
                last.probe.target_ip != row.probe_target
                    || last.probe.protocol != row.protocol
                    || last.probe.send_time_us != row.send_time_us
            }
            None => true,
        };
        if fresh {
            out.push(MatchedResponse {
                probe: ProbeRecord {
                    send_time_us: row.send_time_us,
                    target_ip: row.probe_target,
                    protocol: row.protocol,
                    token: MatchToken::None,
                    probe_size: 0,
                },
                packets: Vec::new(),
            });
        }
        let packet = PacketRecord::new(
            row.recv_time_us,
            row.src_ip,
            Ipv4Addr::UNSPECIFIED,
            Transport::Other,
            row.size,
        );
        out.last_mut().unwrap().packets.push((packet, row.rule));
    }
    out
}

/// Open a file as a buffered reader with a path-bearing error.
pub fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| {
        Error::data(format!("cannot open {}: {e}", path.display()))
    })?))
}
