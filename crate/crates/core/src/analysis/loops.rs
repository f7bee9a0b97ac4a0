//! Routing-loop detection over recorded traceroute paths.
//!
//! A path loops when one router address appears at least three times among
//! its hops (the default; configurable). The rule counts occurrences over
//! the whole path rather than adjacency, so repeated non-adjacent visits
//! qualify, and per-hop timeouts are simply skipped.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use crate::error::{Error, Result};
use crate::model::parse_ipv4;

/// Router appearances needed before a path counts as looping.
pub const DEFAULT_LOOP_THRESHOLD: u32 = 3;

/// One recorded traceroute: the probed target and its hops in TTL order.
/// A `None` hop is a probe that timed out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceroutePath {
    pub target_ip: Ipv4Addr,
    /// Strictly increasing TTLs.
    pub hops: Vec<(u8, Option<Ipv4Addr>)>,
}

/// Whether some router appears at least `repeat_threshold` times.
pub fn path_has_loop(path: &TraceroutePath, repeat_threshold: u32) -> bool {
    debug_assert!(repeat_threshold >= 2);
    let mut seen: HashMap<Ipv4Addr, u32> = HashMap::new();
    for (_, hop) in &path.hops {
        if let Some(router) = hop {
            let count = seen.entry(*router).or_insert(0);
            *count += 1;
            if *count >= repeat_threshold {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopReport {
    pub total_paths: u64,
    pub looping_paths: u64,
    /// looping/total; undefined over an empty corpus.
    pub prevalence: Option<f64>,
}

pub fn detect_loops(paths: &[TraceroutePath], repeat_threshold: u32) -> LoopReport {
    let total_paths = paths.len() as u64;
    let looping_paths = paths
        .iter()
        .filter(|p| path_has_loop(p, repeat_threshold))
        .count() as u64;
    LoopReport {
        total_paths,
        looping_paths,
        prevalence: (total_paths > 0).then(|| looping_paths as f64 / total_paths as f64),
    }
}

/// Parse the path corpus format: a `target <ip>` line opens each path,
/// followed by one `<ttl> <ip|*>` line per hop. Blank lines and `#`
/// comments are skipped.
pub fn read_traceroutes<R: BufRead>(input: R) -> Result<Vec<TraceroutePath>> {
    let mut paths: Vec<TraceroutePath> = Vec::new();
    for (number, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let at = |msg: String| Error::data(format!("line {}: {msg}", number + 1));
        if let Some(target) = trimmed.strip_prefix("target ") {
            paths.push(TraceroutePath {
                target_ip: parse_ipv4(target.trim())?,
                hops: Vec::new(),
            });
            continue;
        }
        let path = paths
            .last_mut()
            .ok_or_else(|| at(format!("hop before any target line: {trimmed:?}")))?;
        let (ttl, hop) = trimmed
            .split_once(' ')
            .ok_or_else(|| at(format!("expected `ttl ip|*`, got {trimmed:?}")))?;
        let ttl: u8 = ttl
            .parse()
            .map_err(|_| at(format!("bad ttl {ttl:?}")))?;
        if let Some((last_ttl, _)) = path.hops.last() {
            if ttl <= *last_ttl {
                return Err(at(format!(
                    "ttl {ttl} does not increase past {last_ttl} for target {}",
                    path.target_ip
                )));
            }
        }
        let hop = match hop.trim() {
            "*" => None,
            ip => Some(parse_ipv4(ip)?),
        };
        path.hops.push((ttl, hop));
    }
    Ok(paths)
}

pub fn write_traceroutes<W: Write>(out: &mut W, paths: &[TraceroutePath]) -> Result<()> {
    for path in paths {
        writeln!(out, "target {}", path.target_ip)?;
        for (ttl, hop) in &path.hops {
            match hop {
                Some(ip) => writeln!(out, "{ttl} {ip}")?,
                None => writeln!(out, "{ttl} *")?,
            }
        }
    }
    Ok(())
}
