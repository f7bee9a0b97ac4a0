//! Config-driven end-to-end runs, plus the file-level stage operations the
//! command line exposes individually.
//!
//! Stages communicate only through files. The pipeline writes each artifact,
//! then the next stage reads it back through the same parser a standalone
//! invocation would use, so running any stage by hand over the pipeline's
//! outputs reproduces the pipeline's own intermediates byte for byte.
//!
//! Every artifact is written to `<name>.partial` first and renamed into
//! place on success; a failed or interrupted run leaves its unfinished
//! outputs clearly marked instead of masquerading as results. The closing
//! manifest lists every produced file with a content digest. No output
//! embeds wall-clock time or absolute paths, so rerunning an identical
//! configuration reproduces identical digests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::analysis::{
    activity_concentration, attribute_origins, detect_loops, read_traceroutes, stability,
    timing_histogram_seconds, LoopReport, OriginRound, PrefixDataset, StabilityReport,
    DEFAULT_LOOP_THRESHOLD,
};
use crate::attack::{simulate_attack, AttackConfig, AttackTimeline};
use crate::classifier::{
    build_profiles_with_ledger, merge_profiles, probe_totals, read_profiles, summarize_scan,
    write_profiles, GeneratorProfile, PacketKind, ProbeTotals, ResponseClass, TypeBreakdown,
};
use crate::error::{Error, Result};
use crate::matcher::{match_stream, MatchConfig, MatchReport};
use crate::model::ledger::{parse_probe_ledger, write_probe_ledger, ProbeStream};
use crate::model::pcap::read_pcap;
use crate::model::trace::{write_packet_trace, PacketStream};
use crate::model::{MatchedResponse, ProbeProtocol, MICROS_PER_SEC};
use crate::report::{
    file_digest, footer_line, open_reader, read_response_rows, rows_to_responses, write_responses,
    ResponseRow, Table,
};
use crate::synth::scenario::read_scenario;
use crate::synth::generate_campaign;

/// One round's input pair: the probe ledger and the capture to match
/// against it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundInput {
    pub id: u32,
    pub ledger: PathBuf,
    pub trace: PathBuf,
}

/// Campaign synthesis as the pipeline's data source: a scenario file plus
/// optional overrides of its campaign knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSource {
    pub scenario: PathBuf,
    pub rounds: Option<u32>,
    pub noise_pps: Option<u32>,
    pub seed: Option<u64>,
}

/// Where the rounds come from: generated on the fly or handed in as
/// ledger/trace pairs. Exactly one is configured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PipelineSource {
    Synth(SynthSource),
    Rounds(Vec<RoundInput>),
}

/// Optional side datasets; analyses needing one are skipped when it is
/// absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetPaths {
    pub asn: Option<PathBuf>,
    pub geo: Option<PathBuf>,
    pub traceroutes: Option<PathBuf>,
}

/// A validated run configuration. Input paths are checked at parse time so
/// a run never fails halfway through on a typo.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub blowback_threshold: u64,
    /// Upper bound on worker parallelism. The stages currently run
    /// sequentially, which satisfies any bound.
    pub jobs: u32,
    /// How many of the busiest responses the timing report keeps.
    pub timing_top: usize,
    pub match_config: MatchConfig,
    pub source: PipelineSource,
    pub datasets: DatasetPaths,
    pub attack: AttackConfig,
    /// Traceroute paths flagged when a hop appears this many times.
    pub loop_threshold: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    out_dir: String,
    blowback_threshold: Option<u64>,
    jobs: Option<u32>,
    timing_top: Option<usize>,
    loop_threshold: Option<u32>,
    #[serde(rename = "match")]
    match_section: Option<MatchSection>,
    synth: Option<SynthSection>,
    #[serde(default, rename = "round")]
    rounds: Vec<RoundSection>,
    datasets: Option<DatasetsSection>,
    attack: Option<AttackSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchSection {
    window_secs: Option<i64>,
    ack_mode: Option<String>,
    ephemeral_port: Option<u16>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    scenario: String,
    rounds: Option<u32>,
    noise_pps: Option<u32>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundSection {
    id: u32,
    ledger: String,
    trace: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetsSection {
    asn: Option<String>,
    geo: Option<String>,
    traceroutes: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackSection {
    repeat: Option<u32>,
    period_secs: Option<i64>,
}

fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn must_exist(path: &Path, what: &str) -> Result<()> {
    if fs::metadata(path).is_ok() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{what} does not exist: {}",
            path.display()
        )))
    }
}

impl PipelineConfig {
    /// Parse and validate a config. Relative paths resolve against `base`,
    /// normally the directory holding the config file.
    pub fn from_toml(text: &str, base: &Path) -> Result<PipelineConfig> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::validation(format!("pipeline config: {e}")))?;

        let source = match (&file.synth, file.rounds.is_empty()) {
            (Some(_), false) => {
                return Err(Error::validation(
                    "configure either [synth] or [[round]] entries, not both",
                ))
            }
            (None, true) => {
                return Err(Error::validation(
                    "configure a data source: a [synth] scenario or [[round]] entries",
                ))
            }
            (Some(synth), true) => {
                let scenario = resolve(base, &synth.scenario);
                must_exist(&scenario, "scenario file")?;
                PipelineSource::Synth(SynthSource {
                    scenario,
                    rounds: synth.rounds,
                    noise_pps: synth.noise_pps,
                    seed: synth.seed,
                })
            }
            (None, false) => {
                let mut rounds: Vec<RoundInput> = Vec::with_capacity(file.rounds.len());
                let mut seen = BTreeSet::new();
                for section in &file.rounds {
                    if !seen.insert(section.id) {
                        return Err(Error::validation(format!(
                            "round id {} configured twice",
                            section.id
                        )));
                    }
                    let ledger = resolve(base, &section.ledger);
                    let trace = resolve(base, &section.trace);
                    must_exist(&ledger, "ledger file")?;
                    must_exist(&trace, "trace file")?;
                    rounds.push(RoundInput {
                        id: section.id,
                        ledger,
                        trace,
                    });
                }
                rounds.sort_by_key(|r| r.id);
                PipelineSource::Rounds(rounds)
            }
        };

        let mut match_config = MatchConfig::default();
        if let Some(section) = &file.match_section {
            if let Some(secs) = section.window_secs {
                if secs <= 0 {
                    return Err(Error::validation("window_secs must be positive"));
                }
                match_config.expiry_window_us = secs.saturating_mul(MICROS_PER_SEC);
            }
            if let Some(mode) = &section.ack_mode {
                match_config.tcp_ack_mode = mode.parse()?;
            }
            if let Some(port) = section.ephemeral_port {
                match_config.ephemeral_port = port;
            }
        }
        match_config.validate()?;

        let mut datasets = DatasetPaths::default();
        if let Some(section) = &file.datasets {
            datasets.asn = section.asn.as_deref().map(|p| resolve(base, p));
            datasets.geo = section.geo.as_deref().map(|p| resolve(base, p));
            datasets.traceroutes = section.traceroutes.as_deref().map(|p| resolve(base, p));
        }
        if datasets.asn.is_some() != datasets.geo.is_some() {
            return Err(Error::validation(
                "origin attribution needs both asn and geo datasets",
            ));
        }
        for (path, what) in [
            (&datasets.asn, "asn dataset"),
            (&datasets.geo, "geo dataset"),
            (&datasets.traceroutes, "traceroute file"),
        ] {
            if let Some(p) = path {
                must_exist(p, what)?;
            }
        }

        let mut attack = AttackConfig::default();
        if let Some(section) = &file.attack {
            if let Some(repeat) = section.repeat {
                attack.repeat = repeat;
            }
            if let Some(secs) = section.period_secs {
                attack.period_us = secs.saturating_mul(MICROS_PER_SEC);
            }
        }
        attack.validate()?;

        let config = PipelineConfig {
            out_dir: resolve(base, &file.out_dir),
            blowback_threshold: file.blowback_threshold.unwrap_or(4),
            jobs: file.jobs.unwrap_or(1),
            timing_top: file.timing_top.unwrap_or(12),
            match_config,
            source,
            datasets,
            attack,
            loop_threshold: file.loop_threshold.unwrap_or(DEFAULT_LOOP_THRESHOLD),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blowback_threshold < 2 {
            return Err(Error::validation(
                "blowback threshold must be at least 2 packets",
            ));
        }
        if self.jobs < 1 {
            return Err(Error::validation("jobs must be at least 1"));
        }
        if self.timing_top < 1 {
            return Err(Error::validation("timing_top must be at least 1"));
        }
        if self.loop_threshold < 2 {
            return Err(Error::validation(
                "loop threshold below 2 would flag every path",
            ));
        }
        self.match_config.validate()?;
        self.attack.validate()?;
        if let PipelineSource::Rounds(rounds) = &self.source {
            if rounds.is_empty() {
                return Err(Error::validation("no rounds configured"));
            }
        }
        Ok(())
    }
}

/// Load a pipeline config file; relative paths inside it resolve against
/// its own directory.
pub fn read_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("pipeline config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    PipelineConfig::from_toml(&text, base)
}

/// Re-wrap an error with a note, keeping its class so exit codes survive
/// the extra context.
fn with_note(err: Error, note: impl std::fmt::Display) -> Error {
    match err {
        Error::Validation(m) => Error::Validation(format!("{note}: {m}")),
        Error::Data(m) => Error::Data(format!("{note}: {m}")),
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{note}: {io}"))),
        Error::Internal(m) => Error::Internal(format!("{note}: {m}")),
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Write an artifact atomically: the content goes to `<name>.partial`,
/// which is renamed over the final name only after the writer succeeds.
/// On failure the partial file stays behind as the marker of an
/// incomplete output.
pub fn write_artifact<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let partial = partial_path(path);
    let file = File::create(&partial)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", partial.display())))?;
    let mut out = BufWriter::new(file);
    write(&mut out)
        .and_then(|()| out.flush().map_err(Error::from))
        .map_err(|e| with_note(e, format!("partial output retained at {}", partial.display())))?;
    fs::rename(&partial, path)?;
    Ok(())
}

fn label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn digest_inputs(paths: &[&Path]) -> Result<Vec<(String, String)>> {
    paths
        .iter()
        .map(|p| Ok((label(p), file_digest(p)?)))
        .collect()
}

fn format_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "-".to_string(),
    }
}

/// True when the file opens with a capture-format magic, including the
/// unsupported variants, so those fail with the capture parser's own
/// message instead of as garbled text lines.
fn is_capture(path: &Path) -> Result<bool> {
    let mut file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut magic = [0u8; 4];
    if file.read_exact(&mut magic).is_err() {
        return Ok(false);
    }
    Ok(matches!(
        u32::from_be_bytes(magic),
        0xa1b2_c3d4 | 0xd4c3_b2a1 | 0xa1b2_3c4d | 0x4d3c_b2a1 | 0x0a0d_0d0a
    ))
}

/// What the matching stage did, for logs and exit summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchFileStats {
    pub probes_total: u64,
    pub matched_packets: u64,
    pub unmatched_packets: u64,
    /// Malformed trace lines or frames the reader skipped.
    pub source_rejected: u64,
    /// Malformed ledger lines skipped.
    pub ledger_rejected: u64,
}

fn run_match(
    ledger: &Path,
    trace: &Path,
    config: &MatchConfig,
) -> Result<(MatchReport, MatchFileStats)> {
    let mut probes = ProbeStream::new(open_reader(ledger)?);
    let (report, source_rejected) = if is_capture(trace)? {
        let file = File::open(trace)
            .map_err(|e| Error::data(format!("cannot open {}: {e}", trace.display())))?;
        let parsed = read_pcap(std::io::BufReader::new(file))
            .map_err(|e| with_note(e, trace.display()))?;
        let report = match_stream(&mut probes, parsed.records.into_iter().map(Ok), config)?;
        (report, parsed.rejected)
    } else {
        let mut packets = PacketStream::new(open_reader(trace)?);
        let report = match_stream(&mut probes, &mut packets, config)?;
        let rejected = packets.rejected();
        (report, rejected)
    };
    let stats = MatchFileStats {
        probes_total: report.probes_total,
        matched_packets: report.matched_packets,
        unmatched_packets: report.unmatched_packets,
        source_rejected,
        ledger_rejected: probes.rejected(),
    };
    Ok((report, stats))
}

/// Match one trace against one ledger and write the responses file. The
/// trace may be a native text trace or a classic capture file; the format
/// is sniffed from the leading bytes.
pub fn match_files(
    ledger: &Path,
    trace: &Path,
    config: &MatchConfig,
    out: &Path,
) -> Result<MatchFileStats> {
    let inputs = digest_inputs(&[ledger, trace])?;
    let (report, stats) = run_match(ledger, trace, config)?;
    if stats.source_rejected > 0 {
        log::warn!(
            "{}: skipped {} malformed packet lines or frames",
            trace.display(),
            stats.source_rejected
        );
    }
    if stats.ledger_rejected > 0 {
        log::warn!(
            "{}: skipped {} malformed ledger lines",
            ledger.display(),
            stats.ledger_rejected
        );
    }
    write_artifact(out, |w| write_responses(w, &report, &inputs))?;
    Ok(stats)
}

/// Classify one round: rebuild responses from the responses file, seed the
/// profile set from the ledger so silent targets appear, and write the
/// profile lines.
pub fn classify_files(
    ledger: &Path,
    responses: &Path,
    round_id: u32,
    blowback_threshold: u64,
    out: &Path,
) -> Result<usize> {
    let inputs = digest_inputs(&[ledger, responses])?;
    let parsed = parse_probe_ledger(open_reader(ledger)?)?;
    if parsed.rejected > 0 {
        log::warn!(
            "{}: skipped {} malformed ledger lines",
            ledger.display(),
            parsed.rejected
        );
    }
    let rows = read_response_rows(open_reader(responses)?)?;
    let stitched = rows_to_responses(&rows);
    let profiles =
        build_profiles_with_ledger(&parsed.records, &stitched, round_id, blowback_threshold)?;
    write_artifact(out, |w| {
        write_profiles(w, &profiles)?;
        writeln!(w, "{}", footer_line(&inputs))?;
        Ok(())
    })?;
    Ok(profiles.len())
}

fn read_profile_files(paths: &[PathBuf]) -> Result<Vec<GeneratorProfile>> {
    let mut sets = Vec::with_capacity(paths.len());
    for path in paths {
        let profiles =
            read_profiles(open_reader(path)?).map_err(|e| with_note(e, path.display()))?;
        sets.push(profiles);
    }
    merge_profiles(sets)
}

fn round_ids(profiles: &[GeneratorProfile]) -> Vec<u32> {
    let ids: BTreeSet<u32> = profiles
        .iter()
        .flat_map(|p| p.rounds.iter().map(|r| r.round_id))
        .collect();
    ids.into_iter().collect()
}

/// Consecutive row slices sharing one probe identity. The writer emits a
/// response's rows adjacently, so this grouping is lossless on tool
/// output.
fn grouped_rows(rows: &[ResponseRow]) -> Vec<&[ResponseRow]> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        let boundary = i == rows.len() || {
            let a = &rows[i - 1];
            let b = &rows[i];
            a.probe_target != b.probe_target
                || a.protocol != b.protocol
                || a.send_time_us != b.send_time_us
        };
        if boundary {
            if i > start {
                groups.push(&rows[start..i]);
            }
            start = i;
        }
    }
    groups
}

/// Per-protocol packet-kind tallies over multipacket responses (at least
/// two packets), the population the type-share columns describe.
fn breakdown_by_protocol(rows: &[ResponseRow]) -> BTreeMap<ProbeProtocol, TypeBreakdown> {
    let mut map: BTreeMap<ProbeProtocol, TypeBreakdown> = BTreeMap::new();
    for group in grouped_rows(rows) {
        if group.len() < 2 {
            continue;
        }
        let entry = map.entry(group[0].protocol).or_default();
        for row in group {
            entry.add(row.kind);
        }
    }
    map
}

fn ledger_totals_by_protocol(path: &Path) -> Result<BTreeMap<ProbeProtocol, ProbeTotals>> {
    let parsed = parse_probe_ledger(open_reader(path)?)?;
    let mut map: BTreeMap<ProbeProtocol, ProbeTotals> = BTreeMap::new();
    for probe in &parsed.records {
        let entry = map.entry(probe.protocol).or_default();
        entry.packets += 1;
        entry.bytes += probe.probe_size as u64;
    }
    Ok(map)
}

const SUMMARY_COLUMNS: [&str; 17] = [
    "round",
    "protocol",
    "rggs",
    "multipacket_rggs",
    "blowback_rggs",
    "blowback_traffic_share",
    "probe_packets",
    "probe_bytes",
    "response_packets",
    "response_bytes",
    "packet_amplification",
    "volume_amplification",
    "in_protocol_pct",
    "ttl_expired_pct",
    "redirect_pct",
    "unreachable_pct",
    "other_pct",
];

/// Aggregate profiles into one summary row per round and protocol.
/// `ledger_paths` and `response_paths` are optional refinements: when
/// given, one file per round in ascending round order supplies the probe
/// totals (hence amplification) and the packet-kind shares.
pub fn summarize_files(
    profile_paths: &[PathBuf],
    ledger_paths: &[PathBuf],
    response_paths: &[PathBuf],
    out: &Path,
) -> Result<()> {
    if profile_paths.is_empty() {
        return Err(Error::validation("summarize needs at least one profiles file"));
    }
    let profiles = read_profile_files(profile_paths)?;
    let rounds = round_ids(&profiles);
    if !ledger_paths.is_empty() && ledger_paths.len() != rounds.len() {
        return Err(Error::validation(format!(
            "one ledger per round in ascending round order: {} rounds, {} ledgers",
            rounds.len(),
            ledger_paths.len()
        )));
    }
    if !response_paths.is_empty() && response_paths.len() != rounds.len() {
        return Err(Error::validation(format!(
            "one responses file per round in ascending round order: {} rounds, {} files",
            rounds.len(),
            response_paths.len()
        )));
    }

    let mut totals_per_round: Vec<BTreeMap<ProbeProtocol, ProbeTotals>> = Vec::new();
    for path in ledger_paths {
        totals_per_round.push(ledger_totals_by_protocol(path)?);
    }
    let mut breakdown_per_round: Vec<BTreeMap<ProbeProtocol, TypeBreakdown>> = Vec::new();
    for path in response_paths {
        let rows = read_response_rows(open_reader(path)?).map_err(|e| with_note(e, path.display()))?;
        breakdown_per_round.push(breakdown_by_protocol(&rows));
    }

    let all_paths: Vec<&Path> = profile_paths
        .iter()
        .chain(ledger_paths)
        .chain(response_paths)
        .map(PathBuf::as_path)
        .collect();
    let inputs = digest_inputs(&all_paths)?;

    write_artifact(out, |w| {
        let mut table = Table::new(w, &SUMMARY_COLUMNS)?;
        for (label, digest) in &inputs {
            table.input(label, digest.clone());
        }
        for (index, &round) in rounds.iter().enumerate() {
            let mut protocols: BTreeSet<ProbeProtocol> = profiles
                .iter()
                .filter(|p| p.round(round).is_some())
                .map(|p| p.protocol)
                .collect();
            if let Some(totals) = totals_per_round.get(index) {
                protocols.extend(totals.keys().copied());
            }
            for protocol in protocols {
                let records = profiles
                    .iter()
                    .filter(|p| p.protocol == protocol)
                    .filter_map(|p| p.round(round));
                let totals = totals_per_round
                    .get(index)
                    .and_then(|m| m.get(&protocol))
                    .copied()
                    .unwrap_or_default();
                let summary = summarize_scan(records, totals);
                let shares: [String; 5] = if breakdown_per_round.is_empty() {
                    std::array::from_fn(|_| "-".to_string())
                } else {
                    let breakdown = breakdown_per_round[index]
                        .get(&protocol)
                        .copied()
                        .unwrap_or_default();
                    std::array::from_fn(|i| {
                        format!("{:.2}", breakdown.share_percent(PacketKind::ALL[i]))
                    })
                };
                table.row(&[
                    round.to_string(),
                    protocol.to_string(),
                    summary.total_rggs.to_string(),
                    summary.multipacket_rggs.to_string(),
                    summary.blowback_rggs.to_string(),
                    format_opt(summary.blowback_share_of_multipacket_traffic, 4),
                    summary.probe_packets.to_string(),
                    summary.probe_bytes.to_string(),
                    summary.response_packets.to_string(),
                    summary.response_bytes.to_string(),
                    format_opt(summary.packet_amplification, 4),
                    format_opt(summary.volume_amplification, 4),
                    shares[0].clone(),
                    shares[1].clone(),
                    shares[2].clone(),
                    shares[3].clone(),
                    shares[4].clone(),
                ])?;
            }
        }
        table.finish()
    })
}

/// Prevalence of the baseline round's blowback generators across every
/// round. Returns `None` (and writes an empty, explained table) when the
/// baseline round has no blowback generators to track.
pub fn stability_files(
    profile_paths: &[PathBuf],
    baseline_round: u32,
    out: &Path,
) -> Result<Option<StabilityReport>> {
    let profiles = read_profile_files(profile_paths)?;
    let inputs = digest_inputs(&path_refs(profile_paths))?;
    let bbgs: BTreeSet<std::net::Ipv4Addr> = profiles
        .iter()
        .filter(|p| {
            p.round(baseline_round)
                .is_some_and(|r| r.class == ResponseClass::Blowback)
        })
        .map(|p| p.generator_ip)
        .collect();
    if bbgs.is_empty() {
        write_artifact(out, |w| {
            let mut table = Table::new(w, &["round", "blowback_prevalence", "active_prevalence"])?;
            for (label, digest) in &inputs {
                table.input(label, digest.clone());
            }
            table.comment(&format!(
                "no blowback generators in baseline round {baseline_round}; nothing to track"
            ))?;
            table.finish()
        })?;
        return Ok(None);
    }
    let report = stability(&bbgs, &profiles)?;
    write_artifact(out, |w| {
        let mut table = Table::new(w, &["round", "blowback_prevalence", "active_prevalence"])?;
        for (label, digest) in &inputs {
            table.input(label, digest.clone());
        }
        for round in &report.rounds {
            table.row(&[
                round.round_id.to_string(),
                format!("{:.6}", round.blowback_prevalence),
                format!("{:.6}", round.active_prevalence),
            ])?;
        }
        table.comment(&format!(
            "baseline_round={baseline_round} bbg_count={}",
            report.bbg_count
        ))?;
        table.comment(&format!(
            "blowback min={:.6} max={:.6} churn={}",
            report.min_blowback, report.max_blowback, report.blowback_churn
        ))?;
        table.comment(&format!(
            "active min={:.6} max={:.6} churn={}",
            report.min_active, report.max_active, report.active_churn
        ))?;
        table.finish()
    })?;
    Ok(Some(report))
}

/// Cumulative activity curves, every round ranked by the rank round.
pub fn concentration_files(
    profile_paths: &[PathBuf],
    rank_round: u32,
    out: &Path,
) -> Result<()> {
    let profiles = read_profile_files(profile_paths)?;
    let inputs = digest_inputs(&path_refs(profile_paths))?;
    let curves = activity_concentration(&profiles, rank_round);
    write_artifact(out, |w| {
        let mut table = Table::new(w, &["round", "rank", "cumulative_packets"])?;
        for (label, digest) in &inputs {
            table.input(label, digest.clone());
        }
        for curve in &curves {
            for (i, cumulative) in curve.cumulative.iter().enumerate() {
                table.row(&[
                    curve.round_id.to_string(),
                    (i + 1).to_string(),
                    cumulative.to_string(),
                ])?;
            }
        }
        table.comment(&format!("rank_round={rank_round}"))?;
        table.finish()
    })
}

/// Attribute response traffic to generator origins with prefix datasets
/// (`CIDR,value` lines). Uncovered generators land in the unknown bucket.
pub fn origins_files(
    profile_paths: &[PathBuf],
    asn_path: &Path,
    geo_path: &Path,
    out: &Path,
) -> Result<Vec<OriginRound>> {
    let profiles = read_profile_files(profile_paths)?;
    let mut input_paths = path_refs(profile_paths);
    input_paths.push(asn_path);
    input_paths.push(geo_path);
    let inputs = digest_inputs(&input_paths)?;
    let asn = PrefixDataset::read(open_reader(asn_path)?)
        .map_err(|e| with_note(e, asn_path.display()))?;
    let geo = PrefixDataset::read(open_reader(geo_path)?)
        .map_err(|e| with_note(e, geo_path.display()))?;
    let rounds = attribute_origins(&profiles, &asn, &geo);
    write_artifact(out, |w| {
        let mut table = Table::new(w, &["round", "scope", "origin", "packets", "share"])?;
        for (label, digest) in &inputs {
            table.input(label, digest.clone());
        }
        for round in &rounds {
            for (scope, tally) in [("asn", &round.asn_tally), ("country", &round.country_tally)] {
                for (origin, packets) in tally {
                    let share = if round.total_packets > 0 {
                        *packets as f64 / round.total_packets as f64
                    } else {
                        0.0
                    };
                    table.row(&[
                        round.round_id.to_string(),
                        scope.to_string(),
                        origin.clone(),
                        packets.to_string(),
                        format!("{share:.6}"),
                    ])?;
                }
            }
            if let Some((asn, share)) = round.dominant_asn() {
                table.comment(&format!(
                    "round {} dominant asn={asn} share={share:.6}",
                    round.round_id
                ))?;
            }
            if let Some((country, share)) = round.dominant_country() {
                table.comment(&format!(
                    "round {} dominant country={country} share={share:.6}",
                    round.round_id
                ))?;
            }
        }
        table.finish()
    })?;
    Ok(rounds)
}

/// Count forwarding loops in a traceroute corpus: a path loops when some
/// hop address occurs at least `repeat_threshold` times.
pub fn loops_files(paths_path: &Path, repeat_threshold: u32, out: &Path) -> Result<LoopReport> {
    if repeat_threshold < 2 {
        return Err(Error::validation(
            "loop threshold below 2 would flag every path",
        ));
    }
    let inputs = digest_inputs(&[paths_path])?;
    let paths = read_traceroutes(open_reader(paths_path)?)
        .map_err(|e| with_note(e, paths_path.display()))?;
    let report = detect_loops(&paths, repeat_threshold);
    write_artifact(out, |w| {
        let mut table = Table::new(w, &["total_paths", "looping_paths", "prevalence"])?;
        for (label, digest) in &inputs {
            table.input(label, digest.clone());
        }
        table.row(&[
            report.total_paths.to_string(),
            report.looping_paths.to_string(),
            format_opt(report.prevalence, 6),
        ])?;
        table.comment(&format!("repeat_threshold={repeat_threshold}"))?;
        table.finish()
    })?;
    Ok(report)
}

fn stitch_response_files(paths: &[PathBuf]) -> Result<Vec<MatchedResponse>> {
    // Stitch per file: a response's rows are adjacent within one file, but
    // nothing aligns rows across files.
    let mut all = Vec::new();
    for path in paths {
        let rows =
            read_response_rows(open_reader(path)?).map_err(|e| with_note(e, path.display()))?;
        all.extend(rows_to_responses(&rows));
    }
    Ok(all)
}

/// Second-by-second histograms of the busiest responses (most packets
/// first, ties by target address).
pub fn timing_files(response_paths: &[PathBuf], top: usize, out: &Path) -> Result<()> {
    if top < 1 {
        return Err(Error::validation("timing needs top of at least 1"));
    }
    let inputs = digest_inputs(&path_refs(response_paths))?;
    let mut responses = stitch_response_files(response_paths)?;
    responses.sort_by_key(|r| {
        (
            std::cmp::Reverse(r.packet_count()),
            r.probe.target_ip,
            r.probe.protocol,
            r.probe.send_time_us,
        )
    });
    responses.truncate(top);
    write_artifact(out, |w| {
        let mut table = Table::new(w, &["generator", "protocol", "second", "packets"])?;
        for (label, digest) in &inputs {
            table.input(label, digest.clone());
        }
        for response in &responses {
            for (second, packets) in timing_histogram_seconds(response).iter().enumerate() {
                table.row(&[
                    response.probe.target_ip.to_string(),
                    response.probe.protocol.to_string(),
                    second.to_string(),
                    packets.to_string(),
                ])?;
            }
        }
        table.finish()
    })
}

/// Simulate the attack bandwidth of replaying the probes behind these
/// responses as one simultaneous fleet. Ledgers, when given, supply the
/// probe-side cost totals; without them the probe cost falls back to the
/// response count with unknown bytes.
pub fn attack_files(
    response_paths: &[PathBuf],
    ledger_paths: &[PathBuf],
    config: &AttackConfig,
    out: &Path,
) -> Result<AttackTimeline> {
    if response_paths.is_empty() {
        return Err(Error::validation("attack-sim needs at least one responses file"));
    }
    let mut input_paths = path_refs(response_paths);
    input_paths.extend(path_refs(ledger_paths));
    let inputs = digest_inputs(&input_paths)?;
    let responses = stitch_response_files(response_paths)?;
    let probes = if ledger_paths.is_empty() {
        None
    } else {
        let mut totals = ProbeTotals::default();
        for path in ledger_paths {
            let parsed = parse_probe_ledger(open_reader(path)?)?;
            let t = probe_totals(&parsed.records);
            totals.packets += t.packets;
            totals.bytes += t.bytes;
        }
        Some(totals)
    };
    let timeline = simulate_attack(&responses, probes, config)?;
    write_artifact(out, |w| {
        let mut table = Table::new(w, &["second", "pps", "Bps"])?;
        for (label, digest) in &inputs {
            table.input(label, digest.clone());
        }
        for (second, bin) in timeline.bins.iter().enumerate() {
            table.row(&[
                second.to_string(),
                bin.packets.to_string(),
                bin.bytes.to_string(),
            ])?;
        }
        table.comment(&format!(
            "total_packets={} total_bytes={} probe_packets={} probe_bytes={}",
            timeline.total_packets,
            timeline.total_bytes,
            timeline.probe_packets,
            timeline.probe_bytes
        ))?;
        table.comment(&format!(
            "first_second packet_amplification={} volume_amplification={}",
            format_opt(timeline.first_second_packet_amplification(), 4),
            format_opt(timeline.first_second_volume_amplification(), 4)
        ))?;
        table.comment(&format!(
            "repeat={} period_us={} skewed_packets={}",
            config.repeat, config.period_us, timeline.skewed_packets
        ))?;
        table.finish()
    })?;
    Ok(timeline)
}

fn path_refs(paths: &[PathBuf]) -> Vec<&Path> {
    paths.iter().map(PathBuf::as_path).collect()
}

/// One manifest line: a produced file, its byte length, and its digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// What a pipeline run produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub rounds: Vec<u32>,
    pub entries: Vec<ManifestEntry>,
    pub manifest_path: PathBuf,
}

/// Generate a campaign into `out_dir`: one ledger and trace per round plus
/// the generator ground truth, returning the round inputs and every file
/// written.
pub fn synthesize_rounds(
    source: &SynthSource,
    out_dir: &Path,
) -> Result<(Vec<RoundInput>, Vec<PathBuf>)> {
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", out_dir.display())))?;
    let scenario = read_scenario(&source.scenario)?;
    let mut config = scenario.config;
    if let Some(rounds) = source.rounds {
        config.rounds = rounds;
    }
    if let Some(noise) = source.noise_pps {
        config.noise_pps = noise;
    }
    if let Some(seed) = source.seed {
        config.seed = seed;
    }
    let campaign = generate_campaign(&scenario.specs, &config)?;
    let scenario_digest = file_digest(&source.scenario)?;
    let mut rounds = Vec::with_capacity(campaign.rounds.len());
    let mut written = Vec::new();
    for round in &campaign.rounds {
        let ledger = out_dir.join(format!("round-{}.ledger", round.round_id));
        write_artifact(&ledger, |w| write_probe_ledger(w, &round.ledger))?;
        let trace = out_dir.join(format!("round-{}.trace", round.round_id));
        write_artifact(&trace, |w| write_packet_trace(w, &round.trace))?;
        written.push(ledger.clone());
        written.push(trace.clone());
        rounds.push(RoundInput {
            id: round.round_id,
            ledger,
            trace,
        });
    }
    let truth = out_dir.join("truth.profiles");
    write_artifact(&truth, |w| {
        write_profiles(w, &campaign.truth)?;
        writeln!(
            w,
            "{}",
            footer_line(&[(label(&source.scenario), scenario_digest)])
        )?;
        Ok(())
    })?;
    written.push(truth);
    Ok((rounds, written))
}

/// Run the whole pipeline: resolve the data source, then match, classify,
/// summarize, and analyze every round, closing with a digest manifest of
/// everything produced.
pub fn run_pipeline(config: &PipelineConfig, manifest_inputs: &[(String, String)]) -> Result<RunReport> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", config.out_dir.display())))?;
    let out_dir = &config.out_dir;
    let mut artifacts: Vec<PathBuf> = Vec::new();

    let rounds: Vec<RoundInput> = match &config.source {
        PipelineSource::Rounds(rounds) => rounds.clone(),
        PipelineSource::Synth(source) => {
            let (rounds, written) =
                synthesize_rounds(source, out_dir).map_err(|e| with_note(e, "synth stage"))?;
            artifacts.extend(written);
            rounds
        }
    };

    let mut ledger_paths = Vec::with_capacity(rounds.len());
    let mut response_paths = Vec::with_capacity(rounds.len());
    let mut profile_paths = Vec::with_capacity(rounds.len());
    for round in &rounds {
        let responses = out_dir.join(format!("round-{}.responses", round.id));
        match_files(&round.ledger, &round.trace, &config.match_config, &responses)
            .map_err(|e| with_note(e, format!("match stage, round {}", round.id)))?;
        artifacts.push(responses.clone());

        let profiles = out_dir.join(format!("round-{}.profiles", round.id));
        classify_files(
            &round.ledger,
            &responses,
            round.id,
            config.blowback_threshold,
            &profiles,
        )
        .map_err(|e| with_note(e, format!("classify stage, round {}", round.id)))?;
        artifacts.push(profiles.clone());

        ledger_paths.push(round.ledger.clone());
        response_paths.push(responses);
        profile_paths.push(profiles);
    }

    let summary = out_dir.join("summary.tsv");
    summarize_files(&profile_paths, &ledger_paths, &response_paths, &summary)
        .map_err(|e| with_note(e, "summarize stage"))?;
    artifacts.push(summary);

    let baseline_round = rounds[0].id;
    let stability_path = out_dir.join("stability.tsv");
    stability_files(&profile_paths, baseline_round, &stability_path)
        .map_err(|e| with_note(e, "stability stage"))?;
    artifacts.push(stability_path);

    let concentration = out_dir.join("concentration.tsv");
    concentration_files(&profile_paths, baseline_round, &concentration)
        .map_err(|e| with_note(e, "concentration stage"))?;
    artifacts.push(concentration);

    if let (Some(asn), Some(geo)) = (&config.datasets.asn, &config.datasets.geo) {
        let origins = out_dir.join("origins.tsv");
        origins_files(&profile_paths, asn, geo, &origins)
            .map_err(|e| with_note(e, "origins stage"))?;
        artifacts.push(origins);
    }

    if let Some(traceroutes) = &config.datasets.traceroutes {
        let loops = out_dir.join("loops.tsv");
        loops_files(traceroutes, config.loop_threshold, &loops)
            .map_err(|e| with_note(e, "loops stage"))?;
        artifacts.push(loops);
    }

    let last_round = rounds.len() - 1;
    let timing = out_dir.join("timing.tsv");
    timing_files(
        std::slice::from_ref(&response_paths[last_round]),
        config.timing_top,
        &timing,
    )
    .map_err(|e| with_note(e, "timing stage"))?;
    artifacts.push(timing);

    let attack = out_dir.join("attack.tsv");
    attack_files(
        std::slice::from_ref(&response_paths[last_round]),
        std::slice::from_ref(&ledger_paths[last_round]),
        &config.attack,
        &attack,
    )
    .map_err(|e| with_note(e, "attack stage"))?;
    artifacts.push(attack);

    let mut entries = Vec::with_capacity(artifacts.len());
    for path in &artifacts {
        entries.push(ManifestEntry {
            name: label(path),
            bytes: fs::metadata(path)?.len(),
            sha256: file_digest(path)?,
        });
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));

    let manifest_path = out_dir.join("manifest.tsv");
    write_artifact(&manifest_path, |w| {
        let mut table = Table::new(w, &["file", "bytes", "sha256"])?;
        for (label, digest) in manifest_inputs {
            table.input(label, digest.clone());
        }
        for entry in &entries {
            table.row(&[
                entry.name.clone(),
                entry.bytes.to_string(),
                entry.sha256.clone(),
            ])?;
        }
        table.finish()
    })?;

    Ok(RunReport {
        out_dir: out_dir.clone(),
        rounds: rounds.iter().map(|r| r.id).collect(),
        entries,
        manifest_path,
    })
}
