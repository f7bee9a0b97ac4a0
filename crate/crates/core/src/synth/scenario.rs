//! Scenario files: the TOML schema behind `bbkit synth --scenario`.
//!
//! A scenario holds campaign-wide knobs plus a list of `[[generator]]`
//! tables. Each table either names a preset or spells out a spec, and may
//! be replicated with `count`, which offsets every address in the block
//! by the replica index so generator addresses stay distinct.

use std::net::Ipv4Addr;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::ProbeProtocol;

use super::{preset, CampaignConfig, GeneratorSpec, PacketMix, TimingProfile};

/// Parsed and resolved scenario: concrete specs plus the campaign config
/// (file values override the defaults; CLI flags override the file).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub specs: Vec<GeneratorSpec>,
    pub config: CampaignConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: Option<u64>,
    rounds: Option<u32>,
    noise_pps: Option<u32>,
    start_us: Option<i64>,
    round_gap_us: Option<i64>,
    probe_spacing_us: Option<i64>,
    zone: Option<String>,
    #[serde(default, rename = "generator")]
    generators: Vec<GeneratorEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorEntry {
    preset: Option<String>,
    ip: Option<Ipv4Addr>,
    protocol: Option<String>,
    timing: Option<TimingEntry>,
    #[serde(default)]
    rg_members: Vec<Ipv4Addr>,
    packet_mix: Option<MixEntry>,
    #[serde(default)]
    churn: Vec<bool>,
    packet_size: Option<u32>,
    #[serde(default = "default_count")]
    count: u32,
}

fn default_count() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum TimingEntry {
    Ramp { rate_step: u32, duration_s: u32 },
    Pulse { on_s: u32, off_s: u32, rate: u32, duration_s: u32 },
    Burst { burst_sizes: Vec<u32>, gap_us: Vec<i64> },
    Constant { rate: u32, duration_s: u32 },
    Single,
    Silent,
}

impl TimingEntry {
    fn to_profile(&self) -> TimingProfile {
        match self {
            TimingEntry::Ramp { rate_step, duration_s } => TimingProfile::Ramp {
                rate_step: *rate_step,
                duration_s: *duration_s,
            },
            TimingEntry::Pulse { on_s, off_s, rate, duration_s } => TimingProfile::Pulse {
                on_s: *on_s,
                off_s: *off_s,
                rate: *rate,
                duration_s: *duration_s,
            },
            TimingEntry::Burst { burst_sizes, gap_us } => TimingProfile::Burst {
                burst_sizes: burst_sizes.clone(),
                gap_us: gap_us.clone(),
            },
            TimingEntry::Constant { rate, duration_s } => TimingProfile::Constant {
                rate: *rate,
                duration_s: *duration_s,
            },
            TimingEntry::Single => TimingProfile::Single,
            TimingEntry::Silent => TimingProfile::Silent,
        }
    }
}

/// Kind shares by name; omitted fields are zero.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixEntry {
    #[serde(default)]
    in_protocol: f64,
    #[serde(default)]
    ttl_expired: f64,
    #[serde(default)]
    redirect: f64,
    #[serde(default)]
    unreachable: f64,
    #[serde(default)]
    other: f64,
}

impl MixEntry {
    fn to_mix(&self) -> Result<PacketMix> {
        PacketMix::new([
            self.in_protocol,
            self.ttl_expired,
            self.redirect,
            self.unreachable,
            self.other,
        ])
    }
}

fn parse_protocol(s: &str) -> Result<ProbeProtocol> {
    s.trim().to_ascii_uppercase().parse()
}

fn offset_ip(ip: Ipv4Addr, k: u32) -> Result<Ipv4Addr> {
    u32::from(ip)
        .checked_add(k)
        .map(Ipv4Addr::from)
        .ok_or_else(|| Error::validation(format!("address {ip} + {k} overflows the IPv4 space")))
}

impl GeneratorEntry {
    fn to_specs(&self, index: usize) -> Result<Vec<GeneratorSpec>> {
        let mut spec = match &self.preset {
            Some(name) => preset(name)
                .ok_or_else(|| Error::validation(format!("unknown preset {name:?}")))?,
            None => {
                let ip = self.ip.ok_or_else(|| {
                    Error::validation(format!("generator #{index}: ip is required"))
                })?;
                let protocol = self.protocol.as_deref().ok_or_else(|| {
                    Error::validation(format!("generator #{index}: protocol is required"))
                })?;
                let timing = self.timing.as_ref().ok_or_else(|| {
                    Error::validation(format!("generator #{index}: timing is required"))
                })?;
                GeneratorSpec {
                    ip,
                    protocol: parse_protocol(protocol)?,
                    timing: timing.to_profile(),
                    // Defaults to answering from the probed address itself.
                    rg_members: vec![ip],
                    packet_mix: PacketMix::in_protocol_only(),
                    churn: Vec::new(),
                    packet_size: None,
                }
            }
        };
        if let Some(ip) = self.ip {
            spec.ip = ip;
        }
        if self.preset.is_some() {
            if let Some(protocol) = &self.protocol {
                spec.protocol = parse_protocol(protocol)?;
            }
            if let Some(timing) = &self.timing {
                spec.timing = timing.to_profile();
            }
        }
        if !self.rg_members.is_empty() {
            spec.rg_members = self.rg_members.clone();
        }
        if let Some(mix) = &self.packet_mix {
            spec.packet_mix = mix.to_mix()?;
        }
        if !self.churn.is_empty() {
            spec.churn = self.churn.clone();
        }
        if let Some(size) = self.packet_size {
            spec.packet_size = Some(size);
        }

        if self.count == 0 {
            return Err(Error::validation(format!(
                "generator #{index}: count must be at least 1"
            )));
        }
        let mut out = Vec::with_capacity(self.count as usize);
        for k in 0..self.count {
            let mut replica = spec.clone();
            replica.ip = offset_ip(spec.ip, k)?;
            replica.rg_members = spec
                .rg_members
                .iter()
                .map(|m| offset_ip(*m, k))
                .collect::<Result<Vec<_>>>()?;
            out.push(replica);
        }
        Ok(out)
    }
}

/// Parse scenario text into concrete specs and a campaign config.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::validation(format!("scenario: {e}")))?;
    let mut config = CampaignConfig::default();
    if let Some(v) = file.seed {
        config.seed = v;
    }
    if let Some(v) = file.rounds {
        config.rounds = v;
    }
    if let Some(v) = file.noise_pps {
        config.noise_pps = v;
    }
    if let Some(v) = file.start_us {
        config.start_us = v;
    }
    if let Some(v) = file.round_gap_us {
        config.round_gap_us = v;
    }
    if let Some(v) = file.probe_spacing_us {
        config.probe_spacing_us = v;
    }
    if let Some(v) = file.zone {
        config.zone = v;
    }
    let mut specs = Vec::new();
    for (index, entry) in file.generators.iter().enumerate() {
        specs.extend(entry.to_specs(index)?);
    }
    Ok(Scenario { specs, config })
}

/// Read and parse a scenario file.
pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("scenario {}: {e}", path.display())))?;
    parse_scenario(&text)
}
