//! Cross-round analytics over classified profiles: generator stability,
//! activity concentration, origin attribution, routing-loop prevalence, and
//! per-response timing histograms.

pub mod loops;
pub mod origins;

pub use loops::{
    detect_loops, path_has_loop, read_traceroutes, write_traceroutes, LoopReport,
    TraceroutePath, DEFAULT_LOOP_THRESHOLD,
};
pub use origins::{attribute_origins, OriginRound, PrefixDataset, UNKNOWN_ORIGIN};

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use crate::classifier::{GeneratorProfile, ResponseClass};
use crate::error::{Error, Result};
use crate::model::{MatchedResponse, MICROS_PER_SEC};

/// Prevalence of the original blowback generators in one rescan round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundPrevalence {
    pub round_id: u32,
    /// Fraction of the full-scan generator set still producing blowback.
    pub blowback_prevalence: f64,
    /// Fraction still producing at least one packet.
    pub active_prevalence: f64,
}

/// Stability of a full scan's blowback generator set across rescans.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Size of the full-scan generator set the fractions refer to.
    pub bbg_count: u64,
    /// Ascending by round id.
    pub rounds: Vec<RoundPrevalence>,
    pub min_blowback: f64,
    pub max_blowback: f64,
    pub min_active: f64,
    pub max_active: f64,
    /// Values of the earliest round, the "first rescan" markers.
    pub first_round_blowback: f64,
    pub first_round_active: f64,
    /// True when some later round's prevalence exceeds an earlier round's:
    /// generators come and go rather than only aging out.
    pub blowback_churn: bool,
    pub active_churn: bool,
}

fn exceeds_earlier(values: impl Iterator<Item = f64>) -> bool {
    let mut low = f64::INFINITY;
    for v in values {
        if v > low {
            return true;
        }
        low = low.min(v);
    }
    false
}

/// Prevalence of `full_scan_bbgs` across the rescan rounds present in
/// `profiles`. Rounds are discovered from the profiles; membership tests use
/// each round record's class, so whatever blowback threshold classification
/// ran with carries over.
pub fn stability(
    full_scan_bbgs: &BTreeSet<Ipv4Addr>,
    profiles: &[GeneratorProfile],
) -> Result<StabilityReport> {
    if full_scan_bbgs.is_empty() {
        return Err(Error::validation(
            "stability needs a non-empty full-scan generator set",
        ));
    }
    let bbg_count = full_scan_bbgs.len() as u64;
    let round_ids: BTreeSet<u32> = profiles
        .iter()
        .flat_map(|p| p.rounds.iter().map(|r| r.round_id))
        .collect();
    if round_ids.is_empty() {
        return Err(Error::data("no rescan rounds in the given profiles"));
    }

    let mut rounds = Vec::with_capacity(round_ids.len());
    for &round_id in &round_ids {
        let mut blowback = 0u64;
        let mut active = 0u64;
        for profile in profiles {
            if !full_scan_bbgs.contains(&profile.generator_ip) {
                continue;
            }
            if let Some(record) = profile.round(round_id) {
                if record.class == ResponseClass::Blowback {
                    blowback += 1;
                }
                if record.class != ResponseClass::Silent {
                    active += 1;
                }
            }
        }
        rounds.push(RoundPrevalence {
            round_id,
            blowback_prevalence: blowback as f64 / bbg_count as f64,
            active_prevalence: active as f64 / bbg_count as f64,
        });
    }

    let blowbacks = || rounds.iter().map(|r| r.blowback_prevalence);
    let actives = || rounds.iter().map(|r| r.active_prevalence);
    Ok(StabilityReport {
        bbg_count,
        min_blowback: blowbacks().fold(f64::INFINITY, f64::min),
        max_blowback: blowbacks().fold(0.0, f64::max),
        min_active: actives().fold(f64::INFINITY, f64::min),
        max_active: actives().fold(0.0, f64::max),
        first_round_blowback: rounds[0].blowback_prevalence,
        first_round_active: rounds[0].active_prevalence,
        blowback_churn: exceeds_earlier(blowbacks()),
        active_churn: exceeds_earlier(actives()),
        rounds,
    })
}

/// Generators that produced at least one packet in every round appearing in
/// the input; the population the concentration curves are drawn over.
pub fn persistent_generators(profiles: &[GeneratorProfile]) -> Vec<&GeneratorProfile> {
    let round_ids: BTreeSet<u32> = profiles
        .iter()
        .flat_map(|p| p.rounds.iter().map(|r| r.round_id))
        .collect();
    profiles
        .iter()
        .filter(|p| {
            round_ids.iter().all(|&id| {
                p.round(id)
                    .map(|r| r.class != ResponseClass::Silent)
                    .unwrap_or(false)
            })
        })
        .collect()
}

/// Cumulative packet counts by generator rank for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcentrationCurve {
    pub round_id: u32,
    /// `cumulative[k]` is the packet total of the top `k + 1` generators,
    /// ranked by their activity in the rank round.
    pub cumulative: Vec<u64>,
}

/// One curve per round, all ranked by activity in `rank_round` (descending,
/// ties by generator address) so the same generator order underlies every
/// curve.
pub fn activity_concentration(
    profiles: &[GeneratorProfile],
    rank_round: u32,
) -> Vec<ConcentrationCurve> {
    let mut ranked: Vec<&GeneratorProfile> = profiles.iter().collect();
    ranked.sort_by_key(|p| {
        let packets = p.round(rank_round).map(|r| r.packet_count).unwrap_or(0);
        (std::cmp::Reverse(packets), p.generator_ip)
    });
    let round_ids: BTreeSet<u32> = profiles
        .iter()
        .flat_map(|p| p.rounds.iter().map(|r| r.round_id))
        .collect();
    round_ids
        .into_iter()
        .map(|round_id| {
            let mut cumulative = Vec::with_capacity(ranked.len());
            let mut total = 0u64;
            for profile in &ranked {
                total += profile.round(round_id).map(|r| r.packet_count).unwrap_or(0);
                cumulative.push(total);
            }
            ConcentrationCurve {
                round_id,
                cumulative,
            }
        })
        .collect()
}

/// Packets of one response binned by whole seconds (or another bin width)
/// since its probe. Zero bins are kept up to the last non-empty one, so the
/// vector length is the response's active span in bins.
pub fn timing_histogram(response: &MatchedResponse, bin_us: i64) -> Vec<u64> {
    debug_assert!(bin_us > 0);
    let send = response.probe.send_time_us;
    let mut bins: Vec<u64> = Vec::new();
    for (packet, _) in &response.packets {
        // Matched packets never precede their probe; stay defensive about
        // hand-built inputs.
        let offset = (packet.recv_time_us - send).max(0);
        let bin = (offset / bin_us) as usize;
        if bin >= bins.len() {
            bins.resize(bin + 1, 0);
        }
        bins[bin] += 1;
    }
    bins
}

/// The conventional one-second histogram.
pub fn timing_histogram_seconds(response: &MatchedResponse) -> Vec<u64> {
    timing_histogram(response, MICROS_PER_SEC)
}
