//! The streaming matcher against the quadratic reference on randomized
//! campaigns. The acceptance suite runs a much larger sweep; this is the
//! fast regression gate.

mod common;

use bbkit::matcher::{MatchConfig, TcpAckMode};
use common::{assert_reports_equal, oracle_match, random_campaign, run_streaming, CampaignSpec};

#[test]
fn streaming_matches_reference_on_random_campaigns() {
    for seed in 0..16u64 {
        let spec = CampaignSpec {
            probes: 40 + (seed as usize * 37) % 400,
            packets: 200 + (seed as usize * 101) % 2_000,
            seed,
        };
        let (probes, packets) = random_campaign(spec);
        let config = MatchConfig {
            tcp_ack_mode: match seed % 3 {
                0 => TcpAckMode::Either,
                1 => TcpAckMode::SeqPlusOne,
                _ => TcpAckMode::SeqExact,
            },
            ..MatchConfig::default()
        };
        let streaming = run_streaming(&probes, &packets, &config);
        let oracle = oracle_match(&probes, &packets, &config);
        assert_reports_equal(&streaming, &oracle, &format!("seed {seed}"));
    }
}

#[test]
fn streaming_matches_reference_with_payload_retention() {
    let (probes, packets) = random_campaign(CampaignSpec {
        probes: 150,
        packets: 1_200,
        seed: 9_001,
    });
    let config = MatchConfig {
        retain_payloads: true,
        ..MatchConfig::default()
    };
    let streaming = run_streaming(&probes, &packets, &config);
    let oracle = oracle_match(&probes, &packets, &config);
    assert_reports_equal(&streaming, &oracle, "retained payloads");
}

#[test]
fn streaming_matches_reference_with_short_window() {
    // A short expiry window forces expiry, extension, and liveness edges to
    // carry the comparison instead of token logic.
    let (probes, packets) = random_campaign(CampaignSpec {
        probes: 300,
        packets: 2_500,
        seed: 77,
    });
    let config = MatchConfig {
        expiry_window_us: 3 * bbkit::model::MICROS_PER_SEC,
        ..MatchConfig::default()
    };
    let streaming = run_streaming(&probes, &packets, &config);
    let oracle = oracle_match(&probes, &packets, &config);
    assert_reports_equal(&streaming, &oracle, "short window");
}
