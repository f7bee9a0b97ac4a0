//! Origin attribution: map generator addresses to autonomous systems and
//! countries through longest-prefix datasets, then tally response traffic
//! by origin.
//!
//! Attribution follows the generator, not the individual packet sender: a
//! response's whole packet count lands on the origin of the probed address,
//! because helper hosts in a responder group answer on its behalf.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::net::Ipv4Addr;

use crate::classifier::GeneratorProfile;
use crate::error::{Error, Result};
use crate::model::Cidr;

/// Pseudo-origin for addresses no dataset prefix covers.
pub const UNKNOWN_ORIGIN: &str = "unknown";

const NO_NODE: u32 = u32::MAX;
const NO_VALUE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct TrieNode {
    children: [u32; 2],
    value: u32,
}

impl TrieNode {
    fn empty() -> Self {
        TrieNode {
            children: [NO_NODE, NO_NODE],
            value: NO_VALUE,
        }
    }
}

/// Prefix-to-value mapping with longest-prefix-match lookup, the shape of a
/// flattened routing table or geolocation feed.
#[derive(Debug, Clone)]
pub struct PrefixDataset {
    nodes: Vec<TrieNode>,
    values: Vec<String>,
    entries: usize,
}

impl PrefixDataset {
    pub fn new() -> Self {
        PrefixDataset {
            nodes: vec![TrieNode::empty()],
            values: Vec::new(),
            entries: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    fn intern(&mut self, interned: &mut HashMap<String, u32>, value: &str) -> u32 {
        if let Some(&id) = interned.get(value) {
            return id;
        }
        let id = self.values.len() as u32;
        self.values.push(value.to_string());
        interned.insert(value.to_string(), id);
        id
    }

    fn insert_interned(&mut self, prefix: Cidr, value_id: u32) -> Result<()> {
        let mut node = 0usize;
        let base = u32::from(prefix.base());
        for depth in 0..prefix.prefix_len() {
            let bit = ((base >> (31 - depth)) & 1) as usize;
            if self.nodes[node].children[bit] == NO_NODE {
                self.nodes[node].children[bit] = self.nodes.len() as u32;
                self.nodes.push(TrieNode::empty());
            }
            node = self.nodes[node].children[bit] as usize;
        }
        match self.nodes[node].value {
            v if v == NO_VALUE => {
                self.nodes[node].value = value_id;
                self.entries += 1;
                Ok(())
            }
            v if v == value_id => Ok(()),
            v => Err(Error::data(format!(
                "prefix {prefix} mapped to both {:?} and {:?}",
                self.values[v as usize], self.values[value_id as usize]
            ))),
        }
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Cidr, S)>,
        S: AsRef<str>,
    {
        let mut dataset = PrefixDataset::new();
        let mut interned = HashMap::new();
        for (prefix, value) in entries {
            let id = dataset.intern(&mut interned, value.as_ref());
            dataset.insert_interned(prefix, id)?;
        }
        Ok(dataset)
    }

    /// Parse `CIDR,value` lines; blank lines and `#` comments are skipped.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut dataset = PrefixDataset::new();
        let mut interned = HashMap::new();
        for (number, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (prefix, value) = trimmed.split_once(',').ok_or_else(|| {
                Error::data(format!(
                    "line {}: expected CIDR,value, got {trimmed:?}",
                    number + 1
                ))
            })?;
            let prefix: Cidr = prefix.trim().parse()?;
            let value = value.trim();
            if value.is_empty() {
                return Err(Error::data(format!("line {}: empty value", number + 1)));
            }
            let id = dataset.intern(&mut interned, value);
            dataset.insert_interned(prefix, id)?;
        }
        Ok(dataset)
    }

    /// Value of the most specific prefix covering `ip`.
    pub fn lookup(&self, ip: Ipv4Addr) -> Option<&str> {
        let bits = u32::from(ip);
        let mut node = 0usize;
        let mut best = self.nodes[0].value;
        for depth in 0..32 {
            let bit = ((bits >> (31 - depth)) & 1) as usize;
            let next = self.nodes[node].children[bit];
            if next == NO_NODE {
                break;
            }
            node = next as usize;
            if self.nodes[node].value != NO_VALUE {
                best = self.nodes[node].value;
            }
        }
        (best != NO_VALUE).then(|| self.values[best as usize].as_str())
    }

    /// How many addresses resolve to each value under longest-prefix match.
    /// Nested prefixes are handled exactly: addresses inside a more specific
    /// prefix count only toward its value.
    pub fn address_counts(&self) -> BTreeMap<String, u64> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        self.tally(0, 0, NO_VALUE, &mut counts);
        counts
    }

    fn tally(&self, node: usize, depth: u32, inherited: u32, counts: &mut BTreeMap<String, u64>) {
        let effective = if self.nodes[node].value != NO_VALUE {
            self.nodes[node].value
        } else {
            inherited
        };
        let span = 1u64 << (32 - depth);
        let mut remainder = span;
        for child in self.nodes[node].children {
            if child != NO_NODE {
                self.tally(child as usize, depth + 1, effective, counts);
                remainder -= span / 2;
            }
        }
        if remainder > 0 && effective != NO_VALUE {
            *counts
                .entry(self.values[effective as usize].clone())
                .or_default() += remainder;
        }
    }
}

impl Default for PrefixDataset {
    fn default() -> Self {
        PrefixDataset::new()
    }
}

/// Per-round origin tallies over generator-attributed response packets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OriginRound {
    pub round_id: u32,
    pub total_packets: u64,
    /// Descending by packet count, ties ascending by origin (numerically
    /// when both sides parse as numbers, so AS numbers order naturally).
    pub asn_tally: Vec<(String, u64)>,
    pub country_tally: Vec<(String, u64)>,
}

impl OriginRound {
    pub fn dominant_asn(&self) -> Option<(&str, f64)> {
        self.dominant(&self.asn_tally)
    }

    pub fn dominant_country(&self) -> Option<(&str, f64)> {
        self.dominant(&self.country_tally)
    }

    fn dominant<'a>(&self, tally: &'a [(String, u64)]) -> Option<(&'a str, f64)> {
        let (value, count) = tally.first()?;
        (self.total_packets > 0)
            .then(|| (value.as_str(), *count as f64 / self.total_packets as f64))
    }
}

fn origin_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Tally each round's response packets by the ASN and country of the
/// generators that attracted them. Uncovered generators count under
/// [`UNKNOWN_ORIGIN`], so every packet appears in both tallies.
pub fn attribute_origins(
    profiles: &[GeneratorProfile],
    asn: &PrefixDataset,
    geo: &PrefixDataset,
) -> Vec<OriginRound> {
    let mut rounds: BTreeMap<u32, (u64, HashMap<String, u64>, HashMap<String, u64>)> =
        BTreeMap::new();
    for profile in profiles {
        let asn_origin = asn.lookup(profile.generator_ip).unwrap_or(UNKNOWN_ORIGIN);
        let geo_origin = geo.lookup(profile.generator_ip).unwrap_or(UNKNOWN_ORIGIN);
        for record in &profile.rounds {
            let (total, by_asn, by_geo) = rounds.entry(record.round_id).or_default();
            *total += record.packet_count;
            if record.packet_count > 0 {
                *by_asn.entry(asn_origin.to_string()).or_default() += record.packet_count;
                *by_geo.entry(geo_origin.to_string()).or_default() += record.packet_count;
            }
        }
    }
    rounds
        .into_iter()
        .map(|(round_id, (total_packets, by_asn, by_geo))| {
            let order = |map: HashMap<String, u64>| {
                let mut tally: Vec<(String, u64)> = map.into_iter().collect();
                tally.sort_by(|(va, ca), (vb, cb)| {
                    cb.cmp(ca).then_with(|| origin_order(va, vb))
                });
                tally
            };
            OriginRound {
                round_id,
                total_packets,
                asn_tally: order(by_asn),
                country_tally: order(by_geo),
            }
        })
        .collect()
}
