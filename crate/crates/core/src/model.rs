//! Domain types shared by every layer of the simulator: addresses, packets,
//! labels, attack sets and the per-round datasets exchanged during learning.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::Message;
use crate::spoofcheck::Stamp;

/// Simulation time, in integer steps.
pub type Step = u64;

/// Node identifier. Stands in for an IPv4 address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u32);

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum PacketKind {
    Data,
    Discover,
    GatewayResponse,
    EchoReply,
    /// Plain hop-limit notice from a router that manages no range.
    TimeExceeded,
    Ping,
    Check,
    Verified,
    Init,
    Protocol,
}

impl PacketKind {
    /// Session messages exchanged between a server and a gateway after spoof
    /// checking.
    pub fn is_session(self) -> bool {
        matches!(self, PacketKind::Init | PacketKind::Protocol)
    }
}

pub const DEFAULT_TTL: u32 = 64;

/// A simulated datagram.
///
/// `true_origin` is simulator ground truth: it is stamped by the network on
/// send and is deliberately not part of the public surface actors use.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub src: Address,
    true_origin: Address,
    pub dst: Address,
    pub ttl: u32,
    pub kind: PacketKind,
    pub payload: Vec<u8>,
    /// Populated for DATA packets only.
    pub features: Vec<u32>,
    pub stamp: Option<Stamp>,
    pub send_time: Step,
    pub message: Option<Message>,
}

impl Packet {
    pub fn data(src: Address, dst: Address, payload: Vec<u8>, features: &FeatureConfig) -> Self {
        let features = extract_features_with(&payload, features.dim, features.buckets);
        Packet {
            id: 0,
            src,
            true_origin: src,
            dst,
            ttl: DEFAULT_TTL,
            kind: PacketKind::Data,
            payload,
            features,
            stamp: None,
            send_time: 0,
            message: None,
        }
    }

    pub fn control(src: Address, dst: Address, kind: PacketKind, message: Message) -> Self {
        Packet {
            id: 0,
            src,
            true_origin: src,
            dst,
            ttl: DEFAULT_TTL,
            kind,
            payload: Vec::new(),
            features: Vec::new(),
            stamp: None,
            send_time: 0,
            message: Some(message),
        }
    }

    pub fn with_ttl(mut self, ttl: u32) -> Self {
        self.ttl = ttl;
        self
    }

    pub(crate) fn true_origin(&self) -> Address {
        self.true_origin
    }

    pub(crate) fn set_true_origin(&mut self, origin: Address) {
        self.true_origin = origin;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Attack,
    Good,
}

impl Label {
    pub fn flipped(self) -> Label {
        match self {
            Label::Attack => Label::Good,
            Label::Good => Label::Attack,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPacket {
    pub packet: Packet,
    pub label: Label,
}

/// Ground-truth labeler owned by the server: a packet is an attack iff its
/// payload contains one of the configured pattern strings.
#[derive(Debug, Clone, Default)]
pub struct PatternOracle {
    patterns: Vec<Vec<u8>>,
}

impl PatternOracle {
    pub fn new<I, P>(patterns: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: Into<Vec<u8>>,
    {
        PatternOracle {
            patterns: patterns.into_iter().map(Into::into).filter(|p: &Vec<u8>| !p.is_empty()).collect(),
        }
    }

    pub fn label(&self, packet: &Packet) -> Label {
        if self.patterns.iter().any(|p| contains(&packet.payload, p)) {
            Label::Attack
        } else {
            Label::Good
        }
    }

    pub fn is_attack(&self, packet: &Packet) -> bool {
        packet.kind == PacketKind::Data && self.label(packet) == Label::Attack
    }

    pub fn labeled(&self, packet: Packet) -> LabeledPacket {
        let label = self.label(&packet);
        LabeledPacket { packet, label }
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("attack set is empty")]
    EmptyAttackSet,
    #[error("attack set needs at least two packets with increasing send times to define an interval")]
    DegenerateInterval,
    #[error("{label:?} pool exhausted: needed {needed}, {available} left")]
    PoolExhausted {
        label: Label,
        needed: usize,
        available: usize,
    },
    #[error("dataset size {0} is below the minimum of 2")]
    DatasetTooSmall(usize),
}

/// The attack packets collected by the server, with their mean
/// inter-packet interval.
#[derive(Debug, Clone)]
pub struct AttackSet {
    packets: Vec<Packet>,
    delta: BigRational,
}

impl AttackSet {
    pub fn new(mut packets: Vec<Packet>) -> Result<Self, ModelError> {
        if packets.is_empty() {
            return Err(ModelError::EmptyAttackSet);
        }
        packets.sort_by_key(|p| (p.send_time, p.id));
        let first = packets.first().map(|p| p.send_time).unwrap_or_default();
        let last = packets.last().map(|p| p.send_time).unwrap_or_default();
        if packets.len() < 2 || last == first {
            return Err(ModelError::DegenerateInterval);
        }
        // Mean of consecutive gaps telescopes to (last - first) / (n - 1).
        let delta = BigRational::new(BigInt::from(last - first), BigInt::from(packets.len() as u64 - 1));
        Ok(AttackSet { packets, delta })
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn delta(&self) -> &BigRational {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Apparent sources of the attack (the `src` field, possibly spoofed).
    pub fn sources(&self) -> BTreeSet<Address> {
        self.packets.iter().map(|p| p.src).collect()
    }

    /// The source discovery probes toward. Discovery assumes a single
    /// apparent source; with several, the most frequent one wins, ties to
    /// the lowest address.
    pub fn apparent_source(&self) -> Address {
        let mut counts = std::collections::BTreeMap::new();
        for p in &self.packets {
            *counts.entry(p.src).or_insert(0usize) += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(a, _)| a)
            .expect("non-empty attack set")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledPacket>,
    pub round: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn packets(&self) -> Vec<Packet> {
        self.examples.iter().map(|e| e.packet.clone()).collect()
    }

    pub fn ids(&self) -> BTreeSet<u64> {
        self.examples.iter().map(|e| e.packet.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub dim: usize,
    pub buckets: u32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { dim: 8, buckets: 16 }
    }
}

pub const DEFAULT_BUCKETS: u32 = 16;

/// 32-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for &b in bytes {
        hash ^= u32::from(b);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// Hash-bucketed byte-trigram counts with the default bucket count.
pub fn extract_features(raw: &[u8], dim: usize) -> Vec<u32> {
    extract_features_with(raw, dim, DEFAULT_BUCKETS)
}

/// Each trigram of `raw` is hashed to one of `dim` dimensions; a dimension's
/// value is its trigram count, saturated at `buckets - 1`.
pub fn extract_features_with(raw: &[u8], dim: usize, buckets: u32) -> Vec<u32> {
    assert!(dim >= 1, "feature dimension must be positive");
    let cap = buckets.saturating_sub(1);
    let mut out = vec![0u32; dim];
    for tri in raw.windows(3) {
        let d = fnv1a(tri) as usize % dim;
        out[d] = (out[d] + 1).min(cap);
    }
    out
}

/// Draws per-round train and test sets from the server's example pools
/// without replacement, so no example is ever reused across rounds.
#[derive(Debug, Clone)]
pub struct RoundSampler {
    attack: Vec<LabeledPacket>,
    good: Vec<LabeledPacket>,
    rng: ChaCha8Rng,
}

impl RoundSampler {
    pub fn new(pool_attack: Vec<LabeledPacket>, pool_good: Vec<LabeledPacket>, seed: u64) -> Self {
        RoundSampler {
            attack: pool_attack,
            good: pool_good,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn remaining(&self) -> (usize, usize) {
        (self.attack.len(), self.good.len())
    }

    fn coin_labels(&mut self, n: usize) -> Vec<Label> {
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if self.rng.gen_bool(0.5) { Label::Attack } else { Label::Good })
            .collect();
        // Both labels must be present in every set.
        if labels.iter().all(|l| *l == labels[0]) {
            let last = labels.len() - 1;
            labels[last] = labels[last].flipped();
        }
        labels
    }

    /// Returns `(TRAIN_r, TEST_r)`. On error the pools are left untouched.
    pub fn next_round(&mut self, round: u32, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset), ModelError> {
        for n in [n_train, n_test] {
            if n < 2 {
                return Err(ModelError::DatasetTooSmall(n));
            }
        }
        let rng_backup = self.rng.clone();
        let train_labels = self.coin_labels(n_train);
        let test_labels = self.coin_labels(n_test);
        let need_attack = train_labels.iter().chain(&test_labels).filter(|l| **l == Label::Attack).count();
        let need_good = n_train + n_test - need_attack;
        if need_attack > self.attack.len() {
            self.rng = rng_backup;
            return Err(ModelError::PoolExhausted {
                label: Label::Attack,
                needed: need_attack,
                available: self.attack.len(),
            });
        }
        if need_good > self.good.len() {
            self.rng = rng_backup;
            return Err(ModelError::PoolExhausted {
                label: Label::Good,
                needed: need_good,
                available: self.good.len(),
            });
        }
        let train = train_labels.into_iter().map(|l| self.draw(l)).collect();
        let test = test_labels.into_iter().map(|l| self.draw(l)).collect();
        Ok((Dataset { examples: train, round }, Dataset { examples: test, round }))
    }

    fn draw(&mut self, label: Label) -> LabeledPacket {
        let pool = match label {
            Label::Attack => &mut self.attack,
            Label::Good => &mut self.good,
        };
        let idx = self.rng.gen_range(0..pool.len());
        pool.swap_remove(idx)
    }
}

/// One-shot convenience wrapper over [`RoundSampler`].
pub fn build_round_datasets(
    pool_attack: &[LabeledPacket],
    pool_good: &[LabeledPacket],
    n_train: usize,
    n_test: usize,
    rng_seed: u64,
) -> Result<(Dataset, Dataset), ModelError> {
    RoundSampler::new(pool_attack.to_vec(), pool_good.to_vec(), rng_seed).next_round(1, n_train, n_test)
}

const PRINTABLE: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 /=&?.-_";

fn random_printable(rng: &mut impl Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| PRINTABLE[rng.gen_range(0..PRINTABLE.len())]).collect()
}

/// Attack payload: short random prefix, the pattern repeated, random suffix.
pub fn attack_payload(pattern: &[u8], repeats: usize, rng: &mut impl Rng) -> Vec<u8> {
    let prefix_len = rng.gen_range(2..8);
    let suffix_len = rng.gen_range(2..8);
    let mut out = random_printable(rng, prefix_len);
    for _ in 0..repeats.max(1) {
        out.extend_from_slice(pattern);
    }
    out.extend(random_printable(rng, suffix_len));
    out
}

/// Benign payload of random printable bytes, guaranteed free of every
/// oracle pattern.
pub fn benign_payload(oracle: &PatternOracle, rng: &mut impl Rng) -> Vec<u8> {
    loop {
        let len = rng.gen_range(8..24);
        let candidate = random_printable(rng, len);
        if oracle.patterns.iter().all(|p| !contains(&candidate, p)) {
            return candidate;
        }
    }
}

/// Synthesizes the server's pool of known-good traffic.
pub fn benign_pool(
    oracle: &PatternOracle,
    count: usize,
    src: Address,
    dst: Address,
    features: &FeatureConfig,
    seed: u64,
) -> Vec<LabeledPacket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut packet = Packet::data(src, dst, benign_payload(oracle, &mut rng), features);
            packet.id = BENIGN_ID_BASE + i as u64;
            LabeledPacket { packet, label: Label::Good }
        })
        .collect()
}

/// Synthesized packets never travel the network; their ids live above this
/// base so they cannot collide with network-assigned ids.
pub const BENIGN_ID_BASE: u64 = 1 << 40;

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(label: Label, n: usize, base: u64) -> Vec<LabeledPacket> {
        let fc = FeatureConfig::default();
        (0..n)
            .map(|i| {
                let mut packet = Packet::data(Address(1), Address(2), vec![i as u8; 4], &fc);
                packet.id = base + i as u64;
                LabeledPacket { packet, label }
            })
            .collect()
    }

    #[test]
    fn empty_payload_is_zero_vector() {
        assert_eq!(extract_features(b"", 4), vec![0, 0, 0, 0]);
        assert_eq!(extract_features(b"ab", 4), vec![0, 0, 0, 0]);
    }

    #[test]
    fn features_are_deterministic() {
        let a = extract_features(b"GET /index.html", 8);
        let b = extract_features(b"GET /index.html", 8);
        assert_eq!(a, b);
    }

    // Golden values computed with an independent FNV-1a script, not this code.
    #[test]
    fn feature_golden_values() {
        assert_eq!(fnv1a(b"abc"), 0x1a47_e90b);
        assert_eq!(extract_features(b"abc", 4), vec![0, 0, 0, 1]);
        assert_eq!(extract_features(b"abcdefgh", 4), vec![1, 1, 2, 2]);
        assert_eq!(extract_features(b"hello world", 8), vec![2, 0, 0, 1, 1, 2, 2, 1]);
    }

    #[test]
    fn features_saturate_at_bucket_cap() {
        let v = extract_features_with(&[b'a'; 100], 2, 16);
        assert_eq!(v.iter().max(), Some(&15));
    }

    #[test]
    fn round_datasets_have_requested_sizes_and_are_disjoint() {
        let (train, test) = build_round_datasets(&pool(Label::Attack, 10, 0), &pool(Label::Good, 10, 100), 4, 4, 1).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 4);
        assert!(train.ids().is_disjoint(&test.ids()));
        for set in [&train, &test] {
            assert!(set.labels().contains(&Label::Attack));
            assert!(set.labels().contains(&Label::Good));
        }
    }

    #[test]
    fn round_datasets_are_seed_deterministic() {
        let a = build_round_datasets(&pool(Label::Attack, 10, 0), &pool(Label::Good, 10, 100), 4, 4, 1).unwrap();
        let b = build_round_datasets(&pool(Label::Attack, 10, 0), &pool(Label::Good, 10, 100), 4, 4, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_pools_exhaust() {
        let err = build_round_datasets(&pool(Label::Attack, 1, 0), &pool(Label::Good, 1, 100), 4, 4, 1).unwrap_err();
        assert!(matches!(err, ModelError::PoolExhausted { .. }));
    }

    #[test]
    fn exhausted_draw_leaves_pools_intact() {
        let mut s = RoundSampler::new(pool(Label::Attack, 3, 0), pool(Label::Good, 3, 100), 9);
        assert!(s.next_round(1, 4, 4).is_err());
        assert_eq!(s.remaining(), (3, 3));
    }

    #[test]
    fn sampling_never_repeats_across_rounds() {
        let mut s = RoundSampler::new(pool(Label::Attack, 40, 0), pool(Label::Good, 40, 100), 3);
        let mut seen = BTreeSet::new();
        for r in 1..=4 {
            let (train, test) = s.next_round(r, 4, 4).unwrap();
            for id in train.ids().into_iter().chain(test.ids()) {
                assert!(seen.insert(id), "example {id} reused");
            }
        }
    }

    #[test]
    fn attack_set_delta_is_mean_gap() {
        let fc = FeatureConfig::default();
        let packets: Vec<Packet> = [0u64, 10, 30]
            .iter()
            .map(|t| {
                let mut p = Packet::data(Address(5), Address(1), b"xx".to_vec(), &fc);
                p.send_time = *t;
                p
            })
            .collect();
        let set = AttackSet::new(packets).unwrap();
        assert_eq!(set.delta(), &BigRational::from_integer(15.into()));
        assert_eq!(set.apparent_source(), Address(5));
        assert_eq!(AttackSet::new(Vec::new()).unwrap_err(), ModelError::EmptyAttackSet);
    }

    #[test]
    fn oracle_labels_on_pattern_presence() {
        let fc = FeatureConfig::default();
        let oracle = PatternOracle::new([b"EVIL".to_vec()]);
        let bad = Packet::data(Address(1), Address(2), b"xxEVILxx".to_vec(), &fc);
        let ok = Packet::data(Address(1), Address(2), b"xxEVxILx".to_vec(), &fc);
        assert_eq!(oracle.label(&bad), Label::Attack);
        assert_eq!(oracle.label(&ok), Label::Good);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let p = Packet::data(Address(1), Address(2), benign_payload(&oracle, &mut rng), &fc);
            assert_eq!(oracle.label(&p), Label::Good);
        }
    }
}
