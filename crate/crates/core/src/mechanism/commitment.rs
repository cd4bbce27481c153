//! Hash commitments: `digest = SHA-256(canonical(value) || nonce)`.

use num_bigint::Sign;
use num_rational::BigRational;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Money;

pub const NONCE_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut bytes);
        Nonce(bytes)
    }
}

/// Injective byte encoding per value type. Every encoding starts with a
/// type tag so values of different types never share bytes.
pub trait CanonicalEncode {
    fn canonical_bytes(&self) -> Vec<u8>;
}

const TAG_RATIONAL: u8 = 0x01;
const TAG_U64: u8 = 0x02;

fn push_len_prefixed(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

impl CanonicalEncode for BigRational {
    fn canonical_bytes(&self) -> Vec<u8> {
        // BigRational is always stored reduced with a positive denominator.
        let (sign, numer) = self.numer().to_bytes_be();
        let (_, denom) = self.denom().to_bytes_be();
        let mut out = vec![TAG_RATIONAL, u8::from(sign == Sign::Minus)];
        push_len_prefixed(&mut out, &numer);
        push_len_prefixed(&mut out, &denom);
        out
    }
}

impl CanonicalEncode for Money {
    fn canonical_bytes(&self) -> Vec<u8> {
        self.as_ratio().canonical_bytes()
    }
}

impl CanonicalEncode for u64 {
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = vec![TAG_U64];
        out.extend_from_slice(&self.to_be_bytes());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    #[serde(with = "hex_digest")]
    digest: [u8; 32],
    opened: bool,
}

/// What the committer reveals to open a commitment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opening {
    #[serde(with = "hex::serde")]
    pub value: Vec<u8>,
    pub nonce: Nonce,
}

fn digest_of(value: &[u8], nonce: &Nonce) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(value);
    h.update(nonce.0);
    h.finalize().into()
}

pub fn commit(value: &[u8], nonce: &Nonce) -> Commitment {
    Commitment {
        digest: digest_of(value, nonce),
        opened: false,
    }
}

/// True iff `value` and `nonce` reproduce the digest.
pub fn open(c: &Commitment, value: &[u8], nonce: &Nonce) -> bool {
    digest_of(value, nonce) == c.digest
}

/// Commits to a typed value, returning the commitment and its opening.
pub fn commit_value<T: CanonicalEncode>(value: &T, rng: &mut impl RngCore) -> (Commitment, Opening) {
    let bytes = value.canonical_bytes();
    let nonce = Nonce::random(rng);
    (commit(&bytes, &nonce), Opening { value: bytes, nonce })
}

impl Commitment {
    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn is_opened(&self) -> bool {
        self.opened
    }

    /// Verifies the opening and marks the commitment opened on success.
    pub fn open_with(&mut self, opening: &Opening) -> bool {
        let ok = open(self, &opening.value, &opening.nonce);
        if ok {
            self.opened = true;
        }
        ok
    }

    /// Verifies that `opening` opens this commitment to exactly `expected`.
    pub fn opens_to<T: CanonicalEncode>(&self, opening: &Opening, expected: &T) -> bool {
        opening.value == expected.canonical_bytes() && open(self, &opening.value, &opening.nonce)
    }
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        bytes.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

/// Decodes a canonical rational encoding back into a value.
pub fn decode_rational(bytes: &[u8]) -> Option<BigRational> {
    use num_bigint::BigInt;
    let (&tag, rest) = bytes.split_first()?;
    if tag != TAG_RATIONAL {
        return None;
    }
    let (&neg, mut rest) = rest.split_first()?;
    let mut take = || -> Option<Vec<u8>> {
        let len = u32::from_be_bytes(rest.get(..4)?.try_into().ok()?) as usize;
        let body = rest.get(4..4 + len)?.to_vec();
        rest = &rest[4 + len..];
        Some(body)
    };
    let numer = take()?;
    let denom = take()?;
    if !rest.is_empty() {
        return None;
    }
    let sign = if neg == 1 { Sign::Minus } else { Sign::Plus };
    let n = BigInt::from_bytes_be(sign, &numer);
    let d = BigInt::from_bytes_be(Sign::Plus, &denom);
    if d == BigInt::from(0) {
        return None;
    }
    Some(BigRational::new(n, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn commit_then_open_round_trips() {
        let n = Nonce([7; 16]);
        let c = commit(b"value", &n);
        assert!(open(&c, b"value", &n));
    }

    #[test]
    fn open_rejects_other_value_or_nonce() {
        let n = Nonce([7; 16]);
        let c = commit(b"value", &n);
        assert!(!open(&c, b"valuf", &n));
        assert!(!open(&c, b"value", &Nonce([8; 16])));
    }

    #[test]
    fn open_with_marks_opened() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut c, o) = commit_value(&Money::new(3, 4), &mut rng);
        assert!(!c.is_opened());
        assert!(c.opens_to(&o, &Money::new(3, 4)));
        assert!(!c.opens_to(&o, &Money::new(3, 5)));
        assert!(c.open_with(&o));
        assert!(c.is_opened());
    }

    #[test]
    fn rational_encoding_is_injective_on_equal_values() {
        let a = BigRational::new(2.into(), 4.into());
        let b = BigRational::new(1.into(), 2.into());
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
        assert_ne!(b.canonical_bytes(), BigRational::new(1.into(), 3.into()).canonical_bytes());
        assert_ne!(1u64.canonical_bytes(), BigRational::from_integer(1.into()).canonical_bytes());
        assert_eq!(decode_rational(&b.canonical_bytes()), Some(b));
    }
}
