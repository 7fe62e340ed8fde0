use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::model::linear_apply;
use super::{CryptoError, ModelWeights};
use crate::codec::{hex_bytes, Decoder, Digest, Encoder};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKey {
    pub key_id: u64,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FheKeyPair {
    pub key_id: u64,
    pub pk: PublicKey,
    #[serde(with = "hex_bytes")]
    pub sk: Vec<u8>,
}

/// Values the scheme can encrypt.
#[derive(Debug, Clone, PartialEq)]
pub enum Plaintext {
    Model { weights: Vec<f64>, bias: f64 },
    Vector(Vec<f64>),
}

impl From<&ModelWeights> for Plaintext {
    fn from(m: &ModelWeights) -> Self {
        Plaintext::Model {
            weights: m.weights.clone(),
            bias: m.bias,
        }
    }
}

impl From<&[f64]> for Plaintext {
    fn from(v: &[f64]) -> Self {
        Plaintext::Vector(v.to_vec())
    }
}

impl Plaintext {
    fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        match self {
            Plaintext::Model { weights, bias } => {
                e.u8(0).f64s(weights).f64(*bias);
            }
            Plaintext::Vector(v) => {
                e.u8(1).f64s(v);
            }
        }
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = |_| CryptoError::MalformedPlaintext;
        let mut d = Decoder::new(bytes);
        let pt = match d.u8().map_err(bad)? {
            0 => Plaintext::Model {
                weights: d.f64s().map_err(bad)?,
                bias: d.f64().map_err(bad)?,
            },
            1 => Plaintext::Vector(d.f64s().map_err(bad)?),
            _ => return Err(CryptoError::MalformedPlaintext),
        };
        d.finish().map_err(bad)?;
        Ok(pt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub key_id: u64,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub tag: Digest,
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.key_id).bytes(&self.payload).digest(&self.tag);
        e.finish()
    }

    /// Digest of the canonical ciphertext bytes, as committed in testing blocks.
    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }
}

/// Interface for a homomorphic backend able to evaluate linear models.
pub trait HomomorphicScheme {
    fn keygen(&mut self, rng: &mut dyn RngCore) -> FheKeyPair;
    fn encrypt(&self, pk: &PublicKey, value: &Plaintext) -> Result<Ciphertext, CryptoError>;
    fn eval(&self, enc_model: &Ciphertext, enc_input: &Ciphertext) -> Result<Ciphertext, CryptoError>;
    fn check(&self, ct: &Ciphertext) -> bool;
}

/// Generates a fresh key pair from `rng`.
pub fn fhe_keygen<R: RngCore + ?Sized>(rng: &mut R) -> FheKeyPair {
    let key_id = rng.next_u64();
    let mut sk = vec![0u8; 32];
    rng.fill_bytes(&mut sk);
    let mut e = Encoder::new();
    e.raw(b"pk/v1").u64(key_id).bytes(&sk);
    let bytes = Digest::of(e.as_slice()).0.to_vec();
    FheKeyPair {
        key_id,
        pk: PublicKey { key_id, bytes },
        sk,
    }
}

/// Deterministic, insecure stand-in for a homomorphic scheme.
///
/// Payloads are plaintext encodings masked with a keystream derived from the
/// public key, and tags bind the key and payload. Equal plaintexts under one
/// key give byte-identical ciphertexts.
#[derive(Debug, Clone, Default)]
pub struct MockFhe {
    keys: BTreeMap<u64, PublicKey>,
}

impl MockFhe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, pk: PublicKey) {
        self.keys.insert(pk.key_id, pk);
    }

    fn key(&self, key_id: u64) -> Result<&PublicKey, CryptoError> {
        self.keys.get(&key_id).ok_or(CryptoError::UnknownKey(key_id))
    }

    fn mask(pk: &PublicKey, data: &mut [u8]) {
        for (block, chunk) in data.chunks_mut(32).enumerate() {
            let mut e = Encoder::new();
            e.raw(b"stream/v1").bytes(&pk.bytes).u64(block as u64);
            let pad = Digest::of(e.as_slice());
            for (b, p) in chunk.iter_mut().zip(pad.0) {
                *b ^= p;
            }
        }
    }

    fn tag(pk: &PublicKey, payload: &[u8]) -> Digest {
        let mut e = Encoder::new();
        e.raw(b"tag/v1").u64(pk.key_id).bytes(&pk.bytes).bytes(payload);
        Digest::of(e.as_slice())
    }

    fn open(&self, ct: &Ciphertext) -> Result<Plaintext, CryptoError> {
        let pk = self.key(ct.key_id)?;
        if Self::tag(pk, &ct.payload) != ct.tag {
            return Err(CryptoError::TagMismatch);
        }
        let mut data = ct.payload.clone();
        Self::mask(pk, &mut data);
        Plaintext::decode(&data)
    }
}

impl HomomorphicScheme for MockFhe {
    fn keygen(&mut self, rng: &mut dyn RngCore) -> FheKeyPair {
        let pair = fhe_keygen(rng);
        self.register(pair.pk.clone());
        pair
    }

    fn encrypt(&self, pk: &PublicKey, value: &Plaintext) -> Result<Ciphertext, CryptoError> {
        let known = self.key(pk.key_id)?;
        if known != pk {
            return Err(CryptoError::UnknownKey(pk.key_id));
        }
        let mut payload = value.encode();
        Self::mask(pk, &mut payload);
        let tag = Self::tag(pk, &payload);
        Ok(Ciphertext {
            key_id: pk.key_id,
            payload,
            tag,
        })
    }

    fn eval(&self, enc_model: &Ciphertext, enc_input: &Ciphertext) -> Result<Ciphertext, CryptoError> {
        if enc_model.key_id != enc_input.key_id {
            return Err(CryptoError::KeyMismatch {
                left: enc_model.key_id,
                right: enc_input.key_id,
            });
        }
        let Plaintext::Model { weights, bias } = self.open(enc_model)? else {
            return Err(CryptoError::WrongPlaintextKind { expected: "model" });
        };
        let Plaintext::Vector(input) = self.open(enc_input)? else {
            return Err(CryptoError::WrongPlaintextKind { expected: "vector" });
        };
        let y = linear_apply(&weights, bias, &input)?;
        let pk = self.key(enc_model.key_id)?.clone();
        self.encrypt(&pk, &Plaintext::Vector(vec![y]))
    }

    fn check(&self, ct: &Ciphertext) -> bool {
        self.open(ct).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn scheme(seed: u64) -> (MockFhe, FheKeyPair) {
        let mut fhe = MockFhe::new();
        let pair = fhe.keygen(&mut ChaCha8Rng::seed_from_u64(seed));
        (fhe, pair)
    }

    #[test]
    fn keygen_is_deterministic() {
        let a = fhe_keygen(&mut ChaCha8Rng::seed_from_u64(1));
        let b = fhe_keygen(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let c = fhe_keygen(&mut ChaCha8Rng::seed_from_u64(2));
        assert_ne!(a.key_id, c.key_id);
    }

    #[test]
    fn thousand_keygens_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ids: HashSet<u64> = (0..1000).map(|_| fhe_keygen(&mut rng).key_id).collect();
        assert_eq!(ids.len(), 1000);
    }

    #[test]
    fn encryption_is_deterministic() {
        let (fhe, k) = scheme(1);
        let v = Plaintext::Vector(vec![1.0, 2.0]);
        assert_eq!(fhe.encrypt(&k.pk, &v).unwrap(), fhe.encrypt(&k.pk, &v).unwrap());
    }

    #[test]
    fn different_keys_give_different_ciphertexts() {
        let mut fhe = MockFhe::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = fhe.keygen(&mut rng);
        let b = fhe.keygen(&mut rng);
        let v = Plaintext::Vector(vec![1.0, 2.0]);
        let ca = fhe.encrypt(&a.pk, &v).unwrap();
        let cb = fhe.encrypt(&b.pk, &v).unwrap();
        assert_ne!(ca.key_id, cb.key_id);
        assert_ne!(ca.payload, cb.payload);
    }

    #[test]
    fn tampered_tag_fails_check() {
        let (fhe, k) = scheme(1);
        let mut ct = fhe.encrypt(&k.pk, &Plaintext::Vector(vec![4.0])).unwrap();
        assert!(fhe.check(&ct));
        ct.tag.0[0] ^= 1;
        assert!(!fhe.check(&ct));
    }

    #[test]
    fn unknown_key_rejected() {
        let fhe = MockFhe::new();
        let k = fhe_keygen(&mut ChaCha8Rng::seed_from_u64(1));
        let err = fhe.encrypt(&k.pk, &Plaintext::Vector(vec![1.0])).unwrap_err();
        assert_eq!(err, CryptoError::UnknownKey(k.key_id));
    }

    #[test]
    fn identity_model() {
        let (fhe, k) = scheme(4);
        let m = ModelWeights::new(0, vec![1.0], 0.0);
        let out = fhe
            .eval(
                &fhe.encrypt(&k.pk, &(&m).into()).unwrap(),
                &fhe.encrypt(&k.pk, &Plaintext::Vector(vec![6.5])).unwrap(),
            )
            .unwrap();
        assert_eq!(out, fhe.encrypt(&k.pk, &Plaintext::Vector(vec![6.5])).unwrap());
    }

    #[test]
    fn affine_model() {
        let (fhe, k) = scheme(4);
        let m = ModelWeights::new(0, vec![2.0, 0.0], 1.0);
        let out = fhe
            .eval(
                &fhe.encrypt(&k.pk, &(&m).into()).unwrap(),
                &fhe.encrypt(&k.pk, &Plaintext::Vector(vec![3.0, 5.0])).unwrap(),
            )
            .unwrap();
        assert_eq!(out, fhe.encrypt(&k.pk, &Plaintext::Vector(vec![7.0])).unwrap());
    }

    #[test]
    fn key_mismatch_rejected() {
        let mut fhe = MockFhe::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = fhe.keygen(&mut rng);
        let b = fhe.keygen(&mut rng);
        let m = ModelWeights::new(0, vec![1.0], 0.0);
        let err = fhe
            .eval(
                &fhe.encrypt(&a.pk, &(&m).into()).unwrap(),
                &fhe.encrypt(&b.pk, &Plaintext::Vector(vec![1.0])).unwrap(),
            )
            .unwrap_err();
        assert!(matches!(err, CryptoError::KeyMismatch { .. }));
    }

    #[test]
    fn homomorphism_over_random_triples() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut fhe = MockFhe::new();
        for _ in 0..1000 {
            let k = fhe.keygen(&mut rng);
            let dim = rng.gen_range(1..6);
            let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let m = ModelWeights::new(0, w, rng.gen_range(-1.0..1.0));
            let y = m.apply(&x).unwrap();
            let lhs = fhe
                .eval(
                    &fhe.encrypt(&k.pk, &(&m).into()).unwrap(),
                    &fhe.encrypt(&k.pk, &Plaintext::Vector(x)).unwrap(),
                )
                .unwrap();
            assert_eq!(lhs, fhe.encrypt(&k.pk, &Plaintext::Vector(vec![y])).unwrap());
        }
    }

    proptest! {
        #[test]
        fn plaintext_round_trip(v in proptest::collection::vec(-1e6f64..1e6, 0..10), b in -10f64..10.0) {
            let pt = Plaintext::Model { weights: v, bias: b };
            prop_assert_eq!(Plaintext::decode(&pt.encode()).unwrap(), pt);
        }
    }
}
