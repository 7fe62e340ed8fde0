//! Model digests, a mock homomorphic scheme, submission verification and
//! the performance index.
//!
//! The homomorphic scheme is not secure. Ciphertexts are masked, authenticated
//! encodings that support exact evaluation and byte equality, which is the
//! functional contract the settlement check relies on.

mod fhe;
mod model;
mod verify;

pub use fhe::{fhe_keygen, Ciphertext, FheKeyPair, HomomorphicScheme, MockFhe, Plaintext, PublicKey};
pub use model::{model_digest, ModelWeights};
pub use verify::{performance_index, verify_submission, Verdict, VerdictReason};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CryptoError {
    #[error("model contains a non-finite weight at index {0}")]
    NonFiniteWeight(usize),
    #[error("unknown public key {0:#018x}")]
    UnknownKey(u64),
    #[error("operands encrypted under different keys ({left:#018x} vs {right:#018x})")]
    KeyMismatch { left: u64, right: u64 },
    #[error("ciphertext authentication tag does not verify")]
    TagMismatch,
    #[error("malformed plaintext encoding")]
    MalformedPlaintext,
    #[error("expected a {expected} plaintext")]
    WrongPlaintextKind { expected: &'static str },
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{outputs} outputs but {truths} truths")]
    LengthMismatch { outputs: usize, truths: usize },
    #[error("no test cases")]
    EmptyCases,
}
