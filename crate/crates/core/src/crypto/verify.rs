use serde::{Deserialize, Serialize};

use super::{Ciphertext, CryptoError, HomomorphicScheme, Plaintext, PublicKey};
use crate::codec::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictReason {
    Ok,
    HashMismatch,
    OutputMismatch,
    KeyMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: VerdictReason,
}

impl Verdict {
    pub const OK: Verdict = Verdict {
        accepted: true,
        reason: VerdictReason::Ok,
    };

    pub fn reject(reason: VerdictReason) -> Self {
        Verdict {
            accepted: reason == VerdictReason::Ok,
            reason,
        }
    }
}

/// Two-part check of a trainer's submission.
///
/// The encrypted model must hash to the committed digest, and every claimed
/// output, once encrypted, must equal the encrypted model evaluated on the
/// encrypted test input.
pub fn verify_submission<S: HomomorphicScheme + ?Sized>(
    scheme: &S,
    committed: &Digest,
    enc_model: &Ciphertext,
    claimed_outputs: &[f64],
    pk: &PublicKey,
    testing_inputs: &[Vec<f64>],
) -> Verdict {
    if enc_model.key_id != pk.key_id {
        return Verdict::reject(VerdictReason::KeyMismatch);
    }
    if enc_model.digest() != *committed {
        return Verdict::reject(VerdictReason::HashMismatch);
    }
    if claimed_outputs.len() != testing_inputs.len() {
        return Verdict::reject(VerdictReason::OutputMismatch);
    }
    for (input, claimed) in testing_inputs.iter().zip(claimed_outputs) {
        let enc_input = match scheme.encrypt(pk, &Plaintext::Vector(input.clone())) {
            Ok(ct) => ct,
            Err(_) => return Verdict::reject(VerdictReason::KeyMismatch),
        };
        let computed = match scheme.eval(enc_model, &enc_input) {
            Ok(ct) => ct,
            Err(CryptoError::KeyMismatch { .. }) => {
                return Verdict::reject(VerdictReason::KeyMismatch)
            }
            Err(_) => return Verdict::reject(VerdictReason::OutputMismatch),
        };
        match scheme.encrypt(pk, &Plaintext::Vector(vec![*claimed])) {
            Ok(expected) if expected == computed => {}
            _ => return Verdict::reject(VerdictReason::OutputMismatch),
        }
    }
    Verdict::OK
}

/// Mean squared error between claimed outputs and ground truths. Lower is better.
pub fn performance_index(outputs: &[f64], truths: &[f64]) -> Result<f64, CryptoError> {
    if outputs.len() != truths.len() {
        return Err(CryptoError::LengthMismatch {
            outputs: outputs.len(),
            truths: truths.len(),
        });
    }
    if outputs.is_empty() {
        return Err(CryptoError::EmptyCases);
    }
    let sum: f64 = outputs.iter().zip(truths).map(|(o, t)| (o - t) * (o - t)).sum();
    Ok(sum / outputs.len() as f64)
}
