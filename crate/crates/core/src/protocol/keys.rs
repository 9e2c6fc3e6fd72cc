//! Key-round encoding, decoding, role assignment and K-fold XOR distillation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::messages::{Party, Payload, RoundId, Sender, TranscriptMessage};
use crate::error::ProtocolError;
use crate::quantum::{to_bit, Angle, MeasurementBasis, Outcome, QUARTER_TURN};

/// `m = r ⊕ bit(outcome)`, sent together with the encoder's `c`.
pub fn encode_round(round_id: RoundId, chosen: Party, basis: MeasurementBasis, outcome: Outcome, r: u8) -> TranscriptMessage {
    TranscriptMessage::new(chosen, round_id, Payload::EncodedBit { c: basis.c(), m: (r & 1) ^ to_bit(outcome) })
}

/// Recover `r` from `m` using the decoder's own outcome and the relation
/// between the two total angles: equal angles anti-correlate, angles a
/// quarter turn apart correlate. Any other pair cannot be decoded.
pub fn decode_round(own_basis: MeasurementBasis, own_outcome: Outcome, partner_basis: MeasurementBasis, m: u8) -> Result<u8, ProtocolError> {
    let (own, partner) = (own_basis.total(), partner_basis.total());
    let partner_outcome = match own.steps_from(partner).unsigned_abs() {
        0 => -own_outcome,
        QUARTER_TURN => own_outcome,
        _ => return Err(ProtocolError::UndecodableBases(own, partner)),
    };
    Ok((m & 1) ^ to_bit(partner_outcome))
}

/// Whether two total angles are equal or a quarter turn apart.
pub fn is_decodable(a: Angle, b: Angle) -> bool {
    matches!(a.steps_from(b).unsigned_abs(), 0 | QUARTER_TURN)
}

/// One referee coin per key round.
pub fn assign_roles<R: Rng + ?Sized>(key_rounds: &[RoundId], rng: &mut R) -> Vec<TranscriptMessage> {
    key_rounds
        .iter()
        .map(|&round| {
            let chosen = if rng.random_bool(0.5) { Party::Alice } else { Party::Bob };
            TranscriptMessage::new(Sender::Referee, round, Payload::RoleAssignment { chosen })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyBlock {
    pub round_ids: Vec<RoundId>,
    pub shared_bits: Vec<u8>,
    pub key_bit: u8,
}

/// Split `bits` into consecutive disjoint blocks of `k` and XOR each block
/// down to one key bit. A trailing partial block is dropped.
pub fn distill_key(bits: &[(RoundId, u8)], k: usize) -> Result<Vec<KeyBlock>, ProtocolError> {
    if k == 0 {
        return Err(ProtocolError::InvalidConfig("key block length K must be at least 1".into()));
    }
    if bits.len() < k {
        return Err(ProtocolError::InsufficientBits { available: bits.len(), required: k });
    }
    Ok(bits
        .chunks_exact(k)
        .map(|chunk| KeyBlock {
            round_ids: chunk.iter().map(|&(r, _)| r).collect(),
            shared_bits: chunk.iter().map(|&(_, b)| b).collect(),
            key_bit: chunk.iter().fold(0, |acc, &(_, b)| acc ^ b),
        })
        .collect())
}
