//! Alice's and Bob's protocol logic.
//!
//! A [`PartyMachine`] only ever holds its own basis choices and outcomes plus
//! what arrives over the public channel. It has no access to round records,
//! so nothing about the source (in particular λ) can reach its decisions.

use std::fmt;

use rand::Rng;

use super::estimation::{parameter_estimation, test_samples_from_transcript, EstimationConfig, ParameterEstimate};
use super::keys::{decode_round, distill_key, encode_round, KeyBlock};
use super::messages::{Party, Payload, RoundId, Transcript, TranscriptMessage};
use crate::adversary::ChshSetting;
use crate::error::ProtocolError;
use crate::quantum::{Angle, MeasurementBasis, Outcome};

/// What one party privately knows about one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub basis: MeasurementBasis,
    pub outcome: Outcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartyState {
    /// Step 1 done; test rounds may be revealed.
    Measured,
    /// Test statistics accepted; key rounds in progress.
    KeyExchange,
    Aborted,
    Distilled,
}

impl fmt::Display for PartyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl PartyState {
    fn label(self) -> &'static str {
        match self {
            PartyState::Measured => "Measured",
            PartyState::KeyExchange => "KeyExchange",
            PartyState::Aborted => "Aborted",
            PartyState::Distilled => "Distilled",
        }
    }
}

#[derive(Debug)]
pub struct PartyMachine {
    who: Party,
    observations: Vec<Observation>,
    state: PartyState,
    partner_phi: Vec<Option<Angle>>,
    /// Bits this party encoded, kept until the partner accepts or discards them.
    sent: Vec<(RoundId, u8)>,
    /// Every key bit this party holds, own or decoded, in round order.
    key_bits: Vec<(RoundId, u8)>,
}

impl PartyMachine {
    pub fn new(who: Party, observations: Vec<Observation>) -> Self {
        let n = observations.len();
        PartyMachine {
            who,
            observations,
            state: PartyState::Measured,
            partner_phi: vec![None; n],
            sent: Vec::new(),
            key_bits: Vec::new(),
        }
    }

    pub fn who(&self) -> Party {
        self.who
    }

    pub fn state(&self) -> PartyState {
        self.state
    }

    pub fn key_bits(&self) -> &[(RoundId, u8)] {
        &self.key_bits
    }

    /// Bits this party encoded that the partner did not discard.
    pub fn sent_bits(&self) -> &[(RoundId, u8)] {
        &self.sent
    }

    fn expect(&self, state: PartyState, event: &'static str) -> Result<(), ProtocolError> {
        if self.state == state {
            Ok(())
        } else {
            Err(ProtocolError::OutOfOrder { party: self.who.name(), event, state: self.state.label() })
        }
    }

    fn observation(&self, round: RoundId) -> Result<Observation, ProtocolError> {
        self.observations
            .get(round as usize)
            .copied()
            .ok_or(ProtocolError::MissingMessage("a measurement", round))
    }

    /// Step 2: publish basis and outcome of a test round.
    pub fn reveal_test_round(&self, round: RoundId) -> Result<[TranscriptMessage; 2], ProtocolError> {
        self.expect(PartyState::Measured, "reveal_test_round")?;
        let obs = self.observation(round)?;
        Ok([
            TranscriptMessage::new(self.who, round, Payload::BasisRevealFull { phi: obs.basis.phi(), c: obs.basis.c() }),
            TranscriptMessage::new(self.who, round, Payload::OutcomeReveal { outcome: obs.outcome }),
        ])
    }

    /// Step 2: estimate from the public test data and decide whether to continue.
    /// Returns the estimate and, on abort, the message to broadcast.
    pub fn estimate(
        &mut self,
        transcript: &Transcript,
        setting: &ChshSetting,
        config: &EstimationConfig,
    ) -> Result<(ParameterEstimate, Option<TranscriptMessage>), ProtocolError> {
        self.expect(PartyState::Measured, "estimate")?;
        let samples = test_samples_from_transcript(transcript)?;
        let estimate = parameter_estimation(&samples, setting, config)?;
        match estimate.abort_reason {
            Some(reason) => {
                self.state = PartyState::Aborted;
                Ok((estimate, Some(TranscriptMessage::abort(self.who, reason))))
            }
            None => {
                self.state = PartyState::KeyExchange;
                Ok((estimate, None))
            }
        }
    }

    /// Step 3: announce φ, never c.
    pub fn reveal_phi(&self, round: RoundId) -> Result<TranscriptMessage, ProtocolError> {
        self.expect(PartyState::KeyExchange, "reveal_phi")?;
        let obs = self.observation(round)?;
        Ok(TranscriptMessage::new(self.who, round, Payload::PhiReveal { phi: obs.basis.phi() }))
    }

    /// React to one public message; returns this party's replies.
    pub fn handle<R: Rng + ?Sized>(&mut self, msg: &TranscriptMessage, bits: &mut R) -> Result<Option<TranscriptMessage>, ProtocolError> {
        let from_partner = msg.sender.party() == Some(self.who.other());
        match (msg.payload, msg.round_id) {
            (Payload::Abort { .. }, _) => {
                self.state = PartyState::Aborted;
                Ok(None)
            }
            (Payload::PhiReveal { phi }, Some(round)) if from_partner => {
                self.expect(PartyState::KeyExchange, "PhiReveal")?;
                let slot = self.partner_phi.get_mut(round as usize).ok_or(ProtocolError::MissingMessage("a measurement", round))?;
                *slot = Some(phi);
                Ok(None)
            }
            (Payload::RoleAssignment { chosen }, Some(round)) if chosen == self.who => {
                self.expect(PartyState::KeyExchange, "RoleAssignment")?;
                let obs = self.observation(round)?;
                let r = u8::from(bits.random::<bool>());
                self.sent.push((round, r));
                self.key_bits.push((round, r));
                Ok(Some(encode_round(round, self.who, obs.basis, obs.outcome, r)))
            }
            (Payload::EncodedBit { c, m }, Some(round)) if from_partner => {
                self.expect(PartyState::KeyExchange, "EncodedBit")?;
                let obs = self.observation(round)?;
                let phi = self.partner_phi[round as usize].ok_or(ProtocolError::MissingMessage("PhiReveal", round))?;
                let partner = MeasurementBasis::new(phi, c).map_err(|_| ProtocolError::MissingMessage("a valid EncodedBit", round))?;
                match decode_round(obs.basis, obs.outcome, partner, m) {
                    Ok(r) => {
                        self.key_bits.push((round, r));
                        Ok(None)
                    }
                    Err(ProtocolError::UndecodableBases(..)) => Ok(Some(TranscriptMessage::new(self.who, round, Payload::Discard))),
                    Err(e) => Err(e),
                }
            }
            (Payload::Discard, Some(round)) if from_partner => {
                self.expect(PartyState::KeyExchange, "Discard")?;
                if self.sent.last().map(|&(r, _)| r) == Some(round) {
                    self.sent.pop();
                    self.key_bits.pop();
                }
                Ok(None)
            }
            _ => Ok(None),
        }
    }

    /// Step 5.
    pub fn distill(&mut self, k: usize) -> Result<Vec<KeyBlock>, ProtocolError> {
        self.expect(PartyState::KeyExchange, "distill")?;
        let blocks = distill_key(&self.key_bits, k)?;
        self.state = PartyState::Distilled;
        Ok(blocks)
    }
}
