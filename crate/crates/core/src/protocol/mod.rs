//! The five-step key distribution protocol.
//!
//! 1. Both parties measure every received pair in a random `(φ, c)` basis.
//! 2. A random subset of rounds is revealed in full; the CHSH value and the
//!    perfect (anti)correlations are checked, and the run aborts on mismatch.
//! 3. For the remaining rounds both parties announce φ only.
//! 4. A referee coin picks an encoder per round; the encoder sends its `c`
//!    and a random bit masked with its outcome, the other party decodes or
//!    discards the round.
//! 5. Blocks of `K` bits are XORed into one key bit.
//!
//! [`run_protocol`] drives two [`PartyMachine`]s over a shared [`Transcript`].
//! The simulation keeps its ground truth in [`RoundRecord`]s, which the
//! parties never see.

mod estimation;
mod keys;
mod messages;
mod party;

use std::collections::VecDeque;

use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use estimation::{
    parameter_estimation, test_samples_from_transcript, CellStat, CheckKind, CorrelationCheck, EstimationConfig,
    ParameterEstimate, TestSample,
};
pub use keys::{assign_roles, decode_round, distill_key, encode_round, is_decodable, KeyBlock};
pub use messages::{
    read_jsonl, write_jsonl, AbortReason, JsonlError, Party, Payload, RoundId, Sender, Transcript, TranscriptMessage,
};
pub use party::{Observation, PartyMachine, PartyState};

use crate::adversary::{ChshSetting, LambdaId};
use crate::ensemble::HvEnsemble;
use crate::error::ProtocolError;
use crate::quantum::{sample_joint, singlet_distribution, MeasurementBasis, Outcome};
use crate::rng::{Stream, Streams};

pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n_rounds: usize,
    pub test_fraction: f64,
    /// Bits XORed into each key bit.
    #[serde(alias = "K")]
    pub key_length: usize,
    pub chsh_tolerance: f64,
    pub correlation_tolerance: f64,
    /// Fewer test samples than this in any checked cell is an error.
    pub min_cell_samples: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_rounds: 2_000_000,
            test_fraction: 0.5,
            key_length: 20,
            chsh_tolerance: 0.05,
            correlation_tolerance: 0.0,
            min_cell_samples: 10,
            seed: DEFAULT_SEED,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |msg: String| Err(ProtocolError::InvalidConfig(msg));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} must lie strictly between 0 and 1", self.test_fraction));
        }
        if self.key_length == 0 {
            return bad("key_length must be at least 1".into());
        }
        if self.chsh_tolerance.is_nan() || self.chsh_tolerance <= 0.0 {
            return bad(format!("chsh_tolerance {} must be positive", self.chsh_tolerance));
        }
        if self.correlation_tolerance.is_nan() || self.correlation_tolerance < 0.0 {
            return bad(format!("correlation_tolerance {} must be non-negative", self.correlation_tolerance));
        }
        if self.n_rounds > RoundId::MAX as usize {
            return bad(format!("n_rounds {} exceeds {}", self.n_rounds, RoundId::MAX));
        }
        if (self.n_rounds as f64) * (1.0 - self.test_fraction) < self.key_length as f64 {
            return bad(format!(
                "{} rounds at test fraction {} leave fewer than K = {} key rounds",
                self.n_rounds, self.test_fraction, self.key_length
            ));
        }
        Ok(())
    }

    pub fn estimation(&self) -> EstimationConfig {
        EstimationConfig {
            chsh_tolerance: self.chsh_tolerance,
            correlation_tolerance: self.correlation_tolerance,
            min_cell_samples: self.min_cell_samples,
        }
    }
}

/// Where the entangled pairs come from.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    /// Exact singlet statistics.
    Ideal,
    /// A hidden-variable model: each round draws one λ and both outcomes are
    /// read off its tables.
    Ensemble(&'a HvEnsemble),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseTag {
    Test,
    Key,
    Discarded,
}

/// Ground truth of one round, for analysis and auditing only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_id: RoundId,
    pub basis_a: MeasurementBasis,
    pub basis_b: MeasurementBasis,
    pub outcome_a: Outcome,
    pub outcome_b: Outcome,
    pub phase_tag: Option<PhaseTag>,
    pub lambda_id: Option<LambdaId>,
}

/// Step 1 for `n_rounds` pairs.
pub fn run_measurement_phase(n_rounds: usize, source: Source<'_>, streams: &Streams) -> Vec<RoundRecord> {
    let mut alice_rng = streams.stream(Stream::AliceBases);
    let mut bob_rng = streams.stream(Stream::BobBases);
    let mut quantum = streams.stream(Stream::Quantum);
    let mut adversary = streams.stream(Stream::Adversary);
    let sampler = match source {
        Source::Ensemble(e) => Some((e, e.sampler())),
        Source::Ideal => None,
    };

    (0..n_rounds)
        .map(|i| {
            let basis_a = MeasurementBasis::random(&mut alice_rng);
            let basis_b = MeasurementBasis::random(&mut bob_rng);
            let (a, b) = (basis_a.total(), basis_b.total());
            let (outcome_a, outcome_b, lambda_id) = match &sampler {
                None => {
                    let (x, y) = sample_joint(&singlet_distribution(a, b), &mut quantum);
                    (x, y, None)
                }
                Some((ensemble, dist)) => {
                    let strategy = &ensemble.members()[dist.sample(&mut adversary)].strategy;
                    (strategy.wa(a, b), strategy.wb(a, b), Some(strategy.id()))
                }
            };
            RoundRecord { round_id: i as RoundId, basis_a, basis_b, outcome_a, outcome_b, phase_tag: None, lambda_id }
        })
        .collect()
}

/// Tag every round Test with probability `test_fraction`, Key otherwise.
pub fn select_test_rounds<R: Rng + ?Sized>(records: &mut [RoundRecord], test_fraction: f64, rng: &mut R) {
    let p = test_fraction.clamp(0.0, 1.0);
    for r in records {
        r.phase_tag = Some(if rng.random_bool(p) { PhaseTag::Test } else { PhaseTag::Key });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolStatus {
    Completed,
    Aborted,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub config: ProtocolConfig,
    pub records: Vec<RoundRecord>,
    pub transcript: Transcript,
    pub estimate: ParameterEstimate,
    pub status: ProtocolStatus,
    pub alice_blocks: Vec<KeyBlock>,
    pub bob_blocks: Vec<KeyBlock>,
    /// The encoder's random bit for every key round that was not discarded.
    pub encoded_bits: Vec<(RoundId, u8)>,
    pub alice_bits: Vec<(RoundId, u8)>,
    pub bob_bits: Vec<(RoundId, u8)>,
}

impl ProtocolRun {
    pub fn mismatched_blocks(&self) -> usize {
        self.alice_blocks.iter().zip(&self.bob_blocks).filter(|(a, b)| a.key_bit != b.key_bit).count()
            + self.alice_blocks.len().abs_diff(self.bob_blocks.len())
    }
}

struct Channel<'t, R> {
    transcript: &'t mut Transcript,
    bits: R,
}

impl<R: Rng> Channel<'_, R> {
    /// Append `msg` and let both parties react, delivering replies in turn.
    fn broadcast(&mut self, msg: TranscriptMessage, parties: &mut [&mut PartyMachine; 2]) -> Result<(), ProtocolError> {
        let mut queue = VecDeque::from([msg]);
        while let Some(m) = queue.pop_front() {
            self.transcript.push(m);
            for p in parties.iter_mut() {
                if let Some(reply) = p.handle(&m, &mut self.bits)? {
                    queue.push_back(reply);
                }
            }
        }
        Ok(())
    }
}

/// Run all five steps.
pub fn run_protocol(config: &ProtocolConfig, source: Source<'_>) -> Result<ProtocolRun, ProtocolError> {
    config.validate()?;
    let streams = Streams::new(config.seed);
    let setting = ChshSetting::canonical();

    let mut records = run_measurement_phase(config.n_rounds, source, &streams);
    select_test_rounds(&mut records, config.test_fraction, &mut streams.stream(Stream::RoundSelection));

    let view = |f: fn(&RoundRecord) -> Observation| records.iter().map(f).collect::<Vec<_>>();
    let mut alice = PartyMachine::new(Party::Alice, view(|r| Observation { basis: r.basis_a, outcome: r.outcome_a }));
    let mut bob = PartyMachine::new(Party::Bob, view(|r| Observation { basis: r.basis_b, outcome: r.outcome_b }));

    let mut transcript = Transcript::default();
    let (test_rounds, key_rounds): (Vec<&RoundRecord>, Vec<&RoundRecord>) =
        records.iter().partition(|r| r.phase_tag == Some(PhaseTag::Test));
    let key_rounds: Vec<RoundId> = key_rounds.iter().map(|r| r.round_id).collect();
    for r in &test_rounds {
        for party in [&alice, &bob] {
            for m in party.reveal_test_round(r.round_id)? {
                transcript.push(m);
            }
        }
    }

    let (estimate, alice_abort) = alice.estimate(&transcript, &setting, &config.estimation())?;
    let (bob_estimate, bob_abort) = bob.estimate(&transcript, &setting, &config.estimation())?;
    debug_assert_eq!(estimate, bob_estimate);
    if alice_abort.is_some() || bob_abort.is_some() {
        transcript.extend(alice_abort.into_iter().chain(bob_abort));
        return Ok(ProtocolRun {
            config: config.clone(),
            records,
            transcript,
            estimate,
            status: ProtocolStatus::Aborted,
            alice_blocks: Vec::new(),
            bob_blocks: Vec::new(),
            encoded_bits: Vec::new(),
            alice_bits: Vec::new(),
            bob_bits: Vec::new(),
        });
    }

    let mut channel = Channel { transcript: &mut transcript, bits: streams.stream(Stream::RandomBits) };
    for &round in &key_rounds {
        let phis = [alice.reveal_phi(round)?, bob.reveal_phi(round)?];
        for m in phis {
            channel.broadcast(m, &mut [&mut alice, &mut bob])?;
        }
    }
    let roles = assign_roles(&key_rounds, &mut streams.stream(Stream::RoleSelection));
    for role in roles {
        channel.broadcast(role, &mut [&mut alice, &mut bob])?;
    }

    for m in transcript.iter() {
        if let (Payload::Discard, Some(round)) = (m.payload, m.round_id) {
            records[round as usize].phase_tag = Some(PhaseTag::Discarded);
        }
    }

    let mut encoded_bits: Vec<(RoundId, u8)> = alice.sent_bits().iter().chain(bob.sent_bits()).copied().collect();
    encoded_bits.sort_unstable();
    let alice_blocks = alice.distill(config.key_length)?;
    let bob_blocks = bob.distill(config.key_length)?;

    Ok(ProtocolRun {
        config: config.clone(),
        records,
        transcript,
        estimate,
        status: ProtocolStatus::Completed,
        alice_blocks,
        bob_blocks,
        encoded_bits,
        alice_bits: alice.key_bits().to_vec(),
        bob_bits: bob.key_bits().to_vec(),
    })
}

impl Extend<TranscriptMessage> for Transcript {
    fn extend<I: IntoIterator<Item = TranscriptMessage>>(&mut self, iter: I) {
        for m in iter {
            self.push(m);
        }
    }
}

/// A breach of the public-channel rules found by [`audit_transcript`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HygieneViolation {
    pub round_id: Option<RoundId>,
    pub problem: String,
}

/// Check that the transcript never reveals more than the protocol allows:
/// key rounds carry no full basis or outcome reveal, φ announcements come
/// from each party exactly once, exactly one referee coin per key round, and
/// the only `c` ever published for a key round is the chosen encoder's own,
/// sent after the coin. Test rounds carry no key-phase traffic.
pub fn audit_transcript(transcript: &Transcript, records: &[RoundRecord]) -> Vec<HygieneViolation> {
    #[derive(Default, Clone)]
    struct Seen {
        phi: [u8; 2],
        role: Option<Party>,
        roles: u8,
        encoded: u8,
        discards: u8,
        reveals: u8,
    }
    let mut out = Vec::new();
    let mut flag = |round: RoundId, problem: String| out.push(HygieneViolation { round_id: Some(round), problem });
    let mut seen = vec![Seen::default(); records.len()];

    for m in transcript.iter() {
        let Some(round) = m.round_id else { continue };
        let Some(rec) = records.get(round as usize) else {
            flag(round, "message for an unknown round".into());
            continue;
        };
        let s = &mut seen[round as usize];
        let is_key = matches!(rec.phase_tag, Some(PhaseTag::Key | PhaseTag::Discarded));
        match m.payload {
            Payload::BasisRevealFull { .. } | Payload::OutcomeReveal { .. } => {
                s.reveals += 1;
                if is_key {
                    flag(round, format!("{} published in a key round", m.payload.kind()));
                }
            }
            Payload::PhiReveal { .. } => match m.sender.party() {
                Some(p) if is_key => s.phi[p as usize] += 1,
                _ => flag(round, "PhiReveal outside a key round or from the referee".into()),
            },
            Payload::RoleAssignment { chosen } => {
                s.roles += 1;
                s.role = Some(chosen);
                if m.sender != Sender::Referee || !is_key {
                    flag(round, "RoleAssignment not from the referee in a key round".into());
                }
                if s.phi != [1, 1] {
                    flag(round, "RoleAssignment before both φ announcements".into());
                }
            }
            Payload::EncodedBit { c, m: bit } => {
                s.encoded += 1;
                let sender = m.sender.party();
                if !is_key || s.role.is_none() || sender != s.role {
                    flag(round, "EncodedBit not sent by the chosen party after the role coin".into());
                } else {
                    let own_c = match sender {
                        Some(Party::Alice) => rec.basis_a.c(),
                        _ => rec.basis_b.c(),
                    };
                    if c != own_c {
                        flag(round, "EncodedBit carries a c other than the encoder's own".into());
                    }
                }
                if bit > 1 {
                    flag(round, "masked bit is not 0 or 1".into());
                }
            }
            Payload::Discard => {
                s.discards += 1;
                if s.encoded != 1 || m.sender.party() != s.role.map(Party::other) {
                    flag(round, "Discard not sent by the decoder after the encoded bit".into());
                }
            }
            Payload::Abort { .. } => {}
        }
    }

    let completed = transcript.iter().any(|m| matches!(m.payload, Payload::RoleAssignment { .. }));
    for (rec, s) in records.iter().zip(&seen) {
        let round = rec.round_id;
        match rec.phase_tag {
            Some(PhaseTag::Test) => {
                if s.reveals != 4 {
                    flag(round, format!("test round has {} reveals, expected 4", s.reveals));
                }
            }
            Some(PhaseTag::Key | PhaseTag::Discarded) if completed => {
                if s.phi != [1, 1] || s.roles != 1 || s.encoded != 1 || s.discards > 1 {
                    flag(round, "key round does not have exactly 2 φ reveals, 1 role, 1 encoded bit".into());
                }
                if (rec.phase_tag == Some(PhaseTag::Discarded)) != (s.discards == 1) {
                    flag(round, "discard flag disagrees with the round's tag".into());
                }
            }
            Some(_) => {}
            None => flag(round, "round was never tagged".into()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::critical_ensemble_full;

    fn small(seed: u64) -> ProtocolConfig {
        ProtocolConfig { n_rounds: 40_000, chsh_tolerance: 0.3, seed, ..ProtocolConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::default().validate().is_ok());
        for broken in [
            ProtocolConfig { test_fraction: 1.0, ..Default::default() },
            ProtocolConfig { test_fraction: 0.0, ..Default::default() },
            ProtocolConfig { key_length: 0, ..Default::default() },
            ProtocolConfig { chsh_tolerance: 0.0, ..Default::default() },
            ProtocolConfig { correlation_tolerance: -0.1, ..Default::default() },
            ProtocolConfig { n_rounds: 30, key_length: 20, ..Default::default() },
        ] {
            assert!(matches!(broken.validate(), Err(ProtocolError::InvalidConfig(_))), "{broken:?}");
        }
    }

    #[test]
    fn empty_measurement_phase() {
        assert!(run_measurement_phase(0, Source::Ideal, &Streams::new(1)).is_empty());
    }

    #[test]
    fn ensemble_outcomes_come_from_the_drawn_lambda() {
        let e = critical_ensemble_full();
        for r in run_measurement_phase(2000, Source::Ensemble(&e), &Streams::new(4)) {
            let s = e.get(r.lambda_id.unwrap()).unwrap();
            assert_eq!(r.outcome_a, s.wa(r.basis_a.total(), r.basis_b.total()));
            assert_eq!(r.outcome_b, s.wb(r.basis_a.total(), r.basis_b.total()));
        }
    }

    #[test]
    fn select_test_rounds_extremes() {
        let mut recs = run_measurement_phase(100, Source::Ideal, &Streams::new(2));
        select_test_rounds(&mut recs, 1.0, &mut Streams::new(2).stream(Stream::RoundSelection));
        assert!(recs.iter().all(|r| r.phase_tag == Some(PhaseTag::Test)));
        select_test_rounds(&mut recs, 0.0, &mut Streams::new(2).stream(Stream::RoundSelection));
        assert!(recs.iter().all(|r| r.phase_tag == Some(PhaseTag::Key)));
    }

    #[test]
    fn small_ideal_run_agrees_and_passes_audit() {
        let run = run_protocol(&small(9), Source::Ideal).unwrap();
        assert_eq!(run.status, ProtocolStatus::Completed);
        assert_eq!(run.mismatched_blocks(), 0);
        assert_eq!(run.alice_bits, run.bob_bits);
        assert_eq!(run.alice_bits, run.encoded_bits);
        assert!(!run.alice_blocks.is_empty());
        assert_eq!(audit_transcript(&run.transcript, &run.records), vec![]);
    }

    #[test]
    fn audit_flags_a_leaked_offset() {
        let run = run_protocol(&small(10), Source::Ideal).unwrap();
        let key = run.records.iter().find(|r| r.phase_tag == Some(PhaseTag::Key)).unwrap();
        let mut leaky = run.transcript.clone();
        leaky.push(TranscriptMessage::new(
            Party::Alice,
            key.round_id,
            Payload::BasisRevealFull { phi: key.basis_a.phi(), c: key.basis_a.c() },
        ));
        assert!(!audit_transcript(&leaky, &run.records).is_empty());

        let mut forged: Transcript = run
            .transcript
            .iter()
            .map(|m| match m.payload {
                Payload::EncodedBit { c, m: bit } if m.round_id == Some(key.round_id) => TranscriptMessage {
                    sender: m.sender,
                    round_id: m.round_id,
                    payload: Payload::EncodedBit { c: if c.index() == 0 { crate::quantum::Angle::QUARTER } else { crate::quantum::Angle::ZERO }, m: bit },
                },
                _ => *m,
            })
            .collect();
        assert!(!audit_transcript(&forged, &run.records).is_empty());
        forged.push(TranscriptMessage::new(Sender::Referee, key.round_id, Payload::RoleAssignment { chosen: Party::Bob }));
        assert!(audit_transcript(&forged, &run.records).len() >= 2);
    }

    #[test]
    fn runs_are_reproducible() {
        let a = run_protocol(&small(77), Source::Ideal).unwrap();
        let b = run_protocol(&small(77), Source::Ideal).unwrap();
        assert_eq!(a.transcript, b.transcript);
        assert_eq!(a.alice_blocks, b.alice_blocks);
        let c = run_protocol(&small(78), Source::Ideal).unwrap();
        assert_ne!(a.transcript, c.transcript);
    }
}
