//! The eavesdropper and the numbers that quantify what she learns.
//!
//! Eve sees the public transcript plus, when she controls the source, the λ
//! drawn for each round. She never sees the hidden `c` of the party that was
//! not chosen to encode, so for every key round she evaluates the encoder's
//! outcome table at both candidate angles of the other party and is certain
//! only when the two agree.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{HvStrategy, LambdaId, LocalityClass};
use crate::ensemble::HvEnsemble;
use crate::protocol::{KeyBlock, Party, Payload, ProtocolRun, RoundId, RoundRecord, Transcript};
use crate::quantum::{to_bit, Angle};
use crate::rng::{Stream, Streams};

/// Per-round certainty probability of the critical ensemble, `(3 − √2)/2`.
pub const P_THEORY: f64 = (3.0 - std::f64::consts::SQRT_2) / 2.0;

/// Probability that Eve knows a `k`-round key bit.
pub fn p_theory(k: u32) -> f64 {
    P_THEORY.powi(k as i32)
}

/// The λ each round was prepared with, and the strategies behind them.
/// Carries no bases or outcomes.
#[derive(Clone, Debug)]
pub struct SideChannel<'a> {
    ensemble: &'a HvEnsemble,
    lambda: BTreeMap<RoundId, LambdaId>,
}

impl<'a> SideChannel<'a> {
    pub fn new(ensemble: &'a HvEnsemble, lambda: BTreeMap<RoundId, LambdaId>) -> Self {
        SideChannel { ensemble, lambda }
    }

    /// Keep only the λ column of the records.
    pub fn from_records(ensemble: &'a HvEnsemble, records: &[RoundRecord]) -> Self {
        let lambda = records.iter().filter_map(|r| Some((r.round_id, r.lambda_id?))).collect();
        SideChannel { ensemble, lambda }
    }

    fn strategy(&self, round: RoundId) -> Option<&'a HvStrategy> {
        self.ensemble.get(*self.lambda.get(&round)?)
    }
}

/// Everything Eve holds about one key round. There is deliberately no field
/// for the other party's `c`.
#[derive(Clone, Copy, Debug)]
pub struct EveView<'a> {
    pub round_id: RoundId,
    pub strategy: Option<&'a HvStrategy>,
    pub phi_a: Angle,
    pub phi_b: Angle,
    pub chosen: Party,
    pub chosen_c: Angle,
    pub masked_bit: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Known(u8),
    /// `candidates` holds the bit implied by each hidden `c` in `{0, π/2}`,
    /// when Eve has a table to evaluate.
    Unknown { candidates: Option<[u8; 2]> },
}

impl Verdict {
    pub fn is_known(self) -> bool {
        matches!(self, Verdict::Known(_))
    }
}

/// Build one view per key round that received an encoded bit, in transcript order.
pub fn eve_views<'a>(transcript: &Transcript, side: Option<&SideChannel<'a>>) -> Vec<EveView<'a>> {
    #[derive(Default)]
    struct Partial {
        phi: [Option<Angle>; 2],
        chosen: Option<Party>,
    }
    let mut partial: BTreeMap<RoundId, Partial> = BTreeMap::new();
    let mut views = Vec::new();
    for msg in transcript.iter() {
        let Some(round) = msg.round_id else { continue };
        match msg.payload {
            Payload::PhiReveal { phi } => {
                if let Some(p) = msg.sender.party() {
                    partial.entry(round).or_default().phi[p as usize] = Some(phi);
                }
            }
            Payload::RoleAssignment { chosen } => partial.entry(round).or_default().chosen = Some(chosen),
            Payload::EncodedBit { c, m } => {
                let Some(Partial { phi: [Some(phi_a), Some(phi_b)], chosen: Some(chosen) }) = partial.remove(&round) else {
                    continue;
                };
                views.push(EveView {
                    round_id: round,
                    strategy: side.and_then(|s| s.strategy(round)),
                    phi_a,
                    phi_b,
                    chosen,
                    chosen_c: c,
                    masked_bit: m,
                });
            }
            _ => {}
        }
    }
    views
}

/// Evaluate the encoder's table at both candidate angles of the other party.
pub fn eve_decode(view: &EveView<'_>) -> Verdict {
    let Some(strategy) = view.strategy else {
        return Verdict::Unknown { candidates: None };
    };
    let candidates = [Angle::ZERO, Angle::QUARTER].map(|hidden_c| {
        let (a, b) = match view.chosen {
            Party::Alice => (add(view.phi_a, view.chosen_c), add(view.phi_b, hidden_c)),
            Party::Bob => (add(view.phi_a, hidden_c), add(view.phi_b, view.chosen_c)),
        };
        let outcome = match view.chosen {
            Party::Alice => strategy.wa(a, b),
            Party::Bob => strategy.wb(a, b),
        };
        (view.masked_bit & 1) ^ to_bit(outcome)
    });
    if candidates[0] == candidates[1] {
        Verdict::Known(candidates[0])
    } else {
        Verdict::Unknown { candidates: Some(candidates) }
    }
}

fn add(phi: Angle, c: Angle) -> Angle {
    phi.checked_add(c).expect("φ ≤ π/2 and c ≤ π/2 stay on the grid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EveRoundResult {
    pub round_id: RoundId,
    pub verdict: Verdict,
    /// Eve's bit: the known value, or a uniform pick otherwise.
    pub guess: u8,
    /// The encoder's actual bit. Never used to form the verdict.
    pub truth: u8,
    pub class: Option<LocalityClass>,
}

/// Decode every view that has a ground-truth bit. Views without one
/// (discarded rounds) are skipped.
pub fn eve_results<R: Rng + ?Sized>(
    views: &[EveView<'_>],
    truth: &BTreeMap<RoundId, u8>,
    classes: impl Fn(&HvStrategy) -> LocalityClass,
    rng: &mut R,
) -> Vec<EveRoundResult> {
    views
        .iter()
        .filter_map(|view| {
            let truth = *truth.get(&view.round_id)?;
            let verdict = eve_decode(view);
            let guess = match verdict {
                Verdict::Known(r) => r,
                Verdict::Unknown { candidates: Some(c) } => c[usize::from(rng.random::<bool>())],
                Verdict::Unknown { candidates: None } => u8::from(rng.random::<bool>()),
            };
            Some(EveRoundResult { round_id: view.round_id, verdict, guess, truth, class: view.strategy.map(&classes) })
        })
        .collect()
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Fraction of Known verdicts; `None` for no rounds.
pub fn empirical_certainty(results: &[EveRoundResult]) -> Option<f64> {
    rate(results.iter().filter(|r| r.verdict.is_known()).count(), results.len())
}

/// Certainty rate among rounds of one locality class, with the round count.
pub fn class_certainty(results: &[EveRoundResult], class: LocalityClass) -> (Option<f64>, usize) {
    let of_class: Vec<_> = results.iter().filter(|r| r.class == Some(class)).collect();
    (rate(of_class.iter().filter(|r| r.verdict.is_known()).count(), of_class.len()), of_class.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyExposure {
    pub n_blocks: usize,
    /// Fraction of blocks whose rounds are all Known.
    pub p_empirical: Option<f64>,
    pub p_theory: f64,
    /// Fraction of key bits equal to the XOR of Eve's per-round guesses.
    pub eve_guess_rate: Option<f64>,
}

/// Block-level exposure. Every round of every block must have a result.
pub fn key_exposure(blocks: &[KeyBlock], results: &[EveRoundResult], k: u32) -> KeyExposure {
    let by_round: BTreeMap<RoundId, &EveRoundResult> = results.iter().map(|r| (r.round_id, r)).collect();
    let mut known = 0;
    let mut guessed = 0;
    for block in blocks {
        let rounds: Vec<&EveRoundResult> = block
            .round_ids
            .iter()
            .map(|id| *by_round.get(id).unwrap_or_else(|| panic!("no Eve result for key round {id}")))
            .collect();
        if rounds.iter().all(|r| r.verdict.is_known()) {
            known += 1;
        }
        if rounds.iter().fold(0, |acc, r| acc ^ r.guess) == block.key_bit {
            guessed += 1;
        }
    }
    KeyExposure {
        n_blocks: blocks.len(),
        p_empirical: rate(known, blocks.len()),
        p_theory: p_theory(k),
        eve_guess_rate: rate(guessed, blocks.len()),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoundnessAudit {
    pub pass: bool,
    pub checked: usize,
    /// Rounds where Eve was certain and wrong.
    pub counterexamples: Vec<RoundId>,
}

pub fn certainty_soundness_audit(results: &[EveRoundResult]) -> SoundnessAudit {
    let counterexamples: Vec<RoundId> = results
        .iter()
        .filter(|r| matches!(r.verdict, Verdict::Known(bit) if bit != r.truth))
        .map(|r| r.round_id)
        .collect();
    SoundnessAudit {
        pass: counterexamples.is_empty(),
        checked: results.iter().filter(|r| r.verdict.is_known()).count(),
        counterexamples,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    /// Whether Eve had the λ of each round.
    pub lambda_channel: bool,
    /// Key rounds that were not discarded.
    pub n_key_rounds: usize,
    pub p_theory: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_empirical: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_certainty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlocal_certainty: Option<f64>,
    pub n_local_rounds: usize,
    pub n_nonlocal_rounds: usize,
    pub key_length: u32,
    pub n_blocks: usize,
    pub p_block_theory: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_block_empirical: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eve_guess_rate: Option<f64>,
    pub soundness: SoundnessAudit,
}

/// Eve's analysis of a completed run, together with the per-round results.
pub fn analyze_run(run: &ProtocolRun, ensemble: Option<&HvEnsemble>) -> (SecurityReport, Vec<EveRoundResult>) {
    let side = ensemble.map(|e| SideChannel::from_records(e, &run.records));
    let views = eve_views(&run.transcript, side.as_ref());
    let truth: BTreeMap<RoundId, u8> = run.encoded_bits.iter().copied().collect();
    let classify = |s: &HvStrategy| {
        ensemble.and_then(|e| e.class_of(s.id())).unwrap_or_else(|| crate::adversary::classify(s))
    };
    let mut rng = Streams::new(run.config.seed).stream(Stream::EveGuess);
    let results = eve_results(&views, &truth, classify, &mut rng);

    let k = u32::try_from(run.config.key_length).unwrap_or(u32::MAX);
    let exposure = key_exposure(&run.alice_blocks, &results, k);
    let (local_certainty, n_local_rounds) = class_certainty(&results, LocalityClass::Local);
    let (nonlocal_certainty, n_nonlocal_rounds) = class_certainty(&results, LocalityClass::NonLocal);
    let lambda_channel = side.is_some();
    let report = SecurityReport {
        lambda_channel,
        n_key_rounds: results.len(),
        p_theory: P_THEORY,
        p_empirical: empirical_certainty(&results).filter(|_| lambda_channel),
        local_certainty,
        nonlocal_certainty,
        n_local_rounds,
        n_nonlocal_rounds,
        key_length: k,
        n_blocks: exposure.n_blocks,
        p_block_theory: exposure.p_theory,
        p_block_empirical: exposure.p_empirical.filter(|_| lambda_channel),
        eve_guess_rate: exposure.eve_guess_rate,
        soundness: certainty_soundness_audit(&results),
    };
    (report, results)
}
