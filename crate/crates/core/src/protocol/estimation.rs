//! Parameter estimation on the revealed test rounds.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::messages::{AbortReason, Party, Payload, RoundId, Transcript};
use crate::adversary::ChshSetting;
use crate::error::ProtocolError;
use crate::quantum::{Angle, MeasurementBasis, Outcome, GRID_LEN};

/// One fully revealed test round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TestSample {
    pub a: Angle,
    pub b: Angle,
    pub alice: Outcome,
    pub bob: Outcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub chsh_tolerance: f64,
    pub correlation_tolerance: f64,
    pub min_cell_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckKind {
    SameBasis,
    QuarterTurn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub a: Angle,
    pub b: Angle,
    pub count: usize,
    pub correlation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCheck {
    pub kind: CheckKind,
    pub cell: CellStat,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub chsh_estimate: f64,
    pub chsh_cells: Vec<CellStat>,
    pub correlation_checks: Vec<CorrelationCheck>,
    pub abort: bool,
    pub abort_reason: Option<AbortReason>,
}

#[derive(Default)]
struct CellTable {
    count: [[usize; GRID_LEN]; GRID_LEN],
    product_sum: [[i64; GRID_LEN]; GRID_LEN],
}

impl CellTable {
    fn stat(&self, a: Angle, b: Angle, required: usize) -> Result<CellStat, ProtocolError> {
        let (i, j) = (a.index() as usize, b.index() as usize);
        let count = self.count[i][j];
        if count < required.max(1) {
            return Err(ProtocolError::InsufficientData { a, b, count, required: required.max(1) });
        }
        Ok(CellStat { a, b, count, correlation: self.product_sum[i][j] as f64 / count as f64 })
    }
}

/// Estimate CHSH from the setting's four cells and check perfect
/// anti-correlation on every same-angle cell and perfect correlation on every
/// quarter-turn cell.
pub fn parameter_estimation(
    samples: &[TestSample],
    setting: &ChshSetting,
    config: &EstimationConfig,
) -> Result<ParameterEstimate, ProtocolError> {
    let mut table = CellTable::default();
    for s in samples {
        let (i, j) = (s.a.index() as usize, s.b.index() as usize);
        table.count[i][j] += 1;
        table.product_sum[i][j] += i64::from((s.alice * s.bob).value());
    }

    let mut chsh_cells = Vec::with_capacity(4);
    let mut chsh_estimate = 0.0;
    for (a, b, sign) in setting.cells() {
        let cell = table.stat(a, b, config.min_cell_samples)?;
        chsh_estimate += f64::from(sign.value()) * cell.correlation;
        chsh_cells.push(cell);
    }

    let mut correlation_checks = Vec::new();
    for a in Angle::all() {
        let cell = table.stat(a, a, config.min_cell_samples)?;
        let pass = cell.correlation <= -1.0 + config.correlation_tolerance;
        correlation_checks.push(CorrelationCheck { kind: CheckKind::SameBasis, cell, pass });
    }
    for a in Angle::all() {
        if let Some(b) = a.checked_add(Angle::QUARTER) {
            for (x, y) in [(a, b), (b, a)] {
                let cell = table.stat(x, y, config.min_cell_samples)?;
                let pass = cell.correlation >= 1.0 - config.correlation_tolerance;
                correlation_checks.push(CorrelationCheck { kind: CheckKind::QuarterTurn, cell, pass });
            }
        }
    }

    let abort_reason = if (chsh_estimate.abs() - 2.0 * SQRT_2).abs() > config.chsh_tolerance {
        Some(AbortReason::ChshOutOfRange)
    } else {
        correlation_checks.iter().find(|c| !c.pass).map(|failed| match failed.kind {
            CheckKind::SameBasis => AbortReason::SameBasisCorrelation,
            CheckKind::QuarterTurn => AbortReason::QuarterTurnCorrelation,
        })
    };
    Ok(ParameterEstimate { chsh_estimate, chsh_cells, correlation_checks, abort: abort_reason.is_some(), abort_reason })
}

#[derive(Clone, Copy, Default)]
struct Reveal {
    basis: Option<(Angle, Angle)>,
    outcome: Option<Outcome>,
}

/// Pair up the basis and outcome reveals of both parties, round by round.
pub fn test_samples_from_transcript(transcript: &Transcript) -> Result<Vec<TestSample>, ProtocolError> {
    let mut reveals: std::collections::BTreeMap<RoundId, [Reveal; 2]> = Default::default();
    for msg in transcript.iter() {
        let (Some(party), Some(round)) = (msg.sender.party(), msg.round_id) else { continue };
        let slot = &mut reveals.entry(round).or_default()[party as usize];
        match msg.payload {
            Payload::BasisRevealFull { phi, c } => slot.basis = Some((phi, c)),
            Payload::OutcomeReveal { outcome } => slot.outcome = Some(outcome),
            _ => {}
        }
    }
    reveals
        .into_iter()
        .filter(|(_, r)| r.iter().any(|x| x.basis.is_some() || x.outcome.is_some()))
        .map(|(round, [alice, bob])| {
            let total = |r: Reveal, who: Party| -> Result<(Angle, Outcome), ProtocolError> {
                let (phi, c) = r.basis.ok_or(ProtocolError::MissingMessage(basis_label(who), round))?;
                let outcome = r.outcome.ok_or(ProtocolError::MissingMessage(outcome_label(who), round))?;
                let basis = MeasurementBasis::new(phi, c)
                    .map_err(|_| ProtocolError::MissingMessage(basis_label(who), round))?;
                Ok((basis.total(), outcome))
            };
            let (a, alice) = total(alice, Party::Alice)?;
            let (b, bob) = total(bob, Party::Bob)?;
            Ok(TestSample { a, b, alice, bob })
        })
        .collect()
}

fn basis_label(p: Party) -> &'static str {
    match p {
        Party::Alice => "Alice's BasisRevealFull",
        Party::Bob => "Bob's BasisRevealFull",
    }
}

fn outcome_label(p: Party) -> &'static str {
    match p {
        Party::Alice => "Alice's OutcomeReveal",
        Party::Bob => "Bob's OutcomeReveal",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{correlation, Sign};

    fn at(k: u8) -> Angle {
        Angle::from_index(k).unwrap()
    }

    /// Samples with exactly the singlet sign pattern on the checked cells and a
    /// chosen correlation on the CHSH cells.
    fn synthetic(per_cell: usize, chsh_cell_corr: impl Fn(Angle, Angle) -> f64) -> Vec<TestSample> {
        let mut out = Vec::new();
        for a in Angle::all() {
            for b in Angle::all() {
                let e = if a == b || a.steps_from(b).abs() == 4 { correlation(a, b) } else { chsh_cell_corr(a, b) };
                let same = ((1.0 + e) / 2.0 * per_cell as f64).round() as usize;
                for i in 0..per_cell {
                    let alice = if i % 2 == 0 { Sign::Plus } else { Sign::Minus };
                    let bob = if i < same { alice } else { -alice };
                    out.push(TestSample { a, b, alice, bob });
                }
            }
        }
        out
    }

    fn config(min: usize) -> EstimationConfig {
        EstimationConfig { chsh_tolerance: 0.05, correlation_tolerance: 0.0, min_cell_samples: min }
    }

    #[test]
    fn exact_singlet_counts_pass() {
        let samples = synthetic(10_000, correlation);
        let est = parameter_estimation(&samples, &ChshSetting::canonical(), &config(10)).unwrap();
        assert!((est.chsh_estimate + 2.0 * SQRT_2).abs() < 1e-3, "{}", est.chsh_estimate);
        assert!(!est.abort);
        assert_eq!(est.correlation_checks.len(), 9 + 10);
    }

    #[test]
    fn local_bound_aborts() {
        let samples = synthetic(1000, |a, b| 0.5 * correlation(a, b).signum());
        let est = parameter_estimation(&samples, &ChshSetting::canonical(), &config(10)).unwrap();
        assert!((est.chsh_estimate + 2.0).abs() < 1e-9);
        assert_eq!(est.abort_reason, Some(AbortReason::ChshOutOfRange));
    }

    #[test]
    fn imperfect_anticorrelation_aborts() {
        let mut samples = synthetic(1000, correlation);
        let hit = samples.iter_mut().find(|s| s.a == at(5) && s.b == at(5)).unwrap();
        hit.bob = hit.alice;
        let est = parameter_estimation(&samples, &ChshSetting::canonical(), &config(10)).unwrap();
        assert_eq!(est.abort_reason, Some(AbortReason::SameBasisCorrelation));

        let mut lenient = config(10);
        lenient.correlation_tolerance = 0.01;
        assert!(!parameter_estimation(&samples, &ChshSetting::canonical(), &lenient).unwrap().abort);
    }

    #[test]
    fn imperfect_correlation_aborts() {
        let mut samples = synthetic(1000, correlation);
        let hit = samples.iter_mut().find(|s| s.a == at(6) && s.b == at(2)).unwrap();
        hit.bob = -hit.alice;
        let est = parameter_estimation(&samples, &ChshSetting::canonical(), &config(10)).unwrap();
        assert_eq!(est.abort_reason, Some(AbortReason::QuarterTurnCorrelation));
    }

    #[test]
    fn thin_cells_are_an_error_not_a_pass() {
        let samples: Vec<_> = synthetic(20, correlation);
        match parameter_estimation(&samples, &ChshSetting::canonical(), &config(50)) {
            Err(ProtocolError::InsufficientData { count: 20, required: 50, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parameter_estimation(&[], &ChshSetting::canonical(), &config(0)),
            Err(ProtocolError::InsufficientData { count: 0, required: 1, .. })
        ));
    }
}
