//! End-to-end runs: read a [`RunSpec`], pick the source, run the protocol
//! (optionally many times), analyse each completed run from Eve's side and
//! write a JSON report.
//!
//! Relative output paths are resolved against `MONOQKD_OUTPUT_DIR` when it is
//! set.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{critical_ensemble_full, local_only_ensemble, EnsembleDocument, EnsembleValidation, HvEnsemble};
use crate::error::HarnessError;
use crate::protocol::{run_protocol, AbortReason, PhaseTag, ProtocolConfig, ProtocolStatus, Source};
use crate::rng::repetition_seed;
use crate::security::{analyze_run, SecurityReport};

pub const OUTPUT_DIR_ENV: &str = "MONOQKD_OUTPUT_DIR";
pub const REPORT_FORMAT: &str = "monoqkd-report/1";

/// Who prepares the entangled pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Ideal singlet source; Eve has no λ.
    #[default]
    None,
    /// The eight local strategies reaching CHSH −2, equally weighted.
    LocalOnly,
    /// The critical mixture with a √2−1 non-local share.
    Critical,
    /// An ensemble file written by `export-ensemble` or by hand.
    Custom(PathBuf),
}

impl Adversary {
    pub fn label(&self) -> String {
        match self {
            Adversary::None => "none".into(),
            Adversary::LocalOnly => "local_only".into(),
            Adversary::Critical => "critical".into(),
            Adversary::Custom(p) => format!("custom:{}", p.display()),
        }
    }

    /// The ensemble behind this adversary, or `None` for the ideal source.
    pub fn load(&self) -> Result<Option<HvEnsemble>, HarnessError> {
        Ok(match self {
            Adversary::None => None,
            Adversary::LocalOnly => Some(local_only_ensemble()),
            Adversary::Critical => Some(critical_ensemble_full()),
            Adversary::Custom(path) => {
                let doc = read_ensemble_document(path)?;
                let check = doc.validate();
                if !check.pass {
                    return Err(HarnessError::InvalidSpec(format!(
                        "ensemble {} is not valid: {}",
                        path.display(),
                        describe_problems(&check)
                    )));
                }
                Some(doc.into_ensemble()?)
            }
        })
    }
}

fn describe_problems(check: &EnsembleValidation) -> String {
    let mut parts = check.problems.clone();
    for m in &check.members {
        if let Some(first) = m.violations.first() {
            parts.push(format!("{} violates {} constraint(s), first {}", m.lambda_id, m.violations.len(), first));
        }
    }
    parts.join("; ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub protocol: ProtocolConfig,
    pub adversary: Adversary,
    pub report: PathBuf,
    pub transcript: Option<PathBuf>,
    /// Independent protocol runs with seeds derived from `protocol.seed`.
    pub repetitions: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            protocol: ProtocolConfig::default(),
            adversary: Adversary::None,
            report: PathBuf::from("report.json"),
            transcript: None,
            repetitions: 1,
        }
    }
}

impl RunSpec {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Parse { path: path.into(), source })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions == 0 {
            return Err(HarnessError::InvalidSpec("repetitions must be at least 1".into()));
        }
        self.protocol.validate().map_err(|e| HarnessError::InvalidSpec(e.to_string()))
    }
}

/// Process exit status of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    /// At least one repetition aborted in parameter estimation.
    Aborted,
    ConfigurationError,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Completed => 0,
            RunStatus::ConfigurationError => 2,
            RunStatus::Aborted => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub index: usize,
    pub seed: u64,
    pub status: ProtocolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<AbortReason>,
    pub chsh_estimate: f64,
    pub n_test_rounds: usize,
    pub n_key_rounds: usize,
    pub n_discarded_rounds: usize,
    pub n_blocks: usize,
    pub key_mismatches: usize,
    /// Alice's key, one character per block.
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub security: Option<SecurityReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub adversary: String,
    pub master_seed: u64,
    pub config: ProtocolConfig,
    pub repetitions: usize,
    pub completed: usize,
    pub aborted: usize,
    pub status: RunStatus,
    pub runs: Vec<RepetitionReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data") + "\n"
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub report: RunReport,
    pub report_path: PathBuf,
    pub transcript_path: Option<PathBuf>,
}

/// Resolve a relative output path against `MONOQKD_OUTPUT_DIR`.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn create_parent(path: &Path) -> Result<(), HarnessError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.into(), source })
        }
        _ => Ok(()),
    }
}

/// Run every repetition, write the report (and the first repetition's
/// transcript, if asked), and return the overall status. Configuration
/// problems are errors; protocol aborts are not.
pub fn run(spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    spec.validate()?;
    let ensemble = spec.adversary.load()?;
    let source = ensemble.as_ref().map_or(Source::Ideal, Source::Ensemble);
    let master = spec.protocol.seed;

    let runs: Vec<(RepetitionReport, Option<crate::protocol::Transcript>)> = (0..spec.repetitions)
        .into_par_iter()
        .map(|index| {
            let seed = repetition_seed(master, index as u64);
            let config = ProtocolConfig { seed, ..spec.protocol.clone() };
            let run = run_protocol(&config, source)?;
            let count = |tag| run.records.iter().filter(|r| r.phase_tag == Some(tag)).count();
            let (n_test, n_key, n_discarded) = (count(PhaseTag::Test), count(PhaseTag::Key), count(PhaseTag::Discarded));
            let security = (run.status == ProtocolStatus::Completed).then(|| analyze_run(&run, ensemble.as_ref()).0);
            let report = RepetitionReport {
                index,
                seed,
                status: run.status,
                abort_reason: run.estimate.abort_reason,
                chsh_estimate: run.estimate.chsh_estimate,
                n_test_rounds: n_test,
                n_key_rounds: n_key + n_discarded,
                n_discarded_rounds: n_discarded,
                n_blocks: run.alice_blocks.len(),
                key_mismatches: run.mismatched_blocks(),
                key: run.alice_blocks.iter().map(|b| if b.key_bit == 1 { '1' } else { '0' }).collect(),
                security,
            };
            let transcript = (index == 0 && spec.transcript.is_some()).then_some(run.transcript);
            Ok((report, transcript))
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut reports = Vec::with_capacity(runs.len());
    let mut first_transcript = None;
    for (report, transcript) in runs {
        reports.push(report);
        first_transcript = first_transcript.or(transcript);
    }
    let aborted = reports.iter().filter(|r| r.status == ProtocolStatus::Aborted).count();
    let status = if aborted > 0 { RunStatus::Aborted } else { RunStatus::Completed };
    let report = RunReport {
        format: REPORT_FORMAT.into(),
        adversary: spec.adversary.label(),
        master_seed: master,
        config: spec.protocol.clone(),
        repetitions: spec.repetitions,
        completed: reports.len() - aborted,
        aborted,
        status,
        runs: reports,
    };

    let report_path = output_path(&spec.report);
    create_parent(&report_path)?;
    fs::write(&report_path, report.to_json()).map_err(|source| HarnessError::Io { path: report_path.clone(), source })?;

    let transcript_path = match (&spec.transcript, first_transcript) {
        (Some(path), Some(transcript)) => {
            let path = output_path(path);
            create_parent(&path)?;
            let io = |source| HarnessError::Io { path: path.clone(), source };
            let file = fs::File::create(&path).map_err(io)?;
            let mut out = BufWriter::new(file);
            transcript.write_jsonl(&mut out).map_err(io)?;
            out.flush().map_err(io)?;
            Some(path)
        }
        _ => None,
    };

    Ok(RunOutcome { status, report, report_path, transcript_path })
}

pub fn read_ensemble_document(path: &Path) -> Result<EnsembleDocument, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
    EnsembleDocument::from_json(&text).map_err(|source| HarnessError::Parse { path: path.into(), source })
}

/// Check every strategy and the weights of an ensemble file.
pub fn validate_ensemble(path: &Path) -> Result<EnsembleValidation, HarnessError> {
    Ok(read_ensemble_document(path)?.validate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dir: &Path, adversary: Adversary, n_rounds: usize) -> RunSpec {
        RunSpec {
            protocol: ProtocolConfig { n_rounds, chsh_tolerance: 0.3, key_length: 5, seed: 3, ..ProtocolConfig::default() },
            adversary,
            report: dir.join("report.json"),
            transcript: Some(dir.join("transcript.jsonl")),
            repetitions: 1,
        }
    }

    #[test]
    fn spec_json_defaults_and_unknown_fields() {
        let s: RunSpec = serde_json::from_str(r#"{"adversary":"critical","protocol":{"n_rounds":1000}}"#).unwrap();
        assert_eq!(s.adversary, Adversary::Critical);
        assert_eq!(s.protocol.n_rounds, 1000);
        assert_eq!(s.protocol.key_length, 20);
        assert_eq!(s.repetitions, 1);
        let s: RunSpec = serde_json::from_str(r#"{"adversary":{"custom":"e.json"}}"#).unwrap();
        assert_eq!(s.adversary, Adversary::Custom("e.json".into()));
        assert!(serde_json::from_str::<RunSpec>(r#"{"repetition":3}"#).is_err());
        assert_eq!(serde_json::from_str::<RunSpec>(r#"{"protocol":{"K":3}}"#).unwrap().protocol.key_length, 3);
        assert!(serde_json::from_str::<RunSpec>(r#"{"protocol":{"rounds":3}}"#).is_err());
    }

    #[test]
    fn zero_repetitions_is_a_configuration_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(dir.path(), Adversary::None, 1000);
        s.repetitions = 0;
        assert!(matches!(run(&s), Err(HarnessError::InvalidSpec(_))));
    }

    #[test]
    fn honest_run_writes_report_and_transcript() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&spec(dir.path(), Adversary::None, 40_000)).unwrap();
        assert_eq!(out.status, RunStatus::Completed);
        let rep = &out.report.runs[0];
        assert_eq!(rep.key_mismatches, 0);
        let sec = rep.security.as_ref().unwrap();
        assert!(sec.p_empirical.is_none() && sec.p_block_empirical.is_none());
        let text = fs::read_to_string(&out.report_path).unwrap();
        assert!(!text.contains("p_empirical"));
        let lines = fs::read_to_string(out.transcript_path.unwrap()).unwrap().lines().count();
        assert!(lines > 40_000);
    }

    #[test]
    fn local_adversary_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&spec(dir.path(), Adversary::LocalOnly, 40_000)).unwrap();
        assert_eq!(out.status, RunStatus::Aborted);
        assert_eq!(out.status.exit_code(), 3);
        assert_eq!(out.report.runs[0].abort_reason, Some(AbortReason::ChshOutOfRange));
    }
}
