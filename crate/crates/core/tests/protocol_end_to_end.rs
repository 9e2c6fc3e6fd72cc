use monoqkd::adversary::{ChshSetting, LambdaId};
use monoqkd::ensemble::{critical_ensemble_full, EnsembleMember, HvEnsemble};
use monoqkd::protocol::{
    audit_transcript, parameter_estimation, run_protocol, test_samples_from_transcript, Payload, PhaseTag,
    ProtocolConfig, ProtocolStatus, Source, Transcript,
};
use monoqkd::ProtocolError;

fn config(n_rounds: usize, seed: u64) -> ProtocolConfig {
    ProtocolConfig { n_rounds, chsh_tolerance: 0.3, seed, ..ProtocolConfig::default() }
}

#[test]
fn ideal_source_decodes_every_round_and_agrees_on_every_block() {
    let run = run_protocol(&config(100_000, 1), Source::Ideal).unwrap();
    assert_eq!(run.status, ProtocolStatus::Completed);
    assert!(!run.encoded_bits.is_empty());
    assert_eq!(run.alice_bits, run.encoded_bits);
    assert_eq!(run.bob_bits, run.encoded_bits);
    assert_eq!(run.alice_blocks, run.bob_blocks);
    for block in &run.alice_blocks {
        assert_eq!(block.round_ids.len(), 20);
        assert_eq!(block.key_bit, block.shared_bits.iter().fold(0, |a, b| a ^ b));
    }
    assert!(audit_transcript(&run.transcript, &run.records).is_empty());
}

#[test]
fn critical_ensemble_passes_estimation_and_keys_agree() {
    let e = critical_ensemble_full();
    let cfg = ProtocolConfig { n_rounds: 1_000_000, chsh_tolerance: 0.1, seed: 2, ..ProtocolConfig::default() };
    let run = run_protocol(&cfg, Source::Ensemble(&e)).unwrap();
    assert_eq!(run.status, ProtocolStatus::Completed, "{:?}", run.estimate.abort_reason);
    assert!(run.estimate.correlation_checks.iter().all(|c| c.pass));
    assert_eq!(run.mismatched_blocks(), 0);
    assert!(audit_transcript(&run.transcript, &run.records).is_empty());
}

#[test]
fn phase_tags_are_assigned_once_and_match_the_transcript() {
    let run = run_protocol(&config(30_000, 3), Source::Ideal).unwrap();
    assert!(run.records.iter().all(|r| r.phase_tag.is_some()));
    let discards = run.transcript.iter().filter(|m| m.payload == Payload::Discard).count();
    let discarded = run.records.iter().filter(|r| r.phase_tag == Some(PhaseTag::Discarded)).count();
    assert_eq!(discards, discarded);
    for r in run.records.iter().filter(|r| r.phase_tag == Some(PhaseTag::Discarded)) {
        let d = r.basis_a.total().index().abs_diff(r.basis_b.total().index());
        assert!(d != 0 && d != 4);
    }
}

#[test]
fn key_round_messages_never_carry_the_hidden_offset() {
    let run = run_protocol(&config(30_000, 4), Source::Ideal).unwrap();
    let mut buf = Vec::new();
    run.transcript.write_jsonl(&mut buf).unwrap();
    for line in String::from_utf8(buf).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        match v["kind"].as_str().unwrap() {
            "PhiReveal" => assert_eq!(v["payload"].as_object().unwrap().keys().collect::<Vec<_>>(), ["phi"]),
            "EncodedBit" => assert_eq!(v["payload"].as_object().unwrap().len(), 2),
            _ => {}
        }
    }
    for m in run.transcript.iter() {
        if let (Payload::EncodedBit { c, .. }, Some(round)) = (m.payload, m.round_id) {
            let rec = &run.records[round as usize];
            let own = match m.sender.party().unwrap() {
                monoqkd::protocol::Party::Alice => rec.basis_a.c(),
                monoqkd::protocol::Party::Bob => rec.basis_b.c(),
            };
            assert_eq!(c, own);
        }
    }
}

#[test]
fn transcript_file_reproduces_the_estimate() {
    let run = run_protocol(&config(30_000, 5), Source::Ideal).unwrap();
    let mut buf = Vec::new();
    run.transcript.write_jsonl(&mut buf).unwrap();
    let back = Transcript::read_jsonl(&buf[..]).unwrap();
    assert_eq!(back, run.transcript);
    let samples = test_samples_from_transcript(&back).unwrap();
    let est = parameter_estimation(&samples, &ChshSetting::canonical(), &run.config.estimation()).unwrap();
    assert_eq!(est, run.estimate);
}

#[test]
fn lambda_labels_cannot_influence_the_parties() {
    let base = critical_ensemble_full();
    let relabelled = HvEnsemble::new(
        base.members()
            .iter()
            .enumerate()
            .map(|(i, m)| EnsembleMember {
                strategy: m.strategy.clone().with_id(LambdaId(1_000_000 - i as u32)),
                weight: m.weight,
            })
            .collect(),
    )
    .unwrap();
    let cfg = config(50_000, 6);
    let a = run_protocol(&cfg, Source::Ensemble(&base)).unwrap();
    let b = run_protocol(&cfg, Source::Ensemble(&relabelled)).unwrap();
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.alice_blocks, b.alice_blocks);
    assert_ne!(a.records[0].lambda_id, b.records[0].lambda_id);
}

#[test]
fn thin_test_cells_are_an_error() {
    let cfg = ProtocolConfig { min_cell_samples: 1_000, ..config(20_000, 7) };
    assert!(matches!(run_protocol(&cfg, Source::Ideal), Err(ProtocolError::InsufficientData { .. })));
}

#[test]
fn too_few_decodable_rounds_for_one_block() {
    let cfg = ProtocolConfig { n_rounds: 4_000, key_length: 1_500, min_cell_samples: 1, chsh_tolerance: 2.0, ..config(0, 8) };
    assert!(cfg.validate().is_ok());
    match run_protocol(&cfg, Source::Ideal) {
        Err(ProtocolError::InsufficientBits { required: 1_500, available }) => assert!(available < 1_500),
        other => panic!("unexpected {:?}", other.map(|r| r.status)),
    }
}

#[test]
fn same_seed_same_run() {
    let a = run_protocol(&config(20_000, 9), Source::Ideal).unwrap();
    let b = run_protocol(&config(20_000, 9), Source::Ideal).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.alice_blocks, b.alice_blocks);
}
