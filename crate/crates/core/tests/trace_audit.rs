use ascendsim::harness::{parse_jsonl, quick_config, run_scenario, trace_check, Invariant};
use ascendsim::host::AttackPolicy;
use ascendsim::layout::RegionKind;
use ascendsim::trace::{Event, ExecutionTrace, Status};

fn canaries(run: &ascendsim::harness::ScenarioRun) -> Vec<Vec<u8>> {
    run.canaries.iter().map(|c| c.to_vec()).collect()
}

#[test]
fn every_policy_trace_passes_offline_audit() {
    for policy in AttackPolicy::ALL {
        let run = run_scenario(&quick_config(21, policy, "canary_mlp", 2)).unwrap();
        let text = run.trace_file().to_jsonl();
        let (header, trace) = parse_jsonl(&text).unwrap();
        let header = header.unwrap();
        assert_eq!(header.attack, policy);
        let report = trace_check(&trace, &header.canary_bytes().unwrap());
        assert!(report.ok(), "{}: {:?}", policy.name(), report.violations);
        assert_eq!(report.canaries, run.canaries.len());
    }
}

#[test]
fn moving_the_ack_after_decrypt_is_caught() {
    let run = run_scenario(&quick_config(22, AttackPolicy::Honest, "matmul_2x2", 1)).unwrap();
    let mut entries = run.trace().entries().to_vec();
    let ack = entries.iter().position(|e| e.event == Event::UnmapAck).unwrap();
    let ack_entry = entries.remove(ack);
    let dec = entries.iter().position(|e| e.event == Event::InputDecrypt).unwrap();
    entries.insert(dec + 1, ack_entry);
    let report = trace_check(&ExecutionTrace::from_entries(entries), &canaries(&run));
    assert!(report.violated(Invariant::Atomicity));
}

#[test]
fn dropping_an_unmap_is_caught() {
    let run = run_scenario(&quick_config(23, AttackPolicy::Honest, "matmul_2x2", 1)).unwrap();
    let mut entries = run.trace().entries().to_vec();
    let unmap = entries
        .iter()
        .position(|e| e.event == Event::Unmap && e.region == Some(RegionKind::ModelParams))
        .unwrap();
    entries.remove(unmap);
    let report = trace_check(&ExecutionTrace::from_entries(entries), &[]);
    assert!(report.violated(Invariant::Atomicity));
    assert!(report.violated(Invariant::LifecycleLegality));
}

#[test]
fn a_faulted_read_marked_ok_is_caught() {
    let run = run_scenario(&quick_config(24, AttackPolicy::DmaProbeLocked, "canary_mlp", 1)).unwrap();
    let mut entries = run.trace().entries().to_vec();
    let probe = entries.iter_mut().find(|e| e.event == Event::DmaRead && e.status == Status::Fault).unwrap();
    probe.status = Status::Ok;
    let report = trace_check(&ExecutionTrace::from_entries(entries), &[]);
    assert!(report.violated(Invariant::SmmuSoundness));
    assert!(report.violated(Invariant::DirectionExclusivity));
}

#[test]
fn planted_plaintext_is_caught() {
    let run = run_scenario(&quick_config(25, AttackPolicy::Honest, "canary_mlp", 1)).unwrap();
    let mut entries = run.trace().entries().to_vec();
    let read = entries.iter_mut().rev().find(|e| e.event == Event::DmaRead && e.observed_bytes.is_some()).unwrap();
    let mut bytes = hex::decode(read.observed_bytes.as_ref().unwrap()).unwrap();
    bytes.extend_from_slice(&run.canaries[0]);
    read.observed_bytes = Some(hex::encode(bytes));
    let report = trace_check(&ExecutionTrace::from_entries(entries), &canaries(&run));
    assert!(report.violated(Invariant::NoPlaintextLeak));
}

#[test]
fn zeroize_after_release_is_caught() {
    let run = run_scenario(&quick_config(26, AttackPolicy::Honest, "matmul_2x2", 1)).unwrap();
    let mut entries = run.trace().entries().to_vec();
    let z = entries.iter().rposition(|e| e.event == Event::Zeroize).unwrap();
    let moved = entries.remove(z);
    let r = entries.iter().position(|e| e.event == Event::Release).unwrap();
    entries.insert(r + 1, moved);
    let report = trace_check(&ExecutionTrace::from_entries(entries), &[]);
    assert!(report.violated(Invariant::CleanOrdering));
}
