//! One isolated world per scenario: vendor, device, host and both parties.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use super::tracefile::{TraceFile, TraceHeader};
use crate::crypto::{AuthFailure, FirmwareMeasurement, SigningKey};
use crate::device::{
    reference_firmware, AbortReason, CommandPort, DeviceCommand, DeviceConfig, DeviceError, DeviceResponse, NpuDevice,
    Vendor,
};
use crate::host::{apply_attack, HbmLayout, HostError, HostEventKind, HostLog, HostRuntime, HostScript, Outcome, RoundInput};
use crate::isa::{decode_tensor, encode_tensor};
use crate::parties::messages::{Message, Role};
use crate::parties::{DataProvider, ModelProvider, PpiError, ProviderIdentity, SessionError, TrustAnchor};
use crate::toolchain::{compile, reference, OperatorGraph, SealedModel};
use crate::trace::ExecutionTrace;

pub const CANARY_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("device refused to boot: {0}")]
    Boot(DeviceError),
    #[error("{role:?} provider key exchange failed: {source}")]
    Session { role: Role, source: SessionError },
    #[error("device rejected the key exchange: {0}")]
    KeyExchange(DeviceError),
    #[error(transparent)]
    Host(#[from] HostError),
}

/// What the data provider got back for one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundResult {
    Output(Vec<i16>),
    AuthFailure,
    Missing,
}

pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub device: NpuDevice,
    pub model_provider: ModelProvider,
    pub data_provider: DataProvider,
    pub sealed: SealedModel,
    pub layout: HbmLayout,
    pub pcs: Vec<u64>,
    pub script: HostScript,
    pub log: HostLog,
    pub inputs: Vec<Vec<i16>>,
    pub results: Vec<RoundResult>,
    /// Graph-level evaluation of each round's input.
    pub expected: Vec<Vec<i16>>,
    pub canaries: Vec<[u8; CANARY_LEN]>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub attack: String,
    pub outcome: Outcome,
    pub expected_outcome: Outcome,
    pub abort: Option<AbortReason>,
    pub rounds: Vec<RoundResult>,
    pub leaked_canaries: usize,
    pub trace_entries: usize,
    pub trace_digest: String,
}

impl ScenarioRun {
    pub fn trace(&self) -> &ExecutionTrace {
        self.device.trace()
    }

    /// Indices of canaries found in host-observable bytes.
    pub fn leaked_canaries(&self) -> Vec<usize> {
        let seen = self.trace().host_observable_bytes();
        leaked(&seen, &self.canaries)
    }

    pub fn trace_file(&self) -> TraceFile {
        TraceFile {
            header: TraceHeader::new(self.config.seed, self.config.attack, &self.canaries),
            trace: self.trace().clone(),
        }
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            seed: self.config.seed,
            attack: self.config.attack.name(),
            outcome: self.outcome,
            expected_outcome: self.config.attack.expected(),
            abort: self.log.abort().cloned(),
            rounds: self.results.clone(),
            leaked_canaries: self.leaked_canaries().len(),
            trace_entries: self.trace().entries().len(),
            trace_digest: self.trace().digest(),
        }
    }
}

pub fn leaked(haystack: &[u8], canaries: &[[u8; CANARY_LEN]]) -> Vec<usize> {
    canaries
        .iter()
        .enumerate()
        .filter(|(_, c)| haystack.windows(CANARY_LEN).any(|w| w == &c[..]))
        .map(|(i, _)| i)
        .collect()
}

fn fork(rng: &mut ChaCha20Rng) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(rng.gen())
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun, ScenarioError> {
    run_scenario_with(config, |s, _| s)
}

/// Like [`run_scenario`], with a final rewrite of the host script after the
/// configured attack has been applied.
pub fn run_scenario_with(
    config: &ScenarioConfig,
    rewrite: impl FnOnce(HostScript, &HbmLayout) -> HostScript,
) -> Result<ScenarioRun, ScenarioError> {
    if config.rounds == 0 {
        return Err(ConfigError::NoRounds.into());
    }
    let graph = config.graph()?;
    let model = compile(&graph).map_err(ConfigError::from)?;
    let inputs = round_inputs(config, &graph)?;

    let mut master = ChaCha20Rng::seed_from_u64(config.seed);
    let mut vendor_rng = fork(&mut master);
    let mut device_rng = fork(&mut master);
    let mut mp_rng = fork(&mut master);
    let mut dp_rng = fork(&mut master);

    let vendor = Vendor::generate(&mut vendor_rng);
    let device_config =
        DeviceConfig { hbm_size: config.device.hbm_size, inject_unmap_failure: config.device.inject_unmap_failure };
    let mut device = vendor.manufacture(&mut device_rng, device_config);
    let image = reference_firmware(&config.device.firmware_version);
    device.measured_boot(&image, &vendor.sign_firmware(&image)).map_err(ScenarioError::Boot)?;

    let trusted = config.device.trusted_firmware.clone().unwrap_or_else(|| vec![config.device.firmware_version.clone()]);
    let anchor = TrustAnchor {
        vendor: vendor.public(),
        allowed: trusted.iter().map(|v| FirmwareMeasurement::of_image(&reference_firmware(v))).collect(),
    };
    let identity = |role, rng: &mut ChaCha20Rng| {
        let key = SigningKey::generate(rng);
        let cert = vendor.certify_provider(role, &key.verifying_key());
        ProviderIdentity { key, cert }
    };
    let mut mp = ModelProvider::new(model, config.ppi_budget(), identity(Role::Model, &mut mp_rng), anchor.clone());
    let mut dp = DataProvider::new(identity(Role::Data, &mut dp_rng), anchor);

    let init = mp.begin_session(&mut mp_rng);
    let reply = key_exchange(&mut device, &init, "model provider")?;
    mp.finish_session(&reply).map_err(|source| ScenarioError::Session { role: Role::Model, source })?;
    let init = dp.begin_session(&mut dp_rng);
    let reply = key_exchange(&mut device, &init, "data provider")?;
    dp.finish_session(&reply).map_err(|source| ScenarioError::Session { role: Role::Data, source })?;

    let session = |source| ScenarioError::Session { role: Role::Model, source };
    let (sealed, chain) = mp.seal_model(&mut mp_rng).map_err(session)?;
    device.log_relay(&sealed.to_bytes(), "sealed model: model provider -> host");
    // The chain commitment goes to the data provider out of band.
    let session = |source| ScenarioError::Session { role: Role::Data, source };

    let hbm = config.device.hbm_size;
    let mut rt = HostRuntime::new(&mut device, hbm);
    let pcs = rt.plan(&sealed)?;
    rt.port().log_relay(&Message::PcList(pcs.clone()).encode(), "pc list: host -> data provider");
    let (p1, p2) = dp.sign_pc_commitments(&pcs, &chain).map_err(session)?;
    rt.port().log_relay(&Message::PcCommitments { p1, p2 }.encode(), "commitments: data provider -> host");

    let mut rounds = Vec::new();
    let mut last_grant = None;
    let mut canaries = weight_canaries(&graph);
    for (r, values) in inputs.iter().enumerate() {
        let r = r as u32;
        let plain = encode_tensor(values);
        if let Some(c) = canary_of(&plain) {
            canaries.push(c);
        }
        let sealed_input = dp.seal_input(r, &plain).map_err(session)?;
        rt.port().log_relay(&Message::SealedInput { round: r, blob: sealed_input.clone() }.encode(), "input: data provider -> host");
        let ppi = match config.ppi_budget() {
            None => None,
            Some(_) => {
                let tag1 = dp.input_tag(&plain).map_err(session)?;
                match mp.ppi_register(&tag1) {
                    Ok(t1) => last_grant = Some((tag1, t1)),
                    // Out of budget: the host replays the last grant and the
                    // device's own counter has to stop it.
                    Err(PpiError::BudgetExhausted) => {}
                    Err(PpiError::NoSession) => return Err(session(SessionError::NoSession)),
                }
                if let Some((tag1, t1)) = last_grant {
                    rt.port().log_relay(&Message::PpiGrant { round: r, t1 }.encode(), "grant: host");
                    rt.port().log_relay(&Message::PpiRequest { round: r, tag1 }.encode(), "tag: host");
                }
                last_grant
            }
        };
        rounds.push(RoundInput { sealed_input, ppi });
    }

    let honest = rt.honest_script(&sealed, p1, p2, &rounds)?;
    let layout = rt.layout().cloned().expect("planned above");
    let script = rewrite(apply_attack(config.attack, &honest, &layout, config.seed), &layout);
    let log = rt.execute(&script);
    drop(rt);

    let mut results = Vec::new();
    for r in 0..config.rounds {
        let source = match script.output_substitution {
            Some((target, source)) if target == r => source,
            _ => r,
        };
        let result = match log.outputs.get(&source) {
            None => RoundResult::Missing,
            Some(blob) => {
                device.log_relay(&Message::SealedOutput { round: r, blob: blob.clone() }.encode(), "output: host -> data provider");
                match dp.open_output(r, blob) {
                    Ok(plain) => RoundResult::Output(decode_tensor(&plain)),
                    Err(AuthFailure) => RoundResult::AuthFailure,
                }
            }
        };
        results.push(result);
    }

    let expected = inputs
        .iter()
        .map(|v| reference::evaluate(&graph, &split_inputs(&graph, v)).expect("graph validated by compile"))
        .collect();
    let outcome = classify(&log, device.trace(), &results);
    Ok(ScenarioRun {
        config: config.clone(),
        device,
        model_provider: mp,
        data_provider: dp,
        sealed,
        layout,
        pcs,
        script,
        log,
        inputs,
        results,
        expected,
        canaries,
        outcome,
    })
}

fn key_exchange(device: &mut NpuDevice, init: &[u8], who: &str) -> Result<Vec<u8>, ScenarioError> {
    device.log_relay(init, &format!("key exchange: {who} -> device"));
    match device.submit(DeviceCommand::KeyExchange(init.to_vec())) {
        Ok(DeviceResponse::Kex(reply)) => {
            device.log_relay(&reply, &format!("key exchange: device -> {who}"));
            Ok(reply)
        }
        Ok(other) => unreachable!("key exchange answered with {other:?}"),
        Err(e) => Err(ScenarioError::KeyExchange(e)),
    }
}

/// The first non-Ok thing that happened, in host order; then what the data
/// provider found when opening outputs.
pub fn classify(log: &HostLog, trace: &ExecutionTrace, results: &[RoundResult]) -> Outcome {
    for e in &log.events {
        match &e.kind {
            HostEventKind::Output { .. } => {}
            HostEventKind::Error(err) => {
                return match err {
                    DeviceError::SmmuFault { .. } => Outcome::SmmuFault,
                    DeviceError::QueueLocked => Outcome::QueueLocked,
                    DeviceError::DebugRejected => Outcome::Rejected,
                    _ => Outcome::HostError,
                }
            }
            HostEventKind::Aborted(reason) => {
                return match reason {
                    AbortReason::PpiReject { .. } => Outcome::PpiReject,
                    AbortReason::Interrupted if !trace.entries().iter().any(|t| t.event.is_decrypt()) => {
                        Outcome::NoDecryptScheduled
                    }
                    AbortReason::LockFailure => Outcome::LockAbort,
                    AbortReason::VmFault { .. } => Outcome::VmFault,
                    r if r.is_attestation_failure() => Outcome::AttestAbort,
                    _ => Outcome::HostError,
                }
            }
        }
    }
    if results.contains(&RoundResult::AuthFailure) {
        return Outcome::OutputAuthFailsAtDataProvider;
    }
    if results.contains(&RoundResult::Missing) {
        return Outcome::HostError;
    }
    Outcome::Ok
}

fn round_inputs(config: &ScenarioConfig, graph: &OperatorGraph) -> Result<Vec<Vec<i16>>, ConfigError> {
    let expected: usize = graph.inputs.iter().map(|t| t.shape.elems()).sum();
    match &config.inputs {
        Some(given) => {
            if given.len() != config.rounds as usize {
                return Err(ConfigError::InputRounds(given.len(), config.rounds));
            }
            for (round, v) in given.iter().enumerate() {
                if v.len() != expected {
                    return Err(ConfigError::InputLength { round, expected, found: v.len() });
                }
            }
            Ok(given.clone())
        }
        None => {
            // Separate stream from the world's keys so inputs stay fixed
            // when only key material changes.
            let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x696e_7075_7473);
            Ok((0..config.rounds).map(|_| (0..expected).map(|_| rng.gen_range(-64..64)).collect()).collect())
        }
    }
}

/// Splits flattened values into one vector per declared input.
pub fn split_inputs(graph: &OperatorGraph, values: &[i16]) -> Vec<Vec<i16>> {
    let mut out = Vec::new();
    let mut at = 0;
    for t in &graph.inputs {
        let n = t.shape.elems();
        out.push(values[at..at + n].to_vec());
        at += n;
    }
    out
}

fn canary_of(bytes: &[u8]) -> Option<[u8; CANARY_LEN]> {
    bytes.get(..CANARY_LEN).map(|s| s.try_into().unwrap())
}

fn weight_canaries(graph: &OperatorGraph) -> Vec<[u8; CANARY_LEN]> {
    graph.weights.iter().filter_map(|w| canary_of(&encode_tensor(&w.data))).collect()
}

/// Runs with defaults for everything but seed and attack.
pub fn quick_config(seed: u64, attack: crate::host::AttackPolicy, model: &str, rounds: u32) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(seed);
    c.attack = attack;
    c.model = super::config::ModelSpec::Builtin(model.into());
    c.rounds = rounds;
    c
}

/// Post-run DMA reads of each region's former range, for zeroization checks.
pub fn read_back(device: &mut NpuDevice, layout: &HbmLayout) -> BTreeMap<crate::layout::RegionKind, Result<Vec<u8>, DeviceError>> {
    layout
        .regions
        .iter()
        .map(|(&kind, r)| {
            let got = match device.submit(DeviceCommand::DmaRead { addr: r.base, len: r.len }) {
                Ok(DeviceResponse::Bytes(b)) => Ok(b),
                Ok(other) => unreachable!("read answered with {other:?}"),
                Err(e) => Err(e),
            };
            (kind, got)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::AttackPolicy;
    use crate::trace::Event;

    #[test]
    fn honest_matmul_matches_reference() {
        let mut c = quick_config(1, AttackPolicy::Honest, "matmul_2x2", 1);
        c.inputs = Some(vec![vec![1, 2, 3, 4, 5, 6, 7, 8]]);
        let run = run_scenario(&c).unwrap();
        assert_eq!(run.outcome, Outcome::Ok);
        assert_eq!(run.results, vec![RoundResult::Output(vec![19, 22, 43, 50])]);
        assert!(run.leaked_canaries().is_empty());
        assert_eq!(run.trace().count(Event::ModelDecrypt), 1);
    }

    #[test]
    fn budget_one_two_rounds_rejects_round_two() {
        let mut c = quick_config(2, AttackPolicy::Honest, "matmul_2x2", 2);
        c.ppi = Some(super::super::config::PpiConfig { enabled: true, budget: 1 });
        let run = run_scenario(&c).unwrap();
        assert_eq!(run.outcome, Outcome::PpiReject);
        assert!(matches!(run.results[0], RoundResult::Output(_)));
        assert_eq!(run.results[1], RoundResult::Missing);
    }

    #[test]
    fn input_length_is_checked() {
        let mut c = ScenarioConfig::new(0);
        c.inputs = Some(vec![vec![1, 2, 3]]);
        assert!(matches!(run_scenario(&c), Err(ScenarioError::Config(ConfigError::InputLength { .. }))));
        c.rounds = 0;
        assert!(matches!(run_scenario(&c), Err(ScenarioError::Config(ConfigError::NoRounds))));
    }
}
