use ascendsim::crypto::{FirmwareMeasurement, SigningKey};
use ascendsim::device::{
    reference_firmware, AbortReason, CommandPort, DeviceCommand, DeviceConfig, DeviceError, DeviceResponse, KexError,
    NpuDevice, PpiFailure, Vendor,
};
use ascendsim::harness::{
    quick_config, run_scenario, run_scenario_with, ConfigError, ModelSpec, PpiConfig, RoundResult, ScenarioConfig,
    ScenarioError,
};
use ascendsim::host::{AttackPolicy, HostStep, Outcome};
use ascendsim::parties::messages::Role;
use ascendsim::parties::{ModelProvider, ProviderIdentity, SessionError, TrustAnchor};
use ascendsim::toolchain::{compile, OperatorGraph, Shape, TensorDecl};
use ascendsim::trace::Event;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

struct Rig {
    vendor: Vendor,
    device: NpuDevice,
    rng: ChaCha20Rng,
}

fn rig(seed: u64) -> Rig {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let vendor = Vendor::generate(&mut rng);
    let mut device = vendor.manufacture(&mut rng, DeviceConfig::default());
    let image = reference_firmware("1.0.0");
    device.measured_boot(&image, &vendor.sign_firmware(&image)).unwrap();
    Rig { vendor, device, rng }
}

impl Rig {
    fn provider(&mut self, allowed: &[&str]) -> ModelProvider {
        let key = SigningKey::generate(&mut self.rng);
        let cert = self.vendor.certify_provider(Role::Model, &key.verifying_key());
        let anchor = TrustAnchor {
            vendor: self.vendor.public(),
            allowed: allowed.iter().map(|v| FirmwareMeasurement::of_image(&reference_firmware(v))).collect(),
        };
        let model = compile(&OperatorGraph::matmul_2x2()).unwrap();
        ModelProvider::new(model, None, ProviderIdentity { key, cert }, anchor)
    }

    fn exchange(&mut self, init: Vec<u8>) -> Result<Vec<u8>, DeviceError> {
        match self.device.submit(DeviceCommand::KeyExchange(init))? {
            DeviceResponse::Kex(r) => Ok(r),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn attested_handshake_succeeds() {
    let mut r = rig(1);
    let mut mp = r.provider(&["1.0.0"]);
    let init = mp.begin_session(&mut r.rng);
    let reply = r.exchange(init).unwrap();
    let m = mp.finish_session(&reply).unwrap();
    assert_eq!(m, FirmwareMeasurement::of_image(&reference_firmware("1.0.0")));
    assert!(mp.has_session());
}

#[test]
fn tampered_reply_is_rejected() {
    let mut r = rig(2);
    let mut mp = r.provider(&["1.0.0"]);
    let init = mp.begin_session(&mut r.rng);
    let reply = r.exchange(init).unwrap();
    // A relaying host swaps one byte of the device's ephemeral key.
    for at in [5, 10, 20, 36] {
        let mut mp = r.provider(&["1.0.0"]);
        let init = mp.begin_session(&mut r.rng);
        let mut forged = r.exchange(init).unwrap();
        forged[at] ^= 0x40;
        assert!(mp.finish_session(&forged).is_err(), "byte {at}");
        assert!(!mp.has_session());
    }
    // A reply meant for one provider does not finish another's handshake.
    let mut other = r.provider(&["1.0.0"]);
    other.begin_session(&mut r.rng);
    assert_eq!(other.finish_session(&reply), Err(SessionError::BadSignature));
}

#[test]
fn unknown_firmware_is_refused() {
    let mut r = rig(3);
    let mut mp = r.provider(&["2.0.0"]);
    let init = mp.begin_session(&mut r.rng);
    let reply = r.exchange(init).unwrap();
    assert!(matches!(mp.finish_session(&reply), Err(SessionError::MeasurementMismatch(_))));

    let mut c = ScenarioConfig::new(3);
    c.device.trusted_firmware = Some(vec!["0.9.0".into()]);
    assert!(matches!(
        run_scenario(&c),
        Err(ScenarioError::Session { role: Role::Model, source: SessionError::MeasurementMismatch(_) })
    ));
}

#[test]
fn provider_without_vendor_certificate_is_refused() {
    let mut r = rig(4);
    let rogue = Vendor::generate(&mut r.rng);
    let key = SigningKey::generate(&mut r.rng);
    let cert = rogue.certify_provider(Role::Model, &key.verifying_key());
    let anchor = TrustAnchor { vendor: r.vendor.public(), allowed: vec![] };
    let mut mp = ModelProvider::new(compile(&OperatorGraph::matmul_2x2()).unwrap(), None, ProviderIdentity { key, cert }, anchor);
    let init = mp.begin_session(&mut r.rng);
    assert_eq!(r.exchange(init), Err(DeviceError::KeyExchange(KexError::UntrustedProvider)));
    assert_eq!(r.exchange(b"garbage".to_vec()), Err(DeviceError::KeyExchange(KexError::Malformed)));
}

#[test]
fn unsigned_firmware_does_not_boot() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let vendor = Vendor::generate(&mut rng);
    let rogue = Vendor::generate(&mut rng);
    let mut device = vendor.manufacture(&mut rng, DeviceConfig::default());
    let image = reference_firmware("1.0.0");
    assert!(device.measured_boot(&image, &rogue.sign_firmware(&image)).is_err());
    let mut patched = image.clone();
    patched[0] ^= 1;
    assert!(device.measured_boot(&patched, &vendor.sign_firmware(&image)).is_err());
    assert!(device.identity().is_none());
    device.measured_boot(&image, &vendor.sign_firmware(&image)).unwrap();
}

#[test]
fn session_keys_are_isolated() {
    let mut c = quick_config(6, AttackPolicy::Honest, "canary_mlp", 1);
    c.ppi = Some(PpiConfig { enabled: true, budget: 4 });
    let run = run_scenario(&c).unwrap();
    let mp = run.model_provider.snapshot();
    let dp = run.data_provider.snapshot();
    let (km, kd) = (mp.session_key.clone().unwrap(), dp.session_key.clone().unwrap());
    assert_ne!(km, kd);
    let mp_json = serde_json::to_string(&mp).unwrap();
    let dp_json = serde_json::to_string(&dp).unwrap();
    assert!(!mp_json.contains(&kd));
    assert!(!dp_json.contains(&km));

    // Neither key, nor any HSM secret, is in the device's serialized state
    // or the trace.
    let state = serde_json::to_string(&run.device.snapshot()).unwrap();
    let trace = run.trace_file().to_jsonl();
    for secret in run.device.audit_key_material() {
        let h = hex::encode(&secret);
        assert!(!state.contains(&h));
        assert!(!trace.contains(&h));
    }
    assert!(!trace.contains(&km) && !trace.contains(&kd));
}

#[test]
fn model_provider_never_sees_input_canaries() {
    let mut c = quick_config(7, AttackPolicy::Honest, "identity_4x4", 3);
    c.ppi = Some(PpiConfig { enabled: true, budget: 3 });
    let run = run_scenario(&c).unwrap();
    assert_eq!(run.outcome, Outcome::Ok);
    let seen = run.model_provider.observed_bytes();
    assert!(!seen.is_empty());
    assert!(ascendsim::harness::leaked(&seen, &run.canaries).is_empty());
    assert_eq!(run.model_provider.budget_remaining(), Some(0));
}

#[test]
fn grant_for_another_input_is_rejected() {
    let mut c = quick_config(8, AttackPolicy::Honest, "matmul_2x2", 2);
    c.ppi = Some(PpiConfig { enabled: true, budget: 5 });
    // Round 1 presents round 0's (valid) tokens with a different input.
    let run = run_scenario_with(&c, |mut s, _| {
        let mut first = None;
        for step in &mut s.steps {
            if let HostStep::Mailbox(m) = step {
                match first {
                    None => first = m.ppi,
                    Some(_) => m.ppi = first,
                }
            }
        }
        s
    })
    .unwrap();
    assert!(matches!(run.results[0], RoundResult::Output(_)));
    assert_eq!(run.outcome, Outcome::PpiReject);
    assert_eq!(run.log.abort(), Some(&AbortReason::PpiReject { failure: PpiFailure::InvalidTokens }));
}

#[test]
fn missing_tokens_are_rejected() {
    let mut c = quick_config(9, AttackPolicy::Honest, "matmul_2x2", 1);
    c.ppi = Some(PpiConfig { enabled: true, budget: 5 });
    let run = run_scenario_with(&c, |mut s, _| {
        for step in &mut s.steps {
            if let HostStep::Mailbox(m) = step {
                m.ppi = None;
            }
        }
        s
    })
    .unwrap();
    assert_eq!(run.log.abort(), Some(&AbortReason::PpiReject { failure: PpiFailure::MissingTokens }));
    assert_eq!(run.trace().count(Event::ModelDecrypt), 0);
}

#[test]
fn disabled_ppi_needs_no_tokens() {
    let mut c = quick_config(10, AttackPolicy::Honest, "matmul_2x2", 2);
    c.ppi = Some(PpiConfig { enabled: false, budget: 0 });
    let run = run_scenario(&c).unwrap();
    assert_eq!(run.outcome, Outcome::Ok);
    assert_eq!(run.trace().count(Event::PpiVerify), 0);
}

#[test]
fn zero_layer_model_round_trips() {
    let graph = OperatorGraph { inputs: vec![TensorDecl { id: 0, shape: Shape(1, 4) }], weights: vec![], layers: vec![] };
    let mut c = ScenarioConfig::new(11);
    c.model = ModelSpec::Graph(graph);
    let run = run_scenario(&c).unwrap();
    assert_eq!(run.outcome, Outcome::Ok);
    assert_eq!(run.results, vec![RoundResult::Output(vec![])]);
    assert_eq!(run.trace().count(Event::Kernel), 0);
}

#[test]
fn lock_failure_aborts_before_decrypt() {
    let mut c = ScenarioConfig::new(12);
    c.device.inject_unmap_failure = true;
    let run = run_scenario(&c).unwrap();
    assert_eq!(run.outcome, Outcome::LockAbort);
    assert!(run.trace().entries().iter().all(|e| !e.event.is_decrypt()));
    assert_eq!(run.results, vec![RoundResult::Missing]);
}

#[test]
fn bad_inputs_in_config_are_config_errors() {
    let mut c = ScenarioConfig::new(13);
    c.inputs = Some(vec![vec![0; 8], vec![0; 8]]);
    assert!(matches!(run_scenario(&c), Err(ScenarioError::Config(ConfigError::InputRounds(2, 1)))));
}
