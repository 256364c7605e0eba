//! Every attack policy against a fresh world, with a leakage verdict.

use serde::Serialize;

use super::check::trace_check;
use super::world::{quick_config, run_scenario, ScenarioError};
use crate::host::{AttackPolicy, Outcome};

/// Two rounds so output replay has something to replay; the canary model
/// so weight leakage is detectable.
pub const MATRIX_MODEL: &str = "canary_mlp";
pub const MATRIX_ROUNDS: u32 = 2;

#[derive(Clone, Debug, Serialize)]
pub struct AttackRow {
    pub policy: AttackPolicy,
    pub expected: Outcome,
    pub observed: Outcome,
    pub canary_leaked: bool,
    /// Offline trace invariants held.
    pub trace_clean: bool,
    pub pass: bool,
    pub trace_digest: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackReport {
    pub seed: u64,
    pub rows: Vec<AttackRow>,
}

impl AttackReport {
    pub fn passed(&self) -> usize {
        self.rows.iter().filter(|r| r.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        self.passed() == self.rows.len()
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<26} {:<36} {:<36} {:<7} {}\n", "POLICY", "EXPECTED", "OBSERVED", "LEAK", "RESULT");
        for r in &self.rows {
            out += &format!(
                "{:<26} {:<36} {:<36} {:<7} {}\n",
                r.policy.name(),
                name(r.expected),
                name(r.observed),
                if r.canary_leaked { "yes" } else { "no" },
                if r.pass { "pass" } else { "FAIL" },
            );
        }
        out += &format!("{}/{} policies pass (seed {})\n", self.passed(), self.rows.len(), self.seed);
        out
    }
}

fn name(o: Outcome) -> String {
    serde_json::to_value(o).unwrap().as_str().unwrap().to_owned()
}

pub fn attack_matrix(seed: u64) -> Result<AttackReport, ScenarioError> {
    let mut rows = Vec::new();
    for policy in AttackPolicy::ALL {
        let run = run_scenario(&quick_config(seed, policy, MATRIX_MODEL, MATRIX_ROUNDS))?;
        let canaries: Vec<Vec<u8>> = run.canaries.iter().map(|c| c.to_vec()).collect();
        let check = trace_check(run.trace(), &canaries);
        let canary_leaked = !run.leaked_canaries().is_empty();
        let expected = policy.expected();
        rows.push(AttackRow {
            policy,
            expected,
            observed: run.outcome,
            canary_leaked,
            trace_clean: check.ok(),
            pass: expected == run.outcome && !canary_leaked && check.ok(),
            trace_digest: run.trace().digest(),
        });
    }
    Ok(AttackReport { seed, rows })
}
