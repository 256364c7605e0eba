//! Orchestration: scenario files, isolated worlds, the attack matrix, the
//! offline trace checker and the analytic cost estimator.

mod check;
mod config;
mod cost;
mod matrix;
mod tamper;
mod tracefile;
mod world;

pub use check::{trace_check, CheckReport, Invariant, Violation};
pub use config::{
    builtin_model, ConfigError, DeviceSection, ModelSpec, PpiConfig, ScenarioConfig, BUILTIN_MODELS, CONFIG_VERSION,
    SEED_ENV,
};
pub use cost::{chunk_plan, estimate_costs, estimate_with, ChunkPlan, CostModel, CostReport, RegionCost};
pub use matrix::{attack_matrix, AttackReport, AttackRow, MATRIX_MODEL, MATRIX_ROUNDS};
pub use tamper::{flip, surface_len, tamper_surface, Segment, TamperField};
pub use tracefile::{parse_jsonl, TraceFile, TraceFileError, TraceHeader};
pub use world::{
    classify, leaked, quick_config, read_back, run_scenario, run_scenario_with, split_inputs, RoundResult, RunSummary,
    ScenarioError, ScenarioRun, CANARY_LEN,
};
