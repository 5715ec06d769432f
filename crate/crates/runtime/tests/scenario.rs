use std::time::Duration;

use formation_core::sim::{run_lockstep, ScenarioConfig};
use formation_runtime::bridge::BridgeConfig;
use formation_runtime::runlog::{LogRecord, RunLog};
use formation_runtime::scenario::{run_in_process, RunOptions};

fn short(duration: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::formation_default();
    cfg.duration = duration;
    cfg.speed = 1000.0;
    cfg
}

#[test]
fn bridged_run_matches_lockstep() {
    let cfg = short(3.0);
    let mut expected = Vec::new();
    run_lockstep(&cfg, |r| expected.push(LogRecord::from(r)), |_, _| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        log_path: Some(dir.path().join("run.ndjson")),
        ..Default::default()
    };
    let summary = run_in_process(&cfg, &BridgeConfig::ephemeral(), &opts).unwrap();
    let log = RunLog::read(&dir.path().join("run.ndjson")).unwrap();

    assert_eq!(summary.steps, cfg.steps());
    assert_eq!(log.records.len(), expected.len());
    for (got, want) in log.records.iter().zip(&expected) {
        assert_eq!(got, want, "t={} ns {}", want.t_ns, want.ns);
    }
    assert_eq!(summary.agents.len(), 3);
    assert!(summary.agents[0].max_formation_error.is_none());
    assert!(summary.agents[1].max_formation_error.is_some());
}

#[test]
fn unknown_agent_is_rejected() {
    let cfg = short(1.0);
    let err = formation_runtime::scenario::run_agent(
        &cfg,
        "nobody",
        &BridgeConfig::ephemeral(),
        &RunOptions::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("nobody"));
}

#[test]
fn simulator_times_out_without_agents() {
    let cfg = short(1.0);
    let server = formation_runtime::bridge::BridgeServer::start(
        BridgeConfig::ephemeral(),
        formation_core::msgs::SchemaRegistry::builtin(),
    )
    .unwrap();
    let opts = RunOptions {
        step_timeout: Duration::from_millis(300),
        ..Default::default()
    };
    let err = formation_runtime::scenario::run_simulator(&cfg, server.config(), &opts).unwrap_err();
    assert!(matches!(err, formation_runtime::scenario::RunError::Timeout { .. }), "{err}");
}
