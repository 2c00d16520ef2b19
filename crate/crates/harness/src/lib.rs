//! Scenario runner, adversary suites and the `kas-auth` command line.

pub mod attack;
pub mod scenario;

pub use attack::{attack, replay_into, start, AttackReport, AttackSuite, Finding};
pub use scenario::{run_scenario, RunReport, Scenario, ScenarioError, SessionPlan};

/// Directory of the scenarios shipped with the harness.
pub fn bundled_scenarios_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// Every bundled scenario file, sorted by name.
pub fn bundled_scenarios() -> std::io::Result<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = std::fs::read_dir(bundled_scenarios_dir())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    out.sort();
    Ok(out)
}
