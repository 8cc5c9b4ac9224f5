//! Scenario runner for the panel recycling ledger: loads a scenario, drives
//! the monthly tick loop for one of the three funding solutions, and writes
//! the chain export plus a report.

pub mod audit;
pub mod engine;
pub mod report;
pub mod scenario;

use std::fs::File;
use std::path::Path;

pub use audit::{audit_export, AuditReport};
pub use engine::{run, RunOutput, SimError};
pub use report::SimReport;
pub use scenario::{load_scenario, Scenario, ScenarioError, Solution};

pub const CHAIN_FILE: &str = "chain.json";
pub const REPORT_FILE: &str = "report.json";

/// Write `chain.json` and `report.json` into `dir`, creating it if needed.
pub fn write_run(out: &RunOutput, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let chain = File::create(dir.join(CHAIN_FILE))?;
    panelchain::ledger::write_chain_export(&out.chain, chain)?;
    std::fs::write(dir.join(REPORT_FILE), out.report.to_json())?;
    Ok(())
}

pub fn read_report(dir: &Path) -> anyhow::Result<SimReport> {
    let text = std::fs::read_to_string(dir.join(REPORT_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

