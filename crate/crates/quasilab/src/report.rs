//! Experiment reports and plot-data tables.
//!
//! Every command emits one JSON report: a digest of the config it ran
//! under, a list of named checks with values and PASS flags, and runtime.
//! Failing checks carry a witness that suffices to replay them. Figure-like
//! output goes to delimiter-separated tables, one file per figure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::Result;

/// One named check inside a report.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: Value,
    pub pass: bool,
    /// replay information for failures (test-function spec, grid location, ...)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Value>,
}

/// Structured outcome of one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
    pub runtime_seconds: f64,
}

/// Builder that accumulates checks while an experiment runs.
pub struct ReportBuilder {
    command: String,
    config_digest: String,
    seed: Option<u64>,
    checks: Vec<CheckResult>,
    started: Instant,
}

impl ReportBuilder {
    pub fn new(command: impl Into<String>, config_digest: impl Into<String>) -> Self {
        ReportBuilder {
            command: command.into(),
            config_digest: config_digest.into(),
            seed: None,
            checks: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn check(&mut self, name: impl Into<String>, value: impl Serialize, pass: bool) {
        self.checks.push(CheckResult {
            name: name.into(),
            value: serde_json::to_value(value).expect("check value serializes"),
            pass,
            witness: None,
        });
    }

    /// Record a check and, when it fails, attach the replay witness.
    pub fn check_with_witness(
        &mut self,
        name: impl Into<String>,
        value: impl Serialize,
        pass: bool,
        witness: impl Serialize,
    ) {
        self.checks.push(CheckResult {
            name: name.into(),
            value: serde_json::to_value(value).expect("check value serializes"),
            pass,
            witness: if pass {
                None
            } else {
                Some(serde_json::to_value(witness).expect("witness serializes"))
            },
        });
    }

    pub fn finish(self) -> Report {
        let pass = self.checks.iter().all(|c| c.pass);
        Report {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            config_digest: self.config_digest,
            seed: self.seed,
            checks: self.checks,
            pass,
            runtime_seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}_report.json", self.command));
        fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

/// Hex SHA-256 of the raw config document. Identical config files yield
/// identical digests, making reports diffable across runs.
pub fn config_digest(config_bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write one figure-like table as comma-separated values with a header row.
pub fn write_plot_table(
    path: &Path,
    columns: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    writeln!(file, "{}", columns.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(file, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_input_sensitive() {
        let a = config_digest(b"{\"a\":1}");
        let b = config_digest(b"{\"a\":1}");
        let c = config_digest(b"{\"a\":2}");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|ch| ch.is_ascii_hexdigit()));
    }

    #[test]
    fn report_pass_iff_all_checks_pass() {
        let mut b = ReportBuilder::new("demo", "deadbeef");
        b.check("first", 1.25, true);
        b.check("second", "ok", true);
        let r = b.finish();
        assert!(r.pass);

        let mut b = ReportBuilder::new("demo", "deadbeef");
        b.check("first", 1.25, true);
        b.check_with_witness("second", 9.0, false, serde_json::json!({"vertex": "v3"}));
        let r = b.finish();
        assert!(!r.pass);
        assert!(r.checks[1].witness.is_some());
        assert!(r.checks[0].witness.is_none());
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut b = ReportBuilder::new("demo", "abc").seed(42);
        b.check("x", vec![1.0, 2.0], true);
        let r = b.finish();
        let text = r.to_json();
        let parsed: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["command"], "demo");
        assert_eq!(parsed["seed"], 42);
        assert_eq!(parsed["checks"][0]["name"], "x");
        assert_eq!(parsed["pass"], true);
    }

    #[test]
    fn plot_table_writes_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tables/gap.csv");
        write_plot_table(&path, &["t", "gap"], &[vec![0.0, 0.1], vec![0.5, 0.2338]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,gap");
        assert_eq!(lines.count(), 2);
        assert!(text.contains("2.338000000000e-1"));
    }
}
