// Copyright 2026 the geotx authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! `geotx`: run simulated scenarios, sweep a numeric config key, or re-check
//! an exported history.
//!
//! Exit codes are stable so CI can gate on them alone: 0 for a clean run,
//! 1 when any checker found violations, 2 for configuration or I/O errors.

use clap::{Parser, Subcommand};
use geotx::cluster::history::History;
use geotx::cluster::runner::{run_scenario, RunOutput};
use geotx::config::ScenarioConfig;
use geotx::report::Report;
use geotx::verify;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "geotx",
    about = "Deterministic simulator for geo-distributed transaction protocols",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario: simulate, check the history, write reports.
    Run {
        /// Scenario TOML file.
        config: PathBuf,
        /// Override the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for reports (default: $GEOTX_OUT or the current
        /// directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the full history as JSONL next to the reports.
        #[arg(long)]
        history: bool,
    },
    /// Run the scenario once per value of a numeric config key and write a
    /// summary CSV.
    Sweep {
        /// Scenario TOML file.
        config: PathBuf,
        /// Dotted path of a numeric key, e.g. `network.authority_extra_us`.
        #[arg(long)]
        param: String,
        /// Comma-separated values to sweep over.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the history checkers over an exported JSONL history.
    ///
    /// Session and staleness audits need run context (client attribution,
    /// configured bound) and only run under `run`; this covers the rest.
    Check {
        /// History file in JSONL form, as written by `run --history`.
        history: PathBuf,
    },
}

/// The JSON report envelope: the metrics report plus full checker verdicts.
#[derive(Serialize)]
struct RunReport {
    schema_version: u32,
    report: Report,
    /// Violation counts per checker; zero-valued keys are present so a
    /// missing checker is distinguishable from a passing one.
    violations: BTreeMap<String, usize>,
    /// At most twenty rendered violations, for quick triage.
    violation_samples: Vec<String>,
}

const ALL_CHECKS: [&str; 7] = [
    "visibility",
    "recency",
    "snapshots",
    "sessions",
    "replica-consistency",
    "rcp-monotonic",
    "staleness",
];

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run {
            config,
            seed,
            out,
            history,
        } => cmd_run(&config, seed, out, history),
        Cmd::Sweep {
            config,
            param,
            values,
            seed,
            out,
        } => cmd_sweep(&config, &param, &values, seed, out),
        Cmd::Check { history } => cmd_check(&history),
    };
    ExitCode::from(code)
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("GEOTX_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn fail(msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    2
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("reading {}: {e}", path.display()))?;
    let mut cfg = ScenarioConfig::from_toml_str(&text).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    Ok(cfg)
}

/// Run the full checker suite for a finished run.
fn check_run(cfg: &ScenarioConfig, out: &RunOutput) -> Vec<verify::Violation> {
    // Staleness audits allow one freshness-report interval of slack: a
    // serving node is judged by the last report the router saw.
    let staleness = cfg
        .reads
        .staleness_bound_us
        .map(|b| (b, cfg.replication.rcp_interval_us));
    let mut v = verify::check_all(&out.history, &out.client_of, staleness);
    v.extend(verify::check_replica_consistency(&out.history, &out.logs));
    v
}

fn write_reports(
    dir: &Path,
    name: &str,
    envelope: &RunReport,
    history: Option<&History>,
) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
    let json_path = dir.join(format!("{name}_report.json"));
    let json = serde_json::to_string_pretty(envelope).expect("report serializes");
    std::fs::write(&json_path, json + "\n")
        .map_err(|e| format!("writing {}: {e}", json_path.display()))?;
    let csv_path = dir.join(format!("{name}_report.csv"));
    let csv = format!("{}\n{}\n", Report::csv_header(), envelope.report.csv_row());
    std::fs::write(&csv_path, csv).map_err(|e| format!("writing {}: {e}", csv_path.display()))?;
    if let Some(h) = history {
        let h_path = dir.join(format!("{name}_history.jsonl"));
        std::fs::write(&h_path, h.to_jsonl())
            .map_err(|e| format!("writing {}: {e}", h_path.display()))?;
    }
    Ok(())
}

fn envelope_of(report: Report, violations: &[verify::Violation]) -> RunReport {
    let mut counts: BTreeMap<String, usize> =
        ALL_CHECKS.iter().map(|c| (c.to_string(), 0)).collect();
    for (check, n) in verify::summarize(violations) {
        *counts.entry(check.to_string()).or_insert(0) += n;
    }
    RunReport {
        schema_version: 1,
        report,
        violations: counts,
        violation_samples: violations.iter().take(20).map(|v| v.to_string()).collect(),
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, history: bool) -> u8 {
    let cfg = match load_config(config, seed) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let run = match run_scenario(cfg.clone()) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let violations = check_run(&cfg, &run);
    let envelope = envelope_of(Report::from_run(&run), &violations);
    let dir = out_dir(out);
    if let Err(e) = write_reports(
        &dir,
        &run.name,
        &envelope,
        history.then_some(&run.history),
    ) {
        return fail(e);
    }
    println!(
        "{}: seed {} committed {} aborted {} ({:.1} txn/s), {} violation(s)",
        run.name,
        run.seed,
        envelope.report.committed,
        envelope.report.aborted,
        envelope.report.throughput_per_sec,
        violations.len()
    );
    for v in violations.iter().take(20) {
        eprintln!("  {v}");
    }
    if violations.len() > 20 {
        eprintln!("  ... and {} more", violations.len() - 20);
    }
    if violations.is_empty() {
        0
    } else {
        1
    }
}

/// Set a dotted numeric key in a TOML document, e.g.
/// `network.authority_extra_us = 50`.
fn set_numeric_key(doc: &mut toml::Value, path: &str, value: u64) -> Result<(), String> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, walk) = parts.split_last().ok_or("empty param path")?;
    for p in walk {
        cur = cur
            .get_mut(*p)
            .ok_or_else(|| format!("config has no table `{p}` on path `{path}`"))?;
    }
    let slot = cur
        .as_table_mut()
        .ok_or_else(|| format!("`{path}` does not name a table entry"))?
        .entry(last.to_string())
        .or_insert(toml::Value::Integer(0));
    match slot {
        toml::Value::Integer(_) => {
            *slot = toml::Value::Integer(
                i64::try_from(value).map_err(|_| format!("{value} overflows the key"))?,
            );
            Ok(())
        }
        _ => Err(format!("`{path}` is not a numeric key")),
    }
}

fn cmd_sweep(
    config: &Path,
    param: &str,
    values: &[u64],
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> u8 {
    if values.is_empty() {
        return fail("sweep needs at least one value");
    }
    let text = match std::fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => return fail(format!("reading {}: {e}", config.display())),
    };
    let dir = out_dir(out);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return fail(format!("creating {}: {e}", dir.display()));
    }
    let mut summary = format!("param,value,{}\n", Report::csv_header());
    let mut any_violation = false;
    for &value in values {
        let mut doc: toml::Value = match text.parse() {
            Ok(d) => d,
            Err(e) => return fail(format!("parsing {}: {e}", config.display())),
        };
        if let Err(e) = set_numeric_key(&mut doc, param, value) {
            return fail(e);
        }
        let rendered = toml::to_string(&doc).expect("toml re-serializes");
        let mut cfg = match ScenarioConfig::from_toml_str(&rendered) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        if let Some(s) = seed {
            cfg.scenario.seed = s;
        }
        let run = match run_scenario(cfg.clone()) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let violations = check_run(&cfg, &run);
        any_violation |= !violations.is_empty();
        let envelope = envelope_of(Report::from_run(&run), &violations);
        let name = format!("{}_{}_{}", run.name, param.replace('.', "_"), value);
        if let Err(e) = write_reports(&dir, &name, &envelope, None) {
            return fail(e);
        }
        summary.push_str(&format!("{param},{value},{}\n", envelope.report.csv_row()));
        println!(
            "{param}={value}: {:.1} txn/s, p99 {} us, {} violation(s)",
            envelope.report.throughput_per_sec,
            envelope.report.latency_p99_us,
            violations.len()
        );
    }
    let sum_path = dir.join(format!("sweep_{}.csv", param.replace('.', "_")));
    if let Err(e) = std::fs::write(&sum_path, summary) {
        return fail(format!("writing {}: {e}", sum_path.display()));
    }
    if any_violation {
        1
    } else {
        0
    }
}

fn cmd_check(history: &Path) -> u8 {
    let text = match std::fs::read_to_string(history) {
        Ok(t) => t,
        Err(e) => return fail(format!("reading {}: {e}", history.display())),
    };
    let h = match History::from_jsonl(&text) {
        Ok(h) => h,
        Err(e) => return fail(e),
    };
    let mut violations = verify::check_visibility(&h);
    violations.extend(verify::check_recency(&h));
    violations.extend(verify::check_snapshots(&h));
    violations.extend(verify::check_rcp_monotonic(&h));
    let counts = verify::summarize(&violations);
    if counts.is_empty() {
        println!("{} events: clean", h.events.len());
        return 0;
    }
    for (check, n) in &counts {
        println!("{check}: {n} violation(s)");
    }
    for v in violations.iter().take(20) {
        eprintln!("  {v}");
    }
    1
}
