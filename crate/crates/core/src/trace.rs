//! NDJSON traces, run reports recomputed from them, and replay.
//!
//! Line 1 is the header, then one record per tick, then the report.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::comm::Payload;
use crate::executive::Phase;
use crate::mental::Divergence;
use crate::scenario::Scenario;
use crate::sim::{Overrides, Sim, SimError, Terminal, TraceRecord};
use crate::world::{EntityId, PrimitiveAction};

pub const TRACE_VERSION: &str = "tandem-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceHeader {
    pub version: String,
    pub scenario_hash: String,
    pub seeds: BTreeMap<EntityId, u64>,
    pub overrides: Overrides,
    pub robot: EntityId,
    pub humans: Vec<EntityId>,
    /// Source text of the scenario, so the trace replays on its own.
    pub scenario: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub goal_achieved: bool,
    pub ticks_elapsed: u64,
    pub comm_act_count: BTreeMap<String, u64>,
    pub replan_count: u64,
    pub divergences_detected: u64,
    pub divergences_resolved: u64,
    pub human_idle_ticks: u64,
    pub abort_reason: Option<String>,
}

fn divergence_key(d: &Divergence) -> (EntityId, String) {
    let k = d.key();
    (d.agent.clone(), format!("{} {}", k.subject, k.predicate))
}

impl RunReport {
    /// The report is a pure function of the trace.
    pub fn from_trace(header: &TraceHeader, records: &[TraceRecord]) -> RunReport {
        let mut r = RunReport {
            ticks_elapsed: records.len() as u64,
            ..RunReport::default()
        };
        let humans: BTreeSet<&str> = header.humans.iter().map(String::as_str).collect();
        let mut open: BTreeSet<(EntityId, String)> = BTreeSet::new();
        for rec in records {
            for a in &rec.comm_acts {
                *r.comm_act_count
                    .entry(a.payload.kind_name().to_string())
                    .or_insert(0) += 1;
            }
            r.replan_count += rec
                .transitions
                .iter()
                .filter(|t| t.to == Phase::Replanning)
                .count() as u64;
            r.human_idle_ticks += rec
                .events
                .iter()
                .filter(|e| humans.contains(e.actor.as_str()) && e.action == PrimitiveAction::Wait)
                .count() as u64;
            let now: BTreeSet<(EntityId, String)> =
                rec.divergences.iter().map(divergence_key).collect();
            r.divergences_detected += now.difference(&open).count() as u64;
            r.divergences_resolved += open.difference(&now).count() as u64;
            open = now;
        }
        let last = records.last().and_then(|r| r.terminal);
        r.goal_achieved = last == Some(Terminal::Achieved);
        r.abort_reason = match last {
            Some(Terminal::Aborted) => records
                .iter()
                .flat_map(|rec| &rec.transitions)
                .filter(|t| t.to == Phase::Aborted)
                .last()
                .map(|t| t.reason.clone()),
            Some(Terminal::Timeout) | None => Some("TIMEOUT".into()),
            Some(Terminal::Achieved) => None,
        };
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum TraceLine {
    Header(TraceHeader),
    Record(TraceRecord),
    Report(RunReport),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub report: RunReport,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace version `{found}`, expected `{TRACE_VERSION}`")]
    Version { found: String },
    #[error("trace has no header")]
    NoHeader,
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("trace lines serialize")
}

impl Trace {
    pub fn header_for(sim: &Sim) -> TraceHeader {
        TraceHeader {
            version: TRACE_VERSION.into(),
            scenario_hash: sim.scenario.hash.clone(),
            seeds: sim.seeds.clone(),
            overrides: sim.overrides.clone(),
            robot: sim.robot.clone(),
            humans: sim.humans.keys().cloned().collect(),
            scenario: sim.scenario.source.clone(),
        }
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        out.push_str(&line(&TraceLine::Header(self.header.clone())));
        out.push('\n');
        for r in &self.records {
            out.push_str(&line(&TraceLine::Record(r.clone())));
            out.push('\n');
        }
        out.push_str(&line(&TraceLine::Report(self.report.clone())));
        out.push('\n');
        out
    }

    /// Parses a trace. The report line is optional; it is recomputed when
    /// missing.
    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut header = None;
        let mut records = Vec::new();
        let mut report = None;
        for (i, l) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let parsed: TraceLine = serde_json::from_str(l).map_err(|e| TraceError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                TraceLine::Header(h) => {
                    if h.version != TRACE_VERSION {
                        return Err(TraceError::Version { found: h.version });
                    }
                    header = Some(h);
                }
                TraceLine::Record(r) => records.push(r),
                TraceLine::Report(r) => report = Some(r),
            }
        }
        let header = header.ok_or(TraceError::NoHeader)?;
        let report = report.unwrap_or_else(|| RunReport::from_trace(&header, &records));
        Ok(Trace {
            header,
            records,
            report,
        })
    }
}

/// Runs a simulation to its end.
pub fn run_sim(mut sim: Sim) -> Result<Trace, SimError> {
    let header = Trace::header_for(&sim);
    let mut records = Vec::new();
    while sim.terminal.is_none() {
        records.push(sim.step()?);
    }
    let report = RunReport::from_trace(&header, &records);
    Ok(Trace {
        header,
        records,
        report,
    })
}

pub fn run(scenario: Scenario, overrides: Overrides) -> Result<Trace, SimError> {
    run_sim(Sim::new(scenario, overrides)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayOutcome {
    Verified,
    /// First differing record and top-level field (`report` for the summary,
    /// `length` when the runs end at different ticks, `scenarioHash` when the
    /// embedded scenario was edited).
    Mismatch {
        tick: u64,
        field: String,
    },
}

fn first_field_diff(a: &Value, b: &Value) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            keys.into_iter().find(|k| x.get(*k) != y.get(*k)).cloned()
        }
        _ if a != b => Some(String::new()),
        _ => None,
    }
}

/// Feeds the recorded actions and acts of externally driven humans back in.
fn feed(sim: &mut Sim, rec: &TraceRecord) {
    let driven: Vec<EntityId> = sim.interactive().cloned().collect();
    for h in driven {
        if let Some(e) = rec.events.iter().find(|e| e.actor == h) {
            sim.queue_action(&h, e.action.clone());
        }
        for a in rec.comm_acts.iter().filter(|a| a.from == h) {
            let payload: Payload = a.payload.clone();
            sim.queue_act(&h, payload);
        }
    }
}

/// Re-simulates a trace from its embedded scenario and settings, comparing
/// every record as serialized JSON.
pub fn replay(text: &str) -> Result<ReplayOutcome, TraceError> {
    let trace = Trace::parse(text)?;
    let scenario = Scenario::parse(&trace.header.scenario).map_err(SimError::from)?;
    if scenario.hash != trace.header.scenario_hash {
        return Ok(ReplayOutcome::Mismatch {
            tick: 0,
            field: "scenarioHash".into(),
        });
    }
    let mut sim = Sim::new(scenario, trace.header.overrides.clone())?;
    let mut fresh = Vec::new();
    for rec in &trace.records {
        if sim.terminal.is_some() {
            return Ok(ReplayOutcome::Mismatch {
                tick: rec.tick,
                field: "length".into(),
            });
        }
        feed(&mut sim, rec);
        let got = sim.step()?;
        let (a, b) = (
            serde_json::to_value(&got).unwrap(),
            serde_json::to_value(rec).unwrap(),
        );
        if let Some(field) = first_field_diff(&a, &b) {
            return Ok(ReplayOutcome::Mismatch {
                tick: rec.tick,
                field,
            });
        }
        fresh.push(got);
    }
    if sim.terminal.is_none() {
        return Ok(ReplayOutcome::Mismatch {
            tick: sim.tick(),
            field: "length".into(),
        });
    }
    if RunReport::from_trace(&trace.header, &fresh) != trace.report {
        return Ok(ReplayOutcome::Mismatch {
            tick: fresh.last().map_or(0, |r| r.tick),
            field: "report".into(),
        });
    }
    Ok(ReplayOutcome::Verified)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KITCHEN: &str = include_str!("../../../scenarios/kitchen.json");

    fn kitchen(seed: u64) -> Trace {
        let o = Overrides {
            seed: Some(seed),
            human: Some("distracted".into()),
            ..Overrides::default()
        };
        run(Scenario::parse(KITCHEN).unwrap(), o).unwrap()
    }

    fn lines(t: &Trace) -> Vec<String> {
        t.to_ndjson().lines().map(String::from).collect()
    }

    #[test]
    fn layout_is_header_records_report() {
        let t = kitchen(42);
        let l = lines(&t);
        assert_eq!(l.len(), t.records.len() + 2);
        assert!(l[0].starts_with(r#"{"type":"header""#));
        assert!(l.last().unwrap().starts_with(r#"{"type":"report""#));
        assert_eq!(Trace::parse(&t.to_ndjson()).unwrap(), t);
    }

    #[test]
    fn missing_report_is_recomputed() {
        let t = kitchen(42);
        let mut l = lines(&t);
        l.pop();
        assert_eq!(Trace::parse(&l.join("\n")).unwrap().report, t.report);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let t = kitchen(42);
        let mut l = lines(&t);
        l[2] = "{not json".into();
        assert!(matches!(
            Trace::parse(&l.join("\n")),
            Err(TraceError::Parse { line: 3, .. })
        ));
        assert!(matches!(Trace::parse(""), Err(TraceError::NoHeader)));
        let other = lines(&t)[0].replace(TRACE_VERSION, "tandem-trace/0");
        assert!(matches!(
            Trace::parse(&other),
            Err(TraceError::Version { .. })
        ));
    }

    #[test]
    fn tampered_record_is_located() {
        let t = kitchen(42);
        let mut l = lines(&t);
        let i = l
            .iter()
            .position(|x| x.contains(r#""added":["robot isHolding MUG"]"#))
            .unwrap();
        l[i] = l[i].replace("robot isHolding MUG", "BOB isHolding MUG");
        let tick = t.records[i - 1].tick;
        assert_eq!(
            replay(&l.join("\n")).unwrap(),
            ReplayOutcome::Mismatch {
                tick,
                field: "factDelta".into()
            }
        );
    }

    #[test]
    fn edited_scenario_is_caught() {
        let t = kitchen(42);
        let mut l = lines(&t);
        l[0] = l[0].replacen("MUG isOn TABLE", "MUG isOn COUNTER", 1);
        assert_eq!(
            replay(&l.join("\n")).unwrap(),
            ReplayOutcome::Mismatch {
                tick: 0,
                field: "scenarioHash".into()
            }
        );
    }

    #[test]
    fn truncated_and_misreported_traces_fail() {
        let t = kitchen(42);
        let mut l = lines(&t);
        l.remove(l.len() - 2);
        assert!(matches!(
            replay(&l.join("\n")).unwrap(),
            ReplayOutcome::Mismatch { ref field, .. } if field == "length"
        ));
        let mut bad = t.clone();
        bad.report.replan_count += 1;
        assert!(matches!(
            replay(&bad.to_ndjson()).unwrap(),
            ReplayOutcome::Mismatch { ref field, .. } if field == "report"
        ));
    }

    #[test]
    fn seed_is_part_of_the_trace() {
        let mut t = kitchen(42);
        assert_eq!(replay(&t.to_ndjson()).unwrap(), ReplayOutcome::Verified);
        t.header.overrides.seed = Some(43);
        assert!(matches!(
            replay(&t.to_ndjson()).unwrap(),
            ReplayOutcome::Mismatch { .. }
        ));
    }

    #[test]
    fn divergences_are_counted_once_per_episode() {
        let t = kitchen(42);
        assert!(t.report.divergences_detected >= 1);
        assert_eq!(t.report.divergences_detected, t.report.divergences_resolved);
    }
}
