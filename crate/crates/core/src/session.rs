//! Transport-independent session protocol for driving one human from a
//! client. Messages are JSON objects tagged by `type`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::comm::{CommAct, Payload, TaskSummary};
use crate::executive::{Phase, Transition};
use crate::facts::{Fact, FactBase};
use crate::htn::{PlanResponse, SharedPlan};
use crate::mental::BeliefDigest;
use crate::scenario::Scenario;
use crate::sim::{FactDelta, Overrides, Sim, Terminal, TraceRecord};
use crate::trace::{RunReport, Trace, TraceHeader};
use crate::world::{EntityId, Event, GridWorld, PrimitiveAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Mode {
    #[default]
    Stepped,
    FreeRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", deny_unknown_fields)]
pub enum ClientMsg {
    Start {
        /// Human to drive; defaults to the first one.
        #[serde(default)]
        human: Option<EntityId>,
        #[serde(default)]
        mode: Mode,
        #[serde(default)]
        seed: Option<u64>,
    },
    HumanAction {
        action: PrimitiveAction,
    },
    PlanResponse {
        response: PlanResponse,
    },
    Answer {
        facts: Vec<Fact>,
    },
    SetMode {
        mode: Mode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ServerMsg {
    #[serde(rename_all = "camelCase")]
    Snapshot {
        tick: u64,
        human: EntityId,
        mode: Mode,
        world: GridWorld,
        facts: Vec<String>,
        legal_actions: Vec<PrimitiveAction>,
        beliefs: BTreeMap<EntityId, BeliefDigest>,
    },
    #[serde(rename_all = "camelCase")]
    StateDelta {
        tick: u64,
        world: GridWorld,
        events: Vec<Event>,
        fact_delta: FactDelta,
        phase: Option<Phase>,
        transitions: Vec<Transition>,
        legal_actions: Vec<PrimitiveAction>,
    },
    #[serde(rename_all = "camelCase")]
    BeliefDiff {
        tick: u64,
        agent: EntityId,
        added: Vec<String>,
        removed: Vec<String>,
        digest: BeliefDigest,
    },
    #[serde(rename_all = "camelCase")]
    PlanProposal {
        tick: u64,
        plan_id: String,
        summaries: Vec<TaskSummary>,
        plan: SharedPlan,
    },
    CommAct {
        act: CommAct,
    },
    Posterior {
        tick: u64,
        probs: BTreeMap<String, f64>,
    },
    Metrics {
        report: RunReport,
    },
    Terminal {
        outcome: Terminal,
        report: RunReport,
    },
    Error {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ProtocolError {
    pub code: &'static str,
    pub message: String,
}

impl ProtocolError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        ProtocolError {
            code,
            message: message.into(),
        }
    }

    pub fn to_msg(&self) -> ServerMsg {
        ServerMsg::Error {
            code: self.code.to_string(),
            message: self.message.clone(),
        }
    }
}

struct Live {
    sim: Sim,
    human: EntityId,
    header: TraceHeader,
    records: Vec<TraceRecord>,
    digests: BTreeMap<EntityId, BeliefDigest>,
}

/// One client's session. Input is queued for the next tick; stepped mode
/// advances one tick per `humanAction`, free-run plays to the end with the
/// human waiting whenever nothing is queued.
pub struct Session {
    scenario: Scenario,
    mode: Mode,
    live: Option<Live>,
}

fn legal(sim: &Sim, human: &str) -> Vec<PrimitiveAction> {
    if sim.terminal.is_some() {
        return Vec::new();
    }
    sim.world
        .legal_actions(human)
        .map(|s| s.into_iter().collect())
        .unwrap_or_default()
}

fn strings(facts: &FactBase) -> Vec<String> {
    facts.strings()
}

impl Session {
    pub fn new(scenario: Scenario) -> Self {
        Session {
            scenario,
            mode: Mode::Stepped,
            live: None,
        }
    }

    /// Parses and handles one raw message.
    pub fn handle_text(&mut self, text: &str) -> Result<Vec<ServerMsg>, ProtocolError> {
        let msg: ClientMsg = serde_json::from_str(text)
            .map_err(|e| ProtocolError::new("bad_message", e.to_string()))?;
        self.handle(msg)
    }

    pub fn handle(&mut self, msg: ClientMsg) -> Result<Vec<ServerMsg>, ProtocolError> {
        match msg {
            ClientMsg::Start { human, mode, seed } => self.start(human, mode, seed),
            ClientMsg::SetMode { mode } => {
                self.mode = mode;
                self.live()?;
                self.advance_free()
            }
            ClientMsg::HumanAction { action } => {
                let live = self.live_open()?;
                let human = live.human.clone();
                live.sim.queue_action(&human, action);
                match self.mode {
                    Mode::Stepped => self.advance(),
                    Mode::FreeRun => self.advance_free(),
                }
            }
            ClientMsg::PlanResponse { response } => {
                let live = self.live_open()?;
                let current = live.sim.plan().map(|p| p.id.clone());
                if current.as_deref() != Some(response.plan_id()) {
                    return Err(ProtocolError::new(
                        "stale_plan",
                        format!("no proposal `{}` is open", response.plan_id()),
                    ));
                }
                let payload = match response {
                    PlanResponse::Accept { plan_id } => Payload::AcceptPlan { plan_id },
                    PlanResponse::Reject {
                        plan_id,
                        constraints,
                    } => Payload::RejectPlan {
                        plan_id,
                        constraints,
                    },
                };
                let human = live.human.clone();
                live.sim.queue_act(&human, payload);
                Ok(Vec::new())
            }
            ClientMsg::Answer { facts } => {
                let live = self.live_open()?;
                let human = live.human.clone();
                live.sim.queue_act(&human, Payload::Answer { facts });
                Ok(Vec::new())
            }
        }
    }

    fn live(&mut self) -> Result<&mut Live, ProtocolError> {
        self.live
            .as_mut()
            .ok_or_else(|| ProtocolError::new("not_started", "send start first"))
    }

    fn live_open(&mut self) -> Result<&mut Live, ProtocolError> {
        let live = self.live()?;
        if live.sim.terminal.is_some() {
            return Err(ProtocolError::new("terminal", "the run has ended"));
        }
        Ok(live)
    }

    fn start(
        &mut self,
        human: Option<EntityId>,
        mode: Mode,
        seed: Option<u64>,
    ) -> Result<Vec<ServerMsg>, ProtocolError> {
        if self.live.is_some() {
            return Err(ProtocolError::new(
                "already_started",
                "session already started",
            ));
        }
        let overrides = Overrides {
            human: Some("interactive".into()),
            seed,
            ..Overrides::default()
        };
        let sim = Sim::new(self.scenario.clone(), overrides)
            .map_err(|e| ProtocolError::new("scenario", e.to_string()))?;
        let human =
            match human {
                Some(h) if sim.humans.contains_key(&h) => h,
                Some(h) => {
                    return Err(ProtocolError::new(
                        "unknown_human",
                        format!("`{h}` is not a human"),
                    ))
                }
                None => sim.humans.keys().next().cloned().ok_or_else(|| {
                    ProtocolError::new("no_human", "scenario has no human to drive")
                })?,
            };
        self.mode = mode;
        let header = Trace::header_for(&sim);
        let digests = sim
            .mentals
            .iter()
            .map(|(k, m)| (k.clone(), m.digest()))
            .collect();
        let snapshot = ServerMsg::Snapshot {
            tick: sim.tick(),
            human: human.clone(),
            mode,
            world: sim.world.clone(),
            facts: strings(&sim.facts),
            legal_actions: legal(&sim, &human),
            beliefs: sim
                .mentals
                .iter()
                .map(|(k, m)| (k.clone(), m.digest()))
                .collect(),
        };
        self.live = Some(Live {
            sim,
            human,
            header,
            records: Vec::new(),
            digests,
        });
        let mut out = vec![snapshot];
        // A run that ends on its first tick whatever the human does is
        // played right away.
        let probe = {
            let live = self.live.as_ref().unwrap();
            let mut sim = live.sim.clone();
            sim.step().ok().and_then(|_| sim.terminal)
        };
        if probe.is_some() || mode == Mode::FreeRun {
            out.extend(if mode == Mode::FreeRun {
                self.advance_free()?
            } else {
                self.advance()?
            });
        }
        Ok(out)
    }

    fn advance(&mut self) -> Result<Vec<ServerMsg>, ProtocolError> {
        let live = self.live()?;
        if live.sim.terminal.is_some() {
            return Ok(Vec::new());
        }
        let rec = live
            .sim
            .step()
            .map_err(|e| ProtocolError::new("simulation", e.to_string()))?;
        let mut out = vec![ServerMsg::StateDelta {
            tick: rec.tick,
            world: live.sim.world.clone(),
            events: rec.events.clone(),
            fact_delta: rec.fact_delta.clone(),
            phase: rec.phase,
            transitions: rec.transitions.clone(),
            legal_actions: legal(&live.sim, &live.human),
        }];
        for (agent, d) in &rec.belief_digests {
            let old = live.digests.get(agent);
            if old == Some(d) {
                continue;
            }
            let before: BTreeSet<&String> =
                old.map(|o| o.facts.iter().collect()).unwrap_or_default();
            let after: BTreeSet<&String> = d.facts.iter().collect();
            out.push(ServerMsg::BeliefDiff {
                tick: rec.tick,
                agent: agent.clone(),
                added: after.difference(&before).map(|s| (*s).clone()).collect(),
                removed: before.difference(&after).map(|s| (*s).clone()).collect(),
                digest: d.clone(),
            });
        }
        live.digests = rec.belief_digests.clone();
        for act in &rec.comm_acts {
            out.push(ServerMsg::CommAct { act: act.clone() });
            if let (Payload::ProposePlan { plan_id, summaries }, Some(plan)) =
                (&act.payload, live.sim.plan())
            {
                if act.to == live.human && plan.id == *plan_id {
                    out.push(ServerMsg::PlanProposal {
                        tick: rec.tick,
                        plan_id: plan_id.clone(),
                        summaries: summaries.clone(),
                        plan: plan.clone(),
                    });
                }
            }
        }
        if let Some(p) = &rec.posterior {
            out.push(ServerMsg::Posterior {
                tick: rec.tick,
                probs: p.clone(),
            });
        }
        live.records.push(rec);
        let mut report = RunReport::from_trace(&live.header, &live.records);
        if live.sim.terminal.is_none() {
            // Still running: nothing has been aborted yet.
            report.abort_reason = None;
        }
        out.push(ServerMsg::Metrics {
            report: report.clone(),
        });
        if let Some(outcome) = live.sim.terminal {
            out.push(ServerMsg::Terminal { outcome, report });
        }
        Ok(out)
    }

    fn advance_free(&mut self) -> Result<Vec<ServerMsg>, ProtocolError> {
        let mut out = Vec::new();
        while self.mode == Mode::FreeRun && self.live()?.sim.terminal.is_none() {
            out.extend(self.advance()?);
        }
        Ok(out)
    }

    pub fn is_terminal(&self) -> bool {
        self.live.as_ref().is_some_and(|l| l.sim.terminal.is_some())
    }

    /// The trace so far.
    pub fn trace(&self) -> Option<Trace> {
        self.live.as_ref().map(|l| Trace {
            header: l.header.clone(),
            records: l.records.clone(),
            report: RunReport::from_trace(&l.header, &l.records),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{replay, run, ReplayOutcome};

    const KITCHEN: &str = include_str!("../../../scenarios/kitchen.json");
    const TRIVIAL: &str = include_str!("../../../scenarios/trivial.json");

    fn session(src: &str) -> Session {
        Session::new(Scenario::parse(src).unwrap())
    }

    fn send(s: &mut Session, v: serde_json::Value) -> Result<Vec<ServerMsg>, ProtocolError> {
        s.handle_text(&v.to_string())
    }

    fn wait() -> serde_json::Value {
        serde_json::json!({"type": "humanAction", "action": {"kind": "wait"}})
    }

    #[test]
    fn messages_before_start_are_refused() {
        let mut s = session(KITCHEN);
        assert_eq!(send(&mut s, wait()).unwrap_err().code, "not_started");
        assert_eq!(s.handle_text("{}").unwrap_err().code, "bad_message");
        let extra = serde_json::json!({"type": "start", "bogus": 1});
        assert_eq!(send(&mut s, extra).unwrap_err().code, "bad_message");
    }

    #[test]
    fn start_sends_a_snapshot_once() {
        let mut s = session(KITCHEN);
        let out = send(&mut s, serde_json::json!({"type": "start", "seed": 42})).unwrap();
        let [ServerMsg::Snapshot {
            tick,
            human,
            legal_actions,
            ..
        }] = &out[..]
        else {
            panic!("{out:?}")
        };
        assert_eq!((*tick, human.as_str()), (0, "BOB"));
        assert!(legal_actions.contains(&PrimitiveAction::Wait));
        let again = send(&mut s, serde_json::json!({"type": "start"}));
        assert_eq!(again.unwrap_err().code, "already_started");
        let who = session(KITCHEN).handle(ClientMsg::Start {
            human: Some("NOBODY".into()),
            mode: Mode::Stepped,
            seed: None,
        });
        assert_eq!(who.unwrap_err().code, "unknown_human");
    }

    #[test]
    fn stepped_mode_advances_one_tick_per_action() {
        let mut s = session(KITCHEN);
        send(&mut s, serde_json::json!({"type": "start"})).unwrap();
        let out = send(&mut s, wait()).unwrap();
        assert!(matches!(out[0], ServerMsg::StateDelta { tick: 0, .. }));
        assert!(out
            .iter()
            .any(|m| matches!(m, ServerMsg::PlanProposal { .. })));
        let Some(ServerMsg::Metrics { report }) = out.last() else {
            panic!("{out:?}")
        };
        assert_eq!(report.abort_reason, None);
        let out = send(&mut s, wait()).unwrap();
        assert!(matches!(out[0], ServerMsg::StateDelta { tick: 1, .. }));
    }

    #[test]
    fn responses_must_name_the_open_plan() {
        let mut s = session(KITCHEN);
        send(&mut s, serde_json::json!({"type": "start"})).unwrap();
        send(&mut s, wait()).unwrap();
        let stale = serde_json::json!({
            "type": "planResponse",
            "response": {"kind": "accept", "planId": "nope"}
        });
        assert_eq!(send(&mut s, stale).unwrap_err().code, "stale_plan");
        let ok = serde_json::json!({
            "type": "planResponse",
            "response": {"kind": "accept", "planId": "serve-plan-1"}
        });
        assert!(send(&mut s, ok).unwrap().is_empty());
        let out = send(&mut s, wait()).unwrap();
        let accepted = out.iter().any(|m| {
            matches!(m, ServerMsg::CommAct { act } if matches!(act.payload, Payload::AcceptPlan { .. }))
        });
        assert!(accepted);
    }

    #[test]
    fn trivial_scenario_finishes_on_start() {
        let mut s = session(TRIVIAL);
        let out = send(&mut s, serde_json::json!({"type": "start"})).unwrap();
        assert!(matches!(
            out.last(),
            Some(ServerMsg::Terminal {
                outcome: Terminal::Achieved,
                ..
            })
        ));
        assert!(s.is_terminal());
        assert_eq!(send(&mut s, wait()).unwrap_err().code, "terminal");
    }

    #[test]
    fn free_run_plays_to_the_end_and_replays() {
        let mut s = session(KITCHEN);
        let out = send(
            &mut s,
            serde_json::json!({"type": "start", "mode": "freeRun"}),
        )
        .unwrap();
        assert!(matches!(out.last(), Some(ServerMsg::Terminal { .. })));
        let t = s.trace().unwrap();
        assert_eq!(replay(&t.to_ndjson()).unwrap(), ReplayOutcome::Verified);
    }

    /// Driving the human by hand with the moves a simulated cooperative
    /// human made reproduces the headless run tick for tick.
    #[test]
    fn scripted_session_matches_headless_run() {
        let o = Overrides {
            seed: Some(42),
            human: Some("cooperative".into()),
            ..Overrides::default()
        };
        let headless = run(Scenario::parse(KITCHEN).unwrap(), o).unwrap();
        let mut s = session(KITCHEN);
        send(&mut s, serde_json::json!({"type": "start", "seed": 42})).unwrap();
        for rec in &headless.records {
            for a in rec.comm_acts.iter().filter(|a| a.from == "BOB") {
                let msg = match &a.payload {
                    Payload::AcceptPlan { plan_id } => ClientMsg::PlanResponse {
                        response: PlanResponse::Accept {
                            plan_id: plan_id.clone(),
                        },
                    },
                    Payload::RejectPlan {
                        plan_id,
                        constraints,
                    } => ClientMsg::PlanResponse {
                        response: PlanResponse::Reject {
                            plan_id: plan_id.clone(),
                            constraints: constraints.clone(),
                        },
                    },
                    Payload::Answer { facts } => ClientMsg::Answer {
                        facts: facts.clone(),
                    },
                    other => panic!("unexpected act {other:?}"),
                };
                s.handle(msg).unwrap();
            }
            let action = rec
                .events
                .iter()
                .find(|e| e.actor == "BOB")
                .unwrap()
                .action
                .clone();
            s.handle(ClientMsg::HumanAction { action }).unwrap();
        }
        assert!(s.is_terminal());
        let interactive = s.trace().unwrap();
        assert_eq!(interactive.records, headless.records);
        assert_eq!(interactive.report, headless.report);
    }
}
