//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(time, phase, seq)`. Within one millisecond, chain
//! finalization and liveness changes happen first, then deliveries, then
//! node timers, then relay-policy firings, and channel syncs last, so a
//! policy decision taken at a sync instant is included in that sync.
//!
//! Money lives in node wallets and ledger stake accounts; penalties move to
//! the ledger's collected pool. Their sum is checked after every event.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::channel::{ChannelState, OutcomeKind};
use crate::ledger::{Ledger, LedgerError};
use crate::node::{Action, HopStatus, NodeState, NodeView, Outcome, Packet, Timer};
use crate::scenario::{Scenario, ScenarioError, ScriptEvent};
use crate::topology::EdgeParams;
use crate::trace::{Carrier, OutcomeLabel, Trace, TraceAction, TraceEvent};
use crate::{EdgeKey, MessageId, Millis, Money, NodeId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("ledger rejected setup: {0}")]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug)]
enum Ev {
    Finalize,
    Offline(NodeId),
    Online(NodeId),
    Deliver {
        from: NodeId,
        to: NodeId,
        packet: Packet,
    },
    Script(ScriptEvent),
    Timer(NodeId, Timer),
    Report {
        reporter: NodeId,
        target: NodeId,
    },
    Reopen {
        a: NodeId,
        b: NodeId,
        params: EdgeParams,
    },
    Sync(EdgeKey),
}

impl Ev {
    fn phase(&self) -> u8 {
        match self {
            Ev::Finalize | Ev::Offline(_) | Ev::Online(_) => 0,
            Ev::Deliver { .. } => 1,
            Ev::Script(_) | Ev::Report { .. } | Ev::Reopen { .. } => 2,
            Ev::Timer(_, Timer::PolicyFire(_)) => 3,
            Ev::Timer(..) => 2,
            Ev::Sync(_) => 4,
        }
    }
}

#[derive(Clone, Debug)]
struct EdgeRuntime {
    actual_latency: Millis,
    late_rate: Money,
    sync_interval: Millis,
    sync_phase: Millis,
}

#[derive(Clone, Debug)]
struct Bundled {
    from: NodeId,
    to: NodeId,
    msg: MessageId,
    outcome: Outcome,
}

/// Result of a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub ledger: Ledger,
    pub nodes: BTreeMap<NodeId, NodeState>,
    pub wallets: BTreeMap<NodeId, Money>,
    pub initial_total: Money,
    /// Per node, the largest amount paid upstream and not yet recovered
    /// from downstream, over all event boundaries.
    pub max_exposure: BTreeMap<NodeId, Money>,
    /// Uncompensated losses recorded by nodes, per (node, downstream peer).
    pub losses: BTreeMap<(NodeId, NodeId), Money>,
    /// Invariant breaches and rejected operations; empty on a clean run.
    pub violations: Vec<String>,
    pub end_time: Millis,
}

impl RunOutput {
    pub fn total_value(&self) -> Money {
        self.wallets.values().sum::<Money>() + self.ledger.total_value()
    }

    /// Ledger summary written next to the trace.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("end_time\t{}\n", self.end_time));
        s.push_str(&format!("collected\t{}\n", self.ledger.collected()));
        for (v, stake) in self.ledger.stake_accounts() {
            let wallet = self.wallets.get(v).copied().unwrap_or(0);
            s.push_str(&format!("node\t{v}\tstake={stake}\twallet={wallet}\n"));
        }
        for r in self.ledger.severance_log() {
            s.push_str(&format!(
                "severance\t{}\tby={}\tsubmit={}\tfinal={}\n",
                r.edge, r.initiator, r.submit_time, r.finalize_time
            ));
        }
        for ((v, peer), amount) in &self.losses {
            s.push_str(&format!("loss\t{v}\tvia={peer}\t{amount}\n"));
        }
        for v in &self.violations {
            s.push_str(&format!("violation\t{v}\n"));
        }
        s
    }
}

struct Sim {
    now: Millis,
    seq: u64,
    horizon: Millis,
    queue: BTreeMap<(Millis, u8, u64), Ev>,
    ledger: Ledger,
    nodes: BTreeMap<NodeId, NodeState>,
    wallets: BTreeMap<NodeId, Money>,
    offline: BTreeSet<NodeId>,
    edges: BTreeMap<EdgeKey, EdgeRuntime>,
    channels: BTreeMap<EdgeKey, ChannelState>,
    capacities: BTreeMap<EdgeKey, usize>,
    bundles: BTreeMap<EdgeKey, Vec<Bundled>>,
    sync_at: BTreeMap<EdgeKey, Millis>,
    trace: Trace,
    initial_total: Money,
    max_exposure: BTreeMap<NodeId, Money>,
    losses: BTreeMap<(NodeId, NodeId), Money>,
    violations: Vec<String>,
}

/// Guard against scheduling loops; far above any legitimate run.
const MAX_EVENTS: u64 = 200_000;

/// Run `scenario` to quiescence or its horizon, whichever comes first.
/// Only events strictly before the horizon execute.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let mut sim = Sim::new(scenario)?;
    sim.main_loop();
    Ok(sim.finish())
}

impl Sim {
    fn new(sc: &Scenario) -> Result<Sim, SimError> {
        let mut ledger = Ledger::new(1, sc.ledger_params())?;
        let mut nodes = BTreeMap::new();
        let mut wallets = BTreeMap::new();
        for n in &sc.nodes {
            ledger.register_node(n.id.clone(), n.stake)?;
            nodes.insert(
                n.id.clone(),
                NodeState::new(n.id.clone(), n.policy.clone(), n.conduct),
            );
            wallets.insert(n.id.clone(), n.funds);
        }
        let mut sim = Sim {
            now: 0,
            seq: 0,
            horizon: sc.horizon_ms,
            queue: BTreeMap::new(),
            ledger,
            nodes,
            wallets,
            offline: BTreeSet::new(),
            edges: BTreeMap::new(),
            channels: BTreeMap::new(),
            capacities: BTreeMap::new(),
            bundles: BTreeMap::new(),
            sync_at: BTreeMap::new(),
            trace: Trace::new(),
            initial_total: 0,
            max_exposure: BTreeMap::new(),
            losses: BTreeMap::new(),
            violations: Vec::new(),
        };
        for e in &sc.edges {
            sim.ledger.open_edge(&e.a, &e.b, e.params(), 0)?;
            let key = e.key();
            sim.edges.insert(
                key.clone(),
                EdgeRuntime {
                    actual_latency: e.actual_latency(),
                    late_rate: e.late_rate,
                    sync_interval: e.sync_interval_ms,
                    sync_phase: e.sync_phase_ms,
                },
            );
            if let Some(c) = e.capacity {
                sim.capacities.insert(key.clone(), c);
            }
            sim.open_channel(&key);
        }
        for n in &sc.nodes {
            for [from, to] in &n.offline {
                sim.schedule(*from, Ev::Offline(n.id.clone()));
                sim.schedule(*to, Ev::Online(n.id.clone()));
            }
        }
        for ev in &sc.script {
            sim.schedule(ev.at(), Ev::Script(ev.clone()));
        }
        sim.initial_total = sim.total_value();
        Ok(sim)
    }

    fn open_channel(&mut self, key: &EdgeKey) {
        let rt = &self.edges[key];
        let chan = ChannelState::new(
            key.first().clone(),
            key.second().clone(),
            rt.late_rate,
            rt.sync_interval,
            rt.sync_phase,
            self.now,
        )
        .expect("validated sync interval");
        self.channels.insert(key.clone(), chan);
    }

    fn total_value(&self) -> Money {
        self.wallets.values().sum::<Money>() + self.ledger.total_value()
    }

    fn schedule(&mut self, at: Millis, ev: Ev) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        let key = (at.max(self.now), ev.phase(), self.seq);
        self.seq += 1;
        self.queue.insert(key, ev);
    }

    fn emit(&mut self, actors: Vec<NodeId>, action: TraceAction, amount: Option<Money>) {
        self.trace.push(TraceEvent {
            time: self.now,
            actors,
            action,
            amount,
        });
    }

    fn violation(&mut self, what: String) {
        self.violations.push(format!("t={} {what}", self.now));
    }

    fn main_loop(&mut self) {
        let mut executed: u64 = 0;
        while let Some(entry) = self.queue.first_entry() {
            let (time, _, _) = *entry.key();
            if time >= self.horizon {
                break;
            }
            executed += 1;
            if executed > MAX_EVENTS {
                self.violation(format!("event budget of {MAX_EVENTS} exhausted"));
                break;
            }
            let ev = entry.remove();
            self.now = time;
            self.dispatch(ev);
            self.after_event();
        }
    }

    fn after_event(&mut self) {
        let total = self.total_value();
        if total != self.initial_total {
            self.violation(format!(
                "money not conserved: {total} != {}",
                self.initial_total
            ));
        }
        for (id, node) in &self.nodes {
            let exposure: Money = node
                .hops()
                .values()
                .map(|h| (h.paid_upstream - h.received_downstream).max(0))
                .sum();
            let e = self.max_exposure.entry(id.clone()).or_default();
            *e = (*e).max(exposure);
        }
        if let Some(t) = self.ledger.next_finalization() {
            if !self.queue.values().any(|e| matches!(e, Ev::Finalize)) {
                self.schedule(t, Ev::Finalize);
            }
        }
    }

    fn finish(self) -> RunOutput {
        RunOutput {
            trace: self.trace,
            ledger: self.ledger,
            nodes: self.nodes,
            wallets: self.wallets,
            initial_total: self.initial_total,
            max_exposure: self.max_exposure,
            losses: self.losses,
            violations: self.violations,
            end_time: self.now,
        }
    }

    fn with_node<F>(&mut self, id: &NodeId, f: F) -> Vec<Action>
    where
        F: FnOnce(&mut NodeState, &NodeView) -> Result<Vec<Action>, crate::node::NodeError>,
    {
        let Some(mut node) = self.nodes.remove(id) else {
            return Vec::new();
        };
        let view = NodeView {
            now: self.now,
            ledger: &self.ledger,
            channels: &self.channels,
            capacities: &self.capacities,
            funds: self.wallets.get(id).copied().unwrap_or(0),
        };
        let result = f(&mut node, &view);
        self.nodes.insert(id.clone(), node);
        match result {
            Ok(actions) => actions,
            Err(e) => {
                self.violation(format!("{id}: {e}"));
                Vec::new()
            }
        }
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Finalize => self.finalize(),
            Ev::Offline(v) => {
                self.offline.insert(v.clone());
                self.emit(vec![v], TraceAction::NodeOffline, None);
            }
            Ev::Online(v) => {
                self.offline.remove(&v);
                let _ = self.ledger.rejoin(&v);
                self.emit(vec![v], TraceAction::NodeOnline, None);
            }
            Ev::Deliver { from, to, packet } => self.deliver(from, to, packet),
            Ev::Script(s) => self.script(s),
            Ev::Timer(v, timer) => self.timer(v, timer),
            Ev::Report { reporter, target } => self.report(reporter, target),
            Ev::Reopen { a, b, params } => self.reopen(a, b, params),
            Ev::Sync(key) => self.sync(key),
        }
    }

    fn script(&mut self, s: ScriptEvent) {
        match s {
            ScriptEvent::Originate {
                node,
                path,
                payload_len,
                ..
            } => {
                if self.offline.contains(&node) {
                    return;
                }
                let actions = self.with_node(&node, |n, view| {
                    match n.originate(vec![0; payload_len], path, view) {
                        Ok(a) => Ok(a),
                        Err(error) => Ok(vec![Action::OriginateFailed { error }]),
                    }
                });
                self.apply(&node, actions);
            }
            ScriptEvent::Pursue {
                node,
                target,
                paths,
                payload_len,
                ..
            } => {
                let actions = self.with_node(&node, |n, view| {
                    n.pursue_isolation(target, paths, payload_len, view)
                });
                self.apply(&node, actions);
            }
            ScriptEvent::Sever { node, peer, .. } => {
                self.apply(&node, vec![Action::Sever { peer }]);
            }
            ScriptEvent::Adjudicate { .. } => match self.ledger.adjudicate_partition(self.now) {
                Ok(adj) => {
                    let actors = adj.slashed.keys().cloned().collect();
                    let total: u64 = adj.slashed.values().sum();
                    self.emit(
                        actors,
                        TraceAction::Partition {
                            slashed: adj.slashed.len(),
                        },
                        Some(total as Money),
                    );
                }
                Err(e) => self.violation(format!("adjudication: {e}")),
            },
        }
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, packet: Packet) {
        match packet {
            Packet::Forward {
                msg,
                timeout_ms,
                sent_at,
                prepaid,
            } => {
                if self.offline.contains(&to) {
                    self.emit(
                        vec![from, to],
                        TraceAction::Drop {
                            msg: msg.id.clone(),
                        },
                        None,
                    );
                    return;
                }
                self.emit(
                    vec![from.clone(), to.clone()],
                    TraceAction::Receive {
                        msg: msg.id.clone(),
                    },
                    None,
                );
                let actions = self.with_node(&to, |n, view| {
                    n.on_receive_forward(&from, msg, timeout_ms, sent_at, prepaid, view)
                });
                self.apply(&to, actions);
            }
            Packet::Outcome { msg, outcome } => {
                self.outcome_arrives(from, to, msg, outcome, Carrier::Wire);
            }
        }
    }

    fn outcome_arrives(
        &mut self,
        from: NodeId,
        to: NodeId,
        msg: MessageId,
        outcome: Outcome,
        carrier: Carrier,
    ) {
        let label = label(&outcome);
        if self.offline.contains(&to) {
            self.emit(vec![from, to], TraceAction::Drop { msg }, None);
            return;
        }
        self.emit(
            vec![from, to.clone()],
            TraceAction::ReceiveOutcome {
                msg: msg.clone(),
                outcome: label.clone(),
                carrier,
            },
            None,
        );
        let fresh_origin = self.nodes[&to]
            .origins()
            .get(&msg)
            .is_some_and(|o| o.outcome.is_none());
        if fresh_origin {
            self.emit(
                vec![to.clone()],
                TraceAction::Resolved {
                    msg: msg.clone(),
                    outcome: label,
                },
                None,
            );
        }
        let actions = self.with_node(&to, |n, view| n.on_downstream_outcome(&msg, outcome, view));
        self.apply(&to, actions);
    }

    fn timer(&mut self, v: NodeId, timer: Timer) {
        if self.offline.contains(&v) {
            return;
        }
        let actions = match &timer {
            Timer::ResponseDue(id) => {
                let pending = self.nodes[&v].hops().get(id).and_then(|h| {
                    (h.status == HopStatus::AwaitingDownstream
                        && h.downstream_due == Some(self.now))
                    .then(|| h.downstream.clone())
                    .flatten()
                });
                if let Some(down) = pending {
                    self.emit(
                        vec![v.clone(), down],
                        TraceAction::ResponseDue { msg: id.clone() },
                        None,
                    );
                }
                self.with_node(&v, |n, view| n.on_response_due(id, view))
            }
            Timer::PolicyFire(id) => self.with_node(&v, |n, view| n.on_policy_fire(id, view)),
            Timer::OriginDue(id) => {
                let unacked = self.nodes[&v]
                    .origins()
                    .get(id)
                    .filter(|o| !o.acked && o.outcome.is_none())
                    .map(|o| o.msg.path[1].clone());
                if let Some(first) = unacked {
                    self.emit(
                        vec![v.clone(), first],
                        TraceAction::NoAck { msg: id.clone() },
                        None,
                    );
                }
                self.with_node(&v, |n, view| n.on_origin_due(id, view))
            }
        };
        self.apply(&v, actions);
    }

    fn ensure_sync(&mut self, key: &EdgeKey) {
        let Some(chan) = self.channels.get_mut(key) else {
            return;
        };
        chan.align_next_sync(self.now);
        let t = chan.next_sync_time();
        if self.sync_at.get(key) != Some(&t) {
            self.sync_at.insert(key.clone(), t);
            self.schedule(t, Ev::Sync(key.clone()));
        }
    }

    fn sync(&mut self, key: EdgeKey) {
        if self.sync_at.get(&key) != Some(&self.now) {
            return;
        }
        self.sync_at.remove(&key);
        let Some(chan) = self.channels.get_mut(&key) else {
            return;
        };
        let bundled = self.bundles.remove(&key).unwrap_or_default();
        for b in &bundled {
            let _ = chan.discharge(&b.msg, self.now, b.outcome.kind());
        }
        let busy = !bundled.is_empty()
            || chan.lateness_owed(self.now) > 0
            || chan.obligations().any(|o| o.discharged.is_none());
        let offline = &self.offline;
        let nodes = &self.nodes;
        let settlement = chan
            .settle_sync(self.now, |payer, _| {
                !offline.contains(payer)
                    && nodes
                        .get(payer)
                        .is_some_and(|n| n.conduct == crate::node::Conduct::Honest)
            })
            .expect("sync fires on schedule");
        let more = chan.has_obligations();
        if busy {
            let actors = vec![key.first().clone(), key.second().clone()];
            self.emit(actors, TraceAction::Sync, Some(settlement.total_paid()));
        }
        for p in &settlement.payments {
            *self.wallets.get_mut(&p.payer).unwrap() -= p.amount;
            *self.wallets.get_mut(&p.payee).unwrap() += p.amount;
            self.emit(
                vec![p.payer.clone(), p.payee.clone()],
                TraceAction::Pay {
                    msg: p.message.clone(),
                },
                Some(p.amount),
            );
        }
        for d in &settlement.defaults {
            for (msg, amount) in &d.items {
                self.emit(
                    vec![d.payer.clone(), d.payee.clone()],
                    TraceAction::Default { msg: msg.clone() },
                    Some(*amount),
                );
            }
        }
        for b in bundled {
            self.emit(
                vec![b.from.clone(), b.to.clone()],
                TraceAction::SendOutcome {
                    msg: b.msg.clone(),
                    outcome: label(&b.outcome),
                    carrier: Carrier::Sync,
                },
                None,
            );
            self.outcome_arrives(b.from, b.to, b.msg, b.outcome, Carrier::Sync);
        }
        for p in &settlement.payments {
            if let Some(n) = self.nodes.get_mut(&p.payer) {
                n.note_late_paid(&p.message, p.amount);
            }
            if let Some(n) = self.nodes.get_mut(&p.payee) {
                n.note_late_received(&p.message, p.amount);
            }
        }
        for d in &settlement.defaults {
            if self.offline.contains(&d.payee) {
                continue;
            }
            let items = d.items.clone();
            let payer = d.payer.clone();
            let actions = self.with_node(&d.payee, |n, view| {
                n.on_downstream_default(&payer, &items, view)
            });
            self.apply(&d.payee.clone(), actions);
        }
        if more || self.bundles.contains_key(&key) {
            self.ensure_sync(&key);
        }
    }

    fn finalize(&mut self) {
        for i in self.ledger.advance(self.now) {
            let r = &self.ledger.severance_log()[i];
            let edge = r.edge.clone();
            let actors = vec![
                r.initiator.clone(),
                edge.other(&r.initiator).unwrap().clone(),
            ];
            self.emit(
                actors,
                TraceAction::SeverFinalize { edge: edge.clone() },
                None,
            );
            self.channels.remove(&edge);
            self.bundles.remove(&edge);
            self.sync_at.remove(&edge);
        }
    }

    fn report(&mut self, reporter: NodeId, target: NodeId) {
        match self.ledger.report_isolation(&reporter, &target, self.now) {
            Ok(s) => self.emit(
                vec![reporter, target],
                TraceAction::IsolationReport {
                    credited: s.credits.len(),
                },
                Some(s.debit as Money),
            ),
            Err(e) => self.violation(format!("isolation report: {e}")),
        }
    }

    fn reopen(&mut self, a: NodeId, b: NodeId, params: EdgeParams) {
        let key = EdgeKey::new(&a, &b);
        if self.ledger.topology().has_edge(&a, &b) {
            return;
        }
        match self.ledger.open_edge(&a, &b, params, self.now) {
            Ok(()) => {
                self.open_channel(&key);
                self.emit(vec![a, b], TraceAction::EdgeOpen { edge: key }, None);
            }
            Err(e) => self.violation(format!("reopen {key}: {e}")),
        }
    }

    fn sever(&mut self, by: &NodeId, peer: &NodeId) {
        let key = EdgeKey::new(by, peer);
        let proof = if self.ledger.edge_usable(by, peer) {
            match self.ledger.initiate_severance(by, peer, self.now) {
                Ok(p) => {
                    let finalize_at = self.ledger.severance_log()[p.index].finalize_time;
                    self.emit(
                        vec![by.clone(), peer.clone()],
                        TraceAction::SeverInitiate {
                            edge: key.clone(),
                            finalize_at,
                        },
                        Some(self.ledger.params().severance_penalty as Money),
                    );
                    if finalize_at <= self.now {
                        self.finalize();
                    }
                    p
                }
                Err(e) => {
                    self.violation(format!("sever {key}: {e}"));
                    return;
                }
            }
        } else {
            match self.ledger.latest_severance(&key) {
                Some(p) => p,
                None => return,
            }
        };
        if let Some(chan) = self.channels.get_mut(&key) {
            let open: Vec<MessageId> = chan
                .obligations()
                .filter(|o| o.discharged.is_none())
                .map(|o| o.message_id.clone())
                .collect();
            for id in open {
                let _ = chan.discharge(&id, self.now, OutcomeKind::SeveranceProof);
            }
        }
        for (me, other) in [(by, peer), (peer, by)] {
            if self.offline.contains(me) {
                continue;
            }
            let pending: Vec<MessageId> = self.nodes[me]
                .origins()
                .iter()
                .filter(|(_, o)| o.outcome.is_none() && &o.msg.path[1] == other)
                .map(|(id, _)| id.clone())
                .collect();
            let actions = self.with_node(me, |n, view| n.on_severance(other, &proof, view));
            for msg in pending {
                self.emit(
                    vec![me.clone()],
                    TraceAction::Resolved {
                        msg,
                        outcome: OutcomeLabel::Proof(key.clone()),
                    },
                    None,
                );
            }
            self.apply(me, actions);
        }
        self.ensure_sync(&key);
    }

    fn apply(&mut self, actor: &NodeId, actions: Vec<Action>) {
        let mut work: VecDeque<Action> = actions.into();
        while let Some(a) = work.pop_front() {
            self.apply_one(actor, a);
        }
    }

    fn apply_one(&mut self, me: &NodeId, action: Action) {
        match action {
            Action::Send { to, packet } => {
                let key = EdgeKey::new(me, &to);
                let Some(rt) = self.edges.get(&key) else {
                    self.violation(format!("{me} sent over unknown edge {key}"));
                    return;
                };
                let at = self.now + rt.actual_latency;
                if let Packet::Outcome { msg, outcome } = &packet {
                    let is_dest = self.nodes[me]
                        .hops()
                        .get(msg)
                        .is_some_and(|h| h.downstream.is_none());
                    let action = if is_dest && *outcome == Outcome::Response {
                        TraceAction::Respond { msg: msg.clone() }
                    } else {
                        TraceAction::SendOutcome {
                            msg: msg.clone(),
                            outcome: label(outcome),
                            carrier: Carrier::Wire,
                        }
                    };
                    self.emit(vec![me.clone(), to.clone()], action, None);
                    if let Some(chan) = self.channels.get_mut(&key) {
                        let _ = chan.discharge(msg, self.now, outcome.kind());
                    }
                }
                self.schedule(
                    at,
                    Ev::Deliver {
                        from: me.clone(),
                        to,
                        packet,
                    },
                );
            }
            Action::Note { to, msg, outcome } => {
                let key = EdgeKey::new(me, &to);
                if let Some(chan) = self.channels.get_mut(&key) {
                    let _ = chan.discharge(&msg, self.now, outcome.kind());
                }
                self.emit(
                    vec![me.clone(), to.clone()],
                    TraceAction::SendOutcome {
                        msg: msg.clone(),
                        outcome: label(&outcome),
                        carrier: Carrier::Note,
                    },
                    None,
                );
                self.outcome_arrives(me.clone(), to, msg, outcome, Carrier::Note);
            }
            Action::Bundle { to, msg, outcome } => {
                let key = EdgeKey::new(me, &to);
                if !self.channels.contains_key(&key) {
                    self.violation(format!("{me} bundled {msg} on closed channel {key}"));
                    return;
                }
                self.bundles.entry(key.clone()).or_default().push(Bundled {
                    from: me.clone(),
                    to,
                    msg,
                    outcome,
                });
                self.ensure_sync(&key);
            }
            Action::Acknowledge {
                upstream,
                msg,
                due,
                prepaid,
                ..
            } => {
                let key = EdgeKey::new(me, &upstream);
                *self.wallets.get_mut(&upstream).unwrap() -= prepaid;
                *self.wallets.get_mut(me).unwrap() += prepaid;
                if let Some(chan) = self.channels.get_mut(&key) {
                    if let Err(e) = chan.record_forward(msg.clone(), me, self.now, due, prepaid) {
                        self.violation(format!("ack {msg} on {key}: {e}"));
                    }
                }
                if let Some(n) = self.nodes.get_mut(&upstream) {
                    n.on_ack(&msg);
                }
                self.ensure_sync(&key);
            }
            Action::Forwarded {
                msg,
                to,
                upstream_timeout_ms,
                timeout_ms,
                upstream_latency_ms,
            } => {
                if timeout_ms + 2 * upstream_latency_ms != upstream_timeout_ms {
                    self.violation(format!(
                        "{me} forwarded {msg} with {timeout_ms}ms from {upstream_timeout_ms}ms"
                    ));
                }
                self.emit(
                    vec![me.clone(), to],
                    TraceAction::Forward { msg, timeout_ms },
                    None,
                );
            }
            Action::Sever { peer } => self.sever(me, &peer),
            Action::Reopen { peer, params } => {
                let key = EdgeKey::new(me, &peer);
                let at = self
                    .ledger
                    .pending_severance(&key)
                    .map(|p| self.ledger.severance_log()[p.index].finalize_time)
                    .unwrap_or(self.now);
                self.schedule(
                    at,
                    Ev::Reopen {
                        a: me.clone(),
                        b: peer,
                        params,
                    },
                );
            }
            Action::Timer { at, timer } => {
                if at < self.now {
                    self.violation(format!("{me} set a timer in the past ({at})"));
                    return;
                }
                self.schedule(at, Ev::Timer(me.clone(), timer));
            }
            Action::Queued { peer, msg } => {
                self.emit(vec![me.clone(), peer], TraceAction::Queued { msg }, None);
            }
            Action::Loss { peer, msg, amount } => {
                *self.losses.entry((me.clone(), peer.clone())).or_default() += amount;
                self.emit(
                    vec![me.clone(), peer],
                    TraceAction::Loss { msg },
                    Some(amount),
                );
            }
            Action::Originated { msg } => {
                self.emit(
                    vec![me.clone()],
                    TraceAction::Originate {
                        msg: msg.id.clone(),
                        budget_ms: msg.round_trip_budget_ms,
                    },
                    Some(msg.prepaid),
                );
                self.emit(
                    vec![me.clone(), msg.path[1].clone()],
                    TraceAction::Forward {
                        msg: msg.id.clone(),
                        timeout_ms: msg.round_trip_budget_ms,
                    },
                    None,
                );
            }
            Action::OriginateFailed { error } => {
                self.emit(
                    vec![me.clone()],
                    TraceAction::OriginateFailed {
                        reason: error.to_string(),
                    },
                    None,
                );
            }
            Action::ReportIsolation { target, at } => {
                self.schedule(
                    at.max(self.now),
                    Ev::Report {
                        reporter: me.clone(),
                        target,
                    },
                );
            }
            Action::PursuitEnded { target, reason } => {
                let reason = match reason {
                    crate::node::PursuitEnd::Responded => "responded",
                    crate::node::PursuitEnd::Isolated => "isolated",
                    crate::node::PursuitEnd::PathsExhausted => "exhausted",
                };
                self.emit(
                    vec![me.clone()],
                    TraceAction::PursuitEnd {
                        target,
                        reason: reason.into(),
                    },
                    None,
                );
            }
        }
    }
}

fn label(o: &Outcome) -> OutcomeLabel {
    match o {
        Outcome::Response => OutcomeLabel::Response,
        Outcome::Severance(p) => OutcomeLabel::Proof(p.edge.clone()),
    }
}

/// Terminal outcome of one message, as the author experienced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Response,
    SeveranceProof(EdgeKey),
    /// No outcome yet, but every elapsed first-hop sync paid lateness.
    FullyPaidLateness,
    /// The first hop refused lateness it owed the author.
    OriginatorChannelDefault,
    /// The first hop never acknowledged; nothing is owed.
    Unacknowledged,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerdictError {
    #[error("{0} was never originated")]
    UnknownMessage(MessageId),
    #[error("{0} resolved with a proof the ledger does not know")]
    ForgedProof(MessageId),
}

/// Classify the terminal outcome of `msg` from the trace, checking severance
/// proofs against the ledger and the path.
pub fn assert_trichotomy(
    trace: &Trace,
    ledger: &Ledger,
    msg: &MessageId,
) -> Result<Verdict, VerdictError> {
    let evs = trace.events();
    let origin = evs
        .iter()
        .find(|e| matches!(&e.action, TraceAction::Originate { msg: m, .. } if m == msg))
        .ok_or_else(|| VerdictError::UnknownMessage(msg.clone()))?;
    let author = origin.actors[0].clone();
    let first = evs
        .iter()
        .find(|e| {
            matches!(&e.action, TraceAction::Forward { msg: m, .. } if m == msg)
                && e.actors[0] == author
        })
        .map(|e| e.actors[1].clone())
        .ok_or_else(|| VerdictError::UnknownMessage(msg.clone()))?;
    let defaulted = evs.iter().any(|e| {
        matches!(&e.action, TraceAction::Default { msg: m } if m == msg)
            && e.actors == [first.clone(), author.clone()]
    });
    if defaulted {
        return Ok(Verdict::OriginatorChannelDefault);
    }
    let resolved = evs.iter().find_map(|e| match &e.action {
        TraceAction::Resolved { msg: m, outcome } if m == msg && e.actors[0] == author => {
            Some(outcome.clone())
        }
        _ => None,
    });
    match resolved {
        Some(OutcomeLabel::Response) => Ok(Verdict::Response),
        Some(OutcomeLabel::Proof(edge)) => {
            if ledger.severance_log().iter().any(|r| r.edge == edge) {
                Ok(Verdict::SeveranceProof(edge))
            } else {
                Err(VerdictError::ForgedProof(msg.clone()))
            }
        }
        None => {
            let acked = evs.iter().any(|e| {
                matches!(&e.action, TraceAction::Receive { msg: m } if m == msg)
                    && e.actors == [author.clone(), first.clone()]
            });
            if acked {
                Ok(Verdict::FullyPaidLateness)
            } else {
                Ok(Verdict::Unacknowledged)
            }
        }
    }
}

/// Messages authored in a run, in origination order.
pub fn originated(trace: &Trace) -> Vec<MessageId> {
    trace
        .events()
        .iter()
        .filter_map(|e| match &e.action {
            TraceAction::Originate { msg, .. } => Some(msg.clone()),
            _ => None,
        })
        .collect()
}
