//! Trace records and the tab-separated trace file format.
//!
//! One event per line: `time<TAB>actors<TAB>action<TAB>amount`, actors
//! joined by `>`, amount `-` when not applicable.

use std::fmt;

use crate::{EdgeKey, MessageId, Millis, Money, NodeId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutcomeLabel {
    Response,
    Proof(EdgeKey),
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeLabel::Response => f.write_str("response"),
            OutcomeLabel::Proof(e) => write!(f, "proof {e}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Carrier {
    /// Travelled over the edge as a message.
    Wire,
    /// Handed over outside a sync, as a channel note.
    Note,
    /// Included in a sync.
    Sync,
}

impl fmt::Display for Carrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Carrier::Wire => "wire",
            Carrier::Note => "note",
            Carrier::Sync => "sync",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceAction {
    /// actors: author
    Originate {
        msg: MessageId,
        budget_ms: Millis,
    },
    OriginateFailed {
        reason: String,
    },
    /// actors: sender > receiver
    Forward {
        msg: MessageId,
        timeout_ms: Millis,
    },
    /// actors: sender > receiver
    Receive {
        msg: MessageId,
    },
    /// actors: sender > receiver (receiver offline)
    Drop {
        msg: MessageId,
    },
    /// actors: destination > upstream
    Respond {
        msg: MessageId,
    },
    /// actors: sender > receiver
    SendOutcome {
        msg: MessageId,
        outcome: OutcomeLabel,
        carrier: Carrier,
    },
    /// actors: sender > receiver
    ReceiveOutcome {
        msg: MessageId,
        outcome: OutcomeLabel,
        carrier: Carrier,
    },
    /// actors: author
    Resolved {
        msg: MessageId,
        outcome: OutcomeLabel,
    },
    /// actors: relayer > downstream
    ResponseDue {
        msg: MessageId,
    },
    /// actors: author > first hop
    NoAck {
        msg: MessageId,
    },
    /// actors: both endpoints; amount is the total paid
    Sync,
    /// actors: payer > payee
    Pay {
        msg: MessageId,
    },
    /// actors: payer > payee
    Default {
        msg: MessageId,
    },
    /// actors: node > downstream
    Loss {
        msg: MessageId,
    },
    /// actors: node > downstream
    Queued {
        msg: MessageId,
    },
    /// actors: initiator > other endpoint
    SeverInitiate {
        edge: EdgeKey,
        finalize_at: Millis,
    },
    SeverFinalize {
        edge: EdgeKey,
    },
    EdgeOpen {
        edge: EdgeKey,
    },
    /// actors: reporter > target
    IsolationReport {
        credited: usize,
    },
    PursuitEnd {
        target: NodeId,
        reason: String,
    },
    Partition {
        slashed: usize,
    },
    NodeOffline,
    NodeOnline,
}

impl fmt::Display for TraceAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TraceAction::*;
        match self {
            Originate { msg, budget_ms } => write!(f, "originate {msg} budget={budget_ms}"),
            OriginateFailed { reason } => write!(f, "originate-failed {reason}"),
            Forward { msg, timeout_ms } => write!(f, "forward {msg} timeout={timeout_ms}"),
            Receive { msg } => write!(f, "receive {msg}"),
            Drop { msg } => write!(f, "drop {msg}"),
            Respond { msg } => write!(f, "respond {msg}"),
            SendOutcome {
                msg,
                outcome,
                carrier,
            } => write!(f, "send-outcome {msg} {outcome} via {carrier}"),
            ReceiveOutcome {
                msg,
                outcome,
                carrier,
            } => {
                write!(f, "receive-outcome {msg} {outcome} via {carrier}")
            }
            Resolved { msg, outcome } => write!(f, "resolved {msg} {outcome}"),
            ResponseDue { msg } => write!(f, "response-due {msg}"),
            NoAck { msg } => write!(f, "no-ack {msg}"),
            Sync => f.write_str("sync"),
            Pay { msg } => write!(f, "pay {msg}"),
            Default { msg } => write!(f, "default {msg}"),
            Loss { msg } => write!(f, "loss {msg}"),
            Queued { msg } => write!(f, "queued {msg}"),
            SeverInitiate { edge, finalize_at } => {
                write!(f, "sever-initiate {edge} final={finalize_at}")
            }
            SeverFinalize { edge } => write!(f, "sever-finalize {edge}"),
            EdgeOpen { edge } => write!(f, "edge-open {edge}"),
            IsolationReport { credited } => write!(f, "isolation-report credited={credited}"),
            PursuitEnd { target, reason } => write!(f, "pursuit-end {target} {reason}"),
            Partition { slashed } => write!(f, "partition slashed={slashed}"),
            NodeOffline => f.write_str("offline"),
            NodeOnline => f.write_str("online"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: Millis,
    pub actors: Vec<NodeId>,
    pub action: TraceAction,
    pub amount: Option<Money>,
}

impl TraceEvent {
    pub fn new(time: Millis, actors: Vec<NodeId>, action: TraceAction) -> Self {
        TraceEvent {
            time,
            actors,
            action,
            amount: None,
        }
    }

    pub fn with_amount(mut self, amount: Money) -> Self {
        self.amount = Some(amount);
        self
    }

    pub fn involves(&self, v: &NodeId) -> bool {
        self.actors.contains(v)
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let actors: Vec<&str> = self.actors.iter().map(NodeId::as_str).collect();
        write!(f, "{}\t{}\t{}\t", self.time, actors.join(">"), self.action)?;
        match self.amount {
            Some(a) => write!(f, "{a}"),
            None => f.write_str("-"),
        }
    }
}

/// Ordered record of a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, ev: TraceEvent) {
        debug_assert!(self.events.last().is_none_or(|l| l.time <= ev.time));
        self.events.push(ev);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The trace file contents; every line is newline terminated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        s
    }
}
