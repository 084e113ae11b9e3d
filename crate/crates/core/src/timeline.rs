//! Column-per-actor timeline tables.
//!
//! Only rows whose actors are all rendered columns appear. Single-actor rows
//! ("Send request", "Forward request", "Response due", ...) sit in their
//! actor's column; channel rows (`<- sync, Alice pays + edge ->`) are
//! centred between the two endpoints' columns.

use std::collections::BTreeMap;

use crate::trace::{Carrier, OutcomeLabel, Trace, TraceAction, TraceEvent};
use crate::{MessageId, Millis, NodeId};

const TIME_WIDTH: usize = 8;
const COL_WIDTH: usize = 18;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Cell {
    Single(NodeId, String),
    Pair(NodeId, NodeId, String),
}

#[derive(Default)]
struct SyncRow {
    pair: Option<(NodeId, NodeId)>,
    payers: Vec<NodeId>,
    refusers: Vec<NodeId>,
    edge: bool,
}

fn push_unique(v: &mut Vec<NodeId>, x: &NodeId) {
    if !v.contains(x) {
        v.push(x.clone());
    }
}

/// Rows in trace order for the given columns.
fn rows(trace: &Trace, columns: &[NodeId]) -> Vec<(Millis, Cell)> {
    let shown = |v: &NodeId| columns.contains(v);
    let mut authors: BTreeMap<MessageId, NodeId> = BTreeMap::new();
    let mut out: Vec<(Millis, Cell)> = Vec::new();
    // Channel activity at one instant, keyed by endpoint pair.
    let mut syncs: BTreeMap<(Millis, NodeId, NodeId), (usize, SyncRow)> = BTreeMap::new();
    let pair_key = |e: &TraceEvent| {
        let (a, b) = (e.actors[0].clone(), e.actors[1].clone());
        if a <= b {
            (e.time, a, b)
        } else {
            (e.time, b, a)
        }
    };
    for e in trace.events() {
        match &e.action {
            TraceAction::Originate { msg, .. } => {
                authors.insert(msg.clone(), e.actors[0].clone());
                if shown(&e.actors[0]) {
                    out.push((
                        e.time,
                        Cell::Single(e.actors[0].clone(), "Send request".into()),
                    ));
                }
            }
            TraceAction::Forward { msg, .. } => {
                let relayer = &e.actors[0];
                if authors.get(msg) != Some(relayer) && shown(relayer) {
                    out.push((
                        e.time,
                        Cell::Single(relayer.clone(), "Forward request".into()),
                    ));
                }
            }
            TraceAction::ResponseDue { .. } if shown(&e.actors[0]) => {
                out.push((
                    e.time,
                    Cell::Single(e.actors[0].clone(), "Response due".into()),
                ));
            }
            TraceAction::Respond { .. } if shown(&e.actors[0]) => {
                out.push((e.time, Cell::Single(e.actors[0].clone(), "Respond".into())));
            }
            TraceAction::SendOutcome {
                outcome, carrier, ..
            } => match carrier {
                Carrier::Wire if shown(&e.actors[0]) => {
                    let text = match outcome {
                        OutcomeLabel::Response => "Relay response",
                        OutcomeLabel::Proof(_) => "Relay proof",
                    };
                    out.push((e.time, Cell::Single(e.actors[0].clone(), text.into())));
                }
                Carrier::Note if shown(&e.actors[0]) && shown(&e.actors[1]) => {
                    let what = match outcome {
                        OutcomeLabel::Response => "response",
                        OutcomeLabel::Proof(_) => "proof of edge",
                    };
                    out.push((
                        e.time,
                        Cell::Pair(
                            e.actors[0].clone(),
                            e.actors[1].clone(),
                            format!("<- {} sends {what} ->", e.actors[0]),
                        ),
                    ));
                }
                Carrier::Sync => {
                    if let Some((_, row)) = syncs.get_mut(&pair_key(e)) {
                        row.edge |= matches!(outcome, OutcomeLabel::Proof(_));
                    }
                }
                _ => {}
            },
            TraceAction::ReceiveOutcome {
                msg,
                outcome,
                carrier: Carrier::Wire,
            } if authors.get(msg) == Some(&e.actors[1]) && shown(&e.actors[1]) => {
                let text = match outcome {
                    OutcomeLabel::Response => "Receive response",
                    OutcomeLabel::Proof(_) => "Receive proof",
                };
                out.push((e.time, Cell::Single(e.actors[1].clone(), text.into())));
            }
            TraceAction::Sync => {
                let key = pair_key(e);
                let idx = out.len();
                out.push((
                    e.time,
                    Cell::Pair(key.1.clone(), key.2.clone(), String::new()),
                ));
                let row = SyncRow {
                    pair: Some((key.1.clone(), key.2.clone())),
                    ..SyncRow::default()
                };
                syncs.insert(key, (idx, row));
            }
            TraceAction::Pay { .. } => {
                if let Some((_, row)) = syncs.get_mut(&pair_key(e)) {
                    push_unique(&mut row.payers, &e.actors[0]);
                }
            }
            TraceAction::Default { .. } => {
                if let Some((_, row)) = syncs.get_mut(&pair_key(e)) {
                    push_unique(&mut row.refusers, &e.actors[0]);
                }
            }
            _ => {}
        }
    }
    for (idx, row) in syncs.into_values() {
        let mut parts: Vec<String> = row.payers.iter().map(|p| format!("{p} pays")).collect();
        parts.extend(row.refusers.iter().map(|p| format!("{p} DOESN'T PAY")));
        let mut text = if parts.is_empty() {
            "no late payment".to_string()
        } else {
            parts.join(", ")
        };
        if row.edge {
            text.push_str(" + edge");
        }
        let (a, b) = row.pair.expect("sync row has a pair");
        out[idx].1 = Cell::Pair(a, b, format!("<- sync, {text} ->"));
    }
    out.retain(|(_, c)| match c {
        Cell::Single(v, _) => shown(v),
        Cell::Pair(a, b, _) => shown(a) && shown(b),
    });
    out
}

fn column(columns: &[NodeId], v: &NodeId) -> usize {
    columns.iter().position(|c| c == v).expect("rendered actor")
}

fn place(line: &mut String, start: usize, text: &str) {
    while line.len() < start {
        line.push(' ');
    }
    line.push_str(text);
}

/// Render the timeline for `columns`. Byte-stable for a given trace.
pub fn render(trace: &Trace, columns: &[NodeId]) -> String {
    let mut s = String::new();
    let mut header = format!("{:<TIME_WIDTH$}", "Time");
    for c in columns {
        header.push_str(&format!("{:<COL_WIDTH$}", c.as_str()));
    }
    s.push_str(header.trim_end());
    s.push('\n');
    for (time, cell) in rows(trace, columns) {
        let mut line = format!("{time:<TIME_WIDTH$}");
        match cell {
            Cell::Single(v, text) => {
                place(
                    &mut line,
                    TIME_WIDTH + COL_WIDTH * column(columns, &v),
                    &text,
                );
            }
            Cell::Pair(a, b, text) => {
                let (i, j) = (column(columns, &a), column(columns, &b));
                let mid = TIME_WIDTH + COL_WIDTH * (i + j) / 2 + COL_WIDTH / 2;
                let start = mid.saturating_sub(text.len() / 2).max(TIME_WIDTH);
                place(&mut line, start, &text);
            }
        }
        s.push_str(line.trim_end());
        s.push('\n');
    }
    s
}

/// First differing line between two renderings, 1-based, with both lines.
pub fn first_difference(expected: &str, actual: &str) -> Option<(usize, String, String)> {
    let mut e = expected.lines();
    let mut a = actual.lines();
    let mut n = 0;
    loop {
        n += 1;
        match (e.next(), a.next()) {
            (None, None) => {
                return (expected != actual).then(|| (n, String::new(), String::new()));
            }
            (x, y) if x != y => {
                return Some((
                    n,
                    x.unwrap_or("<end>").to_string(),
                    y.unwrap_or("<end>").to_string(),
                ));
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    #[test]
    fn sync_row_layout() {
        let mut t = Trace::new();
        let m = MessageId::new(n("Alex"), 1);
        t.push(TraceEvent::new(
            0,
            vec![n("Alex")],
            TraceAction::Originate {
                msg: m.clone(),
                budget_ms: 1000,
            },
        ));
        t.push(
            TraceEvent::new(1000, vec![n("Alex"), n("Alice")], TraceAction::Sync).with_amount(100),
        );
        t.push(
            TraceEvent::new(
                1000,
                vec![n("Alice"), n("Alex")],
                TraceAction::Pay { msg: m },
            )
            .with_amount(100),
        );
        let cols = [n("Alex"), n("Alice"), n("Bob")];
        let text = render(&t, &cols);
        assert_eq!(
            text,
            "Time    Alex              Alice             Bob\n\
             0       Send request\n\
             1000           <- sync, Alice pays ->\n"
        );
        assert_eq!(render(&t, &cols), text);
    }

    #[test]
    fn hidden_actors_drop_rows() {
        let mut t = Trace::new();
        t.push(TraceEvent::new(5, vec![n("Bob"), n("Carol")], TraceAction::Sync).with_amount(0));
        assert_eq!(
            render(&t, &[n("Alex"), n("Bob")]),
            "Time    Alex              Bob\n"
        );
    }

    #[test]
    fn differences() {
        assert_eq!(first_difference("a\nb\n", "a\nb\n"), None);
        assert_eq!(
            first_difference("a\nb\n", "a\nc\n"),
            Some((2, "b".into(), "c".into()))
        );
        assert_eq!(
            first_difference("a\n", "a\nx\n"),
            Some((2, "<end>".into(), "x".into()))
        );
    }
}
