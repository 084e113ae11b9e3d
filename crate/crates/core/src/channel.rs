//! Bilateral state-channel accounting between the two endpoints of an edge.
//!
//! A channel tracks the in-flight obligations of each side (a relayed
//! request whose outcome is still owed), a periodic sync schedule and the
//! late fees that accrue past each obligation's due time. Lateness is only
//! paid at syncs; a side that owes money at a sync and does not pay has
//! defaulted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{MessageId, Millis, Money, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("message {0} already has an obligation on this channel")]
    DuplicateMessage(MessageId),
    #[error("no obligation for message {0}")]
    UnknownMessage(MessageId),
    #[error("obligation for {0} was already discharged")]
    AlreadyDischarged(MessageId),
    #[error("{0} is not an endpoint of this channel")]
    NotAnEndpoint(NodeId),
    #[error("sync attempted at {now}ms but the next sync is at {scheduled}ms")]
    OffSchedule { now: Millis, scheduled: Millis },
    #[error("sync interval must be at least 1ms")]
    ZeroInterval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Response,
    SeveranceProof,
    GaveUpWithPayment,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Obligation {
    pub message_id: MessageId,
    pub owed_by: NodeId,
    pub acknowledged_at: Millis,
    pub response_due: Millis,
    pub discharged: Option<(Millis, OutcomeKind)>,
    /// Lateness before this instant has already been settled.
    pub settled_until: Millis,
}

impl Obligation {
    fn accrued(&self, now: Millis, late_rate: Money) -> Money {
        let end = match self.discharged {
            Some((t, _)) => t.min(now),
            None => now,
        };
        let start = self.response_due.max(self.settled_until);
        end.saturating_sub(start) as Money * late_rate
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatePayment {
    pub payer: NodeId,
    pub payee: NodeId,
    pub message: MessageId,
    pub amount: Money,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncDefault {
    pub payer: NodeId,
    pub payee: NodeId,
    pub items: Vec<(MessageId, Money)>,
}

impl SyncDefault {
    pub fn amount(&self) -> Money {
        self.items.iter().map(|(_, a)| a).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SyncSettlement {
    pub payments: Vec<LatePayment>,
    pub defaults: Vec<SyncDefault>,
}

impl SyncSettlement {
    pub fn total_paid(&self) -> Money {
        self.payments.iter().map(|p| p.amount).sum()
    }

    pub fn defaulted(&self) -> bool {
        !self.defaults.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelState {
    endpoints: (NodeId, NodeId),
    /// Net money received by the first endpoint over the channel's life.
    balance_delta: Money,
    obligations: BTreeMap<MessageId, Obligation>,
    sync_interval_ms: Millis,
    sync_phase_ms: Millis,
    next_sync_time: Millis,
    late_rate: Money,
}

impl ChannelState {
    /// Syncs happen at `phase + k·interval`; the first one is the earliest
    /// such instant at or after `now`.
    pub fn new(
        first: NodeId,
        second: NodeId,
        late_rate: Money,
        sync_interval_ms: Millis,
        sync_phase_ms: Millis,
        now: Millis,
    ) -> Result<Self, ChannelError> {
        if sync_interval_ms == 0 {
            return Err(ChannelError::ZeroInterval);
        }
        let mut chan = ChannelState {
            endpoints: (first, second),
            balance_delta: 0,
            obligations: BTreeMap::new(),
            sync_interval_ms,
            sync_phase_ms,
            next_sync_time: sync_phase_ms,
            late_rate,
        };
        chan.align_next_sync(now);
        Ok(chan)
    }

    pub fn endpoints(&self) -> (&NodeId, &NodeId) {
        (&self.endpoints.0, &self.endpoints.1)
    }

    pub fn balance_delta(&self) -> Money {
        self.balance_delta
    }

    pub fn late_rate(&self) -> Money {
        self.late_rate
    }

    pub fn sync_interval(&self) -> Millis {
        self.sync_interval_ms
    }

    pub fn next_sync_time(&self) -> Millis {
        self.next_sync_time
    }

    pub fn obligations(&self) -> impl Iterator<Item = &Obligation> {
        self.obligations.values()
    }

    pub fn obligation(&self, id: &MessageId) -> Option<&Obligation> {
        self.obligations.get(id)
    }

    pub fn has_obligations(&self) -> bool {
        !self.obligations.is_empty()
    }

    /// First sync instant at or after `t`.
    pub fn sync_at_or_after(&self, t: Millis) -> Millis {
        if t <= self.sync_phase_ms {
            return self.sync_phase_ms;
        }
        let k = (t - self.sync_phase_ms).div_ceil(self.sync_interval_ms);
        self.sync_phase_ms + k * self.sync_interval_ms
    }

    /// Skip sync points that passed while the channel was idle.
    pub fn align_next_sync(&mut self, now: Millis) {
        if self.next_sync_time < now {
            self.next_sync_time = self.sync_at_or_after(now);
        }
    }

    fn check_endpoint(&self, v: &NodeId) -> Result<(), ChannelError> {
        if v == &self.endpoints.0 || v == &self.endpoints.1 {
            Ok(())
        } else {
            Err(ChannelError::NotAnEndpoint(v.clone()))
        }
    }

    fn other(&self, v: &NodeId) -> &NodeId {
        if v == &self.endpoints.0 {
            &self.endpoints.1
        } else {
            &self.endpoints.0
        }
    }

    /// Record money moving to `payee` over the channel.
    pub fn record_transfer(&mut self, payee: &NodeId, amount: Money) -> Result<(), ChannelError> {
        self.check_endpoint(payee)?;
        if payee == &self.endpoints.0 {
            self.balance_delta += amount;
        } else {
            self.balance_delta -= amount;
        }
        Ok(())
    }

    /// Register that `relayer` acknowledged a request arriving over this
    /// channel together with its `prepaid` fee; the relayer now owes an
    /// outcome by `due`.
    pub fn record_forward(
        &mut self,
        msg_id: MessageId,
        relayer: &NodeId,
        acknowledged_at: Millis,
        due: Millis,
        prepaid: Money,
    ) -> Result<(), ChannelError> {
        self.check_endpoint(relayer)?;
        if self.obligations.contains_key(&msg_id) {
            return Err(ChannelError::DuplicateMessage(msg_id));
        }
        self.record_transfer(relayer, prepaid)?;
        self.obligations.insert(
            msg_id.clone(),
            Obligation {
                message_id: msg_id,
                owed_by: relayer.clone(),
                acknowledged_at,
                response_due: due,
                discharged: None,
                settled_until: 0,
            },
        );
        Ok(())
    }

    pub fn discharge(
        &mut self,
        msg_id: &MessageId,
        now: Millis,
        kind: OutcomeKind,
    ) -> Result<(), ChannelError> {
        let obl = self
            .obligations
            .get_mut(msg_id)
            .ok_or_else(|| ChannelError::UnknownMessage(msg_id.clone()))?;
        if obl.discharged.is_some() {
            return Err(ChannelError::AlreadyDischarged(msg_id.clone()));
        }
        obl.discharged = Some((now.max(obl.acknowledged_at), kind));
        Ok(())
    }

    pub fn is_discharged(&self, msg_id: &MessageId) -> bool {
        self.obligations
            .get(msg_id)
            .is_some_and(|o| o.discharged.is_some())
    }

    /// Unsettled lateness across both sides as of `now`.
    pub fn lateness_owed(&self, now: Millis) -> Money {
        self.obligations
            .values()
            .map(|o| o.accrued(now, self.late_rate))
            .sum()
    }

    /// Unsettled lateness `payer` owes, per message.
    pub fn owed_by(&self, payer: &NodeId, now: Millis) -> Vec<(MessageId, Money)> {
        self.obligations
            .values()
            .filter(|o| &o.owed_by == payer)
            .map(|o| (o.message_id.clone(), o.accrued(now, self.late_rate)))
            .filter(|(_, a)| *a > 0)
            .collect()
    }

    /// Settle accrued lateness at the scheduled sync. `pays(payer, amount)`
    /// reports whether the owing side pays in full (policy and funds); if it
    /// does not, that side has defaulted. Either way the interval up to
    /// `now` counts as settled.
    pub fn settle_sync(
        &mut self,
        now: Millis,
        mut pays: impl FnMut(&NodeId, Money) -> bool,
    ) -> Result<SyncSettlement, ChannelError> {
        if now != self.next_sync_time {
            return Err(ChannelError::OffSchedule {
                now,
                scheduled: self.next_sync_time,
            });
        }
        let mut settlement = SyncSettlement::default();
        let (a, b) = self.endpoints.clone();
        for payer in [a, b] {
            let items = self.owed_by(&payer, now);
            if items.is_empty() {
                continue;
            }
            let payee = self.other(&payer).clone();
            let total: Money = items.iter().map(|(_, x)| x).sum();
            if pays(&payer, total) {
                self.record_transfer(&payee, total)?;
                settlement
                    .payments
                    .extend(items.into_iter().map(|(message, amount)| LatePayment {
                        payer: payer.clone(),
                        payee: payee.clone(),
                        message,
                        amount,
                    }));
            } else {
                settlement.defaults.push(SyncDefault {
                    payer: payer.clone(),
                    payee,
                    items,
                });
            }
        }
        for obl in self.obligations.values_mut() {
            obl.settled_until = obl.settled_until.max(now);
        }
        self.obligations
            .retain(|_, o| !matches!(o.discharged, Some((t, _)) if t <= now));
        self.next_sync_time += self.sync_interval_ms;
        Ok(settlement)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn m(seq: u64) -> MessageId {
        MessageId::new(n("Alex"), seq)
    }

    fn alex_alice() -> ChannelState {
        ChannelState::new(n("Alex"), n("Alice"), 1, 500, 0, 0).unwrap()
    }

    #[test]
    fn forward_moves_prepaid_toward_relayer() {
        let mut c = alex_alice();
        c.record_forward(m(1), &n("Alice"), 100, 900, 21).unwrap();
        assert_eq!(c.balance_delta(), -21);
        let mut rev = ChannelState::new(n("Alice"), n("Alex"), 1, 500, 0, 0).unwrap();
        rev.record_forward(m(1), &n("Alice"), 100, 900, 21).unwrap();
        assert_eq!(rev.balance_delta(), 21);
        assert_eq!(
            c.record_forward(m(1), &n("Alice"), 100, 900, 21),
            Err(ChannelError::DuplicateMessage(m(1)))
        );
    }

    #[test]
    fn past_due_forward_accrues_from_due() {
        let mut c = alex_alice();
        c.record_forward(m(1), &n("Alice"), 400, 300, 0).unwrap();
        assert_eq!(c.lateness_owed(500), 200);
    }

    #[test]
    fn discharge_rules() {
        let mut c = alex_alice();
        c.record_forward(m(1), &n("Alice"), 100, 700, 0).unwrap();
        c.discharge(&m(1), 699, OutcomeKind::Response).unwrap();
        assert_eq!(c.lateness_owed(5_000), 0);
        assert_eq!(
            c.discharge(&m(1), 800, OutcomeKind::Response),
            Err(ChannelError::AlreadyDischarged(m(1)))
        );
        assert_eq!(
            c.discharge(&m(9), 800, OutcomeKind::Response),
            Err(ChannelError::UnknownMessage(m(9)))
        );

        let mut late = ChannelState::new(n("Alice"), n("Bob"), 1, 1000, 600, 0).unwrap();
        late.record_forward(m(1), &n("Bob"), 300, 700, 0).unwrap();
        late.discharge(&m(1), 1600, OutcomeKind::SeveranceProof)
            .unwrap();
        assert_eq!(late.lateness_owed(1600), 900);
        assert_eq!(late.lateness_owed(9000), 900);
    }

    #[test]
    fn lateness_sums() {
        let c = alex_alice();
        assert_eq!(c.lateness_owed(10_000), 0);

        let mut one = alex_alice();
        one.record_forward(m(1), &n("Alice"), 100, 900, 0).unwrap();
        assert_eq!(one.lateness_owed(1200), 300);
        assert_eq!(one.lateness_owed(1100), 200);

        let mut two = ChannelState::new(n("Alex"), n("Alice"), 2, 500, 0, 0).unwrap();
        two.record_forward(m(1), &n("Alice"), 0, 900, 0).unwrap();
        two.record_forward(m(2), &n("Alice"), 0, 800, 0).unwrap();
        assert_eq!(two.lateness_owed(1000), 600);
    }

    #[test]
    fn example_sync_schedule() {
        // Alice owes Alex an outcome by 900 and syncs with him every 500ms.
        let mut c = alex_alice();
        c.record_forward(m(1), &n("Alice"), 100, 900, 0).unwrap();
        c.align_next_sync(100);
        assert_eq!(c.next_sync_time(), 500);
        let mut paid = Vec::new();
        for t in [500, 1000, 1500] {
            let s = c.settle_sync(t, |_, _| true).unwrap();
            assert!(!s.defaulted());
            paid.push(s.total_paid());
        }
        assert_eq!(paid, vec![0, 100, 500]);
        assert_eq!(c.balance_delta(), 600);
    }

    #[test]
    fn refusal_is_a_default() {
        let mut c = ChannelState::new(n("Alice"), n("Bob"), 1, 1000, 600, 0).unwrap();
        c.record_forward(m(1), &n("Bob"), 300, 700, 0).unwrap();
        c.settle_sync(600, |_, _| true).unwrap();
        c.discharge(&m(1), 1599, OutcomeKind::SeveranceProof)
            .unwrap();
        let s = c.settle_sync(1600, |_, _| false).unwrap();
        assert_eq!(s.total_paid(), 0);
        assert!(s.defaulted());
        assert_eq!(s.defaults[0].payer, n("Bob"));
        assert_eq!(s.defaults[0].amount(), 899);
        assert!(!c.has_obligations());
    }

    #[test]
    fn quiet_sync_and_schedule_errors() {
        let mut c = alex_alice();
        let s = c.settle_sync(0, |_, _| true).unwrap();
        assert_eq!(s, SyncSettlement::default());
        assert!(matches!(
            c.settle_sync(600, |_, _| true),
            Err(ChannelError::OffSchedule {
                now: 600,
                scheduled: 500
            })
        ));
        assert_eq!(
            ChannelState::new(n("A"), n("B"), 1, 0, 0, 0),
            Err(ChannelError::ZeroInterval)
        );
    }

    #[test]
    fn settled_obligation_stops_contributing() {
        let mut c = alex_alice();
        c.settle_sync(0, |_, _| true).unwrap();
        c.record_forward(m(1), &n("Alice"), 100, 200, 0).unwrap();
        c.settle_sync(500, |_, _| true).unwrap();
        c.discharge(&m(1), 700, OutcomeKind::Response).unwrap();
        let s = c.settle_sync(1000, |_, _| true).unwrap();
        assert_eq!(s.total_paid(), 200);
        let s = c.settle_sync(1500, |_, _| true).unwrap();
        assert_eq!(s.total_paid(), 0);
        assert!(!c.has_obligations());
    }

    #[test]
    fn relay_neutrality_with_aligned_syncs() {
        // R owes Q by 600; Q owes P by 700 (one 100ms hop later). R answers
        // late at 1234, Q forwards on arrival at 1334. Both channels sync at
        // the same instants.
        let l = 100;
        let mut pq = ChannelState::new(n("P"), n("Q"), 3, 1000, 0, 0).unwrap();
        let mut qr = ChannelState::new(n("Q"), n("R"), 3, 1000, 0, 0).unwrap();
        pq.record_forward(m(1), &n("Q"), 100, 700, 0).unwrap();
        qr.record_forward(m(1), &n("R"), 200, 700 - l, 0).unwrap();
        qr.discharge(&m(1), 1234, OutcomeKind::Response).unwrap();
        pq.discharge(&m(1), 1234 + l, OutcomeKind::Response)
            .unwrap();
        let (mut q_paid, mut q_got) = (0, 0);
        for t in [0, 1000, 2000, 3000] {
            q_paid += pq.settle_sync(t, |_, _| true).unwrap().total_paid();
            q_got += qr.settle_sync(t, |_, _| true).unwrap().total_paid();
        }
        assert_eq!(q_paid, q_got);
        assert_eq!(q_paid, (1234 - 600) * 3);
    }

    proptest! {
        #[test]
        fn lateness_is_monotone(
            dues in proptest::collection::vec(0..2_000u64, 1..6),
            rate in 0..5i64,
            t0 in 0..4_000u64,
            dt in 0..4_000u64,
        ) {
            let mut c = ChannelState::new(n("A"), n("B"), rate, 250, 0, 0).unwrap();
            for (i, due) in dues.iter().enumerate() {
                c.record_forward(m(i as u64), &n("B"), 0, *due, 0).unwrap();
                if i % 2 == 0 {
                    c.discharge(&m(i as u64), due + i as u64 * 100, OutcomeKind::Response).unwrap();
                }
            }
            prop_assert!(c.lateness_owed(t0) <= c.lateness_owed(t0 + dt));
        }
    }
}
