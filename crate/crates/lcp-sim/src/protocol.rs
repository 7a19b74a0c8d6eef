//! The per-node consensus state machine.
//!
//! One `NodeState` holds everything a single honest peer tracks: the working
//! ledger it is deliberating on, the freshest proposal per trusted peer, the
//! freshest validation per trusted peer, cumulative validation counts per
//! ledger, its fully validated tip, and its own validation high-water mark.
//!
//! Three mechanisms drive it:
//!
//! * deliberation: iterative proposal exchange with a ratcheting support
//!   threshold, declaring consensus when a quorum of stored proposals agree
//!   with our own transaction set exactly;
//! * validation counting: a ledger with a quorum of validations at a
//!   sequence above the current tip becomes the new fully validated tip;
//! * preferred branch: a support-weighted walk down the ledger tree that
//!   decides which branch to deliberate on, conservative in the face of
//!   uncommitted peers, with ties broken by ledger hash order.
//!
//! All message exchange goes through the simulation engine; nothing here
//! performs I/O and every operation is deterministic.

use std::collections::{BTreeMap, BTreeSet};

use crate::ledger::{phi, LedgerHash, LedgerStore, Seq, TxId};
use crate::trust::{NodeId, TrustGraph};

/// A deliberation proposal: "apply transaction set `txs` to ledger `prior`",
/// the `round`-th such position statement from `proposer` for that prior.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub txs: BTreeSet<TxId>,
    pub round: u32,
    pub prior: LedgerHash,
    pub proposer: NodeId,
}

/// A claim by `validator` that it built `ledger` at sequence `seq`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Validation {
    pub ledger: LedgerHash,
    pub seq: Seq,
    pub validator: NodeId,
}

/// The two message kinds the protocol exchanges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Proposal(Proposal),
    Validation(Validation),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    Proposal,
    Validation,
}

impl Message {
    pub fn sender(&self) -> NodeId {
        match self {
            Message::Proposal(p) => p.proposer,
            Message::Validation(v) => v.validator,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Proposal(_) => MessageKind::Proposal,
            Message::Validation(_) => MessageKind::Validation,
        }
    }
}

/// Per-round support thresholds, as rationals of the UNL size.
///
/// The threshold ratchets upward so that slow peers cannot stall
/// convergence; the final step persists for all later rounds. Comparison is
/// inclusive (a transaction with support exactly at the threshold is kept),
/// which is what makes a 50% threshold adopt a transaction seen in exactly
/// half the proposals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThresholdSchedule {
    steps: Vec<(u32, u32)>,
}

impl ThresholdSchedule {
    pub fn new(steps: Vec<(u32, u32)>) -> Result<Self, String> {
        if steps.is_empty() {
            return Err("threshold schedule must have at least one step".into());
        }
        for &(num, den) in &steps {
            if den == 0 || num == 0 || num > den {
                return Err(format!("threshold {num}/{den} must lie in (0, 1]"));
            }
        }
        for w in steps.windows(2) {
            let (a, b) = (w[0], w[1]);
            // a.0/a.1 <= b.0/b.1 without floats
            if (a.0 as u64) * (b.1 as u64) > (b.0 as u64) * (a.1 as u64) {
                return Err("threshold schedule must be non-decreasing".into());
            }
        }
        Ok(ThresholdSchedule { steps })
    }

    /// The production schedule: 50% -> 65% -> 70% -> 95%.
    pub fn production() -> Self {
        ThresholdSchedule::new(vec![(1, 2), (13, 20), (7, 10), (19, 20)])
            .expect("static schedule is valid")
    }

    pub fn at(&self, round: u32) -> (u32, u32) {
        let idx = (round as usize).min(self.steps.len() - 1);
        self.steps[idx]
    }

    pub fn steps(&self) -> &[(u32, u32)] {
        &self.steps
    }

    /// Inclusive threshold test: support >= threshold(round) * unl_size.
    fn keeps(&self, round: u32, support: usize, unl_size: usize) -> bool {
        let (num, den) = self.at(round);
        (support as u64) * (den as u64) >= (num as u64) * (unl_size as u64)
    }
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        ThresholdSchedule::production()
    }
}

/// What one deliberation step produced: the broadcasts to route, and the
/// previous working ledger when the step switched branches. A switching
/// step never validates.
#[derive(Clone, Debug, Default)]
pub struct StepOutcome {
    pub broadcasts: Vec<Message>,
    pub switched_from: Option<LedgerHash>,
}

/// Full protocol state of one peer.
#[derive(Clone, Debug)]
pub struct NodeState {
    id: NodeId,
    /// Working ledger: the parent the node currently deliberates on.
    working: LedgerHash,
    /// Deliberation round within the current working ledger.
    round: u32,
    /// Our current guess of the consensus transaction set.
    position: BTreeSet<TxId>,
    /// Freshest proposal per trusted peer, for the current working ledger.
    props: BTreeMap<NodeId, Proposal>,
    /// Freshest proposal per (prior, peer) for priors we are not on.
    prop_buffer: BTreeMap<(LedgerHash, NodeId), Proposal>,
    /// Freshest validation per trusted peer (highest sequence; on equal
    /// sequence the most recently delivered wins).
    last_vals: BTreeMap<NodeId, Validation>,
    /// All peers ever seen validating each ledger. An equivocating peer is
    /// counted under every ledger it claimed.
    val_counts: BTreeMap<LedgerHash, BTreeSet<NodeId>>,
    /// Fully validated tip.
    fully_validated: LedgerHash,
    fully_validated_seq: Seq,
    /// Highest sequence this node has itself validated; 0 before the first.
    s_max: Seq,
    /// Locally submitted transactions not yet observed in the working
    /// ledger's ancestry.
    pending: BTreeSet<TxId>,
}

impl NodeState {
    /// A fresh node that considers `genesis` fully validated and has never
    /// validated anything itself.
    pub fn new(id: NodeId, genesis: LedgerHash) -> Self {
        NodeState {
            id,
            working: genesis,
            round: 0,
            position: BTreeSet::new(),
            props: BTreeMap::new(),
            prop_buffer: BTreeMap::new(),
            last_vals: BTreeMap::new(),
            val_counts: BTreeMap::new(),
            fully_validated: genesis,
            fully_validated_seq: 1,
            s_max: 0,
            pending: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn working(&self) -> LedgerHash {
        self.working
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn position(&self) -> &BTreeSet<TxId> {
        &self.position
    }

    pub fn fully_validated(&self) -> LedgerHash {
        self.fully_validated
    }

    pub fn fully_validated_seq(&self) -> Seq {
        self.fully_validated_seq
    }

    pub fn s_max(&self) -> Seq {
        self.s_max
    }

    pub fn pending(&self) -> &BTreeSet<TxId> {
        &self.pending
    }

    pub fn props(&self) -> &BTreeMap<NodeId, Proposal> {
        &self.props
    }

    pub fn last_validation_of(&self, peer: NodeId) -> Option<&Validation> {
        self.last_vals.get(&peer)
    }

    pub fn validators_of(&self, ledger: &LedgerHash) -> usize {
        self.val_counts.get(ledger).map_or(0, BTreeSet::len)
    }

    /// Submits a transaction for inclusion in a future ledger.
    pub fn submit(&mut self, tx: TxId) {
        self.pending.insert(tx);
    }

    /// Seeds the state of a node that validated `ledger` before the run
    /// began: its working ledger and validation high-water mark reflect
    /// that earlier validation.
    pub fn seed_validated(&mut self, ledger: LedgerHash, seq: Seq) {
        self.working = ledger;
        self.s_max = seq;
    }

    /// Begins a new deliberation round on `target`: resets the round
    /// counter, re-proposes pending transactions not already committed in
    /// the target's ancestry, and re-seeds the proposal table from anything
    /// previously buffered for that prior. Returns the opening proposal.
    pub fn start(&mut self, store: &LedgerStore, target: LedgerHash) -> Proposal {
        self.working = target;
        self.round = 0;
        let committed = store
            .ancestry_txs(&target)
            .expect("deliberation target must be stored");
        self.position = self.pending.difference(&committed).cloned().collect();
        self.props.clear();
        let buffered: Vec<(LedgerHash, NodeId)> = self
            .prop_buffer
            .range((target, NodeId(0))..=(target, NodeId(u32::MAX)))
            .map(|(k, _)| *k)
            .collect();
        for key in buffered {
            let p = self.prop_buffer.remove(&key).expect("key just listed");
            self.props.insert(key.1, p);
        }
        Proposal {
            txs: self.position.clone(),
            round: 0,
            prior: self.working,
            proposer: self.id,
        }
    }

    /// Accepts a proposal from the network. Untrusted proposers are
    /// silently dropped; proposals for the working ledger must carry a
    /// strictly fresher round than the stored one; proposals for other
    /// priors are buffered (freshest per peer and prior) for a later
    /// branch switch.
    pub fn on_proposal(&mut self, graph: &TrustGraph, p: Proposal) {
        if !graph.trusts(self.id, p.proposer) {
            return;
        }
        if p.prior == self.working {
            match self.props.get(&p.proposer) {
                Some(prev) if p.round <= prev.round => {}
                _ => {
                    self.props.insert(p.proposer, p);
                }
            }
        } else {
            let key = (p.prior, p.proposer);
            match self.prop_buffer.get(&key) {
                Some(prev) if p.round <= prev.round => {}
                _ => {
                    self.prop_buffer.insert(key, p);
                }
            }
        }
    }

    /// Accepts a validation from the network. Returns the new fully
    /// validated tip when this validation completes a quorum at a sequence
    /// above the current tip.
    pub fn on_validation(
        &mut self,
        graph: &TrustGraph,
        store: &LedgerStore,
        v: Validation,
    ) -> Option<LedgerHash> {
        if !graph.trusts(self.id, v.validator) {
            return None;
        }
        debug_assert!(
            store.get(&v.ledger).map(|l| l.seq()) == Ok(v.seq),
            "validation sequence must match its ledger"
        );
        self.val_counts
            .entry(v.ledger)
            .or_default()
            .insert(v.validator);
        let ledger = v.ledger;
        let seq = v.seq;
        match self.last_vals.get(&v.validator) {
            Some(prev) if prev.seq > v.seq => {}
            _ => {
                self.last_vals.insert(v.validator, v);
            }
        }
        if self.val_counts[&ledger].len() >= graph.quorum_of(self.id)
            && seq > self.fully_validated_seq
        {
            self.fully_validated = ledger;
            self.fully_validated_seq = seq;
            return Some(ledger);
        }
        None
    }

    /// Recomputes our position from the stored proposals under the current
    /// round's threshold, advances the round, and returns the new proposal.
    pub fn update_position(
        &mut self,
        graph: &TrustGraph,
        schedule: &ThresholdSchedule,
    ) -> Proposal {
        let n_i = graph.unl_size(self.id);
        let mut all_txs: BTreeSet<TxId> = BTreeSet::new();
        for p in self.props.values() {
            all_txs.extend(p.txs.iter().cloned());
        }
        let mut next = BTreeSet::new();
        for tx in all_txs {
            let support = self.props.values().filter(|p| p.txs.contains(&tx)).count();
            if schedule.keeps(self.round, support, n_i) {
                next.insert(tx);
            }
        }
        self.position = next;
        self.round += 1;
        Proposal {
            txs: self.position.clone(),
            round: self.round,
            prior: self.working,
            proposer: self.id,
        }
    }

    /// True iff a quorum of stored proposals carry a transaction set equal
    /// to our position. Set equality, not inclusion; our own broadcast
    /// counts once it is delivered back to us like any other.
    pub fn check_consensus(&self, graph: &TrustGraph) -> bool {
        let agreeing = self
            .props
            .values()
            .filter(|p| p.txs == self.position)
            .count();
        agreeing >= graph.quorum_of(self.id)
    }

    /// One deliberation heartbeat.
    ///
    /// If the preferred branch disagrees with the working ledger, restart
    /// deliberation there (a switching step never validates). Otherwise
    /// update our position, and on consensus apply it to the working
    /// ledger, validate the child if its sequence exceeds anything we
    /// validated before, and immediately start deliberating on it.
    pub fn deliberation_step(
        &mut self,
        graph: &TrustGraph,
        store: &mut LedgerStore,
        schedule: &ThresholdSchedule,
    ) -> StepOutcome {
        let mut out = StepOutcome::default();
        let preferred = self.preferred_ledger(store);
        if preferred != self.working {
            let from = self.working;
            out.broadcasts
                .push(Message::Proposal(self.start(store, preferred)));
            out.switched_from = Some(from);
            return out;
        }
        out.broadcasts
            .push(Message::Proposal(self.update_position(graph, schedule)));
        if self.check_consensus(graph) {
            let child = store
                .apply(self.working, self.position.clone())
                .expect("working ledger is stored");
            let seq = store.get(&child).expect("just stored").seq();
            if seq > self.s_max {
                out.broadcasts.push(Message::Validation(Validation {
                    ledger: child,
                    seq,
                    validator: self.id,
                }));
                self.s_max = seq;
            }
            out.broadcasts
                .push(Message::Proposal(self.start(store, child)));
        }
        out
    }

    /// Number of trusted peers whose freshest validation is exactly `ledger`.
    pub fn tip_support(&self, ledger: &LedgerHash) -> usize {
        self.last_vals
            .values()
            .filter(|v| v.ledger == *ledger)
            .count()
    }

    /// Tip support plus peers whose freshest validation descends from
    /// `ledger`.
    pub fn branch_support(&self, store: &LedgerStore, ledger: &LedgerHash) -> usize {
        self.last_vals
            .values()
            .filter(|v| {
                v.ledger == *ledger || store.is_ancestor(ledger, &v.ledger).unwrap_or(false)
            })
            .count()
    }

    /// Number of trusted peers whose freshest validation sits below
    /// max(`seq`, our own validation high-water mark): peers that could
    /// still end up supporting any branch at that height.
    pub fn uncommitted(&self, seq: Seq) -> usize {
        let cutoff = seq.max(self.s_max);
        self.last_vals.values().filter(|v| v.seq < cutoff).count()
    }

    /// The branch this node should deliberate on.
    ///
    /// Walks the ledger tree from the deepest common ancestor of the
    /// freshest trusted validations, descending into the child with the
    /// highest branch support (hash order breaking ties) only while that
    /// child's support lead exceeds the number of peers still uncommitted
    /// at the child's height. If the walk lands on an ancestor of the
    /// working ledger, the working ledger stays preferred: nothing proves
    /// we are on a wrong branch yet.
    pub fn preferred_ledger(&self, store: &LedgerStore) -> LedgerHash {
        if self.last_vals.is_empty() {
            return self.working;
        }
        let tips: Vec<LedgerHash> = self.last_vals.values().map(|v| v.ledger).collect();
        let mut cur = store
            .common_ancestor(&tips)
            .expect("validated ledgers are stored");
        loop {
            let mut children: Vec<(usize, LedgerHash)> = store
                .children_of(&cur)
                .map(|c| (self.branch_support(store, c), *c))
                .collect();
            if children.is_empty() {
                break;
            }
            children.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| b.1.cmp(&a.1)));
            let best = children[0];
            let delta = if children.len() > 1 {
                let runner_up = children[1];
                best.0 as i64 - runner_up.0 as i64 + phi(&best.1, &runner_up.1) as i64
            } else {
                best.0 as i64
            };
            let child_seq = store.get(&cur).expect("walk stays in store").seq() + 1;
            if delta > self.uncommitted(child_seq) as i64 {
                cur = best.1;
            } else {
                break;
            }
        }
        if store.is_ancestor(&cur, &self.working).unwrap_or(false) {
            self.working
        } else {
            cur
        }
    }
}
