//! Directed trust structure: who listens to whom, quorum policy, and the
//! pairwise overlap arithmetic behind every safety condition.
//!
//! A node's UNL is the set of peers whose messages it accepts; trust is
//! directed and possibly asymmetric, and a UNL may or may not contain its
//! owner. Safety of the whole network reduces to inequalities over pairwise
//! UNL overlaps, quorum slack and fault budgets, all evaluated here in exact
//! integer arithmetic (margins are kept in half-units so the n/2 term of the
//! fork-safety condition never touches floating point).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrustError {
    #[error("a UNL must have at least one member")]
    EmptyUnl,
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("UNL of node {owner} references unknown node {member}")]
    UnknownUnlMember { owner: NodeId, member: NodeId },
    #[error("invalid quorum policy: {0}")]
    InvalidPolicy(String),
    #[error("fault budget {t} of node {node} exceeds UNL slack {max} (n - q)")]
    FaultBudgetTooLarge { node: NodeId, t: usize, max: usize },
    #[error("unknown overlap condition `{0}`")]
    UnknownCondition(String),
}

/// Dense node identifier: ids run 0..N-1 for an N-node network.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", self.0)
    }
}

/// How a node derives its quorum from its UNL size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuorumPolicy {
    /// q = ceil(num/den * n). The production configuration is 4/5.
    FractionCeil { num: u32, den: u32 },
    /// q = n - floor((n-1)/k), the policy under which a single agreed UNL
    /// with leaf validators cannot get stuck.
    FloorDivK { k: u32 },
}

impl QuorumPolicy {
    pub fn validate(&self) -> Result<(), TrustError> {
        match *self {
            QuorumPolicy::FractionCeil { num, den } => {
                if den == 0 || num > den || 2 * num <= den {
                    return Err(TrustError::InvalidPolicy(format!(
                        "fraction {num}/{den} must lie in (1/2, 1]"
                    )));
                }
            }
            QuorumPolicy::FloorDivK { k } => {
                if k < 2 {
                    return Err(TrustError::InvalidPolicy(format!("k = {k} must be >= 2")));
                }
            }
        }
        Ok(())
    }
}

/// Quorum for a UNL of size `n` under `policy`. `n = 0` is not a UNL.
pub fn quorum(n: usize, policy: &QuorumPolicy) -> Result<usize, TrustError> {
    if n == 0 {
        return Err(TrustError::EmptyUnl);
    }
    policy.validate()?;
    Ok(match *policy {
        QuorumPolicy::FractionCeil { num, den } => {
            let n = n as u64;
            ((n * num as u64).div_ceil(den as u64)) as usize
        }
        QuorumPolicy::FloorDivK { k } => n - (n - 1) / k as usize,
    })
}

/// The pairwise overlap conditions this toolkit can audit.
///
/// The first two are the historical published bounds; the remaining three
/// are the exact conditions (same-sequence safety with and without
/// accountable faults, and full fork safety).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlapCondition {
    /// O >= max(n_i - q_i, n_j - q_j): the original whitepaper bound
    /// (roughly 20% overlap at 80% quorums). Known insufficient.
    Whitepaper,
    /// O > 2 * max(n_i - q_i, n_j - q_j): sufficient but not necessary.
    Armknecht,
    /// O > (n_i - q_i) + (n_j - q_j): exact bound for same-sequence
    /// ledger disagreement when even faulty nodes cannot equivocate.
    SameSeqAccountable,
    /// O > (n_i - q_i) + (n_j - q_j) + t_ij: exact same-sequence bound when
    /// Byzantine nodes may send different validations to different peers.
    SameSeqByzantine,
    /// O > n_j / 2 + (n_i - q_i) + t_ij: sufficient for full fork safety.
    /// Asymmetric in (i, j); audits evaluate every ordered pair.
    ForkSafety,
}

impl OverlapCondition {
    pub const ALL: [OverlapCondition; 5] = [
        OverlapCondition::Whitepaper,
        OverlapCondition::Armknecht,
        OverlapCondition::SameSeqAccountable,
        OverlapCondition::SameSeqByzantine,
        OverlapCondition::ForkSafety,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OverlapCondition::Whitepaper => "whitepaper",
            OverlapCondition::Armknecht => "armknecht",
            OverlapCondition::SameSeqAccountable => "same-seq-accountable",
            OverlapCondition::SameSeqByzantine => "same-seq-byzantine",
            OverlapCondition::ForkSafety => "fork-safety",
        }
    }
}

impl fmt::Display for OverlapCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OverlapCondition {
    type Err = TrustError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OverlapCondition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| TrustError::UnknownCondition(s.to_string()))
    }
}

/// Result of evaluating one overlap condition on one ordered pair.
///
/// `margin_halves` is (left - right) of the condition's inequality, scaled
/// by two so the fork-safety n_j/2 term stays integral. Strict conditions
/// hold when the margin is positive; the whitepaper's non-strict bound
/// holds when it is non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCheck {
    pub holds: bool,
    pub margin_halves: i64,
}

impl PairCheck {
    /// Margin in whole units, rendered exactly ("-0.5", "0", "12").
    pub fn margin_display(&self) -> String {
        let whole = self.margin_halves / 2;
        if self.margin_halves % 2 == 0 {
            format!("{whole}")
        } else if self.margin_halves > 0 {
            format!("{}.5", whole)
        } else {
            // negative odd half-units: -1 half-unit renders as -0.5
            format!("-{}.5", -self.margin_halves / 2)
        }
    }
}

/// An ordered pair that fails an audited condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairFailure {
    pub i: NodeId,
    pub j: NodeId,
    pub check: PairCheck,
}

/// Per-node UNL membership, a global quorum policy, and per-node fault
/// budgets. Immutable after construction; share read-only across runs.
#[derive(Clone, Debug)]
pub struct TrustGraph {
    unls: Vec<BTreeSet<NodeId>>,
    policy: QuorumPolicy,
    quorums: Vec<usize>,
    fault_budget: Vec<usize>,
    listeners: Vec<Vec<NodeId>>,
}

impl TrustGraph {
    /// Builds a graph for nodes 0..unls.len(). `fault_overrides` replaces
    /// the default budget t_i = n_i - q_i (the maximum tolerated) for the
    /// listed nodes.
    pub fn new(
        unls: Vec<BTreeSet<NodeId>>,
        policy: QuorumPolicy,
        fault_overrides: &BTreeMap<NodeId, usize>,
    ) -> Result<Self, TrustError> {
        policy.validate()?;
        let n_nodes = unls.len();
        for (owner, unl) in unls.iter().enumerate() {
            if unl.is_empty() {
                return Err(TrustError::EmptyUnl);
            }
            for member in unl {
                if member.index() >= n_nodes {
                    return Err(TrustError::UnknownUnlMember {
                        owner: NodeId(owner as u32),
                        member: *member,
                    });
                }
            }
        }
        let quorums: Vec<usize> = unls
            .iter()
            .map(|u| quorum(u.len(), &policy))
            .collect::<Result<_, _>>()?;
        let mut fault_budget: Vec<usize> = unls
            .iter()
            .zip(&quorums)
            .map(|(u, q)| u.len() - q)
            .collect();
        for (node, t) in fault_overrides {
            if node.index() >= n_nodes {
                return Err(TrustError::UnknownNode(*node));
            }
            let max = unls[node.index()].len() - quorums[node.index()];
            if *t > max {
                return Err(TrustError::FaultBudgetTooLarge {
                    node: *node,
                    t: *t,
                    max,
                });
            }
            fault_budget[node.index()] = *t;
        }
        let mut listeners = vec![Vec::new(); n_nodes];
        for (owner, unl) in unls.iter().enumerate() {
            for member in unl {
                listeners[member.index()].push(NodeId(owner as u32));
            }
        }
        Ok(TrustGraph {
            unls,
            policy,
            quorums,
            fault_budget,
            listeners,
        })
    }

    pub fn node_count(&self) -> usize {
        self.unls.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.unls.len() as u32).map(NodeId)
    }

    pub fn policy(&self) -> QuorumPolicy {
        self.policy
    }

    fn check_id(&self, id: NodeId) -> Result<usize, TrustError> {
        if id.index() < self.unls.len() {
            Ok(id.index())
        } else {
            Err(TrustError::UnknownNode(id))
        }
    }

    pub fn unl(&self, i: NodeId) -> &BTreeSet<NodeId> {
        &self.unls[i.index()]
    }

    /// True iff `i` listens to `j` (j is in UNL_i).
    pub fn trusts(&self, i: NodeId, j: NodeId) -> bool {
        self.unls[i.index()].contains(&j)
    }

    pub fn unl_size(&self, i: NodeId) -> usize {
        self.unls[i.index()].len()
    }

    pub fn quorum_of(&self, i: NodeId) -> usize {
        self.quorums[i.index()]
    }

    pub fn fault_budget_of(&self, i: NodeId) -> usize {
        self.fault_budget[i.index()]
    }

    /// Everyone who listens to `j`; the fan-out set of a broadcast from `j`.
    pub fn listeners(&self, j: NodeId) -> &[NodeId] {
        &self.listeners[j.index()]
    }

    /// |UNL_i ∩ UNL_j|. Symmetric.
    pub fn overlap(&self, i: NodeId, j: NodeId) -> Result<usize, TrustError> {
        let (i, j) = (self.check_id(i)?, self.check_id(j)?);
        Ok(self.unls[i].intersection(&self.unls[j]).count())
    }

    /// t_ij = min(t_i, t_j, O_ij): the most Byzantine nodes the pair can
    /// tolerate inside their shared overlap.
    pub fn pair_fault_bound(&self, i: NodeId, j: NodeId) -> Result<usize, TrustError> {
        let o = self.overlap(i, j)?;
        Ok(self.fault_budget[i.index()]
            .min(self.fault_budget[j.index()])
            .min(o))
    }

    /// Evaluates `condition` on the ordered pair (i, j) as written; only
    /// the fork-safety condition is order sensitive.
    pub fn check_pair(
        &self,
        i: NodeId,
        j: NodeId,
        condition: OverlapCondition,
    ) -> Result<PairCheck, TrustError> {
        let o = self.overlap(i, j)? as i64;
        let n_i = self.unl_size(i) as i64;
        let n_j = self.unl_size(j) as i64;
        let slack_i = n_i - self.quorum_of(i) as i64;
        let slack_j = n_j - self.quorum_of(j) as i64;
        let t_ij = self.pair_fault_bound(i, j)? as i64;
        let (margin_halves, strict) = match condition {
            OverlapCondition::Whitepaper => (2 * o - 2 * slack_i.max(slack_j), false),
            OverlapCondition::Armknecht => (2 * o - 4 * slack_i.max(slack_j), true),
            OverlapCondition::SameSeqAccountable => (2 * o - 2 * (slack_i + slack_j), true),
            OverlapCondition::SameSeqByzantine => (2 * o - 2 * (slack_i + slack_j + t_ij), true),
            OverlapCondition::ForkSafety => (2 * o - (n_j + 2 * slack_i + 2 * t_ij), true),
        };
        let holds = if strict {
            margin_halves > 0
        } else {
            margin_halves >= 0
        };
        Ok(PairCheck {
            holds,
            margin_halves,
        })
    }

    /// Every ordered pair of distinct nodes failing `condition`, in
    /// ascending (i, j) order.
    pub fn audit(&self, condition: OverlapCondition) -> Vec<PairFailure> {
        let mut out = Vec::new();
        for i in self.node_ids() {
            for j in self.node_ids() {
                if i == j {
                    continue;
                }
                let check = self
                    .check_pair(i, j, condition)
                    .expect("audit only visits valid ids");
                if !check.holds {
                    out.push(PairFailure { i, j, check });
                }
            }
        }
        out
    }
}
