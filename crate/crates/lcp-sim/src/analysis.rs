//! Fork and stuck detection on finished runs, plus brute-force oracles for
//! the pairwise overlap bounds.
//!
//! The detectors are operational: a fork is two honest nodes whose fully
//! validated histories (closed under ancestry) contradict each other, and a
//! run is stuck when continuing it under a civil network with no Byzantine
//! interference still leaves some honest node without a new full
//! validation. The oracles exhaustively enumerate one-shot validation
//! assignments on small instances and are deliberately independent of the
//! closed-form condition evaluators they are tested against.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ledger::{LedgerHash, LedgerStore, Seq};
use crate::report::{RunReport, TraceKind};
use crate::sim::{Tick, World};
use crate::trust::{NodeId, QuorumPolicy, TrustError, TrustGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("probe length must be positive")]
    ZeroProbe,
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("search over {members} members exceeds the configured limit {limit}")]
    SearchTooLarge { members: usize, limit: usize },
    #[error(transparent)]
    Trust(#[from] TrustError),
}

/// Two honest nodes that fully validated contradictory ledgers. With
/// ancestry closure applied, every contradiction surfaces as two distinct
/// ledgers at the same sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForkWitness {
    pub nodes: (NodeId, NodeId),
    pub ledgers: (LedgerHash, LedgerHash),
    pub seqs: (Seq, Seq),
}

/// One node that failed to make progress during the civil probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StuckNode {
    pub node: NodeId,
    /// Tick and sequence of the node's last full validation in the main
    /// run, if it ever had one.
    pub last_full_validation: Option<(Tick, Seq)>,
    /// The branch the node's own fork choice pins it to at the snapshot.
    pub pinned_branch: LedgerHash,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StuckEvidence {
    pub probe_ticks: Tick,
    pub stuck: Vec<StuckNode>,
}

/// Scans the fully validated ledgers of every honest node across the whole
/// run — each node's full-validation history with ancestry closure applied
/// — and returns the first contradiction in deterministic order (ascending
/// node pair, then sequence, then hash), or `None`.
pub fn detect_fork(report: &RunReport, store: &LedgerStore) -> Option<ForkWitness> {
    let honest: Vec<NodeId> = report
        .per_node_final
        .keys()
        .copied()
        .filter(|id| !report.byzantine.contains(id))
        .collect();

    // Per node: sequence -> fully validated hashes at that sequence.
    let mut closures: BTreeMap<NodeId, BTreeMap<Seq, BTreeSet<LedgerHash>>> = BTreeMap::new();
    for id in &honest {
        let mut per_seq: BTreeMap<Seq, BTreeSet<LedgerHash>> = BTreeMap::new();
        for (_tick, ledger, _seq) in report.full_validation_history(*id) {
            let mut cur = store.get(&ledger).expect("trace ledgers are stored");
            loop {
                if !per_seq.entry(cur.seq()).or_default().insert(cur.hash()) {
                    break; // ancestry already recorded by an earlier event
                }
                match cur.parent() {
                    Some(p) => cur = store.get(&p).expect("store closed under parents"),
                    None => break,
                }
            }
        }
        if !per_seq.is_empty() {
            closures.insert(*id, per_seq);
        }
    }

    for (idx, a) in honest.iter().enumerate() {
        let Some(map_a) = closures.get(a) else {
            continue;
        };
        for b in &honest[idx..] {
            let Some(map_b) = closures.get(b) else {
                continue;
            };
            for (seq, hashes_a) in map_a {
                let Some(hashes_b) = map_b.get(seq) else {
                    continue;
                };
                for ha in hashes_a {
                    for hb in hashes_b {
                        if ha != hb {
                            let (first, second) = if ha < hb { (*ha, *hb) } else { (*hb, *ha) };
                            return Some(ForkWitness {
                                nodes: (*a, *b),
                                ledgers: (first, second),
                                seqs: (*seq, *seq),
                            });
                        }
                    }
                }
            }
        }
    }
    None
}

/// Continues the world under a civil network with no Byzantine interference
/// for `probe_ticks`, and reports the honest nodes that record no new full
/// validation during the probe.
pub fn detect_stuck(
    world: &World,
    probe_ticks: Tick,
) -> Result<Option<StuckEvidence>, AnalysisError> {
    if probe_ticks == 0 {
        return Err(AnalysisError::ZeroProbe);
    }
    let mut probe = world.civil_probe_clone(probe_ticks);
    probe.run_to_end();

    let mut stuck = Vec::new();
    for id in world.honest_ids() {
        let before = world.node(id).fully_validated_seq();
        let after = probe.node(id).fully_validated_seq();
        if after <= before {
            let last_full_validation = world.trace().iter().rev().find_map(|r| match r.kind {
                TraceKind::FullyValidate { seq, .. } if r.node == id => Some((r.tick, seq)),
                _ => None,
            });
            stuck.push(StuckNode {
                node: id,
                last_full_validation,
                pinned_branch: world.node(id).preferred_ledger(world.store()),
            });
        }
    }
    if stuck.is_empty() {
        Ok(None)
    } else {
        Ok(Some(StuckEvidence { probe_ticks, stuck }))
    }
}

/// Closed-form validation counting bounds.
///
/// When an honest node sees `m` validations for one ledger at some
/// sequence, at least `min_honest_j` honest members of the other node's
/// UNL validated that ledger, and the other node can see at most
/// `max_contra_j` validations for any contradictory ledger at the same
/// sequence. Both bounds are tight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lemma1Bounds {
    pub min_honest_j: usize,
    pub max_contra_j: usize,
}

pub fn lemma1_bounds(
    n_i: usize,
    n_j: usize,
    overlap: usize,
    t_ij: usize,
    m: usize,
) -> Result<Lemma1Bounds, AnalysisError> {
    if overlap > n_i.min(n_j) {
        return Err(AnalysisError::Infeasible(format!(
            "overlap {overlap} exceeds min({n_i}, {n_j})"
        )));
    }
    if m > n_i {
        return Err(AnalysisError::Infeasible(format!(
            "m = {m} exceeds n_i = {n_i}"
        )));
    }
    if t_ij > overlap {
        return Err(AnalysisError::Infeasible(format!(
            "t_ij = {t_ij} exceeds overlap {overlap}"
        )));
    }
    let min_honest_j = (overlap + m).saturating_sub(n_i + t_ij);
    Ok(Lemma1Bounds {
        min_honest_j,
        max_contra_j: n_j - min_honest_j,
    })
}

/// Which of the two competing ledgers a member claims to have validated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum VoteSide {
    LedgerA,
    LedgerB,
}

/// A one-shot validation assignment under which two designated honest
/// observers reach quorums on contradictory same-sequence ledgers. Honest
/// members show the same vote to both observers; Byzantine members may
/// show each observer a different one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForkAssignment {
    pub observer_i: NodeId,
    pub observer_j: NodeId,
    pub byzantine: BTreeSet<NodeId>,
    /// Per member: (vote shown to observer i, vote shown to observer j).
    pub votes: BTreeMap<NodeId, (VoteSide, VoteSide)>,
}

impl ForkAssignment {
    /// Renders the assignment as a runnable scripted scenario over the
    /// given trust graph: honest votes become pre-run validations (one
    /// each), Byzantine two-faced votes become targeted injections, and
    /// running the scenario must end in a fork verdict.
    pub fn to_scenario_text(&self, graph: &TrustGraph) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        out.push_str("# Replay of a one-shot fork assignment found by exhaustive search.\n");
        out.push_str("scenario v1\n");
        match graph.policy() {
            QuorumPolicy::FractionCeil { num, den } => {
                let _ = writeln!(out, "policy fraction {num}/{den}");
            }
            QuorumPolicy::FloorDivK { k } => {
                let _ = writeln!(out, "policy floordiv {k}");
            }
        }
        out.push_str("adversary scripted\naccountability off\nmax-ticks 4\n");
        if !self.byzantine.is_empty() {
            let ids: Vec<String> = self.byzantine.iter().map(|b| b.to_string()).collect();
            let _ = writeln!(out, "byzantine {}", ids.join(","));
        }
        for id in graph.node_ids() {
            let members: Vec<String> = graph.unl(id).iter().map(|m| m.to_string()).collect();
            let _ = writeln!(
                out,
                "node {id} unl={} t={}",
                members.join(","),
                graph.fault_budget_of(id)
            );
        }
        out.push_str("ledger LA = genesis + a\nledger LB = genesis + b\n");
        for (member, (to_i, to_j)) in &self.votes {
            let name = |side: &VoteSide| match side {
                VoteSide::LedgerA => "LA",
                VoteSide::LedgerB => "LB",
            };
            if self.byzantine.contains(member) {
                let _ = writeln!(
                    out,
                    "inject val from={member} at=1 to={} ledger={}",
                    self.observer_i,
                    name(to_i)
                );
                let _ = writeln!(
                    out,
                    "inject val from={member} at=1 to={} ledger={}",
                    self.observer_j,
                    name(to_j)
                );
            } else {
                debug_assert_eq!(to_i, to_j, "honest members vote one way");
                let _ = writeln!(out, "init-validation {member} ledger={}", name(to_i));
            }
        }
        out
    }
}

pub const DEFAULT_SEARCH_LIMIT: usize = 12;

/// Builds the canonical two-observer topology: `n_i + n_j - overlap`
/// member nodes that trust only themselves, an observer `i` trusting the
/// first `n_i` members and an observer `j` trusting the last `n_j`, with
/// the given fault budget overrides on the observers. Returns the graph
/// and the two observer ids.
pub fn two_unl_graph(
    n_i: usize,
    n_j: usize,
    overlap: usize,
    policy: QuorumPolicy,
    t_i: usize,
    t_j: usize,
) -> Result<(TrustGraph, NodeId, NodeId), TrustError> {
    assert!(overlap <= n_i.min(n_j), "overlap exceeds UNL sizes");
    let members = n_i + n_j - overlap;
    let i = NodeId(members as u32);
    let j = NodeId(members as u32 + 1);
    let mut unls: Vec<BTreeSet<NodeId>> = (0..members)
        .map(|m| [NodeId(m as u32)].into_iter().collect())
        .collect();
    unls.push((0..n_i as u32).map(NodeId).collect());
    unls.push(
        ((n_i - overlap) as u32..members as u32)
            .map(NodeId)
            .collect(),
    );
    let mut overrides = BTreeMap::new();
    overrides.insert(i, t_i);
    overrides.insert(j, t_j);
    for m in 0..members {
        overrides.insert(NodeId(m as u32), 0usize);
    }
    let g = TrustGraph::new(unls, policy, &overrides)?;
    Ok((g, i, j))
}

fn mask_of(ids: impl Iterator<Item = usize>) -> u32 {
    ids.fold(0u32, |acc, idx| acc | (1 << idx))
}

/// Exhaustive one-shot fork search for the ordered observer pair (i, j).
///
/// Every member of either observer's UNL casts a validation for one of two
/// competing same-sequence ledgers. Byzantine members (any placement that
/// respects both observers' fault budgets) may show the two observers
/// different votes; under Byzantine accountability they cannot, which
/// makes the Byzantine choice irrelevant and reduces the search to honest
/// votes. Returns the first assignment under which observer i sees a
/// quorum for one ledger while observer j sees a quorum for the other,
/// or `None` after exhausting the space.
pub fn brute_force_fork_search(
    graph: &TrustGraph,
    i: NodeId,
    j: NodeId,
    accountability: bool,
) -> Result<Option<ForkAssignment>, AnalysisError> {
    brute_force_fork_search_with_limit(graph, i, j, accountability, DEFAULT_SEARCH_LIMIT)
}

pub fn brute_force_fork_search_with_limit(
    graph: &TrustGraph,
    i: NodeId,
    j: NodeId,
    accountability: bool,
    limit: usize,
) -> Result<Option<ForkAssignment>, AnalysisError> {
    let members: Vec<NodeId> = graph.unl(i).union(graph.unl(j)).copied().collect();
    let u = members.len();
    if u > limit || u > 31 {
        return Err(AnalysisError::SearchTooLarge { members: u, limit });
    }
    let index_of = |id: NodeId| members.binary_search(&id).expect("member listed");
    let unl_i = mask_of(graph.unl(i).iter().map(|&m| index_of(m)));
    let unl_j = mask_of(graph.unl(j).iter().map(|&m| index_of(m)));
    let q_i = graph.quorum_of(i) as u32;
    let q_j = graph.quorum_of(j) as u32;
    let t_i = graph.fault_budget_of(i) as u32;
    let t_j = graph.fault_budget_of(j) as u32;
    let full: u32 = if u == 31 { 0x7fff_ffff } else { (1 << u) - 1 };
    // The observers themselves are designated honest.
    let byz_candidates = full
        & !members
            .iter()
            .enumerate()
            .filter(|(_, id)| **id == i || **id == j)
            .fold(0u32, |acc, (idx, _)| acc | (1 << idx));

    let found = |byz: u32, to_i_a: u32, to_j_a: u32| -> ForkAssignment {
        let mut votes = BTreeMap::new();
        for (idx, id) in members.iter().enumerate() {
            let bit = 1u32 << idx;
            let vi = if to_i_a & bit != 0 {
                VoteSide::LedgerA
            } else {
                VoteSide::LedgerB
            };
            let vj = if to_j_a & bit != 0 {
                VoteSide::LedgerA
            } else {
                VoteSide::LedgerB
            };
            votes.insert(*id, (vi, vj));
        }
        ForkAssignment {
            observer_i: i,
            observer_j: j,
            byzantine: members
                .iter()
                .enumerate()
                .filter(|(idx, _)| byz & (1 << idx) != 0)
                .map(|(_, id)| *id)
                .collect(),
            votes,
        }
    };

    if accountability {
        // All votes single-valued; the Byzantine set adds nothing.
        for votes_a in 0..=full {
            let i_sees = (votes_a & unl_i).count_ones();
            let j_sees = (!votes_a & unl_j & full).count_ones();
            if i_sees >= q_i && j_sees >= q_j {
                return Ok(Some(found(0, votes_a, votes_a)));
            }
        }
        return Ok(None);
    }

    for byz in 0..=full {
        if byz & !byz_candidates != 0 {
            continue;
        }
        if (byz & unl_i).count_ones() > t_i || (byz & unl_j).count_ones() > t_j {
            continue;
        }
        let honest = full & !byz;
        // Subset enumeration: every honest vote split, every Byzantine
        // two-faced vote pair.
        let mut votes_a = honest;
        loop {
            let mut to_i_extra = byz;
            loop {
                let mut to_j_extra = byz;
                loop {
                    let i_sees = ((votes_a | to_i_extra) & unl_i).count_ones();
                    let j_sees = ((honest & !votes_a) & unl_j).count_ones()
                        + ((byz & !to_j_extra) & unl_j).count_ones();
                    if i_sees >= q_i && j_sees >= q_j {
                        return Ok(Some(found(byz, votes_a | to_i_extra, votes_a | to_j_extra)));
                    }
                    if to_j_extra == 0 {
                        break;
                    }
                    to_j_extra = (to_j_extra - 1) & byz;
                }
                if to_i_extra == 0 {
                    break;
                }
                to_i_extra = (to_i_extra - 1) & byz;
            }
            if votes_a == 0 {
                break;
            }
            votes_a = (votes_a - 1) & honest;
        }
    }
    Ok(None)
}

/// Exhaustively searched extremes for the validation-counting bounds:
/// for every observable `m` (validations observer i sees for ledger A),
/// the minimum number of honest UNL_j members voting A and the maximum
/// number of validations observer j can see for ledger B.
///
/// Members split into the standard two-UNL layout; up to `t_ij` members of
/// the overlap are Byzantine and may show the observers different votes.
/// Index `m` of the result holds `None` when no assignment realizes it.
pub fn lemma1_search_extremes(
    n_i: usize,
    n_j: usize,
    overlap: usize,
    t_ij: usize,
    limit: usize,
) -> Result<Vec<Option<(usize, usize)>>, AnalysisError> {
    if overlap > n_i.min(n_j) || t_ij > overlap {
        return Err(AnalysisError::Infeasible(format!(
            "overlap {overlap}, t_ij {t_ij} infeasible for n_i {n_i}, n_j {n_j}"
        )));
    }
    let u = n_i + n_j - overlap;
    if u > limit || u > 31 {
        return Err(AnalysisError::SearchTooLarge { members: u, limit });
    }
    let full: u32 = if u == 31 {
        0x7fff_ffff
    } else {
        (1u32 << u) - 1
    };
    let unl_i: u32 = (1u32 << n_i) - 1;
    let unl_j: u32 = full & !((1u32 << (n_i - overlap)) - 1);
    let overlap_mask = unl_i & unl_j;

    let mut extremes: Vec<Option<(usize, usize)>> = vec![None; n_i + 1];
    let mut byz = overlap_mask;
    loop {
        if (byz & overlap_mask) == byz && byz.count_ones() as usize <= t_ij {
            let honest = full & !byz;
            let mut votes_a = honest;
            loop {
                let mut to_i_extra = byz;
                loop {
                    let mut to_j_extra = byz;
                    loop {
                        let m = ((votes_a | to_i_extra) & unl_i).count_ones() as usize;
                        let honest_j_a = (votes_a & unl_j).count_ones() as usize;
                        let contra_j = ((honest & !votes_a) & unl_j).count_ones() as usize
                            + ((byz & !to_j_extra) & unl_j).count_ones() as usize;
                        let entry = extremes[m].get_or_insert((honest_j_a, contra_j));
                        entry.0 = entry.0.min(honest_j_a);
                        entry.1 = entry.1.max(contra_j);
                        if to_j_extra == 0 {
                            break;
                        }
                        to_j_extra = (to_j_extra - 1) & byz;
                    }
                    if to_i_extra == 0 {
                        break;
                    }
                    to_i_extra = (to_i_extra - 1) & byz;
                }
                if votes_a == 0 {
                    break;
                }
                votes_a = (votes_a - 1) & honest;
            }
        }
        if byz == 0 {
            break;
        }
        byz = (byz - 1) & overlap_mask;
    }
    Ok(extremes)
}

/// A violation of branch stability: after a ledger gathered
/// more-than-half honest validation support in every UNL, some honest node
/// still validated a competing ledger at or above its sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StabilityViolation {
    pub trigger_ledger: LedgerHash,
    pub trigger_seq: Seq,
    pub violator: NodeId,
    pub violating_ledger: LedgerHash,
    pub violating_seq: Seq,
    pub tick: Tick,
}

/// Checks the branch-stability property over a finished run: once some
/// ledger L has, for every honest node i, strictly more than half of UNL_i
/// validating it (counting honest validators only), no later honest
/// validation may target a non-descendant of L at sequence >= seq(L).
///
/// A tick is one instant: validations emitted in the same tick cannot have
/// observed each other, so each tick's batch is checked against triggers
/// established at strictly earlier ticks and only then folded into the
/// validator counts.
pub fn check_branch_stability(
    report: &RunReport,
    graph: &TrustGraph,
    store: &LedgerStore,
) -> Vec<StabilityViolation> {
    let honest: Vec<NodeId> = graph
        .node_ids()
        .filter(|id| !report.byzantine.contains(id))
        .collect();
    let mut validators_of: BTreeMap<LedgerHash, BTreeSet<NodeId>> = BTreeMap::new();
    let mut triggered: BTreeMap<LedgerHash, Seq> = BTreeMap::new();
    let mut violations = Vec::new();

    let mut records = report.trace.iter().peekable();
    while let Some(first) = records.peek() {
        let tick = first.tick;
        let mut batch: Vec<(NodeId, LedgerHash, Seq)> = Vec::new();
        while let Some(r) = records.peek() {
            if r.tick != tick {
                break;
            }
            if let TraceKind::Validate { ledger, seq } = r.kind {
                batch.push((r.node, ledger, seq));
            }
            records.next();
        }

        for (node, ledger, seq) in &batch {
            if triggered.is_empty() {
                break;
            }
            let min_trigger_seq = *triggered.values().min().expect("non-empty");
            let mut on_chain: BTreeSet<LedgerHash> = BTreeSet::new();
            let mut cur = store.get(ledger).expect("trace ledgers are stored");
            loop {
                on_chain.insert(cur.hash());
                if cur.seq() <= min_trigger_seq {
                    break;
                }
                match cur.parent() {
                    Some(p) => cur = store.get(&p).expect("closed under parents"),
                    None => break,
                }
            }
            for (trigger, trigger_seq) in &triggered {
                if *seq >= *trigger_seq && !on_chain.contains(trigger) {
                    violations.push(StabilityViolation {
                        trigger_ledger: *trigger,
                        trigger_seq: *trigger_seq,
                        violator: *node,
                        violating_ledger: *ledger,
                        violating_seq: *seq,
                        tick,
                    });
                }
            }
        }

        for (node, ledger, seq) in &batch {
            let set = validators_of.entry(*ledger).or_default();
            set.insert(*node);
            if let std::collections::btree_map::Entry::Vacant(e) = triggered.entry(*ledger) {
                let everywhere_majority = honest.iter().all(|&i| {
                    let in_unl = set.intersection(graph.unl(i)).count();
                    2 * in_unl > graph.unl_size(i)
                });
                if everywhere_majority {
                    e.insert(*seq);
                }
            }
        }
    }
    violations
}
