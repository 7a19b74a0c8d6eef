//! Deterministic simulator and analysis toolkit for the XRP Ledger
//! Consensus Protocol (XRP LCP).
//!
//! The crate executes the full per-node state machine — deliberation,
//! validation counting and the preferred-branch fork choice — under a
//! scriptable network adversary that can delay, reorder, partition and
//! (for Byzantine nodes) forge or equivocate, then checks the runs for
//! forks and wedged ("stuck") states. It also ships exact evaluators and
//! brute-force oracles for the pairwise UNL-overlap conditions that govern
//! safety of the protocol.
//!
//! Everything is deterministic: a run is a pure function of its scenario
//! (including the seed), all collections iterate in a fixed order, and
//! reports render byte-identically across runs and platforms.
//!
//! ```
//! use std::collections::{BTreeMap, BTreeSet};
//! use lcp_sim::{run, NodeId, QuorumPolicy, Scenario, TrustGraph, TxId};
//!
//! // Five nodes sharing one UNL commit a new ledger every tick.
//! let unl: BTreeSet<NodeId> = (0..5).map(NodeId).collect();
//! let graph = TrustGraph::new(
//!     (0..5).map(|_| unl.clone()).collect(),
//!     QuorumPolicy::FractionCeil { num: 4, den: 5 },
//!     &BTreeMap::new(),
//! )
//! .unwrap();
//! let mut scenario = Scenario::civil(graph, 10);
//! // A transaction needs majority support to survive deliberation, so
//! // submit it to three of the five nodes.
//! for id in 0..3 {
//!     scenario.initial_pending.insert(NodeId(id), [TxId::new("pay")].into());
//! }
//!
//! let report = run(&scenario).unwrap();
//! assert!(report.fork.is_none());
//! assert!(report.per_node_final[&NodeId(0)].fully_validated_seq > 5);
//! assert!(report.ledgers.iter().any(|l| l.txs.iter().any(|t| t.as_str() == "pay")));
//! ```

pub mod analysis;
pub mod ledger;
pub mod protocol;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod trust;

pub use analysis::{
    brute_force_fork_search, check_branch_stability, detect_fork, detect_stuck, lemma1_bounds,
    AnalysisError, ForkAssignment, ForkWitness, Lemma1Bounds, StuckEvidence, VoteSide,
};
pub use ledger::{genesis_ledger, phi, Ledger, LedgerError, LedgerHash, LedgerStore, Seq, TxId};
pub use protocol::{
    Message, MessageKind, NodeState, Proposal, StepOutcome, ThresholdSchedule, Validation,
};
pub use report::{RunReport, StuckVerdict, TraceKind, TraceRecord};
pub use scenario::{parse_scenario, ScenarioError};
pub use sim::{
    run, AdversaryKind, AdversaryPolicy, Inject, InjectPayload, LedgerDef, PartitionWindow, Rule,
    RuleAction, Scenario, SimError, StopCondition, Tick, World,
};
pub use trust::{
    quorum, NodeId, OverlapCondition, PairCheck, PairFailure, QuorumPolicy, TrustError, TrustGraph,
};
