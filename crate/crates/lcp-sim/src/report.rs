//! Run reports and trace records.
//!
//! A report is a single structured-text document with a fixed field order;
//! the trace section is a line-delimited log of every protocol event an
//! honest node emitted or observed. Rendering is byte-stable: the same
//! scenario and seed always produce the identical document, which is what
//! the golden-file tests pin.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::analysis::{ForkWitness, StuckEvidence};
use crate::ledger::{LedgerHash, Seq, TxId};
use crate::sim::Tick;
use crate::trust::NodeId;

pub const REPORT_SCHEMA: &str = "lcp-report-v1";

/// One protocol event. `Propose`, `Validate` and `SwitchBranch` record
/// emissions by the node; `FullyValidate` records the node's fully
/// validated tip advancing upon a received quorum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Propose {
        prior: LedgerHash,
        round: u32,
        txs: Vec<TxId>,
    },
    Validate {
        ledger: LedgerHash,
        seq: Seq,
    },
    FullyValidate {
        ledger: LedgerHash,
        seq: Seq,
    },
    SwitchBranch {
        from: LedgerHash,
        to: LedgerHash,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub tick: Tick,
    pub node: NodeId,
    pub kind: TraceKind,
}

impl TraceRecord {
    pub fn render_line(&self) -> String {
        match &self.kind {
            TraceKind::Propose { prior, round, txs } => format!(
                "{} node={} propose prior={} round={} txs={}",
                self.tick,
                self.node,
                prior,
                round,
                join_txs(txs)
            ),
            TraceKind::Validate { ledger, seq } => format!(
                "{} node={} validate ledger={} seq={}",
                self.tick, self.node, ledger, seq
            ),
            TraceKind::FullyValidate { ledger, seq } => format!(
                "{} node={} fully-validate ledger={} seq={}",
                self.tick, self.node, ledger, seq
            ),
            TraceKind::SwitchBranch { from, to } => format!(
                "{} node={} switch-branch from={} to={}",
                self.tick, self.node, from, to
            ),
        }
    }
}

fn join_txs(txs: &[TxId]) -> String {
    txs.iter().map(TxId::as_str).collect::<Vec<_>>().join(",")
}

fn join_nodes(nodes: impl IntoIterator<Item = NodeId>) -> String {
    let parts: Vec<String> = nodes.into_iter().map(|n| n.to_string()).collect();
    if parts.is_empty() {
        "-".to_string()
    } else {
        parts.join(",")
    }
}

/// Final protocol state of one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeFinal {
    pub working: LedgerHash,
    pub fully_validated: LedgerHash,
    pub fully_validated_seq: Seq,
    pub s_max: Seq,
}

/// One stored ledger, as serialized into the report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerLine {
    pub hash: LedgerHash,
    pub parent: Option<LedgerHash>,
    pub seq: Seq,
    pub txs: Vec<TxId>,
}

/// The stuck verdict of a run: probes are optional, so "not probed" is
/// distinct from "probed and clear".
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StuckVerdict {
    NotProbed,
    Clear { probe_ticks: Tick },
    Stuck(StuckEvidence),
}

impl StuckVerdict {
    pub fn is_stuck(&self) -> bool {
        matches!(self, StuckVerdict::Stuck(_))
    }
}

/// Complete record of one run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub seed: u64,
    pub ticks_run: Tick,
    pub node_count: usize,
    pub byzantine: BTreeSet<NodeId>,
    pub per_node_final: BTreeMap<NodeId, NodeFinal>,
    pub named_ledgers: BTreeMap<String, LedgerHash>,
    pub ledgers: Vec<LedgerLine>,
    pub trace: Vec<TraceRecord>,
    pub fork: Option<ForkWitness>,
    pub stuck: StuckVerdict,
}

impl RunReport {
    /// Every fully-validate trace event of `node`, in order.
    pub fn full_validation_history(&self, node: NodeId) -> Vec<(Tick, LedgerHash, Seq)> {
        self.trace
            .iter()
            .filter_map(|r| match r.kind {
                TraceKind::FullyValidate { ledger, seq } if r.node == node => {
                    Some((r.tick, ledger, seq))
                }
                _ => None,
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{REPORT_SCHEMA}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "ticks {}", self.ticks_run);
        let _ = writeln!(out, "nodes {}", self.node_count);
        let _ = writeln!(
            out,
            "byzantine {}",
            join_nodes(self.byzantine.iter().copied())
        );
        match &self.fork {
            None => {
                let _ = writeln!(out, "verdict-fork none");
            }
            Some(w) => {
                let _ = writeln!(
                    out,
                    "verdict-fork nodes={},{} seqs={},{} ledgers={},{}",
                    w.nodes.0, w.nodes.1, w.seqs.0, w.seqs.1, w.ledgers.0, w.ledgers.1
                );
            }
        }
        match &self.stuck {
            StuckVerdict::NotProbed => {
                let _ = writeln!(out, "verdict-stuck not-probed");
            }
            StuckVerdict::Clear { probe_ticks } => {
                let _ = writeln!(out, "verdict-stuck clear probe={probe_ticks}");
            }
            StuckVerdict::Stuck(e) => {
                let _ = writeln!(
                    out,
                    "verdict-stuck probe={} nodes={}",
                    e.probe_ticks,
                    join_nodes(e.stuck.iter().map(|s| s.node))
                );
                for s in &e.stuck {
                    let last = match s.last_full_validation {
                        None => "-".to_string(),
                        Some((tick, seq)) => format!("{tick}@seq{seq}"),
                    };
                    let _ = writeln!(
                        out,
                        "stuck-node {} last-full={} pinned={}",
                        s.node, last, s.pinned_branch
                    );
                }
            }
        }
        for (id, n) in &self.per_node_final {
            let _ = writeln!(
                out,
                "node {} working={} fully-validated={} fv-seq={} s-max={}",
                id, n.working, n.fully_validated, n.fully_validated_seq, n.s_max
            );
        }
        for (name, hash) in &self.named_ledgers {
            let _ = writeln!(out, "name {name} {hash}");
        }
        for l in &self.ledgers {
            let parent = l
                .parent
                .map(|p| p.to_string())
                .unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                out,
                "ledger {} parent={} seq={} txs={}",
                l.hash,
                parent,
                l.seq,
                join_txs(&l.txs)
            );
        }
        let _ = writeln!(out, "trace");
        for r in &self.trace {
            let _ = writeln!(out, "{}", r.render_line());
        }
        let _ = writeln!(out, "end");
        out
    }
}
