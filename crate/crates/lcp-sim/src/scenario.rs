//! Scenario file format.
//!
//! Scenarios are human-readable line-oriented text: one directive per line,
//! `#` comments, blank lines ignored. Node sets are written as comma lists
//! of ids and inclusive ranges (`0-4,7`), or `*` for every node. The file
//! must parse to exactly one scenario; unknown directives and unknown keys
//! are rejected with the offending line number.
//!
//! ```text
//! scenario v1
//! policy fraction 4/5
//! adversary civil delay=1
//! max-ticks 8
//! node 0 unl=0-4
//! ...
//! ```
//!
//! See the repository README for the full directive list.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use thiserror::Error;

use crate::ledger::TxId;
use crate::protocol::{MessageKind, ThresholdSchedule};
use crate::sim::{
    AdversaryKind, AdversaryPolicy, Inject, InjectPayload, LedgerDef, PartitionWindow, Rule,
    RuleAction, Scenario, SimError, StopCondition, Tick,
};
use crate::trust::{NodeId, QuorumPolicy, TrustError, TrustGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scenario is invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        msg: msg.into(),
    }
}

/// A node set expression: `*`, or a comma list of ids and inclusive ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
enum NodeSetExpr {
    All,
    List(Vec<(u32, u32)>),
}

impl NodeSetExpr {
    fn parse(s: &str) -> Result<Self, String> {
        if s == "*" {
            return Ok(NodeSetExpr::All);
        }
        let mut ranges = Vec::new();
        for part in s.split(',') {
            if part.is_empty() {
                return Err(format!("empty element in node set `{s}`"));
            }
            let (lo, hi) = match part.split_once('-') {
                None => {
                    let id: u32 = part.parse().map_err(|_| format!("bad node id `{part}`"))?;
                    (id, id)
                }
                Some((a, b)) => {
                    let lo: u32 = a.parse().map_err(|_| format!("bad node id `{a}`"))?;
                    let hi: u32 = b.parse().map_err(|_| format!("bad node id `{b}`"))?;
                    if hi < lo {
                        return Err(format!("descending range `{part}`"));
                    }
                    (lo, hi)
                }
            };
            ranges.push((lo, hi));
        }
        Ok(NodeSetExpr::List(ranges))
    }

    fn resolve(&self, node_count: u32) -> Result<BTreeSet<NodeId>, String> {
        match self {
            NodeSetExpr::All => Ok((0..node_count).map(NodeId).collect()),
            NodeSetExpr::List(ranges) => {
                let mut out = BTreeSet::new();
                for &(lo, hi) in ranges {
                    if hi >= node_count {
                        return Err(format!(
                            "node id {hi} out of range (network has {node_count} nodes)"
                        ));
                    }
                    out.extend((lo..=hi).map(NodeId));
                }
                Ok(out)
            }
        }
    }
}

fn parse_txs(s: &str) -> Result<BTreeSet<TxId>, String> {
    if s.is_empty() {
        return Ok(BTreeSet::new());
    }
    let mut out = BTreeSet::new();
    for part in s.split(',') {
        if part.is_empty() {
            return Err(format!("empty transaction id in `{s}`"));
        }
        out.insert(TxId::new(part));
    }
    Ok(out)
}

fn parse_fraction(s: &str) -> Result<(u32, u32), String> {
    let (num, den) = s
        .split_once('/')
        .ok_or_else(|| format!("expected a fraction like 4/5, got `{s}`"))?;
    let num: u32 = num.parse().map_err(|_| format!("bad numerator `{num}`"))?;
    let den: u32 = den
        .parse()
        .map_err(|_| format!("bad denominator `{den}`"))?;
    Ok((num, den))
}

/// `key=value` tokens with order-independent lookup and strict key checking.
struct KeyValues<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str, bool)>, // key, value, consumed
}

impl<'a> KeyValues<'a> {
    fn new(line: usize, tokens: &[&'a str]) -> Result<Self, ScenarioError> {
        let mut pairs = Vec::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected key=value, got `{t}`")))?;
            pairs.push((k, v, false));
        }
        Ok(KeyValues { line, pairs })
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        for p in &mut self.pairs {
            if p.0 == key && !p.2 {
                p.2 = true;
                return Some(p.1);
            }
        }
        None
    }

    fn require(&mut self, key: &str) -> Result<&'a str, ScenarioError> {
        self.take(key)
            .ok_or_else(|| err(self.line, format!("missing required key `{key}`")))
    }

    fn finish(self) -> Result<(), ScenarioError> {
        if let Some(p) = self.pairs.iter().find(|p| !p.2) {
            return Err(err(self.line, format!("unknown key `{}`", p.0)));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Builder {
    policy: Option<QuorumPolicy>,
    adversary: Option<(usize, AdvSpec)>,
    max_ticks: Option<Tick>,
    probe_ticks: Tick,
    seed: u64,
    schedule: Option<ThresholdSchedule>,
    accountability: bool,
    byzantine: Option<(usize, NodeSetExpr)>,
    nodes: BTreeMap<u32, (usize, NodeSetExpr, Option<usize>)>,
    pending: Vec<(usize, NodeSetExpr, BTreeSet<TxId>)>,
    ledger_defs: Vec<LedgerDef>,
    init_validations: Vec<(usize, NodeSetExpr, String)>,
    rules: Vec<(usize, RuleSpec)>,
    partitions: Vec<(usize, Vec<NodeSetExpr>, Tick, Tick)>,
    injects: Vec<(usize, InjectSpec)>,
    stop: Option<StopCondition>,
    stagger: Vec<(usize, NodeSetExpr, Tick, Tick)>,
    submits: Vec<(usize, NodeSetExpr, Tick, BTreeSet<TxId>)>,
}

enum AdvSpec {
    Civil {
        delay: Tick,
    },
    Seeded {
        delay_min: Tick,
        delay_max: Tick,
        drop_per_mille: u32,
    },
    Scripted,
}

struct RuleSpec {
    kind: Option<MessageKind>,
    from: NodeSetExpr,
    to: NodeSetExpr,
    sent_from: Tick,
    sent_until: Tick,
    cross_only: bool,
    action: RuleAction,
}

struct InjectSpec {
    kind: MessageKind,
    from: u32,
    to: NodeSetExpr,
    at: Tick,
    ledger: String,
    round: u32,
    txs: BTreeSet<TxId>,
}

/// Parses the scenario text, rejecting unknown directives and keys, and
/// validates the result into a runnable `Scenario`.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut b = Builder::default();
    let mut saw_header = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if !saw_header {
            if tokens != ["scenario", "v1"] {
                return Err(err(line_no, "file must begin with `scenario v1`"));
            }
            saw_header = true;
            continue;
        }
        match tokens[0] {
            "scenario" => return Err(err(line_no, "duplicate `scenario` header")),
            "policy" => {
                if b.policy.is_some() {
                    return Err(err(line_no, "duplicate `policy`"));
                }
                b.policy = Some(parse_policy(line_no, &tokens[1..])?);
            }
            "adversary" => {
                if b.adversary.is_some() {
                    return Err(err(line_no, "duplicate `adversary`"));
                }
                b.adversary = Some((line_no, parse_adversary(line_no, &tokens[1..])?));
            }
            "max-ticks" => {
                let v = one_value(line_no, &tokens, "max-ticks")?;
                b.max_ticks = Some(parse_num(line_no, v, "max-ticks")?);
            }
            "probe-ticks" => {
                let v = one_value(line_no, &tokens, "probe-ticks")?;
                b.probe_ticks = parse_num(line_no, v, "probe-ticks")?;
            }
            "seed" => {
                let v = one_value(line_no, &tokens, "seed")?;
                b.seed = parse_num(line_no, v, "seed")?;
            }
            "schedule" => {
                if tokens.len() < 2 {
                    return Err(err(line_no, "schedule needs at least one threshold"));
                }
                let steps = tokens[1..]
                    .iter()
                    .map(|t| parse_fraction(t).map_err(|m| err(line_no, m)))
                    .collect::<Result<Vec<_>, _>>()?;
                b.schedule = Some(ThresholdSchedule::new(steps).map_err(|m| err(line_no, m))?);
            }
            "accountability" => {
                let v = one_value(line_no, &tokens, "accountability")?;
                b.accountability = match v {
                    "on" => true,
                    "off" => false,
                    other => return Err(err(line_no, format!("expected on/off, got `{other}`"))),
                };
            }
            "byzantine" => {
                let v = one_value(line_no, &tokens, "byzantine")?;
                b.byzantine = Some((line_no, NodeSetExpr::parse(v).map_err(|m| err(line_no, m))?));
            }
            "node" => {
                if tokens.len() < 3 {
                    return Err(err(line_no, "usage: node <id|range> unl=<set> [t=<n>]"));
                }
                let ids = match NodeSetExpr::parse(tokens[1]).map_err(|m| err(line_no, m))? {
                    NodeSetExpr::All => {
                        return Err(err(line_no, "`node *` is not allowed; list explicit ids"))
                    }
                    NodeSetExpr::List(ranges) => ranges,
                };
                let mut kv = KeyValues::new(line_no, &tokens[2..])?;
                let unl = NodeSetExpr::parse(kv.require("unl")?).map_err(|m| err(line_no, m))?;
                let t = kv
                    .take("t")
                    .map(|v| parse_num::<usize>(line_no, v, "t"))
                    .transpose()?;
                kv.finish()?;
                for (lo, hi) in ids {
                    for id in lo..=hi {
                        if b.nodes.insert(id, (line_no, unl.clone(), t)).is_some() {
                            return Err(err(line_no, format!("duplicate node {id}")));
                        }
                    }
                }
            }
            "pending" => {
                if tokens.len() != 3 {
                    return Err(err(line_no, "usage: pending <set> txs=<list>"));
                }
                let set = NodeSetExpr::parse(tokens[1]).map_err(|m| err(line_no, m))?;
                let mut kv = KeyValues::new(line_no, &tokens[2..])?;
                let txs = parse_txs(kv.require("txs")?).map_err(|m| err(line_no, m))?;
                kv.finish()?;
                b.pending.push((line_no, set, txs));
            }
            "ledger" => {
                // ledger NAME = PARENT [+ txs]
                let rest = line["ledger".len()..].trim();
                let (name, def) = rest
                    .split_once('=')
                    .ok_or_else(|| err(line_no, "usage: ledger NAME = PARENT [+ tx,tx]"))?;
                let name = name.trim();
                if name.is_empty() || name == "genesis" || !name.chars().all(valid_name_char) {
                    return Err(err(line_no, format!("bad ledger name `{name}`")));
                }
                let (parent, txs) = match def.split_once('+') {
                    None => (def.trim(), BTreeSet::new()),
                    Some((p, t)) => (p.trim(), parse_txs(t.trim()).map_err(|m| err(line_no, m))?),
                };
                if parent.is_empty() {
                    return Err(err(line_no, "missing parent ledger name"));
                }
                b.ledger_defs.push(LedgerDef {
                    name: name.to_string(),
                    parent: (parent != "genesis").then(|| parent.to_string()),
                    txs,
                });
            }
            "init-validation" => {
                if tokens.len() != 3 {
                    return Err(err(line_no, "usage: init-validation <set> ledger=<name>"));
                }
                let set = NodeSetExpr::parse(tokens[1]).map_err(|m| err(line_no, m))?;
                let mut kv = KeyValues::new(line_no, &tokens[2..])?;
                let ledger = kv.require("ledger")?.to_string();
                kv.finish()?;
                b.init_validations.push((line_no, set, ledger));
            }
            "rule" => {
                b.rules.push((line_no, parse_rule(line_no, &tokens[1..])?));
            }
            "partition" => {
                // partition <set> | <set> [| ...] from=<t> until=<t>
                let rest = line["partition".len()..].trim();
                let words: Vec<&str> = rest.split_whitespace().collect();
                let kv_start = words
                    .iter()
                    .position(|w| w.contains('='))
                    .ok_or_else(|| err(line_no, "partition needs from= and until="))?;
                let group_text = words[..kv_start].join(" ");
                let groups = group_text
                    .split('|')
                    .map(|g| NodeSetExpr::parse(g.trim()).map_err(|m| err(line_no, m)))
                    .collect::<Result<Vec<_>, _>>()?;
                if groups.len() < 2 {
                    return Err(err(line_no, "partition needs at least two groups"));
                }
                let mut kv = KeyValues::new(line_no, &words[kv_start..])?;
                let from = parse_num(line_no, kv.require("from")?, "from")?;
                let until = parse_num(line_no, kv.require("until")?, "until")?;
                kv.finish()?;
                if until <= from {
                    return Err(err(line_no, "partition window must end after it starts"));
                }
                b.partitions.push((line_no, groups, from, until));
            }
            "inject" => {
                b.injects
                    .push((line_no, parse_inject(line_no, &tokens[1..])?));
            }
            "stop" => {
                if tokens.len() != 2 {
                    return Err(err(line_no, "usage: stop full-validated-seq=<n>"));
                }
                let mut kv = KeyValues::new(line_no, &tokens[1..])?;
                let seq = parse_num(line_no, kv.require("full-validated-seq")?, "seq")?;
                kv.finish()?;
                b.stop = Some(StopCondition::AllFullyValidatedSeq(seq));
            }
            "submit" => {
                if tokens.len() != 4 {
                    return Err(err(line_no, "usage: submit <set> at=<tick> txs=<list>"));
                }
                let set = NodeSetExpr::parse(tokens[1]).map_err(|m| err(line_no, m))?;
                let mut kv = KeyValues::new(line_no, &tokens[2..])?;
                let at = parse_num(line_no, kv.require("at")?, "at")?;
                let txs = parse_txs(kv.require("txs")?).map_err(|m| err(line_no, m))?;
                kv.finish()?;
                b.submits.push((line_no, set, at, txs));
            }
            "stagger" => {
                if tokens.len() != 4 {
                    return Err(err(line_no, "usage: stagger <set> every=<n> offset=<n>"));
                }
                let set = NodeSetExpr::parse(tokens[1]).map_err(|m| err(line_no, m))?;
                let mut kv = KeyValues::new(line_no, &tokens[2..])?;
                let every = parse_num(line_no, kv.require("every")?, "every")?;
                let offset = parse_num(line_no, kv.require("offset")?, "offset")?;
                kv.finish()?;
                if every == 0 {
                    return Err(err(line_no, "stagger interval must be positive"));
                }
                b.stagger.push((line_no, set, every, offset));
            }
            other => return Err(err(line_no, format!("unknown directive `{other}`"))),
        }
    }

    if !saw_header {
        return Err(err(1, "file must begin with `scenario v1`"));
    }
    build(b)
}

fn valid_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn one_value<'a>(line: usize, tokens: &[&'a str], what: &str) -> Result<&'a str, ScenarioError> {
    if tokens.len() != 2 {
        return Err(err(line, format!("`{what}` takes exactly one value")));
    }
    Ok(tokens[1])
}

fn parse_num<T: FromStr>(line: usize, v: &str, what: &str) -> Result<T, ScenarioError> {
    v.parse()
        .map_err(|_| err(line, format!("bad {what} value `{v}`")))
}

fn parse_policy(line: usize, tokens: &[&str]) -> Result<QuorumPolicy, ScenarioError> {
    match tokens {
        ["fraction", f] => {
            let (num, den) = parse_fraction(f).map_err(|m| err(line, m))?;
            Ok(QuorumPolicy::FractionCeil { num, den })
        }
        ["floordiv", k] => Ok(QuorumPolicy::FloorDivK {
            k: parse_num(line, k, "k")?,
        }),
        _ => Err(err(
            line,
            "usage: policy fraction <n>/<d> | policy floordiv <k>",
        )),
    }
}

fn parse_adversary(line: usize, tokens: &[&str]) -> Result<AdvSpec, ScenarioError> {
    match tokens.first() {
        Some(&"civil") => {
            let mut kv = KeyValues::new(line, &tokens[1..])?;
            let delay = kv
                .take("delay")
                .map(|v| parse_num(line, v, "delay"))
                .transpose()?
                .unwrap_or(1);
            kv.finish()?;
            Ok(AdvSpec::Civil { delay })
        }
        Some(&"seeded") => {
            let mut kv = KeyValues::new(line, &tokens[1..])?;
            let delay = kv.require("delay")?;
            let (lo, hi) = delay
                .split_once("..")
                .ok_or_else(|| err(line, "seeded delay is a range like 1..3"))?;
            let delay_min = parse_num(line, lo, "delay")?;
            let delay_max = parse_num(line, hi, "delay")?;
            let drop_per_mille = kv
                .take("drop-per-mille")
                .map(|v| parse_num(line, v, "drop-per-mille"))
                .transpose()?
                .unwrap_or(0);
            kv.finish()?;
            Ok(AdvSpec::Seeded {
                delay_min,
                delay_max,
                drop_per_mille,
            })
        }
        Some(&"scripted") => {
            if tokens.len() != 1 {
                return Err(err(line, "`adversary scripted` takes no keys"));
            }
            Ok(AdvSpec::Scripted)
        }
        _ => Err(err(line, "usage: adversary civil|seeded|scripted ...")),
    }
}

fn parse_rule(line: usize, tokens: &[&str]) -> Result<RuleSpec, ScenarioError> {
    // rule <kind> from=<set> to=<set> sent=<tick|a..b> [cross] (drop | delay=<n>)
    if tokens.is_empty() {
        return Err(err(line, "empty rule"));
    }
    let kind = match tokens[0] {
        "prop" => Some(MessageKind::Proposal),
        "val" => Some(MessageKind::Validation),
        "all" => None,
        other => return Err(err(line, format!("unknown message kind `{other}`"))),
    };
    let mut cross_only = false;
    let mut action: Option<RuleAction> = None;
    let mut kv_tokens = Vec::new();
    for t in &tokens[1..] {
        match *t {
            "cross" => cross_only = true,
            "drop" => {
                if action.replace(RuleAction::Drop).is_some() {
                    return Err(err(line, "rule has two actions"));
                }
            }
            other => kv_tokens.push(other),
        }
    }
    let mut kv = KeyValues::new(line, &kv_tokens)?;
    let from = NodeSetExpr::parse(kv.require("from")?).map_err(|m| err(line, m))?;
    let to = NodeSetExpr::parse(kv.require("to")?).map_err(|m| err(line, m))?;
    let sent = kv.require("sent")?;
    let (sent_from, sent_until) = match sent.split_once("..") {
        None => {
            let t: Tick = parse_num(line, sent, "sent")?;
            (t, t)
        }
        Some((a, b)) => (parse_num(line, a, "sent")?, parse_num(line, b, "sent")?),
    };
    if let Some(d) = kv.take("delay") {
        let d: Tick = parse_num(line, d, "delay")?;
        if action.replace(RuleAction::DelayBy(d)).is_some() {
            return Err(err(line, "rule has two actions"));
        }
    }
    kv.finish()?;
    let action = action.ok_or_else(|| err(line, "rule needs `drop` or `delay=<n>`"))?;
    Ok(RuleSpec {
        kind,
        from,
        to,
        sent_from,
        sent_until,
        cross_only,
        action,
    })
}

fn parse_inject(line: usize, tokens: &[&str]) -> Result<InjectSpec, ScenarioError> {
    // inject val from=<id> at=<tick> to=<set> ledger=<name>
    // inject prop from=<id> at=<tick> to=<set> prior=<name> round=<n> txs=<list>
    if tokens.is_empty() {
        return Err(err(line, "empty inject"));
    }
    let kind = match tokens[0] {
        "prop" => MessageKind::Proposal,
        "val" => MessageKind::Validation,
        other => return Err(err(line, format!("unknown message kind `{other}`"))),
    };
    let mut kv = KeyValues::new(line, &tokens[1..])?;
    let from: u32 = parse_num(line, kv.require("from")?, "from")?;
    let at: Tick = parse_num(line, kv.require("at")?, "at")?;
    let to = NodeSetExpr::parse(kv.require("to")?).map_err(|m| err(line, m))?;
    let (ledger, round, txs) = match kind {
        MessageKind::Validation => (kv.require("ledger")?.to_string(), 0, BTreeSet::new()),
        MessageKind::Proposal => (
            kv.require("prior")?.to_string(),
            parse_num(line, kv.require("round")?, "round")?,
            parse_txs(kv.require("txs")?).map_err(|m| err(line, m))?,
        ),
    };
    kv.finish()?;
    Ok(InjectSpec {
        kind,
        from,
        to,
        at,
        ledger,
        round,
        txs,
    })
}

fn build(b: Builder) -> Result<Scenario, ScenarioError> {
    let policy = b
        .policy
        .ok_or_else(|| ScenarioError::Invalid("missing `policy`".into()))?;
    let max_ticks = b
        .max_ticks
        .ok_or_else(|| ScenarioError::Invalid("missing `max-ticks`".into()))?;
    let (adv_line, adv) = b
        .adversary
        .ok_or_else(|| ScenarioError::Invalid("missing `adversary`".into()))?;

    if b.nodes.is_empty() {
        return Err(ScenarioError::Invalid("no `node` entries".into()));
    }
    let node_count = b.nodes.keys().max().unwrap() + 1;
    if b.nodes.len() as u32 != node_count {
        return Err(ScenarioError::Invalid(format!(
            "node ids must be dense 0..{node_count} ({} defined)",
            b.nodes.len()
        )));
    }

    let mut unls = Vec::with_capacity(node_count as usize);
    let mut overrides = BTreeMap::new();
    for (id, (line, unl, t)) in &b.nodes {
        let members = unl.resolve(node_count).map_err(|m| err(*line, m))?;
        unls.push(members);
        if let Some(t) = t {
            overrides.insert(NodeId(*id), *t);
        }
    }
    let graph = TrustGraph::new(unls, policy, &overrides)?;

    let byzantine = match &b.byzantine {
        None => BTreeSet::new(),
        Some((line, expr)) => expr.resolve(node_count).map_err(|m| err(*line, m))?,
    };

    let kind = match adv {
        AdvSpec::Civil { delay } => {
            if !b.rules.is_empty() || !b.partitions.is_empty() || !b.injects.is_empty() {
                return Err(err(
                    adv_line,
                    "rule/partition/inject directives need `adversary scripted`",
                ));
            }
            AdversaryKind::Civil { delay }
        }
        AdvSpec::Seeded {
            delay_min,
            delay_max,
            drop_per_mille,
        } => {
            if !b.rules.is_empty() || !b.partitions.is_empty() || !b.injects.is_empty() {
                return Err(err(
                    adv_line,
                    "rule/partition/inject directives need `adversary scripted`",
                ));
            }
            AdversaryKind::Seeded {
                delay_min,
                delay_max,
                drop_per_mille,
            }
        }
        AdvSpec::Scripted => {
            let mut rules = Vec::new();
            for (line, spec) in &b.rules {
                rules.push(Rule {
                    kind: spec.kind,
                    from: spec.from.resolve(node_count).map_err(|m| err(*line, m))?,
                    to: spec.to.resolve(node_count).map_err(|m| err(*line, m))?,
                    sent_from: spec.sent_from,
                    sent_until: spec.sent_until,
                    cross_only: spec.cross_only,
                    action: spec.action,
                });
            }
            let mut partitions = Vec::new();
            for (line, groups, from, until) in &b.partitions {
                partitions.push(PartitionWindow {
                    groups: groups
                        .iter()
                        .map(|g| g.resolve(node_count).map_err(|m| err(*line, m)))
                        .collect::<Result<Vec<_>, _>>()?,
                    from: *from,
                    until: *until,
                });
            }
            let mut injects = Vec::new();
            for (line, spec) in &b.injects {
                if spec.from >= node_count {
                    return Err(err(*line, format!("unknown inject sender {}", spec.from)));
                }
                injects.push(Inject {
                    at: spec.at,
                    from: NodeId(spec.from),
                    to: spec.to.resolve(node_count).map_err(|m| err(*line, m))?,
                    payload: match spec.kind {
                        MessageKind::Validation => InjectPayload::Validation {
                            ledger: spec.ledger.clone(),
                        },
                        MessageKind::Proposal => InjectPayload::Proposal {
                            prior: spec.ledger.clone(),
                            round: spec.round,
                            txs: spec.txs.clone(),
                        },
                    },
                });
            }
            AdversaryKind::Scripted {
                rules,
                injects,
                partitions,
            }
        }
    };

    let mut initial_pending: BTreeMap<NodeId, BTreeSet<TxId>> = BTreeMap::new();
    for (line, set, txs) in &b.pending {
        for id in set.resolve(node_count).map_err(|m| err(*line, m))? {
            initial_pending
                .entry(id)
                .or_default()
                .extend(txs.iter().cloned());
        }
    }

    let mut init_validations = Vec::new();
    for (line, set, ledger) in &b.init_validations {
        for id in set.resolve(node_count).map_err(|m| err(*line, m))? {
            init_validations.push((id, ledger.clone()));
        }
    }

    let mut submits = Vec::new();
    for (line, set, at, txs) in &b.submits {
        for id in set.resolve(node_count).map_err(|m| err(*line, m))? {
            for tx in txs {
                submits.push((*at, id, tx.clone()));
            }
        }
    }

    let mut stagger = BTreeMap::new();
    for (line, set, every, offset) in &b.stagger {
        for id in set.resolve(node_count).map_err(|m| err(*line, m))? {
            stagger.insert(id, (*every, *offset));
        }
    }

    let scenario = Scenario {
        graph,
        policy: AdversaryPolicy {
            kind,
            byzantine,
            accountability: b.accountability,
        },
        schedule: b.schedule.unwrap_or_default(),
        initial_pending,
        ledger_defs: b.ledger_defs,
        init_validations,
        max_ticks,
        probe_ticks: b.probe_ticks,
        seed: b.seed,
        stop: b.stop,
        stagger,
        submits,
    };
    // Surface structural problems (fault budgets, equivocation under
    // accountability, unknown ledger names) at load time rather than at the
    // first run.
    crate::sim::World::build(&scenario)?;
    Ok(scenario)
}
