//! Self-organised resource discovery.
//!
//! Nodes sit on a ring; each links to its `k_close / 2` predecessors and
//! successors plus `k_far` seeded-random distant nodes. A query fans out from
//! its origin with a hop budget (TTL). Every node evaluates a query id at most
//! once, replies with a bid if it passes the non-volatile filter and can take
//! the work, and forwards the query while the budget lasts. The origin picks the
//! winner among the replies that reach it before the collection timeout.
//!
//! The protocol is a deterministic state machine: [`SordNode::handle_query`]
//! maps a message to at most one reply and a list of forwards. [`discover`]
//! drives it over a static network with its own event queue; the simulator
//! drives the same state machine through its kernel.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Bid, LoadLedger};
use crate::matcher::{matches, NonVolatileRequirements};
use crate::profiles::NonVolatileFacts;

/// Width of the confidence buckets compared before unsubscribed marks.
pub const CONFIDENCE_BUCKET: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OverlayError {
    #[error("bad degree: k_close={k_close} must be even, positive and below the node count {nodes}")]
    BadDegree { k_close: usize, nodes: usize },
    #[error("duplicate or empty node id `{0}`")]
    BadNodeId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SordConfig {
    pub ttl_max: u32,
    pub collect_timeout_s: f64,
    pub hop_latency_s: f64,
}

impl Default for SordConfig {
    fn default() -> Self {
        SordConfig {
            ttl_max: 3,
            collect_timeout_s: 2.0,
            hop_latency_s: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub nodes: Vec<String>,
    pub k_close: usize,
    pub k_far: usize,
    /// Far links per node, by index into `nodes`.
    pub far_links: Vec<BTreeSet<usize>>,
}

/// Builds the ring-plus-far-links overlay. Same inputs and seed give the same overlay.
pub fn build_overlay(
    node_ids: &[String],
    k_close: usize,
    k_far: usize,
    seed: u64,
) -> Result<Overlay, OverlayError> {
    let n = node_ids.len();
    if k_close == 0 || k_close % 2 != 0 || k_close >= n {
        return Err(OverlayError::BadDegree { k_close, nodes: n });
    }
    let mut seen = HashSet::new();
    for id in node_ids {
        if id.is_empty() || !seen.insert(id.as_str()) {
            return Err(OverlayError::BadNodeId(id.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut far_links = Vec::with_capacity(n);
    for i in 0..n {
        let close: BTreeSet<usize> = ring_neighbors(n, k_close, i).into_iter().collect();
        let candidates: Vec<usize> = (0..n).filter(|j| *j != i && !close.contains(j)).collect();
        let far: BTreeSet<usize> = candidates
            .choose_multiple(&mut rng, k_far.min(candidates.len()))
            .copied()
            .collect();
        far_links.push(far);
    }
    Ok(Overlay {
        nodes: node_ids.to_vec(),
        k_close,
        k_far,
        far_links,
    })
}

impl Overlay {
    /// Every node linked to every other one. Used when a network is too small
    /// for a ring of the requested degree.
    pub fn complete(node_ids: &[String]) -> Self {
        let n = node_ids.len();
        Overlay {
            nodes: node_ids.to_vec(),
            k_close: 0,
            k_far: n.saturating_sub(1),
            far_links: (0..n).map(|i| (0..n).filter(|j| *j != i).collect()).collect(),
        }
    }
}

fn ring_neighbors(n: usize, k_close: usize, i: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k_close);
    for off in 1..=k_close / 2 {
        out.push((i + n - off) % n);
        out.push((i + off) % n);
    }
    out
}

impl Overlay {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id)
    }

    pub fn close_neighbors(&self, i: usize) -> Vec<usize> {
        ring_neighbors(self.nodes.len(), self.k_close, i)
    }

    /// Ring neighbours first, then far links; no duplicates.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out = self.close_neighbors(i);
        out.extend(self.far_links[i].iter().copied());
        out
    }

    pub fn neighbor_ids(&self, i: usize) -> Vec<String> {
        self.neighbors(i)
            .into_iter()
            .map(|j| self.nodes[j].clone())
            .collect()
    }

    /// Hop distances from `from` along directed links (`None` if unreachable).
    pub fn hops_from(&self, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Longest shortest path over all ordered pairs.
    pub fn diameter(&self) -> usize {
        (0..self.nodes.len())
            .flat_map(|i| self.hops_from(i))
            .map(|d| d.unwrap_or(usize::MAX))
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub origin: String,
    pub requirements: NonVolatileRequirements,
    pub demand_marks: f64,
    /// Requested turnaround; bids quote unsubscribed marks over this window.
    pub window_s: f64,
    pub ttl: u32,
    pub min_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("ttl {ttl} exceeds ttl_max {ttl_max}")]
    TtlTooLarge { ttl: u32, ttl_max: u32 },
    #[error("demand and window must be positive, got demand {demand} window {window}")]
    BadQuantity { demand: f64, window: f64 },
}

impl Query {
    pub fn validate(&self, cfg: &SordConfig) -> Result<(), QueryError> {
        if self.ttl > cfg.ttl_max {
            return Err(QueryError::TtlTooLarge {
                ttl: self.ttl,
                ttl_max: cfg.ttl_max,
            });
        }
        if !(self.demand_marks > 0.0 && self.window_s > 0.0) {
            return Err(QueryError::BadQuantity {
                demand: self.demand_marks,
                window: self.window_s,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidReply {
    pub query_id: String,
    pub bid: Bid,
    pub hop_count: u32,
}

/// A query in flight between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMessage {
    pub query: Query,
    pub from: String,
    pub to: String,
    /// Hops travelled to reach `to`.
    pub hop_count: u32,
}

/// What a node can say about itself when asked for a bid.
pub trait BidSource {
    fn facts(&self) -> &NonVolatileFacts;
    fn bid(&self, window_s: f64) -> Bid;
}

/// A node's static facts and ledger, bidding its unsubscribed load.
#[derive(Debug, Clone)]
pub struct LedgerBidder {
    pub facts: NonVolatileFacts,
    pub ledger: LoadLedger,
}

impl BidSource for LedgerBidder {
    fn facts(&self) -> &NonVolatileFacts {
        &self.facts
    }

    fn bid(&self, window_s: f64) -> Bid {
        self.ledger
            .make_bid(window_s)
            .expect("query windows are validated positive")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Handled {
    pub reply: Option<BidReply>,
    pub forwards: Vec<QueryMessage>,
}

/// Per-node protocol state.
#[derive(Debug, Clone, Default)]
pub struct SordNode {
    pub id: String,
    pub neighbors: Vec<String>,
    seen: HashSet<String>,
}

fn eligible(q: &Query, bid: &Bid) -> bool {
    bid.confidence >= q.min_confidence && bid.unsubscribed_marks >= q.demand_marks
}

impl SordNode {
    pub fn new(id: impl Into<String>, neighbors: Vec<String>) -> Self {
        SordNode {
            id: id.into(),
            neighbors,
            seen: HashSet::new(),
        }
    }

    pub fn has_seen(&self, query_id: &str) -> bool {
        self.seen.contains(query_id)
    }

    fn evaluate(&self, source: &impl BidSource, q: &Query, hop_count: u32) -> Option<BidReply> {
        if !matches(&q.requirements, source.facts()) {
            return None;
        }
        let bid = source.bid(q.window_s);
        eligible(q, &bid).then(|| BidReply {
            query_id: q.query_id.clone(),
            bid,
            hop_count,
        })
    }

    /// Origin side: evaluate locally and send the query, TTL unchanged, to every
    /// neighbour.
    pub fn start_query(&mut self, source: &impl BidSource, q: &Query) -> Handled {
        if !self.seen.insert(q.query_id.clone()) {
            return Handled::default();
        }
        let reply = self.evaluate(source, q, 0);
        let forwards = self
            .neighbors
            .iter()
            .map(|to| QueryMessage {
                query: q.clone(),
                from: self.id.clone(),
                to: to.clone(),
                hop_count: 1,
            })
            .collect();
        Handled { reply, forwards }
    }

    /// Receiving side: drop duplicates, bid if eligible, forward with TTL - 1 to
    /// every neighbour except the sender while TTL > 0. Nodes that fail the
    /// filter still forward.
    pub fn handle_query(&mut self, source: &impl BidSource, msg: &QueryMessage) -> Handled {
        let q = &msg.query;
        if !self.seen.insert(q.query_id.clone()) {
            return Handled::default();
        }
        let reply = self.evaluate(source, q, msg.hop_count);
        let mut forwards = Vec::new();
        if q.ttl > 0 {
            let mut next = q.clone();
            next.ttl -= 1;
            for to in self.neighbors.iter().filter(|n| **n != msg.from) {
                forwards.push(QueryMessage {
                    query: next.clone(),
                    from: self.id.clone(),
                    to: to.clone(),
                    hop_count: msg.hop_count + 1,
                });
            }
        }
        Handled { reply, forwards }
    }
}

fn bucket(confidence: f64) -> i64 {
    (confidence / CONFIDENCE_BUCKET).floor() as i64
}

/// Orders bids by (confidence bucket, unsubscribed marks, reversed node id);
/// `Greater` means `a` is the better bid.
pub fn compare_bids(a: &Bid, b: &Bid) -> Ordering {
    bucket(a.confidence)
        .cmp(&bucket(b.confidence))
        .then_with(|| a.unsubscribed_marks.total_cmp(&b.unsubscribed_marks))
        .then_with(|| b.node_id.cmp(&a.node_id))
}

/// Replies best first.
pub fn rank_replies(replies: &[BidReply]) -> Vec<&BidReply> {
    let mut ranked: Vec<&BidReply> = replies.iter().collect();
    ranked.sort_by(|a, b| compare_bids(&b.bid, &a.bid));
    ranked
}

pub fn select_winner(replies: &[BidReply]) -> Option<String> {
    replies
        .iter()
        .max_by(|a, b| compare_bids(&a.bid, &b.bid))
        .map(|r| r.bid.node_id.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEntry {
    Query {
        time: f64,
        query_id: String,
        from: String,
        to: String,
        ttl: u32,
        hop_count: u32,
    },
    Reply {
        time: f64,
        query_id: String,
        from: String,
        to: String,
        hop_count: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Discovery {
    pub winner: Option<String>,
    /// Replies collected before the timeout, in arrival order.
    pub replies: Vec<BidReply>,
    pub trace: Vec<TraceEntry>,
    /// How many times each node (by overlay index) evaluated the query.
    pub evaluations: Vec<u32>,
}

impl Discovery {
    pub fn query_messages(&self) -> usize {
        self.trace
            .iter()
            .filter(|e| matches!(e, TraceEntry::Query { .. }))
            .count()
    }
}

#[derive(PartialEq)]
struct Pending {
    time: f64,
    seq: u64,
    msg: QueryMessage,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs one query over a static network (one [`BidSource`] per overlay node)
/// with constant per-hop latency, and selects the winner among replies that
/// arrive within the collection timeout. Replies travel straight back to the
/// origin in one hop.
pub fn discover<B: BidSource>(
    origin: &str,
    q: &Query,
    overlay: &Overlay,
    network: &[B],
    cfg: &SordConfig,
) -> Result<Discovery, QueryError> {
    q.validate(cfg)?;
    assert_eq!(network.len(), overlay.len(), "one bid source per overlay node");
    let origin_idx = overlay
        .index_of(origin)
        .expect("origin must be an overlay node");
    let mut states: Vec<SordNode> = (0..overlay.len())
        .map(|i| SordNode::new(overlay.nodes[i].clone(), overlay.neighbor_ids(i)))
        .collect();
    let mut out = Discovery {
        evaluations: vec![0; overlay.len()],
        ..Discovery::default()
    };
    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    let lat = cfg.hop_latency_s;

    let mut deliver = |handled: Handled,
                       now: f64,
                       sender: &str,
                       queue: &mut BinaryHeap<Pending>,
                       out: &mut Discovery| {
        if let Some(reply) = handled.reply {
            let arrival = if sender == origin { now } else { now + lat };
            out.trace.push(TraceEntry::Reply {
                time: arrival,
                query_id: reply.query_id.clone(),
                from: sender.to_string(),
                to: origin.to_string(),
                hop_count: reply.hop_count,
            });
            if arrival <= cfg.collect_timeout_s {
                out.replies.push(reply);
            }
        }
        for msg in handled.forwards {
            out.trace.push(TraceEntry::Query {
                time: now,
                query_id: msg.query.query_id.clone(),
                from: msg.from.clone(),
                to: msg.to.clone(),
                ttl: msg.query.ttl,
                hop_count: msg.hop_count,
            });
            seq += 1;
            queue.push(Pending {
                time: now + lat,
                seq,
                msg,
            });
        }
    };

    out.evaluations[origin_idx] += 1;
    let handled = states[origin_idx].start_query(&network[origin_idx], q);
    deliver(handled, 0.0, origin, &mut queue, &mut out);

    while let Some(Pending { time, msg, .. }) = queue.pop() {
        if time > cfg.collect_timeout_s {
            break;
        }
        let to = overlay.index_of(&msg.to).expect("messages address overlay nodes");
        if states[to].has_seen(&msg.query.query_id) {
            continue;
        }
        out.evaluations[to] += 1;
        let handled = states[to].handle_query(&network[to], &msg);
        let sender = overlay.nodes[to].clone();
        deliver(handled, time, &sender, &mut queue, &mut out);
    }

    out.winner = select_winner(&out.replies);
    Ok(out)
}
