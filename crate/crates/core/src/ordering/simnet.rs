//! Discrete-event simulation of the network under latency, loss and
//! partitions. Time is simulated milliseconds; the queue is ordered by
//! (time, sequence number) so runs are reproducible from the seed alone.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{validate_and_commit, BlockProposal, Network, Orderer, Peer};
use crate::canonical::Digest;
use crate::identity::{Action, KeyId};
use crate::ledger::{endorsement_payload, Endorsement, ProposalHeader, RwSet, Transaction};

/// A probability as `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn new(num: u32, den: u32) -> Self {
        Ratio { num, den }
    }
}

/// Messages between `side_a` and `side_b` are lost until `heal_at`
/// (forever when `None`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub side_a: BTreeSet<String>,
    pub side_b: BTreeSet<String>,
    pub heal_at: Option<u64>,
}

impl Partition {
    fn separates(&self, from: &str, to: &str, at: u64) -> bool {
        if self.heal_at.is_some_and(|h| at >= h) {
            return false;
        }
        (self.side_a.contains(from) && self.side_b.contains(to))
            || (self.side_b.contains(from) && self.side_a.contains(to))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimNetConfig {
    pub seed: u64,
    /// Inclusive per-message latency bounds.
    pub latency_ms: (u64, u64),
    pub drop_probability: Ratio,
    pub partitions: Vec<Partition>,
    /// Gap between successive workload submissions.
    pub submit_interval_ms: u64,
    /// Delay before a lost message is sent again.
    pub retransmit_ms: u64,
    /// Proposal attempts before the client gives up on an item.
    pub max_attempts: u32,
}

impl Default for SimNetConfig {
    fn default() -> Self {
        SimNetConfig {
            seed: 0,
            latency_ms: (1, 20),
            drop_probability: Ratio::ZERO,
            partitions: Vec::new(),
            submit_interval_ms: 10,
            retransmit_ms: 50,
            max_attempts: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("simulation config: {0}")]
    Config(String),
}

impl SimNetConfig {
    pub fn check(&self) -> Result<(), SimError> {
        if self.latency_ms.0 > self.latency_ms.1 {
            return Err(SimError::Config("latency min exceeds max".into()));
        }
        if self.drop_probability.den == 0 || self.drop_probability.num > self.drop_probability.den {
            return Err(SimError::Config("drop probability must lie in [0, 1]".into()));
        }
        if self.max_attempts == 0 {
            return Err(SimError::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

/// One client request in the workload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkItem {
    pub creator: KeyId,
    pub contract: String,
    pub function: String,
    pub args: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Drop,
    Deliver,
    Commit,
    Cut,
    Retry,
    Abandon,
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub seq: u64,
    pub time: u64,
    pub kind: EventKind,
    pub from: String,
    pub to: String,
    #[serde(rename = "type")]
    pub message_type: String,
    pub detail: String,
}

const CLIENT: &str = "client";
/// Attempts at delivering one message before it counts as lost.
const MAX_SENDS: u32 = 1000;

#[derive(Clone, Debug)]
enum Message {
    Propose {
        item: usize,
        attempt: u32,
        header: ProposalHeader,
    },
    Endorse {
        item: usize,
        attempt: u32,
        result: Result<(RwSet, Endorsement), String>,
    },
    Submit(Box<Transaction>),
    Deliver(BlockProposal),
}

impl Message {
    fn type_name(&self) -> &'static str {
        match self {
            Message::Propose { .. } => "propose",
            Message::Endorse { .. } => "endorse",
            Message::Submit(_) => "submit",
            Message::Deliver(_) => "deliver",
        }
    }

    fn detail(&self) -> String {
        match self {
            Message::Propose { item, attempt, header } => {
                format!("item={item} attempt={attempt} tx={}", header.tx_id())
            }
            Message::Endorse { item, attempt, result } => match result {
                Ok(_) => format!("item={item} attempt={attempt} ok"),
                Err(e) => format!("item={item} attempt={attempt} error={e}"),
            },
            Message::Submit(tx) => format!("tx={}", tx.tx_id),
            Message::Deliver(p) => format!("height={} txs={}", p.height, p.transactions.len()),
        }
    }
}

enum Event {
    Start {
        item: usize,
        attempt: u32,
    },
    Arrive {
        from: String,
        to: String,
        message: Box<Message>,
    },
    OrdererTimer,
}

struct Pending {
    attempt: u32,
    header: ProposalHeader,
    responses: BTreeMap<String, Result<(RwSet, Endorsement), String>>,
}

/// Final per-peer chains and the complete event log of one run.
#[derive(Debug)]
pub struct SimOutcome {
    pub channel: String,
    pub peers: Vec<Peer>,
    pub events: Vec<SimEvent>,
    pub end_time: u64,
    /// Workload items that never reached the orderer.
    pub abandoned: Vec<usize>,
}

impl SimOutcome {
    pub fn tip_hashes(&self) -> BTreeMap<String, Digest> {
        self.peers
            .iter()
            .filter_map(|p| p.chain(&self.channel).map(|c| (p.name().to_string(), c.tip_hash())))
            .collect()
    }

    pub fn state_digests(&self) -> BTreeMap<String, Digest> {
        self.peers
            .iter()
            .filter_map(|p| {
                p.chain(&self.channel)
                    .map(|c| (p.name().to_string(), c.state().digest()))
            })
            .collect()
    }

    /// Whether all listed peers (all peers when `None`) hold the same tip.
    pub fn converged(&self, among: Option<&BTreeSet<String>>) -> bool {
        let tips: BTreeSet<Digest> = self
            .tip_hashes()
            .into_iter()
            .filter(|(name, _)| among.is_none_or(|s| s.contains(name)))
            .map(|(_, tip)| tip)
            .collect();
        tips.len() <= 1
    }

    pub fn event_log(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            serde_json::to_writer(&mut out, e).expect("events serialize");
            out.push(b'\n');
        }
        out
    }

    pub fn write_event_log(&self, path: &Path) -> io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.event_log())?;
        file.sync_all()
    }
}

struct Sim<'w> {
    channel: String,
    config: SimNetConfig,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: BTreeMap<u64, Event>,
    log: Vec<SimEvent>,
    peers: Vec<Peer>,
    endorsers: Vec<String>,
    orderer: Orderer,
    timer_at: Option<u64>,
    buffered: Vec<BTreeMap<u64, BlockProposal>>,
    workload: &'w [WorkItem],
    pending: BTreeMap<usize, Pending>,
    abandoned: Vec<usize>,
}

impl Sim<'_> {
    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq)));
        self.events.insert(self.seq, event);
    }

    fn log(&mut self, time: u64, kind: EventKind, from: &str, to: &str, message_type: &str, detail: String) {
        let seq = self.log.len() as u64;
        self.log.push(SimEvent {
            seq,
            time,
            kind,
            from: from.to_string(),
            to: to.to_string(),
            message_type: message_type.to_string(),
            detail,
        });
    }

    /// Send with loss and retransmission: each lost attempt costs one
    /// retransmit interval. A message blocked by a permanent partition is
    /// lost for good.
    fn send(&mut self, from: &str, to: &str, message: Message) {
        let type_name = message.type_name();
        let detail = message.detail();
        self.log(self.now, EventKind::Send, from, to, type_name, detail.clone());
        let mut at = self.now;
        for _ in 0..MAX_SENDS {
            let cut_off = self.config.partitions.iter().any(|p| p.separates(from, to, at));
            let lost = cut_off
                || self
                    .rng
                    .gen_ratio(self.config.drop_probability.num, self.config.drop_probability.den);
            if !lost {
                let (lo, hi) = self.config.latency_ms;
                let latency = self.rng.gen_range(lo..=hi);
                self.schedule(
                    at + latency,
                    Event::Arrive {
                        from: from.to_string(),
                        to: to.to_string(),
                        message: Box::new(message),
                    },
                );
                return;
            }
            self.log(at, EventKind::Drop, from, to, type_name, detail.clone());
            let permanent = self
                .config
                .partitions
                .iter()
                .any(|p| p.separates(from, to, at) && p.heal_at.is_none());
            if permanent {
                return;
            }
            at += self.config.retransmit_ms;
        }
    }

    fn peer_index(&self, name: &str) -> Option<usize> {
        self.peers.iter().position(|p| p.name() == name)
    }

    fn start(&mut self, item: usize, attempt: u32) {
        let w = &self.workload[item];
        let nonce: [u8; 16] = self.rng.gen();
        let header = ProposalHeader {
            channel: self.channel.clone(),
            contract: w.contract.clone(),
            function: w.function.clone(),
            args: w.args.clone(),
            creator: w.creator,
            nonce,
        };
        self.pending.insert(
            item,
            Pending {
                attempt,
                header: header.clone(),
                responses: BTreeMap::new(),
            },
        );
        for endorser in self.endorsers.clone() {
            self.send(
                CLIENT,
                &endorser,
                Message::Propose {
                    item,
                    attempt,
                    header: header.clone(),
                },
            );
        }
    }

    fn on_propose(&mut self, peer: usize, item: usize, attempt: u32, header: ProposalHeader) {
        let p = &self.peers[peer];
        let result = match p.execute(&header, Action::Invoke) {
            Ok(proposal) => {
                let payload = endorsement_payload(&proposal.tx_id, &proposal.rw);
                let endorsement = Endorsement {
                    key_id: p.identity().key_id,
                    signature: p.sign(&payload),
                };
                Ok((proposal.rw, endorsement))
            }
            Err(e) => Err(e.to_string()),
        };
        let name = p.name().to_string();
        self.send(&name, CLIENT, Message::Endorse { item, attempt, result });
    }

    fn on_endorse(&mut self, from: String, item: usize, attempt: u32, result: Result<(RwSet, Endorsement), String>) {
        let Some(pending) = self.pending.get_mut(&item) else {
            return;
        };
        // responses to a superseded attempt are ignored
        if pending.attempt != attempt {
            return;
        }
        pending.responses.insert(from, result);
        if pending.responses.len() < self.endorsers.len() {
            return;
        }
        let pending = self.pending.remove(&item).expect("present");
        let header = pending.header;
        let mut rw: Option<RwSet> = None;
        let mut endorsements = Vec::new();
        let mut failure = None;
        for name in &self.endorsers {
            match &pending.responses[name] {
                Ok((set, e)) => {
                    if rw.as_ref().is_some_and(|r| r != set) {
                        failure.get_or_insert_with(|| "read/write sets differ".to_string());
                    }
                    rw.get_or_insert_with(|| set.clone());
                    endorsements.push(e.clone());
                }
                Err(e) => {
                    failure.get_or_insert_with(|| e.clone());
                }
            }
        }
        match failure {
            None => {
                let tx = Transaction::new(header, rw.expect("at least one endorser"), endorsements);
                let orderer = self.orderer.name().to_string();
                self.send(CLIENT, &orderer, Message::Submit(Box::new(tx)));
            }
            Some(reason) if attempt + 1 < self.config.max_attempts => {
                self.log(
                    self.now,
                    EventKind::Retry,
                    CLIENT,
                    CLIENT,
                    "propose",
                    format!("item={item} {reason}"),
                );
                let at = self.now + self.config.retransmit_ms;
                self.schedule(
                    at,
                    Event::Start {
                        item,
                        attempt: attempt + 1,
                    },
                );
            }
            Some(reason) => {
                self.log(
                    self.now,
                    EventKind::Abandon,
                    CLIENT,
                    CLIENT,
                    "propose",
                    format!("item={item} {reason}"),
                );
                self.abandoned.push(item);
            }
        }
    }

    fn on_submit(&mut self, tx: Transaction) {
        let orderer = self.orderer.name().to_string();
        if let Err(e) = self.orderer.broadcast(tx, self.now) {
            self.log(self.now, EventKind::Drop, &orderer, &orderer, "submit", e.to_string());
            return;
        }
        self.cut();
    }

    fn cut(&mut self) {
        let orderer = self.orderer.name().to_string();
        for proposal in self.orderer.cut(self.now) {
            self.log(
                self.now,
                EventKind::Cut,
                &orderer,
                &orderer,
                "block",
                format!("height={} txs={}", proposal.height, proposal.transactions.len()),
            );
            let names: Vec<String> = self.peers.iter().map(|p| p.name().to_string()).collect();
            for name in names {
                self.send(&orderer, &name, Message::Deliver(proposal.clone()));
            }
        }
        if let Some(deadline) = self.orderer.deadline() {
            if self.timer_at.is_none_or(|t| t != deadline) {
                self.timer_at = Some(deadline);
                self.schedule(deadline.max(self.now), Event::OrdererTimer);
            }
        }
    }

    fn on_deliver(&mut self, peer: usize, proposal: BlockProposal) {
        self.buffered[peer].insert(proposal.height, proposal);
        loop {
            let next = self.peers[peer]
                .chain(&self.channel)
                .map(|c| c.next_height())
                .unwrap_or(0);
            let Some(proposal) = self.buffered[peer].remove(&next) else {
                break;
            };
            let name = self.peers[peer].name().to_string();
            match validate_and_commit(&mut self.peers[peer], &proposal) {
                Ok(block) => {
                    let flags: Vec<String> = block.validation_flags.iter().map(|f| f.to_string()).collect();
                    self.log(
                        self.now,
                        EventKind::Commit,
                        &name,
                        &name,
                        "block",
                        format!(
                            "height={} hash={} flags=[{}]",
                            block.height,
                            block.block_hash,
                            flags.join(",")
                        ),
                    );
                }
                Err(e) => {
                    self.log(self.now, EventKind::Drop, &name, &name, "block", e.to_string());
                }
            }
        }
        // heights already committed are discarded
        let next = self.peers[peer]
            .chain(&self.channel)
            .map(|c| c.next_height())
            .unwrap_or(0);
        self.buffered[peer].retain(|h, _| *h >= next);
    }

    fn run(&mut self) {
        for item in 0..self.workload.len() {
            let at = item as u64 * self.config.submit_interval_ms;
            self.schedule(at, Event::Start { item, attempt: 0 });
        }
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            self.now = at;
            let event = self.events.remove(&seq).expect("scheduled event");
            match event {
                Event::Start { item, attempt } => self.start(item, attempt),
                Event::OrdererTimer => {
                    self.timer_at = None;
                    self.cut();
                }
                Event::Arrive { from, to, message } => {
                    self.log(
                        at,
                        EventKind::Deliver,
                        &from,
                        &to,
                        message.type_name(),
                        message.detail(),
                    );
                    match *message {
                        Message::Propose { item, attempt, header } => {
                            if let Some(p) = self.peer_index(&to) {
                                self.on_propose(p, item, attempt, header);
                            }
                        }
                        Message::Endorse { item, attempt, result } => self.on_endorse(from, item, attempt, result),
                        Message::Submit(tx) => self.on_submit(*tx),
                        Message::Deliver(proposal) => {
                            if let Some(p) = self.peer_index(&to) {
                                self.on_deliver(p, proposal);
                            }
                        }
                    }
                }
            }
        }
        // items whose endorsements never all arrived
        let stuck: Vec<usize> = self.pending.keys().copied().collect();
        for item in stuck {
            self.log(
                self.now,
                EventKind::Abandon,
                CLIENT,
                CLIENT,
                "propose",
                format!("item={item} no quorum of responses"),
            );
            self.abandoned.push(item);
        }
        self.abandoned.sort_unstable();
    }
}

/// Run `workload` against copies of `network`'s peers and orderer. One
/// endorsing peer per org (the first of each) serves every proposal.
pub fn run_simnet(network: &Network, config: &SimNetConfig, workload: &[WorkItem]) -> Result<SimOutcome, SimError> {
    config.check()?;
    let peers: Vec<Peer> = network.peers().to_vec();
    if peers.is_empty() {
        return Err(SimError::Config("topology has no peers".into()));
    }
    let endorsers: Vec<String> = network
        .config()
        .orgs
        .iter()
        .filter_map(|org| peers.iter().find(|p| p.org() == org).map(|p| p.name().to_string()))
        .collect();
    let channel = network.channel().to_string();
    let mut sim = Sim {
        channel: channel.clone(),
        config: config.clone(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        events: BTreeMap::new(),
        log: Vec::new(),
        buffered: vec![BTreeMap::new(); peers.len()],
        peers,
        endorsers,
        orderer: network.orderer().clone(),
        timer_at: None,
        workload,
        pending: BTreeMap::new(),
        abandoned: Vec::new(),
    };
    sim.run();
    Ok(SimOutcome {
        channel,
        peers: sim.peers,
        events: sim.log,
        end_time: sim.now,
        abandoned: sim.abandoned,
    })
}
