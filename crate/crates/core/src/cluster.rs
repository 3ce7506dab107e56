//! Synchronous message-passing cluster: one server, `N` workers, FIFO links,
//! a byte-exact traffic ledger and fail-stop crash injection.
//!
//! Time is counted in global iterations only. Each iteration runs the
//! protocol hooks in a fixed order with a delivery sweep between the sending
//! and receiving phases:
//!
//! server-generate → deliver → worker-learn (+ feedback) → deliver →
//! server-merge → swap check → deliver → crash check → checkpoint

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{FeedbackBundle, Generator};
use crate::metrics::{MetricsRow, Scorer};
use crate::tensor::Tensor;

pub const BYTES_PER_SCALAR: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Server,
    /// 1-based worker index.
    Worker(usize),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Server => write!(f, "C"),
            NodeId::Worker(n) => write!(f, "W{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkClass {
    ServerToWorker,
    WorkerToServer,
    WorkerToWorker,
}

impl LinkClass {
    pub const ALL: [LinkClass; 3] = [LinkClass::ServerToWorker, LinkClass::WorkerToServer, LinkClass::WorkerToWorker];

    pub fn of(src: NodeId, dst: NodeId) -> Option<Self> {
        match (src, dst) {
            (NodeId::Server, NodeId::Worker(_)) => Some(LinkClass::ServerToWorker),
            (NodeId::Worker(_), NodeId::Server) => Some(LinkClass::WorkerToServer),
            (NodeId::Worker(a), NodeId::Worker(b)) if a != b => Some(LinkClass::WorkerToWorker),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LinkClass::ServerToWorker => "C->W",
            LinkClass::WorkerToServer => "W->C",
            LinkClass::WorkerToWorker => "W->W",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        LinkClass::ALL.into_iter().find(|c| c.label() == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// `(X_d, X_g)` sent to one worker.
    GeneratedBatchPair { disc: Tensor, gen: Tensor },
    Feedback(FeedbackBundle),
    DiscParams(Vec<f64>),
    /// Averaged `(w, θ)` broadcast by the FL-GAN server.
    GanParams { generator: Vec<f64>, discriminator: Vec<f64> },
    /// Local `(w_n, θ_n)` uploaded by an FL-GAN worker.
    GanUpload { generator: Vec<f64>, discriminator: Vec<f64> },
}

impl Payload {
    pub fn scalar_count(&self) -> u64 {
        let n = match self {
            Payload::GeneratedBatchPair { disc, gen } => disc.scalar_count() + gen.scalar_count(),
            Payload::Feedback(f) => f.scalar_count(),
            Payload::DiscParams(p) => p.len(),
            Payload::GanParams { generator, discriminator } | Payload::GanUpload { generator, discriminator } => {
                generator.len() + discriminator.len()
            }
        };
        n as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Payload,
    pub byte_size: u64,
}

impl Message {
    pub fn new(src: NodeId, dst: NodeId, payload: Payload) -> Self {
        let byte_size = payload.scalar_count() * BYTES_PER_SCALAR;
        Self { src, dst, payload, byte_size }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassTotals {
    pub bytes: u64,
    pub messages: u64,
}

/// Traffic of one link class during one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationTraffic {
    pub iteration: u64,
    pub class: LinkClass,
    pub bytes: u64,
    pub messages: u64,
    pub max_ingress_server: u64,
    pub max_ingress_worker: u64,
}

/// Byte and message counters per link class, overall and per iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficLedger {
    totals: BTreeMap<LinkClass, ClassTotals>,
    per_iteration: BTreeMap<(u64, LinkClass), (ClassTotals, BTreeMap<NodeId, u64>)>,
    /// Every accounted message as `(iteration, src, dst, bytes)`.
    log: Vec<(u64, NodeId, NodeId, u64)>,
}

impl TrafficLedger {
    pub fn record(&mut self, iteration: u64, msg: &Message) -> Result<()> {
        let class = LinkClass::of(msg.src, msg.dst)
            .ok_or_else(|| Error::Config(format!("no link class for {} -> {}", msg.src, msg.dst)))?;
        let t = self.totals.entry(class).or_default();
        t.bytes += msg.byte_size;
        t.messages += 1;
        let (it, ingress) = self.per_iteration.entry((iteration, class)).or_default();
        it.bytes += msg.byte_size;
        it.messages += 1;
        *ingress.entry(msg.dst).or_default() += msg.byte_size;
        self.log.push((iteration, msg.src, msg.dst, msg.byte_size));
        Ok(())
    }

    pub fn totals(&self, class: LinkClass) -> ClassTotals {
        self.totals.get(&class).copied().unwrap_or_default()
    }

    /// Mutable access for fault-injection tests of the verifier.
    pub fn totals_mut(&mut self, class: LinkClass) -> &mut ClassTotals {
        self.totals.entry(class).or_default()
    }

    pub fn total_bytes(&self) -> u64 {
        self.totals.values().map(|t| t.bytes).sum()
    }

    pub fn log(&self) -> &[(u64, NodeId, NodeId, u64)] {
        &self.log
    }

    pub fn rows(&self) -> Vec<IterationTraffic> {
        self.per_iteration
            .iter()
            .map(|(&(iteration, class), (t, ingress))| {
                let max_ingress_server = ingress.get(&NodeId::Server).copied().unwrap_or(0);
                let max_ingress_worker = ingress
                    .iter()
                    .filter(|(n, _)| matches!(n, NodeId::Worker(_)))
                    .map(|(_, &b)| b)
                    .max()
                    .unwrap_or(0);
                IterationTraffic {
                    iteration,
                    class,
                    bytes: t.bytes,
                    messages: t.messages,
                    max_ingress_server,
                    max_ingress_worker,
                }
            })
            .collect()
    }

    /// CSV with columns
    /// `iteration,link_class,bytes,messages,max_ingress_server,max_ingress_worker`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "link_class", "bytes", "messages", "max_ingress_server", "max_ingress_worker"])?;
        for r in self.rows() {
            w.write_record([
                r.iteration.to_string(),
                r.class.label().to_string(),
                r.bytes.to_string(),
                r.messages.to_string(),
                r.max_ingress_server.to_string(),
                r.max_ingress_worker.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-class totals summed from a CSV written by [`TrafficLedger::write_csv`].
pub fn read_ledger_totals<R: std::io::Read>(input: R) -> Result<BTreeMap<LinkClass, ClassTotals>> {
    let mut r = csv::Reader::from_reader(input);
    let mut totals: BTreeMap<LinkClass, ClassTotals> = BTreeMap::new();
    for record in r.records() {
        let record = record?;
        let field = |i: usize| record.get(i).ok_or_else(|| Error::Format(format!("ledger row has no column {i}")));
        let class = LinkClass::from_label(field(1)?)
            .ok_or_else(|| Error::Format(format!("unknown link class {:?}", &record[1])))?;
        let parse = |i: usize| -> Result<u64> {
            field(i)?.parse().map_err(|_| Error::Format(format!("bad integer in ledger column {i}")))
        };
        let t = totals.entry(class).or_default();
        t.bytes += parse(2)?;
        t.messages += parse(3)?;
    }
    Ok(totals)
}

/// Fail-stop crashes as `(worker, iteration)`: the worker takes part in the
/// given iteration and is gone afterwards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashSchedule {
    pub crashes: Vec<(usize, u64)>,
}

impl CrashSchedule {
    pub fn new(crashes: Vec<(usize, u64)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &(w, _) in &crashes {
            if !seen.insert(w) {
                return Err(Error::Config(format!("worker {w} is scheduled to crash twice")));
            }
        }
        Ok(Self { crashes })
    }

    /// Worker `n` crashes at iteration `n·I/N`.
    pub fn every(iterations: u64, workers: usize) -> Self {
        let crashes = (1..=workers).map(|n| (n, n as u64 * iterations / workers as u64)).collect();
        Self { crashes }
    }

    pub fn is_empty(&self) -> bool {
        self.crashes.is_empty()
    }

    pub fn due(&self, iteration: u64) -> impl Iterator<Item = usize> + '_ {
        self.crashes.iter().filter(move |(_, t)| *t == iteration).map(|(w, _)| *w)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    iteration: u64,
}

impl SimClock {
    pub fn now(&self) -> u64 {
        self.iteration
    }

    fn advance(&mut self) {
        self.iteration += 1;
    }
}

/// Nodes, FIFO links and the ledger.
#[derive(Debug, Clone)]
pub struct Network {
    workers: usize,
    alive: Vec<bool>,
    clock: SimClock,
    links: BTreeMap<(NodeId, NodeId), VecDeque<Message>>,
    inboxes: BTreeMap<NodeId, VecDeque<Message>>,
    ledger: TrafficLedger,
    dropped: u64,
    delivered: u64,
}

impl Network {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("cluster needs at least one worker".into()));
        }
        Ok(Self {
            workers,
            alive: vec![true; workers],
            clock: SimClock::default(),
            links: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            ledger: TrafficLedger::default(),
            dropped: 0,
            delivered: 0,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> TrafficLedger {
        self.ledger
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        match node {
            NodeId::Server => Ok(()),
            NodeId::Worker(n) if (1..=self.workers).contains(&n) => Ok(()),
            NodeId::Worker(n) => Err(Error::Config(format!("unknown worker {n}"))),
        }
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        match node {
            NodeId::Server => true,
            NodeId::Worker(n) => self.alive.get(n.wrapping_sub(1)).copied().unwrap_or(false),
        }
    }

    /// Alive worker indices in ascending order.
    pub fn alive_workers(&self) -> Vec<usize> {
        (1..=self.workers).filter(|&n| self.alive[n - 1]).collect()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn crash(&mut self, worker: usize) -> Result<()> {
        self.check_node(NodeId::Worker(worker))?;
        self.alive[worker - 1] = false;
        // in-flight traffic to or from the crashed worker is lost
        for ((src, dst), q) in self.links.iter_mut() {
            if *src == NodeId::Worker(worker) || *dst == NodeId::Worker(worker) {
                self.dropped += q.len() as u64;
                q.clear();
            }
        }
        if let Some(q) = self.inboxes.get_mut(&NodeId::Worker(worker)) {
            self.dropped += q.len() as u64;
            q.clear();
        }
        Ok(())
    }

    /// Accounts and enqueues `msg`. A crashed sender is rejected; a crashed
    /// receiver silently drops the message after it has been accounted.
    pub fn send(&mut self, msg: Message) -> Result<()> {
        self.check_node(msg.src)?;
        self.check_node(msg.dst)?;
        if !self.is_alive(msg.src) {
            return Err(Error::Protocol(format!("crashed node {} cannot send", msg.src)));
        }
        self.ledger.record(self.clock.now(), &msg)?;
        if !self.is_alive(msg.dst) {
            self.dropped += 1;
            return Ok(());
        }
        self.links.entry((msg.src, msg.dst)).or_default().push_back(msg);
        Ok(())
    }

    /// Moves every queued message to its destination inbox, links in
    /// `(src, dst)` order and FIFO within a link.
    pub fn deliver(&mut self) {
        for ((_, dst), q) in self.links.iter_mut() {
            let inbox = self.inboxes.entry(*dst).or_default();
            while let Some(m) = q.pop_front() {
                inbox.push_back(m);
                self.delivered += 1;
            }
        }
    }

    pub fn recv(&mut self, node: NodeId) -> Option<Message> {
        self.inboxes.get_mut(&node).and_then(VecDeque::pop_front)
    }

    pub fn recv_all(&mut self, node: NodeId) -> Vec<Message> {
        self.inboxes.get_mut(&node).map(|q| q.drain(..).collect()).unwrap_or_default()
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Messages still sitting on links or in inboxes.
    pub fn in_flight(&self) -> u64 {
        let on_links: usize = self.links.values().map(VecDeque::len).sum();
        let in_boxes: usize = self.inboxes.values().map(VecDeque::len).sum();
        (on_links + in_boxes) as u64
    }
}

/// Per-iteration hooks of a training protocol. Iterations are 1-based.
pub trait Protocol {
    fn server_generate(&mut self, iteration: u64, net: &mut Network) -> Result<()>;
    /// Workers consume their inbox, train, and send whatever goes upstream.
    fn worker_learn(&mut self, iteration: u64, net: &mut Network) -> Result<()>;
    fn server_merge(&mut self, iteration: u64, net: &mut Network) -> Result<()>;
    fn swap_check(&mut self, iteration: u64, net: &mut Network) -> Result<()>;
    /// Drains anything delivered after the last iteration.
    fn finish(&mut self, net: &mut Network) -> Result<()>;
    fn on_crash(&mut self, worker: usize);
    /// The generator that checkpoints are scored with.
    fn generator(&self) -> &Generator;
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRow>,
    pub ledger: TrafficLedger,
    pub completed_iterations: u64,
    /// Every worker crashed before the last iteration.
    pub terminated_early: bool,
    pub delivered: u64,
    pub dropped: u64,
}

pub fn run_global_iterations<P: Protocol>(
    protocol: &mut P,
    net: &mut Network,
    iterations: u64,
    crashes: &CrashSchedule,
    checkpoint_stride: u64,
    scorer: Option<&Scorer>,
) -> Result<RunOutcome> {
    run_with_progress(protocol, net, iterations, crashes, checkpoint_stride, scorer, |_| {})
}

/// As [`run_global_iterations`], calling `on_checkpoint` after every scored row.
pub fn run_with_progress<P: Protocol>(
    protocol: &mut P,
    net: &mut Network,
    iterations: u64,
    crashes: &CrashSchedule,
    checkpoint_stride: u64,
    scorer: Option<&Scorer>,
    mut on_checkpoint: impl FnMut(&MetricsRow),
) -> Result<RunOutcome> {
    for &(w, _) in &crashes.crashes {
        net.check_node(NodeId::Worker(w))?;
    }
    let mut metrics = Vec::new();
    let mut terminated_early = false;
    let mut completed = 0;
    while net.now() < iterations {
        net.clock.advance();
        let i = net.now();
        protocol.server_generate(i, net)?;
        net.deliver();
        protocol.worker_learn(i, net)?;
        net.deliver();
        protocol.server_merge(i, net)?;
        protocol.swap_check(i, net)?;
        net.deliver();
        for w in crashes.due(i).collect::<Vec<_>>() {
            if net.is_alive(NodeId::Worker(w)) {
                net.crash(w)?;
                protocol.on_crash(w);
            }
        }
        completed = i;
        if let Some(scorer) = scorer {
            if checkpoint_stride > 0 && i.is_multiple_of(checkpoint_stride) {
                let row = scorer.score(i, protocol.generator())?;
                on_checkpoint(&row);
                metrics.push(row);
            }
        }
        if net.alive_count() == 0 && i < iterations {
            terminated_early = true;
            break;
        }
    }
    protocol.finish(net)?;
    Ok(RunOutcome {
        metrics,
        ledger: net.ledger.clone(),
        completed_iterations: completed,
        terminated_early,
        delivered: net.delivered,
        dropped: net.dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_params(src: usize, dst: usize, n: usize) -> Message {
        Message::new(NodeId::Worker(src), NodeId::Worker(dst), Payload::DiscParams(vec![0.5; n]))
    }

    #[test]
    fn disc_params_are_four_bytes_per_scalar() {
        let mut net = Network::new(2).unwrap();
        net.send(disc_params(1, 2, 100)).unwrap();
        assert_eq!(net.ledger().totals(LinkClass::WorkerToWorker), ClassTotals { bytes: 400, messages: 1 });
    }

    #[test]
    fn crashed_sender_is_rejected() {
        let mut net = Network::new(2).unwrap();
        net.crash(1).unwrap();
        assert!(matches!(net.send(disc_params(1, 2, 3)), Err(Error::Protocol(_))));
        assert_eq!(net.ledger().total_bytes(), 0);
    }

    #[test]
    fn crashed_receiver_drops_after_accounting() {
        let mut net = Network::new(2).unwrap();
        net.crash(2).unwrap();
        net.send(disc_params(1, 2, 3)).unwrap();
        net.deliver();
        assert_eq!(net.ledger().total_bytes(), 12);
        assert_eq!(net.dropped(), 1);
        assert!(net.recv(NodeId::Worker(2)).is_none());
    }

    #[test]
    fn unknown_node_is_config_error() {
        let mut net = Network::new(2).unwrap();
        assert!(matches!(net.send(disc_params(1, 3, 1)), Err(Error::Config(_))));
    }

    #[test]
    fn same_link_is_fifo() {
        let mut net = Network::new(2).unwrap();
        net.send(Message::new(NodeId::Worker(1), NodeId::Worker(2), Payload::DiscParams(vec![1.0]))).unwrap();
        net.send(Message::new(NodeId::Worker(1), NodeId::Worker(2), Payload::DiscParams(vec![2.0]))).unwrap();
        net.deliver();
        let first = net.recv(NodeId::Worker(2)).unwrap();
        let second = net.recv(NodeId::Worker(2)).unwrap();
        assert_eq!(first.payload, Payload::DiscParams(vec![1.0]));
        assert_eq!(second.payload, Payload::DiscParams(vec![2.0]));
        assert_eq!(net.delivered(), 2);
    }

    #[test]
    fn crash_schedule_every() {
        let s = CrashSchedule::every(100, 4);
        assert_eq!(s.crashes, vec![(1, 25), (2, 50), (3, 75), (4, 100)]);
        assert!(CrashSchedule::new(vec![(1, 3), (1, 5)]).is_err());
    }

    #[test]
    fn ledger_csv_columns() {
        let mut net = Network::new(3).unwrap();
        net.send(Message::new(NodeId::Worker(1), NodeId::Server, Payload::DiscParams(vec![0.0; 5]))).unwrap();
        net.send(Message::new(NodeId::Worker(2), NodeId::Server, Payload::DiscParams(vec![0.0; 2]))).unwrap();
        net.send(Message::new(NodeId::Server, NodeId::Worker(3), Payload::DiscParams(vec![0.0; 7]))).unwrap();
        let mut buf = Vec::new();
        net.ledger().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "iteration,link_class,bytes,messages,max_ingress_server,max_ingress_worker\n\
             0,C->W,28,1,0,28\n\
             0,W->C,28,2,28,0\n"
        );
    }
}
