//! Dynamic task allocation over virtual party clocks.
//!
//! Training one tree costs, per node, one gradient-aggregation task at every
//! party (in parallel across parties, serial within a party) followed by one
//! node-splitting task at a single active party. The active party is chosen
//! per node: dynamically as the currently most available party (minimal
//! busy-until, ties to the smallest index), or fixed for comparison runs.
//! Conflicts at a party resolve either by task arrival order or by
//! breadth-first node order.
//!
//! Virtual time is integer microseconds so event ordering is exact and runs
//! are reproducible. The same engine drives standalone timing simulations
//! over complete trees and real federated training, where pruned branches
//! simply never submit their subtree's tasks.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Duration model for one task kind at one party, in virtual seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationModel {
    Fixed(f64),
    Normal { mean: f64, std: f64 },
    Empirical(Vec<f64>),
}

/// Draws one positive duration. Normal draws resample until positive.
pub fn sample_duration<R: Rng>(model: &DurationModel, rng: &mut R) -> Result<f64> {
    match model {
        DurationModel::Fixed(v) => {
            if *v <= 0.0 || !v.is_finite() {
                return Err(Error::Argument(format!("fixed duration must be positive, got {v}")));
            }
            Ok(*v)
        }
        DurationModel::Normal { mean, std } => {
            if !(*std >= 0.0) || !mean.is_finite() {
                return Err(Error::Argument(format!("invalid normal duration ({mean}, {std})")));
            }
            let dist = rand_distr::Normal::new(*mean, *std)
                .map_err(|e| Error::Argument(format!("invalid normal duration: {e}")))?;
            for _ in 0..10_000 {
                let draw: f64 = rng.sample(dist);
                if draw > 0.0 {
                    return Ok(draw);
                }
            }
            Err(Error::Argument(format!(
                "normal({mean}, {std}) produced no positive draw in 10000 tries"
            )))
        }
        DurationModel::Empirical(values) => {
            if values.is_empty() || values.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                return Err(Error::Argument("empirical durations must be positive".into()));
            }
            Ok(values[rng.gen_range(0..values.len())])
        }
    }
}

fn to_micros(seconds: f64) -> u64 {
    ((seconds * 1e6).round() as u64).max(1)
}

/// Virtual clock of one party (1-based index), with its duration models.
#[derive(Debug, Clone)]
pub struct PartyClock {
    pub party: u32,
    /// Projected completion of all accepted work, in virtual microseconds.
    pub busy_until: u64,
    pub tau1: DurationModel,
    pub tau2: DurationModel,
}

impl PartyClock {
    pub fn uniform(party: u32, tau1: f64, tau2: f64) -> PartyClock {
        PartyClock {
            party,
            busy_until: 0,
            tau1: DurationModel::Fixed(tau1),
            tau2: DurationModel::Fixed(tau2),
        }
    }
}

/// Uniform clock set for `m` parties.
pub fn uniform_clocks(m: u32, tau1: f64, tau2: f64) -> Vec<PartyClock> {
    (1..=m).map(|p| PartyClock::uniform(p, tau1, tau2)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Aggregate,
    Split,
}

/// One entry of the Gantt log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub tree_id: u32,
    pub node_id: u64,
    pub party: u32,
    pub kind: TaskKind,
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Dynamic,
    Fixed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictPolicy {
    /// Tasks that come in first take priority: a node's split task enters the
    /// active party's queue the moment its aggregations complete, and each
    /// party works FIFO by arrival.
    TaskOrder,
    /// Strict breadth-first node order: splits are assigned in node-index
    /// order as soon as the node enters the queue, before its aggregations
    /// have run.
    BreadthFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePolicy {
    pub mode: ScheduleMode,
    pub conflict: ConflictPolicy,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        SchedulePolicy { mode: ScheduleMode::Dynamic, conflict: ConflictPolicy::TaskOrder }
    }
}

/// The currently most available party: minimal `busy_until`, ties to the
/// smallest party index.
pub fn select_active_party(clocks: &[PartyClock], _now_us: u64) -> u32 {
    debug_assert!(!clocks.is_empty());
    clocks
        .iter()
        .min_by_key(|c| (c.busy_until, c.party))
        .map(|c| c.party)
        .expect("nonempty clock list")
}

#[derive(Debug, Clone)]
struct QueuedTask {
    arrival_us: u64,
    tree: u32,
    node: u64,
    kind: TaskKind,
    duration_us: u64,
}

#[derive(Debug, Clone)]
struct RunningTask {
    tree: u32,
    node: u64,
    kind: TaskKind,
    start_us: u64,
    end_us: u64,
}

#[derive(Debug, Default)]
struct PartyState {
    queue: Vec<QueuedTask>,
    running: Option<RunningTask>,
}

#[derive(Debug)]
struct NodeState {
    aggs_pending: usize,
    agg_ends_us: Vec<u64>,
    /// Assigned when the last aggregation finishes and the node is ready to split.
    split_party: Option<u32>,
}

/// A completed node-splitting task plus the aggregation end times feeding it.
#[derive(Debug, Clone)]
pub struct SplitDone {
    pub tree: u32,
    pub node: u64,
    pub party: u32,
    pub start_us: u64,
    pub end_us: u64,
    pub agg_ends_us: Vec<u64>,
}

/// Event-driven executor of the task-allocation scheme. The caller submits
/// root nodes and answers each completed split with the children to enqueue.
pub struct Engine {
    policy: SchedulePolicy,
    clocks: Vec<PartyClock>,
    parties: Vec<PartyState>,
    nodes: BTreeMap<(u32, u64), NodeState>,
    // completion events as Reverse<(time, seq, party index)>
    events: BinaryHeap<Reverse<(u64, u64, usize)>>,
    seq: u64,
    time_us: u64,
    records: Vec<AllocationRecord>,
    rng: ChaCha20Rng,
    pending_roots: Vec<(u32, u64)>,
}

impl Engine {
    pub fn new(clocks: Vec<PartyClock>, policy: SchedulePolicy, seed: u64) -> Result<Engine> {
        if clocks.is_empty() {
            return Err(Error::Argument("scheduler needs at least one party".into()));
        }
        for (i, c) in clocks.iter().enumerate() {
            if c.party != i as u32 + 1 {
                return Err(Error::Argument(format!(
                    "party clocks must be indexed 1..=M in order, found {} at position {i}",
                    c.party
                )));
            }
        }
        if let ScheduleMode::Fixed(p) = policy.mode {
            if p == 0 || p as usize > clocks.len() {
                return Err(Error::Argument(format!("fixed active party {p} is out of range")));
            }
        }
        let m = clocks.len();
        Ok(Engine {
            policy,
            clocks,
            parties: (0..m).map(|_| PartyState::default()).collect(),
            nodes: BTreeMap::new(),
            events: BinaryHeap::new(),
            seq: 0,
            time_us: 0,
            records: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            pending_roots: Vec::new(),
        })
    }

    pub fn time_us(&self) -> u64 {
        self.time_us
    }

    pub fn records(&self) -> &[AllocationRecord] {
        &self.records
    }

    pub fn clocks(&self) -> &[PartyClock] {
        &self.clocks
    }

    /// Split counts per party for one tree.
    pub fn split_counts(&self, tree: u32) -> Vec<u64> {
        let mut counts = vec![0u64; self.clocks.len()];
        for r in &self.records {
            if r.tree_id == tree && r.kind == TaskKind::Split {
                counts[r.party as usize - 1] += 1;
            }
        }
        counts
    }

    /// Makes the root of `tree` available at the current virtual time.
    pub fn submit_root(&mut self, tree: u32) {
        self.pending_roots.push((tree, 1));
    }

    fn projected_busy_until(&self, party_idx: usize) -> u64 {
        let state = &self.parties[party_idx];
        let frontier = state.running.as_ref().map_or(self.time_us, |r| r.end_us.max(self.time_us));
        frontier + state.queue.iter().map(|t| t.duration_us).sum::<u64>()
    }

    fn refresh_clocks(&mut self) {
        for i in 0..self.clocks.len() {
            self.clocks[i].busy_until = self.projected_busy_until(i);
        }
    }

    /// Enqueues the aggregation fan-out of one node at every party. Under the
    /// task-order policy the split is assigned later, when the last
    /// aggregation finishes; under breadth-first it is assigned immediately.
    fn make_available(&mut self, tree: u32, node: u64) -> Result<()> {
        let m = self.clocks.len();
        for i in 0..m {
            let duration_us = to_micros(sample_duration(&self.clocks[i].tau1, &mut self.rng)?);
            self.parties[i].queue.push(QueuedTask {
                arrival_us: self.time_us,
                tree,
                node,
                kind: TaskKind::Aggregate,
                duration_us,
            });
        }
        self.nodes.insert(
            (tree, node),
            NodeState { aggs_pending: m, agg_ends_us: vec![0; m], split_party: None },
        );
        if self.policy.conflict == ConflictPolicy::BreadthFirst {
            self.assign_split(tree, node)?;
        }
        Ok(())
    }

    /// Picks the active party for a ready node and enqueues its split there.
    fn assign_split(&mut self, tree: u32, node: u64) -> Result<()> {
        self.refresh_clocks();
        let active = match self.policy.mode {
            ScheduleMode::Fixed(p) => p,
            ScheduleMode::Dynamic => select_active_party(&self.clocks, self.time_us),
        };
        let idx = active as usize - 1;
        let duration_us = to_micros(sample_duration(&self.clocks[idx].tau2, &mut self.rng)?);
        self.parties[idx].queue.push(QueuedTask {
            arrival_us: self.time_us,
            tree,
            node,
            kind: TaskKind::Split,
            duration_us,
        });
        self.clocks[idx].busy_until += duration_us;
        self.nodes
            .get_mut(&(tree, node))
            .expect("assigning a split for an unknown node")
            .split_party = Some(active);
        Ok(())
    }

    fn task_ready(&self, task: &QueuedTask) -> bool {
        match task.kind {
            TaskKind::Aggregate => true,
            TaskKind::Split => self.nodes[&(task.tree, task.node)].aggs_pending == 0,
        }
    }

    /// Starts the best ready task of an idle party, if any.
    fn try_start(&mut self, party_idx: usize) {
        if self.parties[party_idx].running.is_some() {
            return;
        }
        // FIFO by arrival, aggregations before splits at equal arrival
        let best = self.parties[party_idx]
            .queue
            .iter()
            .enumerate()
            .filter(|(_, t)| self.task_ready(t))
            .min_by_key(|(_, t)| (t.arrival_us, t.kind as u64, u64::from(t.tree), t.node))
            .map(|(i, _)| i);
        if let Some(i) = best {
            let task = self.parties[party_idx].queue.remove(i);
            let start_us = self.time_us;
            let end_us = start_us + task.duration_us;
            self.parties[party_idx].running = Some(RunningTask {
                tree: task.tree,
                node: task.node,
                kind: task.kind,
                start_us,
                end_us,
            });
            self.seq += 1;
            self.events.push(Reverse((end_us, self.seq, party_idx)));
        }
    }

    /// Runs until all submitted work is done. `children_of` answers every
    /// completed split with the child nodes to schedule next.
    pub fn run_to_completion<F>(&mut self, mut children_of: F) -> Result<()>
    where
        F: FnMut(&SplitDone) -> Result<Vec<u64>>,
    {
        // roots submitted since the last drain become available now
        let roots = std::mem::take(&mut self.pending_roots);
        for (tree, node) in roots {
            self.make_available(tree, node)?;
        }
        for i in 0..self.parties.len() {
            self.try_start(i);
        }

        while let Some(Reverse((t, _, _))) = self.events.peek().copied() {
            self.time_us = t;
            let mut completed_splits = Vec::new();
            let mut became_ready = Vec::new();
            while let Some(Reverse((et, _, party_idx))) = self.events.peek().copied() {
                if et != t {
                    break;
                }
                self.events.pop();
                let running = self.parties[party_idx]
                    .running
                    .take()
                    .expect("completion event for an idle party");
                debug_assert_eq!(running.end_us, t);
                self.records.push(AllocationRecord {
                    tree_id: running.tree,
                    node_id: running.node,
                    party: party_idx as u32 + 1,
                    kind: running.kind,
                    start_us: running.start_us,
                    end_us: running.end_us,
                });
                match running.kind {
                    TaskKind::Aggregate => {
                        let state = self
                            .nodes
                            .get_mut(&(running.tree, running.node))
                            .expect("aggregation for an unknown node");
                        state.aggs_pending -= 1;
                        state.agg_ends_us[party_idx] = t;
                        if state.aggs_pending == 0 && state.split_party.is_none() {
                            became_ready.push((running.tree, running.node));
                        }
                    }
                    TaskKind::Split => completed_splits.push((running.tree, running.node, running)),
                }
            }

            // children of completed splits become available first, then splits
            // of ready nodes are assigned in node order
            completed_splits.sort_by_key(|(tree, node, _)| (*tree, *node));
            let mut available = Vec::new();
            for (tree, node, running) in completed_splits {
                let state = self.nodes.get(&(tree, node)).expect("split for an unknown node");
                let done = SplitDone {
                    tree,
                    node,
                    party: state.split_party.expect("completed split was never assigned"),
                    start_us: running.start_us,
                    end_us: running.end_us,
                    agg_ends_us: state.agg_ends_us.clone(),
                };
                for child in children_of(&done)? {
                    available.push((tree, child));
                }
            }
            available.sort_unstable();
            for (tree, node) in available {
                self.make_available(tree, node)?;
            }
            became_ready.sort_unstable();
            for (tree, node) in became_ready {
                self.assign_split(tree, node)?;
            }
            self.refresh_clocks();
            for i in 0..self.parties.len() {
                self.try_start(i);
            }
        }
        Ok(())
    }
}

/// Outcome of one standalone schedule simulation.
#[derive(Debug, Clone)]
pub struct ScheduleOutcome {
    pub records: Vec<AllocationRecord>,
    pub makespan_us: u64,
    pub split_counts: Vec<u64>,
}

impl ScheduleOutcome {
    pub fn makespan_seconds(&self) -> f64 {
        self.makespan_us as f64 / 1e6
    }

    /// Per-party idle fraction of the makespan.
    pub fn idle_fractions(&self, m: u32) -> Vec<f64> {
        let mut busy = vec![0u64; m as usize];
        for r in &self.records {
            busy[r.party as usize - 1] += r.end_us - r.start_us;
        }
        busy.iter()
            .map(|&b| {
                if self.makespan_us == 0 {
                    0.0
                } else {
                    1.0 - b as f64 / self.makespan_us as f64
                }
            })
            .collect()
    }
}

/// Simulates training of one complete tree with `n` non-leaf layers
/// (`2^n - 1` split nodes, queue ordered by node index).
pub fn run_schedule(
    n_layers: u32,
    clocks: Vec<PartyClock>,
    policy: SchedulePolicy,
    seed: u64,
) -> Result<ScheduleOutcome> {
    if n_layers == 0 || n_layers > 32 {
        return Err(Error::Argument(format!("layer count {n_layers} is out of range")));
    }
    let mut engine = Engine::new(clocks, policy, seed)?;
    engine.submit_root(1);
    let last_split_node = (1u64 << n_layers) - 1;
    engine.run_to_completion(|done| {
        if done.node * 2 <= last_split_node {
            Ok(vec![done.node * 2, done.node * 2 + 1])
        } else {
            Ok(vec![])
        }
    })?;
    let makespan_us = engine.records().iter().map(|r| r.end_us).max().unwrap_or(0);
    let split_counts = engine.split_counts(1);
    Ok(ScheduleOutcome { records: engine.records, makespan_us, split_counts })
}

/// Closed-form ideal assignment: layers up to `ceil(log2 M)` double the
/// active set, deeper layers round-robin breadth-first over all parties.
pub fn ideal_assignment(n: u32, m: u32) -> BTreeMap<u64, u32> {
    debug_assert!(n >= 1 && m >= 1);
    let mut map = BTreeMap::new();
    let mut doubling = 0u32;
    while (1u64 << doubling) < u64::from(m) {
        doubling += 1;
    }
    let doubling = doubling.min(n);
    for layer in 1..=doubling {
        let first = 1u64 << (layer - 1);
        for (offset, node) in (first..first * 2).enumerate() {
            map.insert(node, offset as u32 + 1);
        }
    }
    let rest_start = 1u64 << doubling;
    let last = (1u64 << n) - 1;
    for (offset, node) in (rest_start..=last).enumerate() {
        map.insert(node, (offset as u64 % u64::from(m)) as u32 + 1);
    }
    map
}

/// Every node handled by the one fixed active party.
pub fn fixed_assignment(n: u32, party: u32) -> BTreeMap<u64, u32> {
    (1..(1u64 << n)).map(|node| (node, party)).collect()
}

/// Writes the Gantt log as CSV.
pub fn write_gantt_csv<W: std::io::Write>(records: &[AllocationRecord], mut w: W) -> Result<()> {
    writeln!(w, "tree_id,node_id,party,kind,start_us,end_us")?;
    for r in records {
        let kind = match r.kind {
            TaskKind::Aggregate => "aggregate",
            TaskKind::Split => "split",
        };
        writeln!(w, "{},{},{},{},{},{}", r.tree_id, r.node_id, r.party, kind, r.start_us, r.end_us)?;
    }
    Ok(())
}
