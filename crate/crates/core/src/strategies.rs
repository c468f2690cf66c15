//! Group testing schedulers.
//!
//! Each scheduler drives the oracle test by test and records every forward
//! pass in a log. Groups of a single sample always go to the individual
//! network and their outcome is final.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cost_model::{group_test_cost, individual_cost, sum_macs, CacheState, CostProfile, DesignSpec, Macs};
use crate::error::{Error, Result};
use crate::oracle::{respond, OracleProfile, TestOutcome};
use crate::population::{assign_groups_on, GroupAssignment, Population};
use crate::rng::{self, Purpose};

/// Which network ran a test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestLevel {
    /// The unmodified individual network, full cost.
    Individual,
    /// The group network.
    Group,
}

/// One forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestEvent {
    pub round: u32,
    pub level: TestLevel,
    pub size: usize,
    pub members: Vec<usize>,
    /// Per member: leaf features were reused from the run's cache.
    pub cache_hits: Vec<bool>,
    pub outcome: TestOutcome,
    pub cost: Macs,
}

/// Everything one scheduler run produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    /// Sample ids declared positive.
    pub flagged: BTreeSet<usize>,
    pub log: Vec<TestEvent>,
    /// Test count of round `r + 1` at index `r`.
    pub tests_per_round: Vec<usize>,
}

impl RunResult {
    fn from_log(flagged: BTreeSet<usize>, log: Vec<TestEvent>) -> Self {
        let rounds = log.iter().map(|e| e.round).max().unwrap_or(0) as usize;
        let mut tests_per_round = vec![0; rounds];
        for e in &log {
            tests_per_round[e.round as usize - 1] += 1;
        }
        RunResult { flagged, log, tests_per_round }
    }

    pub fn tests_total(&self) -> usize {
        self.log.len()
    }

    pub fn tests_first_round(&self) -> usize {
        self.tests_per_round.first().copied().unwrap_or(0)
    }

    pub fn total_macs(&self) -> Result<Macs> {
        sum_macs(self.log.iter().map(|e| e.cost))
    }
}

/// Inputs shared by every scheduler.
#[derive(Debug, Clone, Copy)]
pub struct TestBench<'a> {
    pub population: &'a Population,
    pub oracle: &'a OracleProfile,
    pub cost: &'a CostProfile,
    pub design: &'a DesignSpec,
    /// Seed of the oracle streams.
    pub seed: u64,
    /// Reuse leaf features of samples already seen by the group network.
    pub caching: bool,
}

struct Runner<'a> {
    bench: TestBench<'a>,
    cache: CacheState,
    log: Vec<TestEvent>,
}

impl<'a> Runner<'a> {
    fn new(bench: TestBench<'a>) -> Result<Self> {
        bench.design.validate(bench.cost)?;
        Ok(Runner { bench, cache: CacheState::new(), log: Vec::new() })
    }

    /// Runs one test. `slot` picks the test's draw within the round's stream
    /// and must be unique among the round's tests.
    fn test(&mut self, round: u32, members: Vec<usize>, slot: u64) -> Result<bool> {
        let b = self.bench;
        let (level, cost, cache_hits) = if members.len() == 1 {
            (TestLevel::Individual, individual_cost(b.cost), vec![false])
        } else {
            let empty = CacheState::new();
            let cache = if b.caching { &self.cache } else { &empty };
            let price = group_test_cost(b.design, b.cost, cache, &members)?;
            if b.caching {
                self.cache.commit(&price.new_checkpoints);
            }
            (TestLevel::Group, price.cost, price.cache_hits)
        };
        let mut stream = rng::stream_at(b.seed, Purpose::Oracle, round, slot);
        let outcome = respond(&members, b.population, b.oracle, &mut stream)?;
        self.log.push(TestEvent { round, level, size: members.len(), members, cache_hits, outcome, cost });
        Ok(outcome.positive)
    }
}

fn check_assignment(population: &Population, assignment: &GroupAssignment) -> Result<()> {
    if assignment.sample_count() != population.len()
        || assignment.groups().iter().flatten().any(|&id| id >= population.len())
    {
        return Err(Error::invalid(format!(
            "assignment covers {} samples, population has {}",
            assignment.sample_count(),
            population.len()
        )));
    }
    Ok(())
}

/// Two-round (Dorfman) testing: test every group, then retest each member of
/// every positive group with the individual network.
pub fn run_two_round(bench: TestBench<'_>, assignment: &GroupAssignment) -> Result<RunResult> {
    check_assignment(bench.population, assignment)?;
    let mut runner = Runner::new(bench)?;
    let mut flagged = BTreeSet::new();
    let mut retest = Vec::new();
    for group in assignment.groups() {
        let positive = runner.test(1, group.clone(), group[0] as u64)?;
        match (positive, group.len()) {
            (true, 1) => {
                flagged.insert(group[0]);
            }
            (true, _) => retest.extend_from_slice(group),
            (false, _) => {}
        }
    }
    for id in retest {
        if runner.test(2, vec![id], id as u64)? {
            flagged.insert(id);
        }
    }
    Ok(RunResult::from_log(flagged, runner.log))
}

/// Splits `members` into `min(k, len)` contiguous blocks whose sizes differ
/// by at most one, larger blocks first.
pub fn split_group(members: &[usize], k: usize) -> Vec<Vec<usize>> {
    let parts = k.min(members.len()).max(1);
    let (base, extra) = (members.len() / parts, members.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push(members[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Multi-round testing: positive groups are split into `k` sub-groups and
/// retested recursively; single samples go to the individual network.
pub fn run_multi_round(bench: TestBench<'_>, assignment: &GroupAssignment, k: usize) -> Result<RunResult> {
    check_assignment(bench.population, assignment)?;
    let m = assignment.group_size();
    if k < 2 || k > m {
        return Err(Error::field("algorithm.k", format!("split factor {k} must be in 2..={m}")));
    }
    let mut runner = Runner::new(bench)?;
    let mut flagged = BTreeSet::new();
    let mut frontier: Vec<Vec<usize>> = assignment.groups().to_vec();
    let mut round = 1;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for group in frontier {
            let slot = group[0] as u64;
            let single = group.len() == 1;
            if runner.test(round, group.clone(), slot)? {
                if single {
                    flagged.insert(group[0]);
                } else {
                    next.extend(split_group(&group, k));
                }
            }
        }
        frontier = next;
        round += 1;
    }
    Ok(RunResult::from_log(flagged, runner.log))
}

/// The two random partitions of a double-pool run.
pub fn double_pool_partitions(n: usize, m: usize, seed: u64) -> Result<(GroupAssignment, GroupAssignment)> {
    Ok((
        assign_groups_on(n, m, seed, Purpose::Assignment)?,
        assign_groups_on(n, m, seed, Purpose::SecondAssignment)?,
    ))
}

/// One-round double-pool testing: two independent partitions into groups of
/// `m`, all tests in a single round, decoded by ruling out every sample that
/// sits in a negative group.
pub fn run_one_round_double_pool(bench: TestBench<'_>, n: usize, m: usize, seed: u64) -> Result<RunResult> {
    if n != bench.population.len() {
        return Err(Error::invalid(format!("n = {n} but population has {}", bench.population.len())));
    }
    let (first, second) = double_pool_partitions(n, m, seed)?;
    let mut runner = Runner::new(bench)?;
    let mut groups = Vec::with_capacity(first.len() + second.len());
    let mut outcomes = Vec::with_capacity(groups.capacity());
    for (offset, partition) in [(0, &first), (n as u64, &second)] {
        for group in partition.groups() {
            outcomes.push(runner.test(1, group.clone(), offset + group[0] as u64)?);
            groups.push(group.clone());
        }
    }
    let flagged = decode_double_pool(&groups, &outcomes, n)?;
    Ok(RunResult::from_log(flagged, runner.log))
}

/// Flags every sample that appears in no negative group. Every id in `0..n`
/// must appear in exactly two groups.
pub fn decode_double_pool(groups: &[Vec<usize>], outcomes: &[bool], n: usize) -> Result<BTreeSet<usize>> {
    if groups.len() != outcomes.len() {
        return Err(Error::invalid(format!("{} groups but {} outcomes", groups.len(), outcomes.len())));
    }
    let mut coverage = vec![0usize; n];
    let mut ruled_out = vec![false; n];
    for (group, &positive) in groups.iter().zip(outcomes) {
        for &id in group {
            if id >= n {
                return Err(Error::Coverage { id, coverage: 1 });
            }
            coverage[id] += 1;
            ruled_out[id] |= !positive;
        }
    }
    if let Some((id, &c)) = coverage.iter().enumerate().find(|(_, &c)| c != 2) {
        return Err(Error::Coverage { id, coverage: c });
    }
    Ok((0..n).filter(|&id| !ruled_out[id]).collect())
}

/// Decodes a double-pool run from its log.
pub fn decode_log(log: &[TestEvent]) -> Result<BTreeSet<usize>> {
    let n = log.iter().flat_map(|e| e.members.iter()).max().map_or(0, |&m| m + 1);
    let groups: Vec<Vec<usize>> = log.iter().map(|e| e.members.clone()).collect();
    let outcomes: Vec<bool> = log.iter().map(|e| e.outcome.positive).collect();
    decode_double_pool(&groups, &outcomes, n)
}

/// Writes one JSON record per line.
pub fn write_log<W: Write>(log: &[TestEvent], mut out: W) -> Result<()> {
    for e in log {
        let line = serde_json::to_string(e).expect("event serializes");
        writeln!(out, "{line}").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<TestEvent>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: TestEvent =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("log line {}: {e}", i + 1)))?;
        if event.size != event.members.len() || event.cache_hits.len() != event.members.len() {
            return Err(Error::Parse(format!("log line {}: size disagrees with members", i + 1)));
        }
        out.push(event);
    }
    Ok(out)
}

/// Reprices every logged event from its size and cache hits and returns the
/// total. Fails if any event's recorded cost disagrees.
pub fn replay_cost(log: &[TestEvent], design: &DesignSpec, profile: &CostProfile) -> Result<Macs> {
    let mut costs = Vec::with_capacity(log.len());
    for (i, e) in log.iter().enumerate() {
        let cost = match e.level {
            TestLevel::Individual => individual_cost(profile),
            TestLevel::Group => {
                let cached = e.cache_hits.iter().filter(|&&h| h).count();
                design.price(profile, e.members.len(), cached)?
            }
        };
        if cost != e.cost {
            return Err(Error::invalid(format!("event {i}: logged cost {} but replay gives {cost}", e.cost)));
        }
        costs.push(cost);
    }
    sum_macs(costs)
}
