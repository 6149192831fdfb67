//! Synthetic chain-arithmetic reasoning task.
//!
//! A query asks for a sequence of modular arithmetic moves that turns `start`
//! into `target` within `max_steps` moves. Correctness is checked by
//! re-execution, and step-level ground truth comes from an exact
//! reachability table.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// One arithmetic move, applied modulo the task modulus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Add(u32),
    Mul(u32),
}

impl Op {
    pub fn apply(self, value: u32, modulus: u32) -> u32 {
        let (v, m) = (u64::from(value), u64::from(modulus));
        let out = match self {
            Op::Add(c) => (v + u64::from(c)) % m,
            Op::Mul(c) => (v * u64::from(c)) % m,
        };
        out as u32
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Add(c) => write!(f, "add{c}"),
            Op::Mul(c) => write!(f, "mul{c}"),
        }
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown op token {s:?} (expected addN or mulN)"));
        let (ctor, digits): (fn(u32) -> Op, _) = if let Some(d) = s.strip_prefix("add") {
            (Op::Add, d)
        } else if let Some(d) = s.strip_prefix("mul") {
            (Op::Mul, d)
        } else {
            return Err(bad());
        };
        digits.parse::<u32>().map(ctor).map_err(|_| bad())
    }
}

impl Serialize for Op {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Op {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Index of an [`Op`] in the task vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OpToken(pub u8);

impl OpToken {
    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

pub fn default_vocabulary() -> Vec<Op> {
    vec![
        Op::Add(1),
        Op::Add(2),
        Op::Add(3),
        Op::Mul(2),
        Op::Mul(3),
        Op::Mul(5),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub modulus: u32,
    pub vocabulary: Vec<Op>,
    pub max_steps: u32,
    pub query_count: usize,
    pub seed: u64,
    /// Keep unsolvable draws instead of redrawing them.
    pub admit_unsolvable: bool,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            modulus: 97,
            vocabulary: default_vocabulary(),
            max_steps: 6,
            query_count: 600,
            seed: 0,
            admit_unsolvable: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: u64,
    pub start: u32,
    pub target: u32,
    pub max_steps: u32,
    pub solvable: bool,
    /// Length of the shortest solution; `None` when unsolvable within budget.
    pub min_steps: Option<u32>,
}

/// The externally exported query record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: u64,
    pub start: u32,
    pub target: u32,
    pub max_steps: u32,
}

impl From<&Query> for QueryRecord {
    fn from(q: &Query) -> Self {
        Self {
            id: q.id,
            start: q.start,
            target: q.target,
            max_steps: q.max_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub steps: Vec<OpToken>,
    pub final_answer: u32,
    /// Log-probability under the policy at temperature 1.
    pub logprob: f64,
}

impl Response {
    /// Surface-form identity used for uniqueness counting.
    pub fn canonical_key(&self) -> &[OpToken] {
        &self.steps
    }
}

/// Minimum steps to reach one target, from every value; `u8::MAX` marks
/// values that cannot reach it within the budget.
type DistanceRow = Box<[u8]>;

/// A validated task: modulus, vocabulary and memoized reachability tables.
pub struct Task {
    modulus: u32,
    vocabulary: Vec<Op>,
    max_steps: u32,
    distance: Vec<OnceLock<DistanceRow>>,
}

impl fmt::Debug for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Task")
            .field("modulus", &self.modulus)
            .field("vocabulary", &self.vocabulary)
            .field("max_steps", &self.max_steps)
            .finish()
    }
}

impl Task {
    pub fn new(modulus: u32, vocabulary: Vec<Op>, max_steps: u32) -> Result<Self> {
        if modulus < 2 {
            return Err(Error::Config(format!("modulus must be >= 2, got {modulus}")));
        }
        if vocabulary.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        if vocabulary.len() > usize::from(u8::MAX) {
            return Err(Error::Config("vocabulary exceeds 255 tokens".into()));
        }
        if max_steps == 0 || max_steps >= u32::from(u8::MAX) {
            return Err(Error::Config(format!("max_steps must be in [1, 254], got {max_steps}")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = vocabulary.iter().find(|op| !seen.insert(**op)) {
            return Err(Error::Config(format!("duplicate vocabulary token {dup}")));
        }
        Ok(Self {
            modulus,
            vocabulary,
            max_steps,
            distance: (0..modulus).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn from_spec(spec: &TaskSpec) -> Result<Self> {
        Self::new(spec.modulus, spec.vocabulary.clone(), spec.max_steps)
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn vocabulary(&self) -> &[Op] {
        &self.vocabulary
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// Largest step budget the reachability tables cover.
    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn apply(&self, token: OpToken, value: u32) -> Result<u32> {
        let op = self.vocabulary.get(token.index()).ok_or_else(|| {
            Error::MalformedResponse(format!(
                "token {} outside vocabulary of size {}",
                token.0,
                self.vocabulary.len()
            ))
        })?;
        Ok(op.apply(value, self.modulus))
    }

    /// Runs `steps` from `start`.
    pub fn execute(&self, start: u32, steps: &[OpToken]) -> Result<u32> {
        steps.iter().try_fold(start, |v, &t| self.apply(t, v))
    }

    pub fn query(&self, id: u64, start: u32, target: u32, max_steps: u32) -> Query {
        let start = start % self.modulus;
        let target = target % self.modulus;
        let max_steps = max_steps.clamp(1, self.max_steps);
        let min_steps = self.min_steps(target, start).filter(|&d| d <= max_steps);
        Query {
            id,
            start,
            target,
            max_steps,
            solvable: min_steps.is_some(),
            min_steps,
        }
    }

    /// Row of shortest distances to `target`, built layer by layer over
    /// `(value, steps_left)`: a value is solvable in `s` steps iff it is the
    /// target or some token maps it into a value solvable in `s - 1`.
    fn distance_row(&self, target: u32) -> &[u8] {
        self.distance[target as usize].get_or_init(|| {
            let m = self.modulus as usize;
            let mut dist = vec![u8::MAX; m];
            dist[target as usize] = 0;
            for s in 1..=self.max_steps as u8 {
                let prev = dist.clone();
                for v in 0..m {
                    if dist[v] != u8::MAX {
                        continue;
                    }
                    let hit = self
                        .vocabulary
                        .iter()
                        .any(|op| prev[op.apply(v as u32, self.modulus) as usize] != u8::MAX);
                    if hit {
                        dist[v] = s;
                    }
                }
            }
            dist.into_boxed_slice()
        })
    }

    /// Shortest number of moves from `from_value` to `target` within the
    /// task budget.
    pub fn min_steps(&self, target: u32, from_value: u32) -> Option<u32> {
        let d = self.distance_row(target % self.modulus)[(from_value % self.modulus) as usize];
        (d != u8::MAX).then_some(u32::from(d))
    }

    /// True iff `q.target` is reachable from `from_value` in at most
    /// `steps_left` moves.
    pub fn reachable(&self, q: &Query, from_value: u32, steps_left: u32) -> bool {
        self.min_steps(q.target, from_value)
            .is_some_and(|d| d <= steps_left)
    }

    pub fn step_is_good(&self, q: &Query, prefix_value: u32, token: OpToken, steps_left_after: u32) -> Result<bool> {
        let next = self.apply(token, prefix_value)?;
        Ok(self.reachable(q, next, steps_left_after))
    }

    /// Per-step ground truth for a whole response.
    pub fn step_labels(&self, q: &Query, steps: &[OpToken]) -> Result<Vec<bool>> {
        let mut value = q.start;
        let mut labels = Vec::with_capacity(steps.len());
        for (j, &token) in steps.iter().enumerate() {
            let left_after = q.max_steps.saturating_sub(j as u32 + 1);
            labels.push(self.step_is_good(q, value, token, left_after)?);
            value = self.apply(token, value)?;
        }
        Ok(labels)
    }

    pub fn verify(&self, q: &Query, r: &Response) -> Result<bool> {
        if r.steps.len() > q.max_steps as usize {
            return Err(Error::MalformedResponse(format!(
                "{} steps exceed budget {}",
                r.steps.len(),
                q.max_steps
            )));
        }
        Ok(self.execute(q.start, &r.steps)? == q.target)
    }

    /// Builds a response for `steps`, recomputing the final answer.
    pub fn response(&self, start: u32, steps: Vec<OpToken>, logprob: f64) -> Result<Response> {
        let final_answer = self.execute(start, &steps)?;
        Ok(Response {
            steps,
            final_answer,
            logprob,
        })
    }

    /// Draws a correct response uniformly over good tokens at each step,
    /// stopping on the target. Used to build supervised warm-up data.
    pub fn oracle_response(&self, q: &Query, rng: &mut seed::Rng) -> Option<Response> {
        if !q.solvable {
            return None;
        }
        let mut value = q.start;
        let mut steps = Vec::new();
        let mut good = Vec::with_capacity(self.vocab_size());
        while value != q.target {
            let left_after = q.max_steps - steps.len() as u32 - 1;
            good.clear();
            good.extend(
                (0..self.vocab_size())
                    .map(|i| OpToken(i as u8))
                    .filter(|&t| self.reachable(q, self.vocabulary[t.index()].apply(value, self.modulus), left_after)),
            );
            let t = good[rng.gen_range(0..good.len())];
            value = self.vocabulary[t.index()].apply(value, self.modulus);
            steps.push(t);
        }
        Some(Response {
            steps,
            final_answer: value,
            logprob: 0.0,
        })
    }
}

/// Generates `spec.query_count` distinct, non-trivial queries.
///
/// Pairs with `start == target` are never drawn. Unsolvable pairs are redrawn
/// unless `admit_unsolvable` is set.
pub fn generate_queries(spec: &TaskSpec) -> Result<Vec<Query>> {
    let task = Task::from_spec(spec)?;
    generate_with(&task, spec.query_count, spec.max_steps, spec.seed, spec.admit_unsolvable)
}

pub fn generate_with(task: &Task, count: usize, max_steps: u32, seed: u64, admit_unsolvable: bool) -> Result<Vec<Query>> {
    let m = task.modulus();
    let available = (0..m)
        .flat_map(|t| (0..m).map(move |s| (s, t)))
        .filter(|&(s, t)| s != t && (admit_unsolvable || task.min_steps(t, s).is_some_and(|d| d <= max_steps)))
        .count();
    if count > available {
        return Err(Error::Config(format!(
            "query_count {count} exceeds the {available} distinct eligible queries"
        )));
    }
    let mut rng = seed::stream(seed, "queries", 0);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let start = rng.gen_range(0..m);
        let target = rng.gen_range(0..m);
        if start == target || seen.contains(&(start, target)) {
            continue;
        }
        let q = task.query(out.len() as u64, start, target, max_steps);
        if !q.solvable && !admit_unsolvable {
            continue;
        }
        seen.insert((start, target));
        out.push(q);
    }
    Ok(out)
}
