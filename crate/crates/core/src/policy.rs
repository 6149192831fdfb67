//! Tabular softmax policy over operation tokens.
//!
//! Logits are indexed by `(target, current value, steps left)`; each entry is
//! a vector over the vocabulary. Sampling divides logits by the temperature,
//! likelihoods are always reported at temperature 1.
//!
//! # Checkpoint format
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "BSTARPOL"
//! format     u32      1
//! dtype      u8       4 (f32) or 8 (f64)
//! modulus    u32
//! max_steps  u32
//! vocab      u32
//! version    u64
//! logits     modulus * modulus * max_steps * vocab values of `dtype`,
//!            row-major over (target, value, steps_left - 1, token)
//! checksum   u64      FNV-1a 64 of every preceding byte
//! ```

use std::io::{Read, Write};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::scalar::Scalar;
use crate::seed;
use crate::task::{OpToken, Query, Response, Task};

const MAGIC: &[u8; 8] = b"BSTARPOL";
const FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableShape {
    pub modulus: u32,
    pub max_steps: u32,
    pub vocab: usize,
}

impl TableShape {
    pub fn of(task: &Task) -> Self {
        Self {
            modulus: task.modulus(),
            max_steps: task.max_steps(),
            vocab: task.vocab_size(),
        }
    }

    pub fn len(&self) -> usize {
        let m = self.modulus as usize;
        m * m * self.max_steps as usize * self.vocab
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    shape: TableShape,
    logits: Vec<T>,
    version: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot<T> {
    params: PolicyParams<T>,
}

impl<T: Scalar> PolicySnapshot<T> {
    pub fn version(&self) -> u64 {
        self.params.version
    }

    pub fn params(&self) -> &PolicyParams<T> {
        &self.params
    }
}

/// A weighted training example.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub query: &'a Query,
    pub response: &'a Response,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Empty batch; nothing changed.
    SkippedEmpty,
}

pub fn softmax<T: Scalar>(logits: &[T], temperature: T) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let total: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&l| l - lse).collect()
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be > 0, got {temperature}")))
    }
}

impl<T: Scalar> PolicyParams<T> {
    /// Uniform policy: every logit zero.
    pub fn zeros(task: &Task) -> Self {
        Self::zeros_with_shape(TableShape::of(task))
    }

    pub fn zeros_with_shape(shape: TableShape) -> Self {
        Self {
            shape,
            logits: vec![T::zero(); shape.len()],
            version: 0,
        }
    }

    pub fn shape(&self) -> TableShape {
        self.shape
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn new_optimizer(&self, config: crate::optim::OptimizerConfig) -> OptimizerState<T> {
        OptimizerState::new(config, self.logits.len())
    }

    fn offset(&self, target: u32, value: u32, steps_left: u32) -> usize {
        debug_assert!(steps_left >= 1 && steps_left <= self.shape.max_steps);
        let m = self.shape.modulus as usize;
        let l = self.shape.max_steps as usize;
        ((target as usize * m + value as usize) * l + (steps_left as usize - 1)) * self.shape.vocab
    }

    pub fn state_logits(&self, target: u32, value: u32, steps_left: u32) -> &[T] {
        let o = self.offset(target, value, steps_left);
        &self.logits[o..o + self.shape.vocab]
    }

    pub fn state_logits_mut(&mut self, target: u32, value: u32, steps_left: u32) -> &mut [T] {
        let o = self.offset(target, value, steps_left);
        let v = self.shape.vocab;
        &mut self.logits[o..o + v]
    }

    fn check_compatible(&self, task: &Task, q: &Query) -> Result<()> {
        if TableShape::of(task) != self.shape {
            return Err(Error::Integrity(format!(
                "policy shape {:?} does not match task {:?}",
                self.shape,
                TableShape::of(task)
            )));
        }
        if q.max_steps == 0 || q.max_steps > self.shape.max_steps {
            return Err(Error::Argument(format!(
                "query {} budget {} outside policy range [1, {}]",
                q.id, q.max_steps, self.shape.max_steps
            )));
        }
        Ok(())
    }

    /// Token distribution at one state for a given temperature.
    pub fn distribution(&self, target: u32, value: u32, steps_left: u32, temperature: f64) -> Result<Vec<T>> {
        check_temperature(temperature)?;
        Ok(softmax(self.state_logits(target, value, steps_left), T::of(temperature)))
    }

    /// Rolls out one response, stopping on the target or when the budget
    /// runs out.
    pub fn sample_one(&self, task: &Task, q: &Query, temperature: f64, rng: &mut seed::Rng) -> Result<Response> {
        check_temperature(temperature)?;
        self.check_compatible(task, q)?;
        let temp = T::of(temperature);
        let mut value = q.start;
        let mut steps = Vec::with_capacity(q.max_steps as usize);
        let mut logprob = 0.0;
        while value != q.target && (steps.len() as u32) < q.max_steps {
            let left = q.max_steps - steps.len() as u32;
            let logits = self.state_logits(q.target, value, left);
            let probs = softmax(logits, temp);
            let u = T::of(rng.gen::<f64>());
            let mut acc = T::zero();
            let mut choice = probs.len() - 1;
            for (i, &p) in probs.iter().enumerate() {
                acc = acc + p;
                if u < acc {
                    choice = i;
                    break;
                }
            }
            logprob += log_softmax(logits)[choice].as_f64();
            let token = OpToken(choice as u8);
            value = task.apply(token, value)?;
            steps.push(token);
        }
        Ok(Response {
            steps,
            final_answer: value,
            logprob,
        })
    }

    /// `k` independent candidates; candidate `c` draws from the stream
    /// `(seed, "candidate", c)`.
    pub fn sample(&self, task: &Task, q: &Query, temperature: f64, k: usize, seed: u64) -> Result<Vec<Response>> {
        check_temperature(temperature)?;
        if k == 0 {
            return Err(Error::Argument("k must be >= 1".into()));
        }
        (0..k)
            .map(|c| {
                let mut rng = seed::stream(seed, "candidate", c as u64);
                self.sample_one(task, q, temperature, &mut rng)
            })
            .collect()
    }

    /// Argmax decoding; ties go to the lowest token index.
    pub fn greedy(&self, task: &Task, q: &Query) -> Result<Response> {
        self.check_compatible(task, q)?;
        let mut value = q.start;
        let mut steps = Vec::with_capacity(q.max_steps as usize);
        let mut logprob = 0.0;
        while value != q.target && (steps.len() as u32) < q.max_steps {
            let left = q.max_steps - steps.len() as u32;
            let logits = self.state_logits(q.target, value, left);
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate().skip(1) {
                if l > logits[best] {
                    best = i;
                }
            }
            logprob += log_softmax(logits)[best].as_f64();
            let token = OpToken(best as u8);
            value = task.apply(token, value)?;
            steps.push(token);
        }
        Ok(Response {
            steps,
            final_answer: value,
            logprob,
        })
    }

    /// Temperature-1 log-likelihood of `r` for `q`.
    pub fn log_likelihood(&self, task: &Task, q: &Query, r: &Response) -> Result<T> {
        self.check_compatible(task, q)?;
        let mut value = q.start;
        let mut total = T::zero();
        for (j, &token) in r.steps.iter().enumerate() {
            let left = self.steps_left(q, j)?;
            let logits = self.state_logits(q.target, value, left);
            total = total + log_softmax(logits)[token.index()];
            value = task.apply(token, value)?;
        }
        Ok(total)
    }

    fn steps_left(&self, q: &Query, j: usize) -> Result<u32> {
        (q.max_steps as usize)
            .checked_sub(j)
            .filter(|&l| l >= 1)
            .map(|l| l as u32)
            .ok_or_else(|| Error::MalformedResponse(format!("response for query {} exceeds its budget", q.id)))
    }

    /// Weighted negative log-likelihood, averaged over the batch size.
    pub fn nll(&self, task: &Task, batch: &[Example<'_>]) -> Result<T> {
        if batch.is_empty() {
            return Ok(T::zero());
        }
        let mut total = T::zero();
        for ex in batch {
            total = total - T::of(ex.weight) * self.log_likelihood(task, ex.query, ex.response)?;
        }
        Ok(total / T::of(batch.len() as f64))
    }

    /// Dense gradient of [`nll`](Self::nll) with respect to every logit.
    pub fn nll_gradient(&self, task: &Task, batch: &[Example<'_>]) -> Result<Vec<T>> {
        let mut grad = vec![T::zero(); self.logits.len()];
        self.accumulate_gradient(task, batch, &mut grad, &mut Vec::new())?;
        Ok(grad)
    }

    /// Adds the batch gradient into `grad`; pushes the offset of every
    /// visited state row onto `rows`.
    fn accumulate_gradient(&self, task: &Task, batch: &[Example<'_>], grad: &mut [T], rows: &mut Vec<usize>) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let scale = T::one() / T::of(batch.len() as f64);
        for ex in batch {
            if ex.weight < 0.0 || !ex.weight.is_finite() {
                return Err(Error::Argument(format!("weight must be finite and >= 0, got {}", ex.weight)));
            }
            self.check_compatible(task, ex.query)?;
            if ex.weight == 0.0 {
                continue;
            }
            let w = T::of(ex.weight) * scale;
            let mut value = ex.query.start;
            for (j, &token) in ex.response.steps.iter().enumerate() {
                let left = self.steps_left(ex.query, j)?;
                let o = self.offset(ex.query.target, value, left);
                rows.push(o);
                let probs = softmax(&self.logits[o..o + self.shape.vocab], T::one());
                for (i, p) in probs.into_iter().enumerate() {
                    let indicator = if i == token.index() { T::one() } else { T::zero() };
                    grad[o + i] = grad[o + i] + w * (p - indicator);
                }
                value = task.apply(token, value)?;
            }
        }
        Ok(())
    }

    /// One optimizer step on the weighted NLL of `batch`.
    pub fn update(&mut self, task: &Task, batch: &[Example<'_>], optimizer: &mut OptimizerState<T>) -> Result<UpdateOutcome> {
        if batch.is_empty() {
            log::warn!("policy update called with an empty batch; skipped");
            return Ok(UpdateOutcome::SkippedEmpty);
        }
        let mut grad = std::mem::take(&mut optimizer.scratch);
        if grad.len() != self.logits.len() {
            grad = vec![T::zero(); self.logits.len()];
        }
        let mut rows = Vec::new();
        let accumulated = self.accumulate_gradient(task, batch, &mut grad, &mut rows);
        rows.sort_unstable();
        rows.dedup();
        let touched: Vec<usize> = rows.iter().flat_map(|&o| o..o + self.shape.vocab).collect();
        if let Err(e) = accumulated {
            touched.iter().for_each(|&i| grad[i] = T::zero());
            optimizer.scratch = grad;
            return Err(e);
        }
        let applied = optimizer.apply_sparse(&mut self.logits, &mut grad, &touched);
        optimizer.scratch = grad;
        applied?;
        if let Some(bad) = optimizer.active().iter().map(|&i| self.logits[i]).find(|l| !l.is_finite()) {
            return Err(Error::Integrity(format!("non-finite logit {bad} after update")));
        }
        self.version += 1;
        Ok(UpdateOutcome::Applied)
    }

    pub fn snapshot(&self) -> PolicySnapshot<T> {
        PolicySnapshot { params: self.clone() }
    }

    /// Restores the snapshot's logits. The version never decreases.
    pub fn restore(&mut self, snapshot: &PolicySnapshot<T>) -> Result<()> {
        if snapshot.params.shape != self.shape {
            return Err(Error::Integrity(format!(
                "snapshot shape {:?} does not match policy shape {:?}",
                snapshot.params.shape, self.shape
            )));
        }
        self.logits.copy_from_slice(&snapshot.params.logits);
        self.version = self.version.max(snapshot.params.version);
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(40 + self.logits.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT.to_le_bytes());
        let width: u8 = if T::DTYPE == "f32" { 4 } else { 8 };
        buf.push(width);
        buf.extend_from_slice(&self.shape.modulus.to_le_bytes());
        buf.extend_from_slice(&self.shape.max_steps.to_le_bytes());
        buf.extend_from_slice(&(self.shape.vocab as u32).to_le_bytes());
        buf.extend_from_slice(&self.version.to_le_bytes());
        for &l in &self.logits {
            if width == 4 {
                buf.extend_from_slice(&(l.as_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&l.as_f64().to_le_bytes());
            }
        }
        let checksum = seed::fnv1a64(&buf);
        buf.extend_from_slice(&checksum.to_le_bytes());
        out.write_all(&buf)
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input
            .read_to_end(&mut buf)
            .map_err(|e| Error::Integrity(format!("checkpoint read failed: {e}")))?;
        let corrupt = |what: &str| Error::Integrity(format!("corrupt checkpoint: {what}"));
        if buf.len() < 41 || &buf[..8] != MAGIC {
            return Err(corrupt("bad magic or truncated header"));
        }
        let (body, tail) = buf.split_at(buf.len() - 8);
        if seed::fnv1a64(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap());
        if u32_at(8) != FORMAT {
            return Err(corrupt("unsupported format version"));
        }
        let width = body[12];
        let expected_width = if T::DTYPE == "f32" { 4 } else { 8 };
        if width != expected_width {
            return Err(Error::Integrity(format!(
                "checkpoint stores {width}-byte values, policy uses {}",
                T::DTYPE
            )));
        }
        let shape = TableShape {
            modulus: u32_at(13),
            max_steps: u32_at(17),
            vocab: u32_at(21) as usize,
        };
        let version = u64::from_le_bytes(body[25..33].try_into().unwrap());
        let data = &body[33..];
        if data.len() != shape.len() * usize::from(width) {
            return Err(corrupt("logit payload length does not match shape"));
        }
        let logits = data
            .chunks_exact(usize::from(width))
            .map(|c| {
                if width == 4 {
                    T::of(f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                } else {
                    T::of(f64::from_le_bytes(c.try_into().unwrap()))
                }
            })
            .collect::<Vec<T>>();
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(corrupt("non-finite logit"));
        }
        Ok(Self { shape, logits, version })
    }
}
