//! Online batch bookkeeping for the equal-batch-size (EBS) estimator and the
//! increasing-batch-size (IBS) comparison estimator.
//!
//! The EBS tracker keeps batch *sums* at the current power-of-two batch size
//! `b*` plus one partial tail. When `b*` doubles, adjacent sums are added
//! pairwise; an odd trailing sum becomes the head of the new partial batch.
//! At every point the stored partition equals what batching the full chain
//! offline at the current `b*` would give.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{Accumulator, Scalar};
use crate::sgd::{IterateObserver, IterateState, LearningRateSchedule};

const MAX_BATCH: f64 = (1u64 << 62) as f64;

/// Smallest power of two `2^γ` (γ ≥ 0) with `c * n^beta <= 2^γ`.
pub fn ebs_batch_size(n: u64, c: f64, beta: f64) -> Result<u64> {
    validate_rule(c, beta)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let target = c * (n as f64).powf(beta);
    if !target.is_finite() || target > MAX_BATCH {
        return Err(Error::BatchSizeOverflow(target));
    }
    let mut b: u64 = 1;
    while (b as f64) < target {
        b <<= 1;
    }
    Ok(b)
}

fn validate_rule(c: f64, beta: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!("c must be positive, got {c}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// Smallest `n` whose batch size exceeds `b`.
fn first_n_exceeding(b: u64, c: f64, beta: f64) -> u64 {
    let exceeds = |n: u64| c * (n as f64).powf(beta) > b as f64;
    let guess = ((b as f64) / c).powf(1.0 / beta);
    if !guess.is_finite() || guess >= u64::MAX as f64 / 2.0 {
        return u64::MAX;
    }
    let mut n = (guess.floor() as u64).max(1);
    while n > 1 && exceeds(n - 1) {
        n -= 1;
    }
    while !exceeds(n) {
        n += 1;
    }
    n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BatchRule {
    /// `b* = min{2^γ : c n^β <= 2^γ}`.
    Doubling { c: f64, beta: f64 },
    /// Constant batch size (diagnostics and the CLI `--batch-size` override).
    Fixed { size: u64 },
}

impl BatchRule {
    pub fn doubling(c: f64, beta: f64) -> Result<Self> {
        validate_rule(c, beta)?;
        Ok(Self::Doubling { c, beta })
    }

    pub fn fixed(size: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        Ok(Self::Fixed { size })
    }

    pub fn batch_size(&self, n: u64) -> Result<u64> {
        match *self {
            Self::Doubling { c, beta } => ebs_batch_size(n.max(1), c, beta),
            Self::Fixed { size } => Ok(size),
        }
    }
}

/// Online EBS partition of the iterate stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EbsTracker<A> {
    d: usize,
    rule: BatchRule,
    b_star: u64,
    /// Completed batch sums, row-major with stride `d`.
    sums: Vec<A>,
    partial_sum: Vec<A>,
    partial_count: u64,
    n_seen: u64,
    next_double: u64,
}

impl<A: Accumulator> EbsTracker<A> {
    pub fn new(d: usize, rule: BatchRule) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let b_star = rule.batch_size(1)?;
        let mut t = Self {
            d,
            rule,
            b_star,
            sums: Vec::new(),
            partial_sum: vec![A::zero(); d],
            partial_count: 0,
            n_seen: 0,
            next_double: u64::MAX,
        };
        t.refresh_threshold();
        Ok(t)
    }

    pub fn doubling(d: usize, c: f64, beta: f64) -> Result<Self> {
        Self::new(d, BatchRule::doubling(c, beta)?)
    }

    pub fn fixed(d: usize, size: u64) -> Result<Self> {
        Self::new(d, BatchRule::fixed(size)?)
    }

    fn refresh_threshold(&mut self) {
        self.next_double = match self.rule {
            BatchRule::Doubling { c, beta } => first_n_exceeding(self.b_star, c, beta),
            BatchRule::Fixed { .. } => u64::MAX,
        };
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn rule(&self) -> BatchRule {
        self.rule
    }

    pub fn batch_size(&self) -> u64 {
        self.b_star
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn completed_batches(&self) -> usize {
        self.sums.len() / self.d
    }

    pub fn partial_count(&self) -> u64 {
        self.partial_count
    }

    pub fn partial_sum(&self) -> &[A] {
        &self.partial_sum
    }

    pub fn batch_sum(&self, k: usize) -> &[A] {
        &self.sums[k * self.d..(k + 1) * self.d]
    }

    pub fn push(&mut self, theta: &[A]) -> Result<()> {
        check_dim(self.d, theta.len())?;
        let n = self.n_seen + 1;
        while n >= self.next_double {
            self.double();
            self.refresh_threshold();
        }
        for (p, &t) in self.partial_sum.iter_mut().zip(theta) {
            *p += t;
        }
        self.partial_count += 1;
        self.n_seen = n;
        if self.partial_count == self.b_star {
            self.sums.extend_from_slice(&self.partial_sum);
            self.partial_sum.iter_mut().for_each(|p| *p = A::zero());
            self.partial_count = 0;
        }
        Ok(())
    }

    /// Doubles `b*`, merging adjacent completed sums.
    fn double(&mut self) {
        let d = self.d;
        let count = self.completed_batches();
        let pairs = count / 2;
        for j in 0..pairs {
            for i in 0..d {
                let v = self.sums[2 * j * d + i] + self.sums[(2 * j + 1) * d + i];
                self.sums[j * d + i] = v;
            }
        }
        if count % 2 == 1 {
            let last = (count - 1) * d;
            for i in 0..d {
                let mut v = self.sums[last + i];
                v += self.partial_sum[i];
                self.partial_sum[i] = v;
            }
            self.partial_count += self.b_star;
        }
        self.sums.truncate(pairs * d);
        self.b_star *= 2;
    }

    /// Sum of every pushed iterate (completed batches plus tail).
    pub fn total_sum(&self) -> Vec<A> {
        let mut total = self.partial_sum.clone();
        for k in 0..self.completed_batches() {
            for (t, &s) in total.iter_mut().zip(self.batch_sum(k)) {
                *t += s;
            }
        }
        total
    }

    pub fn snapshot(&self) -> TrackerSnapshot<A> {
        TrackerSnapshot {
            version: SNAPSHOT_VERSION,
            d: self.d,
            rule: self.rule,
            b_star: self.b_star,
            batch_sums: (0..self.completed_batches())
                .map(|k| self.batch_sum(k).to_vec())
                .collect(),
            partial_sum: self.partial_sum.clone(),
            partial_count: self.partial_count,
            n_seen: self.n_seen,
        }
    }

    pub fn from_snapshot(s: TrackerSnapshot<A>) -> Result<Self> {
        if s.version != SNAPSHOT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported tracker snapshot version {}",
                s.version
            )));
        }
        check_dim(s.d, s.partial_sum.len())?;
        for row in &s.batch_sums {
            check_dim(s.d, row.len())?;
        }
        let expected_b = s.rule.batch_size(s.n_seen.max(1))?;
        if expected_b != s.b_star
            || s.partial_count >= s.b_star
            || s.n_seen != s.b_star * s.batch_sums.len() as u64 + s.partial_count
        {
            return Err(Error::InvalidParameter("inconsistent tracker snapshot".into()));
        }
        let mut t = Self {
            d: s.d,
            rule: s.rule,
            b_star: s.b_star,
            sums: s.batch_sums.into_iter().flatten().collect(),
            partial_sum: s.partial_sum,
            partial_count: s.partial_count,
            n_seen: s.n_seen,
            next_double: u64::MAX,
        };
        t.refresh_threshold();
        Ok(t)
    }
}

impl<T: Scalar> EbsTracker<T> {
    /// Batch means of the completed batches; the partial tail is dropped.
    pub fn batch_means(&self) -> Result<BatchMeans<T>> {
        let a = self.completed_batches();
        if a < 2 {
            return Err(Error::InsufficientBatches { needed: 2, found: a });
        }
        let b = T::from_u64(self.b_star).expect("batch size representable");
        let means = (0..a)
            .map(|k| self.batch_sum(k).iter().map(|&s| s / b).collect())
            .collect();
        BatchMeans::new(means, self.b_star)
    }
}

impl<T: Scalar> IterateObserver<T> for EbsTracker<T> {
    fn observe(&mut self, state: &IterateState<T>) -> Result<()> {
        self.push(&state.theta)
    }
}

pub const SNAPSHOT_VERSION: u32 = 1;

/// Checkpoint form of an [`EbsTracker`]; JSON via serde.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerSnapshot<A> {
    pub version: u32,
    pub d: usize,
    pub rule: BatchRule,
    pub b_star: u64,
    pub batch_sums: Vec<Vec<A>>,
    pub partial_sum: Vec<A>,
    pub partial_count: u64,
    pub n_seen: u64,
}

/// Equal-size batch means with their average as centering vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMeans<T> {
    means: Vec<Vec<T>>,
    batch_size: u64,
    center: Vec<T>,
}

impl<T: Scalar> BatchMeans<T> {
    pub fn new(means: Vec<Vec<T>>, batch_size: u64) -> Result<Self> {
        let a = means.len();
        if a == 0 {
            return Err(Error::InsufficientBatches { needed: 1, found: 0 });
        }
        let d = means[0].len();
        let mut center = vec![T::zero(); d];
        for m in &means {
            check_dim(d, m.len())?;
            for (c, &v) in center.iter_mut().zip(m) {
                *c += v;
            }
        }
        let af = T::from_count(a);
        center.iter_mut().for_each(|c| *c /= af);
        Ok(Self {
            means,
            batch_size,
            center,
        })
    }

    /// Offline batching of a stored chain; the incomplete tail is dropped.
    pub fn from_chain(chain: &[Vec<T>], batch_size: u64) -> Result<Self> {
        let b = batch_size as usize;
        let a = chain.len() / b.max(1);
        if b == 0 || a == 0 {
            return Err(Error::InsufficientBatches { needed: 1, found: 0 });
        }
        let bf = T::from_count(b);
        let means = chain
            .chunks_exact(b)
            .take(a)
            .map(|batch| {
                let mut m = vec![T::zero(); batch[0].len()];
                for x in batch {
                    for (mi, &xi) in m.iter_mut().zip(x) {
                        *mi += xi;
                    }
                }
                m.iter_mut().for_each(|v| *v /= bf);
                m
            })
            .collect();
        Self::new(means, batch_size)
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn batch_size(&self) -> u64 {
        self.batch_size
    }

    pub fn count(&self) -> usize {
        self.means.len()
    }

    pub fn center(&self) -> &[T] {
        &self.center
    }

    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    /// Number of iterates covered by the batches.
    pub fn covered(&self) -> u64 {
        self.batch_size * self.count() as u64
    }
}

/// IBS boundaries `τ_k = ⌊scale · k^((1+α)/(1−α))⌋`, clipped to `n`.
///
/// The last batch may be a clipped tail shorter than its predecessor; all
/// earlier batch sizes are nondecreasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbsPartition {
    /// Ending indices `τ_1 < … < τ_K` (τ_0 = 0 implied).
    pub boundaries: Vec<u64>,
    pub exponent: f64,
    pub scale: f64,
    /// True when `scale` was shrunk to reach the requested batch count.
    pub adjusted: bool,
}

pub fn ibs_exponent(alpha: f64) -> Result<f64> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0.5, 1), got {alpha}")));
    }
    Ok((1.0 + alpha) / (1.0 - alpha))
}

fn raw_boundaries(n: u64, exponent: f64, scale: f64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut last = 0u64;
    let mut k = 1u64;
    while last < n {
        let v = (scale * (k as f64).powf(exponent)).floor();
        let tau = if v >= n as f64 { n } else { v as u64 };
        if tau > last {
            out.push(tau);
            last = tau;
        }
        k += 1;
    }
    out
}

/// IBS partition of `1..=n`; fails when fewer than two batches result.
pub fn ibs_boundaries(n: u64, alpha: f64, scale: f64) -> Result<IbsPartition> {
    let exponent = ibs_exponent(alpha)?;
    if !(scale > 0.0) || n == 0 {
        return Err(Error::InvalidParameter("IBS needs n >= 1 and scale > 0".into()));
    }
    let boundaries = raw_boundaries(n, exponent, scale);
    if boundaries.len() < 2 {
        return Err(Error::InsufficientBatches {
            needed: 2,
            found: boundaries.len(),
        });
    }
    Ok(IbsPartition {
        boundaries,
        exponent,
        scale,
        adjusted: false,
    })
}

/// Like [`ibs_boundaries`], halving `scale` until at least `min_batches`
/// batches exist (for a nonsingular estimate, `min_batches = d + 1`).
pub fn ibs_boundaries_with_min(
    n: u64,
    alpha: f64,
    scale: f64,
    min_batches: usize,
) -> Result<IbsPartition> {
    let exponent = ibs_exponent(alpha)?;
    let min_batches = min_batches.max(2);
    if (n as usize) < min_batches || !(scale > 0.0) {
        return Err(Error::InsufficientBatches {
            needed: min_batches,
            found: n as usize,
        });
    }
    let mut s = scale;
    let mut adjusted = false;
    loop {
        let boundaries = raw_boundaries(n, exponent, s);
        if boundaries.len() >= min_batches {
            return Ok(IbsPartition {
                boundaries,
                exponent,
                scale: s,
                adjusted,
            });
        }
        s *= 0.5;
        adjusted = true;
    }
}

impl IbsPartition {
    pub fn count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn batch_sizes(&self) -> Vec<u64> {
        let mut prev = 0;
        self.boundaries
            .iter()
            .map(|&t| {
                let b = t - prev;
                prev = t;
                b
            })
            .collect()
    }

    /// Batch means of a stored chain (`chain[i]` is iterate `i + 1`).
    pub fn batch_means<T: Scalar>(&self, chain: &[Vec<T>]) -> Result<IbsBatches<T>> {
        let end = *self.boundaries.last().unwrap_or(&0) as usize;
        if chain.len() < end {
            return Err(Error::InsufficientBatches {
                needed: end,
                found: chain.len(),
            });
        }
        let mut start = 0usize;
        let mut means = Vec::with_capacity(self.count());
        for &t in &self.boundaries {
            let t = t as usize;
            let mut m = vec![T::zero(); chain[0].len()];
            for x in &chain[start..t] {
                for (mi, &xi) in m.iter_mut().zip(x) {
                    *mi += xi;
                }
            }
            let bf = T::from_count(t - start);
            m.iter_mut().for_each(|v| *v /= bf);
            means.push(m);
            start = t;
        }
        Ok(IbsBatches {
            means,
            sizes: self.batch_sizes(),
        })
    }
}

/// Unequal batches: means and sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct IbsBatches<T> {
    pub means: Vec<Vec<T>>,
    pub sizes: Vec<u64>,
}

/// Online IBS accumulator with a fixed scale; memory is one sum per batch.
#[derive(Clone, Debug)]
pub struct IbsTracker<T> {
    d: usize,
    exponent: f64,
    scale: f64,
    sums: Vec<Vec<T>>,
    sizes: Vec<u64>,
    partial: Vec<T>,
    partial_count: u64,
    n_seen: u64,
    next_boundary: u64,
    k: u64,
}

impl<T: Scalar> IbsTracker<T> {
    pub fn new(d: usize, alpha: f64, scale: f64) -> Result<Self> {
        let exponent = ibs_exponent(alpha)?;
        if !(scale > 0.0) || d == 0 {
            return Err(Error::InvalidParameter("IBS needs d >= 1 and scale > 0".into()));
        }
        let mut t = Self {
            d,
            exponent,
            scale,
            sums: Vec::new(),
            sizes: Vec::new(),
            partial: vec![T::zero(); d],
            partial_count: 0,
            n_seen: 0,
            next_boundary: 0,
            k: 0,
        };
        t.advance_boundary();
        Ok(t)
    }

    fn advance_boundary(&mut self) {
        let last = self.next_boundary;
        loop {
            self.k += 1;
            let v = (self.scale * (self.k as f64).powf(self.exponent)).floor();
            let tau = if v >= u64::MAX as f64 { u64::MAX } else { v as u64 };
            if tau > last {
                self.next_boundary = tau;
                return;
            }
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn push(&mut self, theta: &[T]) -> Result<()> {
        check_dim(self.d, theta.len())?;
        for (p, &t) in self.partial.iter_mut().zip(theta) {
            *p += t;
        }
        self.partial_count += 1;
        self.n_seen += 1;
        if self.n_seen == self.next_boundary {
            self.sums.push(std::mem::replace(&mut self.partial, vec![T::zero(); self.d]));
            self.sizes.push(self.partial_count);
            self.partial_count = 0;
            self.advance_boundary();
        }
        Ok(())
    }

    /// Current partition, the unfinished batch included as a clipped tail.
    pub fn batches(&self) -> IbsBatches<T> {
        let mut means: Vec<Vec<T>> = self
            .sums
            .iter()
            .zip(&self.sizes)
            .map(|(s, &b)| {
                let bf = T::from_u64(b).expect("size representable");
                s.iter().map(|&v| v / bf).collect()
            })
            .collect();
        let mut sizes = self.sizes.clone();
        if self.partial_count > 0 {
            let bf = T::from_u64(self.partial_count).expect("size representable");
            means.push(self.partial.iter().map(|&v| v / bf).collect());
            sizes.push(self.partial_count);
        }
        IbsBatches { means, sizes }
    }
}

impl<T: Scalar> IterateObserver<T> for IbsTracker<T> {
    fn observe(&mut self, state: &IterateState<T>) -> Result<()> {
        self.push(&state.theta)
    }
}

/// Upper bound `exp(−λ_min Σ_{i=j}^{k−1} η_{i+1})` on the correlation strength
/// between iterates `j < k`. Returns 1 when `j >= k`.
pub fn decorrelation_bound<T: Scalar>(
    j: u64,
    k: u64,
    schedule: &LearningRateSchedule<T>,
    lambda_min: T,
) -> T {
    let mut s = T::zero();
    for i in j..k {
        s += schedule.rate(i + 1);
    }
    (-lambda_min * s).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn batch_size_examples() {
        assert_eq!(ebs_batch_size(8, 1.0, 0.999_999_999).unwrap(), 8);
        assert_eq!(ebs_batch_size(10_000, 0.1, 0.755).unwrap(), 128);
        assert_eq!(ebs_batch_size(1, 0.1, 0.755).unwrap(), 1);
        assert!(ebs_batch_size(0, 0.1, 0.7).is_err());
        assert!(ebs_batch_size(10, -1.0, 0.7).is_err());
        assert!(matches!(
            ebs_batch_size(u64::MAX, 1e10, 0.99),
            Err(Error::BatchSizeOverflow(_))
        ));
    }

    #[test]
    fn threshold_matches_direct_evaluation() {
        for &(c, beta) in &[(0.1, 0.755), (0.5, 0.6), (2.0, 0.9), (0.01, 0.3)] {
            let mut b = ebs_batch_size(1, c, beta).unwrap();
            for _ in 0..8 {
                let n = first_n_exceeding(b, c, beta);
                assert!(ebs_batch_size(n, c, beta).unwrap() > b);
                if n > 1 {
                    assert_eq!(ebs_batch_size(n - 1, c, beta).unwrap(), b);
                }
                b = ebs_batch_size(n, c, beta).unwrap();
            }
        }
    }

    #[test]
    fn fixed_grouping() {
        let mut t = EbsTracker::fixed(1, 2).unwrap();
        for x in [1.0, 3.0, 2.0, 4.0] {
            t.push(&[x]).unwrap();
        }
        assert_eq!(t.completed_batches(), 2);
        assert_eq!(t.batch_sum(0), &[4.0]);
        assert_eq!(t.batch_sum(1), &[6.0]);
        assert_eq!(t.partial_count(), 0);
        let bm = t.batch_means().unwrap();
        assert_eq!(bm.means(), &[vec![2.0], vec![3.0]]);
        assert_eq!(bm.center(), &[2.5]);
    }

    #[test]
    fn doubling_merges_pairs() {
        let mut t = EbsTracker::fixed(1, 2).unwrap();
        for x in [1.0, 3.0, 2.0, 4.0] {
            t.push(&[x]).unwrap();
        }
        t.double();
        assert_eq!(t.batch_size(), 4);
        assert_eq!(t.completed_batches(), 1);
        assert_eq!(t.batch_sum(0), &[10.0]);
    }

    #[test]
    fn odd_doubling_moves_last_sum_into_partial() {
        let mut t = EbsTracker::fixed(1, 2).unwrap();
        for x in [1.0, 3.0, 2.0, 4.0, 5.0, 6.0, 7.0] {
            t.push(&[x]).unwrap();
        }
        t.double();
        assert_eq!(t.completed_batches(), 1);
        assert_eq!(t.batch_sum(0), &[10.0]);
        assert_eq!(t.partial_sum(), &[18.0]);
        assert_eq!(t.partial_count(), 3);
        t.push(&[8.0]).unwrap();
        assert_eq!(t.completed_batches(), 2);
        assert_eq!(t.batch_sum(1), &[26.0]);
    }

    #[test]
    fn tail_is_dropped() {
        let mut t = EbsTracker::fixed(1, 2).unwrap();
        for x in [1.0, 3.0, 2.0, 4.0, 100.0] {
            t.push(&[x]).unwrap();
        }
        let bm = t.batch_means().unwrap();
        assert_eq!(bm.count(), 2);
        assert_eq!(bm.center(), &[2.5]);
    }

    #[test]
    fn insufficient_batches() {
        let mut t = EbsTracker::fixed(2, 4).unwrap();
        for _ in 0..7 {
            t.push(&[1.0, 2.0]).unwrap();
        }
        assert!(matches!(
            t.batch_means(),
            Err(Error::InsufficientBatches { needed: 2, found: 1 })
        ));
        assert!(t.push(&[1.0]).is_err());
    }

    #[test]
    fn batch_count_at_ten_thousand() {
        let mut t = EbsTracker::<f64>::doubling(1, 0.1, 0.755).unwrap();
        for i in 0..10_000 {
            t.push(&[i as f64]).unwrap();
        }
        assert_eq!(t.batch_size(), 128);
        assert_eq!(t.batch_means().unwrap().count(), 78);
    }

    #[test]
    fn snapshot_roundtrip_then_continue() {
        let mut a = EbsTracker::<f64>::doubling(2, 0.5, 0.6).unwrap();
        let mut b = a.clone();
        for i in 0..137 {
            a.push(&[i as f64, -(i as f64)]).unwrap();
        }
        let json = serde_json::to_string(&a.snapshot()).unwrap();
        let mut resumed = EbsTracker::from_snapshot(serde_json::from_str(&json).unwrap()).unwrap();
        for i in 137..300 {
            a.push(&[i as f64, -(i as f64)]).unwrap();
            resumed.push(&[i as f64, -(i as f64)]).unwrap();
        }
        for i in 0..300 {
            b.push(&[i as f64, -(i as f64)]).unwrap();
        }
        assert_eq!(resumed, a);
        assert_eq!(resumed, b);
    }

    #[test]
    fn snapshot_rejects_inconsistent_state() {
        let mut t = EbsTracker::<f64>::doubling(1, 0.5, 0.6).unwrap();
        for i in 0..50 {
            t.push(&[i as f64]).unwrap();
        }
        let mut s = t.snapshot();
        s.n_seen += 1;
        assert!(EbsTracker::from_snapshot(s).is_err());
        let mut s = t.snapshot();
        s.version = 99;
        assert!(EbsTracker::from_snapshot(s).is_err());
    }

    #[test]
    fn ibs_examples() {
        assert!((ibs_exponent(0.51).unwrap() - 3.081_632_653).abs() < 1e-8);
        let p = ibs_boundaries(100, 0.51, 1.0).unwrap();
        assert_eq!(p.boundaries, vec![1, 8, 29, 71, 100]);
        assert_eq!(p.batch_sizes(), vec![1, 7, 21, 42, 29]);
        assert!(!p.adjusted);
        assert!(matches!(
            ibs_boundaries(50, 0.51, 64.0),
            Err(Error::InsufficientBatches { found: 1, .. })
        ));
    }

    #[test]
    fn ibs_scale_shrinks_for_min_batches() {
        let p = ibs_boundaries_with_min(10_000, 0.51, 64.0, 10).unwrap();
        assert!(p.adjusted);
        assert!(p.count() >= 10);
        assert!(p.scale < 64.0);
        let q = ibs_boundaries_with_min(10_000, 0.51, 64.0, 2).unwrap();
        assert!(!q.adjusted);
        assert!(ibs_boundaries_with_min(3, 0.51, 1.0, 6).is_err());
    }

    #[test]
    fn ibs_tracker_matches_offline_partition() {
        let chain: Vec<Vec<f64>> = (0..777).map(|i| vec![(i as f64).sin(), i as f64]).collect();
        let mut t = IbsTracker::new(2, 0.6, 3.0).unwrap();
        for x in &chain {
            t.push(x).unwrap();
        }
        let online = t.batches();
        let offline = ibs_boundaries(777, 0.6, 3.0).unwrap().batch_means(&chain).unwrap();
        assert_eq!(online.sizes, offline.sizes);
        for (a, b) in online.means.iter().zip(&offline.means) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn decorrelation_examples() {
        let s = LearningRateSchedule::new(1.0, 0.51).unwrap();
        let v = decorrelation_bound(1, 3, &s, 1.0);
        let expect = (-(2f64.powf(-0.51) + 3f64.powf(-0.51))).exp();
        assert!((v - expect).abs() < 1e-15);
        // 2^{-0.51} + 3^{-0.51} = 1.27326
        assert!((v - 0.279_916).abs() < 1e-6);
        let tiny = LearningRateSchedule::<f64>::new(1e-12, 0.51).unwrap();
        assert!((decorrelation_bound(9, 10, &tiny, 1.0) - 1.0).abs() < 1e-11);
        let mut prev = 1.0;
        for k in 2..40 {
            let v = decorrelation_bound(1, k, &s, 0.3);
            assert!(v <= prev && v > 0.0);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn power_of_two_law(n in 1u64..5_000_000, c in 0.01f64..4.0, beta in 0.05f64..0.99) {
            let b = ebs_batch_size(n, c, beta).unwrap();
            let target = c * (n as f64).powf(beta);
            prop_assert!(b.is_power_of_two());
            prop_assert!(b as f64 >= target);
            prop_assert!((b as f64) < 2.0 * target.max(1.0));
        }

        #[test]
        fn integer_sums_conserved_and_offline_equal(
            xs in proptest::collection::vec(-1000i64..1000, 1..600),
            c in 0.05f64..2.0,
            beta in 0.2f64..0.95,
        ) {
            let mut t = EbsTracker::<i64>::doubling(1, c, beta).unwrap();
            let mut prev_b = t.batch_size();
            for x in &xs {
                t.push(&[*x]).unwrap();
                let b = t.batch_size();
                prop_assert!(b == prev_b || b == 2 * prev_b);
                prev_b = b;
            }
            prop_assert_eq!(t.total_sum()[0], xs.iter().sum::<i64>());
            let b = t.batch_size() as usize;
            prop_assert_eq!(b as u64, ebs_batch_size(xs.len() as u64, c, beta).unwrap());
            prop_assert_eq!(t.completed_batches(), xs.len() / b);
            for (k, chunk) in xs.chunks_exact(b).enumerate() {
                prop_assert_eq!(t.batch_sum(k)[0], chunk.iter().sum::<i64>());
            }
            let tail: i64 = xs[(xs.len() / b) * b..].iter().sum();
            prop_assert_eq!(t.partial_sum()[0], tail);
        }

        #[test]
        fn ibs_sizes_nondecreasing(n in 2u64..200_000, alpha in 0.51f64..0.9, scale in 0.5f64..100.0) {
            if let Ok(p) = ibs_boundaries(n, alpha, scale) {
                let sizes = p.batch_sizes();
                prop_assert_eq!(sizes.iter().sum::<u64>(), n);
                let full = &sizes[..sizes.len() - 1];
                prop_assert!(full.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
