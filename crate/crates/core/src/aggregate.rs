//! Server-side aggregation of private views, simplex projection and error
//! metrics.
//!
//! Views are first reduced to integer hit counts per event, which makes the
//! streaming and the bucketed paths agree exactly and lets partial
//! aggregates merge in any order. Debiasing is a final affine map.

use std::collections::HashMap;

use crate::coco::{mean_debias, nonmissing_debias};
use crate::collision::debias;
pub use crate::oracle::Mechanism;
use crate::vector::{EventHash, EventId, HashKind, PairedHash, PrivateView, Sign, TernaryVector, UserHash};
use crate::{Error, Result};

/// Number of views whose output collides with each event's bucket, indexed
/// by `code − 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HitCounts {
    pub hits: Vec<u64>,
    pub n: u64,
}

impl HitCounts {
    pub fn new(d: u32) -> HitCounts {
        HitCounts { hits: vec![0; 2 * d as usize], n: 0 }
    }

    pub fn d(&self) -> u32 {
        (self.hits.len() / 2) as u32
    }

    /// Adds one view by evaluating its hash on every event.
    pub fn add(&mut self, view: &PrivateView) {
        self.n += 1;
        self.add_weighted(&view.hash, view.z, 1);
    }

    fn add_weighted(&mut self, hash: &UserHash, z: u32, count: u64) {
        let d = self.d();
        match hash.kind {
            HashKind::Single { .. } => {
                for e in EventId::all(d) {
                    if hash.bucket(e) == z {
                        self.hits[e.code() as usize - 1] += count;
                    }
                }
            }
            HashKind::Paired { range } => {
                let half = range / 2;
                let group = (z - 1) % half + 1;
                let upper = z > half;
                for j in 1..=d {
                    if hash.primary(j) == group {
                        // j_+ sits in the upper half exactly when H2(j_+) = +1.
                        let plus_upper = hash.orientation(j) == Sign::Plus;
                        let sign = if plus_upper == upper { Sign::Plus } else { Sign::Minus };
                        self.hits[EventId::new(j, sign).code() as usize - 1] += count;
                    }
                }
            }
        }
    }

    pub fn merge(&mut self, other: &HitCounts) {
        self.n += other.n;
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
    }
}

/// Streaming path: one pass over the views.
pub fn hit_counts(views: &[PrivateView], d: u32) -> HitCounts {
    let mut counts = HitCounts::new(d);
    for v in views {
        counts.add(v);
    }
    counts
}

/// Bucketed path: views are grouped by hash, per-output counts are taken,
/// and each distinct hash is evaluated once.
pub fn hit_counts_bucketed(views: &[PrivateView], d: u32) -> HitCounts {
    let mut groups: HashMap<UserHash, HashMap<u32, u64>> = HashMap::new();
    for v in views {
        *groups.entry(v.hash).or_default().entry(v.z).or_default() += 1;
    }
    let mut counts = HitCounts::new(d);
    counts.n = views.len() as u64;
    for (hash, per_z) in &groups {
        for (&z, &c) in per_z {
            counts.add_weighted(hash, z, c);
        }
    }
    counts
}

/// Estimated event frequencies `f(j_b)`, indexed by `code − 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyEstimate {
    pub values: Vec<f64>,
    pub n: u64,
}

/// Per-dimension mean `x̄_j` and optionally the non-missing frequency `x̲_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanEstimate {
    pub mean: Vec<f64>,
    pub nonmissing: Option<Vec<f64>>,
}

impl FrequencyEstimate {
    pub fn d(&self) -> u32 {
        (self.values.len() / 2) as u32
    }

    pub fn get(&self, e: EventId) -> f64 {
        self.values[e.code() as usize - 1]
    }

    /// `x̄_j = f(j_+) − f(j_−)` and `x̲_j = f(j_+) + f(j_−)`.
    pub fn to_mean(&self) -> MeanEstimate {
        let (mut mean, mut nonmissing) = (Vec::new(), Vec::new());
        for pair in self.values.chunks_exact(2) {
            let (minus, plus) = (pair[0], pair[1]);
            mean.push(plus - minus);
            nonmissing.push(plus + minus);
        }
        MeanEstimate { mean, nonmissing: Some(nonmissing) }
    }

    /// Euclidean projection of `values / s` onto the probability simplex,
    /// scaled back by `s`.
    pub fn project(&self, s: u32) -> FrequencyEstimate {
        FrequencyEstimate { values: project_to_simplex(&self.values, s as f64), n: self.n }
    }
}

fn check_views(views: &[PrivateView], mech: &Mechanism) -> Result<()> {
    let want = match mech {
        Mechanism::Collision(p) => p.hash_kind(),
        Mechanism::Coco(p) => p.hash_kind(),
    };
    if let Some(bad) = views.iter().find(|v| v.hash.kind != want) {
        return Err(Error::HashMismatch(format!("view hash {:?} but mechanism expects {want:?}", bad.hash.kind)));
    }
    if let Some(bad) = views.iter().find(|v| v.z == 0 || v.z > mech.t()) {
        return Err(Error::HashMismatch(format!("output {} outside 1..={}", bad.z, mech.t())));
    }
    Ok(())
}

/// Debiases aggregated hit counts into event frequencies.
pub fn frequencies_from_counts(counts: &HitCounts, mech: &Mechanism) -> Result<FrequencyEstimate> {
    if counts.n == 0 {
        return Err(Error::Empty);
    }
    if counts.d() != mech.d() {
        return Err(Error::LengthMismatch { left: counts.d() as usize, right: mech.d() as usize });
    }
    let n = counts.n as f64;
    let values = match mech {
        Mechanism::Collision(p) => counts.hits.iter().map(|&h| debias(h as f64 / n, p)).collect::<Result<_>>()?,
        Mechanism::Coco(p) => {
            let rates = p.rates()?;
            let mut values = Vec::with_capacity(counts.hits.len());
            for pair in counts.hits.chunks_exact(2) {
                let (minus, plus) = (pair[0] as f64 / n, pair[1] as f64 / n);
                let mean = mean_debias(plus, minus, &rates)?;
                let nonmissing = nonmissing_debias(plus, minus, &rates)?;
                values.push(0.5 * (nonmissing - mean));
                values.push(0.5 * (nonmissing + mean));
            }
            values
        }
    };
    Ok(FrequencyEstimate { values, n: counts.n })
}

/// Average of per-user unbiased contributions for each of the `2d` events.
pub fn aggregate_frequencies(views: &[PrivateView], mech: &Mechanism) -> Result<FrequencyEstimate> {
    if views.is_empty() {
        return Err(Error::Empty);
    }
    check_views(views, mech)?;
    frequencies_from_counts(&hit_counts(views, mech.d()), mech)
}

/// CoCo mean and non-missing estimates straight from the hit counts.
pub fn coco_mean_estimate(counts: &HitCounts, mech: &Mechanism) -> Result<MeanEstimate> {
    let Mechanism::Coco(p) = mech else {
        return Err(Error::InvalidParams("mean estimation needs the CoCo mechanism".into()));
    };
    if counts.n == 0 {
        return Err(Error::Empty);
    }
    let rates = p.rates()?;
    let n = counts.n as f64;
    let (mut mean, mut nonmissing) = (Vec::new(), Vec::new());
    for pair in counts.hits.chunks_exact(2) {
        let (minus, plus) = (pair[0] as f64 / n, pair[1] as f64 / n);
        mean.push(mean_debias(plus, minus, &rates)?);
        nonmissing.push(nonmissing_debias(plus, minus, &rates)?);
    }
    Ok(MeanEstimate { mean, nonmissing: Some(nonmissing) })
}

/// Euclidean projection of `values / scale` onto the probability simplex,
/// multiplied back by `scale`.
pub fn project_to_simplex(values: &[f64], scale: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let y: Vec<f64> = values.iter().map(|v| v / scale).collect();
    let mut sorted = y.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0) * scale).collect()
}

/// `Σ |f̂ − f|`.
pub fn tve(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch { left: estimate.len(), right: truth.len() });
    }
    Ok(estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum())
}

/// `max |f̂ − f|`.
pub fn mae(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch { left: estimate.len(), right: truth.len() });
    }
    Ok(estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Empirical event frequencies of a dataset, indexed by `code − 1`.
pub fn true_frequencies(data: &[TernaryVector], d: u32) -> Vec<f64> {
    let mut counts = vec![0u64; 2 * d as usize];
    for x in data {
        for e in x.events() {
            counts[e.code() as usize - 1] += 1;
        }
    }
    let n = data.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Conditional means `x̄_j / x̲_j`, `None` where `x̲_j < 1/n`.
pub fn conditional_means(estimate: &MeanEstimate, n: u64) -> Option<Vec<Option<f64>>> {
    let nonmissing = estimate.nonmissing.as_ref()?;
    let floor = 1.0 / n.max(1) as f64;
    Some(
        estimate
            .mean
            .iter()
            .zip(nonmissing)
            .map(|(m, nm)| if *nm < floor { None } else { Some(m / nm) })
            .collect(),
    )
}
