//! The CoCo randomizer: Collision with correlated bucket pairs.
//!
//! Bucket `k` and bucket `k + t/2` form a pair. Each present entry `j_b`
//! puts weight `e^ε` on its own bucket and `1` on the paired bucket, which is
//! exactly where `j_{−b}` hashes, so the opposite sign is pushed below the
//! false-collision rate.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::vector::{paired_bucket, EventId, HashKind, MechanismParams, PairedHash, PrivateView, Sign, TernaryVector, UserHash};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CocoParams {
    pub base: MechanismParams,
    /// `(e^ε + 1)·s + t − 2s`.
    pub omega: f64,
}

impl CocoParams {
    pub fn new(base: MechanismParams) -> Result<CocoParams> {
        if !base.t.is_multiple_of(2) || base.t < 2 * base.s + 2 {
            return Err(Error::InvalidParams(format!(
                "CoCo needs even t >= 2s+2, got t={}, s={}",
                base.t, base.s
            )));
        }
        let s = base.s as f64;
        let omega = (base.epsilon.exp() + 1.0) * s + base.t as f64 - 2.0 * s;
        Ok(CocoParams { base, omega })
    }

    pub fn t(&self) -> u32 {
        self.base.t
    }

    /// Residual weight for unassigned buckets when `m` pairs are assigned.
    pub fn residual_weight(&self, m: u32) -> f64 {
        (self.omega - m as f64 * (self.base.epsilon.exp() + 1.0)) / (self.base.t - 2 * m) as f64
    }

    pub fn rates(&self) -> Result<CollisionRates> {
        collision_rates(self.base.s, self.base.epsilon, self.base.t)
    }

    pub fn hash_kind(&self) -> HashKind {
        HashKind::Paired { range: self.base.t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionRates {
    pub p_t: f64,
    pub p_f: f64,
    pub p_o: f64,
    pub p_ow: f64,
}

/// Probability that an entry's bucket pair is overwritten by a later entry:
/// `1 − t(1 − ((t−2)/t)^s)/(2s)`.
pub fn overwrite_probability(s: u32, t: u32) -> f64 {
    let t_f = t as f64;
    let keep = ((t_f - 2.0) / t_f).powi(s as i32);
    1.0 - t_f * (1.0 - keep) / (2.0 * s as f64)
}

pub fn collision_rates(s: u32, epsilon: f64, t: u32) -> Result<CollisionRates> {
    if s == 0 || !t.is_multiple_of(2) || t < 2 * s + 2 {
        return Err(Error::InvalidParams(format!("need s >= 1 and even t >= 2s+2, got s={s}, t={t}")));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::InvalidParams(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let e = epsilon.exp();
    let s_f = s as f64;
    let omega = (e + 1.0) * s_f + t as f64 - 2.0 * s_f;
    let p_ow = overwrite_probability(s, t);
    let shared = p_ow * (e + 1.0) / (2.0 * omega);
    Ok(CollisionRates {
        p_t: shared + (1.0 - p_ow) * e / omega,
        p_f: 1.0 / t as f64,
        p_o: shared + (1.0 - p_ow) / omega,
        p_ow,
    })
}

/// Relative weights `W_1..W_t` of one randomization trace.
#[derive(Clone, Debug, PartialEq)]
pub struct CocoWeights {
    pub w: Vec<f64>,
    pub omega: f64,
}

impl CocoWeights {
    pub fn validate(&self, epsilon: f64) -> Result<()> {
        let sum: f64 = self.w.iter().sum();
        if (sum - self.omega).abs() > 1e-9 * self.omega.max(1.0) {
            return Err(Error::InvalidParams(format!("weights sum to {sum}, expected {}", self.omega)));
        }
        let hi = epsilon.exp() * (1.0 + 1e-12);
        if let Some(w) = self.w.iter().find(|&&w| !(1.0 - 1e-12..=hi).contains(&w)) {
            return Err(Error::InvalidParams(format!("weight {w} outside [1, e^ε]")));
        }
        Ok(())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.w.iter().map(|w| w / self.omega).collect()
    }
}

fn check_hash<H: PairedHash>(params: &CocoParams, hash: &H) -> Result<()> {
    if hash.range() != params.base.t {
        return Err(Error::HashMismatch(format!(
            "hash range {} differs from t={}",
            hash.range(),
            params.base.t
        )));
    }
    Ok(())
}

/// Weights produced when the entries of `x` are processed in `order`, each
/// entry overwriting both buckets of its pair.
pub fn coco_weights<H: PairedHash>(
    x: &TernaryVector,
    hash: &H,
    params: &CocoParams,
    order: &[EventId],
) -> Result<CocoWeights> {
    params.base.check_input(x)?;
    check_hash(params, hash)?;
    if order.len() != x.s() as usize || !order.iter().all(|&e| x.contains(e)) {
        return Err(Error::InvalidParams("order must be a permutation of the entries".into()));
    }
    let t = params.base.t as usize;
    let half = params.base.t / 2;
    let e = params.base.epsilon.exp();
    let mut w = vec![f64::NAN; t];
    let mut m = 0u32;
    for &ev in order {
        let own = paired_bucket(hash, ev);
        let pair = 2 * hash.primary(ev.index()) + half - own;
        if w[own as usize - 1].is_nan() {
            m += 1;
        }
        w[own as usize - 1] = e;
        w[pair as usize - 1] = 1.0;
    }
    let residual = params.residual_weight(m);
    for v in &mut w {
        if v.is_nan() {
            *v = residual;
        }
    }
    Ok(CocoWeights { w, omega: params.omega })
}

/// Surviving writer of each assigned pair: `(pair index, own bucket)`, sorted
/// by pair index. `entries` is the permuted entry list.
fn surviving_writers<H: PairedHash>(hash: &H, entries: &[EventId]) -> Vec<(u32, u32)> {
    // Stable sort keeps permutation order inside a group, so the last
    // element of each run is the surviving writer.
    let mut tagged: Vec<(u32, u32)> =
        entries.iter().map(|&e| (hash.primary(e.index()), paired_bucket(hash, e))).collect();
    tagged.sort_by_key(|&(g, _)| g);
    let mut out: Vec<(u32, u32)> = Vec::with_capacity(tagged.len());
    for (g, b) in tagged {
        match out.last_mut() {
            Some(last) if last.0 == g => last.1 = b,
            _ => out.push((g, b)),
        }
    }
    out
}

/// Samples `z` in O(s log s) time without materializing the weight vector.
pub fn coco_sample<H: PairedHash, R: Rng + ?Sized>(
    x: &TernaryVector,
    hash: &H,
    params: &CocoParams,
    rng: &mut R,
) -> Result<u32> {
    params.base.check_input(x)?;
    check_hash(params, hash)?;
    let mut entries: Vec<EventId> = x.events().collect();
    entries.shuffle(rng);
    let writers = surviving_writers(hash, &entries);
    let m = writers.len() as u32;
    let half = params.base.t / 2;
    let e = params.base.epsilon.exp();

    let u = rng.gen::<f64>() * params.omega;
    let assigned = m as f64 * (e + 1.0);
    if u < assigned {
        let idx = ((u / (e + 1.0)) as usize).min(writers.len() - 1);
        let (g, own) = writers[idx];
        let within = u - idx as f64 * (e + 1.0);
        return Ok(if within < e { own } else { 2 * g + half - own });
    }
    // Residual: uniform over the 2(t/2 − m) buckets of unassigned pairs.
    let free_pairs = half - m;
    let slots = 2 * free_pairs;
    let frac = ((u - assigned) / (params.omega - assigned)).clamp(0.0, 1.0);
    let slot = ((frac * slots as f64) as u32).min(slots - 1);
    let mut g = slot / 2 + 1;
    for &(a, _) in &writers {
        if a <= g {
            g += 1;
        } else {
            break;
        }
    }
    Ok(if slot.is_multiple_of(2) { g } else { g + half })
}

/// Randomizes `x` under a seeded paired user hash.
pub fn coco_randomize<R: Rng + ?Sized>(
    x: &TernaryVector,
    hash: UserHash,
    params: &CocoParams,
    rng: &mut R,
) -> Result<PrivateView> {
    if !hash.is_paired() {
        return Err(Error::HashMismatch("CoCo needs a paired hash".into()));
    }
    if cfg!(debug_assertions) {
        let order: Vec<EventId> = x.events().collect();
        if let Ok(weights) = coco_weights(x, &hash, params, &order) {
            debug_assert!(weights.validate(params.base.epsilon).is_ok());
        }
    }
    let z = coco_sample(x, &hash, params, rng)?;
    Ok(PrivateView { hash, z })
}

/// Exact law `P[z | x, H]` averaged over the random permutation.
///
/// Only the last writer of each pair matters and it is uniform among the
/// entries sharing that pair, so no permutation enumeration is needed.
pub fn coco_output_law<H: PairedHash>(x: &TernaryVector, hash: &H, params: &CocoParams) -> Result<Vec<f64>> {
    params.base.check_input(x)?;
    check_hash(params, hash)?;
    let half = params.base.t / 2;
    let e = params.base.epsilon.exp();
    let mut groups: Vec<(u32, Vec<u32>)> = Vec::new();
    for ev in x.events() {
        let g = hash.primary(ev.index());
        let own = paired_bucket(hash, ev);
        match groups.iter_mut().find(|(a, _)| *a == g) {
            Some((_, v)) => v.push(own),
            None => groups.push((g, vec![own])),
        }
    }
    let m = groups.len() as u32;
    let mut w = vec![params.residual_weight(m); params.base.t as usize];
    for (g, owners) in groups {
        let lo = g as usize - 1;
        let hi = (g + half) as usize - 1;
        w[lo] = 0.0;
        w[hi] = 0.0;
        let share = 1.0 / owners.len() as f64;
        for own in owners {
            let (up, down) = if own == g { (lo, hi) } else { (hi, lo) };
            w[up] += share * e;
            w[down] += share;
        }
    }
    Ok(w.into_iter().map(|v| v / params.omega).collect())
}

/// `(⟦H(j_+)=z⟧ − ⟦H(j_−)=z⟧)/(P_t − P_o)`.
pub fn coco_mean_contribution<H: PairedHash>(view: &PrivateView<H>, j: u32, rates: &CollisionRates) -> Result<f64> {
    let (plus, minus) = pair_hits(view, j);
    mean_debias(plus, minus, rates)
}

/// `(⟦H(j_+)=z⟧ + ⟦H(j_−)=z⟧ − 2P_f)/(P_t + P_o − 2P_f)`.
pub fn coco_nonmissing_contribution<H: PairedHash>(
    view: &PrivateView<H>,
    j: u32,
    rates: &CollisionRates,
) -> Result<f64> {
    let (plus, minus) = pair_hits(view, j);
    nonmissing_debias(plus, minus, rates)
}

fn pair_hits<H: PairedHash>(view: &PrivateView<H>, j: u32) -> (f64, f64) {
    let hit = |b| if paired_bucket(&view.hash, EventId::new(j, b)) == view.z { 1.0 } else { 0.0 };
    (hit(Sign::Plus), hit(Sign::Minus))
}

/// Debiases hit rates (or indicators) for the two sign events into a mean.
pub fn mean_debias(plus: f64, minus: f64, rates: &CollisionRates) -> Result<f64> {
    let gap = rates.p_t - rates.p_o;
    if gap.abs() <= 1e-15 {
        return Err(Error::Degenerate("P_t equals P_o".into()));
    }
    Ok((plus - minus) / gap)
}

/// Debiases hit rates (or indicators) into a non-missing frequency.
pub fn nonmissing_debias(plus: f64, minus: f64, rates: &CollisionRates) -> Result<f64> {
    let gap = rates.p_t + rates.p_o - 2.0 * rates.p_f;
    if gap.abs() <= 1e-15 {
        return Err(Error::Degenerate("P_t + P_o equals 2 P_f".into()));
    }
    Ok((plus + minus - 2.0 * rates.p_f) / gap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CocoTarget {
    Mean,
    NonMissing,
}

/// Predicted single-user squared error summed over the `d` dimensions.
pub fn coco_predicted_mse(d: u32, s: u32, rates: &CollisionRates, which: CocoTarget) -> Result<f64> {
    if s == 0 || s > d {
        return Err(Error::InvalidParams(format!("need 1 <= s <= d, got s={s}, d={d}")));
    }
    let CollisionRates { p_t, p_f, p_o, .. } = *rates;
    let (s, missing) = (s as f64, (d - s) as f64);
    match which {
        CocoTarget::NonMissing => {
            let gap = p_t + p_o - 2.0 * p_f;
            if gap.abs() <= 1e-15 {
                return Err(Error::Degenerate("P_t + P_o equals 2 P_f".into()));
            }
            let num = s * (p_t + p_o) * (1.0 - p_t - p_o) + missing * 2.0 * p_f * (1.0 - 2.0 * p_f);
            Ok(num / (gap * gap))
        }
        CocoTarget::Mean => {
            let gap = p_t - p_o;
            if gap.abs() <= 1e-15 {
                return Err(Error::Degenerate("P_t equals P_o".into()));
            }
            let num = s * ((p_t + p_o) - gap * gap) + missing * 2.0 * p_f;
            Ok(num / (gap * gap))
        }
    }
}

/// `⌈e^ε s + s + 2⌉` (mean) or `⌈e^ε s + 5s⌉` (non-missing), rounded up to an
/// even number no smaller than `2s + 2`.
pub fn coco_choose_t(s: u32, epsilon: f64, which: CocoTarget) -> u32 {
    let s_f = s as f64;
    let raw = match which {
        CocoTarget::Mean => epsilon.exp() * s_f + s_f + 2.0,
        CocoTarget::NonMissing => epsilon.exp() * s_f + 5.0 * s_f,
    };
    let t = (raw.ceil() as u32).max(2 * s + 2);
    t + t % 2
}
