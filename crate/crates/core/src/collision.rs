//! The Collision randomizer over the `2d` event domain.
//!
//! Every distinct bucket hit by one of the user's events carries relative
//! weight `e^ε`; the remaining buckets share what is left of
//! `Ω = s·e^ε + t − s` evenly.

use rand::Rng;

use crate::vector::{EventHash, EventId, HashKind, MechanismParams, PrivateView, TernaryVector, UserHash};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionParams {
    pub base: MechanismParams,
    pub omega: f64,
}

impl CollisionParams {
    pub fn new(base: MechanismParams) -> Result<CollisionParams> {
        if base.t <= base.s {
            return Err(Error::InvalidParams(format!(
                "Collision needs t > s, got t={}, s={}",
                base.t, base.s
            )));
        }
        let s = base.s as f64;
        let omega = s * base.epsilon.exp() + base.t as f64 - s;
        Ok(CollisionParams { base, omega })
    }

    /// Parameters with `t` chosen by [`collision_optimal_t`].
    pub fn with_optimal_t(d: u32, s: u32, epsilon: f64) -> Result<CollisionParams> {
        let base = MechanismParams::new(d, s, epsilon, 1)?;
        CollisionParams::new(MechanismParams { t: collision_optimal_t(s, epsilon), ..base })
    }

    pub fn t(&self) -> u32 {
        self.base.t
    }

    /// Probability of each hit bucket, `e^ε/Ω`.
    pub fn hit_probability(&self) -> f64 {
        self.base.epsilon.exp() / self.omega
    }

    /// Probability of each non-hit bucket when `k` distinct buckets are hit.
    pub fn residual_probability(&self, k: u32) -> f64 {
        (self.omega - k as f64 * self.base.epsilon.exp()) / ((self.base.t - k) as f64 * self.omega)
    }

    /// Denominator `e^ε/Ω − 1/t` of the indicator estimator.
    pub fn estimator_gap(&self) -> f64 {
        self.hit_probability() - 1.0 / self.base.t as f64
    }

    pub fn hash_kind(&self) -> HashKind {
        HashKind::Single { range: self.base.t }
    }
}

/// `max(s + 1, ⌊s·e^ε + 2s − 1⌋)`.
pub fn collision_optimal_t(s: u32, epsilon: f64) -> u32 {
    let s_f = s as f64;
    let raw = (s_f * epsilon.exp() + 2.0 * s_f - 1.0).floor();
    (raw as u32).max(s + 1)
}

/// Sorted distinct buckets `H(Y_x)`.
pub fn hashed_image<H: EventHash>(x: &TernaryVector, hash: &H) -> Vec<u32> {
    let mut hits: Vec<u32> = x.events().map(|e| hash.bucket(e)).collect();
    hits.sort_unstable();
    hits.dedup();
    hits
}

fn check_hash<H: EventHash>(params: &CollisionParams, hash: &H) -> Result<()> {
    if hash.range() != params.base.t {
        return Err(Error::HashMismatch(format!(
            "hash range {} differs from t={}",
            hash.range(),
            params.base.t
        )));
    }
    Ok(())
}

/// Full conditional output law `P[z | x, H]` for `z = 1..=t` (index `z − 1`).
pub fn output_probabilities<H: EventHash>(
    x: &TernaryVector,
    hash: &H,
    params: &CollisionParams,
) -> Result<Vec<f64>> {
    params.base.check_input(x)?;
    check_hash(params, hash)?;
    let hits = hashed_image(x, hash);
    let residual = params.residual_probability(hits.len() as u32);
    let mut probs = vec![residual; params.base.t as usize];
    let p_hit = params.hit_probability();
    for z in hits {
        probs[z as usize - 1] = p_hit;
    }
    Ok(probs)
}

/// Samples `z` for an arbitrary hash in O(s) time and memory.
pub fn collision_sample<H: EventHash, R: Rng + ?Sized>(
    x: &TernaryVector,
    hash: &H,
    params: &CollisionParams,
    rng: &mut R,
) -> Result<u32> {
    params.base.check_input(x)?;
    check_hash(params, hash)?;
    let hits = hashed_image(x, hash);
    let k = hits.len();
    let t = params.base.t;
    let p_hit = params.hit_probability();
    let hit_mass = k as f64 * p_hit;

    let u: f64 = rng.gen();
    if u < hit_mass {
        let idx = ((u / p_hit) as usize).min(k - 1);
        return Ok(hits[idx]);
    }
    // Rescale the leftover part of the same draw onto the t − k residual
    // buckets, then walk past the hit buckets to find the rank.
    let free = (t as usize - k) as f64;
    let frac = ((u - hit_mass) / (1.0 - hit_mass)).clamp(0.0, 1.0);
    let mut z = ((frac * free) as u32).min(t - k as u32 - 1) + 1;
    for &h in &hits {
        if h <= z {
            z += 1;
        } else {
            break;
        }
    }
    Ok(z)
}

/// Randomizes `x` under a seeded single-kind user hash.
pub fn collision_randomize<R: Rng + ?Sized>(
    x: &TernaryVector,
    hash: UserHash,
    params: &CollisionParams,
    rng: &mut R,
) -> Result<PrivateView> {
    if hash.is_paired() {
        return Err(Error::HashMismatch("Collision needs a single-kind hash".into()));
    }
    let z = collision_sample(x, &hash, params, rng)?;
    Ok(PrivateView { hash, z })
}

/// Affine debiasing `(hit − 1/t)/(e^ε/Ω − 1/t)` of a hit indicator (or of a
/// hit frequency).
pub fn debias(hit: f64, params: &CollisionParams) -> Result<f64> {
    let gap = params.estimator_gap();
    if gap.abs() <= 1e-15 {
        return Err(Error::Degenerate("e^ε/Ω equals 1/t".into()));
    }
    Ok((hit - 1.0 / params.base.t as f64) / gap)
}

/// Unbiased estimate of `⟦event ∈ Y_x⟧` from one view.
pub fn collision_indicator_estimate<H: EventHash>(
    view: &PrivateView<H>,
    event: EventId,
    params: &CollisionParams,
) -> Result<f64> {
    check_hash(params, &view.hash)?;
    let hit = if view.hash.bucket(event) == view.z { 1.0 } else { 0.0 };
    debias(hit, params)
}

/// Predicted summed variance of the `2d` indicator estimators for real `t`,
/// under ideal hashing and ignoring hash conflicts among the user's events.
pub fn collision_predicted_variance(d: u32, s: u32, epsilon: f64, t: f64) -> f64 {
    let s_f = s as f64;
    let omega = s_f * epsilon.exp() + t - s_f;
    let p = epsilon.exp() / omega;
    let q = 1.0 / t;
    (s_f * p * (1.0 - p) + (2.0 * d as f64 - s_f) * q * (1.0 - q)) / (p - q).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::Sign;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Fixed lookup-table hash for tests.
    struct Table(Vec<u32>, u32);

    impl EventHash for Table {
        fn range(&self) -> u32 {
            self.1
        }
        fn bucket(&self, e: EventId) -> u32 {
            self.0[e.code() as usize - 1]
        }
    }

    fn params(d: u32, s: u32, eps: f64, t: u32) -> CollisionParams {
        CollisionParams::new(MechanismParams::new(d, s, eps, t).unwrap()).unwrap()
    }

    fn x_fig() -> TernaryVector {
        TernaryVector::from_dense(&[0, 0, 1, 0, -1, 0]).unwrap()
    }

    #[test]
    fn output_law_without_conflict() {
        let p = params(6, 2, 2f64.ln(), 4);
        // 3+ -> 1, 5- -> 2, everything else -> 3.
        let mut table = vec![3u32; 12];
        table[5] = 1;
        table[8] = 2;
        let probs = output_probabilities(&x_fig(), &Table(table, 4), &p).unwrap();
        let want = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in probs.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn output_law_with_conflict() {
        let p = params(6, 2, 2f64.ln(), 4);
        let mut table = vec![3u32; 12];
        table[5] = 2;
        table[8] = 2;
        let probs = output_probabilities(&x_fig(), &Table(table, 4), &p).unwrap();
        let want = [2.0 / 9.0, 1.0 / 3.0, 2.0 / 9.0, 2.0 / 9.0];
        for (a, b) in probs.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_is_uniform() {
        let p = params(6, 2, 1e-12, 4);
        let probs = output_probabilities(&x_fig(), &UserHash::single(3, 4), &p).unwrap();
        for q in probs {
            assert!((q - 0.25).abs() < 1e-11);
        }
    }

    #[test]
    fn optimal_t_examples() {
        assert_eq!(collision_optimal_t(4, 1.0), 17);
        assert_eq!(collision_optimal_t(1, 2f64.ln()), 3);
        assert_eq!(collision_optimal_t(8, 0.5), 28);
        assert_eq!(collision_optimal_t(1, 0.01), 2);
    }

    #[test]
    fn indicator_estimates() {
        let p = params(6, 2, 2f64.ln(), 4);
        let hash = UserHash::single(11, 4);
        let e = EventId::new(3, Sign::Plus);
        let hit = PrivateView { hash, z: hash.bucket(e) };
        let miss = PrivateView { hash, z: hash.bucket(e) % 4 + 1 };
        assert!((collision_indicator_estimate(&hit, e, &p).unwrap() - 9.0).abs() < 1e-12);
        assert!((collision_indicator_estimate(&miss, e, &p).unwrap() + 3.0).abs() < 1e-12);
        assert!(((1.0 / 3.0) * 9.0 + (2.0 / 3.0) * -3.0 - 1.0f64).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominator_rejected() {
        let p = params(6, 2, 0.0, 4);
        assert!(matches!(debias(1.0, &p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let base = MechanismParams::new(6, 2, 1.0, 2).unwrap();
        assert!(CollisionParams::new(base).is_err());
        let p = params(6, 2, 1.0, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(collision_randomize(&x_fig(), UserHash::single(0, 6), &p, &mut rng).is_err());
        assert!(collision_randomize(&x_fig(), UserHash::paired(0, 5), &p, &mut rng).is_err());
    }

    #[test]
    fn sampler_matches_output_law() {
        let p = params(6, 2, 1.0, 5);
        let mut table = vec![4u32; 12];
        table[5] = 2;
        table[8] = 5;
        let table = Table(table, 5);
        let law = output_probabilities(&x_fig(), &table, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut counts = [0u32; 5];
        for _ in 0..n {
            counts[collision_sample(&x_fig(), &table, &p, &mut rng).unwrap() as usize - 1] += 1;
        }
        for (c, q) in counts.iter().zip(law) {
            let sd = (n as f64 * q * (1.0 - q)).sqrt();
            assert!((*c as f64 - n as f64 * q).abs() < 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn predicted_variance_is_convex_in_t() {
        for &(d, s, eps) in &[(64u32, 8u32, 0.5f64), (256, 4, 1.0), (128, 16, 2.0)] {
            let grid: Vec<f64> = (0..=200).map(|i| s as f64 + 0.5 + i as f64 * (d - s) as f64 / 200.0).collect();
            let v: Vec<f64> = grid.iter().map(|&t| collision_predicted_variance(d, s, eps, t)).collect();
            for w in v.windows(3) {
                assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9 * w[1], "d={d} s={s} eps={eps}");
            }
        }
    }
}
