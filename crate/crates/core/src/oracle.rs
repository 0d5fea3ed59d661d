//! Exact small-instance computation over explicit hash families.
//!
//! Families are weighted lookup tables enumerated lazily. The fully uniform
//! family over all hash functions is only built when it has at most
//! [`UNIFORM_FAMILY_BITS`] bits of entropy; larger instances use either a
//! seeded sub-family (results are conditional on that family) or a
//! marginal family that is uniform on the coordinates that actually
//! influence the quantity being computed.

use std::collections::BTreeMap;

use crate::accountant::Neumaier;
use crate::coco::{coco_output_law, mean_debias, nonmissing_debias, CocoParams};
use crate::collision::{debias, output_probabilities, CollisionParams};
use crate::vector::{paired_bucket, EventHash, EventId, PairedHash, Sign, TernaryVector, UserHash};
use crate::{Error, Result};

/// Largest `log2 |ℋ|` for which the uniform family is enumerated.
pub const UNIFORM_FAMILY_BITS: f64 = 20.0;
/// Size guard for [`enumerate_distribution`]: `|ℋ|·t`.
pub const DISTRIBUTION_LIMIT: u128 = 1_000_000;
/// Size guard for streaming checks: `|ℋ|·|𝒳^s|·t`.
pub const STREAM_LIMIT: u128 = 200_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SingleTable {
    pub t: u32,
    /// Bucket per event, indexed by `code − 1`.
    pub buckets: Vec<u32>,
}

impl EventHash for SingleTable {
    fn range(&self) -> u32 {
        self.t
    }
    fn bucket(&self, e: EventId) -> u32 {
        self.buckets[e.code() as usize - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedTable {
    pub t: u32,
    /// `H1(j)` indexed by `j − 1`.
    pub h1: Vec<u32>,
    /// `H2(j_+)` indexed by `j − 1`.
    pub h2: Vec<Sign>,
}

impl PairedHash for PairedTable {
    fn range(&self) -> u32 {
        self.t
    }
    fn primary(&self, j: u32) -> u32 {
        self.h1[j as usize - 1]
    }
    fn orientation(&self, j: u32) -> Sign {
        self.h2[j as usize - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HashTable {
    Single(SingleTable),
    Paired(PairedTable),
}

impl HashTable {
    /// Bucket of `e` under this table.
    pub fn bucket(&self, e: EventId) -> u32 {
        match self {
            HashTable::Single(h) => h.bucket(e),
            HashTable::Paired(h) => paired_bucket(h, e),
        }
    }

    /// Materializes a seeded user hash on the first `d` dimensions.
    pub fn from_user_hash(hash: &UserHash, d: u32) -> HashTable {
        if hash.is_paired() {
            HashTable::Paired(PairedTable {
                t: PairedHash::range(hash),
                h1: (1..=d).map(|j| hash.primary(j)).collect(),
                h2: (1..=d).map(|j| hash.orientation(j)).collect(),
            })
        } else {
            HashTable::Single(SingleTable {
                t: EventHash::range(hash),
                buckets: EventId::all(d).map(|e| hash.bucket(e)).collect(),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FamilyLabel {
    /// Uniform over every hash function of the given shape.
    Uniform,
    /// Uniform on the listed event codes (single) or dimensions (paired);
    /// exact for quantities that depend only on those coordinates.
    UniformMarginal(Vec<u32>),
    /// Results are conditional on this family.
    Conditional(String),
}

#[derive(Clone, Debug)]
enum Members {
    UniformSingle,
    UniformPaired,
    MarginalSingle(Vec<u32>),
    PartitionPaired(Vec<u32>),
    Explicit(Vec<(f64, HashTable)>),
}

/// A weighted, enumerable hash family on `d` dimensions with range `t`.
#[derive(Clone, Debug)]
pub struct HashFamily {
    d: u32,
    t: u32,
    paired: bool,
    label: FamilyLabel,
    members: Members,
}

impl HashFamily {
    /// All maps `𝒴 → [t]`.
    pub fn uniform_single(d: u32, t: u32) -> Result<HashFamily> {
        let bits = 2.0 * d as f64 * (t as f64).log2();
        if bits > UNIFORM_FAMILY_BITS {
            return Err(Error::TooLarge { size: (t as u128).pow(2 * d), limit: 1 << 20 });
        }
        Ok(HashFamily { d, t, paired: false, label: FamilyLabel::Uniform, members: Members::UniformSingle })
    }

    /// All pairs `(H1: [d] → [t/2], H2(j_+) ∈ {±1})`.
    pub fn uniform_paired(d: u32, t: u32) -> Result<HashFamily> {
        check_even(t)?;
        let bits = d as f64 * (t as f64).log2();
        if bits > UNIFORM_FAMILY_BITS {
            return Err(Error::TooLarge { size: (t as u128).pow(d), limit: 1 << 20 });
        }
        Ok(HashFamily { d, t, paired: true, label: FamilyLabel::Uniform, members: Members::UniformPaired })
    }

    /// Uniform on the given event codes; all other events share bucket 1.
    pub fn marginal_single(d: u32, t: u32, codes: &[u32]) -> Result<HashFamily> {
        let mut codes = codes.to_vec();
        codes.sort_unstable();
        codes.dedup();
        if codes.iter().any(|&c| c == 0 || c > 2 * d) {
            return Err(Error::InvalidParams("event code out of range".into()));
        }
        let bits = codes.len() as f64 * (t as f64).log2();
        if bits > 40.0 {
            return Err(Error::TooLarge { size: (t as u128).pow(codes.len() as u32), limit: 1 << 40 });
        }
        Ok(HashFamily {
            d,
            t,
            paired: false,
            label: FamilyLabel::UniformMarginal(codes.clone()),
            members: Members::MarginalSingle(codes),
        })
    }

    /// Uniform on the listed dimensions, collapsed by symmetry: one member
    /// per set partition of the dimensions into `H1` groups and per
    /// orientation pattern with the first dimension of each group fixed.
    pub fn marginal_paired(d: u32, t: u32, dims: &[u32]) -> Result<HashFamily> {
        check_even(t)?;
        let mut dims = dims.to_vec();
        dims.sort_unstable();
        dims.dedup();
        if dims.iter().any(|&j| j == 0 || j > d) {
            return Err(Error::InvalidParams("dimension out of range".into()));
        }
        if dims.len() > 12 {
            return Err(Error::TooLarge { size: dims.len() as u128, limit: 12 });
        }
        Ok(HashFamily {
            d,
            t,
            paired: true,
            label: FamilyLabel::UniformMarginal(dims.clone()),
            members: Members::PartitionPaired(dims),
        })
    }

    /// `count` tables materialized from seeded user hashes.
    pub fn seeded(d: u32, t: u32, paired: bool, count: usize, master_seed: u64) -> Result<HashFamily> {
        if paired {
            check_even(t)?;
        }
        let kind = if paired { crate::HashKind::Paired { range: t } } else { crate::HashKind::Single { range: t } };
        let w = 1.0 / count as f64;
        let members = (0..count as u64)
            .map(|i| (w, HashTable::from_user_hash(&crate::draw_user_hash(master_seed, i, kind), d)))
            .collect();
        let label = FamilyLabel::Conditional(format!("{count} seeded tables (master seed {master_seed})"));
        HashFamily::explicit(label, d, t, members)
    }

    /// Caller-supplied tables; weights are normalized to sum to one.
    pub fn explicit(label: FamilyLabel, d: u32, t: u32, members: Vec<(f64, HashTable)>) -> Result<HashFamily> {
        if members.is_empty() {
            return Err(Error::Empty);
        }
        let paired = matches!(members[0].1, HashTable::Paired(_));
        for (w, h) in &members {
            let ok = match h {
                HashTable::Single(s) => !paired && s.t == t && s.buckets.len() == 2 * d as usize,
                HashTable::Paired(p) => paired && p.t == t && p.h1.len() == d as usize && p.h2.len() == d as usize,
            };
            if !ok || !(*w >= 0.0) {
                return Err(Error::InvalidParams("family members must share shape (d, t, kind)".into()));
            }
        }
        let total: f64 = members.iter().map(|(w, _)| w).sum();
        let members = members.into_iter().map(|(w, h)| (w / total, h)).collect();
        Ok(HashFamily { d, t, paired, label, members: Members::Explicit(members) })
    }

    pub fn label(&self) -> &FamilyLabel {
        &self.label
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn is_paired(&self) -> bool {
        self.paired
    }

    /// Number of members.
    pub fn len(&self) -> u128 {
        let t = self.t as u128;
        match &self.members {
            Members::UniformSingle => t.pow(2 * self.d),
            Members::UniformPaired => (t / 2).pow(self.d) << self.d,
            Members::MarginalSingle(codes) => t.pow(codes.len() as u32),
            Members::PartitionPaired(dims) => partitions(dims.len(), self.t as usize / 2)
                .iter()
                .map(|rgs| 1u128 << (dims.len() - block_count(rgs)))
                .sum(),
            Members::Explicit(m) => m.len() as u128,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Calls `f(id, weight, table)` for every member in a fixed order.
    pub fn try_for_each<F: FnMut(u64, f64, &HashTable) -> Result<()>>(&self, mut f: F) -> Result<()> {
        let (d, t) = (self.d as usize, self.t);
        match &self.members {
            Members::UniformSingle => {
                let count = self.len() as u64;
                let w = 1.0 / count as f64;
                let mut h = HashTable::Single(SingleTable { t, buckets: vec![1; 2 * d] });
                for id in 0..count {
                    if let HashTable::Single(s) = &mut h {
                        decode(id, t as u64, &mut s.buckets);
                    }
                    f(id, w, &h)?;
                }
            }
            Members::UniformPaired => {
                let count = self.len() as u64;
                let w = 1.0 / count as f64;
                let mut h = HashTable::Paired(PairedTable { t, h1: vec![1; d], h2: vec![Sign::Plus; d] });
                for id in 0..count {
                    if let HashTable::Paired(p) = &mut h {
                        decode(id >> d, (t / 2) as u64, &mut p.h1);
                        for (j, s) in p.h2.iter_mut().enumerate() {
                            *s = if id >> j & 1 == 1 { Sign::Minus } else { Sign::Plus };
                        }
                    }
                    f(id, w, &h)?;
                }
            }
            Members::MarginalSingle(codes) => {
                let count = self.len() as u64;
                let w = 1.0 / count as f64;
                let mut digits = vec![1u32; codes.len()];
                let mut table = SingleTable { t, buckets: vec![1; 2 * d] };
                for id in 0..count {
                    decode(id, t as u64, &mut digits);
                    for (&c, &b) in codes.iter().zip(&digits) {
                        table.buckets[c as usize - 1] = b;
                    }
                    f(id, w, &HashTable::Single(table.clone()))?;
                }
            }
            Members::PartitionPaired(dims) => {
                let half = t as u64 / 2;
                let r = dims.len();
                let mut id = 0u64;
                for rgs in partitions(r, half as usize) {
                    let blocks = block_count(&rgs);
                    // Labelings of the blocks over t/2 groups and orientation
                    // flips of whole blocks, both symmetries of the law.
                    let labelings: f64 = (0..blocks).map(|i| (half - i as u64) as f64).product();
                    let weight = labelings / (half as f64).powi(r as i32) * 2f64.powi(blocks as i32) / 2f64.powi(r as i32);
                    let free: Vec<usize> = (0..r).filter(|&i| rgs[..i].iter().all(|&b| b != rgs[i])).collect();
                    let free_count = r - free.len();
                    for signs in 0..(1u64 << free_count) {
                        let mut h = PairedTable { t, h1: vec![1; d], h2: vec![Sign::Plus; d] };
                        let mut bit = 0;
                        for (i, &j) in dims.iter().enumerate() {
                            h.h1[j as usize - 1] = rgs[i] as u32 + 1;
                            if !free.contains(&i) {
                                if signs >> bit & 1 == 1 {
                                    h.h2[j as usize - 1] = Sign::Minus;
                                }
                                bit += 1;
                            }
                        }
                        f(id, weight, &HashTable::Paired(h))?;
                        id += 1;
                    }
                }
            }
            Members::Explicit(members) => {
                for (id, (w, h)) in members.iter().enumerate() {
                    f(id as u64, *w, h)?;
                }
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &TernaryVector) -> Result<()> {
        if x.events().all(|e| self.covers_event(e)) {
            Ok(())
        } else {
            Err(Error::InvalidParams("input uses coordinates outside the family's marginal".into()))
        }
    }

    fn covers_event(&self, e: EventId) -> bool {
        match &self.label {
            FamilyLabel::UniformMarginal(coords) if self.paired => coords.contains(&e.index()),
            FamilyLabel::UniformMarginal(coords) => coords.contains(&e.code()),
            _ => true,
        }
    }
}

fn check_even(t: u32) -> Result<()> {
    if !t.is_multiple_of(2) || t < 2 {
        return Err(Error::InvalidParams(format!("paired hash needs even t >= 2, got {t}")));
    }
    Ok(())
}

/// Little-endian base-`radix` digits of `id`, shifted to `1..=radix`.
fn decode(mut id: u64, radix: u64, out: &mut [u32]) {
    for slot in out.iter_mut() {
        *slot = (id % radix) as u32 + 1;
        id /= radix;
    }
}

/// Restricted growth strings of length `r` with at most `max_blocks` blocks.
fn partitions(r: usize, max_blocks: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, r: usize, max_blocks: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == r {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for b in 0..=next.min(max_blocks.saturating_sub(1)) {
            prefix.push(b);
            go(prefix, r, max_blocks, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(r), r, max_blocks, &mut out);
    out
}

fn block_count(rgs: &[usize]) -> usize {
    rgs.iter().max().map_or(0, |m| m + 1)
}

/// Every vector of `𝒳^s` on `d` dimensions, in lexicographic support order.
pub fn all_inputs(d: u32, s: u32) -> Vec<TernaryVector> {
    fn go(d: u32, s: u32, start: u32, cur: &mut Vec<(u32, Sign)>, out: &mut Vec<TernaryVector>) {
        if cur.len() == s as usize {
            out.push(TernaryVector::new(d, cur.clone()).expect("valid by construction"));
            return;
        }
        for j in start..=d {
            for b in [Sign::Minus, Sign::Plus] {
                cur.push((j, b));
                go(d, s, j + 1, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(d, s, 1, &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mechanism {
    Collision(CollisionParams),
    Coco(CocoParams),
}

impl Mechanism {
    pub fn t(&self) -> u32 {
        match self {
            Mechanism::Collision(p) => p.t(),
            Mechanism::Coco(p) => p.t(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Mechanism::Collision(p) => p.base.epsilon,
            Mechanism::Coco(p) => p.base.epsilon,
        }
    }

    pub fn d(&self) -> u32 {
        match self {
            Mechanism::Collision(p) => p.base.d,
            Mechanism::Coco(p) => p.base.d,
        }
    }

    pub fn s(&self) -> u32 {
        match self {
            Mechanism::Collision(p) => p.base.s,
            Mechanism::Coco(p) => p.base.s,
        }
    }

    /// `P[z | x, H]` for `z = 1..=t`.
    pub fn conditional_law(&self, x: &TernaryVector, hash: &HashTable) -> Result<Vec<f64>> {
        match (self, hash) {
            (Mechanism::Collision(p), HashTable::Single(h)) => output_probabilities(x, h, p),
            (Mechanism::Coco(p), HashTable::Paired(h)) => coco_output_law(x, h, p),
            _ => Err(Error::HashMismatch("family kind does not match the mechanism".into())),
        }
    }

    fn check_family(&self, family: &HashFamily) -> Result<()> {
        let paired = matches!(self, Mechanism::Coco(_));
        if family.paired != paired || family.t != self.t() || family.d != self.d() {
            return Err(Error::HashMismatch(format!(
                "family (d={}, t={}, paired={}) does not match mechanism (d={}, t={}, paired={paired})",
                family.d,
                family.t,
                family.paired,
                self.d(),
                self.t()
            )));
        }
        Ok(())
    }
}

/// Joint law over `(hash id, z)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub support: Vec<(u64, u32)>,
    pub probs: Vec<f64>,
    pub label: FamilyLabel,
}

impl ExactDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().copied().sum::<Neumaier>().value()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.probs.iter().all(|&p| p >= 0.0) && (self.total() - 1.0).abs() <= tol
    }

    /// Marginal law of `z` (index `z − 1`).
    pub fn output_marginal(&self, t: u32) -> Vec<f64> {
        let mut acc = vec![Neumaier::default(); t as usize];
        for (&(_, z), &p) in self.support.iter().zip(&self.probs) {
            acc[z as usize - 1].add(p);
        }
        acc.iter().map(Neumaier::value).collect()
    }
}

/// Exact joint law of `(H, z)` for input `x`.
pub fn enumerate_distribution(mech: &Mechanism, x: &TernaryVector, family: &HashFamily) -> Result<ExactDistribution> {
    mech.check_family(family)?;
    family.check_input(x)?;
    let size = family.len() * mech.t() as u128;
    if size > DISTRIBUTION_LIMIT {
        return Err(Error::TooLarge { size, limit: DISTRIBUTION_LIMIT });
    }
    let mut support = Vec::with_capacity(size as usize);
    let mut probs = Vec::with_capacity(size as usize);
    family.try_for_each(|id, w, h| {
        for (z, p) in mech.conditional_law(x, h)?.into_iter().enumerate() {
            support.push((id, z as u32 + 1));
            probs.push(w * p);
        }
        Ok(())
    })?;
    Ok(ExactDistribution { support, probs, label: family.label.clone() })
}

/// `max log(P[z|x,H]/P[z|x′,H])` over all inputs in `𝒳^s`, members and outputs.
pub fn verify_ldp(mech: &Mechanism, family: &HashFamily) -> Result<f64> {
    mech.check_family(family)?;
    let inputs = all_inputs(mech.d(), mech.s());
    let size = family.len() * inputs.len() as u128 * mech.t() as u128;
    if size > STREAM_LIMIT {
        return Err(Error::TooLarge { size, limit: STREAM_LIMIT });
    }
    let t = mech.t() as usize;
    let mut worst = f64::NEG_INFINITY;
    let (mut hi, mut lo) = (vec![0.0f64; t], vec![0.0f64; t]);
    family.try_for_each(|_, _, h| {
        hi.fill(f64::NEG_INFINITY);
        lo.fill(f64::INFINITY);
        for x in &inputs {
            for (z, p) in mech.conditional_law(x, h)?.into_iter().enumerate() {
                hi[z] = hi[z].max(p);
                lo[z] = lo[z].min(p);
            }
        }
        for z in 0..t {
            worst = worst.max((hi[z] / lo[z]).ln());
        }
        Ok(())
    })?;
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Collision estimator of `⟦e ∈ Y_x⟧`.
    CollisionIndicator(EventId),
    /// CoCo estimator of `x_j`.
    CocoMean(u32),
    /// CoCo estimator of `⟦x_j ≠ 0⟧`.
    CocoNonMissing(u32),
}

impl Estimator {
    fn events(&self) -> [EventId; 2] {
        match *self {
            Estimator::CollisionIndicator(e) => [e, e],
            Estimator::CocoMean(j) | Estimator::CocoNonMissing(j) => {
                [EventId::new(j, Sign::Plus), EventId::new(j, Sign::Minus)]
            }
        }
    }

    /// Target value for input `x`.
    pub fn target(&self, x: &TernaryVector) -> f64 {
        match *self {
            Estimator::CollisionIndicator(e) => f64::from(u8::from(x.contains(e))),
            Estimator::CocoMean(j) => x.value(j) as f64,
            Estimator::CocoNonMissing(j) => f64::from(u8::from(x.value(j) != 0)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Exact first two moments of several per-user estimators from one pass.
pub fn exact_moments(
    mech: &Mechanism,
    x: &TernaryVector,
    estimators: &[Estimator],
    family: &HashFamily,
) -> Result<Vec<Moments>> {
    mech.check_family(family)?;
    family.check_input(x)?;
    let size = family.len() * mech.t() as u128;
    if size > STREAM_LIMIT {
        return Err(Error::TooLarge { size, limit: STREAM_LIMIT });
    }
    for est in estimators {
        let ok = matches!(
            (mech, est),
            (Mechanism::Collision(_), Estimator::CollisionIndicator(_))
                | (Mechanism::Coco(_), Estimator::CocoMean(_) | Estimator::CocoNonMissing(_))
        );
        if !ok {
            return Err(Error::InvalidParams(format!("{est:?} does not belong to this mechanism")));
        }
        if !est.events().iter().all(|&e| family.covers_event(e)) {
            return Err(Error::InvalidParams(format!("{est:?} is outside the family's marginal coordinates")));
        }
    }
    let rates = match mech {
        Mechanism::Coco(p) => Some(p.rates()?),
        Mechanism::Collision(_) => None,
    };
    // Value of an estimator as a function of its two hit indicators.
    let value = |est: &Estimator, a: f64, b: f64| -> Result<f64> {
        match (est, mech) {
            (Estimator::CollisionIndicator(_), Mechanism::Collision(p)) => debias(a, p),
            (Estimator::CocoMean(_), _) => mean_debias(a, b, rates.as_ref().unwrap()),
            (Estimator::CocoNonMissing(_), _) => nonmissing_debias(a, b, rates.as_ref().unwrap()),
            _ => unreachable!(),
        }
    };
    let mut table = Vec::with_capacity(estimators.len());
    for est in estimators {
        table.push([value(est, 0.0, 0.0)?, value(est, 1.0, 0.0)?, value(est, 0.0, 1.0)?]);
    }

    let mut first = vec![Neumaier::default(); estimators.len()];
    let mut second = vec![Neumaier::default(); estimators.len()];
    family.try_for_each(|_, w, h| {
        let law = mech.conditional_law(x, h)?;
        for (k, est) in estimators.iter().enumerate() {
            let [e0, e1] = est.events();
            let (b0, b1) = (h.bucket(e0), h.bucket(e1));
            // Buckets of the two events never coincide for CoCo, and the
            // Collision estimator only reads the first.
            let p0 = law[b0 as usize - 1];
            let p1 = if b1 == b0 { 0.0 } else { law[b1 as usize - 1] };
            let [v_none, v0, v1] = table[k];
            let p_none = 1.0 - p0 - p1;
            first[k].add(w * (p_none * v_none + p0 * v0 + p1 * v1));
            second[k].add(w * (p_none * v_none * v_none + p0 * v0 * v0 + p1 * v1 * v1));
        }
        Ok(())
    })?;
    Ok(first
        .iter()
        .zip(&second)
        .map(|(m1, m2)| {
            let mean = m1.value();
            Moments { mean, variance: m2.value() - mean * mean }
        })
        .collect())
}

/// Exact `(mean, variance)` of one per-user estimator.
pub fn exact_estimator_moments(
    mech: &Mechanism,
    x: &TernaryVector,
    estimator: Estimator,
    family: &HashFamily,
) -> Result<Moments> {
    Ok(exact_moments(mech, x, &[estimator], family)?[0])
}

/// Decomposition `R_1 = e^ε β Q_1 + β Q_1′ + (1 − β − e^ε β) Q_1*`, with
/// `R_1′` obtained by swapping the roles of `Q_1` and `Q_1′`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureDecomposition {
    pub q1: ExactDistribution,
    pub q1_prime: ExactDistribution,
    pub q1_star: ExactDistribution,
    /// Clone weight `Σ max(0, R_1 − R_1′)/(e^ε − 1)`.
    pub beta: f64,
    pub epsilon: f64,
}

impl MixtureDecomposition {
    /// `β` on the total-variation scale, `(e^ε − 1)·β`.
    pub fn alpha(&self) -> f64 {
        self.epsilon.exp_m1() * self.beta
    }

    /// Largest pointwise deviation of the two reconstructions from `r1`, `r1′`.
    pub fn reconstruction_error(&self, r1: &ExactDistribution, r1_prime: &ExactDistribution) -> f64 {
        let e = self.epsilon.exp();
        let b = self.beta;
        let rest = 1.0 - b - e * b;
        let mut worst = 0f64;
        for i in 0..r1.probs.len() {
            let (q, qp, qs) = (self.q1.probs[i], self.q1_prime.probs[i], self.q1_star.probs[i]);
            worst = worst.max((e * b * q + b * qp + rest * qs - r1.probs[i]).abs());
            worst = worst.max((b * q + e * b * qp + rest * qs - r1_prime.probs[i]).abs());
        }
        worst
    }
}

pub fn mixture_decompose(
    r1: &ExactDistribution,
    r1_prime: &ExactDistribution,
    epsilon: f64,
) -> Result<MixtureDecomposition> {
    if r1.support != r1_prime.support {
        return Err(Error::LengthMismatch { left: r1.support.len(), right: r1_prime.support.len() });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParams("mixture decomposition needs epsilon > 0".into()));
    }
    let e = epsilon.exp();
    for (&a, &b) in r1.probs.iter().zip(&r1_prime.probs) {
        if a > e * b * (1.0 + 1e-12) + 1e-300 || b > e * a * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::RatioBound(format!("{a} vs {b} exceeds e^ε = {e}")));
        }
    }
    let up: Vec<f64> = r1.probs.iter().zip(&r1_prime.probs).map(|(a, b)| (a - b).max(0.0)).collect();
    let down: Vec<f64> = r1.probs.iter().zip(&r1_prime.probs).map(|(a, b)| (b - a).max(0.0)).collect();
    let mass = up.iter().copied().sum::<Neumaier>().value();
    let beta = mass / epsilon.exp_m1();
    let make = |probs: Vec<f64>| ExactDistribution { support: r1.support.clone(), probs, label: r1.label.clone() };
    if mass <= 0.0 {
        return Ok(MixtureDecomposition { q1: r1.clone(), q1_prime: r1.clone(), q1_star: r1.clone(), beta: 0.0, epsilon });
    }
    let down_mass = down.iter().copied().sum::<Neumaier>().value();
    let q1: Vec<f64> = up.iter().map(|v| v / mass).collect();
    let q1_prime: Vec<f64> = down.iter().map(|v| v / down_mass).collect();
    let rest = 1.0 - beta - e * beta;
    let q1_star = r1
        .probs
        .iter()
        .zip(up.iter().zip(&down))
        .map(|(r, (u, dn))| {
            let v = (r - e * u / epsilon.exp_m1() - dn / epsilon.exp_m1()) / rest;
            // Clamp rounding noise around exact zeros.
            if v < 0.0 && v > -1e-13 {
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(MixtureDecomposition { q1: make(q1), q1_prime: make(q1_prime), q1_star: make(q1_star), beta, epsilon })
}

/// Family average of `(e^ε − 1)(s − |H(Y_x) ∩ H(Y_x′)|)/(s e^ε + t − s)` for
/// Collision; matches `alpha()` of the decomposition when no member hashes
/// two events of the same input together.
pub fn collision_overlap_alpha(
    params: &CollisionParams,
    x: &TernaryVector,
    x_prime: &TernaryVector,
    family: &HashFamily,
) -> Result<f64> {
    Mechanism::Collision(*params).check_family(family)?;
    let s = params.base.s as f64;
    let scale = params.base.epsilon.exp_m1() / params.omega;
    let mut acc = Neumaier::default();
    family.try_for_each(|_, w, h| {
        let a: Vec<u32> = x.events().map(|e| h.bucket(e)).collect();
        let b: Vec<u32> = x_prime.events().map(|e| h.bucket(e)).collect();
        let mut shared: Vec<u32> = a.iter().copied().filter(|z| b.contains(z)).collect();
        shared.sort_unstable();
        shared.dedup();
        acc.add(w * scale * (s - shared.len() as f64));
        Ok(())
    })?;
    Ok(acc.value())
}

/// Exact law of the two-count statistic over a batch of `n` Collision views
/// on the worst-case construction: inputs on disjoint dimension blocks and
/// `H(j_+) = j`. User 1 holds `x_1` (or `x_1′` when `swapped`); the rest hold
/// a third input. Each view maps to `(⟦z ∈ H(Y_{x_1})⟧, ⟦z ∈ H(Y_{x_1′})⟧)`.
pub fn lower_bound_statistic_distribution(
    n: u32,
    params: &CollisionParams,
    swapped: bool,
) -> Result<BTreeMap<(u64, u64), f64>> {
    let (d, s, t) = (params.base.d, params.base.s, params.base.t);
    if t < 3 * s || d < 3 * s {
        return Err(Error::InvalidParams(format!("construction needs t >= 3s and d >= 3s, got t={t}, d={d}, s={s}")));
    }
    if n == 0 {
        return Err(Error::InvalidParams("batch size must be positive".into()));
    }
    let size = (t as u128).pow(n);
    if size > DISTRIBUTION_LIMIT {
        return Err(Error::TooLarge { size, limit: DISTRIBUTION_LIMIT });
    }
    let block = |k: u32| TernaryVector::new(d, (k * s + 1..=(k + 1) * s).map(|j| (j, Sign::Plus)).collect());
    let (x1, x1p, xs) = (block(0)?, block(1)?, block(2)?);
    let mut buckets = vec![t; 2 * d as usize];
    for j in 1..=3 * s {
        buckets[EventId::new(j, Sign::Plus).code() as usize - 1] = j;
    }
    let hash = SingleTable { t, buckets };
    let first = output_probabilities(if swapped { &x1p } else { &x1 }, &hash, params)?;
    let others = output_probabilities(&xs, &hash, params)?;
    let g = |z: u32| (u64::from(z <= s), u64::from(z > s && z <= 2 * s));

    let mut law: BTreeMap<(u64, u64), Neumaier> = BTreeMap::new();
    for idx in 0..size as u64 {
        let (mut rest, mut prob, mut acc) = (idx, 1.0, (0u64, 0u64));
        for user in 0..n {
            let z = (rest % t as u64) as u32 + 1;
            rest /= t as u64;
            prob *= if user == 0 { first[z as usize - 1] } else { others[z as usize - 1] };
            let (a, b) = g(z);
            acc = (acc.0 + a, acc.1 + b);
        }
        law.entry(acc).or_default().add(prob);
    }
    Ok(law.into_iter().map(|(k, v)| (k, v.value())).collect())
}
