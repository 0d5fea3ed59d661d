//! Sparse ternary vectors, the `2d` event domain, mechanism parameters and
//! per-user seeded hash functions.

use std::collections::BTreeSet;
use std::fmt;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(self) -> i8 {
        match self {
            Sign::Minus => -1,
            Sign::Plus => 1,
        }
    }

    pub fn from_value(v: i8) -> Option<Sign> {
        match v {
            -1 => Some(Sign::Minus),
            1 => Some(Sign::Plus),
            _ => None,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Minus => Sign::Plus,
            Sign::Plus => Sign::Minus,
        }
    }
}

/// One of the `2d` events `j_-` / `j_+`. Dimension indices are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId {
    index: u32,
    sign: Sign,
}

impl EventId {
    pub fn new(index: u32, sign: Sign) -> EventId {
        assert!(index >= 1, "dimension indices are 1-based");
        EventId { index, sign }
    }

    pub fn index(self) -> u32 {
        self.index
    }

    pub fn sign(self) -> Sign {
        self.sign
    }

    pub fn opposite(self) -> EventId {
        EventId { index: self.index, sign: self.sign.flip() }
    }

    /// `2j - 1` for `j_-`, `2j` for `j_+`.
    pub fn code(self) -> u32 {
        match self.sign {
            Sign::Minus => 2 * self.index - 1,
            Sign::Plus => 2 * self.index,
        }
    }

    pub fn from_code(code: u32) -> Option<EventId> {
        if code == 0 {
            return None;
        }
        let index = code.div_ceil(2);
        let sign = if code.is_multiple_of(2) { Sign::Plus } else { Sign::Minus };
        Some(EventId { index, sign })
    }

    /// All `2d` events in code order.
    pub fn all(d: u32) -> impl Iterator<Item = EventId> {
        (1..=2 * d).map(|c| EventId::from_code(c).unwrap())
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.sign {
            Sign::Minus => '-',
            Sign::Plus => '+',
        };
        write!(f, "{}{}", self.index, s)
    }
}

/// A `d`-dimensional vector with exactly `s >= 1` non-zero entries, all `±1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TernaryVector {
    d: u32,
    support: Vec<(u32, Sign)>,
}

impl TernaryVector {
    /// `support` must hold distinct 1-based indices; it is sorted here.
    pub fn new(d: u32, mut support: Vec<(u32, Sign)>) -> Result<TernaryVector> {
        if d == 0 {
            return Err(Error::InvalidVector("dimension must be positive".into()));
        }
        if support.is_empty() {
            return Err(Error::InvalidVector("at least one non-zero entry required".into()));
        }
        support.sort_unstable_by_key(|&(j, _)| j);
        for w in support.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidVector(format!("duplicate index {}", w[0].0)));
            }
        }
        if support[0].0 == 0 || support[support.len() - 1].0 > d {
            return Err(Error::InvalidVector(format!("indices must lie in 1..={d}")));
        }
        Ok(TernaryVector { d, support })
    }

    pub fn from_dense(values: &[i8]) -> Result<TernaryVector> {
        let mut support = Vec::new();
        for (i, &v) in values.iter().enumerate() {
            match v {
                0 => {}
                -1 | 1 => support.push((i as u32 + 1, Sign::from_value(v).unwrap())),
                other => {
                    return Err(Error::InvalidVector(format!("entry {other} is not ternary")))
                }
            }
        }
        TernaryVector::new(values.len() as u32, support)
    }

    /// Rebuilds a vector from its event set. Fails if both signs of a
    /// dimension are present.
    pub fn from_events(d: u32, events: &BTreeSet<EventId>) -> Result<TernaryVector> {
        TernaryVector::new(d, events.iter().map(|e| (e.index(), e.sign())).collect())
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn s(&self) -> u32 {
        self.support.len() as u32
    }

    pub fn support(&self) -> &[(u32, Sign)] {
        &self.support
    }

    pub fn value(&self, j: u32) -> i8 {
        match self.support.binary_search_by_key(&j, |&(i, _)| i) {
            Ok(pos) => self.support[pos].1.value(),
            Err(_) => 0,
        }
    }

    pub fn to_dense(&self) -> Vec<i8> {
        let mut out = vec![0i8; self.d as usize];
        for &(j, b) in &self.support {
            out[j as usize - 1] = b.value();
        }
        out
    }

    pub fn events(&self) -> impl Iterator<Item = EventId> + '_ {
        self.support.iter().map(|&(j, b)| EventId::new(j, b))
    }

    pub fn contains(&self, e: EventId) -> bool {
        self.value(e.index()) == e.sign().value()
    }
}

/// Set form `Y_x` of a vector.
pub fn event_set(x: &TernaryVector) -> BTreeSet<EventId> {
    x.events().collect()
}

/// `(d, s, epsilon, t)` shared by the hash-based mechanisms. Mechanism
/// specific constraints on `t` are checked by each mechanism.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MechanismParams {
    pub d: u32,
    pub s: u32,
    pub epsilon: f64,
    pub t: u32,
}

impl MechanismParams {
    pub fn new(d: u32, s: u32, epsilon: f64, t: u32) -> Result<MechanismParams> {
        if d == 0 || s == 0 || s > d {
            return Err(Error::InvalidParams(format!("need 1 <= s <= d, got s={s}, d={d}")));
        }
        // epsilon = 0 is admitted so the zero-budget limits can be evaluated;
        // estimators reject it through their degenerate denominators.
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidParams(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if t == 0 {
            return Err(Error::InvalidParams("t must be positive".into()));
        }
        Ok(MechanismParams { d, s, epsilon, t })
    }

    pub(crate) fn check_input(&self, x: &TernaryVector) -> Result<()> {
        if x.d() != self.d || x.s() != self.s {
            return Err(Error::InvalidVector(format!(
                "vector has (d={}, s={}), mechanism expects (d={}, s={})",
                x.d(),
                x.s(),
                self.d,
                self.s
            )));
        }
        Ok(())
    }
}

/// A hash `H: Y -> [range]` over the event domain.
pub trait EventHash {
    fn range(&self) -> u32;
    /// Bucket in `1..=range`.
    fn bucket(&self, e: EventId) -> u32;
}

/// The two-part hash `(H1: [d] -> [t/2], H2: Y -> {-1,+1})` used by CoCo.
/// Only `H2(j_+)` is ever consulted, so it is exposed per dimension.
pub trait PairedHash {
    fn range(&self) -> u32;
    /// `H1(j)` in `1..=range/2`.
    fn primary(&self, j: u32) -> u32;
    /// `H2(j_+)`.
    fn orientation(&self, j: u32) -> Sign;
}

/// `H(j_b) = H1(j) + ((b * H2(j_+) + 1) / 2) * t/2`.
pub fn paired_bucket<H: PairedHash + ?Sized>(h: &H, e: EventId) -> u32 {
    let half = h.range() / 2;
    let j = e.index();
    let upper = e.sign().value() * h.orientation(j).value() == 1;
    h.primary(j) + if upper { half } else { 0 }
}

impl<T: EventHash + ?Sized> EventHash for &T {
    fn range(&self) -> u32 {
        (**self).range()
    }
    fn bucket(&self, e: EventId) -> u32 {
        (**self).bucket(e)
    }
}

impl<T: PairedHash + ?Sized> PairedHash for &T {
    fn range(&self) -> u32 {
        (**self).range()
    }
    fn primary(&self, j: u32) -> u32 {
        (**self).primary(j)
    }
    fn orientation(&self, j: u32) -> Sign {
        (**self).orientation(j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HashKind {
    /// `H: Y -> [range]` for Collision.
    Single { range: u32 },
    /// `(H1, H2)` with even `range = t` for CoCo.
    Paired { range: u32 },
}

impl HashKind {
    pub fn range(self) -> u32 {
        match self {
            HashKind::Single { range } | HashKind::Paired { range } => range,
        }
    }
}

/// A user's hash function: a keyed 64-bit PRF evaluated on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UserHash {
    pub seed: u64,
    pub kind: HashKind,
}

const DOMAIN_USER: u64 = 0x7573_6572_5f73_6565;
const DOMAIN_SINGLE: u64 = 0x6861_7368_5f73_6e67;
const DOMAIN_PRIMARY: u64 = 0x6861_7368_5f68_3131;
const DOMAIN_ORIENT: u64 = 0x6861_7368_5f68_3232;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed pseudorandom function on `(key, domain, x)`.
#[inline]
pub fn prf(key: u64, domain: u64, x: u64) -> u64 {
    let k = mix64(key ^ mix64(domain));
    mix64(k.wrapping_add(x.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ k.rotate_left(29))
}

#[inline]
fn to_range(h: u64, range: u32) -> u32 {
    (((h as u128) * (range as u128)) >> 64) as u32 + 1
}

impl UserHash {
    pub fn single(seed: u64, t: u32) -> UserHash {
        UserHash { seed, kind: HashKind::Single { range: t } }
    }

    pub fn paired(seed: u64, t: u32) -> UserHash {
        UserHash { seed, kind: HashKind::Paired { range: t } }
    }

    pub fn is_paired(&self) -> bool {
        matches!(self.kind, HashKind::Paired { .. })
    }
}

impl EventHash for UserHash {
    fn range(&self) -> u32 {
        self.kind.range()
    }

    fn bucket(&self, e: EventId) -> u32 {
        match self.kind {
            HashKind::Single { range } => to_range(prf(self.seed, DOMAIN_SINGLE, e.code() as u64), range),
            HashKind::Paired { .. } => paired_bucket(self, e),
        }
    }
}

impl PairedHash for UserHash {
    fn range(&self) -> u32 {
        self.kind.range()
    }

    fn primary(&self, j: u32) -> u32 {
        to_range(prf(self.seed, DOMAIN_PRIMARY, j as u64), self.kind.range() / 2)
    }

    fn orientation(&self, j: u32) -> Sign {
        let code = EventId::new(j, Sign::Plus).code() as u64;
        if prf(self.seed, DOMAIN_ORIENT, code) >> 63 == 1 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

/// Derives user `user_index`'s hash from a master seed.
pub fn draw_user_hash(master_seed: u64, user_index: u64, kind: HashKind) -> UserHash {
    UserHash { seed: prf(master_seed, DOMAIN_USER, user_index), kind }
}

/// One user's sanitized message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrivateView<H = UserHash> {
    pub hash: H,
    pub z: u32,
}
