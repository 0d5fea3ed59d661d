//! Shuffle-model amplification accountant.
//!
//! A batch of `n` messages is reduced to the pair of two-dimensional laws
//!
//! ```text
//! P = (A + Δ1, C − A + Δ2),   Q = (A + Δ2, C − A + Δ1)
//! C ~ Bin(n − 1, 2p),  A ~ Bin(C, 1/2),
//! (Δ1, Δ2) = (1, 0) w.p. e^ε p,  (0, 1) w.p. p,  (0, 0) otherwise,
//! ```
//!
//! and the amplified budget is the smallest `ε_c` whose hockey-stick
//! divergence between `P` and `Q` (either direction) stays below `δ`.
//!
//! Mixture parameters `α` are quoted on the total-variation scale, so the
//! generic stronger clone has `α = (e^ε − 1)/(e^ε + 1)`. The per-message
//! clone weight entering the laws above is `p = α/(e^ε − 1)`; at `ε = ln 2`
//! the two coincide.

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// `s(e^ε − 1)/(s e^ε + t − s)`.
pub fn collision_alpha(s: u32, epsilon: f64, t: u32) -> Result<f64> {
    if t <= s {
        return Err(Error::InvalidParams(format!("need t > s, got t={t}, s={s}")));
    }
    let s_f = s as f64;
    Ok(s_f * epsilon.exp_m1() / (s_f * epsilon.exp() + t as f64 - s_f))
}

/// `(e^ε − 1)/(e^ε + 1)`.
pub fn generic_clone_alpha(epsilon: f64) -> f64 {
    (epsilon / 2.0).tanh()
}

/// `ε·sqrt(144 ln(1/δ)/n)`.
pub fn efmrtt_closed_form(epsilon: f64, delta: f64, n: u64) -> f64 {
    epsilon * (144.0 * (1.0 / delta).ln() / n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplificationQuery {
    pub n: u64,
    pub epsilon: f64,
    pub alpha: f64,
    pub delta: f64,
}

impl AmplificationQuery {
    pub fn new(n: u64, epsilon: f64, alpha: f64, delta: f64) -> Result<AmplificationQuery> {
        if n == 0 {
            return Err(Error::InvalidParams("batch size must be positive".into()));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParams(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParams(format!("delta must lie in (0, 1), got {delta}")));
        }
        let max = generic_clone_alpha(epsilon);
        if !(alpha > 0.0 && alpha <= max * (1.0 + 1e-12)) {
            return Err(Error::InvalidParams(format!("alpha must lie in (0, {max}], got {alpha}")));
        }
        let q = AmplificationQuery { n, epsilon, alpha: alpha.min(max), delta };
        let p = q.clone_weight();
        if p * epsilon.exp() + p > 1.0 + 1e-12 {
            return Err(Error::InvalidParams("Δ law is not a distribution".into()));
        }
        Ok(q)
    }

    /// Per-message clone weight `p = α/(e^ε − 1)`.
    pub fn clone_weight(&self) -> f64 {
        self.alpha / self.epsilon.exp_m1()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceResult {
    pub delta_forward: f64,
    pub delta_backward: f64,
    pub truncation_mass: f64,
}

impl DivergenceResult {
    /// `max(forward, backward) + truncation_mass`.
    pub fn delta(&self) -> f64 {
        self.delta_forward.max(self.delta_backward) + self.truncation_mass
    }
}

/// Contiguous block of a binomial pmf plus an upper bound on the mass
/// outside it.
#[derive(Clone, Debug)]
struct Window {
    start: u64,
    pmf: Vec<f64>,
    tail: f64,
}

impl Window {
    fn get(&self, k: i64) -> f64 {
        if k < self.start as i64 {
            return 0.0;
        }
        self.pmf.get((k - self.start as i64) as usize).copied().unwrap_or(0.0)
    }

    fn end(&self) -> u64 {
        self.start + self.pmf.len() as u64
    }
}

fn ln_binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    let (n_f, k_f) = (n as f64, k as f64);
    ln_gamma(n_f + 1.0) - ln_gamma(k_f + 1.0) - ln_gamma(n_f - k_f + 1.0) + k_f * p.ln() + (n_f - k_f) * (-p).ln_1p()
}

/// Walks outward from the mode of `Bin(n, p)` until the geometric bound on
/// each remaining tail drops to `budget / 2`.
fn binomial_window(n: u64, p: f64, budget: f64) -> Window {
    if p <= 0.0 || n == 0 {
        return Window { start: 0, pmf: vec![1.0], tail: 0.0 };
    }
    if p >= 1.0 {
        return Window { start: n, pmf: vec![1.0], tail: 0.0 };
    }
    let half = budget / 2.0;
    let odds = p / (1.0 - p);
    let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
    let at_mode = ln_binomial_pmf(n, mode, p).exp();

    let mut upper = Vec::new();
    let mut upper_tail = 0.0;
    let (mut k, mut v) = (mode, at_mode);
    while k < n {
        let r = (n - k) as f64 / (k + 1) as f64 * odds;
        if r < 1.0 {
            let bound = v * r / (1.0 - r);
            if bound <= half {
                upper_tail = bound;
                break;
            }
        }
        v *= r;
        k += 1;
        upper.push(v);
    }

    let mut lower = Vec::new();
    let mut lower_tail = 0.0;
    let (mut k, mut v) = (mode, at_mode);
    while k > 0 {
        let r = k as f64 / (n - k + 1) as f64 / odds;
        if r < 1.0 {
            let bound = v * r / (1.0 - r);
            if bound <= half {
                lower_tail = bound;
                break;
            }
        }
        v *= r;
        k -= 1;
        lower.push(v);
    }

    let start = mode - lower.len() as u64;
    lower.reverse();
    lower.push(at_mode);
    lower.extend(upper);
    Window { start, pmf: lower, tail: lower_tail + upper_tail }
}

/// Truncated representation of `P` and `Q` shared by all `ε_c`.
struct PqEngine {
    e: f64,
    p: f64,
    c: Window,
}

impl PqEngine {
    fn new(n: u64, epsilon: f64, p: f64, budget: f64) -> PqEngine {
        PqEngine { e: epsilon.exp(), p, c: binomial_window(n - 1, 2.0 * p, budget / 2.0) }
    }

    /// A-window for `C = c`, or `None` outside the C-window.
    fn a_window(&self, c: i64, budget: f64) -> Option<(f64, Window)> {
        let weight = self.c.get(c);
        if c < 0 || weight == 0.0 {
            return None;
        }
        Some((weight, binomial_window(c as u64, 0.5, budget)))
    }

    /// Calls `f(u, v, P, Q)` for every outcome with `u + v = m` that gets mass
    /// from the retained latent window.
    fn for_each_outcome<F: FnMut(u64, u64, f64, f64)>(&self, m: u64, budget: f64, mut f: F) {
        let w0 = 1.0 - self.p - self.e * self.p;
        let here = self.a_window(m as i64, budget);
        let below = self.a_window(m as i64 - 1, budget);
        let lo = [&here, &below].iter().filter_map(|w| w.as_ref().map(|(_, a)| a.start)).min();
        let hi = [&here, &below].iter().filter_map(|w| w.as_ref().map(|(_, a)| a.end())).max();
        let (Some(lo), Some(hi)) = (lo, hi) else { return };
        for u in lo..=hi.min(m) {
            let ui = u as i64;
            let stay = here.as_ref().map_or(0.0, |(b, a)| w0 * b * a.get(ui));
            let (moved_u, moved_v) = below.as_ref().map_or((0.0, 0.0), |(b, a)| (b * a.get(ui - 1), b * a.get(ui)));
            let p_val = stay + self.e * self.p * moved_u + self.p * moved_v;
            let q_val = stay + self.p * moved_u + self.e * self.p * moved_v;
            f(u, m - u, p_val, q_val);
        }
    }

    fn outcome_sums(&self) -> std::ops::RangeInclusive<u64> {
        self.c.start..=self.c.end()
    }

    fn truncation_mass(&self, budget: f64) -> f64 {
        let mut a_tail = 0.0;
        for (i, &b) in self.c.pmf.iter().enumerate() {
            let c = self.c.start + i as u64;
            a_tail += b * binomial_window(c, 0.5, budget).tail;
        }
        self.c.tail + a_tail
    }

    fn divergence(&self, epsilon_c: f64, budget: f64) -> (f64, f64) {
        let ec = epsilon_c.exp();
        let parts: Vec<(f64, f64)> = self
            .outcome_sums()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|m| {
                let (mut fwd, mut bwd) = (Neumaier::default(), Neumaier::default());
                self.for_each_outcome(m, budget, |_, _, p, q| {
                    fwd.add((p - ec * q).max(0.0));
                    bwd.add((q - ec * p).max(0.0));
                });
                (fwd.value(), bwd.value())
            })
            .collect();
        let (mut fwd, mut bwd) = (Neumaier::default(), Neumaier::default());
        for (f, b) in parts {
            fwd.add(f);
            bwd.add(b);
        }
        (fwd.value(), bwd.value())
    }
}

/// Compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::Sum<f64> for Neumaier {
    fn sum<I: Iterator<Item = f64>>(iter: I) -> Neumaier {
        let mut acc = Neumaier::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

fn tail_budget(delta: f64) -> f64 {
    delta * 1e-3
}

/// Hockey-stick divergences `D_{e^{ε_c}}(P‖Q)` and `D_{e^{ε_c}}(Q‖P)`.
pub fn pq_divergence(query: &AmplificationQuery, epsilon_c: f64) -> Result<DivergenceResult> {
    if !(epsilon_c >= 0.0 && epsilon_c.is_finite()) {
        return Err(Error::InvalidParams(format!("epsilon_c must be finite and >= 0, got {epsilon_c}")));
    }
    let budget = tail_budget(query.delta);
    let engine = PqEngine::new(query.n, query.epsilon, query.clone_weight(), budget);
    let (delta_forward, delta_backward) = engine.divergence(epsilon_c, budget / 2.0);
    Ok(DivergenceResult { delta_forward, delta_backward, truncation_mass: engine.truncation_mass(budget / 2.0) })
}

/// One outcome `(u, v)` of the pair of laws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PqPoint {
    pub u: u64,
    pub v: u64,
    pub p: f64,
    pub q: f64,
}

/// Untruncated `P`/`Q` laws for a batch of size `n` (intended for small `n`).
pub fn pq_laws(n: u64, epsilon: f64, alpha: f64) -> Result<Vec<PqPoint>> {
    let query = AmplificationQuery::new(n, epsilon, alpha, 0.5)?;
    let engine = PqEngine::new(n, epsilon, query.clone_weight(), 0.0);
    let mut out = Vec::new();
    for m in engine.outcome_sums() {
        engine.for_each_outcome(m, 0.0, |u, v, p, q| out.push(PqPoint { u, v, p, q }));
    }
    Ok(out)
}

/// Smallest `ε_c ∈ [0, ε]` (to within `tolerance`) whose reported `δ` is at
/// most `delta`.
pub fn amplified_epsilon(n: u64, epsilon: f64, alpha: f64, delta: f64, tolerance: f64) -> Result<f64> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidParams("tolerance must be positive".into()));
    }
    let query = AmplificationQuery::new(n, epsilon, alpha, delta)?;
    let budget = tail_budget(delta);
    let engine = PqEngine::new(n, epsilon, query.clone_weight(), budget);
    let truncation = engine.truncation_mass(budget / 2.0);
    let within = |eps_c: f64| {
        let (f, b) = engine.divergence(eps_c, budget / 2.0);
        f.max(b) + truncation <= delta
    };
    if within(0.0) {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, epsilon);
    for _ in 0..64 {
        if hi - lo <= tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if within(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        assert!((collision_alpha(4, 1.0, 17).unwrap() - 0.28790).abs() < 1e-5);
        assert!((collision_alpha(1, 2f64.ln(), 4).unwrap() - 0.2).abs() < 1e-15);
        assert!(collision_alpha(1, 1.0, 1_000_000_000).unwrap() < 1e-8);
        assert!(collision_alpha(4, 1.0, 4).is_err());
        assert!((generic_clone_alpha(3f64.ln()) - 0.5).abs() < 1e-15);
        assert!((generic_clone_alpha(2f64.ln()) - 1.0 / 3.0).abs() < 1e-15);
        assert!(generic_clone_alpha(1e-9) < 1e-9);
    }

    #[test]
    fn efmrtt_examples() {
        assert!((efmrtt_closed_form(1.0, 1e-6, 100_000) - 0.14105).abs() < 1e-5);
        assert!(efmrtt_closed_form(1.0, 1e-6, u64::MAX) < 1e-6);
        let a = efmrtt_closed_form(0.7, 1e-6, 5000);
        assert!((efmrtt_closed_form(1.4, 1e-6, 5000) - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn single_message_hand_values() {
        let q = AmplificationQuery::new(1, 2f64.ln(), 1.0 / 3.0, 1e-6).unwrap();
        let r = pq_divergence(&q, 0.0).unwrap();
        assert_eq!(r.truncation_mass, 0.0);
        assert!((r.delta_forward - 1.0 / 3.0).abs() < 1e-15);
        let r = pq_divergence(&q, 2f64.ln()).unwrap();
        assert!(r.delta() < 1e-15);
        let eps = amplified_epsilon(1, 1.0, 0.3, 1e-6, 1e-4).unwrap();
        assert!((eps - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn invalid_queries_rejected() {
        assert!(AmplificationQuery::new(10, 1.0, 0.5, 1e-6).is_err());
        assert!(AmplificationQuery::new(10, 1.0, 0.1, 0.0).is_err());
        assert!(AmplificationQuery::new(0, 1.0, 0.1, 1e-6).is_err());
        assert!(AmplificationQuery::new(10, 1.0, generic_clone_alpha(1.0), 1e-6).is_ok());
    }

    #[test]
    fn windows_are_normalized() {
        for &(n, p) in &[(10u64, 0.3f64), (1000, 0.01), (100_000, 0.2), (1_000_000, 0.05), (7, 0.5)] {
            let w = binomial_window(n, p, 1e-9);
            let total: f64 = w.pmf.iter().sum();
            assert!((total + w.tail - 1.0).abs() < 1e-8, "n={n} p={p}: {total} + {}", w.tail);
            assert!(w.tail <= 1e-9);
        }
    }

    #[test]
    fn laws_are_distributions_and_symmetric() {
        let laws = pq_laws(4, 1.3, 0.2).unwrap();
        let (sp, sq): (f64, f64) = laws.iter().fold((0.0, 0.0), |(a, b), pt| (a + pt.p, b + pt.q));
        assert!((sp - 1.0).abs() < 1e-14 && (sq - 1.0).abs() < 1e-14);
        for pt in &laws {
            let swapped = laws.iter().find(|o| o.u == pt.v && o.v == pt.u).unwrap();
            assert!((pt.p - swapped.q).abs() < 1e-16);
        }
    }

    #[test]
    fn amplification_grows_with_n() {
        let eps = 1.0;
        let alpha = collision_alpha(4, eps, 17).unwrap();
        let mut prev = f64::INFINITY;
        for n in [100u64, 1000, 10_000] {
            let e = amplified_epsilon(n, eps, alpha, 1e-6, 1e-4).unwrap();
            assert!(e <= prev + 1e-4, "n={n}: {e} > {prev}");
            prev = e;
        }
    }
}
