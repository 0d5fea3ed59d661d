#![allow(dead_code)]

use std::collections::BTreeMap;

/// `C(n, k) p^k (1 − p)^(n − k)` by direct products; fine for small `n`.
pub fn binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Full enumeration of the shuffled-batch laws `P` and `Q`, keyed by `(u, v)`.
pub fn brute_force_laws(n: u64, epsilon: f64, alpha: f64) -> BTreeMap<(u64, u64), (f64, f64)> {
    let e = epsilon.exp();
    let p = alpha / epsilon.exp_m1();
    let deltas = [((1, 0), e * p), ((0, 1), p), ((0, 0), 1.0 - p - e * p)];
    let mut law: BTreeMap<(u64, u64), (f64, f64)> = BTreeMap::new();
    for c in 0..n {
        let wc = binomial_pmf(n - 1, c, 2.0 * p);
        for a in 0..=c {
            let wa = wc * binomial_pmf(c, a, 0.5);
            for &((d1, d2), wd) in &deltas {
                let w = wa * wd;
                law.entry((a + d1, c - a + d2)).or_default().0 += w;
                law.entry((a + d2, c - a + d1)).or_default().1 += w;
            }
        }
    }
    law
}

/// `(D_{e^ε_c}(P‖Q), D_{e^ε_c}(Q‖P))` by enumeration.
pub fn brute_force_divergence(n: u64, epsilon: f64, alpha: f64, epsilon_c: f64) -> (f64, f64) {
    let ec = epsilon_c.exp();
    let (mut fwd, mut bwd) = (0.0, 0.0);
    for (p, q) in brute_force_laws(n, epsilon, alpha).into_values() {
        fwd += (p - ec * q).max(0.0);
        bwd += (q - ec * p).max(0.0);
    }
    (fwd, bwd)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
