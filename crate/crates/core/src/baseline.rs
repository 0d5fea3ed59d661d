//! Comparison mechanisms: PrivKV (one sampled key, 3-ary randomized
//! response) and PCKV (one sampled non-zero entry, randomized response over
//! the `2d` event codes).

use rand::Rng;

use crate::vector::{EventId, TernaryVector};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineVariant {
    PrivKv,
    PckvGrr,
    /// PCKV-GRR run at the amplified budget `ln(s(e^ε − 1) + 1)`.
    PckvAgrr,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineParams {
    pub d: u32,
    pub s: u32,
    pub epsilon: f64,
    pub variant: BaselineVariant,
}

impl BaselineParams {
    pub fn new(d: u32, s: u32, epsilon: f64, variant: BaselineVariant) -> Result<BaselineParams> {
        if d == 0 || s == 0 || s > d {
            return Err(Error::InvalidParams(format!("need 1 <= s <= d, got s={s}, d={d}")));
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidParams(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        Ok(BaselineParams { d, s, epsilon, variant })
    }

    /// Budget used by the inner randomized response.
    pub fn effective_epsilon(&self) -> f64 {
        match self.variant {
            BaselineVariant::PckvAgrr => effective_epsilon(self.s, self.epsilon),
            _ => self.epsilon,
        }
    }

    /// `(truth, other)` probabilities of the inner randomized response.
    pub fn grr_probabilities(&self) -> (f64, f64) {
        let e = self.effective_epsilon().exp();
        let k = match self.variant {
            BaselineVariant::PrivKv => 3.0,
            _ => 2.0 * self.d as f64,
        };
        (e / (e + k - 1.0), 1.0 / (e + k - 1.0))
    }

    fn check_input(&self, x: &TernaryVector) -> Result<()> {
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

/// `ln(s(e^ε − 1) + 1)`.
pub fn effective_epsilon(s: u32, epsilon: f64) -> f64 {
    (s as f64 * epsilon.exp_m1() + 1.0).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineView {
    /// Sampled dimension and its perturbed value in `{-1, 0, 1}`.
    PrivKv { j: u32, response: i8 },
    /// Perturbed event code in `1..=2d`.
    Pckv { code: u32 },
}

fn grr<R: Rng + ?Sized>(truth: usize, k: usize, p_truth: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < p_truth {
        truth
    } else {
        let other = rng.gen_range(0..k - 1);
        if other >= truth {
            other + 1
        } else {
            other
        }
    }
}

pub fn privkv_randomize<R: Rng + ?Sized>(
    x: &TernaryVector,
    params: &BaselineParams,
    rng: &mut R,
) -> Result<(u32, i8)> {
    params.check_input(x)?;
    let j = rng.gen_range(1..=params.d);
    let truth = (x.value(j) + 1) as usize;
    let (p, _) = params.grr_probabilities();
    Ok((j, grr(truth, 3, p, rng) as i8 - 1))
}

pub fn pckv_randomize<R: Rng + ?Sized>(x: &TernaryVector, params: &BaselineParams, rng: &mut R) -> Result<u32> {
    params.check_input(x)?;
    let (j, b) = x.support()[rng.gen_range(0..x.support().len())];
    let truth = EventId::new(j, b).code() as usize - 1;
    let (p, _) = params.grr_probabilities();
    Ok(grr(truth, 2 * params.d as usize, p, rng) as u32 + 1)
}

pub fn baseline_randomize<R: Rng + ?Sized>(
    x: &TernaryVector,
    params: &BaselineParams,
    rng: &mut R,
) -> Result<BaselineView> {
    match params.variant {
        BaselineVariant::PrivKv => privkv_randomize(x, params, rng).map(|(j, response)| BaselineView::PrivKv { j, response }),
        _ => pckv_randomize(x, params, rng).map(|code| BaselineView::Pckv { code }),
    }
}

/// Exact output law of PrivKV: entry `3(j − 1) + (r + 1)` holds `P[(j, r) | x]`.
pub fn privkv_output_law(x: &TernaryVector, params: &BaselineParams) -> Result<Vec<f64>> {
    params.check_input(x)?;
    let (p, q) = params.grr_probabilities();
    let d = params.d as f64;
    let mut law = Vec::with_capacity(3 * params.d as usize);
    for j in 1..=params.d {
        for r in -1i8..=1 {
            law.push(if x.value(j) == r { p } else { q } / d);
        }
    }
    Ok(law)
}

/// Exact output law of PCKV over codes `1..=2d` (index `code − 1`).
pub fn pckv_output_law(x: &TernaryVector, params: &BaselineParams) -> Result<Vec<f64>> {
    params.check_input(x)?;
    let (p, q) = params.grr_probabilities();
    let s = params.s as f64;
    let mut law = vec![q; 2 * params.d as usize];
    for e in x.events() {
        law[e.code() as usize - 1] += (p - q) / s;
    }
    Ok(law)
}

/// Sufficient statistics of a batch of baseline views.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineCounts {
    /// Per event code: `N_{j,b}` for PrivKV, `N_code` for PCKV.
    pub events: Vec<u64>,
    /// Per dimension: `N_j` (PrivKV only).
    pub dims: Vec<u64>,
    pub n: u64,
}

impl BaselineCounts {
    pub fn new(d: u32) -> BaselineCounts {
        BaselineCounts { events: vec![0; 2 * d as usize], dims: vec![0; d as usize], n: 0 }
    }

    pub fn add(&mut self, view: &BaselineView) {
        self.n += 1;
        match *view {
            BaselineView::PrivKv { j, response } => {
                self.dims[j as usize - 1] += 1;
                if let Some(sign) = crate::vector::Sign::from_value(response) {
                    self.events[EventId::new(j, sign).code() as usize - 1] += 1;
                }
            }
            BaselineView::Pckv { code } => self.events[code as usize - 1] += 1,
        }
    }

    pub fn merge(&mut self, other: &BaselineCounts) {
        self.n += other.n;
        for (a, b) in self.events.iter_mut().zip(&other.events) {
            *a += b;
        }
        for (a, b) in self.dims.iter_mut().zip(&other.dims) {
            *a += b;
        }
    }

    /// Unbiased estimates of `f(j_b)` indexed by `code − 1`.
    pub fn estimates(&self, params: &BaselineParams) -> Result<Vec<f64>> {
        if self.n == 0 {
            return Err(Error::Empty);
        }
        if self.events.len() != 2 * params.d as usize {
            return Err(Error::LengthMismatch { left: self.events.len(), right: 2 * params.d as usize });
        }
        let (p, q) = params.grr_probabilities();
        let gap = p - q;
        if gap.abs() <= 1e-15 {
            return Err(Error::Degenerate("randomized response at zero budget".into()));
        }
        let n = self.n as f64;
        Ok(match params.variant {
            BaselineVariant::PrivKv => {
                let d = params.d as f64;
                self.events
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| d / n * (c as f64 - q * self.dims[i / 2] as f64) / gap)
                    .collect()
            }
            _ => {
                let s = params.s as f64;
                self.events.iter().map(|&c| s * (c as f64 / n - q) / gap).collect()
            }
        })
    }
}

/// Unbiased estimates of the `2d` event frequencies, indexed by `code − 1`.
pub fn baseline_frequency_estimates(views: &[BaselineView], params: &BaselineParams) -> Result<Vec<f64>> {
    if views.is_empty() {
        return Err(Error::Empty);
    }
    let mut counts = BaselineCounts::new(params.d);
    for v in views {
        let ok = matches!(
            (v, params.variant),
            (BaselineView::PrivKv { .. }, BaselineVariant::PrivKv)
                | (BaselineView::Pckv { .. }, BaselineVariant::PckvGrr | BaselineVariant::PckvAgrr)
        );
        if !ok {
            return Err(Error::InvalidParams("view does not match the baseline variant".into()));
        }
        counts.add(v);
    }
    counts.estimates(params)
}
