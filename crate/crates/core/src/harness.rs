//! Synthetic data, seeded experiment grids, amplification sweeps and
//! report serialization.
//!
//! Every repetition draws its data, hash seeds and randomizer stream from
//! `(master_seed, grid index, repetition)`, so results do not depend on
//! thread scheduling.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::accountant::{amplified_epsilon, collision_alpha, efmrtt_closed_form, generic_clone_alpha};
use crate::aggregate::{coco_mean_estimate, frequencies_from_counts, mae, true_frequencies, tve, HitCounts, Mechanism};
use crate::baseline::{baseline_randomize, BaselineCounts, BaselineParams, BaselineVariant};
use crate::coco::{coco_choose_t, coco_randomize, CocoParams, CocoTarget};
use crate::collision::{collision_optimal_t, collision_randomize, CollisionParams};
use crate::vector::{draw_user_hash, prf, MechanismParams, Sign, TernaryVector};
use crate::{Error, Result};

const DOMAIN_REP: u64 = 0x7265_705f_7365_6564;
const DOMAIN_DATA: u64 = 0x6461_7461;
const DOMAIN_HASH: u64 = 0x6861_7368;
const DOMAIN_RNG: u64 = 0x0072_6e67;

/// Seed of one repetition at one grid point.
pub fn derive_seed(master_seed: u64, grid_index: u64, repetition: u64) -> u64 {
    prf(prf(master_seed, DOMAIN_REP, grid_index), DOMAIN_REP, repetition)
}

/// `n` vectors with uniformly random size-`s` supports and fair signs.
pub fn gen_synthetic(n: usize, d: u32, s: u32, seed: u64) -> Result<Vec<TernaryVector>> {
    if s == 0 || s > d {
        return Err(Error::InvalidParams(format!("need 1 <= s <= d, got s={s}, d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let dims = rand::seq::index::sample(&mut rng, d as usize, s as usize);
            let support = dims
                .iter()
                .map(|j| (j as u32 + 1, if rng.gen::<bool>() { Sign::Plus } else { Sign::Minus }))
                .collect();
            TernaryVector::new(d, support)
        })
        .collect()
}

/// Max-min normalizes `values` to `[-1, 1]` and rounds each entry to
/// `{-1, 0, 1}` stochastically, preserving its expectation.
pub fn ternarize<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> Vec<i8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            let u = if span > 0.0 { 2.0 * (v - lo) / span - 1.0 } else { 0.0 };
            let draw: f64 = rng.gen();
            if draw < u.abs() {
                if u > 0.0 {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MechanismChoice {
    Collision,
    Coco,
    PrivKv,
    PckvGrr,
    PckvAgrr,
}

impl MechanismChoice {
    pub fn name(self) -> &'static str {
        match self {
            MechanismChoice::Collision => "collision",
            MechanismChoice::Coco => "coco",
            MechanismChoice::PrivKv => "privkv",
            MechanismChoice::PckvGrr => "pckv_grr",
            MechanismChoice::PckvAgrr => "pckv_agrr",
        }
    }
}

impl FromStr for MechanismChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "collision" => MechanismChoice::Collision,
            "coco" => MechanismChoice::Coco,
            "privkv" => MechanismChoice::PrivKv,
            "pckv_grr" | "pckv-grr" => MechanismChoice::PckvGrr,
            "pckv_agrr" | "pckv-agrr" => MechanismChoice::PckvAgrr,
            other => return Err(Error::Config(format!("unknown mechanism '{other}'"))),
        })
    }
}

impl fmt::Display for MechanismChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", stringify!($name), " '{}'"), other))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

keyword_enum!(Metric { Tve => "tve", Mae => "mae" });
keyword_enum!(Target { Frequency => "frequency", Mean => "mean", NonMissing => "nonmissing" });
keyword_enum!(ReportMode { RawMean => "raw_mean", MeanLog => "mean_log" });
keyword_enum!(Bound { Collision => "collision", Clone => "clone", Efmrtt => "efmrtt" });

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub n: Vec<u64>,
    pub d: Vec<u32>,
    pub s: Vec<u32>,
    pub epsilon: Vec<f64>,
    pub mechanisms: Vec<MechanismChoice>,
    pub repetitions: u32,
    pub master_seed: u64,
    pub metrics: Vec<Metric>,
    pub target: Target,
    pub projection: bool,
    pub report: ReportMode,
    /// Output domain size; `None` picks each mechanism's recommended value.
    pub t: Option<u32>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: vec![10_000, 20_000],
            d: vec![64, 128, 256],
            s: vec![8],
            epsilon: vec![0.5, 1.0],
            mechanisms: vec![MechanismChoice::Collision, MechanismChoice::Coco, MechanismChoice::PrivKv, MechanismChoice::PckvGrr],
            repetitions: 100,
            master_seed: 0,
            metrics: vec![Metric::Tve, Metric::Mae],
            target: Target::Frequency,
            projection: true,
            report: ReportMode::RawMean,
            t: None,
        }
    }
}

impl ExperimentConfig {
    /// Full-scale grid: n = 10⁵, d = 512, four sparsities, nine budgets,
    /// every mechanism, mean-of-log reporting.
    pub fn full_grid() -> Self {
        ExperimentConfig {
            n: vec![100_000],
            d: vec![512],
            s: vec![4, 8, 16, 32],
            epsilon: vec![0.001, 0.01, 0.1, 0.2, 0.4, 0.8, 1.0, 1.5, 2.0],
            mechanisms: vec![
                MechanismChoice::Collision,
                MechanismChoice::Coco,
                MechanismChoice::PrivKv,
                MechanismChoice::PckvGrr,
                MechanismChoice::PckvAgrr,
            ],
            report: ReportMode::MeanLog,
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("n", self.n.is_empty()),
            ("d", self.d.is_empty()),
            ("s", self.s.is_empty()),
            ("epsilon", self.epsilon.is_empty()),
            ("mechanisms", self.mechanisms.is_empty()),
            ("metrics", self.metrics.is_empty()),
        ];
        if let Some((key, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("'{key}' must list at least one value")));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        if self.n.contains(&0) || self.d.contains(&0) || self.s.contains(&0) {
            return Err(Error::Config("n, d and s must be positive".into()));
        }
        if self.epsilon.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config("epsilon values must be positive".into()));
        }
        Ok(())
    }

    /// Grid points in row order: `n`, then `d`, `s`, `epsilon`.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &d in &self.d {
                for &s in &self.s {
                    for &epsilon in &self.epsilon {
                        out.push(GridPoint { n, d, s, epsilon });
                    }
                }
            }
        }
        out
    }

    /// Applies `key = value` overrides, one per line; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" => self.n = parse_list(value)?,
            "d" => self.d = parse_list(value)?,
            "s" => self.s = parse_list(value)?,
            "epsilon" => self.epsilon = parse_list(value)?,
            "mechanisms" => self.mechanisms = parse_list(value)?,
            "metrics" => self.metrics = parse_list(value)?,
            "repetitions" => self.repetitions = parse_one(value)?,
            "master_seed" => self.master_seed = parse_one(value)?,
            "target" => self.target = value.parse()?,
            "projection" => self.projection = parse_one(value)?,
            "report" => self.report = value.parse()?,
            "t" => self.t = if value.is_empty() || value == "auto" { None } else { Some(parse_one(value)?) },
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

fn parse_one<T: FromStr>(value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("cannot parse '{value}'")))
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>> {
    value.split(',').filter(|v| !v.trim().is_empty()).map(parse_one).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub n: u64,
    pub d: u32,
    pub s: u32,
    pub epsilon: f64,
}

/// A mechanism configured for one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prepared {
    Hashed(Mechanism),
    Baseline(BaselineParams),
}

impl Prepared {
    pub fn new(choice: MechanismChoice, point: &GridPoint, target: Target, t: Option<u32>) -> Result<Prepared> {
        let GridPoint { d, s, epsilon, .. } = *point;
        Ok(match choice {
            MechanismChoice::Collision => {
                let t = t.unwrap_or_else(|| collision_optimal_t(s, epsilon));
                Prepared::Hashed(Mechanism::Collision(CollisionParams::new(MechanismParams::new(d, s, epsilon, t)?)?))
            }
            MechanismChoice::Coco => {
                let which = if target == Target::Mean { CocoTarget::Mean } else { CocoTarget::NonMissing };
                let t = t.unwrap_or_else(|| coco_choose_t(s, epsilon, which));
                Prepared::Hashed(Mechanism::Coco(CocoParams::new(MechanismParams::new(d, s, epsilon, t)?)?))
            }
            MechanismChoice::PrivKv => Prepared::Baseline(BaselineParams::new(d, s, epsilon, BaselineVariant::PrivKv)?),
            MechanismChoice::PckvGrr => Prepared::Baseline(BaselineParams::new(d, s, epsilon, BaselineVariant::PckvGrr)?),
            MechanismChoice::PckvAgrr => Prepared::Baseline(BaselineParams::new(d, s, epsilon, BaselineVariant::PckvAgrr)?),
        })
    }

    /// Output domain size, 0 for baselines.
    pub fn t(&self) -> u32 {
        match self {
            Prepared::Hashed(m) => m.t(),
            Prepared::Baseline(_) => 0,
        }
    }

    /// Randomizes `data` and returns the debiased `2d` event frequencies.
    /// For CoCo, `f(j_+) − f(j_−)` is exactly its mean estimator.
    pub fn estimate_frequencies(&self, data: &[TernaryVector], seed: u64) -> Result<Vec<f64>> {
        let hash_seed = prf(seed, DOMAIN_HASH, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(prf(seed, DOMAIN_RNG, 0));
        match self {
            Prepared::Hashed(mech) => {
                let mut counts = HitCounts::new(mech.d());
                for (i, x) in data.iter().enumerate() {
                    let view = match mech {
                        Mechanism::Collision(p) => {
                            collision_randomize(x, draw_user_hash(hash_seed, i as u64, p.hash_kind()), p, &mut rng)?
                        }
                        Mechanism::Coco(p) => coco_randomize(x, draw_user_hash(hash_seed, i as u64, p.hash_kind()), p, &mut rng)?,
                    };
                    counts.add(&view);
                }
                Ok(frequencies_from_counts(&counts, mech)?.values)
            }
            Prepared::Baseline(params) => {
                let mut counts = BaselineCounts::new(params.d);
                for x in data {
                    counts.add(&baseline_randomize(x, params, &mut rng)?);
                }
                counts.estimates(params)
            }
        }
    }

    /// CoCo mean estimates straight from the hit counts (no frequency split).
    pub fn estimate_coco_mean(&self, data: &[TernaryVector], seed: u64) -> Result<Vec<f64>> {
        let Prepared::Hashed(mech @ Mechanism::Coco(p)) = self else {
            return Err(Error::InvalidParams("CoCo only".into()));
        };
        let hash_seed = prf(seed, DOMAIN_HASH, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(prf(seed, DOMAIN_RNG, 0));
        let mut counts = HitCounts::new(mech.d());
        for (i, x) in data.iter().enumerate() {
            counts.add(&coco_randomize(x, draw_user_hash(hash_seed, i as u64, p.hash_kind()), p, &mut rng)?);
        }
        Ok(coco_mean_estimate(&counts, mech)?.mean)
    }
}

/// Maps event frequencies to the compared quantity: the `2d` frequencies,
/// the `d` means `f(j_+) − f(j_−)` or the `d` non-missing frequencies.
pub fn target_values(frequencies: &[f64], target: Target) -> Vec<f64> {
    match target {
        Target::Frequency => frequencies.to_vec(),
        Target::Mean => frequencies.chunks_exact(2).map(|p| p[1] - p[0]).collect(),
        Target::NonMissing => frequencies.chunks_exact(2).map(|p| p[1] + p[0]).collect(),
    }
}

/// Metrics of one repetition, before and after projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialMetrics {
    pub tve: f64,
    pub mae: f64,
    pub tve_raw: f64,
    pub mae_raw: f64,
}

/// Runs one repetition of one mechanism at one grid point.
pub fn run_trial(
    point: &GridPoint,
    mechanism: &Prepared,
    target: Target,
    projection: bool,
    data: &[TernaryVector],
    seed: u64,
) -> Result<TrialMetrics> {
    let truth = target_values(&true_frequencies(data, point.d), target);
    let raw = mechanism.estimate_frequencies(data, seed)?;
    let raw_target = target_values(&raw, target);
    let (tve_raw, mae_raw) = (tve(&raw_target, &truth)?, mae(&raw_target, &truth)?);
    if !projection {
        return Ok(TrialMetrics { tve: tve_raw, mae: mae_raw, tve_raw, mae_raw });
    }
    let projected = target_values(&crate::aggregate::project_to_simplex(&raw, point.s as f64), target);
    Ok(TrialMetrics { tve: tve(&projected, &truth)?, mae: mae(&projected, &truth)?, tve_raw, mae_raw })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub point: GridPoint,
    pub mechanism: MechanismChoice,
    pub t: u32,
    pub target: Target,
    pub metric: String,
    pub value: f64,
    pub repetitions: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointFailure {
    pub description: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<PointFailure>,
}

fn summarize(values: &[f64], mode: ReportMode) -> Option<f64> {
    let v = match mode {
        ReportMode::RawMean => values.iter().sum::<f64>() / values.len() as f64,
        ReportMode::MeanLog => values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64,
    };
    v.is_finite().then_some(v)
}

/// Runs the whole grid. Failing grid points are reported, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let grid = cfg.grid();
    let mut jobs = Vec::new();
    for gi in 0..grid.len() {
        for &choice in &cfg.mechanisms {
            for rep in 0..cfg.repetitions {
                jobs.push((gi, choice, rep));
            }
        }
    }
    let results: Vec<Result<TrialMetrics>> = jobs
        .par_iter()
        .map(|&(gi, choice, rep)| {
            let point = &grid[gi];
            let seed = derive_seed(cfg.master_seed, gi as u64, rep as u64);
            let mech = Prepared::new(choice, point, cfg.target, cfg.t)?;
            let data = gen_synthetic(point.n as usize, point.d, point.s, prf(seed, DOMAIN_DATA, 0))?;
            let mech_seed = prf(seed, choice as u64, 1);
            run_trial(point, &mech, cfg.target, cfg.projection, &data, mech_seed)
        })
        .collect();

    let mut report = ExperimentReport::default();
    let per = cfg.repetitions as usize;
    for (chunk_index, chunk) in results.chunks(per).enumerate() {
        let (gi, choice, _) = jobs[chunk_index * per];
        let point = grid[gi];
        let describe = || {
            format!("n={} d={} s={} epsilon={} mechanism={}", point.n, point.d, point.s, point.epsilon, choice)
        };
        let trials: Result<Vec<TrialMetrics>> = chunk.iter().cloned().collect();
        let trials = match trials {
            Ok(t) => t,
            Err(e) => {
                report.failures.push(PointFailure { description: describe(), error: e.to_string() });
                continue;
            }
        };
        let t = Prepared::new(choice, &point, cfg.target, cfg.t).map(|m| m.t()).unwrap_or(0);
        let mut series: Vec<(String, Vec<f64>)> = Vec::new();
        for metric in &cfg.metrics {
            let pick = |m: &TrialMetrics, raw: bool| match (metric, raw) {
                (Metric::Tve, false) => m.tve,
                (Metric::Mae, false) => m.mae,
                (Metric::Tve, true) => m.tve_raw,
                (Metric::Mae, true) => m.mae_raw,
            };
            series.push((metric.name().to_string(), trials.iter().map(|m| pick(m, false)).collect()));
            if cfg.projection {
                series.push((format!("{}_raw", metric.name()), trials.iter().map(|m| pick(m, true)).collect()));
            }
        }
        for (metric, values) in series {
            match summarize(&values, cfg.report) {
                Some(value) => report.rows.push(ReportRow {
                    point,
                    mechanism: choice,
                    t,
                    target: cfg.target,
                    metric,
                    value,
                    repetitions: cfg.repetitions,
                    seed: cfg.master_seed,
                }),
                None => report.failures.push(PointFailure {
                    description: format!("{} metric={metric}", describe()),
                    error: "non-finite summary".into(),
                }),
            }
        }
    }
    Ok(report)
}

/// `{:.16e}`: 17 significant digits, enough to round-trip an `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

const ROW_HEADER: [&str; 11] = ["n", "d", "s", "epsilon", "mechanism", "t", "target", "metric", "value", "repetitions", "seed"];

fn row_fields(r: &ReportRow) -> [String; 11] {
    [
        r.point.n.to_string(),
        r.point.d.to_string(),
        r.point.s.to_string(),
        format_number(r.point.epsilon),
        r.mechanism.to_string(),
        r.t.to_string(),
        r.target.to_string(),
        r.metric.clone(),
        format_number(r.value),
        r.repetitions.to_string(),
        r.seed.to_string(),
    ]
}

fn io_err(e: impl fmt::Display) -> Error {
    Error::Config(format!("write failed: {e}"))
}

pub fn write_rows_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROW_HEADER).map_err(io_err)?;
    for r in rows {
        w.write_record(row_fields(r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// JSON string literal for our own identifiers and messages.
fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn write_jsonl<W: Write>(header: &[&str], records: impl Iterator<Item = Vec<(String, bool)>>, mut out: W) -> Result<()> {
    for record in records {
        let fields: Vec<String> = header
            .iter()
            .zip(record)
            .map(|(k, (v, quoted))| format!("{}:{}", json_string(k), if quoted { json_string(&v) } else { v }))
            .collect();
        writeln!(out, "{{{}}}", fields.join(",")).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_rows_jsonl<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let quoted = [false, false, false, false, true, false, true, true, false, false, false];
    write_jsonl(
        &ROW_HEADER,
        rows.iter().map(|r| row_fields(r).into_iter().zip(quoted).collect()),
        out,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmplificationRow {
    pub n: u64,
    pub s: u32,
    pub epsilon: f64,
    pub t: u32,
    pub delta: f64,
    pub bound: Bound,
    pub epsilon_c: f64,
    /// `log2(ε/ε_c)`.
    pub log2_ratio: f64,
    /// Set for bounds whose validity conditions are not checked here.
    pub caveat: Option<&'static str>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AmplificationReport {
    pub rows: Vec<AmplificationRow>,
    pub failures: Vec<PointFailure>,
}

pub const EFMRTT_CAVEAT: &str = "closed form printed without checking its (epsilon, n) validity conditions";

/// Amplified budgets at `t = t*` for every `(n, s, ε)` and bound.
pub fn run_amplification_sweep(
    ns: &[u64],
    ss: &[u32],
    epsilons: &[f64],
    delta: f64,
    bounds: &[Bound],
    tolerance: f64,
) -> AmplificationReport {
    let mut points = Vec::new();
    for &n in ns {
        for &s in ss {
            for &epsilon in epsilons {
                for &bound in bounds {
                    points.push((n, s, epsilon, bound));
                }
            }
        }
    }
    let results: Vec<Result<AmplificationRow>> = points
        .par_iter()
        .map(|&(n, s, epsilon, bound)| {
            let t = collision_optimal_t(s, epsilon);
            let (epsilon_c, caveat) = match bound {
                Bound::Collision => (amplified_epsilon(n, epsilon, collision_alpha(s, epsilon, t)?, delta, tolerance)?, None),
                Bound::Clone => (amplified_epsilon(n, epsilon, generic_clone_alpha(epsilon), delta, tolerance)?, None),
                Bound::Efmrtt => (efmrtt_closed_form(epsilon, delta, n), Some(EFMRTT_CAVEAT)),
            };
            let log2_ratio = (epsilon / epsilon_c).log2();
            if !log2_ratio.is_finite() {
                return Err(Error::Degenerate(format!("epsilon_c = {epsilon_c} gives a non-finite ratio")));
            }
            Ok(AmplificationRow { n, s, epsilon, t, delta, bound, epsilon_c, log2_ratio, caveat })
        })
        .collect();
    let mut report = AmplificationReport::default();
    for ((n, s, epsilon, bound), r) in points.into_iter().zip(results) {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push(PointFailure {
                description: format!("n={n} s={s} epsilon={epsilon} bound={bound}"),
                error: e.to_string(),
            }),
        }
    }
    report
}

const AMP_HEADER: [&str; 9] = ["n", "s", "epsilon", "t", "delta", "bound", "epsilon_c", "log2_ratio", "caveat"];

fn amp_fields(r: &AmplificationRow) -> [String; 9] {
    [
        r.n.to_string(),
        r.s.to_string(),
        format_number(r.epsilon),
        r.t.to_string(),
        format_number(r.delta),
        r.bound.to_string(),
        format_number(r.epsilon_c),
        format_number(r.log2_ratio),
        r.caveat.unwrap_or("").to_string(),
    ]
}

pub fn write_amplification_csv<W: Write>(rows: &[AmplificationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AMP_HEADER).map_err(io_err)?;
    for r in rows {
        w.write_record(amp_fields(r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_amplification_jsonl<W: Write>(rows: &[AmplificationRow], out: W) -> Result<()> {
    let quoted = [false, false, false, false, false, true, false, false, true];
    write_jsonl(&AMP_HEADER, rows.iter().map(|r| amp_fields(r).into_iter().zip(quoted).collect()), out)
}

/// Sparse dump of a dataset: one `user,index,sign` line per non-zero entry.
pub fn write_dataset_csv<W: Write>(data: &[TernaryVector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user", "index", "sign"]).map_err(io_err)?;
    for (user, x) in data.iter().enumerate() {
        for &(j, b) in x.support() {
            w.write_record([user.to_string(), j.to_string(), b.value().to_string()]).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_data_is_deterministic_and_valid() {
        let a = gen_synthetic(200, 10, 3, 5).unwrap();
        assert_eq!(a, gen_synthetic(200, 10, 3, 5).unwrap());
        assert_ne!(a, gen_synthetic(200, 10, 3, 6).unwrap());
        assert!(a.iter().all(|x| x.s() == 3 && x.d() == 10));
        let full = gen_synthetic(50, 4, 4, 1).unwrap();
        assert!(full.iter().all(|x| x.support().len() == 4));
        assert!(gen_synthetic(1, 3, 4, 0).is_err());
    }

    #[test]
    fn synthetic_event_frequencies() {
        let (n, d, s) = (100_000usize, 16u32, 4u32);
        let f = true_frequencies(&gen_synthetic(n, d, s, 11).unwrap(), d);
        let p = s as f64 / (2.0 * d as f64);
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        for v in f {
            assert!((v - p).abs() < 3.0 * sd, "{v} vs {p}");
        }
    }

    #[test]
    fn full_support_signs_are_fair() {
        let data = gen_synthetic(20_000, 4, 4, 2).unwrap();
        let f = true_frequencies(&data, 4);
        let sd = (0.25 / 20_000f64).sqrt();
        for v in f {
            assert!((v - 0.5).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn ternarize_preserves_expectation() {
        let values = [3.0, -1.0, 1.0, 0.0];
        // Normalized: [1, -1, 0, -0.5].
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sums = [0f64; 4];
        let reps = 40_000;
        for _ in 0..reps {
            for (s, v) in sums.iter_mut().zip(ternarize(&values, &mut rng)) {
                *s += v as f64;
            }
        }
        let want = [1.0, -1.0, 0.0, -0.5];
        for (s, w) in sums.iter().zip(want) {
            assert!((s / reps as f64 - w).abs() < 0.02);
        }
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# grid\nn = 1000, 2000\nd=32\nmechanisms = collision,coco # two\nreport = mean_log\nprojection = false\nt = 20\n")
            .unwrap();
        assert_eq!(cfg.n, vec![1000, 2000]);
        assert_eq!(cfg.d, vec![32]);
        assert_eq!(cfg.mechanisms, vec![MechanismChoice::Collision, MechanismChoice::Coco]);
        assert_eq!(cfg.report, ReportMode::MeanLog);
        assert!(!cfg.projection);
        assert_eq!(cfg.t, Some(20));
        assert!(cfg.apply_text("bogus = 1").is_err());
        assert!(cfg.apply_text("n 5").is_err());
        assert!(cfg.apply_text("mechanisms = laplace").is_err());
    }

    #[test]
    fn single_point_is_deterministic() {
        let cfg = ExperimentConfig {
            n: vec![500],
            d: vec![16],
            s: vec![2],
            epsilon: vec![1.0],
            repetitions: 1,
            master_seed: 42,
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert!(a.failures.is_empty());
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4 * 4);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_rows_csv(&a.rows, &mut buf_a).unwrap();
        write_rows_csv(&b.rows, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn invalid_points_are_reported_not_fatal() {
        let cfg = ExperimentConfig {
            n: vec![100],
            d: vec![4, 16],
            s: vec![8],
            epsilon: vec![1.0],
            mechanisms: vec![MechanismChoice::Collision],
            repetitions: 2,
            ..ExperimentConfig::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.failures.len(), 1);
        assert!(r.rows.iter().all(|row| row.point.d == 16));
    }

    #[test]
    fn number_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 12345.678e-9, -2.5] {
            let s = format_number(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_number(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn jsonl_lines_are_well_formed() {
        let row = ReportRow {
            point: GridPoint { n: 10, d: 4, s: 1, epsilon: 1.0 },
            mechanism: MechanismChoice::Coco,
            t: 6,
            target: Target::Mean,
            metric: "tve".into(),
            value: 0.25,
            repetitions: 3,
            seed: 9,
        };
        let mut buf = Vec::new();
        write_rows_jsonl(&[row], &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert!(line.starts_with("{\"n\":10,\"d\":4,"));
        assert!(line.contains("\"mechanism\":\"coco\""));
        assert!(line.contains("\"value\":2.5000000000000000e-1"));
        assert!(line.ends_with("}\n"));
    }

    #[test]
    fn sweep_orders_bounds() {
        let r = run_amplification_sweep(&[10_000], &[4], &[1.0], 1e-6, &[Bound::Collision, Bound::Clone, Bound::Efmrtt], 1e-4);
        assert!(r.failures.is_empty());
        let ratio = |b| r.rows.iter().find(|x| x.bound == b).unwrap().log2_ratio;
        assert!(ratio(Bound::Collision) >= ratio(Bound::Clone));
        assert!(ratio(Bound::Clone) >= ratio(Bound::Efmrtt));
        assert!(r.rows.iter().find(|x| x.bound == Bound::Efmrtt).unwrap().caveat.is_some());
    }

    #[test]
    fn vacuous_delta_flags_points() {
        let r = run_amplification_sweep(&[1000], &[2], &[1.0], 1.0 - 1e-12, &[Bound::Collision, Bound::Clone], 1e-4);
        assert!(r.rows.is_empty());
        assert_eq!(r.failures.len(), 2);
    }
}
