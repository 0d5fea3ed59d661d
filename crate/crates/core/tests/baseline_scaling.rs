//! Log-log slopes of the baselines' summed squared error.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coco_ldp::aggregate::true_frequencies;
use coco_ldp::baseline::{baseline_randomize, BaselineCounts, BaselineParams, BaselineVariant};
use coco_ldp::harness::gen_synthetic;

use common::log_log_slope;

fn squared_error(n: usize, d: u32, s: u32, eps: f64, variant: BaselineVariant, reps: u64) -> f64 {
    let params = BaselineParams::new(d, s, eps, variant).unwrap();
    let mut total = 0.0;
    for rep in 0..reps {
        let data = gen_synthetic(n, d, s, 1000 + rep).unwrap();
        let truth = true_frequencies(&data, d);
        let mut rng = ChaCha8Rng::seed_from_u64(rep);
        let mut counts = BaselineCounts::new(d);
        for x in &data {
            counts.add(&baseline_randomize(x, &params, &mut rng).unwrap());
        }
        let est = counts.estimates(&params).unwrap();
        total += est.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    total / reps as f64
}

#[test]
fn privkv_error_grows_quadratically_in_d() {
    let ds = [32u32, 64, 128, 256];
    let errs: Vec<f64> = ds.iter().map(|&d| squared_error(20_000, d, 4, 1.0, BaselineVariant::PrivKv, 8)).collect();
    let slope = log_log_slope(&ds.map(f64::from), &errs);
    assert!((slope - 2.0).abs() <= 0.15, "slope {slope}, errors {errs:?}");
}

#[test]
fn pckv_error_grows_quadratically_in_s() {
    let ss = [2u32, 4, 8, 16];
    let errs: Vec<f64> = ss.iter().map(|&s| squared_error(20_000, 64, s, 1.0, BaselineVariant::PckvGrr, 8)).collect();
    let slope = log_log_slope(&ss.map(f64::from), &errs);
    assert!((slope - 2.0).abs() <= 0.15, "slope {slope}, errors {errs:?}");
}

#[test]
fn baseline_error_falls_inversely_with_n() {
    let ns = [2_000usize, 8_000, 32_000];
    for variant in [BaselineVariant::PrivKv, BaselineVariant::PckvGrr] {
        let errs: Vec<f64> = ns.iter().map(|&n| squared_error(n, 32, 4, 1.0, variant, 8)).collect();
        let slope = log_log_slope(&ns.map(|n| n as f64), &errs);
        assert!((slope + 1.0).abs() <= 0.15, "{variant:?}: slope {slope}, errors {errs:?}");
    }
}
