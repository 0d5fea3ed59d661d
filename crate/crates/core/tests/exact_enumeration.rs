use coco_ldp::coco::{collision_rates, overwrite_probability, CocoParams};
use coco_ldp::collision::CollisionParams;
use coco_ldp::oracle::{
    all_inputs, collision_overlap_alpha, enumerate_distribution, exact_moments, mixture_decompose, verify_ldp,
    Estimator, HashFamily, Mechanism,
};
use coco_ldp::{EventId, MechanismParams};

fn collision(d: u32, s: u32, eps: f64, t: u32) -> CollisionParams {
    CollisionParams::new(MechanismParams::new(d, s, eps, t).unwrap()).unwrap()
}

fn coco(d: u32, s: u32, eps: f64, t: u32) -> CocoParams {
    CocoParams::new(MechanismParams::new(d, s, eps, t).unwrap()).unwrap()
}

#[test]
fn collision_indicator_variance_matches_closed_form() {
    for (t, eps) in [(4, 0.5), (5, 1.3), (5, 2.0)] {
        let p = collision(4, 2, eps, t);
        let gap = p.estimator_gap();
        let fam = HashFamily::uniform_single(4, t).unwrap();
        let ests: Vec<Estimator> = EventId::all(4).map(Estimator::CollisionIndicator).collect();
        for x in all_inputs(4, 2).into_iter().step_by(5) {
            let m = exact_moments(&Mechanism::Collision(p), &x, &ests, &fam).unwrap();
            for (est, mo) in ests.iter().zip(m) {
                let q = if est.target(&x) == 1.0 { p.hit_probability() } else { 1.0 / t as f64 };
                let want = q * (1.0 - q) / (gap * gap);
                assert!((mo.variance - want).abs() <= 1e-9 * want, "{est:?}: {} vs {want}", mo.variance);
            }
        }
    }
}

#[test]
fn enumerated_laws_are_normalized() {
    let cases: Vec<(Mechanism, HashFamily)> = vec![
        (Mechanism::Collision(collision(3, 2, 0.7, 4)), HashFamily::uniform_single(3, 4).unwrap()),
        (Mechanism::Collision(collision(4, 1, 2.0, 3)), HashFamily::uniform_single(4, 3).unwrap()),
        (Mechanism::Coco(coco(4, 2, 1.1, 6)), HashFamily::uniform_paired(4, 6).unwrap()),
        (Mechanism::Coco(coco(5, 3, 0.4, 8)), HashFamily::uniform_paired(5, 8).unwrap()),
    ];
    for (mech, fam) in cases {
        for x in all_inputs(mech.d(), mech.s()).into_iter().step_by(7) {
            let dist = enumerate_distribution(&mech, &x, &fam).unwrap();
            assert!(dist.is_valid(1e-12), "{mech:?} {x:?}: total {}", dist.total());
        }
    }
}

#[test]
fn coco_ldp_on_small_domains() {
    for d in 2..=6u32 {
        for s in 1..=3u32.min(d) {
            for t in ((2 * s + 2)..=12).step_by(2) {
                let fam = if d as f64 * (t as f64).log2() <= 16.0 {
                    HashFamily::uniform_paired(d, t).unwrap()
                } else {
                    HashFamily::seeded(d, t, true, 512, u64::from(d * 100 + t)).unwrap()
                };
                for eps in [0.3, 1.5] {
                    let v = verify_ldp(&Mechanism::Coco(coco(d, s, eps, t)), &fam).unwrap();
                    assert!(v <= eps + 1e-9, "d={d} s={s} t={t} eps={eps}: {v}");
                }
            }
        }
    }
}

#[test]
fn overwrite_probability_bounded_on_grid() {
    let limit = (-1f64).exp();
    for s in 1..=32u32 {
        for t in ((2 * s + 2)..=8 * s).step_by(2) {
            let p = overwrite_probability(s, t);
            assert!((0.0..=limit).contains(&p), "s={s} t={t}: {p}");
        }
    }
}

#[test]
fn rates_cover_the_zero_budget_limit() {
    for s in [1, 3, 9] {
        let t = 2 * s + 4;
        let r = collision_rates(s, 0.0, t).unwrap();
        assert!((r.p_t - r.p_o).abs() < 1e-15);
    }
}

#[test]
fn mixture_decomposition_properties() {
    for eps in [0.4, 1.0, 2.5] {
        let p = collision(4, 2, eps, 6);
        let mech = Mechanism::Collision(p);
        let fam = HashFamily::seeded(4, 6, false, 300, 17).unwrap();
        let inputs = all_inputs(4, 2);
        for (x, xp) in inputs.iter().zip(inputs.iter().rev()).take(8) {
            let r1 = enumerate_distribution(&mech, x, &fam).unwrap();
            let r1p = enumerate_distribution(&mech, xp, &fam).unwrap();
            let mix = mixture_decompose(&r1, &r1p, eps).unwrap();
            assert!(mix.reconstruction_error(&r1, &r1p) < 1e-12);
            assert!(mix.q1_star.probs.iter().all(|&v| v >= 0.0));
            let overlap: f64 = mix.q1.probs.iter().zip(&mix.q1_prime.probs).map(|(a, b)| a.min(*b)).sum();
            assert_eq!(overlap, 0.0);
            for q in [&mix.q1, &mix.q1_prime, &mix.q1_star] {
                if mix.beta > 0.0 {
                    assert!(q.is_valid(1e-9));
                }
            }
        }
    }
}

#[test]
fn mixture_alpha_matches_overlap_formula_without_conflicts() {
    let eps = 1.2;
    let p = collision(4, 2, eps, 8);
    let mech = Mechanism::Collision(p);
    let inputs = all_inputs(4, 2);
    // Keep only tables where each input's events land in distinct buckets.
    let seeded = HashFamily::seeded(4, 8, false, 2000, 3).unwrap();
    let (x, xp) = (&inputs[0], &inputs[inputs.len() - 1]);
    let mut members = Vec::new();
    seeded
        .try_for_each(|_, _, h| {
            let distinct = |v: &coco_ldp::TernaryVector| {
                let mut b: Vec<u32> = v.events().map(|e| h.bucket(e)).collect();
                b.sort_unstable();
                b.dedup();
                b.len() == v.s() as usize
            };
            if distinct(x) && distinct(xp) {
                members.push(h.clone());
            }
            Ok(())
        })
        .unwrap();
    let w = 1.0 / members.len() as f64;
    let fam = HashFamily::explicit(
        coco_ldp::oracle::FamilyLabel::Conditional("conflict-free".into()),
        4,
        8,
        members.into_iter().map(|h| (w, h)).collect(),
    )
    .unwrap();
    let r1 = enumerate_distribution(&mech, x, &fam).unwrap();
    let r1p = enumerate_distribution(&mech, xp, &fam).unwrap();
    let mix = mixture_decompose(&r1, &r1p, eps).unwrap();
    let direct = collision_overlap_alpha(&p, x, xp, &fam).unwrap();
    assert!((mix.alpha() - direct).abs() < 1e-12, "{} vs {direct}", mix.alpha());
}
