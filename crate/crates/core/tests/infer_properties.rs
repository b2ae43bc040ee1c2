use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zeta_core::infer::{aggregate, AggregationMode, InferError};

const STEP: f64 = 1e-3;
const INSTANCES: usize = 1000;
const MODES: [AggregationMode; 2] = [AggregationMode::Pooled, AggregationMode::Paired];

struct Instance {
    pos: Vec<f64>,
    neg: Vec<f64>,
    tau: f64,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let m = rng.gen_range(1..=5);
    let mut draw = || {
        (0..m)
            .map(|_| rng.gen_range(-0.99..0.99))
            .collect::<Vec<f64>>()
    };
    let pos = draw();
    let neg = draw();
    Instance {
        pos,
        neg,
        tau: rng.gen_range(0.2..2.0),
    }
}

fn possibility(pos: &[f64], neg: &[f64], tau: f64, mode: AggregationMode) -> f64 {
    aggregate(pos, neg, tau, mode).unwrap().possibility
}

#[test]
fn single_observation_steps_move_possibility_strictly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mode in MODES {
        for _ in 0..INSTANCES {
            let x = instance(&mut rng);
            let base = possibility(&x.pos, &x.neg, x.tau, mode);
            let i = rng.gen_range(0..x.pos.len());

            let mut up = x.pos.clone();
            up[i] += STEP;
            assert!(
                possibility(&up, &x.neg, x.tau, mode) > base,
                "{mode}: raising s+ must raise"
            );

            let mut up_neg = x.neg.clone();
            up_neg[i] += STEP;
            assert!(
                possibility(&x.pos, &up_neg, x.tau, mode) < base,
                "{mode}: raising s- must lower"
            );
        }
    }
}

#[test]
fn permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..INSTANCES {
        let x = instance(&mut rng);
        let pooled = possibility(&x.pos, &x.neg, x.tau, AggregationMode::Pooled);
        let mut p = x.pos.clone();
        let mut n = x.neg.clone();
        p.shuffle(&mut rng);
        n.shuffle(&mut rng);
        let shuffled = possibility(&p, &n, x.tau, AggregationMode::Pooled);
        assert!((pooled - shuffled).abs() <= 1e-12);

        let paired = possibility(&x.pos, &x.neg, x.tau, AggregationMode::Paired);
        let mut pairs: Vec<(f64, f64)> = x.pos.iter().copied().zip(x.neg.iter().copied()).collect();
        pairs.shuffle(&mut rng);
        let (p, n): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let shuffled = possibility(&p, &n, x.tau, AggregationMode::Paired);
        assert!((paired - shuffled).abs() <= 1e-12);
    }
}

#[test]
fn common_shift_cancels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for mode in MODES {
        for _ in 0..INSTANCES {
            let x = instance(&mut rng);
            let c = rng.gen_range(-0.5..0.5);
            let shift = |v: &[f64]| v.iter().map(|s| s + c).collect::<Vec<_>>();
            let a = possibility(&x.pos, &x.neg, x.tau, mode);
            let b = possibility(&shift(&x.pos), &shift(&x.neg), x.tau, mode);
            assert!((a - b).abs() <= 1e-9, "{mode}: {a} vs {b}");
        }
    }
}

#[test]
fn bounds_and_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for mode in MODES {
        for _ in 0..INSTANCES {
            let x = instance(&mut rng);
            let p = possibility(&x.pos, &x.neg, x.tau, mode);
            assert!(p > 0.0 && p < 1.0);
            assert_eq!(possibility(&x.pos, &x.pos, x.tau, mode), 0.5);
        }
    }
}

#[test]
fn pooled_condition_ranking_ignores_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..INSTANCES {
        let conditions: Vec<Instance> = (0..rng.gen_range(2..8))
            .map(|_| instance(&mut rng))
            .collect();
        let rank = |tau: f64| {
            let mut idx: Vec<usize> = (0..conditions.len()).collect();
            let p: Vec<f64> = conditions
                .iter()
                .map(|c| possibility(&c.pos, &c.neg, tau, AggregationMode::Pooled))
                .collect();
            idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            idx
        };
        let margin = |c: &Instance| {
            c.pos.iter().sum::<f64>() / c.pos.len() as f64
                - c.neg.iter().sum::<f64>() / c.neg.len() as f64
        };
        let mut by_margin: Vec<usize> = (0..conditions.len()).collect();
        by_margin.sort_by(|&a, &b| {
            margin(&conditions[b])
                .total_cmp(&margin(&conditions[a]))
                .then(a.cmp(&b))
        });
        for tau in [0.2, 0.5, 1.0, 1.9] {
            assert_eq!(rank(tau), by_margin, "tau {tau}");
        }
    }
}

#[test]
fn paired_needs_equal_lengths() {
    let err = aggregate(&[0.1, 0.2], &[0.3], 0.5, AggregationMode::Paired).unwrap_err();
    assert!(matches!(err, InferError::PairingUnavailable(_)));
    assert!(aggregate(&[0.1, 0.2], &[0.3], 0.5, AggregationMode::Pooled).is_ok());
}
