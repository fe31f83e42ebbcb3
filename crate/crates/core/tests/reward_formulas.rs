use crflab_core::{
    annealing_coeff, cos_fn, cosine_reward, crf_reward, difficulty_coeff, kimi_rewards,
    outcome_reward, shape_group, weighted_sum_reward, ConcisenessScore, CosineParams,
    OutcomeReward, RewardConfig, RewardKind,
};
use proptest::prelude::*;
use std::f64::consts::E;

const TOL: f64 = 1e-12;

// Straight transcriptions of the reward definitions, kept separate from the crate code.
mod oracle {
    pub fn crf(o: f64, c: f64, a: f64, s: f64, d: f64) -> f64 {
        o * (1.0 + a * c * (s + d))
    }
    pub fn weighted(o: f64, c: f64, a: f64, s: f64, d: f64) -> f64 {
        o + a * c * (s + d)
    }
    pub fn anneal(step: u64, t: u64) -> f64 {
        (-(step as f64) / t as f64).exp()
    }
    pub fn difficulty(n_correct: usize, g: usize) -> f64 {
        (n_correct as f64 / g as f64).exp()
    }
    pub fn cosine(t: f64, big_t: f64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (1.0 + (t * std::f64::consts::PI / big_t).cos()) / 2.0
    }
}

fn c(v: f64) -> ConcisenessScore {
    ConcisenessScore::snap(v).unwrap()
}

#[test]
fn hand_values() {
    let cases: [(f64, f64); 3] = [
        (annealing_coeff(0, 100).unwrap(), 1.0),
        (annealing_coeff(100, 100).unwrap(), 0.367_879_441_171_442_3),
        (annealing_coeff(50, 100).unwrap(), 0.606_530_659_712_633_4),
    ];
    for (got, want) in cases {
        assert!((got - want).abs() < TOL, "{got} vs {want}");
    }
    let g = |n: usize| -> Vec<OutcomeReward> { (0..8).map(|i| outcome_reward(i < n)).collect() };
    assert!((difficulty_coeff(&g(8)).unwrap() - E).abs() < TOL);
    assert!((difficulty_coeff(&g(0)).unwrap() - 1.0).abs() < TOL);
    assert!((difficulty_coeff(&g(4)).unwrap() - 1.648_721_270_700_128_2).abs() < TOL);

    let no = outcome_reward(false);
    let yes = outcome_reward(true);
    assert_eq!(crf_reward(no, c(0.9), 1.0, 1.0, E).unwrap(), 0.0);
    assert_eq!(crf_reward(yes, c(0.3), 0.0, 0.7, 2.0).unwrap(), 1.0);
    assert!((crf_reward(yes, c(0.5), 1.0, 0.5, 2.0).unwrap() - 2.25).abs() < TOL);
    assert!((weighted_sum_reward(no, c(0.9), 1.0, 1.0, E).unwrap() - 3.346_453_645_613_140_5).abs() < TOL);
    assert_eq!(weighted_sum_reward(yes, c(0.3), 0.0, 0.7, 2.0).unwrap(), 1.0);
    assert!((weighted_sum_reward(yes, c(0.5), 1.0, 0.5, 2.0).unwrap() - 2.25).abs() < TOL);

    assert!((cos_fn(0.0, 40.0, -1.5, 3.0).unwrap() - 3.0).abs() < TOL);
    assert!((cos_fn(40.0, 40.0, -1.5, 3.0).unwrap() + 1.5).abs() < TOL);
    assert!((cos_fn(20.0, 40.0, 0.0, 2.0).unwrap() - 1.0).abs() < TOL);

    let p = CosineParams::default();
    assert!((cosine_reward(yes, p.l_max, &p, 1.5).unwrap() - (1.0 + 1.5 * p.r_exceed)).abs() < TOL);
    assert!((cosine_reward(yes, 1, &p, 1.0).unwrap() - 3.0).abs() < 1e-4);
    assert_eq!(cosine_reward(no, p.l_max / 2, &p, 0.0).unwrap(), 0.0);

    let k = kimi_rewards(&[yes, yes, no, yes], &[10, 50, 10, 30], 0.8).unwrap();
    assert!((k[0] - 1.4).abs() < TOL);
    assert!((k[1] - 0.6).abs() < TOL);
    assert_eq!(k[2], 0.0);
    assert!((k[3] - 1.0).abs() < TOL);

    let all = [yes; 8];
    let ones = [c(1.0); 8];
    let lens = [40u32; 8];
    let crf = shape_group(&all, &ones, &lens, &RewardConfig::new(RewardKind::Crf), 0).unwrap();
    for v in crf {
        assert!((v - 4.718_281_828_459_045).abs() < TOL);
    }
    let bare = RewardConfig::new(RewardKind::CrfNoAnnealNoDifficulty);
    let v = shape_group(&[yes], &[c(0.6)], &[10], &bare, 3).unwrap();
    assert!((v[0] - 1.6).abs() < TOL);
    let mixed = [yes, no, yes];
    let out = shape_group(&mixed, &[c(0.2), c(0.9), c(1.0)], &[1, 2, 3], &RewardConfig::new(RewardKind::Outcome), 7)
        .unwrap();
    assert_eq!(out, vec![1.0, 0.0, 1.0]);
}

#[test]
fn gate_holds_on_fuzzed_inputs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let no = outcome_reward(false);
    for _ in 0..10_000 {
        let score = ConcisenessScore::from_tenths(rng.gen_range(1..=10)).unwrap();
        let alpha = rng.gen_range(0.0..10.0);
        let s = rng.gen_range(E.recip()..=1.0);
        let d = rng.gen_range(1.0..=E);
        assert_eq!(crf_reward(no, score, alpha, s, d).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn rewards_match_oracle(
        correct in any::<bool>(),
        tenths in 1u8..=10,
        alpha in 0.0f64..5.0,
        step in 0u64..1000,
        horizon in 1u64..1000,
        g in 2usize..17,
        n_frac in 0.0f64..=1.0,
    ) {
        let step = step.min(horizon);
        let n_correct = ((g as f64) * n_frac).round() as usize;
        let outcomes: Vec<OutcomeReward> = (0..g).map(|i| outcome_reward(i < n_correct)).collect();
        let s = annealing_coeff(step, horizon).unwrap();
        let d = difficulty_coeff(&outcomes).unwrap();
        prop_assert!((s - oracle::anneal(step, horizon)).abs() < TOL);
        prop_assert!((d - oracle::difficulty(n_correct, g)).abs() < TOL);
        let o = outcome_reward(correct);
        let cv = tenths as f64 / 10.0;
        let score = ConcisenessScore::from_tenths(tenths).unwrap();
        let want = oracle::crf(o.value(), cv, alpha, s, d);
        prop_assert!((crf_reward(o, score, alpha, s, d).unwrap() - want).abs() < 1e-12 * want.abs().max(1.0));
        let want = oracle::weighted(o.value(), cv, alpha, s, d);
        prop_assert!((weighted_sum_reward(o, score, alpha, s, d).unwrap() - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn cos_fn_matches_oracle(frac in 0.0f64..=1.0, horizon in 1.0f64..1e4, lo in -10.0f64..10.0, hi in -10.0f64..10.0) {
        let t = frac * horizon;
        let got = cos_fn(t, horizon, lo, hi).unwrap();
        prop_assert!((got - oracle::cosine(t, horizon, lo, hi)).abs() < 1e-12);
        prop_assert!(got >= lo.min(hi) - 1e-12 && got <= lo.max(hi) + 1e-12);
        prop_assert!((oracle::cosine(horizon / 2.0, horizon, lo, hi) - (lo + hi) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn coefficient_ranges(step in 0u64..100_000, horizon in 1u64..100_000, g in 1usize..64, k in 0usize..64) {
        let step = step % (horizon + 1);
        let s = annealing_coeff(step, horizon).unwrap();
        prop_assert!((E.recip()..=1.0).contains(&s));
        let k = k.min(g);
        let outcomes: Vec<OutcomeReward> = (0..g).map(|i| outcome_reward(i < k)).collect();
        let d = difficulty_coeff(&outcomes).unwrap();
        prop_assert!((1.0..=E).contains(&d));
    }

    #[test]
    fn kimi_lambda_bounds(
        lens in prop::collection::vec(1u32..2000, 2..16),
        flags in prop::collection::vec(any::<bool>(), 16),
        alpha in 0.0f64..3.0,
    ) {
        let outcomes: Vec<OutcomeReward> = lens.iter().zip(&flags).map(|(_, &f)| outcome_reward(f)).collect();
        let r = kimi_rewards(&outcomes, &lens, alpha).unwrap();
        for (v, o) in r.iter().zip(&outcomes) {
            let f = (v - o.value()) / if alpha > 0.0 { alpha } else { 1.0 };
            if alpha > 0.0 {
                prop_assert!((-0.5 - 1e-12..=0.5 + 1e-12).contains(&f));
                if !o.correct() {
                    prop_assert!(f <= 1e-12);
                }
            }
        }
    }
}
