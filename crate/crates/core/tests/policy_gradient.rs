use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rumorsel_core::policy::{
    objective_at, objective_gradient, reinforce_update, sample_action, Action, ClaimEpisode, Level,
    OptimizerState, PolicyParams, Step,
};
use rumorsel_core::reward::Reward;
use rumorsel_core::state::PolicyState;

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> PolicyState {
    PolicyState::from_raw((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn random_step(rng: &mut ChaCha8Rng, params: &PolicyParams, level: Level) -> Step {
    let state = random_state(rng, params.input_dim());
    let mut step = sample_action(params, state, level, rng).unwrap();
    step.reward = Some(Reward::try_from(rng.random_range(-1i8..=1)).unwrap());
    step
}

fn random_episodes(rng: &mut ChaCha8Rng, params: &PolicyParams) -> Vec<ClaimEpisode> {
    (0..rng.random_range(1..4))
        .map(|_| ClaimEpisode {
            claim_step: random_step(rng, params, Level::Claim),
            post_steps: (0..rng.random_range(0..5)).map(|_| random_step(rng, params, Level::Post)).collect(),
        })
        .collect()
}

/// Central differences of the objective, perturbing one parameter at a time.
fn finite_difference(params: &PolicyParams, episodes: &[ClaimEpisode], h: f64) -> Vec<f64> {
    let base = params.flat();
    (0..base.len())
        .map(|i| {
            let mut p = params.clone();
            let mut x = base.clone();
            x[i] = base[i] + h;
            p.set_flat(&x);
            let up = objective_at(&p, episodes, 0.0).unwrap();
            x[i] = base[i] - h;
            p.set_flat(&x);
            let down = objective_at(&p, episodes, 0.0).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn near_kink(params: &PolicyParams, episodes: &[ClaimEpisode]) -> bool {
    let n = params.input_dim();
    episodes.iter().flat_map(|e| std::iter::once(&e.claim_step).chain(&e.post_steps)).any(|s| {
        params.w1().chunks_exact(n).any(|row| {
            let z: f64 = row.iter().zip(s.state.as_slice()).map(|(w, x)| w * x).sum();
            z.abs() < 1e-4
        })
    })
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 30 {
        let params = PolicyParams::init(12, 6, rng.random());
        let episodes = random_episodes(&mut rng, &params);
        if near_kink(&params, &episodes) {
            continue;
        }
        let analytic = objective_gradient(&params, &episodes, 0.0).unwrap();
        let numeric = finite_difference(&params, &episodes, 1e-5);
        let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            continue;
        }
        let err = analytic.iter().zip(&numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        assert!(err < 1e-5, "relative error {err}");
        checked += 1;
    }
}

#[test]
fn zero_rewards_leave_params_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = PolicyParams::init(12, 6, 1);
    let mut episodes = random_episodes(&mut rng, &params);
    for e in &mut episodes {
        e.claim_step.reward = Some(Reward::Zero);
        e.post_steps.iter_mut().for_each(|s| s.reward = Some(Reward::Zero));
    }
    assert!(objective_gradient(&params, &episodes, 0.0).unwrap().iter().all(|&g| g == 0.0));
    let before = params.clone();
    let mut opt = OptimizerState::new(params.num_params(), 10);
    let out = reinforce_update(&mut params, &mut opt, &episodes, 0.0).unwrap();
    assert!(out.applied);
    assert_eq!(params, before);
}

#[test]
fn rewarded_retain_increases_retain_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = PolicyParams::init(12, 6, 2);
    let state = loop {
        let s = random_state(&mut rng, 12);
        if objective_gradient(
            &params,
            &[ClaimEpisode {
                claim_step: Step { state: s.clone(), action: Action::Retain, logprob: 0.0, p_retain: 0.0, level: Level::Claim, reward: Some(Reward::Positive) },
                post_steps: vec![],
            }],
            0.0,
        )
        .unwrap()
        .iter()
        .any(|&g| g != 0.0)
        {
            break s;
        }
    };
    let p0 = params.forward(&state).unwrap();
    let ep = ClaimEpisode {
        claim_step: Step {
            state: state.clone(),
            action: Action::Retain,
            logprob: p0.ln(),
            p_retain: p0,
            level: Level::Claim,
            reward: Some(Reward::Positive),
        },
        post_steps: vec![],
    };
    let mut opt = OptimizerState::new(params.num_params(), 1);
    reinforce_update(&mut params, &mut opt, &[ep], 0.0).unwrap();
    assert!(params.forward(&state).unwrap() > p0);
}

#[test]
fn forced_retains_with_unit_reward_never_decrease() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut params = PolicyParams::init(12, 8, 3);
    let states: Vec<PolicyState> = (0..5).map(|_| random_state(&mut rng, 12)).collect();
    let mut opt = OptimizerState::new(params.num_params(), 50);
    opt.learning_rate = 1e-3;
    let mut last: Vec<f64> = states.iter().map(|s| params.forward(s).unwrap()).collect();
    for _ in 0..50 {
        let episodes: Vec<ClaimEpisode> = states
            .iter()
            .map(|s| ClaimEpisode {
                claim_step: Step { state: s.clone(), action: Action::Retain, logprob: 0.0, p_retain: 0.0, level: Level::Claim, reward: Some(Reward::Positive) },
                post_steps: vec![],
            })
            .collect();
        reinforce_update(&mut params, &mut opt, &episodes, 0.0).unwrap();
        let now: Vec<f64> = states.iter().map(|s| params.forward(s).unwrap()).collect();
        for (a, b) in last.iter().zip(&now) {
            assert!(b >= &(a - 1e-12), "{a} -> {b}");
        }
        last = now;
    }
}

#[test]
fn sampled_logprobs_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = PolicyParams::init(12, 6, 4);
    for _ in 0..200 {
        let s = random_state(&mut rng, 12);
        let step = sample_action(&params, s.clone(), Level::Post, &mut rng).unwrap();
        assert!(step.logprob <= 0.0);
        assert!((step.logprob - params.log_prob(&s, step.action).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn near_certain_retain() {
    // single input, w1=[40], w2=[1] → logit 40·s; s=0.7 gives p ≈ 1 − 7e-13
    let params = PolicyParams::from_parts(1, 1, vec![40.0], vec![1.0]).unwrap();
    let s = PolicyState::from_raw(vec![0.7]);
    assert!(1.0 - params.forward(&s).unwrap() < 1e-11);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let retains = (0..10_000)
        .filter(|_| sample_action(&params, s.clone(), Level::Post, &mut rng).unwrap().action == Action::Retain)
        .count();
    assert!(retains >= 9_999);
    let mut a = ChaCha8Rng::seed_from_u64(77);
    let mut b = ChaCha8Rng::seed_from_u64(77);
    let p = PolicyParams::init(12, 6, 9);
    for _ in 0..20 {
        let st = random_state(&mut a, 12);
        let _ = random_state(&mut b, 12);
        assert_eq!(
            sample_action(&p, st.clone(), Level::Post, &mut a).unwrap().action,
            sample_action(&p, st, Level::Post, &mut b).unwrap().action
        );
    }
}
