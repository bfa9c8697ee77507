use nalgebra::DMatrix;
use rand::SeedableRng;

use riskvol::env::{
    gen_gbm_prices, two_cycle_mdp, Action, Environment, PortfolioConfig, PortfolioEnv, SimRng, TabularEnv, TradingConfig,
    TradingEnv, TwoCycleStates as S,
};
use riskvol::exact::perf_stats;
use riskvol::parallel::Execution;
use riskvol::policy::Policy;
use riskvol::sampling::collect;

fn always(a: usize) -> DMatrix<f64> {
    DMatrix::from_fn(5, 2, |_, b| if a == b { 1.0 } else { 0.0 })
}

#[test]
fn two_cycle_means_match_closed_forms() {
    for &(eps, gamma) in &[(0.2, 0.9), (0.0, 0.5), (0.7, 0.99)] {
        let mdp = two_cycle_mdp(eps, gamma).unwrap();
        let a = perf_stats(&mdp, &always(S::ACTION_A), 0.0).unwrap();
        let b = perf_stats(&mdp, &always(S::ACTION_B), 0.0).unwrap();
        assert!((a.j - 0.5 * eps / (1.0 + gamma)).abs() < 1e-12);
        assert!((b.j - eps / (1.0 + gamma)).abs() < 1e-12);
        assert!(b.nu2 > a.nu2);
    }
}

#[test]
fn two_cycle_rollouts_alternate_rewards() {
    let mdp = two_cycle_mdp(0.2, 0.9).unwrap();
    let env = TabularEnv::new(mdp, 6).unwrap();
    let mut theta = nalgebra::DVector::zeros(10);
    for s in 0..5 {
        theta[S::ACTION_B * 5 + s] = 50.0;
    }
    let policy = Policy::softmax(2, 5).unwrap().with_theta(theta).unwrap();
    let batch = collect(&env, &policy, 3, 6, 0.9, 0, Execution::Sequential).unwrap();
    for t in &batch.trajectories {
        for (i, r) in t.rewards.iter().enumerate() {
            let expected = if i % 2 == 0 { 10.0 * 0.9 + 0.2 } else { -10.0 };
            assert!((r - expected).abs() < 1e-12, "{:?}", t.rewards);
        }
    }
}

#[test]
fn portfolio_conserves_value_under_random_orders() {
    let config = PortfolioConfig::default();
    let mut env = PortfolioEnv::new(config.clone()).unwrap();
    let mut rng = SimRng::seed_from_u64(3);
    let policy = Policy::softmax(config.max_order + 1, env.feature_dim()).unwrap();
    let (mut matured, mut defaulted) = (0usize, 0usize);
    for _ in 0..200 {
        let mut phi = env.reset(&mut rng);
        for _ in 0..config.horizon {
            let a = policy.sample(&phi, &mut rng).unwrap();
            let step = env.step(a, &mut rng).unwrap();
            let l = env.last_ledger();
            let expected = l.total_before + l.interest + l.payout - l.matured_book;
            assert!((l.total_after - expected).abs() < 1e-12, "{l:?}");
            assert!(env.liquid() >= -1e-12);
            assert!(step.reward.abs() <= env.r_max());
            if l.matured_book > 0.0 {
                matured += 1;
                defaulted += usize::from(l.payout == 0.0);
            }
            phi = step.features;
        }
    }
    let rate = defaulted as f64 / matured as f64;
    let se = (config.p_risk * (1.0 - config.p_risk) / matured as f64).sqrt();
    assert!((rate - config.p_risk).abs() < 4.0 * se, "default rate {rate} over {matured}");
}

#[test]
fn trading_rewards_follow_prices_and_fees() {
    let prices = gen_gbm_prices(5, 400, 2e-4, 0.01, 100.0).unwrap();
    let config = TradingConfig::default();
    let mut env = TradingEnv::new(&prices, config.clone()).unwrap();
    let mut rng = SimRng::seed_from_u64(9);
    for episode in 0..20 {
        env.reset(&mut rng);
        let mut prev = 0.0;
        for t in 0..config.episode_len {
            let idx = (episode + t) % 3;
            let before = env.cursor();
            let step = env.step(Action::Discrete(idx), &mut rng).unwrap();
            let pos = TradingEnv::position_of(idx);
            let expected = pos * (env.price(before + 1) - env.price(before)) - config.fee * (pos - prev).abs();
            assert_eq!(step.reward, expected);
            assert!(step.reward.abs() <= env.r_max());
            assert_eq!(step.done, t + 1 == config.episode_len);
            prev = pos;
        }
    }
}
