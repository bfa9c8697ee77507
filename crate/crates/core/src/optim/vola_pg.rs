use crate::env::Environment;
use crate::error::Result;
use crate::policy::Policy;
use crate::sampling::collect;

use super::{check_compat, check_finite, estimate_gradient, j_for_gradient, Recorder, TrainConfig, TrainLog};

/// Plain gradient ascent on the sampled mean-volatility gradient with a
/// fixed step `config.alpha`.
pub fn vola_pg<E: Environment>(env: &E, policy0: &Policy, config: &TrainConfig) -> Result<(Policy, TrainLog)> {
    config.validate()?;
    check_compat(env, policy0)?;
    let mut policy = policy0.clone();
    let mut rec = Recorder::new();
    for iter in 0..config.iterations {
        let batch = collect(env, &policy, config.batch, config.horizon, config.gamma, config.iteration_seed(iter, 0), config.exec)?;
        let j_hat = j_for_gradient(env, &policy, config, &batch, iter)?;
        let grad = estimate_gradient(config, &batch, &policy, j_hat)?;
        check_finite(&grad.vector, "gradient", iter)?;
        let theta = policy.theta() + &grad.vector * config.alpha;
        check_finite(&theta, "parameter vector", iter)?;
        let next = policy.clone().with_theta(theta)?;
        let kl = if config.alpha == 0.0 { 0.0 } else { policy.kl_mean(&next, &batch.visited_features())? };
        rec.push(iter, &batch, config.lambda, grad.vector.norm(), kl, config.alpha);
        policy = next;
    }
    Ok((policy, rec.log))
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::env::{TabularEnv, TabularMdp};
    use crate::gradients::GradForm;

    fn bandit() -> TabularEnv {
        let mdp = TabularMdp::new(
            1,
            2,
            vec![1.0, 1.0],
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            0.9,
            DVector::from_element(1, 1.0),
            1.0,
        )
        .unwrap();
        TabularEnv::new(mdp, 5).unwrap()
    }

    #[test]
    fn risk_neutral_bandit_finds_the_better_arm() {
        let env = bandit();
        let config = TrainConfig {
            gamma: 0.9,
            horizon: 5,
            batch: 20,
            iterations: 200,
            alpha: 0.5,
            ..Default::default()
        };
        let (policy, log) = vola_pg(&env, &Policy::softmax(2, 1).unwrap(), &config).unwrap();
        assert_eq!(log.records.len(), 200);
        assert!(policy.probabilities(&[1.0]).unwrap()[0] > 0.99);
    }

    #[test]
    fn zero_step_keeps_parameters() {
        let env = bandit();
        let config = TrainConfig { gamma: 0.9, horizon: 5, batch: 10, iterations: 3, alpha: 0.0, ..Default::default() };
        let p0 = Policy::softmax(2, 1).unwrap().with_theta(DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let (policy, log) = vola_pg(&env, &p0, &config).unwrap();
        assert_eq!(policy.theta(), p0.theta());
        assert_eq!(log.records.len(), 3);
        assert!(log.records.iter().all(|r| r.kl_step == 0.0));
    }

    #[test]
    fn same_seed_same_run() {
        let env = bandit();
        let config = TrainConfig {
            gamma: 0.9,
            horizon: 5,
            batch: 10,
            iterations: 5,
            alpha: 0.3,
            lambda: 0.5,
            estimator: GradForm::Pgt,
            ..Default::default()
        };
        let p0 = Policy::softmax(2, 1).unwrap();
        let (a, la) = vola_pg(&env, &p0, &config).unwrap();
        let (b, lb) = vola_pg(&env, &p0, &TrainConfig { exec: crate::parallel::Execution::Sequential, ..config }).unwrap();
        assert_eq!(a.theta(), b.theta());
        assert_eq!(la.records.iter().map(|r| r.eta_hat).collect::<Vec<_>>(), lb.records.iter().map(|r| r.eta_hat).collect::<Vec<_>>());
    }
}
