use nalgebra::DVector;

use crate::env::Environment;
use crate::error::{ensure, Result};
use crate::parallel::map_slice;
use crate::policy::Policy;
use crate::sampling::{collect, discounted_return};

use super::{check_compat, check_finite, Recorder, TrainConfig, TrainLog};

/// REINFORCE on per-trajectory weights `w_i = G_i − λ(G_i − Ḡ)²`, where
/// `G_i` is the normalized discounted return `k Σ γ^t r_t` (on the same scale
/// as `J` and `ν²`) and `Ḡ` the batch mean: a two-moment
/// mean-variance baseline that penalizes the spread of returns, not of
/// rewards. The weights are centered and divided by their batch standard
/// deviation, which leaves the direction of each step unchanged and scales
/// its length to the spread of returns.
pub fn mean_variance_pg<E: Environment>(env: &E, policy0: &Policy, config: &TrainConfig) -> Result<(Policy, TrainLog)> {
    config.validate()?;
    check_compat(env, policy0)?;
    ensure!(config.batch >= 2, "the mean-variance baseline needs a batch of at least 2 trajectories");
    let mut policy = policy0.clone();
    let mut rec = Recorder::new();
    for iter in 0..config.iterations {
        let batch = collect(env, &policy, config.batch, config.horizon, config.gamma, config.iteration_seed(iter, 0), config.exec)?;
        let k = batch.norm();
        let returns: Vec<f64> = batch.trajectories.iter().map(|t| k * discounted_return(t, batch.gamma)).collect();
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        let terms = map_slice(&batch.trajectories, config.exec, |traj| -> Result<DVector<f64>> {
            let mut s = DVector::zeros(policy.dim());
            for (phi, &a) in traj.features.iter().zip(&traj.actions) {
                s += policy.score(phi, a)?;
            }
            Ok(s)
        });
        let weights: Vec<f64> = returns.iter().map(|g| g - config.lambda * (g - mean) * (g - mean)).collect();
        let n = weights.len() as f64;
        let w_mean = weights.iter().sum::<f64>() / n;
        let w_sd = (weights.iter().map(|w| (w - w_mean) * (w - w_mean)).sum::<f64>() / n).sqrt();
        let mut grad = DVector::zeros(policy.dim());
        if w_sd > 0.0 {
            for (term, w) in terms.into_iter().zip(&weights) {
                grad.axpy((w - w_mean) / w_sd, &term?, 1.0);
            }
        }
        grad /= batch.len() as f64;
        check_finite(&grad, "gradient", iter)?;
        let next = policy.clone().with_theta(policy.theta() + &grad * config.alpha)?;
        let kl = if config.alpha == 0.0 { 0.0 } else { policy.kl_mean(&next, &batch.visited_features())? };
        rec.push(iter, &batch, config.lambda, grad.norm(), kl, config.alpha);
        policy = next;
    }
    Ok((policy, rec.log))
}
