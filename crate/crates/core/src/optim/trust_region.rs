use nalgebra::{DMatrix, DVector};

use crate::env::{Environment, TabularMdp};
use crate::error::{ensure, Error, Result};
use crate::exact::{occupancy, one_hot_features, perf_stats, value_tables};
use crate::gradients::transformed_rewards;
use crate::policy::Policy;
use crate::sampling::{collect, Batch, Trajectory};

use super::exp_utility::exp_utility_transform;
use super::{check_compat, check_finite, j_for_gradient, Recorder, TrainConfig, TrainLog, TrainRecord, TrustRegion};

/// Relative CG residual above which the search direction is discarded.
const CG_RESIDUAL_LIMIT: f64 = 0.1;
const BASELINE_RIDGE: f64 = 1e-8;
const PENALTY_INNER_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖`.
    pub rel_residual: f64,
}

/// Conjugate gradients for `A x = b` with `A` symmetric positive definite and
/// given only through products. Starts from `x = 0`.
pub fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    b: &DVector<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<CgResult> {
    let b_norm = b.norm();
    let mut x = DVector::zeros(b.len());
    if b_norm == 0.0 {
        return Ok(CgResult { x, iterations: 0, rel_residual: 0.0 });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    while iterations < max_iters && rr.sqrt() > tol * b_norm {
        let ap = apply(&p)?;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::numerical("conjugate gradient met a non-positive curvature direction"));
        }
        let step = rr / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rr_new = r.dot(&r);
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
        iterations += 1;
    }
    let residual = (b - apply(&x)?).norm() / b_norm;
    Ok(CgResult { x, iterations, rel_residual: residual })
}

#[derive(Debug, Clone, Copy)]
enum RewardTransform {
    Volatility,
    ExpUtility { c: f64 },
}

/// Trust Region Volatility Optimization.
///
/// With [`TrustRegion::KlConstraint`] each iteration estimates advantages of
/// the transformed reward `R − λ(R − Ĵ)²` (reward-to-go minus a least-squares
/// linear value baseline, then standardized), solves `F x = g` by CG and
/// backtracks along `x` until the importance-sampled surrogate improves and
/// the mean sampled KL stays within the radius.
///
/// With [`TrustRegion::Penalty`] the environment must be tabular; each
/// iteration maximizes `Σ d_π π̃ A^λ − (2εγ/(1−γ)) KL^max(π, π̃)` with exact
/// advantages and `ε = max |A^λ|`, and the log carries exact statistics.
pub fn trvo<E: Environment>(env: &E, policy0: &Policy, config: &TrainConfig) -> Result<(Policy, TrainLog)> {
    config.validate()?;
    check_compat(env, policy0)?;
    match config.trust_region {
        TrustRegion::KlConstraint { radius } => practical(env, policy0, config, radius, RewardTransform::Volatility),
        TrustRegion::Penalty => {
            let mdp = env
                .tabular()
                .ok_or_else(|| Error::validation("penalty-mode TRVO needs a tabular environment"))?;
            penalty(mdp, policy0, config)
        }
    }
}

/// TRVO with `λ = 0` on the rewards `(1 − e^{−cR})/c`. Logged statistics use
/// the raw rewards with `λ = c/2`.
pub fn trpo_exp<E: Environment>(env: &E, policy0: &Policy, config: &TrainConfig) -> Result<(Policy, TrainLog)> {
    config.validate()?;
    check_compat(env, policy0)?;
    match config.trust_region {
        TrustRegion::KlConstraint { radius } => {
            practical(env, policy0, config, radius, RewardTransform::ExpUtility { c: config.c })
        }
        TrustRegion::Penalty => Err(Error::validation("TRPO-exp supports only the KL-constrained trust region")),
    }
}

/// One flattened time step of a batch.
struct StepSample<'a> {
    features: &'a [f64],
    traj: &'a Trajectory,
    t: usize,
}

fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Ridge least-squares fit of `targets` on `features`; returns fitted values.
fn linear_baseline(features: &[&[f64]], targets: &[f64]) -> Result<Vec<f64>> {
    let d = features[0].len();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (phi, &y) in features.iter().zip(targets) {
        let f = DVector::from_column_slice(phi);
        gram.ger(1.0, &f, &f, 1.0);
        rhs.axpy(y, &f, 1.0);
    }
    let scale = gram.trace() / d as f64;
    for i in 0..d {
        gram[(i, i)] += BASELINE_RIDGE * scale.max(1.0);
    }
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("value baseline system is not positive definite"))?
        .solve(&rhs);
    Ok(features.iter().map(|phi| phi.iter().zip(w.iter()).map(|(a, b)| a * b).sum()).collect())
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for v in x.iter_mut() {
        *v -= mean;
        if sd > 1e-12 {
            *v /= sd;
        }
    }
}

fn advantages<E: Environment>(
    env: &E,
    policy: &Policy,
    config: &TrainConfig,
    batch: &Batch,
    transform: RewardTransform,
    iter: usize,
) -> Result<Vec<f64>> {
    let shaped: Vec<Vec<f64>> = match transform {
        RewardTransform::Volatility => {
            let j_hat = j_for_gradient(env, policy, config, batch, iter)?;
            // A^λ is the advantage of R − λ(R − J)², with no horizon factor
            batch.trajectories.iter().map(|tr| transformed_rewards(tr, config.lambda, j_hat, 1.0)).collect()
        }
        RewardTransform::ExpUtility { c } => batch
            .trajectories
            .iter()
            .map(|tr| tr.rewards.iter().map(|&r| exp_utility_transform(r, c)).collect())
            .collect(),
    };
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    for (tr, r) in batch.trajectories.iter().zip(&shaped) {
        // padded rewards are zero; the transform leaves them at zero
        let mut r = r.clone();
        r[tr.steps()..].iter_mut().for_each(|x| *x = 0.0);
        let g = reward_to_go(&r, batch.gamma);
        for t in 0..tr.steps() {
            feats.push(tr.features[t].as_slice());
            targets.push(g[t]);
        }
    }
    let fitted = linear_baseline(&feats, &targets)?;
    let mut adv: Vec<f64> = targets.iter().zip(&fitted).map(|(g, v)| g - v).collect();
    standardize(&mut adv);
    Ok(adv)
}

fn practical<E: Environment>(
    env: &E,
    policy0: &Policy,
    config: &TrainConfig,
    radius: f64,
    transform: RewardTransform,
) -> Result<(Policy, TrainLog)> {
    let log_lambda = match transform {
        RewardTransform::Volatility => config.lambda,
        RewardTransform::ExpUtility { c } => 0.5 * c,
    };
    let mut policy = policy0.clone();
    let mut rec = Recorder::new();
    for iter in 0..config.iterations {
        let radius = config.kl_radius_at(radius, iter);
        let batch = collect(env, &policy, config.batch, config.horizon, config.gamma, config.iteration_seed(iter, 0), config.exec)?;
        let adv = advantages(env, &policy, config, &batch, transform, iter)?;
        let steps: Vec<StepSample> = batch
            .trajectories
            .iter()
            .flat_map(|tr| (0..tr.steps()).map(move |t| StepSample { features: &tr.features[t], traj: tr, t }))
            .collect();
        let states: Vec<Vec<f64>> = steps.iter().map(|s| s.features.to_vec()).collect();
        let old_logp: Vec<f64> = steps
            .iter()
            .map(|s| policy.log_prob(s.features, s.traj.actions[s.t]))
            .collect::<Result<_>>()?;

        let mut g = DVector::zeros(policy.dim());
        for (s, a) in steps.iter().zip(&adv) {
            g.axpy(*a, &policy.score(s.features, s.traj.actions[s.t])?, 1.0);
        }
        g /= steps.len() as f64;
        check_finite(&g, "surrogate gradient", iter)?;

        let surrogate = |cand: &Policy| -> Result<f64> {
            let mut acc = 0.0;
            for ((s, a), lp) in steps.iter().zip(&adv).zip(&old_logp) {
                acc += (cand.log_prob(s.features, s.traj.actions[s.t])? - lp).exp() * a;
            }
            Ok(acc / steps.len() as f64)
        };

        let (mut kl_step, mut accepted) = (0.0, 0.0);
        if radius > 0.0 && g.norm() > 0.0 {
            let fvp = |v: &DVector<f64>| policy.fisher_vector_product(&states, v, config.cg_damping);
            let dir = match conjugate_gradient(fvp, &g, config.cg_iters, 1e-10) {
                Ok(cg) if cg.rel_residual <= CG_RESIDUAL_LIMIT && cg.x.iter().all(|v| v.is_finite()) => cg.x,
                Ok(cg) => {
                    rec.log.note(iter, format!("CG residual {:.3e}; using the scaled gradient", cg.rel_residual));
                    g.clone()
                }
                Err(e) => {
                    rec.log.note(iter, format!("{e}; using the scaled gradient"));
                    g.clone()
                }
            };
            let curvature = dir.dot(&fvp(&dir)?);
            if curvature > 0.0 && curvature.is_finite() {
                let beta = (2.0 * radius / curvature).sqrt();
                let mut frac = 1.0;
                for _ in 0..config.backtrack_steps {
                    let cand = policy.clone().with_theta(policy.theta() + &dir * (frac * beta))?;
                    let kl = policy.kl_mean(&cand, &states)?;
                    if kl <= radius && surrogate(&cand)? > 0.0 {
                        kl_step = kl;
                        accepted = frac * beta;
                        rec.push(iter, &batch, log_lambda, g.norm(), kl_step, accepted);
                        policy = cand;
                        break;
                    }
                    frac *= config.backtrack_coef;
                }
            } else {
                rec.log.note(iter, "non-positive curvature along the search direction; step skipped");
            }
        }
        if rec.log.records.len() == iter {
            rec.push(iter, &batch, log_lambda, g.norm(), kl_step, accepted);
        }
    }
    Ok((policy, rec.log))
}

fn penalty(mdp: &TabularMdp, policy0: &Policy, config: &TrainConfig) -> Result<(Policy, TrainLog)> {
    ensure!(policy0.is_softmax(), "penalty-mode TRVO needs a softmax policy");
    ensure!(
        (mdp.gamma() - config.gamma).abs() < 1e-12,
        "config gamma {} differs from the MDP discount {}",
        config.gamma,
        mdp.gamma()
    );
    let features = one_hot_features(mdp.n_states());
    let lambda = config.lambda;
    let gamma = mdp.gamma();
    let mut policy = policy0.clone();
    let mut rec = Recorder::new();
    for iter in 0..config.iterations {
        let pi = policy.table(&features)?;
        let stats = perf_stats(mdp, &pi, lambda)?;
        let adv = value_tables(mdp, &pi, lambda)?.a_lambda;
        let d = occupancy(mdp, &pi)?.d_mu;
        let weight = 2.0 * adv.amax() * gamma / (1.0 - gamma);

        let objective = |cand: &Policy| -> Result<(f64, usize)> {
            let mut surr = 0.0;
            let (mut kl_max, mut arg) = (0.0, 0);
            for (s, phi) in features.iter().enumerate() {
                let q = cand.probabilities(phi)?;
                surr += d[s] * q.iter().enumerate().map(|(a, qa)| qa * adv[(s, a)]).sum::<f64>();
                let kl = policy.kl(cand, phi)?;
                if kl > kl_max {
                    kl_max = kl;
                    arg = s;
                }
            }
            Ok((surr - weight * kl_max, arg))
        };
        let gradient = |cand: &Policy, arg: usize| -> Result<DVector<f64>> {
            let mut g = DVector::zeros(cand.dim());
            for (s, phi) in features.iter().enumerate() {
                let q = cand.probabilities(phi)?;
                for a in 0..q.len() {
                    g.axpy(d[s] * q[a] * adv[(s, a)], &cand.softmax_score(phi, &q, a), 1.0);
                }
            }
            g.axpy(-weight, &policy.kl_grad_other(cand, &features[arg])?, 1.0);
            Ok(g)
        };

        let grad0 = gradient(&policy, 0)?;
        check_finite(&grad0, "penalty gradient", iter)?;
        let mut current = policy.clone();
        let (mut value, mut arg) = objective(&current)?;
        let mut t = 1.0;
        for _ in 0..PENALTY_INNER_STEPS {
            let g = gradient(&current, arg)?;
            let g2 = g.norm_squared();
            if g2 == 0.0 {
                break;
            }
            let mut moved = false;
            for _ in 0..config.backtrack_steps {
                let cand = current.clone().with_theta(current.theta() + &g * t)?;
                let (v, a) = objective(&cand)?;
                if v >= value + 1e-4 * t * g2 {
                    current = cand;
                    value = v;
                    arg = a;
                    moved = true;
                    t /= config.backtrack_coef;
                    break;
                }
                t *= config.backtrack_coef;
            }
            if !moved {
                break;
            }
        }
        let kl = policy.kl_max(&current, &features)?;
        rec.push_record(TrainRecord {
            iter,
            j_hat: stats.j,
            nu2_hat: stats.nu2,
            sigma2_hat: stats.sigma2,
            eta_hat: stats.eta,
            grad_norm: grad0.norm(),
            kl_step: kl,
            accepted_step_size: (current.theta() - policy.theta()).norm(),
            wall_time: 0.0,
        });
        policy = current;
    }
    Ok((policy, rec.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_random_tabular, two_cycle_mdp, TabularEnv};

    #[test]
    fn cg_solves_small_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let res = conjugate_gradient(|v| Ok(&a * v), &b, 10, 1e-14).unwrap();
        assert!(res.iterations <= 3);
        assert!((&a * &res.x - &b).norm() < 1e-12);
        assert!(conjugate_gradient(|v| Ok(-v), &b, 10, 1e-14).is_err());
    }

    #[test]
    fn one_hot_baseline_is_per_state_mean() {
        let f0 = [1.0, 0.0];
        let f1 = [0.0, 1.0];
        let feats: Vec<&[f64]> = vec![&f0, &f0, &f1, &f1, &f1];
        let fitted = linear_baseline(&feats, &[1.0, 3.0, 0.0, 3.0, 6.0]).unwrap();
        for (got, want) in fitted.iter().zip([2.0, 2.0, 3.0, 3.0, 3.0]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_radius_never_moves() {
        let env = TabularEnv::new(build_random_tabular(3, 4, 2, 0.9, 1.0).unwrap(), 10).unwrap();
        let config = TrainConfig {
            gamma: 0.9,
            horizon: 10,
            batch: 20,
            iterations: 4,
            lambda: 0.3,
            trust_region: TrustRegion::KlConstraint { radius: 0.0 },
            ..Default::default()
        };
        let p0 = Policy::softmax(2, 4).unwrap();
        let (p, log) = trvo(&env, &p0, &config).unwrap();
        assert_eq!(p.theta(), p0.theta());
        assert_eq!(log.records.len(), 4);
        assert!(log.records.iter().all(|r| r.accepted_step_size == 0.0));
    }

    #[test]
    fn kl_constrained_steps_respect_radius_and_improve_bandit() {
        let env = TabularEnv::new(build_random_tabular(5, 3, 3, 0.9, 1.0).unwrap(), 15).unwrap();
        let config = TrainConfig { gamma: 0.9, horizon: 15, batch: 50, iterations: 15, ..Default::default() };
        let p0 = Policy::softmax(3, 3).unwrap();
        let (p, log) = trvo(&env, &p0, &config).unwrap();
        assert!(log.records.iter().all(|r| r.kl_step <= 0.01 + 1e-15));
        assert!(log.records.iter().any(|r| r.accepted_step_size > 0.0));
        let f = one_hot_features(3);
        let j0 = perf_stats(env.mdp(), &p0.table(&f).unwrap(), 0.0).unwrap().j;
        let j1 = perf_stats(env.mdp(), &p.table(&f).unwrap(), 0.0).unwrap().j;
        assert!(j1 > j0, "{j0} -> {j1}");
    }

    #[test]
    fn penalty_mode_is_monotone_on_two_cycle() {
        let env = TabularEnv::new(two_cycle_mdp(0.2, 0.9).unwrap(), 20).unwrap();
        for lambda in [0.0, 0.5, 5.0] {
            let config = TrainConfig {
                gamma: 0.9,
                lambda,
                iterations: 15,
                trust_region: TrustRegion::Penalty,
                ..Default::default()
            };
            let (_, log) = trvo(&env, &Policy::softmax(2, 5).unwrap(), &config).unwrap();
            for w in log.records.windows(2) {
                assert!(w[1].eta_hat >= w[0].eta_hat - 1e-12, "lambda {lambda}: {} -> {}", w[0].eta_hat, w[1].eta_hat);
            }
        }
    }

    #[test]
    fn penalty_mode_needs_tabular_env_and_exp_needs_kl() {
        let env = TabularEnv::new(two_cycle_mdp(0.2, 0.9).unwrap(), 20).unwrap();
        let config = TrainConfig { gamma: 0.9, trust_region: TrustRegion::Penalty, ..Default::default() };
        assert!(trpo_exp(&env, &Policy::softmax(2, 5).unwrap(), &config).is_err());
        let wrong_gamma = TrainConfig { gamma: 0.5, ..config };
        assert!(trvo(&env, &Policy::softmax(2, 5).unwrap(), &wrong_gamma).is_err());
    }
}
