use nalgebra::DVector;

use crate::env::{Environment, TabularMdp};
use crate::error::{ensure, Error, Result};
use crate::exact::{exact_gradient_eta, one_hot_features, perf_stats_at};
use crate::gradients::{grad_eta_gpomdp, grad_eta_pgt, GradForm, Normalization};
use crate::numerics::{f_quantile, sample_covariance, spectral_norm};
use crate::policy::{Policy, SmoothingConstants};
use crate::sampling::{collect, collect_range, estimate_j, Batch};

use super::{check_compat, check_finite, Recorder, TrainConfig, TrainLog, TrainRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeMetaParams {
    pub smoothing: SmoothingConstants,
    pub c_bound: f64,
    /// Upper bound on the spectral norm of the Hessian of `η`.
    pub l_bound: f64,
    pub eps_delta: f64,
    pub alpha_star: f64,
    pub n_star: usize,
    pub delta: f64,
    /// Norm of the mean of the gradient samples.
    pub grad_norm: f64,
}

/// One safe update.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeStep {
    pub iter: usize,
    pub n_used: usize,
    pub params: SafeMetaParams,
    pub gradient: DVector<f64>,
    pub theta_before: DVector<f64>,
    pub theta_after: DVector<f64>,
    /// Guaranteed improvement: `‖∇̂‖²/(8L)` when sampled, `‖∇η‖²/(4L)` when exact.
    pub guaranteed: f64,
    /// Exact `η` before and after the step (exact mode only).
    pub eta_before: Option<f64>,
    pub eta_after: Option<f64>,
}

/// `sup |R − λ(R − J)²|` over `R ∈ [−r_max, r_max]`.
pub fn c_bound(r_max: f64, lambda: f64, j: f64) -> f64 {
    let f = |r: f64| r - lambda * (r - j) * (r - j);
    let mut best = f(r_max).abs().max(f(-r_max).abs());
    if lambda > 0.0 {
        // interior maximum of the concave quadratic
        let peak = (j + 0.5 / lambda).clamp(-r_max, r_max);
        best = best.max(f(peak).abs());
    }
    best
}

/// Step size, batch size and Hessian bound from per-trajectory gradient
/// samples.
///
/// `L = c/(1−γ)² (2γψ²/(1−γ) + κ + ξ) + 2 R²_max ψ²/(1−γ)³`, `α* = 1/(2L)`,
/// `ε_δ = √(N m/(N−m) ‖S‖ F_{1−δ}(m, N−m))` with `S` the sample covariance
/// (divisor `N`), and `N* = ⌈4ε_δ²/‖∇̂‖²⌉`.
pub fn safe_meta_params(
    grad_samples: &[DVector<f64>],
    smoothing: SmoothingConstants,
    r_max: f64,
    gamma: f64,
    lambda: f64,
    j_current: f64,
    delta: f64,
) -> Result<SafeMetaParams> {
    ensure!(!grad_samples.is_empty(), "no gradient samples");
    let n = grad_samples.len();
    let m = grad_samples[0].len();
    ensure!(n > m, "{n} gradient samples for dimension {m}: the confidence region needs N > m");
    ensure!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1), got {gamma}");
    ensure!(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1), got {delta}");
    ensure!(r_max > 0.0 && r_max.is_finite(), "r_max must be positive, got {r_max}");

    let mut mean = DVector::zeros(m);
    for g in grad_samples {
        ensure!(g.len() == m, "gradient samples have different lengths");
        mean += g;
    }
    mean /= n as f64;
    let cov = sample_covariance(grad_samples)?;
    let s_norm = spectral_norm(&cov);
    let (nf, mf) = (n as f64, m as f64);
    let eps_delta = if s_norm == 0.0 {
        0.0
    } else {
        (nf * mf / (nf - mf) * s_norm * f_quantile(1.0 - delta, mf, nf - mf)?).sqrt()
    };

    let c = c_bound(r_max, lambda, j_current);
    let SmoothingConstants { psi, kappa, xi } = smoothing;
    let om = 1.0 - gamma;
    let l_bound = c / (om * om) * (2.0 * gamma * psi * psi / om + kappa + xi) + 2.0 * r_max * r_max * psi * psi / om.powi(3);
    if !(l_bound > 0.0 && l_bound.is_finite()) {
        return Err(Error::numerical(format!("Hessian bound is {l_bound}; smoothing constants are degenerate")));
    }
    let grad_norm = mean.norm();
    let n_star = if eps_delta == 0.0 {
        1
    } else if grad_norm == 0.0 {
        usize::MAX
    } else {
        let raw = (4.0 * eps_delta * eps_delta / (grad_norm * grad_norm)).ceil();
        if raw >= usize::MAX as f64 { usize::MAX } else { (raw as usize).max(1) }
    };
    Ok(SafeMetaParams {
        smoothing,
        c_bound: c,
        l_bound,
        eps_delta,
        alpha_star: 0.5 / l_bound,
        n_star,
        delta,
        grad_norm,
    })
}

fn smoothing_states<E: Environment>(env: &E, batch: &Batch) -> Vec<Vec<f64>> {
    match env.tabular() {
        Some(mdp) => one_hot_features(mdp.n_states()),
        None => batch.visited_features(),
    }
}

/// VOLA-PG with the step `α* = 1/(2L)` and a batch grown until `N ≥ N*`.
///
/// Gradients use [`Normalization::Eta`] and an independent `Ĵ` batch, so the
/// per-trajectory samples are i.i.d. and unbiased for `∇η_T`; the GPOMDP
/// baseline is switched off for the same reason. `config.max_batch` caps the
/// batch; hitting the cap ends training with a note in the log.
pub fn safe_vola_pg<E: Environment>(env: &E, policy0: &Policy, config: &TrainConfig) -> Result<(Policy, TrainLog)> {
    config.validate()?;
    check_compat(env, policy0)?;
    ensure!(
        config.batch > policy0.dim(),
        "safe VOLA-PG needs a batch larger than the parameter dimension {}",
        policy0.dim()
    );
    let mut policy = policy0.clone();
    let mut rec = Recorder::new();
    'outer: for iter in 0..config.iterations {
        let seed = config.iteration_seed(iter, 0);
        let j_batch = collect(env, &policy, config.batch, config.horizon, config.gamma, config.iteration_seed(iter, 1), config.exec)?;
        let j_hat = estimate_j(&j_batch);
        let mut batch = collect(env, &policy, config.batch, config.horizon, config.gamma, seed, config.exec)?;
        let smoothing = policy.smoothing_constants(&smoothing_states(env, &batch), config.smoothing_safety)?;
        let (grad, params) = loop {
            let est = match config.estimator {
                GradForm::Pgt => grad_eta_pgt(&batch, &policy, config.lambda, j_hat, Normalization::Eta, config.exec)?,
                GradForm::Gpomdp { .. } => {
                    grad_eta_gpomdp(&batch, &policy, config.lambda, j_hat, Normalization::Eta, false, config.exec)?
                }
            };
            check_finite(&est.vector, "gradient", iter)?;
            let params =
                safe_meta_params(&est.samples, smoothing, env.r_max(), config.gamma, config.lambda, j_hat, config.delta)?;
            if batch.len() >= params.n_star {
                break (est.vector, params);
            }
            if params.n_star > config.max_batch {
                rec.log.note(iter, format!("required batch {} exceeds the cap {}; stopping", params.n_star, config.max_batch));
                break 'outer;
            }
            let extra = collect_range(
                env,
                &policy,
                batch.len() as u64,
                params.n_star - batch.len(),
                config.horizon,
                config.gamma,
                seed,
                config.exec,
            )?;
            batch = batch.merge(extra)?;
        };
        let theta_before = policy.theta().clone();
        let next = policy.clone().with_theta(&theta_before + &grad * params.alpha_star)?;
        let kl = policy.kl_mean(&next, &batch.visited_features())?;
        rec.push(iter, &batch, config.lambda, grad.norm(), kl, params.alpha_star);
        rec.log.safe_steps.push(SafeStep {
            iter,
            n_used: batch.len(),
            params,
            guaranteed: grad.norm_squared() / (8.0 * params.l_bound),
            gradient: grad,
            theta_before,
            theta_after: next.theta().clone(),
            eta_before: None,
            eta_after: None,
        });
        policy = next;
    }
    Ok((policy, rec.log))
}

/// Safe ascent with exact gradients on a tabular MDP: `ε_δ = 0`, step
/// `1/(2L)`, guaranteed improvement `‖∇η‖²/(4L)`. Smoothing constants are
/// taken over all states.
pub fn safe_vola_pg_exact(mdp: &TabularMdp, policy0: &Policy, config: &TrainConfig) -> Result<(Policy, TrainLog)> {
    config.validate()?;
    ensure!(policy0.is_softmax(), "exact safe ascent needs a softmax policy");
    ensure!(
        (mdp.gamma() - config.gamma).abs() < 1e-12,
        "config gamma {} differs from the MDP discount {}",
        config.gamma,
        mdp.gamma()
    );
    let features = one_hot_features(mdp.n_states());
    let mut policy = policy0.clone();
    let mut rec = Recorder::new();
    for iter in 0..config.iterations {
        let stats = perf_stats_at(mdp, &policy, &features, config.lambda)?;
        let grad = exact_gradient_eta(mdp, &policy, &features, config.lambda)?;
        check_finite(&grad, "gradient", iter)?;
        let smoothing = policy.smoothing_constants(&features, config.smoothing_safety)?;
        // two identical samples: zero covariance, so ε_δ = 0 and N* = 1
        let samples = vec![grad.clone(); policy.dim() + 1];
        let params = safe_meta_params(&samples, smoothing, mdp.r_max(), mdp.gamma(), config.lambda, stats.j, config.delta)?;
        let theta_before = policy.theta().clone();
        let next = policy.clone().with_theta(&theta_before + &grad * params.alpha_star)?;
        let after = perf_stats_at(mdp, &next, &features, config.lambda)?;
        rec.push_record(TrainRecord {
            iter,
            j_hat: stats.j,
            nu2_hat: stats.nu2,
            sigma2_hat: stats.sigma2,
            eta_hat: stats.eta,
            grad_norm: grad.norm(),
            kl_step: policy.kl_max(&next, &features)?,
            accepted_step_size: params.alpha_star,
            wall_time: 0.0,
        });
        rec.log.safe_steps.push(SafeStep {
            iter,
            n_used: 0,
            params,
            guaranteed: grad.norm_squared() / (4.0 * params.l_bound),
            gradient: grad,
            theta_before,
            theta_after: next.theta().clone(),
            eta_before: Some(stats.eta),
            eta_after: Some(after.eta),
        });
        policy = next;
    }
    Ok((policy, rec.log))
}
