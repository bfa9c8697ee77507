//! Sampled mean-volatility policy gradients.
//!
//! Both estimators replace the reward by `r̃ = R − λ w (R − Ĵ)²` and apply a
//! REINFORCE-style estimator to `r̃`. Two scalings are available:
//!
//! * [`Normalization::AsPrinted`]: `w = (1−γ)/(1−γ^T)` and no outer factor.
//!   Its expectation is `(1/k)∇J_T − λ∇ν²_T` with `k = (1−γ)/(1−γ^T)`.
//! * [`Normalization::Eta`]: `w = 1` and outer factor `k`. Its expectation is
//!   `∇η_T = ∇J_T − λ∇ν²_T` when `Ĵ` is independent of the batch.

use nalgebra::DVector;

use crate::error::{ensure, Error, Result};
use crate::numerics::NeumaierSum;
use crate::parallel::{map_slice, Execution};
use crate::policy::Policy;
use crate::sampling::{Batch, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    AsPrinted,
    Eta,
}

impl Normalization {
    /// `(penalty weight, outer factor)` for a horizon norm `k`.
    fn weights(self, k: f64) -> (f64, f64) {
        match self {
            Normalization::AsPrinted => (k, 1.0),
            Normalization::Eta => (1.0, k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradForm {
    Pgt,
    Gpomdp { baseline: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub vector: DVector<f64>,
    /// Per-trajectory terms whose mean is `vector`.
    pub samples: Vec<DVector<f64>>,
    pub n_used: usize,
    pub lambda: f64,
    pub form: GradForm,
    pub j_used: f64,
}

/// `r̃_t = R_t − λ w (R_t − Ĵ)²`.
pub fn transformed_rewards(traj: &Trajectory, lambda: f64, j_hat: f64, weight: f64) -> Vec<f64> {
    traj.rewards.iter().map(|&r| r - lambda * weight * (r - j_hat) * (r - j_hat)).collect()
}

fn scores(traj: &Trajectory, policy: &Policy) -> Result<Vec<DVector<f64>>> {
    traj.features.iter().zip(&traj.actions).map(|(phi, &a)| policy.score(phi, a)).collect()
}

fn check(batch: &Batch, policy: &Policy, j_hat: f64) -> Result<()> {
    ensure!(j_hat.is_finite(), "Ĵ is not finite");
    for traj in &batch.trajectories {
        ensure!(
            traj.features.iter().all(|f| f.len() == policy.feature_dim()),
            "trajectory features do not match the policy"
        );
    }
    Ok(())
}

fn mean_of(samples: &[DVector<f64>], m: usize) -> Result<DVector<f64>> {
    let mut acc = vec![NeumaierSum::new(); m];
    for s in samples {
        for (a, x) in acc.iter_mut().zip(s.iter()) {
            a.add(*x);
        }
    }
    let n = samples.len() as f64;
    let v = DVector::from_iterator(m, acc.iter().map(|a| a.value() / n));
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::numerical("gradient estimate has non-finite entries"))
    }
}

/// `Σ_t γ^t score_t Σ_{t'≥t} γ^{t'−t} r̃_{t'}` for one trajectory, unscaled.
fn pgt_term(traj: &Trajectory, policy: &Policy, gamma: f64, rewards: &[f64]) -> Result<DVector<f64>> {
    let sc = scores(traj, policy)?;
    let mut to_go = vec![0.0; rewards.len() + 1];
    for t in (0..rewards.len()).rev() {
        to_go[t] = rewards[t] + gamma * to_go[t + 1];
    }
    let mut g = DVector::zeros(policy.dim());
    let mut disc = 1.0;
    for (t, s) in sc.iter().enumerate() {
        g.axpy(disc * to_go[t], s, 1.0);
        disc *= gamma;
    }
    Ok(g)
}

/// Per-trajectory PGT terms.
pub fn pgt_samples(
    batch: &Batch,
    policy: &Policy,
    lambda: f64,
    j_hat: f64,
    norm: Normalization,
    exec: Execution,
) -> Result<Vec<DVector<f64>>> {
    check(batch, policy, j_hat)?;
    let (w, outer) = norm.weights(batch.norm());
    map_slice(&batch.trajectories, exec, |traj| {
        let r = transformed_rewards(traj, lambda, j_hat, w);
        pgt_term(traj, policy, batch.gamma, &r).map(|g| g * outer)
    })
    .into_iter()
    .collect()
}

/// PGT form: `(1/N) Σ_i Σ_t γ^t score_t Σ_{t'≥t} γ^{t'−t} r̃_{t'}` (times `k`
/// under [`Normalization::Eta`]).
pub fn grad_eta_pgt(
    batch: &Batch,
    policy: &Policy,
    lambda: f64,
    j_hat: f64,
    norm: Normalization,
    exec: Execution,
) -> Result<GradEstimate> {
    let samples = pgt_samples(batch, policy, lambda, j_hat, norm, exec)?;
    Ok(GradEstimate {
        vector: mean_of(&samples, policy.dim())?,
        n_used: samples.len(),
        samples,
        lambda,
        form: GradForm::Pgt,
        j_used: j_hat,
    })
}

/// The two pieces of the PGT estimator: `∇̂η(λ) = g_J − λ g_ν`.
pub fn pgt_split(
    batch: &Batch,
    policy: &Policy,
    j_hat: f64,
    norm: Normalization,
    exec: Execution,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check(batch, policy, j_hat)?;
    let (w, outer) = norm.weights(batch.norm());
    let parts = map_slice(&batch.trajectories, exec, |traj| -> Result<(DVector<f64>, DVector<f64>)> {
        let dev: Vec<f64> = traj.rewards.iter().map(|&r| w * (r - j_hat) * (r - j_hat)).collect();
        Ok((
            pgt_term(traj, policy, batch.gamma, &traj.rewards)? * outer,
            pgt_term(traj, policy, batch.gamma, &dev)? * outer,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (gj, gv): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok((mean_of(&gj, policy.dim())?, mean_of(&gv, policy.dim())?))
}

/// GPOMDP form: `Σ_t c_t ⊙ (γ^t r̃_t − b_t)` with `c_t` the cumulative score
/// and `b_t[k] = Σ_i c_{i,t}[k]² γ^t r̃_{i,t} / Σ_i c_{i,t}[k]²` (zero when
/// `baseline` is off).
pub fn grad_eta_gpomdp(
    batch: &Batch,
    policy: &Policy,
    lambda: f64,
    j_hat: f64,
    norm: Normalization,
    baseline: bool,
    exec: Execution,
) -> Result<GradEstimate> {
    check(batch, policy, j_hat)?;
    let m = policy.dim();
    let (w, outer) = norm.weights(batch.norm());
    let gamma = batch.gamma;
    // per trajectory: cumulative scores and discounted transformed rewards
    let prepared = map_slice(&batch.trajectories, exec, |traj| -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
        let sc = scores(traj, policy)?;
        let r = transformed_rewards(traj, lambda, j_hat, w);
        let mut cum = Vec::with_capacity(sc.len());
        let mut acc = DVector::zeros(m);
        let mut disc_r = Vec::with_capacity(sc.len());
        let mut disc = 1.0;
        for (t, s) in sc.iter().enumerate() {
            acc += s;
            cum.push(acc.clone());
            disc_r.push(disc * r[t]);
            disc *= gamma;
        }
        Ok((cum, disc_r))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let horizon = batch.horizon;
    let mut b = vec![DVector::zeros(m); horizon];
    if baseline {
        for (t, bt) in b.iter_mut().enumerate() {
            let mut num = DVector::zeros(m);
            let mut den = DVector::zeros(m);
            for (cum, dr) in &prepared {
                if let Some(c) = cum.get(t) {
                    let c2 = c.component_mul(c);
                    num.axpy(dr[t], &c2, 1.0);
                    den += c2;
                }
            }
            *bt = num.zip_map(&den, |n, d| if d > 0.0 { n / d } else { 0.0 });
        }
    }
    let samples: Vec<DVector<f64>> = map_slice(&prepared, exec, |(cum, dr)| {
        let mut g = DVector::zeros(m);
        for (t, c) in cum.iter().enumerate() {
            g += c.component_mul(&b[t].map(|x| dr[t] - x));
        }
        g * outer
    });
    Ok(GradEstimate {
        vector: mean_of(&samples, m)?,
        n_used: samples.len(),
        samples,
        lambda,
        form: GradForm::Gpomdp { baseline },
        j_used: j_hat,
    })
}

/// Central differences of `objective` around `theta`.
pub fn finite_diff_grad(objective: impl Fn(&DVector<f64>) -> f64, theta: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    ensure!(h > 0.0, "finite-difference step must be positive, got {h}");
    let mut g = DVector::zeros(theta.len());
    for i in 0..theta.len() {
        let mut p = theta.clone();
        let mut m = theta.clone();
        p[i] += h;
        m[i] -= h;
        let (fp, fm) = (objective(&p), objective(&m));
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::numerical(format!("objective is not finite around coordinate {i}")));
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}
