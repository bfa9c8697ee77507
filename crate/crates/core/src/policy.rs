//! Linear-feature policies with closed-form derivatives.
//!
//! A softmax-linear policy over `n` actions keeps one weight block per action,
//! `θ = [θ_0, …, θ_{n−1}]`, and picks `a` with probability proportional to
//! `exp(θ_a · φ(s))`. A Gaussian-linear policy emits a scalar action
//! `a ~ N(θ · φ(s), σ²)` with fixed `σ`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::env::{sample_categorical, Action, SimRng};
use crate::error::{ensure, Error, Result};
use crate::numerics::spectral_norm;

pub const DEFAULT_FISHER_DAMPING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    SoftmaxLinear,
    GaussianLinear { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Categorical(Vec<f64>),
    Gaussian { mean: f64, sigma: f64 },
}

/// Bounds on `E_a‖∇log π‖`, `E_a‖∇log π‖²` and `E_a‖∇∇ᵀlog π‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConstants {
    pub psi: f64,
    pub kappa: f64,
    pub xi: f64,
}

impl SmoothingConstants {
    pub fn zero() -> Self {
        Self { psi: 0.0, kappa: 0.0, xi: 0.0 }
    }

    fn merge_max(self, other: Self) -> Self {
        Self { psi: self.psi.max(other.psi), kappa: self.kappa.max(other.kappa), xi: self.xi.max(other.xi) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    kind: PolicyKind,
    n_actions: usize,
    feature_dim: usize,
    theta: DVector<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

impl Policy {
    pub fn softmax(n_actions: usize, feature_dim: usize) -> Result<Self> {
        ensure!(n_actions >= 1 && feature_dim >= 1, "policy needs at least one action and one feature");
        Ok(Self {
            kind: PolicyKind::SoftmaxLinear,
            n_actions,
            feature_dim,
            theta: DVector::zeros(n_actions * feature_dim),
        })
    }

    pub fn gaussian(feature_dim: usize, sigma: f64) -> Result<Self> {
        ensure!(feature_dim >= 1, "policy needs at least one feature");
        ensure!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive, got {sigma}");
        Ok(Self {
            kind: PolicyKind::GaussianLinear { sigma },
            n_actions: 1,
            feature_dim,
            theta: DVector::zeros(feature_dim),
        })
    }

    pub fn with_theta(mut self, theta: DVector<f64>) -> Result<Self> {
        self.set_theta(theta)?;
        Ok(self)
    }

    pub fn set_theta(&mut self, theta: DVector<f64>) -> Result<()> {
        ensure!(theta.len() == self.dim(), "theta has length {}, expected {}", theta.len(), self.dim());
        ensure!(theta.iter().all(|x| x.is_finite()), "theta has non-finite entries");
        self.theta = theta;
        Ok(())
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Number of discrete actions (1 for the Gaussian policy).
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Parameter dimension `m`.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn is_softmax(&self) -> bool {
        matches!(self.kind, PolicyKind::SoftmaxLinear)
    }

    fn check_features(&self, phi: &[f64]) -> Result<()> {
        ensure!(
            phi.len() == self.feature_dim,
            "feature vector has length {}, policy expects {}",
            phi.len(),
            self.feature_dim
        );
        Ok(())
    }

    fn block(&self, a: usize) -> &[f64] {
        &self.theta.as_slice()[a * self.feature_dim..(a + 1) * self.feature_dim]
    }

    pub fn logits(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.check_features(phi)?;
        ensure!(self.is_softmax(), "logits are only defined for the softmax policy");
        Ok((0..self.n_actions).map(|a| dot(self.block(a), phi)).collect())
    }

    /// Action probabilities of the softmax policy.
    pub fn probabilities(&self, phi: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(phi)?))
    }

    pub fn mean(&self, phi: &[f64]) -> Result<f64> {
        self.check_features(phi)?;
        ensure!(!self.is_softmax(), "mean is only defined for the Gaussian policy");
        Ok(dot(self.theta.as_slice(), phi))
    }

    pub fn action_distribution(&self, phi: &[f64]) -> Result<ActionDistribution> {
        match self.kind {
            PolicyKind::SoftmaxLinear => Ok(ActionDistribution::Categorical(self.probabilities(phi)?)),
            PolicyKind::GaussianLinear { sigma } => Ok(ActionDistribution::Gaussian { mean: self.mean(phi)?, sigma }),
        }
    }

    /// Probability table `π(a|s)` for a finite list of state features.
    pub fn table(&self, features: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let mut pi = DMatrix::zeros(features.len(), self.n_actions);
        for (s, phi) in features.iter().enumerate() {
            for (a, p) in self.probabilities(phi)?.into_iter().enumerate() {
                pi[(s, a)] = p;
            }
        }
        Ok(pi)
    }

    pub fn sample(&self, phi: &[f64], rng: &mut SimRng) -> Result<Action> {
        match self.action_distribution(phi)? {
            ActionDistribution::Categorical(p) => Ok(Action::Discrete(sample_categorical(&p, rng))),
            ActionDistribution::Gaussian { mean, sigma } => {
                let normal = Normal::new(mean, sigma).map_err(|e| Error::numerical(e.to_string()))?;
                Ok(Action::Continuous(normal.sample(rng)))
            }
        }
    }

    /// Most likely action (ties broken by lowest index).
    pub fn greedy(&self, phi: &[f64]) -> Result<Action> {
        match self.action_distribution(phi)? {
            ActionDistribution::Categorical(p) => {
                let mut best = 0;
                for a in 1..p.len() {
                    if p[a] > p[best] {
                        best = a;
                    }
                }
                Ok(Action::Discrete(best))
            }
            ActionDistribution::Gaussian { mean, .. } => Ok(Action::Continuous(mean)),
        }
    }

    pub fn log_prob(&self, phi: &[f64], action: Action) -> Result<f64> {
        match (self.action_distribution(phi)?, action) {
            (ActionDistribution::Categorical(p), Action::Discrete(a)) if a < p.len() => Ok(p[a].ln()),
            (ActionDistribution::Gaussian { mean, sigma }, Action::Continuous(x)) => {
                let z = (x - mean) / sigma;
                Ok(-0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
            }
            (_, a) => Err(Error::validation(format!("action {a:?} does not fit the policy"))),
        }
    }

    /// `∇_θ log π(a|s)`.
    pub fn score(&self, phi: &[f64], action: Action) -> Result<DVector<f64>> {
        match (self.kind, action) {
            (PolicyKind::SoftmaxLinear, Action::Discrete(a)) if a < self.n_actions => {
                let p = self.probabilities(phi)?;
                Ok(self.softmax_score(phi, &p, a))
            }
            (PolicyKind::GaussianLinear { sigma }, Action::Continuous(x)) => {
                let mean = self.mean(phi)?;
                let k = (x - mean) / (sigma * sigma);
                Ok(DVector::from_iterator(phi.len(), phi.iter().map(|f| f * k)))
            }
            (_, a) => Err(Error::validation(format!("action {a:?} does not fit the policy"))),
        }
    }

    /// Softmax score given already computed probabilities.
    pub(crate) fn softmax_score(&self, phi: &[f64], probs: &[f64], a: usize) -> DVector<f64> {
        let d = self.feature_dim;
        let mut g = DVector::zeros(self.dim());
        for (b, &pb) in probs.iter().enumerate() {
            let w = if b == a { 1.0 - pb } else { -pb };
            for j in 0..d {
                g[b * d + j] = w * phi[j];
            }
        }
        g
    }

    /// `−∇∇ᵀ log π(a|s)`. For both policy classes it does not depend on `a`:
    /// softmax gives `(diag p − p pᵀ) ⊗ φφᵀ`, Gaussian `φφᵀ/σ²`.
    pub fn observed_information(&self, phi: &[f64], action: Action) -> Result<DMatrix<f64>> {
        match (self.kind, action) {
            (PolicyKind::SoftmaxLinear, Action::Discrete(a)) if a < self.n_actions => {
                let p = self.probabilities(phi)?;
                Ok(self.softmax_information(phi, &p))
            }
            (PolicyKind::GaussianLinear { sigma }, Action::Continuous(_)) => {
                self.check_features(phi)?;
                let f = DVector::from_column_slice(phi);
                Ok(&f * f.transpose() / (sigma * sigma))
            }
            (_, a) => Err(Error::validation(format!("action {a:?} does not fit the policy"))),
        }
    }

    pub(crate) fn softmax_information(&self, phi: &[f64], p: &[f64]) -> DMatrix<f64> {
        let d = self.feature_dim;
        let n = self.n_actions;
        let mut h = DMatrix::zeros(n * d, n * d);
        for b in 0..n {
            for c in 0..n {
                let w = if b == c { p[b] - p[b] * p[c] } else { -p[b] * p[c] };
                if w == 0.0 {
                    continue;
                }
                for i in 0..d {
                    for j in 0..d {
                        h[(b * d + i, c * d + j)] = w * (phi[i] * phi[j]);
                    }
                }
            }
        }
        h
    }

    /// Exact Fisher information `E_a[score scoreᵀ]` at one state.
    pub fn fisher_matrix(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        match self.kind {
            PolicyKind::SoftmaxLinear => Ok(self.softmax_information(phi, &self.probabilities(phi)?)),
            PolicyKind::GaussianLinear { sigma } => {
                self.check_features(phi)?;
                let f = DVector::from_column_slice(phi);
                Ok(&f * f.transpose() / (sigma * sigma))
            }
        }
    }

    fn check_pair(&self, other: &Policy) -> Result<()> {
        ensure!(
            self.kind == other.kind && self.n_actions == other.n_actions && self.feature_dim == other.feature_dim,
            "policies have different shapes"
        );
        Ok(())
    }

    /// `D_KL(self(·|s) ‖ other(·|s))`.
    pub fn kl(&self, other: &Policy, phi: &[f64]) -> Result<f64> {
        self.check_pair(other)?;
        match self.kind {
            PolicyKind::SoftmaxLinear => {
                let lp = self.logits(phi)?;
                let lq = other.logits(phi)?;
                let p = softmax(&lp);
                let lse = |l: &[f64]| {
                    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m + l.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
                };
                let (zp, zq) = (lse(&lp), lse(&lq));
                let kl: f64 = p
                    .iter()
                    .enumerate()
                    .filter(|(_, &pa)| pa > 0.0)
                    .map(|(a, pa)| pa * ((lp[a] - zp) - (lq[a] - zq)))
                    .sum();
                Ok(kl.max(0.0))
            }
            PolicyKind::GaussianLinear { sigma } => {
                let dm = self.mean(phi)? - other.mean(phi)?;
                Ok(dm * dm / (2.0 * sigma * sigma))
            }
        }
    }

    pub fn kl_max(&self, other: &Policy, states: &[Vec<f64>]) -> Result<f64> {
        ensure!(!states.is_empty(), "KL maximum needs at least one state");
        let mut best = 0.0_f64;
        for phi in states {
            best = best.max(self.kl(other, phi)?);
        }
        Ok(best)
    }

    pub fn kl_mean(&self, other: &Policy, states: &[Vec<f64>]) -> Result<f64> {
        ensure!(!states.is_empty(), "KL average needs at least one state");
        let mut total = 0.0;
        for phi in states {
            total += self.kl(other, phi)?;
        }
        Ok(total / states.len() as f64)
    }

    /// Gradient of `D_KL(self ‖ other)` with respect to `other`'s parameters.
    pub fn kl_grad_other(&self, other: &Policy, phi: &[f64]) -> Result<DVector<f64>> {
        self.check_pair(other)?;
        let d = self.feature_dim;
        match self.kind {
            PolicyKind::SoftmaxLinear => {
                let p = self.probabilities(phi)?;
                let q = other.probabilities(phi)?;
                let mut g = DVector::zeros(self.dim());
                for b in 0..self.n_actions {
                    for j in 0..d {
                        g[b * d + j] = (q[b] - p[b]) * phi[j];
                    }
                }
                Ok(g)
            }
            PolicyKind::GaussianLinear { sigma } => {
                let k = (other.mean(phi)? - self.mean(phi)?) / (sigma * sigma);
                Ok(DVector::from_iterator(d, phi.iter().map(|f| f * k)))
            }
        }
    }

    /// Average Fisher-vector product over `states`, plus `damping · v`.
    /// Matrix-free: never forms the `m × m` Fisher matrix.
    pub fn fisher_vector_product(&self, states: &[Vec<f64>], v: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
        ensure!(!states.is_empty(), "Fisher-vector product needs at least one state");
        ensure!(v.len() == self.dim(), "vector has length {}, expected {}", v.len(), self.dim());
        let d = self.feature_dim;
        let mut out = DVector::zeros(self.dim());
        for phi in states {
            match self.kind {
                PolicyKind::SoftmaxLinear => {
                    let p = self.probabilities(phi)?;
                    let u: Vec<f64> = (0..self.n_actions).map(|b| dot(&v.as_slice()[b * d..(b + 1) * d], phi)).collect();
                    let ubar = dot(&p, &u);
                    for b in 0..self.n_actions {
                        let w = p[b] * (u[b] - ubar);
                        for j in 0..d {
                            out[b * d + j] += w * phi[j];
                        }
                    }
                }
                PolicyKind::GaussianLinear { sigma } => {
                    self.check_features(phi)?;
                    let w = dot(v.as_slice(), phi) / (sigma * sigma);
                    for j in 0..d {
                        out[j] += w * phi[j];
                    }
                }
            }
        }
        out /= states.len() as f64;
        out.axpy(damping, v, 1.0);
        Ok(out)
    }

    /// Smoothing constants at one state, computed exactly.
    pub fn smoothing_at(&self, phi: &[f64]) -> Result<SmoothingConstants> {
        let f2 = {
            self.check_features(phi)?;
            norm_sq(phi)
        };
        match self.kind {
            PolicyKind::SoftmaxLinear => {
                let p = self.probabilities(phi)?;
                let p2 = norm_sq(&p);
                // ‖score_a‖² = ‖φ‖² ‖e_a − p‖²
                let psi = p
                    .iter()
                    .map(|&pa| pa * (f2 * (1.0 - 2.0 * pa + p2)).max(0.0).sqrt())
                    .sum::<f64>();
                let kappa = f2 * (1.0 - p2);
                let cov = DMatrix::from_fn(p.len(), p.len(), |b, c| if b == c { p[b] - p[b] * p[c] } else { -p[b] * p[c] });
                let xi = spectral_norm(&cov) * f2;
                Ok(SmoothingConstants { psi, kappa, xi })
            }
            PolicyKind::GaussianLinear { sigma } => {
                let s2 = sigma * sigma;
                Ok(SmoothingConstants {
                    psi: (f2 / s2).sqrt() * (2.0 / std::f64::consts::PI).sqrt(),
                    kappa: f2 / s2,
                    xi: f2 / s2,
                })
            }
        }
    }

    /// Maxima over `states` of the per-state smoothing constants, inflated by
    /// `safety` (ψ and ξ scale linearly, κ quadratically so `ψ² ≤ κ` survives).
    pub fn smoothing_constants(&self, states: &[Vec<f64>], safety: f64) -> Result<SmoothingConstants> {
        ensure!(!states.is_empty(), "smoothing constants need at least one state");
        ensure!(safety >= 1.0, "safety factor must be at least 1, got {safety}");
        let mut acc = SmoothingConstants::zero();
        for phi in states {
            acc = acc.merge_max(self.smoothing_at(phi)?);
        }
        Ok(SmoothingConstants { psi: acc.psi * safety, kappa: acc.kappa * safety * safety, xi: acc.xi * safety })
    }

    /// Flat text checkpoint: `kind`, `n_actions`, `feature_dim`, `sigma`
    /// lines, then `theta` followed by one value per line.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let (kind, sigma) = match self.kind {
            PolicyKind::SoftmaxLinear => ("softmax_linear", 0.0),
            PolicyKind::GaussianLinear { sigma } => ("gaussian_linear", sigma),
        };
        let _ = writeln!(out, "kind {kind}");
        let _ = writeln!(out, "n_actions {}", self.n_actions);
        let _ = writeln!(out, "feature_dim {}", self.feature_dim);
        let _ = writeln!(out, "sigma {sigma}");
        let _ = writeln!(out, "theta {}", self.dim());
        for x in self.theta.iter() {
            let _ = writeln!(out, "{x}");
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut field = |name: &str| -> Result<(usize, String)> {
            let (i, line) = lines.next().ok_or(Error::Parse { line: 0, msg: format!("missing `{name}`") })?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(k), Some(v), None) if k == name => Ok((i + 1, v.to_string())),
                _ => Err(Error::Parse { line: i + 1, msg: format!("expected `{name} <value>`") }),
            }
        };
        let parse_usize = |(line, v): (usize, String)| {
            v.parse::<usize>().map_err(|_| Error::Parse { line, msg: format!("not a count: {v}") })
        };
        let parse_f64 = |(line, v): (usize, String)| {
            v.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("not a number: {v}") })
        };
        let kind = field("kind")?;
        let n_actions = parse_usize(field("n_actions")?)?;
        let feature_dim = parse_usize(field("feature_dim")?)?;
        let sigma = parse_f64(field("sigma")?)?;
        let m = parse_usize(field("theta")?)?;
        let mut policy = match kind.1.as_str() {
            "softmax_linear" => Policy::softmax(n_actions, feature_dim)?,
            "gaussian_linear" => Policy::gaussian(feature_dim, sigma)?,
            other => return Err(Error::Parse { line: kind.0, msg: format!("unknown policy kind {other}") }),
        };
        let mut theta = Vec::with_capacity(m);
        for (i, line) in lines {
            let v = line.trim();
            theta.push(v.parse::<f64>().map_err(|_| Error::Parse { line: i + 1, msg: format!("not a number: {v}") })?);
        }
        ensure!(theta.len() == m, "checkpoint declares {m} parameters but holds {}", theta.len());
        policy.set_theta(DVector::from_vec(theta))?;
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}
