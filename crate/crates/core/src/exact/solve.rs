use nalgebra::{DMatrix, DVector};

use crate::env::TabularMdp;
use crate::error::{ensure, Error, Result};

/// Checks that `pi` is an `S × A` table of distributions.
pub fn check_policy_table(mdp: &TabularMdp, pi: &DMatrix<f64>) -> Result<()> {
    ensure!(
        pi.nrows() == mdp.n_states() && pi.ncols() == mdp.n_actions(),
        "policy table is {}x{}, MDP is {}x{}",
        pi.nrows(),
        pi.ncols(),
        mdp.n_states(),
        mdp.n_actions()
    );
    for s in 0..pi.nrows() {
        let row = pi.row(s);
        ensure!(row.iter().all(|&p| p >= 0.0 && p.is_finite()), "policy row {s} has invalid entries");
        ensure!((row.sum() - 1.0).abs() < 1e-10, "policy row {s} sums to {}", row.sum());
    }
    Ok(())
}

/// State-to-state kernel `P_π(s, s') = Σ_a π(a|s) P(s'|s, a)`.
pub fn policy_transition(mdp: &TabularMdp, pi: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mdp.n_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let w = pi[(s, a)];
            if w == 0.0 {
                continue;
            }
            for (next, &q) in mdp.next_distribution(s, a).iter().enumerate() {
                p[(s, next)] += w * q;
            }
        }
    }
    p
}

/// `P_π^t`.
pub fn t_step(mdp: &TabularMdp, pi: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let p = policy_transition(mdp, pi);
    let mut acc = DMatrix::identity(mdp.n_states(), mdp.n_states());
    for _ in 0..t {
        acc = &acc * &p;
    }
    acc
}

fn solve_refined(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b).ok_or_else(|| Error::numerical("singular Bellman system"))?;
    let residual = b - a * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    ensure_finite(&x)?;
    Ok(x)
}

fn ensure_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical("Bellman solve produced non-finite values"))
    }
}

/// Solves `(I − discount · P_π) F = G` for every column of `G`.
pub fn solve_discounted(p_pi: &DMatrix<f64>, discount: f64, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p_pi.nrows();
    let a = DMatrix::identity(n, n) - p_pi * discount;
    solve_refined(&a, g)
}

fn solve_vector(p_pi: &DMatrix<f64>, discount: f64, g: &DVector<f64>) -> Result<DVector<f64>> {
    let x = solve_discounted(p_pi, discount, &DMatrix::from_column_slice(g.len(), 1, g.as_slice()))?;
    Ok(x.column(0).into_owned())
}

/// Discounted state-occupancy measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    /// `d_{μ,π}`, normalized to sum to one.
    pub d_mu: DVector<f64>,
    /// Row `s0` holds `d_π(· | s0)`, also normalized.
    pub d_cond: DMatrix<f64>,
}

pub fn occupancy(mdp: &TabularMdp, pi: &DMatrix<f64>) -> Result<Occupancy> {
    check_policy_table(mdp, pi)?;
    let g = mdp.gamma();
    let p = policy_transition(mdp, pi);
    let n = mdp.n_states();
    // rows of (1−γ)(I − γP)^{-1}
    let d_cond = solve_discounted(&p, g, &DMatrix::identity(n, n))? * (1.0 - g);
    let d_mu = solve_vector(&p.transpose(), g, mdp.mu())? * (1.0 - g);
    Ok(Occupancy { d_mu, d_cond })
}

fn expected_over_actions(pi: &DMatrix<f64>, table: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(pi.nrows(), |s, _| pi.row(s).dot(&table.row(s)))
}

/// Expected next-state value `Σ_{s'} P(s'|s,a) v(s')` per `(s, a)`.
fn next_value(mdp: &TabularMdp, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        mdp.next_distribution(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum()
    })
}

/// Unnormalized action and state values for an arbitrary reward table:
/// `Q = r + γ P V`, `V = Σ_a π Q`.
pub fn action_values(mdp: &TabularMdp, pi: &DMatrix<f64>, reward: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_policy_table(mdp, pi)?;
    let p = policy_transition(mdp, pi);
    let r_pi = expected_over_actions(pi, reward);
    let v = solve_vector(&p, mdp.gamma(), &r_pi)?;
    let q = reward + next_value(mdp, &v) * mdp.gamma();
    Ok((q, v))
}

pub fn solve_q(mdp: &TabularMdp, pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(action_values(mdp, pi, mdp.reward())?.0)
}

/// Action-volatility table: the action values of the reward `(R − j)²`.
pub fn solve_x(mdp: &TabularMdp, pi: &DMatrix<f64>, j: f64) -> Result<DMatrix<f64>> {
    let dev = mdp.reward().map(|r| (r - j) * (r - j));
    Ok(action_values(mdp, pi, &dev)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub q: DMatrix<f64>,
    pub v: DVector<f64>,
    pub x: DMatrix<f64>,
    pub w: DVector<f64>,
    pub q_lambda: DMatrix<f64>,
    pub v_lambda: DVector<f64>,
    pub a_lambda: DMatrix<f64>,
}

pub fn value_tables(mdp: &TabularMdp, pi: &DMatrix<f64>, lambda: f64) -> Result<ValueTables> {
    let stats = perf_stats(mdp, pi, lambda)?;
    let (q, v) = action_values(mdp, pi, mdp.reward())?;
    let dev = mdp.reward().map(|r| (r - stats.j) * (r - stats.j));
    let (x, w) = action_values(mdp, pi, &dev)?;
    let q_lambda = &q - &x * lambda;
    let v_lambda = &v - &w * lambda;
    let mut a_lambda = q_lambda.clone();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            a_lambda[(s, a)] -= v_lambda[s];
        }
    }
    Ok(ValueTables { q, v, x, w, q_lambda, v_lambda, a_lambda })
}

/// Objective quantities of one policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfStats {
    /// Normalized expected return `J`.
    pub j: f64,
    /// Reward volatility `ν²`.
    pub nu2: f64,
    /// Variance of the (unnormalized) discounted return.
    pub sigma2: f64,
    /// Normalized second moment `M`.
    pub m2: f64,
    pub eta: f64,
    pub lambda: f64,
}

pub fn perf_stats(mdp: &TabularMdp, pi: &DMatrix<f64>, lambda: f64) -> Result<PerfStats> {
    let occ = occupancy(mdp, pi)?;
    let r = mdp.reward();
    let mut j = 0.0;
    let mut m2 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let w = occ.d_mu[s] * pi[(s, a)];
            j += w * r[(s, a)];
            m2 += w * r[(s, a)] * r[(s, a)];
        }
    }
    let mut nu2 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            nu2 += occ.d_mu[s] * pi[(s, a)] * (r[(s, a)] - j).powi(2);
        }
    }
    Ok(PerfStats { j, nu2, sigma2: return_variance(mdp, pi)?, m2, eta: j - lambda * nu2, lambda })
}

/// Variance of `G = Σ γ^t R_t` from the second-moment recursion
/// `U(s) = Σ_a π (R² + 2γR E[V'] + γ² E[U'])`.
fn return_variance(mdp: &TabularMdp, pi: &DMatrix<f64>) -> Result<f64> {
    let g = mdp.gamma();
    let (_, v) = action_values(mdp, pi, mdp.reward())?;
    let pv = next_value(mdp, &v);
    let r = mdp.reward();
    let inst = DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        r[(s, a)] * r[(s, a)] + 2.0 * g * r[(s, a)] * pv[(s, a)]
    });
    let p = policy_transition(mdp, pi);
    let u = solve_vector(&p, g * g, &expected_over_actions(pi, &inst))?;
    let mean = mdp.mu().dot(&v);
    Ok((mdp.mu().dot(&u) - mean * mean).max(0.0))
}
