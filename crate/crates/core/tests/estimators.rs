mod common;

use nalgebra::DVector;

use riskvol::env::TabularEnv;
use riskvol::exact::{finite_horizon_gradient, one_hot_features, HorizonTarget};
use riskvol::gradients::{grad_eta_gpomdp, grad_eta_pgt, Normalization};
use riskvol::parallel::Execution;
use riskvol::sampling::{collect, estimate_j, estimate_nu2_single};
use riskvol::verify::{corpus_mdp, random_policy};

use common::mean_se;

const HORIZON: usize = 15;

#[test]
fn sampled_j_is_unbiased_for_the_truncated_objective() {
    let mdp = corpus_mdp(4).unwrap();
    let policy = random_policy(&mdp, 4).unwrap();
    let (j_t, _) = common::truncated(&mdp, &policy.table(&one_hot_features(mdp.n_states())).unwrap(), HORIZON);
    let env = TabularEnv::new(mdp.clone(), HORIZON).unwrap();
    let js: Vec<f64> = (0..400)
        .map(|r| estimate_j(&collect(&env, &policy, 25, HORIZON, mdp.gamma(), r, Execution::Parallel).unwrap()))
        .collect();
    let (mean, se) = mean_se(&js);
    assert!((mean - j_t).abs() < 4.0 * se, "{mean} vs {j_t} (se {se})");
}

#[test]
fn single_sampling_bias_shrinks_like_one_over_n() {
    let mdp = corpus_mdp(1).unwrap();
    let policy = random_policy(&mdp, 1).unwrap();
    let (j_t, nu2_t) = common::truncated(&mdp, &policy.table(&one_hot_features(mdp.n_states())).unwrap(), HORIZON);
    let env = TabularEnv::new(mdp.clone(), HORIZON).unwrap();
    let mut biases = Vec::new();
    for n in [5usize, 40] {
        let (single, sq): (Vec<f64>, Vec<f64>) = (0..1500)
            .map(|r| {
                let b = collect(&env, &policy, n, HORIZON, mdp.gamma(), 10_000 + r, Execution::Parallel).unwrap();
                (estimate_nu2_single(&b), (estimate_j(&b) - j_t).powi(2))
            })
            .unzip();
        let (var_j, _) = mean_se(&sq);
        let (s_mean, _) = mean_se(&single);
        biases.push((nu2_t - s_mean, var_j));
    }
    // Var(Ĵ) scales as 1/N
    let ratio = biases[0].1 / biases[1].1;
    assert!((5.0..12.0).contains(&ratio), "{biases:?}");
    assert!(biases[0].0 > 0.0, "{biases:?}");
}

fn replicate(
    f: impl Fn(u64) -> DVector<f64>,
    reps: u64,
) -> (DVector<f64>, DVector<f64>) {
    let samples: Vec<DVector<f64>> = (0..reps).map(f).collect();
    let dim = samples[0].len();
    let mut mean = DVector::zeros(dim);
    let mut se = DVector::zeros(dim);
    for i in 0..dim {
        let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let (m, s) = mean_se(&xs);
        mean[i] = m;
        se[i] = s;
    }
    (mean, se)
}

#[test]
fn pgt_and_gpomdp_target_the_same_gradient() {
    let mdp = corpus_mdp(7).unwrap();
    let features = one_hot_features(mdp.n_states());
    let policy = random_policy(&mdp, 3).unwrap();
    let env = TabularEnv::new(mdp.clone(), HORIZON).unwrap();
    let lambda = 0.8;
    let exact = finite_horizon_gradient(&mdp, &policy, &features, HORIZON, lambda, HorizonTarget::AsPrinted).unwrap();
    let j_hat = |r: u64| estimate_j(&collect(&env, &policy, 50, HORIZON, mdp.gamma(), 2 * r + 1, Execution::Parallel).unwrap());
    let batch = |r: u64| collect(&env, &policy, 50, HORIZON, mdp.gamma(), 2 * r, Execution::Parallel).unwrap();
    let (pgt, pgt_se) = replicate(
        |r| grad_eta_pgt(&batch(r), &policy, lambda, j_hat(r), Normalization::AsPrinted, Execution::Parallel).unwrap().vector,
        300,
    );
    let (gp, gp_se) = replicate(
        |r| {
            grad_eta_gpomdp(&batch(r), &policy, lambda, j_hat(r), Normalization::AsPrinted, false, Execution::Parallel)
                .unwrap()
                .vector
        },
        300,
    );
    for i in 0..exact.len() {
        assert!((pgt[i] - exact[i]).abs() <= 4.0 * pgt_se[i] + 1e-12, "pgt[{i}]: {} vs {}", pgt[i], exact[i]);
        assert!((gp[i] - exact[i]).abs() <= 4.0 * gp_se[i] + 1e-12, "gpomdp[{i}]: {} vs {}", gp[i], exact[i]);
    }
}

#[test]
fn gpomdp_baseline_reduces_variance() {
    let mdp = corpus_mdp(10).unwrap();
    let policy = random_policy(&mdp, 10).unwrap();
    let env = TabularEnv::new(mdp.clone(), HORIZON).unwrap();
    let spread = |baseline: bool| -> f64 {
        let (_, se) = replicate(
            |r| {
                let b = collect(&env, &policy, 50, HORIZON, mdp.gamma(), r, Execution::Parallel).unwrap();
                grad_eta_gpomdp(&b, &policy, 0.5, 0.0, Normalization::AsPrinted, baseline, Execution::Parallel)
                    .unwrap()
                    .vector
            },
            200,
        );
        se.norm_squared()
    };
    let (with, without) = (spread(true), spread(false));
    assert!(with < without, "baseline {with} vs none {without}");
}
