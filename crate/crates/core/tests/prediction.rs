use choicegp::data::Points;
use choicegp::kernel::KernelParams;
use choicegp::likelihood::LikelihoodScale;
use choicegp::model::FittedModel;
use choicegp::predict::{
    choice_probability, choice_votes, predict_choice_set, predict_latent, Semantics, SetMode,
};
use choicegp::rng::stream_rng;
use choicegp::synthetic::undominated_mask;
use choicegp::vi::VariationalState;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

/// A posterior with random ν and λ over `t` random 2-d inputs.
fn random_model(t: usize, d: usize, seed: u64) -> FittedModel {
    let mut rng = stream_rng(seed, 0);
    let rows: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    let nu = (0..d).map(|_| DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0))).collect();
    let lambda = (0..d).map(|_| DVector::from_fn(t, |_, _| rng.random_range(0.2..5.0))).collect();
    let kernels = vec![KernelParams::new(vec![0.8, 1.3], 1e-6).unwrap()];
    let state = VariationalState::new(nu, lambda, kernels, LikelihoodScale::new(0.3).unwrap()).unwrap();
    FittedModel::new(Points::from_rows(&rows).unwrap(), (0..t).collect(), state).unwrap()
}

#[test]
fn reproduces_the_posterior_at_training_inputs() {
    for seed in 0..5 {
        let model = random_model(25, 2, seed);
        let pg = predict_latent(&model, model.points()).unwrap();
        for i in 0..2 {
            let m = model.posterior_mean().column(i);
            assert!((&pg.mean[i] - m).amax() < 1e-8);
            let s = model.posterior_cov(i);
            assert!((&pg.cov[i] - s).amax() < 1e-8);
        }
    }
}

#[test]
fn reverts_to_the_prior_far_away() {
    let model = random_model(20, 2, 3);
    let far = Points::from_rows(&[vec![60.0, -80.0], vec![-70.0, 90.0]]).unwrap();
    let pg = predict_latent(&model, &far).unwrap();
    for i in 0..2 {
        assert!(pg.mean[i].amax() < 1e-10);
        for j in 0..2 {
            assert!((pg.cov[i][(j, j)] - 1.0).abs() < 1e-5);
        }
        assert!(pg.cov[i][(0, 1)].abs() < 1e-10);
    }
}

#[test]
fn duplicate_of_a_training_point() {
    let model = random_model(15, 1, 8);
    let s = model.posterior_cov(0);
    for j in [0, 7, 14] {
        let x = Points::from_rows(&[model.points().row(j).to_vec()]).unwrap();
        let pg = predict_latent(&model, &x).unwrap();
        assert!(pg.cov[0][(0, 0)] <= s[(j, j)] + 1e-8);
        assert!((pg.mean[0][0] - model.posterior_mean()[(j, 0)]).abs() < 1e-8);
    }
}

#[test]
fn covariance_is_symmetric() {
    let model = random_model(12, 2, 1);
    let x = Points::from_rows(&(0..9).map(|k| vec![k as f64 * 0.3 - 1.2, 0.5]).collect::<Vec<_>>()).unwrap();
    let pg = predict_latent(&model, &x).unwrap();
    for c in &pg.cov {
        assert_eq!(c, &c.transpose());
        assert!(c.clone().symmetric_eigenvalues().min() > -1e-10);
    }
}

#[test]
fn rejects_wrong_feature_count() {
    let model = random_model(5, 1, 0);
    let x = Points::from_rows(&[vec![0.0]]).unwrap();
    assert!(predict_latent(&model, &x).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn means_follow_row_permutations(
        xs in prop::collection::vec((-2.5f64..2.5, -2.5f64..2.5), 2..8),
        perm_seed in 0u64..1000,
        seed in 0u64..20,
    ) {
        let model = random_model(10, 2, seed);
        let rows: Vec<Vec<f64>> = xs.iter().map(|&(a, b)| vec![a, b]).collect();
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut stream_rng(perm_seed, 0));
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&p| rows[p].clone()).collect();
        let a = predict_latent(&model, &Points::from_rows(&rows).unwrap()).unwrap();
        let b = predict_latent(&model, &Points::from_rows(&shuffled).unwrap()).unwrap();
        for i in 0..2 {
            for (j, &p) in perm.iter().enumerate() {
                prop_assert!((b.mean[i][j] - a.mean[i][p]).abs() < 1e-12);
                prop_assert!((b.cov[i][(j, j)] - a.cov[i][(p, p)]).abs() < 1e-12);
            }
        }
    }
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << n)).map(|mask| (0..n).filter(|j| mask >> j & 1 == 1).collect()).collect()
}

#[test]
fn indicator_probabilities_partition_the_samples() {
    let model = random_model(20, 2, 4);
    let x = Points::from_rows(&[vec![0.1, 0.2], vec![-0.5, 1.0], vec![1.2, -0.3], vec![0.0, -1.0]]).unwrap();
    for size in 2..=4 {
        let a: Vec<usize> = (0..size).collect();
        let total: f64 = subsets(size)
            .iter()
            .map(|c| {
                let chosen: Vec<usize> = c.iter().map(|&j| a[j]).collect();
                choice_probability(&model, &x, &a, &chosen, 500, 6, Semantics::Indicator).unwrap()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "|A| = {size}: {total}");
    }
}

#[test]
fn relaxed_probability_is_seed_stable() {
    let model = random_model(20, 2, 5);
    let x = Points::from_rows(&[vec![0.3, 0.2], vec![-0.4, 0.9], vec![1.0, -0.7]]).unwrap();
    let a = [0, 1, 2];
    let n = 4000;
    let p1 = choice_probability(&model, &x, &a, &[0, 2], n, 1, Semantics::Relaxed).unwrap();
    let p2 = choice_probability(&model, &x, &a, &[0, 2], n, 2, Semantics::Relaxed).unwrap();
    assert_eq!(p1, choice_probability(&model, &x, &a, &[0, 2], n, 1, Semantics::Relaxed).unwrap());
    // both estimates have standard error at most sqrt(p(1-p)/n)
    let se = (p1.max(p2) * (1.0 - p1.min(p2)) / n as f64).sqrt().max(1e-4);
    assert!((p1 - p2).abs() < 3.0 * std::f64::consts::SQRT_2 * se, "{p1} vs {p2}");
}

#[test]
fn invalid_choice_arguments() {
    let model = random_model(6, 1, 0);
    let x = Points::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    assert!(choice_probability(&model, &x, &[0, 1], &[], 10, 0, Semantics::Relaxed).is_err());
    assert!(choice_probability(&model, &x, &[0, 1], &[2], 10, 0, Semantics::Relaxed).is_err());
    assert!(predict_choice_set(&model, &x, &[0], 10, 0, SetMode::Marginal).is_err());
}

/// One latent dimension with near-zero predictive variance.
fn ordered_model() -> FittedModel {
    let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 3.0]).collect();
    let k = KernelParams::new(vec![1.0], 1e-6).unwrap();
    let means = [0.0, 1.0, 2.0, -1.0, 0.5];
    // λ large pins the posterior at ν ≈ m for well-separated inputs
    let state = VariationalState::new(
        vec![DVector::from_column_slice(&means)],
        vec![DVector::from_element(5, 1e8)],
        vec![k],
        LikelihoodScale::new(0.1).unwrap(),
    )
    .unwrap();
    FittedModel::new(Points::from_rows(&rows).unwrap(), (0..5).collect(), state).unwrap()
}

#[test]
fn single_utility_predicts_the_best_mean() {
    let model = ordered_model();
    let x = model.points().clone();
    for mode in [SetMode::Exact, SetMode::Marginal] {
        assert_eq!(predict_choice_set(&model, &x, &[0, 1, 2], 300, 1, mode).unwrap(), vec![2]);
        assert_eq!(predict_choice_set(&model, &x, &[0, 3, 4], 300, 1, mode).unwrap(), vec![4]);
    }
    let votes = choice_votes(&model, &x, &[0, 1, 2], 300, 1).unwrap();
    assert_eq!(votes.undominated, vec![0, 0, 300]);
}

#[test]
fn identical_columns_vote_like_one_utility() {
    let mut rng = stream_rng(3, 0);
    for _ in 0..200 {
        let n = rng.random_range(2..8);
        let col: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = DMatrix::from_fn(n, 3, |i, _| col[i]);
        let best = (0..n).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
        let want: Vec<bool> = (0..n).map(|i| i == best).collect();
        assert_eq!(undominated_mask(&u), want);
    }
}

mod fitted {
    use super::*;
    use choicegp::synthetic::gen_example1;
    use choicegp::vi::{fit, FitConfig};

    fn example1_model() -> FittedModel {
        let (ds, _) = gen_example1(200, 150, 3, (-4.5, 4.5), 1).unwrap();
        let cfg = FitConfig {
            iters: 1500,
            mc_samples: 16,
            final_mc_samples: 256,
            seed: 1,
            ..Default::default()
        };
        fit(&ds, 2, &cfg).unwrap().0
    }

    #[test]
    fn example1_pipeline() {
        let model = example1_model();

        // u(0) = [1, 0] and u(2.36) ≈ [0, 1]: neither dominates the other
        let x = Points::from_rows(&[vec![0.0], vec![2.36]]).unwrap();
        for sem in [Semantics::Relaxed, Semantics::Indicator] {
            let p = |c: &[usize]| choice_probability(&model, &x, &[0, 1], c, 2000, 3, sem).unwrap();
            let both = p(&[0, 1]);
            assert!(both > p(&[0]) && both > p(&[1]), "{sem:?}: {both} {} {}", p(&[0]), p(&[1]));
        }

        let mut rng = stream_rng(12, 0);
        let xs: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-4.5..4.5)]).collect();
        let x = Points::from_rows(&xs).unwrap();
        let (mut agree, mut total) = (0, 0);
        for k in 0..60 {
            let size = rng.random_range(2..=5);
            let a: Vec<usize> = rand::seq::index::sample(&mut rng, 200, size).into_vec();
            let votes = choice_votes(&model, &x, &a, 500, k).unwrap();
            let exact = votes.decide(SetMode::Exact);
            let marginal = votes.decide(SetMode::Marginal);
            for v in &a {
                total += 1;
                agree += (exact.contains(v) == marginal.contains(v)) as usize;
            }
        }
        let frac = agree as f64 / total as f64;
        assert!(frac >= 0.9, "exact and marginal agree on {frac}");
    }
}
