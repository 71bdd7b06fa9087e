use choicegp::data::{encode_pairs, ChoiceDataset, ChoiceObservation, ObjectTable};
use choicegp::likelihood::{
    batch_likelihood, grad_log_lik, log_lik_dataset, log_lik_observation, probit_log_lik, single_utility_likelihood,
    LatentEmbedding, LikelihoodScale, PROB_FLOOR,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn table(t: usize) -> ObjectTable {
    ObjectTable::from_rows(&(0..t).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap()
}

/// (t, observations) where each observation is a shuffled set with a
/// chosen prefix.
fn dataset_strategy(max_t: usize, max_m: usize) -> impl Strategy<Value = ChoiceDataset> {
    (2usize..=max_t).prop_flat_map(move |t| {
        let obs = (2usize..=t.min(6))
            .prop_flat_map(move |size| {
                (
                    Just((0..t).collect::<Vec<_>>()).prop_shuffle(),
                    1usize..=size,
                    Just(size),
                )
            })
            .prop_map(|(perm, n_chosen, size)| ChoiceObservation::new(perm[..size].to_vec(), perm[..n_chosen].to_vec()));
        prop::collection::vec(obs, 1..=max_m).prop_map(move |o| ChoiceDataset::new(table(t), o).unwrap())
    })
}

fn embedding(t: usize, d: usize, vals: &[f64]) -> LatentEmbedding {
    LatentEmbedding::new(DMatrix::from_fn(t, d, |i, j| vals[(i * d + j) % vals.len()])).unwrap()
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn encoding_round_trip(ds in dataset_strategy(12, 6)) {
        let enc = encode_pairs(&ds);
        prop_assert_eq!(enc.n_observations(), ds.len());
        for (k, o) in ds.observations().iter().enumerate() {
            let (c, r) = enc.decode(k);
            prop_assert_eq!(sorted(c), sorted(o.chosen_indices.clone()));
            prop_assert_eq!(sorted(r), sorted(o.rejected()));
            let span = &enc.observation_offsets[k];
            let n = o.chosen_indices.len();
            prop_assert_eq!(span.pairs.len(), n * (n - 1) / 2);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn factors_are_probabilities(
        ds in dataset_strategy(8, 5),
        d in 1usize..=3,
        vals in prop::collection::vec(-2.0f64..2.0, 24),
        sigma in 0.05f64..2.0,
    ) {
        let t = ds.objects().len();
        let u = embedding(t, d, &vals);
        let s = LikelihoodScale::new(sigma).unwrap();
        let mut total = 0.0;
        for o in ds.observations() {
            let v = log_lik_observation(o, &u, s);
            prop_assert!(v.is_finite());
            prop_assert!(v < 0.0);
            // each factor is clamped at the floor
            let n = o.chosen_indices.len();
            let factors = n * (n - 1) / 2 + o.rejected().len();
            prop_assert!(v >= factors as f64 * PROB_FLOOR.ln() - 1e-9);
            total += v;
        }
        prop_assert!((total - log_lik_dataset(&ds, &u, s)).abs() < 1e-9);
    }

    #[test]
    fn column_permutation_invariance(
        ds in dataset_strategy(8, 5),
        vals in prop::collection::vec(-2.0f64..2.0, 32),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        sigma in 0.1f64..2.0,
    ) {
        let t = ds.objects().len();
        let u = embedding(t, 4, &vals);
        let s = LikelihoodScale::new(sigma).unwrap();
        let a = log_lik_dataset(&ds, &u, s);
        let b = log_lik_dataset(&ds, &u.permute_columns(&perm), s);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn translation_invariance(
        ds in dataset_strategy(8, 5),
        vals in prop::collection::vec(-2.0f64..2.0, 16),
        shift in -3.0f64..3.0,
        sigma in 0.1f64..2.0,
    ) {
        let t = ds.objects().len();
        let u = embedding(t, 2, &vals);
        let mut moved = u.values().clone();
        for i in 0..t {
            moved[(i, 1)] += shift;
        }
        let s = LikelihoodScale::new(sigma).unwrap();
        let a = log_lik_dataset(&ds, &u, s);
        let b = log_lik_dataset(&ds, &LatentEmbedding::new(moved).unwrap(), s);
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn raising_a_lone_chosen_object_helps(
        others in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..5),
        base in prop::collection::vec(-1.0f64..1.0, 2),
        bump in 0.01f64..1.0,
        sigma in 0.2f64..1.5,
    ) {
        let t = others.len() + 1;
        let obs = ChoiceObservation::new((0..t).collect(), vec![0]);
        let mut rows = vec![base.clone()];
        rows.extend(others.iter().cloned());
        let lo = LatentEmbedding::from_rows(&rows).unwrap();
        rows[0] = base.iter().map(|b| b + bump).collect();
        let hi = LatentEmbedding::from_rows(&rows).unwrap();
        let s = LikelihoodScale::new(sigma).unwrap();
        prop_assert!(log_lik_observation(&obs, &hi, s) >= log_lik_observation(&obs, &lo, s));
    }

    /// Averaging over a shared shift is positively correlated across the
    /// rejected objects, so the batch value dominates the product of the
    /// single-comparison marginals.
    #[test]
    fn batch_dominates_product_of_marginals(
        o in -2.0f64..2.0,
        rejected in prop::collection::vec(-2.0f64..2.0, 1..=6),
        sigma in 0.05f64..2.0,
    ) {
        let batch = batch_likelihood(o, &rejected, sigma, 64).unwrap();
        let marginals: f64 = rejected
            .iter()
            .map(|v| choicegp::numeric::norm_cdf((o - v) / (std::f64::consts::SQRT_2 * sigma)))
            .product();
        prop_assert!(marginals <= batch + 1e-9, "{marginals} > {batch}");
        prop_assert!(batch <= 1.0 + 1e-12);
    }
}

#[test]
fn batch_single_rejection_closed_form() {
    for &(o, v, sigma) in &[(0.3, -0.2, 0.5), (0.0, 0.0, 1.0), (-1.0, 0.4, 0.2), (1.2, 1.1, 2.0)] {
        let want = choicegp::numeric::norm_cdf((o - v) / (std::f64::consts::SQRT_2 * sigma));
        let got = batch_likelihood(o, &[v], sigma, 64).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    assert!(batch_likelihood(0.0, &[0.0], 1.0, 8).is_err());
}

/// With one rejected object the noise-model value is Φ(Δ/(√2σ)), which is
/// below Φ(Δ/σ) whenever Δ > 0: the single-utility product is not a lower
/// bound in general.
#[test]
fn single_utility_product_can_exceed_batch() {
    let single = single_utility_likelihood(0.0, &[-0.3], 0.05);
    let batch = batch_likelihood(0.0, &[-0.3], 0.05, 64).unwrap();
    assert!(single > batch + 1e-6, "{single} vs {batch}");
}

/// d = 1 pairwise data within the range where no factor reaches the floor.
#[test]
fn pairwise_single_utility_is_probit() {
    use choicegp::rng::stream_rng;
    use rand::Rng;
    for seed in 0..200 {
        let mut rng = stream_rng(seed, 0);
        let t = rng.random_range(2..=10);
        let u: Vec<f64> = (0..t).map(|_| rng.random_range(-1.7..1.7)).collect();
        let sigma = rng.random_range(0.5..2.0);
        let mut pairs = Vec::new();
        let mut obs = Vec::new();
        for _ in 0..rng.random_range(1..=15) {
            let a = rng.random_range(0..t);
            let b = (a + rng.random_range(1..t)) % t;
            pairs.push((a, b));
            obs.push(ChoiceObservation::new(vec![a, b], vec![a]));
        }
        let ds = ChoiceDataset::new(table(t), obs).unwrap();
        let emb = LatentEmbedding::new(DMatrix::from_column_slice(t, 1, &u)).unwrap();
        let got = log_lik_dataset(&ds, &emb, LikelihoodScale::new(sigma).unwrap());
        let want = probit_log_lik(&pairs, &u, sigma);
        assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_finite_differences(
        ds in dataset_strategy(10, 5),
        d in 1usize..=2,
        vals in prop::collection::vec(-1.2f64..1.2, 20),
        sigma in 0.4f64..1.5,
    ) {
        let t = ds.objects().len();
        let u = embedding(t, d, &vals);
        let s = LikelihoodScale::new(sigma).unwrap();
        let g = grad_log_lik(&ds, &u, s);
        prop_assert!((g.value - log_lik_dataset(&ds, &u, s)).abs() < 1e-12 * g.value.abs().max(1.0));
        let h = 1e-5;
        let f = |m: &DMatrix<f64>| log_lik_dataset(&ds, &LatentEmbedding::new(m.clone()).unwrap(), s);
        for i in 0..t {
            for j in 0..d {
                let mut p = u.values().clone();
                let mut m = u.values().clone();
                p[(i, j)] += h;
                m[(i, j)] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                let a = g.utilities[(i, j)];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                prop_assert!(rel < 1e-5, "u[{i},{j}]: {a} vs {fd}");
            }
        }
        let fs = |x: f64| log_lik_dataset(&ds, &u, LikelihoodScale::new(x).unwrap());
        let fd = (fs(sigma + h) - fs(sigma - h)) / (2.0 * h);
        let rel = (g.sigma - fd).abs() / g.sigma.abs().max(fd.abs()).max(1e-3);
        prop_assert!(rel < 1e-5, "sigma: {} vs {fd}", g.sigma);
    }
}
