//! Ground-truth utilities, the strong-Pareto choice rule, and data generators.
//!
//! All utilities follow "higher is better"; minimization benchmarks are
//! negated when evaluated.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, ChoiceObservation, ObjectTable, Points};
use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, KernelParams};
use crate::rng::stream_rng;

/// `a` strongly Pareto-dominates `b`: no coordinate worse, at least one better.
#[inline]
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// For each row of `utils` (one object per row), whether no other row dominates it.
pub fn undominated_mask(utils: &DMatrix<f64>) -> Vec<bool> {
    let rows: Vec<Vec<f64>> = utils.row_iter().map(|r| r.iter().copied().collect()).collect();
    undominated_rows(&rows)
}

pub(crate) fn undominated_rows(rows: &[Vec<f64>]) -> Vec<bool> {
    (0..rows.len())
        .map(|v| !(0..rows.len()).any(|o| o != v && dominates(&rows[o], &rows[v])))
        .collect()
}

/// Split the rows of `utils` into (chosen, rejected) by strong Pareto dominance.
pub fn pareto_choice(utils: &DMatrix<f64>) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = utils.nrows();
    for a in 0..n {
        for b in a + 1..n {
            if utils.row(a) == utils.row(b) {
                return Err(Error::TieDetected(a, b));
            }
        }
    }
    let mask = undominated_mask(utils);
    let chosen = (0..n).filter(|&i| mask[i]).collect();
    let rejected = (0..n).filter(|&i| !mask[i]).collect();
    Ok((chosen, rejected))
}

type Evaluator = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A deterministic map from features to a vector of `d` utilities.
#[derive(Clone)]
pub struct UtilityBank {
    d: usize,
    description: String,
    evaluator: Arc<Evaluator>,
}

impl fmt::Debug for UtilityBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UtilityBank")
            .field("d", &self.d)
            .field("description", &self.description)
            .finish()
    }
}

impl UtilityBank {
    pub fn new(
        d: usize,
        description: impl Into<String>,
        evaluator: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            d,
            description: description.into(),
            evaluator: Arc::new(evaluator),
        }
    }

    /// `u(x) = [cos 2x, −sin 2x]` on scalar inputs.
    pub fn example1() -> Self {
        Self::new(2, "u(x) = [cos 2x, -sin 2x]", |x| {
            vec![(2.0 * x[0]).cos(), -(2.0 * x[0]).sin()]
        })
    }

    pub fn test_suite(problem: TestProblem, n_objectives: usize) -> Self {
        Self::new(n_objectives, format!("{problem} (negated)"), move |x| {
            test_suite_utility(problem, n_objectives, x).expect("input inside the unit cube")
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        (self.evaluator)(x)
    }

    /// `n × d` utilities of every point.
    pub fn evaluate_all(&self, points: &Points) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(points.len(), self.d);
        for (i, x) in points.rows().enumerate() {
            for (j, v) in self.evaluate(x).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Sidecar describing how a synthetic dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub generator: String,
    pub description: String,
    pub true_d: usize,
    pub seed: u64,
    /// True utilities at every object, one row per object.
    pub utilities: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_states: Option<Vec<usize>>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Draw `m_sets` offered sets of `set_size` objects (uniform, without
/// replacement inside each set) and label them with the Pareto rule.
pub fn sample_choice_sets(
    utils: &DMatrix<f64>,
    m_sets: usize,
    set_size: usize,
    seed: u64,
) -> Result<Vec<ChoiceObservation>> {
    let n = utils.nrows();
    if set_size < 2 || set_size > n {
        return Err(Error::InvalidArgument(format!(
            "set size must be in 2..={n}, got {set_size}"
        )));
    }
    (0..m_sets)
        .map(|k| {
            let mut rng = stream_rng(seed, 1 + k as u64);
            let set: Vec<usize> = index::sample(&mut rng, n, set_size).into_vec();
            let sub = DMatrix::from_fn(set_size, utils.ncols(), |i, j| utils[(set[i], j)]);
            let (chosen, _) = pareto_choice(&sub)?;
            let chosen = chosen.into_iter().map(|i| set[i]).collect();
            Ok(ChoiceObservation::new(set, chosen))
        })
        .collect()
}

/// Scalar inputs uniform on `domain`, labelled by [`UtilityBank::example1`].
pub fn gen_example1(
    n_points: usize,
    m_sets: usize,
    set_size: usize,
    domain: (f64, f64),
    seed: u64,
) -> Result<(ChoiceDataset, GroundTruth)> {
    if set_size > n_points {
        return Err(Error::InvalidArgument(format!(
            "set size {set_size} exceeds the number of points {n_points}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let xs: Vec<f64> = (0..n_points).map(|_| rng.random_range(domain.0..domain.1)).collect();
    let points = Points::new(xs, 1)?;
    let bank = UtilityBank::example1();
    labelled_dataset("example1", &bank, points, m_sets, set_size, seed)
}

fn labelled_dataset(
    generator: &str,
    bank: &UtilityBank,
    points: Points,
    m_sets: usize,
    set_size: usize,
    seed: u64,
) -> Result<(ChoiceDataset, GroundTruth)> {
    let utils = bank.evaluate_all(&points);
    let observations = sample_choice_sets(&utils, m_sets, set_size, seed)?;
    let dataset = ChoiceDataset::new(ObjectTable::new(points)?, observations)?;
    let truth = GroundTruth {
        generator: generator.into(),
        description: bank.description().into(),
        true_d: bank.latent_dim(),
        seed,
        utilities: matrix_rows(&utils),
        latent_states: None,
    };
    Ok((dataset, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestProblem {
    Zdt1,
    Dtlz2,
}

impl fmt::Display for TestProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestProblem::Zdt1 => f.write_str("zdt1"),
            TestProblem::Dtlz2 => f.write_str("dtlz2"),
        }
    }
}

impl std::str::FromStr for TestProblem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zdt1" => Ok(TestProblem::Zdt1),
            "dtlz2" => Ok(TestProblem::Dtlz2),
            other => Err(Error::InvalidArgument(format!(
                "unknown test problem {other:?} (available: zdt1, dtlz2)"
            ))),
        }
    }
}

/// Negated objective values of a multi-objective benchmark.
pub fn test_suite_utility(problem: TestProblem, n_objectives: usize, x: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::DomainViolation(format!("{v}")));
    }
    let objectives = match problem {
        TestProblem::Zdt1 => {
            if n_objectives != 2 {
                return Err(Error::InvalidArgument("zdt1 has exactly 2 objectives".into()));
            }
            if x.len() < 2 {
                return Err(Error::InvalidArgument("zdt1 needs at least 2 variables".into()));
            }
            let f1 = x[0];
            let g = 1.0 + 9.0 * x[1..].iter().sum::<f64>() / (x.len() - 1) as f64;
            vec![f1, g * (1.0 - (f1 / g).sqrt())]
        }
        TestProblem::Dtlz2 => {
            let m = n_objectives;
            if m < 2 || x.len() < m {
                return Err(Error::InvalidArgument(format!(
                    "dtlz2 with {m} objectives needs at least {m} variables"
                )));
            }
            let g: f64 = x[m - 1..].iter().map(|v| (v - 0.5) * (v - 0.5)).sum();
            (0..m)
                .map(|i| {
                    let mut f = 1.0 + g;
                    for v in &x[..m - 1 - i] {
                        f *= (v * FRAC_PI_2).cos();
                    }
                    if i > 0 {
                        f *= (x[m - 1 - i] * FRAC_PI_2).sin();
                    }
                    f
                })
                .collect()
        }
    };
    Ok(objectives.into_iter().map(|f| -f).collect())
}

/// Inputs uniform on `[0,1]^c`, labelled by a negated benchmark.
pub fn gen_benchmark(
    problem: TestProblem,
    n_objectives: usize,
    n_points: usize,
    n_features: usize,
    m_sets: usize,
    set_size: usize,
    seed: u64,
) -> Result<(ChoiceDataset, GroundTruth)> {
    // validate once up front instead of panicking inside the evaluator
    test_suite_utility(problem, n_objectives, &vec![0.5; n_features])?;
    let mut rng = stream_rng(seed, 0);
    let xs: Vec<f64> = (0..n_points * n_features).map(|_| rng.random::<f64>()).collect();
    let points = Points::new(xs, n_features)?;
    let bank = UtilityBank::test_suite(problem, n_objectives);
    labelled_dataset(&problem.to_string(), &bank, points, m_sets, set_size, seed)
}

/// Objects with latent states and one kernel-expansion utility per
/// unordered pair of states.
#[derive(Debug, Clone)]
pub struct KernelMixture {
    pub objects: ObjectTable,
    pub states: Vec<usize>,
    pub n_states: usize,
    pub bank: UtilityBank,
    /// `n × L(L+1)/2` utilities of the objects.
    pub utilities: DMatrix<f64>,
}

/// Column of `u_{z,z'}` in the bank (symmetric in its arguments).
pub fn pair_utility_index(z: usize, z2: usize, n_states: usize) -> usize {
    let (a, b) = if z <= z2 { (z, z2) } else { (z2, z) };
    // row-major upper triangle including the diagonal
    a * n_states - a * (a + 1) / 2 + b
}

/// `u_{z,z'}(x) = Σ_j α_j^{z,z'} k(x, x_j)` with `α ~ N(0, I_n)` and
/// `u_{z,z'} = u_{z',z}`; objects `x_j ~ N(0, I_c)` get uniform states.
pub fn gen_kernel_mixture(
    n: usize,
    c: usize,
    n_states: usize,
    kernel: &KernelParams,
    seed: u64,
) -> Result<KernelMixture> {
    if n_states == 0 {
        return Err(Error::InvalidArgument("need at least one latent state".into()));
    }
    if kernel.n_features() != c {
        return Err(Error::InvalidArgument(format!(
            "kernel has {} lengthscales for {c} features",
            kernel.n_features()
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let xs: Vec<f64> = (0..n * c).map(|_| StandardNormal.sample(&mut rng)).collect();
    let points = Points::new(xs, c)?;
    let states: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_states)).collect();
    let n_utils = n_states * (n_states + 1) / 2;
    let alpha = DMatrix::<f64>::from_fn(n, n_utils, |_, _| StandardNormal.sample(&mut rng));

    let k = cross_kernel(&points, &points, kernel, 0.0);
    let utilities = &k * &alpha;

    let centers = points.clone();
    let kp = kernel.clone();
    let bank = UtilityBank::new(
        n_utils,
        format!("kernel mixture, L={n_states}"),
        move |x| {
            let xp = Points::new(x.to_vec(), x.len()).expect("non-empty input");
            let kx = cross_kernel(&xp, &centers, &kp, 0.0);
            (&kx * &alpha).iter().copied().collect()
        },
    );
    Ok(KernelMixture {
        objects: ObjectTable::new(points)?,
        states,
        n_states,
        bank,
        utilities,
    })
}

impl KernelMixture {
    pub fn ground_truth(&self, seed: u64) -> GroundTruth {
        GroundTruth {
            generator: "kernel_mixture".into(),
            description: self.bank.description().into(),
            true_d: self.bank.latent_dim(),
            seed,
            utilities: matrix_rows(&self.utilities),
            latent_states: Some(self.states.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairMode {
    /// forced choice through the utility of the two objects' states
    D1,
    /// strong Pareto choice over every state-pair utility
    D2,
}

impl std::str::FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D1" | "d1" => Ok(PairMode::D1),
            "D2" | "d2" => Ok(PairMode::D2),
            other => Err(Error::InvalidArgument(format!("unknown pair mode {other:?} (D1 or D2)"))),
        }
    }
}

/// `m` distinct unordered pairs out of `n` objects.
pub fn sample_pairs(n: usize, m: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let all = n * (n - 1) / 2;
    if m > all {
        return Err(Error::InvalidArgument(format!("cannot draw {m} distinct pairs from {n} objects")));
    }
    let mut rng = stream_rng(seed, 0);
    let picks = index::sample(&mut rng, all, m).into_vec();
    Ok(picks.into_iter().map(|p| unrank_pair(p, n)).collect())
}

/// All `n(n−1)/2` unordered pairs.
pub fn dense_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn unrank_pair(mut p: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while p >= n - 1 - i {
        p -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + p)
}

/// Label pairs of objects as two-object choice observations.
pub fn gen_pairwise_datasets(
    mixture: &KernelMixture,
    pairs: &[(usize, usize)],
    mode: PairMode,
) -> Result<ChoiceDataset> {
    let u = &mixture.utilities;
    let observations = pairs
        .iter()
        .map(|&(i, j)| {
            let chosen = match mode {
                PairMode::D1 => {
                    let col = pair_utility_index(mixture.states[i], mixture.states[j], mixture.n_states);
                    if u[(i, col)] > u[(j, col)] {
                        vec![i]
                    } else {
                        vec![j]
                    }
                }
                PairMode::D2 => {
                    let ri: Vec<f64> = u.row(i).iter().copied().collect();
                    let rj: Vec<f64> = u.row(j).iter().copied().collect();
                    if dominates(&ri, &rj) {
                        vec![i]
                    } else if dominates(&rj, &ri) {
                        vec![j]
                    } else {
                        vec![i, j]
                    }
                }
            };
            ChoiceObservation::new(vec![i, j], chosen)
        })
        .collect();
    ChoiceDataset::new(mixture.objects.clone(), observations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConversionMode {
    Random,
    Majority,
}

/// Resolve incomparable pairs into forced preferences.
///
/// Singleton choices pass through. A pair with both objects chosen becomes a
/// coin flip (`Random`) or goes to the object that is better on more columns
/// of `outputs` (`Majority`).
pub fn choices_to_preferences(
    dataset: &ChoiceDataset,
    outputs: &DMatrix<f64>,
    mode: ConversionMode,
    seed: u64,
) -> Result<ChoiceDataset> {
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(dataset.len());
    for (k, obs) in dataset.observations().iter().enumerate() {
        if obs.set_indices.len() != 2 {
            return Err(Error::InvalidObservation {
                observation: k,
                reason: "preference conversion needs two-object sets".into(),
            });
        }
        let (i, j) = (obs.set_indices[0], obs.set_indices[1]);
        let winner = if obs.chosen_indices.len() == 1 {
            obs.chosen_indices[0]
        } else {
            match mode {
                ConversionMode::Random => {
                    if rng.random::<bool>() {
                        i
                    } else {
                        j
                    }
                }
                ConversionMode::Majority => {
                    let wins_i = (0..outputs.ncols()).filter(|&c| outputs[(i, c)] > outputs[(j, c)]).count();
                    let wins_j = (0..outputs.ncols()).filter(|&c| outputs[(j, c)] > outputs[(i, c)]).count();
                    match wins_i.cmp(&wins_j) {
                        std::cmp::Ordering::Greater => i,
                        std::cmp::Ordering::Less => j,
                        std::cmp::Ordering::Equal => return Err(Error::MajorityTie(i, j)),
                    }
                }
            }
        };
        out.push(ChoiceObservation::new(vec![i, j], vec![winner]));
    }
    dataset.with_observations(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn worked_example() {
        let (c, r) = pareto_choice(&mat(&[&[1.0, 0.0], &[0.54, -0.84], &[0.0, 1.0]])).unwrap();
        assert_eq!(c, vec![0, 2]);
        assert_eq!(r, vec![1]);
    }

    #[test]
    fn single_utility_picks_argmax() {
        let (c, r) = pareto_choice(&mat(&[&[0.1], &[2.0], &[-1.0], &[1.5]])).unwrap();
        assert_eq!(c, vec![1]);
        assert_eq!(r, vec![0, 2, 3]);
    }

    #[test]
    fn single_object() {
        let (c, r) = pareto_choice(&mat(&[&[0.3, 0.2]])).unwrap();
        assert_eq!(c, vec![0]);
        assert!(r.is_empty());
    }

    #[test]
    fn ties_are_errors() {
        assert!(matches!(
            pareto_choice(&mat(&[&[1.0, 2.0], &[0.0, 0.0], &[1.0, 2.0]])),
            Err(Error::TieDetected(0, 2))
        ));
    }

    #[test]
    fn example1_utility_at_zero() {
        assert_eq!(UtilityBank::example1().evaluate(&[0.0]), vec![1.0, -0.0]);
    }

    #[test]
    fn example1_shape() {
        let (ds, truth) = gen_example1(200, 50, 3, (-4.5, 4.5), 7).unwrap();
        assert_eq!(ds.objects().len(), 200);
        assert_eq!(ds.len(), 50);
        assert!(ds.observations().iter().all(|o| o.set_indices.len() == 3));
        assert_eq!(truth.true_d, 2);
        assert!(ds.objects().points().rows().all(|x| (-4.5..4.5).contains(&x[0])));
    }

    #[test]
    fn zdt1_at_origin() {
        let u = test_suite_utility(TestProblem::Zdt1, 2, &[0.0; 6]).unwrap();
        assert_eq!(u, vec![-0.0, -1.0]);
    }

    #[test]
    fn dtlz2_lies_on_unit_sphere() {
        let x = [0.1, 0.7, 0.3, 0.9, 0.5, 0.5, 0.5];
        let u = test_suite_utility(TestProblem::Dtlz2, 5, &x).unwrap();
        let r: f64 = u.iter().map(|v| v * v).sum();
        assert!((r - 1.0).abs() < 1e-14);
    }

    #[test]
    fn domain_violation() {
        assert!(matches!(
            test_suite_utility(TestProblem::Zdt1, 2, &[-0.1, 0.2]),
            Err(Error::DomainViolation(_))
        ));
    }

    #[test]
    fn pair_index_is_symmetric_and_dense() {
        let l = 3;
        let mut seen = [false; 6];
        for z in 0..l {
            for z2 in 0..l {
                let a = pair_utility_index(z, z2, l);
                assert_eq!(a, pair_utility_index(z2, z, l));
                seen[a] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn unrank_covers_all_pairs() {
        let n = 6;
        let got: Vec<_> = (0..15).map(|p| unrank_pair(p, n)).collect();
        assert_eq!(got, dense_pairs(n));
    }

    #[test]
    fn kernel_mixture_bank_matches_table() {
        let kp = KernelParams::isotropic(2, 1.0).unwrap();
        let mix = gen_kernel_mixture(30, 2, 2, &kp, 3).unwrap();
        assert_eq!(mix.bank.latent_dim(), 3);
        for i in [0, 7, 29] {
            let via_bank = mix.bank.evaluate(mix.objects.row(i));
            for (c, v) in via_bank.iter().enumerate() {
                assert!((v - mix.utilities[(i, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn one_state_makes_d1_and_d2_identical() {
        let kp = KernelParams::isotropic(2, 1.0).unwrap();
        let mix = gen_kernel_mixture(40, 2, 1, &kp, 11).unwrap();
        let pairs = sample_pairs(40, 60, 2).unwrap();
        let d1 = gen_pairwise_datasets(&mix, &pairs, PairMode::D1).unwrap();
        let d2 = gen_pairwise_datasets(&mix, &pairs, PairMode::D2).unwrap();
        assert_eq!(d1, d2);
        assert!(d2.observations().iter().all(|o| o.chosen_indices.len() == 1));
    }

    #[test]
    fn conversion_rules() {
        let ds = ChoiceDataset::new(
            ObjectTable::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
            vec![
                ChoiceObservation::new(vec![0, 1], vec![1]),
                ChoiceObservation::new(vec![1, 2], vec![1, 2]),
            ],
        )
        .unwrap();
        // object 1 better than 2 on outputs 0 and 1, worse on output 2
        let outputs = mat(&[&[0.0, 0.0, 0.0], &[1.0, 1.0, 0.0], &[0.5, 0.5, 1.0]]);
        let maj = choices_to_preferences(&ds, &outputs, ConversionMode::Majority, 0).unwrap();
        assert_eq!(maj.observations()[0].chosen_indices, vec![1]);
        assert_eq!(maj.observations()[1].chosen_indices, vec![1]);

        let r1 = choices_to_preferences(&ds, &outputs, ConversionMode::Random, 5).unwrap();
        let r2 = choices_to_preferences(&ds, &outputs, ConversionMode::Random, 5).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.observations()[0].chosen_indices, vec![1]);

        let even = mat(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            choices_to_preferences(&ds, &even, ConversionMode::Majority, 0),
            Err(Error::MajorityTie(1, 2))
        ));
    }
}
