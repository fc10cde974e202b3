mod common;

use baryfair::barycenter::{approximate_barycenter, barycenter_objective, weights_from_sizes};
use baryfair::discrete_ot::{w2_squared, DiscreteDistribution};
use baryfair::metrics::{
    multiclass_dp_gap, pairwise_w2, per_coordinate_baseline, unfairness, BarycenterReference,
};
use baryfair::postprocess::{FittedPostprocessor, GroupedDataset, Mode, Record};
use baryfair::synth::{generate, Scenario};
use common::*;
use ndarray::array;
use proptest::prelude::*;
use rand::Rng;

/// Baseline computed straight from the definitions: F counts values `<= v`,
/// Q scans the sorted sample for the first value whose CDF reaches `t`.
fn baseline_oracle(d: &GroupedDataset) -> Vec<Vec<f64>> {
    let parts = d.partition();
    let sizes: Vec<usize> = parts.values().map(Vec::len).collect();
    let p = weights_from_sizes(&sizes);
    let recs = d.records();
    let mut out = d.outputs();
    for j in 0..d.dim() {
        let samples: Vec<Vec<f64>> = parts
            .values()
            .map(|idx| idx.iter().map(|&i| recs[i].output[j]).collect())
            .collect();
        let cdf = |s: &[f64], y: f64| s.iter().filter(|&&v| v <= y).count() as f64 / s.len() as f64;
        let quantile = |s: &[f64], t: f64| {
            let mut sorted = s.to_vec();
            sorted.sort_by(f64::total_cmp);
            *sorted.iter().find(|&&y| cdf(s, y) >= t - 1e-12).unwrap()
        };
        for (s, idx) in parts.values().enumerate() {
            for &i in idx {
                let t = cdf(&samples[s], recs[i].output[j]);
                out[i][j] = samples
                    .iter()
                    .zip(&p)
                    .map(|(o, w)| w * quantile(o, t))
                    .sum();
            }
        }
    }
    out
}

#[test]
fn identical_groups_have_zero_unfairness() {
    let g = random_distribution(&mut rng(1), 5, 2, true);
    let u = unfairness(&[g.clone(), g.clone(), g], &[0.2, 0.3, 0.5], 1_000).unwrap();
    assert!(u.value < 1e-14);
}

#[test]
fn unfairness_zero_iff_groups_coincide() {
    let mut r = rng(2);
    for _ in 0..20 {
        let pts: Vec<Vec<f64>> = (0..4)
            .map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
            .collect();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        let a = DiscreteDistribution::uniform_from_points(&pts).unwrap();
        let b = DiscreteDistribution::uniform_from_points(&shuffled).unwrap();
        assert!(unfairness(&[a.clone(), b], &[0.5, 0.5], 100).unwrap().value < 1e-14);
        let mut moved = pts.clone();
        moved[0][1] += 0.01;
        let c = DiscreteDistribution::uniform_from_points(&moved).unwrap();
        assert!(unfairness(&[a, c], &[0.5, 0.5], 100).unwrap().value > 1e-6);
    }
}

#[test]
fn unfairness_reference_brackets() {
    let mut r = rng(3);
    for trial in 0..15 {
        let groups: Vec<DiscreteDistribution> = (0..3)
            .map(|_| random_distribution(&mut r, 3, 2, true))
            .collect();
        let p = [0.3, 0.3, 0.4];
        let exact = unfairness(&groups, &p, 1_000).unwrap();
        assert_eq!(exact.reference, BarycenterReference::Exact);
        let approx = unfairness(&groups, &p, 1).unwrap();
        assert_eq!(approx.reference, BarycenterReference::Approximate);
        if trial < 3 {
            let oracle = brute_force_multi_marginal(&groups, &p);
            assert!((exact.value - oracle).abs() < 1e-9);
        }
        assert!(exact.value <= approx.value + 1e-12);
        assert!(approx.value <= 2.0 * exact.value + 1e-9);
    }
}

#[test]
fn approximate_reference_is_the_objective_at_the_approximation() {
    let groups: Vec<DiscreteDistribution> = (0..2)
        .map(|s| random_distribution(&mut rng(40 + s), 6, 3, true))
        .collect();
    let p = [0.5, 0.5];
    let bary = approximate_barycenter(&groups, &p).unwrap().barycenter;
    let u = unfairness(&groups, &p, 0).unwrap();
    assert_eq!(u.value, barycenter_objective(&bary, &groups, &p).unwrap());
}

#[test]
fn pairwise_matrix_properties() {
    let mut r = rng(4);
    let groups: Vec<DiscreteDistribution> = (0..4)
        .map(|_| random_distribution(&mut r, 5, 2, false))
        .collect();
    let m = pairwise_w2(&groups).unwrap();
    for s in 0..4 {
        assert_eq!(m[[s, s]], 0.0);
        for t in 0..4 {
            assert_eq!(m[[s, t]], m[[t, s]]);
            assert!(m[[s, t]] >= 0.0);
            for u in 0..4 {
                assert!(m[[s, t]].sqrt() <= m[[s, u]].sqrt() + m[[u, t]].sqrt() + 1e-9);
            }
        }
    }
    let two = pairwise_w2(&groups[..2]).unwrap();
    assert_eq!(two[[0, 1]], w2_squared(&groups[0], &groups[1]).unwrap());
    let same = pairwise_w2(&[groups[0].clone(), groups[0].clone()]).unwrap();
    assert!(same.iter().all(|v| v.abs() < 1e-14));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dp_gap_is_scale_invariant(
        outputs in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 4..30),
        scale in 0.01..100.0f64,
        split in any::<u64>(),
    ) {
        let groups: Vec<&str> = (0..outputs.len()).map(|i| if (split >> (i % 64)) & 1 == 1 { "a" } else { "b" }).collect();
        let scaled: Vec<Vec<f64>> = outputs.iter().map(|o| o.iter().map(|v| v * scale).collect()).collect();
        let g = multiclass_dp_gap(&outputs, &groups).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert_eq!(g, multiclass_dp_gap(&scaled, &groups).unwrap());
    }

    #[test]
    fn baseline_matches_definition(seed in any::<u64>(), sizes in prop::collection::vec(1usize..8, 1..4), k in 1usize..3) {
        let mut r = rng(seed);
        let mut d = random_dataset(&mut r, &sizes, k);
        // Inject ties on coordinate 0.
        if d.len() > 2 {
            let mut recs = d.records().to_vec();
            recs[1].output[0] = recs[0].output[0];
            d = GroupedDataset::new(recs).unwrap();
        }
        let got = per_coordinate_baseline(&d).unwrap();
        let want = baseline_oracle(&d);
        for (a, b) in got.iter().zip(&want) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn one_dimensional_tab_equals_baseline(seed in any::<u64>(), n in 1usize..12, m in 2usize..4) {
        let d = random_dataset(&mut rng(seed), &vec![n; m], 1);
        let f = FittedPostprocessor::fit(&d, Mode::Barycentric, 0).unwrap();
        let baseline = per_coordinate_baseline(&d).unwrap();
        for (r, b) in d.records().iter().zip(&baseline) {
            let t = f.transform_in_sample(&r.output, &r.group, 0.0).unwrap();
            prop_assert!((t[0] - b[0]).abs() <= 1e-8, "{} vs {}", t[0], b[0]);
        }
    }
}

#[test]
fn baseline_worked_example() {
    let rec = |v: f64, g: &str| Record {
        output: vec![v],
        group: g.into(),
        label: None,
    };
    let d = GroupedDataset::new(vec![
        rec(0.0, "x"),
        rec(1.0, "x"),
        rec(2.0, "y"),
        rec(3.0, "y"),
    ])
    .unwrap();
    assert_eq!(
        per_coordinate_baseline(&d).unwrap(),
        vec![vec![1.0], vec![2.0], vec![1.0], vec![2.0]]
    );
}

#[test]
fn figure1_marginals_match_but_joints_differ() {
    let d = generate(Scenario::Figure1, 300, 7).unwrap();
    let groups = uniform_groups(&points_by_group(&d, &d.outputs()));
    let joint = w2_squared(&groups[0], &groups[1]).unwrap();
    for j in 0..2 {
        let coord: Vec<DiscreteDistribution> = groups
            .iter()
            .map(|g| {
                DiscreteDistribution::uniform(
                    g.supports()
                        .column(j)
                        .to_owned()
                        .insert_axis(ndarray::Axis(1)),
                )
                .unwrap()
            })
            .collect();
        let marginal = w2_squared(&coord[0], &coord[1]).unwrap();
        assert!(
            marginal <= 0.05 * joint,
            "coordinate {j}: {marginal} vs joint {joint}"
        );
    }
}

#[test]
fn two_point_masses_example() {
    let a = DiscreteDistribution::uniform(array![[0.0]]).unwrap();
    let b = DiscreteDistribution::uniform(array![[2.0]]).unwrap();
    assert_eq!(unfairness(&[a, b], &[0.5, 0.5], 10).unwrap().value, 1.0);
}
