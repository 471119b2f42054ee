use abld::clustering::{ab_kmeans, f1_score, karcher_kmeans, le_kmeans, AbKMeansOptions, Variant};
use abld::harness::synth::{split_per_class, wishart_synth, WishartSpec};
use abld::iddl::{le_nearest_neighbor, train_iddl, Ablation, IddlOptions, Loss, Tying};
use abld::SpdMatrix;

#[test]
fn nearest_neighbor_recovers_training_labels() {
    let data = wishart_synth(&WishartSpec::new(3, 4, 5, 1)).unwrap();
    let labels = le_nearest_neighbor(&data, data.data().samples()).unwrap();
    assert_eq!(labels, data.labels());
    let empty = data.subset(&[]);
    assert!(le_nearest_neighbor(&empty, data.data().samples()).is_err());
    assert!(le_nearest_neighbor(&data, &[SpdMatrix::identity(2)]).is_err());
}

#[test]
fn iddl_learns_a_small_problem() {
    let data = wishart_synth(&WishartSpec::new(3, 5, 20, 4)).unwrap();
    let (train, test) = split_per_class(&data, 14);
    for loss in [Loss::Ridge, Loss::Ssvm] {
        let opts = IddlOptions {
            n_atoms: Some(6),
            loss,
            tying: Tying::N,
            max_outer: 5,
            seed: 3,
            ..IddlOptions::default()
        };
        let (model, report) = train_iddl(&train, &opts).unwrap();
        assert!(
            report
                .objective
                .windows(2)
                .all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
            "{loss:?}"
        );
        let acc = model.accuracy(&train).unwrap();
        assert!(acc >= 0.8, "{loss:?} {acc} {:?}", report.objective);
        assert!(model.accuracy(&test).unwrap() >= 0.6, "{loss:?}");
    }
}

#[test]
fn ablations_keep_their_blocks_fixed() {
    let data = wishart_synth(&WishartSpec::new(2, 3, 8, 9)).unwrap();
    let base = IddlOptions {
        n_atoms: Some(4),
        tying: Tying::N,
        max_outer: 3,
        seed: 1,
        ..IddlOptions::default()
    };
    let (joint, _) = train_iddl(&data, &base).unwrap();
    let (fixed_atoms, _) = train_iddl(
        &data,
        &IddlOptions {
            ablation: Ablation::FixAtoms,
            ..base.clone()
        },
    )
    .unwrap();
    let (fixed_params, r) = train_iddl(
        &data,
        &IddlOptions {
            ablation: Ablation::FixParams,
            ..base.clone()
        },
    )
    .unwrap();
    assert_ne!(joint.dictionary.atoms(), fixed_atoms.dictionary.atoms());
    assert_eq!(r.params.first(), r.params.last());
    assert_ne!(
        fixed_params.dictionary.atoms(),
        fixed_atoms.dictionary.atoms()
    );
}

#[test]
fn clustering_variants_and_baselines() {
    let data = wishart_synth(&WishartSpec::new(3, 10, 15, 8)).unwrap();
    let truth = data.labels().to_vec();
    let samples = data.data();
    let opts = AbKMeansOptions::default();
    for variant in [Variant::E, Variant::NE] {
        let (part, report) = ab_kmeans(samples, 3, variant, 5, &opts).unwrap();
        assert!(report
            .trace
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective));
        let f = f1_score(&part.assignments, &truth).unwrap();
        assert!(f > 0.6, "{variant:?} {f} {:?}", part.params);
        if variant == Variant::E {
            assert_eq!(part.params.alpha(), part.params.beta());
        }
    }
    assert!(f1_score(&le_kmeans(samples, 3, 5).unwrap().assignments, &truth).unwrap() > 0.5);
    assert!(
        f1_score(
            &karcher_kmeans(samples, 3, 5, 20).unwrap().assignments,
            &truth
        )
        .unwrap()
            > 0.5
    );
    assert!(ab_kmeans(samples, 0, Variant::E, 0, &opts).is_err());
    assert!(le_kmeans(samples, samples.len() + 1, 0).is_err());
}
