use ndarray::{Array2, Axis};
use proptest::prelude::*;

use detrac_core::classifier::{softmax_rows, SoftmaxHead};
use detrac_core::dataset::{read_features, split_indices, write_features, LabelSpace, SampleSet};
use detrac_core::decomposition::{compose, decompose, kmeans_fit, nearest, ComposeMode, DecompositionConfig};
use detrac_core::imaging::{augment, flip, histogram_modify, rotate, translate, AugmentationSpec, Axis as Flip, GrayImage};
use detrac_core::projection::{fit_pca, PcaTarget};

fn image() -> impl Strategy<Value = GrayImage> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h).prop_map(move |px| GrayImage::new(w, h, px).unwrap())
    })
}

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Array2<f64>> {
    (rows, cols).prop_flat_map(|(n, m)| {
        proptest::collection::vec(-10.0f64..10.0, n * m).prop_map(move |v| Array2::from_shape_vec((n, m), v).unwrap())
    })
}

/// Labels over `c` classes with every class present at least `min` times.
fn labelled(n_extra: usize, c: usize, min: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(0..c, n_extra).prop_map(move |mut extra| {
        let mut labels: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat_n(k, min)).collect();
        labels.append(&mut extra);
        labels
    })
}

fn space(c: usize) -> LabelSpace {
    LabelSpace::new((0..c).map(|i| format!("k{i}"))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn imaging_identities(img in image()) {
        for axis in [Flip::Horizontal, Flip::Vertical] {
            prop_assert_eq!(&flip(&flip(&img, axis), axis), &img);
        }
        prop_assert_eq!(&rotate(&img, 0.0), &img);
        prop_assert_eq!(&rotate(&img, 360.0), &img);
        prop_assert_eq!(&translate(&img, 0, 0).unwrap(), &img);
    }

    #[test]
    fn equalisation_is_monotone_and_idempotent(img in image()) {
        let eq = histogram_modify(&img);
        for (i, &a) in img.pixels().iter().enumerate() {
            for (j, &b) in img.pixels().iter().enumerate() {
                if a <= b {
                    prop_assert!(eq.pixels()[i] <= eq.pixels()[j]);
                }
            }
        }
        let mut first = eq.histogram().to_vec();
        let mut second = histogram_modify(&eq).histogram().to_vec();
        first.sort_unstable();
        second.sort_unstable();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn augmentation_is_pure(img in image(), seed in any::<u64>()) {
        let spec = AugmentationSpec::sampled(seed);
        let a = augment(&img, &spec).unwrap();
        prop_assert_eq!(a.len(), 8);
        prop_assert_eq!(a, augment(&img, &AugmentationSpec::sampled(seed)).unwrap());
    }

    #[test]
    fn split_is_a_stratified_partition(labels in labelled(40, 3, 2), f in 0.05f64..0.95, seed in any::<u64>()) {
        let (tr, te) = split_indices(&labels, &space(3), f, seed).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..3 {
            prop_assert!(tr.iter().any(|&i| labels[i] == c));
            prop_assert!(te.iter().any(|&i| labels[i] == c));
        }
        prop_assert_eq!(split_indices(&labels, &space(3), f, seed).unwrap(), (tr, te));
    }

    #[test]
    fn pca_invariants(x in matrix(3..=25, 1..=8)) {
        let (n, m) = x.dim();
        let full = (n - 1).min(m);
        let p = fit_pca(&x, PcaTarget::Components(full)).unwrap();
        let gram = p.components().t().dot(p.components());
        for ((i, j), v) in gram.indexed_iter() {
            let expected = if i == j { 1.0 } else { 0.0 };
            prop_assert!((v - expected).abs() <= 1e-8);
        }
        let z = p.project(&x).unwrap();
        for col in z.columns() {
            prop_assert!(col.mean().unwrap().abs() <= 1e-9);
        }
        let mean = x.mean_axis(Axis(0)).unwrap();
        let trace = (&x - &mean).mapv(|v| v * v).sum() / (n - 1) as f64;
        prop_assert!((p.variances().sum() - trace).abs() <= 1e-6);
        prop_assert_eq!(p.to_bytes(), fit_pca(&x, PcaTarget::Components(full)).unwrap().to_bytes());
    }

    #[test]
    fn kmeans_fixed_point_and_monotone(x in matrix(2..=40, 1..=3), k in 1usize..5, seed in any::<u64>()) {
        let k = k.min(x.nrows());
        let cfg = DecompositionConfig { seed, ..Default::default() };
        let (model, assignment) = kmeans_fit(x.view(), k, &cfg).unwrap();
        for (j, c) in model.centroids().rows().into_iter().enumerate() {
            let members: Vec<usize> = (0..x.nrows()).filter(|&i| assignment[i] == j).collect();
            prop_assert!(!members.is_empty());
            let mean = x.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
            prop_assert!((&mean - &c).iter().all(|v| v.abs() <= 1e-9));
        }
        for (i, row) in x.rows().into_iter().enumerate() {
            prop_assert_eq!(nearest(row, model.centroids().view()).0, assignment[i]);
        }
        for w in model.inertia_history().windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn decomposition_preserves_parents(
        (x, labels) in labelled(30, 3, 3).prop_flat_map(|l| {
            let n = l.len();
            (matrix(n..=n, 2..=4), Just(l))
        }),
        k in 1usize..4,
    ) {
        let data = SampleSet::new(x, labels.clone(), space(3)).unwrap();
        let pca = fit_pca(data.features(), PcaTarget::VarianceFraction(1.0)).unwrap();
        let cfg = DecompositionConfig { k_per_class: k, ..Default::default() };
        let dec = decompose(&data, &pca, &cfg).unwrap();
        prop_assert_eq!(dec.set.parent_labels(), labels);
        prop_assert_eq!(dec.set.features(), data.features());
        for (c, cl) in dec.clusterings.iter().enumerate() {
            prop_assert_eq!(cl.sizes.iter().sum::<usize>(), data.class_counts()[c]);
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub.dtrc");
        write_features(&dec.set.as_sample_set().unwrap(), &path).unwrap();
        let back: SampleSet<f64> = read_features(&path).unwrap();
        let parents: Vec<usize> = back.labels().iter().map(|&s| dec.parent_map().parent_of(s)).collect();
        prop_assert_eq!(parents, data.labels().to_vec());
    }

    #[test]
    fn composed_rows_sum_to_one(logits in matrix(1..=10, 4..=4), mode in prop_oneof![Just(ComposeMode::SumProbs), Just(ComposeMode::ArgmaxMap)]) {
        let pm = detrac_core::dataset::ParentMap::from_counts(space(2), &[1, 3]).unwrap();
        let probs = softmax_rows(logits);
        let out = compose(&probs, &pm, mode).unwrap();
        for row in out.parent_probs.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
        }
        let identity = detrac_core::dataset::ParentMap::from_counts(space(4), &[1, 1, 1, 1]).unwrap();
        let same = compose(&probs, &identity, ComposeMode::SumProbs).unwrap();
        prop_assert!((&same.parent_probs - &probs).iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn softmax_is_normalised_for_large_logits(x in matrix(1..=6, 2..=5), scale in 1.0f64..1e4) {
        let p = softmax_rows(x.mapv(|v| v / 10.0 * scale));
        for row in p.rows() {
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn gradient_matches_central_differences(x in matrix(1..=6, 1..=4), hidden in prop::option::of(1usize..5), seed in any::<u64>()) {
        let labels: Vec<usize> = (0..x.nrows()).map(|i| i % 3).collect();
        let head = SoftmaxHead::new(x.ncols(), 3, hidden, seed).unwrap();
        let err = detrac_core::classifier::gradient_check(&head, x.view(), &labels, 1e-5).unwrap();
        prop_assert!(err <= 1e-4, "relative error {}", err);
    }
}
