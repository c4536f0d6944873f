use proptest::prelude::*;
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vfl_core::eval::{
    accuracy, confusion, loadings_csv, metrics_csv, parse_metrics_csv, pca2, projections_csv, EvalError, MetricsRecord,
    PcaResult,
};
use vfl_core::nn::Tensor;

#[test]
fn confusion_examples() {
    let labels = [0, 1, 2, 0, 1, 2];
    let m = confusion(&labels, &labels, 3).unwrap();
    assert_eq!(m.counts, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    assert_eq!(m.accuracy(), 1.0);
    let zeros = confusion(&labels, &[0; 6], 3).unwrap();
    assert!((zeros.accuracy() - 1.0 / 3.0).abs() < 1e-12);
    assert!(matches!(
        confusion(&[0, 3], &[0, 0], 3),
        Err(EvalError::ClassOutOfRange { index: 1, value: 3, .. })
    ));
    assert!(confusion(&[0], &[0, 1], 3).is_err());
    assert_eq!(m.to_csv(), "true\\pred,0,1,2\n0,2,0,0\n1,0,2,0\n2,0,0,2\n");
}

proptest! {
    #[test]
    fn confusion_equals_brute_force_tally(pairs in prop::collection::vec((0usize..4, 0usize..4), 0..200)) {
        let labels: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = confusion(&labels, &preds, 4).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                let mut n = 0;
                for k in 0..labels.len() {
                    if labels[k] == t && preds[k] == p {
                        n += 1;
                    }
                }
                prop_assert_eq!(m.counts[t][p], n);
            }
        }
        prop_assert_eq!(m.total() as usize, labels.len());
        prop_assert!((accuracy(&labels, &preds) - m.accuracy()).abs() < 1e-15);
    }

    #[test]
    fn metrics_csv_parses_back(recs in prop::collection::vec((0u32..1000, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..=1.0), 0..20)) {
        let records: Vec<MetricsRecord> = recs
            .iter()
            .map(|&(epoch, train_loss, val_loss, val_accuracy)| MetricsRecord { epoch, train_loss, val_loss, val_accuracy })
            .collect();
        let text = metrics_csv(&records);
        prop_assert_eq!(text.lines().count(), records.len() + 1);
        let back = parse_metrics_csv(&text).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            prop_assert_eq!(a.epoch, b.epoch);
            for (x, y) in [(a.train_loss, b.train_loss), (a.val_loss, b.val_loss), (a.val_accuracy, b.val_accuracy)] {
                prop_assert!((x - y).abs() <= 5e-6 * x.abs().max(1e-300) + 1e-300 || (x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn metrics_csv_examples() {
    assert_eq!(metrics_csv(&[]), "epoch,train_loss,val_loss,val_accuracy\n");
    let one = metrics_csv(&[MetricsRecord {
        epoch: 0,
        train_loss: 1.0986,
        val_loss: 1.1,
        val_accuracy: 0.3333,
    }]);
    assert_eq!(one, "epoch,train_loss,val_loss,val_accuracy\n0,1.0986,1.1,0.3333\n");
    assert_eq!(one.lines().count(), 2);
}

/// Cyclic Jacobi eigensolver for a dense symmetric matrix; returns
/// eigenvalues in descending order with unit eigenvectors.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n).map(|k| (a[k][k], (0..n).map(|i| v[i][k]).collect())).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

fn oracle(rows: &[Vec<f64>]) -> (Vec<(f64, Vec<f64>)>, Vec<Vec<f64>>) {
    let n = rows.len();
    let f = rows[0].len();
    let mean: Vec<f64> = (0..f).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centred: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let cov: Vec<Vec<f64>> = (0..f)
        .map(|i| (0..f).map(|j| centred.iter().map(|r| r[i] * r[j]).sum::<f64>() / (n - 1) as f64).collect())
        .collect();
    let mut eig = jacobi_eigen(cov);
    for (_, vec) in eig.iter_mut() {
        let big = (0..f).fold(0, |b, i| if vec[i].abs() > vec[b].abs() { i } else { b });
        if vec[big] < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
    }
    (eig, centred)
}

fn tensor(rows: &[Vec<f64>]) -> Tensor {
    let f = rows[0].len();
    Tensor::new(vec![rows.len(), f], rows.iter().flatten().map(|&x| x as f32).collect()).unwrap()
}

fn assert_matches_oracle(rows: &[Vec<f64>], pca: &PcaResult) {
    // the oracle sees the same f32-rounded values
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| x as f32 as f64).collect()).collect();
    let (eig, centred) = oracle(&rows);
    for k in 0..2 {
        assert!((pca.explained_variance[k] - eig[k].0).abs() < 1e-6 * eig[0].0.max(1.0), "variance {k}");
        for (r, row) in centred.iter().enumerate() {
            let want: f64 = row.iter().zip(&eig[k].1).map(|(a, b)| a * b).sum();
            assert!((pca.projections[r][k] - want).abs() < 1e-6, "projection {r},{k}: {} vs {want}", pca.projections[r][k]);
        }
    }
    let [c1, c2] = &pca.components;
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    assert!((d(c1, c1) - 1.0).abs() < 1e-5 && (d(c2, c2) - 1.0).abs() < 1e-5 && d(c1, c2).abs() < 1e-5);
    assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
}

#[test]
fn fixture_5x4_matches_eigendecomposition() {
    let rows = vec![
        vec![2.5, 2.4, 0.5, 1.0],
        vec![0.5, 0.7, 1.5, 0.2],
        vec![2.2, 2.9, 0.3, 1.1],
        vec![1.9, 2.2, 0.9, 0.4],
        vec![3.1, 3.0, 0.1, 1.7],
    ];
    let pca = pca2(&tensor(&rows)).unwrap();
    assert_matches_oracle(&rows, &pca);
}

#[test]
fn random_fixtures_match_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = Uniform::new(-2.0, 2.0);
    for case in 0..20 {
        let f = 2 + case % 7;
        let n = 3 + case * 3;
        // anisotropic scales keep the top two eigenvalues separated
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..f).map(|j| u.sample(&mut rng) * (1.0 + 2.0 * (f - j) as f64)).collect())
            .collect();
        assert_matches_oracle(&rows, &pca2(&tensor(&rows)).unwrap());
    }
}

#[test]
fn two_distinct_points_give_their_difference() {
    let rows = vec![vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 3.0], vec![1.0, 2.0, 3.0]];
    let pca = pca2(&tensor(&rows)).unwrap();
    let diff = [2.0, -1.0, 0.0];
    let n = 5f64.sqrt();
    let cos = pca.components[0].iter().zip(diff).map(|(a, b)| a * b / n).sum::<f64>();
    assert!((cos.abs() - 1.0).abs() < 1e-9);
    assert!(pca.explained_variance[1].abs() < 1e-9);
}

#[test]
fn isotropic_data_has_similar_variances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<Vec<f64>> = (0..20_000).map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let pca = pca2(&tensor(&rows)).unwrap();
    let [a, b] = pca.explained_variance;
    assert!((a - b).abs() / a < 0.10, "{a} vs {b}");
    assert!((a - 1.0).abs() < 0.1);
}

#[test]
fn row_permutation_does_not_change_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = Uniform::new(0.0, 1.0);
    let mut rows: Vec<Vec<f64>> = (0..50).map(|_| (0..5).map(|j| u.sample(&mut rng) * (j + 1) as f64).collect()).collect();
    let a = pca2(&tensor(&rows)).unwrap();
    rows.shuffle(&mut rng);
    let b = pca2(&tensor(&rows)).unwrap();
    for k in 0..2 {
        for (x, y) in a.components[k].iter().zip(&b.components[k]) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn too_few_rows() {
    assert!(matches!(pca2(&tensor(&[vec![1.0, 2.0], vec![2.0, 1.0]])), Err(EvalError::TooFewSamples(2))));
}

#[test]
fn export_shapes() {
    let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0], vec![3.0, 1.0]];
    let pca = pca2(&tensor(&rows)).unwrap();
    let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
    let p = projections_csv(&ids, &pca);
    let l = loadings_csv(&["a".into(), "b".into()], &pca);
    assert_eq!(p.lines().count(), 5);
    assert_eq!(l.lines().count(), 3);
    assert!(p.starts_with("id,pc1,pc2\ns0,"));
    assert!(l.starts_with("feature,loading1,loading2\na,"));
}
