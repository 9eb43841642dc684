use ndarray::{Array1, Array2};
use proptest::prelude::*;

use dictad::data_io::{subsample, Dataset};
use dictad::evaluation::confusion;
use dictad::online_learning::tikhonov_update;
use dictad::sparse_coding::{omp, CodingConfig, Dictionary, SparseCode};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn labels() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..2, 0u8..2), 1..200)
}

proptest! {
    #[test]
    fn confusion_counts_add_up(pairs in labels()) {
        let (t, e): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let r = confusion(&t, &e).unwrap();
        prop_assert_eq!(r.tp + r.fp + r.tn + r.fn_, r.n);
        prop_assert_eq!(r.n, t.len());
        prop_assert!((r.accuracy - (r.tp + r.tn) as f64 / r.n as f64).abs() < 1e-15);
    }

    #[test]
    fn confusion_relabel_symmetry(pairs in labels()) {
        let (t, e): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let flip = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<u8>>();
        let a = confusion(&t, &e).unwrap();
        let b = confusion(&flip(&t), &flip(&e)).unwrap();
        prop_assert_eq!((a.tp, a.fp, a.tn, a.fn_), (b.tn, b.fn_, b.tp, b.fp));
        prop_assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn omp_code_is_sparse_and_residual_orthogonal(
        d in matrix(6, 10),
        y in prop::collection::vec(-3.0f64..3.0, 6),
        s in 1usize..5,
    ) {
        prop_assume!(d.columns().into_iter().all(|c| c.dot(&c) > 1e-2));
        let dict = Dictionary::normalized(d).unwrap();
        let y = Array1::from(y);
        let Ok(x) = omp(&dict, y.view(), &CodingConfig::with_sparsity(s)) else {
            // nearly collinear random atoms are rejected, not silently coded
            return Ok(());
        };
        prop_assert!(x.nnz() <= s);
        let r = &y - &dict.reconstruct(&x);
        for &j in x.support() {
            prop_assert!(dict.atom(j).dot(&r).abs() <= 1e-8 * (1.0 + y.dot(&y).sqrt()));
        }
        prop_assert!(r.dot(&r) <= y.dot(&y) + 1e-12);
    }

    #[test]
    fn tikhonov_is_stationary(
        m0 in matrix(3, 7),
        t in prop::collection::vec(-2.0f64..2.0, 3),
        code in prop::collection::btree_map(0usize..7, -2.0f64..2.0, 1..4),
        log_lambda in -3.0f64..3.0,
    ) {
        let lambda = 10f64.powf(log_lambda);
        let (support, values): (Vec<usize>, Vec<f64>) = code.into_iter().unzip();
        let x = SparseCode::new(7, support, values).unwrap();
        let t = Array1::from(t);
        let m = tikhonov_update(m0.view(), t.view(), &x, lambda).unwrap();
        let xd = x.to_dense();
        let pred = &t - &m.dot(&xd);
        let scale = 1.0 + lambda * m0.iter().map(|v| v.abs()).sum::<f64>() + xd.dot(&xd) * (1.0 + t.dot(&t));
        for i in 0..3 {
            for j in 0..7 {
                let g = lambda * (m[[i, j]] - m0[[i, j]]) - pred[i] * xd[j];
                prop_assert!(g.abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn subsample_keeps_every_anomaly(
        raw in prop::collection::vec(0u8..2, 2..80),
        ratio in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut labels = raw;
        labels[0] = 1;
        let n = labels.len();
        let y = Array2::from_shape_fn((2, n), |(i, j)| (i * n + j) as f64);
        let ds = Dataset::new(y, Some(labels.clone()), vec!["a".into(), "b".into()]).unwrap();
        let sub = subsample(&ds, ratio, seed).unwrap();
        let n_anom = labels.iter().filter(|&&l| l == 1).count();
        let n_norm = n - n_anom;
        prop_assert_eq!(sub.n_anomalies(), Some(n_anom));
        prop_assert_eq!(sub.len(), n_anom + n_norm.min(ratio * n_anom));
        // columns are distinct, so a column identifies its source sample
        for k in 0..sub.len() {
            let src = sub.y[[0, k]] as usize;
            prop_assert_eq!(sub.labels.as_ref().unwrap()[k], labels[src]);
        }
        let again = subsample(&ds, ratio, seed).unwrap();
        prop_assert_eq!(&again.y, &sub.y);
    }
}
