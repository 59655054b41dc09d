mod common;

use common::oracles;
use proptest::prelude::*;
use riro::model_math::{
    apply_low_rank, attention, attention_weights, dequantize, quantize, trainable_param_count,
    LowRankDelta, Matrix,
};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(lo..hi, rows * cols)
        .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

fn qkv() -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
    (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8).prop_flat_map(|(nq, nk, dk, dv)| {
        (
            matrix(nq, dk, -3.0, 3.0),
            matrix(nk, dk, -3.0, 3.0),
            matrix(nk, dv, -5.0, 5.0),
        )
    })
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

proptest! {
    #[test]
    fn attention_rows_are_convex_combinations((q, k, v) in qkv()) {
        let w = attention_weights(&q, &k).unwrap();
        for r in 0..w.rows() {
            let sum: f64 = w.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
        let out = attention(&q, &k, &v).unwrap();
        prop_assert_eq!((out.rows(), out.cols()), (q.rows(), v.cols()));
        for c in 0..v.cols() {
            let col: Vec<f64> = (0..v.rows()).map(|r| v.get(r, c)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..out.rows() {
                let x = out.get(r, c);
                prop_assert!(x >= lo - 1e-9 && x <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn attention_shift_invariant(
        (k, v) in (1usize..=6, 1usize..=4, 1usize..=4).prop_flat_map(|(nk, dk, dv)| {
            (matrix(nk, dk, -2.0, 2.0), matrix(nk, dv, -2.0, 2.0))
        }),
        shift in -3.0f64..3.0,
    ) {
        // With an all-ones query, adding `shift` to every key element adds
        // the same constant to every score in the row.
        let dk = k.cols();
        let q = Matrix::new(1, dk, vec![1.0; dk]).unwrap();
        let shifted = Matrix::new(k.rows(), dk, k.data().iter().map(|x| x + shift).collect()).unwrap();
        let a = attention(&q, &k, &v).unwrap();
        let b = attention(&q, &shifted, &v).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn quantization_error_within_half_scale(
        w in (1usize..=12, 1usize..=12).prop_flat_map(|(r, c)| matrix(r, c, -1.0, 1.0)),
        bits in 2u32..=8,
        block in 1usize..=70,
    ) {
        let q = quantize(&w, bits, block).unwrap();
        prop_assert_eq!(q.scales().len(), (w.rows() * w.cols()).div_ceil(block));
        let qmax = (1i32 << (bits - 1)) - 1;
        prop_assert!(q.codes().iter().all(|&c| (-qmax - 1..=qmax).contains(&(c as i32))));
        let back = dequantize(&q);
        for (i, (a, b)) in w.data().iter().zip(back.data()).enumerate() {
            prop_assert!((a - b).abs() <= q.scale_for(i) / 2.0);
        }
    }

    #[test]
    fn low_rank_matches_dense_oracle(
        (w, u, v) in (1usize..=8, 1usize..=8, 1usize..=4).prop_flat_map(|(m, n, r)| {
            let r = r.min(m).min(n);
            (matrix(m, n, -1.0, 1.0), matrix(m, r, -1.0, 1.0), matrix(n, r, -1.0, 1.0))
        })
    ) {
        let wq = quantize(&w, 4, 64).unwrap();
        let got = apply_low_rank(&wq, &LowRankDelta::new(u.clone(), v.clone()).unwrap()).unwrap();
        let want = oracles::dense_low_rank(&to_rows(&dequantize(&wq)), &to_rows(&u), &to_rows(&v));
        for (r, row) in want.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                prop_assert!((got.get(r, c) - x).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn trainable_count_below_full_when_rank_small() {
    for m in [1u64, 2, 7, 16, 64, 100] {
        for n in [1u64, 3, 8, 50, 100] {
            for r in 1u64..=16 {
                let p = trainable_param_count(m, n, r).unwrap();
                assert_eq!(p.trainable, r * (m + n));
                if (r as f64) < (m * n) as f64 / (m + n) as f64 {
                    assert!(p.trainable < p.full, "m={m} n={n} r={r}");
                }
            }
        }
    }
}
