use admm_dad::linalg::{
    frobenius_norm, invert, spectral_norm, spectral_norm_with, symmetric_eig_extremes, symmetric_eig_extremes_with,
    EigenMethod, LinalgConfig,
};
use admm_dad::Matrix;
use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;

fn matrix_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_norm_at_most_frobenius(m in matrix_strategy(8, 8)) {
        let s = spectral_norm(m.view()).unwrap();
        prop_assert!(s <= frobenius_norm(m.view()) * (1.0 + 1e-12));
    }

    #[test]
    fn spectral_norm_matches_svd_oracle(m in matrix_strategy(8, 8)) {
        let oracle = to_nalgebra(&m).singular_values().max();
        prop_assert!(close(spectral_norm(m.view()).unwrap(), oracle, 1e-6));
        let iterative = LinalgConfig { eigen_method: EigenMethod::Iterative, ..LinalgConfig::default() };
        prop_assert!(close(spectral_norm_with(m.view(), &iterative).unwrap(), oracle, 1e-6));
    }

    #[test]
    fn spectral_norm_is_sqrt_of_gram_lambda_max(m in matrix_strategy(8, 8)) {
        let gram = m.t().dot(&m);
        let (_, hi) = symmetric_eig_extremes(gram.view()).unwrap();
        prop_assert!(close(spectral_norm(m.view()).unwrap(), hi.max(0.0).sqrt(), 1e-6));
    }

    #[test]
    fn rayleigh_quotients_lie_between_extremes(
        g in matrix_strategy(10, 6),
        xs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 100),
    ) {
        let s = g.t().dot(&g);
        let n = s.nrows();
        let (lo, hi) = symmetric_eig_extremes(s.view()).unwrap();
        let slack = 1e-9 * hi.abs().max(1.0);
        for x in xs {
            let x = ndarray::Array1::from(x[..n].to_vec());
            let norm2 = x.dot(&x);
            if norm2 < 1e-12 {
                continue;
            }
            let q = x.dot(&s.dot(&x)) / norm2;
            prop_assert!(lo - slack <= q && q <= hi + slack, "{lo} <= {q} <= {hi}");
        }
    }

    #[test]
    fn extremes_match_eigen_oracle(g in matrix_strategy(10, 7)) {
        let s = g.t().dot(&g);
        let eig = to_nalgebra(&s).symmetric_eigenvalues();
        let iterative = LinalgConfig { eigen_method: EigenMethod::Iterative, ..LinalgConfig::default() };
        for cfg in [LinalgConfig::default(), iterative] {
            let (lo, hi) = symmetric_eig_extremes_with(s.view(), &cfg).unwrap();
            let scale = eig.max().abs().max(1.0);
            prop_assert!((hi - eig.max()).abs() <= 1e-6 * scale);
            prop_assert!((lo - eig.min()).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn inverse_is_an_involution(m in matrix_strategy(6, 6)) {
        let d = m.nrows().min(m.ncols());
        let sq = m.slice(ndarray::s![..d, ..d]).to_owned() + Array2::<f64>::eye(d) * 25.0;
        let inv = invert(sq.view()).unwrap();
        let back = invert(inv.view()).unwrap();
        let err = frobenius_norm((&back - &sq).view());
        prop_assert!(err <= 1e-9 * frobenius_norm(sq.view()));
        let oracle = to_nalgebra(&sq).try_inverse().unwrap();
        for i in 0..d {
            for j in 0..d {
                prop_assert!((inv[[i, j]] - oracle[(i, j)]).abs() < 1e-10);
            }
        }
    }
}
