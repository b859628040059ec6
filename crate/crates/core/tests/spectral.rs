mod common;

use common::{connected_graph, random_matrix};
use fbgsp::eigen::{eigendecompose_symmetric, rw_eigenvectors_from_sym, JacobiSolver};
use fbgsp::smoothness::{
    dirichlet_energy, nonsmooth_energy, one_hot_labels, quadratic_form, s_value, signal_energy,
    smoothness_report,
};
use fbgsp::{Error, Graph, Matrix, OperatorKind, SparseOperator};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sym_laplacian(g: &Graph) -> SparseOperator {
    SparseOperator::build(g, OperatorKind::SymNormLaplacian).unwrap()
}

#[test]
fn known_spectra() {
    let p3 = Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
    let l = SparseOperator::build(&p3, OperatorKind::Combinatorial).unwrap();
    let dec = eigendecompose_symmetric(&l.to_dense()).unwrap();
    for (got, want) in dec.eigenvalues.iter().zip([0.0, 1.0, 3.0]) {
        assert!((got - want).abs() < 1e-12, "{:?}", dec.eigenvalues);
    }
    let k3 = Graph::from_edges(&[(0, 1), (1, 2), (0, 2)], 3).unwrap();
    let dec = eigendecompose_symmetric(&sym_laplacian(&k3).to_dense()).unwrap();
    for (got, want) in dec.eigenvalues.iter().zip([0.0, 1.5, 1.5]) {
        assert!((got - want).abs() < 1e-12, "{:?}", dec.eigenvalues);
    }
}

#[test]
fn bipartite_graph_reaches_two() {
    let c6 = Graph::from_edges(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)], 6).unwrap();
    assert!(c6.diagnose().is_bipartite);
    let dec = eigendecompose_symmetric(&sym_laplacian(&c6).to_dense()).unwrap();
    assert!((dec.eigenvalues[5] - 2.0).abs() < 1e-12);
}

#[test]
fn solver_errors() {
    let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
    assert!(matches!(eigendecompose_symmetric(&asym), Err(Error::NotSymmetric(_))));
    let solver = JacobiSolver { size_cap: 4 };
    assert!(matches!(
        solver.solve(&Matrix::identity(5)),
        Err(Error::MatrixTooLarge { n: 5, cap: 4 })
    ));
    assert!(matches!(
        eigendecompose_symmetric(&Matrix::zeros(2, 3)),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn rayleigh_bounds_for_random_signals() {
    let g = connected_graph(11, 30, 0.1);
    let lap = sym_laplacian(&g);
    let dec = eigendecompose_symmetric(&lap.to_dense()).unwrap();
    let (lo, hi) = (dec.eigenvalues[0], dec.eigenvalues[29]);
    for seed in 0..100 {
        let x = random_matrix(seed, 30, 1);
        let s = s_value(&lap, &x).unwrap();
        assert!(lo - 1e-8 <= s && s <= hi + 1e-8, "{lo} <= {s} <= {hi}");
    }
}

#[test]
fn one_hot_label_s_lies_in_zero_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..30 {
        let g = connected_graph(seed, 25, 0.1);
        let labels: Vec<usize> = (0..25).map(|_| rng.random_range(0..4)).collect();
        let y = one_hot_labels(&labels, 4).unwrap();
        assert!(y.to_rows().iter().all(|r| r.iter().sum::<f64>() == 1.0));
        let s = s_value(&sym_laplacian(&g), &y).unwrap();
        assert!((0.0..2.0).contains(&s), "{s}");
    }
}

#[test]
fn report_requires_laplacian() {
    let g = connected_graph(0, 5, 0.3);
    let x = random_matrix(0, 5, 2);
    assert!(matches!(
        smoothness_report(&g, &x, &[0, 1, 0, 1, 0], 2, OperatorKind::RenormSymAffinity),
        Err(Error::NotALaplacian(_))
    ));
    let r = smoothness_report(&g, &x, &[0, 1, 0, 1, 0], 2, OperatorKind::RenormSymLaplacian).unwrap();
    assert_eq!(r.diff, r.label_s - r.feature_s);
    assert_eq!(r.component_count, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenpairs_satisfy_definition(seed in 0u64..10_000, n in 3usize..24) {
        let g = connected_graph(seed, n, 0.2);
        let m = sym_laplacian(&g).to_dense();
        let dec = eigendecompose_symmetric(&m).unwrap();
        prop_assert!(dec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let u = &dec.eigenvectors;
        let gram = u.transpose().matmul(u).unwrap();
        prop_assert!(gram.max_abs_diff(&Matrix::identity(n)) <= 1e-10);
        for k in 0..n {
            let v = Matrix::column(&dec.eigenvector(k));
            let resid = m.matmul(&v).unwrap().sub(&v.scale(dec.eigenvalues[k])).unwrap();
            prop_assert!(resid.frobenius() <= 1e-9);
        }
        prop_assert!(dec.eigenvalues[0] >= -1e-9 && dec.eigenvalues[n - 1] <= 2.0 - 1e-9);
    }

    #[test]
    fn random_walk_eigenvectors(seed in 0u64..10_000, n in 3usize..20) {
        let g = connected_graph(seed, n, 0.2);
        let dec = eigendecompose_symmetric(&sym_laplacian(&g).to_dense()).unwrap();
        let vecs = rw_eigenvectors_from_sym(&g, &dec).unwrap();
        let rw = SparseOperator::build(&g, OperatorKind::RwNormLaplacian).unwrap();
        let lhs = rw.apply(&vecs).unwrap();
        for k in 0..n {
            for i in 0..n {
                prop_assert!((lhs[(i, k)] - dec.eigenvalues[k] * vecs[(i, k)]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn spectral_sum_matches_dirichlet(seed in 0u64..10_000, n in 3usize..20) {
        let g = connected_graph(seed, n, 0.2);
        for kind in [OperatorKind::Combinatorial, OperatorKind::SymNormLaplacian, OperatorKind::RenormSymLaplacian] {
            let lap = SparseOperator::build(&g, kind).unwrap();
            let dec = eigendecompose_symmetric(&lap.to_dense()).unwrap();
            let x = random_matrix(seed, n, 1);
            let coeffs = dec.fourier_transform(x.as_slice()).unwrap();
            let spectral: f64 = coeffs.iter().zip(&dec.eigenvalues).map(|(c, l)| l * c * c).sum();
            let direct = dirichlet_energy(&lap, &x).unwrap();
            prop_assert!((spectral - direct).abs() <= 1e-8 * direct.abs().max(1.0));
            // Parseval
            let power: f64 = coeffs.iter().map(|c| c * c).sum();
            prop_assert!((power - signal_energy(&x)).abs() <= 1e-10 * power.max(1.0));
        }
    }

    #[test]
    fn energy_identity(seed in 0u64..10_000, n in 3usize..64, cols in 1usize..5) {
        let g = connected_graph(seed, n, 0.1);
        let x = random_matrix(seed, n, cols);
        let e = signal_energy(&x);
        for lap_kind in OperatorKind::ALL.into_iter().filter(|k| k.complement().is_some() && k.is_laplacian()) {
            let lap = SparseOperator::build(&g, lap_kind).unwrap();
            let aff = SparseOperator::build(&g, lap_kind.complement().unwrap()).unwrap();
            let es = dirichlet_energy(&lap, &x).unwrap();
            prop_assert!((e - (es + nonsmooth_energy(&lap, &x).unwrap())).abs() <= 1e-9 * e);
            let dual = es + quadratic_form(&aff, &x).unwrap();
            prop_assert!((dual - e).abs() <= 1e-9 * e);
        }
    }

    #[test]
    fn s_value_is_scale_invariant(seed in 0u64..10_000, n in 3usize..40, c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let g = connected_graph(seed, n, 0.1);
        let x = random_matrix(seed, n, 2);
        for kind in OperatorKind::ALL.into_iter().filter(|k| k.is_laplacian()) {
            let lap = SparseOperator::build(&g, kind).unwrap();
            let a = s_value(&lap, &x).unwrap();
            let b = s_value(&lap, &x.scale(c)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn eigenvector_s_value_is_eigenvalue(seed in 0u64..10_000, n in 3usize..24) {
        let g = connected_graph(seed, n, 0.2);
        let lap = sym_laplacian(&g);
        let dec = eigendecompose_symmetric(&lap.to_dense()).unwrap();
        for k in 0..n {
            let s = s_value(&lap, &Matrix::column(&dec.eigenvector(k))).unwrap();
            prop_assert!((s - dec.eigenvalues[k]).abs() <= 1e-8);
        }
    }
}
