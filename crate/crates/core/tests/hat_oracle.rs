use foldfit::param::Reduced;
use foldfit::penalized::likelihood::profile_z;
use foldfit::penalized::{augment_counts, hat_diagonals_with, HatRoute};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force hat diagonals from the full `nJ x (p(J-1) + n)` design.
fn dense_hat(beta: &DMatrix<f64>, z: &DVector<f64>, x: &DMatrix<f64>, j_dagger: usize) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let n_cat = beta.ncols();
    let param = Reduced::new(p, n_cat, j_dagger);
    let cols = param.dim() + n;
    let mut g = DMatrix::zeros(n * n_cat, cols);
    let mut w = DVector::zeros(n * n_cat);
    let eta = x * beta;
    for i in 0..n {
        for j in 0..n_cat {
            let row = i * n_cat + j;
            if let Some(s) = param.slot(j) {
                for k in 0..p {
                    g[(row, s * p + k)] = x[(i, k)];
                }
            }
            g[(row, param.dim() + i)] = 1.0;
            w[row] = (eta[(i, j)] + z[i]).exp();
        }
    }
    let sw = w.map(f64::sqrt);
    let a = DMatrix::from_fn(n * n_cat, cols, |r, c| sw[r] * g[(r, c)]);
    let svd = a.svd(true, false);
    let u = svd.u.unwrap();
    let top = svd.singular_values.max();
    let mut h = DMatrix::zeros(n, n_cat);
    for i in 0..n {
        for j in 0..n_cat {
            let r = i * n_cat + j;
            h[(i, j)] = (0..svd.singular_values.len())
                .filter(|&c| svd.singular_values[c] > 1e-10 * top)
                .map(|c| u[(r, c)] * u[(r, c)])
                .sum();
        }
    }
    h
}

fn problem(seed: u64, n: usize, p: usize, n_cat: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, k| if k == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
    let beta = DMatrix::from_fn(p, n_cat, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(n, n_cat, |_, _| rng.random_range(0..20) as f64 + 1.0);
    let z = profile_z(&beta, &y, &x);
    (x, z, beta, y)
}

#[test]
fn both_routes_match_dense_oracle() {
    for (seed, n, p, n_cat) in [(1, 6, 2, 3), (2, 4, 2, 5), (3, 10, 3, 4), (4, 3, 1, 8)] {
        let (x, z, beta, _) = problem(seed, n, p, n_cat);
        for j_dagger in [0, n_cat - 1] {
            let oracle = dense_hat(&beta, &z, &x, j_dagger);
            for route in [HatRoute::Coefficients, HatRoute::Samples, HatRoute::Auto] {
                let h = hat_diagonals_with(&beta, &z, &x, j_dagger, route);
                assert!(!h.pseudo_inverse);
                let err = (&h.values - &oracle).amax();
                assert!(err < 1e-9, "{route:?} seed {seed}: {err}");
            }
        }
    }
}

#[test]
fn trace_equals_parameter_count() {
    let (n, p, n_cat) = (7, 2, 6);
    let (x, z, beta, y) = problem(9, n, p, n_cat);
    let h = hat_diagonals_with(&beta, &z, &x, 2, HatRoute::Auto);
    let rank = (p * (n_cat - 1) + n) as f64;
    assert!((h.values.sum() - rank).abs() < 1e-9);
    let aug = augment_counts(&y, &h.values);
    assert!(((aug.sum() - y.sum()) - rank / 2.0).abs() < 1e-9);
}

#[test]
fn hat_values_invariant_to_reference_choice() {
    let (x, z, beta, _) = problem(5, 5, 2, 4);
    let a = hat_diagonals_with(&beta, &z, &x, 0, HatRoute::Auto).values;
    let b = hat_diagonals_with(&beta, &z, &x, 3, HatRoute::Auto).values;
    assert!((a - b).amax() < 1e-10);
}
