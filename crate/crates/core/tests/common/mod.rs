//! Independent test oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;

/// Plain Nelder-Mead minimizer with restarts. Returns the best point found.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], scale: f64, tol: f64) -> Vec<f64> {
    let mut best = start.to_vec();
    let mut step = scale;
    for _ in 0..12 {
        let next = nelder_mead_once(f, &best, step, tol, 20_000);
        let moved = next.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        best = next;
        if moved < tol {
            break;
        }
        step = (moved * 10.0).max(1e-3);
    }
    best
}

fn nelder_mead_once(f: &dyn Fn(&[f64]) -> f64, start: &[f64], scale: f64, tol: f64, max_eval: usize) -> Vec<f64> {
    let d = start.len();
    let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
    for k in 0..d {
        let mut v = start.to_vec();
        v[k] += scale;
        pts.push(v);
    }
    let mut vals: Vec<f64> = pts.iter().map(|v| f(v)).collect();
    let mut evals = d + 1;
    while evals < max_eval {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = pts[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < tol * 1e-2 {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|k| pts[..d].iter().map(|v| v[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|k| centroid[k] + t * (pts[d][k] - centroid[k])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < vals[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                pts[d] = expanded;
                vals[d] = fe;
            } else {
                pts[d] = reflected;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = reflected;
            vals[d] = fr;
        } else {
            let contracted = if fr < vals[d] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            evals += 1;
            if fc < vals[d].min(fr) {
                pts[d] = contracted;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    pts[i] = (0..d).map(|k| pts[0][k] + 0.5 * (pts[i][k] - pts[0][k])).collect();
                    vals[i] = f(&pts[i]);
                }
                evals += d;
            }
        }
    }
    let i = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    pts[i].clone()
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|k| {
            let mut a = at.to_vec();
            let mut b = at.to_vec();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Small fixed instance with `n = 6`, `J = 3` and a binary covariate.
pub fn small_instance() -> (DMatrix<f64>, DMatrix<f64>) {
    let y = DMatrix::from_row_slice(6, 3, &[
        4.0, 1.0, 9.0, //
        2.0, 0.0, 6.0, //
        7.0, 3.0, 5.0, //
        1.0, 5.0, 8.0, //
        0.0, 4.0, 3.0, //
        2.0, 6.0, 11.0,
    ]);
    let x = DMatrix::from_fn(6, 2, |i, k| if k == 0 || i >= 3 { 1.0 } else { 0.0 });
    (y, x)
}
