use semiflex::filament::*;
use semiflex::mobility::*;
use semiflex::spectral::*;
use semiflex::linalg::lift3;
use nalgebra::{DMatrix, Vector3};
use std::f64::consts::PI;

// Fejer first rule: weights for type-1 Chebyshev points
fn fejer1(n: usize, l: f64) -> Vec<f64> {
    (1..=n).map(|k| {
        let theta = (2.0 * k as f64 - 1.0) * PI / (2.0 * n as f64);
        let mut s = 0.0;
        let mmax = n / 2;
        for m in 1..=mmax { s += (2.0 * m as f64 * theta).cos() / (4 * m * m - 1) as f64; }
        (2.0 / n as f64) * (1.0 - 2.0 * s) * l / 2.0
    }).collect()
}

fn t1_ref(shape: &FiberShape, ws: &SpectralWorkspace, p: &RpyParams, n_up: usize) -> DMatrix<f64> {
    let g = build_grid(GridKind::Type1, n_up, ws.length).unwrap();
    let mut w = fejer1(n_up, ws.length);
    w.reverse(); // ascending node order; fejer1 computed for descending theta order (symmetric anyway)
    let e = ws.grid_x.resampling_matrix(&g.nodes);
    let mut y_scalar = &e * &ws.w_tilde_inv;
    for i in 0..n_up { for j in 0..ws.n_x { y_scalar[(i,j)] *= w[i]; } }
    let y = lift3(&y_scalar);
    let pts: Vec<Vector3<f64>> = (0..n_up).map(|i| {
        let mut x = Vector3::zeros();
        for j in 0..ws.n_x { x += shape.node(j) * e[(i,j)]; }
        x
    }).collect();
    let m = y.transpose() * rpy_matrix(&pts, p) * &y;
    (&m + m.transpose()) * 0.5
}

fn main() {
    let n = 12;
    let ws = SpectralWorkspace::new(n, 2.0).unwrap();
    let maps = FiberMaps::spectral(&ws);
    let p = RpyParams::from_slenderness(1.0, 1e-2, 2.0).unwrap();
    let shape = maps.positions_from_state(&FiberState::straight(n, Vector3::z())).unwrap();
    // sanity: fejer integrates 1 -> L
    let w = fejer1(40, 2.0); let s: f64 = w.iter().sum();
    println!("fejer sum = {s}");
    let m1 = t1_ref(&shape, &ws, &p, 40);
    let m2 = t1_ref(&shape, &ws, &p, 80);
    let m3 = t1_ref(&shape, &ws, &p, 160);
    println!("type1/fejer: d(40,80)={:.4e} d(80,160)={:.4e}", (&m1-&m2).amax()/m2.amax(), (&m2-&m3).amax()/m3.amax());
}
