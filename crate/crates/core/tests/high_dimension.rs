//! Seven-dimensional checks around the pseudo-critical point, plus a few
//! cross-estimator consistency checks in three dimensions.

use std::sync::OnceLock;

use perc_core::diagrams::{image_sum, torus_triangle};
use perc_core::estimators::{
    estimate_axis_profile, estimate_psi, estimate_susceptibility, estimate_two_point, estimate_two_point_grid,
    fit_mass, solve_p_t, MassCorrection,
};
use perc_core::explore::Caps;
use perc_core::lattice::{ModelSpec, Point, Region};
use perc_core::pioneers::estimate_pn;
use perc_core::sampling::ReplicaPlan;

const D: usize = 7;

fn torus(r: i64) -> ModelSpec {
    ModelSpec::torus(D, r, 1, 0.5).unwrap()
}

fn z7() -> ModelSpec {
    ModelSpec::nearest_neighbour(D, 0.5).unwrap()
}

fn caps() -> Caps {
    Caps::extrinsic(1 << 22, 1 << 10)
}

/// `p_T(lambda = 1)` on the 12-torus.
fn p_c() -> f64 {
    static PC: OnceLock<f64> = OnceLock::new();
    *PC.get_or_init(|| solve_p_t(&torus(12), 1.0, 0.0, &ReplicaPlan::new(71, 4000)).unwrap().p_t)
}

#[test]
fn susceptibility_diverges_like_inverse_distance() {
    let pc = p_c();
    let chi: Vec<f64> = [0.4, 0.2, 0.1]
        .iter()
        .map(|eps| {
            let e = estimate_susceptibility(&z7(), pc * (1.0 - eps), &ReplicaPlan::new(5, 100_000), &caps()).unwrap();
            assert!(!e.unreliable());
            e.value
        })
        .collect();
    for w in chi.windows(2) {
        let ratio = w[1] / w[0];
        assert!((ratio / 2.0 - 1.0).abs() <= 0.3, "chi {chi:?}");
    }
}

#[test]
fn mass_vanishes_like_square_root() {
    let pc = p_c();
    let ratios: Vec<f64> = [0.05, 0.1, 0.2]
        .iter()
        .map(|eps| {
            let p = pc * (1.0 - eps);
            let series = estimate_axis_profile(&z7(), p, 10, &ReplicaPlan::new(6, 1_000_000), &caps()).unwrap();
            let fit = fit_mass(&series, MassCorrection::ornstein_zernike(D)).unwrap();
            fit.m_hat / (pc - p).sqrt()
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    for r in &ratios {
        assert!((r / mean - 1.0).abs() <= 0.4, "m / sqrt(p_c - p): {ratios:?}");
    }
}

#[test]
fn p_t_solve_at_small_lambda_meets_its_contract() {
    let m = torus(6);
    let sol = solve_p_t(&m, 0.1, 0.0, &ReplicaPlan::new(3, 4000)).unwrap();
    let target = 0.1 * (m.volume().unwrap() as f64).cbrt();
    assert!((sol.target - target).abs() < 1e-9);
    assert!((sol.chi.value - target).abs() <= 3.0 * sol.chi.std_error, "{sol:?}");
    assert!(sol.p_t > 0.0 && sol.p_t < p_c());
}

#[test]
fn p_t_stays_in_the_window() {
    let pc = p_c();
    let scaled: Vec<f64> = [5, 6, 8]
        .iter()
        .map(|&r| {
            let m = torus(r);
            let sol = solve_p_t(&m, 0.5, 0.0, &ReplicaPlan::new(8, 4000)).unwrap();
            (sol.p_t - pc).abs() * (m.volume().unwrap() as f64).cbrt()
        })
        .collect();
    assert!(scaled[2] <= 1.5 * scaled[0].max(scaled[1]), "|p_T - p_c| V^(1/3): {scaled:?}");
}

#[test]
fn torus_triangle_stays_bounded() {
    let mut at_origin = Vec::new();
    for r in [5, 6, 8] {
        let m = torus(r);
        let sol = solve_p_t(&m, 1.0, 0.0, &ReplicaPlan::new(9, 4000)).unwrap();
        let grids: Vec<_> = (0..3)
            .map(|k| {
                let plan = ReplicaPlan::new(10, 3000).with_first_stream(k * 3000);
                estimate_two_point_grid(&m, sol.p_t, r, &plan, &Caps::whole_torus(&m)).unwrap()
            })
            .collect();
        let split = torus_triangle(&grids[0], &grids[1], &grids[2]).unwrap();
        let origin = vec![0i64; D];
        assert!(split.get(&origin) >= split.max() * (1.0 - 1e-9), "r = {r}");
        let pooled = estimate_two_point_grid(&m, sol.p_t, r, &ReplicaPlan::new(10, 9000), &Caps::whole_torus(&m)).unwrap();
        let mut pooled = pooled;
        pooled.symmetrize();
        let t = torus_triangle(&pooled, &pooled, &pooled).unwrap();
        assert!(t.get(&origin) >= t.max() * (1.0 - 1e-9), "r = {r}");
        at_origin.push(split.get(&origin));
    }
    for w in at_origin.windows(2) {
        assert!(w[1] <= 1.5 * w[0], "torus triangle at 0: {at_origin:?}");
    }
}

#[test]
fn image_sums_agree_between_grid_and_lifts() {
    let z3 = ModelSpec::nearest_neighbour(3, 0.15).unwrap();
    let t3 = ModelSpec::torus(3, 4, 1, 0.15).unwrap();
    let caps = Caps::extrinsic(1 << 20, 64);
    let grid = estimate_two_point_grid(&z3, 0.15, 6, &ReplicaPlan::new(12, 100_000), &caps).unwrap();
    for x in [vec![0, 0, 0], vec![1, 0, 0], vec![2, 1, 0]] {
        let from_grid = image_sum(&grid, 4, &x, 1).unwrap();
        let psi = estimate_psi(&t3, 0.15, &Point::new(x.clone()), 1, None, &ReplicaPlan::new(13, 100_000), &caps).unwrap();
        let tol = 3.0 * 2f64.sqrt() * psi.image_sum.std_error;
        assert!((from_grid - psi.image_sum.value).abs() <= tol, "{x:?}: {from_grid} vs {:?}", psi.image_sum);
        assert!((psi.tau.value + psi.psi.value - psi.image_sum.value).abs() < 1e-12);
    }
}

#[test]
fn pioneer_planes_dominate_the_two_point_function() {
    let m = ModelSpec::nearest_neighbour(3, 0.2).unwrap();
    let caps = Caps::extrinsic(1 << 20, 256);
    let ns = [1u64, 2, 3, 4];
    let pn = estimate_pn(&m, 0.2, &ns, &ReplicaPlan::new(14, 50_000), &caps).unwrap();
    for n in ns {
        let tau = estimate_two_point(
            &m,
            0.2,
            &Point::axis(3, 0, n as i64),
            &Region::All,
            &ReplicaPlan::new(15, 50_000),
            &caps,
        )
        .unwrap();
        let se = (pn[&n].std_error.powi(2) + tau.std_error.powi(2)).sqrt();
        assert!(pn[&n].value >= tau.value - 3.0 * se, "n = {n}: {:?} vs {tau:?}", pn[&n]);
    }
}
