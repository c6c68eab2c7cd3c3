//! Independent-oracle checks: the production solvers against dense direct
//! solves and against joint projected-gradient optimizers that share no code
//! with the alternating minimization.

mod common;

use common::*;
use nlkelvin::design_opt::{optimize_design, OptimizeOptions};
use nlkelvin::kernel::KernelFamily;
use nlkelvin::local_ref::optimize_local_design;
use nlkelvin::material::{pair_conductivity, AveragingScheme, Bounds, DesignField};
use nlkelvin::operators::{cell_norm, pair_norm, CellField, Support};
use nlkelvin::state_solvers::{solve_kelvin, solve_primal, SolveOptions};

#[test]
fn primal_energy_matches_dense_direct_solve() {
    let h = 1.0 / 8.0;
    let (mesh, pairs) = unit_square_setup(h, 4.0 * h, KernelFamily::ConstantBall);
    let bounds = Bounds::default();
    let kappa = DesignField::uniform(&mesh, bounds, 1.0);
    let f = constant_source(&mesh, 1.0);
    let opts = SolveOptions { tol: 1e-12, ..Default::default() };
    let sol = solve_primal(&kappa, &f, AveragingScheme::Harmonic, &mesh, &pairs, &opts).unwrap();
    let kdd = pair_conductivity(&kappa, AveragingScheme::Harmonic, &pairs);
    let u_ref = nlkelvin::dense::primal_dense(&mesh, &pairs, &kdd, &f).unwrap();
    // energy from the dense solution
    let hn = mesh.measure();
    let ell: f64 = u_ref.iter().zip(&f.values.values).map(|(u, fv)| u * fv * hn).sum();
    let energy_ref = -0.5 * ell;
    let rel = (sol.energy_primal - energy_ref).abs() / energy_ref.abs();
    assert!(rel <= 1e-10, "energy off dense oracle by {rel:.3e}");
}

#[test]
fn kelvin_flux_matches_nullspace_qp_oracle() {
    let h = 1.0 / 8.0;
    let (mesh, pairs) = unit_square_setup(h, 2.0 * h, KernelFamily::TruncatedTent);
    let bounds = Bounds::default();
    let mut kappa = DesignField::gamma_uniform(&mesh, bounds);
    for (k, v) in kappa.kappa.iter_mut().enumerate() {
        *v = 1.0 + 0.8 * ((k % 5) as f64) / 5.0;
    }
    let f = constant_source(&mesh, 1.0);
    let opts = SolveOptions { tol: 1e-12, ..Default::default() };
    let sol = solve_kelvin(&kappa, &f, AveragingScheme::Harmonic, &mesh, &pairs, &opts).unwrap();
    let kdd = pair_conductivity(&kappa, AveragingScheme::Harmonic, &pairs);
    let q_ref = nlkelvin::dense::kelvin_nullspace_dense(&mesh, &pairs, &kdd, &f).unwrap();
    let q = sol.q.unwrap();
    let mut diff = q.clone();
    for (v, r) in diff.values.iter_mut().zip(&q_ref.values) {
        *v -= r;
    }
    let rel =
        pair_norm(&diff, &pairs, &mesh).unwrap() / pair_norm(&q_ref, &pairs, &mesh).unwrap();
    assert!(rel <= 1e-8, "flux off null-space oracle by {rel:.3e}");
}

#[test]
fn kelvin_multiplier_equals_primal_temperature() {
    let h = 1.0 / 8.0;
    let (mesh, pairs) = unit_square_setup(h, 2.0 * h, KernelFamily::ConstantBall);
    let bounds = Bounds::default();
    let kappa = DesignField::gamma_uniform(&mesh, bounds);
    let f = constant_source(&mesh, 1.0);
    let opts = SolveOptions { tol: 1e-12, ..Default::default() };
    let primal =
        solve_primal(&kappa, &f, AveragingScheme::Harmonic, &mesh, &pairs, &opts).unwrap();
    let kdd = pair_conductivity(&kappa, AveragingScheme::Harmonic, &pairs);
    let (_, u_mult) = nlkelvin::dense::kelvin_kkt_dense(&mesh, &pairs, &kdd, &f).unwrap();
    let mut diff = primal.u.clone();
    for (v, r) in diff.values.iter_mut().zip(&u_mult) {
        *v -= r;
    }
    let u_mult_field = CellField { support: Support::Interior, values: u_mult };
    let rel = cell_norm(&diff, &mesh) / cell_norm(&u_mult_field, &mesh);
    assert!(rel <= 1e-8, "multiplier differs from primal temperature by {rel:.3e}");
}

#[test]
fn nonlocal_design_value_matches_joint_fista_oracle() {
    let h = 1.0 / 8.0;
    let (mesh, pairs) = unit_square_setup(h, 4.0 * h, KernelFamily::ConstantBall);
    let bounds = Bounds::default();
    let f = constant_source(&mesh, 1.0);
    let opts = OptimizeOptions { max_iters: 800, rel_tol: 1e-11 };
    let solve = SolveOptions { tol: 1e-12, ..Default::default() };
    let result = optimize_design(&f, bounds, &mesh, &pairs, &opts, &solve, None).unwrap();
    let oracle = nonlocal_joint_oracle(&mesh, &pairs, &f, bounds, 30_000);
    let rel = (result.d_value - oracle).abs() / oracle.abs();
    assert!(
        rel <= 1e-6,
        "alternating value {:.12e} vs FISTA oracle {:.12e} (rel {rel:.3e})",
        result.d_value,
        oracle
    );
}

#[test]
fn local_design_value_matches_joint_pg_oracle() {
    let h = 1.0 / 16.0;
    let (mesh, _) = unit_square_setup(h, 2.0 * h, KernelFamily::ConstantBall);
    let bounds = Bounds::default();
    let f = constant_source(&mesh, 1.0);
    let opts = OptimizeOptions { max_iters: 2000, rel_tol: 1e-12 };
    let solve = SolveOptions { tol: 1e-13, ..Default::default() };
    let result = optimize_local_design(&f, bounds, &mesh, &opts, &solve).unwrap();
    let oracle = local_joint_oracle_2d(&mesh, &f, bounds, 10_000, None);
    let rel = (result.d_star - oracle).abs() / oracle.abs();
    assert!(
        rel <= 1e-5,
        "alternating value {:.12e} vs PG oracle {:.12e} (rel {rel:.3e})",
        result.d_star,
        oracle
    );
    // stationarity certificate: warm-started at the produced design, the
    // joint first-order method may not descend below it measurably
    let kappa_interior: Vec<f64> =
        mesh.interior_ids.iter().map(|&id| result.kappa.kappa[id as usize]).collect();
    let polish = local_joint_oracle_2d(&mesh, &f, bounds, 10_000, Some(&kappa_interior));
    assert!(
        polish >= result.d_star - 1e-5 * result.d_star.abs(),
        "joint PG descended below the alternating optimum: {polish:.12e} < {:.12e}",
        result.d_star
    );
}
