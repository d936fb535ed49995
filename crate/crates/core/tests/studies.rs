use joule_fem::analysis::{
    convergence_study, solve_case, splitting_study, stability_sweep, Axis, SplittingConfig,
    StudyConfig,
};
use joule_fem::linalg::CgOptions;
use joule_fem::mms::{make_linear_case, make_trig_case};
use joule_fem::scheme::RunConfig;

fn split_cfg(meshes: Vec<usize>, taus: Vec<f64>, ref_refinements: usize) -> SplittingConfig {
    SplittingConfig {
        meshes,
        taus,
        ref_refinements,
        t_final: 0.5,
        cg: CgOptions::default(),
        jobs: 4,
    }
}

#[test]
fn trig_run_final_error() {
    let case = make_trig_case();
    let (result, errors) = solve_case(&case, &RunConfig::new(32, 1e-3)).unwrap();
    assert_eq!(result.temperature_solves, 100);
    assert!(errors.l2_u <= 5e-3, "{errors:?}");
}

#[test]
fn linear_case_has_no_orders() {
    let cfg = StudyConfig {
        axis: Axis::Space,
        levels: 3,
        n_mesh: 4,
        tau: 0.05,
        t_final: 0.1,
        cg: CgOptions::default(),
        jobs: 2,
    };
    let table = convergence_study(&make_linear_case(), &cfg).unwrap();
    assert_eq!(table.rows.len(), 3);
    for row in &table.rows {
        assert!(
            row.errors.l2_phi < 1e-11 && row.errors.h1_phi < 1e-10,
            "{row:?}"
        );
        assert!(row.order_l2_phi.is_none() && row.order_h1_phi.is_none());
    }
}

#[test]
fn study_independent_of_thread_count() {
    let mut cfg = StudyConfig {
        axis: Axis::Time,
        levels: 3,
        n_mesh: 8,
        tau: 0.1,
        t_final: 0.2,
        cg: CgOptions::default(),
        jobs: 1,
    };
    let serial = convergence_study(&make_trig_case(), &cfg).unwrap();
    cfg.jobs = 3;
    let parallel = convergence_study(&make_trig_case(), &cfg).unwrap();
    assert_eq!(serial.to_csv(&[]), parallel.to_csv(&[]));
}

#[test]
fn stability_error_shrinks_with_tau() {
    let taus = [0.5, 0.25, 1.0 / 16.0, 1.0 / 64.0];
    let table = stability_sweep(
        &make_trig_case(),
        &[64],
        &taus,
        1.0,
        &CgOptions::default(),
        4,
    )
    .unwrap();
    let errs: Vec<f64> = table.cells.iter().map(|c| c.errors.unwrap().l2_u).collect();
    let floor = errs[3];
    let excess: Vec<f64> = errs.iter().map(|e| e - floor).collect();
    for w in excess.windows(2) {
        assert!(w[1] <= 1.2 * w[0], "{errs:?}");
    }
}

#[test]
fn splitting_without_reference_refinement_is_trivial() {
    let report = splitting_study(&make_trig_case(), &split_cfg(vec![4, 8], vec![0.1], 0)).unwrap();
    for c in &report.cells {
        assert!(c.e_h_l2 < 1e-12 && c.eta_h_l2 < 1e-12, "{c:?}");
    }
}

#[test]
fn splitting_reference_is_resolved() {
    let case = make_trig_case();
    let a = splitting_study(&case, &split_cfg(vec![8], vec![0.1], 2)).unwrap();
    let b = splitting_study(&case, &split_cfg(vec![8], vec![0.1], 3)).unwrap();
    let (ea, eb) = (a.cells[0].e_h_l2, b.cells[0].e_h_l2);
    assert!((ea - eb).abs() < 0.1 * eb, "{ea} vs {eb}");
}
