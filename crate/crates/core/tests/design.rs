use num_complex::Complex64;
use proptest::prelude::*;

use qpl_core::design::{
    launcher_channels, predict_ratio, scan_dipole_position, sweep_geometry, CellStatus, DesignError, DesignReference,
    LauncherGeometry, SetupConstants, SweepGrid, SweepSettings,
};
use qpl_core::dipole::{EmissionOptions, EmitterConfig, Reference};
use qpl_core::photophysics::{branching_from_rates, extract_branching};
use qpl_core::stratified::OpticalStack;

fn single_cell(gap: f64, t: f64) -> SweepGrid {
    SweepGrid {
        gap_nm: vec![gap],
        t_m2_nm: vec![t],
        ..SweepGrid::default()
    }
}

#[test]
fn one_cell_sweep_equals_direct_call() {
    let settings = SweepSettings::default();
    let map = sweep_geometry(&single_cell(40.0, 8.0), &settings).unwrap();
    let direct = launcher_channels(&LauncherGeometry::new(40.0, 8.0), settings.reference, &settings.options).unwrap();
    let cell = map.cell(0, 0).unwrap();
    assert_eq!(cell.dre, direct.dre);
    assert_eq!(cell.beta_spp, direct.beta_spp);
    assert_eq!(cell.xi, direct.xi);
    assert_eq!(map.dre[(0, 0)], direct.dre);
}

#[test]
fn cached_sweep_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let grid = SweepGrid {
        gap_nm: vec![30.0, 50.0],
        t_m2_nm: vec![4.0, 9.5],
        ..SweepGrid::default()
    };
    let settings = SweepSettings {
        cache_dir: Some(dir.path().to_path_buf()),
        jobs: Some(2),
        ..SweepSettings::default()
    };
    let first = sweep_geometry(&grid, &settings).unwrap();
    assert!(first.status.iter().all(|s| *s == CellStatus::Computed));
    let second = sweep_geometry(&grid, &settings).unwrap();
    assert!(second.status.iter().all(|s| *s == CellStatus::Cached));
    assert_eq!(first.cells, second.cells);
    let uncached = sweep_geometry(&grid, &SweepSettings::default()).unwrap();
    assert_eq!(first.cells, uncached.cells);
}

#[test]
fn dre_falls_with_gap_at_fixed_cap() {
    let settings = SweepSettings::default();
    let map = sweep_geometry(
        &SweepGrid {
            gap_nm: vec![20.0, 60.0],
            t_m2_nm: vec![8.0],
            ..SweepGrid::default()
        },
        &settings,
    )
    .unwrap();
    assert!(map.dre[(1, 0)] < map.dre[(0, 0)]);
}

#[test]
fn symmetric_cavity_gives_symmetric_scan() {
    let (air, ag, diamond) = (Complex64::new(1.0, 0.0), Complex64::new(-21.0, 0.4), Complex64::new(2.42f64.powi(2), 0.0));
    let stack = OpticalStack::new(685.0, air, vec![(ag, 30.0), (diamond, 40.0), (ag, 30.0)], air)
        .unwrap()
        .with_emitter_layer(1)
        .unwrap();
    let opts = EmissionOptions {
        reference: Reference::FreeSpace,
        ..EmissionOptions::default()
    };
    let z = [6.0, 13.0, 27.0, 34.0];
    let pts = scan_dipole_position(&stack, &EmitterConfig::vertical(1, 20.0, 685.0), &z, &opts).unwrap();
    for (a, b) in [(0, 3), (1, 2)] {
        let (x, y) = (pts[a].channels.dre, pts[b].channels.dre);
        assert!((x / y - 1.0).abs() < 1e-6, "z = {} vs {}: {x} vs {y}", z[a], z[b]);
    }
}

#[test]
fn scan_rejects_boundary_positions() {
    let geometry = LauncherGeometry::new(40.0, 8.0);
    let stack = qpl_core::design::design_optical_stack(&geometry).unwrap();
    let err = scan_dipole_position(&stack, &geometry.emitter(), &[10.0, 40.0], &EmissionOptions::default());
    assert!(matches!(err, Err(DesignError::PositionOutside { .. })));
}

#[test]
fn glass_reference_changes_only_the_normalisation() {
    let g = LauncherGeometry::new(40.0, 8.0);
    let opts = EmissionOptions::default();
    let a = launcher_channels(&g, DesignReference::FreeSpace, &opts).unwrap();
    let b = launcher_channels(&g, DesignReference::GlassMatchedSpacer, &opts).unwrap();
    assert!((a.xi - b.xi).abs() < 1e-12 && (a.beta_spp - b.beta_spp).abs() < 1e-12);
    assert!((a.dre * a.reference_rate / (b.dre * b.reference_rate) - 1.0).abs() < 1e-12);
}

fn constants() -> impl Strategy<Value = SetupConstants> {
    (0.05f64..1.0, 0.05f64..1.0, 0.05f64..1.0, 0.0f64..10_000.0, 0.5f64..20.0).prop_map(|(a, b, c, r, l)| {
        SetupConstants {
            eta_col_dipole: a,
            eta_col_ring: b,
            eta_spp_ff: c,
            trench_radius_nm: r,
            propagation_length_um: l,
        }
    })
}

proptest! {
    #[test]
    fn predicted_ratio_inverts_to_the_same_branching(xi in 0.0f64..0.999, c in constants()) {
        let ratio = predict_ratio(xi, &c).unwrap();
        let back = branching_from_rates(1.0, ratio, &c).unwrap();
        prop_assert!((back - xi).abs() < 1e-9);
    }

    #[test]
    fn branching_ignores_a_common_scale(d in 1.0f64..1e6, r in 1.0f64..1e6, k in 0.01f64..100.0, c in constants()) {
        let a = extract_branching(d, 1.0, r, 1.0, &c).unwrap();
        let b = extract_branching(k * d, 1.0, k * r, 1.0, &c).unwrap();
        let e = extract_branching(d, k, r, k, &c).unwrap();
        prop_assert!((a.xi - b.xi).abs() < 1e-12 && (a.xi - e.xi).abs() < 1e-12);
    }

    #[test]
    fn branching_grows_with_ring_counts(d in 1.0f64..1e6, r in 0.0f64..1e6, extra in 1.0f64..1e6, c in constants()) {
        let a = extract_branching(d, 1.0, r, 1.0, &c).unwrap();
        let b = extract_branching(d, 1.0, r + extra, 1.0, &c).unwrap();
        prop_assert!(b.xi > a.xi && (0.0..=1.0).contains(&a.xi));
    }
}
