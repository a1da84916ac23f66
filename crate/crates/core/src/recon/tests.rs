use std::f64::consts::PI;

use super::*;
use crate::bcdata::RegionGeometry;
use crate::manifold::{build_circle, DiscreteManifold, Region};
use crate::spectral::decompose;
use crate::wave::{assemble_lambda, TimeGrid};

pub(crate) fn circle_setup(horizon: f64) -> (DiscreteManifold, Region, DataOracle) {
    let m = build_circle(64, 2.0 * PI).unwrap();
    let dec = decompose(&m, None).unwrap();
    let g = TimeGrid::for_spectrum(horizon, dec.lambda_max(), 1.0).unwrap();
    let s = Region::arc(&m, 0.6 * PI, 1.4 * PI).unwrap();
    let r = Region::arc(&m, -PI / 4.0, PI / 4.0).unwrap();
    let data = assemble_lambda(&dec, &s, &r, g).unwrap();
    let oracle = DataOracle::new(data, RegionGeometry::from_manifold(&m, &s), RegionGeometry::from_manifold(&m, &r)).unwrap();
    (m, r, oracle)
}

#[test]
fn trivial_inclusions() {
    let (m, _, oracle) = circle_setup(3.0);
    let rec = Reconstructor::new(&oracle, 3.0, ReconSettings::new(m.mesh_spacing_h)).unwrap();
    let g0 = rec.patch(rec.boundary[0], 2.0 * m.mesh_spacing_h);

    let mut q = InclusionQuery::new(g0.clone(), 1.0, vec![(g0.clone(), 1.0)]);
    assert_eq!(rec.inclusion_test(&mut q).unwrap(), Inclusion::Subset);
    assert!(q.residual <= 1e-3 && q.trials > 8);

    let mut q = InclusionQuery::new(g0[..1].to_vec(), 0.0, vec![(g0.clone(), 0.0)]);
    assert_eq!(rec.inclusion_test(&mut q).unwrap(), Inclusion::Subset);

    let mut q = InclusionQuery::new(Vec::new(), 1.0, vec![(g0.clone(), 1.0)]);
    assert!(rec.inclusion_test(&mut q).is_err());

    // s₂ ≥ s₀ nests M(y₀, s₀) inside M(R, s₂).
    let (y0, y1) = (rec.boundary[0], rec.boundary[1]);
    let v = rec.point_inclusion_test(y0, y1, 1.0, 0.2, 1.0).unwrap();
    assert_eq!(v.verdict, Inclusion::Subset);
    let v = rec.point_inclusion_test(y0, y0, 1.0, 1.0, 0.1).unwrap();
    assert_eq!(v.verdict, Inclusion::Subset);
}

#[test]
fn circle_not_subset_far_cover() {
    let (m, r, oracle) = circle_setup(3.0);
    let h = m.mesh_spacing_h;
    let rec = Reconstructor::new(&oracle, 3.0, ReconSettings::new(h)).unwrap();
    // Waves from one end of the arc reach 1.5 beyond it; a cap of 0.5 around R misses that.
    let y0 = rec.boundary[0];
    let mut q = InclusionQuery::new(rec.patch(y0, 2.0 * h), 1.5, vec![(rec.all_of_r(), 0.5)]);
    assert_eq!(rec.inclusion_test(&mut q).unwrap(), Inclusion::NotSubset);
    let margin = inclusion_margin(&m, &r, &q).unwrap();
    assert!(margin > 0.5);
}

#[test]
fn circle_sigma_within_band() {
    let horizon = 3.0;
    let (m, r, oracle) = circle_setup(horizon);
    let rec = Reconstructor::new(&oracle, horizon, ReconSettings::new(m.mesh_spacing_h)).unwrap();
    let grid = rec.settings.grid(horizon);
    let tol = 2.0 * m.mesh_spacing_h + rec.settings.step;
    for &y in &rec.boundary {
        let est = rec.recover_sigma(y, &grid).unwrap();
        let truth = true_sigma(&m, &r, r.vertices[y]).unwrap();
        assert!((est.sigma - truth).abs() <= tol, "y {y}: {} vs {truth}", est.sigma);
    }
}

#[test]
fn circle_distances_near_and_far() {
    let horizon = 3.0;
    let (m, r, oracle) = circle_setup(horizon);
    let rec = Reconstructor::new(&oracle, horizon, ReconSettings::new(m.mesh_spacing_h)).unwrap();
    let grid = rec.settings.grid(horizon);
    let tol = 2.0 * m.mesh_spacing_h + rec.settings.step;
    let y = rec.boundary[1];
    let samples: Vec<(usize, f64)> = [0.6, 1.0].iter().map(|&s| (y, s)).collect();
    let out = rec.distance_sweep(&samples, &rec.boundary, &grid).unwrap();
    assert_eq!(out.len(), 4);
    for d in out {
        let truth = true_boundary_distance(&m, &r, r.vertices[d.y], d.s, r.vertices[d.z]).unwrap();
        assert!((d.distance - truth).abs() <= tol, "s {} z {}: {} vs {truth}", d.s, d.z, d.distance);
        assert!(d.sandwich_ok && !d.upper_bound);
    }
}
