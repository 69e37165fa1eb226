//! Two-dimensional smoke tests: the full pipeline at a small resolution,
//! checking the pieces that have genuinely different geometry in d = 2
//! (angular quadrature, cell cover margins, corner-touching cells).

use jumplab_core::chain::{
    assemble_generator, build_conductances, dirichlet_form, AdjacentPolicy, GeneratorMode, Lattice,
};
use jumplab_core::functionals;
use jumplab_core::kernels::KernelSpec;
use jumplab_core::operators;
use jumplab_core::pathsim;
use jumplab_core::point::{BoxBounds, Point};

fn spec2d() -> KernelSpec {
    KernelSpec::isotropic_stable(2, 0.5, 1.0).unwrap()
}

#[test]
fn functional_oracles_in_two_dimensions() {
    // d = 2 closed forms: L1(x, s) = 2π s^{-a}/a, L2(x, s) = 2π s^{2-a}/(2-a).
    let spec = spec2d();
    let x = Point::new_2d(0.0, 0.0);
    let two_pi = 2.0 * std::f64::consts::PI;
    for s in [0.25f64, 0.5, 1.0] {
        let l1 = functionals::compute_l1(&spec, &x, s).unwrap().value;
        let l1_oracle = two_pi * s.powf(-0.5) / 0.5;
        assert!(
            (l1 - l1_oracle).abs() <= 1e-8 * l1_oracle,
            "L1({s}) = {l1} vs {l1_oracle}"
        );
        let l2 = functionals::compute_l2(&spec, &x, s).unwrap().value;
        let l2_oracle = two_pi * s.powf(1.5) / 1.5;
        assert!(
            (l2 - l2_oracle).abs() <= 1e-8 * l2_oracle,
            "L2({s}) = {l2} vs {l2_oracle}"
        );
    }
}

#[test]
fn chain_and_semigroup_smoke() {
    let spec = spec2d();
    let lat = Lattice::build(2, 8, BoxBounds::cube(2, -1.0, 1.0).unwrap()).unwrap();
    assert_eq!(lat.num_sites(), 17 * 17);

    let c = build_conductances(&spec, &lat, 3, AdjacentPolicy::MomentMatched).unwrap();
    // Symmetric sparse assembly with zero diagonal.
    assert_eq!(c.get(5, 5), 0.0);
    assert_eq!(c.get(3, 30), c.get(30, 3));

    let a = assemble_generator(&c, GeneratorMode::ConservativeTruncated, &spec).unwrap();
    for i in 0..a.num_sites() {
        assert_eq!(a.row_sum(i), 0.0);
    }
    let ones = vec![1.0; a.num_sites()];
    for v in operators::semigroup_apply(&a, 0.05, &ones).unwrap() {
        assert_eq!(v, 1.0);
    }
    // Energy form nonnegative and annihilates constants.
    let f: Vec<f64> = (0..a.num_sites()).map(|i| (i % 7) as f64).collect();
    assert!(dirichlet_form(&c, &f, &f) >= 0.0);
    assert_eq!(dirichlet_form(&c, &ones, &f), 0.0);
}

#[test]
fn killed_mode_escape_rates_bracketed_by_tails() {
    let spec = spec2d();
    let lat = Lattice::build(2, 8, BoxBounds::cube(2, -1.0, 1.0).unwrap()).unwrap();
    let c = build_conductances(&spec, &lat, 3, AdjacentPolicy::MomentMatched).unwrap();
    let a = assemble_generator(&c, GeneratorMode::Killed, &spec).unwrap();
    let center = lat.nearest_site(&Point::new_2d(0.0, 0.0));
    let kill = a.kill_rate(center);
    assert!(kill > 0.0);
    // The complement of the cover lies between the two tail regions.
    let h = lat.spacing();
    let inner = functionals::compute_l1(&spec, &Point::new_2d(0.0, 0.0), 1.0 + 0.5 * h)
        .unwrap()
        .value;
    let outer = functionals::compute_l1(
        &spec,
        &Point::new_2d(0.0, 0.0),
        (1.0 + 0.5 * h) * 2f64.sqrt(),
    )
    .unwrap()
    .value;
    assert!(
        kill <= 2.0 * inner * (1.0 + 1e-6),
        "kill {kill} above inscribed bound {}",
        2.0 * inner
    );
    assert!(
        kill >= 2.0 * outer * (1.0 - 1e-6),
        "kill {kill} below circumscribed bound {}",
        2.0 * outer
    );
}

#[test]
fn exit_probabilities_smoke() {
    let spec = spec2d();
    let lat = Lattice::build(2, 8, BoxBounds::cube(2, -1.0, 1.0).unwrap()).unwrap();
    let c = build_conductances(&spec, &lat, 3, AdjacentPolicy::MomentMatched).unwrap();
    let a = assemble_generator(&c, GeneratorMode::Killed, &spec).unwrap();
    let x0 = lat.nearest_site(&Point::new_2d(0.0, 0.0));
    let grid = pathsim::exit_prob_grid(&a, x0, 0.5, &[0.0, 0.005, 0.02], 500, 5).unwrap();
    assert_eq!(grid[0].probability, 0.0);
    assert!(grid[2].probability >= grid[1].probability);
    assert!(grid[2].probability <= 1.0);
}

#[test]
fn corner_touching_cells_have_finite_literal_integrals() {
    // In d = 2 the literal policy must also handle diagonal (corner)
    // contacts; the half-order kernel keeps them integrable.
    let spec = spec2d();
    let lat = Lattice::build(2, 4, BoxBounds::cube(2, 0.0, 1.0).unwrap()).unwrap();
    let c = build_conductances(&spec, &lat, 4, AdjacentPolicy::Literal).unwrap();
    let i = lat.nearest_site(&Point::new_2d(0.0, 0.0));
    let j = lat.nearest_site(&Point::new_2d(0.25, 0.25));
    assert!(c.get(i, j).is_finite());
    assert!(c.get(i, j) > 0.0);
}
