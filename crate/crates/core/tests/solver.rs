use malab_core::experiments::random_polygon;
use malab_core::solver::{pogorelov_window, solve, Domain, SolverConfig, POGORELOV_LEVEL, POGORELOV_WINDOW};

/// The frozen window holds on the 20 polygons it was fitted on.
#[test]
fn pogorelov_window_is_reproducible() {
    for seed in 0..20 {
        let dom = Domain::polygon(random_polygon(seed).unwrap()).unwrap();
        let (w, _) = solve(&dom, &|_| 1.0, &|_| 0.0, &SolverConfig::default()).unwrap();
        let win = pogorelov_window(&w, POGORELOV_LEVEL).unwrap();
        assert!(win.within(POGORELOV_WINDOW), "polygon {seed}: {win:?}");
        assert!(win.nodes > 100);
    }
}
