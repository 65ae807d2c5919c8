use evcharge::metrics::DEFAULT_E_STAR_WS;
use evcharge::oracle::{simulate_timestep, validate, OracleError, StepConfig};
use evcharge::protocol::simulate;
use evcharge::runner::default_prices;
use evcharge::scenario::{RunSeed, ScenarioConfig, Strategy};

fn scenario(evs: u32, fcc: u32, scc: u32, strategy: Strategy) -> ScenarioConfig {
    ScenarioConfig { ev_count: evs, fcc_count: fcc, scc_count: scc, strategy, ..ScenarioConfig::default() }
}

#[test]
fn energy_error_shrinks_with_the_step() {
    let cfg = scenario(6, 2, 1, Strategy::Fcfs);
    let seed = RunSeed::new(3, 0, 0);
    let mut previous = f64::INFINITY;
    for dt in [10.0, 1.0, 0.1] {
        let c = validate(&cfg, seed, &default_prices(), StepConfig::new(dt), DEFAULT_E_STAR_WS).unwrap();
        let e = c.max_energy_delta();
        assert!(e <= c.energy_bound() * (1.0 + 1e-9), "dt {dt}: {e} > {}", c.energy_bound());
        assert!(e <= previous, "dt {dt}: energy delta grew from {previous} to {e}");
        previous = e;
    }
}

#[test]
fn shared_columns_stay_within_one_step_of_energy() {
    for strategy in [Strategy::Fcfs, Strategy::Shrd] {
        let cfg = scenario(5, 0, 2, strategy);
        let c = validate(&cfg, RunSeed::new(11, 0, 0), &default_prices(), StepConfig::new(1.0), DEFAULT_E_STAR_WS)
            .unwrap();
        assert!(c.max_energy_delta() <= c.energy_bound() * (1.0 + 1e-9), "{strategy}: {}", c.report());
        assert_eq!(c.peak_delta_w, 0.0, "{strategy}");
    }
}

#[test]
fn both_engines_see_the_same_fleet() {
    let cfg = scenario(4, 1, 1, Strategy::Shrd);
    let seed = RunSeed::new(5, 2, 1);
    let ed = simulate(&cfg, seed, &default_prices()).unwrap();
    let ts = simulate_timestep(&cfg, seed, &default_prices(), StepConfig::new(2.0)).unwrap();
    let req = |o: &evcharge::protocol::SimOutput| o.evs.iter().map(|e| e.energy_required_ws).collect::<Vec<_>>();
    assert_eq!(req(&ed), req(&ts));
    assert!(ts.evs.iter().all(|e| e.completed));
}

#[test]
fn exact_mode_accepts_aligned_steps_only() {
    let cfg = scenario(2, 1, 0, Strategy::Shrd);
    let seed = RunSeed::new(0, 0, 0);
    assert!(simulate_timestep(&cfg, seed, &default_prices(), StepConfig::exact(4.0)).is_ok());
    let err = simulate_timestep(&cfg, seed, &default_prices(), StepConfig::exact(5.0)).unwrap_err();
    assert!(matches!(err, OracleError::Misaligned { .. }), "{err}");
    assert!(matches!(
        simulate_timestep(&cfg, seed, &default_prices(), StepConfig::new(0.0)),
        Err(OracleError::BadStep(_))
    ));
}
