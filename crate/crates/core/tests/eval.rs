use amod_core::env::{Action, DemandConfig, Scenario, ScenarioConfig, FEATURES};
use amod_core::eval::{
    action_grid, dev_pct, evaluate, evaluate_episodes, mean_and_se, oracle_search, run_episode, sweep_granularity,
    write_results_csv, write_sweep_csv, write_sweep_svg, BaselinePolicy, LearnedPolicy, OracleError, Policy, SweepRow,
};
use amod_core::gnn::{BackboneConfig, BackboneKind};
use amod_core::graph::GraphConfig;
use amod_core::policy::{dirichlet, PolicyError, PolicyNets};
use amod_core::{gradcheck, streams};
use proptest::prelude::*;
use rand::Rng;

fn scenario(k: usize, cols: usize, fleet: u64, horizon: usize, rate: f64) -> Scenario {
    ScenarioConfig {
        graph: GraphConfig {
            cols: Some(cols),
            ..GraphConfig::square(k)
        },
        fleet_size: fleet,
        horizon,
        price_per_trip: 4.0,
        demand: DemandConfig {
            base_rate: rate,
            ..Default::default()
        },
        carry_over: false,
    }
    .build()
    .unwrap()
}

fn skewed(fleet: u64, horizon: usize) -> Scenario {
    let mut cfg = ScenarioConfig::two_node_skewed();
    cfg.fleet_size = fleet;
    cfg.horizon = horizon;
    cfg.build().unwrap()
}

fn replay(sc: &Scenario, seed: u64, actions: &[Action]) -> f64 {
    let mut state = sc.reset(seed);
    let mut total = 0.0;
    for a in actions {
        let (next, out) = sc.step(&state, a).unwrap();
        total += out.reward;
        state = next;
    }
    total
}

/// Best total over every sequence in `grid^T`, by plain enumeration.
fn enumerate(sc: &Scenario, seed: u64, grid: &[Action]) -> f64 {
    fn go(sc: &Scenario, grid: &[Action], state: &amod_core::env::AmodState) -> f64 {
        if state.t == sc.horizon() {
            return 0.0;
        }
        grid.iter()
            .map(|a| {
                let (next, out) = sc.step(state, a).unwrap();
                out.reward + go(sc, grid, &next)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
    go(sc, grid, &sc.reset(seed))
}

/// Plays a fixed sequence of targets, ignoring the state.
struct Sequence(Vec<Action>);

impl Policy for Sequence {
    fn act(&self, _: &Scenario, state: &amod_core::env::AmodState) -> Result<Action, PolicyError> {
        Ok(self.0[state.t].clone())
    }

    fn name(&self) -> String {
        "sequence".into()
    }
}

#[test]
fn zero_demand_gives_zero_everything() {
    let sc = scenario(1, 3, 5, 4, 0.0);
    for b in BaselinePolicy::ALL {
        let (m, rows) = run_episode(&sc, &b, 3).unwrap();
        assert_eq!(m.demand_served, 0);
        if b == BaselinePolicy::NoRebalance {
            assert_eq!((m.total_reward, m.rebal_cost), (0.0, 0.0));
        }
        assert_eq!(rows.len(), 4);
    }
    let best = oracle_search(&sc, 3, 4).unwrap();
    assert_eq!(best.reward, 0.0);
    assert!(best.actions.iter().all(|a| *a == Action::Hold));
}

#[test]
fn no_rebalance_never_pays() {
    let sc = scenario(2, 2, 9, 8, 1.5);
    for m in evaluate_episodes(&sc, &BaselinePolicy::NoRebalance, 30, &[0, 1]).unwrap() {
        assert_eq!(m.rebal_cost, 0.0);
    }
}

#[test]
fn metrics_match_trajectory() {
    let sc = ScenarioConfig::commuter_pulse(3).build().unwrap();
    for b in BaselinePolicy::ALL {
        let (m, rows) = run_episode(&sc, &b, 11).unwrap();
        let served: u64 = rows.iter().map(|r| r.outcome.served).sum();
        let reward: f64 = rows.iter().map(|r| r.outcome.revenue - r.outcome.rebal_cost).sum();
        assert_eq!(m.demand_served, served);
        assert!((m.total_reward - reward).abs() < 1e-9);
        assert!(rows.iter().all(|r| r.vehicles.iter().sum::<u64>() == sc.fleet_size()));
    }
}

#[test]
fn oracle_keeps_vehicles_at_the_busy_station() {
    let sc = skewed(2, 2);
    let grid = action_grid(2, 4);
    for seed in 0..20 {
        let best = oracle_search(&sc, seed, 4).unwrap();
        assert_eq!(best.reward, enumerate(&sc, seed, &grid));
        assert_eq!(replay(&sc, seed, &best.actions), best.reward);
        let start = sc.reset(seed);
        let (next, _) = sc.step(&start, &best.actions[0]).unwrap();
        if next.pending[0] > 0 {
            assert_eq!(next.vehicles, vec![2, 0], "seed {seed}");
        }
    }
}

#[test]
fn oracle_matches_plain_enumeration() {
    let mut rng = gradcheck::rng(21);
    for case in 0..25 {
        let cols = rng.random_range(2..=3);
        let fleet = rng.random_range(1..=4);
        let horizon = rng.random_range(1..=3);
        let mut sc_cfg = scenario(1, cols, fleet, horizon, 0.0).config.clone();
        sc_cfg.demand.base_rate = rng.random_range(0.0..1.5);
        if rng.random_bool(0.5) {
            sc_cfg.demand.rate_overrides = vec![(0, 1, rng.random_range(0.5..4.0))];
        }
        let sc = sc_cfg.build().unwrap();
        let res = rng.random_range(1..=3);
        let seed = rng.random();
        let best = oracle_search(&sc, seed, res).unwrap();
        let naive = enumerate(&sc, seed, &action_grid(sc.n(), res));
        assert_eq!(best.reward, naive, "case {case}");
        assert_eq!(best.actions.len(), horizon);
    }
}

#[test]
fn oracle_dominates_random_policies() {
    // With resolution equal to the fleet size every integer target is on the
    // grid, so no policy can beat the search.
    let sc = scenario(1, 3, 4, 4, 1.0);
    let mut rng = gradcheck::rng(5);
    for seed in 0..5u64 {
        let best = oracle_search(&sc, seed, 4).unwrap().reward;
        for b in BaselinePolicy::ALL {
            assert!(run_episode(&sc, &b, seed).unwrap().0.total_reward <= best + 1e-9);
        }
        for _ in 0..100 {
            let actions: Vec<Action> = (0..sc.horizon())
                .map(|_| {
                    let c: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..5.0)).collect();
                    Action::Target(dirichlet::sample(&mut rng, &c).unwrap().0)
                })
                .collect();
            let r = run_episode(&sc, &Sequence(actions), seed).unwrap().0.total_reward;
            assert!(r <= best + 1e-9, "{r} > {best}");
        }
    }
}

#[test]
fn oracle_refuses_large_instances() {
    let big = ScenarioConfig::commuter_pulse(2).build().unwrap();
    let err = oracle_search(&big, 0, 4).unwrap_err();
    assert!(matches!(err, OracleError::TooLarge { nodes: 4, .. }));
    assert!(err.to_string().contains("nodes <= 3"));
    assert!(oracle_search(&skewed(2, 2), 0, 0).is_err());
    assert!(oracle_search(&skewed(7, 2), 0, 4).is_err());
}

#[test]
fn action_grid_sizes() {
    assert_eq!(action_grid(2, 4).len(), 1 + 5);
    assert_eq!(action_grid(3, 4).len(), 1 + 15);
    assert_eq!(action_grid(3, 1).len(), 1 + 3);
    for a in action_grid(3, 4).into_iter().skip(1) {
        let Action::Target(t) = a else { panic!("hold after the first entry") };
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn dev_pct_definition() {
    assert_eq!(dev_pct(90.0, 100.0), Some(-10.0));
    assert_eq!(dev_pct(5.0, 0.0), None);
    let mut out = Vec::new();
    let sc = skewed(2, 3);
    let with = evaluate(&sc, &BaselinePolicy::NoRebalance, "none", 5, &[0, 1], Some(4)).unwrap();
    let without = evaluate(&sc, &BaselinePolicy::NoRebalance, "none", 5, &[0, 1], None).unwrap();
    write_results_csv(&mut out, &[with.clone(), without]).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,backbone,k,seed,episodes,reward_mean,reward_se,served_mean,cost_mean,dev_pct");
    assert!(lines[1].starts_with("no_rebalance,none,1,0;1,5,"));
    assert!(lines[2].ends_with(','));
    let dev: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!((dev - with.dev_pct.unwrap()).abs() < 1e-6);
    assert!(dev <= 0.0);
}

#[test]
fn mean_and_standard_error() {
    let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
    assert_eq!(mean_and_se(&[7.0]), (7.0, 0.0));
}

fn served_difference(fleet: u64) -> (f64, f64) {
    let sc = scenario(2, 2, fleet, 6, 0.6);
    let nr = evaluate_episodes(&sc, &BaselinePolicy::NoRebalance, 200, &[0]).unwrap();
    let un = evaluate_episodes(&sc, &BaselinePolicy::UniformDistribution, 200, &[0]).unwrap();
    let diff: Vec<f64> = nr
        .iter()
        .zip(&un)
        .map(|(a, b)| a.demand_served as f64 - b.demand_served as f64)
        .collect();
    mean_and_se(&diff)
}

#[test]
fn uniform_has_no_edge_under_symmetric_demand_with_ample_supply() {
    let (m, se) = served_difference(80);
    assert!(m.abs() <= 3.0 * se, "served difference {m} (se {se})");
}

#[test]
fn uniform_corrects_drift_when_supply_binds() {
    let (m, se) = served_difference(8);
    assert!(m < -3.0 * se, "served difference {m} (se {se})");
}

#[test]
fn evaluation_is_reproducible() {
    let sc = ScenarioConfig::commuter_pulse(2).build().unwrap();
    let nets = PolicyNets::<f64>::new(&BackboneConfig::default(), FEATURES, 10.0, &mut gradcheck::rng(0));
    let policy = LearnedPolicy::new(&nets, &sc, None).unwrap();
    let csv = |p: &dyn Policy| {
        let row = evaluate(&sc, p, "gcn", 10, &[0, 1, 2], None).unwrap();
        let mut out = Vec::new();
        write_results_csv(&mut out, &[row]).unwrap();
        out
    };
    assert_eq!(csv(&policy), csv(&policy));
    let mut stochastic = LearnedPolicy::new(&nets, &sc, None).unwrap();
    stochastic.stochastic = true;
    assert_eq!(csv(&stochastic), csv(&stochastic));
    assert_ne!(csv(&policy), csv(&stochastic));
    assert_eq!(csv(&BaselinePolicy::RandomDirichlet), csv(&BaselinePolicy::RandomDirichlet));
}

#[test]
fn singleton_sweep_reproduces_evaluate() {
    let base = ScenarioConfig::commuter_pulse(3);
    let sc = base.build().unwrap();
    let nets = PolicyNets::<f64>::new(&BackboneConfig::default(), FEATURES, 10.0, &mut gradcheck::rng(1));
    let rows = sweep_granularity(&nets, None, &base, &[3], 6, &[4], false).unwrap();
    let row = evaluate(&sc, &LearnedPolicy::new(&nets, &sc, None).unwrap(), "gcn", 6, &[4], None).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].reward, rows[0].served, rows[0].cost), (row.reward_mean, row.served_mean, row.cost_mean));
    let many = sweep_granularity(&nets, None, &base, &[2, 3, 5], 2, &[0], false).unwrap();
    assert_eq!(many.iter().map(|r| r.k).collect::<Vec<_>>(), vec![2, 3, 5]);
}

#[test]
fn sweep_files() {
    let rows: Vec<SweepRow> = ["gcn", "gat", "ptdnet"]
        .iter()
        .flat_map(|b| {
            [4usize, 6, 8].map(|k| SweepRow {
                k,
                backbone: b.to_string(),
                reward: k as f64 * 10.0 + b.len() as f64,
                served: 1.0,
                cost: 0.5,
            })
        })
        .collect();
    let mut svg = Vec::new();
    write_sweep_svg(&mut svg, &rows).unwrap();
    let svg = String::from_utf8(svg).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    for b in ["gcn", "gat", "ptdnet"] {
        assert!(svg.contains(&format!("data-backbone=\"{b}\"")));
    }
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &rows).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "k,backbone,reward,served,cost");
    assert_eq!(csv.lines().nth(1).unwrap(), "4,gcn,43.000000,1.000000,0.500000");
}

#[test]
fn learned_policy_uses_structure_only_on_its_graph() {
    let cfg = BackboneConfig {
        backbone: BackboneKind::Prognn,
        ..Default::default()
    };
    let nets = PolicyNets::<f64>::new(&cfg, FEATURES, 10.0, &mut gradcheck::rng(0));
    let sc2 = ScenarioConfig::commuter_pulse(2).build().unwrap();
    let sc3 = ScenarioConfig::commuter_pulse(3).build().unwrap();
    let s = sc2.graph.adjacency().map(|a| a * 0.5);
    assert!(LearnedPolicy::new(&nets, &sc2, Some(&s)).unwrap().structure.is_some());
    assert!(LearnedPolicy::new(&nets, &sc3, Some(&s)).unwrap().structure.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn baselines_emit_simplex_actions(seed in 0u64..10_000, cols in 2usize..6, t in 0usize..5) {
        let sc = scenario(1, cols, 7, 6, 1.0);
        let mut state = sc.reset(seed);
        state.t = t;
        for b in BaselinePolicy::ALL {
            match b.act(&sc, &state).unwrap() {
                Action::Hold => prop_assert_eq!(b, BaselinePolicy::NoRebalance),
                Action::Target(a) => {
                    prop_assert_eq!(a.len(), cols);
                    prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(a.iter().all(|&x| x >= 0.0));
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic(seed in 0u64..10_000) {
        let sc = ScenarioConfig::commuter_pulse(2).build().unwrap();
        let a = run_episode(&sc, &BaselinePolicy::RandomDirichlet, seed).unwrap();
        let b = run_episode(&sc, &BaselinePolicy::RandomDirichlet, seed).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_ne!(streams::key(seed, streams::EVAL, &[0]), streams::key(seed, streams::EVAL, &[1]));
    }
}
