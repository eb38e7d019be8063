use clmrmp::bench::{run_batch, BatchOptions, NamedConfig, PlanFile};
use clmrmp::environment::{builtin_names, EnvironmentFile};
use clmrmp::oracle::execute_plan;
use clmrmp::planner::{plan, verify_plan, PlannerConfig};
use clmrmp::propagation::GainSet;
use clmrmp::{builtin, load_environment, Environment, Error};

fn quick(seed: u64) -> PlannerConfig {
    PlannerConfig {
        seed,
        goal_bias: 0.5,
        time_budget: None,
        max_iterations: 500,
        ..PlannerConfig::default()
    }
}

#[test]
fn shipped_environments_load_and_round_trip() {
    for name in builtin_names() {
        let env = builtin(name).unwrap();
        let root = env.root_belief().unwrap();
        assert!(env.validator().unwrap().validate(&root.mean, &root.gamma(), &[]).is_ok(), "{name}");
        let again = Environment::from_json(&env.to_json()).unwrap();
        assert_eq!(again.to_json(), env.to_json(), "{name}");
    }
}

#[test]
fn environment_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hive.json");
    std::fs::write(&path, builtin("hive2").unwrap().to_json()).unwrap();
    let env = load_environment(&path).unwrap();
    assert_eq!(env.model.num_robots(), 2);

    std::fs::write(&path, "{\n  \"name\": 3\n}").unwrap();
    match load_environment(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(load_environment(dir.path().join("missing.json")), Err(Error::Io { .. })));
}

#[test]
fn broken_budget_names_the_field() {
    let mut file: EnvironmentFile = builtin("trivial2").unwrap().to_file();
    file.budget.p_rob = 0.2;
    match Environment::from_file(file) {
        Err(Error::Config { field, .. }) => assert!(field.contains("budget"), "{field}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn plan_verify_execute() {
    let env = builtin("trivial2").unwrap();
    let p = plan(&env, &quick(4)).unwrap().plan.unwrap();
    let gains = GainSet::lqr(env.model.robots(), 1.0, 1.0).unwrap();
    let check = verify_plan(&env, &gains, &p).unwrap();
    assert!(check.is_valid());
    let rep = execute_plan(&env, &gains, &p, 2000, 1).unwrap();
    assert!(rep.within_budget(&env.budget));
    assert_eq!(rep.obstacle.len(), p.horizon() + 1);
}

#[test]
fn plan_files_resolve_to_the_planning_model() {
    let env = builtin("trivial2").unwrap();
    let cfg = PlannerConfig {
        use_exteroception: false,
        ..quick(2)
    };
    let p = plan(&env, &cfg).unwrap().plan.unwrap();
    let (resolved, gains) = PlanFile::new(&env, &cfg, p.clone()).resolve().unwrap();
    assert!(resolved.model.pairs().is_empty());
    assert!(verify_plan(&resolved, &gains, &p).unwrap().is_valid());
}

#[test]
fn batches_repeat_exactly() {
    let env = builtin("trivial2").unwrap();
    let cfgs = vec![NamedConfig::new(quick(0))];
    let a = run_batch(&env, &cfgs, 4, 11, &BatchOptions::default()).unwrap();
    let b = run_batch(&env, &cfgs, 4, 11, &BatchOptions::default()).unwrap();
    assert_eq!(a.stats, b.stats);
    let ra: Vec<_> = a.trials.iter().map(|t| &t.record).collect();
    let rb: Vec<_> = b.trials.iter().map(|t| &t.record).collect();
    assert_eq!(ra, rb);
    assert_eq!(a.stats[0].success_rate, a.stats[0].successes as f64 / 4.0);
}
