use hfm_core::datagen::{
    export_dataset, import_dataset, sample_points, solve_transport, AnalyticFlow, GridField2D, InitialCondition,
    SolverConfig,
};
use hfm_core::network::checkpoint::Checkpoint;
use hfm_core::network::{Field, MlpArchitecture, SpatialDim};
use hfm_core::physics::FlowParams;
use hfm_core::postproc::{evaluate_on_grid, relative_l2, GridSpec};
use hfm_core::training::{train, TrainConfig, TrainState};

fn snapshots() -> Vec<GridField2D> {
    let cfg = SolverConfig {
        n: 16,
        dt: 0.05,
        kappa: 0.1,
        t_final: 0.5,
        snapshot_interval: 0.1,
        dealias: true,
        initial: InitialCondition::standard(),
        unit_interval: true,
    };
    solve_transport(&AnalyticFlow::taylor_green(10.0).unwrap(), &cfg).unwrap()
}

fn small_config(seed: u64, flow: FlowParams) -> TrainConfig {
    TrainConfig {
        stage_epochs: vec![8, 4],
        stage_rates: vec![3e-3, 1e-3],
        batch_size: 64,
        seed,
        flow,
        ..TrainConfig::default()
    }
}

#[test]
fn generate_train_and_evaluate() {
    let snaps = snapshots();
    assert_eq!(snaps.len(), 6);
    let ds = sample_points(&snaps, 400, 1, 0.0).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tg.csv");
    export_dataset(&ds, &path).unwrap();
    let back = import_dataset(&path).unwrap();
    assert_eq!(back.points(), ds.points());
    assert_eq!(back.c(), ds.c());

    let arch = MlpArchitecture::new(SpatialDim::Two, 2, 16).unwrap();
    let cfg = small_config(5, FlowParams::fixed(10.0, 10.0).unwrap());
    let state = train(&cfg, arch, &ds, None, &mut ()).unwrap();
    assert_eq!(state.history.len(), 12);
    let first = state.history[0].loss.total;
    let last = state.history.last().unwrap().loss.total;
    assert!(last < first, "loss {first} -> {last}");

    let ck = Checkpoint {
        mlp: state.mlp.clone(),
        flow: state.flow,
    };
    let ck_path = dir.path().join("model.hfmc");
    ck.write(&ck_path).unwrap();
    assert_eq!(Checkpoint::read(&ck_path).unwrap(), ck);

    let grid = GridSpec {
        lo: vec![0.0, 0.0],
        hi: vec![5.0, 5.0],
        counts: vec![8, 8],
    };
    let a = evaluate_on_grid(&state.mlp, &grid, &[0.25]).unwrap();
    let b = evaluate_on_grid(&ck.mlp, &grid, &[0.25]).unwrap();
    assert!(!a.extrapolated);
    let report = relative_l2(&a.snapshots, &b.snapshots, true).unwrap();
    for field in [Field::C, Field::D, Field::U, Field::V, Field::P] {
        assert_eq!(report.get(0.25, field).unwrap().rel_l2, Some(0.0));
    }
}

#[test]
fn training_is_reproducible_and_seed_dependent() {
    let ds = sample_points(&snapshots(), 300, 2, 0.0).unwrap();
    let arch = MlpArchitecture::new(SpatialDim::Two, 1, 8).unwrap();
    let flow = FlowParams::trainable(1.0, 1.0).unwrap();
    let run = |seed| train(&small_config(seed, flow), arch, &ds, None, &mut ()).unwrap();
    let (a, b, c) = (run(3), run(3), run(4));
    assert_eq!(a.history, b.history);
    assert_eq!(a.mlp, b.mlp);
    assert_ne!(a.history, c.history);
    // trainable exponents move away from the guess
    assert_ne!(a.flow.re.value(), 1.0);
}

#[test]
fn warm_start_continues_from_given_state() {
    let ds = sample_points(&snapshots(), 200, 3, 0.0).unwrap();
    let arch = MlpArchitecture::new(SpatialDim::Two, 1, 8).unwrap();
    let flow = FlowParams::fixed(10.0, 10.0).unwrap();
    let init = TrainState::initial(arch, &ds, flow, 9).unwrap();
    let mut cfg = small_config(9, flow);
    cfg.stage_epochs = vec![0, 0];
    let same = train(&cfg, arch, &ds, Some(init.clone()), &mut ()).unwrap();
    assert_eq!(same.mlp, init.mlp);
    assert!(same.history.is_empty());
}
