//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The training criteria take a long time; run this target in release mode
//! (`cargo test --release --test acceptance`) or let the workspace test
//! profile's optimisation level apply.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hfm_core::datagen::{
    analytic_eval, sample_points, solve_transport, AnalyticFlow, FlowKind, GridField2D, InitialCondition, SolverConfig,
    Term,
};
use hfm_core::network::checkpoint::Checkpoint;
use hfm_core::network::{initialize, Activation, Field, InputNormalization, Mlp, MlpArchitecture, SpatialDim};
use hfm_core::physics::{residuals_2d, residuals_3d, FlowParam, FlowParams};
use hfm_core::postproc::{
    evaluate_on_grid, lift_drag, relative_l2, wall_shear_stress, FieldSnapshot, FnField, GridSpec,
    SurfaceDiscretization,
};
use hfm_core::training::{train, Batch, LossEvaluator, LossWeights, TrainConfig, TrainState, LOG_HEADER};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn max_abs_rel(ad: &[f64], fd: &[f64]) -> f64 {
    let scale = ad.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    ad.iter().zip(fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

// ---------------------------------------------------------------- 1

fn random_mlp(rng: &mut ChaCha8Rng, k: u64) -> Mlp {
    let dim = if rng.random_bool(0.5) { SpatialDim::Two } else { SpatialDim::Three };
    let mut arch = MlpArchitecture::new(dim, rng.random_range(1..=4), rng.random_range(2..=32)).unwrap();
    if k % 5 == 4 {
        arch.activation = Activation::Tanh;
    }
    let mut params = initialize(&arch, 1000 + k).unwrap();
    for p in params.as_mut_slice() {
        *p += rng.random_range(-0.1..0.1);
    }
    let n = arch.input_arity();
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|a| a + rng.random_range(0.5..4.0)).collect();
    Mlp::new(arch, params, InputNormalization::from_bounds(&lo, &hi).unwrap()).unwrap()
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut first, mut second, mut grad) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..50 {
        let mlp = random_mlp(&mut rng, k);
        let n = mlp.arch.input_arity();
        let bounds = mlp.normalization.bounds();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { bounds.iter().map(|(a, b)| rng.random_range(*a..*b)).collect() };
        let fields = mlp.arch.dim.fields();
        for _ in 0..3 {
            let x = draw(&mut rng);
            let jet = mlp.forward_jet(&x).unwrap();
            let f = |p: &[f64]| mlp.forward(p).unwrap();
            let center = f(&x);
            for axis in 0..n {
                let (h1, h2) = (1e-5, 1e-4);
                let at = |h: f64| {
                    let mut p = x.clone();
                    p[axis] += h;
                    f(&p)
                };
                let (p1, m1, p2, m2) = (at(h1), at(-h1), at(h2), at(-h2));
                let mut ad1 = Vec::new();
                let mut fd1 = Vec::new();
                let mut ad2 = Vec::new();
                let mut fd2 = Vec::new();
                for (o, fld) in fields.iter().enumerate() {
                    ad1.push(if axis == 0 { jet.dt(*fld) } else { jet.grad(*fld, axis - 1) });
                    fd1.push((p1[o] - m1[o]) / (2.0 * h1));
                    if axis > 0 {
                        ad2.push(jet.second(*fld, axis - 1));
                        fd2.push((p2[o] - 2.0 * center[o] + m2[o]) / (h2 * h2));
                    }
                }
                first = first.max(max_abs_rel(&ad1, &fd1));
                if axis > 0 {
                    second = second.max(max_abs_rel(&ad2, &fd2));
                }
            }
        }
        // full loss with trainable flow numbers
        let count = 4;
        let mut pts = Vec::new();
        for _ in 0..count {
            pts.extend(draw(&mut rng));
        }
        let c: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..1.0)).collect();
        let ids: Vec<usize> = (0..count).collect();
        let batch = Batch::same_as_data(&pts, &c, &ids);
        let flow = FlowParams::trainable(rng.random_range(1.0..20.0), rng.random_range(1.0..20.0)).unwrap();
        let mut ev = LossEvaluator::new(LossWeights::default());
        let g = ev.evaluate(&mlp, &flow, &batch, true).unwrap().gradient;
        let mut loss = |m: &Mlp, fp: &FlowParams| ev.evaluate(m, fp, &batch, false).unwrap().loss.total;
        let h = 1e-6;
        let mut fd = Vec::with_capacity(g.len());
        let mut m = mlp.clone();
        for i in 0..mlp.params.len() {
            let p0 = m.params.as_slice()[i];
            m.params.as_mut_slice()[i] = p0 + h;
            let up = loss(&m, &flow);
            m.params.as_mut_slice()[i] = p0 - h;
            let down = loss(&m, &flow);
            m.params.as_mut_slice()[i] = p0;
            fd.push((up - down) / (2.0 * h));
        }
        for which in 0..2 {
            let shift = |d: f64| {
                let mut f = flow;
                let slot = if which == 0 { &mut f.re } else { &mut f.pec };
                if let FlowParam::Trainable { log_value } = slot {
                    *log_value += d;
                }
                f
            };
            fd.push((loss(&mlp, &shift(h)) - loss(&mlp, &shift(-h))) / (2.0 * h));
        }
        grad = grad.max(max_abs_rel(&g, &fd));
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        first < 1e-5 && second < 1e-4 && grad < 1e-4 && secs < 60.0,
        format!("first {first:.2e} (<1e-5), second {second:.2e} (<1e-4), loss gradient {grad:.2e} (<1e-4), {secs:.1}s (<60s)"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = Vec::new();
    for kind in [
        FlowKind::TaylorGreen2d,
        FlowKind::Beltrami3d,
        FlowKind::Stagnation2d,
        FlowKind::RigidRotation2d,
    ] {
        let flow = AnalyticFlow::new(kind, 7.5).unwrap();
        let fp = FlowParams::fixed(7.5, 3.0).unwrap();
        let mut m = 0.0f64;
        for _ in 0..100 {
            let t = rng.random_range(0.0..2.0);
            let x: Vec<f64> = (0..flow.dim().n()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let jet = analytic_eval(&flow, t, &x).unwrap();
            let r = match flow.dim() {
                SpatialDim::Two => residuals_2d(&jet, &fp).unwrap(),
                SpatialDim::Three => residuals_3d(&jet, &fp).unwrap(),
            };
            m = (0..6).filter_map(|i| r.get(i)).fold(m, |a, e| a.max(e.abs()));
        }
        worst.push((kind.name(), m));
    }
    let pass = worst.iter().all(|(_, m)| *m < 1e-10);
    let detail = worst.iter().map(|(n, m)| format!("{n} {m:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("max |e| per flow: {detail} (<1e-10)"))
}

// ---------------------------------------------------------------- 3

fn sine(amplitude: f64, kx: i32, phase_x: f64, ky: i32, phase_y: f64) -> Term {
    Term::Sine {
        amplitude,
        kx,
        phase_x,
        ky,
        phase_y,
    }
}

struct SolverChecks {
    eigen: f64,
    wave: f64,
    drift: f64,
    snapshots: Vec<GridField2D>,
}

fn solver_checks() -> SolverChecks {
    let still = AnalyticFlow::new(FlowKind::Quiescent2d, 1.0).unwrap();
    let cfg = SolverConfig {
        n: 32,
        dt: 0.01,
        kappa: 0.1,
        t_final: 1.0,
        snapshot_interval: 1.0,
        dealias: true,
        initial: InitialCondition {
            mean: 0.0,
            terms: vec![sine(1.0, 1, 0.0, 1, 0.0)],
        },
        unit_interval: false,
    };
    let s = solve_transport(&still, &cfg).unwrap();
    let end = s.last().unwrap();
    let decay = (-0.2f64).exp();
    let mut eigen = 0.0f64;
    for i in 0..32 {
        for j in 0..32 {
            let (x, y) = end.node(i, j);
            eigen = eigen.max((end.at(i, j) - decay * x.sin() * y.sin()).abs());
        }
    }

    let stream = AnalyticFlow::new(FlowKind::UniformStream2d { u: 1.0, v: 0.0 }, 1.0).unwrap();
    let cfg = SolverConfig {
        n: 64,
        dt: 0.01,
        kappa: 0.0,
        t_final: 1.0,
        snapshot_interval: 1.0,
        dealias: true,
        initial: InitialCondition {
            mean: 0.5,
            terms: vec![sine(0.5, 1, 0.0, 0, PI / 2.0)],
        },
        unit_interval: true,
    };
    let s = solve_transport(&stream, &cfg).unwrap();
    let end = s.last().unwrap();
    let mut wave = 0.0f64;
    for i in 0..64 {
        for j in 0..64 {
            let (x, _) = end.node(i, j);
            wave = wave.max((end.at(i, j) - 0.5 * (1.0 + (x - 1.0).sin())).abs());
        }
    }

    let snapshots = tg_snapshots();
    let m0 = snapshots[0].mean();
    let drift = snapshots.iter().fold(0.0f64, |m, s| m.max((s.mean() - m0).abs()));
    SolverChecks {
        eigen,
        wave,
        drift,
        snapshots,
    }
}

fn criterion_3(c: &SolverChecks, secs: f64) -> Outcome {
    outcome(
        c.eigen < 1e-8 && c.wave < 1e-6 && c.drift < 1e-10 && secs < 60.0,
        format!(
            "eigenmode {:.1e} (<1e-8), travelling wave {:.1e} (<1e-6), mean drift {:.1e} (<1e-10), {secs:.1}s (<60s)",
            c.eigen, c.wave, c.drift
        ),
    )
}

// ---------------------------------------------------------------- 4, 5, 6, 8

const RE: f64 = 10.0;

fn tg_solver() -> SolverConfig {
    SolverConfig {
        n: 64,
        dt: 0.01,
        kappa: 1.0 / RE,
        t_final: 2.0,
        snapshot_interval: 0.05,
        dealias: true,
        initial: InitialCondition::standard(),
        unit_interval: true,
    }
}

fn tg_snapshots() -> Vec<GridField2D> {
    solve_transport(&AnalyticFlow::taylor_green(RE).unwrap(), &tg_solver()).unwrap()
}

const MID_WINDOW: [f64; 3] = [0.5, 1.0, 1.5];

struct Run {
    secs: f64,
    ratio: f64,
    /// `(u, v, p)` relative L2 errors at each mid-window time.
    errors: Vec<[f64; 3]>,
    log: String,
    checkpoint: Vec<u8>,
    state: TrainState,
}

impl Run {
    fn mean_velocity_error(&self) -> f64 {
        self.errors.iter().map(|e| 0.5 * (e[0] + e[1])).sum::<f64>() / self.errors.len() as f64
    }
}

fn tg_run(snapshots: &[GridField2D], seed: u64, flow: FlowParams, weights: LossWeights) -> Run {
    let t0 = Instant::now();
    let ds = sample_points(snapshots, 50_000, seed, 0.0).unwrap();
    let cfg = TrainConfig {
        stage_epochs: vec![100, 200, 100],
        stage_rates: vec![1e-3, 1e-4, 1e-5],
        batch_size: 5000,
        seed,
        flow,
        weights,
        ..TrainConfig::default()
    };
    let arch = MlpArchitecture::new(SpatialDim::Two, 6, 50).unwrap();
    let state = train(&cfg, arch, &ds, None, &mut ()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let first = state.history.first().unwrap().loss.total;
    let last = state.history.last().unwrap().loss.total;
    let mut log = format!("{LOG_HEADER}\n");
    for row in &state.history {
        log.push_str(&row.csv_row());
        log.push('\n');
    }
    let checkpoint = Checkpoint {
        mlp: state.mlp.clone(),
        flow: state.flow,
    }
    .to_bytes();
    Run {
        secs,
        ratio: first / last,
        errors: field_errors(&state.mlp),
        log,
        checkpoint,
        state,
    }
}

fn field_errors(mlp: &Mlp) -> Vec<[f64; 3]> {
    let h = 2.0 * PI / 64.0;
    let grid = GridSpec {
        lo: vec![0.0, 0.0],
        hi: vec![63.0 * h, 63.0 * h],
        counts: vec![64, 64],
    };
    let pred = evaluate_on_grid(mlp, &grid, &MID_WINDOW).unwrap().snapshots;
    let exact = evaluate_on_grid(&AnalyticFlow::taylor_green(RE).unwrap(), &grid, &MID_WINDOW)
        .unwrap()
        .snapshots;
    let keep = |s: Vec<FieldSnapshot>| -> Vec<FieldSnapshot> {
        s.into_iter()
            .map(|mut s| {
                s.values.retain(|f, _| matches!(f, Field::U | Field::V | Field::P));
                s
            })
            .collect()
    };
    let report = relative_l2(&keep(pred), &keep(exact), true).unwrap();
    MID_WINDOW
        .iter()
        .map(|&t| {
            let e = |f| report.get(t, f).and_then(|e| e.rel_l2).unwrap_or(f64::INFINITY);
            [e(Field::U), e(Field::V), e(Field::P)]
        })
        .collect()
}

fn fmt_errors(r: &Run) -> String {
    MID_WINDOW
        .iter()
        .zip(&r.errors)
        .map(|(t, e)| format!("t={t}: u {:.3} v {:.3} p {:.3}", e[0], e[1], e[2]))
        .collect::<Vec<_>>()
        .join("; ")
}

fn criterion_4(r: &Run) -> Outcome {
    let fields_ok = r.errors.iter().all(|e| e[0] < 0.05 && e[1] < 0.05 && e[2] < 0.10);
    outcome(
        fields_ok && r.ratio >= 100.0 && r.secs <= 45.0 * 60.0,
        format!(
            "{} (u,v < 0.05, p < 0.10); loss ratio {:.1} (>=100); {:.0}s (<=2700s)",
            fmt_errors(r),
            r.ratio,
            r.secs
        ),
    )
}

fn criterion_5(with_d: &[f64], without_d: &[f64]) -> Outcome {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(with_d), mean(without_d));
    let per_seed = with_d
        .iter()
        .zip(without_d)
        .enumerate()
        .map(|(s, (w, o))| format!("seed {s}: {w:.4} vs {o:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        a <= b,
        format!("mean velocity error with d {a:.4} <= without d {b:.4} ({per_seed})"),
    )
}

fn criterion_6(r: &Run) -> Outcome {
    let re = r.state.flow.re.value();
    let pec = r.state.flow.pec.value();
    let (er, ep) = ((re - RE).abs() / RE, (pec - RE).abs() / RE);
    outcome(
        er < 0.10 && ep < 0.10 && r.secs <= 3600.0,
        format!(
            "Re {re:.3} ({:.2}%), Pec {pec:.3} ({:.2}%) (<10%); {:.0}s (<=3600s)",
            100.0 * er,
            100.0 * ep,
            r.secs
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let circle = SurfaceDiscretization::circle([0.0, 0.0], 1.0, 256).unwrap();
    let linear_p = FnField {
        dim: SpatialDim::Two,
        f: |_t: f64, x: &[f64]| {
            let mut j = hfm_core::network::FieldJet::zeros(SpatialDim::Two);
            j.value[Field::P as usize] = -x[0];
            j.d_x[0][Field::P as usize] = -1.0;
            j
        },
    };
    let (_, drag) = lift_drag(&linear_p, &circle, 1.0, 0.0).unwrap();

    let couette = FnField {
        dim: SpatialDim::Two,
        f: |_t: f64, x: &[f64]| {
            let mut j = hfm_core::network::FieldJet::zeros(SpatialDim::Two);
            j.value[Field::U as usize] = x[1];
            j.d_x[1][Field::U as usize] = 1.0;
            j
        },
    };
    let wall = SurfaceDiscretization::segment([0.0, 0.0], [1.0, 0.0], 11, [0.0, 1.0]).unwrap();
    let wss = wall_shear_stress(&couette, &wall, 1.0, 0.0).unwrap();
    let couette_err = wss.wss.iter().fold(0.0f64, |m, w| m.max((w - 1.0).abs()));

    // a quarter turn of field and surface maps (F_L, F_D) to (F_D, -F_L)
    let tg = AnalyticFlow::taylor_green(3.0).unwrap();
    let rot = |v: [f64; 2]| [-v[1], v[0]];
    let rotated = FnField {
        dim: SpatialDim::Two,
        f: |t: f64, x: &[f64]| {
            let j = analytic_eval(&tg, t, &[x[1], -x[0]]).unwrap();
            let mut r = hfm_core::network::FieldJet::zeros(SpatialDim::Two);
            let (u, v, p) = (Field::U as usize, Field::V as usize, Field::P as usize);
            r.value[p] = j.value[p];
            r.value[u] = -j.value[v];
            r.value[v] = j.value[u];
            let g = |f: usize| [j.d_x[0][f], j.d_x[1][f]];
            let (gu, gv, gp) = (g(u), g(v), g(p));
            let grads = [(p, rot(gp)), (u, [gv[1], -gv[0]]), (v, [-gu[1], gu[0]])];
            for (f, gr) in grads {
                r.d_x[0][f] = gr[0];
                r.d_x[1][f] = gr[1];
            }
            r
        },
    };
    let c = SurfaceDiscretization::circle([0.7, -0.2], 0.9, 64).unwrap();
    let rc = SurfaceDiscretization::new(
        c.points().iter().map(|p| rot(*p)).collect(),
        c.normals().iter().map(|n| rot(*n)).collect(),
        c.weights().to_vec(),
        true,
    )
    .unwrap();
    let (l, d) = lift_drag(&tg, &c, 3.0, 0.5).unwrap();
    let (lr, dr) = lift_drag(&rotated, &rc, 3.0, 0.5).unwrap();
    let rot_err = (lr - d).abs().max((dr + l).abs());

    outcome(
        (drag - PI).abs() < 1e-3 && couette_err < 1e-12 && rot_err < 1e-10,
        format!(
            "F_D - π = {:.1e} (<1e-3), Couette |WSS - 1| {couette_err:.1e} (<1e-12), rotation {rot_err:.1e} (<1e-10)",
            drag - PI
        ),
    )
}

// ----------------------------------------------------------------

fn report(id: &str, name: &str, o: &Outcome) -> bool {
    println!("{} criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; filters
    // select nothing here, so only `--list` needs handling.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= report("1", "autodiff oracle equivalence", &criterion_1());
    ok &= report("2", "residual identities", &criterion_2());

    let t0 = Instant::now();
    let solver = solver_checks();
    ok &= report("3", "transport solver", &criterion_3(&solver, t0.elapsed().as_secs_f64()));

    ok &= report("7", "force and shear quadrature", &criterion_7());

    let fixed = FlowParams::fixed(RE, RE).unwrap();
    let base = tg_run(&solver.snapshots, 0, fixed, LossWeights::default());
    ok &= report("4", "hidden-field recovery", &criterion_4(&base));

    let rerun_solver = solver_checks();
    let rerun = tg_run(&rerun_solver.snapshots, 0, fixed, LossWeights::default());
    let same_solver = rerun_solver.snapshots == solver.snapshots
        && rerun_solver.eigen.to_bits() == solver.eigen.to_bits()
        && rerun_solver.wave.to_bits() == solver.wave.to_bits();
    let same_run = rerun.log == base.log && rerun.checkpoint == base.checkpoint;
    ok &= report(
        "8",
        "reproducibility",
        &outcome(
            same_solver && same_run,
            format!(
                "solver outputs identical: {same_solver}; training log ({} bytes) and checkpoint ({} bytes) identical: {same_run}",
                base.log.len(),
                base.checkpoint.len()
            ),
        ),
    );

    let mut with_d = vec![base.mean_velocity_error()];
    let mut without_d = Vec::new();
    for seed in 0..3u64 {
        if seed > 0 {
            with_d.push(tg_run(&solver.snapshots, seed, fixed, LossWeights::default()).mean_velocity_error());
        }
        without_d.push(tg_run(&solver.snapshots, seed, fixed, LossWeights::without_complement()).mean_velocity_error());
    }
    ok &= report("5", "auxiliary-variable ablation", &criterion_5(&with_d, &without_d));

    let inferred = tg_run(&solver.snapshots, 0, FlowParams::trainable(1.0, 1.0).unwrap(), LossWeights::default());
    ok &= report("6", "flow-parameter inference", &criterion_6(&inferred));

    if !ok {
        std::process::exit(1);
    }
}
