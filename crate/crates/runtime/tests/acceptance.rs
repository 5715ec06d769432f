//! One pass/fail line per acceptance criterion. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 9 10`.

use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use formation_core::dynamics::{
    cw_stm, step_rk4, BodyParams, InputVector, OrbitParams, RigidBodyModel, RigidBodyState, Wrench,
};
use formation_core::math::{quat_from_axis_angle, quat_identity, quat_norm, Mat3, Vec3};
use formation_core::msgs::convert::cmd_force;
use formation_core::msgs::{
    decode, encode, parse_schema_file, render_schema_file, FieldType, MessageSchema, MessageValue, SchemaRegistry,
    Shape, Value,
};
use formation_core::nmpc::{solve_ocp, AgentRole, InputBounds, Obstacle, OcpProblem, OcpWeights};
use formation_core::sim::{allocate, min_separation, run_lockstep, AgentSpec, ScenarioConfig, ThrusterLayout, WaypointPlan};
use formation_runtime::bridge::{
    BridgeClient, BridgeConfig, BridgeServer, Direction, EndpointRole, LinkState, TopicRegistration,
};
use formation_runtime::config::{RunConfig, CROSSING, FORMATION3};
use formation_runtime::runlog::RunLog;
use formation_runtime::scenario::{run_in_process, RunOptions};
use formation_runtime::stress::{header_line, run_stress, StressConfig, StressReport};
use nalgebra::{DMatrix, DVector, Vector6};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rand_vec3(rng: &mut StdRng, r: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.gen_range(-r..r))
}

fn rand_axis(rng: &mut StdRng) -> Vec3 {
    loop {
        let a = rand_vec3(rng, 1.0);
        if a.norm() > 1e-3 {
            return a;
        }
    }
}

fn leo_model(n: Option<f64>, inertia: Mat3) -> RigidBodyModel {
    let orbit = OrbitParams::earth(6_778_000.0).unwrap();
    let orbit = OrbitParams {
        n: n.unwrap_or(orbit.n),
        ..orbit
    };
    RigidBodyModel::new(orbit, BodyParams::new(17.8, inertia).unwrap())
}

fn cw_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1e-5..=0.002);
        let dt = rng.gen_range(0.01..=1.0);
        let s = RigidBodyState {
            p_h: rand_vec3(&mut rng, 100.0),
            v_h: rand_vec3(&mut rng, 0.5),
            ..Default::default()
        };
        let next = step_rk4(&s, &Wrench::zero(), &leo_model(Some(n), Mat3::identity() * 0.315), dt).unwrap();
        let x0 = Vector6::new(s.p_h.x, s.p_h.y, s.p_h.z, s.v_h.x, s.v_h.y, s.v_h.z);
        let want = cw_stm(n, dt) * x0;
        let got = Vector6::new(next.p_h.x, next.p_h.y, next.p_h.z, next.v_h.x, next.v_h.y, next.v_h.z);
        worst = worst.max((got - want).norm() / want.norm());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(5),
        format!("max relative error {worst:.2e} (limit 1e-6) over 1000 states in {elapsed:.2?} (limit 5 s)"),
    )
}

fn attitude_integrity() -> Outcome {
    let inertia = Mat3::new(0.30, 0.01, 0.0, 0.01, 0.40, -0.02, 0.0, -0.02, 0.50);
    let model = leo_model(None, inertia);
    let energy = |s: &RigidBodyState| 0.5 * s.omega_b.dot(&(inertia * s.omega_b));
    let mut rng = StdRng::seed_from_u64(2);
    let (mut drift, mut norm_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let mut s = RigidBodyState {
            q_hb: quat_from_axis_angle(&rand_axis(&mut rng), rng.gen_range(-3.0..3.0)),
            omega_b: rand_vec3(&mut rng, 0.5),
            ..Default::default()
        };
        let e0 = energy(&s);
        for _ in 0..1000 {
            s = step_rk4(&s, &Wrench::zero(), &model, 0.01).unwrap();
            norm_err = norm_err.max((quat_norm(&s.q_hb) - 1.0).abs());
        }
        drift = drift.max((energy(&s) - e0).abs() / e0);
    }
    outcome(
        drift < 1e-6 && norm_err < 1e-9,
        format!("energy drift {drift:.2e} (limit 1e-6) over 10 s at 0.01 s; worst |q|-1 per step {norm_err:.2e} (limit 1e-9)"),
    )
}

fn solver_soundness() -> Outcome {
    let model = leo_model(None, Mat3::identity() * 0.315);
    let bounds = InputBounds::symmetric(3.0, 0.51);
    let mut rng = StdRng::seed_from_u64(3);
    let random_state = |rng: &mut StdRng| RigidBodyState {
        p_h: rand_vec3(rng, 1.0),
        v_h: rand_vec3(rng, 0.1),
        q_hb: quat_from_axis_angle(&rand_axis(rng), rng.gen_range(-3.0..3.0)),
        omega_b: rand_vec3(rng, 0.2),
    };
    let (mut grad_err, mut dyn_err) = (0.0f64, 0.0f64);
    let (mut bound_violations, mut merit_increases) = (0, 0);
    for _ in 0..100 {
        let horizon = rng.gen_range(1..8);
        let x0 = random_state(&mut rng);
        let p = OcpProblem {
            x0,
            refs: (0..=horizon).map(|_| random_state(&mut rng)).collect(),
            weights: OcpWeights::formation_default(),
            horizon,
            dt: 0.2,
            model,
            input_bounds: bounds,
            velocity_max: Some(Vec3::repeat(0.05)),
            obstacles: vec![Obstacle {
                agent_id: "other".into(),
                positions: (0..=horizon).map(|k| x0.p_h + Vec3::new(0.1 * k as f64, 0.2, 0.0)).collect(),
                d_min: 0.5,
            }],
        };
        let u: Vec<Wrench> = (0..horizon)
            .map(|_| {
                Wrench::from_vector(&InputVector::from_fn(|i, _| {
                    let b = if i < 3 { 3.0 } else { 0.51 };
                    rng.gen_range(-b..b)
                }))
            })
            .collect();
        let rho = 1e3;
        let g = p.merit_gradient(&u, rho);
        let eps = 1e-6;
        let fd: Vec<f64> = (0..g.len())
            .map(|i| {
                let (k, j) = (i / 6, i % 6);
                let shifted = |d: f64| {
                    let mut us = u.clone();
                    let mut v = us[k].to_vector();
                    v[j] += d;
                    us[k] = Wrench::from_vector(&v);
                    p.merit(&us, rho)
                };
                (shifted(eps) - shifted(-eps)) / (2.0 * eps)
            })
            .collect();
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        grad_err = grad_err.max(diff / scale);

        let sol = solve_ocp(&p, None).unwrap();
        for k in 0..horizon {
            let next = step_rk4(&sol.x_pred[k], &sol.u_seq[k], &model, p.dt).unwrap();
            dyn_err = dyn_err.max((next.to_vector() - sol.x_pred[k + 1].to_vector()).amax());
            if !bounds.contains(&sol.u_seq[k], 0.0) {
                bound_violations += 1;
            }
        }
        merit_increases += sol.merit_history.iter().filter(|m| m.after > m.before).count();
    }
    outcome(
        grad_err <= 1e-5 && dyn_err <= 1e-8 && bound_violations == 0 && merit_increases == 0,
        format!(
            "gradient rel. error {grad_err:.2e} (limit 1e-5), dynamics defect {dyn_err:.2e} (limit 1e-8), \
             {bound_violations} input-bound violations, {merit_increases} merit increases over 100 OCPs"
        ),
    )
}

fn hold_agent(ns: &str, from: Vec3, at: Vec3) -> AgentSpec {
    AgentSpec {
        ns: ns.into(),
        role: AgentRole::Leader {
            plan: WaypointPlan::hold(at, quat_identity()).unwrap(),
        },
        initial: RigidBodyState::at_position(from),
    }
}

fn regulation() -> Outcome {
    let start = Instant::now();
    let mut cfg = ScenarioConfig::formation_default();
    let p0 = Vec3::new(1.0, 1.0, 0.0);
    cfg.agents = vec![hold_agent("sc", p0, Vec3::zeros())];
    cfg.duration = 60.0;
    let mut errors = Vec::new();
    run_lockstep(&cfg, |r| errors.push((r.t_ns, r.state.p_h.norm())), |_, _| {}).unwrap();
    let elapsed = start.elapsed();
    let last = errors.last().unwrap().1;
    let settled_at = errors
        .iter()
        .rposition(|e| e.1 >= 0.01)
        .and_then(|i| errors.get(i + 1))
        .map(|e| e.0 as f64 * 1e-9);
    outcome(
        last < 0.01 && elapsed < Duration::from_secs(120),
        format!(
            "from {:.3} m: error {last:.4} m at 60 s (limit 0.01), inside 1 cm from t = {} s, runtime {elapsed:.1?} (limit 2 min)",
            p0.norm(),
            settled_at.map_or("-".into(), |t| format!("{t:.1}"))
        ),
    )
}

/// Formation errors before this are the initial transient.
const SETTLE_NS: i64 = 10_000_000_000;

fn formation_tracking() -> Outcome {
    let mut cfg = RunConfig::from_toml(FORMATION3).unwrap().scenario;
    cfg.speed = 100.0;
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("run.ndjson");
    let opts = RunOptions {
        log_path: Some(log_path.clone()),
        ..Default::default()
    };
    let summary = match run_in_process(&cfg, &BridgeConfig::ephemeral(), &opts) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let log = RunLog::read(&log_path).unwrap();
    let errors = log.formation_errors();
    let settled = errors.iter().filter(|e| e.1 >= SETTLE_NS).map(|e| e.2).fold(0.0, f64::max);
    let overall = errors.iter().map(|e| e.2).fold(0.0, f64::max);
    let wall = Duration::from_secs_f64(summary.wall_time_s);
    outcome(
        settled <= 0.25 && wall < Duration::from_secs(600),
        format!(
            "bridged 3-agent run, {} s at {}x: max follower error after 10 s {settled:.3} m (limit 0.25), \
             including transient {overall:.3} m, min separation {:.3} m, wall {wall:.1?} (limit 10 min)",
            cfg.duration, cfg.speed, summary.min_separation_m
        ),
    )
}

fn collision_safety() -> Outcome {
    let cfg = RunConfig::from_toml(CROSSING).unwrap().scenario;
    let mut min_sep = f64::INFINITY;
    run_lockstep(&cfg, |_| {}, |_, s| min_sep = min_sep.min(min_separation(s))).unwrap();
    outcome(
        min_sep >= 0.35,
        format!("head-on crossing with d_min {}: realized min distance {min_sep:.3} m (limit 0.35)", cfg.d_min),
    )
}

fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + timeout;
    while Instant::now() < end {
        if f() {
            return true;
        }
        thread::sleep(Duration::from_millis(2));
    }
    f()
}

fn bridge_correctness() -> Outcome {
    const N: i64 = 100_000;
    let registry = SchemaRegistry::builtin();
    let server = BridgeServer::start(BridgeConfig::ephemeral(), registry.clone()).unwrap();
    let sim = BridgeClient::connect(server.config(), "sim", EndpointRole::Simulator, registry.clone()).unwrap();
    let ctl = BridgeClient::connect(server.config(), "ctl", EndpointRole::Controller, registry.clone()).unwrap();
    let mut logs = Vec::new();
    let mut handles = Vec::new();
    for t in ["seq_a", "seq_b"] {
        let reg = TopicRegistration::new("acc", Direction::Out, t, "CmdForce");
        let log: Arc<Mutex<Vec<i64>>> = Arc::default();
        let sink = log.clone();
        ctl.subscribe(reg.clone(), move |d| sink.lock().unwrap().push(d.stamp_ns)).unwrap();
        handles.push(sim.register_publisher(reg).unwrap());
        logs.push(log);
    }
    for k in 0..N {
        for h in &handles {
            sim.publish(h, &cmd_force(&Vec3::new(k as f64, 0.0, 0.0), k), k).unwrap();
        }
    }
    let mut ledger_ok = true;
    let mut drops = 0;
    for h in &handles {
        let path = h.path().to_string();
        let balanced = || {
            let hub = server.stats().get(&path).cloned().unwrap_or_default();
            let sub = ctl.topic_stats(&path);
            sim.topic_stats(&path).sent == sub.received + sub.dropped() + hub.dropped()
        };
        ledger_ok &= wait_until(Duration::from_secs(60), balanced) && sim.topic_stats(&path).sent == N as u64;
        drops += ctl.topic_stats(&path).dropped() + server.stats()[&path].dropped();
    }
    let ordered = logs
        .iter()
        .all(|l| l.lock().unwrap().windows(2).all(|w| w[0] < w[1]));

    // Liveness: the hub must mark a vanished peer Lost within timeout + one period.
    let cfg = BridgeConfig {
        heartbeat_period: Duration::from_millis(50),
        liveness_timeout: Duration::from_millis(250),
        ..BridgeConfig::ephemeral()
    };
    let limit = cfg.liveness_timeout + cfg.heartbeat_period;
    let hb_server = BridgeServer::start(cfg, registry.clone()).unwrap();
    let peer = BridgeClient::connect(hb_server.config(), "peer", EndpointRole::Controller, registry.clone()).unwrap();
    let connected = wait_until(Duration::from_secs(2), || {
        hb_server.peer_state("peer").is_some_and(|s| s.state == LinkState::Connected)
    });
    let killed = Instant::now();
    drop(peer);
    let lost = wait_until(limit + Duration::from_secs(1), || {
        hb_server.peer_state("peer").unwrap().state == LinkState::Lost
    });
    let detect = killed.elapsed();

    // /clock: every delivery non-decreasing, and a backwards publish is refused.
    let seen: Arc<Mutex<Vec<i64>>> = Arc::default();
    let sink = seen.clone();
    ctl.subscribe(TopicRegistration::clock(), move |d| sink.lock().unwrap().push(d.stamp_ns)).unwrap();
    for k in 0..1000 {
        sim.publish_clock(k * 20_000_000).unwrap();
    }
    let refused = sim.publish_clock(0).is_err();
    let all_clock = wait_until(Duration::from_secs(10), || seen.lock().unwrap().len() == 1000);
    let monotone = seen.lock().unwrap().windows(2).all(|w| w[0] <= w[1]);

    outcome(
        ledger_ok && ordered && connected && lost && detect <= limit && all_clock && monotone && refused,
        format!(
            "2 x 1e5 messages: ledger exact {ledger_ok} ({drops} drops), ordered without duplicates {ordered}; \
             Lost after {detect:.0?} (limit {limit:?}); /clock monotone {monotone}, backwards refused {refused}"
        ),
    )
}

fn stress_row(speed: f64, spacecraft: usize, target: f64, secs: u64) -> StressReport {
    let r = run_stress(&StressConfig::new(speed, spacecraft, target, Duration::from_secs(secs))).unwrap();
    println!("      {r}");
    r
}

fn throughput() -> Outcome {
    println!("      {}", header_line());
    let row1 = stress_row(1.0, 1, 100.0, 60);
    let row2 = stress_row(1.0, 1, 10_000.0, 10);
    let row3 = stress_row(100.0, 1, 10_000.0, 10);
    let row4 = stress_row(1.0, 100, 100.0, 10);
    let row5 = stress_row(100.0, 100, 100.0, 10);
    let row6 = stress_row(100.0, 100, 1000.0, 10);
    let sweep = [
        stress_row(1.0, 1, 1000.0, 10),
        stress_row(1.0, 1, 3000.0, 10),
        stress_row(1.0, 1, 100_000.0, 10),
    ];

    let rate_ok = |r: &StressReport, tol: f64| {
        r.agents
            .iter()
            .all(|a| (a.achieved_hz - r.target_hz).abs() <= tol * r.target_hz)
    };
    let row1_ok = rate_ok(&row1, 0.01) && row1.std_ms <= 2.0;
    let row4_ok = rate_ok(&row4, 0.02) && rate_ok(&row5, 0.02);
    let saturated = |r: &StressReport| r.achieved_hz < r.target_hz && r.cpu_bound;
    let saturation_ok = [&row2, &row3, &row6].iter().all(|r| saturated(r));

    let mut single: Vec<&StressReport> = vec![&row1, &row2];
    single.extend(&sweep);
    single.sort_by(|a, b| a.target_hz.total_cmp(&b.target_hz));
    let monotone = |rows: &[&StressReport]| rows.windows(2).all(|w| w[1].achieved_hz >= 0.9 * w[0].achieved_hz);
    let monotone_ok = monotone(&single) && monotone(&[&row5, &row6]);
    let rows = [&row1, &row2, &row3, &row4, &row5, &row6, &sweep[0], &sweep[1], &sweep[2]];
    let ledger_ok = rows.iter().all(|r| r.ledger_balanced());
    let cap_ok = rows.iter().all(|r| r.achieved_hz <= 1.02 * r.target_hz);

    let unsaturated: Vec<String> = [&row2, &row3, &row6]
        .iter()
        .filter(|r| !saturated(r))
        .map(|r| format!("{}x, {} s/c at {} Hz reached {:.0} Hz", r.speed, r.spacecraft, r.target_hz, r.achieved_hz))
        .collect();
    outcome(
        row1_ok && row4_ok && saturation_ok && monotone_ok && ledger_ok && cap_ok,
        format!(
            "1 s/c @100 Hz: {:.2} Hz, std {:.2} ms [{}]; 100 s/c @100 Hz: min {:.2} / max {:.2} Hz [{}]; \
             saturation rows CPU-bound [{}]{}; monotone up to 1 s/c @100 kHz = {:.0} Hz [{}]; ledgers exact [{}]",
            row1.achieved_hz,
            row1.std_ms,
            ok(row1_ok),
            row4.min_achieved_hz().min(row5.min_achieved_hz()),
            row4.agents.iter().chain(&row5.agents).map(|a| a.achieved_hz).fold(0.0, f64::max),
            ok(row4_ok),
            ok(saturation_ok),
            if unsaturated.is_empty() {
                String::new()
            } else {
                format!(" (not saturated on this machine: {})", unsaturated.join("; "))
            },
            sweep[2].achieved_hz,
            ok(monotone_ok),
            ok(ledger_ok && cap_ok),
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// Accelerated projected gradient on `½‖Bt − w‖²` over the box.
fn projected_gradient_nnls(b: &DMatrix<f64>, w: &DVector<f64>, hi: &[f64]) -> DVector<f64> {
    let step = 1.0 / b.tr_mul(b).symmetric_eigenvalues().amax();
    let hi = DVector::from_column_slice(hi);
    let mut t = DVector::zeros(b.ncols());
    let mut y = t.clone();
    let mut k = 1.0f64;
    for _ in 0..100_000 {
        let g = b.tr_mul(&(b * &y - w));
        let next = (&y - g * step).zip_map(&hi, |v, h| v.clamp(0.0, h));
        let k_next = (1.0 + (1.0 + 4.0 * k * k).sqrt()) / 2.0;
        y = &next + (&next - &t) * ((k - 1.0) / k_next);
        t = next;
        k = k_next;
    }
    t
}

fn allocation() -> Outcome {
    let layout = ThrusterLayout::symmetric12();
    let hi = layout.max_thrusts();
    let in_box = |t: &[f64]| t.iter().zip(&hi).all(|(t, h)| *t >= 0.0 && *t <= *h);
    let mut rng = StdRng::seed_from_u64(9);
    let (mut worst, mut box_violations) = (0.0f64, 0);
    for _ in 0..10_000 {
        let t: Vec<f64> = hi.iter().map(|h| rng.gen_range(0.0..=*h)).collect();
        let a = allocate(&layout.wrench(&t), &layout);
        worst = worst.max(a.residual);
        box_violations += usize::from(!in_box(&a.thrust));
    }
    let b = layout.wrench_matrix();
    let mut oracle_gap = 0.0f64;
    for _ in 0..50 {
        let cmd = Wrench::new(rand_vec3(&mut rng, 10.0), rand_vec3(&mut rng, 2.0));
        let a = allocate(&cmd, &layout);
        box_violations += usize::from(!in_box(&a.thrust));
        let w = DVector::from_column_slice(cmd.to_vector().as_slice());
        let oracle = projected_gradient_nnls(b, &w, &hi);
        oracle_gap = oracle_gap.max((a.residual - (b * oracle - &w).norm()).abs());
    }
    outcome(
        worst <= 1e-9 && box_violations == 0 && oracle_gap <= 1e-6,
        format!(
            "1e4 achievable wrenches: max residual {worst:.2e} (limit 1e-9); 50 saturated: residual gap to \
             projected-gradient oracle {oracle_gap:.2e} (limit 1e-6); {box_violations} bound violations"
        ),
    )
}

fn random_scalar(ty: &FieldType, registry: &SchemaRegistry, rng: &mut StdRng) -> Value {
    match ty {
        FieldType::F64 => Value::F64(loop {
            let x = if rng.gen_bool(0.5) {
                f64::from_bits(rng.gen())
            } else {
                rng.gen_range(-1e3..1e3)
            };
            if x.is_finite() {
                break x;
            }
        }),
        FieldType::F32 => Value::F32(rng.gen_range(-1e3f32..1e3)),
        FieldType::I64 => Value::I64(rng.gen()),
        FieldType::I32 => Value::I32(rng.gen()),
        FieldType::Bool => Value::Bool(rng.gen()),
        FieldType::String => Value::Str((0..rng.gen_range(0..10)).map(|_| rng.gen::<char>()).collect()),
        FieldType::Message(m) => Value::Msg(random_value(registry.get(m).unwrap(), registry, rng)),
    }
}

fn random_value(schema: &MessageSchema, registry: &SchemaRegistry, rng: &mut StdRng) -> MessageValue {
    let mut v = MessageValue::new(schema.name.clone());
    for f in &schema.fields {
        if !f.required && rng.gen_bool(0.3) {
            continue;
        }
        let value = match f.shape {
            Shape::Scalar => random_scalar(&f.ty, registry, rng),
            Shape::Fixed(n) => Value::Array((0..n).map(|_| random_scalar(&f.ty, registry, rng)).collect()),
            Shape::Dynamic => Value::Array((0..rng.gen_range(0..5)).map(|_| random_scalar(&f.ty, registry, rng)).collect()),
        };
        v.set(f.name.clone(), value);
    }
    v
}

fn codec() -> Outcome {
    let registry = SchemaRegistry::builtin();
    let schemas: Vec<&MessageSchema> = registry.iter().collect();
    let mut rng = StdRng::seed_from_u64(10);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let schema = schemas[rng.gen_range(0..schemas.len())];
        let v = random_value(schema, &registry, &mut rng);
        let back = encode(&v, &registry).and_then(|b| decode(&b, schema, &registry));
        mismatches += usize::from(back.as_ref() != Ok(&v));
    }
    let owned: Vec<MessageSchema> = registry.iter().cloned().collect();
    let text = render_schema_file(&owned);
    let reparsed = parse_schema_file(&text).unwrap();
    let stable = reparsed == owned && render_schema_file(&reparsed) == text;
    outcome(
        mismatches == 0 && stable,
        format!(
            "{mismatches} decode(encode(v)) mismatches over 1e4 values of {} schemas; parse/render fixed point {stable}",
            schemas.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "CW oracle equivalence", cw_oracle),
        (2, "Attitude integrity", attitude_integrity),
        (3, "Solver soundness", solver_soundness),
        (4, "Regulation", regulation),
        (5, "Formation tracking", formation_tracking),
        (6, "Collision safety", collision_safety),
        (7, "Bridge correctness", bridge_correctness),
        (8, "Throughput", throughput),
        (9, "Allocation", allocation),
        (10, "Codec", codec),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<u32> = filters.iter().filter_map(|a| a.parse().ok()).collect();
    // A test-name filter aimed at other targets skips the whole run.
    if selected.is_empty() && !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        println!(
            "[{}] {id:>2}. {name}: {} ({:.1?})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed()
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {failed:?}");
        ExitCode::FAILURE
    }
}
