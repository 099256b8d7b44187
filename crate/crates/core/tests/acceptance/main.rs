//! Acceptance suite. Every criterion prints one PASS/FAIL line. Set
//! `ACCEPTANCE_STRICT=1` to make any failure fail the process.

#[path = "../common/mod.rs"]
mod common;

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tunnelscout::fsm::{fsm_step, Events, ExplorerContext, ExplorerState, PlannerAction};
use tunnelscout::model::{thrust_margin_check, DroneSpec, Pose};
use tunnelscout::rrt::{plan_and_shortcut, plan_rrt, shortcut_pairs, shortcut_segment_points, RrtConfig};
use tunnelscout::sim::{run_scenario, trajectory_csv, RunOutput, Scenario, Termination, WindLevel};
use tunnelscout::voxel_map::{DepthRay, DepthScan, MapParams, OccupancyState, VoxelMap};
use tunnelscout::wind::{
    calibrate, run_hover_test, run_straight_test, WindCalibration, WindTestConfig, WindTestMode, CALIBRATION_SEEDS,
    HOVER_TABLE,
};
use tunnelscout::Vec3;

use common::{bfs_reachable, random_world, rectangle_grid, sampled_clearance, segment_oracle, OracleVerdict};

const EXPLORATION_SEEDS: std::ops::Range<u64> = 0..10;
const WIND_SEEDS: [u64; 5] = [100, 101, 102, 103, 104];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct ExplorationRuns {
    runs: Vec<(u64, RunOutput, f64)>,
}

fn exploration_runs() -> ExplorationRuns {
    let runs = EXPLORATION_SEEDS
        .map(|seed| {
            let clock = Instant::now();
            let out = run_scenario(&Scenario::reference_tunnel(seed)).expect("reference scenario is valid");
            (seed, out, clock.elapsed().as_secs_f64())
        })
        .collect();
    ExplorationRuns { runs }
}

/// Camera frustum test written out independently of the library.
fn in_view(cam_pos: Vec3, yaw: f64, p: Vec3, h_fov: f64, v_fov: f64, range: f64) -> bool {
    let d = p - cam_pos;
    let lx = d.x * yaw.cos() + d.y * yaw.sin();
    let ly = -d.x * yaw.sin() + d.y * yaw.cos();
    if lx <= 0.0 || d.norm() > range {
        return false;
    }
    let az = ly.atan2(lx).abs();
    let el = d.z.atan2(lx.hypot(ly)).abs();
    az <= h_fov.to_radians() / 2.0 + 1e-12 && el <= v_fov.to_radians() / 2.0 + 1e-12
}

fn criterion_1(ex: &ExplorationRuns) -> Outcome {
    let sc = Scenario::reference_tunnel(0);
    let t = &sc.tunnel;
    let m = sc.zigzag.margin;
    let grid = rectangle_grid(
        Vec3::new(t.length, 0.0, t.height / 2.0),
        Vec3::Y,
        Vec3::Z,
        t.width - 2.0 * m,
        t.height - 2.0 * m,
        0.05,
    );
    let mut failures = Vec::new();
    let mut worst = (0.0f64, 1.0f64, 0.0f64, 0.0f64);
    for (seed, run, wall) in &ex.runs {
        let r = &run.report;
        let mut seen = vec![false; grid.len()];
        for row in run.trajectory.iter().filter(|row| row.state == ExplorerState::Inspection) {
            for (k, p) in grid.iter().enumerate() {
                seen[k] = seen[k]
                    || in_view(row.position, row.yaw, *p, sc.camera.h_fov, sc.camera.v_fov, sc.camera.max_range);
            }
        }
        let coverage = seen.iter().filter(|s| **s).count() as f64 / grid.len() as f64;
        let final_state = run.trajectory.last().map(|row| row.state);
        let ok = r.termination == Termination::Stopped
            && final_state == Some(ExplorerState::Stop)
            && r.min_dead_end_distance <= 1.0
            && coverage >= 0.90
            && r.returned_to_start_error < 0.5
            && r.collision_count == 0
            && *wall < 60.0;
        worst = (
            worst.0.max(r.min_dead_end_distance),
            worst.1.min(coverage),
            worst.2.max(r.returned_to_start_error),
            worst.3.max(*wall),
        );
        if !ok {
            failures.push(format!(
                "seed {seed}: {:?}/{:?} end {:.2} cov {:.3} ret {:.3} coll {} wall {:.1}s",
                r.termination, final_state, r.min_dead_end_distance, coverage, r.returned_to_start_error,
                r.collision_count, wall
            ));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "10 seeds; worst end distance {:.2} m, min coverage {:.1}%, worst return {:.3} m, slowest {:.1} s{}",
            worst.0,
            100.0 * worst.1,
            worst.2,
            worst.3,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn criterion_2(ex: &ExplorationRuns) -> Outcome {
    let mut all: Vec<f64> = ex.runs.iter().flat_map(|(_, r, _)| r.tick_ms.iter().copied()).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    all.sort_by(|a, b| a.total_cmp(b));
    let p99 = all[((all.len() as f64 * 0.99).ceil() as usize).saturating_sub(1)];
    let worst_run_mean = ex.runs.iter().map(|(_, r, _)| r.report.tick_ms_mean).fold(0.0, f64::max);
    let worst_run_p99 = ex.runs.iter().map(|(_, r, _)| r.report.tick_ms_p99).fold(0.0, f64::max);
    outcome(
        mean <= 33.0 && p99 <= 100.0 && worst_run_mean <= 33.0 && worst_run_p99 <= 100.0,
        format!(
            "{} ticks: mean {mean:.2} ms, p99 {p99:.2} ms, max {:.2} ms (worst run mean {worst_run_mean:.2}, p99 {worst_run_p99:.2})",
            all.len(),
            all.last().unwrap()
        ),
    )
}

fn criterion_3() -> Outcome {
    let spacing = MapParams::default().resolution / 20.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worlds, mut solved, mut oracle_fail, mut longer, mut bad_attempts) = (0, 0, 0, 0, 0);
    let mut tries = 0;
    while worlds < 100 {
        tries += 1;
        assert!(tries < 2000, "could not generate solvable worlds");
        let map = random_world(&mut rng, [40, 40, 15], 8, 0.002);
        let cfg = RrtConfig { rng_seed: rng.gen(), ..RrtConfig::default() };
        let pick = |rng: &mut ChaCha8Rng| Vec3::new(rng.gen_range(0.3..3.7), rng.gen_range(0.3..3.7), rng.gen_range(0.3..1.2));
        let (start, goal) = (pick(&mut rng), pick(&mut rng));
        // a cell-centre route with diagonal clearance is a certificate that a
        // path with the planner's inflation exists
        let clearance = cfg.inflate + map.resolution() * 3f64.sqrt() / 2.0;
        if !bfs_reachable(&map, start, goal, clearance) {
            continue;
        }
        let start = map.voxel_center(map.index_of(start).unwrap());
        let goal = map.voxel_center(map.index_of(goal).unwrap());
        worlds += 1;
        let Ok(raw) = plan_rrt(&map, start, goal, &cfg) else { continue };
        solved += 1;
        let pass1 = shortcut_pairs(&raw, &map, &cfg);
        let pass2 = shortcut_segment_points(&pass1.path, &map, &cfg);
        if pass1.attempts != 1000 {
            bad_attempts += 1;
        }
        if pass1.path.length() > raw.length() + 1e-9 || pass2.path.length() > pass1.path.length() + 1e-9 {
            longer += 1;
        }
        for p in [&raw, &pass1.path, &pass2.path] {
            let clear = p
                .segments()
                .all(|(a, b)| sampled_clearance(&map, a, b, cfg.inflate + spacing, spacing) >= cfg.inflate);
            if !clear {
                oracle_fail += 1;
            }
        }
    }
    outcome(
        solved >= 95 && oracle_fail == 0 && longer == 0 && bad_attempts == 0,
        format!(
            "{solved}/{worlds} BFS-solvable worlds solved; {oracle_fail} paths rejected by the res/20 oracle; \
             {longer} shortcut outputs longer than input; Method 1 attempts != 1000 in {bad_attempts} runs"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut map = VoxelMap::new(Vec3::ZERO, [100, 100, 30], MapParams::default()).unwrap();
    map.fill(OccupancyState::Free);
    let (start, goal) = (Vec3::new(1.0, 1.0, 1.0), Vec3::new(9.0, 8.0, 2.0));
    let straight = start.distance(goal);
    let mut worst: f64 = 0.0;
    let mut ok = 0;
    for seed in 0..20 {
        let cfg = RrtConfig { rng_seed: seed, ..RrtConfig::default() };
        let p = plan_and_shortcut(&map, start, goal, &cfg).expect("free map");
        let excess = p.length() / straight - 1.0;
        worst = worst.max(excess);
        ok += usize::from(excess <= 0.01);
    }
    outcome(ok == 20, format!("{ok}/20 seeds within 1%; worst excess {:.4}%", 100.0 * worst))
}

fn wind_calibration() -> Result<WindCalibration, String> {
    let base = WindTestConfig::new(WindTestMode::Hover, WindLevel::None, 0);
    calibrate(&base, &CALIBRATION_SEEDS).map_err(|e| e.to_string())
}

fn hover(cal: &WindCalibration, level: WindLevel, seed: u64) -> (f64, f64) {
    let cfg = WindTestConfig::new(WindTestMode::Hover, level, seed).with_noise(cal.noise_force);
    let r = run_hover_test(&cfg, cal.gain).unwrap();
    (r.max_drift_x, r.max_drift_y)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn criterion_5(cal: &Result<WindCalibration, String>) -> Outcome {
    let cal = match cal {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("calibration failed: {e}")),
    };
    let calib_mean = |level| mean(CALIBRATION_SEEDS.iter().map(|s| hover(cal, level, *s).0));
    let none_fit = calib_mean(WindLevel::None);
    let high_fit = calib_mean(WindLevel::High);
    let noise_ok = (none_fit / 0.189 - 1.0).abs() <= 0.10;
    let gain_ok = (high_fit / 0.535 - 1.0).abs() <= 0.02;

    let table: Vec<Vec<(f64, f64)>> =
        WIND_SEEDS.iter().map(|s| WindLevel::ALL.iter().map(|l| hover(cal, *l, *s)).collect()).collect();
    let monotone = table.iter().filter(|row| row.windows(2).all(|w| w[0].0 < w[1].0)).count();
    let cell = |k: usize| mean(table.iter().map(|row| row[k].0));
    let (low, mid) = (cell(1), cell(2));
    let low_ok = (low / HOVER_TABLE[1].1 - 1.0).abs() <= 0.25;
    let mid_ok = (mid / HOVER_TABLE[2].1 - 1.0).abs() <= 0.25;
    let y_cells: Vec<f64> = (0..4).map(|k| mean(table.iter().map(|row| row[k].1))).collect();
    let y_ok = y_cells.iter().all(|y| (y / 0.288 - 1.0).abs() <= 0.40);
    let y_seed_worst = table
        .iter()
        .flat_map(|row| row.iter().map(|c| (c.1 / 0.288 - 1.0).abs()))
        .fold(0.0, f64::max);
    outcome(
        noise_ok && gain_ok && monotone == WIND_SEEDS.len() && low_ok && mid_ok && y_ok,
        format!(
            "sigma=({:.3},{:.3}) N gain={:.4}; fit None {:.3} m, High {:.3} m; monotone {monotone}/5; \
             Low {low:.3} m, Middle {mid:.3} m; y cells {:.3}/{:.3}/{:.3}/{:.3} m (worst single seed {:.0}% off)",
            cal.noise_force.x,
            cal.noise_force.y,
            cal.gain,
            none_fit,
            high_fit,
            y_cells[0],
            y_cells[1],
            y_cells[2],
            y_cells[3],
            100.0 * y_seed_worst
        ),
    )
}

fn criterion_6(cal: &Result<WindCalibration, String>) -> Outcome {
    let cal = match cal {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("calibration failed: {e}")),
    };
    let mut ok = 0;
    let mut notes = Vec::new();
    for seed in WIND_SEEDS {
        let cfg = WindTestConfig::new(WindTestMode::GoStraight, WindLevel::High, seed).with_noise(cal.noise_force);
        let (a, b) = cfg.wind_band();
        let r = run_straight_test(&cfg, cal.gain).unwrap();
        let peak = r.peak_x.unwrap_or(f64::NAN);
        let end = r.end_error.unwrap_or(f64::INFINITY);
        let pass = peak >= a && peak <= b && end < 0.1;
        ok += usize::from(pass);
        notes.push(format!("peak x {peak:.2} end {end:.3}"));
    }
    outcome(ok == WIND_SEEDS.len(), format!("{ok}/5 seeds; band [1.67, 3.33] m; {}", notes.join(", ")))
}

/// Transition table transcribed from the mission description, keyed on the
/// state, the action last issued and the events.
fn expected_transition(
    s: ExplorerState,
    last: Option<PlannerAction>,
    look_arounds_left: bool,
    ev: Events,
) -> Option<(ExplorerState, PlannerAction)> {
    use ExplorerState::*;
    use PlannerAction::*;
    if s == Stop {
        return Some((Stop, HoverThenLand));
    }
    if (ev.path_done && ev.collision_predicted) || (ev.scan_done && s != Inspection) {
        return None;
    }
    let fwd = if ev.path_found { (Forward, AddNewForwardPath) } else { (AfterInfoGatherForward, LookAround) };
    let back = if ev.path_found { (Backward, AddNewBackwardPath) } else { (AfterInfoGatherBackward, LookAround) };
    Some(match s {
        Init => match last {
            None => (Init, TakeOff),
            Some(TakeOff) => (Init, LookAround),
            Some(LookAround) => fwd,
            _ => return None,
        },
        Forward => fwd,
        AfterInfoGatherForward if ev.path_found => (Forward, AddNewForwardPath),
        AfterInfoGatherForward if look_arounds_left => (AfterInfoGatherForward, LookAround),
        AfterInfoGatherForward => (PreInspection, RrtToGoal),
        PreInspection if ev.collision_predicted => (PreInspection, RrtToGoal),
        PreInspection => (Inspection, ZigzagScan),
        Inspection if ev.scan_done => back,
        Inspection => (Inspection, ZigzagScan),
        Backward | AfterInfoGatherBackward if ev.at_start => (Stop, HoverThenLand),
        Backward => back,
        AfterInfoGatherBackward => match last {
            Some(LookAround) if ev.path_found => (Backward, AddNewBackwardPath),
            Some(LookAround) => (AfterInfoGatherBackward, RrtToGoal),
            Some(RrtToGoal) if ev.collision_predicted => (AfterInfoGatherBackward, RrtToGoal),
            Some(RrtToGoal) => (Stop, HoverThenLand),
            _ => return None,
        },
        Stop => unreachable!(),
    })
}

fn criterion_7(ex: &ExplorationRuns) -> Outcome {
    let mut cases = 0;
    let mut mismatches = Vec::new();
    let actions = std::iter::once(None).chain(PlannerAction::ALL.iter().copied().map(Some));
    let actions: Vec<_> = actions.collect();
    for s in ExplorerState::ALL {
        for &last in &actions {
            for look_arounds in 0..=1u32 {
                for bits in 0u8..32 {
                    let ev = Events {
                        path_done: bits & 1 != 0,
                        path_found: bits & 2 != 0,
                        collision_predicted: bits & 4 != 0,
                        scan_done: bits & 8 != 0,
                        at_start: bits & 16 != 0,
                    };
                    let mut ctx = ExplorerContext::new(Pose::new(Vec3::ZERO, 0.0), Vec3::X);
                    ctx.last_action = last;
                    ctx.look_arounds = look_arounds;
                    ctx.max_look_arounds = 1;
                    let got = fsm_step(s, &ctx, ev).ok();
                    let want = expected_transition(s, last, look_arounds < 1, ev);
                    cases += 1;
                    if got != want {
                        mismatches.push(format!("{s}/{last:?}/{look_arounds}/{bits:05b}: {got:?} vs {want:?}"));
                    }
                }
            }
        }
    }
    // Stop absorbs every event, including combinations illegal elsewhere
    let absorbing = (0u8..32).all(|bits| {
        let ev = Events {
            path_done: bits & 1 != 0,
            path_found: bits & 2 != 0,
            collision_predicted: bits & 4 != 0,
            scan_done: bits & 8 != 0,
            at_start: bits & 16 != 0,
        };
        let ctx = ExplorerContext::new(Pose::new(Vec3::ZERO, 0.0), Vec3::X);
        fsm_step(ExplorerState::Stop, &ctx, ev) == Ok((ExplorerState::Stop, PlannerAction::HoverThenLand))
    });

    // net yaw over every simulated look-around
    let mut worst_yaw: f64 = 0.0;
    let mut count = 0;
    for (_, run, _) in &ex.runs {
        let rows = &run.trajectory;
        let mut k = 0;
        while k < rows.len() {
            if rows[k].action != Some(PlannerAction::LookAround) {
                k += 1;
                continue;
            }
            let begin = k;
            while k < rows.len() && rows[k].action == Some(PlannerAction::LookAround) && rows[k].state == rows[begin].state {
                k += 1;
            }
            if k == rows.len() {
                break;
            }
            let mut net = 0.0;
            for w in rows[begin..=k].windows(2) {
                let mut d = w[1].yaw - w[0].yaw;
                while d > PI {
                    d -= 2.0 * PI;
                }
                while d <= -PI {
                    d += 2.0 * PI;
                }
                net += d;
            }
            worst_yaw = worst_yaw.max(net.abs());
            count += 1;
        }
    }
    let pass = mismatches.is_empty() && absorbing && worst_yaw <= 0.05 && count > 0;
    outcome(
        pass,
        format!(
            "{cases} (state, last action, retries, events) cases, {} mismatches; Stop absorbing: {absorbing}; \
             {count} simulated look-arounds, worst net yaw {worst_yaw:.4} rad{}",
            mismatches.len(),
            mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

fn criterion_8() -> Outcome {
    let spacing = MapParams::default().resolution / 20.0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut agree, mut borderline, mut disagree, mut blocked) = (0, 0, 0, 0);
    let mut checks = 0;
    while checks < 1000 {
        let map = random_world(&mut rng, [30, 30, 15], 6, 0.01);
        for _ in 0..50 {
            let a = Vec3::new(rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..1.5));
            let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5));
            let b = a + dir * rng.gen_range(0.0..1.5);
            let inflate = rng.gen_range(0.0..0.3);
            let free = map.segment_collision_free(a, b, inflate);
            blocked += usize::from(!free);
            match segment_oracle(&map, a, b, inflate, spacing) {
                OracleVerdict::Collides if !free => agree += 1,
                OracleVerdict::Free if free => agree += 1,
                // exact result is collision; sampling can only bound it here
                OracleVerdict::Borderline => borderline += 1,
                _ => disagree += 1,
            }
            checks += 1;
        }
    }

    // clamping under a million random ray updates
    let params = MapParams::default();
    let mut map = VoxelMap::new(Vec3::ZERO, [20, 20, 20], params).unwrap();
    let mut rays_done = 0usize;
    let mut clamp_ok = true;
    while rays_done < 1_000_000 {
        let origin = Vec3::new(rng.gen_range(0.1..1.9), rng.gen_range(0.1..1.9), rng.gen_range(0.1..1.9));
        let rays: Vec<DepthRay> = (0..1000)
            .map(|_| {
                let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                DepthRay {
                    direction: d.normalized().unwrap_or(Vec3::X),
                    hit_distance: rng.gen_bool(0.7).then(|| rng.gen_range(0.05..1.5)),
                }
            })
            .collect();
        let scan = DepthScan { sensor_pose: Pose::new(origin, 0.0), max_range: 1.5, rays };
        map.insert_scan(&scan).unwrap();
        rays_done += 1000;
    }
    for ix in 0..20 {
        for iy in 0..20 {
            for iz in 0..20 {
                if let Some(l) = map.log_odds_at([ix, iy, iz]) {
                    clamp_ok &= f64::from(l) >= params.l_min - 1e-6 && f64::from(l) <= params.l_max + 1e-6;
                }
            }
        }
    }

    // export → load round trip
    let text = map.export_text();
    let mut back = VoxelMap::new(Vec3::ZERO, [20, 20, 20], params).unwrap();
    back.load_text(&text).unwrap();
    let mut lossless = true;
    for ix in 0..20 {
        for iy in 0..20 {
            for iz in 0..20 {
                let idx = [ix, iy, iz];
                if map.state_at(idx) == OccupancyState::Unknown {
                    continue;
                }
                let (a, b) = (map.log_odds_at(idx).unwrap(), back.log_odds_at(idx).unwrap());
                lossless &= map.state_at(idx) == back.state_at(idx) && (a - b).abs() <= 5e-4;
            }
        }
    }
    lossless &= back.export_text() == text;
    outcome(
        disagree == 0 && clamp_ok && lossless,
        format!(
            "{checks} segments ({blocked} blocked): {agree} agree, {borderline} within the oracle's half-spacing band, \
             {disagree} disagree; clamping after {rays_done} rays: {clamp_ok}; round trip lossless: {lossless}"
        ),
    )
}

fn criterion_9(ex: &ExplorationRuns) -> Outcome {
    let (seed, first, _) = &ex.runs[0];
    let again = run_scenario(&Scenario::reference_tunnel(*seed)).unwrap();
    let (a, b) = (trajectory_csv(&first.trajectory), trajectory_csv(&again.trajectory));
    outcome(a == b, format!("seed {seed}: {} bytes, identical: {}", a.len(), a == b))
}

fn criterion_10() -> Outcome {
    let c = thrust_margin_check(&DroneSpec::reference()).unwrap();
    outcome(
        c.total_weight == 1200.0 && c.required_thrust == 2400.0 && c.available_thrust == 2500.0 && c.pass,
        format!(
            "total {} g, required {} g, available {} g, pass {}",
            c.total_weight, c.required_thrust, c.available_thrust, c.pass
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters come through here too
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let clock = Instant::now();
    let ex = exploration_runs();
    let cal = wind_calibration();
    let results = [
        ("1 end-to-end exploration", criterion_1(&ex)),
        ("2 planner rate budget", criterion_2(&ex)),
        ("3 RRT correctness", criterion_3()),
        ("4 shortcut quality", criterion_4()),
        ("5 wind hover trend", criterion_5(&cal)),
        ("6 wind straight behaviour", criterion_6(&cal)),
        ("7 FSM conformance", criterion_7(&ex)),
        ("8 map oracle equivalence", criterion_8()),
        ("9 determinism", criterion_9(&ex)),
        ("10 thrust arithmetic", criterion_10()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        println!("[{}] criterion {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        results.len() - failed,
        clock.elapsed().as_secs_f64()
    );
    // strict mode turns any FAIL line into a failing exit status
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
