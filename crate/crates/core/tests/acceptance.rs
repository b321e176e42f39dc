//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the verdict lines
//! are always printed.

use std::collections::VecDeque;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use frustration_core::affect::{SelfModel, SweepRow};
use frustration_core::agent::{AgentConfig, PolicyMode};
use frustration_core::harness::{self, audit, experiment, load_matrix, load_sweep};
use frustration_core::planning::{count_paths, split_cost};
use frustration_core::protocols::{
    corridor_interactions, hedonic_treadmill, median, CorridorLearner, CorridorParams, TreadmillParams,
};
use frustration_core::replay::{backward_sweep, Experience, ReplayBuffer, WanderingParams};
use frustration_core::suffering::evaluate;
use frustration_core::values::{reward_loss, td_error, value_iteration, LearningParams, Mdp, ValueScheme, ValueStore};
use frustration_core::world::{Action, Cell, StateId, WorldModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn asset_world(name: &str) -> WorldModel {
    WorldModel::load(&assets().join("worlds").join(name)).expect("asset world loads")
}

// ---------------------------------------------------------------------------

fn bellman_chain() -> Verdict {
    let started = Instant::now();
    let store = value_iteration(&Mdp::chain(3, 1.0, 0.1), ValueScheme::StepPenalty { penalty: 0.1 }, 1e-12, 100)
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let got = [store.v(StateId(0)), store.v(StateId(1)), store.v(StateId(2))];
    for (g, want) in got.iter().zip([0.8, 0.9, 1.0]) {
        ensure!((g - want).abs() < 1e-9, "values {got:?}, want (0.8, 0.9, 1.0)");
    }
    ensure!(elapsed < Duration::from_millis(1), "took {elapsed:?}");
    Ok(format!("V = {got:?} in {elapsed:?}"))
}

fn path_counts() -> Verdict {
    let e = |r: Result<u64, _>| r.map_err(|e: frustration_core::planning::PlanError| e.to_string());
    let checks = [
        ("count_paths(2,5)", e(count_paths(2, 5))?, 32),
        ("count_paths(2,30)", e(count_paths(2, 30))?, 1_073_741_824),
        ("split_cost(2,20,2)", e(split_cost(2, 20, 2))?, 2_048),
        ("split_cost(2,20,1)", e(split_cost(2, 20, 1))?, 1_048_576),
    ];
    for (what, got, want) in checks {
        ensure!(got == want, "{what} = {got}, want {want}");
    }
    Ok("32, 1073741824, 2048, 1048576".into())
}

fn reward_loss_contract() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10_000 {
        // every fifth pair is a tie, to exercise the boundary
        let e: f64 = rng.gen_range(-100.0..100.0);
        let o: f64 = if i % 5 == 0 { e } else { rng.gen_range(-100.0..100.0) };
        let l = reward_loss(e, o);
        ensure!(l >= 0.0, "negative loss {l} for ({e}, {o})");
        ensure!((l == 0.0) == (o >= e), "zero-iff violated for ({e}, {o}): {l}");
    }
    ensure!(reward_loss(5.0, 0.0) == 5.0, "chocolate example gave {}", reward_loss(5.0, 0.0));
    Ok("10000 pairs; (5, 0) -> 5".into())
}

/// Shortest path lengths over the raw map, independent of the world model.
fn oracle_bfs(map: &[String], from: (usize, usize)) -> Vec<Vec<Option<usize>>> {
    let (h, w) = (map.len(), map[0].len());
    let open = |x: usize, y: usize| map[y].as_bytes()[x] != b'#';
    let mut dist = vec![vec![None; w]; h];
    dist[from.1][from.0] = Some(0);
    let mut q = VecDeque::from([from]);
    while let Some((x, y)) = q.pop_front() {
        let d = dist[y][x].unwrap();
        let next = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
        for (nx, ny) in next {
            if nx < w && ny < h && open(nx, ny) && dist[ny][nx].is_none() {
                dist[ny][nx] = Some(d + 1);
                q.push_back((nx, ny));
            }
        }
    }
    dist
}

fn random_map(rng: &mut ChaCha8Rng) -> (Vec<String>, (usize, usize), (usize, usize)) {
    let w = rng.gen_range(2..=8);
    let h = rng.gen_range(1..=8);
    let mut grid: Vec<Vec<u8>> =
        (0..h).map(|_| (0..w).map(|_| if rng.gen_bool(0.25) { b'#' } else { b'.' }).collect()).collect();
    let pick = |rng: &mut ChaCha8Rng| (rng.gen_range(0..w), rng.gen_range(0..h));
    let start = pick(rng);
    let mut goal = pick(rng);
    while goal == start {
        goal = pick(rng);
    }
    grid[start.1][start.0] = b'S';
    grid[goal.1][goal.0] = b'R';
    (grid.into_iter().map(|r| String::from_utf8(r).unwrap()).collect(), start, goal)
}

fn td_fixed_point() -> Verdict {
    let started = Instant::now();
    let scheme = ValueScheme::Discounted { gamma: 0.9 };
    let gamma: f64 = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worlds, mut transitions, mut worst) = (0, 0, 0.0_f64);
    while worlds < 200 {
        let (map, start, goal) = random_map(&mut rng);
        let rows: Vec<&str> = map.iter().map(String::as_str).collect();
        let world = WorldModel::from_ascii(&rows, 1.0, 1.0).map_err(|e| e.to_string())?;
        let values = value_iteration(&Mdp::from_world(&world, 0), scheme, 1e-12, 10_000).map_err(|e| e.to_string())?;
        let dist = oracle_bfs(&map, goal);
        let Some(want) = dist[start.1][start.0] else { continue };
        worlds += 1;
        let mut s = world.state_of(Cell::new(start.0, start.1));
        let mut steps = 0;
        while !world.is_goal_state(s) {
            ensure!(steps <= want, "greedy path exceeds BFS length {want} on {map:?}");
            let a = values.greedy_action(s);
            let next = world.state_of(world.intended_cell(world.cell_of(s), a));
            let delta = td_error(-world.step_cost, values.v(s), values.v(next), scheme);
            worst = worst.max(delta.abs());
            ensure!(delta.abs() < 1e-6, "|td| = {delta} at {:?} on {map:?}", world.cell_of(s));
            s = next;
            steps += 1;
            transitions += 1;
        }
        ensure!(steps == want, "greedy path {steps} != BFS {want} on {map:?}");
        ensure!(
            (values.v(world.state_of(Cell::new(start.0, start.1))) - gamma.powi(want as i32)).abs() < 1e-9,
            "start value off"
        );
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{worlds} worlds, {transitions} greedy transitions, max |td| {worst:.1e}, {elapsed:?}"))
}

fn prioritized_sweeping() -> Verdict {
    let started = Instant::now();
    let params = CorridorParams::default();
    let (mut td, mut pr) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let run = |l| corridor_interactions(l, &params, seed).ok_or(format!("seed {seed}: no convergence"));
        td.push(run(CorridorLearner::Td)? as f64);
        pr.push(run(CorridorLearner::PrioritizedReplay)? as f64);
    }
    let (td, pr) = (median(&mut td).unwrap(), median(&mut pr).unwrap());
    let elapsed = started.elapsed();
    let ratio = pr / td;
    ensure!(ratio <= 0.5, "median replay {pr} vs TD {td}: ratio {ratio:.3}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("median interactions {pr} vs {td} (ratio {ratio:.3}) in {elapsed:.1?}"))
}

fn rooms_example() -> Verdict {
    let x = |s, r, n, t, terminal| Experience { s: StateId(s), a: Action::East, r, s_next: StateId(n), t, terminal };
    let mut buffer = ReplayBuffer::new(8);
    buffer.push(x(21, -0.1, 13, 0, false), 0, None);
    buffer.push(x(13, -0.1, 42, 1, false), 0, None);
    buffer.push(Experience { a: Action::Stay, ..x(42, 1.0, 42, 2, true) }, 0, None);
    let params = LearningParams { alpha: 1.0, scheme: ValueScheme::StepPenalty { penalty: 0.1 }, ..Default::default() };
    let mut store = ValueStore::new();
    backward_sweep(&buffer, 2, 3, &mut store, &params);
    let v = [store.v(StateId(42)), store.v(StateId(13)), store.v(StateId(21))];
    for (g, want) in v.iter().zip([1.0, 0.9, 0.8]) {
        ensure!((g - want).abs() < 1e-9, "V(42, 13, 21) = {v:?}");
    }
    ensure!(v[0] > v[1] && v[1] > v[2], "ordering violated: {v:?}");
    Ok(format!("V(42, 13, 21) = {v:?}"))
}

fn equation_laws() -> Verdict {
    let f = |e, o, c, a, n| evaluate(e, o, c, a, n).map_err(|err| err.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let e: f64 = rng.gen_range(-10.0..10.0);
        let o: f64 = rng.gen_range(-10.0..10.0);
        let c: f64 = rng.gen_range(0.0..=1.0);
        let a: f64 = rng.gen_range(0.0..5.0);
        let n: u32 = rng.gen_range(1..20);
        let base = f(e, o, c, a, n)?;
        // zero laws
        ensure!(f(e, o, 0.0, a, n)? == 0.0 && f(e, o, c, 0.0, n)? == 0.0, "zero certainty/attention not zero");
        ensure!(f(o.min(e), o.max(e), c, a, n)? == 0.0, "no loss must mean no frustration");
        // homogeneity: linear in attention and in the count, degree one in (e, o)
        let k: f64 = rng.gen_range(0.0..4.0);
        let tol = 1e-9 * (1.0 + base.abs() * k);
        ensure!((f(e, o, c, a * k, n)? - k * base).abs() <= tol, "attention homogeneity");
        ensure!((f(e, o, c, a, 2 * n)? - 2.0 * base).abs() <= 1e-12 * (1.0 + base), "count homogeneity");
        ensure!((f(k * e, k * o, c, a, n)? - k * base).abs() <= tol * 10.0, "loss homogeneity");
        // monotone in each factor
        let d: f64 = rng.gen_range(0.0..3.0);
        ensure!(f(e + d, o, c, a, n)? >= base, "not monotone in expected");
        ensure!(f(e, o - d, c, a, n)? >= base, "not monotone in obtained");
        ensure!(f(e, o, (c + d).min(1.0), a, n)? >= base, "not monotone in certainty");
        ensure!(f(e, o, c, a + d, n)? >= base, "not monotone in attention");
        ensure!(f(e, o, c, a, n + 1)? >= base, "not monotone in count");
    }
    let worked = f(5.0, 3.0, 0.5, 0.5, 4)?;
    ensure!(worked == 2.0, "(5, 3, .5, .5, 4) -> {worked}");
    Ok("10000 tuples; (5, 3, 0.5, 0.5, 4) -> 2".into())
}

fn hedonic_treadmill_protocol() -> Verdict {
    let rich = asset_world("treadmill_rich.json");
    let lean = asset_world("treadmill_lean.json");
    let mut losses = Vec::new();
    for seed in 0..20 {
        let r = hedonic_treadmill(&rich, &lean, &TreadmillParams::default(), seed).map_err(|e| e.to_string())?;
        ensure!(r.converged, "seed {seed}: baseline never settled on the rich world");
        ensure!(r.first_lean_loss > 0.0, "seed {seed}: first lean episode loss {}", r.first_lean_loss);
        losses.push(r.first_lean_loss);
    }
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!("20/20 seeds with loss > 0 (min {min:.3})"))
}

fn signal_detection_sweep() -> Verdict {
    let (world, spec) =
        load_sweep(&assets().join("worlds/scripted_hazard.json"), &assets().join("sweeps/default.json"))
            .map_err(|e| e.to_string())?;
    ensure!(spec.thresholds[0] == 0.0 && spec.thresholds.last() == Some(&f64::INFINITY), "sweep must span 0..inf");
    let rows = frustration_core::affect::sweep_threshold(&world, &spec);
    for seed in 0..spec.seeds {
        let per: Vec<&SweepRow> = rows.iter().filter(|r| r.seed == Some(seed)).collect();
        for w in per.windows(2) {
            ensure!(w[1].false_alarms <= w[0].false_alarms, "seed {seed}: false alarms rise at {}", w[1].threshold);
            ensure!(w[1].misses >= w[0].misses, "seed {seed}: misses fall at {}", w[1].threshold);
        }
        let (zero, never) = (per[0], per[per.len() - 1]);
        ensure!(zero.misses == 0, "seed {seed}: threshold 0 misses {}", zero.misses);
        // open loop: both extremes score the same trajectories
        ensure!(zero.hazard_hits == never.hazard_hits, "seed {seed}: trajectories differ across thresholds");
        ensure!(never.alarms == 0 && never.false_alarms == 0, "seed {seed}: infinite threshold fired");
        ensure!(never.misses == never.hazard_hits, "seed {seed}: infinite threshold must miss every hit");
    }
    Ok(format!("{} seeds x {} thresholds monotone; extremes exact", spec.seeds, spec.thresholds.len()))
}

fn fixed_policy_config() -> AgentConfig {
    AgentConfig {
        policy: PolicyMode::Fixed,
        learning: LearningParams { epsilon: 0.1, ..Default::default() },
        self_model: SelfModel { standard: 0.3, meta_rate: 0.5, ..Default::default() },
        ..Default::default()
    }
}

fn intervention_monotonicity() -> Verdict {
    let world = asset_world("loss_heavy.json");
    let (steps, seeds) = (2_000, 0..4);
    let total = |cfg: &AgentConfig, seed| -> Result<f64, String> {
        harness::run(cfg, &world, "loss_heavy", steps, seed).map(|o| o.summary.totals.total).map_err(|e| e.to_string())
    };
    let ladder = [1.0, 0.75, 0.5, 0.25, 0.0];
    type Knob = fn(&mut AgentConfig, f64);
    let knobs: [(&str, &[f64], Knob); 4] = [
        ("beta", &ladder, |c, x| c.expectation_scale = x),
        ("certainty_scale", &ladder, |c, x| c.certainty_scale = x),
        ("attention_scale", &ladder, |c, x| c.attention_scale = x),
        ("p_wander", &[0.4, 0.2, 0.1, 0.05, 0.0], |c, x| c.wandering.p_wander = x),
    ];
    let mut checked = 0;
    for (name, levels, set) in knobs {
        for seed in seeds.clone() {
            let mut prev = f64::INFINITY;
            for &x in levels {
                let mut cfg = fixed_policy_config();
                set(&mut cfg, x);
                let t = total(&cfg, seed)?;
                ensure!(t < prev, "{name}: total {t} at {x} not below {prev} (seed {seed})");
                prev = t;
                checked += 1;
            }
        }
    }
    for seed in seeds {
        let t = total(&AgentConfig { attention_scale: 0.0, ..fixed_policy_config() }, seed)?;
        ensure!(t == 0.0, "attention_scale 0 left total {t} (seed {seed})");
    }
    Ok(format!("{checked} paired runs strictly decreasing; attention 0 -> 0 exactly"))
}

fn determinism_and_budget() -> Verdict {
    let loaded = harness::load_run_config(&assets().join("runs/baseline.json")).map_err(|e| e.to_string())?;
    let a = harness::run_loaded(&loaded).map_err(|e| e.to_string())?;
    let b = harness::run_loaded(&loaded).map_err(|e| e.to_string())?;
    ensure!(a.events_csv == b.events_csv, "events differ between repeats");
    ensure!(a.trace_csv == b.trace_csv, "traces differ between repeats");
    let (ja, jb) = (serde_json::to_string(&a.summary).unwrap(), serde_json::to_string(&b.summary).unwrap());
    ensure!(ja == jb, "summaries differ between repeats");

    let started = Instant::now();
    let matrix = load_matrix(&assets().join("canonical_matrix.json")).map_err(|e| e.to_string())?;
    let cells = matrix.interventions.len() * matrix.worlds.len() * matrix.seeds.len();
    ensure!(cells == 8 * 2 * 20, "canonical matrix has {cells} cells");
    let report = experiment(&matrix).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(report.failed() == 0, "{} cells failed", report.failed());
    ensure!(elapsed < Duration::from_secs(300), "canonical experiment took {elapsed:?}");
    Ok(format!("repeat byte-identical; {cells} cells in {elapsed:.1?}"))
}

fn trace_completeness() -> Verdict {
    let world = asset_world("loss_heavy.json");
    let cfg = AgentConfig {
        self_model: SelfModel { standard: 0.3, meta_rate: 0.5, ..Default::default() },
        wandering: WanderingParams { p_wander: 0.2, ..Default::default() },
        ..Default::default()
    };
    let out = harness::run(&cfg, &world, "loss_heavy", 10_000, 42).map_err(|e| e.to_string())?;
    let report = audit(&out.events_csv, &out.trace_csv).map_err(|e| e.to_string())?;
    ensure!(report.steps == 10_000, "trace has {} rows", report.steps);
    ensure!(report.ok(), "{} mismatches, first: {}", report.mismatches.len(), report.mismatches[0]);
    let by = &out.summary.totals.events_by_source;
    for source in ["step_loss", "plan_loss", "self_eval", "threat_internal"] {
        ensure!(by[source] > 0, "no {source} events: the audit would be vacuous");
    }
    ensure!(by["replay"] + by["imagination"] > 0, "no wandering events");
    Ok(format!("{} events over {} steps, 0 mismatches", report.events, report.steps))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("bellman chain", bellman_chain),
        ("path-count identities", path_counts),
        ("reward-loss contract", reward_loss_contract),
        ("td fixed point", td_fixed_point),
        ("prioritized sweeping efficiency", prioritized_sweeping),
        ("rooms backward sweep", rooms_example),
        ("frustration-equation laws", equation_laws),
        ("hedonic treadmill", hedonic_treadmill_protocol),
        ("signal-detection sweep", signal_detection_sweep),
        ("intervention monotonicity", intervention_monotonicity),
        ("determinism and budget", determinism_and_budget),
        ("trace completeness", trace_completeness),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match verdict {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
