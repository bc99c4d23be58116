//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use convstep::cli_io::{random_operands, write_strategy_csv};
use convstep::conv::{reference_convolution, LayerSpec, Padding, PixelId};
use convstep::exec::{
    run_and_verify, step_duration, strategy_duration, validate_strategy, CostModel, HardwareSpec, Strategy,
    ViolationKind,
};
use convstep::optimizer::{brute_force_optimum, build_model, solve, OptimizeError, SolveOptions, SolveStatus};
use convstep::report::{compare, render_strategy_grid, SweepResult};
use convstep::strategy::{compile, gen_s1_baseline, s1_params, Heuristic, S1Params};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn px(list: &[(usize, usize)]) -> BTreeSet<PixelId> {
    list.iter().map(|&(h, w)| PixelId { h, w }).collect()
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn big_hw(nbop_pe: u64) -> HardwareSpec {
    HardwareSpec { nbop_pe, size_mem: 1 << 40, t_l: 1, t_w: 1, t_acc: 1, dram_size: 1 << 40 }
}

fn max_reload(strategy: &Strategy) -> usize {
    let mut loads: BTreeMap<PixelId, usize> = BTreeMap::new();
    for step in &strategy.steps {
        for p in &step.load_inputs {
            *loads.entry(*p).or_default() += 1;
        }
    }
    loads.into_values().max().unwrap_or(0)
}

fn worked_example() -> Outcome {
    let started = Instant::now();
    let layer = LayerSpec::new(2, 5, 5, 2, 3, 3, 1, 1).map_err(|e| e.to_string())?;
    let hw = HardwareSpec { nbop_pe: 120, size_mem: 1000, t_l: 3, t_w: 5, t_acc: 7, dram_size: 1000 };
    let cost = CostModel::default();
    let cases = [
        (Heuristic::RowByRow, px(&[(0, 0), (0, 1)]), px(&[(0, 4), (1, 4), (2, 4), (3, 0), (3, 1), (3, 2)]), 32),
        (
            Heuristic::ZigZag,
            px(&[(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]),
            px(&[(0, 4), (1, 4), (2, 4), (3, 4), (3, 3), (3, 2)]),
            24,
        ),
    ];
    for (h, free, load, m_inp) in cases {
        let strategy =
            compile(&h.generate(&layer, 2).map_err(|e| e.to_string())?, &layer, &hw).map_err(|e| e.to_string())?;
        let s2 = &strategy.steps[1];
        check(s2.free_inputs == free, || format!("{h}: F_inp = {:?}", s2.free_inputs))?;
        check(s2.load_inputs == load, || format!("{h}: I_slice = {:?}", s2.load_inputs))?;
        check(s2.load_kernels.is_empty() && s2.free_kernels.is_empty(), || format!("{h}: kernel traffic in step 2"))?;
        let positions: BTreeSet<(usize, usize)> = s2.write_back.iter().map(|o| (o.i, o.j)).collect();
        check(positions == BTreeSet::from([(0, 0), (0, 1)]), || format!("{h}: W = {positions:?}"))?;
        let d = step_duration(s2, true, &layer, &hw, &cost);
        check(d == 6 * hw.t_l + 2 * hw.t_w + hw.t_acc, || format!("{h}: delta(s2) = {d}"))?;
        let report = validate_strategy(&strategy, &layer, &hw, &cost, 2);
        check(report.is_valid(), || format!("{h}: {:?}", report.violations))?;
        let fp = report.metrics.traces[1].input_footprint;
        check(fp == m_inp, || format!("{h}: input footprint {fp}, expected {m_inp}"))?;
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok("Row: 6 loads, 2 writes, M_inp 32; ZigZag: paper pixel sets, M_inp 24".into())
}

fn functional_equivalence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut runs = 0;
    while runs < 150 {
        let c_in = rng.gen_range(1..=3);
        let h_in = rng.gen_range(3..=9);
        let w_in = rng.gen_range(3..=9);
        let p = rng.gen_range(0..=1);
        let h_k = rng.gen_range(1..=h_in.min(4));
        let w_k = rng.gen_range(1..=w_in.min(4));
        let layer = LayerSpec::new(
            c_in,
            h_in + 2 * p,
            w_in + 2 * p,
            rng.gen_range(1..=3),
            h_k,
            w_k,
            rng.gen_range(1..=2),
            rng.gen_range(1..=2),
        )
        .map_err(|e| e.to_string())?
        .with_padding(Padding { top: p, bottom: p, left: p, right: p });
        let heuristic = Heuristic::ALL[rng.gen_range(0..3)];
        let size = rng.gen_range(1..=6);
        let hw = big_hw(1 << 40);
        let schedule = heuristic.generate(&layer, size).map_err(|e| e.to_string())?;
        let strategy = compile(&schedule, &layer, &hw).map_err(|e| e.to_string())?;
        let (input, kernels) = random_operands(&layer, rng.gen());
        let (out, _) = run_and_verify(&strategy, &input, &kernels, &layer, &hw, &CostModel::default())
            .map_err(|e| format!("{layer:?} {heuristic} size {size}: {e}"))?;
        let reference = reference_convolution(&input, &kernels, &layer).map_err(|e| e.to_string())?;
        check(out == reference, || format!("{layer:?} {heuristic} size {size}: output differs"))?;
        runs += 1;
    }
    Ok(format!("{runs} random instances match the reference exactly"))
}

fn oracle_optimality() -> Outcome {
    let started = Instant::now();
    let shapes = [
        (1, 3, 3, 3, 3, 1),
        (1, 3, 4, 3, 3, 1),
        (1, 4, 4, 3, 3, 1),
        (1, 3, 6, 3, 3, 1),
        (1, 4, 5, 3, 3, 1),
        (1, 5, 4, 3, 3, 1),
        (1, 3, 8, 3, 3, 1),
        (2, 3, 4, 2, 2, 1),
        (1, 4, 3, 2, 2, 1),
        (1, 2, 7, 2, 2, 1),
        (1, 5, 5, 3, 3, 2),
        (2, 5, 7, 3, 3, 2),
    ];
    let options = SolveOptions { polish_after: Duration::from_secs(3600), ..Default::default() };
    let mut cases = 0;
    for (c_in, h_in, w_in, h_k, w_k, s) in shapes {
        let layer = LayerSpec::new(c_in, h_in, w_in, 1, h_k, w_k, s, s).map_err(|e| e.to_string())?;
        let n = layer.num_patches();
        check(n <= 6, || format!("{layer:?} has {n} patches"))?;
        let patch_mem = (c_in * h_k * w_k) as u64;
        for max in 1..=n {
            let params = S1Params::with_max(&layer, max).map_err(|e| e.to_string())?;
            // roomy memory, and memory that fits about two patches' pixels
            for size_mem in [1 << 20, 2 * patch_mem + patch_mem + max as u64] {
                let hw = HardwareSpec { nbop_pe: 1 << 20, size_mem, t_l: 1, t_w: 1, t_acc: 1, dram_size: 1 << 20 };
                for reload in [1, 2] {
                    for k in params.k_min..=params.k_max {
                        let model = build_model(&layer, &hw, &params, k, reload).map_err(|e| e.to_string())?;
                        let ours = solve(&model, &options);
                        let oracle = brute_force_optimum(&layer, &hw, &params, k, reload);
                        let tag = || format!("{layer:?} max {max} mem {size_mem} reload {reload} K {k}");
                        match (ours, oracle) {
                            (Ok(sol), Ok((schedule, delta))) => {
                                check(sol.status == SolveStatus::ProvedOptimal, || format!("{}: not closed", tag()))?;
                                check(sol.objective == delta, || format!("{}: {} vs {delta}", tag(), sol.objective))?;
                                check(sol.schedule == schedule, || format!("{}: tie broken differently", tag()))?;
                            }
                            (Err(OptimizeError::Infeasible), Err(OptimizeError::Infeasible)) => {}
                            (a, b) => {
                                return Err(format!(
                                    "{}: solver {:?}, oracle {:?}",
                                    tag(),
                                    a.map(|s| s.objective),
                                    b.map(|s| s.1)
                                ))
                            }
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} instances equal to exhaustive search ({:.1}s)", elapsed.as_secs_f64()))
}

fn cell_budget() -> Duration {
    std::env::var("CONVSTEP_BUDGET")
        .ok()
        .and_then(|v| v.parse::<f64>().ok())
        .map_or(Duration::from_millis(1500), Duration::from_secs_f64)
}

fn ilp_dominance() -> Outcome {
    let budget = cell_budget();
    let loads = CostModel::loads_only();
    let mut sweep = SweepResult::new("input_size");
    let (mut best_gain, mut best_cell, mut small_strict) = (0.0f64, (0, 0), false);
    let mut cells = 0;
    for h in 4..=12 {
        let layer = LayerSpec::new(1, h, h, 1, 3, 3, 1, 1).map_err(|e| e.to_string())?;
        for g in 2..=10 {
            let hw = big_hw(9 * g as u64);
            let params = s1_params(&layer, &hw).map_err(|e| e.to_string())?;
            let mut heuristics = Vec::new();
            let mut reload = 2;
            for heur in [Heuristic::RowByRow, Heuristic::ZigZag] {
                let schedule = heur.generate(&layer, params.nb_patches_max).map_err(|e| e.to_string())?;
                let strategy = compile(&schedule, &layer, &hw).map_err(|e| e.to_string())?;
                reload = reload.max(max_reload(&strategy));
                heuristics.push((strategy_duration(&strategy, &layer, &hw, &loads), schedule, strategy, heur));
            }
            heuristics.sort_by_key(|h| h.0);
            let best = heuristics[0].0;
            let model = build_model(&layer, &hw, &params, params.k_min, reload).map_err(|e| e.to_string())?;
            let options = SolveOptions {
                budget: Some(budget),
                polish_after: budget / 2,
                mip_start: Some(heuristics[0].1.clone()),
                ..Default::default()
            };
            let sol = solve(&model, &options).map_err(|e| format!("{h}x{h} g{g}: {e}"))?;
            let strategy = compile(&sol.schedule, &layer, &hw).map_err(|e| e.to_string())?;
            let report = validate_strategy(&strategy, &layer, &hw, &loads, reload);
            check(report.is_valid(), || format!("{h}x{h} g{g}: {:?}", report.violations))?;
            let ilp = strategy_duration(&strategy, &layer, &hw, &loads);
            check(ilp == sol.objective, || format!("{h}x{h} g{g}: objective {} vs executor {ilp}", sol.objective))?;
            check(ilp <= best, || format!("{h}x{h} g{g}: solver {ilp} > heuristic {best}"))?;
            let gain = convstep::report::gain_percent(best, ilp);
            if gain > best_gain {
                best_gain = gain;
                best_cell = (h, g);
            }
            small_strict |= g <= 4 && ilp < best;
            let mut named: Vec<(String, Strategy)> =
                heuristics.into_iter().map(|(_, _, s, heur)| (heur.name().to_string(), s)).collect();
            named.push(("optimized".into(), strategy));
            sweep.push(h * 100 + g, compare(&named, &layer, &hw, &loads, reload));
            cells += 1;
        }
    }
    check(small_strict, || "no strict improvement at small group sizes".into())?;
    check(best_gain >= 10.0, || format!("best gain only {best_gain:.1}%"))?;
    Ok(format!(
        "{cells} cells dominated, best gain {best_gain:.1}% at {0}x{0} group size {1}",
        best_cell.0, best_cell.1
    ))
}

fn crossover() -> Outcome {
    let layer = LayerSpec::new(1, 32, 32, 6, 5, 5, 1, 1).map_err(|e| e.to_string())?;
    let w_out = layer.w_out();
    check(w_out == 28, || format!("W_out = {w_out}"))?;
    let hw = big_hw(1 << 40);
    let loads = CostModel::loads_only();
    let delta = |h: Heuristic, g: usize| -> Result<u64, String> {
        let s = compile(&h.generate(&layer, g).map_err(|e| e.to_string())?, &layer, &hw).map_err(|e| e.to_string())?;
        Ok(strategy_duration(&s, &layer, &hw, &loads))
    };
    let mut cross = None;
    for g in 1..=8 {
        let (z, r) = (delta(Heuristic::ZigZag, g)?, delta(Heuristic::RowByRow, g)?);
        check(z <= r, || format!("group size {g}: ZigZag {z} > Row-by-Row {r}"))?;
    }
    for g in 9..=3 * w_out {
        let (z, r) = (delta(Heuristic::ZigZag, g)?, delta(Heuristic::RowByRow, g)?);
        if g % w_out == 0 {
            check(z == r, || format!("group size {g}: ZigZag {z} != Row-by-Row {r}"))?;
        }
        if cross.is_none() && z > r {
            cross = Some(g);
        }
    }
    Ok(format!(
        "ZigZag <= Row-by-Row for sizes 1..8, equal at 28/56/84, first reversal at {}",
        cross.map_or("none".to_string(), |g| g.to_string())
    ))
}

fn variable_count() -> Outcome {
    let mut done = Vec::new();
    for (c_in, h_in, w_in, n, hk, wk, s) in [(2, 5, 5, 2, 3, 3, 1), (1, 6, 8, 3, 3, 3, 1), (3, 9, 7, 1, 3, 2, 2)] {
        let layer = LayerSpec::new(c_in, h_in, w_in, n, hk, wk, s, s).map_err(|e| e.to_string())?;
        let params = S1Params::with_max(&layer, 2).map_err(|e| e.to_string())?;
        let model = build_model(&layer, &big_hw(1 << 20), &params, params.k_max, 2).map_err(|e| e.to_string())?;
        let expected = params.k_max * (3 * h_in * w_in + layer.h_out() * layer.w_out());
        check(model.num_variables() == expected && model.variables().len() == expected, || {
            format!("{layer:?}: {} variables, expected {expected}", model.num_variables())
        })?;
        done.push(expected.to_string());
    }
    Ok(format!("N_var = {}", done.join(", ")))
}

fn validator_suite() -> Outcome {
    let layer = LayerSpec::new(2, 5, 5, 2, 3, 3, 1, 1).map_err(|e| e.to_string())?;
    let hw = HardwareSpec { nbop_pe: 72, size_mem: 100, t_l: 1, t_w: 1, t_acc: 1, dram_size: 1000 };
    let cost = CostModel::default();
    let base = compile(&Heuristic::RowByRow.generate(&layer, 2).map_err(|e| e.to_string())?, &layer, &hw)
        .map_err(|e| e.to_string())?;
    check(validate_strategy(&base, &layer, &hw, &cost, 2).is_valid(), || "baseline strategy invalid".into())?;

    let mut cases: Vec<(ViolationKind, Strategy, HardwareSpec)> = Vec::new();
    let baseline = compile(&gen_s1_baseline(&layer), &layer, &hw).map_err(|e| e.to_string())?;
    cases.push((ViolationKind::ReloadLimit, baseline, hw));

    let mut unconsumed = base.clone();
    unconsumed.steps[0].load_inputs.insert(PixelId { h: 4, w: 4 });
    unconsumed.steps[4].load_inputs.remove(&PixelId { h: 4, w: 4 });
    cases.push((ViolationKind::LoadNotConsumed, unconsumed, hw));

    cases.push((ViolationKind::OpsBudgetExceeded, base.clone(), HardwareSpec { nbop_pe: 60, ..hw }));
    cases.push((ViolationKind::CapacityExceeded, base.clone(), HardwareSpec { size_mem: 71, ..hw }));

    let mut leftover = base.clone();
    leftover.flush.free_inputs.clear();
    cases.push((ViolationKind::FinalMemoryNonEmpty, leftover, hw));

    let mut names = Vec::new();
    for (kind, strategy, hw) in cases {
        let report = validate_strategy(&strategy, &layer, &hw, &cost, 2);
        check(report.has(kind), || format!("{kind:?} not reported: {:?}", report.violations))?;
        let kinds: BTreeSet<String> = report.violations.iter().map(|v| format!("{:?}", v.kind())).collect();
        check(kinds.len() == 1, || format!("{kind:?} case also reports {kinds:?}"))?;
        names.push(format!("{kind:?}"));
    }
    Ok(format!("detected {}", names.join(", ")))
}

fn artifacts(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        files.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(files)
}

fn run_once(seed: u64) -> Result<Vec<String>, String> {
    let layer = LayerSpec::new(2, 7, 8, 3, 3, 3, 1, 1).map_err(|e| e.to_string())?;
    let hw = big_hw(1 << 20);
    let mut out = Vec::new();
    let (input, kernels) = random_operands(&layer, seed);
    let mut named = Vec::new();
    for h in Heuristic::ALL {
        let schedule = h.generate(&layer, 4).map_err(|e| e.to_string())?;
        let strategy = compile(&schedule, &layer, &hw).map_err(|e| e.to_string())?;
        let (result, metrics) = run_and_verify(&strategy, &input, &kernels, &layer, &hw, &CostModel::default())
            .map_err(|e| e.to_string())?;
        out.push(metrics.to_jsonl());
        out.push(format!("{:?}", result.data()));
        out.push(write_strategy_csv(&schedule, &layer));
        let grid = render_strategy_grid(&schedule, &layer);
        out.push(grid.ascii);
        out.push(grid.svg);
        named.push((h.name().to_string(), strategy));
    }
    let mut sweep = SweepResult::new("group_size");
    sweep.push(4, compare(&named, &layer, &hw, &CostModel::default(), 3));
    out.push(sweep.to_csv());
    let small = LayerSpec::new(1, 5, 6, 1, 3, 3, 1, 1).map_err(|e| e.to_string())?;
    let params = S1Params::with_max(&small, 3).map_err(|e| e.to_string())?;
    let model = build_model(&small, &hw, &params, params.k_min, 2).map_err(|e| e.to_string())?;
    let sol = solve(&model, &SolveOptions::default()).map_err(|e| e.to_string())?;
    out.push(write_strategy_csv(&sol.schedule, &small));
    Ok(out)
}

fn determinism() -> Outcome {
    let a = run_once(7)?;
    let b = run_once(7)?;
    check(a == b, || "library outputs differ between runs".into())?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("lenet.toml");
    std::fs::write(
        &config,
        "c_in = 1\nh_in = 12\nw_in = 12\nn_kernels = 2\nh_k = 5\nw_k = 5\nnbop_pe = 1000000\nsize_mem = 1000000\nstrategy = \"zigzag\"\nseed = 11\n",
    )
    .map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        let trace = tmp.path().join(format!("{name}.jsonl"));
        let bin = env!("CARGO_BIN_EXE_convstep");
        let compare = Command::new(bin)
            .args(["compare", "--config"])
            .arg(&config)
            .args(["--sweep", "group-size=1..6", "--out"])
            .arg(&dir)
            .output()
            .map_err(|e| e.to_string())?;
        check(compare.status.success(), || String::from_utf8_lossy(&compare.stderr).into_owned())?;
        let sim = Command::new(bin)
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--trace")
            .arg(&trace)
            .output()
            .map_err(|e| e.to_string())?;
        check(sim.status.success(), || String::from_utf8_lossy(&sim.stderr).into_owned())?;
        let mut files = artifacts(&dir)?;
        files.insert("trace.jsonl".into(), std::fs::read(&trace).map_err(|e| e.to_string())?);
        files.insert("stdout".into(), [compare.stdout, sim.stdout].concat());
        runs.push(files);
    }
    check(runs[0] == runs[1], || "CLI artifacts differ between runs".into())?;
    Ok(format!("{} library artifacts and {} CLI files byte-identical", a.len(), runs[0].len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("worked example", worked_example),
        ("functional equivalence", functional_equivalence),
        ("oracle optimality", oracle_optimality),
        ("ILP dominance", ilp_dominance),
        ("ZigZag/Row-by-Row crossover", crossover),
        ("variable count", variable_count),
        ("validator violations", validator_suite),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {secs:.2}s)", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}; {secs:.2}s)", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
