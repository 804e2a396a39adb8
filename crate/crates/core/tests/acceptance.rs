//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion and then asserts it. Run with `--nocapture` to see the lines.

mod support;

use std::collections::BTreeMap;
use std::time::Instant;

use mse_core::arch::load_arch;
use mse_core::cost::access_counts;
use mse_core::experiment::{density_transfer, run_network, sweep_order, MapperKind, SearchSpec};
use mse_core::factor::{composition_count, compositions};
use mse_core::heuristics::{seed_mapping, ReplayBuffer, SeedPolicy};
use mse_core::mapping::{canonicalize, is_legal, map_space_size, random_mapping};
use mse_core::search::operators::{crossover, mutate_order, mutate_parallelism, mutate_tile};
use mse_core::search::{
    exhaustive_search, ga_search, pruned_random_search, random_search, GaConfig, Operator, SearchBudget,
    SearchTrace, DEFAULT_ORACLE_CAP,
};
use mse_core::workload::{load_workloads, TensorRole};
use mse_core::{evaluate, AcceleratorConfig, DensityContext, LayerWorkload, Mapping};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{data, median};

fn report(criterion: u32, pass: bool, detail: String, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion:>2}: {verdict} {detail} ({:.1}s)", started.elapsed().as_secs_f64());
}

fn accel_b() -> AcceleratorConfig {
    load_arch(data("accel_b.json")).unwrap()
}

fn mid_conv() -> LayerWorkload {
    load_workloads(data("mid_conv.json")).unwrap().remove(0)
}

fn ga(w: &LayerWorkload, a: &AcceleratorConfig, budget: u64, cfg: &GaConfig) -> SearchTrace {
    ga_search(w, a, &DensityContext::dense(), SearchBudget::samples(budget), cfg, &[]).unwrap()
}

#[test]
fn c01_map_space_arithmetic() {
    let t = Instant::now();
    let a = accel_b();
    let size = map_space_size(&mid_conv(), &a);
    let orders = size.order_count == BigUint::from(128_024_064_000u64);
    let parallel = size.parallel_count == BigUint::from(16_384u32);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let positions = a.num_memory_levels() + a.num_compute_levels();
    let tiles = (0..20).all(|_| {
        let e = rng.gen_range(1..=64u64);
        composition_count(e, positions) == BigUint::from(compositions(e, positions).len())
    });
    let fast = t.elapsed().as_secs_f64() < 1.0;
    let pass = orders && parallel && tiles && fast;
    report(
        1,
        pass,
        format!("order_count={} parallel_count={} tile_count_matches={tiles}", size.order_count, size.parallel_count),
        t,
    );
    assert!(pass);
}

#[test]
fn c02_cost_model_matches_simulator() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cases = 60;
    let mut mismatches = 0;
    for _ in 0..cases {
        let (w, a, m) = support::random_case(&mut rng, 4, 6);
        let sim = support::simulate(&m, &w, &a);
        let counts = access_counts(&m, &w, &a).unwrap();
        let cycles = evaluate(&m, &w, &a, &DensityContext::dense()).unwrap().compute_cycles;
        let words_ok = counts
            .iter()
            .enumerate()
            .all(|(l, c)| TensorRole::ALL.iter().all(|&r| c.get(r) == sim.words[l][r.index()]));
        if !words_ok || cycles != sim.compute_cycles {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0 && t.elapsed().as_secs() < 120;
    report(2, pass, format!("{mismatches} mismatches in {cases} cases"), t);
    assert!(pass);
}

#[test]
fn c03_order_collapse() {
    let t = Instant::now();
    let a = accel_b();
    let w = mid_conv();
    let base = ga(&w, &a, 5000, &GaConfig::default()).best.unwrap().0;
    let sweep = sweep_order(&w, &a, &base, &DensityContext::dense()).unwrap();
    let mut by_edp: BTreeMap<u64, Vec<_>> = BTreeMap::new();
    for (_, r) in &sweep.rows {
        by_edp.entry(r.edp.to_bits()).or_default().push(r);
    }
    let identical = by_edp.values().all(|rs| rs.iter().all(|r| *r == rs[0]));
    let distinct = sweep.distinct_edps();
    let pass = sweep.rows.len() == 5040 && distinct <= 128 && identical;
    report(3, pass, format!("{distinct} distinct EDPs of {} orders, buckets identical={identical}", sweep.rows.len()), t);
    assert!(pass);
}

#[test]
fn c04_sparse_non_portability() {
    let t = Instant::now();
    let a = accel_b();
    let cfg = GaConfig::default();
    let tr = density_transfer(&mid_conv(), &a, &[1.0, 0.5, 0.1], SearchBudget::samples(2000), &[0, 1, 2], &cfg, false)
        .unwrap();
    let cells = tr.diagonal_dominant_cells();
    let pass = cells >= 8;
    report(4, pass, format!("{cells}/9 cells diagonal-dominant"), t);
    assert!(pass);
}

#[test]
fn c05_sparsity_aware_generalization() {
    let t = Instant::now();
    let a = accel_b();
    let cfg = GaConfig::default();
    let levels = [1.0, 0.8, 0.5, 0.2, 0.1];
    let tr = density_transfer(&mid_conv(), &a, &levels, SearchBudget::samples(2000), &[0, 1, 2], &cfg, true).unwrap();
    let ratio = tr.aware_geomean_ratio().unwrap();
    let pass = ratio >= 0.90;
    report(5, pass, format!("geomean specialized/aware EDP ratio {ratio:.3}"), t);
    assert!(pass);
}

#[test]
fn c06_warm_start_speedup() {
    let t = Instant::now();
    let a = accel_b();
    let layers = load_workloads(data("vgg16.json")).unwrap();
    let seeds: Vec<u64> = (0..9).collect();
    let cold = SearchSpec::new(MapperKind::Ga, SearchBudget::samples(5000), seeds.clone());
    let warm = SearchSpec { warm_start: Some(SeedPolicy::Similarity), ..cold.clone() };
    let cold = run_network(&layers, &a, &cold, None).unwrap();
    let warm = run_network(&layers, &a, &warm, None).unwrap();
    let per_layer = |run: &mse_core::experiment::NetworkRun, i: usize| {
        let conv: Vec<f64> =
            run.runs.iter().map(|r| r.outcomes[i].convergence_generation.unwrap_or(0) as f64).collect();
        let edp: Vec<f64> = run.runs.iter().map(|r| r.outcomes[i].best_edp).collect();
        (median(conv), median(edp))
    };
    let (mut cold_gens, mut warm_gens, mut worst_edp) = (0.0, 0.0, 0.0f64);
    for i in 0..layers.len() {
        let (cg, ce) = per_layer(&cold, i);
        let (wg, we) = per_layer(&warm, i);
        worst_edp = worst_edp.max(we / ce);
        if i > 0 {
            cold_gens += cg;
            warm_gens += wg;
        }
    }
    let speed = warm_gens / cold_gens;
    let pass = speed <= 0.5 && worst_edp <= 1.05;
    report(
        6,
        pass,
        format!("convergence warm/cold {speed:.3} (layers 2+), worst per-layer median EDP ratio {worst_edp:.3}"),
        t,
    );
    assert!(pass);
}

#[test]
fn c07_similarity_beats_previous_layer() {
    let t = Instant::now();
    let a = accel_b();
    let layers = load_workloads(data("nas_irregular.json")).unwrap();
    let ctx = DensityContext::dense();
    let (mut wins, mut compared) = (0, 0);
    for seed in 0..3 {
        let mut buf = ReplayBuffer::new(&a);
        for w in &layers {
            let similar = seed_mapping(w, &a, &buf, SeedPolicy::Similarity).unwrap();
            let previous = seed_mapping(w, &a, &buf, SeedPolicy::PreviousLayer).unwrap();
            if let (Some(s), Some(p)) = (similar, previous) {
                compared += 1;
                if evaluate(&s, w, &a, &ctx).unwrap().edp <= evaluate(&p, w, &a, &ctx).unwrap().edp {
                    wins += 1;
                }
            }
            let (m, f) = ga(w, &a, 5000, &GaConfig::default().with_seed(seed)).best.unwrap();
            buf.record_result(w, &a, &m, &f.report).unwrap();
        }
    }
    let share = wins as f64 / compared as f64;
    let pass = share >= 0.70;
    report(7, pass, format!("similarity seed no worse on {wins}/{compared} layers ({:.0}%)", share * 100.0), t);
    assert!(pass);
}

#[test]
fn c08_sample_efficiency() {
    let t = Instant::now();
    let a = accel_b();
    let w = mid_conv();
    let ctx = DensityContext::dense();
    let budget = SearchBudget::samples(5000);
    let seeds = 0..5u64;
    let ga_med = median(seeds.clone().map(|s| ga(&w, &a, 5000, &GaConfig::default().with_seed(s)).best_score()).collect());
    let rs_med = median(
        seeds.map(|s| random_search(&w, &a, &ctx, budget, s, Default::default()).unwrap().best_score()).collect(),
    );
    let ratio = ga_med / rs_med;

    let mut worst_gap = 0.0f64;
    for w in load_workloads(data("oracle_small.json")).unwrap() {
        let oracle = exhaustive_search(&w, &a, &ctx, DEFAULT_ORACLE_CAP, Default::default()).unwrap();
        let allowance = (oracle.evaluated / 5).max(1);
        let found = ga(&w, &a, allowance, &GaConfig::default()).best_score();
        worst_gap = worst_gap.max(found / oracle.report.edp);
    }
    let pass = ratio <= 0.5 && worst_gap <= 1.10;
    report(
        8,
        pass,
        format!("GA/random median EDP {ratio:.3} (need <= 0.5), worst GA/oracle at 20% budget {worst_gap:.3}"),
        t,
    );
    assert!(pass);
}

#[test]
fn c09_operator_ablation() {
    let t = Instant::now();
    let a = accel_b();
    let mut fixtures = vec![mid_conv()];
    fixtures.push(LayerWorkload::conv2d("vgg_conv3", [1, 128, 64, 112, 112, 3, 3]).unwrap());
    fixtures.push(LayerWorkload::conv2d("vgg_conv8", [1, 512, 256, 28, 28, 3, 3]).unwrap());
    fixtures.push(load_workloads(data("gemm.json")).unwrap().remove(0));
    let mut pass = true;
    let mut detail = Vec::new();
    for w in &fixtures {
        let only = |op: Operator| {
            median(
                (0..20u64)
                    .map(|s| {
                        let mut cfg = GaConfig::default().with_seed(s);
                        cfg.enabled_ops = [op].into_iter().collect();
                        ga(w, &a, 5000, &cfg).best_score()
                    })
                    .collect(),
            )
        };
        let tile = only(Operator::MutateTile);
        let order = only(Operator::MutateOrder);
        let par = only(Operator::MutateParallelism);
        pass &= tile <= order && tile <= par;
        detail.push(format!("{}: tile/order {:.3} tile/par {:.3}", w.id(), tile / order, tile / par));
    }
    report(9, pass, detail.join("; "), t);
    assert!(pass);
}

fn legal(m: &Mapping, w: &LayerWorkload, a: &AcceleratorConfig) -> bool {
    is_legal(m, w, a).unwrap().is_legal()
}

#[test]
fn c10_property_suites() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();

    // operator legality over random problems
    let mut illegal = [0usize; 4];
    for _ in 0..10_000 {
        let (w, a, m) = support::random_case(&mut rng, 4, 8);
        let other = random_mapping(&w, &a, &mut rng, 1000).unwrap_or_else(|_| m.clone());
        let outs = [
            mutate_tile(&m, &w, &a, &mut rng),
            mutate_order(&m, &mut rng),
            mutate_parallelism(&m, &w, &a, &mut rng),
            crossover(&m, &other, &w, &a, &mut rng),
        ];
        for (k, out) in outs.iter().enumerate() {
            illegal[k] += !legal(out, &w, &a) as usize;
        }
    }
    if illegal.iter().any(|&n| n > 0) {
        failures.push(format!("illegal operator outputs {illegal:?}"));
    }

    let a = accel_b();
    let w = LayerWorkload::conv2d("c", [1, 32, 16, 14, 14, 3, 3]).unwrap();
    let mut variant = 0;
    for _ in 0..1_000 {
        let m = random_mapping(&w, &a, &mut rng, 1000).unwrap();
        let ctx = DensityContext::sparse(rng.gen_range(0.05..=1.0), rng.gen_range(0.05..=1.0));
        variant += (evaluate(&m, &w, &a, &ctx).unwrap() != evaluate(&canonicalize(&m), &w, &a, &ctx).unwrap()) as usize;
    }
    if variant > 0 {
        failures.push(format!("{variant} canonical forms changed cost"));
    }

    let mut non_monotone = 0;
    for _ in 0..500 {
        let m = random_mapping(&w, &a, &mut rng, 1000).unwrap();
        let (wd, id) = (rng.gen_range(0.05..=1.0), rng.gen_range(0.05..=1.0));
        let s = rng.gen_range(0.1..1.0);
        let at = |wd, id| {
            let ctx = DensityContext { weight_density: wd, input_density: id, metadata_overhead: 0.0 };
            evaluate(&m, &w, &a, &ctx).unwrap()
        };
        let base = at(wd, id);
        for r in [at(wd * s, id), at(wd, id * s)] {
            non_monotone += (r.energy_uj > base.energy_uj || r.latency_cycles > base.latency_cycles) as usize;
        }
    }
    if non_monotone > 0 {
        failures.push(format!("{non_monotone} density increases after sparsifying"));
    }

    let ctx = DensityContext::dense();
    let budget = SearchBudget::samples(500);
    let monotone = |tr: &SearchTrace| tr.records.windows(2).all(|p| p[1].best_score <= p[0].best_score);
    for seed in 0..3 {
        let cfg = GaConfig::default().with_seed(seed);
        let run = |k: usize| match k {
            0 => random_search(&w, &a, &ctx, budget, seed, cfg.exec).unwrap(),
            1 => pruned_random_search(&w, &a, &ctx, budget, seed, cfg.exec).unwrap(),
            _ => ga_search(&w, &a, &ctx, budget, &cfg, &[]).unwrap(),
        };
        for k in 0..3 {
            let (x, y) = (run(k), run(k));
            if !monotone(&x) || x.to_csv(true) != y.to_csv(true) || x.best != y.best {
                failures.push(format!("mapper {k} seed {seed} trace not monotone or not reproducible"));
            }
        }
        let small = &load_workloads(data("oracle_small.json")).unwrap()[seed as usize];
        let x = exhaustive_search(small, &a, &ctx, DEFAULT_ORACLE_CAP, cfg.exec).unwrap();
        let y = exhaustive_search(small, &a, &ctx, DEFAULT_ORACLE_CAP, cfg.exec).unwrap();
        if x != y {
            failures.push(format!("exhaustive search on {} not reproducible", small.id()));
        }
    }

    let pass = failures.is_empty() && t.elapsed().as_secs() < 600;
    let detail = if failures.is_empty() { "all suites clean".to_string() } else { failures.join("; ") };
    report(10, pass, detail, t);
    assert!(pass);
}
