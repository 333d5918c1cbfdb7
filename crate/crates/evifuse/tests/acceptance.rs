//! Acceptance gate: one test per criterion, each printing a PASS line with
//! the measured numbers. Run with `cargo test --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evifuse::annealer::{anneal, SolverConfig, TrackCoupling};
use evifuse::evidence::{
    build_coupling_matrix, pairwise_weight_sum, subset_conflict, weight_of_conflict, FocalSet,
    Frame, Partition, Report,
};
use evifuse::harness::{
    accounting, classification_error_rate, conflict_probability, conflicting_pair_count,
    error_rate_constants, pair_count, run_config, standard_grid, sweep, window_conflict_weight,
    Dataset,
};
use evifuse::memory::MemoryConfig;
use evifuse::tracker::{Engine, EngineConfig};

fn random_report(frame: &Frame, id: u64, rng: &mut ChaCha8Rng) -> Report {
    let universe = frame.universe();
    let bits = 1 + (rng.gen::<u32>() % universe);
    let bpn = 0.05 + 0.9 * rng.gen::<f64>();
    Report::new(frame, id, FocalSet::from_bits(bits).unwrap(), bpn).unwrap()
}

#[test]
fn criterion_1_subset_pair_combinatorics() {
    assert_eq!(pair_count(7), 8001);
    assert_eq!(conflicting_pair_count(7), 966);
    let p = conflict_probability(7);
    assert!(
        (p - 0.1207).abs() <= 0.0005,
        "conflict probability {p} strays from 0.1207"
    );
    println!("criterion 1 PASS: pairs=8001 conflicting=966 probability={p:.6}");
}

#[test]
fn criterion_2_constant_chain() {
    let w = weight_of_conflict(0.25).unwrap();
    assert!((w - 0.2877).abs() <= 0.0005, "weight {w} strays from 0.2877");
    let c = error_rate_constants(7, 100);
    assert!(
        (c.expected_pair_weight - 0.0347).abs() <= 0.0005,
        "expected pair weight {}",
        c.expected_pair_weight
    );
    assert!(
        (c.pairs_per_cluster - 94.9).abs() <= 0.1,
        "pairs per cluster {}",
        c.pairs_per_cluster
    );
    assert!(
        (c.weight_per_misclassification - 3.30).abs() <= 0.01,
        "weight per misclassification {}",
        c.weight_per_misclassification
    );
    println!(
        "criterion 2 PASS: weight={w:.4} pair_weight={:.4} pairs={:.1} per_miss={:.3}",
        c.expected_pair_weight, c.pairs_per_cluster, c.weight_per_misclassification
    );
}

#[test]
fn criterion_3_protocol_accounting() {
    let plan = accounting(&standard_grid(), 10);
    assert_eq!(plan.configurations, 210);
    assert_eq!(plan.buildup_invocations, 135_100);
    assert_eq!(plan.measurement_invocations, 52_500);
    assert_eq!(plan.total_invocations(), 187_600);

    // Counters from an executed slice agree with the plan regardless of how
    // individual solves went.
    let slice = [(5, 0), (10, 5)];
    let solver = SolverConfig::for_cluster_count(7);
    let executed = sweep(&slice, &[21], &solver, false).unwrap();
    let expected = accounting(&slice, 1);
    assert_eq!(executed.buildup_invocations, expected.buildup_invocations);
    assert_eq!(
        executed.measurement_invocations,
        expected.measurement_invocations
    );
    assert_eq!(executed.total_invocations(), expected.total_invocations());
    println!("criterion 3 PASS: 210 configs, 135100 + 52500 = 187600 invocations");
}

#[test]
fn criterion_4_annealer_attains_brute_force_minimum() {
    let frame = Frame::new(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut runs = 0u32;
    let mut hits = 0u32;
    for instance in 0..50u64 {
        let n = 4 + (instance as usize % 5);
        let clusters = 2 + (instance as usize % 2);
        let reports: Vec<Report> = (0..n)
            .map(|i| random_report(&frame, i as u64 + 1, &mut rng))
            .collect();

        let mut optimum = f64::INFINITY;
        for code in 0..clusters.pow(n as u32) {
            let mut partition = Partition::new(clusters);
            let mut rest = code;
            for r in &reports {
                partition.assign(r.id(), rest % clusters).unwrap();
                rest /= clusters;
            }
            optimum = optimum.min(pairwise_weight_sum(&reports, &partition).unwrap());
        }

        let couplings = build_coupling_matrix(&frame, &reports).unwrap();
        let track = TrackCoupling::zeros(n, clusters);
        for salt in 0..2u64 {
            runs += 1;
            let config = SolverConfig {
                rng_seed: instance * 2 + salt,
                ..SolverConfig::for_cluster_count(clusters)
            };
            let Ok(outcome) = anneal(&couplings, &track, clusters, &[], &config) else {
                continue;
            };
            let mut partition = Partition::new(clusters);
            for (r, &c) in reports.iter().zip(&outcome.assignments) {
                partition.assign(r.id(), c).unwrap();
            }
            let attained = pairwise_weight_sum(&reports, &partition).unwrap();
            assert!(attained >= optimum - 1e-9, "solver beat the brute force?");
            if attained <= optimum + 1e-9 {
                hits += 1;
            }
        }
    }
    assert_eq!(runs, 100);
    assert!(
        hits >= 90,
        "only {hits}/{runs} runs attained the brute-force minimum"
    );
    println!("criterion 4 PASS: {hits}/{runs} runs optimal");
}

#[test]
fn criterion_5_clamping_and_permanence() {
    // Engine-level permanence over a 1000-step random stream.
    let frame = Frame::new(5).unwrap();
    let mut engine = Engine::new(
        frame.clone(),
        EngineConfig {
            clusters: 4,
            memory: MemoryConfig {
                short_term_capacity: 5,
                long_term_capacity: 10,
            },
            solver: SolverConfig {
                rng_seed: 7,
                ..SolverConfig::for_cluster_count(4)
            },
            prototypes: None,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut frozen: BTreeMap<u64, usize> = BTreeMap::new();
    let mut previous: BTreeSet<(usize, u64)> = BTreeSet::new();
    for step in 0..1000u64 {
        let report = random_report(&frame, step + 1, &mut rng);
        let view = engine.process_report(report).unwrap();
        let mut current: BTreeSet<(usize, u64)> = BTreeSet::new();
        for t in &view.tracks {
            for &id in &t.permanent {
                assert!(
                    current.insert((t.track, id)),
                    "id {id} appears on two tracks"
                );
            }
        }
        assert!(
            previous.is_subset(&current),
            "permanent view shrank at step {}",
            step + 1
        );
        for &(track, id) in &current {
            if let Some(&earlier) = frozen.get(&id) {
                assert_eq!(earlier, track, "permanent id {id} moved");
            } else {
                frozen.insert(id, track);
            }
        }
        previous = current;
    }
    for (r, c) in engine.memory().long_term() {
        assert_eq!(frozen[&r.id()], c);
    }
    for (r, c) in engine.memory().history() {
        assert_eq!(frozen[&r.id()], c);
    }
    assert!(engine.memory().history_len() > 900, "stream should retire most reports");

    // Solver-level clamping: clamped rows come back bit-identical.
    let mut checked = 0;
    for round in 0..100u64 {
        let n = 3 + (round as usize % 6);
        let clusters = 2 + (round as usize % 3);
        // Keep two rows free: a lone free row that is compatible with every
        // clamped report can tie forever between untouched clusters.
        let clamp_count = round as usize % (n - 1);
        let reports: Vec<Report> = (0..n)
            .map(|i| random_report(&frame, i as u64 + 1, &mut rng))
            .collect();
        let clamps: Vec<usize> = (0..clamp_count)
            .map(|_| rng.gen_range(0..clusters))
            .collect();
        let couplings = build_coupling_matrix(&frame, &reports).unwrap();
        let track = TrackCoupling::zeros(n, clusters);
        let config = SolverConfig {
            rng_seed: round,
            ..SolverConfig::for_cluster_count(clusters)
        };
        let outcome = anneal(&couplings, &track, clusters, &clamps, &config)
            .unwrap_or_else(|e| panic!("round {round} n={n} k={clusters} clamps={clamps:?}: {e:?}"));
        for (i, &clamp) in clamps.iter().enumerate() {
            let mut expected = vec![0.0; clusters];
            expected[clamp] = 1.0;
            assert_eq!(outcome.spins.row(i), &expected[..], "clamped row {i} drifted");
            assert_eq!(outcome.assignments[i], clamp);
            checked += 1;
        }
    }
    assert!(checked > 100, "clamp coverage too thin: {checked}");
    println!("criterion 5 PASS: 1000 stream steps, {checked} clamped rows bit-identical");
}

#[test]
fn criterion_6_memory_size_study() {
    let mut grid: Vec<(usize, usize)> = (20..=100)
        .step_by(5)
        .map(|stm| (stm, 100 - stm))
        .collect();
    grid.push((10, 90));
    let seeds: Vec<u64> = (101..=110).collect();
    let solver = SolverConfig::for_cluster_count(7);
    let summary = sweep(&grid, &seeds, &solver, false).unwrap();
    let record = |stm: usize, ltm: usize| {
        summary
            .records
            .iter()
            .find(|r| r.stm == stm && r.ltm == ltm)
            .unwrap()
    };

    for stm in (20..=100).step_by(5) {
        let r = record(stm, 100 - stm);
        assert!(
            r.error_pct <= 1.0,
            "stm={stm} ltm={} error {:.4}% exceeds 1%",
            r.ltm,
            r.error_pct
        );
    }
    let large_stm = record(75, 25).error_pct;
    let small_stm = record(10, 90).error_pct;
    assert!(
        large_stm < small_stm,
        "error(stm=75) {large_stm:.4}% not below error(stm=10) {small_stm:.4}%"
    );
    // Shrinking the joint memory from 100 to 90 costs only a fraction of the
    // per-dataset spread here, so this comparison is averaged over 100
    // datasets instead of 10.
    let (mut joint_100, mut joint_90) = (0.0, 0.0);
    for seed in 201..301u64 {
        let dataset = Dataset::standard(seed).unwrap();
        joint_100 += run_config(&dataset, 20, 80, &solver).unwrap().record.error_pct;
        joint_90 += run_config(&dataset, 20, 70, &solver).unwrap().record.error_pct;
    }
    joint_100 /= 100.0;
    joint_90 /= 100.0;
    assert!(
        joint_100 < joint_90,
        "error(20+80) {joint_100:.4}% not below error(20+70) {joint_90:.4}%"
    );
    let times: Vec<f64> = [20, 40, 60, 80, 100]
        .iter()
        .map(|&stm| record(stm, 100 - stm).time_s)
        .collect();
    for pair in times.windows(2) {
        assert!(
            pair[0] < pair[1],
            "solve time must grow with short-term size, got {times:?}"
        );
    }
    println!(
        "criterion 6 PASS: joint-100 errors all <= 1% (max {:.4}%); \
         err(75)={large_stm:.4}% < err(10)={small_stm:.4}%; \
         err(20+80)={joint_100:.4}% < err(20+70)={joint_90:.4}%; times {times:?}",
        (20..=100)
            .step_by(5)
            .map(|s| record(s, 100 - s).error_pct)
            .fold(0.0f64, f64::max),
    );
}

#[test]
fn criterion_7_intersecting_window_scores_zero() {
    let frame = Frame::new(7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0E);
    // Every focal set contains target A, so every pair intersects.
    let reports: Vec<Report> = (0..100)
        .map(|i| {
            let bits = 1 | (rng.gen::<u32>() & 0b111_1110);
            let bpn = 0.05 + 0.9 * rng.gen::<f64>();
            Report::new(&frame, i + 1, FocalSet::from_bits(bits).unwrap(), bpn).unwrap()
        })
        .collect();
    for _ in 0..5 {
        let window: Vec<(Report, usize)> = reports
            .iter()
            .map(|r| (*r, rng.gen_range(0..7)))
            .collect();
        let weight = window_conflict_weight(&window);
        assert_eq!(weight, 0.0);
        assert_eq!(classification_error_rate(weight, 7, 100), 0.0);
    }
    println!("criterion 7 PASS: intersecting window weighs 0 under random partitions");
}

/// Independent oracle: expand the 2^len selection product and add the mass
/// of every branch whose focal intersection is empty.
fn selection_conflict_oracle(reports: &[Report]) -> f64 {
    let mut conflict = 0.0;
    for selection in 0u32..(1 << reports.len()) {
        let mut mass = 1.0;
        let mut intersection = u32::MAX;
        for (i, r) in reports.iter().enumerate() {
            if selection & (1 << i) != 0 {
                mass *= r.bpn();
                intersection &= r.focal().bits();
            } else {
                mass *= 1.0 - r.bpn();
            }
        }
        if intersection == 0 {
            conflict += mass;
        }
    }
    conflict
}

fn for_each_multiset(universe: &[u32], len: usize, mut visit: impl FnMut(&[u32])) {
    fn recurse(universe: &[u32], start: usize, slots: usize, chosen: &mut Vec<u32>, visit: &mut impl FnMut(&[u32])) {
        if slots == 0 {
            visit(chosen);
            return;
        }
        for i in start..universe.len() {
            chosen.push(universe[i]);
            recurse(universe, i, slots - 1, chosen, visit);
            chosen.pop();
        }
    }
    recurse(universe, 0, len, &mut Vec::with_capacity(len), &mut visit);
}

#[test]
fn criterion_8_subset_conflict_matches_oracle_exhaustively() {
    const BPNS: [f64; 6] = [0.17, 0.83, 0.5, 0.31, 0.64, 0.71];
    let mut cases = 0u64;
    let mut worst = 0.0f64;
    for targets in 1..=4usize {
        let frame = Frame::new(targets).unwrap();
        let universe: Vec<u32> = (1..=frame.universe()).collect();
        for len in 0..=6 {
            for_each_multiset(&universe, len, |bits| {
                let reports: Vec<Report> = bits
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| {
                        Report::new(&frame, i as u64 + 1, FocalSet::from_bits(b).unwrap(), BPNS[i])
                            .unwrap()
                    })
                    .collect();
                let got = subset_conflict(&reports);
                let want = selection_conflict_oracle(&reports);
                let gap = (got - want).abs();
                assert!(
                    gap <= 1e-12,
                    "conflict mismatch {got} vs {want} for {bits:?} on {targets} targets"
                );
                worst = worst.max(gap);
                cases += 1;
            });
        }
    }
    assert_eq!(cases, 56_071);
    println!("criterion 8 PASS: {cases} exhaustive cases, worst gap {worst:.2e}");
}
