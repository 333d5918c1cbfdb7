//! Memory-size study harness.
//!
//! Reproduces the full experiment grid: synthetic report streams over a
//! 7-target frame, every (short-term, long-term) capacity split of the
//! 100-report evaluation window in steps of 5, and the conversion from
//! accumulated conflict weight to a classification error rate.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::annealer::{AnnealError, SolverConfig};
use crate::evidence::{
    coupling, format_report_line, parse_reports, weight_of_conflict, EvidenceError, FocalSet,
    Frame, Partition, Report,
};
use crate::memory::{MemoryConfig, MemoryError, MemoryState};
use crate::seed;
use crate::tracker::{fallback_track, solve_view, TrackerError};

/// Error metrics score the most recent 100 reports.
pub const EVALUATION_WINDOW: usize = 100;
/// Reports consumed per configuration and dataset.
pub const DATASET_SIZE: usize = 125;
/// Reports beyond the window; each one triggers a measured reclustering.
pub const MEASUREMENT_STEPS: usize = DATASET_SIZE - EVALUATION_WINDOW;
/// Mean of the uniformly drawn basic probability numbers. Kept symbolic so
/// a different generator distribution propagates through the constants.
pub const MEAN_BPN: f64 = 0.5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset holds {got} reports, the protocol needs {want}")]
    ShortDataset { got: usize, want: usize },
    #[error("cannot draw {count} distinct focal sets from a frame of {targets} targets")]
    NotEnoughSubsets { targets: usize, count: usize },
    #[error("short-term size must lie in 1..={max}, got {got}")]
    BadShortTerm { got: usize, max: usize },
    #[error("memory split {stm}+{ltm} exceeds the evaluation window {window}")]
    WindowOverflow {
        stm: usize,
        ltm: usize,
        window: usize,
    },
    #[error("sweep needs at least one dataset seed")]
    NoSeeds,
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}

/// Stream of simple support reports with distinct focal sets, uniform
/// belief masses, ids `1..=count`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub seed: u64,
    pub frame: Frame,
    pub reports: Vec<Report>,
}

impl Dataset {
    /// The study's shape: 7 targets, 125 reports.
    pub fn standard(seed: u64) -> Result<Self, HarnessError> {
        generate_dataset(seed, 7, DATASET_SIZE)
    }
}

/// Draws `count` distinct nonempty focal sets by shuffling all candidates,
/// then a bpn per report from the open unit interval.
pub fn generate_dataset(seed: u64, targets: usize, count: usize) -> Result<Dataset, HarnessError> {
    let frame = Frame::new(targets)?;
    let mut candidates: Vec<u32> = (1..=frame.universe()).collect();
    if count > candidates.len() {
        return Err(HarnessError::NotEnoughSubsets { targets, count });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(count);
    let mut reports = Vec::with_capacity(count);
    for (i, bits) in candidates.into_iter().enumerate() {
        let bpn = loop {
            let v: f64 = rng.gen();
            if v > 0.0 {
                break v;
            }
        };
        reports.push(Report::new(
            &frame,
            i as u64 + 1,
            FocalSet::from_bits(bits).expect("candidate masks are nonzero"),
            bpn,
        )?);
    }
    Ok(Dataset {
        seed,
        frame,
        reports,
    })
}

pub fn dataset_to_lines(dataset: &Dataset) -> String {
    let mut out = String::new();
    for r in &dataset.reports {
        out.push_str(&format_report_line(&dataset.frame, r));
        out.push('\n');
    }
    out
}

pub fn dataset_from_lines(seed: u64, frame: Frame, text: &str) -> Result<Dataset, HarnessError> {
    let reports = parse_reports(&frame, text)?;
    Ok(Dataset {
        seed,
        frame,
        reports,
    })
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // Exact at every step: each prefix product is itself a binomial.
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Unordered pairs of distinct nonempty subsets of a `targets`-set.
pub fn pair_count(targets: usize) -> u64 {
    let subsets = (1u64 << targets) - 1;
    binomial(subsets, 2)
}

/// Unordered pairs of disjoint nonempty subsets: for each size `j` of the
/// first set, the second set draws from the remaining `targets - j`
/// elements. Halved because disjoint pairs are never equal.
pub fn conflicting_pair_count(targets: usize) -> u64 {
    let k = targets as u64;
    let mut ordered = 0u64;
    for j in 1..=k {
        ordered += binomial(k, j) * ((1u64 << (k - j)) - 1);
    }
    ordered / 2
}

/// Probability that two distinct focal sets drawn uniformly are disjoint.
pub fn conflict_probability(targets: usize) -> f64 {
    assert!(targets >= 2, "a frame of {targets} targets has no pairs");
    conflicting_pair_count(targets) as f64 / pair_count(targets) as f64
}

/// Constants converting window conflict weight into an error rate, all
/// derived from the generator distribution and the frame size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRateConstants {
    /// Mean conflict weight of a uniformly drawn pair: the weight at the
    /// mean conflict, times the probability the pair conflicts at all.
    pub expected_pair_weight: f64,
    pub reports_per_cluster: f64,
    pub pairs_per_cluster: f64,
    /// Expected weight added by scrambling one cluster's worth of pairs.
    pub weight_per_misclassification: f64,
}

pub fn error_rate_constants(targets: usize, window: usize) -> ErrorRateConstants {
    assert!(window > 0, "evaluation window must be nonempty");
    let mean_conflict = MEAN_BPN * MEAN_BPN;
    let expected_pair_weight = weight_of_conflict(mean_conflict)
        .expect("mean conflict lies in [0,1)")
        * conflict_probability(targets);
    let reports_per_cluster = window as f64 / targets as f64;
    let pairs_per_cluster = reports_per_cluster * (reports_per_cluster - 1.0) / 2.0;
    ErrorRateConstants {
        expected_pair_weight,
        reports_per_cluster,
        pairs_per_cluster,
        weight_per_misclassification: expected_pair_weight * pairs_per_cluster,
    }
}

/// Percentage of misclassified reports implied by a window's total
/// conflict weight. Linear in the weight.
pub fn classification_error_rate(total_weight: f64, targets: usize, window: usize) -> f64 {
    let constants = error_rate_constants(targets, window);
    let per_cluster_weight = total_weight / targets as f64;
    100.0 * (per_cluster_weight / constants.weight_per_misclassification)
        / constants.reports_per_cluster
}

/// Total conflict weight between same-cluster pairs in a window.
pub fn window_conflict_weight(window: &[(Report, usize)]) -> f64 {
    let mut total = 0.0;
    for (i, (a, ca)) in window.iter().enumerate() {
        for (b, cb) in &window[i + 1..] {
            if ca == cb {
                total += coupling(a, b);
            }
        }
    }
    total
}

/// Reclustering invocations one configuration incurs per dataset:
/// build-up (initial solve plus one per arrival up to the window) and
/// measurement (one per remaining arrival).
pub fn invocations_for(stm: usize) -> (u64, u64) {
    debug_assert!((1..=EVALUATION_WINDOW).contains(&stm));
    (
        1 + (EVALUATION_WINDOW - stm) as u64,
        MEASUREMENT_STEPS as u64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accounting {
    pub configurations: u64,
    pub buildup_invocations: u64,
    pub measurement_invocations: u64,
}

impl Accounting {
    pub fn total_invocations(&self) -> u64 {
        self.buildup_invocations + self.measurement_invocations
    }
}

/// Invocation totals for a grid and a dataset count, from the protocol
/// definition alone; no solver involved.
pub fn accounting(grid: &[(usize, usize)], dataset_count: u64) -> Accounting {
    let mut buildup = 0;
    let mut measurement = 0;
    for &(stm, _) in grid {
        let (b, m) = invocations_for(stm);
        buildup += b * dataset_count;
        measurement += m * dataset_count;
    }
    Accounting {
        configurations: grid.len() as u64,
        buildup_invocations: buildup,
        measurement_invocations: measurement,
    }
}

/// All (short-term, long-term) splits of the window in steps of 5.
pub fn standard_grid() -> Vec<(usize, usize)> {
    let mut grid = Vec::new();
    let mut stm = 5;
    while stm <= EVALUATION_WINDOW {
        let mut ltm = 0;
        while stm + ltm <= EVALUATION_WINDOW {
            grid.push((stm, ltm));
            ltm += 5;
        }
        stm += 5;
    }
    grid
}

/// Aggregated result of one memory configuration.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub stm: usize,
    pub ltm: usize,
    pub error_pct: f64,
    pub time_s: f64,
    pub weight: f64,
    pub invocations: u64,
    /// Solves that fell back to greedy placement; not part of the tabular
    /// output schema.
    #[serde(skip)]
    pub failed_solves: u64,
    #[serde(skip)]
    pub datasets: u64,
}

/// One configuration against one dataset.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: SweepRecord,
    /// Window weight after each of the measured reclusterings, in arrival
    /// order (steps `101..=125` of the stream).
    pub step_weights: Vec<f64>,
    pub buildup_invocations: u64,
    pub measurement_invocations: u64,
}

/// Assigns every unassigned short-term report greedily, in arrival order,
/// each against everything already placed. Used where the protocol does not
/// solve (view of one report) and when a solve fails to converge.
fn place_unassigned_greedily(
    memory: &mut MemoryState,
    clusters: usize,
) -> Result<(), HarnessError> {
    let mut assigned: Vec<(Report, usize)> = memory.long_term().map(|(r, c)| (*r, c)).collect();
    let mut partition = Partition::new(clusters);
    let mut pending: Vec<Report> = Vec::new();
    for (r, c) in memory.short_term() {
        match c {
            Some(c) => {
                assigned.push((*r, c));
                partition.assign(r.id(), c)?;
            }
            None => pending.push(*r),
        }
    }
    for r in pending {
        let track = fallback_track(&r, assigned.iter().copied(), clusters, None);
        partition.assign(r.id(), track)?;
        assigned.push((r, track));
    }
    memory.apply_assignments(&partition)?;
    Ok(())
}

struct ProtocolRun<'a> {
    frame: &'a Frame,
    clusters: usize,
    solver: &'a SolverConfig,
    base_seed: u64,
    solves: u64,
    failed: u64,
}

impl ProtocolRun<'_> {
    /// One reclustering invocation; returns the anneal wall-clock seconds
    /// (zero for degenerate or failed solves).
    fn recluster(&mut self, memory: &mut MemoryState) -> Result<f64, HarnessError> {
        let rng_seed = seed::mix(self.base_seed, self.solves);
        self.solves += 1;
        let view = memory.clustering_view();
        if view.reports.len() < 2 {
            place_unassigned_greedily(memory, self.clusters)?;
            return Ok(0.0);
        }
        match solve_view(self.frame, &view, self.clusters, None, self.solver, rng_seed) {
            Ok(solved) => {
                let mut partition = Partition::new(self.clusters);
                let short_ids: Vec<u64> = memory.short_term().map(|(r, _)| r.id()).collect();
                for (id, cluster) in solved.assignments {
                    if short_ids.contains(&id) {
                        partition.assign(id, cluster)?;
                    }
                }
                memory.apply_assignments(&partition)?;
                Ok(solved.anneal_seconds)
            }
            Err(TrackerError::Anneal(AnnealError::NoConvergence { .. })) => {
                self.failed += 1;
                place_unassigned_greedily(memory, self.clusters)?;
                Ok(0.0)
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Runs the full protocol for one memory split on one dataset: buffer the
/// short term and cluster it once, feed reports one-by-one up to the
/// window, then measure the window weight after each of the final arrivals.
pub fn run_config(
    dataset: &Dataset,
    stm: usize,
    ltm: usize,
    solver: &SolverConfig,
) -> Result<RunOutcome, HarnessError> {
    if !(1..=EVALUATION_WINDOW).contains(&stm) {
        return Err(HarnessError::BadShortTerm {
            got: stm,
            max: EVALUATION_WINDOW,
        });
    }
    if stm + ltm > EVALUATION_WINDOW {
        return Err(HarnessError::WindowOverflow {
            stm,
            ltm,
            window: EVALUATION_WINDOW,
        });
    }
    if dataset.reports.len() < DATASET_SIZE {
        return Err(HarnessError::ShortDataset {
            got: dataset.reports.len(),
            want: DATASET_SIZE,
        });
    }

    let clusters = dataset.frame.target_count();
    let mut memory = MemoryState::new(MemoryConfig {
        short_term_capacity: stm,
        long_term_capacity: ltm,
    })?;
    let mut run = ProtocolRun {
        frame: &dataset.frame,
        clusters,
        solver,
        base_seed: seed::mix(seed::mix(dataset.seed, stm as u64), ltm as u64),
        solves: 0,
        failed: 0,
    };

    let reports = &dataset.reports[..DATASET_SIZE];
    let mut buildup: u64 = 0;
    for r in &reports[..stm] {
        memory.ingest(*r)?;
    }
    run.recluster(&mut memory)?;
    buildup += 1;
    for r in &reports[stm..EVALUATION_WINDOW] {
        memory.ingest(*r)?;
        run.recluster(&mut memory)?;
        buildup += 1;
    }

    let mut measurement: u64 = 0;
    let mut step_weights = Vec::with_capacity(MEASUREMENT_STEPS);
    let mut measured_seconds = 0.0;
    for r in &reports[EVALUATION_WINDOW..DATASET_SIZE] {
        memory.ingest(*r)?;
        measured_seconds += run.recluster(&mut memory)?;
        measurement += 1;
        step_weights.push(window_conflict_weight(
            &memory.assigned_window(EVALUATION_WINDOW)?,
        ));
    }

    let mean_weight = step_weights.iter().sum::<f64>() / step_weights.len() as f64;
    let record = SweepRecord {
        stm,
        ltm,
        error_pct: classification_error_rate(mean_weight, clusters, EVALUATION_WINDOW),
        time_s: measured_seconds / measurement as f64,
        weight: mean_weight,
        invocations: buildup + measurement,
        failed_solves: run.failed,
        datasets: 1,
    };
    Ok(RunOutcome {
        record,
        step_weights,
        buildup_invocations: buildup,
        measurement_invocations: measurement,
    })
}

/// One trace line per measured step: which configuration and dataset, the
/// stream step, and the window weight after that step's reclustering.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub stm: usize,
    pub ltm: usize,
    pub dataset: u64,
    pub step: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub records: Vec<SweepRecord>,
    pub buildup_invocations: u64,
    pub measurement_invocations: u64,
    pub traces: Vec<TraceRow>,
}

impl SweepSummary {
    pub fn total_invocations(&self) -> u64 {
        self.buildup_invocations + self.measurement_invocations
    }
}

/// Runs every grid configuration against every dataset seed, in parallel,
/// and aggregates per-configuration means across datasets. Determinism
/// comes from per-job RNG streams; results are keyed by configuration, not
/// completion order.
pub fn sweep(
    grid: &[(usize, usize)],
    dataset_seeds: &[u64],
    solver: &SolverConfig,
    collect_traces: bool,
) -> Result<SweepSummary, HarnessError> {
    if dataset_seeds.is_empty() {
        return Err(HarnessError::NoSeeds);
    }
    let datasets = dataset_seeds
        .iter()
        .map(|&s| Dataset::standard(s))
        .collect::<Result<Vec<_>, _>>()?;

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..datasets.len()).map(move |d| (g, d)))
        .collect();
    let outcomes: Vec<(usize, usize, RunOutcome)> = jobs
        .into_par_iter()
        .map(|(g, d)| {
            let (stm, ltm) = grid[g];
            run_config(&datasets[d], stm, ltm, solver).map(|out| (g, d, out))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut records: Vec<SweepRecord> = grid
        .iter()
        .map(|&(stm, ltm)| SweepRecord {
            stm,
            ltm,
            error_pct: 0.0,
            time_s: 0.0,
            weight: 0.0,
            invocations: 0,
            failed_solves: 0,
            datasets: 0,
        })
        .collect();
    let mut buildup = 0;
    let mut measurement = 0;
    let mut traces = Vec::new();
    for (g, d, out) in outcomes {
        let rec = &mut records[g];
        rec.weight += out.record.weight;
        rec.time_s += out.record.time_s;
        rec.invocations += out.record.invocations;
        rec.failed_solves += out.record.failed_solves;
        rec.datasets += 1;
        buildup += out.buildup_invocations;
        measurement += out.measurement_invocations;
        if collect_traces {
            for (i, &w) in out.step_weights.iter().enumerate() {
                traces.push(TraceRow {
                    stm: rec.stm,
                    ltm: rec.ltm,
                    dataset: datasets[d].seed,
                    step: EVALUATION_WINDOW + i + 1,
                    weight: w,
                });
            }
        }
    }
    let targets = datasets[0].frame.target_count();
    for rec in &mut records {
        let n = rec.datasets as f64;
        rec.weight /= n;
        rec.time_s /= n;
        rec.error_pct = classification_error_rate(rec.weight, targets, EVALUATION_WINDOW);
    }
    traces.sort_by_key(|t| (t.stm, t.ltm, t.dataset, t.step));
    Ok(SweepSummary {
        records,
        buildup_invocations: buildup,
        measurement_invocations: measurement,
        traces,
    })
}

pub fn records_to_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("stm,ltm,error_pct,time_s,weight,invocations\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            r.stm, r.ltm, r.error_pct, r.time_s, r.weight, r.invocations
        ));
    }
    out
}

pub fn records_to_json_lines(records: &[SweepRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn traces_to_csv(traces: &[TraceRow]) -> String {
    let mut out = String::from("config,dataset,step,weight\n");
    for t in traces {
        out.push_str(&format!(
            "{}-{},{},{},{:.6}\n",
            t.stm, t.ltm, t.dataset, t.step, t.weight
        ));
    }
    out
}
