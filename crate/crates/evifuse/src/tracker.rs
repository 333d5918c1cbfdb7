//! Incremental report-to-track engine.
//!
//! Each arriving report is ingested into memory and the short-term tier is
//! reclustered against the clamped long-term assignments. Track identity is
//! positional: cluster `a` is track `a`, optionally biased by per-track
//! prototype reports.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::annealer::{anneal, AnnealError, SolverConfig, TrackCoupling};
use crate::evidence::{build_coupling_matrix, coupling, EvidenceError, Frame, Partition, Report};
use crate::memory::{ClusteringView, MemoryConfig, MemoryError, MemoryState};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("engine needs at least 2 tracks, got {0}")]
    BadTrackCount(usize),
    #[error("got {got} prototypes for {want} tracks")]
    BadPrototypeCount { got: usize, want: usize },
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Anneal(#[from] AnnealError),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Number of tracks; also the cluster count of every solve.
    pub clusters: usize,
    pub memory: MemoryConfig,
    pub solver: SolverConfig,
    /// Optional per-track prototype reports; a report conflicting with a
    /// prototype is repelled from that track.
    pub prototypes: Option<Vec<Report>>,
}

/// Membership of one track at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrackMembers {
    pub track: usize,
    /// Ids whose assignment can no longer change (long-term and retired).
    pub permanent: Vec<u64>,
    /// Short-term ids; may move on any later step.
    pub tentative: Vec<u64>,
}

/// Snapshot of all tracks after a step, one JSON object per stream line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrackView {
    pub step: u64,
    pub tracks: Vec<TrackMembers>,
    /// Set when the step fell back to greedy placement because the solver
    /// did not converge.
    pub solver_error: Option<String>,
}

pub(crate) struct SolvedView {
    pub assignments: Vec<(u64, usize)>,
    pub anneal_seconds: f64,
}

/// One clustering solve over a memory view: couplings from pairwise
/// conflicts, long-term rows clamped, prototypes as an external field.
pub(crate) fn solve_view(
    frame: &Frame,
    view: &ClusteringView,
    clusters: usize,
    prototypes: Option<&[Report]>,
    solver: &SolverConfig,
    rng_seed: u64,
) -> Result<SolvedView, TrackerError> {
    let couplings = build_coupling_matrix(frame, &view.reports)?;
    let track = match prototypes {
        Some(protos) => {
            let mut t = TrackCoupling::zeros(view.reports.len(), clusters);
            for (i, r) in view.reports.iter().enumerate() {
                for (a, proto) in protos.iter().enumerate() {
                    t.set(i, a, coupling(r, proto))?;
                }
            }
            t
        }
        None => TrackCoupling::zeros(view.reports.len(), clusters),
    };
    let config = SolverConfig {
        rng_seed,
        ..solver.clone()
    };
    let started = Instant::now();
    let outcome = anneal(&couplings, &track, clusters, &view.clamps, &config)?;
    let anneal_seconds = started.elapsed().as_secs_f64();
    let assignments = view
        .reports
        .iter()
        .zip(outcome.assignments)
        .map(|(r, c)| (r.id(), c))
        .collect();
    Ok(SolvedView {
        assignments,
        anneal_seconds,
    })
}

/// Track that adds the least conflict weight against already-assigned
/// reports and prototypes; lowest index on ties. Track 0 for a first report.
pub(crate) fn fallback_track(
    report: &Report,
    assigned: impl Iterator<Item = (Report, usize)>,
    clusters: usize,
    prototypes: Option<&[Report]>,
) -> usize {
    let mut added = vec![0.0; clusters];
    for (other, track) in assigned {
        added[track] += coupling(report, &other);
    }
    if let Some(protos) = prototypes {
        for (a, proto) in protos.iter().enumerate() {
            added[a] += coupling(report, proto);
        }
    }
    let mut best = 0;
    for (a, &w) in added.iter().enumerate() {
        if w < added[best] {
            best = a;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Engine {
    frame: Frame,
    config: EngineConfig,
    memory: MemoryState,
    steps: u64,
    solves: u64,
}

impl Engine {
    pub fn new(frame: Frame, config: EngineConfig) -> Result<Self, TrackerError> {
        if config.clusters < 2 {
            return Err(TrackerError::BadTrackCount(config.clusters));
        }
        config.solver.validate()?;
        if let Some(protos) = &config.prototypes {
            if protos.len() != config.clusters {
                return Err(TrackerError::BadPrototypeCount {
                    got: protos.len(),
                    want: config.clusters,
                });
            }
            for p in protos {
                if !frame.contains(p.focal()) {
                    return Err(EvidenceError::FocalOutsideFrame {
                        id: p.id(),
                        focal: p.focal().bits(),
                        targets: frame.target_count(),
                    }
                    .into());
                }
            }
        }
        let memory = MemoryState::new(config.memory)?;
        Ok(Engine {
            frame,
            config,
            memory,
            steps: 0,
            solves: 0,
        })
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Ingests one report and reclusters the short term. A solver that
    /// fails to converge degrades to greedy placement of the newcomer; the
    /// error is reported in the returned view rather than aborting the
    /// stream.
    pub fn process_report(&mut self, report: Report) -> Result<TrackView, TrackerError> {
        if !self.frame.contains(report.focal()) {
            return Err(EvidenceError::FocalOutsideFrame {
                id: report.id(),
                focal: report.focal().bits(),
                targets: self.frame.target_count(),
            }
            .into());
        }
        self.memory.ingest(report)?;
        self.steps += 1;

        let view = self.memory.clustering_view();
        let mut solver_error = None;
        if view.reports.len() >= 2 {
            let rng_seed = seed::mix(self.config.solver.rng_seed, self.solves);
            self.solves += 1;
            match solve_view(
                &self.frame,
                &view,
                self.config.clusters,
                self.config.prototypes.as_deref(),
                &self.config.solver,
                rng_seed,
            ) {
                Ok(solved) => self.apply_solved(&solved)?,
                Err(TrackerError::Anneal(err @ AnnealError::NoConvergence { .. })) => {
                    solver_error = Some(err.to_string());
                    self.place_greedily(&report)?;
                }
                Err(e) => return Err(e),
            }
        } else {
            self.place_greedily(&report)?;
        }
        Ok(self.view_at(self.steps, solver_error))
    }

    fn apply_solved(&mut self, solved: &SolvedView) -> Result<(), TrackerError> {
        let mut partition = Partition::new(self.config.clusters);
        let short_ids: Vec<u64> = self.memory.short_term().map(|(r, _)| r.id()).collect();
        for &(id, cluster) in &solved.assignments {
            if short_ids.contains(&id) {
                partition
                    .assign(id, cluster)
                    .map_err(TrackerError::Evidence)?;
            }
        }
        self.memory.apply_assignments(&partition)?;
        Ok(())
    }

    /// Keeps every existing short-term assignment and places only the
    /// newcomer on the cheapest track.
    fn place_greedily(&mut self, newcomer: &Report) -> Result<(), TrackerError> {
        let mut assigned: Vec<(Report, usize)> = self
            .memory
            .long_term()
            .map(|(r, c)| (*r, c))
            .collect();
        let mut partition = Partition::new(self.config.clusters);
        for (r, slot) in self.memory.short_term() {
            if r.id() == newcomer.id() {
                continue;
            }
            let c = slot.expect("short-term members are assigned after every step");
            assigned.push((*r, c));
            partition.assign(r.id(), c).map_err(TrackerError::Evidence)?;
        }
        let track = fallback_track(
            newcomer,
            assigned.into_iter(),
            self.config.clusters,
            self.config.prototypes.as_deref(),
        );
        partition
            .assign(newcomer.id(), track)
            .map_err(TrackerError::Evidence)?;
        self.memory.apply_assignments(&partition)?;
        Ok(())
    }

    fn view_at(&self, step: u64, solver_error: Option<String>) -> TrackView {
        let mut tracks: Vec<TrackMembers> = (0..self.config.clusters)
            .map(|track| TrackMembers {
                track,
                permanent: Vec::new(),
                tentative: Vec::new(),
            })
            .collect();
        for (r, c) in self.memory.history() {
            tracks[c].permanent.push(r.id());
        }
        for (r, c) in self.memory.long_term() {
            tracks[c].permanent.push(r.id());
        }
        for (r, c) in self.memory.short_term() {
            if let Some(c) = c {
                tracks[c].tentative.push(r.id());
            }
        }
        for t in &mut tracks {
            t.permanent.sort_unstable();
            t.tentative.sort_unstable();
        }
        TrackView {
            step,
            tracks,
            solver_error,
        }
    }

    /// Current full membership, permanent and tentative.
    pub fn current_tracks(&self) -> TrackView {
        self.view_at(self.steps, None)
    }

    /// Only the irrevocable memberships.
    pub fn permanent_view(&self) -> TrackView {
        let mut view = self.view_at(self.steps, None);
        for t in &mut view.tracks {
            t.tentative.clear();
        }
        view
    }
}
