//! Three-tier report memory.
//!
//! Reports enter a short-term FIFO whose members are reclustered on every
//! arrival. Overflow promotes the oldest short-term report into a long-term
//! FIFO where its assignment becomes permanent (the solver clamps it), and
//! long-term overflow retires reports into an unbounded history kept only
//! for evaluation. Promotion is the point of no return: a report may not
//! leave the short term without an assignment.

use std::collections::VecDeque;

use thiserror::Error;

use crate::evidence::{Frame, Partition, Report};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("short-term capacity must be at least 1")]
    NoShortTermCapacity,
    #[error("report id {id} does not advance the stream (last was {last})")]
    NonMonotonicId { id: u64, last: u64 },
    #[error("report {0} would be promoted without an assignment")]
    UnassignedPromotion(u64),
    #[error("assignments must cover short-term report {0}")]
    MissingAssignment(u64),
    #[error("assignment for {0} does not match any short-term report")]
    ForeignAssignment(u64),
    #[error("window of {requested} exceeds {assigned} assigned reports")]
    WindowTooLong { requested: usize, assigned: usize },
    #[error("report {0} in the requested window has no assignment yet")]
    UnassignedInWindow(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryConfig {
    pub short_term_capacity: usize,
    pub long_term_capacity: usize,
}

/// What the solver sees: all remembered reports in arrival order, the
/// leading `clamped` of them carrying permanent assignments.
#[derive(Debug, Clone)]
pub struct ClusteringView {
    pub reports: Vec<Report>,
    /// Permanent assignments for the first `clamps.len()` reports.
    pub clamps: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MemoryState {
    config: MemoryConfig,
    short_term: VecDeque<(Report, Option<usize>)>,
    long_term: VecDeque<(Report, usize)>,
    history: Vec<(Report, usize)>,
    last_id: Option<u64>,
}

impl MemoryState {
    pub fn new(config: MemoryConfig) -> Result<Self, MemoryError> {
        if config.short_term_capacity == 0 {
            return Err(MemoryError::NoShortTermCapacity);
        }
        Ok(MemoryState {
            config,
            short_term: VecDeque::with_capacity(config.short_term_capacity + 1),
            long_term: VecDeque::with_capacity(config.long_term_capacity + 1),
            history: Vec::new(),
            last_id: None,
        })
    }

    pub fn config(&self) -> MemoryConfig {
        self.config
    }

    /// Admits a report, cascading at most one promotion per tier. Validates
    /// before mutating, so a failed ingest leaves the state untouched.
    pub fn ingest(&mut self, report: Report) -> Result<(), MemoryError> {
        if let Some(last) = self.last_id {
            if report.id() <= last {
                return Err(MemoryError::NonMonotonicId {
                    id: report.id(),
                    last,
                });
            }
        }
        let will_promote = self.short_term.len() == self.config.short_term_capacity;
        if will_promote {
            let &(oldest, assignment) = self.short_term.front().expect("capacity is at least 1");
            if assignment.is_none() {
                return Err(MemoryError::UnassignedPromotion(oldest.id()));
            }
        }

        if will_promote {
            let (oldest, assignment) = self.short_term.pop_front().expect("checked above");
            let assignment = assignment.expect("checked above");
            if self.config.long_term_capacity == 0 {
                self.history.push((oldest, assignment));
            } else {
                if self.long_term.len() == self.config.long_term_capacity {
                    let retired = self.long_term.pop_front().expect("nonempty at capacity");
                    self.history.push(retired);
                }
                self.long_term.push_back((oldest, assignment));
            }
        }
        self.short_term.push_back((report, None));
        self.last_id = Some(report.id());
        Ok(())
    }

    /// Long-term reports first (their assignments clamp), then short-term,
    /// both in arrival order.
    pub fn clustering_view(&self) -> ClusteringView {
        let mut reports = Vec::with_capacity(self.long_term.len() + self.short_term.len());
        let mut clamps = Vec::with_capacity(self.long_term.len());
        for &(r, c) in &self.long_term {
            reports.push(r);
            clamps.push(c);
        }
        for &(r, _) in &self.short_term {
            reports.push(r);
        }
        ClusteringView { reports, clamps }
    }

    /// Replaces every short-term assignment. The partition must cover the
    /// short term exactly; long-term rows are permanent and not accepted.
    pub fn apply_assignments(&mut self, partition: &Partition) -> Result<(), MemoryError> {
        for (id, _) in partition.iter() {
            if !self.short_term.iter().any(|(r, _)| r.id() == id) {
                return Err(MemoryError::ForeignAssignment(id));
            }
        }
        for (r, _) in &self.short_term {
            if partition.cluster_of(r.id()).is_none() {
                return Err(MemoryError::MissingAssignment(r.id()));
            }
        }
        for (r, slot) in self.short_term.iter_mut() {
            *slot = partition.cluster_of(r.id());
        }
        Ok(())
    }

    /// The `length` most recent reports with their current assignments,
    /// oldest first, spanning tiers.
    pub fn assigned_window(&self, length: usize) -> Result<Vec<(Report, usize)>, MemoryError> {
        let total = self.history.len() + self.long_term.len() + self.short_term.len();
        if length > total {
            return Err(MemoryError::WindowTooLong {
                requested: length,
                assigned: total,
            });
        }
        let mut window = Vec::with_capacity(length);
        let mut skip = total - length;
        let mut push = |report: Report, assignment: Option<usize>| -> Result<(), MemoryError> {
            if skip > 0 {
                skip -= 1;
                return Ok(());
            }
            match assignment {
                Some(c) => {
                    window.push((report, c));
                    Ok(())
                }
                None => Err(MemoryError::UnassignedInWindow(report.id())),
            }
        };
        for &(r, c) in &self.history {
            push(r, Some(c))?;
        }
        for &(r, c) in &self.long_term {
            push(r, Some(c))?;
        }
        for &(r, c) in &self.short_term {
            push(r, c)?;
        }
        Ok(window)
    }

    pub fn short_term(&self) -> impl Iterator<Item = (&Report, Option<usize>)> {
        self.short_term.iter().map(|(r, c)| (r, *c))
    }

    pub fn long_term(&self) -> impl Iterator<Item = (&Report, usize)> {
        self.long_term.iter().map(|(r, c)| (r, *c))
    }

    pub fn history(&self) -> impl Iterator<Item = (&Report, usize)> {
        self.history.iter().map(|(r, c)| (r, *c))
    }

    pub fn short_term_len(&self) -> usize {
        self.short_term.len()
    }

    pub fn long_term_len(&self) -> usize {
        self.long_term.len()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn total_len(&self) -> usize {
        self.history.len() + self.long_term.len() + self.short_term.len()
    }

    /// Three CSV sections in tier order; unassigned reports show cluster -1.
    pub fn snapshot(&self, frame: &Frame) -> String {
        let mut out = String::new();
        let row = |out: &mut String, r: &Report, c: Option<usize>| {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.id(),
                frame.format_focal(r.focal()),
                r.bpn(),
                c.map_or(-1, |c| c as i64),
            ));
        };
        out.push_str("[stm]\nid,focal,bpn,cluster\n");
        for (r, c) in &self.short_term {
            row(&mut out, r, *c);
        }
        out.push_str("[ltm]\nid,focal,bpn,cluster\n");
        for (r, c) in &self.long_term {
            row(&mut out, r, Some(*c));
        }
        out.push_str("[history]\nid,focal,bpn,cluster\n");
        for (r, c) in &self.history {
            row(&mut out, r, Some(*c));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::FocalSet;

    fn frame() -> Frame {
        Frame::new(3).unwrap()
    }

    fn report(f: &Frame, id: u64) -> Report {
        Report::new(f, id, FocalSet::from_bits(0b001).unwrap(), 0.5).unwrap()
    }

    fn assign_all(mem: &mut MemoryState, cluster: usize) {
        let mut p = Partition::new(cluster + 1);
        let ids: Vec<u64> = mem.short_term().map(|(r, _)| r.id()).collect();
        for id in ids {
            p.assign(id, cluster).unwrap();
        }
        mem.apply_assignments(&p).unwrap();
    }

    #[test]
    fn ingest_fills_short_term_before_promoting() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 2,
            long_term_capacity: 1,
        })
        .unwrap();
        mem.ingest(report(&f, 1)).unwrap();
        mem.ingest(report(&f, 2)).unwrap();
        assert_eq!(mem.short_term_len(), 2);
        assert_eq!(mem.long_term_len(), 0);

        // Third arrival must push report 1 into the long term; it has no
        // assignment yet, so ingest refuses and leaves everything alone.
        assert_eq!(
            mem.ingest(report(&f, 3)).unwrap_err(),
            MemoryError::UnassignedPromotion(1)
        );
        assert_eq!(mem.short_term_len(), 2);

        assign_all(&mut mem, 0);
        mem.ingest(report(&f, 3)).unwrap();
        assert_eq!(mem.short_term_len(), 2);
        assert_eq!(mem.long_term_len(), 1);
        let promoted: Vec<u64> = mem.long_term().map(|(r, _)| r.id()).collect();
        assert_eq!(promoted, vec![1]);
    }

    #[test]
    fn overflow_cascades_one_per_tier() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 1,
            long_term_capacity: 1,
        })
        .unwrap();
        for id in 1..=4 {
            mem.ingest(report(&f, id)).unwrap();
            assign_all(&mut mem, 0);
        }
        assert_eq!(mem.short_term_len(), 1);
        assert_eq!(mem.long_term_len(), 1);
        assert_eq!(mem.history_len(), 2);
        let hist: Vec<u64> = mem.history().map(|(r, _)| r.id()).collect();
        assert_eq!(hist, vec![1, 2]);
        let ltm: Vec<u64> = mem.long_term().map(|(r, _)| r.id()).collect();
        assert_eq!(ltm, vec![3]);
        let stm: Vec<u64> = mem.short_term().map(|(r, _)| r.id()).collect();
        assert_eq!(stm, vec![4]);
    }

    #[test]
    fn zero_long_term_capacity_retires_straight_to_history() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 1,
            long_term_capacity: 0,
        })
        .unwrap();
        mem.ingest(report(&f, 1)).unwrap();
        assign_all(&mut mem, 0);
        mem.ingest(report(&f, 2)).unwrap();
        assert_eq!(mem.long_term_len(), 0);
        assert_eq!(mem.history_len(), 1);
    }

    #[test]
    fn ids_must_advance() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 4,
            long_term_capacity: 0,
        })
        .unwrap();
        mem.ingest(report(&f, 5)).unwrap();
        assert_eq!(
            mem.ingest(report(&f, 5)).unwrap_err(),
            MemoryError::NonMonotonicId { id: 5, last: 5 }
        );
        assert_eq!(
            mem.ingest(report(&f, 3)).unwrap_err(),
            MemoryError::NonMonotonicId { id: 3, last: 5 }
        );
        mem.ingest(report(&f, 6)).unwrap();
    }

    #[test]
    fn clustering_view_orders_clamped_first() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 2,
            long_term_capacity: 2,
        })
        .unwrap();
        for id in 1..=4 {
            mem.ingest(report(&f, id)).unwrap();
            let mut p = Partition::new(4);
            let ids: Vec<u64> = mem.short_term().map(|(r, _)| r.id()).collect();
            for id in ids {
                p.assign(id, id as usize - 1).unwrap();
            }
            mem.apply_assignments(&p).unwrap();
        }
        let view = mem.clustering_view();
        let ids: Vec<u64> = view.reports.iter().map(|r| r.id()).collect();
        assert_eq!(ids, vec![1, 2, 3, 4]);
        assert_eq!(view.clamps, vec![0, 1]);
    }

    #[test]
    fn apply_assignments_requires_exact_cover() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 3,
            long_term_capacity: 0,
        })
        .unwrap();
        mem.ingest(report(&f, 1)).unwrap();
        mem.ingest(report(&f, 2)).unwrap();

        let mut partial = Partition::new(2);
        partial.assign(1, 0).unwrap();
        assert_eq!(
            mem.apply_assignments(&partial).unwrap_err(),
            MemoryError::MissingAssignment(2)
        );

        let mut foreign = Partition::new(2);
        foreign.assign(1, 0).unwrap();
        foreign.assign(2, 0).unwrap();
        foreign.assign(9, 1).unwrap();
        assert_eq!(
            mem.apply_assignments(&foreign).unwrap_err(),
            MemoryError::ForeignAssignment(9)
        );

        let mut full = Partition::new(2);
        full.assign(1, 0).unwrap();
        full.assign(2, 1).unwrap();
        mem.apply_assignments(&full).unwrap();
        let got: Vec<Option<usize>> = mem.short_term().map(|(_, c)| c).collect();
        assert_eq!(got, vec![Some(0), Some(1)]);
    }

    #[test]
    fn reassignment_is_allowed_until_promotion() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 2,
            long_term_capacity: 1,
        })
        .unwrap();
        mem.ingest(report(&f, 1)).unwrap();
        assign_all(&mut mem, 0);
        assign_all(&mut mem, 1);
        let got: Vec<Option<usize>> = mem.short_term().map(|(_, c)| c).collect();
        assert_eq!(got, vec![Some(1)]);
    }

    #[test]
    fn assigned_window_spans_tiers_most_recent_last() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 1,
            long_term_capacity: 1,
        })
        .unwrap();
        for id in 1..=3 {
            mem.ingest(report(&f, id)).unwrap();
            assign_all(&mut mem, 0);
        }
        let window = mem.assigned_window(3).unwrap();
        let ids: Vec<u64> = window.iter().map(|(r, _)| r.id()).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        let short = mem.assigned_window(2).unwrap();
        let ids: Vec<u64> = short.iter().map(|(r, _)| r.id()).collect();
        assert_eq!(ids, vec![2, 3]);

        assert_eq!(
            mem.assigned_window(4).unwrap_err(),
            MemoryError::WindowTooLong {
                requested: 4,
                assigned: 3
            }
        );

        mem.ingest(report(&f, 4)).unwrap();
        assert_eq!(
            mem.assigned_window(1).unwrap_err(),
            MemoryError::UnassignedInWindow(4)
        );
    }

    #[test]
    fn snapshot_lists_three_sections() {
        let f = frame();
        let mut mem = MemoryState::new(MemoryConfig {
            short_term_capacity: 1,
            long_term_capacity: 1,
        })
        .unwrap();
        for id in 1..=3 {
            mem.ingest(report(&f, id)).unwrap();
            if id < 3 {
                assign_all(&mut mem, 0);
            }
        }
        let snap = mem.snapshot(&f);
        let lines: Vec<&str> = snap.lines().collect();
        assert_eq!(lines[0], "[stm]");
        assert_eq!(lines[1], "id,focal,bpn,cluster");
        assert_eq!(lines[2], "3,A,0.5,-1");
        assert_eq!(lines[3], "[ltm]");
        assert_eq!(lines[5], "2,A,0.5,0");
        assert_eq!(lines[6], "[history]");
        assert_eq!(lines[8], "1,A,0.5,0");
    }

    #[test]
    fn zero_short_term_capacity_is_rejected() {
        assert_eq!(
            MemoryState::new(MemoryConfig {
                short_term_capacity: 0,
                long_term_capacity: 5,
            })
            .unwrap_err(),
            MemoryError::NoShortTermCapacity
        );
    }
}
