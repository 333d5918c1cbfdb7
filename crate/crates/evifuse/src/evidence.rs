//! Evidence core: discernment frames, simple support reports, and the
//! conflict measures the clustering engine minimizes.
//!
//! A report commits belief `bpn` to a single focal set of targets. Two
//! reports conflict only if their focal sets are disjoint; the conflict is
//! the product of their belief masses and its weight is `-ln(1 - c)`, which
//! makes weights of independent pairs additive.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames wider than this overflow the `u32` focal-set mask long before they
/// become computationally interesting.
pub const MAX_TARGETS: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum EvidenceError {
    #[error("frame must have between 1 and {MAX_TARGETS} targets, got {0}")]
    BadTargetCount(usize),
    #[error("frame labels must be unique and nonempty")]
    BadLabels,
    #[error("focal set must be nonempty")]
    EmptyFocalSet,
    #[error("report {id}: focal set {focal:#x} does not fit a frame of {targets} targets")]
    FocalOutsideFrame { id: u64, focal: u32, targets: usize },
    #[error("unknown target label {0:?}")]
    UnknownLabel(String),
    #[error("basic probability number must lie strictly between 0 and 1, got {0}")]
    BpnOutOfRange(f64),
    #[error("conflict must lie in [0, 1), got {0}")]
    ConflictOutOfRange(f64),
    #[error("report list must be nonempty")]
    NoReports,
    #[error("cluster index {cluster} out of range for {clusters} clusters")]
    ClusterOutOfRange { cluster: usize, clusters: usize },
    #[error("report {0} has no cluster assignment")]
    Unassigned(u64),
    #[error("line {line}: {message}")]
    ParseLine { line: usize, message: String },
    #[error("malformed report record: {0}")]
    Parse(String),
}

/// Frame of discernment: the closed set of targets reports can point at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    labels: Vec<String>,
}

impl Frame {
    /// Frame with generated labels `A, B, .., Z, AA, AB, ..`.
    pub fn new(target_count: usize) -> Result<Self, EvidenceError> {
        if target_count == 0 || target_count > MAX_TARGETS {
            return Err(EvidenceError::BadTargetCount(target_count));
        }
        let labels = (0..target_count).map(default_label).collect();
        Ok(Frame { labels })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self, EvidenceError> {
        if labels.is_empty() || labels.len() > MAX_TARGETS {
            return Err(EvidenceError::BadTargetCount(labels.len()));
        }
        let mut seen = labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != labels.len() || labels.iter().any(|l| l.is_empty() || l.contains(['|', ',']))
        {
            return Err(EvidenceError::BadLabels);
        }
        Ok(Frame { labels })
    }

    pub fn target_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Mask with one bit per target: the full frame.
    pub fn universe(&self) -> u32 {
        if self.labels.len() == 32 {
            u32::MAX
        } else {
            (1u32 << self.labels.len()) - 1
        }
    }

    pub fn contains(&self, focal: FocalSet) -> bool {
        focal.bits() & !self.universe() == 0
    }

    /// Accepts either `|`-separated labels (`A|C|D`) or a hex mask (`0x0D`).
    pub fn parse_focal(&self, text: &str) -> Result<FocalSet, EvidenceError> {
        let text = text.trim();
        if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
            let bits = u32::from_str_radix(hex, 16)
                .map_err(|e| EvidenceError::Parse(format!("bad hex focal set {text:?}: {e}")))?;
            let focal = FocalSet::from_bits(bits)?;
            if !self.contains(focal) {
                return Err(EvidenceError::FocalOutsideFrame {
                    id: 0,
                    focal: bits,
                    targets: self.target_count(),
                });
            }
            return Ok(focal);
        }
        let mut bits = 0u32;
        for label in text.split('|') {
            let label = label.trim();
            let idx = self
                .labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| EvidenceError::UnknownLabel(label.to_string()))?;
            bits |= 1 << idx;
        }
        FocalSet::from_bits(bits)
    }

    pub fn format_focal(&self, focal: FocalSet) -> String {
        let mut parts = Vec::new();
        for (idx, label) in self.labels.iter().enumerate() {
            if focal.contains_target(idx) {
                parts.push(label.as_str());
            }
        }
        parts.join("|")
    }
}

fn default_label(idx: usize) -> String {
    let alphabet = b'Z' - b'A' + 1;
    let (hi, lo) = (idx / alphabet as usize, idx % alphabet as usize);
    if hi == 0 {
        ((b'A' + lo as u8) as char).to_string()
    } else {
        format!("{}{}", (b'A' + hi as u8 - 1) as char, (b'A' + lo as u8) as char)
    }
}

/// Nonempty subset of frame targets, one bit per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FocalSet(u32);

impl FocalSet {
    pub fn from_bits(bits: u32) -> Result<Self, EvidenceError> {
        if bits == 0 {
            return Err(EvidenceError::EmptyFocalSet);
        }
        Ok(FocalSet(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_disjoint(self, other: FocalSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn contains_target(self, idx: usize) -> bool {
        idx < 32 && self.0 & (1 << idx) != 0
    }
}

impl fmt::Display for FocalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Simple support function: all belief mass `bpn` on one focal set, the
/// remainder on the whole frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Report {
    id: u64,
    focal: FocalSet,
    bpn: f64,
}

impl Report {
    pub fn new(frame: &Frame, id: u64, focal: FocalSet, bpn: f64) -> Result<Self, EvidenceError> {
        if !frame.contains(focal) {
            return Err(EvidenceError::FocalOutsideFrame {
                id,
                focal: focal.bits(),
                targets: frame.target_count(),
            });
        }
        if !(bpn > 0.0 && bpn < 1.0) {
            return Err(EvidenceError::BpnOutOfRange(bpn));
        }
        Ok(Report { id, focal, bpn })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn focal(&self) -> FocalSet {
        self.focal
    }

    pub fn bpn(&self) -> f64 {
        self.bpn
    }
}

/// One text record per report: `id,focal,bpn` with the focal set written as
/// labels (`A|C|D`) or a hex mask (`0x0d`).
pub fn parse_report_line(frame: &Frame, line: &str) -> Result<Report, EvidenceError> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 3 {
        return Err(EvidenceError::Parse(format!(
            "expected 3 comma-separated fields, got {}",
            fields.len()
        )));
    }
    let id: u64 = fields[0]
        .trim()
        .parse()
        .map_err(|e| EvidenceError::Parse(format!("bad report id {:?}: {e}", fields[0])))?;
    let focal = frame.parse_focal(fields[1])?;
    let bpn: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|e| EvidenceError::Parse(format!("bad belief value {:?}: {e}", fields[2])))?;
    Report::new(frame, id, focal, bpn)
}

pub fn format_report_line(frame: &Frame, report: &Report) -> String {
    format!(
        "{},{},{}",
        report.id(),
        frame.format_focal(report.focal()),
        report.bpn()
    )
}

/// Parses one report per line, skipping blank lines. Errors carry the
/// 1-based line number.
pub fn parse_reports(frame: &Frame, text: &str) -> Result<Vec<Report>, EvidenceError> {
    let mut reports = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let report =
            parse_report_line(frame, line).map_err(|e| EvidenceError::ParseLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        reports.push(report);
    }
    Ok(reports)
}

/// Assignment of report ids to clusters `0..clusters`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: BTreeMap<u64, usize>,
    clusters: usize,
}

impl Partition {
    pub fn new(clusters: usize) -> Self {
        Partition {
            assignment: BTreeMap::new(),
            clusters,
        }
    }

    pub fn assign(&mut self, id: u64, cluster: usize) -> Result<(), EvidenceError> {
        if cluster >= self.clusters {
            return Err(EvidenceError::ClusterOutOfRange {
                cluster,
                clusters: self.clusters,
            });
        }
        self.assignment.insert(id, cluster);
        Ok(())
    }

    pub fn cluster_of(&self, id: u64) -> Option<usize> {
        self.assignment.get(&id).copied()
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, usize)> + '_ {
        self.assignment.iter().map(|(&id, &c)| (id, c))
    }
}

/// Symmetric non-negative matrix of pairwise conflict weights, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl CouplingMatrix {
    pub fn zeros(dim: usize) -> Self {
        CouplingMatrix {
            dim,
            values: vec![0.0; dim * dim],
        }
    }

    /// Row-major values; must be symmetric with a zero diagonal and finite,
    /// non-negative entries.
    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self, EvidenceError> {
        if values.len() != dim * dim {
            return Err(EvidenceError::Parse(format!(
                "coupling matrix needs {} values for dim {dim}, got {}",
                dim * dim,
                values.len()
            )));
        }
        for i in 0..dim {
            for j in 0..dim {
                let v = values[i * dim + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(EvidenceError::Parse(format!(
                        "coupling [{i}][{j}] = {v} is not a finite non-negative weight"
                    )));
                }
                if values[j * dim + i] != v {
                    return Err(EvidenceError::Parse(format!(
                        "coupling matrix not symmetric at [{i}][{j}]"
                    )));
                }
            }
            if values[i * dim + i] != 0.0 {
                return Err(EvidenceError::Parse(format!(
                    "coupling diagonal [{i}][{i}] must be zero"
                )));
            }
        }
        Ok(CouplingMatrix { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Conflict between two simple support reports: the product of their masses
/// when the focal sets are disjoint, zero otherwise.
pub fn pairwise_conflict(a: &Report, b: &Report) -> f64 {
    if a.focal().is_disjoint(b.focal()) {
        a.bpn() * b.bpn()
    } else {
        0.0
    }
}

/// Weight of conflict `-ln(1 - c)`; additive over independent pairs.
pub fn weight_of_conflict(conflict: f64) -> Result<f64, EvidenceError> {
    if !(0.0..1.0).contains(&conflict) {
        return Err(EvidenceError::ConflictOutOfRange(conflict));
    }
    Ok(-(1.0 - conflict).ln())
}

/// Pairwise conflict weight; zero for compatible reports.
pub fn coupling(a: &Report, b: &Report) -> f64 {
    if a.focal().is_disjoint(b.focal()) {
        -(1.0 - a.bpn() * b.bpn()).ln()
    } else {
        0.0
    }
}

pub fn build_coupling_matrix(
    frame: &Frame,
    reports: &[Report],
) -> Result<CouplingMatrix, EvidenceError> {
    if reports.is_empty() {
        return Err(EvidenceError::NoReports);
    }
    for r in reports {
        if !frame.contains(r.focal()) {
            return Err(EvidenceError::FocalOutsideFrame {
                id: r.id(),
                focal: r.focal().bits(),
                targets: frame.target_count(),
            });
        }
    }
    let dim = reports.len();
    let mut values = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in (i + 1)..dim {
            let w = coupling(&reports[i], &reports[j]);
            values[i * dim + j] = w;
            values[j * dim + i] = w;
        }
    }
    Ok(CouplingMatrix { dim, values })
}

/// Exact mass on the empty set under unnormalized conjunctive combination of
/// the reports. Tracks the full focal-set mass map, so it captures
/// higher-order conflict that pairwise products miss.
pub fn subset_conflict(reports: &[Report]) -> f64 {
    // The whole frame acts as the absorbing "no commitment" set; an all-ones
    // mask intersects every focal set, so the frame width never matters.
    const THETA: u32 = u32::MAX;
    let mut masses: HashMap<u32, f64> = HashMap::new();
    masses.insert(THETA, 1.0);
    for r in reports {
        let mut next: HashMap<u32, f64> = HashMap::with_capacity(masses.len() * 2);
        for (&set, &mass) in &masses {
            *next.entry(set & r.focal().bits()).or_insert(0.0) += mass * r.bpn();
            *next.entry(set).or_insert(0.0) += mass * (1.0 - r.bpn());
        }
        masses = next;
    }
    masses.get(&0).copied().unwrap_or(0.0)
}

fn clusters_of<'a>(
    reports: &'a [Report],
    partition: &Partition,
) -> Result<Vec<Vec<&'a Report>>, EvidenceError> {
    let mut groups: Vec<Vec<&Report>> = vec![Vec::new(); partition.clusters()];
    for r in reports {
        let cluster = partition
            .cluster_of(r.id())
            .ok_or(EvidenceError::Unassigned(r.id()))?;
        groups[cluster].push(r);
    }
    Ok(groups)
}

/// Metaconflict of a partition: `1 - prod_clusters (1 - subset_conflict)`.
/// The quantity clustering minimizes.
pub fn metaconflict(reports: &[Report], partition: &Partition) -> Result<f64, EvidenceError> {
    let groups = clusters_of(reports, partition)?;
    let mut survive = 1.0;
    for group in &groups {
        let owned: Vec<Report> = group.iter().map(|&&r| r).collect();
        survive *= 1.0 - subset_conflict(&owned);
    }
    Ok(1.0 - survive)
}

/// Sum of pairwise conflict weights inside clusters: the additive surrogate
/// the solver works on, and the quantity the evaluation window scores.
pub fn pairwise_weight_sum(
    reports: &[Report],
    partition: &Partition,
) -> Result<f64, EvidenceError> {
    let mut total = 0.0;
    for (i, a) in reports.iter().enumerate() {
        let ca = partition
            .cluster_of(a.id())
            .ok_or(EvidenceError::Unassigned(a.id()))?;
        for b in &reports[i + 1..] {
            let cb = partition
                .cluster_of(b.id())
                .ok_or(EvidenceError::Unassigned(b.id()))?;
            if ca == cb {
                total += coupling(a, b);
            }
        }
    }
    Ok(total)
}
