//! Potts mean-field annealing over clamped spin matrices.
//!
//! Each report is a Potts spin: a row of cluster memberships that sums to
//! one (up to injected noise). Conflict weights act as antiferromagnetic
//! couplings, so relaxing the mean-field equations under a falling
//! temperature pushes conflicting reports into different clusters. Rows for
//! reports whose assignment is already permanent are clamped to one-hot
//! vectors and act as a fixed external field on the free rows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::evidence::CouplingMatrix;

/// Normalizer floor; a cluster abandoned by every row would otherwise zero
/// the denominator of its mean field.
const NORMALIZER_FLOOR: f64 = 1e-12;

/// Below this the temperature is numerically indistinguishable from zero
/// and the softmax is a pure argmax.
const MIN_TEMPERATURE: f64 = 1e-12;

const EIGEN_MAX_ITERATIONS: usize = 10_000;
const EIGEN_RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AnnealError {
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("{clamped} clamped rows exceed problem size {dim}")]
    BadClampCount { dim: usize, clamped: usize },
    #[error("clamp assignment {cluster} out of range for {clusters} clusters")]
    BadClampAssignment { cluster: usize, clusters: usize },
    #[error("track coupling is {rows}x{clusters}, problem needs {want_rows}x{want_clusters}")]
    BadTrackCouplingShape {
        rows: usize,
        clusters: usize,
        want_rows: usize,
        want_clusters: usize,
    },
    #[error("cluster count must be at least 2, got {0}")]
    BadClusterCount(usize),
    #[error("extreme eigenvalue estimate did not stabilize; best estimate {estimate}")]
    EigenNonConvergence { estimate: f64 },
    #[error("no saturation after {steps} temperature steps (reached {saturation:.4})")]
    NoConvergence {
        steps: usize,
        saturation: f64,
        /// Best-effort assignments of the free rows at give-up time.
        assignments: Vec<usize>,
    },
}

/// Knobs of the mean-field annealer. `for_cluster_count` picks the uniform
/// coupling that keeps clusters from collapsing at the given cluster count.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Amplitude of the uniform noise added to every updated membership.
    pub noise_amplitude: f64,
    /// Geometric cooling factor applied between temperature steps.
    pub cooling_factor: f64,
    /// Strength of the self-coupling term that discourages degenerate
    /// splits of a report's own membership.
    pub self_coupling: f64,
    /// Uniform repulsion added to every coupling; spreads reports across
    /// clusters when conflicts alone underdetermine the split.
    pub uniform_coupling: f64,
    /// Mean absolute per-row change below which a temperature step is
    /// considered relaxed.
    pub sweep_tolerance: f64,
    /// Mean squared membership above which the spins count as decided.
    pub saturation_threshold: f64,
    pub max_temperature_steps: usize,
    pub max_sweeps_per_temperature: usize,
    pub rng_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            noise_amplitude: 0.001,
            cooling_factor: 0.9,
            self_coupling: 0.5,
            uniform_coupling: 0.0,
            sweep_tolerance: 0.01,
            saturation_threshold: 0.99,
            max_temperature_steps: 500,
            max_sweeps_per_temperature: 1000,
            rng_seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn for_cluster_count(clusters: usize) -> Self {
        SolverConfig {
            uniform_coupling: default_uniform_coupling(clusters),
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), AnnealError> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(AnnealError::BadConfig(what.to_string()))
            }
        };
        check(
            self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite(),
            "noise_amplitude must be finite and non-negative",
        )?;
        check(
            self.cooling_factor > 0.0 && self.cooling_factor < 1.0,
            "cooling_factor must lie strictly between 0 and 1",
        )?;
        check(
            self.self_coupling >= 0.0 && self.self_coupling.is_finite(),
            "self_coupling must be finite and non-negative",
        )?;
        check(
            self.uniform_coupling >= 0.0 && self.uniform_coupling.is_finite(),
            "uniform_coupling must be finite and non-negative",
        )?;
        check(
            self.sweep_tolerance > 0.0,
            "sweep_tolerance must be positive",
        )?;
        check(
            self.saturation_threshold > 0.0 && self.saturation_threshold <= 1.0,
            "saturation_threshold must lie in (0, 1]",
        )?;
        check(
            self.max_temperature_steps > 0,
            "max_temperature_steps must be positive",
        )?;
        check(
            self.max_sweeps_per_temperature > 0,
            "max_sweeps_per_temperature must be positive",
        )?;
        Ok(())
    }
}

/// Uniform coupling strength by cluster count. Values are tuned per count
/// rather than fit to a curve; counts outside the table need no spreading
/// pressure.
pub fn default_uniform_coupling(clusters: usize) -> f64 {
    match clusters {
        8 => 1e-6,
        10 => 3e-7,
        11 => 3e-8,
        _ => 0.0,
    }
}

/// Membership matrix: one row per report, one column per cluster. The first
/// `clamped_rows` rows are frozen one-hot vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    rows: usize,
    clusters: usize,
    clamped_rows: usize,
    values: Vec<f64>,
}

impl SpinState {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn clamped_rows(&self) -> usize {
        self.clamped_rows
    }

    pub fn is_clamped(&self, row: usize) -> bool {
        row < self.clamped_rows
    }

    pub fn value(&self, row: usize, cluster: usize) -> f64 {
        self.values[row * self.clusters + cluster]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.clusters..(row + 1) * self.clusters]
    }

    fn set(&mut self, row: usize, cluster: usize, value: f64) {
        self.values[row * self.clusters + cluster] = value;
    }

    /// Mean squared membership; 1/K for uniform rows, 1 for one-hot rows.
    pub fn saturation(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v * v).sum();
        sum / self.rows as f64
    }

    /// Per-row argmax, lowest cluster index on ties.
    pub fn assignments(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (a, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Debug dump: `row,clamped,V_0..V_{K-1}` per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,clamped");
        for a in 0..self.clusters {
            out.push_str(&format!(",V_{a}"));
        }
        out.push('\n');
        for i in 0..self.rows {
            out.push_str(&format!("{i},{}", u8::from(self.is_clamped(i))));
            for a in 0..self.clusters {
                out.push_str(&format!(",{}", self.value(i, a)));
            }
            out.push('\n');
        }
        out
    }
}

/// External field from established tracks onto each report row, e.g. from
/// track prototypes. Zero when tracks carry no prior evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackCoupling {
    rows: usize,
    clusters: usize,
    values: Vec<f64>,
}

impl TrackCoupling {
    pub fn zeros(rows: usize, clusters: usize) -> Self {
        TrackCoupling {
            rows,
            clusters,
            values: vec![0.0; rows * clusters],
        }
    }

    pub fn from_values(
        rows: usize,
        clusters: usize,
        values: Vec<f64>,
    ) -> Result<Self, AnnealError> {
        if values.len() != rows * clusters {
            return Err(AnnealError::BadConfig(format!(
                "track coupling needs {} values for {rows}x{clusters}, got {}",
                rows * clusters,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AnnealError::BadConfig(
                "track couplings must be finite and non-negative".into(),
            ));
        }
        Ok(TrackCoupling {
            rows,
            clusters,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn at(&self, row: usize, cluster: usize) -> f64 {
        self.values[row * self.clusters + cluster]
    }

    pub fn set(&mut self, row: usize, cluster: usize, value: f64) -> Result<(), AnnealError> {
        if !value.is_finite() || value < 0.0 {
            return Err(AnnealError::BadConfig(
                "track couplings must be finite and non-negative".into(),
            ));
        }
        self.values[row * self.clusters + cluster] = value;
        Ok(())
    }
}

/// Result of a full annealing run.
#[derive(Debug, Clone)]
pub struct AnnealOutcome {
    /// Cluster per row, clamped rows included (they echo their clamp).
    pub assignments: Vec<usize>,
    pub spins: SpinState,
    pub temperature_steps: usize,
    pub total_sweeps: usize,
    pub saturation: f64,
    pub starting_temperature: f64,
}

/// Critical temperature of the linearized mean-field dynamics: the largest
/// eigenvalue magnitude of `J + alpha - gamma*I`, divided by the cluster
/// count. Annealing must start above this point or the spins freeze into
/// the uniform fixed point's basin prematurely.
pub fn critical_temperature(
    couplings: &CouplingMatrix,
    uniform_coupling: f64,
    self_coupling: f64,
    clusters: usize,
) -> Result<f64, AnnealError> {
    if clusters < 2 {
        return Err(AnnealError::BadClusterCount(clusters));
    }
    let n = couplings.dim();
    let m = |i: usize, j: usize| {
        couplings.at(i, j) + uniform_coupling - if i == j { self_coupling } else { 0.0 }
    };
    let largest_entry = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0f64, |acc, (i, j)| acc.max(m(i, j).abs()));
    if largest_entry == 0.0 {
        return Ok(0.0);
    }

    // max(-lambda_min, lambda_max) of a symmetric matrix is its spectral
    // radius, which equals sqrt(rho(M^2)). Iterating with M^2 merges the
    // +/-lambda pair that would make plain power iteration oscillate.
    let mut v: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9E37_79B9_7F4A_7C15);
        (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
    };
    normalize(&mut v);
    let mut estimate = 0.0;
    let mut buf = vec![0.0; n];
    for _ in 0..EIGEN_MAX_ITERATIONS {
        // One application of M.
        apply(&mut buf, &v, n, &m);
        let radius = norm(&buf);
        if radius <= f64::MIN_POSITIVE {
            // M annihilates v: for symmetric M that means v sits in the
            // null space; restart from a perturbed vector.
            for (i, x) in v.iter_mut().enumerate() {
                *x += 1e-3 * (i as f64 + 1.0);
            }
            normalize(&mut v);
            continue;
        }
        // Second application completes M^2 and keeps the iterate aligned
        // with the dominant eigenspace of M^2.
        let mut next = vec![0.0; n];
        apply(&mut next, &buf, n, &m);
        let scale = norm(&next);
        if scale <= f64::MIN_POSITIVE {
            // Symmetric M shares its null space with M^2, so a vanishing
            // second application means the estimate already stabilized.
            return Ok(radius / clusters as f64);
        }
        for x in &mut next {
            *x /= scale;
        }
        v = next;
        if (radius - estimate).abs() <= EIGEN_RELATIVE_TOLERANCE * radius.max(1e-300) {
            return Ok(radius / clusters as f64);
        }
        estimate = radius;
    }
    if estimate == 0.0 {
        return Ok(0.0);
    }
    Err(AnnealError::EigenNonConvergence {
        estimate: estimate / clusters as f64,
    })
}

fn apply(out: &mut [f64], v: &[f64], n: usize, m: &impl Fn(usize, usize) -> f64) {
    debug_assert_eq!(out.len(), n);
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, x) in v.iter().enumerate() {
            acc += m(i, j) * x;
        }
        *slot = acc;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let s = norm(v);
    if s > f64::MIN_POSITIVE {
        for x in v.iter_mut() {
            *x /= s;
        }
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

/// Fresh spin matrix: clamped rows one-hot per `clamp_assignments`, free
/// rows uniform plus noise so the symmetric fixed point is already broken.
pub fn initialize_spins(
    rows: usize,
    clusters: usize,
    clamp_assignments: &[usize],
    config: &SolverConfig,
    rng: &mut impl Rng,
) -> Result<SpinState, AnnealError> {
    if clusters < 2 {
        return Err(AnnealError::BadClusterCount(clusters));
    }
    if clamp_assignments.len() > rows {
        return Err(AnnealError::BadClampCount {
            dim: rows,
            clamped: clamp_assignments.len(),
        });
    }
    let mut values = vec![0.0; rows * clusters];
    for (i, &cluster) in clamp_assignments.iter().enumerate() {
        if cluster >= clusters {
            return Err(AnnealError::BadClampAssignment { cluster, clusters });
        }
        values[i * clusters + cluster] = 1.0;
    }
    let base = 1.0 / clusters as f64;
    for i in clamp_assignments.len()..rows {
        for a in 0..clusters {
            values[i * clusters + a] = base + config.noise_amplitude * rng.gen::<f64>();
        }
    }
    Ok(SpinState {
        rows,
        clusters,
        clamped_rows: clamp_assignments.len(),
        values,
    })
}

/// One serial pass over the free rows at fixed temperature. Cluster
/// normalizers are computed once from the state at sweep start; row updates
/// see the fresh values of earlier rows. Returns the mean absolute change
/// per row.
pub fn mean_field_sweep(
    state: &mut SpinState,
    couplings: &CouplingMatrix,
    track: &TrackCoupling,
    temperature: f64,
    config: &SolverConfig,
    rng: &mut impl Rng,
) -> f64 {
    let n = state.rows;
    let k = state.clusters;
    debug_assert_eq!(couplings.dim(), n);
    debug_assert_eq!((track.rows, track.clusters), (n, k));

    let t = temperature.max(MIN_TEMPERATURE);
    let mut normalizer = vec![0.0; k];
    for i in 0..n {
        for (a, norm) in normalizer.iter_mut().enumerate() {
            *norm += state.value(i, a);
        }
    }
    let load = k as f64 / n as f64;
    for norm in &mut normalizer {
        *norm = (*norm * load).max(NORMALIZER_FLOOR);
    }

    let mut field = vec![0.0; k];
    let mut fresh = vec![0.0; k];
    let mut delta = 0.0;
    for i in state.clamped_rows..n {
        field.iter_mut().for_each(|f| *f = 0.0);
        for (j, &bond) in couplings.row(i).iter().enumerate() {
            let w = bond + config.uniform_coupling;
            let row_j = state.row(j);
            for (a, f) in field.iter_mut().enumerate() {
                *f += w * row_j[a];
            }
        }
        for (a, f) in field.iter_mut().enumerate() {
            *f += track.at(i, a) + config.uniform_coupling - config.self_coupling * state.value(i, a);
            *f /= normalizer[a];
        }
        // softmax(-field / t); shifting by the minimum field keeps every
        // exponent in (-inf, 0] so nothing overflows at low temperature.
        let shift = field.iter().copied().fold(f64::INFINITY, f64::min);
        let mut z = 0.0;
        for (a, f) in field.iter().enumerate() {
            let e = (-(f - shift) / t).exp();
            fresh[a] = e;
            z += e;
        }
        for (a, e) in fresh.iter().enumerate() {
            let v = e / z + config.noise_amplitude * rng.gen::<f64>();
            delta += (v - state.value(i, a)).abs();
            state.set(i, a, v);
        }
    }
    delta / n as f64
}

/// Full annealing run: relax at the critical temperature, cool
/// geometrically, stop once the spins saturate.
pub fn anneal(
    couplings: &CouplingMatrix,
    track: &TrackCoupling,
    clusters: usize,
    clamp_assignments: &[usize],
    config: &SolverConfig,
) -> Result<AnnealOutcome, AnnealError> {
    config.validate()?;
    let n = couplings.dim();
    if n == 0 {
        return Err(AnnealError::BadConfig(
            "problem must contain at least one row".into(),
        ));
    }
    if clamp_assignments.len() > n {
        return Err(AnnealError::BadClampCount {
            dim: n,
            clamped: clamp_assignments.len(),
        });
    }
    if (track.rows, track.clusters) != (n, clusters) {
        return Err(AnnealError::BadTrackCouplingShape {
            rows: track.rows,
            clusters: track.clusters,
            want_rows: n,
            want_clusters: clusters,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut state = initialize_spins(n, clusters, clamp_assignments, config, &mut rng)?;

    // The starting point only needs to be hot enough; if the eigenvalue
    // iteration stalls, its partial estimate still serves.
    let starting_temperature = match critical_temperature(
        couplings,
        config.uniform_coupling,
        config.self_coupling,
        clusters,
    ) {
        Ok(t) => t,
        Err(AnnealError::EigenNonConvergence { estimate }) => estimate,
        Err(e) => return Err(e),
    }
    .max(MIN_TEMPERATURE);

    let mut temperature = starting_temperature;
    let mut total_sweeps = 0;
    let mut steps = 0;
    loop {
        for _ in 0..config.max_sweeps_per_temperature {
            let delta = mean_field_sweep(&mut state, couplings, track, temperature, config, &mut rng);
            total_sweeps += 1;
            if delta <= config.sweep_tolerance {
                break;
            }
        }
        steps += 1;
        let saturation = state.saturation();
        if saturation >= config.saturation_threshold {
            return Ok(AnnealOutcome {
                assignments: state.assignments(),
                temperature_steps: steps,
                total_sweeps,
                saturation,
                starting_temperature,
                spins: state,
            });
        }
        if steps >= config.max_temperature_steps {
            return Err(AnnealError::NoConvergence {
                steps,
                saturation,
                assignments: state.assignments(),
            });
        }
        temperature *= config.cooling_factor;
    }
}
