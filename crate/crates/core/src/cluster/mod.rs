//! K-means over day-profile vectors.
//!
//! Each fit runs `restarts` independent Lloyd optimisations, each seeded with
//! k-means++ from a ChaCha8 stream derived from `(seed, restart index)`, and
//! keeps the lowest-inertia run (ties to the lowest restart index). Input points
//! are put in a canonical order before fitting, so the result does not depend
//! on the order profiles are supplied in.

mod lloyd;
mod model_io;

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use csv::{Terminator, WriterBuilder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;
use tracing::warn;

use crate::grid::{DayProfile, SlotFlag};

pub use model_io::MODEL_FORMAT_VERSION;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid k-means configuration: {0}")]
    InvalidConfig(String),
    #[error("k = {k} exceeds the number of profiles ({n})")]
    Infeasible { k: usize, n: usize },
    #[error("vector length mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("model document line {line}: {message}")]
    Format { line: usize, message: String },
}

/// How missing slots of an eligible profile enter distance computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingSlotMode {
    /// Replace each missing slot with the profile's mean over present slots.
    #[default]
    ProfileMean,
    /// Leave the slot out of every distance and centroid update for that profile.
    DropSlot,
}

impl fmt::Display for MissingSlotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingSlotMode::ProfileMean => "profile-mean",
            MissingSlotMode::DropSlot => "drop-slot",
        })
    }
}

impl FromStr for MissingSlotMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "profile-mean" => Ok(MissingSlotMode::ProfileMean),
            "drop-slot" => Ok(MissingSlotMode::DropSlot),
            other => Err(format!("unknown missing-slot mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the largest centroid displacement, in the units
    /// of the clustered values (bikes, unless normalised).
    pub tolerance: f64,
    pub missing: MissingSlotMode,
    /// Divide profile values by this station capacity before clustering.
    pub normalize_by: Option<f64>,
}

impl KmeansConfig {
    pub fn new(k: usize) -> Self {
        KmeansConfig {
            k,
            seed: 0,
            restarts: 10,
            max_iterations: 300,
            tolerance: 1e-6,
            missing: MissingSlotMode::ProfileMean,
            normalize_by: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: &str| Err(ClusterError::InvalidConfig(m.into()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return bad("tolerance must be a positive finite number");
        }
        if self.normalize_by.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("normalisation capacity must be positive");
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.normalize_by.map_or(1.0, |c| 1.0 / c)
    }
}

/// Points to cluster. `values` are complete vectors (missing slots already
/// filled); `mask`, when present, marks which slots take part in distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<Vec<f64>>,
    mask: Option<Vec<Vec<bool>>>,
}

impl Dataset {
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self, ClusterError> {
        let dims = points.first().map_or(0, Vec::len);
        for p in &points {
            if p.len() != dims {
                return Err(ClusterError::Shape { expected: dims, found: p.len() });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(ClusterError::NonFinite);
            }
        }
        Ok(Dataset { values: points, mask: None })
    }

    pub fn from_profiles(profiles: &[DayProfile], config: &KmeansConfig) -> Result<Self, ClusterError> {
        let dims = profiles.first().map_or(0, DayProfile::len);
        let mut values = Vec::with_capacity(profiles.len());
        let mut masks = Vec::with_capacity(profiles.len());
        for p in profiles {
            if p.len() != dims {
                return Err(ClusterError::Shape { expected: dims, found: p.len() });
            }
            let (v, m) = profile_vector(p, config);
            values.push(v);
            masks.push(m);
        }
        let mask = (config.missing == MissingSlotMode::DropSlot).then_some(masks);
        Ok(Dataset { values, mask })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    fn observed(&self, i: usize, d: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i][d])
    }

    fn sq_dist(&self, i: usize, centroid: &[f64]) -> f64 {
        masked_sq_dist(&self.values[i], self.mask.as_ref().map(|m| m[i].as_slice()), centroid)
    }

    /// Sum of squared distances of every point to its assigned centroid.
    pub fn cost(&self, assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
        assignments.iter().enumerate().map(|(i, &a)| self.sq_dist(i, &centroids[a])).sum()
    }

    fn permuted(&self, order: &[usize]) -> Dataset {
        Dataset {
            values: order.iter().map(|&i| self.values[i].clone()).collect(),
            mask: self.mask.as_ref().map(|m| order.iter().map(|&i| m[i].clone()).collect()),
        }
    }

    fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            lexicographic(&self.values[a], &self.values[b])
                .then_with(|| match &self.mask {
                    Some(m) => m[a].cmp(&m[b]),
                    None => Ordering::Equal,
                })
                .then(a.cmp(&b))
        });
        order
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn masked_sq_dist(point: &[f64], mask: Option<&[bool]>, centroid: &[f64]) -> f64 {
    match mask {
        None => lloyd::sq_norm(point, centroid),
        Some(m) => point
            .iter()
            .zip(centroid)
            .zip(m)
            .filter(|(_, keep)| **keep)
            .map(|((x, c), _)| (x - c) * (x - c))
            .sum(),
    }
}

/// Vector form of a profile under a config: scaled values with missing slots
/// set to the mean of the present ones, plus the presence mask.
fn profile_vector(profile: &DayProfile, config: &KmeansConfig) -> (Vec<f64>, Vec<bool>) {
    let scale = config.scale();
    let mask: Vec<bool> = profile.flags().iter().map(|f| *f != SlotFlag::Missing).collect();
    let (sum, count) = profile.present().fold((0.0, 0usize), |(s, c), (_, v)| (s + f64::from(v), c + 1));
    let fill = if count > 0 { sum / count as f64 } else { 0.0 };
    let values = profile
        .values()
        .iter()
        .zip(&mask)
        .map(|(v, present)| if *present { f64::from(*v) * scale } else { fill * scale })
        .collect();
    (values, mask)
}

/// Identity of a clustered profile, kept with the model for later cross-tabs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemberInfo {
    pub station_id: u32,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input profile, in input order.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    pub restarts_used: usize,
    pub config: KmeansConfig,
    /// Two or more centroids coincide (e.g. identical inputs with k > 1).
    pub degenerate: bool,
    /// Parallel to `assignments` when fitted from profiles; empty for raw points.
    pub members: Vec<MemberInfo>,
}

/// Objective trajectory of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub restart: usize,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn dims(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Nearest centroid and Euclidean distance for a vector; ties go to the
    /// lowest cluster index. Masked slots are ignored.
    pub fn predict_vector(&self, point: &[f64], mask: Option<&[bool]>) -> Result<(usize, f64), ClusterError> {
        let dims = self.dims();
        if point.len() != dims || mask.is_some_and(|m| m.len() != dims) {
            return Err(ClusterError::Shape { expected: dims, found: point.len() });
        }
        let (cluster, sq) = lloyd::nearest(self.centroids.iter().map(|c| masked_sq_dist(point, mask, c)));
        Ok((cluster, sq.sqrt()))
    }

    /// Objective recomputed from the stored centroids and assignments.
    pub fn recompute_inertia(&self, data: &Dataset) -> f64 {
        data.cost(&self.assignments, &self.centroids)
    }
}

pub fn fit(profiles: &[DayProfile], config: &KmeansConfig) -> Result<ClusterModel, ClusterError> {
    fit_traced(profiles, config).map(|(model, _)| model)
}

/// [`fit`] plus the per-restart objective history.
pub fn fit_traced(profiles: &[DayProfile], config: &KmeansConfig) -> Result<(ClusterModel, Vec<RunTrace>), ClusterError> {
    config.validate()?;
    let data = Dataset::from_profiles(profiles, config)?;
    let (mut model, traces) = fit_dataset(&data, config)?;
    model.members = profiles.iter().map(|p| MemberInfo { station_id: p.station_id, date: p.date }).collect();
    Ok((model, traces))
}

pub fn fit_points(points: Vec<Vec<f64>>, config: &KmeansConfig) -> Result<(ClusterModel, Vec<RunTrace>), ClusterError> {
    config.validate()?;
    fit_dataset(&Dataset::from_points(points)?, config)
}

pub fn fit_dataset(data: &Dataset, config: &KmeansConfig) -> Result<(ClusterModel, Vec<RunTrace>), ClusterError> {
    config.validate()?;
    let n = data.len();
    if n < config.k {
        return Err(ClusterError::Infeasible { k: config.k, n });
    }

    let order = data.canonical_order();
    let sorted = data.permuted(&order);
    let runs: Vec<lloyd::Run> = (0..config.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(restart as u64);
            lloyd::run(&sorted, config.k, &mut rng, config.max_iterations, config.tolerance)
        })
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.inertia.total_cmp(&b.inertia).then(i.cmp(j)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let traces = runs
        .iter()
        .enumerate()
        .map(|(restart, r)| RunTrace {
            restart,
            inertia_history: r.history.clone(),
            iterations: r.iterations,
            converged: r.converged,
        })
        .collect();

    let run = &runs[best];
    let mut assignments = vec![0; n];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = run.assignments[pos];
    }
    let degenerate = run.centroids.iter().enumerate().any(|(i, a)| run.centroids[i + 1..].iter().any(|b| a == b));
    if degenerate {
        warn!(k = config.k, "k-means produced coincident centroids; the profiles do not support this many clusters");
    }
    let model = ClusterModel {
        k: config.k,
        centroids: run.centroids.clone(),
        assignments,
        inertia: run.inertia,
        iterations: run.iterations,
        seed: config.seed,
        restarts_used: config.restarts,
        config: config.clone(),
        degenerate,
        members: Vec::new(),
    };
    Ok((model, traces))
}

/// Nearest cluster of a profile, converted the same way as the training data.
pub fn predict(profile: &DayProfile, model: &ClusterModel) -> Result<(usize, f64), ClusterError> {
    let (values, mask) = profile_vector(profile, &model.config);
    let mask = (model.config.missing == MissingSlotMode::DropSlot).then_some(mask.as_slice());
    model.predict_vector(&values, mask)
}

/// Best inertia for each k with the same seed discipline. Inertia usually falls
/// as k grows but restarts are stochastic, so monotonicity is not enforced.
pub fn inertia_sweep(
    profiles: &[DayProfile],
    ks: impl IntoIterator<Item = usize>,
    base: &KmeansConfig,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    let data = Dataset::from_profiles(profiles, base)?;
    ks.into_iter()
        .map(|k| {
            let config = KmeansConfig { k, ..base.clone() };
            fit_dataset(&data, &config).map(|(m, _)| (k, m.inertia))
        })
        .collect()
}

/// Centroid curves as `slot,time,cluster_0,..` rows for plotting.
pub fn write_centroids_csv(model: &ClusterModel, step_minutes: u32, writer: impl Write) -> std::io::Result<()> {
    let mut csv = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["slot".to_string(), "time".to_string()];
    header.extend((0..model.k).map(|c| format!("cluster_{c}")));
    csv.write_record(&header)?;
    for slot in 0..model.dims() {
        let minutes = slot as u32 * step_minutes;
        let mut row = vec![slot.to_string(), format!("{:02}:{:02}", minutes / 60, minutes % 60)];
        row.extend(model.centroids.iter().map(|c| c[slot].to_string()));
        csv.write_record(&row)?;
    }
    csv.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let (m, _) = fit_points(points(&[0.0, 2.0, 4.0]), &KmeansConfig::new(1)).unwrap();
        assert_eq!(m.centroids, vec![vec![2.0]]);
        assert_eq!(m.inertia, 8.0);
        assert_eq!(m.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn k_equals_n_is_exact() {
        let (m, _) = fit_points(points(&[3.0, -1.0, 7.5, 0.25]), &KmeansConfig::new(4)).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut sizes = m.cluster_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![1, 1, 1, 1]);
    }

    #[test]
    fn two_separated_pairs() {
        let (m, _) = fit_points(points(&[0.0, 1.0, 10.0, 11.0]), &KmeansConfig::new(2)).unwrap();
        assert_eq!(m.inertia, 1.0);
        assert_eq!(m.assignments[0], m.assignments[1]);
        assert_eq!(m.assignments[2], m.assignments[3]);
        assert_ne!(m.assignments[0], m.assignments[2]);
        let mut c: Vec<f64> = m.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            fit_points(points(&[1.0, 2.0]), &KmeansConfig::new(3)).unwrap_err(),
            ClusterError::Infeasible { k: 3, n: 2 }
        );
    }

    #[test]
    fn invalid_configs() {
        for c in [
            KmeansConfig::new(0),
            KmeansConfig::new(1).with_restarts(0),
            KmeansConfig { tolerance: 0.0, ..KmeansConfig::new(1) },
            KmeansConfig { normalize_by: Some(-2.0), ..KmeansConfig::new(1) },
        ] {
            assert!(matches!(fit_points(points(&[1.0]), &c), Err(ClusterError::InvalidConfig(_))));
        }
        assert_eq!(fit_points(vec![vec![1.0], vec![1.0, 2.0]], &KmeansConfig::new(1)).unwrap_err(), ClusterError::Shape {
            expected: 1,
            found: 2
        });
        assert_eq!(fit_points(vec![vec![f64::NAN]], &KmeansConfig::new(1)).unwrap_err(), ClusterError::NonFinite);
    }

    #[test]
    fn identical_points_are_flagged_degenerate() {
        let (m, _) = fit_points(vec![vec![4.0, 4.0]; 5], &KmeansConfig::new(3)).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.inertia, 0.0);
        assert!(m.cluster_sizes().iter().all(|s| *s >= 1));
    }

    #[test]
    fn predict_exact_and_tie() {
        let (m, _) = fit_points(points(&[0.0, 10.0, 20.0]), &KmeansConfig::new(3)).unwrap();
        let target = m.centroids[2][0];
        assert_eq!(m.predict_vector(&[target], None).unwrap(), (2, 0.0));
        let model = ClusterModel { centroids: vec![vec![0.0], vec![2.0]], k: 2, ..m.clone() };
        assert_eq!(model.predict_vector(&[1.0], None).unwrap(), (0, 1.0));
        assert_eq!(model.predict_vector(&[1.0, 2.0], None), Err(ClusterError::Shape { expected: 1, found: 2 }));
    }

    #[test]
    fn drop_slot_ignores_missing() {
        let day = NaiveDate::from_ymd_opt(2016, 9, 14).unwrap();
        use SlotFlag::*;
        let with_gap = DayProfile::new(1, day, vec![10, 0, 10], vec![Direct, Missing, Direct]).unwrap();
        let full = DayProfile::observed(1, day, vec![10, 40, 10]);
        let config = KmeansConfig { missing: MissingSlotMode::DropSlot, ..KmeansConfig::new(1) };
        let m = fit(&[with_gap.clone(), full.clone()], &config).unwrap();
        assert_eq!(m.centroids[0], vec![10.0, 40.0, 10.0]);
        assert_eq!(m.inertia, 0.0);
        assert_eq!(predict(&with_gap, &m).unwrap(), (0, 0.0));

        let mean_fill = fit(&[with_gap, full], &KmeansConfig::new(1)).unwrap();
        assert_eq!(mean_fill.centroids[0], vec![10.0, 25.0, 10.0]);
    }

    #[test]
    fn normalisation_scales_values() {
        let day = NaiveDate::from_ymd_opt(2016, 9, 14).unwrap();
        let config = KmeansConfig { normalize_by: Some(20.0), ..KmeansConfig::new(1) };
        let m = fit(&[DayProfile::observed(1, day, vec![10, 20])], &config).unwrap();
        assert_eq!(m.centroids[0], vec![0.5, 1.0]);
    }

    #[test]
    fn sweep_reaches_zero_at_n() {
        let day = NaiveDate::from_ymd_opt(2016, 9, 14).unwrap();
        let profiles: Vec<DayProfile> = (0..4).map(|i| DayProfile::observed(1, day, vec![i * 3, i])).collect();
        let base = KmeansConfig::new(1).with_seed(3);
        let sweep = inertia_sweep(&profiles, 1..=4, &base).unwrap();
        assert_eq!(sweep[0].1, fit(&profiles, &base).unwrap().inertia);
        assert_eq!(sweep[3], (4, 0.0));
    }

    #[test]
    fn centroid_csv_layout() {
        let (m, _) = fit_points(vec![vec![1.0, 2.0, 3.0]], &KmeansConfig::new(1)).unwrap();
        let mut buf = Vec::new();
        write_centroids_csv(&m, 10, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "slot,time,cluster_0\n0,00:00,1\n1,00:10,2\n2,00:20,3\n");
    }
}
