//! Finitely supported measures, plans between them, and atomwise Lebesgue
//! decompositions.
//!
//! Ground sets are shared behind an [`Arc`] and compared by pointer identity:
//! two measures live on the same support only if they were built from the same
//! `Arc<GroundSet>`.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
}

/// A finite point cloud in ℝⁿ with a metric.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundSet {
    points: Vec<Vec<f64>>,
    metric: Metric,
}

impl GroundSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Arc<Self>> {
        if points.is_empty() {
            return Err(UotError::Input("ground set needs at least one point".into()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(UotError::Input("points must have dimension >= 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(UotError::Input(format!(
                    "point {i} has dimension {} but point 0 has {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(UotError::Input(format!("point {i} has a non-finite coordinate")));
            }
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(UotError::Input(format!("points {j} and {i} coincide")));
                }
            }
        }
        Ok(Arc::new(GroundSet {
            points,
            metric: Metric::Euclidean,
        }))
    }

    /// Evenly spaced points on a line, convenient for tests and examples.
    pub fn line(n: usize) -> Arc<Self> {
        Self::new((0..n).map(|i| vec![i as f64]).collect()).expect("distinct points")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn distance(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(UotError::Input(format!(
                "weight {i} = {w} is not a finite nonnegative number"
            )));
        }
    }
    Ok(())
}

/// Nonnegative weights attached to the points of a ground set.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    ground: Arc<GroundSet>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    pub fn new(ground: Arc<GroundSet>, weights: impl Into<Array1<f64>>) -> Result<Self> {
        let weights = weights.into();
        if weights.len() != ground.len() {
            return Err(UotError::Structural(format!(
                "{} weights for {} points",
                weights.len(),
                ground.len()
            )));
        }
        check_weights(weights.as_slice().expect("contiguous"))?;
        Ok(DiscreteMeasure { ground, weights })
    }

    pub fn zero(ground: Arc<GroundSet>) -> Self {
        let n = ground.len();
        DiscreteMeasure {
            ground,
            weights: Array1::zeros(n),
        }
    }

    /// Unit-free shortcut: weights `w` at points `0, 1, ..., n-1` on the real line.
    pub fn on_line(weights: &[f64]) -> Result<Self> {
        Self::new(GroundSet::line(weights.len()), Array1::from(weights.to_vec()))
    }

    pub fn ground(&self) -> &Arc<GroundSet> {
        &self.ground
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn same_ground(&self, other: &DiscreteMeasure) -> bool {
        Arc::ptr_eq(&self.ground, &other.ground)
    }

    /// Same ground set, new weights.
    pub fn with_weights(&self, weights: impl Into<Array1<f64>>) -> Result<Self> {
        Self::new(self.ground.clone(), weights)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file: MeasureFile = read_json_file(path)?;
        let ground = GroundSet::new(file.points)?;
        Self::new(ground, Array1::from(file.weights))
    }

    pub fn to_file(&self) -> MeasureFile {
        MeasureFile {
            points: self.ground.points.clone(),
            weights: self.weights.to_vec(),
        }
    }
}

/// Nonnegative matrix over pairs of support points.
#[derive(Debug, Clone)]
pub struct Plan {
    rows: Arc<GroundSet>,
    cols: Arc<GroundSet>,
    weights: Array2<f64>,
}

impl Plan {
    pub fn new(rows: Arc<GroundSet>, cols: Arc<GroundSet>, weights: Array2<f64>) -> Result<Self> {
        if weights.dim() != (rows.len(), cols.len()) {
            return Err(UotError::Structural(format!(
                "plan is {:?} but grounds have {} x {} points",
                weights.dim(),
                rows.len(),
                cols.len()
            )));
        }
        check_weights(&weights.iter().copied().collect::<Vec<_>>())?;
        Ok(Plan { rows, cols, weights })
    }

    pub fn zero(rows: Arc<GroundSet>, cols: Arc<GroundSet>) -> Self {
        let shape = (rows.len(), cols.len());
        Plan {
            rows,
            cols,
            weights: Array2::zeros(shape),
        }
    }

    pub fn rows(&self) -> &Arc<GroundSet> {
        &self.rows
    }

    pub fn cols(&self) -> &Arc<GroundSet> {
        &self.cols
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.dim()
    }

    /// True when both plans sit over the same pair of ground sets.
    pub fn same_grounds(&self, other: &Plan) -> bool {
        Arc::ptr_eq(&self.rows, &other.rows) && Arc::ptr_eq(&self.cols, &other.cols)
    }

    /// True when the plan's rows and columns are the grounds of `mu0` and `mu1`.
    pub fn spans(&self, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> bool {
        Arc::ptr_eq(&self.rows, mu0.ground()) && Arc::ptr_eq(&self.cols, mu1.ground())
    }

    pub fn with_weights(&self, weights: Array2<f64>) -> Result<Self> {
        Self::new(self.rows.clone(), self.cols.clone(), weights)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.with_weights(&self.weights * factor)
    }

    /// Reads a dense plan file and attaches it to the given row/column grounds.
    pub fn read_json(path: &Path, rows: Arc<GroundSet>, cols: Arc<GroundSet>) -> Result<Self> {
        let file: PlanFile = read_json_file(path)?;
        let weights = file.to_array(&path.display().to_string())?;
        Self::new(rows, cols, weights)
    }

    pub fn to_file(&self) -> PlanFile {
        PlanFile::from_array(&self.weights)
    }
}

/// Atomwise decomposition `measure = density · reference + singular`.
#[derive(Debug, Clone)]
pub struct LebesgueSplit {
    /// Ratio measure/reference where the reference is positive, 0 elsewhere.
    pub density: Array1<f64>,
    pub singular: DiscreteMeasure,
}

impl LebesgueSplit {
    pub fn singular_mass(&self) -> f64 {
        self.singular.mass()
    }
}

pub trait Mass {
    fn mass(&self) -> f64;
}

impl Mass for DiscreteMeasure {
    fn mass(&self) -> f64 {
        self.weights.sum()
    }
}

impl Mass for Plan {
    fn mass(&self) -> f64 {
        self.weights.sum()
    }
}

pub fn mass<M: Mass + ?Sized>(m: &M) -> f64 {
    m.mass()
}

/// Row sums (`index == 0`) or column sums (`index == 1`) of a plan.
pub fn marginal(plan: &Plan, index: usize) -> DiscreteMeasure {
    match index {
        0 => DiscreteMeasure {
            ground: plan.rows.clone(),
            weights: plan.weights.sum_axis(Axis(1)),
        },
        1 => DiscreteMeasure {
            ground: plan.cols.clone(),
            weights: plan.weights.sum_axis(Axis(0)),
        },
        _ => panic!("marginal index must be 0 or 1, got {index}"),
    }
}

/// Atomwise split of raw weight slices; shared by measures and plans.
pub(crate) fn split_weights(measure: &[f64], reference: &[f64]) -> (Vec<f64>, Vec<f64>) {
    measure
        .iter()
        .zip(reference)
        .map(|(&m, &r)| if r > 0.0 { (m / r, 0.0) } else { (0.0, m) })
        .unzip()
}

pub fn lebesgue_split(measure: &DiscreteMeasure, reference: &DiscreteMeasure) -> Result<LebesgueSplit> {
    if !measure.same_ground(reference) {
        return Err(UotError::Structural(
            "lebesgue_split: measure and reference live on different ground sets".into(),
        ));
    }
    let (density, singular) = split_weights(
        measure.weights.as_slice().expect("contiguous"),
        reference.weights.as_slice().expect("contiguous"),
    );
    Ok(LebesgueSplit {
        density: Array1::from(density),
        singular: DiscreteMeasure {
            ground: measure.ground.clone(),
            weights: Array1::from(singular),
        },
    })
}

/// Product measure `μ0 ⊗ μ1` as a plan.
pub fn product(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Plan {
    let a = mu0.weights.view().insert_axis(Axis(1));
    let b = mu1.weights.view().insert_axis(Axis(0));
    Plan {
        rows: mu0.ground.clone(),
        cols: mu1.ground.clone(),
        weights: &a * &b,
    }
}

/// On-disk form of a measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// On-disk form of a dense plan or cost matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<Vec<f64>>,
}

impl PlanFile {
    pub fn from_array(a: &Array2<f64>) -> Self {
        PlanFile {
            rows: a.nrows(),
            cols: a.ncols(),
            weights: a.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn to_array(&self, origin: &str) -> Result<Array2<f64>> {
        if self.weights.len() != self.rows {
            return Err(UotError::Input(format!(
                "{origin}: field \"weights\" has {} rows, \"rows\" says {}",
                self.weights.len(),
                self.rows
            )));
        }
        let mut out = Array2::zeros((self.rows, self.cols));
        for (i, row) in self.weights.iter().enumerate() {
            if row.len() != self.cols {
                return Err(UotError::Input(format!(
                    "{origin}: weights row {i} has {} entries, \"cols\" says {}",
                    row.len(),
                    self.cols
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

pub(crate) fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| UotError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| UotError::Parse {
        path: path.display().to_string(),
        source,
    })
}
