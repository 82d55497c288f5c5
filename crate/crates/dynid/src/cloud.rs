//! Parameter-cloud analysis: a common principal-component basis across the
//! pipeline stages, representative selection by centrality, dispersion, and
//! routing summaries.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::{Route, RouteRecord};

/// Pipeline stage a cloud belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    Ols,
    Sdp,
    Clie,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Ols => write!(f, "OLS"),
            Stage::Sdp => write!(f, "SDP"),
            Stage::Clie => write!(f, "CLIE"),
        }
    }
}

/// Floor applied to per-column scales so constant columns stay finite.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Column-wise standardization (mean, scale) shared across stages.
#[derive(Debug, Clone)]
pub struct Standardization {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardization {
    /// Fit on one cloud's rows (the refinement-stage cloud by convention).
    pub fn fit(rows: &[DVector<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("cannot standardize an empty cloud".into()));
        }
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = DVector::zeros(dim);
        for r in rows {
            mean += r;
        }
        mean /= n;
        let mut var = DVector::zeros(dim);
        for r in rows {
            let d = r - &mean;
            var += d.component_mul(&d);
        }
        var /= n;
        let scale = var.map(|v| v.sqrt().max(SCALE_FLOOR));
        Ok(Standardization { mean, scale })
    }

    pub fn apply(&self, row: &DVector<f64>) -> DVector<f64> {
        (row - &self.mean).component_div(&self.scale)
    }
}

/// A labeled cloud of parameter vectors in a common standardized basis.
#[derive(Debug, Clone)]
pub struct ParameterCloud {
    pub stage: Stage,
    pub labels: Vec<String>,
    /// Standardized rows.
    pub rows: Vec<DVector<f64>>,
}

impl ParameterCloud {
    pub fn new(
        stage: Stage,
        labeled: &[(String, DVector<f64>)],
        std: &Standardization,
    ) -> Self {
        ParameterCloud {
            stage,
            labels: labeled.iter().map(|(l, _)| l.clone()).collect(),
            rows: labeled.iter().map(|(_, v)| std.apply(v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Principal components of a cloud.
#[derive(Debug, Clone)]
pub struct Pca {
    /// Columns are components, ordered by descending explained variance.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    /// Per-row scores in component coordinates.
    pub scores: Vec<DVector<f64>>,
}

/// Eigen-decomposition of the cloud covariance with a deterministic sign
/// convention (largest-magnitude loading positive).
pub fn pca_fit(cloud: &ParameterCloud) -> Result<Pca> {
    if cloud.len() < 3 {
        return Err(Error::Invalid(format!(
            "PCA needs at least 3 rows, got {}",
            cloud.len()
        )));
    }
    let dim = cloud.rows[0].len();
    let n = cloud.len() as f64;
    let mut mean = DVector::zeros(dim);
    for r in &cloud.rows {
        mean += r;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for r in &cloud.rows {
        let d = r - &mean;
        cov += &d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut components = DMatrix::zeros(dim, dim);
    let mut explained = Vec::with_capacity(dim);
    for (col, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        // sign convention: the largest-magnitude loading is positive
        let mut max_i = 0;
        for i in 0..dim {
            if v[i].abs() > v[max_i].abs() {
                max_i = i;
            }
        }
        if v[max_i] < 0.0 {
            v = -v;
        }
        components.set_column(col, &v);
        explained.push(eig.eigenvalues[src].max(0.0));
    }
    let scores = cloud
        .rows
        .iter()
        .map(|r| components.transpose() * (r - &mean))
        .collect();
    Ok(Pca {
        components,
        explained_variance: explained,
        scores,
    })
}

/// Number of leading components covering at least `fraction` of the variance.
pub fn components_covering(pca: &Pca, fraction: f64) -> usize {
    let total: f64 = pca.explained_variance.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (k, v) in pca.explained_variance.iter().enumerate() {
        acc += v;
        if acc >= fraction * total {
            return k + 1;
        }
    }
    pca.explained_variance.len()
}

/// Medoid of the refinement-stage cloud in the leading principal score
/// space: the row minimizing total distance to all others, ties broken by
/// label order.
pub fn select_representative(cloud: &ParameterCloud, variance_fraction: f64) -> Result<String> {
    let pca = pca_fit(cloud)?;
    let k = components_covering(&pca, variance_fraction);
    let mut best: Option<(f64, &String)> = None;
    for i in 0..cloud.len() {
        let mut total = 0.0;
        for j in 0..cloud.len() {
            let mut d2 = 0.0;
            for c in 0..k {
                let d = pca.scores[i][c] - pca.scores[j][c];
                d2 += d * d;
            }
            total += d2.sqrt();
        }
        let better = match &best {
            None => true,
            Some((t, l)) => {
                total < *t - 1e-15 || (total <= *t + 1e-15 && cloud.labels[i] < **l)
            }
        };
        if better {
            best = Some((total, &cloud.labels[i]));
        }
    }
    Ok(best.expect("non-empty cloud").1.clone())
}

/// Mean distance to the standardized centroid.
pub fn dispersion(cloud: &ParameterCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::Invalid("dispersion needs at least 2 rows".into()));
    }
    let n = cloud.len() as f64;
    let dim = cloud.rows[0].len();
    let mut centroid = DVector::zeros(dim);
    for r in &cloud.rows {
        centroid += r;
    }
    centroid /= n;
    Ok(cloud.rows.iter().map(|r| (r - &centroid).norm()).sum::<f64>() / n)
}

/// Per-interval routing summary: (direct, projected, total).
pub fn routing_summary(records: &[RouteRecord]) -> Vec<(u32, usize, usize, usize)> {
    let mut ts: Vec<u32> = records.iter().map(|r| r.ts_ms).collect();
    ts.sort_unstable();
    ts.dedup();
    ts.into_iter()
        .map(|t| {
            let rows: Vec<&RouteRecord> = records.iter().filter(|r| r.ts_ms == t).collect();
            let direct = rows.iter().filter(|r| r.route == Route::Direct).count();
            let projected = rows.iter().filter(|r| r.route == Route::ViaProjection).count();
            (t, direct, projected, rows.len())
        })
        .collect()
}
