use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SaeError};

/// Scaled ICAR precision and its spectral representation.
#[derive(Clone, Debug)]
pub struct SpatialStructure {
    pub area_ids: Vec<String>,
    pub neighbors: Vec<Vec<usize>>,
    /// Scaled precision Q*.
    pub q_scaled: DMatrix<f64>,
    /// Connected components as area index lists.
    pub components: Vec<Vec<usize>>,
    /// Per-area scaling factor of its component; `None` for singletons.
    pub scale: Vec<Option<f64>>,
    /// Eigenvectors of Q* with positive eigenvalue (areas × K).
    pub(crate) basis: DMatrix<f64>,
    /// Positive eigenvalues of Q*.
    pub(crate) eigenvalues: DVector<f64>,
}

impl SpatialStructure {
    pub fn n_areas(&self) -> usize {
        self.area_ids.len()
    }

    pub fn is_singleton(&self, i: usize) -> bool {
        self.scale[i].is_none()
    }

    /// Marginal variances under the constrained generalized inverse of Q*
    /// (zero for singletons).
    pub fn marginal_variances(&self) -> Vec<f64> {
        (0..self.n_areas())
            .map(|i| {
                (0..self.eigenvalues.len())
                    .map(|k| self.basis[(i, k)].powi(2) / self.eigenvalues[k])
                    .sum()
            })
            .collect()
    }

    /// Covariance Q*⁺ restricted to the given areas.
    pub(crate) fn covariance(&self, idx: &[usize]) -> DMatrix<f64> {
        let b = self.basis.select_rows(idx);
        let scaled = DMatrix::from_fn(b.nrows(), b.ncols(), |i, k| b[(i, k)] / self.eigenvalues[k]);
        scaled * b.transpose()
    }
}

/// Reads an `area_a,area_b` edge list.
pub fn read_adjacency(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| SaeError::io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SaeError::MissingColumn(name.to_string()))
    };
    let (a, b) = (col("area_a")?, col("area_b")?);
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        edges.push((rec[a].to_string(), rec[b].to_string()));
    }
    Ok(edges)
}

/// Builds the scaled ICAR precision for `area_ids` from an edge list.
pub fn build_scaled_icar(area_ids: &[String], edges: &[(String, String)]) -> Result<SpatialStructure> {
    let n = area_ids.len();
    let index: HashMap<&str, usize> = area_ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let mut nb: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (a, b) in edges {
        let lookup = |x: &str| {
            index
                .get(x)
                .copied()
                .ok_or_else(|| SaeError::InvalidArgument(format!("adjacency names unknown area `{x}`")))
        };
        let (i, j) = (lookup(a)?, lookup(b)?);
        if i == j {
            return Err(SaeError::InvalidArgument(format!("self-loop on area `{a}`")));
        }
        nb[i].insert(j);
        nb[j].insert(i);
    }
    if nb.iter().all(|s| s.is_empty()) {
        return Err(SaeError::InvalidArgument(
            "adjacency has no edges; use the iid model".into(),
        ));
    }
    let neighbors: Vec<Vec<usize>> = nb.into_iter().map(|s| s.into_iter().collect()).collect();

    let mut comp_of = vec![usize::MAX; n];
    let mut components = Vec::new();
    for start in 0..n {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        comp_of[start] = id;
        while let Some(i) = stack.pop() {
            members.push(i);
            for &j in &neighbors[i] {
                if comp_of[j] == usize::MAX {
                    comp_of[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }

    let mut q = DMatrix::zeros(n, n);
    for (i, nbrs) in neighbors.iter().enumerate() {
        q[(i, i)] = nbrs.len() as f64;
        for &j in nbrs {
            q[(i, j)] = -1.0;
        }
    }

    let mut scale = vec![None; n];
    for members in components.iter().filter(|m| m.len() > 1) {
        let m = members.len();
        let qc = q.select_rows(members).select_columns(members);
        let jn = DMatrix::from_element(m, m, 1.0 / m as f64);
        let inv = (&qc + &jn)
            .try_inverse()
            .ok_or_else(|| SaeError::Numerical("ICAR component precision is singular".into()))?;
        let ginv = inv - jn;
        let mean_log = (0..m).map(|k| ginv[(k, k)].ln()).sum::<f64>() / m as f64;
        let factor = mean_log.exp();
        for &i in members {
            scale[i] = Some(factor);
        }
    }
    let q_scaled = DMatrix::from_fn(n, n, |i, j| match (scale[i], scale[j]) {
        (Some(s), Some(_)) => q[(i, j)] * s,
        _ => 0.0,
    });

    let eig = SymmetricEigen::new(q_scaled.clone());
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 1e-9 * max_ev).collect();
    let n_null = components.len();
    if keep.len() != n - n_null {
        return Err(SaeError::Numerical(format!(
            "ICAR spectrum has {} positive eigenvalues, expected {}",
            keep.len(),
            n - n_null
        )));
    }
    let mut basis = eig.eigenvectors.select_columns(&keep);
    // Project out component indicators so sums over components vanish to rounding.
    for members in &components {
        for k in 0..basis.ncols() {
            let mean = members.iter().map(|&i| basis[(i, k)]).sum::<f64>() / members.len() as f64;
            for &i in members {
                basis[(i, k)] -= mean;
            }
        }
    }
    let eigenvalues = DVector::from_iterator(keep.len(), keep.iter().map(|&k| eig.eigenvalues[k]));

    Ok(SpatialStructure {
        area_ids: area_ids.to_vec(),
        neighbors,
        q_scaled,
        components,
        scale,
        basis,
        eigenvalues,
    })
}
