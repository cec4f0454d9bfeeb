//! Linear-subspace category shape models.
//!
//! A category is described by the mean of its aligned 3D keypoint sets plus
//! the top principal directions of their variation. Any instance is then
//! `mean + basis * lambda` for a low-dimensional coefficient vector lambda.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::textio::{self, Lines, ParseError};

#[derive(Debug, Error)]
pub enum CategoryError {
    #[error("need at least 2 instances to build a model, got {0}")]
    InsufficientInstances(usize),
    #[error("instance {index} has {got} keypoints, expected {expected}")]
    InconsistentK { index: usize, expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Ordered 3D keypoints of one object instance, in the aligned object frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet3D {
    pub points: Vec<Vector3<f64>>,
    pub category: String,
}

impl KeypointSet3D {
    pub fn new(points: Vec<Vector3<f64>>, category: impl Into<String>) -> Self {
        Self { points, category: category.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Flatten to the 3K-vector `[x0 y0 z0 x1 y1 z1 ...]`.
    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(self.points.len() * 3, self.points.iter().flat_map(|p| [p.x, p.y, p.z]))
    }

    pub fn from_flat(flat: &DVector<f64>, category: impl Into<String>) -> Self {
        assert_eq!(flat.len() % 3, 0, "flat keypoint vector length must be a multiple of 3");
        let points = flat
            .as_slice()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Self { points, category: category.into() }
    }
}

/// Deformation coefficients identifying one instance within the category
/// subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub coeffs: DVector<f64>,
}

impl ShapeParams {
    pub fn zeros(b: usize) -> Self {
        Self { coeffs: DVector::zeros(b) }
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self { coeffs: DVector::from_vec(v) }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Mean shape plus orthonormal deformation basis for one object category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryModel {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    k: usize,
    category: String,
    explained: f64,
}

impl CategoryModel {
    /// Number of keypoints.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of basis vectors.
    pub fn b(&self) -> usize {
        self.basis.ncols()
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn mean_shape(&self) -> KeypointSet3D {
        KeypointSet3D::from_flat(&self.mean, self.category.clone())
    }

    /// The 3xB rows of the basis that move keypoint `k`.
    pub fn basis_rows(&self, k: usize) -> DMatrix<f64> {
        self.basis.rows(3 * k, 3).into_owned()
    }

    /// Fraction of total training variance captured by the retained basis.
    pub fn explained_variance(&self) -> f64 {
        self.explained
    }
}

// explained variance is carried alongside the retained eigenvalues; the
// truncated tail is unrecoverable from them alone
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryModelParts {
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub k: usize,
    pub category: String,
    pub explained: f64,
}

/// How many basis vectors to retain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisSize {
    /// Exactly this many directions (capped at the PCA rank bound).
    Fixed(usize),
    /// Smallest B whose retained eigenvalues reach this fraction of the
    /// total variance.
    ExplainedVariance(f64),
}

impl Default for BasisSize {
    fn default() -> Self {
        BasisSize::ExplainedVariance(0.95)
    }
}

/// PCA over mean-subtracted flattened keypoint sets.
///
/// Instances must already be mutually aligned; no registration happens here.
/// The basis comes from an SVD of the centered data matrix, columns sign-fixed
/// so the largest-magnitude entry of each is positive. Eigenvalues are sample
/// variances (divisor n-1), sorted descending.
pub fn build_category_model(
    instances: &[KeypointSet3D],
    basis_size: BasisSize,
) -> Result<CategoryModel, CategoryError> {
    let n = instances.len();
    if n < 2 {
        return Err(CategoryError::InsufficientInstances(n));
    }
    let k = instances[0].len();
    for (index, inst) in instances.iter().enumerate() {
        if inst.len() != k {
            return Err(CategoryError::InconsistentK { index, expected: k, got: inst.len() });
        }
    }
    let dim = 3 * k;
    let category = instances[0].category.clone();

    let mut mean = DVector::zeros(dim);
    for inst in instances {
        mean += inst.to_flat();
    }
    mean /= n as f64;

    // Rows of `data` are centered instances scaled so that the squared
    // singular values are sample variances.
    let scale = 1.0 / ((n - 1) as f64).sqrt();
    let mut data = DMatrix::zeros(n, dim);
    for (i, inst) in instances.iter().enumerate() {
        let centered = (inst.to_flat() - &mean) * scale;
        data.row_mut(i).copy_from(&centered.transpose());
    }

    let svd = data.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let singular = &svd.singular_values;

    let rank_bound = dim.min(n - 1);
    let variances: Vec<f64> = (0..rank_bound).map(|i| singular[i] * singular[i]).collect();
    let total: f64 = variances.iter().sum();

    let b = match basis_size {
        BasisSize::Fixed(b) => b.min(rank_bound),
        BasisSize::ExplainedVariance(floor) => {
            let mut acc = 0.0;
            let mut b = rank_bound;
            for (i, v) in variances.iter().enumerate() {
                acc += v;
                if total == 0.0 || acc >= floor * total {
                    b = i + 1;
                    break;
                }
            }
            b
        }
    };

    let mut basis = DMatrix::zeros(dim, b);
    for col in 0..b {
        let mut direction = v_t.row(col).transpose();
        // Deterministic sign: largest-magnitude entry positive.
        let lead = direction
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if direction[lead] < 0.0 {
            direction = -direction;
        }
        basis.set_column(col, &direction);
    }
    let eigenvalues = DVector::from_iterator(b, variances.iter().take(b).copied());
    let explained = if total == 0.0 { 1.0 } else { variances.iter().take(b).sum::<f64>() / total };

    Ok(CategoryModel { mean, basis, eigenvalues, k, category, explained })
}

impl CategoryModel {
    pub fn from_parts(parts: CategoryModelParts) -> Self {
        assert_eq!(parts.mean.len(), 3 * parts.k);
        assert_eq!(parts.basis.nrows(), 3 * parts.k);
        assert_eq!(parts.basis.ncols(), parts.eigenvalues.len());
        Self {
            mean: parts.mean,
            basis: parts.basis,
            eigenvalues: parts.eigenvalues,
            k: parts.k,
            category: parts.category,
            explained: parts.explained,
        }
    }
}

/// Evaluate the model at the given coefficients: `mean + basis * lambda`.
pub fn instantiate_shape(m: &CategoryModel, p: &ShapeParams) -> Result<KeypointSet3D, CategoryError> {
    if p.len() != m.b() {
        return Err(CategoryError::DimensionMismatch { expected: m.b(), got: p.len() });
    }
    let flat = &m.mean + &m.basis * &p.coeffs;
    Ok(KeypointSet3D::from_flat(&flat, m.category.clone()))
}

/// Orthogonal projection of an instance onto the basis:
/// `lambda = basis^T (s - mean)`, the least-squares coefficient fit.
pub fn fit_params(m: &CategoryModel, s: &KeypointSet3D) -> Result<ShapeParams, CategoryError> {
    if s.len() != m.k() {
        return Err(CategoryError::DimensionMismatch { expected: m.k(), got: s.len() });
    }
    let coeffs = m.basis.transpose() * (s.to_flat() - &m.mean);
    Ok(ShapeParams { coeffs })
}

const MODEL_HEADER: &str = "CATSLAM-CATEGORY-MODEL v1";
const COLLECTION_HEADER: &str = "CATSLAM-KEYPOINT-COLLECTION v1";

/// Serialize a model to the versioned text format.
pub fn write_model(m: &CategoryModel) -> String {
    let mut out = String::new();
    out.push_str(MODEL_HEADER);
    out.push('\n');
    out.push_str(&format!("category {}\n", m.category));
    out.push_str(&format!("K {}\n", m.k()));
    out.push_str(&format!("B {}\n", m.b()));
    out.push_str(&format!("explained {}\n", m.explained));
    let mut line = String::from("mean");
    textio::push_floats(&mut line, m.mean.iter().copied());
    out.push_str(&line);
    out.push('\n');
    for col in 0..m.b() {
        let mut line = format!("basis_col {col}");
        textio::push_floats(&mut line, m.basis.column(col).iter().copied());
        out.push_str(&line);
        out.push('\n');
    }
    let mut line = String::from("eigenvalues");
    textio::push_floats(&mut line, m.eigenvalues.iter().copied());
    out.push_str(&line);
    out.push('\n');
    out
}

pub fn read_model(text: &str) -> Result<CategoryModel, CategoryError> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.next_line("model header")?;
    if header != MODEL_HEADER {
        return Err(ParseError::Malformed { line: n, msg: format!("bad header `{header}`") }.into());
    }
    let (_, cat) = textio::expect_keyword(&mut lines, "category")?;
    let category = cat.first().copied().unwrap_or("unknown").to_string();
    let (ln, kv) = textio::expect_keyword(&mut lines, "K")?;
    let k = textio::parse_usize(kv[0], ln)?;
    let (ln, bv) = textio::expect_keyword(&mut lines, "B")?;
    let b = textio::parse_usize(bv[0], ln)?;
    let (ln, ev) = textio::expect_keyword(&mut lines, "explained")?;
    let explained = textio::parse_f64(ev[0], ln)?;
    let (ln, mv) = textio::expect_keyword(&mut lines, "mean")?;
    let mean_vals = textio::parse_floats(&mv, ln)?;
    if mean_vals.len() != 3 * k {
        return Err(ParseError::Malformed { line: ln, msg: format!("mean must have {} entries", 3 * k) }.into());
    }
    let mut basis = DMatrix::zeros(3 * k, b);
    for col in 0..b {
        let (ln, cv) = textio::expect_keyword(&mut lines, "basis_col")?;
        let idx = textio::parse_usize(cv[0], ln)?;
        if idx != col {
            return Err(ParseError::Malformed { line: ln, msg: format!("expected basis_col {col}") }.into());
        }
        let vals = textio::parse_floats(&cv[1..], ln)?;
        if vals.len() != 3 * k {
            return Err(ParseError::Malformed { line: ln, msg: format!("basis_col must have {} entries", 3 * k) }.into());
        }
        basis.set_column(col, &DVector::from_vec(vals));
    }
    let (ln, evv) = textio::expect_keyword(&mut lines, "eigenvalues")?;
    let eig = textio::parse_floats(&evv, ln)?;
    if eig.len() != b {
        return Err(ParseError::Malformed { line: ln, msg: format!("eigenvalues must have {b} entries") }.into());
    }
    Ok(CategoryModel::from_parts(CategoryModelParts {
        mean: DVector::from_vec(mean_vals),
        basis,
        eigenvalues: DVector::from_vec(eig),
        k,
        category,
        explained,
    }))
}

/// Serialize a training collection: one `instance` record per keypoint set,
/// each followed by K labeled points in canonical order.
pub fn write_collection(instances: &[KeypointSet3D]) -> String {
    let mut out = String::new();
    out.push_str(COLLECTION_HEADER);
    out.push('\n');
    let category = instances.first().map(|i| i.category.as_str()).unwrap_or("unknown");
    let k = instances.first().map(|i| i.len()).unwrap_or(0);
    out.push_str(&format!("category {category}\n"));
    out.push_str(&format!("K {k}\n"));
    out.push_str(&format!("count {}\n", instances.len()));
    for (i, inst) in instances.iter().enumerate() {
        out.push_str(&format!("instance {i:04}\n"));
        for (j, p) in inst.points.iter().enumerate() {
            let mut line = format!("kp{j}");
            textio::push_floats(&mut line, [p.x, p.y, p.z]);
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

/// Parse a training collection; returns instance ids alongside keypoint sets.
pub fn read_collection(text: &str) -> Result<Vec<(String, KeypointSet3D)>, CategoryError> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.next_line("collection header")?;
    if header != COLLECTION_HEADER {
        return Err(ParseError::Malformed { line: n, msg: format!("bad header `{header}`") }.into());
    }
    let (_, cat) = textio::expect_keyword(&mut lines, "category")?;
    let category = cat.first().copied().unwrap_or("unknown").to_string();
    let (ln, kv) = textio::expect_keyword(&mut lines, "K")?;
    let k = textio::parse_usize(kv[0], ln)?;
    let (ln, cv) = textio::expect_keyword(&mut lines, "count")?;
    let count = textio::parse_usize(cv[0], ln)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (_, idv) = textio::expect_keyword(&mut lines, "instance")?;
        let id = idv.first().copied().unwrap_or("").to_string();
        let mut points = Vec::with_capacity(k);
        for _ in 0..k {
            let (ln, line) = lines.next_line("keypoint record")?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 4 {
                return Err(ParseError::Malformed { line: ln, msg: "keypoint record needs `label x y z`".into() }.into());
            }
            let vals = textio::parse_floats(&tokens[1..], ln)?;
            points.push(Vector3::new(vals[0], vals[1], vals[2]));
        }
        out.push((id, KeypointSet3D::new(points, category.clone())));
    }
    Ok(out)
}
