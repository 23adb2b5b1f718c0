//! Halfspace-representation polytopes and the set algebra the controllers
//! need: Minkowski sum, Pontryagin difference, linear images and preimages,
//! intersection, projection and containment.
//!
//! Every [`Polytope`] held by the crate is canonical: rows have unit
//! Euclidean norm, no row is implied by the others, and emptiness has been
//! decided. All operations are pure and return canonical results.
//!
//! Lower-dimensional (flat) sets are allowed throughout; an equality shows
//! up as a pair of opposite rows.

mod elimination;
pub mod export;
mod planar;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lp::{self, LpError};

/// Slack below which a row counts as implied by the others.
pub const REDUNDANCY_TOL: f64 = 1e-9;
/// Support-gap tolerance used for set equality and containment checks.
pub const SET_TOL: f64 = 1e-7;
const ZERO_ROW_TOL: f64 = 1e-12;
const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite coefficient in halfspace data")]
    NonFinite,
    #[error("{op} requires a bounded operand")]
    Unbounded { op: &'static str },
    #[error("{op} requires a nonempty operand")]
    Empty { op: &'static str },
    #[error("projection would remove every coordinate")]
    ProjectAll,
    #[error("coordinate {coord} out of range for dimension {dim}")]
    InvalidCoordinate { coord: usize, dim: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// `{x : normals * x <= offsets}`.
#[derive(Clone, Debug)]
pub struct Polytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
    dim: usize,
    empty: bool,
}

impl Polytope {
    /// Build and canonicalize `{x : a x <= b}`.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(GeometryError::DimensionMismatch {
                op: "new",
                expected: a.nrows(),
                found: b.len(),
            });
        }
        let dim = a.ncols();
        canonical(a, b, dim)
    }

    /// Build from row slices, each `a_1 .. a_dim` with a matching offset.
    pub fn from_rows(dim: usize, rows: &[Vec<f64>], offsets: &[f64]) -> Result<Self> {
        if rows.len() != offsets.len() {
            return Err(GeometryError::DimensionMismatch {
                op: "from_rows",
                expected: rows.len(),
                found: offsets.len(),
            });
        }
        let mut a = DMatrix::zeros(rows.len(), dim);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(GeometryError::DimensionMismatch {
                    op: "from_rows",
                    expected: dim,
                    found: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                a[(k, j)] = *v;
            }
        }
        Self::new(a, DVector::from_column_slice(offsets))
    }

    /// Axis-aligned box `lower <= x <= upper`.
    pub fn bounds(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(GeometryError::DimensionMismatch {
                op: "bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        let dim = lower.len();
        let mut a = DMatrix::zeros(2 * dim, dim);
        let mut b = DVector::zeros(2 * dim);
        for i in 0..dim {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = upper[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lower[i];
        }
        Self::new(a, b)
    }

    /// Symmetric box `|x_i| <= half_width_i`.
    pub fn centered_box(half_widths: &[f64]) -> Result<Self> {
        let lower: Vec<f64> = half_widths.iter().map(|h| -h).collect();
        Self::bounds(&lower, half_widths)
    }

    /// The singleton `{0}`.
    pub fn origin(dim: usize) -> Self {
        Self::bounds(&vec![0.0; dim], &vec![0.0; dim]).expect("origin is well formed")
    }

    /// The singleton `{p}`.
    pub fn point(p: &DVector<f64>) -> Self {
        Self::bounds(p.as_slice(), p.as_slice()).expect("point is well formed")
    }

    /// All of `R^dim` (no rows).
    pub fn whole_space(dim: usize) -> Self {
        Polytope {
            normals: DMatrix::zeros(0, dim),
            offsets: DVector::zeros(0),
            dim,
            empty: false,
        }
    }

    /// The empty set, stored as the contradictory pair `x_1 <= -1`, `-x_1 <= -1`.
    pub fn empty(dim: usize) -> Self {
        let mut a = DMatrix::zeros(2, dim);
        if dim > 0 {
            a[(0, 0)] = 1.0;
            a[(1, 0)] = -1.0;
        }
        Polytope {
            normals: a,
            offsets: DVector::from_element(2, -1.0),
            dim,
            empty: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn is_whole_space(&self) -> bool {
        !self.empty && self.offsets.is_empty()
    }

    /// Re-run canonicalization. Idempotent on canonical input.
    pub fn canonicalize(&self) -> Result<Self> {
        if self.empty {
            return Ok(Self::empty(self.dim));
        }
        canonical(self.normals.clone(), self.offsets.clone(), self.dim)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if self.empty || x.len() != self.dim {
            return false;
        }
        (&self.normals * x - &self.offsets).iter().all(|&s| s <= tol)
    }

    /// Largest constraint violation of `x` (negative when strictly inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        if self.offsets.is_empty() {
            return f64::NEG_INFINITY;
        }
        (&self.normals * x - &self.offsets).max()
    }

    /// `max d'x` over the set.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64> {
        self.support_point(d).map(|(v, _)| v)
    }

    /// Support value together with a maximizer.
    pub fn support_point(&self, d: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_dim("support", d.len())?;
        if self.empty {
            return Err(GeometryError::Empty { op: "support" });
        }
        match lp::maximize(&self.normals, &self.offsets, d) {
            Ok(sol) => Ok((sol.value, sol.x)),
            Err(LpError::Unbounded) => Err(GeometryError::Unbounded { op: "support" }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn is_bounded(&self) -> bool {
        if self.empty {
            return true;
        }
        self.bounding_box().is_ok()
    }

    /// Tight axis-aligned bounds `(lower, upper)`.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        if self.empty {
            return Err(GeometryError::Empty { op: "bounding_box" });
        }
        let mut lower = DVector::zeros(self.dim);
        let mut upper = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let mut e = DVector::zeros(self.dim);
            e[i] = 1.0;
            upper[i] = self.support(&e)?;
            e[i] = -1.0;
            lower[i] = -self.support(&e)?;
        }
        Ok((lower, upper))
    }

    /// Chebyshev center and radius (radius zero for flat sets).
    pub fn chebyshev_center(&self) -> Result<(DVector<f64>, f64)> {
        if self.empty {
            return Err(GeometryError::Empty {
                op: "chebyshev_center",
            });
        }
        let cap = 1e6;
        let (c, r) = lp::max_margin(&self.normals, &self.offsets, cap)?;
        if r >= cap * (1.0 - 1e-12) {
            return Err(GeometryError::Unbounded {
                op: "chebyshev_center",
            });
        }
        Ok((c, r.max(0.0)))
    }

    /// `{p + q : p in self, q in other}`.
    pub fn minkowski_sum(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim("minkowski_sum", other.dim)?;
        if self.empty || other.empty {
            return Ok(Self::empty(self.dim));
        }
        if !self.is_bounded() || !other.is_bounded() {
            return Err(GeometryError::Unbounded { op: "minkowski_sum" });
        }
        if self.is_singleton() {
            return other.translate(&self.any_point()?);
        }
        if other.is_singleton() {
            return self.translate(&other.any_point()?);
        }
        if self.dim == 2 {
            return planar::minkowski_sum(self, other);
        }
        // lift to (x, p) with p in self and x - p in other, then drop p
        let n = self.dim;
        let (mp, mq) = (self.num_rows(), other.num_rows());
        let mut a = DMatrix::zeros(mp + mq, 2 * n);
        let mut b = DVector::zeros(mp + mq);
        for k in 0..mq {
            for j in 0..n {
                a[(k, j)] = other.normals[(k, j)];
                a[(k, n + j)] = -other.normals[(k, j)];
            }
            b[k] = other.offsets[k];
        }
        for k in 0..mp {
            for j in 0..n {
                a[(mq + k, n + j)] = self.normals[(k, j)];
            }
            b[mq + k] = self.offsets[k];
        }
        let lifted = canonical(a, b, 2 * n)?;
        lifted.project_out(&(n..2 * n).collect::<Vec<_>>())
    }

    /// `{x : x + q in self for all q in other}`.
    pub fn pontryagin_diff(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim("pontryagin_diff", other.dim)?;
        if self.empty {
            return Ok(Self::empty(self.dim));
        }
        if other.empty {
            return Err(GeometryError::Empty {
                op: "pontryagin_diff",
            });
        }
        let mut b = self.offsets.clone();
        for k in 0..self.num_rows() {
            let row = self.normals.row(k).transpose();
            match other.support(&row) {
                Ok(h) => b[k] -= h,
                Err(GeometryError::Unbounded { .. }) => {
                    return Err(GeometryError::Unbounded {
                        op: "pontryagin_diff",
                    })
                }
                Err(e) => return Err(e),
            }
        }
        canonical(self.normals.clone(), b, self.dim)
    }

    /// `{M x : x in self}`.
    pub fn affine_image(&self, m: &DMatrix<f64>) -> Result<Polytope> {
        self.check_dim("affine_image", m.ncols())?;
        let out = m.nrows();
        if self.empty {
            return Ok(Self::empty(out));
        }
        if m.iter().all(|&v| v == 0.0) {
            return Ok(Self::origin(out));
        }
        if self.is_singleton() {
            return Ok(Self::point(&(m * self.any_point()?)));
        }
        if out == self.dim {
            if let Some(inv) = well_conditioned_inverse(m) {
                return canonical(&self.normals * inv, self.offsets.clone(), out);
            }
        }
        if out == 2 && self.dim == 2 && self.is_bounded() {
            return planar::affine_image(self, m);
        }
        if out == 1 {
            let row = m.row(0).transpose();
            let hi = self.support(&row);
            let lo = self.support(&(-&row));
            return match (hi, lo) {
                (Ok(h), Ok(l)) => Self::bounds(&[-l], &[h]),
                (Ok(h), Err(GeometryError::Unbounded { .. })) => {
                    Self::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, h))
                }
                (Err(GeometryError::Unbounded { .. }), Ok(l)) => {
                    Self::new(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, l))
                }
                (Err(GeometryError::Unbounded { .. }), Err(GeometryError::Unbounded { .. })) => {
                    Ok(Self::whole_space(1))
                }
                (Err(e), _) | (_, Err(e)) => Err(e),
            };
        }
        // lift to (y, x) with y = M x and x in self, then drop x
        let n = self.dim;
        let rows = self.num_rows();
        let mut a = DMatrix::zeros(2 * out + rows, out + n);
        let mut b = DVector::zeros(2 * out + rows);
        for i in 0..out {
            a[(2 * i, i)] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
            for j in 0..n {
                a[(2 * i, out + j)] = -m[(i, j)];
                a[(2 * i + 1, out + j)] = m[(i, j)];
            }
        }
        for k in 0..rows {
            for j in 0..n {
                a[(2 * out + k, out + j)] = self.normals[(k, j)];
            }
            b[2 * out + k] = self.offsets[k];
        }
        let lifted = canonical(a, b, out + n)?;
        lifted.project_out(&(out..out + n).collect::<Vec<_>>())
    }

    /// `{x : M x in self}`.
    pub fn preimage(&self, m: &DMatrix<f64>) -> Result<Polytope> {
        self.check_dim("preimage", m.nrows())?;
        if self.empty {
            return Ok(Self::empty(m.ncols()));
        }
        canonical(&self.normals * m, self.offsets.clone(), m.ncols())
    }

    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim("intersect", other.dim)?;
        if self.empty || other.empty {
            return Ok(Self::empty(self.dim));
        }
        let a = stack_rows(&self.normals, &other.normals);
        let b = stack_vec(&self.offsets, &other.offsets);
        canonical(a, b, self.dim)
    }

    /// Orthogonal projection that removes the listed coordinates.
    pub fn project_out(&self, coords: &[usize]) -> Result<Polytope> {
        let mut sorted: Vec<usize> = coords.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&bad) = sorted.iter().find(|&&c| c >= self.dim) {
            return Err(GeometryError::InvalidCoordinate {
                coord: bad,
                dim: self.dim,
            });
        }
        if sorted.len() == self.dim {
            return Err(GeometryError::ProjectAll);
        }
        let remaining = self.dim - sorted.len();
        if self.empty {
            return Ok(Self::empty(remaining));
        }
        elimination::project_out(self, &sorted)
    }

    /// Containment test `self ⊆ other`: every row of `other` has support gap at most `tol`.
    pub fn is_subset(&self, other: &Polytope, tol: f64) -> Result<bool> {
        self.check_dim("is_subset", other.dim)?;
        if self.empty {
            return Ok(true);
        }
        if other.empty {
            return Ok(false);
        }
        for k in 0..other.num_rows() {
            let row = other.normals.row(k).transpose();
            match self.support(&row) {
                Ok(h) if h - other.offsets[k] <= tol => {}
                Ok(_) | Err(GeometryError::Unbounded { .. }) => return Ok(false),
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }

    /// Bidirectional containment at `tol`.
    pub fn set_eq(&self, other: &Polytope, tol: f64) -> Result<bool> {
        Ok(self.is_subset(other, tol)? && other.is_subset(self, tol)?)
    }

    /// `{alpha x : x in self}` for `alpha > 0`.
    pub fn scale(&self, alpha: f64) -> Polytope {
        assert!(alpha > 0.0, "scale factor must be positive");
        let mut out = self.clone();
        if !self.empty {
            out.offsets *= alpha;
        }
        out
    }

    /// `{x + v : x in self}`.
    pub fn translate(&self, v: &DVector<f64>) -> Result<Polytope> {
        self.check_dim("translate", v.len())?;
        let mut out = self.clone();
        if !self.empty {
            out.offsets += &self.normals * v;
        }
        Ok(out)
    }

    /// `self × other`.
    pub fn cartesian_product(&self, other: &Polytope) -> Polytope {
        let dim = self.dim + other.dim;
        if self.empty || other.empty {
            return Self::empty(dim);
        }
        let (m1, m2) = (self.num_rows(), other.num_rows());
        let mut a = DMatrix::zeros(m1 + m2, dim);
        a.view_mut((0, 0), (m1, self.dim)).copy_from(&self.normals);
        a.view_mut((m1, self.dim), (m2, other.dim)).copy_from(&other.normals);
        Polytope {
            normals: a,
            offsets: stack_vec(&self.offsets, &other.offsets),
            dim,
            empty: false,
        }
    }

    /// Counter-clockwise vertex loop of a bounded planar set.
    pub fn vertices_2d(&self) -> Result<Vec<DVector<f64>>> {
        self.check_dim("vertices_2d", 2)?;
        planar::vertices(self)
    }

    /// Dimension-preserving Hausdorff-style gap `max_d |h_self(d) - h_other(d)|`
    /// over the row normals of both sets; exact for polygons.
    pub fn support_gap(&self, other: &Polytope) -> Result<f64> {
        self.check_dim("support_gap", other.dim)?;
        let mut gap: f64 = 0.0;
        for p in [self, other] {
            for k in 0..p.num_rows() {
                let d = p.normals.row(k).transpose();
                gap = gap.max((self.support(&d)? - other.support(&d)?).abs());
            }
        }
        Ok(gap)
    }

    /// Rows already unit-norm and irredundant, set known nonempty.
    fn from_canonical_rows(normals: DMatrix<f64>, offsets: DVector<f64>) -> Self {
        let dim = normals.ncols();
        Polytope {
            normals,
            offsets,
            dim,
            empty: false,
        }
    }

    fn is_singleton(&self) -> bool {
        match self.bounding_box() {
            Ok((lo, hi)) => (hi - lo).amax() <= ZERO_ROW_TOL,
            Err(_) => false,
        }
    }

    fn any_point(&self) -> Result<DVector<f64>> {
        let (lo, hi) = self.bounding_box()?;
        Ok((lo + hi) * 0.5)
    }

    fn check_dim(&self, op: &'static str, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(GeometryError::DimensionMismatch {
                op,
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for Polytope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.empty {
            return write!(f, "∅ ⊂ R^{}", self.dim);
        }
        writeln!(f, "{{x ∈ R^{} :", self.dim)?;
        for k in 0..self.num_rows() {
            let row: Vec<String> = self.normals.row(k).iter().map(|v| format!("{v:+.4}")).collect();
            writeln!(f, "  [{}] x <= {:.6}", row.join(", "), self.offsets[k])?;
        }
        write!(f, "}}")
    }
}

fn well_conditioned_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sv = m.clone().svd(false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    if min <= 1e-10 * max.max(1.0) {
        return None;
    }
    m.clone().try_inverse()
}

pub(crate) fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

pub(crate) fn stack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Normalize rows, drop duplicates, decide emptiness and strip implied rows.
pub(crate) fn canonical(a: DMatrix<f64>, b: DVector<f64>, dim: usize) -> Result<Polytope> {
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if a.ncols() != dim {
        return Err(GeometryError::DimensionMismatch {
            op: "canonicalize",
            expected: dim,
            found: a.ncols(),
        });
    }

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(a.nrows());
    for k in 0..a.nrows() {
        let row = a.row(k).transpose();
        let norm = row.norm();
        if norm <= ZERO_ROW_TOL {
            if b[k] < -REDUNDANCY_TOL {
                return Ok(Polytope::empty(dim));
            }
            continue;
        }
        let normal = row / norm;
        let offset = b[k] / norm;
        match rows
            .iter_mut()
            .find(|(n, _)| (n - &normal).amax() <= DUPLICATE_TOL)
        {
            Some(existing) => existing.1 = existing.1.min(offset),
            None => rows.push((normal, offset)),
        }
    }
    if rows.is_empty() {
        return Ok(Polytope::whole_space(dim));
    }

    let (na, nb) = assemble(&rows, dim);
    let (_, margin) = lp::max_margin(&na, &nb, 1.0)?;
    if margin < -REDUNDANCY_TOL {
        return Ok(Polytope::empty(dim));
    }

    // cheap prefilter: rows strictly slack over the bounding box
    let mut keep = vec![true; rows.len()];
    if let Some((lo, hi)) = box_of(&na, &nb, dim) {
        for (k, (normal, offset)) in rows.iter().enumerate() {
            let h: f64 = (0..dim)
                .map(|j| (normal[j] * hi[j]).max(normal[j] * lo[j]))
                .sum();
            if h < offset - REDUNDANCY_TOL {
                keep[k] = false;
            }
        }
    }

    for k in 0..rows.len() {
        if !keep[k] {
            continue;
        }
        keep[k] = false;
        let others: Vec<(DVector<f64>, f64)> = rows
            .iter()
            .zip(keep.iter())
            .filter(|(_, &kp)| kp)
            .map(|(r, _)| r.clone())
            .collect();
        let implied = if others.is_empty() {
            false
        } else {
            let (oa, ob) = assemble(&others, dim);
            match lp::maximize(&oa, &ob, &rows[k].0) {
                Ok(sol) => sol.value <= rows[k].1 + REDUNDANCY_TOL,
                Err(_) => false,
            }
        };
        keep[k] = !implied;
    }
    let kept: Vec<(DVector<f64>, f64)> = rows
        .into_iter()
        .zip(keep)
        .filter(|(_, kp)| *kp)
        .map(|(r, _)| r)
        .collect();
    let (normals, offsets) = assemble(&kept, dim);
    Ok(Polytope {
        normals,
        offsets,
        dim,
        empty: false,
    })
}

fn assemble(rows: &[(DVector<f64>, f64)], dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(rows.len(), dim);
    let mut b = DVector::zeros(rows.len());
    for (k, (n, o)) in rows.iter().enumerate() {
        a.row_mut(k).copy_from(&n.transpose());
        b[k] = *o;
    }
    (a, b)
}

fn box_of(a: &DMatrix<f64>, b: &DVector<f64>, dim: usize) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut lo = DVector::zeros(dim);
    let mut hi = DVector::zeros(dim);
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        hi[j] = lp::maximize(a, b, &e).ok()?.value;
        e[j] = -1.0;
        lo[j] = -lp::maximize(a, b, &e).ok()?.value;
    }
    Some((lo, hi))
}
