//! H-representation polytope algebra.
//!
//! A [`Polytope`] is `{x | Hx ≤ h}`. Operations return reduced
//! representations: unit-norm rows, no duplicates and no LP-redundant rows.
//! Lower-dimensional sets are allowed; an empty set is canonicalized to the
//! single row `0ᵀx ≤ −1`.
//!
//! Minkowski sums with a V-polytope are formed in the lifted space
//! `(x, λ)` and projected back by Fourier–Motzkin elimination of the
//! convex weights, one weight at a time with a reduction in between.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::solver::{solve_lp, SolveStatus, SolverError};

/// Row-redundancy LP tolerance.
pub const REDUNDANCY_TOL: f64 = 1e-9;
/// Default tolerance for [`Polytope::set_equal`].
pub const SET_EQUAL_TOL: f64 = 1e-7;
/// Default tolerance for [`Polytope::contains_point`].
pub const MEMBERSHIP_TOL: f64 = 1e-8;
/// Default cap on intermediate row counts during Fourier–Motzkin elimination.
pub const DEFAULT_ROW_CAP: usize = 20_000;

/// Upper bound on the Chebyshev radius, so the center LP stays bounded for
/// unbounded polyhedra.
const RADIUS_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolytopeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("H has {rows} rows but h has {offsets} entries")]
    RowMismatch { rows: usize, offsets: usize },
    #[error("elimination produced {rows} rows, above the cap of {cap}")]
    RowLimit { rows: usize, cap: usize },
    #[error("polytope is unbounded")]
    Unbounded,
    #[error("V-polytope needs at least one vertex")]
    NoVertices,
    #[error("LP failed with status {0:?}")]
    LpFailure(SolveStatus),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, PolytopeError>;

/// Support value `max dᵀx` over a polytope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Value(f64),
    Unbounded,
    Empty,
}

/// Convex polytope `{x | Hx ≤ h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl Polytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(PolytopeError::RowMismatch { rows: normals.nrows(), offsets: offsets.len() });
        }
        Ok(Self { normals, offsets })
    }

    /// The whole space `ℝⁿ` (no rows).
    pub fn universe(dim: usize) -> Self {
        Self { normals: DMatrix::zeros(0, dim), offsets: DVector::zeros(0) }
    }

    /// Canonical empty set in dimension `dim`.
    pub fn empty(dim: usize) -> Self {
        Self { normals: DMatrix::zeros(1, dim), offsets: DVector::from_element(1, -1.0) }
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`, rows ordered `+e₀, −e₀, +e₁, …`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(PolytopeError::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        let n = lo.len();
        let mut normals = DMatrix::zeros(2 * n, n);
        let mut offsets = DVector::zeros(2 * n);
        for i in 0..n {
            normals[(2 * i, i)] = 1.0;
            offsets[2 * i] = hi[i];
            normals[(2 * i + 1, i)] = -1.0;
            offsets[2 * i + 1] = -lo[i];
        }
        Ok(Self { normals, offsets })
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(PolytopeError::DimensionMismatch { expected: self.dim(), found });
        }
        Ok(())
    }

    /// `Hx ≤ h + tol` on every row.
    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(x.len())?;
        Ok(self.max_violation(x) <= tol)
    }

    /// Largest `(Hx − h)ᵢ`, or `−∞` for a polytope without rows.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.num_rows())
            .map(|i| self.normals.row(i).transpose().dot(x) - self.offsets[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `P + w = {x | Hx ≤ h + Hw}`.
    pub fn translate(&self, w: &DVector<f64>) -> Result<Self> {
        self.check_dim(w.len())?;
        let offsets = &self.offsets + &self.normals * w;
        Ok(Self { normals: self.normals.clone(), offsets })
    }

    /// Unreduced `{x | HAx ≤ h}`.
    pub fn preimage_raw(&self, a: &DMatrix<f64>) -> Result<Self> {
        self.check_dim(a.nrows())?;
        Ok(Self { normals: &self.normals * a, offsets: self.offsets.clone() })
    }

    /// `P ∘ A = {x | HAx ≤ h}`, reduced.
    pub fn affine_preimage(&self, a: &DMatrix<f64>) -> Result<Self> {
        self.preimage_raw(a)?.reduce()
    }

    /// Unreduced concatenation of both row sets.
    pub fn stack(&self, other: &Polytope) -> Result<Self> {
        self.check_dim(other.dim())?;
        let m = self.num_rows() + other.num_rows();
        let mut normals = DMatrix::zeros(m, self.dim());
        normals.rows_mut(0, self.num_rows()).copy_from(&self.normals);
        normals.rows_mut(self.num_rows(), other.num_rows()).copy_from(&other.normals);
        let mut offsets = DVector::zeros(m);
        offsets.rows_mut(0, self.num_rows()).copy_from(&self.offsets);
        offsets.rows_mut(self.num_rows(), other.num_rows()).copy_from(&other.offsets);
        Ok(Self { normals, offsets })
    }

    /// `P ∩ Q`, reduced.
    pub fn intersect(&self, other: &Polytope) -> Result<Self> {
        self.stack(other)?.reduce()
    }

    /// `P ⊕ conv(Q)` with the default elimination row cap.
    pub fn minkowski_sum(&self, q: &VPolytope) -> Result<Self> {
        self.minkowski_sum_capped(q, DEFAULT_ROW_CAP)
    }

    /// `P ⊕ conv(Q)`, failing with [`PolytopeError::RowLimit`] when an
    /// elimination round would exceed `row_cap` rows.
    pub fn minkowski_sum_capped(&self, q: &VPolytope, row_cap: usize) -> Result<Self> {
        self.check_dim(q.dim())?;
        let n = self.dim();
        let verts = q.distinct_vertices();
        let last = verts.last().expect("VPolytope is nonempty");
        if verts.len() == 1 {
            return self.translate(last)?.reduce();
        }
        if self.is_empty()? {
            return Ok(Self::empty(n));
        }
        // Lifted system in (x, λ₁..λ_{k−1}) with λ_k = 1 − Σλᵢ:
        //   Hx − Σλᵢ H(vᵢ − v_k) ≤ h + H v_k,  λᵢ ≥ 0,  Σλᵢ ≤ 1.
        let k = verts.len() - 1;
        let m = self.num_rows();
        let rows = m + k + 1;
        let mut normals = DMatrix::zeros(rows, n + k);
        let mut offsets = DVector::zeros(rows);
        normals.view_mut((0, 0), (m, n)).copy_from(&self.normals);
        let base = &self.normals * last;
        for i in 0..m {
            offsets[i] = self.offsets[i] + base[i];
        }
        for (j, v) in verts.iter().take(k).enumerate() {
            let col = -(&self.normals * (v - last));
            normals.view_mut((0, n + j), (m, 1)).copy_from(&col);
            normals[(m + j, n + j)] = -1.0;
            normals[(m + k, n + j)] = 1.0;
        }
        offsets[m + k] = 1.0;
        let mut lifted = Self { normals, offsets }.reduce()?;
        for _ in 0..k {
            let col = lifted.dim() - 1;
            lifted = lifted.eliminate(col, row_cap)?.reduce()?;
        }
        Ok(lifted)
    }

    /// Fourier–Motzkin projection removing coordinate `var` (unreduced).
    pub fn eliminate(&self, var: usize, row_cap: usize) -> Result<Self> {
        let n = self.dim();
        if var >= n {
            return Err(PolytopeError::DimensionMismatch { expected: n, found: var + 1 });
        }
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut zero = Vec::new();
        for i in 0..self.num_rows() {
            let a = self.normals[(i, var)];
            let scale = self.normals.row(i).amax();
            if a > 1e-12 * scale {
                pos.push(i);
            } else if a < -1e-12 * scale {
                neg.push(i);
            } else {
                zero.push(i);
            }
        }
        let out_rows = zero.len() + pos.len() * neg.len();
        if out_rows > row_cap {
            return Err(PolytopeError::RowLimit { rows: out_rows, cap: row_cap });
        }
        let keep: Vec<usize> = (0..n).filter(|&j| j != var).collect();
        let mut normals = DMatrix::zeros(out_rows, n - 1);
        let mut offsets = DVector::zeros(out_rows);
        let mut r = 0;
        for &i in &zero {
            for (c, &j) in keep.iter().enumerate() {
                normals[(r, c)] = self.normals[(i, j)];
            }
            offsets[r] = self.offsets[i];
            r += 1;
        }
        for &p in &pos {
            let ap = self.normals[(p, var)];
            for &q in &neg {
                let aq = -self.normals[(q, var)];
                for (c, &j) in keep.iter().enumerate() {
                    normals[(r, c)] = self.normals[(p, j)] / ap + self.normals[(q, j)] / aq;
                }
                offsets[r] = self.offsets[p] / ap + self.offsets[q] / aq;
                r += 1;
            }
        }
        Ok(Self { normals, offsets })
    }

    /// Chebyshev center on unit-normalized rows: `Some((center, radius))`,
    /// or `None` when the polytope is empty. A radius near zero signals a
    /// lower-dimensional set.
    pub fn chebyshev_center(&self) -> Result<Option<(DVector<f64>, f64)>> {
        let n = self.dim();
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(self.num_rows());
        for i in 0..self.num_rows() {
            let row = self.normals.row(i).transpose();
            let norm = row.norm();
            if norm <= 1e-14 {
                if self.offsets[i] < -REDUNDANCY_TOL {
                    return Ok(None);
                }
                continue;
            }
            rows.push((row / norm, self.offsets[i] / norm));
        }
        let m = rows.len();
        let mut g = DMatrix::zeros(m + 1, n + 1);
        let mut h = DVector::zeros(m + 1);
        for (i, (row, off)) in rows.iter().enumerate() {
            g.view_mut((i, 0), (1, n)).copy_from(&row.transpose());
            g[(i, n)] = 1.0;
            h[i] = *off;
        }
        g[(m, n)] = 1.0;
        h[m] = RADIUS_CAP;
        let mut c = DVector::zeros(n + 1);
        c[n] = -1.0;
        let eq = DMatrix::zeros(0, n + 1);
        let sol = solve_lp(&c, (&g, &h), (&eq, &DVector::zeros(0)))?;
        if sol.status != SolveStatus::Optimal {
            return Err(PolytopeError::LpFailure(sol.status));
        }
        let radius = sol.x_opt[n];
        if radius < -REDUNDANCY_TOL {
            return Ok(None);
        }
        Ok(Some((sol.x_opt.rows(0, n).into_owned(), radius.max(0.0))))
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.chebyshev_center()?.is_none())
    }

    /// A point of the polytope (its Chebyshev center), if any.
    pub fn witness(&self) -> Result<Option<DVector<f64>>> {
        Ok(self.chebyshev_center()?.map(|(c, _)| c))
    }

    /// `max dᵀx` over the polytope.
    pub fn support(&self, d: &DVector<f64>) -> Result<Support> {
        self.check_dim(d.len())?;
        Ok(self.support_argmax(d)?.0)
    }

    /// Support value together with a maximizer when finite.
    pub fn support_argmax(&self, d: &DVector<f64>) -> Result<(Support, Option<DVector<f64>>)> {
        self.check_dim(d.len())?;
        let n = self.dim();
        let eq = DMatrix::zeros(0, n);
        let sol = solve_lp(&(-d), (&self.normals, &self.offsets), (&eq, &DVector::zeros(0)))?;
        Ok(match sol.status {
            SolveStatus::Optimal => (Support::Value(-sol.objective), Some(sol.x_opt)),
            SolveStatus::Unbounded => (Support::Unbounded, None),
            SolveStatus::Infeasible => (Support::Empty, None),
            other => return Err(PolytopeError::LpFailure(other)),
        })
    }

    /// Outline of the projection onto coordinates `(i, j)`: the projected
    /// maximizer for each of `directions` evenly spaced planar directions.
    /// Empty for an empty polytope.
    pub fn projection_outline(&self, i: usize, j: usize, directions: usize) -> Result<Vec<[f64; 2]>> {
        let n = self.dim();
        if i >= n || j >= n {
            return Err(PolytopeError::DimensionMismatch { expected: n, found: i.max(j) + 1 });
        }
        let mut out = Vec::with_capacity(directions);
        for k in 0..directions {
            let theta = std::f64::consts::TAU * k as f64 / directions as f64;
            let mut d = DVector::zeros(n);
            d[i] = theta.cos();
            d[j] = theta.sin();
            match self.support_argmax(&d)? {
                (Support::Value(_), Some(x)) => out.push([x[i], x[j]]),
                (Support::Empty, _) => return Ok(Vec::new()),
                _ => return Err(PolytopeError::Unbounded),
            }
        }
        Ok(out)
    }

    /// Minimal H-representation of the same set.
    pub fn reduce(&self) -> Result<Self> {
        let n = self.dim();
        // Normalize and drop trivially satisfied zero rows.
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(self.num_rows());
        for i in 0..self.num_rows() {
            let row = self.normals.row(i).transpose();
            let norm = row.norm();
            if norm <= 1e-14 {
                if self.offsets[i] < -REDUNDANCY_TOL {
                    return Ok(Self::empty(n));
                }
                continue;
            }
            rows.push((row / norm, self.offsets[i] / norm));
        }
        // Merge parallel duplicates, keeping the tighter offset.
        let mut unique: Vec<(DVector<f64>, f64)> = Vec::with_capacity(rows.len());
        'outer: for (row, off) in rows {
            for (u, uoff) in unique.iter_mut() {
                if (&row - &*u).amax() <= 1e-12 {
                    if off < *uoff {
                        *uoff = off;
                    }
                    continue 'outer;
                }
            }
            unique.push((row, off));
        }
        let candidate = Self::from_rows(n, &unique);
        let Some((center, radius)) = candidate.chebyshev_center()? else {
            return Ok(Self::empty(n));
        };
        if radius <= 1e-7 {
            return Ok(match redundancy_by_lp(&unique, None)? {
                Some(keep) => Self::from_rows(n, &select(unique, &keep)),
                None => Self::empty(n),
            });
        }
        // A row that cannot be tight anywhere in the bounding box is
        // redundant. Far-away rows left by elimination are the usual case.
        let bbox = match candidate.bounding_box() {
            Ok(b) => b,
            Err(PolytopeError::Unbounded) => None,
            Err(e) => return Err(e),
        };
        let mut bounds = None;
        if let Some((lo, hi)) = bbox {
            unique.retain(|(a, b)| {
                let top: f64 = (0..n).map(|j| (a[j] * lo[j]).max(a[j] * hi[j])).sum();
                top >= b - REDUNDANCY_TOL
            });
            let margin = (&hi - &lo).amax().max(1.0);
            bounds = Some((lo.add_scalar(-margin), hi.add_scalar(margin)));
        }
        Ok(match clarkson(&unique, &center, bounds.as_ref())? {
            Some(keep) => Self::from_rows(n, &select(unique, &keep)),
            None => Self::empty(n),
        })
    }

    fn from_rows(n: usize, rows: &[(DVector<f64>, f64)]) -> Self {
        let mut normals = DMatrix::zeros(rows.len(), n);
        let mut offsets = DVector::zeros(rows.len());
        for (i, (row, off)) in rows.iter().enumerate() {
            normals.view_mut((i, 0), (1, n)).copy_from(&row.transpose());
            offsets[i] = *off;
        }
        Self { normals, offsets }
    }

    /// Largest amount by which `self` sticks out of `other`'s rows
    /// (support-function comparison). `None` when `self` is unbounded in
    /// some row direction of `other`; `Some(−∞)` when `self` is empty.
    pub fn excess_over(&self, other: &Polytope) -> Result<Option<f64>> {
        self.check_dim(other.dim())?;
        if self.is_empty()? {
            return Ok(Some(f64::NEG_INFINITY));
        }
        let mut worst = f64::NEG_INFINITY;
        for i in 0..other.num_rows() {
            let row = other.normals.row(i).transpose();
            let norm = row.norm();
            if norm <= 1e-14 {
                if other.offsets[i] < -REDUNDANCY_TOL {
                    worst = worst.max(-other.offsets[i]);
                }
                continue;
            }
            match self.support(&(&row / norm))? {
                Support::Value(v) => worst = worst.max(v - other.offsets[i] / norm),
                Support::Unbounded => return Ok(None),
                Support::Empty => return Ok(Some(f64::NEG_INFINITY)),
            }
        }
        Ok(Some(worst))
    }

    /// `self ⊆ other` up to `tol`.
    pub fn is_subset_of(&self, other: &Polytope, tol: f64) -> Result<bool> {
        Ok(matches!(self.excess_over(other)?, Some(e) if e <= tol))
    }

    /// Mutual containment within `tol` on support values.
    pub fn set_equal(&self, other: &Polytope, tol: f64) -> Result<bool> {
        self.check_dim(other.dim())?;
        let (ea, eb) = (self.is_empty()?, other.is_empty()?);
        if ea || eb {
            return Ok(ea && eb);
        }
        Ok(self.is_subset_of(other, tol)? && other.is_subset_of(self, tol)?)
    }

    /// Tight axis-aligned bounds from `2n` support LPs.
    pub fn bounding_box(&self) -> Result<Option<(DVector<f64>, DVector<f64>)>> {
        let n = self.dim();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            match self.support(&e)? {
                Support::Value(v) => hi[i] = v,
                Support::Unbounded => return Err(PolytopeError::Unbounded),
                Support::Empty => return Ok(None),
            }
            e[i] = -1.0;
            match self.support(&e)? {
                Support::Value(v) => lo[i] = -v,
                Support::Unbounded => return Err(PolytopeError::Unbounded),
                Support::Empty => return Ok(None),
            }
        }
        Ok(Some((lo, hi)))
    }

    /// Monte Carlo volume over the bounding box. Empty and lower-dimensional
    /// sets return 0. Deterministic for a fixed seed.
    pub fn volume_mc(&self, samples: usize, seed: u64) -> Result<f64> {
        let Some((_, radius)) = self.chebyshev_center()? else {
            return Ok(0.0);
        };
        let Some((lo, hi)) = self.bounding_box()? else {
            return Ok(0.0);
        };
        if radius <= REDUNDANCY_TOL {
            return Ok(0.0);
        }
        let n = self.dim();
        let box_volume: f64 = (0..n).map(|i| hi[i] - lo[i]).product();
        if samples == 0 || box_volume <= 0.0 {
            return Ok(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DVector::zeros(n);
        let mut hits = 0usize;
        for _ in 0..samples {
            for i in 0..n {
                x[i] = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
            }
            if self.max_violation(&x) <= 0.0 {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples as f64 * box_volume)
    }

    /// Homothety `c + s (P − c)`.
    pub fn scale_about(&self, center: &DVector<f64>, factor: f64) -> Result<Self> {
        self.check_dim(center.len())?;
        let hc = &self.normals * center;
        let offsets = DVector::from_fn(self.num_rows(), |i, _| hc[i] + factor * (self.offsets[i] - hc[i]));
        Ok(Self { normals: self.normals.clone(), offsets })
    }
}

#[derive(Serialize, Deserialize)]
struct PolytopeRepr {
    #[serde(rename = "H")]
    normals: Vec<Vec<f64>>,
    #[serde(rename = "h")]
    offsets: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl Serialize for Polytope {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let normals = (0..self.num_rows()).map(|i| self.normals.row(i).iter().copied().collect()).collect();
        PolytopeRepr {
            normals,
            offsets: self.offsets.iter().copied().collect(),
            dim: if self.num_rows() == 0 { Some(self.dim()) } else { None },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let repr = PolytopeRepr::deserialize(d)?;
        let m = repr.normals.len();
        let n = match (repr.normals.first(), repr.dim) {
            (Some(r), _) => r.len(),
            (None, Some(n)) => n,
            (None, None) => return Err(D::Error::custom("polytope without rows needs a `dim` field")),
        };
        if repr.normals.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom("ragged H matrix"));
        }
        if repr.offsets.len() != m {
            return Err(D::Error::custom("H and h row counts differ"));
        }
        let normals = DMatrix::from_fn(m, n, |i, j| repr.normals[i][j]);
        Ok(Polytope { normals, offsets: DVector::from_vec(repr.offsets) })
    }
}

/// Convex hull of finitely many points.
#[derive(Debug, Clone, PartialEq)]
pub struct VPolytope {
    vertices: Vec<DVector<f64>>,
}

impl VPolytope {
    pub fn new(vertices: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = vertices.first() else {
            return Err(PolytopeError::NoVertices);
        };
        let n = first.len();
        if let Some(bad) = vertices.iter().find(|v| v.len() != n) {
            return Err(PolytopeError::DimensionMismatch { expected: n, found: bad.len() });
        }
        Ok(Self { vertices })
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    /// `A ∘ V = conv{A v}`.
    pub fn affine_image(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != self.dim() {
            return Err(PolytopeError::DimensionMismatch { expected: self.dim(), found: a.ncols() });
        }
        Ok(Self { vertices: self.vertices.iter().map(|v| a * v).collect() })
    }

    pub fn support(&self, d: &DVector<f64>) -> f64 {
        self.vertices.iter().map(|v| v.dot(d)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn distinct_vertices(&self) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(self.vertices.len());
        for v in &self.vertices {
            if !out.iter().any(|u| (u - v).amax() <= 1e-14 * (1.0 + v.amax())) {
                out.push(v.clone());
            }
        }
        out
    }
}

/// Free-function spellings of the core operations.
pub fn intersect(p: &Polytope, q: &Polytope) -> Result<Polytope> {
    p.intersect(q)
}

fn select(rows: Vec<(DVector<f64>, f64)>, keep: &[bool]) -> Vec<(DVector<f64>, f64)> {
    rows.into_iter().zip(keep).filter(|(_, k)| **k).map(|(r, _)| r).collect()
}

/// `max rowᵢ·x` over the rows in `others`, the optional box and
/// `rowᵢ·x ≤ hᵢ + 1`.
fn row_max(
    rows: &[(DVector<f64>, f64)],
    i: usize,
    others: &[usize],
    bounds: Option<&(DVector<f64>, DVector<f64>)>,
) -> Result<Option<(f64, DVector<f64>)>> {
    let n = rows[i].0.len();
    let extra = if bounds.is_some() { 2 * n } else { 0 };
    let m = others.len() + 1 + extra;
    let mut g = DMatrix::zeros(m, n);
    let mut h = DVector::zeros(m);
    for (r, &j) in others.iter().enumerate() {
        g.view_mut((r, 0), (1, n)).copy_from(&rows[j].0.transpose());
        h[r] = rows[j].1;
    }
    let r = others.len();
    g.view_mut((r, 0), (1, n)).copy_from(&rows[i].0.transpose());
    h[r] = rows[i].1 + 1.0;
    if let Some((lo, hi)) = bounds {
        for j in 0..n {
            g[(r + 1 + 2 * j, j)] = 1.0;
            h[r + 1 + 2 * j] = hi[j];
            g[(r + 2 + 2 * j, j)] = -1.0;
            h[r + 2 + 2 * j] = -lo[j];
        }
    }
    let eq = DMatrix::zeros(0, n);
    let sol = solve_lp(&(-&rows[i].0), (&g, &h), (&eq, &DVector::zeros(0)))?;
    match sol.status {
        SolveStatus::Optimal => Ok(Some((-sol.objective, sol.x_opt))),
        SolveStatus::Infeasible => Ok(None),
        other => Err(PolytopeError::LpFailure(other)),
    }
}

/// One LP per row against all surviving rows. Works for flat sets.
fn redundancy_by_lp(rows: &[(DVector<f64>, f64)], bounds: Option<&(DVector<f64>, DVector<f64>)>) -> Result<Option<Vec<bool>>> {
    let m = rows.len();
    let mut keep = vec![true; m];
    for i in 0..m {
        let others: Vec<usize> = (0..m).filter(|&j| j != i && keep[j]).collect();
        match row_max(rows, i, &others, bounds)? {
            Some((v, _)) if v <= rows[i].1 + REDUNDANCY_TOL => keep[i] = false,
            Some(_) => {}
            None => return Ok(None),
        }
    }
    Ok(Some(keep))
}

/// Clarkson's method: LPs only over rows already known to be irredundant;
/// a violating optimizer is ray-shot from the interior point `z` to find
/// the next irredundant row. `bounds` must contain the set with slack.
fn clarkson(
    rows: &[(DVector<f64>, f64)],
    z: &DVector<f64>,
    bounds: Option<&(DVector<f64>, DVector<f64>)>,
) -> Result<Option<Vec<bool>>> {
    let m = rows.len();
    let slack: Vec<f64> = rows.iter().map(|(a, b)| b - a.dot(z)).collect();
    let mut keep = vec![false; m];
    let mut known: Vec<usize> = Vec::new();
    for i in 0..m {
        while !keep[i] {
            let Some((v, x)) = row_max(rows, i, &known, bounds)? else {
                return Ok(None);
            };
            if v <= rows[i].1 + REDUNDANCY_TOL {
                break;
            }
            let dir = &x - z;
            let mut hit = i;
            let mut best = f64::INFINITY;
            for (j, (a, _)) in rows.iter().enumerate() {
                let rate = a.dot(&dir);
                if rate > 0.0 {
                    let t = slack[j] / rate;
                    if t < best {
                        best = t;
                        hit = j;
                    }
                }
            }
            if keep[hit] {
                // numerically stuck on a kept row; decide i against everything left
                let others: Vec<usize> = (0..m).filter(|&j| j != i && (keep[j] || j > i)).collect();
                if let Some((v, _)) = row_max(rows, i, &others, bounds)? {
                    keep[i] = v > rows[i].1 + REDUNDANCY_TOL;
                }
                break;
            }
            keep[hit] = true;
            known.push(hit);
        }
    }
    Ok(Some(keep))
}

pub fn affine_preimage(p: &Polytope, a: &DMatrix<f64>) -> Result<Polytope> {
    p.affine_preimage(a)
}

pub fn affine_image_vrep(v: &VPolytope, a: &DMatrix<f64>) -> Result<VPolytope> {
    v.affine_image(a)
}

pub fn minkowski_sum(p: &Polytope, q: &VPolytope) -> Result<Polytope> {
    p.minkowski_sum(q)
}

pub fn translate(p: &Polytope, w: &DVector<f64>) -> Result<Polytope> {
    p.translate(w)
}

pub fn set_equal(p: &Polytope, q: &Polytope, tol: f64) -> Result<bool> {
    p.set_equal(q, tol)
}

/// Random number generator used for polytope sampling utilities.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform samples from a bounded polytope by rejection from its bounding box.
/// Returns fewer than `count` points if `max_tries` is exhausted.
pub fn sample_uniform(p: &Polytope, count: usize, seed: u64, max_tries: usize) -> Result<Vec<DVector<f64>>> {
    let Some((lo, hi)) = p.bounding_box()? else {
        return Ok(Vec::new());
    };
    let n = p.dim();
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < max_tries {
        tries += 1;
        let x = DVector::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>());
        if p.max_violation(&x) <= 0.0 {
            out.push(x);
        }
    }
    Ok(out)
}

/// Points along random rays from the Chebyshev center. A fraction
/// `boundary_share` lands on the boundary, the rest at radius `u^(1/n)` of
/// the ray length. Deterministic for a fixed seed; empty for empty sets.
pub fn sample_rays(p: &Polytope, count: usize, boundary_share: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    let Some((center, _)) = p.chebyshev_center()? else {
        return Ok(Vec::new());
    };
    let n = p.dim();
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    let slack = p.offsets() - p.normals() * &center;
    for i in 0..count {
        let d = loop {
            let d = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
            let norm = d.norm();
            if norm > 1e-3 && norm <= 1.0 {
                break d / norm;
            }
        };
        let hd = p.normals() * &d;
        let mut t_max = f64::INFINITY;
        for r in 0..p.num_rows() {
            if hd[r] > 1e-14 {
                t_max = t_max.min(slack[r].max(0.0) / hd[r]);
            }
        }
        if !t_max.is_finite() {
            return Err(PolytopeError::Unbounded);
        }
        let u: f64 = rng.random();
        let s = if (i as f64) < boundary_share * count as f64 { 1.0 } else { u.powf(1.0 / n as f64) };
        out.push(&center + d * (s * t_max));
    }
    Ok(out)
}
