//! Pointwise geometry of the hyperboloid model of H^m.
//!
//! H^m is realised as the upper sheet `{x : <x,x> = -1, x0 > 0}` in Minkowski
//! space R^{1+m} with signature (-,+,...,+). Tangent vectors at `p` are the
//! ambient vectors Minkowski-orthogonal to `p`; on them the Minkowski form is
//! positive definite and is the metric h.
//!
//! Two layers are provided. The [`kernel`] functions work on raw `&[f64]`
//! slices and are what the grid code calls in its inner loops. The typed
//! wrappers ([`AmbientVec`], [`HPoint`], [`TangentVec`], [`OrthoFrame`])
//! check their invariants at construction and are used at API boundaries.

use crate::error::{Error, Result};

/// Constraint tolerance for `<p,p> = -1` and `<v,p> = 0`.
pub const TOL_CONSTRAINT: f64 = 1e-12;

/// Synthetic data further than this from the basepoint is rejected
/// (cosh overflow margin).
pub const MAX_SYNTHETIC_DISTANCE: f64 = 20.0;

/// Slice kernels. All functions assume equal lengths; callers check.
pub mod kernel {
    /// Minkowski pairing `-a0 b0 + sum_i ai bi`.
    #[inline(always)]
    pub fn mink(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = -a[0] * b[0];
        for i in 1..a.len() {
            acc += a[i] * b[i];
        }
        acc
    }

    /// Rescale a future timelike vector onto the hyperboloid.
    #[inline(always)]
    pub fn normalize_point(p: &mut [f64]) {
        let s = (-mink(p, p)).sqrt();
        for x in p.iter_mut() {
            *x /= s;
        }
    }

    /// `v <- v + <v,p> p`, the Minkowski-orthogonal projection onto `T_p`.
    #[inline(always)]
    pub fn tangent_project(p: &[f64], v: &mut [f64]) {
        let c = mink(v, p);
        for (vi, pi) in v.iter_mut().zip(p) {
            *vi += c * pi;
        }
    }

    /// Parallel transport of `v in T_p` to `T_q` along the geodesic.
    #[inline(always)]
    pub fn transport(p: &[f64], q: &[f64], v: &mut [f64]) {
        let c = mink(q, v) / (1.0 - mink(p, q));
        for i in 0..v.len() {
            v[i] += c * (p[i] + q[i]);
        }
    }

    /// `sinh(r)/r`, accurate near zero.
    #[inline(always)]
    pub fn sinhc(r: f64) -> f64 {
        if r.abs() < 1e-4 {
            1.0 + r * r / 6.0
        } else {
            r.sinh() / r
        }
    }

    /// Geodesic distance from the Minkowski chord: `|q-p|^2 = 4 sinh^2(d/2)`.
    /// Stable for nearby points where `arccosh(-<p,q>)` cancels.
    #[inline(always)]
    pub fn dist(p: &[f64], q: &[f64]) -> f64 {
        let mut chord = 0.0;
        for i in 0..p.len() {
            let d = q[i] - p[i];
            chord += if i == 0 { -d * d } else { d * d };
        }
        2.0 * (0.5 * chord.max(0.0).sqrt()).asinh()
    }

    /// `exp_p(v)` written into `out`; `v` must be tangent at `p`.
    #[inline(always)]
    pub fn exp(p: &[f64], v: &[f64], out: &mut [f64]) {
        let r = mink(v, v).max(0.0).sqrt();
        let (c, s) = (r.cosh(), sinhc(r));
        for i in 0..p.len() {
            out[i] = c * p[i] + s * v[i];
        }
    }

    /// `log_p(q)` written into `out`.
    #[inline(always)]
    pub fn log(p: &[f64], q: &[f64], out: &mut [f64]) {
        let d = dist(p, q);
        let c = -mink(p, q);
        let s = 1.0 / sinhc(d);
        for i in 0..p.len() {
            out[i] = s * (q[i] - c * p[i]);
        }
        tangent_project(p, out);
    }

    /// `(x ^ y) z = x <y,z> - y <x,z>` written into `out`.
    #[inline(always)]
    pub fn wedge_apply(x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        let yz = mink(y, z);
        let xz = mink(x, z);
        for i in 0..x.len() {
            out[i] = x[i] * yz - y[i] * xz;
        }
    }
}

/// `arccosh(x)` for `x >= 1`, using `log1p` so that arguments near 1 keep
/// their relative precision.
pub fn stable_arccosh(x: f64) -> f64 {
    let t = x - 1.0;
    (t + (t * (x + 1.0)).max(0.0).sqrt()).ln_1p()
}

/// An element of R^{1+m}.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientVec(Vec<f64>);

impl AmbientVec {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "ambient dimension must be at least 2, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// The i-th standard basis vector of R^{1+m}.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|x| c * x).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// Minkowski pairing of two ambient vectors.
pub fn mink_form(a: &AmbientVec, b: &AmbientVec) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(kernel::mink(&a.0, &b.0))
}

/// A point of the upper unit hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct HPoint(AmbientVec);

impl HPoint {
    /// The basepoint `o = (1, 0, ..., 0)` of H^m.
    pub fn origin(m: usize) -> Self {
        Self(AmbientVec::basis(m + 1, 0))
    }

    /// Wrap coordinates that already satisfy the constraint.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let a = AmbientVec::new(coords)?;
        let n = kernel::mink(&a.0, &a.0);
        if (n + 1.0).abs() > TOL_CONSTRAINT * (1.0 + a.0[0] * a.0[0]) || a.0[0] <= 0.0 {
            return Err(Error::NotTimelike {
                norm_sq: n,
                a0: a.0[0],
            });
        }
        Ok(Self(a))
    }

    /// Coordinates known to be on the hyperboloid (kernel output).
    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        Self(AmbientVec(coords))
    }

    /// Point of H^m lying over `x in R^m`: `(sqrt(1+|x|^2), x)`.
    pub fn lift(x: &[f64]) -> Self {
        let mut v = Vec::with_capacity(x.len() + 1);
        v.push((1.0 + x.iter().map(|t| t * t).sum::<f64>()).sqrt());
        v.extend_from_slice(x);
        Self(AmbientVec(v))
    }

    pub fn m(&self) -> usize {
        self.0.dim() - 1
    }

    pub fn coords(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn ambient(&self) -> &AmbientVec {
        &self.0
    }

    /// Apply a linear map of R^{1+m} (row-major `(m+1) x (m+1)`), e.g. an
    /// element of SO(m,1).
    pub fn transformed(&self, matrix: &[f64]) -> Self {
        let d = self.0.dim();
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|j| matrix[i * d + j] * self.0 .0[j]).sum();
        }
        kernel::normalize_point(&mut out);
        Self(AmbientVec(out))
    }
}

/// Rescale a timelike, future-pointing vector onto H^m.
pub fn project_hyperboloid(a: &AmbientVec) -> Result<HPoint> {
    let n = kernel::mink(&a.0, &a.0);
    if !(n < 0.0) || a.0[0] <= 0.0 {
        return Err(Error::NotTimelike {
            norm_sq: n,
            a0: a.0[0],
        });
    }
    let mut v = a.0.clone();
    kernel::normalize_point(&mut v);
    Ok(HPoint::from_raw(v))
}

/// An ambient vector tangent to H^m at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    base: HPoint,
    vec: AmbientVec,
}

impl TangentVec {
    pub fn new(base: HPoint, vec: AmbientVec) -> Result<Self> {
        if vec.dim() != base.0.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.0.dim(),
                got: vec.dim(),
            });
        }
        let c = kernel::mink(&vec.0, base.coords());
        let scale = 1.0 + vec.0.iter().map(|x| x.abs()).fold(0.0, f64::max) * base.coords()[0];
        if c.abs() > TOL_CONSTRAINT * scale {
            return Err(Error::InvalidArgument(format!(
                "vector is not tangent: <v,p> = {c:e}"
            )));
        }
        Ok(Self { base, vec })
    }

    pub(crate) fn from_raw(base: HPoint, vec: Vec<f64>) -> Self {
        Self {
            base,
            vec: AmbientVec(vec),
        }
    }

    pub fn zero(base: HPoint) -> Self {
        let d = base.0.dim();
        Self::from_raw(base, vec![0.0; d])
    }

    pub fn base(&self) -> &HPoint {
        &self.base
    }

    pub fn vec(&self) -> &AmbientVec {
        &self.vec
    }

    pub fn coords(&self) -> &[f64] {
        self.vec.as_slice()
    }

    /// Riemannian length.
    pub fn norm(&self) -> f64 {
        kernel::mink(&self.vec.0, &self.vec.0).max(0.0).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_raw(self.base.clone(), self.vec.scaled(c).0)
    }

    pub fn inner(&self, other: &TangentVec) -> Result<f64> {
        same_base(self, other)?;
        Ok(kernel::mink(&self.vec.0, &other.vec.0))
    }
}

fn same_base(a: &TangentVec, b: &TangentVec) -> Result<()> {
    let d: f64 = a
        .base
        .coords()
        .iter()
        .zip(b.base.coords())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if d > 1e-12 * (1.0 + a.base.coords()[0]) {
        return Err(Error::BaseMismatch);
    }
    Ok(())
}

/// Orthogonal projection of an ambient vector onto `T_p H^m`.
pub fn tangent_project(p: &HPoint, a: &AmbientVec) -> Result<TangentVec> {
    if a.dim() != p.0.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.0.dim(),
            got: a.dim(),
        });
    }
    let mut v = a.0.clone();
    kernel::tangent_project(p.coords(), &mut v);
    Ok(TangentVec::from_raw(p.clone(), v))
}

pub fn exp_map(v: &TangentVec) -> HPoint {
    let mut out = vec![0.0; v.vec.dim()];
    kernel::exp(v.base.coords(), v.coords(), &mut out);
    kernel::normalize_point(&mut out);
    HPoint::from_raw(out)
}

pub fn log_map(p: &HPoint, q: &HPoint) -> Result<TangentVec> {
    if p.0.dim() != q.0.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.0.dim(),
            got: q.0.dim(),
        });
    }
    let mut out = vec![0.0; p.0.dim()];
    kernel::log(p.coords(), q.coords(), &mut out);
    Ok(TangentVec::from_raw(p.clone(), out))
}

pub fn dist(p: &HPoint, q: &HPoint) -> Result<f64> {
    if p.0.dim() != q.0.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.0.dim(),
            got: q.0.dim(),
        });
    }
    Ok(kernel::dist(p.coords(), q.coords()))
}

/// `(X ^ Y) Z = X <Y,Z> - Y <X,Z>`, the curvature operator of H^m up to sign.
pub fn wedge_apply(x: &TangentVec, y: &TangentVec, z: &TangentVec) -> Result<TangentVec> {
    same_base(x, y)?;
    same_base(x, z)?;
    let mut out = vec![0.0; x.vec.dim()];
    kernel::wedge_apply(x.coords(), y.coords(), z.coords(), &mut out);
    Ok(TangentVec::from_raw(x.base.clone(), out))
}

/// Transport `v in T_p` to `T_q` along the geodesic from `p` to `q`.
pub fn parallel_transport(q: &HPoint, v: &TangentVec) -> Result<TangentVec> {
    if q.0.dim() != v.vec.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.vec.dim(),
            got: q.0.dim(),
        });
    }
    let mut out = v.vec.0.clone();
    kernel::transport(v.base.coords(), q.coords(), &mut out);
    kernel::tangent_project(q.coords(), &mut out);
    Ok(TangentVec::from_raw(q.clone(), out))
}

/// A positively oriented orthonormal frame of `T_p H^m`.
///
/// Orientation is positive when `det[p | e_1 | ... | e_m] > 0`, so the
/// standard axes at the origin are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoFrame {
    base: HPoint,
    cols: Vec<AmbientVec>,
}

impl OrthoFrame {
    pub fn new(base: HPoint, cols: Vec<AmbientVec>) -> Result<Self> {
        let m = base.m();
        if cols.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: cols.len(),
            });
        }
        for (a, ea) in cols.iter().enumerate() {
            if ea.dim() != m + 1 {
                return Err(Error::DimensionMismatch {
                    expected: m + 1,
                    got: ea.dim(),
                });
            }
            if kernel::mink(ea.as_slice(), base.coords()).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("frame vector {a} is not tangent")));
            }
            for (b, eb) in cols.iter().enumerate() {
                let g = kernel::mink(ea.as_slice(), eb.as_slice());
                let want = if a == b { 1.0 } else { 0.0 };
                if (g - want).abs() > 1e-10 {
                    return Err(Error::InvalidArgument(format!(
                        "frame is not orthonormal: <e{a},e{b}> = {g}"
                    )));
                }
            }
        }
        let raw: Vec<f64> = cols.iter().flat_map(|c| c.as_slice().to_vec()).collect();
        if orientation(base.coords(), &raw) <= 0.0 {
            return Err(Error::InvalidArgument("frame is negatively oriented".into()));
        }
        Ok(Self { base, cols })
    }

    /// Frame at the origin given by the spatial coordinate axes.
    pub fn standard(m: usize) -> Self {
        Self {
            base: HPoint::origin(m),
            cols: (1..=m).map(|i| AmbientVec::basis(m + 1, i)).collect(),
        }
    }

    /// Seed frame at `p`: Gram-Schmidt of the tangent-projected spatial axes,
    /// falling back to the time axis when one of them degenerates, then
    /// oriented positively.
    pub fn seeded(p: &HPoint) -> Self {
        let m = p.m();
        let mut raw = vec![0.0; m * (m + 1)];
        seed_frame(p.coords(), &mut raw);
        let cols = raw.chunks(m + 1).map(|c| AmbientVec(c.to_vec())).collect();
        Self {
            base: p.clone(),
            cols,
        }
    }

    /// Transport every column to `q`.
    pub fn transported(&self, q: &HPoint) -> Self {
        let cols = self
            .cols
            .iter()
            .map(|c| {
                let mut v = c.0.clone();
                kernel::transport(self.base.coords(), q.coords(), &mut v);
                kernel::tangent_project(q.coords(), &mut v);
                AmbientVec(v)
            })
            .collect();
        Self {
            base: q.clone(),
            cols,
        }
    }

    /// The frame `e U`, i.e. `(eU)_b = sum_a e_a U_ab`, for `U` row-major m x m.
    pub fn rotated(&self, u: &[f64]) -> Self {
        let m = self.cols.len();
        let d = m + 1;
        let cols = (0..m)
            .map(|b| {
                let mut v = vec![0.0; d];
                for a in 0..m {
                    for c in 0..d {
                        v[c] += self.cols[a].0[c] * u[a * m + b];
                    }
                }
                AmbientVec(v)
            })
            .collect();
        Self {
            base: self.base.clone(),
            cols,
        }
    }

    pub fn base(&self) -> &HPoint {
        &self.base
    }

    pub fn cols(&self) -> &[AmbientVec] {
        &self.cols
    }

    /// Columns flattened as `m` consecutive ambient vectors.
    pub fn raw(&self) -> Vec<f64> {
        self.cols.iter().flat_map(|c| c.0.iter().copied()).collect()
    }

    /// Frame components `e^* v` of a tangent vector.
    pub fn pullback(&self, v: &TangentVec) -> Vec<f64> {
        self.cols
            .iter()
            .map(|c| kernel::mink(c.as_slice(), v.coords()))
            .collect()
    }
}

/// `det[p | e_1 | ... | e_m]`.
pub(crate) fn orientation(p: &[f64], frame: &[f64]) -> f64 {
    let d = p.len();
    let mut mat = nalgebra::DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        mat[(i, 0)] = p[i];
    }
    for (a, col) in frame.chunks(d).enumerate() {
        for i in 0..d {
            mat[(i, a + 1)] = col[i];
        }
    }
    mat.determinant()
}

/// Deterministic seed frame at `p`, written into `out` (`m` ambient vectors).
pub(crate) fn seed_frame(p: &[f64], out: &mut [f64]) {
    let d = p.len();
    let m = d - 1;
    let mut filled = 0;
    // spatial axes first, then the time axis as a fallback
    let candidates = (1..d).chain(std::iter::once(0));
    for axis in candidates {
        if filled == m {
            break;
        }
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        kernel::tangent_project(p, &mut v);
        for b in 0..filled {
            let eb = &out[b * d..(b + 1) * d];
            let c = kernel::mink(&v, eb);
            for i in 0..d {
                v[i] -= c * eb[i];
            }
        }
        let n2 = kernel::mink(&v, &v);
        if n2 < 1e-8 {
            continue;
        }
        let n = n2.sqrt();
        for i in 0..d {
            out[filled * d + i] = v[i] / n;
        }
        filled += 1;
    }
    debug_assert_eq!(filled, m);
    if orientation(p, out) < 0.0 {
        let last = &mut out[(m - 1) * d..m * d];
        for x in last.iter_mut() {
            *x = -*x;
        }
    }
}

/// Minkowski Gram-Schmidt of the frame at `p` in place; returns the largest
/// deviation from orthonormality seen before the correction.
pub(crate) fn reorthonormalize(p: &[f64], frame: &mut [f64]) -> f64 {
    let d = p.len();
    let m = d - 1;
    let mut drift: f64 = 0.0;
    for a in 0..m {
        for b in 0..=a {
            let g = kernel::mink(&frame[a * d..(a + 1) * d], &frame[b * d..(b + 1) * d]);
            let want = if a == b { 1.0 } else { 0.0 };
            drift = drift.max((g - want).abs());
        }
    }
    for a in 0..m {
        let (done, rest) = frame.split_at_mut(a * d);
        let ea = &mut rest[..d];
        kernel::tangent_project(p, ea);
        for b in 0..a {
            let eb = &done[b * d..(b + 1) * d];
            let c = kernel::mink(ea, eb);
            for i in 0..d {
                ea[i] -= c * eb[i];
            }
        }
        let n = kernel::mink(ea, ea).sqrt();
        for x in ea.iter_mut() {
            *x /= n;
        }
    }
    drift
}

/// The boost in the `(0, axis)` plane with rapidity `r`, row-major.
pub fn boost(m: usize, axis: usize, r: f64) -> Vec<f64> {
    let d = m + 1;
    let mut u = vec![0.0; d * d];
    for i in 0..d {
        u[i * d + i] = 1.0;
    }
    u[0] = r.cosh();
    u[axis * d + axis] = r.cosh();
    u[axis] = r.sinh();
    u[axis * d] = r.sinh();
    u
}

/// The rotation by `angle` in the spatial `(i, j)` plane, row-major.
pub fn spatial_rotation(m: usize, i: usize, j: usize, angle: f64) -> Vec<f64> {
    let d = m + 1;
    let mut u = vec![0.0; d * d];
    for k in 0..d {
        u[k * d + k] = 1.0;
    }
    let (s, c) = angle.sin_cos();
    u[i * d + i] = c;
    u[j * d + j] = c;
    u[i * d + j] = -s;
    u[j * d + i] = s;
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv(p: &HPoint, v: &[f64]) -> TangentVec {
        tangent_project(p, &AmbientVec::new(v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn mink_form_examples() {
        let a = AmbientVec::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(mink_form(&a, &a).unwrap(), -1.0);
        let b = AmbientVec::new(vec![1f64.cosh(), 1f64.sinh(), 0.0]).unwrap();
        assert!((mink_form(&b, &a).unwrap() + 1.543_080_634_815_243_7).abs() < 1e-15);
        let x = AmbientVec::basis(3, 1);
        let y = AmbientVec::basis(3, 2);
        assert_eq!(mink_form(&x, &y).unwrap(), 0.0);
        let short = AmbientVec::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            mink_form(&a, &short),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn project_hyperboloid_examples() {
        let p = project_hyperboloid(&AmbientVec::new(vec![2.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p.coords(), &[1.0, 0.0, 0.0]);

        let q = HPoint::new(vec![1f64.cosh(), 1f64.sinh(), 0.0]).unwrap();
        let q2 = project_hyperboloid(q.ambient()).unwrap();
        for (a, b) in q.coords().iter().zip(q2.coords()) {
            assert!((a - b).abs() < 1e-15);
        }

        let r = project_hyperboloid(&AmbientVec::new(vec![1.1, 0.3, 0.2]).unwrap()).unwrap();
        let s = (1.21f64 - 0.13).sqrt();
        let want = [1.1 / s, 0.3 / s, 0.2 / s];
        for (a, b) in r.coords().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((r.coords()[0] - 1.058_475).abs() < 1e-6);
        assert!((r.coords()[1] - 0.288_675).abs() < 1e-6);
        assert!((r.coords()[2] - 0.192_450).abs() < 1e-6);
        assert!((kernel::mink(r.coords(), r.coords()) + 1.0).abs() < 1e-14);

        assert!(project_hyperboloid(&AmbientVec::new(vec![0.5, 1.0, 0.0]).unwrap()).is_err());
        assert!(project_hyperboloid(&AmbientVec::new(vec![-2.0, 0.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn tangent_project_examples() {
        let o = HPoint::origin(2);
        let v = tangent_project(&o, &AmbientVec::new(vec![5.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!(v.coords().iter().all(|x| x.abs() < 1e-15));
        let v = tangent_project(&o, &AmbientVec::new(vec![0.0, 1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(v.coords(), &[0.0, 1.0, 2.0]);

        let p = HPoint::new(vec![1f64.cosh(), 1f64.sinh(), 0.0]).unwrap();
        let a = AmbientVec::basis(3, 0);
        let v = tangent_project(&p, &a).unwrap();
        let want = a.sub(&p.ambient().scaled(1f64.cosh()));
        for (x, y) in v.coords().iter().zip(want.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(kernel::mink(v.coords(), p.coords()).abs() < 1e-14);
    }

    #[test]
    fn exp_log_dist_examples() {
        let o = HPoint::origin(2);
        let v = tv(&o, &[0.0, 1.0, 0.0]);
        let q = exp_map(&v);
        assert!((q.coords()[0] - 1f64.cosh()).abs() < 1e-15);
        assert!((q.coords()[1] - 1f64.sinh()).abs() < 1e-15);
        for r in [0.1, 1.0, 5.0] {
            let q = exp_map(&tv(&o, &[0.0, 0.6 * r, 0.8 * r]));
            assert!((dist(&o, &q).unwrap() - r).abs() < 1e-12 * r.max(1.0));
        }
    }

    #[test]
    fn stable_arccosh_matches_chord_distance() {
        let o = HPoint::origin(2);
        for r in [1e-9, 1e-6, 1e-3, 0.5, 3.0] {
            let q = exp_map(&tv(&o, &[0.0, r, 0.0]));
            assert!((dist(&o, &q).unwrap() - r).abs() <= 1e-13 * r);
            if r >= 1e-3 {
                // cosh(r) itself only carries ~r^2 relative information
                let err = (stable_arccosh(q.coords()[0]) - r).abs();
                assert!(err < 4.0 * f64::EPSILON / r + 1e-14 * r, "r={r} err={err}");
            }
        }
    }

    #[test]
    fn wedge_examples() {
        let o = HPoint::origin(3);
        let x = tv(&o, &[0.0, 1.0, 0.0, 0.0]);
        let y = tv(&o, &[0.0, 0.0, 1.0, 0.0]);
        let z = tv(&o, &[0.0, 0.3, -0.2, 0.5]);
        let w = wedge_apply(&x, &x, &z).unwrap();
        assert!(w.coords().iter().all(|c| c.abs() < 1e-15));
        let w = wedge_apply(&x, &y, &y).unwrap();
        assert_eq!(w.coords(), x.coords());
        let other = HPoint::lift(&[0.1, 0.0, 0.0]);
        let bad = TangentVec::zero(other);
        assert!(matches!(wedge_apply(&x, &bad, &z), Err(Error::BaseMismatch)));
    }

    #[test]
    fn transport_examples() {
        let p = HPoint::lift(&[0.3, -0.2]);
        let q = HPoint::lift(&[-0.5, 1.1]);
        let v = tv(&p, &[0.0, 0.7, 0.4]);
        let same = parallel_transport(&p, &v).unwrap();
        for (a, b) in same.coords().iter().zip(v.coords()) {
            assert!((a - b).abs() < 1e-15);
        }
        let back = parallel_transport(&p, &parallel_transport(&q, &v).unwrap()).unwrap();
        for (a, b) in back.coords().iter().zip(v.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_frame_is_positive_orthonormal() {
        for x in [[0.0, 0.0], [2.0, -1.0], [0.0, 3.0], [-4.0, 0.5]] {
            let p = HPoint::lift(&x);
            let f = OrthoFrame::seeded(&p);
            OrthoFrame::new(p, f.cols().to_vec()).unwrap();
        }
        let s = OrthoFrame::standard(3);
        assert_eq!(OrthoFrame::seeded(s.base()), s);
    }

    #[test]
    fn lorentz_matrices_preserve_the_form() {
        let u = boost(2, 1, 0.7);
        let r = spatial_rotation(2, 1, 2, 0.3);
        let p = HPoint::lift(&[0.4, -0.9]);
        for mat in [&u, &r] {
            let q = p.transformed(mat);
            assert!((kernel::mink(q.coords(), q.coords()) + 1.0).abs() < 1e-13);
        }
    }
}
