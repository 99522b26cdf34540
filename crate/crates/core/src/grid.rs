//! Fields sampled on a periodic square grid, the linear heat propagator, and
//! the norms and functional-inequality ratios used throughout.
//!
//! The domain is `[-L, L)^2` with `n` nodes per side. Node `(i, j)` sits at
//! `x = (-L + i h, -L + j h)` and is stored at flat index `j * n + i`.
//! Multi-component fields interleave components per node.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hyperbolic::{kernel, HPoint, TOL_CONSTRAINT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    n: usize,
    half_width: f64,
}

impl Grid2D {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(invalid(format!("n must be a power of two >= 4, got {n}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(invalid(format!("half width must be positive, got {half_width}")));
        }
        Ok(Self { n, half_width })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Physical half-width `L`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of a node.
    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h()
    }

    pub fn position(&self, idx: usize) -> (f64, f64) {
        (self.coord(idx % self.n), self.coord(idx / self.n))
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    /// Flat index of the node displaced by `(di, dj)` cells, wrapping.
    pub fn shifted(&self, idx: usize, di: isize, dj: isize) -> usize {
        let n = self.n as isize;
        let i = (idx % self.n) as isize;
        let j = (idx / self.n) as isize;
        let i2 = (i + di).rem_euclid(n) as usize;
        let j2 = (j + dj).rem_euclid(n) as usize;
        j2 * self.n + i2
    }

    /// Same nodes, physical size scaled by `lambda`.
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        Self::new(self.n, self.half_width * lambda)
    }

    pub fn same_as(&self, other: &Grid2D) -> bool {
        self.n == other.n && (self.half_width - other.half_width).abs() <= 1e-12 * self.half_width
    }

    pub fn check_same(&self, other: &Grid2D) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// A real field with `ncomp` components per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid2D,
    ncomp: usize,
    data: Vec<f64>,
}

/// One-component field.
pub type ScalarField = Field;

impl Field {
    pub fn zeros(grid: Grid2D, ncomp: usize) -> Self {
        Self {
            grid,
            ncomp,
            data: vec![0.0; grid.len() * ncomp],
        }
    }

    pub fn from_vec(grid: Grid2D, ncomp: usize, data: Vec<f64>) -> Result<Self> {
        if ncomp == 0 || data.len() != grid.len() * ncomp {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * ncomp,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("field contains non-finite values"));
        }
        Ok(Self { grid, ncomp, data })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid2D, ncomp: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), grid.len() * ncomp);
        Self { grid, ncomp, data }
    }

    pub fn scalar_from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let data = (0..grid.len())
            .map(|idx| {
                let (x1, x2) = grid.position(idx);
                f(x1, x2)
            })
            .collect();
        Self {
            grid,
            ncomp: 1,
            data,
        }
    }

    pub fn from_fn(grid: Grid2D, ncomp: usize, f: impl Fn(f64, f64, &mut [f64])) -> Self {
        let mut data = vec![0.0; grid.len() * ncomp];
        for (idx, node) in data.chunks_mut(ncomp).enumerate() {
            let (x1, x2) = grid.position(idx);
            f(x1, x2, node);
        }
        Self { grid, ncomp, data }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn node(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.ncomp..(idx + 1) * self.ncomp]
    }

    pub fn node_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.ncomp..(idx + 1) * self.ncomp]
    }

    pub fn component(&self, c: usize) -> Field {
        let data = self.data.iter().skip(c).step_by(self.ncomp).copied().collect();
        Self {
            grid: self.grid,
            ncomp: 1,
            data,
        }
    }

    pub fn from_components(parts: &[Field]) -> Result<Field> {
        let grid = *parts.first().ok_or_else(|| invalid("no components"))?.grid();
        let ncomp = parts.len();
        let mut data = vec![0.0; grid.len() * ncomp];
        for (c, p) in parts.iter().enumerate() {
            grid.check_same(p.grid())?;
            if p.ncomp != 1 {
                return Err(invalid("components must be scalar fields"));
            }
            for (idx, v) in p.data.iter().enumerate() {
                data[idx * ncomp + c] = *v;
            }
        }
        Ok(Field { grid, ncomp, data })
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> Field {
        let data = self
            .data
            .chunks(self.ncomp)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        Field {
            grid: self.grid,
            ncomp: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            ncomp: self.ncomp,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|x| c * x)
    }

    fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        if self.ncomp != other.ncomp {
            return Err(Error::DimensionMismatch {
                expected: self.ncomp,
                got: other.ncomp,
            });
        }
        Ok(Field {
            grid: self.grid,
            ncomp: self.ncomp,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Field) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.ncomp != other.ncomp {
            return Err(Error::DimensionMismatch {
                expected: self.ncomp,
                got: other.ncomp,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// `h^2 * sum` of all entries.
    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * self.data.iter().sum::<f64>()
    }

    /// `h^2 * sum |v|^2`.
    pub fn l2_sq(&self) -> f64 {
        self.grid.cell_area() * self.data.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn sup(&self) -> f64 {
        self.data
            .chunks(self.ncomp)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Values at the same nodes of a grid scaled by `lambda`, i.e. `u(x / lambda)`.
    pub fn dilated(&self, lambda: f64) -> Result<Field> {
        Ok(Field {
            grid: self.grid.dilated(lambda)?,
            ncomp: self.ncomp,
            data: self.data.clone(),
        })
    }

    /// Cyclic shift by whole cells: the result at `x` is the input at `x - (di, dj) h`.
    pub fn translated(&self, di: isize, dj: isize) -> Field {
        let mut out = vec![0.0; self.data.len()];
        let k = self.ncomp;
        for idx in 0..self.grid.len() {
            let src = self.grid.shifted(idx, -di, -dj);
            out[idx * k..(idx + 1) * k].copy_from_slice(&self.data[src * k..(src + 1) * k]);
        }
        Field {
            grid: self.grid,
            ncomp: k,
            data: out,
        }
    }
}

/// 5-point Laplacian with periodic wrap, per component.
pub fn laplacian(f: &Field) -> Field {
    let g = f.grid;
    let n = g.n;
    let k = f.ncomp;
    let inv = 1.0 / (g.h() * g.h());
    let mut out = vec![0.0; f.data.len()];
    for j in 0..n {
        let jp = (j + 1) % n;
        let jm = (j + n - 1) % n;
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            let c = (j * n + i) * k;
            let e = (j * n + ip) * k;
            let w = (j * n + im) * k;
            let no = (jp * n + i) * k;
            let so = (jm * n + i) * k;
            for q in 0..k {
                out[c + q] = inv
                    * (f.data[e + q] + f.data[w + q] + f.data[no + q] + f.data[so + q]
                        - 4.0 * f.data[c + q]);
            }
        }
    }
    Field::from_vec_unchecked(g, k, out)
}

/// Centered first differences along both axes.
pub fn grad(f: &Field) -> [Field; 2] {
    [diff(f, 0), diff(f, 1)]
}

/// Centered difference along `axis` (0 for x1, 1 for x2).
pub fn diff(f: &Field, axis: usize) -> Field {
    let g = f.grid;
    let k = f.ncomp;
    let inv = 0.5 / g.h();
    let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
    let mut out = vec![0.0; f.data.len()];
    for idx in 0..g.len() {
        let p = g.shifted(idx, di, dj) * k;
        let m = g.shifted(idx, -di, -dj) * k;
        for q in 0..k {
            out[idx * k + q] = inv * (f.data[p + q] - f.data[m + q]);
        }
    }
    Field::from_vec_unchecked(g, k, out)
}

/// Forward difference along `axis`.
pub fn forward_diff(f: &Field, axis: usize) -> Field {
    let g = f.grid;
    let k = f.ncomp;
    let inv = 1.0 / g.h();
    let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
    let mut out = vec![0.0; f.data.len()];
    for idx in 0..g.len() {
        let p = g.shifted(idx, di, dj) * k;
        for q in 0..k {
            out[idx * k + q] = inv * (f.data[p + q] - f.data[idx * k + q]);
        }
    }
    Field::from_vec_unchecked(g, k, out)
}

/// Second difference `d_a d_b` (3-point when `a == b`, centered mixed otherwise).
pub fn second_diff(f: &Field, a: usize, b: usize) -> Field {
    if a != b {
        return diff(&diff(f, a), b);
    }
    let g = f.grid;
    let k = f.ncomp;
    let inv = 1.0 / (g.h() * g.h());
    let (di, dj) = if a == 0 { (1, 0) } else { (0, 1) };
    let mut out = vec![0.0; f.data.len()];
    for idx in 0..g.len() {
        let p = g.shifted(idx, di, dj) * k;
        let m = g.shifted(idx, -di, -dj) * k;
        for q in 0..k {
            out[idx * k + q] = inv * (f.data[p + q] - 2.0 * f.data[idx * k + q] + f.data[m + q]);
        }
    }
    Field::from_vec_unchecked(g, k, out)
}

/// Pointwise norm of the full derivative tensor of order `order`
/// (`|d^k u|^2 = sum over ordered multi-indices`).
pub fn derivative_magnitude(f: &Field, order: usize) -> Field {
    let mut layer = vec![f.clone()];
    for _ in 0..order {
        layer = layer
            .iter()
            .flat_map(|u| [diff(u, 0), diff(u, 1)])
            .collect();
    }
    let g = f.grid;
    let mut out = vec![0.0; g.len()];
    for part in &layer {
        for (o, v) in out.iter_mut().zip(part.data.chunks(part.ncomp)) {
            *o += v.iter().map(|x| x * x).sum::<f64>();
        }
    }
    Field::from_vec_unchecked(g, 1, out.into_iter().map(f64::sqrt).collect())
}

/// FFT-based operators on one grid. Wavenumbers are `xi = pi k / L`.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid2D,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    xi: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid2D) -> Self {
        let n = grid.n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let xi = (0..n)
            .map(|k| {
                let ks = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                std::f64::consts::PI * ks / grid.half_width
            })
            .collect();
        Self { grid, fwd, inv, xi }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    fn transform(&self, buf: &mut [Complex<f64>], forward: bool) {
        let n = self.grid.n;
        let plan = if forward { &self.fwd } else { &self.inv };
        plan.process(buf);
        let mut t = vec![Complex::new(0.0, 0.0); buf.len()];
        transpose(buf, &mut t, n);
        plan.process(&mut t);
        transpose(&t, buf, n);
    }

    /// Apply the Fourier multiplier `mult(xi1, xi2)` to every component.
    pub fn apply_multiplier(
        &self,
        f: &Field,
        mult: impl Fn(f64, f64) -> Complex<f64>,
    ) -> Result<Field> {
        self.grid.check_same(f.grid())?;
        let n = self.grid.n;
        let k = f.ncomp;
        let norm = 1.0 / (n * n) as f64;
        let mut out = vec![0.0; f.data.len()];
        let mut buf = vec![Complex::new(0.0, 0.0); n * n];
        let mut symbol = vec![Complex::new(0.0, 0.0); n * n];
        for j in 0..n {
            for i in 0..n {
                symbol[j * n + i] = mult(self.xi[i], self.xi[j]) * norm;
            }
        }
        for q in 0..k {
            for (b, v) in buf.iter_mut().zip(f.data.iter().skip(q).step_by(k)) {
                *b = Complex::new(*v, 0.0);
            }
            self.transform(&mut buf, true);
            for (b, s) in buf.iter_mut().zip(&symbol) {
                *b *= s;
            }
            self.transform(&mut buf, false);
            for (idx, b) in buf.iter().enumerate() {
                out[idx * k + q] = b.re;
            }
        }
        Ok(Field::from_vec_unchecked(self.grid, k, out))
    }

    /// `e^{s Delta} f` with the exact torus symbol `exp(-s |xi|^2)`.
    pub fn heat(&self, f: &Field, s: f64) -> Result<Field> {
        if !(s >= 0.0) {
            return Err(invalid(format!("heat time must be nonnegative, got {s}")));
        }
        if s == 0.0 {
            return Ok(f.clone());
        }
        self.apply_multiplier(f, |a, b| Complex::new((-s * (a * a + b * b)).exp(), 0.0))
    }

    /// Spectral derivative along `axis`. The Nyquist mode is dropped.
    pub fn derivative(&self, f: &Field, axis: usize) -> Result<Field> {
        let nyq = std::f64::consts::PI * (self.grid.n / 2) as f64 / self.grid.half_width;
        self.apply_multiplier(f, |a, b| {
            let x = if axis == 0 { a } else { b };
            if (x.abs() - nyq).abs() < 1e-9 * nyq {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(0.0, x)
            }
        })
    }

    pub fn laplacian(&self, f: &Field) -> Result<Field> {
        self.apply_multiplier(f, |a, b| Complex::new(-(a * a + b * b), 0.0))
    }
}

fn transpose(src: &[Complex<f64>], dst: &mut [Complex<f64>], n: usize) {
    for j in 0..n {
        for i in 0..n {
            dst[i * n + j] = src[j * n + i];
        }
    }
}

/// `e^{s Delta} f` on the torus.
pub fn heat_propagate(f: &Field, s: f64) -> Result<Field> {
    Spectral::new(*f.grid()).heat(f, s)
}

/// Which norm [`norm`] computes. Vector-valued fields are measured through
/// their pointwise Euclidean magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Norm {
    Lp(f64),
    Linf,
    /// `max_{j <= k} sup |d^j u|`, derivatives by centered differences.
    Ck(usize),
    /// Supremum over unit disks of the L1 mass.
    L1loc,
}

pub fn norm(f: &Field, which: Norm) -> Result<f64> {
    match which {
        Norm::Lp(p) if p < 1.0 => Err(invalid(format!("Lp norm needs p >= 1, got {p}"))),
        Norm::Lp(p) if p.is_infinite() => Ok(f.sup()),
        Norm::Lp(p) => {
            let mag = f.magnitude();
            let s: f64 = mag.data.iter().map(|x| x.powf(p)).sum();
            Ok((f.grid.cell_area() * s).powf(1.0 / p))
        }
        Norm::Linf => Ok(f.sup()),
        Norm::Ck(k) => Ok((0..=k)
            .map(|j| derivative_magnitude(f, j).sup())
            .fold(0.0, f64::max)),
        Norm::L1loc => Ok(l1loc(&f.magnitude(), 1.0)),
    }
}

/// Offsets `(di, dj)` of nodes within physical distance `radius` of a node.
pub fn disk_offsets(grid: &Grid2D, radius: f64) -> Vec<(isize, isize)> {
    let h = grid.h();
    let r = (radius / h).floor() as isize;
    let r = r.min(grid.n as isize / 2 - 1);
    let mut out = Vec::new();
    for dj in -r..=r {
        for di in -r..=r {
            let d2 = ((di * di + dj * dj) as f64) * h * h;
            if d2 <= radius * radius * (1.0 + 1e-12) {
                out.push((di, dj));
            }
        }
    }
    out
}

/// Maximum over node-centred disks of radius `radius` of `sum h^2 |f|`.
pub fn l1loc(f: &Field, radius: f64) -> f64 {
    let g = f.grid;
    let offsets = disk_offsets(&g, radius);
    let n = g.n as isize;
    let mag: Vec<f64> = f
        .data
        .chunks(f.ncomp)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut best: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let mut acc = 0.0;
            for &(di, dj) in &offsets {
                let ii = (i + di).rem_euclid(n);
                let jj = (j + dj).rem_euclid(n);
                acc += mag[(jj * n + ii) as usize];
            }
            best = best.max(acc);
        }
    }
    best * g.cell_area()
}

/// A Gagliardo-Nirenberg inequality, returned by [`gn_ratio`] as LHS / RHS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum GnVariant {
    /// `|d^k u|_p <~ |u|_p^{1/2} |d^{2k} u|_p^{1/2}`
    Gag1 { k: usize, p: f64 },
    /// `|u|_inf <~ |u|_2^{1/2} |d^2 u|_2^{1/2}`
    Gag2,
    /// `|u|_inf <~ |u|_2^{1/3} |du|_4^{2/3}`
    Gag3,
    /// `|u|_4 <~ |u|_2^{1/2} |du|_2^{1/2}`
    Gag4,
    /// `|u|_2 <~ |u|_1^{1/2} |d^2 u|_1^{1/2}`
    Gag6,
}

impl GnVariant {
    pub fn name(&self) -> String {
        match self {
            GnVariant::Gag1 { k, p } => format!("gag-1(k={k},p={p})"),
            GnVariant::Gag2 => "gag-2".into(),
            GnVariant::Gag3 => "gag-3".into(),
            GnVariant::Gag4 => "gag-4".into(),
            GnVariant::Gag6 => "gag-6".into(),
        }
    }

    pub fn all() -> Vec<GnVariant> {
        vec![
            GnVariant::Gag1 { k: 1, p: 2.0 },
            GnVariant::Gag2,
            GnVariant::Gag3,
            GnVariant::Gag4,
            GnVariant::Gag6,
        ]
    }
}

fn lp_of(f: &Field, p: f64) -> f64 {
    if p.is_infinite() {
        f.sup()
    } else {
        let s: f64 = f.data.iter().map(|x| x.abs().powf(p)).sum();
        (f.grid.cell_area() * s).powf(1.0 / p)
    }
}

pub fn gn_ratio(u: &Field, variant: GnVariant) -> Result<f64> {
    let d = |k: usize| derivative_magnitude(u, k);
    let (lhs, rhs) = match variant {
        GnVariant::Gag1 { k, p } => {
            if p < 1.0 {
                return Err(invalid(format!("p must be >= 1, got {p}")));
            }
            (
                lp_of(&d(k), p),
                (lp_of(&d(0), p) * lp_of(&d(2 * k), p)).sqrt(),
            )
        }
        GnVariant::Gag2 => (u.sup(), (lp_of(&d(0), 2.0) * lp_of(&d(2), 2.0)).sqrt()),
        GnVariant::Gag3 => (
            u.sup(),
            lp_of(&d(0), 2.0).powf(1.0 / 3.0) * lp_of(&d(1), 4.0).powf(2.0 / 3.0),
        ),
        GnVariant::Gag4 => (
            lp_of(&d(0), 4.0),
            (lp_of(&d(0), 2.0) * lp_of(&d(1), 2.0)).sqrt(),
        ),
        GnVariant::Gag6 => (
            lp_of(&d(0), 2.0),
            (lp_of(&d(0), 1.0) * lp_of(&d(2), 1.0)).sqrt(),
        ),
    };
    if !(rhs > 0.0) {
        return Err(Error::Degenerate(format!(
            "{} has a vanishing right-hand side",
            variant.name()
        )));
    }
    Ok(lhs / rhs)
}

/// Geometric ladder `s_min * ratio^j` covering `[s_min, s_max]`; the last
/// rung is the first one at or above `s_max`.
pub fn geometric_ladder(s_min: f64, ratio: f64, s_max: f64) -> Result<Vec<f64>> {
    if !(s_min > 0.0) || !(ratio > 1.0) || !(s_max >= s_min) {
        return Err(invalid(format!(
            "bad ladder: s_min={s_min}, ratio={ratio}, s_max={s_max}"
        )));
    }
    let mut out = vec![s_min];
    let mut j = 0i32;
    while *out.last().unwrap() < s_max * (1.0 - 1e-12) {
        j += 1;
        out.push(s_min * ratio.powi(j));
    }
    Ok(out)
}

/// Quadrature weights for `int f ds` over ladder nodes `s` (increasing, the
/// first may be 0): linear trapezoid on `[0, s_1]`, trapezoid in `log s`
/// above it. The last rung carries a full one-sided log-width so that
/// ladders which agree on a prefix have identical weights there.
pub fn ladder_weights(s: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; s.len()];
    if s.is_empty() {
        return w;
    }
    let start = if s[0] == 0.0 {
        if s.len() > 1 {
            w[0] = 0.5 * s[1];
            w[1] = 0.5 * s[1];
        }
        1
    } else {
        0
    };
    let geo = &s[start..];
    let k = geo.len();
    for a in 0..k {
        let lo = if a > 0 { (geo[a] / geo[a - 1]).ln() } else { 0.0 };
        let hi = if a + 1 < k {
            (geo[a + 1] / geo[a]).ln()
        } else if a > 0 {
            (geo[a] / geo[a - 1]).ln()
        } else {
            0.0
        };
        w[start + a] += 0.5 * geo[a] * (lo + hi);
    }
    w
}

/// `int_0^{s_max} s^{-2/p} |e^{s Delta} u|_p^2 ds / |u|_2^2`, over a
/// geometric ladder from `s_min`; on `[0, s_min]` the propagator is taken as
/// the identity.
pub fn strichartz_functional(u: &Field, p: f64, s_min: f64, ratio: f64, s_max: f64) -> Result<f64> {
    if !(p > 2.0) {
        return Err(invalid(format!("Strichartz exponent must exceed 2, got {p}")));
    }
    let l2 = u.l2_sq();
    if l2 == 0.0 {
        return Ok(0.0);
    }
    let spec = Spectral::new(*u.grid());
    let ladder = geometric_ladder(s_min, ratio, s_max)?;
    let w = ladder_weights(&ladder);
    let a = 1.0 - 2.0 / p;
    let lp_u = norm(u, Norm::Lp(p))?;
    let mut total = s_min.powf(a) / a * lp_u * lp_u;
    for (s, wj) in ladder.iter().zip(&w) {
        let v = spec.heat(u, *s)?;
        let n = norm(&v, Norm::Lp(p))?;
        // the first rung is a half-weight endpoint of the log-trapezoid
        total += wj * s.powf(-2.0 / p) * n * n;
    }
    Ok(total / l2)
}

/// Duhamel's formula on `[s0, s1]` with composite Simpson quadrature over
/// `panels` (rounded up to even) subintervals.
pub fn duhamel_solve(
    initial: &Field,
    forcing: impl Fn(f64) -> Field,
    s0: f64,
    s1: f64,
    panels: usize,
) -> Result<Field> {
    if !(s1 > s0) {
        return Err(invalid(format!("need s0 < s1, got {s0} >= {s1}")));
    }
    let spec = Spectral::new(*initial.grid());
    let mut out = spec.heat(initial, s1 - s0)?;
    let panels = (panels.max(2) + 1) & !1;
    let ds = (s1 - s0) / panels as f64;
    for k in 0..=panels {
        let s = s0 + k as f64 * ds;
        let wk = if k == 0 || k == panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = forcing(s);
        initial.grid().check_same(f.grid())?;
        let prop = spec.heat(&f, s1 - s)?;
        out.axpy(wk * ds / 3.0, &prop)?;
    }
    Ok(out)
}

/// A grid-sampled map into H^m.
#[derive(Debug, Clone, PartialEq)]
pub struct MapField {
    field: Field,
    at_infinity: HPoint,
    support_radius: Option<f64>,
}

impl MapField {
    /// Validates the hyperboloid constraint at every node.
    pub fn new(field: Field, at_infinity: HPoint) -> Result<Self> {
        let d = at_infinity.m() + 1;
        if field.ncomp != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: field.ncomp,
            });
        }
        for (idx, p) in field.data.chunks(d).enumerate() {
            let c = kernel::mink(p, p) + 1.0;
            if c.abs() > 1e3 * TOL_CONSTRAINT * p[0] * p[0] || p[0] <= 0.0 {
                return Err(invalid(format!(
                    "node {idx} is off the hyperboloid (<p,p>+1 = {c:e})"
                )));
            }
        }
        Ok(Self {
            field,
            at_infinity,
            support_radius: None,
        })
    }

    pub(crate) fn from_parts(field: Field, at_infinity: HPoint) -> Self {
        Self {
            field,
            at_infinity,
            support_radius: None,
        }
    }

    /// The constant map.
    pub fn constant(grid: Grid2D, p: &HPoint) -> Self {
        let d = p.coords().len();
        let mut data = Vec::with_capacity(grid.len() * d);
        for _ in 0..grid.len() {
            data.extend_from_slice(p.coords());
        }
        Self::from_parts(Field::from_vec_unchecked(grid, d, data), p.clone())
    }

    /// Declare that the map equals `at_infinity` outside `|x| > radius`.
    /// Requires `radius <= L/2`; nodes outside are checked to within `tol`.
    pub fn with_support(mut self, radius: f64, tol: f64) -> Result<Self> {
        let g = self.field.grid;
        if radius > 0.5 * g.half_width() {
            return Err(invalid(format!(
                "support radius {radius} exceeds half the domain half-width {}",
                g.half_width()
            )));
        }
        let d = self.m() + 1;
        for idx in 0..g.len() {
            let (x1, x2) = g.position(idx);
            if x1.hypot(x2) > radius {
                let dist = kernel::dist(self.field.node(idx), self.at_infinity.coords());
                if dist > tol {
                    return Err(invalid(format!(
                        "map differs from its value at infinity by {dist:e} outside radius {radius}"
                    )));
                }
            }
        }
        debug_assert_eq!(d, self.field.ncomp);
        self.support_radius = Some(radius);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.at_infinity.m()
    }

    pub fn grid(&self) -> &Grid2D {
        &self.field.grid
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn into_field(self) -> Field {
        self.field
    }

    pub fn at_infinity(&self) -> &HPoint {
        &self.at_infinity
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    pub fn point(&self, idx: usize) -> HPoint {
        HPoint::from_raw(self.field.node(idx).to_vec())
    }

    /// Largest violation of `<p,p> = -1` over the grid.
    pub fn constraint_violation(&self) -> f64 {
        self.field
            .data
            .chunks(self.field.ncomp)
            .map(|p| (kernel::mink(p, p) + 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest geodesic distance from `at_infinity`.
    pub fn max_distance_from_infinity(&self) -> f64 {
        self.field
            .data
            .chunks(self.field.ncomp)
            .map(|p| kernel::dist(p, self.at_infinity.coords()))
            .fold(0.0, f64::max)
    }

    /// Pointwise `|d_x phi|^2 = sum_i <d_i phi, d_i phi>` with centered differences.
    pub fn grad_energy_density(&self) -> Field {
        let g = grad(&self.field);
        let d = self.field.ncomp;
        let out = g[0]
            .data
            .chunks(d)
            .zip(g[1].data.chunks(d))
            .zip(self.field.data.chunks(d))
            .map(|((a, b), p)| {
                let mut a = a.to_vec();
                let mut b = b.to_vec();
                kernel::tangent_project(p, &mut a);
                kernel::tangent_project(p, &mut b);
                kernel::mink(&a, &a) + kernel::mink(&b, &b)
            })
            .collect();
        Field::from_vec_unchecked(self.field.grid, 1, out)
    }

    /// Replace the map by `Field` data of the same shape.
    pub(crate) fn with_field(&self, field: Field) -> Self {
        Self {
            field,
            at_infinity: self.at_infinity.clone(),
            support_radius: self.support_radius,
        }
    }
}

/// A grid-sampled section of `phi^* T H^m`, stored as ambient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    field: Field,
}

impl TangentField {
    /// Checks tangency at every node of `base`.
    pub fn new(base: &MapField, field: Field) -> Result<Self> {
        base.grid().check_same(field.grid())?;
        let d = base.m() + 1;
        if field.ncomp != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: field.ncomp,
            });
        }
        for (idx, (v, p)) in field
            .data
            .chunks(d)
            .zip(base.field.data.chunks(d))
            .enumerate()
        {
            let c = kernel::mink(v, p);
            let scale = 1.0 + v.iter().map(|x| x.abs()).fold(0.0, f64::max) * p[0];
            if c.abs() > 1e3 * TOL_CONSTRAINT * scale {
                return Err(invalid(format!("node {idx} is not tangent (<v,p> = {c:e})")));
            }
        }
        Ok(Self { field })
    }

    /// Tangent-project an arbitrary ambient field onto `base`.
    pub fn projected(base: &MapField, mut field: Field) -> Result<Self> {
        base.grid().check_same(field.grid())?;
        let d = base.m() + 1;
        if field.ncomp != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: field.ncomp,
            });
        }
        for (v, p) in field.data.chunks_mut(d).zip(base.field.data.chunks(d)) {
            kernel::tangent_project(p, v);
        }
        Ok(Self { field })
    }

    pub(crate) fn from_field_unchecked(field: Field) -> Self {
        Self { field }
    }

    pub fn zeros(base: &MapField) -> Self {
        Self {
            field: Field::zeros(*base.grid(), base.m() + 1),
        }
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn into_field(self) -> Field {
        self.field
    }

    pub fn grid(&self) -> &Grid2D {
        &self.field.grid
    }

    /// Pointwise squared length `<v,v>`.
    pub fn norm_sq_density(&self) -> Field {
        let d = self.field.ncomp;
        let out = self.field.data.chunks(d).map(|v| kernel::mink(v, v).max(0.0)).collect();
        Field::from_vec_unchecked(self.field.grid, 1, out)
    }

    /// Largest `|<v, p>|` against `base`.
    pub fn tangency_violation(&self, base: &MapField) -> f64 {
        let d = self.field.ncomp;
        self.field
            .data
            .chunks(d)
            .zip(base.field.data.chunks(d))
            .map(|(v, p)| kernel::mink(v, p).abs())
            .fold(0.0, f64::max)
    }
}
