//! Lattice convolutions: bubble and triangle diagrams, the torus triangle,
//! image sums, and radial power-law convolutions with rigorous tail bounds.

use std::sync::Arc;

use rustc_hash::FxHashMap;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{PercError, Result};
use crate::lattice::linf;

/// Largest grid (entries) that may be materialised densely.
pub const MAX_GRID_LEN: usize = 1 << 26;

/// Largest volume convolved by direct summation under [`Method::Auto`].
pub const DIRECT_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    /// Truncated `Z^d`: the box `Lambda_radius`.
    Box { radius: i64 },
    /// The whole torus `T_r^d`.
    Torus { period: i64 },
}

impl Shape {
    pub fn side(&self) -> i64 {
        match *self {
            Shape::Box { radius } => 2 * radius + 1,
            Shape::Torus { period } => period,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Shape::Torus { .. })
    }
}

/// What is known about a box grid's function outside the box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tail {
    /// Zero outside the box.
    Vanishing,
    /// `|f(y)| <= amplitude * |y|_inf^{-exponent}` outside the box.
    PowerLaw { amplitude: f64, exponent: f64 },
    /// Nothing is known; truncation errors are unbounded.
    Unknown,
}

/// Values on `Lambda_rho` or on `T_r^d`, stored densely.
///
/// Torus entries sit at `c mod r` along each axis, so the origin is index 0;
/// box entries sit at `c + rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    shape: Shape,
    values: Vec<f64>,
    tail: Tail,
    /// Truncation error bound, by l-infinity norm of the output point.
    error_bound: Option<Vec<f64>>,
}

impl Grid {
    pub fn zeros(dim: usize, shape: Shape) -> Result<Self> {
        if dim == 0 {
            return Err(PercError::invalid("dimension", "must be at least 1"));
        }
        match shape {
            Shape::Box { radius } if radius < 0 => return Err(PercError::invalid("radius", "must be nonnegative")),
            Shape::Torus { period } if period < 1 => return Err(PercError::invalid("period", "must be positive")),
            _ => {}
        }
        let side = shape.side() as u128;
        let len = side.checked_pow(dim as u32).filter(|&n| n <= MAX_GRID_LEN as u128).ok_or_else(|| {
            PercError::invalid("grid", format!("side {side} in dimension {dim} exceeds {MAX_GRID_LEN} entries"))
        })?;
        Ok(Grid { dim, shape, values: vec![0.0; len as usize], tail: Tail::Vanishing, error_bound: None })
    }

    pub fn from_values(dim: usize, shape: Shape, values: Vec<f64>) -> Result<Self> {
        let mut g = Grid::zeros(dim, shape)?;
        if values.len() != g.values.len() {
            return Err(PercError::ShapeMismatch(format!("expected {} values, got {}", g.values.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(PercError::invalid("values", format!("{v} is not a finite nonnegative number")));
        }
        g.values = values;
        Ok(g)
    }

    pub fn from_fn(dim: usize, shape: Shape, mut f: impl FnMut(&[i64]) -> f64) -> Result<Self> {
        let mut g = Grid::zeros(dim, shape)?;
        let mut x = vec![0i64; dim];
        for i in 0..g.values.len() {
            g.coords_into(i, &mut x);
            g.values[i] = f(&x);
        }
        Grid::from_values(dim, shape, g.values)
    }

    /// Point mass at the origin.
    pub fn delta(dim: usize, shape: Shape) -> Result<Self> {
        let mut g = Grid::zeros(dim, shape)?;
        let i = g.index_of(&vec![0; dim]).expect("origin");
        g.values[i] = 1.0;
        Ok(g)
    }

    pub fn with_tail(mut self, tail: Tail) -> Self {
        self.tail = tail;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Truncation error bound at `x` (zero on the torus).
    pub fn error_bound_at(&self, x: &[i64]) -> f64 {
        match (&self.error_bound, self.shape) {
            (_, Shape::Torus { .. }) => 0.0,
            (Some(b), _) => b.get(linf(x) as usize).copied().unwrap_or(f64::INFINITY),
            (None, _) => 0.0,
        }
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let side = self.shape.side();
        let mut idx = 0usize;
        for &c in x.iter().rev() {
            let k = match self.shape {
                Shape::Box { radius } => {
                    if c.abs() > radius {
                        return None;
                    }
                    c + radius
                }
                Shape::Torus { period } => c.rem_euclid(period),
            };
            idx = idx * side as usize + k as usize;
        }
        Some(idx)
    }

    fn coords_into(&self, mut i: usize, x: &mut [i64]) {
        let side = self.shape.side() as usize;
        for c in x.iter_mut() {
            let k = (i % side) as i64;
            i /= side;
            *c = match self.shape {
                Shape::Box { radius } => k - radius,
                Shape::Torus { period } => crate::lattice::wrap_coord(k, period),
            };
        }
    }

    /// Coordinates of entry `i` (torus points in the canonical window).
    pub fn coords_of(&self, i: usize) -> Vec<i64> {
        let mut x = vec![0; self.dim];
        self.coords_into(i, &mut x);
        x
    }

    /// Value at `x`; zero off a box grid.
    pub fn get(&self, x: &[i64]) -> f64 {
        self.index_of(x).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, x: &[i64], v: f64) -> Result<()> {
        let i = self.index_of(x).ok_or_else(|| PercError::invalid("x", "outside the grid"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(PercError::invalid("value", format!("{v} is not a finite nonnegative number")));
        }
        self.values[i] = v;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<i64>, f64)> + '_ {
        (0..self.values.len()).map(move |i| (self.coords_of(i), self.values[i]))
    }

    pub fn sum(&self) -> f64 {
        crate::sampling::pairwise_sum(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Average over the orbits of coordinate sign flips and permutations.
    pub fn symmetrize(&mut self) {
        let mut x = vec![0i64; self.dim];
        let keys: Vec<Vec<i64>> = (0..self.values.len())
            .map(|i| {
                self.coords_into(i, &mut x);
                let mut k: Vec<i64> = x.iter().map(|c| c.abs()).collect();
                k.sort_unstable();
                k
            })
            .collect();
        let mut acc: FxHashMap<&[i64], (f64, u32)> = FxHashMap::default();
        for (k, v) in keys.iter().zip(&self.values) {
            let e = acc.entry(k.as_slice()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        for (k, v) in keys.iter().zip(self.values.iter_mut()) {
            let (s, n) = acc[k.as_slice()];
            *v = s / n as f64;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Direct summation up to [`DIRECT_LIMIT`] entries, FFT above.
    Auto,
    Direct,
    Fft,
}

/// `a * b`: cyclic on the torus (exact); on boxes, the sum over pairs inside
/// the box with the omitted pairs bounded from the declared tails.
pub fn convolve(a: &Grid, b: &Grid) -> Result<Grid> {
    convolve_with(a, b, Method::Auto)
}

pub fn convolve_with(a: &Grid, b: &Grid, method: Method) -> Result<Grid> {
    if a.dim != b.dim || a.shape != b.shape {
        return Err(PercError::ShapeMismatch(format!(
            "{:?} in d={} against {:?} in d={}",
            a.shape, a.dim, b.shape, b.dim
        )));
    }
    let direct = match method {
        Method::Direct => true,
        Method::Fft => false,
        Method::Auto => a.len() <= DIRECT_LIMIT,
    };
    let mut out = Grid::zeros(a.dim, a.shape)?;
    out.values = match (a.shape, direct) {
        (Shape::Torus { .. }, true) => torus_direct(a, b),
        (Shape::Torus { period }, false) => fft_cyclic(&a.values, &b.values, period as usize, a.dim),
        (Shape::Box { radius }, true) => box_direct(a, b, radius),
        (Shape::Box { radius }, false) => box_fft(a, b, radius),
    };
    if let Shape::Box { radius } = a.shape {
        let ma = Majorant::from_grid(a, radius);
        let mb = Majorant::from_grid(b, radius);
        out.error_bound = Some(
            (0..=radius)
                .map(|s| outer_sum(a.dim, radius, a.tail, &mb, s) + outer_sum(a.dim, radius, b.tail, &ma, s))
                .collect(),
        );
        out.tail = Tail::Unknown;
    }
    Ok(out)
}

fn digits(i: usize, side: usize, d: usize) -> Vec<usize> {
    let mut t = i;
    (0..d)
        .map(|_| {
            let k = t % side;
            t /= side;
            k
        })
        .collect()
}

fn torus_direct(a: &Grid, b: &Grid) -> Vec<f64> {
    let side = a.shape.side() as usize;
    let d = a.dim;
    let n = a.len();
    let digs: Vec<Vec<usize>> = (0..n).map(|i| digits(i, side, d)).collect();
    (0..n)
        .map(|x| {
            let mut s = 0.0;
            for y in 0..n {
                let ay = a.values[y];
                if ay == 0.0 {
                    continue;
                }
                let mut idx = 0usize;
                for k in (0..d).rev() {
                    idx = idx * side + (digs[x][k] + side - digs[y][k]) % side;
                }
                s += ay * b.values[idx];
            }
            s
        })
        .collect()
}

fn box_direct(a: &Grid, b: &Grid, radius: i64) -> Vec<f64> {
    let n = a.len();
    let coords: Vec<Vec<i64>> = (0..n).map(|i| a.coords_of(i)).collect();
    let mut diff = vec![0i64; a.dim];
    (0..n)
        .map(|x| {
            let mut s = 0.0;
            for y in 0..n {
                let ay = a.values[y];
                if ay == 0.0 {
                    continue;
                }
                let mut inside = true;
                for k in 0..a.dim {
                    diff[k] = coords[x][k] - coords[y][k];
                    inside &= diff[k].abs() <= radius;
                }
                if inside {
                    s += ay * b.get(&diff);
                }
            }
            s
        })
        .collect()
}

/// Linear convolution via zero padding to side `4 rho + 1`, then the
/// central box.
fn box_fft(a: &Grid, b: &Grid, radius: i64) -> Vec<f64> {
    let m = (2 * radius + 1) as usize;
    let side = 4 * radius as usize + 1;
    let d = a.dim;
    let len = side.pow(d as u32);
    let embed = |g: &Grid| {
        let mut v = vec![0.0; len];
        for (i, &val) in g.values.iter().enumerate() {
            let dg = digits(i, m, d);
            let j = dg.iter().rev().fold(0usize, |acc, &k| acc * side + k);
            v[j] = val;
        }
        v
    };
    let full = fft_cyclic(&embed(a), &embed(b), side, d);
    // output x sits at x + 2 rho in the padded linear convolution
    (0..a.len())
        .map(|i| {
            let dg = digits(i, m, d);
            let j = dg.iter().rev().fold(0usize, |acc, &k| acc * side + k + radius as usize);
            full[j]
        })
        .collect()
}

fn fft_nd(buf: &mut [Complex64], side: usize, d: usize, fft: &Arc<dyn Fft<f64>>, scratch: &mut Vec<Complex64>) {
    let n = buf.len();
    scratch.resize(n, Complex64::new(0.0, 0.0));
    let mut stride = 1usize;
    for axis in 0..d {
        if axis == 0 {
            fft.process(buf);
        } else {
            let block = side * stride;
            let mut line = 0usize;
            for outer in (0..n).step_by(block) {
                for inner in 0..stride {
                    for k in 0..side {
                        scratch[line * side + k] = buf[outer + k * stride + inner];
                    }
                    line += 1;
                }
            }
            fft.process(scratch);
            line = 0;
            for outer in (0..n).step_by(block) {
                for inner in 0..stride {
                    for k in 0..side {
                        buf[outer + k * stride + inner] = scratch[line * side + k];
                    }
                    line += 1;
                }
            }
        }
        stride *= side;
    }
}

/// Cyclic convolution of two real arrays of shape `side^d`. Results of
/// nonnegative inputs are clamped at zero to remove rounding noise.
fn fft_cyclic(a: &[f64], b: &[f64], side: usize, d: usize) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(side);
    let inv = planner.plan_fft_inverse(side);
    let mut scratch = Vec::new();
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut fa, side, d, &fwd, &mut scratch);
    fft_nd(&mut fb, side, d, &fwd, &mut scratch);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    fft_nd(&mut fa, side, d, &inv, &mut scratch);
    let scale = 1.0 / fa.len() as f64;
    let nonneg = a.iter().chain(b).all(|&v| v >= 0.0);
    fa.iter()
        .map(|z| {
            let v = z.re * scale;
            if nonneg {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect()
}

/// `N_k`: points of `Z^d` with l-infinity norm exactly `k`.
fn shell_count(d: usize, k: i64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let k = k as f64;
    (2.0 * k + 1.0).powi(d as i32) - (2.0 * k - 1.0).powi(d as i32)
}

/// A nonincreasing radial majorant `M(t) >= sup_{|y|_inf >= t} |f(y)|`.
struct Majorant {
    /// `inner[t]` for `t` up to the last tabulated radius.
    inner: Vec<f64>,
    tail: Tail,
}

impl Majorant {
    fn from_radial(values: &[f64], tail: Tail) -> Self {
        let mut inner = values.iter().map(|v| v.abs()).collect::<Vec<_>>();
        for t in (0..inner.len().saturating_sub(1)).rev() {
            inner[t] = inner[t].max(inner[t + 1]);
        }
        Majorant { inner, tail }
    }

    fn from_grid(g: &Grid, radius: i64) -> Self {
        let mut shell_max = vec![0.0f64; radius as usize + 1];
        for (i, &v) in g.values.iter().enumerate() {
            let k = linf(&g.coords_of(i)) as usize;
            shell_max[k] = shell_max[k].max(v.abs());
        }
        Majorant::from_radial(&shell_max, g.tail)
    }

    fn outer(&self, t: i64) -> f64 {
        let last = self.inner.len() as i64 - 1;
        match self.tail {
            Tail::Vanishing => 0.0,
            Tail::PowerLaw { amplitude, exponent } => amplitude * (t.max(last + 1) as f64).powf(-exponent),
            Tail::Unknown => f64::INFINITY,
        }
    }

    fn at(&self, t: i64) -> f64 {
        let t = t.max(0);
        let out = self.outer(t);
        match self.inner.get(t as usize) {
            Some(&v) => v.max(out),
            None => out,
        }
    }
}

/// Bound on `sum_{|y|_inf > R} |f(y)| |g(x - y)|` for `|x|_inf = x_inf`,
/// where `f` beyond `R` obeys `tail_f` and `g` is majorised by `g_maj`.
fn outer_sum(d: usize, radius: i64, tail_f: Tail, g_maj: &Majorant, x_inf: i64) -> f64 {
    let (amp, alpha) = match tail_f {
        Tail::Vanishing => return 0.0,
        Tail::Unknown => return f64::INFINITY,
        Tail::PowerLaw { amplitude, exponent } => (amplitude, exponent),
    };
    let beta = match g_maj.tail {
        Tail::Unknown => return f64::INFINITY,
        Tail::Vanishing => f64::INFINITY,
        Tail::PowerLaw { exponent, .. } => exponent,
    };
    let g_amp = match g_maj.tail {
        Tail::PowerLaw { amplitude, .. } => amplitude,
        _ => 0.0,
    };
    let g_last = g_maj.inner.len() as i64 - 1;
    let cutoff = (radius + 1 + 4096).max(2 * x_inf + g_last + 2);
    let mut total = 0.0;
    for k in radius + 1..=cutoff {
        total += shell_count(d, k) * amp * (k as f64).powf(-alpha) * g_maj.at(k - x_inf);
    }
    if g_amp == 0.0 {
        // g vanishes beyond its table, and k - x_inf > g_last for every k > cutoff
        return total;
    }
    // k > cutoff >= 2 x_inf: (k - x_inf)^-beta <= 2^beta k^-beta and
    // N_k <= 2d (3k)^(d-1); the remaining sum is bounded by an integral.
    let s = alpha + beta - d as f64 + 1.0;
    if s <= 1.0 {
        return f64::INFINITY;
    }
    let c = 2.0 * d as f64 * 3f64.powi(d as i32 - 1) * amp * g_amp * 2f64.powf(beta);
    total + c * (cutoff as f64).powf(1.0 - s) / (s - 1.0)
}

/// `tau * tau`, `tau * tau * tau` and the torus triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagrams {
    pub bubble: Grid,
    pub triangle: Grid,
    pub torus_triangle: Grid,
}

/// Bubble and triangle from `tau` and the torus triangle from `tau_t`.
///
/// On a box, the triangle is the exact triple sum with all three factors
/// inside the box; its error bound is zero for a vanishing tail and
/// unbounded otherwise.
pub fn triangle_diagrams(tau: &Grid, tau_t: &Grid) -> Result<Diagrams> {
    if !tau_t.shape.is_torus() {
        return Err(PercError::ShapeMismatch("the torus triangle needs a torus grid".into()));
    }
    let bubble = convolve(tau, tau)?;
    let triangle = match tau.shape {
        Shape::Torus { .. } => convolve(&bubble, tau)?,
        Shape::Box { radius } => box_triangle(tau, radius)?,
    };
    Ok(Diagrams { bubble, triangle, torus_triangle: torus_triangle(tau_t, tau_t, tau_t)? })
}

/// `sum_{u,v} a(u) b(v - u) c(x - v)` on the torus. With three independent
/// estimates of `tau^T` this is an unbiased estimate of the torus triangle.
pub fn torus_triangle(a: &Grid, b: &Grid, c: &Grid) -> Result<Grid> {
    if !a.shape.is_torus() {
        return Err(PercError::ShapeMismatch("torus grids required".into()));
    }
    convolve(&convolve(a, b)?, c)
}

fn box_triangle(tau: &Grid, radius: i64) -> Result<Grid> {
    // tau restricted to the box, convolved on the doubled box without loss
    let d = tau.dim;
    let wide = Shape::Box { radius: 2 * radius };
    let restricted = Grid::from_fn(d, wide, |x| tau.get(x))?;
    let bubble = convolve_with(&restricted, &restricted, Method::Auto)?;
    let wide_tau = restricted;
    // sum over z in the doubled box of bubble(z) tau(x - z), x in the box
    let mut out = Grid::zeros(d, tau.shape)?;
    let zs: Vec<(Vec<i64>, f64)> = bubble.iter().filter(|(_, v)| *v != 0.0).collect();
    let mut diff = vec![0i64; d];
    for i in 0..out.len() {
        let x = out.coords_of(i);
        let mut s = 0.0;
        for (z, bz) in &zs {
            for k in 0..d {
                diff[k] = x[k] - z[k];
            }
            s += bz * wide_tau.get(&diff);
        }
        out.values[i] = s;
    }
    let bound = match tau.tail {
        Tail::Vanishing => 0.0,
        _ => f64::INFINITY,
    };
    out.error_bound = Some(vec![bound; radius as usize + 1]);
    out.tail = Tail::Unknown;
    Ok(out)
}

/// `sum_{|u|_inf <= cutoff} g(x + r u)` over a box grid (the `u = 0` term
/// included). Errors if a lift falls outside the box.
pub fn image_sum(g: &Grid, period: i64, x: &[i64], cutoff: i64) -> Result<f64> {
    let Shape::Box { .. } = g.shape else {
        return Err(PercError::ShapeMismatch("image sums need an infinite-lattice grid".into()));
    };
    let mut total = g.get(x);
    for y in crate::estimators::lifts(x, period, cutoff) {
        let i = g.index_of(&y).ok_or_else(|| PercError::invalid("cutoff", "lifts leave the grid"))?;
        total += g.values[i];
    }
    Ok(total)
}

/// A radial function of `|x|_inf` tabulated on `0..=R` with a declared
/// tail beyond `R`. Convolutions of such functions are evaluated pointwise
/// without materialising `Z^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfile {
    pub dim: usize,
    pub values: Vec<f64>,
    pub tail: Tail,
}

impl RadialProfile {
    pub fn new(dim: usize, values: Vec<f64>, tail: Tail) -> Result<Self> {
        if dim == 0 || values.is_empty() {
            return Err(PercError::invalid("profile", "needs d >= 1 and at least one value"));
        }
        Ok(RadialProfile { dim, values, tail })
    }

    /// `<x>^{-exponent}` on `0..=radius`, exact power-law tail.
    pub fn power_law(dim: usize, radius: i64, exponent: f64) -> Result<Self> {
        let values = (0..=radius).map(|k| (k.max(1) as f64).powf(-exponent)).collect();
        RadialProfile::new(dim, values, Tail::PowerLaw { amplitude: 1.0, exponent })
    }

    pub fn radius(&self) -> i64 {
        self.values.len() as i64 - 1
    }

    pub fn at(&self, k: i64) -> f64 {
        match self.values.get(k as usize) {
            Some(&v) => v,
            None => match self.tail {
                Tail::PowerLaw { amplitude, exponent } => amplitude * (k as f64).powf(-exponent),
                Tail::Vanishing => 0.0,
                Tail::Unknown => f64::NAN,
            },
        }
    }

    /// `(f * g)(x)` truncated to both arguments within the tables, and a
    /// bound on the omitted part.
    pub fn convolve_at(&self, other: &RadialProfile, x: &[i64]) -> Result<(f64, f64)> {
        if self.dim != other.dim || x.len() != self.dim {
            return Err(PercError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let (rf, rg) = (self.radius(), other.radius());
        // F(i, j) = #{y : |y| <= i, |x - y| <= j}
        let count = |i: i64, j: i64| -> f64 {
            if i < 0 || j < 0 {
                return 0.0;
            }
            x.iter()
                .map(|&c| {
                    let lo = (-i).max(c - j);
                    let hi = i.min(c + j);
                    (hi - lo + 1).max(0) as f64
                })
                .product()
        };
        let mut total = 0.0;
        for i in 0..=rf {
            let fi = self.values[i as usize];
            if fi == 0.0 {
                continue;
            }
            for j in 0..=rg {
                let n = count(i, j) - count(i - 1, j) - count(i, j - 1) + count(i - 1, j - 1);
                total += fi * n * other.values[j as usize];
            }
        }
        let x_inf = linf(x);
        let mf = Majorant::from_radial(&self.values, self.tail);
        let mg = Majorant::from_radial(&other.values, other.tail);
        let bound = outer_sum(self.dim, rf, self.tail, &mg, x_inf) + outer_sum(self.dim, rg, other.tail, &mf, x_inf);
        Ok((total, bound))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_grid(d: usize, shape: Shape, seed: u64) -> Grid {
        let mut s = seed;
        Grid::from_fn(d, shape, |_| {
            s = crate::randomness::mix64(s.wrapping_add(1));
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .unwrap()
    }

    #[test]
    fn delta_is_identity() {
        for shape in [Shape::Torus { period: 5 }, Shape::Box { radius: 3 }] {
            let e = Grid::delta(2, shape).unwrap();
            let c = convolve(&e, &e).unwrap();
            assert_eq!(c.values, e.values);
            let g = lcg_grid(2, shape, 4);
            assert_eq!(convolve(&e, &g).unwrap().values, g.values);
        }
    }

    #[test]
    fn torus_all_ones() {
        let ones = Grid::from_fn(1, Shape::Torus { period: 4 }, |_| 1.0).unwrap();
        for m in [Method::Direct, Method::Fft] {
            let c = convolve_with(&ones, &ones, m).unwrap();
            assert!(c.values.iter().all(|v| (v - 4.0).abs() < 1e-12), "{m:?}: {:?}", c.values);
        }
    }

    #[test]
    fn fft_matches_direct() {
        for (d, shape) in [
            (1, Shape::Torus { period: 7 }),
            (2, Shape::Torus { period: 6 }),
            (3, Shape::Torus { period: 5 }),
            (3, Shape::Torus { period: 4 }),
            (2, Shape::Box { radius: 4 }),
            (3, Shape::Box { radius: 2 }),
        ] {
            let a = lcg_grid(d, shape, 1);
            let b = lcg_grid(d, shape, 2);
            let x = convolve_with(&a, &b, Method::Direct).unwrap();
            let y = convolve_with(&a, &b, Method::Fft).unwrap();
            for (u, v) in x.values.iter().zip(&y.values) {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1e-300), "{shape:?}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn mismatched_shapes_error() {
        let a = Grid::zeros(2, Shape::Torus { period: 4 }).unwrap();
        let b = Grid::zeros(2, Shape::Torus { period: 5 }).unwrap();
        let c = Grid::zeros(3, Shape::Torus { period: 4 }).unwrap();
        assert!(convolve(&a, &b).is_err());
        assert!(convolve(&a, &c).is_err());
    }

    #[test]
    fn torus_indexing_round_trip() {
        let g = Grid::zeros(2, Shape::Torus { period: 6 }).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.index_of(&g.coords_of(i)), Some(i));
        }
        assert_eq!(g.index_of(&[0, 0]), Some(0));
        assert_eq!(g.index_of(&[6, -6]), Some(0));
        let b = Grid::zeros(2, Shape::Box { radius: 2 }).unwrap();
        assert_eq!(b.index_of(&[3, 0]), None);
    }

    #[test]
    fn diagram_examples() {
        let tau = Grid::delta(2, Shape::Box { radius: 2 }).unwrap();
        let ones = Grid::from_fn(2, Shape::Torus { period: 3 }, |_| 1.0).unwrap();
        let dg = triangle_diagrams(&tau, &ones).unwrap();
        assert_eq!(dg.triangle.values, tau.values);
        assert_eq!(dg.triangle.error_bound_at(&[0, 0]), 0.0);
        assert!(dg.torus_triangle.values.iter().all(|v| (v - 81.0).abs() < 1e-9));
    }

    #[test]
    fn box_triangle_matches_triple_sum() {
        let shape = Shape::Box { radius: 1 };
        let tau = lcg_grid(1, shape, 9);
        let ones = Grid::from_fn(1, Shape::Torus { period: 3 }, |_| 1.0).unwrap();
        let dg = triangle_diagrams(&tau, &ones).unwrap();
        for x in -1..=1i64 {
            let mut s = 0.0;
            for y in -1..=1i64 {
                for z in -2..=2i64 {
                    s += tau.get(&[y]) * tau.get(&[z - y]) * tau.get(&[x - z]);
                }
            }
            assert!((dg.triangle.get(&[x]) - s).abs() < 1e-14);
        }
    }

    #[test]
    fn torus_triangle_peaks_at_origin() {
        // a symmetric nonnegative kernel: the triangle is maximal at 0
        let mut g = lcg_grid(2, Shape::Torus { period: 6 }, 3);
        g.symmetrize();
        let t = torus_triangle(&g, &g, &g).unwrap();
        assert!(t.get(&[0, 0]) >= t.max() - 1e-12);
    }

    #[test]
    fn symmetrize_averages_orbits() {
        let mut g = Grid::zeros(2, Shape::Box { radius: 1 }).unwrap();
        g.set(&[1, 0], 4.0).unwrap();
        g.symmetrize();
        for x in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            assert_eq!(g.get(&x), 1.0);
        }
        assert_eq!(g.get(&[1, 1]), 0.0);
        let mut t = Grid::zeros(1, Shape::Torus { period: 4 }).unwrap();
        t.set(&[-2], 2.0).unwrap();
        t.symmetrize();
        assert_eq!(t.get(&[-2]), 2.0);
    }

    #[test]
    fn box_tail_bounds() {
        let shape = Shape::Box { radius: 3 };
        let f = Grid::from_fn(1, shape, |x| (linf(x).max(1) as f64).powi(-2)).unwrap();
        // vanishing tails: the box sum is exact
        let c = convolve(&f, &f).unwrap();
        assert_eq!(c.error_bound_at(&[0]), 0.0);
        let tailed = f.clone().with_tail(Tail::PowerLaw { amplitude: 1.0, exponent: 2.0 });
        let c = convolve(&tailed, &tailed).unwrap();
        // the true value of sum_y <y>^-2 <x-y>^-2 lies within the bound
        for x in -3..=3i64 {
            let truth: f64 = (-200_000..=200_000i64)
                .map(|y| (y.abs().max(1) as f64).powi(-2) * ((x - y).abs().max(1) as f64).powi(-2))
                .sum();
            let got = c.get(&[x]);
            assert!(got <= truth + 1e-12);
            assert!(truth <= got + c.error_bound_at(&[x]), "x={x}: {got} + {} < {truth}", c.error_bound_at(&[x]));
        }
        let unknown = f.with_tail(Tail::Unknown);
        assert!(convolve(&unknown, &unknown).unwrap().error_bound_at(&[0]).is_infinite());
    }

    #[test]
    fn radial_convolution_matches_box_sum() {
        // d = 2, vanishing tails: the interval-count formula equals brute force
        let values: Vec<f64> = (0..=4).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let f = RadialProfile::new(2, values, Tail::Vanishing).unwrap();
        for x in [[0i64, 0], [1, 0], [2, -3], [4, 4], [7, 1]] {
            let (v, bound) = f.convolve_at(&f, &x).unwrap();
            let mut s = 0.0;
            for y0 in -4..=4i64 {
                for y1 in -4..=4i64 {
                    let z = [x[0] - y0, x[1] - y1];
                    s += f.at(linf(&[y0, y1])) * if linf(&z) <= 4 { f.at(linf(&z)) } else { 0.0 };
                }
            }
            assert!((v - s).abs() < 1e-12, "{x:?}");
            assert_eq!(bound, 0.0);
        }
    }

    #[test]
    fn power_law_convolution_bounded() {
        // <x>^{2-7} * <x>^{2-7} against <x>^{4-7} in d = 7
        let f = RadialProfile::power_law(7, 64, 5.0).unwrap();
        let mut ratios = Vec::new();
        for k in 1..=16i64 {
            for x in [vec![k, 0, 0, 0, 0, 0, 0], vec![k; 7]] {
                let (v, bound) = f.convolve_at(&f, &x).unwrap();
                assert!(bound.is_finite());
                ratios.push((v + bound) * (k as f64).powi(3));
                assert!(v * (k as f64).powi(3) > 0.01);
            }
        }
        let max = ratios.iter().copied().fold(0.0, f64::max);
        assert!(max.is_finite());
        // no growth with |x|: the outer half never exceeds the inner half
        let (inner, outer) = ratios.split_at(16);
        let peak = |r: &[f64]| r.iter().copied().fold(0.0, f64::max);
        assert!(peak(outer) <= peak(inner), "max ratio {max}");
    }

    #[test]
    fn image_sum_over_box() {
        let g = Grid::from_fn(1, Shape::Box { radius: 10 }, |x| if x[0] % 5 == 0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(image_sum(&g, 5, &[0], 1).unwrap(), 3.0);
        assert_eq!(image_sum(&g, 5, &[0], 2).unwrap(), 5.0);
        assert!(image_sum(&g, 5, &[0], 3).is_err());
    }
}
