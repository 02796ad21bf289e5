//! Per-edge uniforms from a counter-based keyed mixing function.
//!
//! The uniform attached to an edge is a pure function of
//! `(master_seed, stream_id, domain, canonical edge)`, so an exploration may
//! visit edges in any order, revisit them, or run at several values of `p`
//! against the same field. Comparing the uniform with `p` gives the standard
//! monotone coupling of all bond configurations.

use crate::error::{PercError, Result};
use crate::lattice::Edge;

const DOMAIN_PERC: u64 = 0x7065_7263_6f6c_6174;
const DOMAIN_GHOST: u64 = 0x6768_6f73_7466_6c64;

const MUL_ABSORB: u64 = 0x9e37_79b9_7f4a_7c15;
const MUL_STREAM: u64 = 0xd1b5_4a32_d192_ed03;

/// splitmix64 finaliser.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn key_state(seed: u64, stream: u64, domain: u64) -> u64 {
    mix64(mix64(seed ^ domain) ^ stream.wrapping_mul(MUL_STREAM).wrapping_add(domain))
}

#[inline]
fn absorb(mut h: u64, words: &[i64]) -> u64 {
    for &w in words {
        h = (h ^ w as u64).wrapping_mul(MUL_ABSORB);
        h = h.rotate_left(29);
    }
    h
}

#[inline]
fn to_unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A static field of uniforms on the edges of a lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeField {
    master_seed: u64,
    stream_id: u64,
    key: u64,
}

impl EdgeField {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        EdgeField { master_seed, stream_id, key: key_state(master_seed, stream_id, DOMAIN_PERC) }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn uniform(&self, e: &Edge) -> f64 {
        let (a, b) = e.endpoints();
        self.uniform_sorted(a.coords(), b.coords())
    }

    /// Uniform for the edge `{a, b}` given its endpoints in canonical order
    /// (`a < b` lexicographically, torus points already reduced).
    #[inline]
    pub fn uniform_sorted(&self, a: &[i64], b: &[i64]) -> f64 {
        let h = absorb(absorb(self.key, a), b);
        to_unit(mix64(h ^ (a.len() as u64)))
    }

    /// Uniform for `{x, y}` with endpoints in either order.
    #[inline]
    pub fn uniform_pair(&self, x: &[i64], y: &[i64]) -> f64 {
        if x < y {
            self.uniform_sorted(x, y)
        } else {
            self.uniform_sorted(y, x)
        }
    }

    /// Open iff the edge's uniform is strictly below `p`.
    pub fn is_open(&self, e: &Edge, p: f64) -> Result<bool> {
        check_p(p)?;
        Ok(self.uniform(e) < p)
    }

    #[inline]
    pub fn is_open_pair(&self, x: &[i64], y: &[i64], p: f64) -> bool {
        self.uniform_pair(x, y) < p
    }
}

pub fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(PercError::ProbabilityOutOfRange(p))
    }
}

/// Independent edge marking: each edge is green with probability
/// `1 - exp(-h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GhostField {
    intensity: f64,
    key: u64,
}

impl GhostField {
    pub fn new(master_seed: u64, stream_id: u64, intensity: f64) -> Result<Self> {
        if !(intensity >= 0.0) || !intensity.is_finite() {
            return Err(PercError::invalid("intensity", "must be finite and nonnegative"));
        }
        Ok(GhostField { intensity, key: key_state(master_seed, stream_id, DOMAIN_GHOST) })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn green_probability(&self) -> f64 {
        -(-self.intensity).exp_m1()
    }

    pub fn uniform(&self, e: &Edge) -> f64 {
        let (a, b) = e.endpoints();
        let h = absorb(absorb(self.key, a.coords()), b.coords());
        to_unit(mix64(h ^ (a.dim() as u64)))
    }

    pub fn is_green(&self, e: &Edge) -> bool {
        self.uniform(e) < self.green_probability()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Point;

    fn edge(a: &[i64], b: &[i64]) -> Edge {
        Edge::new(Point::new(a.to_vec()), Point::new(b.to_vec())).unwrap()
    }

    fn nth_edge(i: i64) -> Edge {
        // distinct nearest-neighbour edges of Z^3
        let x = vec![i % 97 - 48, (i / 97) % 89 - 44, i / (97 * 89)];
        let mut y = x.clone();
        y[(i % 3) as usize] += 1;
        Edge::new(Point::new(x), Point::new(y)).unwrap()
    }

    #[test]
    fn deterministic_and_order_free() {
        let f = EdgeField::new(42, 7);
        let e = edge(&[0, 1], &[1, 1]);
        assert_eq!(f.uniform(&e), f.uniform(&e));
        assert_eq!(f.uniform(&e), f.uniform(&edge(&[1, 1], &[0, 1])));
        assert_eq!(f.uniform_pair(&[1, 1], &[0, 1]), f.uniform(&e));
    }

    #[test]
    fn extreme_probabilities() {
        let f = EdgeField::new(1, 0);
        for i in 0..10_000 {
            let e = nth_edge(i);
            assert!(!f.is_open(&e, 0.0).unwrap());
            assert!(f.is_open(&e, 1.0).unwrap());
        }
        assert!(f.is_open(&nth_edge(0), 1.5).is_err());
        assert!(f.is_open(&nth_edge(0), -0.1).is_err());
    }

    #[test]
    fn monotone_in_p() {
        let f = EdgeField::new(3, 11);
        for i in 0..100_000 {
            let e = nth_edge(i);
            if f.is_open(&e, 0.3).unwrap() {
                assert!(f.is_open(&e, 0.5).unwrap());
            }
        }
    }

    #[test]
    fn marginal_fraction_open() {
        let f = EdgeField::new(2024, 0);
        let n = 1_000_000;
        let p = 0.37;
        let open = (0..n).filter(|&i| f.is_open(&nth_edge(i), p).unwrap()).count();
        let frac = open as f64 / n as f64;
        let tol = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - p).abs() <= tol, "fraction {frac}");
    }

    #[test]
    fn chi_square_uniformity() {
        let f = EdgeField::new(99, 5);
        let bins = 100usize;
        let n = 1_000_000;
        let mut counts = vec![0u64; bins];
        for i in 0..n {
            let u = f.uniform(&nth_edge(i));
            assert!((0.0..1.0).contains(&u));
            counts[(u * bins as f64) as usize] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99 dof; the 0.999 quantile is about 148.2
        assert!(chi2 < 148.2, "chi2 = {chi2}");
    }

    #[test]
    fn streams_are_uncorrelated() {
        let f1 = EdgeField::new(5, 0);
        let f2 = EdgeField::new(5, 1);
        let n = 100_000;
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            (0..n).map(|i| (f1.uniform(&nth_edge(i)), f2.uniform(&nth_edge(i)))).unzip();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let rho = cov / (vx * vy).sqrt();
        assert!(rho.abs() < 0.01, "rho = {rho}");
        assert_ne!(f1.uniform(&nth_edge(0)), f2.uniform(&nth_edge(0)));
    }

    #[test]
    fn neighbouring_edges_uncorrelated() {
        // successive edges along a line should not share structure
        let f = EdgeField::new(8, 0);
        let n = 100_000i64;
        let us: Vec<f64> = (0..n).map(|i| f.uniform_pair(&[i, 0], &[i + 1, 0])).collect();
        let m = us.iter().sum::<f64>() / n as f64;
        let lag1: f64 = us.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>();
        let var: f64 = us.iter().map(|u| (u - m).powi(2)).sum();
        assert!((lag1 / var).abs() < 0.01);
    }

    #[test]
    fn ghost_field_is_independent_of_percolation() {
        let f = EdgeField::new(17, 3);
        let g = GhostField::new(17, 3, 0.5).unwrap();
        let n = 200_000;
        let q = g.green_probability();
        assert!((q - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        let mut both = 0usize;
        let mut green = 0usize;
        for i in 0..n {
            let e = nth_edge(i);
            let o = f.is_open(&e, 0.4).unwrap();
            let gr = g.is_green(&e);
            green += gr as usize;
            both += (o && gr) as usize;
        }
        let fg = green as f64 / n as f64;
        assert!((fg - q).abs() < 4.0 * (q * (1.0 - q) / n as f64).sqrt());
        let fb = both as f64 / n as f64;
        let pb = 0.4 * q;
        assert!((fb - pb).abs() < 4.0 * (pb * (1.0 - pb) / n as f64).sqrt());
        assert!(GhostField::new(1, 1, -1.0).is_err());
    }
}
