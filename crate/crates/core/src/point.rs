use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum spatial dimension supported by the desk-scale lab.
pub const MAX_DIM: usize = 2;

/// A point of R^d, d <= MAX_DIM. Stored inline so batches of evaluations
/// never allocate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: usize,
}

impl Point {
    pub fn new_1d(x: f64) -> Self {
        Self {
            coords: [x, 0.0],
            dim: 1,
        }
    }

    pub fn new_2d(x: f64, y: f64) -> Self {
        Self {
            coords: [x, y],
            dim: 2,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            coords: [0.0; MAX_DIM],
            dim,
        }
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::Capability(format!(
                "dimension {} not supported (max {MAX_DIM})",
                coords.len()
            )));
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            coords: c,
            dim: coords.len(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> f64 {
        debug_assert!(axis < self.dim);
        self.coords[axis]
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    #[inline]
    pub fn set_coord(&mut self, axis: usize, value: f64) {
        debug_assert!(axis < self.dim);
        self.coords[axis] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }

    /// Euclidean distance to `other`.
    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for k in 0..self.dim {
            let d = self.coords[k] - other.coords[k];
            s += d * d;
        }
        s.sqrt()
    }

    /// Sup-norm distance to `other`.
    #[inline]
    pub fn dist_inf(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut m = 0.0f64;
        for k in 0..self.dim {
            m = m.max((self.coords[k] - other.coords[k]).abs());
        }
        m
    }

    /// `self + t * dir`.
    #[inline]
    pub fn add_scaled(&self, dir: &Point, t: f64) -> Point {
        debug_assert_eq!(self.dim, dir.dim);
        let mut c = self.coords;
        for k in 0..self.dim {
            c[k] += t * dir.coords[k];
        }
        Point {
            coords: c,
            dim: self.dim,
        }
    }
}

/// Axis-aligned box used both as a lattice domain and as a compact for
/// sup-norm error measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    lo: Point,
    hi: Point,
}

impl BoxBounds {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::Config("box corner dimensions differ".into()));
        }
        for k in 0..lo.dim() {
            if !(lo.coord(k) < hi.coord(k)) {
                return Err(Error::Config(format!(
                    "box side {k} empty: [{}, {}]",
                    lo.coord(k),
                    hi.coord(k)
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The cube [lo, hi]^d.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        let mut a = Point::zero(dim);
        let mut b = Point::zero(dim);
        for k in 0..dim {
            a.set_coord(k, lo);
            b.set_coord(k, hi);
        }
        Self::new(a, b)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    #[inline]
    pub fn lo(&self) -> &Point {
        &self.lo
    }

    #[inline]
    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi.coord(axis) - self.lo.coord(axis)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.side(k)).product()
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim()).all(|k| p.coord(k) >= self.lo.coord(k) && p.coord(k) <= self.hi.coord(k))
    }

    /// Distance from an interior point to the nearest face (0 outside).
    pub fn margin(&self, p: &Point) -> f64 {
        let mut m = f64::INFINITY;
        for k in 0..self.dim() {
            m = m.min(p.coord(k) - self.lo.coord(k));
            m = m.min(self.hi.coord(k) - p.coord(k));
        }
        m.max(0.0)
    }
}
