use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid with square cells; node (i, j) sits at origin + h·(i, j), stored at i + nx·j.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(origin: [f64; 2], spacing: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Domain(format!("grid spacing must be positive, got {spacing}")));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::Domain("grid needs at least two nodes per axis".into()));
        }
        Ok(Self { origin, spacing, nx, ny })
    }

    /// Grid over the box [lo, hi] with `n` nodes along its longer side.
    pub fn covering(lo: [f64; 2], hi: [f64; 2], n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Domain("resolution must be at least 3".into()));
        }
        let w = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        if !(w > 0.0) {
            return Err(Error::Domain("empty bounding box".into()));
        }
        let h = w / (n - 1) as f64;
        let nx = ((hi[0] - lo[0]) / h - 1e-9).ceil() as usize + 1;
        let ny = ((hi[1] - lo[1]) / h - 1e-9).ceil() as usize + 1;
        Self::new(lo, h, nx.max(2), ny.max(2))
    }

    /// Grid with spacing `h` covering [lo, hi] and having `anchor` as a node.
    pub fn aligned(lo: [f64; 2], hi: [f64; 2], h: f64, anchor: [f64; 2]) -> Result<Self> {
        let i0 = ((lo[0] - anchor[0]) / h).floor();
        let j0 = ((lo[1] - anchor[1]) / h).floor();
        let i1 = ((hi[0] - anchor[0]) / h).ceil();
        let j1 = ((hi[1] - anchor[1]) / h).ceil();
        let origin = [anchor[0] + i0 * h, anchor[1] + j0 * h];
        Self::new(origin, h, (i1 - i0) as usize + 1, (j1 - j0) as usize + 1)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nx * j
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + i as f64 * self.spacing, self.origin[1] + j as f64 * self.spacing]
    }

    pub fn node_at(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        self.node(i, j)
    }

    /// Fractional grid coordinates of a point.
    pub fn frac(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.origin[0]) / self.spacing, (p[1] - self.origin[1]) / self.spacing]
    }

    /// Nearest node, if inside the index range.
    pub fn nearest(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let f = self.frac(p);
        let (i, j) = (f[0].round(), f[1].round());
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.nx && (j as usize) < self.ny).then_some((i as usize, j as usize))
    }

    pub fn upper(&self) -> [f64; 2] {
        self.node(self.nx - 1, self.ny - 1)
    }
}
