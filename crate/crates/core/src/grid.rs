//! Uniform lattices over coordinate boxes and second-order finite differences
//! on masked fields.

use crate::error::{Error, Result};

/// One coordinate axis of a lattice.
///
/// A non-periodic axis has nodes at both ends of `[min, max]`. A periodic axis
/// has `n` nodes covering `[min, max)`, with `max` identified with `min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize, periodic: bool) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::InvalidGrid(format!("empty axis [{min}, {max}]")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("axis needs at least 3 nodes, got {n}")));
        }
        Ok(Axis { min, max, n, periodic })
    }

    pub fn h(&self) -> f64 {
        if self.periodic {
            (self.max - self.min) / self.n as f64
        } else {
            (self.max - self.min) / (self.n - 1) as f64
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        if !self.periodic && i == self.n - 1 {
            self.max
        } else {
            self.min + i as f64 * self.h()
        }
    }

    /// Same extent with twice the resolution.
    pub fn refined(&self) -> Axis {
        let n = if self.periodic { 2 * self.n } else { 2 * self.n - 1 };
        Axis { n, ..*self }
    }

    /// Neighbor index at offset `d`, wrapping on periodic axes.
    fn step(&self, i: usize, d: isize) -> Option<usize> {
        let j = i as isize + d;
        if self.periodic {
            Some(j.rem_euclid(self.n as isize) as usize)
        } else if j < 0 || j >= self.n as isize {
            None
        } else {
            Some(j as usize)
        }
    }

    /// Second-order first-derivative stencil at node `i`: (offsets, weights).
    fn stencil(&self, i: usize) -> ([isize; 3], [f64; 3]) {
        let r = 1.0 / (2.0 * self.h());
        if self.periodic || (i > 0 && i + 1 < self.n) {
            ([-1, 0, 1], [-r, 0.0, r])
        } else if i == 0 {
            ([0, 1, 2], [-3.0 * r, 4.0 * r, -r])
        } else {
            ([-2, -1, 0], [r, -4.0 * r, 3.0 * r])
        }
    }
}

/// Regular lattice over a box in three coordinates. Nodes are numbered with
/// the first axis varying fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    pub axes: [Axis; 3],
}

impl Grid3 {
    pub fn new(min: [f64; 3], max: [f64; 3], n: [usize; 3]) -> Result<Self> {
        Self::with_periodic(min, max, n, [false; 3])
    }

    pub fn with_periodic(min: [f64; 3], max: [f64; 3], n: [usize; 3], periodic: [bool; 3]) -> Result<Self> {
        Ok(Grid3 {
            axes: [
                Axis::new(min[0], max[0], n[0], periodic[0])?,
                Axis::new(min[1], max[1], n[1], periodic[1])?,
                Axis::new(min[2], max[2], n[2], periodic[2])?,
            ],
        })
    }

    pub fn cube(min: f64, max: f64, n: usize) -> Result<Self> {
        Self::new([min; 3], [max; 3], [n; 3])
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.axes[0].n, self.axes[1].n, self.axes[2].n]
    }

    pub fn h(&self) -> [f64; 3] {
        [self.axes[0].h(), self.axes[1].h(), self.axes[2].h()]
    }

    pub fn min(&self) -> [f64; 3] {
        [self.axes[0].min, self.axes[1].min, self.axes[2].min]
    }

    pub fn max(&self) -> [f64; 3] {
        [self.axes[0].max, self.axes[1].max, self.axes[2].max]
    }

    pub fn is_periodic(&self) -> bool {
        self.axes.iter().any(|a| a.periodic)
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        let [n0, n1, _] = self.shape();
        ijk[0] + n0 * (ijk[1] + n1 * ijk[2])
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let [n0, n1, _] = self.shape();
        [idx % n0, (idx / n0) % n1, idx / (n0 * n1)]
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let ijk = self.ijk(idx);
        [0, 1, 2].map(|a| self.axes[a].coord(ijk[a]))
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn refined(&self) -> Grid3 {
        Grid3 {
            axes: self.axes.map(|a| a.refined()),
        }
    }

    /// Node of the refined grid that coincides with node `idx` of this grid.
    pub fn refined_index(&self, idx: usize) -> usize {
        let r = self.refined();
        r.index(self.ijk(idx).map(|i| 2 * i))
    }

    /// Index of the node at offset `d` along `axis`.
    pub fn offset(&self, idx: usize, axis: usize, d: isize) -> Option<usize> {
        let mut ijk = self.ijk(idx);
        ijk[axis] = self.axes[axis].step(ijk[axis], d)?;
        Some(self.index(ijk))
    }

    /// Face neighbors (up to six, fewer at non-periodic boundaries).
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        (0..3).flat_map(move |a| [-1isize, 1].into_iter().filter_map(move |d| self.offset(idx, a, d)))
    }

    /// Whether the node lies strictly inside along every non-periodic axis.
    pub fn is_interior(&self, idx: usize) -> bool {
        let ijk = self.ijk(idx);
        (0..3).all(|a| self.axes[a].periodic || (ijk[a] > 0 && ijk[a] + 1 < self.axes[a].n))
    }

    /// Second-order partial derivative of a masked scalar field along `axis`;
    /// `None` when any stencil node is masked.
    pub fn partial(&self, f: &[Option<f64>], idx: usize, axis: usize) -> Option<f64> {
        let ax = &self.axes[axis];
        let i = self.ijk(idx)[axis];
        let (offs, w) = ax.stencil(i);
        let mut acc = 0.0;
        for (d, wk) in offs.iter().zip(w) {
            if wk == 0.0 {
                continue;
            }
            acc += wk * f[self.offset(idx, axis, *d)?]?;
        }
        Some(acc)
    }

    pub fn gradient(&self, f: &[Option<f64>], idx: usize) -> Option<[f64; 3]> {
        Some([
            self.partial(f, idx, 0)?,
            self.partial(f, idx, 1)?,
            self.partial(f, idx, 2)?,
        ])
    }

    /// Trapezoidal quadrature weight of a node (product of per-axis weights).
    pub fn quadrature_weight(&self, idx: usize) -> f64 {
        let ijk = self.ijk(idx);
        (0..3)
            .map(|a| {
                let ax = &self.axes[a];
                let end = !ax.periodic && (ijk[a] == 0 || ijk[a] + 1 == ax.n);
                if end {
                    0.5 * ax.h()
                } else {
                    ax.h()
                }
            })
            .product()
    }
}

/// Regular lattice over a rectangle. Nodes are numbered with `x` fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2 {
    pub x: Axis,
    pub y: Axis,
}

impl Grid2 {
    pub fn new(min: [f64; 2], max: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Ok(Grid2 {
            x: Axis::new(min[0], max[0], n[0], false)?,
            y: Axis::new(min[1], max[1], n[1], false)?,
        })
    }

    pub fn square(min: f64, max: f64, n: usize) -> Result<Self> {
        Self::new([min; 2], [max; 2], [n; 2])
    }

    pub fn len(&self) -> usize {
        self.x.n * self.y.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.x.n * j
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.x.n, idx / self.x.n)
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        [self.x.coord(i), self.y.coord(j)]
    }

    pub fn refined(&self) -> Grid2 {
        Grid2 {
            x: self.x.refined(),
            y: self.y.refined(),
        }
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        let (i, j) = self.ij(idx);
        i > 0 && j > 0 && i + 1 < self.x.n && j + 1 < self.y.n
    }

    /// Nearest node to a point (clamped to the rectangle).
    pub fn nearest(&self, p: [f64; 2]) -> usize {
        let near = |a: &Axis, v: f64| (((v - a.min) / a.h()).round().max(0.0) as usize).min(a.n - 1);
        self.index(near(&self.x, p[0]), near(&self.y, p[1]))
    }

    /// Second-order partial derivatives `(d/dx, d/dy)` of a field of any
    /// vector-space type at a node.
    pub fn partials<T>(&self, f: &[T], idx: usize) -> (T, T)
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let (i, j) = self.ij(idx);
        let along = |ax: &Axis, k: usize, node: &dyn Fn(isize) -> usize| {
            let (offs, w) = ax.stencil(k);
            let mut acc = f[node(offs[0])] * w[0];
            for s in 1..3 {
                if w[s] != 0.0 {
                    acc = acc + f[node(offs[s])] * w[s];
                }
            }
            acc
        };
        let dx = along(&self.x, i, &|d| self.index((i as isize + d) as usize, j));
        let dy = along(&self.y, j, &|d| self.index(i, (j as isize + d) as usize));
        (dx, dy)
    }
}
