//! Maps and metrics given by closed-form expressions, the operator
//! `S = (phi_*)^* phi_*` and its spectral frame, pointwise and on grids.
//!
//! `S` acts on covectors written in the coordinate coframe `dx1, dx2, dx3`.
//! Its matrix is the transpose of the tangent-space operator
//! `G^-1 J^T H J`, i.e. `J^T H J G^-1`.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::grid::Grid3;
use crate::tensor3::{eig_sym3, CotangentMetric, Covector3, EigenMethod, Operator3};

/// Numerical thresholds shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Minimum eigenvalue separation relative to the largest eigenvalue.
    pub spectral_gap_tol: f64,
    /// Relative residual below which a conformality certificate passes.
    pub cert_tol: f64,
    /// `|det J|` below this fraction of the Jacobian scale counts as singular.
    pub degenerate_tol: f64,
    /// Largest admissible `sup |mu|` for Beltrami solves.
    pub k_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            spectral_gap_tol: 1e-8,
            cert_tol: 1e-8,
            degenerate_tol: 1e-10,
            k_max: 0.9,
        }
    }
}

/// Axis-aligned coordinate box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxDomain {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min[a].is_finite() && max[a].is_finite() && max[a] >= min[a])) {
            return Err(Error::InvalidInput(format!("bad box {min:?}..{max:?}")));
        }
        Ok(BoxDomain { min, max })
    }

    pub fn unbounded() -> Self {
        BoxDomain {
            min: [f64::NEG_INFINITY; 3],
            max: [f64::INFINITY; 3],
        }
    }

    pub fn of_grid(grid: &Grid3) -> Self {
        BoxDomain {
            min: grid.min(),
            max: grid.max(),
        }
    }

    pub fn contains(&self, x: &[f64; 3]) -> bool {
        (0..3).all(|a| {
            let slack = 1e-12 * (1.0 + self.max[a].abs().max(self.min[a].abs()).min(1e300));
            x[a] >= self.min[a] - slack && x[a] <= self.max[a] + slack
        })
    }

    fn check(&self, x: &[f64; 3]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { point: *x })
        }
    }
}

fn env(x: &[f64; 3]) -> Env {
    Env::new(*x)
}

/// A map `x -> (phi1(x), phi2(x), phi3(x))` with its symbolic Jacobian.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    components: [Expr; 3],
    jac: [[Expr; 3]; 3],
    pub domain: BoxDomain,
}

impl SmoothMap {
    pub fn new(components: [Expr; 3], domain: BoxDomain) -> Self {
        let jac = [0, 1, 2].map(|i| Var::SPATIAL.map(|v| components[i].derivative(v)));
        SmoothMap {
            components,
            jac,
            domain,
        }
    }

    pub fn parse(components: [&str; 3], domain: BoxDomain) -> Result<Self> {
        Ok(Self::new(
            [
                Expr::parse(components[0])?,
                Expr::parse(components[1])?,
                Expr::parse(components[2])?,
            ],
            domain,
        ))
    }

    pub fn identity(domain: BoxDomain) -> Self {
        Self::new(Var::SPATIAL.map(Expr::var), domain)
    }

    pub fn components(&self) -> &[Expr; 3] {
        &self.components
    }

    pub fn eval(&self, x: &[f64; 3]) -> Result<[f64; 3]> {
        self.domain.check(x)?;
        let e = env(x);
        Ok([
            self.components[0].eval(&e)?,
            self.components[1].eval(&e)?,
            self.components[2].eval(&e)?,
        ])
    }

    /// `J[i][j] = d phi_i / d x_j`, from the symbolic derivatives.
    pub fn jacobian(&self, x: &[f64; 3]) -> Result<Matrix3<f64>> {
        self.domain.check(x)?;
        let e = env(x);
        let mut j = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                j[(r, c)] = self.jac[r][c].eval(&e)?;
            }
        }
        Ok(j)
    }

    /// Central-difference Jacobian with step `h`, for cross-checking.
    pub fn jacobian_fd(&self, x: &[f64; 3], h: f64) -> Result<Matrix3<f64>> {
        let mut j = Matrix3::zeros();
        for c in 0..3 {
            let mut xp = *x;
            let mut xm = *x;
            xp[c] += h;
            xm[c] -= h;
            let e = |p: &[f64; 3]| -> Result<[f64; 3]> {
                let v = env(p);
                Ok([
                    self.components[0].eval(&v)?,
                    self.components[1].eval(&v)?,
                    self.components[2].eval(&v)?,
                ])
            };
            let (fp, fm) = (e(&xp)?, e(&xm)?);
            for r in 0..3 {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }
}

/// A Riemannian metric `sum g_ij dx_i dx_j` from six coefficient expressions.
#[derive(Debug, Clone)]
pub struct MetricField {
    /// `g11, g12, g13, g22, g23, g33`.
    coeffs: [Expr; 6],
    pub domain: BoxDomain,
}

impl MetricField {
    pub fn new(coeffs: [Expr; 6], domain: BoxDomain) -> Self {
        MetricField { coeffs, domain }
    }

    pub fn parse(coeffs: [&str; 6], domain: BoxDomain) -> Result<Self> {
        let mut out = Vec::with_capacity(6);
        for c in coeffs {
            out.push(Expr::parse(c)?);
        }
        Ok(Self::new(out.try_into().expect("six coefficients"), domain))
    }

    pub fn euclidean() -> Self {
        Self::diagonal(["1", "1", "1"]).expect("constant metric")
    }

    /// `diag(d1, d2, d3)`, unbounded domain.
    pub fn diagonal(d: [&str; 3]) -> Result<Self> {
        Self::parse([d[0], "0", "0", d[1], "0", d[2]], BoxDomain::unbounded())
    }

    pub fn coefficients(&self) -> &[Expr; 6] {
        &self.coeffs
    }

    /// Tangent-space Gram matrix at `x`.
    pub fn tangent(&self, x: &[f64; 3]) -> Result<Matrix3<f64>> {
        self.domain.check(x)?;
        let e = env(x);
        let mut v = [0.0; 6];
        for (k, c) in self.coeffs.iter().enumerate() {
            v[k] = c.eval(&e)?;
        }
        Ok(Matrix3::new(v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5]))
    }

    /// Induced inner product on covectors at `x`; fails unless SPD.
    pub fn cotangent(&self, x: &[f64; 3]) -> Result<CotangentMetric> {
        CotangentMetric::from_tangent(&self.tangent(x)?)
    }

    /// Whether no coefficient depends on position.
    pub fn is_constant(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| Var::SPATIAL.iter().all(|v| !c.depends_on(*v)))
    }
}

/// `S` at a point, together with the Jacobian and source metric it came from.
#[derive(Debug, Clone, Copy)]
pub struct PointOperator {
    pub s: Operator3,
    pub jacobian: Matrix3<f64>,
    pub metric: CotangentMetric,
}

/// Pullback operator at `x`, acting on covectors in the coordinate coframe.
pub fn s_operator(
    map: &SmoothMap,
    g: &MetricField,
    h: &MetricField,
    x: &[f64; 3],
    tol: &Tolerances,
) -> Result<PointOperator> {
    let j = map.jacobian(x)?;
    let det = j.determinant();
    let scale = (j.norm() / 3f64.sqrt()).powi(3);
    if !(det.abs() > tol.degenerate_tol * scale) {
        return Err(Error::DegenerateMap { det: det.abs() });
    }
    let metric = g.cotangent(x)?;
    let y = map.eval(x)?;
    let hm = h.tangent(&y)?;
    CotangentMetric::from_tangent(&hm)?;
    let jhj = j.transpose() * hm * j;
    let s = jhj * metric.gram();
    Ok(PointOperator {
        s: Operator3(s),
        jacobian: j,
        metric,
    })
}

/// Spectral frame of `S` at one point.
///
/// `eta[i]` is the covector `g(xi[i], .)`; both are unit length and
/// `eta[i](xi[j]) = delta_ij`.
#[derive(Debug, Clone, Copy)]
pub struct SpectralData {
    pub x: [f64; 3],
    /// Strictly ascending and positive.
    pub lambda: [f64; 3],
    pub xi: [Vector3<f64>; 3],
    pub eta: [Covector3; 3],
    /// `min(l2 - l1, l3 - l2) / l3`.
    pub gap: f64,
    pub method: EigenMethod,
    pub s: Operator3,
    pub metric: CotangentMetric,
}

impl SpectralData {
    /// Decomposes a given operator. Each eigen-covector is signed so that
    /// its largest coefficient is positive.
    pub fn from_operator(x: [f64; 3], s: Operator3, metric: CotangentMetric, tol: &Tolerances) -> Result<Self> {
        let eig = eig_sym3(&s, &metric)?;
        let lambda = eig.values;
        if !(lambda[0] > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {}", lambda[0])));
        }
        let gap = (lambda[1] - lambda[0]).min(lambda[2] - lambda[1]) / lambda[2];
        if !(gap >= tol.spectral_gap_tol) {
            return Err(Error::RepeatedEigenvalues {
                gap,
                tol: tol.spectral_gap_tol,
            });
        }
        let eta = eig.vectors.map(|e| {
            let k = e.0.iamax();
            if e.0[k] < 0.0 {
                -e
            } else {
                e
            }
        });
        let xi = eta.map(|e| metric.gram() * e.0);
        Ok(SpectralData {
            x,
            lambda,
            xi,
            eta,
            gap,
            method: eig.method,
            s,
            metric,
        })
    }

    /// Reverses the sign of the `i`-th eigenvector pair.
    pub fn flip(&mut self, i: usize) {
        self.eta[i] = -self.eta[i];
        self.xi[i] = -self.xi[i];
    }
}

pub fn spectral(map: &SmoothMap, g: &MetricField, h: &MetricField, x: &[f64; 3], tol: &Tolerances) -> Result<SpectralData> {
    let p = s_operator(map, g, h, x, tol)?;
    SpectralData::from_operator(*x, p.s, p.metric, tol)
}

/// Spectral frames on every node of a grid, sign-aligned between neighbors.
#[derive(Debug, Clone)]
pub struct FrameField {
    pub grid: Grid3,
    /// `None` where the node failed the spectral stage.
    pub nodes: Vec<Option<SpectralData>>,
    /// Failure reason of every masked node, in node order.
    pub masked: Vec<(usize, Error)>,
    /// Set when some pair of neighbors cannot be aligned, which happens
    /// when the eigenvector bundle is non-orientable around a grid cycle.
    pub holonomy: bool,
    /// Node the alignment started from.
    pub anchor: usize,
}

impl FrameField {
    /// Builds from per-node results and runs the alignment pass.
    pub fn from_results(grid: Grid3, results: Vec<Result<SpectralData>>, anchor: usize) -> Self {
        let mut nodes = Vec::with_capacity(results.len());
        let mut masked = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(sd) => nodes.push(Some(sd)),
                Err(e) => {
                    nodes.push(None);
                    masked.push((i, e));
                }
            }
        }
        let mut field = FrameField {
            grid,
            nodes,
            masked,
            holonomy: false,
            anchor,
        };
        field.align();
        field
    }

    /// Breadth-first sign propagation from the anchor (then from the lowest
    /// unvisited node of each further connected component).
    fn align(&mut self) {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut order: Vec<usize> = vec![self.anchor.min(n.saturating_sub(1))];
        order.extend(0..n);
        let mut queue = VecDeque::new();
        for start in order {
            if seen[start] || self.nodes[start].is_none() {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                let sp = self.nodes[p].expect("queued nodes are valid");
                let nbrs: Vec<usize> = self.grid.neighbors(p).collect();
                for q in nbrs {
                    if seen[q] {
                        continue;
                    }
                    let Some(sq) = self.nodes[q].as_mut() else { continue };
                    for i in 0..3 {
                        if sp.metric.inner(&sp.eta[i], &sq.eta[i]) < 0.0 {
                            sq.flip(i);
                        }
                    }
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        self.holonomy = self.misaligned_edges() > 0;
    }

    /// Number of neighbor pairs whose eigen-covectors point oppositely.
    pub fn misaligned_edges(&self) -> usize {
        let mut bad = 0;
        for p in 0..self.nodes.len() {
            let Some(sp) = &self.nodes[p] else { continue };
            for q in self.grid.neighbors(p).filter(|&q| q > p) {
                let Some(sq) = &self.nodes[q] else { continue };
                if (0..3).any(|i| sp.metric.inner(&sp.eta[i], &sq.eta[i]) <= 0.0) {
                    bad += 1;
                }
            }
        }
        bad
    }

    pub fn is_fully_valid(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn eta(&self, i: usize) -> Vec<Option<Covector3>> {
        self.nodes.iter().map(|n| n.map(|sd| sd.eta[i])).collect()
    }

    pub fn lambda(&self, i: usize) -> Vec<Option<f64>> {
        self.nodes.iter().map(|n| n.map(|sd| sd.lambda[i])).collect()
    }

    /// Flips the sign of the `i`-th eigenvector pair at every node.
    pub fn flip_all(&mut self, i: usize) {
        for sd in self.nodes.iter_mut().flatten() {
            sd.flip(i);
        }
    }
}

/// Spectral frame field of `map` on `grid`, computed in parallel and then
/// aligned sequentially from `anchor`.
pub fn frame_field(
    map: &SmoothMap,
    g: &MetricField,
    h: &MetricField,
    grid: &Grid3,
    tol: &Tolerances,
    anchor: usize,
) -> FrameField {
    let results: Vec<Result<SpectralData>> = (0..grid.len())
        .into_par_iter()
        .map(|i| spectral(map, g, h, &grid.point(i), tol))
        .collect();
    FrameField::from_results(*grid, results, anchor)
}

/// Frame field of a directly supplied operator field (for instances that
/// are not presented as a map).
pub fn frame_field_of<F>(grid: &Grid3, tol: &Tolerances, anchor: usize, op: F) -> FrameField
where
    F: Fn([f64; 3]) -> Result<(Operator3, CotangentMetric)> + Sync,
{
    let results: Vec<Result<SpectralData>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let (s, m) = op(x)?;
            SpectralData::from_operator(x, s, m, tol)
        })
        .collect();
    FrameField::from_results(*grid, results, anchor)
}
