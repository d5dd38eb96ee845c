//! Beltrami coefficients of leaf metrics, a discrete least-squares Beltrami
//! solver, foliated isothermal charts and the leafwise holomorphy check.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::pullback::{MetricField, SmoothMap};

/// Residuals below this are treated as exact in convergence studies.
pub const EXACT_FLOOR: f64 = 1e-12;

/// A metric `E dx^2 + 2F dx dy + G dy^2` sampled on a leaf grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafMetric2 {
    pub grid: Grid2,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl LeafMetric2 {
    pub fn new(grid: Grid2, e: Vec<f64>, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if e.len() != grid.len() || f.len() != grid.len() || g.len() != grid.len() {
            return Err(Error::InvalidInput("leaf metric size does not match its grid".into()));
        }
        for i in 0..grid.len() {
            let det = e[i] * g[i] - f[i] * f[i];
            if !(e[i] > 0.0 && det > 0.0) {
                return Err(Error::LeafMetric {
                    node: i,
                    msg: format!("E = {:.3e}, EG - F^2 = {det:.3e}", e[i]),
                });
            }
        }
        Ok(LeafMetric2 { grid, e, f, g })
    }

    pub fn from_fn(grid: Grid2, m: impl Fn([f64; 2]) -> [f64; 3]) -> Result<Self> {
        let v: Vec<[f64; 3]> = (0..grid.len()).map(|i| m(grid.point(i))).collect();
        Self::new(grid, v.iter().map(|c| c[0]).collect(), v.iter().map(|c| c[1]).collect(), v.iter().map(|c| c[2]).collect())
    }

    /// The restriction of a 3D metric to the leaf `x3 = t`.
    pub fn restrict(metric: &MetricField, grid: Grid2, t: f64) -> Result<Self> {
        let mut e = Vec::with_capacity(grid.len());
        let mut f = Vec::with_capacity(grid.len());
        let mut g = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let p = grid.point(i);
            let m = metric.tangent(&[p[0], p[1], t])?;
            e.push(m[(0, 0)]);
            f.push(m[(0, 1)]);
            g.push(m[(1, 1)]);
        }
        Self::new(grid, e, f, g)
    }

    pub fn at(&self, i: usize) -> Matrix2<f64> {
        Matrix2::new(self.e[i], self.f[i], self.f[i], self.g[i])
    }
}

/// Complex dilatation of a leaf metric.
#[derive(Debug, Clone, PartialEq)]
pub struct BeltramiField {
    pub grid: Grid2,
    pub mu: Vec<Complex64>,
    pub sup_abs: f64,
}

impl BeltramiField {
    pub fn new(grid: Grid2, mu: Vec<Complex64>) -> Result<Self> {
        if mu.len() != grid.len() {
            return Err(Error::InvalidInput("dilatation size does not match its grid".into()));
        }
        let sup_abs = mu.iter().map(|m| m.norm()).fold(0.0, f64::max);
        if !(sup_abs < 1.0) {
            return Err(Error::DilatationTooLarge { sup: sup_abs, k_max: 1.0 });
        }
        Ok(BeltramiField { grid, mu, sup_abs })
    }

    pub fn constant(grid: Grid2, mu: Complex64) -> Result<Self> {
        Self::new(grid, vec![mu; grid.len()])
    }
}

/// `mu = (E - G + 2iF) / (E + G + 2 sqrt(EG - F^2))`, so that the metric is
/// a multiple of `|dz + mu dz^-|^2`.
pub fn beltrami_coefficient(m: &LeafMetric2) -> Result<BeltramiField> {
    let mu = (0..m.grid.len())
        .map(|i| {
            let (e, f, g) = (m.e[i], m.f[i], m.g[i]);
            Complex64::new(e - g, 2.0 * f) / (e + g + 2.0 * (e * g - f * f).sqrt())
        })
        .collect();
    BeltramiField::new(m.grid, mu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeltramiOptions {
    pub k_max: f64,
    /// Anchor nodes mapped to 0 and 1; defaults to the ends of the middle row.
    pub anchors: Option<[usize; 2]>,
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the node count.
    pub max_iter_factor: usize,
}

impl Default for BeltramiOptions {
    fn default() -> Self {
        BeltramiOptions {
            k_max: 0.9,
            anchors: None,
            rel_tol: 1e-10,
            max_iter_factor: 10,
        }
    }
}

pub fn default_anchors(grid: &Grid2) -> [usize; 2] {
    let j = grid.y.n / 2;
    [grid.index(0, j), grid.index(grid.x.n - 1, j)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiconformalSolution {
    pub grid: Grid2,
    pub w: Vec<Complex64>,
    /// Area-weighted L2 norm of `w_zbar - mu w_z` over the triangles.
    pub residual: f64,
    /// Sup over triangles of `|w_zbar - mu w_z|`.
    pub residual_sup: f64,
    /// Min over triangles of `|w_z|^2 - |w_zbar|^2`.
    pub jacobian_min: f64,
    pub jacobian_positive: bool,
    pub anchors: [(usize, Complex64); 2],
    pub iterations: usize,
    /// Least-squares residual norm after each iteration, starting from the
    /// initial guess.
    pub history: Vec<f64>,
}

/// Linear triangles of the grid: every cell split along its rising diagonal.
fn triangles(grid: &Grid2) -> Vec<[usize; 3]> {
    let mut t = Vec::with_capacity(2 * (grid.x.n - 1) * (grid.y.n - 1));
    for j in 0..grid.y.n - 1 {
        for i in 0..grid.x.n - 1 {
            let a = grid.index(i, j);
            let b = grid.index(i + 1, j);
            let c = grid.index(i, j + 1);
            let d = grid.index(i + 1, j + 1);
            t.push([a, b, d]);
            t.push([a, d, c]);
        }
    }
    t
}

/// Coefficients of `(d/dx, d/dy)` of the linear interpolant on a triangle,
/// and its area.
fn gradient_weights(p: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let a2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let w = [
        [(p[1][1] - p[2][1]) / a2, (p[2][0] - p[1][0]) / a2],
        [(p[2][1] - p[0][1]) / a2, (p[0][0] - p[2][0]) / a2],
        [(p[0][1] - p[1][1]) / a2, (p[1][0] - p[0][0]) / a2],
    ];
    (w, 0.5 * a2.abs())
}

/// Per-triangle Wirtinger derivatives `(w_z, w_zbar)` of the linear interpolant.
fn wirtinger(w: &[Complex64], tri: &[usize; 3], gw: &[[f64; 2]; 3]) -> (Complex64, Complex64) {
    let mut wx = Complex64::new(0.0, 0.0);
    let mut wy = Complex64::new(0.0, 0.0);
    for k in 0..3 {
        wx += w[tri[k]] * gw[k][0];
        wy += w[tri[k]] * gw[k][1];
    }
    let i = Complex64::i();
    ((wx - i * wy) * 0.5, (wx + i * wy) * 0.5)
}

struct System {
    rows: Vec<[(usize, Complex64); 3]>,
    n: usize,
}

impl System {
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.rows.iter().map(|r| r.iter().map(|(j, c)| c * x[*j]).sum()).collect()
    }

    fn apply_adjoint(&self, r: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        for (row, v) in self.rows.iter().zip(r) {
            for (j, c) in row {
                out[*j] += c.conj() * v;
            }
        }
        out
    }
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Least-squares solution of `w_zbar = mu w_z` with linear elements on the
/// triangulated grid and `w(p0) = 0`, `w(p1) = 1`, by conjugate gradients on
/// the normal equations. The initial guess is the affine map fixing the
/// anchors.
pub fn solve_beltrami(mu: &BeltramiField, opts: &BeltramiOptions) -> Result<QuasiconformalSolution> {
    if mu.sup_abs > opts.k_max {
        return Err(Error::DilatationTooLarge { sup: mu.sup_abs, k_max: opts.k_max });
    }
    let grid = mu.grid;
    let [p0, p1] = opts.anchors.unwrap_or_else(|| default_anchors(&grid));
    if p0 == p1 || p0 >= grid.len() || p1 >= grid.len() {
        return Err(Error::InvalidInput("anchors must be two distinct grid nodes".into()));
    }
    let z = |i: usize| {
        let p = grid.point(i);
        Complex64::new(p[0], p[1])
    };
    let (z0, z1) = (z(p0), z(p1));
    let anchors = [(p0, Complex64::new(0.0, 0.0)), (p1, Complex64::new(1.0, 0.0))];

    // Free unknown numbering.
    let mut free = vec![usize::MAX; grid.len()];
    let mut n = 0;
    for (i, slot) in free.iter_mut().enumerate() {
        if i != p0 && i != p1 {
            *slot = n;
            n += 1;
        }
    }
    let tris = triangles(&grid);
    let geo: Vec<([[f64; 2]; 3], f64)> = tris.iter().map(|t| gradient_weights(t.map(|i| grid.point(i)))).collect();
    let i_unit = Complex64::i();
    let mut rows = Vec::with_capacity(tris.len());
    let mut b = Vec::with_capacity(tris.len());
    for (t, (gw, area)) in tris.iter().zip(&geo) {
        let m = (mu.mu[t[0]] + mu.mu[t[1]] + mu.mu[t[2]]) / 3.0;
        let s = area.sqrt();
        let mut row = [(0usize, Complex64::new(0.0, 0.0)); 3];
        let mut rhs = Complex64::new(0.0, 0.0);
        for k in 0..3 {
            let dz = (gw[k][0] - i_unit * gw[k][1]) * 0.5;
            let dzb = (gw[k][0] + i_unit * gw[k][1]) * 0.5;
            let c = (dzb - m * dz) * s;
            match anchors.iter().find(|a| a.0 == t[k]) {
                Some(a) => {
                    rhs -= c * a.1;
                    row[k] = (0, Complex64::new(0.0, 0.0));
                }
                None => row[k] = (free[t[k]], c),
            }
        }
        rows.push(row);
        b.push(rhs);
    }
    let sys = System { rows, n };

    let mut x: Vec<Complex64> = (0..grid.len()).filter(|&i| free[i] != usize::MAX).map(|i| (z(i) - z0) / (z1 - z0)).collect();
    let ax = sys.apply(&x);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut s = sys.apply_adjoint(&r);
    let mut p = s.clone();
    let mut gamma = norm2(&s);
    let target = opts.rel_tol * opts.rel_tol * gamma;
    let cap = opts.max_iter_factor * grid.len();
    let mut history = vec![norm2(&r).sqrt()];
    let mut iterations = 0;
    while gamma > target && gamma > 0.0 {
        if iterations >= cap {
            return Err(Error::NonConvergence {
                iterations,
                residual: (gamma / (target / (opts.rel_tol * opts.rel_tol))).sqrt(),
            });
        }
        let q = sys.apply(&p);
        let qq = norm2(&q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += pi * alpha;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= qi * alpha;
        }
        s = sys.apply_adjoint(&r);
        let g_new = norm2(&s);
        let beta = g_new / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + *pi * beta;
        }
        gamma = g_new;
        iterations += 1;
        history.push(norm2(&r).sqrt());
    }

    let mut w = vec![Complex64::new(0.0, 0.0); grid.len()];
    for i in 0..grid.len() {
        w[i] = match anchors.iter().find(|a| a.0 == i) {
            Some(a) => a.1,
            None => x[free[i]],
        };
    }
    let mut residual = 0.0;
    let mut residual_sup: f64 = 0.0;
    let mut jacobian_min = f64::INFINITY;
    for (t, (gw, area)) in tris.iter().zip(&geo) {
        let m = (mu.mu[t[0]] + mu.mu[t[1]] + mu.mu[t[2]]) / 3.0;
        let (wz, wzb) = wirtinger(&w, t, gw);
        let e = (wzb - m * wz).norm();
        residual += e * e * area;
        residual_sup = residual_sup.max(e);
        jacobian_min = jacobian_min.min(wz.norm_sqr() - wzb.norm_sqr());
    }
    Ok(QuasiconformalSolution {
        grid,
        w,
        residual: residual.sqrt(),
        residual_sup,
        jacobian_min,
        jacobian_positive: jacobian_min > 0.0,
        anchors,
        iterations,
        history,
    })
}

impl QuasiconformalSolution {
    /// Nodal `(w_x, w_y)` by second-order differences.
    pub fn partials(&self, i: usize) -> (Complex64, Complex64) {
        self.grid.partials(&self.w, i)
    }

    /// Nodal Wirtinger derivatives `(w_z, w_zbar)`.
    pub fn wirtinger_at(&self, i: usize) -> (Complex64, Complex64) {
        let (wx, wy) = self.partials(i);
        let iu = Complex64::i();
        ((wx - iu * wy) * 0.5, (wx + iu * wy) * 0.5)
    }

    /// Composes with `a w + b`; the anchors move accordingly.
    pub fn renormalized(&self, a: Complex64, b: Complex64) -> Self {
        let mut out = self.clone();
        for w in &mut out.w {
            *w = a * *w + b;
        }
        for an in &mut out.anchors {
            an.1 = a * an.1 + b;
        }
        out.residual *= a.norm();
        out.residual_sup *= a.norm();
        out.jacobian_min *= a.norm_sqr();
        out
    }
}

/// Real Jacobian `[[u_x, u_y], [v_x, v_y]]` of `w = u + iv`.
fn real_jacobian(wx: Complex64, wy: Complex64) -> Matrix2<f64> {
    Matrix2::new(wx.re, wy.re, wx.im, wy.im)
}

/// How far a leaf metric is from isothermal in the coordinates `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsothermalResidual {
    /// `|E' - G'| / (E' + G')` per node.
    pub anisotropy: Vec<f64>,
    /// `|F'| / (E' + G')` per node.
    pub skew: Vec<f64>,
    /// `sqrt((E' - G')^2 + 4F'^2) / (E' + G')` per node; unlike the two
    /// components it does not depend on the rotation of `w`.
    pub distortion: Vec<f64>,
    /// Conformal factor `(E' + G') / 2`.
    pub lambda: Vec<f64>,
    pub sup_anisotropy: f64,
    pub sup_skew: f64,
    pub sup_distortion: f64,
}

/// Transforms the metric to `w`-coordinates by the inverse-Jacobian
/// congruence and measures its deviation from a multiple of the identity.
pub fn isothermal_verify(m: &LeafMetric2, w: &QuasiconformalSolution) -> Result<IsothermalResidual> {
    if m.grid != w.grid {
        return Err(Error::InvalidInput("metric and chart live on different grids".into()));
    }
    let n = m.grid.len();
    let mut out = IsothermalResidual {
        anisotropy: Vec::with_capacity(n),
        skew: Vec::with_capacity(n),
        distortion: Vec::with_capacity(n),
        lambda: Vec::with_capacity(n),
        sup_anisotropy: 0.0,
        sup_skew: 0.0,
        sup_distortion: 0.0,
    };
    for i in 0..n {
        let (wx, wy) = w.partials(i);
        let j = real_jacobian(wx, wy);
        let det = j.determinant();
        if !(det > 0.0) {
            return Err(Error::NonPositiveJacobian { min: det });
        }
        let ji = j.try_inverse().expect("nonzero determinant");
        let mp = ji.transpose() * m.at(i) * ji;
        let tr = mp[(0, 0)] + mp[(1, 1)];
        let an = (mp[(0, 0)] - mp[(1, 1)]).abs() / tr;
        let sk = mp[(0, 1)].abs() / tr;
        let di = ((mp[(0, 0)] - mp[(1, 1)]).powi(2) + 4.0 * mp[(0, 1)].powi(2)).sqrt() / tr;
        out.sup_anisotropy = out.sup_anisotropy.max(an);
        out.sup_skew = out.sup_skew.max(sk);
        out.sup_distortion = out.sup_distortion.max(di);
        out.anisotropy.push(an);
        out.skew.push(sk);
        out.distortion.push(di);
        out.lambda.push(0.5 * tr);
    }
    Ok(out)
}

/// Empirical orders `log2(e_k / e_{k+1})` for a sequence of errors on grids
/// with halving spacing. A step where both errors are at or below
/// [`EXACT_FLOOR`] is reported as infinite (the discretization is exact).
pub fn convergence_orders(errors: &[f64]) -> Vec<f64> {
    errors
        .windows(2)
        .map(|w| {
            if w[0] <= EXACT_FLOOR && w[1] <= EXACT_FLOOR {
                f64::INFINITY
            } else {
                (w[0] / w[1]).log2()
            }
        })
        .collect()
}

/// One isothermal chart per leaf `x3 = t`.
#[derive(Debug, Clone)]
pub struct FoliatedChart {
    pub grid: Grid2,
    pub t: Vec<f64>,
    pub metrics: Vec<Option<LeafMetric2>>,
    pub leaves: Vec<Option<QuasiconformalSolution>>,
    pub isothermal: Vec<Option<IsothermalResidual>>,
    /// Why a leaf is masked.
    pub failures: Vec<(usize, Error)>,
    /// `max_t sup_z |w_t(z) - w_{t'}(z)|` over adjacent leaf pairs.
    pub continuity_modulus: f64,
    /// Continuity modulus divided by the leaf spacing.
    pub continuity_rate: f64,
}

impl FoliatedChart {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Solves the Beltrami equation on every leaf `x3 = t` of a metric field
/// with shared anchors.
pub fn foliated_isothermal(metric: &MetricField, grid: Grid2, t: &[f64], opts: &BeltramiOptions) -> FoliatedChart {
    let solved: Vec<Result<(LeafMetric2, QuasiconformalSolution, IsothermalResidual)>> = t
        .par_iter()
        .map(|&tv| {
            let m = LeafMetric2::restrict(metric, grid, tv)?;
            let mu = beltrami_coefficient(&m)?;
            let w = solve_beltrami(&mu, opts)?;
            if !w.jacobian_positive {
                return Err(Error::NonPositiveJacobian { min: w.jacobian_min });
            }
            let iso = isothermal_verify(&m, &w)?;
            Ok((m, w, iso))
        })
        .collect();
    let mut chart = FoliatedChart {
        grid,
        t: t.to_vec(),
        metrics: vec![],
        leaves: vec![],
        isothermal: vec![],
        failures: vec![],
        continuity_modulus: 0.0,
        continuity_rate: 0.0,
    };
    for (k, r) in solved.into_iter().enumerate() {
        match r {
            Ok((m, w, iso)) => {
                chart.metrics.push(Some(m));
                chart.leaves.push(Some(w));
                chart.isothermal.push(Some(iso));
            }
            Err(e) => {
                chart.metrics.push(None);
                chart.leaves.push(None);
                chart.isothermal.push(None);
                chart.failures.push((k, e));
            }
        }
    }
    for k in 1..t.len() {
        if let (Some(a), Some(b)) = (&chart.leaves[k - 1], &chart.leaves[k]) {
            let d = a.w.iter().zip(&b.w).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            chart.continuity_modulus = chart.continuity_modulus.max(d);
            let dt = (t[k] - t[k - 1]).abs();
            if dt > 0.0 {
                chart.continuity_rate = chart.continuity_rate.max(d / dt);
            }
        }
    }
    chart
}

/// Cubic Lagrange interpolation of a nodal field; `None` outside the grid.
pub fn interpolate_cubic<T>(grid: &Grid2, f: &[T], p: [f64; 2]) -> Option<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let axis = |a: &crate::grid::Axis, v: f64| -> Option<(usize, [f64; 4])> {
        let slack = 1e-9 * a.h();
        if a.n < 4 || v < a.min - slack || v > a.max + slack {
            return None;
        }
        let s = (v - a.min) / a.h();
        let base = (s.floor() as isize - 1).clamp(0, a.n as isize - 4) as usize;
        let u = s - base as f64;
        let mut w = [0.0; 4];
        for (k, wk) in w.iter_mut().enumerate() {
            let mut prod = 1.0;
            for m in 0..4 {
                if m != k {
                    prod *= (u - m as f64) / (k as f64 - m as f64);
                }
            }
            *wk = prod;
        }
        Some((base, w))
    };
    let (bx, wx) = axis(&grid.x, p[0])?;
    let (by, wy) = axis(&grid.y, p[1])?;
    let mut acc: Option<T> = None;
    for (b, wyb) in wy.iter().enumerate() {
        for (a, wxa) in wx.iter().enumerate() {
            let v = f[grid.index(bx + a, by + b)] * (wxa * wyb);
            acc = Some(match acc {
                Some(s) => s + v,
                None => v,
            });
        }
    }
    acc
}

/// Preimage of `target` under the discrete chart: bilinear inverse on a
/// cell near the closest node, refined by two Newton steps.
pub fn invert_chart(w: &QuasiconformalSolution, target: Complex64) -> Option<[f64; 2]> {
    let grid = &w.grid;
    let near = (0..grid.len()).min_by(|&a, &b| (w.w[a] - target).norm().total_cmp(&(w.w[b] - target).norm()))?;
    let (ni, nj) = grid.ij(near);
    let mut best: Option<([f64; 2], f64)> = None;
    for j in nj.saturating_sub(1)..=nj.min(grid.y.n - 2) {
        for i in ni.saturating_sub(1)..=ni.min(grid.x.n - 2) {
            let c = [
                w.w[grid.index(i, j)],
                w.w[grid.index(i + 1, j)],
                w.w[grid.index(i, j + 1)],
                w.w[grid.index(i + 1, j + 1)],
            ];
            let eval = |s: f64, t: f64| c[0] * ((1.0 - s) * (1.0 - t)) + c[1] * (s * (1.0 - t)) + c[2] * ((1.0 - s) * t) + c[3] * (s * t);
            let (mut s, mut t) = (0.5, 0.5);
            // Bilinear inverse estimate, then two Newton refinements.
            for _ in 0..3 {
                let f = eval(s, t) - target;
                let ds = (c[1] - c[0]) * (1.0 - t) + (c[3] - c[2]) * t;
                let dt = (c[2] - c[0]) * (1.0 - s) + (c[3] - c[1]) * s;
                let jm = Matrix2::new(ds.re, dt.re, ds.im, dt.im);
                let step = jm.try_inverse()? * Vector2::new(f.re, f.im);
                s -= step[0];
                t -= step[1];
            }
            let out = (s.min(0.0).abs() + (s - 1.0).max(0.0)) + (t.min(0.0).abs() + (t - 1.0).max(0.0));
            let p = [grid.x.coord(i) + s * grid.x.h(), grid.y.coord(j) + t * grid.y.h()];
            if best.as_ref().is_none_or(|b| out < b.1) {
                best = Some((p, out));
            }
        }
    }
    best.filter(|b| b.1 <= 1e-9).map(|b| b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Holomorphic,
    Antiholomorphic,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolomorphyOptions {
    /// Allowed drift of the leaf coordinate under the map.
    pub leaf_tol: f64,
    /// Allowed relative conformal distortion of the map between leaf metrics.
    pub conformality_tol: f64,
}

impl Default for HolomorphyOptions {
    fn default() -> Self {
        HolomorphyOptions {
            leaf_tol: 1e-9,
            conformality_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafHolomorphy {
    pub t: f64,
    /// `|h_zbar|` per source node (`None` where the image leaves the target grid).
    pub cr_field: Vec<Option<f64>>,
    /// `sup |h_zbar|`.
    pub cr_residual: f64,
    /// `sup |h_z|`: the residual of the conjugated map `tau o h`.
    pub conjugate_residual: f64,
    pub det_min: f64,
    pub det_max: f64,
    /// Sup of the conformal distortion between the source leaf metric and
    /// the pulled-back target leaf metric.
    pub conformality_residual: f64,
    pub masked: usize,
}

#[derive(Debug, Clone)]
pub struct HolomorphyReport {
    pub leaves: Vec<Option<LeafHolomorphy>>,
    pub orientation: Orientation,
    /// Sup over leaves of the residual after orientation correction.
    pub residual: f64,
}

fn distortion_between(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    let m = a.try_inverse().expect("SPD") * b;
    let tr = m.trace();
    let det = m.determinant();
    (tr * tr - 4.0 * det).max(0.0).sqrt() / tr
}

/// Leafwise Cauchy-Riemann residual of `h = w_N o phi o w_M^{-1}`, computed
/// through the chain rule at the source nodes.
pub fn leafwise_holomorphy(
    phi: &SmoothMap,
    chart_m: &FoliatedChart,
    chart_n: &FoliatedChart,
    opts: &HolomorphyOptions,
) -> Result<HolomorphyReport> {
    if chart_m.t.len() != chart_n.t.len() || chart_m.t.iter().zip(&chart_n.t).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::InvalidInput("source and target charts use different leaf parameters".into()));
    }
    let gm = chart_m.grid;
    let gn = chart_n.grid;
    let mut leaves = Vec::with_capacity(chart_m.t.len());
    for (k, &t) in chart_m.t.iter().enumerate() {
        let (Some(wm), Some(wn), Some(mm), Some(mn)) = (&chart_m.leaves[k], &chart_n.leaves[k], &chart_m.metrics[k], &chart_n.metrics[k]) else {
            leaves.push(None);
            continue;
        };
        let dn: Vec<(Complex64, Complex64)> = (0..gn.len()).map(|i| wn.partials(i)).collect();
        let dnx: Vec<Complex64> = dn.iter().map(|d| d.0).collect();
        let dny: Vec<Complex64> = dn.iter().map(|d| d.1).collect();
        let metric_n: Vec<Matrix2<f64>> = (0..gn.len()).map(|i| mn.at(i)).collect();
        let per_node: Vec<Result<Option<(f64, f64, f64, f64)>>> = (0..gm.len())
            .into_par_iter()
            .map(|i| {
                let p = gm.point(i);
                let x = [p[0], p[1], t];
                let q = phi.eval(&x)?;
                let drift = (q[2] - t).abs();
                if drift > opts.leaf_tol {
                    return Err(Error::LeafMixing { drift });
                }
                let qp = [q[0], q[1]];
                let (Some(nx), Some(ny), Some(gq)) = (
                    interpolate_cubic(&gn, &dnx, qp),
                    interpolate_cubic(&gn, &dny, qp),
                    interpolate_cubic(&gn, &metric_n, qp),
                ) else {
                    return Ok(None);
                };
                let j3 = phi.jacobian(&x)?;
                let jp = Matrix2::new(j3[(0, 0)], j3[(0, 1)], j3[(1, 0)], j3[(1, 1)]);
                let (mx, my) = wm.partials(i);
                let dwm = real_jacobian(mx, my);
                let dh = real_jacobian(nx, ny) * jp * dwm.try_inverse().ok_or(Error::NonPositiveJacobian { min: 0.0 })?;
                // h_z and h_zbar from the real Jacobian.
                let hz = Complex64::new(dh[(0, 0)] + dh[(1, 1)], dh[(1, 0)] - dh[(0, 1)]) * 0.5;
                let hzb = Complex64::new(dh[(0, 0)] - dh[(1, 1)], dh[(1, 0)] + dh[(0, 1)]) * 0.5;
                let conf = distortion_between(&mm.at(i), &(jp.transpose() * gq * jp));
                Ok(Some((hzb.norm(), hz.norm(), dh.determinant(), conf)))
            })
            .collect();
        let mut leaf = LeafHolomorphy {
            t,
            cr_field: Vec::with_capacity(gm.len()),
            cr_residual: 0.0,
            conjugate_residual: 0.0,
            det_min: f64::INFINITY,
            det_max: f64::NEG_INFINITY,
            conformality_residual: 0.0,
            masked: 0,
        };
        for r in per_node {
            match r? {
                Some((zb, z, det, conf)) => {
                    leaf.cr_field.push(Some(zb));
                    leaf.cr_residual = leaf.cr_residual.max(zb);
                    leaf.conjugate_residual = leaf.conjugate_residual.max(z);
                    leaf.det_min = leaf.det_min.min(det);
                    leaf.det_max = leaf.det_max.max(det);
                    leaf.conformality_residual = leaf.conformality_residual.max(conf);
                }
                None => {
                    leaf.cr_field.push(None);
                    leaf.masked += 1;
                }
            }
        }
        if leaf.conformality_residual > opts.conformality_tol {
            return Err(Error::Inapplicable(format!(
                "map is not leafwise conformal on leaf t = {t} (distortion {:.3e})",
                leaf.conformality_residual
            )));
        }
        leaves.push(Some(leaf));
    }
    let valid: Vec<&LeafHolomorphy> = leaves.iter().flatten().filter(|l| l.masked < l.cr_field.len()).collect();
    if valid.is_empty() {
        return Err(Error::Inapplicable("no leaf has nodes inside the target chart".into()));
    }
    let orientation = if valid.iter().all(|l| l.det_min > 0.0) {
        Orientation::Holomorphic
    } else if valid.iter().all(|l| l.det_max < 0.0) {
        Orientation::Antiholomorphic
    } else {
        Orientation::Mixed
    };
    let residual = valid
        .iter()
        .map(|l| match orientation {
            Orientation::Holomorphic => l.cr_residual,
            Orientation::Antiholomorphic => l.conjugate_residual,
            Orientation::Mixed => l.cr_residual.min(l.conjugate_residual),
        })
        .fold(0.0, f64::max);
    Ok(HolomorphyReport { leaves, orientation, residual })
}
