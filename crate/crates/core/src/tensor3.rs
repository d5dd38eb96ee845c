//! Pointwise exterior algebra on a 3-dimensional cotangent space.
//!
//! Covectors and operators are stored in a declared coframe (usually the
//! coordinate coframe `dx1, dx2, dx3`). All metric-dependent operations take
//! a [`CotangentMetric`], the Gram matrix of that coframe. Operators act on
//! column vectors of coefficients.

use nalgebra::{Cholesky, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Relative symmetry tolerance for Gram matrices.
const SYMMETRY_TOL: f64 = 1e-12;
/// Relative tolerance for self-adjointness checks.
const SELF_ADJOINT_TOL: f64 = 1e-9;
/// Unit-norm tolerance for rotation axes.
const UNIT_TOL: f64 = 1e-9;

/// A 1-form at a point, by its coefficients in the declared coframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covector3(pub Vector3<f64>);

/// A 2-form at a point, coefficients of `w2^w3`, `w3^w1`, `w1^w2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoForm3(pub Vector3<f64>);

/// An endomorphism of the cotangent space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Operator3(pub Matrix3<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    #[default]
    Positive,
    Negative,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Positive => 1.0,
            Orientation::Negative => -1.0,
        }
    }
}

impl Covector3 {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Covector3(Vector3::new(a, b, c))
    }

    pub fn zero() -> Self {
        Covector3(Vector3::zeros())
    }

    /// Coordinate covector `dx_{i+1}`.
    pub fn basis(i: usize) -> Self {
        let mut v = Vector3::zeros();
        v[i] = 1.0;
        Covector3(v)
    }

    pub fn scale(&self, s: f64) -> Self {
        Covector3(self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Add for Covector3 {
    type Output = Covector3;
    fn add(self, rhs: Covector3) -> Covector3 {
        Covector3(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Covector3 {
    type Output = Covector3;
    fn sub(self, rhs: Covector3) -> Covector3 {
        Covector3(self.0 - rhs.0)
    }
}

impl std::ops::Neg for Covector3 {
    type Output = Covector3;
    fn neg(self) -> Covector3 {
        Covector3(-self.0)
    }
}

impl TwoForm3 {
    pub fn zero() -> Self {
        TwoForm3(Vector3::zeros())
    }
}

impl Operator3 {
    pub fn identity() -> Self {
        Operator3(Matrix3::identity())
    }

    pub fn zero() -> Self {
        Operator3(Matrix3::zeros())
    }

    pub fn apply(&self, w: &Covector3) -> Covector3 {
        Covector3(self.0 * w.0)
    }

    pub fn compose(&self, other: &Operator3) -> Operator3 {
        Operator3(self.0 * other.0)
    }

    pub fn pow(&self, n: u32) -> Operator3 {
        (0..n).fold(Operator3::identity(), |acc, _| acc.compose(self))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Adjoint with respect to `m`: `<T a, b> = <a, T* b>`.
    pub fn adjoint(&self, m: &CotangentMetric) -> Operator3 {
        Operator3(m.gram_inv * self.0.transpose() * m.gram)
    }

    /// Matrix of this operator in an `m`-orthonormal coframe.
    pub fn in_orthonormal_frame(&self, m: &CotangentMetric) -> Matrix3<f64> {
        m.chol_t * self.0 * m.chol_t_inv
    }

    /// Frobenius norm measured in an `m`-orthonormal coframe.
    pub fn norm(&self, m: &CotangentMetric) -> f64 {
        self.in_orthonormal_frame(m).norm()
    }

    /// Frobenius inner product measured in an `m`-orthonormal coframe.
    pub fn frobenius_dot(&self, other: &Operator3, m: &CotangentMetric) -> f64 {
        self.in_orthonormal_frame(m)
            .component_mul(&other.in_orthonormal_frame(m))
            .sum()
    }
}

impl std::ops::Add for Operator3 {
    type Output = Operator3;
    fn add(self, rhs: Operator3) -> Operator3 {
        Operator3(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Operator3 {
    type Output = Operator3;
    fn sub(self, rhs: Operator3) -> Operator3 {
        Operator3(self.0 - rhs.0)
    }
}

impl std::ops::Mul<f64> for Operator3 {
    type Output = Operator3;
    fn mul(self, rhs: f64) -> Operator3 {
        Operator3(self.0 * rhs)
    }
}

/// Inner product on the cotangent space: the Gram matrix of the coframe.
///
/// For a Riemannian metric `g` in coordinates this is `g^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CotangentMetric {
    gram: Matrix3<f64>,
    gram_inv: Matrix3<f64>,
    /// Transpose of the Cholesky factor: `gram = chol_t^T chol_t`.
    chol_t: Matrix3<f64>,
    chol_t_inv: Matrix3<f64>,
    det: f64,
}

impl CotangentMetric {
    pub fn new(gram: Matrix3<f64>) -> Result<Self> {
        if !gram.iter().all(|x| x.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entry".into()));
        }
        let scale = gram.abs().max().max(f64::MIN_POSITIVE);
        let asym = (gram - gram.transpose()).abs().max();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        let sym = (gram + gram.transpose()) * 0.5;
        let chol = Cholesky::new(sym)
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        let l = chol.l();
        if (0..3).any(|i| l[(i, i)] <= scale * 1e-15) {
            return Err(Error::NotPositiveDefinite("singular Gram matrix".into()));
        }
        let chol_t = l.transpose();
        let chol_t_inv = chol_t
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("singular Gram matrix".into()))?;
        let gram_inv = chol.inverse();
        let det = (l[(0, 0)] * l[(1, 1)] * l[(2, 2)]).powi(2);
        Ok(CotangentMetric {
            gram: sym,
            gram_inv,
            chol_t,
            chol_t_inv,
            det,
        })
    }

    pub fn euclidean() -> Self {
        CotangentMetric {
            gram: Matrix3::identity(),
            gram_inv: Matrix3::identity(),
            chol_t: Matrix3::identity(),
            chol_t_inv: Matrix3::identity(),
            det: 1.0,
        }
    }

    /// Cotangent metric induced by a tangent metric `g`.
    pub fn from_tangent(g: &Matrix3<f64>) -> Result<Self> {
        let g_inv = Cholesky::new((g + g.transpose()) * 0.5)
            .ok_or_else(|| Error::NotPositiveDefinite("tangent metric".into()))?
            .inverse();
        CotangentMetric::new((g_inv + g_inv.transpose()) * 0.5)
    }

    pub fn gram(&self) -> &Matrix3<f64> {
        &self.gram
    }

    /// The tangent metric `g` (inverse of the Gram matrix).
    pub fn tangent(&self) -> &Matrix3<f64> {
        &self.gram_inv
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn inner(&self, a: &Covector3, b: &Covector3) -> f64 {
        a.0.dot(&(self.gram * b.0))
    }

    pub fn norm(&self, a: &Covector3) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// Coefficients of `a` in an `m`-orthonormal coframe.
    pub fn to_orthonormal(&self, a: &Covector3) -> Vector3<f64> {
        self.chol_t * a.0
    }

    pub fn from_orthonormal(&self, v: &Vector3<f64>) -> Covector3 {
        Covector3(self.chol_t_inv * v)
    }

    /// Coefficient of the Riemannian volume form on `dx1^dx2^dx3`, i.e. `sqrt(det g)`.
    pub fn volume_density(&self) -> f64 {
        1.0 / self.det.sqrt()
    }

    /// Metric norm of the 3-form `c dx1^dx2^dx3`.
    pub fn three_form_norm(&self, c: f64) -> f64 {
        c.abs() * self.det.sqrt()
    }

    /// Metric norm of a 2-form.
    pub fn two_form_norm(&self, b: &TwoForm3) -> f64 {
        let w = hodge_star_2(b, self, Orientation::Positive);
        self.norm(&w)
    }
}

/// `a ^ b` for 1-forms.
pub fn wedge(a: &Covector3, b: &Covector3) -> TwoForm3 {
    TwoForm3(a.0.cross(&b.0))
}

/// `a ^ b` for a 1-form and a 2-form: coefficient on `dx1^dx2^dx3`.
pub fn wedge_3(a: &Covector3, b: &TwoForm3) -> f64 {
    a.0.dot(&b.0)
}

/// Hodge star of a 1-form.
pub fn hodge_star(w: &Covector3, m: &CotangentMetric, orientation: Orientation) -> TwoForm3 {
    TwoForm3(m.gram * w.0 * (orientation.sign() / m.det.sqrt()))
}

/// Hodge star of a 2-form.
pub fn hodge_star_2(b: &TwoForm3, m: &CotangentMetric, orientation: Orientation) -> Covector3 {
    Covector3(m.gram_inv * b.0 * (orientation.sign() * m.det.sqrt()))
}

fn cross_matrix(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// The operator `a -> *(w ^ a)` (positive orientation).
pub fn star_iota(w: &Covector3, m: &CotangentMetric) -> Operator3 {
    Operator3(m.gram_inv * cross_matrix(&w.0) * m.det.sqrt())
}

/// Rotation of the cotangent space about the unit covector `w` by `theta`.
pub fn rot(theta: f64, w: &Covector3, m: &CotangentMetric) -> Result<Operator3> {
    let norm = m.norm(w);
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnit { norm });
    }
    let k = star_iota(w, m).0;
    Ok(Operator3(
        Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos()),
    ))
}

/// Quarter-turn rotation about `w`.
pub fn rot_quarter(w: &Covector3, m: &CotangentMetric) -> Result<Operator3> {
    rot(std::f64::consts::FRAC_PI_2, w, m)
}

/// Symmetric product `a -> <w,a> e + <e,a> w`.
pub fn sym_prod(w: &Covector3, e: &Covector3, m: &CotangentMetric) -> Operator3 {
    let mw = m.gram * w.0;
    let me = m.gram * e.0;
    Operator3(e.0 * mw.transpose() + w.0 * me.transpose())
}

pub fn commutator(t1: &Operator3, t2: &Operator3) -> Operator3 {
    Operator3(t1.0 * t2.0 - t2.0 * t1.0)
}

fn check_self_adjoint(s: &Operator3, m: &CotangentMetric) -> Result<()> {
    // <S a, b> = a^T S^T G b must be symmetric in (a, b).
    let gs = s.0.transpose() * m.gram;
    let scale = s.0.norm() * m.gram.norm();
    let asymmetry = (gs - gs.transpose()).norm();
    if asymmetry > SELF_ADJOINT_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSelfAdjoint {
            asymmetry: asymmetry / scale.max(f64::MIN_POSITIVE),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    /// Closed-form eigenvalues with a Jacobi polishing pass on the eigenbasis.
    Analytic,
    /// Plain cyclic Jacobi, used near eigenvalue collisions.
    Jacobi,
}

/// Eigendecomposition of a self-adjoint operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen {
    /// Ascending.
    pub values: [f64; 3],
    /// `m`-orthonormal eigen-covectors, matching `values`.
    pub vectors: [Covector3; 3],
    pub method: EigenMethod,
}

/// Eigendecomposition of `s`, self-adjoint with respect to `m`.
///
/// The metric problem is reduced to an ordinary symmetric one through the
/// Cholesky factor of the Gram matrix.
pub fn eig_sym3(s: &Operator3, m: &CotangentMetric) -> Result<SymEigen> {
    if !s.0.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("non-finite operator".into()));
    }
    check_self_adjoint(s, m)?;
    let a = s.in_orthonormal_frame(m);
    let a = (a + a.transpose()) * 0.5;
    let (values, vecs, method) = symmetric_eigen(&a);
    let vectors = [0, 1, 2].map(|i| m.from_orthonormal(&vecs.column(i).into_owned()));
    Ok(SymEigen {
        values,
        vectors,
        method,
    })
}

/// Below this relative eigenvalue separation the closed form is abandoned.
const DISCRIMINANT_TOL: f64 = 1e-12;

/// Eigen-decomposition of a real symmetric 3x3 matrix; eigenvectors are columns.
pub fn symmetric_eigen(a: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>, EigenMethod) {
    let scale = a.abs().max();
    if scale == 0.0 {
        return ([0.0; 3], Matrix3::identity(), EigenMethod::Analytic);
    }
    let off = a[(0, 1)].abs() + a[(0, 2)].abs() + a[(1, 2)].abs();
    if off == 0.0 {
        return sorted(a, Matrix3::identity(), EigenMethod::Analytic);
    }
    let b = a / scale;
    let lam = analytic_eigenvalues(&b);
    let rel_disc = (lam[1] - lam[0]).min(lam[2] - lam[1]);
    if rel_disc < DISCRIMINANT_TOL {
        let (d, v) = jacobi(a, Matrix3::identity());
        return sorted(&d, v, EigenMethod::Jacobi);
    }
    let v0 = analytic_eigenvectors(&b, &lam);
    let (d, v) = jacobi(a, v0);
    sorted(&d, v, EigenMethod::Analytic)
}

fn sorted(
    d: &Matrix3<f64>,
    v: Matrix3<f64>,
    method: EigenMethod,
) -> ([f64; 3], Matrix3<f64>, EigenMethod) {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| d[(i, i)].total_cmp(&d[(j, j)]));
    let values = idx.map(|i| d[(i, i)]);
    let cols = idx.map(|i| v.column(i).into_owned());
    (values, Matrix3::from_columns(&cols), method)
}

/// Trigonometric closed form, ascending.
fn analytic_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let q = a.trace() / 3.0;
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let mid = 3.0 * q - hi - lo;
    let mut l = [lo, mid, hi];
    l.sort_by(f64::total_cmp);
    l
}

fn analytic_eigenvectors(a: &Matrix3<f64>, lam: &[f64; 3]) -> Matrix3<f64> {
    let null_dir = |l: f64| -> Vector3<f64> {
        let m = a - Matrix3::identity() * l;
        let r0 = m.row(0).transpose();
        let r1 = m.row(1).transpose();
        let r2 = m.row(2).transpose();
        let c = [r0.cross(&r1), r1.cross(&r2), r2.cross(&r0)];
        let best = c
            .iter()
            .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))
            .copied()
            .unwrap_or_else(Vector3::x);
        best.normalize()
    };
    // The extreme eigenvalues are better isolated; the middle vector closes the frame.
    let v0 = null_dir(lam[0]);
    let mut v2 = null_dir(lam[2]);
    v2 -= v0 * v0.dot(&v2);
    let v2 = v2.normalize();
    let v1 = v2.cross(&v0);
    Matrix3::from_columns(&[v0, v1, v2])
}

/// Cyclic Jacobi on `v^T a v`; returns the diagonalized matrix and accumulated basis.
fn jacobi(a: &Matrix3<f64>, v0: Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let mut d = v0.transpose() * a * v0;
    d = (d + d.transpose()) * 0.5;
    let mut v = v0;
    for _sweep in 0..50 {
        let off = d[(0, 1)].powi(2) + d[(0, 2)].powi(2) + d[(1, 2)].powi(2);
        let diag = d[(0, 0)].powi(2) + d[(1, 1)].powi(2) + d[(2, 2)].powi(2);
        if off <= f64::EPSILON.powi(2) * 1e-4 * diag || off < 1e-300 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = d[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (d[(q, q)] - d[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut r = Matrix3::identity();
            r[(p, p)] = c;
            r[(q, q)] = c;
            r[(p, q)] = s;
            r[(q, p)] = -s;
            d = r.transpose() * d * r;
            d[(p, q)] = 0.0;
            d[(q, p)] = 0.0;
            v *= r;
        }
    }
    (d, v)
}

/// The pair `(eta, sigma)` of Lemma 3 for a unit covector `w`.
///
/// `w, eta, sigma` are pairwise orthogonal and
/// `S x = x/|x|^2 + <S w, x> w` for `x` in `{eta, sigma}`.
pub fn lemma3_pair(
    w: &Covector3,
    s: &Operator3,
    m: &CotangentMetric,
    spectral_gap_tol: f64,
) -> Result<(Covector3, Covector3)> {
    let norm = m.norm(w);
    if norm == 0.0 {
        return Err(Error::ZeroCovector);
    }
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnit { norm });
    }
    let eig = eig_sym3(s, m)?;
    let lam = eig.values;
    let scale = lam[2].abs().max(f64::MIN_POSITIVE);
    let gap = (lam[1] - lam[0]).min(lam[2] - lam[1]) / scale;
    if gap < spectral_gap_tol {
        return Err(Error::RepeatedEigenvalues {
            gap,
            tol: spectral_gap_tol,
        });
    }
    if lam[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite("operator has non-positive eigenvalue".into()));
    }
    let a = eig.vectors.map(|e| m.inner(w, &e));
    let eta = first_lemma3_solution(&a, &lam, &eig.vectors, m);
    let sigma_dir = rot_quarter(w, m)?.apply(&eta);
    // S sigma = c sigma + d w with c = <S sigma, sigma>/|sigma|^2; rescale so |sigma|^2 = 1/c.
    let ss = s.apply(&sigma_dir);
    let c = m.inner(&ss, &sigma_dir) / m.inner(&sigma_dir, &sigma_dir);
    let sigma = sigma_dir.scale(1.0 / (c.sqrt() * m.norm(&sigma_dir)));
    Ok((eta, sigma))
}

/// Below this magnitude an eigen-component of `w` is treated as absent.
const ACTIVE_COMPONENT: f64 = 1e-150;

/// First solution in eigenvalue order: either a root of `sum a_i^2/(lam_i - C)`
/// between consecutive active poles, or an eigen-covector orthogonal to `w`.
fn first_lemma3_solution(
    a: &[f64; 3],
    lam: &[f64; 3],
    eta: &[Covector3; 3],
    m: &CotangentMetric,
) -> Covector3 {
    let active: Vec<usize> = (0..3).filter(|&i| a[i].abs() > ACTIVE_COMPONENT).collect();
    // Candidates keyed by the position they occupy in the spectrum.
    let mut candidates: Vec<(f64, Covector3)> = Vec::with_capacity(2);
    for i in 0..3 {
        if !active.contains(&i) {
            candidates.push((lam[i], eta[i].scale(1.0 / lam[i].sqrt())));
        }
    }
    for pair in active.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let root = secular_root(a, lam, lo, hi);
        let mut v = Covector3::zero();
        for i in 0..3 {
            if active.contains(&i) {
                v = v + eta[i].scale(a[i] / root.denominator(lam, i));
            }
        }
        let c = root.value(lam);
        let v = v.scale(1.0 / (c.sqrt() * m.norm(&v)));
        candidates.push((c, v));
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    candidates[0].1
}

/// A root `C` stored as an offset from the nearer bracketing pole so that
/// `lam_i - C` keeps full relative precision even when `C` hugs a pole.
#[derive(Debug, Clone, Copy)]
struct SecularRoot {
    pole: usize,
    offset: f64,
}

impl SecularRoot {
    fn value(&self, lam: &[f64; 3]) -> f64 {
        lam[self.pole] + self.offset
    }

    /// `lam_i - C`.
    fn denominator(&self, lam: &[f64; 3], i: usize) -> f64 {
        if i == self.pole {
            -self.offset
        } else {
            (lam[i] - lam[self.pole]) - self.offset
        }
    }
}

/// Bisection for the root of the secular function on `(lam[lo], lam[hi])`.
///
/// The function is strictly increasing there, from `-inf` to `+inf`.
fn secular_root(a: &[f64; 3], lam: &[f64; 3], lo: usize, hi: usize) -> SecularRoot {
    let eval = |r: &SecularRoot| -> f64 {
        (0..3)
            .filter(|&i| a[i].abs() > ACTIVE_COMPONENT)
            .map(|i| a[i] * a[i] / r.denominator(lam, i))
            .sum()
    };
    let width = lam[hi] - lam[lo];
    let mid = SecularRoot {
        pole: lo,
        offset: 0.5 * width,
    };
    // Decide which half holds the root, then bisect in the offset from that half's pole.
    let (pole, sign) = if eval(&mid) > 0.0 { (lo, 1.0) } else { (hi, -1.0) };
    let mut near = 0.0f64;
    let mut far = 0.5 * width;
    for _ in 0..400 {
        let t = 0.5 * (near + far);
        if t == near || t == far || far - near <= 1e-13_f64.min(f64::EPSILON * far) {
            break;
        }
        let f = eval(&SecularRoot {
            pole,
            offset: sign * t,
        });
        // Moving away from the pole, f goes from -inf (lower pole) or +inf (upper pole).
        let past_root = if sign > 0.0 { f > 0.0 } else { f < 0.0 };
        if past_root {
            far = t;
        } else {
            near = t;
        }
    }
    SecularRoot {
        pole,
        offset: sign * 0.5 * (near + far),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_spd(seed: &[f64]) -> Matrix3<f64> {
        let b = Matrix3::from_iterator(seed.iter().copied());
        b * b.transpose() + Matrix3::identity() * 0.5
    }

    /// Independent Hodge star: orthonormalize the coframe, then use `*t1 = t2^t3` etc.
    fn hodge_by_orthonormalization(w: &Covector3, m: &CotangentMetric) -> TwoForm3 {
        let g = *m.gram();
        let ip = |a: &Vector3<f64>, b: &Vector3<f64>| a.dot(&(g * b));
        let mut basis: Vec<Vector3<f64>> = Vec::new();
        for i in 0..3 {
            let mut v = Vector3::zeros();
            v[i] = 1.0;
            for b in &basis {
                v -= b * ip(&v, b);
            }
            let n = ip(&v, &v).sqrt();
            basis.push(v / n);
        }
        // Orient so that t1^t2^t3 is a positive multiple of dx1^dx2^dx3.
        if basis[0].dot(&basis[1].cross(&basis[2])) < 0.0 {
            basis[2] = -basis[2];
        }
        let coeff: Vec<f64> = basis.iter().map(|b| ip(&w.0, b)).collect();
        let star = basis[1].cross(&basis[2]) * coeff[0]
            + basis[2].cross(&basis[0]) * coeff[1]
            + basis[0].cross(&basis[1]) * coeff[2];
        TwoForm3(star)
    }

    #[test]
    fn hodge_of_dx1_is_dx2_dx3() {
        let m = CotangentMetric::euclidean();
        let s = hodge_star(&Covector3::basis(0), &m, Orientation::Positive);
        assert_eq!(s.0, Vector3::new(1.0, 0.0, 0.0));
        let back = hodge_star_2(&s, &m, Orientation::Positive);
        assert_eq!(back, Covector3::basis(0));
        let n = hodge_star(&Covector3::basis(0), &m, Orientation::Negative);
        assert_eq!(n.0, Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn double_star_on_dx2() {
        let m = CotangentMetric::euclidean();
        let w = Covector3::basis(1);
        let ss = hodge_star_2(&hodge_star(&w, &m, Orientation::Positive), &m, Orientation::Positive);
        assert_eq!(ss, w);
    }

    #[test]
    fn hodge_with_diagonal_metric_matches_orthonormalization() {
        // Tangent metric diag(1,4,1): cotangent Gram diag(1, 1/4, 1).
        let m = CotangentMetric::from_tangent(&Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)))
            .unwrap();
        let w = Covector3::new(1.0, 0.0, 2.0);
        let s = hodge_star(&w, &m, Orientation::Positive);
        let oracle = hodge_by_orthonormalization(&w, &m);
        assert_relative_eq!(s.0, oracle.0, epsilon = 1e-14);
        // Frozen from the oracle: sqrt(det g) = 2, gram = diag(1,1/4,1).
        assert_relative_eq!(s.0, Vector3::new(2.0, 0.0, 4.0), epsilon = 1e-14);
    }

    #[test]
    fn rejects_indefinite_metric() {
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(matches!(
            CotangentMetric::new(bad),
            Err(Error::NotPositiveDefinite(_))
        ));
        let asym = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CotangentMetric::new(asym).is_err());
    }

    #[test]
    fn star_iota_of_unit_first_covector() {
        let m = CotangentMetric::euclidean();
        let k = star_iota(&Covector3::basis(0), &m);
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(k.0, expected);
        assert_eq!(star_iota(&Covector3::zero(), &m).0, Matrix3::zeros());
    }

    #[test]
    fn sym_prod_of_dx1_dx2() {
        let m = CotangentMetric::euclidean();
        let p = sym_prod(&Covector3::basis(0), &Covector3::basis(1), &m);
        let expected = Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(p.0, expected);
        assert_eq!(sym_prod(&Covector3::basis(0), &Covector3::zero(), &m).0, Matrix3::zeros());
    }

    #[test]
    fn rot_zero_is_identity_and_rejects_non_unit() {
        let m = CotangentMetric::euclidean();
        let r = rot(0.0, &Covector3::basis(2), &m).unwrap();
        assert_eq!(r.0, Matrix3::identity());
        assert!(matches!(
            rot(0.3, &Covector3::new(1.0, 1.0, 0.0), &m),
            Err(Error::NonUnit { .. })
        ));
    }

    #[test]
    fn commutator_trivial_cases() {
        let t = Operator3(Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0));
        assert_eq!(commutator(&t, &t).0, Matrix3::zeros());
        assert_eq!(commutator(&Operator3::identity(), &t).0, Matrix3::zeros());
        let u = Operator3(Matrix3::new(0.0, 1.0, 0.0, -1.0, 2.0, 0.5, 3.0, 0.0, 1.0));
        assert_relative_eq!(commutator(&t, &u).0, t.0 * u.0 - u.0 * t.0);
    }

    #[test]
    fn eig_of_example_spectrum() {
        let r2 = 2f64.sqrt();
        let d = Vector3::new(2.0 - r2, 2.0, 2.0 + r2);
        let s = Operator3(Matrix3::from_diagonal(&d));
        let e = eig_sym3(&s, &CotangentMetric::euclidean()).unwrap();
        assert_eq!(e.values, [2.0 - r2, 2.0, 2.0 + r2]);
        for i in 0..3 {
            assert_eq!(e.vectors[i].0.abs(), Covector3::basis(i).0);
        }
        let id = eig_sym3(&Operator3::identity(), &CotangentMetric::euclidean()).unwrap();
        assert_eq!(id.values, [1.0; 3]);
    }

    #[test]
    fn eig_rejects_non_self_adjoint() {
        let s = Operator3(Matrix3::new(1.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0));
        assert!(matches!(
            eig_sym3(&s, &CotangentMetric::euclidean()),
            Err(Error::NotSelfAdjoint { .. })
        ));
    }

    #[test]
    fn eig_near_collision_uses_jacobi() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0 + 1e-14, 3.0));
        let a = r.matrix() * d * r.matrix().transpose();
        let (vals, vecs, method) = symmetric_eigen(&a);
        assert_eq!(method, EigenMethod::Jacobi);
        assert_relative_eq!(vals[2], 3.0, epsilon = 1e-14);
        let recon = vecs * Matrix3::from_diagonal(&Vector3::from(vals)) * vecs.transpose();
        assert_relative_eq!(recon, a, epsilon = 1e-14);
    }

    #[test]
    fn lemma3_on_eigen_covector_uses_degenerate_branch() {
        let s = Operator3(Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 5.0)));
        let m = CotangentMetric::euclidean();
        let (eta, sigma) = lemma3_pair(&Covector3::basis(0), &s, &m, 1e-8).unwrap();
        // eta is the lambda_2 eigen-covector scaled to |eta|^2 = 1/lambda_2.
        assert_relative_eq!(eta.0.abs(), Vector3::new(0.0, 2f64.powf(-0.5), 0.0), epsilon = 1e-14);
        assert_relative_eq!(sigma.0.abs(), Vector3::new(0.0, 0.0, 5f64.powf(-0.5)), epsilon = 1e-14);
        // The cube-root scaling fails the defining relation S eta = eta/|eta|^2.
        let cube = Covector3::basis(1).scale(2f64.powf(-1.0 / 3.0));
        let lhs = s.apply(&cube);
        let rhs = cube.scale(1.0 / m.inner(&cube, &cube));
        assert!((lhs.0 - rhs.0).norm() > 0.1);
    }

    #[test]
    fn lemma3_rejects_repeated_spectrum() {
        let s = Operator3(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 5.0)));
        let w = Covector3::new(0.6, 0.0, 0.8);
        assert!(matches!(
            lemma3_pair(&w, &s, &CotangentMetric::euclidean(), 1e-8),
            Err(Error::RepeatedEigenvalues { .. })
        ));
    }

    fn l3e_residual(w: &Covector3, x: &Covector3, s: &Operator3, m: &CotangentMetric) -> f64 {
        let sw = s.apply(w);
        let rhs = x.scale(1.0 / m.inner(x, x)) + w.scale(m.inner(&sw, x));
        m.norm(&(s.apply(x) - rhs))
    }

    #[test]
    fn lemma3_with_one_vanishing_component() {
        let s = Operator3(Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 5.0)));
        let m = CotangentMetric::euclidean();
        let w = Covector3::new(0.6, 0.0, 0.8);
        let (eta, sigma) = lemma3_pair(&w, &s, &m, 1e-8).unwrap();
        for x in [&eta, &sigma] {
            assert!(l3e_residual(&w, x, &s, &m) < 1e-12);
            assert!(m.inner(&w, x).abs() < 1e-12);
        }
        assert!(m.inner(&eta, &sigma).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn double_star_is_identity(
            w in prop::array::uniform3(-5.0f64..5.0),
            g in prop::array::uniform9(-1.0f64..1.0),
        ) {
            let m = CotangentMetric::new(random_spd(&g)).unwrap();
            let w = Covector3(Vector3::from(w));
            let s = hodge_star(&w, &m, Orientation::Positive);
            let back = hodge_star_2(&s, &m, Orientation::Positive);
            prop_assert!((back.0 - w.0).norm() <= 1e-12 * (1.0 + w.0.norm()) * 10.0);
            let b = TwoForm3(Vector3::from(w.0));
            let bb = hodge_star(&hodge_star_2(&b, &m, Orientation::Negative), &m, Orientation::Negative);
            prop_assert!((bb.0 - b.0).norm() <= 1e-11 * (1.0 + b.0.norm()));
            let oracle = hodge_by_orthonormalization(&w, &m);
            prop_assert!((oracle.0 - s.0).norm() <= 1e-11 * (1.0 + s.0.norm()));
        }

        #[test]
        fn wedge_star_is_inner_product_times_volume(
            a in prop::array::uniform3(-3.0f64..3.0),
            b in prop::array::uniform3(-3.0f64..3.0),
            g in prop::array::uniform9(-1.0f64..1.0),
        ) {
            let m = CotangentMetric::new(random_spd(&g)).unwrap();
            let (a, b) = (Covector3(Vector3::from(a)), Covector3(Vector3::from(b)));
            let lhs = wedge_3(&a, &hodge_star(&b, &m, Orientation::Positive));
            let rhs = m.inner(&a, &b) * m.volume_density();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) * 10.0);
        }

        #[test]
        fn star_iota_cube_identity(w in prop::array::uniform3(-2.0f64..2.0)) {
            let m = CotangentMetric::euclidean();
            let w = Covector3(Vector3::from(w));
            let k = star_iota(&w, &m);
            let lhs = k.pow(3).0;
            let rhs = -k.0 * m.inner(&w, &w);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
        }

        #[test]
        fn star_iota_is_antisymmetric_for_any_metric(
            w in prop::array::uniform3(-2.0f64..2.0),
            g in prop::array::uniform9(-1.0f64..1.0),
        ) {
            let m = CotangentMetric::new(random_spd(&g)).unwrap();
            let k = star_iota(&Covector3(Vector3::from(w)), &m);
            let sum = k.0 + k.adjoint(&m).0;
            prop_assert!(sum.norm() <= 1e-10 * (1.0 + k.0.norm()));
        }

        #[test]
        fn sym_prod_matches_definition(
            w in prop::array::uniform3(-2.0f64..2.0),
            e in prop::array::uniform3(-2.0f64..2.0),
            al in prop::array::uniform3(-2.0f64..2.0),
            g in prop::array::uniform9(-1.0f64..1.0),
        ) {
            let m = CotangentMetric::new(random_spd(&g)).unwrap();
            let (w, e, al) = (Covector3(Vector3::from(w)), Covector3(Vector3::from(e)), Covector3(Vector3::from(al)));
            let p = sym_prod(&w, &e, &m);
            let direct = e.scale(m.inner(&w, &al)) + w.scale(m.inner(&e, &al));
            prop_assert!((p.apply(&al).0 - direct.0).norm() <= 1e-12 * (1.0 + direct.0.norm()) * 10.0);
            prop_assert!((p.trace() - 2.0 * m.inner(&w, &e)).abs() <= 1e-11 * (1.0 + p.0.norm()));
            prop_assert!((p.adjoint(&m).0 - p.0).norm() <= 1e-10 * (1.0 + p.0.norm()));
        }

        #[test]
        fn commutator_is_antisymmetric(
            a in prop::array::uniform9(-2.0f64..2.0),
            b in prop::array::uniform9(-2.0f64..2.0),
        ) {
            let t1 = Operator3(Matrix3::from_iterator(a));
            let t2 = Operator3(Matrix3::from_iterator(b));
            let c12 = commutator(&t1, &t2);
            let c21 = commutator(&t2, &t1);
            prop_assert!((c12.0 + c21.0).norm() <= 1e-13);
            prop_assert!(c12.trace().abs() <= 1e-12);
        }

        #[test]
        fn eigen_reconstructs_random_spd(
            a in prop::array::uniform9(-1.0f64..1.0),
            g in prop::array::uniform9(-1.0f64..1.0),
        ) {
            let m = CotangentMetric::new(random_spd(&g)).unwrap();
            // An m-self-adjoint operator: S = G^{-1} P with P symmetric.
            let p = random_spd(&a);
            let s = Operator3(m.tangent() * p);
            let e = eig_sym3(&s, &m).unwrap();
            prop_assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
            let snorm = s.norm(&m);
            for i in 0..3 {
                let v = e.vectors[i];
                let r = s.apply(&v) - v.scale(e.values[i]);
                prop_assert!(m.norm(&r) <= 1e-10 * snorm);
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((m.inner(&v, &e.vectors[j]) - expect).abs() <= 1e-10);
                }
            }
            // Reconstruction in the m-orthonormal frame.
            let mut recon = Matrix3::zeros();
            for i in 0..3 {
                let u = m.to_orthonormal(&e.vectors[i]);
                recon += u * u.transpose() * e.values[i];
            }
            prop_assert!((recon - s.in_orthonormal_frame(&m)).norm() <= 1e-9 * snorm);
        }

        #[test]
        fn lemma3_random_generic(
            a in prop::array::uniform9(-1.0f64..1.0),
            w in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let m = CotangentMetric::euclidean();
            let s = Operator3(random_spd(&a));
            let w = Covector3(Vector3::from(w));
            prop_assume!(w.0.norm() > 1e-3);
            let w = w.scale(1.0 / w.0.norm());
            match lemma3_pair(&w, &s, &m, 1e-6) {
                Ok((eta, sigma)) => {
                    let scale = s.norm(&m);
                    prop_assert!(l3e_residual(&w, &eta, &s, &m) <= 1e-9 * scale);
                    prop_assert!(l3e_residual(&w, &sigma, &s, &m) <= 1e-9 * scale);
                    prop_assert!(m.inner(&w, &eta).abs() <= 1e-9);
                    prop_assert!(m.inner(&w, &sigma).abs() <= 1e-9);
                    prop_assert!(m.inner(&eta, &sigma).abs() <= 1e-9);
                }
                Err(Error::RepeatedEigenvalues { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
