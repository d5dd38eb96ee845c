//! The two conformal 1-forms of a map and pointwise certificates that a given
//! plane field is one of them.
//!
//! For `w` a unit covector, with `K = *i(w)`:
//!
//! * `B(w) = [S, K]`, `A(w) = [S, Rot(pi/2, w)]`;
//! * the map is conformal on `ker w` iff `B(w) = mu (w . eta2)` for some
//!   nonzero `mu`, iff `A(w)^3 = 0`.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::pullback::{FrameField, SpectralData, Tolerances};
use crate::tensor3::{commutator, rot_quarter, star_iota, sym_prod, CotangentMetric, Covector3, Operator3};

/// The unit 1-forms `w+ = c1 eta1 + c3 eta3` and `w- = c1 eta1 - c3 eta3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformalPair {
    pub plus: Covector3,
    pub minus: Covector3,
    /// `sqrt((l2 - l1) / (l3 - l1))`.
    pub c1: f64,
    /// `sqrt((l3 - l2) / (l3 - l1))`.
    pub c3: f64,
}

pub fn omega_pm(sd: &SpectralData) -> ConformalPair {
    let [l1, l2, l3] = sd.lambda;
    let c1 = ((l2 - l1) / (l3 - l1)).sqrt();
    let c3 = ((l3 - l2) / (l3 - l1)).sqrt();
    let a = sd.eta[0].scale(c1);
    let b = sd.eta[2].scale(c3);
    ConformalPair {
        plus: a + b,
        minus: a - b,
        c1,
        c3,
    }
}

pub fn omega_pm_field(frame: &FrameField) -> Vec<Option<ConformalPair>> {
    frame.nodes.iter().map(|n| n.as_ref().map(omega_pm)).collect()
}

/// `B(w) = [S, *i(w)]`.
pub fn b_op(s: &Operator3, w: &Covector3, m: &CotangentMetric) -> Operator3 {
    commutator(s, &star_iota(w, m))
}

/// `A(w) = [S, Rot(pi/2, w)]`; `w` must be unit.
pub fn a_op(s: &Operator3, w: &Covector3, m: &CotangentMetric) -> Result<Operator3> {
    Ok(commutator(s, &rot_quarter(w, m)?))
}

/// `A(w)` through its expansion `B + K B + B K` with `K = *i(w)`.
pub fn a_op_expanded(s: &Operator3, w: &Covector3, m: &CotangentMetric) -> Result<Operator3> {
    let norm = m.norm(w);
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnit { norm });
    }
    let k = star_iota(w, m);
    let b = commutator(s, &k);
    Ok(b + k.compose(&b) + b.compose(&k))
}

/// Signed conformality factor magnitude `sqrt(l2 - l1) sqrt(l3 - l2)`.
pub fn mu_expected(lambda: &[f64; 3]) -> f64 {
    (lambda[1] - lambda[0]).sqrt() * (lambda[2] - lambda[1]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Conformal,
    NotConformal,
}

/// How the three independent residuals relate to the tolerance band
/// `[tol, 10 tol]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    /// All below `tol`.
    AllPass,
    /// All above `10 tol`.
    AllFail,
    /// None strictly contradicts another but some lie inside the band.
    Ambiguous,
    /// One passes while another fails.
    Disagree,
}

/// Certificate of conformality on `ker w` at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertResult {
    /// `|B(w) - mu_fit (w . eta2)| / |B(w)|`.
    pub condition2_residual: f64,
    /// Frobenius projection coefficient of `B(w)` on `w . eta2`.
    pub mu_fit: f64,
    pub mu_expected: f64,
    /// `|A(w)^3| / |A(w)|^3`, or 0 when `A(w)` vanishes.
    pub condition3_residual: f64,
    /// Max over sampled unit `v` in `ker w` of `| |phi_* v|^2 - l2 | / l2`.
    pub sampled_conformality_residual: f64,
    /// Relative gap between the two formulas for `A(w)`.
    pub a_formula_gap: f64,
    /// `<w, eta2>` for the normalized `w`.
    pub w_dot_eta2: f64,
    pub verdict: Verdict,
}

impl CertResult {
    pub fn agreement(&self, cert_tol: f64) -> Agreement {
        let r = [
            self.condition2_residual,
            self.condition3_residual,
            self.sampled_conformality_residual,
        ];
        let pass = r.iter().filter(|&&x| x < cert_tol).count();
        let fail = r.iter().filter(|&&x| x > 10.0 * cert_tol).count();
        match (pass, fail) {
            (3, _) => Agreement::AllPass,
            (_, 3) => Agreement::AllFail,
            (p, f) if p > 0 && f > 0 => Agreement::Disagree,
            _ => Agreement::Ambiguous,
        }
    }
}

/// Certificate options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertOptions {
    pub tol: Tolerances,
    /// Sampled directions per node.
    pub samples: usize,
    pub seed: u64,
}

impl Default for CertOptions {
    fn default() -> Self {
        CertOptions {
            tol: Tolerances::default(),
            samples: 16,
            seed: 0,
        }
    }
}

/// Absolute floor, relative to `|S|`, under which `A(w)` counts as zero.
const A_FLOOR: f64 = 1e-14;

/// Certifies conformality on `ker w` at one node. `w` is normalized first;
/// `stream` selects the random direction sequence.
pub fn certify_node(sd: &SpectralData, w: &Covector3, opts: &CertOptions, stream: u64) -> Result<CertResult> {
    let m = &sd.metric;
    let s = &sd.s;
    let norm = m.norm(w);
    if !(norm > 0.0) || !w.is_finite() {
        return Err(Error::ZeroCovector);
    }
    let w = w.scale(1.0 / norm);
    let s_norm = s.norm(m);

    let b = b_op(s, &w, m);
    let p = sym_prod(&w, &sd.eta[1], m);
    let pp = p.frobenius_dot(&p, m);
    let mu_fit = if pp > 0.0 { b.frobenius_dot(&p, m) / pp } else { 0.0 };
    let b_norm = b.norm(m);
    let condition2_residual = if b_norm > A_FLOOR * s_norm && mu_fit != 0.0 {
        (b - p * mu_fit).norm(m) / b_norm
    } else {
        1.0
    };

    let a = a_op(s, &w, m)?;
    let a_alt = a_op_expanded(s, &w, m)?;
    let a_norm = a.norm(m);
    let condition3_residual = if a_norm > A_FLOOR * s_norm {
        a.pow(3).norm(m) / a_norm.powi(3)
    } else {
        0.0
    };
    let a_formula_gap = (a - a_alt).norm(m) / a_norm.max(A_FLOOR * s_norm).max(f64::MIN_POSITIVE);

    let sampled_conformality_residual = sampled_residual(sd, &w, opts, stream);

    let pass = condition2_residual < opts.tol.cert_tol
        && condition3_residual < opts.tol.cert_tol
        && sampled_conformality_residual < opts.tol.cert_tol;
    Ok(CertResult {
        condition2_residual,
        mu_fit,
        mu_expected: mu_expected(&sd.lambda),
        condition3_residual,
        sampled_conformality_residual,
        a_formula_gap,
        w_dot_eta2: m.inner(&w, &sd.eta[1]),
        verdict: if pass { Verdict::Conformal } else { Verdict::NotConformal },
    })
}

/// `g`-orthonormal basis of the tangent plane `ker w`.
pub fn kernel_basis(w: &Covector3, m: &CotangentMetric) -> [Vector3<f64>; 2] {
    let g = m.tangent();
    let ip = |a: &Vector3<f64>, b: &Vector3<f64>| a.dot(&(g * b));
    // g-normal of ker w.
    let n = m.gram() * w.0;
    let wn = w.0.dot(&n);
    let project = |v: Vector3<f64>| v - n * (w.0.dot(&v) / wn);
    // Start from the two coordinate directions least aligned with the normal.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (w.0[a].abs()).total_cmp(&w.0[b].abs()));
    let mut e1 = project(Vector3::ith(order[0], 1.0));
    e1 /= ip(&e1, &e1).sqrt();
    let mut e2 = project(Vector3::ith(order[1], 1.0));
    e2 -= e1 * ip(&e1, &e2);
    e2 /= ip(&e2, &e2).sqrt();
    [e1, e2]
}

/// Relative deviation of `|phi_* v|^2` from `l2` over random unit `v` in `ker w`.
fn sampled_residual(sd: &SpectralData, w: &Covector3, opts: &CertOptions, stream: u64) -> f64 {
    // |phi_* v|_h^2 = v^T (J^T H J) v and J^T H J = S_matrix * G.
    let q = sd.s.0 * sd.metric.tangent();
    let [e1, e2] = kernel_basis(w, &sd.metric);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let l2 = sd.lambda[1];
    (0..opts.samples)
        .map(|_| {
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let v = e1 * th.cos() + e2 * th.sin();
            (v.dot(&(q * v)) - l2).abs() / l2
        })
        .fold(0.0, f64::max)
}

/// Which covector field to certify.
#[derive(Debug, Clone)]
pub enum OmegaSpec {
    Plus,
    Minus,
    /// Coefficients of `dx1, dx2, dx3` as expressions.
    Given([Expr; 3]),
}

impl OmegaSpec {
    pub fn at(&self, sd: &SpectralData) -> Result<Covector3> {
        Ok(match self {
            OmegaSpec::Plus => omega_pm(sd).plus,
            OmegaSpec::Minus => omega_pm(sd).minus,
            OmegaSpec::Given(e) => {
                let env = Env::new(sd.x);
                Covector3::new(e[0].eval(&env)?, e[1].eval(&env)?, e[2].eval(&env)?)
            }
        })
    }
}

/// Certificates at every node of a frame field; masked nodes stay `None`.
pub fn certify(frame: &FrameField, omega: &OmegaSpec, opts: &CertOptions) -> Vec<Option<Result<CertResult>>> {
    frame
        .nodes
        .par_iter()
        .enumerate()
        .map(|(i, n)| n.as_ref().map(|sd| certify_node(sd, &omega.at(sd)?, opts, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pullback::{spectral, BoxDomain, MetricField, SmoothMap};
    use nalgebra::Matrix3;
    use std::f64::consts::SQRT_2;

    fn example1() -> SmoothMap {
        SmoothMap::parse(
            ["-cos(x2) + sqrt(2)*sin(x3)", "sin(x2) - sqrt(2)*cos(x3)", "sqrt(2)*x1 + x2"],
            BoxDomain::unbounded(),
        )
        .unwrap()
    }

    fn ex1_at(x: [f64; 3]) -> SpectralData {
        let e = MetricField::euclidean();
        spectral(&example1(), &e, &e, &x, &Tolerances::default()).unwrap()
    }

    #[test]
    fn example1_omega_pair() {
        for x in [[0.0; 3], [0.3, -0.2, 0.4]] {
            let sd = ex1_at(x);
            let p = omega_pm(&sd);
            let s = (x[1] + x[2]).sin();
            let r = (2.0 + 2.0 * s * s).sqrt();
            let m1 = Vector3::new(SQRT_2 / r, 0.0, SQRT_2 * s / r);
            // Up to the overall sign fixed by the eigenvector convention,
            // one form is dx2 and the other is m1.
            let (a, b) = if p.plus.0[1].abs() > 0.5 { (p.plus, p.minus) } else { (p.minus, p.plus) };
            assert!((a.0.abs() - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-14);
            assert!((b.0 - m1).norm() < 1e-14 || (b.0 + m1).norm() < 1e-14);
            assert!((p.c1 * p.c1 + p.c3 * p.c3 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn a_matrices_at_origin() {
        let sd = ex1_at([0.0; 3]);
        let m = &sd.metric;
        let dx2 = Covector3::new(0.0, 1.0, 0.0);
        let a = a_op(&sd.s, &dx2, m).unwrap();
        let want = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0) * SQRT_2;
        assert!((a.0 - want).abs().max() < 1e-14);
        assert!(a.pow(3).0.abs().max() < 1e-14);
        let dx1 = Covector3::new(1.0, 0.0, 0.0);
        let a = a_op(&sd.s, &dx1, m).unwrap();
        let want = Matrix3::new(0.0, -SQRT_2, -SQRT_2, SQRT_2, 0.0, 0.0, -SQRT_2, 0.0, 0.0);
        assert!((a.0 - want).abs().max() < 1e-14);
    }

    #[test]
    fn commutators_vanish_for_scalar_operator() {
        let m = CotangentMetric::euclidean();
        let s = Operator3::identity() * 3.0;
        let w = Covector3::new(0.6, 0.0, 0.8);
        assert_eq!(b_op(&s, &w, &m).0, Matrix3::zeros());
        assert!(a_op(&s, &w, &m).unwrap().0.abs().max() < 1e-15);
    }

    #[test]
    fn example1_certificates() {
        let opts = CertOptions::default();
        for x in [[0.0; 3], [0.1, 0.4, -0.3], [-0.5, 0.5, 0.5]] {
            let sd = ex1_at(x);
            let p = omega_pm(&sd);
            let s = (x[1] + x[2]).sin();
            for w in [p.plus, p.minus] {
                let c = certify_node(&sd, &w, &opts, 0).unwrap();
                assert_eq!(c.verdict, Verdict::Conformal, "{c:?}");
                assert!((c.mu_fit.abs() - (2.0 + 2.0 * s * s).sqrt()).abs() < 1e-12);
                assert!((c.mu_fit.abs() - c.mu_expected).abs() < 1e-12);
                assert!(c.w_dot_eta2.abs() < 1e-14);
                assert!(c.a_formula_gap < 1e-14);
            }
        }
        let c = certify_node(&ex1_at([0.0; 3]), &Covector3::new(0.0, 0.0, 1.0), &opts, 0).unwrap();
        assert_eq!(c.verdict, Verdict::NotConformal);
        assert!(c.condition3_residual > 1e-2);
        assert_eq!(c.agreement(opts.tol.cert_tol), Agreement::AllFail);
    }

    #[test]
    fn zero_covector_is_rejected() {
        let sd = ex1_at([0.0; 3]);
        assert!(matches!(
            certify_node(&sd, &Covector3::zero(), &CertOptions::default(), 0),
            Err(Error::ZeroCovector)
        ));
    }

    #[test]
    fn kernels_cut_the_ellipsoid_in_circles() {
        // Dense angular sampling of <S v, v> on each kernel, independent of
        // the random sampler used by the certificate.
        let s = Matrix3::new(3.0, 0.4, -0.2, 0.4, 1.5, 0.3, -0.2, 0.3, 0.7);
        let g = Matrix3::new(1.2, 0.1, 0.0, 0.1, 0.9, -0.2, 0.0, -0.2, 1.1);
        let m = CotangentMetric::from_tangent(&g).unwrap();
        // A tangent operator self-adjoint w.r.t. g: T = g^-1 s.
        let t = g.try_inverse().unwrap() * s;
        let op = Operator3(t.transpose());
        let sd = SpectralData::from_operator([0.0; 3], op, m, &Tolerances::default()).unwrap();
        let pair = omega_pm(&sd);
        for w in [pair.plus, pair.minus] {
            let [e1, e2] = kernel_basis(&w, &m);
            let vals: Vec<f64> = (0..360)
                .map(|k| {
                    let th = k as f64 * std::f64::consts::PI / 180.0;
                    let v = e1 * th.cos() + e2 * th.sin();
                    v.dot(&(s * v)) / v.dot(&(g * v))
                })
                .collect();
            let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(hi - lo < 1e-12 * hi, "{lo} {hi}");
            assert!((lo - sd.lambda[1]).abs() < 1e-12 * hi);
        }
        // A generic plane is an ellipse section.
        let [e1, e2] = kernel_basis(&Covector3::new(1.0, 0.0, 0.0), &m);
        let r: Vec<f64> = [0.0, 1.0, 2.0]
            .iter()
            .map(|th: &f64| {
                let v = e1 * th.cos() + e2 * th.sin();
                v.dot(&(s * v)) / v.dot(&(g * v))
            })
            .collect();
        assert!((r[0] - r[1]).abs() + (r[1] - r[2]).abs() > 1e-3);
    }
}
