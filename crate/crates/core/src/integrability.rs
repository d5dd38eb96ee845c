//! Frobenius integrability of the conformal plane fields on grids: exterior
//! derivatives by finite differences, the spectral shape ratio `chi` and its
//! identities, and the moving-frame form of the integrability condition.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::conformal::{mu_expected, omega_pm};
use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::pullback::FrameField;
use crate::tensor3::{wedge, CotangentMetric, Covector3};

/// A differential form of degree 1, 2 or 3 sampled on a grid.
///
/// Components are in the coordinate bases `(dx1, dx2, dx3)`,
/// `(dx2^dx3, dx3^dx1, dx1^dx2)` and `dx1^dx2^dx3` (first slot only).
#[derive(Debug, Clone)]
pub struct SampledForm {
    pub grid: Grid3,
    pub degree: u8,
    pub values: Vec<Option<Vector3<f64>>>,
}

impl SampledForm {
    pub fn one_form(grid: Grid3, values: Vec<Option<Covector3>>) -> Self {
        SampledForm {
            grid,
            degree: 1,
            values: values.into_iter().map(|v| v.map(|c| c.0)).collect(),
        }
    }

    pub fn two_form(grid: Grid3, values: Vec<Option<Vector3<f64>>>) -> Self {
        SampledForm { grid, degree: 2, values }
    }

    /// Samples a closed-form 1-form.
    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let values = (0..grid.len()).map(|i| Some(Vector3::from(f(grid.point(i))))).collect();
        SampledForm { grid, degree: 1, values }
    }

    fn component(&self, c: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|v| v.map(|v| v[c])).collect()
    }

    /// The scalar coefficient of a 3-form.
    pub fn top_coefficient(&self) -> Vec<Option<f64>> {
        self.component(0)
    }

    pub fn scale_by(&self, f: &[Option<f64>]) -> SampledForm {
        let values = self
            .values
            .iter()
            .zip(f)
            .map(|(v, s)| Some(v.as_ref()? * (*s)?))
            .collect();
        SampledForm { values, ..self.clone() }
    }
}

/// Exterior derivative by second-order finite differences. A node is masked
/// when any node of its stencils is.
pub fn exterior_derivative(f: &SampledForm) -> Result<SampledForm> {
    let g = &f.grid;
    let comps = [f.component(0), f.component(1), f.component(2)];
    let d = |c: usize, a: usize, i: usize| g.partial(&comps[c], i, a);
    let values: Vec<Option<Vector3<f64>>> = match f.degree {
        1 => (0..g.len())
            .into_par_iter()
            .map(|i| {
                Some(Vector3::new(
                    d(2, 1, i)? - d(1, 2, i)?,
                    d(0, 2, i)? - d(2, 0, i)?,
                    d(1, 0, i)? - d(0, 1, i)?,
                ))
            })
            .collect(),
        2 => (0..g.len())
            .into_par_iter()
            .map(|i| Some(Vector3::new(d(0, 0, i)? + d(1, 1, i)? + d(2, 2, i)?, 0.0, 0.0)))
            .collect(),
        p => return Err(Error::InvalidInput(format!("cannot differentiate a {p}-form"))),
    };
    Ok(SampledForm {
        grid: *g,
        degree: f.degree + 1,
        values,
    })
}

/// Pointwise wedge of a 1-form with a 1-form or a 2-form.
pub fn wedge_forms(a: &SampledForm, b: &SampledForm) -> Result<SampledForm> {
    if a.degree != 1 || !(b.degree == 1 || b.degree == 2) {
        return Err(Error::InvalidInput("unsupported wedge degrees".into()));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| {
            let (x, y) = (x.as_ref()?, y.as_ref()?);
            Some(if b.degree == 1 {
                wedge(&Covector3(*x), &Covector3(*y)).0
            } else {
                Vector3::new(x.dot(y), 0.0, 0.0)
            })
        })
        .collect();
    Ok(SampledForm {
        grid: a.grid,
        degree: a.degree + b.degree,
        values,
    })
}

/// A nonnegative scalar field with its supremum over unmasked nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub values: Vec<Option<f64>>,
    pub sup: f64,
    pub argmax: Option<usize>,
}

impl ResidualField {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        let mut sup = 0.0;
        let mut argmax = None;
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = v {
                if argmax.is_none() || *v > sup {
                    sup = *v;
                    argmax = Some(i);
                }
            }
        }
        ResidualField { values, sup, argmax }
    }

    pub fn count(&self) -> usize {
        self.values.iter().flatten().count()
    }
}

/// Metric-weighted `|w ^ dw| / |w|^2`, which depends only on the plane field
/// `ker w`. For unit `w` it is the norm of the 3-form `w ^ dw`.
pub fn frobenius_residual(w: &SampledForm, metrics: &[Option<CotangentMetric>]) -> Result<ResidualField> {
    let dw = exterior_derivative(w)?;
    let top = wedge_forms(w, &dw)?;
    let values = (0..w.grid.len())
        .map(|i| {
            let m = metrics[i].as_ref()?;
            let c = top.values[i]?[0];
            let n2 = m.inner(&Covector3(w.values[i]?), &Covector3(w.values[i]?));
            if n2 == 0.0 {
                return None;
            }
            Some(m.three_form_norm(c) / n2)
        })
        .collect();
    Ok(ResidualField::new(values))
}

/// `chi = sqrt(l3 - l2) / sqrt(l2 - l1)`.
pub fn chi(lambda: &[f64; 3]) -> f64 {
    (lambda[2] - lambda[1]).sqrt() / (lambda[1] - lambda[0]).sqrt()
}

pub fn chi_field(frame: &FrameField) -> Vec<Option<f64>> {
    frame.nodes.iter().map(|n| n.map(|sd| chi(&sd.lambda))).collect()
}

pub fn metrics_of(frame: &FrameField) -> Vec<Option<CotangentMetric>> {
    frame.nodes.iter().map(|n| n.map(|sd| sd.metric)).collect()
}

fn eta_form(frame: &FrameField, i: usize) -> SampledForm {
    SampledForm::one_form(frame.grid, frame.eta(i))
}

/// Sup of the metric norm of a 3-form over nodes where all inputs exist.
fn top_sup(frame: &FrameField, f: impl Fn(usize) -> Option<f64> + Sync) -> ResidualField {
    let vals = (0..frame.grid.len())
        .into_par_iter()
        .map(|i| {
            let m = frame.nodes[i].as_ref()?.metric;
            Some(m.three_form_norm(f(i)?))
        })
        .collect();
    ResidualField::new(vals)
}

/// Outcome of the `chi`-identity checks on a frame field.
#[derive(Debug, Clone)]
pub struct Prop2Result {
    /// `sup |eta1^deta1 + chi^2 eta3^deta3 -/+ d(chi eta1^eta3)|` for the
    /// better of the two signs.
    pub identity_residual: f64,
    /// The sign (+1 or -1) achieving `identity_residual`.
    pub identity_sign: f64,
    /// `sup |d(chi eta1^eta3)|`.
    pub closedness_residual: f64,
    /// Residual of the exact expansion
    /// `w_pm^dw_pm / c1^2 = L +/- (2 chi eta3^deta1 - d(chi eta1^eta3))`
    /// with `L = eta1^deta1 + chi^2 eta3^deta3`, worst over both signs.
    pub corrected_identity_residual: f64,
    /// `sup |2 chi eta3^deta1|`: the term by which the printed identity is off.
    pub correction_term: f64,
    /// Pointwise `|chi eta1^eta3 + (1 + chi^2)/2 w+^w-|`, sup.
    pub clform_residual: f64,
    pub frobenius_plus: f64,
    pub frobenius_minus: f64,
    /// Whether, with both plane fields integrable at `tol`, both identity
    /// residuals are within `tol_h`; `None` when the premise fails.
    pub implication_holds: Option<bool>,
    /// Set when the frame could not be consistently oriented.
    pub holonomy_warning: bool,
}

/// Evaluates the `chi`-identities on an aligned frame field. `tol` is the
/// integrability threshold and `tol_h` the grid-scaled bound on the
/// conclusion.
pub fn prop2_check(frame: &FrameField, tol: f64, tol_h: f64) -> Result<Prop2Result> {
    let grid = frame.grid;
    let metrics = metrics_of(frame);
    let chi_f = chi_field(frame);
    let e1 = eta_form(frame, 0);
    let e3 = eta_form(frame, 2);
    let de1 = exterior_derivative(&e1)?;
    let de3 = exterior_derivative(&e3)?;
    let l1 = wedge_forms(&e1, &de1)?;
    let l3 = wedge_forms(&e3, &de3)?;
    let e3de1 = wedge_forms(&e3, &de1)?;
    let two = wedge_forms(&e1, &e3)?.scale_by(&chi_f);
    let dtwo = exterior_derivative(&two)?;

    let top = |f: &SampledForm, i: usize| f.values[i].map(|v| v[0]);
    let lhs = |i: usize| Some(top(&l1, i)? + chi_f[i]?.powi(2) * top(&l3, i)?);

    let plus = top_sup(frame, |i| Some(lhs(i)? - top(&dtwo, i)?));
    let minus = top_sup(frame, |i| Some(lhs(i)? + top(&dtwo, i)?));
    let (identity_residual, identity_sign) = if plus.sup <= minus.sup { (plus.sup, 1.0) } else { (minus.sup, -1.0) };
    let closedness = top_sup(frame, |i| top(&dtwo, i));
    let correction = top_sup(frame, |i| Some(2.0 * chi_f[i]? * top(&e3de1, i)?));

    let pairs: Vec<Option<_>> = frame.nodes.iter().map(|n| n.as_ref().map(omega_pm)).collect();
    let wp = SampledForm::one_form(grid, pairs.iter().map(|p| p.map(|p| p.plus)).collect());
    let wm = SampledForm::one_form(grid, pairs.iter().map(|p| p.map(|p| p.minus)).collect());
    let fp = frobenius_residual(&wp, &metrics)?;
    let fm = frobenius_residual(&wm, &metrics)?;
    let wpdwp = wedge_forms(&wp, &exterior_derivative(&wp)?)?;
    let wmdwm = wedge_forms(&wm, &exterior_derivative(&wm)?)?;
    let x = |i: usize| Some(2.0 * chi_f[i]? * top(&e3de1, i)? - top(&dtwo, i)?);
    let corr_p = top_sup(frame, |i| {
        let c1 = pairs[i]?.c1;
        Some(top(&wpdwp, i)? / (c1 * c1) - lhs(i)? - x(i)?)
    });
    let corr_m = top_sup(frame, |i| {
        let c1 = pairs[i]?.c1;
        Some(top(&wmdwm, i)? / (c1 * c1) - lhs(i)? + x(i)?)
    });

    let clform = ResidualField::new(
        (0..grid.len())
            .map(|i| {
                let sd = frame.nodes[i]?;
                let p = pairs[i]?;
                let c = chi_f[i]?;
                let lhs = wedge(&sd.eta[0], &sd.eta[2]).0 * c;
                let rhs = wedge(&p.plus, &p.minus).0 * (-0.5 * (1.0 + c * c));
                Some(sd.metric.two_form_norm(&crate::tensor3::TwoForm3(lhs - rhs)))
            })
            .collect(),
    );

    let implication_holds = (fp.sup <= tol && fm.sup <= tol)
        .then(|| identity_residual <= tol_h && closedness.sup <= tol_h);

    Ok(Prop2Result {
        identity_residual,
        identity_sign,
        closedness_residual: closedness.sup,
        corrected_identity_residual: corr_p.sup.max(corr_m.sup),
        correction_term: correction.sup,
        clform_residual: clform.sup,
        frobenius_plus: fp.sup,
        frobenius_minus: fm.sup,
        implication_holds,
        holonomy_warning: frame.holonomy,
    })
}

/// The 2-form `chi eta1 ^ eta3` and its exterior derivative.
pub fn chi_two_form(frame: &FrameField) -> Result<(SampledForm, SampledForm)> {
    let chi_f = chi_field(frame);
    let two = wedge_forms(&eta_form(frame, 0), &eta_form(frame, 2))?.scale_by(&chi_f);
    let d = exterior_derivative(&two)?;
    Ok((two, d))
}

/// For `S` diagonal in the coordinate coframe (with `l1, l2, l3` on
/// `dx1, dx2, dx3`), both plane fields are integrable iff `d chi / d x2 = 0`.
/// Returns the field `|d chi / d x2|`.
pub fn diag_case_check(frame: &FrameField, tol: f64) -> Result<ResidualField> {
    for sd in frame.nodes.iter().flatten() {
        let s = &sd.s.0;
        let off = s[(0, 1)].abs() + s[(0, 2)].abs() + s[(1, 2)].abs() + s[(1, 0)].abs() + s[(2, 0)].abs() + s[(2, 1)].abs();
        if off > tol * s.norm() {
            return Err(Error::Inapplicable(format!(
                "S is not diagonal at {:?} (off-diagonal mass {off:.3e})",
                sd.x
            )));
        }
        if !(s[(0, 0)] < s[(1, 1)] && s[(1, 1)] < s[(2, 2)]) {
            return Err(Error::Inapplicable(format!(
                "diagonal of S is not ascending at {:?}",
                sd.x
            )));
        }
    }
    let chi_f = chi_field(frame);
    let vals = (0..frame.grid.len())
        .map(|i| Some(frame.grid.partial(&chi_f, i, 1)?.abs()))
        .collect();
    Ok(ResidualField::new(vals))
}

/// Trapezoidal integral of `xi2(log chi) vol` over a fully periodic box.
pub fn prop3_integral(frame: &FrameField) -> Result<f64> {
    if !frame.grid.axes.iter().all(|a| a.periodic) {
        return Err(Error::Inapplicable("the integral needs a fully periodic box".into()));
    }
    if frame.holonomy {
        return Err(Error::Holonomy);
    }
    if !frame.is_fully_valid() {
        return Err(Error::Inapplicable(format!(
            "{} nodes failed the spectral stage",
            frame.masked.len()
        )));
    }
    let log_chi: Vec<Option<f64>> = chi_field(frame).into_iter().map(|c| c.map(f64::ln)).collect();
    let mut total = 0.0;
    for i in 0..frame.grid.len() {
        let sd = frame.nodes[i].as_ref().expect("fully valid");
        let grad = frame.grid.gradient(&log_chi, i).expect("periodic stencils");
        let dir = Vector3::from(grad).dot(&sd.xi[1]);
        total += dir * sd.metric.tangent().determinant().sqrt() * frame.grid.quadrature_weight(i);
    }
    Ok(total)
}

/// A `g`-orthonormal tangent frame per node (columns `e1, e2, e3`).
pub type TangentFrame = Vec<Option<[Vector3<f64>; 3]>>;

/// Gram-Schmidt orthonormalization of the coordinate vector fields.
pub fn coordinate_frame(frame: &FrameField) -> TangentFrame {
    frame
        .nodes
        .iter()
        .map(|n| {
            let g = *n.as_ref()?.metric.tangent();
            let ip = |a: &Vector3<f64>, b: &Vector3<f64>| a.dot(&(g * b));
            let mut e: [Vector3<f64>; 3] = [Vector3::x(), Vector3::y(), Vector3::z()];
            for k in 0..3 {
                for j in 0..k {
                    let p = ip(&e[j], &e[k]);
                    e[k] -= e[j] * p;
                }
                e[k] /= ip(&e[k], &e[k]).sqrt();
            }
            Some(e)
        })
        .collect()
}

/// Moving-frame coefficients at one node. Indices are 0-based versions of
/// the usual 1-based ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingFrameNode {
    /// `S w_i = sum_j a[i][j] w_j`.
    pub a: Matrix3<f64>,
    /// `eta2 = sum beta_i w_i`.
    pub beta: Vector3<f64>,
    /// `w = sum alpha_i w_i`.
    pub alpha: Vector3<f64>,
    pub lambda: f64,
    /// Signed conformality factor.
    pub mu: f64,
    /// Projection coefficient of `B(w)` on `w . eta2` in this frame.
    pub mu_fit: f64,
    /// `c[i][j][k] = C^i_jk` with `[e_j, e_k] = sum_i C^i_jk e_i`.
    pub c: [[[f64; 3]; 3]; 3],
    /// `da[k][(i, j)] = e_k(a_ij)`.
    pub da: [Matrix3<f64>; 3],
    /// `e_k(mu)`.
    pub dmu: Vector3<f64>,
    /// `dbeta[(i, k)] = e_k(beta_i)`.
    pub dbeta: Matrix3<f64>,
    /// `e_k(lambda)`.
    pub dlambda: Vector3<f64>,
    /// The three region quantities whose positivity defines `U1, U2, U3`.
    pub region_q: [f64; 3],
    /// Positivity floor applied to `region_q`.
    pub region_floor: f64,
}

impl MovingFrameNode {
    pub fn in_region(&self, k: usize) -> bool {
        self.region_q[k] > self.region_floor
    }
}

#[derive(Debug, Clone)]
pub struct MovingFrameData {
    pub grid: Grid3,
    pub frame: TangentFrame,
    pub nodes: Vec<Option<MovingFrameNode>>,
    /// Max over nodes of `|C from coframe curls - C from frame commutators|`.
    pub structure_crosscheck: f64,
    /// Neighbor pairs where the sign of `mu` changes.
    pub mu_sign_changes: usize,
    /// Nodes lying in none of the three regions.
    pub anomalies: Vec<usize>,
}

/// Relative positivity floor for region membership, times `|S|^2`.
const REGION_FLOOR: f64 = 1e-10;

/// The `*i(w)` matrix in an oriented orthonormal frame.
fn cross(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0)
}

/// Collects the moving-frame data of the unit form field `omega` with
/// respect to the tangent frame `eframe`.
pub fn moving_frame_data(frame: &FrameField, omega: &[Option<Covector3>], eframe: &TangentFrame) -> Result<MovingFrameData> {
    let grid = frame.grid;
    let n = grid.len();
    // Pointwise quantities.
    struct Point {
        e: Matrix3<f64>,
        w: Matrix3<f64>,
        a: Matrix3<f64>,
        beta: Vector3<f64>,
        alpha: Vector3<f64>,
        lambda: f64,
        mu: f64,
        mu_fit: f64,
        s_norm: f64,
    }
    let mut pts: Vec<Option<Point>> = Vec::with_capacity(n);
    for i in 0..n {
        let (Some(sd), Some(w), Some(ef)) = (&frame.nodes[i], omega[i], eframe[i]) else {
            pts.push(None);
            continue;
        };
        let e = Matrix3::from_columns(&ef);
        let g = sd.metric.tangent();
        let defect = (e.transpose() * g * e - Matrix3::identity()).abs().max();
        if defect > 1e-9 {
            return Err(Error::FrameNotOrthonormal { defect });
        }
        // Coframe: w_i(e_j) = delta_ij, columns are w_i.
        let wf = e.transpose().try_inverse().ok_or(Error::FrameNotOrthonormal { defect: f64::INFINITY })?;
        let a = (wf.try_inverse().expect("invertible") * sd.s.0 * wf).transpose();
        let a = (a + a.transpose()) * 0.5;
        let beta = e.transpose() * sd.eta[1].0;
        let wn = sd.metric.norm(&w);
        let alpha = e.transpose() * (w.0 / wn);
        let k = cross(&alpha);
        let b = a * k - k * a;
        let p = alpha * beta.transpose() + beta * alpha.transpose();
        let mu_fit = b.component_mul(&p).sum() / p.norm_squared();
        let mu = mu_expected(&sd.lambda).copysign(mu_fit);
        pts.push(Some(Point {
            e,
            w: wf,
            a,
            beta,
            alpha,
            lambda: sd.lambda[1],
            mu,
            mu_fit,
            s_norm: a.norm(),
        }));
    }

    let scalar = |f: &dyn Fn(&Point) -> f64| -> Vec<Option<f64>> { pts.iter().map(|p| p.as_ref().map(f)).collect() };
    let mut a_fields = vec![];
    for r in 0..3 {
        for c in 0..3 {
            a_fields.push(scalar(&|p| p.a[(r, c)]));
        }
    }
    let mu_f = scalar(&|p| p.mu);
    let lam_f = scalar(&|p| p.lambda);
    let beta_f: Vec<_> = (0..3).map(|r| scalar(&|p| p.beta[r])).collect();
    // Coframe components w_i^c and frame components e_i^c.
    let cof: Vec<Vec<_>> = (0..3).map(|i| (0..3).map(|c| scalar(&|p| p.w[(c, i)])).collect()).collect();
    let fr: Vec<Vec<_>> = (0..3).map(|i| (0..3).map(|c| scalar(&|p| p.e[(c, i)])).collect()).collect();

    let computed: Vec<Option<(MovingFrameNode, f64)>> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let p = pts[idx].as_ref()?;
            let grad = |f: &Vec<Option<f64>>| grid.gradient(f, idx).map(Vector3::from);
            // Derivative along each frame vector.
            let along = |f: &Vec<Option<f64>>| -> Option<Vector3<f64>> { Some(p.e.transpose() * grad(f)?) };
            let mut da = [Matrix3::zeros(); 3];
            for r in 0..3 {
                for c in 0..3 {
                    let d = along(&a_fields[3 * r + c])?;
                    for k in 0..3 {
                        da[k][(r, c)] = d[k];
                    }
                }
            }
            let dmu = along(&mu_f)?;
            let dlambda = along(&lam_f)?;
            let mut dbeta = Matrix3::zeros();
            for r in 0..3 {
                let d = along(&beta_f[r])?;
                for k in 0..3 {
                    dbeta[(r, k)] = d[k];
                }
            }
            // Structure functions from coframe curls: C^i_jk = -dw_i(e_j, e_k).
            let mut c = [[[0.0; 3]; 3]; 3];
            for i in 0..3 {
                let g: Vec<Vector3<f64>> = (0..3).map(|comp| grad(&cof[i][comp])).collect::<Option<_>>()?;
                // g[comp][d] = d_d w_i^comp
                let curl = Vector3::new(g[2][1] - g[1][2], g[0][2] - g[2][0], g[1][0] - g[0][1]);
                for j in 0..3 {
                    for k in 0..3 {
                        let ej = p.e.column(j).into_owned();
                        let ek = p.e.column(k).into_owned();
                        c[i][j][k] = -curl.dot(&ej.cross(&ek));
                    }
                }
            }
            // Cross-check from the commutators of the frame vectors.
            let de: Vec<Matrix3<f64>> = (0..3)
                .map(|i| {
                    let mut m = Matrix3::zeros();
                    for comp in 0..3 {
                        m.set_row(comp, &grad(&fr[i][comp])?.transpose());
                    }
                    Some(m)
                })
                .collect::<Option<_>>()?;
            let mut check: f64 = 0.0;
            for j in 0..3 {
                for k in 0..3 {
                    let ej = p.e.column(j).into_owned();
                    let ek = p.e.column(k).into_owned();
                    let br = de[k] * ej - de[j] * ek;
                    for i in 0..3 {
                        let ci = p.w.column(i).dot(&br);
                        check = check.max((ci - c[i][j][k]).abs());
                    }
                }
            }
            let (a, b, mu) = (&p.a, &p.beta, p.mu);
            let region_q = [
                (a[(1, 2)] - mu * b[0]).powi(2) + (a[(0, 2)] + mu * b[1]).powi(2),
                (a[(1, 2)] + mu * b[0]).powi(2) + (a[(0, 1)] - mu * b[2]).powi(2),
                (a[(0, 1)] + mu * b[2]).powi(2) + (a[(0, 2)] - mu * b[1]).powi(2),
            ];
            Some((
                MovingFrameNode {
                    a: p.a,
                    beta: p.beta,
                    alpha: p.alpha,
                    lambda: p.lambda,
                    mu: p.mu,
                    mu_fit: p.mu_fit,
                    c,
                    da,
                    dmu,
                    dbeta,
                    dlambda,
                    region_q,
                    region_floor: REGION_FLOOR * p.s_norm * p.s_norm,
                },
                check,
            ))
        })
        .collect();

    let mut nodes = Vec::with_capacity(n);
    let mut structure_crosscheck: f64 = 0.0;
    let mut anomalies = vec![];
    for (i, c) in computed.into_iter().enumerate() {
        match c {
            Some((node, chk)) => {
                structure_crosscheck = structure_crosscheck.max(chk);
                if !(0..3).any(|k| node.in_region(k)) {
                    anomalies.push(i);
                }
                nodes.push(Some(node));
            }
            None => nodes.push(None),
        }
    }
    let mut mu_sign_changes = 0;
    for i in 0..n {
        let Some(p) = &pts[i] else { continue };
        for j in grid.neighbors(i).filter(|&j| j > i) {
            if let Some(q) = &pts[j] {
                if p.mu.signum() != q.mu.signum() {
                    mu_sign_changes += 1;
                }
            }
        }
    }
    Ok(MovingFrameData {
        grid,
        frame: eframe.clone(),
        nodes,
        structure_crosscheck,
        mu_sign_changes,
        anomalies,
    })
}

/// One component of a normal field: `a_pq + sign * mu * beta_r`, or
/// `a_pp - lambda`.
#[derive(Debug, Clone, Copy)]
enum Term {
    MuBeta { p: usize, q: usize, sign: f64, r: usize },
    Lambda { p: usize },
}

impl Term {
    fn value(&self, n: &MovingFrameNode) -> f64 {
        match *self {
            Term::MuBeta { p, q, sign, r } => n.a[(p, q)] + sign * n.mu * n.beta[r],
            Term::Lambda { p } => n.a[(p, p)] - n.lambda,
        }
    }

    /// `e_k` of the value, by the product rule.
    fn derivative(&self, n: &MovingFrameNode, k: usize) -> f64 {
        match *self {
            Term::MuBeta { p, q, sign, r } => {
                n.da[k][(p, q)] + sign * (n.dmu[k] * n.beta[r] + n.mu * n.dbeta[(r, k)])
            }
            Term::Lambda { p } => n.da[k][(p, p)] - n.dlambda[k],
        }
    }
}

/// Components of the normal field on each region.
const NORMALS: [[Term; 3]; 3] = [
    [
        Term::MuBeta { p: 0, q: 2, sign: 1.0, r: 1 },
        Term::MuBeta { p: 1, q: 2, sign: -1.0, r: 0 },
        Term::Lambda { p: 2 },
    ],
    [
        Term::MuBeta { p: 0, q: 1, sign: -1.0, r: 2 },
        Term::Lambda { p: 1 },
        Term::MuBeta { p: 1, q: 2, sign: 1.0, r: 0 },
    ],
    [
        Term::Lambda { p: 0 },
        Term::MuBeta { p: 0, q: 1, sign: 1.0, r: 2 },
        Term::MuBeta { p: 0, q: 2, sign: -1.0, r: 1 },
    ],
];

/// Frame coefficients of the normal field on region `k` (0-based).
pub fn normal_coefficients(n: &MovingFrameNode, k: usize) -> Vector3<f64> {
    Vector3::from(NORMALS[k].map(|t| t.value(n)))
}

/// Coefficient of `w1^w2^w3` in `v ^ dv` for `v = sum v_i w_i`, expanded
/// from the coefficient derivatives and the structure functions.
fn normal_wedge_oracle(n: &MovingFrameNode, k: usize) -> f64 {
    let t = &NORMALS[k];
    let v = normal_coefficients(n, k);
    // F[j][l]: coefficient of w_j ^ w_l in dv.
    let f = |j: usize, l: usize| {
        let mut x = t[l].derivative(n, j) - t[j].derivative(n, l);
        for m in 0..3 {
            x -= v[m] * n.c[m][j][l];
        }
        x
    };
    v[0] * f(1, 2) - v[1] * f(0, 2) + v[2] * f(0, 1)
}

/// Which variant of the moving-frame equations to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Exactly as usually printed, including its misprints.
    Printed,
    /// With the three misprints fixed.
    Corrected,
}

/// The three moving-frame integrability expressions at a node, 0-based
/// region index `k`.
pub fn integrability_expression(n: &MovingFrameNode, k: usize, variant: Variant) -> f64 {
    let a = |i: usize, j: usize| n.a[(i - 1, j - 1)];
    let ak = |k: usize, i: usize, j: usize| n.da[k - 1][(i - 1, j - 1)];
    let b = |i: usize| n.beta[i - 1];
    let bk = |i: usize, k: usize| n.dbeta[(i - 1, k - 1)];
    let mk = |k: usize| n.dmu[k - 1];
    let gm = |k: usize| n.dlambda[k - 1];
    let c = |i: usize, j: usize, k: usize| n.c[i - 1][j - 1][k - 1];
    let (m, l) = (n.mu, n.lambda);
    let fixed = variant == Variant::Corrected;
    match k {
        0 => {
            let (u1, u2, u3) = (a(1, 3) + m * b(2), a(2, 3) - m * b(1), a(3, 3) - l);
            (-ak(2, 1, 3) + ak(1, 2, 3) - b(1) * mk(1) - b(2) * mk(2) - m * bk(1, 1) - m * bk(2, 2)
                - u1 * c(1, 1, 2)
                - u2 * c(2, 1, 2)
                - u3 * c(3, 1, 2))
                * u3
                - (-ak(3, 1, 3) + ak(1, 3, 3) - b(2) * mk(3) - m * bk(2, 3) - gm(1)
                    - u1 * c(1, 1, 3)
                    - u2 * c(2, 1, 3)
                    - u3 * c(3, 1, 3))
                    * u2
                + (-ak(3, 2, 3) + ak(2, 3, 3) + b(1) * mk(3) + m * bk(1, 3) - gm(2)
                    - u1 * c(1, 2, 3)
                    - u2 * c(2, 2, 3)
                    - u3 * c(3, 2, 3))
                    * u1
        }
        1 => {
            let (u1, u2, u3) = (a(1, 2) - m * b(3), a(2, 2) - l, a(2, 3) + m * b(1));
            let last = if fixed { u1 } else { a(1, 2) - m * b(1) };
            (-ak(2, 1, 2) + ak(1, 2, 2) + b(3) * mk(2) + m * bk(3, 2) - gm(1)
                - u1 * c(1, 1, 2)
                - u2 * c(2, 1, 2)
                - u3 * c(3, 1, 2))
                * u3
                - (-ak(3, 1, 2) + ak(1, 2, 3) + b(3) * mk(3) + b(1) * mk(1) + m * bk(3, 3) + m * bk(1, 1)
                    - u1 * c(1, 1, 3)
                    - u2 * c(2, 1, 3)
                    - u3 * c(3, 1, 3))
                    * u2
                + (-ak(3, 2, 2) + ak(2, 2, 3) + b(1) * mk(2) + m * bk(1, 2) + gm(3)
                    - u1 * c(1, 2, 3)
                    - u2 * c(2, 2, 3)
                    - u3 * c(3, 2, 3))
                    * last
        }
        2 => {
            let (u1, u2, u3) = (a(1, 1) - l, a(1, 2) + m * b(3), a(1, 3) - m * b(2));
            let (c1_last, u2_last) = if fixed {
                (c(1, 2, 3), u2)
            } else {
                (c(1, 1, 2), a(2, 3) + m * b(3))
            };
            (-ak(2, 1, 1) + ak(1, 1, 2) + b(3) * mk(1) + m * bk(3, 1) + gm(2)
                - u1 * c(1, 1, 2)
                - u2 * c(2, 1, 2)
                - u3 * c(3, 1, 2))
                * u3
                - (-ak(3, 1, 1) + ak(1, 1, 3) - b(2) * mk(1) - m * bk(2, 1) + gm(3)
                    - u1 * c(1, 1, 3)
                    - u2 * c(2, 1, 3)
                    - u3 * c(3, 1, 3))
                    * u2
                + (-ak(3, 1, 2) + ak(2, 1, 3) - b(2) * mk(2) - b(3) * mk(3) - m * bk(2, 2) - m * bk(3, 3)
                    - u1 * c1_last
                    - u2_last * c(2, 2, 3)
                    - u3 * c(3, 2, 3))
                    * u1
        }
        _ => panic!("region index out of range"),
    }
}

/// Normal field of one region at a node, in coordinates, with its
/// alignment to the analysed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalDirection {
    /// 0-based region index (the best-conditioned region at this node).
    pub region: usize,
    /// Unit covector (sign chosen to agree with the analysed form).
    pub direction: Covector3,
    /// `|n ^ w| / (|n| |w|)`: sine of the angle to the analysed form.
    pub parallel_residual: f64,
}

fn coframe_matrix(e: &[Vector3<f64>; 3]) -> Matrix3<f64> {
    Matrix3::from_columns(e)
        .transpose()
        .try_inverse()
        .expect("orthonormal frame")
}

/// Normal-field direction of the region with the largest region quantity.
pub fn normal_field_directions(mfd: &MovingFrameData, metrics: &[Option<CotangentMetric>]) -> Vec<Option<NormalDirection>> {
    (0..mfd.nodes.len())
        .map(|i| {
            let n = mfd.nodes[i].as_ref()?;
            let m = metrics[i].as_ref()?;
            let region = (0..3).filter(|&k| n.in_region(k)).max_by(|&x, &y| n.region_q[x].total_cmp(&n.region_q[y]))?;
            let w = coframe_matrix(mfd.frame[i].as_ref()?);
            let v = normal_coefficients(n, region);
            let mut d = Covector3(w * v);
            let nn = m.norm(&d);
            if nn == 0.0 {
                return None;
            }
            d = d.scale(1.0 / nn);
            let form = Covector3(w * n.alpha);
            if m.inner(&d, &form) < 0.0 {
                d = -d;
            }
            let parallel_residual = m.two_form_norm(&wedge(&d, &form)) / m.norm(&form);
            Some(NormalDirection {
                region,
                direction: d,
                parallel_residual,
            })
        })
        .collect()
}

/// Residual fields of the moving-frame integrability equations.
#[derive(Debug, Clone)]
pub struct MovingFrameResiduals {
    /// Per region: `|expression| / |n|^2` for the printed equations.
    pub printed: [ResidualField; 3],
    /// Per region: same for the corrected equations.
    pub corrected: [ResidualField; 3],
    /// Per region: same for the generic expansion of `n ^ dn`.
    pub oracle: [ResidualField; 3],
    /// Corrected residual on the best-conditioned region of each node.
    pub best: ResidualField,
    /// Direct finite-difference Frobenius residual of the unit normal field.
    pub normal_frobenius: ResidualField,
    /// Sup over nodes and regions of `|corrected - oracle| / |n|^2`.
    pub corrected_vs_oracle: f64,
    /// Same for the printed equations.
    pub printed_vs_oracle: f64,
}

/// Evaluates the three integrability expressions on every node of their
/// region, normalized by `|n|^2` so that they are comparable with the
/// Frobenius residual of the unit form.
pub fn moving_frame_residuals(mfd: &MovingFrameData, metrics: &[Option<CotangentMetric>]) -> Result<MovingFrameResiduals> {
    let field = |k: usize, f: &dyn Fn(&MovingFrameNode) -> f64| {
        ResidualField::new(
            mfd.nodes
                .iter()
                .map(|n| {
                    let n = n.as_ref()?;
                    if !n.in_region(k) {
                        return None;
                    }
                    Some(f(n).abs() / normal_coefficients(n, k).norm_squared())
                })
                .collect(),
        )
    };
    let printed = [0, 1, 2].map(|k| field(k, &|n| integrability_expression(n, k, Variant::Printed)));
    let corrected = [0, 1, 2].map(|k| field(k, &|n| integrability_expression(n, k, Variant::Corrected)));
    let oracle = [0, 1, 2].map(|k| field(k, &|n| normal_wedge_oracle(n, k)));
    let cmp = |v: Variant| {
        [0, 1, 2]
            .iter()
            .map(|&k| field(k, &|n| integrability_expression(n, k, v) - normal_wedge_oracle(n, k)).sup)
            .fold(0.0, f64::max)
    };
    let best = ResidualField::new(
        mfd.nodes
            .iter()
            .map(|n| {
                let n = n.as_ref()?;
                let k = (0..3).filter(|&k| n.in_region(k)).max_by(|&x, &y| n.region_q[x].total_cmp(&n.region_q[y]))?;
                Some(integrability_expression(n, k, Variant::Corrected).abs() / normal_coefficients(n, k).norm_squared())
            })
            .collect(),
    );
    let dirs = normal_field_directions(mfd, metrics);
    let nf = SampledForm::one_form(mfd.grid, dirs.iter().map(|d| d.map(|d| d.direction)).collect());
    let normal_frobenius = frobenius_residual(&nf, metrics)?;
    Ok(MovingFrameResiduals {
        corrected_vs_oracle: cmp(Variant::Corrected),
        printed_vs_oracle: cmp(Variant::Printed),
        printed,
        corrected,
        oracle,
        best,
        normal_frobenius,
    })
}

/// Integrability verdicts for both conformal plane fields of a frame field.
#[derive(Debug, Clone)]
pub struct IntegrabilityReport {
    pub frobenius_plus: ResidualField,
    pub frobenius_minus: ResidualField,
    pub prop2: Prop2Result,
    /// `[plus, minus]` moving-frame residuals in the orthonormalized
    /// coordinate frame.
    pub moving_frame: [MovingFrameResiduals; 2],
    pub moving_frame_anomalies: [usize; 2],
    pub structure_crosscheck: f64,
    /// Integrability threshold used for verdicts.
    pub threshold: f64,
    pub plus_integrable: bool,
    pub minus_integrable: bool,
    /// Whether the moving-frame verdicts match the Frobenius ones.
    pub moving_frame_agrees: [bool; 2],
    pub chi: Vec<Option<f64>>,
}

/// Grid-scaled integrability threshold `kappa * h^2` with `h` the largest
/// spacing.
pub fn h2_threshold(grid: &Grid3, kappa: f64) -> f64 {
    let h = grid.h().into_iter().fold(0.0, f64::max);
    kappa * h * h
}

pub fn analyze(frame: &FrameField, kappa: f64) -> Result<IntegrabilityReport> {
    let threshold = h2_threshold(&frame.grid, kappa);
    let metrics = metrics_of(frame);
    let pairs: Vec<_> = frame.nodes.iter().map(|n| n.as_ref().map(omega_pm)).collect();
    let wp: Vec<Option<Covector3>> = pairs.iter().map(|p| p.map(|p| p.plus)).collect();
    let wm: Vec<Option<Covector3>> = pairs.iter().map(|p| p.map(|p| p.minus)).collect();
    let frobenius_plus = frobenius_residual(&SampledForm::one_form(frame.grid, wp.clone()), &metrics)?;
    let frobenius_minus = frobenius_residual(&SampledForm::one_form(frame.grid, wm.clone()), &metrics)?;
    let prop2 = prop2_check(frame, threshold, threshold)?;
    let ef = coordinate_frame(frame);
    let mp = moving_frame_data(frame, &wp, &ef)?;
    let mm = moving_frame_data(frame, &wm, &ef)?;
    let rp = moving_frame_residuals(&mp, &metrics)?;
    let rm = moving_frame_residuals(&mm, &metrics)?;
    let plus_integrable = frobenius_plus.sup <= threshold;
    let minus_integrable = frobenius_minus.sup <= threshold;
    Ok(IntegrabilityReport {
        moving_frame_agrees: [
            (rp.best.sup <= threshold) == plus_integrable,
            (rm.best.sup <= threshold) == minus_integrable,
        ],
        moving_frame_anomalies: [mp.anomalies.len(), mm.anomalies.len()],
        structure_crosscheck: mp.structure_crosscheck,
        frobenius_plus,
        frobenius_minus,
        prop2,
        moving_frame: [rp, rm],
        threshold,
        plus_integrable,
        minus_integrable,
        chi: chi_field(frame),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pullback::{frame_field, BoxDomain, MetricField, SmoothMap, Tolerances};

    fn euclid(grid: &Grid3) -> Vec<Option<CotangentMetric>> {
        vec![Some(CotangentMetric::euclidean()); grid.len()]
    }

    #[test]
    fn constant_and_affine_forms() {
        let g = Grid3::cube(-1.0, 1.0, 5).unwrap();
        let d = exterior_derivative(&SampledForm::from_fn(g, |_| [0.0, 1.0, 0.0])).unwrap();
        assert!(d.values.iter().all(|v| v.unwrap().norm() == 0.0));
        let d = exterior_derivative(&SampledForm::from_fn(g, |p| [0.0, p[0], 0.0])).unwrap();
        for v in &d.values {
            assert!((v.unwrap() - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn d_of_d_vanishes_to_second_order() {
        let mut errs = vec![];
        let mut g = Grid3::cube(0.0, 1.0, 9).unwrap();
        for _ in 0..3 {
            // d(df) for f = sin(x1) x2 + exp(x3) x1.
            let df = SampledForm::from_fn(g, |p| {
                [p[0].cos() * p[1] + p[2].exp(), p[0].sin(), p[2].exp() * p[0]]
            });
            let dd = exterior_derivative(&df).unwrap();
            errs.push(dd.values.iter().map(|v| v.unwrap().norm()).fold(0.0, f64::max));
            g = g.refined();
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.8, "{errs:?}");
        }
    }

    #[test]
    fn sin_form_converges_at_order_two() {
        let mut errs = vec![];
        let mut g = Grid3::cube(0.0, 1.0, 9).unwrap();
        for _ in 0..3 {
            let f = SampledForm::from_fn(g, |p| [p[2].sin(), 0.0, 0.0]);
            let d = exterior_derivative(&f).unwrap();
            let e = (0..g.len())
                .map(|i| (d.values[i].unwrap() - Vector3::new(0.0, g.point(i)[2].cos(), 0.0)).norm())
                .fold(0.0, f64::max);
            errs.push(e);
            g = g.refined();
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "{errs:?}");
        }
    }

    #[test]
    fn frobenius_residual_is_scale_invariant() {
        let g = Grid3::cube(0.0, 1.0, 17).unwrap();
        // Non-integrable contact form dx3 - x2 dx1 ... and its rescaling.
        let w = SampledForm::from_fn(g, |p| [-p[1], 0.0, 1.0]);
        let f: Vec<Option<f64>> = g.points().iter().map(|p| Some(1.5 + (p[0] + 2.0 * p[2]).sin())).collect();
        let r1 = frobenius_residual(&w, &euclid(&g)).unwrap();
        let r2 = frobenius_residual(&w.scale_by(&f), &euclid(&g)).unwrap();
        assert!((r1.sup - r2.sup).abs() < 1e-2 * r1.sup);
        // Closed form df: residual vanishes.
        let df = SampledForm::from_fn(g, |p| [p[1], p[0], 2.0 * p[2]]);
        assert!(frobenius_residual(&df, &euclid(&g)).unwrap().sup < 1e-12);
    }

    fn example1() -> SmoothMap {
        SmoothMap::parse(
            ["-cos(x2) + sqrt(2)*sin(x3)", "sin(x2) - sqrt(2)*cos(x3)", "sqrt(2)*x1 + x2"],
            BoxDomain::unbounded(),
        )
        .unwrap()
    }

    fn ex1_frame(n: usize) -> FrameField {
        let e = MetricField::euclidean();
        let grid = Grid3::cube(-0.5, 0.5, n).unwrap();
        frame_field(&example1(), &e, &e, &grid, &Tolerances::default(), 0)
    }

    #[test]
    fn example1_chi_is_one_and_clform_holds() {
        let f = ex1_frame(9);
        for c in chi_field(&f) {
            assert!((c.unwrap() - 1.0).abs() < 1e-12);
        }
        let p = prop2_check(&f, 1e-10, 1e-10).unwrap();
        assert!(p.clform_residual < 1e-12);
        assert!(p.corrected_identity_residual < 1e-10, "{p:?}");
        assert!(p.closedness_residual > 0.1);
    }

    #[test]
    fn diagonal_case_matches_symbolic_derivative() {
        let id = SmoothMap::identity(BoxDomain::unbounded());
        let e = MetricField::euclidean();
        let h = MetricField::diagonal(["1", "1 + x2^2", "4"]).unwrap();
        let grid = Grid3::new([0.0, 0.2, 0.0], [1.0, 1.2, 1.0], [5, 41, 5]).unwrap();
        let f = frame_field(&id, &e, &h, &grid, &Tolerances::default(), 0);
        let r = diag_case_check(&f, 1e-12).unwrap();
        for i in 0..grid.len() {
            let y = grid.point(i)[1];
            let want = 3.0 / (y * y * (3.0 - y * y).sqrt());
            assert!((r.values[i].unwrap() - want).abs() < 0.05 * want, "{y}");
        }
        assert!(matches!(diag_case_check(&ex1_frame(5), 1e-12), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn coordinate_frame_has_no_structure_functions() {
        let f = ex1_frame(7);
        let ef = coordinate_frame(&f);
        let pairs: Vec<_> = f.nodes.iter().map(|n| n.map(|sd| omega_pm(&sd).plus)).collect();
        let mfd = moving_frame_data(&f, &pairs, &ef).unwrap();
        for n in mfd.nodes.iter().flatten() {
            assert!(n.c.iter().flatten().flatten().all(|c| c.abs() < 1e-12));
        }
        // a_ij are the entries of S.
        let sd = f.nodes[0].unwrap();
        assert!((mfd.nodes[0].unwrap().a - sd.s.0).abs().max() < 1e-13);
    }

    #[test]
    fn spherical_frame_structure_functions() {
        // Orthonormal frame of spherical coordinates written in Cartesian
        // components: e_r, e_theta, e_phi. Hand-derived commutators:
        // [e_r, e_th] = -e_th / r, [e_r, e_ph] = -e_ph / r,
        // [e_th, e_ph] = -cot(th) e_ph / r.
        let grid = Grid3::new([0.5, 0.4, 0.6], [0.9, 0.8, 1.0], [33, 33, 33]).unwrap();
        let tol = Tolerances::default();
        let id = SmoothMap::identity(BoxDomain::unbounded());
        let e = MetricField::euclidean();
        let h = MetricField::diagonal(["1", "2", "3"]).unwrap();
        let f = frame_field(&id, &e, &h, &grid, &tol, 0);
        let ef: TangentFrame = grid
            .points()
            .iter()
            .map(|p| {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                let th = (p[2] / r).acos();
                let ph = p[1].atan2(p[0]);
                Some([
                    Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()),
                    Vector3::new(th.cos() * ph.cos(), th.cos() * ph.sin(), -th.sin()),
                    Vector3::new(-ph.sin(), ph.cos(), 0.0),
                ])
            })
            .collect();
        let w: Vec<_> = f.nodes.iter().map(|n| n.map(|sd| omega_pm(&sd).plus)).collect();
        let mfd = moving_frame_data(&f, &w, &ef).unwrap();
        let mut err: f64 = 0.0;
        for (i, n) in mfd.nodes.iter().enumerate() {
            let Some(n) = n else { continue };
            if !grid.is_interior(i) {
                continue;
            }
            let p = grid.point(i);
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let th = (p[2] / r).acos();
            let mut want = [[[0.0; 3]; 3]; 3];
            want[1][0][1] = -1.0 / r;
            want[1][1][0] = 1.0 / r;
            want[2][0][2] = -1.0 / r;
            want[2][2][0] = 1.0 / r;
            want[2][1][2] = -1.0 / (th.tan() * r);
            want[2][2][1] = 1.0 / (th.tan() * r);
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        err = err.max((n.c[a][b][c] - want[a][b][c]).abs());
                    }
                }
            }
        }
        assert!(err < 1e-3, "{err}");
        assert!(mfd.structure_crosscheck < 5e-3, "{}", mfd.structure_crosscheck);
        // With nonzero structure functions the misprints become visible.
        let res = moving_frame_residuals(&mfd, &metrics_of(&f)).unwrap();
        assert!(res.corrected_vs_oracle < 1e-9, "{}", res.corrected_vs_oracle);
        assert!(res.printed_vs_oracle > 1e-3, "{}", res.printed_vs_oracle);
    }

    #[test]
    fn printed_expressions_match_the_expansion_where_unaffected_by_misprints() {
        // Region 1 is printed without misprints; regions 2 and 3 agree after correction.
        let f = ex1_frame(11);
        let ef = coordinate_frame(&f);
        for branch in 0..2 {
            let w: Vec<_> = f
                .nodes
                .iter()
                .map(|n| n.map(|sd| if branch == 0 { omega_pm(&sd).plus } else { omega_pm(&sd).minus }))
                .collect();
            let mfd = moving_frame_data(&f, &w, &ef).unwrap();
            let res = moving_frame_residuals(&mfd, &metrics_of(&f)).unwrap();
            assert!(res.corrected_vs_oracle < 1e-10, "{}", res.corrected_vs_oracle);
            for n in mfd.nodes.iter().flatten() {
                if n.in_region(0) {
                    let d = integrability_expression(n, 0, Variant::Printed) - normal_wedge_oracle(n, 0);
                    assert!(d.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn flat_constant_instance_has_zero_residuals() {
        let id = SmoothMap::identity(BoxDomain::unbounded());
        let e = MetricField::euclidean();
        let h = MetricField::parse(["2", "0.3", "0", "3", "0.1", "5"], BoxDomain::unbounded()).unwrap();
        let grid = Grid3::cube(0.0, 1.0, 5).unwrap();
        let f = frame_field(&id, &e, &h, &grid, &Tolerances::default(), 0);
        let rep = analyze(&f, 1.0).unwrap();
        assert!(rep.frobenius_plus.sup < 1e-13 && rep.frobenius_minus.sup < 1e-13);
        for r in &rep.moving_frame {
            assert!(r.best.sup < 1e-12);
            for k in 0..3 {
                assert!(r.printed[k].sup < 1e-12);
            }
        }
        assert!(rep.prop2.identity_residual < 1e-13 && rep.prop2.closedness_residual < 1e-13);
        assert_eq!(rep.prop2.implication_holds, Some(true));
    }

    #[test]
    fn periodic_integral() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let id = SmoothMap::identity(BoxDomain::unbounded());
        let e = MetricField::euclidean();
        // chi = 1.5 + 0.3 cos(x1), independent of x2.
        let h = MetricField::diagonal([
            "1",
            "2 + 0.5*sin(x2)",
            "2 + 0.5*sin(x2) + (1.5 + 0.3*cos(x1))^2*(1 + 0.5*sin(x2))",
        ])
        .unwrap();
        let grid = Grid3::with_periodic([0.0; 3], [two_pi; 3], [12, 12, 12], [true; 3]).unwrap();
        let f = frame_field(&id, &e, &h, &grid, &Tolerances::default(), 0);
        assert!(!f.holonomy);
        assert!(prop3_integral(&f).unwrap().abs() < 1e-12);
        for c in chi_field(&f).iter().zip(grid.points()) {
            assert!((c.0.unwrap() - (1.5 + 0.3 * c.1[0].cos())).abs() < 1e-12);
        }
        let nonperiodic = ex1_frame(5);
        assert!(matches!(prop3_integral(&nonperiodic), Err(Error::Inapplicable(_))));
    }
}
