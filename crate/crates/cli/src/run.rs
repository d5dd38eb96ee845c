//! Subcommand pipelines. Each returns per-level summaries, node records of
//! the finest level, optional CSV rows and plots, and expectation checks.

use std::collections::BTreeMap;

use leafwise::beltrami::{beltrami_coefficient, convergence_orders, foliated_isothermal, leafwise_holomorphy, FoliatedChart, Orientation};
use leafwise::conformal::{certify, mu_expected, omega_pm, Agreement, CertOptions, OmegaSpec, Verdict};
use leafwise::grid::{Grid2, Grid3};
use leafwise::integrability::{analyze, diag_case_check, prop3_integral, ResidualField};
use leafwise::pullback::{frame_field, FrameField};
use leafwise::tensor3::EigenMethod;
use leafwise::Error;
use serde_json::{json, Map, Value};

use crate::config::{MaskedNodes, RunConfig};
use crate::plot::{heatmap, quiver, Arrows, Slice};

/// A finite number, or a string for the non-finite values `inf`, `-inf`
/// and `nan`.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub expected: Value,
    pub observed: Value,
    pub ok: bool,
}

/// One CSV row: `x, y, t, re_w, im_w, residual`.
pub type CsvRow = [f64; 6];

#[derive(Debug, Default)]
pub struct Outcome {
    pub levels: Vec<Value>,
    pub orders: Map<String, Value>,
    pub detail: Value,
    pub records: Vec<Value>,
    pub csv: Vec<CsvRow>,
    pub plots: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

/// Failure that prevents a report from being produced.
#[derive(Debug)]
pub struct RunError(pub String);

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError(e.to_string())
    }
}

fn kind(e: &Error) -> String {
    let d = format!("{e:?}");
    d.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("").to_string()
}

fn frame(cfg: &RunConfig) -> FrameField {
    frame_field(&cfg.map, &cfg.metric_g, &cfg.metric_h, &cfg.grid, &cfg.tolerances, cfg.anchor)
}

fn grid_json(g: &Grid3) -> Value {
    json!({
        "min": nums(&g.min()),
        "max": nums(&g.max()),
        "n": g.shape(),
        "periodic": g.axes.map(|a| a.periodic),
    })
}

fn mid_slice(g: &Grid3, values: impl Fn(usize) -> Option<f64>) -> Slice {
    let [nx, ny, nz] = g.shape();
    let k = nz / 2;
    Slice {
        nx,
        ny,
        extent: [g.axes[0].min, g.axes[0].max, g.axes[1].min, g.axes[1].max],
        axes: ["x1".into(), "x2".into()],
        values: (0..nx * ny).map(|p| values(g.index([p % nx, p / nx, k]))).collect(),
    }
}

fn leaf_slice(g: &Grid2, values: Vec<Option<f64>>) -> Slice {
    Slice {
        nx: g.x.n,
        ny: g.y.n,
        extent: [g.x.min, g.x.max, g.y.min, g.y.max],
        axes: ["x1".into(), "x2".into()],
        values,
    }
}

fn mid_label(g: &Grid3) -> String {
    format!("x3 = {:.4}", g.axes[2].coord(g.shape()[2] / 2))
}

fn check(name: &str, expected: Value, observed: Value, ok: bool) -> Check {
    Check {
        name: name.into(),
        expected,
        observed,
        ok,
    }
}

fn vec3(v: &[f64]) -> Value {
    nums(v)
}

pub fn run_analyze(cfg: &RunConfig, refine: usize) -> Result<Outcome, RunError> {
    let mut out = Outcome::default();
    let mut last = None;
    for level in 0..=refine {
        let c = cfg.refined(level);
        let f = frame(&c);
        let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
        for (_, e) in &f.masked {
            *reasons.entry(kind(e)).or_default() += 1;
        }
        out.levels.push(json!({
            "level": level,
            "grid": grid_json(&c.grid),
            "nodes": c.grid.len(),
            "valid": c.grid.len() - f.masked.len(),
            "masked": f.masked.len(),
            "mask_reasons": reasons,
            "holonomy": f.holonomy,
            "misaligned_edges": f.misaligned_edges(),
        }));
        last = Some((c, f));
    }
    let (c, f) = last.expect("at least one level");
    let errors: BTreeMap<usize, &Error> = f.masked.iter().map(|(i, e)| (*i, e)).collect();
    for i in 0..c.grid.len() {
        let x = c.grid.point(i);
        let rec = match &f.nodes[i] {
            Some(sd) => {
                let p = omega_pm(sd);
                json!({
                    "stage": "analyze",
                    "node": i,
                    "ijk": c.grid.ijk(i),
                    "x": vec3(&x),
                    "valid": true,
                    "lambda": nums(&sd.lambda),
                    "gap": num(sd.gap),
                    "method": match sd.method { EigenMethod::Analytic => "analytic", EigenMethod::Jacobi => "jacobi" },
                    "eta": sd.eta.iter().map(|e| vec3(e.0.as_slice())).collect::<Vec<_>>(),
                    "omega_plus": vec3(p.plus.0.as_slice()),
                    "omega_minus": vec3(p.minus.0.as_slice()),
                    "c1": num(p.c1),
                    "c3": num(p.c3),
                    "mu": num(mu_expected(&sd.lambda)),
                })
            }
            None => json!({
                "stage": "analyze",
                "node": i,
                "ijk": c.grid.ijk(i),
                "x": vec3(&x),
                "valid": false,
                "error": errors.get(&i).map_or("masked".to_string(), |e| e.to_string()),
            }),
        };
        out.records.push(rec);
    }
    let pairs: Vec<_> = f.nodes.iter().map(|n| n.as_ref().map(omega_pm)).collect();
    let arrows = |pick: fn(&leafwise::conformal::ConformalPair) -> [f64; 2]| {
        let [nx, ny, nz] = c.grid.shape();
        (0..nx * ny)
            .map(|p| {
                let i = c.grid.index([p % nx, p / nx, nz / 2]);
                let x = c.grid.point(i);
                ([x[0], x[1]], pairs[i].as_ref().map(pick))
            })
            .collect()
    };
    let h = c.grid.h();
    out.plots.push((
        "omega_quiver.svg".into(),
        quiver(
            &format!("w+ and w- (dx1, dx2 coefficients), {}", mid_label(&c.grid)),
            [c.grid.axes[0].min, c.grid.axes[0].max, c.grid.axes[1].min, c.grid.axes[1].max],
            &["x1".into(), "x2".into()],
            [h[0], h[1]],
            &[
                Arrows {
                    label: "w+",
                    color: "#1f77b4",
                    arrows: arrows(|p| [p.plus.0[0], p.plus.0[1]]),
                },
                Arrows {
                    label: "w-",
                    color: "#d62728",
                    arrows: arrows(|p| [p.minus.0[0], p.minus.0[1]]),
                },
            ],
        ),
    ));
    if let Some(m) = cfg.expect.masked_nodes {
        let masked = f.masked.len();
        let ok = match m {
            MaskedNodes::None => masked == 0,
            MaskedNodes::All => masked == c.grid.len(),
        };
        let name = if m == MaskedNodes::None { "none" } else { "all" };
        out.checks.push(check("masked_nodes", json!(name), json!(masked), ok));
    }
    out.detail = json!({ "valid": c.grid.len() - f.masked.len(), "masked": f.masked.len(), "holonomy": f.holonomy });
    Ok(out)
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Conformal => "conformal",
        Verdict::NotConformal => "not_conformal",
    }
}

fn agreement_name(a: Agreement) -> &'static str {
    match a {
        Agreement::AllPass => "all_pass",
        Agreement::AllFail => "all_fail",
        Agreement::Ambiguous => "ambiguous",
        Agreement::Disagree => "disagree",
    }
}

pub fn run_certify(cfg: &RunConfig, refine: usize, seed: u64) -> Result<Outcome, RunError> {
    let mut out = Outcome::default();
    let mut fields = vec![("plus", OmegaSpec::Plus), ("minus", OmegaSpec::Minus)];
    if let Some(w) = &cfg.omega {
        fields.push(("omega", OmegaSpec::Given(w.clone())));
    }
    let mut finest = Map::new();
    for level in 0..=refine {
        let c = cfg.refined(level);
        let f = frame(&c);
        let opts = CertOptions {
            tol: c.tolerances,
            samples: c.samples,
            seed,
        };
        let mut lv = Map::new();
        lv.insert("level".into(), json!(level));
        lv.insert("grid".into(), grid_json(&c.grid));
        for (name, spec) in &fields {
            let res = certify(&f, spec, &opts);
            let (mut conformal, mut not, mut failed) = (0usize, 0usize, 0usize);
            let mut agreements: BTreeMap<&str, usize> = BTreeMap::new();
            let (mut c2, mut c3, mut smp) = (0.0f64, 0.0f64, 0.0f64);
            let mut cond3 = vec![None; c.grid.len()];
            for (i, r) in res.iter().enumerate() {
                match r {
                    Some(Ok(r)) => {
                        if r.verdict == Verdict::Conformal {
                            conformal += 1;
                        } else {
                            not += 1;
                        }
                        *agreements.entry(agreement_name(r.agreement(c.tolerances.cert_tol))).or_default() += 1;
                        c2 = c2.max(r.condition2_residual);
                        c3 = c3.max(r.condition3_residual);
                        smp = smp.max(r.sampled_conformality_residual);
                        cond3[i] = Some(r.condition3_residual);
                    }
                    Some(Err(_)) => failed += 1,
                    None => {}
                }
                if level == refine {
                    let x = c.grid.point(i);
                    let rec = match r {
                        Some(Ok(r)) => json!({
                            "stage": "certify",
                            "field": name,
                            "node": i,
                            "x": vec3(&x),
                            "condition2": num(r.condition2_residual),
                            "mu_fit": num(r.mu_fit),
                            "mu_expected": num(r.mu_expected),
                            "condition3": num(r.condition3_residual),
                            "sampled": num(r.sampled_conformality_residual),
                            "a_formula_gap": num(r.a_formula_gap),
                            "w_dot_eta2": num(r.w_dot_eta2),
                            "verdict": verdict_name(r.verdict),
                            "agreement": agreement_name(r.agreement(c.tolerances.cert_tol)),
                        }),
                        Some(Err(e)) => json!({ "stage": "certify", "field": name, "node": i, "x": vec3(&x), "error": e.to_string() }),
                        None => json!({ "stage": "certify", "field": name, "node": i, "x": vec3(&x), "masked": true }),
                    };
                    out.records.push(rec);
                }
            }
            let summary = json!({
                "conformal": conformal,
                "not_conformal": not,
                "errors": failed,
                "masked": f.masked.len(),
                "agreement": agreements,
                "max_condition2": num(c2),
                "max_condition3": num(c3),
                "max_sampled": num(smp),
            });
            lv.insert((*name).into(), summary.clone());
            if level == refine {
                finest.insert((*name).into(), summary);
                out.plots.push((
                    format!("condition3_{name}.svg"),
                    heatmap(
                        &format!("log10 condition-3 residual of w{}, {}", if *name == "plus" { "+" } else if *name == "minus" { "-" } else { "" }, mid_label(&c.grid)),
                        &mid_slice(&c.grid, |i| cond3[i]),
                        true,
                    ),
                ));
                let expected = match *name {
                    "plus" => cfg.expect.plus_conformal,
                    "minus" => cfg.expect.minus_conformal,
                    _ => cfg.expect.omega_conformal,
                };
                if let Some(e) = expected {
                    let certified = conformal + not;
                    let ok = failed == 0 && certified > 0 && if e { not == 0 } else { conformal == 0 };
                    out.checks.push(check(
                        &format!("{name}_conformal"),
                        json!(e),
                        json!({ "conformal": conformal, "not_conformal": not, "errors": failed }),
                        ok,
                    ));
                }
            }
        }
        out.levels.push(Value::Object(lv));
    }
    out.detail = Value::Object(finest);
    Ok(out)
}

fn residual_json(r: &ResidualField) -> Value {
    json!({ "sup": num(r.sup), "argmax": r.argmax, "nodes": r.count() })
}

pub fn run_integrability(cfg: &RunConfig, refine: usize) -> Result<Outcome, RunError> {
    let mut out = Outcome::default();
    let (mut sup_p, mut sup_m) = (vec![], vec![]);
    for level in 0..=refine {
        let c = cfg.refined(level);
        let f = frame(&c);
        let rep = analyze(&f, c.kappa)?;
        sup_p.push(rep.frobenius_plus.sup);
        sup_m.push(rep.frobenius_minus.sup);
        out.levels.push(json!({
            "level": level,
            "grid": grid_json(&c.grid),
            "threshold": num(rep.threshold),
            "frobenius_plus": num(rep.frobenius_plus.sup),
            "frobenius_minus": num(rep.frobenius_minus.sup),
            "plus_integrable": rep.plus_integrable,
            "minus_integrable": rep.minus_integrable,
        }));
        if level < refine {
            continue;
        }
        let p = &rep.prop2;
        let diag = match diag_case_check(&f, c.tolerances.spectral_gap_tol) {
            Ok(r) => json!({
                "applicable": true,
                "sup_dchi_dx2": num(r.sup),
                "both_integrable": r.sup <= rep.threshold,
            }),
            Err(e) => json!({ "applicable": false, "reason": e.to_string() }),
        };
        let prop3 = match prop3_integral(&f) {
            Ok(v) => json!({
                "applicable": true,
                "integral": num(v),
                "surrogate": "periodic box stands in for a closed manifold",
            }),
            Err(e) => json!({ "applicable": false, "reason": e.to_string() }),
        };
        out.detail = json!({
            "threshold": num(rep.threshold),
            "kappa": num(c.kappa),
            "frobenius_plus": residual_json(&rep.frobenius_plus),
            "frobenius_minus": residual_json(&rep.frobenius_minus),
            "plus_integrable": rep.plus_integrable,
            "minus_integrable": rep.minus_integrable,
            "moving_frame": ([0, 1].map(|b| {
                let m = &rep.moving_frame[b];
                json!({
                    "best": residual_json(&m.best),
                    "normal_frobenius": residual_json(&m.normal_frobenius),
                    "printed_region_sup": m.printed.iter().map(|r| num(r.sup)).collect::<Vec<_>>(),
                    "corrected_region_sup": m.corrected.iter().map(|r| num(r.sup)).collect::<Vec<_>>(),
                    "corrected_vs_oracle": num(m.corrected_vs_oracle),
                    "printed_vs_oracle": num(m.printed_vs_oracle),
                    "agrees_with_frobenius": rep.moving_frame_agrees[b],
                    "anomalies": rep.moving_frame_anomalies[b],
                })
            })),
            "structure_crosscheck": num(rep.structure_crosscheck),
            "chi_identity": {
                "identity_residual": num(p.identity_residual),
                "identity_sign": num(p.identity_sign),
                "closedness_residual": num(p.closedness_residual),
                "corrected_identity_residual": num(p.corrected_identity_residual),
                "correction_term": num(p.correction_term),
                "clform_residual": num(p.clform_residual),
                "implication_holds": p.implication_holds,
                "holonomy_warning": p.holonomy_warning,
            },
            "diagonal_case": diag,
            "closed_integral": prop3,
        });
        let mf = [&rep.moving_frame[0].best, &rep.moving_frame[1].best];
        for i in 0..c.grid.len() {
            out.records.push(json!({
                "stage": "integrability",
                "node": i,
                "x": vec3(&c.grid.point(i)),
                "chi": opt(rep.chi[i]),
                "frobenius_plus": opt(rep.frobenius_plus.values[i]),
                "frobenius_minus": opt(rep.frobenius_minus.values[i]),
                "moving_frame_plus": opt(mf[0].values[i]),
                "moving_frame_minus": opt(mf[1].values[i]),
            }));
        }
        for (name, r) in [("plus", &rep.frobenius_plus), ("minus", &rep.frobenius_minus)] {
            out.plots.push((
                format!("frobenius_{name}.svg"),
                heatmap(
                    &format!("log10 Frobenius residual of w{}, {}", if name == "plus" { "+" } else { "-" }, mid_label(&c.grid)),
                    &mid_slice(&c.grid, |i| r.values[i]),
                    true,
                ),
            ));
        }
        for (name, e, got) in [
            ("plus_integrable", cfg.expect.plus_integrable, rep.plus_integrable),
            ("minus_integrable", cfg.expect.minus_integrable, rep.minus_integrable),
        ] {
            if let Some(e) = e {
                out.checks.push(check(name, json!(e), json!(got), e == got));
            }
        }
    }
    out.orders.insert("frobenius_plus".into(), nums(&convergence_orders(&sup_p)));
    out.orders.insert("frobenius_minus".into(), nums(&convergence_orders(&sup_m)));
    Ok(out)
}

fn leaves_of(cfg: &RunConfig) -> Result<&crate::config::LeafSpec, RunError> {
    cfg.leaves.as_ref().ok_or_else(|| RunError("this subcommand needs a [leaves] section".into()))
}

fn chart_json(chart: &FoliatedChart) -> Value {
    let leaves: Vec<Value> = chart
        .t
        .iter()
        .enumerate()
        .map(|(k, t)| match (&chart.leaves[k], &chart.isothermal[k]) {
            (Some(w), Some(iso)) => json!({
                "t": num(*t),
                "iterations": w.iterations,
                "residual": num(w.residual),
                "residual_sup": num(w.residual_sup),
                "jacobian_min": num(w.jacobian_min),
                "sup_anisotropy": num(iso.sup_anisotropy),
                "sup_skew": num(iso.sup_skew),
                "sup_distortion": num(iso.sup_distortion),
            }),
            _ => json!({
                "t": num(*t),
                "failure": chart.failures.iter().find(|f| f.0 == k).map(|f| f.1.to_string()),
            }),
        })
        .collect();
    json!({
        "leaves": leaves,
        "complete": chart.is_complete(),
        "continuity_modulus": num(chart.continuity_modulus),
        "continuity_rate": num(chart.continuity_rate),
    })
}

fn chart_sup(chart: &FoliatedChart, f: impl Fn(&leafwise::beltrami::IsothermalResidual) -> f64) -> f64 {
    chart.isothermal.iter().flatten().map(f).fold(0.0, f64::max)
}

pub fn run_isothermal(cfg: &RunConfig, refine: usize) -> Result<Outcome, RunError> {
    leaves_of(cfg)?;
    let mut out = Outcome::default();
    let (mut an, mut sk, mut di) = (vec![], vec![], vec![]);
    for level in 0..=refine {
        let c = cfg.refined(level);
        let spec = leaves_of(&c)?;
        let chart = foliated_isothermal(&c.metric_g, spec.grid, &spec.t, &c.beltrami);
        an.push(chart_sup(&chart, |r| r.sup_anisotropy));
        sk.push(chart_sup(&chart, |r| r.sup_skew));
        di.push(chart_sup(&chart, |r| r.sup_distortion));
        out.levels.push(json!({
            "level": level,
            "leaf_grid": { "min": [spec.grid.x.min, spec.grid.y.min], "max": [spec.grid.x.max, spec.grid.y.max], "n": [spec.grid.x.n, spec.grid.y.n] },
            "complete": chart.is_complete(),
            "sup_anisotropy": num(an[level]),
            "sup_skew": num(sk[level]),
            "sup_distortion": num(di[level]),
        }));
        if level < refine {
            continue;
        }
        out.detail = chart_json(&chart);
        for (k, &t) in spec.t.iter().enumerate() {
            let (Some(w), Some(iso), Some(m)) = (&chart.leaves[k], &chart.isothermal[k], &chart.metrics[k]) else {
                continue;
            };
            let mu = beltrami_coefficient(m)?;
            for i in 0..spec.grid.len() {
                let p = spec.grid.point(i);
                out.records.push(json!({
                    "stage": "isothermal",
                    "t": num(t),
                    "x": num(p[0]),
                    "y": num(p[1]),
                    "w": nums(&[w.w[i].re, w.w[i].im]),
                    "mu": nums(&[mu.mu[i].re, mu.mu[i].im]),
                    "anisotropy": num(iso.anisotropy[i]),
                    "skew": num(iso.skew[i]),
                    "distortion": num(iso.distortion[i]),
                    "lambda": num(iso.lambda[i]),
                }));
                out.csv.push([p[0], p[1], t, w.w[i].re, w.w[i].im, iso.distortion[i]]);
            }
            out.plots.push((
                format!("distortion_leaf{k}.svg"),
                heatmap(
                    &format!("log10 isothermal distortion, leaf x3 = {t:.4}"),
                    &leaf_slice(&spec.grid, iso.distortion.iter().map(|&v| Some(v)).collect()),
                    true,
                ),
            ));
        }
        if let Some(tol) = cfg.expect.isothermal_tol {
            let ok = chart.is_complete() && di[level] <= tol;
            out.checks.push(check(
                "isothermal_tol",
                num(tol),
                json!({ "sup_distortion": num(di[level]), "complete": chart.is_complete() }),
                ok,
            ));
        }
    }
    out.orders.insert("sup_anisotropy".into(), nums(&convergence_orders(&an)));
    out.orders.insert("sup_skew".into(), nums(&convergence_orders(&sk)));
    out.orders.insert("sup_distortion".into(), nums(&convergence_orders(&di)));
    Ok(out)
}

fn orientation_name(o: Orientation) -> &'static str {
    match o {
        Orientation::Holomorphic => "holomorphic",
        Orientation::Antiholomorphic => "antiholomorphic",
        Orientation::Mixed => "mixed",
    }
}

pub fn run_holomorphy(cfg: &RunConfig, refine: usize) -> Result<Outcome, RunError> {
    leaves_of(cfg)?;
    if cfg.target.is_none() {
        return Err(RunError("holomorphy needs a [target] section".into()));
    }
    let mut out = Outcome::default();
    let mut res = vec![];
    for level in 0..=refine {
        let c = cfg.refined(level);
        let spec = leaves_of(&c)?;
        let target = c.target.expect("checked above");
        let cm = foliated_isothermal(&c.metric_g, spec.grid, &spec.t, &c.beltrami);
        let cn = foliated_isothermal(&c.metric_h, target, &spec.t, &c.beltrami);
        let rep = leafwise_holomorphy(&c.map, &cm, &cn, &c.holomorphy)?;
        res.push(rep.residual);
        out.levels.push(json!({
            "level": level,
            "source_n": [spec.grid.x.n, spec.grid.y.n],
            "target_n": [target.x.n, target.y.n],
            "orientation": orientation_name(rep.orientation),
            "residual": num(rep.residual),
        }));
        if level < refine {
            continue;
        }
        let leaves: Vec<Value> = rep
            .leaves
            .iter()
            .zip(&spec.t)
            .map(|(l, t)| match l {
                Some(l) => json!({
                    "t": num(*t),
                    "cr_residual": num(l.cr_residual),
                    "conjugate_residual": num(l.conjugate_residual),
                    "det_min": num(l.det_min),
                    "det_max": num(l.det_max),
                    "conformality_residual": num(l.conformality_residual),
                    "masked": l.masked,
                }),
                None => json!({ "t": num(*t), "failure": "chart missing on this leaf" }),
            })
            .collect();
        out.detail = json!({
            "orientation": orientation_name(rep.orientation),
            "residual": num(rep.residual),
            "leaves": leaves,
            "source_chart": chart_json(&cm),
            "target_chart": chart_json(&cn),
        });
        for (k, &t) in spec.t.iter().enumerate() {
            let (Some(l), Some(w)) = (&rep.leaves[k], &cm.leaves[k]) else { continue };
            for i in 0..spec.grid.len() {
                let p = spec.grid.point(i);
                out.records.push(json!({
                    "stage": "holomorphy",
                    "t": num(t),
                    "x": num(p[0]),
                    "y": num(p[1]),
                    "w": nums(&[w.w[i].re, w.w[i].im]),
                    "cr": opt(l.cr_field[i]),
                }));
                out.csv.push([p[0], p[1], t, w.w[i].re, w.w[i].im, l.cr_field[i].unwrap_or(f64::NAN)]);
            }
            out.plots.push((
                format!("cr_leaf{k}.svg"),
                heatmap(&format!("log10 |h_zbar|, leaf x3 = {t:.4}"), &leaf_slice(&spec.grid, l.cr_field.clone()), true),
            ));
        }
        if let Some(o) = cfg.expect.orientation {
            out.checks.push(check(
                "orientation",
                json!(orientation_name(o)),
                json!(orientation_name(rep.orientation)),
                o == rep.orientation,
            ));
        }
        if let Some(tol) = cfg.expect.holomorphy_tol {
            out.checks.push(check("holomorphy_tol", num(tol), num(rep.residual), rep.residual <= tol));
        }
    }
    out.orders.insert("residual".into(), nums(&convergence_orders(&res)));
    Ok(out)
}
