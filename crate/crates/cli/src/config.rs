//! INI run configuration. Every key is validated before any computation and
//! unknown sections or keys are rejected.

use std::collections::{BTreeMap, BTreeSet};

use ini::Ini;
use leafwise::beltrami::{BeltramiOptions, HolomorphyOptions, Orientation};
use leafwise::expr::Expr;
use leafwise::grid::{Grid2, Grid3};
use leafwise::pullback::{BoxDomain, MetricField, SmoothMap, Tolerances};

const SCHEMA: &[(&str, &[&str])] = &[
    ("map", &["phi1", "phi2", "phi3"]),
    ("metric_g", &["g11", "g12", "g13", "g22", "g23", "g33"]),
    ("metric_h", &["g11", "g12", "g13", "g22", "g23", "g33"]),
    ("grid", &["min", "max", "n", "periodic", "anchor"]),
    ("tolerances", &["spectral_gap_tol", "cert_tol", "degenerate_tol", "k_max"]),
    ("omega", &["w1", "w2", "w3"]),
    ("certify", &["samples"]),
    ("integrability", &["kappa"]),
    ("leaves", &["min", "max", "n", "t"]),
    ("target", &["min", "max", "n"]),
    ("beltrami", &["rel_tol", "max_iter_factor"]),
    ("holomorphy", &["leaf_tol", "conformality_tol"]),
    (
        "expect",
        &[
            "masked_nodes",
            "plus_conformal",
            "minus_conformal",
            "omega_conformal",
            "plus_integrable",
            "minus_integrable",
            "isothermal_tol",
            "orientation",
            "holomorphy_tol",
        ],
    ),
];

const EUCLIDEAN: [&str; 6] = ["1", "0", "0", "1", "0", "1"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskedNodes {
    None,
    All,
}

/// Verdicts the run is expected to reproduce; unset entries are not checked.
#[derive(Debug, Clone, Default)]
pub struct Expectations {
    pub masked_nodes: Option<MaskedNodes>,
    pub plus_conformal: Option<bool>,
    pub minus_conformal: Option<bool>,
    pub omega_conformal: Option<bool>,
    pub plus_integrable: Option<bool>,
    pub minus_integrable: Option<bool>,
    pub isothermal_tol: Option<f64>,
    pub orientation: Option<Orientation>,
    pub holomorphy_tol: Option<f64>,
}

/// Leaf family `x3 = t` sampled on a 2D grid in `(x1, x2)`.
#[derive(Debug, Clone)]
pub struct LeafSpec {
    pub grid: Grid2,
    pub t: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub map: SmoothMap,
    pub metric_g: MetricField,
    pub metric_h: MetricField,
    pub grid: Grid3,
    pub anchor: usize,
    pub tolerances: Tolerances,
    pub omega: Option<[Expr; 3]>,
    pub samples: usize,
    pub kappa: f64,
    pub leaves: Option<LeafSpec>,
    pub target: Option<Grid2>,
    pub beltrami: BeltramiOptions,
    pub holomorphy: HolomorphyOptions,
    pub expect: Expectations,
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

fn sections(text: &str) -> Result<Sections, ConfigError> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError(format!("config syntax: {e}")))?;
    let mut out = Sections::new();
    for (name, props) in ini.iter() {
        let Some(name) = name else {
            if let Some((k, _)) = props.iter().next() {
                return err(format!("key `{k}` appears outside any section"));
            }
            continue;
        };
        let Some((_, allowed)) = SCHEMA.iter().find(|(s, _)| *s == name) else {
            return err(format!("unknown section [{name}]"));
        };
        let entry = out.entry(name.to_string()).or_default();
        let mut seen = BTreeSet::new();
        for (k, v) in props.iter() {
            if !allowed.contains(&k) {
                return err(format!("unknown key `{k}` in [{name}]"));
            }
            if !seen.insert(k) || entry.contains_key(k) {
                return err(format!("duplicate key `{k}` in [{name}]"));
            }
            entry.insert(k.to_string(), v.trim().to_string());
        }
    }
    Ok(out)
}

fn get<'a>(s: &'a Sections, sec: &str, key: &str) -> Option<&'a str> {
    s.get(sec).and_then(|m| m.get(key)).map(String::as_str)
}

fn number(sec: &str, key: &str, v: &str) -> Result<f64, ConfigError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => err(format!("[{sec}] {key}: `{v}` is not a finite number")),
    }
}

fn numbers<const N: usize>(sec: &str, key: &str, v: &str) -> Result<[f64; N], ConfigError> {
    let vals = v.split_whitespace().map(|x| number(sec, key, x)).collect::<Result<Vec<_>, _>>()?;
    vals.try_into().map_err(|_| ConfigError(format!("[{sec}] {key}: expected {N} numbers")))
}

fn counts<const N: usize>(sec: &str, key: &str, v: &str) -> Result<[usize; N], ConfigError> {
    let vals = v
        .split_whitespace()
        .map(|x| x.parse::<usize>().map_err(|_| ConfigError(format!("[{sec}] {key}: `{x}` is not a node count"))))
        .collect::<Result<Vec<_>, _>>()?;
    vals.try_into().map_err(|_| ConfigError(format!("[{sec}] {key}: expected {N} node counts")))
}

fn boolean(sec: &str, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => err(format!("[{sec}] {key}: expected true or false, got `{v}`")),
    }
}

fn required<'a>(s: &'a Sections, sec: &str, key: &str) -> Result<&'a str, ConfigError> {
    get(s, sec, key).ok_or_else(|| ConfigError(format!("[{sec}] {key} is required")))
}

fn expr(sec: &str, key: &str, v: &str) -> Result<Expr, ConfigError> {
    Expr::parse(v).map_err(|e| ConfigError(format!("[{sec}] {key}: {e}")))
}

fn metric(s: &Sections, sec: &str) -> Result<MetricField, ConfigError> {
    let keys = ["g11", "g12", "g13", "g22", "g23", "g33"];
    let mut coeffs = Vec::with_capacity(6);
    for (k, d) in keys.iter().zip(EUCLIDEAN) {
        coeffs.push(expr(sec, k, get(s, sec, k).unwrap_or(d))?);
    }
    let coeffs: [Expr; 6] = coeffs.try_into().expect("six coefficients");
    Ok(MetricField::new(coeffs, BoxDomain::unbounded()))
}

fn opt_f64(s: &Sections, sec: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
    get(s, sec, key).map_or(Ok(default), |v| number(sec, key, v))
}

fn positive(sec: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 {
        Ok(v)
    } else {
        err(format!("[{sec}] {key} must be positive"))
    }
}

fn grid2(s: &Sections, sec: &str) -> Result<Grid2, ConfigError> {
    let min = numbers::<2>(sec, "min", required(s, sec, "min")?)?;
    let max = numbers::<2>(sec, "max", required(s, sec, "max")?)?;
    let n = counts::<2>(sec, "n", required(s, sec, "n")?)?;
    Grid2::new(min, max, n).map_err(|e| ConfigError(format!("[{sec}] {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let s = sections(text)?;

        let map = match s.get("map") {
            None => SmoothMap::identity(BoxDomain::unbounded()),
            Some(_) => {
                let c = ["phi1", "phi2", "phi3"]
                    .map(|k| required(&s, "map", k).and_then(|v| expr("map", k, v)));
                let [a, b, c] = c;
                SmoothMap::new([a?, b?, c?], BoxDomain::unbounded())
            }
        };

        let min = numbers::<3>("grid", "min", required(&s, "grid", "min")?)?;
        let max = numbers::<3>("grid", "max", required(&s, "grid", "max")?)?;
        let n = counts::<3>("grid", "n", required(&s, "grid", "n")?)?;
        let periodic = match get(&s, "grid", "periodic") {
            None => [false; 3],
            Some(v) => {
                let p = v.split_whitespace().map(|x| boolean("grid", "periodic", x)).collect::<Result<Vec<_>, _>>()?;
                p.try_into().map_err(|_| ConfigError("[grid] periodic: expected 3 flags".into()))?
            }
        };
        let grid = Grid3::with_periodic(min, max, n, periodic).map_err(|e| ConfigError(format!("[grid] {e}")))?;
        let anchor = match get(&s, "grid", "anchor") {
            None => 0,
            Some(v) => v.parse::<usize>().map_err(|_| ConfigError(format!("[grid] anchor: `{v}` is not a node index")))?,
        };
        if anchor >= grid.len() {
            return err(format!("[grid] anchor {anchor} is outside the grid ({} nodes)", grid.len()));
        }

        let d = Tolerances::default();
        let t = "tolerances";
        let tolerances = Tolerances {
            spectral_gap_tol: positive(t, "spectral_gap_tol", opt_f64(&s, t, "spectral_gap_tol", d.spectral_gap_tol)?)?,
            cert_tol: positive(t, "cert_tol", opt_f64(&s, t, "cert_tol", d.cert_tol)?)?,
            degenerate_tol: positive(t, "degenerate_tol", opt_f64(&s, t, "degenerate_tol", d.degenerate_tol)?)?,
            k_max: opt_f64(&s, t, "k_max", d.k_max)?,
        };
        if !(tolerances.k_max > 0.0 && tolerances.k_max < 1.0) {
            return err("[tolerances] k_max must lie in (0, 1)");
        }

        let omega = match s.get("omega") {
            None => None,
            Some(_) => {
                let [a, b, c] = ["w1", "w2", "w3"].map(|k| required(&s, "omega", k).and_then(|v| expr("omega", k, v)));
                Some([a?, b?, c?])
            }
        };

        let samples = match get(&s, "certify", "samples") {
            None => 16,
            Some(v) => match v.parse::<usize>() {
                Ok(k) if k > 0 => k,
                _ => return err(format!("[certify] samples: `{v}` is not a positive count")),
            },
        };
        let kappa = positive("integrability", "kappa", opt_f64(&s, "integrability", "kappa", 1.0)?)?;

        let leaves = match s.get("leaves") {
            None => None,
            Some(_) => {
                let grid = grid2(&s, "leaves")?;
                let t = required(&s, "leaves", "t")?
                    .split_whitespace()
                    .map(|x| number("leaves", "t", x))
                    .collect::<Result<Vec<_>, _>>()?;
                if t.is_empty() {
                    return err("[leaves] t must list at least one leaf");
                }
                Some(LeafSpec { grid, t })
            }
        };
        let target = match s.get("target") {
            None => None,
            Some(_) => Some(grid2(&s, "target")?),
        };

        let bd = BeltramiOptions::default();
        let beltrami = BeltramiOptions {
            k_max: tolerances.k_max,
            anchors: None,
            rel_tol: positive("beltrami", "rel_tol", opt_f64(&s, "beltrami", "rel_tol", bd.rel_tol)?)?,
            max_iter_factor: match get(&s, "beltrami", "max_iter_factor") {
                None => bd.max_iter_factor,
                Some(v) => match v.parse::<usize>() {
                    Ok(k) if k > 0 => k,
                    _ => return err(format!("[beltrami] max_iter_factor: `{v}` is not a positive count")),
                },
            },
        };
        let hd = HolomorphyOptions::default();
        let holomorphy = HolomorphyOptions {
            leaf_tol: positive("holomorphy", "leaf_tol", opt_f64(&s, "holomorphy", "leaf_tol", hd.leaf_tol)?)?,
            conformality_tol: positive(
                "holomorphy",
                "conformality_tol",
                opt_f64(&s, "holomorphy", "conformality_tol", hd.conformality_tol)?,
            )?,
        };

        let e = "expect";
        let flag = |k: &str| get(&s, e, k).map(|v| boolean(e, k, v)).transpose();
        let tol = |k: &str| get(&s, e, k).map(|v| number(e, k, v).and_then(|x| positive(e, k, x))).transpose();
        let expect = Expectations {
            masked_nodes: match get(&s, e, "masked_nodes") {
                None => None,
                Some("none") => Some(MaskedNodes::None),
                Some("all") => Some(MaskedNodes::All),
                Some(v) => return err(format!("[expect] masked_nodes: expected none or all, got `{v}`")),
            },
            plus_conformal: flag("plus_conformal")?,
            minus_conformal: flag("minus_conformal")?,
            omega_conformal: flag("omega_conformal")?,
            plus_integrable: flag("plus_integrable")?,
            minus_integrable: flag("minus_integrable")?,
            isothermal_tol: tol("isothermal_tol")?,
            orientation: match get(&s, e, "orientation") {
                None => None,
                Some("holomorphic") => Some(Orientation::Holomorphic),
                Some("antiholomorphic") => Some(Orientation::Antiholomorphic),
                Some("mixed") => Some(Orientation::Mixed),
                Some(v) => return err(format!("[expect] orientation: unknown value `{v}`")),
            },
            holomorphy_tol: tol("holomorphy_tol")?,
        };
        if expect.omega_conformal.is_some() && omega.is_none() {
            return err("[expect] omega_conformal needs an [omega] section");
        }

        Ok(RunConfig {
            map,
            metric_g: metric(&s, "metric_g")?,
            metric_h: metric(&s, "metric_h")?,
            grid,
            anchor,
            tolerances,
            omega,
            samples,
            kappa,
            leaves,
            target,
            beltrami,
            holomorphy,
            expect,
        })
    }

    /// The run at dyadic refinement `level` of every grid.
    pub fn refined(&self, level: usize) -> RunConfig {
        let mut c = self.clone();
        for _ in 0..level {
            let ijk = c.grid.ijk(c.anchor);
            c.grid = c.grid.refined();
            c.anchor = c.grid.index(ijk.map(|i| 2 * i));
            if let Some(l) = &mut c.leaves {
                l.grid = l.grid.refined();
            }
            if let Some(t) = &mut c.target {
                *t = t.refined();
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\nmin = 0 0 0\nmax = 1 1 1\nn = 3 3 3\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.grid.shape(), [3, 3, 3]);
        assert_eq!(c.samples, 16);
        assert_eq!(c.kappa, 1.0);
        assert!(c.metric_g.is_constant() && c.omega.is_none() && c.leaves.is_none());
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let e = RunConfig::parse(&format!("{MINIMAL}bogus = 1\n")).unwrap_err();
        assert!(e.0.contains("unknown key `bogus`"), "{e}");
        let e = RunConfig::parse(&format!("{MINIMAL}[extra]\na = 1\n")).unwrap_err();
        assert!(e.0.contains("unknown section"), "{e}");
        let e = RunConfig::parse(&format!("top = 1\n{MINIMAL}")).unwrap_err();
        assert!(e.0.contains("outside any section"), "{e}");
    }

    #[test]
    fn malformed_values_are_reported_with_location() {
        let e = RunConfig::parse("[grid]\nmin = 0 0\nmax = 1 1 1\nn = 3 3 3\n").unwrap_err();
        assert!(e.0.contains("[grid] min"), "{e}");
        let e = RunConfig::parse(&format!("{MINIMAL}[map]\nphi1 = x1 +\nphi2 = x2\nphi3 = x3\n")).unwrap_err();
        assert!(e.0.starts_with("[map] phi1"), "{e}");
        let e = RunConfig::parse(&format!("{MINIMAL}[expect]\nomega_conformal = true\n")).unwrap_err();
        assert!(e.0.contains("[omega]"), "{e}");
    }

    #[test]
    fn refinement_keeps_the_anchor_point() {
        let c = RunConfig::parse("[grid]\nmin = 0 0 0\nmax = 1 1 1\nn = 3 3 3\nanchor = 13\n").unwrap();
        let r = c.refined(2);
        assert_eq!(r.grid.shape(), [9, 9, 9]);
        assert_eq!(r.grid.point(r.anchor), c.grid.point(c.anchor));
    }
}
