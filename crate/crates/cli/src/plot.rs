//! Static SVG heatmaps and quiver plots of 2D field slices.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 560.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;
const SIZE: f64 = 460.0;

/// Node values on a regular 2D slice, indexed `i + nx * j`.
#[derive(Debug, Clone)]
pub struct Slice {
    pub nx: usize,
    pub ny: usize,
    /// `[xmin, xmax, ymin, ymax]`.
    pub extent: [f64; 4],
    pub axes: [String; 2],
    pub values: Vec<Option<f64>>,
}

/// One arrow family of a quiver plot.
pub struct Arrows<'a> {
    pub label: &'a str,
    pub color: &'a str,
    /// Base point and direction in slice coordinates.
    pub arrows: Vec<([f64; 2], Option<[f64; 2]>)>,
}

const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.5, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.0, [253.0, 231.0, 37.0]),
];

fn color(u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    let k = STOPS.iter().position(|s| s.0 >= u).unwrap_or(4).max(1);
    let (a, b) = (STOPS[k - 1], STOPS[k]);
    let s = (u - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|i| (a.1[i] + s * (b.1[i] - a.1[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn header(title: &str, extent: [f64; 4], axes: &[String; 2]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, LEFT + SIZE / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let yb = TOP + SIZE;
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{}" text-anchor="start">{:.4}</text>"#, yb + 16.0, extent[0]);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, LEFT + SIZE, yb + 16.0, extent[1]);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + SIZE / 2.0, yb + 32.0, escape(&axes[0]));
    let _ = writeln!(s, r#"<text x="{}" y="{yb}" text-anchor="end">{:.4}</text>"#, LEFT - 4.0, extent[2]);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, LEFT - 4.0, TOP + 10.0, extent[3]);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + SIZE / 2.0,
        TOP + SIZE / 2.0,
        escape(&axes[1])
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn empty_note(s: &mut String) {
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" fill="gray">no unmasked nodes</text>"#,
        LEFT + SIZE / 2.0,
        TOP + SIZE / 2.0
    );
}

/// Cell-centred heatmap; masked nodes are grey. With `log`, values are
/// shown on a log10 scale floored at 1e-16.
pub fn heatmap(title: &str, slice: &Slice, log: bool) -> String {
    let mut s = header(title, slice.extent, &slice.axes);
    let map = |v: f64| if log { v.abs().max(1e-16).log10() } else { v };
    let shown: Vec<f64> = slice.values.iter().flatten().map(|&v| map(v)).filter(|v| v.is_finite()).collect();
    if shown.is_empty() {
        empty_note(&mut s);
        s.push_str("</svg>\n");
        return s;
    }
    let lo = shown.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = shown.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (cw, ch) = (SIZE / slice.nx as f64, SIZE / slice.ny as f64);
    for j in 0..slice.ny {
        for i in 0..slice.nx {
            let fill = match slice.values[i + slice.nx * j].map(map) {
                Some(v) if v.is_finite() => color((v - lo) / span),
                _ => "#cccccc".to_string(),
            };
            let x = LEFT + i as f64 * cw;
            let y = TOP + SIZE - (j + 1) as f64 * ch;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    let bx = LEFT + SIZE + 30.0;
    for k in 0..50 {
        let y = TOP + SIZE - (k + 1) as f64 * SIZE / 50.0;
        let _ = writeln!(
            s,
            r#"<rect x="{bx}" y="{y:.2}" width="20" height="{:.2}" fill="{}"/>"#,
            SIZE / 50.0 + 0.05,
            color((k as f64 + 0.5) / 50.0)
        );
    }
    let fmt = |v: f64| if log { format!("1e{v:.1}") } else { format!("{v:.3e}") };
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bx + 24.0, TOP + SIZE, fmt(lo));
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bx + 24.0, TOP + 10.0, fmt(hi));
    s.push_str("</svg>\n");
    s
}

/// Quiver plot with unit-length arrows (each scaled to a fixed fraction of
/// the node spacing).
pub fn quiver(title: &str, extent: [f64; 4], axes: &[String; 2], spacing: [f64; 2], families: &[Arrows]) -> String {
    let mut s = header(title, extent, axes);
    let sx = SIZE / (extent[1] - extent[0]);
    let sy = SIZE / (extent[3] - extent[2]);
    let len = 0.4 * (spacing[0] * sx).min(spacing[1] * sy);
    let mut any = false;
    for (k, fam) in families.iter().enumerate() {
        for (p, d) in &fam.arrows {
            let Some(d) = d else { continue };
            let (px, py) = (d[0] * sx, -d[1] * sy);
            let n = px.hypot(py);
            if n == 0.0 {
                continue;
            }
            any = true;
            let (ux, uy) = (px / n, py / n);
            let x0 = LEFT + (p[0] - extent[0]) * sx;
            let y0 = TOP + SIZE - (p[1] - extent[2]) * sy;
            let (x1, y1) = (x0 + len * ux, y0 + len * uy);
            let hw = 0.25 * len;
            let _ = writeln!(
                s,
                r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="{}" stroke-width="1.2"/>"#,
                fam.color
            );
            let _ = writeln!(
                s,
                r#"<polygon points="{x1:.2},{y1:.2} {:.2},{:.2} {:.2},{:.2}" fill="{}"/>"#,
                x1 - hw * ux - 0.5 * hw * uy,
                y1 - hw * uy + 0.5 * hw * ux,
                x1 - hw * ux + 0.5 * hw * uy,
                y1 - hw * uy - 0.5 * hw * ux,
                fam.color
            );
        }
        let ly = TOP + 20.0 * (k + 1) as f64;
        let lx = LEFT + SIZE + 16.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/>"#, lx + 20.0, fam.color);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(fam.label));
    }
    if !any {
        empty_note(&mut s);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(values: Vec<Option<f64>>) -> Slice {
        Slice {
            nx: 2,
            ny: 2,
            extent: [-0.5, 0.5, 0.0, 2.0],
            axes: ["x1".into(), "x2".into()],
            values,
        }
    }

    #[test]
    fn heatmap_draws_every_cell_and_extents() {
        let svg = heatmap("r", &slice(vec![Some(1.0), Some(2.0), None, Some(4.0)]), false);
        assert_eq!(svg.matches("<rect").count(), 2 + 4 + 50);
        assert!(svg.contains("-0.5000") && svg.contains("2.0000"));
        assert!(svg.contains("#cccccc"));
    }

    #[test]
    fn fully_masked_heatmap_has_a_note() {
        let svg = heatmap("r", &slice(vec![None; 4]), true);
        assert!(svg.contains("no unmasked nodes"));
    }

    #[test]
    fn quiver_arrows_have_equal_length() {
        let fam = Arrows {
            label: "w",
            color: "blue",
            arrows: vec![([0.0, 0.5], Some([3.0, 0.0])), ([0.0, 1.5], Some([0.0, 0.1]))],
        };
        let svg = quiver("q", [-0.5, 0.5, 0.0, 2.0], &["x1".into(), "x2".into()], [0.5, 0.5], &[fam]);
        let lens: Vec<f64> = svg
            .lines()
            .filter(|l| l.starts_with("<line x1") && l.contains("stroke-width=\"1.2\""))
            .map(|l| {
                let v: Vec<f64> = l
                    .split('"')
                    .enumerate()
                    .filter(|(i, _)| [1, 3, 5, 7].contains(i))
                    .map(|(_, x)| x.parse().unwrap())
                    .collect();
                ((v[2] - v[0]).powi(2) + (v[3] - v[1]).powi(2)).sqrt()
            })
            .collect();
        assert_eq!(lens.len(), 2);
        assert!((lens[0] - lens[1]).abs() < 0.02, "{lens:?}");
    }
}
