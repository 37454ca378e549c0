//! CSV and SVG artifact rendering. CSV is the primary record (header
//! `k,mean,std,n_runs,n_diverged`, shortest round-trip decimals); every SVG
//! is a pure function of aggregate data that is also written as CSV.

use crate::metrics::{AggregatePoint, AggregateSeries, BoundOverlay};

/// Serializes one aggregate as CSV.
pub fn csv_bytes(agg: &AggregateSeries) -> String {
    let mut s = String::from("k,mean,std,n_runs,n_diverged\n");
    for p in &agg.points {
        s.push_str(&format!("{},{},{},{},{}\n", p.k, p.mean, p.std, agg.n_runs, agg.n_diverged));
    }
    s
}

/// Serializes a bound overlay sampled on the aggregate's grid.
pub fn overlay_csv_bytes(agg: &AggregateSeries, overlay: &BoundOverlay) -> String {
    let mut s = String::from("k,bound\n");
    for p in &agg.points {
        s.push_str(&format!("{},{}\n", p.k, overlay.eval(p.k)));
    }
    s
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_T: f64 = 46.0;
const GAP: f64 = 70.0;

struct Axis {
    min: f64,
    max: f64,
}

impl Axis {
    fn to_unit(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }
}

struct Panel {
    x0: f64,
    log_x: bool,
    xaxis: Axis,
    yaxis: Axis,
}

impl Panel {
    fn sx(&self, k: u64) -> f64 {
        let v = if self.log_x { ((k + 1) as f64).log10() } else { k as f64 };
        self.x0 + PANEL_W * self.xaxis.to_unit(v)
    }

    fn sy(&self, value: f64, floor: f64) -> f64 {
        let v = value.max(floor).log10();
        MARGIN_T + PANEL_H * (1.0 - self.yaxis.to_unit(v))
    }
}

fn polyline(points: &[(f64, f64)]) -> String {
    let coords: Vec<String> =
        points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    coords.join(" ")
}

fn series_paths(
    panel: &Panel,
    points: &[AggregatePoint],
    floor: f64,
    color: &str,
    label: &str,
    with_band: bool,
) -> String {
    let mut out = String::new();
    if with_band {
        // One-standard-deviation band, clamped to the plot floor.
        let mut band: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (panel.sx(p.k), panel.sy(p.mean + p.std, floor)))
            .collect();
        for p in points.iter().rev() {
            band.push((panel.sx(p.k), panel.sy((p.mean - p.std).max(floor), floor)));
        }
        out.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
            polyline(&band)
        ));
    }
    let mean: Vec<(f64, f64)> =
        points.iter().map(|p| (panel.sx(p.k), panel.sy(p.mean, floor))).collect();
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"><title>{label}</title></polyline>\n",
        polyline(&mean)
    ));
    out
}

fn decade_ticks(min: f64, max: f64) -> Vec<i32> {
    let lo = min.floor() as i32;
    let hi = max.ceil() as i32;
    let span = (hi - lo).max(1);
    let step = 1 + span / 10;
    (lo..=hi).step_by(step as usize).collect()
}

fn panel_frame(panel: &Panel, title: &str, y_label: &str) -> String {
    let mut s = String::new();
    let x0 = panel.x0;
    let (top, bottom) = (MARGIN_T, MARGIN_T + PANEL_H);
    s.push_str(&format!(
        "<rect x=\"{x0:.2}\" y=\"{top:.2}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#444\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#222\">{title}</text>\n",
        x0 + PANEL_W / 2.0,
        top - 10.0
    ));
    // y ticks (always log scale).
    for t in decade_ticks(panel.yaxis.min, panel.yaxis.max) {
        let v = t as f64;
        if v < panel.yaxis.min - 1e-9 || v > panel.yaxis.max + 1e-9 {
            continue;
        }
        let y = top + PANEL_H * (1.0 - panel.yaxis.to_unit(v));
        s.push_str(&format!(
            "<line x1=\"{x0:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\n",
            x0 + PANEL_W
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\" fill=\"#555\">1e{t}</text>\n",
            x0 - 6.0,
            y + 3.0
        ));
    }
    // x ticks.
    if panel.log_x {
        for t in decade_ticks(panel.xaxis.min, panel.xaxis.max) {
            let v = t as f64;
            if v < panel.xaxis.min - 1e-9 || v > panel.xaxis.max + 1e-9 {
                continue;
            }
            let x = x0 + PANEL_W * panel.xaxis.to_unit(v);
            s.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{top:.2}\" x2=\"{x:.2}\" y2=\"{bottom:.2}\" stroke=\"#eee\"/>\n"
            ));
            s.push_str(&format!(
                "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\" fill=\"#555\">1e{t}</text>\n",
                bottom + 14.0
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333\">k+1 (log)</text>\n",
            x0 + PANEL_W / 2.0,
            bottom + 30.0
        ));
    } else {
        for i in 0..=4 {
            let v = panel.xaxis.min + (panel.xaxis.max - panel.xaxis.min) * i as f64 / 4.0;
            let x = x0 + PANEL_W * panel.xaxis.to_unit(v);
            s.push_str(&format!(
                "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\" fill=\"#555\">{:.0}</text>\n",
                bottom + 14.0,
                v
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333\">k</text>\n",
            x0 + PANEL_W / 2.0,
            bottom + 30.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" font-size=\"11\" fill=\"#333\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">{y_label}</text>\n",
        top + PANEL_H / 2.0,
        top + PANEL_H / 2.0
    ));
    s
}

fn plot_floor(series: &[&AggregateSeries]) -> f64 {
    let mut min_pos = f64::INFINITY;
    for agg in series {
        for p in &agg.points {
            if p.mean > 0.0 {
                min_pos = min_pos.min(p.mean);
            }
        }
    }
    if min_pos.is_finite() {
        min_pos * 1e-2
    } else {
        1e-12
    }
}

fn render(
    series: &[(&AggregateSeries, &str, &str)],
    overlay: Option<&BoundOverlay>,
    title: &str,
    y_label: &str,
) -> String {
    let floor = plot_floor(&series.iter().map(|(a, _, _)| *a).collect::<Vec<_>>());
    let mut vmax = f64::NEG_INFINITY;
    let mut kmax = 1u64;
    for (agg, _, _) in series {
        for p in &agg.points {
            vmax = vmax.max(p.mean + p.std);
            kmax = kmax.max(p.k);
        }
    }
    if let Some(ov) = overlay {
        vmax = vmax.max(ov.eval(0));
    }
    let yaxis = Axis { min: floor.log10().floor(), max: vmax.max(floor).log10().ceil() };
    let width = MARGIN_L + 2.0 * PANEL_W + GAP + 24.0;
    let height = MARGIN_T + PANEL_H + 56.0;

    let loglog = Panel {
        x0: MARGIN_L,
        log_x: true,
        xaxis: Axis { min: 0.0, max: ((kmax + 1) as f64).log10().max(1.0) },
        yaxis: Axis { ..yaxis },
    };
    let semilog = Panel {
        x0: MARGIN_L + PANEL_W + GAP,
        log_x: false,
        xaxis: Axis { min: 0.0, max: kmax as f64 },
        yaxis: Axis { ..yaxis },
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"20\" font-size=\"15\" text-anchor=\"middle\" fill=\"#111\">{title}</text>\n",
        width / 2.0
    ));
    svg.push_str(&panel_frame(&loglog, "log-log", y_label));
    svg.push_str(&panel_frame(&semilog, "semi-log", y_label));

    for panel in [&loglog, &semilog] {
        for (agg, color, label) in series {
            svg.push_str(&series_paths(panel, &agg.points, floor, color, label, true));
        }
        if let (Some(ov), Some((agg, _, _))) = (overlay, series.first()) {
            let pts: Vec<(f64, f64)> = agg
                .points
                .iter()
                .map(|p| (panel.sx(p.k), panel.sy(ov.eval(p.k), floor)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#c03030\" stroke-width=\"1.2\" stroke-dasharray=\"6 3\"><title>calibrated bound ~ 1/(k+1)^{:.4}</title></polyline>\n",
                polyline(&pts),
                ov.exponent
            ));
        }
    }

    // Legend.
    let mut ly = MARGIN_T + 8.0;
    for (_, color, label) in series {
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"4\" fill=\"{color}\"/>\n",
            MARGIN_L + 8.0,
            ly
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"#333\">{label}</text>\n",
            MARGIN_L + 24.0,
            ly + 5.0
        ));
        ly += 14.0;
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean curve with one-standard-deviation band, in log-log and semi-log
/// panels, plus the calibrated decay envelope when one applies.
pub fn series_svg(agg: &AggregateSeries, overlay: Option<&BoundOverlay>, title: &str) -> String {
    render(&[(agg, "#1f5fa8", agg.kind.name())], overlay, title, agg.kind.name())
}

/// Two aggregates of the same kind overlaid (projected vs plain variants).
pub fn compare_svg(
    projected: &AggregateSeries,
    plain: &AggregateSeries,
    title: &str,
) -> String {
    render(
        &[(projected, "#1f5fa8", "projected"), (plain, "#2a9d4e", "no projection")],
        None,
        title,
        projected.kind.name(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ResidualKind;

    fn agg() -> AggregateSeries {
        AggregateSeries {
            kind: ResidualKind::Slow,
            points: (0..=10)
                .map(|i| AggregatePoint {
                    k: i * 100,
                    mean: 1.0 / (i + 1) as f64,
                    std: 0.05,
                })
                .collect(),
            n_runs: 20,
            n_diverged: 1,
        }
    }

    #[test]
    fn csv_layout_and_roundtrip_floats() {
        let text = csv_bytes(&agg());
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("k,mean,std,n_runs,n_diverged"));
        let first = lines.next().unwrap();
        assert_eq!(first, "0,1,0.05,20,1");
        assert_eq!(text.lines().count(), 12);
        // Every float round-trips through its printed form.
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let mean: f64 = cols[1].parse().unwrap();
            let k: u64 = cols[0].parse().unwrap();
            let expect = 1.0 / (k / 100 + 1) as f64;
            assert_eq!(mean, expect);
        }
    }

    #[test]
    fn svg_is_deterministic_and_wellformed() {
        let a = agg();
        let one = series_svg(&a, None, "slow residual");
        let two = series_svg(&a, None, "slow residual");
        assert_eq!(one, two);
        assert!(one.starts_with("<svg"));
        assert!(one.ends_with("</svg>\n"));
        assert!(one.contains("polyline"));
        assert!(one.contains("polygon"));
        assert!(one.matches("<rect").count() >= 2);
    }

    #[test]
    fn compare_svg_has_both_series() {
        let a = agg();
        let svg = compare_svg(&a, &a, "feasibility");
        assert!(svg.contains("projected"));
        assert!(svg.contains("no projection"));
    }
}
