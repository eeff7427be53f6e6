//! Static SVG charts. Each chart carries its plotted data as CSV inside an
//! XML comment so chart content can be diffed as text.

use std::fmt::Write;

use pvprof_core::benchmark::BenchmarkReport;

const W: f64 = 720.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#7f7f7f"];

pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dashed: bool,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart; `steps` draws a histogram-like step outline.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], steps: bool) -> String {
    let all_x = series.iter().flat_map(|s| s.x.iter().copied());
    let all_y = series.iter().flat_map(|s| s.y.iter().copied());
    let (x0, x1) = nice_range(all_x.clone().fold(f64::INFINITY, f64::min), all_x.fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = nice_range(all_y.clone().fold(f64::INFINITY, f64::min), all_y.fold(f64::NEG_INFINITY, f64::max));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, "<!-- data").unwrap();
    writeln!(s, "series,x,y").unwrap();
    for ser in series {
        for (x, y) in ser.x.iter().zip(&ser.y) {
            writeln!(s, "{},{},{}", ser.label, num(*x), num(*y)).unwrap();
        }
    }
    writeln!(s, "-->").unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#).unwrap();
    for k in 0..=4 {
        let fy = y0 + (y1 - y0) * f64::from(k) / 4.0;
        let fx = x0 + (x1 - x0) * f64::from(k) / 4.0;
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, LEFT - 6.0, sy(fy) + 4.0, fy).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.3}</text>"#, sx(fx), TOP + ph + 18.0, fx).unwrap();
        writeln!(s, r##"<line x1="{LEFT}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="#dddddd"/>"##, LEFT + pw, sy(fy), sy(fy)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 10.0, escape(x_label)).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (k, ser) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut pts = Vec::new();
        for (j, (x, y)) in ser.x.iter().zip(&ser.y).enumerate() {
            if steps && j > 0 {
                pts.push(format!("{:.2},{:.2}", sx(*x), sy(ser.y[j - 1])));
            }
            pts.push(format!("{:.2},{:.2}", sx(*x), sy(*y)));
        }
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#, pts.join(" ")).unwrap();
        let ly = TOP + 14.0 + 18.0 * k as f64;
        writeln!(s, r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{colour}" stroke-width="2"{dash}/>"#, W - RIGHT + 10.0, W - RIGHT + 30.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 36.0, ly + 4.0, escape(&ser.label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// nBE histogram bins of 1% from -25% to +25%, as densities.
fn histogram(nbe: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let edges: Vec<f64> = (-25..=25).map(|k| f64::from(k) / 100.0).collect();
    let mut counts = vec![0usize; edges.len() - 1];
    for v in nbe {
        let k = ((v + 0.25) * 100.0).floor();
        if k >= 0.0 && (k as usize) < counts.len() {
            counts[k as usize] += 1;
        }
    }
    let n = nbe.len().max(1) as f64;
    (edges[..counts.len()].to_vec(), counts.iter().map(|c| *c as f64 / n).collect())
}

/// Every chart for a report as (file name, SVG text).
pub fn render_all(report: &BenchmarkReport) -> Vec<(String, String)> {
    let mut out = Vec::new();

    let daily: Vec<Series> = report
        .daily
        .iter()
        .map(|(kind, days)| {
            let (x, y): (Vec<f64>, Vec<f64>) = days
                .iter()
                .enumerate()
                .filter_map(|(k, d)| d.metrics.as_ref().map(|m| (k as f64, 100.0 * m.nmae)))
                .unzip();
            Series { label: kind.name().into(), x, y, dashed: false }
        })
        .collect();
    out.push(("daily_nmae.svg".into(), line_chart("Daily nMAE", "forecast day", "nMAE (%)", &daily, false)));

    let hist: Vec<Series> = report
        .aggregate
        .iter()
        .filter_map(|(kind, m)| {
            let m = m.as_ref()?;
            let (x, y) = histogram(&m.nbe_series);
            Some(Series { label: kind.name().into(), x: x.iter().map(|v| 100.0 * v).collect(), y, dashed: false })
        })
        .collect();
    out.push(("nbe_histogram.svg".into(), line_chart("nBE distribution", "nBE (%)", "density", &hist, true)));

    if let Some(sweeps) = &report.studies.sweeps {
        for feature in ["g_poa", "t_module", "hod"] {
            let mut series = Vec::new();
            let mut reference = None;
            for (kind, curves) in sweeps {
                if let Some(c) = curves.iter().find(|c| c.feature.name() == feature) {
                    series.push(Series { label: kind.name().into(), x: c.x.clone(), y: c.power.clone(), dashed: false });
                    if reference.is_none() {
                        reference = c.reference.clone().map(|r| Series { label: "reference".into(), x: c.x.clone(), y: r, dashed: true });
                    }
                }
            }
            if series.is_empty() {
                continue;
            }
            series.extend(reference);
            out.push((format!("sweep_{feature}.svg"), line_chart(&format!("Power vs {feature}"), feature, "power (W)", &series, false)));
        }
    }
    out
}
