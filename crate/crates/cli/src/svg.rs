//! Minimal standalone SVG line chart for coverage curves: one line per
//! method with a translucent +/- one-std band. No plotting dependency; the
//! CSV next to it is the authoritative artifact.

use std::fmt::Write as _;

pub struct AggregateSeries {
    pub label: String,
    /// (episode, mean, std)
    pub points: Vec<(f64, f64, f64)>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 52.0;
const COLORS: [&str; 6] = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#2c3e50"];

pub fn render_coverage_chart(series: &[AggregateSeries]) -> String {
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0f64, f64::max);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x = |e: f64| MARGIN_L + e / x_max * plot_w;
    let y = |c: f64| MARGIN_T + (1.0 - c.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"##
    );
    let _ = write!(svg, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"##);

    // Axes and gridlines.
    for tick in 0..=5 {
        let frac = tick as f64 / 5.0;
        let gy = y(frac);
        let _ = write!(
            svg,
            r##"<line x1="{MARGIN_L}" y1="{gy:.1}" x2="{:.1}" y2="{gy:.1}" stroke="#dddddd" stroke-width="1"/>"##,
            WIDTH - MARGIN_R
        );
        let _ = write!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="end" fill="#333333">{:.1}</text>"##,
            MARGIN_L - 8.0,
            gy + 4.0,
            frac
        );
    }
    let x_ticks = 6usize;
    for tick in 0..=x_ticks {
        let e = x_max * tick as f64 / x_ticks as f64;
        let gx = x(e);
        let _ = write!(
            svg,
            r##"<text x="{gx:.1}" y="{:.1}" font-size="12" text-anchor="middle" fill="#333333">{:.0}</text>"##,
            HEIGHT - MARGIN_B + 20.0,
            e
        );
    }
    let _ = write!(
        svg,
        r##"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{:.1}" stroke="#333333" stroke-width="1.5"/>"##,
        HEIGHT - MARGIN_B
    );
    let _ = write!(
        svg,
        r##"<line x1="{MARGIN_L}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333333" stroke-width="1.5"/>"##,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    );
    let _ = write!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle" fill="#111111">episode</text>"##,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = write!(
        svg,
        r##"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" fill="#111111" transform="rotate(-90 16 {:.1})">coverage</text>"##,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if s.points.is_empty() {
            continue;
        }
        // Std band: polygon up the +std edge and back down the -std edge.
        let mut band = String::new();
        for &(e, m, sd) in &s.points {
            let _ = write!(band, "{:.1},{:.1} ", x(e), y(m + sd));
        }
        for &(e, m, sd) in s.points.iter().rev() {
            let _ = write!(band, "{:.1},{:.1} ", x(e), y(m - sd));
        }
        let _ = write!(
            svg,
            r##"<polygon points="{}" fill="{color}" opacity="0.15"/>"##,
            band.trim_end()
        );
        let mut line = String::new();
        for &(e, m, _) in &s.points {
            let _ = write!(line, "{:.1},{:.1} ", x(e), y(m));
        }
        let _ = write!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"##,
            line.trim_end()
        );
        // Legend.
        let ly = MARGIN_T + 18.0 * i as f64 + 6.0;
        let _ = write!(
            svg,
            r##"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/>"##,
            MARGIN_L + 12.0,
            MARGIN_L + 40.0
        );
        let _ = write!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" fill="#111111">{}</text>"##,
            MARGIN_L + 46.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}
