//! Hand-rolled SVG line chart of mean coverage curves per method.

use std::collections::BTreeMap;

use crate::selectors::Method;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 120.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

fn color(method: Method) -> &'static str {
    match method {
        Method::Rd => "#7f7f7f",
        Method::Ae => "#1f77b4",
        Method::If => "#2ca02c",
        Method::Te => "#ff7f0e",
        Method::Lstm => "#d62728",
    }
}

/// Renders mean coverage (y, percent) against simulated tests (x) per
/// method. `curves` maps method -> [(tests, mean coverage)] sorted by tests.
pub fn render_curves(curves: &BTreeMap<Method, Vec<(u64, f64)>>, title: &str) -> String {
    let x_max = curves
        .values()
        .filter_map(|c| c.last().map(|(t, _)| *t))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let y_min: f64 = curves
        .values()
        .filter_map(|c| c.first().map(|(_, c0)| *c0))
        .fold(100.0, f64::min)
        .floor()
        .max(0.0);
    let y_max = 100.0;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |t: f64| MARGIN_L + t / x_max * plot_w;
    let sy = |c: f64| MARGIN_T + (y_max - c) / (y_max - y_min).max(1e-9) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));

    // Axes.
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    for i in 0..=5 {
        let t = x_max * i as f64 / 5.0;
        let x = sx(t);
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 20.0,
            t.round() as u64
        ));
        let c = y_min + (y_max - y_min) * i as f64 / 5.0;
        let y = sy(c);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{MARGIN_L}\" y2=\"{y}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{c:.1}</text>\n",
            MARGIN_L - 9.0,
            y + 4.0
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">simulated tests</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">coverage %</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    // Curves and legend.
    for (i, (method, points)) in curves.iter().enumerate() {
        if points.is_empty() {
            continue;
        }
        let path: Vec<String> =
            points.iter().map(|(t, c)| format!("{:.2},{:.2}", sx(*t as f64), sy(*c))).collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
            color(*method),
            path.join(" ")
        ));
        let ly = MARGIN_T + 16.0 + i as f64 * 20.0;
        let lx = WIDTH - MARGIN_R + 12.0;
        out.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            lx + 24.0,
            color(*method)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
            lx + 30.0,
            ly + 4.0,
            method.as_str()
        ));
    }
    out.push_str("</svg>\n");
    out
}
