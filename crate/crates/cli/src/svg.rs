//! Native SVG rendering: heatmaps, marching-squares contour lines, and
//! line plots with optional logarithmic axes. No plotting dependencies.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

pub const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#e09f3e", "#6d597a", "#22223b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log10,
}

/// A named data series for line plots.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    x_scale: AxisScale,
    y_scale: AxisScale,
}

impl Frame {
    fn tx(&self, x: f64) -> f64 {
        let (x, lo, hi) = match self.x_scale {
            AxisScale::Linear => (x, self.x_min, self.x_max),
            AxisScale::Log10 => (x.log10(), self.x_min.log10(), self.x_max.log10()),
        };
        MARGIN_L + (x - lo) / (hi - lo).max(f64::MIN_POSITIVE) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn ty(&self, y: f64) -> f64 {
        let (y, lo, hi) = match self.y_scale {
            AxisScale::Linear => (y, self.y_min, self.y_max),
            AxisScale::Log10 => (y.log10(), self.y_min.log10(), self.y_max.log10()),
        };
        HEIGHT - MARGIN_B - (y - lo) / (hi - lo).max(f64::MIN_POSITIVE) * (HEIGHT - MARGIN_T - MARGIN_B)
    }

    fn ticks(lo: f64, hi: f64, scale: AxisScale) -> Vec<f64> {
        match scale {
            AxisScale::Linear => (0..=4)
                .map(|i| lo + (hi - lo) * i as f64 / 4.0)
                .collect(),
            AxisScale::Log10 => {
                let (a, b) = (lo.log10().ceil() as i32, hi.log10().floor() as i32);
                if b < a {
                    vec![lo, hi]
                } else {
                    (a..=b).map(|e| 10f64.powi(e)).collect()
                }
            }
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn document(title: &str, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{tx}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{title}</text>\n{body}</svg>\n",
        tx = WIDTH / 2.0,
        title = escape(title),
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
    out.push_str(&format!(
        "<rect x=\"{x0}\" y=\"{y1}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#444\"/>\n",
        w = x1 - x0,
        h = y0 - y1
    ));
    for t in Frame::ticks(frame.x_min, frame.x_max, frame.x_scale) {
        let px = frame.tx(t);
        out.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"#444\"/>\n",
            y0 + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            fmt_tick(t)
        ));
    }
    for t in Frame::ticks(frame.y_min, frame.y_max, frame.y_scale) {
        let py = frame.ty(t);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"#444\"/>\n",
            x0 - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            py + 4.0,
            fmt_tick(t)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));
    out
}

/// Line plot with optional log axes. Non-finite or non-positive (on log
/// axes) points are dropped.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    x_scale: AxisScale,
    y_scale: AxisScale,
) -> String {
    let keep = |&(x, y): &(f64, f64)| {
        x.is_finite()
            && y.is_finite()
            && (x_scale == AxisScale::Linear || x > 0.0)
            && (y_scale == AxisScale::Linear || y > 0.0)
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for p in s.points.iter().filter(|p| keep(p)) {
            xs.push(p.0);
            ys.push(p.1);
        }
    }
    let (x_min, x_max) = bounds(&xs, x_scale);
    let (y_min, y_max) = bounds(&ys, y_scale);
    let frame = Frame {
        x_min,
        x_max,
        y_min,
        y_max,
        x_scale,
        y_scale,
    };
    let mut body = axes(&frame, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| keep(p))
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.tx(x), frame.ty(y)))
            .collect();
        if pts.len() >= 2 {
            body.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        body.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"14\" height=\"3\" fill=\"{color}\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>\n",
            x = MARGIN_L + 10.0,
            y = MARGIN_T + 8.0 + 16.0 * i as f64,
            tx = MARGIN_L + 28.0,
            ty = MARGIN_T + 13.0 + 16.0 * i as f64,
            label = escape(s.label),
        ));
    }
    document(title, &body)
}

fn bounds(values: &[f64], scale: AxisScale) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    if scale == AxisScale::Log10 {
        (lo, hi)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Blue-to-red color ramp for t in [0, 1].
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    // Dark blue -> light yellow -> dark red.
    let (r, g, b) = if t < 0.5 {
        let s = t * 2.0;
        (
            lerp_pair(33.0, 250.0, s),
            lerp_pair(70.0, 240.0, s),
            lerp_pair(160.0, 160.0, s),
        )
    } else {
        let s = (t - 0.5) * 2.0;
        (
            lerp_pair(250.0, 178.0, s),
            lerp_pair(240.0, 34.0, s),
            lerp_pair(160.0, 34.0, s),
        )
    };
    let _ = lerp;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn lerp_pair(a: f64, b: f64, t: f64) -> u8 {
    (a + (b - a) * t).round().clamp(0.0, 255.0) as u8
}

/// Heatmap of a row-major grid (`index = i2 * axis1.len() + i1`), with
/// optional contour lines and overlaid trajectories in data coordinates.
pub fn heatmap(
    title: &str,
    x_label: &str,
    y_label: &str,
    axis1: &[f64],
    axis2: &[f64],
    values: &[f64],
    log_color: bool,
    contour_levels: &[f64],
    trajectories: &[Series],
) -> String {
    assert_eq!(values.len(), axis1.len() * axis2.len());
    let frame = Frame {
        x_min: axis1[0],
        x_max: *axis1.last().unwrap(),
        y_min: axis2[0],
        y_max: *axis2.last().unwrap(),
        x_scale: AxisScale::Linear,
        y_scale: AxisScale::Linear,
    };
    let transform = |v: f64| if log_color { (v.max(1e-300)).ln() } else { v };
    let finite: Vec<f64> = values.iter().map(|&v| transform(v)).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &finite {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo >= hi {
        hi = lo + 1.0;
    }
    let mut body = String::new();
    let n1 = axis1.len();
    let n2 = axis2.len();
    let cell_w = (WIDTH - MARGIN_L - MARGIN_R) / n1 as f64;
    let cell_h = (HEIGHT - MARGIN_T - MARGIN_B) / n2 as f64;
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            let v = finite[i2 * n1 + i1];
            let t = (v - lo) / (hi - lo);
            let x = MARGIN_L + i1 as f64 * cell_w;
            // axis2 increases upward.
            let y = HEIGHT - MARGIN_B - (i2 + 1) as f64 * cell_h;
            body.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{c}\"/>\n",
                w = cell_w + 0.5,
                h = cell_h + 0.5,
                c = ramp(t),
            ));
        }
    }
    for (li, &level) in contour_levels.iter().enumerate() {
        let color = if li % 2 == 0 { "#222" } else { "#555" };
        for seg in marching_squares(axis1, axis2, values, level) {
            body.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"0.8\"/>\n",
                frame.tx(seg.0 .0),
                frame.ty(seg.0 .1),
                frame.tx(seg.1 .0),
                frame.ty(seg.1 .1),
            ));
        }
    }
    for (i, s) in trajectories.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.tx(x), frame.ty(y)))
            .collect();
        if pts.len() >= 2 {
            body.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                pts.join(" ")
            ));
        }
        body.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"14\" height=\"3\" fill=\"{color}\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#111\">{label}</text>\n",
            x = MARGIN_L + 10.0,
            y = MARGIN_T + 8.0 + 16.0 * i as f64,
            tx = MARGIN_L + 28.0,
            ty = MARGIN_T + 13.0 + 16.0 * i as f64,
            label = escape(s.label),
        ));
    }
    body.push_str(&axes(&frame, x_label, y_label));
    document(title, &body)
}

type Segment = ((f64, f64), (f64, f64));

/// Marching squares: iso-level line segments of a row-major grid.
pub fn marching_squares(axis1: &[f64], axis2: &[f64], values: &[f64], level: f64) -> Vec<Segment> {
    let n1 = axis1.len();
    let n2 = axis2.len();
    let v = |i1: usize, i2: usize| values[i2 * n1 + i1];
    let mut segments = Vec::new();
    for i2 in 0..n2.saturating_sub(1) {
        for i1 in 0..n1.saturating_sub(1) {
            // Corner values, counter-clockwise from bottom-left.
            let bl = v(i1, i2);
            let br = v(i1 + 1, i2);
            let tr = v(i1 + 1, i2 + 1);
            let tl = v(i1, i2 + 1);
            if !(bl.is_finite() && br.is_finite() && tr.is_finite() && tl.is_finite()) {
                continue;
            }
            let case = (usize::from(bl > level))
                | (usize::from(br > level) << 1)
                | (usize::from(tr > level) << 2)
                | (usize::from(tl > level) << 3);
            if case == 0 || case == 15 {
                continue;
            }
            let interp = |a: f64, b: f64| (level - a) / (b - a);
            let (x0, x1) = (axis1[i1], axis1[i1 + 1]);
            let (y0, y1) = (axis2[i2], axis2[i2 + 1]);
            let bottom = || (x0 + interp(bl, br) * (x1 - x0), y0);
            let right = || (x1, y0 + interp(br, tr) * (y1 - y0));
            let top = || (x0 + interp(tl, tr) * (x1 - x0), y1);
            let left = || (x0, y0 + interp(bl, tl) * (y1 - y0));
            match case {
                1 | 14 => segments.push((left(), bottom())),
                2 | 13 => segments.push((bottom(), right())),
                3 | 12 => segments.push((left(), right())),
                4 | 11 => segments.push((right(), top())),
                6 | 9 => segments.push((bottom(), top())),
                7 | 8 => segments.push((left(), top())),
                5 => {
                    // Saddle: resolve by the cell-center average.
                    if (bl + br + tr + tl) / 4.0 > level {
                        segments.push((left(), top()));
                        segments.push((bottom(), right()));
                    } else {
                        segments.push((left(), bottom()));
                        segments.push((right(), top()));
                    }
                }
                10 => {
                    if (bl + br + tr + tl) / 4.0 > level {
                        segments.push((left(), bottom()));
                        segments.push((right(), top()));
                    } else {
                        segments.push((left(), top()));
                        segments.push((bottom(), right()));
                    }
                }
                _ => unreachable!("cases 0 and 15 filtered above"),
            }
        }
    }
    segments
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marching_squares_circle() {
        // f = x^2 + y^2 on [-2, 2]^2; level 1 segments all lie near the
        // unit circle.
        let axis: Vec<f64> = (0..81).map(|i| -2.0 + 4.0 * i as f64 / 80.0).collect();
        let mut values = Vec::new();
        for &y in &axis {
            for &x in &axis {
                values.push(x * x + y * y);
            }
        }
        let segs = marching_squares(&axis, &axis, &values, 1.0);
        assert!(segs.len() > 40);
        for (a, b) in segs {
            for p in [a, b] {
                let r = (p.0 * p.0 + p.1 * p.1).sqrt();
                assert!((r - 1.0).abs() < 0.05, "point ({}, {}) off circle", p.0, p.1);
            }
        }
    }

    #[test]
    fn marching_squares_no_crossing_no_segments() {
        let axis = vec![0.0, 1.0];
        let values = vec![0.0, 0.1, 0.2, 0.3];
        assert!(marching_squares(&axis, &axis, &values, 5.0).is_empty());
    }

    #[test]
    fn line_plot_is_valid_svg_shell() {
        let svg = line_plot(
            "t",
            "x",
            "y",
            &[Series {
                label: "a",
                points: vec![(1.0, 1.0), (10.0, 0.1), (100.0, 0.01)],
            }],
            AxisScale::Log10,
            AxisScale::Log10,
        );
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains("<polyline"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_renders_all_cells() {
        let axis1 = vec![0.0, 1.0, 2.0];
        let axis2 = vec![0.0, 1.0];
        let values = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let svg = heatmap("h", "a", "b", &axis1, &axis2, &values, false, &[], &[]);
        assert_eq!(svg.matches("<rect").count(), 6 + 2); // cells + background + axes box
    }
}
