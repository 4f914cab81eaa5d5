//! Static SVG figures: trajectory timeseries (angles, velocities, torques,
//! controller band) and robustness bar charts.
//!
//! Output is a pure function of the input with fixed-precision coordinates,
//! so re-running a figure produces byte-identical files.

use crate::eval::RobustnessReport;
use crate::traj::{ControllerTag, Trajectory};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("need at least two samples to draw a timeseries")]
    TooShort,
    #[error("empty robustness report")]
    EmptyReport,
    #[error("non-finite value in plotted data")]
    NonFinite,
}

const WIDTH: f64 = 900.0;
const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 18.0;
const PANEL_H: f64 = 170.0;
const PANEL_GAP: f64 = 14.0;
const BAND_H: f64 = 34.0;
const TITLE_H: f64 = 30.0;
const FOOT_H: f64 = 34.0;

const C_BLUE: &str = "#1f77b4";
const C_RED: &str = "#d62728";
const C_ORANGE: &str = "#ff7f0e";
const C_GREEN: &str = "#2ca02c";
const C_PURPLE: &str = "#9467bd";
const C_GRID: &str = "#d8d8d8";
const C_AXIS: &str = "#444444";
const KIND_COLORS: [&str; 5] = [C_BLUE, C_ORANGE, C_GREEN, C_RED, C_PURPLE];

/// Pixel rectangle a panel draws into.
#[derive(Clone, Copy)]
struct Frame {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

/// Affine map from a data interval onto a pixel interval.
#[derive(Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn new(d0: f64, d1: f64, p0: f64, p1: f64) -> Self {
        Self { d0, d1, p0, p1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Data range padded so lines never hug the frame; degenerate ranges get a
/// unit of headroom.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.06 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Round a raw step to the nearest 1/2/5 decade multiple.
fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.abs().log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step((hi - lo) / 5.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        // snap near-zero ticks so labels read 0 rather than 1.2e-16
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor() as i32).clamp(0, 6) as usize
    };
    format!("{v:.decimals$}")
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, size: u32, body: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
        px(x),
        px(y),
        escape(body)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
    let mut coords = String::new();
    for (x, y) in pts {
        let _ = write!(coords, "{},{} ", px(*x), px(*y));
    }
    let dash = if dashed { r#" stroke-dasharray="5 3""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.4"{dash} points="{}"/>"#,
        coords.trim_end()
    );
}

fn rect(out: &mut String, x: f64, y: f64, w: f64, h: f64, fill: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
        px(x),
        px(y),
        px(w),
        px(h)
    );
}

/// Frame border, horizontal gridlines, and y tick labels.
fn draw_axes(out: &mut String, f: Frame, ys: &Scale, label: &str) {
    let tick_vals = ticks(ys.d0, ys.d1);
    let step = nice_step((ys.d1 - ys.d0) / 5.0);
    for &tv in &tick_vals {
        let y = ys.map(tv);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{C_GRID}" stroke-width="1"/>"#,
            px(f.x),
            px(y),
            px(f.x + f.w),
            px(y)
        );
        text(out, f.x - 6.0, y + 3.5, "end", 10, &tick_label(tv, step));
    }
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{C_AXIS}" stroke-width="1"/>"#,
        px(f.x),
        px(f.y),
        px(f.w),
        px(f.h)
    );
    text(out, f.x + 6.0, f.y + 13.0, "start", 11, label);
}

fn legend(out: &mut String, f: Frame, entries: &[(&str, &str, bool)]) {
    let mut x = f.x + f.w - 8.0;
    for (name, color, dashed) in entries.iter().rev() {
        let tw = 6.5 * name.len() as f64;
        text(out, x, f.y + 13.0, "end", 10, name);
        let dash = if *dashed { r#" stroke-dasharray="5 3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"{dash}/>"#,
            px(x - tw - 22.0),
            px(f.y + 9.5),
            px(x - tw - 4.0),
            px(f.y + 9.5)
        );
        x -= tw + 34.0;
    }
}

fn series<'a>(
    times: &'a [f64],
    xs: &'a Scale,
    ys: &'a Scale,
    f: impl Fn(usize) -> f64 + 'a,
) -> Vec<(f64, f64)> {
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| (xs.map(t), ys.map(f(i))))
        .collect()
}

/// Render a rollout as stacked angle/velocity/torque panels with a
/// controller band underneath. Commanded torques are dashed, applied solid.
pub fn plot_trajectory(traj: &Trajectory, title: &str) -> Result<String, PlotError> {
    if traj.len() < 2 {
        return Err(PlotError::TooShort);
    }
    let finite = traj
        .times
        .iter()
        .all(|v| v.is_finite())
        && traj.states.iter().all(|s| s.is_finite())
        && traj
            .tau_cmd
            .iter()
            .chain(traj.tau_app.iter())
            .all(|t| t[0].is_finite() && t[1].is_finite());
    if !finite {
        return Err(PlotError::NonFinite);
    }

    let height = TITLE_H + 3.0 * (PANEL_H + PANEL_GAP) + BAND_H + FOOT_H;
    let mut out = svg_open(height);
    text(&mut out, WIDTH / 2.0, 19.0, "middle", 13, title);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let t0 = traj.times[0];
    let t1 = *traj.times.last().unwrap();
    let xs = Scale::new(t0, t1, MARGIN_LEFT, MARGIN_LEFT + plot_w);

    let panel = |i: usize| Frame {
        x: MARGIN_LEFT,
        y: TITLE_H + i as f64 * (PANEL_H + PANEL_GAP),
        w: plot_w,
        h: PANEL_H,
    };

    // angles
    {
        let f = panel(0);
        let (lo, hi) = padded_range(traj.states.iter().flat_map(|s| [s.p1, s.p2]));
        let ys = Scale::new(lo, hi, f.y + f.h, f.y);
        draw_axes(&mut out, f, &ys, "angle (rad)");
        polyline(&mut out, &series(&traj.times, &xs, &ys, |i| traj.states[i].p1), C_BLUE, false);
        polyline(&mut out, &series(&traj.times, &xs, &ys, |i| traj.states[i].p2), C_RED, false);
        legend(&mut out, f, &[("joint 1", C_BLUE, false), ("joint 2", C_RED, false)]);
    }

    // velocities
    {
        let f = panel(1);
        let (lo, hi) = padded_range(traj.states.iter().flat_map(|s| [s.v1, s.v2]));
        let ys = Scale::new(lo, hi, f.y + f.h, f.y);
        draw_axes(&mut out, f, &ys, "velocity (rad/s)");
        polyline(&mut out, &series(&traj.times, &xs, &ys, |i| traj.states[i].v1), C_BLUE, false);
        polyline(&mut out, &series(&traj.times, &xs, &ys, |i| traj.states[i].v2), C_RED, false);
        legend(&mut out, f, &[("joint 1", C_BLUE, false), ("joint 2", C_RED, false)]);
    }

    // torques
    {
        let f = panel(2);
        let (lo, hi) = padded_range(
            traj.tau_cmd
                .iter()
                .chain(traj.tau_app.iter())
                .flat_map(|t| [t[0], t[1]]),
        );
        let ys = Scale::new(lo, hi, f.y + f.h, f.y);
        draw_axes(&mut out, f, &ys, "torque (Nm)");
        polyline(&mut out, &series(&traj.times, &xs, &ys, |i| traj.tau_cmd[i][0]), C_BLUE, true);
        polyline(&mut out, &series(&traj.times, &xs, &ys, |i| traj.tau_cmd[i][1]), C_RED, true);
        polyline(&mut out, &series(&traj.times, &xs, &ys, |i| traj.tau_app[i][0]), C_BLUE, false);
        polyline(&mut out, &series(&traj.times, &xs, &ys, |i| traj.tau_app[i][1]), C_RED, false);
        legend(
            &mut out,
            f,
            &[
                ("cmd 1", C_BLUE, true),
                ("cmd 2", C_RED, true),
                ("app 1", C_BLUE, false),
                ("app 2", C_RED, false),
            ],
        );
    }

    // controller band: one rectangle per contiguous run of the same tag
    {
        let y = TITLE_H + 3.0 * (PANEL_H + PANEL_GAP);
        let mut start = 0usize;
        for i in 1..=traj.len() {
            if i == traj.len() || traj.tags[i] != traj.tags[start] {
                let x0 = xs.map(traj.times[start]);
                let x1 = if i == traj.len() { xs.map(t1) } else { xs.map(traj.times[i]) };
                let color = match traj.tags[start] {
                    ControllerTag::Sac => C_ORANGE,
                    ControllerTag::Lqr => C_GREEN,
                };
                rect(&mut out, x0, y, (x1 - x0).max(0.5), BAND_H, color);
                start = i;
            }
        }
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{C_AXIS}" stroke-width="1"/>"#,
            px(MARGIN_LEFT),
            px(y),
            px(plot_w),
            px(BAND_H)
        );
        text(&mut out, MARGIN_LEFT - 6.0, y + BAND_H / 2.0 + 3.5, "end", 10, "controller");
        legend(
            &mut out,
            Frame { x: MARGIN_LEFT, y: y + BAND_H, w: plot_w, h: 0.0 },
            &[("swing-up policy", C_ORANGE, false), ("balance LQR", C_GREEN, false)],
        );

        // shared time axis under the band
        let tick_vals = ticks(t0, t1);
        let step = nice_step((t1 - t0) / 5.0);
        for &tv in &tick_vals {
            let x = xs.map(tv);
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{C_AXIS}" stroke-width="1"/>"#,
                px(x),
                px(y + BAND_H),
                px(x),
                px(y + BAND_H + 4.0)
            );
            text(&mut out, x, y + BAND_H + 16.0, "middle", 10, &tick_label(tv, step));
        }
        text(&mut out, MARGIN_LEFT + plot_w / 2.0, y + BAND_H + 30.0, "middle", 11, "time (s)");
    }

    out.push_str("</svg>\n");
    Ok(out)
}

/// Render success fractions as grouped bars, one group per perturbation
/// family, with a dashed line at the overall mean.
pub fn plot_robustness(report: &RobustnessReport, title: &str) -> Result<String, PlotError> {
    if report.kinds.is_empty() || report.kinds.iter().any(|k| k.levels.is_empty()) {
        return Err(PlotError::EmptyReport);
    }
    let height = 330.0;
    let mut out = svg_open(height);
    text(&mut out, WIDTH / 2.0, 19.0, "middle", 13, title);

    let f = Frame {
        x: MARGIN_LEFT,
        y: TITLE_H,
        w: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        h: height - TITLE_H - 50.0,
    };
    let ys = Scale::new(0.0, 1.0, f.y + f.h, f.y);
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let y = ys.map(v);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{C_GRID}" stroke-width="1"/>"#,
            px(f.x),
            px(y),
            px(f.x + f.w),
            px(y)
        );
        text(&mut out, f.x - 6.0, y + 3.5, "end", 10, &format!("{v:.2}"));
    }

    let n_groups = report.kinds.len();
    let group_w = f.w / n_groups as f64;
    for (gi, k) in report.kinds.iter().enumerate() {
        let color = KIND_COLORS[gi % KIND_COLORS.len()];
        let gx = f.x + gi as f64 * group_w;
        let inner_w = group_w * 0.84;
        let bar_w = inner_w / k.levels.len() as f64;
        for (bi, &ok) in k.successes.iter().enumerate() {
            let frac = if ok { 1.0 } else { 0.0 };
            let x = gx + group_w * 0.08 + bi as f64 * bar_w;
            let y = ys.map(frac);
            rect(&mut out, x, y, (bar_w * 0.9).max(0.5), ys.map(0.0) - y, color);
        }
        text(
            &mut out,
            gx + group_w / 2.0,
            f.y + f.h + 16.0,
            "middle",
            10,
            k.kind.name(),
        );
        text(
            &mut out,
            gx + group_w / 2.0,
            f.y + f.h + 30.0,
            "middle",
            10,
            &format!("{:.2}", k.fraction),
        );
    }

    let oy = ys.map(report.overall);
    let _ = writeln!(
        out,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{C_AXIS}" stroke-width="1.4" stroke-dasharray="6 4"/>"#,
        px(f.x),
        px(oy),
        px(f.x + f.w),
        px(oy)
    );
    text(
        &mut out,
        f.x + f.w - 6.0,
        (oy - 5.0).max(f.y + 11.0),
        "end",
        11,
        &format!("overall {:.3}", report.overall),
    );
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{C_AXIS}" stroke-width="1"/>"#,
        px(f.x),
        px(f.y),
        px(f.w),
        px(f.h)
    );
    text(&mut out, f.x + 6.0, f.y + 13.0, "start", 11, "success fraction");

    out.push_str("</svg>\n");
    Ok(out)
}

fn svg_open(height: f64) -> String {
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="Helvetica, Arial, sans-serif">"#,
        w = px(WIDTH),
        h = px(height)
    );
    out.push('\n');
    rect(&mut out, 0.0, 0.0, WIDTH, height, "#ffffff");
    out
}
