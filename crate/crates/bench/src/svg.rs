//! Box plots as standalone SVG: quartile boxes, 1.5·IQR whiskers, outliers
//! as circles, and the group mean as a diamond. No timestamps or other
//! run-dependent text is embedded, so equal inputs give equal bytes.

use std::fmt::Write;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 70.0;
const Y_TICKS: usize = 5;

/// Five-number summary with 1.5·IQR whiskers.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Most extreme observations inside the 1.5·IQR fences.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    /// `None` for an empty sample. Non-finite values are ignored.
    pub fn new(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x));
        let whisker_low = inside.clone().fold(f64::INFINITY, f64::min);
        let whisker_high = inside.fold(f64::NEG_INFINITY, f64::max);
        Some(BoxStats {
            q1,
            median,
            q3,
            whisker_low,
            whisker_high,
            outliers: v.iter().copied().filter(|x| !(lo_fence..=hi_fence).contains(x)).collect(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders one box per `(label, values)` group, left to right. Groups with
/// no finite values get a label but no box.
pub fn box_plot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let stats: Vec<Option<BoxStats>> = groups.iter().map(|(_, v)| BoxStats::new(v)).collect();
    let (mut lo, mut hi) = stats
        .iter()
        .flatten()
        .flat_map(|s| [s.whisker_low, s.whisker_high].into_iter().chain(s.outliers.iter().copied()))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo, hi) = (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let y = |v: f64| MARGIN_TOP + plot_h * (hi - v) / (hi - lo);
    let slot = plot_w / groups.len().max(1) as f64;
    let box_w = (slot * 0.5).min(80.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(20 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );
    // Axes and horizontal grid.
    let _ = writeln!(
        s,
        r#"<path d="M{l:.2} {t:.2} V{b:.2} H{r:.2}" stroke="black" fill="none"/>"#,
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h,
        r = MARGIN_LEFT + plot_w
    );
    for i in 0..=Y_TICKS {
        let v = lo + (hi - lo) * i as f64 / Y_TICKS as f64;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            yy + 4.0,
            format_tick(v)
        );
    }
    for (i, ((label, values), st)) in groups.iter().zip(&stats).enumerate() {
        let cx = MARGIN_LEFT + slot * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<g class="box-group" data-group="{}" data-n="{}">"#,
            escape(label),
            values.len()
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + plot_h + 20.0,
            escape(label)
        );
        if let Some(b) = st {
            let (x0, x1) = (cx - box_w / 2.0, cx + box_w / 2.0);
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(b.whisker_high),
                y(b.q3)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(b.q1),
                y(b.whisker_low)
            );
            for w in [b.whisker_low, b.whisker_high] {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                    cx - box_w / 4.0,
                    y(w),
                    cx + box_w / 4.0,
                    y(w)
                );
            }
            let _ = writeln!(
                s,
                r##"<rect class="box" x="{x0:.2}" y="{:.2}" width="{box_w:.2}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
                y(b.q3),
                (y(b.q1) - y(b.q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line class="median" x1="{x0:.2}" y1="{m:.2}" x2="{x1:.2}" y2="{m:.2}" stroke="black" stroke-width="2"/>"#,
                m = y(b.median)
            );
            let (my, r) = (y(b.mean), 5.0);
            let _ = writeln!(
                s,
                r#"<path class="mean" d="M{cx:.2} {:.2} L{:.2} {my:.2} L{cx:.2} {:.2} L{:.2} {my:.2} Z" fill="white" stroke="black"/>"#,
                my - r,
                cx + r,
                my + r,
                cx - r
            );
            for o in &b.outliers {
                let _ = writeln!(
                    s,
                    r#"<circle class="outlier" cx="{cx:.2}" cy="{:.2}" r="3" fill="none" stroke="black"/>"#,
                    y(*o)
                );
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
