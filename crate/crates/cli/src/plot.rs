//! Static SVG line plots from CSV curves.
//!
//! The first column is the abscissa; every further column becomes one
//! polyline. Output depends only on the input, so plots diff cleanly.

use std::fmt::Write;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PlotError {
    #[error("a curve needs at least two points (got {0})")]
    TooFewPoints(usize),
    #[error("log scale needs positive data (column `{column}` has {value})")]
    NonPositive { column: String, value: f64 },
    #[error("bad CSV: {0}")]
    Csv(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub loglog: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Header names and numeric rows. Empty cells and `null` become NaN and are
/// skipped when drawing.
pub fn parse_csv(csv: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), PlotError> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| PlotError::Csv("empty input".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 2 {
        return Err(PlotError::Csv("need an x column and at least one y column".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| match s.trim() {
                "" | "null" | "NaN" => Ok(f64::NAN),
                t => t.parse::<f64>().map_err(|_| PlotError::Csv(format!("row {}: `{t}` is not a number", i + 1))),
            })
            .collect::<Result<_, _>>()?;
        if row.len() != header.len() {
            return Err(PlotError::Csv(format!("row {} has {} fields, expected {}", i + 1, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn label(v: f64, log: bool) -> String {
    if log {
        format!("{:.3e}", 10f64.powf(v))
    } else {
        format!("{v:.4}")
    }
}

pub fn emit_plot(csv: &str, style: &PlotStyle) -> Result<String, PlotError> {
    let (header, rows) = parse_csv(csv)?;
    if rows.len() < 2 {
        return Err(PlotError::TooFewPoints(rows.len()));
    }
    let tf = |v: f64, col: usize| -> Result<f64, PlotError> {
        if !style.loglog || v.is_nan() {
            return Ok(v);
        }
        if v <= 0.0 {
            return Err(PlotError::NonPositive {
                column: header[col].clone(),
                value: v,
            });
        }
        Ok(v.log10())
    };
    let mut data = vec![Vec::with_capacity(rows.len()); header.len()];
    for row in &rows {
        for (c, v) in row.iter().enumerate() {
            data[c].push(tf(*v, c)?);
        }
    }
    let finite = |c: &Vec<f64>| c.iter().copied().filter(|v| v.is_finite()).collect::<Vec<_>>();
    let (x0, x1) = range(finite(&data[0]).into_iter());
    let (y0, y1) = range(data[1..].iter().flat_map(finite));
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(PlotError::TooFewPoints(0));
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(&style.title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l:.2} {t:.2} L{l:.2} {b:.2} L{r:.2} {b:.2}" stroke="black" fill="none"/>"#
    );
    let scale = if style.loglog { " (log)" } else { "" };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}{scale}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(&header[0])
    );
    for (v, x, anchor) in [(x0, l, "start"), (x1, r, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{}</text>"#,
            b + 14.0,
            label(v, style.loglog)
        );
    }
    for (v, y) in [(y0, b), (y1, t)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
            l - 4.0,
            label(v, style.loglog)
        );
    }
    for (c, col) in data.iter().enumerate().skip(1) {
        let pts: Vec<String> = data[0]
            .iter()
            .zip(col)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let color = COLORS[(c - 1) % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            r - 120.0,
            t + 14.0 * c as f64,
            escape(&header[c])
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_give_one_polyline() {
        let svg = emit_plot("x,y\n0,1\n1,2\n", &PlotStyle::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn one_point_is_refused() {
        assert_eq!(emit_plot("x,y\n0,1\n", &PlotStyle::default()), Err(PlotError::TooFewPoints(1)));
    }

    #[test]
    fn log_scale_needs_positive_values() {
        let style = PlotStyle {
            title: "t".into(),
            loglog: true,
        };
        assert!(emit_plot("h,err\n0.1,1e-3\n0.05,2.5e-4\n", &style).unwrap().contains("(log)"));
        assert!(matches!(
            emit_plot("h,err\n0.1,0\n0.05,1\n", &style),
            Err(PlotError::NonPositive { .. })
        ));
    }

    #[test]
    fn missing_values_are_skipped() {
        let svg = emit_plot("x,a,b\n1,2,\n2,3,4\n3,4,5\n", &PlotStyle::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(emit_plot("x,y\n1,a\n2,3\n", &PlotStyle::default()).is_err());
    }

    #[test]
    fn output_is_deterministic() {
        let csv = "r,q\n0.25,0.4\n0.125,0.19\n0.0625,0.09\n";
        let style = PlotStyle {
            title: "quotient".into(),
            loglog: true,
        };
        assert_eq!(emit_plot(csv, &style).unwrap(), emit_plot(csv, &style).unwrap());
    }
}
