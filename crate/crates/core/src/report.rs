//! Benchmark report output: versioned CSV schemas plus self-contained SVG
//! line charts (no plotting stack; CSV stays the canonical record).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SWEEP_SCHEMA: &str = "pwsc-sweep-v1";
pub const RD_SCHEMA: &str = "pwsc-rd-v1";

/// One (distortion kind, level, metric) aggregate from a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kind: String,
    pub level: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// One codec configuration on the rate-distortion plane. `bpp` always comes
/// from real file bytes, never from the entropy estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub codec: String,
    pub config: String,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub lpips: f64,
    pub tiles: usize,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_field(v: &str) -> Result<()> {
    if v.contains([',', '"', '\n']) {
        return Err(Error::Data(format!(
            "CSV field {v:?} would need quoting; use plain identifiers"
        )));
    }
    Ok(())
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

fn parse_num(s: &str, what: &str, line: usize) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| {
            Error::Format(format!("line {line}: bad {what} value {s:?}"))
        }),
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut out = format!("# schema: {SWEEP_SCHEMA}\nkind,level,metric,mean,std,n\n");
    for r in rows {
        check_field(&r.kind)?;
        check_field(&r.metric)?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.kind,
            num(r.level),
            r.metric,
            num(r.mean),
            num(r.std),
            r.n
        )
        .unwrap();
    }
    Ok(out)
}

pub fn rd_csv(points: &[RdPoint]) -> Result<String> {
    let mut out = format!("# schema: {RD_SCHEMA}\ncodec,config,bpp,psnr,ms_ssim,lpips,tiles\n");
    for p in points {
        check_field(&p.codec)?;
        check_field(&p.config)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.codec,
            p.config,
            num(p.bpp),
            num(p.psnr),
            num(p.ms_ssim),
            num(p.lpips),
            p.tiles
        )
        .unwrap();
    }
    Ok(out)
}

/// Reads RD rows from our own output or an external import. The `tiles`
/// column is optional (external results have no tile count; 0 is stored).
pub fn read_rd_csv(path: &Path) -> Result<Vec<RdPoint>> {
    let text = std::fs::read_to_string(path)?;
    let mut header: Option<Vec<String>> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(cols) = &header else {
            header = Some(fields.iter().map(|s| s.to_ascii_lowercase()).collect());
            let cols = header.as_ref().unwrap();
            for need in ["codec", "config", "bpp", "psnr", "ms_ssim", "lpips"] {
                if !cols.iter().any(|c| c == need) {
                    return Err(Error::Format(format!(
                        "rd CSV is missing the {need} column"
                    )));
                }
            }
            continue;
        };
        if fields.len() != cols.len() {
            return Err(Error::Format(format!(
                "line {}: {} fields but {} header columns",
                i + 1,
                fields.len(),
                cols.len()
            )));
        }
        let get = |name: &str| cols.iter().position(|c| c == name).map(|j| fields[j]);
        let ln = i + 1;
        out.push(RdPoint {
            codec: get("codec").unwrap().to_string(),
            config: get("config").unwrap().to_string(),
            bpp: parse_num(get("bpp").unwrap(), "bpp", ln)?,
            psnr: parse_num(get("psnr").unwrap(), "psnr", ln)?,
            ms_ssim: parse_num(get("ms_ssim").unwrap(), "ms_ssim", ln)?,
            lpips: parse_num(get("lpips").unwrap(), "lpips", ln)?,
            tiles: match get("tiles") {
                Some(t) => t.parse().map_err(|_| {
                    Error::Format(format!("line {ln}: bad tiles value {t:?}"))
                })?,
                None => 0,
            },
        });
    }
    if header.is_none() {
        return Err(Error::Format("rd CSV has no header row".into()));
    }
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Panel<'a> {
    title: String,
    x_label: &'a str,
    series: &'a [Series],
    /// x position for a dashed red reference line with a dot.
    marker_x: Option<f64>,
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// One chart panel drawn into `out` at the given origin. Finite points only;
/// non-finite values (psnr of a lossless pair) are dropped from the polyline.
fn draw_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64, pw: f64, ph: f64) {
    let (ml, mr, mt, mb) = (52.0, 14.0, 30.0, 40.0);
    let (x0, y0) = (ox + ml, oy + mt);
    let (iw, ih) = (pw - ml - mr, ph - mt - mb);

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in panel.series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    if let Some(m) = panel.marker_x {
        xs.push(m);
    }
    let (mut xlo, mut xhi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut ylo, mut yhi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !xlo.is_finite() {
        (xlo, xhi) = (0.0, 1.0);
    }
    if !ylo.is_finite() {
        (ylo, yhi) = (0.0, 1.0);
    }
    if xhi - xlo < 1e-12 {
        (xlo, xhi) = (xlo - 0.5, xhi + 0.5);
    }
    if yhi - ylo < 1e-12 {
        (ylo, yhi) = (ylo - 0.5, yhi + 0.5);
    }
    let pad_x = (xhi - xlo) * 0.05;
    let pad_y = (yhi - ylo) * 0.05;
    let (xlo, xhi) = (xlo - pad_x, xhi + pad_x);
    let (ylo, yhi) = (ylo - pad_y, yhi + pad_y);
    let sx = |v: f64| x0 + (v - xlo) / (xhi - xlo) * iw;
    let sy = |v: f64| y0 + ih - (v - ylo) / (yhi - ylo) * ih;

    writeln!(
        out,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{iw:.1}" height="{ih:.1}" fill="none" stroke="#888"/>"##
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14" font-weight="bold">{}</text>"#,
        x0 + iw / 2.0,
        oy + 18.0,
        xml_escape(&panel.title)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
        x0 + iw / 2.0,
        oy + ph - 6.0,
        xml_escape(panel.x_label)
    )
    .unwrap();
    for t in nice_ticks(xlo + pad_x, xhi - pad_x) {
        writeln!(
            out,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#ccc"/>"##,
            sx(t),
            sy(ylo),
            sy(yhi)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
            sx(t),
            y0 + ih + 14.0,
            fmt_tick(t)
        )
        .unwrap();
    }
    for t in nice_ticks(ylo + pad_y, yhi - pad_y) {
        writeln!(
            out,
            r##"<line x1="{0:.1}" y1="{2:.1}" x2="{1:.1}" y2="{2:.1}" stroke="#ccc"/>"##,
            sx(xlo),
            sx(xhi),
            sy(t)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            x0 - 4.0,
            sy(t) + 3.5,
            fmt_tick(t)
        )
        .unwrap();
    }
    if let Some(m) = panel.marker_x {
        writeln!(
            out,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#d62728" stroke-dasharray="4 3" class="marker"/>"##,
            sx(m),
            sy(ylo),
            sy(yhi)
        )
        .unwrap();
        writeln!(
            out,
            r##"<circle cx="{:.1}" cy="{:.1}" r="4" fill="#d62728" class="marker"/>"##,
            sx(m),
            y0 + ih
        )
        .unwrap();
    }
    for (si, s) in panel.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> =
            pts.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        )
        .unwrap();
        for (x, y) in &pts {
            writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                sx(*x),
                sy(*y)
            )
            .unwrap();
        }
    }
}

fn legend(out: &mut String, names: &[String], x: f64, y: f64) {
    for (i, name) in names.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = y + 16.0 * i as f64;
        writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            x + 18.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            x + 24.0,
            ly + 3.5,
            xml_escape(name)
        )
        .unwrap();
    }
}

fn svg_document(width: f64, height: f64, body: &str) -> String {
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" "#,
            r#"viewBox="0 0 {w} {h}" font-family="sans-serif">"#,
            "\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{body}</svg>\n"
        ),
        w = width,
        h = height,
        body = body
    )
}

/// Rate-distortion chart: one panel per metric (PSNR up, MS-SSIM up, LPIPS
/// down), one polyline per codec, points ordered by bpp. `marker_bpp` draws
/// the red reference marker.
pub fn rd_svg(points: &[RdPoint], marker_bpp: Option<f64>) -> String {
    let mut codecs: Vec<String> = Vec::new();
    for p in points {
        if !codecs.contains(&p.codec) {
            codecs.push(p.codec.clone());
        }
    }
    let metric: [(&str, fn(&RdPoint) -> f64); 3] = [
        ("PSNR \u{2191}", |p| p.psnr),
        ("MS-SSIM \u{2191}", |p| p.ms_ssim),
        ("LPIPS \u{2193}", |p| p.lpips),
    ];
    let (pw, ph) = (380.0, 320.0);
    let mut body = String::new();
    for (mi, (title, get)) in metric.iter().enumerate() {
        let series: Vec<Series> = codecs
            .iter()
            .map(|c| Series {
                name: c.clone(),
                points: points
                    .iter()
                    .filter(|p| &p.codec == c)
                    .map(|p| (p.bpp, get(p)))
                    .collect(),
            })
            .collect();
        let panel = Panel {
            title: (*title).to_string(),
            x_label: "bpp",
            series: &series,
            marker_x: marker_bpp,
        };
        draw_panel(&mut body, &panel, mi as f64 * pw, 0.0, pw, ph);
    }
    legend(&mut body, &codecs, 60.0, ph + 14.0);
    svg_document(3.0 * pw, ph + 20.0 + 16.0 * codecs.len() as f64, &body)
}

/// Distortion sweep chart: one panel per (kind, metric) pair present in the
/// rows, mean value against level.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.kind.clone(), r.metric.clone());
        if !pairs.contains(&key) {
            pairs.push(key);
        }
    }
    let (pw, ph) = (380.0, 320.0);
    let cols = 3usize.min(pairs.len().max(1));
    let mut body = String::new();
    for (i, (kind, metric)) in pairs.iter().enumerate() {
        let series = [Series {
            name: kind.clone(),
            points: rows
                .iter()
                .filter(|r| &r.kind == kind && &r.metric == metric)
                .map(|r| (r.level, r.mean))
                .collect(),
        }];
        let panel = Panel {
            title: format!("{metric} vs {kind}"),
            x_label: "level",
            series: &series,
            marker_x: None,
        };
        let (row, col) = (i / cols, i % cols);
        draw_panel(&mut body, &panel, col as f64 * pw, row as f64 * ph, pw, ph);
    }
    let nrows = pairs.len().div_ceil(cols).max(1);
    svg_document(cols as f64 * pw, nrows as f64 * ph, &body)
}
