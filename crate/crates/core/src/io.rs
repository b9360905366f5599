//! Serialization of fields, moduli and sections, plus a small SVG line-plot emitter.
//!
//! Binary field block (little-endian):
//!
//! ```text
//! magic "MALF" | version u32 | nx u32 | ny u32 | spacing f64 | origin f64 f64 | nx·ny f64 values, row-major
//! ```
//!
//! Invalid nodes are stored as NaN.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::Serialize;

use crate::bounds::Modulus;
use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};
use crate::sections::Section;

/// Version stamped into every JSON document and binary block.
pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MALF";

pub fn write_field<W: Write>(field: &ScalarField, mut out: W) -> Result<()> {
    let g = field.grid();
    let mut buf = Vec::with_capacity(40 + 8 * g.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.nx as u32).to_le_bytes());
    buf.extend_from_slice(&(g.ny as u32).to_le_bytes());
    for x in [g.spacing, g.origin[0], g.origin[1]] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for (v, &ok) in field.values().iter().zip(field.valid_mask()) {
        buf.extend_from_slice(&(if ok { *v } else { f64::NAN }).to_le_bytes());
    }
    Ok(out.write_all(&buf)?)
}

pub fn read_field<R: Read>(mut input: R) -> Result<ScalarField> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 40 || &bytes[..4] != MAGIC {
        return Err(Error::Parse { pos: 0, msg: "not a field block".into() });
    }
    let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let f64_at = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    if u32_at(4) != SCHEMA_VERSION {
        return Err(Error::Parse { pos: 4, msg: format!("unsupported block version {}", u32_at(4)) });
    }
    let (nx, ny) = (u32_at(8) as usize, u32_at(12) as usize);
    let grid = Grid::new([f64_at(24), f64_at(32)], f64_at(16), nx, ny)?;
    if bytes.len() != 40 + 8 * grid.len() {
        return Err(Error::Parse { pos: 40, msg: format!("expected {} values", grid.len()) });
    }
    let raw: Vec<f64> = (0..grid.len()).map(|k| f64_at(40 + 8 * k)).collect();
    let valid: Vec<bool> = raw.iter().map(|v| !v.is_nan()).collect();
    let values = raw.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect();
    ScalarField::new(grid, values, valid)
}

/// `x,y,value` rows for the valid nodes.
pub fn field_csv(field: &ScalarField) -> String {
    let mut s = String::from("x,y,value\n");
    for (_, p, v) in field.valid_nodes() {
        let _ = writeln!(s, "{},{},{}", p[0], p[1], v);
    }
    s
}

pub fn modulus_csv(m: &Modulus) -> String {
    let mut s = String::from("q,omega\n");
    for (q, w) in m.q().iter().zip(m.omega()) {
        let _ = writeln!(s, "{q},{w}");
    }
    s
}

pub fn modulus_from_csv(text: &str) -> Result<Modulus> {
    let (mut q, mut w) = (Vec::new(), Vec::new());
    let mut pos = 0;
    for line in text.lines() {
        let start = pos;
        pos += line.len() + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('q') || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(|c| c.trim().parse::<f64>());
        match (cols.next(), cols.next(), cols.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => {
                q.push(a);
                w.push(b);
            }
            _ => return Err(Error::Parse { pos: start, msg: format!("expected two numeric columns in {line:?}") }),
        }
    }
    Modulus::from_table(q, w)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    schema: u32,
    #[serde(flatten)]
    section: &'a Section,
    vertices: Vec<[f64; 2]>,
    diameter: f64,
}

/// JSON description of a section: plane data, normalizer, radii and the hull vertices.
pub fn section_sidecar(section: &Section) -> Result<String> {
    let doc = Sidecar { schema: SCHEMA_VERSION, section, vertices: section.boundary.vertices_2d(), diameter: section.diameter() };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Wraps a payload with the schema version and the seed that produced it.
#[derive(Serialize)]
pub struct Stamped<'a, T: Serialize> {
    pub schema: u32,
    pub kind: &'a str,
    pub seed: u64,
    pub data: &'a T,
}

pub fn stamped_json<T: Serialize>(kind: &str, seed: u64, data: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Stamped { schema: SCHEMA_VERSION, kind, seed, data })?)
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    pub dashed: bool,
}

#[derive(Clone, Debug)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: [f64; 4] = [70.0, 20.0, 40.0, 55.0]; // left, right, top, bottom
const COLORS: [&str; 4] = ["#1f5fa8", "#c0392b", "#2e8b57", "#7d3c98"];

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let (a, b) = (lo.log10().floor() as i32, hi.log10().ceil() as i32);
        return (a..=b).map(|e| e as f64).filter(|&e| e >= lo.log10() - 1e-9 && e <= hi.log10() + 1e-9).collect();
    }
    let span = hi - lo;
    let step = 10f64.powf((span / 5.0).log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * step).find(|s| span / s <= 6.0).unwrap_or(step * 10.0);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(t: f64, log: bool) -> String {
    if log {
        format!("1e{}", t as i32)
    } else if t.abs() >= 1e4 || (t != 0.0 && t.abs() < 1e-3) {
        format!("{t:.1e}")
    } else {
        format!("{}", (t * 1e6).round() / 1e6)
    }
}

impl LinePlot {
    pub fn to_svg(&self) -> Result<String> {
        let map = |v: f64, log: bool| if log { v.log10() } else { v };
        let pts: Vec<[f64; 2]> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| (!self.log_x || p[0] > 0.0) && (!self.log_y || p[1] > 0.0) && p[0].is_finite() && p[1].is_finite())
            .map(|p| [map(p[0], self.log_x), map(p[1], self.log_y)])
            .collect();
        if pts.is_empty() {
            return Err(Error::Domain("plot has no drawable points".into()));
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            (x0, x1, y0, y1) = (x0.min(p[0]), x1.max(p[0]), y0.min(p[1]), y1.max(p[1]));
        }
        let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a - 0.05 * (b - a), b + 0.05 * (b - a)) };
        let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));
        let (pw, ph) = (W - MARGIN[0] - MARGIN[1], H - MARGIN[2] - MARGIN[3]);
        let sx = |x: f64| MARGIN[0] + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN[2] + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#, MARGIN[0], MARGIN[2]);
        for t in ticks(if self.log_x { 10f64.powf(x0) } else { x0 }, if self.log_x { 10f64.powf(x1) } else { x1 }, self.log_x) {
            let x = sx(t);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, MARGIN[2] + ph, MARGIN[2] + ph + 5.0);
            let _ =
                writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, MARGIN[2] + ph + 18.0, fmt_tick(t, self.log_x));
        }
        for t in ticks(if self.log_y { 10f64.powf(y0) } else { y0 }, if self.log_y { 10f64.powf(y1) } else { y1 }, self.log_y) {
            let y = sy(t);
            let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black"/>"#, MARGIN[0] - 5.0, MARGIN[0]);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN[0] - 8.0, y + 4.0, fmt_tick(t, self.log_y));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN[0] + pw / 2.0, H - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            MARGIN[2] + ph / 2.0,
            MARGIN[2] + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let path: Vec<String> = series
                .points
                .iter()
                .filter(|p| (!self.log_x || p[0] > 0.0) && (!self.log_y || p[1] > 0.0) && p[0].is_finite() && p[1].is_finite())
                .map(|p| format!("{:.2},{:.2}", sx(map(p[0], self.log_x)), sy(map(p[1], self.log_y))))
                .collect();
            let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#, path.join(" "));
            for p in &path {
                let (cx, cy) = p.split_once(',').unwrap();
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
            }
            let ly = MARGIN[2] + 14.0 + 16.0 * k as f64;
            let lx = MARGIN[0] + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.8"{dash}/>"#, lx + 22.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&series.label));
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_block_round_trips_with_mask() {
        let g = Grid::covering([-1.0, -1.0], [1.0, 1.0], 9).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0] * p[1] - 0.25, |p| p[0] + p[1] < 0.5).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 40 + 8 * 81);
        let back = read_field(buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert!(read_field(&buf[..30]).is_err());
    }

    #[test]
    fn modulus_csv_parses_back() {
        let m = Modulus::from_table(vec![0.1, 0.2, 0.4], vec![0.01, 0.02, 0.03]).unwrap();
        let text = modulus_csv(&m);
        assert!(text.starts_with("q,omega\n"));
        let back = modulus_from_csv(&text).unwrap();
        assert_eq!(back.q(), m.q());
        assert_eq!(back.omega(), m.omega());
        assert!(matches!(modulus_from_csv("q,omega\n0.1,x\n"), Err(Error::Parse { pos: 8, .. })));
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let plot = LinePlot {
            title: "a < b".into(),
            x_label: "H".into(),
            y_label: "value".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series { label: "measured".into(), points: vec![[1.0, 2.0], [10.0, 30.0]], dashed: false },
                Series { label: "bound".into(), points: vec![[1.0, 5.0], [10.0, 500.0], [20.0, -1.0]], dashed: true },
            ],
        };
        let svg = plot.to_svg().unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b") && svg.contains("1e0"));
        assert!(LinePlot { series: vec![], ..plot }.to_svg().is_err());
    }
}
