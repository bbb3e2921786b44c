//! CSV, SVG and JSON artifacts.
//!
//! Floating-point values are written in `{:.16e}` form (17 significant
//! digits), which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::data::PairedSample;
use crate::error::{Error, Result};

use super::sweep::{RateFit, SweepResult, SweepRow};

pub const CSV_HEADER: [&str; 8] = [
    "pipeline",
    "n",
    "seed",
    "excess_risk",
    "teacher_excess_risk",
    "agreement_sq",
    "reg_weight",
    "wall_ms",
];

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

/// Writes one line per row, rows in their stored order.
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    write_rows(&result.rows, path)
}

pub fn write_rows(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.pipeline.clone(),
            r.n.to_string(),
            r.seed.to_string(),
            opt(r.excess_risk),
            opt(r.teacher_excess_risk),
            opt(r.agreement_sq),
            opt(r.reg_weight),
            r.wall_ms.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidInput(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    let bad = |field: &str, value: &str| {
        Error::InvalidInput(format!(
            "{}: cannot parse {field} from {value:?}",
            path.display()
        ))
    };
    let float = |field: &str, s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>().map(Some).map_err(|_| bad(field, s))
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record.map_err(|e| csv_error(path, e))?;
        let int = |i: usize| {
            rec[i]
                .parse::<u64>()
                .map_err(|_| bad(CSV_HEADER[i], &rec[i]))
        };
        rows.push(SweepRow {
            pipeline: rec[0].to_string(),
            n: int(1)? as usize,
            seed: int(2)? as usize,
            excess_risk: float(CSV_HEADER[3], &rec[3])?,
            teacher_excess_risk: float(CSV_HEADER[4], &rec[4])?,
            agreement_sq: float(CSV_HEADER[5], &rec[5])?,
            reg_weight: float(CSV_HEADER[6], &rec[6])?,
            wall_ms: int(7)?,
        });
    }
    Ok(rows)
}

/// Exports paired samples as `x1..x{dx}, z1..z{dz}, y`.
pub fn write_samples(samples: &[PairedSample], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let (dx, dz) = samples.first().map_or((0, 0), |s| (s.x.len(), s.z.len()));
    let mut header: Vec<String> = (1..=dx).map(|i| format!("x{i}")).collect();
    header.extend((1..=dz).map(|i| format!("z{i}")));
    header.push("y".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for s in samples {
        let mut rec: Vec<String> =
            s.x.iter()
                .chain(s.z.iter())
                .map(|&v| format_f64(v))
                .collect();
        rec.push(opt(s.y));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// serde_json formatter that prints every float in `{:.16e}` form.
struct ExactFloats(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            writer.write_all(format_f64(value).as_bytes())
        } else {
            writer.write_all(b"null")
        }
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with exact float formatting and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        ExactFloats(serde_json::ser::PrettyFormatter::new()),
    );
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Numerical(format!("cannot serialize artifact: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary<'a> {
    pub pipeline: &'a str,
    /// Grids, seeds and bands are choices of this harness, not of the underlying analysis.
    pub protocol: &'static str,
    pub rate_fit: Option<&'a RateFit>,
    pub rate_fit_error: Option<String>,
    pub slope_band: Option<[f64; 2]>,
    pub per_n: &'a [super::sweep::NSummary],
    pub failures: usize,
    pub failure_messages: &'a [String],
}

pub const PROTOCOL_NOTE: &str =
    "harness-defined protocol: n grid, seed count, slope band and S mode are experiment choices";

/// Log-log scatter of median excess risk against `n`, with the fitted line when given.
pub fn emit_svg_plot(result: &SweepResult, fit: Option<&RateFit>, path: &Path) -> Result<()> {
    let points: Vec<(f64, f64)> = result
        .summary
        .iter()
        .filter(|s| s.median.is_finite() && s.median > 0.0)
        .map(|s| ((s.n as f64).log10(), s.median.log10()))
        .collect();
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}: median excess risk vs n (log-log)</text>"#,
        w / 2.0,
        result.pipeline.name()
    )
    .unwrap();
    if !points.is_empty() {
        let (mut x0, mut x1, mut y0, mut y1) = points.iter().fold(
            (
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if x1 - x0 < 1e-9 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-9 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        writeln!(
            svg,
            r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
            h - pad,
            w - pad
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">log10 n</text>"#,
            w / 2.0,
            h - 18.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="18" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 18 {})" text-anchor="middle">log10 median excess</text>"#,
            h / 2.0,
            h / 2.0
        )
        .unwrap();
        for &(x, y) in &points {
            writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="steelblue"/>"#,
                sx(x),
                sy(y)
            )
            .unwrap();
        }
        if let Some(f) = fit {
            // fitted in natural logs; the slope is base independent
            let line = |x: f64| f.slope * x + f.intercept / std::f64::consts::LN_10;
            writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-dasharray="6 4"/>"#,
                sx(x0),
                sy(line(x0)),
                sx(x1),
                sy(line(x1))
            )
            .unwrap();
            writeln!(
                svg,
                r#"<text x="{}" y="44" font-family="sans-serif" font-size="12" text-anchor="end">slope {:.3}, r2 {:.3}</text>"#,
                w - pad,
                f.slope,
                f.r_squared
            )
            .unwrap();
        }
    }
    svg.push_str("</svg>\n");
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(svg.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, seed: usize, excess: Option<f64>) -> SweepRow {
        SweepRow {
            pipeline: "plain".into(),
            n,
            seed,
            excess_risk: excess,
            teacher_excess_risk: None,
            agreement_sq: Some(0.1 + 0.2),
            reg_weight: Some(std::f64::consts::PI),
            wall_ms: 0,
        }
    }

    #[test]
    fn header_only_and_line_counts() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        write_rows(&[], &empty).unwrap();
        assert_eq!(
            std::fs::read_to_string(&empty).unwrap(),
            "pipeline,n,seed,excess_risk,teacher_excess_risk,agreement_sq,reg_weight,wall_ms\n"
        );
        let two = dir.path().join("two.csv");
        write_rows(&[row(64, 0, Some(1e-3)), row(64, 1, None)], &two).unwrap();
        let text = std::fs::read_to_string(&two).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn rows_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![
            row(64, 0, Some(1.0 / 3.0)),
            row(64, 1, None),
            row(128, 0, Some(f64::MIN_POSITIVE)),
            row(128, 1, Some(123456.789e-300)),
        ];
        write_rows(&rows, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn json_floats_use_exact_format() {
        #[derive(Serialize)]
        struct T {
            a: f64,
            b: Vec<f64>,
            c: f64,
        }
        let s = to_json_string(&T {
            a: 0.1,
            b: vec![1.0, -2.5],
            c: f64::NAN,
        })
        .unwrap();
        assert!(s.contains("1.0000000000000001e-1"));
        assert!(s.contains("-2.5000000000000000e0"));
        assert!(s.contains("\"c\": null"));
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }
}
