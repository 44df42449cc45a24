//! Run metadata and deterministic CSV, JSON and SVG writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::doc::Tolerances;
use crate::CliError;

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "NOJUMP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub artifact_version: &'static str,
    pub command: &'static str,
    /// SHA-256 of the model document bytes.
    pub model_hash: String,
    pub seed: u64,
    /// `"flag"`, `"env"` or `"default"`.
    pub seed_source: &'static str,
    pub seed_env: &'static str,
    pub workers: usize,
    pub generator: &'static str,
    pub tolerances: Tolerances,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl RunMetadata {
    /// `key=value` lines for CSV and SVG headers.
    fn lines(&self) -> Vec<String> {
        vec![
            format!("artifact_version={}", self.artifact_version),
            format!("command={}", self.command),
            format!("model_hash={}", self.model_hash),
            format!("seed={} ({})", self.seed, self.seed_source),
            format!("seed_env={}", self.seed_env),
            format!("workers={}", self.workers),
            format!("generator={}", self.generator),
            format!(
                "tolerances=tol:{:e},lambda_max:{},half_height:{}",
                self.tolerances.tol, self.tolerances.lambda_max, self.tolerances.half_height
            ),
        ]
    }
}

/// 17 significant digits, `.` decimal separator.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Out {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Out {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, meta: &RunMetadata, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut s = String::new();
        for l in meta.lines() {
            let _ = writeln!(s, "# {l}");
        }
        let _ = writeln!(s, "{}", header.join(","));
        for r in rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        self.put(name, &s)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, meta: &RunMetadata, body: &T) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            metadata: &'a RunMetadata,
            #[serde(flatten)]
            body: &'a T,
        }
        let mut s = serde_json::to_string_pretty(&Doc { metadata: meta, body })
            .map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        s.push('\n');
        self.put(name, &s)
    }

    pub fn svg(&mut self, name: &str, meta: &RunMetadata, plot: &Plot) -> Result<(), CliError> {
        self.put(name, &plot.render(meta))
    }
}

/// A static scatter or line plot.
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Optional rectangle drawn behind the data, `(x0, x1, y0, y1)`.
    pub frame: Option<(f64, f64, f64, f64)>,
    pub log_y: bool,
}

pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub line: bool,
    pub color: &'static str,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn tick(v: f64) -> String {
    format!("{v:.3e}")
}

impl Plot {
    fn render(&self, meta: &RunMetadata) -> String {
        let ty = |y: f64| if self.log_y { y.max(1e-300).log10() } else { y };
        let mut pts = self.series.iter().flat_map(|s| s.points.iter().map(|&(x, y)| (x, ty(y))));
        let first = pts.next().unwrap_or((0.0, 0.0));
        let (mut x0, mut x1, mut y0, mut y1) = pts.fold((first.0, first.0, first.1, first.1), |b, (x, y)| {
            (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y))
        });
        if let Some((a, b, c, d)) = self.frame {
            x0 = x0.min(a);
            x1 = x1.max(b);
            y0 = y0.min(c);
            y1 = y1.max(d);
        }
        if x1 - x0 <= 0.0 {
            x0 -= 1.0;
            x1 += 1.0;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 1.0;
            y1 += 1.0;
        }
        let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, "<!--");
        for l in meta.lines() {
            let _ = writeln!(s, "  {l}");
        }
        let _ = writeln!(s, "-->");
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        if let Some((a, b, c, d)) = self.frame {
            let (c, d) = (ty(c), ty(d));
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#f3f3f3" stroke="#999" stroke-dasharray="4 3"/>"##,
                fmt2(sx(a)),
                fmt2(sy(d)),
                fmt2(sx(b) - sx(a)),
                fmt2(sy(c) - sy(d))
            );
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{},{} {},{} {},{}" fill="none" stroke="black"/>"#,
            PAD,
            PAD,
            PAD,
            H - PAD,
            W - PAD,
            H - PAD
        );
        for (v, anchor, x, y) in [
            (x0, "start", PAD, H - PAD + 16.0),
            (x1, "end", W - PAD, H - PAD + 16.0),
        ] {
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
                tick(v)
            );
        }
        for (v, y) in [(y0, H - PAD), (y1, PAD)] {
            let label = if self.log_y { format!("1e{v:.1}") } else { tick(v) };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{label}</text>"#,
                PAD - 4.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(&self.y_label)
        );
        for series in &self.series {
            if series.line {
                let coords: Vec<String> = series
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{},{}", fmt2(sx(x)), fmt2(sy(ty(y)))))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                    coords.join(" "),
                    series.color
                );
            } else {
                for &(x, y) in &series.points {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{}" cy="{}" r="3" fill="{}"/>"#,
                        fmt2(sx(x)),
                        fmt2(sy(ty(y))),
                        series.color
                    );
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn sha256_hex() {
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
