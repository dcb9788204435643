//! Error curves, their CSV form, and log-log rate fits.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use toml::Value;

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 4] = ["k", "metric_mean", "metric_std", "n_ok_seeds"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub k: u64,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub n_ok_seeds: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Curve {
    pub rows: Vec<CurveRow>,
}

impl Curve {
    pub fn points(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.rows.iter().map(|r| (r.k, r.metric_mean))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                r.metric_mean.to_string(),
                r.metric_std.to_string(),
                r.n_ok_seeds.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv write failed: {e}")))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parses the four-column CSV; errors name the offending line.
    pub fn read_csv<R: Read>(input: R) -> Result<Curve> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers().map_err(|e| csv_parse(&e, 1))?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{}`", CSV_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_parse(&e, i + 2))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
            let field = |j: usize| rec.get(j).unwrap_or("").trim();
            let err = |name: &str| Error::Parse {
                line,
                message: format!("invalid {name} `{}`", field(CSV_HEADER.iter().position(|h| *h == name).unwrap())),
            };
            rows.push(CurveRow {
                k: field(0).parse().map_err(|_| err("k"))?,
                metric_mean: field(1).parse().map_err(|_| err("metric_mean"))?,
                metric_std: field(2).parse().map_err(|_| err("metric_std"))?,
                n_ok_seeds: field(3).parse().map_err(|_| err("n_ok_seeds"))?,
            });
        }
        if rows.is_empty() {
            return Err(Error::NoData);
        }
        Ok(Curve { rows })
    }

    pub fn load(path: &Path) -> Result<Curve> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Curve::read_csv(file)
    }
}

fn csv_parse(e: &csv::Error, fallback: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Least-squares fit of `log metric = intercept + slope log k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (u64, u64),
    pub n_points: usize,
}

/// The last two decades of the logged range.
pub fn default_window(points: &[(u64, f64)]) -> Option<(u64, u64)> {
    let hi = points.iter().map(|p| p.0).max()?;
    Some(((hi / 100).max(1), hi))
}

pub fn fit_rate(points: &[(u64, f64)], window: Option<(u64, u64)>) -> Result<RateFit> {
    let window = match window {
        Some(w) => w,
        None => default_window(points).ok_or(Error::NoData)?,
    };
    let (lo, hi) = window;
    let sel: Vec<(u64, f64)> = points.iter().copied().filter(|p| p.0 >= lo && p.0 <= hi).collect();
    if sel.len() < 5 {
        return Err(Error::domain(format!(
            "need at least 5 points in [{lo}, {hi}], got {}",
            sel.len()
        )));
    }
    if let Some(&(k, v)) = sel.iter().find(|p| !(p.1 > 0.0) || p.0 == 0) {
        return Err(Error::domain(format!("cannot fit a log-log rate through k = {k}, metric = {v}")));
    }
    let xs: Vec<f64> = sel.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = sel.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("all points in the window share the same k"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        window,
        n_points: sel.len(),
    })
}

impl RateFit {
    pub fn predict(&self, k: f64) -> f64 {
        (self.intercept + self.slope * k.ln()).exp()
    }

    /// Flat `key = value` form, read back by [`RateFit::from_text`].
    pub fn to_text(&self) -> String {
        let mut t = toml::Table::new();
        t.insert("slope".into(), Value::Float(self.slope));
        t.insert("intercept".into(), Value::Float(self.intercept));
        t.insert("r_squared".into(), Value::Float(self.r_squared));
        t.insert("k_lo".into(), Value::Integer(self.window.0 as i64));
        t.insert("k_hi".into(), Value::Integer(self.window.1 as i64));
        t.insert("n_points".into(), Value::Integer(self.n_points as i64));
        ["slope", "intercept", "r_squared", "k_lo", "k_hi", "n_points"]
            .iter()
            .map(|k| format!("{k} = {}\n", t[*k]))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<RateFit> {
        let t: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        let float = |k: &str| match t.get(k) {
            Some(Value::Float(f)) => Ok(*f),
            Some(Value::Integer(i)) => Ok(*i as f64),
            _ => Err(Error::Config(format!("fit file: missing or invalid `{k}`"))),
        };
        let int = |k: &str| match t.get(k) {
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            _ => Err(Error::Config(format!("fit file: missing or invalid `{k}`"))),
        };
        Ok(RateFit {
            slope: float("slope")?,
            intercept: float("intercept")?,
            r_squared: float("r_squared")?,
            window: (int("k_lo")?, int("k_hi")?),
            n_points: int("n_points")? as usize,
        })
    }
}

impl fmt::Display for RateFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "slope {:.4} (intercept {:.4}, r^2 {:.4}) over k in [{}, {}] with {} points",
            self.slope, self.intercept, self.r_squared, self.window.0, self.window.1, self.n_points
        )
    }
}
