//! CSV and PGM file formats.
//!
//! Every table has a mandatory header row. Floats are written with 17
//! significant digits so a store/load cycle is exact. Images and masks are
//! headerless `M × M` grids.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dpi::analysis::PosteriorSampleSet;
use dpi::diffcore::Tensor;
use dpi::forward::{
    ClosurePhase, ClosureSet, CoverageRow, KSpaceData, LogClosureAmplitude, MriMask, UVCoverage, VisibilitySet,
};
use dpi::trainer::LossBreakdown;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
}

pub const COVERAGE_HEADER: &[&str] = &["t", "st1", "st2", "u", "v", "sigma"];
pub const VIS_HEADER: &[&str] = &["t", "st1", "st2", "u", "v", "re", "im", "sigma"];
pub const CLOSURE_PHASE_HEADER: &[&str] = &["t", "a", "b", "c", "value", "sigma"];
pub const LOG_CLOSURE_AMP_HEADER: &[&str] = &["t", "a", "b", "c", "d", "value", "sigma"];
pub const KSPACE_HEADER: &[&str] = &["row", "col", "re", "im", "sigma"];
pub const LOSS_HEADER: &[&str] = &["epoch", "total", "data_fit", "prior", "neg_logdet"];

/// Float formatting used by every writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Header plus pre-formatted rows.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IoError> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

/// One parsed data row with its 1-based file line.
struct Record<'a> {
    path: &'a Path,
    line: u64,
    fields: csv::StringRecord,
}

impl Record<'_> {
    fn f(&self, i: usize) -> Result<f64, IoError> {
        let s = self.fields[i].trim();
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(self.path, self.line, format!("column {} is not a finite number: {s:?}", i + 1)))
    }

    fn u(&self, i: usize) -> Result<usize, IoError> {
        let s = self.fields[i].trim();
        s.parse::<usize>()
            .map_err(|_| parse_err(self.path, self.line, format!("column {} is not a station index: {s:?}", i + 1)))
    }
}

fn read_records<'a>(path: &'a Path, header: &[&str]) -> Result<Vec<Record<'a>>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let got = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != header {
        return Err(parse_err(path, 1, format!("expected header {:?}, found {:?}", header.join(","), got.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let fields = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = fields.position().map_or(0, |p| p.line());
        if fields.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", header.len(), fields.len()),
            ));
        }
        out.push(Record { path, line, fields });
    }
    Ok(out)
}

fn data_err(path: &Path) -> impl FnOnce(dpi::forward::ForwardError) -> IoError + '_ {
    move |e| parse_err(path, 0, e.to_string())
}

pub fn write_coverage(path: &Path, cov: &UVCoverage) -> Result<(), IoError> {
    write_table(
        path,
        COVERAGE_HEADER,
        cov.rows.iter().map(|r| {
            vec![fmt_f64(r.t), r.a.to_string(), r.b.to_string(), fmt_f64(r.u), fmt_f64(r.v), fmt_f64(r.sigma)]
        }),
    )
}

fn coverage_row(rec: &Record) -> Result<CoverageRow, IoError> {
    Ok(CoverageRow {
        t: rec.f(0)?,
        a: rec.u(1)?,
        b: rec.u(2)?,
        u: rec.f(3)?,
        v: rec.f(4)?,
        sigma: rec.f(rec.fields.len() - 1)?,
    })
}

pub fn read_coverage(path: &Path) -> Result<UVCoverage, IoError> {
    let rows = read_records(path, COVERAGE_HEADER)?
        .iter()
        .map(coverage_row)
        .collect::<Result<_, _>>()?;
    UVCoverage::new(rows).map_err(data_err(path))
}

pub fn write_vis(path: &Path, y: &VisibilitySet) -> Result<(), IoError> {
    write_table(
        path,
        VIS_HEADER,
        y.coverage.rows.iter().zip(&y.vis).map(|(r, v)| {
            vec![
                fmt_f64(r.t),
                r.a.to_string(),
                r.b.to_string(),
                fmt_f64(r.u),
                fmt_f64(r.v),
                fmt_f64(v.re),
                fmt_f64(v.im),
                fmt_f64(r.sigma),
            ]
        }),
    )
}

pub fn read_vis(path: &Path) -> Result<VisibilitySet, IoError> {
    let recs = read_records(path, VIS_HEADER)?;
    let mut rows = Vec::with_capacity(recs.len());
    let mut vis = Vec::with_capacity(recs.len());
    for rec in &recs {
        rows.push(coverage_row(rec)?);
        vis.push(Complex64::new(rec.f(5)?, rec.f(6)?));
    }
    let cov = UVCoverage::new(rows).map_err(data_err(path))?;
    VisibilitySet::new(cov, vis).map_err(data_err(path))
}

pub fn write_closure_phases(path: &Path, set: &ClosureSet) -> Result<(), IoError> {
    write_table(
        path,
        CLOSURE_PHASE_HEADER,
        set.phases.iter().map(|c| {
            let [a, b, d] = c.stations;
            vec![fmt_f64(c.t), a.to_string(), b.to_string(), d.to_string(), fmt_f64(c.value), fmt_f64(c.sigma)]
        }),
    )
}

pub fn write_log_closure_amps(path: &Path, set: &ClosureSet) -> Result<(), IoError> {
    write_table(
        path,
        LOG_CLOSURE_AMP_HEADER,
        set.log_amps.iter().map(|c| {
            let [a, b, d, e] = c.stations;
            vec![
                fmt_f64(c.t),
                a.to_string(),
                b.to_string(),
                d.to_string(),
                e.to_string(),
                fmt_f64(c.value),
                fmt_f64(c.sigma),
            ]
        }),
    )
}

pub fn read_closures(phases: &Path, log_amps: &Path) -> Result<ClosureSet, IoError> {
    let phases = read_records(phases, CLOSURE_PHASE_HEADER)?
        .iter()
        .map(|r| {
            Ok(ClosurePhase {
                t: r.f(0)?,
                stations: [r.u(1)?, r.u(2)?, r.u(3)?],
                value: r.f(4)?,
                sigma: r.f(5)?,
            })
        })
        .collect::<Result<_, IoError>>()?;
    let log_amps = read_records(log_amps, LOG_CLOSURE_AMP_HEADER)?
        .iter()
        .map(|r| {
            Ok(LogClosureAmplitude {
                t: r.f(0)?,
                stations: [r.u(1)?, r.u(2)?, r.u(3)?, r.u(4)?],
                value: r.f(5)?,
                sigma: r.f(6)?,
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok(ClosureSet { phases, log_amps })
}

fn read_grid(path: &Path) -> Result<(usize, Vec<Vec<String>>), IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let rows: Vec<(u64, Vec<String>)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i as u64 + 1, l.split(',').map(|s| s.trim().to_string()).collect()))
        .collect();
    let m = rows.len();
    if m == 0 {
        return Err(parse_err(path, 1, "empty grid"));
    }
    for (line, r) in &rows {
        if r.len() != m {
            return Err(parse_err(path, *line, format!("expected {m} values (square grid), found {}", r.len())));
        }
    }
    // keep line numbers for value errors
    let mut out = Vec::with_capacity(m);
    for (line, r) in rows {
        let _ = line;
        out.push(r);
    }
    Ok((m, out))
}

/// `M × M` grid of floats.
pub fn read_image(path: &Path) -> Result<(usize, Vec<f64>), IoError> {
    let (m, rows) = read_grid(path)?;
    let mut img = Vec::with_capacity(m * m);
    for (i, r) in rows.iter().enumerate() {
        for s in r {
            let v = s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, i as u64 + 1, format!("not a finite number: {s:?}")))?;
            img.push(v);
        }
    }
    Ok((m, img))
}

pub fn write_image(path: &Path, m: usize, img: &[f64]) -> Result<(), IoError> {
    assert_eq!(img.len(), m * m, "image must be M × M");
    let mut text = String::new();
    for row in img.chunks(m) {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(text, "{}", line.join(","));
    }
    write_text(path, &text)
}

pub fn read_mask(path: &Path) -> Result<MriMask, IoError> {
    let (m, rows) = read_grid(path)?;
    let mut mask = Vec::with_capacity(m * m);
    for (i, r) in rows.iter().enumerate() {
        for s in r {
            mask.push(match s.as_str() {
                "0" => false,
                "1" => true,
                _ => return Err(parse_err(path, i as u64 + 1, format!("mask entries must be 0 or 1, found {s:?}"))),
            });
        }
    }
    MriMask::new(m, mask).map_err(data_err(path))
}

pub fn write_mask(path: &Path, mask: &MriMask) -> Result<(), IoError> {
    let mut text = String::new();
    for row in mask.mask.chunks(mask.m) {
        let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        let _ = writeln!(text, "{}", line.join(","));
    }
    write_text(path, &text)
}

/// Sampled k-space values in mask order, one row per sampled location.
pub fn write_kspace(path: &Path, data: &KSpaceData) -> Result<(), IoError> {
    let m = data.mask.m;
    write_table(
        path,
        KSPACE_HEADER,
        data.mask.indices().into_iter().zip(&data.values).map(|(idx, v)| {
            vec![
                (idx / m).to_string(),
                (idx % m).to_string(),
                fmt_f64(v.re),
                fmt_f64(v.im),
                fmt_f64(data.sigma),
            ]
        }),
    )
}

/// Reads k-space values; rows must list exactly the mask's sampled
/// locations in row-major order.
pub fn read_kspace(path: &Path, mask: &MriMask) -> Result<KSpaceData, IoError> {
    let recs = read_records(path, KSPACE_HEADER)?;
    let expected = mask.indices();
    if recs.len() != expected.len() {
        return Err(parse_err(
            path,
            recs.last().map_or(1, |r| r.line),
            format!("mask samples {} locations, file has {}", expected.len(), recs.len()),
        ));
    }
    let mut values = Vec::with_capacity(recs.len());
    let mut sigma = None;
    for (rec, &idx) in recs.iter().zip(&expected) {
        let (r, c) = (rec.u(0)?, rec.u(1)?);
        if r * mask.m + c != idx || c >= mask.m {
            return Err(parse_err(path, rec.line, format!("location ({r}, {c}) is not the next masked sample")));
        }
        values.push(Complex64::new(rec.f(2)?, rec.f(3)?));
        let s = rec.f(4)?;
        match sigma {
            None => sigma = Some(s),
            Some(prev) if prev != s => return Err(parse_err(path, rec.line, "sigma must be the same on every row")),
            _ => {}
        }
    }
    Ok(KSpaceData {
        mask: mask.clone(),
        values,
        sigma: sigma.unwrap_or(0.0),
    })
}

pub fn write_loss_history(path: &Path, history: &[LossBreakdown]) -> Result<(), IoError> {
    write_table(
        path,
        LOSS_HEADER,
        history.iter().enumerate().map(|(i, l)| {
            vec![
                (i + 1).to_string(),
                fmt_f64(l.total),
                fmt_f64(l.data_fit),
                fmt_f64(l.prior),
                fmt_f64(l.neg_logdet),
            ]
        }),
    )
}

pub fn read_loss_history(path: &Path) -> Result<Vec<LossBreakdown>, IoError> {
    read_records(path, LOSS_HEADER)?
        .iter()
        .map(|r| {
            Ok(LossBreakdown {
                total: r.f(1)?,
                data_fit: r.f(2)?,
                prior: r.f(3)?,
                neg_logdet: r.f(4)?,
            })
        })
        .collect()
}

fn sample_header(d: usize) -> Vec<String> {
    std::iter::once("log_q".to_string()).chain((0..d).map(|i| format!("x{i}"))).collect()
}

/// Columns `log_q, x0, …, x{D−1}`, one sample per row.
pub fn write_samples(path: &Path, set: &PosteriorSampleSet) -> Result<(), IoError> {
    let header = sample_header(set.samples.cols());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        path,
        &header,
        (0..set.len()).map(|r| {
            std::iter::once(fmt_f64(set.log_q[r]))
                .chain(set.samples.row(r).iter().map(|v| fmt_f64(*v)))
                .collect()
        }),
    )
}

/// Reads a sample table; `D` is taken from the header.
pub fn read_samples(path: &Path) -> Result<(Tensor, Vec<f64>), IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let d = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.len().saturating_sub(1);
    drop(rdr);
    let header = sample_header(d);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let recs = read_records(path, &header)?;
    if recs.is_empty() || d == 0 {
        return Err(parse_err(path, 1, "no samples"));
    }
    let mut log_q = Vec::with_capacity(recs.len());
    let mut data = Vec::with_capacity(recs.len() * d);
    for r in &recs {
        log_q.push(r.f(0)?);
        for i in 0..d {
            data.push(r.f(i + 1)?);
        }
    }
    let x = Tensor::matrix(recs.len(), d, data).map_err(|e| parse_err(path, 1, e.to_string()))?;
    Ok((x, log_q))
}

/// 16-bit binary PGM, linearly scaled from the image minimum to maximum.
pub fn write_pgm16(path: &Path, m: usize, img: &[f64]) -> Result<(), IoError> {
    assert_eq!(img.len(), m * m, "image must be M × M");
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{m} {m}\n65535\n").into_bytes();
    for v in img {
        let q = (((v - lo) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}
