//! On-disk formats.
//!
//! All binary payloads are little-endian and follow a one-line ASCII header:
//!
//! * `MARSIMG 1 <height> <width> <pixel_size_mm>` + `f32` pixels, row-major;
//! * `MARSSINO 1 <n_views> <n_bins> <I0> <sigma>` + `f64` counts, sinogram
//!   and weights blocks;
//! * `MARSMODEL 1 <L> <p>` + per layer: `<eta>` line, then `p*p` `f64`
//!   transform entries, row-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::ctsim::Measurement;
use crate::error::{MarsError, Result};
use crate::image::ImageGrid;
use crate::model::TransformStack;
use crate::recon::TraceRow;

fn format_err(msg: impl Into<String>) -> MarsError {
    MarsError::Format(msg.into())
}

fn read_header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(format_err("truncated header"));
    }
    line.pop();
    String::from_utf8(line).map_err(|_| format_err("header is not valid UTF-8"))
}

fn parse_header<'a>(line: &'a str, magic: &str, fields: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.first() != Some(&magic) {
        return Err(format_err(format!("expected {magic} header, got {line:?}")));
    }
    if parts.get(1) != Some(&"1") {
        return Err(format_err(format!("unsupported {magic} version in {line:?}")));
    }
    if parts.len() != fields + 2 {
        return Err(format_err(format!("{magic} header needs {fields} fields: {line:?}")));
    }
    Ok(parts[2..].to_vec())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| format_err(format!("invalid {what}: {s:?}")))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| format_err(format!("expected {n} f64 values")))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(format_err(format!("trailing bytes after {what} payload")));
    }
    Ok(())
}

pub fn write_image<W: Write>(w: &mut W, img: &ImageGrid) -> Result<()> {
    writeln!(w, "MARSIMG 1 {} {} {}", img.height, img.width, img.pixel_size)?;
    for v in &img.values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_image<R: BufRead>(r: &mut R) -> Result<ImageGrid> {
    let line = read_header_line(r)?;
    let f = parse_header(&line, "MARSIMG", 3)?;
    let (h, w): (usize, usize) = (parse(f[0], "height")?, parse(f[1], "width")?);
    let px: f64 = parse(f[2], "pixel size")?;
    let mut buf = vec![0u8; h * w * 4];
    r.read_exact(&mut buf).map_err(|_| format_err(format!("expected {} f32 pixels", h * w)))?;
    expect_eof(r, "image")?;
    let values = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let img = ImageGrid::from_vec(h, w, px, values).map_err(|e| format_err(e.to_string()))?;
    img.check_finite().map_err(|e| format_err(e.to_string()))?;
    Ok(img)
}

pub fn write_measurement<W: Write>(w: &mut W, m: &Measurement, n_views: usize, n_bins: usize) -> Result<()> {
    if m.len() != n_views * n_bins || m.counts.len() != m.len() || m.weights.len() != m.len() {
        return Err(MarsError::Contract(format!("measurement length {} does not match {n_views}x{n_bins}", m.len())));
    }
    writeln!(w, "MARSSINO 1 {n_views} {n_bins} {} {}", m.i0, m.sigma)?;
    write_f64s(w, &m.counts)?;
    write_f64s(w, &m.sino)?;
    write_f64s(w, &m.weights)
}

/// Returns the measurement with its `(n_views, n_bins)`.
pub fn read_measurement<R: BufRead>(r: &mut R) -> Result<(Measurement, usize, usize)> {
    let line = read_header_line(r)?;
    let f = parse_header(&line, "MARSSINO", 4)?;
    let (nv, nb): (usize, usize) = (parse(f[0], "view count")?, parse(f[1], "bin count")?);
    let (i0, sigma): (f64, f64) = (parse(f[2], "I0")?, parse(f[3], "sigma")?);
    let n = nv * nb;
    let counts = read_f64s(r, n)?;
    let sino = read_f64s(r, n)?;
    let weights = read_f64s(r, n)?;
    expect_eof(r, "sinogram")?;
    if weights.iter().any(|&v| !(v > 0.0 && v.is_finite())) || sino.iter().any(|v| !v.is_finite()) {
        return Err(format_err("sinogram contains non-finite data or nonpositive weights"));
    }
    Ok((Measurement { counts, sino, weights, i0, sigma }, nv, nb))
}

pub fn write_model<W: Write>(w: &mut W, model: &TransformStack) -> Result<()> {
    let p = model.patch_len();
    writeln!(w, "MARSMODEL 1 {} {p}", model.layers())?;
    for (omega, eta) in model.transforms().iter().zip(model.eta()) {
        writeln!(w, "{eta}")?;
        // nalgebra is column-major; the file is row-major
        write_f64s(w, omega.transpose().as_slice())?;
    }
    Ok(())
}

/// Reads a model and checks unitarity of every transform.
pub fn read_model<R: BufRead>(r: &mut R) -> Result<TransformStack> {
    let line = read_header_line(r)?;
    let f = parse_header(&line, "MARSMODEL", 2)?;
    let (layers, p): (usize, usize) = (parse(f[0], "layer count")?, parse(f[1], "patch length")?);
    if layers == 0 || p == 0 {
        return Err(format_err("model must have at least one layer and a positive patch length"));
    }
    let mut omega = Vec::with_capacity(layers);
    let mut eta = Vec::with_capacity(layers);
    for _ in 0..layers {
        let t = read_header_line(r)?;
        eta.push(parse::<f64>(t.trim(), "threshold")?);
        let vals = read_f64s(r, p * p)?;
        omega.push(DMatrix::from_row_slice(p, p, &vals));
    }
    expect_eof(r, "model")?;
    TransformStack::new(omega, eta).map_err(|e| format_err(e.to_string()))
}

/// Binary PGM (P5) with `[lo, hi]` mapped linearly onto `0..=255`.
pub fn write_pgm<W: Write>(w: &mut W, img: &ImageGrid, lo: f64, hi: f64) -> Result<()> {
    if !(hi > lo) {
        return Err(MarsError::Contract(format!("display window [{lo}, {hi}] is empty")));
    }
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img
        .values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(w: &mut W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "iter,data_term,reg_term,total")?;
    for row in trace {
        writeln!(w, "{},{:e},{:e},{:e}", row.iter, row.data_term, row.reg_term, row.total)?;
    }
    Ok(())
}

fn with_path(path: &Path, e: std::io::Error) -> MarsError {
    MarsError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| with_path(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| with_path(path, e))?))
}

/// Whole file as UTF-8 text, with the path in any error.
pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| with_path(path, e))
}

pub fn save_image(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_image(&mut w, img)?;
    Ok(w.flush()?)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    read_image(&mut open(path.as_ref())?)
}

pub fn save_measurement(path: impl AsRef<Path>, m: &Measurement, n_views: usize, n_bins: usize) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_measurement(&mut w, m, n_views, n_bins)?;
    Ok(w.flush()?)
}

pub fn load_measurement(path: impl AsRef<Path>) -> Result<(Measurement, usize, usize)> {
    read_measurement(&mut open(path.as_ref())?)
}

pub fn save_model(path: impl AsRef<Path>, model: &TransformStack) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_model(&mut w, model)?;
    Ok(w.flush()?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TransformStack> {
    read_model(&mut open(path.as_ref())?)
}

pub fn save_pgm(path: impl AsRef<Path>, img: &ImageGrid, lo: f64, hi: f64) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_pgm(&mut w, img, lo, hi)?;
    Ok(w.flush()?)
}

pub fn save_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_trace_csv(&mut w, trace)?;
    Ok(w.flush()?)
}
