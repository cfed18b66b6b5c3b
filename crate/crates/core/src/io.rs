//! File formats: profile and summary CSV, little-endian kernel and ensemble
//! binaries, pretty JSON.
//!
//! Binary layouts (all little-endian):
//!
//! ```text
//! FKK1 / FKP1   magic[4] x_min:f64 x_max:f64 n:u64 s:f64 t:f64 entries:f64[n*n] (row-major)
//! FKE1          magic[4] n_paths:u64 n_times:u64 seed:u64 t0:f64 t1:f64
//!               positions:f32[n_paths*n_times] (path-major) absorbed_at:i64[n_paths] (-1 = never)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::bridge::{BridgeSolution, TransitionDensity};
use crate::diffusion::{PathEnsemble, SliceSummary};
use crate::error::{Error, Result};
use crate::grid::{Grid, Profile, TimeGrid};
use crate::kernel::KernelMatrix;
use crate::scalar::Scalar;

pub const KERNEL_MAGIC: &[u8; 4] = b"FKK1";
pub const TRANSITION_MAGIC: &[u8; 4] = b"FKP1";
pub const ENSEMBLE_MAGIC: &[u8; 4] = b"FKE1";

/// Relative tolerance for recognizing a CSV abscissa column as uniform.
const UNIFORM_TOL: f64 = 1e-8;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Writes `# time=<t>`, a header `x,value` and one row per node.
pub fn write_profile_csv<S: Scalar>(path: &Path, p: &Profile<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# time={:.16e}", p.time().as_f64())?;
    writeln!(w, "x,value")?;
    for (x, v) in p.grid().nodes().iter().zip(p.values()) {
        writeln!(w, "{:.16e},{:.16e}", x.as_f64(), v.as_f64())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a two-column CSV (`x,value`). Comment lines start with `#`; a
/// `# time=` comment sets the profile time (default 0). The `x` column must
/// be a uniform grid.
pub fn read_profile_csv<S: Scalar>(path: &Path) -> Result<Profile<S>> {
    let reader = BufReader::new(File::open(path)?);
    let mut time = 0.0;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(t) = comment.trim().strip_prefix("time=") {
                time = t.trim().parse().map_err(|_| format_err(format!("bad time in line {}", lineno + 1)))?;
            }
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
            return Err(format_err(format!("line {} needs two columns", lineno + 1)));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(v)) => {
                xs.push(x);
                vs.push(v);
            }
            // a header row is only allowed before the data
            _ if xs.is_empty() => continue,
            _ => return Err(format_err(format!("non-numeric data in line {}", lineno + 1))),
        }
    }
    if xs.len() < 3 {
        return Err(format_err(format!("{}: need at least 3 data rows", path.display())));
    }
    let grid = Grid::uniform(S::lit(xs[0]), S::lit(xs[xs.len() - 1]), xs.len())?;
    let h = grid.spacing().as_f64();
    for (i, &x) in xs.iter().enumerate() {
        if (grid.node(i).as_f64() - x).abs() > UNIFORM_TOL * h.max(x.abs()) {
            return Err(format_err(format!("{}: x column is not uniform at row {i}", path.display())));
        }
    }
    Profile::new(grid, vs.into_iter().map(S::lit).collect(), S::lit(time))
}

struct MatrixHeader {
    x_min: f64,
    x_max: f64,
    n: usize,
    s: f64,
    t: f64,
}

fn write_matrix<S: Scalar>(path: &Path, magic: &[u8; 4], h: MatrixHeader, entries: &[S]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(magic)?;
    w.write_all(&h.x_min.to_le_bytes())?;
    w.write_all(&h.x_max.to_le_bytes())?;
    w.write_all(&(h.n as u64).to_le_bytes())?;
    w.write_all(&h.s.to_le_bytes())?;
    w.write_all(&h.t.to_le_bytes())?;
    for v in entries {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn read_matrix<S: Scalar>(path: &Path, magic: &[u8; 4]) -> Result<(Grid<S>, S, S, Vec<S>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, magic)?;
    let x_min = read_f64(&mut r)?;
    let x_max = read_f64(&mut r)?;
    let n = read_u64(&mut r)? as usize;
    let s = read_f64(&mut r)?;
    let t = read_f64(&mut r)?;
    let grid = Grid::uniform(S::lit(x_min), S::lit(x_max), n)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * n * 8 {
        return Err(format_err(format!("expected {} payload bytes, found {}", n * n * 8, bytes.len())));
    }
    let entries = bytes
        .chunks_exact(8)
        .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect();
    Ok((grid, S::lit(s), S::lit(t), entries))
}

fn header_of<S: Scalar>(grid: &Grid<S>, s: S, t: S) -> MatrixHeader {
    MatrixHeader { x_min: grid.x_min().as_f64(), x_max: grid.x_max().as_f64(), n: grid.len(), s: s.as_f64(), t: t.as_f64() }
}

pub fn write_kernel<S: Scalar>(path: &Path, k: &KernelMatrix<S>) -> Result<()> {
    write_matrix(path, KERNEL_MAGIC, header_of(k.grid(), k.s(), k.t()), k.entries())
}

pub fn read_kernel<S: Scalar>(path: &Path) -> Result<KernelMatrix<S>> {
    let (grid, s, t, entries) = read_matrix(path, KERNEL_MAGIC)?;
    KernelMatrix::from_entries(grid, s, t, entries)
}

pub fn write_transition<S: Scalar>(path: &Path, p: &TransitionDensity<S>) -> Result<()> {
    write_matrix(path, TRANSITION_MAGIC, header_of(p.grid(), p.s(), p.t()), p.entries())
}

pub fn read_transition<S: Scalar>(path: &Path) -> Result<TransitionDensity<S>> {
    let (grid, s, t, entries) = read_matrix(path, TRANSITION_MAGIC)?;
    TransitionDensity::from_entries(grid, s, t, entries)
}

/// Positions are stored as `f32`.
pub fn write_ensemble<S: Scalar>(path: &Path, e: &PathEnsemble<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ENSEMBLE_MAGIC)?;
    w.write_all(&(e.n_paths as u64).to_le_bytes())?;
    w.write_all(&(e.times.len() as u64).to_le_bytes())?;
    w.write_all(&e.seed.to_le_bytes())?;
    w.write_all(&e.times.t0().as_f64().to_le_bytes())?;
    w.write_all(&e.times.t1().as_f64().to_le_bytes())?;
    for v in &e.positions {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    for a in &e.absorbed_at {
        let k = a.map_or(-1i64, |k| k as i64);
        w.write_all(&k.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Ensemble as stored on disk; positions keep their `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEnsemble {
    pub n_paths: usize,
    pub times: TimeGrid<f64>,
    pub seed: u64,
    pub positions: Vec<f32>,
    pub absorbed_at: Vec<Option<usize>>,
}

pub fn read_ensemble(path: &Path) -> Result<StoredEnsemble> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, ENSEMBLE_MAGIC)?;
    let n_paths = read_u64(&mut r)? as usize;
    let m = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let t0 = read_f64(&mut r)?;
    let t1 = read_f64(&mut r)?;
    let mut buf = vec![0u8; n_paths * m * 4];
    r.read_exact(&mut buf)?;
    let positions = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect();
    let mut absorbed_at = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let k = read_u64(&mut r)? as i64;
        absorbed_at.push(usize::try_from(k).ok());
    }
    Ok(StoredEnsemble { n_paths, times: TimeGrid::uniform(t0, t1, m)?, seed, positions, absorbed_at })
}

pub fn write_summary_csv<S: Scalar>(path: &Path, rows: &[SliceSummary<S>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,mean,var,n_absorbed")?;
    for r in rows {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{}", r.t.as_f64(), r.mean.as_f64(), r.var.as_f64(), r.n_absorbed)?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV per slice, `slice_<k>.csv` with columns
/// `x,theta,theta_star,rho,drift`, plus `f.csv` and `g.csv`.
pub fn write_solution<S: Scalar>(dir: &Path, sol: &BridgeSolution<S>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_profile_csv(&dir.join("f.csv"), &sol.f)?;
    write_profile_csv(&dir.join("g.csv"), &sol.g)?;
    for (k, t) in sol.times.iter().enumerate() {
        let mut w = BufWriter::new(File::create(dir.join(format!("slice_{k:03}.csv")))?);
        writeln!(w, "# time={:.16e}", t.as_f64())?;
        writeln!(w, "x,theta,theta_star,rho,drift")?;
        let nodes = sol.rho[k].grid().nodes();
        for (i, x) in nodes.iter().enumerate() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                x.as_f64(),
                sol.theta[k].values()[i].as_f64(),
                sol.theta_star[k].values()[i].as_f64(),
                sol.rho[k].values()[i].as_f64(),
                sol.drift[k].values()[i].as_f64()
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Reads the drift and density columns back from [`write_solution`] output.
pub fn read_solution_slices(dir: &Path) -> Result<SolutionSlices> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("slice_") && n.ends_with(".csv")))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(format_err(format!("{}: need at least two slice files", dir.display())));
    }
    let mut times = Vec::new();
    let mut rho = Vec::new();
    let mut drift = Vec::new();
    for p in &paths {
        let (t, cols) = read_columns(p, 5)?;
        let grid = Grid::uniform(cols[0][0], *cols[0].last().expect("non-empty"), cols[0].len())?;
        times.push(t);
        rho.push(Profile::new(grid, cols[3].clone(), t)?);
        drift.push(Profile::new(grid, cols[4].clone(), t)?);
    }
    Ok(SolutionSlices { times, rho, drift })
}

/// Per-slice density and drift of a stored bridge solution.
#[derive(Debug, Clone)]
pub struct SolutionSlices {
    pub times: Vec<f64>,
    pub rho: Vec<Profile<f64>>,
    pub drift: Vec<Profile<f64>>,
}

fn read_columns(path: &Path, n_cols: usize) -> Result<(f64, Vec<Vec<f64>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut time = 0.0;
    let mut cols = vec![Vec::new(); n_cols];
    let mut header_seen = false;
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if let Some(c) = line.strip_prefix('#') {
            if let Some(t) = c.trim().strip_prefix("time=") {
                time = t.parse().map_err(|_| format_err(format!("{}: bad time", path.display())))?;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err(format!("{}: non-numeric row", path.display())))?;
        if values.len() != n_cols {
            return Err(format_err(format!("{}: expected {n_cols} columns", path.display())));
        }
        for (c, v) in cols.iter_mut().zip(values) {
            c.push(v);
        }
    }
    if cols[0].len() < 3 {
        return Err(format_err(format!("{}: need at least 3 rows", path.display())));
    }
    Ok((time, cols))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
