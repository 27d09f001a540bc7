//! File formats: game JSON, trajectory CSV, JSON artifacts; all writes are atomic.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Game;
use crate::ode::{Trajectory, TrajectoryMeta};

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameFile {
    name: String,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    col_labels: Option<Vec<String>>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn json_error(text: &str, source: &str, e: serde_json::Error) -> Error {
    let off = byte_offset(text, e.line(), e.column());
    Error::Parse(format!("{source}: byte offset {off} (line {}, column {}): {e}", e.line(), e.column()))
}

pub fn parse_game(text: &str, source: &str) -> Result<Game> {
    let f: GameFile = serde_json::from_str(text).map_err(|e| json_error(text, source, e))?;
    let g = Game::new(f.name, f.a)?;
    match (f.row_labels, f.col_labels) {
        (None, None) => Ok(g),
        (r, c) => {
            let r = r.unwrap_or_else(|| g.row_labels().to_vec());
            let c = c.unwrap_or_else(|| g.col_labels().to_vec());
            g.with_labels(r, c)
        }
    }
}

pub fn read_game(path: impl AsRef<Path>) -> Result<Game> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_game(&text, &path.display().to_string())
}

pub fn game_to_json(g: &Game) -> String {
    let f = GameFile {
        name: g.name().to_string(),
        a: g.a_rows(),
        row_labels: Some(g.row_labels().to_vec()),
        col_labels: Some(g.col_labels().to_vec()),
    };
    serde_json::to_string_pretty(&f).expect("game serializes")
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let perms = std::fs::Permissions::from_mode(0o644);
        tmp.as_file().set_permissions(perms).map_err(|e| io_err(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(format!("serialization failed: {e}")))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = to_json_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(&text, &path.display().to_string(), e))
}

/// Shortest representation that parses back to the same `f64`.
#[inline]
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// CSV with header `t,x_1..x_n,y_1..y_m`, `.` decimals and `\n` line ends.
pub fn trajectory_to_csv(traj: &Trajectory) -> Result<String> {
    let (n, m) = traj.dims();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x_{i}")))
        .chain((1..=m).map(|j| format!("y_{j}")))
        .collect();
    let csv_err = |e: csv::Error| Error::Parse(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(1 + n + m);
    for k in 0..traj.len() {
        row.clear();
        row.push(fmt_f64(traj.times()[k]));
        row.extend(traj.x(k).iter().chain(traj.y(k)).map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(format!("csv write failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

pub fn write_trajectory_csv(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    write_atomic(path, trajectory_to_csv(traj)?.as_bytes())
}

pub fn parse_trajectory_csv(text: &str, source: &str) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let err = |msg: String| Error::Parse(format!("{source}: {msg}"));
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.first() != Some(&"t") {
        return Err(err("first column must be t".into()));
    }
    let n = names.iter().filter(|h| h.starts_with("x_")).count();
    let m = names.iter().filter(|h| h.starts_with("y_")).count();
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x_{i}")))
        .chain((1..=m).map(|j| format!("y_{j}")))
        .collect();
    if n < 2 || m < 2 || names != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(err(format!("header must be t,x_1..x_n,y_1..y_m with n,m >= 2, got {names:?}")));
    }
    let mut traj = Trajectory::new(
        n,
        m,
        TrajectoryMeta {
            integrator: "csv".into(),
            dt: 0.0,
            t_end: 0.0,
            thin: 1,
            steps: 0,
            clamp_events: 0,
            seed: None,
            replica: None,
            burn_in: None,
        },
    );
    let mut vals = vec![0.0; 1 + n + m];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let at = line + 2;
        if rec.len() != vals.len() {
            return Err(err(format!("line {at}: expected {} fields, got {}", vals.len(), rec.len())));
        }
        for (v, field) in vals.iter_mut().zip(rec.iter()) {
            *v = field
                .trim()
                .parse()
                .map_err(|_| err(format!("line {at}: bad number {field:?}")))?;
        }
        let (t, rest) = vals.split_first().unwrap();
        let (x, y) = rest.split_at(n);
        for w in [x, y] {
            let s: f64 = w.iter().sum();
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(err(format!("line {at}: state is not on the simplex")));
            }
        }
        if !t.is_finite() || traj.times().last().is_some_and(|prev| *t <= *prev) {
            return Err(err(format!("line {at}: times must be finite and increasing")));
        }
        traj.push(*t, x, y);
    }
    if traj.is_empty() {
        return Err(err("no data rows".into()));
    }
    let t = traj.times();
    let steps = (t.len() - 1) as u64;
    let dt = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    traj.meta.t_end = traj.end_time();
    traj.meta.steps = steps;
    traj.meta.dt = if dt.is_finite() { dt } else { 0.0 };
    Ok(traj)
}

pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_trajectory_csv(&text, &path.display().to_string())
}
