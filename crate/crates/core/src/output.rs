//! Time-series CSV, sweep summary CSV and binary CNSF snapshots.
//!
//! CNSF layout: the bytes `CNSF`, then little-endian `u32` version (1),
//! `u32` dim, one `u32` cell count per axis, then any number of fields,
//! each a `u32` name length, the UTF-8 name and the `f64` payload in storage
//! order (x fastest). Payload sizes follow from the name: `u0`, `u1`, `u2`
//! are face arrays of that axis, `t` is a single value, anything else is a
//! cell array.

use std::io::{Read, Write};
use std::path::Path;

use crate::diagnostics::{DiagnosticsRow, CSV_COLUMNS};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::stepper::SimState;
use crate::sweep::SweepReport;

const MAGIC: &[u8; 4] = b"CNSF";
const VERSION: u32 = 1;

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn write_timeseries<W: Write>(mut w: W, rows: &[DiagnosticsRow]) -> Result<()> {
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    for row in rows {
        let line: Vec<String> = row.values().into_iter().map(cell).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub const SWEEP_COLUMNS: [&str; 15] = [
    "eps",
    "sup_y",
    "st_np1",
    "st_flux_p2",
    "st_gradn_p3",
    "st_gradm2",
    "st_gradc4",
    "st_u103",
    "st_nalpha",
    "st_epsn2",
    "st_nuq",
    "st_gradm1",
    "dist_n",
    "dist_c",
    "dist_u",
];

/// One row per eps; `dist_*` is the distance to the previous eps in the list
/// and is empty on the first row. A trailing `# verdict` line summarizes.
pub fn write_sweep<W: Write>(mut w: W, report: &SweepReport) -> Result<()> {
    writeln!(w, "{}", SWEEP_COLUMNS.join(","))?;
    let dist = |field: &str, i: usize| {
        report
            .cauchy_of(field)
            .and_then(|v| i.checked_sub(1).and_then(|k| v.distances.get(k).copied()))
    };
    for (i, run) in report.runs.iter().enumerate() {
        let mut line = vec![cell(Some(run.eps)), cell(Some(run.sup_y))];
        line.extend(run.totals.as_columns().into_iter().map(cell));
        for f in ["n", "c", "u"] {
            line.push(cell(dist(f, i)));
        }
        writeln!(w, "{}", line.join(","))?;
    }
    let failed: Vec<&str> = report
        .uniformity
        .iter()
        .filter(|v| !v.held)
        .map(|v| v.quantity)
        .chain(report.cauchy.iter().filter(|v| !v.held).map(|v| v.field))
        .collect();
    writeln!(
        w,
        "# verdict: bounded={} cauchy={} runs_held={} failed=[{}]",
        report.bounded(),
        report.cauchy_trend(),
        report.all_runs_held(),
        failed.join(" ")
    )?;
    Ok(())
}

/// Decoded snapshot contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub n_cells: Vec<usize>,
    pub fields: Vec<(String, Vec<f64>)>,
}

fn expected_len(name: &str, dim: usize, n: &[usize]) -> Option<usize> {
    let cells: usize = n.iter().product();
    match name {
        "t" => Some(1),
        "u0" | "u1" | "u2" => {
            let axis = (name.as_bytes()[1] - b'0') as usize;
            (axis < dim).then(|| cells / n[axis] * (n[axis] + 1))
        }
        _ => Some(cells),
    }
}

impl Snapshot {
    pub fn from_state(state: &SimState) -> Snapshot {
        let g = state.grid();
        let mut fields = vec![
            ("t".to_string(), vec![state.t]),
            ("n".to_string(), state.n.values.clone()),
            ("c".to_string(), state.c.values.clone()),
        ];
        for (axis, comp) in state.u.comps.iter().enumerate() {
            fields.push((format!("u{axis}"), comp.clone()));
        }
        fields.push(("p".to_string(), state.pressure.values.clone()));
        Snapshot {
            dim: g.dim(),
            n_cells: g.n()[..g.dim()].to_vec(),
            fields,
        }
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Rebuilds a state on `grid`, whose cell counts must match.
    pub fn to_state(&self, grid: &Grid) -> Result<SimState> {
        if grid.dim() != self.dim || grid.n()[..self.dim] != self.n_cells[..] {
            return Err(Error::Snapshot("grid does not match snapshot".into()));
        }
        let get = |name: &str| {
            self.field(name)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Snapshot(format!("missing field `{name}`")))
        };
        let comps = (0..self.dim)
            .map(|a| get(&format!("u{a}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(SimState {
            t: get("t")?[0],
            n: ScalarField::from_values(grid, get("n")?)?,
            c: ScalarField::from_values(grid, get("c")?)?,
            u: VectorField::from_components(grid, comps)?,
            pressure: ScalarField::from_values(grid, get("p")?)?,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&to_u32(self.dim)?.to_le_bytes())?;
        for &n in &self.n_cells {
            w.write_all(&to_u32(n)?.to_le_bytes())?;
        }
        for (name, data) in &self.fields {
            let want = expected_len(name, self.dim, &self.n_cells)
                .ok_or_else(|| Error::Snapshot(format!("field `{name}` does not fit dim {}", self.dim)))?;
            if data.len() != want {
                return Err(Error::Snapshot(format!(
                    "field `{name}` has {} values, expected {want}",
                    data.len()
                )));
            }
            w.write_all(&to_u32(name.len())?.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let mut buf = Vec::with_capacity(8 * data.len());
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Snapshot> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let dim = cur.u32()? as usize;
        if dim != 2 && dim != 3 {
            return Err(Error::Snapshot(format!("unsupported dim {dim}")));
        }
        let n_cells = (0..dim).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let mut fields = Vec::new();
        while cur.pos < bytes.len() {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Snapshot("field name is not UTF-8".into()))?
                .to_string();
            let count = expected_len(&name, dim, &n_cells)
                .ok_or_else(|| Error::Snapshot(format!("field `{name}` does not fit dim {dim}")))?;
            let payload = cur.take(8 * count)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            fields.push((name, data));
        }
        Ok(Snapshot { dim, n_cells, fields })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Snapshot> {
        Snapshot::read(std::fs::File::open(path)?)
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Snapshot(format!("{v} does not fit in u32")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Snapshot("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
