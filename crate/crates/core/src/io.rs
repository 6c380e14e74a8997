//! CSV tables, the binary matrix format and the plot script.
//!
//! Every CSV starts with `#` lines carrying the tool version, the seed and
//! the resolved configuration, followed by a header row.
//!
//! Binary matrices are little-endian: eight `u64` header words
//! (magic, version, rows, cols, four reserved zeros) then `rows * cols`
//! complex entries in row-major order, each as `f64` real then imaginary.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::ao::SweepPoint;
use crate::error::{Result, SimError};
use crate::phase::PhaseIterate;
use crate::power::PowerIterate;
use crate::propagation::CMat;

pub const MATRIX_MAGIC: u64 = u64::from_le_bytes(*b"SIMWMAT\0");
pub const MATRIX_VERSION: u64 = 1;

/// `#` lines prepended to every table.
#[derive(Debug, Clone)]
pub struct Metadata {
    pub seed: u64,
    pub resolved_config: String,
}

impl Metadata {
    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(format!("# simwave {}\n", env!("CARGO_PKG_VERSION")).as_bytes());
        out.extend_from_slice(format!("# seed: {}\n", self.seed).as_bytes());
        out.extend_from_slice(format!("# config: {}\n", self.resolved_config).as_bytes());
    }
}

fn table(meta: &Metadata, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    meta.write_to(&mut buf);
    let mut writer = csv::Writer::from_writer(buf);
    let csv_err = |e: csv::Error| SimError::Config(format!("csv: {e}"));
    writer.write_record(&header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer
        .into_inner()
        .map_err(|e| SimError::Config(format!("csv: {}", e.error())))
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone)]
pub struct RateRow {
    pub run_id: String,
    pub num_atoms: usize,
    pub num_layers: usize,
    pub power_budget_dbm: f64,
    pub seed: u64,
    pub sinr: Vec<f64>,
    pub sum_se: f64,
}

/// `run_id, N, L, K, P_T_dbm, seed, gamma_1..gamma_K, sum_se`.
pub fn rates_csv(meta: &Metadata, rows: &[RateRow]) -> Result<Vec<u8>> {
    let k = rows.first().map_or(0, |r| r.sinr.len());
    if rows.iter().any(|r| r.sinr.len() != k) {
        return Err(SimError::DimensionMismatch("rate rows with different user counts".into()));
    }
    let mut header: Vec<String> = ["run_id", "N", "L", "K", "P_T_dbm", "seed"].map(String::from).to_vec();
    header.extend((1..=k).map(|i| format!("gamma_{i}")));
    header.push("sum_se".into());
    let body = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.run_id.clone(),
                r.num_atoms.to_string(),
                r.num_layers.to_string(),
                k.to_string(),
                num(r.power_budget_dbm),
                r.seed.to_string(),
            ];
            row.extend(r.sinr.iter().map(|&g| num(g)));
            row.push(num(r.sum_se));
            row
        })
        .collect();
    table(meta, header, body)
}

/// `iteration, objective, step_size, backtracks`.
pub fn phase_trajectory_csv(meta: &Metadata, iterates: &[PhaseIterate]) -> Result<Vec<u8>> {
    let header = ["iteration", "objective", "step_size", "backtracks"].map(String::from).to_vec();
    let body = iterates
        .iter()
        .enumerate()
        .map(|(i, it)| vec![i.to_string(), num(it.objective), num(it.step), it.backtracks.to_string()])
        .collect();
    table(meta, header, body)
}

/// `iteration, sum_se, p_1..p_K`.
pub fn power_trajectory_csv(meta: &Metadata, iterates: &[PowerIterate]) -> Result<Vec<u8>> {
    let k = iterates.first().map_or(0, |it| it.powers.len());
    let mut header = vec!["iteration".to_string(), "sum_se".to_string()];
    header.extend((1..=k).map(|i| format!("p_{i}")));
    let body = iterates
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let mut row = vec![i.to_string(), num(it.sum_se)];
            row.extend(it.powers.iter().map(|&p| num(p)));
            row
        })
        .collect();
    table(meta, header, body)
}

/// `iteration, start_1..start_S`; cells past a start's last iteration are
/// left empty.
pub fn convergence_csv(meta: &Metadata, trajectories: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=trajectories.len()).map(|s| format!("start_{s}")));
    let len = trajectories.iter().map(Vec::len).max().unwrap_or(0);
    let body = (0..len)
        .map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(trajectories.iter().map(|t| t.get(i).map_or(String::new(), |&v| num(v))));
            row
        })
        .collect();
    table(meta, header, body)
}

/// `<axis>, mean_sum_se, drop_1..drop_D`.
pub fn sweep_csv(meta: &Metadata, axis: &str, points: &[SweepPoint]) -> Result<Vec<u8>> {
    let drops = points.first().map_or(0, |p| p.per_drop.len());
    let mut header = vec![axis.to_string(), "mean_sum_se".to_string()];
    header.extend((1..=drops).map(|d| format!("drop_{d}")));
    let body = points
        .iter()
        .map(|p| {
            let mut row = vec![p.value.to_string(), num(p.mean_sum_se)];
            row.extend(p.per_drop.iter().map(|&v| num(v)));
            row
        })
        .collect();
    table(meta, header, body)
}

pub fn write_matrix<W: Write>(out: &mut W, m: &CMat) -> Result<()> {
    let header = [MATRIX_MAGIC, MATRIX_VERSION, m.nrows() as u64, m.ncols() as u64, 0, 0, 0, 0];
    let mut buf = Vec::with_capacity(64 + 16 * m.len());
    for word in header {
        buf.extend_from_slice(&word.to_le_bytes());
    }
    for row in m.row_iter() {
        for z in row.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn matrix_bytes(m: &CMat) -> Vec<u8> {
    let mut buf = Vec::new();
    write_matrix(&mut buf, m).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_matrix<R: Read>(input: &mut R) -> Result<CMat> {
    let mut word = [0u8; 8];
    let mut header = [0u64; 8];
    for h in header.iter_mut() {
        input.read_exact(&mut word)?;
        *h = u64::from_le_bytes(word);
    }
    if header[0] != MATRIX_MAGIC {
        return Err(SimError::Config("not a simwave matrix file".into()));
    }
    if header[1] != MATRIX_VERSION {
        return Err(SimError::Config(format!("unsupported matrix version {}", header[1])));
    }
    let (rows, cols) = (header[2] as usize, header[3] as usize);
    let mut data = vec![0u8; rows.checked_mul(cols).and_then(|n| n.checked_mul(16)).ok_or_else(|| {
        SimError::Config("matrix dimensions overflow".into())
    })?];
    input.read_exact(&mut data)?;
    let f = |i: usize| f64::from_le_bytes(data[8 * i..8 * i + 8].try_into().expect("8-byte slice"));
    Ok(CMat::from_fn(rows, cols, |r, c| {
        let i = 2 * (r * cols + c);
        Complex64::new(f(i), f(i + 1))
    }))
}

/// Standalone matplotlib script; run it inside the output directory.
pub const PLOT_SCRIPT: &str = r##"import os
import pandas as pd
import matplotlib.pyplot as plt


def load(name):
    return pd.read_csv(name, comment="#") if os.path.exists(name) else None


sweep_n = load("sweep_n.csv")
if sweep_n is not None:
    plt.figure()
    plt.plot(sweep_n["N"], sweep_n["mean_sum_se"], "o-")
    plt.xlabel("meta-atoms per layer N")
    plt.ylabel("sum SE [bit/s/Hz]")
    plt.grid(True)
    plt.savefig("sweep_n.png", dpi=150)

sweep_l = load("sweep_l.csv")
if sweep_l is not None:
    plt.figure()
    plt.plot(sweep_l["L"], sweep_l["mean_sum_se"], "s-")
    plt.xlabel("layers L")
    plt.ylabel("sum SE [bit/s/Hz]")
    plt.grid(True)
    plt.savefig("sweep_l.png", dpi=150)

converge = load("converge.csv")
if converge is not None:
    plt.figure()
    for col in converge.columns[1:]:
        plt.plot(converge["iteration"], converge[col], label=col)
    plt.xlabel("outer iteration")
    plt.ylabel("sum SE [bit/s/Hz]")
    plt.legend()
    plt.grid(True)
    plt.savefig("converge.png", dpi=150)
"##;
