//! Dataset and result file formats.
//!
//! * Records and trajectories are JSONL: a header line carrying
//!   `schema_version` and the payload kind, then one JSON object per line.
//! * Configuration, calibration and manifests are single JSON documents.
//! * Tabular analysis outputs are CSV with fixed 12-digit scientific floats
//!   so reruns diff cleanly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{BlochState, PhysicalParams, Trajectory, VoltageRecord};
use crate::sim::SimRegime;
use crate::{Result, TrajError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonlHeader {
    schema_version: u32,
    kind: String,
}

/// Dataset manifest: everything needed to reproduce a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub params: PhysicalParams,
    pub regime: SimRegime,
    pub n_records: usize,
    /// FNV-1a hash of the generating configuration document.
    pub config_hash: u64,
    pub code_version: String,
}

impl Manifest {
    pub fn new(
        params: &PhysicalParams,
        regime: &SimRegime,
        n_records: usize,
        config_hash: u64,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: "dataset".into(),
            params: params.clone(),
            regime: *regime,
            n_records,
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// FNV-1a 64-bit hash; used to stamp outputs with their configuration.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn write_jsonl<T: Serialize>(path: &Path, kind: &str, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut out,
        &JsonlHeader {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
        },
    )?;
    out.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| TrajError::InvalidRecord(format!("{}: empty file", path.display())))??;
    let header: JsonlHeader = serde_json::from_str(&header_line).map_err(|e| {
        TrajError::InvalidRecord(format!("{}: bad header: {e}", path.display()))
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(TrajError::InvalidRecord(format!(
            "{}: schema_version {} unsupported",
            path.display(),
            header.schema_version
        )));
    }
    if header.kind != kind {
        return Err(TrajError::InvalidRecord(format!(
            "{}: expected kind '{kind}', found '{}'",
            path.display(),
            header.kind
        )));
    }
    let mut items = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line)?);
    }
    Ok(items)
}

pub fn write_records(path: &Path, records: &[VoltageRecord]) -> Result<()> {
    write_jsonl(path, "records", records)
}

pub fn read_records(path: &Path) -> Result<Vec<VoltageRecord>> {
    read_jsonl(path, "records")
}

/// Ground-truth sidecar entry keyed by record id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthEntry {
    pub id: u64,
    pub dt: f64,
    pub states: Vec<[f64; 3]>,
}

impl TruthEntry {
    pub fn from_trajectory(id: u64, traj: &Trajectory) -> Self {
        Self {
            id,
            dt: traj.dt,
            states: traj.states.iter().map(|s| [s.x, s.y, s.z]).collect(),
        }
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            states: self
                .states
                .iter()
                .map(|v| BlochState::new(v[0], v[1], v[2]))
                .collect(),
            dt: self.dt,
        }
    }
}

pub fn write_truths(path: &Path, ids: &[u64], truths: &[Trajectory]) -> Result<()> {
    let entries: Vec<TruthEntry> = ids
        .iter()
        .zip(truths)
        .map(|(&id, t)| TruthEntry::from_trajectory(id, t))
        .collect();
    write_jsonl(path, "truth", &entries)
}

pub fn read_truths(path: &Path) -> Result<Vec<TruthEntry>> {
    read_jsonl(path, "truth")
}

/// Reconstructed-trajectory entry as emitted by the filters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub id: u64,
    pub variant: String,
    pub dt: f64,
    pub states: Vec<[f64; 3]>,
}

impl TrajectoryEntry {
    pub fn new(id: u64, variant: &str, traj: &Trajectory) -> Self {
        Self {
            id,
            variant: variant.into(),
            dt: traj.dt,
            states: traj.states.iter().map(|s| [s.x, s.y, s.z]).collect(),
        }
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            states: self
                .states
                .iter()
                .map(|v| BlochState::new(v[0], v[1], v[2]))
                .collect(),
            dt: self.dt,
        }
    }
}

pub fn write_trajectories(path: &Path, entries: &[TrajectoryEntry]) -> Result<()> {
    write_jsonl(path, "trajectories", entries)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    read_jsonl(path, "trajectories")
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, manifest)?;
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Deterministic CSV writer: fixed scientific formatting for floats.
pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    pub fn row(&mut self, fields: &[CsvField]) -> Result<()> {
        let mut first = true;
        for f in fields {
            if !first {
                write!(self.out, ",")?;
            }
            first = false;
            match f {
                CsvField::Float(v) => write!(self.out, "{v:.12e}")?,
                CsvField::Int(v) => write!(self.out, "{v}")?,
                CsvField::Str(s) => write!(self.out, "{s}")?,
            }
        }
        writeln!(self.out)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub enum CsvField {
    Float(f64),
    Int(i64),
    Str(String),
}

/// Block-mean coarse graining: `k` raw samples collapse into one bin, `dt`
/// grows by `k`, and white record noise variance shrinks by `1/k`. Returns
/// the coarse record and the number of trailing samples dropped when `k`
/// does not divide the length.
pub fn coarse_grain(record: &VoltageRecord, k: usize) -> Result<(VoltageRecord, usize)> {
    if k == 0 {
        return Err(TrajError::InvalidRecord("coarse_grain: k must be >= 1".into()));
    }
    if k == 1 {
        return Ok((record.clone(), 0));
    }
    let n_full = record.i_samples.len() / k;
    let dropped = record.i_samples.len() - n_full * k;
    let mut i_samples = Vec::with_capacity(n_full);
    let mut q_samples = Vec::with_capacity(n_full);
    for b in 0..n_full {
        let range = b * k..(b + 1) * k;
        i_samples.push(record.i_samples[range.clone()].iter().sum::<f64>() / k as f64);
        q_samples.push(record.q_samples[range].iter().sum::<f64>() / k as f64);
    }
    let mut out = record.clone();
    out.dt = record.dt * k as f64;
    out.i_samples = i_samples;
    out.q_samples = q_samples;
    Ok((out, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DriveSpec, RegimeKind, TomoAxis};
    use crate::rng;

    fn sample_record(id: u64) -> VoltageRecord {
        VoltageRecord {
            id,
            regime: RegimeKind::MemoryKernel,
            drive_meta: DriveSpec::constant(1.5e6),
            dt: 2e-8,
            t_m: 8e-8,
            i_samples: vec![0.25, -1.5, 3.125, 0.0625, 0.0],
            q_samples: vec![1.0, 2.0, -0.5, 0.75, 0.0],
            tomo_axis: Some(TomoAxis::Y),
            tomo_outcome: Some(0),
            init_state: BlochState::plus_z(),
        }
    }

    #[test]
    fn records_roundtrip_losslessly() {
        let dir = std::env::temp_dir().join(format!("traj_io_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("records.jsonl");
        let records = vec![sample_record(0), sample_record(1)];
        write_records(&path, &records).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, records);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truth_and_trajectory_roundtrips() {
        let dir = std::env::temp_dir().join(format!("traj_io_rt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let traj = Trajectory {
            states: vec![
                BlochState::new(0.1, -0.25, 0.75),
                BlochState::new(0.125, -0.5, 0.5),
            ],
            dt: 2e-8,
        };
        let truth_path = dir.join("truth.jsonl");
        write_truths(&truth_path, &[7], &[traj.clone()]).unwrap();
        let back = read_truths(&truth_path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, 7);
        assert_eq!(back[0].to_trajectory(), traj);

        let entries = vec![TrajectoryEntry::new(9, "analytics", &traj)];
        let traj_path = dir.join("trajectories.jsonl");
        write_trajectories(&traj_path, &entries).unwrap();
        let back = read_trajectories(&traj_path).unwrap();
        assert_eq!(back[0].variant, "analytics");
        assert_eq!(back[0].to_trajectory(), traj);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = std::env::temp_dir().join(format!("traj_io_m_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let params = PhysicalParams::device_defaults();
        let regime = SimRegime::new(RegimeKind::BoostUpdate, 99, 12);
        let manifest = Manifest::new(&params, &regime, 36, fnv1a64(b"config"));
        let path = dir.join("manifest.json");
        write_manifest(&path, &manifest).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.regime, regime);
        assert_eq!(back.config_hash, manifest.config_hash);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn header_kind_is_enforced() {
        let dir = std::env::temp_dir().join(format!("traj_io_kind_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("records.jsonl");
        write_records(&path, &[sample_record(0)]).unwrap();
        assert!(read_truths(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn coarse_grain_identity_and_block_means() {
        let rec = sample_record(3);
        let (same, dropped) = coarse_grain(&rec, 1).unwrap();
        assert_eq!(same, rec);
        assert_eq!(dropped, 0);

        let (out, dropped) = coarse_grain(&rec, 2).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(out.i_samples.len(), 2);
        assert!((out.i_samples[0] - (0.25 - 1.5) / 2.0).abs() < 1e-15);
        assert!((out.dt - 4e-8).abs() < 1e-20);
        assert!(coarse_grain(&rec, 0).is_err());
    }

    #[test]
    fn coarse_grain_scales_white_noise_variance() {
        let mut r = rng::trajectory_stream(8, 0);
        let n = 100_000;
        let mut rec = sample_record(0);
        rec.t_m = n as f64 * rec.dt;
        rec.i_samples = (0..n).map(|_| rng::normal(&mut r)).collect();
        rec.q_samples = vec![0.0; n];
        let (out, _) = coarse_grain(&rec, 4).unwrap();
        let mean: f64 = out.i_samples.iter().sum::<f64>() / out.i_samples.len() as f64;
        let var: f64 = out
            .i_samples
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / out.i_samples.len() as f64;
        assert!(
            (var - 0.25).abs() < 0.05 * 0.25,
            "variance {var} should be ~1/4"
        );
    }

    #[test]
    fn fnv_hash_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), fnv1a64(b"a"));
        assert_ne!(fnv1a64(b"a"), fnv1a64(b"b"));
    }
}
