//! Dataset and checkpoint file formats.
//!
//! # Dataset container (`.bin`)
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic      8 bytes   "DOADS001"
//! header_len u64       length of the JSON header in bytes
//! header     bytes     JSON: {"config": SimConfig, "array": ArrayParams}
//! n_scenes   u64
//! per scene:
//!   m        u32       number of sources
//!   n        u32       number of antennas
//!   t        u32       number of snapshots
//!   thetas   m   * f64 radians, ascending
//!   x        n*t * (f64, f64)  (re, im) pairs, antenna-major: the
//!                      sample of antenna i at snapshot j sits at pair
//!                      index i*t + j
//! ```
//!
//! # Checkpoint (`.json`)
//!
//! A JSON object `{"magic": "DOACKPT1", "epoch": ..., "config":
//! TrainConfig, "array": ArrayParams}`. Floats round-trip exactly in
//! both formats.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::array::ArrayParams;
use crate::error::{Error, Result};
use crate::sim::{Scene, SimConfig, SnapshotMatrix};
use crate::train::TrainConfig;

const DATASET_MAGIC: &[u8; 8] = b"DOADS001";
const CHECKPOINT_MAGIC: &str = "DOACKPT1";

/// A dataset on disk: the generating config, the physical array, and the
/// scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SimConfig,
    pub physical: ArrayParams,
    pub scenes: Vec<Scene>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    config: SimConfig,
    array: ArrayParams,
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(DATASET_MAGIC)?;
    let header = serde_json::to_vec(&DatasetHeader {
        config: dataset.config.clone(),
        array: dataset.physical.clone(),
    })?;
    w.write_u64::<LittleEndian>(header.len() as u64)?;
    w.write_all(&header)?;
    w.write_u64::<LittleEndian>(dataset.scenes.len() as u64)?;
    for scene in &dataset.scenes {
        let n = scene.snapshots.nrows();
        let t = scene.snapshots.ncols();
        w.write_u32::<LittleEndian>(scene.thetas.len() as u32)?;
        w.write_u32::<LittleEndian>(n as u32)?;
        w.write_u32::<LittleEndian>(t as u32)?;
        for &theta in &scene.thetas {
            w.write_f64::<LittleEndian>(theta)?;
        }
        for i in 0..n {
            for j in 0..t {
                let v = scene.snapshots[(i, j)];
                w.write_f64::<LittleEndian>(v.re)?;
                w.write_f64::<LittleEndian>(v.im)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a dataset file (bad magic)",
            path.display()
        )));
    }
    let header_len = r.read_u64::<LittleEndian>()? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: DatasetHeader = serde_json::from_slice(&header)?;
    let n_scenes = r.read_u64::<LittleEndian>()? as usize;
    let mut scenes = Vec::with_capacity(n_scenes);
    for _ in 0..n_scenes {
        let m = r.read_u32::<LittleEndian>()? as usize;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let t = r.read_u32::<LittleEndian>()? as usize;
        let mut thetas = Vec::with_capacity(m);
        for _ in 0..m {
            thetas.push(r.read_f64::<LittleEndian>()?);
        }
        let mut x = SnapshotMatrix::zeros(n, t);
        for i in 0..n {
            for j in 0..t {
                let re = r.read_f64::<LittleEndian>()?;
                let im = r.read_f64::<LittleEndian>()?;
                x[(i, j)] = Complex64::new(re, im);
            }
        }
        scenes.push(Scene {
            thetas,
            snapshots: x,
        });
    }
    Ok(Dataset {
        config: header.config,
        physical: header.array,
        scenes,
    })
}

/// Serialized training state: the learned array plus enough context to
/// reproduce or resume the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    magic: String,
    pub epoch: usize,
    pub config: TrainConfig,
    pub array: ArrayParams,
}

impl Checkpoint {
    pub fn new(epoch: usize, config: TrainConfig, array: ArrayParams) -> Self {
        Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            epoch,
            config,
            array,
        }
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, checkpoint)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    if checkpoint.magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint file (magic {:?})",
            path.display(),
            checkpoint.magic
        )));
    }
    Ok(checkpoint)
}
