//! Checkpoint format (FDPM): denoiser config, grid description, iteration
//! counter, parameter tensors, and optionally the full optimizer state so
//! training resumes bit-exactly.
//!
//! Layout, integers little-endian:
//!   magic  b"FDPM" | version u32 (currently 1)
//!   config: target_channels, cond_channels, base_width, levels,
//!           time_embed_dim, image_size (u32 each)
//!   grid:   t_base u64 | beta_start f64 | beta_end f64 | s_steps u32 |
//!           kind u8 (0 uniform, 1 non-uniform) | boundary u64 |
//!           late_fraction f64 | base indices u64 × s_steps
//!   iteration u64
//!   params: count u32 | FDT1 records in schema order
//!   adam:   present u8 | lr, beta1, beta2, eps f64 | step u64 |
//!           m records | v records

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::denoiser::{DenoiserConfig, DenoiserNet};
use crate::error::{Error, Result};
use crate::numerics::io::{read_tensor, write_tensor};
use crate::numerics::{AdamConfig, AdamState, Tensor};
use crate::schedule::{BaseSchedule, SchedulerKind, StepGrid};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FDPM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable description of (base schedule, step grid).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub t_base: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub s_steps: usize,
    pub kind: SchedulerKind,
}

impl GridSpec {
    pub fn build(&self) -> Result<(BaseSchedule, StepGrid)> {
        let base = BaseSchedule::new(self.t_base, self.beta_start, self.beta_end)?;
        let grid = StepGrid::subsample(&base, self.s_steps, self.kind)?;
        Ok((base, grid))
    }
}

/// Everything needed to resume or sample from a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: DenoiserConfig,
    pub grid: GridSpec,
    pub iteration: u64,
    pub params: Vec<Tensor<f32>>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn into_net(self) -> Result<(DenoiserNet<f32>, GridSpec, u64, Option<AdamState<f32>>)> {
        let net = DenoiserNet::from_params(self.config, self.params)?;
        Ok((net, self.grid, self.iteration, self.adam))
    }
}

fn u32_of(x: usize) -> u32 {
    x as u32
}

pub fn save_checkpoint(
    path: &Path,
    net: &DenoiserNet<f32>,
    grid: &GridSpec,
    iteration: u64,
    adam: Option<&AdamState<f32>>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;

    let c = net.config();
    for v in [
        c.target_channels,
        c.cond_channels,
        c.base_width,
        c.levels,
        c.time_embed_dim,
        c.image_size,
    ] {
        w.write_all(&u32_of(v).to_le_bytes())?;
    }

    w.write_all(&(grid.t_base as u64).to_le_bytes())?;
    w.write_all(&grid.beta_start.to_le_bytes())?;
    w.write_all(&grid.beta_end.to_le_bytes())?;
    w.write_all(&u32_of(grid.s_steps).to_le_bytes())?;
    let (kind_code, boundary, late): (u8, u64, f64) = match grid.kind {
        SchedulerKind::Uniform => (0, 0, 0.0),
        SchedulerKind::NonUniform {
            boundary_index,
            late_fraction,
        } => (1, boundary_index as u64, late_fraction),
    };
    w.write_all(&[kind_code])?;
    w.write_all(&boundary.to_le_bytes())?;
    w.write_all(&late.to_le_bytes())?;
    let (_, rebuilt) = grid.build()?;
    for &i in rebuilt.indices() {
        w.write_all(&(i as u64).to_le_bytes())?;
    }

    w.write_all(&iteration.to_le_bytes())?;

    w.write_all(&u32_of(net.params().len()).to_le_bytes())?;
    for p in net.params() {
        write_tensor(&mut w, p)?;
    }

    match adam {
        None => w.write_all(&[0u8])?,
        Some(st) => {
            w.write_all(&[1u8])?;
            for v in [st.config.lr, st.config.beta1, st.config.beta2, st.config.eps] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&st.step.to_le_bytes())?;
            for t in st.m.iter().chain(st.v.iter()) {
                write_tensor(&mut w, t)?;
            }
        }
    }
    Ok(())
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r, 4)?.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_bytes(r, 8)?.try_into().unwrap()))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_bytes(r, 8)?.try_into().unwrap()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(
        fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?,
    );
    let magic = read_bytes(&mut r, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:02x?} (expected {CHECKPOINT_MAGIC:02x?})",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version}, this build reads version {CHECKPOINT_VERSION}",
            path.display()
        )));
    }

    let mut cfg = [0usize; 6];
    for v in cfg.iter_mut() {
        *v = read_u32(&mut r)? as usize;
    }
    let config = DenoiserConfig {
        target_channels: cfg[0],
        cond_channels: cfg[1],
        base_width: cfg[2],
        levels: cfg[3],
        time_embed_dim: cfg[4],
        image_size: cfg[5],
    };

    let t_base = read_u64(&mut r)? as usize;
    let beta_start = read_f64(&mut r)?;
    let beta_end = read_f64(&mut r)?;
    let s_steps = read_u32(&mut r)? as usize;
    let kind_code = read_bytes(&mut r, 1)?[0];
    let boundary = read_u64(&mut r)? as usize;
    let late_fraction = read_f64(&mut r)?;
    let kind = match kind_code {
        0 => SchedulerKind::Uniform,
        1 => SchedulerKind::NonUniform {
            boundary_index: boundary,
            late_fraction,
        },
        c => {
            return Err(Error::Checkpoint(format!(
                "unknown scheduler kind code {c}"
            )))
        }
    };
    let grid = GridSpec {
        t_base,
        beta_start,
        beta_end,
        s_steps,
        kind,
    };
    let mut stored_indices = Vec::with_capacity(s_steps);
    for _ in 0..s_steps {
        stored_indices.push(read_u64(&mut r)? as usize);
    }
    let (_, rebuilt) = grid.build()?;
    if rebuilt.indices() != stored_indices.as_slice() {
        return Err(Error::Checkpoint(format!(
            "stored grid indices {stored_indices:?} disagree with the rebuilt grid {:?}",
            rebuilt.indices()
        )));
    }

    let iteration = read_u64(&mut r)?;

    let n_params = read_u32(&mut r)? as usize;
    if n_params > 100_000 {
        return Err(Error::Checkpoint(format!(
            "implausible parameter count {n_params}"
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(read_tensor::<f32, _>(&mut r)?);
    }

    let adam_flag = read_bytes(&mut r, 1)?[0];
    let adam = match adam_flag {
        0 => None,
        1 => {
            let lr = read_f64(&mut r)?;
            let beta1 = read_f64(&mut r)?;
            let beta2 = read_f64(&mut r)?;
            let eps = read_f64(&mut r)?;
            let step = read_u64(&mut r)?;
            let mut m = Vec::with_capacity(n_params);
            for _ in 0..n_params {
                m.push(read_tensor::<f32, _>(&mut r)?);
            }
            let mut v = Vec::with_capacity(n_params);
            for _ in 0..n_params {
                v.push(read_tensor::<f32, _>(&mut r)?);
            }
            let mut st = AdamState::new(
                AdamConfig {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
                &params,
            );
            st.step = step;
            st.m = m;
            st.v = v;
            Some(st)
        }
        c => {
            return Err(Error::Checkpoint(format!(
                "bad optimizer-state flag {c}"
            )))
        }
    };

    Ok(Checkpoint {
        config,
        grid,
        iteration,
        params,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;

    fn grid_spec() -> GridSpec {
        GridSpec {
            t_base: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            s_steps: 10,
            kind: SchedulerKind::non_uniform_default(1000),
        }
    }

    fn tmpfile(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("fastdiff-ckpt-{tag}-{}.fdpm", std::process::id()))
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let cfg = DenoiserConfig {
            target_channels: 1,
            cond_channels: 2,
            base_width: 4,
            levels: 2,
            time_embed_dim: 8,
            image_size: 16,
        };
        let net = DenoiserNet::<f32>::init(cfg, &mut RandomSource::new(42)).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), net.params());
        // make the moments non-trivial
        let grads: Vec<Tensor<f32>> = net
            .params()
            .iter()
            .map(|p| Tensor::full(p.shape(), 0.01))
            .collect();
        let mut net2 = net.clone();
        adam.step(net2.params_mut(), &grads).unwrap();

        let path = tmpfile("rt");
        save_checkpoint(&path, &net2, &grid_spec(), 1234, Some(&adam)).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.iteration, 1234);
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.grid, grid_spec());
        for (a, b) in ck.params.iter().zip(net2.params()) {
            assert_eq!(a.to_bytes(), b.to_bytes());
        }
        let st = ck.adam.as_ref().unwrap();
        assert_eq!(st.step, 1);
        assert_eq!(st.config, AdamConfig::default());
        for (a, b) in st.m.iter().zip(adam.m.iter()) {
            assert_eq!(a.to_bytes(), b.to_bytes());
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn rejects_corruption_with_diagnostics() {
        let cfg = DenoiserConfig {
            base_width: 4,
            levels: 2,
            time_embed_dim: 8,
            image_size: 16,
            ..DenoiserConfig::default()
        };
        let net = DenoiserNet::<f32>::init(cfg, &mut RandomSource::new(1)).unwrap();
        let path = tmpfile("bad");
        save_checkpoint(&path, &net, &grid_spec(), 7, None).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'F';
        bytes[4] = 9; // version
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");

        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_checkpoint(Path::new("/nonexistent/x.fdpm"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("x.fdpm"));
    }
}
