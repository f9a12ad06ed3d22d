//! Checkpoint file: `GCK1` magic, u32 header length, JSON header (configs,
//! step, RNG state, tensor manifest with byte offsets), then a raw
//! little-endian f32 blob holding parameters and optimizer moments.

use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::{AdamMoments, ModelParams, TensorInfo};
use super::train::TrainState;
use super::{ModelConfig, TrainConfig};

const CHECKPOINT_MAGIC: &[u8; 4] = b"GCK1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: u64,
    /// Stream position of the shuffle RNG, decimal u128.
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    #[serde(flatten)]
    info: TensorInfo,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    epochs_done: usize,
    rng: RngState,
    manifest: Vec<ManifestEntry>,
}

fn build_manifest(params: &ModelParams<f32>) -> Vec<ManifestEntry> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (prefix, tensors) in [
        ("param", params.manifest()),
        ("adam_m", params.manifest()),
        ("adam_v", params.manifest()),
    ] {
        for info in tensors {
            let numel: usize = info.shape.iter().product();
            entries.push(ManifestEntry {
                info: TensorInfo {
                    name: format!("{prefix}/{}", info.name),
                    shape: info.shape,
                },
                offset,
            });
            offset += numel as u64 * 4;
        }
    }
    entries
}

pub fn save_checkpoint<W: Write>(
    mut w: W,
    state: &TrainState<f32>,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(), CheckpointError> {
    let header = Header {
        model: mcfg.clone(),
        train: tcfg.clone(),
        step: state.step,
        epochs_done: state.epochs_done,
        rng: RngState {
            seed: state.seed,
            word_pos: state.rng.get_word_pos().to_string(),
        },
        manifest: build_manifest(&state.params),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for group in [&state.params, &state.moments.m, &state.moments.v] {
        for slice in group.slices() {
            for &value in slice {
                w.write_all(&value.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(
    mut r: R,
) -> Result<(TrainState<f32>, ModelConfig, TrainConfig), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let header_len = u32::from_le_bytes(len4) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    let mut params = ModelParams::<f32>::zeros(&header.model);
    let mut moments = AdamMoments::zeros_like(&params);
    let expected = build_manifest(&params);
    if expected.len() != header.manifest.len() {
        return Err(CheckpointError::Format(format!(
            "manifest length {} does not match configuration ({} expected)",
            header.manifest.len(),
            expected.len()
        )));
    }
    for (have, want) in header.manifest.iter().zip(&expected) {
        if have.info != want.info || have.offset != want.offset {
            return Err(CheckpointError::Format(format!(
                "manifest entry {} diverges from configuration",
                have.info.name
            )));
        }
    }

    let mut buf = [0u8; 4];
    for group in [&mut params, &mut moments.m, &mut moments.v] {
        for slice in group.slices_mut() {
            for value in slice {
                r.read_exact(&mut buf)?;
                *value = f32::from_le_bytes(buf);
            }
        }
    }

    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| CheckpointError::Format("bad rng word_pos".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(header.rng.seed);
    rng.set_word_pos(word_pos);

    let state = TrainState {
        params,
        moments,
        step: header.step,
        epochs_done: header.epochs_done,
        rng,
        seed: header.rng.seed,
    };
    Ok((state, header.model, header.train))
}
