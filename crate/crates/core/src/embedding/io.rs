//! Model persistence: `model.json` manifest plus `blocks.bin`.
//!
//! `blocks.bin` is a sequence of little-endian `f64` in row-major order.
//! History blocks come first (Dense/Tensor: receiver-major, neighbourhood
//! slot minor; Hom: by source node; HomMean: the single shared operator),
//! followed by the action blocks in receiver-major, slot-minor order.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingModel, Form, HistoryBlocks};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mean_field::GibbsPotential;

const FORMAT_TAG: &str = "gce-model/1";
const BLOCKS_FILE: &str = "blocks.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    form: Form,
    feature_dim: usize,
    action_dim: usize,
    lambda: f64,
    potential: Option<GibbsPotential>,
    graph: Graph,
    layout: String,
    blocks_file: String,
    values: usize,
    sha256: String,
}

fn push(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let need = rows * cols * 8;
        if self.pos + need > self.bytes.len() {
            return Err(Error::Format("block file is truncated".into()));
        }
        let chunk = &self.bytes[self.pos..self.pos + need];
        self.pos += need;
        Ok(DMatrix::from_row_iterator(
            rows,
            cols,
            chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))),
        ))
    }
}

impl EmbeddingModel {
    fn block_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match &self.history {
            HistoryBlocks::PerPair(b) => b.iter().flatten().for_each(|m| push(&mut out, m)),
            HistoryBlocks::PerSource(b) => b.iter().for_each(|m| push(&mut out, m)),
            HistoryBlocks::Shared(m) => push(&mut out, m),
        }
        self.action.iter().flatten().for_each(|m| push(&mut out, m));
        out
    }

    /// SHA-256 of the serialized blocks.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.block_bytes()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let bytes = self.block_bytes();
        let manifest = Manifest {
            format: FORMAT_TAG.into(),
            form: self.form,
            feature_dim: self.feature_dim,
            action_dim: self.action_dim,
            lambda: self.lambda,
            potential: self.potential,
            graph: self.graph.clone(),
            layout: "row-major f64 little-endian; history blocks then action blocks".into(),
            blocks_file: BLOCKS_FILE.into(),
            values: bytes.len() / 8,
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        fs::write(dir.join(BLOCKS_FILE), &bytes)?;
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        fs::write(dir.join("model.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("model.json"))?)?;
        if manifest.format != FORMAT_TAG {
            return Err(Error::Format(format!("unknown model format {}", manifest.format)));
        }
        let bytes = fs::read(dir.join(&manifest.blocks_file))?;
        if hex::encode(Sha256::digest(&bytes)) != manifest.sha256 {
            return Err(Error::Format("model block checksum mismatch".into()));
        }
        let g = manifest.graph;
        let (d, da) = (manifest.feature_dim, manifest.action_dim);
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let n = g.n();
        let history = match manifest.form {
            Form::Dense | Form::Tensor => {
                let cols = if manifest.form == Form::Tensor { d * da } else { d };
                HistoryBlocks::PerPair(
                    (0..n)
                        .map(|i| g.hood(i).iter().map(|_| r.matrix(d, cols)).collect::<Result<Vec<_>>>())
                        .collect::<Result<_>>()?,
                )
            }
            Form::Hom => HistoryBlocks::PerSource((0..n).map(|_| r.matrix(d, d)).collect::<Result<_>>()?),
            Form::HomMean => HistoryBlocks::Shared(r.matrix(d, d)?),
        };
        let action = if manifest.form == Form::Tensor {
            Vec::new()
        } else {
            (0..n)
                .map(|i| g.hood(i).iter().map(|_| r.matrix(d, da)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?
        };
        if r.pos != bytes.len() {
            return Err(Error::Format("block file has trailing data".into()));
        }
        if manifest.form == Form::HomMean && manifest.potential.is_none() {
            return Err(Error::Format("hom_mean model without a potential".into()));
        }
        Ok(EmbeddingModel {
            form: manifest.form,
            graph: g,
            feature_dim: d,
            action_dim: da,
            lambda: manifest.lambda,
            potential: manifest.potential,
            history,
            action,
        })
    }
}
