//! Parameter checkpoints as JSON with one shaped tensor per weight block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RnnParams, RnnShape};
use crate::{Error, Result};

const FORMAT: &str = "idf-rnn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    hidden_width: usize,
    num_layers: usize,
    tensors: Vec<Tensor>,
}

/// Named blocks in flat order: `(name, shape, start)`.
fn blocks(params: &RnnParams) -> Vec<(String, Vec<usize>, usize)> {
    let lay = params.layout();
    let h = params.hidden_width();
    let mut out = Vec::new();
    for (l, ll) in lay.layers.iter().enumerate() {
        out.push((format!("lstm.{l}.w_x"), vec![4 * h, ll.input_dim], ll.w_x));
        out.push((format!("lstm.{l}.w_h"), vec![4 * h, h], ll.w_h));
        out.push((format!("lstm.{l}.bias"), vec![4 * h], ll.bias));
    }
    out.push(("head_interval.w".into(), vec![h], lay.head_q));
    out.push(("head_interval.w0".into(), vec![1], lay.head_q + h));
    out.push(("head_size.w".into(), vec![h], lay.head_m));
    out.push(("head_size.w0".into(), vec![1], lay.head_m + h));
    out.push(("dispersion_interval".into(), vec![1], lay.disp_q));
    out.push(("dispersion_size".into(), vec![1], lay.disp_m));
    out
}

/// Writes a checkpoint document.
pub fn write_checkpoint<W: Write>(params: &RnnParams, writer: W) -> Result<()> {
    let flat = params.as_flat();
    let tensors = blocks(params)
        .into_iter()
        .map(|(name, shape, start)| {
            let n: usize = shape.iter().product();
            Tensor {
                name,
                shape,
                values: flat[start..start + n].to_vec(),
            }
        })
        .collect();
    let doc = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        hidden_width: params.hidden_width(),
        num_layers: params.num_layers(),
        tensors,
    };
    serde_json::to_writer_pretty(writer, &doc)?;
    Ok(())
}

/// Reads a checkpoint document, checking every tensor's name and shape.
pub fn read_checkpoint<R: Read>(reader: R) -> Result<RnnParams> {
    let doc: Checkpoint = serde_json::from_reader(reader)?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported checkpoint {} v{}",
            doc.format, doc.version
        )));
    }
    let shape = RnnShape::new(doc.hidden_width, doc.num_layers)?;
    let mut params = RnnParams::zeros(shape);
    let expected = blocks(&params);
    if expected.len() != doc.tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} tensors, found {}",
            expected.len(),
            doc.tensors.len()
        )));
    }
    for ((name, shape, start), t) in expected.into_iter().zip(doc.tensors) {
        if t.name != name || t.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                t.name, t.shape
            )));
        }
        if t.values.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("tensor `{name}` has wrong length")));
        }
        params.as_flat_mut()[start..start + t.values.len()].copy_from_slice(&t.values);
    }
    RnnParams::from_flat(shape, params.as_flat().to_vec())
}

pub fn save_checkpoint(params: &RnnParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<RnnParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
