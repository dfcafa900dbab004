//! Text checkpoint with every float stored as the hexadecimal form of its
//! IEEE-754 bits, so save/load is bit-exact.
//!
//! ```text
//! COUNTER-MODEL 1
//! config_hash <hash or ->
//! r <r>
//! train <lr-bits> <epochs> <batch_size> <negative_ratio> <seed>
//! layer <index> <outputs> <inputs>
//! w <bits> ...        (one line per output unit)
//! b <bits> ...
//! end
//! ```

use std::io::{BufRead, Write};

use super::model::{Dense, RecommenderModel, TrainHyper, HIDDEN};
use crate::error::{CoreError, Result};

pub const CHECKPOINT_MAGIC: &str = "COUNTER-MODEL";
const VERSION: u32 = 1;

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| CoreError::Checkpoint(format!("bad float `{s}`")))
}

fn join_hex(values: &[f64]) -> String {
    values.iter().map(|&v| hex(v)).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(
    model: &RecommenderModel,
    config_hash: Option<&str>,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC} {VERSION}")?;
    writeln!(w, "config_hash {}", config_hash.unwrap_or("-"))?;
    writeln!(w, "r {}", model.r())?;
    let h = &model.hyper;
    writeln!(
        w,
        "train {} {} {} {} {}",
        hex(h.learning_rate),
        h.epochs,
        h.batch_size,
        h.negative_ratio,
        model.seed
    )?;
    for (idx, layer) in model.layers().iter().enumerate() {
        writeln!(w, "layer {idx} {} {}", layer.outputs, layer.inputs)?;
        for o in 0..layer.outputs {
            writeln!(w, "w {}", join_hex(layer.row(o)))?;
        }
        writeln!(w, "b {}", join_hex(&layer.bias))?;
    }
    writeln!(w, "end")
}

struct Lines<R> {
    inner: std::io::Lines<R>,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self, what: &str) -> Result<String> {
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(CoreError::Checkpoint(format!("truncated before {what}"))),
        }
    }

    fn expect(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next_line(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(CoreError::Checkpoint(format!("expected `{key}`, got `{line}`")));
        }
        Ok(parts.map(str::to_string).collect())
    }
}

fn parse_num<T: std::str::FromStr>(s: Option<&String>, what: &str) -> Result<T> {
    s.and_then(|v| v.parse().ok())
        .ok_or_else(|| CoreError::Checkpoint(format!("bad {what}")))
}

/// Reads a checkpoint; returns the model and its recorded config hash.
pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<(RecommenderModel, Option<String>)> {
    let mut lines = Lines {
        inner: reader.lines(),
    };
    let header = lines.expect(CHECKPOINT_MAGIC)?;
    if parse_num::<u32>(header.first(), "version")? != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported version {}",
            header[0]
        )));
    }
    let hash = lines.expect("config_hash")?;
    let hash = hash.first().filter(|h| h.as_str() != "-").cloned();
    let r: usize = parse_num(lines.expect("r")?.first(), "r")?;
    let t = lines.expect("train")?;
    let hyper = TrainHyper {
        learning_rate: unhex(t.first().map(String::as_str).unwrap_or_default())?,
        epochs: parse_num(t.get(1), "epochs")?,
        batch_size: parse_num(t.get(2), "batch_size")?,
        negative_ratio: parse_num(t.get(3), "negative_ratio")?,
    };
    let seed: u64 = parse_num(t.get(4), "seed")?;

    let shapes = [(2 * r, HIDDEN[0]), (HIDDEN[0], HIDDEN[1]), (HIDDEN[1], 1)];
    let mut layers = Vec::with_capacity(3);
    for (idx, (inputs, outputs)) in shapes.into_iter().enumerate() {
        let head = lines.expect("layer")?;
        let got: (usize, usize, usize) = (
            parse_num(head.first(), "layer index")?,
            parse_num(head.get(1), "layer outputs")?,
            parse_num(head.get(2), "layer inputs")?,
        );
        if got != (idx, outputs, inputs) {
            return Err(CoreError::Checkpoint(format!(
                "layer {idx}: expected {outputs}x{inputs}, found {}x{}",
                got.1, got.2
            )));
        }
        let mut weights = Vec::with_capacity(inputs * outputs);
        for _ in 0..outputs {
            let row = lines.expect("w")?;
            if row.len() != inputs {
                return Err(CoreError::Checkpoint(format!("layer {idx}: short weight row")));
            }
            for v in &row {
                weights.push(unhex(v)?);
            }
        }
        let bias = lines
            .expect("b")?
            .iter()
            .map(|v| unhex(v))
            .collect::<Result<Vec<_>>>()?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            bias,
        });
    }
    lines.expect("end")?;
    let layers: [Dense; 3] = layers.try_into().expect("three layers");
    Ok((RecommenderModel::from_layers(r, layers, hyper, seed)?, hash))
}
