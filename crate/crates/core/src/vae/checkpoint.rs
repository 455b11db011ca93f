//! Plain-text VAE checkpoint.
//!
//! ```text
//! shiftcp-vae 1
//! input_dim 8
//! hidden_dim 32
//! latent_dim 4
//! beta 1.2
//! seed 42
//! tensor encoder_hidden.weight 32 8
//! <32 lines of 8 space-separated values>
//! tensor encoder_hidden.bias 1 32
//! <1 line of 32 values>
//! ...
//! ```
//!
//! Ten tensors follow in fixed order (encoder hidden, mean and log-variance
//! heads, decoder hidden, decoder output; weight then bias for each). Weights
//! are `rows = n_out`, `cols = n_in`, row-major; biases are one row. Values use
//! Rust's shortest round-trip decimal form, so a read after a write restores
//! every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dense, VaeParams, TENSOR_NAMES};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "shiftcp-vae";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: VaeParams,
    pub beta: f64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "input_dim {}", p.input_dim());
        let _ = writeln!(out, "hidden_dim {}", p.hidden_dim());
        let _ = writeln!(out, "latent_dim {}", p.latent_dim());
        let _ = writeln!(out, "beta {}", self.beta);
        let _ = writeln!(out, "seed {}", self.seed);
        for (name, (values, (rows, cols))) in TENSOR_NAMES
            .iter()
            .zip(p.tensors().into_iter().zip(tensor_shapes(p)))
        {
            let _ = writeln!(out, "tensor {name} {rows} {cols}");
            for row in values.chunks(cols) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::schema(path, format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| {
                Error::schema(path, format!("unexpected end of file, expected {what}"))
            })
        };

        let (n, magic) = next("header")?;
        let version = magic
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| err(n, format!("expected `{CHECKPOINT_MAGIC} <version>`")))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(err(
                n,
                format!("unsupported checkpoint version `{version}`"),
            ));
        }

        let mut field = |key: &str| -> Result<String> {
            let (n, line) = next(key)?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(err(n, format!("expected `{key} <value>`"))),
            }
        };
        let parse_usize = |s: String, key: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::schema(path, format!("{key}: `{s}` is not a count")))
        };
        let input_dim = parse_usize(field("input_dim")?, "input_dim")?;
        let hidden_dim = parse_usize(field("hidden_dim")?, "hidden_dim")?;
        let latent_dim = parse_usize(field("latent_dim")?, "latent_dim")?;
        let beta_raw = field("beta")?;
        let beta: f64 = beta_raw
            .parse()
            .map_err(|_| Error::schema(path, format!("beta: `{beta_raw}` is not a number")))?;
        let seed_raw = field("seed")?;
        let seed: u64 = seed_raw
            .parse()
            .map_err(|_| Error::schema(path, format!("seed: `{seed_raw}` is not an integer")))?;

        let mut params = VaeParams::zeros(input_dim, hidden_dim, latent_dim);
        let shapes = tensor_shapes(&params);
        for (t, name) in TENSOR_NAMES.iter().enumerate() {
            let (rows, cols) = shapes[t];
            let (n, header) = next("tensor header")?;
            let expected = format!("tensor {name} {rows} {cols}");
            if header != expected {
                return Err(err(n, format!("expected `{expected}`, found `{header}`")));
            }
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, line) = next("tensor row")?;
                let row = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| err(n, format!("bad value in {name}: {e}")))?;
                if row.len() != cols {
                    return Err(err(
                        n,
                        format!("{name} row has {} values, expected {cols}", row.len()),
                    ));
                }
                if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                    return Err(err(n, format!("{name} holds non-finite value {v}")));
                }
                values.extend(row);
            }
            *params.tensors_mut()[t] = values;
        }
        if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(n, format!("trailing content `{extra}`")));
        }
        Ok(Self { params, beta, seed })
    }
}

fn tensor_shapes(p: &VaeParams) -> [(usize, usize); 10] {
    let shape = |d: &Dense| [(d.n_out, d.n_in), (1, d.n_out)];
    let [a, b] = shape(&p.encoder_hidden);
    let [c, d] = shape(&p.encoder_mean);
    let [e, f] = shape(&p.encoder_log_var);
    let [g, h] = shape(&p.decoder_hidden);
    let [i, j] = shape(&p.decoder_out);
    [a, b, c, d, e, f, g, h, i, j]
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_text()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_text(&text, path)
}
