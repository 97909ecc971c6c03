//! Parameter checkpoints: a self-describing text document with a config
//! echo, per-tensor shape headers, and shortest round-trip decimal values.
//! Loading validates every tensor against the embedded config and rejects
//! any mismatch.

use crate::error::{Result, TsatError};
use crate::model::{ImfActivation, TsatConfig, TsatParams};
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "tsat-checkpoint v1";

pub fn checkpoint_to_text(params: &TsatParams, config: &TsatConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", MAGIC);
    let _ = writeln!(out, "config");
    let _ = writeln!(out, "num_series {}", config.num_series);
    let _ = writeln!(out, "backcast_len {}", config.backcast_len);
    let _ = writeln!(out, "forecast_len {}", config.forecast_len);
    let _ = writeln!(out, "num_imfs {}", config.num_imfs);
    let _ = writeln!(out, "model_dim {}", config.model_dim);
    let _ = writeln!(out, "key_dim {}", config.key_dim);
    let _ = writeln!(out, "value_dim {}", config.value_dim);
    let _ = writeln!(out, "num_heads {}", config.num_heads);
    let _ = writeln!(out, "num_blocks {}", config.num_blocks);
    let _ = writeln!(out, "ffn_width {}", config.ffn_width);
    let _ = writeln!(out, "dropout_p {}", config.dropout_p);
    let _ = writeln!(out, "imf_activation {}", config.imf_activation);
    let _ = writeln!(out, "use_edge {}", config.use_edge);
    let _ = writeln!(out, "use_adjacency {}", config.use_adjacency);
    let _ = writeln!(out, "threshold {}", config.threshold);
    let _ = writeln!(out, "seed {}", config.seed);
    let _ = writeln!(out, "end-config");
    for (name, tensor) in params.named_tensors() {
        let _ = writeln!(out, "tensor {}", name);
        let shape: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "shape {}", shape.join(" "));
        let vals: Vec<String> = tensor.data().iter().map(|v| format!("{}", v)).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    let _ = writeln!(out, "end");
    out
}

pub fn save_checkpoint(params: &TsatParams, config: &TsatConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_text(params, config))
        .map_err(|e| TsatError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TsatConfig, TsatParams)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TsatError::io(path.display().to_string(), e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

pub fn parse_checkpoint(text: &str, path: &str) -> Result<(TsatConfig, TsatParams)> {
    let err = |detail: String| TsatError::Integrity {
        path: path.to_string(),
        detail,
    };
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    if lines.next() != Some(MAGIC) {
        return Err(err("bad magic line".to_string()));
    }
    if lines.next() != Some("config") {
        return Err(err("missing config section".to_string()));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines.by_ref() {
        if line == "end-config" {
            break;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| err(format!("bad config line {:?}", line)))?;
        fields.insert(key.to_string(), value.to_string());
    }
    let get = |key: &str| -> Result<&String> {
        fields.get(key).ok_or_else(|| TsatError::Integrity {
            path: path.to_string(),
            detail: format!("config field {:?} missing", key),
        })
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| TsatError::Integrity {
            path: path.to_string(),
            detail: format!("bad {} value", key),
        })
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| TsatError::Integrity {
            path: path.to_string(),
            detail: format!("bad {} value", key),
        })
    };
    let parse_bool = |key: &str| -> Result<bool> {
        get(key)?.parse().map_err(|_| TsatError::Integrity {
            path: path.to_string(),
            detail: format!("bad {} value", key),
        })
    };
    let config = TsatConfig {
        num_series: parse_usize("num_series")?,
        backcast_len: parse_usize("backcast_len")?,
        forecast_len: parse_usize("forecast_len")?,
        num_imfs: parse_usize("num_imfs")?,
        model_dim: parse_usize("model_dim")?,
        key_dim: parse_usize("key_dim")?,
        value_dim: parse_usize("value_dim")?,
        num_heads: parse_usize("num_heads")?,
        num_blocks: parse_usize("num_blocks")?,
        ffn_width: parse_usize("ffn_width")?,
        dropout_p: parse_f64("dropout_p")?,
        imf_activation: get("imf_activation")?.parse::<ImfActivation>()?,
        use_edge: parse_bool("use_edge")?,
        use_adjacency: parse_bool("use_adjacency")?,
        threshold: parse_f64("threshold")?,
        seed: get("seed")?.parse().map_err(|_| TsatError::Integrity {
            path: path.to_string(),
            detail: "bad seed value".to_string(),
        })?,
    };
    config.validate()?;

    // Template with the canonical tensor order and shapes for this config.
    let mut params = TsatParams::init(&config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec()))
        .collect();
    let mut loaded: Vec<Tensor> = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let header = lines
            .next()
            .ok_or_else(|| err(format!("missing tensor {:?}", name)))?;
        if header != format!("tensor {}", name) {
            return Err(err(format!(
                "tensor order mismatch: expected {:?}, found {:?}",
                name, header
            )));
        }
        let shape_line = lines
            .next()
            .ok_or_else(|| err(format!("missing shape for {:?}", name)))?;
        let found_shape: Vec<usize> = shape_line
            .strip_prefix("shape ")
            .ok_or_else(|| err(format!("bad shape line {:?}", shape_line)))?
            .split_whitespace()
            .map(|c| c.parse().map_err(|_| TsatError::Integrity {
                path: path.to_string(),
                detail: format!("bad shape entry {:?}", c),
            }))
            .collect::<Result<_>>()?;
        if &found_shape != shape {
            return Err(err(format!(
                "shape mismatch for {:?}: config implies {:?}, file has {:?}",
                name, shape, found_shape
            )));
        }
        let values_line = lines
            .next()
            .ok_or_else(|| err(format!("missing values for {:?}", name)))?;
        let data: Vec<f64> = values_line
            .split_whitespace()
            .map(|c| c.parse().map_err(|_| TsatError::Integrity {
                path: path.to_string(),
                detail: format!("bad float {:?} in {:?}", c, name),
            }))
            .collect::<Result<_>>()?;
        loaded.push(Tensor::new(shape.clone(), data).map_err(|_| TsatError::Integrity {
            path: path.to_string(),
            detail: format!("value count mismatch in {:?}", name),
        })?);
    }
    if lines.next() != Some("end") {
        return Err(err("missing end marker".to_string()));
    }
    for (slot, tensor) in params.tensors_mut().into_iter().zip(loaded) {
        *slot = tensor;
    }
    Ok((config, params))
}
