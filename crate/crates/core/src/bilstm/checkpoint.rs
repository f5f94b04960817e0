//! Model checkpoints: a text header listing the configuration and every
//! tensor's name and shape, an `end` line, then the tensors as little-endian
//! `f64` in header order.

use std::fs;
use std::path::Path;

use super::{BilstmModel, Network, NetworkConfig, Standardizer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "somnoscat-bilstm v1";

fn render_header(model: &BilstmModel) -> String {
    let c = &model.network.config;
    let mut h = format!(
        "{CHECKPOINT_MAGIC}\ninput_dim={}\nlayers={}\nhidden={}\nleaky_slope={:?}\nbidirectional={}\nsource_dim={}\n",
        c.input_dim, c.layers, c.hidden, c.leaky_slope, c.bidirectional, model.source_dim
    );
    let cols = model
        .columns
        .as_ref()
        .map(|v| v.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
        .unwrap_or_else(|| "all".into());
    h.push_str(&format!(
        "columns={cols}\nepochs_run={}\nfinal_loss={:?}\n",
        model.epochs_run, model.final_loss
    ));
    h.push_str(&format!("tensor=scaler.mean 1 {}\n", model.scaler.mean.len()));
    h.push_str(&format!("tensor=scaler.std 1 {}\n", model.scaler.std.len()));
    for (name, r, c) in model.network.tensor_specs() {
        h.push_str(&format!("tensor={name} {r} {c}\n"));
    }
    h.push_str("end\n");
    h
}

pub fn store_model(model: &BilstmModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = render_header(model).into_bytes();
    let tensors = [&model.scaler.mean[..], &model.scaler.std[..]]
        .into_iter()
        .chain(model.network.tensors());
    for t in tensors {
        for v in t {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BilstmModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"\nend\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing 'end' line"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
    let mut payload = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad(format!("expected '{CHECKPOINT_MAGIC}'")));
    }
    let mut kv = std::collections::HashMap::new();
    let mut specs = Vec::new();
    for line in lines {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line '{line}'")))?;
        if k == "tensor" {
            let parts: Vec<&str> = v.split(' ').collect();
            let [name, r, c] = parts[..] else {
                return Err(bad(format!("malformed tensor line '{line}'")));
            };
            let dim = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad shape in '{line}'")));
            specs.push((name.to_string(), dim(r)?, dim(c)?));
        } else {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing '{k}'")));
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| bad(format!("bad value for '{k}'")))
    };
    let config = NetworkConfig {
        input_dim: num("input_dim")?,
        layers: num("layers")?,
        hidden: num("hidden")?,
        leaky_slope: get("leaky_slope")?
            .parse()
            .map_err(|_| bad("bad leaky_slope"))?,
        bidirectional: get("bidirectional")?
            .parse()
            .map_err(|_| bad("bad bidirectional"))?,
    };
    let source_dim = num("source_dim")?;
    let columns = match get("columns")?.as_str() {
        "all" => None,
        s => Some(
            s.split(',')
                .map(|v| v.parse::<usize>().map_err(|_| bad("bad column index")))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let epochs_run = num("epochs_run")?;
    let final_loss: f64 = get("final_loss")?.parse().map_err(|_| bad("bad final_loss"))?;

    let mut network = Network::zeros(config)?;
    let mut expected = vec![
        ("scaler.mean".to_string(), 1, config.input_dim),
        ("scaler.std".to_string(), 1, config.input_dim),
    ];
    expected.extend(network.tensor_specs());
    if specs != expected {
        return Err(bad("tensor list does not match the configuration"));
    }
    let total: usize = expected.iter().map(|(_, r, c)| r * c).sum();
    if payload.len() != total * 8 {
        return Err(Error::LengthMismatch {
            what: "checkpoint payload bytes".into(),
            expected: total * 8,
            got: payload.len(),
        });
    }
    let mut take = |n: usize| -> Vec<f64> {
        let (head, rest) = payload.split_at(n * 8);
        payload = rest;
        head.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    let scaler = Standardizer {
        mean: take(config.input_dim),
        std: take(config.input_dim),
    };
    for t in network.tensors_mut() {
        let n = t.len();
        t.copy_from_slice(&take(n));
    }
    if let Some(cols) = &columns {
        if cols.len() != config.input_dim || cols.iter().any(|&c| c >= source_dim) {
            return Err(bad("column selection inconsistent with dimensions"));
        }
    } else if source_dim != config.input_dim {
        return Err(bad("source_dim differs from input_dim without a column selection"));
    }
    Ok(BilstmModel {
        network,
        source_dim,
        columns,
        scaler,
        epochs_run,
        final_loss,
    })
}

/// `epoch,loss` lines, epochs counted from 1.
pub fn store_loss_trace(trace: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{},{:?}\n", i + 1, l));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
