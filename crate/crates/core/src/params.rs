//! Plain-text parameter files.
//!
//! ```text
//! fgdetect-params v1
//! kind = gfg
//! iterations = 10
//! block_len = 500
//! memory = 2
//! band = 4
//! channel = proakis-b
//! modulation = bpsk
//! train_ebn0_db = 10
//! preprocessor_advance = 4
//! edge_weights 39920
//! 1 1 1 ...
//! kappa 15000
//! ...
//! lambda 20000
//! ...
//! taps 7
//! ...
//! end
//! ```
//!
//! Metadata lines are `key = value`. Each array starts with `name count`
//! followed by `count` whitespace-separated decimal values (shortest
//! round-trip representation). Arrays appear in the order above; the flat
//! layouts are documented on [`DetectorParams`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::channel::ChannelModel;
use crate::constellation::Constellation;
use crate::detectors::{DetectorKind, DetectorParams};
use crate::error::{Error, Result};
use crate::observation::Preprocessor;

pub const PARAMS_HEADER: &str = "fgdetect-params v1";

const ARRAYS: [&str; 4] = ["edge_weights", "kappa", "lambda", "taps"];

/// Serializes a parameter set.
pub fn params_to_string(params: &DetectorParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{PARAMS_HEADER}");
    let _ = writeln!(s, "kind = {}", params.kind);
    let _ = writeln!(s, "iterations = {}", params.iterations);
    let _ = writeln!(s, "block_len = {}", params.block_len);
    let _ = writeln!(s, "memory = {}", params.memory);
    let _ = writeln!(s, "band = {}", params.band);
    let _ = writeln!(s, "channel = {}", params.channel);
    let _ = writeln!(s, "modulation = {}", params.modulation);
    if let Some(db) = params.train_ebn0_db {
        let _ = writeln!(s, "train_ebn0_db = {db}");
    }
    if let Some(p) = &params.preprocessor {
        let _ = writeln!(s, "preprocessor_advance = {}", p.advance);
    }
    let empty = Vec::new();
    let taps = params.preprocessor.as_ref().map_or(&empty, |p| &p.taps);
    for (name, values) in ARRAYS
        .iter()
        .zip([&params.edge_weights, &params.kappa, &params.lambda, taps])
    {
        let _ = writeln!(s, "{name} {}", values.len());
        for chunk in values.chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
    }
    s.push_str("end\n");
    s
}

pub fn save_params(params: &DetectorParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, params_to_string(params))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, value: Option<&String>) -> Result<T> {
    let value = value.ok_or_else(|| Error::load(field, "missing"))?;
    value
        .parse()
        .map_err(|_| Error::load(field, format!("cannot parse `{value}`")))
}

/// Parses a parameter file's contents. Nothing is returned unless the whole
/// file is valid.
pub fn params_from_str(text: &str) -> Result<DetectorParams> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == PARAMS_HEADER => {}
        Some(h) if h.starts_with("fgdetect-params") => {
            return Err(Error::load("header", format!("unsupported version `{}`", h.trim())))
        }
        _ => return Err(Error::load("header", "not a parameter file")),
    }
    let mut meta = std::collections::HashMap::new();
    let mut arrays: Vec<Vec<f64>> = Vec::new();
    let mut pending: Option<(&str, usize, Vec<f64>)> = None;
    let mut finished = false;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if finished {
            return Err(Error::load("end", "content after end marker"));
        }
        if let Some((name, count, values)) = pending.as_mut() {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::load(*name, format!("cannot parse value `{tok}`")))?;
                values.push(v);
            }
            if values.len() > *count {
                return Err(Error::load(*name, "more values than declared"));
            }
            if values.len() == *count {
                arrays.push(std::mem::take(values));
                pending = None;
            }
            continue;
        }
        if line == "end" {
            finished = true;
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        let expected = ARRAYS
            .get(arrays.len())
            .ok_or_else(|| Error::load("end", "unexpected array"))?;
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or_default();
        if name != *expected {
            return Err(Error::load(*expected, format!("expected array `{expected}`, found `{name}`")));
        }
        let count: usize = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::load(*expected, "missing value count"))?;
        if count == 0 {
            arrays.push(Vec::new());
        } else {
            pending = Some((expected, count, Vec::with_capacity(count)));
        }
    }
    if let Some((name, count, values)) = pending {
        return Err(Error::load(
            name,
            format!("truncated: {} of {count} values", values.len()),
        ));
    }
    if arrays.len() < ARRAYS.len() {
        return Err(Error::load(ARRAYS[arrays.len()], "truncated: array missing"));
    }
    if !finished {
        return Err(Error::load("end", "truncated: missing end marker"));
    }

    let kind: DetectorKind = meta
        .get("kind")
        .ok_or_else(|| Error::load("kind", "missing"))?
        .parse()
        .map_err(|_| Error::load("kind", "unknown detector kind"))?;
    let taps = arrays.pop().expect("four arrays");
    let lambda = arrays.pop().expect("four arrays");
    let kappa = arrays.pop().expect("four arrays");
    let edge_weights = arrays.pop().expect("four arrays");
    let preprocessor = if kind == DetectorKind::Gfg {
        let advance = parse_field("preprocessor_advance", meta.get("preprocessor_advance"))?;
        Some(Preprocessor::new(taps, advance).map_err(|e| Error::load("taps", e.to_string()))?)
    } else {
        if !taps.is_empty() {
            return Err(Error::load("taps", format!("{kind} parameters have no preprocessor")));
        }
        None
    };
    let params = DetectorParams {
        kind,
        iterations: parse_field("iterations", meta.get("iterations"))?,
        block_len: parse_field("block_len", meta.get("block_len"))?,
        memory: parse_field("memory", meta.get("memory"))?,
        band: parse_field("band", meta.get("band"))?,
        edge_weights,
        kappa,
        lambda,
        preprocessor,
        channel: meta
            .get("channel")
            .cloned()
            .ok_or_else(|| Error::load("channel", "missing"))?,
        modulation: meta
            .get("modulation")
            .cloned()
            .ok_or_else(|| Error::load("modulation", "missing"))?,
        train_ebn0_db: match meta.get("train_ebn0_db") {
            Some(v) => Some(parse_field("train_ebn0_db", Some(v))?),
            None => None,
        },
    };
    params.validate().map_err(|e| match e {
        Error::Config(msg) => {
            let field = ARRAYS
                .iter()
                .find(|a| msg.starts_with(**a))
                .copied()
                .unwrap_or("shape");
            Error::load(field, msg)
        }
        other => other,
    })?;
    Ok(params)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<DetectorParams> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::Config(format!("cannot read parameter file {}: {e}", path.as_ref().display()))
    })?;
    params_from_str(&text)
}

/// Checks a loaded parameter set against the channel and constellation in use.
pub fn check_metadata(params: &DetectorParams, ch: &ChannelModel, cons: &Constellation) -> Result<()> {
    if params.channel != ch.name() {
        return Err(Error::load(
            "channel",
            format!("file is for `{}`, requested `{}`", params.channel, ch.name()),
        ));
    }
    if params.memory != ch.memory() {
        return Err(Error::load("memory", "does not match the channel"));
    }
    if params.modulation != cons.name() {
        return Err(Error::load(
            "modulation",
            format!("file is for `{}`, requested `{}`", params.modulation, cons.name()),
        ));
    }
    Ok(())
}

/// Loads a parameter file and checks it against the channel and constellation.
pub fn load_params_for(
    path: impl AsRef<Path>,
    ch: &ChannelModel,
    cons: &Constellation,
) -> Result<DetectorParams> {
    let params = load_params(path)?;
    check_metadata(&params, ch, cons)?;
    Ok(params)
}
