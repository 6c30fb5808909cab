//! Run configuration: a flat `key = value` text file.
//!
//! Keys are namespaced (`geom.*`, `patch.*`, `sim.*`, `train.*`, `recon.*`,
//! `ep.*`) plus the global `seed`. Lists are comma-separated, `#` starts a
//! comment, unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{MarsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    List,
}

/// `(key, kind, default)`; a `None` default marks a key that must be given
/// when a command needs it.
const KEYS: &[(&str, Kind, Option<&str>)] = &[
    ("seed", Kind::Int, Some("0")),
    ("geom.height", Kind::Int, Some("64")),
    ("geom.width", Kind::Int, Some("64")),
    ("geom.pixel_size", Kind::Float, Some("2")),
    ("geom.views", Kind::Int, Some("120")),
    ("geom.bins", Kind::Int, Some("96")),
    ("geom.mu_water", Kind::Float, Some("0.02")),
    ("patch.h", Kind::Int, Some("8")),
    ("patch.w", Kind::Int, Some("8")),
    ("patch.stride", Kind::Int, Some("1")),
    ("sim.I0", Kind::Float, Some("10000")),
    ("sim.sigma", Kind::Float, Some("5")),
    ("sim.noiseless", Kind::Bool, Some("false")),
    ("train.eta", Kind::List, None),
    ("train.iters", Kind::Int, Some("100")),
    ("recon.beta", Kind::Float, None),
    ("recon.gamma", Kind::List, None),
    ("recon.outer", Kind::Int, Some("200")),
    ("recon.inner", Kind::Int, Some("2")),
    ("recon.alpha", Kind::Float, Some("1.999")),
    ("ep.beta", Kind::Float, None),
    ("ep.delta", Kind::Float, Some("10")),
    ("ep.iters", Kind::Int, Some("100")),
];

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(u64),
    Float(f64),
    Bool(bool),
    List(Vec<f64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join(", "))
            }
        }
    }
}

fn lookup(key: &str) -> Result<(Kind, Option<&'static str>)> {
    KEYS.iter()
        .find(|(k, _, _)| *k == key)
        .map(|&(_, kind, default)| (kind, default))
        .ok_or_else(|| MarsError::Format(format!("unknown config key {key:?}")))
}

fn parse_value(key: &str, kind: Kind, raw: &str) -> Result<Value> {
    let bad = || MarsError::Format(format!("invalid value for {key}: {raw:?}"));
    let raw = raw.trim();
    Ok(match kind {
        Kind::Int => Value::Int(raw.parse().map_err(|_| bad())?),
        Kind::Float => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            Value::Float(v)
        }
        Kind::Bool => Value::Bool(raw.parse().map_err(|_| bad())?),
        Kind::List => Value::List(
            raw.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?,
        ),
    })
}

/// Explicitly set keys; everything else falls back to its default.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| MarsError::Format(format!("config line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&crate::io::read_text(path)?)
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let (kind, _) = lookup(key)?;
        let v = parse_value(key, kind, raw)?;
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    /// Explicit keys, sorted, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn get(&self, key: &str) -> Result<Value> {
        let (kind, default) = lookup(key)?;
        if let Some(v) = self.values.get(key) {
            return Ok(v.clone());
        }
        match default {
            Some(d) => parse_value(key, kind, d),
            None => Err(MarsError::Contract(format!("missing required config key {key}"))),
        }
    }

    /// Fails on the first missing key without a default.
    pub fn require(&self, keys: &[&str]) -> Result<()> {
        keys.iter().try_for_each(|k| self.get(k).map(|_| ()))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        match self.get(key)? {
            Value::Int(v) => Ok(v as usize),
            other => Err(MarsError::Contract(format!("{key} is not an integer: {other}"))),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        match self.get(key)? {
            Value::Int(v) => Ok(v),
            other => Err(MarsError::Contract(format!("{key} is not an integer: {other}"))),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        match self.get(key)? {
            Value::Float(v) => Ok(v),
            Value::Int(v) => Ok(v as f64),
            other => Err(MarsError::Contract(format!("{key} is not a number: {other}"))),
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            Value::Bool(v) => Ok(v),
            other => Err(MarsError::Contract(format!("{key} is not a boolean: {other}"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        match self.get(key)? {
            Value::List(v) => Ok(v),
            other => Err(MarsError::Contract(format!("{key} is not a list: {other}"))),
        }
    }
}
