//! Versioned text weight files.
//!
//! ```text
//! # attrib-weights v1
//! kind=model arch=tanh-mlp input_dim=2 hidden_dim=16 output_dim=3
//! 0.0123
//! -0.0456
//! ...
//! ```
//!
//! The second line may carry extra `key=value` metadata after the dimensions.
//! Weights follow one per line in row-major order, printed in shortest
//! round-trip decimal form so a reload is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Architecture, Network};

pub const WEIGHTS_HEADER: &str = "# attrib-weights v1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub network: Network,
}

impl WeightFile {
    pub fn new(kind: &str, network: Network) -> Self {
        Self {
            kind: kind.to_string(),
            meta: BTreeMap::new(),
            network,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta
            .get(key)
            .ok_or_else(|| Error::Parse(format!("weight file lacks {key:?}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("weight file has a malformed {key:?}")))
    }

    pub fn to_text(&self) -> String {
        let net = &self.network;
        let arch = net.architecture();
        let mut out = String::new();
        out.push_str(WEIGHTS_HEADER);
        out.push('\n');
        write!(
            out,
            "kind={} arch={} input_dim={} hidden_dim={} output_dim={}",
            self.kind,
            arch.name(),
            net.input_dim(),
            arch.hidden_dim(),
            net.output_dim()
        )
        .unwrap();
        for (k, v) in &self.meta {
            write!(out, " {k}={v}").unwrap();
        }
        out.push('\n');
        for w in net.weights() {
            writeln!(out, "{w}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(WEIGHTS_HEADER) {
            return Err(Error::Parse(format!("expected {WEIGHTS_HEADER:?} header")));
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing dimension line".into()))?;
        let mut fields = BTreeMap::new();
        for token in header.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed header token {token:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let mut take = |key: &str| {
            fields
                .remove(key)
                .ok_or_else(|| Error::Parse(format!("header lacks {key:?}")))
        };
        let kind = take("kind")?;
        let arch_name = take("arch")?;
        let parse_usize = |v: String| {
            v.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad dimension {v:?}")))
        };
        let input_dim = parse_usize(take("input_dim")?)?;
        let hidden_dim = parse_usize(take("hidden_dim")?)?;
        let output_dim = parse_usize(take("output_dim")?)?;
        let arch = Architecture::from_parts(&arch_name, hidden_dim)?;
        let weights = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad weight {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let network = Network::from_weights(arch, input_dim, output_dim, weights)?;
        Ok(Self {
            kind,
            meta: fields,
            network,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn expect_kind(self, kinds: &[&str]) -> Result<Self> {
        if kinds.contains(&self.kind.as_str()) {
            Ok(self)
        } else {
            Err(Error::Parse(format!(
                "weight file holds a {:?}, expected one of {kinds:?}",
                self.kind
            )))
        }
    }
}
