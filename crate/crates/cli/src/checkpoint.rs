//! Plain-text checkpoint of a trained encoder, prototype dictionary and
//! threshold.
//!
//! ```text
//! ltc-checkpoint 1
//! tau <τ>
//! k_known <K>
//! momentum <μ>
//! layers <L>
//! tensor encoder.0.weight <rows> <cols>
//! <one line per row, values separated by spaces>
//! tensor encoder.0.bias 1 <n>
//! ...
//! tensor head.weight <classes> <feature_dim>
//! tensor head.bias 1 <classes>
//! tensor prototypes <count> <feature_dim>
//! ```
//!
//! Values use shortest round-trip formatting, so save then load is exact.

use std::fmt::Write as _;
use std::path::Path;

use ltc_core::neuralcore::{DenseMatrix, Linear, ModelParams};
use ltc_core::protodict::PrototypeStore;

use crate::error::{CliError, Result};

const MAGIC: &str = "ltc-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub store: PrototypeStore,
    pub tau: f64,
}

fn tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(out, "tensor {name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn linear(out: &mut String, name: &str, l: &Linear) {
    tensor(out, &format!("{name}.weight"), l.weight.rows(), l.weight.cols(), l.weight.data());
    tensor(out, &format!("{name}.bias"), 1, l.bias.len(), &l.bias);
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "tau {:?}", self.tau);
        let _ = writeln!(out, "k_known {}", self.store.k_known());
        let _ = writeln!(out, "momentum {:?}", self.store.momentum());
        let _ = writeln!(out, "layers {}", self.params.encoder.len());
        for (i, l) in self.params.encoder.iter().enumerate() {
            linear(&mut out, &format!("encoder.{i}"), l);
        }
        linear(&mut out, "head", &self.params.head);
        let protos = self.store.prototypes();
        let dim = protos.first().map_or(0, Vec::len);
        let flat: Vec<f64> = protos.iter().flatten().copied().collect();
        tensor(&mut out, "prototypes", protos.len(), dim, &flat);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Lines {
            lines: text.lines().enumerate(),
        };
        if p.next()?.1 != MAGIC {
            return Err(CliError::Format("not an ltc checkpoint".into()));
        }
        let tau: f64 = p.scalar("tau")?;
        let k_known: usize = p.scalar("k_known")?;
        let momentum: f64 = p.scalar("momentum")?;
        let layers: usize = p.scalar("layers")?;
        let mut encoder = Vec::with_capacity(layers);
        for i in 0..layers {
            encoder.push(p.linear(&format!("encoder.{i}"))?);
        }
        let head = p.linear("head")?;
        let (rows, cols, flat) = p.tensor("prototypes")?;
        let prototypes = (0..rows).map(|r| flat[r * cols..(r + 1) * cols].to_vec()).collect();
        let params = ModelParams::new(encoder, head)?;
        let store = PrototypeStore::from_prototypes(prototypes, k_known)?.with_momentum(momentum);
        Ok(Self { params, store, tau })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    }
}

struct Lines<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(n, l)| (n + 1, l.trim()))
            .ok_or_else(|| CliError::Format("checkpoint ends early".into()))
    }

    fn bad(line: usize, what: &str) -> CliError {
        CliError::Format(format!("checkpoint line {line}: {what}"))
    }

    fn scalar<T: std::str::FromStr>(&mut self, name: &str) -> Result<T> {
        let (n, line) = self.next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == name => v.parse().map_err(|_| Self::bad(n, name)),
            _ => Err(Self::bad(n, &format!("expected {name}"))),
        }
    }

    fn tensor(&mut self, name: &str) -> Result<(usize, usize, Vec<f64>)> {
        let (n, line) = self.next()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (rows, cols) = match parts.as_slice() {
            ["tensor", k, r, c] if *k == name => (
                r.parse::<usize>().map_err(|_| Self::bad(n, "rows"))?,
                c.parse::<usize>().map_err(|_| Self::bad(n, "cols"))?,
            ),
            _ => return Err(Self::bad(n, &format!("expected tensor {name}"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self.next()?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| Self::bad(n, "value"))?);
            }
            if data.len() - before != cols {
                return Err(Self::bad(n, &format!("expected {cols} values")));
            }
        }
        Ok((rows, cols, data))
    }

    fn linear(&mut self, name: &str) -> Result<Linear> {
        let (rows, cols, w) = self.tensor(&format!("{name}.weight"))?;
        let (_, _, b) = self.tensor(&format!("{name}.bias"))?;
        Ok(Linear::new(DenseMatrix::from_vec(rows, cols, w)?, b)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ltc_core::datakit::{make_split, synth_seeded, SyntheticSpec};
    use ltc_core::pipeline::{train, TrainConfig};

    fn trained() -> Checkpoint {
        let spec = SyntheticSpec {
            samples_per_class: 10,
            ..SyntheticSpec::default()
        };
        let split = make_split(&synth_seeded(&spec).unwrap(), 5, 0.5, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let (m, _) = train(&split, &cfg).unwrap();
        Checkpoint {
            params: m.params,
            store: m.store,
            tau: m.threshold.tau,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = trained();
        let back = Checkpoint::from_text(&ck.to_text()).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.store.prototypes(), ck.store.prototypes());
        assert_eq!(back.store.k_known(), ck.store.k_known());
        assert_eq!(back.tau, ck.tau);
        assert_eq!(back.to_text(), ck.to_text());
    }

    #[test]
    fn truncated_or_foreign_text_fails() {
        let text = trained().to_text();
        let cut: String = text.lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::from_text(&cut).is_err());
        assert!(Checkpoint::from_text("hello").is_err());
    }
}
