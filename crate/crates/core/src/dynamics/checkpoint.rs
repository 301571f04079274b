//! Binary checkpoint format.
//!
//! All integers and reals are little-endian:
//!
//! ```text
//! "ARDM" | version u16 | kind u8 (0 feedforward, 1 autoregressive)
//! n u32 | m u32 | hidden layer count u32 | hidden widths u32...
//! dimension order u32 x n            (autoregressive only)
//! state mean f64 x n | state std f64 x n
//! action mean f64 x m | action std f64 x m
//! reward mean f64 | reward std f64
//! parameters f64 x (count implied by the architecture)
//! metadata: UTF-8 "key=value\n" lines, sorted by key, to end of file
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{AutoregressiveDynamics, DynamicsModel, FeedforwardDynamics, NormalizationStats};
use crate::error::{Error, Result};
use crate::io::{atomic_write, ByteReader};
use crate::nn::ParameterSet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ARDM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A model plus free-form metadata (validation NLL, config digest, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DynamicsModel,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: DynamicsModel) -> Self {
        Checkpoint {
            model,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn validation_nll(&self) -> Option<f64> {
        self.metadata.get("validation_nll").and_then(|v| v.parse().ok())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Config(format!("metadata entry {k:?} cannot be encoded")));
            }
        }
        let model = &self.model;
        let (n, m) = (model.state_dim(), model.action_dim());
        let spec = model.spec();
        let mut out = Vec::with_capacity(64 + 8 * model.params().len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match model {
            DynamicsModel::Feedforward(_) => 0,
            DynamicsModel::Autoregressive(_) => 1,
        });
        let push_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        push_u32(&mut out, n);
        push_u32(&mut out, m);
        push_u32(&mut out, spec.hidden_layers.len());
        for &w in &spec.hidden_layers {
            push_u32(&mut out, w);
        }
        if let DynamicsModel::Autoregressive(ar) = model {
            for &d in ar.dimension_order() {
                push_u32(&mut out, d);
            }
        }
        let stats = model.stats();
        let reals = stats
            .state_mean
            .iter()
            .chain(&stats.state_std)
            .chain(&stats.action_mean)
            .chain(&stats.action_std)
            .chain([&stats.reward_mean, &stats.reward_std])
            .chain(model.params().as_slice());
        for v in reals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (k, v) in &self.metadata {
            out.extend_from_slice(k.as_bytes());
            out.push(b'=');
            out.extend_from_slice(v.as_bytes());
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, origin);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
        }
        let kind = r.u8()?;
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let layers = r.u32()? as usize;
        if layers > 64 {
            return Err(Error::format(origin, format!("implausible layer count {layers}")));
        }
        let hidden = (0..layers).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let order = if kind == 1 {
            Some((0..n).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?)
        } else if kind == 0 {
            None
        } else {
            return Err(Error::format(origin, format!("unknown model kind byte {kind}")));
        };
        let stats = NormalizationStats {
            state_mean: r.f64s(n)?,
            state_std: r.f64s(n)?,
            action_mean: r.f64s(m)?,
            action_std: r.f64s(m)?,
            reward_mean: r.f64()?,
            reward_std: r.f64()?,
        };
        let bad = |e: Error| Error::format(origin, e.to_string());
        let model = match order {
            None => {
                let spec = FeedforwardDynamics::architecture(n, m, hidden).map_err(bad)?;
                let params = ParameterSet::from_values(&spec, r.f64s(spec.param_count())?).map_err(bad)?;
                DynamicsModel::Feedforward(FeedforwardDynamics::from_parts(spec, params, stats).map_err(bad)?)
            }
            Some(order) => {
                let spec = AutoregressiveDynamics::architecture(n, m, hidden).map_err(bad)?;
                let params = ParameterSet::from_values(&spec, r.f64s(spec.param_count())?).map_err(bad)?;
                DynamicsModel::Autoregressive(
                    AutoregressiveDynamics::from_parts(spec, params, stats, order).map_err(bad)?,
                )
            }
        };
        let text = std::str::from_utf8(r.rest())
            .map_err(|_| Error::format(origin, "metadata block is not UTF-8"))?;
        let mut metadata = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("metadata line {line:?} has no '='")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        Ok(Checkpoint { model, metadata })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    atomic_write(path, &checkpoint.to_bytes()?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelKind;

    fn sample_checkpoint(kind: ModelKind) -> Checkpoint {
        let mut model = DynamicsModel::new(kind, 3, 2, vec![5, 4], 11).unwrap();
        let mut stats = NormalizationStats::identity(3, 2);
        stats.state_mean = vec![0.5, -1.0, 2.0];
        stats.reward_std = 3.5;
        model.set_stats(stats).unwrap();
        if let DynamicsModel::Autoregressive(ar) = model {
            model = DynamicsModel::Autoregressive(ar.with_order(vec![2, 0, 1]).unwrap());
        }
        Checkpoint::new(model)
            .with_meta("validation_nll", -1.25)
            .with_meta("seed", 11)
            .with_meta("config_digest", "abc123")
    }

    #[test]
    fn round_trip_both_kinds() {
        for kind in [ModelKind::Feedforward, ModelKind::Autoregressive] {
            let ck = sample_checkpoint(kind);
            let bytes = ck.to_bytes().unwrap();
            assert_eq!(&bytes[..4], b"ARDM");
            assert_eq!(bytes[6], kind as u8);
            let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), bytes);
            assert_eq!(back.validation_nll(), Some(-1.25));
        }
    }

    #[test]
    fn truncation_and_bad_magic_are_format_errors() {
        let bytes = sample_checkpoint(ModelKind::Autoregressive).to_bytes().unwrap();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(Checkpoint::from_bytes(cut, Path::new("x")), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, Path::new("x")), Err(Error::Format { .. })));
    }
}
