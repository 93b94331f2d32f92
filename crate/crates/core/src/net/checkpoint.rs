//! Versioned binary checkpoint: config echo, every named parameter tensor
//! (including batchnorm running stats), the blend weights in force at model
//! selection, the best validation accuracy, the step counter, and the branch
//! ledgers for resume.

use std::io::{Read, Write};
use std::path::Path;

use crate::blend::{branch_code, branch_from_code, BlendWeights, BranchLedger};
use crate::nn::ParamKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::view::View;

use super::{MultiViewNet, NetError, NetworkConfig, Result, Scale};

const MAGIC: &[u8; 4] = b"BCKP";
const VERSION: u32 = 1;

pub struct LoadedCheckpoint<F: Scalar> {
    pub net: MultiViewNet<F>,
    pub ensemble_weights: BlendWeights<F>,
    pub best_val_acc: f64,
    pub step: u64,
    pub ledgers: Vec<BranchLedger<F>>,
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    net: &MultiViewNet<F>,
    ensemble_weights: &BlendWeights<F>,
    best_val_acc: f64,
    step: u64,
    ledgers: &[BranchLedger<F>],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let cfg = &net.config;
    buf.extend_from_slice(&(cfg.n_classes as u32).to_le_bytes());
    buf.push(cfg.scale.code());
    buf.extend_from_slice(&cfg.sample_rate.to_le_bytes());
    buf.extend_from_slice(&cfg.dropout.to_le_bytes());
    buf.extend_from_slice(&cfg.init_seed.to_le_bytes());
    buf.push(cfg.views.len() as u8);
    for v in &cfg.views {
        buf.push(v.code());
    }

    buf.extend_from_slice(&(net.store.len() as u32).to_le_bytes());
    for (_, entry) in net.store.iter() {
        let name = entry.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(matches!(entry.kind, ParamKind::Buffer) as u8);
        buf.push(entry.value.rank() as u8);
        for &d in entry.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in entry.value.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }

    buf.push(ensemble_weights.branches().len() as u8);
    for (b, w) in ensemble_weights.iter() {
        buf.push(branch_code(b));
        buf.extend_from_slice(&w.as_f64().to_le_bytes());
    }
    buf.extend_from_slice(&ensemble_weights.z.as_f64().to_le_bytes());
    buf.extend_from_slice(&best_val_acc.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());

    buf.push(ledgers.len() as u8);
    for ledger in ledgers {
        let bytes = ledger.to_bytes();
        buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(&bytes);
    }

    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<LoadedCheckpoint<F>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    let mut r = Reader { bytes: &bytes, at: 0, path };

    if r.take(4)? != MAGIC {
        return Err(r.fail("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(&format!("unsupported version {version}")));
    }

    let n_classes = r.u32()? as usize;
    let scale = Scale::from_code(r.u8()?).ok_or_else(|| r.fail("bad scale code"))?;
    let sample_rate = r.u32()?;
    let dropout = r.f64()?;
    let init_seed = r.u64()?;
    let n_views = r.u8()? as usize;
    let mut views = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        views.push(View::from_code(r.u8()?).ok_or_else(|| r.fail("bad view code"))?);
    }
    let mut config = NetworkConfig::new(n_classes, &views, scale, sample_rate)?;
    config.dropout = dropout;
    config.init_seed = init_seed;
    let mut net = MultiViewNet::<F>::build(config)?;

    let n_params = r.u32()? as usize;
    if n_params != net.store.len() {
        return Err(r.fail(&format!(
            "parameter count {n_params} does not match the rebuilt network ({})",
            net.store.len()
        )));
    }
    for (id, _) in net.store.iter().map(|(id, _)| (id, ())).collect::<Vec<_>>() {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.fail("parameter name is not utf8"))?
            .to_string();
        let _kind = r.u8()?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(F::cast(r.f64()?));
        }
        let entry = net.store.entry(id);
        if entry.name != name || entry.value.shape() != shape.as_slice() {
            return Err(r.fail(&format!(
                "parameter mismatch: file has {name} {shape:?}, network has {} {:?}",
                entry.name,
                entry.value.shape()
            )));
        }
        net.store.set(id, Tensor::new(shape, data));
    }

    let n_branches = r.u8()? as usize;
    let mut raw = Vec::with_capacity(n_branches);
    for _ in 0..n_branches {
        let b = branch_from_code(r.u8()?).ok_or_else(|| r.fail("bad branch code"))?;
        raw.push((b, r.f64()?));
    }
    let z = r.f64()?;
    let mut ensemble_weights = BlendWeights::normalize(
        &raw.iter().map(|&(b, w)| (b, F::cast(w))).collect::<Vec<_>>(),
    )
    .map_err(|e| NetError::Checkpoint(e.to_string()))?;
    ensemble_weights.z = F::cast(z);

    let best_val_acc = r.f64()?;
    let step = r.u64()?;

    let n_ledgers = r.u8()? as usize;
    let mut ledgers = Vec::with_capacity(n_ledgers);
    for _ in 0..n_ledgers {
        let len = r.u32()? as usize;
        let blob = r.take(len)?;
        let (ledger, used) =
            BranchLedger::from_bytes(blob).ok_or_else(|| r.fail("corrupt ledger"))?;
        if used != len {
            return Err(r.fail("ledger length mismatch"));
        }
        ledgers.push(ledger);
    }

    Ok(LoadedCheckpoint { net, ensemble_weights, best_val_acc, step, ledgers })
}

fn io_err(path: &Path, e: std::io::Error) -> NetError {
    NetError::Checkpoint(format!("{}: {e}", path.display()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: &str) -> NetError {
        NetError::Checkpoint(format!("{}: {msg}", self.path.display()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| self.fail("unexpected end of file"))?;
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::Branch;

    #[test]
    fn save_load_round_trip() {
        let mut config =
            NetworkConfig::new(4, &[View::Mel, View::Raw], Scale::Reduced, 8000).unwrap();
        config.init_seed = 5;
        let net = MultiViewNet::<f64>::build(config).unwrap();
        let branches = net.branches();
        let weights = BlendWeights::normalize(
            &branches.iter().map(|&b| (b, 1.0 + branch_code(b) as f64)).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut ledger = BranchLedger::new(Branch::Joint, 5);
        ledger.push(1.25, 1.5);
        ledger.adaptive_weight();

        let path = std::env::temp_dir().join(format!("blendcrnn_ckpt_{}.bckp", std::process::id()));
        save_checkpoint(&path, &net, &weights, 0.8125, 930, &[ledger.clone()]).unwrap();
        let loaded = load_checkpoint::<f64>(&path).unwrap();
        std::fs::remove_file(&path).ok();

        assert_eq!(loaded.net.config, net.config);
        assert_eq!(loaded.best_val_acc, 0.8125);
        assert_eq!(loaded.step, 930);
        assert_eq!(loaded.ledgers, vec![ledger]);
        for (w1, w2) in weights.iter().zip(loaded.ensemble_weights.iter()) {
            assert_eq!(w1.0, w2.0);
            assert_eq!(w1.1, w2.1);
        }
        for ((_, a), (_, b)) in net.store.iter().zip(loaded.net.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let config = NetworkConfig::new(4, &[View::Mel], Scale::Reduced, 8000).unwrap();
        let net = MultiViewNet::<f64>::build(config).unwrap();
        let weights = BlendWeights::uniform(&net.branches());
        let path = std::env::temp_dir().join(format!("blendcrnn_trunc_{}.bckp", std::process::id()));
        save_checkpoint(&path, &net, &weights, 0.5, 1, &[]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
