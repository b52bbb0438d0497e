use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Losses after one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

/// Weights, configuration and training progress.
///
/// Layout (little-endian): magic, version, then length-prefixed UTF-8
/// config text, length-prefixed metadata text, a blob count, and per blob a
/// length-prefixed name, rank, dims and `f32` values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Canonical TOML of the run configuration.
    pub config: String,
    /// Epochs completed (1-based index of the epoch these weights follow).
    pub epoch: usize,
    pub val_loss: f64,
    /// Loss curve up to `epoch`.
    pub history: Vec<EpochLoss>,
    /// Best validation loss so far and the epoch it was reached at.
    pub best: Option<(usize, f64)>,
    /// Optimizer steps taken, when optimizer state is stored.
    pub adam_steps: u64,
    pub blobs: Vec<(String, Tensor<f32>)>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(path, "checkpoint text is not UTF-8"))
    }
}

impl Checkpoint {
    fn meta(&self) -> String {
        let mut s = format!(
            "epoch = {}\nval_loss = {}\nadam_steps = {}\n",
            self.epoch, self.val_loss, self.adam_steps
        );
        if let Some((e, l)) = self.best {
            s += &format!("best = {e} {l}\n");
        }
        for h in &self.history {
            s += &format!("history = {} {} {}\n", h.epoch, h.train, h.val);
        }
        s
    }

    fn parse_meta(&mut self, text: &str, path: &Path) -> Result<()> {
        let bad = |l: &str| Error::format(path, format!("bad checkpoint metadata line {l:?}"));
        for line in text.lines() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| bad(line))?;
            let f: Vec<&str> = v.split(' ').collect();
            let num = |i: usize| -> Result<f64> { f.get(i).and_then(|x| x.parse().ok()).ok_or_else(|| bad(line)) };
            let int = |i: usize| -> Result<u64> { f.get(i).and_then(|x| x.parse().ok()).ok_or_else(|| bad(line)) };
            match k {
                "epoch" => self.epoch = int(0)? as usize,
                "val_loss" => self.val_loss = num(0)?,
                "adam_steps" => self.adam_steps = int(0)?,
                "best" => self.best = Some((int(0)? as usize, num(1)?)),
                "history" => self.history.push(EpochLoss {
                    epoch: int(0)? as usize,
                    train: num(1)?,
                    val: num(2)?,
                }),
                _ => return Err(bad(line)),
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut buf, CHECKPOINT_VERSION as usize);
        put_str(&mut buf, &self.config);
        put_str(&mut buf, &self.meta());
        put_u32(&mut buf, self.blobs.len());
        for (name, t) in &self.blobs {
            put_str(&mut buf, name);
            put_u32(&mut buf, t.rank());
            for &d in t.shape() {
                put_u32(&mut buf, d);
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let mut ck = Checkpoint {
            config: r.string()?,
            epoch: 0,
            val_loss: f64::NAN,
            history: Vec::new(),
            best: None,
            adam_steps: 0,
            blobs: Vec::new(),
        };
        let meta = r.string()?;
        ck.parse_meta(&meta, path)?;
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::format(path, format!("blob {name}: {e}")))?;
            ck.blobs.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after the last blob"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn blob(&self, name: &str) -> Option<&Tensor<f32>> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
