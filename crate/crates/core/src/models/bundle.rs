//! Binary model bundles.
//!
//! Layout (little-endian): magic `PDNB`, `u16` version, `u8` kind tag,
//! `u8` distance tag, `u32` S, `u32` F, z-score block (`u32` count, means,
//! stds as `f32`), `u32` parameter count then per parameter (`u16` name
//! length, UTF-8 name, `u8` rank, `u32` dims, `f32` data), provenance
//! (`u64` seed, `i32` fold or -1, two length-prefixed strings: config hash
//! and init description).

use std::fs;
use std::path::Path;

use super::{BCnn1Net, BCnn2Net, DistanceKind, ModelKind, Network, ProposedNet};
use crate::autodiff::{ParamSet, Tensor};
use crate::data::ZScoreStats;
use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: &[u8; 4] = b"PDNB";
pub const BUNDLE_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub fold: Option<u32>,
    pub config_hash: String,
    /// e.g. `random` or `transfer`.
    pub init: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            seed: 0,
            fold: None,
            config_hash: String::new(),
            init: "random".into(),
        }
    }
}

/// Trained parameters plus everything needed to preprocess inputs for them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub frames: usize,
    pub features: usize,
    pub distance: DistanceKind,
    /// Applied to the network's input representation; identity for B-CNN2,
    /// whose distances use raw posteriors.
    pub zscore: ZScoreStats,
    pub params: ParamSet,
    pub provenance: Provenance,
}

/// One of the three networks.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Proposed(ProposedNet),
    Bcnn1(BCnn1Net),
    Bcnn2(BCnn2Net),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Proposed(_) => ModelKind::Proposed,
            AnyModel::Bcnn1(_) => ModelKind::Bcnn1,
            AnyModel::Bcnn2(_) => ModelKind::Bcnn2,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            AnyModel::Proposed(m) => m.params(),
            AnyModel::Bcnn1(m) => m.params(),
            AnyModel::Bcnn2(m) => m.params(),
        }
    }

    pub fn features(&self) -> usize {
        match self {
            AnyModel::Proposed(m) => m.features(),
            AnyModel::Bcnn1(m) => m.features(),
            AnyModel::Bcnn2(m) => m.features(),
        }
    }

    pub fn frames(&self) -> usize {
        match self {
            AnyModel::Proposed(m) => m.frames(),
            AnyModel::Bcnn1(_) => crate::data::SEGMENT_FRAMES,
            AnyModel::Bcnn2(m) => m.frames(),
        }
    }

    pub fn into_bundle(self, zscore: ZScoreStats, provenance: Provenance) -> ModelBundle {
        let kind = self.kind();
        let (features, frames) = (self.features(), self.frames());
        let params = match self {
            AnyModel::Proposed(mut m) => std::mem::take(m.params_mut()),
            AnyModel::Bcnn1(mut m) => std::mem::take(m.params_mut()),
            AnyModel::Bcnn2(mut m) => std::mem::take(m.params_mut()),
        };
        ModelBundle {
            kind,
            frames,
            features,
            distance: kind.distance(),
            zscore,
            params,
            provenance,
        }
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        let params = bundle.params.clone();
        Ok(match bundle.kind {
            ModelKind::Proposed => {
                AnyModel::Proposed(ProposedNet::from_params(params, bundle.features, bundle.frames)?)
            }
            ModelKind::Bcnn1 => AnyModel::Bcnn1(BCnn1Net::from_params(params, bundle.features)?),
            ModelKind::Bcnn2 => AnyModel::Bcnn2(BCnn2Net::from_params(params, bundle.features, bundle.frames)?),
        })
    }
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(BUNDLE_MAGIC);
        w.u16(BUNDLE_VERSION);
        w.u8(self.kind.tag());
        w.u8(self.distance.tag());
        w.u32(self.frames as u32);
        w.u32(self.features as u32);
        w.u32(self.zscore.mean.len() as u32);
        w.f32s(&self.zscore.mean);
        w.f32s(&self.zscore.std);
        w.u32(self.params.len() as u32);
        for p in self.params.iter() {
            w.str(&p.name);
            w.u8(p.value.rank() as u8);
            for &d in p.value.shape() {
                w.u32(d as u32);
            }
            w.f32s(p.value.data());
        }
        w.u64(self.provenance.seed);
        w.i32(self.provenance.fold.map(|f| f as i32).unwrap_or(-1));
        w.str(&self.provenance.config_hash);
        w.str(&self.provenance.init);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != BUNDLE_MAGIC {
            return Err(Error::Format("bundle: bad magic (expected PDNB)".into()));
        }
        let version = r.u16()?;
        if version != BUNDLE_VERSION {
            return Err(Error::Format(format!(
                "bundle: version {version}, this build reads {BUNDLE_VERSION}"
            )));
        }
        let kind = ModelKind::from_tag(r.u8()?)?;
        let distance = DistanceKind::from_tag(r.u8()?)?;
        let frames = r.u32()? as usize;
        let features = r.u32()? as usize;
        let nz = r.u32()? as usize;
        let mean = r.f32s(nz)?;
        let std = r.f32s(nz)?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r.f32s(n)?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("bundle: {e}")))?;
            params
                .add(name, t)
                .map_err(|e| Error::Format(format!("bundle: {e}")))?;
        }
        let seed = r.u64()?;
        let fold = r.i32()?;
        let config_hash = r.str()?;
        let init = r.str()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "bundle: {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let bundle = ModelBundle {
            kind,
            frames,
            features,
            distance,
            zscore: ZScoreStats { mean, std },
            params,
            provenance: Provenance {
                seed,
                fold: (fold >= 0).then_some(fold as u32),
                config_hash,
                init,
            },
        };
        // Rejects parameter sets that do not fit the declared architecture.
        AnyModel::from_bundle(&bundle)?;
        Ok(bundle)
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bundle.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.bytes(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("bundle: unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("bundle: size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("bundle: invalid UTF-8 string".into()))
    }
}
