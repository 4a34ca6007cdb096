use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PDN1";

/// An `F×N` matrix of per-frame features: rows are features, columns are
/// frames (10 ms apart).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix(Tensor);

impl FeatureMatrix {
    pub fn new(features: usize, frames: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![features, frames], data).map(FeatureMatrix)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::dim(
                "feature matrix",
                format!("expected F×N, got {:?}", t.shape()),
            ));
        }
        Ok(FeatureMatrix(t))
    }

    /// Builds from frame-major columns (`cols[n][f]`).
    pub fn from_frames(features: usize, cols: &[Vec<f32>]) -> Result<Self> {
        let n = cols.len();
        let mut data = vec![0.0; features * n];
        for (j, col) in cols.iter().enumerate() {
            if col.len() != features {
                return Err(Error::dim(
                    "feature matrix",
                    format!("frame {j} has {} values, expected {features}", col.len()),
                ));
            }
            for (f, &v) in col.iter().enumerate() {
                data[f * n + j] = v;
            }
        }
        Self::new(features, n, data)
    }

    pub fn features(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn get(&self, feature: usize, frame: usize) -> f32 {
        self.0.get2(feature, frame)
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.0.data_mut()
    }

    pub fn column(&self, frame: usize) -> Vec<f32> {
        (0..self.features()).map(|f| self.get(f, frame)).collect()
    }

    pub fn max_value(&self) -> f32 {
        self.0.max_value()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> FeatureMatrix {
        let data = self.data().iter().map(|&v| f(v)).collect();
        FeatureMatrix::new(self.features(), self.frames(), data).expect("same shape")
    }

    /// Columns `start..start+len`.
    pub fn frame_window(&self, start: usize, len: usize) -> Result<FeatureMatrix> {
        if start + len > self.frames() || len == 0 {
            return Err(Error::dim(
                "frame window",
                format!("{start}..{} outside {} frames", start + len, self.frames()),
            ));
        }
        let n = self.frames();
        let mut data = Vec::with_capacity(self.features() * len);
        for f in 0..self.features() {
            data.extend_from_slice(&self.data()[f * n + start..f * n + start + len]);
        }
        FeatureMatrix::new(self.features(), len, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data().len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.features() as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        for v in self.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::Format("feature file: bad magic (expected PDN1)".into()));
        }
        let f = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if f == 0 || n == 0 {
            return Err(Error::Format(format!("feature file: empty {f}×{n} matrix")));
        }
        let body = &bytes[12..];
        if body.len() != 4 * f * n {
            return Err(Error::Format(format!(
                "feature file: {f}×{n} needs {} bytes of data, found {}",
                4 * f * n,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(f, n, data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
