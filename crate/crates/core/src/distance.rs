//! Row normalization and pairwise cosine distances.
//!
//! Everything here is built from differentiable tensor ops so the same kernels
//! serve the training losses, the DVDP diagnostic and retrieval.

use candle_core::{DType, Device, Tensor, D};

use crate::error::{Error, Result};

/// A 2-D matrix of embeddings, one sample per row.
#[derive(Debug, Clone)]
pub struct FeatureMatrix(Tensor);

impl FeatureMatrix {
    /// Wraps a rank-2 floating point tensor, rejecting non-finite entries.
    pub fn new(values: Tensor) -> Result<Self> {
        let (rows, dim) = values.dims2()?;
        if !values.dtype().is_float() {
            return Err(Error::Config(format!(
                "feature matrix must be floating point, got {:?}",
                values.dtype()
            )));
        }
        let host = values.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        if let Some(pos) = host.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim.max(1),
                col: pos % dim.max(1),
            });
        }
        debug_assert_eq!(host.len(), rows * dim);
        Ok(Self(values))
    }

    pub fn from_rows(rows: &[Vec<f64>], dtype: DType, device: &Device) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let t = Tensor::from_vec(flat, (rows.len(), dim), device)?.to_dtype(dtype)?;
        Self::new(t)
    }

    pub fn rows(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.0.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    /// Same values, cut off from the autograd graph.
    pub fn detach(&self) -> Self {
        Self(self.0.detach())
    }

    fn check_nonzero_rows(&self) -> Result<Tensor> {
        let sq = self.0.sqr()?.sum_keepdim(D::Minus1)?;
        let host = sq.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        if let Some(row) = host.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroVector { row });
        }
        Ok(sq)
    }
}

/// Pairwise distances between the rows of two feature matrices.
#[derive(Debug, Clone)]
pub struct DistanceMatrix(Tensor);

impl DistanceMatrix {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        let d = self.0.dims();
        (d[0], d[1])
    }

    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.0.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    /// Gathers entry `(i, cols[i])` for every row `i`, keeping the graph.
    pub fn pick(&self, cols: &[usize]) -> Result<Tensor> {
        let (rows, _) = self.shape();
        if cols.len() != rows {
            return Err(Error::DimensionMismatch {
                left: rows,
                right: cols.len(),
            });
        }
        let idx: Vec<u32> = cols.iter().map(|&c| c as u32).collect();
        let idx = Tensor::from_vec(idx, (rows, 1), self.0.device())?;
        Ok(self.0.gather(&idx, 1)?.squeeze(1)?)
    }
}

/// Divides every row by its L2 norm.
pub fn normalize(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let sq = features.check_nonzero_rows()?;
    let normed = features.0.broadcast_div(&sq.sqrt()?)?;
    Ok(FeatureMatrix(normed))
}

/// `1 - cos(a_i, b_j)` for every pair of rows.
pub fn cosine_distance_matrix(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<DistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let an = normalize(a)?;
    let bn = normalize(b)?;
    let bt = bn.0.t()?;
    let sim = an.0.matmul(&bt)?;
    let dist = sim.affine(-1.0, 1.0)?;
    Ok(DistanceMatrix(dist))
}
