//! On-disk layout of a compressed model.
//!
//! Per compressed layer `<l>`:
//!
//! | tensor              | dtype      | shape         |
//! |---------------------|------------|---------------|
//! | `<l>.csr.indptr`    | I64        | `[d_out + 1]` |
//! | `<l>.csr.indices`   | I64        | `[nnz]`       |
//! | `<l>.csr.values`    | layer      | `[nnz]`       |
//! | `<l>.lowrank.U`     | layer      | `[d_out, r]`  |
//! | `<l>.lowrank.SVt`   | layer      | `[r, d_in]`   |
//! | `<l>.bias`          | layer      | `[d_out]`     |
//!
//! `SVt` already folds in the inverse activation scaling. Every other tensor
//! of the source checkpoint is copied through unchanged.

use indexmap::IndexMap;

use crate::error::{OatsError, Result};
use crate::kernels::{CsrMatrix, SparseLowRank};
use crate::linalg::DenseMatrix;
use crate::pipeline::layer::SparseLowRankLayer;
use crate::pipeline::plan::CompressionPlan;
use crate::pipeline::report::CompressionReport;
use crate::tensor_store::{Dtype, NamedTensor, TensorArchive};

pub const FORMAT_TAG: &str = "oats-compressed-v1";
pub const META_FORMAT: &str = "format";
pub const META_PLAN: &str = "plan";
pub const META_REPORT: &str = "report";

const INDPTR: &str = ".csr.indptr";
const INDICES: &str = ".csr.indices";
const VALUES: &str = ".csr.values";
const U: &str = ".lowrank.U";
const SVT: &str = ".lowrank.SVt";
const BIAS: &str = ".bias";

/// Compressed layers plus every tensor that passed through unchanged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompressedModel {
    pub layers: IndexMap<String, SparseLowRankLayer>,
    pub passthrough: TensorArchive,
    pub plan: Option<CompressionPlan>,
    pub report: Option<CompressionReport>,
}

impl CompressedModel {
    pub fn layer(&self, name: &str) -> Option<&SparseLowRankLayer> {
        self.layers.get(name)
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut out = TensorArchive::new();
        for layer in self.layers.values() {
            for t in layer_tensors(layer)? {
                out.insert(t)?;
            }
        }
        for t in self.passthrough.tensors.values() {
            out.insert(t.clone())?;
        }
        out.metadata = self.passthrough.metadata.clone();
        out.metadata.insert(META_FORMAT.into(), FORMAT_TAG.into());
        if let Some(plan) = &self.plan {
            out.metadata.insert(META_PLAN.into(), plan.to_json());
        }
        if let Some(report) = &self.report {
            out.metadata.insert(
                META_REPORT.into(),
                serde_json::to_string(&report.without_timings())?,
            );
        }
        Ok(out)
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        match archive.metadata.get(META_FORMAT) {
            Some(tag) if tag == FORMAT_TAG => {}
            Some(tag) => {
                return Err(OatsError::Config(format!(
                    "unsupported compressed format `{tag}`"
                )))
            }
            None => return Err(OatsError::Config("archive is not a compressed model".into())),
        }
        let names: Vec<String> = archive
            .names()
            .filter_map(|n| n.strip_suffix(INDPTR).map(str::to_string))
            .collect();
        let mut layers = IndexMap::new();
        let mut consumed = std::collections::HashSet::new();
        for name in names {
            let layer = read_layer(archive, &name)?;
            for suffix in [INDPTR, INDICES, VALUES, U, SVT] {
                consumed.insert(format!("{name}{suffix}"));
            }
            if layer.bias.is_some() {
                consumed.insert(format!("{name}{BIAS}"));
            }
            layers.insert(name, layer);
        }
        let mut passthrough = TensorArchive::new();
        for t in archive.tensors.values() {
            if !consumed.contains(&t.name) {
                passthrough.insert(t.clone())?;
            }
        }
        passthrough.metadata = archive
            .metadata
            .iter()
            .filter(|(k, _)| ![META_FORMAT, META_PLAN, META_REPORT].contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let plan = match archive.metadata.get(META_PLAN) {
            Some(s) => Some(CompressionPlan::from_json(s)?),
            None => None,
        };
        let report = match archive.metadata.get(META_REPORT) {
            Some(s) => Some(serde_json::from_str(s)?),
            None => None,
        };
        Ok(Self {
            layers,
            passthrough,
            plan,
            report,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::tensor_store::write_archive(&self.to_archive()?, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_archive(&crate::tensor_store::read_archive(path)?)
    }
}

fn to_i64(v: &[usize]) -> Vec<i64> {
    v.iter().map(|&x| x as i64).collect()
}

fn layer_tensors(layer: &SparseLowRankLayer) -> Result<Vec<NamedTensor>> {
    let n = &layer.name;
    let f = &layer.factors;
    let csr = &f.sparse;
    let mut out = vec![
        NamedTensor::from_i64(format!("{n}{INDPTR}"), vec![csr.rows() + 1], &to_i64(csr.indptr()))?,
        NamedTensor::from_i64(format!("{n}{INDICES}"), vec![csr.nnz()], &to_i64(csr.indices()))?,
        NamedTensor::from_f32_as(format!("{n}{VALUES}"), layer.dtype, vec![csr.nnz()], csr.values())?,
        NamedTensor::from_f32_as(
            format!("{n}{U}"),
            layer.dtype,
            vec![f.u.rows(), f.u.cols()],
            f.u.as_slice(),
        )?,
        NamedTensor::from_f32_as(
            format!("{n}{SVT}"),
            layer.dtype,
            vec![f.svt.rows(), f.svt.cols()],
            f.svt.as_slice(),
        )?,
    ];
    if let Some(b) = &layer.bias {
        out.push(NamedTensor::from_f32_as(format!("{n}{BIAS}"), layer.dtype, vec![b.len()], b)?);
    }
    Ok(out)
}

fn to_usize(t: &NamedTensor) -> Result<Vec<usize>> {
    t.i64_values()?
        .into_iter()
        .map(|v| {
            usize::try_from(v)
                .map_err(|_| OatsError::Shape(format!("negative index {v} in `{}`", t.name)))
        })
        .collect()
}

fn matrix(t: &NamedTensor) -> Result<DenseMatrix> {
    DenseMatrix::from_tensor(t)
}

fn read_layer(archive: &TensorArchive, name: &str) -> Result<SparseLowRankLayer> {
    let get = |suffix: &str| archive.require(&format!("{name}{suffix}"));
    let u_t = get(U)?;
    let svt_t = get(SVT)?;
    let values_t = get(VALUES)?;
    let dtype = values_t.dtype;
    if !dtype.is_float() {
        return Err(OatsError::Dtype {
            name: values_t.name.clone(),
            expected: "F32|F16|BF16",
            found: dtype.as_str(),
        });
    }
    let u = matrix(u_t)?;
    let svt = matrix(svt_t)?;
    let indptr = to_usize(get(INDPTR)?)?;
    let rows = indptr.len().saturating_sub(1);
    let csr = CsrMatrix::new(
        rows,
        svt.cols(),
        indptr,
        to_usize(get(INDICES)?)?,
        values_t.f32_values()?,
    )?;
    let bias = match archive.get(&format!("{name}{BIAS}")) {
        Some(b) => Some(b.f32_values()?),
        None => None,
    };
    let factors = SparseLowRank::new(csr, u, svt)?;
    // Values already carry dtype rounding, so construction is lossless.
    SparseLowRankLayer::new(name, dtype, factors, bias)
}

/// Tensor names used by one compressed layer.
pub fn layer_tensor_names(layer: &str, with_bias: bool) -> Vec<String> {
    let mut v: Vec<String> = [INDPTR, INDICES, VALUES, U, SVT]
        .iter()
        .map(|s| format!("{layer}{s}"))
        .collect();
    if with_bias {
        v.push(format!("{layer}{BIAS}"));
    }
    v
}

/// Storage dtype to use for a layer compressed from a weight of `dtype`.
pub(crate) fn layer_dtype(dtype: Dtype) -> Dtype {
    if dtype.is_float() {
        dtype
    } else {
        Dtype::F32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(dtype: Dtype) -> SparseLowRankLayer {
        let w = DenseMatrix::from_rows(&[&[1.0, 0.0, 2.5], &[0.0, -3.0, 0.0]]);
        let u = DenseMatrix::from_rows(&[&[0.5], &[0.25]]);
        let svt = DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0]]);
        let f = SparseLowRank::new(CsrMatrix::from_dense(&w), u, svt).unwrap();
        SparseLowRankLayer::new("fc", dtype, f, Some(vec![0.1, 0.2])).unwrap()
    }

    #[test]
    fn archive_roundtrip_preserves_layers() {
        for dtype in [Dtype::F32, Dtype::F16, Dtype::BF16] {
            let mut m = CompressedModel::default();
            m.layers.insert("fc".into(), layer(dtype));
            m.passthrough
                .insert(NamedTensor::from_f32("embed", vec![2], &[1.0, 2.0]).unwrap())
                .unwrap();
            m.plan = Some(CompressionPlan::new(0.5, 0.25));
            let a = m.to_archive().unwrap();
            assert_eq!(a.tensors.get_index(0).unwrap().0, "fc.csr.indptr");
            let back = CompressedModel::from_archive(&CompressedModel::from_archive(&a).unwrap().to_archive().unwrap())
                .unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn plain_archive_rejected() {
        assert!(CompressedModel::from_archive(&TensorArchive::new()).is_err());
    }

    #[test]
    fn tensor_names() {
        assert_eq!(layer_tensor_names("a", false).len(), 5);
        assert_eq!(layer_tensor_names("a", true)[5], "a.bias");
    }
}
