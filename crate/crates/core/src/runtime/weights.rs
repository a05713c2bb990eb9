use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::error::{invalid, shape, Error, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;
use crate::tensorfile::{read_container, DType, TensorWriter};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PLWT";

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_norm_eps() -> f64 {
    1e-6
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub vocab: usize,
    pub max_context: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

impl ModelDims {
    /// Small dimensions used by tests and the demo configurations.
    pub fn tiny(vocab: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            d_head: 16,
            d_ff: 128,
            n_layers: 4,
            vocab,
            max_context: 512,
            rope_base: default_rope_base(),
            norm_eps: default_norm_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_head == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(invalid(format!(
                "d_model {} != n_heads {} * d_head {}",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if self.d_head % 2 != 0 {
            return Err(invalid("rotary encoding needs an even d_head"));
        }
        if self.vocab < 2 {
            return Err(invalid("vocab must be at least 2"));
        }
        if self.max_context == 0 {
            return Err(invalid("max_context must be positive"));
        }
        if !(self.rope_base > 0.0 && self.norm_eps >= 0.0) {
            return Err(invalid("rope_base must be > 0 and norm_eps >= 0"));
        }
        Ok(())
    }
}

/// Parameters of one pre-norm block. Projections are stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Vec<T>,
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub mlp_norm: Vec<T>,
    pub w_in: Matrix<T>,
    pub w_out: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub dims: ModelDims,
    /// `vocab x d_model`
    pub embed: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Vec<T>,
    /// `vocab x d_model`
    pub unembed: Matrix<T>,
    /// Per-token output bias, zero unless a model plants one.
    pub unembed_bias: Vec<T>,
}

impl<T: Scalar> ModelWeights<T> {
    /// All-zero blocks, unit norms, zero embeddings.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let d = dims.d_model;
        let layer = LayerWeights {
            attn_norm: vec![T::one(); d],
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            mlp_norm: vec![T::one(); d],
            w_in: Matrix::zeros(dims.d_ff, d),
            w_out: Matrix::zeros(d, dims.d_ff),
        };
        Ok(Self {
            dims,
            embed: Matrix::zeros(dims.vocab, d),
            layers: vec![layer; dims.n_layers],
            final_norm: vec![T::one(); d],
            unembed: Matrix::zeros(dims.vocab, d),
            unembed_bias: vec![T::zero(); dims.vocab],
        })
    }

    /// Seeded Gaussian initialization. Values are rounded through `f32` so a
    /// `PLWT` round trip reproduces them exactly.
    pub fn random(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(dims)?;
        let mut rng = rng_from_seed(seed);
        let mut fill = |m: &mut Matrix<T>, std: f64| {
            for x in m.as_mut_slice() {
                let z: f64 = rng.sample(StandardNormal);
                *x = T::lit((z * std) as f32 as f64);
            }
        };
        let d = dims.d_model as f64;
        let ff = dims.d_ff as f64;
        fill(&mut w.embed, 1.0);
        for l in &mut w.layers {
            fill(&mut l.wq, 1.0 / d.sqrt());
            fill(&mut l.wk, 1.0 / d.sqrt());
            fill(&mut l.wv, 1.0 / d.sqrt());
            fill(&mut l.wo, 1.0 / d.sqrt());
            fill(&mut l.w_in, 1.0 / d.sqrt());
            fill(&mut l.w_out, 1.0 / ff.sqrt());
        }
        fill(&mut w.unembed, 1.0 / d.sqrt());
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.dims;
        dims.validate()?;
        let d = dims.d_model;
        let check = |name: &str, m: &Matrix<T>, r: usize, c: usize| -> Result<()> {
            if m.rows() != r || m.cols() != c {
                return Err(shape(format!("{name} is {}x{}, expected {r}x{c}", m.rows(), m.cols())));
            }
            if !m.is_finite() {
                return Err(invalid(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        let check_vec = |name: &str, v: &[T], n: usize| -> Result<()> {
            if v.len() != n {
                return Err(shape(format!("{name} has length {}, expected {n}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        check("embed", &self.embed, dims.vocab, d)?;
        check("unembed", &self.unembed, dims.vocab, d)?;
        check_vec("final_norm", &self.final_norm, d)?;
        check_vec("unembed_bias", &self.unembed_bias, dims.vocab)?;
        if self.layers.len() != dims.n_layers {
            return Err(shape(format!("{} layers, expected {}", self.layers.len(), dims.n_layers)));
        }
        for (i, l) in self.layers.iter().enumerate() {
            check_vec(&format!("layers.{i}.attn_norm"), &l.attn_norm, d)?;
            check_vec(&format!("layers.{i}.mlp_norm"), &l.mlp_norm, d)?;
            for (n, m) in [("wq", &l.wq), ("wk", &l.wk), ("wv", &l.wv), ("wo", &l.wo)] {
                check(&format!("layers.{i}.{n}"), m, d, d)?;
            }
            check(&format!("layers.{i}.w_in"), &l.w_in, dims.d_ff, d)?;
            check(&format!("layers.{i}.w_out"), &l.w_out, d, dims.d_ff)?;
        }
        Ok(())
    }

    /// Writes the `PLWT` container (tensors as `f32`).
    pub fn write<W: Write>(&self, sink: W) -> Result<usize> {
        self.validate()?;
        let dims = &self.dims;
        let d = dims.d_model;
        let mut w = TensorWriter::new();
        w.push("embed", &[dims.vocab, d], self.embed.as_slice(), DType::F32)?;
        for (i, l) in self.layers.iter().enumerate() {
            w.push(&format!("layers.{i}.attn_norm"), &[d], &l.attn_norm, DType::F32)?;
            w.push(&format!("layers.{i}.wq"), &[d, d], l.wq.as_slice(), DType::F32)?;
            w.push(&format!("layers.{i}.wk"), &[d, d], l.wk.as_slice(), DType::F32)?;
            w.push(&format!("layers.{i}.wv"), &[d, d], l.wv.as_slice(), DType::F32)?;
            w.push(&format!("layers.{i}.wo"), &[d, d], l.wo.as_slice(), DType::F32)?;
            w.push(&format!("layers.{i}.mlp_norm"), &[d], &l.mlp_norm, DType::F32)?;
            w.push(&format!("layers.{i}.w_in"), &[dims.d_ff, d], l.w_in.as_slice(), DType::F32)?;
            w.push(&format!("layers.{i}.w_out"), &[d, dims.d_ff], l.w_out.as_slice(), DType::F32)?;
        }
        w.push("final_norm", &[d], &self.final_norm, DType::F32)?;
        w.push("unembed", &[dims.vocab, d], self.unembed.as_slice(), DType::F32)?;
        w.push("unembed_bias", &[dims.vocab], &self.unembed_bias, DType::F32)?;
        let mut extra = Map::new();
        extra.insert("dims".into(), serde_json::to_value(dims)?);
        w.finish(WEIGHTS_MAGIC, extra, sink)
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let f = read_container(WEIGHTS_MAGIC, source)?;
        let dims: ModelDims = serde_json::from_value(
            f.header
                .get("dims")
                .cloned()
                .ok_or_else(|| Error::Format("weight header has no dims".into()))?,
        )
        .map_err(|e| Error::Format(format!("weight dims: {e}")))?;
        dims.validate()?;
        let d = dims.d_model;
        let mat = |name: &str, r: usize, c: usize| -> Result<Matrix<T>> {
            Matrix::from_vec(r, c, f.tensor_as(name, &[r, c])?)
        };
        let mut layers = Vec::with_capacity(dims.n_layers);
        for i in 0..dims.n_layers {
            layers.push(LayerWeights {
                attn_norm: f.tensor_as(&format!("layers.{i}.attn_norm"), &[d])?,
                wq: mat(&format!("layers.{i}.wq"), d, d)?,
                wk: mat(&format!("layers.{i}.wk"), d, d)?,
                wv: mat(&format!("layers.{i}.wv"), d, d)?,
                wo: mat(&format!("layers.{i}.wo"), d, d)?,
                mlp_norm: f.tensor_as(&format!("layers.{i}.mlp_norm"), &[d])?,
                w_in: mat(&format!("layers.{i}.w_in"), dims.d_ff, d)?,
                w_out: mat(&format!("layers.{i}.w_out"), d, dims.d_ff)?,
            });
        }
        let w = Self {
            dims,
            embed: mat("embed", dims.vocab, d)?,
            layers,
            final_norm: f.tensor_as("final_norm", &[d])?,
            unembed: mat("unembed", dims.vocab, d)?,
            unembed_bias: f.tensor_as("unembed_bias", &[dims.vocab])?,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<usize> {
        let mut out = BufWriter::new(File::create(path)?);
        let n = self.write(&mut out)?;
        out.flush()?;
        Ok(n)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
