//! The composition encoder.
//!
//! A composition `x` (Z-scored fractions, length `n`) passes through four
//! stages:
//!
//! 1. proportion-modulated embedding, `h_i = x_i · e_i`;
//! 2. residual graph convolution over a low-rank unit-diagonal adjacency
//!    `A = V̂ V̂ᵀ`, `z_i = h_i + Σ_{j≠i} a_ij h_j / (n − 1)`;
//! 3. single-head scaled dot-product self-attention mapping `d → dk`;
//! 4. a projection head: flatten (row-major) → linear → batch norm → ReLU →
//!    linear → L2 normalization.
//!
//! The output is a unit-norm feature of length `k`.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SplitInfo, CHECKPOINT_MAGIC};
pub use forward::{
    adjacency, embed_proportions, forward, forward_batch_eval, forward_batch_train, graph_convolve,
    normalized_factors, project, self_attention, AttentionOutput, BatchTrace, ForwardTrace,
};

use crate::error::{Error, Result};
use crate::numeric::{gaussian, BatchNormState, Matrix, SeededRng};

/// Layer sizes of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Number of components.
    pub n: usize,
    /// Embedding width.
    pub d: usize,
    /// Rank of the adjacency factorization.
    pub f: usize,
    /// Attention key/value width.
    pub dk: usize,
    /// Hidden width of the projection head.
    pub h: usize,
    /// Output feature width.
    pub k: usize,
}

impl ArchConfig {
    pub const DEFAULT_D: usize = 16;
    pub const DEFAULT_F: usize = 5;
    pub const DEFAULT_DK: usize = 16;
    pub const DEFAULT_H: usize = 64;
    pub const DEFAULT_K: usize = 8;

    pub fn with_defaults(n: usize) -> Self {
        Self {
            n,
            d: Self::DEFAULT_D,
            f: Self::DEFAULT_F,
            dk: Self::DEFAULT_DK,
            h: Self::DEFAULT_H,
            k: Self::DEFAULT_K,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n", self.n),
            ("d", self.d),
            ("f", self.f),
            ("dk", self.dk),
            ("h", self.h),
            ("k", self.k),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("architecture dimension `{name}` must be at least 1")));
        }
        if self.n < 2 {
            return Err(Error::Config("the encoder needs at least 2 components".into()));
        }
        if self.f > self.n {
            log::warn!(
                "adjacency rank f = {} exceeds component count n = {}",
                self.f,
                self.n
            );
        }
        Ok(())
    }

    /// Length of the flattened attention output fed to the projection head.
    pub fn flat_len(&self) -> usize {
        self.n * self.dk
    }
}

/// Identifies one trainable tensor. Iteration order is the serialization
/// and gradient-check order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    Embed,
    Factors,
    Wq,
    Wk,
    Wv,
    W1,
    B1,
    W2,
    B2,
    BnGamma,
    BnBeta,
}

impl ParamId {
    pub const ALL: [ParamId; 11] = [
        ParamId::Embed,
        ParamId::Factors,
        ParamId::Wq,
        ParamId::Wk,
        ParamId::Wv,
        ParamId::W1,
        ParamId::B1,
        ParamId::W2,
        ParamId::B2,
        ParamId::BnGamma,
        ParamId::BnBeta,
    ];

    /// Weight matrices receive weight decay; biases and batch-norm
    /// parameters do not.
    pub fn is_weight(self) -> bool {
        !matches!(
            self,
            ParamId::B1 | ParamId::B2 | ParamId::BnGamma | ParamId::BnBeta
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Embed => "embed",
            ParamId::Factors => "factors",
            ParamId::Wq => "w_q",
            ParamId::Wk => "w_k",
            ParamId::Wv => "w_v",
            ParamId::W1 => "w1",
            ParamId::B1 => "b1",
            ParamId::W2 => "w2",
            ParamId::B2 => "b2",
            ParamId::BnGamma => "bn_gamma",
            ParamId::BnBeta => "bn_beta",
        }
    }
}

/// All trainable tensors plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Component embeddings, `n × d`.
    pub embed: Matrix,
    /// Low-rank adjacency factors, `n × f`; rows are normalized on use.
    pub factors: Matrix,
    /// Query/key/value projections, `d × dk`.
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    /// First projection layer, `(n·dk) × h`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// Second projection layer, `h × k`.
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub bn: BatchNormState,
}

fn init_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    let std = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| gaussian(rng, 0.0, std)).collect();
    Matrix::new(rows, cols, data).expect("finite gaussian draws")
}

/// Weights ~ `N(0, 1/√fan_in)` with `fan_in` the row count of each matrix;
/// biases zero; batch norm neutral.
pub fn init_params(cfg: &ArchConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = SeededRng::new(seed);
    Ok(ModelParams {
        embed: init_matrix(&mut rng, cfg.n, cfg.d),
        factors: init_matrix(&mut rng, cfg.n, cfg.f),
        wq: init_matrix(&mut rng, cfg.d, cfg.dk),
        wk: init_matrix(&mut rng, cfg.d, cfg.dk),
        wv: init_matrix(&mut rng, cfg.d, cfg.dk),
        w1: init_matrix(&mut rng, cfg.flat_len(), cfg.h),
        b1: vec![0.0; cfg.h],
        w2: init_matrix(&mut rng, cfg.h, cfg.k),
        b2: vec![0.0; cfg.k],
        bn: BatchNormState::new(cfg.h),
    })
}

impl ModelParams {
    pub fn tensor(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::Embed => self.embed.data(),
            ParamId::Factors => self.factors.data(),
            ParamId::Wq => self.wq.data(),
            ParamId::Wk => self.wk.data(),
            ParamId::Wv => self.wv.data(),
            ParamId::W1 => self.w1.data(),
            ParamId::B1 => &self.b1,
            ParamId::W2 => self.w2.data(),
            ParamId::B2 => &self.b2,
            ParamId::BnGamma => &self.bn.gamma,
            ParamId::BnBeta => &self.bn.beta,
        }
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut [f64] {
        match id {
            ParamId::Embed => self.embed.data_mut(),
            ParamId::Factors => self.factors.data_mut(),
            ParamId::Wq => self.wq.data_mut(),
            ParamId::Wk => self.wk.data_mut(),
            ParamId::Wv => self.wv.data_mut(),
            ParamId::W1 => self.w1.data_mut(),
            ParamId::B1 => &mut self.b1,
            ParamId::W2 => self.w2.data_mut(),
            ParamId::B2 => &mut self.b2,
            ParamId::BnGamma => &mut self.bn.gamma,
            ParamId::BnBeta => &mut self.bn.beta,
        }
    }

    /// Checks every tensor shape against `cfg` and that all values are finite.
    pub fn validate(&self, cfg: &ArchConfig) -> Result<()> {
        let expect = [
            ("embed", self.embed.shape(), (cfg.n, cfg.d)),
            ("factors", self.factors.shape(), (cfg.n, cfg.f)),
            ("w_q", self.wq.shape(), (cfg.d, cfg.dk)),
            ("w_k", self.wk.shape(), (cfg.d, cfg.dk)),
            ("w_v", self.wv.shape(), (cfg.d, cfg.dk)),
            ("w1", self.w1.shape(), (cfg.flat_len(), cfg.h)),
            ("w2", self.w2.shape(), (cfg.h, cfg.k)),
            ("b1", (self.b1.len(), 1), (cfg.h, 1)),
            ("b2", (self.b2.len(), 1), (cfg.k, 1)),
            ("bn", (self.bn.features(), 1), (cfg.h, 1)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::shape("ModelParams::validate", format!("{name} {want:?}"), format!("{got:?}")));
            }
        }
        let bn = &self.bn;
        if bn.beta.len() != cfg.h || bn.running_mean.len() != cfg.h || bn.running_var.len() != cfg.h {
            return Err(Error::shape("ModelParams::validate", "batch-norm vectors of length h", cfg.h));
        }
        for id in ParamId::ALL {
            if self.tensor(id).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}", id.name())));
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            n: self.embed.rows(),
            d: self.embed.cols(),
            f: self.factors.cols(),
            dk: self.wq.cols(),
            h: self.w1.cols(),
            k: self.w2.cols(),
        }
    }

    pub fn num_trainable(&self) -> usize {
        ParamId::ALL.iter().map(|&id| self.tensor(id).len()).sum()
    }
}
