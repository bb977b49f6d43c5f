//! Two-stage fusion of the three view embeddings: pairwise factorized
//! bilinear pooling with power and L2 normalization, then multi-head
//! self-attention over the locally fused vectors and mean pooling into the
//! classifier input.

use rand::Rng;
use thiserror::Error;

use crate::encoders::View;
use crate::nn::Linear;
use crate::tensor::{concat_cols, stack_rows, Parameter, Tensor, TensorError};
use crate::Scalar;

pub const FUSED_DIM: usize = 1024;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("attention produced a non-finite value")]
    NonFiniteAttention,
    #[error("fusion needs the {0:?} view but it was not provided")]
    MissingView(View),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy)]
pub struct MfbConfig {
    /// Pooling window: consecutive factors summed per output entry.
    pub k: usize,
    /// Output dimension of each locally fused vector.
    pub o: usize,
    pub dropout_p: f64,
}

impl Default for MfbConfig {
    fn default() -> Self {
        MfbConfig {
            k: 5,
            o: 512,
            dropout_p: 0.1,
        }
    }
}

/// Factorized bilinear pooling of one embedding pair: project both inputs
/// to `k * o` factors, multiply elementwise, sum-pool windows of `k`, then
/// signed square root and L2 normalization.
pub struct MfbPair<T: Scalar> {
    pub w: Linear<T>,
    pub q: Linear<T>,
    pub cfg: MfbConfig,
}

/// `pooled` is the sum-pooled bilinear vector before the normalizations
/// that produce `vector`.
pub struct MfbOutput<T: Scalar> {
    pub pooled: Tensor<T>,
    pub vector: Tensor<T>,
}

impl<T: Scalar> MfbPair<T> {
    pub fn new(name: &str, in_x: usize, in_y: usize, cfg: MfbConfig, rng: &mut dyn Rng) -> Self {
        MfbPair {
            w: Linear::new(&format!("{name}.w"), in_x, cfg.k * cfg.o, false, rng),
            q: Linear::new(&format!("{name}.q"), in_y, cfg.k * cfg.o, false, rng),
            cfg,
        }
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        training: bool,
        rng: &mut dyn Rng,
    ) -> Result<MfbOutput<T>, TensorError> {
        let fx = self.w.forward(x)?;
        let fy = self.q.forward(y)?;
        let prod = fx.mul(&fy)?.dropout(self.cfg.dropout_p, rng, training)?;
        let pooled = prod.sum_pool_1d(self.cfg.k)?;
        let vector = pooled.sqrt_signed().l2_normalize()?;
        Ok(MfbOutput { pooled, vector })
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        let mut out = self.w.params();
        out.extend(self.q.params());
        out
    }
}

/// The pairwise stage: one [`MfbPair`] per unordered pair of active views,
/// rows stacked in pair order. With two active views there is one pair;
/// with one, the view is paired with itself.
pub struct LocalFusion<T: Scalar> {
    pairs: Vec<(usize, usize, MfbPair<T>)>,
    o: usize,
}

fn pair_name(i: usize, j: usize) -> String {
    format!("mfb.v{}v{}", i + 1, j + 1)
}

impl<T: Scalar> LocalFusion<T> {
    /// `dims[i]` is the embedding width of view i; `active` lists view
    /// indices in ascending order.
    pub fn new(dims: [usize; 3], active: &[usize], cfg: MfbConfig, rng: &mut dyn Rng) -> Self {
        assert!(!active.is_empty() && active.len() <= 3);
        assert!(active.windows(2).all(|w| w[0] < w[1]));
        let index_pairs: Vec<(usize, usize)> = match active {
            [i] => vec![(*i, *i)],
            _ => {
                let mut pairs = Vec::new();
                for a in 0..active.len() {
                    for b in a + 1..active.len() {
                        pairs.push((active[a], active[b]));
                    }
                }
                pairs
            }
        };
        let pairs = index_pairs
            .into_iter()
            .map(|(i, j)| {
                let name = pair_name(i, j);
                (i, j, MfbPair::new(&name, dims[i], dims[j], cfg, rng))
            })
            .collect();
        LocalFusion { pairs, o: cfg.o }
    }

    pub fn token_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn out_dim(&self) -> usize {
        self.o
    }

    /// Fuse each pair and stack the results into a `[pairs, o]` matrix.
    pub fn fuse(
        &self,
        views: [Option<&Tensor<T>>; 3],
        training: bool,
        rng: &mut dyn Rng,
    ) -> Result<Tensor<T>, FusionError> {
        let get = |i: usize| {
            views[i].ok_or(FusionError::MissingView(match i {
                0 => View::Sensitivity,
                1 => View::Context,
                _ => View::Environment,
            }))
        };
        let mut rows = Vec::with_capacity(self.pairs.len());
        for (i, j, pair) in &self.pairs {
            rows.push(pair.forward(get(*i)?, get(*j)?, training, rng)?.vector);
        }
        Ok(stack_rows(&rows)?)
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        self.pairs.iter().flat_map(|(_, _, p)| p.params()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub heads: usize,
    /// Shared projection width (the first-stage Q/K/V maps).
    pub u: usize,
    /// Per-head projection width.
    pub p: usize,
    /// Output width after the head-concat projection.
    pub p_o: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            heads: 4,
            u: 256,
            p: 64,
            p_o: FUSED_DIM,
        }
    }
}

/// Multi-head scaled dot-product self-attention over the fused rows,
/// followed by mean pooling over tokens.
pub struct GlobalFusion<T: Scalar> {
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    head_q: Vec<Linear<T>>,
    head_k: Vec<Linear<T>>,
    head_v: Vec<Linear<T>>,
    wo: Linear<T>,
    cfg: AttentionConfig,
}

/// Intermediate products exposed for inspection: per-head attention
/// matrices, per-token outputs, and the pooled vector.
pub struct FusionDetails<T: Scalar> {
    pub attention: Vec<Tensor<T>>,
    pub tokens: Tensor<T>,
    pub fused: Tensor<T>,
}

impl<T: Scalar> GlobalFusion<T> {
    pub fn new(in_dim: usize, cfg: AttentionConfig, rng: &mut dyn Rng) -> Self {
        let mk = |n: &str, i: usize, o: usize, rng: &mut dyn Rng| Linear::new(n, i, o, false, rng);
        GlobalFusion {
            wq: mk("attn.wq", in_dim, cfg.u, rng),
            wk: mk("attn.wk", in_dim, cfg.u, rng),
            wv: mk("attn.wv", in_dim, cfg.u, rng),
            head_q: (0..cfg.heads)
                .map(|h| mk(&format!("attn.head{h}.q"), cfg.u, cfg.p, rng))
                .collect(),
            head_k: (0..cfg.heads)
                .map(|h| mk(&format!("attn.head{h}.k"), cfg.u, cfg.p, rng))
                .collect(),
            head_v: (0..cfg.heads)
                .map(|h| mk(&format!("attn.head{h}.v"), cfg.u, cfg.p, rng))
                .collect(),
            wo: mk("attn.wo", cfg.heads * cfg.p, cfg.p_o, rng),
            cfg,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.cfg.p_o
    }

    pub fn fuse(&self, m: &Tensor<T>) -> Result<Tensor<T>, FusionError> {
        Ok(self.fuse_with_details(m)?.fused)
    }

    pub fn fuse_with_details(&self, m: &Tensor<T>) -> Result<FusionDetails<T>, FusionError> {
        if !m.to_vec().iter().all(|v| v.is_finite()) {
            return Err(FusionError::NonFiniteAttention);
        }
        let q0 = self.wq.forward_rows(m)?;
        let k0 = self.wk.forward_rows(m)?;
        let v0 = self.wv.forward_rows(m)?;
        let scale = T::from_f64(1.0 / (self.cfg.p as f64).sqrt());
        let mut attention = Vec::with_capacity(self.cfg.heads);
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = self.head_q[h].forward_rows(&q0)?;
            let k = self.head_k[h].forward_rows(&k0)?;
            let v = self.head_v[h].forward_rows(&v0)?;
            let scores = q.matmul(&k.transpose()?)?.scale(scale);
            let weights = scores.softmax_rows()?;
            heads.push(weights.matmul(&v)?);
            attention.push(weights);
        }
        let tokens = self.wo.forward_rows(&concat_cols(&heads)?)?;
        let fused = tokens.mean_axis0()?;
        if !fused.to_vec().iter().all(|v| v.is_finite()) {
            return Err(FusionError::NonFiniteAttention);
        }
        Ok(FusionDetails {
            attention,
            tokens,
            fused,
        })
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        for l in [&self.wq, &self.wk, &self.wv] {
            out.extend(l.params());
        }
        for set in [&self.head_q, &self.head_k, &self.head_v] {
            for l in set {
                out.extend(l.params());
            }
        }
        out.extend(self.wo.params());
        out
    }
}
