use super::ModelParams;
use crate::error::{Error, Result};
use crate::numeric::{
    dot, l2_normalize_parts, matmul, matmul_nt, softmax, BatchNormCache, Matrix, Mode, SeededRng,
    NORM_FLOOR,
};

/// Every intermediate of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Normalized input composition.
    pub x: Vec<f64>,
    /// Proportion-modulated embeddings, `n × d`.
    pub h_mod: Matrix,
    /// Adjacency, `n × n`.
    pub a: Matrix,
    /// Graph-convolved embeddings, `n × d`.
    pub z: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v_att: Matrix,
    /// Row-stochastic attention weights, `n × n`.
    pub alpha: Matrix,
    /// Attention output, `n × dk`.
    pub u: Matrix,
    pub u_flat: Vec<f64>,
    /// First projection without its bias.
    pub pre_bias: Vec<f64>,
    pub pre_bn: Vec<f64>,
    pub post_bn: Vec<f64>,
    pub post_relu: Vec<f64>,
    /// Inverted-dropout multipliers applied after the ReLU, if any.
    pub dropout_mask: Option<Vec<f64>>,
    /// Output of the second linear layer, before L2 normalization.
    pub g: Vec<f64>,
    /// Norm divided out of `g`; `None` if the near-zero guard fired.
    pub g_norm: Option<f64>,
    pub f_out: Vec<f64>,
}

/// Traces of a train-mode batch plus the shared state backprop needs.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    /// Row-normalized adjacency factors.
    pub factors_hat: Matrix,
    /// Row norms of the raw factors.
    pub factor_norms: Vec<f64>,
    pub samples: Vec<ForwardTrace>,
    pub bn_cache: BatchNormCache,
}

impl BatchTrace {
    pub fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|t| t.f_out.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub alpha: Matrix,
    pub u: Matrix,
}

fn ensure_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{layer} layer output")))
    }
}

/// Rows of `h_mod` are `x_i · E_i`.
pub fn embed_proportions(x: &[f64], params: &ModelParams) -> Result<Matrix> {
    let (n, d) = params.embed.shape();
    if x.len() != n {
        return Err(Error::shape("embed_proportions", n, x.len()));
    }
    let mut h = params.embed.clone();
    for (i, &xi) in x.iter().enumerate() {
        for v in h.row_mut(i) {
            *v *= xi;
        }
    }
    debug_assert_eq!(h.cols(), d);
    Ok(h)
}

/// Row-normalized factors and the norms that were divided out.
pub fn normalized_factors(params: &ModelParams) -> Result<(Matrix, Vec<f64>)> {
    let mut vhat = params.factors.clone();
    let mut norms = Vec::with_capacity(vhat.rows());
    for i in 0..vhat.rows() {
        let row = vhat.row_mut(i);
        let norm = dot(row, row).sqrt();
        if !(norm > NORM_FLOOR) {
            return Err(Error::Data(format!("adjacency factor row {i} is zero")));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
        norms.push(norm);
    }
    Ok((vhat, norms))
}

/// `A = V̂ V̂ᵀ`: symmetric with unit diagonal.
pub fn adjacency(params: &ModelParams) -> Result<Matrix> {
    let (vhat, _) = normalized_factors(params)?;
    matmul_nt(&vhat, &vhat)
}

/// `z_i = h_i + Σ_{j≠i} a_ij h_j / (n − 1)`.
pub fn graph_convolve(hmat: &Matrix, a: &Matrix) -> Result<Matrix> {
    let (n, d) = hmat.shape();
    if n < 2 {
        return Err(Error::shape("graph_convolve", "at least 2 components", n));
    }
    if a.shape() != (n, n) {
        return Err(Error::shape("graph_convolve", format!("{n}x{n} adjacency"), format!("{:?}", a.shape())));
    }
    let scale = 1.0 / (n - 1) as f64;
    let mut z = hmat.clone();
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = a.get(i, j) * scale;
            if w == 0.0 {
                continue;
            }
            for c in 0..d {
                let v = z.get(i, c) + w * hmat.get(j, c);
                z.set(i, c, v);
            }
        }
    }
    Ok(z)
}

/// Single-head scaled dot-product attention over the component rows of `z`.
pub fn self_attention(z: &Matrix, params: &ModelParams) -> Result<AttentionOutput> {
    let q = matmul(z, &params.wq)?;
    let k = matmul(z, &params.wk)?;
    let v = matmul(z, &params.wv)?;
    let n = z.rows();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut alpha = Matrix::zeros(n, n);
    for i in 0..n {
        let scores: Vec<f64> = (0..n).map(|j| dot(q.row(i), k.row(j)) * scale).collect();
        alpha.row_mut(i).copy_from_slice(&softmax(&scores));
    }
    let u = matmul(&alpha, &v)?;
    Ok(AttentionOutput { q, k, v, alpha, u })
}

fn first_product(u_flat: &[f64], params: &ModelParams) -> Vec<f64> {
    let h = params.w1.cols();
    let mut pre = vec![0.0; h];
    for (p, &up) in u_flat.iter().enumerate() {
        if up == 0.0 {
            continue;
        }
        for (o, w) in pre.iter_mut().zip(&params.w1.data()[p * h..(p + 1) * h]) {
            *o += up * w;
        }
    }
    pre
}

fn add_bias(pre: &[f64], bias: &[f64]) -> Vec<f64> {
    pre.iter().zip(bias).map(|(p, b)| p + b).collect()
}

fn second_linear(r: &[f64], params: &ModelParams) -> Vec<f64> {
    let k = params.w2.cols();
    let mut g = params.b2.clone();
    for (i, &ri) in r.iter().enumerate() {
        if ri == 0.0 {
            continue;
        }
        for (o, w) in g.iter_mut().zip(&params.w2.data()[i * k..(i + 1) * k]) {
            *o += ri * w;
        }
    }
    g
}

/// Runs everything up to (and including) the first projection layer.
fn encode(x: &[f64], params: &ModelParams, a: &Matrix) -> Result<ForwardTrace> {
    let h_mod = embed_proportions(x, params)?;
    let z = graph_convolve(&h_mod, a)?;
    ensure_finite(z.data(), "graph convolution")?;
    let att = self_attention(&z, params)?;
    ensure_finite(att.u.data(), "self-attention")?;
    let u_flat = att.u.data().to_vec();
    if u_flat.len() != params.w1.rows() {
        return Err(Error::shape("project", params.w1.rows(), u_flat.len()));
    }
    let pre_bias = first_product(&u_flat, params);
    let pre_bn = add_bias(&pre_bias, &params.b1);
    ensure_finite(&pre_bn, "first projection")?;
    Ok(ForwardTrace {
        x: x.to_vec(),
        h_mod,
        a: a.clone(),
        z,
        q: att.q,
        k: att.k,
        v_att: att.v,
        alpha: att.alpha,
        u: att.u,
        u_flat,
        pre_bias,
        pre_bn,
        post_bn: Vec::new(),
        post_relu: Vec::new(),
        dropout_mask: None,
        g: Vec::new(),
        g_norm: None,
        f_out: Vec::new(),
    })
}

/// ReLU → second linear layer → L2 normalization, given batch-normed input.
fn finish_head(trace: &mut ForwardTrace, post_bn: Vec<f64>, mask: Option<Vec<f64>>, params: &ModelParams) -> Result<()> {
    let mut r: Vec<f64> = post_bn.iter().map(|v| v.max(0.0)).collect();
    if let Some(m) = &mask {
        for (v, s) in r.iter_mut().zip(m) {
            *v *= s;
        }
    }
    let g = second_linear(&r, params);
    ensure_finite(&g, "second projection")?;
    let (f_out, norm) = l2_normalize_parts(&g);
    if norm.is_none() {
        log::warn!("projection output has near-zero norm; feature left unnormalized");
    }
    trace.post_bn = post_bn;
    trace.post_relu = r;
    trace.dropout_mask = mask;
    trace.g = g;
    trace.g_norm = norm;
    trace.f_out = f_out;
    Ok(())
}

/// Projection head on a single attention output. Train mode needs batch
/// statistics and is rejected here; use [`forward_batch_train`].
pub fn project(u: &Matrix, params: &ModelParams, mode: Mode) -> Result<Vec<f64>> {
    if mode == Mode::Train {
        return Err(Error::BatchTooSmall(1));
    }
    if u.rows() * u.cols() != params.w1.rows() {
        return Err(Error::shape("project", params.w1.rows(), u.rows() * u.cols()));
    }
    let pre = add_bias(&first_product(u.data(), params), &params.b1);
    let r: Vec<f64> = params.bn.eval_one(&pre).iter().map(|v| v.max(0.0)).collect();
    let g = second_linear(&r, params);
    ensure_finite(&g, "second projection")?;
    Ok(l2_normalize_parts(&g).0)
}

/// Single-sample forward pass. Only eval mode is possible for one sample.
pub fn forward(x: &[f64], params: &ModelParams, mode: Mode) -> Result<(Vec<f64>, ForwardTrace)> {
    if mode == Mode::Train {
        return Err(Error::BatchTooSmall(1));
    }
    let a = adjacency(params)?;
    let mut trace = encode(x, params, &a)?;
    let post_bn = params.bn.eval_one(&trace.pre_bn);
    finish_head(&mut trace, post_bn, None, params)?;
    Ok((trace.f_out.clone(), trace))
}

/// Eval-mode forward over many inputs, sharing the adjacency computation.
pub fn forward_batch_eval(xs: &[Vec<f64>], params: &ModelParams) -> Result<Vec<ForwardTrace>> {
    let a = adjacency(params)?;
    xs.iter()
        .map(|x| {
            let mut trace = encode(x, params, &a)?;
            let post_bn = params.bn.eval_one(&trace.pre_bn);
            finish_head(&mut trace, post_bn, None, params)?;
            Ok(trace)
        })
        .collect()
}

/// Train-mode forward over a batch: batch norm uses the statistics of
/// these inputs and updates the running estimates in `params`.
/// With `dropout > 0`, inverted dropout is applied after the ReLU.
pub fn forward_batch_train(
    xs: &[Vec<f64>],
    params: &mut ModelParams,
    dropout: f64,
    rng: &mut SeededRng,
) -> Result<BatchTrace> {
    if xs.len() < 2 {
        return Err(Error::BatchTooSmall(xs.len()));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {dropout}")));
    }
    let (factors_hat, factor_norms) = normalized_factors(params)?;
    let a = matmul_nt(&factors_hat, &factors_hat)?;
    let mut samples = xs
        .iter()
        .map(|x| encode(x, params, &a))
        .collect::<Result<Vec<_>>>()?;
    // The bias cancels against the batch mean, so the batch statistics are
    // taken without it and the cancellation is exact. The running mean
    // still tracks the biased activations used in eval mode.
    let pre: Vec<Vec<f64>> = samples.iter().map(|t| t.pre_bias.clone()).collect();
    let (post, bn_cache) = params.bn.train(&pre)?;
    let m = params.bn.momentum;
    for (rm, b) in params.bn.running_mean.iter_mut().zip(&params.b1) {
        *rm += m * b;
    }
    let h = params.bn.features();
    for (trace, post_bn) in samples.iter_mut().zip(post) {
        let mask = (dropout > 0.0).then(|| {
            let keep = 1.0 / (1.0 - dropout);
            (0..h)
                .map(|_| if rng.uniform() < dropout { 0.0 } else { keep })
                .collect()
        });
        finish_head(trace, post_bn, mask, params)?;
    }
    Ok(BatchTrace {
        factors_hat,
        factor_norms,
        samples,
        bn_cache,
    })
}
