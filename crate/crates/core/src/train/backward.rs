//! Reverse-mode gradients of the encoder, written out layer by layer.
//!
//! The batch shares one adjacency matrix and one set of batch-norm
//! statistics, so those two layers are differentiated over the whole batch;
//! everything else is per sample.

use super::loss::{loss_from_similarities, loss_similarity_grads};
use crate::error::{Error, Result};
use crate::model::{BatchTrace, ForwardTrace, ModelParams, ParamId};
use crate::numeric::{dot, matmul, matmul_nt, matmul_tn, Matrix};

/// One gradient tensor per trainable parameter, same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: Matrix,
    pub factors: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            embed: z(&p.embed),
            factors: z(&p.factors),
            wq: z(&p.wq),
            wk: z(&p.wk),
            wv: z(&p.wv),
            w1: z(&p.w1),
            b1: vec![0.0; p.b1.len()],
            w2: z(&p.w2),
            b2: vec![0.0; p.b2.len()],
            bn_gamma: vec![0.0; p.bn.gamma.len()],
            bn_beta: vec![0.0; p.bn.beta.len()],
        }
    }

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
            ParamId::BnGamma => &self.bn_gamma,
            ParamId::BnBeta => &self.bn_beta,
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
            ParamId::BnGamma => &mut self.bn_gamma,
            ParamId::BnBeta => &mut self.bn_beta,
        }
    }

    pub fn is_finite(&self) -> bool {
        ParamId::ALL
            .iter()
            .all(|&id| self.tensor(id).iter().all(|v| v.is_finite()))
    }
}

fn check(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("gradient at the {layer} layer")))
    }
}

/// Backpropagates through the projection head down to `∂/∂pre_bn`, given
/// the feature gradient of one sample. Accumulates `w2`/`b2` gradients and
/// returns `∂/∂post_bn`.
fn head_backward(t: &ForwardTrace, df: &[f64], params: &ModelParams, grads: &mut Gradients) -> Vec<f64> {
    // L2 normalization
    let dg: Vec<f64> = match t.g_norm {
        Some(norm) => {
            let proj = dot(&t.f_out, df);
            df.iter().zip(&t.f_out).map(|(d, f)| (d - f * proj) / norm).collect()
        }
        None => df.to_vec(),
    };
    let k = dg.len();
    for (b, d) in grads.b2.iter_mut().zip(&dg) {
        *b += d;
    }
    let mut dr = vec![0.0; t.post_relu.len()];
    for (i, &ri) in t.post_relu.iter().enumerate() {
        let w_row = &params.w2.data()[i * k..(i + 1) * k];
        dr[i] = dot(w_row, &dg);
        if ri != 0.0 {
            for (g, d) in grads.w2.row_mut(i).iter_mut().zip(&dg) {
                *g += ri * d;
            }
        }
    }
    if let Some(mask) = &t.dropout_mask {
        for (d, m) in dr.iter_mut().zip(mask) {
            *d *= m;
        }
    }
    // ReLU
    for (d, &b) in dr.iter_mut().zip(&t.post_bn) {
        if b <= 0.0 {
            *d = 0.0;
        }
    }
    dr
}

/// Backpropagates from `∂/∂pre_bn` of one sample to the encoder parameters.
/// Accumulates into `grads` and returns this sample's `∂/∂A`.
fn encoder_backward(t: &ForwardTrace, dpre: &[f64], params: &ModelParams, grads: &mut Gradients) -> Result<Matrix> {
    let (n, d) = t.h_mod.shape();
    let dk = t.u.cols();
    let hdim = dpre.len();

    // first projection layer
    for (b, g) in grads.b1.iter_mut().zip(dpre) {
        *b += g;
    }
    let mut du_flat = vec![0.0; t.u_flat.len()];
    for (p, &up) in t.u_flat.iter().enumerate() {
        let w_row = &params.w1.data()[p * hdim..(p + 1) * hdim];
        du_flat[p] = dot(w_row, dpre);
        if up != 0.0 {
            for (g, dp) in grads.w1.row_mut(p).iter_mut().zip(dpre) {
                *g += up * dp;
            }
        }
    }
    let du = Matrix::new(n, dk, du_flat)?;

    // attention: u = α V,  α = softmax(Q Kᵀ / √dk)
    let dalpha = matmul_nt(&du, &t.v_att)?;
    let dv = matmul_tn(&t.alpha, &du)?;
    let mut ds = Matrix::zeros(n, n);
    for i in 0..n {
        let a_row = t.alpha.row(i);
        let da_row = dalpha.row(i);
        let inner = dot(a_row, da_row);
        for j in 0..n {
            ds.set(i, j, a_row[j] * (da_row[j] - inner));
        }
    }
    let scale = 1.0 / (dk as f64).sqrt();
    ds.scale(scale);
    let dq = matmul(&ds, &t.k)?;
    let dkey = matmul_tn(&ds, &t.q)?;
    check(dq.data(), "attention")?;

    grads.wq.add_scaled(&matmul_tn(&t.z, &dq)?, 1.0);
    grads.wk.add_scaled(&matmul_tn(&t.z, &dkey)?, 1.0);
    grads.wv.add_scaled(&matmul_tn(&t.z, &dv)?, 1.0);

    let mut dz = matmul_nt(&dq, &params.wq)?;
    dz.add_scaled(&matmul_nt(&dkey, &params.wk)?, 1.0);
    dz.add_scaled(&matmul_nt(&dv, &params.wv)?, 1.0);

    // graph convolution: z_i = h_i + Σ_{j≠i} a_ij h_j / (n − 1)
    let inv = 1.0 / (n - 1) as f64;
    let mut dh = dz.clone();
    let mut da = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = t.a.get(i, j) * inv;
            for c in 0..d {
                let v = dh.get(j, c) + w * dz.get(i, c);
                dh.set(j, c, v);
            }
            da.set(i, j, dot(dz.row(i), t.h_mod.row(j)) * inv);
        }
    }
    check(dh.data(), "graph convolution")?;

    // proportion-modulated embedding
    for (i, &xi) in t.x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (g, v) in grads.embed.row_mut(i).iter_mut().zip(dh.row(i)) {
            *g += xi * v;
        }
    }
    Ok(da)
}

/// Gradients of a scalar objective with respect to every trainable
/// parameter, given `∂objective/∂f` for every sample of a train-mode batch.
pub fn backward(trace: &BatchTrace, feature_grads: &[Vec<f64>], params: &ModelParams) -> Result<Gradients> {
    let b = trace.samples.len();
    if feature_grads.len() != b {
        return Err(Error::shape("backward", b, feature_grads.len()));
    }
    let mut grads = Gradients::zeros_like(params);

    let dpost: Vec<Vec<f64>> = trace
        .samples
        .iter()
        .zip(feature_grads)
        .map(|(t, df)| head_backward(t, df, params, &mut grads))
        .collect();
    for d in &dpost {
        check(d, "projection head")?;
    }

    // batch normalization with batch statistics
    let h = params.bn.features();
    let xhat = &trace.bn_cache.xhat;
    let mut sum_dxhat = vec![0.0; h];
    let mut sum_dxhat_xhat = vec![0.0; h];
    for (row, xr) in dpost.iter().zip(xhat) {
        for j in 0..h {
            grads.bn_beta[j] += row[j];
            grads.bn_gamma[j] += row[j] * xr[j];
            let dxh = row[j] * params.bn.gamma[j];
            sum_dxhat[j] += dxh;
            sum_dxhat_xhat[j] += dxh * xr[j];
        }
    }
    let bf = b as f64;
    let mut da_total = Matrix::zeros(params.embed.rows(), params.embed.rows());
    for (s, (row, xr)) in dpost.iter().zip(xhat).enumerate() {
        let dpre: Vec<f64> = (0..h)
            .map(|j| {
                let dxh = row[j] * params.bn.gamma[j];
                trace.bn_cache.inv_std[j] / bf * (bf * dxh - sum_dxhat[j] - xr[j] * sum_dxhat_xhat[j])
            })
            .collect();
        check(&dpre, "batch normalization")?;
        let da = encoder_backward(&trace.samples[s], &dpre, params, &mut grads)?;
        da_total.add_scaled(&da, 1.0);
    }

    // A = V̂ V̂ᵀ, then V̂_i = V_i / ‖V_i‖
    let mut sym = da_total.clone();
    sym.add_scaled(&da_total.transpose(), 1.0);
    let dvhat = matmul(&sym, &trace.factors_hat)?;
    for i in 0..dvhat.rows() {
        let vh = trace.factors_hat.row(i);
        let dvh = dvhat.row(i);
        let proj = dot(vh, dvh);
        let norm = trace.factor_norms[i];
        for (c, g) in grads.factors.row_mut(i).iter_mut().enumerate() {
            *g = (dvh[c] - vh[c] * proj) / norm;
        }
    }

    if !grads.is_finite() {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    Ok(grads)
}

/// Mean triplet loss of a batch laid out as consecutive
/// `(anchor, positive, negative)` samples.
pub fn triplet_batch_loss(features: &[Vec<f64>]) -> Result<f64> {
    if features.is_empty() || !features.len().is_multiple_of(3) {
        return Err(Error::shape("triplet batch", "a non-empty multiple of 3", features.len()));
    }
    let t = (features.len() / 3) as f64;
    let total: f64 = features
        .chunks_exact(3)
        .map(|c| loss_from_similarities(dot(&c[0], &c[1]), dot(&c[0], &c[2])))
        .sum();
    Ok(total / t)
}

/// Batch-mean triplet loss and `∂loss/∂f` per sample, same layout as
/// [`triplet_batch_loss`].
pub fn triplet_feature_grads(features: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let loss = triplet_batch_loss(features)?;
    let scale = 1.0 / (features.len() / 3) as f64;
    let mut grads = Vec::with_capacity(features.len());
    for c in features.chunks_exact(3) {
        let (f, fp, fneg) = (&c[0], &c[1], &c[2]);
        let (gp, gn) = loss_similarity_grads(dot(f, fp), dot(f, fneg));
        let (gp, gn) = (gp * scale, gn * scale);
        grads.push(fp.iter().zip(fneg).map(|(a, b)| gp * a + gn * b).collect());
        grads.push(f.iter().map(|v| gp * v).collect());
        grads.push(f.iter().map(|v| gn * v).collect());
    }
    Ok((loss, grads))
}

/// Loss and parameter gradients for a triplet batch trace.
pub fn triplet_loss_and_grads(trace: &BatchTrace, params: &ModelParams) -> Result<(f64, Gradients)> {
    let features = trace.features();
    let (loss, dfs) = triplet_feature_grads(&features)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("triplet loss".into()));
    }
    Ok((loss, backward(trace, &dfs, params)?))
}
