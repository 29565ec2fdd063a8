// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token cross-entropy and its gradient by manual backpropagation.

use super::forward::{gelu_grad, run, Activations, LnCache};
use super::params::Params;
use super::real::{matmul, Real};
use crate::error::{Error, Result};

/// Negative log-likelihood of `target` under `logits`, in 64-bit precision.
pub(crate) fn token_nll<T: Real>(logits: &[T], target: u32) -> f64 {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &x| m.max(x.to_f64()));
    let sum: f64 = logits.iter().map(|&x| (x.to_f64() - max).exp()).sum();
    max + sum.ln() - logits[target as usize].to_f64()
}

/// Mean next-token cross-entropy (nats) over every position that has a
/// target, and its gradient with respect to every parameter.
pub fn loss_and_grads<T: Real>(params: &Params<T>, batch: &[Vec<u32>]) -> Result<(f64, Params<T>)> {
    if batch.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let count: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
    if count == 0 {
        return Err(Error::usage("batch has no next-token targets"));
    }
    let mut grads = params.zeros_like();
    let mut loss = 0.0f64;
    let inv_count = T::from_f64(1.0 / count as f64);
    let v = params.config.d_vocab;
    for seq in batch {
        let acts = run(params, seq, None)?;
        let t = seq.len();
        let mut dlogits = vec![T::ZERO; t * v];
        for pos in 0..t.saturating_sub(1) {
            let row = &acts.logits[pos * v..(pos + 1) * v];
            let target = seq[pos + 1];
            loss += token_nll(row, target);
            let max = row.iter().copied().fold(T::NEG_INFINITY, |m, x| m.max(x));
            let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
            let inv_sum = T::ONE / exps.iter().copied().sum::<T>();
            let drow = &mut dlogits[pos * v..(pos + 1) * v];
            for (dj, e) in drow.iter_mut().zip(exps) {
                *dj = e * inv_sum * inv_count;
            }
            drow[target as usize] -= inv_count;
        }
        backward_sequence(params, seq, &acts, &dlogits, &mut grads.data);
    }
    Ok((loss / count as f64, grads))
}

#[allow(clippy::too_many_arguments)]
fn layernorm_backward<T: Real>(
    dy: &[T],
    cache: &LnCache<T>,
    w: &[T],
    grads: &mut [T],
    w_off: usize,
    b_off: usize,
    rows: usize,
    d: usize,
) -> Vec<T> {
    let mut dx = vec![T::ZERO; rows * d];
    let inv_d = T::ONE / T::from_f64(d as f64);
    let mut dxhat = vec![T::ZERO; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::ZERO;
        let mut mean_dxhat_xhat = T::ZERO;
        for i in 0..d {
            grads[w_off + i] += dyr[i] * xh[i];
            grads[b_off + i] += dyr[i];
            dxhat[i] = dyr[i] * w[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rs = cache.rstd[r];
        for i in 0..d {
            dx[r * d + i] = rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

fn sum_rows_into<T: Real>(dst: &mut [T], m: &[T], rows: usize, cols: usize) {
    for r in 0..rows {
        for (d, &x) in dst.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *d += x;
        }
    }
}

fn backward_sequence<T: Real>(
    params: &Params<T>,
    tokens: &[u32],
    acts: &Activations<T>,
    dlogits: &[T],
    g: &mut [T],
) {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.data;
    let (t, d, h, dh, v) = (
        tokens.len(),
        cfg.d_model,
        cfg.n_heads,
        cfg.d_head,
        cfg.d_vocab,
    );
    let inv_scale = T::from_f64(1.0 / cfg.attn_scale);

    // unembed
    matmul(
        &mut g[lay.w_u..lay.w_u + d * v],
        &acts.lnf_out,
        dlogits,
        d,
        t,
        v,
        true,
        false,
        true,
    );
    sum_rows_into(&mut g[lay.b_u..lay.b_u + v], dlogits, t, v);
    let mut dn = vec![T::ZERO; t * d];
    matmul(
        &mut dn,
        dlogits,
        &p[lay.w_u..lay.w_u + d * v],
        t,
        v,
        d,
        false,
        true,
        false,
    );
    let mut dx = layernorm_backward(
        &dn,
        &acts.lnf,
        &p[lay.lnf_w..][..d],
        g,
        lay.lnf_w,
        lay.lnf_b,
        t,
        d,
    );

    for (b, ba) in lay.blocks.iter().zip(&acts.blocks).rev() {
        if let (Some(mo), Some(ma)) = (b.mlp, &ba.mlp) {
            let dm = cfg.d_mlp;
            matmul(
                &mut g[mo.w_out..mo.w_out + dm * d],
                &ma.post,
                &dx,
                dm,
                t,
                d,
                true,
                false,
                true,
            );
            sum_rows_into(&mut g[mo.b_out..mo.b_out + d], &dx, t, d);
            let mut dpre = vec![T::ZERO; t * dm];
            matmul(
                &mut dpre,
                &dx,
                &p[mo.w_out..mo.w_out + dm * d],
                t,
                d,
                dm,
                false,
                true,
                false,
            );
            dpre.iter_mut()
                .zip(&ma.pre)
                .for_each(|(dp, &x)| *dp *= gelu_grad(x));
            matmul(
                &mut g[mo.w_in..mo.w_in + d * dm],
                &ma.ln2_out,
                &dpre,
                d,
                t,
                dm,
                true,
                false,
                true,
            );
            sum_rows_into(&mut g[mo.b_in..mo.b_in + dm], &dpre, t, dm);
            let mut dln2 = vec![T::ZERO; t * d];
            matmul(
                &mut dln2,
                &dpre,
                &p[mo.w_in..mo.w_in + d * dm],
                t,
                dm,
                d,
                false,
                true,
                false,
            );
            let dres = layernorm_backward(
                &dln2,
                &ma.ln2,
                &p[mo.ln2_w..][..d],
                g,
                mo.ln2_w,
                mo.ln2_b,
                t,
                d,
            );
            dx.iter_mut().zip(&dres).for_each(|(a, &r)| *a += r);
        }

        let mut dln1 = vec![T::ZERO; t * d];
        let mut dz = vec![T::ZERO; t * dh];
        let mut dpat = vec![T::ZERO; t * t];
        let mut dq = vec![T::ZERO; t * dh];
        let mut dk = vec![T::ZERO; t * dh];
        let mut dv = vec![T::ZERO; t * dh];
        for hi in 0..h {
            if !ba.active[hi] {
                continue;
            }
            let hs = hi * t * dh;
            let w_span = hi * dh * d;
            let zh = &ba.z[hs..hs + t * dh];
            let qh = &ba.q[hs..hs + t * dh];
            let kh = &ba.k[hs..hs + t * dh];
            let vh = &ba.v[hs..hs + t * dh];
            let pat = &ba.pattern[hi * t * t..(hi + 1) * t * t];
            let wo = b.w_o + w_span;
            matmul(
                &mut g[wo..wo + dh * d],
                zh,
                &dx,
                dh,
                t,
                d,
                true,
                false,
                true,
            );
            matmul(
                &mut dz,
                &dx,
                &p[wo..wo + dh * d],
                t,
                d,
                dh,
                false,
                true,
                false,
            );
            matmul(&mut dpat, &dz, vh, t, dh, t, false, true, false);
            matmul(&mut dv, pat, &dz, t, t, dh, true, false, false);
            // softmax backward, restricted to the causal prefix
            for i in 0..t {
                let pr = &pat[i * t..(i + 1) * t];
                let dr = &mut dpat[i * t..(i + 1) * t];
                let dot: T = (0..=i).map(|j| pr[j] * dr[j]).sum();
                for j in 0..=i {
                    dr[j] = pr[j] * (dr[j] - dot) * inv_scale;
                }
                dr[i + 1..].iter_mut().for_each(|x| *x = T::ZERO);
            }
            matmul(&mut dq, &dpat, kh, t, t, dh, false, false, false);
            matmul(&mut dk, &dpat, qh, t, t, dh, true, false, false);
            for (dproj, w_off, b_off) in [
                (&dq, b.w_q, b.b_q),
                (&dk, b.w_k, b.b_k),
                (&dv, b.w_v, b.b_v),
            ] {
                let wo = w_off + w_span;
                matmul(
                    &mut g[wo..wo + dh * d],
                    dproj,
                    &ba.ln1_out,
                    dh,
                    t,
                    d,
                    true,
                    false,
                    true,
                );
                sum_rows_into(&mut g[b_off + hi * dh..b_off + (hi + 1) * dh], dproj, t, dh);
                matmul(
                    &mut dln1,
                    dproj,
                    &p[wo..wo + dh * d],
                    t,
                    dh,
                    d,
                    false,
                    false,
                    true,
                );
            }
        }
        let dres = layernorm_backward(
            &dln1,
            &ba.ln1,
            &p[b.ln1_w..][..d],
            g,
            b.ln1_w,
            b.ln1_b,
            t,
            d,
        );
        dx.iter_mut().zip(&dres).for_each(|(a, &r)| *a += r);
    }

    for (pos, &tok) in tokens.iter().enumerate() {
        let row = &dx[pos * d..(pos + 1) * d];
        let e = lay.w_e + tok as usize * d;
        let pe = lay.w_pos + pos * d;
        for i in 0..d {
            g[e + i] += row[i];
            g[pe + i] += row[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::{init_params, ModelConfig};

    fn tiny(attn_only: bool) -> Params<f64> {
        let cfg = ModelConfig::new(2, 2, 8, 6)
            .with_d_mlp(16)
            .with_attn_only(attn_only)
            .with_init_range(0.3)
            .with_seed(11);
        init_params(&cfg).unwrap().cast()
    }

    fn batch() -> Vec<Vec<u32>> {
        vec![vec![256, 104, 105, 33, 10], vec![256, 7, 7, 200, 3, 9]]
    }

    #[test]
    fn zeroed_model_has_uniform_loss() {
        let mut p = tiny(false);
        for name in ["embed.W_E", "pos_embed.W_pos", "unembed.W_U"] {
            p.tensor_mut(name).unwrap().fill(0.0);
        }
        let (loss, _) = loss_and_grads(&p, &batch()).unwrap();
        assert!((loss - 257f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_gives_identical_loss_and_grads() {
        let p = tiny(false);
        let one = vec![batch()[0].clone()];
        let two = vec![batch()[0].clone(), batch()[0].clone()];
        let (l1, g1) = loss_and_grads(&p, &one).unwrap();
        let (l2, g2) = loss_and_grads(&p, &two).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_is_a_usage_error() {
        assert!(matches!(
            loss_and_grads(&tiny(false), &[]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn spot_check_gradients_against_central_differences() {
        for attn_only in [false, true] {
            let p = tiny(attn_only);
            let (_, g) = loss_and_grads(&p, &batch()).unwrap();
            let eps = 1e-5;
            for idx in (0..p.len()).step_by(37) {
                let mut plus = p.clone();
                plus.data[idx] += eps;
                let mut minus = p.clone();
                minus.data[idx] -= eps;
                let fd = (loss_and_grads(&plus, &batch()).unwrap().0
                    - loss_and_grads(&minus, &batch()).unwrap().0)
                    / (2.0 * eps);
                let a = g.data[idx];
                assert!(
                    (a - fd).abs() <= 1e-6 + 1e-4 * a.abs().max(fd.abs()),
                    "{}: analytic {a} vs numeric {fd}",
                    p.layout.tensor_of(idx).unwrap().name
                );
            }
        }
    }
}
