//! Batched multi-head scaled dot-product attention with an optional
//! additive logit bias shared across the batch.

use super::tensor::{gemm_view, View};
use super::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AttnShape {
    pub batch: usize,
    pub nq: usize,
    pub nk: usize,
    pub width: usize,
    pub heads: usize,
}

impl AttnShape {
    pub fn new(batch: usize, nq: usize, nk: usize, width: usize, heads: usize) -> Self {
        assert!(heads > 0 && width.is_multiple_of(heads), "width {width} not divisible by {heads} heads");
        Self { batch, nq, nk, width, heads }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

/// Returns the output `[B * nq, width]` and the attention probabilities laid
/// out as `[B, heads, nq, nk]`.
pub fn attention_forward(
    s: &AttnShape,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: Option<&Tensor>,
    key_mask: Option<&[bool]>,
) -> (Tensor, Vec<f64>) {
    assert_eq!(q.rows(), s.batch * s.nq, "query rows");
    assert_eq!(k.rows(), s.batch * s.nk, "key rows");
    assert_eq!(v.rows(), s.batch * s.nk, "value rows");
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[s.nq * s.nk, s.heads], "bias shape");
    }
    let (w, dh, nq, nk) = (s.width, s.head_dim(), s.nq, s.nk);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; s.batch * s.heads * nq * nk];
    let mut out = vec![0.0; s.batch * nq * w];
    for b in 0..s.batch {
        for h in 0..s.heads {
            let base = (b * s.heads + h) * nq * nk;
            let pv = View::new(base, nk, 1);
            // logits = scale * Q_bh K_bh^T
            gemm_view(
                nq,
                dh,
                nk,
                scale,
                q.data(),
                View::new(b * nq * w + h * dh, w, 1),
                k.data(),
                View::new(b * nk * w + h * dh, 1, w),
                0.0,
                &mut probs,
                pv,
            );
            for i in 0..nq {
                let row = &mut probs[base + i * nk..base + (i + 1) * nk];
                if let Some(bt) = bias {
                    let bd = bt.data();
                    for (j, l) in row.iter_mut().enumerate() {
                        *l += bd[(i * nk + j) * s.heads + h];
                    }
                }
                if let Some(m) = key_mask {
                    for (l, &keep) in row.iter_mut().zip(&m[b * nk..(b + 1) * nk]) {
                        if !keep {
                            *l = f64::NEG_INFINITY;
                        }
                    }
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for l in row.iter_mut() {
                    *l = if *l == f64::NEG_INFINITY { 0.0 } else { (*l - max).exp() };
                    denom += *l;
                }
                for l in row.iter_mut() {
                    *l /= denom;
                }
            }
            // out_bh = P V_bh
            gemm_view(
                nq,
                nk,
                dh,
                1.0,
                &probs[base..base + nq * nk],
                View::new(0, nk, 1),
                v.data(),
                View::new(b * nk * w + h * dh, w, 1),
                0.0,
                &mut out,
                View::new(b * nq * w + h * dh, w, 1),
            );
        }
    }
    (Tensor::from_vec(s.batch * nq, w, out), probs)
}

pub struct AttnGrads {
    pub dq: Option<Tensor>,
    pub dk: Option<Tensor>,
    pub dv: Option<Tensor>,
    pub dbias: Option<Tensor>,
}

/// `need` flags request gradients for (q, k, v, bias).
pub fn attention_backward(
    s: &AttnShape,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &[f64],
    g: &Tensor,
    need: [bool; 4],
) -> AttnGrads {
    let (w, dh, nq, nk) = (s.width, s.head_dim(), s.nq, s.nk);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; if need[0] { q.len() } else { 0 }];
    let mut dk = vec![0.0; if need[1] { k.len() } else { 0 }];
    let mut dv = vec![0.0; if need[2] { v.len() } else { 0 }];
    let mut dbias = vec![0.0; if need[3] { nq * nk * s.heads } else { 0 }];
    let need_logits = need[0] || need[1] || need[3];
    let mut dl = vec![0.0; nq * nk];
    for b in 0..s.batch {
        for h in 0..s.heads {
            let base = (b * s.heads + h) * nq * nk;
            let p = &probs[base..base + nq * nk];
            let gv = View::new(b * nq * w + h * dh, w, 1);
            let kvv = View::new(b * nk * w + h * dh, w, 1);
            if need[2] {
                // dV_bh = P^T G_bh
                gemm_view(nk, nq, dh, 1.0, p, View::new(0, 1, nk), g.data(), gv, 0.0, &mut dv, kvv);
            }
            if !need_logits {
                continue;
            }
            // dP = G_bh V_bh^T
            gemm_view(
                nq,
                dh,
                nk,
                1.0,
                g.data(),
                gv,
                v.data(),
                View::new(kvv.offset, 1, w),
                0.0,
                &mut dl,
                View::new(0, nk, 1),
            );
            for i in 0..nq {
                let prow = &p[i * nk..(i + 1) * nk];
                let drow = &mut dl[i * nk..(i + 1) * nk];
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for (d, &pj) in drow.iter_mut().zip(prow) {
                    *d = pj * (*d - dot);
                }
                if need[3] {
                    for (j, d) in drow.iter().enumerate() {
                        dbias[(i * nk + j) * s.heads + h] += d;
                    }
                }
            }
            let qv = View::new(b * nq * w + h * dh, w, 1);
            if need[0] {
                // dQ_bh = scale dL K_bh
                gemm_view(nq, nk, dh, scale, &dl, View::new(0, nk, 1), k.data(), kvv, 0.0, &mut dq, qv);
            }
            if need[1] {
                // dK_bh = scale dL^T Q_bh
                gemm_view(nk, nq, dh, scale, &dl, View::new(0, 1, nk), q.data(), qv, 0.0, &mut dk, kvv);
            }
        }
    }
    let mk = |flag: bool, data: Vec<f64>, rows: usize, cols: usize| flag.then(|| Tensor::from_vec(rows, cols, data));
    AttnGrads {
        dq: mk(need[0], dq, q.rows(), w),
        dk: mk(need[1], dk, k.rows(), w),
        dv: mk(need[2], dv, v.rows(), w),
        dbias: mk(need[3], dbias, nq * nk, s.heads),
    }
}
