//! Dense f64 reference for the tiled engine.
//!
//! Materializes the full boolean mask and walks every score. Accumulation
//! orders deliberately mirror the tiled kernels, so when the engine runs a
//! single tile covering the whole matrix in f64, the two agree bit for
//! bit; at smaller tiles they differ only by reassociation rounding.

use super::{AttentionError, AttentionGradients, AttentionProblem, AttentionResult};
use crate::mask::DenseMask;

fn dense_masks(problem: &AttentionProblem) -> Result<Vec<DenseMask>, AttentionError> {
    problem
        .masks
        .iter()
        .enumerate()
        .map(|(index, m)| {
            m.to_dense()
                .map_err(|source| AttentionError::Mask { index, source })
        })
        .collect()
}

fn check_unit_shape(
    n: usize,
    d: usize,
    dense: &DenseMask,
    tensors: &[(&'static str, &[f64])],
) -> Result<(), AttentionError> {
    if n == 0 || d == 0 {
        return Err(AttentionError::Shape(
            "seq_len and head_dim must be nonzero".into(),
        ));
    }
    if dense.seq_len() != n {
        return Err(AttentionError::Shape(format!(
            "mask is {0}x{0}, tensors are for seq_len {n}",
            dense.seq_len()
        )));
    }
    for (name, t) in tensors {
        if t.len() != n * d {
            return Err(AttentionError::Shape(format!(
                "{name} has {} elements, expected {}",
                t.len(),
                n * d
            )));
        }
    }
    Ok(())
}

/// Unnormalized masked scores for one query row.
fn score_row(
    q: &[f64],
    k: &[f64],
    d: usize,
    n: usize,
    i: usize,
    scale: f64,
    dense: &DenseMask,
    s: &mut [f64],
) {
    let qrow = &q[i * d..(i + 1) * d];
    for (j, sv) in s.iter_mut().enumerate().take(n) {
        let krow = &k[j * d..(j + 1) * d];
        let mut acc = 0.0;
        for c in 0..d {
            acc += qrow[c] * krow[c];
        }
        *sv = scale * acc;
    }
    for (j, sv) in s.iter_mut().enumerate().take(n) {
        if dense.get(i, j) {
            *sv = f64::NEG_INFINITY;
        }
    }
}

/// Full-softmax attention over one (seq_len, head_dim) slice.
pub fn dense_oracle_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    scale: f64,
    dense: &DenseMask,
) -> Result<AttentionResult, AttentionError> {
    check_unit_shape(n, d, dense, &[("q", q), ("k", k), ("v", v)])?;
    let mut o = vec![0.0; n * d];
    let mut lse = vec![0.0; n];
    let mut s = vec![0.0; n];
    for i in 0..n {
        score_row(q, k, d, n, i, scale, dense, &mut s);
        let mut m = f64::NEG_INFINITY;
        for &sv in &s {
            if sv > m {
                m = sv;
            }
        }
        if m == f64::NEG_INFINITY {
            lse[i] = f64::NEG_INFINITY;
            continue;
        }
        let mut l = 0.0;
        for sv in s.iter_mut() {
            let e = (*sv - m).exp();
            *sv = e;
            l += e;
        }
        let orow = &mut o[i * d..(i + 1) * d];
        for (j, &p) in s.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let vrow = &v[j * d..(j + 1) * d];
            for c in 0..d {
                orow[c] += p * vrow[c];
            }
        }
        for oc in orow.iter_mut() {
            *oc /= l;
        }
        lse[i] = m + l.ln();
    }
    Ok(AttentionResult { o, lse })
}

/// Analytic gradients over one slice, recomputing softmax from the stored
/// log-sum-exp exactly like the tiled backward pass does.
#[allow(clippy::too_many_arguments)]
pub fn dense_oracle_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    o: &[f64],
    lse: &[f64],
    d_o: &[f64],
    n: usize,
    d: usize,
    scale: f64,
    dense: &DenseMask,
) -> Result<AttentionGradients, AttentionError> {
    check_unit_shape(
        n,
        d,
        dense,
        &[("q", q), ("k", k), ("v", v), ("o", o), ("d_o", d_o)],
    )?;
    if lse.len() != n {
        return Err(AttentionError::Shape(format!(
            "lse has {} elements, expected {n}",
            lse.len()
        )));
    }
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut s = vec![0.0; n];
    for i in 0..n {
        if lse[i] == f64::NEG_INFINITY {
            continue;
        }
        score_row(q, k, d, n, i, scale, dense, &mut s);
        let dorow = &d_o[i * d..(i + 1) * d];
        let orow = &o[i * d..(i + 1) * d];
        let mut di = 0.0;
        for c in 0..d {
            di += dorow[c] * orow[c];
        }
        for (j, sv) in s.iter_mut().enumerate() {
            let p = (*sv - lse[i]).exp();
            *sv = p;
            if p == 0.0 {
                continue;
            }
            let dvrow = &mut dv[j * d..(j + 1) * d];
            for c in 0..d {
                dvrow[c] += p * dorow[c];
            }
        }
        let qrow = &q[i * d..(i + 1) * d];
        for (j, &p) in s.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let vrow = &v[j * d..(j + 1) * d];
            let krow = &k[j * d..(j + 1) * d];
            let mut dp = 0.0;
            for c in 0..d {
                dp += dorow[c] * vrow[c];
            }
            let ds = p * (dp - di) * scale;
            let dqrow = &mut dq[i * d..(i + 1) * d];
            for c in 0..d {
                dqrow[c] += ds * krow[c];
            }
            let dkrow = &mut dk[j * d..(j + 1) * d];
            for c in 0..d {
                dkrow[c] += ds * qrow[c];
            }
        }
    }
    Ok(AttentionGradients { dq, dk, dv })
}

/// Whole-problem forward reference. Always computes in f64, but on the
/// same effective inputs the engine uses (f32-rounded when the problem
/// asks for f32).
pub fn oracle_forward(problem: &AttentionProblem) -> Result<AttentionResult, AttentionError> {
    problem.validate()?;
    let n = problem.seq_len;
    let d = problem.head_dim;
    let ul = n * d;
    let q = problem.effective_input(&problem.q);
    let k = problem.effective_input(&problem.k);
    let v = problem.effective_input(&problem.v);
    let scale = problem.effective_scale();
    let dense = dense_masks(problem)?;
    let mut o = Vec::with_capacity(q.len());
    let mut lse = Vec::with_capacity(problem.batch * problem.heads * n);
    for b in 0..problem.batch {
        for h in 0..problem.heads {
            let at = (b * problem.heads + h) * ul;
            let r = dense_oracle_forward(
                &q[at..at + ul],
                &k[at..at + ul],
                &v[at..at + ul],
                n,
                d,
                scale,
                &dense[b],
            )?;
            o.extend_from_slice(&r.o);
            lse.extend_from_slice(&r.lse);
        }
    }
    Ok(AttentionResult { o, lse })
}

/// Whole-problem backward reference in f64.
pub fn oracle_backward(
    problem: &AttentionProblem,
    result: &AttentionResult,
    d_o: &[f64],
) -> Result<AttentionGradients, AttentionError> {
    problem.validate()?;
    let n = problem.seq_len;
    let d = problem.head_dim;
    let ul = n * d;
    let units = problem.batch * problem.heads;
    if d_o.len() != units * ul || result.o.len() != units * ul || result.lse.len() != units * n {
        return Err(AttentionError::Shape(
            "gradient or result tensors do not match the problem shape".into(),
        ));
    }
    let q = problem.effective_input(&problem.q);
    let k = problem.effective_input(&problem.k);
    let v = problem.effective_input(&problem.v);
    let d_o = problem.effective_input(d_o);
    let scale = problem.effective_scale();
    let dense = dense_masks(problem)?;
    let mut grads = AttentionGradients::default();
    for b in 0..problem.batch {
        for h in 0..problem.heads {
            let at = (b * problem.heads + h) * ul;
            let lat = (b * problem.heads + h) * n;
            let g = dense_oracle_backward(
                &q[at..at + ul],
                &k[at..at + ul],
                &v[at..at + ul],
                &result.o[at..at + ul],
                &result.lse[lat..lat + n],
                &d_o[at..at + ul],
                n,
                d,
                scale,
                &dense[b],
            )?;
            grads.dq.extend_from_slice(&g.dq);
            grads.dk.extend_from_slice(&g.dk);
            grads.dv.extend_from_slice(&g.dv);
        }
    }
    Ok(grads)
}
