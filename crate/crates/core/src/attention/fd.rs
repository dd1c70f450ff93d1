//! Central-difference spot checks for the analytic gradients.
//!
//! The scalar loss is `L = sum(O . dO)`, whose gradient with respect to
//! q, k, v is exactly what the backward pass returns for upstream
//! gradient `dO`. Each sampled coordinate is nudged by `+h` and `-h` and
//! the slope `(L(+h) - L(-h)) / 2h` is compared against the analytic
//! entry with the relative error
//!
//! ```text
//! |fd - analytic| / max(1, |fd|, |analytic|)
//! ```
//!
//! The 1 in the denominator keeps near-zero gradients from amplifying
//! truncation noise into spurious failures.

use super::{backward, forward, AttentionError, AttentionProblem, Precision};
use crate::rng::{derive_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdTensor {
    Q,
    K,
    V,
}

/// One coordinate to probe: a tensor and a flat index into it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FdCoord {
    pub tensor: FdTensor,
    pub index: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<FdCoord>,
}

/// Uniformly sampled coordinates across all three input tensors.
pub fn sample_fd_coords(problem: &AttentionProblem, count: usize, seed: u64) -> Vec<FdCoord> {
    let len = problem.q.len();
    let mut rng = Rng::new(derive_seed(seed, 2));
    (0..count)
        .map(|_| {
            let tensor = match rng.below(3) {
                0 => FdTensor::Q,
                1 => FdTensor::K,
                _ => FdTensor::V,
            };
            FdCoord {
                tensor,
                index: rng.below(len as u64) as usize,
            }
        })
        .collect()
}

fn loss(problem: &AttentionProblem, d_o: &[f64]) -> Result<f64, AttentionError> {
    let r = forward(problem)?;
    let mut l = 0.0;
    for (o, g) in r.o.iter().zip(d_o) {
        l += o * g;
    }
    Ok(l)
}

/// Compares analytic gradients against central differences with step `h`
/// at the given coordinates. Only meaningful (and only allowed) in f64;
/// f32 rounding would drown the difference quotient.
pub fn finite_difference_check(
    problem: &AttentionProblem,
    d_o: &[f64],
    coords: &[FdCoord],
    h: f64,
) -> Result<FdReport, AttentionError> {
    if problem.precision != Precision::F64 {
        return Err(AttentionError::FdNeedsF64);
    }
    let r = forward(problem)?;
    let grads = backward(problem, &r, d_o)?;
    let mut report = FdReport::default();
    let mut work = problem.clone();
    fn slot(p: &mut AttentionProblem, t: FdTensor) -> &mut Vec<f64> {
        match t {
            FdTensor::Q => &mut p.q,
            FdTensor::K => &mut p.k,
            FdTensor::V => &mut p.v,
        }
    }
    for &coord in coords {
        let an = match coord.tensor {
            FdTensor::Q => grads.dq[coord.index],
            FdTensor::K => grads.dk[coord.index],
            FdTensor::V => grads.dv[coord.index],
        };
        let base = slot(&mut work, coord.tensor)[coord.index];
        slot(&mut work, coord.tensor)[coord.index] = base + h;
        let up = loss(&work, d_o)?;
        slot(&mut work, coord.tensor)[coord.index] = base - h;
        let down = loss(&work, d_o)?;
        slot(&mut work, coord.tensor)[coord.index] = base;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - an).abs() / 1.0f64.max(an.abs()).max(fd.abs());
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some(coord);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Accumulator;
    use crate::mask::{build_mask, MaskKind};

    #[test]
    fn gradients_match_finite_differences() {
        let mask = build_mask(
            &MaskKind::CausalDocument {
                doc_lens: vec![5, 3],
            },
            8,
        )
        .unwrap();
        let p = AttentionProblem::synthetic(17, 1, 1, 8, 4, vec![mask]);
        let d_o = p.synthetic_d_o(17);
        let coords = sample_fd_coords(&p, 24, 17);
        let report = finite_difference_check(&p, &d_o, &coords, 1e-6).unwrap();
        assert_eq!(report.checked, 24);
        assert!(
            report.max_rel_err <= 1e-6,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn rejects_f32_problems() {
        let p = AttentionProblem::zeroed(1, 1, 2, 2)
            .with_causal_masks()
            .with_precision(Precision::F32, Accumulator::Same);
        let coords = [FdCoord {
            tensor: FdTensor::Q,
            index: 0,
        }];
        assert!(matches!(
            finite_difference_check(&p, &[0.0; 4], &coords, 1e-6),
            Err(AttentionError::FdNeedsF64)
        ));
    }
}
