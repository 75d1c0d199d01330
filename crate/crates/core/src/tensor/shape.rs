//! Shape arithmetic: row-major strides, numpy-style right-aligned
//! broadcasting, and gradient reduction back to operand shapes.

use crate::error::{Error, Result};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides; a dimension of extent 1 still gets its natural stride.
pub fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Right-aligned broadcast of two shapes. Extents must match or be 1.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let ea = if d < rank - a.len() { 1 } else { a[d - (rank - a.len())] };
        let eb = if d < rank - b.len() { 1 } else { b[d - (rank - b.len())] };
        out[d] = if ea == eb {
            ea
        } else if ea == 1 {
            eb
        } else if eb == 1 {
            ea
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides for reading an operand of shape `from` as if broadcast to `to`
/// (stride 0 on broadcast axes). `from` must right-align into `to`.
pub fn broadcast_strides(from: &[usize], to: &[usize]) -> Vec<usize> {
    let nat = strides_for(from);
    let offset = to.len() - from.len();
    let mut out = vec![0; to.len()];
    for d in 0..from.len() {
        out[offset + d] = if from[d] == 1 { 0 } else { nat[d] };
    }
    out
}

/// Apply `f` elementwise over two operands broadcast to `out_shape`.
pub fn broadcast_apply(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let n = numel(out_shape);
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for _ in 0..n {
        out.push(f(a[ai], b[bi]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += sa[d];
            bi += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ai -= sa[d] * out_shape[d];
            bi -= sb[d] * out_shape[d];
        }
    }
    out
}

/// Sum `grad` (shape `from`) down to shape `to`; inverse of broadcasting.
pub fn reduce_grad_to(grad: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return grad.to_vec();
    }
    let st = broadcast_strides(to, from);
    let mut out = vec![0.0; numel(to)];
    let rank = from.len();
    let mut idx = vec![0usize; rank];
    let mut ti = 0usize;
    for &g in grad {
        out[ti] += g;
        for d in (0..rank).rev() {
            idx[d] += 1;
            ti += st[d];
            if idx[d] < from[d] {
                break;
            }
            idx[d] = 0;
            ti -= st[d] * from[d];
        }
    }
    out
}

/// Split a shape around `axis` into (pre, n, post) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre = shape[..axis].iter().product();
    let n = shape[axis];
    let post = shape[axis + 1..].iter().product();
    (pre, n, post)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes("t", &[3, 4], &[3, 4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shapes("t", &[3, 4], &[4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shapes("t", &[3, 1], &[3, 4]).unwrap(), vec![3, 4]);
        assert_eq!(
            broadcast_shapes("t", &[2, 3, 1], &[3, 5]).unwrap(),
            vec![2, 3, 5]
        );
        assert!(broadcast_shapes("t", &[3, 4], &[2, 4]).is_err());
    }

    #[test]
    fn reduce_inverts_broadcast() {
        // grad of shape [2,3] reduced to [3] sums the rows
        let g = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert_eq!(reduce_grad_to(&g, &[2, 3], &[3]), vec![11.0, 22.0, 33.0]);
        // reduced to [2,1] sums along the last axis
        assert_eq!(reduce_grad_to(&g, &[2, 3], &[2, 1]), vec![6.0, 60.0]);
    }

    #[test]
    fn apply_with_trailing_singleton() {
        let a = [1.0, 2.0, 3.0, 4.0]; // [2,2]
        let b = [10.0, 20.0]; // [2,1]
        let out = broadcast_apply(&a, &[2, 2], &b, &[2, 1], &[2, 2], |x, y| x + y);
        assert_eq!(out, vec![11.0, 12.0, 23.0, 24.0]);
    }
}
