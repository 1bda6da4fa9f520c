//! Row-major tensor helpers used by the decomposition and the marginal code.

/// Sums a row-major tensor of shape `dims` over `axis`.
pub fn sum_axis(data: &[f64], dims: &[usize], axis: usize) -> (Vec<f64>, Vec<usize>) {
    let outer: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let src = &data[(o * len + k) * inner..(o * len + k + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut new_dims = dims.to_vec();
    new_dims.remove(axis);
    (out, new_dims)
}

/// Subtracts the mean along `axis` in place, so every fiber along that axis
/// sums to zero.
pub fn center_axis(data: &mut [f64], dims: &[usize], axis: usize) {
    let outer: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let inv = 1.0 / len as f64;
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mean = (0..len).map(|k| data[base + k * inner]).sum::<f64>() * inv;
            for k in 0..len {
                data[base + k * inner] -= mean;
            }
        }
    }
}

/// Largest absolute fiber sum along any axis; zero for tensors that are
/// centered along every axis.
pub fn max_axis_sum(data: &[f64], dims: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    for axis in 0..dims.len() {
        let (s, _) = sum_axis(data, dims, axis);
        worst = s.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    worst
}

/// Row-major flat index of a multi-index.
pub fn flat_index(index: &[usize], dims: &[usize]) -> usize {
    index.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Inverse of [`flat_index`].
pub fn unflatten(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = flat % d;
        flat /= d;
    }
}

/// Kronecker product of row vectors, first factor outermost (row-major).
pub fn kron_vectors(factors: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![1.0];
    for f in factors {
        let mut next = Vec::with_capacity(out.len() * f.len());
        for &a in &out {
            next.extend(f.iter().map(|&b| a * b));
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_each_axis() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(sum_axis(&m, &[2, 3], 0), (vec![5.0, 7.0, 9.0], vec![3]));
        assert_eq!(sum_axis(&m, &[2, 3], 1), (vec![6.0, 15.0], vec![2]));
    }

    #[test]
    fn centering_zeroes_fiber_sums() {
        let mut m = vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        center_axis(&mut m, &[2, 3], 0);
        center_axis(&mut m, &[2, 3], 1);
        assert!(max_axis_sum(&m, &[2, 3]) < 1e-15);
    }

    #[test]
    fn flat_roundtrip() {
        let dims = [3, 4, 2];
        let mut idx = [0; 3];
        for f in 0..24 {
            unflatten(f, &dims, &mut idx);
            assert_eq!(flat_index(&idx, &dims), f);
        }
    }

    #[test]
    fn kron_of_vectors() {
        assert_eq!(kron_vectors(&[&[1.0, 2.0], &[1.0, 0.0, -1.0]]), vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(kron_vectors(&[]), vec![1.0]);
    }
}
