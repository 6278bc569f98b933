//! Row-major dense kernels. Loop order keeps the innermost loop contiguous.

use super::Scalar;

/// `a (n x k) · b (k x m)`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `acc (k x m) += aᵀ · g` with `a (n x k)`, `g (n x m)`.
pub(crate) fn acc_at_b<T: Scalar>(acc: &mut [T], a: &[T], g: &[T], n: usize, k: usize, m: usize) {
    debug_assert_eq!(acc.len(), k * m);
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let arow = &mut acc[p * m..(p + 1) * m];
            for (o, &gv) in arow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

/// `g (n x m) · bᵀ` with `b (k x m)`; result is `n x k`.
pub(crate) fn matmul_bt<T: Scalar>(g: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let bt = transpose(b, k, m);
    matmul(g, &bt, n, m, k)
}

pub(crate) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub(crate) fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
        // a · aᵀ through matmul_bt
        assert_eq!(matmul_bt(&a, &a, 2, 2, 3), vec![14.0, 32.0, 32.0, 77.0]);
        let mut acc = vec![0.0; 9];
        acc_at_b(&mut acc, &a, &a, 2, 3, 3);
        assert_eq!(acc, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    #[test]
    fn silu_sign_matches_input_sign() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let z: f32 = rng.gen_range(-20.0..20.0);
            assert_eq!(silu(z) > 0.0, z > 0.0, "z = {z}");
        }
        assert!(silu(0.0f32) == 0.0);
    }
}
