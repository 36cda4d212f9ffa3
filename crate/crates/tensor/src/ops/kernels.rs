//! Raw dense kernels on row-major slices. No shape checks here.

use crate::tensor::Real;

/// `c[m,n] = a[m,k] · b[k,n]`
pub(crate) fn gemm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm_into(m, k, n, a, (k, 1), b, (n, 1), &mut c);
    c
}

/// `c[k,n] = a[m,k]ᵀ · b[m,n]`
pub(crate) fn gemm_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    T::gemm_into(k, m, n, a, (1, k), b, (n, 1), &mut c);
    c
}

/// `c[m,k] = a[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_nt<T: Real>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * k];
    T::gemm_into(m, n, k, a, (n, 1), b, (1, n), &mut c);
    c
}

/// Column sums of a `[m,n]` matrix.
pub(crate) fn col_sums<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut s = vec![T::zero(); n];
    for r in 0..m {
        for (acc, &v) in s.iter_mut().zip(&a[r * n..(r + 1) * n]) {
            *acc += v;
        }
    }
    s
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Pack a boolean pattern into 64-bit words for branch signatures.
pub(crate) fn pack_bits(bits: impl Iterator<Item = bool>) -> Vec<u64> {
    let mut out = Vec::new();
    let mut word = 0u64;
    let mut n = 0;
    for b in bits {
        word = (word << 1) | u64::from(b);
        n += 1;
        if n == 64 {
            out.push(word);
            word = 0;
            n = 0;
        }
    }
    if n > 0 {
        out.push(word);
        out.push(n as u64);
    }
    out
}
