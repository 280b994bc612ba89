use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math;

pub type Complex = num_complex::Complex<f64>;

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

pub fn next_power_of_two(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// In-place iterative radix-2 DFT.
///
/// The forward transform is unscaled (`X_k = sum_n x_n e^{-2 pi i kn/N}`) and
/// the inverse carries the `1/N`, so `fft(ifft(x)) == x`.
pub fn fft(buf: &mut [Complex], inverse: bool) -> Result<()> {
    let n = buf.len();
    if !is_power_of_two(n) {
        return Err(Error::NotPowerOfTwo(n));
    }
    transform(buf, &twiddles(n), inverse);
    Ok(())
}

/// `e^{-2 pi i k / n}` for `k < n / 2`, each computed directly from its
/// angle (a recurrence would accumulate rounding error at large `n`).
fn twiddles(n: usize) -> Vec<Complex> {
    (0..n / 2)
        .map(|k| {
            let a = -2.0 * PI * k as f64 / n as f64;
            Complex::new(math::cos(a), math::sin(a))
        })
        .collect()
}

fn transform(buf: &mut [Complex], table: &[Complex], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for chunk in buf.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let w = table[k * stride];
                let w = if inverse { w.conj() } else { w };
                let t = *b * w;
                *b = *a - t;
                *a += t;
            }
        }
        len *= 2;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Allocating wrapper around [`fft`].
pub fn fft_1d(signal: &[Complex], inverse: bool) -> Result<Vec<Complex>> {
    let mut out = signal.to_vec();
    fft(&mut out, inverse)?;
    Ok(out)
}

/// 2-D transform of a row-major `rows x cols` grid, both powers of two.
pub fn fft2(buf: &mut [Complex], rows: usize, cols: usize, inverse: bool) -> Result<()> {
    if buf.len() != rows * cols {
        return Err(crate::error::mismatch(rows * cols, buf.len()));
    }
    for n in [rows, cols] {
        if !is_power_of_two(n) {
            return Err(Error::NotPowerOfTwo(n));
        }
    }
    let table = twiddles(cols);
    for row in buf.chunks_exact_mut(cols) {
        transform(row, &table, inverse);
    }
    let table = twiddles(rows);
    let mut column = alloc::vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        transform(&mut column, &table, inverse);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use alloc::vec;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex {
        Complex::new(re, 0.0)
    }

    fn naive_dft(x: &[Complex]) -> Vec<Complex> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (j, &v)| {
                    // reduce k*j mod n before forming the angle
                    let a = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                    acc + v * Complex::new(a.cos(), a.sin())
                })
            })
            .collect()
    }

    fn max_rel_err(a: &[Complex], b: &[Complex]) -> f64 {
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn impulse_and_dc() {
        let out = fft_1d(&[c(1.0), c(0.0), c(0.0), c(0.0)], false).unwrap();
        assert!(out.iter().all(|v| (v - c(1.0)).norm() < 1e-15));
        let out = fft_1d(&[c(1.0); 4], false).unwrap();
        assert!((out[0] - c(4.0)).norm() < 1e-15);
        assert!(out[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(fft(&mut [c(1.0); 6], false), Err(Error::NotPowerOfTwo(6)));
        assert_eq!(fft(&mut [], false), Err(Error::NotPowerOfTwo(0)));
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = Rng::new(11);
        let x: Vec<Complex> = (0..64).map(|_| Complex::new(rng.normal(), rng.normal())).collect();
        let fast = fft_1d(&x, false).unwrap();
        assert!(max_rel_err(&fast, &naive_dft(&x)) < 1e-10);
    }

    #[test]
    fn fft2_matches_separable_naive() {
        let mut rng = Rng::new(5);
        let (r, cl) = (8, 16);
        let x: Vec<Complex> = (0..r * cl).map(|_| c(rng.normal())).collect();
        let mut fast = x.clone();
        fft2(&mut fast, r, cl, false).unwrap();
        // naive: rows then columns
        let mut rows: Vec<Complex> = x.chunks(cl).flat_map(naive_dft).collect();
        for col in 0..cl {
            let column: Vec<Complex> = (0..r).map(|i| rows[i * cl + col]).collect();
            for (i, v) in naive_dft(&column).into_iter().enumerate() {
                rows[i * cl + col] = v;
            }
        }
        assert!(max_rel_err(&fast, &rows) < 1e-10);
        fft2(&mut fast, r, cl, true).unwrap();
        assert!(max_rel_err(&fast, &x) < 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip_linearity_parseval(
            log_n in 0usize..9,
            seed in any::<u64>(),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let n = 1 << log_n;
            let mut rng = Rng::new(seed);
            let u: Vec<Complex> = (0..n).map(|_| Complex::new(rng.normal(), rng.normal())).collect();
            let v: Vec<Complex> = (0..n).map(|_| Complex::new(rng.normal(), rng.normal())).collect();

            let back = fft_1d(&fft_1d(&u, true).unwrap(), false).unwrap();
            prop_assert!(max_rel_err(&back, &u) < 1e-10);

            let mix: Vec<Complex> = u.iter().zip(&v).map(|(a, b)| a * alpha + b * beta).collect();
            let fu = fft_1d(&u, false).unwrap();
            let fv = fft_1d(&v, false).unwrap();
            let lhs = fft_1d(&mix, false).unwrap();
            let rhs: Vec<Complex> = fu.iter().zip(&fv).map(|(a, b)| a * alpha + b * beta).collect();
            prop_assert!(max_rel_err(&lhs, &rhs) < 1e-10);

            let energy: f64 = u.iter().map(|z| z.norm_sqr()).sum();
            let spectral: f64 = fu.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
            prop_assert!((energy - spectral).abs() <= 1e-10 * energy);
        }
    }

    #[test]
    fn fft2_rejects_bad_sizes() {
        let mut buf = vec![c(0.0); 12];
        assert!(fft2(&mut buf, 3, 4, false).is_err());
        assert!(fft2(&mut buf, 4, 4, false).is_err());
    }
}
