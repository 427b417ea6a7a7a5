//! Unitary radix-2 FFT on interleaved complex buffers.
//!
//! Both directions carry a 1/sqrt(n) factor, so the transform is its own
//! inverse-adjoint: `dft(dft(z), true) == z` and norms are preserved.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || n & (n - 1) != 0 {
        return Err(Error::UnsupportedSize(format!(
            "FFT length must be a power of two, got {n}"
        )));
    }
    Ok(())
}

/// In-place unitary FFT over `buf` holding n interleaved (re, im) pairs.
pub fn fft_inplace(buf: &mut [f64], inverse: bool) -> Result<()> {
    if buf.len() % 2 != 0 {
        return Err(Error::Shape("complex buffer must have even length".into()));
    }
    let n = buf.len() / 2;
    check_pow2(n)?;
    if n == 1 {
        return Ok(());
    }

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            buf.swap(2 * i, 2 * j);
            buf.swap(2 * i + 1, 2 * j + 1);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cr, mut ci) = (1.0, 0.0);
            for k in 0..len / 2 {
                let a = 2 * (start + k);
                let b = 2 * (start + k + len / 2);
                let (xr, xi) = (buf[a], buf[a + 1]);
                let (yr, yi) = (buf[b] * cr - buf[b + 1] * ci, buf[b] * ci + buf[b + 1] * cr);
                buf[a] = xr + yr;
                buf[a + 1] = xi + yi;
                buf[b] = xr - yr;
                buf[b + 1] = xi - yi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }

    let scale = 1.0 / (n as f64).sqrt();
    for x in buf.iter_mut() {
        *x *= scale;
    }
    Ok(())
}

/// Unitary DFT of a 1-D complex tensor of shape [n, 2].
pub fn dft(z: &Tensor, inverse: bool) -> Result<Tensor> {
    if z.shape().len() != 2 || z.shape()[1] != 2 {
        return Err(Error::Shape(format!(
            "dft expects shape [n, 2], got {:?}",
            z.shape()
        )));
    }
    let mut buf = z.data().to_vec();
    fft_inplace(&mut buf, inverse)?;
    Tensor::from_vec(z.shape(), buf)?.into_complex()
}

/// Unitary 2-D DFT of a complex image of shape [h, w, 2] (rows then columns).
pub fn dft2(z: &Tensor, inverse: bool) -> Result<Tensor> {
    if z.shape().len() != 3 || z.shape()[2] != 2 {
        return Err(Error::Shape(format!(
            "dft2 expects shape [h, w, 2], got {:?}",
            z.shape()
        )));
    }
    let (h, w) = (z.shape()[0], z.shape()[1]);
    let mut buf = z.data().to_vec();
    dft2_inplace(&mut buf, h, w, inverse)?;
    Tensor::from_vec(z.shape(), buf)?.into_complex()
}

/// In-place 2-D unitary FFT over an interleaved complex image buffer.
pub fn dft2_inplace(buf: &mut [f64], h: usize, w: usize, inverse: bool) -> Result<()> {
    if buf.len() != h * w * 2 {
        return Err(Error::Shape(format!(
            "buffer length {} does not match {h}x{w} complex image",
            buf.len()
        )));
    }
    check_pow2(h)?;
    check_pow2(w)?;
    for r in 0..h {
        fft_inplace(&mut buf[2 * r * w..2 * (r + 1) * w], inverse)?;
    }
    let mut col = vec![0.0; 2 * h];
    for c in 0..w {
        for r in 0..h {
            col[2 * r] = buf[2 * (r * w + c)];
            col[2 * r + 1] = buf[2 * (r * w + c) + 1];
        }
        fft_inplace(&mut col, inverse)?;
        for r in 0..h {
            buf[2 * (r * w + c)] = col[2 * r];
            buf[2 * (r * w + c) + 1] = col[2 * r + 1];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngState;
    use crate::numerics::tensor::norm2;
    use proptest::prelude::*;

    fn naive_dft(z: &[f64], inverse: bool) -> Vec<f64> {
        let n = z.len() / 2;
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut out = vec![0.0; 2 * n];
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for j in 0..n {
                let ang = sign * 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                let (c, s) = (ang.cos(), ang.sin());
                sr += z[2 * j] * c - z[2 * j + 1] * s;
                si += z[2 * j] * s + z[2 * j + 1] * c;
            }
            let scale = 1.0 / (n as f64).sqrt();
            out[2 * k] = sr * scale;
            out[2 * k + 1] = si * scale;
        }
        out
    }

    #[test]
    fn delta_maps_to_flat_half() {
        // Unit impulse of length 4: unitary DFT is constant 1/sqrt(4) = 0.5.
        let mut z = Tensor::zeros(&[4, 2]);
        z.data_mut()[0] = 1.0;
        let f = dft(&z, false).unwrap();
        for k in 0..4 {
            assert!((f.data()[2 * k] - 0.5).abs() < 1e-12);
            assert!(f.data()[2 * k + 1].abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_dft_on_length_8() {
        let mut rng = RngState::new(11);
        let z = rng.gaussian_vec(16);
        let mut fast = z.clone();
        fft_inplace(&mut fast, false).unwrap();
        let slow = naive_dft(&z, false);
        let max_diff = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-9, "max diff {max_diff}");
    }

    #[test]
    fn rejects_non_power_of_two() {
        let z = Tensor::zeros(&[6, 2]);
        assert!(matches!(dft(&z, false), Err(Error::UnsupportedSize(_))));
    }

    proptest! {
        #[test]
        fn unitary_and_self_inverting(len_pow in 1usize..6, seed in 0u64..1000) {
            let n = 1usize << len_pow;
            let mut rng = RngState::new(seed);
            let z = rng.gaussian_vec(2 * n);
            let mut f = z.clone();
            fft_inplace(&mut f, false).unwrap();
            // Parseval
            prop_assert!((norm2(&f) - norm2(&z)).abs() < 1e-10);
            // Round trip
            fft_inplace(&mut f, true).unwrap();
            let max_diff = f.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
            prop_assert!(max_diff < 1e-10);
        }
    }

    #[test]
    fn dft2_round_trip() {
        let mut rng = RngState::new(3);
        let z = Tensor::from_vec(&[8, 4, 2], rng.gaussian_vec(64))
            .unwrap()
            .into_complex()
            .unwrap();
        let f = dft2(&z, false).unwrap();
        assert!((norm2(f.data()) - norm2(z.data())).abs() < 1e-10);
        let back = dft2(&f, true).unwrap();
        let max_diff = back
            .data()
            .iter()
            .zip(z.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-10);
    }
}
