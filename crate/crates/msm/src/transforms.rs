//! Invertible maps from images to fully-sampled measurements.
//!
//! Two instances: identity (inpainting-style problems operate directly on
//! pixels) and Fourier times coil-sensitivity (toy multi-coil MRI). Coil
//! maps are normalized so sum_k |c_k|^2 = 1 at every pixel, which makes the
//! transform an exact isometry and its adjoint an exact inverse.
//!
//! Measurement layout for `FourierCoils`: real index
//! `((coil*h + row)*w + col)*2 + comp` over K coil k-spaces; image layout is
//! `(row*w + col)*2 + comp` for a single complex image.

use crate::error::{Error, Result};
use crate::numerics::fft::dft2_inplace;
use crate::numerics::rng::RngState;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Transform {
    Identity { n: usize },
    FourierCoils {
        height: usize,
        width: usize,
        /// Complex coil maps, each of shape [h, w, 2].
        coils: Vec<Tensor>,
    },
}

impl Transform {
    pub fn identity(n: usize) -> Self {
        Transform::Identity { n }
    }

    pub fn fourier_coils(height: usize, width: usize, coils: Vec<Tensor>) -> Result<Self> {
        if coils.is_empty() {
            return Err(Error::Config("need at least one coil map".into()));
        }
        for c in &coils {
            if c.shape() != [height, width, 2] {
                return Err(Error::Shape(format!(
                    "coil map shape {:?} does not match [{height}, {width}, 2]",
                    c.shape()
                )));
            }
        }
        // sum_k |c_k|^2 must be 1 pixelwise, otherwise T^T T != I.
        for p in 0..height * width {
            let total: f64 = coils
                .iter()
                .map(|c| {
                    let re = c.data()[2 * p];
                    let im = c.data()[2 * p + 1];
                    re * re + im * im
                })
                .sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "coil maps not normalized at pixel {p}: sum |c|^2 = {total}"
                )));
            }
        }
        Ok(Transform::FourierCoils { height, width, coils })
    }

    /// Real dimension of the measurement domain.
    pub fn measurement_dim(&self) -> usize {
        match self {
            Transform::Identity { n } => *n,
            Transform::FourierCoils { height, width, coils } => {
                coils.len() * height * width * 2
            }
        }
    }

    /// Real dimension of the image domain.
    pub fn image_dim(&self) -> usize {
        match self {
            Transform::Identity { n } => *n,
            Transform::FourierCoils { height, width, .. } => height * width * 2,
        }
    }

    /// z = T x.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::Identity { n } => {
                if x.len() != *n {
                    return Err(Error::Shape(format!(
                        "identity transform expects {n} entries, got {}",
                        x.len()
                    )));
                }
                Ok(x.to_vec())
            }
            Transform::FourierCoils { height, width, coils } => {
                let (h, w) = (*height, *width);
                if x.len() != h * w * 2 {
                    return Err(Error::Shape(format!(
                        "image must have {} reals, got {}",
                        h * w * 2,
                        x.len()
                    )));
                }
                let mut z = Vec::with_capacity(coils.len() * h * w * 2);
                for c in coils {
                    let mut buf = vec![0.0; h * w * 2];
                    for p in 0..h * w {
                        let (cr, ci) = (c.data()[2 * p], c.data()[2 * p + 1]);
                        let (xr, xi) = (x[2 * p], x[2 * p + 1]);
                        buf[2 * p] = cr * xr - ci * xi;
                        buf[2 * p + 1] = cr * xi + ci * xr;
                    }
                    dft2_inplace(&mut buf, h, w, false)?;
                    z.extend_from_slice(&buf);
                }
                Ok(z)
            }
        }
    }

    /// x = T^T z; equals the inverse because T is an isometry.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::Identity { n } => {
                if z.len() != *n {
                    return Err(Error::Shape(format!(
                        "identity transform expects {n} entries, got {}",
                        z.len()
                    )));
                }
                Ok(z.to_vec())
            }
            Transform::FourierCoils { height, width, coils } => {
                let (h, w) = (*height, *width);
                if z.len() != coils.len() * h * w * 2 {
                    return Err(Error::Shape(format!(
                        "measurement must have {} reals, got {}",
                        coils.len() * h * w * 2,
                        z.len()
                    )));
                }
                let mut x = vec![0.0; h * w * 2];
                for (k, c) in coils.iter().enumerate() {
                    let mut buf = z[k * h * w * 2..(k + 1) * h * w * 2].to_vec();
                    dft2_inplace(&mut buf, h, w, true)?;
                    for p in 0..h * w {
                        // conj(c_k) * image
                        let (cr, ci) = (c.data()[2 * p], -c.data()[2 * p + 1]);
                        let (br, bi) = (buf[2 * p], buf[2 * p + 1]);
                        x[2 * p] += cr * br - ci * bi;
                        x[2 * p + 1] += cr * bi + ci * br;
                    }
                }
                Ok(x)
            }
        }
    }
}

/// Synthesizes K smooth complex coil profiles: Gaussian magnitude bumps with
/// random centers, constant-plus-linear random phase, then a pixelwise
/// normalization so sum_k |c_k|^2 = 1.
pub fn make_coil_maps(height: usize, width: usize, k: usize, rng: &mut RngState) -> Vec<Tensor> {
    assert!(k >= 1, "need at least one coil");
    let sigma = 0.6 * height.max(width) as f64;
    let mut maps: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let cy = rng.uniform() * height as f64;
        let cx = rng.uniform() * width as f64;
        let phase0 = rng.uniform() * 2.0 * std::f64::consts::PI;
        let gy = (rng.uniform() - 0.5) * 0.06;
        let gx = (rng.uniform() - 0.5) * 0.06;
        let mut map = vec![0.0; height * width * 2];
        for r in 0..height {
            for c in 0..width {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp() + 0.15;
                let phase = phase0 + gy * r as f64 + gx * c as f64;
                map[2 * (r * width + c)] = mag * phase.cos();
                map[2 * (r * width + c) + 1] = mag * phase.sin();
            }
        }
        maps.push(map);
    }
    for p in 0..height * width {
        let total: f64 = maps
            .iter()
            .map(|m| m[2 * p] * m[2 * p] + m[2 * p + 1] * m[2 * p + 1])
            .sum();
        let scale = 1.0 / total.sqrt();
        for m in maps.iter_mut() {
            m[2 * p] *= scale;
            m[2 * p + 1] *= scale;
        }
    }
    maps.into_iter()
        .map(|m| {
            Tensor::from_vec(&[height, width, 2], m)
                .expect("sized")
                .into_complex()
                .expect("trailing pair")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::norm2;

    #[test]
    fn identity_forward_is_identity() {
        let t = Transform::identity(5);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(t.forward(&x).unwrap(), x.to_vec());
        assert_eq!(t.inverse(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn single_coil_normalizes_to_unit_magnitude() {
        let mut rng = RngState::new(2);
        let maps = make_coil_maps(8, 8, 1, &mut rng);
        for p in 0..64 {
            let (re, im) = (maps[0].data()[2 * p], maps[0].data()[2 * p + 1]);
            assert!((re * re + im * im - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coil_maps_are_normalized_and_smooth() {
        let mut rng = RngState::new(8);
        let maps = make_coil_maps(16, 16, 4, &mut rng);
        for p in 0..256 {
            let total: f64 = maps
                .iter()
                .map(|m| m.data()[2 * p] * m.data()[2 * p] + m.data()[2 * p + 1] * m.data()[2 * p + 1])
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // adjacent-pixel complex difference stays bounded
        for m in &maps {
            for r in 0..16 {
                for c in 0..15 {
                    let a = 2 * (r * 16 + c);
                    let b = 2 * (r * 16 + c + 1);
                    let dr = m.data()[a] - m.data()[b];
                    let di = m.data()[a + 1] - m.data()[b + 1];
                    assert!((dr * dr + di * di).sqrt() < 0.5);
                }
            }
        }
    }

    #[test]
    fn fourier_coils_round_trip_and_parseval() {
        let mut rng = RngState::new(5);
        let maps = make_coil_maps(16, 16, 2, &mut rng);
        let t = Transform::fourier_coils(16, 16, maps).unwrap();
        let x = rng.gaussian_vec(16 * 16 * 2);
        let z = t.forward(&x).unwrap();
        assert!((norm2(&z) - norm2(&x)).abs() < 1e-9, "isometry");
        let back = t.inverse(&z).unwrap();
        let max_diff = back
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-9, "round trip err {max_diff}");
    }

    #[test]
    fn transform_is_linear() {
        let mut rng = RngState::new(6);
        let maps = make_coil_maps(8, 8, 3, &mut rng);
        let t = Transform::fourier_coils(8, 8, maps).unwrap();
        let x = rng.gaussian_vec(128);
        let y = rng.gaussian_vec(128);
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = t.forward(&combo).unwrap();
        let fx = t.forward(&x).unwrap();
        let fy = t.forward(&y).unwrap();
        for i in 0..lhs.len() {
            assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn unnormalized_maps_rejected() {
        let bad = Tensor::from_vec(&[2, 2, 2], vec![2.0; 8]).unwrap();
        assert!(Transform::fourier_coils(2, 2, vec![bad]).is_err());
    }
}
