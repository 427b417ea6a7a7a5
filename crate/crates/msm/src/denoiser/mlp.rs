//! Small noise-conditioned fully-connected denoiser with exact reverse-mode
//! gradients.
//!
//! The network always sees the image domain: for the identity transform the
//! image is the measurement itself; for Fourier-coils the zero-filled
//! measurement is mapped through the adjoint transform before the network and
//! back through the forward transform after it, so the network's input and
//! output shapes are mask-agnostic.
//!
//! Input layout: [adjoint(zero-filled s_t), adjoint(coverage), sigma * scale].
//! Output: image-domain denoised estimate plus a residual skip from the first
//! input channel, then mapped to the measurement domain and restricted to the
//! mask.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::masks::MaskOp;
use crate::numerics::io;
use crate::numerics::rng::RngState;
use crate::numerics::tensor::Tensor;
use crate::transforms::Transform;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub sigma_feature_scale: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: vec![128, 128], sigma_feature_scale: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    transform: Transform,
    cfg: MlpConfig,
    /// Layer widths including input and output: [2*d_img+1, hidden..., d_img].
    dims: Vec<usize>,
    /// Flat parameters: per layer, row-major W (out x in) then bias (out).
    params: Vec<f64>,
}

/// Activations retained from one forward pass, consumed by `backward`.
pub struct MlpCache {
    /// h_0 = input, then post-tanh hidden activations.
    activations: Vec<Vec<f64>>,
}

impl MlpDenoiser {
    pub fn new(transform: Transform, cfg: MlpConfig, rng: &mut RngState) -> Result<Self> {
        if cfg.hidden.is_empty() {
            return Err(Error::Config("need at least one hidden layer".into()));
        }
        if cfg.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let d_img = transform.image_dim();
        let mut dims = vec![2 * d_img + 1];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(d_img);
        let mut params = Vec::with_capacity(Self::param_count_for(&dims));
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let std = (1.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(std * rng.gaussian_vec(1)[0]);
            }
            for _ in 0..fan_out {
                params.push(0.0);
            }
        }
        Ok(MlpDenoiser { transform, cfg, dims, params })
    }

    fn param_count_for(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    fn layer_offset(&self, layer: usize) -> (usize, usize) {
        let mut off = 0;
        for l in 0..layer {
            off += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }
        let w_off = off;
        let b_off = off + self.dims[layer] * self.dims[layer + 1];
        (w_off, b_off)
    }

    fn assemble_input(&self, zero_filled: &[f64], coverage: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let n = self.transform.measurement_dim();
        if zero_filled.len() != n || coverage.len() != n {
            return Err(Error::Shape(format!(
                "inputs must have measurement dim {n}, got {} and {}",
                zero_filled.len(),
                coverage.len()
            )));
        }
        let u = self.transform.inverse(zero_filled)?;
        let cv = self.transform.inverse(coverage)?;
        let mut x = Vec::with_capacity(self.dims[0]);
        x.extend_from_slice(&u);
        x.extend_from_slice(&cv);
        x.push(sigma * self.cfg.sigma_feature_scale);
        Ok(x)
    }

    fn mlp_forward(&self, x: Vec<f64>) -> (Vec<f64>, MlpCache) {
        let n_layers = self.dims.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut h = x;
        for l in 0..n_layers {
            let (w_off, b_off) = self.layer_offset(l);
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let mut a = self.params[b_off..b_off + fan_out].to_vec();
            for o in 0..fan_out {
                let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                let mut acc = 0.0;
                for (wi, hi) in row.iter().zip(&h) {
                    acc += wi * hi;
                }
                a[o] += acc;
            }
            if l + 1 < n_layers {
                for v in a.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(h);
            h = a;
        }
        // residual skip: output length is d_img and the first d_img input
        // entries are the zero-filled image channel
        for (i, v) in h.iter_mut().enumerate() {
            *v += acts[0][i];
        }
        (h, MlpCache { activations: acts })
    }

    /// Full-measurement-domain forward pass: returns the denoised estimate
    /// over the whole measurement vector, mask-agnostic.
    pub fn forward_full(&self, zero_filled: &[f64], coverage: &[f64], sigma: f64) -> Result<Vec<f64>> {
        Ok(self.forward_full_cached(zero_filled, coverage, sigma)?.0)
    }

    pub fn forward_full_cached(
        &self,
        zero_filled: &[f64],
        coverage: &[f64],
        sigma: f64,
    ) -> Result<(Vec<f64>, MlpCache)> {
        let x = self.assemble_input(zero_filled, coverage, sigma)?;
        let (y, cache) = self.mlp_forward(x);
        let out = self.transform.forward(&y)?;
        Ok((out, cache))
    }

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output in
    /// the measurement domain). The cache must come from the matching
    /// forward pass.
    pub fn backward_accumulate(
        &self,
        cache: &MlpCache,
        grad_out: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::ContractViolation(
                "gradient buffer does not match parameter count".into(),
            ));
        }
        let n_layers = self.dims.len() - 1;
        if cache.activations.len() != n_layers {
            return Err(Error::ContractViolation(
                "cache does not match network depth".into(),
            ));
        }
        // adjoint of the output transform (isometry: adjoint == inverse)
        let mut g = self.transform.inverse(grad_out)?;
        for l in (0..n_layers).rev() {
            let (w_off, b_off) = self.layer_offset(l);
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let h_in = &cache.activations[l];
            // through tanh for hidden layers: the stored activation of the
            // NEXT layer's input is tanh(a); recover the derivative from it
            let g_a: Vec<f64> = if l + 1 < n_layers {
                let h_out = &cache.activations[l + 1];
                g.iter().zip(h_out).map(|(&gi, &hi)| gi * (1.0 - hi * hi)).collect()
            } else {
                g.clone()
            };
            for o in 0..fan_out {
                grads[b_off + o] += g_a[o];
                let row = &mut grads[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                let go = g_a[o];
                for (ri, hi) in row.iter_mut().zip(h_in) {
                    *ri += go * hi;
                }
            }
            if l > 0 {
                let mut g_prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                    let go = g_a[o];
                    for (gp, wi) in g_prev.iter_mut().zip(row) {
                        *gp += go * wi;
                    }
                }
                g = g_prev;
            }
        }
        Ok(())
    }

    /// Forward restricted to a mask, with the cache for training.
    pub fn denoise_masked_cached(
        &self,
        mask: &MaskOp,
        s_t: &[f64],
        sigma: f64,
    ) -> Result<(Vec<f64>, MlpCache)> {
        let zf = mask.adjoint(s_t)?;
        let cov = mask.diag_sts();
        let (full, cache) = self.forward_full_cached(&zf, &cov, sigma)?;
        Ok((mask.apply(&full)?, cache))
    }

    /// Backward from a gradient on the masked output.
    pub fn backward_masked(
        &self,
        mask: &MaskOp,
        cache: &MlpCache,
        grad_masked: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        let grad_full = mask.adjoint(grad_masked)?;
        self.backward_accumulate(cache, &grad_full, grads)
    }

    // --- checkpoint format -------------------------------------------------
    //
    // Line 1: JSON header (arch dims, transform kind, schedule hash, training
    // config digest, iteration counter). Then length-prefixed tensor blocks:
    // the flat parameter vector, followed by the coil maps when present.

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let (kind, h, w, k) = match &self.transform {
            Transform::Identity { n } => ("identity", *n, 0usize, 0usize),
            Transform::FourierCoils { height, width, coils } => {
                ("fourier_coils", *height, *width, coils.len())
            }
        };
        let header = serde_json::json!({
            "format": "msm-checkpoint-v1",
            "hidden": self.cfg.hidden,
            "sigma_feature_scale": self.cfg.sigma_feature_scale,
            "transform": {"kind": kind, "a": h, "b": w, "coils": k},
            "schedule_hash": meta.schedule_hash,
            "train_digest": meta.train_digest,
            "iterations": meta.iterations,
        });
        let mut blocks: Vec<Vec<u8>> = Vec::new();
        let p = Tensor::from_slice(&[self.params.len()], &self.params)?;
        blocks.push(io::tensor_to_bytes(&p));
        if let Transform::FourierCoils { coils, .. } = &self.transform {
            for c in coils {
                blocks.push(io::tensor_to_bytes(c));
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e.to_string()))?;
        let mut line = header.to_string();
        line.push('\n');
        f.write_all(line.as_bytes())
            .map_err(|e| Error::file(path, e.to_string()))?;
        for b in blocks {
            f.write_all(&(b.len() as u64).to_le_bytes())
                .map_err(|e| Error::file(path, e.to_string()))?;
            f.write_all(&b).map_err(|e| Error::file(path, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::file(path, e.to_string()))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::file(path, e.to_string()))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::file(path, "missing checkpoint header"))?;
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::file(path, format!("bad header: {e}")))?;
        if header["format"] != "msm-checkpoint-v1" {
            return Err(Error::file(path, "unrecognized checkpoint format"));
        }
        let mut cursor = nl + 1;
        let mut next_block = || -> Result<Tensor> {
            if cursor + 8 > bytes.len() {
                return Err(Error::file(path, "truncated checkpoint"));
            }
            let len =
                u64::from_le_bytes(bytes[cursor..cursor + 8].try_into().expect("8 bytes")) as usize;
            cursor += 8;
            if cursor + len > bytes.len() {
                return Err(Error::file(path, "truncated checkpoint block"));
            }
            let t = io::tensor_from_bytes(&bytes[cursor..cursor + len], path)?;
            cursor += len;
            Ok(t)
        };
        let params_t = next_block()?;
        let tkind = header["transform"]["kind"]
            .as_str()
            .ok_or_else(|| Error::file(path, "missing transform kind"))?;
        let a = header["transform"]["a"].as_u64().unwrap_or(0) as usize;
        let b = header["transform"]["b"].as_u64().unwrap_or(0) as usize;
        let k = header["transform"]["coils"].as_u64().unwrap_or(0) as usize;
        let transform = match tkind {
            "identity" => Transform::identity(a),
            "fourier_coils" => {
                let coils: Result<Vec<Tensor>> = (0..k).map(|_| next_block()).collect();
                Transform::fourier_coils(a, b, coils?)?
            }
            other => return Err(Error::file(path, format!("unknown transform {other}"))),
        };
        let hidden: Vec<usize> = header["hidden"]
            .as_array()
            .ok_or_else(|| Error::file(path, "missing hidden widths"))?
            .iter()
            .map(|v| v.as_u64().unwrap_or(0) as usize)
            .collect();
        let cfg = MlpConfig {
            hidden,
            sigma_feature_scale: header["sigma_feature_scale"].as_f64().unwrap_or(1.0),
        };
        let d_img = transform.image_dim();
        let mut dims = vec![2 * d_img + 1];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(d_img);
        if Self::param_count_for(&dims) != params_t.len() {
            return Err(Error::file(
                path,
                format!(
                    "parameter payload has {} values, architecture needs {}",
                    params_t.len(),
                    Self::param_count_for(&dims)
                ),
            ));
        }
        let meta = CheckpointMeta {
            schedule_hash: header["schedule_hash"].as_str().unwrap_or("").to_string(),
            train_digest: header["train_digest"].as_str().unwrap_or("").to_string(),
            iterations: header["iterations"].as_u64().unwrap_or(0),
        };
        Ok((
            MlpDenoiser { transform, cfg, dims, params: params_t.into_data() },
            meta,
        ))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub schedule_hash: String,
    pub train_digest: String,
    pub iterations: u64,
}

impl Denoiser for MlpDenoiser {
    fn ambient_dim(&self) -> usize {
        self.transform.measurement_dim()
    }

    fn denoise_masked(&self, mask: &MaskOp, s_t: &[f64], sigma: f64) -> Result<Vec<f64>> {
        Ok(self.denoise_masked_cached(mask, s_t, sigma)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::dot;

    fn tiny_net(n: usize, seed: u64) -> MlpDenoiser {
        let mut rng = RngState::new(seed);
        MlpDenoiser::new(
            Transform::identity(n),
            MlpConfig { hidden: vec![7, 5], sigma_feature_scale: 1.0 },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_input_gives_zero_output() {
        let mut net = tiny_net(4, 1);
        for p in net.params_mut() {
            *p = 0.0;
        }
        let out = net.forward_full(&[0.0; 4], &[0.0; 4], 0.0).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = tiny_net(6, 2);
        let mut rng = RngState::new(3);
        let zf = rng.gaussian_vec(6);
        let cov = vec![1.0; 6];
        let a = net.forward_full(&zf, &cov, 0.4).unwrap();
        let b = net.forward_full(&zf, &cov, 0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        // loss = ||s_hat - target||^2 on a 2-hidden-layer net
        let mut net = tiny_net(5, 4);
        let mut rng = RngState::new(5);
        let mask = MaskOp::new(vec![0, 2, 3], 5).unwrap();
        let s_t = rng.gaussian_vec(3);
        let target = rng.gaussian_vec(3);
        let sigma = 0.6;

        let loss_of = |net: &MlpDenoiser| -> f64 {
            let out = net.denoise_masked(&mask, &s_t, sigma).unwrap();
            out.iter().zip(&target).map(|(o, t)| (o - t) * (o - t)).sum()
        };

        let (out, cache) = net.denoise_masked_cached(&mask, &s_t, sigma).unwrap();
        let grad_masked: Vec<f64> = out.iter().zip(&target).map(|(o, t)| 2.0 * (o - t)).collect();
        let mut grads = net.zero_grads();
        net.backward_masked(&mask, &cache, &grad_masked, &mut grads).unwrap();

        let delta = 1e-5;
        let mut checked = 0;
        let count = net.param_count();
        for p_idx in (0..count).step_by(count / 40 + 1) {
            let orig = net.params()[p_idx];
            net.params_mut()[p_idx] = orig + delta;
            let plus = loss_of(&net);
            net.params_mut()[p_idx] = orig - delta;
            let minus = loss_of(&net);
            net.params_mut()[p_idx] = orig;
            let numeric = (plus - minus) / (2.0 * delta);
            let analytic = grads[p_idx];
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-5,
                "param {p_idx}: numeric {numeric} vs analytic {analytic}"
            );
            checked += 1;
        }
        assert!(checked >= 30);
    }

    #[test]
    fn batch_order_does_not_change_outputs() {
        let net = tiny_net(4, 7);
        let mut rng = RngState::new(8);
        let inputs: Vec<Vec<f64>> = (0..5).map(|_| rng.gaussian_vec(4)).collect();
        let cov = vec![1.0; 4];
        let forward_one = |x: &[f64]| net.forward_full(x, &cov, 0.2).unwrap();
        let in_order: Vec<Vec<f64>> = inputs.iter().map(|x| forward_one(x)).collect();
        let reversed: Vec<Vec<f64>> = inputs.iter().rev().map(|x| forward_one(x)).collect();
        for (i, x) in in_order.iter().enumerate() {
            assert_eq!(x, &reversed[inputs.len() - 1 - i]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = tiny_net(6, 11);
        let meta = CheckpointMeta {
            schedule_hash: "abc".into(),
            train_digest: "def".into(),
            iterations: 42,
        };
        net.save(&path, &meta).unwrap();
        let (back, meta2) = MlpDenoiser::load(&path).unwrap();
        assert_eq!(net.params(), back.params());
        assert_eq!(meta, meta2);
        let mut rng = RngState::new(1);
        let zf = rng.gaussian_vec(6);
        assert_eq!(
            net.forward_full(&zf, &[1.0; 6], 0.3).unwrap(),
            back.forward_full(&zf, &[1.0; 6], 0.3).unwrap()
        );
    }

    #[test]
    fn gradient_of_linear_probe_matches_adjoint_probe() {
        // <g, J p> == <J^T g, p> sanity for the masked backward path
        let net = tiny_net(5, 13);
        let mut rng = RngState::new(14);
        let mask = MaskOp::new(vec![1, 4], 5).unwrap();
        let s_t = rng.gaussian_vec(2);
        let g_out = rng.gaussian_vec(2);
        let (_, cache) = net.denoise_masked_cached(&mask, &s_t, 0.5).unwrap();
        let mut grads = net.zero_grads();
        net.backward_masked(&mask, &cache, &g_out, &mut grads).unwrap();
        // directional derivative along a random parameter direction
        let dir = RngState::new(15).gaussian_vec(net.param_count());
        let eps = 1e-6;
        let mut plus = net.clone();
        for (p, d) in plus.params_mut().iter_mut().zip(&dir) {
            *p += eps * d;
        }
        let mut minus = net.clone();
        for (p, d) in minus.params_mut().iter_mut().zip(&dir) {
            *p -= eps * d;
        }
        let out_p = plus.denoise_masked(&mask, &s_t, 0.5).unwrap();
        let out_m = minus.denoise_masked(&mask, &s_t, 0.5).unwrap();
        let jvp: Vec<f64> = out_p
            .iter()
            .zip(&out_m)
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        let lhs = dot(&g_out, &jvp);
        let rhs = dot(&grads, &dir);
        assert!((lhs - rhs).abs() < 1e-6 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
