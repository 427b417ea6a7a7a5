//! Subsampling operators and distributions over them.
//!
//! A mask is a strictly increasing index list into the flat measurement
//! vector; it is applied only through `apply` / `adjoint` / `diag_sts`, so no
//! dense 0/1 matrix is ever materialized. Distributions generate structured
//! masks (pixel patch boxes, k-space line patterns, independent coordinate
//! keeps) or draw from an explicit finite family.

use crate::error::{Error, Result};
use crate::numerics::rng::RngState;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskOp {
    indices: Vec<usize>,
    n: usize,
}

impl MaskOp {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("mask must select at least one coordinate".into()));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Config(
                    "mask indices must be strictly increasing".into(),
                ));
            }
        }
        if *indices.last().expect("non-empty") >= n {
            return Err(Error::Config(format!(
                "mask index {} out of range for ambient dim {n}",
                indices.last().expect("non-empty")
            )));
        }
        Ok(MaskOp { indices, n })
    }

    pub fn full(n: usize) -> Self {
        MaskOp { indices: (0..n).collect(), n }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of selected coordinates (m).
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        false // m >= 1 by construction
    }

    /// Ambient dimension (n).
    pub fn ambient(&self) -> usize {
        self.n
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.n
    }

    /// S z: gathers the selected coordinates.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n {
            return Err(Error::Shape(format!(
                "apply: vector has {} entries, mask ambient dim is {}",
                z.len(),
                self.n
            )));
        }
        Ok(self.indices.iter().map(|&i| z[i]).collect())
    }

    /// S^T s: zero-fills the unselected coordinates.
    pub fn adjoint(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.indices.len() {
            return Err(Error::Shape(format!(
                "adjoint: vector has {} entries, mask selects {}",
                s.len(),
                self.indices.len()
            )));
        }
        let mut out = vec![0.0; self.n];
        for (&i, &v) in self.indices.iter().zip(s) {
            out[i] = v;
        }
        Ok(out)
    }

    /// diag(S^T S): the 0/1 coverage indicator.
    pub fn diag_sts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &i in &self.indices {
            out[i] = 1.0;
        }
        out
    }

    /// out[idx] += s, the accumulation form of the adjoint.
    pub fn scatter_add(&self, s: &[f64], out: &mut [f64]) {
        debug_assert_eq!(s.len(), self.indices.len());
        debug_assert_eq!(out.len(), self.n);
        for (&i, &v) in self.indices.iter().zip(s) {
            out[i] += v;
        }
    }

    /// z <- S^T s + (I - S^T S) z: overwrite selected coordinates, keep the rest.
    pub fn write_back(&self, s: &[f64], z: &mut [f64]) {
        debug_assert_eq!(s.len(), self.indices.len());
        debug_assert_eq!(z.len(), self.n);
        for (&i, &v) in self.indices.iter().zip(s) {
            z[i] = v;
        }
    }

    /// ASCII form: `n=<int>;m=<int>;idx=<comma list>`.
    pub fn to_ascii(&self) -> String {
        let idx = self
            .indices
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!("n={};m={};idx={}", self.n, self.indices.len(), idx)
    }

    pub fn from_ascii(text: &str) -> Result<Self> {
        let mut n = None;
        let mut m = None;
        let mut idx = None;
        for field in text.trim().split(';') {
            match field.split_once('=') {
                Some(("n", v)) => n = Some(v.parse::<usize>().map_err(|_| bad_mask(field))?),
                Some(("m", v)) => m = Some(v.parse::<usize>().map_err(|_| bad_mask(field))?),
                Some(("idx", v)) => {
                    let parsed: std::result::Result<Vec<usize>, _> =
                        v.split(',').map(|d| d.parse::<usize>()).collect();
                    idx = Some(parsed.map_err(|_| bad_mask(field))?);
                }
                _ => return Err(bad_mask(field)),
            }
        }
        let (n, m, idx) = match (n, m, idx) {
            (Some(n), Some(m), Some(idx)) => (n, m, idx),
            _ => return Err(Error::Config("mask string missing n/m/idx".into())),
        };
        if idx.len() != m {
            return Err(Error::Config(format!(
                "mask string says m={m} but lists {} indices",
                idx.len()
            )));
        }
        MaskOp::new(idx, n)
    }
}

fn bad_mask(field: &str) -> Error {
    Error::Config(format!("unparseable mask field {field:?}"))
}

/// Distribution p(S) over subsampling operators.
#[derive(Debug, Clone)]
pub enum MaskDistribution {
    /// Drop whole pixel boxes, identically across channels.
    PatchBox {
        height: usize,
        width: usize,
        channels: usize,
        box_h: usize,
        box_w: usize,
        keep_fraction: f64,
    },
    /// Keep whole vertical k-space lines across all coils; center
    /// autocalibration lines are always kept.
    KspaceLines {
        height: usize,
        lines: usize,
        coils: usize,
        accel: usize,
        autocal: usize,
        /// When true, autocalibration lines count toward the lines/accel
        /// budget; when false they are kept in addition to it.
        autocal_in_budget: bool,
    },
    /// Keep each coordinate independently with probability `keep_prob`
    /// (redrawn if the result would be empty).
    UniformCoords { n: usize, keep_prob: f64 },
    /// Explicit finite family with probabilities.
    FiniteSet { masks: Vec<MaskOp>, probs: Vec<f64> },
}

impl MaskDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            MaskDistribution::PatchBox {
                height,
                width,
                channels,
                box_h,
                box_w,
                keep_fraction,
            } => {
                if *height == 0 || *width == 0 || *channels == 0 || *box_h == 0 || *box_w == 0 {
                    return Err(Error::Config("patch_box dims must be positive".into()));
                }
                if height % box_h != 0 || width % box_w != 0 {
                    return Err(Error::Config(format!(
                        "box {box_h}x{box_w} does not tile image {height}x{width}"
                    )));
                }
                if !(*keep_fraction > 0.0 && *keep_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "keep_fraction must be in (0, 1], got {keep_fraction}"
                    )));
                }
                let total = (height / box_h) * (width / box_w);
                let dropped = ((1.0 - keep_fraction) * total as f64).round() as usize;
                if dropped >= total {
                    return Err(Error::Config(
                        "keep_fraction drops every box; nothing left to observe".into(),
                    ));
                }
                Ok(())
            }
            MaskDistribution::KspaceLines {
                height,
                lines,
                coils,
                accel,
                autocal,
                autocal_in_budget,
            } => {
                if *height == 0 || *lines == 0 || *coils == 0 {
                    return Err(Error::Config("kspace dims must be positive".into()));
                }
                if *accel < 1 {
                    return Err(Error::Config("acceleration must be >= 1".into()));
                }
                if lines % accel != 0 {
                    return Err(Error::Config(format!(
                        "acceleration {accel} does not divide line count {lines}"
                    )));
                }
                if autocal > lines {
                    return Err(Error::Config("more autocal lines than lines".into()));
                }
                let budget = lines / accel;
                if *autocal_in_budget && *autocal > budget {
                    return Err(Error::Config(format!(
                        "{autocal} autocal lines exceed the {budget}-line budget"
                    )));
                }
                Ok(())
            }
            MaskDistribution::UniformCoords { n, keep_prob } => {
                if *n == 0 {
                    return Err(Error::Config("ambient dim must be positive".into()));
                }
                if !(*keep_prob > 0.0 && *keep_prob <= 1.0) {
                    return Err(Error::Config(format!(
                        "keep_prob must be in (0, 1], got {keep_prob}"
                    )));
                }
                Ok(())
            }
            MaskDistribution::FiniteSet { masks, probs } => {
                if masks.is_empty() || masks.len() != probs.len() {
                    return Err(Error::Config(
                        "finite mask family needs matching masks and probs".into(),
                    ));
                }
                let n = masks[0].ambient();
                if masks.iter().any(|m| m.ambient() != n) {
                    return Err(Error::Config(
                        "finite mask family must share one ambient dim".into(),
                    ));
                }
                let total: f64 = probs.iter().sum();
                if probs.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "mask probabilities must be nonnegative and sum to 1, sum is {total}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            MaskDistribution::PatchBox { height, width, channels, .. } => {
                height * width * channels
            }
            MaskDistribution::KspaceLines { height, lines, coils, .. } => {
                coils * height * lines * 2
            }
            MaskDistribution::UniformCoords { n, .. } => *n,
            MaskDistribution::FiniteSet { masks, .. } => masks[0].ambient(),
        }
    }

    /// The explicit (prob, mask) family, when the distribution is finite and
    /// small enough to enumerate.
    pub fn enumerate(&self) -> Option<Vec<(f64, &MaskOp)>> {
        match self {
            MaskDistribution::FiniteSet { masks, probs } => {
                Some(probs.iter().cloned().zip(masks.iter()).collect())
            }
            _ => None,
        }
    }

    pub fn sample(&self, rng: &mut RngState) -> MaskOp {
        match self {
            MaskDistribution::PatchBox {
                height,
                width,
                channels,
                box_h,
                box_w,
                keep_fraction,
            } => {
                let bph = height / box_h; // boxes per column
                let bpw = width / box_w;
                let total = bph * bpw;
                let dropped_count = ((1.0 - keep_fraction) * total as f64).round() as usize;
                let dropped = rng.choose(total, dropped_count);
                let mut drop_flag = vec![false; total];
                for b in dropped {
                    drop_flag[b] = true;
                }
                let mut idx =
                    Vec::with_capacity((total - dropped_count) * box_h * box_w * channels);
                for r in 0..*height {
                    for c in 0..*width {
                        let b = (r / box_h) * bpw + (c / box_w);
                        if !drop_flag[b] {
                            let base = (r * width + c) * channels;
                            for ch in 0..*channels {
                                idx.push(base + ch);
                            }
                        }
                    }
                }
                MaskOp { indices: idx, n: self.ambient_dim() }
            }
            MaskDistribution::KspaceLines {
                height,
                lines,
                coils,
                accel,
                autocal,
                autocal_in_budget,
            } => {
                let budget = lines / accel;
                let center_start = (lines - autocal) / 2;
                let center: Vec<usize> = (center_start..center_start + autocal).collect();
                let is_center = |x: usize| x >= center_start && x < center_start + autocal;
                let random_count = if *autocal_in_budget {
                    budget - autocal
                } else {
                    budget
                };
                let outside: Vec<usize> = (0..*lines).filter(|&x| !is_center(x)).collect();
                let mut kept = center;
                for pick in rng.choose(outside.len(), random_count.min(outside.len())) {
                    kept.push(outside[pick]);
                }
                kept.sort_unstable();
                let mut idx = Vec::with_capacity(coils * height * kept.len() * 2);
                for k in 0..*coils {
                    for r in 0..*height {
                        for &x in &kept {
                            let base = ((k * height + r) * lines + x) * 2;
                            idx.push(base);
                            idx.push(base + 1);
                        }
                    }
                }
                MaskOp { indices: idx, n: self.ambient_dim() }
            }
            MaskDistribution::UniformCoords { n, keep_prob } => loop {
                let idx: Vec<usize> = (0..*n).filter(|_| rng.bernoulli(*keep_prob)).collect();
                if !idx.is_empty() {
                    return MaskOp { indices: idx, n: *n };
                }
            },
            MaskDistribution::FiniteSet { masks, probs } => {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (mask, &p) in masks.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return mask.clone();
                    }
                }
                masks.last().expect("non-empty family").clone()
            }
        }
    }

    /// Two-point helper used throughout the tests: a family of equally
    /// likely masks.
    pub fn uniform_family(masks: Vec<MaskOp>) -> Result<Self> {
        let k = masks.len();
        if k == 0 {
            return Err(Error::Config("empty mask family".into()));
        }
        let dist = MaskDistribution::FiniteSet { masks, probs: vec![1.0 / k as f64; k] };
        dist.validate()?;
        Ok(dist)
    }
}

/// Per-step coverage count C = sum_i diag(S_i^T S_i) and the aggregation
/// weight W = 1 / max(C, 1), so 0 < W <= 1 and uncovered coordinates get
/// weight 1 rather than a division by zero.
pub fn coverage_and_weight(masks: &[MaskOp], n: usize) -> Result<(Tensor, Tensor)> {
    let mut coverage = vec![0.0f64; n];
    for mask in masks {
        if mask.ambient() != n {
            return Err(Error::Shape(format!(
                "mask ambient dim {} does not match n={n}",
                mask.ambient()
            )));
        }
        for &i in mask.indices() {
            coverage[i] += 1.0;
        }
    }
    let weight: Vec<f64> = coverage.iter().map(|&c| 1.0 / c.max(1.0)).collect();
    Ok((
        Tensor::from_vec(&[n], coverage).expect("sized"),
        Tensor::from_vec(&[n], weight).expect("sized"),
    ))
}

/// Monte-Carlo estimate of the population weighting vector: the reciprocal
/// of the per-draw coverage probability under p(S). Coordinates never seen
/// in `draws` samples get weight 1 (the division-by-zero clamp).
pub fn expected_weight(
    dist: &MaskDistribution,
    n: usize,
    draws: usize,
    rng: &mut RngState,
) -> Result<Tensor> {
    if draws == 0 {
        return Err(Error::Config("expected_weight needs at least one draw".into()));
    }
    if dist.ambient_dim() != n {
        return Err(Error::Shape(format!(
            "distribution ambient dim {} does not match n={n}",
            dist.ambient_dim()
        )));
    }
    let mut counts = vec![0u64; n];
    for _ in 0..draws {
        let mask = dist.sample(rng);
        for &i in mask.indices() {
            counts[i] += 1;
        }
    }
    let weight: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { draws as f64 / c as f64 })
        .collect();
    Ok(Tensor::from_vec(&[n], weight).expect("sized"))
}

/// Exact population weight for an enumerable family: 1 over the coverage
/// probability, clamped to 1 where the probability is zero.
pub fn population_weight(dist: &MaskDistribution) -> Option<Vec<f64>> {
    let family = dist.enumerate()?;
    let n = dist.ambient_dim();
    let mut prob = vec![0.0; n];
    for (p, mask) in family {
        for &i in mask.indices() {
            prob[i] += p;
        }
    }
    Some(
        prob.iter()
            .map(|&p| if p > 0.0 { 1.0 / p } else { 1.0 })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::dot;
    use proptest::prelude::*;

    #[test]
    fn apply_adjoint_diag_tiny_example() {
        let s = MaskOp::new(vec![0, 2], 3).unwrap();
        let z = [10.0, 20.0, 30.0];
        assert_eq!(s.apply(&z).unwrap(), vec![10.0, 30.0]);
        assert_eq!(s.adjoint(&[10.0, 30.0]).unwrap(), vec![10.0, 0.0, 30.0]);
        assert_eq!(s.diag_sts(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_index_lists() {
        assert!(MaskOp::new(vec![], 3).is_err());
        assert!(MaskOp::new(vec![1, 1], 3).is_err());
        assert!(MaskOp::new(vec![2, 1], 3).is_err());
        assert!(MaskOp::new(vec![0, 3], 3).is_err());
    }

    #[test]
    fn apply_shape_mismatch_is_error() {
        let s = MaskOp::new(vec![0, 2], 3).unwrap();
        assert!(matches!(s.apply(&[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(s.adjoint(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn ascii_round_trip() {
        let s = MaskOp::new(vec![1, 4, 7], 9).unwrap();
        let text = s.to_ascii();
        assert_eq!(text, "n=9;m=3;idx=1,4,7");
        assert_eq!(MaskOp::from_ascii(&text).unwrap(), s);
    }

    #[test]
    fn coverage_weight_two_mask_example() {
        let a = MaskOp::new(vec![0, 1], 3).unwrap();
        let b = MaskOp::new(vec![1, 2], 3).unwrap();
        let (c, w) = coverage_and_weight(&[a, b], 3).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 1.0]);
        assert_eq!(w.data(), &[1.0, 0.5, 1.0]);
    }

    #[test]
    fn coverage_weight_full_and_empty_cases() {
        let full = MaskOp::full(4);
        let (_, w) = coverage_and_weight(&[full], 4).unwrap();
        assert!(w.data().iter().all(|&x| x == 1.0));
        // a coordinate covered by nothing gets the clamp weight 1
        let part = MaskOp::new(vec![0], 2).unwrap();
        let (c, w) = coverage_and_weight(&[part], 2).unwrap();
        assert_eq!(c.data(), &[1.0, 0.0]);
        assert_eq!(w.data(), &[1.0, 1.0]);
    }

    #[test]
    fn patch_box_keep_all_is_identity() {
        let dist = MaskDistribution::PatchBox {
            height: 16,
            width: 16,
            channels: 1,
            box_h: 4,
            box_w: 4,
            keep_fraction: 1.0,
        };
        dist.validate().unwrap();
        let mut rng = RngState::new(0);
        let mask = dist.sample(&mut rng);
        assert_eq!(mask.len(), 256);
        assert!(mask.is_full());
    }

    #[test]
    fn patch_box_drops_whole_boxes_identically_across_channels() {
        let dist = MaskDistribution::PatchBox {
            height: 32,
            width: 32,
            channels: 3,
            box_h: 8,
            box_w: 8,
            keep_fraction: 0.6,
        };
        dist.validate().unwrap();
        let mut rng = RngState::new(77);
        for _ in 0..10_000 {
            let mask = dist.sample(&mut rng);
            // round(0.4 * 16) = 6 dropped boxes of 64 pixels x 3 channels
            assert_eq!(mask.len(), (16 - 6) * 64 * 3);
            // channel index never affects the kept-pixel set
            let kept: std::collections::HashSet<usize> =
                mask.indices().iter().map(|&i| i / 3).collect();
            for &i in mask.indices() {
                let pixel = i / 3;
                for ch in 0..3 {
                    assert!(
                        mask.indices().binary_search(&(pixel * 3 + ch)).is_ok(),
                        "channel {ch} missing for pixel {pixel}"
                    );
                }
                assert!(kept.contains(&pixel));
            }
        }
    }

    #[test]
    fn kspace_lines_budget_and_autocal() {
        let dist = MaskDistribution::KspaceLines {
            height: 8,
            lines: 16,
            coils: 1,
            accel: 4,
            autocal: 4,
            autocal_in_budget: true,
        };
        dist.validate().unwrap();
        let mut rng = RngState::new(3);
        let center: Vec<usize> = (6..10).collect();
        for _ in 0..10_000 {
            let mask = dist.sample(&mut rng);
            // kept coordinates are whole lines
            let mut lines_seen = std::collections::BTreeSet::new();
            for &i in mask.indices() {
                lines_seen.insert((i / 2) % 16);
            }
            assert_eq!(lines_seen.len(), 4, "budget is 16/4 = 4 lines");
            for &c in &center {
                assert!(lines_seen.contains(&c), "center line {c} must be kept");
            }
            assert_eq!(mask.len(), 8 * 4 * 2);
        }
    }

    #[test]
    fn kspace_lines_autocal_outside_budget() {
        let dist = MaskDistribution::KspaceLines {
            height: 4,
            lines: 16,
            coils: 2,
            accel: 4,
            autocal: 4,
            autocal_in_budget: false,
        };
        dist.validate().unwrap();
        let mut rng = RngState::new(4);
        let mask = dist.sample(&mut rng);
        let mut lines_seen = std::collections::BTreeSet::new();
        for &i in mask.indices() {
            lines_seen.insert((i / 2) % 16);
        }
        // 4 center lines plus a full 4-line random budget
        assert_eq!(lines_seen.len(), 8);
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        assert!(MaskDistribution::PatchBox {
            height: 10,
            width: 16,
            channels: 1,
            box_h: 4,
            box_w: 4,
            keep_fraction: 0.5,
        }
        .validate()
        .is_err());
        assert!(MaskDistribution::UniformCoords { n: 8, keep_prob: 0.0 }
            .validate()
            .is_err());
        assert!(MaskDistribution::KspaceLines {
            height: 4,
            lines: 15,
            coils: 1,
            accel: 4,
            autocal: 2,
            autocal_in_budget: true,
        }
        .validate()
        .is_err());
    }

    #[test]
    fn expected_weight_uniform_coords_matches_reciprocal_keep_prob() {
        let dist = MaskDistribution::UniformCoords { n: 16, keep_prob: 0.5 };
        let mut rng = RngState::new(19);
        let w = expected_weight(&dist, 16, 100_000, &mut rng).unwrap();
        for &wi in w.data() {
            assert!((wi - 2.0).abs() / 2.0 < 0.02, "weight {wi} should be near 2");
        }
    }

    #[test]
    fn expected_weight_full_keep_is_one() {
        let dist = MaskDistribution::UniformCoords { n: 8, keep_prob: 1.0 };
        let mut rng = RngState::new(20);
        let w = expected_weight(&dist, 8, 100, &mut rng).unwrap();
        assert!(w.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn expected_weight_kspace_autocal_lines_are_one() {
        let dist = MaskDistribution::KspaceLines {
            height: 4,
            lines: 16,
            coils: 1,
            accel: 4,
            autocal: 4,
            autocal_in_budget: true,
        };
        let mut rng = RngState::new(21);
        let w = expected_weight(&dist, dist.ambient_dim(), 10_000, &mut rng).unwrap();
        // center lines 6..10 are covered once per draw -> weight 1 exactly
        for r in 0..4usize {
            for x in 6..10usize {
                let base = (r * 16 + x) * 2;
                assert!((w.data()[base] - 1.0).abs() < 0.02);
                assert!((w.data()[base + 1] - 1.0).abs() < 0.02);
            }
        }
    }

    #[test]
    fn population_weight_matches_finite_family() {
        let a = MaskOp::new(vec![0, 1], 3).unwrap();
        let b = MaskOp::new(vec![1, 2], 3).unwrap();
        let dist = MaskDistribution::uniform_family(vec![a, b]).unwrap();
        let w = population_weight(&dist).unwrap();
        assert_eq!(w, vec![2.0, 1.0, 2.0]);
    }

    proptest! {
        // <S z, s> == <z, S^T s> for random masks and vectors
        #[test]
        fn adjoint_inner_product_identity(seed in 0u64..500) {
            let mut rng = RngState::new(seed);
            let n = 4 + rng.index(60);
            let m = 1 + rng.index(n);
            let mut idx = rng.choose(n, m);
            idx.sort_unstable();
            let mask = MaskOp::new(idx, n).unwrap();
            let z = rng.gaussian_vec(n);
            let s = rng.gaussian_vec(m);
            let lhs = dot(&mask.apply(&z).unwrap(), &s);
            let rhs = dot(&z, &mask.adjoint(&s).unwrap());
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        // SS^T S = S and coverage entries are 0/1
        #[test]
        fn idempotent_coverage(seed in 0u64..200) {
            let mut rng = RngState::new(seed.wrapping_add(1000));
            let n = 4 + rng.index(40);
            let m = 1 + rng.index(n);
            let mut idx = rng.choose(n, m);
            idx.sort_unstable();
            let mask = MaskOp::new(idx, n).unwrap();
            let z = rng.gaussian_vec(n);
            let once = mask.apply(&z).unwrap();
            let round = mask.apply(&mask.adjoint(&once).unwrap()).unwrap();
            prop_assert_eq!(once, round);
            prop_assert!(mask.diag_sts().iter().all(|&d| d == 0.0 || d == 1.0));
        }
    }
}
