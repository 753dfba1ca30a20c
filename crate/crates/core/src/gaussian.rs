use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

/// Number of SH coefficients per color channel for `degree`.
pub const fn sh_len(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

/// A set of anisotropic 3D Gaussians in the optimization parameterization:
/// log-domain scales, opacity logits, and raw (renormalized on use) quaternions.
///
/// `sh_coeffs` holds `3 * sh_len(sh_degree)` values per primitive laid out
/// channel-major (`[r0..rK, g0..gK, b0..bK]`), DC first.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f32>,
    pub sh_coeffs: Vec<f32>,
    pub sh_degree: u8,
}

impl GaussianSet {
    pub fn new(
        positions: Vec<Vec3>,
        rotations: Vec<[f32; 4]>,
        log_scales: Vec<Vec3>,
        opacity_logits: Vec<f32>,
        sh_coeffs: Vec<f32>,
        sh_degree: u8,
    ) -> Result<Self> {
        let gs = Self {
            positions,
            rotations,
            log_scales,
            opacity_logits,
            sh_coeffs,
            sh_degree,
        };
        gs.validate()?;
        Ok(gs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::InvalidScene("a Gaussian set needs at least one primitive".into()));
        }
        if self.sh_degree > 3 {
            return Err(Error::InvalidScene(format!("SH degree {} > 3", self.sh_degree)));
        }
        let k = 3 * sh_len(self.sh_degree);
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh_coeffs.len() != n * k
        {
            return Err(Error::InvalidScene(format!(
                "attribute lengths disagree: {n} positions, {} rotations, {} scales, {} opacities, {} SH values (expected {})",
                self.rotations.len(),
                self.log_scales.len(),
                self.opacity_logits.len(),
                self.sh_coeffs.len(),
                n * k
            )));
        }
        if self.rotations.iter().any(|q| q.iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidScene("zero quaternion".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// SH values per primitive (all three channels).
    pub fn sh_stride(&self) -> usize {
        3 * sh_len(self.sh_degree)
    }

    pub fn sh(&self, i: usize) -> &[f32] {
        let s = self.sh_stride();
        &self.sh_coeffs[i * s..(i + 1) * s]
    }

    pub fn opacity(&self, i: usize) -> f32 {
        math::sigmoid(self.opacity_logits[i])
    }

    pub fn covariance(&self, i: usize) -> Mat3 {
        covariance(self.rotations[i], self.log_scales[i])
    }

    /// The primitives at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let s = self.sh_stride();
        let mut sh = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            sh.extend_from_slice(self.sh(i));
        }
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            rotations: indices.iter().map(|&i| self.rotations[i]).collect(),
            log_scales: indices.iter().map(|&i| self.log_scales[i]).collect(),
            opacity_logits: indices.iter().map(|&i| self.opacity_logits[i]).collect(),
            sh_coeffs: sh,
            sh_degree: self.sh_degree,
        }
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = [0.0f64; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k] as f64;
            }
        }
        let n = self.len() as f64;
        [(c[0] / n) as f32, (c[1] / n) as f32, (c[2] / n) as f32]
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.sh_coeffs.iter().all(|v| v.is_finite())
    }

    /// Random set with unconstrained attributes, used for interchange tests.
    pub fn random<R: Rng + ?Sized>(n: usize, sh_degree: u8, rng: &mut R) -> Self {
        let mut normal = || -> f32 { StandardNormal.sample(rng) };
        let positions = (0..n).map(|_| [normal(), normal(), normal()]).collect();
        let rotations = (0..n)
            .map(|_| {
                let q = [normal(), normal(), normal(), normal()];
                if q.iter().all(|&v| v == 0.0) {
                    [1.0, 0.0, 0.0, 0.0]
                } else {
                    q
                }
            })
            .collect();
        let log_scales = (0..n).map(|_| [normal() - 3.0, normal() - 3.0, normal() - 3.0]).collect();
        let opacity_logits = (0..n).map(|_| normal()).collect();
        let sh_coeffs = (0..n * 3 * sh_len(sh_degree)).map(|_| 0.3 * normal()).collect();
        Self {
            positions,
            rotations,
            log_scales,
            opacity_logits,
            sh_coeffs,
            sh_degree,
        }
    }
}

/// `Σ = R S Sᵀ Rᵀ` for the normalized quaternion and exponentiated scales.
pub fn covariance(rotation: [f32; 4], log_scales: Vec3) -> Mat3 {
    let r = math::quat_to_mat(math::quat_normalize(rotation));
    let s = [log_scales[0].exp(), log_scales[1].exp(), log_scales[2].exp()];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * s[j];
        }
    }
    math::mat_mul(&m, &math::transpose(&m))
}
