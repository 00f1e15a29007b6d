//! Microfacet BRDF terms and their importance samplers.
//!
//! Roughness is used directly as the GGX `alpha`. The specular estimator
//! draws half-vectors from `D(n.h)(n.h)`, so each sample carries the weight
//! `F * G * (o.h) / ((n.h)(n.o))`.

use std::f64::consts::{PI, TAU};

use glam::DVec3;

use crate::material::MaterialSample;

/// Lower bound on roughness; keeps the specular lobe away from the delta limit.
pub const ALPHA_MIN: f64 = 0.04;

/// Dielectric reflectance at normal incidence.
pub const F0_DIELECTRIC: f64 = 0.04;

/// GGX normal distribution function.
pub fn ggx_ndf(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

/// Smith-GGX masking for one direction.
pub fn smith_g1(x: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * x / (x + (a2 + (1.0 - a2) * x * x).sqrt())
}

/// Derivative of [`smith_g1`] with respect to `alpha`.
pub fn smith_g1_dalpha(x: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let s = (a2 + (1.0 - a2) * x * x).sqrt();
    let ds = alpha * (1.0 - x * x) / s;
    -2.0 * x / ((x + s) * (x + s)) * ds
}

/// Separable Smith-GGX shadowing-masking.
pub fn smith_g(n_dot_v: f64, n_dot_l: f64, alpha: f64) -> f64 {
    smith_g1(n_dot_v, alpha) * smith_g1(n_dot_l, alpha)
}

/// Reflectance at normal incidence, blended between dielectric and metal.
pub fn f0(albedo: DVec3, metallic: f64) -> DVec3 {
    DVec3::splat(F0_DIELECTRIC * (1.0 - metallic)) + albedo * metallic
}

/// Schlick Fresnel.
pub fn fresnel_schlick(albedo: DVec3, metallic: f64, h_dot_v: f64) -> DVec3 {
    let f0 = f0(albedo, metallic);
    let s5 = (1.0 - h_dot_v).clamp(0.0, 1.0).powi(5);
    f0 + (DVec3::ONE - f0) * s5
}

/// Tangent frame `(t, b)` completing `n` to a right-handed basis.
pub fn orthonormal_basis(n: DVec3) -> (DVec3, DVec3) {
    let sign = 1f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        DVec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        DVec3::new(b, sign + n.y * n.y * a, -n.y),
    )
}

fn to_world(n: DVec3, local: DVec3) -> DVec3 {
    let (t, b) = orthonormal_basis(n);
    t * local.x + b * local.y + n * local.z
}

pub fn reflect(incident: DVec3, normal: DVec3) -> DVec3 {
    incident - normal * (2.0 * incident.dot(normal))
}

/// Cosine-weighted hemisphere direction around `n`; `(0, 0)` maps to `n`.
pub fn sample_cosine_hemisphere(n: DVec3, u1: f64, u2: f64) -> DVec3 {
    let r = u1.sqrt();
    let phi = TAU * u2;
    let local = DVec3::new(r * phi.cos(), r * phi.sin(), (1.0 - u1).max(0.0).sqrt());
    to_world(n, local)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgxSample {
    pub dir: DVec3,
    pub half: DVec3,
    /// The reflected direction lies below the surface or behind the half-vector.
    pub below_horizon: bool,
}

/// Half-vector drawn with density `D(n.h)(n.h)`, reflected about `view`.
pub fn sample_ggx(alpha: f64, view: DVec3, n: DVec3, u1: f64, u2: f64) -> GgxSample {
    let a2 = alpha * alpha;
    let cos2 = ((1.0 - u1) / (1.0 + (a2 - 1.0) * u1)).clamp(0.0, 1.0);
    let cos_t = cos2.sqrt();
    let sin_t = (1.0 - cos2).sqrt();
    let phi = TAU * u2;
    let half = to_world(n, DVec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)).normalize();
    let dir = reflect(-view, half).normalize();
    let below_horizon = n.dot(dir) <= 0.0 || view.dot(half) <= 0.0;
    GgxSample { dir, half, below_horizon }
}

/// Per-sample specular weight and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecularWeight {
    pub value: DVec3,
    /// Diagonal of d value / d albedo.
    pub d_albedo: DVec3,
    pub d_roughness: DVec3,
    pub d_metallic: DVec3,
}

/// `F * G * (o.h) / ((n.h)(n.o))` for one GGX sample.
pub fn specular_weight(mat: &MaterialSample, n_dot_o: f64, n_dot_l: f64, n_dot_h: f64, o_dot_h: f64) -> DVec3 {
    let f = fresnel_schlick(mat.albedo, mat.metallic, o_dot_h);
    let g = smith_g(n_dot_o, n_dot_l, mat.roughness);
    f * (g * o_dot_h / (n_dot_h * n_dot_o))
}

pub fn specular_weight_grad(
    mat: &MaterialSample,
    n_dot_o: f64,
    n_dot_l: f64,
    n_dot_h: f64,
    o_dot_h: f64,
) -> SpecularWeight {
    let alpha = mat.roughness;
    let s5 = (1.0 - o_dot_h).clamp(0.0, 1.0).powi(5);
    let f = fresnel_schlick(mat.albedo, mat.metallic, o_dot_h);
    let (g1o, g1l) = (smith_g1(n_dot_o, alpha), smith_g1(n_dot_l, alpha));
    let dg = smith_g1_dalpha(n_dot_o, alpha) * g1l + g1o * smith_g1_dalpha(n_dot_l, alpha);
    let k = o_dot_h / (n_dot_h * n_dot_o);
    let g = g1o * g1l;
    SpecularWeight {
        value: f * (g * k),
        d_albedo: DVec3::splat(mat.metallic * (1.0 - s5) * g * k),
        d_roughness: f * (dg * k),
        d_metallic: (mat.albedo - DVec3::splat(F0_DIELECTRIC)) * ((1.0 - s5) * g * k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn ndf_values() {
        for nh in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(ggx_ndf(nh, 1.0), 1.0 / PI);
        }
        assert!((ggx_ndf(1.0, 0.5) - 1.273_239_544_735_162_7).abs() < 1e-12);
    }

    #[test]
    fn ndf_projected_area_is_one() {
        // midpoint rule on a 1000 x 1000 (theta, phi) grid over the hemisphere
        for alpha in [0.2, 0.5, 1.0] {
            let (nt, np) = (1000, 1000);
            let (dt, dp) = (0.5 * PI / nt as f64, TAU / np as f64);
            let mut total = 0.0;
            for i in 0..nt {
                let theta = (i as f64 + 0.5) * dt;
                let ring = ggx_ndf(theta.cos(), alpha) * theta.cos() * theta.sin() * dt;
                total += (0..np).map(|_| ring * dp).sum::<f64>();
            }
            assert!((total - 1.0).abs() < 0.01, "alpha {alpha}: {total}");
        }
    }

    #[test]
    fn smith_limits_and_monotonicity() {
        assert!((smith_g(1.0, 1.0, ALPHA_MIN) - 1.0).abs() < 1e-12);
        assert_eq!(smith_g(1.0, 1.0, 1.0), 1.0);
        for i in 1..=20 {
            let x = i as f64 / 20.0;
            for j in 1..=20 {
                let y = j as f64 / 20.0;
                let mut prev = f64::INFINITY;
                for k in 0..=48 {
                    let a = ALPHA_MIN + (1.0 - ALPHA_MIN) * k as f64 / 48.0;
                    let g = smith_g(x, y, a);
                    assert!(g > 0.0 && g <= 1.0 + 1e-15);
                    assert!(g <= prev + 1e-15);
                    prev = g;
                }
            }
        }
    }

    #[test]
    fn smith_derivative_matches_central_difference() {
        for &(x, a) in &[(0.2, 0.3), (0.9, 0.5), (0.5, 0.95), (0.05, 0.1)] {
            let h = 1e-6;
            let fd = (smith_g1(x, a + h) - smith_g1(x, a - h)) / (2.0 * h);
            assert!((fd - smith_g1_dalpha(x, a)).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn fresnel_limits() {
        let mut r = rng::stream(3, 0);
        for _ in 0..100 {
            let c = DVec3::new(r.random(), r.random(), r.random());
            assert_eq!(fresnel_schlick(c, r.random(), 0.0), DVec3::ONE);
        }
        assert_eq!(fresnel_schlick(DVec3::new(0.3, 0.6, 0.9), 0.0, 1.0), DVec3::splat(0.04));
        assert_eq!(fresnel_schlick(DVec3::X, 1.0, 1.0), DVec3::X);
    }

    #[test]
    fn cosine_sampling() {
        let n = DVec3::new(0.3, -0.5, 0.8).normalize();
        assert!((sample_cosine_hemisphere(n, 0.0, 0.0) - n).length() < 1e-15);
        let mut r = rng::stream(4, 0);
        let count = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..count {
            let d = sample_cosine_hemisphere(n, r.random(), r.random());
            let c = n.dot(d);
            assert!(c >= -1e-12);
            sum += c;
        }
        assert!((sum / count as f64 - 2.0 / 3.0).abs() < 0.002);
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut r = rng::stream(5, 0);
        for _ in 0..1000 {
            let n = DVec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            if n.length() < 1e-3 {
                continue;
            }
            let n = n.normalize();
            let (t, b) = orthonormal_basis(n);
            assert!(t.dot(b).abs() < 1e-12 && t.dot(n).abs() < 1e-12 && b.dot(n).abs() < 1e-12);
            assert!((t.cross(b) - n).length() < 1e-12);
        }
    }

    #[test]
    fn ggx_sampling_near_delta_limit() {
        let n = DVec3::Z;
        let view = DVec3::new(0.4, 0.0, 1.0).normalize();
        let mirror = reflect(-view, n);
        let mut r = rng::stream(6, 0);
        for _ in 0..1000 {
            let s = sample_ggx(ALPHA_MIN, view, n, r.random_range(0.0..0.5), r.random());
            assert!(s.half.dot(n) > 0.04f64.cos());
            assert!(s.dir.dot(mirror) > 0.99);
            assert!((s.dir.length() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ggx_half_vector_histogram_matches_pdf() {
        let alpha = 0.5;
        let bins = 50;
        let draws = 1_000_000;
        let n = DVec3::new(0.0, 1.0, 0.0);
        let view = n;
        let mut hist = vec![0usize; bins];
        let mut r = rng::stream(7, 0);
        for _ in 0..draws {
            let s = sample_ggx(alpha, view, n, r.random(), r.random());
            assert!((s.dir.length() - 1.0).abs() < 1e-6);
            let mu = s.half.dot(n).clamp(0.0, 1.0);
            hist[((mu * bins as f64) as usize).min(bins - 1)] += 1;
        }
        // density in mu = cos(theta) is 2pi D(mu) mu; integrate each bin numerically
        let mut chi2 = 0.0;
        for (b, &observed) in hist.iter().enumerate() {
            let (lo, hi) = (b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
            let steps = 200;
            let p: f64 = (0..steps)
                .map(|k| {
                    let mu = lo + (k as f64 + 0.5) * (hi - lo) / steps as f64;
                    TAU * ggx_ndf(mu, alpha) * mu * (hi - lo) / steps as f64
                })
                .sum();
            let expected = p * draws as f64;
            if expected > 5.0 {
                chi2 += (observed as f64 - expected).powi(2) / expected;
            }
        }
        // 99.9th percentile of chi-square with 49 degrees of freedom is about 85.4
        assert!(chi2 < 85.4, "chi2 = {chi2}");
    }

    #[test]
    fn specular_gradient_matches_central_difference() {
        let mat = MaterialSample::new(DVec3::new(0.2, 0.5, 0.8), 0.35, 0.6);
        let (no, nl, nh, oh) = (0.7, 0.4, 0.9, 0.6);
        let grad = specular_weight_grad(&mat, no, nl, nh, oh);
        assert_eq!(grad.value, specular_weight(&mat, no, nl, nh, oh));
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> MaterialSample| {
            (specular_weight(&f(h), no, nl, nh, oh) - specular_weight(&f(-h), no, nl, nh, oh)) / (2.0 * h)
        };
        let dr = fd(&|e| MaterialSample { roughness: mat.roughness + e, ..mat });
        let dm = fd(&|e| MaterialSample { metallic: mat.metallic + e, ..mat });
        let dc = fd(&|e| MaterialSample { albedo: mat.albedo + DVec3::X * e, ..mat });
        assert!((dr - grad.d_roughness).abs().max_element() < 1e-8);
        assert!((dm - grad.d_metallic).abs().max_element() < 1e-8);
        assert!((dc.x - grad.d_albedo.x).abs() < 1e-8);
        assert!(dc.y.abs() < 1e-12);
    }
}
