//! Distillation residuals computed from noise predictions.

use crate::image::RgbImage;

use super::DistillError;

fn check(images: &[&RgbImage]) -> Result<(), DistillError> {
    let first = images[0];
    match images.iter().find(|i| !i.same_shape(first)) {
        Some(other) => Err(DistillError::Shape {
            expected: (first.width, first.height),
            actual: (other.width, other.height),
        }),
        None => Ok(()),
    }
}

/// `eta1 * eps_pos + (eta2 - eta1) * eps_null - eta2 * eps_neg`.
pub fn csd_residual(
    eps_pos: &RgbImage,
    eps_null: &RgbImage,
    eps_neg: &RgbImage,
    eta1: f64,
    eta2: f64,
) -> Result<RgbImage, DistillError> {
    check(&[eps_pos, eps_null, eps_neg])?;
    let pixels = eps_pos
        .pixels
        .iter()
        .zip(&eps_null.pixels)
        .zip(&eps_neg.pixels)
        .map(|((p, u), n)| *p * eta1 + *u * (eta2 - eta1) - *n * eta2)
        .collect();
    Ok(RgbImage { width: eps_pos.width, height: eps_pos.height, pixels })
}

/// `w * (eps_pos - eps)`.
pub fn sds_residual(eps_pos: &RgbImage, eps: &RgbImage, weight: f64) -> Result<RgbImage, DistillError> {
    check(&[eps_pos, eps])?;
    let pixels = eps_pos.pixels.iter().zip(&eps.pixels).map(|(p, e)| (*p - *e) * weight).collect();
    Ok(RgbImage { width: eps_pos.width, height: eps_pos.height, pixels })
}
