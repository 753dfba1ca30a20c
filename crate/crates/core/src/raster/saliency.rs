use super::{render, render_backward};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::image::Image;
use crate::math::Vec3;

/// Per-primitive importance: the L2 norm of all attribute gradients of the
/// rendering loss, summed over `views`.
pub fn primitive_saliency(
    gs: &GaussianSet,
    views: &[Camera],
    targets: &[Image],
    background: Vec3,
    lambda_ssim: f32,
) -> Result<Vec<f64>> {
    if views.is_empty() || views.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "saliency needs at least one view and one target per view, got {} views and {} targets",
            views.len(),
            targets.len()
        )));
    }
    let mut score = vec![0.0f64; gs.len()];
    for (cam, target) in views.iter().zip(targets) {
        let out = render(gs, cam, background, true)?;
        let (_, grads) = render_backward(gs, cam, &out, target, lambda_ssim)?;
        for (i, s) in score.iter_mut().enumerate() {
            *s += grads.primitive_norm(i);
        }
    }
    Ok(score)
}
