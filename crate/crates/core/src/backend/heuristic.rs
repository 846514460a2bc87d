use super::{BackendError, RawResponse};
use crate::clip::ObservationWindow;
use crate::dataset::PedestrianInstance;
use crate::prompt::{CROSS_LITERAL, NOT_CROSS_LITERAL};

/// Signed horizontal centroid displacement from the first to the last window
/// frame, positive when moving toward the image's vertical centerline.
/// A pedestrian starting exactly on the centerline counts any movement.
pub(crate) fn displacement_toward_center(first_cx: f64, last_cx: f64, mid: f64) -> f64 {
    let moved = last_cx - first_cx;
    if first_cx == mid {
        moved.abs()
    } else {
        moved * (mid - first_cx).signum()
    }
}

/// Offline smoke-test predictor: `cross` iff the box centroid moved at least
/// `threshold_px` toward the centerline across the window.
pub fn heuristic_predict(
    instance: &PedestrianInstance,
    window: &ObservationWindow,
    threshold_px: f64,
) -> Result<RawResponse, BackendError> {
    let center_x = |idx: u32| {
        instance
            .frame(idx)
            .and_then(|f| f.bbox)
            .map(|b| b.center_x())
            .ok_or(BackendError::MissingAnnotation(idx))
    };
    let first = center_x(window.start_frame)?;
    let last = center_x(window.end_frame)?;
    let dims = instance
        .frame_dims
        .ok_or_else(|| BackendError::MissingFrameDims(instance.instance_id.clone()))?;
    let mid = dims.width as f64 / 2.0;
    let d = displacement_toward_center(first, last, mid);
    let text = if d >= threshold_px { CROSS_LITERAL } else { NOT_CROSS_LITERAL };
    Ok(RawResponse::ok(text))
}
