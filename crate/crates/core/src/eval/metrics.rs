use super::EvalError;
use crate::geom::{box_corners, boxes_intersect, OrientedBox, Point2, Polygon, Pose2D};
use crate::sim::{AgentTrack, HISTORY_STEPS, HZ};

/// Fixed ego footprint (length, width) in meters.
pub const EGO_DIMS: (f64, f64) = (4.6, 1.8);

fn same_len(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::Length { pred: a, expert: b });
    }
    Ok(())
}

/// Steps covered by a window of `window_s` seconds.
pub fn window_steps(window_s: f64) -> usize {
    (window_s * HZ).round() as usize
}

fn ego_box(p: &Pose2D, dims: (f64, f64)) -> OrientedBox {
    OrientedBox::new(*p, dims.0, dims.1)
}

/// Mean position error over the first `horizon` steps.
pub fn ade(pred: &[Pose2D], expert: &[Pose2D], horizon: usize) -> Result<f64, EvalError> {
    same_len(pred.len(), expert.len())?;
    if horizon == 0 || horizon > pred.len() {
        return Err(EvalError::Horizon { horizon, len: pred.len() });
    }
    let s: f64 = pred[..horizon].iter().zip(expert).map(|(a, b)| (a.x - b.x).hypot(a.y - b.y)).sum();
    Ok(s / horizon as f64)
}

/// True when any corner or the center of the ego box leaves `drivable` within the window.
pub fn offroad(pred: &[Pose2D], drivable: &Polygon, window_s: f64, dims: (f64, f64)) -> Result<bool, EvalError> {
    drivable.validate()?;
    let n = window_steps(window_s);
    if n > pred.len() {
        return Err(EvalError::Horizon { horizon: n, len: pred.len() });
    }
    Ok(pred[..n].iter().any(|p| {
        let corners = box_corners(&ego_box(p, dims));
        !drivable.contains(Point2::new(p.x, p.y)) || corners.iter().any(|c| !drivable.contains(*c))
    }))
}

/// True when the ego box intersects a valid agent box at the same future step within the window.
pub fn collision(pred: &[Pose2D], agents: &[AgentTrack], window_s: f64, dims: (f64, f64)) -> Result<bool, EvalError> {
    let n = window_steps(window_s);
    if n > pred.len() {
        return Err(EvalError::Horizon { horizon: n, len: pred.len() });
    }
    Ok(pred[..n].iter().enumerate().any(|(i, p)| {
        let e = ego_box(p, dims);
        agents.iter().any(|a| a.box_at(HISTORY_STEPS + i).is_some_and(|b| boxes_intersect(&e, &b)))
    }))
}

/// Mean distance between corresponding (FL, FR, RR, RL) corners over all steps.
pub fn corner_dist(pred: &[Pose2D], expert: &[Pose2D], dims: (f64, f64)) -> Result<f64, EvalError> {
    same_len(pred.len(), expert.len())?;
    if pred.is_empty() {
        return Err(EvalError::Horizon { horizon: 0, len: 0 });
    }
    let mut s = 0.0;
    for (a, b) in pred.iter().zip(expert) {
        let (ca, cb) = (box_corners(&ego_box(a, dims)), box_corners(&ego_box(b, dims)));
        s += ca.iter().zip(&cb).map(|(p, q)| p.dist(q)).sum::<f64>() / 4.0;
    }
    Ok(s / pred.len() as f64)
}
