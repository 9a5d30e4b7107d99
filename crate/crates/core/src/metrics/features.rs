use std::f64::consts::{PI, TAU};

use crate::ndcore::Matrix;

pub const FEATURE_DIM: usize = 16;

fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Fixed-width descriptor of a trajectory block (`L × 4`: x, y, vx, vy).
///
/// Speed and heading come from the velocity columns, extent from the
/// positions. Slots: speed mean/std, heading-change mean/std/mean-abs, net
/// displacement, path length, |v_last − v_first|, x variance, y variance,
/// mean |Δspeed|, max speed, min speed, straightness, mean position step,
/// and one zero pad.
pub fn features(frames: &Matrix) -> Vec<f64> {
    let n = frames.rows();
    let pos = |k: usize| (frames.get(k, 0), frames.get(k, 1));
    let vel = |k: usize| (frames.get(k, 2), frames.get(k, 3));
    let speeds: Vec<f64> = (0..n).map(|k| vel(k).0.hypot(vel(k).1)).collect();
    let turns: Vec<f64> = (1..n)
        .map(|k| {
            if speeds[k - 1] > 1e-9 && speeds[k] > 1e-9 {
                let (a, b) = (vel(k - 1), vel(k));
                wrap_angle(b.1.atan2(b.0) - a.1.atan2(a.0))
            } else {
                0.0
            }
        })
        .collect();
    let (speed_mean, speed_std) = mean_std(&speeds);
    let (turn_mean, turn_std) = mean_std(&turns);
    let turn_abs = mean_std(&turns.iter().map(|t| t.abs()).collect::<Vec<_>>()).0;
    let (first, last) = (pos(0), pos(n - 1));
    let net = (last.0 - first.0).hypot(last.1 - first.1);
    let path: f64 = speeds.iter().skip(1).sum();
    let (v0, v1) = (vel(0), vel(n - 1));
    let vel_delta = (v1.0 - v0.0).hypot(v1.1 - v0.1);
    let xs: Vec<f64> = (0..n).map(|k| pos(k).0).collect();
    let ys: Vec<f64> = (0..n).map(|k| pos(k).1).collect();
    let var_x = mean_std(&xs).1.powi(2);
    let var_y = mean_std(&ys).1.powi(2);
    let accel = mean_std(&speeds.windows(2).map(|w| (w[1] - w[0]).abs()).collect::<Vec<_>>()).0;
    let max_speed = speeds.iter().copied().fold(0.0, f64::max);
    let min_speed = speeds.iter().copied().fold(f64::INFINITY, f64::min);
    let straightness = if path > 1e-12 { (net / path).min(1.0) } else { 0.0 };
    let step = mean_std(
        &(1..n)
            .map(|k| (pos(k).0 - pos(k - 1).0).hypot(pos(k).1 - pos(k - 1).1))
            .collect::<Vec<_>>(),
    )
    .0;
    vec![
        speed_mean,
        speed_std,
        turn_mean,
        turn_std,
        turn_abs,
        net,
        path,
        vel_delta,
        var_x,
        var_y,
        accel,
        max_speed,
        min_speed,
        straightness,
        step,
        0.0,
    ]
}
