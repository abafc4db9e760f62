//! Adaptive Dormand-Prince 5(4) integrator.
//!
//! Embedded pair with PI step-size control. Output times are hit exactly by
//! clamping the step, which keeps the recorded states on the accepted
//! solution rather than an interpolant.

use nalgebra::DVector;

use crate::error::{CoreError, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

// b - b*: difference between the 5th and embedded 4th order weights.
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; estimated from the RHS when absent.
    pub h0: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-8,
            h0: None,
            max_steps: 100_000_000,
        }
    }
}

fn error_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, opts: &OdeOptions) -> f64 {
    let n = err.len() as f64;
    let mut acc = 0.0;
    for i in 0..err.len() {
        let scale = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / scale;
        acc += r * r;
    }
    (acc / n).sqrt()
}

/// Integrate `dy/dt = f(t, y)` from `t0` through every time in
/// `record_times` (which must be non-decreasing and >= t0), returning the
/// state at each of those times.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: DVector<f64>,
    record_times: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<(f64, DVector<f64>)>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut out = Vec::with_capacity(record_times.len());
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);

    let t_end = record_times.last().copied().unwrap_or(t0);
    let mut record_iter = record_times.iter().peekable();
    // Record anything at or before t0 immediately.
    while let Some(&&rt) = record_iter.peek() {
        if rt <= t0 {
            out.push((rt, y.clone()));
            record_iter.next();
        } else {
            break;
        }
    }
    if record_iter.peek().is_none() {
        return Ok(out);
    }

    let mut h = opts.h0.unwrap_or_else(|| {
        let scale = 1.0 + y.norm();
        let rate = k1.norm();
        (1e-6 * scale / rate.max(1e-12)).min(1e-2).max(1e-12)
    });

    // PI controller memory.
    let mut err_prev: f64 = 1.0;
    let mut steps = 0usize;
    let mut ks: Vec<DVector<f64>> = vec![DVector::zeros(y.len()); 7];

    while t < t_end {
        if steps >= opts.max_steps {
            return Err(CoreError::Diverged {
                t,
                reason: "maximum step count exceeded".into(),
            });
        }
        steps += 1;

        let next_record = **record_iter.peek().expect("record time pending");
        let mut h_try = h.min(t_end - t);
        let mut hit_record = false;
        if t + h_try >= next_record - 1e-14 * next_record.abs().max(1.0) {
            h_try = next_record - t;
            hit_record = true;
        }
        if h_try <= f64::EPSILON * t.abs().max(1.0) {
            return Err(CoreError::StepSizeUnderflow { t });
        }

        ks[0] = k1.clone();
        for stage in 1..7 {
            let mut yi = y.clone();
            for j in 0..stage {
                if A[stage][j] != 0.0 {
                    yi += h_try * A[stage][j] * &ks[j];
                }
            }
            ks[stage] = f(t + C[stage] * h_try, &yi);
        }
        // 5th-order solution is the stage-7 input state (FSAL), i.e. A[6].
        let mut y_new = y.clone();
        for j in 0..6 {
            if A[6][j] != 0.0 {
                y_new += h_try * A[6][j] * &ks[j];
            }
        }
        let mut err_vec = DVector::zeros(y.len());
        for j in 0..7 {
            if E[j] != 0.0 {
                err_vec += h_try * E[j] * &ks[j];
            }
        }
        let err = error_norm(&err_vec, &y, &y_new, opts);

        if err <= 1.0 {
            // accepted
            t += h_try;
            k1 = ks[6].clone(); // FSAL
            y = y_new;
            if hit_record {
                out.push((next_record, y.clone()));
                record_iter.next();
                while let Some(&&rt) = record_iter.peek() {
                    if (rt - t).abs() <= 1e-14 * t.abs().max(1.0) {
                        out.push((rt, y.clone()));
                        record_iter.next();
                    } else {
                        break;
                    }
                }
                if record_iter.peek().is_none() {
                    break;
                }
            }
            // PI step control (Gustafsson).
            let e = err.max(1e-10);
            let factor = 0.9 * e.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h = h_try * factor.clamp(0.2, 5.0);
            err_prev = e;
        } else {
            if !err.is_finite() {
                return Err(CoreError::Diverged {
                    t,
                    reason: "non-finite error estimate".into(),
                });
            }
            h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let y0 = DVector::from_vec(vec![1.0, 2.0]);
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        let sol = integrate(|_, y| -y.clone(), 0.0, y0, &times, &OdeOptions::default()).unwrap();
        assert_eq!(sol.len(), times.len());
        for (t, y) in &sol {
            assert!((y[0] - (-t).exp()).abs() < 1e-7, "t = {t}");
            assert!((y[1] - 2.0 * (-t).exp()).abs() < 1e-7);
        }
    }

    #[test]
    fn logistic_growth_long_horizon() {
        // dy/dt = y (1 - y), y(0) = 0.5 -> y(t) = 1 / (1 + exp(-t)).
        let y0 = DVector::from_vec(vec![0.5]);
        let times = vec![1.0, 10.0, 50.0];
        let sol = integrate(
            |_, y: &DVector<f64>| DVector::from_vec(vec![y[0] * (1.0 - y[0])]),
            0.0,
            y0,
            &times,
            &OdeOptions::default(),
        )
        .unwrap();
        for (t, y) in &sol {
            let exact = 1.0 / (1.0 + (-t).exp());
            assert!((y[0] - exact).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn records_t0_without_stepping() {
        let y0 = DVector::from_vec(vec![3.0]);
        let sol = integrate(
            |_, _: &DVector<f64>| DVector::from_vec(vec![1.0]),
            0.0,
            y0,
            &[0.0],
            &OdeOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.len(), 1);
        assert_eq!(sol[0].1[0], 3.0);
    }
}
