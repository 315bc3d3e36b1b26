//! Adaptive Dormand-Prince 5(4) integration of `y' = f(t, y)` on dense vectors.

use nalgebra::DVector;

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; zero picks `|t1 - t0| / 16`.
    pub initial_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-11, atol: 1e-13, initial_step: 0.0, max_steps: 20_000 }
    }
}

#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug)]
pub enum OdeFailure<E> {
    Field { time: f64, error: E },
    StepUnderflow(f64),
    MaxSteps(f64),
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights are the last row of A; these are the embedded fourth-order ones
const E4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Integrates from `t0` to `t1` (either direction) and returns `y(t1)`.
pub fn dopri5<F, E>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &DVector<f64>,
    opts: OdeOptions,
) -> Result<(DVector<f64>, OdeStats), OdeFailure<E>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
{
    let mut stats = OdeStats::default();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((y0.clone(), stats));
    }
    let dir = span.signum();
    let mut h = if opts.initial_step > 0.0 { opts.initial_step } else { span.abs() / 16.0 };
    let mut t = t0;
    let mut y = y0.clone();
    let mut eval = |t: f64, y: &DVector<f64>, stats: &mut OdeStats| {
        stats.evaluations += 1;
        f(t, y).map_err(|error| OdeFailure::Field { time: t, error })
    };
    let mut k0 = eval(t, &y, &mut stats)?;
    while (t1 - t) * dir > 0.0 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeFailure::MaxSteps(t));
        }
        let last = (t + dir * h - t1) * dir >= 0.0;
        let step = if last { t1 - t } else { dir * h };
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        k.push(k0.clone());
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    ys.axpy(step * A[s][j], kj, 1.0);
                }
            }
            k.push(eval(t + C[s] * step, &ys, &mut stats)?);
        }
        let mut y5 = y.clone();
        let mut err = DVector::zeros(y.len());
        for j in 0..7 {
            let b5 = if j < 6 { A[6][j] } else { 0.0 };
            if b5 != 0.0 {
                y5.axpy(step * b5, &k[j], 1.0);
            }
            let d = b5 - E4[j];
            if d != 0.0 {
                err.axpy(step * d, &k[j], 1.0);
            }
        }
        let n = y.len().max(1) as f64;
        let norm = (err
            .iter()
            .zip(y.iter().zip(y5.iter()))
            .map(|(e, (a, b))| {
                let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / n)
            .sqrt();
        if norm <= 1.0 {
            t = if last { t1 } else { t + step };
            y = y5;
            k0 = k.pop().expect("seven stages");
            stats.accepted += 1;
        } else {
            stats.rejected += 1;
        }
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        h = step.abs() * factor;
        if h < 1e-14 * (1.0 + t.abs()) {
            return Err(OdeFailure::StepUnderflow(t));
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let f = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>, ()> { Ok(DVector::from_vec(vec![y[1], -y[0]])) };
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let (y, stats) = dopri5(f, 0.0, 2.0 * std::f64::consts::PI, &y0, OdeOptions::default()).unwrap();
        assert!((y - y0).amax() < 1e-9);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let f = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>, ()> { Ok(-y * t.cos()) };
        let y0 = DVector::from_vec(vec![0.3, -1.2]);
        let (y1, _) = dopri5(f, 0.0, 1.5, &y0, OdeOptions::default()).unwrap();
        let (back, _) = dopri5(f, 1.5, 0.0, &y1, OdeOptions::default()).unwrap();
        assert!((back - y0).amax() < 1e-10);
        // exact: y = y0 exp(-sin t)
        assert!((y1[0] - 0.3 * (-(1.5f64).sin()).exp()).abs() < 1e-10);
    }
}
