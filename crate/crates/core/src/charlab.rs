//! Characterization lab: measurement protocols and parameter extraction.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::backend::{DeviceBackend, ResetReference};
use crate::device::{logit, sigmoid, PULSE_INTERVAL, PULSE_WIDTH, READ_DURATION};
use crate::error::{Error, Result};

/// Lower and upper switching probabilities bounding the programming window.
pub const WINDOW_LOW: f64 = 0.0001;
pub const WINDOW_HIGH: f64 = 0.999;
/// Reset–set cycles per current point.
pub const DEFAULT_ITERATIONS: u32 = 100;

pub const SWITCH_CURVE_HEADER: &str = "i_write_A,switches,trials";
pub const FIELD_SWEEP_HEADER: &str = "h_x_A_per_m,r_ahe_ohm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub i_write: f64,
    pub switches: u64,
    pub trials: u64,
}

impl CurvePoint {
    pub fn fraction(&self) -> f64 {
        self.switches as f64 / self.trials as f64
    }
}

/// Switch counts per write current, currents strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchCurve {
    points: Vec<CurvePoint>,
}

impl SwitchCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        for p in &points {
            if !p.i_write.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite write current {}", p.i_write)));
            }
            if p.trials == 0 || p.switches > p.trials {
                return Err(Error::InvalidInput(format!(
                    "point at {} A has {} switches in {} trials",
                    p.i_write, p.switches, p.trials
                )));
            }
        }
        if points.windows(2).any(|w| w[1].i_write <= w[0].i_write) {
            return Err(Error::InvalidInput("write currents must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWITCH_CURVE_HEADER.split(','))?;
        for p in &self.points {
            w.write_record(&[format!("{:e}", p.i_write), p.switches.to_string(), p.trials.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_numeric_csv(input, SWITCH_CURVE_HEADER)?;
        let points = rows
            .iter()
            .map(|r| {
                let count = |v: f64, what: &str| {
                    if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
                        Ok(v as u64)
                    } else {
                        Err(Error::Format(format!("{what} must be a non-negative integer, got {v}")))
                    }
                };
                Ok(CurvePoint {
                    i_write: r[0],
                    switches: count(r[1], "switches")?,
                    trials: count(r[2], "trials")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }
}

fn read_numeric_csv<R: Read>(input: R, header: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let expected: Vec<&str> = header.split(',').collect();
    let found: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if found != expected {
        return Err(Error::Format(format!("expected header `{header}`, found `{}`", found.join(","))));
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Format(format!("record {}: `{f}` is not a number", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Runs `n_iter` reset–set cycles at each current against `backend`.
///
/// Each cycle is reset, read, write, read: exactly four backend calls. The
/// first post-reset read fixes the RESET resistance; a later post-reset read
/// that disagrees is reported as a protocol fault.
pub fn run_reset_set_protocol<B: DeviceBackend + ?Sized>(
    backend: &mut B,
    currents: &[f64],
    n_iter: u32,
) -> Result<SwitchCurve> {
    run_reset_set_protocol_with(backend, currents, n_iter, &mut ResetReference::learn())
}

pub fn run_reset_set_protocol_with<B: DeviceBackend + ?Sized>(
    backend: &mut B,
    currents: &[f64],
    n_iter: u32,
    reference: &mut ResetReference,
) -> Result<SwitchCurve> {
    if n_iter == 0 {
        return Err(Error::param("n_iter", "must be at least 1"));
    }
    let mut points = Vec::with_capacity(currents.len());
    for &i in currents {
        let mut switches = 0;
        for _ in 0..n_iter {
            let reads = backend.cycle(i)?;
            switches += reference.classify(reads)? as u64;
        }
        points.push(CurvePoint {
            i_write: i,
            switches,
            trials: n_iter as u64,
        });
    }
    SwitchCurve::new(points)
}

/// Wall-clock time the protocol would take on a real bench (s).
pub fn estimated_bench_seconds(points: usize, n_iter: u32) -> f64 {
    let per_cycle = 2.0 * (PULSE_WIDTH + PULSE_INTERVAL) + 2.0 * READ_DURATION;
    points as f64 * n_iter as f64 * per_cycle
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub i_bias: f64,
    pub i_delta: f64,
    pub neg_log_likelihood: f64,
    pub converged: bool,
    pub iterations: u32,
}

impl SigmoidFit {
    pub fn probability(&self, i_write: f64) -> f64 {
        sigmoid((i_write - self.i_bias) / self.i_delta)
    }

    pub fn programming_window(&self) -> f64 {
        programming_window(self.i_delta)
    }
}

/// Current range between 0.01 % and 99.9 % switching probability.
pub fn programming_window(i_delta: f64) -> f64 {
    i_delta * (logit(WINDOW_HIGH) - logit(WINDOW_LOW))
}

const MAX_ITERATIONS: u32 = 500;
const REL_TOLERANCE: f64 = 1e-8;

/// Binomial negative log-likelihood of `points` under `logit p = a + b x`,
/// with `x = (i - center) / scale`.
fn binomial_nll(points: &[CurvePoint], center: f64, scale: f64, a: f64, b: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let eta = a + b * (p.i_write - center) / scale;
            // log(1 + e^eta) without overflow
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            let k = p.switches as f64;
            let n = p.trials as f64;
            n * softplus - k * eta
        })
        .sum()
}

fn initial_guess(points: &[CurvePoint]) -> (f64, f64) {
    let bias = points
        .iter()
        .min_by(|x, y| {
            (x.fraction() - 0.5)
                .abs()
                .partial_cmp(&(y.fraction() - 0.5).abs())
                .unwrap()
        })
        .map(|p| p.i_write)
        .unwrap();
    let crossing = |level: f64| {
        points.windows(2).find_map(|w| {
            let (f0, f1) = (w[0].fraction(), w[1].fraction());
            (f0 < level && f1 >= level).then(|| w[0].i_write + (level - f0) / (f1 - f0) * (w[1].i_write - w[0].i_write))
        })
    };
    let span = points.last().unwrap().i_write - points[0].i_write;
    let delta = match (crossing(0.25), crossing(0.75)) {
        (Some(lo), Some(hi)) if hi > lo => (hi - lo) / (2.0 * 3f64.ln()),
        _ => span / 20.0,
    };
    (bias, delta.max(span * 1e-6))
}

/// Maximum-likelihood sigmoid fit to binomial switch counts.
///
/// Newton's method on the (convex) logistic-regression parametrization with
/// step halving. Terminates when both parameters change by at most 1e-8
/// relative, or after 500 iterations with `converged = false`.
pub fn fit_sigmoid(curve: &SwitchCurve) -> Result<SigmoidFit> {
    let points = curve.points();
    if points.len() < 3 {
        return Err(Error::NotIdentifiable(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().all(|p| p.switches == 0) || points.iter().all(|p| p.switches == p.trials) {
        return Err(Error::NotIdentifiable("curve is saturated at a single level".into()));
    }
    if !points.iter().any(|p| p.fraction() < 0.5) || !points.iter().any(|p| p.fraction() > 0.5) {
        return Err(Error::NotIdentifiable(
            "curve must have points on both sides of 50% switching".into(),
        ));
    }

    let n = points.len() as f64;
    let center = points.iter().map(|p| p.i_write).sum::<f64>() / n;
    let scale = (points.iter().map(|p| (p.i_write - center).powi(2)).sum::<f64>() / n).sqrt();

    let to_natural = |a: f64, b: f64| (center - a * scale / b, scale / b);
    let (bias0, delta0) = initial_guess(points);
    let mut b = scale / delta0;
    let mut a = -b * (bias0 - center) / scale;
    let mut nll = binomial_nll(points, center, scale, a, b);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in points {
            let x = (p.i_write - center) / scale;
            let q = sigmoid(a + b * x);
            let nt = p.trials as f64;
            let r = p.switches as f64 - nt * q;
            let w = nt * q * (1.0 - q);
            g0 += r;
            g1 += r * x;
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det.is_finite() && det > 1e-300) {
            break;
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;

        let mut step = 1.0;
        let (mut na, mut nb, mut nnll);
        loop {
            na = a + step * da;
            nb = b + step * db;
            nnll = binomial_nll(points, center, scale, na, nb);
            if nb > 0.0 && nnll <= nll + 1e-12 * nll.abs().max(1.0) {
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        if step < 1e-12 {
            break;
        }
        let (bias_old, delta_old) = to_natural(a, b);
        let (bias_new, delta_new) = to_natural(na, nb);
        a = na;
        b = nb;
        nll = nnll;
        let rel_bias = (bias_new - bias_old).abs() / bias_new.abs().max(delta_new);
        let rel_delta = (delta_new - delta_old).abs() / delta_new;
        if rel_bias <= REL_TOLERANCE && rel_delta <= REL_TOLERANCE {
            converged = true;
            break;
        }
    }

    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::NotIdentifiable("switching probability does not increase with current".into()));
    }
    let (i_bias, i_delta) = to_natural(a, b);
    Ok(SigmoidFit {
        i_bias,
        i_delta,
        neg_log_likelihood: nll,
        converged,
        iterations,
    })
}

/// Least-squares sigmoid fit to bare `(current, probability)` pairs, for
/// curves whose trial counts are unknown. Levenberg–Marquardt.
pub fn fit_sigmoid_least_squares(points: &[(f64, f64)]) -> Result<SigmoidFit> {
    if points.len() < 3 {
        return Err(Error::NotIdentifiable(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(i, p)| !i.is_finite() || !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidInput("probabilities must lie in [0, 1]".into()));
    }
    if !points.iter().any(|&(_, p)| p < 0.5) || !points.iter().any(|&(_, p)| p > 0.5) {
        return Err(Error::NotIdentifiable(
            "curve must have points on both sides of 50% switching".into(),
        ));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let as_counts: Vec<CurvePoint> = sorted
        .iter()
        .map(|&(i, p)| CurvePoint {
            i_write: i,
            switches: (p * 1e6).round() as u64,
            trials: 1_000_000,
        })
        .collect();
    let (mut bias, mut delta) = initial_guess(&as_counts);
    let sse = |bias: f64, delta: f64| -> f64 {
        sorted
            .iter()
            .map(|&(i, p)| (sigmoid((i - bias) / delta) - p).powi(2))
            .sum()
    };
    let mut cost = sse(bias, delta);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        // Jacobian of the residuals in (bias, ln delta).
        let (mut jtj00, mut jtj01, mut jtj11, mut jtr0, mut jtr1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(i, p) in &sorted {
            let u = (i - bias) / delta;
            let q = sigmoid(u);
            let dq = q * (1.0 - q);
            let j0 = -dq / delta;
            let j1 = -dq * u;
            let r = q - p;
            jtj00 += j0 * j0;
            jtj01 += j0 * j1;
            jtj11 += j1 * j1;
            jtr0 += j0 * r;
            jtr1 += j1 * r;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let a00 = jtj00 * (1.0 + lambda);
            let a11 = jtj11 * (1.0 + lambda);
            let det = a00 * a11 - jtj01 * jtj01;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let d0 = -(a11 * jtr0 - jtj01 * jtr1) / det;
            let d1 = -(a00 * jtr1 - jtj01 * jtr0) / det;
            let nb = bias + d0;
            let nd = delta * d1.exp();
            let nc = sse(nb, nd);
            if nc <= cost {
                let rel_b = (nb - bias).abs() / nb.abs().max(nd);
                let rel_d = (nd - delta).abs() / nd;
                bias = nb;
                delta = nd;
                cost = nc;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if rel_b <= REL_TOLERANCE && rel_d <= REL_TOLERANCE {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            converged |= !accepted && cost.is_finite();
            break;
        }
    }
    Ok(SigmoidFit {
        i_bias: bias,
        i_delta: delta,
        neg_log_likelihood: f64::NAN,
        converged,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares of `value` on `width`.
pub fn scaling_regression(samples: &[(f64, f64)]) -> Result<LinearFit> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 samples, got {}", samples.len())));
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let syy: f64 = samples.iter().map(|s| (s.1 - my).powi(2)).sum();
    if sxx <= f64::EPSILON * samples.iter().map(|s| s.0 * s.0).sum::<f64>() {
        return Err(Error::Degenerate("all widths are identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = samples
        .iter()
        .map(|s| (s.1 - (slope * s.0 + intercept)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Hall resistance under in-plane field, as `(h_x, r_ahe)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSweep {
    points: Vec<(f64, f64)>,
}

impl FieldSweep {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.iter().any(|&(h, r)| !(h.is_finite() && r.is_finite())) {
            return Err(Error::InvalidInput("field sweep values must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Noise-free sweep following the small-tilt Hall law.
    pub fn synthetic(h_an: f64, r0: f64, fields: &[f64]) -> Result<Self> {
        Self::new(fields.iter().map(|&h| (h, r0 * (1.0 - 0.5 * (h / h_an).powi(2)))).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(FIELD_SWEEP_HEADER.split(','))?;
        for &(h, r) in &self.points {
            w.write_record(&[format!("{h:e}"), format!("{r:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_numeric_csv(input, FIELD_SWEEP_HEADER)?;
        Self::new(rows.into_iter().map(|r| (r[0], r[1])).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyFit {
    pub h_an: f64,
    pub r0: f64,
    pub points_used: usize,
}

/// Default low-tilt validity floor on `R / R0`.
pub const DEFAULT_TILT_FLOOR: f64 = 0.8;

fn quadratic_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    // r = a + b·h²
    let fit = scaling_regression(&points.iter().map(|&(h, r)| (h * h, r)).collect::<Vec<_>>())
        .map_err(|_| Error::Degenerate("sweep has no field-dependent points".into()))?;
    Ok((fit.intercept, fit.slope))
}

/// Fits `r(h) = r0 · (1 − ½ (h / h_an)²)` by least squares, restricted to
/// points with `r / r0 ≥ floor`.
pub fn fit_anisotropy(sweep: &FieldSweep, floor: f64) -> Result<AnisotropyFit> {
    let all = sweep.points();
    if all.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {}", all.len())));
    }
    let mut used: Vec<(f64, f64)> = all.to_vec();
    let mut coef = quadratic_fit(&used)?;
    for _ in 0..20 {
        let (a, _) = coef;
        if a == 0.0 {
            return Err(Error::Degenerate("zero-field resistance fitted as zero".into()));
        }
        let next: Vec<(f64, f64)> = all.iter().copied().filter(|&(_, r)| r / a >= floor).collect();
        if next.len() < 3 {
            return Err(Error::Degenerate(format!(
                "only {} points above R/R0 = {floor}",
                next.len()
            )));
        }
        let same = next == used;
        used = next;
        if same {
            break;
        }
        coef = quadratic_fit(&used)?;
    }
    let (a, b) = coef;
    if !(b / a < 0.0) {
        return Err(Error::InvalidInput(
            "Hall resistance magnitude does not decrease with in-plane field".into(),
        ));
    }
    Ok(AnisotropyFit {
        h_an: (-a / (2.0 * b)).sqrt(),
        r0: a,
        points_used: used.len(),
    })
}
