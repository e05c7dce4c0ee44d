//! Sensor-stream conditioning: acceleration from first-order fits, phase
//! alignment of companion signals, Welch power spectral density, and the
//! low-order least-squares fits used by calibration.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use thiserror::Error;

use crate::kinematics::{ArmJoint, JointAccels, JointAngles, JointRates, PerJoint};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("episode too short: {len} samples, need at least {need}")]
    EpisodeTooShort { len: usize, need: usize },
    #[error("signal too short for spectral estimation: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("bad frequency band [{lo}, {hi}] Hz (Nyquist {nyquist} Hz)")]
    BadBand { lo: f64, hi: f64, nyquist: f64 },
    #[error("rank-deficient fit: {reason}")]
    RankDeficient { reason: String },
    #[error("episode csv `{path}` line {line}: {reason}")]
    Csv {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("episode is not uniformly sampled: {reason}")]
    NonUniformRate { reason: String },
    #[error("io error on `{path}`: {reason}")]
    Io { path: String, reason: String },
}

/// Chamber pressures of one differential cylinder, Pa. `p1` is the
/// extension/plunger side, `p2` the retraction/rod side.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PressurePair {
    pub p1: f64,
    pub p2: f64,
}

impl PressurePair {
    pub fn is_valid(&self) -> bool {
        self.p1.is_finite() && self.p2.is_finite() && self.p1 >= 0.0 && self.p2 >= 0.0
    }
}

/// One time-stamped log record: joint states plus chamber pressures for the
/// instrumented joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub q: JointAngles,
    pub qd: JointRates,
    pub pressures: PerJoint<PressurePair>,
}

/// Sample extended with accelerations; position, rate and pressure channels
/// are re-aligned to the acceleration window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedSample {
    pub t: f64,
    pub q: JointAngles,
    pub qd: JointRates,
    pub qdd: JointAccels,
    pub pressures: PerJoint<PressurePair>,
}

/// Episode metadata carried through the CSV round trip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeMeta {
    pub machine_id: String,
    pub note: String,
    /// Ground-truth payload when known (simulator output, bench logs).
    pub payload_kg: Option<f64>,
}

/// One uniformly sampled recording of a motion; the unit of payload estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub samples: Vec<Sample>,
    pub rate_hz: f64,
    pub meta: EpisodeMeta,
}

const CSV_HEADER: &str = "t,theta_boom,theta_stick,theta_bucket,theta_cab,omega_boom,omega_stick,omega_bucket,omega_cab,p1_boom,p2_boom,p1_stick,p2_stick";

impl Episode {
    /// Validates the episode invariants: at least two samples, strictly
    /// increasing time, sample period constant within 1%.
    pub fn validate(&self) -> Result<(), SignalError> {
        if self.samples.len() < 2 {
            return Err(SignalError::EpisodeTooShort {
                len: self.samples.len(),
                need: 2,
            });
        }
        let nominal = 1.0 / self.rate_hz;
        for pair in self.samples.windows(2) {
            let dt = pair[1].t - pair[0].t;
            if dt <= 0.0 {
                return Err(SignalError::NonUniformRate {
                    reason: format!("non-increasing time at t = {}", pair[0].t),
                });
            }
            if (dt - nominal).abs() > 0.01 * nominal {
                return Err(SignalError::NonUniformRate {
                    reason: format!(
                        "sample period {dt:.6} s deviates from nominal {nominal:.6} s by more than 1%"
                    ),
                });
            }
        }
        for s in &self.samples {
            if !s.q.is_finite() || !s.qd.is_finite() {
                return Err(SignalError::NonUniformRate {
                    reason: format!("non-finite joint state at t = {}", s.t),
                });
            }
            if !s.pressures.boom.is_valid() || !s.pressures.stick.is_valid() {
                return Err(SignalError::NonUniformRate {
                    reason: format!("invalid pressures at t = {}", s.t),
                });
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Writes the toolkit-wide episode CSV. Floats use shortest round-trip
    /// formatting, so identical values produce identical bytes.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# machine_id: {}\n", self.meta.machine_id));
        out.push_str(&format!("# rate_hz: {}\n", self.rate_hz));
        if !self.meta.note.is_empty() {
            out.push_str(&format!("# note: {}\n", self.meta.note));
        }
        let with_payload = self.meta.payload_kg.is_some();
        out.push_str(CSV_HEADER);
        if with_payload {
            out.push_str(",payload_kg");
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.t,
                s.q.boom,
                s.q.stick,
                s.q.bucket,
                s.q.cab,
                s.qd.boom,
                s.qd.stick,
                s.qd.bucket,
                s.qd.cab_rate,
                s.pressures.boom.p1,
                s.pressures.boom.p2,
                s.pressures.stick.p1,
                s.pressures.stick.p2,
            ));
            if let Some(payload) = self.meta.payload_kg {
                out.push_str(&format!(",{payload}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), SignalError> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| SignalError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self, SignalError> {
        let text = std::fs::read_to_string(path).map_err(|e| SignalError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn parse_csv(text: &str, origin: &str) -> Result<Self, SignalError> {
        let err = |line: usize, reason: String| SignalError::Csv {
            path: origin.to_string(),
            line,
            reason,
        };
        let mut meta = EpisodeMeta::default();
        let mut rate_hz: Option<f64> = None;
        let mut header_payload = false;
        let mut samples = Vec::new();
        let mut header_seen = false;
        let mut payloads: Vec<f64> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some((k, v)) = comment.split_once(':') {
                    match k.trim() {
                        "machine_id" => meta.machine_id = v.trim().to_string(),
                        "note" => meta.note = v.trim().to_string(),
                        "rate_hz" => {
                            rate_hz = Some(v.trim().parse().map_err(|_| {
                                err(line_no, format!("bad rate_hz `{}`", v.trim()))
                            })?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !header_seen {
                if line == CSV_HEADER {
                    header_payload = false;
                } else if line == format!("{CSV_HEADER},payload_kg") {
                    header_payload = true;
                } else {
                    return Err(err(line_no, "unexpected header row".to_string()));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let expected = if header_payload { 14 } else { 13 };
            if fields.len() != expected {
                return Err(err(
                    line_no,
                    format!("expected {expected} columns, found {}", fields.len()),
                ));
            }
            let mut vals = [0.0_f64; 14];
            for (j, f) in fields.iter().enumerate() {
                vals[j] = f
                    .parse()
                    .map_err(|_| err(line_no, format!("bad number `{f}` in column {}", j + 1)))?;
            }
            samples.push(Sample {
                t: vals[0],
                q: JointAngles::new(vals[1], vals[2], vals[3], vals[4]),
                qd: JointRates {
                    boom: vals[5],
                    stick: vals[6],
                    bucket: vals[7],
                    cab_rate: vals[8],
                },
                pressures: PerJoint {
                    boom: PressurePair {
                        p1: vals[9],
                        p2: vals[10],
                    },
                    stick: PressurePair {
                        p1: vals[11],
                        p2: vals[12],
                    },
                },
            });
            if header_payload {
                payloads.push(vals[13]);
            }
        }
        if !header_seen {
            return Err(err(0, "missing header row".to_string()));
        }
        if header_payload {
            meta.payload_kg = payloads.first().copied();
        }
        let rate_hz = match rate_hz {
            Some(r) => r,
            None => {
                if samples.len() >= 2 {
                    let dt = samples[1].t - samples[0].t;
                    if dt > 0.0 {
                        1.0 / dt
                    } else {
                        return Err(SignalError::NonUniformRate {
                            reason: "cannot infer rate from non-increasing time".to_string(),
                        });
                    }
                } else {
                    return Err(SignalError::EpisodeTooShort {
                        len: samples.len(),
                        need: 2,
                    });
                }
            }
        };
        let episode = Episode {
            samples,
            rate_hz,
            meta,
        };
        episode.validate()?;
        Ok(episode)
    }
}

fn window_slope_and_mean(values: &[f64], dt: f64) -> (f64, f64) {
    // least-squares line through (k*dt, v_k); centred abscissa keeps it stable
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let t_mean = dt * (values.len() - 1) as f64 / 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, v) in values.iter().enumerate() {
        let dtk = k as f64 * dt - t_mean;
        num += dtk * (v - mean);
        den += dtk * dtk;
    }
    (num / den, mean)
}

/// Derives joint accelerations as the slope of a first-order fit over the last
/// `window` velocity samples, re-aligning every other channel to the mean of
/// the same window. Output length is `len - window + 1`.
pub fn derive_accelerations(episode: &Episode, window: usize) -> Result<Vec<AlignedSample>, SignalError> {
    let window = window.max(2);
    let len = episode.samples.len();
    if len < window {
        return Err(SignalError::EpisodeTooShort { len, need: window });
    }
    let dt = 1.0 / episode.rate_hz;
    let mut out = Vec::with_capacity(len - window + 1);
    let mut buf = vec![0.0_f64; window];
    for i in 0..=(len - window) {
        let win = &episode.samples[i..i + window];
        let mut channel = |f: &dyn Fn(&Sample) -> f64| -> (f64, f64) {
            for (k, s) in win.iter().enumerate() {
                buf[k] = f(s);
            }
            window_slope_and_mean(&buf, dt)
        };
        let (acc_boom, vel_boom) = channel(&|s| s.qd.boom);
        let (acc_stick, vel_stick) = channel(&|s| s.qd.stick);
        let (acc_bucket, vel_bucket) = channel(&|s| s.qd.bucket);
        let (_, vel_cab) = channel(&|s| s.qd.cab_rate);
        let (_, q_boom) = channel(&|s| s.q.boom);
        let (_, q_stick) = channel(&|s| s.q.stick);
        let (_, q_bucket) = channel(&|s| s.q.bucket);
        let (_, q_cab) = channel(&|s| s.q.cab);
        let (_, p1_boom) = channel(&|s| s.pressures.boom.p1);
        let (_, p2_boom) = channel(&|s| s.pressures.boom.p2);
        let (_, p1_stick) = channel(&|s| s.pressures.stick.p1);
        let (_, p2_stick) = channel(&|s| s.pressures.stick.p2);
        let (_, t_mean) = channel(&|s| s.t);
        out.push(AlignedSample {
            t: t_mean,
            q: JointAngles::new(q_boom, q_stick, q_bucket, q_cab),
            qd: JointRates {
                boom: vel_boom,
                stick: vel_stick,
                bucket: vel_bucket,
                cab_rate: vel_cab,
            },
            qdd: JointAccels {
                boom: acc_boom,
                stick: acc_stick,
                bucket: acc_bucket,
            },
            pressures: PerJoint {
                boom: PressurePair {
                    p1: p1_boom,
                    p2: p2_boom,
                },
                stick: PressurePair {
                    p1: p1_stick,
                    p2: p2_stick,
                },
            },
        });
    }
    Ok(out)
}

/// One-sided power spectral density estimate.
#[derive(Debug, Clone)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub resolution_hz: f64,
    pub segments: usize,
}

const PSD_SEGMENT: usize = 256;
const PSD_MIN_LEN: usize = 64;

fn hann(n: usize) -> Vec<f64> {
    // periodic Hann, the spectral-estimation variant
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Welch-averaged periodogram: Hann window, segments of 256 samples (or the
/// whole signal when shorter), 50% overlap, per-segment mean detrend,
/// Parseval-consistent one-sided normalization.
pub fn psd(signal: &[f64], rate_hz: f64) -> Result<PsdEstimate, SignalError> {
    if signal.len() < PSD_MIN_LEN {
        return Err(SignalError::TooShort {
            len: signal.len(),
            need: PSD_MIN_LEN,
        });
    }
    let nseg = PSD_SEGMENT.min(signal.len());
    let hop = (nseg / 2).max(1);
    let window = hann(nseg);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let planner_fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(nseg);
    let bins = nseg / 2 + 1;
    let mut acc = vec![0.0_f64; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); nseg];
    let mut start = 0usize;
    while start + nseg <= signal.len() {
        let seg = &signal[start..start + nseg];
        let mean = seg.iter().sum::<f64>() / nseg as f64;
        for (i, (&x, w)) in seg.iter().zip(window.iter()).enumerate() {
            buf[i] = Complex::new((x - mean) * w, 0.0);
        }
        planner_fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let norm = 1.0 / (segments as f64 * rate_hz * window_power);
    let mut power: Vec<f64> = acc.iter().map(|a| a * norm).collect();
    for (k, p) in power.iter_mut().enumerate() {
        if k != 0 && !(nseg % 2 == 0 && k == bins - 1) {
            *p *= 2.0;
        }
    }
    let resolution_hz = rate_hz / nseg as f64;
    let freqs = (0..bins).map(|k| k as f64 * resolution_hz).collect();
    Ok(PsdEstimate {
        freqs,
        power,
        resolution_hz,
        segments,
    })
}

/// Trapezoidal integral of the PSD over `[lo, hi]` Hz, with linear
/// interpolation at the band edges so power is exactly additive over
/// adjoining bands.
pub fn band_power(psd: &PsdEstimate, lo: f64, hi: f64) -> Result<f64, SignalError> {
    let nyquist = *psd.freqs.last().unwrap_or(&0.0);
    if !(lo < hi) || lo < 0.0 || hi > nyquist + 1e-12 {
        return Err(SignalError::BadBand { lo, hi, nyquist });
    }
    let interp = |f: f64| -> f64 {
        let idx = f / psd.resolution_hz;
        let i0 = (idx.floor() as usize).min(psd.power.len() - 1);
        let i1 = (i0 + 1).min(psd.power.len() - 1);
        let frac = idx - i0 as f64;
        psd.power[i0] * (1.0 - frac) + psd.power[i1] * frac
    };
    let mut grid: Vec<f64> = vec![lo];
    for &f in &psd.freqs {
        if f > lo && f < hi {
            grid.push(f);
        }
    }
    grid.push(hi);
    let mut total = 0.0;
    for pair in grid.windows(2) {
        let (f0, f1) = (pair[0], pair[1]);
        total += 0.5 * (interp(f0) + interp(f1)) * (f1 - f0);
    }
    Ok(total)
}

/// Least-squares polynomial fit, numerically stabilized by normalizing the
/// abscissa. Returns coefficients in the original basis, ascending degree.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>, SignalError> {
    if x.len() != y.len() || x.len() <= degree {
        return Err(SignalError::RankDeficient {
            reason: format!("{} points cannot determine degree {}", x.len(), degree),
        });
    }
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let spread = x
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    if degree > 0 && spread < 1e-12 * mean.abs().max(1.0) {
        return Err(SignalError::RankDeficient {
            reason: "abscissa values are degenerate".to_string(),
        });
    }
    let mut design = DMatrix::zeros(n, degree + 1);
    for (i, &xv) in x.iter().enumerate() {
        let u = (xv - mean) / spread;
        let mut p = 1.0;
        for j in 0..=degree {
            design[(i, j)] = p;
            p *= u;
        }
    }
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if min_sv <= 1e-12 * max_sv {
        return Err(SignalError::RankDeficient {
            reason: format!("design matrix condition {:.3e}", max_sv / min_sv),
        });
    }
    let coeffs_norm = svd.solve(&rhs, 0.0).map_err(|e| SignalError::RankDeficient {
        reason: e.to_string(),
    })?;
    // expand c_k ((x-mean)/spread)^k back to the original basis
    let mut out = vec![0.0_f64; degree + 1];
    for k in 0..=degree {
        let ck = coeffs_norm[k] / spread.powi(k as i32);
        // (x - mean)^k via binomial expansion
        let mut binom = 1.0_f64;
        for j in 0..=k {
            let term = ck * binom * (-mean).powi((k - j) as i32);
            out[j] += term;
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    Ok(out)
}

/// Evaluates polynomial coefficients (ascending degree) at `x`.
pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Direction of motion of a joint relative to the lifting-positive convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionDirection {
    Raise,
    Lower,
}

/// Classifies a joint velocity against the deadband; None means static.
pub fn moving_direction(omega: f64, deadband: f64) -> Option<MotionDirection> {
    if omega > deadband {
        Some(MotionDirection::Raise)
    } else if omega < -deadband {
        Some(MotionDirection::Lower)
    } else {
        None
    }
}

pub(crate) fn joint_rate(qd: &JointRates, joint: ArmJoint) -> f64 {
    match joint {
        ArmJoint::Boom => qd.boom,
        ArmJoint::Stick => qd.stick,
    }
}

pub(crate) fn joint_angle(q: &JointAngles, joint: ArmJoint) -> f64 {
    match joint {
        ArmJoint::Boom => q.boom,
        ArmJoint::Stick => q.stick,
    }
}
