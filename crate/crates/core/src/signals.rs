//! Joint logs, zero-phase Butterworth filtering and numerical differentiation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default sampling rate of the dVRK logs, Hz.
pub const DEFAULT_RATE: f64 = 200.0;
pub const DEFAULT_ORDER: usize = 6;
pub const DEFAULT_RAMP: f64 = 5.0;
pub const DEFAULT_TAIL: f64 = 5.0;

/// Uniformly sampled motor positions, velocities and torques.
///
/// Matrices hold one row per sample and one column per motor.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLog {
    pub t: Vec<f64>,
    pub q: DMatrix<f64>,
    pub dq: DMatrix<f64>,
    pub tau: DMatrix<f64>,
}

impl JointLog {
    pub fn new(t: Vec<f64>, q: DMatrix<f64>, dq: DMatrix<f64>, tau: DMatrix<f64>) -> Result<Self> {
        let n = t.len();
        for (what, m) in [("q rows", &q), ("dq rows", &dq), ("tau rows", &tau)] {
            if m.nrows() != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        for (what, m) in [("dq columns", &dq), ("tau columns", &tau)] {
            if m.ncols() != q.ncols() {
                return Err(Error::Dimension {
                    what,
                    expected: q.ncols(),
                    got: m.ncols(),
                });
            }
        }
        if n < 2 {
            return Err(Error::Signal("log needs at least two samples".into()));
        }
        if !t.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Signal("timestamps must be strictly increasing".into()));
        }
        let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
        let jitter = t
            .iter()
            .enumerate()
            .map(|(i, &ti)| (ti - t[0] - i as f64 * dt).abs())
            .fold(0.0, f64::max);
        if jitter > 1e-6 * dt {
            return Err(Error::Signal(format!("non-uniform sampling (jitter {jitter:.3e} s)")));
        }
        if !q.iter().chain(dq.iter()).chain(tau.iter()).chain(t.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("joint log"));
        }
        Ok(JointLog { t, q, dq, tau })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn motor_count(&self) -> usize {
        self.q.ncols()
    }

    pub fn rate(&self) -> f64 {
        (self.len() - 1) as f64 / (self.t[self.len() - 1] - self.t[0])
    }

    pub fn to_csv_string(&self) -> String {
        let n = self.motor_count();
        let mut out = String::from("t");
        for prefix in ["q", "dq", "tau"] {
            for k in 1..=n {
                out.push_str(&format!(",{prefix}{k}"));
            }
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{}", self.t[i]));
            for m in [&self.q, &self.dq, &self.tau] {
                for k in 0..n {
                    out.push_str(&format!(",{}", m[(i, k)]));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let cols = header.len();
        if cols < 4 || (cols - 1) % 3 != 0 || &header[0] != "t" {
            return Err(Error::Parse("log header must be t,q1..qn,dq1..dqn,tau1..taun".into()));
        }
        let n = (cols - 1) / 3;
        for (b, prefix) in ["q", "dq", "tau"].iter().enumerate() {
            for k in 0..n {
                if header[1 + b * n + k] != format!("{prefix}{}", k + 1) {
                    return Err(Error::Parse(format!("unexpected column `{}`", &header[1 + b * n + k])));
                }
            }
        }
        let mut t = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != cols {
                return Err(Error::Parse(format!("row {} has {} fields, expected {cols}", line + 2, rec.len())));
            }
            let mut vals = rec.iter().map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: bad number `{f}`", line + 2)))
            });
            t.push(vals.next().expect("non-empty record")?);
            for v in vals {
                data.push(v?);
            }
        }
        let rows = t.len();
        let block = |b: usize| DMatrix::from_fn(rows, n, |i, k| data[i * 3 * n + b * n + k]);
        JointLog::new(t, block(0), block(1), block(2))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> JointLog {
        let rows = end - start;
        JointLog {
            t: self.t[start..end].to_vec(),
            q: self.q.rows(start, rows).into_owned(),
            dq: self.dq.rows(start, rows).into_owned(),
            tau: self.tau.rows(start, rows).into_owned(),
        }
    }
}

/// Second-order sections `[b0, b1, b2, a1, a2]` with `a0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Butterworth {
    pub sections: Vec<[f64; 5]>,
    pub order: usize,
}

impl Butterworth {
    /// Low-pass design by the bilinear transform with frequency prewarping.
    pub fn lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Signal("filter order must be at least 1".into()));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Signal(format!("sampling rate {fs} Hz is invalid")));
        }
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::Signal(format!(
                "cutoff {cutoff} Hz must lie strictly between 0 and Nyquist ({} Hz)",
                fs / 2.0
            )));
        }
        let k = 2.0 * fs;
        let wc = k * (PI * cutoff / fs).tan();
        let mut sections = Vec::new();
        for i in 0..order / 2 {
            let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let re = -wc * theta.sin();
            let a0 = k * k - 2.0 * re * k + wc * wc;
            let a1 = 2.0 * (wc * wc - k * k);
            let a2 = k * k + 2.0 * re * k + wc * wc;
            let (a1, a2) = (a1 / a0, a2 / a0);
            // numerator scaled to the rounded denominator keeps unit DC gain
            let g = (1.0 + a1 + a2) / 4.0;
            sections.push([g, 2.0 * g, g, a1, a2]);
        }
        if order % 2 == 1 {
            let a0 = k + wc;
            let a1 = (wc - k) / a0;
            let g = (1.0 + a1) / 2.0;
            sections.push([g, g, 0.0, a1, 0.0]);
        }
        Ok(Butterworth { sections, order })
    }

    /// `|H(e^{jω})|` at frequency `f` for sampling rate `fs`.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        self.sections.iter().fold(1.0, |acc, s| {
            let num = ((s[0] + s[1] * z1.0 + s[2] * z2.0), (s[1] * z1.1 + s[2] * z2.1));
            let den = ((1.0 + s[3] * z1.0 + s[4] * z2.0), (s[3] * z1.1 + s[4] * z2.1));
            acc * (num.0.hypot(num.1) / den.0.hypot(den.1))
        })
    }

    /// Runs the cascade in place, starting from the steady state for `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        for s in &self.sections {
            let [b0, b1, b2, a1, a2] = *s;
            let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
            let mut z1 = (gain - b0) * x0;
            let mut z2 = (b2 - a2 * gain) * x0;
            for v in x.iter_mut() {
                let xi = *v;
                let y = b0 * xi + z1;
                z1 = b1 * xi - a1 * y + z2;
                z2 = b2 * xi - a2 * y;
                *v = y;
            }
        }
    }

    /// Zero-phase application with odd-reflection padding.
    pub fn filtfilt(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let pad = 3 * (self.order + 1);
        let n = signal.len();
        if n <= pad {
            return Err(Error::Signal(format!(
                "signal of {n} samples is too short for padding of {pad}"
            )));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (signal[0], signal[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));
        // forward-backward and backward-forward differ only in their edge
        // transients; averaging them makes the result exactly reversible
        let mut rev = ext.clone();
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        rev.reverse();
        self.run(&mut rev);
        rev.reverse();
        self.run(&mut rev);
        Ok((pad..pad + n).map(|i| 0.5 * (ext[i] + rev[i])).collect())
    }
}

/// Zero-phase Butterworth low-pass of one channel.
pub fn butterworth_zero_phase(signal: &[f64], fs: f64, cutoff: f64, order: usize) -> Result<Vec<f64>> {
    Butterworth::lowpass(order, cutoff, fs)?.filtfilt(signal)
}

/// Central differences inside, second-order one-sided stencils at the ends.
pub fn differentiate(signal: &[f64], fs: f64) -> Result<Vec<f64>> {
    let n = signal.len();
    if n < 3 {
        return Err(Error::Signal(format!("differentiation needs at least 3 samples, got {n}")));
    }
    let h = 0.5 * fs;
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * signal[0] + 4.0 * signal[1] - signal[2]) * h;
    for i in 1..n - 1 {
        d[i] = (signal[i + 1] - signal[i - 1]) * h;
    }
    d[n - 1] = (3.0 * signal[n - 1] - 4.0 * signal[n - 2] + signal[n - 3]) * h;
    Ok(d)
}

fn map_columns(m: &DMatrix<f64>, f: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync) -> Result<DMatrix<f64>> {
    let cols: Vec<Vec<f64>> = (0..m.ncols())
        .into_par_iter()
        .map(|c| f(m.column(c).as_slice()))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| cols[c][r]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSettings {
    pub cutoff: f64,
    pub order: usize,
}

/// Options of [`process_log`]. `cutoff: None` skips low-pass filtering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessOptions {
    pub cutoff: Option<f64>,
    pub order: usize,
    pub ramp_duration: f64,
    /// Seconds dropped from the end of a filtered log, where the filter's
    /// edge transient distorts the states.
    pub tail_duration: f64,
}

impl ProcessOptions {
    pub fn with_cutoff(cutoff: f64) -> Self {
        ProcessOptions {
            cutoff: Some(cutoff),
            ..Self::default()
        }
    }
}

impl Default for ProcessOptions {
    fn default() -> Self {
        ProcessOptions {
            cutoff: None,
            order: DEFAULT_ORDER,
            ramp_duration: DEFAULT_RAMP,
            tail_duration: DEFAULT_TAIL,
        }
    }
}

/// Processed states of dropped samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DroppedStates {
    pub q: DMatrix<f64>,
    pub dq: DMatrix<f64>,
    pub ddq: DMatrix<f64>,
}

impl DroppedStates {
    fn rows(q: &DMatrix<f64>, dq: &DMatrix<f64>, ddq: &DMatrix<f64>, start: usize, n: usize) -> Self {
        DroppedStates {
            q: q.rows(start, n).into_owned(),
            dq: dq.rows(start, n).into_owned(),
            ddq: ddq.rows(start, n).into_owned(),
        }
    }
}

/// A filtered log with accelerations, the ramp-in and, if filtered, the
/// tail removed.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedLog {
    pub log: JointLog,
    pub ddq: DMatrix<f64>,
    pub filter: Option<FilterSettings>,
    /// Kept so derived signals can be filtered over the same span as the
    /// measurements.
    pub lead_in: DroppedStates,
    pub lead_out: DroppedStates,
}

impl ProcessedLog {
    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn lead_len(&self) -> usize {
        self.lead_in.q.nrows()
    }

    /// Number of samples spanned by the original log.
    pub fn full_len(&self) -> usize {
        self.lead_len() + self.len() + self.lead_out.q.nrows()
    }

    /// Processed `q`, `dq`, `ddq` over the whole original log.
    pub fn full_states(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>| {
            let mut m = DMatrix::zeros(a.nrows() + b.nrows() + c.nrows(), b.ncols());
            m.rows_mut(0, a.nrows()).copy_from(a);
            m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
            m.rows_mut(a.nrows() + b.nrows(), c.nrows()).copy_from(c);
            m
        };
        (
            stack(&self.lead_in.q, &self.log.q, &self.lead_out.q),
            stack(&self.lead_in.dq, &self.log.dq, &self.lead_out.dq),
            stack(&self.lead_in.ddq, &self.ddq, &self.lead_out.ddq),
        )
    }

    /// Applies the measurement filter to every column of a time-major matrix
    /// spanning the whole original log, and returns the retained rows.
    pub fn filter_like(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.full_len() {
            return Err(Error::Dimension {
                what: "filtered signal length",
                expected: self.full_len(),
                got: m.nrows(),
            });
        }
        let filtered = match self.filter {
            None => m.clone(),
            Some(f) => {
                let bw = Butterworth::lowpass(f.order, f.cutoff, self.log.rate())?;
                map_columns(m, |c| bw.filtfilt(c))?
            }
        };
        Ok(filtered.rows(self.lead_len(), self.len()).into_owned())
    }
}

/// Filters `q`, `dq` and `tau`, computes `ddq = filter(differentiate(dq))`,
/// then drops the first `ramp_duration` seconds and, when filtering, the
/// last `tail_duration` seconds.
pub fn process_log(log: &JointLog, options: &ProcessOptions) -> Result<ProcessedLog> {
    if !(options.ramp_duration >= 0.0) || !(options.tail_duration >= 0.0) {
        return Err(Error::InvalidArgument("dropped durations must be non-negative".into()));
    }
    let fs = log.rate();
    let start = log.t[0] + options.ramp_duration;
    let first = log.t.iter().position(|&t| t >= start - 0.5 / fs).unwrap_or(log.len());
    let end = match options.cutoff {
        Some(_) => {
            let stop = log.t[log.len() - 1] - options.tail_duration;
            log.t.iter().rposition(|&t| t <= stop + 0.5 / fs).map_or(0, |i| i + 1)
        }
        None => log.len(),
    };
    if end < first + 3 {
        return Err(Error::Signal(format!(
            "log of {:.3} s leaves fewer than 3 samples after dropping {:.3} s",
            log.t[log.len() - 1] - log.t[0],
            options.ramp_duration + if options.cutoff.is_some() { options.tail_duration } else { 0.0 }
        )));
    }
    let (q, dq, tau, ddq) = match options.cutoff {
        Some(cutoff) => {
            let bw = Butterworth::lowpass(options.order, cutoff, fs)?;
            let filt = |c: &[f64]| bw.filtfilt(c);
            let q = map_columns(&log.q, filt)?;
            let dq = map_columns(&log.dq, filt)?;
            let tau = map_columns(&log.tau, filt)?;
            let ddq = map_columns(&dq, |c| bw.filtfilt(&differentiate(c, fs)?))?;
            (q, dq, tau, ddq)
        }
        None => {
            let ddq = map_columns(&log.dq, |c| differentiate(c, fs))?;
            (log.q.clone(), log.dq.clone(), log.tau.clone(), ddq)
        }
    };
    let rows = end - first;
    Ok(ProcessedLog {
        log: JointLog {
            t: log.t[first..end].to_vec(),
            q: q.rows(first, rows).into_owned(),
            dq: dq.rows(first, rows).into_owned(),
            tau: tau.rows(first, rows).into_owned(),
        },
        ddq: ddq.rows(first, rows).into_owned(),
        filter: options.cutoff.map(|cutoff| FilterSettings {
            cutoff,
            order: options.order,
        }),
        lead_in: DroppedStates::rows(&q, &dq, &ddq, 0, first),
        lead_out: DroppedStates::rows(&q, &dq, &ddq, end, log.len() - end),
    })
}
