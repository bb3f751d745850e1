//! Convolution operator X for a fixed input signal: forward application,
//! exact adjoint, the data-fit gradient, and the squared operator norm that
//! sets the proximal-gradient stepsize.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Output lengths below this use direct convolution; the transform path is
/// not worth the setup cost for tiny vectors.
const DIRECT_THRESHOLD: usize = 32;

/// Linear convolution with a fixed input signal x of length N, viewed as the
/// (N + N_h - 1) x N_h Toeplitz matrix X.
///
/// The operator is immutable after construction; `apply` and `apply_adjoint`
/// are reentrant and safe to call from multiple threads.
pub struct ConvolutionOperator {
    input: Vec<f64>,
    rir_length: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Transform of the zero-padded input, reused by every apply.
    spectrum: Vec<Complex<f64>>,
}

impl ConvolutionOperator {
    pub fn new(input: &[f64], rir_length: usize) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::InvalidParameter {
                name: "input",
                reason: "input signal must be non-empty".into(),
            });
        }
        if rir_length == 0 {
            return Err(Error::InvalidParameter {
                name: "rir_length",
                reason: "must be at least 1".into(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("convolution input"));
        }
        let out_len = input.len() + rir_length - 1;
        let fft_len = out_len.next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
        for (dst, &src) in buf.iter_mut().zip(input.iter()) {
            dst.re = src;
        }
        forward.process(&mut buf);
        Ok(ConvolutionOperator {
            input: input.to_vec(),
            rir_length,
            fft_len,
            forward,
            inverse,
            spectrum: buf,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    pub fn rir_length(&self) -> usize {
        self.rir_length
    }

    pub fn output_len(&self) -> usize {
        self.input.len() + self.rir_length - 1
    }

    /// Full linear convolution X h, length N + N_h - 1.
    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.rir_length {
            return Err(Error::DimensionMismatch {
                expected: self.rir_length,
                got: h.len(),
                context: "apply expects an RIR-length vector",
            });
        }
        let out_len = self.output_len();
        if out_len < DIRECT_THRESHOLD {
            return Ok(direct_convolve(&self.input, h));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        for (dst, &src) in buf.iter_mut().zip(h.iter()) {
            dst.re = src;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(self.spectrum.iter()) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.fft_len as f64;
        Ok(buf[..out_len].iter().map(|c| c.re * scale).collect())
    }

    /// Adjoint application X^T r: correlation of the residual with the input
    /// at non-negative lags, length N_h.
    pub fn apply_adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        let out_len = self.output_len();
        if r.len() != out_len {
            return Err(Error::DimensionMismatch {
                expected: out_len,
                got: r.len(),
                context: "apply_adjoint expects a full-convolution-length vector",
            });
        }
        if out_len < DIRECT_THRESHOLD {
            return Ok(direct_correlate(&self.input, r, self.rir_length));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        for (dst, &src) in buf.iter_mut().zip(r.iter()) {
            dst.re = src;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(self.spectrum.iter()) {
            *b *= s.conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.fft_len as f64;
        Ok(buf[..self.rir_length]
            .iter()
            .map(|c| c.re * scale)
            .collect())
    }

    /// Gradient of the data-fit term: X^T (X h - y).
    pub fn data_fit_gradient(&self, y: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_len() {
            return Err(Error::DimensionMismatch {
                expected: self.output_len(),
                got: y.len(),
                context: "observation length must be N + N_h - 1",
            });
        }
        let mut r = self.apply(h)?;
        for (ri, yi) in r.iter_mut().zip(y.iter()) {
            *ri -= yi;
        }
        self.apply_adjoint(&r)
    }

    /// Squared operator norm L = ||X||^2 via power iteration on X^T X,
    /// started from a seeded random vector so the iterate has a component in
    /// the top eigenspace.
    ///
    /// The Rayleigh quotient never exceeds the true norm, so the returned L
    /// is a slight underestimate; callers that need a guaranteed-valid
    /// stepsize divide by (1 + 1e-6).
    pub fn operator_norm_sq(&self) -> Result<f64> {
        if self.input.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroSignal);
        }
        let n = self.rir_length;
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) + 0.1).collect();
        let norm = dot(&v, &v).sqrt();
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        let mut lambda = 0.0;
        for _ in 0..200 {
            let xv = self.apply(&v)?;
            let mut z = self.apply_adjoint(&xv)?;
            let rayleigh = dot(&v, &z);
            let zn = dot(&z, &z).sqrt();
            if zn == 0.0 {
                return Err(Error::ZeroSignal);
            }
            for zi in z.iter_mut() {
                *zi /= zn;
            }
            v = z;
            if (rayleigh - lambda).abs() <= 1e-10 * rayleigh.abs().max(f64::MIN_POSITIVE) {
                return Ok(rayleigh);
            }
            lambda = rayleigh;
        }
        Ok(lambda)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Naive O(N * N_h) full convolution.
pub(crate) fn direct_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        for (j, &hj) in h.iter().enumerate() {
            out[i + j] += xi * hj;
        }
    }
    out
}

/// Naive correlation: (X^T r)_j = sum_i x_i r_{i+j}.
fn direct_correlate(x: &[f64], r: &[f64], n_h: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_h];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            acc += xi * r[i + j];
        }
        *o = acc;
    }
    out
}
