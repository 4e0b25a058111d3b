//! Discrete Fourier transforms of arbitrary length and circular convolution.
//!
//! Convention: the forward transform is unnormalized,
//! `X[k] = Σₙ x[n]·exp(−2πi·kn/N)`, and the inverse carries the `1/N`.
//! Power-of-two lengths use an iterative radix-2 Cooley–Tukey transform; every
//! other length goes through Bluestein's chirp-z reformulation on a
//! power-of-two grid of size at least `2N − 1`. No length is ever padded, so
//! convolutions computed here are circular over the true sequence length.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Imaginary residue allowed when a real signal comes back from the inverse
/// transform, relative to the signal's scale.
const IMAG_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::invalid(format!(
                "complex vector parts differ in length: {} vs {}",
                re.len(),
                im.len()
            )));
        }
        if re.iter().chain(&im).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("complex vector"));
        }
        Ok(Self { re, im })
    }

    pub fn real(re: &[f64]) -> Self {
        Self {
            re: re.to_vec(),
            im: vec![0.0; re.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    fn from_complex(v: &[Complex64]) -> Self {
        Self {
            re: v.iter().map(|c| c.re).collect(),
            im: v.iter().map(|c| c.im).collect(),
        }
    }
}

/// `exp(−2πi·num/den)` with the numerator reduced first to keep the angle small.
fn unit_root(num: usize, den: usize) -> Complex64 {
    let r = (num % den) as f64;
    Complex64::from_polar(1.0, -2.0 * PI * r / den as f64)
}

/// The O(N²) transform, evaluated straight from the definition.
pub fn dft_naive(x: &ComplexVector) -> Result<ComplexVector> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Empty("dft_naive"));
    }
    let input = x.to_complex();
    let out: Vec<Complex64> = (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(j, &v)| v * unit_root(k * j, n))
                .sum()
        })
        .collect();
    Ok(ComplexVector::from_complex(&out))
}

/// Precomputed transform of one length. Reusable across many signals of
/// that length, which is how the Fourier gating unit processes channels.
#[derive(Clone, Debug)]
pub struct FftPlan {
    len: usize,
    kind: PlanKind,
}

#[derive(Clone, Debug)]
enum PlanKind {
    Radix2(Radix2),
    Bluestein {
        inner: Radix2,
        /// `exp(−πi·n²/N)` for `n < N`.
        chirp: Vec<Complex64>,
        /// Forward transform of the conjugate chirp laid out circularly.
        chirp_spectrum: Vec<Complex64>,
    },
}

#[derive(Clone, Debug)]
struct Radix2 {
    len: usize,
    twiddles: Vec<Complex64>,
}

impl Radix2 {
    fn new(len: usize) -> Self {
        debug_assert!(len.is_power_of_two());
        let twiddles = (0..len / 2).map(|k| unit_root(k, len)).collect();
        Self { len, twiddles }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.len;
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Empty("fft"));
        }
        if len.is_power_of_two() {
            return Ok(Self {
                len,
                kind: PlanKind::Radix2(Radix2::new(len)),
            });
        }
        let m = (2 * len - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // n² mod 2N keeps the chirp angle exact for large n
        let chirp: Vec<Complex64> = (0..len)
            .map(|n| {
                let r = (n * n) % (2 * len);
                Complex64::from_polar(1.0, -PI * r as f64 / len as f64)
            })
            .collect();
        let mut chirp_spectrum = vec![Complex64::new(0.0, 0.0); m];
        chirp_spectrum[0] = chirp[0].conj();
        for n in 1..len {
            chirp_spectrum[n] = chirp[n].conj();
            chirp_spectrum[m - n] = chirp[n].conj();
        }
        inner.forward(&mut chirp_spectrum);
        Ok(Self {
            len,
            kind: PlanKind::Bluestein {
                inner,
                chirp,
                chirp_spectrum,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.kind {
            PlanKind::Radix2(r) => r.forward(buf),
            PlanKind::Bluestein {
                inner,
                chirp,
                chirp_spectrum,
            } => {
                let m = inner.len;
                let mut work = vec![Complex64::new(0.0, 0.0); m];
                for ((w, &x), &c) in work.iter_mut().zip(buf.iter()).zip(chirp) {
                    *w = x * c;
                }
                inner.forward(&mut work);
                for (w, &s) in work.iter_mut().zip(chirp_spectrum) {
                    *w *= s;
                }
                // inverse via conjugation, then 1/m
                work.iter_mut().for_each(|w| *w = w.conj());
                inner.forward(&mut work);
                let scale = 1.0 / m as f64;
                for ((b, w), &c) in buf.iter_mut().zip(&work).zip(chirp) {
                    *b = w.conj() * scale * c;
                }
            }
        }
    }

    /// Inverse transform in place, including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|v| *v = v.conj());
        self.forward(buf);
        let scale = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|v| *v = v.conj() * scale);
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform of a spectrum known to belong to a real signal.
    /// Panics if the imaginary residue exceeds the tolerance, which would mean
    /// the spectrum was not Hermitian.
    pub fn inverse_real(&self, spectrum: Vec<Complex64>) -> Vec<f64> {
        let mut buf = spectrum;
        self.inverse(&mut buf);
        let scale = buf.iter().fold(1.0f64, |s, v| s.max(v.re.abs()));
        let residue = buf.iter().fold(0.0f64, |s, v| s.max(v.im.abs()));
        assert!(
            residue <= IMAG_TOLERANCE * scale,
            "inverse transform left imaginary residue {residue:e}"
        );
        buf.into_iter().map(|v| v.re).collect()
    }
}

pub fn fft(x: &ComplexVector) -> Result<ComplexVector> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_complex();
    plan.forward(&mut buf);
    Ok(ComplexVector::from_complex(&buf))
}

pub fn ifft(x: &ComplexVector) -> Result<ComplexVector> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_complex();
    plan.inverse(&mut buf);
    Ok(ComplexVector::from_complex(&buf))
}

fn check_kernel(op: &'static str, n: usize, k: usize) -> Result<()> {
    if n == 0 || k == 0 {
        return Err(Error::Empty(op));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "{op}: kernel length {k} exceeds signal length {n}"
        )));
    }
    Ok(())
}

/// `z[i] = Σⱼ k[j]·x[(i − j) mod N]`, computed in the frequency domain.
pub fn circular_convolve(x: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    check_kernel("circular_convolve", x.len(), k.len())?;
    let plan = FftPlan::new(x.len())?;
    Ok(circular_convolve_with(&plan, x, k))
}

/// Same as [`circular_convolve`] with a caller-owned plan; `k.len() ≤ x.len()`.
pub fn circular_convolve_with(plan: &FftPlan, x: &[f64], k: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut padded = vec![0.0; n];
    padded[..k.len()].copy_from_slice(k);
    let xs = plan.forward_real(x);
    let ks = plan.forward_real(&padded);
    plan.inverse_real(xs.iter().zip(&ks).map(|(a, b)| a * b).collect())
}

/// Circular cross-correlation `z[m] = Σᵢ g[i]·y[(i − m) mod N]` for equal-length
/// signals. This is the adjoint of circular convolution with `y`.
pub fn circular_correlate_with(plan: &FftPlan, g: &[f64], y: &[f64]) -> Vec<f64> {
    let gs = plan.forward_real(g);
    let ys = plan.forward_real(y);
    plan.inverse_real(gs.iter().zip(&ys).map(|(a, b)| a * b.conj()).collect())
}

/// Direct O(N·n) evaluation of the circular convolution sum.
pub fn circular_convolve_naive(x: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    check_kernel("circular_convolve_naive", x.len(), k.len())?;
    let n = x.len();
    Ok((0..n)
        .map(|i| {
            k.iter()
                .enumerate()
                .map(|(j, &kj)| kj * x[(i + n - j) % n])
                .sum()
        })
        .collect())
}
