//! 1-D FFT: iterative radix-2 for power-of-two lengths, Bluestein's chirp-z
//! algorithm for everything else. Transforms are unscaled in both directions;
//! the 2-D wrappers apply the 1/(H*W) inverse normalization.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.re * s, self.im * s)
    }

    pub fn abs_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn abs(self) -> f64 {
        self.abs_sq().sqrt()
    }
}

impl std::ops::Add for Complex {
    type Output = Complex;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
}

impl std::ops::Sub for Complex {
    type Output = Complex;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
}

impl std::ops::Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

/// Unit phasor e^{i*angle}.
fn phasor(angle: f64) -> Complex {
    let (s, c) = angle.sin_cos();
    Complex::new(c, s)
}

/// In-place discrete Fourier transform, unscaled.
/// Forward uses e^{-2*pi*i*jk/n}, inverse e^{+2*pi*i*jk/n}.
pub fn fft_inplace(buf: &mut [Complex], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(buf, inverse);
    } else {
        fft_bluestein(buf, inverse);
    }
}

fn fft_radix2(a: &mut [Complex], inverse: bool) {
    let n = a.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            a.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let ang = sign * 2.0 * PI / len as f64;
        let twiddles: Vec<Complex> = (0..half).map(|k| phasor(ang * k as f64)).collect();
        let mut start = 0;
        while start < n {
            for k in 0..half {
                let u = a[start + k];
                let v = a[start + k + half] * twiddles[k];
                a[start + k] = u + v;
                a[start + k + half] = u - v;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Chirp-z transform for arbitrary n via a power-of-two circular convolution.
fn fft_bluestein(a: &mut [Complex], inverse: bool) {
    let n = a.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let m = (2 * n - 1).next_power_of_two();

    // chirp_k = e^{sign * i * pi * k^2 / n}; k^2 taken mod 2n keeps the
    // angle argument small without changing the phasor
    let chirp: Vec<Complex> = (0..n)
        .map(|k| {
            let ksq = (k as u64 * k as u64) % (2 * n as u64);
            phasor(sign * PI * ksq as f64 / n as f64)
        })
        .collect();

    let mut u = vec![Complex::ZERO; m];
    for k in 0..n {
        u[k] = a[k] * chirp[k];
    }
    // v_t = conj(chirp_t) laid out circularly for t in (-n, n)
    let mut v = vec![Complex::ZERO; m];
    for t in 0..n {
        let c = Complex::new(chirp[t].re, -chirp[t].im);
        v[t] = c;
        if t > 0 {
            v[m - t] = c;
        }
    }
    fft_radix2(&mut u, false);
    fft_radix2(&mut v, false);
    for k in 0..m {
        u[k] = u[k] * v[k];
    }
    fft_radix2(&mut u, true);
    let inv_m = 1.0 / m as f64;
    for k in 0..n {
        a[k] = chirp[k] * u[k].scale(inv_m);
    }
}
