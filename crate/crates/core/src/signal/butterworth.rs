//! Butterworth band-pass design (bilinear transform with pre-warped edges)
//! and zero-phase application as a cascade of second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad: `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// Digital band-pass of order `order` (each edge), i.e. `order` sections.
#[derive(Clone, Debug)]
pub struct BandPass {
    pub sections: Vec<Section>,
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub rate_hz: f64,
}

impl BandPass {
    pub fn design(low_hz: f64, high_hz: f64, order: usize, rate_hz: f64) -> Result<Self> {
        let nyquist = rate_hz / 2.0;
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
            return Err(Error::Config(format!(
                "band edges {low_hz}–{high_hz} Hz must satisfy 0 < low < high < {nyquist} Hz"
            )));
        }
        if order == 0 {
            return Err(Error::Config("filter order must be positive".into()));
        }
        let fs2 = 2.0 * rate_hz;
        let warp = |f: f64| fs2 * (PI * f / rate_hz).tan();
        let (wl, wh) = (warp(low_hz), warp(high_hz));
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();

        // analog low-pass prototype poles on the left half of the unit circle
        let proto: Vec<Complex64> = (0..order)
            .map(|k| Complex64::from_polar(1.0, PI * (2 * k + order + 1) as f64 / (2 * order) as f64))
            .collect();

        // low-pass → band-pass: each pole splits in two, `order` zeros at s = 0
        let mut poles = Vec::with_capacity(2 * order);
        for p in &proto {
            let half = p * (bw / 2.0);
            let root = (half * half - w0 * w0).sqrt();
            poles.push(half + root);
            poles.push(half - root);
        }
        let gain_analog = bw.powi(order as i32);

        // bilinear: zeros at 0 map to +1, the `order` zeros at infinity to −1
        let num: Complex64 = (0..order).map(|_| Complex64::new(fs2, 0.0)).product();
        let den: Complex64 = poles.iter().map(|p| Complex64::new(fs2, 0.0) - p).product();
        let gain = gain_analog * (num / den).re;
        let zpoles: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();

        let sections = pair_poles(&zpoles)
            .into_iter()
            .enumerate()
            .map(|(i, (p1, p2))| Section {
                b: if i == 0 { [gain, 0.0, -gain] } else { [1.0, 0.0, -1.0] },
                a: [1.0, -(p1 + p2).re, (p1 * p2).re],
            })
            .collect();
        Ok(BandPass {
            sections,
            low_hz,
            high_hz,
            order,
            rate_hz,
        })
    }

    /// Complex frequency response of the cascade at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f_hz / self.rate_hz);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| (s.b[0] + s.b[1] * z1 + s.b[2] * z2) / (s.a[0] + s.a[1] * z1 + s.a[2] * z2))
            .product()
    }

    /// Single forward pass with the given per-section initial states.
    fn run(&self, x: &mut [f64], zi: &[[f64; 2]]) {
        for (s, z0) in self.sections.iter().zip(zi) {
            let mut z = *z0;
            for v in x.iter_mut() {
                let y = s.b[0] * *v + z[0];
                z[0] = s.b[1] * *v - s.a[1] * y + z[1];
                z[1] = s.b[2] * *v - s.a[2] * y;
                *v = y;
            }
        }
    }

    /// Steady-state section states for a unit step input.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let (b, a) = (s.b, s.a);
                // (I − Aᵀ) zi = b[1..] − a[1..]·b0 for the transposed direct form
                let r0 = b[1] - a[1] * b[0];
                let r1 = b[2] - a[2] * b[0];
                let det = (1.0 + a[1]) + a[2];
                let z0 = (r0 + r1) / det;
                let z1 = r1 - a[2] * z0;
                let out = [z0 * scale, z1 * scale];
                scale *= (b[0] + b[1] + b[2]) / (a[0] + a[1] + a[2]);
                out
            })
            .collect()
    }

    /// Number of samples reflected at each end before zero-phase filtering.
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Forward-backward filtering with odd extension at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.pad_len();
        let n = x.len();
        if n <= pad {
            return Err(Error::Signal(format!("zero-phase filtering needs more than {pad} samples, got {n}")));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_state();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
        let first = ext[0];
        self.run(&mut ext, &scaled(first));
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, &scaled(first));
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Groups poles into conjugate pairs, then pairs the remaining real poles.
fn pair_poles(poles: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    const TOL: f64 = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > TOL).collect();
    complex.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut real: Vec<Complex64> = poles
        .iter()
        .filter(|p| p.im.abs() <= TOL)
        .map(|p| Complex64::new(p.re, 0.0))
        .collect();
    real.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut pairs: Vec<_> = complex.into_iter().map(|p| (p, p.conj())).collect();
    for chunk in real.chunks(2) {
        pairs.push((chunk[0], *chunk.get(1).unwrap_or(&Complex64::new(0.0, 0.0))));
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Squared magnitude of the analog Butterworth band-pass at the
    /// pre-warped frequency. Forward-backward filtering applies this twice
    /// in amplitude, i.e. once in power.
    fn oracle_power(f: f64, low: f64, high: f64, order: i32, fs: f64) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh, w) = (warp(low), warp(high), warp(f));
        let x = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(2 * order))
    }

    #[test]
    fn designed_response_matches_analog_oracle() {
        for &(low, high, order, fs) in &[(0.5, 45.0, 3, 100.0), (0.5, 45.0, 3, 500.0), (5.0, 15.0, 2, 100.0)] {
            let bp = BandPass::design(low, high, order, fs).unwrap();
            assert_eq!(bp.sections.len(), order);
            for &f in &[0.3, low, 2.0, 10.0, 20.0, high, 0.49 * fs] {
                let got = bp.response(f).norm_sqr();
                let want = oracle_power(f, low, high, order as i32, fs);
                assert!((got - want).abs() < 1e-9, "f={f}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn rejects_bad_band_edges() {
        assert!(matches!(BandPass::design(0.5, 50.0, 3, 100.0), Err(Error::Config(_))));
        assert!(matches!(BandPass::design(10.0, 5.0, 3, 100.0), Err(Error::Config(_))));
        assert!(matches!(BandPass::design(0.0, 5.0, 3, 100.0), Err(Error::Config(_))));
    }

    #[test]
    fn step_state_is_steady() {
        let bp = BandPass::design(0.5, 45.0, 3, 100.0).unwrap();
        let mut x = vec![1.0; 50];
        bp.run(&mut x, &bp.step_state());
        // band-pass DC gain is zero, so a settled step yields zero output
        assert!(x.iter().all(|v| v.abs() < 1e-12));
    }
}
