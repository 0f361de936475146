//! Fourier-domain style transfer: the low-frequency amplitude of a source
//! image is replaced by a target image's, keeping the source phase.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdaError {
    #[error("image shapes differ: {0:?} vs {1:?}")]
    DimensionMismatch(Vec<usize>, Vec<usize>),
    #[error("expected a [C,H,W] image, got {0:?}")]
    NotAnImage(Vec<usize>),
    #[error("window ratio {0} outside [0, 0.5]")]
    BadRatio(f64),
}

/// Unnormalized 2-D spectrum of one real channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Coefficient at frequency row `u`, column `v` (uncentered indexing).
    pub fn bin(&self, u: usize, v: usize) -> Complex64 {
        self.bins[u * self.width + v]
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn amplitude(&self, u: usize, v: usize) -> f64 {
        self.bin(u, v).norm()
    }

    pub fn phase(&self, u: usize, v: usize) -> f64 {
        self.bin(u, v).arg()
    }
}

fn fft_2d(height: usize, width: usize, bins: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in bins.chunks_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = bins[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            bins[y * width + x] = column[y];
        }
    }
}

/// Forward DFT of a real `height × width` channel (no normalization).
pub fn dft2(channel: &[f64], height: usize, width: usize) -> Spectrum {
    assert_eq!(channel.len(), height * width, "channel size");
    let mut bins: Vec<Complex64> = channel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_2d(height, width, &mut bins, false);
    Spectrum {
        height,
        width,
        bins,
    }
}

/// Inverse of [`dft2`], returning the real part scaled by `1/(H·W)`.
pub fn idft2(spectrum: &Spectrum) -> Vec<f64> {
    let mut bins = spectrum.bins.clone();
    fft_2d(spectrum.height, spectrum.width, &mut bins, true);
    let scale = 1.0 / (spectrum.height * spectrum.width) as f64;
    bins.iter().map(|c| c.re * scale).collect()
}

/// Half-width `b` of the centered swap window, or `None` for an empty window.
/// The window covers signed frequencies `|fy| ≤ b`, `|fx| ≤ b`, i.e. a
/// `(2b+1)²` square around DC after centering.
pub fn window_half_width(height: usize, width: usize, window_ratio: f64) -> Option<usize> {
    if window_ratio <= 0.0 {
        return None;
    }
    Some((window_ratio * height.min(width) as f64).floor() as usize)
}

fn signed_frequency(index: usize, len: usize) -> usize {
    // magnitude of the signed frequency for an uncentered DFT index
    index.min(len - index)
}

/// True when bin `(u, v)` lies inside the swap window.
pub fn in_window(u: usize, v: usize, height: usize, width: usize, half: usize) -> bool {
    signed_frequency(u, height) <= half && signed_frequency(v, width) <= half
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize), FdaError> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        other => Err(FdaError::NotAnImage(other.to_vec())),
    }
}

/// Per-channel spectra of the amplitude-swapped image, before the inverse
/// transform.
pub fn swapped_spectra(
    source: &Tensor,
    target: &Tensor,
    window_ratio: f64,
) -> Result<Vec<Spectrum>, FdaError> {
    if !(0.0..=0.5).contains(&window_ratio) {
        return Err(FdaError::BadRatio(window_ratio));
    }
    if source.shape() != target.shape() {
        return Err(FdaError::DimensionMismatch(
            source.shape().to_vec(),
            target.shape().to_vec(),
        ));
    }
    let (channels, h, w) = image_dims(source)?;
    let half = window_half_width(h, w, window_ratio);
    let mut out = Vec::with_capacity(channels);
    for c in 0..channels {
        let plane = c * h * w..(c + 1) * h * w;
        let mut spectrum = dft2(&source.data()[plane.clone()], h, w);
        if let Some(half) = half {
            let tgt = dft2(&target.data()[plane], h, w);
            for u in 0..h {
                for v in 0..w {
                    if in_window(u, v, h, w, half) {
                        let i = u * w + v;
                        let phase = spectrum.bins[i].arg();
                        spectrum.bins[i] = Complex64::from_polar(tgt.bins[i].norm(), phase);
                    }
                }
            }
        }
        out.push(spectrum);
    }
    Ok(out)
}

/// Amplitude swap without the final clamp to `[0, 1]`.
pub fn translate_unclamped(
    source: &Tensor,
    target: &Tensor,
    window_ratio: f64,
) -> Result<Tensor, FdaError> {
    if window_half_width(1, 1, window_ratio).is_none() {
        // empty window: nothing changes
        image_dims(source)?;
        if source.shape() != target.shape() {
            return Err(FdaError::DimensionMismatch(
                source.shape().to_vec(),
                target.shape().to_vec(),
            ));
        }
        return Ok(source.clone());
    }
    let spectra = swapped_spectra(source, target, window_ratio)?;
    let mut data = Vec::with_capacity(source.len());
    for spectrum in &spectra {
        data.extend(idft2(spectrum));
    }
    Ok(Tensor::new(source.shape().to_vec(), data).expect("same shape as source"))
}

/// Restyle `source` toward `target`, clamped to the valid pixel range.
pub fn translate(source: &Tensor, target: &Tensor, window_ratio: f64) -> Result<Tensor, FdaError> {
    if !(0.0..=0.5).contains(&window_ratio) {
        return Err(FdaError::BadRatio(window_ratio));
    }
    let mut out = translate_unclamped(source, target, window_ratio)?;
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    /// Direct O(N²) DFT, independent of the FFT path.
    fn naive_dft(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let angle =
                            -2.0 * PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        acc += Complex64::from_polar(x[y * w + xx], angle);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_image_is_dc_only() {
        let spectrum = dft2(&[0.3; 6 * 4], 6, 4);
        for u in 0..6 {
            for v in 0..4 {
                let expected = if (u, v) == (0, 0) { 0.3 * 24.0 } else { 0.0 };
                assert!((spectrum.bin(u, v) - Complex64::new(expected, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 1, 16, 12);
        let spectrum = dft2(img.data(), 16, 12);
        let back = idft2(&spectrum);
        let err = img.data().iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);
        let energy: f64 = img.data().iter().map(|v| v * v).sum();
        let spectral: f64 = spectrum.bins().iter().map(|c| c.norm_sqr()).sum::<f64>() / (16.0 * 12.0);
        assert!(((energy - spectral) / energy).abs() < 1e-6);
    }

    #[test]
    fn fft_matches_naive_dft_and_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (6, 5);
        let img = random_image(&mut rng, 1, h, w);
        let spectrum = dft2(img.data(), h, w);
        let naive = naive_dft(img.data(), h, w);
        for (a, b) in spectrum.bins().iter().zip(&naive) {
            assert!((a - b).norm() < 1e-9);
        }
        for u in 0..h {
            for v in 0..w {
                let mirror = spectrum.bin((h - u) % h, (w - v) % w);
                assert!((spectrum.bin(u, v) - mirror.conj()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_ratio_and_self_target_are_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_image(&mut rng, 3, 16, 32);
        let tgt = random_image(&mut rng, 3, 16, 32);
        let out = translate(&src, &tgt, 0.0).unwrap();
        assert!(out.max_abs_diff(&src) < 1e-6);
        let same = translate(&src, &src, 0.2).unwrap();
        assert!(same.max_abs_diff(&src) < 1e-6);
    }

    #[test]
    fn full_window_takes_target_amplitude_and_source_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = random_image(&mut rng, 1, 8, 8);
        let tgt = random_image(&mut rng, 1, 8, 8);
        let out = translate_unclamped(&src, &tgt, 0.5).unwrap();
        let (so, ss, st) = (
            naive_dft(out.data(), 8, 8),
            naive_dft(src.data(), 8, 8),
            naive_dft(tgt.data(), 8, 8),
        );
        for i in 0..64 {
            assert!((so[i].norm() - st[i].norm()).abs() < 1e-9);
            if ss[i].norm() > 1e-6 && so[i].norm() > 1e-6 {
                let dphi = (so[i].arg() - ss[i].arg() + PI).rem_euclid(2.0 * PI) - PI;
                assert!(dphi.abs() < 1e-6, "bin {i}: phase moved by {dphi}");
            }
        }
    }

    #[test]
    fn mean_moves_toward_target_as_window_grows() {
        let src = Tensor::full(&[3, 16, 32], 0.2);
        let tgt = Tensor::full(&[3, 16, 32], 0.7);
        let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
        let mut last_gap = f64::INFINITY;
        for ratio in [0.0, 0.05, 0.15] {
            let out = translate(&src, &tgt, ratio).unwrap();
            let gap = (mean(&out) - 0.7).abs();
            assert!(gap <= last_gap + 1e-12);
            last_gap = gap;
        }
        assert!(last_gap < 1e-9);
    }

    #[test]
    fn errors() {
        let a = Tensor::zeros(&[3, 4, 4]);
        let b = Tensor::zeros(&[3, 4, 8]);
        assert!(matches!(translate(&a, &b, 0.1), Err(FdaError::DimensionMismatch(..))));
        assert!(matches!(translate(&a, &a, 0.6), Err(FdaError::BadRatio(_))));
        assert!(matches!(translate(&a, &b, 0.0), Err(FdaError::DimensionMismatch(..))));
    }

    #[test]
    fn window_geometry() {
        assert_eq!(window_half_width(64, 128, 0.0), None);
        assert_eq!(window_half_width(64, 128, 0.05), Some(3));
        assert!(in_window(63, 1, 64, 128, 1));
        assert!(!in_window(62, 0, 64, 128, 1));
    }
}
