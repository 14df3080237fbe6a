//! Grayscale image IO and the two-population synthetic image set.
//!
//! The two populations differ by a mean shift along one smooth pattern and
//! share a larger pool of independent nuisance patterns. The shift is the
//! single strongest direction of variation, yet a random linear read-out
//! mostly sees nuisance.

use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format: {0}")]
    Format(String),
    #[error("expected {expected} pixels, found {got}")]
    PixelCount { expected: usize, got: usize },
    #[error("pixel value {0} outside [0, 1]")]
    Range(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

fn header_tokens<R: BufRead>(r: &mut R, n: usize) -> Result<Vec<String>, ImageError> {
    // PGM header tokens, skipping `#` comments; stops right after the last
    // token's single whitespace byte
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    while tokens.len() < n {
        if r.read(&mut byte)? == 0 {
            return Err(ImageError::Format("truncated header".into()));
        }
        let c = byte[0] as char;
        if in_comment {
            in_comment = c != '\n';
            continue;
        }
        if c == '#' {
            in_comment = true;
        } else if c.is_ascii_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(c);
        }
    }
    Ok(tokens)
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::PixelCount {
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some(&v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Range(v));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Reads a binary (`P5`) or plain (`P2`) portable graymap.
    pub fn read_pgm<R: BufRead>(mut r: R) -> Result<Self, ImageError> {
        let head = header_tokens(&mut r, 4)?;
        let parse = |s: &str| -> Result<usize, ImageError> {
            s.parse()
                .map_err(|_| ImageError::Format(format!("bad header field `{s}`")))
        };
        let (width, height, maxval) = (parse(&head[1])?, parse(&head[2])?, parse(&head[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(ImageError::Format(format!("bad maxval {maxval}")));
        }
        let n = width * height;
        let max = maxval as f64;
        let raw: Vec<usize> = match head[0].as_str() {
            "P5" => {
                let wide = maxval > 255;
                let mut buf = vec![0u8; if wide { 2 * n } else { n }];
                r.read_exact(&mut buf)?;
                if wide {
                    buf.chunks(2)
                        .map(|c| (c[0] as usize) << 8 | c[1] as usize)
                        .collect()
                } else {
                    buf.into_iter().map(usize::from).collect()
                }
            }
            "P2" => {
                let mut text = String::new();
                r.read_to_string(&mut text)?;
                text.split_whitespace()
                    .map(parse)
                    .collect::<Result<_, _>>()?
            }
            other => return Err(ImageError::Format(format!("magic `{other}`"))),
        };
        if raw.len() != n {
            return Err(ImageError::PixelCount {
                expected: n,
                got: raw.len(),
            });
        }
        Self::new(
            width,
            height,
            raw.into_iter().map(|v| v as f64 / max).collect(),
        )
    }

    /// Writes an 8-bit binary graymap.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), ImageError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| (p * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Whitespace-separated pixel values in `[0, 1]`, row-major.
    pub fn read_text<R: Read>(mut r: R, width: usize, height: usize) -> Result<Self, ImageError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let pixels = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| ImageError::Format(format!("bad pixel `{t}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(width, height, pixels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternPopulation {
    A,
    B,
}

/// Mean offset of each population along the shift pattern.
pub const SHIFT_AMPLITUDE: f64 = 0.2;
/// Standard deviation of each nuisance pattern's coefficient.
pub const NUISANCE_STD: f64 = 0.107;
const SHIFT: (usize, usize) = (2, 1);
const MAX_FREQ: usize = 4;

fn cosine_pattern(size: usize, u: usize, v: usize) -> Vec<f64> {
    let s = size as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let cx = (std::f64::consts::PI * (x as f64 + 0.5) * u as f64 / s).cos();
            let cy = (std::f64::consts::PI * (y as f64 + 0.5) * v as f64 / s).cos();
            out.push(cx * cy);
        }
    }
    out
}

/// Images built from smooth cosine patterns over frequencies `1..=4` per
/// axis. Population A sits at `+SHIFT_AMPLITUDE` along one pattern and B at
/// `-SHIFT_AMPLITUDE`; the other 15 patterns get independent normal
/// coefficients, plus small pixel noise.
#[derive(Debug, Clone)]
pub struct PatternGenerator {
    size: usize,
    shift: Vec<f64>,
    nuisance: Vec<Vec<f64>>,
}

impl PatternGenerator {
    pub fn new(size: usize) -> Self {
        let mut nuisance = Vec::new();
        for u in 1..=MAX_FREQ {
            for v in 1..=MAX_FREQ {
                if (u, v) != SHIFT {
                    nuisance.push(cosine_pattern(size, u, v));
                }
            }
        }
        Self {
            size,
            shift: cosine_pattern(size, SHIFT.0, SHIFT.1),
            nuisance,
        }
    }

    pub fn image<R: Rng>(&self, rng: &mut R, population: PatternPopulation) -> GrayImage {
        let sign = match population {
            PatternPopulation::A => 1.0,
            PatternPopulation::B => -1.0,
        };
        let mut pixels: Vec<f64> = self
            .shift
            .iter()
            .map(|p| 0.5 + sign * SHIFT_AMPLITUDE * p)
            .collect();
        for pattern in &self.nuisance {
            let c = NUISANCE_STD * rng.sample::<f64, _>(StandardNormal);
            pixels
                .iter_mut()
                .zip(pattern)
                .for_each(|(v, p)| *v += c * p);
        }
        for v in &mut pixels {
            let noise: f64 = rng.sample(StandardNormal);
            *v = (*v + 0.02 * noise).clamp(0.0, 1.0);
        }
        GrayImage {
            width: self.size,
            height: self.size,
            pixels,
        }
    }
}

/// `n` images alternating between the two populations, with their tags.
pub fn two_population_set(n: usize, size: usize, seed: u64) -> Vec<(PatternPopulation, GrayImage)> {
    let generator = PatternGenerator::new(size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pop = if i % 2 == 0 {
                PatternPopulation::A
            } else {
                PatternPopulation::B
            };
            (pop, generator.image(&mut rng, pop))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_binary_and_plain() {
        let img = GrayImage::new(3, 2, vec![0.0, 1.0, 51.0 / 255.0, 0.2, 0.4, 0.6]).unwrap();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        let back = GrayImage::read_pgm(&buf[..]).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let plain = "P2\n# comment\n2 2\n4\n0 1\n2 4\n";
        let p = GrayImage::read_pgm(plain.as_bytes()).unwrap();
        assert_eq!(p.pixels, vec![0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn text_images_are_checked() {
        assert!(GrayImage::read_text("0 0.5\n1 0.25".as_bytes(), 2, 2).is_ok());
        assert!(matches!(
            GrayImage::read_text("0 0.5 1".as_bytes(), 2, 2),
            Err(ImageError::PixelCount { .. })
        ));
        assert!(matches!(
            GrayImage::read_text("0 2 1 1".as_bytes(), 2, 2),
            Err(ImageError::Range(_))
        ));
    }

    #[test]
    fn populations_differ_along_shift_pattern() {
        let set = two_population_set(200, 32, 1);
        let shift = cosine_pattern(32, SHIFT.0, SHIFT.1);
        let norm: f64 = shift.iter().map(|p| p * p).sum();
        let coef = |img: &GrayImage| {
            img.pixels
                .iter()
                .zip(&shift)
                .map(|(v, p)| (v - 0.5) * p)
                .sum::<f64>()
                / norm
        };
        for (pop, img) in &set {
            let c = coef(img);
            match pop {
                PatternPopulation::A => assert!(c > 0.0, "{c}"),
                PatternPopulation::B => assert!(c < 0.0, "{c}"),
            }
        }
    }
}
