//! Seeded dataset synthesis and 16-bit PGM image I/O.
//!
//! Pixel values live in `[0, 1]`. Random numbers come from
//! [`CounterRng`](crate::rng::CounterRng), so a seed fixes every dataset bit
//! for bit.

use crate::error::{Result, TdvError};
use crate::operators::{cartesian_mask, cg_solve, BicubicDown, LinearMap, LinearOperator, MriOperator, RadonOperator};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use crate::training::{Dataset, Sample};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

/// Inverse problem a dataset is generated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Denoise,
    Sr,
    Mri,
    Ct,
}

impl std::str::FromStr for Task {
    type Err = TdvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(Task::Denoise),
            "sr" => Ok(Task::Sr),
            "mri" => Ok(Task::Mri),
            "ct" => Ok(Task::Ct),
            _ => Err(TdvError::usage(format!("unknown task '{s}' (denoise, sr, mri, ct)"))),
        }
    }
}

/// CG iterations for the data-term initialisation of a task.
pub fn init_cg_iters(task: Task) -> usize {
    match task {
        Task::Sr => 3,
        Task::Ct => 50,
        Task::Denoise | Task::Mri => 0,
    }
}

/// Procedural grayscale texture: a smooth background, a few flat shapes with
/// sharp edges and a patch of stripes, clipped to `[0, 1]`.
pub fn procedural_image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = CounterRng::derived(seed, 0x7e47);
    let (gx, gy, g0) = (rng.uniform_range(-0.3, 0.3), rng.uniform_range(-0.3, 0.3), rng.uniform_range(0.3, 0.7));
    let mut img = Tensor::from_fn([1, 1, h, w], |[_, _, i, j]| {
        g0 + gx * (j as f64 / w as f64 - 0.5) + gy * (i as f64 / h as f64 - 0.5)
    });
    let shapes = 2 + rng.below(3);
    for _ in 0..shapes {
        let level = rng.uniform();
        let (ci, cj) = (rng.uniform_range(0.0, h as f64), rng.uniform_range(0.0, w as f64));
        let (ri, rj) = (
            rng.uniform_range(0.15, 0.45) * h as f64,
            rng.uniform_range(0.15, 0.45) * w as f64,
        );
        let disk = rng.uniform() < 0.5;
        for i in 0..h {
            for j in 0..w {
                let (di, dj) = ((i as f64 - ci) / ri, (j as f64 - cj) / rj);
                let inside = if disk { di * di + dj * dj <= 1.0 } else { di.abs() <= 1.0 && dj.abs() <= 1.0 };
                if inside {
                    img.set([0, 0, i, j], level);
                }
            }
        }
    }
    let (freq, angle, amp) = (rng.uniform_range(0.3, 1.2), rng.uniform_range(0.0, PI), rng.uniform_range(0.05, 0.2));
    let (ci, cj, rad) = (
        rng.uniform_range(0.0, h as f64),
        rng.uniform_range(0.0, w as f64),
        rng.uniform_range(0.2, 0.5) * h.max(w) as f64,
    );
    let (s, c) = angle.sin_cos();
    for i in 0..h {
        for j in 0..w {
            let (di, dj) = (i as f64 - ci, j as f64 - cj);
            if di * di + dj * dj <= rad * rad {
                let v = img.get([0, 0, i, j]) + amp * (freq * (c * j as f64 + s * i as f64)).sin();
                img.set([0, 0, i, j], v);
            }
        }
    }
    img.map(|v| v.clamp(0.0, 1.0))
}

/// `N(0, σ²)` noise of the given shape from stream `stream` of `seed`.
pub fn gaussian_noise(seed: u64, stream: u64, shape: [usize; 4], sigma: f64) -> Tensor {
    let mut rng = CounterRng::derived(seed, stream);
    let mut t = Tensor::zeros(shape);
    if sigma != 0.0 {
        for v in t.data_mut() {
            *v = sigma * rng.normal();
        }
    }
    t
}

fn random_crop(img: &Tensor, patch: usize, rng: &mut CounterRng) -> Result<Tensor> {
    let (h, w) = (img.height(), img.width());
    if h < patch || w < patch {
        return Err(TdvError::usage(format!("source image {h}x{w} is smaller than the {patch}px patch")));
    }
    let (i0, j0) = (rng.below(h - patch + 1), rng.below(w - patch + 1));
    let src = img.plane(0, 0);
    Ok(Tensor::from_fn([1, 1, patch, patch], |[_, _, i, j]| src[(i0 + i) * w + j0 + j]))
}

/// Operator used for a task on `patch x patch` images. `level` is the
/// downsampling factor for SR and the angular subsampling for CT (a full
/// scan uses `2·patch` angles) or the acceleration for MRI.
pub fn task_operator(task: Task, patch: usize, level: f64, seed: u64) -> Result<LinearOperator> {
    Ok(match task {
        Task::Denoise => LinearOperator::Identity,
        Task::Sr => LinearOperator::BicubicDown(BicubicDown::new(level.round().max(1.0) as usize)?),
        Task::Mri => {
            let mask = cartesian_mask(patch, patch, level.max(1.0), (patch / 8).max(2), seed);
            LinearOperator::Mri(MriOperator::single_coil(mask)?)
        }
        Task::Ct => {
            let angles = ((2 * patch) as f64 / level.max(1.0)).round().max(1.0) as usize;
            LinearOperator::Radon(RadonOperator::new(patch, patch, angles, None)?)
        }
    })
}

/// Initial state from the data term: the observation itself for denoising,
/// the zero-filled adjoint for MRI and a few CG iterations on the normal
/// equations otherwise.
pub fn data_initialization(task: Task, op: &LinearOperator, z: &Tensor) -> Result<Tensor> {
    match task {
        Task::Denoise => Ok(z.clone()),
        Task::Mri => op.adjoint(z),
        Task::Sr | Task::Ct => cg_solve(|v| op.normal(v), &op.adjoint(z)?, init_cg_iters(task), 1e-12),
    }
}

/// Generate `count` triplets `(x_init, y, z)`.
///
/// For denoising `level` is the noise standard deviation `σ` and
/// `x_init = z = y + n`. For the other tasks `z = A y` (noise free) with the
/// operator from [`task_operator`]. Patches are cropped from `source` when
/// given, procedural textures otherwise.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    patch: usize,
    level: f64,
    task: Task,
    source: Option<&[Tensor]>,
) -> Result<Dataset> {
    if let Some(src) = source {
        if src.is_empty() {
            return Err(TdvError::usage("source image set is empty"));
        }
    }
    let op = task_operator(task, patch, level, seed)?;
    let mut crop_rng = CounterRng::derived(seed, 2);
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let y = match source {
            Some(src) => random_crop(&src[k % src.len()], patch, &mut crop_rng)?,
            None => procedural_image(seed.wrapping_mul(1_000_003).wrapping_add(k as u64), patch, patch),
        };
        let (z, x_init) = match task {
            Task::Denoise => {
                let n = gaussian_noise(seed, 1000 + k as u64, y.shape(), level);
                let z = &y + &n;
                (z.clone(), z)
            }
            _ => {
                let z = op.apply(&y)?;
                let x = data_initialization(task, &op, &z)?;
                (z, x)
            }
        };
        samples.push(Sample { x_init, y, z });
    }
    Ok(Dataset {
        samples,
        operator: op,
        lambda: 1.0,
    })
}

/// Write a single-channel image as binary 16-bit PGM, clamping to `[0, 1]`.
pub fn write_pgm16(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let [b, c, h, w] = img.shape();
    if b != 1 || c != 1 {
        return Err(TdvError::shape(format!("PGM needs a (1,1,H,W) image, got {:?}", img.shape())));
    }
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a binary (P5) PGM with 8- or 16-bit samples into `[0, 1]`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pgm(&fs::read(path)?)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(TdvError::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(TdvError::Format(format!("unsupported PGM magic '{}'", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| TdvError::Format(format!("bad PGM field '{s}'")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(TdvError::Format(format!("PGM maxval {maxval} out of range")));
    }
    let wide = maxval > 255;
    let need = h * w * if wide { 2 } else { 1 };
    let body = bytes.get(pos..pos + need).ok_or_else(|| TdvError::Format("truncated PGM data".into()))?;
    let data = if wide {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    } else {
        body.iter().map(|&v| v as f64 / maxval as f64).collect()
    };
    Tensor::from_vec([1, 1, h, w], data)
}

/// All `.pgm` files of a directory in name order.
pub fn read_pgm_dir(dir: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    paths.iter().map(read_pgm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_keeps_ground_truth() {
        let d = synth_dataset(4, 3, 8, 0.0, Task::Denoise, None).unwrap();
        for s in &d.samples {
            assert_eq!(s.x_init, s.y);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = synth_dataset(4, 2, 8, 0.1, Task::Denoise, None).unwrap();
        let b = synth_dataset(4, 2, 8, 0.1, Task::Denoise, None).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.z, y.z);
        }
    }

    #[test]
    fn empty_source_is_a_usage_error() {
        assert!(matches!(
            synth_dataset(1, 1, 8, 0.1, Task::Denoise, Some(&[])),
            Err(TdvError::Usage(_))
        ));
    }

    #[test]
    fn pgm_header_with_comment() {
        let t = decode_pgm(b"P5\n# hi\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
    }
}
