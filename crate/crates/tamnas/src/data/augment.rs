//! Training-stream augmentation: zero-pad + random crop back to size, and
//! random horizontal flips. Never applied to evaluation data.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    /// Zero-padding on each side before cropping back to the original size.
    pub pad: usize,
    pub hflip: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment { pad: 4, hflip: true }
    }
}

impl Augment {
    pub fn none() -> Self {
        Augment { pad: 0, hflip: false }
    }

    /// Apply in place to a batch (N,C,H,W); draws per-image offsets/flips.
    pub fn apply(&self, batch: &mut Tensor, rng: &mut ChaCha8Rng) {
        if self.pad == 0 && !self.hflip {
            return;
        }
        let shape = batch.shape().to_vec();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let data = batch.data_mut();
        let img_stride = c * h * w;
        let mut scratch = vec![0f32; img_stride];
        for i in 0..n {
            let img = &mut data[i * img_stride..(i + 1) * img_stride];
            if self.pad > 0 {
                // offsets into the zero-padded canvas
                let oy = rng.gen_range(0..=2 * self.pad) as isize - self.pad as isize;
                let ox = rng.gen_range(0..=2 * self.pad) as isize - self.pad as isize;
                scratch.fill(0.0);
                for ci in 0..c {
                    for y in 0..h {
                        let sy = y as isize + oy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + ox;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            scratch[(ci * h + y) * w + x] =
                                img[(ci * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                img.copy_from_slice(&scratch);
            }
            if self.hflip && rng.gen_bool(0.5) {
                for ci in 0..c {
                    for y in 0..h {
                        let row = (ci * h + y) * w;
                        img[row..row + w].reverse();
                    }
                }
            }
        }
    }
}
