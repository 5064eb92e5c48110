use super::Tensor;
use crate::error::{Error, Result};

/// Argmax positions recorded by a 2x2 max-pooling pass, one flag per element
/// of the pre-pooling tensor and exactly one set flag per window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchMask {
    shape: [usize; 3],
    flags: Vec<bool>,
}

impl SwitchMask {
    pub fn new(shape: [usize; 3], flags: Vec<bool>) -> Result<Self> {
        let [c, h, w] = shape;
        if h % 2 != 0 || w % 2 != 0 || c == 0 || h == 0 {
            return Err(Error::dim(format!("switch shape {shape:?} must have even extents")));
        }
        if flags.len() != c * h * w {
            return Err(Error::dim(format!(
                "switch shape {shape:?} needs {} flags, got {}",
                c * h * w,
                flags.len()
            )));
        }
        for ch in 0..c {
            for y in (0..h).step_by(2) {
                for x in (0..w).step_by(2) {
                    let set = window(ch, y, x, h, w)
                        .iter()
                        .filter(|&&i| flags[i])
                        .count();
                    if set != 1 {
                        return Err(Error::input(format!(
                            "pooling window ({ch}, {y}, {x}) has {set} switches set"
                        )));
                    }
                }
            }
        }
        Ok(SwitchMask { shape, flags })
    }

    /// Extents of the tensor that was pooled.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn pooled_shape(&self) -> [usize; 3] {
        let [c, h, w] = self.shape;
        [c, h / 2, w / 2]
    }
}

/// Flat indices of the 2x2 window whose top-left corner is `(y, x)`, in
/// row-major order.
fn window(c: usize, y: usize, x: usize, h: usize, w: usize) -> [usize; 4] {
    let base = c * h * w;
    [
        base + y * w + x,
        base + y * w + x + 1,
        base + (y + 1) * w + x,
        base + (y + 1) * w + x + 1,
    ]
}

/// 2x2 max pooling, stride 2. Ties go to the lowest row-major index.
pub fn maxpool2d(input: &Tensor) -> Result<(Tensor, SwitchMask)> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("max pooling needs even extents, got {h}x{w}")));
    }
    let (ph, pw) = (h / 2, w / 2);
    let data = input.data();
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut flags = vec![false; data.len()];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let win = window(ch, 2 * py, 2 * px, h, w);
                let mut best = win[0];
                for &i in &win[1..] {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                flags[best] = true;
                out.push(data[best]);
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![c, ph, pw], out),
        SwitchMask {
            shape: [c, h, w],
            flags,
        },
    ))
}

/// Places every pooled value at its recorded switch; all other positions are zero.
pub fn unpool2d(input: &Tensor, switches: &SwitchMask) -> Result<Tensor> {
    let (c, ph, pw) = input.dims3()?;
    if [c, ph, pw] != switches.pooled_shape() {
        return Err(Error::dim(format!(
            "unpooling {:?} with switches for {:?}",
            input.shape(),
            switches.shape
        )));
    }
    let [_, h, w] = switches.shape;
    let mut out = vec![0.0; c * h * w];
    let src = input.data();
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let v = src[(ch * ph + py) * pw + px];
                for i in window(ch, 2 * py, 2 * px, h, w) {
                    if switches.flags[i] {
                        out[i] = v;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}
