//! Dihedral (flip and quarter-turn) augmentation of square `[C, S, S]` images.

use crate::tensor::Tensor;

/// Number of distinct dihedral transforms of a square.
pub const DIHEDRAL_ORDER: u8 = 8;

/// Applies transform `k` (mod 8): bit 0 mirrors columns, bit 1 mirrors rows,
/// bit 2 transposes. `k = 0` is the identity.
pub fn dihedral(image: &Tensor, k: u8) -> Tensor {
    let k = k % DIHEDRAL_ORDER;
    if k == 0 {
        return image.clone();
    }
    let shape = image.shape();
    assert!(
        shape.len() == 3 && shape[1] == shape[2],
        "dihedral needs a square [C, S, S] image, got {shape:?}"
    );
    let (c, s) = (shape[0], shape[1]);
    let src = image.values();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        let plane = ch * s * s;
        for y in 0..s {
            for x in 0..s {
                let (mut sy, mut sx) = if k & 4 != 0 { (x, y) } else { (y, x) };
                if k & 1 != 0 {
                    sx = s - 1 - sx;
                }
                if k & 2 != 0 {
                    sy = s - 1 - sy;
                }
                out[plane + y * s + x] = src[plane + sy * s + sx];
            }
        }
    }
    Tensor::new(shape, out).expect("same shape")
}
