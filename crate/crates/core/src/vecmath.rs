//! Small slice-based vector helpers shared by the numeric kernels.
//!
//! Points live in flat `&[f64]` storage with runtime dimension `d` in {2, 3}.
//! Cross products are returned padded to three components; in the plane only
//! the z component is meaningful and the first `rot_dim(2) == 1` slot is used.

/// Number of independent rotations in dimension `d` (1 in 2D, 3 in 3D).
#[inline]
pub fn rot_dim(d: usize) -> usize {
    d * (d - 1) / 2
}

/// Number of rigid-motion generators in dimension `d`: rotations plus translations.
#[inline]
pub fn rigid_dim(d: usize) -> usize {
    rot_dim(d) + d
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sub(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x - y;
    }
}

#[inline]
pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `out += s * a`.
#[inline]
pub fn axpy(s: f64, a: &[f64], out: &mut [f64]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o += s * x;
    }
}

#[inline]
pub fn cross2(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Cross product padded to three slots; only the first `rot_dim(d)` are used.
#[inline]
pub fn cross_padded(d: usize, a: &[f64], b: &[f64]) -> [f64; 3] {
    if d == 2 {
        [cross2(a, b), 0.0, 0.0]
    } else {
        cross3(a, b)
    }
}

/// Value of the rotation generator field with axis index `axis` at point `x`.
///
/// In 2D the single generator is the quarter-turn field `(-y, x)`. In 3D the
/// three generators are `e_axis x x`.
#[inline]
pub fn rotation_generator(d: usize, axis: usize, x: &[f64], out: &mut [f64]) {
    if d == 2 {
        debug_assert_eq!(axis, 0);
        out[0] = -x[1];
        out[1] = x[0];
    } else {
        let mut e = [0.0; 3];
        e[axis] = 1.0;
        let c = cross3(&e, x);
        out[..3].copy_from_slice(&c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross2_orientation() {
        assert_eq!(cross2(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(cross2(&[0.0, 1.0], &[1.0, 0.0]), -1.0);
    }

    #[test]
    fn cross3_matches_padded() {
        let a = [1.0, 2.0, 3.0];
        let b = [-4.0, 0.5, 2.0];
        assert_eq!(cross_padded(3, &a, &b), cross3(&a, &b));
    }

    #[test]
    fn rotation_generator_2d_is_quarter_turn() {
        let mut out = [0.0; 2];
        rotation_generator(2, 0, &[3.0, 4.0], &mut out);
        assert_eq!(out, [-4.0, 3.0]);
    }

    #[test]
    fn rigid_dims() {
        assert_eq!(rigid_dim(2), 3);
        assert_eq!(rigid_dim(3), 6);
        assert_eq!(rot_dim(2), 1);
        assert_eq!(rot_dim(3), 3);
    }
}
