//! Fixed derivative kernels used by the TCB edge branches, row-major 3×3.

pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
/// 4-neighbour Laplacian.
pub const LAPLACIAN: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedKernels {
    pub sobel_x: [f64; 9],
    pub sobel_y: [f64; 9],
    pub laplacian: [f64; 9],
}

pub fn fixed_kernels() -> FixedKernels {
    FixedKernels { sobel_x: SOBEL_X, sobel_y: SOBEL_Y, laplacian: LAPLACIAN }
}

pub fn kernel_sum(k: &[f64; 9]) -> f64 {
    k.iter().sum()
}
