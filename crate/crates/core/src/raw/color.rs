use super::RgbImage;

/// Linear sRGB (D65) to CIE XYZ.
pub const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

/// D65 reference white, `Y = 1`.
pub const D65_WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

// CIE constants in their exact rational form.
const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

/// CIE L*a*b* planes, `L` in `[0, 100]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<f64>; 3],
}

impl LabImage {
    pub fn pixel(&self, idx: usize) -> [f64; 3] {
        [self.planes[0][idx], self.planes[1][idx], self.planes[2][idx]]
    }
}

pub fn xyz_from_linear_rgb(rgb: [f64; 3]) -> [f64; 3] {
    let m = &SRGB_TO_XYZ;
    [
        m[0][0] * rgb[0] + m[0][1] * rgb[1] + m[0][2] * rgb[2],
        m[1][0] * rgb[0] + m[1][1] * rgb[1] + m[1][2] * rgb[2],
        m[2][0] * rgb[0] + m[2][1] * rgb[1] + m[2][2] * rgb[2],
    ]
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

pub fn lab_from_xyz(xyz: [f64; 3]) -> [f64; 3] {
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Scene-linear RGB to L*a*b*. Inputs are clipped to `[0, 1]` first.
pub fn rgb_to_lab(rgb: &RgbImage) -> LabImage {
    let n = rgb.len();
    let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for idx in 0..n {
        let p = rgb.pixel(idx).map(|v| v.clamp(0.0, 1.0));
        let lab = lab_from_xyz(xyz_from_linear_rgb(p));
        for (plane, v) in planes.iter_mut().zip(lab) {
            plane[idx] = v;
        }
    }
    LabImage { width: rgb.width, height: rgb.height, planes }
}
