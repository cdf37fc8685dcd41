//! Primaries conversion through CIE XYZ (D65).

use crate::image::{Gamut, LinearImage, Rgb};

pub type Mat3 = [[f64; 3]; 3];

pub const BT709_TO_XYZ: Mat3 = [
    [0.41239079926595948129, 0.35758433938387796373, 0.1804807884018342875],
    [0.21263900587151035754, 0.71516867876775592746, 0.072192315360733715002],
    [0.019330818715591850685, 0.11919477979462598791, 0.95053215224966058086],
];

/// M_S in the formation model.
pub const XYZ_TO_BT709: Mat3 = [
    [3.2409699419045213438, -1.5373831775700934579, -0.49861076029300328366],
    [-0.96924363628087982613, 1.8759675015077206677, 0.041555057407175612476],
    [0.055630079696993608459, -0.20397695888897656435, 1.0569715142428785607],
];

pub const BT2020_TO_XYZ: Mat3 = [
    [0.63695804830129129388, 0.14461690358620837373, 0.16888097516417206491],
    [0.26270021201126703081, 0.67799807151887102273, 0.059301716469861946457],
    [0.0, 0.028072693049087507842, 1.0609850577107909116],
];

/// M_H in the formation model.
pub const XYZ_TO_BT2020: Mat3 = [
    [1.7166511879712676717, -0.35567078377639238493, -0.25336628137365979986],
    [-0.66668435183248898753, 1.6164812366349390519, 0.015768545813911131199],
    [0.017639857445310913335, -0.04277061325780865288, 0.94210312123547397208],
];

pub const BT709_TO_BT2020: Mat3 = [
    [0.62740389593469907874, 0.32928303837788369393, 0.043313065687417227337],
    [0.069097289358232077443, 0.91954039507545874539, 0.011362315566309177169],
    [0.016391438875150279368, 0.088013307877225755331, 0.8955952532476239653],
];

pub const BT2020_TO_BT709: Mat3 = [
    [1.6604910021084344048, -0.5876411387885495269, -0.072849863319884877941],
    [-0.12455047452159074035, 1.1328998971259602173, -0.0083494226043694769223],
    [-0.018150763354905303595, -0.10057889800800737968, 1.1187296613629126833],
];

pub const D65_WHITE_XYZ: Rgb = [0.95045592705167173252, 1.0, 1.0890577507598784195];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_vec(m: &Mat3, v: Rgb) -> Rgb {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Matrix taking `src` components to `dst` components.
pub fn conversion_matrix(src: Gamut, dst: Gamut) -> Mat3 {
    use Gamut::*;
    match (src, dst) {
        (a, b) if a == b => IDENTITY,
        (Bt709, Bt2020) => BT709_TO_BT2020,
        (Bt2020, Bt709) => BT2020_TO_BT709,
        (Bt709, Xyz) => BT709_TO_XYZ,
        (Bt2020, Xyz) => BT2020_TO_XYZ,
        (Xyz, Bt709) => XYZ_TO_BT709,
        (Xyz, Bt2020) => XYZ_TO_BT2020,
        _ => unreachable!("all gamut pairs are covered"),
    }
}

/// Luminance (CIE Y) weights of a gamut's components.
pub fn luminance_weights(gamut: Gamut) -> Rgb {
    match gamut {
        Gamut::Bt709 => BT709_TO_XYZ[1],
        Gamut::Bt2020 => BT2020_TO_XYZ[1],
        Gamut::Xyz => [0.0, 1.0, 0.0],
    }
}

pub fn luminance(gamut: Gamut, p: Rgb) -> f64 {
    let w = luminance_weights(gamut);
    w[0] * p[0] + w[1] * p[1] + w[2] * p[2]
}

/// Per-pixel 3×3 conversion. Negative out-of-gamut components are kept.
pub fn gamut_convert(img: &LinearImage, dst: Gamut) -> LinearImage {
    if img.gamut() == dst {
        return img.clone();
    }
    let m = conversion_matrix(img.gamut(), dst);
    let pixels = img.pixels().iter().map(|&p| mat_vec(&m, p)).collect();
    img.with_pixels(dst, pixels)
}
