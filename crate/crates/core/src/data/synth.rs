//! Procedural paired visible/thermal faces.

use autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::records::Domain;
use crate::masks::{LandmarkSet, Point};

/// Side length of every synthetic image.
pub const SYNTH_SIZE: usize = 128;
/// Focal length, in pixels, of the yaw projection.
const FOCAL: f64 = 160.0;
/// Horizontal travel of the face center per unit `sin(yaw)`.
const YAW_SHIFT: f64 = 16.0;
const THERMAL_BLUR_SIGMA: f64 = 1.5;

/// Identity-specific facial layout and coloring, in frontal pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceGeometry {
    pub center: Point,
    pub face_half_width: f64,
    pub face_half_height: f64,
    pub eye_y: f64,
    /// Half the interocular distance.
    pub eye_half_sep: f64,
    pub eye_rx: f64,
    pub eye_ry: f64,
    pub brow_raise: f64,
    pub brow_thickness: f64,
    pub nose_length: f64,
    pub nose_half_width: f64,
    pub mouth_drop: f64,
    pub mouth_half_width: f64,
    pub lip_thickness: f64,
    /// 0 = light, 1 = dark.
    pub skin_tone: f64,
    /// 0 = dark, 1 = light.
    pub hair_tone: f64,
    pub hairline_drop: f64,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl FaceGeometry {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &mut rng;
        let cx = 64.0;
        let cy = uniform(r, 64.0, 70.0);
        let face_half_width = uniform(r, 34.0, 44.0);
        let face_half_height = uniform(r, 46.0, 54.0);
        let eye_y = cy - uniform(r, 10.0, 18.0);
        let eye_half_sep = uniform(r, 13.0, 21.0);
        let eye_rx = uniform(r, 4.0, 6.5);
        let eye_ry = uniform(r, 2.2, 3.4);
        let brow_raise = uniform(r, 6.5, 10.0);
        let brow_thickness = uniform(r, 1.3, 2.8);
        let nose_length = uniform(r, 14.0, 24.0);
        let nose_half_width = uniform(r, 4.5, 8.5);
        let max_drop = (cy + face_half_height - 10.0) - (eye_y + nose_length);
        let mouth_drop = uniform(r, 8.0, 15.0).min(max_drop);
        let mouth_half_width = uniform(r, 10.0, 19.0);
        let lip_thickness = uniform(r, 2.5, 4.5);
        let skin_tone = uniform(r, 0.0, 1.0);
        let hair_tone = uniform(r, 0.0, 1.0);
        let hairline_drop = uniform(r, 0.0, 8.0);
        Self {
            center: Point::new(cx, cy),
            face_half_width,
            face_half_height,
            eye_y,
            eye_half_sep,
            eye_rx,
            eye_ry,
            brow_raise,
            brow_thickness,
            nose_length,
            nose_half_width,
            mouth_drop,
            mouth_half_width,
            lip_thickness,
            skin_tone,
            hair_tone,
            hairline_drop,
        }
    }

    pub fn nose_tip_y(&self) -> f64 {
        self.eye_y + self.nose_length
    }

    pub fn mouth_y(&self) -> f64 {
        self.nose_tip_y() + self.mouth_drop
    }

    fn hairline_y(&self) -> f64 {
        self.center.y - self.face_half_height + 12.0 + self.hairline_drop
    }

    /// Frontal landmarks moved by the yaw projection.
    pub fn landmarks(&self, pose_deg: f64) -> LandmarkSet {
        let yaw = Yaw::new(pose_deg);
        let p = |x: f64, y: f64| Point::new(self.center.x + yaw.project(x), y);
        LandmarkSet::from_points([
            p(-self.eye_half_sep, self.eye_y),
            p(self.eye_half_sep, self.eye_y),
            p(0.0, self.nose_tip_y()),
            p(-self.mouth_half_width, self.mouth_y()),
            p(self.mouth_half_width, self.mouth_y()),
        ])
    }
}

/// Yaw rotation of the face plane seen through a pinhole camera.
#[derive(Clone, Copy, Debug)]
pub struct Yaw {
    cos: f64,
    sin: f64,
}

impl Yaw {
    pub fn new(deg: f64) -> Self {
        let t = deg.to_radians();
        Self {
            cos: t.cos(),
            sin: t.sin(),
        }
    }

    /// Image-plane offset of a face point at horizontal offset `x` from the face center.
    pub fn project(&self, x: f64) -> f64 {
        YAW_SHIFT * self.sin + x * self.cos / (1.0 + x * self.sin / FOCAL)
    }

    /// Face-plane offset seen at image offset `u`, if the ray meets the visible side.
    pub fn unproject(&self, u: f64) -> Option<f64> {
        let v = u - YAW_SHIFT * self.sin;
        let den = self.cos - v * self.sin / FOCAL;
        (den > 0.05).then(|| v / den)
    }
}

/// Everything that determines one rendered image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticFaceSpec {
    pub identity_seed: u64,
    pub pose: f64,
    pub domain: Domain,
    pub expression: u32,
}

fn smooth_cover(signed_dist: f64, width: f64) -> f64 {
    (0.5 - signed_dist / width).clamp(0.0, 1.0)
}

/// Approximate signed distance to an axis-aligned ellipse, negative inside.
fn ellipse_sd(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    ((dx * dx + dy * dy).sqrt() - 1.0) * rx.min(ry)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn over(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    *dst = lerp3(*dst, src, alpha);
}

/// Mouth curvature per expression: neutral, smile, frown, wide.
fn expression_shape(expression: u32) -> (f64, f64) {
    match expression % 4 {
        0 => (0.0, 1.0),
        1 => (-3.0, 1.0),
        2 => (2.5, 0.9),
        _ => (0.0, 1.2),
    }
}

/// Visible color and face coverage at face-plane offset `x` (from the center) and row `y`.
fn shade(g: &FaceGeometry, x: f64, y: f64, background: [f64; 3], expression: u32) -> ([f64; 3], f64) {
    let mut c = background;
    let hair = lerp3([0.10, 0.07, 0.05], [0.62, 0.50, 0.34], g.hair_tone);
    let skin = lerp3([0.96, 0.80, 0.69], [0.42, 0.28, 0.19], g.skin_tone);
    let (a, b) = (g.face_half_width, g.face_half_height);
    let cy = g.center.y;

    let hair_sd = ellipse_sd(x, y, 0.0, cy - 6.0, a + 6.0, b + 6.0).max(y - (cy + 6.0));
    over(&mut c, hair, smooth_cover(hair_sd, 1.5));

    let face_sd = ellipse_sd(x, y, 0.0, cy, a, b);
    let face = smooth_cover(face_sd, 1.5);
    let (dx, dy) = (x / a, (y - cy) / b);
    let lit = 0.78 + 0.22 * (1.0 - (dx * dx + dy * dy)).max(0.0).sqrt();
    over(&mut c, skin.map(|v| v * lit), face);
    over(&mut c, hair, face * smooth_cover(y - g.hairline_y(), 2.0));

    let brow = hair.map(|v| v * 0.6);
    for side in [-1.0, 1.0] {
        let ex = side * g.eye_half_sep;
        let by = g.eye_y - g.brow_raise;
        over(
            &mut c,
            brow,
            smooth_cover(ellipse_sd(x, y, ex, by, g.eye_rx + 2.5, g.brow_thickness), 1.0),
        );
        over(
            &mut c,
            [0.95, 0.94, 0.92],
            smooth_cover(ellipse_sd(x, y, ex, g.eye_y, g.eye_rx, g.eye_ry), 1.0),
        );
        over(
            &mut c,
            [0.16, 0.11, 0.08],
            smooth_cover(ellipse_sd(x, y, ex, g.eye_y, g.eye_ry * 0.9, g.eye_ry * 0.9), 1.0),
        );
    }

    let tip = g.nose_tip_y();
    let ridge = smooth_cover(
        ellipse_sd(
            x,
            y,
            0.0,
            tip - g.nose_length / 2.0,
            g.nose_half_width,
            g.nose_length / 2.0,
        ),
        2.0,
    );
    over(&mut c, skin.map(|v| v * 0.78), ridge * 0.6);
    for side in [-1.0, 1.0] {
        let n = smooth_cover(ellipse_sd(x, y, side * g.nose_half_width * 0.5, tip, 1.8, 1.2), 1.0);
        over(&mut c, [0.20, 0.12, 0.10], n);
    }

    let (curve, width) = expression_shape(expression);
    let mw = g.mouth_half_width * width;
    let t = (x / mw).clamp(-1.0, 1.0);
    let my = g.mouth_y() + curve * (1.0 - t * t);
    let lips = lerp3([0.78, 0.32, 0.32], [0.45, 0.18, 0.18], g.skin_tone);
    over(
        &mut c,
        lips,
        smooth_cover(ellipse_sd(x, y, 0.0, my, mw, g.lip_thickness), 1.0),
    );
    (c, face)
}

fn background(u: f64, v: f64) -> [f64; 3] {
    let t = v / SYNTH_SIZE as f64;
    let s = u / SYNTH_SIZE as f64;
    [0.55 - 0.08 * t + 0.03 * s, 0.60 - 0.08 * t, 0.68 - 0.06 * t]
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Renders `[3, 128, 128]` (visible) or `[1, 128, 128]` (thermal) in `[0, 1]`.
pub fn render(spec: &SyntheticFaceSpec) -> Tensor<f32> {
    let g = FaceGeometry::from_seed(spec.identity_seed);
    let yaw = Yaw::new(spec.pose);
    let n = SYNTH_SIZE;
    let mut rgb = vec![[0.0f64; 3]; n * n];
    let mut face = vec![0.0f64; n * n];
    for r in 0..n {
        for col in 0..n {
            let (u, v) = (col as f64 + 0.5, r as f64 + 0.5);
            let bg = background(u, v);
            let (c, f) = match yaw.unproject(u - g.center.x) {
                Some(x) => shade(&g, x, v, bg, spec.expression),
                None => (bg, 0.0),
            };
            rgb[r * n + col] = c;
            face[r * n + col] = f;
        }
    }
    match spec.domain {
        Domain::Visible => {
            let mut data = vec![0.0f32; 3 * n * n];
            for (i, c) in rgb.iter().enumerate() {
                for ch in 0..3 {
                    data[ch * n * n + i] = c[ch].clamp(0.0, 1.0) as f32;
                }
            }
            Tensor::new(&[3, n, n], data)
        }
        Domain::Thermal => {
            let heat: Vec<f64> = rgb
                .iter()
                .zip(&face)
                .map(|(c, &f)| {
                    let l = luminance(*c);
                    let outside = if l < 0.35 { 0.30 } else { 0.06 };
                    let inside = 0.95 - 0.65 * l;
                    f * inside + (1.0 - f) * outside
                })
                .collect();
            let blurred = gaussian_blur(&heat, n, n, THERMAL_BLUR_SIGMA);
            Tensor::new(&[1, n, n], blurred.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect())
        }
    }
}

/// Separable Gaussian blur with clamped borders.
fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                out[r * w + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| {
                        let o = k as isize - radius;
                        let (rr, cc) = if horizontal {
                            (r as isize, (c as isize + o).clamp(0, w as isize - 1))
                        } else {
                            ((r as isize + o).clamp(0, h as isize - 1), c as isize)
                        };
                        wt * src[rr as usize * w + cc as usize]
                    })
                    .sum();
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Per-identity seeds drawn from a dataset seed.
pub fn identity_seeds(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}
