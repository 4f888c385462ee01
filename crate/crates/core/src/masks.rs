//! Binary component masks built from five facial landmarks.

use std::fmt;
use std::path::{Path, PathBuf};

use autograd::{Float, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::synth::FaceGeometry;
use crate::error::{Error, Result};

/// Minimum interocular distance, in pixels, for a usable landmark set.
pub const MIN_INTEROCULAR: f64 = 4.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn translate(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn distance(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Five-point landmarks in pixel coordinates; pixel `(r, c)` covers `[c, c+1) x [r, r+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub left_eye: Point,
    pub right_eye: Point,
    pub nose: Point,
    pub mouth_left: Point,
    pub mouth_right: Point,
}

impl LandmarkSet {
    pub fn points(&self) -> [Point; 5] {
        [
            self.left_eye,
            self.right_eye,
            self.nose,
            self.mouth_left,
            self.mouth_right,
        ]
    }

    pub fn from_points(p: [Point; 5]) -> Self {
        Self {
            left_eye: p[0],
            right_eye: p[1],
            nose: p[2],
            mouth_left: p[3],
            mouth_right: p[4],
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::from_points(self.points().map(|p| p.translate(dx, dy)))
    }

    pub fn interocular(&self) -> f64 {
        self.left_eye.distance(self.right_eye)
    }

    /// Checks the points against a `(height, width)` frame.
    pub fn validate(&self, size: (usize, usize)) -> Result<()> {
        let d = self.interocular();
        if d.is_nan() || d < MIN_INTEROCULAR {
            return Err(Error::LandmarksCollapsed {
                distance: d,
                min: MIN_INTEROCULAR,
            });
        }
        let (h, w) = (size.0 as f64, size.1 as f64);
        for (name, p) in NAMES.iter().zip(self.points()) {
            if !(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h) {
                return Err(Error::InvalidLandmarks(format!(
                    "{name} ({:.2}, {:.2}) lies outside the {}x{} frame",
                    p.x, p.y, size.1, size.0
                )));
            }
        }
        if self.left_eye.x >= self.right_eye.x {
            return Err(Error::InvalidLandmarks(
                "left eye must lie left of the right eye".into(),
            ));
        }
        Ok(())
    }
}

const NAMES: [&str; 5] = ["left_eye", "right_eye", "nose", "mouth_left", "mouth_right"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    LeftEyeBrow,
    RightEyeBrow,
    Nose,
    Mouth,
}

/// Axis-aligned box `[x0, x1) x [y0, y1)` in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentBox {
    pub component: Component,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl ComponentBox {
    fn centered(component: Component, c: Point, w: f64, h: f64) -> Self {
        Self {
            component,
            x0: c.x - w / 2.0,
            y0: c.y - h / 2.0,
            x1: c.x + w / 2.0,
            y1: c.y + h / 2.0,
        }
    }

    fn clip(self, h: f64, w: f64) -> Self {
        Self {
            x0: self.x0.clamp(0.0, w),
            y0: self.y0.clamp(0.0, h),
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            ..self
        }
    }

    /// Whether the pixel at row `r`, column `c` has its center inside the box.
    pub fn contains_pixel(&self, r: usize, c: usize) -> bool {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Binary mask `[1, H, W]` with the boxes it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentMask {
    pub mask: Tensor<f32>,
    pub boxes: Vec<ComponentBox>,
}

impl ComponentMask {
    pub fn height(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[2]
    }

    pub fn area(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v != 0.0).count()
    }

    /// Mask with every pixel set to `value` (0 or 1) and no boxes.
    pub fn filled(size: (usize, usize), value: bool) -> Self {
        Self {
            mask: Tensor::full(&[1, size.0, size.1], if value { 1.0 } else { 0.0 }),
            boxes: Vec::new(),
        }
    }
}

/// Eye boxes are sized relative to the interocular distance `d`.
const EYE_BOX: (f64, f64) = (0.45, 0.35);
const EYE_RAISE: f64 = 0.1;
const NOSE_BOX: (f64, f64) = (0.35, 0.45);
const MOUTH_PAD: f64 = 0.15;

/// Union of eye+brow, nose and mouth boxes, clipped to the frame.
pub fn mask_from_landmarks(lm: &LandmarkSet, size: (usize, usize)) -> Result<ComponentMask> {
    lm.validate(size)?;
    let d = lm.interocular();
    let (h, w) = (size.0 as f64, size.1 as f64);
    let eye = |c: Component, p: Point| {
        ComponentBox::centered(c, p.translate(0.0, -EYE_RAISE * d), EYE_BOX.0 * d, EYE_BOX.1 * d)
    };
    let pad = MOUTH_PAD * d;
    let mouth = ComponentBox {
        component: Component::Mouth,
        x0: lm.mouth_left.x.min(lm.mouth_right.x) - pad,
        x1: lm.mouth_left.x.max(lm.mouth_right.x) + pad,
        y0: lm.mouth_left.y.min(lm.mouth_right.y) - pad,
        y1: lm.mouth_left.y.max(lm.mouth_right.y) + pad,
    };
    let boxes: Vec<ComponentBox> = [
        eye(Component::LeftEyeBrow, lm.left_eye),
        eye(Component::RightEyeBrow, lm.right_eye),
        ComponentBox::centered(Component::Nose, lm.nose, NOSE_BOX.0 * d, NOSE_BOX.1 * d),
        mouth,
    ]
    .into_iter()
    .map(|b| b.clip(h, w))
    .collect();

    let mut data = vec![0.0f32; size.0 * size.1];
    for (i, v) in data.iter_mut().enumerate() {
        let (r, c) = (i / size.1, i % size.1);
        if boxes.iter().any(|b| b.contains_pixel(r, c)) {
            *v = 1.0;
        }
    }
    Ok(ComponentMask {
        mask: Tensor::new(&[1, size.0, size.1], data),
        boxes,
    })
}

fn check_mask_size(m: &ComponentMask, shape: &[usize]) -> Result<()> {
    let n = shape.len();
    if n < 3 || shape[n - 2] != m.height() || shape[n - 1] != m.width() {
        return Err(Error::Shape(format!(
            "mask {}x{} cannot gate an image of shape {shape:?}",
            m.height(),
            m.width()
        )));
    }
    Ok(())
}

/// `M * img` for `img` of shape `[C, H, W]` or `[B, C, H, W]`.
pub fn apply_mask<T: Float>(m: &ComponentMask, img: &Tensor<T>) -> Result<Tensor<T>> {
    check_mask_size(m, img.shape())?;
    let plane = m.height() * m.width();
    let mask = m.mask.data();
    let mut out = img.clone();
    for chunk in out.data_mut().chunks_mut(plane) {
        for (v, &k) in chunk.iter_mut().zip(mask) {
            if k == 0.0 {
                *v = T::zero();
            }
        }
    }
    Ok(out)
}

/// Stacks per-element masks into a `[B, C, H, W]` gate.
pub fn mask_batch<T: Float>(masks: &[&ComponentMask], channels: usize) -> Result<Tensor<T>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no masks to stack".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(masks.len() * channels * h * w);
    for m in masks {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::Shape("masks in a batch must share one size".into()));
        }
        for _ in 0..channels {
            data.extend(m.mask.data().iter().map(|&v| T::from_f64(v as f64)));
        }
    }
    Ok(Tensor::new(&[masks.len(), channels, h, w], data))
}

/// `gate * img` on the graph; `gate` is a `[B, C, H, W]` tensor from [`mask_batch`].
pub fn apply_mask_var<'g, T: Float>(gate: &Tensor<T>, img: Var<'g, T>) -> Result<Var<'g, T>> {
    if gate.shape() != img.shape().as_slice() {
        return Err(Error::Shape(format!(
            "mask gate {:?} vs image {:?}",
            gate.shape(),
            img.shape()
        )));
    }
    Ok(img.mul_const(gate.clone()))
}

/// Landmarks of the synthetic face with this identity seed at `pose` degrees of yaw.
pub fn synthetic_landmarks(identity_seed: u64, pose: f64) -> LandmarkSet {
    FaceGeometry::from_seed(identity_seed).landmarks(pose)
}

/// One landmark record: image path plus five points.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkRecord {
    pub image: PathBuf,
    pub landmarks: LandmarkSet,
}

impl fmt::Display for LandmarkRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.image.display())?;
        for p in self.landmarks.points() {
            write!(f, " {} {}", p.x, p.y)?;
        }
        Ok(())
    }
}

impl LandmarkRecord {
    /// Parses `path x1 y1 ... x5 y5`.
    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let mut fields = line.split_whitespace();
        let image = fields.next().ok_or("empty landmark record")?;
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| format!("bad coordinate `{f}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if values.len() != 10 {
            return Err(format!("expected 10 coordinates, found {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        let p = |i: usize| Point::new(values[2 * i], values[2 * i + 1]);
        Ok(Self {
            image: PathBuf::from(image),
            landmarks: LandmarkSet::from_points([p(0), p(1), p(2), p(3), p(4)]),
        })
    }
}

/// Reads every record in a landmark file; blank lines and `#` comments are skipped.
pub fn read_landmark_file(path: &Path) -> Result<Vec<LandmarkRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            LandmarkRecord::parse(l).map_err(|message| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })
        })
        .collect()
}

pub fn write_landmark_file(path: &Path, records: &[LandmarkRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
