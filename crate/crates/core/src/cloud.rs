//! Point-cloud data model, synthetic indoor scenes, and sparse supervision sampling.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Point3 = [f64; 3];
pub type Rgb = [f64; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloudError {
    #[error("cloud has no points")]
    Empty,
    #[error("field lengths differ: {positions} positions, {colors} colors, {labels} labels")]
    LengthMismatch { positions: usize, colors: usize, labels: usize },
    #[error("label {label} at point {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("class count must be positive")]
    NoClasses,
    #[error("infeasible scene: {0}")]
    InfeasibleScene(&'static str),
    #[error("supervision rate {0} outside (0, 1]")]
    BadRate(f64),
}

/// Labeled point cloud with per-point color.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3>,
    colors: Vec<Rgb>,
    gt_labels: Vec<usize>,
    num_classes: usize,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>, colors: Vec<Rgb>, gt_labels: Vec<usize>, num_classes: usize) -> Result<Self, CloudError> {
        if positions.len() != colors.len() || positions.len() != gt_labels.len() {
            return Err(CloudError::LengthMismatch {
                positions: positions.len(),
                colors: colors.len(),
                labels: gt_labels.len(),
            });
        }
        if positions.is_empty() {
            return Err(CloudError::Empty);
        }
        if num_classes == 0 {
            return Err(CloudError::NoClasses);
        }
        if let Some((index, &label)) = gt_labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(CloudError::LabelOutOfRange { index, label, classes: num_classes });
        }
        Ok(Self { positions, colors, gt_labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn gt_labels(&self) -> &[usize] {
        &self.gt_labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Point count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.gt_labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copy of the cloud shifted by `offset`.
    pub fn translated(&self, offset: Point3) -> Self {
        let mut out = self.clone();
        for p in &mut out.positions {
            for (c, o) in p.iter_mut().zip(offset) {
                *c += o;
            }
        }
        out
    }
}

/// Per-point annotation flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionMask {
    supervised: Vec<bool>,
}

impl SupervisionMask {
    pub fn new(supervised: Vec<bool>) -> Self {
        Self { supervised }
    }

    pub fn none(n: usize) -> Self {
        Self { supervised: vec![false; n] }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.supervised
    }

    pub fn len(&self) -> usize {
        self.supervised.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supervised.is_empty()
    }

    pub fn is_supervised(&self, i: usize) -> bool {
        self.supervised[i]
    }

    pub fn count(&self) -> usize {
        self.supervised.iter().filter(|&&s| s).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.supervised.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i)
    }
}

/// Points selected for class `class_size` under rate `r` on a cloud of `n`
/// points and `c` classes: `min(class_size, max(1, floor(r n / c)))`.
pub fn class_budget(n: usize, classes: usize, rate: f64, class_size: usize) -> usize {
    let per_class = libm::floor(rate * n as f64 / classes as f64) as usize;
    class_size.min(per_class.max(1))
}

/// Annotates a random subset of points, spreading the budget `r n` evenly over classes.
pub fn sample_supervision(cloud: &PointCloud, rate: f64, seed: u64) -> Result<SupervisionMask, CloudError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(CloudError::BadRate(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); cloud.num_classes()];
    for (i, &l) in cloud.gt_labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut mask = vec![false; cloud.len()];
    for members in &by_class {
        if members.is_empty() {
            continue;
        }
        let k = class_budget(cloud.len(), cloud.num_classes(), rate, members.len());
        for &i in members.choose_multiple(&mut rng, k) {
            mask[i] = true;
        }
    }
    Ok(SupervisionMask::new(mask))
}

/// Layout of a synthetic room.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub num_objects: usize,
    pub classes: usize,
    /// Side length of the square floor, meters.
    pub extent: f64,
    pub points_per_object: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { num_objects: 6, classes: 4, extent: 4.0, points_per_object: 170 }
    }
}

const SENSOR_NOISE: f64 = 0.004;
const COLOR_NOISE: f64 = 0.05;

fn class_color(class: usize) -> Rgb {
    const PALETTE: [Rgb; 8] = [
        [0.55, 0.50, 0.45],
        [0.80, 0.78, 0.70],
        [0.70, 0.30, 0.25],
        [0.25, 0.40, 0.70],
        [0.30, 0.65, 0.35],
        [0.75, 0.65, 0.20],
        [0.55, 0.30, 0.60],
        [0.20, 0.60, 0.65],
    ];
    PALETTE[class % PALETTE.len()]
}

struct SceneBuilder {
    rng: ChaCha8Rng,
    positions: Vec<Point3>,
    colors: Vec<Rgb>,
    labels: Vec<usize>,
}

impl SceneBuilder {
    fn jitter(&mut self, p: Point3) -> Point3 {
        let mut q = p;
        for c in &mut q {
            *c += self.rng.gen_range(-SENSOR_NOISE..=SENSOR_NOISE);
        }
        q
    }

    fn push(&mut self, p: Point3, base: Rgb, label: usize) {
        let p = self.jitter(p);
        let mut rgb = base;
        for c in &mut rgb {
            *c = (*c + self.rng.gen_range(-COLOR_NOISE..=COLOR_NOISE)).clamp(0.0, 1.0);
        }
        self.positions.push(p);
        self.colors.push(rgb);
        self.labels.push(label);
    }

    /// Object tint: the class color shifted by a per-object offset.
    fn tint(&mut self, class: usize) -> Rgb {
        let mut rgb = class_color(class);
        for c in &mut rgb {
            *c = (*c + self.rng.gen_range(-0.04..=0.04)).clamp(0.0, 1.0);
        }
        rgb
    }

    fn floor(&mut self, extent: f64, count: usize) {
        let color = self.tint(0);
        for _ in 0..count {
            let p = [self.rng.gen_range(0.0..extent), self.rng.gen_range(0.0..extent), 0.0];
            self.push(p, color, 0);
        }
    }

    /// Walls along the `x = 0` and `y = 0` edges of the floor.
    fn walls(&mut self, extent: f64, height: f64, count: usize) {
        let color = self.tint(1);
        for k in 0..count {
            let along = self.rng.gen_range(0.0..extent);
            let up = self.rng.gen_range(0.0..height);
            let p = if k % 2 == 0 { [0.0, along, up] } else { [along, 0.0, up] };
            self.push(p, color, 1);
        }
    }

    /// Box resting on the floor; five faces (no bottom), points spread by face area.
    fn cuboid(&mut self, center: [f64; 2], half: [f64; 3], class: usize, count: usize) {
        let color = self.tint(class);
        let (sx, sy, sz) = (2.0 * half[0], 2.0 * half[1], 2.0 * half[2]);
        let areas = [sx * sy, sx * sz, sx * sz, sy * sz, sy * sz];
        let total: f64 = areas.iter().sum();
        for _ in 0..count {
            let mut pick = self.rng.gen_range(0.0..total);
            let mut face = 0;
            while face < 4 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let u: f64 = self.rng.gen_range(-1.0..=1.0);
            let v: f64 = self.rng.gen_range(-1.0..=1.0);
            let (x, y, z) = match face {
                0 => (u * half[0], v * half[1], half[2]),
                1 => (u * half[0], -half[1], v * half[2]),
                2 => (u * half[0], half[1], v * half[2]),
                3 => (-half[0], u * half[1], v * half[2]),
                _ => (half[0], u * half[1], v * half[2]),
            };
            self.push([center[0] + x, center[1] + y, z + half[2]], color, class);
        }
    }

    /// Sphere resting on the floor.
    fn sphere(&mut self, center: [f64; 2], radius: f64, class: usize, count: usize) {
        let color = self.tint(class);
        for _ in 0..count {
            let z: f64 = self.rng.gen_range(-1.0..=1.0);
            let theta: f64 = self.rng.gen_range(0.0..core::f64::consts::TAU);
            let r = libm::sqrt((1.0 - z * z).max(0.0));
            let p = [
                center[0] + radius * r * libm::cos(theta),
                center[1] + radius * r * libm::sin(theta),
                radius + radius * z,
            ];
            self.push(p, color, class);
        }
    }
}

/// Generates a room: floor (class 0), two walls (class 1), and
/// `num_objects` boxes and spheres cycling through classes `2..c`.
///
/// The floor carries `4 * points_per_object` points, the walls together
/// `2 * points_per_object`, each object `points_per_object`. With `c = 2`
/// no objects are placed.
pub fn gen_synthetic(spec: &SceneSpec, seed: u64) -> Result<PointCloud, CloudError> {
    if spec.classes < 2 {
        return Err(CloudError::InfeasibleScene("need at least 2 classes"));
    }
    if spec.points_per_object < 10 {
        return Err(CloudError::InfeasibleScene("need at least 10 points per object"));
    }
    if spec.classes > spec.num_objects + 2 {
        return Err(CloudError::InfeasibleScene("more classes than floor, walls and objects can cover"));
    }
    if !(spec.extent.is_finite() && spec.extent > 0.0) {
        return Err(CloudError::InfeasibleScene("extent must be positive"));
    }
    let mut b = SceneBuilder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        positions: Vec::new(),
        colors: Vec::new(),
        labels: Vec::new(),
    };
    let ppo = spec.points_per_object;
    let extent = spec.extent;
    b.floor(extent, 4 * ppo);
    b.walls(extent, 0.6 * extent, 2 * ppo);

    if spec.classes > 2 {
        let object_classes = spec.classes - 2;
        // Objects sit on a jittered grid of cells so footprints never overlap.
        let cells_per_side = (1..).find(|k| k * k >= spec.num_objects).unwrap_or(1);
        let margin = 0.1 * extent;
        let cell = (extent - margin) / cells_per_side as f64;
        let mut order: Vec<usize> = (0..cells_per_side * cells_per_side).collect();
        order.shuffle(&mut b.rng);
        for (k, &slot) in order.iter().take(spec.num_objects).enumerate() {
            let class = 2 + k % object_classes;
            let max_half = 0.3 * cell;
            let cx = margin + (slot % cells_per_side) as f64 * cell + 0.5 * cell;
            let cy = margin + (slot / cells_per_side) as f64 * cell + 0.5 * cell;
            let jitter = 0.5 * cell - max_half;
            let center = [cx + b.rng.gen_range(-jitter..=jitter), cy + b.rng.gen_range(-jitter..=jitter)];
            if k % 2 == 0 {
                let half = [
                    b.rng.gen_range(0.5 * max_half..=max_half),
                    b.rng.gen_range(0.5 * max_half..=max_half),
                    b.rng.gen_range(0.5 * max_half..=max_half),
                ];
                b.cuboid(center, half, class, ppo);
            } else {
                let radius = b.rng.gen_range(0.6 * max_half..=max_half);
                b.sphere(center, radius, class, ppo);
            }
        }
    }
    PointCloud::new(b.positions, b.colors, b.labels, spec.classes)
}
