//! Synthetic stick-figure pose data and its on-disk format.
//!
//! A figure is a torso segment with a head stub above the neck, two arms
//! hanging from the neck and two legs from the hip. The five joints are the
//! free ends: head, left hand, right hand, left foot, right foot. "Left"
//! limbs sit on the +x side of the canonical pose, which keeps the labels
//! consistent with horizontal flipping and its left/right swap.
//!
//! File layout (little-endian):
//!
//! ```text
//! "ADVDATA1"  u32 version  u32 count  u32 joints  u32 side
//! per sample: f32 pixels[side * side], joints x (f32 x, f32 y, u8 visible)
//! u32 CRC32 of every preceding byte
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{AnnotatedImage, Keypoint, Raster};
use crate::rng::{self, Rng};

pub const JOINTS: usize = 5;
pub const SIDE: usize = 64;
pub const JOINT_NAMES: [&str; JOINTS] = ["head", "left_hand", "right_hand", "left_foot", "right_foot"];
/// Joint pairs exchanged by a horizontal flip.
pub const FLIP_PAIRS: [(usize, usize); 2] = [(1, 2), (3, 4)];

pub const DATASET_MAGIC: &[u8; 8] = b"ADVDATA1";
pub const DATASET_VERSION: u32 = 1;

/// Geometry and appearance of the figure family. Angles in radians,
/// lengths in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSpec {
    pub torso_len: f64,
    pub head_len: f64,
    pub arm_len: f64,
    pub leg_len: f64,
    /// Canonical arm angle away from straight down.
    pub arm_spread: f64,
    pub leg_spread: f64,
    /// Per-limb offsets are drawn from `[-limb_jitter, limb_jitter]`.
    pub limb_jitter: f64,
    pub tilt_jitter: f64,
    pub center_jitter: f64,
    pub thickness: f64,
    pub background: f64,
    pub foreground: f64,
    pub max_distractors: usize,
}

impl Default for FigureSpec {
    fn default() -> Self {
        Self {
            torso_len: 16.0,
            head_len: 6.0,
            arm_len: 14.0,
            leg_len: 16.0,
            arm_spread: 45f64.to_radians(),
            leg_spread: 20f64.to_radians(),
            limb_jitter: 60f64.to_radians(),
            tilt_jitter: 15f64.to_radians(),
            center_jitter: 4.0,
            thickness: 2.0,
            background: 0.0,
            foreground: 1.0,
            max_distractors: 3,
        }
    }
}

/// Extra stroke `(from, to, intensity)` that is not part of the figure.
pub type Distractor = ((f64, f64), (f64, f64), f64);

/// One drawn configuration of the figure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub center: (f64, f64),
    pub tilt: f64,
    /// Offsets from canonical for left arm, right arm, left leg, right leg.
    pub limb_offsets: [f64; 4],
}

impl Pose {
    pub fn canonical() -> Self {
        let c = (SIDE as f64 - 1.0) / 2.0;
        Self {
            center: (c, c),
            tilt: 0.0,
            limb_offsets: [0.0; 4],
        }
    }
}

/// Unit vector at `angle` from straight down, turning towards +x.
fn down_dir(angle: f64) -> (f64, f64) {
    (angle.sin(), angle.cos())
}

struct Skeleton {
    neck: (f64, f64),
    hip: (f64, f64),
    head: (f64, f64),
    ends: [(f64, f64); 4],
}

impl FigureSpec {
    fn skeleton(&self, pose: &Pose) -> Skeleton {
        let (cx, cy) = pose.center;
        let (tx, ty) = down_dir(pose.tilt);
        let half = self.torso_len / 2.0;
        let neck = (cx - half * tx, cy - half * ty);
        let hip = (cx + half * tx, cy + half * ty);
        let head = (neck.0 - self.head_len * tx, neck.1 - self.head_len * ty);
        let limb = |origin: (f64, f64), len: f64, angle: f64| {
            let (dx, dy) = down_dir(angle);
            (origin.0 + len * dx, origin.1 + len * dy)
        };
        let o = pose.limb_offsets;
        let ends = [
            limb(neck, self.arm_len, pose.tilt + self.arm_spread + o[0]),
            limb(neck, self.arm_len, pose.tilt - self.arm_spread + o[1]),
            limb(hip, self.leg_len, pose.tilt + self.leg_spread + o[2]),
            limb(hip, self.leg_len, pose.tilt - self.leg_spread + o[3]),
        ];
        Skeleton { neck, hip, head, ends }
    }

    /// Exact joint positions for `pose`, in joint order.
    pub fn joints(&self, pose: &Pose) -> Vec<Keypoint> {
        let s = self.skeleton(pose);
        std::iter::once(s.head).chain(s.ends).map(|(x, y)| Keypoint::new(x, y)).collect()
    }

    /// Strokes drawn for `pose`: head, torso, then one per limb in joint
    /// order. Every joint is the second end of its own stroke.
    pub fn segments(&self, pose: &Pose) -> Vec<((f64, f64), (f64, f64))> {
        let s = self.skeleton(pose);
        vec![
            (s.head, s.neck),
            (s.neck, s.hip),
            (s.neck, s.ends[0]),
            (s.neck, s.ends[1]),
            (s.hip, s.ends[2]),
            (s.hip, s.ends[3]),
        ]
    }

    pub fn random_pose(&self, rng: &mut Rng) -> Pose {
        let c = (SIDE as f64 - 1.0) / 2.0;
        let mut sym = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let center = (c + sym(self.center_jitter), c + sym(self.center_jitter));
        let tilt = sym(self.tilt_jitter);
        let limb_offsets = [
            sym(self.limb_jitter),
            sym(self.limb_jitter),
            sym(self.limb_jitter),
            sym(self.limb_jitter),
        ];
        Pose {
            center,
            tilt,
            limb_offsets,
        }
    }

    /// Renders the figure plus optional distractor strokes.
    pub fn render(&self, pose: &Pose, distractors: &[Distractor]) -> Raster {
        let mut img = Raster::filled(SIDE, SIDE, 1, self.background);
        for (a, b) in self.segments(pose) {
            draw_segment(&mut img, a, b, self.thickness, self.foreground);
        }
        for &(a, b, level) in distractors {
            draw_segment(&mut img, a, b, self.thickness, level);
        }
        for v in img.data_mut() {
            *v = *v as f32 as f64;
        }
        img
    }

    /// The sample at `index` of the stream seeded by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> AnnotatedImage {
        let mut r = rng::stream(seed, index);
        let pose = self.random_pose(&mut r);
        let count = r.random_range(0..=self.max_distractors);
        let distractors: Vec<_> = (0..count)
            .map(|_| {
                let from = (r.random_range(0.0..SIDE as f64), r.random_range(0.0..SIDE as f64));
                let len = r.random_range(6.0..14.0);
                let ang = r.random_range(0.0..2.0 * PI);
                let to = (from.0 + len * ang.cos(), from.1 + len * ang.sin());
                (from, to, r.random_range(0.3..0.7) * self.foreground)
            })
            .collect();
        let image = self.render(&pose, &distractors);
        let keypoints = self
            .joints(&pose)
            .into_iter()
            .map(|k| Keypoint::new(k.x as f32 as f64, k.y as f32 as f64))
            .collect();
        AnnotatedImage { image, keypoints }
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Anti-aliased stroke: coverage falls off linearly over the last pixel
/// beyond half the thickness. Overlaps keep the brighter value.
fn draw_segment(img: &mut Raster, a: (f64, f64), b: (f64, f64), thickness: f64, level: f64) {
    let reach = thickness / 2.0 + 0.5;
    let lo_x = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
    let lo_y = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
    let hi_x = ((a.0.max(b.0) + reach).ceil().max(0.0) as usize).min(img.width() - 1);
    let hi_y = ((a.1.max(b.1) + reach).ceil().max(0.0) as usize).min(img.height() - 1);
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let d = point_segment_distance((x as f64, y as f64), a, b);
            let cover = (reach - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                let v = img.get(y, x, 0).max(cover * level);
                img.set(y, x, 0, v);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => invalid_arg(format!("unknown split {other:?}")),
        }
    }
}

/// Samples plus the index-based split rule: the first `train` share, then
/// validation, then test.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<AnnotatedImage>,
    val_fraction: f64,
    test_fraction: f64,
    /// Generator seed, when the dataset came from [`generate`].
    pub seed: Option<u64>,
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.1;
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;

impl Dataset {
    pub fn new(samples: Vec<AnnotatedImage>) -> Self {
        Self {
            samples,
            val_fraction: DEFAULT_VAL_FRACTION,
            test_fraction: DEFAULT_TEST_FRACTION,
            seed: None,
        }
    }

    pub fn with_splits(mut self, val_fraction: f64, test_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) || !(0.0..1.0).contains(&test_fraction) || val_fraction + test_fraction >= 1.0 {
            return invalid_arg(format!("bad split fractions {val_fraction}, {test_fraction}"));
        }
        self.val_fraction = val_fraction;
        self.test_fraction = test_fraction;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        let n = self.samples.len();
        let n_test = (n as f64 * self.test_fraction).round() as usize;
        let n_val = (n as f64 * self.val_fraction).round() as usize;
        let n_train = n.saturating_sub(n_val + n_test);
        match split {
            Split::Train => 0..n_train,
            Split::Val => n_train..(n_train + n_val).min(n),
            Split::Test => (n_train + n_val).min(n)..n,
        }
    }

    pub fn split(&self, split: Split) -> &[AnnotatedImage] {
        &self.samples[self.split_range(split)]
    }
}

/// `count` samples, index `i` drawn from stream `(seed, i)`.
pub fn generate(spec: &FigureSpec, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return invalid_arg("dataset needs at least one sample");
    }
    let mut ds = Dataset::new((0..count as u64).map(|i| spec.sample(seed, i)).collect());
    ds.seed = Some(seed);
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let per = SIDE * SIDE * 4 + JOINTS * 9;
    let mut buf = Vec::with_capacity(24 + ds.len() * per + 4);
    buf.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION, ds.len() as u32, JOINTS as u32, SIDE as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for s in &ds.samples {
        if s.image.height() != SIDE || s.image.width() != SIDE || s.image.channels() != 1 || s.keypoints.len() != JOINTS {
            return invalid_arg("sample does not match the dataset layout");
        }
        for &v in s.image.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for k in &s.keypoints {
            buf.extend_from_slice(&(k.x as f32).to_le_bytes());
            buf.extend_from_slice(&(k.y as f32).to_le_bytes());
            buf.push(k.visible as u8);
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptFile(msg.to_string())
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 8 + 16 + 4 {
        return Err(corrupt("dataset file too short"));
    }
    if &bytes[..8] != DATASET_MAGIC {
        return Err(corrupt("bad dataset magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(corrupt("dataset CRC mismatch"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(body[off..off + 4].try_into().unwrap());
    let f32_at = |off: usize| f32::from_le_bytes(body[off..off + 4].try_into().unwrap()) as f64;
    let version = u32_at(8);
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let (count, joints, side) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    if side == 0 || side > 4096 || joints > 1024 {
        return Err(corrupt("implausible dataset dimensions"));
    }
    let per = side * side * 4 + joints * 9;
    if body.len() != 24 + count.checked_mul(per).ok_or_else(|| corrupt("sample count overflows"))? {
        return Err(corrupt("dataset length does not match its header"));
    }
    let mut samples = Vec::with_capacity(count);
    let mut off = 24;
    for _ in 0..count {
        let data: Vec<f64> = (0..side * side).map(|i| f32_at(off + 4 * i)).collect();
        off += side * side * 4;
        let image = Raster::new(side, side, 1, data).map_err(|e| corrupt(&e.to_string()))?;
        let mut keypoints = Vec::with_capacity(joints);
        for _ in 0..joints {
            let (x, y, vis) = (f32_at(off), f32_at(off + 4), body[off + 8]);
            if vis > 1 {
                return Err(corrupt("visibility flag is neither 0 nor 1"));
            }
            keypoints.push(Keypoint { x, y, visible: vis == 1 });
            off += 9;
        }
        samples.push(AnnotatedImage { image, keypoints });
    }
    Ok(Dataset::new(samples))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, write_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_index_repeat() {
        let spec = FigureSpec::default();
        assert_eq!(spec.sample(3, 17), spec.sample(3, 17));
        assert_ne!(spec.sample(3, 17), spec.sample(3, 18));
    }

    #[test]
    fn canonical_joints_by_hand() {
        let spec = FigureSpec::default();
        let k = spec.joints(&Pose::canonical());
        let c = 31.5;
        let r = std::f64::consts::FRAC_1_SQRT_2 * 14.0;
        let l20 = (20f64.to_radians().sin() * 16.0, 20f64.to_radians().cos() * 16.0);
        let want = [
            (c, c - 8.0 - 6.0),
            (c + r, c - 8.0 + r),
            (c - r, c - 8.0 + r),
            (c + l20.0, c + 8.0 + l20.1),
            (c - l20.0, c + 8.0 + l20.1),
        ];
        for (got, (x, y)) in k.iter().zip(want) {
            assert!((got.x - x).abs() < 1e-12 && (got.y - y).abs() < 1e-12, "{got:?} vs ({x}, {y})");
            assert!(got.visible);
        }
    }

    #[test]
    fn strokes_cover_their_endpoints() {
        let spec = FigureSpec {
            max_distractors: 0,
            ..FigureSpec::default()
        };
        let pose = Pose::canonical();
        let img = spec.render(&pose, &[]);
        for k in spec.joints(&pose) {
            let (x, y) = (k.x.round() as usize, k.y.round() as usize);
            assert!(img.get(y, x, 0) > 0.5, "{k:?}");
        }
    }

    #[test]
    fn splits_partition_by_index() {
        let ds = Dataset::new(vec![FigureSpec::default().sample(0, 0); 20]);
        assert_eq!(ds.split_range(Split::Train), 0..16);
        assert_eq!(ds.split_range(Split::Val), 16..18);
        assert_eq!(ds.split_range(Split::Test), 18..20);
        let ds = ds.with_splits(0.0, 0.5).unwrap();
        assert_eq!(ds.split(Split::Train).len(), 10);
        assert!(ds.split(Split::Val).is_empty());
        assert!(Dataset::new(vec![]).with_splits(0.5, 0.5).is_err());
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(generate(&FigureSpec::default(), 0, 1).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let ds = generate(&FigureSpec::default(), 3, 9).unwrap();
        let back = read_dataset(&write_dataset(&ds).unwrap()).unwrap();
        assert_eq!(back.samples, ds.samples);
    }

    #[test]
    fn empty_dataset_is_a_valid_file() {
        let bytes = write_dataset(&Dataset::new(vec![])).unwrap();
        assert!(read_dataset(&bytes).unwrap().is_empty());
    }

    #[test]
    fn damage_is_reported() {
        let bytes = write_dataset(&generate(&FigureSpec::default(), 2, 1).unwrap()).unwrap();
        assert!(matches!(read_dataset(&bytes[..bytes.len() - 10]), Err(Error::CorruptFile(_))));
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(read_dataset(&flipped), Err(Error::CorruptFile(_))));
        let mut magic = bytes.clone();
        magic[3] = b'?';
        assert!(matches!(read_dataset(&magic), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn other_versions_are_refused() {
        let mut bytes = write_dataset(&Dataset::new(vec![])).unwrap();
        bytes[8] = 2;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            read_dataset(&bytes),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));
    }
}
