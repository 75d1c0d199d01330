//! Deterministic synthetic multi-view worlds.
//!
//! Scenes are sparse 3D point clouds from four shape families, rendered by
//! splatting each visible point through the pinhole model. Ground-truth
//! per-patch depth, camera extrinsics, and class labels come out exact,
//! which is what the evaluation suite needs. Everything is a pure function
//! of (config, seed).

use crate::checkpoint::{self, Entry};
use crate::error::{Error, Result};
use crate::geometry::{
    axis_angle_rotation, mat_vec, project, world_to_camera, CameraExtrinsics, CameraIntrinsics,
    Mat3, Point3,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const NUM_SCENE_CLASSES: usize = 4;
pub const MANIFEST_VERSION: u32 = 1;

/// Pixel intensities accumulate and clamp at this many overlapping points.
const SPLAT_SATURATION: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoint {
    pub pos: Point3,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub class_id: usize,
    pub points: Vec<ScenePoint>,
    /// Bounding radius about the origin.
    pub extent: f64,
}

/// Shape families: 0 line, 1 ring, 2 cross, 3 blob pair. Each scene gets
/// a random 3D orientation so no class is axis-aligned.
pub fn generate_scene(class_id: usize, rng: &mut Rng) -> Result<Scene> {
    if class_id >= NUM_SCENE_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "unknown scene class {class_id} (catalog has {NUM_SCENE_CLASSES})"
        )));
    }
    let orient = random_rotation(rng);
    let jitter = 0.03;
    let mut pts: Vec<[f64; 3]> = Vec::new();
    match class_id {
        0 => {
            // line
            for i in 0..40 {
                let s = -1.0 + 2.0 * i as f64 / 39.0;
                pts.push([s, 0.0, 0.0]);
            }
        }
        1 => {
            // ring of radius 0.8
            for i in 0..40 {
                let a = 2.0 * std::f64::consts::PI * i as f64 / 40.0;
                pts.push([0.8 * a.cos(), 0.8 * a.sin(), 0.0]);
            }
        }
        2 => {
            // cross: two orthogonal lines
            for i in 0..20 {
                let s = -1.0 + 2.0 * i as f64 / 19.0;
                pts.push([s, 0.0, 0.0]);
                pts.push([0.0, s, 0.0]);
            }
        }
        _ => {
            // blob pair at +/- 0.6
            for side in [-0.6, 0.6] {
                for _ in 0..20 {
                    pts.push([
                        side + rng.normal_scaled(0.15),
                        rng.normal_scaled(0.15),
                        rng.normal_scaled(0.15),
                    ]);
                }
            }
        }
    }
    let mut points = Vec::with_capacity(pts.len());
    let mut extent: f64 = 0.0;
    for p in pts {
        let jittered = [
            p[0] + rng.uniform_in(-jitter, jitter),
            p[1] + rng.uniform_in(-jitter, jitter),
            p[2] + rng.uniform_in(-jitter, jitter),
        ];
        let world = mat_vec(&orient, &jittered);
        extent = extent.max((world[0] * world[0] + world[1] * world[1] + world[2] * world[2]).sqrt());
        points.push(ScenePoint {
            pos: Point3::new(world[0], world[1], world[2]),
            intensity: rng.uniform_in(0.5, 1.0),
        });
    }
    Ok(Scene {
        class_id,
        points,
        extent,
    })
}

fn random_rotation(rng: &mut Rng) -> Mat3 {
    crate::geometry::euler_to_rotation(crate::geometry::EulerAngles::new(
        rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI),
        rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI),
        rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI),
    ))
}

fn random_unit(rng: &mut Rng) -> [f64; 3] {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViewSample {
    /// `[H, W, 1]` grayscale splat image in [0, 1].
    pub image: Tensor,
    /// `[rows, cols]` mean camera-frame depth per patch; +inf marks
    /// patches no point landed in.
    pub gt_depth: Tensor,
    pub extrinsics: CameraExtrinsics,
    pub class_id: usize,
}

/// Splat-render a scene. At least half the points must sit in front of
/// the camera; the image must be square and divisible into patches.
pub fn render_view(
    scene: &Scene,
    ext: &CameraExtrinsics,
    k: &CameraIntrinsics,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<ViewSample> {
    if height != width {
        return Err(Error::InvalidArgument(format!(
            "renderer expects square images, got {height}x{width}"
        )));
    }
    if patch == 0 || height % patch != 0 {
        return Err(Error::InvalidArgument(format!(
            "image side {height} not divisible by patch {patch}"
        )));
    }
    let rows = height / patch;
    let cols = width / patch;
    let visible = scene
        .points
        .iter()
        .filter(|p| world_to_camera(p.pos, ext).z > 0.0)
        .count();
    if visible == 0 {
        return Err(Error::Degenerate("all points behind camera".into()));
    }
    if visible * 2 < scene.points.len() {
        return Err(Error::Degenerate(format!(
            "only {visible}/{} points in front of camera",
            scene.points.len()
        )));
    }

    let mut image = vec![0.0; height * width];
    let mut depth_sum = vec![0.0; rows * cols];
    let mut depth_count = vec![0usize; rows * cols];
    for p in &scene.points {
        let cam = world_to_camera(p.pos, ext);
        if cam.z <= 0.0 {
            continue;
        }
        let (u, v) = project(cam, k)?;
        let px = ((u + 1.0) / 2.0 * width as f64).floor();
        let py = ((v + 1.0) / 2.0 * height as f64).floor();
        if px < 0.0 || py < 0.0 || px >= width as f64 || py >= height as f64 {
            continue;
        }
        let (px, py) = (px as usize, py as usize);
        image[py * width + px] += p.intensity;
        let cell = (py / patch) * cols + px / patch;
        depth_sum[cell] += cam.z;
        depth_count[cell] += 1;
    }
    for v in image.iter_mut() {
        *v = (*v / SPLAT_SATURATION).min(1.0);
    }
    let gt_depth: Vec<f64> = depth_sum
        .iter()
        .zip(&depth_count)
        .map(|(&s, &c)| if c == 0 { f64::INFINITY } else { s / c as f64 })
        .collect();
    Ok(ViewSample {
        image: Tensor::from_vec(image, &[height, width, 1])?,
        gt_depth: Tensor::from_vec(gt_depth, &[rows, cols])?,
        extrinsics: ext.clone(),
        class_id: scene.class_id,
    })
}

/// Extrinsics of a camera at `position` looking toward `target`.
pub fn look_at_camera(position: Point3, target: Point3) -> Result<CameraExtrinsics> {
    let fwd = [
        target.x - position.x,
        target.y - position.y,
        target.z - position.z,
    ];
    let n = (fwd[0] * fwd[0] + fwd[1] * fwd[1] + fwd[2] * fwd[2]).sqrt();
    if n < 1e-9 {
        return Err(Error::Degenerate("camera coincides with target".into()));
    }
    let z = [fwd[0] / n, fwd[1] / n, fwd[2] / n];
    let up = if z[2].abs() > 0.95 {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let mut x = [
        up[1] * z[2] - up[2] * z[1],
        up[2] * z[0] - up[0] * z[2],
        up[0] * z[1] - up[1] * z[0],
    ];
    let xn = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    for v in x.iter_mut() {
        *v /= xn;
    }
    let y = [
        z[1] * x[2] - z[2] * x[1],
        z[2] * x[0] - z[0] * x[2],
        z[0] * x[1] - z[1] * x[0],
    ];
    let r = [x, y, z];
    let t = mat_vec(&r, &position.to_array());
    CameraExtrinsics::new(r, t)
}

/// Camera at a random direction and radius, looking at the origin.
pub fn sample_camera(rng: &mut Rng, radius: (f64, f64)) -> CameraExtrinsics {
    loop {
        let dir = random_unit(rng);
        if dir[2].abs() > 0.9 {
            continue; // avoid the up-vector degeneracy band
        }
        let rho = rng.uniform_in(radius.0, radius.1);
        let pos = Point3::new(dir[0] * rho, dir[1] * rho, dir[2] * rho);
        if let Ok(ext) = look_at_camera(pos, Point3::new(0.0, 0.0, 0.0)) {
            return ext;
        }
    }
}

/// Smooth orbital arc of `frames` cameras, all looking at the origin.
pub fn camera_trajectory(
    rng: &mut Rng,
    frames: usize,
    radius: (f64, f64),
) -> Vec<CameraExtrinsics> {
    let theta0 = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
    let sweep = rng.uniform_in(0.8, 1.6); // radians over the whole clip
    let elev0 = rng.uniform_in(-0.5, 0.5);
    let elev_sweep = rng.uniform_in(-0.4, 0.4);
    let rho = rng.uniform_in(radius.0, radius.1);
    (0..frames)
        .map(|f| {
            let s = f as f64 / (frames.max(2) - 1) as f64;
            let theta = theta0 + sweep * s;
            let elev = elev0 + elev_sweep * s;
            let pos = Point3::new(
                rho * elev.cos() * theta.cos(),
                rho * elev.cos() * theta.sin(),
                rho * elev.sin(),
            );
            look_at_camera(pos, Point3::new(0.0, 0.0, 0.0)).expect("orbit camera")
        })
        .collect()
}

/// A scene plus a deterministic motion script: the cloud spins about a
/// fixed axis and drifts sinusoidally, so every frame index maps to one
/// world state.
#[derive(Debug, Clone)]
pub struct SceneScript {
    pub scene: Scene,
    pub spin_axis: [f64; 3],
    pub spin_per_frame: f64,
    pub drift: [f64; 3],
    /// Phase advance per frame of the traveling intensity wave.
    pub wave_rate: f64,
}

impl SceneScript {
    pub fn new(scene: Scene, rng: &mut Rng) -> SceneScript {
        let drift_dir = random_unit(rng);
        let amp = rng.uniform_in(0.8, 1.4);
        SceneScript {
            scene,
            spin_axis: random_unit(rng),
            spin_per_frame: rng.uniform_in(0.06, 0.12),
            drift: [drift_dir[0] * amp, drift_dir[1] * amp, drift_dir[2] * amp],
            wave_rate: rng.uniform_in(0.012, 0.02),
        }
    }

    /// World state at a frame: the cloud spins about a fixed axis, drifts
    /// monotonically (no two frames share a pose), and a brightness wave
    /// travels along the point order so appearance also encodes time.
    pub fn world_state(&self, frame: usize, total: usize) -> Scene {
        let angle = self.spin_per_frame * frame as f64;
        let rot = axis_angle_rotation(self.spin_axis, angle);
        let shift = frame as f64 / total.max(1) as f64;
        let n = self.scene.points.len() as f64;
        let points = self
            .scene
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = mat_vec(&rot, &p.pos.to_array());
                let phase = 2.0 * std::f64::consts::PI
                    * (i as f64 / n - self.wave_rate * frame as f64);
                ScenePoint {
                    pos: Point3::new(
                        r[0] + self.drift[0] * shift,
                        r[1] + self.drift[1] * shift,
                        r[2] + self.drift[2] * shift,
                    ),
                    intensity: p.intensity * (0.55 + 0.45 * phase.cos()),
                }
            })
            .collect();
        Scene {
            class_id: self.scene.class_id,
            points,
            extent: self.scene.extent + self.drift.iter().map(|d| d.abs()).sum::<f64>(),
        }
    }
}

/// Two synchronized views of one animated scene: view A from a static
/// camera, view B from a per-frame trajectory. Frame t of both sequences
/// depicts the identical world state.
pub fn generate_alignment_pair(
    script: &SceneScript,
    cam_a: &CameraExtrinsics,
    cam_b_trajectory: &[CameraExtrinsics],
    image_size: usize,
    patch: usize,
) -> Result<(Vec<ViewSample>, Vec<ViewSample>)> {
    let t = cam_b_trajectory.len();
    let k = CameraIntrinsics::default();
    let mut a = Vec::with_capacity(t);
    let mut b = Vec::with_capacity(t);
    for f in 0..t {
        let world = script.world_state(f, t);
        a.push(render_view(&world, cam_a, &k, image_size, image_size, patch)?);
        b.push(render_view(
            &world,
            &cam_b_trajectory[f],
            &k,
            image_size,
            image_size,
            patch,
        )?);
    }
    Ok((a, b))
}

// ── dataset assembly ────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassGenConfig {
    pub classes: usize,
    pub scenes_per_class: usize,
    pub test_scenes_per_class: usize,
    pub views_per_scene: usize,
    pub cameras_train: usize,
    pub cameras_unseen: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub radius_min: f64,
    pub radius_max: f64,
}

impl Default for ClassGenConfig {
    fn default() -> Self {
        ClassGenConfig {
            classes: 4,
            scenes_per_class: 12,
            test_scenes_per_class: 4,
            views_per_scene: 2,
            cameras_train: 8,
            cameras_unseen: 4,
            image_size: 16,
            patch_size: 4,
            radius_min: 2.5,
            radius_max: 3.5,
        }
    }
}

#[derive(Debug)]
pub struct ClassificationDataset {
    pub config: ClassGenConfig,
    pub seed: u64,
    pub train: Vec<ViewSample>,
    /// Fresh scenes, training cameras.
    pub test: Vec<ViewSample>,
    /// Training scene seeds, held-out cameras.
    pub test_unseen: Vec<ViewSample>,
    pub train_cameras: Vec<CameraExtrinsics>,
    pub unseen_cameras: Vec<CameraExtrinsics>,
}

pub fn generate_classification_dataset(
    cfg: &ClassGenConfig,
    seed: u64,
) -> Result<ClassificationDataset> {
    if cfg.classes == 0 || cfg.classes > NUM_SCENE_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "classes must be in 1..={NUM_SCENE_CLASSES}"
        )));
    }
    let root = Rng::new(seed);
    let radius = (cfg.radius_min, cfg.radius_max);
    let mut cam_rng = root.derive("cameras.train");
    let train_cameras: Vec<CameraExtrinsics> = (0..cfg.cameras_train)
        .map(|_| sample_camera(&mut cam_rng, radius))
        .collect();
    let mut cam_rng = root.derive("cameras.unseen");
    let unseen_cameras: Vec<CameraExtrinsics> = (0..cfg.cameras_unseen)
        .map(|_| sample_camera(&mut cam_rng, radius))
        .collect();
    let k = CameraIntrinsics::default();

    let render_split = |scene_tag: &str,
                        scenes_per_class: usize,
                        cameras: &[CameraExtrinsics],
                        pick_tag: &str|
     -> Result<Vec<ViewSample>> {
        let mut out = Vec::new();
        let mut pick = root.derive(pick_tag);
        for class in 0..cfg.classes {
            for s in 0..scenes_per_class {
                let mut srng = root.derive(&format!("{scene_tag}.{class}.{s}"));
                let scene = generate_scene(class, &mut srng)?;
                for _ in 0..cfg.views_per_scene {
                    let cam = &cameras[pick.below(cameras.len())];
                    out.push(render_view(
                        &scene,
                        cam,
                        &k,
                        cfg.image_size,
                        cfg.image_size,
                        cfg.patch_size,
                    )?);
                }
            }
        }
        Ok(out)
    };

    Ok(ClassificationDataset {
        config: cfg.clone(),
        seed,
        train: render_split("scene.train", cfg.scenes_per_class, &train_cameras, "pick.train")?,
        test: render_split("scene.test", cfg.test_scenes_per_class, &train_cameras, "pick.test")?,
        // same scene seeds as train, held-out cameras
        test_unseen: render_split(
            "scene.train",
            cfg.scenes_per_class,
            &unseen_cameras,
            "pick.unseen",
        )?,
        train_cameras,
        unseen_cameras,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AlignGenConfig {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub frames: usize,
    pub static_camera_pool: usize,
    pub trajectory_pool: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub radius_min: f64,
    pub radius_max: f64,
}

impl Default for AlignGenConfig {
    fn default() -> Self {
        AlignGenConfig {
            train_pairs: 8,
            test_pairs: 4,
            frames: 24,
            static_camera_pool: 4,
            trajectory_pool: 4,
            image_size: 16,
            patch_size: 4,
            radius_min: 2.5,
            radius_max: 3.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentPair {
    pub id: String,
    pub view_a: Vec<ViewSample>,
    pub view_b: Vec<ViewSample>,
}

#[derive(Debug)]
pub struct AlignmentDataset {
    pub config: AlignGenConfig,
    pub seed: u64,
    pub train: Vec<AlignmentPair>,
    /// New scenes, cameras from the training pools.
    pub test_seen: Vec<AlignmentPair>,
    /// New scenes, freshly drawn held-out cameras.
    pub test_unseen: Vec<AlignmentPair>,
}

pub fn generate_alignment_dataset(cfg: &AlignGenConfig, seed: u64) -> Result<AlignmentDataset> {
    let root = Rng::new(seed);
    let radius = (cfg.radius_min, cfg.radius_max);
    let mut pool_rng = root.derive("align.cams.seen");
    let statics: Vec<CameraExtrinsics> = (0..cfg.static_camera_pool)
        .map(|_| sample_camera(&mut pool_rng, radius))
        .collect();
    let trajectories: Vec<Vec<CameraExtrinsics>> = (0..cfg.trajectory_pool)
        .map(|_| camera_trajectory(&mut pool_rng, cfg.frames, radius))
        .collect();
    let mut unseen_rng = root.derive("align.cams.unseen");

    let mut make_pairs = |tag: &str, count: usize, unseen: bool| -> Result<Vec<AlignmentPair>> {
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let mut prng = root.derive(&format!("align.pair.{tag}.{i}"));
            let class = prng.below(NUM_SCENE_CLASSES);
            let scene = generate_scene(class, &mut prng)?;
            let script = SceneScript::new(scene, &mut prng);
            let (cam_a, traj) = if unseen {
                (
                    sample_camera(&mut unseen_rng, radius),
                    camera_trajectory(&mut unseen_rng, cfg.frames, radius),
                )
            } else {
                (
                    statics[prng.below(statics.len())].clone(),
                    trajectories[prng.below(trajectories.len())].clone(),
                )
            };
            let (view_a, view_b) = generate_alignment_pair(
                &script,
                &cam_a,
                &traj,
                cfg.image_size,
                cfg.patch_size,
            )?;
            out.push(AlignmentPair {
                id: format!("{tag}.{i}"),
                view_a,
                view_b,
            });
        }
        Ok(out)
    };

    Ok(AlignmentDataset {
        config: cfg.clone(),
        seed,
        train: make_pairs("train", cfg.train_pairs, false)?,
        test_seen: make_pairs("seen", cfg.test_pairs, false)?,
        test_unseen: make_pairs("unseen", cfg.test_pairs, true)?,
    })
}

// ── persistence: JSON manifest + tensor blob ────────────────────────

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct ExtRecord {
    r: Vec<f64>,
    t: Vec<f64>,
}

impl From<&CameraExtrinsics> for ExtRecord {
    fn from(e: &CameraExtrinsics) -> Self {
        ExtRecord {
            r: e.r.iter().flatten().copied().collect(),
            t: e.t.to_vec(),
        }
    }
}

impl ExtRecord {
    fn to_extrinsics(&self) -> Result<CameraExtrinsics> {
        if self.r.len() != 9 || self.t.len() != 3 {
            return Err(Error::Corrupt("malformed extrinsics record".into()));
        }
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = self.r[i * 3 + j];
            }
        }
        Ok(CameraExtrinsics {
            r,
            t: [self.t[0], self.t[1], self.t[2]],
        })
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct SampleRecord {
    class_id: usize,
    extrinsics: ExtRecord,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct PairRecord {
    id: String,
    a: Vec<SampleRecord>,
    b: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "kind")]
enum ManifestBody {
    #[serde(rename = "classification")]
    Classification {
        config: ClassGenConfig,
        train: Vec<SampleRecord>,
        test: Vec<SampleRecord>,
        test_unseen: Vec<SampleRecord>,
        train_cameras: Vec<ExtRecord>,
        unseen_cameras: Vec<ExtRecord>,
    },
    #[serde(rename = "alignment")]
    Alignment {
        config: AlignGenConfig,
        train: Vec<PairRecord>,
        test_seen: Vec<PairRecord>,
        test_unseen: Vec<PairRecord>,
    },
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct Manifest {
    manifest_version: u32,
    seed: u64,
    blob: String,
    #[serde(flatten)]
    body: ManifestBody,
}

fn push_view(entries: &mut Vec<Entry>, key: &str, v: &ViewSample) {
    entries.push(Entry {
        name: format!("{key}.image"),
        shape: v.image.shape(),
        data: v.image.to_vec(),
    });
    entries.push(Entry {
        name: format!("{key}.gt_depth"),
        shape: v.gt_depth.shape(),
        data: v.gt_depth.to_vec(),
    });
}

fn record_of(v: &ViewSample) -> SampleRecord {
    SampleRecord {
        class_id: v.class_id,
        extrinsics: (&v.extrinsics).into(),
    }
}

fn view_from(
    entries: &[Entry],
    key: &str,
    rec: &SampleRecord,
) -> Result<ViewSample> {
    let find = |suffix: &str| -> Result<&Entry> {
        let name = format!("{key}.{suffix}");
        entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Corrupt(format!("missing blob tensor '{name}'")))
    };
    let image = find("image")?;
    let depth = find("gt_depth")?;
    Ok(ViewSample {
        image: Tensor::from_vec(image.data.clone(), &image.shape)?,
        gt_depth: Tensor::from_vec(depth.data.clone(), &depth.shape)?,
        extrinsics: rec.extrinsics.to_extrinsics()?,
        class_id: rec.class_id,
    })
}

pub fn save_classification(dir: &Path, ds: &ClassificationDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (split, views) in [
        ("train", &ds.train),
        ("test", &ds.test),
        ("test_unseen", &ds.test_unseen),
    ] {
        for (i, v) in views.iter().enumerate() {
            push_view(&mut entries, &format!("{split}.{i}"), v);
        }
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        seed: ds.seed,
        blob: "data.bin".into(),
        body: ManifestBody::Classification {
            config: ds.config.clone(),
            train: ds.train.iter().map(record_of).collect(),
            test: ds.test.iter().map(record_of).collect(),
            test_unseen: ds.test_unseen.iter().map(record_of).collect(),
            train_cameras: ds.train_cameras.iter().map(ExtRecord::from).collect(),
            unseen_cameras: ds.unseen_cameras.iter().map(ExtRecord::from).collect(),
        },
    };
    checkpoint::save(&dir.join("data.bin"), &entries)?;
    fs::write(dir.join("manifest.json"), manifest_json(&manifest)?)?;
    Ok(())
}

pub fn save_alignment(dir: &Path, ds: &AlignmentDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let pair_records = |pairs: &[AlignmentPair], entries: &mut Vec<Entry>| -> Vec<PairRecord> {
        pairs
            .iter()
            .map(|p| {
                for (f, v) in p.view_a.iter().enumerate() {
                    push_view(entries, &format!("{}.a.{f}", p.id), v);
                }
                for (f, v) in p.view_b.iter().enumerate() {
                    push_view(entries, &format!("{}.b.{f}", p.id), v);
                }
                PairRecord {
                    id: p.id.clone(),
                    a: p.view_a.iter().map(record_of).collect(),
                    b: p.view_b.iter().map(record_of).collect(),
                }
            })
            .collect()
    };
    let train = pair_records(&ds.train, &mut entries);
    let test_seen = pair_records(&ds.test_seen, &mut entries);
    let test_unseen = pair_records(&ds.test_unseen, &mut entries);
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        seed: ds.seed,
        blob: "data.bin".into(),
        body: ManifestBody::Alignment {
            config: ds.config.clone(),
            train,
            test_seen,
            test_unseen,
        },
    };
    checkpoint::save(&dir.join("data.bin"), &entries)?;
    fs::write(dir.join("manifest.json"), manifest_json(&manifest)?)?;
    Ok(())
}

fn manifest_json(m: &Manifest) -> Result<String> {
    Ok(serde_json::to_string_pretty(m)?)
}

fn manifest_from_bytes(bytes: &[u8]) -> Result<Manifest> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Corrupt("manifest is not UTF-8".into()))?;
    let manifest: Manifest =
        serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("bad manifest: {e}")))?;
    if manifest.manifest_version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion(manifest.manifest_version));
    }
    Ok(manifest)
}

/// Parse and structurally validate a dataset manifest from raw bytes.
pub fn parse_manifest_bytes(bytes: &[u8]) -> Result<()> {
    let manifest = manifest_from_bytes(bytes)?;
    let check = |recs: &[SampleRecord]| -> Result<()> {
        for r in recs {
            r.extrinsics.to_extrinsics()?;
        }
        Ok(())
    };
    match &manifest.body {
        ManifestBody::Classification {
            train,
            test,
            test_unseen,
            train_cameras,
            unseen_cameras,
            ..
        } => {
            check(train)?;
            check(test)?;
            check(test_unseen)?;
            for c in train_cameras.iter().chain(unseen_cameras) {
                c.to_extrinsics()?;
            }
        }
        ManifestBody::Alignment {
            train,
            test_seen,
            test_unseen,
            ..
        } => {
            for p in train.iter().chain(test_seen).chain(test_unseen) {
                check(&p.a)?;
                check(&p.b)?;
            }
        }
    }
    Ok(())
}

fn load_manifest(dir: &Path) -> Result<(Manifest, Vec<Entry>)> {
    let bytes = fs::read(dir.join("manifest.json"))
        .map_err(|e| Error::Corrupt(format!("cannot read manifest: {e}")))?;
    let manifest = manifest_from_bytes(&bytes)?;
    let entries = checkpoint::load(&dir.join(&manifest.blob))?;
    Ok((manifest, entries))
}

pub fn load_classification(dir: &Path) -> Result<ClassificationDataset> {
    let (manifest, entries) = load_manifest(dir)?;
    let ManifestBody::Classification {
        config,
        train,
        test,
        test_unseen,
        train_cameras,
        unseen_cameras,
    } = manifest.body
    else {
        return Err(Error::Corrupt("expected a classification dataset".into()));
    };
    let load_split = |split: &str, recs: &[SampleRecord]| -> Result<Vec<ViewSample>> {
        recs.iter()
            .enumerate()
            .map(|(i, r)| view_from(&entries, &format!("{split}.{i}"), r))
            .collect()
    };
    Ok(ClassificationDataset {
        config,
        seed: manifest.seed,
        train: load_split("train", &train)?,
        test: load_split("test", &test)?,
        test_unseen: load_split("test_unseen", &test_unseen)?,
        train_cameras: train_cameras
            .iter()
            .map(ExtRecord::to_extrinsics)
            .collect::<Result<_>>()?,
        unseen_cameras: unseen_cameras
            .iter()
            .map(ExtRecord::to_extrinsics)
            .collect::<Result<_>>()?,
    })
}

pub fn load_alignment(dir: &Path) -> Result<AlignmentDataset> {
    let (manifest, entries) = load_manifest(dir)?;
    let ManifestBody::Alignment {
        config,
        train,
        test_seen,
        test_unseen,
    } = manifest.body
    else {
        return Err(Error::Corrupt("expected an alignment dataset".into()));
    };
    let load_pairs = |recs: &[PairRecord]| -> Result<Vec<AlignmentPair>> {
        recs.iter()
            .map(|p| {
                let a = p
                    .a
                    .iter()
                    .enumerate()
                    .map(|(f, r)| view_from(&entries, &format!("{}.a.{f}", p.id), r))
                    .collect::<Result<Vec<_>>>()?;
                let b = p
                    .b
                    .iter()
                    .enumerate()
                    .map(|(f, r)| view_from(&entries, &format!("{}.b.{f}", p.id), r))
                    .collect::<Result<Vec<_>>>()?;
                Ok(AlignmentPair {
                    id: p.id.clone(),
                    view_a: a,
                    view_b: b,
                })
            })
            .collect()
    };
    Ok(AlignmentDataset {
        config,
        seed: manifest.seed,
        train: load_pairs(&train)?,
        test_seen: load_pairs(&test_seen)?,
        test_unseen: load_pairs(&test_unseen)?,
    })
}
