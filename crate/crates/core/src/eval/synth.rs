//! Synthetic scenes with analytic ground truth: a ray tracer over boxes,
//! rectangles and spheres with procedural albedo, and dataset generation.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{angles_to_dir, ErpCamera, SphericalAngles};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianScene};
use crate::image::{Map, NormalMap, RgbMap, ScalarMap};
use crate::io::ply::PointCloud;
use crate::io::poses::PoseEntry;
use crate::io::{pfm, ply, png, poses, View};

/// `count` random anisotropic Gaussians scattered 1.5 to 6 units around the origin.
pub fn random_gaussian_scene(count: usize, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..count)
        .map(|_| {
            let dir = loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n: f64 = v.norm();
                if n > 0.1 && n <= 1.0 {
                    break v / n;
                }
            };
            let mean = dir * rng.random_range(1.5..6.0);
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let scales = Vector3::new(
                rng.random_range(0.03..0.4),
                rng.random_range(0.03..0.4),
                rng.random_range(0.03..0.4),
            );
            let rgb = [rng.random(), rng.random(), rng.random()];
            let mut g = Gaussian3D::new(mean, q, scales, rng.random_range(0.1..0.95), rgb)
                .expect("valid random parameters");
            for k in 1..4 {
                for c in 0..3 {
                    g.sh[k][c] = rng.random_range(-0.1..0.1);
                }
            }
            g
        })
        .collect();
    GaussianScene {
        gaussians,
        sh_degree: 1,
    }
}

/// Procedural albedo over 2D surface coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Texture {
    Uniform {
        color: [f64; 3],
    },
    Checker {
        size: f64,
        colors: [[f64; 3]; 2],
    },
    /// Value noise with `octaves` layers, blending two colors.
    Noise {
        scale: f64,
        #[serde(default = "default_octaves")]
        octaves: u32,
        colors: [[f64; 3]; 2],
        #[serde(default)]
        seed: u64,
    },
}

fn default_octaves() -> u32 {
    3
}

fn hash01(ix: i64, iy: i64, seed: u64) -> f64 {
    // splitmix64 over the packed lattice coordinates
    let mut z = (ix as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add(seed.wrapping_mul(0x1656_67B1_9E37_79F9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(fx), s(fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash01(ix, iy, seed);
    let b = hash01(ix + 1, iy, seed);
    let c = hash01(ix, iy + 1, seed);
    let d = hash01(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

impl Texture {
    pub fn albedo(&self, uv: [f64; 2]) -> [f64; 3] {
        match self {
            Texture::Uniform { color } => *color,
            Texture::Checker { size, colors } => {
                let k = (uv[0] / size).floor() as i64 + (uv[1] / size).floor() as i64;
                colors[k.rem_euclid(2) as usize]
            }
            Texture::Noise { scale, octaves, colors, seed } => {
                let (mut amp, mut freq, mut sum, mut norm) = (1.0, 1.0 / scale, 0.0, 0.0);
                for o in 0..*octaves {
                    sum += amp * value_noise(uv[0] * freq, uv[1] * freq, seed.wrapping_add(o as u64));
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                lerp3(colors[0], colors[1], sum / norm)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Texture::Uniform { .. } => true,
            Texture::Checker { size, .. } => *size > 0.0,
            Texture::Noise { scale, octaves, .. } => *scale > 0.0 && *octaves > 0,
        };
        if ok { Ok(()) } else { Err(Error::config("texture size/scale must be positive")) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub walls: Texture,
    /// Texture of the `y = max` face (the floor, since y points down).
    pub floor: Option<Texture>,
    pub ceiling: Option<Texture>,
}

/// Rectangle `center + a * e1 + b * e2`, `|a| <= half_size[0]`, `|b| <= half_size[1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    /// Any direction not parallel to the normal; fixes the in-plane axes.
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub half_size: [f64; 2],
    pub texture: Texture,
}

fn default_up() -> [f64; 3] {
    [0.0, -1.0, 0.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub texture: Texture,
}

/// Directional light; `direction` points from the light into the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub direction: [f64; 3],
    pub ambient: f64,
}

/// Cameras on a horizontal circle; held-out views sit halfway between
/// training views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub count: usize,
    #[serde(default)]
    pub test_count: usize,
    #[serde(default)]
    pub center: [f64; 3],
    pub radius: f64,
    /// Vertical wobble `amplitude * sin(3 angle)`.
    #[serde(default)]
    pub height_amplitude: f64,
    /// Uniform random yaw per camera, in degrees.
    #[serde(default)]
    pub yaw_jitter_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointsSpec {
    pub count: usize,
    /// Standard deviation of isotropic position noise.
    pub noise: f64,
}

impl Default for PointsSpec {
    fn default() -> Self {
        Self { count: 20_000, noise: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub name: String,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
    /// `n x n` color samples per pixel; depth uses the pixel center.
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    /// Latitude band in degrees.
    pub lat_band: Option<[f64; 2]>,
    #[serde(default)]
    pub background: [f64; 3],
    pub room: Option<RoomSpec>,
    #[serde(default)]
    pub planes: Vec<PlaneSpec>,
    #[serde(default)]
    pub spheres: Vec<SphereSpec>,
    pub light: Option<LightSpec>,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub points: PointsSpec,
}

fn default_supersample() -> usize {
    1
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Closest intersection of a ray with the scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    /// Distance along the unit ray.
    pub t: f64,
    pub point: Vector3<f64>,
    /// Unit normal facing the ray origin.
    pub normal: Vector3<f64>,
    /// Index of the primitive: room first, then planes, then spheres.
    pub primitive: usize,
    /// Shaded color.
    pub color: [f64; 3],
}

struct Plane {
    center: Vector3<f64>,
    normal: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    half: [f64; 2],
}

/// A validated [`SceneSpec`] ready for tracing.
pub struct SyntheticScene {
    pub spec: SceneSpec,
    planes: Vec<Plane>,
    light: Option<(Vector3<f64>, f64)>,
}

const T_MIN: f64 = 1e-9;

impl SyntheticScene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        if spec.width < 2 || spec.height < 1 || spec.supersample == 0 {
            return Err(Error::config("image size and supersample must be positive"));
        }
        if let Some(r) = &spec.room {
            if (0..3).any(|k| !(r.max[k] > r.min[k])) {
                return Err(Error::config("room max must exceed min on every axis"));
            }
            r.walls.validate()?;
            for t in r.floor.iter().chain(&r.ceiling) {
                t.validate()?;
            }
        }
        let mut planes = Vec::new();
        for p in &spec.planes {
            p.texture.validate()?;
            let n = v3(p.normal);
            let e1 = v3(p.up).cross(&n);
            if !(n.norm() > 0.0 && e1.norm() > 1e-9 && p.half_size.iter().all(|h| *h > 0.0)) {
                return Err(Error::config("plane needs a nonzero normal, a non-parallel up and positive size"));
            }
            let n = n.normalize();
            let e1 = e1.normalize();
            planes.push(Plane { center: v3(p.center), normal: n, e1, e2: n.cross(&e1), half: p.half_size });
        }
        for s in &spec.spheres {
            s.texture.validate()?;
            if !(s.radius > 0.0) {
                return Err(Error::config("sphere radius must be positive"));
            }
        }
        let light = match &spec.light {
            Some(l) => {
                let d = v3(l.direction);
                if !(d.norm() > 0.0) || !(0.0..=1.0).contains(&l.ambient) {
                    return Err(Error::config("light needs a direction and ambient in [0, 1]"));
                }
                Some((d.normalize(), l.ambient))
            }
            None => None,
        };
        let t = &spec.trajectory;
        if t.count == 0 {
            return Err(Error::config("trajectory needs at least one view"));
        }
        let scene = Self { spec, planes, light };
        for c in scene.camera_centers().iter() {
            scene.check_inside(c)?;
        }
        Ok(scene)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Self::new(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn check_inside(&self, c: &Vector3<f64>) -> Result<()> {
        if let Some(r) = &self.spec.room {
            if (0..3).any(|k| !(c[k] > r.min[k] && c[k] < r.max[k])) {
                return Err(Error::config(format!("camera at {:?} is outside the room", c.as_slice())));
            }
        }
        Ok(())
    }

    fn room_hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
        let r = self.spec.room.as_ref()?;
        let mut best: Option<(f64, usize)> = None;
        for k in 0..3 {
            let bound = if d[k] > 0.0 {
                r.max[k]
            } else if d[k] < 0.0 {
                r.min[k]
            } else {
                continue;
            };
            let t = (bound - o[k]) / d[k];
            if t > T_MIN && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, k));
            }
        }
        best
    }

    /// Closest hit along the unit ray `o + t d`, or `None` for background.
    pub fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<SurfaceHit> {
        let mut best: Option<(f64, usize)> = None;
        let mut consider = |t: f64, id: usize| {
            if t > T_MIN && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, id));
            }
        };
        let room_face = self.room_hit(o, d);
        if let Some((t, _)) = room_face {
            consider(t, 0);
        }
        let base = usize::from(self.spec.room.is_some());
        for (i, p) in self.planes.iter().enumerate() {
            let den = d.dot(&p.normal);
            if den.abs() < 1e-15 {
                continue;
            }
            let t = (p.center - o).dot(&p.normal) / den;
            let q = o + d * t - p.center;
            if q.dot(&p.e1).abs() <= p.half[0] && q.dot(&p.e2).abs() <= p.half[1] {
                consider(t, base + i);
            }
        }
        let base_s = base + self.planes.len();
        for (i, s) in self.spec.spheres.iter().enumerate() {
            let oc = o - v3(s.center);
            let b = oc.dot(d);
            let disc = b * b - (oc.norm_squared() - s.radius * s.radius);
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            let t0 = -b - sq;
            consider(if t0 > T_MIN { t0 } else { -b + sq }, base_s + i);
        }
        let (t, id) = best?;
        let point = o + d * t;
        let (mut normal, tex, uv) = if self.spec.room.is_some() && id == 0 {
            let r = self.spec.room.as_ref().unwrap();
            let k = room_face.unwrap().1;
            let mut n = Vector3::zeros();
            n[k] = 1.0;
            let tex = match k {
                1 if d[1] > 0.0 => r.floor.as_ref().unwrap_or(&r.walls),
                1 => r.ceiling.as_ref().unwrap_or(&r.walls),
                _ => &r.walls,
            };
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            (n, tex, [point[a], point[b]])
        } else if id < base_s {
            let p = &self.planes[id - base];
            let q = point - p.center;
            (p.normal, &self.spec.planes[id - base].texture, [q.dot(&p.e1), q.dot(&p.e2)])
        } else {
            let s = &self.spec.spheres[id - base_s];
            let n = (point - v3(s.center)) / s.radius;
            let lon = n.x.atan2(n.z);
            let lat = (-n.y).clamp(-1.0, 1.0).asin();
            (n, &s.texture, [lon * s.radius, lat * s.radius])
        };
        if normal.dot(d) > 0.0 {
            normal = -normal;
        }
        let mut color = tex.albedo(uv);
        if let Some((l, ambient)) = self.light {
            let shade = ambient + (1.0 - ambient) * (-l.dot(&normal)).max(0.0);
            color = color.map(|c| c * shade);
        }
        Some(SurfaceHit { t, point, normal, primitive: id, color })
    }

    fn camera_centers(&self) -> Vec<Vector3<f64>> {
        self.trajectory().into_iter().map(|(_, c, _, _)| c).collect()
    }

    /// (name, center, yaw, is_test) for every camera.
    fn trajectory(&self) -> Vec<(String, Vector3<f64>, f64, bool)> {
        let t = &self.spec.trajectory;
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let center = v3(t.center);
        let mut at = |angle: f64| {
            let yaw = if t.yaw_jitter_deg > 0.0 {
                rng.random_range(-1.0..1.0) * t.yaw_jitter_deg.to_radians()
            } else {
                0.0
            };
            let c = center + Vector3::new(t.radius * angle.cos(), t.height_amplitude * (3.0 * angle).sin(), t.radius * angle.sin());
            (c, yaw)
        };
        let mut out = Vec::new();
        for k in 0..t.count {
            let (c, yaw) = at(TAU * k as f64 / t.count as f64);
            out.push((format!("train_{k:03}"), c, yaw, false));
        }
        for k in 0..t.test_count {
            let (c, yaw) = at(TAU * (k as f64 + 0.5) / t.test_count as f64);
            out.push((format!("test_{k:03}"), c, yaw, true));
        }
        out
    }

    fn camera(&self, center: Vector3<f64>, yaw: f64) -> Result<ErpCamera> {
        let cam = ErpCamera::identity(center, self.spec.width, self.spec.height)?.yawed(yaw);
        match self.spec.lat_band {
            Some([lo, hi]) => cam.with_lat_band(lo.to_radians(), hi.to_radians()),
            None => Ok(cam),
        }
    }

    /// Training and held-out cameras with their names.
    pub fn cameras(&self) -> Result<(Vec<PoseEntry>, Vec<PoseEntry>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (name, c, yaw, is_test) in self.trajectory() {
            let e = PoseEntry { name, camera: self.camera(c, yaw)? };
            if is_test { test.push(e) } else { train.push(e) }
        }
        Ok((train, test))
    }

    /// Ground-truth color, radial depth (0 for background) and normals.
    pub fn render(&self, cam: &ErpCamera) -> Result<GroundTruth> {
        self.check_inside(cam.center())?;
        let (w, h) = (cam.width(), cam.height());
        let n = self.spec.supersample;
        let o = *cam.center();
        let rows: Vec<Vec<([f64; 3], f64, Vector3<f64>)>> = (0..h)
            .into_par_iter()
            .map(|v| {
                (0..w)
                    .map(|u| {
                        let center = self.trace(&o, &cam.ray_through(u as f64 + 0.5, v as f64 + 0.5));
                        let mut rgb = [0.0; 3];
                        for sy in 0..n {
                            for sx in 0..n {
                                let (du, dv) = ((sx as f64 + 0.5) / n as f64, (sy as f64 + 0.5) / n as f64);
                                let c = if n == 1 {
                                    center.map_or(self.spec.background, |s| s.color)
                                } else {
                                    self.trace(&o, &cam.ray_through(u as f64 + du, v as f64 + dv))
                                        .map_or(self.spec.background, |s| s.color)
                                };
                                for k in 0..3 {
                                    rgb[k] += c[k] / (n * n) as f64;
                                }
                            }
                        }
                        match center {
                            Some(s) => (rgb, s.t, s.normal),
                            None => (rgb, 0.0, Vector3::zeros()),
                        }
                    })
                    .collect()
            })
            .collect();
        let flat: Vec<_> = rows.into_iter().flatten().collect();
        Ok(GroundTruth {
            rgb: Map::from_vec(w, h, flat.iter().map(|p| p.0).collect())?,
            depth: Map::from_vec(w, h, flat.iter().map(|p| p.1).collect())?,
            normal: Map::from_vec(w, h, flat.iter().map(|p| p.2).collect())?,
        })
    }

    /// Which primitive each pixel center sees (`usize::MAX` for background).
    pub fn primitive_map(&self, cam: &ErpCamera) -> Map<usize> {
        Map::from_fn(cam.width(), cam.height(), |u, v| {
            self.trace(cam.center(), &cam.ray_through(u as f64 + 0.5, v as f64 + 0.5))
                .map_or(usize::MAX, |s| s.primitive)
        })
    }

    /// Surface samples seen from the training cameras, uniform in direction.
    pub fn sample_points(&self, cams: &[ErpCamera]) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x5eed);
        let spec = &self.spec.points;
        let mut positions = Vec::with_capacity(spec.count);
        let mut colors = Vec::with_capacity(spec.count);
        let mut misses = 0;
        while positions.len() < spec.count && !cams.is_empty() && misses < 100 * spec.count.max(1) {
            let cam = &cams[rng.random_range(0..cams.len())];
            let a = SphericalAngles {
                lon: rng.random_range(-PI..PI),
                lat: (rng.random_range(-1.0..1.0f64)).asin(),
            };
            let Some(hit) = self.trace(cam.center(), &angles_to_dir(a)) else {
                misses += 1;
                continue;
            };
            let mut p = hit.point;
            if spec.noise > 0.0 {
                for k in 0..3 {
                    p[k] += spec.noise * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
            positions.push(p);
            colors.push(hit.color.map(|c| c.clamp(0.0, 1.0)));
        }
        PointCloud { positions, colors: Some(colors) }
    }

    /// Renders every camera and samples the seed point cloud.
    pub fn generate(&self) -> Result<SynthDataset> {
        let (train, test) = self.cameras()?;
        let shoot = |entries: Vec<PoseEntry>| -> Result<Vec<SynthView>> {
            entries
                .into_iter()
                .map(|e| {
                    let gt = self.render(&e.camera)?;
                    Ok(SynthView { name: e.name, camera: e.camera, gt })
                })
                .collect()
        };
        let train = shoot(train)?;
        let test = shoot(test)?;
        let cams: Vec<ErpCamera> = train.iter().map(|v| v.camera.clone()).collect();
        let points = self.sample_points(&cams);
        Ok(SynthDataset { train, test, points })
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub rgb: RgbMap,
    pub depth: ScalarMap,
    pub normal: NormalMap,
}

#[derive(Clone, Debug)]
pub struct SynthView {
    pub name: String,
    pub camera: ErpCamera,
    pub gt: GroundTruth,
}

impl SynthView {
    pub fn to_view(&self) -> View {
        View { name: self.name.clone(), camera: self.camera.clone(), rgb: self.gt.rgb.clone() }
    }
}

pub struct SynthDataset {
    pub train: Vec<SynthView>,
    pub test: Vec<SynthView>,
    pub points: PointCloud,
}

impl SynthDataset {
    /// Writes `images/<name>.png`, `depth/<name>.pfm`, `normals/<name>.png`,
    /// `poses.txt`, `test_poses.txt` and `points.ply` under `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        for sub in ["images", "depth", "normals"] {
            let d = out.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for v in self.train.iter().chain(&self.test) {
            png::write_rgb(&out.join("images").join(format!("{}.png", v.name)), &v.gt.rgb)?;
            pfm::write_scalar(&out.join("depth").join(format!("{}.pfm", v.name)), &v.gt.depth)?;
            png::write_normals(&out.join("normals").join(format!("{}.png", v.name)), &v.gt.normal)?;
        }
        let entries = |vs: &[SynthView]| -> Vec<PoseEntry> {
            vs.iter().map(|v| PoseEntry { name: v.name.clone(), camera: v.camera.clone() }).collect()
        };
        poses::write_poses(&out.join("poses.txt"), &entries(&self.train))?;
        poses::write_poses(&out.join("test_poses.txt"), &entries(&self.test))?;
        ply::write_point_cloud(&out.join("points.ply"), &self.points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> SyntheticScene {
        SyntheticScene::from_toml_str(text).unwrap()
    }

    const SPHERE: &str = r#"
        width = 64
        height = 32
        [[spheres]]
        center = [0.0, 0.0, 0.0]
        radius = 2.0
        texture = { kind = "uniform", color = [0.3, 0.6, 0.9] }
        [trajectory]
        count = 1
        radius = 0.0
    "#;

    #[test]
    fn sphere_around_camera_has_radius_depth() {
        let s = spec(SPHERE);
        let cam = ErpCamera::identity(Vector3::zeros(), 64, 32).unwrap();
        let gt = s.render(&cam).unwrap();
        assert!(gt.depth.data().iter().all(|d| (d - 2.0).abs() < 1e-9));
        assert!(gt.rgb.data().iter().all(|p| *p == [0.3, 0.6, 0.9]));
        // off-center camera: closed-form distance to the sphere
        let o = Vector3::new(0.5, -0.3, 0.2);
        let cam = ErpCamera::identity(o, 64, 32).unwrap();
        let gt = s.render(&cam).unwrap();
        for v in 0..32 {
            for u in 0..64 {
                let d = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
                let b = o.dot(&d);
                let want = -b + (b * b - o.norm_squared() + 4.0).sqrt();
                assert!((gt.depth.get(u, v) - want).abs() < 1e-9);
            }
        }
    }

    const ROOM: &str = r#"
        width = 64
        height = 32
        [room]
        min = [-2.0, -1.5, -2.5]
        max = [2.0, 1.5, 2.5]
        walls = { kind = "checker", size = 0.5, colors = [[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]] }
        [trajectory]
        count = 1
        radius = 0.0
    "#;

    #[test]
    fn room_center_depth() {
        let s = spec(ROOM);
        let cam = ErpCamera::identity(Vector3::zeros(), 64, 32).unwrap();
        let hit = s.trace(cam.center(), &cam.ray_through(32.0, 16.0)).unwrap();
        assert!((hit.t - 2.5).abs() < 1e-12);
        assert_eq!(hit.normal, Vector3::new(0.0, 0.0, -1.0));
        // straight down hits the floor at y = 1.5
        let down = s.trace(&Vector3::zeros(), &Vector3::y()).unwrap();
        assert!((down.t - 1.5).abs() < 1e-12);
    }

    #[test]
    fn camera_outside_room_rejected() {
        let bad = ROOM.replace("radius = 0.0", "radius = 3.0");
        assert!(matches!(SyntheticScene::from_toml_str(&bad), Err(Error::Config(_))));
        let s = spec(ROOM);
        let cam = ErpCamera::identity(Vector3::new(9.0, 0.0, 0.0), 8, 4).unwrap();
        assert!(s.render(&cam).is_err());
    }

    #[test]
    fn rendering_is_reproducible() {
        let s = spec(ROOM);
        let cam = ErpCamera::identity(Vector3::new(0.3, 0.2, -0.4), 64, 32).unwrap();
        let a = s.render(&cam).unwrap();
        let b = s.render(&cam).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth, b.depth);
        // checker lookup: walls only take the two colors
        assert!(a.rgb.data().iter().all(|p| p[0] == 0.1 || p[0] == 0.9));
    }

    #[test]
    fn plane_hits_and_occlusion() {
        let s = spec(&format!(
            "{ROOM}\n[[planes]]\ncenter = [0.0, 0.0, 1.0]\nnormal = [0.0, 0.0, -1.0]\nhalf_size = [0.5, 0.5]\ntexture = {{ kind = \"uniform\", color = [1.0, 0.0, 0.0] }}\n"
        ));
        let hit = s.trace(&Vector3::zeros(), &Vector3::z()).unwrap();
        assert_eq!((hit.t, hit.primitive, hit.color), (1.0, 1, [1.0, 0.0, 0.0]));
        // past the rectangle edge the wall is visible
        let d = Vector3::new(0.6, 0.0, 1.0).normalize();
        assert_eq!(s.trace(&Vector3::zeros(), &d).unwrap().primitive, 0);
    }

    #[test]
    fn lambert_shading() {
        let s = spec(&ROOM.replace(
            "[trajectory]",
            "[light]\ndirection = [0.0, 0.0, 1.0]\nambient = 0.25\n[trajectory]",
        ));
        // the far wall faces the light head on, the side wall is edge on
        let far = s.trace(&Vector3::zeros(), &Vector3::z()).unwrap();
        let side = s.trace(&Vector3::zeros(), &Vector3::x()).unwrap();
        assert!(far.color[0] == 0.1 * 1.0 || far.color[0] == 0.9 * 1.0);
        assert!(side.color[0] == 0.1 * 0.25 || side.color[0] == 0.9 * 0.25);
    }

    #[test]
    fn noise_texture_is_smooth_and_bounded() {
        let t = Texture::Noise { scale: 0.3, octaves: 3, colors: [[0.0; 3], [1.0; 3]], seed: 4 };
        let mut prev = t.albedo([0.0, 0.7])[0];
        for i in 1..2000 {
            let x = i as f64 * 1e-3;
            let c = t.albedo([x, 0.7])[0];
            assert!((0.0..=1.0).contains(&c));
            assert!((c - prev).abs() < 0.05);
            prev = c;
        }
    }

    #[test]
    fn dataset_has_cameras_and_points() {
        let text = ROOM.replace("count = 1", "count = 4\ntest_count = 2").replace("radius = 0.0", "radius = 0.5");
        let mut s = spec(&text);
        s.spec.points.count = 50;
        let ds = s.generate().unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (4, 2));
        assert_eq!(ds.points.positions.len(), 50);
        let r = s.spec.room.as_ref().unwrap();
        for p in &ds.points.positions {
            // every sample lies on a wall
            let on = (0..3).any(|k| (p[k] - r.min[k]).abs() < 1e-9 || (p[k] - r.max[k]).abs() < 1e-9);
            assert!(on);
        }
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let views = crate::io::load_views(&dir.path().join("images"), &dir.path().join("test_poses.txt")).unwrap();
        assert_eq!(views.len(), 2);
        assert!((views[1].camera.center() - ds.test[1].camera.center()).norm() < 1e-9);
        let d = pfm::read_scalar(&dir.path().join("depth/train_000.pfm")).unwrap();
        assert!((d.get(3, 3) - ds.train[0].gt.depth.get(3, 3)).abs() < 1e-5);
    }
}
