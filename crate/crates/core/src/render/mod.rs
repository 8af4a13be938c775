//! Tile-based ray-space rendering of a [`GaussianScene`] through an [`ErpCamera`].
//!
//! Each Gaussian is bounded by a sphere of radius `support_sigma * max(s~)`;
//! the sphere's spherical cap selects the tiles it may touch. Every pixel ray
//! then evaluates the peak response of its tile's candidates in ascending
//! camera-distance order and composites them front to back.

mod tiles;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

pub use tiles::{cap_to_pixels, PixelSpan, TileEntry, TileIndex};

use crate::camera::ErpCamera;
use crate::error::{Error, Result};
use crate::gaussian::{sh_color_raw, GaussianScene};
use crate::image::{Map, NormalMap, RgbMap, ScalarMap};
use crate::sh::{self, MAX_COEFFS};

/// Contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Per-primitive alpha cap.
pub const ALPHA_MAX: f64 = 0.999;
/// Compositing stops once transmittance falls below this.
pub const T_MIN: f64 = 1e-4;
/// Transmittance level that defines the median depth.
pub const MEDIAN_TRANSMITTANCE: f64 = 0.5;
/// Depth is undefined below this accumulated opacity.
pub const BACKGROUND_ALPHA: f64 = 0.01;

/// Order in which a ray visits its candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SortMode {
    /// Global per-view order by camera-to-mean distance.
    #[default]
    MeanDistance,
    /// Exact per-ray order by peak depth `t*`. Debug mode for small scenes.
    PerRay,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Support radius in standard deviations; responses beyond it are zero.
    pub support_sigma: f64,
    /// Contributions whose peak lies at `t* <= t_near` are skipped.
    pub t_near: f64,
    pub sort: SortMode,
    /// `false` gives every pixel every Gaussian (brute-force reference).
    pub culling: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: 16,
            support_sigma: 3.0,
            t_near: 0.01,
            sort: SortMode::MeanDistance,
            culling: true,
        }
    }
}

/// Per-pixel maps for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbMap,
    /// Median depth (radial distance); `0.0` where undefined.
    pub depth: ScalarMap,
    /// Opacity-weighted mean depth, for diagnostics.
    pub expected_depth: ScalarMap,
    /// World-frame unit normals; zero where nothing contributed.
    pub normal: NormalMap,
    pub alpha: ScalarMap,
    pub contributors: Map<u32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }
}

/// Per-view data for one Gaussian.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub active: bool,
    /// `S~^-1 R^T`
    pub m: Matrix3<f64>,
    /// Camera center in the whitened frame.
    pub o_loc: Vector3<f64>,
    pub c_coef: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Principal axis of the smallest scale (unsigned).
    pub normal: Vector3<f64>,
    pub mean_cam: Vector3<f64>,
    pub key: f64,
    pub max_scale: f64,
}

pub(crate) fn prepare(scene: &GaussianScene, cam: &ErpCamera, origin: &Vector3<f64>) -> Vec<Prepared> {
    let mut basis = [0.0; MAX_COEFFS];
    scene
        .gaussians
        .iter()
        .map(|g| {
            let m = g.world_to_local();
            let o_loc = m * (origin - g.mean);
            let opacity = g.effective_opacity();
            let view = g.mean - origin;
            let view_dir = if view.norm() > 0.0 { view.normalize() } else { Vector3::z() };
            sh::basis(&view_dir, scene.sh_degree, &mut basis);
            let color = sh_color_raw(&g.sh, &basis, scene.sh_degree).map(|c| c.clamp(0.0, 1.0));
            let mean_cam = cam.rotation() * view;
            let active = opacity >= ALPHA_MIN
                && m.iter().all(|x| x.is_finite())
                && o_loc.iter().all(|x| x.is_finite());
            Prepared {
                active,
                m,
                o_loc,
                c_coef: o_loc.dot(&o_loc),
                opacity,
                color,
                normal: g.rotation_matrix().column(g.normal_axis()).into_owned(),
                mean_cam,
                key: view.norm(),
                max_scale: g.inflated_scales().max(),
            }
        })
        .collect()
}

/// One accepted ray-Gaussian interaction.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Hit {
    /// Position in the candidate list.
    pub slot: u32,
    pub alpha: f64,
    pub capped: bool,
    pub t_star: f64,
    pub a: f64,
    pub b: f64,
    pub r_loc: Vector3<f64>,
    pub g: f64,
    /// Normal flipped to face the ray origin.
    pub normal: Vector3<f64>,
    pub sign: f64,
}

/// A hit together with the transmittance in front of it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    pub hit: Hit,
    pub trans: f64,
}

/// Composited result for one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySample {
    pub rgb: [f64; 3],
    pub alpha: f64,
    /// Median depth, `0.0` when undefined.
    pub depth: f64,
    pub expected_depth: f64,
    pub normal: Vector3<f64>,
    /// Unnormalized weighted normal sum.
    pub normal_raw: Vector3<f64>,
    pub count: u32,
    /// Index (into the contribution list) of the primitive defining the depth.
    pub depth_index: Option<usize>,
}

impl RaySample {
    fn empty() -> Self {
        Self {
            rgb: [0.0; 3],
            alpha: 0.0,
            depth: 0.0,
            expected_depth: 0.0,
            normal: Vector3::zeros(),
            normal_raw: Vector3::zeros(),
            count: 0,
            depth_index: None,
        }
    }
}

#[inline]
fn evaluate(p: &Prepared, slot: u32, dir: &Vector3<f64>, opts: &RenderOptions) -> Option<Hit> {
    if !p.active {
        return None;
    }
    let r_loc = p.m * dir;
    let a = r_loc.dot(&r_loc);
    let b = p.o_loc.dot(&r_loc);
    if !(a > 0.0) {
        return None;
    }
    let q = (p.c_coef - b * b / a).max(0.0);
    if q > opts.support_sigma * opts.support_sigma {
        return None;
    }
    let t_star = -b / a;
    if t_star <= opts.t_near {
        return None;
    }
    let g = (-0.5 * q).exp();
    let raw = p.opacity * g;
    if raw < ALPHA_MIN {
        return None;
    }
    let capped = raw > ALPHA_MAX;
    let sign = if p.normal.dot(dir) > 0.0 { -1.0 } else { 1.0 };
    Some(Hit {
        slot,
        alpha: if capped { ALPHA_MAX } else { raw },
        capped,
        t_star,
        a,
        b,
        r_loc,
        g,
        normal: p.normal * sign,
        sign,
    })
}

/// Composites `candidates` (ids into `prepared`) along `dir`.
pub(crate) fn composite(
    prepared: &[Prepared],
    candidates: &[u32],
    dir: &Vector3<f64>,
    opts: &RenderOptions,
    mut record: Option<&mut Vec<Contribution>>,
) -> RaySample {
    if let Some(r) = record.as_deref_mut() {
        r.clear();
    }
    let hits = candidates
        .iter()
        .enumerate()
        .filter_map(|(slot, &id)| evaluate(&prepared[id as usize], slot as u32, dir, opts));
    match opts.sort {
        SortMode::MeanDistance => accumulate(prepared, candidates, hits, record),
        SortMode::PerRay => {
            let mut all: Vec<Hit> = hits.collect();
            all.sort_by(|x, y| {
                x.t_star
                    .total_cmp(&y.t_star)
                    .then(candidates[x.slot as usize].cmp(&candidates[y.slot as usize]))
            });
            accumulate(prepared, candidates, all.into_iter(), record)
        }
    }
}

fn accumulate(
    prepared: &[Prepared],
    candidates: &[u32],
    hits: impl Iterator<Item = Hit>,
    mut record: Option<&mut Vec<Contribution>>,
) -> RaySample {
    let mut out = RaySample::empty();
    let mut trans = 1.0;
    let mut weighted_t = 0.0;
    let mut median_t = None;
    let mut last_t = 0.0;
    for hit in hits {
        let p = &prepared[candidates[hit.slot as usize] as usize];
        let w = hit.alpha * trans;
        for c in 0..3 {
            out.rgb[c] += p.color[c] * w;
        }
        out.normal_raw += hit.normal * w;
        weighted_t += hit.t_star * w;
        if let Some(r) = record.as_deref_mut() {
            r.push(Contribution { hit, trans });
        }
        let next = trans * (1.0 - hit.alpha);
        if median_t.is_none() && next < MEDIAN_TRANSMITTANCE {
            median_t = Some(hit.t_star);
            out.depth_index = Some(out.count as usize);
        }
        out.count += 1;
        last_t = hit.t_star;
        trans = next;
        if trans < T_MIN {
            break;
        }
    }
    out.alpha = 1.0 - trans;
    if out.alpha >= BACKGROUND_ALPHA {
        match median_t {
            Some(t) => out.depth = t,
            None => {
                out.depth = last_t;
                out.depth_index = Some(out.count as usize - 1);
            }
        }
    } else {
        out.depth_index = None;
    }
    if out.alpha > 0.0 {
        out.expected_depth = weighted_t / out.alpha;
    }
    let n = out.normal_raw.norm();
    if n > 1e-12 {
        out.normal = out.normal_raw / n;
    }
    out
}

/// Per-view render state: prepared primitives plus the tile index.
pub struct RenderContext<'a> {
    pub(crate) scene: &'a GaussianScene,
    pub(crate) cam: &'a ErpCamera,
    pub(crate) opts: RenderOptions,
    pub(crate) prepared: Vec<Prepared>,
    pub(crate) tiles: TileIndex,
    /// Per-tile candidate ids, parallel to `tiles.lists`.
    pub(crate) ids: Vec<Vec<u32>>,
}

impl<'a> RenderContext<'a> {
    pub fn new(scene: &'a GaussianScene, cam: &'a ErpCamera, opts: RenderOptions) -> Result<Self> {
        if opts.tile_size == 0 {
            return Err(Error::domain("tile size must be positive"));
        }
        let prepared = prepare(scene, cam, cam.center());
        let tiles = if opts.culling {
            tiles::build(&prepared, cam, opts.tile_size, opts.support_sigma)
        } else {
            brute_force_index(&prepared, cam, opts.tile_size)
        };
        let ids = tiles
            .lists
            .iter()
            .map(|l| l.iter().map(|e| e.id).collect())
            .collect();
        Ok(Self {
            scene,
            cam,
            opts,
            prepared,
            tiles,
            ids,
        })
    }

    pub fn tile_index(&self) -> &TileIndex {
        &self.tiles
    }

    pub fn options(&self) -> &RenderOptions {
        &self.opts
    }

    /// Pixels `(u, v)` of tile `t`.
    pub(crate) fn tile_pixels(&self, t: usize) -> impl Iterator<Item = (usize, usize)> {
        let ts = self.tiles.tile_size;
        let (tx, ty) = (t % self.tiles.tiles_x, t / self.tiles.tiles_x);
        let (w, h) = (self.cam.width(), self.cam.height());
        let (u0, v0) = (tx * ts, ty * ts);
        let (u1, v1) = ((u0 + ts).min(w), (v0 + ts).min(h));
        (v0..v1).flat_map(move |v| (u0..u1).map(move |u| (u, v)))
    }

    pub fn render(&self) -> RenderOutput {
        let (w, h) = (self.cam.width(), self.cam.height());
        let ntiles = self.tiles.lists.len();
        let per_tile: Vec<Vec<(usize, RaySample)>> = (0..ntiles)
            .into_par_iter()
            .map(|t| {
                let ids = &self.ids[t];
                self.tile_pixels(t)
                    .map(|(u, v)| {
                        let dir = self.cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
                        (v * w + u, composite(&self.prepared, ids, &dir, &self.opts, None))
                    })
                    .collect()
            })
            .collect();
        let mut out = RenderOutput {
            rgb: Map::filled(w, h, [0.0; 3]),
            depth: Map::filled(w, h, 0.0),
            expected_depth: Map::filled(w, h, 0.0),
            normal: Map::filled(w, h, Vector3::zeros()),
            alpha: Map::filled(w, h, 0.0),
            contributors: Map::filled(w, h, 0),
        };
        for tile in per_tile {
            for (i, s) in tile {
                out.rgb.data_mut()[i] = s.rgb;
                out.depth.data_mut()[i] = s.depth;
                out.expected_depth.data_mut()[i] = s.expected_depth;
                out.normal.data_mut()[i] = s.normal;
                out.alpha.data_mut()[i] = s.alpha;
                out.contributors.data_mut()[i] = s.count;
            }
        }
        out
    }
}

fn brute_force_index(prepared: &[Prepared], cam: &ErpCamera, tile_size: usize) -> TileIndex {
    let tiles_x = cam.width().div_ceil(tile_size);
    let tiles_y = cam.height().div_ceil(tile_size);
    let mut all: Vec<TileEntry> = prepared
        .iter()
        .enumerate()
        .filter(|(_, p)| p.active)
        .map(|(id, p)| TileEntry { id: id as u32, key: p.key })
        .collect();
    all.sort_by(|a, b| a.key.total_cmp(&b.key).then(a.id.cmp(&b.id)));
    TileIndex {
        tile_size,
        tiles_x,
        tiles_y,
        lists: vec![all; tiles_x * tiles_y],
    }
}

/// Renders RGB, depth, normal and opacity maps.
pub fn render(scene: &GaussianScene, cam: &ErpCamera, opts: &RenderOptions) -> Result<RenderOutput> {
    Ok(RenderContext::new(scene, cam, *opts)?.render())
}

/// Builds the conservative tile index for one view.
pub fn build_tile_index(scene: &GaussianScene, cam: &ErpCamera, tile_size: usize) -> Result<TileIndex> {
    let opts = RenderOptions {
        tile_size,
        ..RenderOptions::default()
    };
    Ok(RenderContext::new(scene, cam, opts)?.tiles)
}

/// Composites an arbitrary ray against the given candidate ids, visited in
/// the order given (or by `t*` under [`SortMode::PerRay`]).
pub fn composite_ray(
    scene: &GaussianScene,
    cam: &ErpCamera,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    candidates: &[u32],
    opts: &RenderOptions,
) -> Result<RaySample> {
    if let Some(&bad) = candidates.iter().find(|&&id| id as usize >= scene.len()) {
        return Err(Error::domain(format!("candidate id {bad} out of range")));
    }
    let prepared = prepare(scene, cam, origin);
    Ok(composite(&prepared, candidates, dir, opts, None))
}

/// Alpha of Gaussian `id` alone at every pixel, exactly as the compositor
/// evaluates it (zero where skipped).
pub fn alpha_footprint(scene: &GaussianScene, cam: &ErpCamera, id: usize, opts: &RenderOptions) -> ScalarMap {
    let single = GaussianScene {
        gaussians: vec![scene.gaussians[id].clone()],
        sh_degree: scene.sh_degree,
    };
    let prepared = prepare(&single, cam, cam.center());
    Map::from_fn(cam.width(), cam.height(), |u, v| {
        let dir = cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
        evaluate(&prepared[0], 0, &dir, opts).map_or(0.0, |h| h.alpha)
    })
}
