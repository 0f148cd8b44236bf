//! Synthetic B-scan rendering and geometric tip-placement labels.
//!
//! Rows run along the plane's depth axis (into the retina), columns along its
//! lateral axis. Pixel centres sit at half-pitch offsets from the plane edges,
//! so the plane origin is the image centre.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye_sim::{
    inward_normal, is_intraluminal, LumenFluid, Scenario, TissueConfig, TissueState, NEEDLE_DIAMETER_UM,
};
use crate::geometry::RigidTransform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OctError {
    #[error("scan plane axes are not orthonormal")]
    NotOrthonormal,
    #[error("scan plane extent must be positive")]
    BadExtent,
    #[error("tip is outside the globe")]
    TipOutsideGlobe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlane")]
pub struct ScanPlane {
    pub origin: Vector3<f64>,
    pub lateral_axis: Vector3<f64>,
    /// Points into the retina.
    pub depth_axis: Vector3<f64>,
    pub width_mm: f64,
    pub depth_mm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlane {
    origin: Vector3<f64>,
    lateral_axis: Vector3<f64>,
    depth_axis: Vector3<f64>,
    #[serde(default = "default_width")]
    width_mm: f64,
    #[serde(default = "default_depth")]
    depth_mm: f64,
}

fn default_width() -> f64 {
    1.5
}
fn default_depth() -> f64 {
    0.75
}

impl TryFrom<RawPlane> for ScanPlane {
    type Error = OctError;
    fn try_from(r: RawPlane) -> Result<Self, OctError> {
        ScanPlane::new(r.origin, r.lateral_axis, r.depth_axis, r.width_mm, r.depth_mm)
    }
}

impl ScanPlane {
    pub fn new(
        origin: Vector3<f64>,
        lateral_axis: Vector3<f64>,
        depth_axis: Vector3<f64>,
        width_mm: f64,
        depth_mm: f64,
    ) -> Result<Self, OctError> {
        let tol = 1e-9;
        if (lateral_axis.norm() - 1.0).abs() > tol
            || (depth_axis.norm() - 1.0).abs() > tol
            || lateral_axis.dot(&depth_axis).abs() > tol
        {
            return Err(OctError::NotOrthonormal);
        }
        if !(width_mm > 0.0 && depth_mm > 0.0 && origin.iter().all(|v| v.is_finite())) {
            return Err(OctError::BadExtent);
        }
        Ok(ScanPlane {
            origin,
            lateral_axis,
            depth_axis,
            width_mm,
            depth_mm,
        })
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.lateral_axis.cross(&self.depth_axis)
    }

    /// Same plane moved by `mm` along its lateral axis.
    pub fn shifted_lateral(&self, mm: f64) -> ScanPlane {
        ScanPlane {
            origin: self.origin + self.lateral_axis * mm,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OctConfig {
    pub width_px: usize,
    pub height_px: usize,
    /// Half-width of the multiplicative speckle factor.
    pub speckle: f64,
    /// Needle length drawn behind the tip.
    pub needle_drawn_mm: f64,
    pub choroid_thickness_um: f64,
}

impl Default for OctConfig {
    fn default() -> Self {
        OctConfig {
            width_px: 512,
            height_px: 256,
            speckle: 0.3,
            needle_drawn_mm: 6.0,
            choroid_thickness_um: 200.0,
        }
    }
}

pub mod intensity {
    pub const VITREOUS: f64 = 0.04;
    pub const RETINA: f64 = 0.55;
    pub const NERVE_FIBRE: f64 = 0.75;
    pub const RPE: f64 = 0.85;
    pub const CHOROID: f64 = 0.25;
    pub const SCLERA: f64 = 0.12;
    pub const WALL: f64 = 0.9;
    pub const BLOOD: f64 = 0.7;
    pub const CLEAR_LUMEN: f64 = 0.03;
    pub const NEEDLE: f64 = 1.0;
    /// Thickness of the bright inner and outer retinal bands.
    pub const BAND_UM: f64 = 20.0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BScan {
    pub width: usize,
    pub height: usize,
    pub lateral_pitch_um: f64,
    pub axial_pitch_um: f64,
    /// Row-major, in [0, 1].
    pub pixels: Vec<f32>,
    pub plane: ScanPlane,
    pub t: f64,
    /// Set when the plane misses the globe; the image is then all zero.
    pub empty: bool,
}

impl BScan {
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// World position of a pixel centre.
    pub fn pixel_point(&self, row: usize, col: usize) -> Vector3<f64> {
        pixel_point(&self.plane, self.width, self.height, row, col)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>, image::ImageError> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_bytes())
            .expect("buffer matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

fn pixel_point(plane: &ScanPlane, w: usize, h: usize, row: usize, col: usize) -> Vector3<f64> {
    let u = ((col as f64 + 0.5) / w as f64 - 0.5) * plane.width_mm;
    let v = ((row as f64 + 0.5) / h as f64 - 0.5) * plane.depth_mm;
    plane.origin + plane.lateral_axis * u + plane.depth_axis * v
}

/// True when `p` lies inside the drawn needle: a flat-ended cylinder
/// extending `drawn_mm` back from the tip.
pub fn in_needle(p: &Vector3<f64>, tip: &RigidTransform, drawn_mm: f64) -> bool {
    let back = -tip.rotation.shaft_axis();
    let rel = p - tip.translation;
    let s = rel.dot(&back);
    if !(0.0..=drawn_mm).contains(&s) {
        return false;
    }
    let r = NEEDLE_DIAMETER_UM * 0.5e-3;
    (rel - back * s).norm_squared() <= r * r
}

/// Noise-free tissue intensity at a world point (needle excluded).
pub fn tissue_intensity(p: &Vector3<f64>, scenario: &Scenario, tissue: &TissueState, cfg: &OctConfig) -> f64 {
    use intensity::*;
    let r = p.norm();
    let big_r = scenario.globe_radius_mm;
    let v = &scenario.vessel;
    // Vessels sit on the surface, so only points near it need the axis search.
    if (r - big_r).abs() <= v.outer_radius_mm() + 1e-3 {
        let axis = v.nearest(p);
        if axis.distance_mm <= v.lumen_radius_mm() {
            return match tissue.fluid_at(axis.arc_mm) {
                LumenFluid::Blood => BLOOD,
                LumenFluid::Flushed | LumenFluid::Empty => CLEAR_LUMEN,
            };
        }
        if axis.distance_mm <= v.outer_radius_mm() {
            return WALL;
        }
    }
    let depth_um = (r - big_r) * 1e3;
    let t = scenario.retina_thickness_um;
    if depth_um < 0.0 {
        VITREOUS
    } else if depth_um < BAND_UM {
        NERVE_FIBRE
    } else if depth_um < t - BAND_UM {
        RETINA
    } else if depth_um < t {
        RPE
    } else if depth_um < t + cfg.choroid_thickness_um {
        CHOROID
    } else {
        SCLERA
    }
}

/// Renders a B-scan. Speckle is seeded from `(seed, tick)` so re-rendering
/// the same snapshot gives the same image.
#[allow(clippy::too_many_arguments)]
pub fn render_bscan(
    scenario: &Scenario,
    tissue: &TissueState,
    tip: Option<&RigidTransform>,
    plane: &ScanPlane,
    cfg: &OctConfig,
    seed: u64,
    tick: u64,
    t: f64,
) -> BScan {
    let (w, h) = (cfg.width_px, cfg.height_px);
    let mut scan = BScan {
        width: w,
        height: h,
        lateral_pitch_um: plane.width_mm * 1e3 / w as f64,
        axial_pitch_um: plane.depth_mm * 1e3 / h as f64,
        pixels: vec![0.0; w * h],
        plane: *plane,
        t,
        empty: false,
    };
    let outer = scenario.globe_radius_mm + (scenario.retina_thickness_um + cfg.choroid_thickness_um) * 1e-3;
    let hits_globe = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .any(|(i, j)| pixel_point(plane, w, h, i, j).norm() < outer);
    if !hits_globe {
        scan.empty = true;
        return scan;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tick);
    let mut shadowed = vec![false; w];
    for i in 0..h {
        for (j, shade) in shadowed.iter_mut().enumerate() {
            let p = pixel_point(plane, w, h, i, j);
            let needle = tip.is_some_and(|tp| in_needle(&p, tp, cfg.needle_drawn_mm));
            // Draw the speckle sample for every pixel so the stream position
            // never depends on image content.
            let u: f64 = rng.random_range(-1.0..=1.0);
            let value = if needle {
                *shade = true;
                intensity::NEEDLE
            } else if *shade {
                0.0
            } else {
                (tissue_intensity(&p, scenario, tissue, cfg) * (1.0 + cfg.speckle * u)).clamp(0.0, 1.0)
            };
            scan.pixels[i * w + j] = value as f32;
        }
    }
    scan
}

/// Plane through the tip, normal to the local vessel tangent, depth axis
/// pointing out of the globe.
pub fn auto_plane_at_tip(tip: &Vector3<f64>, scenario: &Scenario) -> Result<ScanPlane, OctError> {
    if tip.norm() >= scenario.globe_radius_mm + scenario.retina_thickness_um * 1e-3 {
        return Err(OctError::TipOutsideGlobe);
    }
    let axis = scenario.vessel.nearest(tip);
    let t = axis.tangent;
    let out = -inward_normal(&axis.point);
    let depth = (out - t * out.dot(&t)).normalize();
    let lateral = t.cross(&depth);
    ScanPlane::new(*tip, lateral, depth, default_width(), default_depth())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TipPlacement {
    AboveWall,
    Indenting,
    Intraluminal,
    ThroughWall,
}

/// Ground-truth placement label from the scene geometry.
pub fn classify_tip_placement(
    scenario: &Scenario,
    tissue: &TissueState,
    tip: &Vector3<f64>,
    cfg: &TissueConfig,
) -> TipPlacement {
    if tissue.punctured {
        let axis = scenario.vessel.nearest(tip);
        let superficial = (tip - axis.point).dot(&inward_normal(&axis.point)) >= 0.0;
        if is_intraluminal(tip, scenario, tissue, cfg) {
            TipPlacement::Intraluminal
        } else if superficial && axis.distance_mm > scenario.vessel.outer_radius_mm() {
            // Backed out through the entry hole.
            TipPlacement::AboveWall
        } else {
            TipPlacement::ThroughWall
        }
    } else {
        let d = scenario.vessel.nearest(tip).distance_mm;
        if d - (scenario.vessel.outer_radius_mm() - tissue.deflection_um * 1e-3) > 0.0 {
            TipPlacement::AboveWall
        } else {
            TipPlacement::Indenting
        }
    }
}
