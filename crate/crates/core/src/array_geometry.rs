//! Hybrid antenna-array geometry and steering vectors.
//!
//! The hybrid array is a set of cylindrical sub-arrays (stacked circular
//! loops) plus one flat circular loop. Every sub-array is a ring of
//! uniformly spaced elements whose radius is chosen so that adjacent
//! elements are `d_r` wavelengths apart along the chord. Sub-arrays are
//! laid out along the x axis, cylinders first and the circular loop last,
//! with a surface-to-surface gap of `d_r`, and the whole line is centred
//! on the origin.
//!
//! Angles follow the usual antenna convention: `phi` is the polar angle
//! measured from the z axis and `theta` is the azimuth. Both are radians.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{kron, CVector};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A look direction: polar angle `phi` from the z axis and azimuth `theta`,
/// in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub phi: f64,
    pub theta: f64,
}

impl Direction {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }

    pub fn from_deg(phi_deg: f64, theta_deg: f64) -> Self {
        Self::new(phi_deg.to_radians(), theta_deg.to_radians())
    }

    pub fn phi_deg(&self) -> f64 {
        self.phi.to_degrees()
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }
}

/// Element gain pattern `g(phi, theta) >= 0`.
///
/// Full electromagnetic models are out of reach here, so the bowtie and
/// dipole elements are represented by cos-power proxies about a boresight
/// polar angle: `g = max(0, cos(phi - boresight))^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainPattern {
    #[default]
    Isotropic,
    /// Proxy for the printed bowtie: broad beam tilted to the 45° scan limit.
    Bowtie,
    /// Proxy for a vertical dipole: `sin(phi)`.
    Dipole,
    CosPower {
        exponent: f64,
        boresight_el_deg: f64,
    },
}

impl GainPattern {
    /// The `(exponent, boresight)` pair behind a cos-power pattern, or `None`
    /// for the isotropic element.
    pub fn cos_power_params(&self) -> Option<(f64, f64)> {
        match *self {
            GainPattern::Isotropic => None,
            GainPattern::Bowtie => Some((1.0, 45f64.to_radians())),
            GainPattern::Dipole => Some((1.0, 90f64.to_radians())),
            GainPattern::CosPower {
                exponent,
                boresight_el_deg,
            } => Some((exponent, boresight_el_deg.to_radians())),
        }
    }

    pub fn gain(&self, phi: f64, _theta: f64) -> f64 {
        match self.cos_power_params() {
            None => 1.0,
            Some((exponent, boresight)) => {
                let c = (phi - boresight).cos();
                // cos(±π/2) evaluates to ~6e-17, not zero
                if c <= f64::EPSILON {
                    0.0
                } else {
                    c.powf(exponent)
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((exponent, boresight)) = self.cos_power_params() {
            if !(exponent >= 0.0) || !exponent.is_finite() || !boresight.is_finite() {
                return invalid(
                    "cos-power gain needs a finite exponent >= 0 and a finite boresight",
                );
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self {
            GainPattern::Isotropic => "isotropic".into(),
            GainPattern::Bowtie => "bowtie".into(),
            GainPattern::Dipole => "dipole".into(),
            GainPattern::CosPower {
                exponent,
                boresight_el_deg,
            } => format!("cos{exponent}@{boresight_el_deg}"),
        }
    }

    /// Parses the names accepted on the command line.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "isotropic" => Ok(GainPattern::Isotropic),
            "bowtie" => Ok(GainPattern::Bowtie),
            "dipole" => Ok(GainPattern::Dipole),
            other => {
                // cos<exp>@<boresight_deg>
                let parsed = other.strip_prefix("cos").and_then(|rest| {
                    let (e, b) = rest.split_once('@')?;
                    Some((e.parse::<f64>().ok()?, b.parse::<f64>().ok()?))
                });
                match parsed {
                    Some((exponent, boresight_el_deg)) => {
                        let g = GainPattern::CosPower {
                            exponent,
                            boresight_el_deg,
                        };
                        g.validate()?;
                        Ok(g)
                    }
                    None => invalid(format!("unknown gain pattern `{other}`")),
                }
            }
        }
    }
}

/// Design parameters of the hybrid array. Spacings are in wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayParams {
    /// Elements per circular loop (N_h).
    pub n_per_loop: usize,
    /// Loops stacked in each cylinder (P_h).
    pub loops_per_cylinder: usize,
    /// Number of cylinders (M_h).
    pub n_cylinders: usize,
    /// Elements of the flat circular loop; 0 drops it.
    pub circular_elements: usize,
    #[serde(rename = "d_v_wavelengths")]
    pub d_v: f64,
    #[serde(rename = "d_r_wavelengths")]
    pub d_r: f64,
    #[serde(rename = "carrier_freq_hz")]
    pub carrier_freq: f64,
    /// Optional cross-check of `n_per_loop * loops_per_cylinder` (Q_h).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements_per_cylinder: Option<usize>,
    #[serde(default, rename = "element_gain")]
    pub gain: GainPattern,
}

impl ArrayParams {
    /// The 10 GHz design: three 2-loop cylinders of 20-element loops plus a
    /// 20-element circular loop, half-wavelength spacings.
    pub fn table1() -> Self {
        Self {
            n_per_loop: 20,
            loops_per_cylinder: 2,
            n_cylinders: 3,
            circular_elements: 20,
            d_v: 0.5,
            d_r: 0.5,
            carrier_freq: 10e9,
            elements_per_cylinder: Some(40),
            gain: GainPattern::Isotropic,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn elements_per_cylinder(&self) -> usize {
        self.n_per_loop * self.loops_per_cylinder
    }

    pub fn total_elements(&self) -> usize {
        self.n_cylinders * self.elements_per_cylinder() + self.circular_elements
    }

    pub fn with_gain(mut self, gain: GainPattern) -> Self {
        self.gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_loop == 0 || self.loops_per_cylinder == 0 || self.n_cylinders == 0 {
            return invalid("n_per_loop, loops_per_cylinder and n_cylinders must all be >= 1");
        }
        if let Some(q) = self.elements_per_cylinder {
            if q != self.elements_per_cylinder() {
                return invalid(format!(
                    "elements_per_cylinder = {q} but n_per_loop * loops_per_cylinder = {}",
                    self.elements_per_cylinder()
                ));
            }
        }
        if !(self.d_v > 0.0 && self.d_v.is_finite()) || !(self.d_r > 0.0 && self.d_r.is_finite()) {
            return invalid("spacings d_v and d_r must be positive and finite");
        }
        if !(self.carrier_freq > 0.0 && self.carrier_freq.is_finite()) {
            return invalid("carrier frequency must be positive");
        }
        self.gain.validate()
    }
}

/// One antenna element: position in metres and its gain pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub position: [f64; 3],
    pub gain: GainPattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubArrayKind {
    Cylinder(usize),
    Circular,
}

/// A contiguous run of elements belonging to one sub-array.
#[derive(Debug, Clone, PartialEq)]
pub struct SubArray {
    pub kind: SubArrayKind,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayLayout {
    pub elements: Vec<Element>,
    pub subarrays: Vec<SubArray>,
    pub wavelength: f64,
}

impl ArrayLayout {
    /// Builds a layout directly from element positions, as one sub-array.
    pub fn from_elements(elements: Vec<Element>, wavelength: f64) -> Self {
        let len = elements.len();
        Self {
            elements,
            subarrays: vec![SubArray {
                kind: SubArrayKind::Circular,
                start: 0,
                len,
            }],
            wavelength,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// The elements of sub-array `index` as a standalone layout.
    pub fn part(&self, index: usize) -> ArrayLayout {
        let sub = &self.subarrays[index];
        ArrayLayout::from_elements(
            self.elements[sub.start..sub.start + sub.len].to_vec(),
            self.wavelength,
        )
    }

    pub fn parts(&self) -> Vec<ArrayLayout> {
        (0..self.subarrays.len()).map(|i| self.part(i)).collect()
    }

    /// Unnormalized element responses `g_n(phi, theta) exp(-j K·r_n)`.
    pub fn response(&self, phi: f64, theta: f64) -> CVector {
        let k = wavevector(phi, theta, self.wavelength);
        CVector::from_iterator(
            self.len(),
            self.elements
                .iter()
                .map(|e| Complex64::from_polar(e.gain.gain(phi, theta), -phase_shift(&k, e))),
        )
    }
}

/// A unit-norm complex array response toward `direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub values: CVector,
    pub direction: Direction,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn normalized(values: CVector, direction: Direction) -> Result<Self> {
        let norm = values.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "steering vector toward (phi {:.3}°, theta {:.3}°) has zero norm; all element gains vanish",
                direction.phi_deg(),
                direction.theta_deg()
            )));
        }
        Ok(Self {
            values: values.unscale(norm),
            direction,
        })
    }
}

fn ring_radius(n: usize, spacing: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        spacing / (2.0 * (PI / n as f64).sin())
    }
}

/// Lays out the hybrid array. Element order is cylinder-major, loop-minor
/// (element index fastest), with the circular loop last.
pub fn build_hybrid_layout(params: &ArrayParams) -> Result<ArrayLayout> {
    params.validate()?;
    let lambda = params.wavelength();
    let gap = params.d_r * lambda;
    let cyl_radius = ring_radius(params.n_per_loop, gap);
    let circ_radius = ring_radius(params.circular_elements, gap);

    let mut radii = vec![cyl_radius; params.n_cylinders];
    if params.circular_elements > 0 {
        radii.push(circ_radius);
    }
    let mut centers = vec![0.0; radii.len()];
    for s in 1..radii.len() {
        centers[s] = centers[s - 1] + radii[s - 1] + radii[s] + gap;
    }
    let shift = (centers[0] + centers[centers.len() - 1]) / 2.0;
    for c in &mut centers {
        *c -= shift;
    }

    let ring = |n: usize, radius: f64, cx: f64, h: f64, out: &mut Vec<Element>| {
        for i in 0..n {
            let angle = 2.0 * PI * i as f64 / n as f64;
            out.push(Element {
                position: [cx + radius * angle.cos(), radius * angle.sin(), h],
                gain: params.gain,
            });
        }
    };

    let mut elements = Vec::with_capacity(params.total_elements());
    let mut subarrays = Vec::with_capacity(radii.len());
    for (m, &center) in centers.iter().enumerate().take(params.n_cylinders) {
        let start = elements.len();
        for p in 0..params.loops_per_cylinder {
            let h = p as f64 * params.d_v * lambda;
            ring(params.n_per_loop, cyl_radius, center, h, &mut elements);
        }
        subarrays.push(SubArray {
            kind: SubArrayKind::Cylinder(m),
            start,
            len: elements.len() - start,
        });
    }
    if params.circular_elements > 0 {
        let start = elements.len();
        ring(
            params.circular_elements,
            circ_radius,
            centers[params.n_cylinders],
            0.0,
            &mut elements,
        );
        subarrays.push(SubArray {
            kind: SubArrayKind::Circular,
            start,
            len: elements.len() - start,
        });
    }

    Ok(ArrayLayout {
        elements,
        subarrays,
        wavelength: lambda,
    })
}

/// `K = (2π/λ)(sin φ sin θ, sin φ cos θ, cos φ)` in rad/m.
pub fn wavevector(phi: f64, theta: f64, wavelength: f64) -> [f64; 3] {
    let k = 2.0 * PI / wavelength;
    [
        k * phi.sin() * theta.sin(),
        k * phi.sin() * theta.cos(),
        k * phi.cos(),
    ]
}

/// Phase of `element` relative to the origin, `K·r_n`.
pub fn phase_shift(k: &[f64; 3], element: &Element) -> f64 {
    k[0] * element.position[0] + k[1] * element.position[1] + k[2] * element.position[2]
}

/// Unit-norm steering vector of a single sub-array.
pub fn sub_steering_vector(part: &ArrayLayout, phi: f64, theta: f64) -> Result<SteeringVector> {
    if part.is_empty() {
        return invalid("steering vector of an empty array");
    }
    SteeringVector::normalized(part.response(phi, theta), Direction::new(phi, theta))
}

/// Kronecker composition of the sub-array steering vectors, in layout order.
///
/// The result has `prod(len(sub))` entries, which is not the physical
/// element count; [`steering_vector`] is the concatenated per-element form
/// used by the beamformer.
pub fn hybrid_steering_vector(
    layout: &ArrayLayout,
    phi: f64,
    theta: f64,
) -> Result<SteeringVector> {
    let mut acc: Option<CVector> = None;
    for part in layout.parts() {
        let sv = sub_steering_vector(&part, phi, theta)?;
        acc = Some(match acc {
            None => sv.values,
            Some(prev) => kron(&prev, &sv.values),
        });
    }
    let values = acc.ok_or_else(|| Error::InvalidConfig("layout has no sub-arrays".into()))?;
    SteeringVector::normalized(values, Direction::new(phi, theta))
}

/// Unit-norm steering vector over the physical elements.
pub fn steering_vector(layout: &ArrayLayout, phi: f64, theta: f64) -> Result<SteeringVector> {
    if layout.is_empty() {
        return invalid("steering vector of an empty array");
    }
    SteeringVector::normalized(layout.response(phi, theta), Direction::new(phi, theta))
}
