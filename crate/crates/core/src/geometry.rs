//! Node states and the mapping from geometry to channel parameters.
//!
//! Frame convention: a node's [`Rotation`] maps local coordinates to global
//! ones, so a global direction `u` is `Rᵀu` in the node frame. Azimuth is
//! measured from local +x toward +y, elevation from the local x-y plane
//! toward +z. Boresight is local +x. Azimuths are reported in (−π, π].

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Quaternion, Vector3};

use crate::{Error, Result, SPEED_OF_LIGHT};

/// Below this separation two nodes are considered coincident.
pub const MIN_SEPARATION: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Orientation of a node, stored as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    /// Accepts a rotation matrix; rejects matrices that are not orthonormal
    /// with determinant +1.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let dev = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if dev > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidParameter(format!(
                "rotation matrix not orthonormal (|RᵀR − I| = {dev:e}, det = {det})"
            )));
        }
        let rot = Rotation3::from_matrix_unchecked(*m);
        Ok(Self {
            q: UnitQuaternion::from_rotation_matrix(&rot),
        })
    }

    /// Quaternion in (w, x, y, z) order; must have unit norm.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = w * w + x * x + y * y + z * z;
        if (n2 - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidParameter(format!(
                "quaternion has squared norm {n2}, expected 1"
            )));
        }
        Ok(Self {
            q: UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)),
        })
    }

    /// Rotation by angle `|v|` about axis `v/|v|`.
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        Self {
            q: UnitQuaternion::from_scaled_axis(*v),
        }
    }

    /// Roll about x, pitch about y, yaw about z (applied in that order).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            q: UnitQuaternion::from_euler_angles(roll, pitch, yaw),
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    /// (w, x, y, z).
    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Local increment: `R · exp([δ]×)`.
    pub fn perturbed(&self, delta: &Vector3<f64>) -> Self {
        Self {
            q: self.q * UnitQuaternion::from_scaled_axis(*delta),
        }
    }

    pub fn to_local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse_transform_vector(v)
    }

    pub fn to_global(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.transform_vector(v)
    }
}

/// Azimuth/elevation pair in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Angles {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Angles {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth: wrap_angle(azimuth),
            elevation,
        }
    }

    pub fn from_direction(d: &Vector3<f64>) -> Self {
        let n = d.norm();
        let el = (d.z / n).clamp(-1.0, 1.0).asin();
        Self::new(d.y.atan2(d.x), el)
    }

    /// Unit vector in the local frame.
    pub fn direction(&self) -> Vector3<f64> {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        Vector3::new(ce * ca, ce * sa, se)
    }
}

/// One scalar component of [`GeoParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    AoaAzimuth,
    AoaElevation,
    AodAzimuth,
    AodElevation,
    Delay,
    Doppler,
}

impl ParamKind {
    /// Canonical order `[θᵀ, φᵀ, τ, ν]`.
    pub const ALL: [ParamKind; 6] = [
        ParamKind::AoaAzimuth,
        ParamKind::AoaElevation,
        ParamKind::AodAzimuth,
        ParamKind::AodElevation,
        ParamKind::Delay,
        ParamKind::Doppler,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_azimuth(self) -> bool {
        matches!(self, ParamKind::AoaAzimuth | ParamKind::AodAzimuth)
    }

    pub fn label(self) -> &'static str {
        match self {
            ParamKind::AoaAzimuth => "aoa_az",
            ParamKind::AoaElevation => "aoa_el",
            ParamKind::AodAzimuth => "aod_az",
            ParamKind::AodElevation => "aod_el",
            ParamKind::Delay => "delay",
            ParamKind::Doppler => "doppler",
        }
    }

    /// Physical unit of the component.
    pub fn unit(self) -> &'static str {
        match self {
            ParamKind::Delay => "s",
            ParamKind::Doppler => "Hz",
            _ => "rad",
        }
    }
}

/// Subset of [`ParamKind`]s, iterated in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ParamSet(u8);

impl ParamSet {
    pub const EMPTY: ParamSet = ParamSet(0);
    pub const ALL: ParamSet = ParamSet(0b11_1111);

    pub fn of(kinds: &[ParamKind]) -> Self {
        kinds.iter().fold(Self::EMPTY, |s, &k| s.with(k))
    }

    pub fn with(self, kind: ParamKind) -> Self {
        ParamSet(self.0 | (1 << kind.index()))
    }

    pub fn without(self, kind: ParamKind) -> Self {
        ParamSet(self.0 & !(1 << kind.index()))
    }

    pub fn contains(self, kind: ParamKind) -> bool {
        self.0 & (1 << kind.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ParamKind> {
        ParamKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    /// Position of `kind` within this set, if present.
    pub fn position(self, kind: ParamKind) -> Option<usize> {
        self.iter().position(|k| k == kind)
    }
}

/// Geometric channel parameters of one path (gain excluded).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeoParams {
    pub aoa: Angles,
    pub aod: Angles,
    /// Seconds.
    pub delay: f64,
    /// Hz.
    pub doppler: f64,
}

impl GeoParams {
    pub fn delay_only(delay: f64) -> Self {
        Self {
            delay,
            ..Self::default()
        }
    }

    pub fn get(&self, kind: ParamKind) -> f64 {
        match kind {
            ParamKind::AoaAzimuth => self.aoa.azimuth,
            ParamKind::AoaElevation => self.aoa.elevation,
            ParamKind::AodAzimuth => self.aod.azimuth,
            ParamKind::AodElevation => self.aod.elevation,
            ParamKind::Delay => self.delay,
            ParamKind::Doppler => self.doppler,
        }
    }

    pub fn set(&mut self, kind: ParamKind, value: f64) {
        match kind {
            ParamKind::AoaAzimuth => self.aoa.azimuth = wrap_angle(value),
            ParamKind::AoaElevation => self.aoa.elevation = value,
            ParamKind::AodAzimuth => self.aod.azimuth = wrap_angle(value),
            ParamKind::AodElevation => self.aod.elevation = value,
            ParamKind::Delay => self.delay = value,
            ParamKind::Doppler => self.doppler = value,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        ParamKind::ALL.map(|k| self.get(k))
    }

    /// `self − other` per component, azimuths differenced on the circle.
    pub fn difference(&self, other: &GeoParams, kind: ParamKind) -> f64 {
        let d = self.get(kind) - other.get(kind);
        if kind.is_azimuth() {
            wrap_angle(d)
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Downlink,
    Uplink,
}

/// Infrastructure node with known pose. Anchors share a common clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorState {
    pub id: u32,
    pub position: Vector3<f64>,
    pub orientation: Rotation,
}

impl AnchorState {
    pub fn new(id: u32, position: Vector3<f64>, orientation: Rotation) -> Self {
        Self {
            id,
            position,
            orientation,
        }
    }
}

/// User equipment state: position (m), clock bias (s), orientation, velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UEState {
    pub position: Vector3<f64>,
    pub clock_bias: f64,
    pub orientation: Rotation,
    pub velocity: Vector3<f64>,
}

impl UEState {
    pub fn at(position: Vector3<f64>) -> Self {
        Self {
            position,
            clock_bias: 0.0,
            orientation: Rotation::identity(),
            velocity: Vector3::zeros(),
        }
    }
}

/// Point object for sensing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Radar cross section, m².
    pub rcs: f64,
}

impl ObjectState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, rcs: f64) -> Result<Self> {
        if !(rcs > 0.0) {
            return Err(Error::InvalidParameter(format!("rcs must be positive, got {rcs}")));
        }
        Ok(Self {
            position,
            velocity,
            rcs,
        })
    }
}

fn unit_between(from: &Vector3<f64>, to: &Vector3<f64>, what: &str) -> Result<(Vector3<f64>, f64)> {
    let diff = to - from;
    let d = diff.norm();
    if !(d > MIN_SEPARATION) {
        return Err(Error::DegenerateGeometry(format!("{what}: coincident positions")));
    }
    Ok((diff / d, d))
}

/// LoS parameters between an anchor and the UE.
///
/// Downlink: the anchor transmits, so the AoD lives in the anchor frame and
/// the AoA in the UE frame. Uplink swaps the roles. Doppler uses the one-way
/// convention `ν = vᵀu/λ` with `u` pointing from the UE toward the anchor.
pub fn los_params(anchor: &AnchorState, ue: &UEState, link: Link, carrier: f64) -> Result<GeoParams> {
    let (u, d) = unit_between(&anchor.position, &ue.position, "anchor/UE")?;
    let seen_from_anchor = Angles::from_direction(&anchor.orientation.to_local(&u));
    let seen_from_ue = Angles::from_direction(&ue.orientation.to_local(&(-u)));
    let (aoa, aod) = match link {
        Link::Downlink => (seen_from_ue, seen_from_anchor),
        Link::Uplink => (seen_from_anchor, seen_from_ue),
    };
    let wavelength = SPEED_OF_LIGHT / carrier;
    Ok(GeoParams {
        aoa,
        aod,
        delay: d / SPEED_OF_LIGHT + ue.clock_bias,
        doppler: ue.velocity.dot(&(-u)) / wavelength,
    })
}

/// Monostatic radar parameters of an object, measured in the sensor frame.
pub fn monostatic_params(sensor: &AnchorState, object: &ObjectState, carrier: f64) -> Result<GeoParams> {
    let (u, d) = unit_between(&sensor.position, &object.position, "sensor/object")?;
    let angles = Angles::from_direction(&sensor.orientation.to_local(&u));
    let wavelength = SPEED_OF_LIGHT / carrier;
    Ok(GeoParams {
        aoa: angles,
        aod: angles,
        delay: 2.0 * d / SPEED_OF_LIGHT,
        doppler: 2.0 * object.velocity.dot(&(-u)) / wavelength,
    })
}

/// Bistatic parameters. CFO is taken as zero, so the Doppler is the sum of
/// the velocity projections on the object→Tx and object→Rx unit vectors.
pub fn bistatic_params(
    tx: &AnchorState,
    rx: &AnchorState,
    object: &ObjectState,
    clock_bias: f64,
    carrier: f64,
) -> Result<GeoParams> {
    let (u_t, d_t) = unit_between(&tx.position, &object.position, "tx/object")?;
    let (u_r, d_r) = unit_between(&rx.position, &object.position, "rx/object")?;
    let wavelength = SPEED_OF_LIGHT / carrier;
    Ok(GeoParams {
        aoa: Angles::from_direction(&rx.orientation.to_local(&u_r)),
        aod: Angles::from_direction(&tx.orientation.to_local(&u_t)),
        delay: (d_t + d_r) / SPEED_OF_LIGHT + clock_bias,
        doppler: object.velocity.dot(&(-u_t - u_r)) / wavelength,
    })
}

/// Which state-to-parameter map a Jacobian refers to.
#[derive(Debug, Clone, Copy)]
pub enum Mapping {
    Los {
        anchor: AnchorState,
        link: Link,
        carrier: f64,
    },
    Monostatic {
        sensor: AnchorState,
        carrier: f64,
    },
    Bistatic {
        tx: AnchorState,
        rx: AnchorState,
        carrier: f64,
    },
}

/// The moving node a [`Mapping`] is evaluated at.
#[derive(Debug, Clone, Copy)]
pub enum MappedState {
    Ue(UEState),
    Object { object: ObjectState, clock_bias: f64 },
}

/// Scalar state coordinates. Rotation coordinates are local rotation-vector
/// increments around the current orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateParam {
    PositionX,
    PositionY,
    PositionZ,
    ClockBias,
    RotationX,
    RotationY,
    RotationZ,
    VelocityX,
    VelocityY,
    VelocityZ,
}

impl StateParam {
    pub const POSITION: [StateParam; 3] = [StateParam::PositionX, StateParam::PositionY, StateParam::PositionZ];
    pub const ROTATION: [StateParam; 3] = [StateParam::RotationX, StateParam::RotationY, StateParam::RotationZ];
    pub const VELOCITY: [StateParam; 3] = [StateParam::VelocityX, StateParam::VelocityY, StateParam::VelocityZ];

    pub fn label(self) -> &'static str {
        match self {
            StateParam::PositionX => "x",
            StateParam::PositionY => "y",
            StateParam::PositionZ => "z",
            StateParam::ClockBias => "clock_bias",
            StateParam::RotationX => "rot_x",
            StateParam::RotationY => "rot_y",
            StateParam::RotationZ => "rot_z",
            StateParam::VelocityX => "vx",
            StateParam::VelocityY => "vy",
            StateParam::VelocityZ => "vz",
        }
    }

    fn is_rotation(self) -> bool {
        Self::ROTATION.contains(&self)
    }
}

impl MappedState {
    fn position(&self) -> Vector3<f64> {
        match self {
            MappedState::Ue(ue) => ue.position,
            MappedState::Object { object, .. } => object.position,
        }
    }

    /// Current value of a coordinate; rotation increments are always 0.
    pub fn get(&self, p: StateParam) -> Result<f64> {
        let (pos, vel, bias) = match self {
            MappedState::Ue(ue) => (ue.position, ue.velocity, ue.clock_bias),
            MappedState::Object { object, clock_bias } => (object.position, object.velocity, *clock_bias),
        };
        Ok(match p {
            StateParam::PositionX => pos.x,
            StateParam::PositionY => pos.y,
            StateParam::PositionZ => pos.z,
            StateParam::ClockBias => bias,
            StateParam::VelocityX => vel.x,
            StateParam::VelocityY => vel.y,
            StateParam::VelocityZ => vel.z,
            _ => {
                if matches!(self, MappedState::Object { .. }) {
                    return Err(Error::InvalidParameter("point objects have no orientation".into()));
                }
                0.0
            }
        })
    }

    /// Copy with coordinate `p` moved by `delta`.
    pub fn shifted(&self, p: StateParam, delta: f64) -> Result<MappedState> {
        let mut out = *self;
        let (pos, vel, bias) = match &mut out {
            MappedState::Ue(ue) => (&mut ue.position, &mut ue.velocity, &mut ue.clock_bias),
            MappedState::Object { object, clock_bias } => (&mut object.position, &mut object.velocity, clock_bias),
        };
        match p {
            StateParam::PositionX => pos.x += delta,
            StateParam::PositionY => pos.y += delta,
            StateParam::PositionZ => pos.z += delta,
            StateParam::ClockBias => *bias += delta,
            StateParam::VelocityX => vel.x += delta,
            StateParam::VelocityY => vel.y += delta,
            StateParam::VelocityZ => vel.z += delta,
            _ => {
                let axis = match p {
                    StateParam::RotationX => Vector3::x(),
                    StateParam::RotationY => Vector3::y(),
                    _ => Vector3::z(),
                };
                match &mut out {
                    MappedState::Ue(ue) => ue.orientation = ue.orientation.perturbed(&(axis * delta)),
                    MappedState::Object { .. } => {
                        return Err(Error::InvalidParameter("point objects have no orientation".into()))
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Mapping {
    pub fn evaluate(&self, state: &MappedState) -> Result<GeoParams> {
        match (self, state) {
            (Mapping::Los { anchor, link, carrier }, MappedState::Ue(ue)) => los_params(anchor, ue, *link, *carrier),
            (Mapping::Monostatic { sensor, carrier }, MappedState::Object { object, .. }) => {
                monostatic_params(sensor, object, *carrier)
            }
            (Mapping::Bistatic { tx, rx, carrier }, MappedState::Object { object, clock_bias }) => {
                bistatic_params(tx, rx, object, *clock_bias, *carrier)
            }
            _ => Err(Error::InvalidParameter(
                "LoS mappings take a UE state, sensing mappings take an object".into(),
            )),
        }
    }

    /// Closed-form ∂τ/∂p.
    fn delay_derivative(&self, state: &MappedState, p: StateParam) -> Result<f64> {
        let x = state.position();
        let grad = match self {
            Mapping::Los { anchor, .. } => {
                let (u, _) = unit_between(&anchor.position, &x, "anchor/UE")?;
                u / SPEED_OF_LIGHT
            }
            Mapping::Monostatic { sensor, .. } => {
                let (u, _) = unit_between(&sensor.position, &x, "sensor/object")?;
                2.0 * u / SPEED_OF_LIGHT
            }
            Mapping::Bistatic { tx, rx, .. } => {
                let (u_t, _) = unit_between(&tx.position, &x, "tx/object")?;
                let (u_r, _) = unit_between(&rx.position, &x, "rx/object")?;
                (u_t + u_r) / SPEED_OF_LIGHT
            }
        };
        Ok(match p {
            StateParam::PositionX => grad.x,
            StateParam::PositionY => grad.y,
            StateParam::PositionZ => grad.z,
            StateParam::ClockBias => match self {
                Mapping::Monostatic { .. } => 0.0,
                _ => 1.0,
            },
            _ => 0.0,
        })
    }
}

/// Central-difference step policy: `h = max(relative·|value|, floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdStep {
    pub relative: f64,
    pub floor: f64,
}

impl Default for FdStep {
    fn default() -> Self {
        Self {
            relative: 1e-6,
            floor: 1e-9,
        }
    }
}

impl FdStep {
    pub fn step_for(&self, value: f64) -> f64 {
        (self.relative * value.abs()).max(self.floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMethod {
    Analytic,
    CentralDifference,
}

/// ∂η/∂s with rows in [`ParamKind::ALL`] order.
#[derive(Debug, Clone)]
pub struct StateJacobian {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<StateParam>,
    /// How each row was obtained.
    pub row_methods: [DerivativeMethod; 6],
    /// Set when an angle sits at an elevation pole, where azimuth is not differentiable.
    pub singular: bool,
}

impl StateJacobian {
    /// Restricts to the rows in `kinds`, in canonical order.
    pub fn rows(&self, kinds: ParamSet) -> DMatrix<f64> {
        let idx: Vec<usize> = kinds.iter().map(|k| k.index()).collect();
        self.matrix.select_rows(idx.iter())
    }
}

/// Jacobian of the mapped channel parameters with respect to `layout`.
/// Delay rows are analytic; angle and Doppler rows use central differences.
pub fn state_jacobian(
    mapping: &Mapping,
    state: &MappedState,
    layout: &[StateParam],
    step: &FdStep,
) -> Result<StateJacobian> {
    let base = mapping.evaluate(state)?;
    let pole = PI / 2.0 - 1e-6;
    let singular = base.aoa.elevation.abs() > pole || base.aod.elevation.abs() > pole;

    let mut matrix = DMatrix::zeros(6, layout.len());
    for (j, &p) in layout.iter().enumerate() {
        let h = if p.is_rotation() { step.floor.max(step.relative) } else { step.step_for(state.get(p)?) };
        let plus = mapping.evaluate(&state.shifted(p, h)?)?;
        let minus = mapping.evaluate(&state.shifted(p, -h)?)?;
        for kind in ParamKind::ALL {
            matrix[(kind.index(), j)] = if kind == ParamKind::Delay {
                mapping.delay_derivative(state, p)?
            } else {
                plus.difference(&minus, kind) / (2.0 * h)
            };
        }
    }
    let mut row_methods = [DerivativeMethod::CentralDifference; 6];
    row_methods[ParamKind::Delay.index()] = DerivativeMethod::Analytic;
    Ok(StateJacobian {
        matrix,
        columns: layout.to_vec(),
        row_methods,
        singular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LAMBDA_1CM: f64 = SPEED_OF_LIGHT / 0.01;

    fn origin_anchor() -> AnchorState {
        AnchorState::new(0, Vector3::zeros(), Rotation::identity())
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(1.5 * PI), -0.5 * PI, epsilon = 1e-15);
        assert_relative_eq!(wrap_angle(0.3 + 4.0 * PI), 0.3, epsilon = 1e-14);
    }

    #[test]
    fn los_delay_pythagoras() {
        let ue = UEState::at(Vector3::new(3.0, 4.0, 0.0));
        let p = los_params(&origin_anchor(), &ue, Link::Downlink, 28e9).unwrap();
        assert_relative_eq!(p.delay, 5.0 / SPEED_OF_LIGHT, max_relative = 1e-15);
        assert_relative_eq!(p.delay * 1e9, 16.678, max_relative = 1e-3);
    }

    #[test]
    fn boresight_aod_is_zero() {
        let ue = UEState::at(Vector3::new(25.0, 0.0, 0.0));
        let p = los_params(&origin_anchor(), &ue, Link::Downlink, 28e9).unwrap();
        assert_eq!(p.aod.azimuth, 0.0);
        assert_eq!(p.aod.elevation, 0.0);
        // The UE looks back along −x.
        assert_relative_eq!(p.aoa.azimuth, PI);
    }

    #[test]
    fn los_one_way_doppler() {
        let mut ue = UEState::at(Vector3::new(10.0, 0.0, 0.0));
        ue.velocity = Vector3::new(-5.0, 0.0, 0.0);
        let p = los_params(&origin_anchor(), &ue, Link::Downlink, LAMBDA_1CM).unwrap();
        assert_relative_eq!(p.doppler, 500.0, max_relative = 1e-12);
    }

    #[test]
    fn coincident_positions_rejected() {
        let ue = UEState::at(Vector3::zeros());
        assert!(matches!(
            los_params(&origin_anchor(), &ue, Link::Downlink, 28e9),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn monostatic_examples() {
        let obj = ObjectState::new(Vector3::new(0.0, 75.0, 0.0), Vector3::zeros(), 1.0).unwrap();
        let p = monostatic_params(&origin_anchor(), &obj, 28e9).unwrap();
        assert_relative_eq!(p.delay, 150.0 / SPEED_OF_LIGHT, max_relative = 1e-15);
        assert_relative_eq!(p.delay * 1e9, 500.35, max_relative = 1e-3);
        assert_eq!(p.doppler, 0.0);
        assert_eq!(p.aoa, p.aod);

        let moving = ObjectState::new(Vector3::new(10.0, 0.0, 0.0), Vector3::new(-5.0, 0.0, 0.0), 1.0).unwrap();
        let p = monostatic_params(&origin_anchor(), &moving, LAMBDA_1CM).unwrap();
        assert_relative_eq!(p.doppler, 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn bistatic_examples() {
        let tx = origin_anchor();
        let rx = AnchorState::new(1, Vector3::new(100.0, 0.0, 0.0), Rotation::identity());
        let obj = ObjectState::new(Vector3::new(50.0, 0.0, 0.0), Vector3::zeros(), 1.0).unwrap();
        let p = bistatic_params(&tx, &rx, &obj, 0.0, 28e9).unwrap();
        assert_relative_eq!(p.delay, 100.0 / SPEED_OF_LIGHT, max_relative = 1e-15);
        let p = bistatic_params(&tx, &rx, &obj, 1e-6, 28e9).unwrap();
        assert_relative_eq!(p.delay, 100.0 / SPEED_OF_LIGHT + 1e-6, max_relative = 1e-15);

        let rx = AnchorState::new(1, Vector3::new(0.0, 40.0, 0.0), Rotation::identity());
        let obj = ObjectState::new(Vector3::new(30.0, 0.0, 0.0), Vector3::zeros(), 1.0).unwrap();
        let p = bistatic_params(&tx, &rx, &obj, 0.0, 28e9).unwrap();
        assert_relative_eq!(p.delay, 80.0 / SPEED_OF_LIGHT, max_relative = 1e-15);
    }

    #[test]
    fn bistatic_reduces_to_monostatic_when_colocated() {
        let s = AnchorState::new(0, Vector3::new(1.0, 2.0, 0.5), Rotation::from_euler(0.1, 0.2, 0.3));
        let obj = ObjectState::new(Vector3::new(12.0, -7.0, 3.0), Vector3::new(1.0, 2.0, -0.5), 10.0).unwrap();
        let b = bistatic_params(&s, &s, &obj, 0.0, 28e9).unwrap();
        let m = monostatic_params(&s, &obj, 28e9).unwrap();
        assert_relative_eq!(b.delay, m.delay, max_relative = 1e-14);
        assert_relative_eq!(b.doppler, m.doppler, max_relative = 1e-12);
    }

    #[test]
    fn rcs_must_be_positive() {
        assert!(ObjectState::new(Vector3::x(), Vector3::zeros(), 0.0).is_err());
    }

    #[test]
    fn rotation_matrix_validation() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(&bad).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(&reflect).is_err());
        assert!(Rotation::from_quaternion(1.0, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn delay_jacobian_examples() {
        let anchor = AnchorState::new(0, Vector3::new(1.0, -2.0, 3.0), Rotation::identity());
        let mut ue = UEState::at(Vector3::new(20.0, 5.0, 1.0));
        ue.clock_bias = 3e-8;
        let mapping = Mapping::Los {
            anchor,
            link: Link::Downlink,
            carrier: 28e9,
        };
        let layout = [
            StateParam::PositionX,
            StateParam::PositionY,
            StateParam::PositionZ,
            StateParam::ClockBias,
        ];
        let jac = state_jacobian(&mapping, &MappedState::Ue(ue), &layout, &FdStep::default()).unwrap();
        let row = ParamKind::Delay.index();
        assert_eq!(jac.matrix[(row, 3)], 1.0);
        assert_eq!(jac.row_methods[row], DerivativeMethod::Analytic);

        // Oracle: central differences of the delay itself.
        let diff = ue.position - anchor.position;
        for (j, axis) in [Vector3::x(), Vector3::y(), Vector3::z()].iter().enumerate() {
            let h = 1e-4;
            let plus = UEState { position: ue.position + axis * h, ..ue };
            let minus = UEState { position: ue.position - axis * h, ..ue };
            let fd = (los_params(&anchor, &plus, Link::Downlink, 28e9).unwrap().delay
                - los_params(&anchor, &minus, Link::Downlink, 28e9).unwrap().delay)
                / (2.0 * h);
            let closed = diff[j] / (SPEED_OF_LIGHT * diff.norm());
            assert_relative_eq!(jac.matrix[(row, j)], closed, max_relative = 1e-12);
            assert_relative_eq!(fd, closed, max_relative = 1e-6);
        }
    }

    #[test]
    fn monostatic_delay_jacobian() {
        let sensor = origin_anchor();
        let obj = ObjectState::new(Vector3::new(30.0, 40.0, 0.0), Vector3::zeros(), 1.0).unwrap();
        let mapping = Mapping::Monostatic { sensor, carrier: 28e9 };
        let state = MappedState::Object { object: obj, clock_bias: 0.0 };
        let jac = state_jacobian(&mapping, &state, &StateParam::POSITION, &FdStep::default()).unwrap();
        let row = ParamKind::Delay.index();
        assert_relative_eq!(jac.matrix[(row, 0)], 2.0 * 30.0 / (SPEED_OF_LIGHT * 50.0), max_relative = 1e-12);
        assert_relative_eq!(jac.matrix[(row, 1)], 2.0 * 40.0 / (SPEED_OF_LIGHT * 50.0), max_relative = 1e-12);
        let h = 1e-4;
        let f = |y: f64| {
            let o = ObjectState { position: Vector3::new(30.0, y, 0.0), ..obj };
            monostatic_params(&sensor, &o, 28e9).unwrap().delay
        };
        assert_relative_eq!((f(40.0 + h) - f(40.0 - h)) / (2.0 * h), jac.matrix[(row, 1)], max_relative = 1e-6);
    }

    #[test]
    fn orientation_on_object_is_rejected() {
        let mapping = Mapping::Monostatic { sensor: origin_anchor(), carrier: 28e9 };
        let obj = ObjectState::new(Vector3::new(3.0, 0.0, 0.0), Vector3::zeros(), 1.0).unwrap();
        let state = MappedState::Object { object: obj, clock_bias: 0.0 };
        assert!(state_jacobian(&mapping, &state, &StateParam::ROTATION, &FdStep::default()).is_err());
    }

    #[test]
    fn pole_sets_singular_flag() {
        let mapping = Mapping::Los {
            anchor: origin_anchor(),
            link: Link::Downlink,
            carrier: 28e9,
        };
        let ue = UEState::at(Vector3::new(0.0, 0.0, 10.0));
        let jac = state_jacobian(&mapping, &MappedState::Ue(ue), &StateParam::POSITION, &FdStep::default()).unwrap();
        assert!(jac.singular);
    }
}
