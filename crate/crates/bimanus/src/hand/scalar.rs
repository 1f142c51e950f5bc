//! Generic scalar arithmetic for hand geometry.
//!
//! Kinematics, capsule distances, and penetration measures are written once
//! over a [`Scalar`] trait and instantiated either with plain `f64` or with
//! [`Dual`] numbers. A dual number carries one derivative lane through every
//! operation, which gives exact forward-mode derivatives of any geometric
//! quantity with respect to any single input — the mechanism behind both the
//! inverse-kinematics Jacobian and the gradient of the penetration loss.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Minimal scalar interface used by the geometry code.
///
/// Comparisons (`PartialOrd`) act on the primal value; for duals the
/// derivative simply follows whichever branch is taken, the usual
/// subgradient convention at ties.
pub trait Scalar:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    /// Primal (value) part.
    fn val(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn max(self, other: Self) -> Self {
        if self.val() >= other.val() {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self.val() <= other.val() {
            self
        } else {
            other
        }
    }
    fn clamp01(self) -> Self {
        self.max(Self::zero()).min(Self::one())
    }
    /// max(0, x) — the hinge used by penetration measures.
    fn relu(self) -> Self {
        self.max(Self::zero())
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn val(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// First-order dual number: value plus one derivative lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    /// Value part.
    pub re: f64,
    /// Derivative part.
    pub du: f64,
}

impl Dual {
    pub fn new(re: f64, du: f64) -> Self {
        Dual { re, du }
    }
    /// A constant (zero derivative).
    pub fn constant(re: f64) -> Self {
        Dual { re, du: 0.0 }
    }
    /// The seeded variable: derivative one with respect to itself.
    pub fn variable(re: f64) -> Self {
        Dual { re, du: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}
impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}
impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.du + self.du * o.re)
    }
}
impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(
            self.re / o.re,
            (self.du * o.re - self.re * o.du) / (o.re * o.re),
        )
    }
}
impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.du)
    }
}
impl PartialOrd for Dual {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl Scalar for Dual {
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }
    fn val(self) -> f64 {
        self.re
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.du * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.du * self.re.sin())
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        // Guard the derivative at the origin; the value is still exact.
        let d = if s > 0.0 { self.du / (2.0 * s) } else { 0.0 };
        Dual::new(s, d)
    }
}

/// A 3-vector over any [`Scalar`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct V3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> V3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        V3 { x, y, z }
    }
    pub fn from_f64(v: [f64; 3]) -> Self {
        V3::new(S::from_f64(v[0]), S::from_f64(v[1]), S::from_f64(v[2]))
    }
    pub fn zeros() -> Self {
        V3::from_f64([0.0; 3])
    }
    pub fn to_f64(self) -> [f64; 3] {
        [self.x.val(), self.y.val(), self.z.val()]
    }
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    pub fn cross(self, o: Self) -> Self {
        V3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    pub fn norm(self) -> S {
        self.dot(self).sqrt()
    }
    pub fn scale(self, s: S) -> Self {
        V3::new(self.x * s, self.y * s, self.z * s)
    }
    pub fn normalized(self) -> Self {
        let n = self.norm();
        self.scale(S::one() / n)
    }
}

impl<S: Scalar> Add for V3<S> {
    type Output = V3<S>;
    fn add(self, o: V3<S>) -> V3<S> {
        V3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}
impl<S: Scalar> Sub for V3<S> {
    type Output = V3<S>;
    fn sub(self, o: V3<S>) -> V3<S> {
        V3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}
impl<S: Scalar> Neg for V3<S> {
    type Output = V3<S>;
    fn neg(self) -> V3<S> {
        V3::new(-self.x, -self.y, -self.z)
    }
}

/// Column-major 3x3 matrix over any [`Scalar`]; used for rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M3<S> {
    pub cols: [V3<S>; 3],
}

impl<S: Scalar> M3<S> {
    pub fn identity() -> Self {
        M3 {
            cols: [
                V3::from_f64([1.0, 0.0, 0.0]),
                V3::from_f64([0.0, 1.0, 0.0]),
                V3::from_f64([0.0, 0.0, 1.0]),
            ],
        }
    }

    /// diag(-1, 1, 1): mirror across the x = 0 plane.
    pub fn mirror_x() -> Self {
        M3 {
            cols: [
                V3::from_f64([-1.0, 0.0, 0.0]),
                V3::from_f64([0.0, 1.0, 0.0]),
                V3::from_f64([0.0, 0.0, 1.0]),
            ],
        }
    }

    /// Rodrigues rotation about a unit axis by `angle`.
    pub fn rotation(axis: V3<S>, angle: S) -> Self {
        let apply = |v: V3<S>| {
            let c = angle.cos();
            let s = angle.sin();
            let k = axis;
            v.scale(c) + k.cross(v).scale(s) + k.scale(k.dot(v) * (S::one() - c))
        };
        M3 {
            cols: [
                apply(V3::from_f64([1.0, 0.0, 0.0])),
                apply(V3::from_f64([0.0, 1.0, 0.0])),
                apply(V3::from_f64([0.0, 0.0, 1.0])),
            ],
        }
    }

    /// Rotation from an axis-angle vector (axis = direction, angle = norm).
    /// The zero vector maps to the identity.
    pub fn from_axis_angle(w: V3<S>) -> Self {
        let theta = w.norm();
        if theta.val() < 1e-12 {
            // First-order expansion keeps derivatives meaningful near zero:
            // R ~ I + [w]_x.
            let wx = w;
            let mut m = Self::identity();
            let e = [
                V3::<S>::from_f64([1.0, 0.0, 0.0]),
                V3::<S>::from_f64([0.0, 1.0, 0.0]),
                V3::<S>::from_f64([0.0, 0.0, 1.0]),
            ];
            for i in 0..3 {
                m.cols[i] = m.cols[i] + wx.cross(e[i]);
            }
            return m;
        }
        Self::rotation(w.scale(S::one() / theta), theta)
    }

    pub fn mul_vec(&self, v: V3<S>) -> V3<S> {
        self.cols[0].scale(v.x) + self.cols[1].scale(v.y) + self.cols[2].scale(v.z)
    }

    pub fn mul_mat(&self, o: &M3<S>) -> M3<S> {
        M3 {
            cols: [
                self.mul_vec(o.cols[0]),
                self.mul_vec(o.cols[1]),
                self.mul_vec(o.cols[2]),
            ],
        }
    }
}
