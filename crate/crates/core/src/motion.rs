//! Parametric coordinate mappings `x_i = m(theta_i; x_0)` from panorama
//! coordinates to frame coordinates.
//!
//! Every model is represented as `A x + t`. Parameters are ordered
//! `(a11, a12, a21, a22, tx, ty)` for the affine model and `(tx, ty)` for
//! translation; this order is also the serialized order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible `|det A|`.
pub const MIN_DET: f64 = 1e-6;

/// Maximum number of parameters of any supported model.
pub const MAX_DOF: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Translation,
    Affine,
}

impl ModelKind {
    pub fn dof(self) -> usize {
        match self {
            ModelKind::Translation => 2,
            ModelKind::Affine => 6,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Translation => "translation",
            ModelKind::Affine => "affine",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "translation" => Ok(ModelKind::Translation),
            "affine" => Ok(ModelKind::Affine),
            other => Err(Error::InvalidParams(format!("unknown model kind '{other}'"))),
        }
    }
}

/// A validated parameter vector for one mapping.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct MotionParams {
    kind: ModelKind,
    // Full affine form (a11, a12, a21, a22, tx, ty); translation keeps A = I.
    p: [f64; 6],
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    kind: ModelKind,
    theta: Vec<f64>,
}

impl TryFrom<RawParams> for MotionParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        MotionParams::from_theta(raw.kind, &raw.theta)
    }
}

impl From<MotionParams> for RawParams {
    fn from(p: MotionParams) -> Self {
        RawParams {
            kind: p.kind,
            theta: p.theta().to_vec(),
        }
    }
}

impl fmt::Debug for MotionParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.kind, self.theta())
    }
}

impl MotionParams {
    pub fn identity(kind: ModelKind) -> Self {
        MotionParams {
            kind,
            p: [1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        MotionParams {
            kind: ModelKind::Translation,
            p: [1.0, 0.0, 0.0, 1.0, tx, ty],
        }
    }

    fn from_parts(kind: ModelKind, a: [f64; 4], t: [f64; 2]) -> Self {
        MotionParams {
            kind,
            p: [a[0], a[1], a[2], a[3], t[0], t[1]],
        }
    }

    pub fn affine(theta: [f64; 6]) -> Result<Self> {
        MotionParams::from_theta(ModelKind::Affine, &theta)
    }

    /// Validates length, finiteness and (for affine) invertibility.
    pub fn from_theta(kind: ModelKind, theta: &[f64]) -> Result<Self> {
        if theta.len() != kind.dof() {
            return Err(Error::InvalidParams(format!(
                "{kind} expects {} parameters, got {}",
                kind.dof(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        let p = match kind {
            ModelKind::Translation => MotionParams::translation(theta[0], theta[1]),
            ModelKind::Affine => MotionParams {
                kind,
                p: [theta[0], theta[1], theta[2], theta[3], theta[4], theta[5]],
            },
        };
        p.check_det()?;
        Ok(p)
    }

    fn check_det(self) -> Result<Self> {
        let det = self.det();
        if det.abs() < MIN_DET || !det.is_finite() {
            return Err(Error::Singular { det });
        }
        Ok(self)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dof(&self) -> usize {
        self.kind.dof()
    }

    /// Parameter vector in serialized order.
    pub fn theta(&self) -> &[f64] {
        match self.kind {
            ModelKind::Translation => &self.p[4..],
            ModelKind::Affine => &self.p,
        }
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        [[self.p[0], self.p[1]], [self.p[2], self.p[3]]]
    }

    pub fn offset(&self) -> [f64; 2] {
        [self.p[4], self.p[5]]
    }

    pub fn det(&self) -> f64 {
        self.p[0] * self.p[3] - self.p[1] * self.p[2]
    }

    #[inline]
    pub fn map_point(&self, x: [f64; 2]) -> [f64; 2] {
        let p = &self.p;
        [p[0] * x[0] + p[1] * x[1] + p[4], p[2] * x[0] + p[3] * x[1] + p[5]]
    }

    /// `d m / d theta` at `x0`, one `[dmx, dmy]` row per parameter.
    pub fn jacobian(&self, x0: [f64; 2]) -> Vec<[f64; 2]> {
        match self.kind {
            ModelKind::Translation => vec![[1.0, 0.0], [0.0, 1.0]],
            ModelKind::Affine => vec![
                [x0[0], 0.0],
                [x0[1], 0.0],
                [0.0, x0[0]],
                [0.0, x0[1]],
                [1.0, 0.0],
                [0.0, 1.0],
            ],
        }
    }

    /// The point map `m(outer; m(inner; x))`.
    pub fn compose(&self, inner: &MotionParams) -> Result<MotionParams> {
        if self.kind != inner.kind {
            return Err(Error::KindMismatch);
        }
        let (o, i) = (&self.p, &inner.p);
        MotionParams::from_parts(
            self.kind,
            [
                o[0] * i[0] + o[1] * i[2],
                o[0] * i[1] + o[1] * i[3],
                o[2] * i[0] + o[3] * i[2],
                o[2] * i[1] + o[3] * i[3],
            ],
            self.map_point(inner.offset()),
        )
        .check_det()
    }

    pub fn invert(&self) -> Result<MotionParams> {
        let det = self.check_det()?.det();
        let [a, b, c, d, tx, ty] = self.p;
        let inv = match self.kind {
            ModelKind::Translation => [1.0, 0.0, 0.0, 1.0],
            ModelKind::Affine => [d / det, -b / det, -c / det, a / det],
        };
        let t = [-(inv[0] * tx + inv[1] * ty), -(inv[2] * tx + inv[3] * ty)];
        Ok(MotionParams::from_parts(self.kind, inv, t))
    }

    /// Maps parameters between pyramid levels: `factor` 2 goes one level
    /// finer, 0.5 one level coarser.
    pub fn rescale(&self, factor: f64) -> Result<MotionParams> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::NonPositiveFactor(factor));
        }
        let mut p = self.p;
        p[4] *= factor;
        p[5] *= factor;
        Ok(MotionParams { kind: self.kind, p })
    }

    /// `theta + delta`, validated.
    pub fn offset_by(&self, delta: &[f64]) -> Result<MotionParams> {
        if delta.len() != self.dof() {
            return Err(Error::InvalidParams(format!(
                "update of length {} for {} parameters",
                delta.len(),
                self.dof()
            )));
        }
        let theta: Vec<f64> = self.theta().iter().zip(delta).map(|(p, d)| p + d).collect();
        MotionParams::from_theta(self.kind, &theta)
    }

    pub fn is_identity(&self) -> bool {
        *self == MotionParams::identity(self.kind)
    }
}

/// `(d m / d theta) . g` for a spatial gradient `g`, without allocating.
/// Only the first `kind.dof()` entries are meaningful.
#[inline]
pub(crate) fn project_gradient(kind: ModelKind, x0: [f64; 2], g: [f64; 2]) -> [f64; MAX_DOF] {
    match kind {
        ModelKind::Translation => [g[0], g[1], 0.0, 0.0, 0.0, 0.0],
        ModelKind::Affine => [x0[0] * g[0], x0[1] * g[0], x0[0] * g[1], x0[1] * g[1], g[0], g[1]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    fn arb_affine() -> impl Strategy<Value = MotionParams> {
        (
            0.5f64..2.0,
            -0.5f64..0.5,
            -0.5f64..0.5,
            0.5f64..2.0,
            -50.0f64..50.0,
            -50.0f64..50.0,
        )
            .prop_map(|(a, b, c, d, tx, ty)| MotionParams::affine([a, b, c, d, tx, ty]).unwrap())
    }

    fn arb_point() -> impl Strategy<Value = [f64; 2]> {
        (-100.0f64..100.0, -100.0f64..100.0).prop_map(|(x, y)| [x, y])
    }

    #[test]
    fn identity_values() {
        assert_eq!(MotionParams::identity(ModelKind::Translation).theta(), &[0.0, 0.0]);
        assert_eq!(
            MotionParams::identity(ModelKind::Affine).theta(),
            &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            MotionParams::identity(ModelKind::Affine).map_point([3.5, -2.0]),
            [3.5, -2.0]
        );
    }

    #[test]
    fn map_point_examples() {
        assert_eq!(MotionParams::translation(2.0, 3.0).map_point([0.0, 0.0]), [2.0, 3.0]);
        let scale = MotionParams::affine([2.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(scale.map_point([1.0, 1.0]), [2.0, 2.0]);
        let shear = MotionParams::affine([1.0, 0.5, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(shear.map_point([2.0, 2.0]), [4.0, 2.0]);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            MotionParams::from_theta(ModelKind::Affine, &[1.0, 0.0]),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            MotionParams::affine([1.0, 1.0, 1.0, 1.0, 0.0, 0.0]),
            Err(Error::Singular { .. })
        ));
        assert!(MotionParams::from_theta(ModelKind::Translation, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let t = MotionParams::translation(4.0, 1.0);
        assert_eq!(t.jacobian([7.0, 9.0]), vec![[1.0, 0.0], [0.0, 1.0]]);
        let a = MotionParams::affine([1.1, 0.1, -0.2, 0.9, 3.0, 4.0]).unwrap();
        let j = a.jacobian([0.0, 0.0]);
        assert!(j[..4].iter().all(|r| *r == [0.0, 0.0]));
        assert_eq!(&j[4..], &[[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn compose_examples() {
        let t = MotionParams::translation(1.0, 2.0)
            .compose(&MotionParams::translation(3.0, 4.0))
            .unwrap();
        assert_eq!(t.theta(), &[4.0, 6.0]);
        let p = MotionParams::affine([1.2, 0.1, 0.3, 0.8, -5.0, 2.0]).unwrap();
        assert_eq!(MotionParams::identity(ModelKind::Affine).compose(&p).unwrap(), p);
        assert!(matches!(
            t.compose(&MotionParams::identity(ModelKind::Affine)),
            Err(Error::KindMismatch)
        ));
    }

    #[test]
    fn invert_examples() {
        assert_eq!(
            MotionParams::translation(2.0, -1.0).invert().unwrap().theta(),
            &[-2.0, 1.0]
        );
        let id = MotionParams::identity(ModelKind::Affine);
        assert_eq!(id.invert().unwrap(), id);
        let p = MotionParams::affine([2.0, 0.0, 0.0, 4.0, 6.0, 8.0]).unwrap();
        assert_eq!(p.invert().unwrap().theta(), &[0.5, 0.0, 0.0, 0.25, -3.0, -2.0]);
    }

    #[test]
    fn rescale_examples() {
        let t = MotionParams::translation(3.0, 4.0).rescale(2.0).unwrap();
        assert_eq!(t.theta(), &[6.0, 8.0]);
        let a = MotionParams::affine([2.0, 0.0, 0.0, 2.0, 1.0, 1.0])
            .unwrap()
            .rescale(0.37)
            .unwrap();
        assert_eq!(&a.theta()[..4], &[2.0, 0.0, 0.0, 2.0]);
        assert!(matches!(t.rescale(0.0), Err(Error::NonPositiveFactor(_))));
        assert!(t.rescale(-1.0).is_err());
    }

    #[test]
    fn json_schema() {
        let p = MotionParams::affine([1.0, 0.5, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"kind":"affine","theta":[1.0,0.5,0.0,1.0,1.0,0.0]}"#);
        assert_eq!(serde_json::from_str::<MotionParams>(&s).unwrap(), p);
        assert!(serde_json::from_str::<MotionParams>(r#"{"kind":"translation","theta":[1.0]}"#).is_err());
    }

    proptest! {
        #[test]
        fn jacobian_matches_central_differences(p in arb_affine(), x in arb_point()) {
            let eps = 1e-5;
            let j = p.jacobian(x);
            for k in 0..6 {
                let mut plus = p.theta().to_vec();
                let mut minus = plus.clone();
                plus[k] += eps;
                minus[k] -= eps;
                let mp = MotionParams::from_theta(ModelKind::Affine, &plus).unwrap().map_point(x);
                let mm = MotionParams::from_theta(ModelKind::Affine, &minus).unwrap().map_point(x);
                let fd = [(mp[0] - mm[0]) / (2.0 * eps), (mp[1] - mm[1]) / (2.0 * eps)];
                prop_assert!(close(fd, j[k], 1e-8), "k={} fd={:?} j={:?}", k, fd, j[k]);
            }
        }

        #[test]
        fn compose_is_sequential_mapping(a in arb_affine(), b in arb_affine(), pts in prop::collection::vec(arb_point(), 10)) {
            let ab = a.compose(&b).unwrap();
            for x in pts {
                prop_assert!(close(ab.map_point(x), a.map_point(b.map_point(x)), 1e-12));
            }
        }

        #[test]
        fn compose_is_associative(a in arb_affine(), b in arb_affine(), c in arb_affine(), x in arb_point()) {
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            prop_assert!(close(left.map_point(x), right.map_point(x), 1e-10));
        }

        #[test]
        fn invert_round_trips(p in arb_affine()) {
            let id = p.compose(&p.invert().unwrap()).unwrap();
            for (v, e) in id.theta().iter().zip(MotionParams::identity(ModelKind::Affine).theta()) {
                prop_assert!((v - e).abs() < 1e-10);
            }
            let back = p.invert().unwrap().invert().unwrap();
            for (v, e) in back.theta().iter().zip(p.theta()) {
                prop_assert!((v - e).abs() < 1e-10);
            }
        }

        #[test]
        fn rescale_commutes_with_scaling(p in arb_affine(), s in 0.1f64..4.0, pts in prop::collection::vec(arb_point(), 10)) {
            let r = p.rescale(s).unwrap();
            for x in pts {
                let lhs = r.map_point([s * x[0], s * x[1]]);
                let m = p.map_point(x);
                prop_assert!(close(lhs, [s * m[0], s * m[1]], 1e-12));
            }
            prop_assert_eq!(p.rescale(2.0).unwrap().rescale(0.5).unwrap(), p);
        }
    }
}
