//! Discrete probability measures on labeled or Euclidean supports.
//!
//! Measures are immutable after construction: atoms are merged, pruned and
//! stored in a canonical order (sorted by point), so equal measures have equal
//! representations and serialized output is byte-stable.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::cost::Cost;

/// Componentwise tolerance at which two support points are the same point.
pub const POINT_TOL: f64 = 1e-12;
/// Mass below which an atom is pruned after an operation.
pub const WEIGHT_PRUNE: f64 = 1e-15;
/// Tolerance on the total-mass-one invariant.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("weights must be nonnegative, got {0}")]
    NegativeWeight(f64),
    #[error("weights sum to {0}, expected 1 within {MASS_TOL:e}")]
    NotNormalized(f64),
    #[error("measure must have at least one atom")]
    Empty,
    #[error("atoms mix incompatible point kinds")]
    MixedSupport,
    #[error("map is undefined on atom {0}")]
    MapUndefined(String),
    #[error("marginal axis {axis} out of range for {arity}-tuples")]
    AxisOutOfRange { axis: usize, arity: usize },
    #[error("marginal requires a measure over tuples")]
    NotATupleMeasure,
    #[error("state-input distribution x-marginal deviates from the declared state measure by {0:e}")]
    MarginalMismatch(f64),
    #[error("invalid measure encoding: {0}")]
    Encoding(String),
}

/// A support point: a discrete label, a point of `R^d`, or a tuple of points
/// (the support of joint measures and transport plans).
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Label(String),
    Euclid(Vec<f64>),
    Tuple(Vec<Point>),
}

impl Point {
    pub fn label(s: impl Into<String>) -> Point {
        Point::Label(s.into())
    }

    pub fn euclid(coords: impl Into<Vec<f64>>) -> Point {
        Point::Euclid(coords.into())
    }

    pub fn scalar(x: f64) -> Point {
        Point::Euclid(vec![x])
    }

    pub fn tuple(parts: impl Into<Vec<Point>>) -> Point {
        Point::Tuple(parts.into())
    }

    pub fn pair(a: Point, b: Point) -> Point {
        Point::Tuple(vec![a, b])
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            Point::Label(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_euclid(&self) -> Option<&[f64]> {
        match self {
            Point::Euclid(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Point]> {
        match self {
            Point::Tuple(v) => Some(v),
            _ => None,
        }
    }

    /// Same point up to the componentwise tolerance on Euclidean coordinates.
    pub fn same_as(&self, other: &Point) -> bool {
        match (self, other) {
            (Point::Label(a), Point::Label(b)) => a == b,
            (Point::Euclid(a), Point::Euclid(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= POINT_TOL)
            }
            (Point::Tuple(a), Point::Tuple(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_as(y))
            }
            _ => false,
        }
    }

    fn kind_rank(&self) -> u8 {
        match self {
            Point::Label(_) => 0,
            Point::Euclid(_) => 1,
            Point::Tuple(_) => 2,
        }
    }

    /// Total order used for the canonical atom ordering.
    pub fn canonical_cmp(&self, other: &Point) -> Ordering {
        match (self, other) {
            (Point::Label(a), Point::Label(b)) => a.cmp(b),
            (Point::Euclid(a), Point::Euclid(b)) => {
                a.len().cmp(&b.len()).then_with(|| {
                    for (x, y) in a.iter().zip(b) {
                        match x.total_cmp(y) {
                            Ordering::Equal => continue,
                            ord => return ord,
                        }
                    }
                    Ordering::Equal
                })
            }
            (Point::Tuple(a), Point::Tuple(b)) => a.len().cmp(&b.len()).then_with(|| {
                for (x, y) in a.iter().zip(b) {
                    match x.canonical_cmp(y) {
                        Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                Ordering::Equal
            }),
            _ => self.kind_rank().cmp(&other.kind_rank()),
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Label(s) => write!(f, "{s}"),
            Point::Euclid(v) => {
                write!(f, "(")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, ")")
            }
            Point::Tuple(parts) => {
                write!(f, "[")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, "]")
            }
        }
    }
}

/// One support point together with its probability mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Point,
    pub weight: f64,
}

/// What the support of a measure is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportKind {
    Labeled,
    Euclidean(usize),
    Tuple,
}

/// A discrete probability measure: finitely many atoms with nonnegative
/// weights summing to one, no two atoms on the same point.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
    kind: SupportKind,
}

impl DiscreteMeasure {
    /// Builds a measure from raw atoms.
    ///
    /// Duplicate points (within tolerance) are merged by summing weights,
    /// weights below the pruning threshold are dropped, and the remaining mass
    /// is renormalized. Rejects negative weights and totals away from one.
    pub fn new(atoms: Vec<Atom>) -> Result<DiscreteMeasure, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        let mut total = 0.0;
        for a in &atoms {
            if a.weight < 0.0 {
                return Err(MeasureError::NegativeWeight(a.weight));
            }
            total += a.weight;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(MeasureError::NotNormalized(total));
        }
        let kind = support_kind_of(&atoms)?;
        Ok(Self::canonicalize(atoms, kind))
    }

    /// Builds a measure from the output of an internal operation (LP cells,
    /// pushforward images): merges, prunes and renormalizes without the
    /// strict total-mass check, which solver rounding would trip.
    pub(crate) fn from_operation(atoms: Vec<Atom>) -> DiscreteMeasure {
        debug_assert!(!atoms.is_empty());
        let kind = support_kind_of(&atoms).expect("operation output has a coherent support");
        Self::canonicalize(atoms, kind)
    }

    /// A Dirac measure at a single point.
    pub fn dirac(point: Point) -> DiscreteMeasure {
        let kind = support_kind_of(std::slice::from_ref(&Atom {
            point: point.clone(),
            weight: 1.0,
        }))
        .expect("single atom is a valid support");
        DiscreteMeasure {
            atoms: vec![Atom { point, weight: 1.0 }],
            kind,
        }
    }

    /// The uniform measure over the given points (repeats allowed; they merge).
    pub fn uniform(points: Vec<Point>) -> Result<DiscreteMeasure, MeasureError> {
        let n = points.len();
        if n == 0 {
            return Err(MeasureError::Empty);
        }
        let w = 1.0 / n as f64;
        DiscreteMeasure::new(
            points
                .into_iter()
                .map(|point| Atom { point, weight: w })
                .collect(),
        )
    }

    fn canonicalize(mut atoms: Vec<Atom>, kind: SupportKind) -> DiscreteMeasure {
        atoms.sort_by(|a, b| a.point.canonical_cmp(&b.point));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(last) if last.point.same_as(&atom.point) => last.weight += atom.weight,
                _ => merged.push(atom),
            }
        }
        merged.retain(|a| a.weight >= WEIGHT_PRUNE);
        let total: f64 = merged.iter().map(|a| a.weight).sum();
        if total > 0.0 && (total - 1.0).abs() > f64::EPSILON {
            for a in &mut merged {
                a.weight /= total;
            }
        }
        DiscreteMeasure { atoms: merged, kind }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn kind(&self) -> SupportKind {
        self.kind
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.atoms.iter().map(|a| &a.point)
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Mass at `point` (within tolerance), zero off the support.
    pub fn weight_at(&self, point: &Point) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.point.same_as(point))
            .map_or(0.0, |a| a.weight)
    }

    /// Image measure under `map`; atoms landing on the same point merge.
    ///
    /// `map` returning `None` on a support point is a domain error.
    pub fn pushforward<F>(&self, mut map: F) -> Result<DiscreteMeasure, MeasureError>
    where
        F: FnMut(&Point) -> Option<Point>,
    {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for a in &self.atoms {
            let image = map(&a.point).ok_or_else(|| MeasureError::MapUndefined(a.point.to_string()))?;
            atoms.push(Atom {
                point: image,
                weight: a.weight,
            });
        }
        let kind = support_kind_of(&atoms)?;
        Ok(Self::canonicalize(atoms, kind))
    }

    /// Axis projection of a measure over tuples.
    pub fn marginal(&self, axis: usize) -> Result<DiscreteMeasure, MeasureError> {
        let arity = match self.atoms.first().map(|a| &a.point) {
            Some(Point::Tuple(parts)) => parts.len(),
            _ => return Err(MeasureError::NotATupleMeasure),
        };
        if axis >= arity {
            return Err(MeasureError::AxisOutOfRange { axis, arity });
        }
        self.pushforward(|p| p.as_tuple().map(|parts| parts[axis].clone()))
    }

    /// Integral of `v` against the measure; `+inf` as soon as any atom of
    /// positive mass has infinite value.
    pub fn expected_value<F>(&self, mut v: F) -> Cost
    where
        F: FnMut(&Point) -> Cost,
    {
        let mut acc = 0.0;
        for a in &self.atoms {
            if a.weight == 0.0 {
                continue;
            }
            match v(&a.point) {
                Cost::Finite(x) => acc += a.weight * x,
                Cost::Infinite => return Cost::Infinite,
            }
        }
        Cost::Finite(acc)
    }

    /// Independent product: a measure over pairs with weights multiplied.
    pub fn product(&self, other: &DiscreteMeasure) -> DiscreteMeasure {
        let mut atoms = Vec::with_capacity(self.len() * other.len());
        for a in &self.atoms {
            for b in &other.atoms {
                atoms.push(Atom {
                    point: Point::pair(a.point.clone(), b.point.clone()),
                    weight: a.weight * b.weight,
                });
            }
        }
        Self::canonicalize(atoms, SupportKind::Tuple)
    }

    /// Per-atom comparison: same supports and weights within `tol`.
    pub fn approx_eq(&self, other: &DiscreteMeasure, tol: f64) -> bool {
        if self.len() != other.len() {
            return false;
        }
        self.atoms
            .iter()
            .zip(&other.atoms)
            .all(|(a, b)| a.point.same_as(&b.point) && (a.weight - b.weight).abs() <= tol)
    }

    /// Decodes the JSON encoding
    /// `{"support":"labeled"|"euclidean","atoms":[{"point":...,"weight":...}]}`.
    pub fn from_json(value: &serde_json::Value) -> Result<DiscreteMeasure, MeasureError> {
        let obj = value
            .as_object()
            .ok_or_else(|| MeasureError::Encoding("measure must be an object".into()))?;
        let support = obj
            .get("support")
            .and_then(|s| s.as_str())
            .ok_or_else(|| MeasureError::Encoding("missing \"support\" string".into()))?;
        let atoms_json = obj
            .get("atoms")
            .and_then(|a| a.as_array())
            .ok_or_else(|| MeasureError::Encoding("missing \"atoms\" array".into()))?;
        let mut atoms = Vec::with_capacity(atoms_json.len());
        for entry in atoms_json {
            let entry = entry
                .as_object()
                .ok_or_else(|| MeasureError::Encoding("atom must be an object".into()))?;
            let weight = entry
                .get("weight")
                .and_then(|w| w.as_f64())
                .ok_or_else(|| MeasureError::Encoding("atom missing numeric \"weight\"".into()))?;
            let point_json = entry
                .get("point")
                .ok_or_else(|| MeasureError::Encoding("atom missing \"point\"".into()))?;
            let point = match support {
                "labeled" => Point::Label(
                    point_json
                        .as_str()
                        .ok_or_else(|| MeasureError::Encoding("labeled point must be a string".into()))?
                        .to_owned(),
                ),
                "euclidean" => {
                    let coords = point_json
                        .as_array()
                        .ok_or_else(|| MeasureError::Encoding("euclidean point must be an array".into()))?;
                    let mut v = Vec::with_capacity(coords.len());
                    for c in coords {
                        v.push(c.as_f64().ok_or_else(|| {
                            MeasureError::Encoding("euclidean coordinate must be a number".into())
                        })?);
                    }
                    Point::Euclid(v)
                }
                other => {
                    return Err(MeasureError::Encoding(format!(
                        "unknown support kind {other:?}"
                    )))
                }
            };
            atoms.push(Atom { point, weight });
        }
        DiscreteMeasure::new(atoms)
    }

    /// Canonical JSON encoding: atoms in canonical order, weights with 17
    /// significant digits, so equal measures serialize to equal bytes.
    pub fn to_canonical_json(&self) -> String {
        let support = match self.kind {
            SupportKind::Labeled => "labeled",
            SupportKind::Euclidean(_) => "euclidean",
            SupportKind::Tuple => "euclidean",
        };
        let mut out = String::new();
        out.push_str("{\"support\":\"");
        out.push_str(support);
        out.push_str("\",\"atoms\":[");
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("{\"point\":");
            match &a.point {
                Point::Label(s) => {
                    out.push_str(&serde_json::to_string(s).expect("string encodes"));
                }
                Point::Euclid(v) => {
                    out.push('[');
                    for (j, x) in v.iter().enumerate() {
                        if j > 0 {
                            out.push(',');
                        }
                        out.push_str(&fmt_sig17(*x));
                    }
                    out.push(']');
                }
                Point::Tuple(_) => {
                    out.push_str(&serde_json::to_string(&a.point.to_string()).expect("string encodes"));
                }
            }
            out.push_str(",\"weight\":");
            out.push_str(&fmt_sig17(a.weight));
            out.push('}');
        }
        out.push_str("]}");
        out
    }
}

/// Formats a float with 17 significant digits (lossless for `f64`).
pub fn fmt_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn support_kind_of(atoms: &[Atom]) -> Result<SupportKind, MeasureError> {
    let first = match atoms.first() {
        Some(a) => &a.point,
        None => return Err(MeasureError::Empty),
    };
    let kind = match first {
        Point::Label(_) => SupportKind::Labeled,
        Point::Euclid(v) => SupportKind::Euclidean(v.len()),
        Point::Tuple(_) => SupportKind::Tuple,
    };
    for a in atoms {
        let ok = match (&a.point, kind) {
            (Point::Label(_), SupportKind::Labeled) => true,
            (Point::Euclid(v), SupportKind::Euclidean(d)) => v.len() == d,
            (Point::Tuple(_), SupportKind::Tuple) => true,
            _ => false,
        };
        if !ok {
            return Err(MeasureError::MixedSupport);
        }
    }
    Ok(kind)
}

/// A joint measure over state-input pairs whose state marginal is a declared
/// measure: the share of agents at each state applying each input.
#[derive(Debug, Clone)]
pub struct StateInputDistribution {
    joint: DiscreteMeasure,
}

impl StateInputDistribution {
    /// Wraps a joint measure over `(state, input)` pairs, checking that its
    /// state marginal reproduces `state_measure` atom by atom.
    pub fn new(
        joint: DiscreteMeasure,
        state_measure: &DiscreteMeasure,
    ) -> Result<StateInputDistribution, MeasureError> {
        let marginal = joint.marginal(0)?;
        let mut worst = 0.0f64;
        if marginal.len() != state_measure.len() {
            worst = 1.0;
        } else {
            for (a, b) in marginal.atoms().iter().zip(state_measure.atoms()) {
                if !a.point.same_as(&b.point) {
                    worst = 1.0;
                    break;
                }
                worst = worst.max((a.weight - b.weight).abs());
            }
        }
        if worst > MASS_TOL {
            return Err(MeasureError::MarginalMismatch(worst));
        }
        Ok(StateInputDistribution { joint })
    }

    pub fn joint(&self) -> &DiscreteMeasure {
        &self.joint
    }

    pub fn state_marginal(&self) -> DiscreteMeasure {
        self.joint.marginal(0).expect("joint is a pair measure")
    }

    pub fn input_marginal(&self) -> DiscreteMeasure {
        self.joint.marginal(1).expect("joint is a pair measure")
    }
}
