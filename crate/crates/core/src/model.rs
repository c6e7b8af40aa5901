//! Diffusion specifications: domain types, validation and the built-in
//! catalog of example models.
//!
//! A diffusion enters the toolkit either through Ito coefficients `(b, sigma)`
//! on an interval or directly through scale/speed data. Boundary behavior at
//! regular points is extra information beyond the interior speed measure, so
//! both routes carry optional boundary atoms.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, Program};
use crate::quad::DivergenceVerdict;

/// An evaluable real function of one variable. Implementations must be
/// reentrant; everything built on top shares them across threads.
pub trait RealFn: Send + Sync {
    fn eval(&self, x: f64) -> f64;
}

impl RealFn for Program {
    fn eval(&self, x: f64) -> f64 {
        Program::eval(self, x)
    }
}

impl<F: Fn(f64) -> f64 + Send + Sync> RealFn for F {
    fn eval(&self, x: f64) -> f64 {
        self(x)
    }
}

/// A measure of half-open intervals `(a, b]`, used where exact interval
/// masses matter more than densities (push-forwards, solver cells).
pub trait IntervalMeasure: Send + Sync {
    fn measure(&self, a: f64, b: f64) -> f64;
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid interval: {0}")]
    Interval(String),
    #[error("expression error in `{field}`: {source}")]
    Expr { field: String, source: ExprError },
    #[error("model file field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unknown catalog model `{0}`")]
    UnknownModel(String),
}

/// State-space interval; infinite endpoints are open by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    left: f64,
    right: f64,
    left_closed: bool,
    right_closed: bool,
}

impl Interval {
    pub fn new(left: f64, right: f64, left_closed: bool, right_closed: bool) -> Result<Self, ModelError> {
        if left.is_nan() || right.is_nan() {
            return Err(ModelError::Interval("endpoints must not be NaN".into()));
        }
        if !(left < right) {
            return Err(ModelError::Interval(format!("need left < right, got [{left}, {right}]")));
        }
        if left.is_infinite() && left_closed || right.is_infinite() && right_closed {
            return Err(ModelError::Interval("an infinite endpoint cannot be closed".into()));
        }
        Ok(Interval { left, right, left_closed, right_closed })
    }

    /// Open interval `(left, right)`.
    pub fn open(left: f64, right: f64) -> Result<Self, ModelError> {
        Interval::new(left, right, false, false)
    }

    pub fn real_line() -> Self {
        Interval { left: f64::NEG_INFINITY, right: f64::INFINITY, left_closed: false, right_closed: false }
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn is_closed(&self, side: Side) -> bool {
        match side {
            Side::Left => self.left_closed,
            Side::Right => self.right_closed,
        }
    }

    pub fn endpoint(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    /// Strict interior membership.
    pub fn interior_contains(&self, x: f64) -> bool {
        self.left < x && x < self.right
    }

    /// Membership in `J` (boundary points count when closed).
    pub fn contains(&self, x: f64) -> bool {
        self.interior_contains(x)
            || (self.left_closed && x == self.left)
            || (self.right_closed && x == self.right)
    }

    /// A compact window well inside the interior, used to pick reference
    /// points and sampling ranges.
    pub fn central_window(&self) -> (f64, f64) {
        match (self.left.is_finite(), self.right.is_finite()) {
            (true, true) => {
                let span = self.right - self.left;
                (self.left + 0.25 * span, self.right - 0.25 * span)
            }
            (true, false) => {
                let d = 0.5 * self.left.abs().max(1.0);
                (self.left + d, self.left + 4.0 * d)
            }
            (false, true) => {
                let d = 0.5 * self.right.abs().max(1.0);
                (self.right - 4.0 * d, self.right - d)
            }
            (false, false) => (-1.0, 1.0),
        }
    }

    /// Deterministic sample grid of roughly `n` interior points accumulating
    /// geometrically toward both endpoints.
    pub fn sample_grid(&self, n: usize) -> Vec<f64> {
        let n = n.max(16);
        let (wl, wr) = self.central_window();
        let mut pts = Vec::with_capacity(n + 1);
        let n_window = n / 3;
        // Uniform coverage of the central window, midpoint included.
        let m = if n_window % 2 == 0 { n_window + 1 } else { n_window };
        for j in 0..m {
            pts.push(wl + (wr - wl) * j as f64 / (m - 1) as f64);
        }
        let n_side = n / 3;
        for (endpoint, anchor) in [(self.left, wl), (self.right, wr)] {
            if endpoint.is_infinite() {
                // Geometric escape out to ~1e12 times the window scale.
                let d0 = (wr - wl).max(1.0);
                let growth = (1e12f64).powf(1.0 / n_side as f64);
                let mut d = d0;
                for _ in 0..n_side {
                    pts.push(anchor + (endpoint.signum()) * d);
                    d *= growth;
                }
            } else {
                // Geometric approach down to a 1e-9 fraction of the gap.
                let gap = (anchor - endpoint).abs();
                let ratio = (1e-9f64).powf(1.0 / n_side as f64);
                let mut d = gap;
                for _ in 0..n_side {
                    d *= ratio;
                    let x = endpoint + (anchor - endpoint).signum() * d;
                    if self.interior_contains(x) {
                        pts.push(x);
                    }
                }
            }
        }
        pts.retain(|x| self.interior_contains(*x));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Left => write!(f, "left"),
            Side::Right => write!(f, "right"),
        }
    }
}

/// Boundary atom mass. Infinity is a tag, never a large float: absorbing
/// versus slowly-reflecting must be an exact distinction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mass {
    Finite(f64),
    Infinite,
}

impl Mass {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Mass::Infinite)
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Mass::Finite(v) => *v,
            Mass::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for Mass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Mass::Finite(v) => s.serialize_f64(*v),
            Mass::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Speed-measure atom at one boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedAtom {
    pub side: Side,
    pub mass: Mass,
}

/// Atoms for both boundaries; absent means "not specified".
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundaryAtoms {
    pub left: Option<Mass>,
    pub right: Option<Mass>,
}

impl BoundaryAtoms {
    pub fn none() -> Self {
        BoundaryAtoms::default()
    }

    pub fn from_atoms(atoms: &[SpeedAtom]) -> Self {
        let mut out = BoundaryAtoms::default();
        for a in atoms {
            match a.side {
                Side::Left => out.left = Some(a.mass),
                Side::Right => out.right = Some(a.mass),
            }
        }
        out
    }

    pub fn get(&self, side: Side) -> Option<Mass> {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    pub fn has_any(&self) -> bool {
        self.left.is_some() || self.right.is_some()
    }
}

/// Ito coefficients on an interval: drift `b` and diffusion `sigma`, both
/// expressions in `x`.
#[derive(Debug, Clone)]
pub struct CoefficientSpec {
    pub drift: Program,
    pub diffusion: Program,
    pub domain: Interval,
}

impl CoefficientSpec {
    pub fn parse(drift: &str, sigma: &str, domain: Interval) -> Result<Self, ModelError> {
        let drift = Program::parse(drift).map_err(|source| ModelError::Expr { field: "drift".into(), source })?;
        let diffusion =
            Program::parse(sigma).map_err(|source| ModelError::Expr { field: "sigma".into(), source })?;
        Ok(CoefficientSpec { drift, diffusion, domain })
    }
}

/// Scale/speed data given directly: a strictly increasing scale with its
/// right-derivative, and a speed density on the interior.
#[derive(Clone)]
pub struct ScaleSpeedSpec {
    pub scale: Arc<dyn RealFn>,
    pub scale_derivative: Arc<dyn RealFn>,
    pub speed_density: Arc<dyn RealFn>,
    /// Exact interval masses, when the producer has something better than
    /// integrating `speed_density` (push-forwards do).
    pub speed_cumulative: Option<Arc<dyn IntervalMeasure>>,
    pub domain: Interval,
    pub atoms: BoundaryAtoms,
}

impl fmt::Debug for ScaleSpeedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScaleSpeedSpec")
            .field("domain", &self.domain)
            .field("atoms", &self.atoms)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum SpecKind {
    Coefficients { coef: CoefficientSpec, atoms: BoundaryAtoms },
    Direct(ScaleSpeedSpec),
}

/// A diffusion specification: exactly one of the two input routes.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub name: Option<String>,
    pub kind: SpecKind,
}

impl DiffusionSpec {
    pub fn from_coefficients(name: &str, coef: CoefficientSpec, atoms: BoundaryAtoms) -> Self {
        DiffusionSpec { name: Some(name.to_string()), kind: SpecKind::Coefficients { coef, atoms } }
    }

    pub fn from_direct(name: &str, spec: ScaleSpeedSpec) -> Self {
        DiffusionSpec { name: Some(name.to_string()), kind: SpecKind::Direct(spec) }
    }

    pub fn domain(&self) -> Interval {
        match &self.kind {
            SpecKind::Coefficients { coef, .. } => coef.domain,
            SpecKind::Direct(d) => d.domain,
        }
    }

    pub fn atoms(&self) -> BoundaryAtoms {
        match &self.kind {
            SpecKind::Coefficients { atoms, .. } => *atoms,
            SpecKind::Direct(d) => d.atoms,
        }
    }

    pub fn coefficients(&self) -> Option<&CoefficientSpec> {
        match &self.kind {
            SpecKind::Coefficients { coef, .. } => Some(coef),
            SpecKind::Direct(_) => None,
        }
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or("<unnamed>")
    }

    /// Serializable description for reports.
    pub fn describe(&self) -> ModelDescription {
        let domain = self.domain();
        let (drift, sigma) = match &self.kind {
            SpecKind::Coefficients { coef, .. } => {
                (Some(coef.drift.source().to_string()), Some(coef.diffusion.source().to_string()))
            }
            SpecKind::Direct(_) => (None, None),
        };
        ModelDescription {
            name: self.name.clone(),
            route: match &self.kind {
                SpecKind::Coefficients { .. } => "coefficients",
                SpecKind::Direct(_) => "scale-speed",
            },
            domain: [endpoint_json(domain.left), endpoint_json(domain.right)],
            drift,
            sigma,
            atoms: AtomsDescription {
                left: self.atoms().left.map(mass_json),
                right: self.atoms().right.map(mass_json),
            },
        }
    }
}

fn endpoint_json(v: f64) -> serde_json::Value {
    if v == f64::INFINITY {
        serde_json::Value::String("inf".into())
    } else if v == f64::NEG_INFINITY {
        serde_json::Value::String("-inf".into())
    } else {
        serde_json::json!(v)
    }
}

fn mass_json(m: Mass) -> serde_json::Value {
    match m {
        Mass::Finite(v) => serde_json::json!(v),
        Mass::Infinite => serde_json::Value::String("inf".into()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelDescription {
    pub name: Option<String>,
    pub route: &'static str,
    pub domain: [serde_json::Value; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    pub atoms: AtomsDescription,
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomsDescription {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub right: Option<serde_json::Value>,
}

/// One validation finding.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub at: Option<f64>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.at {
            Some(x) => write!(f, "{} (at x = {x})", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

fn violation(at: Option<f64>, message: impl Into<String>) -> Violation {
    Violation { at, message: message.into() }
}

/// Check every type invariant on a deterministic sample grid. An empty list
/// means the specification is usable by the rest of the toolkit.
pub fn validate(spec: &DiffusionSpec, grid_size: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let domain = spec.domain();
    let grid = domain.sample_grid(grid_size);

    let atoms = spec.atoms();
    for side in [Side::Left, Side::Right] {
        if atoms.get(side).is_some() && domain.endpoint(side).is_infinite() {
            out.push(violation(
                None,
                format!("speed atom attached to the infinite {side} endpoint; atoms require a regular boundary"),
            ));
        }
        if let Some(Mass::Finite(m)) = atoms.get(side) {
            if !(m >= 0.0) {
                out.push(violation(None, format!("atom mass at {side} boundary must be non-negative, got {m}")));
            }
        }
    }

    match &spec.kind {
        SpecKind::Coefficients { coef, .. } => {
            let mut prev_sigma: Option<(f64, f64)> = None;
            for &x in &grid {
                let b = coef.drift.eval(x);
                let s = coef.diffusion.eval(x);
                if !b.is_finite() {
                    out.push(violation(Some(x), format!("drift does not evaluate to a finite value ({b})")));
                }
                if !s.is_finite() {
                    out.push(violation(Some(x), format!("diffusion coefficient is not finite ({s})")));
                } else if s == 0.0 {
                    out.push(violation(Some(x), "diffusion coefficient vanishes at an interior point".to_string()));
                } else if let Some((px, ps)) = prev_sigma {
                    if ps.signum() != s.signum() {
                        out.push(violation(
                            Some(0.5 * (px + x)),
                            "diffusion coefficient changes sign, so it vanishes between sample points".to_string(),
                        ));
                    }
                }
                if s.is_finite() && s != 0.0 {
                    prev_sigma = Some((x, s));
                }
            }
        }
        SpecKind::Direct(d) => {
            let mut prev: Option<(f64, f64)> = None;
            for &x in &grid {
                let s = d.scale.eval(x);
                let sp = d.scale_derivative.eval(x);
                let dens = d.speed_density.eval(x);
                if !s.is_finite() {
                    out.push(violation(Some(x), format!("scale function is not finite ({s})")));
                }
                if !(sp > 0.0) || !sp.is_finite() {
                    out.push(violation(Some(x), format!("scale derivative must be positive and finite, got {sp}")));
                }
                if !(dens > 0.0) || !dens.is_finite() {
                    out.push(violation(Some(x), format!("speed density must be positive and finite, got {dens}")));
                }
                if let Some((px, pv)) = prev {
                    if s.is_finite() && !(s > pv) {
                        out.push(violation(
                            Some(x),
                            format!("scale is not strictly increasing between {px} and {x}"),
                        ));
                    }
                }
                if s.is_finite() {
                    prev = Some((x, s));
                }
            }
        }
    }

    // Deduplicate repeated messages (a vanishing sigma would otherwise flood).
    out.dedup_by(|a, b| a.message == b.message);
    out
}

/// Built-in example diffusions.
pub fn catalog() -> Vec<DiffusionSpec> {
    let half_line = Interval::open(0.0, f64::INFINITY).expect("valid");
    let absorbed_domain = Interval::new(0.0, f64::INFINITY, true, false).expect("valid");
    vec![
        DiffusionSpec::from_coefficients(
            "bm",
            CoefficientSpec::parse("0", "1", Interval::real_line()).expect("catalog entry parses"),
            BoundaryAtoms::none(),
        ),
        DiffusionSpec::from_coefficients(
            "bm-absorbed",
            CoefficientSpec::parse("0", "1", absorbed_domain).expect("catalog entry parses"),
            BoundaryAtoms { left: Some(Mass::Infinite), right: None },
        ),
        DiffusionSpec::from_coefficients(
            "bm-reflected",
            CoefficientSpec::parse("0", "1", absorbed_domain).expect("catalog entry parses"),
            BoundaryAtoms { left: Some(Mass::Finite(0.0)), right: None },
        ),
        DiffusionSpec::from_coefficients(
            "bes3",
            CoefficientSpec::parse("1/x", "1", half_line).expect("catalog entry parses"),
            BoundaryAtoms::none(),
        ),
        cev(2.0),
        DiffusionSpec::from_coefficients(
            "gbm",
            CoefficientSpec::parse("0", "x", half_line).expect("catalog entry parses"),
            BoundaryAtoms::none(),
        ),
        DiffusionSpec::from_coefficients(
            "ou",
            CoefficientSpec::parse("-x", "1", Interval::real_line()).expect("catalog entry parses"),
            BoundaryAtoms::none(),
        ),
    ]
}

/// CEV-type diffusion `dX = X^beta dW` on `(0, inf)`. The default catalog
/// entry uses `beta = 2`, the inverse-Bessel(3) example.
pub fn cev(beta: f64) -> DiffusionSpec {
    let half_line = Interval::open(0.0, f64::INFINITY).expect("valid");
    let sigma = format!("x^{beta:?}");
    DiffusionSpec::from_coefficients(
        "cev",
        CoefficientSpec::parse("0", &sigma, half_line).expect("catalog entry parses"),
        BoundaryAtoms::none(),
    )
}

/// Look up a catalog model by name. `beta` overrides the CEV exponent.
pub fn lookup(name: &str, beta: Option<f64>) -> Result<DiffusionSpec, ModelError> {
    if name == "cev" {
        if let Some(beta) = beta {
            return Ok(cev(beta));
        }
    }
    catalog()
        .into_iter()
        .find(|m| m.name.as_deref() == Some(name))
        .ok_or_else(|| ModelError::UnknownModel(name.to_string()))
}

/// Parse a model from the key-value file format:
///
/// ```toml
/// name = "absorbed-bm"
/// domain = [0, "inf"]
/// drift = "0"
/// sigma = "1"
///
/// [atoms]
/// left = "inf"
/// ```
pub fn from_toml_str(text: &str) -> Result<DiffusionSpec, ModelError> {
    let value: toml::Value = text.parse()?;
    let table = value
        .as_table()
        .ok_or_else(|| ModelError::Field { field: "<root>".into(), message: "expected a table".into() })?;

    let name = table.get("name").and_then(|v| v.as_str()).map(str::to_string);

    let domain_value = table
        .get("domain")
        .ok_or_else(|| ModelError::Field { field: "domain".into(), message: "missing".into() })?;
    let arr = domain_value.as_array().filter(|a| a.len() == 2).ok_or_else(|| ModelError::Field {
        field: "domain".into(),
        message: "expected [left, right]".into(),
    })?;
    let left = parse_endpoint(&arr[0], "domain[0]")?;
    let right = parse_endpoint(&arr[1], "domain[1]")?;
    let domain = Interval::new(left, right, left.is_finite(), right.is_finite())?;

    let drift = table.get("drift").and_then(|v| v.as_str()).ok_or_else(|| ModelError::Field {
        field: "drift".into(),
        message: "missing expression string".into(),
    })?;
    let sigma = table.get("sigma").and_then(|v| v.as_str()).ok_or_else(|| ModelError::Field {
        field: "sigma".into(),
        message: "missing expression string".into(),
    })?;
    let coef = CoefficientSpec::parse(drift, sigma, domain)?;

    let mut atoms = BoundaryAtoms::none();
    if let Some(atoms_value) = table.get("atoms") {
        let atoms_table = atoms_value.as_table().ok_or_else(|| ModelError::Field {
            field: "atoms".into(),
            message: "expected a table with `left`/`right`".into(),
        })?;
        for (key, slot) in [("left", &mut atoms.left), ("right", &mut atoms.right)] {
            if let Some(v) = atoms_table.get(key) {
                *slot = Some(parse_mass(v, &format!("atoms.{key}"))?);
            }
        }
    }

    Ok(DiffusionSpec { name, kind: SpecKind::Coefficients { coef, atoms } })
}

pub fn from_path(path: &Path) -> Result<DiffusionSpec, ModelError> {
    let text = std::fs::read_to_string(path)?;
    from_toml_str(&text)
}

fn parse_endpoint(v: &toml::Value, field: &str) -> Result<f64, ModelError> {
    match v {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        toml::Value::String(s) if s == "inf" => Ok(f64::INFINITY),
        toml::Value::String(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        other => Err(ModelError::Field {
            field: field.into(),
            message: format!("expected a number or \"inf\"/\"-inf\", got {other}"),
        }),
    }
}

fn parse_mass(v: &toml::Value, field: &str) -> Result<Mass, ModelError> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(Mass::Finite(*i as f64)),
        toml::Value::Float(f) if *f >= 0.0 => Ok(Mass::Finite(*f)),
        toml::Value::String(s) if s == "inf" => Ok(Mass::Infinite),
        other => Err(ModelError::Field {
            field: field.into(),
            message: format!("expected a non-negative number or \"inf\", got {other}"),
        }),
    }
}

/// Sub-type of a regular boundary, decided by the atom mass there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularSubtype {
    Absorbing,
    SlowlyReflecting,
    InstantaneouslyReflecting,
}

/// The four-way boundary classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Regular(RegularSubtype),
    Exit,
    Entrance,
    Natural,
}

impl BoundaryKind {
    /// Closed boundaries belong to the state space; open ones do not.
    pub fn is_open(&self) -> bool {
        matches!(self, BoundaryKind::Entrance | BoundaryKind::Natural)
    }

    pub fn label(&self) -> &'static str {
        match self {
            BoundaryKind::Regular(_) => "regular",
            BoundaryKind::Exit => "exit",
            BoundaryKind::Entrance => "entrance",
            BoundaryKind::Natural => "natural",
        }
    }
}

/// Classification of one boundary together with the integral verdicts that
/// produced it. `kind` is `None` when either verdict was inconclusive.
#[derive(Debug, Clone)]
pub struct BoundaryClass {
    pub kind: Option<BoundaryKind>,
    pub u_verdict: DivergenceVerdict,
    pub v_verdict: DivergenceVerdict,
    /// True when a regular boundary had no atom and absorption was assumed.
    pub atom_defaulted: bool,
}

impl BoundaryClass {
    /// Map the finiteness pattern of `(u, v)` to the boundary kind:
    /// both finite -> regular, `u` finite only -> exit, `v` finite only ->
    /// entrance, neither -> natural. Regular boundaries are sub-typed by the
    /// atom mass; a missing atom defaults to absorbing.
    pub fn from_verdicts(u: DivergenceVerdict, v: DivergenceVerdict, atom: Option<Mass>) -> BoundaryClass {
        if u.is_inconclusive() || v.is_inconclusive() {
            return BoundaryClass { kind: None, u_verdict: u, v_verdict: v, atom_defaulted: false };
        }
        let mut defaulted = false;
        let kind = match (u.is_finite(), v.is_finite()) {
            (true, true) => {
                let mass = atom.unwrap_or_else(|| {
                    defaulted = true;
                    Mass::Infinite
                });
                let subtype = match mass {
                    Mass::Infinite => RegularSubtype::Absorbing,
                    Mass::Finite(m) if m > 0.0 => RegularSubtype::SlowlyReflecting,
                    Mass::Finite(_) => RegularSubtype::InstantaneouslyReflecting,
                };
                BoundaryKind::Regular(subtype)
            }
            (true, false) => BoundaryKind::Exit,
            (false, true) => BoundaryKind::Entrance,
            (false, false) => BoundaryKind::Natural,
        };
        BoundaryClass { kind: Some(kind), u_verdict: u, v_verdict: v, atom_defaulted: defaulted }
    }
}
