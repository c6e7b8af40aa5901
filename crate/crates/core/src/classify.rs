//! Boundary classification and the Feller-Dynkin / martingale verdicts.
//!
//! For a reference point `c` in the interior, the two boundary integrals are
//!
//! ```text
//! u(b) = int over (c, b) of m((c, z]) s(dz)
//! v(b) = int over (c, b) of (s(y) - s(c)) m(dy)
//! ```
//!
//! (mirrored toward the left boundary). Finiteness of the pair decides the
//! kind: both finite -> regular, only `u` -> exit, only `v` -> entrance,
//! neither -> natural. The property verdict then reads off one fact: the
//! process is Feller-Dynkin, equivalently its stopped scale transform is a
//! true martingale, exactly when no boundary is of entrance type. Entrance
//! and natural boundaries are the open ones (outside the state space), so
//! the test is "every open boundary is natural".
//!
//! `u` and `v` are defined through the scale and speed data, so they are
//! computed in the spec's original coordinates.

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    self, BoundaryClass, BoundaryKind, DiffusionSpec, ModelDescription, RegularSubtype, Side, Violation,
};
use crate::quad::{self, DivergenceVerdict, Endpoint, ImproperOpts, QuadError, Tolerances};
use crate::scale_speed::{ScaleError, ScaleSpeed};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("specification failed validation with {} violation(s); first: {}",
        .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Three-valued answer used for the property verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Yes,
    No,
    Inconclusive,
}

/// Outcome of the Feller-Dynkin / martingale test. The two fields are equal
/// by construction; both are kept because they answer different questions.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyVerdict {
    pub is_fd: Decision,
    pub stopped_scaled_is_martingale: Decision,
    pub rationale: Vec<String>,
}

/// Options shared by the classification entry points.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyOptions {
    pub tol: Tolerances,
    pub max_stages: usize,
    pub blow_up_factor: f64,
    /// Reference point; defaults to the scale midpoint of the central window.
    pub reference: Option<f64>,
    pub grid_size: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        let improper = ImproperOpts::default();
        ClassifyOptions {
            tol: improper.tol,
            max_stages: improper.max_stages,
            blow_up_factor: improper.blow_up_factor,
            reference: None,
            grid_size: 512,
        }
    }
}

impl ClassifyOptions {
    fn improper(&self, anchor: f64) -> ImproperOpts {
        ImproperOpts {
            tol: self.tol,
            max_stages: self.max_stages,
            blow_up_factor: self.blow_up_factor,
            first_step: anchor.abs().max(1.0) * 0.5,
        }
    }
}

fn toward(ss: &ScaleSpeed, side: Side) -> Endpoint {
    let e = ss.domain.endpoint(side);
    if e == f64::INFINITY {
        Endpoint::PosInf
    } else if e == f64::NEG_INFINITY {
        Endpoint::NegInf
    } else {
        Endpoint::Finite(e)
    }
}

/// `u(b)`: scale integral of interior speed mass, improper toward `side`.
pub fn u_integral(
    ss: &ScaleSpeed,
    side: Side,
    c: f64,
    opts: &ClassifyOptions,
) -> Result<DivergenceVerdict, QuadError> {
    let improper = opts.improper(c);
    let integrand = |z: f64| {
        let mass = match side {
            Side::Right => ss.measure_of(c, z),
            Side::Left => ss.measure_of(z, c),
        };
        mass * ss.s_prime(z)
    };
    quad::integrate_improper(&integrand, c, toward(ss, side), &improper)
}

/// `v(b)`: speed integral of the scale displacement, improper toward `side`.
pub fn v_integral(
    ss: &ScaleSpeed,
    side: Side,
    c: f64,
    opts: &ClassifyOptions,
) -> Result<DivergenceVerdict, QuadError> {
    let improper = opts.improper(c);
    let sc = ss.s(c);
    let integrand = |y: f64| {
        let disp = match side {
            Side::Right => ss.s(y) - sc,
            Side::Left => sc - ss.s(y),
        };
        disp * ss.density(y)
    };
    quad::integrate_improper(&integrand, c, toward(ss, side), &improper)
}

/// Classify one boundary of prepared scale/speed data.
pub fn classify_side(
    ss: &ScaleSpeed,
    side: Side,
    c: f64,
    opts: &ClassifyOptions,
) -> Result<BoundaryClass, QuadError> {
    let u = u_integral(ss, side, c, opts)?;
    let v = v_integral(ss, side, c, opts)?;
    Ok(BoundaryClass::from_verdicts(u, v, ss.atoms.get(side)))
}

/// Reference point used when the caller does not supply one: the scale
/// midpoint of the central compact window.
pub fn default_reference_point(ss: &ScaleSpeed) -> Result<f64, ScaleError> {
    let (wl, wr) = ss.domain.central_window();
    let target = 0.5 * (ss.s(wl) + ss.s(wr));
    ss.scale_inverse(target)
}

/// Classify one boundary of a diffusion spec.
pub fn classify_boundary(spec: &DiffusionSpec, side: Side) -> Result<BoundaryClass, ClassifyError> {
    let opts = ClassifyOptions::default();
    let ss = ScaleSpeed::from_spec(spec, None)?;
    let c = default_reference_point(&ss)?;
    Ok(classify_side(&ss, side, c, &opts)?)
}

/// Decide the Feller-Dynkin and martingale properties from the two boundary
/// classifications. An entrance boundary is the only obstruction; undecided
/// boundary kinds propagate as inconclusive rather than defaulting.
pub fn decide_properties(left: &BoundaryClass, right: &BoundaryClass) -> PropertyVerdict {
    let mut rationale = Vec::new();
    let mut entrance = false;
    let mut undecided = false;
    for (side, class) in [(Side::Left, left), (Side::Right, right)] {
        match class.kind {
            Some(BoundaryKind::Entrance) => {
                entrance = true;
                rationale.push(format!(
                    "{side} boundary is of entrance type (u diverges, v finite): an open boundary that is not natural"
                ));
            }
            Some(kind) => {
                let role = if kind.is_open() { "open and natural" } else { "closed" };
                rationale.push(format!("{side} boundary is {} ({role})", kind.label()));
            }
            None => {
                undecided = true;
                rationale.push(format!("{side} boundary classification is inconclusive"));
            }
        }
    }
    let answer = if entrance {
        Decision::No
    } else if undecided {
        Decision::Inconclusive
    } else {
        Decision::Yes
    };
    PropertyVerdict { is_fd: answer, stopped_scaled_is_martingale: answer, rationale }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    pub outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err_est: Option<f64>,
    pub stages: usize,
}

impl VerdictReport {
    fn from_verdict(v: &DivergenceVerdict) -> VerdictReport {
        match v {
            DivergenceVerdict::Finite { value, err_est } => {
                VerdictReport { outcome: "finite", value: Some(*value), err_est: Some(*err_est), stages: 0 }
            }
            DivergenceVerdict::Diverges { partial_sums } => {
                VerdictReport { outcome: "diverges", value: None, err_est: None, stages: partial_sums.len() }
            }
            DivergenceVerdict::Inconclusive { partial_sums } => {
                VerdictReport { outcome: "inconclusive", value: None, err_est: None, stages: partial_sums.len() }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryReport {
    pub endpoint: serde_json::Value,
    /// `None` when either integral verdict was inconclusive.
    pub kind: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subtype: Option<&'static str>,
    pub u: VerdictReport,
    pub v: VerdictReport,
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

impl BoundaryReport {
    fn new(endpoint: f64, class: &BoundaryClass) -> BoundaryReport {
        let subtype = match class.kind {
            Some(BoundaryKind::Regular(sub)) => Some(match sub {
                RegularSubtype::Absorbing => "absorbing",
                RegularSubtype::SlowlyReflecting => "slowly-reflecting",
                RegularSubtype::InstantaneouslyReflecting => "instantaneously-reflecting",
            }),
            _ => None,
        };
        BoundaryReport {
            endpoint: endpoint_json(endpoint),
            kind: class.kind.map(|k| k.label()),
            subtype,
            u: VerdictReport::from_verdict(&class.u_verdict),
            v: VerdictReport::from_verdict(&class.v_verdict),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSummary {
    pub reference_point: f64,
    pub window: [f64; 2],
    pub window_image: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertiesReport {
    pub fd: Decision,
    pub martingale: Decision,
    pub rationale: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub tolerances: ToleranceReport,
    pub max_stages: usize,
    pub blow_up_factor: f64,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ToleranceReport {
    pub rel: f64,
    pub abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Boundaries {
    pub left: BoundaryReport,
    pub right: BoundaryReport,
}

/// Full analysis bundle. Serializes to a stable JSON layout:
/// `boundaries.left/right.{kind,subtype,u,v}`, `properties.{fd,martingale}`,
/// `diagnostics`, plus the model description and scale summary.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub model: ModelDescription,
    pub scale: ScaleSummary,
    pub boundaries: Boundaries,
    pub properties: PropertiesReport,
    pub diagnostics: Diagnostics,
}

/// Run the full analysis: validate, build scale/speed, classify both
/// boundaries, decide the properties.
pub fn analyze(spec: &DiffusionSpec) -> Result<AnalysisReport, ClassifyError> {
    analyze_with(spec, &ClassifyOptions::default())
}

pub fn analyze_with(spec: &DiffusionSpec, opts: &ClassifyOptions) -> Result<AnalysisReport, ClassifyError> {
    let violations = model::validate(spec, opts.grid_size);
    if !violations.is_empty() {
        return Err(ClassifyError::Invalid(violations));
    }
    let ss = ScaleSpeed::from_spec(spec, opts.reference)?;
    let c = match opts.reference {
        Some(c) => c,
        None => default_reference_point(&ss)?,
    };
    let left = classify_side(&ss, Side::Left, c, opts)?;
    let right = classify_side(&ss, Side::Right, c, opts)?;
    let properties = decide_properties(&left, &right);

    let mut warnings = Vec::new();
    for (side, class) in [(Side::Left, &left), (Side::Right, &right)] {
        if class.atom_defaulted {
            warnings.push(format!(
                "{side} boundary is regular but no atom was supplied; defaulting to absorbing (infinite mass)"
            ));
        }
        if let Some(kind) = class.kind {
            if !matches!(kind, BoundaryKind::Regular(_)) && ss.atoms.get(side).is_some() {
                warnings.push(format!(
                    "atom supplied at the {side} boundary is ignored: that boundary is {}, not regular",
                    kind.label()
                ));
            }
            if kind == BoundaryKind::Regular(RegularSubtype::Absorbing)
                || kind == BoundaryKind::Exit
            {
                // Closed boundaries stop the process; nothing to warn about.
            }
            if ss.domain.endpoint(side).is_infinite() && !kind.is_open() {
                warnings.push(format!(
                    "{side} boundary at infinity classified as {}; a conservative diffusion cannot reach it, check the input",
                    kind.label()
                ));
            }
        }
    }
    let mut notes = vec![
        "interior speed measure restricted to densities; atoms are supported at boundaries only".to_string(),
        "inconclusive integral verdicts propagate; consider tighter tolerances or more stages".to_string(),
    ];
    if let Some(name) = &spec.name {
        if model::catalog().iter().any(|m| m.name.as_deref() == Some(name)) {
            notes.push(format!("catalog entry: {name}"));
        }
    }

    let (wl, wr) = ss.domain.central_window();
    Ok(AnalysisReport {
        model: spec.describe(),
        scale: ScaleSummary { reference_point: c, window: [wl, wr], window_image: [ss.s(wl), ss.s(wr)] },
        boundaries: Boundaries {
            left: BoundaryReport::new(ss.domain.left(), &left),
            right: BoundaryReport::new(ss.domain.right(), &right),
        },
        properties: PropertiesReport {
            fd: properties.is_fd,
            martingale: properties.stopped_scaled_is_martingale,
            rationale: properties.rationale,
        },
        diagnostics: Diagnostics {
            tolerances: ToleranceReport { rel: opts.tol.rel, abs: opts.tol.abs },
            max_stages: opts.max_stages,
            blow_up_factor: opts.blow_up_factor,
            warnings,
            notes,
        },
    })
}
