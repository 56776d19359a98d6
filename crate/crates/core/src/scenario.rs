//! Scenario files: plant, objective, gains, dither bank, initial state and
//! run settings, with validation and the built-in reproduction scenarios.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::analysis::ScanConfig;
use crate::controller::{Controller, ControllerGains, SystemState};
use crate::error::{EscError, FieldIssue, Result};
use crate::geometry::{se3_element, GroupElement};
use crate::objective::{Constant, Objective, Paraboloid, Se3Distance};
use crate::plant::{
    double_integrator, example_inertia, example_initial_rotation, example_mass, kirchhoff_plant, PlantModel,
};
use crate::signals::{default_shaping, make_harmonic_bank, BankVariant, DitherBank, MIN_QUADRATURE_POINTS};
use crate::sim::{DEFAULT_STEPS_PER_PERIOD, MIN_STEPS_PER_PERIOD};

/// Largest manifold defect accepted for an initial configuration.
pub const INITIAL_DEFECT_LIMIT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantSpec {
    DoubleIntegrator {
        #[serde(default = "two")]
        dim: usize,
        /// Scalar damping `R = r I`.
        #[serde(default)]
        damping: f64,
    },
    Kirchhoff {
        /// `J`, row-major.
        inertia: Vec<f64>,
        /// `M`, row-major.
        mass: Vec<f64>,
        /// Optional 6×6 damping in frame coordinates, row-major.
        #[serde(default)]
        damping: Option<Vec<f64>>,
    },
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Paraboloid { offset: f64, weights: Vec<f64> },
    Se3Distance { rotation_weight: f64, position_weight: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub a: f64,
    pub lambda: f64,
    pub b: f64,
    pub kappa: f64,
    pub h: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BankSpec {
    /// One of `canonical`, `fig1`, `fig2`.
    Builtin { variant: String },
    /// `u` sampled on a uniform grid over one period, one row per channel.
    Sampled { period: f64, samples: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Ambient coordinates: `g` itself on ℝⁿ, `(R row-major, r)` on SE(3).
    pub g: Vec<f64>,
    #[serde(default)]
    pub v: Option<Vec<f64>>,
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    /// Defaults to `ψ(g₀)`.
    #[serde(default)]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "yes")]
    pub trajectory: bool,
    #[serde(default = "yes")]
    pub energy: bool,
    #[serde(default = "yes")]
    pub defect: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trajectory: true,
            energy: true,
            defect: true,
        }
    }
}

fn yes() -> bool {
    true
}

fn default_shaping_key() -> String {
    "default".into()
}

fn default_steps() -> usize {
    DEFAULT_STEPS_PER_PERIOD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantSpec,
    pub objective: ObjectiveSpec,
    pub gains: GainsSpec,
    pub bank: BankSpec,
    #[serde(default = "default_shaping_key")]
    pub shaping: String,
    pub initial: InitialSpec,
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    #[serde(default = "default_steps")]
    pub steps_per_period: usize,
    #[serde(default)]
    pub outputs: OutputSpec,
    /// `g*` in ambient coordinates, used for `V` and linearization.
    #[serde(default)]
    pub minimizer: Option<Vec<f64>>,
    /// Runs the plant with `u = 0` instead of the closed loop.
    #[serde(default)]
    pub open_loop: bool,
    /// Fixed integration step overriding `steps_per_period`.
    #[serde(default)]
    pub step: Option<f64>,
    /// ω values for `compare`.
    #[serde(default)]
    pub ladder: Option<Vec<f64>>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
}

/// Everything needed to run a validated scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub plant: PlantModel,
    pub controller: Controller,
    pub initial: SystemState,
    pub g_star: Option<GroupElement>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn gains(&self) -> Result<ControllerGains> {
        let g = &self.gains;
        ControllerGains::new(g.a, g.lambda, g.b, g.kappa, g.h, g.omega)
    }

    /// Validates every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        self.build().map(|_| ())
    }

    /// Validates and assembles plant, controller and initial state.
    pub fn build(&self) -> Result<Setup> {
        let mut issues = Vec::new();
        let mut note = |field: &str, msg: String| issues.push(FieldIssue::new(field, msg));

        let gains = match self.gains() {
            Ok(g) => Some(g),
            Err(EscError::Validation(list)) => {
                for i in list {
                    note(&i.field, i.message);
                }
                None
            }
            Err(e) => {
                note("gains", e.to_string());
                None
            }
        };

        if self.shaping != "default" {
            note("shaping", format!("unknown shaping function '{}', expected 'default'", self.shaping));
        }
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t_end > self.t0) {
            note("t_end", format!("must exceed t0 ({} vs {})", self.t_end, self.t0));
        }
        match self.step {
            Some(step) if !(step.is_finite() && step > 0.0) => note("step", format!("must be positive, got {step}")),
            Some(_) if !self.open_loop => {
                note("step", "a fixed step is only accepted for open-loop runs".into())
            }
            _ => {}
        }
        if self.step.is_none() && self.steps_per_period < MIN_STEPS_PER_PERIOD {
            note(
                "steps_per_period",
                format!("must be at least {MIN_STEPS_PER_PERIOD}, got {}", self.steps_per_period),
            );
        }
        if let Some(ladder) = &self.ladder {
            if ladder.is_empty() || ladder.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                note("ladder", "must be a nonempty list of positive ω values".into());
            }
        }
        if let Some(scan) = &self.scan {
            if let Err(e) = scan.validate() {
                note("scan", e.to_string());
            }
        }

        let objective = match self.objective_model() {
            Ok(o) => Some(o),
            Err(e) => {
                note("objective", e);
                None
            }
        };
        let plant = objective.and_then(|obj| match self.plant_model(obj) {
            Ok(p) => Some(p),
            Err(e) => {
                note("plant", e);
                None
            }
        });
        let bank = match self.bank_model() {
            Ok(b) => Some(b),
            Err(e) => {
                note("bank", e);
                None
            }
        };

        let mut initial = None;
        let mut g_star = None;
        if let Some(plant) = &plant {
            let n = plant.dim();
            if let Some(bank) = &bank {
                if bank.len() != n {
                    note("bank", format!("has {} channels but the plant has dimension {n}", bank.len()));
                }
            }
            if let ObjectiveSpec::Paraboloid { weights, .. } = &self.objective {
                if !matches!(self.plant, PlantSpec::DoubleIntegrator { .. }) || weights.len() != n {
                    note("objective", format!("paraboloid needs a double integrator with {n} weights"));
                }
            }
            if matches!(self.objective, ObjectiveSpec::Se3Distance { .. })
                && !matches!(self.plant, PlantSpec::Kirchhoff { .. })
            {
                note("objective", "se3-distance needs the kirchhoff plant".into());
            }
            match self.group_point("initial.g", &self.initial.g, plant) {
                Ok(g) => {
                    let v = self.initial.v.clone().unwrap_or_else(|| vec![0.0; n]);
                    let w = self.initial.w.clone().unwrap_or_else(|| vec![0.0; n]);
                    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                        note("initial.v", format!("must have {n} finite entries"));
                    }
                    if w.len() != n || w.iter().any(|x| !x.is_finite()) {
                        note("initial.w", format!("must have {n} finite entries"));
                    }
                    let eta = self.initial.eta.unwrap_or_else(|| plant.output(&g));
                    if !eta.is_finite() {
                        note("initial.eta", "must be finite".into());
                    }
                    if v.len() == n && w.len() == n {
                        initial = Some(SystemState::new(
                            g,
                            DVector::from_vec(v),
                            DVector::from_vec(w),
                            eta,
                        ));
                    }
                }
                Err(e) => note("initial.g", e),
            }
            if let Some(m) = &self.minimizer {
                match self.group_point("minimizer", m, plant) {
                    Ok(g) => g_star = Some(g),
                    Err(e) => note("minimizer", e),
                }
            }
        }

        if !issues.is_empty() {
            return Err(EscError::Validation(issues));
        }
        let (Some(plant), Some(bank), Some(gains), Some(initial)) = (plant, bank, gains, initial) else {
            unreachable!("validation passed without building every part");
        };
        Ok(Setup {
            controller: Controller::new(gains, default_shaping(), bank),
            plant,
            initial,
            g_star,
        })
    }

    fn objective_model(&self) -> std::result::Result<Arc<dyn Objective>, String> {
        let finite = |x: f64| x.is_finite();
        match &self.objective {
            ObjectiveSpec::Paraboloid { offset, weights } => {
                if !finite(*offset) || weights.is_empty() || weights.iter().any(|w| !(finite(*w) && *w > 0.0)) {
                    return Err("paraboloid needs a finite offset and positive weights".into());
                }
                Ok(Arc::new(Paraboloid {
                    offset: *offset,
                    weights: weights.clone(),
                }))
            }
            ObjectiveSpec::Se3Distance {
                rotation_weight,
                position_weight,
            } => {
                if !(finite(*rotation_weight) && *rotation_weight > 0.0 && finite(*position_weight) && *position_weight > 0.0) {
                    return Err("se3-distance weights must be positive".into());
                }
                Ok(Arc::new(Se3Distance {
                    rotation_weight: *rotation_weight,
                    position_weight: *position_weight,
                }))
            }
            ObjectiveSpec::Constant { value } => {
                if !finite(*value) {
                    return Err("constant objective must be finite".into());
                }
                Ok(Arc::new(Constant(*value)))
            }
        }
    }

    fn plant_model(&self, objective: Arc<dyn Objective>) -> std::result::Result<PlantModel, String> {
        match &self.plant {
            PlantSpec::DoubleIntegrator { dim, damping } => {
                if *dim == 0 {
                    return Err("dimension must be positive".into());
                }
                double_integrator(*dim, *damping, objective).map_err(|e| e.to_string())
            }
            PlantSpec::Kirchhoff { inertia, mass, damping } => {
                let j = matrix3(inertia).ok_or("inertia must have 9 finite entries")?;
                let m = matrix3(mass).ok_or("mass must have 9 finite entries")?;
                let plant = kirchhoff_plant(j, m, objective).map_err(|e| e.to_string())?;
                match damping {
                    None => Ok(plant),
                    Some(r) if r.len() == 36 && r.iter().all(|x| x.is_finite()) => plant
                        .with_damping(DMatrix::from_row_slice(6, 6, r))
                        .map_err(|e| e.to_string()),
                    Some(_) => Err("damping must have 36 finite entries".into()),
                }
            }
        }
    }

    fn bank_model(&self) -> std::result::Result<DitherBank, String> {
        let n = match &self.plant {
            PlantSpec::DoubleIntegrator { dim, .. } => *dim,
            PlantSpec::Kirchhoff { .. } => 6,
        };
        let bank = match &self.bank {
            BankSpec::Builtin { variant } => {
                let v = BankVariant::from_str(variant).map_err(|e| e.to_string())?;
                make_harmonic_bank(n, v).map_err(|e| e.to_string())?
            }
            BankSpec::Sampled { period, samples } => {
                if samples.iter().any(|row| row.len() < MIN_QUADRATURE_POINTS) {
                    return Err(format!("each sampled channel needs at least {MIN_QUADRATURE_POINTS} points"));
                }
                DitherBank::from_samples(*period, samples).map_err(|e| e.to_string())?
            }
        };
        bank.validate(1e-8).map_err(|e| e.to_string())?;
        Ok(bank)
    }

    fn group_point(&self, field: &str, coords: &[f64], plant: &PlantModel) -> std::result::Result<GroupElement, String> {
        let group = plant.group();
        if coords.len() != group.embed_dim() || coords.iter().any(|x| !x.is_finite()) {
            return Err(format!("{field} must have {} finite entries", group.embed_dim()));
        }
        let g = GroupElement::from_slice(coords);
        let defect = group.defect(&g);
        if defect > INITIAL_DEFECT_LIMIT {
            return Err(format!("{field} is off the group (defect {defect:.3e})"));
        }
        Ok(g)
    }
}

fn matrix3(entries: &[f64]) -> Option<Matrix3<f64>> {
    (entries.len() == 9 && entries.iter().all(|x| x.is_finite())).then(|| Matrix3::from_row_slice(entries))
}

fn row_major(m: &Matrix3<f64>) -> Vec<f64> {
    (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect()
}

fn planar(name: &str, (a, lambda, b, kappa): (f64, f64, f64, f64)) -> Scenario {
    Scenario {
        name: name.into(),
        plant: PlantSpec::DoubleIntegrator { dim: 2, damping: 0.0 },
        objective: ObjectiveSpec::Paraboloid {
            offset: -1.0,
            weights: vec![1.0, 0.5],
        },
        gains: GainsSpec {
            a,
            lambda,
            b,
            kappa,
            h: 1.0,
            omega: 30.0,
        },
        bank: BankSpec::Builtin { variant: "fig1".into() },
        shaping: default_shaping_key(),
        initial: InitialSpec {
            g: vec![1.0, 1.0],
            v: None,
            w: None,
            eta: None,
        },
        t0: 0.0,
        t_end: 40.0,
        steps_per_period: DEFAULT_STEPS_PER_PERIOD,
        outputs: OutputSpec::default(),
        minimizer: Some(vec![0.0, 0.0]),
        open_loop: false,
        step: None,
        ladder: None,
        scan: None,
    }
}

fn rigid_body(name: &str, (a, lambda, b, kappa): (f64, f64, f64, f64)) -> Scenario {
    let g0 = se3_element(&example_initial_rotation(), &Vector3::new(1.0, 1.0, 1.0));
    let g_star = se3_element(&Matrix3::identity(), &Vector3::zeros());
    Scenario {
        name: name.into(),
        plant: PlantSpec::Kirchhoff {
            inertia: row_major(&example_inertia()),
            mass: row_major(&example_mass()),
            damping: None,
        },
        objective: ObjectiveSpec::Se3Distance {
            rotation_weight: 0.25,
            position_weight: 0.5,
        },
        gains: GainsSpec {
            a,
            lambda,
            b,
            kappa,
            h: 1.0,
            omega: 5.0,
        },
        bank: BankSpec::Builtin { variant: "fig2".into() },
        shaping: default_shaping_key(),
        initial: InitialSpec {
            g: g0.coords().iter().copied().collect(),
            v: Some(vec![0.0; 6]),
            w: Some(vec![0.0; 6]),
            eta: Some(0.0),
        },
        t0: 0.0,
        t_end: 300.0,
        steps_per_period: DEFAULT_STEPS_PER_PERIOD,
        outputs: OutputSpec::default(),
        minimizer: Some(g_star.coords().iter().copied().collect()),
        open_loop: false,
        step: None,
        ladder: None,
        scan: None,
    }
}

/// The built-in scenarios: `fig1-untuned`, `fig1-tuned`, `fig2-untuned`,
/// `fig2-tuned`, `omega-ladder` and `kirchhoff-conservation`.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let mut ladder = planar("omega-ladder", (1.0, 1.0, 1.0, 0.5));
    ladder.t_end = 10.0;
    ladder.ladder = Some(vec![30.0, 60.0, 120.0, 240.0]);

    let mut conservation = rigid_body("kirchhoff-conservation", (0.1, 0.2, 0.1, 0.1));
    let v = [0.3, -0.5, 0.2, 0.4, 0.1, -0.6];
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    conservation.initial.v = Some(v.iter().map(|x| x / norm).collect());
    conservation.open_loop = true;
    conservation.step = Some(1e-3);
    conservation.t_end = 100.0;

    vec![
        planar("fig1-untuned", (1.0, 1.0, 1.0, 0.5)),
        planar("fig1-tuned", (1.3, 0.7, 1.2, 0.7)),
        rigid_body("fig2-untuned", (0.1, 0.2, 0.1, 0.1)),
        rigid_body("fig2-tuned", (0.15, 0.13, 0.13, 0.13)),
        ladder,
        conservation,
    ]
}

/// Looks up a built-in scenario by name.
pub fn builtin(name: &str) -> Result<Scenario> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| {
            let names: Vec<String> = builtin_scenarios().into_iter().map(|s| s.name).collect();
            EscError::InvalidInput(format!("unknown scenario '{name}' (known: {})", names.join(", ")))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_carry_reference_values() {
        for s in builtin_scenarios() {
            let setup = s.build().unwrap_or_else(|e| panic!("{}: {e}", s.name));
            assert_eq!(setup.controller.bank.len(), setup.plant.dim());
        }
        let fig1 = builtin("fig1-untuned").unwrap().build().unwrap();
        assert_eq!(fig1.controller.gains.omega(), 30.0);
        assert_eq!(fig1.initial.eta, 0.5);
        let fig2 = builtin("fig2-tuned").unwrap();
        assert_eq!(fig2.gains.omega, 5.0);
        assert_eq!(fig2.gains.h, 1.0);
        let PlantSpec::Kirchhoff { inertia, .. } = &fig2.plant else { panic!() };
        assert_eq!(inertia[2], -2.0 / 3.0);
    }

    #[test]
    fn json_round_trip() {
        for s in builtin_scenarios() {
            let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn rejects_violated_compensator_condition() {
        let mut s = builtin("fig1-untuned").unwrap();
        s.gains.kappa = 1.0;
        let EscError::Validation(issues) = s.validate().unwrap_err() else { panic!() };
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("a·λ − b·κ > 0"));
    }

    #[test]
    fn reports_every_bad_field() {
        let mut s = builtin("fig1-untuned").unwrap();
        s.gains.h = -1.0;
        s.bank = BankSpec::Builtin { variant: "fig2".into() };
        s.initial.g = vec![1.0];
        s.steps_per_period = 10;
        s.t_end = -1.0;
        s.shaping = "cubic".into();
        let EscError::Validation(issues) = s.validate().unwrap_err() else { panic!() };
        let fields: Vec<&str> = issues.iter().map(|i| i.field.as_str()).collect();
        for f in ["gains.h", "bank", "initial.g", "steps_per_period", "t_end", "shaping"] {
            assert!(fields.contains(&f), "missing {f} in {fields:?}");
        }
    }

    #[test]
    fn rejects_off_group_and_bad_matrices() {
        let mut s = builtin("fig2-untuned").unwrap();
        s.initial.g[0] += 0.01;
        assert!(s.validate().is_err());
        let mut s = builtin("fig2-untuned").unwrap();
        if let PlantSpec::Kirchhoff { mass, .. } = &mut s.plant {
            mass[0] = -5.0;
        }
        assert!(s.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = builtin("fig1-tuned").unwrap().to_json().unwrap().replacen("\"t0\"", "\"t_start\"", 1);
        assert!(Scenario::from_json(&text).is_err());
    }
}
