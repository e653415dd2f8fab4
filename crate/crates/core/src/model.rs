//! Nonlinearity catalog, structural hypothesis checks and example presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, VectorField};

/// Default margin that keeps `K_f` strictly above 1.
pub const KF_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionKind {
    /// `a = a0 (s+1)^alpha` (p = 2).
    Power,
    /// `a = a0 |xi|^(p-2)`.
    PLaplacian,
    /// `a = a0 (s+1)^alpha |xi|^(p-2)`.
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    pub a0: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "two")]
    pub p: f64,
    pub kind: DiffusionKind,
}

fn two() -> f64 {
    2.0
}

impl DiffusionSpec {
    pub fn linear() -> Self {
        Self { a0: 1.0, alpha: 0.0, p: 2.0, kind: DiffusionKind::Power }
    }

    pub fn effective_p(&self) -> f64 {
        match self.kind {
            DiffusionKind::Power => 2.0,
            _ => self.p,
        }
    }

    pub fn effective_alpha(&self) -> f64 {
        match self.kind {
            DiffusionKind::PLaplacian => 0.0,
            _ => self.alpha,
        }
    }

    /// The `a0 (s+1)^alpha` factor.
    pub fn density_factor(&self, s: f64) -> f64 {
        let alpha = self.effective_alpha();
        if alpha == 0.0 {
            self.a0
        } else {
            self.a0 * (s + 1.0).powf(alpha)
        }
    }

    /// Regularized coefficient `a(xi, s)` at `|xi|^2 = grad_sq`.
    pub fn eval(&self, s: f64, grad_sq: f64, eps_reg: f64) -> f64 {
        let p = self.effective_p();
        let base = self.density_factor(s);
        if p == 2.0 {
            base
        } else {
            base * (grad_sq + eps_reg * eps_reg).powf(0.5 * (p - 2.0))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0) {
            return Err(Error::InvalidArgument(format!("a0 = {} must be positive", self.a0)));
        }
        if !(self.effective_p() > 1.0) {
            return Err(Error::InvalidArgument(format!("p = {} must exceed 1", self.p)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("alpha must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityForm {
    /// `b = b0 s (s+1)^(beta-1)`.
    Prototype,
    /// `b = chi s`.
    Linear,
    Zero,
    /// `b = b0 s + intercept`; only useful as a negative control for the checker.
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySpec {
    #[serde(default = "one")]
    pub b0: f64,
    #[serde(default = "one")]
    pub beta: f64,
    pub form: SensitivityForm,
    #[serde(default)]
    pub chi: f64,
    #[serde(default)]
    pub intercept: f64,
}

fn one() -> f64 {
    1.0
}

impl SensitivitySpec {
    pub fn prototype(b0: f64, beta: f64) -> Self {
        Self { b0, beta, form: SensitivityForm::Prototype, chi: 0.0, intercept: 0.0 }
    }

    /// `b = chi s`, declared with `b0 = chi`, `beta = 1`.
    pub fn linear(chi: f64) -> Self {
        Self { b0: chi, beta: 1.0, form: SensitivityForm::Linear, chi, intercept: 0.0 }
    }

    pub fn zero() -> Self {
        Self { b0: 0.0, beta: 0.0, form: SensitivityForm::Zero, chi: 0.0, intercept: 0.0 }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self.form {
            SensitivityForm::Prototype => {
                if self.beta == 1.0 {
                    self.b0 * s
                } else {
                    self.b0 * s * (s + 1.0).powf(self.beta - 1.0)
                }
            }
            SensitivityForm::Linear => self.chi * s,
            SensitivityForm::Zero => 0.0,
            SensitivityForm::Affine => self.b0 * s + self.intercept,
        }
    }

    /// `b(s)/s`, extended by `b'(0)` at the origin. Bounds the transport speed
    /// of the upwind chemotaxis flux per unit gradient.
    pub fn rate(&self, s: f64) -> f64 {
        match self.form {
            SensitivityForm::Prototype => {
                if self.beta == 1.0 {
                    self.b0
                } else {
                    self.b0 * (s + 1.0).powf(self.beta - 1.0)
                }
            }
            SensitivityForm::Linear => self.chi,
            SensitivityForm::Zero => 0.0,
            SensitivityForm::Affine => {
                if s > 0.0 {
                    self.eval(s) / s
                } else if self.intercept == 0.0 {
                    self.b0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.form, SensitivityForm::Zero) || (self.eval(1.0) == 0.0 && self.eval(0.0) == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceForm {
    /// `f = r s - mu s^(1+gamma)`.
    Logistic,
    /// `f = mu s (1 - s - w)` with the haptotactic matrix density `w`.
    LogisticHaptotactic,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub form: SourceForm,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub gamma_exp: f64,
}

impl SourceSpec {
    pub fn logistic(r: f64, mu: f64, gamma_exp: f64) -> Self {
        Self { form: SourceForm::Logistic, r, mu, gamma_exp }
    }

    pub fn zero() -> Self {
        Self { form: SourceForm::Zero, r: 0.0, mu: 0.0, gamma_exp: 1.0 }
    }

    pub fn eval(&self, s: f64, w: f64) -> f64 {
        match self.form {
            SourceForm::Logistic => self.r * s - self.mu * s.powf(1.0 + self.gamma_exp),
            SourceForm::LogisticHaptotactic => self.mu * s * (1.0 - s - w),
            SourceForm::Zero => 0.0,
        }
    }

    pub fn derivative(&self, s: f64, w: f64) -> f64 {
        match self.form {
            SourceForm::Logistic => self.r - self.mu * (1.0 + self.gamma_exp) * s.powf(self.gamma_exp),
            SourceForm::LogisticHaptotactic => self.mu * (1.0 - 2.0 * s - w),
            SourceForm::Zero => 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.form, SourceForm::Zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductionForm {
    /// `g = s^sigma`.
    Power,
    /// `g = s`.
    Linear,
    /// Signal consumed at rate `n c`, no linear decay.
    Consumption,
    /// `c_t = Δc - c`.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductionSpec {
    pub form: ProductionForm,
    #[serde(default = "one")]
    pub sigma: f64,
}

impl ProductionSpec {
    pub fn power(sigma: f64) -> Self {
        Self { form: ProductionForm::Power, sigma }
    }

    pub fn linear() -> Self {
        Self { form: ProductionForm::Linear, sigma: 1.0 }
    }

    pub fn consumption() -> Self {
        Self { form: ProductionForm::Consumption, sigma: 1.0 }
    }

    pub fn none() -> Self {
        Self { form: ProductionForm::None, sigma: 1.0 }
    }

    /// Source term `g(s)` of the signal equation (zero for consumption).
    pub fn eval(&self, s: f64) -> f64 {
        match self.form {
            ProductionForm::Power => {
                if s > 0.0 {
                    s.powf(self.sigma)
                } else {
                    0.0
                }
            }
            ProductionForm::Linear => s,
            ProductionForm::Consumption | ProductionForm::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvectionForm {
    Zero,
    /// Stream function `A sin(pi x / Lx) sin(pi y / Ly)`.
    CosineVortex,
    /// Rigid rotation about the domain center with angular speed `A`.
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvectionSpec {
    pub form: AdvectionForm,
    #[serde(default)]
    pub amplitude: f64,
}

impl AdvectionSpec {
    pub fn zero() -> Self {
        Self { form: AdvectionForm::Zero, amplitude: 0.0 }
    }

    pub fn build(&self, grid: Grid) -> VectorField {
        let a = self.amplitude;
        let (lx, ly) = (grid.extent(0), grid.extent(1));
        match self.form {
            AdvectionForm::Zero => VectorField::zeros(grid),
            AdvectionForm::CosineVortex => VectorField::from_stream_function(grid, |x, y| {
                a * (std::f64::consts::PI * x / lx).sin() * (std::f64::consts::PI * y / ly).sin()
            }),
            AdvectionForm::Rotation => VectorField::from_stream_function(grid, |x, y| {
                -0.5 * a * ((x - 0.5 * lx).powi(2) + (y - 0.5 * ly).powi(2))
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaptotaxisSpec {
    pub xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    ExampleA,
    ExampleB,
    ExampleC,
    ExampleD,
    General,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub tag: ModelTag,
    pub diffusion: DiffusionSpec,
    pub sensitivity: SensitivitySpec,
    pub source: SourceSpec,
    pub production: ProductionSpec,
    pub tau: u8,
    pub advection: AdvectionSpec,
    pub haptotaxis: Option<HaptotaxisSpec>,
    pub kf_margin: f64,
}

impl ModelSpec {
    pub fn example_a(sigma: f64) -> Self {
        Self {
            tag: ModelTag::ExampleA,
            diffusion: DiffusionSpec::linear(),
            sensitivity: SensitivitySpec::prototype(1.0, 1.0),
            source: SourceSpec::zero(),
            production: ProductionSpec::power(sigma),
            tau: 0,
            advection: AdvectionSpec::zero(),
            haptotaxis: None,
            kf_margin: KF_MARGIN,
        }
    }

    pub fn example_b(r: f64, mu: f64, gamma_exp: f64) -> Self {
        Self {
            tag: ModelTag::ExampleB,
            diffusion: DiffusionSpec::linear(),
            sensitivity: SensitivitySpec::prototype(1.0, 1.0),
            source: SourceSpec::logistic(r, mu, gamma_exp),
            production: ProductionSpec::linear(),
            tau: 0,
            advection: AdvectionSpec::zero(),
            haptotaxis: None,
            kf_margin: KF_MARGIN,
        }
    }

    pub fn example_c(p: f64, chi: f64, xi: f64, mu: f64) -> Self {
        Self {
            tag: ModelTag::ExampleC,
            diffusion: DiffusionSpec { a0: 1.0, alpha: 0.0, p, kind: DiffusionKind::PLaplacian },
            sensitivity: SensitivitySpec::linear(chi),
            source: SourceSpec { form: SourceForm::LogisticHaptotactic, r: mu, mu, gamma_exp: 1.0 },
            production: ProductionSpec::linear(),
            tau: 0,
            advection: AdvectionSpec::zero(),
            haptotaxis: Some(HaptotaxisSpec { xi }),
            kf_margin: KF_MARGIN,
        }
    }

    pub fn example_d(p: f64) -> Self {
        Self {
            tag: ModelTag::ExampleD,
            diffusion: DiffusionSpec { a0: 1.0, alpha: 0.0, p, kind: DiffusionKind::PLaplacian },
            sensitivity: SensitivitySpec::linear(1.0),
            source: SourceSpec::zero(),
            production: ProductionSpec::consumption(),
            tau: 0,
            advection: AdvectionSpec::zero(),
            haptotaxis: None,
            kf_margin: KF_MARGIN,
        }
    }

    pub fn general() -> Self {
        Self {
            tag: ModelTag::General,
            diffusion: DiffusionSpec { a0: 1.0, alpha: 0.5, p: 2.5, kind: DiffusionKind::Product },
            sensitivity: SensitivitySpec::prototype(1.0, 0.5),
            source: SourceSpec::logistic(1.0, 1.0, 1.0),
            production: ProductionSpec::linear(),
            tau: 1,
            advection: AdvectionSpec { form: AdvectionForm::CosineVortex, amplitude: 0.2 },
            haptotaxis: None,
            kf_margin: KF_MARGIN,
        }
    }

    /// Pure diffusion `n_t = Δn`; the signal decays passively.
    pub fn heat() -> Self {
        Self {
            tag: ModelTag::Custom,
            diffusion: DiffusionSpec::linear(),
            sensitivity: SensitivitySpec::zero(),
            source: SourceSpec::zero(),
            production: ProductionSpec::none(),
            tau: 0,
            advection: AdvectionSpec::zero(),
            haptotaxis: None,
            kf_margin: KF_MARGIN,
        }
    }

    pub fn alpha_minus(&self) -> f64 {
        (-self.diffusion.effective_alpha()).max(0.0)
    }

    pub fn kf(&self) -> Result<f64> {
        compute_kf(&self.source, self.kf_margin)
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        if self.tau > 1 {
            return Err(Error::InvalidArgument(format!("tau = {} not in {{0,1}}", self.tau)));
        }
        if self.tau == 1 && matches!(self.advection.form, AdvectionForm::Zero) {
            return Err(Error::InvalidArgument("tau = 1 needs an advection generator".into()));
        }
        if self.sensitivity.eval(0.0) != 0.0 {
            return Err(Error::InvalidArgument("sensitivity must vanish at s = 0".into()));
        }
        if self.haptotaxis.is_some() && !matches!(self.sensitivity.form, SensitivityForm::Linear) {
            return Err(Error::InvalidArgument("haptotaxis needs the linear sensitivity form".into()));
        }
        if matches!(self.source.form, SourceForm::LogisticHaptotactic) && self.haptotaxis.is_none() {
            return Err(Error::InvalidArgument("haptotactic source needs haptotaxis enabled".into()));
        }
        if matches!(self.production.form, ProductionForm::Power) && !(self.production.sigma > 0.0) {
            return Err(Error::InvalidArgument("production exponent sigma must be positive".into()));
        }
        Ok(())
    }

    /// Advisory messages: regimes outside the proven results and scope notes.
    pub fn warnings(&self, dim: usize) -> Vec<String> {
        let mut out = Vec::new();
        if dim < 2 {
            out.push("outside the N >= 2 hypothesis (1D fast-test mode)".to_string());
        }
        match self.tag {
            ModelTag::ExampleA => {
                let s = self.production.sigma;
                if s >= 2.0 / dim as f64 {
                    out.push(format!("sigma = {s} >= 2/N: convergence for small mass not covered"));
                }
            }
            ModelTag::ExampleB | ModelTag::ExampleD => {
                out.push("fluid equation out of scope: run with u = 0".to_string());
            }
            ModelTag::ExampleC => {
                let need = example_c_p_threshold(dim);
                if self.diffusion.p <= need {
                    out.push(format!("p = {} <= {need}: global Hölder solution not covered", self.diffusion.p));
                }
            }
            _ => {}
        }
        out
    }
}

/// Lower bound on `p` for the chemotaxis-haptotaxis existence result,
/// `1 + N(2N + 3λ)/((N+1)(N + 2λ))` with `λ = 2N/(N-2)_+`.
pub fn example_c_p_threshold(dim: usize) -> f64 {
    let n = dim as f64;
    let frac = if dim <= 2 {
        3.0 * n / (2.0 * (n + 1.0))
    } else {
        let lambda = 2.0 * n / (n - 2.0);
        n * (2.0 * n + 3.0 * lambda) / ((n + 1.0) * (n + 2.0 * lambda))
    };
    1.0 + frac
}

pub fn preset(name: &str) -> Result<ModelSpec> {
    match name {
        "example_a" => Ok(ModelSpec::example_a(0.5)),
        "example_b" => Ok(ModelSpec::example_b(1.0, 4.0, 1.0)),
        "example_c" => Ok(ModelSpec::example_c(3.0, 1.0, 1.0, 1.0)),
        "example_d" => Ok(ModelSpec::example_d(2.5)),
        "general" => Ok(ModelSpec::general()),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Level `K_f > 1` beyond which the source is nonpositive.
pub fn compute_kf(source: &SourceSpec, margin: f64) -> Result<f64> {
    let floor = 1.0 + margin;
    let root = match source.form {
        SourceForm::Zero => 0.0,
        SourceForm::Logistic => {
            if source.mu > 0.0 {
                if source.r > 0.0 {
                    let mut root = (source.r / source.mu).powf(1.0 / source.gamma_exp);
                    // powf may land an ulp or two below the exact root.
                    while source.eval(root, 0.0) > 0.0 {
                        root = root.next_up();
                    }
                    root
                } else {
                    0.0
                }
            } else if source.r < 0.0 {
                0.0
            } else {
                return Err(Error::NoKf(format!(
                    "f(s) = {} s does not tend to -infinity",
                    source.r
                )));
            }
        }
        SourceForm::LogisticHaptotactic => {
            if source.mu > 0.0 {
                1.0
            } else {
                return Err(Error::NoKf("haptotactic source needs mu > 0".into()));
            }
        }
    };
    Ok(root.max(floor))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub witness: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub horizon: f64,
    pub sample_count: usize,
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn item(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

pub const CHECK_HORIZON: f64 = 1e6;

/// Sample-based verification of the structural hypotheses on a geometric
/// ladder `1e-6 ..= horizon` (plus `s = 0`).
pub fn structural_check(model: &ModelSpec, sample_count: usize) -> Result<CheckReport> {
    if sample_count < 16 {
        return Err(Error::InvalidArgument(format!("sample_count = {sample_count} < 16")));
    }
    let horizon = CHECK_HORIZON;
    let lo: f64 = 1e-6;
    let ladder: Vec<f64> = std::iter::once(0.0)
        .chain((0..sample_count).map(|k| lo * (horizon / lo).powf(k as f64 / (sample_count - 1) as f64)))
        .collect();
    let mut items = Vec::new();
    let d = &model.diffusion;

    let params_ok = d.validate().is_ok();
    items.push(CheckItem {
        name: "diffusion_parameters".into(),
        passed: params_ok,
        witness: None,
        detail: format!("a0 = {}, p = {}", d.a0, d.effective_p()),
    });

    // a >= a0 (s+1)^alpha |xi|^(p-2), gradients sampled in [1e-3, 1e3].
    let p = d.effective_p();
    let alpha = d.effective_alpha();
    let eps = crate::solver::DEFAULT_EPS_REG;
    let mut witness = None;
    'outer: for &s in &ladder {
        for k in 0..sample_count {
            let xi = 1e-3 * 1e6f64.powf(k as f64 / (sample_count - 1) as f64);
            let lower = d.a0 * (s + 1.0).powf(alpha) * xi.powf(p - 2.0);
            if d.eval(s, xi * xi, eps) < lower * (1.0 - 1e-6) {
                witness = Some(s);
                break 'outer;
            }
        }
    }
    items.push(CheckItem {
        name: "diffusion_lower_bound".into(),
        passed: witness.is_none() && params_ok,
        witness,
        detail: "a(xi,s) >= a0 (s+1)^alpha |xi|^(p-2)".into(),
    });

    let b = &model.sensitivity;
    let b_at_0 = b.eval(0.0);
    items.push(CheckItem {
        name: "sensitivity_vanishes_at_zero".into(),
        passed: b_at_0 == 0.0,
        witness: if b_at_0 == 0.0 { None } else { Some(0.0) },
        detail: format!("b(0) = {b_at_0:e}"),
    });
    let witness = ladder
        .iter()
        .copied()
        .find(|&s| b.eval(s) > b.b0 * (s + 1.0).powf(b.beta) * (1.0 + 1e-12) || b.eval(s) < 0.0);
    items.push(CheckItem {
        name: "sensitivity_growth".into(),
        passed: witness.is_none(),
        witness,
        detail: format!("0 <= b(s) <= {} (s+1)^{}", b.b0, b.beta),
    });

    let f0 = model.source.eval(0.0, 0.0);
    items.push(CheckItem {
        name: "source_nonnegative_at_zero".into(),
        passed: f0 >= 0.0,
        witness: if f0 >= 0.0 { None } else { Some(0.0) },
        detail: format!("f(0) = {f0:e}"),
    });
    match model.kf() {
        Ok(kf) => {
            let witness = ladder
                .iter()
                .copied()
                .filter(|&s| s >= kf)
                .find(|&s| model.source.eval(s, 0.0) > 0.0);
            items.push(CheckItem {
                name: "source_nonpositive_beyond_kf".into(),
                passed: witness.is_none(),
                witness,
                detail: format!("K_f = {kf}"),
            });
        }
        Err(e) => items.push(CheckItem {
            name: "source_nonpositive_beyond_kf".into(),
            passed: false,
            witness: Some(horizon),
            detail: format!("{e}; f(horizon) = {:e}", model.source.eval(horizon, 0.0)),
        }),
    }

    let g0 = model.production.eval(0.0);
    items.push(CheckItem {
        name: "production_bounded_at_zero".into(),
        passed: g0.is_finite() && model.production.sigma > 0.0,
        witness: None,
        detail: format!("g(0) = {g0:e}"),
    });

    Ok(CheckReport { horizon, sample_count, items })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kf_examples() {
        assert_eq!(compute_kf(&SourceSpec::logistic(2.0, 1.0, 1.0), KF_MARGIN).unwrap(), 2.0);
        assert_eq!(compute_kf(&SourceSpec::logistic(4.0, 1.0, 2.0), KF_MARGIN).unwrap(), 2.0);
        assert_eq!(compute_kf(&SourceSpec::logistic(-1.0, 1.0, 1.0), KF_MARGIN).unwrap(), 1.0 + KF_MARGIN);
        assert!(matches!(compute_kf(&SourceSpec::logistic(1.0, 0.0, 1.0), KF_MARGIN), Err(Error::NoKf(_))));
    }

    #[test]
    fn presets_pass_checks() {
        for name in ["example_a", "example_b", "example_c", "example_d", "general"] {
            let m = preset(name).unwrap();
            m.validate().unwrap();
            let r = structural_check(&m, 32).unwrap();
            assert!(r.passed(), "{name}: {:?}", r.items);
        }
        assert!(preset("example_e").is_err());
    }

    #[test]
    fn preset_contents() {
        let a = ModelSpec::example_a(0.5);
        assert_eq!(a.diffusion.effective_p(), 2.0);
        assert_eq!(a.diffusion.effective_alpha(), 0.0);
        assert_eq!(a.sensitivity.eval(0.7), 0.7);
        assert_eq!(a.production.eval(0.25), 0.5);
        assert_eq!(a.source.eval(3.0, 0.0), 0.0);
        let c = preset("example_c").unwrap();
        assert_eq!(c.diffusion.kind, DiffusionKind::PLaplacian);
        assert_eq!(c.sensitivity.eval(2.0), 2.0);
        assert!(c.haptotaxis.is_some());
        assert_eq!(c.source.eval(0.5, 0.25), 0.125);
        let b = preset("example_b").unwrap();
        assert_eq!(b.source.eval(1.0, 0.0), 1.0 - 4.0);
        assert_eq!(b.production.eval(0.3), 0.3);
        assert!(!b.warnings(2).is_empty());
    }

    #[test]
    fn checker_failures_carry_witnesses() {
        let mut m = ModelSpec::example_a(0.5);
        m.sensitivity = SensitivitySpec { b0: 1.0, beta: 1.0, form: SensitivityForm::Affine, chi: 0.0, intercept: 1.0 };
        let r = structural_check(&m, 16).unwrap();
        let item = r.item("sensitivity_vanishes_at_zero").unwrap();
        assert!(!item.passed);
        assert_eq!(item.witness, Some(0.0));

        let mut m = ModelSpec::example_a(0.5);
        m.source = SourceSpec::logistic(1.0, 0.0, 1.0);
        let r = structural_check(&m, 16).unwrap();
        let item = r.item("source_nonpositive_beyond_kf").unwrap();
        assert!(!item.passed);
        assert_eq!(item.witness, Some(CHECK_HORIZON));
        assert!(structural_check(&m, 15).is_err());
    }

    #[test]
    fn example_c_threshold() {
        assert!((example_c_p_threshold(2) - 2.0).abs() < 1e-15);
        let n = 3.0;
        let lam = 6.0;
        let want = 1.0 + n * (2.0 * n + 3.0 * lam) / ((n + 1.0) * (n + 2.0 * lam));
        assert!((example_c_p_threshold(3) - want).abs() < 1e-15);
        assert!(ModelSpec::example_c(1.9, 1.0, 1.0, 1.0).warnings(2).iter().any(|w| w.contains("Hölder")));
    }

    #[test]
    fn validation() {
        let mut m = ModelSpec::example_a(0.5);
        m.tau = 1;
        assert!(m.validate().is_err());
        m.advection = AdvectionSpec { form: AdvectionForm::CosineVortex, amplitude: 1.0 };
        assert!(m.validate().is_ok());
        let mut c = ModelSpec::example_c(3.0, 1.0, 1.0, 1.0);
        c.sensitivity = SensitivitySpec::prototype(1.0, 1.0);
        assert!(c.validate().is_err());
    }
}
