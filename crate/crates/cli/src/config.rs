use std::path::{Path, PathBuf};

use lps_core::decomp::{BoxUnion, CzParams, WhitneyParams};
use lps_core::dyadic::GoodnessParams;
use lps_core::measure::MeasureDoc;
use lps_core::verify::{BetaParams, DecayParams, FunctionSampler};
use lps_core::{AtomicMeasure, Cube, KernelSpec, QuadratureSpec, SampledFunction, SignedMeasure};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureDoc>,
    /// path of a measure document, relative to the config file
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_file: Option<PathBuf>,
    /// one value vector per slot; missing slots are the constant 1
    #[serde(default)]
    pub functions: Vec<Vec<f64>>,
    pub kernel: KernelSpec,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default = "default_goodness")]
    pub goodness: GoodnessParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub grid: GridOptions,
    #[serde(default)]
    pub bad_prob: BadProbOptions,
    #[serde(default)]
    pub whitney: Option<WhitneyOptions>,
    #[serde(default)]
    pub cz: Option<CzOptions>,
    #[serde(default)]
    pub verify: VerifyOptions,
    #[serde(default)]
    pub local: LocalOptions,
    #[serde(default)]
    pub good_lambda: GoodLambdaOptions,
}

fn default_lambda() -> f64 {
    6.0
}

fn default_goodness() -> GoodnessParams {
    GoodnessParams { r: 4, gamma: 0.25 }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOptions {
    pub j_min: Option<i32>,
    pub j_max: Option<i32>,
    /// level inspected by `goodness`; defaults to the finest level
    pub level: Option<i32>,
    pub search_levels: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BadProbOptions {
    pub level: i32,
    pub index: Vec<i64>,
    pub r_values: Vec<u32>,
    pub search_top: u32,
    pub trials: usize,
}

impl Default for BadProbOptions {
    fn default() -> Self {
        BadProbOptions {
            level: 0,
            index: Vec::new(),
            r_values: vec![2, 4, 6, 8],
            search_top: 28,
            trials: 10_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhitneyOptions {
    pub omega: BoxUnion,
    #[serde(default)]
    pub params: Option<WhitneyParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzOptions {
    pub nu: MeasureDoc,
    /// absolute threshold; otherwise `xi_factor`·‖ν‖/‖μ‖
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default = "default_xi_factor")]
    pub xi_factor: f64,
    #[serde(default)]
    pub params: Option<CzParams>,
}

fn default_xi_factor() -> f64 {
    64.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOptions {
    pub samples: usize,
    pub functions: FunctionSampler,
    /// cube of the T split; defaults to the middle half of the hull
    pub cube: Option<Cube>,
    pub c0: f64,
    pub t0: Option<f64>,
    pub decay: Option<DecayParams>,
    pub beta: Option<BetaOptions>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            samples: 200,
            functions: FunctionSampler::default(),
            cube: None,
            c0: 1.0,
            t0: None,
            decay: None,
            beta: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaOptions {
    pub nu1: MeasureDoc,
    pub nu2: MeasureDoc,
    #[serde(default = "default_xi_factor")]
    pub xi_factor: f64,
    #[serde(default)]
    pub params: Option<BetaParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalOptions {
    pub cube: Option<Cube>,
    pub p0: f64,
    pub delta0: f64,
    /// `"adversarial"` or `"empty"`
    pub exceptional: String,
    pub grid_points: usize,
    /// big-piece C₀; the realized testing constant when absent
    pub c0: Option<f64>,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            cube: None,
            p0: 2.0,
            delta0: 0.5,
            exceptional: "adversarial".into(),
            grid_points: 64,
            c0: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoodLambdaOptions {
    pub t0: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub theta: f64,
    pub rho0: f64,
    pub xi_points: usize,
}

impl Default for GoodLambdaOptions {
    fn default() -> Self {
        GoodLambdaOptions {
            t0: None,
            epsilon: 0.5,
            delta: 1e-3,
            theta: 1.0,
            rho0: 1.0,
            xi_points: 40,
        }
    }
}

/// Everything a command needs, with defaults filled in.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub mu: AtomicMeasure,
    pub functions: Vec<SampledFunction>,
    pub quad: QuadratureSpec,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

pub fn resolve(mut config: ExperimentConfig, base: &Path, oracle: bool) -> Result<Resolved, Failure> {
    let doc = match (config.measure.take(), config.measure_file.take()) {
        (Some(doc), None) => doc,
        (None, Some(file)) => {
            let path = base.join(file);
            let text =
                std::fs::read_to_string(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        _ => return Err(Failure::Config("exactly one of `measure` and `measure_file` is required".into())),
    };
    let mu = AtomicMeasure::try_from(doc.clone()).map_err(|e| Failure::Config(format!("measure: {e}")))?;
    config.measure = Some(doc);
    config.kernel.validate().map_err(|e| Failure::Config(format!("kernel: {e}")))?;
    if config.functions.len() > config.kernel.kappa {
        return Err(Failure::Config(format!(
            "functions: {} given for kappa = {}",
            config.functions.len(),
            config.kernel.kappa
        )));
    }
    let mut functions = Vec::new();
    for (i, v) in config.functions.iter().enumerate() {
        let f = SampledFunction::new(v.clone());
        f.check_on(&mu).map_err(|e| Failure::Config(format!("functions[{i}]: {e}")))?;
        functions.push(f);
    }
    while functions.len() < config.kernel.kappa {
        functions.push(SampledFunction::constant(&mu, 1.0));
    }
    config.functions = functions.iter().map(|f| f.values().to_vec()).collect();
    let mut quad = config.quadrature.clone().unwrap_or_else(|| QuadratureSpec::default_for(&mu));
    if oracle {
        quad.prune_tol = 0.0;
    }
    quad.validate().map_err(|e| Failure::Config(format!("quadrature: {e}")))?;
    config.quadrature = Some(quad.clone());
    config.goodness.validate().map_err(|e| Failure::Config(format!("goodness: {e}")))?;
    Ok(Resolved {
        config,
        mu,
        functions,
        quad,
    })
}

pub fn signed(doc: &MeasureDoc, what: &str) -> Result<SignedMeasure, Failure> {
    SignedMeasure::try_from(doc.clone()).map_err(|e| Failure::Config(format!("{what}: {e}")))
}
