//! Strict parsing of cost sources, density specs, scaled quantities and
//! problem documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use refractor_core::cost::{builtin_cost, CostDocument, CostSpec};
use refractor_core::solvability::{gaussian_like_density, DensityField};
use refractor_core::sphere::{build_grid, GridKind, SphereGrid, SpherePoint, Vec3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Deserializes a JSON file, reporting `path:line:column` on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

pub fn parse_params(raw: &[String]) -> Result<BTreeMap<String, f64>, CliError> {
    let mut params = BTreeMap::new();
    for item in raw {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| config(format!("--param: expected key=value, got `{item}`")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| config(format!("--param {}: `{v}` is not a number", k.trim())))?;
        if params.insert(k.trim().to_string(), value).is_some() {
            return Err(config(format!("--param {}: given twice", k.trim())));
        }
    }
    Ok(params)
}

/// A cost from a builtin name plus `--param`s, or from a JSON document.
pub fn resolve_cost(source: Option<&str>, params: &[String]) -> Result<CostSpec, CliError> {
    let source = source.ok_or_else(|| config("--cost is required"))?;
    let params = parse_params(params)?;
    let path = Path::new(source);
    if source.ends_with(".json") || path.is_file() {
        if !params.is_empty() {
            return Err(config("--param cannot be combined with a cost document"));
        }
        let doc: CostDocument = read_json(path)?;
        return Ok(doc.resolve()?);
    }
    Ok(builtin_cost(source, &params)?)
}

/// `x` or `x·unit` (also `x*unit`, `xunit`), e.g. `0.9zstar`.
pub fn parse_scaled(raw: &str, unit: &str, flag: &str) -> Result<(f64, bool), CliError> {
    let s = raw.trim();
    let (num, scaled) = match s.strip_suffix(unit) {
        Some(head) => (head.trim_end_matches(['*', '·', ' ']), true),
        None => (s, false),
    };
    let value: f64 = if num.is_empty() && scaled {
        1.0
    } else {
        num.parse().map_err(|_| config(format!("{flag}: cannot parse `{raw}`")))?
    };
    if !value.is_finite() {
        return Err(config(format!("{flag}: `{raw}` is not finite")));
    }
    Ok((value, scaled))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub kind: GridKind,
    pub resolution: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<SphereGrid>, CliError> {
        Ok(Arc::new(build_grid(self.kind, self.resolution)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CenterSpec {
    Named(String),
    Point([f64; 3]),
}

impl CenterSpec {
    fn point(&self) -> Result<SpherePoint, CliError> {
        match self {
            CenterSpec::Named(n) if n == "north" => Ok(SpherePoint::north()),
            CenterSpec::Named(n) if n == "south" => Ok(SpherePoint::north().antipode()),
            CenterSpec::Named(n) => Err(config(format!("unknown center `{n}` (north, south or [x, y, z])"))),
            CenterSpec::Point([x, y, z]) => Ok(SpherePoint::from_xyz(*x, *y, *z)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform,
    #[serde(alias = "gaussian_like")]
    Gaussian { sigma: f64, center: CenterSpec },
    /// Proportional to `1 + amplitude · (direction · x)`.
    Linear { amplitude: f64, direction: [f64; 3] },
    /// Rows `node_index,value`; the grid is declared in `<path>.json`.
    Csv { path: PathBuf },
}

impl DensitySpec {
    /// Parses `kind[:key=value[,key=value]*]`; vectors use `/` separators
    /// (`center=0.3/0.2/0.9`).
    pub fn parse(raw: &str) -> Result<Self, CliError> {
        let (kind, rest) = raw.split_once(':').unwrap_or((raw, ""));
        let mut obj = Map::new();
        obj.insert("kind".into(), Value::String(kind.trim().to_string()));
        for item in rest.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| config(format!("density `{raw}`: expected key=value, got `{item}`")))?;
            let v = v.trim();
            let value = if v.contains('/') {
                let parts: Result<Vec<f64>, _> = v.split('/').map(|p| p.trim().parse::<f64>()).collect();
                let parts = parts.map_err(|_| config(format!("density `{raw}`: bad vector `{v}`")))?;
                Value::from(parts)
            } else if let Ok(x) = v.parse::<f64>() {
                Value::from(x)
            } else {
                Value::String(v.to_string())
            };
            if obj.insert(k.trim().to_string(), value).is_some() {
                return Err(config(format!("density `{raw}`: `{}` given twice", k.trim())));
            }
        }
        serde_json::from_value(Value::Object(obj)).map_err(|e| config(format!("density `{raw}`: {e}")))
    }

    /// The density on `grid`, with the analytic normalization when known.
    pub fn build(&self, grid: &Arc<SphereGrid>) -> Result<(DensityField, Option<f64>), CliError> {
        match self {
            DensitySpec::Uniform => Ok((DensityField::uniform(grid.clone()), None)),
            DensitySpec::Gaussian { sigma, center } => {
                let d = gaussian_like_density(&center.point()?, *sigma, grid.clone())?;
                Ok((d.field, Some(d.normalization)))
            }
            DensitySpec::Linear { amplitude, direction } => {
                let dir = Vec3::new(direction[0], direction[1], direction[2]);
                Ok((DensityField::linear_perturbation(grid.clone(), &dir, *amplitude)?, None))
            }
            DensitySpec::Csv { path } => Ok((read_density_csv(path, grid)?, None)),
        }
    }
}

fn read_density_csv(path: &Path, grid: &Arc<SphereGrid>) -> Result<DensityField, CliError> {
    let mut header_path = path.as_os_str().to_owned();
    header_path.push(".json");
    let declared: GridSpec = read_json(Path::new(&header_path))?;
    if declared.kind != grid.kind() || declared.resolution != grid.resolution() {
        return Err(config(format!(
            "{}: declared grid {:?}/{} differs from the run's {:?}/{}",
            path.display(),
            declared.kind,
            declared.resolution,
            grid.kind(),
            grid.resolution()
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| config(format!("{}: {e}", path.display())))?;
    let mut values = vec![f64::NAN; grid.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| config(format!("{}: {e}", path.display())))?;
        let at = || format!("{}: record {}", path.display(), line + 1);
        if record.len() != 2 {
            return Err(config(format!("{}: expected node_index,value", at())));
        }
        if line == 0 && record[0].parse::<usize>().is_err() {
            continue; // column header
        }
        let i: usize = record[0].parse().map_err(|_| config(format!("{}: bad node index", at())))?;
        let v: f64 = record[1].parse().map_err(|_| config(format!("{}: bad value", at())))?;
        if i >= values.len() {
            return Err(config(format!("{}: node {i} outside the grid", at())));
        }
        if !values[i].is_nan() {
            return Err(config(format!("{}: node {i} repeated", at())));
        }
        values[i] = v;
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(config(format!("{}: node {i} missing", path.display())));
    }
    Ok(DensityField::normalized(grid.clone(), values)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Absolute(f64),
    /// `"<x>mean"`: x times the mean admissible cost.
    Relative(String),
}

impl EpsilonSpec {
    pub fn resolve(&self, mean_cost: f64) -> Result<f64, CliError> {
        let eps = match self {
            EpsilonSpec::Absolute(e) => *e,
            EpsilonSpec::Relative(s) => match parse_scaled(s, "mean", "epsilon")? {
                (x, true) => x * mean_cost,
                (x, false) => x,
            },
        };
        if !(eps > 0.0) {
            return Err(config(format!("epsilon must be positive, got {eps}")));
        }
        Ok(eps)
    }
}

/// Problem document for `solve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub grid: Option<GridSpec>,
    pub f: Option<DensitySpec>,
    pub g: Option<DensitySpec>,
    pub cost: Option<CostDocument>,
    pub epsilon: Option<EpsilonSpec>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub variant: Option<String>,
    pub gauge: Option<f64>,
    pub mask_margin: Option<f64>,
}
