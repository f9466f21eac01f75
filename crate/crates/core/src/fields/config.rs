use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{PolynomialFields, VectorFieldSpec};
use crate::error::{Error, Result};

/// One affine field `x ↦ M x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearField {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

/// Field families loadable from a JSON description, e.g.
///
/// ```json
/// {"family": "linear", "drift": {"matrix": [[-1.0]]}, "fields": [{"matrix": [[1.0]]}]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Constant {
        #[serde(default)]
        drift: Option<Vec<f64>>,
        fields: Vec<Vec<f64>>,
    },
    Linear {
        #[serde(default)]
        drift: Option<LinearField>,
        fields: Vec<LinearField>,
    },
    Heisenberg {},
    Plugin {
        name: String,
    },
}

/// Named user-supplied families for [`FieldConfig::Plugin`].
#[derive(Default, Clone)]
pub struct PluginRegistry {
    entries: BTreeMap<String, Arc<dyn VectorFieldSpec>>,
}

impl PluginRegistry {
    pub fn register(&mut self, name: impl Into<String>, spec: Arc<dyn VectorFieldSpec>) {
        self.entries.insert(name.into(), spec);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn VectorFieldSpec>> {
        self.entries.get(name).cloned()
    }
}

fn to_matrix(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter(format!("expected a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl LinearField {
    fn build(&self, n: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let m = to_matrix(&self.matrix, n)?;
        let c = match &self.offset {
            Some(c) if c.len() == n => DVector::from_column_slice(c),
            Some(c) => return Err(Error::DimensionMismatch { expected: n, got: c.len() }),
            None => DVector::zeros(n),
        };
        Ok((m, c))
    }
}

impl FieldConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self, registry: &PluginRegistry) -> Result<Arc<dyn VectorFieldSpec>> {
        match self {
            FieldConfig::Constant { drift, fields } => {
                let n = fields.first().map(Vec::len).ok_or_else(|| Error::InvalidParameter("no fields given".into()))?;
                let drift = drift.clone().unwrap_or_else(|| vec![0.0; n]);
                Ok(Arc::new(PolynomialFields::constant(&drift, fields)?))
            }
            FieldConfig::Linear { drift, fields } => {
                let n = fields.first().map(|f| f.matrix.len()).ok_or_else(|| Error::InvalidParameter("no fields given".into()))?;
                let (mut mats, mut offs) = (Vec::new(), Vec::new());
                let (m0, c0) = match drift {
                    Some(d) => d.build(n)?,
                    None => (DMatrix::zeros(n, n), DVector::zeros(n)),
                };
                mats.push(m0);
                offs.push(c0);
                for f in fields {
                    let (m, c) = f.build(n)?;
                    mats.push(m);
                    offs.push(c);
                }
                Ok(Arc::new(PolynomialFields::affine(mats, offs)?))
            }
            FieldConfig::Heisenberg {} => Ok(Arc::new(PolynomialFields::heisenberg())),
            FieldConfig::Plugin { name } => {
                registry.get(name).ok_or_else(|| Error::InvalidParameter(format!("unknown plugin field family '{name}'")))
            }
        }
    }
}
