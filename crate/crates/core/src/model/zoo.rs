//! Built-in models and their JSON parameter schemas.
//!
//! Every model accepts the common keys `dim`, `dispersion`, `nu`,
//! `rate_scale` and `symmetry`; see the README for the full schema.

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    AtomTable, ClassicalJumps, ConstantKernel, CosCosKernel, DerivativeSource, Dispersion,
    JumpMeasure, KrausKernel, KrausTerm, ModelSpec, Noise, SymmetryFlags, TrigDispersion, TrigTerm,
};
use crate::error::{Error, Result};

pub const MODEL_NAMES: [&str; 4] = ["identity-noise", "coscos", "mult-kraus", "classical-jump"];

/// `"minus-cos"`, `"zero"` or an explicit list of terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DispersionSpec {
    Preset(String),
    Terms { terms: Vec<TrigTerm> },
}

impl DispersionSpec {
    pub fn build(&self, dim: usize) -> Result<TrigDispersion> {
        match self {
            DispersionSpec::Preset(name) => match name.as_str() {
                "minus-cos" => Ok(TrigDispersion::minus_cos(dim)),
                "zero" => Ok(TrigDispersion::zero()),
                other => Err(Error::InvalidParams(format!("unknown dispersion preset `{other}`"))),
            },
            DispersionSpec::Terms { terms } => {
                for t in terms {
                    if t.n.len() > dim || !t.coef.is_finite() {
                        return Err(Error::InvalidParams(format!("bad dispersion term {t:?}")));
                    }
                }
                Ok(TrigDispersion { terms: terms.clone() })
            }
        }
    }
}

fn default_dim() -> usize {
    1
}

fn default_scale() -> f64 {
    1.0
}

fn default_nu() -> JumpMeasure {
    JumpMeasure::Uniform
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Common {
    #[serde(default = "default_dim")]
    dim: usize,
    dispersion: Option<DispersionSpec>,
    #[serde(default = "default_nu")]
    nu: JumpMeasure,
    #[serde(default = "default_scale")]
    rate_scale: f64,
    symmetry: Option<SymmetryFlags>,
}

#[derive(Debug, Deserialize)]
struct IdentityParams {
    #[serde(flatten)]
    common: CommonFlat,
}

#[derive(Debug, Deserialize)]
struct CosCosParams {
    #[serde(default = "default_r_hat")]
    r_hat: AtomTable,
    #[serde(flatten)]
    common: CommonFlat,
}

fn default_r_hat() -> AtomTable {
    AtomTable::Constant(1.0)
}

#[derive(Debug, Deserialize)]
struct KrausParams {
    u: Option<Vec<KrausTerm>>,
    kraus: Option<Vec<Vec<KrausTerm>>>,
    amplitude: Option<AtomTable>,
    #[serde(flatten)]
    common: CommonFlat,
}

#[derive(Debug, Deserialize)]
struct ClassicalParams {
    #[serde(default = "default_scale")]
    rate: f64,
    #[serde(default)]
    rate_mod: f64,
    #[serde(default)]
    bias: f64,
    jumps: Option<Vec<Vec<i64>>>,
    #[serde(flatten)]
    common: CommonFlat,
}

// `deny_unknown_fields` does not compose with `flatten`, so the common keys
// are collected into a map and checked separately.
#[derive(Debug, Deserialize)]
struct CommonFlat {
    #[serde(flatten)]
    rest: serde_json::Map<String, Value>,
}

impl CommonFlat {
    fn parse(self) -> Result<Common> {
        parse(Value::Object(self.rest))
    }
}

fn parse<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::InvalidParams(e.to_string()))
}

fn assemble(
    name: &str,
    common: Common,
    default_h: &str,
    noise: Noise,
    default_flags: SymmetryFlags,
) -> Result<ModelSpec> {
    if !(1..=2).contains(&common.dim) {
        return Err(Error::InvalidParams(format!("dim must be 1 or 2, got {}", common.dim)));
    }
    if !(common.rate_scale > 0.0) || !common.rate_scale.is_finite() {
        return Err(Error::InvalidParams("rate_scale must be positive".into()));
    }
    let h = common
        .dispersion
        .unwrap_or_else(|| DispersionSpec::Preset(default_h.to_string()))
        .build(common.dim)?;
    let dispersion: Arc<dyn Dispersion> = Arc::new(h);
    Ok(ModelSpec {
        name: name.to_string(),
        dim: common.dim,
        dispersion,
        noise,
        nu: common.nu,
        rate_scale: common.rate_scale,
        symmetry: common.symmetry.unwrap_or(default_flags),
        derivatives: DerivativeSource::Analytic,
    })
}

/// The default Kraus multiplier `u(k) = 1 + ½ e^{ik₁}`.
pub fn default_kraus(dim: usize) -> Vec<KrausTerm> {
    let mut e1 = vec![0; dim];
    e1[0] = 1;
    vec![
        KrausTerm { c: [1.0, 0.0], n: vec![0; dim], m: vec![] },
        KrausTerm { c: [0.5, 0.0], n: e1, m: vec![] },
    ]
}

/// Instantiate a zoo model from a parameter object (`{}` for defaults).
pub fn builtin_model(name: &str, params: &Value) -> Result<ModelSpec> {
    let params = if params.is_null() { Value::Object(Default::default()) } else { params.clone() };
    match name {
        "identity-noise" => {
            let p: IdentityParams = parse(params)?;
            let flags = SymmetryFlags { u_symmetric: false, v_symmetric: true };
            let noise = Noise::Quantum(Arc::new(ConstantKernel { value: 1.0 }));
            assemble(name, p.common.parse()?, "minus-cos", noise, flags)
        }
        "coscos" => {
            let p: CosCosParams = parse(params)?;
            let common = p.common.parse()?;
            if common.dim != 1 {
                return Err(Error::InvalidParams("coscos is defined for d = 1 only".into()));
            }
            let flags = SymmetryFlags { u_symmetric: false, v_symmetric: true };
            let noise = Noise::Quantum(Arc::new(CosCosKernel::new(p.r_hat)?));
            assemble(name, common, "minus-cos", noise, flags)
        }
        "mult-kraus" => {
            let p: KrausParams = parse(params)?;
            let common = p.common.parse()?;
            // The default multiplier has real coefficients and is declared
            // V-symmetric; user-supplied multipliers must declare it.
            let default_flags = SymmetryFlags {
                u_symmetric: false,
                v_symmetric: p.u.is_none() && p.kraus.is_none(),
            };
            let ops = match (p.u, p.kraus) {
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidParams("give either `u` or `kraus`, not both".into()))
                }
                (Some(u), None) => vec![u],
                (None, Some(k)) => k,
                (None, None) => vec![default_kraus(common.dim)],
            };
            for t in ops.iter().flatten() {
                if t.n.len() != common.dim || !(t.m.is_empty() || t.m.len() == common.dim) {
                    return Err(Error::InvalidParams(format!(
                        "Kraus term {t:?} does not match dimension {}",
                        common.dim
                    )));
                }
            }
            let noise = Noise::Quantum(Arc::new(KrausKernel::new(ops, p.amplitude)?));
            assemble(name, common, "minus-cos", noise, default_flags)
        }
        "classical-jump" => {
            let p: ClassicalParams = parse(params)?;
            let common = p.common.parse()?;
            let mut e1 = vec![0; common.dim];
            e1[0] = 1;
            let minus: Vec<i64> = e1.iter().map(|x| -x).collect();
            let jumps = ClassicalJumps {
                rate: p.rate,
                rate_mod: p.rate_mod,
                bias: p.bias,
                jumps: p.jumps.unwrap_or_else(|| vec![e1, minus]),
            };
            jumps.validate(common.dim)?;
            assemble(name, common, "zero", Noise::Classical(jumps), SymmetryFlags::default())
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// A model document: a zoo name plus its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub model: String,
    #[serde(default)]
    pub params: Value,
}

pub fn model_from_json(v: &Value) -> Result<ModelSpec> {
    let doc: ModelDocument = parse(v.clone())?;
    builtin_model(&doc.model, &doc.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn unknown_model_and_keys() {
        assert!(matches!(builtin_model("nope", &json!({})), Err(Error::UnknownModel(_))));
        assert!(matches!(
            builtin_model("identity-noise", &json!({"bogus": 1})),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            builtin_model("coscos", &json!({"r_hat": -0.5})),
            Err(Error::InvalidParams(_))
        ));
        assert!(builtin_model("coscos", &json!({"dim": 2})).is_err());
    }

    #[test]
    fn identity_noise_defaults() {
        let m = builtin_model("identity-noise", &json!({})).unwrap();
        assert_eq!(m.dim, 1);
        assert!(m.symmetry.v_symmetric);
        let g = crate::torus::make_grid(1, 8).unwrap();
        let atoms = m.atoms(&g).unwrap();
        let k = [0.3, 0.0];
        let jet = m.jet(&atoms[3], &k, &[1.0, 0.0]).unwrap();
        assert_eq!(jet.value.re, 1.0);
        assert_eq!(jet.h12[0][0].norm() + jet.d1[0].norm() + jet.h11[0][0].norm(), 0.0);
    }

    #[test]
    fn coscos_kernel_matches_closed_form() {
        let m = builtin_model("coscos", &json!({"r_hat": 0.25})).unwrap();
        let g = crate::torus::make_grid(1, 8).unwrap();
        let atoms = m.atoms(&g).unwrap();
        let (a, b) = ([0.4, 0.0], [-1.3, 0.0]);
        let v = m.kernel_value(&atoms[2], &a, &b);
        assert!((v.re - 0.4f64.cos() * 1.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn r_hat_table_length_is_checked() {
        let m = builtin_model("coscos", &json!({"r_hat": [1.0, 2.0]})).unwrap();
        let g = crate::torus::make_grid(1, 8).unwrap();
        assert!(m.atoms(&g).is_err());
    }

    #[test]
    fn mult_kraus_rates() {
        let m = builtin_model("mult-kraus", &json!({})).unwrap();
        let g = crate::torus::make_grid(1, 16).unwrap();
        let atoms = m.atoms(&g).unwrap();
        for i in 0..g.len() {
            let k = g.node(i);
            assert!((m.zero_rate(&atoms[5], &k) - (1.25 + k[0].cos())).abs() < 1e-14);
        }
    }

    #[test]
    fn documents_round_trip() {
        let doc = json!({"model": "classical-jump", "params": {"bias": 0.5, "rate_mod": 0.3}});
        let m = model_from_json(&doc).unwrap();
        assert_eq!(m.kinetic_mode(), super::super::KineticMode::Classical);
        let parsed: ModelDocument = serde_json::from_value(doc).unwrap();
        assert_eq!(parsed.model, "classical-jump");
    }
}
