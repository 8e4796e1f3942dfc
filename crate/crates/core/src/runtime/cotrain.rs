use std::collections::{BTreeMap, BTreeSet};

use super::RuntimeError;
use crate::registry::{ModelManifest, ModelMeta, Registry};

pub type Capabilities = BTreeMap<String, f64>;

pub const DEFAULT_ETA: f64 = 0.1;

/// One synchronous round: every model moves `eta` of the way toward the best
/// partner on each tag it trails on. Tags a model lacks count as 0.
pub fn co_train_round(caps: &[Capabilities], eta: f64) -> Vec<Capabilities> {
    let tags: BTreeSet<&String> = caps.iter().flat_map(|c| c.keys()).collect();
    caps.iter()
        .enumerate()
        .map(|(i, own)| {
            tags.iter()
                .map(|&t| {
                    let mine = own.get(t).copied().unwrap_or(0.0);
                    let best = caps
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, c)| c.get(t).copied().unwrap_or(0.0))
                        .fold(f64::NEG_INFINITY, f64::max);
                    (t.clone(), (mine + eta * (best - mine).max(0.0)).clamp(0.0, 1.0))
                })
                .collect()
        })
        .collect()
}

pub fn co_train(models: &[ModelManifest], rounds: u32, eta: f64) -> Result<Vec<Capabilities>, RuntimeError> {
    if models.len() < 2 {
        return Err(RuntimeError::TooFewModels(models.len()));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(RuntimeError::InvalidRate(eta));
    }
    let mut caps: Vec<Capabilities> = models.iter().map(|m| m.capabilities.clone()).collect();
    for _ in 0..rounds {
        caps = co_train_round(&caps, eta);
    }
    Ok(caps)
}

/// Publish each model's updated capabilities as a new version.
pub fn publish_co_trained(
    registry: &Registry,
    models: &[ModelManifest],
    caps: &[Capabilities],
    rounds: u32,
) -> Result<Vec<ModelManifest>, RuntimeError> {
    models
        .iter()
        .zip(caps)
        .map(|(m, c)| {
            let meta = ModelMeta {
                capabilities: c.clone(),
                cost_per_call: m.cost_per_call,
                latency_ms: m.latency_ms,
                designer_account: m.designer_account.clone(),
                env: m.env.clone(),
                changelog: format!("co-train r={rounds}"),
                metadata_only: m.size_bytes == 0,
            };
            Ok(registry.publish(&m.name, m.blob_hash, meta)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: f64, b: f64) -> Vec<ModelManifest> {
        vec![ModelManifest::synthetic("a", 1, &[("t", a)], 1, 1), ModelManifest::synthetic("b", 1, &[("t", b)], 1, 1)]
    }

    #[test]
    fn one_round() {
        let c = co_train(&pair(0.2, 0.8), 1, 0.1).unwrap();
        assert!((c[0]["t"] - 0.26).abs() < 1e-12);
        assert_eq!(c[1]["t"], 0.8);
    }

    #[test]
    fn equal_caps_unchanged() {
        let c = co_train(&pair(0.5, 0.5), 10, 0.1).unwrap();
        assert_eq!((c[0]["t"], c[1]["t"]), (0.5, 0.5));
    }

    #[test]
    fn closed_form_gap() {
        // The trailing model's gap shrinks by (1 - eta) each round.
        for eta in [0.1, 0.2, 0.5] {
            let c = co_train(&pair(0.2, 0.8), 100, eta).unwrap();
            let expect = 0.8 - 0.6 * (1.0 - eta).powi(100);
            assert!((c[0]["t"] - expect).abs() < 1e-12, "eta {eta}");
        }
    }

    #[test]
    fn missing_tags_are_zero() {
        let models = vec![
            ModelManifest::synthetic("a", 1, &[("t", 0.4)], 1, 1),
            ModelManifest::synthetic("b", 1, &[("u", 1.0)], 1, 1),
        ];
        let c = co_train(&models, 1, 0.5).unwrap();
        assert_eq!(c[0]["u"], 0.5);
        assert_eq!(c[1]["t"], 0.2);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(co_train(&pair(0.1, 0.2)[..1], 1, 0.1), Err(RuntimeError::TooFewModels(1))));
        assert!(matches!(co_train(&pair(0.1, 0.2), 1, 0.0), Err(RuntimeError::InvalidRate(_))));
        assert!(matches!(co_train(&pair(0.1, 0.2), 1, 1.5), Err(RuntimeError::InvalidRate(_))));
    }
}
