//! Versioned JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub const MODEL_FORMAT: &str = "lyapinit-mlp";
pub const MODEL_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u64,
    #[serde(flatten)]
    params: MlpParams,
}

pub fn model_to_string(p: &MlpParams) -> Result<String> {
    p.validate()?;
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        params: p.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize model: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_str(text: &str) -> Result<MlpParams> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
    let format = value.get("format").and_then(|v| v.as_str());
    if format != Some(MODEL_FORMAT) {
        return Err(Error::Corrupt(format!(
            "expected format {MODEL_FORMAT:?}, found {format:?}"
        )));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt("missing model version".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))?;
    file.params
        .validate()
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(file.params)
}

/// Writes the model atomically.
pub fn save_model(p: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let text = model_to_string(p)?;
    write_atomic(path.as_ref(), |w| {
        use std::io::Write;
        w.write_all(text.as_bytes())?;
        Ok(())
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpParams> {
    let text = std::fs::read_to_string(path.as_ref())?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::{Axis, Roi};
    use crate::policy::{InputScaler, DEFAULT_LAYER_SIZES};

    fn model() -> MlpParams {
        MlpParams::init(&DEFAULT_LAYER_SIZES, 13)
            .unwrap()
            .with_input_scaler(InputScaler::from_roi(&Roi::default(), Axis::Y))
            .with_output_scale(30.0)
            .with_axis(Axis::Y)
    }

    #[test]
    fn save_load_is_bitwise_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let p = model();
        save_model(&p, &path).unwrap();
        let q = load_model(&path).unwrap();
        assert_eq!(p, q);
        let bits = |m: &MlpParams| m.params().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(q.axis(), Some(Axis::Y));
    }

    #[test]
    fn wrong_version_is_reported() {
        let text = model_to_string(&model())
            .unwrap()
            .replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(
            model_from_str(&text),
            Err(Error::Version {
                found: 7,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let text = model_to_string(&model()).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(model_from_str(cut), Err(Error::Corrupt(_))));
    }

    #[test]
    fn inconsistent_shapes_are_corrupt() {
        let mut v: serde_json::Value =
            serde_json::from_str(&model_to_string(&model()).unwrap()).unwrap();
        v["layers"][0]["biases"].as_array_mut().unwrap().pop();
        let text = serde_json::to_string(&v).unwrap();
        assert!(matches!(model_from_str(&text), Err(Error::Corrupt(_))));
    }
}
