//! Experiment presets shipped with the binary.

use std::path::Path;

use crate::error::CliError;

macro_rules! preset {
    ($name:literal) => {
        ($name, include_str!(concat!("../presets/", $name)))
    };
}

/// Built-in presets in run order.
pub const BUILTIN: &[(&str, &str)] = &[
    preset!("asymptotics-circle-constant.json"),
    preset!("asymptotics-circle-cos.json"),
    preset!("asymptotics-sphere-constant.json"),
    preset!("converge-circle-affine.json"),
    preset!("converge-circle-diagonal-self.json"),
    preset!("converge-circle-identity.json"),
    preset!("density-check-circle.json"),
    preset!("mc-fdd-circle-k1.json"),
    preset!("mc-fdd-circle-k2.json"),
    preset!("normalized-circle-constant.json"),
    preset!("normalized-circle-cos.json"),
];

pub fn builtin() -> Vec<(String, String)> {
    BUILTIN
        .iter()
        .map(|(name, json)| (name.to_string(), json.to_string()))
        .collect()
}

/// Every `*.json` file directly inside `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            files.push((name, text));
        }
    }
    files.sort();
    Ok(files)
}
