//! Optional TOML defaults. Each subcommand reads its own table; a flag given
//! on the command line always wins over the file.
//!
//! ```toml
//! [eval]
//! iou_threshold = 0.3
//! fpps = [0.25, 0.5, 1.0, 2.0]
//!
//! [gt_extract]
//! connectivity = 26
//! min_voxels = 1
//!
//! [detect_baseline]
//! threshold = 150.0
//! min_voxels = 1
//! nms_iou = 0.5
//!
//! [preprocess]
//! spacing = [1.0, 1.0, 1.0]
//!
//! [phantom]
//! seed = 42
//! n_lesions = 3
//! ```

use std::fs;
use std::path::Path;

use lesionbox::phantom::PhantomSpec;
use lesionbox::Connectivity;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub eval: EvalConfig,
    pub gt_extract: GtExtractConfig,
    pub detect_baseline: DetectConfig,
    pub preprocess: PreprocessConfig,
    pub phantom: Option<PhantomSpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: Option<f64>,
    pub fpps: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GtExtractConfig {
    pub connectivity: Option<Connectivity>,
    pub min_voxels: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub threshold: Option<f64>,
    pub min_voxels: Option<usize>,
    pub nms_iou: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub spacing: Option<[f64; 3]>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables() {
        let c: Config =
            toml::from_str("[eval]\niou_threshold = 0.5\n[phantom]\nseed = 9\n").unwrap();
        assert_eq!(c.eval.iou_threshold, Some(0.5));
        assert_eq!(c.eval.fpps, None);
        let p = c.phantom.unwrap();
        assert_eq!(p.seed, 9);
        assert_eq!(p.dims, PhantomSpec::default().dims);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_connectivity() {
        assert!(toml::from_str::<Config>("[eval]\niou = 0.5\n").is_err());
        assert!(toml::from_str::<Config>("[gt_extract]\nconnectivity = 18\n").is_err());
        let c: Config = toml::from_str("[gt_extract]\nconnectivity = 6\n").unwrap();
        assert_eq!(c.gt_extract.connectivity, Some(Connectivity::Six));
    }
}
