//! `session.json`: the out-of-band parameters a decoder needs besides the
//! packets (pixel geometry, codec settings, custom matrices).

use std::fs;
use std::path::Path;

use resicomp::context_modes::ModeKind;
use resicomp::pipeline::PipelineConfig;
use resicomp::token_codec::{CodecConfig, Geometry};
use serde::{Deserialize, Serialize};

use crate::config::{build_mode, parse_matrix, parse_mode};
use crate::error::{CliError, CliResult};

pub const FILE_NAME: &str = "session.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub version: u32,
    /// Mode name as printed, e.g. `LC`, `MDC(2)`, `CUSTOM`.
    pub mode: String,
    /// Rows of `0`/`1`, present for `CUSTOM` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<String>,
    pub slices: usize,
    pub beta_milli: u16,
    pub plan_seed: u64,
    pub image_id: u64,
    pub channels: usize,
    pub quality: f64,
    pub clamp: i32,
    pub height: usize,
    pub width: usize,
    pub planes: usize,
    /// Packet file names in slice order.
    pub packets: Vec<String>,
}

pub fn packet_name(slice: usize) -> String {
    format!("packet_{slice:03}.bin")
}

impl SessionFile {
    pub fn new(config: &PipelineConfig, geometry: Geometry) -> Self {
        let kind = config.mode.kind();
        let matrix =
            (kind == ModeKind::Custom).then(|| config.mode.render().trim_end().replace('\n', ";"));
        SessionFile {
            version: FORMAT_VERSION,
            mode: kind.to_string(),
            matrix,
            slices: config.slices(),
            beta_milli: config.beta_milli,
            plan_seed: config.plan_seed,
            image_id: config.image_id,
            channels: config.codec.channels,
            quality: config.codec.quality,
            clamp: config.codec.clamp,
            height: geometry.height,
            width: geometry.width,
            planes: geometry.planes,
            packets: (0..config.slices()).map(packet_name).collect(),
        }
    }

    pub fn config(&self) -> CliResult<PipelineConfig> {
        let kind = parse_mode(&self.mode, None, None)?;
        let matrix = self.matrix.as_deref().map(parse_matrix).transpose()?;
        let mode = build_mode(kind, self.slices, matrix.as_deref())?;
        let mut config = PipelineConfig::with_mode(mode);
        config.beta_milli = self.beta_milli;
        config.plan_seed = self.plan_seed;
        config.image_id = self.image_id;
        config.codec = CodecConfig {
            channels: self.channels,
            quality: self.quality,
            clamp: self.clamp,
        };
        config.codec.validate()?;
        Ok(config)
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            height: self.height,
            width: self.width,
            planes: self.planes,
        }
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let file: SessionFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if file.version != FORMAT_VERSION {
            return Err(CliError::Validation(format!(
                "{}: unsupported session version {}",
                path.display(),
                file.version
            )));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("plain data serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
