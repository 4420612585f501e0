//! Documented CSV headers and a self-check over emitted files.

use std::path::Path;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy)]
pub struct Schema {
    pub file: &'static str,
    pub header: &'static [&'static str],
}

pub const TRACK: Schema = Schema {
    file: "track.csv",
    header: &[
        "t", "modality", "px", "py", "pz", "vx", "vy", "vz", "n_points", "f_HF", "f_MF", "lost",
    ],
};
pub const GROUND_TRUTH: Schema = Schema {
    file: "ground_truth.csv",
    header: &["t", "px", "py", "pz", "vx", "vy", "vz", "qx", "qy", "qyaw"],
};
pub const FRAMES: Schema = Schema {
    file: "frames.csv",
    header: &["modality", "t_start", "integration_time", "n_points"],
};
pub const SPACING: Schema = Schema {
    file: "spacing.csv",
    header: &["t", "modality", "f", "speed", "spacing", "expected", "n_points"],
};
pub const VOXELS_EXPECTED: Schema = Schema {
    file: "voxels_expected.csv",
    header: &["x", "y", "z"],
};
pub const VOXELS_OBSERVED: Schema = Schema {
    file: "voxels_observed.csv",
    header: &["x", "y", "z"],
};
pub const VOXELS: Schema = VOXELS_EXPECTED;
pub const CALIBRATION: Schema = Schema {
    file: "calibration.csv",
    header: &["d", "f", "mu", "sigma"],
};
pub const COMPARISON: Schema = Schema {
    file: "comparison.csv",
    header: &[
        "mode",
        "track_duration",
        "lost",
        "revolutions",
        "rmse_hf",
        "rmse_mf",
        "rmse_fused",
        "mean_error_fused",
        "miss_rate",
    ],
};

pub const SCHEMAS: [Schema; 8] = [
    TRACK,
    GROUND_TRUTH,
    FRAMES,
    SPACING,
    VOXELS_EXPECTED,
    VOXELS_OBSERVED,
    CALIBRATION,
    COMPARISON,
];

/// Checks the header and the field count of every record.
pub fn verify_file(path: &Path, schema: &Schema) -> CliResult<usize> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != schema.header {
        return Err(CliError::Schema(format!(
            "{}: header {:?} does not match {:?}",
            path.display(),
            header,
            schema.header
        )));
    }
    let mut n = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != schema.header.len() {
            return Err(CliError::Schema(format!(
                "{}: record {} has {} fields, expected {}",
                path.display(),
                n + 1,
                rec.len(),
                schema.header.len()
            )));
        }
        n += 1;
    }
    Ok(n)
}

/// Verifies every known CSV present in `dir`.
pub fn verify_dir(dir: &Path) -> CliResult<()> {
    for s in SCHEMAS {
        let p = dir.join(s.file);
        if p.exists() {
            verify_file(&p, &s)?;
        }
    }
    Ok(())
}
