use std::path::Path;

use super::{DecoderParams, EncoderParams};
use crate::archive::Archive;
use crate::dataio::Normalizer;
use crate::error::{Error, Result};
use crate::numerics::ParamSet;

const NORM_MEAN: &str = "normalizer.mean";
const NORM_STD: &str = "normalizer.std";

/// Everything needed to embed new data with a trained encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub normalizer: Normalizer,
    pub config_digest: [u8; 32],
}

impl Checkpoint {
    /// False when the checkpoint was produced under a different config. This
    /// is a warning condition only: transfer deliberately crosses configs.
    pub fn digest_matches(&self, expected: &[u8; 32]) -> bool {
        &self.config_digest == expected
    }
}

pub fn save_checkpoint(
    path: &Path,
    encoder: &EncoderParams,
    decoder: &DecoderParams,
    normalizer: &Normalizer,
    config_digest: [u8; 32],
) -> Result<()> {
    let mut archive = Archive::new(config_digest);
    for (name, p) in encoder.params.iter().chain(decoder.params.iter()) {
        archive.push(name, p.value.clone())?;
    }
    let (mean, std) = normalizer.to_tensors();
    archive.push(NORM_MEAN, mean)?;
    archive.push(NORM_STD, std)?;
    archive.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut archive = Archive::load(path)?;
    let what = path.display().to_string();
    let bad = |e: Error| match e {
        Error::Load { .. } => e,
        other => Error::Load {
            what: what.clone(),
            reason: other.to_string(),
        },
    };
    let mean = archive.take(NORM_MEAN).map_err(bad)?;
    let std = archive.take(NORM_STD).map_err(bad)?;
    let normalizer = Normalizer::from_tensors(&mean, &std).map_err(bad)?;
    let digest = archive.digest;
    let mut enc = ParamSet::new();
    let mut dec = ParamSet::new();
    for (name, t) in archive.into_tensors() {
        let set = if name.starts_with("enc.") {
            &mut enc
        } else if name.starts_with("dec.") {
            &mut dec
        } else {
            return Err(bad(Error::contract(format!("unexpected tensor `{name}`"))));
        };
        set.insert(name, t).map_err(bad)?;
    }
    Ok(Checkpoint {
        encoder: EncoderParams::from_params(enc).map_err(bad)?,
        decoder: DecoderParams::from_params(dec).map_err(bad)?,
        normalizer,
        config_digest: digest,
    })
}
