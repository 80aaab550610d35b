use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ConfigError, Environment};
use crate::atropine::{atropine_env, AtropineConfig};
use crate::beer::{beer_env, BeerConfig};
use crate::mab::{mab_env, MabConfig};
use crate::pensim::{pensim_env, PenSimConfig};
use crate::reactor::{reactor_env, ReactorConfig};

/// The five bundled environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Reactor,
    Atropine,
    Mab,
    Pensim,
    Beer,
}

impl EnvKind {
    pub const ALL: [EnvKind; 5] =
        [EnvKind::Reactor, EnvKind::Atropine, EnvKind::Mab, EnvKind::Pensim, EnvKind::Beer];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Reactor => "reactor",
            EnvKind::Atropine => "atropine",
            EnvKind::Mab => "mab",
            EnvKind::Pensim => "pensim",
            EnvKind::Beer => "beer",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::UnknownEnv(s.to_string()))
    }
}

/// Builds an environment, applying an optional JSON override of its config.
pub fn make_env(
    kind: EnvKind,
    config: Option<&serde_json::Value>,
) -> Result<Box<dyn Environment>, ConfigError> {
    Ok(match kind {
        EnvKind::Reactor => Box::new(reactor_env(ReactorConfig::from_json(config)?)?),
        EnvKind::Atropine => Box::new(atropine_env(AtropineConfig::from_json(config)?)?),
        EnvKind::Mab => Box::new(mab_env(MabConfig::from_json(config)?)?),
        EnvKind::Pensim => Box::new(pensim_env(PenSimConfig::from_json(config)?)?),
        EnvKind::Beer => Box::new(beer_env(BeerConfig::from_json(config)?)?),
    })
}
