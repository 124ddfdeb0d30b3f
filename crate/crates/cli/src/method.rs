use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A sampling method as named in configs and records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Method {
    pub kind: MethodKind,
    pub clip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Gauss,
    Jac,
    Fnpse,
    FnpseTamed,
    DetGef,
}

/// Step counts with a defined DDIM stochasticity.
pub const DDIM_STEPS: [usize; 4] = [50, 150, 400, 1000];

impl Method {
    pub const fn new(kind: MethodKind, clip: bool) -> Self {
        Self { kind, clip }
    }

    pub fn base_name(self) -> &'static str {
        match self.kind {
            MethodKind::Gauss => "GAUSS",
            MethodKind::Jac => "JAC",
            MethodKind::Fnpse => "FNPSE",
            MethodKind::FnpseTamed => "FNPSE-tamed",
            MethodKind::DetGef => "DET_GEF",
        }
    }

    /// Equivalent-time default: 1000 steps for GAUSS and DET_GEF, 400 otherwise.
    pub fn default_steps(self) -> usize {
        match self.kind {
            MethodKind::Gauss | MethodKind::DetGef => 1000,
            _ => 400,
        }
    }

    /// Why this method cannot run with `steps`, if it cannot.
    pub fn invalid_steps(self, steps: usize) -> Option<String> {
        if steps < 2 {
            return Some(format!("{self} needs at least 2 steps"));
        }
        match self.kind {
            MethodKind::Gauss | MethodKind::Jac if !DDIM_STEPS.contains(&steps) => Some(format!(
                "{self} uses DDIM, whose stochasticity is defined only for T in {DDIM_STEPS:?}"
            )),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base_name())?;
        if self.clip {
            f.write_str("-clip")?;
        }
        Ok(())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        let (base, clip) = match upper.strip_suffix("-CLIP") {
            Some(b) => (b, true),
            None => (upper.as_str(), false),
        };
        let kind = match base {
            "GAUSS" => MethodKind::Gauss,
            "JAC" => MethodKind::Jac,
            "FNPSE" | "LANGEVIN" => MethodKind::Fnpse,
            "FNPSE-TAMED" | "LANGEVIN-TAMED" => MethodKind::FnpseTamed,
            "DET_GEF" | "DET-GEF" => MethodKind::DetGef,
            _ => return Err(format!("unknown method '{s}'")),
        };
        Ok(Method { kind, clip })
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
