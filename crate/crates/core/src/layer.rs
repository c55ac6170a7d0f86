//! Identifies which inference a decoded output or graph comes from.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A patched layer `l` or the plain, unpatched inference.
///
/// Orders layers ascending with the inference last. Serialized as the layer
/// number or the string `"inference"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerTag {
    Layer(u32),
    Inference,
}

impl LayerTag {
    pub fn layer(self) -> Option<u32> {
        match self {
            LayerTag::Layer(l) => Some(l),
            LayerTag::Inference => None,
        }
    }
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerTag::Layer(l) => write!(f, "{l}"),
            LayerTag::Inference => f.write_str("inference"),
        }
    }
}

impl FromStr for LayerTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("inference") {
            return Ok(LayerTag::Inference);
        }
        s.parse()
            .map(LayerTag::Layer)
            .map_err(|_| format!("invalid layer {s:?}"))
    }
}

impl Serialize for LayerTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LayerTag::Layer(l) => s.serialize_u32(*l),
            LayerTag::Inference => s.serialize_str("inference"),
        }
    }
}

impl<'de> Deserialize<'de> for LayerTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(l) => Ok(LayerTag::Layer(l)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}
