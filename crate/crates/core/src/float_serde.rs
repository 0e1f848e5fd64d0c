//! JSON encoding for floats that may be infinite.
//!
//! serde_json maps non-finite floats to `null`; the saturating "certain
//! change" sentinel must survive a round trip, so these helpers write
//! infinities as the strings `"inf"` / `"-inf"` and accept either form.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Str(String),
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("nan")
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(t) => match t.as_str() {
            "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
            "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
            "nan" | "NaN" => Ok(f64::NAN),
            other => other
                .parse()
                .map_err(|_| serde::de::Error::custom(format!("bad float {other:?}"))),
        },
    }
}

/// Same encoding for `Option<f64>`.
pub mod opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => super::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Repr>::deserialize(d)?
            .map(|r| match r {
                Repr::Num(v) => Ok(v),
                Repr::Str(t) => match t.as_str() {
                    "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                    "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                    "nan" | "NaN" => Ok(f64::NAN),
                    other => other
                        .parse()
                        .map_err(|_| serde::de::Error::custom(format!("bad float {other:?}"))),
                },
            })
            .transpose()
    }
}
