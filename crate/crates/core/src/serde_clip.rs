//! `Option<(lo, hi)>` as either `[lo, hi]` or the string `"none"`, so an
//! absent box survives formats that cannot write null.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Range(f64, f64),
    Word(String),
}

pub fn serialize<S: Serializer>(v: &Option<(f64, f64)>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some((lo, hi)) => Repr::Range(*lo, *hi).serialize(s),
        None => Repr::Word("none".into()).serialize(s),
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<(f64, f64)>, D::Error> {
    match Repr::deserialize(d)? {
        Repr::Range(lo, hi) => Ok(Some((lo, hi))),
        Repr::Word(w) if w == "none" => Ok(None),
        Repr::Word(w) => Err(serde::de::Error::custom(format!("clip must be [lo, hi] or \"none\", got \"{w}\""))),
    }
}

#[cfg(test)]
mod tests {
    use crate::attacks::AttackSpec;

    #[test]
    fn absent_box_round_trips() {
        for clip in [None, Some((0.0, 1.0)), Some((-2.5, 3.0))] {
            let spec = AttackSpec { clip, ..AttackSpec::default() };
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<AttackSpec>(&json).unwrap(), spec);
        }
        assert!(serde_json::from_str::<AttackSpec>(r#"{"clip": "off"}"#).is_err());
        let partial: AttackSpec = serde_json::from_str(r#"{"epsilon": 0.5}"#).unwrap();
        assert_eq!(partial, AttackSpec { epsilon: 0.5, ..AttackSpec::default() });
    }
}
