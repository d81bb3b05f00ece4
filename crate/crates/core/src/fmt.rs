//! Float formatting shared by every output file.
//!
//! All floats are written with 17 significant digits so that parsing the
//! text gives back the exact same `f64`. Non-finite values become `null`
//! in JSON and `NaN`/`inf` in CSV.

use serde::Serializer;
use serde_json::value::RawValue;

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn raw_json(v: f64) -> Box<RawValue> {
    let text = if v.is_finite() {
        fmt_f64(v)
    } else {
        "null".to_string()
    };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

/// `serialize_with` helper emitting the 17-digit form as a JSON number.
pub fn ser_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&raw_json(*v), s)
}

pub fn ser_opt_f64<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => ser_f64(v, s),
        None => s.serialize_none(),
    }
}

pub fn ser_vec_f64<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&raw_json(*x))?;
    }
    seq.end()
}
