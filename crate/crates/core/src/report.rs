//! Output helpers shared by the JSON and CSV writers.

use serde::Serializer;

/// Writes infinities as the strings `"inf"` / `"-inf"`; JSON has no literal
/// for them.
pub fn serialize_extended_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

/// CSV cell for a float. Uses the shortest round-trip representation so
/// rereading the file recovers the exact value.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// Provenance comment placed on the first line of every CSV.
pub fn provenance_line(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash},seed={seed}\n")
}
