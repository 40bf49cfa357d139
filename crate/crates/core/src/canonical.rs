//! Byte-stable JSON: sorted object keys and every float written with nine
//! significant digits. Identical values always serialize to identical bytes.

use serde::Serialize;
use serde_json::Value;

pub fn to_value<T: Serialize>(value: &T) -> serde_json::Result<Value> {
    serde_json::to_value(value)
}

/// Single-line canonical JSON (used for JSON-lines files).
pub fn to_line<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut out = String::new();
    write_value(&to_value(value)?, None, 0, &mut out);
    Ok(out)
}

/// Indented canonical JSON with a trailing newline.
pub fn to_pretty<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut out = String::new();
    write_value(&to_value(value)?, Some(2), 0, &mut out);
    out.push('\n');
    Ok(out)
}

pub fn format_float(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return "0.0".to_owned();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let mut digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    while digits.len() > 1 && digits.ends_with('0') {
        digits.pop();
    }
    let sign = if negative { "-" } else { "" };
    if !(-7..16).contains(&exp) {
        let (head, tail) = digits.split_at(1);
        let tail = if tail.is_empty() { "0" } else { tail };
        return format!("{sign}{head}.{tail}e{exp}");
    }
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{int}.{frac}")
    };
    format!("{sign}{body}")
}

fn write_value(v: &Value, indent: Option<usize>, depth: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_u64() || n.is_i64() {
                out.push_str(&n.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(0.0)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serialization")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(indent, depth + 1, out);
                write_value(item, indent, depth + 1, out);
            }
            newline(indent, depth, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(indent, depth + 1, out);
                out.push_str(&serde_json::to_string(key).expect("key serialization"));
                out.push(':');
                if indent.is_some() {
                    out.push(' ');
                }
                write_value(&map[key], indent, depth + 1, out);
            }
            newline(indent, depth, out);
            out.push('}');
        }
    }
}

fn newline(indent: Option<usize>, depth: usize, out: &mut String) {
    if let Some(width) = indent {
        out.push('\n');
        out.push_str(&" ".repeat(width * depth));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(0.0), "0.0");
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(0.95), "0.95");
        assert_eq!(format_float(2.0 / 3.0), "0.666666667");
        assert_eq!(format_float(-0.125), "-0.125");
        assert_eq!(format_float(1234.5), "1234.5");
        assert_eq!(format_float(1e-9), "1.0e-9");
        assert_eq!(format_float(0.1f32 as f64), "0.100000001");
    }

    #[test]
    fn keys_are_sorted() {
        let v = json!({"b": 1, "a": {"d": [1.5, "x"], "c": null}});
        assert_eq!(to_line(&v).unwrap(), r#"{"a":{"c":null,"d":[1.5,"x"]},"b":1}"#);
    }

    proptest! {
        #[test]
        fn f32_values_survive_nine_digits(x in proptest::num::f32::NORMAL) {
            let text = format_float(x as f64);
            let back: f32 = text.parse().unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn short_decimals_survive(x in -1_000_000i64..1_000_000, scale in 0u32..4) {
            let v = x as f64 / 10f64.powi(scale as i32);
            let back: f64 = format_float(v).parse().unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
