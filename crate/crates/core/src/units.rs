//! Unit conversion table and bounds checks for numeric CDEs.

use thiserror::Error;

use crate::registry::CdeDefinition;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("unknown unit {0:?}")]
    Unknown(String),
    #[error("cannot convert {from} to {to}")]
    Incompatible { from: String, to: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Volume,
}

/// (symbol, dimension, size in the dimension's base unit: mm or ml)
const TABLE: &[(&str, Dimension, u32)] = &[
    ("mm", Dimension::Length, 1),
    ("cm", Dimension::Length, 10),
    ("m", Dimension::Length, 1000),
    ("ml", Dimension::Volume, 1),
    ("cc", Dimension::Volume, 1),
    ("l", Dimension::Volume, 1000),
];

const ALIASES: &[(&str, &str)] = &[
    ("millimeter", "mm"),
    ("millimeters", "mm"),
    ("millimetre", "mm"),
    ("centimeter", "cm"),
    ("centimeters", "cm"),
    ("centimetre", "cm"),
    ("meter", "m"),
    ("meters", "m"),
    ("milliliter", "ml"),
    ("milliliters", "ml"),
    ("millilitre", "ml"),
    ("liter", "l"),
    ("liters", "l"),
    ("litre", "l"),
];

/// Canonical symbol for a unit spelling, if known.
pub fn normalize_unit(unit: &str) -> Option<&'static str> {
    let u = unit.trim().to_lowercase();
    let u = ALIASES.iter().find(|(a, _)| *a == u).map_or(u.as_str(), |(_, s)| *s);
    TABLE.iter().find(|(s, _, _)| *s == u).map(|(s, _, _)| *s)
}

pub fn dimension(unit: &str) -> Option<Dimension> {
    let s = normalize_unit(unit)?;
    TABLE.iter().find(|(t, _, _)| *t == s).map(|(_, d, _)| *d)
}

fn factor(sym: &str) -> u32 {
    TABLE.iter().find(|(t, _, _)| *t == sym).map(|(_, _, f)| *f).unwrap()
}

/// Exact linear conversion; integer ratios are applied by a single multiply or divide.
pub fn convert_unit(value: f64, unit: &str, canonical: &str) -> Result<f64, UnitError> {
    let from = normalize_unit(unit).ok_or_else(|| UnitError::Unknown(unit.to_string()))?;
    let to = normalize_unit(canonical).ok_or_else(|| UnitError::Unknown(canonical.to_string()))?;
    if dimension(from) != dimension(to) {
        return Err(UnitError::Incompatible { from: from.into(), to: to.into() });
    }
    let (f, t) = (factor(from), factor(to));
    Ok(if f == t {
        value
    } else if f > t {
        value * (f / t) as f64
    } else {
        value / (t / f) as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsCheck {
    Accepted,
    Rejected,
}

/// Inclusive bounds check; CDEs without bounds reject everything.
pub fn validate_bounds(value: f64, cde: &CdeDefinition) -> BoundsCheck {
    match cde.bounds {
        Some([lo, hi]) if value.is_finite() && lo <= value && value <= hi => BoundsCheck::Accepted,
        _ => BoundsCheck::Rejected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;

    #[test]
    fn conversions() {
        assert_eq!(convert_unit(1.2, "cm", "mm").unwrap(), 12.0);
        assert_eq!(convert_unit(3.0, "mm", "mm").unwrap(), 3.0);
        assert_eq!(convert_unit(0.5, "l", "ml").unwrap(), 500.0);
        assert_eq!(convert_unit(25.0, "cc", "ml").unwrap(), 25.0);
        assert_eq!(convert_unit(4.0, "millimeters", "cm").unwrap(), 0.4);
        assert_eq!(convert_unit(1.0, "furlong", "mm"), Err(UnitError::Unknown("furlong".into())));
        assert!(matches!(convert_unit(1.0, "ml", "mm"), Err(UnitError::Incompatible { .. })));
    }

    #[test]
    fn bounds() {
        let r = Registry::chest_xr();
        let size = r.cde("RDE1302").unwrap();
        assert_eq!(validate_bounds(3.0, size), BoundsCheck::Accepted);
        assert_eq!(validate_bounds(500.0, size), BoundsCheck::Accepted);
        assert_eq!(validate_bounds(-1.0, size), BoundsCheck::Rejected);
        assert_eq!(validate_bounds(501.0, size), BoundsCheck::Rejected);
        assert_eq!(validate_bounds(f64::NAN, size), BoundsCheck::Rejected);
    }
}
