//! Model declarations in the timed-automata declaration syntax:
//!
//! ```text
//! const double period = 5088.0;
//! const double drift = -0.0;
//!
//! double base = -3.6508;
//! double a[4] = { -0.608, 0.205, 0.0744, -0.0764 };
//! double b[4] = { 2.5745, -0.414, -0.0149, 0.0096 };
//! ```
//!
//! Unrelated declarations (channels, clocks, derived expressions) are skipped.

use thiserror::Error;

use crate::motion::{MotionModel1D, DEFAULT_DT_MS, HARMONICS};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeclarationError {
    #[error("missing declaration of `{0}`")]
    Missing(&'static str),
    #[error("line {line}: malformed number {text:?} for `{name}`")]
    Number {
        line: usize,
        name: String,
        text: String,
    },
    #[error("line {line}: `{name}` must have {expected} elements, found {found}")]
    Arity {
        line: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: `{name}` declared twice")]
    Duplicate { line: usize, name: String },
    #[error("line {line}: cannot read declaration of `{name}`")]
    Syntax { line: usize, name: String },
    #[error("declared values do not form a valid model: {0}")]
    Invalid(String),
    #[error("cannot write non-finite value for `{0}`")]
    NonFinite(&'static str),
}

#[derive(Default)]
struct Seen<T> {
    accuracy: Option<T>,
    period: Option<T>,
    drift: Option<T>,
    base: Option<T>,
    dt: Option<T>,
    a: Option<[T; HARMONICS]>,
    b: Option<[T; HARMONICS]>,
}

fn number<T: Scalar>(text: &str, line: usize, name: &str) -> Result<T, DeclarationError> {
    text.trim().parse::<T>().map_err(|_| DeclarationError::Number {
        line,
        name: name.to_string(),
        text: text.trim().to_string(),
    })
}

fn store<V>(slot: &mut Option<V>, v: V, line: usize, name: &str) -> Result<(), DeclarationError> {
    if slot.is_some() {
        return Err(DeclarationError::Duplicate {
            line,
            name: name.to_string(),
        });
    }
    *slot = Some(v);
    Ok(())
}

/// Reads a model from declaration text. `accuracy` defaults to 100 and the
/// step to 38 ms (or the `Timer(..)` rate, when present).
pub fn parse_declarations<T: Scalar>(text: &str) -> Result<MotionModel1D<T>, DeclarationError> {
    let mut seen = Seen::<T>::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let code = raw.split("//").next().unwrap_or("");
        for stmt in code.split(';') {
            let stmt = stmt.trim();
            if stmt.is_empty() {
                continue;
            }
            parse_statement(stmt, line, &mut seen)?;
        }
    }
    let period = seen.period.ok_or(DeclarationError::Missing("period"))?;
    let drift = seen.drift.ok_or(DeclarationError::Missing("drift"))?;
    let base = seen.base.ok_or(DeclarationError::Missing("base"))?;
    let a = seen.a.ok_or(DeclarationError::Missing("a"))?;
    let b = seen.b.ok_or(DeclarationError::Missing("b"))?;
    let model = MotionModel1D::new(period, drift, base, a, b)
        .and_then(|m| m.with_accuracy(seen.accuracy.unwrap_or_else(|| T::lit(100.0))))
        .and_then(|m| m.with_dt(seen.dt.unwrap_or_else(|| T::lit(DEFAULT_DT_MS))))
        .map_err(|e| DeclarationError::Invalid(e.to_string()))?;
    Ok(model)
}

fn parse_statement<T: Scalar>(stmt: &str, line: usize, seen: &mut Seen<T>) -> Result<(), DeclarationError> {
    // `Clock = Timer(38)` sets the step
    if let Some((_, rhs)) = stmt.split_once('=') {
        if let Some(arg) = rhs.trim().strip_prefix("Timer(").and_then(|r| r.strip_suffix(')')) {
            let dt = number(arg, line, "Timer")?;
            return store(&mut seen.dt, dt, line, "Timer");
        }
    }
    let rest = stmt.strip_prefix("const ").unwrap_or(stmt).trim_start();
    let Some(rest) = rest.strip_prefix("double ") else {
        return Ok(());
    };
    let (lhs, rhs) = match rest.split_once('=') {
        Some((l, r)) => (l.trim(), Some(r.trim())),
        None => (rest.trim(), None),
    };
    if let Some((name, dim)) = lhs.split_once('[') {
        let name = name.trim();
        let target = match name {
            "a" => &mut seen.a,
            "b" => &mut seen.b,
            _ => return Ok(()),
        };
        let syntax = || DeclarationError::Syntax {
            line,
            name: name.to_string(),
        };
        let declared: usize = dim
            .trim()
            .strip_suffix(']')
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(syntax)?;
        let arity_err = |found| DeclarationError::Arity {
            line,
            name: name.to_string(),
            expected: HARMONICS,
            found,
        };
        if declared != HARMONICS {
            return Err(arity_err(declared));
        }
        let body = rhs
            .and_then(|r| r.strip_prefix('{'))
            .and_then(|r| r.trim_end().strip_suffix('}'))
            .ok_or_else(syntax)?;
        let values: Vec<&str> = body.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if values.len() != HARMONICS {
            return Err(arity_err(values.len()));
        }
        let mut arr = [T::zero(); HARMONICS];
        for (slot, text) in arr.iter_mut().zip(values) {
            *slot = number(text, line, name)?;
        }
        return store(target, arr, line, name);
    }
    let target = match lhs {
        "accuracy" => &mut seen.accuracy,
        "period" => &mut seen.period,
        "drift" => &mut seen.drift,
        "base" => &mut seen.base,
        "dt" => &mut seen.dt,
        _ => return Ok(()),
    };
    let Some(rhs) = rhs else {
        return Err(DeclarationError::Syntax {
            line,
            name: lhs.to_string(),
        });
    };
    let v = number(rhs, line, lhs)?;
    store(target, v, line, lhs)
}

/// Canonical declaration text for `model`; parses back to identical values.
pub fn write_declarations<T: Scalar>(model: &MotionModel1D<T>) -> Result<String, DeclarationError> {
    let scalars = [
        ("accuracy", model.accuracy),
        ("dt", model.dt),
        ("period", model.period),
        ("drift", model.drift),
        ("base", model.base),
    ];
    for (name, v) in scalars {
        if !v.is_finite() {
            return Err(DeclarationError::NonFinite(name));
        }
    }
    if model.a.iter().any(|v| !v.is_finite()) {
        return Err(DeclarationError::NonFinite("a"));
    }
    if model.b.iter().any(|v| !v.is_finite()) {
        return Err(DeclarationError::NonFinite("b"));
    }
    let list = |vs: &[T; HARMONICS]| {
        vs.iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Ok(format!(
        "const double accuracy = {:?};\n\
         const double dt = {:?};\n\
         \n\
         const double period = {:?};\n\
         const double drift = {:?};\n\
         \n\
         double base = {:?};\n\
         double a[4] = {{ {} }};\n\
         double b[4] = {{ {} }};\n",
        model.accuracy,
        model.dt,
        model.period,
        model.drift,
        model.base,
        list(&model.a),
        list(&model.b),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BREATHING_X: &str = "const double period = 5088.0;
const double drift = -0.0;

double base = -3.6508;
double a[4] = { -0.608, 0.205, 0.0744, -0.0764 };
double b[4] = { 2.5745, -0.414, -0.0149, 0.0096 };
";

    const GLOBAL_DECLARATIONS: &str = "const double accuracy = 100.0;

const double period = 3469.0;
const double drift = 0.0;

double base = 2.5019;
double a[4] = { -0.1959, 0.0295, -0.0022, -0.0169 };
double b[4] = { -0.4023, 0.0294, 0.033, 0.013 };

double v[4];
double result;

double time;
broadcast chan step;

double frequency = 2 * 3.14159265358979323846 / period;
";

    #[test]
    fn reads_x_axis_block() {
        let m: MotionModel1D<f64> = parse_declarations(BREATHING_X).unwrap();
        assert_eq!(m.period, 5088.0);
        assert_eq!(m.base, -3.6508);
        assert_eq!(m.a[0], -0.608);
        assert_eq!(m.b[0], 2.5745);
        assert!(m.drift == 0.0 && m.drift.is_sign_negative());
        assert_eq!(m.accuracy, 100.0);
        assert_eq!(m.dt, 38.0);
    }

    #[test]
    fn reads_global_block_and_skips_the_rest() {
        let m: MotionModel1D<f64> = parse_declarations(GLOBAL_DECLARATIONS).unwrap();
        assert_eq!(m.period, 3469.0);
        assert_eq!(m.base, 2.5019);
        assert_eq!(m.accuracy, 100.0);
        assert_eq!(m.b, [-0.4023, 0.0294, 0.033, 0.013]);
    }

    #[test]
    fn timer_sets_step() {
        let text = format!("{BREATHING_X}Clock = Timer(40);\n");
        let m: MotionModel1D<f64> = parse_declarations(&text).unwrap();
        assert_eq!(m.dt, 40.0);
    }

    #[test]
    fn arity_error_names_array() {
        let bad = BREATHING_X.replace("double a[4] = { -0.608, 0.205, 0.0744, -0.0764 }", "double a[3] = { -0.608, 0.205, 0.0744 }");
        match parse_declarations::<f64>(&bad) {
            Err(DeclarationError::Arity { name, line, found, .. }) => {
                assert_eq!((name.as_str(), line, found), ("a", 5, 3));
            }
            other => panic!("{other:?}"),
        }
        let short = BREATHING_X.replace("{ 2.5745, -0.414, -0.0149, 0.0096 }", "{ 2.5745, -0.414 }");
        assert!(matches!(
            parse_declarations::<f64>(&short),
            Err(DeclarationError::Arity { found: 2, .. })
        ));
    }

    #[test]
    fn other_errors() {
        let missing = BREATHING_X.replace("double base = -3.6508;", "");
        assert_eq!(parse_declarations::<f64>(&missing), Err(DeclarationError::Missing("base")));
        let bad = BREATHING_X.replace("5088.0", "50x8");
        assert!(matches!(
            parse_declarations::<f64>(&bad),
            Err(DeclarationError::Number { line: 1, .. })
        ));
        let dup = format!("{BREATHING_X}double base = 1.0;\n");
        assert!(matches!(
            parse_declarations::<f64>(&dup),
            Err(DeclarationError::Duplicate { line: 7, .. })
        ));
        let mut m: MotionModel1D<f64> = parse_declarations(BREATHING_X).unwrap();
        m.base = f64::NAN;
        assert_eq!(write_declarations(&m), Err(DeclarationError::NonFinite("base")));
    }

    #[test]
    fn canonical_text_round_trips() {
        let m: MotionModel1D<f64> = parse_declarations(BREATHING_X).unwrap();
        let text = write_declarations(&m).unwrap();
        let back: MotionModel1D<f64> = parse_declarations(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(write_declarations(&back).unwrap(), text);
        assert!(text.contains("double a[4] = { -0.608, 0.205, 0.0744, -0.0764 };"));
        assert!(text.contains("const double drift = -0.0;"));
    }

    #[test]
    fn single_precision_round_trip() {
        let m: MotionModel1D<f32> = parse_declarations(BREATHING_X).unwrap();
        let back: MotionModel1D<f32> = parse_declarations(&write_declarations(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            period in 1e-3..1e7f64,
            drift in finite(),
            base in finite(),
            a in prop::array::uniform4(finite()),
            b in prop::array::uniform4(finite()),
            accuracy in 0.0..=100.0f64,
        ) {
            let m = MotionModel1D::new(period, drift, base, a, b).unwrap().with_accuracy(accuracy).unwrap();
            let back: MotionModel1D<f64> = parse_declarations(&write_declarations(&m).unwrap()).unwrap();
            prop_assert_eq!(back.period.to_bits(), m.period.to_bits());
            prop_assert_eq!(back.drift.to_bits(), m.drift.to_bits());
            prop_assert_eq!(back.base.to_bits(), m.base.to_bits());
            prop_assert_eq!(back.accuracy.to_bits(), m.accuracy.to_bits());
            for k in 0..4 {
                prop_assert_eq!(back.a[k].to_bits(), m.a[k].to_bits());
                prop_assert_eq!(back.b[k].to_bits(), m.b[k].to_bits());
            }
        }
    }
}
