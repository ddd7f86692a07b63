//! Small numerical helpers shared by the solvers.

/// `log Σ exp(xᵢ)`, returning `-∞` for an empty or all-`-∞` input.
pub fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `c·x` for the linear pairing of a cost with a nonnegative weight, with the
/// measure-theoretic convention `∞ · 0 = 0`.
pub fn pair(c: f64, w: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        c * w
    }
}

/// Serde adapter for extended reals: finite values are plain JSON numbers,
/// `±∞` and NaN become the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod extended {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not an extended real: {other:?}"))),
            },
        }
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct W(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let w: Vec<W> = v.iter().map(|&x| W(x)).collect();
            w.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<W>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_handles_neg_infinity() {
        let v = [f64::NEG_INFINITY, 0.0, 0.0];
        assert!((logsumexp(v.iter().copied()) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(logsumexp([f64::NEG_INFINITY].iter().copied()), f64::NEG_INFINITY);
        assert_eq!(logsumexp(std::iter::empty()), f64::NEG_INFINITY);
    }

    #[test]
    fn lse_is_stable_for_large_arguments() {
        let v = [1000.0, 1000.0];
        assert!((logsumexp(v.iter().copied()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn extended_roundtrip() {
        #[derive(serde::Serialize, serde::Deserialize)]
        struct T(#[serde(with = "extended")] f64);
        for v in [1.5, f64::INFINITY, f64::NEG_INFINITY] {
            let s = serde_json::to_string(&T(v)).unwrap();
            let back: T = serde_json::from_str(&s).unwrap();
            assert_eq!(back.0, v);
        }
    }
}
