/// Parses a numeral token: plain integers ("2003"), decimals ("45.7") and
/// comma-grouped integers ("1,000"), each with an optional leading minus.
///
/// Units and percent signs are separate tokens and are never consumed here.
pub fn numeral_value(token: &str) -> Option<f64> {
    let body = token.strip_prefix('-').unwrap_or(token);
    if body.is_empty() {
        return None;
    }
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());

    let plain = if body.contains(',') {
        let mut groups = body.split(',');
        let head = groups.next()?;
        if !all_digits(head) || head.len() > 3 {
            return None;
        }
        let mut joined = head.to_string();
        for g in groups {
            if g.len() != 3 || !all_digits(g) {
                return None;
            }
            joined.push_str(g);
        }
        joined
    } else if let Some((int, frac)) = body.split_once('.') {
        if !all_digits(int) || !all_digits(frac) {
            return None;
        }
        body.to_string()
    } else if all_digits(body) {
        body.to_string()
    } else {
        return None;
    };

    let v: f64 = plain.parse().ok()?;
    Some(if token.starts_with('-') { -v } else { v })
}

pub fn is_numeral(token: &str) -> bool {
    numeral_value(token).is_some()
}

/// Order-of-magnitude bucket `floor(log10(max(|v|, 1)))`.
pub fn magnitude_bucket(v: f64) -> i32 {
    let a = v.abs().max(1.0);
    let mut b = a.log10().floor() as i32;
    // log10 can land just below an exact power of ten
    if 10f64.powi(b + 1) <= a {
        b += 1;
    } else if 10f64.powi(b) > a {
        b -= 1;
    }
    b
}
