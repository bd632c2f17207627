use std::io::{self, Write};

/// 17 significant digits, enough for an exact `f64` round trip.
pub(crate) fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn write_row(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    let line: Vec<String> = values.into_iter().map(num).collect();
    writeln!(w, "{}", line.join(","))
}

#[cfg(test)]
mod tests {
    #[test]
    fn num_round_trips() {
        for x in [0.1, -3.0000707482618822, 1e-300, std::f64::consts::PI, 123456789.123] {
            assert_eq!(super::num(x).parse::<f64>().unwrap(), x);
        }
    }
}
