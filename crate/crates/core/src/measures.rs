//! Occupational measures as finite atom sets on `U x Y_z`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fmt::write_row;
use crate::models::ModelSpec;
use crate::orbits::PeriodicOrbit;

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupationalMeasure {
    pub level: Vec<f64>,
    pub atoms: Vec<Atom>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFunctionals {
    /// Averaged drift of the observable.
    pub h_bar: Vec<f64>,
    /// Averaged running cost.
    pub r_bar: f64,
}

impl OccupationalMeasure {
    /// Checks normalization and that every atom lies on the level set.
    pub fn new(model: &ModelSpec, level: Vec<f64>, atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptySamples);
        }
        if atoms.iter().any(|a| !(a.weight >= 0.0)) {
            return Err(Error::contract("atom weights must be non-negative"));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("atom weights sum to {total}, not 1")));
        }
        for a in &atoms {
            model.check_control(&a.u)?;
            let z = model.observable(&a.y);
            for (zi, li) in z.iter().zip(&level) {
                if (zi - li).abs() > 1e-6 {
                    return Err(Error::contract(format!("atom at {:?} has F = {zi}, level is {li}", a.y)));
                }
            }
        }
        Ok(OccupationalMeasure { level, atoms })
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `theta * a + (1 - theta) * b` on a common level.
    pub fn mixture(a: &Self, b: &Self, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::contract(format!("mixture weight {theta} outside [0, 1]")));
        }
        if a.level.iter().zip(&b.level).any(|(x, y)| (x - y).abs() > 1e-6) {
            return Err(Error::contract("mixture of measures on different levels"));
        }
        let scale = |m: &Self, w: f64| -> Vec<Atom> {
            m.atoms.iter().map(|at| Atom { weight: at.weight * w, u: at.u.clone(), y: at.y.clone() }).collect()
        };
        let mut atoms = scale(a, theta);
        atoms.extend(scale(b, 1.0 - theta));
        Ok(OccupationalMeasure { level: a.level.clone(), atoms })
    }

    /// Header `weight,u1..udu,y1..ym`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let du = self.atoms.first().map_or(0, |a| a.u.len());
        let m = self.atoms.first().map_or(0, |a| a.y.len());
        let mut head = vec!["weight".to_string()];
        head.extend((1..=du).map(|i| format!("u{i}")));
        head.extend((1..=m).map(|i| format!("y{i}")));
        writeln!(w, "{}", head.join(","))?;
        for a in &self.atoms {
            write_row(w, std::iter::once(a.weight).chain(a.u.iter().copied()).chain(a.y.iter().copied()))?;
        }
        Ok(())
    }
}

/// Occupational measure generated by running the feedback `policy(y, z)`
/// along the periodic orbit: one equal-weight Dirac atom per node.
pub fn occupational_from_policy(
    model: &ModelSpec,
    orbit: &PeriodicOrbit,
    policy: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> Result<OccupationalMeasure> {
    let w = 1.0 / orbit.nodes.len() as f64;
    let atoms = orbit
        .nodes
        .iter()
        .map(|y| Atom { weight: w, u: policy(y, &orbit.level), y: y.clone() })
        .collect();
    OccupationalMeasure::new(model, orbit.level.clone(), atoms)
}

pub fn mean_functionals(model: &ModelSpec, measure: &OccupationalMeasure) -> MeanFunctionals {
    let mut h_bar = vec![0.0; model.k];
    let mut r_bar = 0.0;
    for a in &measure.atoms {
        for (acc, h) in h_bar.iter_mut().zip(model.drift(&a.u, &a.y)) {
            *acc += a.weight * h;
        }
        r_bar += a.weight * model.cost(&a.u, &a.y);
    }
    MeanFunctionals { h_bar, r_bar }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::{orbit_for_level, OrbitConfig};
    use proptest::prelude::*;

    fn lv_orbit(z: f64) -> PeriodicOrbit {
        orbit_for_level(&ModelSpec::lotka_volterra_example2(), &[z], &OrbitConfig::default()).unwrap()
    }

    #[test]
    fn constant_control_has_no_average_drift() {
        let m = ModelSpec::lotka_volterra_example2();
        let o = lv_orbit(-2.6);
        let mu = occupational_from_policy(&m, &o, |_, _| vec![0.7]).unwrap();
        assert!((mu.total_weight() - 1.0).abs() <= 1e-12);
        let mf = mean_functionals(&m, &mu);
        assert!(mf.h_bar[0].abs() <= 1e-4, "{}", mf.h_bar[0]);
    }

    #[test]
    fn zero_control_cost_is_level_constant() {
        let m = ModelSpec::lotka_volterra_example2();
        let o = lv_orbit(-2.8);
        let mf = mean_functionals(&m, &occupational_from_policy(&m, &o, |_, _| vec![0.0]).unwrap());
        assert!((mf.r_bar - (-2.8f64 + 2.05).powi(2)).abs() <= 1e-6);
    }

    #[test]
    fn rotation_unit_control() {
        let m = ModelSpec::rotation_example1();
        let o = orbit_for_level(&m, &[2.0], &OrbitConfig::default()).unwrap();
        let mf = mean_functionals(&m, &occupational_from_policy(&m, &o, |_, _| vec![1.0]).unwrap());
        assert!((mf.r_bar - 1.0).abs() < 1e-15);
        assert_eq!(mf.h_bar, vec![0.0]);
    }

    #[test]
    fn off_level_atom_rejected() {
        let m = ModelSpec::lotka_volterra_example2();
        let atoms = vec![Atom { weight: 1.0, u: vec![0.0], y: vec![1.0, 3.0] }];
        assert!(matches!(OccupationalMeasure::new(&m, vec![-2.5], atoms), Err(Error::Contract(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mixture_is_linear(u1 in 0.0f64..1.0, u2 in 0.0f64..1.0, theta in 0.0f64..1.0) {
            let m = ModelSpec::lotka_volterra_example2();
            let o = lv_orbit(-2.4);
            let a = occupational_from_policy(&m, &o, |y, _| vec![if y[0] > 1.0 { u1 } else { 0.0 }]).unwrap();
            let b = occupational_from_policy(&m, &o, |_, _| vec![u2]).unwrap();
            let mix = OccupationalMeasure::mixture(&a, &b, theta).unwrap();
            prop_assert!((mix.total_weight() - 1.0).abs() <= 1e-12);
            let (fa, fb, fm) = (mean_functionals(&m, &a), mean_functionals(&m, &b), mean_functionals(&m, &mix));
            prop_assert!((fm.r_bar - (theta * fa.r_bar + (1.0 - theta) * fb.r_bar)).abs() <= 1e-12);
            prop_assert!((fm.h_bar[0] - (theta * fa.h_bar[0] + (1.0 - theta) * fb.h_bar[0])).abs() <= 1e-12);
        }
    }
}
