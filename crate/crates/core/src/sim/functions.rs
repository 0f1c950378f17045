use std::f64::consts::PI;

/// A true curve of the estimation experiment, centered so that its mean
/// over 10,001 equally spaced points of [0, 1] is zero.
#[derive(Clone, Copy, Debug)]
pub struct TrueFunction {
    pub name: &'static str,
    raw: fn(f64) -> f64,
    offset: f64,
}

impl TrueFunction {
    fn centered(name: &'static str, raw: fn(f64) -> f64) -> Self {
        let n = 10_001;
        let offset = (0..n).map(|i| raw(i as f64 / (n - 1) as f64)).sum::<f64>() / n as f64;
        TrueFunction { name, raw, offset }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.raw)(x) - self.offset
    }
}

fn f0(x: f64) -> f64 {
    1.5 * (PI * x).sin()
}

fn f1(x: f64) -> f64 {
    1.3 / (1.0 + (-8.0 * (x - 0.5)).exp())
}

fn f2(x: f64) -> f64 {
    0.17 * (0.2 * x.powi(11) * (10.0 * (1.0 - x)).powi(6)
        + 10.0 * (10.0 * x).powi(3) * (1.0 - x).powi(10))
}

fn f3(x: f64) -> f64 {
    0.2 * (x - 0.5)
}

/// Unimodal, sigmoid, bimodal and near-flat curves on [0, 1], each with
/// variance about 0.22 (0.003 for the flat one).
pub fn make_true_functions() -> [TrueFunction; 4] {
    [
        TrueFunction::centered("f0", f0),
        TrueFunction::centered("f1", f1),
        TrueFunction::centered("f2", f2),
        TrueFunction::centered("f3", f3),
    ]
}

/// Lifespan-like volume curve over ages 4 to 94: growth until the mid
/// twenties, a plateau, then accelerating decline after 35.
pub fn lifespan_trajectory(age: f64) -> f64 {
    130_000.0 - 20_000.0 * (-(age - 4.0) / 6.0).exp() - 12.0 * (age - 35.0).max(0.0).powi(2)
}

/// Extra decline of group 1 relative to group 0, growing after age 30 and
/// reaching `amplitude` at 94.
pub fn group_effect(age: f64, amplitude: f64) -> f64 {
    -amplitude * ((age - 30.0).max(0.0) / 64.0).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_on_the_fine_grid() {
        for f in make_true_functions() {
            let mean = (0..10_001)
                .map(|i| f.eval(i as f64 / 10_000.0))
                .sum::<f64>()
                / 10_001.0;
            assert!(mean.abs() < 1e-6, "{} mean {mean}", f.name);
        }
    }

    #[test]
    fn bimodal_curve_has_two_interior_maxima() {
        let f = make_true_functions()[2];
        let y: Vec<f64> = (0..=10_000).map(|i| f.eval(i as f64 / 10_000.0)).collect();
        let maxima = (1..y.len() - 1)
            .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1])
            .count();
        assert_eq!(maxima, 2);
    }

    #[test]
    fn shapes() {
        let [f0, f1, _, f3] = make_true_functions();
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        assert!(grid.windows(2).all(|w| f1.eval(w[1]) > f1.eval(w[0])));
        let peak = grid
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, |m, x| m.max(f0.eval(x)));
        assert!((peak - f0.eval(0.5)).abs() < 1e-12);
        assert!(grid.iter().all(|&x| f3.eval(x).abs() <= 0.1 + 1e-12));
    }

    #[test]
    fn trajectory_rises_then_declines() {
        assert!(lifespan_trajectory(25.0) > lifespan_trajectory(4.0) + 15_000.0);
        assert!((lifespan_trajectory(35.0) - lifespan_trajectory(25.0)).abs() < 1_000.0);
        assert!(lifespan_trajectory(94.0) < lifespan_trajectory(60.0) - 20_000.0);
        assert_eq!(group_effect(20.0, 5000.0), 0.0);
        assert_eq!(group_effect(94.0, 5000.0), -5000.0);
    }
}
