//! Linear time-invariant dynamics: the planar double integrator used by the
//! driving experiments, generic (A, B) systems, and trajectory rollouts.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Discrete-time linear dynamics `x_{t+1} = A x_t + B u_t` with sampling
/// period `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub dt: f64,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, dt: f64) -> Result<Self, DynamicsError> {
        if dt <= 0.0 {
            return Err(DynamicsError::NonPositive { name: "dt", value: dt });
        }
        if !a.is_square() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "B has {} rows but A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(Self { a, b, dt })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// One dynamics step.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Planar double integrator for a point mass: state `[p_x, v_x, p_y, v_y]`,
/// control `[F_x, F_y]` in Newtons.
pub fn double_integrator(dt: f64, mass: f64) -> Result<LinearDynamics, DynamicsError> {
    if dt <= 0.0 {
        return Err(DynamicsError::NonPositive { name: "dt", value: dt });
    }
    if mass <= 0.0 {
        return Err(DynamicsError::NonPositive { name: "mass", value: mass });
    }
    let mut a = DMatrix::identity(4, 4);
    a[(0, 1)] = dt;
    a[(2, 3)] = dt;
    let mut b = DMatrix::zeros(4, 2);
    b[(1, 0)] = dt / mass;
    b[(3, 1)] = dt / mass;
    LinearDynamics::new(a, b, dt)
}

/// A time-indexed state sequence with sampling period `dt`: states[t] for
/// t = 0..=H, so the horizon is `states.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub dt: f64,
    pub id: String,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, dt: f64, id: impl Into<String>) -> Result<Self, DynamicsError> {
        if states.len() < 2 {
            return Err(DynamicsError::DimensionMismatch(
                "trajectory needs at least 2 states (H >= 1)".into(),
            ));
        }
        let n = states[0].len();
        if states.iter().any(|x| x.len() != n) {
            return Err(DynamicsError::DimensionMismatch(
                "all trajectory states must share a dimension".into(),
            ));
        }
        if dt <= 0.0 {
            return Err(DynamicsError::NonPositive { name: "dt", value: dt });
        }
        Ok(Self {
            states,
            dt,
            id: id.into(),
        })
    }

    /// Horizon H (number of steps; states run t = 0..=H).
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// Keep every `stride`-th state and scale `dt` to match.
    pub fn downsample(&self, stride: usize) -> Trajectory {
        if stride <= 1 {
            return self.clone();
        }
        let states: Vec<DVector<f64>> = self.states.iter().step_by(stride).cloned().collect();
        Trajectory {
            states,
            dt: self.dt * stride as f64,
            id: self.id.clone(),
        }
    }
}

/// A control sequence of length H (one control per dynamics step).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub controls: Vec<DVector<f64>>,
}

impl ControlSequence {
    pub fn new(controls: Vec<DVector<f64>>) -> Result<Self, DynamicsError> {
        if let Some(first) = controls.first() {
            let m = first.len();
            if controls.iter().any(|u| u.len() != m) {
                return Err(DynamicsError::DimensionMismatch(
                    "all controls must share a dimension".into(),
                ));
            }
        }
        Ok(Self { controls })
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }
}

/// Roll the dynamics forward from `x0` under `u`; the result has
/// `u.len() + 1` states with `states[0] = x0`.
pub fn rollout(
    dyn_: &LinearDynamics,
    x0: &DVector<f64>,
    u: &ControlSequence,
    id: impl Into<String>,
) -> Result<Trajectory, DynamicsError> {
    if x0.len() != dyn_.state_dim() {
        return Err(DynamicsError::DimensionMismatch(format!(
            "x0 has dimension {}, dynamics expect {}",
            x0.len(),
            dyn_.state_dim()
        )));
    }
    for c in &u.controls {
        if c.len() != dyn_.control_dim() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "control has dimension {}, dynamics expect {}",
                c.len(),
                dyn_.control_dim()
            )));
        }
    }
    let mut states = Vec::with_capacity(u.len() + 1);
    states.push(x0.clone());
    for c in &u.controls {
        let next = dyn_.step(states.last().unwrap(), c);
        states.push(next);
    }
    Trajectory::new(states, dyn_.dt, id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn double_integrator_entries() {
        let d = double_integrator(0.04, 1.0).unwrap();
        for i in 0..4 {
            assert_eq!(d.a[(i, i)], 1.0);
        }
        assert_eq!(d.a[(0, 1)], 0.04);
        assert_eq!(d.a[(2, 3)], 0.04);
        assert_eq!(d.b[(1, 0)], 0.04);
        assert_eq!(d.b[(3, 1)], 0.04);
        assert_eq!(d.b[(0, 0)], 0.0);
        assert_eq!(d.b[(2, 1)], 0.0);
    }

    #[test]
    fn mass_scales_control_gain() {
        let d = double_integrator(1.0, 2.0).unwrap();
        assert_eq!(d.b[(1, 0)], 0.5);
    }

    #[test]
    fn rejects_nonpositive_params() {
        assert!(double_integrator(0.0, 1.0).is_err());
        assert!(double_integrator(0.04, -1.0).is_err());
    }

    #[test]
    fn zero_control_zero_velocity_is_fixed_point() {
        let d = double_integrator(0.1, 1.0).unwrap();
        let x = v(&[3.0, 0.0, -2.0, 0.0]);
        let u = v(&[0.0, 0.0]);
        assert_eq!(d.step(&x, &u), x);
    }

    #[test]
    fn constant_velocity_rollout() {
        let d = double_integrator(0.04, 1.0).unwrap();
        let u = ControlSequence::new(vec![v(&[0.0, 0.0]); 3]).unwrap();
        let traj = rollout(&d, &v(&[0.0, 1.0, 0.0, 0.0]), &u, "t").unwrap();
        let px: Vec<f64> = traj.states.iter().map(|x| x[0]).collect();
        for (got, want) in px.iter().zip([0.0, 0.04, 0.08, 0.12]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_iterated_constant_force() {
        // x0 = 0, u = [1, 0] each step, mass 1, dt 1:
        // v_x = 0,1,2,3 and p_x = 0,0,1,3.
        let d = double_integrator(1.0, 1.0).unwrap();
        let u = ControlSequence::new(vec![v(&[1.0, 0.0]); 3]).unwrap();
        let traj = rollout(&d, &v(&[0.0, 0.0, 0.0, 0.0]), &u, "t").unwrap();
        let px: Vec<f64> = traj.states.iter().map(|x| x[0]).collect();
        let vx: Vec<f64> = traj.states.iter().map(|x| x[1]).collect();
        assert_eq!(px, vec![0.0, 0.0, 1.0, 3.0]);
        assert_eq!(vx, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn rollout_length_and_dimension_checks() {
        let d = double_integrator(0.04, 1.0).unwrap();
        let u = ControlSequence::new(vec![v(&[0.5, -0.25]); 7]).unwrap();
        let traj = rollout(&d, &v(&[0.0; 4]), &u, "t").unwrap();
        assert_eq!(traj.states.len(), u.len() + 1);

        let bad = rollout(&d, &v(&[0.0; 3]), &u, "t");
        assert!(matches!(bad, Err(DynamicsError::DimensionMismatch(_))));
    }

    #[test]
    fn superposition() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(5);
        let d = double_integrator(0.1, 1.3).unwrap();
        let rand_u = |rng: &mut StdRng| {
            ControlSequence::new(
                (0..10)
                    .map(|_| v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
                    .collect(),
            )
            .unwrap()
        };
        let x0 = v(&[1.0, -0.5, 2.0, 0.25]);
        let zero = v(&[0.0; 4]);
        let u1 = rand_u(&mut rng);
        let u2 = rand_u(&mut rng);
        let sum = ControlSequence::new(
            u1.controls
                .iter()
                .zip(&u2.controls)
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
        let zero_u = ControlSequence::new(vec![v(&[0.0, 0.0]); 10]).unwrap();

        let r_sum = rollout(&d, &x0, &sum, "s").unwrap();
        let r_u1 = rollout(&d, &x0, &u1, "a").unwrap();
        let r_v = rollout(&d, &zero, &u2, "b").unwrap();
        let r_0 = rollout(&d, &zero, &zero_u, "z").unwrap();
        for t in 0..=10 {
            let lhs = &r_sum.states[t] - &r_u1.states[t];
            let rhs = &r_v.states[t] - &r_0.states[t];
            assert!((lhs - rhs).amax() < 1e-10);
        }
    }

    #[test]
    fn downsample_keeps_every_kth_state() {
        let d = double_integrator(0.04, 1.0).unwrap();
        let u = ControlSequence::new(vec![v(&[0.1, 0.0]); 8]).unwrap();
        let traj = rollout(&d, &v(&[0.0; 4]), &u, "t").unwrap();
        let ds = traj.downsample(2);
        assert_eq!(ds.states.len(), 5);
        assert_eq!(ds.dt, 0.08);
        assert_eq!(ds.states[1], traj.states[2]);
    }
}
