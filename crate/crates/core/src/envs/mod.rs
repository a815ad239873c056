//! Parameterized environments. Each has a single physical "context" axis
//! (slip probability, friction, gravity and wind) that changes the
//! transition law while states, actions and rewards stay fixed.

mod frictioncar;
mod gridslip;
mod windylander;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use frictioncar::FrictionCarSpec;
pub use gridslip::{GridSlipSpec, TabularModel, GRID_ACTIONS};
pub use windylander::{LanderActionMode, WindyLanderSpec};

use crate::error::{Error, Result};
use crate::mdp::{Action, EnvKind, Spaces, StepOutcome, TaskHandle};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    GridSlip(GridSlipSpec),
    FrictionCar(FrictionCarSpec),
    WindyLander(WindyLanderSpec),
}

impl EnvSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::GridSlip(_) => EnvKind::GridSlip,
            EnvSpec::FrictionCar(_) => EnvKind::FrictionCar,
            EnvSpec::WindyLander(_) => EnvKind::WindyLander,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::GridSlip(s) => s.validate(),
            EnvSpec::FrictionCar(s) => s.validate(),
            EnvSpec::WindyLander(s) => s.validate(),
        }
    }

    pub fn spaces(&self) -> Spaces {
        match self {
            EnvSpec::GridSlip(s) => s.spaces(),
            EnvSpec::FrictionCar(s) => s.spaces(),
            EnvSpec::WindyLander(s) => s.spaces(),
        }
    }

    pub(crate) fn initial_state(&self) -> Vec<f64> {
        match self {
            EnvSpec::GridSlip(s) => s.initial_state(),
            EnvSpec::FrictionCar(_) => vec![0.0, 0.0],
            EnvSpec::WindyLander(s) => s.initial_state(),
        }
    }

    /// Names of the context parameters for this environment kind.
    pub fn context_names(&self) -> &'static [&'static str] {
        match self {
            EnvSpec::GridSlip(_) => &["slip_p"],
            EnvSpec::FrictionCar(_) => &["friction_mu"],
            EnvSpec::WindyLander(_) => &["gravity_g", "wind_f"],
        }
    }

    pub fn context_params(&self) -> BTreeMap<String, f64> {
        let values: Vec<f64> = match self {
            EnvSpec::GridSlip(s) => vec![s.slip_p],
            EnvSpec::FrictionCar(s) => vec![s.friction_mu],
            EnvSpec::WindyLander(s) => vec![s.gravity_g, s.wind_f],
        };
        self.context_names()
            .iter()
            .map(|n| n.to_string())
            .zip(values)
            .collect()
    }

    /// Copy of this spec with its context replaced. `params` must name
    /// exactly this kind's context parameters.
    pub fn with_context(&self, params: &BTreeMap<String, f64>) -> Result<Self> {
        let names = self.context_names();
        if let Some(unknown) = params.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(Error::config(
                unknown.clone(),
                "not a context parameter of this environment",
            ));
        }
        let get = |name: &str| {
            params
                .get(name)
                .copied()
                .ok_or_else(|| Error::config(name, "missing context parameter"))
        };
        let mut out = self.clone();
        match &mut out {
            EnvSpec::GridSlip(s) => s.slip_p = get("slip_p")?,
            EnvSpec::FrictionCar(s) => s.friction_mu = get("friction_mu")?,
            EnvSpec::WindyLander(s) => {
                s.gravity_g = get("gravity_g")?;
                s.wind_f = get("wind_f")?;
            }
        }
        out.validate()?;
        Ok(out)
    }
}

pub(crate) fn step(
    env: &EnvSpec,
    state: &[f64],
    action: &Action,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    let spaces = env.spaces();
    if state.len() != spaces.state_dim {
        return Err(Error::domain(format!(
            "state has dimension {}, environment expects {}",
            state.len(),
            spaces.state_dim
        )));
    }
    match env {
        EnvSpec::GridSlip(s) => s.step(state, action, rng),
        EnvSpec::FrictionCar(s) => s.step(state, action),
        EnvSpec::WindyLander(s) => s.step(state, action),
    }
}

/// Continuous actions are clamped into the box; wrong dimensions and
/// non-finite components are rejected.
pub(crate) fn clamp_continuous(action: &Action, lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    match action {
        Action::Continuous(x) if x.len() == lo.len() => {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("non-finite action component"));
            }
            Ok(x.iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| v.clamp(l, h))
                .collect())
        }
        _ => Err(Error::domain(format!(
            "action {action:?} does not fit a {}-d box",
            lo.len()
        ))),
    }
}

pub fn make_gridslip(spec: GridSlipSpec, seed: u64, episode_cap: usize) -> Result<TaskHandle> {
    TaskHandle::new(EnvSpec::GridSlip(spec), seed, episode_cap)
}

pub fn make_frictioncar(
    spec: FrictionCarSpec,
    seed: u64,
    episode_cap: usize,
) -> Result<TaskHandle> {
    TaskHandle::new(EnvSpec::FrictionCar(spec), seed, episode_cap)
}

pub fn make_windylander(
    spec: WindyLanderSpec,
    seed: u64,
    episode_cap: usize,
) -> Result<TaskHandle> {
    TaskHandle::new(EnvSpec::WindyLander(spec), seed, episode_cap)
}

/// Exact per-action transition matrices of a tabular task.
pub fn exact_transition_matrix(task: &TaskHandle) -> Result<TabularModel> {
    match task.env() {
        EnvSpec::GridSlip(s) => Ok(s.tabular_model()),
        other => Err(Error::unsupported(format!(
            "{:?} has no finite state space",
            other.kind()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_roundtrip_and_errors() {
        let spec = EnvSpec::WindyLander(WindyLanderSpec::new(-5.0, 10.0));
        let ctx = spec.context_params();
        assert_eq!(ctx["gravity_g"], -5.0);
        assert_eq!(ctx["wind_f"], 10.0);
        assert_eq!(spec.with_context(&ctx).unwrap(), spec);

        let mut missing = ctx.clone();
        missing.remove("wind_f");
        match spec.with_context(&missing).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "wind_f"),
            e => panic!("{e:?}"),
        }
        let mut bad = ctx.clone();
        bad.insert("gravity_g".into(), -20.0);
        match spec.with_context(&bad).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "gravity_g"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn non_tabular_has_no_matrix() {
        let task = make_frictioncar(FrictionCarSpec::new(1.0), 0, 10).unwrap();
        assert!(matches!(
            exact_transition_matrix(&task),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn spec_toml_requires_context_and_rejects_unknown_keys() {
        let ok: EnvSpec =
            toml::from_str("kind = \"grid_slip\"\nwidth = 3\nheight = 3\nslip_p = 0.2\n").unwrap();
        assert_eq!(ok.context_params()["slip_p"], 0.2);
        let missing =
            toml::from_str::<EnvSpec>("kind = \"grid_slip\"\nwidth = 3\nheight = 3\n").unwrap_err();
        assert!(missing.to_string().contains("slip_p"), "{missing}");
        let unknown = toml::from_str::<EnvSpec>(
            "kind = \"friction_car\"\nfriction_mu = 1.0\nfrction = 2.0\n",
        )
        .unwrap_err();
        assert!(unknown.to_string().contains("frction"), "{unknown}");
    }
}
