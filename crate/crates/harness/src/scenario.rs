//! A validated scenario with its network and profiles loaded.

use std::path::Path;

use voltguard_core::control::PvPlantConfig;
use voltguard_core::forecast::PvModel;
use voltguard_core::grid::NetworkModel;

use crate::config::{ConfigError, ScenarioConfig};
use crate::profiles::{DayProfiles, ProfileError};
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct PlantRuntime {
    pub name: String,
    pub bus: String,
    /// Non-slack position.
    pub node: usize,
    pub control: PvPlantConfig,
    pub model: PvModel,
}

#[derive(Debug, Clone)]
pub struct LoadRuntime {
    pub bus: String,
    pub node: usize,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub network: NetworkModel,
    pub profiles: DayProfiles,
    pub plants: Vec<PlantRuntime>,
    pub loads: Vec<LoadRuntime>,
    /// Names of the non-slack buses in estimator order.
    pub node_names: Vec<String>,
    /// Non-slack positions with a measured injection, ascending.
    pub regressors: Vec<usize>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let config = ScenarioConfig::load(path)?;
        let network = config.load_network()?;
        config.validate(&network)?;
        let load_buses: Vec<String> = config.uncontrollable.iter().map(|u| u.bus.clone()).collect();
        let profiles = DayProfiles::load(
            &config.resolve(&config.profiles.weather),
            &config.resolve(&config.profiles.loads),
            &config.resolve(&config.profiles.slack),
            &load_buses,
        )?;
        Self::from_parts(config, network, profiles)
    }

    pub fn from_parts(config: ScenarioConfig, network: NetworkModel, profiles: DayProfiles) -> Result<Self, HarnessError> {
        network.validate().map_err(|e| ConfigError::Invalid { field: "network".into(), message: e.to_string() })?;
        let t = &config.timing;
        profiles.check_range(t.start_s, t.start_s + t.duration_s)?;
        let e = &config.estimation;
        profiles.check_range(e.bootstrap_start_s, e.bootstrap_start_s + e.bootstrap_samples as u64)?;
        let pos = |name: &str, field: String| {
            network
                .bus_by_name(name)
                .and_then(|b| network.non_slack_position(b))
                .ok_or(ConfigError::Invalid { field, message: format!("bus {name} is not a non-slack bus") })
        };
        let mut plants = Vec::new();
        for (k, p) in config.plants.iter().enumerate() {
            let node = pos(&p.bus, format!("plants[{k}].bus"))?;
            plants.push(PlantRuntime {
                name: p.name.clone(),
                bus: p.bus.clone(),
                node,
                control: PvPlantConfig {
                    node,
                    s_max_va: p.s_max_va,
                    pf_min: p.pf_min,
                    reactive_capable: p.reactive_capable,
                },
                model: p.pv_model(),
            });
        }
        let mut loads = Vec::new();
        for (k, u) in config.uncontrollable.iter().enumerate() {
            loads.push(LoadRuntime { bus: u.bus.clone(), node: pos(&u.bus, format!("uncontrollable[{k}].bus"))? });
        }
        if loads.iter().any(|l| !profiles.load_columns.contains_key(&l.bus)) {
            return Err(ProfileError::Format {
                path: config.profiles.loads.clone(),
                message: "profile lacks an uncontrollable bus".into(),
            }
            .into());
        }
        let node_names = network.non_slack_buses().into_iter().map(|b| network.bus_name(b)).collect();
        let mut regressors: Vec<usize> = plants.iter().map(|p| p.node).chain(loads.iter().map(|l| l.node)).collect();
        regressors.sort_unstable();
        Ok(Self { config, network, profiles, plants, loads, node_names, regressors })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn plant_configs(&self) -> Vec<PvPlantConfig> {
        self.plants.iter().map(|p| p.control.clone()).collect()
    }

    /// Position of a non-slack node inside the regressor list.
    pub fn regressor_index(&self, node: usize) -> Option<usize> {
        self.regressors.iter().position(|&r| r == node)
    }
}
