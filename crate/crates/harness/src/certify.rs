use anyhow::{bail, Result};
use hierlearn_core::topology::{certify_byzantine_network, CertReport, DEFAULT_ENUMERATION_CAP};
use hierlearn_core::Error;

use crate::config::{ExperimentConfig, FaultModel};

/// Outcome of certifying one sub-network.
#[derive(Debug)]
pub struct NetworkCertificate {
    pub network: usize,
    pub result: Result<CertReport, Error>,
}

/// Certifies the `C` networks of a Byzantine config, or every network
/// otherwise (with `F = 0`).
pub fn certify_config(config: &ExperimentConfig) -> Result<Vec<NetworkCertificate>> {
    let Some(model) = &config.model else { bail!("certification needs a [signals] section") };
    let topo = &config.topology;
    let (f, networks): (usize, Vec<usize>) = match &config.faults {
        FaultModel::Byzantine { plan, c_set } => (plan.f_bound(), c_set.clone()),
        _ => (0, (0..topo.m_count()).collect()),
    };
    Ok(networks
        .into_iter()
        .map(|network| NetworkCertificate {
            network,
            result: certify_byzantine_network(&topo.sub_networks()[network], f, model, DEFAULT_ENUMERATION_CAP),
        })
        .collect())
}
