//! Shared, lazily built bases for one run.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use bergman_core::{HarmonicBasis, ProductModel};

use crate::config::ExperimentConfig;

type Slot = Arc<OnceLock<Result<Arc<HarmonicBasis>, bergman_core::Error>>>;

/// Bases are built once per power and shared between experiments. The
/// result of a build does not depend on which experiment asked first.
pub struct Workspace<'a> {
    pub config: &'a ExperimentConfig,
    pub model: ProductModel,
    cache: Mutex<BTreeMap<u32, Slot>>,
}

impl<'a> Workspace<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Self {
        Self {
            config,
            model: config.model(),
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    /// The orthonormal basis at power `k`, quadrature at `grid_n`.
    pub fn basis(&self, k: u32) -> Result<Arc<HarmonicBasis>, bergman_core::Error> {
        let slot = {
            let mut cache = self.cache.lock().expect("cache lock");
            cache.entry(k).or_default().clone()
        };
        slot.get_or_init(|| {
            let c = self.config;
            HarmonicBasis::build_with_tol(&self.model, k, c.grid_n, c.theta_eps, c.gram_tol)
                .map(Arc::new)
        })
        .clone()
    }

    pub fn ladder(&self, ks: &[u32]) -> Result<Vec<HarmonicBasis>, bergman_core::Error> {
        ks.iter()
            .map(|&k| self.basis(k).map(|b| (*b).clone()))
            .collect()
    }
}
