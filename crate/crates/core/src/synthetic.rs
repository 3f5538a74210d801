//! Synthetic markets with one planted directional tail dependence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::{sample_balanced, Copula, CopulaSpec};
use crate::timeseries::{ReturnPanel, Timestamp};
use crate::{margins::symmetric_pareto_quantile, seed};
use rand::distr::Open01;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedMarket {
    pub assets: usize,
    pub steps: usize,
    /// Asset whose extremes lead.
    pub driver: usize,
    /// Asset that follows `lag` steps later.
    pub follower: usize,
    pub lag: usize,
    pub theta: f64,
    pub phi: f64,
    /// Returns are unit symmetric Pareto(2) draws times this factor.
    pub scale: f64,
}

impl Default for PlantedMarket {
    fn default() -> Self {
        Self { assets: 10, steps: 20_000, driver: 0, follower: 1, lag: 1, theta: 2.0, phi: 0.9, scale: 0.001 }
    }
}

impl PlantedMarket {
    pub fn asset_name(i: usize) -> String {
        format!("s{i:02}")
    }

    /// Identifier of the planted pair, as used in backtest output.
    pub fn planted_pair_id(&self) -> String {
        format!("{}+->{}", Self::asset_name(self.driver), Self::asset_name(self.follower))
    }

    /// Panel in which `(driver_t, follower_{t+lag})` follows the mixed Gumbel
    /// copula and every other series is independent noise.
    pub fn generate(&self, seed: u64) -> Result<ReturnPanel> {
        if self.assets < 2 || self.driver >= self.assets || self.follower >= self.assets || self.driver == self.follower {
            return Err(Error::InvalidParameter("need two distinct planted assets inside the panel".into()));
        }
        if self.lag == 0 || self.steps <= self.lag + 1 || !(self.scale > 0.0) {
            return Err(Error::InvalidParameter("need lag >= 1, steps > lag + 1 and a positive scale".into()));
        }
        let spec = CopulaSpec { copula: Copula::Gumbel { theta: self.theta }, phi: self.phi };
        let (x, y) = sample_balanced(&spec, self.steps - self.lag, seed::derive(seed, &[0]))?;
        let mut columns = Vec::with_capacity(self.assets);
        for a in 0..self.assets {
            let mut rng = seed::rng(seed::derive(seed, &[1, a as u64]), 0);
            let mut col: Vec<f64> = (0..self.steps).map(|_| symmetric_pareto_quantile(rng.sample(Open01))).collect();
            if a == self.driver {
                col[..x.len()].copy_from_slice(&x);
            } else if a == self.follower {
                col[self.lag..].copy_from_slice(&y);
            }
            columns.push(col.into_iter().map(|v| v * self.scale).collect());
        }
        ReturnPanel::from_columns(
            (0..self.assets).map(Self::asset_name).collect(),
            (0..self.steps as i64).map(Timestamp::Index).collect(),
            columns,
        )
    }
}
