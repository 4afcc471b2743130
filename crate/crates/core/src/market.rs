use crate::cost::Producer;
use crate::error::{Error, Result};
use crate::network::NetworkModel;

/// A network together with the producers located on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    network: NetworkModel,
    producers: Vec<Producer>,
    by_node: Vec<Vec<usize>>,
}

impl Market {
    pub fn new(network: NetworkModel, producers: Vec<Producer>) -> Result<Self> {
        let n = network.node_count();
        let mut by_node = vec![Vec::new(); n];
        for (j, p) in producers.iter().enumerate() {
            if p.node >= n {
                return Err(Error::InvalidProducer(j, format!("node {} out of range", p.node)));
            }
            if !(p.capacity.is_finite() && p.capacity > 0.0) {
                return Err(Error::InvalidProducer(j, "capacity must be finite and positive".into()));
            }
            by_node[p.node].push(j);
        }
        Ok(Market { network, producers, by_node })
    }

    pub fn network(&self) -> &NetworkModel {
        &self.network
    }

    pub fn producers(&self) -> &[Producer] {
        &self.producers
    }

    pub fn producer_count(&self) -> usize {
        self.producers.len()
    }

    pub fn node_count(&self) -> usize {
        self.network.node_count()
    }

    /// Indices of the producers at node `i`.
    pub fn at_node(&self, i: usize) -> &[usize] {
        &self.by_node[i]
    }

    pub fn node_capacity(&self, i: usize) -> f64 {
        self.by_node[i].iter().map(|&j| self.producers[j].capacity).sum()
    }

    pub fn with_network(&self, network: NetworkModel) -> Result<Self> {
        Market::new(network, self.producers.clone())
    }

    /// `Σ_{k≠j, k at j's node} X_k`.
    pub fn rival_capacity(&self, j: usize) -> f64 {
        let i = self.producers[j].node;
        self.by_node[i].iter().filter(|&&k| k != j).map(|&k| self.producers[k].capacity).sum()
    }
}
