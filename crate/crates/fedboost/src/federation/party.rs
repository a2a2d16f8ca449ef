//! A party's local world: its feature slice, aligned sample ids, owned model
//! half, and per-tree training state. Parties never touch another party's
//! fields directly; everything crosses the bus.

use std::collections::BTreeMap;

use crate::crypto::{Ciphertext, FixedPoint, PaillierPrivateKey, PaillierPublicKey};
use crate::error::{Error, Result};
use crate::federation::bus::{FeatureHistogram, GradVector, PartyClass, PartyId};
use crate::gbdt::{assign_bin, BinEdges, GradientPair, SplitDecision};
use rand::RngCore;

/// Per-sample gradients as a district party sees them: plaintext pairs at the
/// label holder, fixed-point micro-units when the run is encrypted, and
/// ciphertexts at the secondary party.
#[derive(Debug, Clone)]
pub enum GradientStore {
    Plain(Vec<GradientPair>),
    Micro(Vec<(i64, i64)>),
    Encrypted { g: Vec<Ciphertext>, h: Vec<Ciphertext> },
}

#[derive(Debug)]
pub struct PartyView {
    pub id: PartyId,
    /// Aligned training sample ids, ascending.
    pub sample_ids: Vec<String>,
    /// Local feature columns over the aligned samples.
    features: Vec<Vec<f64>>,
    /// Global index of this party's first feature.
    pub feature_offset: usize,
    labels: Option<Vec<f64>>,
    /// Bin edges for this class's features, identical across districts.
    pub edges: Vec<BinEdges>,
    binned: Vec<Vec<u32>>,
    /// Training gradients for the current tree.
    pub gradients: Option<GradientStore>,
    /// Running train predictions (label holder only).
    pub predictions: Vec<f64>,
    /// Current tree's node membership, local sample indices ascending.
    pub node_samples: BTreeMap<u64, Vec<u32>>,
    /// This party's half of the model.
    pub owned_splits: BTreeMap<(u32, u64), SplitDecision>,
    /// Leaf values (label-holding class only).
    pub leaf_weights: BTreeMap<(u32, u64), f64>,
    /// Nodes known to belong to the other class, from subspace notices.
    pub foreign_nodes: BTreeMap<(u32, u64), PartyClass>,
    /// Test-time data.
    pub test_ids: Vec<String>,
    test_features: Vec<Vec<f64>>,
    pub test_labels: Option<Vec<f64>>,
    /// Incremental test predictions (label holder only).
    pub test_predictions: Vec<f64>,
    /// Paillier keys: every party sees the public key, only the label-holding
    /// class receives the private key.
    pub public_key: Option<PaillierPublicKey>,
    pub private_key: Option<PaillierPrivateKey>,
}

impl PartyView {
    pub fn new(
        id: PartyId,
        sample_ids: Vec<String>,
        features: Vec<Vec<f64>>,
        feature_offset: usize,
        labels: Option<Vec<f64>>,
    ) -> PartyView {
        PartyView {
            id,
            sample_ids,
            features,
            feature_offset,
            labels,
            edges: Vec::new(),
            binned: Vec::new(),
            gradients: None,
            predictions: Vec::new(),
            node_samples: BTreeMap::new(),
            owned_splits: BTreeMap::new(),
            leaf_weights: BTreeMap::new(),
            foreign_nodes: BTreeMap::new(),
            test_ids: Vec::new(),
            test_features: Vec::new(),
            test_labels: None,
            test_predictions: Vec::new(),
            public_key: None,
            private_key: None,
        }
    }

    pub fn n_local_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    /// Restricts the view to the aligned id set (sorted ascending).
    pub fn restrict_to(&mut self, aligned: &[String]) {
        let keep: Vec<usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| aligned.binary_search(id).is_ok())
            .map(|(i, _)| i)
            .collect();
        self.sample_ids = keep.iter().map(|&i| self.sample_ids[i].clone()).collect();
        for col in &mut self.features {
            *col = keep.iter().map(|&i| col[i]).collect();
        }
        if let Some(labels) = &mut self.labels {
            *labels = keep.iter().map(|&i| labels[i]).collect();
        }
    }

    /// Sorted per-feature value multisets for bin construction.
    pub fn value_counts(&self) -> Vec<(usize, Vec<(f64, u64)>)> {
        self.features
            .iter()
            .enumerate()
            .map(|(k, col)| {
                let mut sorted = col.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let mut counts: Vec<(f64, u64)> = Vec::new();
                for v in sorted {
                    match counts.last_mut() {
                        Some((value, c)) if *value == v => *c += 1,
                        _ => counts.push((v, 1)),
                    }
                }
                (self.feature_offset + k, counts)
            })
            .collect()
    }

    /// Installs the class-global bin edges and bins the local columns.
    pub fn install_edges(&mut self, edges: Vec<BinEdges>) -> Result<()> {
        if edges.len() != self.features.len() {
            return Err(Error::Protocol(format!(
                "{}: got edges for {} features, hold {}",
                self.id,
                edges.len(),
                self.features.len()
            )));
        }
        self.binned = self
            .features
            .iter()
            .zip(&edges)
            .map(|(col, e)| col.iter().map(|&v| assign_bin(v, e) as u32).collect())
            .collect();
        self.edges = edges;
        Ok(())
    }

    /// Resets per-tree state: all aligned samples sit at the root.
    pub fn start_tree(&mut self) {
        self.node_samples.clear();
        self.node_samples.insert(1, (0..self.n_samples() as u32).collect());
    }

    /// Squared-loss gradients of the running predictions (label holder).
    pub fn compute_gradients(&mut self, encrypted: bool) -> Result<()> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("{} holds no labels", self.id)))?;
        if self.predictions.is_empty() {
            self.predictions = vec![0.0; labels.len()];
        }
        let pairs = crate::gbdt::compute_gradients(&self.predictions, labels)?;
        self.gradients = Some(if encrypted {
            let micro = pairs
                .iter()
                .map(|p| Ok((FixedPoint::encode(p.g)?.raw, FixedPoint::encode(p.h)?.raw)))
                .collect::<Result<Vec<_>>>()?;
            GradientStore::Micro(micro)
        } else {
            GradientStore::Plain(pairs)
        });
        Ok(())
    }

    /// Encrypts the current per-sample gradients for the same-district
    /// secondary party.
    pub fn encrypt_gradients<R: RngCore>(&self, rng: &mut R) -> Result<(Vec<Ciphertext>, Vec<Ciphertext>)> {
        let key = self
            .private_key
            .as_ref()
            .ok_or_else(|| Error::Key(format!("{} holds no private key", self.id)))?;
        let micro = match &self.gradients {
            Some(GradientStore::Micro(m)) => m,
            _ => return Err(Error::Protocol(format!("{} has no fixed-point gradients", self.id))),
        };
        let mut g = Vec::with_capacity(micro.len());
        let mut h = Vec::with_capacity(micro.len());
        for (gm, hm) in micro {
            g.push(key.encrypt(&key.public().encode_micro(i128::from(*gm))?, rng)?);
            h.push(key.encrypt(&key.public().encode_micro(i128::from(*hm))?, rng)?);
        }
        Ok((g, h))
    }

    pub fn receive_gradient_batch(&mut self, ids: &[String], g: GradVector, h: GradVector) -> Result<()> {
        if ids != self.sample_ids.as_slice() {
            return Err(Error::Protocol(format!(
                "{}: gradient batch ids disagree with the aligned sample set",
                self.id
            )));
        }
        self.gradients = Some(match (g, h) {
            (GradVector::Plain(g), GradVector::Plain(h)) => {
                GradientStore::Plain(g.into_iter().zip(h).map(|(g, h)| GradientPair { g, h }).collect())
            }
            (GradVector::Encrypted(g), GradVector::Encrypted(h)) => GradientStore::Encrypted { g, h },
            _ => return Err(Error::Protocol("mixed plaintext/ciphertext gradient batch".into())),
        });
        Ok(())
    }

    fn node_members(&self, node: u64) -> Result<&[u32]> {
        self.node_samples
            .get(&node)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Protocol(format!("{} has no sample set for node {node}", self.id)))
    }

    /// Per-feature, per-bin statistics of one node over this party's slice,
    /// plus the sample-order totals. Plaintext f64 path.
    pub fn node_stats_plain(&self, node: u64) -> Result<(Vec<FeatureHistogram>, (f64, f64))> {
        let members = self.node_members(node)?;
        let pairs = match &self.gradients {
            Some(GradientStore::Plain(p)) => p,
            _ => return Err(Error::Protocol(format!("{} has no plaintext gradients", self.id))),
        };
        let mut out = Vec::with_capacity(self.features.len());
        for (k, bins) in self.binned.iter().enumerate() {
            let n_bins = self.edges[k].n_bins();
            let mut g = vec![0.0; n_bins];
            let mut h = vec![0.0; n_bins];
            for &i in members {
                let b = bins[i as usize] as usize;
                g[b] += pairs[i as usize].g;
                h[b] += pairs[i as usize].h;
            }
            out.push(FeatureHistogram {
                feature: self.feature_offset + k,
                g: GradVector::Plain(g),
                h: GradVector::Plain(h),
            });
        }
        let mut tg = 0.0;
        let mut th = 0.0;
        for &i in members {
            tg += pairs[i as usize].g;
            th += pairs[i as usize].h;
        }
        Ok((out, (tg, th)))
    }

    /// Same statistics in exact micro-units (encrypted-mode label holder).
    pub fn node_stats_micro(&self, node: u64) -> Result<(Vec<(usize, Vec<i64>, Vec<i64>)>, (i64, i64))> {
        let members = self.node_members(node)?;
        let micro = match &self.gradients {
            Some(GradientStore::Micro(m)) => m,
            _ => return Err(Error::Protocol(format!("{} has no fixed-point gradients", self.id))),
        };
        let mut out = Vec::with_capacity(self.features.len());
        for (k, bins) in self.binned.iter().enumerate() {
            let n_bins = self.edges[k].n_bins();
            let mut g = vec![0i64; n_bins];
            let mut h = vec![0i64; n_bins];
            for &i in members {
                let b = bins[i as usize] as usize;
                g[b] += micro[i as usize].0;
                h[b] += micro[i as usize].1;
            }
            out.push((self.feature_offset + k, g, h));
        }
        let mut tg = 0i64;
        let mut th = 0i64;
        for &i in members {
            tg += micro[i as usize].0;
            th += micro[i as usize].1;
        }
        Ok((out, (tg, th)))
    }

    /// Homomorphic per-bin sums of the encrypted gradients (secondary party).
    /// Empty bins emit a fresh encryption of zero.
    pub fn node_stats_encrypted<R: RngCore>(&self, node: u64, rng: &mut R) -> Result<Vec<FeatureHistogram>> {
        let members = self.node_members(node)?;
        let (cg, ch) = match &self.gradients {
            Some(GradientStore::Encrypted { g, h }) => (g, h),
            _ => return Err(Error::Protocol(format!("{} has no encrypted gradients", self.id))),
        };
        let key = self
            .public_key
            .as_ref()
            .ok_or_else(|| Error::Key(format!("{} holds no public key", self.id)))?;
        let zero = num_bigint::BigUint::from(0u32);
        let mut out = Vec::with_capacity(self.features.len());
        for (k, bins) in self.binned.iter().enumerate() {
            let n_bins = self.edges[k].n_bins();
            let mut g: Vec<Option<Ciphertext>> = vec![None; n_bins];
            let mut h: Vec<Option<Ciphertext>> = vec![None; n_bins];
            for &i in members {
                let b = bins[i as usize] as usize;
                g[b] = Some(match g[b].take() {
                    None => cg[i as usize].clone(),
                    Some(acc) => key.add(&acc, &cg[i as usize])?,
                });
                h[b] = Some(match h[b].take() {
                    None => ch[i as usize].clone(),
                    Some(acc) => key.add(&acc, &ch[i as usize])?,
                });
            }
            let fill = |slots: Vec<Option<Ciphertext>>, rng: &mut R| -> Result<Vec<Ciphertext>> {
                slots
                    .into_iter()
                    .map(|s| match s {
                        Some(c) => Ok(c),
                        None => key.encrypt(&zero, rng),
                    })
                    .collect()
            };
            out.push(FeatureHistogram {
                feature: self.feature_offset + k,
                g: GradVector::Encrypted(fill(g, rng)?),
                h: GradVector::Encrypted(fill(h, rng)?),
            });
        }
        Ok(out)
    }

    /// Sample-order gradient totals of one node (label holder), for leaf
    /// value calculation.
    pub fn node_totals_plain(&self, node: u64) -> Result<(f64, f64)> {
        let members = self.node_members(node)?;
        let pairs = match &self.gradients {
            Some(GradientStore::Plain(p)) => p,
            _ => return Err(Error::Protocol(format!("{} has no plaintext gradients", self.id))),
        };
        let mut g = 0.0;
        let mut h = 0.0;
        for &i in members {
            g += pairs[i as usize].g;
            h += pairs[i as usize].h;
        }
        Ok((g, h))
    }

    /// Exact micro-unit totals of one node (encrypted-mode label holder).
    pub fn node_totals_micro(&self, node: u64) -> Result<(i64, i64)> {
        let members = self.node_members(node)?;
        let micro = match &self.gradients {
            Some(GradientStore::Micro(m)) => m,
            _ => return Err(Error::Protocol(format!("{} has no fixed-point gradients", self.id))),
        };
        let mut g = 0i64;
        let mut h = 0i64;
        for &i in members {
            g += micro[i as usize].0;
            h += micro[i as usize].1;
        }
        Ok((g, h))
    }

    /// Splits the node's local samples on an owned feature. Returns the
    /// (left, right) global id sets and records the criterion.
    pub fn partition_on_split(
        &mut self,
        tree: u32,
        node: u64,
        feature: usize,
        edge_index: usize,
        gain: f64,
    ) -> Result<(Vec<String>, Vec<String>)> {
        let local = feature
            .checked_sub(self.feature_offset)
            .filter(|&k| k < self.features.len())
            .ok_or_else(|| Error::Protocol(format!("{} does not own feature {feature}", self.id)))?;
        let threshold = *self.edges[local]
            .edges
            .get(edge_index)
            .ok_or_else(|| Error::Protocol(format!("edge index {edge_index} out of range")))?;
        let members = self.node_members(node)?.to_vec();
        let bins = &self.binned[local];
        let (left, right): (Vec<u32>, Vec<u32>) =
            members.iter().partition(|&&i| bins[i as usize] < edge_index as u32);
        let left_ids = left.iter().map(|&i| self.sample_ids[i as usize].clone()).collect();
        let right_ids = right.iter().map(|&i| self.sample_ids[i as usize].clone()).collect();
        self.owned_splits
            .insert((tree, node), SplitDecision { feature, edge_index, threshold, gain });
        self.node_samples.insert(2 * node, left);
        self.node_samples.insert(2 * node + 1, right);
        Ok((left_ids, right_ids))
    }

    /// Applies a child-subspace notice from the other class.
    pub fn apply_subspace(&mut self, tree: u32, node: u64, left: &[String], right: &[String], from: PartyClass) {
        let to_local = |ids: &[String]| -> Vec<u32> {
            self.sample_ids
                .iter()
                .enumerate()
                .filter(|(_, id)| ids.binary_search(id).is_ok())
                .map(|(i, _)| i as u32)
                .collect()
        };
        self.node_samples.insert(2 * node, to_local(left));
        self.node_samples.insert(2 * node + 1, to_local(right));
        self.foreign_nodes.insert((tree, node), from);
    }

    /// Adds the finished tree's leaf weights into the running predictions.
    pub fn apply_leaf_updates(&mut self, tree: u32) {
        let leaves: Vec<(u64, f64)> = self
            .leaf_weights
            .range((tree, 0)..=(tree, u64::MAX))
            .map(|(&(_, node), &w)| (node, w))
            .collect();
        for (node, w) in leaves {
            if let Some(members) = self.node_samples.get(&node) {
                for &i in members {
                    self.predictions[i as usize] += w;
                }
            }
        }
    }

    pub fn set_test_data(&mut self, ids: Vec<String>, features: Vec<Vec<f64>>, labels: Option<Vec<f64>>) {
        self.test_predictions = vec![0.0; ids.len()];
        self.test_ids = ids;
        self.test_features = features;
        self.test_labels = labels;
    }

    fn test_index(&self, sample: &str) -> Result<usize> {
        self.test_ids
            .binary_search_by(|id| id.as_str().cmp(sample))
            .map_err(|_| Error::Protocol(format!("{} holds no test sample {sample}", self.id)))
    }

    /// Evaluates this party's split criterion for a test sample: returns the
    /// child index, or `None` if the node is not owned here.
    pub fn route_token(&self, tree: u32, node: u64, sample: &str) -> Result<Option<u64>> {
        let split = match self.owned_splits.get(&(tree, node)) {
            Some(s) => s,
            None => return Ok(None),
        };
        let i = self.test_index(sample)?;
        let local = split.feature - self.feature_offset;
        let value = self.test_features[local][i];
        Ok(Some(if value <= split.threshold { 2 * node } else { 2 * node + 1 }))
    }
}
