//! Synthetic topology generation and the six-level preference predicates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::viewers::largest_remainder;
use super::{
    ClusterId, EdgeCluster, EdgeServer, GroupId, PreferenceTables, ServerId, Topology, UserGroup,
};

/// Server bandwidth classes: 5, 10, 20, 40 and 80 Mbps.
pub const DEFAULT_BANDWIDTH_CLASSES_KBPS: [u64; 5] = [5_000, 10_000, 20_000, 40_000, 80_000];

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("at least one server bandwidth class is required")]
    NoBandwidthClasses,
    #[error("target demand must be positive")]
    NonPositiveTarget,
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("topology i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("topology json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    pub groups: usize,
    pub clusters: usize,
    pub bandwidth_classes: Vec<u64>,
    pub window_secs: u64,
    /// Kbps of aggregate demand the deployed server bandwidth must cover.
    pub target_demand: u64,
    pub states: usize,
    pub counties_per_state: usize,
    pub cities_per_county: usize,
    pub isps: usize,
    /// Truncates every preference list to this length when set.
    pub max_preferences: Option<usize>,
    pub seed: u64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            groups: 120,
            clusters: 60,
            bandwidth_classes: DEFAULT_BANDWIDTH_CLASSES_KBPS.to_vec(),
            window_secs: 300,
            target_demand: 1_000_000,
            states: 2,
            counties_per_state: 4,
            cities_per_county: 4,
            isps: 8,
            max_preferences: None,
            seed: 0,
        }
    }
}

/// Preference level (1 = best) of `cluster` for `group`, or `None` when no
/// level predicate holds.
///
/// | level | relation |
/// |---|---|
/// | 1 | same ISP, same city |
/// | 2 | same ISP, same county |
/// | 3 | same city, different ISP |
/// | 4 | same ISP, same state |
/// | 5 | same county, different ISP |
/// | 6 | same state, different ISP |
pub fn level_of(group: &UserGroup, cluster: &EdgeCluster) -> Option<u8> {
    let same_isp = group.isp == cluster.isp;
    let same_state = group.state == cluster.state;
    let same_county = same_state && group.county == cluster.county;
    let same_city = same_county && group.city == cluster.city;
    if same_isp && same_city {
        Some(1)
    } else if same_isp && same_county {
        Some(2)
    } else if same_city {
        Some(3)
    } else if same_isp && same_state {
        Some(4)
    } else if same_county {
        Some(5)
    } else if same_state {
        Some(6)
    } else {
        None
    }
}

struct Place {
    state: String,
    county: String,
    city: String,
}

/// Builds a deterministic synthetic topology.
///
/// User groups are distinct (city, ISP) pairs; clusters sit on a random subset
/// of those pairs. Servers are added with bandwidth classes taken round-robin,
/// every cluster first receiving one, and the remainder placed on clusters
/// drawn in proportion to co-located demand, until the deployed bandwidth
/// reaches `target_demand`.
pub fn synthesize_topology(params: &TopologyParams) -> Result<Topology, TopologyError> {
    if params.bandwidth_classes.is_empty() {
        return Err(TopologyError::NoBandwidthClasses);
    }
    if params.bandwidth_classes.contains(&0) {
        return Err(TopologyError::Invalid("bandwidth classes must be positive".into()));
    }
    if params.target_demand == 0 {
        return Err(TopologyError::NonPositiveTarget);
    }
    if params.groups == 0 || params.clusters == 0 {
        return Err(TopologyError::Invalid("group and cluster counts must be at least 1".into()));
    }
    if params.clusters > params.groups {
        return Err(TopologyError::Invalid(
            "clusters are placed on group locations, so clusters must not exceed groups".into(),
        ));
    }
    if params.window_secs == 0 {
        return Err(TopologyError::Invalid("window length must be positive".into()));
    }
    let places_n = params.states * params.counties_per_state * params.cities_per_county;
    if places_n == 0 || params.isps == 0 {
        return Err(TopologyError::Invalid("geography dimensions must be at least 1".into()));
    }
    if params.groups > places_n * params.isps {
        return Err(TopologyError::Invalid(format!(
            "{} groups requested but only {} (city, ISP) pairs exist",
            params.groups,
            places_n * params.isps
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut places = Vec::with_capacity(places_n);
    for s in 0..params.states {
        for c in 0..params.counties_per_state {
            for t in 0..params.cities_per_county {
                places.push(Place {
                    state: format!("st{s}"),
                    county: format!("st{s}-co{c}"),
                    city: format!("st{s}-co{c}-ci{t}"),
                });
            }
        }
    }

    // Larger ISPs cover more cities.
    let isp_weights: Vec<f64> = (0..params.isps).map(|k| 1.0 / (k as f64 + 1.0)).collect();
    let isp_total: f64 = isp_weights.iter().sum();
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(params.groups);
    let mut taken = BTreeSet::new();
    let mut attempts = 0usize;
    while pairs.len() < params.groups {
        attempts += 1;
        let place = rng.random_range(0..places_n);
        let isp = if attempts > 64 * params.groups {
            // dense request: fall back to uniform ISP choice
            rng.random_range(0..params.isps)
        } else {
            let mut x = rng.random::<f64>() * isp_total;
            let mut pick = params.isps - 1;
            for (k, w) in isp_weights.iter().enumerate() {
                if x < *w {
                    pick = k;
                    break;
                }
                x -= w;
            }
            pick
        };
        if taken.insert((place, isp)) {
            pairs.push((place, isp));
        }
    }

    let lognormal = LogNormal::new(0.0, 1.0).expect("valid lognormal");
    let raw: Vec<f64> = (0..params.groups).map(|_| lognormal.sample(&mut rng)).collect();
    let raw_total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / raw_total).collect();
    let demands = largest_remainder(params.target_demand, &weights);

    let groups: Vec<UserGroup> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(place, isp))| {
            let p = &places[place];
            UserGroup {
                id: GroupId(format!("g{:04}", i + 1)),
                isp: format!("isp{isp}"),
                city: p.city.clone(),
                county: p.county.clone(),
                state: p.state.clone(),
                population_weight: weights[i],
                demand: demands[i],
            }
        })
        .collect();

    let mut sites: Vec<usize> = (0..params.groups).collect();
    sites.shuffle(&mut rng);
    sites.truncate(params.clusters);
    sites.sort_unstable();

    let mut clusters: Vec<EdgeCluster> = sites
        .iter()
        .enumerate()
        .map(|(k, &gi)| {
            let g = &groups[gi];
            EdgeCluster {
                id: ClusterId(format!("c{:04}", k + 1)),
                isp: g.isp.clone(),
                city: g.city.clone(),
                county: g.county.clone(),
                state: g.state.clone(),
                servers: Vec::new(),
            }
        })
        .collect();

    // Demand pulled toward each cluster by groups at its exact location, plus
    // a floor so that every cluster stays eligible.
    let mean_demand = params.target_demand as f64 / params.groups as f64;
    let pull: Vec<f64> = sites.iter().map(|&gi| groups[gi].demand as f64 + mean_demand).collect();
    let pull_total: f64 = pull.iter().sum();

    let classes = &params.bandwidth_classes;
    let mut deployed = 0u64;
    let mut k = 0usize;
    while k < clusters.len() || deployed < params.target_demand {
        let bandwidth = classes[k % classes.len()];
        let target = if k < clusters.len() {
            k
        } else {
            let mut x = rng.random::<f64>() * pull_total;
            let mut pick = clusters.len() - 1;
            for (ci, w) in pull.iter().enumerate() {
                if x < *w {
                    pick = ci;
                    break;
                }
                x -= w;
            }
            pick
        };
        let b_hat = bandwidth * params.window_secs;
        let cache = rng.random_range(b_hat / 2 + 1..2 * b_hat);
        let cluster = &mut clusters[target];
        let id = ServerId(format!("{}-s{:03}", cluster.id, cluster.servers.len() + 1));
        cluster.servers.push(EdgeServer { id, bandwidth, cache });
        deployed += bandwidth;
        k += 1;
    }

    let preferences = build_preferences(&groups, &clusters, params.max_preferences, &mut rng);
    Ok(Topology { groups, clusters, preferences })
}

/// Orders every level-eligible pair by level, then a seeded shuffle on the
/// group side and demand (descending) then the same shuffle on the cluster side.
fn build_preferences(
    groups: &[UserGroup],
    clusters: &[EdgeCluster],
    cap: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> PreferenceTables {
    let mut by_group: BTreeMap<GroupId, Vec<ClusterId>> = BTreeMap::new();
    for g in groups {
        let mut cands: Vec<(u8, &EdgeCluster)> =
            clusters.iter().filter_map(|c| level_of(g, c).map(|l| (l, c))).collect();
        cands.shuffle(rng);
        cands.sort_by_key(|(l, _)| *l);
        let mut list: Vec<ClusterId> = cands.into_iter().map(|(_, c)| c.id.clone()).collect();
        if let Some(cap) = cap {
            list.truncate(cap);
        }
        by_group.insert(g.id.clone(), list);
    }

    let mut by_cluster: BTreeMap<ClusterId, Vec<GroupId>> = BTreeMap::new();
    for c in clusters {
        let mut cands: Vec<(u8, &UserGroup)> =
            groups.iter().filter_map(|g| level_of(g, c).map(|l| (l, g))).collect();
        cands.shuffle(rng);
        cands.sort_by(|(la, a), (lb, b)| la.cmp(lb).then(b.demand.cmp(&a.demand)));
        let mut list: Vec<GroupId> = cands.into_iter().map(|(_, g)| g.id.clone()).collect();
        if let Some(cap) = cap {
            list.truncate(cap);
        }
        by_cluster.insert(c.id.clone(), list);
    }

    PreferenceTables { groups: by_group, clusters: by_cluster }
}

impl Topology {
    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let topo: Topology = serde_json::from_str(text)?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }
}
