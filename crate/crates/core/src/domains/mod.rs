//! Benchmark domains: model builders, dual bounds, greedy heuristics,
//! feature extractors and instance generators.

pub mod packing;
pub mod routing;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelError, State, TransitionId};
pub use packing::{KnapsackInstance, PortfolioInstance};
pub use routing::{TspInstance, TsptwInstance, WindowParams};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("unsupported domain `{0}`")]
    UnsupportedDomain(String),
    #[error("state has no successor")]
    NoSuccessor,
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed instance file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Tsp,
    Tsptw,
    Knapsack,
    Portfolio,
}

impl DomainTag {
    pub const ALL: [DomainTag; 4] = [DomainTag::Tsp, DomainTag::Tsptw, DomainTag::Knapsack, DomainTag::Portfolio];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Tsp => "tsp",
            DomainTag::Tsptw => "tsptw",
            DomainTag::Knapsack => "knapsack",
            DomainTag::Portfolio => "portfolio",
        }
    }

    /// Routing domains pick a customer per step; packing domains decide
    /// take/skip for the current item.
    pub fn is_routing(self) -> bool {
        matches!(self, DomainTag::Tsp | DomainTag::Tsptw)
    }

    /// Default reward scaling factor.
    pub fn default_beta(self) -> f64 {
        match self {
            DomainTag::Tsp | DomainTag::Tsptw => 1e-3,
            DomainTag::Knapsack | DomainTag::Portfolio => 1e-4,
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainTag {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(DomainTag::Tsp),
            "tsptw" => Ok(DomainTag::Tsptw),
            "knapsack" | "kp" => Ok(DomainTag::Knapsack),
            "portfolio" | "pf" => Ok(DomainTag::Portfolio),
            other => Err(DomainError::UnsupportedDomain(other.to_owned())),
        }
    }
}

/// An instance of one of the four domains. Serialized as a JSON object with
/// a `domain` field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "lowercase")]
pub enum Instance {
    Tsp(TspInstance),
    Tsptw(TsptwInstance),
    Knapsack(KnapsackInstance),
    Portfolio(PortfolioInstance),
}

/// Generator parameters shared by all domains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub windows: WindowParams,
    pub lambda: [f64; 4],
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            windows: WindowParams::default(),
            lambda: packing::DEFAULT_LAMBDA,
        }
    }
}

impl Instance {
    pub fn tag(&self) -> DomainTag {
        match self {
            Instance::Tsp(_) => DomainTag::Tsp,
            Instance::Tsptw(_) => DomainTag::Tsptw,
            Instance::Knapsack(_) => DomainTag::Knapsack,
            Instance::Portfolio(_) => DomainTag::Portfolio,
        }
    }

    /// Number of elements: customers including the depot, or items.
    pub fn n(&self) -> usize {
        match self {
            Instance::Tsp(i) => i.n(),
            Instance::Tsptw(i) => i.n(),
            Instance::Knapsack(i) => i.n(),
            Instance::Portfolio(i) => i.n(),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        match self {
            Instance::Tsp(i) => i.validate(),
            Instance::Tsptw(i) => i.validate(),
            Instance::Knapsack(i) => i.validate(),
            Instance::Portfolio(i) => i.validate(),
        }
    }

    pub fn build_model(&self) -> Result<Model, DomainError> {
        match self {
            Instance::Tsp(i) => routing::build_tsp_model(i),
            Instance::Tsptw(i) => routing::build_tsptw_model(i),
            Instance::Knapsack(i) => packing::build_knapsack_model(i),
            Instance::Portfolio(i) => packing::build_portfolio_model(i),
        }
    }

    pub fn dual_bound(&self, state: &State) -> f64 {
        match self {
            Instance::Tsp(i) => routing::tsp_dual_bound(i, state),
            Instance::Tsptw(i) => routing::tsptw_dual_bound(i, state),
            Instance::Knapsack(i) => packing::knapsack_dual_bound(i, state),
            Instance::Portfolio(i) => packing::portfolio_dual_bound(i, state),
        }
    }

    /// The greedy heuristic's choice at `state`. Routing ids are `visit(j)`,
    /// packing ids are `take` or `skip`. The chosen transition may be
    /// inapplicable (TSPTW ignores deadlines when choosing).
    pub fn greedy_successor(&self, state: &State) -> Result<TransitionId, DomainError> {
        let visit = |j: usize| TransitionId {
            family: 0,
            param: Some(j),
        };
        let packing = |take: bool| TransitionId {
            family: if take { 0 } else { 1 },
            param: None,
        };
        match self {
            Instance::Tsp(i) => routing::tsp_greedy(i, state).map(visit),
            Instance::Tsptw(i) => routing::tsptw_greedy(i, state).map(visit),
            Instance::Knapsack(i) => packing::knapsack_greedy_take(i, state).map(packing),
            Instance::Portfolio(i) => packing::portfolio_greedy_take(i, state).map(packing),
        }
        .ok_or(DomainError::NoSuccessor)
    }

    /// Per-element feature rows for the neural guidance.
    pub fn features(&self, state: &State) -> Vec<Vec<f64>> {
        match self {
            Instance::Tsp(i) => routing::tsp_features(i, state),
            Instance::Tsptw(i) => routing::tsptw_features(i, state),
            Instance::Knapsack(i) => packing::knapsack_features(i, state),
            Instance::Portfolio(i) => packing::portfolio_features(i, state),
        }
    }

    /// Width of a feature row.
    pub fn feature_width(tag: DomainTag) -> usize {
        match tag {
            DomainTag::Tsp => 6,
            DomainTag::Tsptw => 9,
            DomainTag::Knapsack => 8,
            DomainTag::Portfolio => 10,
        }
    }

    /// Deterministic instance for `(tag, n, seed, params)`. TSP and TSPTW with
    /// the same `n` and seed share coordinates and travel times.
    pub fn generate(tag: DomainTag, n: usize, seed: u64, params: &GeneratorParams) -> Result<Instance, DomainError> {
        if n < 2 {
            return Err(DomainError::InvalidInstance("n must be at least 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match tag {
            DomainTag::Tsp => Instance::Tsp(routing::random_tsptw(n, params.windows, &mut rng).instance.tsp),
            DomainTag::Tsptw => Instance::Tsptw(routing::random_tsptw(n, params.windows, &mut rng).instance),
            DomainTag::Knapsack => Instance::Knapsack(packing::random_knapsack(n, &mut rng)),
            DomainTag::Portfolio => Instance::Portfolio(packing::random_portfolio(n, params.lambda, &mut rng)),
        })
    }

    /// Like [`Instance::generate`] for TSPTW, also returning the reference tour
    /// around which the windows were placed.
    pub fn generate_tsptw_with_tour(n: usize, seed: u64, windows: WindowParams) -> (TsptwInstance, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = routing::random_tsptw(n, windows, &mut rng);
        (g.instance, g.reference_tour)
    }

    /// Named test fixtures: `fix-tsp3`, `fix-tsptw3`, `fix-kp2`, `fix-pf2`.
    pub fn fixture(name: &str) -> Result<Instance, DomainError> {
        match name.to_ascii_lowercase().as_str() {
            "fix-tsp3" => Ok(Instance::Tsp(routing::fix_tsp3())),
            "fix-tsptw3" => Ok(Instance::Tsptw(routing::fix_tsptw3())),
            "fix-kp2" => Ok(Instance::Knapsack(packing::fix_kp2())),
            "fix-pf2" => Ok(Instance::Portfolio(packing::fix_pf2())),
            other => Err(DomainError::UnknownFixture(other.to_owned())),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instances always serialize")
    }

    pub fn from_json(text: &str) -> Result<Instance, DomainError> {
        let inst: Instance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn save(&self, path: &Path) -> Result<(), DomainError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Instance, DomainError> {
        Instance::from_json(&std::fs::read_to_string(path)?)
    }
}
